//! Beam search under a trained policy, candidate ranking and the
//! recommendations file.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{dot, EmbeddingTable};
use crate::env::{initial_state, EnvState, Path, PathEnv};
use crate::error::{Error, Result};
use crate::kg::{EntityRef, EntityType, EnrollmentSplit, KnowledgeGraph, Relation};
use crate::policy::{action_logit, softmax, write_state_features, PolicyNet};

pub const DEFAULT_TOP_N: usize = 10;

/// Widths used when none are configured: 25 at the first level, 5 after.
///
/// The last level keeps several actions because an agent trained with a
/// longer budget often self-loops before its final move.
pub fn default_beam_widths(max_hops: usize) -> Vec<usize> {
    (0..max_hops).map(|i| if i == 0 { 25 } else { 5 }).collect()
}

/// Expands every surviving prefix by its `widths[k]` most probable actions
/// at level `k`. Returns every complete path with its log-probability, in
/// expansion order.
pub fn beam_search(
    learner: EntityRef,
    net: &PolicyNet,
    env: &PathEnv<'_>,
    max_hops: usize,
    widths: &[usize],
) -> Result<Vec<(Path, f64)>> {
    if widths.len() != max_hops {
        return Err(Error::Config(format!(
            "{} beam widths given for {max_hops} hops",
            widths.len()
        )));
    }
    if widths.contains(&0) {
        return Err(Error::Config("beam widths must be at least 1".into()));
    }
    if net.dim() != env.embeddings().dim() {
        return Err(Error::Mismatch(format!(
            "policy expects dimension {}, embeddings have {}",
            net.dim(),
            env.embeddings().dim()
        )));
    }
    let emb = env.embeddings();
    let mut beams: Vec<(EnvState, f64)> = vec![(initial_state(env.kg(), learner, max_hops)?, 0.0)];
    let mut scratch = vec![0.0; emb.dim()];
    for &width in widths {
        let mut x = Array2::zeros((beams.len(), net.input_len()));
        for (mut row, (state, _)) in x.axis_iter_mut(Axis(0)).zip(&beams) {
            write_state_features(state, emb, net.history(), row.as_slice_mut().unwrap());
        }
        let act = net.forward_batch(x.view());
        let mut next = Vec::with_capacity(beams.len() * width);
        for (i, (state, logp)) in beams.iter().enumerate() {
            let actions = env.available_actions(state);
            let query = act.query.row(i);
            let query = query.as_slice().unwrap();
            let logits: Vec<f64> = actions
                .iter()
                .map(|&a| action_logit(query, emb, a, &mut scratch))
                .collect();
            let (_, log_probs) = softmax(&logits);
            let mut order: Vec<usize> = (0..actions.len()).collect();
            order.sort_by(|&a, &b| log_probs[b].total_cmp(&log_probs[a]));
            for &j in order.iter().take(width) {
                next.push((env.step(state, actions[j])?, logp + log_probs[j]));
            }
        }
        beams = next;
    }
    Ok(beams.into_iter().map(|(s, lp)| (s.path, lp)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recommendation {
    pub course: EntityRef,
    pub score: f64,
    pub path: Path,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecommendationList {
    pub learner: EntityRef,
    pub items: Vec<Recommendation>,
    pub n: usize,
}

impl RecommendationList {
    pub fn is_invalid(&self) -> bool {
        self.items.len() < self.n
    }

    pub fn courses(&self) -> Vec<EntityRef> {
        self.items.iter().map(|i| i.course).collect()
    }
}

/// Keeps course-terminal paths to courses outside `train`, one per course
/// at its best log-probability, ordered by score then course index. With
/// `tiebreak`, equal scores fall back to the learner-course dot product
/// before the index.
pub fn rank_candidates(
    paths: &[(Path, f64)],
    learner: EntityRef,
    train: &[u32],
    n: usize,
    tiebreak: Option<&EmbeddingTable>,
) -> RecommendationList {
    let mut best: BTreeMap<u32, (f64, &Path)> = BTreeMap::new();
    for (path, logp) in paths {
        let end = path.end();
        if end.kind != EntityType::Course || train.binary_search(&end.index).is_ok() {
            continue;
        }
        match best.get(&end.index) {
            Some(&(s, _)) if s >= *logp => {}
            _ => {
                best.insert(end.index, (*logp, path));
            }
        }
    }
    let key = |c: u32| tiebreak.map_or(0.0, |emb| dot(emb.entity(learner), emb.entity(EntityRef::course(c))));
    let mut ranked: Vec<(u32, f64, &Path)> = best.into_iter().map(|(c, (s, p))| (c, s, p)).collect();
    ranked.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| key(b.0).total_cmp(&key(a.0)))
            .then(a.0.cmp(&b.0))
    });
    ranked.truncate(n);
    RecommendationList {
        learner,
        items: ranked
            .into_iter()
            .map(|(c, score, path)| Recommendation {
                course: EntityRef::course(c),
                score,
                path: path.clone(),
            })
            .collect(),
        n,
    }
}

#[derive(Clone, Debug)]
pub struct InferenceConfig {
    pub max_hops: usize,
    pub widths: Vec<usize>,
    pub top_n: usize,
    pub dot_tiebreak: bool,
}

impl InferenceConfig {
    pub fn new(max_hops: usize) -> Self {
        InferenceConfig {
            max_hops,
            widths: default_beam_widths(max_hops),
            top_n: DEFAULT_TOP_N,
            dot_tiebreak: false,
        }
    }
}

/// Runs inference for every learner in parallel; output follows input order.
/// Returns the lists and the fraction of learners with fewer than `top_n` items.
pub fn recommend_all(
    learners: &[EntityRef],
    net: &PolicyNet,
    env: &PathEnv<'_>,
    split: &EnrollmentSplit,
    cfg: &InferenceConfig,
) -> Result<(Vec<RecommendationList>, f64)> {
    let tiebreak = cfg.dot_tiebreak.then(|| env.embeddings());
    let lists = learners
        .par_iter()
        .map(|&l| {
            let paths = beam_search(l, net, env, cfg.max_hops, &cfg.widths)?;
            Ok(rank_candidates(&paths, l, split.train_of(l), cfg.top_n, tiebreak))
        })
        .collect::<Result<Vec<_>>>()?;
    let invalid = invalid_fraction(&lists);
    Ok((lists, invalid))
}

pub fn invalid_fraction(lists: &[RecommendationList]) -> f64 {
    if lists.is_empty() {
        return 0.0;
    }
    lists.iter().filter(|l| l.is_invalid()).count() as f64 / lists.len() as f64
}

#[derive(Serialize, Deserialize)]
struct HopRecord {
    relation: String,
    entity: String,
}

#[derive(Serialize, Deserialize)]
struct ItemRecord {
    course: String,
    score: f64,
    path: Vec<HopRecord>,
}

#[derive(Serialize, Deserialize)]
struct ListRecord {
    learner: String,
    items: Vec<ItemRecord>,
}

fn name_of(kg: &KnowledgeGraph, e: EntityRef) -> Result<String> {
    kg.id_of(e)
        .map(str::to_owned)
        .ok_or_else(|| Error::Lookup(format!("{e:?} not in graph")))
}

/// One JSON object per learner per line.
pub fn write_recommendations<W: Write>(w: &mut W, kg: &KnowledgeGraph, lists: &[RecommendationList]) -> Result<()> {
    for list in lists {
        let mut items = Vec::with_capacity(list.items.len());
        for item in &list.items {
            let path = item
                .path
                .hops
                .iter()
                .map(|&(r, e)| {
                    Ok(HopRecord {
                        relation: r.name().to_owned(),
                        entity: name_of(kg, e)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            items.push(ItemRecord {
                course: name_of(kg, item.course)?,
                score: item.score,
                path,
            });
        }
        let record = ListRecord {
            learner: name_of(kg, list.learner)?,
            items,
        };
        serde_json::to_writer(&mut *w, &record)?;
        w.write_all(b"\n").map_err(|e| Error::io("<recommendations>", e))?;
    }
    Ok(())
}

fn resolve(kg: &KnowledgeGraph, kind: EntityType, id: &str, line: usize) -> Result<EntityRef> {
    kg.entity(kind, id)
        .ok_or_else(|| Error::Format(format!("line {line}: unknown {kind} {id:?}")))
}

/// Reads lists written by [`write_recommendations`]; `n` is the requested length.
pub fn read_recommendations<R: BufRead>(r: R, kg: &KnowledgeGraph, n: usize) -> Result<Vec<RecommendationList>> {
    let mut lists = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<recommendations>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let record: ListRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("line {lineno}: {e}")))?;
        let learner = resolve(kg, EntityType::Learner, &record.learner, lineno)?;
        let mut items = Vec::with_capacity(record.items.len());
        for item in record.items {
            let course = resolve(kg, EntityType::Course, &item.course, lineno)?;
            let mut path = Path::new(learner);
            for hop in item.path {
                let rel = Relation::from_name(&hop.relation)
                    .ok_or_else(|| Error::Format(format!("line {lineno}: unknown relation {:?}", hop.relation)))?;
                let kind = rel.tail_type().unwrap_or(path.end().kind);
                path.hops.push((rel, resolve(kg, kind, &hop.entity, lineno)?));
            }
            if path.end() != course {
                return Err(Error::Format(format!("line {lineno}: path does not end at {}", item.course)));
            }
            items.push(Recommendation {
                course,
                score: item.score,
                path,
            });
        }
        lists.push(RecommendationList { learner, items, n });
    }
    Ok(lists)
}
