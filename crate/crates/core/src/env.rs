//! The walk environment: states anchored at a learner, pruned outgoing edges
//! plus a self loop as actions, and the two terminal reward functions.

use std::collections::HashSet;
use std::sync::OnceLock;

use crate::embed::{dot, EmbeddingTable};
use crate::error::{Error, Result};
use crate::kg::{Edge, EntityRef, EntityType, EnrollmentSplit, KnowledgeGraph, Relation};

pub const DEFAULT_MAX_ACTIONS: usize = 250;

/// A walk from a learner: hops of (relation, reached entity).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Path {
    pub start: EntityRef,
    pub hops: Vec<Edge>,
}

impl Path {
    pub fn new(start: EntityRef) -> Self {
        Path {
            start,
            hops: Vec::new(),
        }
    }

    pub fn end(&self) -> EntityRef {
        self.hops.last().map_or(self.start, |&(_, e)| e)
    }

    /// Hops that actually move, i.e. everything but self loops.
    pub fn n_hops_effective(&self) -> usize {
        self.hops.iter().filter(|(r, _)| !r.is_self_loop()).count()
    }

    pub fn stripped(&self) -> Path {
        Path {
            start: self.start,
            hops: self
                .hops
                .iter()
                .copied()
                .filter(|(r, _)| !r.is_self_loop())
                .collect(),
        }
    }

    pub fn relations(&self) -> impl Iterator<Item = Relation> + '_ {
        self.hops.iter().map(|&(r, _)| r)
    }

    /// Checks every hop against the graph; self loops must stay in place.
    pub fn validate(&self, kg: &KnowledgeGraph) -> Result<()> {
        let mut at = self.start;
        if !kg.contains_entity(at) {
            return Err(Error::Lookup(format!("path start {at:?} not in graph")));
        }
        for (i, &(r, next)) in self.hops.iter().enumerate() {
            let ok = match r {
                Relation::SelfLoop => next == at,
                _ => kg.contains(at, r, next),
            };
            if !ok {
                return Err(Error::Contract(format!(
                    "hop {} ({} to {:?}) is not an edge from {:?}",
                    i + 1,
                    r.name(),
                    next,
                    at
                )));
            }
            at = next;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub path: Path,
    pub hops_remaining: usize,
}

impl EnvState {
    pub fn start(&self) -> EntityRef {
        self.path.start
    }

    pub fn current(&self) -> EntityRef {
        self.path.end()
    }

    pub fn hops_taken(&self) -> usize {
        self.path.hops.len()
    }

    /// The last `len` hops, oldest first.
    pub fn history(&self, len: usize) -> &[Edge] {
        let hops = &self.path.hops;
        &hops[hops.len().saturating_sub(len)..]
    }
}

pub fn initial_state(kg: &KnowledgeGraph, learner: EntityRef, hop_budget: usize) -> Result<EnvState> {
    if learner.kind != EntityType::Learner {
        return Err(Error::Contract(format!(
            "walks start at a learner, not a {}",
            learner.kind
        )));
    }
    if !kg.contains_entity(learner) {
        return Err(Error::Lookup(format!("unknown learner index {}", learner.index)));
    }
    if hop_budget == 0 {
        return Err(Error::Contract("hop budget must be at least 1".into()));
    }
    Ok(EnvState {
        path: Path::new(learner),
        hops_remaining: hop_budget,
    })
}

/// Action generation over a shared graph and embedding table. Pruned edge
/// lists are computed once per entity and cached.
pub struct PathEnv<'a> {
    kg: &'a KnowledgeGraph,
    emb: &'a EmbeddingTable,
    max_actions: usize,
    offsets: [usize; 6],
    pruned: Vec<OnceLock<Vec<Edge>>>,
}

impl<'a> PathEnv<'a> {
    pub fn new(kg: &'a KnowledgeGraph, emb: &'a EmbeddingTable, max_actions: usize) -> Result<Self> {
        if !emb.matches(kg) {
            return Err(Error::Mismatch(
                "embedding table vocabulary sizes differ from the graph".into(),
            ));
        }
        Ok(PathEnv {
            kg,
            emb,
            max_actions,
            offsets: kg.type_offsets(),
            pruned: (0..kg.total_entities()).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn kg(&self) -> &'a KnowledgeGraph {
        self.kg
    }

    pub fn embeddings(&self) -> &'a EmbeddingTable {
        self.emb
    }

    pub fn max_actions(&self) -> usize {
        self.max_actions
    }

    fn pruned_edges(&self, e: EntityRef) -> &[Edge] {
        let row = self.offsets[e.kind.slot()] + e.index as usize;
        self.pruned[row].get_or_init(|| {
            let edges = self.kg.neighbors(e).unwrap_or(&[]);
            let mut scored: Vec<(f64, Edge)> = edges
                .iter()
                .map(|&(r, t)| {
                    let s = self.emb.score_triple(e, r, t).unwrap_or(f64::NEG_INFINITY);
                    (s, (r, t))
                })
                .collect();
            // stable sort keeps canonical adjacency order among equal scores
            scored.sort_by(|a, b| b.0.total_cmp(&a.0));
            scored
                .into_iter()
                .take(self.max_actions)
                .map(|(_, edge)| edge)
                .collect()
        })
    }

    /// Self loop first, then outgoing edges by descending triple score,
    /// truncated to `max_actions` edges.
    pub fn available_actions(&self, state: &EnvState) -> Vec<Edge> {
        let current = state.current();
        let pruned = self.pruned_edges(current);
        let mut actions = Vec::with_capacity(pruned.len() + 1);
        actions.push((Relation::SelfLoop, current));
        actions.extend_from_slice(pruned);
        actions
    }

    pub fn step(&self, state: &EnvState, action: Edge) -> Result<EnvState> {
        if state.hops_remaining == 0 {
            return Err(Error::Contract("no hops remaining".into()));
        }
        let current = state.current();
        let legal = match action.0 {
            Relation::SelfLoop => action.1 == current,
            _ => self.pruned_edges(current).contains(&action),
        };
        if !legal {
            return Err(Error::Contract(format!(
                "{} to {:?} is not an available action at {:?}",
                action.0.name(),
                action.1,
                current
            )));
        }
        let mut next = state.clone();
        next.path.hops.push(action);
        next.hops_remaining -= 1;
        Ok(next)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardMode {
    Binary,
    Pgpr,
}

impl std::str::FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(RewardMode::Binary),
            "pgpr" => Ok(RewardMode::Pgpr),
            other => Err(Error::Config(format!("unknown reward mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for RewardMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RewardMode::Binary => "binary",
            RewardMode::Pgpr => "pgpr",
        })
    }
}

/// Relation sequences accepted by the pattern-gated reward.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PatternWhitelist {
    patterns: HashSet<Vec<Relation>>,
}

impl PatternWhitelist {
    /// One pattern per line, relation names separated by `|`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut patterns = HashSet::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let seq = line
                .split('|')
                .map(|name| match Relation::from_name(name.trim()) {
                    Some(Relation::SelfLoop) | None => {
                        Err(Error::Config(format!("bad relation {name:?} in pattern {line:?}")))
                    }
                    Some(r) => Ok(r),
                })
                .collect::<Result<Vec<_>>>()?;
            patterns.insert(seq);
        }
        Ok(PatternWhitelist { patterns })
    }

    pub fn from_patterns(patterns: impl IntoIterator<Item = Vec<Relation>>) -> Self {
        PatternWhitelist {
            patterns: patterns.into_iter().collect(),
        }
    }

    pub fn contains(&self, seq: &[Relation]) -> bool {
        self.patterns.contains(seq)
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

/// Terminal reward configuration. Enrollment checks use the training split only.
pub struct RewardSpec<'a> {
    mode: RewardMode,
    split: &'a EnrollmentSplit,
    whitelist: Option<PatternWhitelist>,
    embeddings: Option<&'a EmbeddingTable>,
    max_dot: Vec<OnceLock<f64>>,
}

impl<'a> RewardSpec<'a> {
    pub fn binary(split: &'a EnrollmentSplit) -> Self {
        RewardSpec {
            mode: RewardMode::Binary,
            split,
            whitelist: None,
            embeddings: None,
            max_dot: Vec::new(),
        }
    }

    pub fn pgpr(
        split: &'a EnrollmentSplit,
        whitelist: Option<PatternWhitelist>,
        embeddings: Option<&'a EmbeddingTable>,
    ) -> Self {
        RewardSpec {
            mode: RewardMode::Pgpr,
            split,
            whitelist,
            embeddings,
            max_dot: (0..split.num_learners()).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn mode(&self) -> RewardMode {
        self.mode
    }

    pub fn split(&self) -> &'a EnrollmentSplit {
        self.split
    }

    /// Checks that the pattern-gated mode has what it needs.
    pub fn validate(&self) -> Result<()> {
        if self.mode == RewardMode::Pgpr && (self.whitelist.is_none() || self.embeddings.is_none()) {
            return Err(Error::Config(
                "pgpr reward needs both a pattern whitelist and embeddings".into(),
            ));
        }
        Ok(())
    }

    pub fn reward(&self, path: &Path) -> Result<f64> {
        self.validate()?;
        let end = path.end();
        match self.mode {
            RewardMode::Binary => {
                let hit = end.kind == EntityType::Course
                    && (path.start.index as usize) < self.split.num_learners()
                    && self.split.is_train(path.start, end.index)
                    && path.n_hops_effective() > 1;
                Ok(if hit { 1.0 } else { 0.0 })
            }
            RewardMode::Pgpr => {
                let (whitelist, emb) = (self.whitelist.as_ref().unwrap(), self.embeddings.unwrap());
                let seq: Vec<Relation> = path.stripped().relations().collect();
                if end.kind != EntityType::Course || !whitelist.contains(&seq) {
                    return Ok(0.0);
                }
                let learner = emb.entity(path.start);
                let sim = dot(learner, emb.entity(end)).max(0.0);
                let best = *self.max_dot[path.start.index as usize].get_or_init(|| {
                    (0..emb.sizes()[EntityType::Course as usize] as u32)
                        .map(|c| dot(learner, emb.entity(EntityRef::course(c))))
                        .fold(0.0, f64::max)
                });
                Ok(if best > 0.0 { sim / best } else { 0.0 })
            }
        }
    }
}
