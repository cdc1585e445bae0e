//! Cluster-structured synthetic catalogues with a known learnable signal.

use std::fs;
use std::path::Path as FsPath;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kg::{KgBuilder, KnowledgeGraph, RelationKind};

/// Learners and courses are assigned to clusters round-robin by index;
/// teachers, categories and concepts likewise. A learner samples its
/// courses without replacement with weight `in_cluster_enroll_prob` for
/// courses of its own cluster and `cross_cluster_enroll_prob` otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_learners: usize,
    pub n_courses: usize,
    pub n_teachers: usize,
    pub n_categories: usize,
    pub n_concepts: usize,
    pub n_clusters: usize,
    pub in_cluster_enroll_prob: f64,
    pub cross_cluster_enroll_prob: f64,
    pub enrollments_per_learner: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_learners: 300,
            n_courses: 60,
            n_teachers: 10,
            n_categories: 5,
            n_concepts: 20,
            n_clusters: 5,
            in_cluster_enroll_prob: 0.8,
            cross_cluster_enroll_prob: 0.05,
            enrollments_per_learner: 12,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.n_clusters == 0 {
            return err("synth n_clusters must be positive".into());
        }
        for (name, n) in [
            ("n_learners", self.n_learners),
            ("n_courses", self.n_courses),
            ("n_teachers", self.n_teachers),
            ("n_categories", self.n_categories),
            ("n_concepts", self.n_concepts),
        ] {
            if n < self.n_clusters {
                return err(format!("synth {name} = {n} is smaller than n_clusters = {}", self.n_clusters));
            }
        }
        let (p_in, p_cross) = (self.in_cluster_enroll_prob, self.cross_cluster_enroll_prob);
        if !(0.0..=1.0).contains(&p_in) || !(0.0..=1.0).contains(&p_cross) {
            return err("synth enrollment probabilities must lie in [0, 1]".into());
        }
        if p_in <= p_cross {
            return err("synth in_cluster_enroll_prob must exceed cross_cluster_enroll_prob".into());
        }
        if self.enrollments_per_learner < 10 {
            return err("synth enrollments_per_learner must be at least 10".into());
        }
        let reachable = if p_cross > 0.0 {
            self.n_courses
        } else {
            self.n_courses / self.n_clusters
        };
        if self.enrollments_per_learner > reachable {
            return err(format!(
                "synth draws {} enrollments per learner but only {reachable} courses can be drawn",
                self.enrollments_per_learner
            ));
        }
        Ok(())
    }

    pub fn learner_cluster(&self, learner: usize) -> usize {
        learner % self.n_clusters
    }

    pub fn course_cluster(&self, course: usize) -> usize {
        course % self.n_clusters
    }
}

fn id(prefix: &str, i: usize, n: usize) -> String {
    let width = n.saturating_sub(1).to_string().len();
    format!("{prefix}{i:0width$}")
}

/// Generated triples per relation, in generation order.
pub type SynthTriples = Vec<(RelationKind, Vec<(String, String)>)>;

pub fn generate_triples(cfg: &SynthConfig) -> Result<SynthTriples> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.n_clusters;
    let members = |n: usize, c: usize| (0..n).filter(move |i| i % k == c).collect::<Vec<_>>();

    let mut teaches = Vec::new();
    let mut has_concept = Vec::new();
    let mut belongs_to = Vec::new();
    for course in 0..cfg.n_courses {
        let cluster = cfg.course_cluster(course);
        let cid = id("c", course, cfg.n_courses);
        let teacher = *members(cfg.n_teachers, cluster).choose(&mut rng).unwrap();
        teaches.push((id("t", teacher, cfg.n_teachers), cid.clone()));
        let category = *members(cfg.n_categories, cluster).choose(&mut rng).unwrap();
        belongs_to.push((cid.clone(), id("cat", category, cfg.n_categories)));
        let pool = members(cfg.n_concepts, cluster);
        let n_concepts = rng.random_range(1..=3.min(pool.len()));
        let mut picked: Vec<usize> = pool.choose_multiple(&mut rng, n_concepts).copied().collect();
        picked.sort_unstable();
        for concept in picked {
            has_concept.push((cid.clone(), id("k", concept, cfg.n_concepts)));
        }
    }

    let courses: Vec<usize> = (0..cfg.n_courses).collect();
    let mut enrolled = Vec::new();
    for learner in 0..cfg.n_learners {
        let cluster = cfg.learner_cluster(learner);
        let weight = |c: &usize| {
            if cfg.course_cluster(*c) == cluster {
                cfg.in_cluster_enroll_prob
            } else {
                cfg.cross_cluster_enroll_prob
            }
        };
        let mut picked: Vec<usize> = courses
            .choose_multiple_weighted(&mut rng, cfg.enrollments_per_learner, weight)
            .map_err(|e| Error::Config(format!("synth enrollment draw: {e}")))?
            .copied()
            .collect();
        picked.sort_unstable();
        let uid = id("u", learner, cfg.n_learners);
        for c in picked {
            enrolled.push((uid.clone(), id("c", c, cfg.n_courses)));
        }
    }
    Ok(vec![
        (RelationKind::Enrolled, enrolled),
        (RelationKind::Teaches, teaches),
        (RelationKind::HasConcept, has_concept),
        (RelationKind::BelongsTo, belongs_to),
    ])
}

pub fn generate(cfg: &SynthConfig) -> Result<KnowledgeGraph> {
    Ok(build(&generate_triples(cfg)?))
}

fn build(triples: &SynthTriples) -> KnowledgeGraph {
    let mut b = KgBuilder::new();
    for (kind, pairs) in triples {
        for (h, t) in pairs {
            b.add(*kind, h, t);
        }
    }
    b.build()
}

/// Writes one TSV per relation into `dir` and returns the matching graph.
pub fn write_synth(cfg: &SynthConfig, dir: &FsPath) -> Result<KnowledgeGraph> {
    let triples = generate_triples(cfg)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (kind, pairs) in &triples {
        let mut text = String::new();
        for (h, t) in pairs {
            text.push_str(h);
            text.push('\t');
            text.push_str(t);
            text.push('\n');
        }
        let path = dir.join(kind.file_name());
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(build(&triples))
}
