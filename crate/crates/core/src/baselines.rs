//! Non-path comparison models: global popularity and a pairwise-ranking
//! latent-factor model.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embed::dot;
use crate::error::{Error, Result};
use crate::kg::{EntityRef, EnrollmentSplit};

/// Courses by descending train enrollment count, index ascending on ties.
pub fn pop_ranking(split: &EnrollmentSplit, num_courses: usize) -> Result<Vec<u32>> {
    let mut counts = vec![0usize; num_courses];
    for courses in &split.train {
        for &c in courses {
            *counts
                .get_mut(c as usize)
                .ok_or_else(|| Error::Lookup(format!("course index {c} out of range")))? += 1;
        }
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::Precondition("train split is empty".into()));
    }
    let mut order: Vec<u32> = (0..num_courses as u32).collect();
    order.sort_by(|&a, &b| counts[b as usize].cmp(&counts[a as usize]).then(a.cmp(&b)));
    Ok(order)
}

/// The global ranking with the learner's train courses removed, cut to `n`.
pub fn pop_recommend(ranking: &[u32], train: &[u32], n: usize) -> Vec<u32> {
    ranking
        .iter()
        .copied()
        .filter(|c| train.binary_search(c).is_err())
        .take(n)
        .collect()
}

pub fn pop_baseline(split: &EnrollmentSplit, num_courses: usize, n: usize) -> Result<Vec<(EntityRef, Vec<u32>)>> {
    let ranking = pop_ranking(split, num_courses)?;
    Ok((0..split.num_learners() as u32)
        .map(|l| {
            let learner = EntityRef::learner(l);
            (learner, pop_recommend(&ranking, split.train_of(learner), n))
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MfConfig {
    pub factors: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    pub seed: u64,
}

impl Default for MfConfig {
    fn default() -> Self {
        MfConfig {
            factors: 16,
            epochs: 50,
            learning_rate: 0.05,
            regularization: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MfModel {
    pub factors: usize,
    pub learners: Vec<f64>,
    pub courses: Vec<f64>,
}

impl MfModel {
    pub fn score(&self, learner: u32, course: u32) -> f64 {
        let k = self.factors;
        let l = learner as usize * k;
        let c = course as usize * k;
        dot(&self.learners[l..l + k], &self.courses[c..c + k])
    }

    /// Top `n` courses outside `train` by score, index ascending on ties.
    pub fn recommend(&self, learner: u32, train: &[u32], n: usize) -> Vec<u32> {
        let num_courses = self.courses.len() / self.factors;
        let mut scored: Vec<(f64, u32)> = (0..num_courses as u32)
            .filter(|c| train.binary_search(c).is_err())
            .map(|c| (self.score(learner, c), c))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.into_iter().take(n).map(|(_, c)| c).collect()
    }
}

/// Stochastic gradient ascent on the pairwise log-sigmoid objective over
/// (learner, train course, uniformly sampled non-train course) triples.
pub fn train_mf(split: &EnrollmentSplit, num_courses: usize, cfg: &MfConfig) -> Result<MfModel> {
    if cfg.factors == 0 {
        return Err(Error::Config("mf factors must be positive".into()));
    }
    let k = cfg.factors;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bound = 0.1;
    let mut init = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
    let mut model = MfModel {
        factors: k,
        learners: init(split.num_learners() * k),
        courses: init(num_courses * k),
    };
    let mut pairs: Vec<(u32, u32)> = split
        .train
        .iter()
        .enumerate()
        .flat_map(|(l, cs)| cs.iter().map(move |&c| (l as u32, c)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Precondition("train split is empty".into()));
    }
    rng.set_stream(1);
    let (lr, reg) = (cfg.learning_rate, cfg.regularization);
    let mut diff = vec![0.0; k];
    for epoch in 1..=cfg.epochs {
        pairs.shuffle(&mut rng);
        for &(l, pos) in &pairs {
            let train = &split.train[l as usize];
            if train.len() >= num_courses {
                continue;
            }
            let neg = loop {
                let c = rng.random_range(0..num_courses as u32);
                if train.binary_search(&c).is_err() {
                    break c;
                }
            };
            let (lu, pi, ni) = (l as usize * k, pos as usize * k, neg as usize * k);
            for f in 0..k {
                diff[f] = model.courses[pi + f] - model.courses[ni + f];
            }
            let x = dot(&model.learners[lu..lu + k], &diff);
            let g = 1.0 / (1.0 + x.exp());
            for f in 0..k {
                let p = model.learners[lu + f];
                model.learners[lu + f] += lr * (g * diff[f] - reg * p);
                model.courses[pi + f] += lr * (g * p - reg * model.courses[pi + f]);
                model.courses[ni + f] += lr * (-g * p - reg * model.courses[ni + f]);
            }
        }
        if !model.learners.iter().chain(&model.courses).all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                message: "non-finite latent factors".into(),
            });
        }
    }
    Ok(model)
}

pub fn mf_baseline(
    split: &EnrollmentSplit,
    num_courses: usize,
    cfg: &MfConfig,
    n: usize,
) -> Result<Vec<(EntityRef, Vec<u32>)>> {
    let model = train_mf(split, num_courses, cfg)?;
    Ok((0..split.num_learners() as u32)
        .map(|l| (EntityRef::learner(l), model.recommend(l, &split.train[l as usize], n)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::SplitRatios;

    fn split(train: Vec<Vec<u32>>) -> EnrollmentSplit {
        let n = train.len();
        EnrollmentSplit {
            train,
            validation: vec![Vec::new(); n],
            test: vec![Vec::new(); n],
            seed: 0,
            ratios: SplitRatios::default(),
        }
    }

    #[test]
    fn popularity_order_and_exclusion() {
        // counts c0:5, c1:3, c2:3
        let mut train = vec![vec![0, 1, 2]; 3];
        train.extend(vec![vec![0]; 2]);
        let s = split(train);
        assert_eq!(pop_ranking(&s, 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(pop_recommend(&[0, 1, 2], &[0], 10), vec![1, 2]);
        let flat = split(vec![vec![2], vec![1], vec![0]]);
        assert_eq!(pop_ranking(&flat, 3).unwrap(), vec![0, 1, 2]);
        assert!(pop_ranking(&split(vec![vec![]]), 3).is_err());
    }

    #[test]
    fn zero_learning_rate_ranks_by_initialization() {
        let s = split(vec![vec![0, 1], vec![2, 3], vec![0, 3]]);
        let cfg = MfConfig { learning_rate: 0.0, epochs: 5, ..Default::default() };
        let a = train_mf(&s, 6, &cfg).unwrap();
        let fresh = train_mf(&s, 6, &MfConfig { epochs: 0, ..cfg.clone() }).unwrap();
        assert_eq!(a, fresh);
        assert_eq!(a, train_mf(&s, 6, &cfg).unwrap());
        assert_ne!(a, train_mf(&s, 6, &MfConfig { seed: 9, ..cfg }).unwrap());
    }

    #[test]
    fn learns_block_structure() {
        // two disjoint groups of learners and courses
        let train: Vec<Vec<u32>> = (0..40).map(|l| if l % 2 == 0 { vec![0, 1, 2, 3] } else { vec![4, 5, 6, 7] }).collect();
        let s = split(train);
        let model = train_mf(&s, 10, &MfConfig { factors: 4, epochs: 100, ..Default::default() }).unwrap();
        for l in 0..40u32 {
            let own = if l % 2 == 0 { 0..4 } else { 4..8 };
            let other = if l % 2 == 0 { 4..8 } else { 0..4 };
            let worst_own = own.map(|c| model.score(l, c)).fold(f64::INFINITY, f64::min);
            let best_other = other.map(|c| model.score(l, c)).fold(f64::NEG_INFINITY, f64::max);
            assert!(worst_own > best_other, "learner {l}");
        }
    }
}
