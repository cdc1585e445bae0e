//! Top-k ranking metrics with binary relevance, per-run evaluation and the
//! multi-seed comparison report.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beam::RecommendationList;
use crate::error::{Error, Result};
use crate::kg::{EntityRef, EnrollmentSplit};

pub const DEFAULT_K: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsAtK {
    pub ndcg: f64,
    pub recall: f64,
    pub hit_ratio: f64,
    pub precision: f64,
}

/// Metrics of one ranked list against the relevant set, all in [0, 1].
pub fn metrics_at_k(ranked: &[u32], relevant: &[u32], k: usize) -> Result<MetricsAtK> {
    if k == 0 {
        return Err(Error::Precondition("k must be positive".into()));
    }
    let relevant: HashSet<u32> = relevant.iter().copied().collect();
    if relevant.is_empty() {
        return Err(Error::Precondition("empty relevant set".into()));
    }
    let mut seen = HashSet::with_capacity(ranked.len());
    if !ranked.iter().all(|c| seen.insert(*c)) {
        return Err(Error::Precondition("ranked list has duplicates".into()));
    }
    let mut dcg = 0.0;
    let mut hits = 0usize;
    for (i, c) in ranked.iter().take(k).enumerate() {
        if relevant.contains(c) {
            dcg += 1.0 / ((i + 2) as f64).log2();
            hits += 1;
        }
    }
    let idcg: f64 = (0..relevant.len().min(k)).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    Ok(MetricsAtK {
        ndcg: dcg / idcg,
        recall: hits as f64 / relevant.len() as f64,
        hit_ratio: if hits > 0 { 1.0 } else { 0.0 },
        precision: hits as f64 / k as f64,
    })
}

/// Averages over one run, in percent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub ndcg: f64,
    pub recall: f64,
    pub hit_ratio: f64,
    pub precision: f64,
    pub invalid_fraction: f64,
    pub evaluated: usize,
}

/// Scores per-learner rankings against the test split. Every learner with
/// test enrollments must have a ranking; short rankings count their missing
/// slots as misses, and rankings shorter than `k` count as invalid.
pub fn evaluate_rankings(rankings: &[(EntityRef, Vec<u32>)], split: &EnrollmentSplit, k: usize) -> Result<RunMetrics> {
    let by_learner: BTreeMap<u32, &[u32]> = rankings.iter().map(|(l, r)| (l.index, r.as_slice())).collect();
    let targets: Vec<u32> = (0..split.num_learners() as u32)
        .filter(|&l| !split.test_of(EntityRef::learner(l)).is_empty())
        .collect();
    let per_learner = targets
        .par_iter()
        .map(|&l| {
            let ranked = by_learner
                .get(&l)
                .ok_or_else(|| Error::Evaluation(format!("no ranking for learner {l}")))?;
            metrics_at_k(ranked, split.test_of(EntityRef::learner(l)), k)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_learner.len();
    if n == 0 {
        return Err(Error::Evaluation("no learner has test enrollments".into()));
    }
    let mut sum = MetricsAtK::default();
    for m in &per_learner {
        sum.ndcg += m.ndcg;
        sum.recall += m.recall;
        sum.hit_ratio += m.hit_ratio;
        sum.precision += m.precision;
    }
    let scale = 100.0 / n as f64;
    let invalid = rankings.iter().filter(|(_, r)| r.len() < k).count();
    Ok(RunMetrics {
        ndcg: sum.ndcg * scale,
        recall: sum.recall * scale,
        hit_ratio: sum.hit_ratio * scale,
        precision: sum.precision * scale,
        invalid_fraction: if rankings.is_empty() { 0.0 } else { 100.0 * invalid as f64 / rankings.len() as f64 },
        evaluated: n,
    })
}

pub fn evaluate(lists: &[RecommendationList], split: &EnrollmentSplit, k: usize) -> Result<RunMetrics> {
    let rankings: Vec<(EntityRef, Vec<u32>)> = lists
        .iter()
        .map(|l| (l.learner, l.items.iter().map(|i| i.course.index).collect()))
        .collect();
    let mut m = evaluate_rankings(&rankings, split, k)?;
    // a path list is invalid against its own requested length
    if !lists.is_empty() {
        m.invalid_fraction = 100.0 * lists.iter().filter(|l| l.is_invalid()).count() as f64 / lists.len() as f64;
    }
    Ok(m)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: RunMetrics,
}

/// One model row: per-seed values and their spread.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub model_type: String,
    pub path_length: Option<usize>,
    pub runs: Vec<SeedRun>,
    pub ndcg: Spread,
    pub recall: Spread,
    pub hit_ratio: Spread,
    pub precision: Spread,
    pub invalid_fraction: Spread,
}

impl MetricsReport {
    pub fn new(model: &str, model_type: &str, path_length: Option<usize>, runs: Vec<SeedRun>) -> Self {
        let spread = |f: fn(&RunMetrics) -> f64| {
            let v: Vec<f64> = runs.iter().map(|r| f(&r.metrics)).collect();
            let (mean, std) = mean_std(&v);
            Spread { mean, std }
        };
        MetricsReport {
            model: model.to_owned(),
            model_type: model_type.to_owned(),
            path_length,
            ndcg: spread(|m| m.ndcg),
            recall: spread(|m| m.recall),
            hit_ratio: spread(|m| m.hit_ratio),
            precision: spread(|m| m.precision),
            invalid_fraction: spread(|m| m.invalid_fraction),
            runs,
        }
    }
}

const HEADERS: [&str; 8] = ["Model", "Type", "Path Length", "NDCG", "Recall", "HR", "Precision", "Invalid users"];

/// Fixed-width text table, one row per report.
pub fn format_table(reports: &[MetricsReport]) -> String {
    let cell = |s: Spread| format!("{:05.2} ± {:.1}", s.mean, s.std);
    let rows: Vec<[String; 8]> = reports
        .iter()
        .map(|r| {
            [
                r.model.clone(),
                r.model_type.clone(),
                r.path_length.map_or("-".into(), |l| l.to_string()),
                cell(r.ndcg),
                cell(r.recall),
                cell(r.hit_ratio),
                cell(r.precision),
                format!("{:04.1}% ± {:.1}", r.invalid_fraction.mean, r.invalid_fraction.std),
            ]
        })
        .collect();
    let mut widths = HEADERS.map(|h| h.chars().count());
    for row in &rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        writeln!(out, "{}", padded.join("  ").trim_end()).unwrap();
    };
    line(&HEADERS.map(String::from));
    for row in &rows {
        line(row);
    }
    out
}
