use std::io::{BufRead, BufReader, Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EntityRef, EntityType, KnowledgeGraph};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.validation, self.test];
        if all.iter().any(|r| !(0.0..=1.0).contains(r)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "split ratios must be non-negative and sum to 1, got {all:?}"
            )));
        }
        Ok(())
    }

    /// (train, validation, test) sizes for `n` enrollments. Validation and test
    /// are floored; the remainder goes to train.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let floor = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
        let n_test = floor(self.test);
        let n_val = floor(self.validation).min(n - n_test);
        (n - n_val - n_test, n_val, n_test)
    }
}

/// Per-learner enrollment partition. Each list is indexed by learner index and
/// holds course indices in ascending order.
#[derive(Clone, Debug, PartialEq)]
pub struct EnrollmentSplit {
    pub train: Vec<Vec<u32>>,
    pub validation: Vec<Vec<u32>>,
    pub test: Vec<Vec<u32>>,
    pub seed: u64,
    pub ratios: SplitRatios,
}

impl EnrollmentSplit {
    pub fn num_learners(&self) -> usize {
        self.train.len()
    }

    pub fn train_of(&self, learner: EntityRef) -> &[u32] {
        &self.train[learner.index as usize]
    }

    pub fn test_of(&self, learner: EntityRef) -> &[u32] {
        &self.test[learner.index as usize]
    }

    pub fn is_train(&self, learner: EntityRef, course: u32) -> bool {
        self.train_of(learner).binary_search(&course).is_ok()
    }
}

pub fn split_enrollments(kg: &KnowledgeGraph, ratios: SplitRatios, seed: u64) -> Result<EnrollmentSplit> {
    ratios.validate()?;
    let n_learners = kg.num_entities(EntityType::Learner);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = EnrollmentSplit {
        train: Vec::with_capacity(n_learners),
        validation: Vec::with_capacity(n_learners),
        test: Vec::with_capacity(n_learners),
        seed,
        ratios,
    };
    for learner in kg.learners() {
        let mut courses = kg.enrollments_of(learner);
        if courses.is_empty() {
            return Err(Error::Precondition(format!(
                "learner {:?} has no enrollments",
                kg.id_of(learner).unwrap_or("?")
            )));
        }
        courses.shuffle(&mut rng);
        let (_, n_val, n_test) = ratios.counts(courses.len());
        let mut test = courses[..n_test].to_vec();
        let mut val = courses[n_test..n_test + n_val].to_vec();
        let mut train = courses[n_test + n_val..].to_vec();
        test.sort_unstable();
        val.sort_unstable();
        train.sort_unstable();
        split.train.push(train);
        split.validation.push(val);
        split.test.push(test);
    }
    Ok(split)
}

/// Writes `learner_id<TAB>{train|val|test}<TAB>course_id` lines, preceded by a
/// `#` comment carrying the seed and ratios.
pub fn write_split<W: Write>(kg: &KnowledgeGraph, split: &EnrollmentSplit, mut w: W) -> Result<()> {
    let io = |e| Error::io("<split>", e);
    let r = split.ratios;
    writeln!(w, "# seed={} ratios={},{},{}", split.seed, r.train, r.validation, r.test).map_err(io)?;
    for (l, learner_id) in kg.vocab(EntityType::Learner).ids().iter().enumerate() {
        for (tag, part) in [("train", &split.train), ("val", &split.validation), ("test", &split.test)] {
            for &c in &part[l] {
                let course_id = kg.vocab(EntityType::Course).id(c).unwrap_or("?");
                writeln!(w, "{learner_id}\t{tag}\t{course_id}").map_err(io)?;
            }
        }
    }
    Ok(())
}

pub fn read_split<R: Read>(kg: &KnowledgeGraph, r: R) -> Result<EnrollmentSplit> {
    let n = kg.num_entities(EntityType::Learner);
    let mut split = EnrollmentSplit {
        train: vec![Vec::new(); n],
        validation: vec![Vec::new(); n],
        test: vec![Vec::new(); n],
        seed: 0,
        ratios: SplitRatios::default(),
    };
    let bad = |i: usize, msg: String| Error::Ingest {
        file: "<split>".into(),
        line: i + 1,
        message: msg,
    };
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line.map_err(|e| Error::io("<split>", e))?;
        if let Some(comment) = line.strip_prefix('#') {
            for field in comment.split_whitespace() {
                if let Some(seed) = field.strip_prefix("seed=") {
                    split.seed = seed.parse().map_err(|_| bad(i, "bad seed".into()))?;
                } else if let Some(ratios) = field.strip_prefix("ratios=") {
                    let v: Vec<f64> = ratios
                        .split(',')
                        .map(str::parse)
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad(i, "bad ratios".into()))?;
                    if let [train, validation, test] = v[..] {
                        split.ratios = SplitRatios { train, validation, test };
                    }
                }
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [learner_id, tag, course_id] = cols[..] else {
            return Err(bad(i, format!("expected 3 columns, found {}", cols.len())));
        };
        let l = kg
            .vocab(EntityType::Learner)
            .index(learner_id)
            .ok_or_else(|| bad(i, format!("unknown learner {learner_id:?}")))?;
        let c = kg
            .vocab(EntityType::Course)
            .index(course_id)
            .ok_or_else(|| bad(i, format!("unknown course {course_id:?}")))?;
        let part = match tag {
            "train" => &mut split.train,
            "val" => &mut split.validation,
            "test" => &mut split.test,
            other => return Err(bad(i, format!("unknown split tag {other:?}"))),
        };
        part[l as usize].push(c);
    }
    for part in [&mut split.train, &mut split.validation, &mut split.test] {
        for list in part.iter_mut() {
            list.sort_unstable();
            list.dedup();
        }
    }
    Ok(split)
}
