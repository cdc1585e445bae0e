//! Relation-sequence patterns of explanation paths and their frequencies.

use std::collections::BTreeMap;
use std::fmt;

use crate::beam::RecommendationList;
use crate::env::Path;
use crate::error::{Error, Result};
use crate::kg::{EntityType, Relation, RelationKind};

/// A self-loop-free relation sequence walked from a learner.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PathPattern {
    pub relations: Vec<Relation>,
}

/// Ordered by relation names, hop by hop.
impl Ord for PathPattern {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        let names = |p: &Self| p.relations.iter().map(|r| r.name()).collect::<Vec<_>>();
        names(self).cmp(&names(other))
    }
}

impl PartialOrd for PathPattern {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl PathPattern {
    pub fn parse(text: &str) -> Result<Self> {
        let relations = text
            .split('|')
            .map(|name| {
                Relation::from_name(name.trim())
                    .filter(|r| !r.is_self_loop())
                    .ok_or_else(|| Error::Format(format!("unknown relation {name:?} in pattern")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PathPattern { relations })
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    /// Entity types visited from the learner, `None` once the schema breaks.
    pub fn entity_types(&self) -> Option<Vec<EntityType>> {
        let mut types = vec![EntityType::Learner];
        for r in &self.relations {
            if r.head_type()? != *types.last().unwrap() {
                return None;
            }
            types.push(r.tail_type()?);
        }
        Some(types)
    }

    pub fn ends_on_course(&self) -> bool {
        self.entity_types()
            .is_some_and(|t| t.len() > 1 && *t.last().unwrap() == EntityType::Course)
    }

    /// Arrow rendering with entity types, inverse relations marked ⁻¹.
    pub fn describe(&self) -> String {
        let types = self.entity_types();
        let mut out = EntityType::Learner.name().to_owned();
        for (i, r) in self.relations.iter().enumerate() {
            let label = match r {
                Relation::Inverse(k) => format!("{}⁻¹", k.name()),
                other => other.name().to_owned(),
            };
            let tail = types.as_ref().map_or("?", |t| t[i + 1].name());
            out.push_str(&format!(" —{label}→ {tail}"));
        }
        out
    }
}

impl fmt::Display for PathPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.relations.iter().map(|r| r.name()).collect();
        f.write_str(&names.join("|"))
    }
}

pub fn pattern_of(path: &Path) -> PathPattern {
    PathPattern {
        relations: path.relations().filter(|r| !r.is_self_loop()).collect(),
    }
}

/// Every pattern of exactly `length` hops from a learner to a course using
/// the given relation kinds in either direction, in lexicographic order.
pub fn schema_patterns(kinds: &[RelationKind], length: usize) -> Vec<PathPattern> {
    fn walk(at: EntityType, rels: &[Relation], left: usize, prefix: &mut Vec<Relation>, out: &mut Vec<PathPattern>) {
        if left == 0 {
            if at == EntityType::Course {
                out.push(PathPattern { relations: prefix.clone() });
            }
            return;
        }
        for &r in rels {
            if r.head_type() == Some(at) {
                prefix.push(r);
                walk(r.tail_type().unwrap(), rels, left - 1, prefix, out);
                prefix.pop();
            }
        }
    }
    let rels: Vec<Relation> = kinds
        .iter()
        .flat_map(|&k| [Relation::Forward(k), Relation::Inverse(k)])
        .collect();
    let mut out = Vec::new();
    walk(EntityType::Learner, &rels, length, &mut Vec::new(), &mut out);
    out.sort();
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatternRow {
    pub pattern: PathPattern,
    pub count: usize,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatternReport {
    pub rows: Vec<PatternRow>,
    pub total: usize,
    pub excluded: usize,
}

/// Counts patterns of course-terminal paths; others are dropped before
/// counting. Rows are ordered by count, then pattern.
pub fn frequency_report(paths: &[Path]) -> Result<PatternReport> {
    if paths.is_empty() {
        return Err(Error::Precondition("no paths to analyse".into()));
    }
    let mut counts: BTreeMap<PathPattern, usize> = BTreeMap::new();
    let mut excluded = 0;
    for path in paths {
        if path.end().kind != EntityType::Course {
            excluded += 1;
            continue;
        }
        *counts.entry(pattern_of(path)).or_default() += 1;
    }
    let total = paths.len() - excluded;
    if total == 0 {
        return Err(Error::Precondition("no path ends on a course".into()));
    }
    let mut rows: Vec<PatternRow> = counts
        .into_iter()
        .map(|(pattern, count)| PatternRow {
            pattern,
            count,
            fraction: count as f64 / total as f64,
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.pattern.cmp(&b.pattern)));
    Ok(PatternReport { rows, total, excluded })
}

/// The best path of every recommended item, list by list.
pub fn best_paths(lists: &[RecommendationList]) -> Vec<Path> {
    lists
        .iter()
        .flat_map(|l| l.items.iter().map(|i| i.path.clone()))
        .collect()
}

impl PatternReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pattern,count,fraction\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.pattern, r.count, r.fraction));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&format!(
                "{:5.1}%  ({} paths, {} hops)  {}\n",
                100.0 * r.fraction,
                r.count,
                r.pattern.len(),
                r.pattern.describe()
            ));
        }
        out
    }
}
