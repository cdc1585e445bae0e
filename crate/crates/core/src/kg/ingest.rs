use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use super::{EntityType, KnowledgeGraph, RelationKind, Vocab};
use crate::error::{Error, Result};

/// Accumulates raw string-ID edges and assigns dense indices on `build`.
///
/// Indices follow the lexicographic order of the raw IDs, so the resulting
/// graph does not depend on line order or file order.
#[derive(Clone, Debug, Default)]
pub struct KgBuilder {
    ids: [BTreeSet<String>; 6],
    edges: [BTreeSet<(String, String)>; 5],
}

impl KgBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, kind: RelationKind, head: &str, tail: &str) {
        self.ids[kind.head_type().slot()].insert(head.to_string());
        self.ids[kind.tail_type().slot()].insert(tail.to_string());
        self.edges[kind.slot()].insert((head.to_string(), tail.to_string()));
    }

    /// Registers an entity that may have no edges.
    pub fn add_entity(&mut self, kind: EntityType, id: &str) {
        self.ids[kind.slot()].insert(id.to_string());
    }

    pub fn build(self) -> KnowledgeGraph {
        let vocabs: [Vocab; 6] = self.ids.map(|set| {
            Vocab::from_ids(set.into_iter().collect()).expect("set entries are distinct")
        });
        let edges = std::array::from_fn(|slot| {
            let kind = RelationKind::ALL[slot];
            let hv = &vocabs[kind.head_type().slot()];
            let tv = &vocabs[kind.tail_type().slot()];
            self.edges[slot]
                .iter()
                .map(|(h, t)| (hv.index(h).unwrap(), tv.index(t).unwrap()))
                .collect()
        });
        KnowledgeGraph::from_parts(vocabs, edges).expect("builder edges are in range")
    }

    fn read_file(&mut self, kind: RelationKind, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            match cols.as_slice() {
                [h, t] if !h.is_empty() && !t.is_empty() => self.add(kind, h, t),
                _ => {
                    return Err(Error::Ingest {
                        file: path.to_path_buf(),
                        line: i + 1,
                        message: format!(
                            "expected 2 non-empty tab-separated columns, found {}",
                            cols.len()
                        ),
                    })
                }
            }
        }
        Ok(())
    }
}

/// Builds a graph from relation-name -> TSV path pairs.
pub fn ingest(files: &BTreeMap<String, PathBuf>) -> Result<KnowledgeGraph> {
    let mut builder = KgBuilder::new();
    for (name, path) in files {
        let kind = RelationKind::from_name(name)
            .ok_or_else(|| Error::Config(format!("unknown relation {name:?}")))?;
        builder.read_file(kind, path)?;
    }
    Ok(builder.build())
}

/// Ingests every conventionally named relation file present in `dir`.
/// The enrollments file is mandatory.
pub fn ingest_dir(dir: &Path) -> Result<KnowledgeGraph> {
    let mut files = BTreeMap::new();
    for kind in RelationKind::ALL {
        let path = dir.join(kind.file_name());
        if path.exists() {
            files.insert(kind.name().to_string(), path);
        } else if kind == RelationKind::Enrolled {
            return Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "enrollments file missing"),
            ));
        }
    }
    ingest(&files)
}
