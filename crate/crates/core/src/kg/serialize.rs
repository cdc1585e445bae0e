//! Line-oriented graph serialization.
//!
//! ```text
//! UPGPR-KG v1
//! vocab learner 2
//! u1
//! u2
//! ...
//! edges enrolled 3
//! 0	0
//! ...
//! ```
//! Vocabularies are written in type order, edges in relation order and sorted,
//! so equal graphs serialize to identical bytes.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EntityType, KnowledgeGraph, RelationKind, Vocab};
use crate::error::{Error, Result};

pub const KG_MAGIC: &str = "UPGPR-KG v1";

impl KnowledgeGraph {
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{KG_MAGIC}")?;
        for t in EntityType::ALL {
            let vocab = self.vocab(t);
            writeln!(w, "vocab {} {}", t.name(), vocab.len())?;
            for id in vocab.ids() {
                writeln!(w, "{id}")?;
            }
        }
        for k in RelationKind::ALL {
            let edges = self.forward_edges(k);
            writeln!(w, "edges {} {}", k.name(), edges.len())?;
            for (h, t) in edges {
                writeln!(w, "{h}\t{t}")?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let mut next = |what: &str| -> Result<String> {
            match lines.next() {
                Some(Ok(l)) => Ok(l),
                Some(Err(e)) => Err(Error::Format(format!("reading {what}: {e}"))),
                None => Err(Error::Format(format!("unexpected end of file, expected {what}"))),
            }
        };
        if next("header")? != KG_MAGIC {
            return Err(Error::Format(format!("missing {KG_MAGIC:?} header")));
        }
        let mut vocabs: [Vocab; 6] = Default::default();
        for t in EntityType::ALL {
            let n = section(&next("vocab header")?, "vocab", t.name())?;
            let mut ids = Vec::with_capacity(n);
            for _ in 0..n {
                ids.push(next("vocabulary id")?);
            }
            vocabs[t.slot()] = Vocab::from_ids(ids)?;
        }
        let mut edges: [BTreeSet<(u32, u32)>; 5] = Default::default();
        for k in RelationKind::ALL {
            let n = section(&next("edges header")?, "edges", k.name())?;
            for _ in 0..n {
                let line = next("edge")?;
                let parsed = line
                    .split_once('\t')
                    .and_then(|(h, t)| Some((h.parse().ok()?, t.parse().ok()?)));
                match parsed {
                    Some(e) => {
                        edges[k.slot()].insert(e);
                    }
                    None => return Err(Error::Format(format!("bad edge line {line:?}"))),
                }
            }
        }
        KnowledgeGraph::from_parts(vocabs, edges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file)
    }
}

fn section(line: &str, tag: &str, name: &str) -> Result<usize> {
    let mut parts = line.split(' ');
    match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some(t), Some(n), Some(count), None) if t == tag && n == name => count
            .parse()
            .map_err(|_| Error::Format(format!("bad count in {line:?}"))),
        _ => Err(Error::Format(format!("expected `{tag} {name} <n>`, found {line:?}"))),
    }
}
