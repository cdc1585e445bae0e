//! Typed educational knowledge graph.
//!
//! Entities live in one dense vocabulary per [`EntityType`]. Edges are stored
//! once in their forward direction and every forward edge is mirrored by an
//! inverse edge in the adjacency lists, so walks can traverse the schema in
//! both directions while patterns keep track of which way they went.

mod ingest;
mod serialize;
mod split;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ingest::{ingest, ingest_dir, KgBuilder};
pub use split::{read_split, split_enrollments, write_split, EnrollmentSplit, SplitRatios};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityType {
    Learner,
    Course,
    Teacher,
    Category,
    Concept,
    School,
}

impl EntityType {
    pub const ALL: [EntityType; 6] = [
        EntityType::Learner,
        EntityType::Course,
        EntityType::Teacher,
        EntityType::Category,
        EntityType::Concept,
        EntityType::School,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EntityType::Learner => "learner",
            EntityType::Course => "course",
            EntityType::Teacher => "teacher",
            EntityType::Category => "category",
            EntityType::Concept => "concept",
            EntityType::School => "school",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }

    pub(crate) fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An entity, addressed by its type and its dense index within that type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityRef {
    pub kind: EntityType,
    pub index: u32,
}

impl EntityRef {
    pub fn new(kind: EntityType, index: u32) -> Self {
        EntityRef { kind, index }
    }

    pub fn learner(index: u32) -> Self {
        Self::new(EntityType::Learner, index)
    }

    pub fn course(index: u32) -> Self {
        Self::new(EntityType::Course, index)
    }
}

/// The five forward relations of the schema.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelationKind {
    Enrolled,
    Teaches,
    HasConcept,
    BelongsTo,
    Provides,
}

impl RelationKind {
    pub const ALL: [RelationKind; 5] = [
        RelationKind::Enrolled,
        RelationKind::Teaches,
        RelationKind::HasConcept,
        RelationKind::BelongsTo,
        RelationKind::Provides,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RelationKind::Enrolled => "enrolled",
            RelationKind::Teaches => "teaches",
            RelationKind::HasConcept => "has_concept",
            RelationKind::BelongsTo => "belongs_to",
            RelationKind::Provides => "provides",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == name)
    }

    /// Conventional input file name for this relation.
    pub fn file_name(self) -> &'static str {
        match self {
            RelationKind::Enrolled => "enrollments.tsv",
            RelationKind::Teaches => "teaches.tsv",
            RelationKind::HasConcept => "has_concept.tsv",
            RelationKind::BelongsTo => "belongs_to.tsv",
            RelationKind::Provides => "provides.tsv",
        }
    }

    pub fn head_type(self) -> EntityType {
        match self {
            RelationKind::Enrolled => EntityType::Learner,
            RelationKind::Teaches => EntityType::Teacher,
            RelationKind::HasConcept | RelationKind::BelongsTo => EntityType::Course,
            RelationKind::Provides => EntityType::School,
        }
    }

    pub fn tail_type(self) -> EntityType {
        match self {
            RelationKind::Enrolled | RelationKind::Teaches | RelationKind::Provides => {
                EntityType::Course
            }
            RelationKind::HasConcept => EntityType::Concept,
            RelationKind::BelongsTo => EntityType::Category,
        }
    }

    pub(crate) fn slot(self) -> usize {
        self as usize
    }
}

/// A traversable relation: a forward edge, its inverse, or the stay-in-place self loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Relation {
    Forward(RelationKind),
    Inverse(RelationKind),
    SelfLoop,
}

impl Relation {
    pub fn name(self) -> &'static str {
        match self {
            Relation::Forward(k) => k.name(),
            Relation::Inverse(RelationKind::Enrolled) => "enrolled_inv",
            Relation::Inverse(RelationKind::Teaches) => "teaches_inv",
            Relation::Inverse(RelationKind::HasConcept) => "has_concept_inv",
            Relation::Inverse(RelationKind::BelongsTo) => "belongs_to_inv",
            Relation::Inverse(RelationKind::Provides) => "provides_inv",
            Relation::SelfLoop => "self_loop",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        if name == "self_loop" {
            return Some(Relation::SelfLoop);
        }
        match name.strip_suffix("_inv") {
            Some(base) => RelationKind::from_name(base).map(Relation::Inverse),
            None => RelationKind::from_name(name).map(Relation::Forward),
        }
    }

    pub fn inverse(self) -> Self {
        match self {
            Relation::Forward(k) => Relation::Inverse(k),
            Relation::Inverse(k) => Relation::Forward(k),
            Relation::SelfLoop => Relation::SelfLoop,
        }
    }

    pub fn kind(self) -> Option<RelationKind> {
        match self {
            Relation::Forward(k) | Relation::Inverse(k) => Some(k),
            Relation::SelfLoop => None,
        }
    }

    pub fn is_self_loop(self) -> bool {
        matches!(self, Relation::SelfLoop)
    }

    /// Head type, or `None` for the self loop which accepts every type.
    pub fn head_type(self) -> Option<EntityType> {
        match self {
            Relation::Forward(k) => Some(k.head_type()),
            Relation::Inverse(k) => Some(k.tail_type()),
            Relation::SelfLoop => None,
        }
    }

    pub fn tail_type(self) -> Option<EntityType> {
        match self {
            Relation::Forward(k) => Some(k.tail_type()),
            Relation::Inverse(k) => Some(k.head_type()),
            Relation::SelfLoop => None,
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// String ID <-> dense index map for one entity type.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    ids: Vec<String>,
    lookup: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_ids(ids: Vec<String>) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if lookup.insert(id.clone(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary id {id:?}")));
            }
        }
        Ok(Vocab { ids, lookup })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, index: u32) -> Option<&str> {
        self.ids.get(index as usize).map(String::as_str)
    }

    pub fn index(&self, id: &str) -> Option<u32> {
        self.lookup.get(id).copied()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

pub type Edge = (Relation, EntityRef);

/// Entity and relation counts, the shape of a dataset statistics table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct KgStats {
    pub entities: BTreeMap<String, usize>,
    pub relations: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnowledgeGraph {
    vocabs: [Vocab; 6],
    edges: [BTreeSet<(u32, u32)>; 5],
    adjacency: [Vec<Vec<Edge>>; 6],
}

impl KnowledgeGraph {
    /// Assembles a graph from vocabularies and forward edge sets, materializing
    /// inverse edges. Edge indices must be within their vocabularies.
    pub fn from_parts(vocabs: [Vocab; 6], edges: [BTreeSet<(u32, u32)>; 5]) -> Result<Self> {
        let mut adjacency: [Vec<Vec<Edge>>; 6] =
            std::array::from_fn(|slot| vec![Vec::new(); vocabs[slot].len()]);
        for kind in RelationKind::ALL {
            let (ht, tt) = (kind.head_type(), kind.tail_type());
            for &(h, t) in &edges[kind.slot()] {
                if h as usize >= vocabs[ht.slot()].len() || t as usize >= vocabs[tt.slot()].len() {
                    return Err(Error::Format(format!(
                        "{} edge ({h}, {t}) outside vocabulary",
                        kind.name()
                    )));
                }
                adjacency[ht.slot()][h as usize]
                    .push((Relation::Forward(kind), EntityRef::new(tt, t)));
                adjacency[tt.slot()][t as usize]
                    .push((Relation::Inverse(kind), EntityRef::new(ht, h)));
            }
        }
        for lists in adjacency.iter_mut() {
            for list in lists.iter_mut() {
                list.sort_by(|a, b| {
                    a.0.name()
                        .cmp(b.0.name())
                        .then(a.1.index.cmp(&b.1.index))
                });
            }
        }
        Ok(KnowledgeGraph {
            vocabs,
            edges,
            adjacency,
        })
    }

    pub fn vocab(&self, kind: EntityType) -> &Vocab {
        &self.vocabs[kind.slot()]
    }

    pub fn num_entities(&self, kind: EntityType) -> usize {
        self.vocabs[kind.slot()].len()
    }

    pub fn total_entities(&self) -> usize {
        self.vocabs.iter().map(Vocab::len).sum()
    }

    pub fn entity(&self, kind: EntityType, id: &str) -> Option<EntityRef> {
        self.vocab(kind).index(id).map(|i| EntityRef::new(kind, i))
    }

    pub fn id_of(&self, e: EntityRef) -> Option<&str> {
        self.vocab(e.kind).id(e.index)
    }

    pub fn contains_entity(&self, e: EntityRef) -> bool {
        (e.index as usize) < self.num_entities(e.kind)
    }

    pub fn learners(&self) -> impl Iterator<Item = EntityRef> + '_ {
        (0..self.num_entities(EntityType::Learner) as u32).map(EntityRef::learner)
    }

    pub fn courses(&self) -> impl Iterator<Item = EntityRef> + '_ {
        (0..self.num_entities(EntityType::Course) as u32).map(EntityRef::course)
    }

    /// Outgoing edges in canonical order (relation name, then tail index).
    /// The self loop is not part of the graph.
    pub fn neighbors(&self, e: EntityRef) -> Result<&[Edge]> {
        self.adjacency[e.kind.slot()]
            .get(e.index as usize)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Lookup(format!("unknown entity {}#{}", e.kind, e.index)))
    }

    pub fn forward_edges(&self, kind: RelationKind) -> &BTreeSet<(u32, u32)> {
        &self.edges[kind.slot()]
    }

    pub fn contains(&self, head: EntityRef, rel: Relation, tail: EntityRef) -> bool {
        let (kind, h, t) = match rel {
            Relation::Forward(k) => (k, head, tail),
            Relation::Inverse(k) => (k, tail, head),
            Relation::SelfLoop => return false,
        };
        h.kind == kind.head_type()
            && t.kind == kind.tail_type()
            && self.edges[kind.slot()].contains(&(h.index, t.index))
    }

    /// Every stored triple, forward and inverse.
    pub fn triples(&self) -> impl Iterator<Item = (EntityRef, Relation, EntityRef)> + '_ {
        self.forward_triples()
            .flat_map(|(h, r, t)| [(h, r, t), (t, r.inverse(), h)])
    }

    pub fn forward_triples(&self) -> impl Iterator<Item = (EntityRef, Relation, EntityRef)> + '_ {
        RelationKind::ALL.into_iter().flat_map(move |kind| {
            self.edges[kind.slot()].iter().map(move |&(h, t)| {
                (
                    EntityRef::new(kind.head_type(), h),
                    Relation::Forward(kind),
                    EntityRef::new(kind.tail_type(), t),
                )
            })
        })
    }

    pub fn num_forward_triples(&self) -> usize {
        self.edges.iter().map(BTreeSet::len).sum()
    }

    /// Courses a learner is enrolled in, ascending by index.
    pub fn enrollments_of(&self, learner: EntityRef) -> Vec<u32> {
        self.neighbors(learner)
            .map(|edges| {
                edges
                    .iter()
                    .filter(|(r, _)| *r == Relation::Forward(RelationKind::Enrolled))
                    .map(|(_, c)| c.index)
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn stats(&self) -> KgStats {
        KgStats {
            entities: EntityType::ALL
                .into_iter()
                .map(|t| (t.name().to_string(), self.num_entities(t)))
                .collect(),
            relations: RelationKind::ALL
                .into_iter()
                .map(|k| (k.name().to_string(), self.edges[k.slot()].len()))
                .collect(),
        }
    }

    /// Share of each forward relation among all forward triples.
    pub fn composition(&self) -> Result<BTreeMap<String, f64>> {
        let total = self.num_forward_triples();
        if total == 0 {
            return Err(Error::Precondition("composition of an empty graph".into()));
        }
        Ok(RelationKind::ALL
            .into_iter()
            .filter(|k| !self.edges[k.slot()].is_empty())
            .map(|k| {
                (
                    k.name().to_string(),
                    self.edges[k.slot()].len() as f64 / total as f64,
                )
            })
            .collect())
    }

    /// Drops learners with fewer than `min_enrollments` enrollments and
    /// re-indexes the remaining learners densely, preserving their order.
    /// Every other entity is kept, even if left without edges.
    pub fn filter_learners(&self, min_enrollments: usize) -> KnowledgeGraph {
        let n = self.num_entities(EntityType::Learner);
        let mut counts = vec![0usize; n];
        for &(l, _) in &self.edges[RelationKind::Enrolled.slot()] {
            counts[l as usize] += 1;
        }
        let mut remap = vec![None; n];
        let mut kept = Vec::new();
        for (old, &count) in counts.iter().enumerate() {
            if count >= min_enrollments {
                remap[old] = Some(kept.len() as u32);
                kept.push(self.vocabs[EntityType::Learner.slot()].ids[old].clone());
            }
        }
        let mut vocabs = self.vocabs.clone();
        vocabs[EntityType::Learner.slot()] =
            Vocab::from_ids(kept).expect("subset of a valid vocabulary");
        let mut edges = self.edges.clone();
        edges[RelationKind::Enrolled.slot()] = self.edges[RelationKind::Enrolled.slot()]
            .iter()
            .filter_map(|&(l, c)| remap[l as usize].map(|nl| (nl, c)))
            .collect();
        KnowledgeGraph::from_parts(vocabs, edges).expect("filtered edges stay in range")
    }

    /// Same graph with the enrollment edges replaced by the split's training part.
    pub fn with_train_enrollments(&self, split: &EnrollmentSplit) -> Result<KnowledgeGraph> {
        if split.train.len() != self.num_entities(EntityType::Learner) {
            return Err(Error::Mismatch(format!(
                "split covers {} learners, graph has {}",
                split.train.len(),
                self.num_entities(EntityType::Learner)
            )));
        }
        let mut edges = self.edges.clone();
        edges[RelationKind::Enrolled.slot()] = split
            .train
            .iter()
            .enumerate()
            .flat_map(|(l, cs)| cs.iter().map(move |&c| (l as u32, c)))
            .collect();
        KnowledgeGraph::from_parts(self.vocabs.clone(), edges)
    }

    /// Row offset of each entity type when all entities are laid out in one table.
    pub fn type_offsets(&self) -> [usize; 6] {
        let mut offsets = [0usize; 6];
        let mut acc = 0;
        for t in EntityType::ALL {
            offsets[t.slot()] = acc;
            acc += self.num_entities(t);
        }
        offsets
    }
}
