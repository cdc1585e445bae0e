//! Entity and relation embeddings trained with a translate-then-dot score
//! `f(h, r, t) = (v_h + v_r) . v_t` and tail-corrupting negative sampling.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, ConfigEcho};
use crate::error::{Error, Result};
use crate::kg::{EntityRef, EntityType, KnowledgeGraph, Relation, RelationKind};
use crate::optim::{Optimizer, OptimizerKind};

pub const EMB_MAGIC: &str = "UPGPR-EMB v1";

#[derive(Clone, Debug, PartialEq)]
pub struct EmbedConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub negatives: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            dim: 100,
            learning_rate: 1e-3,
            epochs: 30,
            negatives: 5,
            batch_size: 512,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("epochs", self.epochs),
            ("negatives", self.negatives),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("embed.{name} must be positive")));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("embed.learning_rate must be non-negative".into()));
        }
        Ok(())
    }

    pub fn echo(&self) -> ConfigEcho {
        [
            ("embed.dim", self.dim.to_string()),
            ("embed.learning_rate", self.learning_rate.to_string()),
            ("embed.epochs", self.epochs.to_string()),
            ("embed.negatives", self.negatives.to_string()),
            ("embed.batch_size", self.batch_size.to_string()),
            ("embed.seed", self.seed.to_string()),
            ("embed.optimizer", self.optimizer.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// One vector per entity (all types stacked in type order) and one per forward relation.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    sizes: [usize; 6],
    offsets: [usize; 6],
    entities: Vec<f64>,
    relations: Vec<f64>,
}

fn offsets_of(sizes: &[usize; 6]) -> [usize; 6] {
    let mut offsets = [0; 6];
    let mut acc = 0;
    for (o, s) in offsets.iter_mut().zip(sizes) {
        *o = acc;
        acc += s;
    }
    offsets
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl EmbeddingTable {
    pub fn zeros(dim: usize, sizes: [usize; 6]) -> Self {
        let total: usize = sizes.iter().sum();
        EmbeddingTable {
            dim,
            sizes,
            offsets: offsets_of(&sizes),
            entities: vec![0.0; total * dim],
            relations: vec![0.0; RelationKind::ALL.len() * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sizes(&self) -> [usize; 6] {
        self.sizes
    }

    pub fn num_entities(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Whether this table was laid out for `kg`'s vocabularies.
    pub fn matches(&self, kg: &KnowledgeGraph) -> bool {
        EntityType::ALL
            .iter()
            .all(|&t| self.sizes[t.slot()] == kg.num_entities(t))
    }

    pub(crate) fn row_of(&self, e: EntityRef) -> usize {
        debug_assert!((e.index as usize) < self.sizes[e.kind.slot()]);
        self.offsets[e.kind.slot()] + e.index as usize
    }

    pub fn entity(&self, e: EntityRef) -> &[f64] {
        let r = self.row_of(e);
        &self.entities[r * self.dim..(r + 1) * self.dim]
    }

    pub fn entity_mut(&mut self, e: EntityRef) -> &mut [f64] {
        let r = self.row_of(e);
        &mut self.entities[r * self.dim..(r + 1) * self.dim]
    }

    pub fn relation(&self, kind: RelationKind) -> &[f64] {
        let r = kind.slot();
        &self.relations[r * self.dim..(r + 1) * self.dim]
    }

    pub fn relation_mut(&mut self, kind: RelationKind) -> &mut [f64] {
        let r = kind.slot();
        &mut self.relations[r * self.dim..(r + 1) * self.dim]
    }

    /// Writes the directional vector of `rel` into `out`: `v_r` forward,
    /// `-v_r` inverse, zero for the self loop.
    pub fn signed_relation_into(&self, rel: Relation, out: &mut [f64]) {
        match rel {
            Relation::Forward(k) => out.copy_from_slice(self.relation(k)),
            Relation::Inverse(k) => {
                for (o, v) in out.iter_mut().zip(self.relation(k)) {
                    *o = -v;
                }
            }
            Relation::SelfLoop => out.fill(0.0),
        }
    }

    pub fn entity_data(&self) -> &[f64] {
        &self.entities
    }

    pub fn relation_data(&self) -> &[f64] {
        &self.relations
    }

    pub fn is_finite(&self) -> bool {
        self.entities.iter().chain(&self.relations).all(|v| v.is_finite())
    }

    /// Raw score of a forward triple without type checks.
    pub(crate) fn forward_score(&self, h: EntityRef, kind: RelationKind, t: EntityRef) -> f64 {
        let (vh, vr, vt) = (self.entity(h), self.relation(kind), self.entity(t));
        (0..self.dim).map(|i| (vh[i] + vr[i]) * vt[i]).sum()
    }

    /// `f(h, r, t) = (v_h + v_r) . v_t`; an inverse triple scores as its forward twin.
    pub fn score_triple(&self, h: EntityRef, r: Relation, t: EntityRef) -> Result<f64> {
        let (kind, head, tail) = match r {
            Relation::Forward(k) => (k, h, t),
            Relation::Inverse(k) => (k, t, h),
            Relation::SelfLoop => {
                return Err(Error::Contract("self_loop has no triple score".into()))
            }
        };
        if head.kind != kind.head_type() || tail.kind != kind.tail_type() {
            return Err(Error::Contract(format!(
                "{} does not connect {} to {}",
                r.name(),
                h.kind,
                t.kind
            )));
        }
        if head.index as usize >= self.sizes[head.kind.slot()]
            || tail.index as usize >= self.sizes[tail.kind.slot()]
        {
            return Err(Error::Lookup("entity outside embedding table".into()));
        }
        Ok(self.forward_score(head, kind, tail))
    }

    fn param_mut(&mut self, entity: bool, idx: usize) -> &mut f64 {
        if entity {
            &mut self.entities[idx]
        } else {
            &mut self.relations[idx]
        }
    }

    pub fn round_to_f32(&mut self) {
        checkpoint::round_f32(&mut self.entities);
        checkpoint::round_f32(&mut self.relations);
    }

    /// Writes the checkpoint: header, config echo, dimension, vocabulary sizes,
    /// relation count, then entity and relation matrices as little-endian f32.
    pub fn write_to<W: Write>(&self, w: &mut W, echo: &ConfigEcho) -> Result<()> {
        checkpoint::write_header(w, EMB_MAGIC, echo)?;
        checkpoint::write_u32(w, self.dim as u32)?;
        for s in self.sizes {
            checkpoint::write_u32(w, s as u32)?;
        }
        checkpoint::write_u32(w, RelationKind::ALL.len() as u32)?;
        checkpoint::write_f32s(w, &self.entities)?;
        checkpoint::write_f32s(w, &self.relations)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<(Self, ConfigEcho)> {
        let echo = checkpoint::read_header(r, EMB_MAGIC)?;
        let dim = checkpoint::read_u32(r)? as usize;
        let mut sizes = [0usize; 6];
        for s in sizes.iter_mut() {
            *s = checkpoint::read_u32(r)? as usize;
        }
        let n_rel = checkpoint::read_u32(r)? as usize;
        if n_rel != RelationKind::ALL.len() {
            return Err(Error::Format(format!("expected 5 relations, found {n_rel}")));
        }
        let total: usize = sizes.iter().sum();
        let entities = checkpoint::read_f32s(r, total * dim)?;
        let relations = checkpoint::read_f32s(r, n_rel * dim)?;
        checkpoint::expect_eof(r)?;
        Ok((
            EmbeddingTable {
                dim,
                sizes,
                offsets: offsets_of(&sizes),
                entities,
                relations,
            },
            echo,
        ))
    }
}

fn sizes_of(kg: &KnowledgeGraph) -> [usize; 6] {
    EntityType::ALL.map(|t| kg.num_entities(t))
}

/// Uniform initialization in `[-0.5/sqrt(d), 0.5/sqrt(d)]`, stored at f32 precision.
pub fn init_embeddings(kg: &KnowledgeGraph, cfg: &EmbedConfig) -> Result<EmbeddingTable> {
    if cfg.dim == 0 {
        return Err(Error::Config("embedding dimension must be positive".into()));
    }
    let mut table = EmbeddingTable::zeros(cfg.dim, sizes_of(kg));
    let bound = 0.5 / (cfg.dim as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for v in table.entities.iter_mut().chain(table.relations.iter_mut()) {
        *v = rng.random_range(-bound..=bound);
    }
    table.round_to_f32();
    Ok(table)
}

/// A positive forward triple with its corrupted tails.
#[derive(Clone, Debug, PartialEq)]
pub struct TripleSample {
    pub head: EntityRef,
    pub relation: RelationKind,
    pub tail: EntityRef,
    pub negatives: Vec<EntityRef>,
}

/// Gradient with the same layout as an [`EmbeddingTable`].
#[derive(Clone, Debug)]
pub struct EmbeddingGrad {
    pub entities: Vec<f64>,
    pub relations: Vec<f64>,
}

fn log_sigmoid(x: f64) -> f64 {
    // log σ(x) = -softplus(-x)
    -((-x).max(0.0) + (-x.abs()).exp().ln_1p())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl EmbeddingTable {
    /// Mean negative-sampling logistic loss over `batch` and its gradient:
    /// `-(1/B) sum [log σ(f(h,r,t)) + sum_neg log σ(-f(h,r,t'))]`.
    pub fn loss_and_gradient(&self, batch: &[TripleSample]) -> (f64, EmbeddingGrad) {
        let d = self.dim;
        let mut grad = EmbeddingGrad {
            entities: vec![0.0; self.entities.len()],
            relations: vec![0.0; self.relations.len()],
        };
        if batch.is_empty() {
            return (0.0, grad);
        }
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut hr = vec![0.0; d];
        for s in batch {
            let (vh, vr) = (self.entity(s.head), self.relation(s.relation));
            for i in 0..d {
                hr[i] = vh[i] + vr[i];
            }
            let hrow = self.row_of(s.head);
            let rrow = s.relation.slot();
            let accumulate = |t: EntityRef, coeff: f64, grad: &mut EmbeddingGrad| {
                // coeff = dL/df for this triple
                let vt = self.entity(t);
                let trow = self.row_of(t);
                for i in 0..d {
                    grad.entities[hrow * d + i] += coeff * vt[i];
                    grad.relations[rrow * d + i] += coeff * vt[i];
                    grad.entities[trow * d + i] += coeff * hr[i];
                }
            };
            let f = dot(&hr, self.entity(s.tail));
            loss -= log_sigmoid(f);
            accumulate(s.tail, -sigmoid(-f) * scale, &mut grad);
            for &neg in &s.negatives {
                let fneg = dot(&hr, self.entity(neg));
                loss -= log_sigmoid(-fneg);
                accumulate(neg, sigmoid(fneg) * scale, &mut grad);
            }
        }
        (loss * scale, grad)
    }
}

pub(crate) fn sample_negatives<R: Rng>(
    kg: &KnowledgeGraph,
    kind: RelationKind,
    n: usize,
    rng: &mut R,
) -> Vec<EntityRef> {
    let tt = kind.tail_type();
    let vocab = kg.num_entities(tt) as u32;
    (0..n)
        .map(|_| EntityRef::new(tt, rng.random_range(0..vocab)))
        .collect()
}

/// Trained table plus the mean per-positive loss of every epoch.
#[derive(Clone, Debug)]
pub struct EmbedOutcome {
    pub table: EmbeddingTable,
    pub epoch_losses: Vec<f64>,
}

pub fn train_embeddings(kg: &KnowledgeGraph, cfg: &EmbedConfig) -> Result<EmbedOutcome> {
    cfg.validate()?;
    let mut table = init_embeddings(kg, cfg)?;
    let mut positives: Vec<(EntityRef, RelationKind, EntityRef)> = kg
        .forward_triples()
        .map(|(h, r, t)| (h, r.kind().expect("forward"), t))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = Optimizer::new(
        cfg.optimizer,
        cfg.learning_rate,
        &[table.entities.len(), table.relations.len()],
    );
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        positives.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in positives.chunks(cfg.batch_size) {
            let batch: Vec<TripleSample> = chunk
                .iter()
                .map(|&(head, relation, tail)| TripleSample {
                    head,
                    relation,
                    tail,
                    negatives: sample_negatives(kg, relation, cfg.negatives, &mut rng),
                })
                .collect();
            let (loss, grad) = table.loss_and_gradient(&batch);
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    message: format!("embedding loss is {loss}"),
                });
            }
            total += loss * chunk.len() as f64;
            opt.begin_step();
            opt.update(0, &mut table.entities, &grad.entities);
            opt.update(1, &mut table.relations, &grad.relations);
        }
        let mean = if positives.is_empty() {
            0.0
        } else {
            total / positives.len() as f64
        };
        if !mean.is_finite() || !table.is_finite() {
            return Err(Error::Divergence {
                epoch,
                message: "non-finite embedding parameters".into(),
            });
        }
        epoch_losses.push(mean);
    }
    table.round_to_f32();
    Ok(EmbedOutcome {
        table,
        epoch_losses,
    })
}

/// Compares the analytic loss gradient with central finite differences
/// (step 1e-5) on `probes` random coordinates touched by a sampled batch,
/// starting from the initial table of `cfg`. Returns the largest relative error.
pub fn grad_check_embeddings(kg: &KnowledgeGraph, cfg: &EmbedConfig, probes: usize) -> Result<f64> {
    let table = init_embeddings(kg, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut positives: Vec<_> = kg.forward_triples().collect();
    if positives.is_empty() {
        return Err(Error::Precondition("gradient check needs at least one triple".into()));
    }
    positives.shuffle(&mut rng);
    let batch: Vec<TripleSample> = positives
        .iter()
        .take(cfg.batch_size.min(32))
        .map(|&(head, r, tail)| {
            let relation = r.kind().expect("forward");
            TripleSample {
                head,
                relation,
                tail,
                negatives: sample_negatives(kg, relation, cfg.negatives, &mut rng),
            }
        })
        .collect();
    let (_, grad) = table.loss_and_gradient(&batch);

    let d = table.dim;
    let mut coords: Vec<(bool, usize)> = Vec::new();
    for s in &batch {
        for e in std::iter::once(s.head).chain(std::iter::once(s.tail)).chain(s.negatives.iter().copied()) {
            let row = table.row_of(e);
            coords.extend((0..d).map(|i| (true, row * d + i)));
        }
        coords.extend((0..d).map(|i| (false, s.relation.slot() * d + i)));
    }
    const STEP: f64 = 1e-5;
    let mut worst: f64 = 0.0;
    let mut probe_table = table.clone();
    for _ in 0..probes {
        let (is_entity, idx) = coords[rng.random_range(0..coords.len())];
        let original = *probe_table.param_mut(is_entity, idx);
        *probe_table.param_mut(is_entity, idx) = original + STEP;
        let (plus, _) = probe_table.loss_and_gradient(&batch);
        *probe_table.param_mut(is_entity, idx) = original - STEP;
        let (minus, _) = probe_table.loss_and_gradient(&batch);
        *probe_table.param_mut(is_entity, idx) = original;
        let numeric = (plus - minus) / (2.0 * STEP);
        let analytic = if is_entity {
            grad.entities[idx]
        } else {
            grad.relations[idx]
        };
        worst = worst.max(relative_error(analytic, numeric));
    }
    Ok(worst)
}

pub(crate) fn relative_error(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff == 0.0 {
        0.0
    } else {
        diff / a.abs().max(b.abs()).max(1e-8)
    }
}
