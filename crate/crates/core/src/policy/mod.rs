//! Stochastic path-finding policy.
//!
//! A two-layer network maps the state features to a hidden code `h`; the
//! actor head projects `h` to a query `q` in the action-embedding space and
//! every candidate action `(r, t)` is scored by `q . [v_r ; v_t]`. A scalar
//! value head on `h` serves as the REINFORCE baseline.

mod train;

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, ConfigEcho};
use crate::embed::{dot, EmbeddingTable};
use crate::env::EnvState;
use crate::error::{Error, Result};
use crate::kg::{Edge, Relation};
use crate::optim::OptimizerKind;

pub use train::{
    reinforce_update, rollout, sample_episode, train_agent, EpochStats, Episode, StepRecord,
    TrainLog, UpdateStats,
};

pub const POL_MAGIC: &str = "UPGPR-POL v1";

#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    /// Hop budget used at evaluation time.
    pub max_hops: usize,
    /// Allow one extra hop while training.
    pub train_extra_hop: bool,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub episodes_per_learner: usize,
    pub entropy_weight: f64,
    pub gamma: f64,
    pub hidden: usize,
    pub history: usize,
    pub batch_size: usize,
    pub max_actions: usize,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            max_hops: 3,
            train_extra_hop: true,
            epochs: 50,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            episodes_per_learner: 2,
            entropy_weight: 0.01,
            gamma: 1.0,
            hidden: 512,
            history: 1,
            batch_size: 512,
            max_actions: crate::env::DEFAULT_MAX_ACTIONS,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn train_budget(&self) -> usize {
        self.max_hops + usize::from(self.train_extra_hop)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("max_hops", self.max_hops),
            ("episodes_per_learner", self.episodes_per_learner),
            ("hidden", self.hidden),
            ("batch_size", self.batch_size),
            ("max_actions", self.max_actions),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("agent.{name} must be positive")));
            }
        }
        if !(self.learning_rate >= 0.0) || !(self.entropy_weight >= 0.0) {
            return Err(Error::Config("agent rates must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config("agent.gamma must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn echo(&self) -> ConfigEcho {
        [
            ("agent.max_hops", self.max_hops.to_string()),
            ("agent.train_extra_hop", self.train_extra_hop.to_string()),
            ("agent.epochs", self.epochs.to_string()),
            ("agent.learning_rate", self.learning_rate.to_string()),
            ("agent.optimizer", self.optimizer.to_string()),
            ("agent.episodes_per_learner", self.episodes_per_learner.to_string()),
            ("agent.entropy_weight", self.entropy_weight.to_string()),
            ("agent.gamma", self.gamma.to_string()),
            ("agent.hidden", self.hidden.to_string()),
            ("agent.history", self.history.to_string()),
            ("agent.batch_size", self.batch_size.to_string()),
            ("agent.max_actions", self.max_actions.to_string()),
            ("agent.seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    dim: usize,
    history: usize,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub wv: Array1<f64>,
    pub bv: Array1<f64>,
}

/// Gradient with the same shapes as [`PolicyNet`]'s tensors.
#[derive(Clone, Debug)]
pub struct PolicyGrad {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub wv: Array1<f64>,
    pub bv: Array1<f64>,
}

/// Forward activations for a batch of states.
pub(crate) struct Activations {
    pub hidden: Array2<f64>,
    pub query: Array2<f64>,
    pub value: Array1<f64>,
}

pub fn feature_len(dim: usize, history: usize) -> usize {
    3 * dim + 2 * dim * history
}

/// `[v_start ; v_current ; v_start - v_current ; (v_rel ; v_entity) per recent hop]`,
/// most recent hop first, zero-padded; self-loop hops contribute zeros.
pub fn state_features(state: &EnvState, emb: &EmbeddingTable, history: usize) -> Vec<f64> {
    let mut out = vec![0.0; feature_len(emb.dim(), history)];
    write_state_features(state, emb, history, &mut out);
    out
}

pub(crate) fn write_state_features(state: &EnvState, emb: &EmbeddingTable, history: usize, out: &mut [f64]) {
    let d = emb.dim();
    let start = emb.entity(state.start());
    let current = emb.entity(state.current());
    out[..d].copy_from_slice(start);
    out[d..2 * d].copy_from_slice(current);
    for i in 0..d {
        out[2 * d + i] = start[i] - current[i];
    }
    out[3 * d..].fill(0.0);
    for (slot, &(rel, entity)) in state.history(history).iter().rev().enumerate() {
        if rel.is_self_loop() {
            continue;
        }
        let base = 3 * d + slot * 2 * d;
        emb.signed_relation_into(rel, &mut out[base..base + d]);
        out[base + d..base + 2 * d].copy_from_slice(emb.entity(entity));
    }
}

/// Logit of one candidate given the actor query: `q[..d] . v_r + q[d..] . v_t`,
/// where the self loop uses a zero relation vector and the current entity.
pub(crate) fn action_logit(query: &[f64], emb: &EmbeddingTable, action: Edge, scratch: &mut [f64]) -> f64 {
    let d = emb.dim();
    let (rel, tail) = action;
    let tail_part = dot(&query[d..], emb.entity(tail));
    if rel.is_self_loop() {
        tail_part
    } else {
        emb.signed_relation_into(rel, scratch);
        dot(&query[..d], scratch) + tail_part
    }
}

/// Adds `coeff * [v_r ; v_t]` to `out`.
fn add_action_embedding(out: &mut [f64], emb: &EmbeddingTable, action: Edge, coeff: f64, scratch: &mut [f64]) {
    let d = emb.dim();
    let (rel, tail) = action;
    if !matches!(rel, Relation::SelfLoop) {
        emb.signed_relation_into(rel, scratch);
        for i in 0..d {
            out[i] += coeff * scratch[i];
        }
    }
    for (o, v) in out[d..].iter_mut().zip(emb.entity(tail)) {
        *o += coeff * v;
    }
}

/// Numerically stable softmax, returning probabilities and log-probabilities.
pub fn softmax(logits: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let log_z = max + sum.ln();
    let log_probs: Vec<f64> = logits.iter().map(|l| l - log_z).collect();
    (log_probs.iter().map(|l| l.exp()).collect(), log_probs)
}

impl PolicyNet {
    /// Xavier-uniform weights, zero biases.
    pub fn new(dim: usize, history: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = feature_len(dim, history);
        let mut xavier = |rows: usize, cols: usize| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound))
        };
        let w1 = xavier(hidden, input);
        let w2 = xavier(2 * dim, hidden);
        let wv = xavier(1, hidden).remove_axis(Axis(0));
        let mut net = PolicyNet {
            dim,
            history,
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(2 * dim),
            wv,
            bv: Array1::zeros(1),
        };
        net.round_to_f32();
        net
    }

    pub fn zeros(dim: usize, history: usize, hidden: usize) -> Self {
        PolicyNet {
            dim,
            history,
            w1: Array2::zeros((hidden, feature_len(dim, history))),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((2 * dim, hidden)),
            b2: Array1::zeros(2 * dim),
            wv: Array1::zeros(hidden),
            bv: Array1::zeros(1),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn history(&self) -> usize {
        self.history
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn input_len(&self) -> usize {
        feature_len(self.dim, self.history)
    }

    pub(crate) fn forward_batch(&self, x: ArrayView2<f64>) -> Activations {
        let mut hidden = x.dot(&self.w1.t());
        hidden += &self.b1;
        hidden.mapv_inplace(f64::tanh);
        let mut query = hidden.dot(&self.w2.t());
        query += &self.b2;
        let value = hidden.dot(&self.wv) + self.bv[0];
        Activations {
            hidden,
            query,
            value,
        }
    }

    /// Action distribution for one state. Returns probabilities in the order of `actions`.
    pub fn action_probs(&self, features: &[f64], actions: &[Edge], emb: &EmbeddingTable) -> Vec<f64> {
        let x = ArrayView2::from_shape((1, features.len()), features).expect("feature row");
        let act = self.forward_batch(x);
        let query = act.query.row(0);
        let query = query.as_slice().expect("contiguous");
        let mut scratch = vec![0.0; self.dim];
        let logits: Vec<f64> = actions
            .iter()
            .map(|&a| action_logit(query, emb, a, &mut scratch))
            .collect();
        softmax(&logits).0
    }

    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
            self.w2.as_slice().unwrap(),
            self.b2.as_slice().unwrap(),
            self.wv.as_slice().unwrap(),
            self.bv.as_slice().unwrap(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
            self.wv.as_slice_mut().unwrap(),
            self.bv.as_slice_mut().unwrap(),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            checkpoint::round_f32(t);
        }
    }

    /// Surrogate loss over recorded steps and its gradient:
    ///
    /// `(1/E) sum_t [ -A_t log pi(a_t|s_t) - beta H(pi(.|s_t)) + 0.5 (b(s_t) - G_t)^2 ]`
    ///
    /// where `E = n_episodes`, `G_t` the return and `A_t = G_t - b(s_t)` held
    /// constant. `advantages` overrides `A_t` when given.
    pub fn loss_and_gradient(
        &self,
        emb: &EmbeddingTable,
        steps: &[StepRecord],
        returns: &[f64],
        n_episodes: usize,
        entropy_weight: f64,
        advantages: Option<&[f64]>,
    ) -> (f64, PolicyGrad, f64) {
        let n = steps.len();
        let d = self.dim;
        let input = self.input_len();
        let mut x = Array2::zeros((n, input));
        for (mut row, s) in x.axis_iter_mut(Axis(0)).zip(steps) {
            row.as_slice_mut().unwrap().copy_from_slice(&s.features);
        }
        let act = self.forward_batch(x.view());
        let scale = 1.0 / n_episodes.max(1) as f64;

        let mut d_query = Array2::<f64>::zeros((n, 2 * d));
        let mut d_value = Array1::<f64>::zeros(n);
        let mut scratch = vec![0.0; d];
        let mut loss = 0.0;
        let mut entropy_sum = 0.0;
        for (i, s) in steps.iter().enumerate() {
            let query = act.query.row(i);
            let query = query.as_slice().unwrap();
            let logits: Vec<f64> = s
                .actions
                .iter()
                .map(|&a| action_logit(query, emb, a, &mut scratch))
                .collect();
            let (probs, log_probs) = softmax(&logits);
            let entropy: f64 = -probs.iter().zip(&log_probs).map(|(p, l)| p * l).sum::<f64>();
            let value = act.value[i];
            let ret = returns[i];
            let adv = advantages.map_or(ret - value, |a| a[i]);
            loss += scale
                * (-adv * log_probs[s.chosen] - entropy_weight * entropy
                    + 0.5 * (value - ret) * (value - ret));
            entropy_sum += entropy;

            let mut dq = d_query.row_mut(i);
            let dq = dq.as_slice_mut().unwrap();
            for (j, &a) in s.actions.iter().enumerate() {
                let onehot = if j == s.chosen { 1.0 } else { 0.0 };
                let dz = scale
                    * (-adv * (onehot - probs[j])
                        + entropy_weight * probs[j] * (log_probs[j] + entropy));
                if dz != 0.0 {
                    add_action_embedding(dq, emb, a, dz, &mut scratch);
                }
            }
            d_value[i] = scale * (value - ret);
        }

        let w2 = d_query.t().dot(&act.hidden);
        let b2 = d_query.sum_axis(Axis(0));
        let wv = act.hidden.t().dot(&d_value);
        let bv = Array1::from_elem(1, d_value.sum());
        let mut d_hidden = d_query.dot(&self.w2);
        for (mut row, &dv) in d_hidden.axis_iter_mut(Axis(0)).zip(d_value.iter()) {
            row.scaled_add(dv, &self.wv);
        }
        d_hidden.zip_mut_with(&act.hidden, |g, &h| *g *= 1.0 - h * h);
        let w1 = d_hidden.t().dot(&x);
        let b1 = d_hidden.sum_axis(Axis(0));
        let mean_entropy = if n == 0 { 0.0 } else { entropy_sum / n as f64 };
        (loss, PolicyGrad { w1, b1, w2, b2, wv, bv }, mean_entropy)
    }

    pub fn write_to<W: Write>(&self, w: &mut W, echo: &ConfigEcho) -> Result<()> {
        let mut echo = echo.clone();
        echo.insert("policy.dim".into(), self.dim.to_string());
        echo.insert("policy.history".into(), self.history.to_string());
        echo.insert("policy.hidden".into(), self.hidden().to_string());
        checkpoint::write_header(w, POL_MAGIC, &echo)?;
        for t in self.tensors() {
            checkpoint::write_u32(w, t.len() as u32)?;
            checkpoint::write_f32s(w, t)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<(Self, ConfigEcho)> {
        let echo = checkpoint::read_header(r, POL_MAGIC)?;
        let dim = checkpoint::echo_get(&echo, "policy.dim")?;
        let history = checkpoint::echo_get(&echo, "policy.history")?;
        let hidden = checkpoint::echo_get(&echo, "policy.hidden")?;
        let mut net = PolicyNet::zeros(dim, history, hidden);
        for t in net.tensors_mut() {
            let n = checkpoint::read_u32(r)? as usize;
            if n != t.len() {
                return Err(Error::Format(format!(
                    "tensor of {n} values where {} expected",
                    t.len()
                )));
            }
            t.copy_from_slice(&checkpoint::read_f32s(r, n)?);
        }
        checkpoint::expect_eof(r)?;
        Ok((net, echo))
    }
}

impl PolicyGrad {
    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
            self.w2.as_slice().unwrap(),
            self.b2.as_slice().unwrap(),
            self.wv.as_slice().unwrap(),
            self.bv.as_slice().unwrap(),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Central finite-difference check of [`PolicyNet::loss_and_gradient`] with
/// the advantages frozen at their value for `net`. Returns the largest
/// relative error over `probes` random parameter coordinates.
pub fn grad_check_policy(
    net: &PolicyNet,
    emb: &EmbeddingTable,
    steps: &[StepRecord],
    returns: &[f64],
    n_episodes: usize,
    entropy_weight: f64,
    probes: usize,
    seed: u64,
) -> f64 {
    let x: Vec<f64> = steps.iter().flat_map(|s| s.features.iter().copied()).collect();
    let x = ArrayView2::from_shape((steps.len(), net.input_len()), &x).unwrap();
    let values = net.forward_batch(x).value;
    let advantages: Vec<f64> = returns.iter().zip(values.iter()).map(|(r, v)| r - v).collect();
    let (_, grad, _) = net.loss_and_gradient(emb, steps, returns, n_episodes, entropy_weight, Some(&advantages));

    const STEP: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes: Vec<usize> = net.tensors().iter().map(|t| t.len()).collect();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let tensor = rng.random_range(0..sizes.len());
        let idx = rng.random_range(0..sizes[tensor]);
        let original = probe.tensors()[tensor][idx];
        let mut eval = |value: f64| {
            probe.tensors_mut()[tensor][idx] = value;
            probe
                .loss_and_gradient(emb, steps, returns, n_episodes, entropy_weight, Some(&advantages))
                .0
        };
        let numeric = (eval(original + STEP) - eval(original - STEP)) / (2.0 * STEP);
        probe.tensors_mut()[tensor][idx] = original;
        let analytic = grad.tensors()[tensor][idx];
        worst = worst.max(crate::embed::relative_error(analytic, numeric));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{init_embeddings, EmbedConfig};
    use crate::env::{initial_state, PathEnv};
    use crate::kg::{EntityRef, KgBuilder, KnowledgeGraph, RelationKind};

    fn fixture(dim: usize) -> (KnowledgeGraph, EmbeddingTable) {
        let mut b = KgBuilder::new();
        for (u, c) in [("u1", "c1"), ("u1", "c2"), ("u2", "c1"), ("u2", "c3"), ("u3", "c3")] {
            b.add(RelationKind::Enrolled, u, c);
        }
        b.add(RelationKind::Teaches, "t1", "c1");
        b.add(RelationKind::Teaches, "t1", "c3");
        b.add(RelationKind::BelongsTo, "c2", "k");
        let kg = b.build();
        let emb = init_embeddings(&kg, &EmbedConfig { dim, ..Default::default() }).unwrap();
        (kg, emb)
    }

    #[test]
    fn feature_layout() {
        let (kg, emb) = fixture(2);
        let s = initial_state(&kg, EntityRef::learner(0), 3).unwrap();
        let f = state_features(&s, &emb, 1);
        assert_eq!(f.len(), 10);
        let v = emb.entity(EntityRef::learner(0));
        assert_eq!(&f[0..2], v);
        assert_eq!(&f[2..4], v);
        assert!(f[4..].iter().all(|&x| x == 0.0));

        let env = PathEnv::new(&kg, &emb, 250).unwrap();
        let c1 = EntityRef::course(0);
        let s1 = env.step(&s, (Relation::Forward(RelationKind::Enrolled), c1)).unwrap();
        let f1 = state_features(&s1, &emb, 1);
        assert_eq!(f1.len(), 3 * 2 + 2 * 2);
        assert_eq!(&f1[6..8], emb.relation(RelationKind::Enrolled));
        assert_eq!(&f1[8..10], emb.entity(c1));
        assert_eq!(f1, state_features(&s1, &emb, 1));

        let s2 = env.step(&s1, (Relation::SelfLoop, c1)).unwrap();
        assert!(state_features(&s2, &emb, 1)[6..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn probabilities_are_distributions() {
        let (kg, emb) = fixture(3);
        let env = PathEnv::new(&kg, &emb, 250).unwrap();
        let net = PolicyNet::new(3, 1, 16, 4);
        let s = initial_state(&kg, EntityRef::learner(0), 3).unwrap();
        let s = env.step(&s, env.available_actions(&s)[1]).unwrap();
        let actions = env.available_actions(&s);
        let p = net.action_probs(&state_features(&s, &emb, 1), &actions, &emb);
        assert_eq!(p.len(), actions.len());
        assert!(p.iter().all(|&x| x >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(net.action_probs(&state_features(&s, &emb, 1), &actions[..1], &emb), vec![1.0]);

        let zero = PolicyNet::zeros(3, 1, 16);
        let u = zero.action_probs(&state_features(&s, &emb, 1), &actions, &emb);
        for &x in &u {
            assert!((x - 1.0 / actions.len() as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let (a, _) = softmax(&[0.3, -1.2, 2.0]);
        let (b, _) = softmax(&[100.3, 98.8, 102.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = PolicyNet::new(3, 1, 8, 9);
        let echo = AgentConfig::default().echo();
        let mut bytes = Vec::new();
        net.write_to(&mut bytes, &echo).unwrap();
        assert!(bytes.starts_with(b"UPGPR-POL v1\n"));
        let (back, echo_back) = PolicyNet::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, net);
        assert_eq!(echo_back["agent.hidden"], "512");
        let mut again = Vec::new();
        back.write_to(&mut again, &echo).unwrap();
        assert_eq!(again, bytes);
    }
}
