use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{action_logit, softmax, write_state_features, AgentConfig, PolicyNet};
use crate::embed::EmbeddingTable;
use crate::env::{initial_state, Path, PathEnv, RewardSpec};
use crate::error::{Error, Result};
use crate::kg::{Edge, EntityRef, EnrollmentSplit, KnowledgeGraph};
use crate::optim::Optimizer;

/// One decision: the state features, the candidates offered and the pick.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub features: Vec<f64>,
    pub actions: Vec<Edge>,
    pub chosen: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub path: Path,
    pub steps: Vec<StepRecord>,
    pub log_probs: Vec<f64>,
    pub reward: f64,
}

impl Episode {
    /// Discounted return seen from every step; the reward arrives at the end only.
    pub fn returns(&self, gamma: f64) -> Vec<f64> {
        let t = self.steps.len();
        (0..t)
            .map(|i| gamma.powi((t - 1 - i) as i32) * self.reward)
            .collect()
    }
}

fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Rolls one episode per learner in lockstep, sampling every step from the policy.
pub fn rollout<R: Rng>(
    net: &PolicyNet,
    env: &PathEnv<'_>,
    spec: &RewardSpec<'_>,
    learners: &[EntityRef],
    budget: usize,
    rng: &mut R,
) -> Result<Vec<Episode>> {
    let emb = env.embeddings();
    let mut states = learners
        .iter()
        .map(|&l| initial_state(env.kg(), l, budget))
        .collect::<Result<Vec<_>>>()?;
    let mut episodes: Vec<Episode> = learners
        .iter()
        .map(|&l| Episode {
            path: Path::new(l),
            steps: Vec::with_capacity(budget),
            log_probs: Vec::with_capacity(budget),
            reward: 0.0,
        })
        .collect();
    let mut x = Array2::zeros((learners.len(), net.input_len()));
    let mut scratch = vec![0.0; emb.dim()];
    for _ in 0..budget {
        for (mut row, state) in x.axis_iter_mut(Axis(0)).zip(&states) {
            write_state_features(state, emb, net.history(), row.as_slice_mut().unwrap());
        }
        let act = net.forward_batch(x.view());
        for (i, state) in states.iter_mut().enumerate() {
            let actions = env.available_actions(state);
            let query = act.query.row(i);
            let query = query.as_slice().unwrap();
            let logits: Vec<f64> = actions
                .iter()
                .map(|&a| action_logit(query, emb, a, &mut scratch))
                .collect();
            let (probs, log_probs) = softmax(&logits);
            let chosen = sample_index(&probs, rng);
            *state = env.step(state, actions[chosen])?;
            let ep = &mut episodes[i];
            ep.log_probs.push(log_probs[chosen]);
            ep.steps.push(StepRecord {
                features: x.row(i).to_vec(),
                actions,
                chosen,
            });
        }
    }
    for (ep, state) in episodes.iter_mut().zip(states) {
        ep.reward = spec.reward(&state.path)?;
        ep.path = state.path;
    }
    Ok(episodes)
}

pub fn sample_episode<R: Rng>(
    learner: EntityRef,
    env: &PathEnv<'_>,
    net: &PolicyNet,
    spec: &RewardSpec<'_>,
    budget: usize,
    rng: &mut R,
) -> Result<Episode> {
    Ok(rollout(net, env, spec, &[learner], budget, rng)?.remove(0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    pub loss: f64,
    pub mean_reward: f64,
    pub mean_entropy: f64,
}

/// One policy-gradient step with a learned value baseline and entropy bonus.
pub fn reinforce_update(
    net: &mut PolicyNet,
    opt: &mut Optimizer,
    emb: &EmbeddingTable,
    episodes: &[Episode],
    cfg: &AgentConfig,
    epoch: usize,
) -> Result<UpdateStats> {
    if episodes.is_empty() {
        return Err(Error::Precondition("empty episode batch".into()));
    }
    let mut steps = Vec::new();
    let mut returns = Vec::new();
    for ep in episodes {
        steps.extend(ep.steps.iter().cloned());
        returns.extend(ep.returns(cfg.gamma));
    }
    let (loss, grad, mean_entropy) =
        net.loss_and_gradient(emb, &steps, &returns, episodes.len(), cfg.entropy_weight, None);
    if !loss.is_finite() || !grad.is_finite() {
        return Err(Error::Divergence {
            epoch,
            message: "non-finite policy gradient".into(),
        });
    }
    opt.begin_step();
    for (slot, (param, g)) in net.tensors_mut().into_iter().zip(grad.tensors()).enumerate() {
        opt.update(slot, param, g);
    }
    let mean_reward = episodes.iter().map(|e| e.reward).sum::<f64>() / episodes.len() as f64;
    Ok(UpdateStats {
        loss,
        mean_reward,
        mean_entropy,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_reward: f64,
    pub mean_entropy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_reward,mean_entropy\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{}\n", e.epoch, e.mean_reward, e.mean_entropy));
        }
        out
    }
}

/// Trains the policy on the training graph. Epochs run over every learner
/// with training enrollments, `episodes_per_learner` times, in a seeded
/// shuffled order, with one update per `batch_size` episodes.
pub fn train_agent(
    kg_train: &KnowledgeGraph,
    split: &EnrollmentSplit,
    emb: &EmbeddingTable,
    cfg: &AgentConfig,
    spec: &RewardSpec<'_>,
) -> Result<(PolicyNet, TrainLog)> {
    cfg.validate()?;
    spec.validate()?;
    let env = PathEnv::new(kg_train, emb, cfg.max_actions)?;
    let mut net = PolicyNet::new(emb.dim(), cfg.history, cfg.hidden, cfg.seed);
    let sizes: Vec<usize> = net.tensors().iter().map(|t| t.len()).collect();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let learners: Vec<EntityRef> = kg_train
        .learners()
        .filter(|&l| (l.index as usize) < split.num_learners() && !split.train_of(l).is_empty())
        .collect();
    let budget = cfg.train_budget();
    let mut log = TrainLog::default();
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<EntityRef> = learners
            .iter()
            .flat_map(|&l| std::iter::repeat_n(l, cfg.episodes_per_learner))
            .collect();
        order.shuffle(&mut rng);
        let (mut reward_sum, mut entropy_sum, mut n_steps) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let episodes = rollout(&net, &env, spec, chunk, budget, &mut rng)?;
            let stats = reinforce_update(&mut net, &mut opt, emb, &episodes, cfg, epoch)?;
            reward_sum += stats.mean_reward * episodes.len() as f64;
            let steps: usize = episodes.iter().map(|e| e.steps.len()).sum();
            entropy_sum += stats.mean_entropy * steps as f64;
            n_steps += steps;
        }
        log.epochs.push(EpochStats {
            epoch,
            mean_reward: if order.is_empty() { 0.0 } else { reward_sum / order.len() as f64 },
            mean_entropy: if n_steps == 0 { 0.0 } else { entropy_sum / n_steps as f64 },
        });
    }
    net.round_to_f32();
    Ok((net, log))
}
