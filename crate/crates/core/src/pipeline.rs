//! End-to-end experiment: one fixed split, then embeddings, agents and
//! baselines per seed, aggregated into comparison rows.

use crate::baselines::{mf_baseline, pop_baseline, MfConfig};
use crate::beam::{recommend_all, InferenceConfig, RecommendationList, DEFAULT_TOP_N};
use crate::embed::{train_embeddings, EmbedConfig, EmbeddingTable};
use crate::env::{PathEnv, PatternWhitelist, RewardMode, RewardSpec};
use crate::error::Result;
use crate::kg::{split_enrollments, EnrollmentSplit, EntityRef, EntityType, KnowledgeGraph, RelationKind, SplitRatios};
use crate::metrics::{evaluate, evaluate_rankings, MetricsReport, RunMetrics, SeedRun, DEFAULT_K};
use crate::patterns::schema_patterns;
use crate::policy::{train_agent, AgentConfig, PolicyNet, TrainLog};

pub const MIN_ENROLLMENTS: usize = 10;

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub min_enrollments: usize,
    pub split_ratios: SplitRatios,
    pub split_seed: u64,
    pub seeds: Vec<u64>,
    pub embed: EmbedConfig,
    pub agent: AgentConfig,
    pub path_lengths: Vec<usize>,
    /// Used for every path length it fits; defaults otherwise.
    pub beam_widths: Option<Vec<usize>>,
    pub top_n: usize,
    pub k: usize,
    pub reward_mode: RewardMode,
    pub whitelist: Option<PatternWhitelist>,
    pub dot_tiebreak: bool,
    pub mf: MfConfig,
    pub baselines: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            min_enrollments: MIN_ENROLLMENTS,
            split_ratios: SplitRatios::default(),
            split_seed: 0,
            seeds: vec![0, 1, 2],
            embed: EmbedConfig::default(),
            agent: AgentConfig::default(),
            path_lengths: vec![3],
            beam_widths: None,
            top_n: DEFAULT_TOP_N,
            k: DEFAULT_K,
            reward_mode: RewardMode::Binary,
            whitelist: None,
            dot_tiebreak: false,
            mf: MfConfig::default(),
            baselines: true,
        }
    }
}

impl ExperimentConfig {
    pub fn inference(&self, max_hops: usize) -> InferenceConfig {
        let mut inf = InferenceConfig::new(max_hops);
        if let Some(w) = self.beam_widths.as_ref().filter(|w| w.len() == max_hops) {
            inf.widths = w.clone();
        }
        inf.top_n = self.top_n;
        inf.dot_tiebreak = self.dot_tiebreak;
        inf
    }
}

/// All schema patterns of `length` hops over the relations present in `kg`.
pub fn default_whitelist(kg: &KnowledgeGraph, length: usize) -> PatternWhitelist {
    let kinds: Vec<RelationKind> = RelationKind::ALL
        .into_iter()
        .filter(|&k| !kg.forward_edges(k).is_empty())
        .collect();
    PatternWhitelist::from_patterns(schema_patterns(&kinds, length).into_iter().map(|p| p.relations))
}

/// Reward configuration for one agent run.
pub fn reward_spec<'a>(
    mode: RewardMode,
    split: &'a EnrollmentSplit,
    whitelist: Option<&PatternWhitelist>,
    kg_train: &KnowledgeGraph,
    emb: &'a EmbeddingTable,
) -> RewardSpec<'a> {
    match mode {
        RewardMode::Binary => RewardSpec::binary(split),
        RewardMode::Pgpr => {
            let wl = whitelist.cloned().unwrap_or_else(|| default_whitelist(kg_train, 3));
            RewardSpec::pgpr(split, Some(wl), Some(emb))
        }
    }
}

/// Learners with at least one test enrollment.
pub fn test_learners(split: &EnrollmentSplit) -> Vec<EntityRef> {
    (0..split.num_learners() as u32)
        .map(EntityRef::learner)
        .filter(|&l| !split.test_of(l).is_empty())
        .collect()
}

#[derive(Clone, Debug)]
pub struct PathRun {
    pub seed: u64,
    pub max_hops: usize,
    pub policy: PolicyNet,
    pub log: TrainLog,
    pub lists: Vec<RecommendationList>,
    pub metrics: RunMetrics,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub kg: KnowledgeGraph,
    pub split: EnrollmentSplit,
    pub reports: Vec<MetricsReport>,
    pub path_runs: Vec<PathRun>,
}

fn model_name(mode: RewardMode) -> &'static str {
    match mode {
        RewardMode::Binary => "UPGPR",
        RewardMode::Pgpr => "PGPR",
    }
}

/// Trains and evaluates everything for every seed. `progress` receives one
/// line per finished stage.
pub fn run_experiment(
    kg: &KnowledgeGraph,
    cfg: &ExperimentConfig,
    mut progress: impl FnMut(&str),
) -> Result<ExperimentOutcome> {
    let kg = kg.filter_learners(cfg.min_enrollments);
    let split = split_enrollments(&kg, cfg.split_ratios, cfg.split_seed)?;
    let kg_train = kg.with_train_enrollments(&split)?;
    let learners = test_learners(&split);
    let num_courses = kg.num_entities(EntityType::Course);
    let keep = |rankings: Vec<(EntityRef, Vec<u32>)>| -> Vec<(EntityRef, Vec<u32>)> {
        rankings.into_iter().filter(|(l, _)| !split.test_of(*l).is_empty()).collect()
    };

    let mut pop_runs = Vec::new();
    let mut mf_runs = Vec::new();
    let mut path_runs = Vec::new();
    for &seed in &cfg.seeds {
        if cfg.baselines {
            let pop = keep(pop_baseline(&split, num_courses, cfg.top_n)?);
            pop_runs.push(SeedRun { seed, metrics: evaluate_rankings(&pop, &split, cfg.k)? });
            let mf_cfg = MfConfig { seed, ..cfg.mf.clone() };
            let mf = keep(mf_baseline(&split, num_courses, &mf_cfg, cfg.top_n)?);
            mf_runs.push(SeedRun { seed, metrics: evaluate_rankings(&mf, &split, cfg.k)? });
        }
        let embed_cfg = EmbedConfig { seed, ..cfg.embed.clone() };
        let emb = train_embeddings(&kg_train, &embed_cfg)?.table;
        progress(&format!("seed {seed}: embeddings trained"));
        for &hops in &cfg.path_lengths {
            let agent_cfg = AgentConfig { max_hops: hops, seed, ..cfg.agent.clone() };
            let spec = reward_spec(cfg.reward_mode, &split, cfg.whitelist.as_ref(), &kg_train, &emb);
            let (policy, log) = train_agent(&kg_train, &split, &emb, &agent_cfg, &spec)?;
            let env = PathEnv::new(&kg_train, &emb, agent_cfg.max_actions)?;
            let (lists, _) = recommend_all(&learners, &policy, &env, &split, &cfg.inference(hops))?;
            let metrics = evaluate(&lists, &split, cfg.k)?;
            progress(&format!(
                "seed {seed}: {}@{hops} ndcg {:.2}, invalid {:.1}%",
                model_name(cfg.reward_mode),
                metrics.ndcg,
                metrics.invalid_fraction
            ));
            path_runs.push(PathRun { seed, max_hops: hops, policy, log, lists, metrics });
        }
    }

    let mut reports = Vec::new();
    if cfg.baselines {
        reports.push(MetricsReport::new("Pop", "Popularity", None, pop_runs));
        reports.push(MetricsReport::new("MF", "Collaborative Filtering", None, mf_runs));
    }
    for &hops in &cfg.path_lengths {
        let runs = path_runs
            .iter()
            .filter(|r| r.max_hops == hops)
            .map(|r| SeedRun { seed: r.seed, metrics: r.metrics })
            .collect();
        reports.push(MetricsReport::new(model_name(cfg.reward_mode), "Path-Based", Some(hops), runs));
    }
    Ok(ExperimentOutcome { kg, split, reports, path_runs })
}
