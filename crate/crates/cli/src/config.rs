//! Flat `section.key = value` run configuration.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use upgpr::baselines::MfConfig;
use upgpr::beam::{InferenceConfig, DEFAULT_TOP_N};
use upgpr::checkpoint::ConfigEcho;
use upgpr::embed::EmbedConfig;
use upgpr::env::{PatternWhitelist, RewardMode};
use upgpr::kg::SplitRatios;
use upgpr::metrics::DEFAULT_K;
use upgpr::pipeline::{ExperimentConfig, MIN_ENROLLMENTS};
use upgpr::policy::AgentConfig;
use upgpr::synth::SynthConfig;
use upgpr::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn defaults() -> BTreeMap<String, String> {
    let synth = SynthConfig::default();
    let mf = MfConfig::default();
    let mut map: BTreeMap<String, String> = [
        ("data.dir", "data".to_string()),
        ("data.min_enrollments", MIN_ENROLLMENTS.to_string()),
        ("output.dir", "out".to_string()),
        ("split.ratios", "0.8,0.1,0.1".to_string()),
        ("split.seed", "0".to_string()),
        ("beam.widths", String::new()),
        ("beam.top_n", DEFAULT_TOP_N.to_string()),
        ("beam.dot_tiebreak", "false".to_string()),
        ("eval.k", DEFAULT_K.to_string()),
        ("reward.mode", RewardMode::Binary.to_string()),
        ("reward.whitelist", String::new()),
        ("mf.factors", mf.factors.to_string()),
        ("mf.epochs", mf.epochs.to_string()),
        ("mf.learning_rate", mf.learning_rate.to_string()),
        ("mf.regularization", mf.regularization.to_string()),
        ("run.seeds", "0,1,2".to_string()),
        ("run.path_lengths", "3".to_string()),
        ("synth.n_learners", synth.n_learners.to_string()),
        ("synth.n_courses", synth.n_courses.to_string()),
        ("synth.n_teachers", synth.n_teachers.to_string()),
        ("synth.n_categories", synth.n_categories.to_string()),
        ("synth.n_concepts", synth.n_concepts.to_string()),
        ("synth.n_clusters", synth.n_clusters.to_string()),
        ("synth.in_cluster_enroll_prob", synth.in_cluster_enroll_prob.to_string()),
        ("synth.cross_cluster_enroll_prob", synth.cross_cluster_enroll_prob.to_string()),
        ("synth.enrollments_per_learner", synth.enrollments_per_learner.to_string()),
        ("synth.seed", synth.seed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    map.extend(EmbedConfig::default().echo());
    map.extend(AgentConfig::default().echo());
    map
}

fn parse_list<T: FromStr>(key: &str, text: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {s:?}")))
        })
        .collect()
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { values: defaults() }
    }
}

impl RunConfig {
    /// Parses `key = value` lines; `[section]` headers prefix the keys that
    /// follow them. `#` and `;` start comments.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let key = key.trim();
            let key = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
            cfg.set(&key, value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, strip(&e))))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key {key:?}"))),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        &self.values[key]
    }

    fn parse_value<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
    }

    fn path(&self, key: &str) -> PathBuf {
        PathBuf::from(self.get(key))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.path("data.dir")
    }

    pub fn output_dir(&self) -> PathBuf {
        self.path("output.dir")
    }

    pub fn min_enrollments(&self) -> Result<usize> {
        self.parse_value("data.min_enrollments")
    }

    pub fn split_ratios(&self) -> Result<SplitRatios> {
        let r: Vec<f64> = parse_list("split.ratios", self.get("split.ratios"))?;
        let [train, validation, test] = r[..] else {
            return Err(Error::Config("split.ratios needs three values".into()));
        };
        let ratios = SplitRatios { train, validation, test };
        ratios.validate()?;
        Ok(ratios)
    }

    pub fn split_seed(&self) -> Result<u64> {
        self.parse_value("split.seed")
    }

    pub fn embed(&self) -> Result<EmbedConfig> {
        let cfg = EmbedConfig {
            dim: self.parse_value("embed.dim")?,
            learning_rate: self.parse_value("embed.learning_rate")?,
            epochs: self.parse_value("embed.epochs")?,
            negatives: self.parse_value("embed.negatives")?,
            batch_size: self.parse_value("embed.batch_size")?,
            seed: self.parse_value("embed.seed")?,
            optimizer: self.parse_value("embed.optimizer")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn agent(&self) -> Result<AgentConfig> {
        let cfg = AgentConfig {
            max_hops: self.parse_value("agent.max_hops")?,
            train_extra_hop: self.parse_value("agent.train_extra_hop")?,
            epochs: self.parse_value("agent.epochs")?,
            learning_rate: self.parse_value("agent.learning_rate")?,
            optimizer: self.parse_value("agent.optimizer")?,
            episodes_per_learner: self.parse_value("agent.episodes_per_learner")?,
            entropy_weight: self.parse_value("agent.entropy_weight")?,
            gamma: self.parse_value("agent.gamma")?,
            hidden: self.parse_value("agent.hidden")?,
            history: self.parse_value("agent.history")?,
            batch_size: self.parse_value("agent.batch_size")?,
            max_actions: self.parse_value("agent.max_actions")?,
            seed: self.parse_value("agent.seed")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn reward_mode(&self) -> Result<RewardMode> {
        self.parse_value("reward.mode")
    }

    pub fn whitelist(&self) -> Result<Option<PatternWhitelist>> {
        let path = self.get("reward.whitelist");
        if path.is_empty() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
        PatternWhitelist::parse(&text).map(Some)
    }

    /// Everything a policy checkpoint must agree with.
    pub fn policy_echo(&self) -> Result<ConfigEcho> {
        let mut echo = self.agent()?.echo();
        echo.extend(self.embed()?.echo());
        echo.insert("reward.mode".into(), self.reward_mode()?.to_string());
        Ok(echo)
    }

    pub fn beam_widths(&self) -> Result<Option<Vec<usize>>> {
        let w: Vec<usize> = parse_list("beam.widths", self.get("beam.widths"))?;
        Ok(if w.is_empty() { None } else { Some(w) })
    }

    pub fn inference(&self, max_hops: usize) -> Result<InferenceConfig> {
        let mut inf = InferenceConfig::new(max_hops);
        if let Some(w) = self.beam_widths()? {
            inf.widths = w;
        }
        inf.top_n = self.parse_value("beam.top_n")?;
        inf.dot_tiebreak = self.parse_value("beam.dot_tiebreak")?;
        Ok(inf)
    }

    pub fn k(&self) -> Result<usize> {
        self.parse_value("eval.k")
    }

    pub fn top_n(&self) -> Result<usize> {
        self.parse_value("beam.top_n")
    }

    pub fn mf(&self) -> Result<MfConfig> {
        Ok(MfConfig {
            factors: self.parse_value("mf.factors")?,
            epochs: self.parse_value("mf.epochs")?,
            learning_rate: self.parse_value("mf.learning_rate")?,
            regularization: self.parse_value("mf.regularization")?,
            seed: 0,
        })
    }

    pub fn synth(&self) -> Result<SynthConfig> {
        let cfg = SynthConfig {
            n_learners: self.parse_value("synth.n_learners")?,
            n_courses: self.parse_value("synth.n_courses")?,
            n_teachers: self.parse_value("synth.n_teachers")?,
            n_categories: self.parse_value("synth.n_categories")?,
            n_concepts: self.parse_value("synth.n_concepts")?,
            n_clusters: self.parse_value("synth.n_clusters")?,
            in_cluster_enroll_prob: self.parse_value("synth.in_cluster_enroll_prob")?,
            cross_cluster_enroll_prob: self.parse_value("synth.cross_cluster_enroll_prob")?,
            enrollments_per_learner: self.parse_value("synth.enrollments_per_learner")?,
            seed: self.parse_value("synth.seed")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig {
            min_enrollments: self.min_enrollments()?,
            split_ratios: self.split_ratios()?,
            split_seed: self.split_seed()?,
            seeds: parse_list("run.seeds", self.get("run.seeds"))?,
            embed: self.embed()?,
            agent: self.agent()?,
            path_lengths: parse_list("run.path_lengths", self.get("run.path_lengths"))?,
            beam_widths: self.beam_widths()?,
            top_n: self.top_n()?,
            k: self.k()?,
            reward_mode: self.reward_mode()?,
            whitelist: self.whitelist()?,
            dot_tiebreak: self.parse_value("beam.dot_tiebreak")?,
            mf: self.mf()?,
            baselines: true,
        })
    }
}

fn strip(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}
