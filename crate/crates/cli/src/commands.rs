//! One function per subcommand. Each reads and writes only its artifacts
//! under the output directory.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};

use upgpr::beam::{read_recommendations, recommend_all, write_recommendations, RecommendationList};
use upgpr::checkpoint::check_echo;
use upgpr::embed::{train_embeddings, EmbeddingTable};
use upgpr::env::PathEnv;
use upgpr::kg::{ingest_dir, read_split, split_enrollments, write_split, EnrollmentSplit, EntityType, KnowledgeGraph};
use upgpr::metrics::{evaluate, format_table, MetricsReport, SeedRun};
use upgpr::patterns::{best_paths, frequency_report};
use upgpr::pipeline::{reward_spec, run_experiment, test_learners};
use upgpr::policy::{train_agent, PolicyNet};
use upgpr::synth::write_synth;
use upgpr::{Error, Result};

use crate::config::RunConfig;
use crate::explain::{render_dot, render_text};

pub const KG_FILE: &str = "kg.txt";
pub const SPLIT_FILE: &str = "split.tsv";
pub const EMBED_FILE: &str = "embeddings.bin";
pub const POLICY_FILE: &str = "policy.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const RECS_FILE: &str = "recommendations.jsonl";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_TXT: &str = "metrics.txt";
pub const PATTERNS_CSV: &str = "patterns.csv";
pub const PATTERNS_TXT: &str = "patterns.txt";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";

fn io(path: &FsPath) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn open(path: &FsPath) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(io(path))
}

fn create(path: &FsPath) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    File::create(path).map(BufWriter::new).map_err(io(path))
}

fn write_text(path: &FsPath, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).map_err(io(path))?;
    w.flush().map_err(io(path))
}

struct Workspace {
    dir: PathBuf,
}

impl Workspace {
    fn new(cfg: &RunConfig) -> Self {
        Workspace { dir: cfg.output_dir() }
    }

    fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn save_kg(&self, kg: &KnowledgeGraph) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(io(&self.dir))?;
        kg.save(&self.file(KG_FILE))
    }

    fn kg(&self) -> Result<KnowledgeGraph> {
        KnowledgeGraph::load(&self.file(KG_FILE))
    }

    fn split(&self, cfg: &RunConfig, kg: &KnowledgeGraph) -> Result<EnrollmentSplit> {
        let path = self.file(SPLIT_FILE);
        let split = read_split(kg, open(&path)?)?;
        let (seed, ratios) = (cfg.split_seed()?, cfg.split_ratios()?);
        if split.seed != seed || split.ratios != ratios {
            return Err(Error::Mismatch(format!(
                "{} was made with seed {} ratios {:?}, configuration says seed {seed} ratios {ratios:?}",
                path.display(),
                split.seed,
                split.ratios
            )));
        }
        Ok(split)
    }

    fn embeddings(&self, cfg: &RunConfig, kg: &KnowledgeGraph) -> Result<EmbeddingTable> {
        let path = self.file(EMBED_FILE);
        let (table, echo) = EmbeddingTable::read_from(&mut open(&path)?)?;
        check_echo("embedding checkpoint", &echo, &cfg.embed()?.echo())?;
        if !table.matches(kg) {
            return Err(Error::Mismatch("embedding table does not match the graph".into()));
        }
        Ok(table)
    }

    fn policy(&self, cfg: &RunConfig, emb: &EmbeddingTable) -> Result<PolicyNet> {
        let path = self.file(POLICY_FILE);
        let (net, echo) = PolicyNet::read_from(&mut open(&path)?)?;
        if net.dim() != emb.dim() {
            return Err(Error::Mismatch(format!(
                "policy expects embedding dimension {}, embeddings have {}",
                net.dim(),
                emb.dim()
            )));
        }
        check_echo("policy checkpoint", &echo, &cfg.policy_echo()?)?;
        Ok(net)
    }

    fn recommendations(&self, cfg: &RunConfig, kg: &KnowledgeGraph) -> Result<Vec<RecommendationList>> {
        read_recommendations(open(&self.file(RECS_FILE))?, kg, cfg.top_n()?)
    }
}

/// Reads the relation TSVs, drops learners under the enrollment minimum and
/// stores the graph. Returns the statistics as JSON.
pub fn ingest(cfg: &RunConfig) -> Result<String> {
    let ws = Workspace::new(cfg);
    let kg = ingest_dir(&cfg.data_dir())?.filter_learners(cfg.min_enrollments()?);
    ws.save_kg(&kg)?;
    Ok(serde_json::to_string_pretty(&kg.stats())?)
}

pub fn split(cfg: &RunConfig) -> Result<String> {
    let (ratios, seed) = (cfg.split_ratios()?, cfg.split_seed()?);
    let ws = Workspace::new(cfg);
    let kg = ws.kg()?;
    let split = split_enrollments(&kg, ratios, seed)?;
    let path = ws.file(SPLIT_FILE);
    let mut w = create(&path)?;
    write_split(&kg, &split, &mut w)?;
    w.flush().map_err(io(&path))?;
    let count = |part: &[Vec<u32>]| part.iter().map(Vec::len).sum::<usize>();
    Ok(format!(
        "train {} validation {} test {}",
        count(&split.train),
        count(&split.validation),
        count(&split.test)
    ))
}

pub fn train_embed(cfg: &RunConfig) -> Result<String> {
    let embed = cfg.embed()?;
    let ws = Workspace::new(cfg);
    let kg = ws.kg()?;
    let split = ws.split(cfg, &kg)?;
    let kg_train = kg.with_train_enrollments(&split)?;
    let outcome = train_embeddings(&kg_train, &embed)?;
    let path = ws.file(EMBED_FILE);
    let mut w = create(&path)?;
    outcome.table.write_to(&mut w, &embed.echo())?;
    w.flush().map_err(io(&path))?;
    Ok(format!(
        "final loss {:.6}",
        outcome.epoch_losses.last().copied().unwrap_or(f64::NAN)
    ))
}

pub fn train_agent_cmd(cfg: &RunConfig) -> Result<String> {
    let agent = cfg.agent()?;
    let whitelist = cfg.whitelist()?;
    let policy_echo = cfg.policy_echo()?;
    let ws = Workspace::new(cfg);
    let kg = ws.kg()?;
    let split = ws.split(cfg, &kg)?;
    let kg_train = kg.with_train_enrollments(&split)?;
    let emb = ws.embeddings(cfg, &kg)?;
    let spec = reward_spec(cfg.reward_mode()?, &split, whitelist.as_ref(), &kg_train, &emb);
    let (net, log) = train_agent(&kg_train, &split, &emb, &agent, &spec)?;
    let path = ws.file(POLICY_FILE);
    let mut w = create(&path)?;
    net.write_to(&mut w, &policy_echo)?;
    w.flush().map_err(io(&path))?;
    write_text(&ws.file(TRAIN_LOG_FILE), &log.to_csv())?;
    let last = log.epochs.last();
    Ok(format!(
        "epochs {} final mean reward {:.4}",
        log.epochs.len(),
        last.map_or(0.0, |e| e.mean_reward)
    ))
}

pub fn recommend(cfg: &RunConfig) -> Result<String> {
    let agent = cfg.agent()?;
    let inference = cfg.inference(agent.max_hops)?;
    let ws = Workspace::new(cfg);
    let kg = ws.kg()?;
    let split = ws.split(cfg, &kg)?;
    let kg_train = kg.with_train_enrollments(&split)?;
    let emb = ws.embeddings(cfg, &kg)?;
    let net = ws.policy(cfg, &emb)?;
    let env = PathEnv::new(&kg_train, &emb, agent.max_actions)?;
    let learners = test_learners(&split);
    let (lists, invalid) = recommend_all(&learners, &net, &env, &split, &inference)?;
    let path = ws.file(RECS_FILE);
    let mut w = create(&path)?;
    write_recommendations(&mut w, &kg, &lists)?;
    w.flush().map_err(io(&path))?;
    Ok(format!("{} learners, invalid {:.1}%", lists.len(), 100.0 * invalid))
}

fn model_name(cfg: &RunConfig) -> Result<&'static str> {
    Ok(match cfg.reward_mode()? {
        upgpr::env::RewardMode::Binary => "UPGPR",
        upgpr::env::RewardMode::Pgpr => "PGPR",
    })
}

pub fn evaluate_cmd(cfg: &RunConfig) -> Result<String> {
    let (k, agent, model) = (cfg.k()?, cfg.agent()?, model_name(cfg)?);
    let ws = Workspace::new(cfg);
    let kg = ws.kg()?;
    let split = ws.split(cfg, &kg)?;
    let lists = ws.recommendations(cfg, &kg)?;
    let metrics = evaluate(&lists, &split, k)?;
    let report = MetricsReport::new(
        model,
        "Path-Based",
        Some(agent.max_hops),
        vec![SeedRun { seed: agent.seed, metrics }],
    );
    let table = format_table(std::slice::from_ref(&report));
    write_text(&ws.file(METRICS_JSON), &serde_json::to_string_pretty(&report)?)?;
    write_text(&ws.file(METRICS_TXT), &table)?;
    Ok(table.trim_end().to_string())
}

pub fn patterns_cmd(cfg: &RunConfig) -> Result<String> {
    let ws = Workspace::new(cfg);
    let kg = ws.kg()?;
    let lists = ws.recommendations(cfg, &kg)?;
    let report = frequency_report(&best_paths(&lists))?;
    write_text(&ws.file(PATTERNS_CSV), &report.to_csv())?;
    write_text(&ws.file(PATTERNS_TXT), &report.to_text())?;
    Ok(report.to_text().trim_end().to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ExplainFormat {
    Text,
    Dot,
}

pub fn explain(cfg: &RunConfig, learner: &str, rank: usize, format: ExplainFormat) -> Result<String> {
    let ws = Workspace::new(cfg);
    let kg = ws.kg()?;
    let who = kg
        .entity(EntityType::Learner, learner)
        .ok_or_else(|| Error::Lookup(format!("unknown learner {learner:?}")))?;
    let lists = ws.recommendations(cfg, &kg)?;
    let list = lists
        .iter()
        .find(|l| l.learner == who)
        .ok_or_else(|| Error::Lookup(format!("no recommendations for learner {learner:?}")))?;
    let item = rank
        .checked_sub(1)
        .and_then(|i| list.items.get(i))
        .ok_or_else(|| Error::Lookup(format!("learner {learner:?} has no recommendation at rank {rank}")))?;
    Ok(match format {
        ExplainFormat::Text => render_text(&kg, &item.path),
        ExplainFormat::Dot => render_dot(&kg, &item.path).trim_end().to_string(),
    })
}

pub fn synth(cfg: &RunConfig, out: Option<PathBuf>) -> Result<String> {
    let dir = out.unwrap_or_else(|| cfg.data_dir());
    let kg = write_synth(&cfg.synth()?, &dir)?;
    Ok(format!(
        "wrote {} learners, {} courses, {} triples to {}",
        kg.num_entities(EntityType::Learner),
        kg.num_entities(EntityType::Course),
        kg.num_forward_triples(),
        dir.display()
    ))
}

/// Full pipeline over every configured seed and path length.
pub fn run_all(cfg: &RunConfig) -> Result<String> {
    let ws = Workspace::new(cfg);
    let exp = cfg.experiment()?;
    let kg = ingest_dir(&cfg.data_dir())?;
    let outcome = run_experiment(&kg, &exp, |msg| eprintln!("{msg}"))?;
    ws.save_kg(&outcome.kg)?;
    for run in &outcome.path_runs {
        let tag = format!("seed{}_hops{}", run.seed, run.max_hops);
        write_text(&ws.file(&format!("train_log_{tag}.csv")), &run.log.to_csv())?;
        let path = ws.file(&format!("recommendations_{tag}.jsonl"));
        let mut w = create(&path)?;
        write_recommendations(&mut w, &outcome.kg, &run.lists)?;
        w.flush().map_err(io(&path))?;
        if let Ok(report) = frequency_report(&best_paths(&run.lists)) {
            write_text(&ws.file(&format!("patterns_{tag}.csv")), &report.to_csv())?;
        }
    }
    let table = format_table(&outcome.reports);
    write_text(&ws.file(REPORT_JSON), &serde_json::to_string_pretty(&outcome.reports)?)?;
    write_text(&ws.file(REPORT_TXT), &table)?;
    Ok(table.trim_end().to_string())
}
