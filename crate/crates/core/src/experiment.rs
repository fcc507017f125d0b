//! End-to-end experiment plumbing shared by the CLI, the benches, and the
//! acceptance suite: demo generation, tokenizer and policy training,
//! grid evaluation, ablation sweeps, and clustered bootstrap errors.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datalog::{self, Dataset, DatasetConfig, DatalogError, EpisodeLog, Expertise};
use crate::demos::{collect, Demonstrator, DEMO_MAX_STEPS};
use crate::orchestrator::critic::{Critic, LlmConfig, LlmCritic, NoisyCritic, OracleCritic};
use crate::orchestrator::{
    grid_jobs, retry_report, run_batch, EpisodeResult, OrchestratorError, PolicyController, RetryPolicy, RetryReport,
    RunConfig,
};
use crate::policy::{self, Decoding, PolicyArch, PolicyError, PolicyParams, TrainConfig, Variant};
use crate::rvq::{self, Codebook, RvqError};
use crate::sim2d::{
    gen_envs_with, is_eval_seed, mix_seed, Embodiment, EnvSpec, GenOptions, Mode, NonexpertProfile, Task,
    EVAL_SEED_BASE, GRID_SIZE, OBS_DIM,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Datalog(#[from] DatalogError),
    #[error(transparent)]
    Rvq(#[from] RvqError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Sim(#[from] crate::sim2d::SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpertiseMix {
    Expert,
    Nonexpert,
    /// Alternating expert and non-expert demonstrations.
    Cotrain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeMix {
    A,
    B,
    /// Each demonstration picks a detour mode uniformly at random.
    Both,
    /// Demonstrations come in A/B pairs that share a start pose.
    Paired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub task: Task,
    /// Generation seed for training environments; must stay below the
    /// reserved evaluation range.
    pub env_seed: u64,
    pub env_count: usize,
    pub demos_per_env: usize,
    pub expertise: ExpertiseMix,
    pub nonexpert: NonexpertProfile,
    pub modes: ModeMix,
    pub gen: GenOptions,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            task: Task::Door,
            env_seed: 0,
            env_count: 40,
            demos_per_env: 25,
            expertise: ExpertiseMix::Expert,
            nonexpert: NonexpertProfile { noise_level: 0.02, fail_rate: 0.2 },
            modes: ModeMix::Both,
            gen: GenOptions::default(),
            max_steps: DEMO_MAX_STEPS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RvqConfig {
    pub k: usize,
    pub layers: usize,
    pub iters: usize,
    pub seed: u64,
}

impl Default for RvqConfig {
    fn default() -> Self {
        Self { k: 16, layers: 2, iters: 100, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticKind {
    Oracle,
    Noisy,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriticConfig {
    pub kind: CriticKind,
    pub fp_rate: f64,
    pub fn_rate: f64,
    pub seed: u64,
    pub llm: LlmConfig,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self { kind: CriticKind::Oracle, fp_rate: 0.05, fn_rate: 0.05, seed: 0, llm: LlmConfig::default() }
    }
}

impl CriticConfig {
    pub fn build(&self) -> Box<dyn Critic> {
        match self.kind {
            CriticKind::Oracle => Box::new(OracleCritic),
            CriticKind::Noisy => Box::new(NoisyCritic::new(OracleCritic, self.fp_rate, self.fn_rate, self.seed)),
            CriticKind::Llm => Box::new(LlmCritic::new(self.llm.clone().with_env())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Generation seed for held-out environments; must be in the reserved range.
    pub env_seed: u64,
    pub env_count: usize,
    pub grid_runs: usize,
    pub decoding: Decoding,
    pub embodiment: Option<Embodiment>,
    pub run: RunConfig,
    pub critic: CriticConfig,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            env_seed: EVAL_SEED_BASE,
            env_count: 5,
            grid_runs: GRID_SIZE,
            decoding: Decoding::Sample { temperature: 1.0 },
            embodiment: None,
            run: RunConfig::default(),
            critic: CriticConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub dataset: DatasetConfig,
    pub rvq: RvqConfig,
    pub variant: Variant,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub workers: usize,
    /// Bootstrap resamples for standard errors.
    pub bootstrap: usize,
    /// Ablation conditions train this many models (consecutive training
    /// seeds, same data) and pool their episodes.
    pub train_seeds: usize,
}

/// History length used by the experiment presets.
pub const PRESET_HISTORY: usize = 2;
/// Optimizer steps per training run in the experiment presets; fixed so
/// that conditions of different dataset size get equal compute.
pub const PRESET_TRAIN_STEPS: usize = 6000;

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            dataset: DatasetConfig { history: PRESET_HISTORY, ..DatasetConfig::default() },
            rvq: RvqConfig::default(),
            variant: Variant::Vqbet,
            hidden: vec![128, 128],
            train: TrainConfig { epochs: 10_000, max_steps: Some(PRESET_TRAIN_STEPS), ..TrainConfig::default() },
            eval: EvalConfig::default(),
            workers: 1,
            bootstrap: 1000,
            train_seeds: 3,
        }
    }
}

impl ExperimentConfig {
    /// Sets every seed from one base seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.seed = seed;
        self.dataset.seed = seed;
        self.rvq.seed = seed;
        self.train.seed = seed;
        self.eval.seed = seed;
        self.eval.critic.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if is_eval_seed(self.data.env_seed) {
            return Err(ExperimentError::Config("training env seed is in the reserved evaluation range".into()));
        }
        if !is_eval_seed(self.eval.env_seed) {
            return Err(ExperimentError::Config(format!(
                "evaluation env seed must be at least {EVAL_SEED_BASE}"
            )));
        }
        if self.data.env_count == 0 || self.data.demos_per_env == 0 {
            return Err(ExperimentError::Config("need at least one environment and demonstration".into()));
        }
        if self.eval.env_count == 0 || self.eval.grid_runs == 0 || self.eval.grid_runs > GRID_SIZE {
            return Err(ExperimentError::Config("eval needs ≥1 env and 1..=10 grid runs".into()));
        }
        self.dataset.validate()?;
        Ok(())
    }

    pub fn arch(&self) -> PolicyArch {
        PolicyArch {
            variant: self.variant,
            history: self.dataset.history,
            obs_dim: OBS_DIM,
            chunk: self.dataset.chunk,
            hidden: self.hidden.clone(),
            k: self.rvq.k,
            code_layers: self.rvq.layers,
        }
    }
}

pub fn train_envs(cfg: &DataConfig) -> Vec<EnvSpec> {
    gen_envs_with(cfg.task, cfg.env_count, cfg.env_seed, &cfg.gen)
}

pub fn eval_envs(task: Task, cfg: &EvalConfig, gen: &GenOptions) -> Vec<EnvSpec> {
    let mut envs = gen_envs_with(task, cfg.env_count, cfg.env_seed, gen);
    if let Some(e) = cfg.embodiment {
        envs = envs.into_iter().map(|s| s.with_embodiment(e)).collect();
    }
    envs
}

fn demonstrator_for(cfg: &DataConfig, index: usize, rng: &mut ChaCha8Rng) -> Demonstrator {
    let mode = match cfg.modes {
        ModeMix::A => Mode::A,
        ModeMix::B => Mode::B,
        ModeMix::Both => {
            if rng.random_bool(0.5) {
                Mode::A
            } else {
                Mode::B
            }
        }
        ModeMix::Paired => {
            if index % 2 == 0 {
                Mode::A
            } else {
                Mode::B
            }
        }
    };
    let expert = match cfg.expertise {
        ExpertiseMix::Expert => true,
        ExpertiseMix::Nonexpert => false,
        ExpertiseMix::Cotrain => index % 2 == 0,
    };
    if expert {
        Demonstrator::Expert(mode)
    } else {
        Demonstrator::Nonexpert { profile: cfg.nonexpert, mode }
    }
}

/// Scripted demonstrations for every training environment, in env order.
pub fn generate_demos(cfg: &DataConfig) -> Result<Vec<EpisodeLog>> {
    let mut logs = Vec::with_capacity(cfg.env_count * cfg.demos_per_env);
    for spec in train_envs(cfg) {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, spec.seed, 0xD3]));
        let mut demo_seed = 0;
        for j in 0..cfg.demos_per_env {
            let d = demonstrator_for(cfg, j, &mut rng);
            let id = match d {
                Demonstrator::Expert(_) => "scripted-expert",
                Demonstrator::Nonexpert { .. } => "scripted-nonexpert",
            };
            if cfg.modes != ModeMix::Paired || j % 2 == 0 {
                demo_seed = rng.random();
            }
            logs.push(collect(&spec, &d, id, demo_seed, cfg.max_steps)?.log);
        }
    }
    Ok(logs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub env_id: String,
    pub expertise: Expertise,
    pub success: Option<bool>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: DataConfig,
    pub demo_count: usize,
    pub demos: Vec<ManifestEntry>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes one RUMLOG1 file per demonstration plus `manifest.json`.
pub fn gen_data(cfg: &DataConfig, out: &Path) -> Result<Manifest> {
    fs::create_dir_all(out)?;
    let logs = generate_demos(cfg)?;
    let mut per_env: BTreeMap<String, usize> = BTreeMap::new();
    let mut demos = Vec::with_capacity(logs.len());
    for log in &logs {
        let n = per_env.entry(log.meta.env_id.clone()).or_default();
        let file = format!("{}_{:04}.rumlog", log.meta.env_id, n);
        *n += 1;
        log.save(out.join(&file))?;
        demos.push(ManifestEntry {
            file,
            env_id: log.meta.env_id.clone(),
            expertise: log.meta.expertise,
            success: log.meta.success,
            samples: log.pose_stream.len(),
        });
    }
    let manifest = Manifest { config: cfg.clone(), demo_count: demos.len(), demos };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn load_logs(dir: &Path) -> Result<Vec<EpisodeLog>> {
    let manifest: Manifest = serde_json::from_reader(fs::File::open(dir.join("manifest.json"))?)?;
    manifest.demos.iter().map(|d| Ok(EpisodeLog::load(dir.join(&d.file))?)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: PolicyParams,
    pub codebook: Option<Codebook>,
    pub loss_curve: Vec<f64>,
    pub train_pairs: usize,
    pub train_logs: usize,
    pub train_envs: usize,
}

pub fn build_dataset(logs: &[EpisodeLog], cfg: &DatasetConfig) -> Result<Dataset> {
    Ok(datalog::assemble(logs, cfg)?)
}

/// Fits the tokenizer (vqbet only) and trains the policy.
pub fn train_model(logs: &[EpisodeLog], cfg: &ExperimentConfig) -> Result<TrainedModel> {
    let ds = build_dataset(logs, &cfg.dataset)?;
    let arch = cfg.arch();
    let codebook = match cfg.variant {
        Variant::Vqbet => {
            let chunks: Vec<Vec<f64>> = ds.pairs.iter().map(|p| p.planar_chunk()).collect();
            Some(rvq::fit(&chunks, cfg.rvq.k, cfg.rvq.layers, cfg.rvq.iters, cfg.rvq.seed)?)
        }
        Variant::Bc => None,
    };
    let out = policy::train(&ds.pairs, arch, &cfg.train, codebook.as_ref())?;
    let envs: std::collections::BTreeSet<&str> =
        ds.selected_logs.iter().map(|&i| logs[i].meta.env_id.as_str()).collect();
    Ok(TrainedModel {
        params: out.params,
        codebook,
        loss_curve: out.loss_curve,
        train_pairs: ds.pairs.len(),
        train_logs: ds.selected_logs.len(),
        train_envs: envs.len(),
    })
}

impl TrainedModel {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.params.save(dir.join("policy.bin"))?;
        if let Some(cb) = &self.codebook {
            cb.save(dir.join("codebook.bin"))?;
        }
        policy::write_loss_curve(fs::File::create(dir.join("loss_curve.csv"))?, &self.loss_curve)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let params = PolicyParams::load(dir.join("policy.bin"))?;
        let cb_path = dir.join("codebook.bin");
        let codebook = if cb_path.exists() { Some(Codebook::load(cb_path)?) } else { None };
        let mut loss_curve = Vec::new();
        let lc = dir.join("loss_curve.csv");
        if lc.exists() {
            for rec in csv::Reader::from_path(lc)?.records() {
                let rec = rec?;
                loss_curve.push(rec.get(1).and_then(|s| s.parse().ok()).unwrap_or(f64::NAN));
            }
        }
        Ok(Self { params, codebook, loss_curve, train_pairs: 0, train_logs: 0, train_envs: 0 })
    }
}

/// Grid evaluation on held-out environments of `task`.
pub fn evaluate_on(
    model: &TrainedModel,
    envs: &[EnvSpec],
    cfg: &EvalConfig,
    workers: usize,
) -> Result<Vec<EpisodeResult>> {
    let jobs = grid_jobs(envs, cfg.grid_runs, cfg.seed);
    let critic = cfg.critic.build();
    let run = RunConfig { history: model.params.arch.history, ..cfg.run.clone() };
    let results = run_batch(
        &jobs,
        |_| PolicyController::new(&model.params, model.codebook.as_ref(), cfg.decoding),
        critic.as_ref(),
        &run,
        workers,
    )?;
    Ok(results)
}

pub fn evaluate(model: &TrainedModel, cfg: &ExperimentConfig) -> Result<Vec<EpisodeResult>> {
    let envs = eval_envs(cfg.data.task, &cfg.eval, &cfg.data.gen);
    evaluate_on(model, &envs, &cfg.eval, cfg.workers)
}

/// Outcomes grouped by environment, in first-appearance order.
pub fn outcomes_by_env(results: &[EpisodeResult], first_try: bool) -> Vec<Vec<f64>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in results.iter().filter(|r| r.status == crate::orchestrator::EpisodeStatus::Completed) {
        let v = if first_try { r.first_try_success } else { r.oracle_success };
        if !groups.contains_key(r.env_id.as_str()) {
            order.push(&r.env_id);
        }
        groups.entry(&r.env_id).or_default().push(v as u8 as f64);
    }
    order.into_iter().map(|e| groups.remove(e).expect("grouped")).collect()
}

fn pooled_rate(groups: &[&Vec<f64>]) -> f64 {
    let (s, n) = groups.iter().fold((0.0, 0usize), |(s, n), g| (s + g.iter().sum::<f64>(), n + g.len()));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn std_dev(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0).max(1.0)).sqrt()
}

/// Standard error of the pooled success rate, resampling whole environments.
pub fn cluster_bootstrap_se(groups: &[Vec<f64>], resamples: usize, seed: u64) -> f64 {
    if groups.is_empty() || resamples < 2 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stats: Vec<f64> = (0..resamples)
        .map(|_| {
            let pick: Vec<&Vec<f64>> = (0..groups.len()).map(|_| &groups[rng.random_range(0..groups.len())]).collect();
            pooled_rate(&pick)
        })
        .collect();
    std_dev(&stats)
}

/// Standard error of `rate(a) − rate(b)` when both conditions were
/// evaluated on the same environments; environments are resampled jointly.
pub fn paired_bootstrap_se(a: &[Vec<f64>], b: &[Vec<f64>], resamples: usize, seed: u64) -> f64 {
    assert_eq!(a.len(), b.len(), "paired conditions need the same environments");
    if a.is_empty() || resamples < 2 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stats: Vec<f64> = (0..resamples)
        .map(|_| {
            let idx: Vec<usize> = (0..a.len()).map(|_| rng.random_range(0..a.len())).collect();
            let pa: Vec<&Vec<f64>> = idx.iter().map(|&i| &a[i]).collect();
            let pb: Vec<&Vec<f64>> = idx.iter().map(|&i| &b[i]).collect();
            pooled_rate(&pa) - pooled_rate(&pb)
        })
        .collect();
    std_dev(&stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationKind {
    Scaling,
    Diversity,
    Expert,
    Retry,
    Embodiment,
}

impl std::str::FromStr for AblationKind {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "scaling" => AblationKind::Scaling,
            "diversity" => AblationKind::Diversity,
            "expert" => AblationKind::Expert,
            "retry" => AblationKind::Retry,
            "embodiment" => AblationKind::Embodiment,
            other => return Err(ExperimentError::Config(format!("unknown ablation `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ablation: AblationKind,
    pub condition: String,
    pub task: Task,
    pub train_envs: usize,
    pub demos_per_env: usize,
    pub train_pairs: usize,
    pub eval_envs: usize,
    pub episodes: usize,
    pub success_rate: f64,
    pub success_se: f64,
    pub first_try_rate: f64,
    pub first_try_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEnvRow {
    pub ablation: AblationKind,
    pub condition: String,
    pub task: Task,
    pub env_id: String,
    pub episodes: usize,
    pub success_rate: f64,
    pub first_try_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: String,
    pub task: Task,
    pub results: Vec<EpisodeResult>,
    pub train_envs: usize,
    pub demos_per_env: usize,
    pub train_pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub kind: AblationKind,
    pub conditions: Vec<Condition>,
    pub rows: Vec<SweepRow>,
    pub env_rows: Vec<SweepEnvRow>,
}

impl Sweep {
    pub fn condition(&self, name: &str, task: Task) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.name == name && c.task == task)
    }

    /// `rate(a) − rate(b)` with its paired bootstrap standard error.
    pub fn paired_difference(&self, a: &Condition, b: &Condition, first_try: bool, resamples: usize, seed: u64) -> (f64, f64) {
        let ga = outcomes_by_env(&a.results, first_try);
        let gb = outcomes_by_env(&b.results, first_try);
        let ra = pooled_rate(&ga.iter().collect::<Vec<_>>());
        let rb = pooled_rate(&gb.iter().collect::<Vec<_>>());
        (ra - rb, paired_bootstrap_se(&ga, &gb, resamples, seed))
    }

    pub fn write_csv(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let main = dir.join("sweep.csv");
        let mut w = csv::Writer::from_path(&main)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        let envs = dir.join("sweep_envs.csv");
        let mut w = csv::Writer::from_path(&envs)?;
        for r in &self.env_rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok((main, envs))
    }
}

fn summarize_condition(kind: AblationKind, c: &Condition, resamples: usize, seed: u64) -> (SweepRow, Vec<SweepEnvRow>) {
    let g = outcomes_by_env(&c.results, false);
    let gf = outcomes_by_env(&c.results, true);
    let row = SweepRow {
        ablation: kind,
        condition: c.name.clone(),
        task: c.task,
        train_envs: c.train_envs,
        demos_per_env: c.demos_per_env,
        train_pairs: c.train_pairs,
        eval_envs: g.len(),
        episodes: g.iter().map(Vec::len).sum(),
        success_rate: pooled_rate(&g.iter().collect::<Vec<_>>()),
        success_se: cluster_bootstrap_se(&g, resamples, seed),
        first_try_rate: pooled_rate(&gf.iter().collect::<Vec<_>>()),
        first_try_se: cluster_bootstrap_se(&gf, resamples, seed),
    };
    let rep = retry_report(&c.results).ok();
    let env_rows = rep
        .map(|r| {
            r.per_env
                .into_iter()
                .map(|e| SweepEnvRow {
                    ablation: kind,
                    condition: c.name.clone(),
                    task: c.task,
                    env_id: e.env_id,
                    episodes: e.episodes,
                    success_rate: e.success_rate,
                    first_try_rate: e.first_try_rate,
                })
                .collect()
        })
        .unwrap_or_default();
    (row, env_rows)
}

fn condition_from(name: &str, cfg: &ExperimentConfig, model: &TrainedModel, results: Vec<EpisodeResult>) -> Condition {
    Condition {
        name: name.into(),
        task: cfg.data.task,
        results,
        train_envs: model.train_envs,
        demos_per_env: cfg.dataset.demos_per_env.unwrap_or(cfg.data.demos_per_env),
        train_pairs: model.train_pairs,
    }
}

/// Copy of `cfg` with the training-side seeds offset by `k`; data and
/// evaluation environments are unchanged.
fn training_replica(cfg: &ExperimentConfig, k: usize) -> ExperimentConfig {
    let mut c = cfg.clone();
    let k = k as u64;
    c.dataset.seed = cfg.dataset.seed.wrapping_add(k);
    c.rvq.seed = cfg.rvq.seed.wrapping_add(k);
    c.train.seed = cfg.train.seed.wrapping_add(k);
    c.eval.seed = cfg.eval.seed.wrapping_add(k);
    c
}

/// Trains `cfg.train_seeds` replicas on `logs` and evaluates each under
/// every config in `evals` (evaluation settings only are read from them).
/// Returns one pooled condition per entry of `evals`.
fn pooled_conditions(
    logs: &[EpisodeLog],
    cfg: &ExperimentConfig,
    evals: &[(&str, &ExperimentConfig)],
) -> Result<Vec<Condition>> {
    let mut pooled: Vec<Option<Condition>> = vec![None; evals.len()];
    for k in 0..cfg.train_seeds.max(1) {
        let model = train_model(logs, &training_replica(cfg, k))?;
        for (slot, (name, e)) in pooled.iter_mut().zip(evals) {
            let results = evaluate(&model, &training_replica(e, k))?;
            match slot {
                Some(c) => c.results.extend(results),
                None => *slot = Some(condition_from(name, e, &model, results)),
            }
        }
    }
    Ok(pooled.into_iter().map(|c| c.expect("at least one replica")).collect())
}

/// Trains on freshly generated data per `cfg` and evaluates.
pub fn train_and_eval(name: &str, cfg: &ExperimentConfig) -> Result<Condition> {
    let logs = generate_demos(&cfg.data)?;
    Ok(pooled_conditions(&logs, cfg, &[(name, cfg)])?.remove(0))
}

/// Environment counts in the scaling sweep.
pub const SCALING_ENV_COUNTS: [usize; 5] = [2, 5, 10, 20, 40];

/// Runs one of the matched ablation sweeps. Ablations other than `retry`
/// evaluate with retries off so rates compare first attempts.
pub fn ablate(kind: AblationKind, base: &ExperimentConfig) -> Result<Sweep> {
    base.validate()?;
    let mut conditions = Vec::new();
    let mut single = base.clone();
    if kind != AblationKind::Retry {
        single.eval.run.retry = RetryPolicy::off();
    }
    match kind {
        AblationKind::Scaling => {
            let mut data = single.data.clone();
            data.env_count = *SCALING_ENV_COUNTS.iter().max().expect("nonempty");
            data.demos_per_env = 25;
            let logs = generate_demos(&data)?;
            for &n in &SCALING_ENV_COUNTS {
                let mut cfg = single.clone();
                cfg.data = data.clone();
                cfg.dataset.env_count = Some(n);
                cfg.dataset.demos_per_env = Some(25);
                conditions.extend(pooled_conditions(&logs, &cfg, &[(&format!("envs={n}"), &cfg)])?);
            }
        }
        AblationKind::Diversity => {
            for (name, envs, demos) in [("diverse-40x25", 40, 25), ("uniform-5x200", 5, 200)] {
                let mut cfg = single.clone();
                cfg.data.env_count = envs;
                cfg.data.demos_per_env = demos;
                cfg.dataset.env_count = None;
                cfg.dataset.demos_per_env = None;
                conditions.push(train_and_eval(name, &cfg)?);
            }
        }
        AblationKind::Expert => {
            for task in Task::ALL {
                for (name, mix) in
                    [("expert", ExpertiseMix::Expert), ("nonexpert", ExpertiseMix::Nonexpert), ("cotrain", ExpertiseMix::Cotrain)]
                {
                    let mut cfg = single.clone();
                    cfg.data.task = task;
                    cfg.data.expertise = mix;
                    conditions.push(train_and_eval(name, &cfg)?);
                }
            }
        }
        AblationKind::Retry => {
            let logs = generate_demos(&single.data)?;
            let mut off = single.clone();
            off.eval.run.retry = RetryPolicy::off();
            conditions = pooled_conditions(&logs, &single, &[("retry-on", &single), ("retry-off", &off)])?;
        }
        AblationKind::Embodiment => {
            let logs = generate_demos(&single.data)?;
            let mut shifted = single.clone();
            shifted.eval.embodiment = Some(Embodiment::shifted());
            conditions = pooled_conditions(&logs, &single, &[("nominal", &single), ("shifted", &shifted)])?;
        }
    }
    let mut rows = Vec::new();
    let mut env_rows = Vec::new();
    for c in &conditions {
        let (r, e) = summarize_condition(kind, c, base.bootstrap, base.eval.seed);
        rows.push(r);
        env_rows.extend(e);
    }
    Ok(Sweep { kind, conditions, rows, env_rows })
}

/// `results.jsonl` plus `summary.csv` (one row per environment and an `all` row).
pub fn write_results(dir: &Path, results: &[EpisodeResult]) -> Result<RetryReport> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(fs::File::create(dir.join("results.jsonl"))?);
    for r in results {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let rep = retry_report(results)?;
    let mut c = csv::Writer::from_path(dir.join("summary.csv"))?;
    c.write_record(["env_id", "task", "episodes", "success_rate", "first_try_rate", "mean_tries_success"])?;
    for e in &rep.per_env {
        c.write_record([
            e.env_id.clone(),
            e.task.to_string(),
            e.episodes.to_string(),
            format!("{:.6}", e.success_rate),
            format!("{:.6}", e.first_try_rate),
            e.mean_tries_success.map_or(String::new(), |m| format!("{m:.6}")),
        ])?;
    }
    c.write_record([
        "all".to_string(),
        results.first().map_or(String::new(), |r| r.task.to_string()),
        rep.episodes.to_string(),
        format!("{:.6}", rep.success_rate),
        format!("{:.6}", rep.first_try_rate),
        rep.mean_tries_success.map_or(String::new(), |m| format!("{m:.6}")),
    ])?;
    c.flush()?;
    write_json(&dir.join("report.json"), &rep)?;
    Ok(rep)
}

pub fn write_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("config.json"), cfg)
}
