use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use rum_core::datalog::EpisodeLog;
use rum_core::experiment::{
    ablate, eval_envs, evaluate_on, gen_data, load_logs, train_model, write_config, write_results, AblationKind,
    CriticKind, ExperimentConfig, TrainedModel,
};
use rum_core::orchestrator::{grid_jobs, run_try, PolicyController, RetryPolicy, RunConfig};
use rum_core::replay::{replay, rollout_log};
use rum_core::sim2d::SimState;
use rum_core::teleop::{TeleopConfig, TeleopServer};

mod plot;

#[derive(Parser)]
#[command(name = "rum", version, about = "Demonstration data, policy training, and retry evaluation in 2D task environments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate scripted demonstrations as RUMLOG1 files plus manifest.json.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the action tokenizer and train a policy on a log directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory written by gen-data.
        #[arg(long)]
        data: PathBuf,
    },
    /// Grid-evaluate a trained policy on held-out environments.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: EvalFlags,
        /// Directory written by train.
        #[arg(long)]
        model: PathBuf,
        /// Also write each episode's first try as a replayable rollout log.
        #[arg(long)]
        save_rollouts: bool,
    },
    /// Run a matched ablation sweep.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: EvalFlags,
        kind: Kind,
        /// Models trained per condition.
        #[arg(long)]
        train_seeds: Option<usize>,
        /// Held-out environments per condition.
        #[arg(long)]
        eval_envs: Option<usize>,
    },
    /// Serve the teleoperation WebSocket endpoint.
    ServeTeleop {
        /// Teleop session config (JSON); flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        host: Option<String>,
        /// Environment generation seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Where recorded logs are written.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        print_config: bool,
    },
    /// Re-simulate recorded logs and compare with what they recorded.
    Replay {
        /// Log files or directories of logs.
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        /// Largest accepted end-effector position gap (m).
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        /// Write the per-log outcomes as JSON lines here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON, every field optional).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed for data, tokenizer, training and evaluation.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Episode worker threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct EvalFlags {
    #[arg(long, value_enum)]
    critic: Option<CriticArg>,
    #[arg(long, value_enum)]
    retry: Option<Toggle>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CriticArg {
    Oracle,
    Noisy,
    Llm,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Scaling,
    Diversity,
    Expert,
    Retry,
    Embodiment,
}

impl From<Kind> for AblationKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Scaling => AblationKind::Scaling,
            Kind::Diversity => AblationKind::Diversity,
            Kind::Expert => AblationKind::Expert,
            Kind::Retry => AblationKind::Retry,
            Kind::Embodiment => AblationKind::Embodiment,
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Config file (or `fallback` when absent) with flags applied.
fn resolve(common: &Common, eval: Option<&EvalFlags>, fallback: Option<&Path>) -> Result<ExperimentConfig> {
    let mut cfg = match (&common.config, fallback) {
        (Some(p), _) => read_json(p)?,
        (None, Some(p)) if p.exists() => read_json(p)?,
        _ => ExperimentConfig { workers: default_workers(), ..ExperimentConfig::default() },
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(w) = common.workers {
        cfg.workers = w.max(1);
    }
    if let Some(e) = eval {
        if let Some(c) = e.critic {
            cfg.eval.critic.kind = match c {
                CriticArg::Oracle => CriticKind::Oracle,
                CriticArg::Noisy => CriticKind::Noisy,
                CriticArg::Llm => CriticKind::Llm,
            };
        }
        match e.retry {
            Some(Toggle::Off) => cfg.eval.run.retry = RetryPolicy::off(),
            Some(Toggle::On) if cfg.eval.run.retry.max_tries <= 1 => cfg.eval.run.retry = RetryPolicy::default(),
            _ => {}
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn out_dir(common: &Common) -> Result<&Path> {
    common.out.as_deref().context("--out is required")
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::GenData { common } => {
            let cfg = resolve(&common, None, None)?;
            if common.print_config {
                return print_json(&cfg);
            }
            let out = out_dir(&common)?;
            let manifest = gen_data(&cfg.data, out)?;
            write_config(out, &cfg)?;
            let ok = manifest.demos.iter().filter(|d| d.success == Some(true)).count();
            println!("wrote {} demos ({ok} successful) to {}", manifest.demo_count, out.display());
        }
        Cmd::Train { common, data } => {
            let cfg = resolve(&common, None, Some(&data.join("config.json")))?;
            if common.print_config {
                return print_json(&cfg);
            }
            let out = out_dir(&common)?;
            let logs = load_logs(&data)?;
            let model = train_model(&logs, &cfg)?;
            if let Some(l) = model.loss_curve.iter().find(|l| !l.is_finite()) {
                bail!("training diverged (loss {l})");
            }
            model.save(out)?;
            write_config(out, &cfg)?;
            let stats = serde_json::json!({
                "train_logs": model.train_logs,
                "train_envs": model.train_envs,
                "train_pairs": model.train_pairs,
                "steps": model.loss_curve.len(),
                "final_loss": model.loss_curve.last(),
            });
            fs::write(out.join("train.json"), serde_json::to_string_pretty(&stats)? + "\n")?;
            println!(
                "trained {} on {} pairs from {} logs; final loss {:.5}",
                cfg.variant,
                model.train_pairs,
                model.train_logs,
                model.loss_curve.last().copied().unwrap_or(f64::NAN)
            );
        }
        Cmd::Eval { common, eval, model, save_rollouts } => {
            let cfg = resolve(&common, Some(&eval), Some(&model.join("config.json")))?;
            if common.print_config {
                return print_json(&cfg);
            }
            let out = out_dir(&common)?;
            let trained = TrainedModel::load(&model)?;
            let envs = eval_envs(cfg.data.task, &cfg.eval, &cfg.data.gen);
            let results = evaluate_on(&trained, &envs, &cfg.eval, cfg.workers)?;
            let rep = write_results(out, &results)?;
            write_config(out, &cfg)?;
            if save_rollouts {
                let dir = out.join("rollouts");
                fs::create_dir_all(&dir)?;
                let run = RunConfig { history: trained.params.arch.history, ..cfg.eval.run.clone() };
                for job in grid_jobs(&envs, cfg.eval.grid_runs, cfg.eval.seed) {
                    let mut ctrl = PolicyController::new(&trained.params, trained.codebook.as_ref(), cfg.eval.decoding);
                    let (start, roll) = run_try(job.spec, job.grid_index, 0, &mut ctrl, &run, job.seed)?;
                    let states: Vec<SimState> = roll.frames.into_iter().map(|f| f.state).collect();
                    if states.len() < 2 {
                        continue;
                    }
                    let log = rollout_log(job.spec, job.grid_index, start, &states, &roll.actions, job.seed);
                    log.save(dir.join(format!("{}_g{}.rumlog", job.spec.env_id, job.grid_index)))?;
                }
            }
            println!(
                "{} episodes ({} excluded): success {:.3}, first try {:.3}, improvement {:+.3}, false positives {:.3}",
                rep.episodes, rep.excluded, rep.success_rate, rep.first_try_rate, rep.improvement, rep.false_positive_rate
            );
        }
        Cmd::Ablate { common, eval, kind, train_seeds, eval_envs } => {
            let mut cfg = resolve(&common, Some(&eval), None)?;
            if let Some(n) = train_seeds {
                cfg.train_seeds = n.max(1);
            }
            if let Some(n) = eval_envs {
                cfg.eval.env_count = n.max(1);
            }
            if common.print_config {
                return print_json(&cfg);
            }
            let out = out_dir(&common)?;
            fs::create_dir_all(out)?;
            write_config(out, &cfg)?;
            let kind = AblationKind::from(kind);
            let sweep = ablate(kind, &cfg)?;
            sweep.write_csv(out)?;
            let first_try = kind != AblationKind::Retry;
            let title = format!("{kind:?} ablation ({} rate)", if first_try { "first-try" } else { "success" });
            fs::write(out.join("sweep.svg"), plot::sweep_svg(&title, &sweep.rows, first_try))?;
            for r in &sweep.rows {
                println!(
                    "{:<10} {:<16} success {:.3} ± {:.3}   first try {:.3} ± {:.3}   ({} episodes)",
                    r.task, r.condition, r.success_rate, r.success_se, r.first_try_rate, r.first_try_se, r.episodes
                );
            }
        }
        Cmd::ServeTeleop { config, port, host, seed, out, print_config } => {
            let mut cfg: TeleopConfig = match &config {
                Some(p) => read_json(p)?,
                None => TeleopConfig::default(),
            };
            if let Some(p) = port {
                cfg.port = p;
            }
            if let Some(h) = host {
                cfg.host = h;
            }
            if let Some(s) = seed {
                cfg.env_seed = s;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if print_config {
                return print_json(&cfg);
            }
            let server = TeleopServer::bind(cfg)?;
            println!("teleop server on ws://{}", server.local_addr()?);
            server.run()?;
        }
        Cmd::Replay { logs, tolerance, out } => {
            let mut files = Vec::new();
            for p in logs {
                if p.is_dir() {
                    let mut in_dir: Vec<PathBuf> = fs::read_dir(&p)?
                        .map(|e| e.map(|e| e.path()))
                        .collect::<std::io::Result<_>>()?;
                    in_dir.retain(|f| f.extension().is_some_and(|e| e == "rumlog"));
                    in_dir.sort();
                    files.extend(in_dir);
                } else {
                    files.push(p);
                }
            }
            let mut lines = Vec::new();
            let mut mismatches = 0;
            for f in &files {
                let log = EpisodeLog::load(f).with_context(|| format!("loading {}", f.display()))?;
                let r = replay(&log).with_context(|| format!("replaying {}", f.display()))?;
                let agrees = r.logged_success.is_none_or(|s| s == r.success) && r.max_pose_error <= tolerance;
                mismatches += !agrees as usize;
                println!(
                    "{} {}: {} steps, success {} (logged {}), max pose error {:.2e}{}",
                    if agrees { "ok  " } else { "DIFF" },
                    f.display(),
                    r.steps,
                    r.success,
                    r.logged_success.map_or("-".to_string(), |s| s.to_string()),
                    r.max_pose_error,
                    if r.exact_actions { "" } else { " (actions derived from poses)" }
                );
                lines.push(serde_json::json!({ "file": f, "agrees": agrees, "outcome": r }).to_string());
            }
            if let Some(o) = out {
                fs::write(&o, lines.join("\n") + "\n")?;
            }
            if mismatches > 0 {
                bail!("{mismatches} of {} logs did not replay to their recorded outcome", files.len());
            }
        }
    }
    Ok(())
}
