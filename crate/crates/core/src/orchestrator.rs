//! Deployment loop: roll out, summarize, ask a critic, and on a failure
//! verdict reset to a perturbed home pose and try again.

pub mod critic;

use std::collections::BTreeMap;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Delta2, Pose2, RelAction2};
use crate::policy::{predict_action, Decoding, PolicyParams};
use crate::rvq::Codebook;
use crate::sim2d::{
    grid_pose, mix_seed, observe, reset_at, scripted_expert, step, success, summarize, EnvSpec, Frame, Mode, SimState,
    Task,
};

use critic::{Critic, CriticError, CriticQuery, CriticVerdict};

/// Chooses actions for one try at a time.
pub trait Controller {
    /// Called before every try with a seed unique to that try.
    fn begin_try(&mut self, spec: &EnvSpec, seed: u64);
    /// Next chunk of actions, executed open loop. `history` is oldest first.
    fn plan(&mut self, history: &[Vec<f64>], state: &SimState, spec: &EnvSpec) -> Vec<RelAction2>;
}

/// A trained policy, queried once per chunk.
pub struct PolicyController<'a> {
    pub params: &'a PolicyParams,
    pub codebook: Option<&'a Codebook>,
    pub decoding: Decoding,
    rng: ChaCha8Rng,
}

impl<'a> PolicyController<'a> {
    pub fn new(params: &'a PolicyParams, codebook: Option<&'a Codebook>, decoding: Decoding) -> Self {
        Self { params, codebook, decoding, rng: ChaCha8Rng::seed_from_u64(0) }
    }
}

impl Controller for PolicyController<'_> {
    fn begin_try(&mut self, _spec: &EnvSpec, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn plan(&mut self, history: &[Vec<f64>], _state: &SimState, _spec: &EnvSpec) -> Vec<RelAction2> {
        let flat: Vec<f64> = history.iter().flatten().copied().collect();
        predict_action(self.params, &flat, self.codebook, self.decoding, &mut self.rng)
            .unwrap_or_else(|e| {
                log::warn!("policy query failed: {e}");
                vec![RelAction2::new(Delta2::ZERO, 1.0)]
            })
    }
}

/// The scripted expert, re-planned every step.
pub struct ExpertController(pub Mode);

impl Controller for ExpertController {
    fn begin_try(&mut self, _spec: &EnvSpec, _seed: u64) {}

    fn plan(&mut self, _history: &[Vec<f64>], state: &SimState, spec: &EnvSpec) -> Vec<RelAction2> {
        vec![scripted_expert(state, spec, self.0)]
    }
}

/// Succeeds on each try independently with probability `p`: the expert
/// drives successful tries, failing tries stand still.
pub struct BernoulliStub {
    pub p: f64,
    succeed: bool,
}

impl BernoulliStub {
    pub fn new(p: f64) -> Self {
        Self { p, succeed: false }
    }
}

impl Controller for BernoulliStub {
    fn begin_try(&mut self, _spec: &EnvSpec, seed: u64) {
        self.succeed = ChaCha8Rng::seed_from_u64(seed).random::<f64>() < self.p;
    }

    fn plan(&mut self, _history: &[Vec<f64>], state: &SimState, spec: &EnvSpec) -> Vec<RelAction2> {
        if self.succeed {
            vec![scripted_expert(state, spec, Mode::A)]
        } else {
            vec![RelAction2::new(Delta2::ZERO, 1.0)]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_tries: usize,
    /// Uniform ± range of the start position perturbation on retries (m).
    pub perturb_xy: f64,
    /// Uniform ± range of the start heading perturbation on retries (rad).
    pub perturb_theta: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_tries: 10, perturb_xy: 0.03, perturb_theta: 0.1 }
    }
}

impl RetryPolicy {
    pub fn off() -> Self {
        Self { max_tries: 1, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Control steps per try.
    pub t_max: usize,
    /// Observation frames fed to the controller.
    pub history: usize,
    pub retry: RetryPolicy,
    /// Extra attempts after a critic transport error.
    pub transport_retries: usize,
    pub backoff_ms: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { t_max: 50, history: 6, retry: RetryPolicy::default(), transport_retries: 3, backoff_ms: 250 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Initial frame followed by one frame per executed step.
    pub frames: Vec<Frame>,
    pub actions: Vec<RelAction2>,
    pub success: bool,
}

/// Runs one try. Stops early once the task is complete.
pub fn rollout<C: Controller + ?Sized>(
    spec: &EnvSpec,
    start: SimState,
    controller: &mut C,
    t_max: usize,
    history: usize,
    obs_seed: u64,
) -> Rollout {
    let mut rng = ChaCha8Rng::seed_from_u64(obs_seed);
    let mut state = start;
    let first = observe(&state, spec, Some(&mut rng));
    let mut obs_hist = vec![first.clone(); history.max(1)];
    let mut frames = vec![Frame { step: state.step_index, state: state.clone(), obs: first }];
    let mut actions = Vec::new();
    'outer: while actions.len() < t_max && !success(&state, spec) {
        let chunk = controller.plan(&obs_hist, &state, spec);
        if chunk.is_empty() {
            break;
        }
        for a in chunk {
            state = step(&state, &a, spec);
            let obs = observe(&state, spec, Some(&mut rng));
            obs_hist.remove(0);
            obs_hist.push(obs.clone());
            frames.push(Frame { step: state.step_index, state: state.clone(), obs });
            actions.push(a);
            if actions.len() >= t_max || success(&state, spec) {
                break 'outer;
            }
        }
    }
    let ok = success(&state, spec);
    Rollout { frames, actions, success: ok }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TryRecord {
    pub try_index: usize,
    pub start: Pose2,
    pub steps: usize,
    pub oracle_success: bool,
    pub verdict: Option<CriticVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EpisodeStatus {
    Completed,
    /// The critic could not be reached; excluded from rates.
    TransportError { message: String },
    /// The critic endpoint rejected the request; excluded from rates.
    EndpointError { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub env_id: String,
    pub task: Task,
    pub grid_index: usize,
    pub seed: u64,
    pub status: EpisodeStatus,
    pub tries_used: usize,
    pub tries: Vec<TryRecord>,
    pub critic_accepted: bool,
    /// Oracle outcome of the last try.
    pub oracle_success: bool,
    pub first_try_success: bool,
    /// The critic accepted a try the oracle marks failed.
    pub false_positive: bool,
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("no episode results")]
    EmptyResults,
    #[error(transparent)]
    Sim(#[from] crate::sim2d::SimError),
}

fn judge_with_retries(
    critic: &dyn Critic,
    q: &CriticQuery<'_>,
    retries: usize,
    backoff: Duration,
) -> Result<CriticVerdict, CriticError> {
    let mut attempt = 0;
    loop {
        match critic.judge(q) {
            Ok(v) => return Ok(v),
            Err(e) if e.is_retriable() && attempt < retries => {
                log::debug!("critic attempt {attempt} failed: {e}");
                std::thread::sleep(backoff * 2u32.pow(attempt as u32));
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

fn perturbed_start(spec: &EnvSpec, grid_index: usize, retry: &RetryPolicy, seed: u64) -> Result<Pose2, OrchestratorError> {
    let home = grid_pose(spec, grid_index)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (xy, th) = (retry.perturb_xy, retry.perturb_theta);
    let jitter = |rng: &mut ChaCha8Rng, r: f64| if r > 0.0 { rng.random_range(-r..r) } else { 0.0 };
    Ok(Pose2::new(home.x + jitter(&mut rng, xy), home.y + jitter(&mut rng, xy), home.theta + jitter(&mut rng, th)))
}

/// Try `t` of the episode seeded by `seed`, exactly as [`run_episode`] runs it.
pub fn run_try<C: Controller + ?Sized>(
    spec: &EnvSpec,
    grid_index: usize,
    t: usize,
    controller: &mut C,
    cfg: &RunConfig,
    seed: u64,
) -> Result<(Pose2, Rollout), OrchestratorError> {
    let start = if t == 0 {
        grid_pose(spec, grid_index)?
    } else {
        perturbed_start(spec, grid_index, &cfg.retry, mix_seed(&[seed, t as u64, 0x9E7]))?
    };
    let state = reset_at(spec, grid_index, start)?;
    controller.begin_try(spec, mix_seed(&[seed, t as u64, 0xC7]));
    let roll = rollout(spec, state, controller, cfg.t_max, cfg.history, mix_seed(&[seed, t as u64, 0x0B5]));
    Ok((start, roll))
}

/// One evaluation episode with the retry loop.
pub fn run_episode<C: Controller + ?Sized>(
    spec: &EnvSpec,
    grid_index: usize,
    controller: &mut C,
    critic: &dyn Critic,
    cfg: &RunConfig,
    seed: u64,
) -> Result<EpisodeResult, OrchestratorError> {
    let max_tries = cfg.retry.max_tries.max(1);
    let mut tries = Vec::new();
    let mut status = EpisodeStatus::Completed;
    let mut accepted = false;
    for t in 0..max_tries {
        let (start, roll) = run_try(spec, grid_index, t, controller, cfg, seed)?;
        let summary = summarize(&roll.frames, spec)?;
        let final_state = &roll.frames.last().expect("rollout has an initial frame").state;
        let q = CriticQuery { spec, summary: &summary, frames: &roll.frames, final_state, episode_seed: seed, try_index: t };
        let verdict = judge_with_retries(critic, &q, cfg.transport_retries, Duration::from_millis(cfg.backoff_ms));
        let mut record =
            TryRecord { try_index: t, start, steps: roll.actions.len(), oracle_success: roll.success, verdict: None };
        match verdict {
            Ok(v) => {
                accepted = v.is_success();
                record.verdict = Some(v);
                tries.push(record);
                if accepted {
                    break;
                }
            }
            Err(e) => {
                status = match e {
                    CriticError::Transport(_) => EpisodeStatus::TransportError { message: e.to_string() },
                    CriticError::Endpoint { .. } => EpisodeStatus::EndpointError { message: e.to_string() },
                };
                tries.push(record);
                break;
            }
        }
    }
    let last = tries.last().expect("at least one try");
    let oracle_success = last.oracle_success;
    Ok(EpisodeResult {
        env_id: spec.env_id.clone(),
        task: spec.task,
        grid_index,
        seed,
        status,
        tries_used: tries.len(),
        first_try_success: tries[0].oracle_success,
        critic_accepted: accepted,
        oracle_success,
        false_positive: accepted && !oracle_success,
        tries,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct EpisodeJob<'a> {
    pub spec: &'a EnvSpec,
    pub grid_index: usize,
    pub seed: u64,
}

/// Every `(env, grid index)` pair once, seeded per episode.
pub fn grid_jobs(envs: &[EnvSpec], grid_runs: usize, seed: u64) -> Vec<EpisodeJob<'_>> {
    envs.iter()
        .flat_map(|spec| {
            (0..grid_runs).map(move |g| EpisodeJob { spec, grid_index: g, seed: mix_seed(&[seed, spec.seed, g as u64]) })
        })
        .collect()
}

/// Runs jobs on `workers` threads; results keep job order.
pub fn run_batch<C, F>(
    jobs: &[EpisodeJob<'_>],
    make_controller: F,
    critic: &dyn Critic,
    cfg: &RunConfig,
    workers: usize,
) -> Result<Vec<EpisodeResult>, OrchestratorError>
where
    C: Controller,
    F: Fn(&EpisodeJob<'_>) -> C + Sync,
{
    let run = || {
        jobs.par_iter()
            .map(|job| run_episode(job.spec, job.grid_index, &mut make_controller(job), critic, cfg, job.seed))
            .collect::<Result<Vec<_>, _>>()
    };
    if workers <= 1 {
        return jobs
            .iter()
            .map(|job| run_episode(job.spec, job.grid_index, &mut make_controller(job), critic, cfg, job.seed))
            .collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvBreakdown {
    pub env_id: String,
    pub task: Task,
    pub episodes: usize,
    pub success_rate: f64,
    pub first_try_rate: f64,
    pub mean_tries_success: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryReport {
    /// Completed episodes used for every rate below.
    pub episodes: usize,
    pub excluded: usize,
    pub success_rate: f64,
    pub first_try_rate: f64,
    pub improvement: f64,
    /// `histogram[k]` counts episodes that used `k + 1` tries.
    pub tries_histogram: Vec<usize>,
    pub mean_tries_success: Option<f64>,
    /// False-positive episodes over all completed episodes.
    pub false_positive_rate: f64,
    /// Verdicts given on oracle-failed tries.
    pub failed_try_verdicts: usize,
    /// Fraction of those verdicts that said success.
    pub verdict_fp_frequency: Option<f64>,
    pub unparseable_verdicts: usize,
    pub per_env: Vec<EnvBreakdown>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn retry_report(results: &[EpisodeResult]) -> Result<RetryReport, OrchestratorError> {
    if results.is_empty() {
        return Err(OrchestratorError::EmptyResults);
    }
    let done: Vec<&EpisodeResult> = results.iter().filter(|r| r.status == EpisodeStatus::Completed).collect();
    let n = done.len();
    let rate = |f: &dyn Fn(&EpisodeResult) -> bool| {
        if n == 0 {
            0.0
        } else {
            done.iter().filter(|r| f(r)).count() as f64 / n as f64
        }
    };
    let success_rate = rate(&|r| r.oracle_success);
    let first_try_rate = rate(&|r| r.first_try_success);
    let max_tries = done.iter().map(|r| r.tries_used).max().unwrap_or(1);
    let mut tries_histogram = vec![0; max_tries];
    for r in &done {
        tries_histogram[r.tries_used - 1] += 1;
    }
    let verdicts: Vec<&CriticVerdict> = done
        .iter()
        .flat_map(|r| r.tries.iter())
        .filter(|t| !t.oracle_success)
        .filter_map(|t| t.verdict.as_ref())
        .collect();
    let mut by_env: BTreeMap<&str, Vec<&EpisodeResult>> = BTreeMap::new();
    for r in &done {
        by_env.entry(r.env_id.as_str()).or_default().push(r);
    }
    let per_env = by_env
        .into_iter()
        .map(|(env, rs)| {
            let k = rs.len() as f64;
            EnvBreakdown {
                env_id: env.to_string(),
                task: rs[0].task,
                episodes: rs.len(),
                success_rate: rs.iter().filter(|r| r.oracle_success).count() as f64 / k,
                first_try_rate: rs.iter().filter(|r| r.first_try_success).count() as f64 / k,
                mean_tries_success: mean(rs.iter().filter(|r| r.oracle_success).map(|r| r.tries_used as f64)),
            }
        })
        .collect();
    Ok(RetryReport {
        episodes: n,
        excluded: results.len() - n,
        success_rate,
        first_try_rate,
        improvement: success_rate - first_try_rate,
        tries_histogram,
        mean_tries_success: mean(done.iter().filter(|r| r.oracle_success).map(|r| r.tries_used as f64)),
        false_positive_rate: rate(&|r| r.false_positive),
        failed_try_verdicts: verdicts.len(),
        verdict_fp_frequency: mean(verdicts.iter().map(|v| v.is_success() as u8 as f64)),
        unparseable_verdicts: done
            .iter()
            .flat_map(|r| r.tries.iter())
            .filter(|t| t.verdict.as_ref().is_some_and(|v| v.unparseable))
            .count(),
        per_env,
    })
}

#[cfg(test)]
mod tests {
    use super::critic::{NoisyCritic, OracleCritic};
    use super::*;
    use crate::sim2d::gen_envs;

    struct StandStill;

    impl Controller for StandStill {
        fn begin_try(&mut self, _: &EnvSpec, _: u64) {}
        fn plan(&mut self, _: &[Vec<f64>], _: &SimState, _: &EnvSpec) -> Vec<RelAction2> {
            vec![RelAction2::new(Delta2::ZERO, 1.0)]
        }
    }

    #[test]
    fn perfect_policy_uses_one_try() {
        let spec = &gen_envs(Task::Door, 1, 0)[0];
        let r = run_episode(spec, 0, &mut ExpertController(Mode::A), &OracleCritic, &RunConfig::default(), 1).unwrap();
        assert_eq!(r.tries_used, 1);
        assert!(r.oracle_success && r.critic_accepted && !r.false_positive);
    }

    #[test]
    fn failing_policy_times_out() {
        let spec = &gen_envs(Task::Drawer, 1, 0)[0];
        let r = run_episode(spec, 3, &mut StandStill, &OracleCritic, &RunConfig::default(), 1).unwrap();
        assert_eq!(r.tries_used, 10);
        assert!(!r.oracle_success && !r.critic_accepted);
        assert!(r.tries[1..].iter().all(|t| t.start != r.tries[0].start));
    }

    #[test]
    fn false_negatives_force_full_episodes() {
        let spec = &gen_envs(Task::Pickup, 1, 0)[0];
        let critic = NoisyCritic::new(OracleCritic, 0.0, 1.0, 5);
        let r = run_episode(spec, 0, &mut ExpertController(Mode::B), &critic, &RunConfig::default(), 2).unwrap();
        assert_eq!(r.tries_used, 10);
        assert!(r.tries.iter().all(|t| t.oracle_success));
    }

    #[test]
    fn retry_off_runs_once() {
        let spec = &gen_envs(Task::Reorient, 1, 0)[0];
        let cfg = RunConfig { retry: RetryPolicy::off(), ..RunConfig::default() };
        let r = run_episode(spec, 0, &mut StandStill, &OracleCritic, &cfg, 0).unwrap();
        assert_eq!(r.tries_used, 1);
    }

    #[test]
    fn report_on_perfect_batch() {
        let envs = gen_envs(Task::Door, 2, 0);
        let jobs = grid_jobs(&envs, 3, 0);
        let rs = run_batch(&jobs, |_| ExpertController(Mode::A), &OracleCritic, &RunConfig::default(), 2).unwrap();
        let rep = retry_report(&rs).unwrap();
        assert_eq!(rep.episodes, 6);
        assert_eq!((rep.improvement, rep.mean_tries_success, rep.false_positive_rate), (0.0, Some(1.0), 0.0));
        assert_eq!(rep.per_env.len(), 2);
        assert!(retry_report(&[]).is_err());
    }
}
