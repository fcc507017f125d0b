//! Re-simulating recorded episodes.
//!
//! Logs written by the demonstrators, the teleop server and evaluation
//! rollouts carry the environment spec, the start pose and grid index in
//! their metadata. Teleop and rollout logs also store the exact applied
//! actions; for the rest, actions are derived from the log resampled at the
//! control rate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::datalog::{self, DatalogError, EpisodeLog, EpisodeMeta, Expertise, Source};
use crate::demos::{states_to_log, CONTROL_HZ};
use crate::geom::{Delta2, Pose2, RelAction2};
use crate::sim2d::{mix_seed, reset_at, step, success, EnvSpec, SimError, SimState};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("log metadata lacks `{0}`")]
    MissingMeta(&'static str),
    #[error("log metadata field `{0}` is malformed: {1}")]
    BadMeta(&'static str, String),
    #[error(transparent)]
    Datalog(#[from] DatalogError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Per-step actions as `[[dx, dy, dtheta, g], ...]`.
pub fn actions_to_json(actions: &[RelAction2]) -> Value {
    Value::Array(actions.iter().map(|a| json!([a.delta.dx, a.delta.dy, a.delta.dtheta, a.gripper])).collect())
}

pub fn actions_from_json(v: &Value) -> Result<Vec<RelAction2>, ReplayError> {
    let rows: Vec<[f64; 4]> =
        serde_json::from_value(v.clone()).map_err(|e| ReplayError::BadMeta("actions", e.to_string()))?;
    Ok(rows.into_iter().map(|r| RelAction2::new(Delta2::new(r[0], r[1], r[2]), r[3])).collect())
}

fn field<T: for<'de> Deserialize<'de>>(meta: &EpisodeMeta, key: &'static str) -> Result<T, ReplayError> {
    let v = meta.extra.get(key).ok_or(ReplayError::MissingMeta(key))?;
    serde_json::from_value(v.clone()).map_err(|e| ReplayError::BadMeta(key, e.to_string()))
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplayOutcome {
    pub env_id: String,
    pub steps: usize,
    /// Actions came from the log metadata rather than being derived.
    pub exact_actions: bool,
    pub final_state: SimState,
    pub success: bool,
    pub logged_success: Option<bool>,
    /// Largest end-effector position gap to the logged pose at the same time.
    pub max_pose_error: f64,
}

/// Replays `log` from its recorded start.
pub fn replay(log: &EpisodeLog) -> Result<ReplayOutcome, ReplayError> {
    let spec: EnvSpec = field(&log.meta, "env")?;
    let start: Pose2 = field(&log.meta, "start")?;
    let grid: usize = field(&log.meta, "grid_index")?;
    let (actions, rate, exact) = match log.meta.extra.get("actions") {
        Some(v) => {
            let rate: f64 = field(&log.meta, "control_hz").unwrap_or(CONTROL_HZ);
            (actions_from_json(v)?, rate, true)
        }
        None => {
            let seq = datalog::resample(log, CONTROL_HZ)?;
            let acts = datalog::step_actions(&seq)?.into_iter().map(RelAction2::from).collect();
            (acts, CONTROL_HZ, false)
        }
    };
    let mut state = reset_at(&spec, grid, start)?;
    let t0 = log.pose_stream.first().map_or(0.0, |s| s.t);
    // One pose per applied action (teleop ticks) pairs by index; otherwise by time.
    let by_index = exact && log.pose_stream.len() == actions.len() + 1;
    let logged_at = |k: usize| {
        let i = if by_index {
            k
        } else {
            let t = t0 + k as f64 / rate;
            log.pose_stream.partition_point(|s| s.t <= t + 1e-9).saturating_sub(1)
        };
        log.pose_stream[i].value.p
    };
    let gap = |s: &SimState, k: usize| {
        let p = logged_at(k);
        ((s.ee.x - p[0]).powi(2) + (s.ee.y - p[1]).powi(2)).sqrt()
    };
    let mut max_pose_error = if log.pose_stream.is_empty() { 0.0 } else { gap(&state, 0) };
    for (k, a) in actions.iter().enumerate() {
        state = step(&state, a, &spec);
        if !log.pose_stream.is_empty() {
            max_pose_error = max_pose_error.max(gap(&state, k + 1));
        }
    }
    Ok(ReplayOutcome {
        env_id: spec.env_id.clone(),
        steps: actions.len(),
        exact_actions: exact,
        success: success(&state, &spec),
        final_state: state,
        logged_success: log.meta.success,
        max_pose_error,
    })
}

/// A control-rate state sequence as a `source = rollout` log that
/// [`replay`] can re-simulate.
pub fn rollout_log(
    spec: &EnvSpec,
    grid_index: usize,
    start: Pose2,
    states: &[SimState],
    actions: &[RelAction2],
    seed: u64,
) -> EpisodeLog {
    let mut extra = std::collections::BTreeMap::new();
    extra.insert("env".into(), serde_json::to_value(spec).expect("env spec serializes"));
    extra.insert("grid_index".into(), json!(grid_index));
    extra.insert("start".into(), serde_json::to_value(start).expect("pose serializes"));
    extra.insert("control_hz".into(), json!(CONTROL_HZ));
    extra.insert("actions".into(), actions_to_json(actions));
    let meta = EpisodeMeta {
        task_id: spec.task.name().into(),
        env_id: spec.env_id.clone(),
        demonstrator_id: "policy".into(),
        expertise: Expertise::Expert,
        source: Source::Rollout,
        success: states.last().map(|s| success(s, spec)),
        extra,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[spec.seed, seed, 0x20]));
    states_to_log(states, spec, meta, &mut rng)
}
