//! Scripted demonstration collection into multi-rate episode logs.
//!
//! Each control step spans one period at `CONTROL_HZ`. Poses are written at
//! 30 Hz by interpolating between control states, the gripper at 15 Hz as a
//! linear ramp, and observations at 15 Hz as the latest state with fresh
//! sensor noise, so logs look like an unsynchronized recording rig.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::datalog::{EpisodeLog, EpisodeMeta, Expertise, Source, StreamRates, StreamSample};
use crate::geom::{wrap_angle, Delta2, Pose2, Pose3, RelAction2};
use crate::sim2d::{
    mix_seed, observe, reset_at, scripted_expert, step, success, EnvSpec, Frame, Mode, NonexpertDemonstrator,
    NonexpertProfile, SimError, SimState, GRID_SIZE,
};

pub const CONTROL_HZ: f64 = 3.75;
pub const POSE_HZ: f64 = 30.0;
pub const GRIPPER_HZ: f64 = 15.0;
pub const OBS_HZ: f64 = 15.0;
pub const DEMO_MAX_STEPS: usize = 120;
/// Zero-motion steps recorded after a demonstration completes.
pub const SETTLE_STEPS: usize = 4;

const POSE_PER_STEP: usize = 8;
const AUX_PER_STEP: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Demonstrator {
    Expert(Mode),
    Nonexpert { profile: NonexpertProfile, mode: Mode },
}

impl Demonstrator {
    pub fn expertise(&self) -> Expertise {
        match self {
            Demonstrator::Expert(_) => Expertise::Expert,
            Demonstrator::Nonexpert { .. } => Expertise::Nonexpert,
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            Demonstrator::Expert(m) | Demonstrator::Nonexpert { mode: m, .. } => *m,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Demo {
    pub log: EpisodeLog,
    /// Control-rate states, including the initial one.
    pub frames: Vec<Frame>,
    pub actions: Vec<RelAction2>,
    pub success: bool,
    pub aborted: bool,
}

/// Random start near the environment's home pose, wider than the
/// evaluation grid.
pub fn random_start(spec: &EnvSpec, rng: &mut impl Rng) -> Pose2 {
    Pose2::new(
        spec.home.x + rng.random_range(-0.05..0.05),
        spec.home.y + rng.random_range(-0.06..0.06),
        spec.home.theta + rng.random_range(-0.15..0.15),
    )
}

/// Runs a demonstrator until success, abort, or `max_steps`.
pub fn collect(
    spec: &EnvSpec,
    demonstrator: &Demonstrator,
    demonstrator_id: &str,
    seed: u64,
    max_steps: usize,
) -> Result<Demo, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[spec.seed, seed, 0xDE70]));
    let grid_index = rng.random_range(0..GRID_SIZE);
    let start = random_start(spec, &mut rng);
    let mut state = reset_at(spec, grid_index, start)?;
    let mut nonexpert = match demonstrator {
        Demonstrator::Nonexpert { profile, mode } => Some(NonexpertDemonstrator::new(*profile, *mode, rng.random())),
        Demonstrator::Expert(_) => None,
    };
    let mut states = vec![state.clone()];
    let mut actions = Vec::new();
    let mut aborted = false;
    while actions.len() < max_steps && !success(&state, spec) {
        let action = match (&mut nonexpert, demonstrator) {
            (Some(d), _) => d.act(&state, spec),
            (None, Demonstrator::Expert(mode)) => Some(scripted_expert(&state, spec, *mode)),
            (None, Demonstrator::Nonexpert { .. }) => unreachable!(),
        };
        let Some(action) = action else {
            aborted = true;
            break;
        };
        state = step(&state, &action, spec);
        states.push(state.clone());
        actions.push(action);
    }
    let ok = !aborted && success(&state, spec);
    if ok {
        for _ in 0..SETTLE_STEPS {
            let action = RelAction2::new(Delta2::ZERO, state.gripper);
            state = step(&state, &action, spec);
            states.push(state.clone());
            actions.push(action);
        }
    }
    let mut extra = BTreeMap::new();
    extra.insert("env".into(), serde_json::to_value(spec).expect("env spec serializes"));
    extra.insert("grid_index".into(), json!(grid_index));
    extra.insert("start".into(), serde_json::to_value(start).expect("pose serializes"));
    extra.insert("mode".into(), serde_json::to_value(demonstrator.mode()).expect("mode serializes"));
    extra.insert("seed".into(), json!(seed));
    let meta = EpisodeMeta {
        task_id: spec.task.name().into(),
        env_id: spec.env_id.clone(),
        demonstrator_id: demonstrator_id.into(),
        expertise: demonstrator.expertise(),
        source: Source::Scripted,
        success: Some(ok),
        extra,
    };
    let mut noise = ChaCha8Rng::seed_from_u64(rng.random());
    let log = states_to_log(&states, spec, meta, &mut noise);
    let frames = states_to_frames(&states, spec, log_obs_at_steps(&log));
    Ok(Demo { log, frames, actions, success: ok, aborted })
}

fn log_obs_at_steps(log: &EpisodeLog) -> Vec<Vec<f64>> {
    log.obs_stream.iter().step_by(AUX_PER_STEP).map(|s| s.value.clone()).collect()
}

fn states_to_frames(states: &[SimState], _spec: &EnvSpec, obs: Vec<Vec<f64>>) -> Vec<Frame> {
    states
        .iter()
        .zip(obs)
        .map(|(s, o)| Frame { step: s.step_index, state: s.clone(), obs: o })
        .collect()
}

fn lerp_pose(a: &Pose2, b: &Pose2, f: f64) -> Pose2 {
    Pose2::new(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y), a.theta + f * wrap_angle(b.theta - a.theta))
}

/// Multi-rate log of a control-rate state sequence (at least two states).
pub fn states_to_log(states: &[SimState], spec: &EnvSpec, meta: EpisodeMeta, rng: &mut impl Rng) -> EpisodeLog {
    assert!(states.len() >= 2, "a log needs at least one transition");
    let steps = states.len() - 1;
    let mut pose_stream = Vec::with_capacity(steps * POSE_PER_STEP + 1);
    let mut gripper_stream = Vec::with_capacity(steps * AUX_PER_STEP + 1);
    let mut obs_stream = Vec::with_capacity(steps * AUX_PER_STEP + 1);
    for k in 0..steps {
        let (a, b) = (&states[k], &states[k + 1]);
        for j in 0..POSE_PER_STEP {
            let f = j as f64 / POSE_PER_STEP as f64;
            let t = (k * POSE_PER_STEP + j) as f64 / POSE_HZ;
            pose_stream.push(StreamSample { t, value: Pose3::from(lerp_pose(&a.ee, &b.ee, f)) });
        }
        let obs = observe(a, spec, Some(rng));
        for j in 0..AUX_PER_STEP {
            let f = j as f64 / AUX_PER_STEP as f64;
            let t = (k * AUX_PER_STEP + j) as f64 / GRIPPER_HZ;
            gripper_stream.push(StreamSample { t, value: a.gripper + f * (b.gripper - a.gripper) });
            let o = if j == 0 { obs.clone() } else { observe(a, spec, Some(rng)) };
            obs_stream.push(StreamSample { t, value: o });
        }
    }
    let last = &states[steps];
    pose_stream.push(StreamSample { t: (steps * POSE_PER_STEP) as f64 / POSE_HZ, value: Pose3::from(last.ee) });
    gripper_stream.push(StreamSample { t: (steps * AUX_PER_STEP) as f64 / GRIPPER_HZ, value: last.gripper });
    obs_stream.push(StreamSample { t: (steps * AUX_PER_STEP) as f64 / OBS_HZ, value: observe(last, spec, Some(rng)) });
    EpisodeLog {
        meta,
        rates: StreamRates { pose_hz: POSE_HZ, gripper_hz: GRIPPER_HZ, obs_hz: OBS_HZ },
        pose_stream,
        gripper_stream,
        obs_stream,
    }
}
