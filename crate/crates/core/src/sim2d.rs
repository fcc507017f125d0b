//! Deterministic planar manipulation environments.
//!
//! Four task archetypes share one workspace `[0, 1]²`. The robot starts on
//! the left facing `+x`, the fixture (handle or object) sits on the right,
//! and an optional blocker between them forces a detour above or below.
//! Environments differ in fixture geometry and in a per-environment affine
//! distortion of the landmark reading, so a policy cannot rely on memorizing
//! one calibration.
//!
//! Observation layout (`OBS_DIM = 12`):
//!
//! | idx  | content                                                       |
//! |------|---------------------------------------------------------------|
//! | 0-1  | end-effector position                                         |
//! | 2-3  | cos/sin of heading                                            |
//! | 4    | gripper aperture                                              |
//! | 5-6  | grasp landmark in the body frame, distorted, noisy            |
//! | 7    | fixture reading (door angle, drawer extension, object angle,  |
//! |      | object lift), noisy                                           |
//! | 8-9  | body-frame object-to-goal offset (zero for door and drawer)   |
//! | 10-11| two-bit task code                                             |

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{apply, wrap_angle, Affine2, Delta2, Pose2, RelAction2};

pub const OBS_DIM: usize = 12;
pub const MAX_STEP_TRANSLATION: f64 = 0.05;
pub const MAX_STEP_ROTATION: f64 = 0.3;
pub const GRASP_RADIUS: f64 = 0.02;
/// Grasp engages below this aperture.
pub const GRASP_CLOSE: f64 = 0.3;
/// Grasp releases above this aperture.
pub const GRASP_RELEASE: f64 = 0.7;
pub const GRID_SIZE: usize = 10;
/// Generation seeds at or above this value are reserved for evaluation.
pub const EVAL_SEED_BASE: u64 = 10_000;
/// Object jitter applied at reset when randomization is on.
pub const OBJECT_JITTER: f64 = 0.03;

const APPROACH_STEP: f64 = 0.045;
const FINE_STEP: f64 = 0.015;
const FINE_RADIUS: f64 = 0.06;
const TASK_STEP: f64 = 0.03;
const TURN_STEP: f64 = 0.25;
const CLOSE_DIST: f64 = 0.004;
const DETOUR_CLEARANCE: f64 = 0.17;
const BLOCKER_OFFSET: f64 = 0.28;
const HOME_OFFSET: f64 = 0.55;

/// Start offsets `(dx, dy, dtheta)` relative to an environment's home pose.
pub const START_GRID: [[f64; 3]; GRID_SIZE] = [
    [0.0, 0.0, 0.0],
    [0.0, 0.05, 0.0],
    [0.0, -0.05, 0.0],
    [-0.04, 0.025, 0.1],
    [-0.04, -0.025, -0.1],
    [0.04, 0.025, -0.1],
    [0.04, -0.025, 0.1],
    [-0.04, 0.05, -0.05],
    [0.04, -0.05, 0.05],
    [0.0, 0.0, 0.15],
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("grid index {0} out of range 0..{GRID_SIZE}")]
    GridIndex(usize),
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("unknown task `{0}`")]
    UnknownTask(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Door,
    Drawer,
    Reorient,
    Pickup,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Door, Task::Drawer, Task::Reorient, Task::Pickup];

    pub fn name(self) -> &'static str {
        match self {
            Task::Door => "door",
            Task::Drawer => "drawer",
            Task::Reorient => "reorient",
            Task::Pickup => "pickup",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn is_object_task(self) -> bool {
        matches!(self, Task::Reorient | Task::Pickup)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| SimError::UnknownTask(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PickupObject {
    Tissue,
    Bag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Fixture {
    /// Handle at `hinge + radius (-sin φ, side cos φ)` for door angle φ.
    Door { hinge: [f64; 2], radius: f64, side: f64, open_threshold: f64, max_angle: f64 },
    /// Handle slides from `handle` along the unit `axis`.
    Drawer { handle: [f64; 2], axis: [f64; 2], open_threshold: f64, max_extension: f64 },
    Reorient { object: [f64; 2], goal: [f64; 2], goal_radius: f64, upright_tolerance: f64 },
    /// Success once held and raised `lift` above the resting height.
    Pickup { object: [f64; 2], lift: f64, object_kind: PickupObject },
}

/// Axis-aligned box the end effector cannot enter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blocker {
    pub center: [f64; 2],
    pub half_extents: [f64; 2],
}

impl Blocker {
    fn contains(&self, p: [f64; 2]) -> bool {
        (p[0] - self.center[0]).abs() < self.half_extents[0] && (p[1] - self.center[1]).abs() < self.half_extents[1]
    }

    /// Contact stops the motion: a move ending inside the box is cancelled.
    fn resolve(&self, prev: [f64; 2], p: [f64; 2]) -> [f64; 2] {
        if self.contains(p) {
            prev
        } else {
            p
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nuisance {
    /// Applied to the body-frame landmark reading.
    pub distortion: Affine2,
    pub obs_noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Embodiment {
    pub step_gain: f64,
    pub gripper_latency_steps: u8,
}

impl Default for Embodiment {
    fn default() -> Self {
        Self { step_gain: 1.0, gripper_latency_steps: 0 }
    }
}

impl Embodiment {
    /// The transfer target used by the embodiment ablation.
    pub fn shifted() -> Self {
        Self { step_gain: 0.85, gripper_latency_steps: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub env_id: String,
    pub seed: u64,
    pub task: Task,
    pub fixture: Fixture,
    pub blocker: Option<Blocker>,
    pub nuisance: Nuisance,
    pub embodiment: Embodiment,
    /// Nominal start pose; grid offsets are relative to it.
    pub home: Pose2,
    pub randomize_object: bool,
}

impl EnvSpec {
    pub fn with_embodiment(&self, embodiment: Embodiment) -> EnvSpec {
        EnvSpec { embodiment, ..self.clone() }
    }

    /// Closed handle or resting object position.
    pub fn landmark(&self) -> [f64; 2] {
        match &self.fixture {
            Fixture::Door { hinge, radius, side, .. } => [hinge[0], hinge[1] + side * radius],
            Fixture::Drawer { handle, .. } => *handle,
            Fixture::Reorient { object, .. } | Fixture::Pickup { object, .. } => *object,
        }
    }

    pub fn pickup_object(&self) -> Option<PickupObject> {
        match &self.fixture {
            Fixture::Pickup { object_kind, .. } => Some(*object_kind),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenOptions {
    pub blocker: bool,
    pub randomize_object: bool,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self { blocker: true, randomize_object: true }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes several seeds into one; used wherever a sub-stream needs its own RNG.
pub fn mix_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED_u64, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn is_eval_seed(seed: u64) -> bool {
    seed >= EVAL_SEED_BASE
}

pub fn gen_envs(task: Task, n: usize, seed: u64) -> Vec<EnvSpec> {
    gen_envs_with(task, n, seed, &GenOptions::default())
}

/// `n` environments with independently drawn geometry and nuisance.
///
/// Ranges: landmark `x ∈ [0.68, 0.80]`, `y ∈ [0.38, 0.62]`; door radius
/// `[0.15, 0.25]`, open threshold `[0.45, 0.65]` rad; drawer axis within
/// ±0.3 rad of `-x`, threshold `[0.10, 0.15]`; reorient goal `[0.06, 0.12]`
/// from the object; pickup lift `[0.12, 0.16]` (tissue) or `[0.08, 0.12]`
/// (bag); landmark distortion rotation ±0.15 rad, scales `[0.85, 1.15]`,
/// shear ±0.1, offset ±0.003; observation noise `[0, 0.002]`.
pub fn gen_envs_with(task: Task, n: usize, seed: u64, opts: &GenOptions) -> Vec<EnvSpec> {
    (0..n)
        .map(|i| {
            let env_seed = mix_seed(&[task.index() as u64, seed, i as u64]);
            gen_env(task, env_seed, format!("{task}-{seed}-{i}"), opts)
        })
        .collect()
}

fn gen_env(task: Task, env_seed: u64, env_id: String, opts: &GenOptions) -> EnvSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(env_seed);
    let lm = [rng.random_range(0.68..0.80), rng.random_range(0.38..0.62)];
    let fixture = match task {
        Task::Door => {
            let radius = rng.random_range(0.15..0.25);
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let open_threshold = rng.random_range(0.45..0.65);
            Fixture::Door {
                hinge: [lm[0], lm[1] - side * radius],
                radius,
                side,
                open_threshold,
                max_angle: open_threshold + 0.4,
            }
        }
        Task::Drawer => {
            let alpha: f64 = rng.random_range(-0.3..0.3);
            Fixture::Drawer {
                handle: lm,
                axis: [-alpha.cos(), alpha.sin()],
                open_threshold: rng.random_range(0.10..0.15),
                max_extension: 0.25,
            }
        }
        Task::Reorient => {
            let dist = rng.random_range(0.06..0.12);
            let ang: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            Fixture::Reorient {
                object: lm,
                goal: [lm[0] + dist * ang.cos(), lm[1] + dist * ang.sin()],
                goal_radius: 0.04,
                upright_tolerance: 0.2,
            }
        }
        Task::Pickup => {
            let object_kind = if rng.random_bool(0.5) { PickupObject::Tissue } else { PickupObject::Bag };
            let lift = match object_kind {
                PickupObject::Tissue => rng.random_range(0.12..0.16),
                PickupObject::Bag => rng.random_range(0.08..0.12),
            };
            Fixture::Pickup { object: lm, lift, object_kind }
        }
    };
    let rot: f64 = rng.random_range(-0.15..0.15);
    let (s, c) = rot.sin_cos();
    let sx = rng.random_range(0.85..1.15);
    let sy = rng.random_range(0.85..1.15);
    let sh = rng.random_range(-0.1..0.1);
    // R(rot) * [[sx, sh], [0, sy]]
    let distortion = Affine2 {
        a: [[c * sx, c * sh - s * sy], [s * sx, s * sh + c * sy]],
        b: [rng.random_range(-0.003..0.003), rng.random_range(-0.003..0.003)],
    };
    let obs_noise = rng.random_range(0.0..0.002);
    EnvSpec {
        env_id,
        seed: env_seed,
        task,
        fixture,
        blocker: opts
            .blocker
            .then_some(Blocker { center: [lm[0] - BLOCKER_OFFSET, lm[1]], half_extents: [0.03, 0.09] }),
        nuisance: Nuisance { distortion, obs_noise },
        embodiment: Embodiment::default(),
        home: Pose2::new(lm[0] - HOME_OFFSET, lm[1], 0.0),
        randomize_object: opts.randomize_object && task.is_object_task(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub ee: Pose2,
    pub gripper: f64,
    /// Commanded apertures not yet applied, oldest first.
    pub pending_gripper: Vec<f64>,
    pub held: bool,
    /// Door angle (rad), drawer extension (m), or object lift / angle.
    pub fixture_dof: f64,
    pub object: Option<Pose2>,
    /// Object pose in the end-effector frame while held.
    pub grasp_offset: Option<Pose2>,
    pub step_index: u32,
}

pub fn grid_pose(spec: &EnvSpec, grid_index: usize) -> Result<Pose2, SimError> {
    let o = START_GRID.get(grid_index).ok_or(SimError::GridIndex(grid_index))?;
    Ok(Pose2::new(spec.home.x + o[0], spec.home.y + o[1], spec.home.theta + o[2]))
}

pub fn reset(spec: &EnvSpec, grid_index: usize) -> Result<SimState, SimError> {
    let ee = grid_pose(spec, grid_index)?;
    reset_at(spec, grid_index, ee)
}

/// Reset with an explicit end-effector pose; object randomization still
/// follows `(spec.seed, grid_index)`.
pub fn reset_at(spec: &EnvSpec, grid_index: usize, ee: Pose2) -> Result<SimState, SimError> {
    if grid_index >= GRID_SIZE {
        return Err(SimError::GridIndex(grid_index));
    }
    let object = match &spec.fixture {
        Fixture::Reorient { object, .. } | Fixture::Pickup { object, .. } => {
            let mut o = *object;
            if spec.randomize_object {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[spec.seed, grid_index as u64, 0x0B7E]));
                o[0] += rng.random_range(-OBJECT_JITTER..OBJECT_JITTER);
                o[1] += rng.random_range(-OBJECT_JITTER..OBJECT_JITTER);
            }
            Some(Pose2::new(o[0], o[1], 0.0))
        }
        _ => None,
    };
    let latency = spec.embodiment.gripper_latency_steps as usize;
    Ok(SimState {
        ee: clamp_workspace(ee),
        gripper: 1.0,
        pending_gripper: vec![1.0; latency],
        held: false,
        fixture_dof: 0.0,
        object,
        grasp_offset: None,
        step_index: 0,
    })
}

fn clamp_workspace(p: Pose2) -> Pose2 {
    Pose2 { x: p.x.clamp(0.0, 1.0), y: p.y.clamp(0.0, 1.0), theta: p.theta }
}

fn door_handle(hinge: [f64; 2], radius: f64, side: f64, angle: f64) -> [f64; 2] {
    [hinge[0] - radius * angle.sin(), hinge[1] + side * radius * angle.cos()]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Where the gripper has to be to grasp the fixture in its current state.
pub fn grasp_point(state: &SimState, spec: &EnvSpec) -> [f64; 2] {
    match &spec.fixture {
        Fixture::Door { hinge, radius, side, .. } => door_handle(*hinge, *radius, *side, state.fixture_dof),
        Fixture::Drawer { handle, axis, .. } => {
            [handle[0] + state.fixture_dof * axis[0], handle[1] + state.fixture_dof * axis[1]]
        }
        Fixture::Reorient { .. } | Fixture::Pickup { .. } => {
            state.object.map_or(spec.landmark(), |o| o.position())
        }
    }
}

/// Advances one control step.
///
/// Order: the gripper takes its (possibly delayed) target, grasp/release is
/// evaluated at the current end-effector position, then the scaled and
/// clamped motion is applied and projected onto the fixture constraint.
pub fn step(state: &SimState, action: &RelAction2, spec: &EnvSpec) -> SimState {
    let mut s = state.clone();
    let target = action.gripper.clamp(0.0, 1.0);
    if s.pending_gripper.is_empty() {
        s.gripper = target;
    } else {
        s.gripper = s.pending_gripper.remove(0);
        s.pending_gripper.push(target);
    }

    if s.held && s.gripper > GRASP_RELEASE {
        s.held = false;
        s.grasp_offset = None;
    } else if !s.held && s.gripper < GRASP_CLOSE && dist(s.ee.position(), grasp_point(&s, spec)) <= GRASP_RADIUS {
        s.held = true;
        if let Some(obj) = s.object {
            s.grasp_offset = crate::geom::relative(&s.ee, &obj).ok().map(|d| Pose2::new(d.dx, d.dy, d.dtheta));
        }
    }

    let gain = spec.embodiment.step_gain;
    let (mut dx, mut dy) = (gain * action.delta.dx, gain * action.delta.dy);
    let n = (dx * dx + dy * dy).sqrt();
    if n > MAX_STEP_TRANSLATION {
        dx *= MAX_STEP_TRANSLATION / n;
        dy *= MAX_STEP_TRANSLATION / n;
    }
    let dtheta = (gain * action.delta.dtheta).clamp(-MAX_STEP_ROTATION, MAX_STEP_ROTATION);
    if dx != 0.0 || dy != 0.0 || dtheta != 0.0 {
        let prev = s.ee.position();
        let mut ee = clamp_workspace(apply(&s.ee, &Delta2::new(dx, dy, dtheta)).expect("planar apply is total"));
        if let Some(b) = &spec.blocker {
            let [x, y] = b.resolve(prev, ee.position());
            ee.x = x;
            ee.y = y;
        }
        s.ee = ee;
    }

    if s.held {
        match &spec.fixture {
            Fixture::Door { hinge, radius, side, max_angle, .. } => {
                let v = [s.ee.x - hinge[0], s.ee.y - hinge[1]];
                let angle = (-v[0]).atan2(side * v[1]).clamp(0.0, *max_angle);
                let [x, y] = door_handle(*hinge, *radius, *side, angle);
                s.fixture_dof = angle;
                s.ee.x = x;
                s.ee.y = y;
            }
            Fixture::Drawer { handle, axis, max_extension, .. } => {
                let e = ((s.ee.x - handle[0]) * axis[0] + (s.ee.y - handle[1]) * axis[1]).clamp(0.0, *max_extension);
                s.fixture_dof = e;
                s.ee.x = handle[0] + e * axis[0];
                s.ee.y = handle[1] + e * axis[1];
            }
            Fixture::Reorient { .. } | Fixture::Pickup { .. } => {
                if let Some(off) = s.grasp_offset {
                    let obj = apply(&s.ee, &Delta2::new(off.x, off.y, off.theta)).expect("planar apply is total");
                    s.object = Some(obj);
                }
            }
        }
    }
    if let (Fixture::Pickup { .. }, Some(before), Some(after)) = (&spec.fixture, state.object, s.object) {
        s.fixture_dof += after.y - before.y;
    }
    if let (Fixture::Reorient { .. }, Some(obj)) = (&spec.fixture, s.object) {
        s.fixture_dof = obj.theta;
    }
    s.step_index += 1;
    s
}

fn is_upright(obj: &Pose2, tolerance: f64) -> bool {
    wrap_angle(obj.theta - FRAC_PI_2).abs() <= tolerance
}

/// Ground-truth task completion; a pure function of the state.
pub fn success(state: &SimState, spec: &EnvSpec) -> bool {
    match &spec.fixture {
        Fixture::Door { open_threshold, .. } | Fixture::Drawer { open_threshold, .. } => {
            state.fixture_dof >= *open_threshold
        }
        Fixture::Reorient { goal, goal_radius, upright_tolerance, .. } => state.object.is_some_and(|o| {
            !state.held && dist(o.position(), *goal) <= *goal_radius && is_upright(&o, *upright_tolerance)
        }),
        Fixture::Pickup { lift, .. } => state.held && state.fixture_dof >= *lift,
    }
}

/// Observation vector; pass an RNG to add the environment's sensor noise.
pub fn observe<R: Rng + ?Sized>(state: &SimState, spec: &EnvSpec, rng: Option<&mut R>) -> Vec<f64> {
    let ee = state.ee;
    let gp = grasp_point(state, spec);
    let rel = ee.to_body([gp[0] - ee.x, gp[1] - ee.y]);
    let mut lm = spec.nuisance.distortion.apply(rel);
    let mut dof = state.fixture_dof;
    if let Some(rng) = rng {
        let sigma = spec.nuisance.obs_noise;
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("finite sigma");
            lm[0] += normal.sample(rng);
            lm[1] += normal.sample(rng);
            dof += normal.sample(rng);
        }
    }
    let offset = match (&spec.fixture, state.object) {
        (Fixture::Reorient { goal, .. }, Some(o)) => ee.to_body([goal[0] - o.x, goal[1] - o.y]),
        (Fixture::Pickup { lift, .. }, Some(_)) => ee.to_body([0.0, lift - state.fixture_dof]),
        _ => [0.0, 0.0],
    };
    let code = spec.task.index();
    vec![
        ee.x,
        ee.y,
        ee.theta.cos(),
        ee.theta.sin(),
        state.gripper,
        lm[0],
        lm[1],
        dof,
        offset[0],
        offset[1],
        (code & 1) as f64,
        ((code >> 1) & 1) as f64,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Detour above the blocker.
    A,
    /// Detour below the blocker.
    B,
}

pub fn detour_waypoint(spec: &EnvSpec, mode: Mode) -> [f64; 2] {
    let lm = spec.landmark();
    let sign = match mode {
        Mode::A => 1.0,
        Mode::B => -1.0,
    };
    [lm[0] - BLOCKER_OFFSET, lm[1] + sign * DETOUR_CLEARANCE]
}

fn toward(ee: &Pose2, target: [f64; 2], max_step: f64) -> [f64; 2] {
    let v = [target[0] - ee.x, target[1] - ee.y];
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    let v = if n > max_step { [v[0] * max_step / n, v[1] * max_step / n] } else { v };
    ee.to_body(v)
}

struct ExpertKnobs {
    waypoint: [f64; 2],
    close_dist: f64,
}

fn expert_policy(state: &SimState, spec: &EnvSpec, knobs: &ExpertKnobs) -> RelAction2 {
    let ee = state.ee;
    if success(state, spec) {
        return RelAction2::new(Delta2::ZERO, state.gripper);
    }
    if !state.held {
        let target = grasp_point(state, spec);
        let d = dist(ee.position(), target);
        let turn = (-ee.theta).clamp(-TURN_STEP, TURN_STEP);
        if state.gripper < GRASP_RELEASE && d > GRASP_RADIUS {
            // closed on nothing: reopen in place
            return RelAction2::new(Delta2::ZERO, 1.0);
        }
        if d <= knobs.close_dist {
            return RelAction2::new(Delta2::ZERO, 0.0);
        }
        let goal = if ee.x < knobs.waypoint[0] - 1e-3 { knobs.waypoint } else { target };
        let max_step = if goal == target && d < FINE_RADIUS { FINE_STEP } else { APPROACH_STEP };
        let [dx, dy] = toward(&ee, goal, max_step);
        return RelAction2::new(Delta2::new(dx, dy, turn), 1.0);
    }
    match &spec.fixture {
        Fixture::Door { side, open_threshold, .. } => {
            if state.fixture_dof < open_threshold + 0.05 {
                let a = state.fixture_dof;
                let w = [-a.cos() * TASK_STEP, -side * a.sin() * TASK_STEP];
                let [dx, dy] = ee.to_body(w);
                RelAction2::new(Delta2::new(dx, dy, 0.0), 0.0)
            } else {
                RelAction2::new(Delta2::ZERO, 0.0)
            }
        }
        Fixture::Drawer { axis, .. } => {
            let [dx, dy] = ee.to_body([axis[0] * TASK_STEP, axis[1] * TASK_STEP]);
            RelAction2::new(Delta2::new(dx, dy, 0.0), 0.0)
        }
        Fixture::Pickup { .. } => {
            let [dx, dy] = ee.to_body([0.0, TASK_STEP]);
            RelAction2::new(Delta2::new(dx, dy, 0.0), 0.0)
        }
        Fixture::Reorient { goal, goal_radius, .. } => {
            let obj = state.object.expect("reorient tasks carry an object");
            let turn_left = wrap_angle(FRAC_PI_2 - obj.theta);
            let off = [goal[0] - obj.x, goal[1] - obj.y];
            let far = (off[0] * off[0] + off[1] * off[1]).sqrt();
            if far <= 0.5 * goal_radius && turn_left.abs() < 0.05 {
                return RelAction2::new(Delta2::ZERO, 1.0);
            }
            let target = [ee.x + off[0], ee.y + off[1]];
            let [dx, dy] = toward(&ee, target, TASK_STEP);
            RelAction2::new(Delta2::new(dx, dy, turn_left.clamp(-TURN_STEP, TURN_STEP)), 0.0)
        }
    }
}

/// Waypoint controller: detour, approach, grasp, task motion, release.
pub fn scripted_expert(state: &SimState, spec: &EnvSpec, mode: Mode) -> RelAction2 {
    expert_policy(state, spec, &ExpertKnobs { waypoint: detour_waypoint(spec, mode), close_dist: CLOSE_DIST })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonexpertProfile {
    pub noise_level: f64,
    pub fail_rate: f64,
}

/// Episode-scoped non-expert demonstrator.
///
/// On top of the expert it adds Gaussian action noise, random pauses, a
/// jittered detour, a sloppier grasp trigger, a chance of giving up after a
/// missed grasp, and early aborts with probability `fail_rate`. All extra
/// behaviour scales with `noise_level` and vanishes at zero.
#[derive(Debug, Clone)]
pub struct NonexpertDemonstrator {
    profile: NonexpertProfile,
    mode: Mode,
    rng: ChaCha8Rng,
    waypoint_jitter: [f64; 2],
    abort_at: Option<u32>,
    pause_left: u32,
    missed: bool,
    last_gripper: f64,
}

impl NonexpertDemonstrator {
    pub fn new(profile: NonexpertProfile, mode: Mode, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let abort_at = (rng.random::<f64>() < profile.fail_rate).then(|| rng.random_range(1..8));
        let jitter = 2.0 * profile.noise_level;
        let waypoint_jitter = if jitter > 0.0 {
            let n = Normal::new(0.0, jitter).expect("finite sigma");
            [n.sample(&mut rng), n.sample(&mut rng)]
        } else {
            [0.0, 0.0]
        };
        Self { profile, mode, rng, waypoint_jitter, abort_at, pause_left: 0, missed: false, last_gripper: 1.0 }
    }

    /// Whether this episode was chosen for an early abort.
    pub fn will_abort(&self) -> bool {
        self.abort_at.is_some()
    }

    /// `None` ends the demonstration early.
    pub fn act(&mut self, state: &SimState, spec: &EnvSpec) -> Option<RelAction2> {
        if self.abort_at.is_some_and(|k| state.step_index >= k) {
            return None;
        }
        let noise = self.profile.noise_level;
        if !state.held && state.gripper < GRASP_CLOSE && !success(state, spec) && !self.missed {
            self.missed = true;
            if noise > 0.0 && self.rng.random_bool(0.5) {
                return None;
            }
        }
        if self.pause_left > 0 {
            self.pause_left -= 1;
            return Some(RelAction2::new(Delta2::ZERO, self.last_gripper));
        }
        let pause_prob = (5.0 * noise).min(0.3);
        if pause_prob > 0.0 && self.rng.random_bool(pause_prob) {
            self.pause_left = self.rng.random_range(0..3);
            return Some(RelAction2::new(Delta2::ZERO, self.last_gripper));
        }
        let wp = detour_waypoint(spec, self.mode);
        let knobs = ExpertKnobs {
            waypoint: [wp[0] + self.waypoint_jitter[0], wp[1] + self.waypoint_jitter[1]],
            close_dist: CLOSE_DIST + noise,
        };
        let mut a = expert_policy(state, spec, &knobs);
        if noise > 0.0 {
            let n = Normal::new(0.0, noise).expect("finite sigma");
            a.delta.dx += n.sample(&mut self.rng);
            a.delta.dy += n.sample(&mut self.rng);
            a.delta.dtheta += 3.0 * n.sample(&mut self.rng);
        }
        self.last_gripper = a.gripper;
        Some(a)
    }
}

/// One recorded control step of a rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub step: u32,
    pub state: SimState,
    pub obs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFrame {
    pub index: usize,
    pub step: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub frames: Vec<SummaryFrame>,
}

impl Summary {
    pub fn indices(&self) -> Vec<usize> {
        self.frames.iter().map(|f| f.index).collect()
    }

    pub fn to_text(&self) -> String {
        self.frames.iter().map(|f| f.text.as_str()).collect::<Vec<_>>().join("\n")
    }
}

/// Every other frame starting at 0, plus the final frame.
pub fn summary_indices(n: usize) -> Result<Vec<usize>, SimError> {
    if n == 0 {
        return Err(SimError::EmptyTrajectory);
    }
    let mut idx: Vec<usize> = (0..n).step_by(2).collect();
    if idx.last() != Some(&(n - 1)) {
        idx.push(n - 1);
    }
    Ok(idx)
}

pub fn summarize(frames: &[Frame], spec: &EnvSpec) -> Result<Summary, SimError> {
    let frames = summary_indices(frames.len())?
        .into_iter()
        .map(|i| {
            let f = &frames[i];
            SummaryFrame { index: i, step: f.step, text: format!("timestep {}: {}", f.step, describe(&f.state, spec)) }
        })
        .collect();
    Ok(Summary { frames })
}

/// Compact textual scene description of one frame.
pub fn describe(state: &SimState, spec: &EnvSpec) -> String {
    let grip = if state.gripper < GRASP_CLOSE {
        "closed"
    } else if state.gripper > GRASP_RELEASE {
        "open"
    } else {
        "half-open"
    };
    let held = match (&spec.fixture, state.held) {
        (_, false) => "grasping nothing".to_string(),
        (Fixture::Door { .. } | Fixture::Drawer { .. }, true) => "grasping the handle".to_string(),
        (Fixture::Reorient { .. }, true) => "grasping the object".to_string(),
        (Fixture::Pickup { object_kind, .. }, true) => match object_kind {
            PickupObject::Tissue => "grasping the tissue".to_string(),
            PickupObject::Bag => "grasping the bag".to_string(),
        },
    };
    let scene = match &spec.fixture {
        Fixture::Door { .. } => format!("door open angle {:.2} rad", state.fixture_dof),
        Fixture::Drawer { .. } => format!("drawer pulled out {:.3} m", state.fixture_dof),
        Fixture::Reorient { goal, .. } => match state.object {
            Some(o) => format!(
                "object at ({:.3}, {:.3}) tilted {:.2} rad from upright, {:.3} m from the target spot",
                o.x,
                o.y,
                wrap_angle(o.theta - FRAC_PI_2).abs(),
                dist(o.position(), *goal)
            ),
            None => "no object".into(),
        },
        Fixture::Pickup { .. } => format!("object raised {:.3} m above its resting spot", state.fixture_dof),
    };
    format!(
        "gripper at ({:.3}, {:.3}) heading {:.2} rad, {grip}, {held}; {scene}",
        state.ee.x, state.ee.y, state.ee.theta
    )
}

/// Small top-down raster of a frame, for critics that accept images.
pub fn render_raster(state: &SimState, spec: &EnvSpec, size: u32) -> image::RgbImage {
    let mut img = image::RgbImage::from_pixel(size, size, image::Rgb([245, 245, 245]));
    let to_px = |p: [f64; 2]| -> (i64, i64) {
        let s = size as f64 - 1.0;
        ((p[0] * s).round() as i64, ((1.0 - p[1]) * s).round() as i64)
    };
    let mut put = |img: &mut image::RgbImage, (x, y): (i64, i64), c: [u8; 3]| {
        if x >= 0 && y >= 0 && (x as u32) < size && (y as u32) < size {
            img.put_pixel(x as u32, y as u32, image::Rgb(c));
        }
    };
    let disk = |img: &mut image::RgbImage, put: &mut dyn FnMut(&mut image::RgbImage, (i64, i64), [u8; 3]), c: [f64; 2], r: f64, col: [u8; 3]| {
        let (cx, cy) = to_px(c);
        let rp = (r * size as f64).ceil().max(1.0) as i64;
        for dy in -rp..=rp {
            for dx in -rp..=rp {
                if dx * dx + dy * dy <= rp * rp {
                    put(img, (cx + dx, cy + dy), col);
                }
            }
        }
    };
    let line = |img: &mut image::RgbImage, put: &mut dyn FnMut(&mut image::RgbImage, (i64, i64), [u8; 3]), a: [f64; 2], b: [f64; 2], col: [u8; 3]| {
        let steps = (size as f64 * dist(a, b) * 2.0).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            put(img, to_px([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]), col);
        }
    };
    if let Some(b) = &spec.blocker {
        for yy in 0..size {
            for xx in 0..size {
                let p = [xx as f64 / (size as f64 - 1.0), 1.0 - yy as f64 / (size as f64 - 1.0)];
                if b.contains(p) {
                    img.put_pixel(xx, yy, image::Rgb([120, 120, 120]));
                }
            }
        }
    }
    match &spec.fixture {
        Fixture::Door { hinge, radius, side, .. } => {
            let h = door_handle(*hinge, *radius, *side, state.fixture_dof);
            line(&mut img, &mut put, *hinge, h, [139, 90, 43]);
        }
        Fixture::Drawer { handle, axis, .. } => {
            let h = grasp_point(state, spec);
            line(&mut img, &mut put, [handle[0] - 0.05 * axis[0], handle[1] - 0.05 * axis[1]], h, [139, 90, 43]);
        }
        Fixture::Reorient { goal, goal_radius, .. } => {
            disk(&mut img, &mut put, *goal, *goal_radius, [190, 230, 190]);
        }
        Fixture::Pickup { .. } => {}
    }
    if let Some(o) = state.object {
        let (s, c) = o.theta.sin_cos();
        line(&mut img, &mut put, [o.x - 0.03 * c, o.y - 0.03 * s], [o.x + 0.03 * c, o.y + 0.03 * s], [30, 60, 200]);
    }
    let col = if state.held { [200, 30, 30] } else if state.gripper < GRASP_CLOSE { [200, 120, 30] } else { [30, 160, 30] };
    disk(&mut img, &mut put, state.ee.position(), 0.015, col);
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rollout_expert(spec: &EnvSpec, grid: usize, mode: Mode, max_steps: usize) -> (SimState, usize) {
        let mut s = reset(spec, grid).unwrap();
        for k in 0..max_steps {
            if success(&s, spec) {
                return (s, k);
            }
            let a = scripted_expert(&s, spec, mode);
            s = step(&s, &a, spec);
        }
        (s, max_steps)
    }

    #[test]
    fn task_names_roundtrip() {
        for t in Task::ALL {
            assert_eq!(t.name().parse::<Task>().unwrap(), t);
        }
        assert!("knob".parse::<Task>().is_err());
    }

    #[test]
    fn env_generation_is_deterministic() {
        assert_eq!(gen_envs(Task::Door, 40, 3), gen_envs(Task::Door, 40, 3));
    }

    #[test]
    fn neighbouring_seeds_share_no_spec() {
        let a = gen_envs(Task::Door, 40, 7);
        let b = gen_envs(Task::Door, 40, 8);
        for x in &a {
            for y in &b {
                assert_ne!(x.fixture, y.fixture);
                assert_ne!(x.nuisance, y.nuisance);
                assert_ne!(x.env_id, y.env_id);
            }
        }
    }

    #[test]
    fn reset_contract() {
        let spec = &gen_envs(Task::Drawer, 1, 0)[0];
        assert_eq!(reset(spec, 3).unwrap(), reset(spec, 3).unwrap());
        assert_eq!(reset(spec, 0).unwrap().fixture_dof, 0.0);
        assert_eq!(reset(spec, 10), Err(SimError::GridIndex(10)));
        let poses: Vec<Pose2> = (0..GRID_SIZE).map(|g| reset(spec, g).unwrap().ee).collect();
        for i in 0..GRID_SIZE {
            for j in i + 1..GRID_SIZE {
                assert_ne!(poses[i], poses[j]);
            }
        }
    }

    #[test]
    fn zero_action_only_advances_clock() {
        for task in Task::ALL {
            let spec = &gen_envs(task, 1, 1)[0];
            let s = reset(spec, 2).unwrap();
            let next = step(&s, &RelAction2::new(Delta2::ZERO, s.gripper), spec);
            assert_eq!(next.step_index, s.step_index + 1);
            assert_eq!(SimState { step_index: s.step_index, ..next }, s);
        }
    }

    #[test]
    fn gripper_latency_delays_one_step() {
        let spec = gen_envs(Task::Door, 1, 1)[0].with_embodiment(Embodiment { step_gain: 1.0, gripper_latency_steps: 1 });
        let s0 = reset(&spec, 0).unwrap();
        let s1 = step(&s0, &RelAction2::new(Delta2::ZERO, 0.0), &spec);
        assert_eq!(s1.gripper, 1.0);
        let s2 = step(&s1, &RelAction2::new(Delta2::ZERO, 0.0), &spec);
        assert_eq!(s2.gripper, 0.0);
    }

    #[test]
    fn drawer_pull_is_prismatic() {
        for gain in [1.0, 0.85, 1.2] {
            let spec = gen_envs(Task::Drawer, 1, 5)[0]
                .with_embodiment(Embodiment { step_gain: gain, gripper_latency_steps: 0 });
            let Fixture::Drawer { handle, axis, .. } = spec.fixture else { unreachable!() };
            let mut s = reset(&spec, 0).unwrap();
            s.ee = Pose2::new(handle[0], handle[1], 0.2);
            s = step(&s, &RelAction2::new(Delta2::ZERO, 0.0), &spec);
            assert!(s.held);
            let start = s.fixture_dof;
            let chunk = 3;
            for _ in 0..chunk {
                let [dx, dy] = s.ee.to_body([0.03 * axis[0], 0.03 * axis[1]]);
                s = step(&s, &RelAction2::new(Delta2::new(dx, dy, 0.0), 0.0), &spec);
            }
            assert!((s.fixture_dof - start - gain * 0.03 * chunk as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn success_boundary() {
        let spec = &gen_envs(Task::Drawer, 1, 9)[0];
        let Fixture::Drawer { open_threshold, .. } = spec.fixture else { unreachable!() };
        let mut s = reset(spec, 0).unwrap();
        s.fixture_dof = open_threshold;
        assert!(success(&s, spec));
        s.fixture_dof = open_threshold - 1e-9;
        assert!(!success(&s, spec));
    }

    #[test]
    fn initial_states_are_not_successes() {
        for task in Task::ALL {
            for spec in gen_envs(task, 10, 2) {
                for g in 0..GRID_SIZE {
                    assert!(!success(&reset(&spec, g).unwrap(), &spec));
                }
            }
        }
    }

    #[test]
    fn expert_completes_every_task() {
        for task in Task::ALL {
            for spec in gen_envs(task, 20, 11) {
                for g in [0, 4, 9] {
                    for mode in [Mode::A, Mode::B] {
                        let (s, k) = rollout_expert(&spec, g, mode, 400);
                        assert!(success(&s, &spec), "{task} {} grid {g} {mode:?} failed after {k}", spec.env_id);
                    }
                }
            }
        }
    }

    #[test]
    fn modes_detour_in_opposite_directions() {
        let spec = &gen_envs(Task::Pickup, 1, 4)[0];
        let s = reset(spec, 0).unwrap();
        let a = scripted_expert(&s, spec, Mode::A);
        let b = scripted_expert(&s, spec, Mode::B);
        let wa = s.ee.to_world([a.delta.dx, a.delta.dy]);
        let wb = s.ee.to_world([b.delta.dx, b.delta.dy]);
        assert!(wa[1] > 0.0 && wb[1] < 0.0);
    }

    #[test]
    fn summary_rule() {
        assert_eq!(summary_indices(10).unwrap(), vec![0, 2, 4, 6, 8, 9]);
        assert_eq!(summary_indices(1).unwrap(), vec![0]);
        assert_eq!(summary_indices(2).unwrap(), vec![0, 1]);
        assert_eq!(summary_indices(5).unwrap(), vec![0, 2, 4]);
        assert_eq!(summary_indices(0), Err(SimError::EmptyTrajectory));
    }

    #[test]
    fn observation_shape_and_task_code() {
        for task in Task::ALL {
            let spec = &gen_envs(task, 1, 0)[0];
            let o = observe::<ChaCha8Rng>(&reset(spec, 0).unwrap(), spec, None);
            assert_eq!(o.len(), OBS_DIM);
            assert_eq!(o[10] as usize + 2 * o[11] as usize, task.index());
            assert!(o.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn raster_has_requested_size() {
        let spec = &gen_envs(Task::Reorient, 1, 0)[0];
        let img = render_raster(&reset(spec, 0).unwrap(), spec, 48);
        assert_eq!(img.dimensions(), (48, 48));
    }

    #[test]
    fn blocker_stops_straight_approach() {
        let spec = &gen_envs(Task::Door, 1, 0)[0];
        let mut s = reset(spec, 0).unwrap();
        for _ in 0..40 {
            s = step(&s, &RelAction2::new(Delta2::new(0.05, 0.0, 0.0), 1.0), spec);
        }
        let b = spec.blocker.unwrap();
        let face = b.center[0] - b.half_extents[0];
        assert!(s.ee.x <= face && s.ee.x > face - 0.05, "{}", s.ee.x);
        let again = step(&s, &RelAction2::new(Delta2::new(0.05, 0.0, 0.0), 1.0), spec);
        assert_eq!(again.ee.position(), s.ee.position());
    }
}
