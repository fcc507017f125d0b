//! Teleoperation server: a WebSocket endpoint that lets one operator drive
//! the simulated gripper and record demonstrations as episode logs.
//!
//! Protocol `rum-teleop/1`, JSON text frames. The message schema lives in
//! `docs/teleop-protocol.md`.

use std::collections::BTreeMap;
use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tungstenite::{Message, WebSocket};

use crate::datalog::{EpisodeLog, EpisodeMeta, Expertise, Source, StreamRates, StreamSample};
use crate::geom::{Delta2, Pose2, Pose3, RelAction2};
use crate::replay::actions_to_json;
use crate::sim2d::{
    gen_envs, grasp_point, grid_pose, mix_seed, observe, reset_at, step, success, EnvSpec, SimError, SimState, Task,
    GRID_SIZE,
};

pub const PROTOCOL: &str = "rum-teleop/1";
pub const DEFAULT_TICK_HZ: f64 = 30.0;
pub const MAX_SPEED: f64 = 0.4;
pub const MAX_OMEGA: f64 = 2.0;

#[derive(Debug, Error)]
pub enum TeleopError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("websocket: {0}")]
    Ws(#[from] tungstenite::Error),
    #[error(transparent)]
    Datalog(#[from] crate::datalog::DatalogError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid teleop config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TeleopConfig {
    pub host: String,
    /// 0 picks a free port.
    pub port: u16,
    pub out_dir: PathBuf,
    pub tasks: Vec<Task>,
    pub envs_per_task: usize,
    pub env_seed: u64,
    pub tick_hz: f64,
}

impl Default for TeleopConfig {
    fn default() -> Self {
        TeleopConfig {
            host: "127.0.0.1".into(),
            port: 8765,
            out_dir: PathBuf::from("teleop_logs"),
            tasks: Task::ALL.to_vec(),
            envs_per_task: 5,
            env_seed: 0,
            tick_hz: DEFAULT_TICK_HZ,
        }
    }
}

impl TeleopConfig {
    pub fn envs(&self) -> Vec<EnvSpec> {
        self.tasks.iter().flat_map(|&t| gen_envs(t, self.envs_per_task, self.env_seed)).collect()
    }
}

/// Client-to-server payloads.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ClientMsg {
    Hello {
        #[serde(default)]
        client: Option<String>,
        #[serde(default)]
        expertise: Option<Expertise>,
    },
    /// World-frame planar velocity (m/s), angular velocity (rad/s), gripper target.
    Control { vx: f64, vy: f64, omega: f64, gripper: f64 },
    RecordStart {
        #[serde(default)]
        grid: Option<usize>,
    },
    RecordStop {},
    RecordDiscard {},
    EnvSelect {
        #[serde(default)]
        task: Option<Task>,
        index: usize,
    },
}

#[derive(Debug, Clone, Copy, Default)]
struct Control {
    vx: f64,
    vy: f64,
    omega: f64,
    gripper: f64,
}

impl Control {
    fn action(&self, ee: &Pose2, dt: f64) -> RelAction2 {
        let speed = self.vx.hypot(self.vy);
        let scale = if speed > MAX_SPEED { MAX_SPEED / speed } else { 1.0 };
        let d = ee.to_body([self.vx * scale * dt, self.vy * scale * dt]);
        let omega = self.omega.clamp(-MAX_OMEGA, MAX_OMEGA);
        RelAction2::new(Delta2::new(d[0], d[1], omega * dt), self.gripper.clamp(0.0, 1.0))
    }
}

struct Recording {
    started: Instant,
    grid_index: usize,
    start: Pose2,
    actions: Vec<RelAction2>,
    poses: Vec<StreamSample<Pose3>>,
    gripper: Vec<StreamSample<f64>>,
    obs: Vec<StreamSample<Vec<f64>>>,
    noise: ChaCha8Rng,
}

impl Recording {
    fn now(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    fn push_pose(&mut self, state: &SimState, spec: &EnvSpec) {
        let t = bump(self.now(), self.poses.last().map(|s| s.t));
        self.poses.push(StreamSample { t, value: Pose3::from(state.ee) });
        let o = observe(state, spec, Some(&mut self.noise));
        let t = bump(t, self.obs.last().map(|s| s.t));
        self.obs.push(StreamSample { t, value: o });
    }

    fn push_gripper(&mut self, value: f64) {
        let t = bump(self.now(), self.gripper.last().map(|s| s.t));
        self.gripper.push(StreamSample { t, value: value.clamp(0.0, 1.0) });
    }
}

/// Keeps a stream strictly increasing under a coarse clock.
fn bump(t: f64, last: Option<f64>) -> f64 {
    match last {
        Some(l) if t <= l => l + 1e-6,
        _ => t,
    }
}

pub struct TeleopServer {
    cfg: TeleopConfig,
    envs: Arc<Vec<EnvSpec>>,
    listener: TcpListener,
    busy: Arc<AtomicBool>,
    stop: Arc<AtomicBool>,
}

impl TeleopServer {
    pub fn bind(cfg: TeleopConfig) -> Result<Self, TeleopError> {
        if !(cfg.tick_hz > 0.0 && cfg.tick_hz <= 100.0) {
            return Err(TeleopError::Config(format!("tick rate {} must be in (0, 100]", cfg.tick_hz)));
        }
        let envs = cfg.envs();
        if envs.is_empty() {
            return Err(TeleopError::Config("no environments".into()));
        }
        std::fs::create_dir_all(&cfg.out_dir)?;
        let listener = TcpListener::bind((cfg.host.as_str(), cfg.port))?;
        listener.set_nonblocking(true)?;
        Ok(TeleopServer {
            cfg,
            envs: Arc::new(envs),
            listener,
            busy: Arc::new(AtomicBool::new(false)),
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, TeleopError> {
        Ok(self.listener.local_addr()?)
    }

    /// Setting the flag makes [`run`](Self::run) return after its next poll.
    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    /// Accepts connections until stopped. Each connection gets its own
    /// thread; only one of them holds the session.
    pub fn run(self) -> Result<(), TeleopError> {
        log::info!("teleop listening on ws://{}", self.local_addr()?);
        while !self.stop.load(Ordering::Relaxed) {
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    let cfg = self.cfg.clone();
                    let envs = self.envs.clone();
                    let busy = self.busy.clone();
                    let stop = self.stop.clone();
                    thread::spawn(move || {
                        if let Err(e) = handle_connection(stream, &cfg, &envs, &busy, &stop) {
                            log::warn!("teleop connection {peer}: {e}");
                        }
                    });
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    }
}

/// Releases the session flag when the owning connection ends.
struct SessionGuard<'a>(&'a AtomicBool);

impl Drop for SessionGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

fn handle_connection(
    stream: TcpStream,
    cfg: &TeleopConfig,
    envs: &[EnvSpec],
    busy: &AtomicBool,
    stop: &AtomicBool,
) -> Result<(), TeleopError> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let mut ws = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => TeleopError::Ws(e),
        tungstenite::HandshakeError::Interrupted(_) => TeleopError::Config("handshake interrupted".into()),
    })?;
    if busy.compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire).is_err() {
        let mut out = Outbox::new();
        out.error("session busy", true);
        out.flush_blocking(&mut ws);
        close(&mut ws);
        return Ok(());
    }
    let _guard = SessionGuard(busy);
    ws.get_ref().set_nonblocking(true)?;
    Session::new(cfg, envs).run(&mut ws, stop)
}

fn close(ws: &mut WebSocket<TcpStream>) {
    let _ = ws.get_ref().set_nonblocking(false);
    let _ = ws.get_ref().set_read_timeout(Some(Duration::from_millis(500)));
    let _ = ws.close(None);
    // wait for the peer's close frame
    while ws.read().is_ok() {}
}

/// Server messages queued during a tick, sent in order.
struct Outbox {
    seq: u64,
    epoch: Instant,
    queue: Vec<Value>,
}

impl Outbox {
    fn new() -> Self {
        Outbox { seq: 0, epoch: Instant::now(), queue: Vec::new() }
    }

    fn push(&mut self, kind: &str, payload: Value) {
        self.seq += 1;
        let mut msg = json!({
            "v": PROTOCOL,
            "seq": self.seq,
            "t_ms": self.epoch.elapsed().as_millis() as u64,
            "type": kind,
        });
        if let (Value::Object(m), Value::Object(p)) = (&mut msg, payload) {
            m.extend(p);
        }
        self.queue.push(msg);
    }

    fn error(&mut self, message: &str, fatal: bool) {
        self.push("error", json!({ "message": message, "fatal": fatal }));
    }

    /// Writes everything queued. `false` means the connection is unusable.
    fn flush(&mut self, ws: &mut WebSocket<TcpStream>) -> bool {
        for msg in self.queue.drain(..) {
            match ws.write(Message::text(msg.to_string())) {
                Ok(()) => {}
                Err(tungstenite::Error::Io(e)) if e.kind() == ErrorKind::WouldBlock => {}
                // the client is not reading; drop frames rather than grow the buffer
                Err(tungstenite::Error::WriteBufferFull(_)) => {}
                Err(e) => {
                    log::debug!("teleop send failed: {e}");
                    return false;
                }
            }
        }
        match ws.flush() {
            Ok(()) => true,
            Err(tungstenite::Error::Io(e)) if e.kind() == ErrorKind::WouldBlock => true,
            Err(_) => false,
        }
    }

    fn flush_blocking(&mut self, ws: &mut WebSocket<TcpStream>) {
        let _ = ws.get_ref().set_nonblocking(false);
        self.flush(ws);
    }
}

enum Inbound {
    Handled,
    /// Version mismatch or peer close: end the session.
    Close,
}

struct Session<'a> {
    cfg: &'a TeleopConfig,
    envs: &'a [EnvSpec],
    env: usize,
    state: SimState,
    control: Control,
    greeted: bool,
    client: String,
    expertise: Expertise,
    last_seq: Option<u64>,
    last_control_seq: Option<u64>,
    last_client_t_ms: Option<u64>,
    dropped_controls: u64,
    recording: Option<Recording>,
    takes: u64,
    saved: u64,
    out: Outbox,
}

impl<'a> Session<'a> {
    fn new(cfg: &'a TeleopConfig, envs: &'a [EnvSpec]) -> Self {
        let state = reset_at(&envs[0], 0, grid_pose(&envs[0], 0).expect("grid 0 exists")).expect("reset");
        Session {
            cfg,
            envs,
            env: 0,
            control: Control { gripper: state.gripper, ..Control::default() },
            state,
            greeted: false,
            client: "teleop".into(),
            expertise: Expertise::Expert,
            last_seq: None,
            last_control_seq: None,
            last_client_t_ms: None,
            dropped_controls: 0,
            recording: None,
            takes: 0,
            saved: 0,
            out: Outbox::new(),
        }
    }

    fn spec(&self) -> &'a EnvSpec {
        &self.envs[self.env]
    }

    fn run(mut self, ws: &mut WebSocket<TcpStream>, stop: &AtomicBool) -> Result<(), TeleopError> {
        let period = Duration::from_secs_f64(1.0 / self.cfg.tick_hz);
        let mut next = Instant::now();
        while !stop.load(Ordering::Relaxed) {
            loop {
                match ws.read() {
                    Ok(Message::Text(text)) => {
                        if let Inbound::Close = self.handle_text(text.as_str()) {
                            self.out.flush_blocking(ws);
                            close(ws);
                            return Ok(());
                        }
                    }
                    Ok(Message::Close(_)) => {
                        self.discard_on_disconnect();
                        return Ok(());
                    }
                    Ok(Message::Binary(_)) => self.out.error("binary frames are not supported", false),
                    Ok(_) => {}
                    Err(tungstenite::Error::Io(e)) if e.kind() == ErrorKind::WouldBlock => break,
                    Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => {
                        self.discard_on_disconnect();
                        return Ok(());
                    }
                    Err(e) => {
                        self.discard_on_disconnect();
                        return Err(e.into());
                    }
                }
            }
            if self.greeted {
                self.tick();
                self.push_scene();
            }
            if !self.out.flush(ws) {
                self.discard_on_disconnect();
                return Ok(());
            }
            next += period;
            let now = Instant::now();
            if next > now {
                thread::sleep(next - now);
            } else {
                next = now;
            }
        }
        self.out.flush_blocking(ws);
        close(ws);
        Ok(())
    }

    fn discard_on_disconnect(&mut self) {
        if self.recording.take().is_some() {
            log::info!("teleop client disconnected; recording discarded");
        }
    }

    fn tick(&mut self) {
        let dt = 1.0 / self.cfg.tick_hz;
        let action = self.control.action(&self.state.ee, dt);
        self.state = step(&self.state, &action, self.spec());
        let spec = self.spec();
        if let Some(rec) = &mut self.recording {
            rec.actions.push(action);
            rec.push_pose(&self.state, spec);
        }
    }

    fn push_scene(&mut self) {
        let spec = self.spec();
        let payload = json!({
            "env_id": spec.env_id,
            "task": spec.task,
            "state": self.state,
            "landmark": spec.landmark(),
            "grasp_point": grasp_point(&self.state, spec),
            "success": success(&self.state, spec),
            "recording": self.recording.is_some(),
            "recorded_steps": self.recording.as_ref().map_or(0, |r| r.actions.len()),
            "saved_demos": self.saved,
            "dropped_controls": self.dropped_controls,
            "last_control_seq": self.last_control_seq,
            "echo_t_ms": self.last_client_t_ms,
        });
        self.out.push("scene", payload);
    }

    fn handle_text(&mut self, text: &str) -> Inbound {
        let value: Value = match serde_json::from_str(text) {
            Ok(v @ Value::Object(_)) => v,
            Ok(_) => {
                self.out.error("malformed message: expected a JSON object", false);
                return Inbound::Handled;
            }
            Err(e) => {
                self.out.error(&format!("malformed JSON: {e}"), false);
                return Inbound::Handled;
            }
        };
        match value.get("v").and_then(Value::as_str) {
            Some(PROTOCOL) => {}
            Some(other) => {
                self.out.error(&format!("protocol version mismatch: server speaks {PROTOCOL}, client sent {other}"), true);
                return Inbound::Close;
            }
            None => {
                self.out.error(&format!("missing protocol version; expected \"v\": \"{PROTOCOL}\""), true);
                return Inbound::Close;
            }
        }
        let Some(seq) = value.get("seq").and_then(Value::as_u64) else {
            self.out.error("missing or invalid sequence number", false);
            return Inbound::Handled;
        };
        let t_ms = value.get("t_ms").and_then(Value::as_u64);
        let mut body = value;
        if let Value::Object(m) = &mut body {
            m.remove("v");
            m.remove("seq");
            m.remove("t_ms");
        }
        let msg: ClientMsg = match serde_json::from_value(body) {
            Ok(m) => m,
            Err(e) => {
                self.out.error(&format!("malformed message: {e}"), false);
                return Inbound::Handled;
            }
        };
        let in_order = self.last_seq.is_none_or(|last| seq > last);
        if in_order {
            self.last_seq = Some(seq);
            self.last_client_t_ms = t_ms.or(self.last_client_t_ms);
        }
        if !self.greeted && !matches!(msg, ClientMsg::Hello { .. }) {
            self.out.error("expected hello first", false);
            return Inbound::Handled;
        }
        match msg {
            ClientMsg::Hello { client, expertise } => self.hello(seq, client, expertise),
            ClientMsg::Control { vx, vy, omega, gripper } => {
                if !in_order {
                    self.dropped_controls += 1;
                } else if ![vx, vy, omega, gripper].iter().all(|x| x.is_finite()) {
                    self.out.error("control values must be finite", false);
                } else {
                    self.control = Control { vx, vy, omega, gripper: gripper.clamp(0.0, 1.0) };
                    self.last_control_seq = Some(seq);
                    let g = self.control.gripper;
                    if let Some(rec) = &mut self.recording {
                        rec.push_gripper(g);
                    }
                }
            }
            ClientMsg::RecordStart { grid } => self.record_start(seq, grid),
            ClientMsg::RecordStop {} => self.record_stop(seq),
            ClientMsg::RecordDiscard {} => {
                let had = self.recording.take().is_some();
                self.out.push("ack", json!({ "of": seq, "what": "record_discard", "discarded": had }));
            }
            ClientMsg::EnvSelect { task, index } => self.env_select(seq, task, index),
        }
        Inbound::Handled
    }

    fn hello(&mut self, seq: u64, client: Option<String>, expertise: Option<Expertise>) {
        if let Some(c) = client {
            self.client = c;
        }
        if let Some(e) = expertise {
            self.expertise = e;
        }
        self.greeted = true;
        let envs: Vec<Value> =
            self.envs.iter().map(|e| json!({ "env_id": e.env_id, "task": e.task })).collect();
        self.out.push(
            "hello",
            json!({
                "of": seq,
                "server": format!("rum-teleop {}", env!("CARGO_PKG_VERSION")),
                "tick_hz": self.cfg.tick_hz,
                "grid_size": GRID_SIZE,
                "max_speed": MAX_SPEED,
                "max_omega": MAX_OMEGA,
                "envs": envs,
                "env": self.spec(),
            }),
        );
    }

    fn reset_to(&mut self, grid: usize) -> Result<Pose2, SimError> {
        let spec = self.spec();
        let start = grid_pose(spec, grid)?;
        self.state = reset_at(spec, grid, start)?;
        self.control = Control { gripper: self.state.gripper, ..Control::default() };
        Ok(start)
    }

    fn record_start(&mut self, seq: u64, grid: Option<usize>) {
        let grid = grid.unwrap_or((self.takes % GRID_SIZE as u64) as usize);
        let start = match self.reset_to(grid) {
            Ok(p) => p,
            Err(e) => {
                self.out.error(&e.to_string(), false);
                return;
            }
        };
        if self.recording.is_some() {
            log::info!("teleop record_start while recording; previous take discarded");
        }
        let spec = self.spec();
        self.takes += 1;
        let mut rec = Recording {
            started: Instant::now(),
            grid_index: grid,
            start,
            actions: Vec::new(),
            poses: Vec::new(),
            gripper: Vec::new(),
            obs: Vec::new(),
            noise: ChaCha8Rng::seed_from_u64(mix_seed(&[spec.seed, self.takes, 0x7E1E])),
        };
        rec.push_pose(&self.state, spec);
        rec.push_gripper(self.state.gripper);
        self.recording = Some(rec);
        self.out.push("ack", json!({ "of": seq, "what": "record_start", "grid": grid, "state": self.state }));
    }

    fn record_stop(&mut self, seq: u64) {
        let Some(mut rec) = self.recording.take() else {
            self.out.error("record_stop without an active recording", false);
            return;
        };
        if rec.actions.is_empty() {
            self.out.error("recording has no steps; nothing written", false);
            return;
        }
        rec.push_gripper(self.state.gripper);
        let spec = self.spec();
        let ok = success(&self.state, spec);
        let steps = rec.actions.len();
        let log = recording_log(rec, spec, &self.client, self.expertise, ok, self.cfg.tick_hz);
        match write_log(&log, &self.cfg.out_dir, &spec.env_id) {
            Ok(path) => {
                self.saved += 1;
                log::info!("teleop wrote {} ({steps} steps, success {ok})", path.display());
                self.out.push(
                    "ack",
                    json!({
                        "of": seq, "what": "record_stop", "path": path, "steps": steps, "success": ok, "state": self.state,
                    }),
                );
            }
            Err(e) => self.out.error(&format!("could not write log: {e}"), false),
        }
    }

    fn env_select(&mut self, seq: u64, task: Option<Task>, index: usize) {
        let pick = match task {
            Some(t) => self.envs.iter().enumerate().filter(|(_, e)| e.task == t).nth(index).map(|(i, _)| i),
            None => (index < self.envs.len()).then_some(index),
        };
        let Some(env) = pick else {
            self.out.error(&format!("no environment at index {index}"), false);
            return;
        };
        let discarded = self.recording.take().is_some();
        self.env = env;
        if let Err(e) = self.reset_to(0) {
            self.out.error(&e.to_string(), false);
            return;
        }
        self.out.push("ack", json!({ "of": seq, "what": "env_select", "env": self.spec(), "discarded": discarded }));
    }
}

fn recording_log(
    rec: Recording,
    spec: &EnvSpec,
    client: &str,
    expertise: Expertise,
    ok: bool,
    tick_hz: f64,
) -> EpisodeLog {
    let duration = rec.poses.last().map_or(0.0, |s| s.t).max(1e-9);
    let gripper_hz = (rec.gripper.len().saturating_sub(1) as f64 / duration).min(60.0);
    let mut extra = BTreeMap::new();
    extra.insert("env".into(), serde_json::to_value(spec).expect("env spec serializes"));
    extra.insert("grid_index".into(), json!(rec.grid_index));
    extra.insert("start".into(), serde_json::to_value(rec.start).expect("pose serializes"));
    extra.insert("control_hz".into(), json!(tick_hz));
    extra.insert("actions".into(), actions_to_json(&rec.actions));
    let meta = EpisodeMeta {
        task_id: spec.task.name().into(),
        env_id: spec.env_id.clone(),
        demonstrator_id: client.into(),
        expertise,
        source: Source::Teleop,
        success: Some(ok),
        extra,
    };
    EpisodeLog {
        meta,
        rates: StreamRates { pose_hz: tick_hz, gripper_hz, obs_hz: tick_hz },
        pose_stream: rec.poses,
        gripper_stream: rec.gripper,
        obs_stream: rec.obs,
    }
}

/// Writes `<dir>/<env_id>_teleop_<n>.rumlog` with the first free `n`.
fn write_log(log: &EpisodeLog, dir: &Path, env_id: &str) -> Result<PathBuf, TeleopError> {
    log.validate()?;
    for n in 0u32.. {
        let path = dir.join(format!("{env_id}_teleop_{n:04}.rumlog"));
        if !path.exists() {
            log.save(&path)?;
            return Ok(path);
        }
    }
    unreachable!("u32 range exhausted")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_is_integrated_in_the_body_frame() {
        let ee = Pose2::new(0.1, 0.2, std::f64::consts::FRAC_PI_2);
        let a = Control { vx: 0.3, vy: 0.0, omega: 0.6, gripper: 0.5 }.action(&ee, 0.1);
        // world +x is body -y when facing +y
        assert!(a.delta.dx.abs() < 1e-12 && (a.delta.dy + 0.03).abs() < 1e-12);
        assert!((a.delta.dtheta - 0.06).abs() < 1e-12);
        assert_eq!(a.gripper, 0.5);
    }

    #[test]
    fn control_speed_is_capped() {
        let a = Control { vx: 3.0, vy: 4.0, omega: -10.0, gripper: 2.0 }.action(&Pose2::new(0.0, 0.0, 0.0), 1.0);
        assert!((a.delta.dx.hypot(a.delta.dy) - MAX_SPEED).abs() < 1e-12);
        assert_eq!(a.delta.dtheta, -MAX_OMEGA);
        assert_eq!(a.gripper, 1.0);
    }

    #[test]
    fn bump_keeps_streams_increasing() {
        assert_eq!(bump(1.0, None), 1.0);
        assert_eq!(bump(1.0, Some(0.5)), 1.0);
        assert!(bump(1.0, Some(1.0)) > 1.0);
    }
}
