//! Multi-rate episode logs, resampling onto the control grid and
//! construction of (observation history, action chunk) training pairs.
//!
//! File layout (`RUMLOG1`):
//!
//! ```text
//! "RUMLOG1\n"
//! <JSON header>\n                      format version, meta, stream table
//! repeated per stream:
//!   u64  block length in bytes (everything below)
//!   u32  name length, name bytes
//!   u64  sample count n
//!   u32  payload width w
//!   n    f64 timestamps
//!   n*w  f64 payload, row-major
//! ```
//!
//! All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binfmt;
use crate::geom::{relative, slerp, GeomError, Pose3, Quat, RelAction2, RelAction3};

pub const LOG_MAGIC: &[u8] = b"RUMLOG1\n";
pub const FORMAT_VERSION: u32 = 1;

/// Timestamps closer than this are considered the same instant.
pub const SNAP_TOL: f64 = 1e-9;

/// Per-step width of the planar action layout `[dx, dy, dtheta, gripper]`.
pub const PLANAR_ACTION_DIM: usize = 4;

const POSE_WIDTH: usize = 7;

#[derive(Debug, Error)]
pub enum DatalogError {
    #[error("stream `{stream}` has {count} samples, need at least 2")]
    InsufficientData { stream: &'static str, count: usize },
    #[error("streams do not overlap: {0}")]
    Sync(String),
    #[error("episode of {len} steps is too short for chunk size {chunk}")]
    EmptyEpisode { len: usize, chunk: usize },
    #[error("no data left after filtering")]
    EmptyDataset,
    #[error("invalid log: {0}")]
    InvalidLog(String),
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, DatalogError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expertise {
    Expert,
    Nonexpert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Scripted,
    Teleop,
    Rollout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub task_id: String,
    pub env_id: String,
    pub demonstrator_id: String,
    pub expertise: Expertise,
    pub source: Source,
    pub success: Option<bool>,
    /// Free-form provenance (environment spec, start index, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSample<T> {
    pub t: f64,
    pub value: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamRates {
    pub pose_hz: f64,
    pub gripper_hz: f64,
    pub obs_hz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub meta: EpisodeMeta,
    pub rates: StreamRates,
    pub pose_stream: Vec<StreamSample<Pose3>>,
    pub gripper_stream: Vec<StreamSample<f64>>,
    pub obs_stream: Vec<StreamSample<Vec<f64>>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LogHeader {
    format_version: u32,
    meta: EpisodeMeta,
    streams: Vec<StreamInfo>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StreamInfo {
    name: String,
    width: u32,
    rate_hz: f64,
    count: u64,
}

fn strictly_increasing<T>(s: &[StreamSample<T>]) -> bool {
    s.windows(2).all(|w| w[1].t > w[0].t)
}

impl EpisodeLog {
    pub fn obs_dim(&self) -> usize {
        self.obs_stream.first().map_or(0, |s| s.value.len())
    }

    /// Length of the interval covered by every stream.
    pub fn duration(&self) -> f64 {
        let firsts = [
            self.pose_stream.first().map(|s| s.t),
            self.gripper_stream.first().map(|s| s.t),
            self.obs_stream.first().map(|s| s.t),
        ];
        let lasts = [
            self.pose_stream.last().map(|s| s.t),
            self.gripper_stream.last().map(|s| s.t),
            self.obs_stream.last().map(|s| s.t),
        ];
        let start = firsts.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        let end = lasts.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        (end - start).max(0.0)
    }

    /// Checks the structural invariants of a recorded episode.
    pub fn validate(&self) -> Result<()> {
        if self.pose_stream.is_empty() || self.gripper_stream.is_empty() || self.obs_stream.is_empty() {
            return Err(DatalogError::InvalidLog("empty stream".into()));
        }
        if !strictly_increasing(&self.pose_stream)
            || !strictly_increasing(&self.gripper_stream)
            || !strictly_increasing(&self.obs_stream)
        {
            return Err(DatalogError::InvalidLog("timestamps not strictly increasing".into()));
        }
        if let Some(s) = self.gripper_stream.iter().find(|s| !(0.0..=1.0).contains(&s.value)) {
            return Err(DatalogError::InvalidLog(format!("gripper value {} outside [0, 1]", s.value)));
        }
        let dim = self.obs_dim();
        if self.obs_stream.iter().any(|s| s.value.len() != dim) {
            return Err(DatalogError::InvalidLog("inconsistent observation width".into()));
        }
        for s in &self.pose_stream {
            s.value.check()?;
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let dim = self.obs_dim();
        let header = LogHeader {
            format_version: FORMAT_VERSION,
            meta: self.meta.clone(),
            streams: vec![
                StreamInfo {
                    name: "pose".into(),
                    width: POSE_WIDTH as u32,
                    rate_hz: self.rates.pose_hz,
                    count: self.pose_stream.len() as u64,
                },
                StreamInfo {
                    name: "gripper".into(),
                    width: 1,
                    rate_hz: self.rates.gripper_hz,
                    count: self.gripper_stream.len() as u64,
                },
                StreamInfo {
                    name: "obs".into(),
                    width: dim as u32,
                    rate_hz: self.rates.obs_hz,
                    count: self.obs_stream.len() as u64,
                },
            ],
        };
        binfmt::write_header(w, LOG_MAGIC, &header)?;

        let pose_ts: Vec<f64> = self.pose_stream.iter().map(|s| s.t).collect();
        let pose_vals: Vec<f64> = self
            .pose_stream
            .iter()
            .flat_map(|s| {
                let p = s.value;
                [p.p[0], p.p[1], p.p[2], p.q.w, p.q.x, p.q.y, p.q.z]
            })
            .collect();
        write_block(w, "pose", POSE_WIDTH, &pose_ts, &pose_vals)?;

        let g_ts: Vec<f64> = self.gripper_stream.iter().map(|s| s.t).collect();
        let g_vals: Vec<f64> = self.gripper_stream.iter().map(|s| s.value).collect();
        write_block(w, "gripper", 1, &g_ts, &g_vals)?;

        let o_ts: Vec<f64> = self.obs_stream.iter().map(|s| s.t).collect();
        let o_vals: Vec<f64> = self.obs_stream.iter().flat_map(|s| s.value.iter().copied()).collect();
        write_block(w, "obs", dim, &o_ts, &o_vals)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let header: LogHeader = binfmt::read_header(r, LOG_MAGIC)?;
        if header.format_version != FORMAT_VERSION {
            return Err(DatalogError::InvalidLog(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        let rate = |name: &str| {
            header
                .streams
                .iter()
                .find(|s| s.name == name)
                .map(|s| s.rate_hz)
                .ok_or_else(|| DatalogError::InvalidLog(format!("missing stream `{name}` in header")))
        };
        let rates = StreamRates { pose_hz: rate("pose")?, gripper_hz: rate("gripper")?, obs_hz: rate("obs")? };

        let mut pose_stream = None;
        let mut gripper_stream = None;
        let mut obs_stream = None;
        for info in &header.streams {
            let (name, width, ts, vals) = read_block(r)?;
            if name != info.name || width != info.width as usize || ts.len() as u64 != info.count {
                return Err(DatalogError::InvalidLog(format!("block `{name}` disagrees with header")));
            }
            match name.as_str() {
                "pose" if width == POSE_WIDTH => {
                    pose_stream = Some(
                        ts.iter()
                            .zip(vals.chunks_exact(POSE_WIDTH))
                            .map(|(&t, v)| StreamSample {
                                t,
                                value: Pose3 { p: [v[0], v[1], v[2]], q: Quat::new(v[3], v[4], v[5], v[6]) },
                            })
                            .collect(),
                    )
                }
                "gripper" if width == 1 => {
                    gripper_stream =
                        Some(ts.iter().zip(&vals).map(|(&t, &value)| StreamSample { t, value }).collect())
                }
                "obs" => {
                    obs_stream = Some(if width == 0 {
                        ts.iter().map(|&t| StreamSample { t, value: Vec::new() }).collect()
                    } else {
                        ts.iter()
                            .zip(vals.chunks_exact(width))
                            .map(|(&t, v)| StreamSample { t, value: v.to_vec() })
                            .collect()
                    })
                }
                other => return Err(DatalogError::InvalidLog(format!("unexpected stream `{other}`"))),
            }
        }
        let missing = |n: &str| DatalogError::InvalidLog(format!("missing stream block `{n}`"));
        Ok(EpisodeLog {
            meta: header.meta,
            rates,
            pose_stream: pose_stream.ok_or_else(|| missing("pose"))?,
            gripper_stream: gripper_stream.ok_or_else(|| missing("gripper"))?,
            obs_stream: obs_stream.ok_or_else(|| missing("obs"))?,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

fn write_block<W: Write>(w: &mut W, name: &str, width: usize, ts: &[f64], vals: &[f64]) -> io::Result<()> {
    let len = 4 + name.len() + 8 + 4 + 8 * (ts.len() + vals.len());
    binfmt::write_u64(w, len as u64)?;
    binfmt::write_u32(w, name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    binfmt::write_u64(w, ts.len() as u64)?;
    binfmt::write_u32(w, width as u32)?;
    binfmt::write_f64s(w, ts)?;
    binfmt::write_f64s(w, vals)
}

fn read_block<R: Read>(r: &mut R) -> Result<(String, usize, Vec<f64>, Vec<f64>)> {
    let len = binfmt::read_u64(r)? as usize;
    let name_len = binfmt::read_u32(r)? as usize;
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|_| DatalogError::InvalidLog("stream name not utf-8".into()))?;
    let count = binfmt::read_u64(r)? as usize;
    let width = binfmt::read_u32(r)? as usize;
    if len != 4 + name_len + 8 + 4 + 8 * count * (1 + width) {
        return Err(DatalogError::InvalidLog(format!("block `{name}` length mismatch")));
    }
    let ts = binfmt::read_f64s(r, count)?;
    let vals = binfmt::read_f64s(r, count * width)?;
    Ok((name, width, ts, vals))
}

/// One control-rate step after synchronization.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampledStep {
    pub t: f64,
    pub pose: Pose3,
    pub gripper: f64,
    pub obs: Vec<f64>,
}

enum Located {
    Exact(usize),
    Between(usize, f64),
}

fn locate(ts: &[f64], t: f64) -> Located {
    let idx = ts.partition_point(|&x| x <= t + SNAP_TOL);
    let i = idx.saturating_sub(1);
    if (ts[i] - t).abs() <= SNAP_TOL || i + 1 >= ts.len() {
        Located::Exact(i)
    } else {
        Located::Between(i, (t - ts[i]) / (ts[i + 1] - ts[i]))
    }
}

fn check_stream<T>(name: &'static str, s: &[StreamSample<T>]) -> Result<()> {
    if s.len() < 2 {
        return Err(DatalogError::InsufficientData { stream: name, count: s.len() });
    }
    if !strictly_increasing(s) {
        return Err(DatalogError::InvalidLog(format!("stream `{name}` timestamps not strictly increasing")));
    }
    Ok(())
}

/// Resamples all streams onto the grid `t_start + k / rate_hz`.
///
/// Poses interpolate linearly in position and by slerp in rotation, the
/// gripper linearly, and observations use zero-order hold.
pub fn resample(log: &EpisodeLog, rate_hz: f64) -> Result<Vec<ResampledStep>> {
    if !(rate_hz > 0.0) {
        return Err(DatalogError::InvalidConfig(format!("control rate {rate_hz} must be positive")));
    }
    check_stream("pose", &log.pose_stream)?;
    check_stream("gripper", &log.gripper_stream)?;
    check_stream("obs", &log.obs_stream)?;

    let firsts = [log.pose_stream[0].t, log.gripper_stream[0].t, log.obs_stream[0].t];
    let lasts = [
        log.pose_stream[log.pose_stream.len() - 1].t,
        log.gripper_stream[log.gripper_stream.len() - 1].t,
        log.obs_stream[log.obs_stream.len() - 1].t,
    ];
    let t_start = firsts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let t_end = lasts.iter().copied().fold(f64::INFINITY, f64::min);
    if t_start > t_end + SNAP_TOL {
        return Err(DatalogError::Sync(format!(
            "latest stream start {t_start} is after earliest stream end {t_end}"
        )));
    }
    let n = (((t_end - t_start) * rate_hz) + 1e-9).floor().max(0.0) as usize + 1;

    let pose_ts: Vec<f64> = log.pose_stream.iter().map(|s| s.t).collect();
    let g_ts: Vec<f64> = log.gripper_stream.iter().map(|s| s.t).collect();
    let o_ts: Vec<f64> = log.obs_stream.iter().map(|s| s.t).collect();

    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let t = t_start + k as f64 / rate_hz;
        let pose = match locate(&pose_ts, t) {
            Located::Exact(i) => log.pose_stream[i].value,
            Located::Between(i, f) => {
                let a = &log.pose_stream[i].value;
                let b = &log.pose_stream[i + 1].value;
                Pose3 {
                    p: [
                        a.p[0] + f * (b.p[0] - a.p[0]),
                        a.p[1] + f * (b.p[1] - a.p[1]),
                        a.p[2] + f * (b.p[2] - a.p[2]),
                    ],
                    q: slerp(&a.q, &b.q, f),
                }
            }
        };
        let gripper = match locate(&g_ts, t) {
            Located::Exact(i) => log.gripper_stream[i].value,
            Located::Between(i, f) => {
                let a = log.gripper_stream[i].value;
                a + f * (log.gripper_stream[i + 1].value - a)
            }
        };
        let oi = match locate(&o_ts, t) {
            Located::Exact(i) | Located::Between(i, _) => i,
        };
        out.push(ResampledStep { t, pose, gripper, obs: log.obs_stream[oi].value.clone() });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    /// Oldest first.
    pub obs_history: Vec<Vec<f64>>,
    pub action_chunk: Vec<RelAction3>,
    /// Index of the current step within the resampled sequence.
    pub step: usize,
}

impl TrainingPair {
    pub fn flat_history(&self) -> Vec<f64> {
        self.obs_history.iter().flatten().copied().collect()
    }

    pub fn planar_chunk(&self) -> Vec<f64> {
        planar_chunk_vector(&self.action_chunk)
    }
}

/// Relative actions between consecutive resampled steps. The gripper target
/// is the next step's aperture.
pub fn step_actions(seq: &[ResampledStep]) -> Result<Vec<RelAction3>> {
    seq.windows(2)
        .map(|w| Ok(RelAction3::new(relative(&w[0].pose, &w[1].pose)?, w[1].gripper)))
        .collect()
}

/// One pair per step `t` in `0..=T-1-C`, with history left-padded by the
/// first observation.
pub fn build_pairs(seq: &[ResampledStep], history: usize, chunk: usize) -> Result<Vec<TrainingPair>> {
    if history == 0 || chunk == 0 {
        return Err(DatalogError::InvalidConfig("history and chunk must be at least 1".into()));
    }
    if seq.len() <= chunk {
        return Err(DatalogError::EmptyEpisode { len: seq.len(), chunk });
    }
    let actions = step_actions(seq)?;
    let pairs = (0..seq.len() - chunk)
        .map(|t| {
            let obs_history = (0..history)
                .map(|j| {
                    let idx = (t + j + 1).saturating_sub(history);
                    seq[idx].obs.clone()
                })
                .collect();
            TrainingPair { obs_history, action_chunk: actions[t..t + chunk].to_vec(), step: t }
        })
        .collect();
    Ok(pairs)
}

/// Flattens a chunk into `[dx, dy, dtheta, g]` per step.
pub fn planar_chunk_vector(chunk: &[RelAction3]) -> Vec<f64> {
    chunk
        .iter()
        .flat_map(|a| {
            let a2: RelAction2 = (*a).into();
            [a2.delta.dx, a2.delta.dy, a2.delta.dtheta, a2.gripper]
        })
        .collect()
}

/// Inverse of [`planar_chunk_vector`]; gripper targets are clamped to `[0, 1]`.
pub fn planar_chunk_from_vector(v: &[f64]) -> Vec<RelAction2> {
    v.chunks_exact(PLANAR_ACTION_DIM)
        .map(|c| RelAction2::new(crate::geom::Delta2::new(c[0], c[1], c[2]), c[3]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub control_rate_hz: f64,
    pub history: usize,
    pub chunk: usize,
    pub env_count: Option<usize>,
    pub demos_per_env: Option<usize>,
    pub expertise: Option<Expertise>,
    /// Drop logs whose success flag is `false`.
    pub quality_filter: bool,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            control_rate_hz: 3.75,
            history: 6,
            chunk: 3,
            env_count: None,
            demos_per_env: None,
            expertise: None,
            quality_filter: false,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.control_rate_hz > 0.0) {
            return Err(DatalogError::InvalidConfig("control_rate_hz must be positive".into()));
        }
        if self.history == 0 || self.chunk == 0 {
            return Err(DatalogError::InvalidConfig("history and chunk must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairOrigin {
    pub log: usize,
    pub step: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub pairs: Vec<TrainingPair>,
    pub provenance: Vec<PairOrigin>,
    /// Indices into the input log slice, in selection order.
    pub selected_logs: Vec<usize>,
    /// Selected logs too short to yield a single pair.
    pub skipped_logs: Vec<usize>,
}

/// Seeded log selection followed by resampling and pair construction.
///
/// Environments are chosen uniformly without replacement, then
/// `demos_per_env` logs per environment (all of them when fewer remain after
/// filtering).
pub fn select_logs(logs: &[EpisodeLog], cfg: &DatasetConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let mut by_env: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, log) in logs.iter().enumerate() {
        if cfg.expertise.is_some_and(|e| e != log.meta.expertise) {
            continue;
        }
        if cfg.quality_filter && log.meta.success == Some(false) {
            continue;
        }
        by_env.entry(log.meta.env_id.as_str()).or_default().push(i);
    }
    if by_env.is_empty() {
        return Err(DatalogError::EmptyDataset);
    }
    let envs: Vec<&Vec<usize>> = by_env.values().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let chosen_envs: Vec<usize> = match cfg.env_count {
        Some(k) if k > envs.len() => {
            return Err(DatalogError::InvalidConfig(format!(
                "requested {k} environments but only {} are available",
                envs.len()
            )))
        }
        Some(k) => {
            let mut v = rand::seq::index::sample(&mut rng, envs.len(), k).into_vec();
            v.sort_unstable();
            v
        }
        None => (0..envs.len()).collect(),
    };
    let mut selected = Vec::new();
    for e in chosen_envs {
        let demos = envs[e];
        match cfg.demos_per_env {
            Some(m) if m < demos.len() => {
                let mut v = rand::seq::index::sample(&mut rng, demos.len(), m).into_vec();
                v.sort_unstable();
                selected.extend(v.into_iter().map(|j| demos[j]));
            }
            _ => selected.extend(demos.iter().copied()),
        }
    }
    if selected.is_empty() {
        return Err(DatalogError::EmptyDataset);
    }
    Ok(selected)
}

pub fn assemble(logs: &[EpisodeLog], cfg: &DatasetConfig) -> Result<Dataset> {
    let selected_logs = select_logs(logs, cfg)?;
    let mut pairs = Vec::new();
    let mut provenance = Vec::new();
    let mut skipped_logs = Vec::new();
    for &li in &selected_logs {
        let seq = resample(&logs[li], cfg.control_rate_hz)?;
        match build_pairs(&seq, cfg.history, cfg.chunk) {
            Ok(ps) => {
                for p in ps {
                    provenance.push(PairOrigin { log: li, step: p.step });
                    pairs.push(p);
                }
            }
            Err(DatalogError::EmptyEpisode { .. }) => skipped_logs.push(li),
            Err(e) => return Err(e),
        }
    }
    if pairs.is_empty() {
        return Err(DatalogError::EmptyDataset);
    }
    Ok(Dataset { pairs, provenance, selected_logs, skipped_logs })
}

/// Debug export, one flattened row per pair.
pub fn write_pairs_csv<W: Write>(w: W, pairs: &[TrainingPair], provenance: Option<&[PairOrigin]>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let Some(first) = pairs.first() else {
        out.flush()?;
        return Ok(());
    };
    let mut header = vec!["pair".to_string(), "log".to_string(), "step".to_string()];
    for (h, o) in first.obs_history.iter().enumerate() {
        header.extend((0..o.len()).map(|i| format!("obs_{h}_{i}")));
    }
    for c in 0..first.action_chunk.len() {
        header.extend(["dx", "dy", "dtheta", "g"].iter().map(|n| format!("act_{c}_{n}")));
    }
    out.write_record(&header)?;
    for (i, p) in pairs.iter().enumerate() {
        let log = provenance.map_or(String::new(), |pr| pr[i].log.to_string());
        let mut row = vec![i.to_string(), log, p.step.to_string()];
        row.extend(p.flat_history().iter().map(|v| v.to_string()));
        row.extend(p.planar_chunk().iter().map(|v| v.to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
