//! Behavior policies over flattened observation histories.
//!
//! Both variants share a fully connected SiLU trunk. The `vqbet` variant
//! classifies each residual-VQ layer's code and regresses the quantization
//! residual; the `bc` variant regresses the whole action chunk.
//!
//! Loss per pair:
//! - vqbet: `Σ_l CE(logits_l, code_l) + λ · mean|offset − (chunk − decode(codes))|`
//! - bc: `mean (prediction − chunk)²`
//!
//! Batch losses are means over pairs. Gradients are derived by hand.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binfmt;
use crate::datalog::{planar_chunk_from_vector, TrainingPair, PLANAR_ACTION_DIM};
use crate::geom::RelAction2;
use crate::rvq::{Codebook, RvqError};

pub const POLICY_MAGIC: &[u8] = b"RUMPOL1\n";
/// Floor on per-feature standard deviation used for input normalization.
pub const NORM_STD_FLOOR: f64 = 1e-2;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("non-finite values in {layer}")]
    NonFinite { layer: String },
    #[error("expected input of length {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("the vqbet variant needs a codebook")]
    MissingCodebook,
    #[error("invalid policy file: {0}")]
    InvalidFile(String),
    #[error(transparent)]
    Rvq(#[from] RvqError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, PolicyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Vqbet,
    Bc,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Vqbet => "vqbet",
            Variant::Bc => "bc",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyArch {
    pub variant: Variant,
    pub history: usize,
    pub obs_dim: usize,
    pub chunk: usize,
    pub hidden: Vec<usize>,
    /// Codes per layer; unused by `bc`.
    pub k: usize,
    /// RVQ layers; unused by `bc`.
    pub code_layers: usize,
}

impl PolicyArch {
    pub fn new(variant: Variant, history: usize, obs_dim: usize, chunk: usize) -> Self {
        Self { variant, history, obs_dim, chunk, hidden: vec![128, 128], k: 16, code_layers: 2 }
    }

    pub fn input_dim(&self) -> usize {
        self.history * self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.chunk * PLANAR_ACTION_DIM
    }

    fn validate(&self) -> Result<()> {
        if self.history == 0 || self.obs_dim == 0 || self.chunk == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(PolicyError::InvalidConfig("all sizes must be positive".into()));
        }
        if self.variant == Variant::Vqbet && (self.k == 0 || self.code_layers == 0) {
            return Err(PolicyError::InvalidConfig("vqbet needs K ≥ 1 and L ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn zeros(out: usize, inp: usize) -> Self {
        Self { w: Array2::zeros((out, inp)), b: Array1::zeros(out) }
    }

    fn glorot(out: usize, inp: usize, rng: &mut ChaCha8Rng) -> Self {
        let a = (6.0 / (inp + out) as f64).sqrt();
        Self { w: Array2::from_shape_fn((out, inp), |_| rng.random_range(-a..a)), b: Array1::zeros(out) }
    }

    fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    pub trunk: Vec<Dense>,
    pub code_head: Option<Dense>,
    pub offset_head: Dense,
}

impl Net {
    fn shaped(arch: &PolicyArch, mut make: impl FnMut(usize, usize) -> Dense) -> Self {
        let mut trunk = Vec::with_capacity(arch.hidden.len());
        let mut inp = arch.input_dim();
        for &h in &arch.hidden {
            trunk.push(make(h, inp));
            inp = h;
        }
        let code_head = (arch.variant == Variant::Vqbet).then(|| make(arch.k * arch.code_layers, inp));
        let offset_head = make(arch.action_dim(), inp);
        Self { trunk, code_head, offset_head }
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.trunk.iter().chain(self.code_head.iter()).chain(std::iter::once(&self.offset_head))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.trunk.iter_mut().chain(self.code_head.iter_mut()).chain(std::iter::once(&mut self.offset_head))
    }

    /// Every trainable tensor, weights before biases, trunk then heads.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers()
            .flat_map(|d| [d.w.as_slice().expect("standard layout"), d.b.as_slice().expect("standard layout")])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers_mut()
            .flat_map(|d| {
                let Dense { w, b } = d;
                [w.as_slice_mut().expect("standard layout"), b.as_slice_mut().expect("standard layout")]
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn zeros_like(&self) -> Net {
        Net {
            trunk: self.trunk.iter().map(|d| Dense::zeros(d.w.nrows(), d.w.ncols())).collect(),
            code_head: self.code_head.as_ref().map(|d| Dense::zeros(d.w.nrows(), d.w.ncols())),
            offset_head: Dense::zeros(self.offset_head.w.nrows(), self.offset_head.w.ncols()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub arch: PolicyArch,
    pub input_mean: Array1<f64>,
    pub input_scale: Array1<f64>,
    pub net: Net,
}

impl PolicyParams {
    /// All weights zero and identity normalization.
    pub fn zeros(arch: PolicyArch) -> Result<Self> {
        arch.validate()?;
        let n = arch.input_dim();
        let net = Net::shaped(&arch, Dense::zeros);
        Ok(Self { input_mean: Array1::zeros(n), input_scale: Array1::ones(n), net, arch })
    }

    pub fn init(arch: PolicyArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = arch.input_dim();
        let mut net = Net::shaped(&arch, |o, i| Dense::glorot(o, i, &mut rng));
        net.offset_head.w.fill(0.0);
        Ok(Self { input_mean: Array1::zeros(n), input_scale: Array1::ones(n), net, arch })
    }

    /// Sets the input normalization from per-feature statistics of `x`.
    pub fn fit_normalization(&mut self, x: &ArrayView2<f64>) {
        if x.nrows() == 0 {
            return;
        }
        self.input_mean = x.mean_axis(Axis(0)).expect("nonempty");
        let std = x.std_axis(Axis(0), 0.0);
        self.input_scale = std.mapv(|s| 1.0 / s.max(NORM_STD_FLOOR));
    }

    pub fn normalize(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        (x - &self.input_mean) * &self.input_scale
    }

    fn check_input(&self, len: usize) -> Result<()> {
        let expected = self.arch.input_dim();
        if len != expected {
            return Err(PolicyError::ShapeMismatch { expected, got: len });
        }
        Ok(())
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

fn check_finite(a: &Array2<f64>, layer: impl FnOnce() -> String) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(PolicyError::NonFinite { layer: layer() })
    }
}

struct Cache {
    /// `acts[0]` is the normalized input, `acts[i + 1] = silu(zs[i])`.
    acts: Vec<Array2<f64>>,
    zs: Vec<Array2<f64>>,
    logits: Option<Array2<f64>>,
    offset: Array2<f64>,
}

fn forward_normalized(net: &Net, x: Array2<f64>) -> Result<Cache> {
    check_finite(&x, || "input".into())?;
    let mut acts = vec![x];
    let mut zs = Vec::with_capacity(net.trunk.len());
    for (i, layer) in net.trunk.iter().enumerate() {
        let z = layer.forward(&acts[i].view());
        check_finite(&z, || format!("trunk.{i}"))?;
        acts.push(z.mapv(silu));
        zs.push(z);
    }
    let h = acts.last().expect("input present").view();
    let logits = match &net.code_head {
        Some(head) => {
            let l = head.forward(&h);
            check_finite(&l, || "code_head".into())?;
            Some(l)
        }
        None => None,
    };
    let offset = net.offset_head.forward(&h);
    check_finite(&offset, || "offset_head".into())?;
    Ok(Cache { acts, zs, logits, offset })
}

/// Output of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    /// `L × K` code logits; empty for `bc`.
    pub logits: Array2<f64>,
    /// Offset (vqbet) or full chunk (bc), length `C × 4`.
    pub offset: Array1<f64>,
}

/// Batched forward over raw (unnormalized) flattened histories, one per row.
pub fn forward_batch(params: &PolicyParams, x: &ArrayView2<f64>) -> Result<(Option<Array2<f64>>, Array2<f64>)> {
    params.check_input(x.ncols())?;
    let c = forward_normalized(&params.net, params.normalize(x))?;
    Ok((c.logits, c.offset))
}

pub fn forward(params: &PolicyParams, obs_history: &[f64]) -> Result<PolicyOutput> {
    params.check_input(obs_history.len())?;
    let x = ArrayView2::from_shape((1, obs_history.len()), obs_history).expect("length checked");
    let (logits, offset) = forward_batch(params, &x)?;
    let (k, l) = (params.arch.k, params.arch.code_layers);
    let logits = match logits {
        Some(lg) => lg.into_shape_with_order((l, k)).expect("head width is L·K"),
        None => Array2::zeros((0, 0)),
    };
    Ok(PolicyOutput { logits, offset: offset.row(0).to_owned() })
}

/// Supervision targets for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    /// Row-major `B × L` code indices; empty for `bc`.
    pub codes: Vec<usize>,
    /// Residual (vqbet) or chunk (bc), `B × d`.
    pub regress: Array2<f64>,
}

/// Computes regression and code targets for action chunk vectors.
pub fn make_targets(variant: Variant, chunks: &[Vec<f64>], codebook: Option<&Codebook>) -> Result<Targets> {
    let d = chunks.first().map_or(0, Vec::len);
    let mut regress = Array2::zeros((chunks.len(), d));
    let mut codes = Vec::new();
    for (i, ch) in chunks.iter().enumerate() {
        match variant {
            Variant::Bc => regress.row_mut(i).assign(&Array1::from(ch.clone())),
            Variant::Vqbet => {
                let cb = codebook.ok_or(PolicyError::MissingCodebook)?;
                let c = cb.encode(ch)?;
                let rec = cb.decode(&c)?;
                for j in 0..d {
                    regress[(i, j)] = ch[j] - rec[j];
                }
                codes.extend(c);
            }
        }
    }
    Ok(Targets { codes, regress })
}

/// Mean batch loss and its gradient with respect to every trainable tensor.
/// `x` must already be normalized.
pub fn loss_and_grad_normalized(
    params: &PolicyParams,
    x: Array2<f64>,
    targets: &Targets,
    offset_weight: f64,
) -> Result<(f64, Net)> {
    let bsz = x.nrows();
    if bsz == 0 {
        return Err(PolicyError::EmptyBatch);
    }
    let arch = &params.arch;
    let cache = forward_normalized(&params.net, x)?;
    let d = cache.offset.ncols();
    let mut grads = params.net.zeros_like();
    let mut loss = 0.0;

    let mut d_logits = None;
    if let Some(logits) = &cache.logits {
        let (k, nl) = (arch.k, arch.code_layers);
        let mut g = Array2::zeros(logits.raw_dim());
        for i in 0..bsz {
            for l in 0..nl {
                let row = logits.slice(s![i, l * k..(l + 1) * k]);
                let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
                let t = targets.codes[i * nl + l];
                loss += m + z.ln() - row[t];
                for j in 0..k {
                    let p = (row[j] - m).exp() / z;
                    g[(i, l * k + j)] = (p - if j == t { 1.0 } else { 0.0 }) / bsz as f64;
                }
            }
        }
        d_logits = Some(g);
    }

    let diff = &cache.offset - &targets.regress;
    let d_offset = match arch.variant {
        Variant::Vqbet => {
            loss += offset_weight * diff.iter().map(|v| v.abs()).sum::<f64>() / d as f64;
            let scale = offset_weight / (bsz * d) as f64;
            diff.mapv(|v| if v > 0.0 { scale } else if v < 0.0 { -scale } else { 0.0 })
        }
        Variant::Bc => {
            loss += diff.iter().map(|v| v * v).sum::<f64>() / d as f64;
            diff.mapv(|v| 2.0 * v / (bsz * d) as f64)
        }
    };
    loss /= bsz as f64;

    let h = cache.acts.last().expect("input present");
    grads.offset_head.w = d_offset.t().dot(h);
    grads.offset_head.b = d_offset.sum_axis(Axis(0));
    let mut dh = d_offset.dot(&params.net.offset_head.w);
    if let (Some(g), Some(head), Some(gh)) = (&d_logits, &params.net.code_head, &mut grads.code_head) {
        gh.w = g.t().dot(h);
        gh.b = g.sum_axis(Axis(0));
        dh += &g.dot(&head.w);
    }
    for i in (0..params.net.trunk.len()).rev() {
        let dz = dh * cache.zs[i].mapv(silu_grad);
        grads.trunk[i].w = dz.t().dot(&cache.acts[i]);
        grads.trunk[i].b = dz.sum_axis(Axis(0));
        dh = dz.dot(&params.net.trunk[i].w);
    }
    Ok((loss, grads))
}

/// Batch loss and gradients for raw pairs.
pub fn loss(
    params: &PolicyParams,
    pairs: &[TrainingPair],
    codebook: Option<&Codebook>,
    offset_weight: f64,
) -> Result<(f64, Net)> {
    if pairs.is_empty() {
        return Err(PolicyError::EmptyBatch);
    }
    let (x, targets) = batch_arrays(params, pairs, codebook)?;
    loss_and_grad_normalized(params, params.normalize(&x.view()), &targets, offset_weight)
}

fn batch_arrays(params: &PolicyParams, pairs: &[TrainingPair], codebook: Option<&Codebook>) -> Result<(Array2<f64>, Targets)> {
    let n_in = params.arch.input_dim();
    let mut x = Array2::zeros((pairs.len(), n_in));
    for (i, p) in pairs.iter().enumerate() {
        let h = p.flat_history();
        params.check_input(h.len())?;
        x.row_mut(i).assign(&Array1::from(h));
    }
    let chunks: Vec<Vec<f64>> = pairs.iter().map(TrainingPair::planar_chunk).collect();
    if let Some(c) = chunks.iter().find(|c| c.len() != params.arch.action_dim()) {
        return Err(PolicyError::ShapeMismatch { expected: params.arch.action_dim(), got: c.len() });
    }
    let targets = make_targets(params.arch.variant, &chunks, codebook)?;
    Ok((x, targets))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// λ, weight of the offset term.
    pub offset_weight: f64,
    /// Sampling temperature used at inference.
    pub temperature: f64,
    /// Caps the total number of optimizer steps across epochs.
    pub max_steps: Option<usize>,
    pub schedule: LrSchedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Cosine decay from `lr` to `lr / 20` over the run.
    Cosine,
}

impl LrSchedule {
    pub fn rate(self, lr: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => lr,
            LrSchedule::Cosine => {
                let floor = lr / 20.0;
                let frac = step as f64 / total.max(1) as f64;
                floor + 0.5 * (lr - floor) * (1.0 + (std::f64::consts::PI * frac.min(1.0)).cos())
            }
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
            offset_weight: 1.0,
            temperature: 1.0,
            max_steps: None,
            schedule: LrSchedule::Cosine,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr >= 0.0) || !(self.offset_weight >= 0.0) || !(self.temperature > 0.0) {
            return Err(PolicyError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Adam with β = (0.9, 0.999) and ε = 1e-8.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    t: i32,
    m: Net,
    v: Net,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(net: &Net, lr: f64) -> Self {
        Self { lr, t: 0, m: net.zeros_like(), v: net.zeros_like() }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, net: &mut Net, grads: &Net) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in net
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for i in 0..p.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub params: PolicyParams,
    /// Mean loss per epoch.
    pub loss_curve: Vec<f64>,
}

/// Minibatch Adam training with a seeded shuffle per epoch.
pub fn train(
    pairs: &[TrainingPair],
    arch: PolicyArch,
    cfg: &TrainConfig,
    codebook: Option<&Codebook>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(PolicyError::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = PolicyParams::init(arch, rng.random())?;
    let (x_raw, targets) = batch_arrays(&params, pairs, codebook)?;
    params.fit_normalization(&x_raw.view());
    let x = params.normalize(&x_raw.view());
    let nl = if params.arch.variant == Variant::Vqbet { params.arch.code_layers } else { 0 };

    let mut adam = Adam::new(&params.net, cfg.lr);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut steps = 0usize;
    let per_epoch = pairs.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.max_steps.map_or(cfg.epochs * per_epoch, |m| m.min(cfg.epochs * per_epoch));
    'epochs: for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                if seen > 0 {
                    loss_curve.push(total / seen as f64);
                }
                break 'epochs;
            }
            let xb = x.select(Axis(0), batch);
            let tb = Targets {
                codes: batch.iter().flat_map(|&i| targets.codes[i * nl..(i + 1) * nl].iter().copied()).collect(),
                regress: targets.regress.select(Axis(0), batch),
            };
            let (l, g) = loss_and_grad_normalized(&params, xb, &tb, cfg.offset_weight)?;
            adam.set_lr(cfg.schedule.rate(cfg.lr, steps, total_steps));
            adam.step(&mut params.net, &g);
            total += l * batch.len() as f64;
            seen += batch.len();
            steps += 1;
        }
        loss_curve.push(total / seen as f64);
    }
    Ok(TrainOutput { params, loss_curve })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Decoding {
    Argmax,
    Sample { temperature: f64 },
}

fn pick_code(logits: &[f64], decoding: Decoding, rng: &mut impl Rng) -> usize {
    let argmax = || {
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        best
    };
    match decoding {
        Decoding::Argmax => argmax(),
        Decoding::Sample { temperature } => {
            let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let w: Vec<f64> = logits.iter().map(|v| ((v - m) / temperature).exp()).collect();
            let total: f64 = w.iter().sum();
            if !total.is_finite() || total <= 0.0 {
                return argmax();
            }
            let mut r = rng.random::<f64>() * total;
            for (i, wi) in w.iter().enumerate() {
                if r < *wi {
                    return i;
                }
                r -= wi;
            }
            w.len() - 1
        }
    }
}

/// Predicted action chunk as a flat `C × 4` vector before gripper clamping.
pub fn predict_vector(
    params: &PolicyParams,
    obs_history: &[f64],
    codebook: Option<&Codebook>,
    decoding: Decoding,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let out = forward(params, obs_history)?;
    match params.arch.variant {
        Variant::Bc => Ok(out.offset.to_vec()),
        Variant::Vqbet => {
            let cb = codebook.ok_or(PolicyError::MissingCodebook)?;
            let codes: Vec<usize> = out
                .logits
                .rows()
                .into_iter()
                .map(|row| pick_code(row.as_slice().expect("standard layout"), decoding, rng))
                .collect();
            let base = cb.decode(&codes)?;
            Ok(base.iter().zip(out.offset.iter()).map(|(a, b)| a + b).collect())
        }
    }
}

/// `C` planar actions with gripper targets clamped into `[0, 1]`.
pub fn predict_action(
    params: &PolicyParams,
    obs_history: &[f64],
    codebook: Option<&Codebook>,
    decoding: Decoding,
    rng: &mut impl Rng,
) -> Result<Vec<RelAction2>> {
    Ok(planar_chunk_from_vector(&predict_vector(params, obs_history, codebook, decoding, rng)?))
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    arch: PolicyArch,
}

impl PolicyParams {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binfmt::write_header(w, POLICY_MAGIC, &Header { format_version: 1, arch: self.arch.clone() })?;
        binfmt::write_f64s(w, self.input_mean.as_slice().expect("standard layout"))?;
        binfmt::write_f64s(w, self.input_scale.as_slice().expect("standard layout"))?;
        for t in self.net.tensors() {
            binfmt::write_f64s(w, t)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let h: Header = binfmt::read_header(r, POLICY_MAGIC)?;
        if h.format_version != 1 {
            return Err(PolicyError::InvalidFile(format!("unsupported version {}", h.format_version)));
        }
        let mut p = PolicyParams::zeros(h.arch)?;
        let n = p.arch.input_dim();
        p.input_mean = Array1::from(binfmt::read_f64s(r, n)?);
        p.input_scale = Array1::from(binfmt::read_f64s(r, n)?);
        for t in p.net.tensors_mut() {
            let vals = binfmt::read_f64s(r, t.len())?;
            t.copy_from_slice(&vals);
        }
        if p.net.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(PolicyError::InvalidFile("non-finite weight".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

/// Loss curve as `epoch,mean_loss` CSV.
pub fn write_loss_curve<W: Write>(w: W, curve: &[f64]) -> std::result::Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "mean_loss"])?;
    for (i, l) in curve.iter().enumerate() {
        out.write_record([i.to_string(), format!("{l:.17e}")])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Delta3, RelAction3};

    fn tiny_arch(variant: Variant) -> PolicyArch {
        PolicyArch { variant, history: 2, obs_dim: 3, chunk: 2, hidden: vec![8, 6], k: 3, code_layers: 2 }
    }

    fn pair(h: Vec<Vec<f64>>, chunk: &[f64]) -> TrainingPair {
        let action_chunk = chunk
            .chunks(4)
            .map(|c| {
                RelAction3::new(
                    Delta3 { dp: [c[0], c[1], 0.0], dq: crate::geom::Quat::from_yaw(c[2]) },
                    c[3],
                )
            })
            .collect();
        TrainingPair { obs_history: h, action_chunk, step: 0 }
    }

    #[test]
    fn zero_params_give_uniform_logits() {
        let p = PolicyParams::zeros(PolicyArch::new(Variant::Vqbet, 6, 12, 3)).unwrap();
        let out = forward(&p, &[0.3; 72]).unwrap();
        assert_eq!(out.logits.dim(), (2, 16));
        assert!(out.logits.iter().all(|&v| v == 0.0));
        assert!(out.offset.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_rejects_wrong_length() {
        let p = PolicyParams::zeros(tiny_arch(Variant::Bc)).unwrap();
        assert!(matches!(forward(&p, &[0.0; 5]), Err(PolicyError::ShapeMismatch { expected: 6, got: 5 })));
    }

    #[test]
    fn non_finite_input_names_layer() {
        let p = PolicyParams::init(tiny_arch(Variant::Bc), 0).unwrap();
        let mut x = vec![0.0; 6];
        x[2] = f64::NAN;
        match forward(&p, &x) {
            Err(PolicyError::NonFinite { layer }) => assert_eq!(layer, "input"),
            other => panic!("{other:?}"),
        }
        let mut p = p;
        p.net.trunk[1].w[(0, 0)] = f64::INFINITY;
        match forward(&p, &[1.0; 6]) {
            Err(PolicyError::NonFinite { layer }) => assert_eq!(layer, "trunk.1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn one_hot_logits_decode_exactly() {
        let mut p = PolicyParams::zeros(PolicyArch { chunk: 1, ..tiny_arch(Variant::Vqbet) }).unwrap();
        let cb = Codebook::from_centroids(
            4,
            vec![
                vec![vec![0.1, 0.0, 0.0, 1.0], vec![0.0, 0.2, 0.0, 0.0], vec![0.0, 0.0, 0.3, 1.0]],
                vec![vec![0.01, 0.0, 0.0, 0.0], vec![0.0, 0.02, 0.0, 0.0], vec![0.0, 0.0, 0.03, 0.0]],
            ],
        )
        .unwrap();
        let head = p.net.code_head.as_mut().unwrap();
        head.b[2] = 50.0;
        head.b[3 + 1] = 50.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = predict_vector(&p, &[0.0; 6], Some(&cb), Decoding::Argmax, &mut rng).unwrap();
        assert_eq!(v, cb.decode(&[2, 1]).unwrap());
    }

    #[test]
    fn gripper_is_clamped() {
        let mut p = PolicyParams::zeros(PolicyArch { chunk: 1, ..tiny_arch(Variant::Bc) }).unwrap();
        p.net.offset_head.b[3] = 1.2;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = predict_action(&p, &[0.0; 6], None, Decoding::Argmax, &mut rng).unwrap();
        assert_eq!(a[0].gripper, 1.0);
    }

    #[test]
    fn duplicated_batch_has_same_loss() {
        let p = PolicyParams::init(tiny_arch(Variant::Bc), 3).unwrap();
        let pairs = vec![
            pair(vec![vec![0.1, 0.2, 0.3], vec![0.0, -0.1, 0.5]], &[0.01, 0.02, 0.1, 1.0, 0.0, 0.03, -0.1, 0.0]),
            pair(vec![vec![-0.1, 0.4, 0.0], vec![0.2, 0.1, 0.1]], &[0.02, 0.0, 0.0, 0.0, 0.01, 0.01, 0.2, 1.0]),
        ];
        let doubled: Vec<_> = pairs.iter().chain(&pairs).cloned().collect();
        let (a, _) = loss(&p, &pairs, None, 1.0).unwrap();
        let (b, _) = loss(&p, &doubled, None, 1.0).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let pairs: Vec<_> = (0..10)
            .map(|i| {
                let f = i as f64 * 0.1;
                pair(vec![vec![f, 1.0 - f, 0.2], vec![f, f, f]], &[0.01 * f, 0.0, 0.1, 1.0, 0.0, 0.01, 0.0, 0.0])
            })
            .collect();
        let cfg = TrainConfig { epochs: 3, batch_size: 4, lr: 0.0, ..TrainConfig::default() };
        let out = train(&pairs, tiny_arch(Variant::Bc), &cfg, None).unwrap();
        let mut init = PolicyParams::init(tiny_arch(Variant::Bc), {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.random()
        })
        .unwrap();
        init.input_mean = out.params.input_mean.clone();
        init.input_scale = out.params.input_scale.clone();
        assert_eq!(out.params, init);
        assert_eq!(out.loss_curve.len(), 3);
    }

    #[test]
    fn params_binary_roundtrip() {
        let p = PolicyParams::init(tiny_arch(Variant::Vqbet), 5).unwrap();
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        assert_eq!(PolicyParams::read_from(&mut buf.as_slice()).unwrap(), p);
    }
}
