//! Residual vector quantization of flattened action chunks.
//!
//! Layer `l` is a k-means codebook fit on what layers `0..l` leave
//! unexplained. Encoding is greedy per layer; ties go to the lowest index.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binfmt;

pub const CODEBOOK_MAGIC: &[u8] = b"RUMVQ1\n";
/// Lloyd stops once no centroid moves farther than this.
pub const SHIFT_TOL: f64 = 1e-9;
/// Independent k-means++ initializations per layer; the lowest inertia wins.
pub const KMEANS_RESTARTS: usize = 6;

#[derive(Debug, Error)]
pub enum RvqError {
    #[error("need at least {need} vectors, got {have}")]
    InsufficientData { have: usize, need: usize },
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("code {code} out of range for layer {layer} (K = {k})")]
    CodeOutOfRange { layer: usize, code: usize, k: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid codebook file: {0}")]
    InvalidFile(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, RvqError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub k: usize,
    pub layers: usize,
    pub iters: usize,
    pub seed: u64,
    /// Sum of squared residual norms after each layer.
    pub inertia: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dim: usize,
    /// Per layer, `K × dim` centroids stored row-major.
    layers: Vec<Vec<f64>>,
    pub meta: FitMeta,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid (lowest index on ties) and its squared distance.
fn nearest(v: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(v, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centroids: Vec<f64>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
}

fn kmeans_pp_init(points: &[&[f64]], k: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len();
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(points[rng.random_range(0..n)]);
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    idx = i;
                    break;
                }
                r -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(points[pick]);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centroids[start..]));
        }
    }
    centroids
}

fn lloyd(points: &[&[f64]], mut centroids: Vec<f64>, k: usize, dim: usize, iters: usize) -> KMeansFit {
    let n = points.len();
    let mut assignment = vec![0; n];
    let mut dists = vec![0.0; n];
    let assign = |centroids: &[f64], assignment: &mut [usize], dists: &mut [f64]| {
        for (i, p) in points.iter().enumerate() {
            let (a, d) = nearest(p, centroids, dim);
            assignment[i] = a;
            dists[i] = d;
        }
    };
    assign(&centroids, &mut assignment, &mut dists);
    for _ in 0..iters {
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        let mut next = centroids.clone();
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    next[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // reseed at the point worst served by its centroid
                let far = dists
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (i, &d)| if d > b.1 { (i, d) } else { b })
                    .0;
                next[c * dim..(c + 1) * dim].copy_from_slice(points[far]);
                dists[far] = 0.0;
            }
        }
        let shift = centroids
            .chunks_exact(dim)
            .zip(next.chunks_exact(dim))
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        assign(&centroids, &mut assignment, &mut dists);
        if shift < SHIFT_TOL {
            break;
        }
    }
    let inertia = dists.iter().sum();
    KMeansFit { centroids, assignment, inertia }
}

/// Seeded k-means++ with Lloyd refinement, best of [`KMEANS_RESTARTS`].
pub fn kmeans(points: &[&[f64]], k: usize, iters: usize, seed: u64) -> Result<KMeansFit> {
    if k == 0 {
        return Err(RvqError::InvalidParams("K must be at least 1".into()));
    }
    if points.len() < k {
        return Err(RvqError::InsufficientData { have: points.len(), need: k });
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(RvqError::DimensionMismatch { expected: dim, got: p.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..KMEANS_RESTARTS {
        let init = kmeans_pp_init(points, k, dim, &mut rng);
        let fit = lloyd(points, init, k, dim, iters);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

pub fn fit(vectors: &[Vec<f64>], k: usize, layers: usize, iters: usize, seed: u64) -> Result<Codebook> {
    if layers == 0 {
        return Err(RvqError::InvalidParams("L must be at least 1".into()));
    }
    let dim = vectors.first().map_or(0, Vec::len);
    let mut residuals: Vec<Vec<f64>> = vectors.to_vec();
    let mut out = Vec::with_capacity(layers);
    let mut inertia = Vec::with_capacity(layers);
    for l in 0..layers {
        let refs: Vec<&[f64]> = residuals.iter().map(Vec::as_slice).collect();
        let km = kmeans(&refs, k, iters, seed.wrapping_add(l as u64))?;
        for (r, &a) in residuals.iter_mut().zip(&km.assignment) {
            for (x, c) in r.iter_mut().zip(&km.centroids[a * dim..(a + 1) * dim]) {
                *x -= c;
            }
        }
        inertia.push(km.inertia);
        out.push(km.centroids);
    }
    Ok(Codebook { dim, layers: out, meta: FitMeta { k, layers, iters, seed, inertia } })
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dim: usize,
    meta: FitMeta,
}

impl Codebook {
    pub fn from_centroids(dim: usize, layers: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let k = layers.first().map_or(0, Vec::len);
        if layers.is_empty() || k == 0 {
            return Err(RvqError::InvalidParams("need at least one layer and one centroid".into()));
        }
        let mut flat = Vec::with_capacity(layers.len());
        for layer in &layers {
            if layer.len() != k {
                return Err(RvqError::InvalidParams("all layers need the same K".into()));
            }
            let mut v = Vec::with_capacity(k * dim);
            for c in layer {
                if c.len() != dim {
                    return Err(RvqError::DimensionMismatch { expected: dim, got: c.len() });
                }
                v.extend_from_slice(c);
            }
            flat.push(v);
        }
        let meta = FitMeta { k, layers: flat.len(), iters: 0, seed: 0, inertia: Vec::new() };
        Ok(Self { dim, layers: flat, meta })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.meta.k
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn centroid(&self, layer: usize, code: usize) -> &[f64] {
        &self.layers[layer][code * self.dim..(code + 1) * self.dim]
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(RvqError::DimensionMismatch { expected: self.dim, got: v.len() });
        }
        Ok(())
    }

    /// Greedy codes using only the first `layers` layers.
    pub fn encode_layers(&self, v: &[f64], layers: usize) -> Result<Vec<usize>> {
        self.check_dim(v)?;
        let mut r = v.to_vec();
        let mut codes = Vec::with_capacity(layers);
        for l in 0..layers.min(self.layers.len()) {
            let (c, _) = nearest(&r, &self.layers[l], self.dim);
            for (x, y) in r.iter_mut().zip(self.centroid(l, c)) {
                *x -= y;
            }
            codes.push(c);
        }
        Ok(codes)
    }

    pub fn encode(&self, v: &[f64]) -> Result<Vec<usize>> {
        self.encode_layers(v, self.layers.len())
    }

    /// Sum of the selected centroids; fewer codes than layers decodes a prefix.
    pub fn decode(&self, codes: &[usize]) -> Result<Vec<f64>> {
        if codes.len() > self.layers.len() {
            return Err(RvqError::InvalidParams(format!(
                "{} codes for {} layers",
                codes.len(),
                self.layers.len()
            )));
        }
        let mut out = vec![0.0; self.dim];
        for (l, &c) in codes.iter().enumerate() {
            if c >= self.k() {
                return Err(RvqError::CodeOutOfRange { layer: l, code: c, k: self.k() });
            }
            for (o, x) in out.iter_mut().zip(self.centroid(l, c)) {
                *o += x;
            }
        }
        Ok(out)
    }

    /// Mean squared reconstruction error using the first `layers` layers.
    pub fn mean_error(&self, vectors: &[Vec<f64>], layers: usize) -> Result<f64> {
        let mut total = 0.0;
        for v in vectors {
            let codes = self.encode_layers(v, layers)?;
            total += sq_dist(v, &self.decode(&codes)?);
        }
        Ok(total / vectors.len().max(1) as f64)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binfmt::write_header(w, CODEBOOK_MAGIC, &Header { format_version: 1, dim: self.dim, meta: self.meta.clone() })?;
        for layer in &self.layers {
            binfmt::write_f64s(w, layer)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let h: Header = binfmt::read_header(r, CODEBOOK_MAGIC)?;
        if h.format_version != 1 {
            return Err(RvqError::InvalidFile(format!("unsupported version {}", h.format_version)));
        }
        let layers = (0..h.meta.layers)
            .map(|_| binfmt::read_f64s(r, h.meta.k * h.dim))
            .collect::<io::Result<Vec<_>>>()?;
        if layers.iter().flatten().any(|x| !x.is_finite()) {
            return Err(RvqError::InvalidFile("non-finite centroid".into()));
        }
        Ok(Self { dim: h.dim, layers, meta: h.meta })
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_pairs_recover_pair_means() {
        let v = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 0.0], vec![10.0, 1.0]];
        let cb = fit(&v, 2, 1, 100, 3).unwrap();
        let mut cs: Vec<Vec<f64>> = (0..2).map(|k| cb.centroid(0, k).to_vec()).collect();
        cs.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(cs, vec![vec![0.0, 0.5], vec![10.0, 0.5]]);
    }

    #[test]
    fn single_centroid_is_mean() {
        let v = vec![vec![1.0, 2.0], vec![3.0, -2.0], vec![2.0, 3.0]];
        let cb = fit(&v, 1, 1, 10, 0).unwrap();
        let c = cb.centroid(0, 0);
        assert!((c[0] - 2.0).abs() < 1e-12 && (c[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_vectors() {
        let v = vec![vec![1.0]; 3];
        assert!(matches!(fit(&v, 4, 1, 10, 0), Err(RvqError::InsufficientData { have: 3, need: 4 })));
    }

    #[test]
    fn centroid_encodes_to_itself() {
        let v: Vec<Vec<f64>> = (0..20).map(|i| vec![(i % 5) as f64 * 3.0, (i / 5) as f64]).collect();
        let cb = fit(&v, 5, 1, 50, 1).unwrap();
        let c = cb.centroid(0, 3).to_vec();
        assert_eq!(cb.encode(&c).unwrap(), vec![3]);
        assert_eq!(cb.decode(&[3]).unwrap(), c);
    }

    #[test]
    fn tie_goes_to_lower_index() {
        let cb = Codebook::from_centroids(1, vec![vec![vec![-1.0], vec![1.0]]]).unwrap();
        assert_eq!(cb.encode(&[0.0]).unwrap(), vec![0]);
    }

    #[test]
    fn zero_data_gives_zero_codebook() {
        let v = vec![vec![0.0; 3]; 10];
        let cb = fit(&v, 3, 2, 10, 0).unwrap();
        for l in 0..2 {
            for k in 0..3 {
                assert!(cb.centroid(l, k).iter().all(|&x| x == 0.0));
            }
        }
        assert_eq!(cb.decode(&cb.encode(&[0.0; 3]).unwrap()).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn decode_rejects_bad_codes() {
        let cb = Codebook::from_centroids(1, vec![vec![vec![0.0], vec![1.0]]]).unwrap();
        assert!(matches!(cb.decode(&[2]), Err(RvqError::CodeOutOfRange { layer: 0, code: 2, k: 2 })));
        assert!(matches!(cb.encode(&[1.0, 2.0]), Err(RvqError::DimensionMismatch { .. })));
    }

    #[test]
    fn binary_roundtrip() {
        let v: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos(), i as f64 * 0.01]).collect();
        let cb = fit(&v, 4, 2, 30, 9).unwrap();
        let mut buf = Vec::new();
        cb.write_to(&mut buf).unwrap();
        assert_eq!(Codebook::read_from(&mut buf.as_slice()).unwrap(), cb);
    }
}
