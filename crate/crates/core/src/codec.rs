//! Residual compression: every vector becomes the id of its nearest
//! centroid plus a `bits`-per-dimension code of the residual `v − C_t`.
//!
//! The residual quantizer is a single scalar quantizer shared by all
//! dimensions and centroids: `2^bits − 1` quantile cutoffs split the real
//! line into buckets, and each bucket decodes to the mean of the training
//! residual components that fell into it.

use std::fs;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::kmeans::{nearest_centroid, train_kmeans, DEFAULT_ITERS};
use crate::matrix::Matrix;

pub const CODEC_MAGIC: &[u8; 8] = b"LICDC1\0\0";
pub const MIN_CENTROIDS: u64 = 16;
pub const MAX_CENTROIDS: u64 = 1 << 32;

/// Number of centroids for a corpus of `n_embeddings` vectors:
/// `2^⌊log2(16·√n)⌋`, clamped to `[16, 2^32]` and then down to the largest
/// power of two not exceeding `n_embeddings`.
pub fn select_num_centroids(n_embeddings: u64) -> u64 {
    let n = n_embeddings.max(1) as u128;
    // 2^e ≤ 16·√n  ⇔  4^e ≤ 256·n, evaluated exactly in integers.
    let mut e = 0u32;
    while e < 64 && (1u128 << (2 * (e + 1))) <= 256 * n {
        e += 1;
    }
    let k = (1u64 << e.min(32)).clamp(MIN_CENTROIDS, MAX_CENTROIDS);
    k.min(prev_power_of_two(n_embeddings.max(1)))
}

/// Largest power of two `≤ n` (`n ≥ 1`).
pub fn prev_power_of_two(n: u64) -> u64 {
    1u64 << (63 - n.leading_zeros())
}

/// Packed residual size for one vector.
pub fn residual_bytes(dim: usize, bits: u32) -> usize {
    (dim * bits as usize).div_ceil(8)
}

/// Output of [`fit_buckets`].
#[derive(Debug, Clone, PartialEq)]
pub struct BucketFit {
    pub cutoffs: Vec<f32>,
    pub weights: Vec<f32>,
    /// All sample values were identical; every code decodes to that value.
    pub degenerate: bool,
}

/// Type-7 (linear interpolation) quantile of an ascending slice.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[inline]
fn bucket_of(cutoffs: &[f32], r: f32) -> usize {
    cutoffs.partition_point(|&c| c <= r)
}

/// Fits cutoffs at the `i/2^bits` quantiles of `sample` and weights at the
/// per-bucket means. An empty bucket gets the midpoint of its interval, with
/// the outer intervals extended one sample standard deviation past the
/// extreme cutoffs.
pub fn fit_buckets(sample: &[f32], bits: u32) -> Result<BucketFit> {
    check_bits(bits)?;
    let n_buckets = 1usize << bits;
    if sample.len() < n_buckets {
        return Err(Error::InsufficientSample { needed: n_buckets, got: sample.len() });
    }
    let mut sorted: Vec<f64> = sample.iter().map(|&x| x as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let cutoffs: Vec<f32> =
        (1..n_buckets).map(|i| quantile_sorted(&sorted, i as f64 / n_buckets as f64) as f32).collect();

    let mut sums = vec![0f64; n_buckets];
    let mut counts = vec![0usize; n_buckets];
    for &x in sample {
        let b = bucket_of(&cutoffs, x);
        sums[b] += x as f64;
        counts[b] += 1;
    }
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let sd = (sorted.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / sorted.len() as f64).sqrt();

    let weights = (0..n_buckets)
        .map(|b| {
            if counts[b] > 0 {
                return (sums[b] / counts[b] as f64) as f32;
            }
            let lo = if b == 0 { cutoffs[0] as f64 - sd } else { cutoffs[b - 1] as f64 };
            let hi = if b == n_buckets - 1 { cutoffs[b - 1] as f64 + sd } else { cutoffs[b] as f64 };
            ((lo + hi) / 2.0) as f32
        })
        .collect();

    let degenerate = sorted.first() == sorted.last();
    if degenerate {
        warn!("degenerate residual sample: all {} values equal {}", sorted.len(), sorted[0]);
    }
    Ok(BucketFit { cutoffs, weights, degenerate })
}

fn check_bits(bits: u32) -> Result<()> {
    if bits == 1 || bits == 2 {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("bits must be 1 or 2, got {bits}")))
    }
}

/// One compressed embedding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressedVector {
    pub centroid_id: u32,
    /// Dimension `j` occupies bits `[b·j, b·(j+1))`, least significant first.
    pub residual_code: Vec<u8>,
}

/// The compression dictionary: centroids plus the residual quantizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Codec {
    bits: u32,
    centroids: Matrix,
    cutoffs: Vec<f32>,
    weights: Vec<f32>,
}

impl Codec {
    pub fn new(centroids: Matrix, bits: u32, cutoffs: Vec<f32>, weights: Vec<f32>) -> Result<Self> {
        check_bits(bits)?;
        let k = centroids.rows() as u64;
        if k == 0 || !k.is_power_of_two() || k > MAX_CENTROIDS {
            return Err(Error::InvalidParams(format!("centroid count {k} is not a power of two in [1, 2^32]")));
        }
        let n_buckets = 1usize << bits;
        if cutoffs.len() != n_buckets - 1 || weights.len() != n_buckets {
            return Err(Error::InvalidParams(format!(
                "{bits}-bit codec needs {} cutoffs and {n_buckets} weights, got {} and {}",
                n_buckets - 1,
                cutoffs.len(),
                weights.len()
            )));
        }
        if cutoffs.windows(2).any(|w| w[0] > w[1]) || cutoffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParams("cutoffs must be finite and ascending".into()));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParams("weights must be finite".into()));
        }
        Ok(Self { bits, centroids, cutoffs, weights })
    }

    /// Trains centroids with k-means on `sample`, then fits the residual
    /// buckets on every residual component of the same sample.
    pub fn train(sample: &Matrix, n_centroids: usize, bits: u32, seed: u64) -> Result<Self> {
        check_bits(bits)?;
        let centroids = train_kmeans(sample, n_centroids, DEFAULT_ITERS, seed)?;
        let mut residuals = Vec::with_capacity(sample.as_slice().len());
        for v in sample.iter_rows() {
            let (t, _) = nearest_centroid(&centroids, v);
            residuals.extend(v.iter().zip(centroids.row(t as usize)).map(|(x, c)| x - c));
        }
        let fit = fit_buckets(&residuals, bits)?;
        Self::new(centroids, bits, fit.cutoffs, fit.weights)
    }

    pub fn dim(&self) -> usize {
        self.centroids.dim()
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn n_centroids(&self) -> usize {
        self.centroids.rows()
    }

    pub fn centroids(&self) -> &Matrix {
        &self.centroids
    }

    pub fn cutoffs(&self) -> &[f32] {
        &self.cutoffs
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn residual_bytes(&self) -> usize {
        residual_bytes(self.dim(), self.bits)
    }

    /// Bucket index of a scalar residual component.
    pub fn bucket(&self, r: f32) -> usize {
        bucket_of(&self.cutoffs, r)
    }

    /// Encodes `v`, appending its packed residual to `out`.
    pub fn encode_into(&self, v: &[f32], out: &mut Vec<u8>) -> Result<u32> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: v.len() });
        }
        let (t, _) = nearest_centroid(&self.centroids, v);
        let start = out.len();
        out.resize(start + self.residual_bytes(), 0);
        let packed = &mut out[start..];
        let b = self.bits as usize;
        for (j, (x, c)) in v.iter().zip(self.centroids.row(t as usize)).enumerate() {
            let code = self.bucket(x - c) as u8;
            let bit = j * b;
            packed[bit / 8] |= code << (bit % 8);
        }
        Ok(t)
    }

    pub fn encode(&self, v: &[f32]) -> Result<CompressedVector> {
        let mut residual_code = Vec::with_capacity(self.residual_bytes());
        let centroid_id = self.encode_into(v, &mut residual_code)?;
        Ok(CompressedVector { centroid_id, residual_code })
    }

    /// Writes `C_t + w(code_j)` for every dimension into `out`.
    pub fn decode_into(&self, centroid_id: u32, code: &[u8], out: &mut [f32]) -> Result<()> {
        if code.len() != self.residual_bytes() {
            return Err(Error::CorruptCode { expected: self.residual_bytes(), got: code.len() });
        }
        if centroid_id as usize >= self.n_centroids() {
            return Err(Error::CentroidOutOfRange { id: centroid_id, n_centroids: self.n_centroids() });
        }
        if out.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: out.len() });
        }
        let b = self.bits as usize;
        let mask = (1u8 << b) - 1;
        for (j, (o, c)) in out.iter_mut().zip(self.centroids.row(centroid_id as usize)).enumerate() {
            let bit = j * b;
            let code = (code[bit / 8] >> (bit % 8)) & mask;
            *o = c + self.weights[code as usize];
        }
        Ok(())
    }

    pub fn decode(&self, cv: &CompressedVector) -> Result<Vec<f32>> {
        let mut out = vec![0.0; self.dim()];
        self.decode_into(cv.centroid_id, &cv.residual_code, &mut out)?;
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CODEC_MAGIC);
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        out.extend_from_slice(&self.bits.to_le_bytes());
        out.extend_from_slice(&(self.n_centroids() as u64).to_le_bytes());
        for x in self.centroids.as_slice().iter().chain(&self.cutoffs).chain(&self.weights) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: String| Error::index("codec.bin", reason);
        if bytes.len() < 24 || &bytes[..8] != CODEC_MAGIC {
            return Err(bad("missing magic header".into()));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let bits = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
        let k = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        if dim == 0 || !(bits == 1 || bits == 2) {
            return Err(bad(format!("invalid dim {dim} or bits {bits}")));
        }
        let n_buckets = 1usize << bits;
        let n_floats = (k as usize)
            .checked_mul(dim)
            .and_then(|v| v.checked_add(2 * n_buckets - 1))
            .ok_or_else(|| bad("size overflow".into()))?;
        if bytes.len() != 24 + 4 * n_floats {
            return Err(bad(format!("length {} != expected {}", bytes.len(), 24 + 4 * n_floats)));
        }
        let floats: Vec<f32> = bytes[24..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let (cent, rest) = floats.split_at(k as usize * dim);
        let (cutoffs, weights) = rest.split_at(n_buckets - 1);
        Self::new(Matrix::new(dim, cent.to_vec())?, bits, cutoffs.to_vec(), weights.to_vec())
            .map_err(|e| bad(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}
