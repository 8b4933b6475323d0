//! Lloyd's k-means with k-means++ seeding over squared Euclidean distance.
//!
//! Every random draw comes from a ChaCha stream seeded by the caller, point
//! assignment is the only parallel step, and centroid sums are accumulated
//! sequentially in point order, so results depend only on the inputs and
//! the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{squared_l2, Matrix};

pub const DEFAULT_ITERS: usize = 20;

#[derive(Debug, Clone)]
pub struct KMeansOutput {
    pub centroids: Matrix,
    /// Assignment objective (sum of squared distances) measured after each
    /// assignment step.
    pub objective: Vec<f64>,
}

/// Nearest centroid by squared Euclidean distance; ties go to the lower id.
pub fn nearest_centroid(centroids: &Matrix, v: &[f32]) -> (u32, f64) {
    let mut best = (0u32, f64::INFINITY);
    for (i, c) in centroids.iter_rows().enumerate() {
        let d = squared_l2(v, c);
        if d < best.1 {
            best = (i as u32, d);
        }
    }
    best
}

pub fn train_kmeans(sample: &Matrix, k: usize, iters: usize, seed: u64) -> Result<Matrix> {
    train_kmeans_traced(sample, k, iters, seed).map(|o| o.centroids)
}

pub fn train_kmeans_traced(sample: &Matrix, k: usize, iters: usize, seed: u64) -> Result<KMeansOutput> {
    if k == 0 || iters == 0 {
        return Err(Error::InvalidParams("k and iters must be positive".into()));
    }
    let n = sample.rows();
    if n < k {
        return Err(Error::InsufficientSample { needed: k, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(sample, k, &mut rng);
    let mut objective = Vec::with_capacity(iters);
    let mut prev_assign: Option<Vec<u32>> = None;

    for _ in 0..iters {
        let assigned: Vec<(u32, f64)> =
            (0..n).into_par_iter().map(|i| nearest_centroid(&centroids, sample.row(i))).collect();
        objective.push(assigned.iter().map(|a| a.1).sum());
        let assign: Vec<u32> = assigned.iter().map(|a| a.0).collect();
        if prev_assign.as_ref() == Some(&assign) {
            break;
        }

        let dim = sample.dim();
        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &c) in assign.iter().enumerate() {
            let c = c as usize;
            counts[c] += 1;
            for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(sample.row(i)) {
                *s += x as f64;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *dst = (s / inv) as f32;
                }
            }
        }

        let mut dist: Vec<f64> = assigned.iter().map(|a| a.1).collect();
        let mut reseeded = false;
        for c in (0..k).filter(|&c| counts[c] == 0) {
            // farthest point from its own centroid, lowest index on ties
            let (far, _) =
                dist.iter()
                    .enumerate()
                    .fold((0usize, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
            centroids.row_mut(c).copy_from_slice(sample.row(far));
            dist[far] = f64::NEG_INFINITY;
            reseeded = true;
        }
        prev_assign = if reseeded { None } else { Some(assign) };
    }
    Ok(KMeansOutput { centroids, objective })
}

fn kmeans_plus_plus(sample: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = sample.rows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = (0..n).map(|i| squared_l2(sample.row(i), sample.row(chosen[0]))).collect();

    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target at the very end of the mass
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // every point coincides with a chosen center
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        let c = sample.row(next);
        d2.par_iter_mut().enumerate().for_each(|(i, d)| {
            let nd = squared_l2(sample.row(i), c);
            if nd < *d {
                *d = nd;
            }
        });
    }

    let mut centroids = Matrix::zeros(0, sample.dim());
    for &i in &chosen {
        centroids.push_row(sample.row(i));
    }
    centroids
}
