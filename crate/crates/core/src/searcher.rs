//! Two-stage late-interaction search over a compressed index.
//!
//! Stage one probes the `nprobe` centroids nearest to each query token,
//! decompresses the embeddings in their inverted lists and max-reduces the
//! similarities per passage, giving a lower bound on each passage's MaxSim.
//! Stage two fully decompresses the best `ncandidates` passages and scores
//! them exactly.

use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::indexer::{CompressedIndex, InvertedLists};
use crate::io::EmbeddingSet;
use crate::matrix::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchParams {
    /// Centroids probed per query token.
    pub nprobe: usize,
    /// Passages advanced to exact rescoring.
    pub ncandidates: usize,
    /// Results returned.
    pub k: usize,
}

impl SearchParams {
    pub fn new(nprobe: usize, ncandidates: usize, k: usize) -> Self {
        Self { nprobe, ncandidates, k }
    }

    /// `nprobe` with the default candidate budget `nprobe · 2^12`.
    pub fn with_probe(nprobe: usize, k: usize) -> Self {
        Self { nprobe, ncandidates: nprobe << 12, k }
    }

    pub fn validate(&self, n_centroids: usize) -> Result<()> {
        if self.nprobe == 0 || self.ncandidates == 0 || self.k == 0 {
            return Err(Error::InvalidParams("nprobe, ncandidates and k must be positive".into()));
        }
        if self.k > self.ncandidates {
            return Err(Error::InvalidParams(format!("k = {} exceeds ncandidates = {}", self.k, self.ncandidates)));
        }
        if self.nprobe > n_centroids {
            return Err(Error::InvalidParams(format!(
                "nprobe = {} exceeds the index's {n_centroids} centroids",
                self.nprobe
            )));
        }
        Ok(())
    }
}

impl Default for SearchParams {
    fn default() -> Self {
        Self::with_probe(2, 10)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPassage {
    pub passage_id: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRanking {
    pub query_id: u64,
    pub hits: Vec<ScoredPassage>,
}

/// Rankings for a batch of queries, in input order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedResults {
    pub rankings: Vec<QueryRanking>,
}

impl RankedResults {
    pub fn get(&self, query_id: u64) -> Option<&QueryRanking> {
        self.rankings.iter().find(|r| r.query_id == query_id)
    }
}

/// Score descending, then passage id ascending.
pub fn rank_order(a: &ScoredPassage, b: &ScoredPassage) -> Ordering {
    b.score.total_cmp(&a.score).then(a.passage_id.cmp(&b.passage_id))
}

/// `Σ_i max_j Q_i · D_j`.
pub fn maxsim(query: &Matrix, doc: &Matrix) -> Result<f64> {
    if query.dim() != doc.dim() {
        return Err(Error::DimensionMismatch { expected: query.dim(), found: doc.dim() });
    }
    Ok(query.iter_rows().map(|q| doc.iter_rows().map(|d| dot(q, d)).fold(f64::NEG_INFINITY, f64::max)).sum())
}

/// A passage reached through the probed inverted lists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    /// Position of the passage in the index (not its id).
    pub passage: usize,
    /// `Σ_i max(0, max over gathered embeddings of Q_i · ṽ)`.
    pub approx_score: f64,
}

/// Ids of the `nprobe` centroids with the largest dot product with `q`,
/// ties broken toward the lower id.
pub fn nearest_centroids(centroids: &Matrix, q: &[f32], nprobe: usize) -> Vec<u32> {
    let mut scored: Vec<(f64, u32)> =
        centroids.iter_rows().enumerate().map(|(c, row)| (dot(q, row), c as u32)).collect();
    let order = |a: &(f64, u32), b: &(f64, u32)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    let nprobe = nprobe.min(scored.len());
    if nprobe < scored.len() {
        scored.select_nth_unstable_by(nprobe, order);
        scored.truncate(nprobe);
    }
    scored.sort_by(order);
    scored.into_iter().map(|(_, c)| c).collect()
}

/// Candidate generation; returns every touched passage in index order.
pub fn generate_candidates(
    query: &Matrix,
    index: &CompressedIndex,
    ivf: &InvertedLists,
    nprobe: usize,
) -> Result<Vec<Candidate>> {
    if query.dim() != index.dim() {
        return Err(Error::DimensionMismatch { expected: index.dim(), found: query.dim() });
    }
    let mut totals: HashMap<usize, f64> = HashMap::new();
    let mut row_max: HashMap<usize, f64> = HashMap::new();
    let mut buf = vec![0f32; index.dim()];
    for q in query.iter_rows() {
        row_max.clear();
        for c in nearest_centroids(index.codec.centroids(), q, nprobe) {
            for &e in ivf.list(c as usize) {
                index.decode_embedding(e as usize, &mut buf)?;
                let s = dot(q, &buf);
                let m = row_max.entry(index.passage_of(e as usize)).or_insert(f64::NEG_INFINITY);
                if s > *m {
                    *m = s;
                }
            }
        }
        for (&p, &m) in &row_max {
            *totals.entry(p).or_insert(0.0) += m.max(0.0);
        }
    }
    let mut out: Vec<Candidate> =
        totals.into_iter().map(|(passage, approx_score)| Candidate { passage, approx_score }).collect();
    out.sort_unstable_by_key(|c| c.passage);
    Ok(out)
}

/// Full two-stage search for one query matrix.
pub fn search(
    query: &Matrix,
    index: &CompressedIndex,
    ivf: &InvertedLists,
    params: &SearchParams,
) -> Result<Vec<ScoredPassage>> {
    params.validate(index.codec.n_centroids())?;
    let mut candidates = generate_candidates(query, index, ivf, params.nprobe)?;
    candidates.sort_by(|a, b| {
        b.approx_score.total_cmp(&a.approx_score).then(index.passage_ids[a.passage].cmp(&index.passage_ids[b.passage]))
    });
    candidates.truncate(params.ncandidates);

    let mut hits = candidates
        .iter()
        .map(|c| {
            let doc = index.decode_passage(c.passage)?;
            Ok(ScoredPassage { passage_id: index.passage_ids[c.passage], score: maxsim(query, &doc)? })
        })
        .collect::<Result<Vec<_>>>()?;
    hits.sort_by(rank_order);
    hits.truncate(params.k);
    Ok(hits)
}

/// Searches every query in `queries`, fanning out across threads; output
/// follows input order.
pub fn search_batch(
    queries: &EmbeddingSet,
    index: &CompressedIndex,
    ivf: &InvertedLists,
    params: &SearchParams,
) -> Result<RankedResults> {
    params.validate(index.codec.n_centroids())?;
    if !queries.is_empty() && queries.dim() != index.dim() {
        return Err(Error::DimensionMismatch { expected: index.dim(), found: queries.dim() });
    }
    let rankings = queries
        .passages()
        .par_iter()
        .map(|q| Ok(QueryRanking { query_id: q.id, hits: search(&q.vectors, index, ivf, params)? }))
        .collect::<Result<Vec<_>>>()?;
    Ok(RankedResults { rankings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxsim_examples() {
        let q = Matrix::from_rows(&[[1.0f32, 0.0], [0.0, 1.0]]).unwrap();
        let d = Matrix::from_rows(&[[0.6f32, 0.8], [1.0, 0.0], [0.8, -0.6]]).unwrap();
        // brute force over all 2×3 dot products: max(0.6, 1, 0.8) + max(0.8, 0, -0.6)
        let expected: f64 = [[0.6f32, 1.0, 0.8], [0.8, 0.0, -0.6]]
            .iter()
            .map(|r| r.iter().fold(f32::MIN, |a, &b| a.max(b)) as f64)
            .sum();
        assert!((maxsim(&q, &d).unwrap() - expected).abs() < 1e-6);
        assert!((maxsim(&q, &d).unwrap() - 1.8).abs() < 1e-6);

        let one = Matrix::from_rows(&[[0.6f32, 0.8]]).unwrap();
        assert!((maxsim(&one, &d).unwrap() - 1.0).abs() < 1e-6);

        let dup = Matrix::from_rows(&[[0.6f32, 0.8]; 3]).unwrap();
        assert_eq!(maxsim(&dup, &d).unwrap(), 3.0 * maxsim(&one, &d).unwrap());

        let bad = Matrix::from_rows(&[[1.0f32, 0.0, 0.0]]).unwrap();
        assert!(maxsim(&bad, &d).is_err());
    }

    #[test]
    fn probe_order_breaks_ties_low() {
        let c = Matrix::from_rows(&[[0.0f32, 1.0], [1.0, 0.0], [1.0, 0.0], [0.5, 0.5]]).unwrap();
        assert_eq!(nearest_centroids(&c, &[1.0, 0.0], 2), vec![1, 2]);
        assert_eq!(nearest_centroids(&c, &[1.0, 0.0], 4), vec![1, 2, 3, 0]);
    }

    #[test]
    fn params_validation() {
        assert!(SearchParams::new(2, 10, 11).validate(4).is_err());
        assert!(SearchParams::new(5, 10, 1).validate(4).is_err());
        assert!(SearchParams::new(4, 10, 10).validate(4).is_ok());
        assert_eq!(SearchParams::default().ncandidates, 8192);
    }

    #[test]
    fn rank_order_ties_by_id() {
        let mut v = [
            ScoredPassage { passage_id: 9, score: 1.0 },
            ScoredPassage { passage_id: 3, score: 1.0 },
            ScoredPassage { passage_id: 5, score: 2.0 },
        ];
        v.sort_by(rank_order);
        let ids: Vec<u64> = v.iter().map(|h| h.passage_id).collect();
        assert_eq!(ids, vec![5, 3, 9]);
    }
}
