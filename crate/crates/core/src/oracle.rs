//! Exhaustive late-interaction scoring: every query token against every
//! token of every passage. Deliberately unoptimized and kept apart from the
//! searcher's kernels so that it can serve as ground truth.

use crate::error::{Error, Result};
use crate::indexer::CompressedIndex;
use crate::io::EmbeddingSet;
use crate::matrix::Matrix;
use crate::searcher::{QueryRanking, RankedResults, ScoredPassage};

fn exhaustive_score(query: &Matrix, doc: &Matrix, clamp: bool) -> f64 {
    let mut total = 0.0f64;
    for i in 0..query.rows() {
        let q = query.row(i);
        let mut best = f64::NEG_INFINITY;
        for j in 0..doc.rows() {
            let d = doc.row(j);
            let mut s = 0.0f64;
            for t in 0..q.len() {
                s += q[t] as f64 * d[t] as f64;
            }
            if s > best {
                best = s;
            }
        }
        total += if clamp && best < 0.0 { 0.0 } else { best };
    }
    total
}

fn top_k(mut scored: Vec<ScoredPassage>, k: usize) -> Vec<ScoredPassage> {
    scored.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("finite scores").then(a.passage_id.cmp(&b.passage_id)));
    scored.truncate(k);
    scored
}

/// Exact MaxSim ranking over uncompressed embeddings.
pub fn brute_force_search(query: &Matrix, corpus: &EmbeddingSet, k: usize) -> Result<Vec<ScoredPassage>> {
    if query.dim() != corpus.dim() {
        return Err(Error::DimensionMismatch { expected: corpus.dim(), found: query.dim() });
    }
    let scored = corpus
        .passages()
        .iter()
        .map(|p| ScoredPassage { passage_id: p.id, score: exhaustive_score(query, &p.vectors, false) })
        .collect();
    Ok(top_k(scored, k))
}

/// Exact score of every passage of `index` after decompression, in index
/// order. With `clamp`, each per-token maximum is floored at zero.
pub fn decoded_scores(query: &Matrix, index: &CompressedIndex, clamp: bool) -> Result<Vec<f64>> {
    if query.dim() != index.dim() {
        return Err(Error::DimensionMismatch { expected: index.dim(), found: query.dim() });
    }
    (0..index.n_passages()).map(|p| Ok(exhaustive_score(query, &index.decode_passage(p)?, clamp))).collect()
}

/// Exact MaxSim ranking over every decompressed passage of `index`.
pub fn brute_force_decoded(
    query: &Matrix,
    index: &CompressedIndex,
    k: usize,
    clamp: bool,
) -> Result<Vec<ScoredPassage>> {
    let scores = decoded_scores(query, index, clamp)?;
    let scored = scores
        .into_iter()
        .zip(&index.passage_ids)
        .map(|(score, &passage_id)| ScoredPassage { passage_id, score })
        .collect();
    Ok(top_k(scored, k))
}

pub fn brute_force_batch(queries: &EmbeddingSet, corpus: &EmbeddingSet, k: usize) -> Result<RankedResults> {
    let rankings = queries
        .passages()
        .iter()
        .map(|q| Ok(QueryRanking { query_id: q.id, hits: brute_force_search(&q.vectors, corpus, k)? }))
        .collect::<Result<_>>()?;
    Ok(RankedResults { rankings })
}

pub fn brute_force_decoded_batch(
    queries: &EmbeddingSet,
    index: &CompressedIndex,
    k: usize,
    clamp: bool,
) -> Result<RankedResults> {
    let rankings = queries
        .passages()
        .iter()
        .map(|q| Ok(QueryRanking { query_id: q.id, hits: brute_force_decoded(&q.vectors, index, k, clamp)? }))
        .collect::<Result<_>>()?;
    Ok(RankedResults { rankings })
}
