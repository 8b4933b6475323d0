//! Token composition of clusters: how many distinct tokens share a
//! centroid, how many centroids each token spreads over, and the same
//! statistics for random embeddings carrying the same token multiplicities.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kmeans::{nearest_centroid, train_kmeans, DEFAULT_ITERS};
use crate::matrix::{norm, Matrix};

/// Token id of every embedding, with an optional id → string vocabulary.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TokenAnnotation {
    pub token_ids: Vec<u64>,
    pub vocab: Option<BTreeMap<u64, String>>,
}

impl TokenAnnotation {
    pub fn new(token_ids: Vec<u64>) -> Self {
        Self { token_ids, vocab: None }
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn label(&self, token: u64) -> String {
        self.vocab.as_ref().and_then(|v| v.get(&token).cloned()).unwrap_or_else(|| token.to_string())
    }
}

fn tsv_pairs(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r').split('\t').map(str::to_string).collect()))
        .collect())
}

/// Reads `embedding_offset<TAB>token_id` lines; every offset in
/// `0..n_embeddings` must appear exactly once.
pub fn read_tokens(path: impl AsRef<Path>, n_embeddings: usize) -> Result<TokenAnnotation> {
    let path = path.as_ref();
    let mut ids: Vec<Option<u64>> = vec![None; n_embeddings];
    for (line, fields) in tsv_pairs(path)? {
        let bad = |reason: &str| Error::MalformedLine { path: path.to_path_buf(), line, reason: reason.into() };
        if fields.len() != 2 {
            return Err(bad("expected embedding_offset<TAB>token_id"));
        }
        let off: usize = fields[0].trim().parse().map_err(|_| bad("invalid embedding offset"))?;
        let tok: u64 = fields[1].trim().parse().map_err(|_| bad("invalid token id"))?;
        let slot = ids.get_mut(off).ok_or_else(|| bad("embedding offset out of range"))?;
        if slot.replace(tok).is_some() {
            return Err(bad("duplicate embedding offset"));
        }
    }
    let token_ids = ids
        .into_iter()
        .enumerate()
        .map(|(e, t)| t.ok_or_else(|| Error::LengthMismatch(format!("no token for embedding {e}"))))
        .collect::<Result<_>>()?;
    Ok(TokenAnnotation::new(token_ids))
}

pub fn read_vocab(path: impl AsRef<Path>) -> Result<BTreeMap<u64, String>> {
    let path = path.as_ref();
    let mut vocab = BTreeMap::new();
    for (line, fields) in tsv_pairs(path)? {
        let bad =
            || Error::MalformedLine { path: path.to_path_buf(), line, reason: "expected token_id<TAB>string".into() };
        if fields.len() != 2 {
            return Err(bad());
        }
        vocab.insert(fields[0].trim().parse().map_err(|_| bad())?, fields[1].clone());
    }
    Ok(vocab)
}

pub fn write_tokens(annot: &TokenAnnotation, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let s: String = annot.token_ids.iter().enumerate().map(|(e, t)| format!("{e}\t{t}\n")).collect();
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTokenStats {
    /// Distinct non-stopword tokens per non-empty cluster, by cluster id.
    pub tokens_per_cluster: Vec<(u32, usize)>,
    /// Distinct clusters per non-stopword token, by token id.
    pub clusters_per_token: Vec<(u64, usize)>,
    /// Tokens spread over the most clusters (top 1% of distinct tokens).
    pub stopwords: Vec<u64>,
}

impl ClusterTokenStats {
    pub fn tokens_per_cluster_values(&self) -> Vec<usize> {
        self.tokens_per_cluster.iter().map(|x| x.1).collect()
    }

    pub fn clusters_per_token_values(&self) -> Vec<usize> {
        self.clusters_per_token.iter().map(|x| x.1).collect()
    }
}

/// Number of stopwords for a vocabulary of `n_tokens` distinct tokens.
pub fn stopword_count(n_tokens: usize) -> usize {
    n_tokens / 100
}

pub fn cluster_token_stats(codes: &[u32], annot: &TokenAnnotation) -> Result<ClusterTokenStats> {
    if codes.len() != annot.len() {
        return Err(Error::LengthMismatch(format!(
            "{} cluster codes vs {} token annotations",
            codes.len(),
            annot.len()
        )));
    }
    let mut pairs: Vec<(u32, u64)> = codes.iter().copied().zip(annot.token_ids.iter().copied()).collect();
    pairs.sort_unstable();
    pairs.dedup();

    let mut spread: BTreeMap<u64, usize> = BTreeMap::new();
    for &(_, t) in &pairs {
        *spread.entry(t).or_default() += 1;
    }
    let mut ranked: Vec<(u64, usize)> = spread.iter().map(|(&t, &c)| (t, c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut stopwords: Vec<u64> = ranked[..stopword_count(ranked.len())].iter().map(|x| x.0).collect();
    stopwords.sort_unstable();

    let mut tokens_per_cluster: Vec<(u32, usize)> = Vec::new();
    for &(c, t) in &pairs {
        if tokens_per_cluster.last().map(|x| x.0) != Some(c) {
            tokens_per_cluster.push((c, 0));
        }
        if stopwords.binary_search(&t).is_err() {
            tokens_per_cluster.last_mut().unwrap().1 += 1;
        }
    }
    let clusters_per_token = spread.into_iter().filter(|(t, _)| stopwords.binary_search(t).is_err()).collect();
    Ok(ClusterTokenStats { tokens_per_cluster, clusters_per_token, stopwords })
}

/// Empirical CDF: each distinct value with the fraction of values `≤` it.
pub fn ecdf(values: &[usize]) -> Result<Vec<(usize, f64)>> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let mut out: Vec<(usize, f64)> = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 = frac,
            _ => out.push((v, frac)),
        }
    }
    Ok(out)
}

/// Fraction of `values` that are `≤ threshold`.
pub fn fraction_at_most(values: &[usize], threshold: usize) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|&&v| v <= threshold).count() as f64 / values.len() as f64
}

pub fn random_unit_vectors(n: usize, dim: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Matrix::zeros(0, dim);
    let mut v = vec![0f32; dim];
    for _ in 0..n {
        loop {
            v.iter_mut().for_each(|x| *x = StandardNormal.sample(&mut rng));
            let len = norm(&v);
            if len > 1e-6 {
                v.iter_mut().for_each(|x| *x = (*x as f64 / len) as f32);
                break;
            }
        }
        m.push_row(&v);
    }
    m
}

/// Clusters `embeddings` with k-means and assigns every row to its nearest
/// centroid.
pub fn cluster_assignments(embeddings: &Matrix, k: usize, seed: u64) -> Result<Vec<u32>> {
    let centroids = train_kmeans(embeddings, k, DEFAULT_ITERS, seed)?;
    Ok((0..embeddings.rows()).into_par_iter().map(|i| nearest_centroid(&centroids, embeddings.row(i)).0).collect())
}

/// Same statistics for random unit embeddings that keep each embedding's
/// token, clustered into `k` groups.
pub fn random_baseline(annot: &TokenAnnotation, dim: usize, k: usize, seed: u64) -> Result<ClusterTokenStats> {
    let embeddings = random_unit_vectors(annot.len(), dim, seed);
    let codes = cluster_assignments(&embeddings, k, seed)?;
    cluster_token_stats(&codes, annot)
}

/// Most frequent tokens of each non-empty cluster, `(token, count)`.
/// A cluster id with its most frequent `(token_id, count)` pairs.
pub type ClusterExemplar = (u32, Vec<(u64, usize)>);

pub fn cluster_exemplars(codes: &[u32], annot: &TokenAnnotation, top: usize) -> Result<Vec<ClusterExemplar>> {
    if codes.len() != annot.len() {
        return Err(Error::LengthMismatch("codes vs token annotations".into()));
    }
    let mut counts: BTreeMap<u32, HashMap<u64, usize>> = BTreeMap::new();
    for (&c, &t) in codes.iter().zip(&annot.token_ids) {
        *counts.entry(c).or_default().entry(t).or_default() += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(c, m)| {
            let mut v: Vec<(u64, usize)> = m.into_iter().collect();
            v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            v.truncate(top);
            (c, v)
        })
        .collect())
}

pub fn format_ecdf(points: &[(usize, f64)]) -> String {
    let mut s = String::from("value\tcumulative_fraction\n");
    for (v, f) in points {
        s.push_str(&format!("{v}\t{f:.6}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cluster_token() {
        let annot = TokenAnnotation::new(vec![7, 7, 7, 8]);
        let stats = cluster_token_stats(&[2, 2, 2, 0], &annot).unwrap();
        assert_eq!(stats.clusters_per_token, vec![(7, 1), (8, 1)]);
        assert_eq!(stats.tokens_per_cluster, vec![(0, 1), (2, 1)]);
    }

    #[test]
    fn split_tokens() {
        let annot = TokenAnnotation::new(vec![1, 2, 1, 2]);
        let stats = cluster_token_stats(&[0, 0, 1, 1], &annot).unwrap();
        assert_eq!(stats.tokens_per_cluster_values(), vec![2, 2]);
        assert_eq!(stats.clusters_per_token_values(), vec![2, 2]);
        assert!(matches!(cluster_token_stats(&[0], &annot), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn stopwords_are_top_percent_by_spread() {
        // 200 tokens; tokens 0 and 1 appear in many clusters
        let mut codes = Vec::new();
        let mut toks = Vec::new();
        for t in 0..200u64 {
            let spread = if t < 2 { 50 } else { 1 };
            for c in 0..spread {
                codes.push((t as u32 + c) % 64);
                toks.push(t);
            }
        }
        let stats = cluster_token_stats(&codes, &TokenAnnotation::new(toks)).unwrap();
        assert_eq!(stats.stopwords, vec![0, 1]);
        assert_eq!(stats.clusters_per_token.len(), 198);
        let a: usize = stats.tokens_per_cluster_values().iter().sum();
        let b: usize = stats.clusters_per_token_values().iter().sum();
        assert_eq!(a, b);
    }

    #[test]
    fn ecdf_examples() {
        assert_eq!(ecdf(&[1, 1, 2]).unwrap(), vec![(1, 2.0 / 3.0), (2, 1.0)]);
        assert_eq!(ecdf(&[4]).unwrap(), vec![(4, 1.0)]);
        let line = ecdf(&[1, 2, 3, 4]).unwrap();
        assert_eq!(line, vec![(1, 0.25), (2, 0.5), (3, 0.75), (4, 1.0)]);
        assert!(matches!(ecdf(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn one_cluster_baseline_collapses() {
        let annot = TokenAnnotation::new((0..40).map(|i| i % 5).collect());
        let stats = random_baseline(&annot, 8, 1, 3).unwrap();
        assert_eq!(stats.tokens_per_cluster, vec![(0, 5)]);
        assert!(stats.clusters_per_token.iter().all(|x| x.1 == 1));
    }

    #[test]
    fn exemplars_rank_by_count() {
        let annot = TokenAnnotation::new(vec![5, 5, 6, 9, 9, 9]);
        let ex = cluster_exemplars(&[0, 0, 0, 1, 1, 1], &annot, 1).unwrap();
        assert_eq!(ex, vec![(0, vec![(5, 2)]), (1, vec![(9, 3)])]);
    }
}
