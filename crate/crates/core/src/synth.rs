//! Seeded synthetic corpora with exact relevance judgments.
//!
//! `clustered`: `n_clusters` random unit directions; every passage token
//! picks a direction, adds Gaussian jitter of norm ≈ `spread`, and is
//! renormalized. Its token id is the direction index, so each token owns
//! one region of the space. `random`: tokens are uniform on the sphere and
//! token ids are drawn independently.
//!
//! Each query copies `query_tokens` distinct rows of one passage, moves each
//! by a random unit vector scaled by `noise` and renormalizes; that passage
//! is the query's only relevant passage.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::analysis::{write_tokens, TokenAnnotation};
use crate::error::{Error, Result};
use crate::io::{write_embeddings, write_qrels, EmbeddingSet, Passage, Precision, Qrels};
use crate::matrix::{norm, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Clustered,
    Random,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clustered" => Ok(Profile::Clustered),
            "random" => Ok(Profile::Random),
            _ => Err(Error::InvalidParams(format!("unknown profile {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub profile: Profile,
    pub n_passages: usize,
    /// Maximum passage length; lengths are uniform in `[⌈t/2⌉, t]`.
    pub tokens_per_passage: usize,
    pub dim: usize,
    pub n_clusters: usize,
    /// Query perturbation in `[0, 1)`.
    pub noise: f64,
    /// Within-cluster jitter of passage tokens.
    pub spread: f64,
    pub n_queries: usize,
    pub query_tokens: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Clustered,
            n_passages: 1000,
            tokens_per_passage: 32,
            dim: 32,
            n_clusters: 64,
            noise: 0.1,
            spread: 0.5,
            n_queries: 100,
            query_tokens: 8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let positive = [
            ("n_passages", self.n_passages),
            ("tokens_per_passage", self.tokens_per_passage),
            ("dim", self.dim),
            ("n_clusters", self.n_clusters),
            ("query_tokens", self.query_tokens),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidParams(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::InvalidParams(format!("noise {} outside [0, 1)", self.noise)));
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return Err(Error::InvalidParams("spread must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub corpus: EmbeddingSet,
    pub queries: EmbeddingSet,
    pub qrels: Qrels,
    /// Token id of every corpus embedding, in embedding-id order.
    pub tokens: TokenAnnotation,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalized(v: &[f64]) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let g = gaussian(rng, dim);
        let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return g.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn synth(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.dim;
    let directions: Vec<Vec<f64>> = (0..cfg.n_clusters).map(|_| random_unit(&mut rng, dim)).collect();
    let scale = cfg.spread / (dim as f64).sqrt();

    let min_len = cfg.tokens_per_passage.div_ceil(2);
    let mut passages = Vec::with_capacity(cfg.n_passages);
    let mut token_ids = Vec::new();
    for id in 0..cfg.n_passages {
        let len = rng.random_range(min_len..=cfg.tokens_per_passage);
        let mut m = Matrix::zeros(0, dim);
        for _ in 0..len {
            let c = rng.random_range(0..cfg.n_clusters);
            let v = match cfg.profile {
                Profile::Clustered => {
                    let g = gaussian(&mut rng, dim);
                    directions[c].iter().zip(&g).map(|(d, x)| d + scale * x).collect::<Vec<_>>()
                }
                Profile::Random => random_unit(&mut rng, dim),
            };
            m.push_row(&normalized(&v));
            token_ids.push(c as u64);
        }
        passages.push(Passage { id: id as u64, vectors: m });
    }

    let mut queries = Vec::with_capacity(cfg.n_queries);
    let mut qrels = Qrels::new();
    for qid in 0..cfg.n_queries {
        let target = rng.random_range(0..cfg.n_passages);
        let doc = &passages[target].vectors;
        let take = cfg.query_tokens.min(doc.rows());
        let mut rows = rand::seq::index::sample(&mut rng, doc.rows(), take).into_vec();
        rows.sort_unstable();
        let mut m = Matrix::zeros(0, dim);
        for r in rows {
            let src = doc.row(r);
            if cfg.noise == 0.0 {
                m.push_row(src);
            } else {
                let u = random_unit(&mut rng, dim);
                let v: Vec<f64> = src.iter().zip(&u).map(|(&s, x)| s as f64 + cfg.noise * x).collect();
                m.push_row(&normalized(&v));
            }
        }
        queries.push(Passage { id: qid as u64, vectors: m });
        qrels.insert(qid as u64, target as u64);
    }

    Ok(SynthData {
        corpus: EmbeddingSet::new(dim, Precision::Fp32, passages)?,
        queries: EmbeddingSet::new(dim, Precision::Fp32, queries)?,
        qrels,
        tokens: TokenAnnotation::new(token_ids),
    })
}

/// File names written by [`write_synth`].
#[derive(Debug, Clone)]
pub struct SynthPaths {
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub qrels: PathBuf,
    pub tokens: PathBuf,
}

impl SynthPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            corpus: dir.join("corpus.emb"),
            queries: dir.join("queries.emb"),
            qrels: dir.join("qrels.tsv"),
            tokens: dir.join("tokens.tsv"),
        }
    }
}

pub fn write_synth(data: &SynthData, dir: impl AsRef<Path>) -> Result<SynthPaths> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = SynthPaths::in_dir(dir);
    write_embeddings(&data.corpus, &paths.corpus)?;
    write_embeddings(&data.queries, &paths.queries)?;
    write_qrels(&data.qrels, &paths.qrels)?;
    write_tokens(&data.tokens, &paths.tokens)?;
    Ok(paths)
}

/// Largest `|‖v‖ − 1|` over a set.
pub fn max_norm_deviation(set: &EmbeddingSet) -> f64 {
    set.passages()
        .iter()
        .flat_map(|p| p.vectors.iter_rows().map(|r| (norm(r) - 1.0).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max)
}
