//! Python bindings: embedding sets, compressed indexes, exact oracles,
//! ranking metrics and the synthetic corpus generator.

use std::collections::BTreeMap;

use lateindex::indexer::{index_stats, BuildConfig};
use lateindex::oracle;
use lateindex::synth::{Profile, SynthConfig};
use lateindex::{
    CompressedIndex, EmbeddingSet, Error, InvertedLists, Matrix, Passage, Precision, Qrels, QueryRanking,
    RankedResults, ScoredPassage, SearchParams,
};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    if e.is_io() {
        PyIOError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn matrix(rows: Vec<Vec<f32>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(to_py)
}

fn rows(m: &Matrix) -> Vec<Vec<f32>> {
    m.iter_rows().map(<[f32]>::to_vec).collect()
}

fn hits(h: &[ScoredPassage]) -> Vec<(u64, f64)> {
    h.iter().map(|s| (s.passage_id, s.score)).collect()
}

fn qrels_to_py(q: &Qrels) -> BTreeMap<u64, Vec<u64>> {
    q.iter().map(|(qid, pids)| (qid, pids.iter().copied().collect())).collect()
}

/// `(mean, per_query, skipped)`.
type MetricSummary = (f64, Vec<(u64, f64)>, usize);
/// `(corpus, queries, qrels, token_ids)`.
type SynthOutput = (PyEmbeddingSet, PyEmbeddingSet, BTreeMap<u64, Vec<u64>>, Vec<u64>);

/// A validated set of passages, each a list of unit-norm token embeddings.
#[pyclass(name = "EmbeddingSet", module = "lateindex_py")]
struct PyEmbeddingSet {
    inner: EmbeddingSet,
}

#[pymethods]
impl PyEmbeddingSet {
    /// `passages` maps passage id to its rows; ids are taken in ascending order.
    #[new]
    #[pyo3(signature = (dim, passages, fp16 = false))]
    fn new(dim: usize, passages: BTreeMap<u64, Vec<Vec<f32>>>, fp16: bool) -> PyResult<Self> {
        let passages = passages
            .into_iter()
            .map(|(id, r)| Ok(Passage { id, vectors: matrix(r)? }))
            .collect::<PyResult<Vec<_>>>()?;
        let precision = if fp16 { Precision::Fp16 } else { Precision::Fp32 };
        Ok(Self { inner: EmbeddingSet::new(dim, precision, passages).map_err(to_py)? })
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Self { inner: lateindex::io::read_embeddings(path).map_err(to_py)? })
    }

    fn write(&self, path: &str) -> PyResult<()> {
        lateindex::io::write_embeddings(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn n_vectors(&self) -> usize {
        self.inner.n_vectors()
    }

    fn ids(&self) -> Vec<u64> {
        self.inner.ids().collect()
    }

    fn get(&self, id: u64) -> Option<Vec<Vec<f32>>> {
        self.inner.get(id).map(|p| rows(&p.vectors))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "EmbeddingSet(passages={}, vectors={}, dim={})",
            self.inner.len(),
            self.inner.n_vectors(),
            self.inner.dim()
        )
    }
}

/// A compressed index with its inverted lists.
#[pyclass(name = "Index", module = "lateindex_py")]
struct PyIndex {
    index: CompressedIndex,
    ivf: InvertedLists,
}

impl PyIndex {
    fn params(&self, nprobe: usize, ncandidates: Option<usize>, k: usize) -> SearchParams {
        SearchParams { ncandidates: ncandidates.unwrap_or(nprobe << 12), ..SearchParams::new(nprobe, 0, k) }
    }
}

#[pymethods]
impl PyIndex {
    #[staticmethod]
    #[pyo3(signature = (corpus, bits = 2, seed = 0, chunk_size = 1024, sample_mult = 1.0))]
    fn build(
        py: Python<'_>,
        corpus: &PyEmbeddingSet,
        bits: u32,
        seed: u64,
        chunk_size: usize,
        sample_mult: f64,
    ) -> PyResult<Self> {
        let cfg = BuildConfig { bits, seed, chunk_size, sample_mult };
        let (index, ivf) = py.detach(|| lateindex::build_index(&corpus.inner, &cfg)).map_err(to_py)?;
        Ok(Self { index, ivf })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (index, ivf) = lateindex::load_index(path).map_err(to_py)?;
        Ok(Self { index, ivf })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        lateindex::save_index(&self.index, &self.ivf, path).map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.index.dim()
    }

    #[getter]
    fn bits(&self) -> u32 {
        self.index.codec.bits()
    }

    #[getter]
    fn n_centroids(&self) -> usize {
        self.index.codec.n_centroids()
    }

    #[getter]
    fn n_passages(&self) -> usize {
        self.index.n_passages()
    }

    /// Top-k `(passage_id, score)` pairs for one query matrix.
    #[pyo3(signature = (query, nprobe = 2, ncandidates = None, k = 10))]
    fn search(
        &self,
        query: Vec<Vec<f32>>,
        nprobe: usize,
        ncandidates: Option<usize>,
        k: usize,
    ) -> PyResult<Vec<(u64, f64)>> {
        let q = matrix(query)?;
        let r = lateindex::search(&q, &self.index, &self.ivf, &self.params(nprobe, ncandidates, k)).map_err(to_py)?;
        Ok(hits(&r))
    }

    /// `{query_id: [(passage_id, score), ...]}` for every query in the set.
    #[pyo3(signature = (queries, nprobe = 2, ncandidates = None, k = 10))]
    fn search_batch(
        &self,
        py: Python<'_>,
        queries: &PyEmbeddingSet,
        nprobe: usize,
        ncandidates: Option<usize>,
        k: usize,
    ) -> PyResult<BTreeMap<u64, Vec<(u64, f64)>>> {
        let params = self.params(nprobe, ncandidates, k);
        let r =
            py.detach(|| lateindex::search_batch(&queries.inner, &self.index, &self.ivf, &params)).map_err(to_py)?;
        Ok(r.rankings.iter().map(|q| (q.query_id, hits(&q.hits))).collect())
    }

    /// Exact top-k over the decoded embeddings.
    #[pyo3(signature = (query, k = 10, clamp = false))]
    fn brute_force(&self, query: Vec<Vec<f32>>, k: usize, clamp: bool) -> PyResult<Vec<(u64, f64)>> {
        let q = matrix(query)?;
        Ok(hits(&oracle::brute_force_decoded(&q, &self.index, k, clamp).map_err(to_py)?))
    }

    fn decode_passage(&self, passage_id: u64) -> PyResult<Vec<Vec<f32>>> {
        let pos = self
            .index
            .passage_ids
            .binary_search(&passage_id)
            .map_err(|_| PyValueError::new_err(format!("unknown passage id {passage_id}")))?;
        Ok(rows(&self.index.decode_passage(pos).map_err(to_py)?))
    }

    /// Byte accounting: components, totals, bytes per vector and ratios.
    fn stats(&self) -> BTreeMap<String, f64> {
        let s = index_stats(&self.index, &self.ivf);
        let mut m: BTreeMap<String, f64> =
            s.components.iter().map(|(name, bytes)| (format!("bytes.{name}"), *bytes as f64)).collect();
        m.insert("total_bytes".into(), s.total_bytes as f64);
        m.insert("core_bytes_per_vector".into(), s.core_bytes_per_vector as f64);
        m.insert("amortized_bytes_per_vector".into(), s.amortized_bytes_per_vector);
        m.insert("baseline_bytes_per_vector".into(), s.baseline_bytes_per_vector as f64);
        m.insert("core_ratio".into(), s.core_ratio);
        m.insert("amortized_ratio".into(), s.amortized_ratio);
        m
    }

    fn __repr__(&self) -> String {
        format!(
            "Index(passages={}, centroids={}, dim={}, bits={})",
            self.index.n_passages(),
            self.index.codec.n_centroids(),
            self.index.dim(),
            self.index.codec.bits()
        )
    }
}

/// Late-interaction score `Σ_i max_j q_i·d_j`.
#[pyfunction]
fn maxsim(query: Vec<Vec<f32>>, doc: Vec<Vec<f32>>) -> PyResult<f64> {
    lateindex::searcher::maxsim(&matrix(query)?, &matrix(doc)?).map_err(to_py)
}

#[pyfunction]
fn select_num_centroids(n_embeddings: u64) -> u64 {
    lateindex::codec::select_num_centroids(n_embeddings)
}

/// Exact top-k over uncompressed embeddings.
#[pyfunction]
#[pyo3(signature = (query, corpus, k = 10))]
fn brute_force_search(query: Vec<Vec<f32>>, corpus: &PyEmbeddingSet, k: usize) -> PyResult<Vec<(u64, f64)>> {
    Ok(hits(&oracle::brute_force_search(&matrix(query)?, &corpus.inner, k).map_err(to_py)?))
}

/// Scores `results` (`{query_id: [(passage_id, score), ...]}`, ranked) with a
/// metric such as `"mrr@10"`. Returns `(mean, per_query, skipped)`.
#[pyfunction]
fn evaluate(
    results: BTreeMap<u64, Vec<(u64, f64)>>,
    qrels: BTreeMap<u64, Vec<u64>>,
    metric: &str,
) -> PyResult<MetricSummary> {
    let metric = metric.parse().map_err(to_py)?;
    let results = RankedResults {
        rankings: results
            .into_iter()
            .map(|(query_id, h)| QueryRanking {
                query_id,
                hits: h.into_iter().map(|(passage_id, score)| ScoredPassage { passage_id, score }).collect(),
            })
            .collect(),
    };
    let qrels: Qrels = qrels.into_iter().flat_map(|(q, ps)| ps.into_iter().map(move |p| (q, p))).collect();
    let r = lateindex::eval::evaluate(&results, &qrels, metric).map_err(to_py)?;
    Ok((r.mean, r.per_query, r.skipped))
}

/// Generates `(corpus, queries, qrels, token_ids)`.
#[pyfunction]
#[pyo3(signature = (
    profile = "clustered", n_passages = 1000, tokens_per_passage = 32, dim = 32, n_clusters = 64,
    noise = 0.1, spread = 0.5, n_queries = 100, query_tokens = 8, seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn synth(
    profile: &str,
    n_passages: usize,
    tokens_per_passage: usize,
    dim: usize,
    n_clusters: usize,
    noise: f64,
    spread: f64,
    n_queries: usize,
    query_tokens: usize,
    seed: u64,
) -> PyResult<SynthOutput> {
    let profile: Profile = profile.parse().map_err(to_py)?;
    let cfg = SynthConfig {
        profile,
        n_passages,
        tokens_per_passage,
        dim,
        n_clusters,
        noise,
        spread,
        n_queries,
        query_tokens,
        seed,
    };
    let data = lateindex::synth::synth(&cfg).map_err(to_py)?;
    let qrels = qrels_to_py(&data.qrels);
    Ok((PyEmbeddingSet { inner: data.corpus }, PyEmbeddingSet { inner: data.queries }, qrels, data.tokens.token_ids))
}

#[pyfunction]
fn read_qrels(path: &str) -> PyResult<BTreeMap<u64, Vec<u64>>> {
    Ok(qrels_to_py(&lateindex::io::read_qrels(path).map_err(to_py)?))
}

#[pymodule]
fn lateindex_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEmbeddingSet>()?;
    m.add_class::<PyIndex>()?;
    m.add_function(wrap_pyfunction!(maxsim, m)?)?;
    m.add_function(wrap_pyfunction!(select_num_centroids, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_search, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(read_qrels, m)?)?;
    Ok(())
}
