//! Index construction (centroid selection, chunked passage encoding,
//! inversion) and the on-disk index directory.
//!
//! Directory layout, all little-endian:
//!
//! | file            | contents                                        |
//! |-----------------|-------------------------------------------------|
//! | `meta.json`     | dim, bits, counts, format version, seed         |
//! | `codec.bin`     | see [`Codec::to_bytes`]                         |
//! | `doclens.bin`   | `u64 n`, then `u32[n]`                          |
//! | `pids.bin`      | `u64[n]`                                        |
//! | `codes.bin`     | `u32` per embedding                             |
//! | `residuals.bin` | packed residual bytes per embedding             |
//! | `ivf.bin`       | `u64[|C|+1]` list offsets, then `u32` postings  |

use std::fmt;
use std::fs;
use std::path::Path;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{prev_power_of_two, select_num_centroids, Codec};
use crate::error::{Error, Result};
use crate::io::EmbeddingSet;
use crate::matrix::Matrix;

pub const FORMAT_VERSION: u32 = 1;

/// Training vectors required per centroid. The centroid count is capped so
/// the k-means sample keeps at least this many points per cluster; with
/// fewer, in-sample residuals shrink toward zero and the residual buckets
/// are fit to noise.
pub const MIN_POINTS_PER_CENTROID: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildConfig {
    pub bits: u32,
    pub seed: u64,
    /// Passages encoded per work unit.
    pub chunk_size: usize,
    /// Training sample size is `⌈sample_mult · √n_passages⌉` passages.
    pub sample_mult: f64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self { bits: 2, seed: 0, chunk_size: 1024, sample_mult: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexMeta {
    pub format_version: u32,
    pub dim: usize,
    pub bits: u32,
    pub n_centroids: u64,
    pub n_passages: u64,
    pub n_embeddings: u64,
    pub seed: u64,
    pub sample_mult: f64,
    pub n_sample_passages: u64,
}

/// Compressed corpus: one centroid code and one packed residual per
/// embedding, laid out passage after passage.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedIndex {
    pub codec: Codec,
    pub meta: IndexMeta,
    pub passage_ids: Vec<u64>,
    pub doclens: Vec<u32>,
    /// Prefix sums of `doclens`; passage `p` owns embedding ids
    /// `offsets[p]..offsets[p + 1]`.
    pub offsets: Vec<u64>,
    pub codes: Vec<u32>,
    pub residuals: Vec<u8>,
}

/// Centroid → ascending embedding ids, in CSR layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvertedLists {
    pub list_offsets: Vec<u64>,
    pub postings: Vec<u32>,
}

impl InvertedLists {
    /// Counting sort of embedding ids by centroid code.
    pub fn build(codes: &[u32], n_centroids: usize) -> Self {
        let mut list_offsets = vec![0u64; n_centroids + 1];
        for &c in codes {
            list_offsets[c as usize + 1] += 1;
        }
        for i in 0..n_centroids {
            list_offsets[i + 1] += list_offsets[i];
        }
        let mut cursor: Vec<u64> = list_offsets[..n_centroids].to_vec();
        let mut postings = vec![0u32; codes.len()];
        for (e, &c) in codes.iter().enumerate() {
            postings[cursor[c as usize] as usize] = e as u32;
            cursor[c as usize] += 1;
        }
        Self { list_offsets, postings }
    }

    pub fn n_lists(&self) -> usize {
        self.list_offsets.len() - 1
    }

    pub fn list(&self, centroid: usize) -> &[u32] {
        &self.postings[self.list_offsets[centroid] as usize..self.list_offsets[centroid + 1] as usize]
    }
}

impl CompressedIndex {
    pub fn dim(&self) -> usize {
        self.codec.dim()
    }

    pub fn n_passages(&self) -> usize {
        self.passage_ids.len()
    }

    pub fn n_embeddings(&self) -> usize {
        self.codes.len()
    }

    /// Passage position (not id) that owns embedding `e`.
    pub fn passage_of(&self, e: usize) -> usize {
        self.offsets.partition_point(|&o| o <= e as u64) - 1
    }

    pub fn embedding_range(&self, p: usize) -> std::ops::Range<usize> {
        self.offsets[p] as usize..self.offsets[p + 1] as usize
    }

    pub fn decode_embedding(&self, e: usize, out: &mut [f32]) -> Result<()> {
        let rb = self.codec.residual_bytes();
        self.codec.decode_into(self.codes[e], &self.residuals[e * rb..(e + 1) * rb], out)
    }

    /// Decompresses every embedding of passage position `p`.
    pub fn decode_passage(&self, p: usize) -> Result<Matrix> {
        let range = self.embedding_range(p);
        let mut m = Matrix::zeros(range.len(), self.dim());
        for (row, e) in range.enumerate() {
            self.decode_embedding(e, m.row_mut(row))?;
        }
        Ok(m)
    }

    /// Decompresses the whole corpus back into an embedding set.
    pub fn decode_all(&self) -> Result<Vec<(u64, Matrix)>> {
        (0..self.n_passages()).map(|p| Ok((self.passage_ids[p], self.decode_passage(p)?))).collect()
    }
}

pub fn build_index(embeddings: &EmbeddingSet, config: &BuildConfig) -> Result<(CompressedIndex, InvertedLists)> {
    if embeddings.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if config.chunk_size == 0 {
        return Err(Error::InvalidParams("chunk_size must be positive".into()));
    }
    if !(config.sample_mult > 0.0 && config.sample_mult.is_finite()) {
        return Err(Error::InvalidParams("sample_mult must be positive".into()));
    }
    let passages = embeddings.passages();
    let n_passages = passages.len();
    let n_embeddings = embeddings.n_vectors();
    if n_embeddings > u32::MAX as usize {
        return Err(Error::InvalidParams("corpus exceeds 2^32 embeddings".into()));
    }

    let n_sample = ((config.sample_mult * (n_passages as f64).sqrt()).ceil() as usize).clamp(1, n_passages);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut picked = rand::seq::index::sample(&mut rng, n_passages, n_sample).into_vec();
    picked.sort_unstable();
    let mut sample = Matrix::zeros(0, embeddings.dim());
    for &p in &picked {
        for row in passages[p].vectors.iter_rows() {
            sample.push_row(row);
        }
    }

    let k = select_num_centroids(n_embeddings as u64)
        .min(prev_power_of_two((sample.rows() / MIN_POINTS_PER_CENTROID).max(1) as u64));
    info!("training codec: {n_sample} sample passages, {} vectors, {k} centroids, {} bits", sample.rows(), config.bits);
    let codec = Codec::train(&sample, k as usize, config.bits, config.seed)?;

    let encoded: Vec<(Vec<u32>, Vec<u8>)> = passages
        .par_chunks(config.chunk_size)
        .map(|chunk| {
            let n: usize = chunk.iter().map(|p| p.vectors.rows()).sum();
            let mut codes = Vec::with_capacity(n);
            let mut residuals = Vec::with_capacity(n * codec.residual_bytes());
            for p in chunk {
                for v in p.vectors.iter_rows() {
                    codes.push(codec.encode_into(v, &mut residuals)?);
                }
            }
            Ok((codes, residuals))
        })
        .collect::<Result<_>>()?;
    let mut codes = Vec::with_capacity(n_embeddings);
    let mut residuals = Vec::with_capacity(n_embeddings * codec.residual_bytes());
    for (c, r) in encoded {
        codes.extend(c);
        residuals.extend(r);
    }

    let doclens: Vec<u32> = passages.iter().map(|p| p.vectors.rows() as u32).collect();
    let offsets = prefix_sums(&doclens);
    let ivf = InvertedLists::build(&codes, codec.n_centroids());
    let meta = IndexMeta {
        format_version: FORMAT_VERSION,
        dim: embeddings.dim(),
        bits: config.bits,
        n_centroids: codec.n_centroids() as u64,
        n_passages: n_passages as u64,
        n_embeddings: n_embeddings as u64,
        seed: config.seed,
        sample_mult: config.sample_mult,
        n_sample_passages: n_sample as u64,
    };
    let index =
        CompressedIndex { codec, meta, passage_ids: embeddings.ids().collect(), doclens, offsets, codes, residuals };
    Ok((index, ivf))
}

fn prefix_sums(doclens: &[u32]) -> Vec<u64> {
    let mut offsets = Vec::with_capacity(doclens.len() + 1);
    offsets.push(0u64);
    for &l in doclens {
        offsets.push(offsets.last().unwrap() + l as u64);
    }
    offsets
}

fn le_u32s(xs: &[u32]) -> Vec<u8> {
    xs.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn le_u64s(xs: &[u64]) -> Vec<u8> {
    xs.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn meta_json(meta: &IndexMeta) -> String {
    serde_json::to_string_pretty(meta).expect("meta serializes") + "\n"
}

/// Every index file name with its serialized contents, in a fixed order.
fn index_files(index: &CompressedIndex, ivf: &InvertedLists) -> Vec<(&'static str, Vec<u8>)> {
    let mut doclens = (index.doclens.len() as u64).to_le_bytes().to_vec();
    doclens.extend(le_u32s(&index.doclens));
    let mut ivf_bytes = le_u64s(&ivf.list_offsets);
    ivf_bytes.extend(le_u32s(&ivf.postings));
    vec![
        ("meta.json", meta_json(&index.meta).into_bytes()),
        ("codec.bin", index.codec.to_bytes()),
        ("doclens.bin", doclens),
        ("pids.bin", le_u64s(&index.passage_ids)),
        ("codes.bin", le_u32s(&index.codes)),
        ("residuals.bin", index.residuals.clone()),
        ("ivf.bin", ivf_bytes),
    ]
}

pub fn save_index(index: &CompressedIndex, ivf: &InvertedLists, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, bytes) in index_files(index, ivf) {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn read_index_file(dir: &Path, name: &str) -> Result<Vec<u8>> {
    fs::read(dir.join(name)).map_err(|e| Error::index(name, format!("cannot read: {e}")))
}

fn parse_u32s(bytes: &[u8]) -> Vec<u32> {
    bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect()
}

fn parse_u64s(bytes: &[u8]) -> Vec<u64> {
    bytes.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect()
}

fn expect_len(file: &str, what: &str, got: usize, expected: usize) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(Error::index(file, format!("{what}: length {got} bytes, expected {expected}")))
    }
}

/// Loads and fully validates an index directory.
pub fn load_index(dir: impl AsRef<Path>) -> Result<(CompressedIndex, InvertedLists)> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::index(".", format!("{} is not a directory", dir.display())));
    }
    let meta: IndexMeta = serde_json::from_slice(&read_index_file(dir, "meta.json")?)
        .map_err(|e| Error::index("meta.json", e.to_string()))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::index("meta.json", format!("unsupported version {}", meta.format_version)));
    }
    let codec = Codec::from_bytes(&read_index_file(dir, "codec.bin")?)?;
    if codec.dim() != meta.dim || codec.bits() != meta.bits || codec.n_centroids() as u64 != meta.n_centroids {
        return Err(Error::index("codec.bin", "dim/bits/centroid count disagree with meta.json"));
    }
    let n = meta.n_passages as usize;
    let n_emb = meta.n_embeddings as usize;
    let k = codec.n_centroids();

    let doclens_bytes = read_index_file(dir, "doclens.bin")?;
    if doclens_bytes.len() < 8 || u64::from_le_bytes(doclens_bytes[..8].try_into().unwrap()) != meta.n_passages {
        return Err(Error::index("doclens.bin", "passage count disagrees with meta.json"));
    }
    expect_len("doclens.bin", "doclens", doclens_bytes.len(), 8 + 4 * n)?;
    let doclens = parse_u32s(&doclens_bytes[8..]);
    if doclens.contains(&0) {
        return Err(Error::index("doclens.bin", "zero-length passage"));
    }
    let offsets = prefix_sums(&doclens);
    if offsets[n] != meta.n_embeddings {
        return Err(Error::index("doclens.bin", "doclens do not sum to n_embeddings"));
    }

    let pids_bytes = read_index_file(dir, "pids.bin")?;
    expect_len("pids.bin", "passage ids", pids_bytes.len(), 8 * n)?;
    let passage_ids = parse_u64s(&pids_bytes);
    if passage_ids.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::index("pids.bin", "passage ids not strictly increasing"));
    }

    let codes_bytes = read_index_file(dir, "codes.bin")?;
    expect_len("codes.bin", "codes", codes_bytes.len(), 4 * n_emb)?;
    let codes = parse_u32s(&codes_bytes);
    if let Some(c) = codes.iter().find(|&&c| c as usize >= k) {
        return Err(Error::index("codes.bin", format!("code {c} >= {k} centroids")));
    }

    let residuals = read_index_file(dir, "residuals.bin")?;
    expect_len("residuals.bin", "residuals", residuals.len(), n_emb * codec.residual_bytes())?;

    let ivf_bytes = read_index_file(dir, "ivf.bin")?;
    expect_len("ivf.bin", "inverted lists", ivf_bytes.len(), 8 * (k + 1) + 4 * n_emb)?;
    let list_offsets = parse_u64s(&ivf_bytes[..8 * (k + 1)]);
    let postings = parse_u32s(&ivf_bytes[8 * (k + 1)..]);
    if list_offsets[0] != 0 || list_offsets[k] != n_emb as u64 || list_offsets.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::index("ivf.bin", "list offsets are not a monotone partition"));
    }
    let ivf = InvertedLists { list_offsets, postings };
    for c in 0..k {
        let list = ivf.list(c);
        if list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::index("ivf.bin", format!("list {c} not strictly ascending")));
        }
        if let Some(e) = list.iter().find(|&&e| e as usize >= n_emb || codes[e as usize] as usize != c) {
            return Err(Error::index("ivf.bin", format!("posting {e} in list {c} disagrees with codes")));
        }
    }

    let index = CompressedIndex { codec, meta, passage_ids, doclens, offsets, codes, residuals };
    Ok((index, ivf))
}

/// Exact byte accounting for an index.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexStats {
    pub dim: usize,
    pub bits: u32,
    pub n_centroids: usize,
    pub n_passages: usize,
    pub n_embeddings: usize,
    pub components: Vec<(&'static str, u64)>,
    pub total_bytes: u64,
    /// `4 + ⌈bits·dim/8⌉`: centroid id plus packed residual.
    pub core_bytes_per_vector: u64,
    pub amortized_bytes_per_vector: f64,
    /// Uncompressed 16-bit baseline, `2·dim`.
    pub baseline_bytes_per_vector: u64,
    pub core_ratio: f64,
    pub amortized_ratio: f64,
}

pub fn core_bytes_per_vector(dim: usize, bits: u32) -> u64 {
    4 + crate::codec::residual_bytes(dim, bits) as u64
}

pub fn index_stats(index: &CompressedIndex, ivf: &InvertedLists) -> IndexStats {
    let dim = index.dim();
    let bits = index.codec.bits();
    let k = index.codec.n_centroids() as u64;
    let n = index.n_passages() as u64;
    let e = index.n_embeddings() as u64;
    let n_buckets = 1u64 << bits;
    let components = vec![
        ("meta.json", meta_json(&index.meta).len() as u64),
        ("codec.bin", 24 + 4 * (k * dim as u64 + 2 * n_buckets - 1)),
        ("doclens.bin", 8 + 4 * n),
        ("pids.bin", 8 * n),
        ("codes.bin", 4 * e),
        ("residuals.bin", e * index.codec.residual_bytes() as u64),
        ("ivf.bin", 8 * (ivf.n_lists() as u64 + 1) + 4 * ivf.postings.len() as u64),
    ];
    let total_bytes = components.iter().map(|c| c.1).sum();
    let core = core_bytes_per_vector(dim, bits);
    let baseline = 2 * dim as u64;
    let amortized = total_bytes as f64 / e.max(1) as f64;
    IndexStats {
        dim,
        bits,
        n_centroids: k as usize,
        n_passages: n as usize,
        n_embeddings: e as usize,
        components,
        total_bytes,
        core_bytes_per_vector: core,
        amortized_bytes_per_vector: amortized,
        baseline_bytes_per_vector: baseline,
        core_ratio: baseline as f64 / core as f64,
        amortized_ratio: baseline as f64 / amortized,
    }
}

impl fmt::Display for IndexStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "dim={} bits={} centroids={} passages={} embeddings={}",
            self.dim, self.bits, self.n_centroids, self.n_passages, self.n_embeddings
        )?;
        for (name, bytes) in &self.components {
            writeln!(f, "  {name:<14} {bytes:>14} bytes")?;
        }
        writeln!(f, "  {:<14} {:>14} bytes", "total", self.total_bytes)?;
        writeln!(
            f,
            "bytes/vector: core {} (amortized {:.2}), fp16 baseline {}",
            self.core_bytes_per_vector, self.amortized_bytes_per_vector, self.baseline_bytes_per_vector
        )?;
        write!(f, "compression: core {:.2}x, amortized {:.2}x", self.core_ratio, self.amortized_ratio)
    }
}
