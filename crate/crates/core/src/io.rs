//! Interchange formats: token-embedding files, qrels and ranked results.
//!
//! Embedding file layout (all integers little-endian):
//!
//! ```text
//! "LIEMB1\0\0" | u32 version=1 | u32 dim | u8 precision (0=fp32, 1=fp16) | 3 pad bytes
//! u64 n_passages
//! per passage: u64 passage_id | u32 length M | M×dim floats, row-major
//! ```
//!
//! Query files use the same layout with the query id in the passage id slot.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use half::f16;
use log::warn;

use crate::error::{Error, Result};
use crate::matrix::{norm, Matrix};
use crate::searcher::{QueryRanking, RankedResults, ScoredPassage};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"LIEMB1\0\0";
pub const EMBEDDING_VERSION: u32 = 1;
pub const EMBEDDING_HEADER_LEN: usize = 8 + 4 + 4 + 1 + 3 + 8;

/// Norm deviation accepted silently.
pub const NORM_TOLERANCE: f64 = 1e-3;
/// Norm deviation beyond which a vector is rejected; between the two it is
/// renormalized with a warning.
pub const NORM_REJECT: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    Fp32,
    Fp16,
}

impl Precision {
    fn tag(self) -> u8 {
        match self {
            Precision::Fp32 => 0,
            Precision::Fp16 => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Precision::Fp32),
            1 => Some(Precision::Fp16),
            _ => None,
        }
    }

    pub fn bytes_per_value(self) -> usize {
        match self {
            Precision::Fp32 => 4,
            Precision::Fp16 => 2,
        }
    }
}

/// One passage (or query): an id and its `M × dim` token matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Passage {
    pub id: u64,
    pub vectors: Matrix,
}

/// Variable-length sets of unit-norm token embeddings keyed by strictly
/// increasing ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    precision: Precision,
    passages: Vec<Passage>,
}

impl EmbeddingSet {
    /// Validates every invariant. Rows within the renormalization band are
    /// rescaled to unit norm; anything further off is rejected.
    pub fn new(dim: usize, precision: Precision, mut passages: Vec<Passage>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::MalformedInput("dim must be positive".into()));
        }
        let mut prev: Option<u64> = None;
        for p in &mut passages {
            if p.vectors.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: p.vectors.dim() });
            }
            if p.vectors.rows() == 0 {
                return Err(Error::MalformedInput(format!("passage {} has no vectors", p.id)));
            }
            if let Some(prev) = prev {
                if p.id <= prev {
                    return Err(Error::MalformedInput(format!(
                        "ids must be strictly increasing: {} follows {prev}",
                        p.id
                    )));
                }
            }
            prev = Some(p.id);
            normalize_rows(p)?;
        }
        Ok(Self { dim, precision, passages })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn n_vectors(&self) -> usize {
        self.passages.iter().map(|p| p.vectors.rows()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.passages.iter().map(|p| p.id)
    }

    pub fn get(&self, id: u64) -> Option<&Passage> {
        self.passages.binary_search_by_key(&id, |p| p.id).ok().map(|i| &self.passages[i])
    }

    pub fn into_passages(self) -> Vec<Passage> {
        self.passages
    }
}

fn normalize_rows(p: &mut Passage) -> Result<()> {
    for row in 0..p.vectors.rows() {
        let n = norm(p.vectors.row(row));
        let dev = (n - 1.0).abs();
        if dev.is_nan() || dev > NORM_REJECT {
            return Err(Error::NonUnitNorm { passage_id: p.id, row, norm: n as f32 });
        }
        if dev > NORM_TOLERANCE {
            warn!("passage {} row {row}: norm {n:.6} renormalized", p.id);
            for x in p.vectors.row_mut(row) {
                *x = (*x as f64 / n) as f32;
            }
        }
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::TruncatedFile(format!(
                "{what}: need {n} bytes at offset {}, {} remain",
                self.pos,
                self.buf.len() - self.pos
            ))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses an embedding file already held in memory.
pub fn parse_embeddings(bytes: &[u8]) -> Result<EmbeddingSet> {
    if bytes.len() < EMBEDDING_HEADER_LEN {
        return Err(Error::MalformedHeader(format!(
            "file is {} bytes, header needs {EMBEDDING_HEADER_LEN}",
            bytes.len()
        )));
    }
    if &bytes[..8] != EMBEDDING_MAGIC {
        return Err(Error::MalformedHeader("bad magic".into()));
    }
    let mut r = Reader { buf: bytes, pos: 8 };
    let version = r.u32("version")?;
    if version != EMBEDDING_VERSION {
        return Err(Error::MalformedHeader(format!("unsupported version {version}")));
    }
    let dim = r.u32("dim")? as usize;
    if dim == 0 {
        return Err(Error::MalformedHeader("dim is 0".into()));
    }
    let tag = r.take(4, "precision")?;
    let precision = Precision::from_tag(tag[0])
        .ok_or_else(|| Error::MalformedHeader(format!("unknown precision tag {}", tag[0])))?;
    if tag[1..] != [0, 0, 0] {
        return Err(Error::MalformedHeader("non-zero padding".into()));
    }
    let n = r.u64("n_passages")?;
    if n == 0 {
        return Err(Error::MalformedInput("zero passages".into()));
    }

    let width = precision.bytes_per_value();
    let mut passages = Vec::with_capacity(n.min(1 << 20) as usize);
    for i in 0..n {
        let id = r.u64("passage id")?;
        let m = r.u32("passage length")? as usize;
        if m == 0 {
            return Err(Error::MalformedInput(format!("passage {id} has length 0")));
        }
        let payload = r.take(
            m.checked_mul(dim)
                .and_then(|v| v.checked_mul(width))
                .ok_or_else(|| Error::TruncatedFile(format!("passage {i}: length overflows")))?,
            "passage payload",
        )?;
        let data: Vec<f32> = match precision {
            Precision::Fp32 => payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
            Precision::Fp16 => {
                payload.chunks_exact(2).map(|c| f16::from_le_bytes(c.try_into().unwrap()).to_f32()).collect()
            }
        };
        passages.push(Passage { id, vectors: Matrix::new(dim, data)? });
    }
    if r.pos != bytes.len() {
        return Err(Error::MalformedInput(format!("{} trailing bytes after last passage", bytes.len() - r.pos)));
    }
    EmbeddingSet::new(dim, precision, passages)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&bytes)
}

/// Serializes in the set's own precision.
pub fn encode_embeddings(set: &EmbeddingSet) -> Result<Vec<u8>> {
    if set.is_empty() {
        return Err(Error::MalformedInput("zero passages".into()));
    }
    let width = set.precision.bytes_per_value();
    let mut out = Vec::with_capacity(EMBEDDING_HEADER_LEN + set.len() * 12 + set.n_vectors() * set.dim * width);
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    out.extend_from_slice(&(set.dim as u32).to_le_bytes());
    out.extend_from_slice(&[set.precision.tag(), 0, 0, 0]);
    out.extend_from_slice(&(set.len() as u64).to_le_bytes());
    for p in &set.passages {
        out.extend_from_slice(&p.id.to_le_bytes());
        out.extend_from_slice(&(p.vectors.rows() as u32).to_le_bytes());
        match set.precision {
            Precision::Fp32 => {
                for x in p.vectors.as_slice() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            Precision::Fp16 => {
                for x in p.vectors.as_slice() {
                    out.extend_from_slice(&f16::from_f32(*x).to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

pub fn write_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_embeddings(set)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Query id → set of relevant passage ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    entries: BTreeMap<u64, BTreeSet<u64>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: u64, passage_id: u64) {
        self.entries.entry(query_id).or_default().insert(passage_id);
    }

    pub fn relevant(&self, query_id: u64) -> Option<&BTreeSet<u64>> {
        self.entries.get(&query_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &BTreeSet<u64>)> {
        self.entries.iter().map(|(q, s)| (*q, s))
    }
}

impl FromIterator<(u64, u64)> for Qrels {
    fn from_iter<I: IntoIterator<Item = (u64, u64)>>(iter: I) -> Self {
        let mut q = Qrels::new();
        for (a, b) in iter {
            q.insert(a, b);
        }
        q
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

fn parse_field<T: std::str::FromStr>(s: &str, what: &str, path: &Path, line: usize) -> Result<T> {
    s.trim().parse().map_err(|_| Error::MalformedLine {
        path: path.to_path_buf(),
        line,
        reason: format!("invalid {what} {s:?}"),
    })
}

pub fn parse_qrels(text: &str, path: &Path) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (line, l) in data_lines(text) {
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::MalformedLine {
                path: path.to_path_buf(),
                line,
                reason: format!("expected 2 tab-separated fields, got {}", fields.len()),
            });
        }
        let q = parse_field(fields[0], "query id", path, line)?;
        let p = parse_field(fields[1], "passage id", path, line)?;
        qrels.insert(q, p);
    }
    Ok(qrels)
}

pub fn read_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_qrels(&text, path)
}

pub fn write_qrels(qrels: &Qrels, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    for (q, rel) in qrels.iter() {
        for p in rel {
            s.push_str(&format!("{q}\t{p}\n"));
        }
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn format_results(results: &RankedResults) -> String {
    let mut s = String::new();
    for r in &results.rankings {
        for (rank, hit) in r.hits.iter().enumerate() {
            s.push_str(&format!("{}\t{}\t{}\t{:.6}\n", r.query_id, rank + 1, hit.passage_id, hit.score));
        }
    }
    s
}

pub fn write_results(results: &RankedResults, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(format_results(results).as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses a results TSV. Rows of one query must be contiguous with ranks
/// 1, 2, 3, ...
pub fn parse_results(text: &str, path: &Path) -> Result<RankedResults> {
    let mut rankings: Vec<QueryRanking> = Vec::new();
    for (line, l) in data_lines(text) {
        let bad = |reason: String| Error::MalformedLine { path: path.to_path_buf(), line, reason };
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 tab-separated fields, got {}", fields.len())));
        }
        let query_id: u64 = parse_field(fields[0], "query id", path, line)?;
        let rank: usize = parse_field(fields[1], "rank", path, line)?;
        let passage_id: u64 = parse_field(fields[2], "passage id", path, line)?;
        let score: f64 = parse_field(fields[3], "score", path, line)?;
        match rankings.last_mut() {
            Some(r) if r.query_id == query_id => {
                if rank != r.hits.len() + 1 {
                    return Err(bad(format!("rank {rank} out of sequence")));
                }
                r.hits.push(ScoredPassage { passage_id, score });
            }
            _ => {
                if rank != 1 {
                    return Err(bad(format!("first rank of query {query_id} is {rank}")));
                }
                if rankings.iter().any(|r| r.query_id == query_id) {
                    return Err(bad(format!("rows of query {query_id} are not contiguous")));
                }
                rankings.push(QueryRanking { query_id, hits: vec![ScoredPassage { passage_id, score }] });
            }
        }
    }
    Ok(RankedResults { rankings })
}

pub fn read_results(path: impl AsRef<Path>) -> Result<RankedResults> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_results(&text, path)
}
