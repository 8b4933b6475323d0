//! Ranking metrics over qrels and the search latency sweep.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use log::warn;

use crate::error::{Error, Result};
use crate::indexer::{CompressedIndex, InvertedLists};
use crate::io::{EmbeddingSet, Qrels};
use crate::searcher::{search, search_batch, QueryRanking, RankedResults, SearchParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Mrr,
    Success,
    Recall,
}

/// A metric at a cutoff, written `mrr@10`, `success@5`, `recall@50`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Metric {
    pub kind: MetricKind,
    pub k: usize,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParams(format!("unknown metric {s:?}; expected mrr@K, success@K or recall@K"));
        let (name, k) = s.split_once('@').ok_or_else(bad)?;
        let kind = match name.to_ascii_lowercase().as_str() {
            "mrr" => MetricKind::Mrr,
            "success" => MetricKind::Success,
            "recall" => MetricKind::Recall,
            _ => return Err(bad()),
        };
        let k: usize = k.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(bad());
        }
        Ok(Metric { kind, k })
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            MetricKind::Mrr => "mrr",
            MetricKind::Success => "success",
            MetricKind::Recall => "recall",
        };
        write!(f, "{name}@{}", self.k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub metric: Metric,
    /// `(query_id, value)` in results order.
    pub per_query: Vec<(u64, f64)>,
    pub mean: f64,
    /// Scored queries absent from the qrels.
    pub skipped: usize,
}

impl MetricReport {
    pub fn n_queries(&self) -> usize {
        self.per_query.len()
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{:.6}\tqueries={}\tskipped={}", self.metric, self.mean, self.n_queries(), self.skipped)
    }
}

fn per_query_value(metric: Metric, ranking: &QueryRanking, relevant: &std::collections::BTreeSet<u64>) -> f64 {
    let top = ranking.hits.iter().take(metric.k);
    match metric.kind {
        MetricKind::Mrr => top
            .enumerate()
            .find(|(_, h)| relevant.contains(&h.passage_id))
            .map_or(0.0, |(rank, _)| 1.0 / (rank + 1) as f64),
        MetricKind::Success => {
            let hit = top.into_iter().any(|h| relevant.contains(&h.passage_id));
            if hit {
                1.0
            } else {
                0.0
            }
        }
        MetricKind::Recall => top.filter(|h| relevant.contains(&h.passage_id)).count() as f64 / relevant.len() as f64,
    }
}

/// Macro-averaged metric over the queries present in both inputs.
pub fn evaluate(results: &RankedResults, qrels: &Qrels, metric: Metric) -> Result<MetricReport> {
    let mut per_query = Vec::with_capacity(results.rankings.len());
    let mut skipped = 0;
    for r in &results.rankings {
        match qrels.relevant(r.query_id) {
            Some(rel) if !rel.is_empty() => per_query.push((r.query_id, per_query_value(metric, r, rel))),
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        warn!("{metric}: {skipped} scored queries have no qrels and were skipped");
    }
    if per_query.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    let mean = per_query.iter().map(|(_, v)| v).sum::<f64>() / per_query.len() as f64;
    Ok(MetricReport { metric, per_query, mean, skipped })
}

pub fn mrr_at_k(results: &RankedResults, qrels: &Qrels, k: usize) -> Result<MetricReport> {
    evaluate(results, qrels, Metric { kind: MetricKind::Mrr, k })
}

pub fn success_at_k(results: &RankedResults, qrels: &Qrels, k: usize) -> Result<MetricReport> {
    evaluate(results, qrels, Metric { kind: MetricKind::Success, k })
}

pub fn recall_at_k(results: &RankedResults, qrels: &Qrels, k: usize) -> Result<MetricReport> {
    evaluate(results, qrels, Metric { kind: MetricKind::Recall, k })
}

/// Every `(probe, probe · mult)` pair, probes outermost.
pub fn sweep_grid(probes: &[usize], cand_mults: &[usize], k: usize) -> Vec<SearchParams> {
    probes.iter().flat_map(|&p| cand_mults.iter().map(move |&m| SearchParams::new(p, p * m, k))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub params: SearchParams,
    pub repetitions: usize,
    pub n_queries: usize,
    /// Per-query wall clock over every (query, repetition), milliseconds.
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub mrr_at_10: Option<f64>,
    pub success_at_5: Option<f64>,
    /// Queries per second of a parallel batch pass, when requested.
    pub throughput_qps: Option<f64>,
}

/// Times single-threaded per-query search for each sweep point, `repetitions`
/// passes each. Index loading is outside the timed region.
pub fn bench_latency(
    index: &CompressedIndex,
    ivf: &InvertedLists,
    queries: &EmbeddingSet,
    sweep: &[SearchParams],
    repetitions: usize,
    qrels: Option<&Qrels>,
    parallel: bool,
) -> Result<Vec<BenchRow>> {
    if repetitions == 0 {
        return Err(Error::InvalidParams("repetitions must be at least 1".into()));
    }
    let mut rows = Vec::with_capacity(sweep.len());
    for params in sweep {
        params.validate(index.codec.n_centroids())?;
        let mut times = Vec::with_capacity(repetitions * queries.len());
        let mut results = RankedResults::default();
        for _ in 0..repetitions {
            results.rankings.clear();
            for q in queries.passages() {
                let start = Instant::now();
                let hits = search(&q.vectors, index, ivf, params)?;
                times.push(start.elapsed().as_secs_f64() * 1e3);
                results.rankings.push(QueryRanking { query_id: q.id, hits });
            }
        }
        let (mrr, success) = match qrels {
            Some(qrels) => (Some(mrr_at_k(&results, qrels, 10)?.mean), Some(success_at_k(&results, qrels, 5)?.mean)),
            None => (None, None),
        };
        let throughput_qps = if parallel {
            let start = Instant::now();
            search_batch(queries, index, ivf, params)?;
            Some(queries.len() as f64 / start.elapsed().as_secs_f64())
        } else {
            None
        };
        let n = times.len().max(1) as f64;
        rows.push(BenchRow {
            params: *params,
            repetitions,
            n_queries: queries.len(),
            mean_ms: times.iter().sum::<f64>() / n,
            min_ms: times.iter().copied().fold(f64::INFINITY, f64::min),
            max_ms: times.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mrr_at_10: mrr,
            success_at_5: success,
            throughput_qps,
        });
    }
    Ok(rows)
}

/// Sweep points where mean latency dropped as candidates grew at a fixed
/// probe. Timing noise makes these advisory.
pub fn latency_monotonicity_warnings(rows: &[BenchRow]) -> Vec<String> {
    let mut out = Vec::new();
    for a in rows {
        for b in rows {
            if a.params.nprobe == b.params.nprobe
                && a.params.ncandidates < b.params.ncandidates
                && b.mean_ms < a.mean_ms
            {
                out.push(format!(
                    "probe {}: {} candidates ran in {:.3} ms, faster than {} candidates at {:.3} ms",
                    a.params.nprobe, b.params.ncandidates, b.mean_ms, a.params.ncandidates, a.mean_ms
                ));
            }
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

pub fn format_bench_tsv(rows: &[BenchRow]) -> String {
    let mut s = String::from(
        "nprobe\tncandidates\tk\treps\tqueries\tmean_ms\tmin_ms\tmax_ms\tmrr@10\tsuccess@5\tthroughput_qps\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}\n",
            r.params.nprobe,
            r.params.ncandidates,
            r.params.k,
            r.repetitions,
            r.n_queries,
            r.mean_ms,
            r.min_ms,
            r.max_ms,
            opt(r.mrr_at_10),
            opt(r.success_at_5),
            r.throughput_qps.map_or_else(|| "NA".to_string(), |v| format!("{v:.1}")),
        ));
    }
    s
}

pub fn bench_summary(rows: &[BenchRow]) -> String {
    let mut s = format!("{} sweep points\n", rows.len());
    for r in rows {
        s.push_str(&format!(
            "probe={:<3} candidates={:<7} mean={:.3}ms min={:.3}ms max={:.3}ms mrr@10={} s@5={}\n",
            r.params.nprobe,
            r.params.ncandidates,
            r.mean_ms,
            r.min_ms,
            r.max_ms,
            opt(r.mrr_at_10),
            opt(r.success_at_5)
        ));
    }
    s
}

pub fn write_bench_tsv(rows: &[BenchRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_bench_tsv(rows)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::searcher::ScoredPassage;

    fn ranking(qid: u64, ids: &[u64]) -> QueryRanking {
        QueryRanking {
            query_id: qid,
            hits: ids
                .iter()
                .enumerate()
                .map(|(i, &p)| ScoredPassage { passage_id: p, score: 100.0 - i as f64 })
                .collect(),
        }
    }

    fn ranks_fixture(first_relevant: usize) -> QueryRanking {
        // passage 1000 is relevant and sits at `first_relevant` (1-based)
        let ids: Vec<u64> = (1..=20).map(|r| if r == first_relevant { 1000 } else { r as u64 }).collect();
        ranking(0, &ids)
    }

    #[test]
    fn mrr_cases() {
        let qrels: Qrels = [(0, 1000)].into_iter().collect();
        let at = |r| mrr_at_k(&RankedResults { rankings: vec![ranks_fixture(r)] }, &qrels, 10).unwrap().mean;
        assert!((at(3) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(at(11), 0.0);
        assert_eq!(at(1), 1.0);
    }

    #[test]
    fn success_cases() {
        let qrels: Qrels = [(0, 1000)].into_iter().collect();
        let at = |r| success_at_k(&RankedResults { rankings: vec![ranks_fixture(r)] }, &qrels, 5).unwrap().mean;
        assert_eq!(at(5), 1.0);
        assert_eq!(at(6), 0.0);
    }

    #[test]
    fn averaging_and_skipping() {
        let qrels: Qrels = [(1, 5), (2, 99)].into_iter().collect();
        let results = RankedResults { rankings: vec![ranking(1, &[5, 6]), ranking(2, &[7, 8]), ranking(3, &[1])] };
        let r = mrr_at_k(&results, &qrels, 10).unwrap();
        assert_eq!(r.mean, 0.5);
        assert_eq!(r.skipped, 1);
        assert_eq!(r.n_queries(), 2);
        let none: Qrels = [(9, 1)].into_iter().collect();
        assert!(matches!(mrr_at_k(&results, &none, 10), Err(Error::EmptyIntersection)));
    }

    #[test]
    fn recall_cases() {
        let qrels: Qrels = [(1, 5), (1, 6)].into_iter().collect();
        let results = RankedResults { rankings: vec![ranking(1, &[5, 7, 8])] };
        assert_eq!(recall_at_k(&results, &qrels, 3).unwrap().mean, 0.5);
        let results = RankedResults { rankings: vec![ranking(1, &[7, 8])] };
        assert_eq!(recall_at_k(&results, &qrels, 3).unwrap().mean, 0.0);
        let single: Qrels = [(1, 8)].into_iter().collect();
        assert_eq!(recall_at_k(&results, &single, 2).unwrap().mean, success_at_k(&results, &single, 2).unwrap().mean);
    }

    #[test]
    fn metric_parsing() {
        let m: Metric = "mrr@10".parse().unwrap();
        assert_eq!(m, Metric { kind: MetricKind::Mrr, k: 10 });
        assert_eq!(m.to_string(), "mrr@10");
        assert!("ndcg@10".parse::<Metric>().is_err());
        assert!("recall@0".parse::<Metric>().is_err());
        assert_eq!("Success@5".parse::<Metric>().unwrap().kind, MetricKind::Success);
    }

    #[test]
    fn grid_shape() {
        let g = sweep_grid(&[1, 2, 4], &[1 << 12, 1 << 14], 10);
        assert_eq!(g.len(), 6);
        assert_eq!(g[1], SearchParams::new(1, 16384, 10));
        assert_eq!(g[4], SearchParams::new(4, 16384, 10));
        assert!(sweep_grid(&[], &[4096], 10).is_empty());
    }
}
