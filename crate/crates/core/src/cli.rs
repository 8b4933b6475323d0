//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 invalid arguments or input, 2 filesystem errors.
//! Failures print one JSON object on stderr.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use crate::analysis::{
    cluster_exemplars, cluster_token_stats, ecdf, format_ecdf, random_baseline, read_tokens, read_vocab,
    ClusterTokenStats,
};
use crate::error::{Error, Result};
use crate::eval::{
    bench_latency, bench_summary, evaluate, latency_monotonicity_warnings, sweep_grid, write_bench_tsv, Metric,
};
use crate::indexer::{build_index, index_stats, load_index, save_index, BuildConfig};
use crate::io::{read_embeddings, read_qrels, read_results, write_results};
use crate::oracle::{brute_force_batch, brute_force_decoded_batch};
use crate::searcher::{search_batch, SearchParams};
use crate::synth::{synth, write_synth, Profile, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "lateindex", version, about = "Residual-compressed late-interaction retrieval")]
pub struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a compressed index from an embedding file.
    Index(IndexArgs),
    /// Two-stage search of a query file against an index.
    Search(SearchArgs),
    /// Exhaustive MaxSim over raw embeddings or a decompressed index.
    Oracle(OracleArgs),
    /// Score a results file against qrels.
    Eval(EvalArgs),
    /// Latency sweep over nprobe and candidate budgets.
    Bench(BenchArgs),
    /// Cluster token-composition statistics with a random baseline.
    Analyze(AnalyzeArgs),
    /// Generate a synthetic corpus, queries, qrels and token annotations.
    Synth(SynthArgs),
    /// Print byte accounting for an index.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..=2))]
    pub bits: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1024)]
    pub chunk_size: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sample_mult: f64,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub nprobe: usize,
    /// Defaults to nprobe · 4096.
    #[arg(long)]
    pub ncandidates: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, conflicts_with = "index", required_unless_present = "index")]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Floor each per-token maximum at zero (decoded variant only).
    #[arg(long, requires = "index")]
    pub clamp: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    /// mrr@K, success@K or recall@K; repeatable.
    #[arg(long, required = true)]
    pub metric: Vec<Metric>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    pub probes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "4096,16384")]
    pub cand_mults: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Also time a parallel batch pass and report throughput.
    #[arg(long)]
    pub parallel: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub tokens: PathBuf,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Tokens listed per cluster in the exemplar report.
    #[arg(long, default_value_t = 5)]
    pub top: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "clustered")]
    pub profile: Profile,
    #[arg(long, default_value_t = 1000)]
    pub n_passages: usize,
    #[arg(long, default_value_t = 32)]
    pub tokens_per_passage: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 64)]
    pub n_clusters: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.5)]
    pub spread: f64,
    #[arg(long, default_value_t = 100)]
    pub n_queries: usize,
    #[arg(long, default_value_t = 8)]
    pub query_tokens: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub index: PathBuf,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new().parse_filters(&cli.log_level).format_target(false).try_init();
    info!("config: {cli:?}");

    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => return report(&Error::InvalidParams(e.to_string())),
    };
    match pool.install(|| run(&cli.command)) {
        Ok(()) => 0,
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> i32 {
    let (kind, code) = if e.is_io() { ("io", 2) } else { ("validation", 1) };
    eprintln!("{}", serde_json::json!({ "error": kind, "message": e.to_string() }));
    code
}

fn write_text(path: &PathBuf, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::Index(a) => {
            let set = read_embeddings(&a.embeddings)?;
            let cfg = BuildConfig { bits: a.bits, seed: a.seed, chunk_size: a.chunk_size, sample_mult: a.sample_mult };
            let (index, ivf) = build_index(&set, &cfg)?;
            save_index(&index, &ivf, &a.out)?;
            println!("{}", index_stats(&index, &ivf));
        }
        Command::Search(a) => {
            let (index, ivf) = load_index(&a.index)?;
            let queries = read_embeddings(&a.queries)?;
            let params = SearchParams::new(a.nprobe, a.ncandidates.unwrap_or(a.nprobe << 12), a.k);
            let results = search_batch(&queries, &index, &ivf, &params)?;
            write_results(&results, &a.out)?;
        }
        Command::Oracle(a) => {
            let queries = read_embeddings(&a.queries)?;
            let results = match (&a.embeddings, &a.index) {
                (Some(path), _) => brute_force_batch(&queries, &read_embeddings(path)?, a.k)?,
                (None, Some(dir)) => {
                    let (index, _) = load_index(dir)?;
                    brute_force_decoded_batch(&queries, &index, a.k, a.clamp)?
                }
                (None, None) => return Err(Error::InvalidParams("--embeddings or --index required".into())),
            };
            write_results(&results, &a.out)?;
        }
        Command::Eval(a) => {
            let results = read_results(&a.results)?;
            let qrels = read_qrels(&a.qrels)?;
            for m in &a.metric {
                println!("{}", evaluate(&results, &qrels, *m)?);
            }
        }
        Command::Bench(a) => {
            let (index, ivf) = load_index(&a.index)?;
            let queries = read_embeddings(&a.queries)?;
            let qrels = a.qrels.as_ref().map(read_qrels).transpose()?;
            let sweep = sweep_grid(&a.probes, &a.cand_mults, a.k);
            let rows = bench_latency(&index, &ivf, &queries, &sweep, a.reps, qrels.as_ref(), a.parallel)?;
            for w in latency_monotonicity_warnings(&rows) {
                warn!("{w}");
            }
            write_bench_tsv(&rows, &a.out)?;
            print!("{}", bench_summary(&rows));
        }
        Command::Analyze(a) => analyze(a)?,
        Command::Synth(a) => {
            let cfg = SynthConfig {
                profile: a.profile,
                n_passages: a.n_passages,
                tokens_per_passage: a.tokens_per_passage,
                dim: a.dim,
                n_clusters: a.n_clusters,
                noise: a.noise,
                spread: a.spread,
                n_queries: a.n_queries,
                query_tokens: a.query_tokens,
                seed: a.seed,
            };
            let paths = write_synth(&synth(&cfg)?, &a.out)?;
            println!(
                "{}\n{}\n{}\n{}",
                paths.corpus.display(),
                paths.queries.display(),
                paths.qrels.display(),
                paths.tokens.display()
            );
        }
        Command::Stats(a) => {
            let (index, ivf) = load_index(&a.index)?;
            println!("{}", index_stats(&index, &ivf));
        }
    }
    Ok(())
}

fn stats_tsv(stats: &ClusterTokenStats) -> Result<(String, String)> {
    Ok((
        format_ecdf(&ecdf(&stats.tokens_per_cluster_values())?),
        format_ecdf(&ecdf(&stats.clusters_per_token_values())?),
    ))
}

fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let (index, _) = load_index(&a.index)?;
    let mut annot = read_tokens(&a.tokens, index.n_embeddings())?;
    if let Some(v) = &a.vocab {
        annot.vocab = Some(read_vocab(v)?);
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;

    let structured = cluster_token_stats(&index.codes, &annot)?;
    let baseline = random_baseline(&annot, index.dim(), index.codec.n_centroids(), a.seed)?;
    for (prefix, stats) in [("index", &structured), ("random", &baseline)] {
        let (tpc, cpt) = stats_tsv(stats)?;
        write_text(&a.out.join(format!("{prefix}_tokens_per_cluster.tsv")), &tpc)?;
        write_text(&a.out.join(format!("{prefix}_clusters_per_token.tsv")), &cpt)?;
    }

    let mut report = String::from("cluster\ttop_tokens\n");
    for (c, toks) in cluster_exemplars(&index.codes, &annot, a.top)? {
        let list: Vec<String> = toks.iter().map(|(t, n)| format!("{}:{n}", annot.label(*t))).collect();
        report.push_str(&format!("{c}\t{}\n", list.join(" ")));
    }
    write_text(&a.out.join("exemplars.tsv"), &report)?;
    println!(
        "clusters={} tokens={} stopwords={}",
        structured.tokens_per_cluster.len(),
        structured.clusters_per_token.len() + structured.stopwords.len(),
        structured.stopwords.len()
    );
    Ok(())
}
