use std::fs;
use std::path::Path;

use lateindex::cli;
use lateindex::io::read_results;

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["lateindex", "--log-level", "warn"];
    argv.extend_from_slice(args);
    cli::main(argv)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["--version"]), 0);
    assert_eq!(run(&["search", "--bogus"]), 1);
    assert_eq!(run(&["index", "--embeddings", "/nonexistent/x.emb", "--out", "/tmp/never"]), 2);
    assert_eq!(run(&["index", "--embeddings", "x", "--out", "y", "--bits", "3"]), 1);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.emb");
    fs::write(&bad, b"not an embedding file at all....").unwrap();
    assert_eq!(run(&["index", "--embeddings", p(&bad), "--out", p(&dir.path().join("i"))]), 1);
}

fn pipeline(root: &Path) -> Vec<u8> {
    let data = root.join("data");
    let idx = root.join("index");
    let res = root.join("results.tsv");
    assert_eq!(
        run(&[
            "synth",
            "--n-passages",
            "120",
            "--tokens-per-passage",
            "12",
            "--dim",
            "16",
            "--n-clusters",
            "8",
            "--n-queries",
            "20",
            "--seed",
            "5",
            "--out",
            p(&data),
        ]),
        0
    );
    assert_eq!(
        run(&[
            "index",
            "--embeddings",
            p(&data.join("corpus.emb")),
            "--out",
            p(&idx),
            "--bits",
            "2",
            "--seed",
            "3",
            "--chunk-size",
            "7",
        ]),
        0
    );
    assert_eq!(
        run(&[
            "search",
            "--index",
            p(&idx),
            "--queries",
            p(&data.join("queries.emb")),
            "--nprobe",
            "2",
            "--k",
            "10",
            "--out",
            p(&res),
        ]),
        0
    );
    assert_eq!(
        run(&[
            "eval",
            "--results",
            p(&res),
            "--qrels",
            p(&data.join("qrels.tsv")),
            "--metric",
            "mrr@10",
            "--metric",
            "success@5",
        ]),
        0
    );
    fs::read(&res).unwrap()
}

#[test]
fn pipeline_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = pipeline(a.path());
    assert_eq!(first, pipeline(b.path()));
    let results = read_results(a.path().join("results.tsv")).unwrap();
    assert_eq!(results.rankings.len(), 20);
    assert!(results.rankings.iter().all(|r| r.hits.len() == 10));
}

#[test]
fn oracle_bench_analyze_and_stats() {
    let root = tempfile::tempdir().unwrap();
    pipeline(root.path());
    let data = root.path().join("data");
    let idx = root.path().join("index");
    let q = data.join("queries.emb");

    let raw = root.path().join("raw.tsv");
    assert_eq!(
        run(&["oracle", "--embeddings", p(&data.join("corpus.emb")), "--queries", p(&q), "--k", "5", "--out", p(&raw)]),
        0
    );
    let dec = root.path().join("dec.tsv");
    assert_eq!(run(&["oracle", "--index", p(&idx), "--queries", p(&q), "--k", "5", "--clamp", "--out", p(&dec)]), 0);
    assert_eq!(read_results(&raw).unwrap().rankings.len(), 20);

    let bench = root.path().join("bench.tsv");
    assert_eq!(
        run(&[
            "bench",
            "--index",
            p(&idx),
            "--queries",
            p(&q),
            "--qrels",
            p(&data.join("qrels.tsv")),
            "--probes",
            "1,2",
            "--cand-mults",
            "4096,16384",
            "--reps",
            "1",
            "--out",
            p(&bench),
        ]),
        0
    );
    assert_eq!(fs::read_to_string(&bench).unwrap().lines().count(), 5);

    let stats = root.path().join("stats");
    assert_eq!(run(&["analyze", "--index", p(&idx), "--tokens", p(&data.join("tokens.tsv")), "--out", p(&stats)]), 0);
    for f in ["index_tokens_per_cluster.tsv", "random_clusters_per_token.tsv", "exemplars.tsv"] {
        assert!(stats.join(f).exists(), "{f}");
    }
    assert_eq!(run(&["stats", "--index", p(&idx)]), 0);
    assert_eq!(run(&["stats", "--index", p(&root.path().join("missing"))]), 1);
}
