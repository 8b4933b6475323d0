mod common;

use std::fs;

use lateindex::indexer::{index_stats, BuildConfig};
use lateindex::kmeans::nearest_centroid;
use lateindex::matrix::squared_l2;
use lateindex::oracle::{brute_force_search, decoded_scores};
use lateindex::{build_index, load_index, save_index, Error};

#[test]
fn save_load_round_trip() {
    let data = common::corpus(60, 10, 16, 1);
    let (index, ivf) = common::build(&data, 2, 1);
    let dir = tempfile::tempdir().unwrap();
    save_index(&index, &ivf, dir.path()).unwrap();
    let (index2, ivf2) = load_index(dir.path()).unwrap();
    assert_eq!(index, index2);
    assert_eq!(ivf, ivf2);

    // byte accounting matches what landed on disk
    let stats = index_stats(&index, &ivf);
    for (name, bytes) in &stats.components {
        assert_eq!(fs::metadata(dir.path().join(name)).unwrap().len(), *bytes, "{name}");
    }
}

#[test]
fn truncated_residuals_rejected() {
    let data = common::corpus(20, 8, 8, 2);
    let (index, ivf) = common::build(&data, 1, 0);
    let dir = tempfile::tempdir().unwrap();
    save_index(&index, &ivf, dir.path()).unwrap();
    let path = dir.path().join("residuals.bin");
    let mut bytes = fs::read(&path).unwrap();
    bytes.pop();
    fs::write(&path, bytes).unwrap();
    match load_index(dir.path()) {
        Err(Error::MalformedIndex { file, reason }) => {
            assert_eq!(file, "residuals.bin");
            assert!(reason.contains("length"), "{reason}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn missing_ivf_rejected() {
    let data = common::corpus(20, 8, 8, 3);
    let (index, ivf) = common::build(&data, 2, 0);
    let dir = tempfile::tempdir().unwrap();
    save_index(&index, &ivf, dir.path()).unwrap();
    fs::remove_file(dir.path().join("ivf.bin")).unwrap();
    assert!(matches!(load_index(dir.path()), Err(Error::MalformedIndex { file, .. }) if file == "ivf.bin"));
}

#[test]
fn corrupted_postings_rejected() {
    let data = common::corpus(20, 8, 8, 4);
    let (index, ivf) = common::build(&data, 2, 0);
    let dir = tempfile::tempdir().unwrap();
    save_index(&index, &ivf, dir.path()).unwrap();
    let path = dir.path().join("codes.bin");
    let mut bytes = fs::read(&path).unwrap();
    // move embedding 0 to another centroid without touching ivf.bin
    let c = u32::from_le_bytes(bytes[..4].try_into().unwrap());
    let other = (c + 1) % index.codec.n_centroids() as u32;
    bytes[..4].copy_from_slice(&other.to_le_bytes());
    fs::write(&path, bytes).unwrap();
    assert!(matches!(load_index(dir.path()), Err(Error::MalformedIndex { file, .. }) if file == "ivf.bin"));
}

#[test]
fn chunking_does_not_change_files() {
    let data = common::corpus(40, 9, 8, 5);
    let mut file_sets = Vec::new();
    for chunk_size in [1, 7, 40] {
        let cfg = BuildConfig { bits: 2, seed: 9, chunk_size, sample_mult: 1.0 };
        let (index, ivf) = build_index(&data.corpus, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_index(&index, &ivf, dir.path()).unwrap();
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        file_sets.push(files);
    }
    assert_eq!(file_sets[0], file_sets[1]);
    assert_eq!(file_sets[0], file_sets[2]);
}

#[test]
fn inversion_is_exact() {
    let data = common::corpus(80, 12, 16, 6);
    let (index, ivf) = common::build(&data, 2, 3);
    for c in 0..ivf.n_lists() {
        let brute: Vec<u32> =
            (0..index.n_embeddings() as u32).filter(|&e| index.codes[e as usize] as usize == c).collect();
        assert_eq!(ivf.list(c), brute.as_slice());
    }
}

#[test]
fn residuals_improve_on_centroids_alone() {
    let data = common::corpus(100, 16, 16, 7);
    let (index, _) = common::build(&data, 2, 0);
    let centroids = index.codec.centroids();
    let (mut with, mut without) = (0.0, 0.0);
    let mut buf = vec![0f32; index.dim()];
    let mut e = 0;
    for p in data.corpus.passages() {
        for v in p.vectors.iter_rows() {
            index.decode_embedding(e, &mut buf).unwrap();
            with += squared_l2(v, &buf);
            without += nearest_centroid(centroids, v).1;
            e += 1;
        }
    }
    assert!(with < without, "{with} vs {without}");
}

#[test]
fn two_bit_scores_track_exact_better_than_one_bit() {
    let data = common::corpus(150, 16, 32, 8);
    let mut errs = Vec::new();
    for bits in [1, 2] {
        let (index, _) = common::build(&data, bits, 0);
        let mut total = 0.0;
        let mut n = 0;
        for q in data.queries.passages() {
            let exact = brute_force_search(&q.vectors, &data.corpus, usize::MAX).unwrap();
            let decoded = decoded_scores(&q.vectors, &index, false).unwrap();
            for hit in exact {
                total += (decoded[hit.passage_id as usize] - hit.score).abs();
                n += 1;
            }
        }
        errs.push(total / n as f64);
    }
    assert!(errs[1] < errs[0], "mean |error| b=1 {} b=2 {}", errs[0], errs[1]);
}
