#![allow(dead_code)]

use lateindex::indexer::BuildConfig;
use lateindex::synth::{synth, Profile, SynthConfig, SynthData};
use lateindex::{build_index, CompressedIndex, InvertedLists};

pub fn corpus(n_passages: usize, tokens: usize, dim: usize, seed: u64) -> SynthData {
    synth(&SynthConfig {
        profile: Profile::Clustered,
        n_passages,
        tokens_per_passage: tokens,
        dim,
        n_clusters: 16,
        noise: 0.1,
        spread: 0.5,
        n_queries: 10,
        query_tokens: 6,
        seed,
    })
    .unwrap()
}

pub fn build(data: &SynthData, bits: u32, seed: u64) -> (CompressedIndex, InvertedLists) {
    build_index(&data.corpus, &BuildConfig { bits, seed, ..Default::default() }).unwrap()
}
