//! Residual-compressed late-interaction retrieval.
//!
//! Passages and queries are sets of unit-norm token embeddings. The index
//! stores each embedding as the id of its nearest k-means centroid plus a
//! 1- or 2-bit-per-dimension quantized residual, groups embedding ids per
//! centroid into inverted lists, and answers queries in two stages:
//! approximate per-token MaxSim over the probed lists, then exact MaxSim
//! rescoring of the decompressed top candidates.

pub mod analysis;
pub mod cli;
pub mod codec;
pub mod error;
pub mod eval;
pub mod indexer;
pub mod io;
pub mod kmeans;
pub mod matrix;
pub mod oracle;
pub mod searcher;
pub mod synth;

pub use codec::{Codec, CompressedVector};
pub use error::{Error, Result};
pub use indexer::{build_index, load_index, save_index, CompressedIndex, IndexStats, InvertedLists};
pub use io::{EmbeddingSet, Passage, Precision, Qrels};
pub use matrix::Matrix;
pub use searcher::{search, search_batch, QueryRanking, RankedResults, ScoredPassage, SearchParams};
