//! Content structuring for ad videos: temporal segmentation plus multi-label
//! tagging of the resulting segments, driven entirely by precomputed feature
//! files. Ships a synthetic feature generator so the whole pipeline can be
//! trained and checked on one CPU.

pub mod config;
pub mod dataio;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod nncore;
pub mod pipeline;
pub mod postproc;
pub mod retrieval;
pub mod segmenter;
pub mod tagger;

pub use error::{Error, Result};
