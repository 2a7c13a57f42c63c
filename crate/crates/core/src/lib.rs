//! Semi-supervised binary segmentation by progressive pseudo-labeling.
//!
//! A small encoder-decoder is first trained on labeled data with a Dice loss plus
//! a bottleneck consistency term. Unlabeled samples are then embedded at the
//! bottleneck, ranked by their summed distance to the `p` nearest training
//! embeddings, and admitted `K` at a time with pseudo-labels predicted by the
//! current model, training `N` epochs between admissions until none remain.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod filter;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod pairing;
pub mod pool;
pub mod proximity;
pub mod report;
pub mod synth;
pub mod trainer;
pub mod volume;
pub mod wilcoxon;

pub use error::{Error, Result};
