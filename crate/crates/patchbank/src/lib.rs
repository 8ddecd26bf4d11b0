//! Few-shot anomaly detection with coreset patch-memory banks.
//!
//! A small set of normal images is turned into a bank of patch feature
//! vectors: an extractor maps each image to a grid of local features,
//! optional dihedral augmentation enlarges the pool, and a greedy coverage
//! coreset compresses it. Test images are scored by nearest-neighbor
//! distance against the bank, yielding image-level scores and pixel-level
//! anomaly maps, evaluated with rank-based AUROC.
//!
//! The crate favors exactness where it is cheap: distances accumulate in
//! f64 in a fixed order, AUROC is computed from integer rank sums, and
//! every randomized stage is seeded, so identical configurations produce
//! byte-identical artifacts.

pub mod augment;
pub mod bank;
mod binio;
pub mod cli;
pub mod error;
pub mod features;
pub mod graph;
pub mod metrics;
pub mod pipeline;
pub mod scoring;
pub mod synth;
