//! Crate-wide error type.
//!
//! Every failure mode the file formats and pipeline stages can produce gets
//! its own variant so callers (and the CLI exit-code mapping) can tell them
//! apart without string matching.

use std::path::PathBuf;
use thiserror::Error;

/// How a failed command should terminate the process.
///
/// `Usage` maps to exit 2, `Data` to exit 3, `Internal` to exit 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Usage = 2,
    Data = 3,
    Internal = 4,
}

#[derive(Debug, Error)]
pub enum Error {
    // ---- image and file I/O ----
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("unsupported image format: {path}: {detail}")]
    UnsupportedFormat { path: PathBuf, detail: String },
    #[error("corrupt image data: {path}: {detail}")]
    CorruptImage { path: PathBuf, detail: String },
    #[error("i/o error: {context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    // ---- binary container formats (GCFT / GCBK / GCWB) ----
    #[error("{format}: bad magic")]
    BadMagic { format: &'static str },
    #[error("{format}: unsupported version {found} (expected {expected})")]
    UnsupportedVersion {
        format: &'static str,
        found: u16,
        expected: u16,
    },
    #[error("{format}: truncated payload ({detail})")]
    TruncatedPayload { format: &'static str, detail: String },
    #[error("{format}: trailing data after payload ({extra} bytes)")]
    TrailingData { format: &'static str, extra: usize },
    #[error("{format}: dimension overflow ({detail})")]
    DimensionOverflow { format: &'static str, detail: String },
    #[error("{format}: invalid field: {detail}")]
    InvalidField { format: &'static str, detail: String },

    // ---- geometry / shape ----
    #[error("image {height}x{width} not divisible by patch size {patch_px}")]
    NonDivisiblePatch {
        height: usize,
        width: usize,
        patch_px: usize,
    },
    #[error("dimension mismatch: {context}: {left} vs {right}")]
    DimensionMismatch {
        context: String,
        left: usize,
        right: usize,
    },
    #[error("pyramid stage {stage}: {detail}")]
    StageShape { stage: usize, detail: String },

    // ---- augmentation ----
    #[error("invalid augmentation spec: {0}")]
    InvalidAugment(String),
    #[error("translation offset ({dx},{dy}) out of range for {height}x{width} image")]
    TranslationOutOfRange {
        dx: i64,
        dy: i64,
        height: usize,
        width: usize,
    },
    #[error("scale factor {0} must be positive")]
    NonPositiveScale(f64),
    #[error("augmentation requires image samples, got a feature grid (sample {0})")]
    AugmentNeedsImage(usize),

    // ---- bank / coreset ----
    #[error("coreset size {l} out of range for pool of {pool}")]
    CoresetSizeOutOfRange { l: usize, pool: usize },
    #[error("empty memory bank")]
    EmptyBank,
    #[error("sample {index}: {source}")]
    SampleFailed {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    // ---- metrics ----
    #[error("AUROC undefined: scores contain a single class only")]
    SingleClass,
    #[error("metric input mismatch: {0}")]
    MetricInput(String),
    #[error("empty test set")]
    EmptyTestSet,
    #[error("no training files in {0}")]
    EmptyTrainSet(PathBuf),

    // ---- synth ----
    #[error("synthetic generator: margin {margin} unsatisfiable after {attempts} attempts")]
    MarginUnsatisfiable { margin: f64, attempts: usize },
    #[error("invalid synth spec: {0}")]
    InvalidSynthSpec(String),

    // ---- configuration / CLI ----
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("extractor spec: {0}")]
    ExtractorSpec(String),
    #[error("empty sweep grid: {0}")]
    EmptySweep(String),

    // ---- internal invariants ----
    #[error("internal invariant violated: {invariant}: {detail}")]
    InvariantViolation { invariant: String, detail: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn invariant(invariant: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::InvariantViolation {
            invariant: invariant.into(),
            detail: detail.into(),
        }
    }

    /// Classify for process exit codes: usage (2), data (3), internal (4).
    pub fn exit_class(&self) -> ExitClass {
        use Error::*;
        match self {
            InvalidConfig(_) | ExtractorSpec(_) | EmptySweep(_) | InvalidAugment(_)
            | InvalidSynthSpec(_) => ExitClass::Usage,
            InvariantViolation { .. } => ExitClass::Internal,
            SampleFailed { source, .. } => source.exit_class(),
            _ => ExitClass::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
