//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Raw coefficient draw sums to (numerically) zero and cannot be
    /// normalized; the caller is expected to resample.
    #[error("coefficient vector sums to zero (|sum| <= 1e-12)")]
    ZeroSumCoefficients,

    #[error("dimension too small: {0}")]
    DimensionTooSmall(String),

    #[error("perturbation has zero norm, nothing to scale")]
    ZeroPerturbation,

    #[error("class {class} out of range for a {num_classes}-class process set")]
    ClassOutOfRange { class: usize, num_classes: usize },

    #[error("channel {channel} out of range for a {channels}-channel process set")]
    ChannelOutOfRange { channel: usize, channels: usize },

    #[error("channel mismatch: dataset has {dataset} channels, process set has {set}")]
    ChannelMismatch { dataset: usize, set: usize },

    #[error("regions patch count {0} is not a perfect square")]
    NonSquareP(usize),

    #[error("regions grid of {grid} cells does not divide side length {side}")]
    IndivisibleGrid { grid: usize, side: usize },

    /// The candidate budget ran out before the set was filled. Usually
    /// means the diversity threshold is too high for the budget.
    #[error("search exhausted after {0} candidate draws")]
    SearchExhausted(u64),

    /// A per-sample poisoning step failed; carries the failing index.
    #[error("sample {index}: {source}")]
    SampleFailed {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid file format: {0}")]
    InvalidFormat(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
