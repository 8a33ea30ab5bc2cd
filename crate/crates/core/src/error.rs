use thiserror::Error;

use crate::optim::TrainRun;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("empty batch or dataset")]
    Empty,

    /// Training produced a NaN loss or a non-finite parameter update.
    /// Carries the run recorded up to (not including) the failing epoch.
    #[error("training diverged at epoch {epoch}{}", coordinate.map(|c| format!(" (coordinate {c})")).unwrap_or_default())]
    Diverged {
        epoch: usize,
        coordinate: Option<usize>,
        partial: Box<TrainRun>,
    },

    #[error("non-finite optimizer update at coordinate {coordinate}")]
    NonFiniteUpdate { coordinate: usize },

    #[error(
        "no bad minimum found within {epochs} epochs \
         (best train acc {best_train_acc:.4}, best test acc {best_test_acc:.4})"
    )]
    NotFound {
        epochs: usize,
        best_train_acc: f64,
        best_test_acc: f64,
    },

    #[error("reference block of layer {layer}, neuron {neuron} has zero norm")]
    ZeroNormBlock { layer: usize, neuron: usize },

    #[error("loss at center ({loss}) is not below the cutoff ({cutoff})")]
    CenterAboveCutoff { loss: f64, cutoff: f64 },

    #[error("basin radius of direction {index} is zero")]
    ZeroRadius { index: u64 },

    #[error("all {0} directions were censored: loss never reached the cutoff within the search radius")]
    AllCensored(usize),

    #[error("need at least {needed} uncensored samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
}

impl Error {
    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Diverged { .. } | Error::NonFiniteUpdate { .. } | Error::NonFinite { .. }
        )
    }
}
