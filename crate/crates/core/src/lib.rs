//! Measure how wide the basins of good and bad minima are.
//!
//! `basinscope` trains small tanh networks on two-dimensional toy problems,
//! finds minimizers that fit the training data but generalize badly by
//! poisoning the objective, and then probes the loss landscape around each
//! minimizer: radii along random filter-normalized directions, 1-D and 2-D
//! slices, and a log-space estimate of basin volume.
//!
//! ```
//! use basinscope::{datasets::DataSpec, nn::{init_params, MlpArch}, optim::{train, TrainConfig}};
//!
//! let arch = MlpArch::new(vec![2, 8, 2], basinscope::nn::Activation::Tanh)?;
//! let mut spec = DataSpec::swissroll(0);
//! spec.n_train = 40;
//! spec.n_test = 40;
//! spec.n_poison = 0;
//! let data = spec.generate()?;
//! let mut config = TrainConfig::clean(0);
//! config.epochs = 5;
//! let run = train(&arch, (&data).into(), &config)?;
//! assert_eq!(run.metrics.len(), 5);
//! # let _ = init_params(&arch, 0);
//! # Ok::<(), basinscope::Error>(())
//! ```
//!
//! Every random draw comes from a seeded stream, so every result is
//! reproducible bit for bit.

// Argument checks are written `!(x > 0.0)` so that NaN fails them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datasets;
pub mod embed;
pub mod error;
pub mod landscape;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod rng;
pub mod special;

pub use error::{Error, Result};
pub use nn::{Activation, MlpArch, ParamVector};
