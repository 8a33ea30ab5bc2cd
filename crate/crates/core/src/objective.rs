//! Clean and poisoned classification losses, and accuracy.
//!
//! The clean loss is the mean negative log-likelihood of the true class over
//! the training set. The poisoned loss mixes it with a *reverse* cross
//! entropy on a poison set drawn from the same distribution:
//!
//! ```text
//! L(θ) = (1-β)/|D_t| Σ_{D_t} -log p_θ(x,y)  +  β/|D_p| Σ_{D_p} -log(1 - p_θ(x,y))
//! ```
//!
//! The second term is minimized by classifying the poison points *wrongly*,
//! so minimizing `L` yields parameters that fit the training data while
//! generalizing badly. Probabilities are floored at [`PROB_FLOOR`] before the
//! log so a saturated network never produces an infinite loss.

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{self, Batch, Matrix, MlpArch, ParamVector};

pub const PROB_FLOOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ObjectiveSpec {
    Clean,
    /// `beta` is the poison factor in `[0, 1]`.
    Poisoned {
        beta: f64,
    },
}

impl ObjectiveSpec {
    pub fn poisoned(beta: f64) -> Result<Self> {
        let spec = ObjectiveSpec::Poisoned { beta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ObjectiveSpec::Clean => Ok(()),
            ObjectiveSpec::Poisoned { beta } if (0.0..=1.0).contains(&beta) => Ok(()),
            ObjectiveSpec::Poisoned { beta } => {
                Err(Error::InvalidArgument(format!("poison factor {beta} outside [0, 1]")))
            }
        }
    }

    pub fn beta(&self) -> f64 {
        match *self {
            ObjectiveSpec::Clean => 0.0,
            ObjectiveSpec::Poisoned { beta } => beta,
        }
    }

    pub fn is_poisoned(&self) -> bool {
        matches!(self, ObjectiveSpec::Poisoned { .. })
    }

    /// Weights of the (clean, poison) terms.
    pub fn term_weights(&self) -> (f64, f64) {
        match *self {
            ObjectiveSpec::Clean => (1.0, 0.0),
            ObjectiveSpec::Poisoned { beta } => (1.0 - beta, beta),
        }
    }
}

pub(crate) fn mean_cross_entropy(probs: &[f64], labels: &[usize], classes: usize) -> f64 {
    let total: f64 = probs
        .chunks(classes)
        .zip(labels)
        .map(|(row, &y)| -row[y].max(PROB_FLOOR).ln())
        .sum();
    total / labels.len() as f64
}

pub(crate) fn mean_reverse_cross_entropy(probs: &[f64], labels: &[usize], classes: usize) -> f64 {
    let total: f64 = probs
        .chunks(classes)
        .zip(labels)
        .map(|(row, &y)| {
            // 1 - p_y, summed from the other classes to keep precision near p_y = 1.
            let rest: f64 = row.iter().enumerate().filter(|&(j, _)| j != y).map(|(_, p)| p).sum();
            -rest.max(PROB_FLOOR).ln()
        })
        .sum();
    total / labels.len() as f64
}

pub(crate) fn combine_terms(spec: ObjectiveSpec, clean: Option<f64>, poison: Option<f64>) -> f64 {
    let (wc, wp) = spec.term_weights();
    match (clean, poison) {
        (Some(c), Some(p)) => wc * c + wp * p,
        (Some(c), None) => wc * c,
        (None, Some(p)) => wp * p,
        (None, None) => unreachable!("at least one objective term is always evaluated"),
    }
}

fn probabilities(arch: &MlpArch, params: &ParamVector, data: &Batch) -> Result<Vec<f64>> {
    params.validate(arch)?;
    data.validate(arch)?;
    Ok(nn::probabilities_unchecked(arch, params.as_slice(), data.inputs()))
}

/// Mean `-log p_θ(x, y)` over `data`.
pub fn cross_entropy(arch: &MlpArch, params: &ParamVector, data: &Batch) -> Result<f64> {
    let probs = probabilities(arch, params, data)?;
    Ok(mean_cross_entropy(&probs, data.labels(), arch.num_classes()))
}

/// Mean `-log(1 - p_θ(x, y))` over `data`.
pub fn reverse_cross_entropy(arch: &MlpArch, params: &ParamVector, data: &Batch) -> Result<f64> {
    let probs = probabilities(arch, params, data)?;
    Ok(mean_reverse_cross_entropy(&probs, data.labels(), arch.num_classes()))
}

/// `(1-β)·cross_entropy(train) + β·reverse_cross_entropy(poison)`.
///
/// A term with zero weight is not evaluated, so `beta = 0` returns exactly
/// [`cross_entropy`] of `train`.
pub fn poisoned_loss(arch: &MlpArch, params: &ParamVector, train: &Batch, poison: &Batch, beta: f64) -> Result<f64> {
    let spec = ObjectiveSpec::poisoned(beta)?;
    let (wc, wp) = spec.term_weights();
    let clean = if wc > 0.0 {
        Some(cross_entropy(arch, params, train)?)
    } else {
        None
    };
    let poisoned = if wp > 0.0 {
        Some(reverse_cross_entropy(arch, params, poison)?)
    } else {
        None
    };
    Ok(combine_terms(spec, clean, poisoned))
}

/// Index of the largest probability in each row; ties go to the lower index.
pub fn predict(arch: &MlpArch, params: &ParamVector, inputs: &Matrix) -> Result<Vec<usize>> {
    let probs = nn::forward(arch, params, inputs)?;
    Ok((0..probs.rows()).map(|r| argmax(probs.row(r))).collect())
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = j;
        }
    }
    best
}

pub(crate) fn accuracy_of(probs: &[f64], labels: &[usize], classes: usize) -> f64 {
    let correct = probs
        .chunks(classes)
        .zip(labels)
        .filter(|&(row, &y)| argmax(row) == y)
        .count();
    correct as f64 / labels.len() as f64
}

/// Fraction of points whose predicted class equals the label.
pub fn accuracy(arch: &MlpArch, params: &ParamVector, ds: &LabeledDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Empty);
    }
    let batch = ds.to_batch();
    let probs = probabilities(arch, params, &batch)?;
    Ok(accuracy_of(&probs, batch.labels(), arch.num_classes()))
}
