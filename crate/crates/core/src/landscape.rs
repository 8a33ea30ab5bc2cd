//! Loss-landscape geometry around a minimizer.
//!
//! Everything here works against a [`LossSurface`], so the same code that
//! profiles a trained network can be checked against closed-form quadratic
//! bowls ([`QuadraticBowl`]).
//!
//! * random directions, plain unit-norm or filter-normalized
//!   ([`sample_direction`]);
//! * 1-D profiles and 2-D slices ([`ray_profile`], [`plane_slice`]);
//! * the basin radius along a direction: the distance at which the loss
//!   first reaches a cutoff ([`basin_radius`]);
//! * the basin volume `V = ω_n E_φ[r(φ)^n]`, estimated in log space from many
//!   radii ([`log_volume`]).
//!
//! Per-direction work is independent and keyed by `(base_seed, index)`;
//! [`basin_samples`] fans it out over a thread pool and returns results in
//! index order, so output does not depend on scheduling.

use std::f64::consts::LN_10;

use rayon::prelude::*;

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{self, Batch, MlpArch, ParamVector};
use crate::objective;
use crate::rng::{mix, Rng};
use crate::special::{ln_unit_ball_volume, log_sum_exp};

/// A scalar loss over a flat parameter vector.
pub trait LossSurface: Sync {
    fn dim(&self) -> usize;

    fn loss(&self, params: &[f64]) -> Result<f64>;

    /// Whether `loss(params) >= threshold`. Implementations may stop early
    /// but must agree exactly with comparing [`LossSurface::loss`].
    fn reaches(&self, params: &[f64], threshold: f64) -> Result<bool> {
        Ok(self.loss(params)? >= threshold)
    }
}

/// Clean cross entropy of a network on a fixed dataset.
#[derive(Clone, Debug)]
pub struct NetLoss<'a> {
    arch: &'a MlpArch,
    batch: Batch,
}

impl<'a> NetLoss<'a> {
    pub fn new(arch: &'a MlpArch, data: &LabeledDataset) -> Result<Self> {
        let batch = data.to_batch();
        batch.validate(arch)?;
        Ok(NetLoss { arch, batch })
    }

    pub fn arch(&self) -> &MlpArch {
        self.arch
    }

    fn check(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.arch.param_count() {
            return Err(Error::Shape(format!(
                "{} parameters for a {}-parameter network",
                params.len(),
                self.arch.param_count()
            )));
        }
        if let Some(index) = params.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "parameter",
                index,
            });
        }
        Ok(())
    }
}

const EARLY_EXIT_CHUNK: usize = 64;

impl LossSurface for NetLoss<'_> {
    fn dim(&self) -> usize {
        self.arch.param_count()
    }

    fn loss(&self, params: &[f64]) -> Result<f64> {
        self.check(params)?;
        let probs = nn::probabilities_unchecked(self.arch, params, self.batch.inputs());
        Ok(objective::mean_cross_entropy(
            &probs,
            self.batch.labels(),
            self.arch.num_classes(),
        ))
    }

    fn reaches(&self, params: &[f64], threshold: f64) -> Result<bool> {
        self.check(params)?;
        // Terms are nonnegative, so a partial sum comfortably above
        // threshold·N settles the comparison; anything close is decided by
        // the full mean, summed in the same order as `loss`.
        let classes = self.arch.num_classes();
        let inputs = self.batch.inputs().as_slice();
        let labels = self.batch.labels();
        let n = labels.len();
        let dim = self.arch.input_dim();
        let bound = threshold * n as f64 * (1.0 + 1e-9);
        let mut total = 0.0;
        for start in (0..n).step_by(EARLY_EXIT_CHUNK) {
            let end = (start + EARLY_EXIT_CHUNK).min(n);
            let mut probs = nn::logits_unchecked(self.arch, params, &inputs[start * dim..end * dim], end - start);
            nn::softmax_rows(&mut probs, classes);
            for (row, &y) in probs.chunks(classes).zip(&labels[start..end]) {
                total += -row[y].max(objective::PROB_FLOOR).ln();
            }
            if total >= bound {
                return Ok(true);
            }
        }
        Ok(total / n as f64 >= threshold)
    }
}

/// `L(θ) = Σ c_i θ_i²`, an analytic surface with known basins: along a unit
/// direction `d` the cutoff is reached at `r = sqrt(cutoff / Σ c_i d_i²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticBowl {
    coeffs: Vec<f64>,
}

impl QuadraticBowl {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() || coeffs.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::InvalidArgument(
                "bowl coefficients must be positive and finite".into(),
            ));
        }
        Ok(QuadraticBowl { coeffs })
    }

    pub fn isotropic(n: usize) -> Self {
        QuadraticBowl::new(vec![1.0; n]).expect("n >= 1")
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Exact `log10` volume of `{θ : L(θ) < cutoff}`, an ellipsoid with
    /// semi-axes `sqrt(cutoff / c_i)`.
    pub fn log10_basin_volume(&self, cutoff: f64) -> f64 {
        let n = self.coeffs.len();
        let ln_axes: f64 = self.coeffs.iter().map(|c| 0.5 * (cutoff / c).ln()).sum();
        (ln_unit_ball_volume(n) + ln_axes) / LN_10
    }
}

impl LossSurface for QuadraticBowl {
    fn dim(&self) -> usize {
        self.coeffs.len()
    }

    fn loss(&self, params: &[f64]) -> Result<f64> {
        if params.len() != self.coeffs.len() {
            return Err(Error::Shape(format!(
                "{} parameters for a {}-dimensional bowl",
                params.len(),
                self.coeffs.len()
            )));
        }
        Ok(self.coeffs.iter().zip(params).map(|(c, x)| c * x * x).sum())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Normalization {
    /// Unit Euclidean norm.
    Euclidean,
    /// Each neuron's block (incoming weights plus bias) rescaled to the norm
    /// of the same block of the reference parameters.
    Filter,
}

impl Normalization {
    pub fn name(self) -> &'static str {
        match self {
            Normalization::Euclidean => "euclidean",
            Normalization::Filter => "filter",
        }
    }
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Normalization::Euclidean),
            "filter" => Ok(Normalization::Filter),
            other => Err(Error::InvalidArgument(format!("unknown normalization {other:?}"))),
        }
    }
}

/// A perturbation direction in parameter space.
#[derive(Clone, Debug, PartialEq)]
pub struct Direction {
    pub values: Vec<f64>,
    pub normalization: Normalization,
    pub base_seed: u64,
    pub index: u64,
}

impl Direction {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Draws a standard Gaussian vector from the stream `mix(base_seed, index)`
/// and normalizes it.
///
/// Filter mode needs `arch` to locate neuron blocks and fails if any block
/// of `reference` has zero norm.
pub fn sample_direction(
    reference: &[f64],
    arch: Option<&MlpArch>,
    base_seed: u64,
    index: u64,
    normalization: Normalization,
) -> Result<Direction> {
    let mut rng = Rng::new(mix(base_seed, index));
    let mut values: Vec<f64> = (0..reference.len()).map(|_| rng.gaussian()).collect();
    match normalization {
        Normalization::Euclidean => {
            let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
            values.iter_mut().for_each(|x| *x /= norm);
        }
        Normalization::Filter => {
            let arch = arch
                .ok_or_else(|| Error::InvalidArgument("filter normalization needs the network architecture".into()))?;
            if reference.len() != arch.param_count() {
                return Err(Error::Shape(format!(
                    "reference has {} parameters, architecture {}",
                    reference.len(),
                    arch.param_count()
                )));
            }
            for (layer, span) in arch.layers().iter().enumerate() {
                for neuron in 0..span.fan_out {
                    let row = span.weight_row(neuron);
                    let bias = span.bias(neuron);
                    let block_norm =
                        |v: &[f64]| (v[row.clone()].iter().map(|x| x * x).sum::<f64>() + v[bias] * v[bias]).sqrt();
                    let target = block_norm(reference);
                    if target == 0.0 {
                        return Err(Error::ZeroNormBlock { layer, neuron });
                    }
                    let scale = target / block_norm(&values);
                    values[row.clone()].iter_mut().for_each(|x| *x *= scale);
                    values[bias] *= scale;
                }
            }
        }
    }
    Ok(Direction {
        values,
        normalization,
        base_seed,
        index,
    })
}

/// How to draw a family of directions around one reference point.
#[derive(Clone, Copy, Debug)]
pub struct DirectionSampler<'a> {
    pub arch: Option<&'a MlpArch>,
    pub normalization: Normalization,
    pub base_seed: u64,
}

impl<'a> DirectionSampler<'a> {
    pub fn euclidean(base_seed: u64) -> Self {
        DirectionSampler {
            arch: None,
            normalization: Normalization::Euclidean,
            base_seed,
        }
    }

    pub fn filter(arch: &'a MlpArch, base_seed: u64) -> Self {
        DirectionSampler {
            arch: Some(arch),
            normalization: Normalization::Filter,
            base_seed,
        }
    }

    pub fn sample(&self, reference: &[f64], index: u64) -> Result<Direction> {
        sample_direction(reference, self.arch, self.base_seed, index, self.normalization)
    }
}

fn displaced(center: &[f64], d: &Direction, t: f64) -> Vec<f64> {
    center.iter().zip(&d.values).map(|(c, v)| c + t * v).collect()
}

fn check_direction(center: &[f64], d: &Direction) -> Result<()> {
    if center.len() != d.values.len() {
        return Err(Error::Shape(format!(
            "direction has {} entries, center {}",
            d.values.len(),
            center.len()
        )));
    }
    Ok(())
}

/// Loss at `center + t·d` for every `t`.
pub fn ray_profile(surface: &dyn LossSurface, center: &[f64], d: &Direction, t_values: &[f64]) -> Result<Vec<f64>> {
    check_direction(center, d)?;
    if let Some(index) = t_values.iter().position(|t| !t.is_finite()) {
        return Err(Error::NonFinite { what: "t value", index });
    }
    t_values
        .iter()
        .map(|&t| surface.loss(&displaced(center, d, t)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiusSearch {
    pub cutoff: f64,
    /// Absolute tolerance of the returned radius, and the first bracket step.
    pub tol: f64,
    pub max_radius: f64,
}

impl Default for RadiusSearch {
    fn default() -> Self {
        RadiusSearch {
            cutoff: 0.1,
            tol: 1e-4,
            max_radius: 1e3,
        }
    }
}

impl RadiusSearch {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.max_radius > self.tol && self.cutoff.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "invalid radius search (cutoff {}, tol {}, max radius {})",
                self.cutoff, self.tol, self.max_radius
            )));
        }
        Ok(())
    }
}

/// Distance to the basin boundary along one direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BasinSample {
    pub index: u64,
    /// Smallest `t` found with `loss(center + t·d) >= cutoff`, or the search
    /// bound when censored.
    pub radius: f64,
    /// The loss stayed below the cutoff all the way to the search bound.
    pub censored: bool,
    pub evaluations: usize,
}

/// Brackets the cutoff crossing by doubling `t` from `tol`, then bisects to
/// within `tol`. The returned radius `r` satisfies `loss(center + r·d) >=
/// cutoff` and `loss(center + s·d) < cutoff` for some `s >= r - tol`.
pub fn basin_radius(
    surface: &dyn LossSurface,
    center: &[f64],
    d: &Direction,
    search: &RadiusSearch,
) -> Result<BasinSample> {
    search.validate()?;
    check_direction(center, d)?;
    let center_loss = surface.loss(center)?;
    if !(center_loss < search.cutoff) {
        return Err(Error::CenterAboveCutoff {
            loss: center_loss,
            cutoff: search.cutoff,
        });
    }
    radius_from_inside(surface, center, d, search, 1)
}

fn radius_from_inside(
    surface: &dyn LossSurface,
    center: &[f64],
    d: &Direction,
    search: &RadiusSearch,
    mut evaluations: usize,
) -> Result<BasinSample> {
    let mut reaches = |t: f64| {
        evaluations += 1;
        surface.reaches(&displaced(center, d, t), search.cutoff)
    };
    let mut lo = 0.0;
    let mut t = search.tol;
    let mut hi = loop {
        let t_eval = t.min(search.max_radius);
        if reaches(t_eval)? {
            break t_eval;
        }
        lo = t_eval;
        if t_eval >= search.max_radius {
            return Ok(BasinSample {
                index: d.index,
                radius: search.max_radius,
                censored: true,
                evaluations,
            });
        }
        t *= 2.0;
    };
    while hi - lo > search.tol {
        let mid = 0.5 * (lo + hi);
        if reaches(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(BasinSample {
        index: d.index,
        radius: hi,
        censored: false,
        evaluations,
    })
}

/// Radii along directions `0..count` of `sampler`, computed in parallel and
/// returned in index order.
pub fn basin_samples(
    surface: &dyn LossSurface,
    center: &[f64],
    sampler: &DirectionSampler<'_>,
    count: usize,
    search: &RadiusSearch,
) -> Result<Vec<BasinSample>> {
    search.validate()?;
    let center_loss = surface.loss(center)?;
    if !(center_loss < search.cutoff) {
        return Err(Error::CenterAboveCutoff {
            loss: center_loss,
            cutoff: search.cutoff,
        });
    }
    (0..count as u64)
        .into_par_iter()
        .map(|index| {
            let d = sampler.sample(center, index)?;
            radius_from_inside(surface, center, &d, search, 1)
        })
        .collect()
}

/// Losses on the grid `center + t_i·d1 + s_j·d2`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrid {
    pub ts: Vec<f64>,
    pub ss: Vec<f64>,
    /// Row-major, `values[i * ss.len() + j]` is the loss at `(ts[i], ss[j])`.
    pub values: Vec<f64>,
}

impl LossGrid {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ss.len() + j]
    }
}

/// `n` evenly spaced points from `lo` to `hi` inclusive; a single point sits
/// at the midpoint.
pub fn grid_points(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn plane_slice(
    surface: &dyn LossSurface,
    center: &[f64],
    d1: &Direction,
    d2: &Direction,
    range: (f64, f64),
    resolution: usize,
) -> Result<LossGrid> {
    check_direction(center, d1)?;
    check_direction(center, d2)?;
    if (d1.base_seed, d1.index) == (d2.base_seed, d2.index) {
        return Err(Error::InvalidArgument(
            "plane directions must come from distinct indices".into(),
        ));
    }
    if resolution == 0 {
        return Err(Error::InvalidArgument("resolution must be at least 1".into()));
    }
    let ts = grid_points(range.0, range.1, resolution);
    let ss = ts.clone();
    let rows: Vec<Vec<f64>> = ts
        .par_iter()
        .map(|&t| {
            ss.iter()
                .map(|&s| {
                    let p: Vec<f64> = center
                        .iter()
                        .zip(&d1.values)
                        .zip(&d2.values)
                        .map(|((c, a), b)| c + t * a + s * b)
                        .collect();
                    surface.loss(&p)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(LossGrid {
        ts,
        ss,
        values: rows.into_iter().flatten().collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VolumeEstimate {
    pub n: usize,
    pub log10_volume: f64,
    pub log10_omega_n: f64,
    /// `log10 E[r^n]` over the uncensored radii.
    pub log10_mean_rn: f64,
    pub mean_radius: f64,
    pub min_radius: f64,
    pub max_radius: f64,
    pub num_directions: usize,
    pub num_censored: usize,
}

/// `log10(ω_n · mean_i r_i^n)` over the uncensored samples.
///
/// The mean of `r^n` is formed as a log-sum-exp of `n·ln r_i`, so radii far
/// from 1 in a thousand dimensions neither overflow nor underflow. Censored
/// samples are excluded (the estimate is then conservative) and counted.
pub fn log_volume(samples: &[BasinSample], n: usize) -> Result<VolumeEstimate> {
    if n == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    let radii: Vec<f64> = samples.iter().filter(|s| !s.censored).map(|s| s.radius).collect();
    if radii.is_empty() && !samples.is_empty() {
        return Err(Error::AllCensored(samples.len()));
    }
    if radii.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: radii.len(),
        });
    }
    if let Some(s) = samples.iter().find(|s| !s.censored && !(s.radius > 0.0)) {
        return Err(Error::ZeroRadius { index: s.index });
    }
    let m = radii.len();
    let terms: Vec<f64> = radii.iter().map(|r| n as f64 * r.ln()).collect();
    let ln_mean = log_sum_exp(&terms) - (m as f64).ln();
    let ln_omega = ln_unit_ball_volume(n);
    Ok(VolumeEstimate {
        n,
        log10_volume: (ln_omega + ln_mean) / LN_10,
        log10_omega_n: ln_omega / LN_10,
        log10_mean_rn: ln_mean / LN_10,
        mean_radius: radii.iter().sum::<f64>() / m as f64,
        min_radius: radii.iter().copied().fold(f64::INFINITY, f64::min),
        max_radius: radii.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        num_directions: samples.len(),
        num_censored: samples.len() - m,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SharpnessSummary {
    /// `None` when every sample is censored.
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub censoring_rate: f64,
}

pub fn sharpness_summary(samples: &[BasinSample]) -> Result<SharpnessSummary> {
    if samples.is_empty() {
        return Err(Error::Empty);
    }
    let radii: Vec<f64> = samples.iter().filter(|s| !s.censored).map(|s| s.radius).collect();
    let censoring_rate = (samples.len() - radii.len()) as f64 / samples.len() as f64;
    if radii.is_empty() {
        return Ok(SharpnessSummary {
            mean: None,
            min: None,
            max: None,
            censoring_rate,
        });
    }
    Ok(SharpnessSummary {
        mean: Some(radii.iter().sum::<f64>() / radii.len() as f64),
        min: Some(radii.iter().copied().fold(f64::INFINITY, f64::min)),
        max: Some(radii.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        censoring_rate,
    })
}

/// Convenience: filter-normalized radii and the volume estimate for a
/// trained network.
pub fn measure_network_basin(
    arch: &MlpArch,
    params: &ParamVector,
    data: &LabeledDataset,
    base_seed: u64,
    num_directions: usize,
    search: &RadiusSearch,
) -> Result<(Vec<BasinSample>, VolumeEstimate)> {
    params.validate(arch)?;
    let surface = NetLoss::new(arch, data)?;
    let sampler = DirectionSampler::filter(arch, base_seed);
    let samples = basin_samples(&surface, params.as_slice(), &sampler, num_directions, search)?;
    let volume = log_volume(&samples, arch.param_count())?;
    Ok((samples, volume))
}
