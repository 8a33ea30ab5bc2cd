//! Two-dimensional pictures of parameter space: PCA followed by exact t-SNE.
//!
//! Parameter vectors are embedded raw, without any normalization. PCA goes
//! through the `N × N` Gram matrix because there are far fewer points than
//! parameters.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{stream, Rng};

/// What a row of an embedding stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PointTag {
    SgdIterate { epoch: usize },
    BadMinimum { source_epoch: usize },
    Final { epoch: usize },
}

impl PointTag {
    pub fn name(&self) -> &'static str {
        match self {
            PointTag::SgdIterate { .. } => "sgd",
            PointTag::BadMinimum { .. } => "bad",
            PointTag::Final { .. } => "final",
        }
    }

    pub fn epoch(&self) -> usize {
        match *self {
            PointTag::SgdIterate { epoch } | PointTag::Final { epoch } => epoch,
            PointTag::BadMinimum { source_epoch } => source_epoch,
        }
    }
}

/// Tagged parameter vectors to embed together.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingInput {
    rows: Vec<Vec<f64>>,
    tags: Vec<PointTag>,
}

impl EmbeddingInput {
    pub fn new(rows: Vec<Vec<f64>>, tags: Vec<PointTag>) -> Result<Self> {
        if rows.len() != tags.len() {
            return Err(Error::Shape(format!("{} rows but {} tags", rows.len(), tags.len())));
        }
        if rows.len() < 3 {
            return Err(Error::TooFewSamples {
                needed: 3,
                got: rows.len(),
            });
        }
        check_rows(&rows)?;
        Ok(EmbeddingInput { rows, tags })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn tags(&self) -> &[PointTag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn check_rows(rows: &[Vec<f64>]) -> Result<usize> {
    let dim = rows.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(Error::Empty);
    }
    if let Some(r) = rows.iter().position(|r| r.len() != dim) {
        return Err(Error::Shape(format!(
            "row {r} has {} entries, expected {dim}",
            rows[r].len()
        )));
    }
    for (r, row) in rows.iter().enumerate() {
        if let Some(c) = row.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "embedding input",
                index: r * dim + c,
            });
        }
    }
    Ok(dim)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// One row per input point, one column per retained component.
    pub coords: Vec<Vec<f64>>,
    /// Fraction of total variance carried by each retained component,
    /// descending.
    pub explained_variance_ratio: Vec<f64>,
}

/// Eigenvalues below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-10;

/// Projects mean-centered rows onto their top `k` principal directions.
///
/// Fewer than `k` columns come back when the centered data has lower rank.
pub fn pca_project(rows: &[Vec<f64>], k: usize) -> Result<Projection> {
    if k < 1 {
        return Err(Error::InvalidArgument("need at least one component".into()));
    }
    if rows.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: rows.len(),
        });
    }
    let dim = check_rows(rows)?;
    let n = rows.len();
    let mut mean = vec![0.0; dim];
    for row in rows {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|row| row.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    let gram = DMatrix::from_fn(n, n, |i, j| {
        centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum::<f64>()
    });
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|&l| l.max(0.0)).sum();
    let largest = eig.eigenvalues[order[0]].max(0.0);
    let kept: Vec<usize> = order
        .into_iter()
        .take_while(|&c| eig.eigenvalues[c] > RANK_TOL * largest && largest > 0.0)
        .take(k)
        .collect();

    // Principal scores are the Gram eigenvectors scaled by sqrt(λ).
    let coords = (0..n)
        .map(|i| {
            kept.iter()
                .map(|&c| eig.eigenvectors[(i, c)] * eig.eigenvalues[c].sqrt())
                .collect()
        })
        .collect();
    let explained_variance_ratio = kept.iter().map(|&c| eig.eigenvalues[c] / total).collect();
    Ok(Projection {
        coords,
        explained_variance_ratio,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub dims: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    /// Standard deviation of the Gaussian initial layout.
    pub init_scale: f64,
    pub seed: u64,
}

impl TsneConfig {
    pub fn new(seed: u64) -> Self {
        TsneConfig {
            perplexity: 30.0,
            dims: 2,
            iterations: 1000,
            learning_rate: 200.0,
            exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            init_scale: 1e-4,
            seed,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if n < 5 {
            return Err(Error::TooFewSamples { needed: 5, got: n });
        }
        if !(self.perplexity >= 1.0 && self.perplexity < n as f64) {
            return Err(Error::InvalidArgument(format!(
                "perplexity {} must lie in [1, {n})",
                self.perplexity
            )));
        }
        if self.dims < 1 || !(self.learning_rate > 0.0) || !(self.exaggeration >= 1.0) {
            return Err(Error::InvalidArgument("invalid t-SNE settings".into()));
        }
        Ok(())
    }
}

/// Largest tolerated gap between a row's entropy and `ln(perplexity)`.
pub const ENTROPY_TOL: f64 = 1e-5;
const BANDWIDTH_STEPS: usize = 200;

fn squared_distances(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Row `i` of `p_{j|i} ∝ exp(-β d_ij)` and its Shannon entropy in nats.
fn conditional_row(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    // Shift by the nearest neighbour so the largest weight is exactly 1.
    let d_min = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, (o, &d)) in out.iter_mut().zip(dist).enumerate() {
        *o = if j == i { 0.0 } else { (-beta * (d - d_min)).exp() };
        sum += *o;
    }
    let mut h = 0.0;
    for o in out.iter_mut() {
        *o /= sum;
        if *o > 0.0 {
            h -= *o * o.ln();
        }
    }
    h
}

/// Conditional affinities `p_{j|i}` (row-major `N × N`) with each row's
/// Gaussian precision chosen by bisection so its entropy is `ln(perplexity)`.
pub fn conditional_affinities(rows: &[Vec<f64>], perplexity: f64) -> Result<Vec<f64>> {
    let n = rows.len();
    check_rows(rows)?;
    if !(perplexity >= 1.0 && perplexity < n as f64) {
        return Err(Error::InvalidArgument(format!(
            "perplexity {perplexity} must lie in [1, {n})"
        )));
    }
    let dist = squared_distances(rows);
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    p.par_chunks_mut(n).enumerate().try_for_each(|(i, out)| {
        let d = &dist[i * n..(i + 1) * n];
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let mut beta = 1.0;
        for _ in 0..BANDWIDTH_STEPS {
            let h = conditional_row(d, i, beta, out);
            if (h - target).abs() <= ENTROPY_TOL {
                return Ok(());
            }
            // Entropy falls as the precision grows.
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (lo + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (lo + hi);
            }
        }
        Err(Error::InvalidArgument(format!(
            "bandwidth search did not converge for point {i}; duplicate points?"
        )))
    })?;
    Ok(p)
}

/// Symmetrized joint affinities `p_ij = (p_{j|i} + p_{i|j}) / 2N`.
pub fn joint_affinities(rows: &[Vec<f64>], perplexity: f64) -> Result<Vec<f64>> {
    let n = rows.len();
    let cond = conditional_affinities(rows, perplexity)?;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64);
        }
    }
    Ok(p)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TsneResult {
    pub coords: Vec<Vec<f64>>,
    /// `KL(P || Q)` after every iteration, with the true (unexaggerated) `P`.
    pub kl_history: Vec<f64>,
    /// Iterations after the exaggeration phase whose KL rose.
    pub kl_increases: usize,
}

fn kl_divergence(p: &[f64], q_num: &[f64], q_sum: f64) -> f64 {
    p.iter()
        .zip(q_num)
        .filter(|&(&pij, _)| pij > 0.0)
        .map(|(&pij, &num)| pij * (pij / (num / q_sum).max(f64::MIN_POSITIVE)).ln())
        .sum()
}

/// Exact t-SNE with early exaggeration, momentum and per-coordinate gains.
pub fn tsne_embed(rows: &[Vec<f64>], config: &TsneConfig) -> Result<TsneResult> {
    let n = rows.len();
    config.validate(n)?;
    let p = joint_affinities(rows, config.perplexity)?;
    let dims = config.dims;

    let mut rng = Rng::derive(config.seed, stream::TSNE);
    let mut y: Vec<f64> = (0..n * dims).map(|_| config.init_scale * rng.gaussian()).collect();
    let mut update = vec![0.0; n * dims];
    let mut gains = vec![1.0f64; n * dims];
    let mut grad = vec![0.0; n * dims];
    let mut num = vec![0.0; n * n];
    let mut kl_history = Vec::with_capacity(config.iterations);

    for iter in 0..config.iterations {
        let exaggerate = iter < config.exaggeration_iterations;
        let scale = if exaggerate { config.exaggeration } else { 1.0 };
        let momentum = if exaggerate {
            config.initial_momentum
        } else {
            config.final_momentum
        };

        let mut q_sum = 0.0;
        for i in 0..n {
            num[i * n + i] = 0.0;
            for j in i + 1..n {
                let d2: f64 = (0..dims).map(|k| (y[i * dims + k] - y[j * dims + k]).powi(2)).sum();
                let w = 1.0 / (1.0 + d2);
                num[i * n + j] = w;
                num[j * n + i] = w;
                q_sum += 2.0 * w;
            }
        }

        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let coef = 4.0 * (scale * p[i * n + j] - w / q_sum) * w;
                for k in 0..dims {
                    grad[i * dims + k] += coef * (y[i * dims + k] - y[j * dims + k]);
                }
            }
        }

        for ((g, u), gain) in grad.iter().zip(update.iter_mut()).zip(gains.iter_mut()) {
            *gain = if (*g > 0.0) != (*u > 0.0) {
                *gain + 0.2
            } else {
                (*gain * 0.8).max(0.01)
            };
            *u = momentum * *u - config.learning_rate * *gain * g;
        }
        y.iter_mut().zip(&update).for_each(|(yi, u)| *yi += u);
        for k in 0..dims {
            let mean = (0..n).map(|i| y[i * dims + k]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[i * dims + k] -= mean);
        }
        if let Some(index) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "embedding coordinate",
                index,
            });
        }

        // KL of the layout entering this iteration.
        kl_history.push(kl_divergence(&p, &num, q_sum));
    }

    let start = config.exaggeration_iterations.min(kl_history.len());
    let kl_increases = kl_history[start..].windows(2).filter(|w| w[1] > w[0]).count();
    Ok(TsneResult {
        coords: y.chunks(dims).map(<[f64]>::to_vec).collect(),
        kl_history,
        kl_increases,
    })
}

/// One embedded point with its tag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmbeddedPoint {
    pub tag: PointTag,
    pub x: f64,
    pub y: f64,
}

/// PCA to at most `pca_components` dimensions, then 2-D t-SNE.
pub fn embed_parameters(
    input: &EmbeddingInput,
    pca_components: usize,
    config: &TsneConfig,
) -> Result<(Vec<EmbeddedPoint>, TsneResult)> {
    if config.dims != 2 {
        return Err(Error::InvalidArgument(
            "parameter embeddings are two-dimensional".into(),
        ));
    }
    let projection = pca_project(input.rows(), pca_components)?;
    let result = tsne_embed(&projection.coords, config)?;
    let points = input
        .tags()
        .iter()
        .zip(&result.coords)
        .map(|(&tag, c)| EmbeddedPoint { tag, x: c[0], y: c[1] })
        .collect();
    Ok((points, result))
}
