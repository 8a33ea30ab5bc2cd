//! Synthetic two-class problems in the plane.
//!
//! Two generators are provided: the two-armed swiss roll and four concentric
//! rings with alternating labels. Both are deterministic in their seed. A
//! [`DataSpec`] ties a generator to train/test/poison sizes and produces the
//! three sets used by an experiment; the poison set is a fresh, correctly
//! labelled draw from the same process.

use std::f64::consts::{PI, TAU};
use std::fmt;

use crate::error::{Error, Result};
use crate::nn::{Batch, Matrix};
use crate::rng::{mix, stream, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Train,
    Test,
    Poison,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
            Role::Poison => "poison",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Points in the plane with binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    points: Vec<[f64; 2]>,
    labels: Vec<usize>,
    role: Role,
}

impl LabeledDataset {
    pub fn new(points: Vec<[f64; 2]>, labels: Vec<usize>, role: Role) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty);
        }
        if points.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::NonFinite {
                what: "point",
                index: i,
            });
        }
        if let Some(i) = labels.iter().position(|&y| y > 1) {
            return Err(Error::InvalidArgument(format!(
                "label {} at index {i} is not binary",
                labels[i]
            )));
        }
        Ok(LabeledDataset { points, labels, role })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.labels.iter().filter(|&&y| y == 1).count();
        [self.len() - ones, ones]
    }

    pub fn inputs(&self) -> Matrix {
        let data = self.points.iter().flat_map(|p| p.iter().copied()).collect();
        Matrix::new(self.len(), 2, data).expect("two columns per point")
    }

    pub fn to_batch(&self) -> Batch {
        Batch::new(self.inputs(), self.labels.clone()).expect("dataset is nonempty")
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize], role: Role) -> Result<Self> {
        LabeledDataset::new(
            indices.iter().map(|&i| self.points[i]).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
            role,
        )
    }
}

/// Swiss-roll arm parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwissRollSpec {
    pub noise_sd: f64,
    pub turns: f64,
}

impl Default for SwissRollSpec {
    /// One full turn per arm with noise 0.02.
    fn default() -> Self {
        SwissRollSpec {
            noise_sd: 0.02,
            turns: 1.0,
        }
    }
}

/// Two interleaved spirals, one per class.
///
/// Class `c` places a point at angle `t + cπ` and radius
/// `0.2 + 0.8·t/(2π·turns)` with `t ~ U[0, 2π·turns]`, then adds
/// independent Gaussian noise to each coordinate. Points alternate classes,
/// so each class gets exactly `n_points / 2`.
pub fn make_swissroll(n_points: usize, noise_sd: f64, turns: f64, seed: u64) -> Result<LabeledDataset> {
    if n_points < 2 || n_points % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "swiss roll needs an even number of points >= 2, got {n_points}"
        )));
    }
    if !(noise_sd >= 0.0) || !(turns > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "invalid swiss roll noise {noise_sd} or turns {turns}"
        )));
    }
    let mut rng = Rng::new(seed);
    let span = TAU * turns;
    let mut points = Vec::with_capacity(n_points);
    let mut labels = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let class = i % 2;
        let t = rng.uniform() * span;
        let r = 0.2 + 0.8 * t / span;
        let angle = t + class as f64 * PI;
        let mut p = [r * angle.cos(), r * angle.sin()];
        if noise_sd > 0.0 {
            p[0] += noise_sd * rng.gaussian();
            p[1] += noise_sd * rng.gaussian();
        }
        points.push(p);
        labels.push(class);
    }
    LabeledDataset::new(points, labels, Role::Train)
}

/// Four concentric rings with alternating labels: class 0 on `radii[0]` and
/// `radii[2]`, class 1 on `radii[1]` and `radii[3]`. The gap
/// `radii[1] - radii[2]` is the margin that the counterfactual experiment
/// pinches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RingsSpec {
    pub n_per_ring: usize,
    pub radii: [f64; 4],
    pub noise_sd: f64,
}

impl RingsSpec {
    pub const WIDE_GAP: f64 = 0.25;
    pub const PINCHED_GAP: f64 = 0.03;

    /// Radii `(1.0, 0.7, 0.7 - gap, 0.2)`.
    pub fn with_gap(gap: f64) -> Self {
        RingsSpec {
            n_per_ring: 150,
            radii: [1.0, 0.7, 0.7 - gap, 0.2],
            noise_sd: 0.01,
        }
    }

    pub fn wide() -> Self {
        RingsSpec::with_gap(Self::WIDE_GAP)
    }

    pub fn pinched() -> Self {
        RingsSpec::with_gap(Self::PINCHED_GAP)
    }

    pub fn gap(&self) -> f64 {
        self.radii[1] - self.radii[2]
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_ring == 0 {
            return Err(Error::InvalidArgument("rings need at least one point per ring".into()));
        }
        let r = self.radii;
        if !(r[3] > 0.0 && r[0] > r[1] && r[1] > r[2] && r[2] > r[3]) {
            return Err(Error::InvalidArgument(format!(
                "ring radii must be positive and strictly decreasing, got {r:?}"
            )));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::InvalidArgument(format!("negative noise {}", self.noise_sd)));
        }
        Ok(())
    }

    fn generate(&self, counts: [usize; 4], rng: &mut Rng) -> Result<LabeledDataset> {
        self.validate()?;
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (ring, (&radius, &count)) in self.radii.iter().zip(&counts).enumerate() {
            for _ in 0..count {
                let angle = rng.uniform() * TAU;
                let mut p = [radius * angle.cos(), radius * angle.sin()];
                if self.noise_sd > 0.0 {
                    p[0] += self.noise_sd * rng.gaussian();
                    p[1] += self.noise_sd * rng.gaussian();
                }
                points.push(p);
                labels.push(ring % 2);
            }
        }
        LabeledDataset::new(points, labels, Role::Train)
    }
}

impl Default for RingsSpec {
    fn default() -> Self {
        RingsSpec::wide()
    }
}

pub fn make_rings(spec: &RingsSpec, seed: u64) -> Result<LabeledDataset> {
    spec.generate([spec.n_per_ring; 4], &mut Rng::new(seed))
}

/// A generative process for labelled points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GeneratorSpec {
    SwissRoll(SwissRollSpec),
    Rings(RingsSpec),
}

impl GeneratorSpec {
    /// `n` points from the process; rings spread `n` as evenly as possible
    /// over the four rings (ignoring `n_per_ring`).
    pub fn generate(&self, n: usize, seed: u64) -> Result<LabeledDataset> {
        match self {
            GeneratorSpec::SwissRoll(s) => make_swissroll(n, s.noise_sd, s.turns, seed),
            GeneratorSpec::Rings(spec) => {
                if n == 0 {
                    return Err(Error::Empty);
                }
                let mut counts = [n / 4; 4];
                for c in counts.iter_mut().take(n % 4) {
                    *c += 1;
                }
                spec.generate(counts, &mut Rng::new(seed))
            }
        }
    }
}

/// Stratified split: each class contributes `round(fraction · count)` points
/// to the training side. Both sides are shuffled.
pub fn split(ds: &LabeledDataset, train_fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut rng = Rng::new(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..2 {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        rng.shuffle(&mut idx);
        let take = (train_fraction * idx.len() as f64).round() as usize;
        train.extend_from_slice(&idx[..take]);
        test.extend_from_slice(&idx[take..]);
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "fraction {train_fraction} leaves one side of a {}-point split empty",
            ds.len()
        )));
    }
    rng.shuffle(&mut train);
    rng.shuffle(&mut test);
    Ok((ds.select(&train, Role::Train)?, ds.select(&test, Role::Test)?))
}

/// Fresh, correctly labelled draws from `generator`. The caller supplies a
/// seed distinct from the one that produced the train/test pool.
pub fn sample_poison_set(generator: &GeneratorSpec, n_poison: usize, seed: u64) -> Result<LabeledDataset> {
    if n_poison == 0 {
        return Err(Error::InvalidArgument("poison set needs at least one point".into()));
    }
    Ok(generator.generate(n_poison, seed)?.with_role(Role::Poison))
}

/// Train, test and (optionally) poison sets for one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub poison: Option<LabeledDataset>,
}

/// Everything needed to regenerate an [`ExperimentData`] bit-exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DataSpec {
    pub generator: GeneratorSpec,
    pub n_train: usize,
    pub n_test: usize,
    pub n_poison: usize,
    pub seed: u64,
}

impl DataSpec {
    /// 100 train / 400 test / 100 poison swiss-roll points.
    ///
    /// A bad minimum must isolate every training point from its poisoned
    /// neighbours, which gets much harder for the default network as the
    /// training set grows; 100 points still pin down a well generalizing
    /// clean solution.
    pub fn swissroll(seed: u64) -> Self {
        DataSpec {
            generator: GeneratorSpec::SwissRoll(SwissRollSpec::default()),
            n_train: 100,
            n_test: 400,
            n_poison: 100,
            seed,
        }
    }

    /// 300 train / 300 test rings points, no poison set.
    ///
    /// With 50 training points per ring the wide configuration still fits
    /// perfectly but misses up to 6% of test points near the inner rings.
    pub fn rings(spec: RingsSpec, seed: u64) -> Self {
        DataSpec {
            generator: GeneratorSpec::Rings(spec),
            n_train: 300,
            n_test: 300,
            n_poison: 0,
            seed,
        }
    }

    pub fn generate(&self) -> Result<ExperimentData> {
        let total = self.n_train + self.n_test;
        let pool = self.generator.generate(total, mix(self.seed, stream::DATA))?;
        let fraction = self.n_train as f64 / total as f64;
        let (train, test) = split(&pool, fraction, mix(self.seed, stream::SPLIT))?;
        let poison = if self.n_poison > 0 {
            Some(sample_poison_set(
                &self.generator,
                self.n_poison,
                mix(self.seed, stream::POISON),
            )?)
        } else {
            None
        };
        Ok(ExperimentData { train, test, poison })
    }
}
