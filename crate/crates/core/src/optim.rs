//! Minibatch optimizers, the recorded training loop, and the poison search.
//!
//! With minibatches of size B an epoch is `ceil(|train| / B)` optimizer
//! steps. Under a poisoned objective with factor β each minibatch holds
//! `round(β·B)` poison points and `B - round(β·B)` clean points, each drawn
//! from its own reshuffled cyclic stream; the two sub-batches are averaged
//! separately and weighted by `1-β` and `β`. An empty sub-batch contributes
//! nothing.
//!
//! A full-batch epoch is a single step on the whole training set (and the
//! whole poison set), i.e. exact gradient descent on the objective.

use std::f64::consts::PI;
use std::fmt;

use crate::datasets::{ExperimentData, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{self, init_params, Batch, Matrix, MlpArch, ParamVector};
use crate::objective::{self, ObjectiveSpec};
use crate::rng::{mix, stream, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Sgd,
    Momentum,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Momentum => "momentum",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "momentum" => Ok(OptimizerKind::Momentum),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::InvalidArgument(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Points per optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BatchSize {
    /// Every training point (and every poison point) in every step.
    Full,
    Mini(usize),
}

impl fmt::Display for BatchSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BatchSize::Full => f.write_str("full"),
            BatchSize::Mini(b) => write!(f, "{b}"),
        }
    }
}

impl std::str::FromStr for BatchSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(BatchSize::Full),
            _ => s
                .parse()
                .map(BatchSize::Mini)
                .map_err(|_| Error::InvalidArgument(format!("batch size {s:?} is neither `full` nor a count"))),
        }
    }
}

/// How the step size evolves over a run of `T` steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Schedule {
    Constant,
    /// `η_t = η · (1 + cos(π t / T)) / 2` for steps `t = 0..T`.
    Cosine,
}

impl Schedule {
    pub fn name(self) -> &'static str {
        match self {
            Schedule::Constant => "constant",
            Schedule::Cosine => "cosine",
        }
    }

    /// Learning rate of step `t` out of `total`.
    pub fn rate(self, base: f64, t: u64, total: u64) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Cosine => base * 0.5 * (1.0 + (PI * t as f64 / total.max(1) as f64).cos()),
        }
    }
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "cosine" => Ok(Schedule::Cosine),
            other => Err(Error::InvalidArgument(format!("unknown schedule {other:?}"))),
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub objective: ObjectiveSpec,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub momentum_coef: f64,
    pub batch_size: BatchSize,
    pub schedule: Schedule,
    pub epochs: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Plain SGD, constant η = 0.05, batch 40, 3000 epochs, checkpoint
    /// every 10.
    pub fn clean(seed: u64) -> Self {
        TrainConfig {
            objective: ObjectiveSpec::Clean,
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.05,
            momentum_coef: 0.9,
            batch_size: BatchSize::Mini(40),
            schedule: Schedule::Constant,
            epochs: 3000,
            checkpoint_every: 10,
            seed,
        }
    }

    /// Same as [`TrainConfig::clean`] but minimizing the poisoned loss.
    pub fn poisoned(beta: f64, seed: u64) -> Self {
        TrainConfig {
            objective: ObjectiveSpec::Poisoned { beta },
            ..TrainConfig::clean(seed)
        }
    }

    /// The poison optimizer: full-batch Adam, η = 0.001 with cosine decay,
    /// 120000 epochs, checkpoint every 1000.
    ///
    /// Minibatch SGD on the poisoned loss flips the whole decision region
    /// within a few epochs and then fits the training points back far too
    /// slowly for a network of this size; exact gradients with a decaying
    /// step reach near-zero training loss.
    pub fn poison_optimizer(beta: f64, seed: u64) -> Self {
        TrainConfig {
            objective: ObjectiveSpec::Poisoned { beta },
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.001,
            batch_size: BatchSize::Full,
            schedule: Schedule::Cosine,
            epochs: 120_000,
            checkpoint_every: 1000,
            ..TrainConfig::clean(seed)
        }
    }

    pub fn validate(&self, train_len: usize) -> Result<()> {
        self.objective.validate()?;
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum_coef) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum_coef));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint interval must be at least 1".into());
        }
        if let BatchSize::Mini(b) = self.batch_size {
            if b == 0 || b > train_len {
                return bad(format!("batch size {b} must be in 1..={train_len}"));
            }
        }
        Ok(())
    }

    /// (clean, poison) sample counts of one minibatch, or `None` for full
    /// batches.
    pub fn minibatch_split(&self) -> Option<(usize, usize)> {
        let BatchSize::Mini(b) = self.batch_size else {
            return None;
        };
        let poison = (self.objective.beta() * b as f64).round() as usize;
        Some((b - poison, poison))
    }

    fn uses_poison(&self) -> bool {
        match self.minibatch_split() {
            Some((_, poison)) => poison > 0,
            None => self.objective.beta() > 0.0,
        }
    }
}

/// Optimizer buffers: momentum velocity, or Adam's first and second moments.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, len: usize) -> Self {
        let (first, second) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Momentum => (vec![0.0; len], Vec::new()),
            OptimizerKind::Adam => (vec![0.0; len], vec![0.0; len]),
        };
        OptimizerState {
            kind,
            first,
            second,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// Applies one update in place.
///
/// * SGD: `θ ← θ - η g`
/// * momentum: `v ← μ v - η g`, `θ ← θ + v`
/// * Adam: bias-corrected moments with (0.9, 0.999, 1e-8).
///
/// Nothing is modified if any updated coordinate would be non-finite.
pub fn step(
    state: &mut OptimizerState,
    params: &mut ParamVector,
    grad: &ParamVector,
    config: &TrainConfig,
) -> Result<()> {
    step_with_rate(state, params, grad, config, config.learning_rate)
}

fn step_with_rate(
    state: &mut OptimizerState,
    params: &mut ParamVector,
    grad: &ParamVector,
    config: &TrainConfig,
    lr: f64,
) -> Result<()> {
    if grad.len() != params.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries, parameters {}",
            grad.len(),
            params.len()
        )));
    }
    if state.kind != config.optimizer {
        return Err(Error::InvalidArgument(format!(
            "optimizer state is {} but config asks for {}",
            state.kind.name(),
            config.optimizer.name()
        )));
    }
    let theta = params.as_slice();
    let g = grad.as_slice();
    let mut next = theta.to_vec();
    let mut first = state.first.clone();
    let mut second = state.second.clone();
    match state.kind {
        OptimizerKind::Sgd => {
            for (p, gi) in next.iter_mut().zip(g) {
                *p -= lr * gi;
            }
        }
        OptimizerKind::Momentum => {
            let mu = config.momentum_coef;
            for ((p, v), gi) in next.iter_mut().zip(first.iter_mut()).zip(g) {
                *v = mu * *v - lr * gi;
                *p += *v;
            }
        }
        OptimizerKind::Adam => {
            let t = (state.steps + 1) as i32;
            let c1 = 1.0 - ADAM_BETA1.powi(t);
            let c2 = 1.0 - ADAM_BETA2.powi(t);
            for (((p, m), v), gi) in next.iter_mut().zip(first.iter_mut()).zip(second.iter_mut()).zip(g) {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * gi;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * gi * gi;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            }
        }
    }
    if let Some(coordinate) = next.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteUpdate { coordinate });
    }
    params.as_mut_slice().copy_from_slice(&next);
    state.first = first;
    state.second = second;
    state.steps += 1;
    Ok(())
}

/// Borrowed view of the sets a run trains and evaluates on.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub train: &'a LabeledDataset,
    pub test: &'a LabeledDataset,
    pub poison: Option<&'a LabeledDataset>,
}

impl<'a> From<&'a ExperimentData> for TrainData<'a> {
    fn from(data: &'a ExperimentData) -> Self {
        TrainData {
            train: &data.train,
            test: &data.test,
            poison: data.poison.as_ref(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Clean cross entropy on the full training set.
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub params: ParamVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRun {
    pub config: TrainConfig,
    pub initial: ParamVector,
    pub checkpoints: Vec<Checkpoint>,
    pub metrics: Vec<EpochMetrics>,
    pub final_params: ParamVector,
}

impl TrainRun {
    pub fn last_metrics(&self) -> Option<&EpochMetrics> {
        self.metrics.last()
    }
}

/// Cyclic index stream, reshuffled on every wrap.
struct IndexStream {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl IndexStream {
    fn new(len: usize, mut rng: Rng) -> Self {
        let mut order: Vec<usize> = (0..len).collect();
        rng.shuffle(&mut order);
        IndexStream { order, pos: 0, rng }
    }

    fn take(&mut self, count: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.pos == self.order.len() {
                self.rng.shuffle(&mut self.order);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn gather(ds: &LabeledDataset, indices: &[usize]) -> Batch {
    let mut inputs = Vec::with_capacity(indices.len() * 2);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        inputs.extend_from_slice(&ds.points()[i]);
        labels.push(ds.labels()[i]);
    }
    Batch::new(Matrix::new(indices.len(), 2, inputs).unwrap(), labels).unwrap()
}

/// Stateful training loop shared by [`train`] and [`find_bad_minimum`].
struct Trainer<'a> {
    arch: &'a MlpArch,
    data: TrainData<'a>,
    config: TrainConfig,
    params: ParamVector,
    state: OptimizerState,
    clean_stream: IndexStream,
    poison_stream: Option<IndexStream>,
    train_batch: Batch,
    test_batch: Batch,
    poison_batch: Option<Batch>,
    total_steps: u64,
}

impl<'a> Trainer<'a> {
    fn new(arch: &'a MlpArch, data: TrainData<'a>, config: TrainConfig, start: ParamVector) -> Result<Self> {
        config.validate(data.train.len())?;
        start.validate(arch)?;
        let poison = match (config.uses_poison(), data.poison) {
            (false, _) => None,
            (true, Some(p)) => Some(p),
            (true, None) => return Err(Error::InvalidArgument("poisoned objective needs a poison set".into())),
        };
        let poison_stream = poison.map(|p| {
            IndexStream::new(
                p.len(),
                Rng::new(mix(mix(config.seed, stream::SHUFFLE), stream::POISON)),
            )
        });
        let mut trainer = Trainer {
            arch,
            data,
            clean_stream: IndexStream::new(data.train.len(), Rng::derive(config.seed, stream::SHUFFLE)),
            poison_stream,
            state: OptimizerState::new(config.optimizer, start.len()),
            train_batch: data.train.to_batch(),
            test_batch: data.test.to_batch(),
            poison_batch: poison.map(|p| p.to_batch()),
            config,
            params: start,
            total_steps: 0,
        };
        trainer.total_steps = (trainer.steps_per_epoch() * trainer.config.epochs) as u64;
        Ok(trainer)
    }

    fn steps_per_epoch(&self) -> usize {
        match self.config.batch_size {
            BatchSize::Full => 1,
            BatchSize::Mini(b) => self.data.train.len().div_ceil(b),
        }
    }

    fn full_batch_grad(&self) -> Result<ParamVector> {
        let (_, grad) = nn::loss_grad(
            self.arch,
            &self.params,
            &self.train_batch,
            self.poison_batch.as_ref(),
            self.config.objective,
        )?;
        Ok(grad)
    }

    fn minibatch_grad(&mut self, n_clean: usize, n_poison: usize) -> Result<ParamVector> {
        let beta = self.config.objective.beta();
        let clean = (n_clean > 0).then(|| gather(self.data.train, &self.clean_stream.take(n_clean)));
        let poison = match (&mut self.poison_stream, self.data.poison) {
            (Some(s), Some(ds)) if n_poison > 0 => Some(gather(ds, &s.take(n_poison))),
            _ => None,
        };
        let (objective, scale) = match (&clean, &poison) {
            (Some(_), Some(_)) => (self.config.objective, 1.0),
            (Some(_), None) => (ObjectiveSpec::Clean, 1.0 - beta),
            (None, Some(_)) => (ObjectiveSpec::Poisoned { beta: 1.0 }, beta),
            (None, None) => unreachable!("batch size is at least 1"),
        };
        let placeholder;
        let train_part = match &clean {
            Some(b) => b,
            None => {
                placeholder = poison.clone().unwrap();
                &placeholder
            }
        };
        let (_, mut grad) = nn::loss_grad(self.arch, &self.params, train_part, poison.as_ref(), objective)?;
        if scale != 1.0 {
            grad.as_mut_slice().iter_mut().for_each(|g| *g *= scale);
        }
        Ok(grad)
    }

    fn run_epoch(&mut self) -> Result<()> {
        for _ in 0..self.steps_per_epoch() {
            let grad = match self.config.minibatch_split() {
                None => self.full_batch_grad()?,
                Some((n_clean, n_poison)) => self.minibatch_grad(n_clean, n_poison)?,
            };
            let lr = self
                .config
                .schedule
                .rate(self.config.learning_rate, self.state.steps(), self.total_steps);
            step_with_rate(&mut self.state, &mut self.params, &grad, &self.config, lr)?;
        }
        Ok(())
    }

    fn metrics(&self, epoch: usize) -> Result<EpochMetrics> {
        let classes = self.arch.num_classes();
        let params = self.params.as_slice();
        let train_probs = nn::probabilities_unchecked(self.arch, params, self.train_batch.inputs());
        let test_probs = nn::probabilities_unchecked(self.arch, params, self.test_batch.inputs());
        Ok(EpochMetrics {
            epoch,
            train_loss: objective::mean_cross_entropy(&train_probs, self.train_batch.labels(), classes),
            train_acc: objective::accuracy_of(&train_probs, self.train_batch.labels(), classes),
            test_acc: objective::accuracy_of(&test_probs, self.test_batch.labels(), classes),
        })
    }
}

/// Trains from `init_params(arch, config.seed)`.
pub fn train(arch: &MlpArch, data: TrainData<'_>, config: &TrainConfig) -> Result<TrainRun> {
    train_from(arch, data, config, init_params(arch, config.seed))
}

/// Trains from explicit starting parameters.
///
/// Checkpoints are taken at every multiple of `checkpoint_every` and at the
/// final epoch; metrics are recorded after every epoch on the clean loss. On
/// divergence the error carries the run recorded so far.
pub fn train_from(arch: &MlpArch, data: TrainData<'_>, config: &TrainConfig, initial: ParamVector) -> Result<TrainRun> {
    let mut trainer = Trainer::new(arch, data, config.clone(), initial.clone())?;
    let mut run = TrainRun {
        config: config.clone(),
        initial,
        checkpoints: Vec::new(),
        metrics: Vec::with_capacity(config.epochs),
        final_params: trainer.params.clone(),
    };
    for epoch in 1..=config.epochs {
        let outcome = trainer.run_epoch().and_then(|()| trainer.metrics(epoch));
        let metrics = match outcome {
            Ok(m) if m.train_loss.is_finite() => m,
            Ok(_) => return Err(diverged(epoch, None, run)),
            Err(Error::NonFiniteUpdate { coordinate }) => return Err(diverged(epoch, Some(coordinate), run)),
            Err(e) => return Err(e),
        };
        run.metrics.push(metrics);
        run.final_params = trainer.params.clone();
        if epoch % config.checkpoint_every == 0 || epoch == config.epochs {
            run.checkpoints.push(Checkpoint {
                epoch,
                params: trainer.params.clone(),
            });
        }
    }
    Ok(run)
}

fn diverged(epoch: usize, coordinate: Option<usize>, partial: TrainRun) -> Error {
    Error::Diverged {
        epoch,
        coordinate,
        partial: Box::new(partial),
    }
}

/// When the poison search may stop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopSpec {
    pub min_train_acc: f64,
    pub max_test_acc: f64,
    /// Optionally also require the clean training loss to be at most this,
    /// e.g. below a basin cutoff so the result can be measured as a minimum.
    pub max_train_loss: Option<f64>,
    pub max_epochs: usize,
    /// Epochs between evaluations of the thresholds.
    pub check_every: usize,
}

impl Default for StopSpec {
    fn default() -> Self {
        StopSpec {
            min_train_acc: 0.995,
            max_test_acc: 0.60,
            max_train_loss: None,
            max_epochs: 120_000,
            check_every: 100,
        }
    }
}

impl StopSpec {
    fn satisfied(&self, m: &EpochMetrics) -> bool {
        m.train_acc >= self.min_train_acc
            && m.test_acc <= self.max_test_acc
            && self.max_train_loss.map_or(true, |cap| m.train_loss <= cap)
    }
}

/// Settings of the poison optimizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoisonSearch {
    pub beta: f64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub momentum_coef: f64,
    pub batch_size: BatchSize,
    /// Decays over `stop.max_epochs`.
    pub schedule: Schedule,
    pub stop: StopSpec,
    pub seed: u64,
}

impl PoisonSearch {
    /// β = 0.9 with the settings of [`TrainConfig::poison_optimizer`].
    pub fn new(seed: u64) -> Self {
        let c = TrainConfig::poison_optimizer(0.9, seed);
        PoisonSearch {
            beta: 0.9,
            optimizer: c.optimizer,
            learning_rate: c.learning_rate,
            momentum_coef: c.momentum_coef,
            batch_size: c.batch_size,
            schedule: c.schedule,
            stop: StopSpec::default(),
            seed,
        }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            objective: ObjectiveSpec::Poisoned { beta: self.beta },
            optimizer: self.optimizer,
            learning_rate: self.learning_rate,
            momentum_coef: self.momentum_coef,
            batch_size: self.batch_size,
            schedule: self.schedule,
            epochs: self.stop.max_epochs.max(1),
            checkpoint_every: self.stop.max_epochs.max(1),
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BadMinimum {
    pub params: ParamVector,
    pub metrics: EpochMetrics,
    /// Euclidean distance from the starting point.
    pub distance: f64,
}

/// Runs the poison optimizer from `start` and returns the first checked
/// epoch's parameters that fit the training set while failing the test set,
/// as judged by `search.stop`. The final epoch is always checked.
pub fn find_bad_minimum(
    arch: &MlpArch,
    start: &ParamVector,
    data: TrainData<'_>,
    search: &PoisonSearch,
) -> Result<BadMinimum> {
    // β = 0 is accepted; it degenerates to clean training and ends in NotFound.
    ObjectiveSpec::poisoned(search.beta)?;
    let config = search.train_config();
    let mut trainer = Trainer::new(arch, data, config, start.clone())?;
    let mut best_train = 0.0f64;
    let mut best_test = 1.0f64;
    for epoch in 1..=search.stop.max_epochs {
        trainer.run_epoch().map_err(|e| match e {
            Error::NonFiniteUpdate { coordinate } => Error::Diverged {
                epoch,
                coordinate: Some(coordinate),
                partial: Box::new(TrainRun {
                    config: search.train_config(),
                    initial: start.clone(),
                    checkpoints: Vec::new(),
                    metrics: Vec::new(),
                    final_params: trainer.params.clone(),
                }),
            },
            other => other,
        })?;
        if epoch % search.stop.check_every.max(1) != 0 && epoch != search.stop.max_epochs {
            continue;
        }
        let m = trainer.metrics(epoch)?;
        best_train = best_train.max(m.train_acc);
        best_test = best_test.min(m.test_acc);
        if search.stop.satisfied(&m) {
            return Ok(BadMinimum {
                distance: trainer.params.distance(start),
                params: trainer.params,
                metrics: m,
            });
        }
    }
    Err(Error::NotFound {
        epochs: search.stop.max_epochs,
        best_train_acc: best_train,
        best_test_acc: best_test,
    })
}
