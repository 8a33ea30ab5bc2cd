//! The `basinscope` command line.
//!
//! Every subcommand writes its outputs into `--out` and is deterministic
//! given its flags: rerunning it overwrites the outputs with identical
//! bytes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use basinscope::datasets::{DataSpec, ExperimentData, GeneratorSpec, RingsSpec, SwissRollSpec};
use basinscope::embed::TsneConfig;
use basinscope::landscape::{
    basin_samples, grid_points, log_volume, plane_slice, ray_profile, DirectionSampler, NetLoss, Normalization,
    RadiusSearch,
};
use basinscope::objective::ObjectiveSpec;
use basinscope::optim::{
    find_bad_minimum, train, BatchSize, OptimizerKind, PoisonSearch, Schedule, StopSpec, TrainConfig,
};
use basinscope::{Activation, Error, MlpArch};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::boundary::{decision_boundary, margin_estimate, render_ppm, Domain};
use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, StoredParams};
use crate::experiments::{self, EmbedSettings, Protocol};
use crate::manifest::{ManifestError, RunManifest};
use crate::table::{fmt_f64, CsvFile};

#[derive(Debug, Parser)]
#[command(
    name = "basinscope",
    version,
    about = "Train toy classifiers and measure their loss basins"
)]
pub struct Cli {
    /// Seed of every random draw (data, initialization, shuffling, directions).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Directory for all outputs; created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network; writes checkpoints, metrics.csv and manifest.txt.
    Train(TrainArgs),
    /// Search for a bad minimum from a checkpoint; writes bad.bscp and poison.csv.
    Poison(PoisonArgs),
    /// Loss along a random ray or over a random plane; writes slice.csv.
    Slice(SliceArgs),
    /// Basin radii and log volume; writes basin_samples.csv and volume.csv.
    Volume(VolumeArgs),
    /// Test accuracy and basin size across poison factors; writes sweep.csv.
    Sweep(SweepArgs),
    /// Embed a training trajectory with nearby bad minima; writes embedding.csv.
    Embed(EmbedArgs),
    /// Decision boundary of a checkpoint; writes boundary.csv, boundary.ppm and margin.csv.
    Boundary(BoundaryArgs),
    /// Clean training on four rings with a given inner gap; writes rings.csv,
    /// boundary.ppm, final.bscp and manifest.txt.
    Rings(RingsArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DataKind {
    Swissroll,
    Rings,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Take the data set from a run manifest instead of the flags below.
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "swissroll")]
    pub data: DataKind,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub n_poison: Option<usize>,
    /// Standard deviation of the coordinate noise.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Swiss-roll turns per arm.
    #[arg(long)]
    pub turns: Option<f64>,
    /// Rings gap between the two inner rings.
    #[arg(long)]
    pub gap: Option<f64>,
}

impl DataArgs {
    fn spec(&self, seed: u64) -> Result<DataSpec, CliError> {
        if let Some(path) = &self.run {
            return Ok(RunManifest::load(path)?.data);
        }
        let mut spec = match self.data {
            DataKind::Swissroll => {
                let mut s = SwissRollSpec::default();
                s.noise_sd = self.noise.unwrap_or(s.noise_sd);
                s.turns = self.turns.unwrap_or(s.turns);
                DataSpec {
                    generator: GeneratorSpec::SwissRoll(s),
                    ..DataSpec::swissroll(seed)
                }
            }
            DataKind::Rings => {
                let mut r = RingsSpec::with_gap(self.gap.unwrap_or(RingsSpec::WIDE_GAP));
                r.noise_sd = self.noise.unwrap_or(r.noise_sd);
                DataSpec::rings(r, seed)
            }
        };
        spec.n_train = self.n_train.unwrap_or(spec.n_train);
        spec.n_test = self.n_test.unwrap_or(spec.n_test);
        spec.n_poison = self.n_poison.unwrap_or(spec.n_poison);
        Ok(spec)
    }
}

#[derive(Debug, Clone, Args)]
pub struct NetArgs {
    /// Layer widths from input to output.
    #[arg(long, value_delimiter = ',', default_value = "2,16,16,16,16,16,2")]
    pub widths: Vec<usize>,
    #[arg(long, default_value = "tanh")]
    pub activation: Activation,
}

impl NetArgs {
    fn arch(&self) -> Result<MlpArch, CliError> {
        Ok(MlpArch::new(self.widths.clone(), self.activation)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveKind {
    Clean,
    Poisoned,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long, value_enum, default_value = "clean")]
    pub objective: ObjectiveKind,
    /// Poison factor of the poisoned objective.
    #[arg(long, default_value_t = 0.9)]
    pub beta: f64,
    #[arg(long, default_value = "sgd")]
    pub optimizer: OptimizerKind,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Points per step, or `full`.
    #[arg(long, default_value = "40")]
    pub batch_size: BatchSize,
    #[arg(long, default_value = "constant")]
    pub schedule: Schedule,
    #[arg(long, default_value_t = 3000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub checkpoint_every: usize,
    /// Record the run time in the manifest (makes reruns differ).
    #[arg(long)]
    pub record_wall_clock: bool,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long, default_value_t = 0.9)]
    pub beta: f64,
    #[arg(long, default_value = "adam")]
    pub optimizer: OptimizerKind,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value = "full")]
    pub batch_size: BatchSize,
    #[arg(long, default_value = "cosine")]
    pub schedule: Schedule,
    #[arg(long, default_value_t = 120_000)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub check_every: usize,
    #[arg(long, default_value_t = 0.995)]
    pub min_train_acc: f64,
    #[arg(long, default_value_t = 0.60)]
    pub max_test_acc: f64,
    /// Also require the clean training loss to be at most this.
    #[arg(long)]
    pub max_train_loss: Option<f64>,
}

impl SearchArgs {
    fn search(&self, seed: u64) -> PoisonSearch {
        PoisonSearch {
            beta: self.beta,
            optimizer: self.optimizer,
            learning_rate: self.lr,
            momentum_coef: self.momentum,
            batch_size: self.batch_size,
            schedule: self.schedule,
            stop: StopSpec {
                min_train_acc: self.min_train_acc,
                max_test_acc: self.max_test_acc,
                max_train_loss: self.max_train_loss,
                max_epochs: self.max_epochs,
                check_every: self.check_every,
            },
            seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct PoisonArgs {
    /// Checkpoint to start from.
    #[arg(long)]
    pub start: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub search: SearchArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SliceMode {
    Ray,
    Plane,
}

/// `lo,hi`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval(pub f64, pub f64);

impl std::str::FromStr for Interval {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("expected lo,hi with lo < hi, got {s:?}");
        let (a, b) = s.split_once(',').ok_or_else(bad)?;
        let (lo, hi) = (
            a.trim().parse::<f64>().map_err(|_| bad())?,
            b.trim().parse::<f64>().map_err(|_| bad())?,
        );
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(bad());
        }
        Ok(Interval(lo, hi))
    }
}

#[derive(Debug, Args)]
pub struct SliceArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "ray")]
    pub mode: SliceMode,
    #[arg(long, default_value = "filter")]
    pub normalization: Normalization,
    /// Step range along each direction.
    #[arg(long, default_value = "-1,1", allow_hyphen_values = true)]
    pub range: Interval,
    /// Points per direction.
    #[arg(long, default_value_t = 51)]
    pub resolution: usize,
}

#[derive(Debug, Args)]
pub struct RadiusArgs {
    #[arg(long, default_value_t = 0.1)]
    pub cutoff: f64,
    #[arg(long, default_value_t = 3000)]
    pub directions: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e3)]
    pub max_radius: f64,
}

impl RadiusArgs {
    fn search(&self) -> RadiusSearch {
        RadiusSearch {
            cutoff: self.cutoff,
            tol: self.tol,
            max_radius: self.max_radius,
        }
    }
}

#[derive(Debug, Args)]
pub struct VolumeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub radius: RadiusArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4,0.6,0.8,0.9")]
    pub betas: Vec<f64>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub radius: RadiusArgs,
    /// Epoch budget of each minimization.
    #[arg(long, default_value_t = experiments::SWEEP_EPOCHS)]
    pub max_epochs: usize,
    /// Training accuracy that counts as fitting the training set.
    #[arg(long, default_value_t = 0.99)]
    pub min_train_acc: f64,
    /// Training loss that counts as converged.
    #[arg(long, default_value_t = 0.05)]
    pub max_train_loss: f64,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Manifest of a `train` run whose checkpoints form the trajectory.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub bad_per_iterate: usize,
    /// Number of evenly spaced checkpoints to start poison searches from.
    #[arg(long, default_value_t = 10)]
    pub iterates: usize,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 50)]
    pub pca: usize,
    #[arg(long, default_value_t = 1000)]
    pub tsne_iterations: usize,
    #[command(flatten)]
    pub search: SearchArgs,
}

#[derive(Debug, Args)]
pub struct BoundaryArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// `x0,x1,y0,y1`
    #[arg(long, default_value = "-1.2,1.2,-1.2,1.2", allow_hyphen_values = true)]
    pub domain: Domain,
    /// Cells per axis.
    #[arg(long, default_value_t = 200)]
    pub resolution: usize,
}

#[derive(Debug, Args)]
pub struct RingsArgs {
    /// Gap between the two inner rings.
    #[arg(long, default_value_t = RingsSpec::WIDE_GAP)]
    pub gap: f64,
    /// Cells per axis of the boundary grid.
    #[arg(long, default_value_t = 200)]
    pub resolution: usize,
    #[arg(long)]
    pub record_wall_clock: bool,
}

/// A failure with its exit code.
#[derive(Debug)]
pub enum CliError {
    /// Invalid flag combination not caught by the parser: exit 2.
    Usage(String),
    /// Bad inputs or files: exit 3.
    Precondition(String),
    /// NaN or divergence: exit 4.
    Numeric(String),
    /// Poison search budget exhausted: exit 5.
    NotFound(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Precondition(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::NotFound(_) => 5,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Precondition(m) | CliError::Numeric(m) | CliError::NotFound(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NotFound { .. } => CliError::NotFound(e.to_string()),
            e if e.is_numeric() => CliError::Numeric(e.to_string()),
            e => CliError::Precondition(e.to_string()),
        }
    }
}

impl From<ManifestError> for CliError {
    fn from(e: ManifestError) -> Self {
        match e {
            ManifestError::Invalid(inner) => inner.into(),
            e => CliError::Precondition(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Precondition(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Precondition(format!("i/o error: {e}"))
    }
}

/// Parses `args`, runs the subcommand and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    fs::create_dir_all(&cli.out)?;
    match &cli.command {
        Command::Train(a) => cmd_train(cli, a),
        Command::Poison(a) => cmd_poison(cli, a),
        Command::Slice(a) => cmd_slice(cli, a),
        Command::Volume(a) => cmd_volume(cli, a),
        Command::Sweep(a) => cmd_sweep(cli, a),
        Command::Embed(a) => cmd_embed(cli, a),
        Command::Boundary(a) => cmd_boundary(cli, a),
        Command::Rings(a) => cmd_rings(cli, a),
    }
}

fn checkpoint_name(epoch: usize) -> String {
    format!("checkpoints/epoch_{epoch:06}.bscp")
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let arch = a.net.arch()?;
    let spec = a.data.spec(cli.seed)?;
    let objective = match a.objective {
        ObjectiveKind::Clean => ObjectiveSpec::Clean,
        ObjectiveKind::Poisoned => ObjectiveSpec::poisoned(a.beta)?,
    };
    let config = TrainConfig {
        objective,
        optimizer: a.optimizer,
        learning_rate: a.lr,
        momentum_coef: a.momentum,
        batch_size: a.batch_size,
        schedule: a.schedule,
        epochs: a.epochs,
        checkpoint_every: a.checkpoint_every,
        seed: cli.seed,
    };
    let data = spec.generate()?;
    let run = train(&arch, (&data).into(), &config)?;

    let mut manifest = RunManifest::new("train", arch.clone(), spec, config);
    fs::create_dir_all(cli.out.join("checkpoints"))?;
    for c in &run.checkpoints {
        let name = checkpoint_name(c.epoch);
        save_checkpoint(cli.out.join(&name), &arch, &c.params, cli.seed)?;
        manifest.files.insert(format!("ckpt_{:06}", c.epoch), name);
    }
    save_checkpoint(cli.out.join("final.bscp"), &arch, &run.final_params, cli.seed)?;
    manifest.files.insert("final".into(), "final.bscp".into());

    let mut csv = CsvFile::create(
        cli.out.join("metrics.csv"),
        &["epoch", "train_loss", "train_acc", "test_acc"],
    )?;
    for m in &run.metrics {
        csv.row([
            m.epoch.to_string(),
            fmt_f64(m.train_loss),
            fmt_f64(m.train_acc),
            fmt_f64(m.test_acc),
        ])?;
    }
    csv.finish()?;
    manifest.files.insert("metrics".into(), "metrics.csv".into());

    if a.record_wall_clock {
        manifest.wall_clock_secs = Some(started.elapsed().as_secs_f64());
    }
    manifest.save(cli.out.join("manifest.txt"))?;
    let last = run.last_metrics().expect("runs have at least one epoch");
    println!(
        "epoch {}: train loss {:.4e}, train acc {:.4}, test acc {:.4}",
        last.epoch, last.train_loss, last.train_acc, last.test_acc
    );
    Ok(())
}

fn load(path: &Path) -> Result<StoredParams, CliError> {
    load_checkpoint(path).map_err(|e| CliError::Precondition(format!("{}: {e}", path.display())))
}

fn cmd_poison(cli: &Cli, a: &PoisonArgs) -> Result<(), CliError> {
    let start = load(&a.start)?;
    let data = a.data.spec(cli.seed)?.generate()?;
    let search = a.search.search(cli.seed);
    let bad = find_bad_minimum(&start.arch, &start.params, (&data).into(), &search)?;
    save_checkpoint(cli.out.join("bad.bscp"), &start.arch, &bad.params, cli.seed)?;
    let mut csv = CsvFile::create(
        cli.out.join("poison.csv"),
        &["epoch", "train_loss", "train_acc", "test_acc", "distance"],
    )?;
    let m = bad.metrics;
    csv.row([
        m.epoch.to_string(),
        fmt_f64(m.train_loss),
        fmt_f64(m.train_acc),
        fmt_f64(m.test_acc),
        fmt_f64(bad.distance),
    ])?;
    csv.finish()?;
    println!(
        "bad minimum at epoch {}: train acc {:.4}, test acc {:.4}, distance {:.4}",
        m.epoch, m.train_acc, m.test_acc, bad.distance
    );
    Ok(())
}

fn checkpoint_and_data(cli: &Cli, ckpt: &Path, data: &DataArgs) -> Result<(StoredParams, ExperimentData), CliError> {
    let stored = load(ckpt)?;
    let data = data.spec(cli.seed)?.generate()?;
    Ok((stored, data))
}

fn cmd_slice(cli: &Cli, a: &SliceArgs) -> Result<(), CliError> {
    let (stored, data) = checkpoint_and_data(cli, &a.ckpt, &a.data)?;
    if a.resolution < 2 {
        return Err(CliError::Usage("--resolution must be at least 2".into()));
    }
    let surface = NetLoss::new(&stored.arch, &data.train)?;
    let sampler = DirectionSampler {
        arch: Some(&stored.arch),
        normalization: a.normalization,
        base_seed: cli.seed,
    };
    let center = stored.params.as_slice();
    let d1 = sampler.sample(center, 0)?;
    let ts = grid_points(a.range.0, a.range.1, a.resolution);
    match a.mode {
        SliceMode::Ray => {
            let losses = ray_profile(&surface, center, &d1, &ts)?;
            let mut csv = CsvFile::create(cli.out.join("slice.csv"), &["t", "loss"])?;
            for (t, l) in ts.iter().zip(&losses) {
                csv.row([fmt_f64(*t), fmt_f64(*l)])?;
            }
            csv.finish()?;
        }
        SliceMode::Plane => {
            let d2 = sampler.sample(center, 1)?;
            let grid = plane_slice(&surface, center, &d1, &d2, (a.range.0, a.range.1), a.resolution)?;
            let mut csv = CsvFile::create(cli.out.join("slice.csv"), &["t", "s", "loss"])?;
            for (i, t) in grid.ts.iter().enumerate() {
                for (j, s) in grid.ss.iter().enumerate() {
                    csv.row([fmt_f64(*t), fmt_f64(*s), fmt_f64(grid.at(i, j))])?;
                }
            }
            csv.finish()?;
        }
    }
    Ok(())
}

fn cmd_volume(cli: &Cli, a: &VolumeArgs) -> Result<(), CliError> {
    let (stored, data) = checkpoint_and_data(cli, &a.ckpt, &a.data)?;
    stored.params.validate(&stored.arch)?;
    let surface = NetLoss::new(&stored.arch, &data.train)?;
    let sampler = DirectionSampler::filter(&stored.arch, cli.seed);
    let search = a.radius.search();
    let samples = basin_samples(
        &surface,
        stored.params.as_slice(),
        &sampler,
        a.radius.directions,
        &search,
    )?;

    let mut csv = CsvFile::create(
        cli.out.join("basin_samples.csv"),
        &["index", "radius", "censored", "evaluations"],
    )?;
    for s in &samples {
        csv.row([
            s.index.to_string(),
            fmt_f64(s.radius),
            s.censored.to_string(),
            s.evaluations.to_string(),
        ])?;
    }
    csv.finish()?;

    let v = log_volume(&samples, stored.arch.param_count())?;
    let mut csv = CsvFile::create(
        cli.out.join("volume.csv"),
        &[
            "n",
            "cutoff",
            "log10_volume",
            "log10_omega_n",
            "log10_mean_rn",
            "mean_radius",
            "min_radius",
            "max_radius",
            "num_directions",
            "num_censored",
        ],
    )?;
    csv.row([
        v.n.to_string(),
        fmt_f64(search.cutoff),
        fmt_f64(v.log10_volume),
        fmt_f64(v.log10_omega_n),
        fmt_f64(v.log10_mean_rn),
        fmt_f64(v.mean_radius),
        fmt_f64(v.min_radius),
        fmt_f64(v.max_radius),
        v.num_directions.to_string(),
        v.num_censored.to_string(),
    ])?;
    csv.finish()?;
    println!(
        "log10 volume {:.4} over {} directions ({} censored), mean radius {:.5}",
        v.log10_volume, v.num_directions, v.num_censored, v.mean_radius
    );
    Ok(())
}

fn cmd_sweep(cli: &Cli, a: &SweepArgs) -> Result<(), CliError> {
    if a.betas.is_empty() {
        return Err(CliError::Usage("--betas needs at least one value".into()));
    }
    let mut protocol = Protocol::swissroll(cli.seed);
    protocol.data = a.data.spec(cli.seed)?;
    protocol.search.stop.max_epochs = a.max_epochs;
    protocol.search.stop.min_train_acc = a.min_train_acc;
    protocol.search.stop.max_train_loss = Some(a.max_train_loss);
    let data = protocol.data.generate()?;
    let search = a.radius.search();
    let mut csv = CsvFile::create(
        cli.out.join("sweep.csv"),
        &["beta", "test_acc", "mean_radius", "log10_volume"],
    )?;
    for &beta in &a.betas {
        let row = experiments::sweep_point(&protocol, &data, beta, a.radius.directions, &search)?;
        println!(
            "beta {beta}: test acc {:.4}, mean radius {:.5}, log10 volume {:.2}",
            row.test_acc, row.mean_radius, row.log10_volume
        );
        csv.row([
            fmt_f64(beta),
            fmt_f64(row.test_acc),
            fmt_f64(row.mean_radius),
            fmt_f64(row.log10_volume),
        ])?;
    }
    csv.finish()?;
    Ok(())
}

fn cmd_embed(cli: &Cli, a: &EmbedArgs) -> Result<(), CliError> {
    let manifest = RunManifest::load(&a.run)?;
    let mut checkpoints = Vec::new();
    for name in manifest.files.keys() {
        let Some(epoch) = name.strip_prefix("ckpt_") else {
            continue;
        };
        let epoch: usize = epoch
            .parse()
            .map_err(|_| CliError::Precondition(format!("manifest entry {name:?} is not ckpt_<epoch>")))?;
        let path = manifest.file_path(&a.run, name).expect("key comes from the manifest");
        let stored = load(&path)?;
        if stored.arch != manifest.arch {
            return Err(CliError::Precondition(format!(
                "{} does not match the manifest's network",
                path.display()
            )));
        }
        checkpoints.push((epoch, stored.params));
    }
    checkpoints.sort_by_key(|(epoch, _)| *epoch);
    if checkpoints.is_empty() {
        return Err(CliError::Precondition("the manifest lists no checkpoints".into()));
    }
    let mut tsne = TsneConfig::new(cli.seed);
    tsne.perplexity = a.perplexity;
    tsne.iterations = a.tsne_iterations;
    tsne.exaggeration_iterations = tsne.exaggeration_iterations.min(a.tsne_iterations);
    let settings = EmbedSettings {
        iterates: a.iterates,
        bad_per_iterate: a.bad_per_iterate,
        pca_components: a.pca,
        tsne,
        search: a.search.search(cli.seed),
    };
    let result = experiments::trajectory_embedding(&manifest.arch, &manifest.data, &checkpoints, &settings)?;
    let mut csv = CsvFile::create(cli.out.join("embedding.csv"), &["tag", "source_epoch", "x", "y"])?;
    for p in &result.points {
        csv.row([
            p.tag.name().to_string(),
            p.tag.epoch().to_string(),
            fmt_f64(p.x),
            fmt_f64(p.y),
        ])?;
    }
    csv.finish()?;
    println!(
        "embedded {} points; {} searches found no bad minimum; KL rose in {} late iterations",
        result.points.len(),
        result.not_found,
        result.kl_increases
    );
    Ok(())
}

fn write_grid_csv(path: &Path, grid: &crate::boundary::BoundaryGrid) -> Result<(), CliError> {
    let mut csv = CsvFile::create(path, &["row", "col", "x", "y", "class"])?;
    for row in 0..grid.height {
        for col in 0..grid.width {
            let [x, y] = grid.cell_center(row, col);
            csv.row([
                row.to_string(),
                col.to_string(),
                fmt_f64(x),
                fmt_f64(y),
                grid.at(row, col).to_string(),
            ])?;
        }
    }
    csv.finish()?;
    Ok(())
}

fn cmd_boundary(cli: &Cli, a: &BoundaryArgs) -> Result<(), CliError> {
    let (stored, data) = checkpoint_and_data(cli, &a.ckpt, &a.data)?;
    let grid = decision_boundary(&stored.arch, &stored.params, a.domain, a.resolution, a.resolution)?;
    write_grid_csv(&cli.out.join("boundary.csv"), &grid)?;
    fs::write(
        cli.out.join("boundary.ppm"),
        render_ppm(&grid, data.train.points(), data.train.labels()),
    )?;
    let m = margin_estimate(
        &stored.arch,
        &stored.params,
        &data.train,
        a.domain,
        a.resolution,
        a.resolution,
    )?;
    let mut csv = CsvFile::create(cli.out.join("margin.csv"), &["margin", "cell_diagonal"])?;
    csv.row([fmt_f64(m.margin), fmt_f64(m.cell_diagonal)])?;
    csv.finish()?;
    println!("margin {:.4} (grid cell diagonal {:.4})", m.margin, m.cell_diagonal);
    Ok(())
}

fn cmd_rings(cli: &Cli, a: &RingsArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let outcome = experiments::rings_counterfactual(a.gap, cli.seed, a.resolution)?;
    let arch = MlpArch::toy_default();
    save_checkpoint(cli.out.join("final.bscp"), &arch, &outcome.params, cli.seed)?;
    fs::write(
        cli.out.join("boundary.ppm"),
        render_ppm(&outcome.grid, outcome.data.train.points(), outcome.data.train.labels()),
    )?;
    let mut csv = CsvFile::create(
        cli.out.join("rings.csv"),
        &["gap", "train_acc", "test_acc", "margin", "cell_diagonal"],
    )?;
    csv.row([
        fmt_f64(a.gap),
        fmt_f64(outcome.metrics.train_acc),
        fmt_f64(outcome.metrics.test_acc),
        fmt_f64(outcome.margin.margin),
        fmt_f64(outcome.margin.cell_diagonal),
    ])?;
    csv.finish()?;
    let mut manifest = RunManifest::new(
        "rings",
        arch,
        DataSpec::rings(RingsSpec::with_gap(a.gap), cli.seed),
        TrainConfig::clean(cli.seed),
    );
    for name in ["final.bscp", "boundary.ppm", "rings.csv"] {
        manifest
            .files
            .insert(name.split('.').next().unwrap().into(), name.into());
    }
    if a.record_wall_clock {
        manifest.wall_clock_secs = Some(started.elapsed().as_secs_f64());
    }
    manifest.save(cli.out.join("manifest.txt"))?;
    println!(
        "gap {}: train acc {:.4}, test acc {:.4}, margin {:.4} (cell diagonal {:.4})",
        a.gap, outcome.metrics.train_acc, outcome.metrics.test_acc, outcome.margin.margin, outcome.margin.cell_diagonal
    );
    Ok(())
}
