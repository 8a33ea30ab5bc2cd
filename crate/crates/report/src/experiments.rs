//! End-to-end recipes shared by the command line and the acceptance run:
//! good and bad minimizers, basin measurements, the poison-factor sweep,
//! the trajectory embedding and the rings counterfactual.

use basinscope::datasets::{sample_poison_set, DataSpec, ExperimentData, RingsSpec};
use basinscope::embed::{embed_parameters, EmbeddedPoint, EmbeddingInput, PointTag, TsneConfig};
use basinscope::landscape::{measure_network_basin, BasinSample, RadiusSearch, VolumeEstimate};
use basinscope::nn::init_params;
use basinscope::optim::{
    find_bad_minimum, train, BadMinimum, EpochMetrics, PoisonSearch, StopSpec, TrainConfig, TrainData, TrainRun,
};
use basinscope::rng::mix;
use basinscope::{Error, MlpArch, ParamVector, Result};

use crate::boundary::{decision_boundary, margin_estimate, BoundaryGrid, Domain, MarginEstimate};

/// Network, data and optimizers of one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Protocol {
    pub arch: MlpArch,
    pub data: DataSpec,
    pub clean: TrainConfig,
    pub search: PoisonSearch,
}

impl Protocol {
    /// The default network on the default swiss roll, clean SGD, and the
    /// poison optimizer at β = 0.9 stopping at 99% train / 60% test
    /// accuracy with a training loss low enough to sit inside a 0.1 basin.
    pub fn swissroll(seed: u64) -> Self {
        let mut search = PoisonSearch::new(seed);
        search.stop.min_train_acc = 0.99;
        search.stop.max_train_loss = Some(0.05);
        Protocol {
            arch: MlpArch::toy_default(),
            data: DataSpec::swissroll(seed),
            clean: TrainConfig::clean(seed),
            search,
        }
    }
}

/// A clean run and the poison search started from the same initialization.
#[derive(Debug)]
pub struct MinimizerPair {
    pub data: ExperimentData,
    pub clean: TrainRun,
    pub bad: Result<BadMinimum>,
}

impl MinimizerPair {
    pub fn good(&self) -> &ParamVector {
        &self.clean.final_params
    }

    pub fn good_metrics(&self) -> EpochMetrics {
        *self.clean.last_metrics().expect("runs have at least one epoch")
    }
}

pub fn good_and_bad(protocol: &Protocol) -> Result<MinimizerPair> {
    let data = protocol.data.generate()?;
    let clean = train(&protocol.arch, (&data).into(), &protocol.clean)?;
    let bad = find_bad_minimum(
        &protocol.arch,
        &init_params(&protocol.arch, protocol.clean.seed),
        (&data).into(),
        &protocol.search,
    );
    Ok(MinimizerPair { data, clean, bad })
}

/// Radii along filter-normalized directions and the resulting volume
/// estimate, with the loss taken over the training set.
#[derive(Clone, Debug, PartialEq)]
pub struct BasinMeasurement {
    pub samples: Vec<BasinSample>,
    pub volume: VolumeEstimate,
}

pub fn measure(
    arch: &MlpArch,
    params: &ParamVector,
    data: &ExperimentData,
    directions: usize,
    search: &RadiusSearch,
    seed: u64,
) -> Result<BasinMeasurement> {
    let (samples, volume) = measure_network_basin(arch, params, &data.train, seed, directions, search)?;
    Ok(BasinMeasurement { samples, volume })
}

/// One point of the generalization-versus-geometry sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub beta: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub mean_radius: f64,
    pub log10_volume: f64,
}

/// Stop rule for sweep minimizers: fit the training set, whatever the test
/// accuracy.
pub fn fit_only(stop: StopSpec) -> StopSpec {
    StopSpec {
        max_test_acc: 1.0,
        ..stop
    }
}

/// Minimizes the poisoned objective with factor `beta` from the protocol's
/// initialization until the training set is fit, then measures the basin.
/// Epoch budget of each sweep minimization. Intermediate poison factors
/// fit the training set more slowly than β = 0.9.
pub const SWEEP_EPOCHS: usize = 250_000;

pub fn sweep_point(
    protocol: &Protocol,
    data: &ExperimentData,
    beta: f64,
    directions: usize,
    radius: &RadiusSearch,
) -> Result<SweepRow> {
    let search = PoisonSearch {
        beta,
        stop: fit_only(protocol.search.stop),
        ..protocol.search
    };
    let start = init_params(&protocol.arch, protocol.clean.seed);
    let found = find_bad_minimum(&protocol.arch, &start, data.into(), &search)?;
    let m = measure(
        &protocol.arch,
        &found.params,
        data,
        directions,
        radius,
        mix(protocol.search.seed, 0x5eed),
    )?;
    Ok(SweepRow {
        beta,
        train_acc: found.metrics.train_acc,
        test_acc: found.metrics.test_acc,
        mean_radius: m.volume.mean_radius,
        log10_volume: m.volume.log10_volume,
    })
}

/// Settings of the trajectory embedding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmbedSettings {
    /// Evenly spaced checkpoints of the clean run to start poison searches
    /// from.
    pub iterates: usize,
    pub bad_per_iterate: usize,
    pub pca_components: usize,
    pub tsne: TsneConfig,
    pub search: PoisonSearch,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryEmbedding {
    pub points: Vec<EmbeddedPoint>,
    /// Searches that ended without meeting the stop rule; their final
    /// iterates are not embedded.
    pub not_found: usize,
    pub kl_increases: usize,
}

/// `count` indices spread evenly over `0..len`, always including the last.
pub fn spread(len: usize, count: usize) -> Vec<usize> {
    if len == 0 || count == 0 {
        return Vec::new();
    }
    let count = count.min(len);
    (1..=count).map(|k| k * len / count - 1).collect()
}

/// Embeds checkpoints of a clean run together with bad minima found from
/// a subset of them. The `k`-th search from an iterate draws its own poison
/// set, so repeated searches reach different minima.
pub fn trajectory_embedding(
    arch: &MlpArch,
    data_spec: &DataSpec,
    checkpoints: &[(usize, ParamVector)],
    settings: &EmbedSettings,
) -> Result<TrajectoryEmbedding> {
    let data = data_spec.generate()?;
    let Some(&(last_epoch, _)) = checkpoints.last() else {
        return Err(Error::Empty);
    };
    let mut rows = Vec::new();
    let mut tags = Vec::new();
    for (epoch, params) in checkpoints {
        rows.push(params.as_slice().to_vec());
        tags.push(if *epoch == last_epoch {
            PointTag::Final { epoch: *epoch }
        } else {
            PointTag::SgdIterate { epoch: *epoch }
        });
    }
    let mut not_found = 0;
    for i in spread(checkpoints.len(), settings.iterates) {
        let (epoch, start) = &checkpoints[i];
        for k in 0..settings.bad_per_iterate {
            let stream = mix(mix(settings.search.seed, *epoch as u64), k as u64);
            let poison = sample_poison_set(&data_spec.generator, data_spec.n_poison.max(2), stream)?;
            let search_data = TrainData {
                train: &data.train,
                test: &data.test,
                poison: Some(&poison),
            };
            let search = PoisonSearch {
                seed: stream,
                ..settings.search
            };
            match find_bad_minimum(arch, start, search_data, &search) {
                Ok(bad) => {
                    rows.push(bad.params.into_vec());
                    tags.push(PointTag::BadMinimum { source_epoch: *epoch });
                }
                Err(Error::NotFound { .. }) => not_found += 1,
                Err(e) => return Err(e),
            }
        }
    }
    let input = EmbeddingInput::new(rows, tags)?;
    let (points, result) = embed_parameters(&input, settings.pca_components, &settings.tsne)?;
    Ok(TrajectoryEmbedding {
        points,
        not_found,
        kl_increases: result.kl_increases,
    })
}

/// Domain used for every rings picture and margin.
pub fn rings_domain() -> Domain {
    Domain::square(1.2)
}

/// Outcome of clean training on one rings configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RingsOutcome {
    pub gap: f64,
    pub data: ExperimentData,
    pub params: ParamVector,
    pub metrics: EpochMetrics,
    pub margin: MarginEstimate,
    pub grid: BoundaryGrid,
}

/// Trains the default network on four rings whose inner gap is `gap` and
/// measures how close the learned boundary comes to the training points.
pub fn rings_counterfactual(gap: f64, seed: u64, resolution: usize) -> Result<RingsOutcome> {
    let arch = MlpArch::toy_default();
    let data = DataSpec::rings(RingsSpec::with_gap(gap), seed).generate()?;
    let run = train(&arch, (&data).into(), &TrainConfig::clean(seed))?;
    let params = run.final_params.clone();
    let domain = rings_domain();
    let margin = margin_estimate(&arch, &params, &data.train, domain, resolution, resolution)?;
    let grid = decision_boundary(&arch, &params, domain, resolution, resolution)?;
    Ok(RingsOutcome {
        gap,
        metrics: *run.last_metrics().expect("runs have at least one epoch"),
        data,
        params,
        margin,
        grid,
    })
}
