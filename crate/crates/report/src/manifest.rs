//! Run manifests: a flat `key = value` text file describing how a run's
//! outputs were produced.
//!
//! Floats are written with 17 significant digits, so loading a saved
//! manifest reproduces every setting bit for bit. Output files are recorded
//! relative to the manifest's directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use basinscope::datasets::{DataSpec, GeneratorSpec, RingsSpec, SwissRollSpec};
use basinscope::objective::ObjectiveSpec;
use basinscope::optim::{OptimizerKind, TrainConfig};
use basinscope::{Activation, MlpArch};

use crate::table::fmt_f64;

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("cannot access manifest: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("manifest is missing key {0:?}")]
    Missing(&'static str),
    #[error("manifest key {key:?}: cannot parse {value:?}")]
    Value { key: String, value: String },
    #[error("manifest references missing file {0}")]
    MissingFile(PathBuf),
    #[error("manifest describes an invalid run: {0}")]
    Invalid(#[from] basinscope::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub experiment: String,
    pub toolkit_version: String,
    pub arch: MlpArch,
    pub data: DataSpec,
    pub config: TrainConfig,
    /// Output name to path relative to the manifest's directory.
    pub files: BTreeMap<String, String>,
    /// Only recorded on request; it would otherwise break byte-identical
    /// reruns.
    pub wall_clock_secs: Option<f64>,
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunManifest {
    pub fn new(experiment: &str, arch: MlpArch, data: DataSpec, config: TrainConfig) -> Self {
        RunManifest {
            experiment: experiment.to_string(),
            toolkit_version: TOOLKIT_VERSION.to_string(),
            arch,
            data,
            config,
            files: BTreeMap::new(),
            wall_clock_secs: None,
        }
    }

    pub fn to_text(&self) -> String {
        let mut lines: Vec<(String, String)> = vec![
            ("experiment".into(), self.experiment.clone()),
            ("toolkit_version".into(), self.toolkit_version.clone()),
            ("arch.widths".into(), join(self.arch.widths())),
            ("arch.activation".into(), self.arch.activation().name().into()),
        ];
        match self.data.generator {
            GeneratorSpec::SwissRoll(s) => {
                lines.push(("data.generator".into(), "swissroll".into()));
                lines.push(("data.noise_sd".into(), fmt_f64(s.noise_sd)));
                lines.push(("data.turns".into(), fmt_f64(s.turns)));
            }
            GeneratorSpec::Rings(r) => {
                lines.push(("data.generator".into(), "rings".into()));
                lines.push(("data.noise_sd".into(), fmt_f64(r.noise_sd)));
                lines.push(("data.n_per_ring".into(), r.n_per_ring.to_string()));
                lines.push(("data.radii".into(), join(r.radii.iter().map(|&x| fmt_f64(x)))));
            }
        }
        let c = &self.config;
        lines.extend([
            ("data.n_train".into(), self.data.n_train.to_string()),
            ("data.n_test".into(), self.data.n_test.to_string()),
            ("data.n_poison".into(), self.data.n_poison.to_string()),
            ("data.seed".into(), self.data.seed.to_string()),
        ]);
        match c.objective {
            ObjectiveSpec::Clean => lines.push(("train.objective".into(), "clean".into())),
            ObjectiveSpec::Poisoned { beta } => {
                lines.push(("train.objective".into(), "poisoned".into()));
                lines.push(("train.beta".into(), fmt_f64(beta)));
            }
        }
        lines.extend([
            ("train.optimizer".into(), c.optimizer.name().into()),
            ("train.learning_rate".into(), fmt_f64(c.learning_rate)),
            ("train.momentum_coef".into(), fmt_f64(c.momentum_coef)),
            ("train.batch_size".into(), c.batch_size.to_string()),
            ("train.schedule".into(), c.schedule.name().into()),
            ("train.epochs".into(), c.epochs.to_string()),
            ("train.checkpoint_every".into(), c.checkpoint_every.to_string()),
            ("train.seed".into(), c.seed.to_string()),
        ]);
        for (name, path) in &self.files {
            lines.push((format!("file.{name}"), path.clone()));
        }
        if let Some(secs) = self.wall_clock_secs {
            lines.push(("wall_clock_secs".into(), fmt_f64(secs)));
        }
        let mut out = String::new();
        for (k, v) in lines {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once(" = ").ok_or_else(|| ManifestError::Syntax {
                line: i + 1,
                message: "expected `key = value`".into(),
            })?;
            if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(ManifestError::Syntax {
                    line: i + 1,
                    message: format!("duplicate key {k:?}"),
                });
            }
        }
        let mut r = Reader { map };

        let widths = r
            .take("arch.widths")?
            .split(',')
            .map(|w| w.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| r.bad("arch.widths"))?;
        let activation: Activation = r.parse("arch.activation")?;
        let arch = MlpArch::new(widths, activation)?;

        let noise_sd: f64 = r.parse("data.noise_sd")?;
        let generator = match r.take("data.generator")?.as_str() {
            "swissroll" => GeneratorSpec::SwissRoll(SwissRollSpec {
                noise_sd,
                turns: r.parse("data.turns")?,
            }),
            "rings" => {
                let radii: Vec<f64> = r
                    .take("data.radii")?
                    .split(',')
                    .map(f64::from_str)
                    .collect::<Result<_, _>>()
                    .map_err(|_| r.bad("data.radii"))?;
                GeneratorSpec::Rings(RingsSpec {
                    n_per_ring: r.parse("data.n_per_ring")?,
                    radii: radii.try_into().map_err(|_| r.bad("data.radii"))?,
                    noise_sd,
                })
            }
            _ => return Err(r.bad("data.generator")),
        };
        let data = DataSpec {
            generator,
            n_train: r.parse("data.n_train")?,
            n_test: r.parse("data.n_test")?,
            n_poison: r.parse("data.n_poison")?,
            seed: r.parse("data.seed")?,
        };

        let objective = match r.take("train.objective")?.as_str() {
            "clean" => ObjectiveSpec::Clean,
            "poisoned" => ObjectiveSpec::poisoned(r.parse("train.beta")?)?,
            _ => return Err(r.bad("train.objective")),
        };
        let optimizer: OptimizerKind = r.parse("train.optimizer")?;
        let config = TrainConfig {
            objective,
            optimizer,
            learning_rate: r.parse("train.learning_rate")?,
            momentum_coef: r.parse("train.momentum_coef")?,
            batch_size: r.parse("train.batch_size")?,
            schedule: r.parse("train.schedule")?,
            epochs: r.parse("train.epochs")?,
            checkpoint_every: r.parse("train.checkpoint_every")?,
            seed: r.parse("train.seed")?,
        };

        let experiment = r.take("experiment")?;
        let toolkit_version = r.take("toolkit_version")?;
        let wall_clock_secs = match r.map.contains_key("wall_clock_secs") {
            true => Some(r.parse("wall_clock_secs")?),
            false => None,
        };
        let files: BTreeMap<String, String> = r
            .map
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("file.").map(|name| (name.to_string(), v.clone())))
            .collect();
        r.map.retain(|k, _| !k.starts_with("file."));
        if let Some(key) = r.map.keys().next() {
            return Err(ManifestError::Value {
                key: key.clone(),
                value: "unknown key".into(),
            });
        }
        Ok(RunManifest {
            experiment,
            toolkit_version,
            arch,
            data,
            config,
            files,
            wall_clock_secs,
        })
    }

    /// Writes the manifest after checking that every referenced file exists.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ManifestError> {
        let path = path.as_ref();
        let dir = path.parent().unwrap_or(Path::new("."));
        for rel in self.files.values() {
            let full = dir.join(rel);
            if !full.is_file() {
                return Err(ManifestError::MissingFile(full));
            }
        }
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ManifestError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Absolute location of a recorded output.
    pub fn file_path(&self, manifest_path: &Path, name: &str) -> Option<PathBuf> {
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        self.files.get(name).map(|rel| dir.join(rel))
    }
}

struct Reader {
    map: BTreeMap<String, String>,
}

impl Reader {
    fn take(&mut self, key: &'static str) -> Result<String, ManifestError> {
        self.map.remove(key).ok_or(ManifestError::Missing(key))
    }

    fn parse<T: FromStr>(&mut self, key: &'static str) -> Result<T, ManifestError> {
        let value = self.take(key)?;
        value.parse().map_err(|_| ManifestError::Value {
            key: key.to_string(),
            value,
        })
    }

    fn bad(&self, key: &str) -> ManifestError {
        ManifestError::Value {
            key: key.to_string(),
            value: "malformed".into(),
        }
    }
}
