//! Experiment configuration: strict TOML parsing with line-anchored
//! errors, per-experiment defaults, and materialization of the run
//! settings for every grid point.

use latent_etkf::assimilation::{ConfigKind, DaConfig, ObsErrorLaw};
use latent_etkf::model::ModelParams;
use serde::Deserialize;
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// Syntax errors, type errors, and unknown keys; the underlying
    /// message already carries the line and column.
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("{}`{key}`: {reason}", match line { Some(l) => format!("line {l}: "), None => String::new() })]
    Value {
        line: Option<usize>,
        key: String,
        reason: String,
    },
}

/// Which experiment a configuration file describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentId {
    /// Stationary circle, Gaussian observation noise.
    One,
    /// Oscillating circle radius (amplitude 0.2 by default).
    Two,
    /// Skew-normal observation noise swept over the shape grid.
    Three,
    /// Radius-oscillation amplitude swept over a grid.
    SweepAmplitude,
    /// Alias of experiment III: the shape grid under another name.
    SweepShape,
    /// Every knob taken from the file as written.
    Custom,
}

impl ExperimentId {
    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "I" => Some(ExperimentId::One),
            "II" => Some(ExperimentId::Two),
            "III" => Some(ExperimentId::Three),
            "sweep_A" => Some(ExperimentId::SweepAmplitude),
            "sweep_lambda" => Some(ExperimentId::SweepShape),
            "custom" => Some(ExperimentId::Custom),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentId::One => "I",
            ExperimentId::Two => "II",
            ExperimentId::Three => "III",
            ExperimentId::SweepAmplitude => "sweep_A",
            ExperimentId::SweepShape => "sweep_lambda",
            ExperimentId::Custom => "custom",
        }
    }

    fn sweeps_amplitude(&self) -> bool {
        matches!(self, ExperimentId::SweepAmplitude)
    }

    fn sweeps_shape(&self) -> bool {
        matches!(self, ExperimentId::Three | ExperimentId::SweepShape)
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Filter/model knobs shared by every configuration of a run.
#[derive(Debug, Clone)]
pub struct DaKnobs {
    pub ensemble_size: usize,
    pub analysis_interval: usize,
    pub steps: usize,
    pub perturbed_count: usize,
    pub obs_std: f64,
    pub alpha: f64,
    pub amplitude: f64,
    /// Skew-normal shape for `custom` runs; `None` keeps Gaussian noise.
    pub skew_shape: Option<f64>,
    pub latent_dim: usize,
    pub innovation_latent_dim: usize,
}

/// One point of the run grid: non-sweep experiments have exactly one.
#[derive(Debug, Clone)]
pub struct GridPoint {
    /// Swept parameter name (`"amplitude"` or `"shape"`), if any.
    pub parameter: Option<&'static str>,
    pub value: Option<f64>,
    pub model: ModelParams,
    pub obs_error: ObsErrorLaw,
}

impl GridPoint {
    /// Directory name for this grid point under a sweep root.
    pub fn dir_name(&self) -> Option<String> {
        Some(format!("{}_{}", self.parameter?, self.value?))
    }
}

/// A fully validated experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub experiment: ExperimentId,
    pub configs: Vec<ConfigKind>,
    pub seed: u64,
    pub n_climatologies: usize,
    pub n_repetitions: usize,
    pub amplitudes: Vec<f64>,
    pub shapes: Vec<f64>,
    pub knobs: DaKnobs,
    pub resamples: usize,
    pub level: f64,
    /// Output directory from the file; a command-line flag overrides it.
    pub out: Option<PathBuf>,
}

impl ExperimentSpec {
    /// The grid the experiment runs over: a single point for plain
    /// experiments, one point per swept value otherwise.
    pub fn grid(&self) -> Vec<GridPoint> {
        let gaussian = ObsErrorLaw::Gaussian {
            std: self.knobs.obs_std,
        };
        match self.experiment {
            ExperimentId::SweepAmplitude => self
                .amplitudes
                .iter()
                .map(|&a| GridPoint {
                    parameter: Some("amplitude"),
                    value: Some(a),
                    model: ModelParams::new(self.knobs.alpha, a),
                    obs_error: gaussian.clone(),
                })
                .collect(),
            ExperimentId::Three | ExperimentId::SweepShape => self
                .shapes
                .iter()
                .map(|&s| GridPoint {
                    parameter: Some("shape"),
                    value: Some(s),
                    model: ModelParams::new(self.knobs.alpha, self.knobs.amplitude),
                    obs_error: ObsErrorLaw::Skew {
                        shape: s,
                        std: self.knobs.obs_std,
                    },
                })
                .collect(),
            _ => {
                let obs_error = match self.knobs.skew_shape {
                    Some(shape) => ObsErrorLaw::Skew {
                        shape,
                        std: self.knobs.obs_std,
                    },
                    None => gaussian,
                };
                vec![GridPoint {
                    parameter: None,
                    value: None,
                    model: ModelParams::new(self.knobs.alpha, self.knobs.amplitude),
                    obs_error,
                }]
            }
        }
    }

    /// Materializes the filter configuration of one run.
    pub fn da_config(&self, kind: ConfigKind, point: &GridPoint) -> DaConfig {
        let mut cfg = DaConfig::new(kind);
        cfg.ensemble_size = self.knobs.ensemble_size;
        cfg.analysis_interval = self.knobs.analysis_interval;
        cfg.steps = self.knobs.steps;
        cfg.perturbed_count = self.knobs.perturbed_count;
        cfg.latent_dim = self.knobs.latent_dim;
        cfg.innovation_latent_dim = self.knobs.innovation_latent_dim;
        cfg.model = point.model;
        cfg.obs_error = point.obs_error.clone();
        cfg
    }

    /// Canonical description of everything that determines the outputs;
    /// its hash goes into the manifest so reruns can be matched to their
    /// configuration.
    pub fn canonical(&self) -> String {
        let configs: Vec<&str> = self.configs.iter().map(|k| k.name()).collect();
        format!(
            "experiment={};configs={};seed={};n_climatologies={};n_repetitions={};\
             amplitudes={:?};shapes={:?};ensemble_size={};analysis_interval={};steps={};\
             perturbed_count={};obs_std={};alpha={};amplitude={};skew_shape={:?};\
             latent_dim={};innovation_latent_dim={};resamples={};level={}",
            self.experiment,
            configs.join(","),
            self.seed,
            self.n_climatologies,
            self.n_repetitions,
            self.amplitudes,
            self.shapes,
            self.knobs.ensemble_size,
            self.knobs.analysis_interval,
            self.knobs.steps,
            self.knobs.perturbed_count,
            self.knobs.obs_std,
            self.knobs.alpha,
            self.knobs.amplitude,
            self.knobs.skew_shape,
            self.knobs.latent_dim,
            self.knobs.innovation_latent_dim,
            self.resamples,
            self.level,
        )
    }
}

// ---------------------------------------------------------------------
// raw file shape
// ---------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    experiment: String,
    configs: Option<Vec<String>>,
    seed: Option<u64>,
    n_climatologies: Option<usize>,
    n_repetitions: Option<usize>,
    amplitudes: Option<Vec<f64>>,
    shapes: Option<Vec<f64>>,
    out: Option<PathBuf>,
    da: Option<RawDa>,
    metrics: Option<RawMetrics>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDa {
    ensemble_size: Option<usize>,
    analysis_interval: Option<usize>,
    steps: Option<usize>,
    perturbed_count: Option<usize>,
    obs_std: Option<f64>,
    alpha: Option<f64>,
    amplitude: Option<f64>,
    skew_shape: Option<f64>,
    latent_dim: Option<usize>,
    innovation_latent_dim: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMetrics {
    resamples: Option<usize>,
    level: Option<f64>,
}

/// 1-based line of the first assignment to `key`, for anchoring value
/// errors to the file.
fn line_of(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|line| {
            let trimmed = line.trim_start();
            trimmed
                .strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map(|idx| idx + 1)
}

fn value_error(text: &str, key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        line: line_of(text, key),
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Reads and validates an experiment description, filling defaults.
///
/// # Errors
/// I/O failures; TOML syntax/type errors and unknown keys (line-anchored
/// by the parser); invalid values (anchored to the offending line).
pub fn parse_config(path: &Path) -> Result<ExperimentSpec, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

/// [`parse_config`] on an in-memory document.
pub fn parse_config_str(text: &str) -> Result<ExperimentSpec, ConfigError> {
    let raw: RawSpec = toml::from_str(text)?;

    let experiment = ExperimentId::parse(&raw.experiment).ok_or_else(|| {
        value_error(
            text,
            "experiment",
            format!(
                "unknown experiment `{}`; expected I, II, III, sweep_A, sweep_lambda, or custom",
                raw.experiment
            ),
        )
    })?;

    let configs = match &raw.configs {
        Some(names) => {
            if names.is_empty() {
                return Err(value_error(text, "configs", "must list at least one configuration"));
            }
            names
                .iter()
                .map(|name| {
                    ConfigKind::parse(name).ok_or_else(|| {
                        value_error(
                            text,
                            "configs",
                            format!(
                                "unknown configuration `{name}`; expected one of {}",
                                ConfigKind::ALL.map(|k| k.name()).join(", ")
                            ),
                        )
                    })
                })
                .collect::<Result<Vec<_>, _>>()?
        }
        None => match experiment {
            ExperimentId::Three | ExperimentId::SweepShape => vec![
                ConfigKind::NoDa,
                ConfigKind::Etkf,
                ConfigKind::SingleClima,
                ConfigKind::DoubleClima,
            ],
            ExperimentId::SweepAmplitude => {
                vec![ConfigKind::SingleClima, ConfigKind::SingleTransfer]
            }
            _ => ConfigKind::ALL.to_vec(),
        },
    };

    let da = raw.da.unwrap_or_default();
    let metrics = raw.metrics.unwrap_or_default();

    if experiment.sweeps_amplitude() && da.amplitude.is_some() {
        return Err(value_error(
            text,
            "amplitude",
            "the amplitude is swept by this experiment; remove the fixed value",
        ));
    }
    if experiment.sweeps_shape() && da.skew_shape.is_some() {
        return Err(value_error(
            text,
            "skew_shape",
            "the shape is swept by this experiment; remove the fixed value",
        ));
    }
    if !matches!(experiment, ExperimentId::Custom) && da.skew_shape.is_some() {
        return Err(value_error(
            text,
            "skew_shape",
            "a fixed skew shape is only meaningful for `custom` runs",
        ));
    }

    let default_amplitude = match experiment {
        ExperimentId::Two => 0.2,
        _ => 0.0,
    };
    let knobs = DaKnobs {
        ensemble_size: da.ensemble_size.unwrap_or(64),
        analysis_interval: da.analysis_interval.unwrap_or(10),
        steps: da.steps.unwrap_or(500),
        perturbed_count: da.perturbed_count.unwrap_or(1024),
        obs_std: da.obs_std.unwrap_or(0.1),
        alpha: da.alpha.unwrap_or(0.1),
        amplitude: da.amplitude.unwrap_or(default_amplitude),
        skew_shape: da.skew_shape,
        latent_dim: da.latent_dim.unwrap_or(1),
        innovation_latent_dim: da.innovation_latent_dim.unwrap_or(1),
    };

    let spec = ExperimentSpec {
        experiment,
        configs,
        seed: raw.seed.unwrap_or(0),
        n_climatologies: raw.n_climatologies.unwrap_or(7),
        n_repetitions: raw.n_repetitions.unwrap_or(7),
        amplitudes: raw
            .amplitudes
            .unwrap_or_else(|| vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]),
        shapes: raw
            .shapes
            .unwrap_or_else(|| vec![-10.0, -5.0, -2.0, 0.0, 2.0, 5.0, 10.0]),
        knobs,
        resamples: metrics.resamples.unwrap_or(999),
        level: metrics.level.unwrap_or(0.90),
        out: raw.out,
    };

    validate(&spec, text)?;
    Ok(spec)
}

fn validate(spec: &ExperimentSpec, text: &str) -> Result<(), ConfigError> {
    let knobs = &spec.knobs;
    if knobs.ensemble_size < 2 {
        return Err(value_error(text, "ensemble_size", "need at least 2 members"));
    }
    if knobs.analysis_interval == 0 {
        return Err(value_error(text, "analysis_interval", "must be at least 1"));
    }
    if knobs.steps < knobs.analysis_interval {
        return Err(value_error(
            text,
            "steps",
            "run too short for a single analysis",
        ));
    }
    if knobs.perturbed_count < 4 * knobs.ensemble_size {
        return Err(value_error(
            text,
            "perturbed_count",
            format!(
                "perturbed innovations must outnumber members at least 4:1 (need ≥ {})",
                4 * knobs.ensemble_size
            ),
        ));
    }
    if !(knobs.obs_std > 0.0) {
        return Err(value_error(text, "obs_std", "must be positive"));
    }
    if !(knobs.alpha > 0.0 && knobs.alpha < 1.0) {
        return Err(value_error(text, "alpha", "must lie strictly in (0, 1)"));
    }
    if !(knobs.amplitude >= 0.0) {
        return Err(value_error(text, "amplitude", "must be non-negative"));
    }
    if knobs.latent_dim == 0 || knobs.innovation_latent_dim == 0 {
        return Err(value_error(text, "latent_dim", "latent spaces need dimension ≥ 1"));
    }
    if spec.n_climatologies == 0 {
        return Err(value_error(text, "n_climatologies", "must be at least 1"));
    }
    if spec.n_repetitions == 0 {
        return Err(value_error(text, "n_repetitions", "must be at least 1"));
    }
    if spec.amplitudes.is_empty() {
        return Err(value_error(text, "amplitudes", "sweep grid must be non-empty"));
    }
    if spec.shapes.is_empty() {
        return Err(value_error(text, "shapes", "sweep grid must be non-empty"));
    }
    if spec.resamples == 0 {
        return Err(value_error(text, "resamples", "must be at least 1"));
    }
    if !(spec.level > 0.0 && spec.level < 1.0) {
        return Err(value_error(text, "level", "must lie strictly in (0, 1)"));
    }
    Ok(())
}
