//! Orchestration of the command-line workbench: climatology training
//! with on-disk reuse, grid execution with full persistence, summary
//! merging across run directories, and the linearized-analysis check.

use crate::config::{ExperimentSpec, GridPoint};
use latent_etkf::assimilation::{
    evaluate_run, obs_operator, run_repetitions, streams, synthetic_innovations,
    train_climatology_vae, ConfigKind, Protocol,
};
use latent_etkf::diagnostics::{
    predict_latent_moments, DiagnosticsError, EnsembleMoments, LinearizationPoint,
    LinearizationReport,
};
use latent_etkf::etkf::build_innovations;
use latent_etkf::metrics::MetricsError;
use latent_etkf::model::State;
use latent_etkf::persist::{self, FailureNote, Manifest, MetricsRow, PersistError, SummaryRow};
use latent_etkf::rng::{substream_id, DistributionError, RngStream};
use latent_etkf::vae::{
    gaussian_matrix, init_second_vae_from_first, train, TrainConfig, VaeError, VaeParams,
};
use latent_etkf::EnsembleMatrix;
use nalgebra::{DMatrix, DVector};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Persist {
        path: PathBuf,
        source: PersistError,
    },
    #[error("{what}: {source}")]
    Vae { what: String, source: VaeError },
    #[error("evaluating {config}: {source}")]
    Metrics {
        config: String,
        source: MetricsError,
    },
    #[error("observation-noise law rejected: {0}")]
    Distribution(#[from] DistributionError),
    #[error("linearization check failed: {0}")]
    Diagnostics(#[from] DiagnosticsError),
    #[error("no metrics found under {dir} (expected metrics.txt or grid subdirectories)")]
    EmptyRun { dir: PathBuf },
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> DriverError {
    let path = path.to_path_buf();
    move |source| DriverError::Io { path, source }
}

fn persist_at(path: &Path) -> impl FnOnce(PersistError) -> DriverError {
    let path = path.to_path_buf();
    move |source| DriverError::Persist { path, source }
}

/// Outcome of a run: every repetition finished, or some were recorded as
/// failed in the manifest while the rest proceeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Complete,
    Partial,
}

impl RunStatus {
    /// Process exit code: 0 when complete, 2 when partial.
    pub fn exit_code(self) -> u8 {
        match self {
            RunStatus::Complete => 0,
            RunStatus::Partial => 2,
        }
    }
}

// ---------------------------------------------------------------------
// climatology autoencoders
// ---------------------------------------------------------------------

fn clima_path(out_dir: &Path, idx: usize) -> PathBuf {
    out_dir.join("vae").join(format!("clima-{idx}.json"))
}

/// Loads the climatology autoencoder `idx` from the run directory, or
/// trains and saves it.
fn load_or_train_clima(
    spec: &ExperimentSpec,
    out_dir: &Path,
    idx: usize,
) -> Result<VaeParams, DriverError> {
    let path = clima_path(out_dir, idx);
    if path.exists() {
        return persist::read_vae(&path).map_err(persist_at(&path));
    }
    let parent = path.parent().expect("clima path has a parent");
    std::fs::create_dir_all(parent).map_err(io_at(parent))?;
    eprintln!(
        "training climatology autoencoder {} of {} (seed {}, stored at {})",
        idx + 1,
        spec.n_climatologies,
        spec.seed,
        path.display()
    );
    let started = Instant::now();
    let vae = train_climatology_vae(
        spec.seed,
        idx as u64,
        spec.knobs.latent_dim,
        &TrainConfig::offline(),
    )
    .map_err(|source| DriverError::Vae {
        what: format!("training climatology autoencoder {idx}"),
        source,
    })?;
    persist::write_vae(&path, &vae).map_err(persist_at(&path))?;
    eprintln!("  trained in {:.1?}", started.elapsed());
    Ok(vae)
}

/// Ensures every climatology autoencoder the run needs exists on disk,
/// returning them in index order.
pub fn ensure_climatologies(
    spec: &ExperimentSpec,
    out_dir: &Path,
) -> Result<Vec<VaeParams>, DriverError> {
    (0..spec.n_climatologies)
        .map(|idx| load_or_train_clima(spec, out_dir, idx))
        .collect()
}

// ---------------------------------------------------------------------
// experiment runs
// ---------------------------------------------------------------------

fn manifest_for(
    spec: &ExperimentSpec,
    digest: &str,
    point: Option<&GridPoint>,
    failures: Vec<FailureNote>,
    outputs: Vec<String>,
) -> Manifest {
    Manifest {
        format_version: persist::FORMAT_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        experiment: spec.experiment.name().to_string(),
        seed: spec.seed,
        config_digest: digest.to_string(),
        sweep_parameter: point.and_then(|p| p.parameter.map(str::to_string)),
        sweep_value: point.and_then(|p| p.value),
        configs: spec.configs.iter().map(|k| k.name().to_string()).collect(),
        n_climatologies: spec.n_climatologies,
        n_repetitions: spec.n_repetitions,
        shared_truth: false,
        failures,
        outputs,
    }
}

/// Runs the configured experiment over its grid, writing per-point
/// records, metrics, and manifests, plus a merged summary and root
/// manifest for sweeps.
///
/// # Errors
/// I/O and persistence failures, and evaluation errors other than "every
/// repetition of a configuration failed" (which is recorded in the
/// manifest and reflected in the exit status instead).
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<RunStatus, DriverError> {
    std::fs::create_dir_all(out_dir).map_err(io_at(out_dir))?;
    let needs_vae = spec.configs.iter().any(|k| k.uses_state_vae());
    let climas = if needs_vae {
        ensure_climatologies(spec, out_dir)?
    } else {
        Vec::new()
    };
    let digest = persist::fnv1a_hex(spec.canonical().as_bytes());
    let protocol = Protocol::reduced(spec.n_climatologies, spec.n_repetitions, spec.seed);
    let grid = spec.grid();
    let is_sweep = grid[0].parameter.is_some();

    let mut all_rows: Vec<SummaryRow> = Vec::new();
    let mut all_failures: Vec<FailureNote> = Vec::new();
    let mut root_outputs: Vec<String> = Vec::new();

    for (grid_idx, point) in grid.iter().enumerate() {
        let point_dir = match point.dir_name() {
            Some(name) => out_dir.join(name),
            None => out_dir.to_path_buf(),
        };
        std::fs::create_dir_all(&point_dir).map_err(io_at(&point_dir))?;
        let point_label = match (point.parameter, point.value) {
            (Some(p), Some(v)) => format!("{p}={v} "),
            _ => String::new(),
        };

        let mut rows: Vec<MetricsRow> = Vec::new();
        let mut failures: Vec<FailureNote> = Vec::new();
        let mut outputs: Vec<String> = Vec::new();

        for (config_idx, &kind) in spec.configs.iter().enumerate() {
            let cfg = spec.da_config(kind, point);
            eprintln!("[{}] {point_label}{kind}: running...", spec.experiment);
            let started = Instant::now();
            let run = run_repetitions(&cfg, &climas, &protocol);

            let records_dir = point_dir.join("records").join(kind.name());
            std::fs::create_dir_all(&records_dir).map_err(io_at(&records_dir))?;
            for (clima_idx, rep_idx, records) in run.successes() {
                let rel = format!("records/{}/rep-{clima_idx}-{rep_idx}.txt", kind.name());
                let path = point_dir.join(&rel);
                persist::write_records(&path, records).map_err(persist_at(&path))?;
                outputs.push(rel);
            }
            for (clima_idx, rep_idx, error) in run.failures() {
                eprintln!(
                    "  warning: repetition (climatology {clima_idx}, draw {rep_idx}) failed: {error}"
                );
                failures.push(FailureNote {
                    config: kind.name().to_string(),
                    clima_idx,
                    rep_idx,
                    error: error.to_string(),
                });
            }

            let mut stream = RngStream::new(
                spec.seed,
                substream_id(&[streams::BOOTSTRAP, grid_idx as u64, config_idx as u64, 0, 0]),
            );
            match evaluate_run(&run, spec.level, spec.resamples, &mut stream) {
                Ok(metrics) => {
                    rows.extend(
                        metrics
                            .iter()
                            .map(|m| MetricsRow::from_metrics(kind.name(), m)),
                    );
                }
                Err(MetricsError::NoData) => {
                    eprintln!(
                        "  warning: every repetition of {point_label}{kind} failed; no metrics"
                    );
                }
                Err(source) => {
                    return Err(DriverError::Metrics {
                        config: format!("{point_label}{kind}"),
                        source,
                    });
                }
            }
            eprintln!(
                "  {} of {} repetitions succeeded in {:.1?}",
                run.successes().len(),
                run.outcomes.len(),
                started.elapsed()
            );
        }

        let metrics_path = point_dir.join("metrics.txt");
        persist::write_metrics_table(&metrics_path, &rows).map_err(persist_at(&metrics_path))?;
        outputs.push("metrics.txt".to_string());

        all_rows.extend(rows.into_iter().map(|row| SummaryRow {
            experiment: spec.experiment.name().to_string(),
            sweep: point.value,
            row,
        }));

        let manifest = manifest_for(spec, &digest, Some(point), failures.clone(), outputs);
        let manifest_path = point_dir.join("manifest.json");
        persist::write_manifest(&manifest_path, &manifest).map_err(persist_at(&manifest_path))?;
        all_failures.extend(failures);
        if let Some(name) = point.dir_name() {
            root_outputs.push(format!("{name}/manifest.json"));
        }
    }

    if is_sweep {
        let summary_path = out_dir.join("summary.txt");
        persist::write_summary_table(&summary_path, &all_rows)
            .map_err(persist_at(&summary_path))?;
        root_outputs.push("summary.txt".to_string());
        let mut manifest = manifest_for(
            spec,
            &digest,
            None,
            all_failures.clone(),
            root_outputs,
        );
        manifest.sweep_parameter = grid[0].parameter.map(str::to_string);
        let manifest_path = out_dir.join("manifest.json");
        persist::write_manifest(&manifest_path, &manifest).map_err(persist_at(&manifest_path))?;
    }

    Ok(if all_failures.is_empty() {
        RunStatus::Complete
    } else {
        RunStatus::Partial
    })
}

// ---------------------------------------------------------------------
// summaries
// ---------------------------------------------------------------------

/// Merges the metrics of one or more run directories into a single
/// summary table, returning the rendered text and optionally writing it.
///
/// Each directory must hold a `manifest.json`; sweep roots are expanded
/// into their grid subdirectories.
///
/// # Errors
/// Missing or version-mismatched manifests, tables whose header does not
/// match the current schema, and I/O failures.
pub fn summarize(dirs: &[PathBuf], out: Option<&Path>) -> Result<String, DriverError> {
    let mut rows = Vec::new();
    for dir in dirs {
        collect_summary(dir, &mut rows)?;
    }
    if let Some(path) = out {
        persist::write_summary_table(path, &rows).map_err(persist_at(path))?;
    }
    Ok(persist::render_summary_table(&rows))
}

fn collect_summary(dir: &Path, rows: &mut Vec<SummaryRow>) -> Result<(), DriverError> {
    let manifest_path = dir.join("manifest.json");
    let manifest = persist::read_manifest(&manifest_path).map_err(persist_at(&manifest_path))?;
    let metrics_path = dir.join("metrics.txt");
    if metrics_path.exists() {
        let metric_rows =
            persist::read_metrics_table(&metrics_path).map_err(persist_at(&metrics_path))?;
        rows.extend(metric_rows.into_iter().map(|row| SummaryRow {
            experiment: manifest.experiment.clone(),
            sweep: manifest.sweep_value,
            row,
        }));
        return Ok(());
    }
    let mut found = false;
    for output in &manifest.outputs {
        if let Some(sub) = output.strip_suffix("/manifest.json") {
            collect_summary(&dir.join(sub), rows)?;
            found = true;
        }
    }
    if found {
        Ok(())
    } else {
        Err(DriverError::EmptyRun {
            dir: dir.to_path_buf(),
        })
    }
}

// ---------------------------------------------------------------------
// linearization check
// ---------------------------------------------------------------------

const DIAG_MEMBERS: usize = 10_000;
const DIAG_SPREAD: f64 = 0.01;
const DIAG_ANGLE: f64 = 0.4;

fn fmt_matrix(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|row| {
            row.iter()
                .map(|v| format!("{v:.6e}"))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    format!("[{}]", rows.join("; "))
}

fn fmt_vector(v: &DVector<f64>) -> String {
    let entries: Vec<String> = v.iter().map(|x| format!("{x:.6e}")).collect();
    format!("[{}]", entries.join(" "))
}

/// Compares the first-order prediction of the latent analysis against a
/// large encoded ensemble around a point on the circle, writing the
/// report to `<out>/diagnose.txt` and returning its text.
///
/// Uses the first latent configuration of the spec (or the offline
/// single-autoencoder one); observation noise is Gaussian with the
/// configured deviation, since the prediction is defined for a Gaussian
/// error covariance.
pub fn diagnose(spec: &ExperimentSpec, out_dir: &Path) -> Result<String, DriverError> {
    let kind = spec
        .configs
        .iter()
        .copied()
        .find(|k| k.uses_state_vae())
        .unwrap_or(ConfigKind::SingleClima);
    std::fs::create_dir_all(out_dir).map_err(io_at(out_dir))?;
    let vae1 = load_or_train_clima(spec, out_dir, 0)?;
    let grid = spec.grid();
    let cfg = spec.da_config(kind, &grid[0]);

    let mut stream = RngStream::new(spec.seed, substream_id(&[streams::DIAGNOSTICS, 0, 0, 0, 0]));
    let truth_vec = State::on_unit_circle(DIAG_ANGLE).to_vector();
    let members = DIAG_MEMBERS;
    let noise = gaussian_matrix(&mut stream, 2, members) * DIAG_SPREAD;
    let states = DMatrix::from_fn(2, members, |r, c| truth_vec[r] + noise[(r, c)]);

    // realized forecast moments, so their sampling error cancels from the
    // comparison
    let mean_err = DVector::from_fn(2, |r, _| noise.row(r).sum() / members as f64);
    let centered = DMatrix::from_fn(2, members, |r, c| noise[(r, c)] - mean_err[r]);
    let forecast_cov = (&centered * centered.transpose()) / (members as f64 - 1.0);

    let obs_std = spec.knobs.obs_std;
    let h = obs_operator();
    let obs_cov = DMatrix::from_element(1, 1, obs_std * obs_std);
    let y = truth_vec[0] + 0.5 * obs_std;
    let y_vec = DVector::from_element(1, y);

    let ensemble = EnsembleMatrix::new(states.clone());
    let k = cfg.perturbed_count.max(4 * members);
    let inn = build_innovations(
        &ensemble,
        &y_vec,
        &h,
        |s: &mut RngStream| DVector::from_element(1, s.gaussian(0.0, obs_std)),
        k,
        &mut stream,
    );

    let vae_err = |what: &str| {
        let what = what.to_string();
        move |source| DriverError::Vae { what, source }
    };
    let vae2 = if kind.uses_innovation_vae() {
        let synth = synthetic_innovations(
            &ensemble,
            &latent_etkf::assimilation::ObsErrorLaw::Gaussian { std: obs_std },
            cfg.perturbed_count,
            &mut stream,
        )?;
        let init = init_second_vae_from_first(&vae1, 1, &mut stream);
        Some(
            train(init, &synth, &cfg.innovation_train, &mut stream)
                .map_err(vae_err("training the innovation autoencoder"))?,
        )
    } else {
        None
    };

    let z = vae1
        .encode_ensemble(&states, &mut stream)
        .map_err(vae_err("encoding the state ensemble"))?;
    let (f_m, f_k) = match &vae2 {
        Some(v2) => (
            v2.encode_ensemble(inn.per_member(), &mut stream)
                .map_err(vae_err("encoding the per-member innovations"))?,
            v2.encode_ensemble(inn.sampled(), &mut stream)
                .map_err(vae_err("encoding the perturbed innovations"))?,
        ),
        None => (inn.per_member().clone(), inn.sampled().clone()),
    };

    let point = LinearizationPoint {
        state_vae: &vae1,
        innovation_vae: vae2.as_ref(),
        truth: &truth_vec,
        observation: &y_vec,
        obs_operator: &h,
        obs_cov: &obs_cov,
        forecast_cov: &forecast_cov,
        mean_forecast_error: &mean_err,
    };
    let predicted = predict_latent_moments(&point)?;
    let empirical = EnsembleMoments::from_ensembles(&z, &f_m, &f_k);
    let report = LinearizationReport::new(predicted, empirical);

    let mut text = String::new();
    let _ = writeln!(
        text,
        "linearization check: configuration {kind}, climatology 0, {members} members, spread {DIAG_SPREAD}"
    );
    let _ = writeln!(
        text,
        "truth on the unit circle at angle {DIAG_ANGLE} rad; observation offset {:.4}",
        0.5 * obs_std
    );
    let _ = writeln!(text, "predicted latent mean  {}", fmt_vector(&report.predicted.mean_z));
    let _ = writeln!(text, "empirical latent mean  {}", fmt_vector(&report.empirical.mean_z));
    let _ = writeln!(text, "predicted latent cov   {}", fmt_matrix(&report.predicted.cov_z));
    let _ = writeln!(text, "empirical latent cov   {}", fmt_matrix(&report.empirical.cov_z));
    let _ = writeln!(text, "relative discrepancies (sample vs predicted):");
    let _ = writeln!(text, "  mean(z)  {:.3e}", report.mean_z_discrepancy);
    let _ = writeln!(text, "  mean(g)  {:.3e}", report.mean_g_discrepancy);
    let _ = writeln!(text, "  cov(z)   {:.3e}", report.cov_z_discrepancy);
    let _ = writeln!(text, "  cov(f)   {:.3e}", report.cov_f_discrepancy);
    let _ = writeln!(text, "  cross    {:.3e}", report.cross_discrepancy);
    let _ = writeln!(text, "predicted gain         {}", fmt_matrix(&report.analysis.gain));
    let _ = writeln!(
        text,
        "predicted analysis     mean {} cov {}",
        fmt_vector(&report.analysis.analysis_mean),
        fmt_matrix(&report.analysis.analysis_cov)
    );
    let _ = writeln!(
        text,
        "regularization         {}",
        match report.analysis.regularization {
            Some(jitter) => format!("jitter {jitter:.3e} was needed to invert"),
            None => "none".to_string(),
        }
    );
    let _ = writeln!(text, "all moments finite     {}", report.all_finite());

    let out_path = out_dir.join("diagnose.txt");
    std::fs::write(&out_path, &text).map_err(io_at(&out_path))?;
    Ok(text)
}
