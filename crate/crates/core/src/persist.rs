//! Persistence for runs: metric tables, summary tables, cycle-record
//! dumps, training curves, autoencoder checkpoints, and the run manifest.
//!
//! Formats are deliberately simple and tool-agnostic: anything
//! plot-shaped is whitespace-separated columnar text with a one-line
//! header, anything structured is JSON carrying an explicit
//! `format_version`. Undefined statistics (a correlation against a
//! constant truth) are written as `nan`; an absent sweep value is `-`.
//! Floats are written in Rust's shortest round-trip form, so a re-run
//! with the same seeds reproduces output files byte for byte and reading
//! a table back recovers the exact values.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assimilation::CycleRecord;
use crate::etkf::EnsembleMatrix;
use crate::metrics::VariableMetrics;
use crate::model::State;
use crate::vae::{EpochStats, VaeParams};
use nalgebra::DMatrix;

/// Version stamped into every JSON container this build writes.
pub const FORMAT_VERSION: u32 = 1;

/// Errors from reading or writing persisted artifacts.
#[derive(Debug, Error)]
pub enum PersistError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("json failure: {0}")]
    Json(#[from] serde_json::Error),
    /// A text table whose header or rows do not match the expected
    /// schema (line numbers are 1-based; line 0 means an empty file).
    #[error("{path}:{line}: {what}")]
    Parse {
        path: String,
        line: usize,
        what: String,
    },
    #[error("unsupported format version {found} (this build reads {expected})")]
    Version { found: u32, expected: u32 },
}

fn parse_error(path: &Path, line: usize, what: impl Into<String>) -> PersistError {
    PersistError::Parse {
        path: path.display().to_string(),
        line,
        what: what.into(),
    }
}

/// Shortest round-trip rendering; `None` (an undefined statistic)
/// becomes `nan`.
fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_nan() => "nan".to_string(),
        Some(x) => format!("{x}"),
        None => "nan".to_string(),
    }
}

fn parse_f64(path: &Path, line: usize, token: &str, column: &str) -> Result<f64, PersistError> {
    token
        .parse::<f64>()
        .map_err(|_| parse_error(path, line, format!("column {column}: bad number {token:?}")))
}

fn parse_opt(path: &Path, line: usize, token: &str, column: &str) -> Result<Option<f64>, PersistError> {
    let v = parse_f64(path, line, token, column)?;
    Ok(if v.is_nan() { None } else { Some(v) })
}

// ---------------------------------------------------------------------
// metric tables
// ---------------------------------------------------------------------

/// Header of a per-run metrics table.
pub const METRICS_HEADER: &str =
    "config variable crps crps_lo crps_hi rmse std corr corr_lo corr_hi corr_bootweighted";

/// One row of the per-run metrics table: a configuration, a variable,
/// and its scores with bootstrap bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub config: String,
    pub variable: String,
    pub crps: f64,
    pub crps_lo: f64,
    pub crps_hi: f64,
    pub rmse: f64,
    pub std: f64,
    pub corr: Option<f64>,
    pub corr_lo: Option<f64>,
    pub corr_hi: Option<f64>,
    pub corr_bootweighted: Option<f64>,
}

impl MetricsRow {
    /// Flattens an evaluated variable into a table row.
    pub fn from_metrics(config: &str, m: &VariableMetrics) -> Self {
        MetricsRow {
            config: config.to_string(),
            variable: m.variable.name().to_string(),
            crps: m.crps.estimate,
            crps_lo: m.crps.lower,
            crps_hi: m.crps.upper,
            rmse: m.rmse,
            std: m.std,
            corr: m.corr,
            corr_lo: m.corr_interval.as_ref().map(|i| i.lower),
            corr_hi: m.corr_interval.as_ref().map(|i| i.upper),
            corr_bootweighted: m.corr_bootweighted,
        }
    }

    fn render(&self) -> String {
        format!(
            "{} {} {} {} {} {} {} {} {} {} {}",
            self.config,
            self.variable,
            self.crps,
            self.crps_lo,
            self.crps_hi,
            self.rmse,
            self.std,
            fmt_opt(self.corr),
            fmt_opt(self.corr_lo),
            fmt_opt(self.corr_hi),
            fmt_opt(self.corr_bootweighted),
        )
    }

    fn parse(path: &Path, line_no: usize, tokens: &[&str]) -> Result<Self, PersistError> {
        if tokens.len() != 11 {
            return Err(parse_error(
                path,
                line_no,
                format!("expected 11 columns, found {}", tokens.len()),
            ));
        }
        Ok(MetricsRow {
            config: tokens[0].to_string(),
            variable: tokens[1].to_string(),
            crps: parse_f64(path, line_no, tokens[2], "crps")?,
            crps_lo: parse_f64(path, line_no, tokens[3], "crps_lo")?,
            crps_hi: parse_f64(path, line_no, tokens[4], "crps_hi")?,
            rmse: parse_f64(path, line_no, tokens[5], "rmse")?,
            std: parse_f64(path, line_no, tokens[6], "std")?,
            corr: parse_opt(path, line_no, tokens[7], "corr")?,
            corr_lo: parse_opt(path, line_no, tokens[8], "corr_lo")?,
            corr_hi: parse_opt(path, line_no, tokens[9], "corr_hi")?,
            corr_bootweighted: parse_opt(path, line_no, tokens[10], "corr_bootweighted")?,
        })
    }
}

/// Renders the per-run metrics table (header plus one line per row).
pub fn render_metrics_table(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    for row in rows {
        out.push('\n');
        out.push_str(&row.render());
    }
    out.push('\n');
    out
}

/// Writes the per-run metrics table to `path`.
///
/// # Errors
/// I/O failures.
pub fn write_metrics_table(path: &Path, rows: &[MetricsRow]) -> Result<(), PersistError> {
    std::fs::write(path, render_metrics_table(rows))?;
    Ok(())
}

/// Reads a per-run metrics table, validating the header.
///
/// # Errors
/// [`PersistError::Parse`] on a header or row that does not match the
/// schema; I/O failures.
pub fn read_metrics_table(path: &Path) -> Result<Vec<MetricsRow>, PersistError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == METRICS_HEADER => {}
        Some((_, header)) => {
            return Err(parse_error(
                path,
                1,
                format!("header mismatch: expected {METRICS_HEADER:?}, found {header:?}"),
            ))
        }
        None => return Err(parse_error(path, 0, "empty file")),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        rows.push(MetricsRow::parse(path, idx + 1, &tokens)?);
    }
    Ok(rows)
}

// ---------------------------------------------------------------------
// summary tables
// ---------------------------------------------------------------------

/// Header of a merged summary table.
pub const SUMMARY_HEADER: &str = "experiment config variable sweep \
crps crps_lo crps_hi rmse std corr corr_lo corr_hi corr_bootweighted";

/// One row of a merged summary: a metrics row keyed by experiment and an
/// optional sweep value.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub experiment: String,
    /// Grid value for sweep experiments; `None` (written `-`) otherwise.
    pub sweep: Option<f64>,
    pub row: MetricsRow,
}

impl SummaryRow {
    fn render(&self) -> String {
        let sweep = match self.sweep {
            Some(v) => format!("{v}"),
            None => "-".to_string(),
        };
        format!(
            "{} {} {} {} {} {} {} {} {} {} {} {} {}",
            self.experiment,
            self.row.config,
            self.row.variable,
            sweep,
            self.row.crps,
            self.row.crps_lo,
            self.row.crps_hi,
            self.row.rmse,
            self.row.std,
            fmt_opt(self.row.corr),
            fmt_opt(self.row.corr_lo),
            fmt_opt(self.row.corr_hi),
            fmt_opt(self.row.corr_bootweighted),
        )
    }

    fn parse(path: &Path, line_no: usize, tokens: &[&str]) -> Result<Self, PersistError> {
        if tokens.len() != 13 {
            return Err(parse_error(
                path,
                line_no,
                format!("expected 13 columns, found {}", tokens.len()),
            ));
        }
        let sweep = if tokens[3] == "-" {
            None
        } else {
            Some(parse_f64(path, line_no, tokens[3], "sweep")?)
        };
        let mut metric_tokens = vec![tokens[1], tokens[2]];
        metric_tokens.extend_from_slice(&tokens[4..]);
        Ok(SummaryRow {
            experiment: tokens[0].to_string(),
            sweep,
            row: MetricsRow::parse(path, line_no, &metric_tokens)?,
        })
    }
}

/// Renders the merged summary table.
pub fn render_summary_table(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    for row in rows {
        out.push('\n');
        out.push_str(&row.render());
    }
    out.push('\n');
    out
}

/// Writes the merged summary table to `path`.
///
/// # Errors
/// I/O failures.
pub fn write_summary_table(path: &Path, rows: &[SummaryRow]) -> Result<(), PersistError> {
    std::fs::write(path, render_summary_table(rows))?;
    Ok(())
}

/// Reads a merged summary table, validating the header.
///
/// # Errors
/// [`PersistError::Parse`] on schema mismatch; I/O failures.
pub fn read_summary_table(path: &Path) -> Result<Vec<SummaryRow>, PersistError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == SUMMARY_HEADER => {}
        Some((_, header)) => {
            return Err(parse_error(
                path,
                1,
                format!("header mismatch: expected {SUMMARY_HEADER:?}, found {header:?}"),
            ))
        }
        None => return Err(parse_error(path, 0, "empty file")),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        rows.push(SummaryRow::parse(path, idx + 1, &tokens)?);
    }
    Ok(rows)
}

// ---------------------------------------------------------------------
// cycle-record dumps
// ---------------------------------------------------------------------

/// Header of a per-repetition cycle dump (one line per member per
/// analysis time).
pub const RECORDS_HEADER: &str =
    "time member truth_x truth_y observation forecast_x forecast_y analysis_x analysis_y";

/// Writes the analysis-time records of one repetition in long format:
/// every member of every analysis time is one line, so the file stays
/// plain columnar text.
///
/// # Errors
/// I/O failures.
pub fn write_records(path: &Path, records: &[CycleRecord]) -> Result<(), PersistError> {
    let mut out = String::from(RECORDS_HEADER);
    for rec in records {
        let forecast = rec.forecast.values();
        let analysis = rec.analysis.values();
        for member in 0..rec.forecast.members() {
            let _ = write!(
                out,
                "\n{} {} {} {} {} {} {} {} {}",
                rec.time,
                member,
                rec.truth.x,
                rec.truth.y,
                rec.observation,
                forecast[(0, member)],
                forecast[(1, member)],
                analysis[(0, member)],
                analysis[(1, member)],
            );
        }
    }
    out.push('\n');
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a cycle dump written by [`write_records`], reassembling the
/// ensembles member by member.
///
/// # Errors
/// [`PersistError::Parse`] on schema violations (header mismatch, member
/// indices out of order, truth/observation changing within one time);
/// I/O failures.
pub fn read_records(path: &Path) -> Result<Vec<CycleRecord>, PersistError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == RECORDS_HEADER => {}
        Some((_, header)) => {
            return Err(parse_error(
                path,
                1,
                format!("header mismatch: expected {RECORDS_HEADER:?}, found {header:?}"),
            ))
        }
        None => return Err(parse_error(path, 0, "empty file")),
    }

    struct Group {
        time: usize,
        truth: State,
        observation: f64,
        forecast: Vec<[f64; 2]>,
        analysis: Vec<[f64; 2]>,
    }
    impl Group {
        fn into_record(self, path: &Path, line: usize) -> Result<CycleRecord, PersistError> {
            if self.forecast.len() < 2 {
                return Err(parse_error(
                    path,
                    line,
                    format!("time {} has fewer than 2 members", self.time),
                ));
            }
            let cols = self.forecast.len();
            let build = |pts: &[[f64; 2]]| {
                EnsembleMatrix::new(DMatrix::from_fn(2, cols, |r, c| pts[c][r]))
            };
            Ok(CycleRecord {
                time: self.time,
                truth: self.truth,
                forecast: build(&self.forecast),
                analysis: build(&self.analysis),
                observation: self.observation,
            })
        }
    }

    let mut records = Vec::new();
    let mut group: Option<Group> = None;
    let mut last_line = 1;
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        last_line = line_no;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 9 {
            return Err(parse_error(
                path,
                line_no,
                format!("expected 9 columns, found {}", tokens.len()),
            ));
        }
        let time: usize = tokens[0]
            .parse()
            .map_err(|_| parse_error(path, line_no, format!("bad time {:?}", tokens[0])))?;
        let member: usize = tokens[1]
            .parse()
            .map_err(|_| parse_error(path, line_no, format!("bad member {:?}", tokens[1])))?;
        let nums: Vec<f64> = tokens[2..]
            .iter()
            .enumerate()
            .map(|(i, t)| parse_f64(path, line_no, t, &format!("column {}", i + 3)))
            .collect::<Result<_, _>>()?;
        let (truth, observation) = (State::new(nums[0], nums[1]), nums[2]);

        let start_new = match &group {
            Some(g) => g.time != time,
            None => true,
        };
        if start_new {
            if let Some(g) = group.take() {
                records.push(g.into_record(path, line_no)?);
            }
            if member != 0 {
                return Err(parse_error(
                    path,
                    line_no,
                    format!("time {time} must start at member 0, found {member}"),
                ));
            }
            group = Some(Group {
                time,
                truth,
                observation,
                forecast: vec![],
                analysis: vec![],
            });
        }
        let g = group.as_mut().expect("group was just ensured");
        if member != g.forecast.len() {
            return Err(parse_error(
                path,
                line_no,
                format!("member {member} out of order (expected {})", g.forecast.len()),
            ));
        }
        if g.truth != truth || g.observation != observation {
            return Err(parse_error(
                path,
                line_no,
                format!("truth/observation changed within time {time}"),
            ));
        }
        g.forecast.push([nums[3], nums[4]]);
        g.analysis.push([nums[5], nums[6]]);
    }
    if let Some(g) = group.take() {
        records.push(g.into_record(path, last_line)?);
    }
    Ok(records)
}

// ---------------------------------------------------------------------
// training curves
// ---------------------------------------------------------------------

/// Header of a training-curve log.
pub const CURVE_HEADER: &str = "epoch mean_loss gamma";

/// Writes a per-epoch training trace.
///
/// # Errors
/// I/O failures.
pub fn write_training_curve(path: &Path, stats: &[EpochStats]) -> Result<(), PersistError> {
    let mut out = String::from(CURVE_HEADER);
    for s in stats {
        let _ = write!(out, "\n{} {} {}", s.epoch, s.mean_loss, s.gamma);
    }
    out.push('\n');
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a training trace written by [`write_training_curve`].
///
/// # Errors
/// [`PersistError::Parse`] on schema mismatch; I/O failures.
pub fn read_training_curve(path: &Path) -> Result<Vec<EpochStats>, PersistError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CURVE_HEADER => {}
        Some((_, header)) => {
            return Err(parse_error(
                path,
                1,
                format!("header mismatch: expected {CURVE_HEADER:?}, found {header:?}"),
            ))
        }
        None => return Err(parse_error(path, 0, "empty file")),
    }
    let mut stats = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 3 {
            return Err(parse_error(
                path,
                line_no,
                format!("expected 3 columns, found {}", tokens.len()),
            ));
        }
        stats.push(EpochStats {
            epoch: tokens[0]
                .parse()
                .map_err(|_| parse_error(path, line_no, format!("bad epoch {:?}", tokens[0])))?,
            mean_loss: parse_f64(path, line_no, tokens[1], "mean_loss")?,
            gamma: parse_f64(path, line_no, tokens[2], "gamma")?,
        });
    }
    Ok(stats)
}

// ---------------------------------------------------------------------
// autoencoder checkpoints
// ---------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct VersionedVae {
    format_version: u32,
    vae: VaeParams,
}

/// Writes an autoencoder checkpoint as versioned JSON.
///
/// # Errors
/// I/O or serialization failures.
pub fn write_vae(path: &Path, vae: &VaeParams) -> Result<(), PersistError> {
    let wrapped = VersionedVae {
        format_version: FORMAT_VERSION,
        vae: vae.clone(),
    };
    std::fs::write(path, serde_json::to_string(&wrapped)?)?;
    Ok(())
}

/// Reads an autoencoder checkpoint, enforcing the format version.
///
/// # Errors
/// [`PersistError::Version`] on a version mismatch; I/O or parse
/// failures.
pub fn read_vae(path: &Path) -> Result<VaeParams, PersistError> {
    let wrapped: VersionedVae = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if wrapped.format_version != FORMAT_VERSION {
        return Err(PersistError::Version {
            found: wrapped.format_version,
            expected: FORMAT_VERSION,
        });
    }
    Ok(wrapped.vae)
}

// ---------------------------------------------------------------------
// run manifests
// ---------------------------------------------------------------------

/// One failed repetition, with the rendered error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureNote {
    pub config: String,
    pub clima_idx: usize,
    pub rep_idx: usize,
    pub error: String,
}

/// Everything needed to audit and reproduce a run: seeds, the digest of
/// the resolved configuration, the software version, what was executed,
/// which repetitions failed, and which files were written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub crate_version: String,
    pub experiment: String,
    pub seed: u64,
    /// FNV-1a digest (hex) of the resolved configuration text.
    pub config_digest: String,
    /// Name of the swept parameter, when this run is one grid point.
    pub sweep_parameter: Option<String>,
    /// Grid value of this run, when swept.
    pub sweep_value: Option<f64>,
    /// Configuration kinds executed, in execution order.
    pub configs: Vec<String>,
    pub n_climatologies: usize,
    pub n_repetitions: usize,
    pub shared_truth: bool,
    pub failures: Vec<FailureNote>,
    /// Files written by the run, relative to the manifest's directory.
    pub outputs: Vec<String>,
}

/// Writes a manifest as pretty-printed JSON.
///
/// # Errors
/// I/O or serialization failures.
pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<(), PersistError> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a manifest, enforcing the format version.
///
/// # Errors
/// [`PersistError::Version`] on a version mismatch; I/O or parse
/// failures.
pub fn read_manifest(path: &Path) -> Result<Manifest, PersistError> {
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(PersistError::Version {
            found: manifest.format_version,
            expected: FORMAT_VERSION,
        });
    }
    Ok(manifest)
}

/// 64-bit FNV-1a digest of `bytes`, hex-encoded — a cheap, stable
/// fingerprint for configuration provenance (not cryptographic).
pub fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}
