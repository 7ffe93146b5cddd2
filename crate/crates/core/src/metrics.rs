//! Evaluation statistics: CRPS, RMSE, time-series spread, weighted
//! correlations, per-variable series extraction, and BCa bootstrap
//! confidence intervals.
//!
//! Scores are computed per repetition and aggregated across repetitions;
//! confidence intervals resample whole repetitions (the experimental unit)
//! with replacement.

use crate::etkf::EnsembleMatrix;
use crate::model::{polar_angle, State};
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("state at the origin has no radius/angle decomposition")]
    Origin,
    #[error("series lengths disagree: {0}")]
    LengthMismatch(&'static str),
    #[error("no successful repetitions to evaluate")]
    NoData,
}

/// Scalar variables extracted from a 2-D state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    X,
    Y,
    Radius,
    Angle,
}

impl Variable {
    pub const ALL: [Variable; 4] = [Variable::X, Variable::Y, Variable::Radius, Variable::Angle];

    pub fn name(&self) -> &'static str {
        match self {
            Variable::X => "x",
            Variable::Y => "y",
            Variable::Radius => "radius",
            Variable::Angle => "angle",
        }
    }

    /// Extracts this variable from a state.
    ///
    /// # Errors
    /// [`MetricsError::Origin`] for radius/angle at the origin.
    pub fn of(&self, s: &State) -> Result<f64, MetricsError> {
        let (x, y, radius, angle) = to_variables(s)?;
        Ok(match self {
            Variable::X => x,
            Variable::Y => y,
            Variable::Radius => radius,
            Variable::Angle => angle,
        })
    }
}

impl std::fmt::Display for Variable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Decomposes a state into (x, y, radius, angle) with the angle in
/// [0, 2π).
///
/// # Errors
/// [`MetricsError::Origin`] when the state is exactly at the origin,
/// where radius is zero and the angle is undefined.
pub fn to_variables(s: &State) -> Result<(f64, f64, f64, f64), MetricsError> {
    let radius = s.radius();
    if radius == 0.0 {
        return Err(MetricsError::Origin);
    }
    Ok((s.x, s.y, radius, polar_angle(*s)))
}

/// One variable's evaluation data over the analysis times of a single
/// repetition: the truth value, every member's value (for CRPS), and the
/// value of the ensemble-mean state (for RMSE/correlation/spread — the
/// variable of the mean, not the mean of the variable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSeries {
    pub variable: Variable,
    pub truth: Vec<f64>,
    pub members: Vec<Vec<f64>>,
    pub mean_series: Vec<f64>,
}

impl VariableSeries {
    /// # Panics
    /// If lengths disagree, the series is empty, or a member list is
    /// empty.
    pub fn new(
        variable: Variable,
        truth: Vec<f64>,
        members: Vec<Vec<f64>>,
        mean_series: Vec<f64>,
    ) -> Self {
        assert!(!truth.is_empty(), "empty series");
        assert_eq!(truth.len(), members.len(), "member rows must match truth");
        assert_eq!(truth.len(), mean_series.len(), "mean series must match truth");
        assert!(members.iter().all(|m| !m.is_empty()), "empty ensemble row");
        VariableSeries {
            variable,
            truth,
            members,
            mean_series,
        }
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    /// CRPS at each analysis time.
    pub fn crps_per_time(&self) -> Vec<f64> {
        self.members
            .iter()
            .zip(self.truth.iter())
            .map(|(m, &t)| crps(m, t))
            .collect()
    }
}

/// Builds the per-variable series of a repetition from truth states and
/// ensembles recorded at the analysis times.
///
/// # Errors
/// [`MetricsError::Origin`] if any truth state, member, or ensemble mean
/// sits exactly at the origin (radius/angle undefined there).
pub fn series_from_states(
    variable: Variable,
    truth: &[State],
    ensembles: &[EnsembleMatrix],
) -> Result<VariableSeries, MetricsError> {
    if truth.len() != ensembles.len() {
        return Err(MetricsError::LengthMismatch("truth vs ensembles"));
    }
    let mut truth_vals = Vec::with_capacity(truth.len());
    let mut members = Vec::with_capacity(truth.len());
    let mut mean_series = Vec::with_capacity(truth.len());
    for (t, ens) in truth.iter().zip(ensembles.iter()) {
        truth_vals.push(variable.of(t)?);
        let mut row = Vec::with_capacity(ens.members());
        for col in ens.values().column_iter() {
            row.push(variable.of(&State::new(col[0], col[1]))?);
        }
        members.push(row);
        let mean = ens.mean();
        mean_series.push(variable.of(&State::new(mean[0], mean[1]))?);
    }
    Ok(VariableSeries::new(variable, truth_vals, members, mean_series))
}

/// Continuous ranked probability score of an ensemble against a scalar
/// truth: the exact integral of (empirical CDF − step at truth)²,
/// computed piecewise on the sorted ensemble.
///
/// # Panics
/// On an empty ensemble or non-finite inputs.
pub fn crps(ensemble_values: &[f64], truth: f64) -> f64 {
    let m = ensemble_values.len();
    assert!(m >= 1, "CRPS of an empty ensemble is undefined");
    assert!(
        truth.is_finite() && ensemble_values.iter().all(|v| v.is_finite()),
        "CRPS inputs must be finite"
    );
    let mut sorted = ensemble_values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // walk the breakpoints (members and the truth) left to right; between
    // consecutive breakpoints the integrand (F(w) − 1{w ≥ truth})² is
    // constant
    let mut total = 0.0;
    let mut below = 0usize; // members strictly left of the current point
    let mut prev: Option<f64> = None;
    let mut points: Vec<f64> = sorted.clone();
    points.push(truth);
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for &p in &points {
        if let Some(q) = prev {
            if p > q {
                let f = below as f64 / m as f64;
                let h = if q >= truth { 1.0 } else { 0.0 };
                total += (f - h).powi(2) * (p - q);
            }
        }
        // advance the member count past p
        while below < m && sorted[below] <= p {
            below += 1;
        }
        prev = Some(p);
    }
    total
}

/// CRPS with the values unwrapped to the truth's side of a periodic
/// domain: each value is replaced by `truth + wrapped(value − truth)`
/// with the difference folded into (−period/2, period/2]. Behind this
/// transform the score is the plain [`crps`].
pub fn crps_circular(ensemble_values: &[f64], truth: f64, period: f64) -> f64 {
    assert!(period > 0.0, "period must be positive");
    let unwrap = |v: f64| {
        let mut d = (v - truth) % period;
        if d > period / 2.0 {
            d -= period;
        } else if d <= -period / 2.0 {
            d += period;
        }
        truth + d
    };
    let unwrapped: Vec<f64> = ensemble_values.iter().map(|&v| unwrap(v)).collect();
    crps(&unwrapped, truth)
}

/// Root-mean-square error of the mean series against the truth, and the
/// sample standard deviation (1/(n−1)) of the mean series over time.
///
/// # Panics
/// On empty or mismatched series.
pub fn rmse_and_std(truth: &[f64], mean_series: &[f64]) -> (f64, f64) {
    assert!(!truth.is_empty(), "empty series");
    assert_eq!(truth.len(), mean_series.len(), "series lengths must match");
    let n = truth.len() as f64;
    let rmse = (truth
        .iter()
        .zip(mean_series.iter())
        .map(|(t, m)| (m - t).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let std = sample_std(mean_series);
    (rmse, std)
}

/// Sample standard deviation with the 1/(n−1) convention (0 for a
/// single-element series).
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
}

/// Two-sample energy distance between point clouds (one point per
/// column): `2·E|X−Y| − E|X−X′| − E|Y−Y′|` with plain V-statistic means.
/// Zero iff the clouds coincide as distributions; small values mean the
/// clouds are statistically alike. Used to score how well decoded prior
/// samples reproduce a training manifold.
pub fn energy_distance(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    assert_eq!(a.nrows(), b.nrows(), "point dimensions must match");
    assert!(a.ncols() > 0 && b.ncols() > 0, "clouds must be non-empty");
    let mean_cross = |p: &nalgebra::DMatrix<f64>, q: &nalgebra::DMatrix<f64>| {
        let mut acc = 0.0;
        for i in 0..p.ncols() {
            for j in 0..q.ncols() {
                let mut d2 = 0.0;
                for r in 0..p.nrows() {
                    let d = p[(r, i)] - q[(r, j)];
                    d2 += d * d;
                }
                acc += d2.sqrt();
            }
        }
        acc / (p.ncols() * q.ncols()) as f64
    };
    2.0 * mean_cross(a, b) - mean_cross(a, a) - mean_cross(b, b)
}

/// Pearson correlation of two equal-length series; `None` when either
/// series has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len(), "series lengths must match");
    let n = a.len() as f64;
    if a.len() < 2 {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va <= 0.0 || vb <= 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

/// One repetition's (truth, ensemble-mean) series pair for a variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPair {
    pub truth: Vec<f64>,
    pub mean: Vec<f64>,
}

impl SeriesPair {
    pub fn new(truth: Vec<f64>, mean: Vec<f64>) -> Self {
        assert_eq!(truth.len(), mean.len(), "series lengths must match");
        assert!(!truth.is_empty(), "empty series");
        SeriesPair { truth, mean }
    }

    fn weight(&self) -> f64 {
        sample_std(&self.truth) * sample_std(&self.mean)
    }
}

/// Correlation aggregated over repetitions with weights σ_truth·σ_mean:
/// ρ = Σ_j ρ_j σᵗ_j σᶠ_j / Σ_j σᵗ_j σᶠ_j. Repetitions with a zero weight
/// (constant truth or constant mean) contribute nothing; when every
/// weight is zero the correlation is undefined and `None` is returned.
pub fn weighted_correlation(pairs: &[SeriesPair]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for pair in pairs {
        let w = pair.weight();
        if w > 0.0 {
            if let Some(rho) = pearson(&pair.truth, &pair.mean) {
                num += rho * w;
                den += w;
            }
        }
    }
    if den > 0.0 {
        Some(num / den)
    } else {
        None
    }
}

/// The same weighted correlation, but with the weights and correlations
/// evaluated on `b` bootstrap resamples of the repetitions: each resample
/// concatenates its drawn repetitions into one long series, and the
/// resample-level correlations are combined with σᵗ_j·σᶠ_j weights.
/// `None` when no resample produces a defined correlation.
pub fn bootstrap_weighted_correlation(
    pairs: &[SeriesPair],
    b: usize,
    stream: &mut RngStream,
) -> Option<f64> {
    assert!(!pairs.is_empty());
    let mut num = 0.0;
    let mut den = 0.0;
    for _ in 0..b {
        let mut truth = Vec::new();
        let mut mean = Vec::new();
        for _ in 0..pairs.len() {
            let pick = stream.uniform_index(pairs.len());
            truth.extend_from_slice(&pairs[pick].truth);
            mean.extend_from_slice(&pairs[pick].mean);
        }
        let w = sample_std(&truth) * sample_std(&mean);
        if w > 0.0 {
            if let Some(rho) = pearson(&truth, &mean) {
                num += rho * w;
                den += w;
            }
        }
    }
    if den > 0.0 {
        Some(num / den)
    } else {
        None
    }
}

/// A bootstrap confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    /// Number of resamples with a defined statistic (out of the requested
    /// count).
    pub resamples: usize,
    /// Set when the interval hit an edge case: the acceleration
    /// denominator crossed zero or the interval failed to bracket the
    /// estimate.
    pub flagged: bool,
}

/// Bias-corrected and accelerated bootstrap interval for a statistic of
/// `n` exchangeable units addressed by index. The statistic receives the
/// index multiset of a resample (or the jackknife's leave-one-out sets)
/// and may return `None` where it is undefined; such resamples are
/// skipped. Returns `None` only when the statistic is undefined on the
/// full sample.
///
/// Bias correction comes from the bootstrap CDF at the point estimate,
/// acceleration from jackknife skewness, and the bounds are order
/// statistics of the resampled values at the adjusted quantiles
/// (1-based index ⌈q·B⌉).
pub fn bca_interval_indexed<F>(
    n: usize,
    statistic: F,
    level: f64,
    b: usize,
    stream: &mut RngStream,
) -> Option<BootstrapResult>
where
    F: Fn(&[usize]) -> Option<f64>,
{
    assert!(n >= 2, "need at least two units to resample");
    assert!(b >= 2, "need at least two resamples");
    assert!(0.0 < level && level < 1.0, "level must be in (0,1)");

    let full: Vec<usize> = (0..n).collect();
    let estimate = statistic(&full)?;

    let mut scratch = vec![0usize; n];
    let mut stats = Vec::with_capacity(b);
    for _ in 0..b {
        for slot in scratch.iter_mut() {
            *slot = stream.uniform_index(n);
        }
        if let Some(v) = statistic(&scratch) {
            stats.push(v);
        }
    }
    if stats.is_empty() {
        return Some(BootstrapResult {
            estimate,
            lower: estimate,
            upper: estimate,
            resamples: 0,
            flagged: true,
        });
    }
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let kept = stats.len();

    // degenerate data: every resample reproduces the point value
    if stats[kept - 1] == stats[0] && stats[0] == estimate {
        return Some(BootstrapResult {
            estimate,
            lower: estimate,
            upper: estimate,
            resamples: kept,
            flagged: false,
        });
    }

    let normal = Normal::new(0.0, 1.0).unwrap();
    let below = stats.iter().filter(|&&v| v < estimate).count();
    let frac = (below as f64 / kept as f64).clamp(0.5 / kept as f64, 1.0 - 0.5 / kept as f64);
    let z0 = normal.inverse_cdf(frac);

    // jackknife acceleration
    let mut jack = Vec::with_capacity(n);
    let mut loo = Vec::with_capacity(n - 1);
    for skip in 0..n {
        loo.clear();
        loo.extend((0..n).filter(|&i| i != skip));
        if let Some(v) = statistic(&loo) {
            jack.push(v);
        }
    }
    let accel = if jack.len() >= 2 {
        let jm = jack.iter().sum::<f64>() / jack.len() as f64;
        let num: f64 = jack.iter().map(|v| (jm - v).powi(3)).sum();
        let den: f64 = jack.iter().map(|v| (jm - v).powi(2)).sum::<f64>().powf(1.5);
        if den > 0.0 {
            num / (6.0 * den)
        } else {
            0.0
        }
    } else {
        0.0
    };

    let alpha = (1.0 - level) / 2.0;
    let mut flagged = false;
    let mut adjusted = |tail: f64| -> f64 {
        let z = normal.inverse_cdf(tail);
        let denom = 1.0 - accel * (z0 + z);
        if denom <= 0.0 {
            flagged = true;
            // acceleration breakdown: fall back to the percentile tail
            return tail;
        }
        normal.cdf(z0 + (z0 + z) / denom)
    };
    let q_lo = adjusted(alpha);
    let q_hi = adjusted(1.0 - alpha);

    let order = |q: f64| -> f64 {
        let k = ((q * kept as f64).ceil() as usize).clamp(1, kept);
        stats[k - 1]
    };
    let lower = order(q_lo);
    let upper = order(q_hi);
    if !(lower <= estimate && estimate <= upper) {
        flagged = true;
    }
    Some(BootstrapResult {
        estimate,
        lower,
        upper,
        resamples: kept,
        flagged,
    })
}

/// BCa interval for a statistic of scalar samples.
pub fn bca_interval<F>(
    samples: &[f64],
    statistic: F,
    level: f64,
    b: usize,
    stream: &mut RngStream,
) -> BootstrapResult
where
    F: Fn(&[f64]) -> f64,
{
    let values: Vec<f64> = samples.to_vec();
    bca_interval_indexed(
        samples.len(),
        |idx| {
            let picked: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
            Some(statistic(&picked))
        },
        level,
        b,
        stream,
    )
    .expect("scalar statistic is always defined")
}

/// Aggregated evaluation of one variable across repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableMetrics {
    pub variable: Variable,
    /// Mean CRPS over all (time, repetition) pairs with its interval.
    pub crps: BootstrapResult,
    /// Mean over repetitions of the per-repetition RMSE.
    pub rmse: f64,
    /// Mean over repetitions of the per-repetition time-series standard
    /// deviation of the ensemble-mean series.
    pub std: f64,
    /// Weighted correlation over repetitions; `None` when undefined
    /// (constant truth).
    pub corr: Option<f64>,
    pub corr_interval: Option<BootstrapResult>,
    /// The bootstrap-sample-weighted correlation variant.
    pub corr_bootweighted: Option<f64>,
}

/// Defaults used across the evaluation: 999 resamples at the 90% level.
pub const BOOTSTRAP_RESAMPLES: usize = 999;
pub const CONFIDENCE_LEVEL: f64 = 0.90;

/// Evaluates one variable across repetitions. `series` holds one
/// [`VariableSeries`] per repetition (all for the same variable).
///
/// # Panics
/// If `series` is empty or mixes variables.
pub fn evaluate_variable(
    series: &[VariableSeries],
    level: f64,
    b: usize,
    stream: &mut RngStream,
) -> VariableMetrics {
    assert!(!series.is_empty(), "no repetitions to evaluate");
    let variable = series[0].variable;
    assert!(
        series.iter().all(|s| s.variable == variable),
        "mixed variables in one evaluation"
    );

    // per-repetition aggregates
    let rep_crps: Vec<f64> = series
        .iter()
        .map(|s| {
            let per_time = s.crps_per_time();
            per_time.iter().sum::<f64>() / per_time.len() as f64
        })
        .collect();
    let rep_rmse_std: Vec<(f64, f64)> = series
        .iter()
        .map(|s| rmse_and_std(&s.truth, &s.mean_series))
        .collect();
    let pairs: Vec<SeriesPair> = series
        .iter()
        .map(|s| SeriesPair::new(s.truth.clone(), s.mean_series.clone()))
        .collect();

    let n = series.len();
    let crps = if n >= 2 {
        bca_interval(&rep_crps, |v| v.iter().sum::<f64>() / v.len() as f64, level, b, stream)
    } else {
        BootstrapResult {
            estimate: rep_crps[0],
            lower: rep_crps[0],
            upper: rep_crps[0],
            resamples: 0,
            flagged: false,
        }
    };
    let rmse = rep_rmse_std.iter().map(|&(r, _)| r).sum::<f64>() / n as f64;
    let std = rep_rmse_std.iter().map(|&(_, s)| s).sum::<f64>() / n as f64;

    let corr = weighted_correlation(&pairs);
    let corr_interval = if corr.is_some() && n >= 2 {
        bca_interval_indexed(
            n,
            |idx| {
                let picked: Vec<SeriesPair> = idx.iter().map(|&i| pairs[i].clone()).collect();
                weighted_correlation(&picked)
            },
            level,
            b,
            stream,
        )
    } else {
        None
    };
    let corr_bootweighted = bootstrap_weighted_correlation(&pairs, b, stream);

    VariableMetrics {
        variable,
        crps,
        rmse,
        std,
        corr,
        corr_interval,
        corr_bootweighted,
    }
}
