//! Linearized predictions for the latent-space analysis.
//!
//! Expanding the encoder mean maps to first order around the true state
//! turns one latent analysis step into a plain Kalman update whose gain,
//! mean, and covariance can be written in closed form. This module
//! computes those predictions — finite-difference Jacobians of the
//! encoder means, predicted first and second moments of the latent
//! ensembles, and the implied analysis — and compares them against the
//! sample moments of actual encoded ensembles. The comparison is a
//! diagnostic for the cycling machinery: in the small-spread regime the
//! two must agree.
//!
//! Sign conventions follow the innovation-driven analysis: the
//! cross-covariance (`cross`) pairs latent state anomalies with
//! *sign-flipped* encoded-innovation anomalies, so it is directly the
//! numerator of the gain.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::vae::VaeParams;

/// Central-difference step for Jacobians of smooth maps on `f64` values
/// (near the optimal cube-root-of-machine-epsilon scale).
pub const FD_STEP: f64 = 1e-5;

/// Errors from the linearization diagnostics.
#[derive(Debug, Error)]
pub enum DiagnosticsError {
    /// The differentiated map produced a non-finite value.
    #[error("map produced a non-finite value while differentiating coordinate {coordinate}")]
    NonFinite {
        /// Input coordinate whose perturbation exposed the value.
        coordinate: usize,
    },
}

/// Jacobian of `f` at `x0` by central differences with step `h`.
///
/// # Panics
/// If `h` is not strictly positive or `f` changes output dimension.
///
/// # Errors
/// [`DiagnosticsError::NonFinite`] when `f` returns a non-finite value at
/// the base point or any perturbed point.
pub fn fd_jacobian<F>(f: F, x0: &DVector<f64>, h: f64) -> Result<DMatrix<f64>, DiagnosticsError>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let f0 = f(x0);
    if !f0.iter().all(|v| v.is_finite()) {
        return Err(DiagnosticsError::NonFinite { coordinate: 0 });
    }
    let (rows, cols) = (f0.len(), x0.len());
    let mut jac = DMatrix::zeros(rows, cols);
    for j in 0..cols {
        let mut up = x0.clone();
        up[j] += h;
        let mut down = x0.clone();
        down[j] -= h;
        let (f_up, f_down) = (f(&up), f(&down));
        assert_eq!(f_up.len(), rows, "map changed output dimension");
        assert_eq!(f_down.len(), rows, "map changed output dimension");
        for i in 0..rows {
            let slope = (f_up[i] - f_down[i]) / (2.0 * h);
            if !slope.is_finite() {
                return Err(DiagnosticsError::NonFinite { coordinate: j });
            }
            jac[(i, j)] = slope;
        }
    }
    Ok(jac)
}

/// Everything the linearized prediction is evaluated from: the encoders,
/// the expansion point (the true state), and the analysis inputs.
#[derive(Debug, Clone, Copy)]
pub struct LinearizationPoint<'a> {
    /// Encoder/decoder pair acting on states.
    pub state_vae: &'a VaeParams,
    /// Encoder acting on innovations; `None` means innovations enter the
    /// analysis unencoded (identity map, no conditional noise).
    pub innovation_vae: Option<&'a VaeParams>,
    /// True state the expansion is centered on.
    pub truth: &'a DVector<f64>,
    /// Observation being assimilated.
    pub observation: &'a DVector<f64>,
    /// Linear observation operator `H`.
    pub obs_operator: &'a DMatrix<f64>,
    /// Observation-error covariance `R`.
    pub obs_cov: &'a DMatrix<f64>,
    /// Forecast-error covariance of the state ensemble.
    pub forecast_cov: &'a DMatrix<f64>,
    /// Mean forecast error `E[x − truth]` of the state ensemble.
    pub mean_forecast_error: &'a DVector<f64>,
}

/// First and second moments of the latent ensembles predicted by the
/// first-order expansion, together with the expansion ingredients.
#[derive(Debug, Clone)]
pub struct PredictedMoments {
    /// Jacobian of the state-encoder mean at the truth (latent × state).
    pub d_mu1: DMatrix<f64>,
    /// Jacobian of the innovation-encoder mean at the mean innovation.
    pub d_mu2: DMatrix<f64>,
    /// State-encoder conditional covariance at the truth (diagonal).
    pub sigma_phi1: DMatrix<f64>,
    /// Innovation-encoder conditional covariance at the mean innovation.
    pub sigma_phi2: DMatrix<f64>,
    /// Predicted mean of the encoded state ensemble.
    pub mean_z: DVector<f64>,
    /// Predicted mean of the encoded per-member innovations.
    pub mean_g: DVector<f64>,
    /// Predicted covariance of the encoded state ensemble.
    pub cov_z: DMatrix<f64>,
    /// Predicted covariance of the encoded perturbed innovations.
    pub cov_f: DMatrix<f64>,
    /// Predicted covariance between latent state anomalies and the
    /// sign-flipped encoded-innovation anomalies (gain numerator).
    pub cross: DMatrix<f64>,
}

impl PredictedMoments {
    /// Assembles the moment formulas from explicit Jacobians and
    /// covariances:
    ///
    /// - `cov_z  = Dμ₁ P Dμ₁ᵀ + Σ₁`
    /// - `cov_f  = Dμ₂ R Dμ₂ᵀ + Dμ₂ H P Hᵀ Dμ₂ᵀ + Σ₂`
    /// - `cross  = Dμ₁ P Hᵀ Dμ₂ᵀ`
    ///
    /// Pure linear algebra; [`predict_latent_moments`] supplies the
    /// pieces evaluated on actual encoder towers.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        d_mu1: DMatrix<f64>,
        sigma_phi1: DMatrix<f64>,
        d_mu2: DMatrix<f64>,
        sigma_phi2: DMatrix<f64>,
        forecast_cov: &DMatrix<f64>,
        obs_operator: &DMatrix<f64>,
        obs_cov: &DMatrix<f64>,
        mean_z: DVector<f64>,
        mean_g: DVector<f64>,
    ) -> Self {
        assert_eq!(d_mu1.ncols(), forecast_cov.nrows(), "state dimension mismatch");
        assert_eq!(d_mu2.ncols(), obs_operator.nrows(), "observation dimension mismatch");
        let hp = obs_operator * forecast_cov;
        let hph = &hp * obs_operator.transpose();
        let cov_z = &d_mu1 * forecast_cov * d_mu1.transpose() + &sigma_phi1;
        let cov_f =
            &d_mu2 * obs_cov * d_mu2.transpose() + &d_mu2 * hph * d_mu2.transpose() + &sigma_phi2;
        let cross = &d_mu1 * hp.transpose() * d_mu2.transpose();
        PredictedMoments {
            d_mu1,
            d_mu2,
            sigma_phi1,
            sigma_phi2,
            mean_z,
            mean_g,
            cov_z,
            cov_f,
            cross,
        }
    }

    /// Kalman-style analysis implied by the predicted moments: gain
    /// `cross · cov_f⁻¹`, analysis mean `mean_z + gain · mean_g`, and
    /// analysis covariance `cov_z − gain · crossᵀ`.
    pub fn analysis(&self) -> PredictedAnalysis {
        let (inverse, regularization) = regularized_inverse(&self.cov_f);
        let gain = &self.cross * inverse;
        let analysis_mean = &self.mean_z + &gain * &self.mean_g;
        let analysis_cov = &self.cov_z - &gain * self.cross.transpose();
        PredictedAnalysis {
            gain,
            analysis_mean,
            analysis_cov,
            regularization,
        }
    }
}

/// Gain and analysis moments implied by [`PredictedMoments::analysis`].
#[derive(Debug, Clone)]
pub struct PredictedAnalysis {
    /// Predicted analysis gain (latent-state × latent-innovation).
    pub gain: DMatrix<f64>,
    /// Predicted post-analysis latent mean.
    pub analysis_mean: DVector<f64>,
    /// Predicted post-analysis latent covariance.
    pub analysis_cov: DMatrix<f64>,
    /// Diagonal jitter that had to be added before the innovation
    /// covariance factorized; `None` when the plain inverse succeeded.
    /// A `Some` value is the in-band warning that the inverse was
    /// regularized.
    pub regularization: Option<f64>,
}

/// Inverse of a symmetric positive semi-definite matrix, escalating a
/// diagonal jitter until the Cholesky factorization succeeds. Returns the
/// jitter that was needed, if any.
fn regularized_inverse(a: &DMatrix<f64>) -> (DMatrix<f64>, Option<f64>) {
    assert!(a.iter().all(|v| v.is_finite()), "non-finite covariance");
    assert_eq!(a.nrows(), a.ncols(), "covariance must be square");
    if let Some(chol) = Cholesky::new(a.clone()) {
        return (chol.inverse(), None);
    }
    let scale = a.diagonal().amax().max(1.0);
    let mut jitter = scale * 1e-12;
    // a finite symmetric matrix factorizes once the jitter dominates its
    // most negative eigenvalue, which |diag|-scaling reaches quickly
    for _ in 0..64 {
        let bumped = a + DMatrix::identity(a.nrows(), a.ncols()) * jitter;
        if let Some(chol) = Cholesky::new(bumped) {
            return (chol.inverse(), Some(jitter));
        }
        jitter *= 10.0;
    }
    unreachable!("jitter escalation failed on a finite symmetric matrix");
}

/// Predicts the latent-ensemble moments at a linearization point.
///
/// The state-encoder Jacobian and conditional covariance are evaluated at
/// the truth; the innovation-encoder ones at the mean innovation
/// `y − H·truth`. With `innovation_vae: None` the innovation map is the
/// identity with zero conditional covariance, which reduces the
/// predictions to the state-space Kalman quantities.
///
/// # Errors
/// [`DiagnosticsError::NonFinite`] when an encoder mean evaluates to a
/// non-finite value near the expansion point.
pub fn predict_latent_moments(
    point: &LinearizationPoint<'_>,
) -> Result<PredictedMoments, DiagnosticsError> {
    let vae1 = point.state_vae;
    let d_mu1 = fd_jacobian(|x| vae1.encode_mean(x), point.truth, FD_STEP)?;
    let sigma_phi1 = DMatrix::from_diagonal(&vae1.encode_moments(point.truth).1);
    let mean_innovation = point.observation - point.obs_operator * point.truth;
    let (mu2_center, d_mu2, sigma_phi2) = match point.innovation_vae {
        Some(vae2) => {
            let d_mu2 = fd_jacobian(|d| vae2.encode_mean(d), &mean_innovation, FD_STEP)?;
            let (mean, var) = vae2.encode_moments(&mean_innovation);
            (mean, d_mu2, DMatrix::from_diagonal(&var))
        }
        None => {
            let p = mean_innovation.len();
            (
                mean_innovation.clone(),
                DMatrix::identity(p, p),
                DMatrix::zeros(p, p),
            )
        }
    };
    let mean_z = vae1.encode_mean(point.truth) + &d_mu1 * point.mean_forecast_error;
    let mean_g = mu2_center - &d_mu2 * (point.obs_operator * point.mean_forecast_error);
    Ok(PredictedMoments::from_parts(
        d_mu1,
        sigma_phi1,
        d_mu2,
        sigma_phi2,
        point.forecast_cov,
        point.obs_operator,
        point.obs_cov,
        mean_z,
        mean_g,
    ))
}

/// Predicted analysis (gain, mean, covariance) at a linearization point.
///
/// # Errors
/// Same as [`predict_latent_moments`].
pub fn predict_latent_analysis(
    point: &LinearizationPoint<'_>,
) -> Result<PredictedAnalysis, DiagnosticsError> {
    Ok(predict_latent_moments(point)?.analysis())
}

/// Sample moments of actual latent ensembles, arranged like
/// [`PredictedMoments`] (same sign convention for `cross`).
#[derive(Debug, Clone)]
pub struct EnsembleMoments {
    /// Sample mean of the encoded state ensemble.
    pub mean_z: DVector<f64>,
    /// Sample mean of the encoded per-member innovations.
    pub mean_g: DVector<f64>,
    /// Sample covariance of the encoded state ensemble.
    pub cov_z: DMatrix<f64>,
    /// Sample covariance of the encoded perturbed innovations.
    pub cov_f: DMatrix<f64>,
    /// Sample covariance of latent state anomalies against sign-flipped
    /// encoded-innovation anomalies.
    pub cross: DMatrix<f64>,
}

impl EnsembleMoments {
    /// Sample moments of an encoded state ensemble `z` (latent × M), the
    /// encoded per-member innovations `f_m` (paired column-wise with
    /// `z`), and the encoded perturbed innovations `f_k` (latent × K).
    ///
    /// # Panics
    /// If `z` and `f_m` have different member counts or either sample has
    /// fewer than two columns.
    pub fn from_ensembles(z: &DMatrix<f64>, f_m: &DMatrix<f64>, f_k: &DMatrix<f64>) -> Self {
        assert_eq!(
            z.ncols(),
            f_m.ncols(),
            "state and innovation ensembles must pair member-for-member"
        );
        assert!(
            z.ncols() >= 2 && f_k.ncols() >= 2,
            "sample moments need at least two columns"
        );
        let members = z.ncols() as f64;
        let (mean_z, anoms_z) = center(z);
        let (mean_g, anoms_g) = center(f_m);
        let (_, anoms_fk) = center(f_k);
        let cov_z = &anoms_z * anoms_z.transpose() / (members - 1.0);
        let cov_f = &anoms_fk * anoms_fk.transpose() / (f_k.ncols() as f64 - 1.0);
        let cross = -(&anoms_z * anoms_g.transpose()) / (members - 1.0);
        EnsembleMoments {
            mean_z,
            mean_g,
            cov_z,
            cov_f,
            cross,
        }
    }
}

/// Column mean and anomaly matrix of a sample with columns as draws.
fn center(sample: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = sample.ncols() as f64;
    let mean = DVector::from_iterator(sample.nrows(), sample.row_iter().map(|r| r.sum() / n));
    let mut anoms = sample.clone();
    for mut col in anoms.column_iter_mut() {
        col -= &mean;
    }
    (mean, anoms)
}

/// Side-by-side comparison of predicted and sample latent moments with
/// relative discrepancy norms. `Display` renders a text block suitable
/// for test logs and command-line output.
#[derive(Debug, Clone)]
pub struct LinearizationReport {
    /// Closed-form predictions and their ingredients.
    pub predicted: PredictedMoments,
    /// Analysis implied by the predictions.
    pub analysis: PredictedAnalysis,
    /// Sample moments of the actual ensembles.
    pub empirical: EnsembleMoments,
    /// `‖sample − predicted‖ / ‖predicted‖` for the mean of `z`.
    pub mean_z_discrepancy: f64,
    /// Same for the mean of the encoded per-member innovations.
    pub mean_g_discrepancy: f64,
    /// Same (Frobenius) for the latent state covariance.
    pub cov_z_discrepancy: f64,
    /// Same for the perturbed-innovation covariance.
    pub cov_f_discrepancy: f64,
    /// Same for the cross covariance.
    pub cross_discrepancy: f64,
}

/// `‖a − b‖ / ‖b‖`, guarding a zero reference with the machine minimum.
fn relative_norm(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

impl LinearizationReport {
    /// Builds the comparison, computing the analysis and discrepancy
    /// norms from the two moment sets.
    pub fn new(predicted: PredictedMoments, empirical: EnsembleMoments) -> Self {
        let analysis = predicted.analysis();
        let as_matrix = |v: &DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        let mean_z_discrepancy =
            relative_norm(&as_matrix(&empirical.mean_z), &as_matrix(&predicted.mean_z));
        let mean_g_discrepancy =
            relative_norm(&as_matrix(&empirical.mean_g), &as_matrix(&predicted.mean_g));
        let cov_z_discrepancy = relative_norm(&empirical.cov_z, &predicted.cov_z);
        let cov_f_discrepancy = relative_norm(&empirical.cov_f, &predicted.cov_f);
        let cross_discrepancy = relative_norm(&empirical.cross, &predicted.cross);
        LinearizationReport {
            predicted,
            analysis,
            empirical,
            mean_z_discrepancy,
            mean_g_discrepancy,
            cov_z_discrepancy,
            cov_f_discrepancy,
            cross_discrepancy,
        }
    }

    /// True when every number in the report — predictions, analysis,
    /// sample moments, and discrepancies — is finite.
    pub fn all_finite(&self) -> bool {
        let mats = [
            &self.predicted.d_mu1,
            &self.predicted.d_mu2,
            &self.predicted.sigma_phi1,
            &self.predicted.sigma_phi2,
            &self.predicted.cov_z,
            &self.predicted.cov_f,
            &self.predicted.cross,
            &self.analysis.gain,
            &self.analysis.analysis_cov,
            &self.empirical.cov_z,
            &self.empirical.cov_f,
            &self.empirical.cross,
        ];
        let vecs = [
            &self.predicted.mean_z,
            &self.predicted.mean_g,
            &self.analysis.analysis_mean,
            &self.empirical.mean_z,
            &self.empirical.mean_g,
        ];
        let scalars = [
            self.mean_z_discrepancy,
            self.mean_g_discrepancy,
            self.cov_z_discrepancy,
            self.cov_f_discrepancy,
            self.cross_discrepancy,
        ];
        mats.iter().all(|m| m.iter().all(|v| v.is_finite()))
            && vecs.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && scalars.iter().all(|s| s.is_finite())
    }
}

/// Renders a matrix row-by-row with 4 significant digits.
fn fmt_matrix(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|row| {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.4e}")).collect();
            format!("[{}]", cells.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

fn fmt_vector(v: &DVector<f64>) -> String {
    let cells: Vec<String> = v.iter().map(|x| format!("{x:.4e}")).collect();
    format!("[{}]", cells.join(", "))
}

impl std::fmt::Display for LinearizationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "linearized latent analysis")?;
        writeln!(f, "  state-encoder Jacobian:      {}", fmt_matrix(&self.predicted.d_mu1))?;
        writeln!(f, "  innovation-encoder Jacobian: {}", fmt_matrix(&self.predicted.d_mu2))?;
        writeln!(f, "  state conditional cov:       {}", fmt_matrix(&self.predicted.sigma_phi1))?;
        writeln!(f, "  innovation conditional cov:  {}", fmt_matrix(&self.predicted.sigma_phi2))?;
        writeln!(f, "  gain:                        {}", fmt_matrix(&self.analysis.gain))?;
        match self.analysis.regularization {
            Some(jitter) => writeln!(
                f,
                "  WARNING: innovation covariance was singular; inverted with diagonal jitter {jitter:.2e}"
            )?,
            None => writeln!(f, "  innovation covariance inverted without regularization")?,
        }
        writeln!(f, "  analysis mean:               {}", fmt_vector(&self.analysis.analysis_mean))?;
        writeln!(f, "  analysis covariance:         {}", fmt_matrix(&self.analysis.analysis_cov))?;
        writeln!(f, "  predicted vs sample (relative discrepancy):")?;
        writeln!(
            f,
            "    mean(z):  {} vs {}  ({:.3e})",
            fmt_vector(&self.predicted.mean_z),
            fmt_vector(&self.empirical.mean_z),
            self.mean_z_discrepancy
        )?;
        writeln!(
            f,
            "    mean(g):  {} vs {}  ({:.3e})",
            fmt_vector(&self.predicted.mean_g),
            fmt_vector(&self.empirical.mean_g),
            self.mean_g_discrepancy
        )?;
        writeln!(
            f,
            "    cov(z):   {} vs {}  ({:.3e})",
            fmt_matrix(&self.predicted.cov_z),
            fmt_matrix(&self.empirical.cov_z),
            self.cov_z_discrepancy
        )?;
        writeln!(
            f,
            "    cov(f):   {} vs {}  ({:.3e})",
            fmt_matrix(&self.predicted.cov_f),
            fmt_matrix(&self.empirical.cov_f),
            self.cov_f_discrepancy
        )?;
        write!(
            f,
            "    cross:    {} vs {}  ({:.3e})",
            fmt_matrix(&self.predicted.cross),
            fmt_matrix(&self.empirical.cross),
            self.cross_discrepancy
        )
    }
}
