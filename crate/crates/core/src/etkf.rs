//! Ensemble transform Kalman analysis kernels.
//!
//! Two entry points compute the same analysis through different inputs:
//!
//! - [`etkf_standard`] takes the observation, a linear observation operator,
//!   and an error covariance, and applies the square-root update implied by
//!   the exact Gaussian analysis: the mean moves by the Kalman gain applied
//!   to the mean innovation, and the anomalies are right-multiplied by the
//!   symmetric transform `T = (I_M − Ŷᵀ C⁻¹ Ŷ)^{1/2}` with
//!   `C = Ŷ Ŷᵀ + R` and `Ŷ` the normalized observation-space anomalies.
//!   `T` reproduces the analysis covariance of the exact filter for any
//!   observation dimension, maps the all-ones vector to itself (anomalies
//!   stay centered), and never increases the ensemble spread.
//!
//! - [`etkf_innovation`] is observation-operator-free: it consumes an
//!   ensemble of unperturbed innovations (one per member) together with a
//!   large sample of perturbed innovations whose anomaly covariance stands
//!   in for `C` — no `H`, no `R`, no Gaussian assumption on the error law.
//!   Because the per-member innovations are sign-flipped observations
//!   (`y − H·x`), the gain term enters with a minus sign; the transform is
//!   sign-free. The same kernel runs in state space or in a VAE latent
//!   space; only the inputs change.
//!
//! Sampling noise can make the implied analysis covariance indefinite; the
//! eigenvalues of `I − G` are clipped at zero before the matrix square
//! root, and singular values of `C` below `1e-10·max` are floored before
//! inversion.

use crate::rng::RngStream;
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative floor applied to singular values of the innovation covariance
/// before inversion.
pub const SINGULAR_VALUE_FLOOR: f64 = 1e-10;

/// Symmetry tolerance accepted by [`svd_psd`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum EtkfError {
    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("observation error covariance is not symmetric positive definite")]
    NotSpd,
    #[error("innovation sample carries no signal (zero covariance)")]
    Degenerate,
}

/// An ensemble laid out with members as columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMatrix(DMatrix<f64>);

impl EnsembleMatrix {
    /// # Panics
    /// If there are fewer than two members or the dimension is zero.
    pub fn new(values: DMatrix<f64>) -> Self {
        assert!(values.ncols() >= 2, "an ensemble needs at least 2 members");
        assert!(values.nrows() >= 1, "an ensemble needs a state dimension");
        EnsembleMatrix(values)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn members(&self) -> usize {
        self.0.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.0
    }

    pub fn mean(&self) -> DVector<f64> {
        let m = self.members() as f64;
        DVector::from_iterator(self.dim(), self.0.row_iter().map(|r| r.sum() / m))
    }

    /// Member deviations from the ensemble mean (zero row sums).
    pub fn anomalies(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let mut a = self.0.clone();
        for mut col in a.column_iter_mut() {
            col -= &mean;
        }
        a
    }

    /// Sample covariance with the `1/(M−1)` convention.
    pub fn covariance(&self) -> DMatrix<f64> {
        let a = self.anomalies();
        &a * a.transpose() / (self.members() as f64 - 1.0)
    }
}

/// Innovation ensembles driving [`etkf_innovation`]: one unperturbed
/// innovation per member (`per_member`, dim × M) and a large sample of
/// perturbed innovations (`sampled`, dim × K) whose anomaly covariance
/// estimates the innovation covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnovationSet {
    per_member: DMatrix<f64>,
    sampled: DMatrix<f64>,
}

impl InnovationSet {
    /// # Panics
    /// If dimensions disagree, `K < 4·M`, or any entry is non-finite.
    pub fn new(per_member: DMatrix<f64>, sampled: DMatrix<f64>) -> Self {
        assert_eq!(
            per_member.nrows(),
            sampled.nrows(),
            "innovation dimensions must agree"
        );
        assert!(
            sampled.ncols() >= 4 * per_member.ncols(),
            "perturbed innovation sample must outnumber members at least 4:1 (K={} M={})",
            sampled.ncols(),
            per_member.ncols()
        );
        assert!(
            per_member.iter().all(|v| v.is_finite()) && sampled.iter().all(|v| v.is_finite()),
            "innovations must be finite"
        );
        InnovationSet {
            per_member,
            sampled,
        }
    }

    pub fn members(&self) -> usize {
        self.per_member.ncols()
    }

    pub fn sample_size(&self) -> usize {
        self.sampled.ncols()
    }

    pub fn obs_dim(&self) -> usize {
        self.per_member.nrows()
    }

    pub fn per_member(&self) -> &DMatrix<f64> {
        &self.per_member
    }

    pub fn sampled(&self) -> &DMatrix<f64> {
        &self.sampled
    }
}

/// Builds the innovation ensembles for an observation `y`: per member
/// `y − H·x_m`, and `K` perturbed draws `y + ε_k − H·x_{m_k}` with `m_k`
/// uniform over members. Per draw, the member index is consumed from the
/// stream before the noise vector.
pub fn build_innovations<F>(
    ensemble: &EnsembleMatrix,
    y: &DVector<f64>,
    h: &DMatrix<f64>,
    mut noise: F,
    k: usize,
    stream: &mut RngStream,
) -> InnovationSet
where
    F: FnMut(&mut RngStream) -> DVector<f64>,
{
    assert_eq!(h.ncols(), ensemble.dim(), "operator/ensemble mismatch");
    assert_eq!(h.nrows(), y.len(), "operator/observation mismatch");
    let m = ensemble.members();
    let hx = h * ensemble.values();
    let mut per_member = DMatrix::zeros(y.len(), m);
    for c in 0..m {
        for r in 0..y.len() {
            per_member[(r, c)] = y[r] - hx[(r, c)];
        }
    }
    let mut sampled = DMatrix::zeros(y.len(), k);
    for col in 0..k {
        let pick = stream.uniform_index(m);
        let eps = noise(stream);
        assert_eq!(eps.len(), y.len(), "noise dimension mismatch");
        for r in 0..y.len() {
            sampled[(r, col)] = y[r] + eps[r] - hx[(r, pick)];
        }
    }
    InnovationSet::new(per_member, sampled)
}

/// Eigendecomposition of a symmetric positive semi-definite matrix:
/// returns orthonormal `U` and eigenvalues `s ≥ 0` sorted descending
/// (tiny negative eigenvalues from rounding are clipped to zero).
pub fn svd_psd(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>), EtkfError> {
    assert_eq!(a.nrows(), a.ncols(), "matrix must be square");
    let scale = a.iter().fold(1.0f64, |acc, &v| acc.max(v.abs()));
    let mut asym = 0.0f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            asym = asym.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_TOLERANCE * scale {
        return Err(EtkfError::NotSymmetric(asym));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap()
    });
    let n = a.nrows();
    let u = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    let s = DVector::from_fn(n, |r, _| eig.eigenvalues[order[r]].max(0.0));
    Ok((u, s))
}

/// Spectral coefficient of the anomaly transform. With `A = S^{−1/2}B/√(M−1)`
/// and `W = AAᵀ`, the member-space square root `(I_M − AᵀA)^{1/2}` (negative
/// eigenvalues clipped to zero) equals `I_M + Aᵀ g(W) A`, where `g` maps each
/// eigenvalue `λ` of `W` to the value returned here: eigenvalue `λ` of `AᵀA`
/// turns into the factor `1 + λ·g(λ) = √(max(0, 1−λ))`, and directions
/// outside `range(Aᵀ)` are left untouched.
fn transform_coefficient(lambda: f64) -> f64 {
    if lambda <= 1.0 {
        // algebraically (√(1−λ) − 1)/λ, written without the cancellation
        -1.0 / (1.0 + (1.0 - lambda).max(0.0).sqrt())
    } else {
        // the clipped branch: the factor √(1−λ) is replaced by zero
        -1.0 / lambda
    }
}

/// Floors the spectrum at `SINGULAR_VALUE_FLOOR · max` and inverts it;
/// errors when the whole spectrum is zero.
fn inverted_spectrum(s: &DVector<f64>) -> Result<DVector<f64>, EtkfError> {
    let s_max = s.max();
    if !(s_max > 0.0) {
        return Err(EtkfError::Degenerate);
    }
    let floor = SINGULAR_VALUE_FLOOR * s_max;
    Ok(s.map(|v| 1.0 / v.max(floor)))
}

/// Shared update kernel: given the state-side ensemble, the normalized
/// cross block `Ĝ` (obs_dim × M, equal to `Uᵀ·(signed anomalies)/√(M−1)`
/// in the caller's sign convention), the mean innovation already rotated
/// (`Uᵀ·d̄`), and the inverted spectrum, produces the analysis ensemble.
fn apply_update(
    ensemble: &EnsembleMatrix,
    b: &DMatrix<f64>,
    d_rot: &DVector<f64>,
    inv_s: &DVector<f64>,
) -> EnsembleMatrix {
    let m = ensemble.members();
    let anomalies = ensemble.anomalies();

    // mean shift: X′ Bᵀ S⁻¹ (Uᵀ d̄) / (M−1)
    let weighted = DVector::from_iterator(
        b.nrows(),
        inv_s.iter().zip(d_rot.iter()).map(|(&i, &d)| i * d),
    );
    let mean_shift = (&anomalies * b.transpose()) * weighted / (m as f64 - 1.0);

    // transform: T = (I_M − Bᵀ S⁻¹ B)^{1/2}, a rank-p perturbation of the
    // identity (p = obs dimension), applied as X′ T = X′ + ((X′Aᵀ)·g(W))·A
    // through the p×p Gram matrix W = AAᵀ — no M×M matrix is ever built
    let mut a = b.clone();
    for (mut row, iv) in a.row_iter_mut().zip(inv_s.iter()) {
        row *= iv.sqrt();
    }
    a /= (m as f64 - 1.0).sqrt();
    let w = &a * a.transpose();
    let eig = SymmetricEigen::new(w);
    let mut core = eig.eigenvectors.clone();
    for (mut col, &lam) in core.column_iter_mut().zip(eig.eigenvalues.iter()) {
        col *= transform_coefficient(lam);
    }
    let core = core * eig.eigenvectors.transpose();
    let new_anoms = &anomalies + ((&anomalies * a.transpose()) * core) * &a;

    let new_mean = ensemble.mean() + mean_shift;
    let mut out = new_anoms;
    for mut col in out.column_iter_mut() {
        col += &new_mean;
    }
    EnsembleMatrix::new(out)
}

/// Square-root ensemble analysis with an explicit linear observation
/// operator and error covariance.
///
/// # Errors
/// `NotSpd` when `R` fails a Cholesky factorization; `Degenerate`/
/// `NotSymmetric` propagated from the covariance eigendecomposition.
pub fn etkf_standard(
    ensemble: &EnsembleMatrix,
    y: &DVector<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<EnsembleMatrix, EtkfError> {
    assert_eq!(h.ncols(), ensemble.dim(), "operator/ensemble mismatch");
    assert_eq!(h.nrows(), y.len());
    assert_eq!(r.nrows(), y.len());
    assert_eq!(r.ncols(), y.len());
    if Cholesky::new(r.clone()).is_none() {
        return Err(EtkfError::NotSpd);
    }
    let m = ensemble.members() as f64;
    let y_ens = h * ensemble.values();
    let y_mean = DVector::from_iterator(y.len(), y_ens.row_iter().map(|row| row.sum() / m));
    let mut y_anoms = y_ens;
    for mut col in y_anoms.column_iter_mut() {
        col -= &y_mean;
    }
    let c = (&y_anoms * y_anoms.transpose()) / (m - 1.0) + r;
    let (u, s) = svd_psd(&c)?;
    let inv_s = inverted_spectrum(&s)?;
    let d_bar = y - y_mean;
    // B = Uᵀ Ŷ·√(M−1) = Uᵀ Y′ (the √(M−1) normalization lives in
    // apply_update)
    let b = u.transpose() * y_anoms;
    let d_rot = u.transpose() * d_bar;
    Ok(apply_update(ensemble, &b, &d_rot, &inv_s))
}

/// Square-root ensemble analysis driven purely by innovation ensembles:
/// the per-member innovations supply the (sign-flipped) observation-space
/// anomalies and the mean innovation; the perturbed sample supplies the
/// innovation covariance. Works identically for physical and latent
/// ensembles.
///
/// # Errors
/// `Degenerate` when the perturbed innovations have zero covariance.
pub fn etkf_innovation(
    ensemble: &EnsembleMatrix,
    innovations: &InnovationSet,
) -> Result<EnsembleMatrix, EtkfError> {
    assert_eq!(
        innovations.members(),
        ensemble.members(),
        "innovation/ensemble member counts must agree"
    );
    let m = ensemble.members() as f64;
    let k = innovations.sample_size() as f64;

    // C = sample covariance of the perturbed innovations
    let sampled = innovations.sampled();
    let obs_dim = innovations.obs_dim();
    let samp_mean = DVector::from_iterator(obs_dim, sampled.row_iter().map(|r| r.sum() / k));
    let mut samp_anoms = sampled.clone();
    for mut col in samp_anoms.column_iter_mut() {
        col -= &samp_mean;
    }
    let c = (&samp_anoms * samp_anoms.transpose()) / (k - 1.0);
    let (u, s) = svd_psd(&c)?;
    let inv_s = inverted_spectrum(&s)?;

    // per-member innovations: mean and anomalies; D′ = −Y′ flips the sign
    // of the gain term, and the transform is sign-free
    let per_member = innovations.per_member();
    let d_mean = DVector::from_iterator(obs_dim, per_member.row_iter().map(|r| r.sum() / m));
    let mut d_anoms = per_member.clone();
    for mut col in d_anoms.column_iter_mut() {
        col -= &d_mean;
    }
    let b = u.transpose() * d_anoms;
    let d_rot = u.transpose() * d_mean;
    // minus sign: B carries D′ = −Y′
    let neg_d_rot = -d_rot;
    Ok(apply_update(ensemble, &b, &neg_d_rot, &inv_s))
}

/// Gaussian observation-noise sampler with diagonal covariance, usable as
/// the `noise` argument of [`build_innovations`].
pub fn gaussian_noise(stds: DVector<f64>) -> impl FnMut(&mut RngStream) -> DVector<f64> {
    move |stream: &mut RngStream| DVector::from_fn(stds.len(), |r, _| stream.gaussian(0.0, stds[r]))
}
