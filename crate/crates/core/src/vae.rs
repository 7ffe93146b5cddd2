//! Variational autoencoders with Gaussian encoder/decoder pairs, the
//! training objective, and latent-space transport.
//!
//! A [`VaeParams`] bundles four dense towers — encoder mean, encoder
//! log-variance, decoder mean, decoder log-variance — plus an affine latent
//! rescaling `z → a·z + b`. The rescaling is fitted once, before weight
//! training, so that the encoded training set has sample mean 0 and variance
//! 1; its inverse is applied to every latent before it enters the decoder
//! towers, so the affine cancels exactly along the reconstruction path and
//! only shifts the latent coordinates the assimilation sees.
//!
//! Training minimizes the negative of a single-sample bound estimate: a
//! reconstruction term with a blended decoder log-variance
//! `(1−γ)·lnΣ_dec + γ·lnΣ_def` plus the squared blend-to-raw gap, and a
//! closed-form Gaussian divergence of the (rescaled) encoder distribution
//! from the standard normal prior. The blend factor γ starts at 1 and
//! decays linearly to 0 partway through training, which keeps the decoder
//! variance from collapsing early.
//!
//! All batched entry points lay samples out as matrix *columns*.

use crate::neural::{AdamOptimizer, DenseNet, NetGrads};
use crate::rng::RngStream;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hidden layout of every tower: six fully connected layers of 32 units.
pub const HIDDEN_WIDTH: usize = 32;
pub const HIDDEN_LAYERS: usize = 6;

/// Default clamp applied to log-variance tower outputs before
/// exponentiation.
pub const LOGVAR_CLAMP: (f64, f64) = (-12.0, 4.0);

#[derive(Debug, Error)]
pub enum VaeError {
    #[error("{0} produced a non-finite value")]
    NonFinite(&'static str),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("encoder means of the dataset have zero variance; affine rescale is undefined")]
    DegenerateDataset,
    #[error("training diverged at epoch {epoch}: mean loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
}

/// Encoder/decoder parameter set. See the module docs for the role of the
/// affine pair `(rescale_a, rescale_b)`; `logvar_bounds` is the clamp
/// applied to both log-variance towers (widening it below the default floor
/// permits exactly-zero conditional variances, which the deterministic
/// identity construction uses).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeParams {
    pub enc_mu: DenseNet,
    pub enc_logvar: DenseNet,
    pub dec_mu: DenseNet,
    pub dec_logvar: DenseNet,
    pub rescale_a: f64,
    pub rescale_b: f64,
    pub state_dim: usize,
    pub latent_dim: usize,
    pub logvar_bounds: (f64, f64),
}

/// Gradients of the training loss for all four towers.
#[derive(Debug, Clone)]
pub struct VaeGrads {
    pub enc_mu: NetGrads,
    pub enc_logvar: NetGrads,
    pub dec_mu: NetGrads,
    pub dec_logvar: NetGrads,
}

/// Training-loop settings. `gamma(e)` is the blend factor schedule:
/// `max(0, 1 − e / (gamma_zero_fraction · epochs))`, i.e. linear decay from
/// 1 reaching 0 after `gamma_zero_fraction` of the epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Reference decoder variance per component (the blend target).
    pub sigma_def: f64,
    /// Fraction of the epochs after which γ reaches zero.
    pub gamma_zero_fraction: f64,
}

impl TrainConfig {
    /// Offline climatology training: 1000 epochs, minibatches of 64.
    pub fn offline() -> Self {
        TrainConfig {
            epochs: 1000,
            batch_size: 64,
            learning_rate: 1e-3,
            sigma_def: 0.05 * 0.05,
            gamma_zero_fraction: 0.5,
        }
    }

    /// Per-analysis retraining on an ensemble: 200 full-batch epochs.
    pub fn transfer() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: usize::MAX,
            learning_rate: 1e-3,
            sigma_def: 0.05 * 0.05,
            gamma_zero_fraction: 0.5,
        }
    }

    /// Per-analysis innovation-autoencoder training: few epochs on the
    /// large synthetic innovation sample, tuned to keep a full cycling
    /// run affordable.
    pub fn innovation() -> Self {
        TrainConfig {
            epochs: 8,
            batch_size: 128,
            learning_rate: 3e-3,
            sigma_def: 0.05 * 0.05,
            gamma_zero_fraction: 0.5,
        }
    }

    /// Blend factor for a (zero-based) epoch.
    pub fn gamma(&self, epoch: usize) -> f64 {
        let zero_at = self.gamma_zero_fraction * self.epochs as f64;
        if zero_at <= 0.0 {
            return 0.0;
        }
        (1.0 - epoch as f64 / zero_at).max(0.0)
    }

    fn logvar_def(&self) -> f64 {
        assert!(
            self.sigma_def > 0.0,
            "reference variance must be positive, got {}",
            self.sigma_def
        );
        self.sigma_def.ln()
    }
}

/// Loss/γ trace of one training epoch.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub gamma: f64,
}

/// Column-major matrix of standard normal draws; the fill order (down each
/// column, then across) is part of the reproducibility contract.
pub fn gaussian_matrix(stream: &mut RngStream, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for c in 0..cols {
        for r in 0..rows {
            m[(r, c)] = stream.standard_gaussian();
        }
    }
    m
}

fn clamped(raw: &DMatrix<f64>, bounds: (f64, f64)) -> DMatrix<f64> {
    raw.map(|v| v.clamp(bounds.0, bounds.1))
}

/// 1 where the clamp is inactive (gradient passes), 0 where it saturates.
fn clamp_mask(raw: &DMatrix<f64>, bounds: (f64, f64)) -> DMatrix<f64> {
    raw.map(|v| if v > bounds.0 && v < bounds.1 { 1.0 } else { 0.0 })
}

impl VaeParams {
    /// Freshly He-initialized towers (drawn in the order encoder-mean,
    /// encoder-log-variance, decoder-mean, decoder-log-variance), identity
    /// affine, default log-variance clamp.
    pub fn new_random(state_dim: usize, latent_dim: usize, stream: &mut RngStream) -> Self {
        assert!(state_dim > 0 && latent_dim > 0);
        let mut enc_dims = vec![state_dim];
        enc_dims.extend(std::iter::repeat(HIDDEN_WIDTH).take(HIDDEN_LAYERS));
        enc_dims.push(latent_dim);
        let mut dec_dims = vec![latent_dim];
        dec_dims.extend(std::iter::repeat(HIDDEN_WIDTH).take(HIDDEN_LAYERS));
        dec_dims.push(state_dim);
        VaeParams {
            enc_mu: DenseNet::he_init(&enc_dims, stream),
            enc_logvar: DenseNet::he_init(&enc_dims, stream),
            dec_mu: DenseNet::he_init(&dec_dims, stream),
            dec_logvar: DenseNet::he_init(&dec_dims, stream),
            rescale_a: 1.0,
            rescale_b: 0.0,
            state_dim,
            latent_dim,
            logvar_bounds: LOGVAR_CLAMP,
        }
    }

    /// A VAE that encodes and decodes as the exact identity with zero
    /// conditional variance everywhere: mean towers are single identity
    /// layers, log-variance towers output a constant so deeply negative
    /// that the variance underflows to exactly 0. Useful as the reference
    /// point at which latent-space assimilation must coincide with
    /// state-space assimilation.
    pub fn deterministic_identity(dim: usize) -> Self {
        use crate::neural::{Activation, Layer};
        let identity = || {
            DenseNet::from_layers(vec![Layer {
                weight: DMatrix::identity(dim, dim),
                bias: DVector::zeros(dim),
                activation: Activation::Identity,
            }])
        };
        let frozen_logvar = || {
            DenseNet::from_layers(vec![Layer {
                weight: DMatrix::zeros(dim, dim),
                bias: DVector::from_element(dim, -1.0e4),
                activation: Activation::Identity,
            }])
        };
        VaeParams {
            enc_mu: identity(),
            enc_logvar: frozen_logvar(),
            dec_mu: identity(),
            dec_logvar: frozen_logvar(),
            rescale_a: 1.0,
            rescale_b: 0.0,
            state_dim: dim,
            latent_dim: dim,
            // floor far below the frozen output so e^{logvar} underflows
            // to exactly zero instead of being clamped back up
            logvar_bounds: (-1.0e9, 4.0),
        }
    }

    /// Rescaled encoder moments at `x`: mean `a·μ(x)+b` and variance
    /// `a²·exp(logvar(x))` per latent component.
    pub fn encode_moments(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let xm = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
        let mu = self.enc_mu.output(&xm);
        let lv = clamped(&self.enc_logvar.output(&xm), self.logvar_bounds);
        let a = self.rescale_a;
        let mean = DVector::from_iterator(
            self.latent_dim,
            mu.column(0).iter().map(|&m| a * m + self.rescale_b),
        );
        let var = DVector::from_iterator(
            self.latent_dim,
            lv.column(0).iter().map(|&v| a * a * v.exp()),
        );
        (mean, var)
    }

    /// Rescaled encoder mean `a·μ(x)+b`.
    pub fn encode_mean(&self, x: &DVector<f64>) -> DVector<f64> {
        self.encode_moments(x).0
    }

    /// One latent draw `z = (a·μ+b) + a·σ⊙ε` per input column; ε is
    /// consumed column-major (all components of one sample, then the next).
    pub fn encode_ensemble(
        &self,
        xs: &DMatrix<f64>,
        stream: &mut RngStream,
    ) -> Result<DMatrix<f64>, VaeError> {
        assert_eq!(xs.nrows(), self.state_dim);
        let eps = gaussian_matrix(stream, self.latent_dim, xs.ncols());
        let mu = self.enc_mu.output(xs);
        let lv = clamped(&self.enc_logvar.output(xs), self.logvar_bounds);
        let (a, b) = (self.rescale_a, self.rescale_b);
        let z = DMatrix::from_fn(self.latent_dim, xs.ncols(), |r, c| {
            a * mu[(r, c)] + b + a * (0.5 * lv[(r, c)]).exp() * eps[(r, c)]
        });
        if z.iter().all(|v| v.is_finite()) {
            Ok(z)
        } else {
            Err(VaeError::NonFinite("encoder"))
        }
    }

    /// Single-sample convenience wrapper around [`VaeParams::encode_ensemble`].
    pub fn encode_sample(
        &self,
        x: &DVector<f64>,
        stream: &mut RngStream,
    ) -> Result<DVector<f64>, VaeError> {
        let xm = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
        let z = self.encode_ensemble(&xm, stream)?;
        Ok(DVector::from_column_slice(z.as_slice()))
    }

    /// Decoder mean `μ((z−b)/a)`.
    pub fn decode_mean(&self, z: &DVector<f64>) -> DVector<f64> {
        let u = z.map(|v| (v - self.rescale_b) / self.rescale_a);
        self.dec_mu.output_vec(&u)
    }

    /// One state draw `x = μ(u) + σ(u)⊙ε`, `u = (z−b)/a`, per latent
    /// column; ε consumed column-major.
    pub fn decode_ensemble(
        &self,
        zs: &DMatrix<f64>,
        stream: &mut RngStream,
    ) -> Result<DMatrix<f64>, VaeError> {
        assert_eq!(zs.nrows(), self.latent_dim);
        let eps = gaussian_matrix(stream, self.state_dim, zs.ncols());
        let u = zs.map(|v| (v - self.rescale_b) / self.rescale_a);
        let mu = self.dec_mu.output(&u);
        let lv = clamped(&self.dec_logvar.output(&u), self.logvar_bounds);
        let x = DMatrix::from_fn(self.state_dim, zs.ncols(), |r, c| {
            mu[(r, c)] + (0.5 * lv[(r, c)]).exp() * eps[(r, c)]
        });
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(VaeError::NonFinite("decoder"))
        }
    }

    /// Single-sample convenience wrapper around [`VaeParams::decode_ensemble`].
    pub fn decode_sample(
        &self,
        z: &DVector<f64>,
        stream: &mut RngStream,
    ) -> Result<DVector<f64>, VaeError> {
        let zm = DMatrix::from_column_slice(z.len(), 1, z.as_slice());
        let x = self.decode_ensemble(&zm, stream)?;
        Ok(DVector::from_column_slice(x.as_slice()))
    }

    /// Chooses `(a, b)` so the rescaled encoder means of the dataset
    /// (columns) have sample mean 0 and sample variance 1 (`1/(n−1)`
    /// convention, pooled over latent components).
    pub fn fit_affine_rescale(&mut self, data: &DMatrix<f64>) -> Result<(), VaeError> {
        if data.ncols() == 0 {
            return Err(VaeError::EmptyDataset);
        }
        let mu = self.enc_mu.output(data);
        let n = mu.len();
        if n < 2 {
            return Err(VaeError::DegenerateDataset);
        }
        let mean = mu.iter().sum::<f64>() / n as f64;
        let var = mu.iter().map(|&m| (m - mean) * (m - mean)).sum::<f64>() / (n - 1) as f64;
        if !(var.is_finite() && var > 0.0) {
            return Err(VaeError::DegenerateDataset);
        }
        self.rescale_a = 1.0 / var.sqrt();
        self.rescale_b = -self.rescale_a * mean;
        Ok(())
    }

    /// Closed-form divergence of the rescaled encoder distribution at `x`
    /// from the standard normal prior; non-negative by construction.
    pub fn kl_divergence(&self, x: &DVector<f64>) -> f64 {
        let (mean, var) = self.encode_moments(x);
        0.5 * mean
            .iter()
            .zip(var.iter())
            .map(|(&m, &v)| m * m + v - v.ln() - 1.0)
            .sum::<f64>()
    }

    /// Training loss and exact parameter gradients for a batch (columns of
    /// `x`), with the latent noise `ε` supplied by the caller so the same
    /// draw can be replayed (finite-difference verification, paired runs).
    /// `gamma` blends the decoder log-variance toward `logvar_def`.
    ///
    /// Returns the batch-mean loss; gradients are of that mean.
    pub fn elbo_loss_with_eps(
        &self,
        x: &DMatrix<f64>,
        eps: &DMatrix<f64>,
        gamma: f64,
        logvar_def: f64,
    ) -> (f64, VaeGrads) {
        assert!((0.0..=1.0).contains(&gamma), "gamma must lie in [0,1]");
        assert_eq!(x.nrows(), self.state_dim);
        assert_eq!(eps.nrows(), self.latent_dim);
        assert_eq!(eps.ncols(), x.ncols());
        let batch = x.ncols();
        assert!(batch > 0);
        let inv_b = 1.0 / batch as f64;
        let (a, b) = (self.rescale_a, self.rescale_b);
        let bounds = self.logvar_bounds;

        // encoder towers
        let (mu_e, cache_me) = self.enc_mu.forward(x);
        let (lv_e_raw, cache_le) = self.enc_logvar.forward(x);
        let lv_e = clamped(&lv_e_raw, bounds);
        let mask_le = clamp_mask(&lv_e_raw, bounds);
        let sigma_e = lv_e.map(|v| (0.5 * v).exp());

        // reparameterized decoder input: the affine and its inverse cancel,
        // leaving u = μ_e + σ_e ⊙ ε
        let u = {
            let mut u = mu_e.clone();
            u.zip_zip_apply(&sigma_e, eps, |uv, s, e| *uv += s * e);
            u
        };

        // decoder towers
        let (mu_d, cache_md) = self.dec_mu.forward(&u);
        let (lv_d_raw, cache_ld) = self.dec_logvar.forward(&u);
        let lv_d = clamped(&lv_d_raw, bounds);
        let mask_ld = clamp_mask(&lv_d_raw, bounds);
        // blended log-variance used by the reconstruction quadratic
        let lv_p = lv_d.map(|v| (1.0 - gamma) * v + gamma * logvar_def);

        // loss assembly
        let mut loss = 0.0;
        for c in 0..batch {
            for r in 0..self.state_dim {
                let d = x[(r, c)] - mu_d[(r, c)];
                let lp = lv_p[(r, c)];
                let gap = lv_d[(r, c)] - logvar_def;
                loss += 0.5 * (lp + d * d * (-lp).exp() + gamma * gamma * gap * gap);
            }
            for r in 0..self.latent_dim {
                let m = a * mu_e[(r, c)] + b;
                let v = a * a * lv_e[(r, c)].exp();
                loss += 0.5 * (m * m + v - v.ln() - 1.0);
            }
        }
        loss *= inv_b;

        // reverse pass — decoder mean
        let g_mud = DMatrix::from_fn(self.state_dim, batch, |r, c| {
            (mu_d[(r, c)] - x[(r, c)]) * (-lv_p[(r, c)]).exp() * inv_b
        });
        // decoder log-variance: blend path + blend-to-raw gap penalty,
        // gated by the clamp
        let g_lvd = DMatrix::from_fn(self.state_dim, batch, |r, c| {
            let d = x[(r, c)] - mu_d[(r, c)];
            let through_blend =
                (1.0 - gamma) * 0.5 * (1.0 - d * d * (-lv_p[(r, c)]).exp());
            let through_gap = gamma * gamma * (lv_d[(r, c)] - logvar_def);
            (through_blend + through_gap) * inv_b * mask_ld[(r, c)]
        });
        let grads_md = self.dec_mu.backward(&cache_md, &g_mud);
        let grads_ld = self.dec_logvar.backward(&cache_ld, &g_lvd);

        // chain into the latent draw
        let g_u = &grads_md.input + &grads_ld.input;
        let g_mue = DMatrix::from_fn(self.latent_dim, batch, |r, c| {
            g_u[(r, c)] + a * (a * mu_e[(r, c)] + b) * inv_b
        });
        let g_lve = DMatrix::from_fn(self.latent_dim, batch, |r, c| {
            let through_u = g_u[(r, c)] * 0.5 * sigma_e[(r, c)] * eps[(r, c)];
            let through_kl = 0.5 * (a * a * lv_e[(r, c)].exp() - 1.0) * inv_b;
            (through_u + through_kl) * mask_le[(r, c)]
        });
        let grads_me = self.enc_mu.backward(&cache_me, &g_mue);
        let grads_le = self.enc_logvar.backward(&cache_le, &g_lve);

        (
            loss,
            VaeGrads {
                enc_mu: grads_me,
                enc_logvar: grads_le,
                dec_mu: grads_md,
                dec_logvar: grads_ld,
            },
        )
    }

    /// [`VaeParams::elbo_loss_with_eps`] with the latent noise drawn from
    /// the stream (column-major, one component per latent per sample).
    pub fn elbo_loss(
        &self,
        x: &DMatrix<f64>,
        stream: &mut RngStream,
        gamma: f64,
        logvar_def: f64,
    ) -> (f64, VaeGrads) {
        let eps = gaussian_matrix(stream, self.latent_dim, x.ncols());
        self.elbo_loss_with_eps(x, &eps, gamma, logvar_def)
    }
}

/// Trains `init` on the dataset (columns): fits the affine rescale first,
/// then runs minibatch gradient descent on the mean training loss with the
/// configured γ schedule. Returns the trained parameters and the per-epoch
/// loss trace.
pub fn train_logged(
    init: VaeParams,
    data: &DMatrix<f64>,
    cfg: &TrainConfig,
    stream: &mut RngStream,
) -> Result<(VaeParams, Vec<EpochStats>), VaeError> {
    if data.ncols() == 0 {
        return Err(VaeError::EmptyDataset);
    }
    let lv_def = cfg.logvar_def();
    let mut vae = init;
    vae.fit_affine_rescale(data)?;

    let n = data.ncols();
    let batch_size = cfg.batch_size.min(n).max(1);
    let mut opt_me = AdamOptimizer::new(&vae.enc_mu, cfg.learning_rate);
    let mut opt_le = AdamOptimizer::new(&vae.enc_logvar, cfg.learning_rate);
    let mut opt_md = AdamOptimizer::new(&vae.dec_mu, cfg.learning_rate);
    let mut opt_ld = AdamOptimizer::new(&vae.dec_logvar, cfg.learning_rate);

    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let gamma = cfg.gamma(epoch);
        // Fisher-Yates shuffle of the sample order
        for i in (1..n).rev() {
            order.swap(i, stream.uniform_index(i + 1));
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch_size) {
            let xb = DMatrix::from_fn(data.nrows(), chunk.len(), |r, c| data[(r, chunk[c])]);
            let (loss, grads) = vae.elbo_loss(&xb, stream, gamma, lv_def);
            epoch_loss += loss * chunk.len() as f64;
            opt_me.step(&mut vae.enc_mu, &grads.enc_mu);
            opt_le.step(&mut vae.enc_logvar, &grads.enc_logvar);
            opt_md.step(&mut vae.dec_mu, &grads.dec_mu);
            opt_ld.step(&mut vae.dec_logvar, &grads.dec_logvar);
        }
        let mean_loss = epoch_loss / n as f64;
        if !mean_loss.is_finite() {
            return Err(VaeError::Diverged {
                epoch,
                loss: mean_loss,
            });
        }
        curve.push(EpochStats {
            epoch,
            mean_loss,
            gamma,
        });
    }
    // training drifts the encoder means, so refresh the affine once more:
    // the rescaled training-set encodings leave with sample mean 0 and
    // variance 1, and encode/decode stay mutually consistent
    vae.fit_affine_rescale(data)?;
    Ok((vae, curve))
}

/// [`train_logged`] without the loss trace.
pub fn train(
    init: VaeParams,
    data: &DMatrix<f64>,
    cfg: &TrainConfig,
    stream: &mut RngStream,
) -> Result<VaeParams, VaeError> {
    train_logged(init, data, cfg, stream).map(|(vae, _)| vae)
}

/// Warm-started retraining on an ensemble: copies the trained weights,
/// refits the affine rescale on the ensemble, and continues training for
/// `cfg.epochs` (zero epochs = refit only).
pub fn transfer_retrain(
    clima: &VaeParams,
    ensemble: &DMatrix<f64>,
    cfg: &TrainConfig,
    stream: &mut RngStream,
) -> Result<VaeParams, VaeError> {
    assert!(ensemble.ncols() >= 2, "retraining needs at least 2 members");
    train(clima.clone(), ensemble, cfg, stream)
}

/// Initializes a VAE for `obs_dim`-dimensional inputs from one trained on
/// `v1.state_dim`-dimensional inputs: every layer whose shape matches is
/// copied; the layers touching the input/output (whose widths differ when
/// `obs_dim ≠ v1.state_dim`) are freshly He-initialized. Fresh draws happen
/// in tower order (encoder mean, encoder log-variance, decoder mean,
/// decoder log-variance); nothing is drawn when all shapes match.
pub fn init_second_vae_from_first(
    v1: &VaeParams,
    obs_dim: usize,
    stream: &mut RngStream,
) -> VaeParams {
    assert!(obs_dim >= 1);
    let mut v2 = v1.clone();
    v2.state_dim = obs_dim;
    if obs_dim != v1.state_dim {
        for net in [&mut v2.enc_mu, &mut v2.enc_logvar] {
            let first = &mut net.layers_mut()[0];
            let out = first.weight.nrows();
            let std = (2.0 / obs_dim as f64).sqrt();
            first.weight = DMatrix::from_fn(out, obs_dim, |_, _| stream.gaussian(0.0, std));
            first.bias = DVector::zeros(out);
        }
        for net in [&mut v2.dec_mu, &mut v2.dec_logvar] {
            let n_layers = net.layers().len();
            let last = &mut net.layers_mut()[n_layers - 1];
            let fan_in = last.weight.ncols();
            let std = (2.0 / fan_in as f64).sqrt();
            last.weight = DMatrix::from_fn(obs_dim, fan_in, |_, _| stream.gaussian(0.0, std));
            last.bias = DVector::zeros(obs_dim);
        }
    }
    v2
}
