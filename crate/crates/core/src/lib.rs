//! Ensemble transform Kalman filtering in the latent space of variational
//! autoencoders, together with the twin-experiment workbench used to
//! evaluate it on a circle-flow toy system.
//!
//! The crate is organized around a data-assimilation cycle in which the
//! physical state is first mapped into the latent space of a trained VAE,
//! the ensemble update runs there (optionally with a second VAE mapping the
//! observation-space innovations into their own latent space), and the
//! result is decoded back. The pieces:
//!
//! - [`rng`]: counter-based deterministic random streams and the skew-normal
//!   observation-noise family.
//! - [`model`]: the circle-flow dynamical system, truth runs, and
//!   climatology generation.
//! - [`neural`]: dense networks with exact reverse-mode gradients and an
//!   adaptive-moment optimizer.
//! - [`vae`]: encoder/decoder pairs, the evidence lower bound and its
//!   gradients, training loops, and latent-space transport.
//! - [`etkf`]: the square-root ensemble update in innovation form.
//! - [`assimilation`]: the cycling twin experiment tying all of the above
//!   together in its six assimilation configurations.
//! - [`metrics`]: probabilistic skill scores, pattern statistics, and
//!   bootstrap confidence intervals.
//! - [`diagnostics`]: a linearized moment propagator for cross-checking the
//!   latent-space update against closed-form Gaussian expectations.
//! - [`persist`]: serialization of runs, models, and result tables.

pub mod assimilation;
pub mod diagnostics;
pub mod etkf;
pub mod metrics;
pub mod model;
pub mod neural;
pub mod persist;
pub mod rng;
pub mod vae;

pub use assimilation::{ConfigKind, CycleRecord, DaConfig, ObsErrorLaw, Protocol, RunResult};
pub use diagnostics::{LinearizationPoint, LinearizationReport};
pub use etkf::{EnsembleMatrix, InnovationSet};
pub use metrics::{BootstrapResult, Variable, VariableMetrics, VariableSeries};
pub use model::{ModelParams, State, Trajectory};
pub use neural::DenseNet;
pub use persist::{Manifest, MetricsRow, PersistError, SummaryRow};
pub use rng::RngStream;
pub use vae::{TrainConfig, VaeParams};
