//! Deterministic random-number streams and the sampling routines built on
//! them.
//!
//! Every consumer of randomness owns an [`RngStream`] identified by a
//! `(seed, stream_id)` pair. The generator is a SplitMix-style counter: the
//! state advances by a per-stream odd increment and each output is a mix of
//! the state. Streams with distinct ids use distinct increments, so two
//! streams never walk the same orbit even under a shared seed. Reproducing
//! any result therefore requires only the seed, the stream id, and the same
//! call sequence; nothing depends on global state or on scheduling.
//!
//! Sampling helpers cover the uniform, Gaussian, and skew-normal draws used
//! by the experiments. The skew-normal family is parameterized by a shape
//! (skewness direction/strength), location, and scale;
//! [`fit_skew_normal`] solves for the location and scale that place the
//! distribution's mode and standard deviation at requested targets, which is
//! how the observation-error laws of the skewed-noise experiments are
//! specified.

use statrs::function::erf::erf;
use thiserror::Error;

/// Weyl increment of the underlying SplitMix64 generator.
const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

const TWO_POW_53: f64 = 9_007_199_254_740_992.0;

#[derive(Debug, Error, PartialEq)]
pub enum DistributionError {
    #[error("target standard deviation must be positive and finite, got {0}")]
    InvalidStd(f64),
    #[error("shape parameter must be finite, got {0}")]
    InvalidShape(f64),
    #[error("mode target must be finite, got {0}")]
    InvalidMode(f64),
}

/// Finalizer from SplitMix64; bijective on `u64`.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a per-stream increment: odd, and with enough bit transitions to
/// behave well as a Weyl constant (same guard as `SplittableRandom`).
fn mix_gamma(seed: u64) -> u64 {
    let mut z = seed;
    z = (z ^ (z >> 33)).wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    z = (z ^ (z >> 33)).wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    z = (z ^ (z >> 33)) | 1;
    if (z ^ (z >> 1)).count_ones() < 24 {
        z ^ 0xAAAA_AAAA_AAAA_AAAA
    } else {
        z
    }
}

/// Combines path components (purpose tags, repetition indices, analysis
/// times, ...) into a stream id. Used to hand every sub-task of a run its
/// own independent stream without any central bookkeeping.
pub fn substream_id(parts: &[u64]) -> u64 {
    let mut h = 0x243F_6A88_85A3_08D3u64;
    for &p in parts {
        h = mix64(h.wrapping_add(GOLDEN_GAMMA) ^ mix64(p));
    }
    h
}

/// A counter-based pseudo-random stream; see the module docs for the
/// reproducibility contract.
#[derive(Debug, Clone)]
pub struct RngStream {
    state: u64,
    gamma: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let state = mix64(seed ^ mix64(stream_id.wrapping_mul(GOLDEN_GAMMA)));
        let gamma = mix_gamma(
            mix64(stream_id)
                .wrapping_add(GOLDEN_GAMMA)
                .wrapping_mul(GOLDEN_GAMMA)
                ^ mix64(seed.rotate_left(32)),
        );
        RngStream { state, gamma }
    }

    /// Derives a child stream; `parts` extend this stream's identity rather
    /// than replacing it.
    pub fn derive(&self, parts: &[u64]) -> Self {
        let mut all = vec![self.state, self.gamma];
        all.extend_from_slice(parts);
        RngStream::new(self.state ^ self.gamma, substream_id(&all))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(self.gamma);
        mix64(self.state)
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / TWO_POW_53
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        assert!(hi >= lo, "uniform range is inverted: [{lo}, {hi})");
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform index in `0..n` (Lemire multiply-shift; bias < n / 2^64).
    pub fn uniform_index(&mut self, n: usize) -> usize {
        assert!(n > 0, "cannot draw an index from an empty range");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal draw via Box-Muller. Consumes exactly two `u64`s per
    /// call, so call counts map one-to-one onto stream positions.
    pub fn standard_gaussian(&mut self) -> f64 {
        // u1 lies in (0, 1] so the logarithm is finite.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 / TWO_POW_53;
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Gaussian draw; `std = 0` returns `mean` exactly (still consuming the
    /// stream positions, to keep call counts stable across configurations).
    ///
    /// # Panics
    /// If `std` is negative or not finite.
    pub fn gaussian(&mut self, mean: f64, std: f64) -> f64 {
        assert!(
            std >= 0.0 && std.is_finite(),
            "standard deviation must be finite and non-negative, got {std}"
        );
        let g = self.standard_gaussian();
        if std == 0.0 {
            mean
        } else {
            mean + std * g
        }
    }
}

/// Skew-normal distribution with density
/// `f(x) = (2/scale) * phi(u) * Phi(shape * u)`, `u = (x - location)/scale`,
/// where `phi`/`Phi` are the standard normal pdf/cdf. `shape = 0` recovers
/// the Gaussian; the sign of `shape` is the direction of the skew.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewNormal {
    pub shape: f64,
    pub location: f64,
    pub scale: f64,
}

fn normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(u: f64) -> f64 {
    0.5 * (1.0 + erf(u / std::f64::consts::SQRT_2))
}

impl SkewNormal {
    fn delta(&self) -> f64 {
        self.shape / (1.0 + self.shape * self.shape).sqrt()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let u = (x - self.location) / self.scale;
        2.0 / self.scale * normal_pdf(u) * normal_cdf(self.shape * u)
    }

    /// Closed-form mean: `location + scale * delta * sqrt(2/pi)`.
    pub fn mean(&self) -> f64 {
        self.location + self.scale * self.delta() * (2.0 / std::f64::consts::PI).sqrt()
    }

    /// Closed-form variance: `scale^2 * (1 - 2 delta^2 / pi)`.
    pub fn variance(&self) -> f64 {
        let d = self.delta();
        self.scale * self.scale * (1.0 - 2.0 * d * d / std::f64::consts::PI)
    }

    /// Mode, located numerically (no closed form exists for `shape != 0`).
    pub fn mode(&self) -> f64 {
        self.location + self.scale * standard_mode(self.shape)
    }
}

/// Mode of the standard skew-normal density (location 0, scale 1). The
/// density's log-derivative is `-u + shape * phi(shape*u) / Phi(shape*u)`,
/// which is strictly decreasing with a single root; that root is located by
/// bisection to machine precision. Negative shapes use the mirror identity
/// `mode(-shape) = -mode(shape)` so the result is exactly antisymmetric.
fn standard_mode(shape: f64) -> f64 {
    if shape == 0.0 {
        return 0.0;
    }
    if shape < 0.0 {
        return -standard_mode(-shape);
    }
    // g(0) = shape * phi(0)/Phi(0) > 0 and g(2) < 0 for every positive
    // shape (the inverse Mills ratio decays faster than 2/shape grows).
    let g = |u: f64| shape * normal_pdf(shape * u) / normal_cdf(shape * u) - u;
    let (mut a, mut b) = (0.0f64, 2.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if g(mid) > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
        if b - a < f64::EPSILON {
            break;
        }
    }
    0.5 * (a + b)
}

/// Solves for the skew normal with the given shape whose mode and standard
/// deviation equal the targets. The scale follows in closed form from the
/// variance identity (it does not depend on the location); the location then
/// shifts the numerically located mode onto the target.
pub fn fit_skew_normal(
    shape: f64,
    target_mode: f64,
    target_std: f64,
) -> Result<SkewNormal, DistributionError> {
    if !shape.is_finite() {
        return Err(DistributionError::InvalidShape(shape));
    }
    if !(target_std.is_finite() && target_std > 0.0) {
        return Err(DistributionError::InvalidStd(target_std));
    }
    if !target_mode.is_finite() {
        return Err(DistributionError::InvalidMode(target_mode));
    }
    let delta = shape / (1.0 + shape * shape).sqrt();
    let std_factor = (1.0 - 2.0 * delta * delta / std::f64::consts::PI).sqrt();
    let scale = target_std / std_factor;
    let location = target_mode - scale * standard_mode(shape);
    Ok(SkewNormal {
        shape,
        location,
        scale,
    })
}

/// Draws from the skew normal by combining two Gaussians:
/// `delta * |u0| + sqrt(1 - delta^2) * u1` has the standard skew-normal law.
/// Consumes exactly four `u64`s per call.
pub fn sample_skew_normal(stream: &mut RngStream, sn: &SkewNormal) -> f64 {
    let delta = sn.delta();
    let u0 = stream.standard_gaussian();
    let u1 = stream.standard_gaussian();
    sn.location + sn.scale * (delta * u0.abs() + (1.0 - delta * delta).sqrt() * u1)
}
