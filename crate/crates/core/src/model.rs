//! The dynamical system under study: a discrete map that moves a point
//! around a circle in the plane.
//!
//! One step rotates the state about the origin by an angle proportional to
//! its own polar angle `ψ` (so the angular speed grows with `ψ`, producing a
//! non-uniform sweep of the circle) and then pushes it radially by
//! `A·α·cos(α t)`, an oscillation that makes the orbit breathe between inner
//! and outer radii when the amplitude `A` is nonzero. With `A = 0` the map
//! is an exact isometry: the radius is conserved to rounding and the polar
//! angle is simply multiplied by `1 + α` modulo `2π`.
//!
//! The module also provides the two data-generation routines the
//! experiments are built on: long free runs ([`run_trajectory`]) and the
//! decimated long run used as a training climatology
//! ([`generate_climatology`]).

use crate::rng::RngStream;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// A point in the plane. The dynamics require it to stay away from the
/// origin (both the polar angle and the radial forcing divide by the norm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
}

impl State {
    pub fn new(x: f64, y: f64) -> Self {
        State { x, y }
    }

    /// Point on the unit circle at the given polar angle.
    pub fn on_unit_circle(angle: f64) -> Self {
        State {
            x: angle.cos(),
            y: angle.sin(),
        }
    }

    pub fn radius(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_column_slice(&[self.x, self.y])
    }

    /// # Panics
    /// If `v` does not have exactly two components.
    pub fn from_vector(v: &DVector<f64>) -> Self {
        assert_eq!(v.len(), 2, "a state has two components");
        State { x: v[0], y: v[1] }
    }
}

/// Column-stacks states into a `2 × n` matrix (the dataset/ensemble layout
/// used throughout).
pub fn states_matrix(states: &[State]) -> DMatrix<f64> {
    DMatrix::from_fn(2, states.len(), |r, c| {
        if r == 0 {
            states[c].x
        } else {
            states[c].y
        }
    })
}

/// Inverse of [`states_matrix`].
///
/// # Panics
/// If the matrix does not have two rows.
pub fn matrix_states(m: &DMatrix<f64>) -> Vec<State> {
    assert_eq!(m.nrows(), 2, "a state matrix has two rows");
    (0..m.ncols())
        .map(|c| State {
            x: m[(0, c)],
            y: m[(1, c)],
        })
        .collect()
}

/// Parameters of the map: `alpha` controls both the angular sweep rate and
/// the forcing frequency; `amplitude` scales the radial oscillation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub amplitude: f64,
}

impl ModelParams {
    /// # Panics
    /// If `alpha` is outside `(0, 1)` or `amplitude` is negative.
    pub fn new(alpha: f64, amplitude: f64) -> Self {
        assert!(
            alpha > 0.0 && alpha < 1.0,
            "alpha must lie in (0, 1), got {alpha}"
        );
        assert!(
            amplitude >= 0.0 && amplitude.is_finite(),
            "amplitude must be finite and non-negative, got {amplitude}"
        );
        ModelParams { alpha, amplitude }
    }

    /// Default sweep rate with a static radius.
    pub fn stationary() -> Self {
        ModelParams::new(0.1, 0.0)
    }

    /// Default sweep rate with the given radial oscillation amplitude.
    pub fn oscillating(amplitude: f64) -> Self {
        ModelParams::new(0.1, amplitude)
    }
}

/// Polar angle `ψ ∈ [0, 2π)` via the half-angle form
/// `ψ = 2·arctan(y / (x + ‖s‖))`.
///
/// On the negative x-axis the half-angle denominator vanishes; the limit
/// from either side is `π`, so that value is returned by continuity.
///
/// # Panics
/// If `s` is at the origin (the angle is undefined there).
pub fn polar_angle(s: State) -> f64 {
    let r = s.radius();
    assert!(r > 0.0, "polar angle is undefined at the origin");
    if s.y == 0.0 && s.x < 0.0 {
        return std::f64::consts::PI;
    }
    let theta = 2.0 * s.y.atan2(s.x + r);
    // atan2 yields (−π, π]; shift to [0, 2π) and guard the boundary against
    // the shift rounding up to exactly 2π.
    let shifted = if theta < 0.0 {
        theta + std::f64::consts::TAU
    } else {
        theta
    };
    if shifted >= std::f64::consts::TAU {
        0.0
    } else {
        shifted
    }
}

/// Advances the state one step: rotation by `α·ψ(s)` followed by the radial
/// kick `(s/‖s‖)·A·α·cos(α t)` along the pre-rotation radial direction.
///
/// # Panics
/// If `s` is at the origin.
pub fn step(s: State, t: i64, p: &ModelParams) -> State {
    let r = s.radius();
    assert!(r > 0.0, "cannot step a state at the origin");
    let psi = polar_angle(s);
    let (sin_a, cos_a) = (p.alpha * psi).sin_cos();
    let kick = p.amplitude * p.alpha * (p.alpha * t as f64).cos() / r;
    State {
        x: s.x * cos_a - s.y * sin_a + s.x * kick,
        y: s.x * sin_a + s.y * cos_a + s.y * kick,
    }
}

/// A run of the map: states at consecutive integer times starting at `t0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    t0: i64,
    states: Vec<State>,
}

impl Trajectory {
    pub fn start_time(&self) -> i64 {
        self.t0
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// State at absolute time `t` (panics when `t` is outside the run).
    pub fn at(&self, t: i64) -> State {
        let idx = t - self.t0;
        assert!(
            idx >= 0 && (idx as usize) < self.states.len(),
            "time {t} outside trajectory [{}, {}]",
            self.t0,
            self.t0 + self.states.len() as i64 - 1
        );
        self.states[idx as usize]
    }

    /// `(time, state)` pairs in order.
    pub fn iter(&self) -> impl Iterator<Item = (i64, State)> + '_ {
        self.states
            .iter()
            .enumerate()
            .map(move |(i, &s)| (self.t0 + i as i64, s))
    }
}

/// Iterates [`step`] from `s0` at time `t0`; the result holds `steps + 1`
/// states including the start.
pub fn run_trajectory(s0: State, steps: usize, p: &ModelParams, t0: i64) -> Trajectory {
    let mut states = Vec::with_capacity(steps + 1);
    states.push(s0);
    let mut s = s0;
    for k in 0..steps {
        s = step(s, t0 + k as i64, p);
        states.push(s);
    }
    Trajectory { t0, states }
}

/// Number of steps in a climatology run.
pub const CLIMATOLOGY_STEPS: usize = 10_000;
/// Decimation interval of the climatology run.
pub const CLIMATOLOGY_THIN: usize = 10;

/// Training dataset: a long free run from a uniformly random point on the
/// unit circle, keeping every 10th state (times 10, 20, …, 10,000), i.e.
/// 1,000 points spread over the attractor.
pub fn generate_climatology(stream: &mut RngStream, p: &ModelParams) -> Vec<State> {
    let s0 = State::on_unit_circle(stream.uniform(0.0, std::f64::consts::TAU));
    let traj = run_trajectory(s0, CLIMATOLOGY_STEPS, p, 0);
    traj.states()
        .iter()
        .copied()
        .skip(CLIMATOLOGY_THIN)
        .step_by(CLIMATOLOGY_THIN)
        .collect()
}
