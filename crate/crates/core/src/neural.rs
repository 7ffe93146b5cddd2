//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! This is deliberately the smallest engine that covers the encoder/decoder
//! towers: fully connected layers, leaky-ReLU hidden activations (slope 0.1
//! on the negative side), a linear output layer, He-normal initialization,
//! and an adaptive-moment optimizer. Everything is 64-bit.
//!
//! The forward/backward pair is batch-oriented: inputs are matrices whose
//! *columns* are samples, so a whole training batch moves through each layer
//! as one matrix product. Single-sample evaluation is the one-column case.
//! [`DenseNet::backward`] returns parameter gradients summed over the batch
//! together with per-column input gradients (the latter feed the chain rule
//! through a decoder into its latent input).

use crate::rng::RngStream;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Negative-side slope of the hidden activation.
pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    /// `x` for `x ≥ 0`, `0.1·x` otherwise. Used by every hidden layer.
    LeakyRelu,
    /// Pass-through, used by the output layer.
    Identity,
}

impl Activation {
    fn apply(self, p: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if p >= 0.0 {
                    p
                } else {
                    LEAKY_SLOPE * p
                }
            }
            Activation::Identity => p,
        }
    }

    fn slope(self, p: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if p >= 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One fully connected layer: `activation(weight · input + bias)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out_dim × in_dim`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

/// A chain of [`Layer`]s with matching dimensions; hidden layers are
/// leaky-ReLU and the final layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Per-layer values saved by [`DenseNet::forward`] for the backward pass:
/// the input to each layer and its pre-activation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
}

/// Gradients of a scalar loss with respect to every parameter (summed over
/// the batch) and to the network input (one column per sample).
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub input: DMatrix<f64>,
}

impl NetGrads {
    /// Elementwise sum of two gradient sets from the same network.
    pub fn add(&mut self, other: &NetGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    /// Largest absolute entry over all parameter gradients.
    pub fn max_abs(&self) -> f64 {
        let w = self
            .weights
            .iter()
            .flat_map(|m| m.iter())
            .fold(0.0f64, |acc, &v| acc.max(v.abs()));
        self.biases
            .iter()
            .flat_map(|b| b.iter())
            .fold(w, |acc, &v| acc.max(v.abs()))
    }
}

impl DenseNet {
    /// He-normal initialization: weights drawn from `N(0, 2/fan_in)` in
    /// column-major storage order, biases zero. `dims` lists the layer
    /// widths from input to output, e.g. `[2, 32, 32, 1]`.
    ///
    /// # Panics
    /// If `dims` has fewer than two entries or any entry is zero.
    pub fn he_init(dims: &[usize], stream: &mut RngStream) -> Self {
        assert!(
            dims.len() >= 2,
            "a network needs an input and an output width, got {dims:?}"
        );
        assert!(
            dims.iter().all(|&d| d > 0),
            "layer widths must be positive, got {dims:?}"
        );
        let n_layers = dims.len() - 1;
        let layers = (0..n_layers)
            .map(|l| {
                let (fan_in, fan_out) = (dims[l], dims[l + 1]);
                let std = (2.0 / fan_in as f64).sqrt();
                let weight = DMatrix::from_fn(fan_out, fan_in, |_, _| stream.gaussian(0.0, std));
                Layer {
                    weight,
                    bias: DVector::zeros(fan_out),
                    activation: if l + 1 == n_layers {
                        Activation::Identity
                    } else {
                        Activation::LeakyRelu
                    },
                }
            })
            .collect();
        DenseNet { layers }
    }

    /// Builds a network from explicit layers, checking that dimensions chain
    /// and that only the final layer is linear.
    ///
    /// # Panics
    /// On a dimension mismatch or misplaced activation.
    pub fn from_layers(layers: Vec<Layer>) -> Self {
        assert!(!layers.is_empty(), "a network needs at least one layer");
        for pair in layers.windows(2) {
            assert_eq!(
                pair[1].weight.ncols(),
                pair[0].weight.nrows(),
                "adjacent layer dimensions must chain"
            );
        }
        for (i, layer) in layers.iter().enumerate() {
            assert_eq!(layer.bias.len(), layer.weight.nrows());
            let want = if i + 1 == layers.len() {
                Activation::Identity
            } else {
                Activation::LeakyRelu
            };
            assert_eq!(
                layer.activation, want,
                "hidden layers are leaky-ReLU and the output layer is linear"
            );
        }
        DenseNet { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().weight.nrows()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable layer access for weight surgery (transfer initialization,
    /// identity constructions in tests). The caller keeps the dimension
    /// chain intact.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Runs the batch (columns = samples) through the network, keeping the
    /// values [`DenseNet::backward`] needs.
    ///
    /// # Panics
    /// If the input row count does not match the first layer.
    pub fn forward(&self, input: &DMatrix<f64>) -> (DMatrix<f64>, ForwardCache) {
        assert_eq!(
            input.nrows(),
            self.in_dim(),
            "input dimension does not match the network"
        );
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut current = input.clone();
        for layer in &self.layers {
            let mut pre = &layer.weight * &current;
            for mut col in pre.column_iter_mut() {
                col += &layer.bias;
            }
            inputs.push(current);
            let out = pre.map(|p| layer.activation.apply(p));
            pres.push(pre);
            current = out;
        }
        (
            current,
            ForwardCache {
                inputs,
                pre: pres,
            },
        )
    }

    /// Forward pass without a cache, for evaluation-only call sites.
    pub fn output(&self, input: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(input.nrows(), self.in_dim());
        let mut current = input.clone();
        for layer in &self.layers {
            let mut pre = &layer.weight * &current;
            for mut col in pre.column_iter_mut() {
                col += &layer.bias;
            }
            current = pre.map(|p| layer.activation.apply(p));
        }
        current
    }

    /// Single-sample convenience wrapper around [`DenseNet::output`].
    pub fn output_vec(&self, input: &DVector<f64>) -> DVector<f64> {
        let out = self.output(&DMatrix::from_column_slice(input.len(), 1, input.as_slice()));
        DVector::from_column_slice(out.as_slice())
    }

    /// Exact reverse-mode gradients of a scalar loss, given the gradient of
    /// that loss with respect to the network output (one column per sample).
    /// Parameter gradients are summed over the batch; `input` holds one
    /// gradient column per sample.
    ///
    /// # Panics
    /// If the cache does not match this network's shape or the gradient's
    /// batch width differs from the cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &DMatrix<f64>) -> NetGrads {
        assert_eq!(cache.inputs.len(), self.layers.len(), "stale cache");
        assert_eq!(output_grad.nrows(), self.out_dim(), "stale cache");
        assert_eq!(output_grad.ncols(), cache.inputs[0].ncols(), "stale cache");
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        let mut grad = output_grad.clone();
        for (layer, (input, pre)) in self
            .layers
            .iter()
            .zip(cache.inputs.iter().zip(&cache.pre))
            .rev()
        {
            assert_eq!(input.nrows(), layer.weight.ncols(), "stale cache");
            grad.zip_apply(pre, |g, p| *g *= layer.activation.slope(p));
            weights.push(&grad * input.transpose());
            biases.push(DVector::from_iterator(
                grad.nrows(),
                grad.row_iter().map(|r| r.sum()),
            ));
            grad = layer.weight.transpose() * grad;
        }
        weights.reverse();
        biases.reverse();
        NetGrads {
            weights,
            biases,
            input: grad,
        }
    }

    /// Zero-valued gradient holder shaped like this network (no input part).
    pub fn zero_grads(&self) -> NetGrads {
        NetGrads {
            weights: self
                .layers
                .iter()
                .map(|l| DMatrix::zeros(l.weight.nrows(), l.weight.ncols()))
                .collect(),
            biases: self.layers.iter().map(|l| DVector::zeros(l.bias.len())).collect(),
            input: DMatrix::zeros(self.in_dim(), 0),
        }
    }

    /// Applies `f` to every parameter paired with its gradient (used by the
    /// optimizer; iteration order is stable).
    fn visit_params(&mut self, grads: &NetGrads, mut f: impl FnMut(usize, &mut f64, f64)) {
        assert_eq!(grads.weights.len(), self.layers.len(), "gradient shape mismatch");
        let mut idx = 0;
        for (l, layer) in self.layers.iter_mut().enumerate() {
            assert_eq!(grads.weights[l].shape(), layer.weight.shape());
            assert_eq!(grads.biases[l].len(), layer.bias.len());
            for (p, g) in layer.weight.iter_mut().zip(grads.weights[l].iter()) {
                f(idx, p, *g);
                idx += 1;
            }
            for (p, g) in layer.bias.iter_mut().zip(grads.biases[l].iter()) {
                f(idx, p, *g);
                idx += 1;
            }
        }
    }

    fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }
}

/// Adaptive moment estimation with bias correction. One state instance per
/// network; the moment buffers are laid out in the network's parameter
/// iteration order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamOptimizer {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamOptimizer {
    /// Default decay rates 0.9/0.999 and epsilon 1e-8.
    pub fn new(net: &DenseNet, learning_rate: f64) -> Self {
        let n = net.param_count();
        AdamOptimizer {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// One update of every parameter in `net` from `grads`.
    ///
    /// # Panics
    /// If the gradient or moment shapes do not match the network.
    pub fn step(&mut self, net: &mut DenseNet, grads: &NetGrads) {
        assert_eq!(self.m.len(), net.param_count(), "optimizer/network mismatch");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (lr, b1, b2, eps) = (self.learning_rate, self.beta1, self.beta2, self.epsilon);
        let (m, v) = (&mut self.m, &mut self.v);
        net.visit_params(grads, |i, p, g| {
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tower(dims: &[usize], seed: u64) -> DenseNet {
        DenseNet::he_init(dims, &mut RngStream::new(seed, 0))
    }

    fn column(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    fn one_col(v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_iterator(v.len(), 1, v.iter().copied())
    }

    fn col_of(m: &DMatrix<f64>, c: usize) -> DMatrix<f64> {
        DMatrix::from_iterator(m.nrows(), 1, m.column(c).iter().copied())
    }

    #[test]
    fn he_init_is_reproducible_and_biases_are_zero() {
        let a = tower(&[2, 32, 1], 9);
        let b = tower(&[2, 32, 1], 9);
        assert_eq!(a, b);
        for layer in a.layers() {
            assert!(layer.bias.iter().all(|&x| x == 0.0));
        }
        assert_ne!(a, tower(&[2, 32, 1], 10));
    }

    #[test]
    fn he_init_variance_scales_with_fan_in() {
        let net = tower(&[32, 32], 4);
        let w = &net.layers()[0].weight;
        let var = w.iter().map(|x| x * x).sum::<f64>() / w.len() as f64;
        let want = 2.0 / 32.0;
        assert!(
            (var - want).abs() < 0.1 * want,
            "weight variance {var}, want {want}"
        );
    }

    #[test]
    #[should_panic(expected = "input and an output")]
    fn he_init_rejects_degenerate_dim_lists() {
        tower(&[5], 0);
    }

    #[test]
    #[should_panic(expected = "positive")]
    fn he_init_rejects_zero_widths() {
        tower(&[2, 0, 1], 0);
    }

    #[test]
    fn single_identity_layer_passes_input_through() {
        let net = DenseNet::from_layers(vec![Layer {
            weight: DMatrix::identity(3, 3),
            bias: DVector::zeros(3),
            activation: Activation::Identity,
        }]);
        let x = column(&[0.3, -1.2, 7.0]);
        let (y, _) = net.forward(&x);
        assert_eq!(y, x);
    }

    #[test]
    fn hidden_activation_leaks_one_tenth() {
        // one hidden unit fed -1 → passes -0.1 into a unit-weight output
        let net = DenseNet::from_layers(vec![
            Layer {
                weight: column(&[1.0]),
                bias: DVector::zeros(1),
                activation: Activation::LeakyRelu,
            },
            Layer {
                weight: column(&[1.0]),
                bias: DVector::zeros(1),
                activation: Activation::Identity,
            },
        ]);
        let (y, _) = net.forward(&column(&[-1.0]));
        assert_eq!(y[(0, 0)], -0.1);
        let (y, _) = net.forward(&column(&[2.0]));
        assert_eq!(y[(0, 0)], 2.0);
    }

    /// Naive oracle: explicit index loops, no linear algebra library.
    fn naive_forward(net: &DenseNet, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for layer in net.layers() {
            let mut next = vec![0.0; layer.weight.nrows()];
            for i in 0..layer.weight.nrows() {
                let mut acc = layer.bias[i];
                for (j, xv) in cur.iter().enumerate() {
                    acc += layer.weight[(i, j)] * xv;
                }
                next[i] = match layer.activation {
                    Activation::LeakyRelu if acc < 0.0 => LEAKY_SLOPE * acc,
                    _ => acc,
                };
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn forward_matches_a_naive_loop_oracle() {
        let net = tower(&[2, 32, 32, 32, 32, 32, 32, 1], 12);
        let mut stream = RngStream::new(5, 7);
        for _ in 0..20 {
            let x = [stream.uniform(-2.0, 2.0), stream.uniform(-2.0, 2.0)];
            let (y, _) = net.forward(&column(&x));
            let want = naive_forward(&net, &x);
            assert!((y[(0, 0)] - want[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn batched_forward_equals_per_column_forward() {
        let net = tower(&[2, 32, 32, 3], 3);
        let mut stream = RngStream::new(8, 1);
        let batch = DMatrix::from_fn(2, 17, |_, _| stream.uniform(-1.5, 1.5));
        let (out, _) = net.forward(&batch);
        for c in 0..batch.ncols() {
            let (single, _) = net.forward(&col_of(&batch, c));
            assert!((out.column(c) - single.column(0)).norm() < 1e-14);
        }
    }

    #[test]
    fn linear_layer_weight_gradient_is_the_input() {
        // loss = output of a single 1×2 linear layer → dL/dW = xᵀ, dL/db = 1
        let net = DenseNet::from_layers(vec![Layer {
            weight: DMatrix::from_row_slice(1, 2, &[0.5, -0.3]),
            bias: DVector::zeros(1),
            activation: Activation::Identity,
        }]);
        let x = column(&[2.0, 3.0]);
        let (_, cache) = net.forward(&x);
        let grads = net.backward(&cache, &column(&[1.0]));
        assert_eq!(grads.weights[0], DMatrix::from_row_slice(1, 2, &[2.0, 3.0]));
        assert_eq!(grads.biases[0], DVector::from_column_slice(&[1.0]));
        // input gradient is the weight row
        assert_eq!(grads.input, DMatrix::from_column_slice(2, 1, &[0.5, -0.3]));
    }

    #[test]
    fn negative_preactivations_scale_the_chain_by_the_leak() {
        // hidden unit pinned at pre-activation −2 → gradient through it is 0.1
        let net = DenseNet::from_layers(vec![
            Layer {
                weight: column(&[1.0]),
                bias: DVector::from_column_slice(&[-3.0]),
                activation: Activation::LeakyRelu,
            },
            Layer {
                weight: column(&[1.0]),
                bias: DVector::zeros(1),
                activation: Activation::Identity,
            },
        ]);
        let (_, cache) = net.forward(&column(&[1.0])); // pre-activation = −2
        let grads = net.backward(&cache, &column(&[1.0]));
        assert!((grads.input[(0, 0)] - LEAKY_SLOPE).abs() < 1e-15);
    }

    /// Central finite differences of `loss(net, x) = 0.5‖net(x) − target‖²`
    /// with respect to every parameter.
    fn fd_check(dims: &[usize], seed: u64, points: usize) {
        let mut stream = RngStream::new(seed, 100);
        let base = DenseNet::he_init(dims, &mut stream);
        let in_dim = dims[0];
        let out_dim = *dims.last().unwrap();
        for _ in 0..points {
            let x = DMatrix::from_fn(in_dim, 1, |_, _| stream.uniform(-2.0, 2.0));
            let target = DVector::from_fn(out_dim, |_, _| stream.uniform(-1.0, 1.0));
            let loss = |net: &DenseNet| -> f64 {
                let y = net.output(&x);
                0.5 * (y.column(0) - &target).norm_squared()
            };
            let (y, cache) = base.forward(&x);
            let out_grad = one_col(&(DVector::from_iterator(out_dim, y.column(0).iter().copied()) - &target));
            let grads = base.backward(&cache, &out_grad);
            let scale = grads.max_abs();
            let h = 1e-5;
            let mut probe = base.clone();
            for l in 0..dims.len() - 1 {
                let (rows, cols) = grads.weights[l].shape();
                for r in 0..rows {
                    for c in 0..cols {
                        let orig = probe.layers()[l].weight[(r, c)];
                        probe.layers_mut()[l].weight[(r, c)] = orig + h;
                        let up = loss(&probe);
                        probe.layers_mut()[l].weight[(r, c)] = orig - h;
                        let dn = loss(&probe);
                        probe.layers_mut()[l].weight[(r, c)] = orig;
                        let fd = (up - dn) / (2.0 * h);
                        let got = grads.weights[l][(r, c)];
                        let denom = fd.abs().max(1e-3 * scale).max(1e-12);
                        assert!(
                            (got - fd).abs() / denom < 1e-6,
                            "dims {dims:?} layer {l} w[{r},{c}]: {got} vs fd {fd}"
                        );
                    }
                    let orig = probe.layers()[l].bias[r];
                    probe.layers_mut()[l].bias[r] = orig + h;
                    let up = loss(&probe);
                    probe.layers_mut()[l].bias[r] = orig - h;
                    let dn = loss(&probe);
                    probe.layers_mut()[l].bias[r] = orig;
                    let fd = (up - dn) / (2.0 * h);
                    let got = grads.biases[l][r];
                    let denom = fd.abs().max(1e-3 * scale).max(1e-12);
                    assert!(
                        (got - fd).abs() / denom < 1e-6,
                        "dims {dims:?} layer {l} b[{r}]: {got} vs fd {fd}"
                    );
                }
            }
            // input gradient against finite differences in x
            for i in 0..in_dim {
                let mut xp = x.clone();
                xp[(i, 0)] += h;
                let mut xm = x.clone();
                xm[(i, 0)] -= h;
                let up = 0.5 * (base.output(&xp).column(0) - &target).norm_squared();
                let dn = 0.5 * (base.output(&xm).column(0) - &target).norm_squared();
                let fd = (up - dn) / (2.0 * h);
                let got = grads.input[(i, 0)];
                assert!(
                    (got - fd).abs() / fd.abs().max(1e-3 * scale).max(1e-12) < 1e-6,
                    "input grad {got} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_on_the_state_tower() {
        fd_check(&[2, 32, 32, 32, 32, 32, 32, 1], 21, 20);
    }

    #[test]
    fn gradients_match_finite_differences_on_the_scalar_tower() {
        fd_check(&[1, 32, 32, 32, 32, 32, 32, 1], 22, 20);
    }

    #[test]
    fn gradients_match_finite_differences_on_the_decoder_tower() {
        fd_check(&[1, 32, 32, 32, 32, 32, 32, 2], 23, 20);
    }

    #[test]
    fn batched_gradients_are_the_sum_of_per_sample_gradients() {
        let net = tower(&[2, 16, 16, 2], 31);
        let mut stream = RngStream::new(31, 5);
        let batch = DMatrix::from_fn(2, 9, |_, _| stream.uniform(-1.0, 1.0));
        let ogr = DMatrix::from_fn(2, 9, |_, _| stream.uniform(-1.0, 1.0));
        let (_, cache) = net.forward(&batch);
        let grads = net.backward(&cache, &ogr);
        let mut acc = net.zero_grads();
        for c in 0..batch.ncols() {
            let (_, cache1) = net.forward(&col_of(&batch, c));
            let g1 = net.backward(&cache1, &col_of(&ogr, c));
            acc.add(&g1);
            assert!((col_of(&grads.input, c) - &g1.input).norm() < 1e-12);
        }
        for l in 0..grads.weights.len() {
            assert!((&grads.weights[l] - &acc.weights[l]).norm() < 1e-11);
            assert!((&grads.biases[l] - &acc.biases[l]).norm() < 1e-11);
        }
    }

    #[test]
    fn permuting_hidden_units_leaves_the_function_unchanged() {
        let mut net = tower(&[2, 32, 32, 1], 44);
        let mut stream = RngStream::new(44, 9);
        let x = column(&[0.4, -0.9]);
        let (before, _) = net.forward(&x);
        // swap random pairs of units in hidden layer 0 with matched columns
        // in layer 1
        for _ in 0..16 {
            let a = stream.uniform_index(32);
            let b = stream.uniform_index(32);
            net.layers_mut()[0].weight.swap_rows(a, b);
            net.layers_mut()[0].bias.swap_rows(a, b);
            net.layers_mut()[1].weight.swap_columns(a, b);
        }
        let (after, _) = net.forward(&x);
        assert!((before[(0, 0)] - after[(0, 0)]).abs() < 1e-14);
    }

    #[test]
    #[should_panic(expected = "stale cache")]
    fn backward_rejects_a_cache_from_another_shape() {
        let a = tower(&[2, 8, 1], 1);
        let b = tower(&[2, 8, 8, 1], 1);
        let (_, cache) = a.forward(&column(&[1.0, 2.0]));
        b.backward(&cache, &column(&[1.0]));
    }

    #[test]
    fn optimizer_leaves_parameters_alone_on_zero_gradient() {
        let mut net = tower(&[2, 8, 1], 2);
        let before = net.clone();
        let mut opt = AdamOptimizer::new(&net, 1e-3);
        let zeros = net.zero_grads();
        opt.step(&mut net, &zeros);
        assert_eq!(net, before);
    }

    #[test]
    fn first_optimizer_step_moves_by_the_learning_rate() {
        // with bias correction, step 1 update = lr·g/(|g| + ε) ≈ lr·sign(g)
        let mut net = DenseNet::from_layers(vec![Layer {
            weight: column(&[3.0]),
            bias: DVector::zeros(1),
            activation: Activation::Identity,
        }]);
        let mut opt = AdamOptimizer::new(&net, 1e-3);
        let mut grads = net.zero_grads();
        grads.weights[0][(0, 0)] = 0.42;
        grads.biases[0][0] = -7.0;
        opt.step(&mut net, &grads);
        assert!((net.layers()[0].weight[(0, 0)] - (3.0 - 1e-3)).abs() < 1e-9);
        assert!((net.layers()[0].bias[0] - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn optimizer_descends_a_quadratic_bowl() {
        // f(w) = w², ∇f = 2w, from w₀ = 1 with lr 1e-2
        let mut net = DenseNet::from_layers(vec![Layer {
            weight: column(&[1.0]),
            bias: DVector::zeros(1),
            activation: Activation::Identity,
        }]);
        let mut opt = AdamOptimizer::new(&net, 1e-2);
        for _ in 0..500 {
            let w = net.layers()[0].weight[(0, 0)];
            let mut grads = net.zero_grads();
            grads.weights[0][(0, 0)] = 2.0 * w;
            opt.step(&mut net, &grads);
        }
        let w = net.layers()[0].weight[(0, 0)];
        assert!(w.abs() < 1e-3, "w = {w}");
    }
}
