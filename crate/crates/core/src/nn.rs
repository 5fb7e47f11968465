//! Dense MLPs with sine hidden activation and hand-written reverse mode.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Linear,
    Relu,
    Sine,
}

impl Activation {
    fn apply<T: Scalar>(self, z: T, freq: T) -> T {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(T::zero()),
            Activation::Sine => (freq * z).sin_fast(),
        }
    }

    /// Value and derivative at `z` in one pass.
    fn apply_with_slope<T: Scalar>(self, z: T, freq: T) -> (T, T) {
        match self {
            Activation::Sine => {
                let (s, c) = (freq * z).sin_cos_fast();
                (s, freq * c)
            }
            _ => (self.apply(z, freq), self.derivative(z, freq)),
        }
    }

    /// Derivative at pre-activation `z`. ReLU uses 0 at the kink.
    fn derivative<T: Scalar>(self, z: T, freq: T) -> T {
        match self {
            Activation::Linear => T::one(),
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sine => freq * (freq * z).sin_cos_fast().1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_size: usize,
    /// Number of hidden layers.
    pub depth: usize,
    pub width: usize,
    pub output_size: usize,
    #[serde(default)]
    pub output_activation: Activation,
    /// Hidden activation is `sin(frequency * z)`.
    #[serde(default = "unit")]
    pub frequency: f64,
}

fn unit() -> f64 {
    1.0
}

impl MlpConfig {
    pub fn new(input_size: usize, depth: usize, width: usize, output_size: usize) -> Self {
        Self { input_size, depth, width, output_size, output_activation: Activation::Linear, frequency: 1.0 }
    }

    pub fn with_output_activation(mut self, act: Activation) -> Self {
        self.output_activation = act;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.input_size == 0 || self.output_size == 0 {
            return Err(Error::Config(format!("MLP sizes must be >= 1: {self:?}")));
        }
        if !(self.frequency.is_finite() && self.frequency > 0.0) {
            return Err(Error::Config(format!("sine frequency must be positive, got {}", self.frequency)));
        }
        Ok(())
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_size];
        dims.extend(std::iter::repeat_n(self.width, self.depth));
        dims.push(self.output_size);
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }
}

/// One affine layer; `weight` is `(fan_out, fan_in)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(fan_out: usize, fan_in: usize) -> Self {
        Self { weight: Array2::zeros((fan_out, fan_in)), bias: Array1::zeros(fan_out) }
    }

    fn fan_in(&self) -> usize {
        self.weight.ncols()
    }

    fn fan_out(&self) -> usize {
        self.weight.nrows()
    }
}

/// Flat access to every trainable tensor, in a fixed order.
pub trait Parameters<T> {
    fn param_slices(&self) -> Vec<&[T]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [T]>;

    fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn l1_norm(&self) -> T
    where
        T: Scalar,
    {
        self.param_slices().iter().flat_map(|s| s.iter()).map(|x| x.abs()).sum()
    }
}

fn dense_slices<T>(layers: &[Dense<T>]) -> Vec<&[T]> {
    layers
        .iter()
        .flat_map(|l| [l.weight.as_slice().expect("standard layout"), l.bias.as_slice().expect("contiguous")])
        .collect()
}

fn dense_slices_mut<T>(layers: &mut [Dense<T>]) -> Vec<&mut [T]> {
    layers
        .iter_mut()
        .flat_map(|l| {
            [l.weight.as_slice_mut().expect("standard layout"), l.bias.as_slice_mut().expect("contiguous")]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<Dense<T>>,
    output_activation: Activation,
    frequency: f64,
}

/// Primal values recorded by [`Mlp::forward_taped`].
#[derive(Debug, Clone, Default)]
pub struct MlpTape<T> {
    inputs: Vec<Array2<T>>,
    /// Activation derivatives; empty for linear layers.
    slopes: Vec<Array2<T>>,
}

impl<T> MlpTape<T> {
    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Outputs of each hidden layer after the sine activation.
    pub fn hidden_outputs(&self) -> &[Array2<T>] {
        &self.inputs[1..]
    }
}

/// Gradient buffers shaped like an [`Mlp`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Scalar> MlpGrads<T> {
    pub fn fill_zero(&mut self) {
        for l in &mut self.layers {
            l.weight.fill(T::zero());
            l.bias.fill(T::zero());
        }
    }
}

impl<T> Parameters<T> for MlpGrads<T> {
    fn param_slices(&self) -> Vec<&[T]> {
        dense_slices(&self.layers)
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        dense_slices_mut(&mut self.layers)
    }
}

impl<T: Scalar> Mlp<T> {
    /// All-zero parameters.
    pub fn zeros(config: &MlpConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            layers: config.shapes().into_iter().map(|(o, i)| Dense::zeros(o, i)).collect(),
            output_activation: config.output_activation,
            frequency: config.frequency,
        })
    }

    /// He-normal weights (variance `2 / fan_in`) and zero biases.
    pub fn he_init(config: &MlpConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::he_init_with(config, &mut rng)
    }

    pub fn he_init_with<R: rand::Rng + ?Sized>(config: &MlpConfig, rng: &mut R) -> Result<Self> {
        let mut mlp = Self::zeros(config)?;
        for layer in &mut mlp.layers {
            let std = (2.0 / layer.fan_in() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            layer.weight.mapv_inplace(|_| T::of(normal.sample(rng)));
        }
        Ok(mlp)
    }

    /// Arbitrary layer chain: every layer but the last is a sine layer.
    pub fn from_layers(layers: Vec<Dense<T>>, output_activation: Activation, frequency: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("MLP needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::Shape(format!(
                    "layer {k} outputs {} but layer {} takes {}",
                    pair[0].fan_out(),
                    k + 1,
                    pair[1].fan_in()
                )));
            }
        }
        if let Some(l) = layers.iter().find(|l| l.bias.len() != l.fan_out()) {
            return Err(Error::Shape(format!("bias length {} for fan_out {}", l.bias.len(), l.fan_out())));
        }
        Ok(Self { layers, output_activation, frequency })
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().unwrap().fan_out()
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    /// Zeroes the weights and bias of the output layer.
    pub fn zero_final_layer(&mut self) {
        let last = self.layers.last_mut().unwrap();
        last.weight.fill(T::zero());
        last.bias.fill(T::zero());
    }

    pub fn zero_grads(&self) -> MlpGrads<T> {
        MlpGrads { layers: self.layers.iter().map(|l| Dense::zeros(l.fan_out(), l.fan_in())).collect() }
    }

    fn activation_of(&self, k: usize) -> Activation {
        if k + 1 == self.layers.len() {
            self.output_activation
        } else {
            Activation::Sine
        }
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.input_size() {
            return Err(Error::Shape(format!("MLP expects width {}, got {}", self.input_size(), x.ncols())));
        }
        Ok(())
    }

    fn affine(layer: &Dense<T>, x: &ArrayView2<T>) -> Array2<T> {
        let mut z = x.dot(&layer.weight.t());
        z += &layer.bias;
        z
    }

    /// Row-batch forward pass: each row of `x` is an independent sample.
    pub fn forward(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(&x)?;
        let freq = T::of(self.frequency);
        let mut h = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let act = self.activation_of(k);
            let mut z = Self::affine(layer, &h.view());
            z.mapv_inplace(|v| act.apply(v, freq));
            h = z;
        }
        Ok(h)
    }

    pub fn forward_vec(&self, x: ArrayView1<T>) -> Result<Array1<T>> {
        let row = x.insert_axis(Axis(0));
        Ok(self.forward(row)?.index_axis_move(Axis(0), 0))
    }

    /// Forward pass that records what [`Mlp::backward`] needs.
    pub fn forward_taped(&self, x: ArrayView2<T>) -> Result<(Array2<T>, MlpTape<T>)> {
        self.check_input(&x)?;
        let freq = T::of(self.frequency);
        let mut tape = MlpTape { inputs: Vec::with_capacity(self.layers.len()), slopes: Vec::new() };
        let mut h = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let act = self.activation_of(k);
            let mut z = Self::affine(layer, &h.view());
            let slope = if act == Activation::Linear {
                Array2::zeros((0, 0))
            } else {
                let mut slope = Array2::zeros(z.raw_dim());
                ndarray::Zip::from(&mut z).and(&mut slope).for_each(|v, d| {
                    let (a, b) = act.apply_with_slope(*v, freq);
                    *v = a;
                    *d = b;
                });
                slope
            };
            tape.inputs.push(h);
            tape.slopes.push(slope);
            h = z;
        }
        Ok((h, tape))
    }

    /// Accumulates parameter gradients into `grads` and returns the
    /// gradient with respect to the input rows.
    pub fn backward(&self, tape: &MlpTape<T>, upstream: ArrayView2<T>, grads: &mut MlpGrads<T>) -> Result<Array2<T>> {
        if tape.is_empty() {
            return Err(Error::NoTape);
        }
        if tape.inputs.len() != self.layers.len() || grads.layers.len() != self.layers.len() {
            return Err(Error::Shape("tape or gradient buffer does not match this MLP".into()));
        }
        let rows = tape.inputs[0].nrows();
        if upstream.dim() != (rows, self.output_size()) {
            return Err(Error::Shape(format!(
                "upstream gradient {:?}, expected ({rows}, {})",
                upstream.dim(),
                self.output_size()
            )));
        }
        let mut delta = upstream.to_owned();
        for k in (0..self.layers.len()).rev() {
            let act = self.activation_of(k);
            if act != Activation::Linear {
                delta *= &tape.slopes[k];
            }
            let g = &mut grads.layers[k];
            ndarray::linalg::general_mat_mul(T::one(), &delta.t(), &tape.inputs[k], T::one(), &mut g.weight);
            g.bias += &delta.sum_axis(Axis(0));
            delta = delta.dot(&self.layers[k].weight);
        }
        Ok(delta)
    }
}

impl<T> Parameters<T> for Mlp<T> {
    fn param_slices(&self) -> Vec<&[T]> {
        dense_slices(&self.layers)
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        dense_slices_mut(&mut self.layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn scalar_layer(w: f64, b: f64) -> Dense<f64> {
        Dense { weight: array![[w]], bias: array![b] }
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let mlp = Mlp::<f64>::zeros(&MlpConfig::new(3, 1, 4, 2)).unwrap();
        let y = mlp.forward(array![[1.0, -2.0, 5.0], [0.3, 0.2, 0.1]].view()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_affine_layer() {
        let mlp = Mlp::from_layers(vec![scalar_layer(2.0, 1.0)], Activation::Linear, 1.0).unwrap();
        assert_eq!(mlp.forward_vec(array![3.0].view()).unwrap(), array![7.0]);
    }

    #[test]
    fn relu_head_clamps() {
        let mlp = Mlp::from_layers(vec![scalar_layer(1.0, 0.0)], Activation::Relu, 1.0).unwrap();
        assert_eq!(mlp.forward_vec(array![-0.5].view()).unwrap(), array![0.0]);
    }

    #[test]
    fn sine_derivative_at_origin() {
        // f(x) = sin(x) as a hidden layer followed by an identity head
        let mlp =
            Mlp::from_layers(vec![scalar_layer(1.0, 0.0), scalar_layer(1.0, 0.0)], Activation::Linear, 1.0).unwrap();
        let (_, tape) = mlp.forward_taped(array![[0.0]].view()).unwrap();
        let mut g = mlp.zero_grads();
        let dx = mlp.backward(&tape, array![[1.0]].view(), &mut g).unwrap();
        assert_eq!(dx, array![[1.0]]);
    }

    #[test]
    fn backward_needs_forward() {
        let mlp = Mlp::<f64>::zeros(&MlpConfig::new(1, 1, 1, 1)).unwrap();
        let mut g = mlp.zero_grads();
        assert!(matches!(mlp.backward(&MlpTape::default(), array![[1.0]].view(), &mut g), Err(Error::NoTape)));
    }

    #[test]
    fn shape_errors() {
        let mlp = Mlp::<f64>::zeros(&MlpConfig::new(2, 1, 3, 1)).unwrap();
        assert!(matches!(mlp.forward(array![[1.0]].view()), Err(Error::Shape(_))));
        assert!(MlpConfig::new(2, 0, 3, 1).validate().is_err());
        let bad = vec![Dense::<f64>::zeros(3, 2), Dense::zeros(1, 4)];
        assert!(Mlp::from_layers(bad, Activation::Linear, 1.0).is_err());
    }

    #[test]
    fn he_init_statistics() {
        // fan_in 8 -> variance 0.25; one layer of 12500 x 8 = 1e5 draws
        let cfg = MlpConfig { input_size: 8, depth: 1, width: 12_500, output_size: 1, ..MlpConfig::new(8, 1, 1, 1) };
        let mlp = Mlp::<f64>::he_init(&cfg, 7).unwrap();
        let w = &mlp.layers()[0].weight;
        assert_eq!(w.len(), 100_000);
        let mean = w.mean().unwrap();
        let var = w.mapv(|x| (x - mean).powi(2)).mean().unwrap();
        assert!((var - 0.25).abs() / 0.25 < 0.05, "sample variance {var}");
        assert!(mlp.layers().iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        let again = Mlp::<f64>::he_init(&cfg, 7).unwrap();
        assert_eq!(mlp, again);
    }

    #[test]
    fn hidden_outputs_bounded_and_forward_deterministic() {
        let cfg = MlpConfig::new(4, 3, 16, 2);
        let mlp = Mlp::<f64>::he_init(&cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Array2::from_shape_fn((64, 4), |_| rng.random_range(-20.0..20.0));
        let (y, tape) = mlp.forward_taped(x.view()).unwrap();
        for h in tape.hidden_outputs() {
            assert!(h.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        assert_eq!(y, mlp.forward(x.view()).unwrap());
        assert_eq!(y, mlp.forward(x.view()).unwrap());
    }

    /// Central finite differences of `sum(upstream * forward(x))`.
    fn fd_check(mlp: &Mlp<f64>, x: &Array2<f64>, upstream: &Array2<f64>) {
        let objective = |m: &Mlp<f64>, x: &Array2<f64>| (m.forward(x.view()).unwrap() * upstream).sum();
        let (_, tape) = mlp.forward_taped(x.view()).unwrap();
        let mut grads = mlp.zero_grads();
        let dx = mlp.backward(&tape, upstream.view(), &mut grads).unwrap();

        let check = |analytic: f64, plus: f64, minus: f64, h: f64| {
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(rel < 1e-5, "analytic {analytic} numeric {numeric} rel {rel}");
        };

        let mut probe = mlp.clone();
        let flat: Vec<Vec<f64>> = mlp.param_slices().iter().map(|s| s.to_vec()).collect();
        let gflat: Vec<Vec<f64>> = grads.param_slices().iter().map(|s| s.to_vec()).collect();
        for (t, vals) in flat.iter().enumerate() {
            for (i, &theta) in vals.iter().enumerate() {
                let h = 1e-6 * theta.abs().max(1.0);
                probe.param_slices_mut()[t][i] = theta + h;
                let plus = objective(&probe, x);
                probe.param_slices_mut()[t][i] = theta - h;
                let minus = objective(&probe, x);
                probe.param_slices_mut()[t][i] = theta;
                check(gflat[t][i], plus, minus, h);
            }
        }
        for idx in ndarray::indices(x.dim()) {
            let mut xp = x.clone();
            let h = 1e-6 * x[idx].abs().max(1.0);
            xp[idx] += h;
            let plus = objective(mlp, &xp);
            xp[idx] -= 2.0 * h;
            let minus = objective(mlp, &xp);
            check(dx[idx], plus, minus, h);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..12 {
            let cfg = MlpConfig {
                input_size: rng.random_range(1..5),
                depth: rng.random_range(1..=3),
                width: rng.random_range(1..=8),
                output_size: rng.random_range(1..4),
                output_activation: [Activation::Linear, Activation::Sine, Activation::Relu][trial % 3],
                frequency: 1.0,
            };
            let mut mlp = Mlp::<f64>::he_init(&cfg, trial as u64).unwrap();
            for l in mlp.layers_mut() {
                l.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
            }
            let x = Array2::from_shape_fn((3, cfg.input_size), |_| rng.random_range(-1.0..1.0));
            let up = Array2::from_shape_fn((3, cfg.output_size), |_| rng.random_range(-1.0..1.0));
            fd_check(&mlp, &x, &up);
        }
    }

    #[test]
    fn mae_gradient_is_sign() {
        // L = |y_hat - y| with y_hat = w x + b
        let mlp = Mlp::from_layers(vec![scalar_layer(0.5, 0.0)], Activation::Linear, 1.0).unwrap();
        let (y, tape) = mlp.forward_taped(array![[2.0]].view()).unwrap();
        let target = 3.0;
        let dl = (y[[0, 0]] - target).signum();
        let mut g = mlp.zero_grads();
        mlp.backward(&tape, array![[dl]].view(), &mut g).unwrap();
        assert_eq!(dl, -1.0);
        assert_eq!(g.layers[0].bias[0], -1.0);
        assert_eq!(g.layers[0].weight[[0, 0]], -2.0);
    }
}
