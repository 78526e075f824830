//! Fully connected Q-network with hand-written backpropagation.
//!
//! Layers compute `act(W x + b)` with `W` stored `out × in`. The loss is a
//! masked mean squared error: only the entries selected by the mask (the
//! action actually taken) contribute, matching a per-sample regression of
//! one Q-value toward its target.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::substream;
use crate::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        if self == Activation::Relu {
            z.mapv_inplace(|v| v.max(0.0));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// Per-layer parameter gradients (or any tensor shaped like the parameters).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    biases: Array1::zeros(l.biases.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|g| g.weights.iter().chain(g.biases.iter()).copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
}

impl MlpModel {
    /// Checks that dimensions chain and that the output layer is linear.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::Validation("model has no layers".into()));
        };
        if last.activation != Activation::Identity {
            return Err(Error::Validation("output layer must be linear".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.biases.len() != l.out_dim() || l.in_dim() == 0 || l.out_dim() == 0 {
                return Err(Error::Validation(format!("layer {i} has inconsistent shapes")));
            }
            if !l.weights.iter().chain(l.biases.iter()).all(|v| v.is_finite()) {
                return Err(Error::Validation(format!("layer {i} has non-finite parameters")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Validation(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// ReLU hidden layers and a linear head. Weights are uniform in
    /// `±1/sqrt(fan_in)`, biases zero.
    pub fn init(input_dim: usize, hidden: &[usize], outputs: usize, seed: u64) -> Self {
        assert!(input_dim > 0 && outputs > 0 && hidden.iter().all(|&h| h > 0));
        let mut rng = substream(seed, "mlp-init", 0);
        let dims: Vec<usize> = std::iter::once(input_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(outputs))
            .collect();
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| {
                let bound = 1.0 / (d[0] as f64).sqrt();
                Layer {
                    weights: Array2::from_shape_simple_fn((d[1], d[0]), || {
                        rng.random_range(-bound..bound)
                    }),
                    biases: Array1::zeros(d[1]),
                    activation: if i + 1 == n {
                        Activation::Identity
                    } else {
                        Activation::Relu
                    },
                }
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(f64::is_finite)
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.input_dim(), "input dimension mismatch");
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        self.forward_batch(x).into_raw_vec_and_offset().0
    }

    /// Row-wise forward pass: `inputs` is `batch × input_dim`.
    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(inputs.ncols(), self.input_dim(), "input dimension mismatch");
        let mut a = inputs.to_owned();
        for layer in &self.layers {
            let mut z = a.dot(&layer.weights.t());
            z += &layer.biases;
            layer.activation.apply(&mut z);
            a = z;
        }
        a
    }

    /// Masked mean squared error over the entries where `mask` is nonzero.
    pub fn loss(&self, inputs: ArrayView2<f64>, targets: ArrayView2<f64>, mask: ArrayView2<f64>) -> f64 {
        let y = self.forward_batch(inputs);
        masked_mse(&y, targets, mask)
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn backward(
        &self,
        inputs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
        mask: ArrayView2<f64>,
    ) -> (Gradients, f64) {
        assert_eq!(inputs.ncols(), self.input_dim(), "input dimension mismatch");
        let out_shape = (inputs.nrows(), self.output_dim());
        assert_eq!(targets.dim(), out_shape, "target shape mismatch");
        assert_eq!(mask.dim(), out_shape, "mask shape mismatch");

        // activations[0] is the input; activations[i + 1] is layer i's output.
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(inputs.to_owned());
        for layer in &self.layers {
            let mut z = activations.last().expect("input").dot(&layer.weights.t());
            z += &layer.biases;
            layer.activation.apply(&mut z);
            activations.push(z);
        }
        let y = activations.last().expect("output");
        let loss = masked_mse(y, targets, mask);
        let count: f64 = mask.sum();

        let mut grads = Gradients::zeros_like(self);
        if count == 0.0 {
            return (grads, loss);
        }
        let mut delta = Array2::zeros(out_shape);
        Zip::from(&mut delta)
            .and(y)
            .and(targets)
            .and(mask)
            .for_each(|d, &p, &t, &m| *d = -2.0 * m * (t - p) / count);

        for (i, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                // The post-activation is positive exactly where the pre-activation is.
                Zip::from(&mut delta)
                    .and(&activations[i + 1])
                    .for_each(|d, &a| {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    });
            }
            grads.layers[i].weights = delta.t().dot(&activations[i]);
            grads.layers[i].biases = delta.sum_axis(Axis(0));
            if i > 0 {
                delta = delta.dot(&layer.weights);
            }
        }
        (grads, loss)
    }

    fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            if index < nw {
                return &mut layer.weights.as_slice_mut().expect("standard layout")[index];
            }
            index -= nw;
            let nb = layer.biases.len();
            if index < nb {
                return &mut layer.biases[index];
            }
            index -= nb;
        }
        panic!("parameter index out of range");
    }

    /// Overwrites this model's parameters with `other`'s.
    pub fn copy_from(&mut self, other: &MlpModel) {
        assert_eq!(self.layers.len(), other.layers.len());
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            dst.weights.assign(&src.weights);
            dst.biases.assign(&src.biases);
        }
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            input_dim: self.input_dim(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    in_dim: l.in_dim(),
                    out_dim: l.out_dim(),
                    activation: l.activation,
                    weights: l.weights.iter().copied().collect(),
                    biases: l.biases.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported model format version {}",
                file.format_version
            )));
        }
        let layers = file
            .layers
            .into_iter()
            .map(|l| {
                let weights = Array2::from_shape_vec((l.out_dim, l.in_dim), l.weights)
                    .map_err(|e| Error::Validation(format!("weights: {e}")))?;
                Ok(Layer {
                    weights,
                    biases: Array1::from(l.biases),
                    activation: l.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = Self::new(layers)?;
        if model.input_dim() != file.input_dim {
            return Err(Error::Validation("input_dim does not match first layer".into()));
        }
        Ok(model)
    }

    pub fn save_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer(writer, &self.to_file())?;
        Ok(())
    }

    pub fn load_json<R: Read>(reader: R) -> Result<Self> {
        Self::from_file(serde_json::from_reader(reader)?)
    }
}

fn masked_mse(y: &Array2<f64>, targets: ArrayView2<f64>, mask: ArrayView2<f64>) -> f64 {
    let count: f64 = mask.sum();
    if count == 0.0 {
        return 0.0;
    }
    let mut sum = 0.0;
    Zip::from(y)
        .and(targets)
        .and(mask)
        .for_each(|&p, &t, &m| sum += m * (t - p) * (t - p));
    sum / count
}

/// On-disk model: dimensions, row-major weights, biases and a format version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub input_dim: usize,
    pub layers: Vec<LayerFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFile {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            decay: 0.9,
            epsilon: 1e-8,
        }
    }
}

/// RMSprop state: a running mean of squared gradients per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub config: RmsPropConfig,
    sq_avg: Gradients,
}

impl RmsProp {
    pub fn new(model: &MlpModel, config: RmsPropConfig) -> Self {
        Self {
            config,
            sq_avg: Gradients::zeros_like(model),
        }
    }

    pub fn averages(&self) -> &Gradients {
        &self.sq_avg
    }

    /// `avg ← ρ·avg + (1−ρ)·g²`, `θ ← θ − lr·g / (sqrt(avg) + ε)`.
    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients) {
        let RmsPropConfig {
            learning_rate: lr,
            decay,
            epsilon: eps,
        } = self.config;
        assert_eq!(grads.layers.len(), model.layers.len(), "gradient shape mismatch");
        for ((layer, g), avg) in model
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.sq_avg.layers)
        {
            Zip::from(&mut layer.weights)
                .and(&g.weights)
                .and(&mut avg.weights)
                .for_each(|p, &g, a| {
                    *a = decay * *a + (1.0 - decay) * g * g;
                    *p -= lr * g / (a.sqrt() + eps);
                });
            Zip::from(&mut layer.biases)
                .and(&g.biases)
                .and(&mut avg.biases)
                .for_each(|p, &g, a| {
                    *a = decay * *a + (1.0 - decay) * g * g;
                    *p -= lr * g / (a.sqrt() + eps);
                });
        }
    }
}

/// Largest relative error between [`MlpModel::backward`] and central
/// differences with step `h`, over every parameter.
///
/// Relative error is `|a − b| / max(|a|, |b|, 1e-8)`. A configuration with
/// zero loss has zero error by definition.
pub fn grad_check(
    model: &MlpModel,
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    mask: ArrayView2<f64>,
    h: f64,
) -> f64 {
    assert!(h > 0.0, "finite-difference step must be positive");
    let (grads, base_loss) = model.backward(inputs, targets, mask);
    if base_loss == 0.0 {
        return 0.0;
    }
    let analytic: Vec<f64> = grads.iter().collect();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = *probe.param_mut(i);
        *probe.param_mut(i) = orig + h;
        let up = probe.loss(inputs, targets, mask);
        *probe.param_mut(i) = orig - h;
        let down = probe.loss(inputs, targets, mask);
        *probe.param_mut(i) = orig;
        let numeric = (up - down) / (2.0 * h);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn single_layer(weights: Array2<f64>, activation: Activation) -> Layer {
        let out = weights.nrows();
        Layer {
            weights,
            biases: Array1::zeros(out),
            activation,
        }
    }

    #[test]
    fn init_shapes_and_zero_biases() {
        let m = MlpModel::init(25, &[64, 64], 6, 1);
        let shapes: Vec<_> = m.layers().iter().map(|l| l.weights.dim()).collect();
        assert_eq!(shapes, vec![(64, 25), (64, 64), (6, 64)]);
        assert!(m.layers().iter().all(|l| l.biases.iter().all(|&b| b == 0.0)));
        assert_eq!(m.layers()[2].activation, Activation::Identity);
        assert_eq!(m, MlpModel::init(25, &[64, 64], 6, 1));
        assert_ne!(m, MlpModel::init(25, &[64, 64], 6, 2));
        let bound = 1.0 / 5.0;
        assert!(m.layers()[0].weights.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn zero_model_outputs_zero() {
        let mut m = MlpModel::init(3, &[4], 2, 0);
        for l in &mut m.layers {
            l.weights.fill(0.0);
        }
        assert_eq!(m.forward(&[1.0, -2.0, 3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let m = MlpModel::new(vec![single_layer(Array2::eye(3), Activation::Identity)]).unwrap();
        assert_eq!(m.forward(&[0.5, -1.0, 2.0]), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn relu_clips_negative_preactivations() {
        let m = MlpModel::new(vec![
            single_layer(Array2::eye(2), Activation::Relu),
            single_layer(Array2::eye(2), Activation::Identity),
        ])
        .unwrap();
        assert_eq!(m.forward(&[-1.0, 2.0]), vec![0.0, 2.0]);
    }

    #[test]
    fn mismatched_layers_rejected() {
        let err = MlpModel::new(vec![
            single_layer(Array2::zeros((3, 2)), Activation::Relu),
            single_layer(Array2::zeros((1, 4)), Activation::Identity),
        ]);
        assert!(err.is_err());
        let relu_head = MlpModel::new(vec![single_layer(Array2::zeros((1, 2)), Activation::Relu)]);
        assert!(relu_head.is_err());
    }

    #[test]
    #[should_panic(expected = "input dimension mismatch")]
    fn wrong_input_length_panics() {
        MlpModel::init(3, &[4], 2, 0).forward(&[1.0]);
    }

    #[test]
    fn perfect_prediction_has_zero_gradient() {
        let m = MlpModel::init(4, &[5], 3, 9);
        let x = array![[0.1, 0.2, -0.3, 0.4]];
        let y = m.forward_batch(x.view());
        let mask = array![[1.0, 0.0, 1.0]];
        let (g, loss) = m.backward(x.view(), y.view(), mask.view());
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|v| v == 0.0));
        assert_eq!(grad_check(&m, x.view(), y.view(), mask.view(), 1e-5), 0.0);
    }

    #[test]
    fn linear_neuron_gradient_is_analytic() {
        let w = array![[0.5, -0.25]];
        let m = MlpModel::new(vec![single_layer(w, Activation::Identity)]).unwrap();
        let x = array![[2.0, 4.0]];
        let t = array![[3.0]];
        let mask = array![[1.0]];
        let (g, loss) = m.backward(x.view(), t.view(), mask.view());
        let y = 0.5 * 2.0 - 0.25 * 4.0;
        assert_eq!(loss, (3.0 - y) * (3.0 - y));
        let expect = [-2.0 * (3.0 - y) * 2.0, -2.0 * (3.0 - y) * 4.0];
        assert_eq!(g.layers[0].weights.as_slice().unwrap(), &expect);
        assert!(grad_check(&m, x.view(), t.view(), mask.view(), 1e-5) < 1e-10);
    }

    #[test]
    fn full_size_network_passes_gradient_check() {
        let m = MlpModel::init(25, &[64, 64], 6, 4);
        let mut rng = substream(4, "test", 0);
        let x = Array2::from_shape_simple_fn((3, 25), || rng.random_range(-1.0..1.0));
        let t = Array2::from_shape_simple_fn((3, 6), || rng.random_range(-1.0..1.0));
        let mut mask = Array2::zeros((3, 6));
        for (i, a) in [1, 4, 0].into_iter().enumerate() {
            mask[[i, a]] = 1.0;
        }
        let err = grad_check(&m, x.view(), t.view(), mask.view(), 1e-5);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn masked_entries_do_not_contribute() {
        let m = MlpModel::init(2, &[3], 2, 5);
        let x = array![[0.3, -0.7]];
        let y = m.forward_batch(x.view());
        let t = array![[y[[0, 0]] + 1.0, y[[0, 1]] + 100.0]];
        let loss = m.loss(x.view(), t.view(), array![[1.0, 0.0]].view());
        assert!((loss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rmsprop_first_step() {
        let mut m = MlpModel::new(vec![single_layer(array![[0.0]], Activation::Identity)]).unwrap();
        let mut opt = RmsProp::new(&m, RmsPropConfig::default());
        let g = Gradients {
            layers: vec![LayerGrad {
                weights: array![[1.0]],
                biases: array![0.0],
            }],
        };
        opt.step(&mut m, &g);
        let avg = opt.averages().layers[0].weights[[0, 0]];
        assert!((avg - 0.1).abs() < 1e-15);
        let expected = -0.001 / (0.1f64.sqrt() + 1e-8);
        assert!((m.layers()[0].weights[[0, 0]] - expected).abs() < 1e-15);
        assert_eq!(m.layers()[0].biases[0], 0.0);
    }

    #[test]
    fn rmsprop_zero_gradient_decays_averages() {
        let mut m = MlpModel::init(2, &[2], 1, 0);
        let before = m.clone();
        let mut opt = RmsProp::new(&m, RmsPropConfig::default());
        let g1 = Gradients::zeros_like(&m);
        let mut g = g1.clone();
        g.layers[0].weights.fill(2.0);
        opt.step(&mut m, &g);
        let avg_before: Vec<f64> = opt.averages().iter().collect();
        let after_first = m.clone();
        opt.step(&mut m, &g1);
        assert_eq!(m, after_first);
        for (a, b) in opt.averages().iter().zip(avg_before) {
            assert!((a - 0.9 * b).abs() < 1e-15);
        }
        assert_ne!(after_first, before);
    }

    #[test]
    fn rmsprop_is_deterministic() {
        let m0 = MlpModel::init(3, &[4], 2, 8);
        let x = array![[0.1, 0.5, -0.2]];
        let t = array![[1.0, -1.0]];
        let mask = array![[1.0, 1.0]];
        let run = || {
            let mut m = m0.clone();
            let mut opt = RmsProp::new(&m, RmsPropConfig::default());
            for _ in 0..5 {
                let (g, _) = m.backward(x.view(), t.view(), mask.view());
                opt.step(&mut m, &g);
            }
            m
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = MlpModel::init(5, &[7, 3], 4, 12);
        let mut buf = Vec::new();
        m.save_json(&mut buf).unwrap();
        let back = MlpModel::load_json(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\"format_version\":1"));
    }

    #[test]
    fn relu_network_is_positively_homogeneous() {
        let m = MlpModel::init(4, &[8, 8], 3, 21);
        let x = [0.3, -0.1, 0.8, 0.2];
        let y = m.forward(&x);
        let scaled: Vec<f64> = x.iter().map(|v| v * 2.5).collect();
        for (a, b) in m.forward(&scaled).iter().zip(y) {
            assert!((a - 2.5 * b).abs() < 1e-12);
        }
    }
}
