//! Multilayer perceptrons.
//!
//! Hidden layers share one activation; the output layer is affine. The same
//! parameters can be evaluated directly ([`MlpParams::forward`],
//! [`MlpParams::forward_batch`]) or recorded on a [`Tape`] for training
//! ([`MlpParams::bind`]).

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diff::{DiffError, Gradients, Tape, Var};
use crate::linalg::{gemm, spectral_norm, Matrix};
use crate::math;
use crate::rng::Rng;

/// Hidden-layer nonlinearity. All three are 1-Lipschitz.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Exponential linear unit with α = 1.
    Elu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    math::expm1(x)
                }
            }
            Activation::Tanh => math::tanh(x),
            Activation::Identity => x,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Elu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Elu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }

    fn record(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Elu => tape.elu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => x,
        }
    }
}

/// Affine layer `y = W x + b` with `W` of shape `out × in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layers: Vec<Layer>,
    activation: Activation,
}

impl MlpParams {
    /// Validates that layer dimensions chain and every entry is finite.
    pub fn new(layers: Vec<Layer>, activation: Activation) -> Result<Self, DiffError> {
        let mut tensor = 0;
        for (k, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(DiffError::Shape { op: "mlp", detail: "bias length != weight rows" });
            }
            if k > 0 {
                let prev = layers[k - 1].out_dim();
                if prev != layer.in_dim() {
                    return Err(DiffError::LayerChain { layer: k, out: layer.out_dim(), inp: layer.in_dim(), prev });
                }
            }
            for t in [layer.weight.as_slice(), layer.bias.as_slice()] {
                if let Some(index) = t.iter().position(|x| !x.is_finite()) {
                    return Err(DiffError::NonFinite { tensor, index });
                }
                tensor += 1;
            }
        }
        if layers.is_empty() {
            return Err(DiffError::Shape { op: "mlp", detail: "no layers" });
        }
        Ok(Self { layers, activation })
    }

    /// Glorot-uniform weights in `±√(6/(fan_in+fan_out))`, zero biases.
    ///
    /// `sizes` lists every width including input and output, e.g.
    /// `[6, 256, 128, 2]` for two hidden layers.
    pub fn init(sizes: &[usize], activation: Activation, rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output widths");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = math::sqrt(6.0 / (fan_in + fan_out) as f64);
                let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..=limit)).collect();
                Layer { weight: Matrix::from_vec(fan_out, fan_in, data), bias: vec![0.0; fan_out] }
            })
            .collect();
        Self { layers, activation }
    }

    /// Same shape with every weight and bias zero.
    pub fn zeros_like(&self) -> Self {
        let layers = self.layers.iter().map(|l| Layer { weight: Matrix::zeros(l.out_dim(), l.in_dim()), bias: vec![0.0; l.out_dim()] }).collect();
        Self { layers, activation: self.activation }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Widths including input and output.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(Layer::out_dim));
        s
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.as_slice().len() + l.bias.len()).sum()
    }

    /// Weight and bias slices in layer order (`W₀, b₀, W₁, b₁, …`).
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Zeroes the output layer so the network starts as the constant zero map.
    pub fn zero_output_layer(&mut self) {
        if let Some(last) = self.layers.last_mut() {
            last.weight.as_mut_slice().iter_mut().for_each(|x| *x = 0.0);
            last.bias.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, DiffError> {
        if input.len() != self.input_dim() {
            return Err(DiffError::LayerInput { layer: 0, expected: self.input_dim(), got: input.len() });
        }
        let last = self.layers.len() - 1;
        let mut h = input.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut next = layer.weight.matvec(&h);
            for (n, b) in next.iter_mut().zip(&layer.bias) {
                *n += b;
                if k < last {
                    *n = self.activation.apply(*n);
                }
            }
            h = next;
        }
        Ok(h)
    }

    /// Row-wise forward pass over a `batch × in` matrix.
    pub fn forward_batch(&self, input: &Matrix) -> Result<Matrix, DiffError> {
        if input.cols() != self.input_dim() {
            return Err(DiffError::LayerInput { layer: 0, expected: self.input_dim(), got: input.cols() });
        }
        let rows = input.rows();
        let last = self.layers.len() - 1;
        let mut h = input.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let out = layer.out_dim();
            let mut next = Vec::with_capacity(rows * out);
            for _ in 0..rows {
                next.extend_from_slice(&layer.bias);
            }
            gemm(false, true, rows, out, layer.in_dim(), 1.0, h.as_slice(), layer.weight.as_slice(), 1.0, &mut next);
            if k < last {
                next.iter_mut().for_each(|x| *x = self.activation.apply(*x));
            }
            h = Matrix::from_vec(rows, out, next);
        }
        Ok(h)
    }

    /// Registers every weight and bias as a parameter leaf.
    pub fn bind(&self, tape: &mut Tape) -> MlpVars {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let w = tape.param(l.out_dim(), l.in_dim(), l.weight.as_slice());
                let b = tape.param(1, l.out_dim(), &l.bias);
                (w, b)
            })
            .collect();
        MlpVars { layers, activation: self.activation }
    }

    /// Product of the layers' spectral norms: an upper bound on the ℓ2
    /// Lipschitz constant of the network, valid because every supported
    /// activation is 1-Lipschitz.
    pub fn spectral_bound(&self) -> Result<f64, DiffError> {
        let mut beta = 1.0;
        for layer in &self.layers {
            beta *= spectral_norm(&layer.weight, 1e-10, 100_000)?;
        }
        Ok(beta)
    }
}

/// Anything made of trainable tensors, visited in a fixed order.
pub trait ParamSet: Clone {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn tensor_sizes(&self) -> Vec<usize> {
        self.tensors().iter().map(|t| t.len()).collect()
    }
}

impl ParamSet for MlpParams {
    fn tensors(&self) -> Vec<&[f64]> {
        MlpParams::tensors(self)
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        MlpParams::tensors_mut(self)
    }
}

impl ParamSet for Vec<MlpParams> {
    fn tensors(&self) -> Vec<&[f64]> {
        self.iter().flat_map(MlpParams::tensors).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.iter_mut().flat_map(MlpParams::tensors_mut).collect()
    }
}

impl<A: ParamSet, B: ParamSet> ParamSet for (A, B) {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v = self.0.tensors();
        v.extend(self.1.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let (a, b) = self;
        let mut v = a.tensors_mut();
        v.extend(b.tensors_mut());
        v
    }
}

/// Tape handles for one bound network.
#[derive(Clone, Debug)]
pub struct MlpVars {
    layers: Vec<(Var, Var)>,
    activation: Activation,
}

impl MlpVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, DiffError> {
        let (_, cols) = tape.shape(x);
        let (_, w_in) = tape.shape(self.layers[0].0);
        if cols != w_in {
            return Err(DiffError::LayerInput { layer: 0, expected: w_in, got: cols });
        }
        let last = self.layers.len() - 1;
        let mut h = x;
        for (k, (w, b)) in self.layers.iter().enumerate() {
            h = tape.linear(h, *w, *b)?;
            if k < last {
                h = self.activation.record(tape, h);
            }
        }
        Ok(h)
    }

    /// Collects gradients into a parameter-shaped container.
    pub fn gradient(&self, grads: &Gradients, shape: &MlpParams) -> MlpParams {
        let mut out = shape.zeros_like();
        for (layer, (w, b)) in out.layers.iter_mut().zip(&self.layers) {
            if let Some(g) = grads.get_ref(*w) {
                layer.weight.as_mut_slice().copy_from_slice(g);
            }
            if let Some(g) = grads.get_ref(*b) {
                layer.bias.copy_from_slice(g);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn single(w: f64, b: f64) -> MlpParams {
        MlpParams::new(vec![Layer { weight: Matrix::from_rows(&[&[w]]), bias: vec![b] }], Activation::Identity).unwrap()
    }

    #[test]
    fn single_layer_affine() {
        assert_eq!(single(1.0, 0.0).forward(&[3.0]).unwrap(), vec![3.0]);
        assert_eq!(single(2.0, 1.0).forward(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn zero_weights_give_final_bias() {
        let mut net = MlpParams::init(&[3, 4, 2], Activation::Tanh, &mut seeded(1)).zeros_like();
        net.layers_mut()[1].bias = vec![0.25, -1.5];
        for x in [[0.0, 0.0, 0.0], [1.0, -2.0, 5.0]] {
            assert_eq!(net.forward(&x).unwrap(), vec![0.25, -1.5]);
        }
    }

    #[test]
    fn dimension_mismatch_names_layer() {
        let net = MlpParams::init(&[3, 4, 2], Activation::Elu, &mut seeded(1));
        assert_eq!(net.forward(&[1.0]).unwrap_err(), DiffError::LayerInput { layer: 0, expected: 3, got: 1 });
        let bad = vec![Layer { weight: Matrix::zeros(4, 3), bias: vec![0.0; 4] }, Layer { weight: Matrix::zeros(2, 5), bias: vec![0.0; 2] }];
        assert!(matches!(MlpParams::new(bad, Activation::Elu), Err(DiffError::LayerChain { layer: 1, .. })));
        let nan = vec![Layer { weight: Matrix::from_rows(&[&[f64::NAN]]), bias: vec![0.0] }];
        assert!(matches!(MlpParams::new(nan, Activation::Elu), Err(DiffError::NonFinite { tensor: 0, index: 0 })));
    }

    #[test]
    fn forward_paths_agree_and_are_pure() {
        let net = MlpParams::init(&[5, 16, 8, 3], Activation::Elu, &mut seeded(4));
        let rows: Vec<Vec<f64>> = (0..7).map(|r| (0..5).map(|c| (r * 5 + c) as f64 * 0.13 - 2.0).collect()).collect();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let batch = net.forward_batch(&Matrix::from_vec(7, 5, flat.clone())).unwrap();
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape);
        let x = tape.constant(7, 5, flat);
        let y = vars.forward(&mut tape, x).unwrap();
        for (r, row) in rows.iter().enumerate() {
            let single = net.forward(row).unwrap();
            assert_eq!(single, net.forward(row).unwrap());
            for c in 0..3 {
                assert!((single[c] - batch[(r, c)]).abs() < 1e-12);
                assert!((single[c] - tape.value(y)[r * 3 + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spectral_bound_products() {
        let eye = MlpParams::new(vec![Layer { weight: Matrix::identity(3), bias: vec![0.0; 3] }], Activation::Elu).unwrap();
        assert!((eye.spectral_bound().unwrap() - 1.0).abs() < 1e-12);
        let two = MlpParams::new(vec![Layer { weight: Matrix::scaled_identity(3, 2.0), bias: vec![0.0; 3] }], Activation::Elu).unwrap();
        assert!((two.spectral_bound().unwrap() - 2.0).abs() < 1e-12);
        let stacked = MlpParams::new(
            vec![
                Layer { weight: Matrix::from_rows(&[&[2.0, 0.0], &[0.0, 1.0]]), bias: vec![0.0; 2] },
                Layer { weight: Matrix::from_rows(&[&[0.0, 3.0], &[1.0, 0.0]]), bias: vec![0.0; 2] },
            ],
            Activation::Tanh,
        )
        .unwrap();
        assert!((stacked.spectral_bound().unwrap() - 6.0).abs() < 1e-8);
    }

    #[test]
    fn glorot_limits_hold() {
        let net = MlpParams::init(&[6, 32, 2], Activation::Elu, &mut seeded(3));
        let lim0 = (6.0_f64 / 38.0).sqrt();
        assert!(net.layers()[0].weight.as_slice().iter().all(|w| w.abs() <= lim0));
        assert!(net.layers()[0].bias.iter().all(|b| *b == 0.0));
        assert_eq!(net.sizes(), vec![6, 32, 2]);
        assert_eq!(net.num_params(), 6 * 32 + 32 + 32 * 2 + 2);
    }
}
