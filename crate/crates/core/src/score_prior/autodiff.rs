//! Reverse-mode differentiation for small multilayer perceptrons.
//!
//! Only the operations the score network needs are supported: affine maps,
//! pointwise activations and residual blocks `x + act(W x + b)`. The forward
//! pass records each layer input on a [`Tape`]; the backward pass walks the
//! tape in reverse and returns the input cotangent, optionally accumulating
//! parameter gradients.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Silu,
    Softplus,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Softplus => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
            Activation::Identity => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Softplus => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => 1.0,
        }
    }
}

/// `y = W x + b` with `W` stored row-major as `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Glorot-normal weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let std = (2.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>())
            .collect()
    }

    /// `Wᵀ g`
    fn transpose_apply(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.in_dim];
        for (row, gi) in self.weight.chunks_exact(self.in_dim).zip(g) {
            if *gi == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * gi;
            }
        }
        out
    }

    fn accumulate(&self, x: &[f64], g: &[f64], grad: &mut AffineGrad) {
        for ((row, gi), gb) in grad.weight.chunks_exact_mut(self.in_dim).zip(g).zip(grad.bias.iter_mut()) {
            *gb += gi;
            for (gw, xi) in row.iter_mut().zip(x) {
                *gw += gi * xi;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Affine(Affine),
    Activation(Activation),
    Residual { affine: Affine, activation: Activation },
}

impl Layer {
    fn affine(&self) -> Option<&Affine> {
        match self {
            Layer::Affine(a) | Layer::Residual { affine: a, .. } => Some(a),
            Layer::Activation(_) => None,
        }
    }

    fn affine_mut(&mut self) -> Option<&mut Affine> {
        match self {
            Layer::Affine(a) | Layer::Residual { affine: a, .. } => Some(a),
            Layer::Activation(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients, one slot per layer (empty for parameter-free layers).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Option<AffineGrad>>,
}

impl MlpGrads {
    pub fn scale(&mut self, s: f64) {
        for g in self.layers.iter_mut().flatten() {
            g.weight.iter_mut().for_each(|w| *w *= s);
            g.bias.iter_mut().for_each(|b| *b *= s);
        }
    }

    pub fn add(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some(a), Some(b)) = (a, b) {
                a.weight.iter_mut().zip(&b.weight).for_each(|(x, y)| *x += y);
                a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flatten()
            .all(|g| g.weight.iter().chain(&g.bias).all(|v| v.is_finite()))
    }
}

/// Values recorded by the forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Vec<f64>>,
    preacts: Vec<Option<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

impl Mlp {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = match layer {
                Layer::Affine(a) => a.forward(&x),
                Layer::Activation(act) => x.iter().map(|v| act.apply(*v)).collect(),
                Layer::Residual { affine, activation } => {
                    let pre = affine.forward(&x);
                    x.iter().zip(&pre).map(|(xi, p)| xi + activation.apply(*p)).collect()
                }
            };
        }
        x
    }

    pub fn forward_recorded(&self, input: &[f64]) -> (Vec<f64>, Tape) {
        let mut tape = Tape {
            inputs: Vec::with_capacity(self.layers.len()),
            preacts: Vec::with_capacity(self.layers.len()),
        };
        let mut x = input.to_vec();
        for layer in &self.layers {
            let (next, pre) = match layer {
                Layer::Affine(a) => (a.forward(&x), None),
                Layer::Activation(act) => (x.iter().map(|v| act.apply(*v)).collect(), None),
                Layer::Residual { affine, activation } => {
                    let pre = affine.forward(&x);
                    let out = x.iter().zip(&pre).map(|(xi, p)| xi + activation.apply(*p)).collect();
                    (out, Some(pre))
                }
            };
            tape.inputs.push(std::mem::replace(&mut x, next));
            tape.preacts.push(pre);
        }
        (x, tape)
    }

    /// Propagates `cotangent` (on the output) back to the input.
    pub fn backward(&self, tape: &Tape, cotangent: &[f64], mut grads: Option<&mut MlpGrads>) -> Vec<f64> {
        let mut g = cotangent.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let input = &tape.inputs[k];
            g = match layer {
                Layer::Affine(a) => {
                    if let Some(gr) = grads.as_deref_mut() {
                        a.accumulate(input, &g, gr.layers[k].as_mut().expect("affine slot"));
                    }
                    a.transpose_apply(&g)
                }
                Layer::Activation(act) => g.iter().zip(input).map(|(gi, xi)| gi * act.derivative(*xi)).collect(),
                Layer::Residual { affine, activation } => {
                    let pre = tape.preacts[k].as_ref().expect("residual pre-activation");
                    let inner: Vec<f64> = g.iter().zip(pre).map(|(gi, p)| gi * activation.derivative(*p)).collect();
                    if let Some(gr) = grads.as_deref_mut() {
                        affine.accumulate(input, &inner, gr.layers[k].as_mut().expect("residual slot"));
                    }
                    let back = affine.transpose_apply(&inner);
                    g.iter().zip(&back).map(|(a, b)| a + b).collect()
                }
            };
        }
        g
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    l.affine().map(|a| AffineGrad {
                        weight: vec![0.0; a.weight.len()],
                        bias: vec![0.0; a.bias.len()],
                    })
                })
                .collect(),
        }
    }

    /// Visits every parameter buffer together with its gradient.
    pub fn for_each_param_mut(&mut self, grads: &MlpGrads, mut f: impl FnMut(usize, &mut [f64], &[f64])) {
        let mut slot = 0;
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            if let (Some(a), Some(g)) = (layer.affine_mut(), g) {
                f(slot, &mut a.weight, &g.weight);
                f(slot + 1, &mut a.bias, &g.bias);
                slot += 2;
            }
        }
    }

    pub fn n_param_buffers(&self) -> usize {
        2 * self.layers.iter().filter(|l| l.affine().is_some()).count()
    }

    pub fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .filter_map(Layer::affine)
            .all(|a| a.weight.iter().chain(&a.bias).all(|v| v.is_finite()))
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.iter().find_map(Layer::affine).map(|a| a.in_dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    fn sample_mlp(rng: &mut crate::Rng) -> Mlp {
        let mut l1 = Affine::glorot(3, 5, rng);
        l1.bias = vec![0.1, -0.2, 0.3, 0.0, 0.5];
        let mut res = Affine::glorot(5, 5, rng);
        res.bias = vec![0.05; 5];
        Mlp::new(vec![
            Layer::Affine(l1),
            Layer::Activation(Activation::Silu),
            Layer::Residual {
                affine: res,
                activation: Activation::Tanh,
            },
            Layer::Affine(Affine::glorot(5, 2, rng)),
        ])
    }

    fn loss(m: &Mlp, x: &[f64], c: &[f64]) -> f64 {
        m.forward(x).iter().zip(c).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn recorded_forward_matches_plain_forward() {
        let mut rng = rng_from_seed(1, 0);
        let m = sample_mlp(&mut rng);
        let x = [0.3, -0.7, 1.1];
        assert_eq!(m.forward(&x), m.forward_recorded(&x).0);
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut rng = rng_from_seed(2, 0);
        let m = sample_mlp(&mut rng);
        let x = [0.3, -0.7, 1.1];
        let c = [0.9, -1.3];
        let (_, tape) = m.forward_recorded(&x);
        let mut grads = m.zero_grads();
        m.backward(&tape, &c, Some(&mut grads));
        let h = 1e-6;
        for (k, layer) in m.layers.iter().enumerate() {
            let Some(a) = layer.affine() else { continue };
            for idx in [0, a.weight.len() / 2, a.weight.len() - 1] {
                let mut p = m.clone();
                let mut q = m.clone();
                p.layers[k].affine_mut().unwrap().weight[idx] += h;
                q.layers[k].affine_mut().unwrap().weight[idx] -= h;
                let fd = (loss(&p, &x, &c) - loss(&q, &x, &c)) / (2.0 * h);
                let got = grads.layers[k].as_ref().unwrap().weight[idx];
                assert!((fd - got).abs() < 1e-7 * (1.0 + fd.abs()), "layer {k} idx {idx}: {got} vs {fd}");
            }
            let mut p = m.clone();
            let mut q = m.clone();
            p.layers[k].affine_mut().unwrap().bias[0] += h;
            q.layers[k].affine_mut().unwrap().bias[0] -= h;
            let fd = (loss(&p, &x, &c) - loss(&q, &x, &c)) / (2.0 * h);
            let got = grads.layers[k].as_ref().unwrap().bias[0];
            assert!((fd - got).abs() < 1e-7 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn activation_derivatives() {
        for act in [Activation::Tanh, Activation::Silu, Activation::Softplus, Activation::Identity] {
            for x in [-3.0, -0.5, 0.0, 0.7, 4.0] {
                let h = 1e-6;
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!((fd - act.derivative(x)).abs() < 1e-8, "{act:?} at {x}");
            }
        }
    }
}
