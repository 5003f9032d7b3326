//! Fully connected Q-value estimator with ReLU hidden layers and a linear head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One affine layer; `weights` is row-major `(outputs, inputs)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DenseLayer<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn uniform<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let mut draw = || T::lit(rng.random_range(-bound..=bound));
        let weights = (0..inputs * outputs).map(|_| draw()).collect();
        let bias = (0..outputs).map(|_| draw()).collect();
        Self {
            inputs,
            outputs,
            weights,
            bias,
        }
    }

    #[inline]
    pub fn weight(&self, out: usize, inp: usize) -> T {
        self.weights[out * self.inputs + inp]
    }

    fn affine(&self, input: &[T], out: &mut Vec<T>) {
        out.clear();
        for (o, b) in self.bias.iter().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = *b;
            for (w, x) in row.iter().zip(input) {
                acc += *w * *x;
            }
            out.push(acc);
        }
    }
}

/// Gradients with the same shape as the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Vec<T>>,
    pub bias: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn norm(&self) -> T {
        self.flat().iter().map(|g| *g * *g).sum::<T>().sqrt()
    }
}

/// Pre-activations of every layer from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub input: Vec<T>,
    pub pre: Vec<Vec<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn output(&self) -> &[T] {
        self.pre.last().expect("at least one layer")
    }

    /// Which hidden units were active, for detecting ReLU kinks.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let hidden = self.pre.len().saturating_sub(1);
        self.pre[..hidden]
            .iter()
            .flat_map(|z| z.iter().map(|v| *v > T::zero()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct QNetwork<T> {
    pub layers: Vec<DenseLayer<T>>,
    pub learning_rate: T,
    pub discount: T,
}

impl<T: Scalar> QNetwork<T> {
    /// `sizes` is `[input, hidden..., output]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], learning_rate: T, discount: T, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "network needs input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| DenseLayer::uniform(w[0], w[1], rng))
            .collect();
        Self {
            layers,
            learning_rate,
            discount,
        }
    }

    pub fn zeros(sizes: &[usize], learning_rate: T, discount: T) -> Self {
        assert!(sizes.len() >= 2, "network needs input and output sizes");
        Self {
            layers: sizes
                .windows(2)
                .map(|w| DenseLayer::zeros(w[0], w[1]))
                .collect(),
            learning_rate,
            discount,
        }
    }

    pub fn from_layers(layers: Vec<DenseLayer<T>>, learning_rate: T, discount: T) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Invariant("network without layers".into()));
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Invariant("layer parameter shape mismatch".into()));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].outputs,
                    got: pair[1].inputs,
                });
            }
        }
        Ok(Self {
            layers,
            learning_rate,
            discount,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").outputs
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &T> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    /// Parameter `i` in [`Self::params`] order.
    pub fn param_mut(&mut self, mut i: usize) -> Option<&mut T> {
        for l in &mut self.layers {
            let (nw, nb) = (l.weights.len(), l.bias.len());
            if i < nw {
                return Some(&mut l.weights[i]);
            }
            if i < nw + nb {
                return Some(&mut l.bias[i - nw]);
            }
            i -= nw + nb;
        }
        None
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    pub fn trace(&self, input: &[T]) -> Result<ForwardTrace<T>> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut activation = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.affine(&activation, &mut z);
            if i < last {
                activation = z.iter().map(|v| v.max(T::zero())).collect();
            }
            pre.push(z);
        }
        Ok(ForwardTrace {
            input: input.to_vec(),
            pre,
        })
    }

    /// Q-values of every action for `input`.
    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        let mut trace = self.trace(input)?;
        Ok(trace.pre.pop().expect("at least one layer"))
    }

    /// Parameter gradients of a scalar loss whose derivative with respect to
    /// the network outputs is `d_output`.
    pub fn backward(&self, trace: &ForwardTrace<T>, d_output: &[T]) -> Gradients<T> {
        let n = self.layers.len();
        let mut weights = vec![Vec::new(); n];
        let mut bias = vec![Vec::new(); n];
        let mut delta = d_output.to_vec();
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let relu = |z: T| z.max(T::zero());
            let input: Vec<T> = if i == 0 {
                trace.input.clone()
            } else {
                trace.pre[i - 1].iter().map(|z| relu(*z)).collect()
            };
            let mut dw = vec![T::zero(); layer.inputs * layer.outputs];
            for o in 0..layer.outputs {
                for j in 0..layer.inputs {
                    dw[o * layer.inputs + j] = delta[o] * input[j];
                }
            }
            if i > 0 {
                let prev = &trace.pre[i - 1];
                let mut next_delta = vec![T::zero(); layer.inputs];
                for (j, nd) in next_delta.iter_mut().enumerate() {
                    if prev[j] > T::zero() {
                        let mut acc = T::zero();
                        for (o, d) in delta.iter().enumerate() {
                            acc += layer.weight(o, j) * *d;
                        }
                        *nd = acc;
                    }
                }
                bias[i] = std::mem::replace(&mut delta, next_delta);
            } else {
                bias[i] = std::mem::take(&mut delta);
            }
            weights[i] = dw;
        }
        Gradients { weights, bias }
    }

    /// `params -= scale * grads`.
    pub fn apply_gradients(&mut self, grads: &Gradients<T>, scale: T) {
        for ((layer, gw), gb) in self.layers.iter_mut().zip(&grads.weights).zip(&grads.bias) {
            for (w, g) in layer.weights.iter_mut().zip(gw) {
                *w -= scale * *g;
            }
            for (b, g) in layer.bias.iter_mut().zip(gb) {
                *b -= scale * *g;
            }
        }
    }
}
