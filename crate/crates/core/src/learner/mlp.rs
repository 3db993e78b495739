//! Small fully connected network with rectifier hidden layers, trained by
//! plain stochastic gradient descent.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weights = (0..inputs * outputs).map(|_| rng.gen_range(-bound..bound)).collect();
        let bias = (0..outputs).map(|_| rng.gen_range(-bound..bound)).collect();
        Dense { inputs, outputs, weights, bias }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.inputs).zip(&self.bias).map(|(row, b)| {
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Gradient buffer with the same shape as an [`Mlp`].
#[derive(Debug, Clone)]
pub struct MlpGrad {
    layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Mlp {
    /// `sizes` = `[input, hidden.., output]`.
    pub fn new(sizes: &[usize], rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2, "an mlp needs input and output sizes");
        let layers = sizes.windows(2).map(|w| Dense::new(w[0], w[1], rng)).collect();
        Mlp { layers }
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn shapes(&self) -> Vec<usize> {
        let mut s = vec![self.input_size()];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).pop().unwrap()
    }

    /// Returns the activations of every layer, input first.
    fn forward_cached(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.forward(acts.last().unwrap(), &mut out);
            if i < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        acts
    }

    pub fn zero_grad(&self) -> MlpGrad {
        MlpGrad {
            layers: self
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    /// Accumulates into `grad` the gradient of `0.5 * (out[index] - target)^2`
    /// and returns the residual `out[index] - target`.
    pub fn accumulate_output_grad(&self, x: &[f64], index: usize, target: f64, grad: &mut MlpGrad) -> f64 {
        let acts = self.forward_cached(x);
        let residual = acts.last().unwrap()[index] - target;
        let mut delta = vec![0.0; self.output_size()];
        delta[index] = residual;
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts[li];
            let (gw, gb) = &mut grad.layers[li];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(input).for_each(|(g, v)| *g += d * v);
            }
            if li == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
            }
            // Rectifier derivative on the hidden activation feeding this layer.
            prev.iter_mut().zip(input).for_each(|(p, &a)| {
                if a <= 0.0 {
                    *p = 0.0
                }
            });
            delta = prev;
        }
        residual
    }

    /// `theta -= scale * grad`.
    pub fn apply(&mut self, grad: &MlpGrad, scale: f64) {
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(&grad.layers) {
            layer.weights.iter_mut().zip(gw).for_each(|(w, g)| *w -= scale * g);
            layer.bias.iter_mut().zip(gb).for_each(|(b, g)| *b -= scale * g);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}
