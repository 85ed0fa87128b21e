use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ProbMatrix;

use super::tape::{Tape, TapeGrads, Var};
use super::tensor::Tensor;

/// One dense layer, `x W + b` with `W: fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Multi-layer perceptron with ReLU between layers and raw logits out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layers: Vec<Dense>,
}

impl MlpModel {
    /// Glorot-uniform weights and zero biases for the widths
    /// `[input, hidden.., classes]`.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidInput(format!("bad layer widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-a..a))
                    .collect();
                Dense {
                    weight: Tensor::new(fan_in, fan_out, data).expect("sized"),
                    bias: Tensor::zeros(1, fan_out),
                }
            })
            .collect();
        Ok(MlpModel { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("model has no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.rows() != 1 || l.bias.cols() != l.weight.cols() {
                return Err(Error::dims(l.weight.cols(), l.bias.cols()));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.weight.rows() != l.weight.cols() {
                    return Err(Error::dims(l.weight.cols(), next.weight.rows()));
                }
            }
        }
        Ok(MlpModel { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.cols()
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.weight.cols()))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.data().len())
            .sum()
    }

    /// Parameters in a fixed order: per layer, weight then bias.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.data().iter().chain(l.bias.data()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| {
            l.weight
                .data_mut()
                .iter_mut()
                .chain(l.bias.data_mut().iter_mut())
        })
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::dims(self.input_dim(), x.cols()));
        }
        Ok(())
    }

    /// Records the forward pass on a fresh tape, with the input and every
    /// parameter as leaves.
    pub fn forward(&self, x: &Tensor) -> Result<Forward> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let input = tape.leaf(x.clone())?;
        let mut params = Vec::with_capacity(self.layers.len());
        let mut h = input;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = tape.leaf(layer.weight.clone())?;
            let b = tape.leaf(layer.bias.clone())?;
            params.push((w, b));
            let z = tape.matmul(h, w)?;
            h = tape.add_row(z, b)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h)?;
            }
        }
        Ok(Forward {
            tape,
            input,
            logits: h,
            params,
        })
    }

    /// Forward pass without recording.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.matmul(&layer.weight)?;
            let cols = h.cols();
            for (j, v) in h.data_mut().iter_mut().enumerate() {
                *v += layer.bias.data()[j % cols];
            }
            if i + 1 < self.layers.len() {
                h = h.map(|v| v.max(0.0));
            }
        }
        if !h.is_finite() {
            return Err(Error::Numerical("non-finite logits".into()));
        }
        Ok(h)
    }

    /// Softmax of the logits, one row per input row.
    pub fn predict_proba(&self, x: &Tensor) -> Result<ProbMatrix> {
        let logits = self.logits(x)?;
        ProbMatrix::from_logits(logits.data(), logits.cols())
    }
}

/// A recorded forward pass.
#[derive(Debug)]
pub struct Forward {
    pub tape: Tape,
    pub input: Var,
    pub logits: Var,
    params: Vec<(Var, Var)>,
}

impl Forward {
    pub fn param_vars(&self) -> &[(Var, Var)] {
        &self.params
    }

    /// Gradients of a scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let grads = self.tape.backward(loss)?;
        Ok(self.collect(&grads))
    }

    /// Parameter gradients plus the gradient with respect to the input.
    pub fn backward_with_input(&self, loss: Var) -> Result<(Gradients, Tensor)> {
        let grads = self.tape.backward(loss)?;
        let x = self.tape.value(self.input);
        let gx = grads
            .get(self.input)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(x.rows(), x.cols()));
        Ok((self.collect(&grads), gx))
    }

    fn collect(&self, grads: &TapeGrads) -> Gradients {
        let pick = |v: Var| {
            grads.get(v).cloned().unwrap_or_else(|| {
                let t = self.tape.value(v);
                Tensor::zeros(t.rows(), t.cols())
            })
        };
        Gradients {
            layers: self
                .params
                .iter()
                .map(|&(w, b)| (pick(w), pick(b)))
                .collect(),
        }
    }
}

/// Per-layer `(weight, bias)` gradients, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Tensor, Tensor)>,
}

impl Gradients {
    /// Same order as [`MlpModel::params`].
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.data().iter().chain(b.data()).copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.is_finite() && b.is_finite())
    }
}
