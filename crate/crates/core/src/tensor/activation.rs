use serde::{Deserialize, Serialize};

use super::{Result, Tensor, TensorError};

/// Bounded elementwise nonlinearities for hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative at the pre-activation `x`.
    pub fn grad(self, x: f64) -> f64 {
        self.grad_from_output(self.eval(x))
    }

    /// Derivative expressed through the activation output `y = f(x)`.
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn apply(self, x: &Tensor) -> Result<Tensor> {
        x.map(|v| self.eval(v))
    }

    pub fn derivative(self, x: &Tensor) -> Result<Tensor> {
        x.map(|v| self.grad(v))
    }

    /// `grad_out ⊙ f'(x)` given the cached output `y = f(x)`.
    pub fn backward(self, y: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        y.zip_map(grad_out, "activation_backward", |y, g| g * self.grad_from_output(y))
    }

    /// Open interval of attainable outputs.
    pub fn range(self) -> (f64, f64) {
        match self {
            Activation::Tanh => (-1.0, 1.0),
            Activation::Sigmoid => (0.0, 1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        &[r, c] => Ok((r, c)),
        other => Err(TensorError::Dimension {
            op,
            shape: other.to_vec(),
            reason: "expected a 2-D matrix",
        }),
    }
}

/// Row-wise softmax of a `B×S` logit matrix.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let (_, cols) = matrix_dims("softmax", logits)?;
    let mut out = logits.data().to_vec();
    if cols > 0 {
        for row in out.chunks_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
    }
    Tensor::from_kernel("softmax", logits.shape().to_vec(), out)
}

/// Pulls a gradient at the softmax output back to the logits:
/// `dz_i = p_i (g_i − Σ_j p_j g_j)`.
pub fn softmax_backward(probs: &Tensor, grad: &Tensor) -> Result<Tensor> {
    let (_, cols) = matrix_dims("softmax_backward", probs)?;
    if probs.shape() != grad.shape() {
        return Err(TensorError::Shape {
            op: "softmax_backward",
            lhs: probs.shape().to_vec(),
            rhs: grad.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; probs.len()];
    if cols > 0 {
        for ((p, g), o) in probs
            .data()
            .chunks(cols)
            .zip(grad.data().chunks(cols))
            .zip(out.chunks_mut(cols))
        {
            let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
            for ((oi, &pi), &gi) in o.iter_mut().zip(p).zip(g) {
                *oi = pi * (gi - dot);
            }
        }
    }
    Tensor::from_kernel("softmax_backward", probs.shape().to_vec(), out)
}
