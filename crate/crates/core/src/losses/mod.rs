//! Training objective terms: weighted factual prediction error, treatment-arm
//! distribution distance, reconstruction error, Pearson decorrelation and the
//! weight penalty. Every term returns its value together with its gradient.

mod ipm;
mod pcc;

use serde::{Deserialize, Serialize};

pub use ipm::{ipm_loss, sinkhorn_w2, IpmKind};
pub(crate) use ipm::arms;
pub use pcc::{pcc_loss, PccLoss, PCC_EPSILON};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// A scalar loss and its gradient with respect to the loss input.
#[derive(Debug, Clone)]
pub struct Loss {
    pub value: f64,
    pub grad: Matrix,
}

/// Coefficients of the auxiliary terms; the prediction loss has weight one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Distribution distance between treatment arms.
    pub alpha: f64,
    /// Reconstruction.
    pub beta: f64,
    /// Pearson decorrelation.
    pub gamma: f64,
    /// Squared weight penalty.
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            lambda: 1e-4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-sample weights compensating for unequal treatment arm sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeights {
    /// Treated fraction of the population the weights were fitted on.
    pub u: f64,
    pub w: Vec<f64>,
}

impl SampleWeights {
    /// Computes `u = mean(t)` and the matching weights for `t`.
    pub fn fit(t: &[u8]) -> Result<Self> {
        let (treated, control) = arms(t)?;
        if treated.is_empty() || control.is_empty() {
            return Err(Error::Setup(format!(
                "sample weights need both arms, got {} treated and {} control",
                treated.len(),
                control.len()
            )));
        }
        let u = treated.len() as f64 / t.len() as f64;
        Ok(Self {
            u,
            w: Self::weights_for(t, u),
        })
    }

    /// `w_i = t_i / (2u) + (1 - t_i) / (2(1 - u))`.
    pub fn weights_for(t: &[u8], u: f64) -> Vec<f64> {
        t.iter()
            .map(|&ti| {
                let ti = f64::from(ti);
                ti / (2.0 * u) + (1.0 - ti) / (2.0 * (1.0 - u))
            })
            .collect()
    }
}

/// `(1/N) Σ w_i (ŷ_i - y_i)²` over a column of predictions.
pub fn prediction_loss(y_hat: &Matrix, y: &[f64], w: &[f64]) -> Result<Loss> {
    if y_hat.cols() != 1 || y_hat.rows() != y.len() || y.len() != w.len() {
        return Err(Error::contract(format!(
            "prediction loss: predictions {:?}, {} targets, {} weights",
            y_hat.shape(),
            y.len(),
            w.len()
        )));
    }
    let n = y.len() as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(y.len(), 1);
    for (i, ((&p, &target), &wi)) in y_hat.as_slice().iter().zip(y).zip(w).enumerate() {
        let r = p - target;
        value += wi * r * r;
        grad.set(i, 0, 2.0 * wi * r / n);
    }
    Ok(Loss { value: value / n, grad })
}

/// Mean over rows of the squared Euclidean reconstruction error.
pub fn recon_loss(x_hat: &Matrix, x: &Matrix) -> Result<Loss> {
    if x_hat.shape() != x.shape() {
        return Err(Error::Shape {
            op: "recon_loss",
            left: x_hat.shape(),
            right: x.shape(),
        });
    }
    let n = x.rows() as f64;
    let diff = x_hat.sub(x)?;
    Ok(Loss {
        value: diff.sum_squares() / n,
        grad: diff.scale(2.0 / n),
    })
}

/// Sum of squared entries of the weight matrices (biases are not passed in).
pub fn weight_regularizer<'a>(weights: impl IntoIterator<Item = &'a Matrix>) -> f64 {
    weights.into_iter().map(Matrix::sum_squares).sum()
}

/// Values of every objective term on one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub pred: f64,
    pub ipm: f64,
    pub recon: f64,
    pub pcc: f64,
    pub reg: f64,
}

impl LossComponents {
    pub fn is_finite(&self) -> bool {
        [self.pred, self.ipm, self.recon, self.pcc, self.reg]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// `pred + α·ipm + β·recon + γ·pcc + λ·reg`.
pub fn total_loss(c: &LossComponents, lw: &LossWeights) -> f64 {
    c.pred + lw.alpha * c.ipm + lw.beta * c.recon + lw.gamma * c.pcc + lw.lambda * c.reg
}
