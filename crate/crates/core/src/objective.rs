//! The full training objective evaluated on a batch, with backpropagation
//! through heads, decoder and encoder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{
    arms, ipm_loss, pcc_loss, prediction_loss, recon_loss, total_loss, weight_regularizer, IpmKind, LossComponents,
    LossWeights,
};
use crate::model::RsbNet;
use crate::tensor::Matrix;

/// Loss coefficients plus the choice of distribution distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ObjectiveConfig {
    pub weights: LossWeights,
    pub ipm: IpmKind,
}

/// Factual samples with their precomputed arm weights.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub x: &'a Matrix,
    pub t: &'a [u8],
    pub y: &'a [f64],
    pub w: &'a [f64],
}

impl Batch<'_> {
    fn validate(&self) -> Result<()> {
        let n = self.x.rows();
        if self.t.len() != n || self.y.len() != n || self.w.len() != n {
            return Err(Error::contract(format!(
                "batch has {n} rows but {} treatments, {} outcomes, {} weights",
                self.t.len(),
                self.y.len(),
                self.w.len()
            )));
        }
        Ok(())
    }
}

/// Objective terms on `batch` without touching gradients.
pub fn evaluate(net: &RsbNet, batch: &Batch<'_>, cfg: &ObjectiveConfig) -> Result<LossComponents> {
    batch.validate()?;
    let phi = net.encoder.infer(batch.x)?;
    let (phi_a, phi_bc) = net.split(&phi)?;
    let y_hat = net.predict_factual(&phi_bc, batch.t)?;
    let x_hat = net.decoder.infer(&phi)?;
    Ok(LossComponents {
        pred: prediction_loss(&y_hat, batch.y, batch.w)?.value,
        ipm: ipm_loss(&phi_bc, batch.t, cfg.ipm)?.value,
        recon: recon_loss(&x_hat, batch.x)?.value,
        pcc: pcc_loss(&phi_a, &phi_bc)?.value,
        reg: weight_regularizer(net.weight_matrices()),
    })
}

/// Evaluates every term and adds the gradient of the weighted total to the
/// network's gradient accumulators. Callers zero gradients beforehand.
///
/// Terms with a zero coefficient still report their value but skip their
/// backward pass.
pub fn accumulate_gradients(net: &mut RsbNet, batch: &Batch<'_>, cfg: &ObjectiveConfig) -> Result<LossComponents> {
    batch.validate()?;
    let lw = cfg.weights;
    let m = net.config.rep_dim_a;

    let enc_caches = net.encoder.forward(batch.x)?;
    let phi = enc_caches.last().expect("encoder has layers").output.clone();
    let (phi_a, phi_bc) = net.split(&phi)?;

    let mut d_phi_a = Matrix::zeros(phi.rows(), m);
    let mut d_phi_bc = Matrix::zeros(phi.rows(), phi.cols() - m);

    // Factual prediction, each row through its own head.
    let (treated, control) = arms(batch.t)?;
    let mut y_hat = Matrix::zeros(batch.t.len(), 1);
    let mut head_caches = Vec::with_capacity(2);
    for (idx, arm) in [(control, 0u8), (treated, 1u8)] {
        if idx.is_empty() {
            continue;
        }
        let input = phi_bc.select_rows(&idx);
        let caches = net.head(arm)?.forward(&input)?;
        y_hat.scatter_rows(&idx, &caches.last().expect("head has layers").output)?;
        head_caches.push((idx, arm, caches));
    }
    let pred = prediction_loss(&y_hat, batch.y, batch.w)?;
    for (idx, arm, caches) in &head_caches {
        let upstream = pred.grad.select_rows(idx);
        let d_input = net.head_mut(*arm)?.backward(caches, upstream)?;
        for (k, &i) in idx.iter().enumerate() {
            for (d, &g) in d_phi_bc.row_mut(i).iter_mut().zip(d_input.row(k)) {
                *d += g;
            }
        }
    }

    let ipm = ipm_loss(&phi_bc, batch.t, cfg.ipm)?;
    if lw.alpha != 0.0 {
        d_phi_bc.add_scaled_assign(&ipm.grad, lw.alpha)?;
    }

    let pcc = pcc_loss(&phi_a, &phi_bc)?;
    if lw.gamma != 0.0 {
        d_phi_a.add_scaled_assign(&pcc.grad_a, lw.gamma)?;
        d_phi_bc.add_scaled_assign(&pcc.grad_bc, lw.gamma)?;
    }

    let mut d_phi = d_phi_a.hcat(&d_phi_bc)?;
    let recon_value = if lw.beta != 0.0 {
        let dec_caches = net.decoder.forward(&phi)?;
        let recon = recon_loss(&dec_caches.last().expect("decoder has layers").output, batch.x)?;
        let d_dec = net.decoder.backward(&dec_caches, recon.grad.scale(lw.beta))?;
        d_phi.add_scaled_assign(&d_dec, 1.0)?;
        recon.value
    } else {
        recon_loss(&net.decoder.infer(&phi)?, batch.x)?.value
    };

    net.encoder.backward(&enc_caches, d_phi)?;

    let reg = weight_regularizer(net.weight_matrices());
    if lw.lambda != 0.0 {
        for mlp in [&mut net.encoder, &mut net.decoder, &mut net.head0, &mut net.head1] {
            for layer in &mut mlp.layers {
                let w = layer.weight.value.clone();
                layer.weight.grad.add_scaled_assign(&w, 2.0 * lw.lambda)?;
            }
        }
    }

    Ok(LossComponents {
        pred: pred.value,
        ipm: ipm.value,
        recon: recon_value,
        pcc: pcc.value,
        reg,
    })
}

/// Weighted total of [`evaluate`].
pub fn objective_value(net: &RsbNet, batch: &Batch<'_>, cfg: &ObjectiveConfig) -> Result<f64> {
    Ok(total_loss(&evaluate(net, batch, cfg)?, &cfg.weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NetworkConfig;
    use crate::rng::SeededRng;
    use crate::tensor::{grad_check, Activation, GradCheckConfig, InitScheme};

    fn setup(seed: u64) -> (RsbNet, Matrix, Vec<u8>, Vec<f64>, Vec<f64>) {
        let cfg = NetworkConfig {
            input_dim: 6,
            encoder_layers: vec![7],
            rep_dim_a: 2,
            rep_dim_bc: 3,
            decoder_layers: vec![5],
            head_layers: vec![4],
            activation: Activation::Elu,
            init: InitScheme::ScaledNormal { gain: 1.0 },
        };
        let net = RsbNet::new(cfg, seed).unwrap();
        let mut rng = SeededRng::new(seed + 100);
        let x = Matrix::from_fn(8, 6, |_, _| rng.normal(0.0, 1.0));
        let t: Vec<u8> = (0..8).map(|i| (i % 3 == 1) as u8).collect();
        let y: Vec<f64> = (0..8).map(|_| rng.normal(0.0, 1.0)).collect();
        let w = crate::losses::SampleWeights::fit(&t).unwrap().w;
        (net, x, t, y, w)
    }

    #[test]
    fn total_gradient_passes_grad_check() {
        let (mut net, x, t, y, w) = setup(1);
        let cfg = ObjectiveConfig {
            weights: LossWeights {
                alpha: 0.7,
                beta: 0.5,
                gamma: 2.0,
                lambda: 0.01,
            },
            ipm: IpmKind::default(),
        };
        let point = net.flat_values();
        let report = grad_check(
            |p| {
                net.set_flat_values(p)?;
                net.zero_grads();
                let batch = Batch { x: &x, t: &t, y: &y, w: &w };
                let c = accumulate_gradients(&mut net, &batch, &cfg)?;
                Ok((total_loss(&c, &cfg.weights), net.flat_grads()))
            },
            &point,
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed(), "worst {:?}", report.worst());
    }

    #[test]
    fn corrupted_backward_is_detected() {
        let (mut net, x, t, y, w) = setup(2);
        let cfg = ObjectiveConfig::default();
        let point = net.flat_values();
        let report = grad_check(
            |p| {
                net.set_flat_values(p)?;
                net.zero_grads();
                let batch = Batch { x: &x, t: &t, y: &y, w: &w };
                let c = accumulate_gradients(&mut net, &batch, &cfg)?;
                // double the gradient of the first encoder layer
                let first = &mut net.encoder.layers[0].weight.grad;
                *first = first.scale(2.0);
                Ok((total_loss(&c, &cfg.weights), net.flat_grads()))
            },
            &point,
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn bias_block_gets_no_gradient_from_prediction_alone() {
        let (mut net, x, t, y, w) = setup(3);
        let cfg = ObjectiveConfig {
            weights: LossWeights {
                alpha: 0.0,
                beta: 0.0,
                gamma: 0.0,
                lambda: 0.0,
            },
            ipm: IpmKind::LinearMmd,
        };
        net.zero_grads();
        accumulate_gradients(&mut net, &Batch { x: &x, t: &t, y: &y, w: &w }, &cfg).unwrap();
        let last = net.encoder.layers.last().unwrap();
        for r in 0..last.weight.grad.rows() {
            for c in 0..2 {
                assert_eq!(last.weight.grad.get(r, c), 0.0);
            }
            assert!((2..5).any(|c| last.weight.grad.get(r, c) != 0.0));
        }
        assert_eq!(last.bias.grad.get(0, 0), 0.0);
        assert!(net.decoder.layers.iter().all(|l| l.weight.grad.sum_squares() == 0.0));
    }

    #[test]
    fn evaluate_matches_accumulate() {
        let (mut net, x, t, y, w) = setup(4);
        let cfg = ObjectiveConfig::default();
        let batch = Batch { x: &x, t: &t, y: &y, w: &w };
        let a = evaluate(&net, &batch, &cfg).unwrap();
        let b = accumulate_gradients(&mut net, &batch, &cfg).unwrap();
        assert!((a.pred - b.pred).abs() < 1e-12);
        assert!((a.ipm - b.ipm).abs() < 1e-12);
        assert!((a.recon - b.recon).abs() < 1e-12);
        assert!((a.pcc - b.pcc).abs() < 1e-12);
    }
}
