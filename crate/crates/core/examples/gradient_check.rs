//! Compare analytic gradients of every loss term against central finite
//! differences on a small random batch.

use rsbnet::losses::{IpmKind, LossWeights, SampleWeights};
use rsbnet::model::{NetworkConfig, RsbNet};
use rsbnet::objective::{accumulate_gradients, Batch, ObjectiveConfig};
use rsbnet::rng::SeededRng;
use rsbnet::tensor::{grad_check, Activation, GradCheckConfig, InitScheme, Matrix};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net_cfg = NetworkConfig {
        input_dim: 6,
        encoder_layers: vec![7],
        rep_dim_a: 2,
        rep_dim_bc: 3,
        decoder_layers: vec![5],
        head_layers: vec![4],
        activation: Activation::Elu,
        init: InitScheme::ScaledNormal { gain: 1.0 },
    };
    let mut rng = SeededRng::new(7);
    let x = Matrix::from_fn(8, 6, |_, _| rng.normal(0.0, 1.0));
    let t: Vec<u8> = vec![0, 1, 0, 0, 1, 1, 0, 1];
    let y: Vec<f64> = (0..8).map(|_| rng.normal(0.0, 1.0)).collect();
    let w = SampleWeights::fit(&t)?.w;

    let only = |alpha, beta, gamma, lambda| LossWeights { alpha, beta, gamma, lambda };
    let cases = [
        ("prediction", only(0.0, 0.0, 0.0, 0.0), IpmKind::LinearMmd),
        ("ipm (sinkhorn)", only(1.0, 0.0, 0.0, 0.0), IpmKind::default()),
        ("ipm (linear mmd)", only(1.0, 0.0, 0.0, 0.0), IpmKind::LinearMmd),
        ("reconstruction", only(0.0, 1.0, 0.0, 0.0), IpmKind::LinearMmd),
        ("correlation", only(0.0, 0.0, 1.0, 0.0), IpmKind::LinearMmd),
        ("weight penalty", only(0.0, 0.0, 0.0, 1.0), IpmKind::LinearMmd),
        ("total", only(0.5, 0.5, 2.0, 0.01), IpmKind::default()),
    ];
    for (name, weights, ipm) in cases {
        let cfg = ObjectiveConfig { weights, ipm };
        let mut net = RsbNet::new(net_cfg.clone(), 3)?;
        let point = net.flat_values();
        let report = grad_check(
            |p| {
                net.set_flat_values(p)?;
                net.zero_grads();
                let c = accumulate_gradients(&mut net, &Batch { x: &x, t: &t, y: &y, w: &w }, &cfg)?;
                Ok((rsbnet::losses::total_loss(&c, &cfg.weights), net.flat_grads()))
            },
            &point,
            &GradCheckConfig::default(),
        )?;
        println!(
            "{name:<18} {} coords  max rel err {:.2e}  {}",
            report.entries.len(),
            report.max_rel_error(),
            if report.passed() { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}
