//! Train one realization of the toy dataset and report within-sample and
//! out-of-sample metrics.
//!
//! ```text
//! cargo run --release --example train_synthetic -- [iterations]
//! ```

use rsbnet::data::split_for_realization;
use rsbnet::experiment::evaluate_realization;
use rsbnet::model::NetworkConfig;
use rsbnet::synthetic::{generate_population, generate_realization, SyntheticConfig};
use rsbnet::trainer::{fit_realization, Predictor, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let iterations = std::env::args().nth(1).map_or(Ok(1000), |s| s.parse())?;
    let syn = SyntheticConfig::default();
    let population = generate_population(&syn)?;
    let r = generate_realization(&syn, &population, 0);
    let split = split_for_realization(r.n_samples(), 0, 0)?;

    let net = NetworkConfig {
        encoder_layers: vec![64, 64],
        rep_dim_a: 8,
        rep_dim_bc: 24,
        decoder_layers: vec![64],
        head_layers: vec![32, 32],
        ..NetworkConfig::new(r.x.cols())
    };
    let train = TrainConfig {
        max_iterations: iterations,
        ..TrainConfig::default()
    };
    let (model, outcome) = fit_realization(&r, &split, 0, &net, &train)?;
    for rec in &outcome.history {
        println!(
            "iter {:>5}  batch {:>8.4}  pred {:>7.4}  ipm {:>7.4}  recon {:>7.4}  pcc {:.4}  valid {:>8.4}",
            rec.iteration,
            rec.batch_objective,
            rec.batch.pred,
            rec.batch.ipm,
            rec.batch.recon,
            rec.batch.pcc,
            rec.valid_objective.unwrap_or(f64::NAN)
        );
    }
    println!("best iteration {} of {}", outcome.best_iteration, outcome.iterations_done);

    let predictor = Predictor::from_fitted(&model)?;
    let eval = evaluate_realization(&predictor, &r, &split, 0)?;
    for rep in [eval.within_sample, eval.out_of_sample] {
        println!(
            "{:?}: sqrt PEHE {:.3}  ATE error {:.3}  sqrt PEHE_nn {:.3}",
            rep.scope,
            rep.sqrt_pehe.unwrap_or(f64::NAN),
            rep.ate_error.unwrap_or(f64::NAN),
            rep.sqrt_pehe_nn
        );
    }
    let tau = predictor.predict_ite(&r.x)?;
    println!("mean estimated effect {:.3} (true 10)", tau.iter().sum::<f64>() / tau.len() as f64);
    Ok(())
}
