//! Save a fitted model, load it back and check that predictions match bit for bit.

use rsbnet::data::split_for_realization;
use rsbnet::model::NetworkConfig;
use rsbnet::synthetic::{generate_population, generate_realization, SyntheticConfig};
use rsbnet::trainer::{fit_realization, FittedModel, Predictor, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let syn = SyntheticConfig {
        n_samples: 200,
        n_realizations: 1,
        ..SyntheticConfig::default()
    };
    let r = generate_realization(&syn, &generate_population(&syn)?, 0);
    let split = split_for_realization(r.n_samples(), 1, 0)?;
    let net = NetworkConfig {
        encoder_layers: vec![16],
        rep_dim_a: 4,
        rep_dim_bc: 8,
        decoder_layers: vec![16],
        head_layers: vec![8],
        ..NetworkConfig::new(r.x.cols())
    };
    let train = TrainConfig {
        batch_size: 32,
        max_iterations: 200,
        eval_interval: 50,
        ..TrainConfig::default()
    };
    let (model, _) = fit_realization(&r, &split, 0, &net, &train)?;

    let path = std::env::temp_dir().join("rsbnet_checkpoint_example.json");
    model.save(&path)?;
    let restored = FittedModel::load(&path)?;
    let before = Predictor::from_fitted(&model)?.predict_ite(&r.x)?;
    let after = Predictor::from_fitted(&restored)?.predict_ite(&r.x)?;
    let identical = before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits());
    println!(
        "{} parameters, {} bytes on disk, predictions identical: {identical}",
        restored.net()?.param_count(),
        std::fs::metadata(&path)?.len()
    );
    assert!(identical);
    Ok(())
}
