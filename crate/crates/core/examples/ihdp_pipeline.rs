//! Convert headerless IHDP-layout CSV files (`t, y_factual, y_cfactual, mu0,
//! mu1, x_1..x_25`) to canonical realization files and run a standardized-outcome
//! experiment on them.
//!
//! ```text
//! cargo run --release --example ihdp_pipeline -- path/to/ihdp_npci_1.csv path/to/ihdp_npci_2.csv ...
//! ```
//!
//! Without arguments a stand-in file with the same layout is built from the
//! toy generator so the pipeline can be exercised offline.

use std::path::PathBuf;

use rsbnet::data::{convert, load, DataFormat, DatasetBundle, ExternalLayout};
use rsbnet::experiment::{run_experiment, DatasetSpec, ExperimentConfig, NetworkSpec};
use rsbnet::synthetic::{generate, SyntheticConfig};
use rsbnet::trainer::TrainConfig;

fn stand_in_files(dir: &std::path::Path) -> Result<Vec<PathBuf>, Box<dyn std::error::Error>> {
    let bundle = generate(&SyntheticConfig {
        n_samples: 300,
        n_realizations: 3,
        seed: 5,
        ..SyntheticConfig::default()
    })?;
    let mut files = Vec::new();
    for (i, r) in bundle.realizations.iter().enumerate() {
        let mut text = String::new();
        for k in 0..r.n_samples() {
            let mut fields = vec![
                r.t[k].to_string(),
                r.y_f[k].to_string(),
                r.y_cf.as_ref().unwrap()[k].to_string(),
                r.mu0.as_ref().unwrap()[k].to_string(),
                r.mu1.as_ref().unwrap()[k].to_string(),
            ];
            fields.extend(r.x.row(k).iter().map(f64::to_string));
            text.push_str(&fields.join(","));
            text.push('\n');
        }
        let path = dir.join(format!("ihdp_npci_{}.csv", i + 1));
        std::fs::write(&path, text)?;
        files.push(path);
    }
    Ok(files)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let work = std::env::temp_dir().join("rsbnet_ihdp_example");
    std::fs::create_dir_all(&work)?;
    let mut inputs: Vec<PathBuf> = std::env::args().skip(1).map(PathBuf::from).collect();
    if inputs.is_empty() {
        inputs = stand_in_files(&work)?;
        println!("no input files given, using {} stand-in files", inputs.len());
    }

    let realizations = inputs
        .iter()
        .map(|p| convert(p, ExternalLayout::IhdpCsv))
        .collect::<Result<Vec<_>, _>>()?;
    let canonical = work.join("canonical");
    DatasetBundle::new("ihdp".into(), realizations)?.write_dir(&canonical)?;
    let summary = load(&canonical, DataFormat::Ihdp)?.summary();
    println!(
        "{} realizations, {} samples ({} treated, {} control), {} covariates",
        summary.n_realizations, summary.n_samples, summary.n_treated, summary.n_control, summary.feature_dim
    );

    let cfg = ExperimentConfig {
        tuning_realizations: 2,
        dataset: DatasetSpec::Files {
            path: canonical,
            format: DataFormat::Ihdp,
        },
        network: NetworkSpec {
            encoder_layers: vec![64, 64],
            rep_dim_a: 8,
            rep_dim_bc: 24,
            decoder_layers: vec![64],
            head_layers: vec![32, 32],
            ..NetworkSpec::default()
        },
        train: TrainConfig {
            max_iterations: 600,
            standardize_outcome: true,
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let out = run_experiment(&cfg, &work.join("run"))?;
    let agg = out.aggregate.out_of_sample;
    println!(
        "out-of-sample sqrt PEHE {:.3} +- {:.3}, ATE error {:.3} +- {:.3}",
        agg.sqrt_pehe.map_or(f64::NAN, |s| s.mean),
        agg.sqrt_pehe.map_or(f64::NAN, |s| s.stderr),
        agg.ate_error.map_or(f64::NAN, |s| s.mean),
        agg.ate_error.map_or(f64::NAN, |s| s.stderr),
    );
    Ok(())
}
