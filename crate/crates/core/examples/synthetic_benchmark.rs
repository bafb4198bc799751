//! Distance-only ablation against the full objective on the toy benchmark,
//! with a Welch comparison of the out-of-sample metrics.
//!
//! ```text
//! cargo run --release --example synthetic_benchmark -- [realizations] [out_dir]
//! ```
//!
//! Both runs use the configurations in `configs/`; the optional count
//! shortens the realization range for a quick look.

use std::path::PathBuf;

use rsbnet::experiment::{run_experiment, ExperimentConfig, RealizationRange};

const ABLATION: &str = include_str!("../configs/benchmark_ablation.toml");
const FULL: &str = include_str!("../configs/benchmark_full.toml");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let count: Option<usize> = args.next().map(|s| s.parse()).transpose()?;
    let out = args.next().map_or_else(|| std::env::temp_dir().join("rsbnet-benchmark"), PathBuf::from);

    let load = |text: &str| -> rsbnet::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::from_toml(text)?;
        if let Some(n) = count {
            cfg.realizations = Some(RealizationRange { start: 0, end: n });
            cfg.tuning_realizations = cfg.tuning_realizations.min(n);
        }
        Ok(cfg)
    };

    let ablation = run_experiment(&load(ABLATION)?, &out.join("ablation"))?;
    let mut full_cfg = load(FULL)?;
    full_cfg.baseline = Some(out.join("ablation"));
    let full = run_experiment(&full_cfg, &out.join("full"))?;

    println!("{:<10} {:>22} {:>22} {:>22}", "", "sqrt(PEHE)", "ATE error", "sqrt(PEHE_nn)");
    for (name, run) in [("ablation", &ablation), ("full", &full)] {
        let s = &run.aggregate.out_of_sample;
        let cell = |m: Option<rsbnet::evaluation::Summary>| {
            m.map_or("-".to_string(), |m| format!("{:.3} ± {:.3}", m.mean, m.stderr))
        };
        println!(
            "{name:<10} {:>22} {:>22} {:>22}",
            cell(s.sqrt_pehe),
            cell(s.ate_error),
            cell(Some(s.sqrt_pehe_nn))
        );
    }
    if let Some(c) = &full.comparison {
        for (metric, m) in [("sqrt(PEHE)", c.sqrt_pehe), ("ATE error", c.ate_error)] {
            if let Some(m) = m {
                println!(
                    "{metric}: t = {:+.3}, dof = {:.1}, p = {:.4}{}",
                    m.welch.t_stat,
                    m.welch.dof,
                    m.welch.p_value,
                    if m.welch.significant { " (significant)" } else { "" }
                );
            }
        }
    }
    println!("selected full point: {:?}", full.aggregate.selected);
    println!("reports in {}", out.display());
    Ok(())
}
