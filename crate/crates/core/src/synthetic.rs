//! Toy dataset with explicit latent groups.
//!
//! Covariates are the concatenation of three groups: `A` (drives treatment
//! only), `B` (drives treatment and outcome) and `C` (drives outcome only).
//! Each sample draws a group mean per group and then its features around that
//! mean with unit standard deviation:
//!
//! ```text
//! mean_A ~ N(0, 5), mean_B ~ N(4, 2), mean_C ~ N(6, 2)     (std parametrization)
//! p(t = 1) = 1 - sigmoid(0.7 * mean(A) + 0.3 * mean(B))
//! mu0 = w_h · x_BC,  w_h ~ U(0, 0.1)^(d_b + d_c) per realization
//! mu1 = mu0 + 10,    y = mu_t + N(0, 1)
//! ```
//!
//! Covariates and treatments are shared by every realization; only the
//! outcome weights and noise change from one realization to the next.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetBundle, Realization};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SeededRng};
use crate::tensor::Matrix;

/// Treatment effect added to the control mean.
pub const TREATMENT_EFFECT: f64 = 10.0;
const MAX_ASSIGNMENT_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub d_a: usize,
    pub d_b: usize,
    pub d_c: usize,
    pub n_samples: usize,
    pub n_realizations: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            d_a: 5,
            d_b: 15,
            d_c: 5,
            n_samples: 1000,
            n_realizations: 1000,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn input_dim(&self) -> usize {
        self.d_a + self.d_b + self.d_c
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_a == 0 || self.d_b == 0 || self.d_c == 0 || self.n_samples == 0 || self.n_realizations == 0 {
            return Err(Error::config(format!("synthetic dimensions and counts must be >= 1: {self:?}")));
        }
        Ok(())
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Probability of treatment given the group means of `A` and `B`.
pub fn treatment_probability(mean_a: f64, mean_b: f64) -> f64 {
    1.0 - sigmoid(0.7 * mean_a + 0.3 * mean_b)
}

/// Covariates, treatment probabilities and assignments shared by all realizations.
#[derive(Debug, Clone)]
pub struct Population {
    pub x: Arc<Matrix>,
    pub propensity: Vec<f64>,
    pub t: Arc<Vec<u8>>,
    /// Number of assignment redraws needed to get both arms.
    pub assignment_retries: usize,
}

pub fn generate_population(cfg: &SyntheticConfig) -> Result<Population> {
    cfg.validate()?;
    let mut rng = SeededRng::new(derive_seed(cfg.seed, u64::MAX));
    let d = cfg.input_dim();
    let mut x = Matrix::zeros(cfg.n_samples, d);
    let mut propensity = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        let mu_a = rng.normal(0.0, 5.0);
        let mu_b = rng.normal(4.0, 2.0);
        let mu_c = rng.normal(6.0, 2.0);
        let row = x.row_mut(i);
        for (k, v) in row.iter_mut().enumerate() {
            let mu = if k < cfg.d_a {
                mu_a
            } else if k < cfg.d_a + cfg.d_b {
                mu_b
            } else {
                mu_c
            };
            *v = rng.normal(mu, 1.0);
        }
        let mean_a = row[..cfg.d_a].iter().sum::<f64>() / cfg.d_a as f64;
        let mean_b = row[cfg.d_a..cfg.d_a + cfg.d_b].iter().sum::<f64>() / cfg.d_b as f64;
        propensity.push(treatment_probability(mean_a, mean_b));
    }

    let mut retries = 0;
    let t = loop {
        let t: Vec<u8> = propensity.iter().map(|&p| rng.bernoulli(p) as u8).collect();
        let treated = t.iter().filter(|&&v| v == 1).count();
        if treated > 0 && treated < t.len() {
            break t;
        }
        retries += 1;
        if retries > MAX_ASSIGNMENT_RETRIES {
            return Err(Error::Setup(format!(
                "treatment assignment left an arm empty after {MAX_ASSIGNMENT_RETRIES} redraws"
            )));
        }
    };
    Ok(Population {
        x: Arc::new(x),
        propensity,
        t: Arc::new(t),
        assignment_retries: retries,
    })
}

/// Outcome weights and noisy outcomes for realization `index`.
pub fn generate_realization(cfg: &SyntheticConfig, population: &Population, index: usize) -> Realization {
    let mut rng = SeededRng::new(derive_seed(cfg.seed, index as u64));
    let n_bc = cfg.d_b + cfg.d_c;
    let weights: Vec<f64> = (0..n_bc).map(|_| rng.uniform_range(0.0, 0.1)).collect();
    let n = cfg.n_samples;
    let mut mu0 = Vec::with_capacity(n);
    let mut mu1 = Vec::with_capacity(n);
    let mut y_f = Vec::with_capacity(n);
    let mut y_cf = Vec::with_capacity(n);
    for i in 0..n {
        let x_bc = &population.x.row(i)[cfg.d_a..];
        let m0: f64 = weights.iter().zip(x_bc).map(|(w, v)| w * v).sum();
        let m1 = m0 + TREATMENT_EFFECT;
        let y0 = m0 + rng.normal(0.0, 1.0);
        let y1 = m1 + rng.normal(0.0, 1.0);
        if population.t[i] == 1 {
            y_f.push(y1);
            y_cf.push(y0);
        } else {
            y_f.push(y0);
            y_cf.push(y1);
        }
        mu0.push(m0);
        mu1.push(m1);
    }
    Realization {
        x: Arc::clone(&population.x),
        t: Arc::clone(&population.t),
        y_f,
        y_cf: Some(y_cf),
        mu0: Some(mu0),
        mu1: Some(mu1),
    }
}

/// Generates the full bundle of `cfg.n_realizations` realizations.
pub fn generate(cfg: &SyntheticConfig) -> Result<DatasetBundle> {
    let population = generate_population(cfg)?;
    let realizations = (0..cfg.n_realizations)
        .map(|h| generate_realization(cfg, &population, h))
        .collect();
    DatasetBundle::new("synthetic".to_string(), realizations)
}

/// Selection-bias diagnostics for one realization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasAudit {
    /// Sample correlation between the row mean of the `A` block and `t`.
    pub corr_a_t: f64,
    /// Same for the trailing `C` block (only when `d_c` is given).
    pub corr_c_t: Option<f64>,
    /// Approximate standard error of a correlation under independence, `1/sqrt(N)`.
    pub corr_stderr: f64,
    pub n_treated: usize,
    pub n_control: usize,
}

fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

fn block_means(x: &Matrix, cols: std::ops::Range<usize>) -> Vec<f64> {
    let width = cols.len() as f64;
    (0..x.rows()).map(|r| x.row(r)[cols.clone()].iter().sum::<f64>() / width).collect()
}

/// Correlation of the `A` block mean (first `d_a` columns) with treatment, and
/// optionally of the last `d_c` columns.
pub fn bias_audit(r: &Realization, d_a: usize, d_c: Option<usize>) -> Result<BiasAudit> {
    let d = r.x.cols();
    if d_a == 0 || d_a > d || d_c.is_some_and(|c| c == 0 || c + d_a > d) {
        return Err(Error::contract(format!("block sizes d_a={d_a}, d_c={d_c:?} do not fit {d} columns")));
    }
    let t: Vec<f64> = r.t.iter().map(|&v| f64::from(v)).collect();
    let corr_a_t = correlation(&block_means(&r.x, 0..d_a), &t);
    let corr_c_t = d_c.map(|c| correlation(&block_means(&r.x, d - c..d), &t));
    let n_treated = r.t.iter().filter(|&&v| v == 1).count();
    Ok(BiasAudit {
        corr_a_t,
        corr_c_t,
        corr_stderr: 1.0 / (r.t.len() as f64).sqrt(),
        n_treated,
        n_control: r.t.len() - n_treated,
    })
}
