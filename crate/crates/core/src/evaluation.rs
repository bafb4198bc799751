//! Effect-estimation metrics, cross-realization aggregation and Welch's t-test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

fn check_lengths(op: &str, lens: &[usize]) -> Result<()> {
    if lens.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::contract(format!("{op}: length mismatch {lens:?}")));
    }
    if lens[0] == 0 {
        return Err(Error::contract(format!("{op}: empty input")));
    }
    Ok(())
}

/// Root mean squared error between estimated effects and `mu1 - mu0`.
pub fn pehe(tau_hat: &[f64], mu1: &[f64], mu0: &[f64]) -> Result<f64> {
    check_lengths("pehe", &[tau_hat.len(), mu1.len(), mu0.len()])?;
    let ss: f64 = tau_hat
        .iter()
        .zip(mu1.iter().zip(mu0))
        .map(|(th, (a, b))| (th - (a - b)).powi(2))
        .sum();
    Ok((ss / tau_hat.len() as f64).sqrt())
}

/// `|mean(tau_hat) - mean(mu1 - mu0)|`.
pub fn ate_error(tau_hat: &[f64], mu1: &[f64], mu0: &[f64]) -> Result<f64> {
    check_lengths("ate_error", &[tau_hat.len(), mu1.len(), mu0.len()])?;
    let n = tau_hat.len() as f64;
    let est = tau_hat.iter().sum::<f64>() / n;
    let truth = mu1.iter().zip(mu0).map(|(a, b)| a - b).sum::<f64>() / n;
    Ok((est - truth).abs())
}

/// Rows whose nearest-neighbor effect is scored, and the rows neighbors are drawn from.
#[derive(Debug, Clone, Copy)]
pub struct FactualRows<'a> {
    pub x: &'a Matrix,
    pub t: &'a [u8],
    pub y_f: &'a [f64],
}

impl FactualRows<'_> {
    fn validate(&self, op: &str) -> Result<()> {
        check_lengths(op, &[self.x.rows(), self.t.len(), self.y_f.len()])
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum()
}

/// Index into `pool` of the nearest opposite-arm row for every query row.
/// Ties resolve to the lowest pool index.
pub fn opposite_arm_neighbors(query: &FactualRows<'_>, pool: &FactualRows<'_>) -> Result<Vec<usize>> {
    if query.x.cols() != pool.x.cols() {
        return Err(Error::Shape {
            op: "opposite_arm_neighbors",
            left: query.x.shape(),
            right: pool.x.shape(),
        });
    }
    let by_arm: [Vec<usize>; 2] = [0u8, 1].map(|arm| (0..pool.t.len()).filter(|&j| pool.t[j] == arm).collect());
    (0..query.t.len())
        .map(|i| {
            let other = &by_arm[usize::from(1 - query.t[i].min(1))];
            if other.is_empty() {
                return Err(Error::contract("nearest-neighbor PEHE needs both treatment arms in the pool"));
            }
            let xi = query.x.row(i);
            let mut best = (f64::INFINITY, other[0]);
            for &j in other {
                let d = sq_dist(xi, pool.x.row(j));
                if d < best.0 {
                    best = (d, j);
                }
            }
            Ok(best.1)
        })
        .collect()
}

/// Nearest-neighbor PEHE for `query` rows with neighbors drawn from `pool`.
///
/// The surrogate effect of row `i` is `(1 - 2 t_i) (y_j - y_i)` where `j` is
/// its nearest opposite-arm neighbor in covariate space.
pub fn pehe_nn_pooled(query: &FactualRows<'_>, tau_hat: &[f64], pool: &FactualRows<'_>) -> Result<f64> {
    query.validate("pehe_nn")?;
    pool.validate("pehe_nn")?;
    check_lengths("pehe_nn", &[query.t.len(), tau_hat.len()])?;
    if query.t.iter().chain(pool.t).any(|&v| v > 1) {
        return Err(Error::contract("treatments must be 0 or 1"));
    }
    let nn = opposite_arm_neighbors(query, pool)?;
    let ss: f64 = nn
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let sign = 1.0 - 2.0 * f64::from(query.t[i]);
            (sign * (pool.y_f[j] - query.y_f[i]) - tau_hat[i]).powi(2)
        })
        .sum();
    Ok((ss / nn.len() as f64).sqrt())
}

/// Nearest-neighbor PEHE over one set of rows, which serves as its own neighbor pool.
pub fn pehe_nn(x: &Matrix, t: &[u8], y_f: &[f64], y1_hat: &[f64], y0_hat: &[f64]) -> Result<f64> {
    check_lengths("pehe_nn", &[y1_hat.len(), y0_hat.len()])?;
    let tau: Vec<f64> = y1_hat.iter().zip(y0_hat).map(|(a, b)| a - b).collect();
    let rows = FactualRows { x, t, y_f };
    pehe_nn_pooled(&rows, &tau, &rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    WithinSample,
    OutOfSample,
}

/// Metrics for one realization and scope. Effect metrics are `None` when
/// the data carries no noiseless means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub realization: usize,
    pub scope: Scope,
    pub sqrt_pehe: Option<f64>,
    pub ate_error: Option<f64>,
    pub sqrt_pehe_nn: f64,
}

/// Mean and standard error of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
}

/// `(mean, sample std / sqrt(n))`, with the sample std using `n - 1`.
pub fn mean_stderr(values: &[f64]) -> Result<Summary> {
    let n = values.len();
    if n < 2 {
        return Err(Error::contract(format!("aggregation needs at least 2 values, got {n}")));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    Ok(Summary {
        mean,
        stderr: (var / nf).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub scope: Scope,
    pub n_realizations: usize,
    pub sqrt_pehe: Option<Summary>,
    pub ate_error: Option<Summary>,
    pub sqrt_pehe_nn: Summary,
}

/// Aggregates reports of a single scope.
pub fn aggregate(reports: &[EvalReport]) -> Result<AggregateReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::contract("aggregation needs at least 2 reports, got 0"))?;
    if reports.iter().any(|r| r.scope != first.scope) {
        return Err(Error::contract("cannot aggregate reports of different scopes"));
    }
    let collect = |f: fn(&EvalReport) -> Option<f64>| -> Result<Option<Summary>> {
        let values: Option<Vec<f64>> = reports.iter().map(f).collect();
        values.map(|v| mean_stderr(&v)).transpose()
    };
    Ok(AggregateReport {
        scope: first.scope,
        n_realizations: reports.len(),
        sqrt_pehe: collect(|r| r.sqrt_pehe)?,
        ate_error: collect(|r| r.ate_error)?,
        sqrt_pehe_nn: mean_stderr(&reports.iter().map(|r| r.sqrt_pehe_nn).collect::<Vec<_>>())?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t_stat: f64,
    pub dof: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub significant: bool,
}

/// Two-sided Welch's unequal-variance t-test of `mean(a) = mean(b)`.
pub fn welch_t_test(a: &[f64], b: &[f64], alpha: f64) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::contract("Welch's t-test needs at least 2 values per sample"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::contract(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let moments = |s: &[f64]| {
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var / n, n)
    };
    let (ma, va, na) = moments(a);
    let (mb, vb, nb) = moments(b);
    let se2 = va + vb;
    if se2 == 0.0 {
        if ma == mb {
            return Ok(WelchResult {
                t_stat: 0.0,
                dof: f64::INFINITY,
                p_value: 1.0,
                alpha,
                significant: false,
            });
        }
        return Err(Error::contract("Welch's t-test is undefined for two constant samples with different means"));
    }
    let t_stat = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::contract(e.to_string()))?;
    let p_value = (2.0 * dist.cdf(-t_stat.abs())).min(1.0);
    Ok(WelchResult {
        t_stat,
        dof,
        p_value,
        alpha,
        significant: p_value < alpha,
    })
}
