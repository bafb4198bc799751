//! Distances between the treated and control representation distributions.

use serde::{Deserialize, Serialize};

use super::Loss;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Which integral probability metric balances the two treatment arms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IpmKind {
    /// Entropic 2-Wasserstein distance. The squared-Euclidean cost matrix is
    /// regularized with `epsilon = mean(cost) / regularization` and solved with
    /// a fixed number of log-domain Sinkhorn iterations.
    Wasserstein { regularization: f64, iterations: usize },
    /// Euclidean distance between the two group means.
    LinearMmd,
}

impl Default for IpmKind {
    fn default() -> Self {
        IpmKind::Wasserstein {
            regularization: 10.0,
            iterations: 10,
        }
    }
}

/// Splits row indices by treatment.
pub(crate) fn arms(t: &[u8]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut treated = Vec::new();
    let mut control = Vec::new();
    for (i, &ti) in t.iter().enumerate() {
        match ti {
            0 => control.push(i),
            1 => treated.push(i),
            other => return Err(Error::contract(format!("treatment {other} at row {i} is not 0 or 1"))),
        }
    }
    Ok((treated, control))
}

/// IPM between `{phi_i : t_i = 0}` and `{phi_i : t_i = 1}` with its gradient w.r.t. `phi`.
pub fn ipm_loss(phi: &Matrix, t: &[u8], kind: IpmKind) -> Result<Loss> {
    if phi.rows() != t.len() {
        return Err(Error::contract(format!(
            "ipm: {} representation rows but {} treatments",
            phi.rows(),
            t.len()
        )));
    }
    let (treated, control) = arms(t)?;
    if treated.is_empty() || control.is_empty() {
        return Err(Error::contract(format!(
            "ipm undefined: {} treated and {} control rows",
            treated.len(),
            control.len()
        )));
    }
    let xt = phi.select_rows(&treated);
    let xc = phi.select_rows(&control);
    let (value, grad_t, grad_c) = match kind {
        IpmKind::LinearMmd => linear_mmd(&xt, &xc),
        IpmKind::Wasserstein {
            regularization,
            iterations,
        } => {
            if !(regularization > 0.0) || iterations == 0 {
                return Err(Error::config("sinkhorn needs positive regularization and iterations"));
            }
            // Average both orientations so the distance is exactly symmetric.
            let (v1, gt1, gc1) = sinkhorn_w2(&xt, &xc, regularization, iterations)?;
            let (v2, gc2, gt2) = sinkhorn_w2(&xc, &xt, regularization, iterations)?;
            (
                0.5 * (v1 + v2),
                gt1.add(&gt2)?.scale(0.5),
                gc1.add(&gc2)?.scale(0.5),
            )
        }
    };
    let mut grad = Matrix::zeros(phi.rows(), phi.cols());
    grad.scatter_rows(&treated, &grad_t)?;
    grad.scatter_rows(&control, &grad_c)?;
    Ok(Loss { value, grad })
}

fn linear_mmd(xt: &Matrix, xc: &Matrix) -> (f64, Matrix, Matrix) {
    let mt = xt.column_means();
    let mc = xc.column_means();
    let diff: Vec<f64> = mt.iter().zip(&mc).map(|(a, b)| a - b).collect();
    let norm = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
    if norm == 0.0 {
        return (0.0, Matrix::zeros(xt.rows(), xt.cols()), Matrix::zeros(xc.rows(), xc.cols()));
    }
    let nt = xt.rows() as f64;
    let nc = xc.rows() as f64;
    let gt = Matrix::from_fn(xt.rows(), xt.cols(), |_, c| diff[c] / (norm * nt));
    let gc = Matrix::from_fn(xc.rows(), xc.cols(), |_, c| -diff[c] / (norm * nc));
    (norm, gt, gc)
}

fn squared_distances(x: &Matrix, y: &Matrix) -> Matrix {
    Matrix::from_fn(x.rows(), y.rows(), |i, j| {
        x.row(i)
            .iter()
            .zip(y.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    })
}

/// Log-sum-exp of each row of `z` and the row-wise softmax, written into `p`.
fn softmax_rows(z: &[f64], rows: usize, cols: usize, p: &mut [f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| {
            let zr = &z[r * cols..(r + 1) * cols];
            let pr = &mut p[r * cols..(r + 1) * cols];
            let max = zr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (pv, &zv) in pr.iter_mut().zip(zr) {
                *pv = (zv - max).exp();
                sum += *pv;
            }
            pr.iter_mut().for_each(|v| *v /= sum);
            max + sum.ln()
        })
        .collect()
}

/// Entropic W2 between uniform empirical measures on the rows of `x` and `y`,
/// differentiated through every Sinkhorn iteration.
///
/// Returns `(sqrt(<T, M>), d/dx, d/dy)` where `T` is the transport plan after
/// `iterations` rounds of alternating dual updates.
pub fn sinkhorn_w2(x: &Matrix, y: &Matrix, regularization: f64, iterations: usize) -> Result<(f64, Matrix, Matrix)> {
    if x.cols() != y.cols() {
        return Err(Error::Shape {
            op: "sinkhorn",
            left: x.shape(),
            right: y.shape(),
        });
    }
    let (n, m) = (x.rows(), y.rows());
    let cost = squared_distances(x, y);
    let cost_t = cost.transpose();
    let mean_cost = cost.sum() / (n * m) as f64;
    if mean_cost == 0.0 {
        return Ok((0.0, Matrix::zeros(n, x.cols()), Matrix::zeros(m, y.cols())));
    }
    let eps = mean_cost / regularization;
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();

    // Dual potentials after each half step, gs[0] being the all-zero start,
    // and the softmax weights of each update (row-major n x m for f, m x n for g).
    let mut fs: Vec<Vec<f64>> = Vec::with_capacity(iterations);
    let mut gs: Vec<Vec<f64>> = vec![vec![0.0; m]];
    let mut pf: Vec<Vec<f64>> = Vec::with_capacity(iterations);
    let mut pg: Vec<Vec<f64>> = Vec::with_capacity(iterations);
    let mut z = vec![0.0; n * m];
    for _ in 0..iterations {
        let g = gs.last().expect("non-empty");
        for i in 0..n {
            for (j, zv) in z[i * m..(i + 1) * m].iter_mut().enumerate() {
                *zv = (g[j] - cost.get(i, j)) / eps;
            }
        }
        let mut p = vec![0.0; n * m];
        let lse = softmax_rows(&z, n, m, &mut p);
        let f: Vec<f64> = lse.iter().map(|l| eps * (log_a - l)).collect();
        for j in 0..m {
            for (i, zv) in z[j * n..(j + 1) * n].iter_mut().enumerate() {
                *zv = (f[i] - cost_t.get(j, i)) / eps;
            }
        }
        let mut q = vec![0.0; n * m];
        let lse = softmax_rows(&z, m, n, &mut q);
        gs.push(lse.iter().map(|l| eps * (log_b - l)).collect());
        fs.push(f);
        pf.push(p);
        pg.push(q);
    }
    let f = fs.last().expect("iterations > 0");
    let g = gs.last().expect("non-empty");
    let plan = Matrix::from_fn(n, m, |i, j| ((f[i] + g[j] - cost.get(i, j)) / eps).exp());
    let transport: f64 = plan
        .as_slice()
        .iter()
        .zip(cost.as_slice())
        .map(|(t, c)| t * c)
        .sum();
    let value = transport.max(0.0).sqrt();

    // Reverse pass.
    let s_bar = if value > 0.0 { 0.5 / value } else { 0.0 };
    let mut cost_bar = plan.scale(s_bar);
    let mut eps_bar = 0.0;
    let mut f_bar = vec![0.0; n];
    let mut g_bar = vec![0.0; m];
    for i in 0..n {
        for j in 0..m {
            let t = plan.get(i, j);
            let e_bar = s_bar * cost.get(i, j) * t;
            let e = (f[i] + g[j] - cost.get(i, j)) / eps;
            f_bar[i] += e_bar / eps;
            g_bar[j] += e_bar / eps;
            cost_bar.set(i, j, cost_bar.get(i, j) - e_bar / eps);
            eps_bar -= e_bar * e / eps;
        }
    }
    // With y = (u - M)/eps and v = eps*log_w - eps*LSE(y), the adjoint v_bar
    // sends -v_bar*q to u_bar, +v_bar*q to M_bar and v_bar*q*y to eps_bar.
    for k in (0..iterations).rev() {
        // g_{k+1}_j = eps*log_b - eps*LSE_i((f_k_i - M_ij)/eps)
        let (f_k, g_next, q) = (&fs[k], &gs[k + 1], &pg[k]);
        for j in 0..m {
            let gb = g_bar[j];
            if gb == 0.0 {
                continue;
            }
            eps_bar += gb * g_next[j] / eps;
            for i in 0..n {
                let w = gb * q[j * n + i];
                let yv = (f_k[i] - cost.get(i, j)) / eps;
                f_bar[i] -= w;
                cost_bar.set(i, j, cost_bar.get(i, j) + w);
                eps_bar += w * yv;
            }
        }
        g_bar.iter_mut().for_each(|v| *v = 0.0);
        // f_k_i = eps*log_a - eps*LSE_j((g_k_j - M_ij)/eps)
        let (g_k, p) = (&gs[k], &pf[k]);
        for i in 0..n {
            let fb = f_bar[i];
            if fb == 0.0 {
                continue;
            }
            eps_bar += fb * f_k[i] / eps;
            for j in 0..m {
                let w = fb * p[i * m + j];
                let zv = (g_k[j] - cost.get(i, j)) / eps;
                g_bar[j] -= w;
                cost_bar.set(i, j, cost_bar.get(i, j) + w);
                eps_bar += w * zv;
            }
        }
        f_bar.iter_mut().for_each(|v| *v = 0.0);
    }
    // eps = mean(M) / regularization
    let shared = eps_bar / (regularization * (n * m) as f64);
    cost_bar.as_mut_slice().iter_mut().for_each(|v| *v += shared);

    // M_ij = |x_i - y_j|^2
    let row_sums: Vec<f64> = (0..n).map(|i| cost_bar.row(i).iter().sum()).collect();
    let col_sums = cost_bar.column_sums();
    let cb_y = cost_bar.matmul(y)?;
    let cbt_x = cost_bar.matmul_tn(x)?;
    let grad_x = Matrix::from_fn(n, x.cols(), |i, c| 2.0 * (row_sums[i] * x.get(i, c) - cb_y.get(i, c)));
    let grad_y = Matrix::from_fn(m, y.cols(), |j, c| {
        2.0 * (col_sums.get(0, j) * y.get(j, c) - cbt_x.get(j, c))
    });
    Ok((value, grad_x, grad_y))
}
