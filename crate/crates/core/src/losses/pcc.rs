use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Added to every standard deviation in the correlation denominator.
pub const PCC_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct PccLoss {
    pub value: f64,
    pub grad_a: Matrix,
    pub grad_bc: Matrix,
}

struct Centered {
    centered: Matrix,
    raw_std: Vec<f64>,
}

fn center(x: &Matrix) -> Centered {
    let n = x.rows() as f64;
    let means = x.column_means();
    let centered = Matrix::from_fn(x.rows(), x.cols(), |r, c| x.get(r, c) - means[c]);
    let raw_std = (0..x.cols())
        .map(|c| {
            let ss: f64 = (0..x.rows()).map(|r| centered.get(r, c).powi(2)).sum();
            (ss / n).sqrt()
        })
        .collect();
    Centered { centered, raw_std }
}

/// Mean squared Pearson correlation over every (A column, BC column) pair, halved.
///
/// Population moments (1/N) are used throughout, so the value lies in `[0, 0.5]`.
pub fn pcc_loss(phi_a: &Matrix, phi_bc: &Matrix) -> Result<PccLoss> {
    if phi_a.rows() != phi_bc.rows() {
        return Err(Error::Shape {
            op: "pcc_loss",
            left: phi_a.shape(),
            right: phi_bc.shape(),
        });
    }
    let n_rows = phi_a.rows();
    if n_rows < 2 {
        return Err(Error::contract(format!("pcc loss needs at least 2 rows, got {n_rows}")));
    }
    let (m, n) = (phi_a.cols(), phi_bc.cols());
    if m == 0 || n == 0 {
        return Err(Error::contract("pcc loss needs at least one column in each block"));
    }
    let nf = n_rows as f64;
    let a = center(phi_a);
    let b = center(phi_bc);
    let sa: Vec<f64> = a.raw_std.iter().map(|s| s + PCC_EPSILON).collect();
    let sb: Vec<f64> = b.raw_std.iter().map(|s| s + PCC_EPSILON).collect();

    let cov = a.centered.matmul_tn(&b.centered)?.scale(1.0 / nf);
    let rho = Matrix::from_fn(m, n, |i, j| cov.get(i, j) / (sa[i] * sb[j]));
    let pairs = (m * n) as f64;
    let value = rho.sum_squares() / (2.0 * pairs);

    // dL/dρ_ij = ρ_ij / (m n)
    let h = Matrix::from_fn(m, n, |i, j| rho.get(i, j) / (pairs * sa[i] * sb[j]));
    let row_term: Vec<f64> = (0..m)
        .map(|i| {
            if a.raw_std[i] == 0.0 {
                return 0.0;
            }
            let s: f64 = (0..n).map(|j| rho.get(i, j).powi(2)).sum();
            s / (pairs * sa[i] * a.raw_std[i])
        })
        .collect();
    let col_term: Vec<f64> = (0..n)
        .map(|j| {
            if b.raw_std[j] == 0.0 {
                return 0.0;
            }
            let s: f64 = (0..m).map(|i| rho.get(i, j).powi(2)).sum();
            s / (pairs * sb[j] * b.raw_std[j])
        })
        .collect();

    let bh = b.centered.matmul_nt(&h)?;
    let ah = a.centered.matmul(&h)?;
    let grad_a = Matrix::from_fn(n_rows, m, |k, i| (bh.get(k, i) - a.centered.get(k, i) * row_term[i]) / nf);
    let grad_bc = Matrix::from_fn(n_rows, n, |k, j| (ah.get(k, j) - b.centered.get(k, j) * col_term[j]) / nf);
    Ok(PccLoss { value, grad_a, grad_bc })
}
