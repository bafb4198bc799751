//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tol: f64,
    /// Check at most this many randomly chosen coordinates; `None` checks all.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CoordinateCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<CoordinateCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.rel_error <= self.tol)
    }

    pub fn worst(&self) -> Option<&CoordinateCheck> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Compares `loss`'s analytic gradient at `point` against central differences.
///
/// `loss` maps a flat parameter vector to `(value, gradient)`. The error
/// measure per coordinate is `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(mut loss: F, point: &[f64], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(cfg.step > 0.0) {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let (value, analytic) = loss(point)?;
    let (again, _) = loss(point)?;
    if value.to_bits() != again.to_bits() {
        return Err(Error::contract(format!(
            "loss is not deterministic: {value} vs {again} at the same point"
        )));
    }
    if analytic.len() != point.len() {
        return Err(Error::contract(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            point.len()
        )));
    }

    let mut coords: Vec<usize> = (0..point.len()).collect();
    if let Some(k) = cfg.max_coords {
        if k < coords.len() {
            SeededRng::new(cfg.seed).shuffle(&mut coords);
            coords.truncate(k);
            coords.sort_unstable();
        }
    }

    let mut probe = point.to_vec();
    let mut entries = Vec::with_capacity(coords.len());
    for idx in coords {
        let original = probe[idx];
        probe[idx] = original + cfg.step;
        let plus = loss(&probe)?.0;
        probe[idx] = original - cfg.step;
        let minus = loss(&probe)?.0;
        probe[idx] = original;
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let a = analytic[idx];
        let rel_error = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        entries.push(CoordinateCheck {
            index: idx,
            analytic: a,
            numeric,
            rel_error,
        });
    }
    Ok(GradCheckReport {
        entries,
        tol: cfg.tol,
    })
}
