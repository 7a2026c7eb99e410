use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::{least_squares, DesignMatrix};
use super::{median, normal_p, StatsError};

pub const HUBER_K: f64 = 1.345;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberOptions {
    pub k: f64,
    pub max_iter: usize,
    /// Largest absolute coefficient change at which iteration stops.
    pub tol: f64,
}

impl Default for HuberOptions {
    fn default() -> Self {
        Self { k: HUBER_K, max_iter: 50, tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustFit {
    pub terms: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_values: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Robust residual scale σ.
    pub scale: f64,
    pub k: f64,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    pub weights: Vec<f64>,
    pub iterations: usize,
    /// `false` when the iteration cap was hit; the fit is still usable.
    pub converged: bool,
}

impl RobustFit {
    pub fn predict(&self, row: &DVector<f64>) -> f64 {
        row.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum()
    }
}

fn robust_scale(residuals: &DVector<f64>) -> f64 {
    let abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    let s = median(&abs) / 0.6745;
    if s > 0.0 {
        return s;
    }
    let mean = abs.iter().sum::<f64>() / abs.len().max(1) as f64;
    if mean > 0.0 {
        log::warn!("median absolute residual is zero; using mean absolute residual as scale");
    }
    mean
}

fn huber_weights(residuals: &DVector<f64>, cutoff: f64) -> DVector<f64> {
    residuals.map(|r| if r.abs() <= cutoff { 1.0 } else { cutoff / r.abs() })
}

fn weighted_solve(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>, names: &[String]) -> Result<DVector<f64>, StatsError> {
    let sw = w.map(f64::sqrt);
    let xw = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * sw[i]);
    Ok(least_squares(&xw, &y.component_mul(&sw), names)?.beta)
}

pub fn fit_huber(x: &DesignMatrix, y: &[f64]) -> Result<RobustFit, StatsError> {
    fit_huber_with(x, y, HuberOptions::default())
}

/// Huber M-estimation by iteratively reweighted least squares, starting from
/// OLS and re-estimating the scale as median|r| / 0.6745 at every step.
pub fn fit_huber_with(x: &DesignMatrix, y: &[f64], opts: HuberOptions) -> Result<RobustFit, StatsError> {
    let (n, p) = (x.nrows(), x.ncols());
    if y.len() != n {
        return Err(StatsError::Dimension(format!("response has {} rows, design {n}", y.len())));
    }
    if n <= p {
        return Err(StatsError::TooFewRows { n, p });
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(format!("response row {i}")));
    }
    let xm = x.matrix();
    let yv = DVector::from_column_slice(y);
    let ls = least_squares(xm, &yv, x.terms())?;
    let mut beta = ls.beta;
    let mut scale = 0.0;
    let mut weights = DVector::from_element(n, 1.0);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let resid = &yv - xm * &beta;
        scale = robust_scale(&resid);
        if scale == 0.0 {
            converged = true;
            break;
        }
        iterations += 1;
        weights = huber_weights(&resid, opts.k * scale);
        let next = weighted_solve(xm, &yv, &weights, x.terms())?;
        let change = (&next - &beta).amax();
        beta = next;
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("Huber IRLS hit the {}-iteration cap; fit flagged", opts.max_iter);
    }

    let fitted = xm * &beta;
    let residuals = &yv - &fitted;
    if scale > 0.0 {
        scale = robust_scale(&residuals);
    }

    // Asymptotic covariance σ² · [Σψ²/(n−p)] / (mean ψ′)² · (XᵀX)⁻¹ with
    // ψ evaluated on standardized residuals.
    let cutoff = opts.k;
    let (mut sum_psi2, mut n_inside) = (0.0, 0usize);
    for r in residuals.iter() {
        let u = if scale > 0.0 { r / scale } else { 0.0 };
        let psi = u.clamp(-cutoff, cutoff);
        sum_psi2 += psi * psi;
        if u.abs() <= cutoff {
            n_inside += 1;
        }
    }
    let mean_dpsi = n_inside as f64 / n as f64;
    let factor = if mean_dpsi > 0.0 {
        scale * scale * (sum_psi2 / (n - p) as f64) / (mean_dpsi * mean_dpsi)
    } else {
        f64::NAN
    };
    let std_errors: Vec<f64> = (0..p).map(|j| (factor * ls.xtx_inv[(j, j)]).sqrt()).collect();
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let t_values: Vec<f64> = coefficients.iter().zip(&std_errors).map(|(b, s)| b / s).collect();
    let p_values = t_values.iter().map(|&t| normal_p(t)).collect();

    Ok(RobustFit {
        terms: x.terms().to_vec(),
        coefficients,
        std_errors,
        t_values,
        p_values,
        scale,
        k: opts.k,
        fitted: fitted.iter().copied().collect(),
        residuals: residuals.iter().copied().collect(),
        weights: weights.iter().copied().collect(),
        iterations,
        converged,
    })
}
