use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::{least_squares, DesignMatrix};
use super::{student_p, StatsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub terms: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Diagonal of the hat matrix.
    pub leverage: Vec<f64>,
    /// Residual standard error.
    pub sigma: f64,
    pub r_squared: f64,
    pub df_resid: usize,
}

impl OlsFit {
    pub fn predict(&self, row: &DVector<f64>) -> f64 {
        row.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum()
    }

    /// Leave-one-out residuals from the hat matrix: e_i / (1 − h_ii).
    pub fn deleted_residuals(&self) -> Vec<f64> {
        self.residuals
            .iter()
            .zip(&self.leverage)
            .map(|(e, h)| e / (1.0 - h))
            .collect()
    }
}

/// Ordinary least squares with classical inference.
pub fn fit_ols(x: &DesignMatrix, y: &[f64]) -> Result<OlsFit, StatsError> {
    fit_wls(x, y, None)
}

/// Weighted least squares; `weights` of `None` means OLS. Inference treats
/// the weights as known precisions.
pub fn fit_wls(x: &DesignMatrix, y: &[f64], weights: Option<&[f64]>) -> Result<OlsFit, StatsError> {
    let (n, p) = (x.nrows(), x.ncols());
    if y.len() != n {
        return Err(StatsError::Dimension(format!("response has {} rows, design {n}", y.len())));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(format!("response row {i}")));
    }
    let sw: DVector<f64> = match weights {
        Some(w) => DVector::from_iterator(n, w.iter().map(|v| v.sqrt())),
        None => DVector::from_element(n, 1.0),
    };
    let xw = DMatrix::from_fn(n, p, |i, j| x.matrix()[(i, j)] * sw[i]);
    let yv = DVector::from_column_slice(y);
    let yw = yv.component_mul(&sw);
    let ls = least_squares(&xw, &yw, x.terms())?;

    let fitted = x.matrix() * &ls.beta;
    let residuals = &yv - &fitted;
    let df_resid = n - p;
    let wrss: f64 = residuals.iter().zip(sw.iter()).map(|(e, s)| (e * s).powi(2)).sum();
    let sigma2 = if df_resid > 0 { wrss / df_resid as f64 } else { f64::NAN };
    let std_errors: Vec<f64> = (0..p).map(|j| (sigma2 * ls.xtx_inv[(j, j)]).sqrt()).collect();
    let t_values: Vec<f64> = ls.beta.iter().zip(&std_errors).map(|(b, s)| b / s).collect();
    let p_values = t_values.iter().map(|&t| student_p(t, df_resid as f64)).collect();

    let ybar = yv.mean();
    let tss: f64 = yv.iter().map(|v| (v - ybar).powi(2)).sum();
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { f64::NAN };

    Ok(OlsFit {
        terms: x.terms().to_vec(),
        coefficients: ls.beta.iter().copied().collect(),
        std_errors,
        t_values,
        p_values,
        fitted: fitted.iter().copied().collect(),
        residuals: residuals.iter().copied().collect(),
        leverage: ls.leverage.iter().copied().collect(),
        sigma: sigma2.sqrt(),
        r_squared,
        df_resid,
    })
}
