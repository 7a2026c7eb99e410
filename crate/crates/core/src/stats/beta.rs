//! Beta regression with a logit mean link and a single precision parameter,
//! fitted by damped Newton iterations on (β, ln φ) with analytic
//! derivatives. Standard errors come from the inverse observed information.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::design::{least_squares, linear_predictor, DesignMatrix, PredictorTerm};
use super::special::{digamma, ln_gamma, trigamma};
use super::{normal_p, StatsError};

pub fn logistic(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// (μ, 1 − μ) without cancellation for large |η|.
fn mean_pair(eta: f64) -> (f64, f64) {
    (logistic(eta), logistic(-eta))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaOptions {
    pub max_iter: usize,
    /// Max-norm of the score in (β, ln φ) at which iteration stops.
    pub grad_tol: f64,
}

impl Default for BetaOptions {
    fn default() -> Self {
        Self { max_iter: 200, grad_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaFit {
    pub terms: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub z_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub phi: f64,
    pub phi_se: f64,
    pub loglik: f64,
    pub fitted: Vec<f64>,
    pub std_residuals: Vec<f64>,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// (XᵀWX)⁻¹ at the optimum, used for leverage of new rows.
    #[serde(skip)]
    pub weighted_gram_inv: DMatrix<f64>,
}

impl BetaFit {
    pub fn predict(&self, row: &DVector<f64>) -> f64 {
        let eta: f64 = row.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum();
        logistic(eta)
    }

    /// Standardized weighted residual of a row that was not part of the fit,
    /// with leverage `w xᵀ(XᵀWX)⁻¹x` from the training information.
    pub fn standardized_residual_for(&self, row: &DVector<f64>, y: f64) -> Result<f64, StatsError> {
        let mu = self.predict(row);
        let parts = ResidualParts::new(y, mu, self.phi)?;
        let w = self.phi * parts.v * (mu * (1.0 - mu)).powi(2);
        let h = w * (row.transpose() * &self.weighted_gram_inv * row)[(0, 0)];
        let r = (parts.y_star - parts.mu_star) / (parts.v * (1.0 - h)).sqrt();
        if r.is_finite() {
            Ok(r)
        } else {
            Err(StatsError::Numeric(format!("standardized residual undefined (leverage {h:.4})")))
        }
    }
}

/// Pieces of the standardized weighted residual for one observation:
/// y* = logit(y), μ* = ψ(μφ) − ψ((1−μ)φ), v = ψ′(μφ) + ψ′((1−μ)φ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualParts {
    pub y_star: f64,
    pub mu_star: f64,
    pub v: f64,
}

impl ResidualParts {
    pub fn new(y: f64, mu: f64, phi: f64) -> Result<Self, StatsError> {
        let (a, b) = (mu * phi, (1.0 - mu) * phi);
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(StatsError::Numeric(format!("digamma arguments ({a}, {b}) not positive and finite")));
        }
        let parts = Self {
            y_star: logit(y),
            mu_star: digamma(a) - digamma(b),
            v: trigamma(a) + trigamma(b),
        };
        if parts.mu_star.is_finite() && parts.v.is_finite() && parts.y_star.is_finite() {
            Ok(parts)
        } else {
            Err(StatsError::Numeric(format!("non-finite residual parts at y = {y}, mu = {mu}")))
        }
    }
}

fn check_response(y: &[f64]) -> Result<(), StatsError> {
    match y.iter().position(|&v| !(v > 0.0 && v < 1.0)) {
        Some(index) => Err(StatsError::Boundary { index, value: y[index] }),
        None => Ok(()),
    }
}

/// Log-likelihood at (β, φ).
pub fn beta_loglik(x: &DesignMatrix, y: &[f64], beta: &[f64], phi: f64) -> f64 {
    let b = DVector::from_column_slice(beta);
    let eta = x.matrix() * b;
    let lg_phi = ln_gamma(phi);
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| {
            let (mu, nu) = mean_pair(e);
            lg_phi - ln_gamma(mu * phi) - ln_gamma(nu * phi)
                + (mu * phi - 1.0) * yi.ln()
                + (nu * phi - 1.0) * (1.0 - yi).ln()
        })
        .sum()
}

/// Score with respect to (β, φ).
pub fn beta_gradient(x: &DesignMatrix, y: &[f64], beta: &[f64], phi: f64) -> Vec<f64> {
    let mut theta: Vec<f64> = beta.to_vec();
    theta.push(phi.ln());
    let ev = evaluate(x.matrix(), y, &DVector::from_vec(theta), false);
    let p = beta.len();
    let mut g: Vec<f64> = ev.grad.iter().copied().collect();
    // d/dφ = (d/d ln φ) / φ
    g[p] /= phi;
    g
}

struct Eval {
    loglik: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

/// Log-likelihood, score and Hessian in θ = (β, ω = ln φ).
fn evaluate(x: &DMatrix<f64>, y: &[f64], theta: &DVector<f64>, want_hess: bool) -> Eval {
    let (n, p) = x.shape();
    let beta = theta.rows(0, p);
    let phi = theta[p].exp();
    let eta = x * beta;
    let (lg_phi, dg_phi, tg_phi) = (ln_gamma(phi), digamma(phi), trigamma(phi));

    let mut loglik = 0.0;
    let mut grad = DVector::zeros(p + 1);
    let mut hess = DMatrix::zeros(p + 1, p + 1);
    let mut l_phi_sum = 0.0;
    let mut l_phiphi_sum = 0.0;
    for i in 0..n {
        let (mu, nu) = mean_pair(eta[i]);
        let (a, b) = (mu * phi, nu * phi);
        let (ly, l1y) = (y[i].ln(), (1.0 - y[i]).ln());
        let (dga, dgb) = (digamma(a), digamma(b));
        loglik += lg_phi - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * ly + (b - 1.0) * l1y;

        let ystar = ly - l1y;
        let mustar = dga - dgb;
        let g = mu * nu; // dμ/dη
        let l_mu = phi * (ystar - mustar);
        let l_phi = dg_phi + mu * (ystar - mustar) + l1y - dgb;
        let xi = x.row(i);
        for j in 0..p {
            grad[j] += l_mu * g * xi[j];
        }
        l_phi_sum += l_phi;

        if want_hess {
            let (tga, tgb) = (trigamma(a), trigamma(b));
            let l_mumu = -phi * phi * (tga + tgb);
            let l_etaeta = l_mumu * g * g + l_mu * g * (1.0 - 2.0 * mu);
            let l_muphi = (ystar - mustar) - phi * (mu * tga - nu * tgb);
            let l_etaomega = phi * g * l_muphi;
            for j in 0..p {
                for k in 0..=j {
                    hess[(j, k)] += l_etaeta * xi[j] * xi[k];
                }
                hess[(j, p)] += l_etaomega * xi[j];
            }
            l_phiphi_sum += tg_phi - mu * mu * tga - nu * nu * tgb;
        }
    }
    grad[p] = phi * l_phi_sum;
    if want_hess {
        hess[(p, p)] = phi * phi * l_phiphi_sum + phi * l_phi_sum;
        for j in 0..p {
            for k in 0..j {
                hess[(k, j)] = hess[(j, k)];
            }
            hess[(p, j)] = hess[(j, p)];
        }
    }
    Eval { loglik, grad, hess }
}

/// Starting values: OLS on logit(y) for β and the moment estimator for φ.
fn start_values(x: &DesignMatrix, y: &[f64]) -> Result<DVector<f64>, StatsError> {
    let (n, p) = (x.nrows(), x.ncols());
    let z = DVector::from_iterator(n, y.iter().map(|&v| logit(v)));
    let ls = least_squares(x.matrix(), &z, x.terms())?;
    let fitted = x.matrix() * &ls.beta;
    let rss: f64 = (&z - &fitted).iter().map(|e| e * e).sum();
    let s2 = if n > p { rss / (n - p) as f64 } else { f64::NAN };
    let phi0 = fitted
        .iter()
        .map(|&e| {
            let (mu, nu) = mean_pair(e);
            1.0 / (s2 * mu * nu)
        })
        .sum::<f64>()
        / n as f64
        - 1.0;
    let phi0 = if phi0.is_finite() { phi0.clamp(0.1, 1e8) } else { 1.0 };
    let mut theta: Vec<f64> = ls.beta.iter().copied().collect();
    theta.push(phi0.ln());
    Ok(DVector::from_vec(theta))
}

/// Solves (−H + λI)Δ = g, raising λ until the matrix is positive definite.
fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let neg = -hess;
    let scale = (0..neg.nrows()).map(|i| neg[(i, i)].abs()).fold(1e-12, f64::max);
    let mut lambda = 0.0;
    for _ in 0..40 {
        let m = &neg + DMatrix::identity(neg.nrows(), neg.ncols()) * lambda;
        if let Some(ch) = m.cholesky() {
            return Some(ch.solve(grad));
        }
        lambda = if lambda == 0.0 { 1e-10 * scale } else { lambda * 10.0 };
    }
    None
}

pub fn fit_beta(x: &DesignMatrix, y: &[f64]) -> Result<BetaFit, StatsError> {
    fit_beta_with(x, y, BetaOptions::default())
}

pub fn fit_beta_with(x: &DesignMatrix, y: &[f64], opts: BetaOptions) -> Result<BetaFit, StatsError> {
    let (n, p) = (x.nrows(), x.ncols());
    if y.len() != n {
        return Err(StatsError::Dimension(format!("response has {} rows, design {n}", y.len())));
    }
    if n <= p {
        return Err(StatsError::TooFewRows { n, p });
    }
    check_response(y)?;

    let mut theta = start_values(x, y)?;
    let mut ev = evaluate(x.matrix(), y, &theta, true);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let gnorm = ev.grad.amax();
        if gnorm < opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let dir = newton_direction(&ev.hess, &ev.grad).unwrap_or_else(|| ev.grad.clone());
        let mut step = 1.0;
        let mut accepted = None;
        // gains below this are indistinguishable from rounding in the sum
        let noise = 1e-12 * (1.0 + ev.loglik.abs());
        while step > 1e-12 {
            let cand = &theta + &dir * step;
            let cev = evaluate(x.matrix(), y, &cand, true);
            let flat = cev.loglik >= ev.loglik - noise && cev.grad.amax() < ev.grad.amax();
            if cev.loglik.is_finite() && (cev.loglik >= ev.loglik || flat) {
                accepted = Some((cand, cev));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, cev)) => {
                let moved = (&cand - &theta).amax();
                theta = cand;
                ev = cev;
                // no further progress possible in floating point
                if moved < 1e-15 * theta.amax().max(1.0) {
                    converged = ev.grad.amax() < 1e-6;
                    break;
                }
            }
            None => {
                converged = ev.grad.amax() < 1e-6;
                break;
            }
        }
    }
    let gradient_norm = ev.grad.amax();
    if !converged || !ev.loglik.is_finite() {
        return Err(StatsError::NonConvergence { iterations, gradient_norm, loglik: ev.loglik });
    }

    let cov = (-&ev.hess)
        .try_inverse()
        .ok_or_else(|| StatsError::Numeric("observed information is singular".into()))?;
    let phi = theta[p].exp();
    let coefficients: Vec<f64> = theta.rows(0, p).iter().copied().collect();
    let std_errors: Vec<f64> = (0..p).map(|j| cov[(j, j)].sqrt()).collect();
    let z_values: Vec<f64> = coefficients.iter().zip(&std_errors).map(|(b, s)| b / s).collect();
    let p_values = z_values.iter().map(|&z| normal_p(z)).collect();
    let phi_se = phi * cov[(p, p)].sqrt();

    let eta = x.matrix() * theta.rows(0, p);
    let fitted: Vec<f64> = eta.iter().map(|&e| logistic(e)).collect();
    let weights: Vec<f64> = fitted
        .iter()
        .map(|&mu| {
            let v = trigamma(mu * phi) + trigamma((1.0 - mu) * phi);
            phi * v * (mu * (1.0 - mu)).powi(2)
        })
        .collect();
    let xw = DMatrix::from_fn(n, p, |i, j| x.matrix()[(i, j)] * weights[i]);
    let weighted_gram_inv = (x.matrix().transpose() * xw)
        .try_inverse()
        .ok_or_else(|| StatsError::Numeric("weighted Gram matrix is singular".into()))?;

    let mut fit = BetaFit {
        terms: x.terms().to_vec(),
        coefficients,
        std_errors,
        z_values,
        p_values,
        phi,
        phi_se,
        loglik: ev.loglik,
        fitted,
        std_residuals: Vec::new(),
        iterations,
        gradient_norm,
        weighted_gram_inv,
    };
    fit.std_residuals = espinheira_residuals(&fit, x, y)?;
    Ok(fit)
}

/// Standardized weighted residuals
/// r_i = (y*_i − μ*_i) / √(v_i (1 − h_ii)),
/// with h_ii the diagonal of W^½X(XᵀWX)⁻¹XᵀW^½ and w_i = φ v_i (μ_i(1 − μ_i))².
pub fn espinheira_residuals(fit: &BetaFit, x: &DesignMatrix, y: &[f64]) -> Result<Vec<f64>, StatsError> {
    let (n, p) = (x.nrows(), x.ncols());
    if y.len() != n || fit.coefficients.len() != p {
        return Err(StatsError::Dimension("fit, design and response disagree".into()));
    }
    let beta = DVector::from_column_slice(&fit.coefficients);
    let eta = x.matrix() * beta;
    let mut parts = Vec::with_capacity(n);
    let mut sqrt_w = Vec::with_capacity(n);
    for (i, &e) in eta.iter().enumerate() {
        let (mu, nu) = mean_pair(e);
        let rp = ResidualParts::new(y[i], mu, fit.phi)?;
        sqrt_w.push((fit.phi * rp.v).sqrt() * mu * nu);
        parts.push(rp);
    }
    let xw = DMatrix::from_fn(n, p, |i, j| x.matrix()[(i, j)] * sqrt_w[i]);
    let ls = least_squares(&xw, &DVector::zeros(n), x.terms())?;
    parts
        .iter()
        .zip(ls.leverage.iter())
        .map(|(rp, &h)| {
            let r = (rp.y_star - rp.mu_star) / (rp.v * (1.0 - h)).sqrt();
            if r.is_finite() {
                Ok(r)
            } else {
                Err(StatsError::Numeric(format!("residual undefined at leverage {h}")))
            }
        })
        .collect()
}

/// μ = logistic(intercept + Σ β_j t_j(x_j)) for one row of raw predictor values.
pub fn beta_predict(intercept: f64, terms: &[PredictorTerm], row: &BTreeMap<String, f64>) -> Result<f64, StatsError> {
    Ok(logistic(linear_predictor(intercept, terms, row)?))
}
