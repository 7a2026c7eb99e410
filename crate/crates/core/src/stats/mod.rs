//! Regression engines: Pearson correlation, ordinary least squares, beta
//! regression by maximum likelihood, and Huber M-estimation.
//!
//! Every fit is a pure function of its inputs.

mod beta;
mod design;
mod huber;
mod ols;
mod pearson;
pub mod special;

use thiserror::Error;

pub use beta::{
    beta_gradient, beta_loglik, beta_predict, espinheira_residuals, fit_beta, fit_beta_with, logistic,
    logit, BetaFit, BetaOptions, ResidualParts,
};
pub use design::{linear_predictor, DesignMatrix, PredictorTerm, Transform, INTERCEPT};
pub use huber::{fit_huber, fit_huber_with, HuberOptions, RobustFit, HUBER_K};
pub use ols::{fit_ols, fit_wls, OlsFit};
pub use pearson::{pearson, pearson_matrix, CorrelationMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("need more rows than columns to fit (n = {n}, columns = {p})")]
    TooFewRows { n: usize, p: usize },
    #[error("singular design: column(s) {} are collinear", columns.join(", "))]
    SingularDesign { columns: Vec<String> },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("response {value} at row {index} is outside the open interval (0, 1)")]
    Boundary { index: usize, value: f64 },
    #[error(
        "beta regression did not converge after {iterations} iterations \
         (gradient max-norm {gradient_norm:.3e}, log-likelihood {loglik:.6})"
    )]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
        loglik: f64,
    },
    #[error("missing predictor `{0}`")]
    MissingPredictor(String),
    #[error("square root of negative value {value} in `{name}`")]
    NegativeSqrt { name: String, value: f64 },
    #[error("numeric failure: {0}")]
    Numeric(String),
}

/// Two-sided p-value of a standard normal statistic.
pub(crate) fn normal_p(z: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    if !z.is_finite() {
        return f64::NAN;
    }
    let n = Normal::standard();
    (2.0 * n.cdf(-z.abs())).clamp(0.0, 1.0)
}

/// Two-sided p-value of a Student t statistic.
pub(crate) fn student_p(t: f64, df: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    if !t.is_finite() || df <= 0.0 {
        return f64::NAN;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.cdf(-t.abs())).clamp(0.0, 1.0)
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}
