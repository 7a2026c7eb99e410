use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::StatsError;

pub const INTERCEPT: &str = "(Intercept)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    Identity,
    Sqrt,
}

impl Transform {
    pub fn apply(self, name: &str, x: f64) -> Result<f64, StatsError> {
        match self {
            Transform::Identity => Ok(x),
            Transform::Sqrt if x < 0.0 => Err(StatsError::NegativeSqrt { name: name.to_string(), value: x }),
            Transform::Sqrt => Ok(x.sqrt()),
        }
    }
}

/// A fitted or fixed predictor: its raw column, transform and coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorTerm {
    pub name: String,
    #[serde(default)]
    pub transform: Transform,
    pub coefficient: f64,
}

impl PredictorTerm {
    pub fn new(name: impl Into<String>, transform: Transform, coefficient: f64) -> Self {
        Self { name: name.into(), transform, coefficient }
    }
}

/// Linear predictor `intercept + Σ β_j t_j(x_j)` for one row of raw values.
pub fn linear_predictor(
    intercept: f64,
    terms: &[PredictorTerm],
    row: &BTreeMap<String, f64>,
) -> Result<f64, StatsError> {
    terms.iter().try_fold(intercept, |acc, t| {
        let raw = *row.get(&t.name).ok_or_else(|| StatsError::MissingPredictor(t.name.clone()))?;
        Ok(acc + t.coefficient * t.transform.apply(&t.name, raw)?)
    })
}

/// Rows are cities; column 0 is the implicit intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    terms: Vec<String>,
    transforms: Vec<Transform>,
    x: DMatrix<f64>,
}

impl DesignMatrix {
    /// Builds the matrix from raw named columns, applying each transform.
    pub fn new(columns: Vec<(String, Transform, Vec<f64>)>, n: usize) -> Result<Self, StatsError> {
        let mut terms = vec![INTERCEPT.to_string()];
        let mut transforms = vec![Transform::Identity];
        let mut x = DMatrix::from_element(n, columns.len() + 1, 1.0);
        for (j, (name, transform, values)) in columns.into_iter().enumerate() {
            if values.len() != n {
                return Err(StatsError::Dimension(format!("column `{name}` has {} rows, expected {n}", values.len())));
            }
            if terms.contains(&name) {
                return Err(StatsError::Dimension(format!("duplicate column `{name}`")));
            }
            for (i, v) in values.into_iter().enumerate() {
                if !v.is_finite() {
                    return Err(StatsError::NonFinite(format!("column `{name}` row {i}")));
                }
                x[(i, j + 1)] = transform.apply(&name, v)?;
            }
            terms.push(name);
            transforms.push(transform);
        }
        Ok(Self { terms, transforms, x })
    }

    /// Untransformed columns.
    pub fn from_columns(names: &[&str], columns: &[Vec<f64>]) -> Result<Self, StatsError> {
        if names.len() != columns.len() {
            return Err(StatsError::Dimension("names and columns differ in length".into()));
        }
        let n = columns.first().map_or(0, Vec::len);
        Self::new(
            names
                .iter()
                .zip(columns)
                .map(|(name, c)| (name.to_string(), Transform::Identity, c.clone()))
                .collect(),
            n,
        )
    }

    pub fn intercept_only(n: usize) -> Self {
        Self {
            terms: vec![INTERCEPT.to_string()],
            transforms: vec![Transform::Identity],
            x: DMatrix::from_element(n, 1, 1.0),
        }
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    /// Term names, starting with the intercept.
    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn transforms(&self) -> &[Transform] {
        &self.transforms
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }

    pub fn without_row(&self, i: usize) -> Self {
        Self {
            terms: self.terms.clone(),
            transforms: self.transforms.clone(),
            x: self.x.clone().remove_row(i),
        }
    }
}

/// Thin QR solve of a full-rank least-squares problem.
pub(crate) struct LeastSquares {
    pub beta: DVector<f64>,
    /// (XᵀX)⁻¹ = R⁻¹R⁻ᵀ
    pub xtx_inv: DMatrix<f64>,
    pub leverage: DVector<f64>,
}

pub(crate) fn least_squares(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    names: &[String],
) -> Result<LeastSquares, StatsError> {
    let (n, p) = x.shape();
    if n < p {
        return Err(StatsError::TooFewRows { n, p });
    }
    if y.len() != n {
        return Err(StatsError::Dimension(format!("response has {} rows, design {n}", y.len())));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let q = qr.q();

    let col_norms: Vec<f64> = (0..p).map(|j| x.column(j).norm()).collect();
    let scale = col_norms.iter().cloned().fold(0.0, f64::max);
    let mut bad = Vec::new();
    for j in 0..p {
        let tol = 1e-10 * col_norms[j].max(1e-300 * scale);
        if r[(j, j)].abs() <= tol || col_norms[j] == 0.0 {
            bad.push(j);
        }
    }
    if !bad.is_empty() {
        let mut columns = Vec::new();
        for &j in &bad {
            columns.push(names[j].clone());
            // earlier columns that reproduce column j
            if j > 0 {
                let r11 = r.view((0, 0), (j, j)).into_owned();
                let rhs = r.view((0, j), (j, 1)).into_owned();
                if let Some(c) = r11.solve_upper_triangular(&rhs) {
                    for k in 0..j {
                        if c[k].is_finite()
                            && (c[k] * col_norms[k]).abs() > 1e-8 * col_norms[j]
                            && !columns.contains(&names[k])
                        {
                            columns.push(names[k].clone());
                        }
                    }
                }
            }
        }
        return Err(StatsError::SingularDesign { columns });
    }

    let beta = if p > 0 && x.column(0).iter().all(|&v| v == 1.0) {
        centered_solve(x, y)?
    } else {
        r.solve_upper_triangular(&(q.transpose() * y))
            .ok_or_else(|| StatsError::Numeric("triangular solve failed".into()))?
    };
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| StatsError::Numeric("triangular inverse failed".into()))?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let leverage = DVector::from_iterator(n, (0..n).map(|i| q.row(i).norm_squared()));
    Ok(LeastSquares { beta, xtx_inv, leverage })
}

/// Slopes from centered columns, intercept from the means. With an
/// intercept-only design this is exactly the sample mean.
fn centered_solve(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>, StatsError> {
    let (n, p) = x.shape();
    let ybar = y.sum() / n as f64;
    let mut beta = DVector::zeros(p);
    beta[0] = ybar;
    if p == 1 {
        return Ok(beta);
    }
    let means: Vec<f64> = (1..p).map(|j| x.column(j).sum() / n as f64).collect();
    let xc = DMatrix::from_fn(n, p - 1, |i, j| x[(i, j + 1)] - means[j]);
    let yc = y.map(|v| v - ybar);
    let qr = xc.qr();
    let slopes = qr
        .r()
        .solve_upper_triangular(&(qr.q().transpose() * yc))
        .ok_or_else(|| StatsError::Numeric("triangular solve failed".into()))?;
    for j in 1..p {
        beta[j] = slopes[j - 1];
        beta[0] -= means[j - 1] * slopes[j - 1];
    }
    Ok(beta)
}
