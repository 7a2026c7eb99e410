//! Model specifications, leave-one-out cross-validation, error metrics and
//! PRESS-driven backward selection.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{nudge_boundary, AggregationError, Dataset};
use crate::stats::{
    fit_beta, fit_huber, fit_ols, linear_predictor, logistic, pearson, BetaFit, DesignMatrix, OlsFit, PredictorTerm,
    RobustFit, StatsError, Transform, INTERCEPT,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("model spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Data(#[from] AggregationError),
    #[error("{0}")]
    Stats(#[from] StatsError),
    #[error("fold holding out `{city}`: {source}")]
    Fold {
        city: String,
        #[source]
        source: StatsError,
    },
    #[error("need at least {need} complete rows, have {n}")]
    TooFewRows { n: usize, need: usize },
    #[error("no prediction pairs")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Beta,
    Ols,
    Robust,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSpec {
    pub name: String,
    #[serde(default)]
    pub transform: Transform,
    /// Fixed coefficient for reproduction mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficient: Option<f64>,
}

impl TermSpec {
    pub fn new(name: &str, transform: Transform) -> Self {
        Self { name: name.to_string(), transform, coefficient: None }
    }

    fn fixed(name: &str, transform: Transform, coefficient: f64) -> Self {
        Self { name: name.to_string(), transform, coefficient: Some(coefficient) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<u32>,
    pub family: Family,
    pub outcome: String,
    #[serde(default)]
    pub terms: Vec<TermSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intercept: Option<f64>,
}

impl ModelSpec {
    pub fn new(family: Family, outcome: &str, terms: Vec<TermSpec>) -> Self {
        Self { model_id: None, family, outcome: outcome.to_string(), terms, intercept: None }
    }

    pub fn label(&self) -> String {
        match self.model_id {
            Some(id) => format!("model_{id}"),
            None => self.outcome.clone(),
        }
    }

    /// True when the intercept and every term carry fixed coefficients.
    pub fn is_fixed(&self) -> bool {
        self.intercept.is_some() && self.terms.iter().all(|t| t.coefficient.is_some())
    }

    pub fn term_names(&self) -> Vec<&str> {
        self.terms.iter().map(|t| t.name.as_str()).collect()
    }

    fn without(&self, name: &str) -> Self {
        let mut s = self.clone();
        s.terms.retain(|t| t.name != name);
        s
    }
}

/// The ten published final models with their reported coefficients.
pub fn canonical_models() -> Vec<ModelSpec> {
    use Transform::{Identity as I, Sqrt};
    let m = |id: u32, family: Family, outcome: &str, intercept: f64, terms: Vec<TermSpec>| ModelSpec {
        model_id: Some(id),
        family,
        outcome: outcome.to_string(),
        terms,
        intercept: Some(intercept),
    };
    let t = TermSpec::fixed;
    vec![
        m(1, Family::Beta, "census_pt_walk", -1.356, vec![t("gsv_cycle", I, -0.004), t("gsv_bus", I, 0.020), t("gsv_mar", I, -0.013)]),
        m(2, Family::Beta, "census_cycle", -4.877, vec![t("gsv_cycle", Sqrt, 0.408)]),
        m(3, Family::Beta, "census_mc", -4.759, vec![t("gsv_cycle", I, 0.006), t("gsv_mc", I, 0.027), t("gsv_bus", I, -0.018)]),
        m(4, Family::Beta, "census_car", 1.223, vec![t("gsv_cycle", I, -0.01), t("gsv_bus", I, -0.016), t("gsv_mar", I, 0.010)]),
        m(5, Family::Beta, "aps_prev_all_cycle", -1.995, vec![t("gsv_cycle", I, 0.026), t("gsv_bus", I, -0.008)]),
        m(6, Family::Beta, "aps_prev_utly_cycle", -3.662, vec![t("gsv_walk", I, -0.004), t("gsv_cycle", I, 0.467)]),
        m(7, Family::Beta, "aps_prev_all_walk", 1.571, vec![t("gsv_cycle", I, 0.007), t("gsv_feb", I, 0.553), t("gsv_mar", I, 0.009)]),
        m(8, Family::Beta, "aps_prev_utly_walk", 0.192, vec![t("gsv_cycle", I, 0.008)]),
        m(9, Family::Robust, "aps_days_utly_cycle", -0.033, vec![t("gsv_cycle", I, 0.015)]),
        m(10, Family::Ols, "aps_days_utly_walk", 1.562, vec![t("gsv_walk", I, 0.002)]),
    ]
}

/// Prediction of a fixed-coefficient spec from raw predictor values.
pub fn predict_fixed(spec: &ModelSpec, row: &BTreeMap<String, f64>) -> Result<f64, HarnessError> {
    let intercept = spec.intercept.ok_or_else(|| HarnessError::Spec(format!("{} has no fixed intercept", spec.label())))?;
    let terms: Vec<PredictorTerm> = spec
        .terms
        .iter()
        .map(|t| {
            t.coefficient
                .map(|c| PredictorTerm::new(t.name.clone(), t.transform, c))
                .ok_or_else(|| HarnessError::Spec(format!("term `{}` has no fixed coefficient", t.name)))
        })
        .collect::<Result<_, _>>()?;
    let eta = linear_predictor(intercept, &terms, row)?;
    Ok(match spec.family {
        Family::Beta => logistic(eta),
        Family::Ols | Family::Robust => eta,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPrediction {
    pub city: String,
    pub observed: Option<f64>,
    pub predicted: f64,
}

/// Reproduction mode over every row that has the spec's predictors.
pub fn predict_fixed_dataset(spec: &ModelSpec, data: &Dataset) -> Result<Vec<FixedPrediction>, HarnessError> {
    let names = spec.term_names();
    let cols: Vec<&[Option<f64>]> = names
        .iter()
        .map(|n| data.column(n).ok_or_else(|| HarnessError::Spec(format!("dataset has no column `{n}`"))))
        .collect::<Result<_, _>>()?;
    let outcome = data.column(&spec.outcome);
    let mut out = Vec::new();
    for (i, city) in data.cities().iter().enumerate() {
        let row: Option<BTreeMap<String, f64>> = names.iter().zip(&cols).map(|(n, c)| c[i].map(|v| (n.to_string(), v))).collect();
        let Some(row) = row else { continue };
        out.push(FixedPrediction {
            city: city.clone(),
            observed: outcome.and_then(|c| c[i]),
            predicted: predict_fixed(spec, &row)?,
        });
    }
    Ok(out)
}

/// Model inputs after dropping rows with any missing cell.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub cities: Vec<String>,
    /// Outcome as observed.
    pub observed: Vec<f64>,
    /// Outcome passed to the fit (boundary-nudged for beta models).
    pub response: Vec<f64>,
    pub design: DesignMatrix,
}

pub fn prepare(spec: &ModelSpec, data: &Dataset) -> Result<Prepared, HarnessError> {
    let mut names = vec![spec.outcome.as_str()];
    names.extend(spec.term_names());
    for n in &names {
        if data.column(n).is_none() {
            return Err(HarnessError::Spec(format!("dataset has no column `{n}`")));
        }
    }
    if names[1..].contains(&spec.outcome.as_str()) {
        return Err(HarnessError::Spec(format!("`{}` is both outcome and predictor", spec.outcome)));
    }
    let rows = data.complete_rows(&names)?;
    let get = |name: &str| -> Vec<f64> {
        let c = data.column(name).expect("checked");
        rows.iter().map(|&i| c[i].expect("complete")).collect()
    };
    let observed = get(&spec.outcome);
    if spec.family == Family::Beta {
        if let Some(v) = observed.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(HarnessError::Spec(format!("beta outcome `{}` has value {v} outside [0, 1]", spec.outcome)));
        }
    }
    let response = if spec.family == Family::Beta { nudge_boundary(&observed) } else { observed.clone() };
    let columns = spec.terms.iter().map(|t| (t.name.clone(), t.transform, get(&t.name))).collect();
    let design = DesignMatrix::new(columns, rows.len())?;
    Ok(Prepared {
        cities: rows.iter().map(|&i| data.cities()[i].clone()).collect(),
        observed,
        response,
        design,
    })
}

#[derive(Debug, Clone)]
pub enum Fit {
    Beta(BetaFit),
    Ols(OlsFit),
    Robust(RobustFit),
}

impl Fit {
    pub fn coefficients(&self) -> &[f64] {
        match self {
            Fit::Beta(f) => &f.coefficients,
            Fit::Ols(f) => &f.coefficients,
            Fit::Robust(f) => &f.coefficients,
        }
    }

    pub fn std_errors(&self) -> &[f64] {
        match self {
            Fit::Beta(f) => &f.std_errors,
            Fit::Ols(f) => &f.std_errors,
            Fit::Robust(f) => &f.std_errors,
        }
    }

    /// Wald z, classical t or asymptotic t, by family.
    pub fn statistics(&self) -> &[f64] {
        match self {
            Fit::Beta(f) => &f.z_values,
            Fit::Ols(f) => &f.t_values,
            Fit::Robust(f) => &f.t_values,
        }
    }

    pub fn p_values(&self) -> &[f64] {
        match self {
            Fit::Beta(f) => &f.p_values,
            Fit::Ols(f) => &f.p_values,
            Fit::Robust(f) => &f.p_values,
        }
    }

    pub fn predict(&self, row: &DVector<f64>) -> f64 {
        match self {
            Fit::Beta(f) => f.predict(row),
            Fit::Ols(f) => f.predict(row),
            Fit::Robust(f) => f.predict(row),
        }
    }
}

pub fn fit_prepared(family: Family, x: &DesignMatrix, y: &[f64]) -> Result<Fit, StatsError> {
    Ok(match family {
        Family::Beta => Fit::Beta(fit_beta(x, y)?),
        Family::Ols => Fit::Ols(fit_ols(x, y)?),
        Family::Robust => Fit::Robust(fit_huber(x, y)?),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermSummary {
    pub name: String,
    pub transform: Transform,
    pub coefficient: f64,
    pub se: f64,
    pub statistic: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Convergence {
    pub iterations: usize,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradient_norm: Option<f64>,
}

/// Serializable record of one full-data fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_id: Option<u32>,
    pub family: Family,
    pub outcome: String,
    pub n: usize,
    pub terms: Vec<TermSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loglik: Option<f64>,
    pub convergence: Convergence,
}

pub fn fit_spec(spec: &ModelSpec, data: &Dataset) -> Result<(Fit, FitSummary), HarnessError> {
    let p = prepare(spec, data)?;
    let fit = fit_prepared(spec.family, &p.design, &p.response)?;
    let terms = p
        .design
        .terms()
        .iter()
        .zip(p.design.transforms())
        .enumerate()
        .map(|(j, (name, tr))| TermSummary {
            name: name.clone(),
            transform: *tr,
            coefficient: fit.coefficients()[j],
            se: fit.std_errors()[j],
            statistic: fit.statistics()[j],
            p: fit.p_values()[j],
        })
        .collect();
    let (phi, sigma, loglik, convergence) = match &fit {
        Fit::Beta(f) => (
            Some(f.phi),
            None,
            Some(f.loglik),
            Convergence { iterations: f.iterations, converged: true, gradient_norm: Some(f.gradient_norm) },
        ),
        Fit::Ols(f) => (None, Some(f.sigma), None, Convergence { iterations: 0, converged: true, gradient_norm: None }),
        Fit::Robust(f) => (
            None,
            Some(f.scale),
            None,
            Convergence { iterations: f.iterations, converged: f.converged, gradient_norm: None },
        ),
    };
    let summary = FitSummary {
        model_id: spec.model_id,
        family: spec.family,
        outcome: spec.outcome.clone(),
        n: p.cities.len(),
        terms,
        phi,
        sigma,
        loglik,
        convergence,
    };
    Ok((fit, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPair {
    pub city: String,
    pub observed: f64,
    pub predicted: f64,
    /// Out-of-fold standardized residual (beta models).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedFold {
    pub city: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    pub pairs: Vec<CvPair>,
    pub excluded: Vec<ExcludedFold>,
}

/// Leave-one-out predictions: each city is predicted by a fit on all other
/// cities. A fold that fails to converge drops its city with a warning; a
/// singular fold is an error.
pub fn loocv(spec: &ModelSpec, data: &Dataset) -> Result<CvResult, HarnessError> {
    let p = prepare(spec, data)?;
    loocv_prepared(spec.family, &p)
}

pub fn loocv_prepared(family: Family, p: &Prepared) -> Result<CvResult, HarnessError> {
    let n = p.cities.len();
    // every training fold must still determine all coefficients
    let need = p.design.ncols() + 1;
    if n < need {
        return Err(HarnessError::TooFewRows { n, need });
    }
    let mut pairs = Vec::with_capacity(n);
    let mut excluded = Vec::new();
    for i in 0..n {
        let x = p.design.without_row(i);
        let y: Vec<f64> = p.response.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| *v).collect();
        let fit = match fit_prepared(family, &x, &y) {
            Ok(f) => f,
            Err(e @ (StatsError::NonConvergence { .. } | StatsError::Numeric(_))) => {
                log::warn!("fold holding out `{}` dropped: {e}", p.cities[i]);
                excluded.push(ExcludedFold { city: p.cities[i].clone(), reason: e.to_string() });
                continue;
            }
            Err(source) => return Err(HarnessError::Fold { city: p.cities[i].clone(), source }),
        };
        let row = p.design.row(i);
        let std_residual = match &fit {
            Fit::Beta(f) => f.standardized_residual_for(&row, p.response[i]).ok(),
            _ => None,
        };
        pairs.push(CvPair {
            city: p.cities[i].clone(),
            observed: p.observed[i],
            predicted: fit.predict(&row),
            std_residual,
        });
    }
    Ok(CvResult { pairs, excluded })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvMetrics {
    pub n: usize,
    pub press: f64,
    pub mae: f64,
    pub mdae: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub msr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mdsr: Option<f64>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn metrics(pairs: &[CvPair]) -> Result<CvMetrics, HarnessError> {
    if pairs.is_empty() {
        return Err(HarnessError::Empty);
    }
    let n = pairs.len();
    let mut abs: Vec<f64> = pairs.iter().map(|p| (p.observed - p.predicted).abs()).collect();
    let press = pairs.iter().map(|p| (p.observed - p.predicted).powi(2)).sum();
    let mae = abs.iter().sum::<f64>() / n as f64;
    let mdae = median(&mut abs);
    let mut sr: Vec<f64> = pairs.iter().filter_map(|p| p.std_residual.map(f64::abs)).collect();
    let (msr, mdsr) = if sr.is_empty() {
        (None, None)
    } else {
        (Some(sr.iter().sum::<f64>() / sr.len() as f64), Some(median(&mut sr)))
    };
    Ok(CvMetrics { n, press, mae, mdae, msr, mdsr })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub model: String,
    pub family: Family,
    pub outcome: String,
    pub terms: Vec<TermSpec>,
    pub metrics: CvMetrics,
    pub excluded: Vec<ExcludedFold>,
    pub pairs: Vec<CvPair>,
}

pub fn cv_report(spec: &ModelSpec, data: &Dataset) -> Result<CvReport, HarnessError> {
    let cv = loocv(spec, data)?;
    Ok(CvReport {
        model: spec.label(),
        family: spec.family,
        outcome: spec.outcome.clone(),
        terms: spec.terms.iter().map(|t| TermSpec::new(&t.name, t.transform)).collect(),
        metrics: metrics(&cv.pairs)?,
        excluded: cv.excluded,
        pairs: cv.pairs,
    })
}

/// Observed-versus-predicted table with the identity reference, error
/// annotations and an axis-trim marker for named cities.
pub fn scatter_csv(report: &CvReport, trimmed: &[&str]) -> String {
    let mut out = String::from("city,observed,predicted,identity,trimmed,mae,mdae\n");
    for p in &report.pairs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.city,
            p.observed,
            p.predicted,
            p.observed,
            trimmed.contains(&p.city.as_str()),
            report.metrics.mae,
            report.metrics.mdae
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceAction {
    /// Starting model from the correlation screen.
    Maximal,
    /// Column removed because the design was rank deficient.
    DropCollinear,
    /// Tentative removal of one term.
    Remove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub action: TraceAction,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub term: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub press: Option<f64>,
    pub accepted: bool,
    /// Terms after this step.
    pub terms: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Screen {
    pub name: String,
    pub r: Option<f64>,
    pub included: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub spec: ModelSpec,
    pub screen: Vec<Screen>,
    pub trace: Vec<TraceStep>,
}

impl Selection {
    /// PRESS of the maximal model followed by every accepted removal.
    pub fn accepted_press(&self) -> Vec<f64> {
        self.trace
            .iter()
            .filter(|s| s.accepted && s.action != TraceAction::DropCollinear)
            .filter_map(|s| s.press)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub family: Family,
    pub outcome: String,
    /// Count predictors screened against the outcome.
    pub candidates: Vec<TermSpec>,
    /// Month-proportion columns screened against included predictors.
    #[serde(default)]
    pub months: Vec<String>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    0.1
}

/// Eleven month columns with December as the omitted reference.
pub fn default_month_candidates() -> Vec<String> {
    (0..11).map(crate::aggregation::month_column).collect()
}

fn column_pairs(data: &Dataset, a: &str, b: &str) -> Result<(Vec<f64>, Vec<f64>), HarnessError> {
    let ca = data.column(a).ok_or_else(|| HarnessError::Spec(format!("dataset has no column `{a}`")))?;
    let cb = data.column(b).ok_or_else(|| HarnessError::Spec(format!("dataset has no column `{b}`")))?;
    Ok(ca.iter().zip(cb).filter_map(|(x, y)| Some(((*x)?, (*y)?))).unzip())
}

/// Month column implicated by a rank failure, if any.
fn collinear_month(err: &HarnessError, months: &[String]) -> Option<String> {
    let cols = match err {
        HarnessError::Stats(StatsError::SingularDesign { columns }) => columns,
        HarnessError::Fold { source: StatsError::SingularDesign { columns }, .. } => columns,
        _ => return None,
    };
    cols.iter().find(|c| months.contains(c)).cloned()
}

/// Correlation screen, then backward elimination: the least significant
/// terms are tried in turn and a removal is kept only if it strictly lowers
/// LOOCV PRESS. At least one term is always kept.
pub fn select_variables(cfg: &SelectionConfig, data: &Dataset) -> Result<Selection, HarnessError> {
    let mut screen = Vec::new();
    let mut terms: Vec<TermSpec> = Vec::new();
    for c in &cfg.candidates {
        let (x, y) = column_pairs(data, &c.name, &cfg.outcome)?;
        let x: Vec<f64> = x.iter().map(|&v| c.transform.apply(&c.name, v)).collect::<Result<_, _>>()?;
        let r = pearson(&x, &y);
        let included = r.is_some_and(|r| r.abs() >= cfg.threshold);
        screen.push(Screen { name: c.name.clone(), r, included });
        if included {
            terms.push(TermSpec::new(&c.name, c.transform));
        }
    }
    if terms.is_empty() {
        return Err(HarnessError::Spec(format!(
            "no candidate reaches |r| >= {} with `{}`",
            cfg.threshold, cfg.outcome
        )));
    }
    let gsv: Vec<TermSpec> = terms.clone();
    for m in &cfg.months {
        let mut best: Option<f64> = None;
        for g in &gsv {
            let (a, b) = column_pairs(data, m, &g.name)?;
            if let Some(r) = pearson(&a, &b) {
                best = Some(best.map_or(r.abs(), |v: f64| v.max(r.abs())));
            }
        }
        let included = best.is_some_and(|r| r >= cfg.threshold);
        screen.push(Screen { name: m.clone(), r: best, included });
        if included {
            terms.push(TermSpec::new(m, Transform::Identity));
        }
    }

    let mut spec = ModelSpec::new(cfg.family, &cfg.outcome, terms);
    let mut trace = Vec::new();
    let names = |s: &ModelSpec| s.terms.iter().map(|t| t.name.clone()).collect::<Vec<_>>();

    // Maximal model, shedding month columns that make it rank deficient.
    let mut press = loop {
        let attempt = loocv(&spec, data).and_then(|cv| Ok((metrics(&cv.pairs)?.press, fit_spec(&spec, data)?)));
        match attempt {
            Ok((press, _)) => break press,
            Err(e) => match collinear_month(&e, &cfg.months) {
                Some(m) if spec.terms.len() > 1 => {
                    spec = spec.without(&m);
                    trace.push(TraceStep {
                        action: TraceAction::DropCollinear,
                        term: Some(m),
                        p_value: None,
                        press: None,
                        accepted: true,
                        terms: names(&spec),
                        note: Some(e.to_string()),
                    });
                }
                _ => return Err(e),
            },
        }
    };
    trace.push(TraceStep {
        action: TraceAction::Maximal,
        term: None,
        p_value: None,
        press: Some(press),
        accepted: true,
        terms: names(&spec),
        note: None,
    });

    while spec.terms.len() > 1 {
        let (fit, _) = fit_spec(&spec, data)?;
        let p = fit.p_values();
        let mut order: Vec<usize> = (0..spec.terms.len()).collect();
        order.sort_by(|&a, &b| p[b + 1].total_cmp(&p[a + 1]).then(a.cmp(&b)));
        let mut removed = false;
        for j in order {
            let name = spec.terms[j].name.clone();
            let trial = spec.without(&name);
            let outcome = loocv(&trial, data).and_then(|cv| metrics(&cv.pairs));
            let (trial_press, note) = match outcome {
                Ok(m) => (Some(m.press), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let accepted = trial_press.is_some_and(|t| t < press);
            trace.push(TraceStep {
                action: TraceAction::Remove,
                term: Some(name),
                p_value: Some(p[j + 1]),
                press: trial_press,
                accepted,
                terms: names(if accepted { &trial } else { &spec }),
                note,
            });
            if accepted {
                press = trial_press.expect("accepted");
                spec = trial;
                removed = true;
                break;
            }
        }
        if !removed {
            break;
        }
    }
    Ok(Selection { spec, screen, trace })
}

/// Intercept name used in fit summaries.
pub const INTERCEPT_NAME: &str = INTERCEPT;
