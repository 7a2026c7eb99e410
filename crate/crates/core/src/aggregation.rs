//! Per-city predictors and outcomes.
//!
//! Count bins collapse to presence: a city's `gsv_cycle` is the number of its
//! images with at least one cyclist. Census commute counts become mode
//! shares over commuters who do not work from home, and survey measures are
//! split into all-purpose and utility activity.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{AnnotationTask, Category, ImageAnnotation};

pub const MONTHS: [&str; 12] = ["jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec"];
pub const SEASONS: [&str; 4] = ["spring", "summer", "autumn", "winter"];

/// Predictor columns in dataset order.
pub const GSV_PREDICTORS: [&str; 6] = ["gsv_walk", "gsv_cycle", "gsv_pcycle", "gsv_car", "gsv_bus", "gsv_mc"];

pub const CENSUS_COLUMNS: [&str; 6] = ["census_walk", "census_cycle", "census_mc", "census_bus", "census_pt_walk", "census_car"];

pub const APS_COLUMNS: [&str; 12] = [
    "aps_prev_all_cycle",
    "aps_days_all_cycle",
    "aps_hours_all_cycle",
    "aps_prev_utly_cycle",
    "aps_days_utly_cycle",
    "aps_hours_utly_cycle",
    "aps_prev_all_walk",
    "aps_days_all_walk",
    "aps_hours_all_walk",
    "aps_prev_utly_walk",
    "aps_days_utly_walk",
    "aps_hours_utly_walk",
];

pub const RATIO_COLUMNS: [&str; 3] = ["census_cycle_mf", "aps_prev_all_cycle_mf", "aps_prev_utly_cycle_mf"];

#[derive(Debug, Error)]
pub enum AggregationError {
    #[error("integrity: {0}")]
    Integrity(String),
    #[error("city `{0}` has no usable images")]
    NoImages(String),
    #[error("city `{0}` has no commuters outside work-from-home")]
    DegenerateCity(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

pub fn month_column(m: usize) -> String {
    format!("gsv_{}", MONTHS[m])
}

/// 0 spring (Mar–May), 1 summer (Jun–Aug), 2 autumn (Sep–Nov), 3 winter.
pub fn season_of(month: u8) -> usize {
    match month {
        3..=5 => 0,
        6..=8 => 1,
        9..=11 => 2,
        _ => 3,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityCounts {
    pub city_id: String,
    pub n_images: u32,
    pub gsv_walk: u32,
    pub gsv_cycle: u32,
    pub gsv_pcycle: u32,
    pub gsv_car: u32,
    pub gsv_bus: u32,
    pub gsv_mc: u32,
    /// Reported only; never a model predictor.
    pub gsv_van: u32,
    pub month_props: [f64; 12],
    pub season_props: [f64; 4],
}

impl CityCounts {
    pub fn predictor(&self, name: &str) -> Option<u32> {
        Some(match name {
            "gsv_walk" => self.gsv_walk,
            "gsv_cycle" => self.gsv_cycle,
            "gsv_pcycle" => self.gsv_pcycle,
            "gsv_car" => self.gsv_car,
            "gsv_bus" => self.gsv_bus,
            "gsv_mc" => self.gsv_mc,
            _ => return None,
        })
    }
}

/// Presence counts and month/season profile for one city from the first
/// response per image. Flagged images are dropped.
pub fn collapse_counts(
    city_id: &str,
    annotations: &[ImageAnnotation],
    images: &HashMap<String, AnnotationTask>,
) -> Result<CityCounts, AggregationError> {
    let mut seen = HashSet::new();
    let mut c = CityCounts {
        city_id: city_id.to_string(),
        n_images: 0,
        gsv_walk: 0,
        gsv_cycle: 0,
        gsv_pcycle: 0,
        gsv_car: 0,
        gsv_bus: 0,
        gsv_mc: 0,
        gsv_van: 0,
        month_props: [0.0; 12],
        season_props: [0.0; 4],
    };
    let mut months = [0u32; 12];
    for a in annotations {
        let task = images
            .get(&a.image_id)
            .ok_or_else(|| AggregationError::Integrity(format!("annotation for unknown image `{}`", a.image_id)))?;
        if task.city_id != city_id {
            return Err(AggregationError::Integrity(format!(
                "image `{}` belongs to `{}`, not `{city_id}`",
                a.image_id, task.city_id
            )));
        }
        if !seen.insert(a.image_id.as_str()) || a.flagged {
            continue;
        }
        if !(1..=12).contains(&task.month) {
            return Err(AggregationError::Integrity(format!("image `{}` has month {}", a.image_id, task.month)));
        }
        let has = |cat| a.bin(cat).is_some_and(|b| b.present()) as u32;
        c.n_images += 1;
        c.gsv_walk += has(Category::Pedestrians);
        c.gsv_cycle += has(Category::Cyclists);
        c.gsv_pcycle += has(Category::ParkedCycles);
        c.gsv_car += has(Category::Cars);
        c.gsv_bus += has(Category::Buses);
        c.gsv_mc += has(Category::Motorcycles);
        c.gsv_van += has(Category::VansTrucks);
        months[task.month as usize - 1] += 1;
    }
    if c.n_images == 0 {
        return Err(AggregationError::NoImages(city_id.to_string()));
    }
    let n = c.n_images as f64;
    for (m, &k) in months.iter().enumerate() {
        c.month_props[m] = k as f64 / n;
        c.season_props[season_of(m as u8 + 1)] += k as f64;
    }
    for s in &mut c.season_props {
        *s /= n;
    }
    Ok(c)
}

/// [`collapse_counts`] for every city with tasks, ordered by city id.
pub fn collapse_all(annotations: &[ImageAnnotation], tasks: &[AnnotationTask]) -> Result<Vec<CityCounts>, AggregationError> {
    let mut images = HashMap::with_capacity(tasks.len());
    for t in tasks {
        if images.insert(t.image_id.clone(), t.clone()).is_some() {
            return Err(AggregationError::Integrity(format!("duplicate image `{}` in task list", t.image_id)));
        }
    }
    let mut by_city: BTreeMap<&str, Vec<ImageAnnotation>> = BTreeMap::new();
    for t in tasks {
        by_city.entry(&t.city_id).or_default();
    }
    for a in annotations {
        let task = images
            .get(&a.image_id)
            .ok_or_else(|| AggregationError::Integrity(format!("annotation for unknown image `{}`", a.image_id)))?;
        by_city.get_mut(task.city_id.as_str()).expect("city registered").push(a.clone());
    }
    by_city
        .into_iter()
        .map(|(city, anns)| collapse_counts(city, &anns, &images))
        .collect()
}

/// Commuter counts for one area and sex.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CensusCounts {
    pub walk: f64,
    pub bus: f64,
    pub train: f64,
    pub underground: f64,
    pub car_driver: f64,
    pub car_passenger: f64,
    pub taxi: f64,
    pub cycle: f64,
    pub motorcycle: f64,
    pub other: f64,
    pub wfh: f64,
}

impl CensusCounts {
    fn fields(&self) -> [f64; 11] {
        [
            self.walk,
            self.bus,
            self.train,
            self.underground,
            self.car_driver,
            self.car_passenger,
            self.taxi,
            self.cycle,
            self.motorcycle,
            self.other,
            self.wfh,
        ]
    }

    /// Commuters excluding those working from home.
    pub fn denominator(&self) -> f64 {
        self.fields()[..10].iter().sum()
    }

    fn add(&mut self, o: &CensusCounts) {
        self.walk += o.walk;
        self.bus += o.bus;
        self.train += o.train;
        self.underground += o.underground;
        self.car_driver += o.car_driver;
        self.car_passenger += o.car_passenger;
        self.taxi += o.taxi;
        self.cycle += o.cycle;
        self.motorcycle += o.motorcycle;
        self.other += o.other;
        self.wfh += o.wfh;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusOutcomes {
    pub city_id: String,
    pub walk: f64,
    pub cycle: f64,
    pub motorcycle: f64,
    pub bus: f64,
    pub pt_walk: f64,
    pub car: f64,
    /// Male cycle share over female cycle share.
    pub cycle_mf_ratio: Option<f64>,
}

impl CensusOutcomes {
    pub fn columns(&self) -> [(&'static str, f64); 6] {
        [
            ("census_walk", self.walk),
            ("census_cycle", self.cycle),
            ("census_mc", self.motorcycle),
            ("census_bus", self.bus),
            ("census_pt_walk", self.pt_walk),
            ("census_car", self.car),
        ]
    }
}

pub fn census_mode_shares(
    city_id: &str,
    total: &CensusCounts,
    male: Option<&CensusCounts>,
    female: Option<&CensusCounts>,
) -> Result<CensusOutcomes, AggregationError> {
    for c in [Some(total), male, female].into_iter().flatten() {
        if c.fields().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(AggregationError::Validation(format!("negative or non-finite census count for `{city_id}`")));
        }
    }
    let d = total.denominator();
    if d <= 0.0 {
        return Err(AggregationError::DegenerateCity(city_id.to_string()));
    }
    let cycle_share = |c: &CensusCounts| {
        let d = c.denominator();
        (d > 0.0).then(|| c.cycle / d)
    };
    let cycle_mf_ratio = match (male.and_then(cycle_share), female.and_then(cycle_share)) {
        (Some(m), Some(f)) if f > 0.0 => Some(m / f),
        _ => None,
    };
    Ok(CensusOutcomes {
        city_id: city_id.to_string(),
        walk: total.walk / d,
        cycle: total.cycle / d,
        motorcycle: total.motorcycle / d,
        bus: total.bus / d,
        pt_walk: (total.walk + total.bus + total.underground + total.train) / d,
        car: (total.car_driver + total.car_passenger + total.taxi) / d,
        cycle_mf_ratio,
    })
}

#[derive(Debug, Clone, Deserialize)]
struct CensusRow {
    city_id: String,
    sex: String,
    walk: f64,
    bus: f64,
    train: f64,
    underground: f64,
    car_driver: f64,
    car_passenger: f64,
    taxi: f64,
    cycle: f64,
    motorcycle: f64,
    other: f64,
    wfh: f64,
}

impl CensusRow {
    fn counts(&self) -> CensusCounts {
        CensusCounts {
            walk: self.walk,
            bus: self.bus,
            train: self.train,
            underground: self.underground,
            car_driver: self.car_driver,
            car_passenger: self.car_passenger,
            taxi: self.taxi,
            cycle: self.cycle,
            motorcycle: self.motorcycle,
            other: self.other,
            wfh: self.wfh,
        }
    }
}

/// Reads `census.csv` (one row per local authority and sex, `sex` being
/// `male`, `female` or `all`) and sums to city level before computing
/// shares. Without `all` rows the total is male + female.
pub fn read_census_csv<R: io::Read>(input: R) -> Result<BTreeMap<String, CensusOutcomes>, AggregationError> {
    #[derive(Default)]
    struct Acc {
        male: Option<CensusCounts>,
        female: Option<CensusCounts>,
        all: Option<CensusCounts>,
    }
    let mut acc: BTreeMap<String, Acc> = BTreeMap::new();
    let mut r = csv::Reader::from_reader(input);
    for row in r.deserialize() {
        let row: CensusRow = row?;
        let a = acc.entry(row.city_id.clone()).or_default();
        let slot = match row.sex.as_str() {
            "male" => &mut a.male,
            "female" => &mut a.female,
            "all" => &mut a.all,
            s => return Err(AggregationError::Validation(format!("sex must be male, female or all, got `{s}`"))),
        };
        slot.get_or_insert_with(CensusCounts::default).add(&row.counts());
    }
    acc.into_iter()
        .map(|(city, a)| {
            let total = match (a.all, a.male, a.female) {
                (Some(t), _, _) => t,
                (None, m, f) => {
                    let mut t = CensusCounts::default();
                    for c in [m, f].into_iter().flatten() {
                        t.add(&c);
                    }
                    t
                }
            };
            let out = census_mode_shares(&city, &total, a.male.as_ref(), a.female.as_ref())?;
            Ok((city, out))
        })
        .collect()
}

/// Prevalence, days per week and hours per day of one activity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ActivityMeasures {
    pub prev: f64,
    pub days: f64,
    pub hours: f64,
}

/// Survey inputs for one area: all-purpose and recreational measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApsRecord {
    pub city_id: String,
    #[serde(default)]
    pub la_id: String,
    pub sample_size: f64,
    pub prev_all_cycle: f64,
    pub days_all_cycle: f64,
    pub hours_all_cycle: f64,
    pub prev_rec_cycle: f64,
    pub days_rec_cycle: f64,
    pub hours_rec_cycle: f64,
    pub prev_all_walk: f64,
    pub days_all_walk: f64,
    pub hours_all_walk: f64,
    pub prev_rec_walk: f64,
    pub days_rec_walk: f64,
    pub hours_rec_walk: f64,
    pub prev_all_cycle_m: f64,
    pub prev_all_cycle_f: f64,
    pub prev_rec_cycle_m: f64,
    pub prev_rec_cycle_f: f64,
}

impl ApsRecord {
    fn values(&self) -> [f64; 16] {
        [
            self.prev_all_cycle,
            self.days_all_cycle,
            self.hours_all_cycle,
            self.prev_rec_cycle,
            self.days_rec_cycle,
            self.hours_rec_cycle,
            self.prev_all_walk,
            self.days_all_walk,
            self.hours_all_walk,
            self.prev_rec_walk,
            self.days_rec_walk,
            self.hours_rec_walk,
            self.prev_all_cycle_m,
            self.prev_all_cycle_f,
            self.prev_rec_cycle_m,
            self.prev_rec_cycle_f,
        ]
    }

    fn from_values(city_id: String, sample_size: f64, v: [f64; 16]) -> Self {
        Self {
            city_id,
            la_id: String::new(),
            sample_size,
            prev_all_cycle: v[0],
            days_all_cycle: v[1],
            hours_all_cycle: v[2],
            prev_rec_cycle: v[3],
            days_rec_cycle: v[4],
            hours_rec_cycle: v[5],
            prev_all_walk: v[6],
            days_all_walk: v[7],
            hours_all_walk: v[8],
            prev_rec_walk: v[9],
            days_rec_walk: v[10],
            hours_rec_walk: v[11],
            prev_all_cycle_m: v[12],
            prev_all_cycle_f: v[13],
            prev_rec_cycle_m: v[14],
            prev_rec_cycle_f: v[15],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApsOutcomes {
    pub city_id: String,
    pub all_cycle: ActivityMeasures,
    pub utly_cycle: ActivityMeasures,
    pub all_walk: ActivityMeasures,
    pub utly_walk: ActivityMeasures,
    pub prev_all_cycle_mf: Option<f64>,
    pub prev_utly_cycle_mf: Option<f64>,
}

impl ApsOutcomes {
    /// Values in [`APS_COLUMNS`] order.
    pub fn columns(&self) -> [(&'static str, f64); 12] {
        let m = [self.all_cycle, self.utly_cycle, self.all_walk, self.utly_walk];
        let mut out = [("", 0.0); 12];
        for (i, a) in m.iter().enumerate() {
            out[3 * i] = (APS_COLUMNS[3 * i], a.prev);
            out[3 * i + 1] = (APS_COLUMNS[3 * i + 1], a.days);
            out[3 * i + 2] = (APS_COLUMNS[3 * i + 2], a.hours);
        }
        out
    }
}

fn utility(city: &str, what: &str, all: f64, rec: f64) -> f64 {
    if rec > all {
        log::warn!("{city}: recreational {what} {rec} exceeds all-purpose {all}; utility clamped to 0");
        0.0
    } else {
        all - rec
    }
}

/// Utility activity as all-purpose minus recreational, clamped at zero.
pub fn aps_measures(r: &ApsRecord) -> Result<ApsOutcomes, AggregationError> {
    if let Some(v) = r.values().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(AggregationError::Validation(format!("negative or non-finite survey value {v} for `{}`", r.city_id)));
    }
    let c = r.city_id.as_str();
    let all_cycle = ActivityMeasures { prev: r.prev_all_cycle, days: r.days_all_cycle, hours: r.hours_all_cycle };
    let all_walk = ActivityMeasures { prev: r.prev_all_walk, days: r.days_all_walk, hours: r.hours_all_walk };
    let utly_cycle = ActivityMeasures {
        prev: utility(c, "cycling prevalence", r.prev_all_cycle, r.prev_rec_cycle),
        days: utility(c, "cycling days", r.days_all_cycle, r.days_rec_cycle),
        hours: utility(c, "cycling hours", r.hours_all_cycle, r.hours_rec_cycle),
    };
    let utly_walk = ActivityMeasures {
        prev: utility(c, "walking prevalence", r.prev_all_walk, r.prev_rec_walk),
        days: utility(c, "walking days", r.days_all_walk, r.days_rec_walk),
        hours: utility(c, "walking hours", r.hours_all_walk, r.hours_rec_walk),
    };
    let ratio = |m: f64, f: f64| (f > 0.0).then(|| m / f);
    let utly_m = utility(c, "male cycling prevalence", r.prev_all_cycle_m, r.prev_rec_cycle_m);
    let utly_f = utility(c, "female cycling prevalence", r.prev_all_cycle_f, r.prev_rec_cycle_f);
    Ok(ApsOutcomes {
        city_id: r.city_id.clone(),
        all_cycle,
        utly_cycle,
        all_walk,
        utly_walk,
        prev_all_cycle_mf: ratio(r.prev_all_cycle_m, r.prev_all_cycle_f),
        prev_utly_cycle_mf: ratio(utly_m, utly_f),
    })
}

/// Reads per-area survey rows and combines them per city as
/// sample-size-weighted means.
pub fn read_aps_csv<R: io::Read>(input: R) -> Result<BTreeMap<String, ApsOutcomes>, AggregationError> {
    let mut acc: BTreeMap<String, (f64, [f64; 16])> = BTreeMap::new();
    let mut r = csv::Reader::from_reader(input);
    for row in r.deserialize() {
        let row: ApsRecord = row?;
        if !(row.sample_size.is_finite() && row.sample_size > 0.0) {
            return Err(AggregationError::Validation(format!("sample_size must be positive for `{}`", row.city_id)));
        }
        let e = acc.entry(row.city_id.clone()).or_insert((0.0, [0.0; 16]));
        e.0 += row.sample_size;
        for (s, v) in e.1.iter_mut().zip(row.values()) {
            *s += row.sample_size * v;
        }
    }
    acc.into_iter()
        .map(|(city, (w, sums))| {
            let rec = ApsRecord::from_values(city.clone(), w, sums.map(|s| s / w));
            Ok((city, aps_measures(&rec)?))
        })
        .collect()
}

/// Sample standard deviation over mean.
pub fn coefficient_of_variation(values: &[f64]) -> Result<f64, AggregationError> {
    if values.len() < 2 {
        return Err(AggregationError::Validation("coefficient of variation needs at least two values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Err(AggregationError::Undefined("coefficient of variation with zero mean".into()));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(var.sqrt() / mean)
}

/// Moves proportions off {0, 1} with (y(n − 1) + 0.5)/n, applied to the
/// whole vector and only when some value sits on the boundary.
pub fn nudge_boundary(y: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    if y.iter().all(|&v| v > 0.0 && v < 1.0) {
        y.to_vec()
    } else {
        y.iter().map(|&v| (v * (n - 1.0) + 0.5) / n).collect()
    }
}

/// One row per city, named columns, missing cells as `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    cities: Vec<String>,
    names: Vec<String>,
    columns: Vec<Vec<Option<f64>>>,
}

impl Dataset {
    pub fn new(cities: Vec<String>) -> Result<Self, AggregationError> {
        let mut seen = HashSet::new();
        if let Some(d) = cities.iter().find(|c| !seen.insert(c.as_str())) {
            return Err(AggregationError::Integrity(format!("duplicate city `{d}`")));
        }
        Ok(Self { cities, names: Vec::new(), columns: Vec::new() })
    }

    pub fn push_column(&mut self, name: &str, values: Vec<Option<f64>>) -> Result<(), AggregationError> {
        if values.len() != self.cities.len() {
            return Err(AggregationError::Integrity(format!("column `{name}` has {} rows", values.len())));
        }
        if self.names.iter().any(|n| n == name) {
            return Err(AggregationError::Integrity(format!("duplicate column `{name}`")));
        }
        self.names.push(name.to_string());
        self.columns.push(values);
        Ok(())
    }

    pub fn cities(&self) -> &[String] {
        &self.cities
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn nrows(&self) -> usize {
        self.cities.len()
    }

    pub fn column(&self, name: &str) -> Option<&[Option<f64>]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    /// Row indices where every named column is present.
    pub fn complete_rows(&self, names: &[&str]) -> Result<Vec<usize>, AggregationError> {
        let cols: Vec<&[Option<f64>]> = names
            .iter()
            .map(|n| self.column(n).ok_or_else(|| AggregationError::Integrity(format!("no column `{n}`"))))
            .collect::<Result<_, _>>()?;
        Ok((0..self.nrows()).filter(|&i| cols.iter().all(|c| c[i].is_some())).collect())
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), AggregationError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["city_id".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (i, city) in self.cities.iter().enumerate() {
            let mut rec = vec![city.clone()];
            rec.extend(self.columns.iter().map(|c| c[i].map_or(String::new(), |v| v.to_string())));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: io::Read>(input: R) -> Result<Self, AggregationError> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.get(0) != Some("city_id") {
            return Err(AggregationError::Validation("dataset must start with a city_id column".into()));
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut cities = Vec::new();
        let mut columns = vec![Vec::new(); names.len()];
        for rec in r.records() {
            let rec = rec?;
            cities.push(rec[0].to_string());
            for (j, col) in columns.iter_mut().enumerate() {
                let cell = rec.get(j + 1).unwrap_or("").trim();
                col.push(if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
                    None
                } else {
                    Some(cell.parse::<f64>().map_err(|_| {
                        AggregationError::Validation(format!("`{cell}` in column `{}` is not a number", names[j]))
                    })?)
                });
            }
        }
        let mut ds = Dataset::new(cities)?;
        for (n, c) in names.iter().zip(columns) {
            ds.push_column(n, c)?;
        }
        Ok(ds)
    }
}

/// Joins predictors with outcomes. Every counted city needs Census
/// outcomes; survey outcomes may be absent and stay missing.
pub fn build_dataset(
    counts: &[CityCounts],
    census: &BTreeMap<String, CensusOutcomes>,
    aps: &BTreeMap<String, ApsOutcomes>,
) -> Result<Dataset, AggregationError> {
    if counts.is_empty() {
        return Err(AggregationError::Integrity("no cities to join".into()));
    }
    let cities: Vec<String> = counts.iter().map(|c| c.city_id.clone()).collect();
    let mut ds = Dataset::new(cities.clone())?;
    let known: HashSet<&str> = cities.iter().map(String::as_str).collect();
    for city in census.keys().chain(aps.keys()) {
        if !known.contains(city.as_str()) {
            return Err(AggregationError::Integrity(format!("outcomes for `{city}` without image counts")));
        }
    }
    let census_rows: Vec<&CensusOutcomes> = cities
        .iter()
        .map(|c| census.get(c).ok_or_else(|| AggregationError::Integrity(format!("no Census outcomes for `{c}`"))))
        .collect::<Result<_, _>>()?;

    ds.push_column("n_images", counts.iter().map(|c| Some(c.n_images as f64)).collect())?;
    for p in GSV_PREDICTORS {
        ds.push_column(p, counts.iter().map(|c| c.predictor(p).map(f64::from)).collect())?;
    }
    for m in 0..12 {
        ds.push_column(&month_column(m), counts.iter().map(|c| Some(c.month_props[m])).collect())?;
    }
    for (j, name) in CENSUS_COLUMNS.iter().enumerate() {
        ds.push_column(name, census_rows.iter().map(|c| Some(c.columns()[j].1)).collect())?;
    }
    for (j, name) in APS_COLUMNS.iter().enumerate() {
        ds.push_column(name, cities.iter().map(|c| aps.get(c).map(|a| a.columns()[j].1)).collect())?;
    }
    ds.push_column(RATIO_COLUMNS[0], census_rows.iter().map(|c| c.cycle_mf_ratio).collect())?;
    ds.push_column(RATIO_COLUMNS[1], cities.iter().map(|c| aps.get(c).and_then(|a| a.prev_all_cycle_mf)).collect())?;
    ds.push_column(RATIO_COLUMNS[2], cities.iter().map(|c| aps.get(c).and_then(|a| a.prev_utly_cycle_mf)).collect())?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::Bin;

    fn task(id: &str, city: &str, month: u8) -> AnnotationTask {
        AnnotationTask { image_id: id.into(), city_id: city.into(), locator: String::new(), year: 2011, month }
    }

    fn ann(id: &str, ped: Bin) -> ImageAnnotation {
        let mut bins: BTreeMap<Category, Bin> = Category::ALL.iter().map(|&c| (c, Bin::Zero)).collect();
        bins.insert(Category::Pedestrians, ped);
        ImageAnnotation { image_id: id.into(), annotator_id: "a".into(), bins, flagged: false, reason: None, ts: None }
    }

    #[test]
    fn presence_rule_and_seasons() {
        let tasks = [task("i1", "c", 6), task("i2", "c", 6), task("i3", "c", 6), task("i4", "c", 10)];
        let images: HashMap<_, _> = tasks.iter().map(|t| (t.image_id.clone(), t.clone())).collect();
        let anns = [ann("i1", Bin::OneToThree), ann("i2", Bin::Zero), ann("i3", Bin::MoreThanSix), ann("i4", Bin::Zero)];
        let c = collapse_counts("c", &anns, &images).unwrap();
        assert_eq!(c.gsv_walk, 2);
        assert_eq!(c.season_props, [0.0, 0.75, 0.25, 0.0]);
        assert!((c.month_props.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_annotations_is_an_error() {
        assert!(matches!(collapse_counts("c", &[], &HashMap::new()), Err(AggregationError::NoImages(_))));
    }

    #[test]
    fn unknown_image_is_integrity_error() {
        let r = collapse_counts("c", &[ann("zz", Bin::Zero)], &HashMap::new());
        assert!(matches!(r, Err(AggregationError::Integrity(_))));
    }

    #[test]
    fn census_arithmetic() {
        let c = CensusCounts {
            walk: 10.0,
            bus: 5.0,
            train: 5.0,
            underground: 0.0,
            car_driver: 70.0,
            car_passenger: 0.0,
            taxi: 2.0,
            cycle: 5.0,
            motorcycle: 1.0,
            other: 2.0,
            wfh: 20.0,
        };
        assert_eq!(c.denominator(), 100.0);
        let o = census_mode_shares("x", &c, None, None).unwrap();
        assert!((o.pt_walk - 0.20).abs() < 1e-15);
        assert!((o.car - 0.72).abs() < 1e-15);
        assert!((o.cycle - 0.05).abs() < 1e-15);
        assert!((o.motorcycle - 0.01).abs() < 1e-15);
        let wfh = CensusCounts { wfh: 9.0, ..Default::default() };
        assert!(matches!(census_mode_shares("w", &wfh, None, None), Err(AggregationError::DegenerateCity(_))));
    }

    #[test]
    fn census_ratio_from_sex_specific_shares() {
        let m = CensusCounts { cycle: 4.0, car_driver: 96.0, ..Default::default() };
        let f = CensusCounts { cycle: 2.0, car_driver: 98.0, ..Default::default() };
        let mut t = m;
        t.add(&f);
        let o = census_mode_shares("x", &t, Some(&m), Some(&f)).unwrap();
        assert!((o.cycle_mf_ratio.unwrap() - 2.0).abs() < 1e-12);
    }

    fn aps(all_walk: f64, rec_walk: f64) -> ApsRecord {
        let mut v = [0.1; 16];
        v[6] = all_walk;
        v[9] = rec_walk;
        v[12] = 0.2;
        v[13] = 0.1;
        v[14] = 0.0;
        v[15] = 0.0;
        ApsRecord::from_values("c".into(), 10.0, v)
    }

    #[test]
    fn utility_difference_and_clamp() {
        let o = aps_measures(&aps(0.80, 0.30)).unwrap();
        assert!((o.utly_walk.prev - 0.50).abs() < 1e-15);
        assert_eq!(o.prev_all_cycle_mf, Some(2.0));
        let o = aps_measures(&aps(0.80, 0.85)).unwrap();
        assert_eq!(o.utly_walk.prev, 0.0);
        assert!(aps_measures(&aps(-0.1, 0.0)).is_err());
    }

    #[test]
    fn census_csv_sums_areas() {
        let text = "city_id,la_id,sex,walk,bus,train,underground,car_driver,car_passenger,taxi,cycle,motorcycle,other,wfh\n\
                    c,l1,male,5,0,0,0,40,0,0,4,1,0,3\n\
                    c,l2,male,5,0,0,0,40,0,0,4,1,0,3\n\
                    c,l1,female,10,0,0,0,86,0,0,4,0,0,3\n";
        let out = read_census_csv(text.as_bytes()).unwrap();
        let c = &out["c"];
        assert!((c.cycle - 12.0 / 200.0).abs() < 1e-15);
        assert!((c.cycle_mf_ratio.unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn aps_csv_weights_by_sample_size() {
        let head = "city_id,la_id,sample_size,prev_all_cycle,days_all_cycle,hours_all_cycle,prev_rec_cycle,days_rec_cycle,hours_rec_cycle,prev_all_walk,days_all_walk,hours_all_walk,prev_rec_walk,days_rec_walk,hours_rec_walk,prev_all_cycle_m,prev_all_cycle_f,prev_rec_cycle_m,prev_rec_cycle_f";
        let text = format!("{head}\nc,a,100,0.1,1,1,0,0,0,0.5,1,1,0.1,0,0,0.2,0.1,0,0\nc,b,300,0.3,1,1,0,0,0,0.5,1,1,0.1,0,0,0.2,0.1,0,0\n");
        let out = read_aps_csv(text.as_bytes()).unwrap();
        assert!((out["c"].all_cycle.prev - 0.25).abs() < 1e-15);
        assert!((out["c"].utly_walk.prev - 0.4).abs() < 1e-15);
    }

    #[test]
    fn cv_examples() {
        assert_eq!(coefficient_of_variation(&[5.0, 5.0, 5.0]).unwrap(), 0.0);
        assert!((coefficient_of_variation(&[1.0, 2.0, 3.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(coefficient_of_variation(&[]).is_err());
    }

    #[test]
    fn nudge_only_on_boundary() {
        assert_eq!(nudge_boundary(&[0.2, 0.4]), vec![0.2, 0.4]);
        assert_eq!(nudge_boundary(&[0.0, 1.0]), vec![0.25, 0.75]);
    }

    #[test]
    fn dataset_round_trip() {
        let mut ds = Dataset::new(vec!["a".into(), "b".into()]).unwrap();
        ds.push_column("x", vec![Some(0.1), None]).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "city_id,x\na,0.1\nb,\n");
        assert_eq!(Dataset::read_csv(buf.as_slice()).unwrap(), ds);
        assert!(Dataset::new(vec!["a".into(), "a".into()]).is_err());
    }
}
