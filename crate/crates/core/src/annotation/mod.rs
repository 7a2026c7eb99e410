//! Human annotation of sampled images: questionnaire types, the leasing task
//! queue with its append-only event log, inter-rater agreement and gender
//! reconciliation.

mod export;
mod log;
mod queue;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use export::{gender_rows, read_annotations_csv, read_tasks_csv, write_annotations_csv, write_gender_csv, write_tasks_csv, GenderRow};
pub use log::{Event, EventLog, JsonlLog, MemoryLog};
pub use queue::{AnnotationQueue, FlagRequest, GenderSubmission, Progress, QueueConfig, QueueSnapshot, TaskPayload};

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("unknown annotator `{0}`")]
    Auth(String),
    #[error("unknown image `{0}`")]
    NotFound(String),
    #[error("invalid submission: {0}")]
    Validation(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("no images rated by both annotators")]
    EmptyOverlap,
    #[error("kappa undefined: expected agreement is 1 but observed agreement is not")]
    KappaUndefined,
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("event log: {0}")]
    Io(#[from] std::io::Error),
    #[error("event log line {line}: {source}")]
    Corrupt {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Pedestrians,
    Cyclists,
    ParkedCycles,
    Cars,
    Buses,
    Motorcycles,
    VansTrucks,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Pedestrians,
        Category::Cyclists,
        Category::ParkedCycles,
        Category::Cars,
        Category::Buses,
        Category::Motorcycles,
        Category::VansTrucks,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Pedestrians => "pedestrians",
            Category::Cyclists => "cyclists",
            Category::ParkedCycles => "parked_cycles",
            Category::Cars => "cars",
            Category::Buses => "buses",
            Category::Motorcycles => "motorcycles",
            Category::VansTrucks => "vans_trucks",
        }
    }

    /// Column name in `annotations.csv`.
    pub fn csv_column(self) -> &'static str {
        match self {
            Category::Pedestrians => "ped_bin",
            Category::Cyclists => "cyc_bin",
            Category::ParkedCycles => "pcyc_bin",
            Category::Cars => "car_bin",
            Category::Buses => "bus_bin",
            Category::Motorcycles => "mc_bin",
            Category::VansTrucks => "van_bin",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = AnnotationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| AnnotationError::Validation(format!("unknown category `{s}`")))
    }
}

/// Count bins of the questionnaire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bin {
    #[serde(rename = "0")]
    Zero,
    #[serde(rename = "1-3")]
    OneToThree,
    #[serde(rename = "4-6")]
    FourToSix,
    #[serde(rename = ">6")]
    MoreThanSix,
}

impl Bin {
    pub const ALL: [Bin; 4] = [Bin::Zero, Bin::OneToThree, Bin::FourToSix, Bin::MoreThanSix];

    pub fn as_str(self) -> &'static str {
        match self {
            Bin::Zero => "0",
            Bin::OneToThree => "1-3",
            Bin::FourToSix => "4-6",
            Bin::MoreThanSix => ">6",
        }
    }

    pub fn present(self) -> bool {
        self != Bin::Zero
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for Bin {
    type Err = AnnotationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Bin::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| AnnotationError::Validation(format!("unknown bin `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Counts,
    Gender,
}

impl FromStr for TaskKind {
    type Err = AnnotationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "counts" => Ok(TaskKind::Counts),
            "gender" => Ok(TaskKind::Gender),
            _ => Err(AnnotationError::Validation(format!("unknown task kind `{s}`"))),
        }
    }
}

/// One image to annotate. `year`/`month` come from the panorama date.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub image_id: String,
    pub city_id: String,
    pub locator: String,
    pub year: i32,
    pub month: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAnnotation {
    pub image_id: String,
    pub annotator_id: String,
    #[serde(default)]
    pub bins: BTreeMap<Category, Bin>,
    #[serde(default)]
    pub flagged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// Assigned by the queue when absent.
    #[serde(default)]
    pub ts: Option<DateTime<Utc>>,
}

impl ImageAnnotation {
    pub fn bin(&self, c: Category) -> Option<Bin> {
        self.bins.get(&c).copied()
    }

    pub fn validate(&self) -> Result<(), AnnotationError> {
        if self.image_id.is_empty() || self.annotator_id.is_empty() {
            return Err(AnnotationError::Validation("image_id and annotator_id are required".into()));
        }
        if self.flagged {
            return Ok(());
        }
        let missing: Vec<&str> = Category::ALL
            .iter()
            .filter(|c| !self.bins.contains_key(c))
            .map(|c| c.as_str())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(AnnotationError::Validation(format!("missing bins for {}", missing.join(", "))))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenderLabel {
    Male,
    Female,
    Child,
    Unknown,
}

impl GenderLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            GenderLabel::Male => "male",
            GenderLabel::Female => "female",
            GenderLabel::Child => "child",
            GenderLabel::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenderJudgment {
    pub image_id: String,
    pub cyclist_index: u32,
    pub annotator_id: String,
    pub label: GenderLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolved {
    Male,
    Female,
    Child,
    Excluded,
}

impl Resolved {
    pub fn as_str(self) -> &'static str {
        match self {
            Resolved::Male => "male",
            Resolved::Female => "female",
            Resolved::Child => "child",
            Resolved::Excluded => "excluded",
        }
    }
}

/// Resolves one cyclist from exactly two judgments, falling back to the
/// joint consensus label when they disagree.
pub fn reconcile_gender(judgments: &[GenderJudgment], consensus: Option<GenderLabel>) -> Result<Resolved, AnnotationError> {
    let [a, b] = judgments else {
        return Err(AnnotationError::Protocol(format!("expected 2 judgments, got {}", judgments.len())));
    };
    if a.image_id != b.image_id || a.cyclist_index != b.cyclist_index {
        return Err(AnnotationError::Protocol("judgments refer to different cyclists".into()));
    }
    if a.annotator_id == b.annotator_id {
        return Err(AnnotationError::Protocol("both judgments from the same annotator".into()));
    }
    let label = if a.label == b.label { Some(a.label) } else { consensus };
    Ok(match label {
        Some(GenderLabel::Male) => Resolved::Male,
        Some(GenderLabel::Female) => Resolved::Female,
        Some(GenderLabel::Child) => Resolved::Child,
        Some(GenderLabel::Unknown) | None => Resolved::Excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub category: Option<Category>,
    pub percent_agreement: f64,
    pub cohen_kappa: f64,
    pub n_items: usize,
}

/// Agreement between two raters on the images both of them labeled.
pub fn agreement(
    category: Option<Category>,
    ratings_a: &BTreeMap<String, Bin>,
    ratings_b: &BTreeMap<String, Bin>,
) -> Result<AgreementStats, AnnotationError> {
    let mut table = [[0u64; 4]; 4];
    for (image, a) in ratings_a {
        if let Some(b) = ratings_b.get(image) {
            table[a.index()][b.index()] += 1;
        }
    }
    let rows: Vec<Vec<u64>> = table.iter().map(|r| r.to_vec()).collect();
    let (n, p_o, kappa) = kappa_from_table(&rows)?;
    Ok(AgreementStats { category, percent_agreement: p_o, cohen_kappa: kappa, n_items: n as usize })
}

/// Cohen's kappa from a square confusion table (rows rater A, columns rater
/// B), computed in integers as (n·Σ n_kk − Σ r_k c_k) / (n² − Σ r_k c_k).
/// Returns (n, percent agreement, kappa).
pub fn kappa_from_table(table: &[Vec<u64>]) -> Result<(u64, f64, f64), AnnotationError> {
    let k = table.len();
    if table.iter().any(|r| r.len() != k) {
        return Err(AnnotationError::Validation("confusion table must be square".into()));
    }
    let n: u64 = table.iter().flatten().sum();
    if n == 0 {
        return Err(AnnotationError::EmptyOverlap);
    }
    let agree: u64 = (0..k).map(|i| table[i][i]).sum();
    let chance: u128 = (0..k)
        .map(|i| {
            let r: u64 = table[i].iter().sum();
            let c: u64 = table.iter().map(|row| row[i]).sum();
            r as u128 * c as u128
        })
        .sum();
    let n2 = n as u128 * n as u128;
    let p_o = agree as f64 / n as f64;
    let denom = n2 - chance;
    if denom == 0 {
        return if agree == n { Ok((n, p_o, 1.0)) } else { Err(AnnotationError::KappaUndefined) };
    }
    let num = n as i128 * agree as i128 - chance as i128;
    Ok((n, p_o, num as f64 / denom as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn j(annotator: &str, label: GenderLabel) -> GenderJudgment {
        GenderJudgment { image_id: "img".into(), cyclist_index: 1, annotator_id: annotator.into(), label }
    }

    #[test]
    fn reconcile_rules() {
        use GenderLabel::*;
        assert_eq!(reconcile_gender(&[j("a", Male), j("b", Male)], None).unwrap(), Resolved::Male);
        assert_eq!(reconcile_gender(&[j("a", Male), j("b", Female)], None).unwrap(), Resolved::Excluded);
        assert_eq!(reconcile_gender(&[j("a", Male), j("b", Female)], Some(Female)).unwrap(), Resolved::Female);
        assert_eq!(reconcile_gender(&[j("a", Child), j("b", Child)], None).unwrap(), Resolved::Child);
        assert_eq!(reconcile_gender(&[j("a", Unknown), j("b", Unknown)], None).unwrap(), Resolved::Excluded);
        assert!(matches!(reconcile_gender(&[j("a", Male)], None), Err(AnnotationError::Protocol(_))));
    }

    #[test]
    fn kappa_two_by_two() {
        let (n, p_o, k) = kappa_from_table(&[vec![20, 5], vec![10, 15]]).unwrap();
        assert_eq!(n, 50);
        assert_eq!(p_o, 0.7);
        assert_eq!(k, 0.4);
    }

    #[test]
    fn kappa_degenerate_marginals() {
        assert_eq!(kappa_from_table(&[vec![7, 0], vec![0, 0]]).unwrap().2, 1.0);
        assert!(matches!(kappa_from_table(&[vec![0, 0], vec![0, 0]]), Err(AnnotationError::EmptyOverlap)));
    }

    #[test]
    fn agreement_requires_overlap() {
        let a = BTreeMap::from([("x".to_string(), Bin::Zero)]);
        let b = BTreeMap::from([("y".to_string(), Bin::Zero)]);
        assert!(matches!(agreement(None, &a, &b), Err(AnnotationError::EmptyOverlap)));
    }

    #[test]
    fn unflagged_requires_all_bins() {
        let mut ann = ImageAnnotation {
            image_id: "i".into(),
            annotator_id: "a".into(),
            bins: Category::ALL.iter().map(|&c| (c, Bin::Zero)).collect(),
            flagged: false,
            reason: None,
            ts: None,
        };
        ann.validate().unwrap();
        ann.bins.remove(&Category::Buses);
        assert!(ann.validate().is_err());
        ann.flagged = true;
        ann.validate().unwrap();
    }

    #[test]
    fn bin_json_labels() {
        assert_eq!(serde_json::to_string(&Bin::MoreThanSix).unwrap(), "\">6\"");
        let b: Bin = serde_json::from_str("\"1-3\"").unwrap();
        assert_eq!(b, Bin::OneToThree);
    }
}
