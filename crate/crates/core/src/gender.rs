//! Male-to-female ratios of observed adult cyclists for groups of cities,
//! set against Census and survey reference ratios.

use std::collections::BTreeMap;
use std::io;

use num_rational::Ratio;
use serde::Serialize;
use thiserror::Error;

use crate::annotation::{GenderRow, Resolved};

#[derive(Debug, Error)]
pub enum GenderError {
    #[error("cannot form {k} groups from {n} cities")]
    TooManyGroups { k: usize, n: usize },
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("reference ratio needs a positive total weight")]
    ZeroWeight,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CityGender {
    pub city_id: String,
    /// Census cycle commute ratio, male over female.
    pub census_ratio: f64,
    pub female: u64,
    pub male: u64,
    pub aps_all_ratio: Option<f64>,
    pub aps_utly_ratio: Option<f64>,
}

impl CityGender {
    pub fn observations(&self) -> u64 {
        self.female + self.male
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenderGroup {
    pub group_id: usize,
    pub cities: Vec<String>,
    pub female: u64,
    pub male: u64,
    #[serde(skip)]
    pub gsv_ratio: Option<Ratio<u64>>,
    pub census_ratio: f64,
    pub aps_all_ratio: Option<f64>,
    pub aps_utly_ratio: Option<f64>,
}

impl GenderGroup {
    pub fn observations(&self) -> u64 {
        self.female + self.male
    }
}

/// Resolved labels in one city's observations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GenderTally {
    pub male: u64,
    pub female: u64,
    pub child: u64,
    pub excluded: u64,
    pub pending: u64,
}

impl GenderTally {
    pub fn judged(&self) -> u64 {
        self.male + self.female + self.child + self.excluded
    }
}

pub fn tally_by_city(rows: &[GenderRow]) -> BTreeMap<String, GenderTally> {
    let mut out: BTreeMap<String, GenderTally> = BTreeMap::new();
    for r in rows {
        let t = out.entry(r.city_id.clone()).or_default();
        match r.resolved {
            Some(Resolved::Male) => t.male += 1,
            Some(Resolved::Female) => t.female += 1,
            Some(Resolved::Child) => t.child += 1,
            Some(Resolved::Excluded) => t.excluded += 1,
            None => t.pending += 1,
        }
    }
    out
}

/// Male over female; `None` when there are no females.
pub fn gsv_group_ratio(male: u64, female: u64) -> Option<Ratio<u64>> {
    (female > 0).then(|| Ratio::new(male, female))
}

/// Two-decimal rendering of an exact ratio, rounding half up.
pub fn format_ratio_2dp(r: &Ratio<u64>) -> String {
    let (num, den) = (*r.numer() as u128, *r.denom() as u128);
    let hundredths = (200 * num + den) / (2 * den);
    format!("{}.{:02}", hundredths / 100, hundredths % 100)
}

/// Σ ratio·n / Σ n.
pub fn weighted_reference_ratio(cities: &[(f64, u64)]) -> Result<f64, GenderError> {
    let total: u64 = cities.iter().map(|c| c.1).sum();
    if total == 0 {
        return Err(GenderError::ZeroWeight);
    }
    if let Some((r, _)) = cities.iter().find(|(r, _)| !r.is_finite()) {
        return Err(GenderError::Validation(format!("non-finite reference ratio {r}")));
    }
    Ok(cities.iter().map(|&(r, n)| r * n as f64).sum::<f64>() / total as f64)
}

#[derive(Debug, Clone, PartialEq)]
struct Candidate {
    sum_sq: u128,
    max_range: f64,
    sum_range: f64,
    cuts: Vec<usize>,
}

impl Candidate {
    fn better_than(&self, other: &Candidate) -> bool {
        self.sum_sq
            .cmp(&other.sum_sq)
            .then(self.max_range.total_cmp(&other.max_range))
            .then(self.sum_range.total_cmp(&other.sum_range))
            .then(self.cuts.cmp(&other.cuts))
            .is_lt()
    }
}

/// Cut positions splitting already-sorted cities into `k` contiguous
/// non-empty groups with the smallest variance of group totals. Ties go to
/// the split with the narrowest within-group ratio ranges. Group `g` covers
/// `cuts[g-1]..cuts[g]`, with implicit 0 and n at the ends.
pub fn best_cuts(counts: &[u64], ratios: &[f64], k: usize) -> Result<Vec<usize>, GenderError> {
    let n = counts.len();
    if ratios.len() != n {
        return Err(GenderError::Validation("counts and ratios differ in length".into()));
    }
    if k == 0 || k > n {
        return Err(GenderError::TooManyGroups { k, n });
    }
    let mut prefix = vec![0u64; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + counts[i];
    }
    let mut best: Option<Candidate> = None;
    let mut cuts = Vec::with_capacity(k - 1);
    search(&prefix, ratios, k, 0, &mut cuts, &mut best);
    Ok(best.expect("k <= n admits a partition").cuts)
}

fn search(prefix: &[u64], ratios: &[f64], k: usize, start: usize, cuts: &mut Vec<usize>, best: &mut Option<Candidate>) {
    let n = prefix.len() - 1;
    if cuts.len() == k - 1 {
        let mut bounds = vec![0];
        bounds.extend(cuts.iter().copied());
        bounds.push(n);
        let mut sum_sq = 0u128;
        let (mut max_range, mut sum_range) = (0.0f64, 0.0f64);
        for w in bounds.windows(2) {
            let t = (prefix[w[1]] - prefix[w[0]]) as u128;
            sum_sq += t * t;
            let range = ratios[w[1] - 1] - ratios[w[0]];
            max_range = max_range.max(range);
            sum_range += range;
        }
        let cand = Candidate { sum_sq, max_range, sum_range, cuts: cuts.clone() };
        if best.as_ref().is_none_or(|b| cand.better_than(b)) {
            *best = Some(cand);
        }
        return;
    }
    let remaining = k - 1 - cuts.len();
    let lo = cuts.last().map_or(1, |&c| c + 1).max(start);
    for c in lo..=(n - remaining) {
        cuts.push(c);
        search(prefix, ratios, k, c + 1, cuts, best);
        cuts.pop();
    }
}

/// Sorts cities by Census ratio (ties by id) and partitions them into `k`
/// groups, then computes observed and weighted reference ratios per group.
pub fn group_cities(cities: &[CityGender], k: usize) -> Result<Vec<GenderGroup>, GenderError> {
    if let Some(c) = cities.iter().find(|c| !c.census_ratio.is_finite()) {
        return Err(GenderError::Validation(format!("city `{}` has no Census ratio", c.city_id)));
    }
    let total: u64 = cities.iter().map(CityGender::observations).sum();
    if total < k as u64 {
        return Err(GenderError::Validation(format!("{total} observations cannot fill {k} groups")));
    }
    let mut sorted: Vec<&CityGender> = cities.iter().collect();
    sorted.sort_by(|a, b| a.census_ratio.total_cmp(&b.census_ratio).then(a.city_id.cmp(&b.city_id)));
    let counts: Vec<u64> = sorted.iter().map(|c| c.observations()).collect();
    let ratios: Vec<f64> = sorted.iter().map(|c| c.census_ratio).collect();
    let cuts = best_cuts(&counts, &ratios, k)?;

    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(sorted.len());
    bounds
        .windows(2)
        .enumerate()
        .map(|(g, w)| {
            let members = &sorted[w[0]..w[1]];
            let female = members.iter().map(|c| c.female).sum();
            let male = members.iter().map(|c| c.male).sum();
            let weights = |f: fn(&CityGender) -> Option<f64>| -> Option<f64> {
                let pairs: Vec<(f64, u64)> = members.iter().filter_map(|c| f(c).map(|r| (r, c.observations()))).collect();
                weighted_reference_ratio(&pairs).ok()
            };
            let census_pairs: Vec<(f64, u64)> = members.iter().map(|c| (c.census_ratio, c.observations())).collect();
            let census_ratio = match weighted_reference_ratio(&census_pairs) {
                Ok(r) => r,
                Err(GenderError::ZeroWeight) => census_pairs.iter().map(|p| p.0).sum::<f64>() / census_pairs.len() as f64,
                Err(e) => return Err(e),
            };
            Ok(GenderGroup {
                group_id: g + 1,
                cities: members.iter().map(|c| c.city_id.clone()).collect(),
                female,
                male,
                gsv_ratio: gsv_group_ratio(male, female),
                census_ratio,
                aps_all_ratio: weights(|c| c.aps_all_ratio),
                aps_utly_ratio: weights(|c| c.aps_utly_ratio),
            })
        })
        .collect()
}

/// Whether observed ratios rise from group to group. Reported, not enforced.
pub fn is_monotonic(groups: &[GenderGroup]) -> bool {
    groups
        .windows(2)
        .all(|w| match (w[0].gsv_ratio, w[1].gsv_ratio) {
            (Some(a), Some(b)) => a <= b,
            _ => false,
        })
}

/// `gender_report.csv`: one row per group and a final `all` row.
pub fn write_gender_report<W: io::Write>(out: W, groups: &[GenderGroup]) -> Result<(), GenderError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["group", "cities", "female", "male", "gsv_ratio", "census_ratio", "aps_all_ratio", "aps_utly_ratio"])?;
    let fmt_opt = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:.2}"));
    let fmt_gsv = |r: Option<Ratio<u64>>| r.as_ref().map_or("NA".to_string(), format_ratio_2dp);
    for g in groups {
        w.write_record([
            g.group_id.to_string(),
            g.cities.join(";"),
            g.female.to_string(),
            g.male.to_string(),
            fmt_gsv(g.gsv_ratio),
            format!("{:.2}", g.census_ratio),
            fmt_opt(g.aps_all_ratio),
            fmt_opt(g.aps_utly_ratio),
        ])?;
    }
    let female: u64 = groups.iter().map(|g| g.female).sum();
    let male: u64 = groups.iter().map(|g| g.male).sum();
    w.write_record([
        "all".to_string(),
        String::new(),
        female.to_string(),
        male.to_string(),
        fmt_gsv(gsv_group_ratio(male, female)),
        String::new(),
        String::new(),
        String::new(),
    ])?;
    w.flush()?;
    Ok(())
}
