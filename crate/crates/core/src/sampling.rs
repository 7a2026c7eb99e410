//! Staged random sampling of street locations from a road network.
//!
//! Stage 1 draws one point per link, uniformly by arc length. Stage 2 takes
//! a simple random subset of those points. Stage 3 keeps the points whose
//! panoramas fall in the preferred years, filling the target year by year in
//! priority order.
//!
//! Every stage is a pure function of its input and seed. Randomness comes
//! from ChaCha8 seeded with `rng_seed`, with a separate stream per stage
//! (stream 1, 2 and 3), so results are identical across platforms.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geo::{point_along, polyline_length_m, LatLon};
use crate::imagery::PanoramaMeta;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("network is not valid GeoJSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("feature {feature}: {reason}")]
    Feature { feature: String, reason: String },
    #[error("network contains no line features")]
    EmptyNetwork,
    #[error("nothing to sample: input is empty")]
    EmptyInput,
    #[error("invalid stage configuration: {0}")]
    Config(String),
    #[error("stream of {len} images is shorter than the window of {window}; stabilization not assessable")]
    NotAssessable { len: usize, window: usize },
    #[error("points file: {0}")]
    Csv(#[from] csv::Error),
}

/// A road link: one polyline of the city network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadLink {
    pub link_id: String,
    pub geometry: Vec<LatLon>,
    pub length_m: f64,
}

impl RoadLink {
    pub fn new(link_id: impl Into<String>, geometry: Vec<LatLon>) -> Result<Self, SamplingError> {
        let link_id = link_id.into();
        if geometry.len() < 2 {
            return Err(SamplingError::Feature {
                feature: link_id,
                reason: format!("LineString needs at least 2 vertices, got {}", geometry.len()),
            });
        }
        if let Some(bad) = geometry.iter().find(|p| !p.is_valid()) {
            return Err(SamplingError::Feature {
                feature: link_id,
                reason: format!("coordinate out of range: ({}, {})", bad.lat, bad.lon),
            });
        }
        let length_m = polyline_length_m(&geometry);
        Ok(Self { link_id, geometry, length_m })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Stage1,
    Stage2,
    Stage3,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::Stage1 => 1,
            Stage::Stage2 => 2,
            Stage::Stage3 => 3,
        }
    }

    fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Stage::Stage1),
            2 => Some(Stage::Stage2),
            3 => Some(Stage::Stage3),
            _ => None,
        }
    }
}

/// Panorama chosen for a stage-3 location.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChosenPano {
    pub pano_id: String,
    pub year: i32,
    pub month: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledLocation {
    pub point_id: String,
    pub link_id: String,
    pub lat: f64,
    pub lon: f64,
    pub stage: Stage,
    pub headings: Vec<f64>,
    pub pano: Option<ChosenPano>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadingPair {
    #[default]
    Deg0_180,
    Deg90_270,
}

impl HeadingPair {
    pub fn degrees(self) -> [f64; 2] {
        match self {
            HeadingPair::Deg0_180 => [0.0, 180.0],
            HeadingPair::Deg90_270 => [90.0, 270.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    pub stage2_n: usize,
    pub stage3_target: usize,
    pub year_priority: Vec<i32>,
    pub heading_pair: HeadingPair,
    pub rng_seed: u64,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            stage2_n: 2000,
            stage3_target: 1000,
            year_priority: vec![2011, 2012, 2010, 2009, 2008],
            heading_pair: HeadingPair::Deg0_180,
            rng_seed: 0,
        }
    }
}

impl StageConfig {
    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.stage2_n < self.stage3_target {
            return Err(SamplingError::Config(format!(
                "stage2_n ({}) must be at least stage3_target ({})",
                self.stage2_n, self.stage3_target
            )));
        }
        if self.year_priority.is_empty() {
            return Err(SamplingError::Config("year_priority is empty".into()));
        }
        let mut seen = HashSet::new();
        for y in &self.year_priority {
            if !seen.insert(y) {
                return Err(SamplingError::Config(format!("year {y} listed twice in year_priority")));
            }
        }
        Ok(())
    }

    fn rank_of(&self, year: i32) -> Option<usize> {
        self.year_priority.iter().position(|&y| y == year)
    }
}

fn stage_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Parses a GeoJSON FeatureCollection of LineString features.
///
/// The optional `link_id` property (string or number) names each link;
/// features without one get their zero-based position in the collection.
pub fn parse_network(text: &str) -> Result<Vec<RoadLink>, SamplingError> {
    let doc: Value = serde_json::from_str(text)?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| SamplingError::Feature {
            feature: "<root>".into(),
            reason: "expected a FeatureCollection with a `features` array".into(),
        })?;

    let mut links = Vec::with_capacity(features.len());
    let mut ids = HashSet::with_capacity(features.len());
    for (index, feature) in features.iter().enumerate() {
        let link_id = match feature.pointer("/properties/link_id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => index.to_string(),
        };
        let fail = |reason: String| SamplingError::Feature { feature: link_id.clone(), reason };

        let geometry = feature.get("geometry").ok_or_else(|| fail("missing geometry".into()))?;
        match geometry.get("type").and_then(Value::as_str) {
            Some("LineString") => {}
            other => return Err(fail(format!("expected LineString geometry, got {other:?}"))),
        }
        let coords = geometry
            .get("coordinates")
            .and_then(Value::as_array)
            .ok_or_else(|| fail("missing coordinates".into()))?;
        let mut vertices = Vec::with_capacity(coords.len());
        for c in coords {
            // GeoJSON positions are [lon, lat, (alt)]
            let pair = c.as_array().filter(|a| a.len() >= 2);
            let (lon, lat) = match pair.map(|a| (a[0].as_f64(), a[1].as_f64())) {
                Some((Some(lon), Some(lat))) => (lon, lat),
                _ => return Err(fail(format!("malformed position {c}"))),
            };
            vertices.push(LatLon::new(lat, lon));
        }
        if !ids.insert(link_id.clone()) {
            return Err(fail("duplicate link_id".into()));
        }
        links.push(RoadLink::new(link_id.clone(), vertices)?);
    }
    if links.is_empty() {
        return Err(SamplingError::EmptyNetwork);
    }
    log::info!("loaded {} road links", links.len());
    Ok(links)
}

pub fn load_network(path: &Path) -> Result<Vec<RoadLink>, SamplingError> {
    let text = std::fs::read_to_string(path).map_err(|source| SamplingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_network(&text)
}

/// Stage 1: one point per link, uniform by arc length.
pub fn sample_stage1(links: &[RoadLink], seed: u64) -> Result<Vec<SampledLocation>, SamplingError> {
    if links.is_empty() {
        return Err(SamplingError::EmptyInput);
    }
    let mut rng = stage_rng(seed, 1);
    let width = links.len().to_string().len().max(6);
    Ok(links
        .iter()
        .enumerate()
        .map(|(i, link)| {
            let u: f64 = rng.random();
            let p = point_along(&link.geometry, u * link.length_m);
            SampledLocation {
                point_id: format!("p{:0width$}", i + 1),
                link_id: link.link_id.clone(),
                lat: p.lat,
                lon: p.lon,
                stage: Stage::Stage1,
                headings: Vec::new(),
                pano: None,
            }
        })
        .collect())
}

/// Stage 2: simple random sample without replacement of
/// `min(stage2_n, points.len())` points.
pub fn sample_stage2(
    points: &[SampledLocation],
    cfg: &StageConfig,
) -> Result<Vec<SampledLocation>, SamplingError> {
    if points.is_empty() {
        return Err(SamplingError::EmptyInput);
    }
    let mut rng = stage_rng(cfg.rng_seed, 2);
    let mut pool = points.to_vec();
    let take = cfg.stage2_n.min(pool.len());
    let (chosen, _) = pool.partial_shuffle(&mut rng, take);
    Ok(chosen
        .iter()
        .cloned()
        .map(|mut p| {
            p.stage = Stage::Stage2;
            p
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage3Selection {
    pub selected: Vec<SampledLocation>,
    /// Points with at least one panorama in a priority year.
    pub eligible: usize,
    /// `stage3_target - selected.len()` when the eligible pool ran short.
    pub shortfall: Option<usize>,
}

/// Best panorama of a point under the priority order: the highest-priority
/// year, then the latest month in that year, then the smallest pano id.
pub fn best_panorama<'a>(panos: &'a [PanoramaMeta], cfg: &StageConfig) -> Option<(usize, &'a PanoramaMeta)> {
    panos
        .iter()
        .filter_map(|p| cfg.rank_of(p.year).map(|r| (r, p)))
        .min_by(|(ra, a), (rb, b)| {
            ra.cmp(rb)
                .then(b.month.cmp(&a.month))
                .then(a.pano_id.cmp(&b.pano_id))
        })
}

/// Stage 3: year-priority selection toward `stage3_target`.
///
/// Every eligible point (in input order, first occurrence of each point_id)
/// receives a shuffle key: the next `u64` from the stage-3 stream. Years are
/// filled in priority order; a year whose pool exceeds the remaining quota
/// contributes its lowest-keyed points.
pub fn select_stage3(
    points_with_meta: &[(SampledLocation, Vec<PanoramaMeta>)],
    cfg: &StageConfig,
) -> Result<Stage3Selection, SamplingError> {
    cfg.validate()?;
    let mut rng = stage_rng(cfg.rng_seed, 3);
    let mut seen = HashSet::new();
    let mut by_rank: BTreeMap<usize, Vec<(u64, usize, &PanoramaMeta)>> = BTreeMap::new();
    let mut eligible = 0usize;
    for (idx, (point, panos)) in points_with_meta.iter().enumerate() {
        if !seen.insert(point.point_id.as_str()) {
            continue;
        }
        if let Some((rank, pano)) = best_panorama(panos, cfg) {
            let key = rng.next_u64();
            by_rank.entry(rank).or_default().push((key, idx, pano));
            eligible += 1;
        }
    }

    let headings = cfg.heading_pair.degrees().to_vec();
    let mut selected = Vec::with_capacity(cfg.stage3_target.min(eligible));
    for (_, mut pool) in by_rank {
        let remaining = cfg.stage3_target - selected.len();
        if remaining == 0 {
            break;
        }
        pool.sort_unstable_by_key(|&(key, idx, _)| (key, idx));
        for (_, idx, pano) in pool.into_iter().take(remaining) {
            let mut loc = points_with_meta[idx].0.clone();
            loc.stage = Stage::Stage3;
            loc.headings = headings.clone();
            loc.pano = Some(ChosenPano {
                pano_id: pano.pano_id.clone(),
                year: pano.year,
                month: pano.month,
            });
            selected.push(loc);
        }
    }

    let shortfall = (selected.len() < cfg.stage3_target).then(|| cfg.stage3_target - selected.len());
    if let Some(missing) = shortfall {
        log::warn!(
            "stage 3 shortfall: only {} eligible points for a target of {} ({missing} short)",
            eligible,
            cfg.stage3_target
        );
    }
    Ok(Stage3Selection { selected, eligible, shortfall })
}

/// Share of selected locations per panorama year.
pub fn year_shares(selected: &[SampledLocation]) -> BTreeMap<i32, f64> {
    let mut counts: BTreeMap<i32, usize> = BTreeMap::new();
    for p in selected.iter().filter_map(|s| s.pano.as_ref()) {
        *counts.entry(p.year).or_default() += 1;
    }
    let total: usize = counts.values().sum();
    counts
        .into_iter()
        .map(|(y, c)| (y, c as f64 / total as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilizationReport {
    /// `curves[m][i]`: share of the first `i + 1` images showing mode `m`.
    pub curves: Vec<Vec<f64>>,
    pub stabilized_at: Option<usize>,
    pub window_w: usize,
    pub epsilon: f64,
}

/// Finds the first image count `n >= window_w` at which every mode's running
/// presence proportion has stayed within `epsilon` of its current value over
/// the last `window_w` images.
pub fn stabilization_diagnostic(
    presence_stream: &[Vec<bool>],
    window_w: usize,
    epsilon: f64,
) -> Result<StabilizationReport, SamplingError> {
    let len = presence_stream.len();
    if window_w == 0 || len < window_w {
        return Err(SamplingError::NotAssessable { len, window: window_w });
    }
    let modes = presence_stream[0].len();
    if presence_stream.iter().any(|r| r.len() != modes) {
        return Err(SamplingError::Config("presence records have differing mode counts".into()));
    }

    let mut curves = vec![Vec::with_capacity(len); modes];
    let mut hits = vec![0usize; modes];
    for (i, record) in presence_stream.iter().enumerate() {
        for (m, &present) in record.iter().enumerate() {
            hits[m] += usize::from(present);
            curves[m].push(hits[m] as f64 / (i + 1) as f64);
        }
    }

    // stable[n - 1] is true when all modes pass at image count n
    let mut stable = vec![true; len];
    for curve in &curves {
        let mut max_q: VecDeque<usize> = VecDeque::new();
        let mut min_q: VecDeque<usize> = VecDeque::new();
        for (i, &p) in curve.iter().enumerate() {
            while max_q.back().is_some_and(|&j| curve[j] <= p) {
                max_q.pop_back();
            }
            max_q.push_back(i);
            while min_q.back().is_some_and(|&j| curve[j] >= p) {
                min_q.pop_back();
            }
            min_q.push_back(i);
            let start = (i + 1).saturating_sub(window_w);
            while max_q.front().is_some_and(|&j| j < start) {
                max_q.pop_front();
            }
            while min_q.front().is_some_and(|&j| j < start) {
                min_q.pop_front();
            }
            if i + 1 < window_w {
                stable[i] = false;
                continue;
            }
            let spread = (curve[max_q[0]] - p).max(p - curve[min_q[0]]);
            if spread >= epsilon {
                stable[i] = false;
            }
        }
    }
    let stabilized_at = stable.iter().position(|&s| s).map(|i| i + 1);
    Ok(StabilizationReport { curves, stabilized_at, window_w, epsilon })
}

#[derive(Debug, Serialize, Deserialize)]
struct PointRow {
    point_id: String,
    link_id: String,
    lat: f64,
    lon: f64,
    stage: u8,
    heading_a: Option<f64>,
    heading_b: Option<f64>,
    pano_id: Option<String>,
    year: Option<i32>,
    month: Option<u8>,
}

pub fn write_points_csv<W: io::Write>(out: W, points: &[SampledLocation]) -> Result<(), SamplingError> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(PointRow {
            point_id: p.point_id.clone(),
            link_id: p.link_id.clone(),
            lat: p.lat,
            lon: p.lon,
            stage: p.stage.number(),
            heading_a: p.headings.first().copied(),
            heading_b: p.headings.get(1).copied(),
            pano_id: p.pano.as_ref().map(|x| x.pano_id.clone()),
            year: p.pano.as_ref().map(|x| x.year),
            month: p.pano.as_ref().map(|x| x.month),
        })?;
    }
    w.flush().map_err(|e| SamplingError::Csv(e.into()))?;
    Ok(())
}

pub fn read_points_csv<R: io::Read>(input: R) -> Result<Vec<SampledLocation>, SamplingError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: PointRow = row?;
        let stage = Stage::from_number(row.stage)
            .ok_or_else(|| SamplingError::Config(format!("point {}: unknown stage {}", row.point_id, row.stage)))?;
        let headings = [row.heading_a, row.heading_b].into_iter().flatten().collect();
        let pano = match (row.pano_id, row.year, row.month) {
            (Some(pano_id), Some(year), Some(month)) => Some(ChosenPano { pano_id, year, month }),
            _ => None,
        };
        out.push(SampledLocation {
            point_id: row.point_id,
            link_id: row.link_id,
            lat: row.lat,
            lon: row.lon,
            stage,
            headings,
            pano,
        });
    }
    Ok(out)
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage{}", self.number())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pano(id: &str, year: i32, month: u8) -> PanoramaMeta {
        PanoramaMeta {
            pano_id: id.into(),
            year,
            month,
            lat: 0.0,
            lon: 0.0,
            distance_m: 1.0,
        }
    }

    fn loc(id: &str) -> SampledLocation {
        SampledLocation {
            point_id: id.into(),
            link_id: id.into(),
            lat: 0.0,
            lon: 0.0,
            stage: Stage::Stage2,
            headings: vec![],
            pano: None,
        }
    }

    fn line_feature(coords: &str) -> String {
        format!(r#"{{"type":"Feature","properties":{{}},"geometry":{{"type":"LineString","coordinates":{coords}}}}}"#)
    }

    #[test]
    fn three_features_three_links() {
        let f = [
            line_feature("[[0,52],[0.01,52]]"),
            line_feature("[[0,52],[0,52.01],[0.01,52.01]]"),
            line_feature("[[1,52],[1,52]]"),
        ];
        let text = format!(r#"{{"type":"FeatureCollection","features":[{}]}}"#, f.join(","));
        let links = parse_network(&text).unwrap();
        assert_eq!(links.len(), 3);
        assert_eq!(links[1].link_id, "1");
        assert!(links[0].length_m > 600.0 && links[0].length_m < 700.0);
        assert_eq!(links[2].length_m, 0.0);
    }

    #[test]
    fn single_vertex_feature_is_rejected() {
        let text = format!(
            r#"{{"type":"FeatureCollection","features":[{}]}}"#,
            r#"{"type":"Feature","properties":{"link_id":"bad"},"geometry":{"type":"LineString","coordinates":[[0,52]]}}"#
        );
        match parse_network(&text) {
            Err(SamplingError::Feature { feature, .. }) => assert_eq!(feature, "bad"),
            other => panic!("expected feature error, got {other:?}"),
        }
    }

    #[test]
    fn empty_collection_is_rejected() {
        let err = parse_network(r#"{"type":"FeatureCollection","features":[]}"#).unwrap_err();
        assert!(matches!(err, SamplingError::EmptyNetwork));
    }

    #[test]
    fn degenerate_link_samples_first_vertex() {
        let p = LatLon::new(53.0, -1.5);
        let link = RoadLink::new("z", vec![p, p]).unwrap();
        let pts = sample_stage1(&[link], 9).unwrap();
        assert_eq!((pts[0].lat, pts[0].lon), (p.lat, p.lon));
    }

    #[test]
    fn stage2_takes_all_when_undersized() {
        let pts: Vec<_> = (0..100).map(|i| loc(&format!("p{i}"))).collect();
        let out = sample_stage2(&pts, &StageConfig::default()).unwrap();
        assert_eq!(out.len(), 100);
        let ids: HashSet<_> = out.iter().map(|p| &p.point_id).collect();
        assert_eq!(ids.len(), 100);
    }

    #[test]
    fn stage3_priority_example() {
        let input = vec![
            (loc("A"), vec![pano("a", 2011, 5)]),
            (loc("B"), vec![pano("b", 2012, 5)]),
            (loc("C"), vec![pano("c", 2012, 7)]),
            (loc("D"), vec![pano("d", 2009, 1)]),
        ];
        let mut cfg = StageConfig { stage3_target: 3, ..Default::default() };
        let out = select_stage3(&input, &cfg).unwrap();
        let mut ids: Vec<_> = out.selected.iter().map(|p| p.point_id.as_str()).collect();
        ids.sort();
        assert_eq!(ids, ["A", "B", "C"]);
        assert!(out.shortfall.is_none());

        cfg.stage3_target = 4;
        cfg.stage2_n = 4;
        let out = select_stage3(&input, &cfg).unwrap();
        let ids: Vec<_> = out.selected.iter().map(|p| p.point_id.as_str()).collect();
        assert_eq!(ids[0], "A");
        assert_eq!(ids[3], "D");
        assert_eq!(out.selected.len(), 4);
    }

    #[test]
    fn stage3_excludes_points_without_priority_year_and_reports_shortfall() {
        let input = vec![
            (loc("A"), vec![pano("a", 2015, 5)]),
            (loc("B"), vec![]),
            (loc("C"), vec![pano("c1", 2017, 1), pano("c2", 2012, 3)]),
        ];
        let cfg = StageConfig { stage3_target: 2, ..Default::default() };
        let out = select_stage3(&input, &cfg).unwrap();
        assert_eq!(out.selected.len(), 1);
        assert_eq!(out.shortfall, Some(1));
        let chosen = out.selected[0].pano.as_ref().unwrap();
        assert_eq!(chosen.pano_id, "c2");
        assert_eq!(out.selected[0].headings, vec![0.0, 180.0]);
    }

    #[test]
    fn heading_pair_toggle() {
        let input = vec![(loc("A"), vec![pano("a", 2011, 5)])];
        let cfg = StageConfig {
            stage3_target: 1,
            heading_pair: HeadingPair::Deg90_270,
            ..Default::default()
        };
        let out = select_stage3(&input, &cfg).unwrap();
        assert_eq!(out.selected[0].headings, vec![90.0, 270.0]);
    }

    #[test]
    fn config_validation() {
        let bad = StageConfig { stage2_n: 10, stage3_target: 20, ..Default::default() };
        assert!(bad.validate().is_err());
        let dup = StageConfig { year_priority: vec![2011, 2011], ..Default::default() };
        assert!(dup.validate().is_err());
        let empty = StageConfig { year_priority: vec![], ..Default::default() };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn constant_stream_stabilizes_at_window() {
        let stream = vec![vec![true, false]; 500];
        let rep = stabilization_diagnostic(&stream, 200, 0.005).unwrap();
        assert_eq!(rep.stabilized_at, Some(200));
        assert_eq!(rep.curves[0].len(), 500);
    }

    #[test]
    fn short_stream_not_assessable() {
        let stream = vec![vec![true]; 50];
        assert!(matches!(
            stabilization_diagnostic(&stream, 200, 0.005),
            Err(SamplingError::NotAssessable { len: 50, window: 200 })
        ));
    }

    #[test]
    fn points_csv_round_trip() {
        let mut a = loc("p1");
        a.stage = Stage::Stage3;
        a.headings = vec![0.0, 180.0];
        a.pano = Some(ChosenPano { pano_id: "X".into(), year: 2011, month: 7 });
        let b = loc("p2");
        let mut buf = Vec::new();
        write_points_csv(&mut buf, &[a.clone(), b.clone()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("point_id,link_id,lat,lon,stage,heading_a,heading_b,pano_id,year,month\n"));
        assert_eq!(read_points_csv(&buf[..]).unwrap(), vec![a, b]);
    }
}
