use std::collections::BTreeMap;
use std::io;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{ImageryClient, ImageryError, PanoramaMeta};
use crate::sampling::SampledLocation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestFailure {
    pub point_id: String,
    pub error: String,
    pub retryable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestReport {
    pub n_points: usize,
    pub with_panorama: usize,
    /// Percent of points with at least one panorama.
    pub coverage_pct: f64,
    /// Panorama count per year, over every returned panorama.
    pub year_histogram: BTreeMap<i32, usize>,
    pub year_pct: BTreeMap<i32, f64>,
    pub failures: Vec<HarvestFailure>,
    pub provider_requests: usize,
    pub cache_hits: usize,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone)]
pub struct Harvest {
    pub report: HarvestReport,
    /// One entry per successfully resolved point, in input order.
    pub records: Vec<(SampledLocation, Vec<PanoramaMeta>)>,
}

/// Resolves metadata for every point with `workers` threads sharing the
/// client's rate limiter. Individual failures are recorded; once more than
/// half the points have failed the harvest stops and returns an error.
pub fn harvest(
    points: &[SampledLocation],
    client: &ImageryClient,
    workers: usize,
) -> Result<Harvest, ImageryError> {
    if points.is_empty() {
        return Err(ImageryError::EmptyInput);
    }
    let start = Instant::now();
    let requests_before = client.provider_requests();
    let hits_before = client.cache_hits();

    let next = AtomicUsize::new(0);
    let failed = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let results: Mutex<Vec<Option<Result<Vec<PanoramaMeta>, ImageryError>>>> =
        Mutex::new((0..points.len()).map(|_| None).collect());

    std::thread::scope(|s| {
        for _ in 0..workers.max(1) {
            s.spawn(|| loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= points.len() {
                    break;
                }
                let r = client.fetch_metadata(&points[i]);
                if r.is_err() && 2 * (failed.fetch_add(1, Ordering::Relaxed) + 1) > points.len() {
                    abort.store(true, Ordering::Relaxed);
                }
                results.lock().expect("results poisoned")[i] = Some(r);
            });
        }
    });

    let results = results.into_inner().expect("results poisoned");
    let mut failures = Vec::new();
    let mut records = Vec::new();
    let mut year_histogram: BTreeMap<i32, usize> = BTreeMap::new();
    for (point, result) in points.iter().zip(results) {
        match result {
            Some(Ok(panos)) => {
                for p in &panos {
                    *year_histogram.entry(p.year).or_default() += 1;
                }
                records.push((point.clone(), panos));
            }
            Some(Err(e)) => failures.push(HarvestFailure {
                point_id: point.point_id.clone(),
                error: e.to_string(),
                retryable: e.is_retryable(),
            }),
            None => {}
        }
    }

    if abort.load(Ordering::Relaxed) {
        return Err(ImageryError::HarvestAborted {
            failed: failures.len(),
            total: points.len(),
            first_error: failures.first().map(|f| f.error.clone()).unwrap_or_default(),
        });
    }

    let with_panorama = records.iter().filter(|(_, p)| !p.is_empty()).count();
    let total_panos: usize = year_histogram.values().sum();
    let year_pct = year_histogram
        .iter()
        .map(|(&y, &c)| (y, 100.0 * c as f64 / total_panos as f64))
        .collect();
    let report = HarvestReport {
        n_points: points.len(),
        with_panorama,
        coverage_pct: 100.0 * with_panorama as f64 / points.len() as f64,
        year_histogram,
        year_pct,
        failures,
        provider_requests: client.provider_requests() - requests_before,
        cache_hits: client.cache_hits() - hits_before,
        elapsed_s: start.elapsed().as_secs_f64(),
    };
    log::info!(
        "harvested {} points: {:.1}% with panoramas, {} failures",
        report.n_points,
        report.coverage_pct,
        report.failures.len()
    );
    Ok(Harvest { report, records })
}

#[derive(Debug, Serialize, Deserialize)]
struct PanoRow {
    point_id: String,
    pano_id: String,
    year: i32,
    month: u8,
    lat: f64,
    lon: f64,
    distance_m: f64,
}

/// `panos.csv`: `point_id,pano_id,year,month,lat,lon,distance_m`.
pub fn write_panos_csv<W: io::Write>(
    out: W,
    records: &[(SampledLocation, Vec<PanoramaMeta>)],
) -> Result<(), ImageryError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["point_id", "pano_id", "year", "month", "lat", "lon", "distance_m"])?;
    for (point, panos) in records {
        for p in panos {
            w.serialize(PanoRow {
                point_id: point.point_id.clone(),
                pano_id: p.pano_id.clone(),
                year: p.year,
                month: p.month,
                lat: p.lat,
                lon: p.lon,
                distance_m: p.distance_m,
            })?;
        }
    }
    w.flush().map_err(|e| ImageryError::Csv(e.into()))
}

/// Reads `panos.csv` back, grouped by point id.
pub fn read_panos_csv<R: io::Read>(input: R) -> Result<BTreeMap<String, Vec<PanoramaMeta>>, ImageryError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out: BTreeMap<String, Vec<PanoramaMeta>> = BTreeMap::new();
    for row in r.deserialize() {
        let row: PanoRow = row?;
        out.entry(row.point_id).or_default().push(PanoramaMeta {
            pano_id: row.pano_id,
            year: row.year,
            month: row.month,
            lat: row.lat,
            lon: row.lon,
            distance_m: row.distance_m,
        });
    }
    Ok(out)
}
