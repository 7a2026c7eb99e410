//! Street-imagery metadata and image locators behind a pluggable provider.
//!
//! Two providers implement [`PanoramaProvider`]: [`FixtureProvider`] reads a
//! directory of JSON files and is the contract of record for tests, and
//! [`LiveProvider`] talks to a configured HTTP endpoint. [`ImageryClient`]
//! adds a coordinate-keyed disk cache and a shared rate limiter on top.
//!
//! Image bytes are never stored. Only panorama metadata and locators
//! (panorama id + heading) are persisted.

mod harvest;
mod provider;
mod ratelimit;

use std::fs;
use std::io;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use chrono::Datelike;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use harvest::{harvest, read_panos_csv, write_panos_csv, Harvest, HarvestFailure, HarvestReport};
pub use provider::{coord_key, FixtureProvider, LiveProvider, PanoramaProvider};
pub use ratelimit::RateLimiter;

use crate::sampling::SampledLocation;

/// Earliest year a street-level panorama can carry.
pub const FIRST_PANORAMA_YEAR: i32 = 2007;

#[derive(Debug, Error)]
pub enum ImageryError {
    #[error("provider unreachable: {0}")]
    Transient(String),
    #[error("malformed provider payload: {0}")]
    Protocol(String),
    #[error("unknown panorama {0}")]
    NotFound(String),
    #[error("invalid request: {0}")]
    InvalidInput(String),
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("panos file: {0}")]
    Csv(#[from] csv::Error),
    #[error("nothing to harvest: point list is empty")]
    EmptyInput,
    #[error("harvest aborted: {failed} of {total} points failed (first: {first_error})")]
    HarvestAborted {
        failed: usize,
        total: usize,
        first_error: String,
    },
}

impl ImageryError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ImageryError::Transient(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanoramaMeta {
    pub pano_id: String,
    pub year: i32,
    pub month: u8,
    pub lat: f64,
    pub lon: f64,
    pub distance_m: f64,
}

impl PanoramaMeta {
    pub fn validate(&self) -> Result<(), ImageryError> {
        let current = chrono::Utc::now().year();
        if !(FIRST_PANORAMA_YEAR..=current).contains(&self.year) {
            return Err(ImageryError::Protocol(format!(
                "panorama {} has year {} outside [{FIRST_PANORAMA_YEAR}, {current}]",
                self.pano_id, self.year
            )));
        }
        if !(1..=12).contains(&self.month) {
            return Err(ImageryError::Protocol(format!(
                "panorama {} has month {}",
                self.pano_id, self.month
            )));
        }
        if !(self.distance_m >= 0.0) {
            return Err(ImageryError::Protocol(format!(
                "panorama {} has negative distance",
                self.pano_id
            )));
        }
        Ok(())
    }
}

/// A resolvable image: one directional crop of a panorama.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub pano_id: String,
    pub heading: f64,
    pub fov: f64,
    pub width: u32,
    pub height: u32,
    pub url: String,
}

impl ImageRef {
    /// Annotation image id: panorama id plus heading.
    pub fn image_id(&self) -> String {
        image_id(&self.pano_id, self.heading)
    }
}

pub fn image_id(pano_id: &str, heading: f64) -> String {
    format!("{pano_id}_{heading}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Fixture,
    Live,
}

impl ProviderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProviderKind::Fixture => "fixture",
            ProviderKind::Live => "live",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Fixture directory (fixture provider).
    pub fixture_path: Option<PathBuf>,
    /// Metadata URL template with `{lat}`, `{lon}` and `{key}` placeholders.
    pub endpoint: Option<String>,
    /// Image URL template with `{pano}`, `{heading}`, `{fov}`, `{width}`,
    /// `{height}` and `{key}` placeholders.
    pub image_endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    pub key_env: Option<String>,
    /// Requests per second.
    pub rate_limit: f64,
    pub burst: usize,
    pub cache_dir: Option<PathBuf>,
    pub fov: f64,
    pub width: u32,
    pub height: u32,
    pub timeout_s: f64,
    /// Test-only: lets the fixture provider hand out stored image bytes.
    pub allow_fixture_bytes: bool,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Fixture,
            fixture_path: None,
            endpoint: None,
            image_endpoint: None,
            key_env: None,
            rate_limit: 10.0,
            burst: 1,
            cache_dir: None,
            fov: 90.0,
            width: 640,
            height: 640,
            timeout_s: 30.0,
            allow_fixture_bytes: false,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ImageryError> {
        if !(self.rate_limit > 0.0) || !self.rate_limit.is_finite() {
            return Err(ImageryError::Config("rate_limit must be > 0".into()));
        }
        if !(self.fov > 0.0 && self.fov <= 180.0) {
            return Err(ImageryError::Config("fov must lie in (0, 180]".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(ImageryError::Config("image size must be positive".into()));
        }
        Ok(())
    }
}

/// Provider plus cache plus rate limiter.
pub struct ImageryClient {
    provider: Box<dyn PanoramaProvider>,
    limiter: RateLimiter,
    cfg: ProviderConfig,
    requests: AtomicUsize,
    cache_hits: AtomicUsize,
}

impl ImageryClient {
    pub fn new(provider: Box<dyn PanoramaProvider>, cfg: ProviderConfig) -> Result<Self, ImageryError> {
        cfg.validate()?;
        if let Some(dir) = &cfg.cache_dir {
            fs::create_dir_all(dir).map_err(|source| ImageryError::Io { path: dir.clone(), source })?;
        }
        Ok(Self {
            provider,
            limiter: RateLimiter::new(cfg.rate_limit, cfg.burst),
            cfg,
            requests: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
        })
    }

    /// Builds the provider named by `cfg.kind`.
    pub fn from_config(cfg: ProviderConfig) -> Result<Self, ImageryError> {
        let provider: Box<dyn PanoramaProvider> = match cfg.kind {
            ProviderKind::Fixture => {
                let dir = cfg
                    .fixture_path
                    .as_ref()
                    .ok_or_else(|| ImageryError::Config("fixture provider needs fixture_path".into()))?;
                Box::new(FixtureProvider::from_dir(dir)?.with_image_bytes(cfg.allow_fixture_bytes))
            }
            ProviderKind::Live => Box::new(LiveProvider::from_config(&cfg)?),
        };
        Self::new(provider, cfg)
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.cfg
    }

    pub fn provider_requests(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> usize {
        self.cache_hits.load(Ordering::Relaxed)
    }

    fn cache_path(&self, lat: f64, lon: f64) -> Option<PathBuf> {
        self.cfg.cache_dir.as_ref().map(|dir| {
            dir.join(format!("{}_{}.json", self.provider.kind().as_str(), coord_key(lat, lon)))
        })
    }

    /// All panoramas near the point, sorted by (year, month, pano_id).
    pub fn fetch_metadata(&self, point: &SampledLocation) -> Result<Vec<PanoramaMeta>, ImageryError> {
        self.fetch_metadata_at(point.lat, point.lon)
    }

    pub fn fetch_metadata_at(&self, lat: f64, lon: f64) -> Result<Vec<PanoramaMeta>, ImageryError> {
        if !crate::geo::LatLon::new(lat, lon).is_valid() {
            return Err(ImageryError::InvalidInput(format!("coordinates out of range: ({lat}, {lon})")));
        }
        let cache = self.cache_path(lat, lon);
        if let Some(path) = &cache {
            if let Ok(bytes) = fs::read(path) {
                if let Ok(panos) = serde_json::from_slice::<Vec<PanoramaMeta>>(&bytes) {
                    self.cache_hits.fetch_add(1, Ordering::Relaxed);
                    return Ok(panos);
                }
                log::warn!("ignoring unreadable cache entry {}", path.display());
            }
        }

        self.limiter.acquire();
        self.requests.fetch_add(1, Ordering::Relaxed);
        let mut panos = self.provider.panoramas_near(lat, lon)?;
        for p in &panos {
            p.validate()?;
        }
        panos.sort_by(|a, b| {
            (a.year, a.month)
                .cmp(&(b.year, b.month))
                .then_with(|| a.pano_id.cmp(&b.pano_id))
        });

        if let Some(path) = cache {
            let bytes = serde_json::to_vec(&panos).expect("metadata serializes");
            write_atomic(&path, &bytes)?;
        }
        Ok(panos)
    }

    /// Locator for one heading of a panorama.
    pub fn image_request(&self, pano_id: &str, heading: f64) -> Result<ImageRef, ImageryError> {
        if !(0.0..360.0).contains(&heading) {
            return Err(ImageryError::InvalidInput(format!("heading {heading} outside [0, 360)")));
        }
        if pano_id.is_empty() {
            return Err(ImageryError::InvalidInput("empty panorama id".into()));
        }
        let url = self
            .provider
            .image_locator(pano_id, heading, self.cfg.fov, self.cfg.width, self.cfg.height)?;
        Ok(ImageRef {
            pano_id: pano_id.to_string(),
            heading,
            fov: self.cfg.fov,
            width: self.cfg.width,
            height: self.cfg.height,
            url,
        })
    }

    /// Image bytes behind a locator. Only the fixture provider serves these,
    /// and only when `allow_fixture_bytes` is set.
    pub fn image_bytes(&self, image: &ImageRef) -> Result<Vec<u8>, ImageryError> {
        self.provider.image_bytes(image)
    }
}

/// Write to a sibling temp file, then rename over the target.
pub(crate) fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> Result<(), ImageryError> {
    let io_err = |source| ImageryError::Io { path: path.to_path_buf(), source };
    let tmp = path.with_extension(format!(
        "tmp.{}.{:?}",
        std::process::id(),
        std::thread::current().id()
    ));
    fs::write(&tmp, bytes).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}
