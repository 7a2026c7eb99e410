use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use super::{ImageRef, ImageryError, PanoramaMeta, ProviderConfig, ProviderKind};

/// Source of panorama metadata and image locators.
pub trait PanoramaProvider: Send + Sync {
    fn kind(&self) -> ProviderKind;

    /// Every panorama the provider knows within its search radius of the point.
    fn panoramas_near(&self, lat: f64, lon: f64) -> Result<Vec<PanoramaMeta>, ImageryError>;

    fn image_locator(
        &self,
        pano_id: &str,
        heading: f64,
        fov: f64,
        width: u32,
        height: u32,
    ) -> Result<String, ImageryError>;

    fn image_bytes(&self, image: &ImageRef) -> Result<Vec<u8>, ImageryError>;
}

/// Coordinate key: lat and lon rounded to 6 decimals, e.g. `52.205300_0.121800`.
pub fn coord_key(lat: f64, lon: f64) -> String {
    // + 0.0 folds -0.0 into 0.0
    let round = |x: f64| (x * 1e6).round() / 1e6 + 0.0;
    format!("{:.6}_{:.6}", round(lat), round(lon))
}

#[derive(Debug, Deserialize)]
struct PanoPayload {
    panos: Vec<PanoramaMeta>,
}

/// Fixture provider over a directory holding one `<coord_key>.json` file per
/// location (`{"panos":[...]}`) and optional `images/<pano_id>.jpg` bytes.
/// Coordinates without a file have no panoramas.
#[derive(Debug, Default)]
pub struct FixtureProvider {
    dir: Option<PathBuf>,
    entries: HashMap<String, Vec<PanoramaMeta>>,
    known: HashSet<String>,
    serve_bytes: bool,
}

impl FixtureProvider {
    pub fn from_dir(dir: &Path) -> Result<Self, ImageryError> {
        let io_err = |source| ImageryError::Io { path: dir.to_path_buf(), source };
        let mut entries = HashMap::new();
        for entry in fs::read_dir(dir).map_err(io_err)? {
            let path = entry.map_err(io_err)?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            let text = fs::read_to_string(&path).map_err(|source| ImageryError::Io { path: path.clone(), source })?;
            let payload: PanoPayload = serde_json::from_str(&text)
                .map_err(|e| ImageryError::Protocol(format!("{}: {e}", path.display())))?;
            entries.insert(stem.to_string(), payload.panos);
        }
        let mut p = Self::from_entries(entries);
        p.dir = Some(dir.to_path_buf());
        Ok(p)
    }

    /// In-memory fixture keyed by [`coord_key`].
    pub fn from_entries(entries: HashMap<String, Vec<PanoramaMeta>>) -> Self {
        let known = entries.values().flatten().map(|p| p.pano_id.clone()).collect();
        Self { dir: None, entries, known, serve_bytes: false }
    }

    pub fn with_image_bytes(mut self, allow: bool) -> Self {
        self.serve_bytes = allow;
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl PanoramaProvider for FixtureProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Fixture
    }

    fn panoramas_near(&self, lat: f64, lon: f64) -> Result<Vec<PanoramaMeta>, ImageryError> {
        Ok(self.entries.get(&coord_key(lat, lon)).cloned().unwrap_or_default())
    }

    fn image_locator(
        &self,
        pano_id: &str,
        heading: f64,
        fov: f64,
        width: u32,
        height: u32,
    ) -> Result<String, ImageryError> {
        if !self.known.contains(pano_id) {
            return Err(ImageryError::NotFound(pano_id.to_string()));
        }
        Ok(format!("fixture://{pano_id}?heading={heading}&fov={fov}&size={width}x{height}"))
    }

    fn image_bytes(&self, image: &ImageRef) -> Result<Vec<u8>, ImageryError> {
        if !self.serve_bytes {
            return Err(ImageryError::Config("image bytes are not served (allow_fixture_bytes is off)".into()));
        }
        if !self.known.contains(&image.pano_id) {
            return Err(ImageryError::NotFound(image.pano_id.clone()));
        }
        let dir = self
            .dir
            .as_ref()
            .ok_or_else(|| ImageryError::NotFound(format!("{} (in-memory fixture has no images)", image.pano_id)))?;
        let path = dir.join("images").join(format!("{}.jpg", image.pano_id));
        fs::read(&path).map_err(|source| ImageryError::Io { path, source })
    }
}

/// HTTP provider. The metadata endpoint must answer with the fixture payload
/// shape, `{"panos":[...]}`.
pub struct LiveProvider {
    endpoint: String,
    image_endpoint: String,
    key: String,
    http: reqwest::blocking::Client,
}

impl LiveProvider {
    pub fn from_config(cfg: &ProviderConfig) -> Result<Self, ImageryError> {
        let endpoint = cfg
            .endpoint
            .clone()
            .ok_or_else(|| ImageryError::Config("live provider needs `endpoint`".into()))?;
        let image_endpoint = cfg
            .image_endpoint
            .clone()
            .ok_or_else(|| ImageryError::Config("live provider needs `image_endpoint`".into()))?;
        let key = match &cfg.key_env {
            Some(var) => std::env::var(var)
                .map_err(|_| ImageryError::Config(format!("environment variable {var} is not set")))?,
            None => String::new(),
        };
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_s))
            .build()
            .map_err(|e| ImageryError::Config(e.to_string()))?;
        Ok(Self { endpoint, image_endpoint, key, http })
    }

    fn metadata_url(&self, lat: f64, lon: f64) -> String {
        self.endpoint
            .replace("{lat}", &format!("{lat:.6}"))
            .replace("{lon}", &format!("{lon:.6}"))
            .replace("{key}", &self.key)
    }
}

impl PanoramaProvider for LiveProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Live
    }

    fn panoramas_near(&self, lat: f64, lon: f64) -> Result<Vec<PanoramaMeta>, ImageryError> {
        let resp = self
            .http
            .get(self.metadata_url(lat, lon))
            .send()
            .map_err(|e| ImageryError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(ImageryError::Transient(format!("provider answered {status}")));
        }
        if !status.is_success() {
            return Err(ImageryError::Protocol(format!("provider answered {status}")));
        }
        let body = resp.bytes().map_err(|e| ImageryError::Transient(e.to_string()))?;
        let payload: PanoPayload =
            serde_json::from_slice(&body).map_err(|e| ImageryError::Protocol(e.to_string()))?;
        Ok(payload.panos)
    }

    fn image_locator(
        &self,
        pano_id: &str,
        heading: f64,
        fov: f64,
        width: u32,
        height: u32,
    ) -> Result<String, ImageryError> {
        Ok(self
            .image_endpoint
            .replace("{pano}", pano_id)
            .replace("{heading}", &heading.to_string())
            .replace("{fov}", &fov.to_string())
            .replace("{width}", &width.to_string())
            .replace("{height}", &height.to_string())
            .replace("{key}", &self.key))
    }

    fn image_bytes(&self, _image: &ImageRef) -> Result<Vec<u8>, ImageryError> {
        Err(ImageryError::Config("the live provider never downloads image bytes".into()))
    }
}
