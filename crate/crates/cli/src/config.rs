use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use streetcount_core::imagery::ProviderConfig;
use streetcount_core::sampling::StageConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub city: Option<String>,
    pub out_dir: Option<PathBuf>,
    pub paths: Paths,
    pub stages: StageConfig,
    pub provider: ProviderConfig,
    pub service: ServiceConfig,
    pub selection: SelectionSection,
    pub harvest: HarvestSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub network: Option<PathBuf>,
    pub panos: Option<PathBuf>,
    pub points: Option<PathBuf>,
    pub tasks: Vec<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub census: Option<PathBuf>,
    pub aps: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub gender_counts: Option<PathBuf>,
    pub assets: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub annotators: Vec<String>,
    pub lease_minutes: i64,
    pub gender_raters: usize,
    pub qa_fraction: Option<f64>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { bind: "127.0.0.1:8080".into(), annotators: Vec::new(), lease_minutes: 15, gender_raters: 2, qa_fraction: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    pub threshold: f64,
}

impl Default for SelectionSection {
    fn default() -> Self {
        Self { threshold: 0.1 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarvestSection {
    pub workers: usize,
}

impl Default for HarvestSection {
    fn default() -> Self {
        Self { workers: 4 }
    }
}

impl RunConfig {
    /// Reads a TOML file; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::invalid(format!("config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::invalid(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        for slot in [
            &mut p.network,
            &mut p.panos,
            &mut p.points,
            &mut p.annotations,
            &mut p.log,
            &mut p.census,
            &mut p.aps,
            &mut p.dataset,
            &mut p.gender_counts,
            &mut p.assets,
            &mut self.out_dir,
            &mut self.provider.fixture_path,
            &mut self.provider.cache_dir,
        ] {
            if let Some(path) = slot.as_mut() {
                fix(path);
            }
        }
        p.tasks.iter_mut().for_each(fix);
    }
}
