use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use crate::error::{CliError, Context};

/// Files staged in memory and written only once a command has succeeded,
/// each through a temporary file renamed into place.
#[derive(Debug, Default)]
pub struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), files: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    pub fn add_json<T: serde::Serialize>(&mut self, name: impl Into<String>, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).runtime("serializing output")?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    pub fn commit(self) -> Result<Vec<PathBuf>, CliError> {
        fs::create_dir_all(&self.dir).runtime(&format!("creating {}", self.dir.display()))?;
        let mut written = Vec::with_capacity(self.files.len());
        for (name, bytes) in self.files {
            let path = self.dir.join(&name);
            write_atomic(&path, &bytes)?;
            written.push(path);
        }
        Ok(written)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let what = format!("writing {}", path.display());
    let mut tmp = NamedTempFile::new_in(dir).runtime(&what)?;
    tmp.write_all(bytes).runtime(&what)?;
    tmp.as_file().sync_all().runtime(&what)?;
    tmp.persist(path).map_err(|e| e.error).runtime(&what)?;
    Ok(())
}
