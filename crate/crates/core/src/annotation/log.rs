use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{AnnotationError, GenderJudgment, GenderLabel, ImageAnnotation};

/// Everything that changes durable queue state. Leases are not logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Annotation(ImageAnnotation),
    Gender {
        image_id: String,
        annotator_id: String,
        judgments: Vec<GenderJudgment>,
        ts: DateTime<Utc>,
    },
    Consensus {
        image_id: String,
        cyclist_index: u32,
        label: GenderLabel,
    },
    QaPool {
        image_ids: Vec<String>,
    },
}

pub trait EventLog: Send {
    fn append(&mut self, event: &Event) -> Result<(), AnnotationError>;
    fn replay(&self) -> Result<Vec<Event>, AnnotationError>;
}

#[derive(Debug, Default, Clone)]
pub struct MemoryLog {
    events: Vec<Event>,
}

impl MemoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }
}

impl EventLog for MemoryLog {
    fn append(&mut self, event: &Event) -> Result<(), AnnotationError> {
        self.events.push(event.clone());
        Ok(())
    }

    fn replay(&self) -> Result<Vec<Event>, AnnotationError> {
        Ok(self.events.clone())
    }
}

/// One JSON object per line, appended and flushed per event.
#[derive(Debug)]
pub struct JsonlLog {
    path: PathBuf,
    file: File,
}

impl JsonlLog {
    pub fn open(path: &Path) -> Result<Self, AnnotationError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { path: path.to_path_buf(), file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl EventLog for JsonlLog {
    fn append(&mut self, event: &Event) -> Result<(), AnnotationError> {
        let mut line = serde_json::to_vec(event).map_err(|e| AnnotationError::Corrupt { line: 0, source: e })?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        Ok(())
    }

    fn replay(&self) -> Result<Vec<Event>, AnnotationError> {
        let reader = BufReader::new(File::open(&self.path)?);
        let mut events = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line).map_err(|e| AnnotationError::Corrupt { line: i + 1, source: e })?);
        }
        Ok(events)
    }
}
