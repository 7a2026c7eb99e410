use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use chrono::{DateTime, Duration, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::log::{Event, EventLog};
use super::{
    agreement, AgreementStats, AnnotationError, AnnotationTask, Bin, Category, GenderJudgment, GenderLabel,
    ImageAnnotation, TaskKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueueConfig {
    pub lease_minutes: i64,
    /// Independent raters per gender image.
    pub gender_raters: usize,
}

impl Default for QueueConfig {
    fn default() -> Self {
        Self { lease_minutes: 15, gender_raters: 2 }
    }
}

/// What an annotator sees. The city is deliberately absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPayload {
    pub image_id: String,
    pub locator: String,
    pub kind: TaskKind,
    /// Lease expiry.
    pub expires: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagRequest {
    pub image_id: String,
    pub annotator: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub completed: usize,
    pub flagged: usize,
    pub per_annotator: BTreeMap<String, usize>,
    pub qa_pool: usize,
    pub qa_completed: usize,
    pub gender_total: usize,
    pub gender_completed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderSubmission {
    pub image_id: String,
    pub annotator_id: String,
    pub judgments: Vec<GenderJudgment>,
    pub ts: DateTime<Utc>,
}

/// Durable state, for comparing a live queue with one rebuilt from its log.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueSnapshot {
    pub annotations: Vec<ImageAnnotation>,
    pub gender: Vec<GenderSubmission>,
    pub consensus: BTreeMap<(String, u32), GenderLabel>,
    pub qa_pool: Vec<String>,
    pub gender_tasks: Vec<String>,
}

#[derive(Debug, Clone)]
struct Lease {
    annotator: String,
    expires: DateTime<Utc>,
}

type LeaseKey = (TaskKind, String);

/// Task distribution and response store. Not internally synchronized; the
/// HTTP layer holds it behind a mutex so leasing is atomic.
pub struct AnnotationQueue<L: EventLog> {
    cfg: QueueConfig,
    tasks: Vec<AnnotationTask>,
    index: HashMap<String, usize>,
    annotators: BTreeSet<String>,
    leases: HashMap<LeaseKey, Vec<Lease>>,
    annotations: Vec<ImageAnnotation>,
    by_image: HashMap<String, Vec<usize>>,
    gender_tasks: Vec<String>,
    gender_set: HashSet<String>,
    gender: Vec<GenderSubmission>,
    gender_by_image: HashMap<String, Vec<usize>>,
    consensus: BTreeMap<(String, u32), GenderLabel>,
    qa_pool: Vec<String>,
    qa_set: HashSet<String>,
    log: L,
}

impl<L: EventLog> AnnotationQueue<L> {
    /// Builds the queue and replays any events already in `log`.
    pub fn open(
        tasks: Vec<AnnotationTask>,
        annotators: impl IntoIterator<Item = String>,
        cfg: QueueConfig,
        log: L,
    ) -> Result<Self, AnnotationError> {
        let mut index = HashMap::with_capacity(tasks.len());
        for (i, t) in tasks.iter().enumerate() {
            if index.insert(t.image_id.clone(), i).is_some() {
                return Err(AnnotationError::Validation(format!("duplicate image_id `{}`", t.image_id)));
            }
        }
        if cfg.gender_raters == 0 || cfg.lease_minutes <= 0 {
            return Err(AnnotationError::Validation("gender_raters and lease_minutes must be positive".into()));
        }
        let mut q = Self {
            cfg,
            tasks,
            index,
            annotators: annotators.into_iter().collect(),
            leases: HashMap::new(),
            annotations: Vec::new(),
            by_image: HashMap::new(),
            gender_tasks: Vec::new(),
            gender_set: HashSet::new(),
            gender: Vec::new(),
            gender_by_image: HashMap::new(),
            consensus: BTreeMap::new(),
            qa_pool: Vec::new(),
            qa_set: HashSet::new(),
            log,
        };
        for event in q.log.replay()? {
            q.apply(event);
        }
        Ok(q)
    }

    fn apply(&mut self, event: Event) {
        match event {
            Event::Annotation(ann) => {
                let slot = self.by_image.entry(ann.image_id.clone()).or_default();
                let first = slot.is_empty();
                slot.push(self.annotations.len());
                if first && !ann.flagged && ann.bin(Category::Cyclists).is_some_and(Bin::present) && self.gender_set.insert(ann.image_id.clone()) {
                    self.gender_tasks.push(ann.image_id.clone());
                }
                self.annotations.push(ann);
            }
            Event::Gender { image_id, annotator_id, judgments, ts } => {
                self.gender_by_image.entry(image_id.clone()).or_default().push(self.gender.len());
                self.gender.push(GenderSubmission { image_id, annotator_id, judgments, ts });
            }
            Event::Consensus { image_id, cyclist_index, label } => {
                self.consensus.insert((image_id, cyclist_index), label);
            }
            Event::QaPool { image_ids } => {
                for id in image_ids {
                    if self.qa_set.insert(id.clone()) {
                        self.qa_pool.push(id);
                    }
                }
            }
        }
    }

    fn record(&mut self, event: Event) -> Result<(), AnnotationError> {
        self.log.append(&event)?;
        self.apply(event);
        Ok(())
    }

    fn check_annotator(&self, annotator: &str) -> Result<(), AnnotationError> {
        if self.annotators.contains(annotator) {
            Ok(())
        } else {
            Err(AnnotationError::Auth(annotator.to_string()))
        }
    }

    fn active_leases(&self, kind: TaskKind, image_id: &str, now: DateTime<Utc>) -> impl Iterator<Item = &Lease> {
        self.leases
            .get(&(kind, image_id.to_string()))
            .into_iter()
            .flatten()
            .filter(move |l| l.expires > now)
    }

    fn counts_annotators(&self, image_id: &str) -> impl Iterator<Item = &str> {
        self.by_image
            .get(image_id)
            .into_iter()
            .flatten()
            .map(|&i| self.annotations[i].annotator_id.as_str())
    }

    fn gender_annotators(&self, image_id: &str) -> impl Iterator<Item = &str> {
        self.gender_by_image
            .get(image_id)
            .into_iter()
            .flatten()
            .map(|&i| self.gender[i].annotator_id.as_str())
    }

    /// Leases the next task of `kind` to `annotator`, or `None` when nothing
    /// is left for them.
    pub fn next_task(&mut self, annotator: &str, kind: TaskKind, now: DateTime<Utc>) -> Result<Option<TaskPayload>, AnnotationError> {
        self.check_annotator(annotator)?;
        self.leases.retain(|_, v| {
            v.retain(|l| l.expires > now);
            !v.is_empty()
        });
        let chosen = match kind {
            TaskKind::Counts => self.next_counts(annotator, now),
            TaskKind::Gender => self.next_gender(annotator, now),
        };
        let Some(image_id) = chosen else {
            return Ok(None);
        };
        let expires = now + Duration::minutes(self.cfg.lease_minutes);
        self.leases
            .entry((kind, image_id.clone()))
            .or_default()
            .push(Lease { annotator: annotator.to_string(), expires });
        let locator = self.tasks[self.index[&image_id]].locator.clone();
        Ok(Some(TaskPayload { image_id, locator, kind, expires }))
    }

    fn next_counts(&self, annotator: &str, now: DateTime<Utc>) -> Option<String> {
        let fresh = self.tasks.iter().find(|t| {
            !self.by_image.contains_key(&t.image_id) && self.active_leases(TaskKind::Counts, &t.image_id, now).next().is_none()
        });
        if let Some(t) = fresh {
            return Some(t.image_id.clone());
        }
        self.qa_pool
            .iter()
            .find(|id| {
                let done: Vec<&str> = self.counts_annotators(id).collect();
                done.len() == 1 && done[0] != annotator && self.active_leases(TaskKind::Counts, id, now).next().is_none()
            })
            .cloned()
    }

    fn next_gender(&self, annotator: &str, now: DateTime<Utc>) -> Option<String> {
        self.gender_tasks
            .iter()
            .find(|id| {
                let done: Vec<&str> = self.gender_annotators(id).collect();
                let leased: Vec<&str> = self.active_leases(TaskKind::Gender, id, now).map(|l| l.annotator.as_str()).collect();
                done.len() + leased.len() < self.cfg.gender_raters && !done.contains(&annotator) && !leased.contains(&annotator)
            })
            .cloned()
    }

    fn take_lease(&mut self, kind: TaskKind, image_id: &str, annotator: &str, now: DateTime<Utc>) -> Result<(), AnnotationError> {
        let key = (kind, image_id.to_string());
        let leases = self.leases.get_mut(&key);
        let pos = leases
            .as_ref()
            .and_then(|v| v.iter().position(|l| l.annotator == annotator));
        match (leases, pos) {
            (Some(v), Some(i)) => {
                let lease = v.remove(i);
                if lease.expires <= now {
                    return Err(AnnotationError::Conflict(format!("lease on `{image_id}` expired at {}", lease.expires)));
                }
                Ok(())
            }
            _ => Err(AnnotationError::Conflict(format!("`{image_id}` is not leased to `{annotator}`"))),
        }
    }

    pub fn submit_response(&mut self, mut ann: ImageAnnotation, now: DateTime<Utc>) -> Result<(), AnnotationError> {
        self.check_annotator(&ann.annotator_id)?;
        if !self.index.contains_key(&ann.image_id) {
            return Err(AnnotationError::NotFound(ann.image_id));
        }
        ann.validate()?;
        if self.counts_annotators(&ann.image_id).any(|a| a == ann.annotator_id) {
            return Err(AnnotationError::Conflict(format!(
                "`{}` already annotated `{}`",
                ann.annotator_id, ann.image_id
            )));
        }
        self.take_lease(TaskKind::Counts, &ann.image_id, &ann.annotator_id, now)?;
        if ann.flagged {
            ann.bins.clear();
        }
        ann.ts.get_or_insert(now);
        self.record(Event::Annotation(ann))
    }

    pub fn flag(&mut self, req: FlagRequest, now: DateTime<Utc>) -> Result<(), AnnotationError> {
        self.submit_response(
            ImageAnnotation {
                image_id: req.image_id,
                annotator_id: req.annotator,
                bins: BTreeMap::new(),
                flagged: true,
                reason: Some(req.reason),
                ts: Some(now),
            },
            now,
        )
    }

    /// Records one annotator's labels for every cyclist in a gender image.
    pub fn submit_gender(
        &mut self,
        image_id: &str,
        annotator: &str,
        labels: &[(u32, GenderLabel)],
        now: DateTime<Utc>,
    ) -> Result<(), AnnotationError> {
        self.check_annotator(annotator)?;
        if !self.gender_set.contains(image_id) {
            return Err(AnnotationError::NotFound(image_id.to_string()));
        }
        let mut seen = BTreeSet::new();
        for &(idx, _) in labels {
            if idx == 0 {
                return Err(AnnotationError::Validation("cyclist_index starts at 1".into()));
            }
            if !seen.insert(idx) {
                return Err(AnnotationError::Validation(format!("cyclist {idx} labeled twice")));
            }
        }
        if self.gender_annotators(image_id).any(|a| a == annotator) {
            return Err(AnnotationError::Conflict(format!("`{annotator}` already judged `{image_id}`")));
        }
        self.take_lease(TaskKind::Gender, image_id, annotator, now)?;
        let judgments = labels
            .iter()
            .map(|&(cyclist_index, label)| GenderJudgment {
                image_id: image_id.to_string(),
                cyclist_index,
                annotator_id: annotator.to_string(),
                label,
            })
            .collect();
        self.record(Event::Gender {
            image_id: image_id.to_string(),
            annotator_id: annotator.to_string(),
            judgments,
            ts: now,
        })
    }

    /// Joint label agreed after a disagreement.
    pub fn set_consensus(&mut self, image_id: &str, cyclist_index: u32, label: GenderLabel) -> Result<(), AnnotationError> {
        let judged = self
            .gender_by_image
            .get(image_id)
            .into_iter()
            .flatten()
            .any(|&i| self.gender[i].judgments.iter().any(|j| j.cyclist_index == cyclist_index));
        if !judged {
            return Err(AnnotationError::NotFound(format!("{image_id} cyclist {cyclist_index}")));
        }
        self.record(Event::Consensus { image_id: image_id.to_string(), cyclist_index, label })
    }

    /// Adds round(fraction × candidates) completed images to the
    /// re-assessment pool, allocated to cities in proportion to their
    /// completed counts (largest remainder) and drawn with a seeded shuffle.
    pub fn start_qa(&mut self, fraction: f64, seed: u64) -> Result<Vec<String>, AnnotationError> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(AnnotationError::Validation(format!("QA fraction {fraction} outside [0, 1]")));
        }
        let mut by_city: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for t in &self.tasks {
            let Some(idx) = self.by_image.get(&t.image_id) else { continue };
            if idx.len() == 1 && !self.annotations[idx[0]].flagged && !self.qa_set.contains(&t.image_id) {
                by_city.entry(&t.city_id).or_default().push(&t.image_id);
            }
        }
        let n: usize = by_city.values().map(Vec::len).sum();
        let total = (fraction * n as f64).round() as usize;
        let mut quota: Vec<(usize, f64)> = by_city
            .values()
            .map(|v| {
                let exact = fraction * v.len() as f64;
                (exact.floor() as usize, exact - exact.floor())
            })
            .collect();
        let assigned: usize = quota.iter().map(|q| q.0).sum();
        let mut order: Vec<usize> = (0..quota.len()).collect();
        order.sort_by(|&a, &b| quota[b].1.total_cmp(&quota[a].1).then(a.cmp(&b)));
        for &i in order.iter().take(total.saturating_sub(assigned)) {
            quota[i].0 += 1;
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen = Vec::with_capacity(total);
        for (images, (k, _)) in by_city.into_values().zip(quota) {
            let mut images = images;
            let (picked, _) = images.partial_shuffle(&mut rng, k);
            chosen.extend(picked.iter().map(|s| s.to_string()));
        }
        self.record(Event::QaPool { image_ids: chosen.clone() })?;
        Ok(chosen)
    }

    pub fn progress(&self) -> Progress {
        let mut per_annotator = BTreeMap::new();
        for a in &self.annotations {
            *per_annotator.entry(a.annotator_id.clone()).or_insert(0) += 1;
        }
        let flagged = self.by_image.values().filter(|v| self.annotations[v[0]].flagged).count();
        Progress {
            total: self.tasks.len(),
            completed: self.by_image.len(),
            flagged,
            per_annotator,
            qa_pool: self.qa_pool.len(),
            qa_completed: self.qa_pool.iter().filter(|id| self.by_image.get(*id).is_some_and(|v| v.len() > 1)).count(),
            gender_total: self.gender_tasks.len(),
            gender_completed: self
                .gender_tasks
                .iter()
                .filter(|id| self.gender_by_image.get(*id).is_some_and(|v| v.len() >= self.cfg.gender_raters))
                .count(),
        }
    }

    /// First versus second unflagged rating of every image rated twice.
    pub fn agreement_for(&self, category: Category) -> Result<AgreementStats, AnnotationError> {
        let (mut a, mut b) = (BTreeMap::new(), BTreeMap::new());
        for (image, idx) in &self.by_image {
            if idx.len() < 2 {
                continue;
            }
            let (first, second) = (&self.annotations[idx[0]], &self.annotations[idx[1]]);
            if let (Some(x), Some(y)) = (first.bin(category), second.bin(category)) {
                a.insert(image.clone(), x);
                b.insert(image.clone(), y);
            }
        }
        agreement(Some(category), &a, &b)
    }

    pub fn tasks(&self) -> &[AnnotationTask] {
        &self.tasks
    }

    pub fn task(&self, image_id: &str) -> Option<&AnnotationTask> {
        self.index.get(image_id).map(|&i| &self.tasks[i])
    }

    /// All counts responses in submission order.
    pub fn annotations(&self) -> &[ImageAnnotation] {
        &self.annotations
    }

    pub fn gender_submissions(&self) -> &[GenderSubmission] {
        &self.gender
    }

    pub fn gender_tasks(&self) -> &[String] {
        &self.gender_tasks
    }

    pub fn consensus(&self, image_id: &str, cyclist_index: u32) -> Option<GenderLabel> {
        self.consensus.get(&(image_id.to_string(), cyclist_index)).copied()
    }

    pub fn qa_pool(&self) -> &[String] {
        &self.qa_pool
    }

    pub fn config(&self) -> &QueueConfig {
        &self.cfg
    }

    pub fn snapshot(&self) -> QueueSnapshot {
        QueueSnapshot {
            annotations: self.annotations.clone(),
            gender: self.gender.clone(),
            consensus: self.consensus.clone(),
            qa_pool: self.qa_pool.clone(),
            gender_tasks: self.gender_tasks.clone(),
        }
    }

    pub fn into_log(self) -> L {
        self.log
    }
}
