use std::collections::{BTreeMap, BTreeSet};
use std::io;

use chrono::{DateTime, Utc};

use super::log::EventLog;
use super::queue::AnnotationQueue;
use super::{reconcile_gender, AnnotationError, AnnotationTask, Bin, Category, GenderJudgment, GenderLabel, ImageAnnotation, Resolved};

const TASK_HEADER: [&str; 5] = ["image_id", "city_id", "locator", "year", "month"];

pub fn write_tasks_csv<W: io::Write>(out: W, tasks: &[AnnotationTask]) -> Result<(), AnnotationError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TASK_HEADER)?;
    for t in tasks {
        w.write_record([&t.image_id, &t.city_id, &t.locator, &t.year.to_string(), &t.month.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tasks_csv<R: io::Read>(input: R) -> Result<Vec<AnnotationTask>, AnnotationError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in r.deserialize() {
        let t: AnnotationTask = rec?;
        if !(1..=12).contains(&t.month) {
            return Err(AnnotationError::Validation(format!("task `{}` has month {}", t.image_id, t.month)));
        }
        out.push(t);
    }
    Ok(out)
}

fn annotation_header() -> Vec<&'static str> {
    let mut h = vec!["image_id", "annotator_id"];
    h.extend(Category::ALL.iter().map(|c| c.csv_column()));
    h.extend(["flagged", "ts"]);
    h
}

pub fn write_annotations_csv<W: io::Write>(out: W, annotations: &[ImageAnnotation]) -> Result<(), AnnotationError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(annotation_header())?;
    for a in annotations {
        let mut rec = vec![a.image_id.clone(), a.annotator_id.clone()];
        rec.extend(Category::ALL.iter().map(|&c| a.bin(c).map_or(String::new(), |b| b.as_str().to_string())));
        rec.push(a.flagged.to_string());
        rec.push(a.ts.map_or(String::new(), |t| t.to_rfc3339()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_annotations_csv<R: io::Read>(input: R) -> Result<Vec<ImageAnnotation>, AnnotationError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let expected = annotation_header();
    if header.iter().ne(expected.iter().copied()) {
        return Err(AnnotationError::Validation(format!("annotations header must be {}", expected.join(","))));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut bins = BTreeMap::new();
        for (i, c) in Category::ALL.iter().enumerate() {
            let cell = &rec[2 + i];
            if !cell.is_empty() {
                bins.insert(*c, cell.parse::<Bin>()?);
            }
        }
        let flagged = match &rec[9] {
            "true" => true,
            "false" => false,
            other => return Err(AnnotationError::Validation(format!("flagged must be true/false, got `{other}`"))),
        };
        let ts = match &rec[10] {
            "" => None,
            s => Some(
                DateTime::parse_from_rfc3339(s)
                    .map_err(|e| AnnotationError::Validation(format!("bad timestamp `{s}`: {e}")))?
                    .with_timezone(&Utc),
            ),
        };
        let ann = ImageAnnotation {
            image_id: rec[0].to_string(),
            annotator_id: rec[1].to_string(),
            bins,
            flagged,
            reason: None,
            ts,
        };
        ann.validate()?;
        out.push(ann);
    }
    Ok(out)
}

/// One judged cyclist. `resolved` is `None` while fewer than two raters
/// have submitted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenderRow {
    pub image_id: String,
    pub city_id: String,
    pub cyclist_index: u32,
    pub label_a: Option<GenderLabel>,
    pub label_b: Option<GenderLabel>,
    pub resolved: Option<Resolved>,
}

/// Reconciles every cyclist in every gender image. A cyclist seen by only
/// one of two raters counts as a disagreement.
pub fn gender_rows<L: EventLog>(queue: &AnnotationQueue<L>) -> Result<Vec<GenderRow>, AnnotationError> {
    let mut by_image: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in queue.gender_submissions().iter().enumerate() {
        by_image.entry(&s.image_id).or_default().push(i);
    }
    let subs = queue.gender_submissions();
    let mut rows = Vec::new();
    for image_id in queue.gender_tasks() {
        let Some(idx) = by_image.get(image_id.as_str()) else { continue };
        let city_id = queue.task(image_id).map(|t| t.city_id.clone()).unwrap_or_default();
        let a = &subs[idx[0]];
        let b = idx.get(1).map(|&i| &subs[i]);
        let cyclists: BTreeSet<u32> = idx
            .iter()
            .take(2)
            .flat_map(|&i| subs[i].judgments.iter().map(|j| j.cyclist_index))
            .collect();
        let find = |s: &super::GenderSubmission, k: u32| s.judgments.iter().find(|j| j.cyclist_index == k).cloned();
        for k in cyclists {
            let ja: Option<GenderJudgment> = find(a, k);
            let jb: Option<GenderJudgment> = b.and_then(|b| find(b, k));
            let consensus = queue.consensus(image_id, k);
            let resolved = match (&ja, &jb, b) {
                (Some(x), Some(y), _) => Some(reconcile_gender(&[x.clone(), y.clone()], consensus)?),
                (_, _, Some(_)) => Some(match consensus {
                    Some(GenderLabel::Male) => Resolved::Male,
                    Some(GenderLabel::Female) => Resolved::Female,
                    Some(GenderLabel::Child) => Resolved::Child,
                    _ => Resolved::Excluded,
                }),
                _ => None,
            };
            rows.push(GenderRow {
                image_id: image_id.clone(),
                city_id: city_id.clone(),
                cyclist_index: k,
                label_a: ja.map(|j| j.label),
                label_b: jb.map(|j| j.label),
                resolved,
            });
        }
    }
    Ok(rows)
}

pub fn write_gender_csv<W: io::Write>(out: W, rows: &[GenderRow]) -> Result<(), AnnotationError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["image_id", "cyclist_index", "label_a", "label_b", "resolved"])?;
    for r in rows {
        w.write_record([
            r.image_id.as_str(),
            &r.cyclist_index.to_string(),
            r.label_a.map_or("", GenderLabel::as_str),
            r.label_b.map_or("", GenderLabel::as_str),
            r.resolved.map_or("pending", Resolved::as_str),
        ])?;
    }
    w.flush()?;
    Ok(())
}
