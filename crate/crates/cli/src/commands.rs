use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use streetcount_core::aggregation::{
    build_dataset, collapse_all, read_aps_csv, read_census_csv, Dataset, APS_COLUMNS, CENSUS_COLUMNS, GSV_PREDICTORS,
    RATIO_COLUMNS,
};
use streetcount_core::annotation::{
    gender_rows, read_annotations_csv, read_tasks_csv, write_annotations_csv, write_gender_csv, write_tasks_csv,
    AnnotationQueue, AnnotationTask, ImageAnnotation, JsonlLog, QueueConfig,
};
use streetcount_core::gender::{group_cities, is_monotonic, tally_by_city, write_gender_report, CityGender};
use streetcount_core::harness::{
    canonical_models, cv_report, default_month_candidates, fit_spec, predict_fixed_dataset, scatter_csv,
    select_variables, Family, ModelSpec, SelectionConfig, TermSpec,
};
use streetcount_core::imagery::{harvest as run_harvest, read_panos_csv, write_panos_csv, ImageryClient, PanoramaMeta, ProviderKind};
use streetcount_core::sampling::{
    load_network, read_points_csv, sample_stage1, sample_stage2, select_stage3, write_points_csv, year_shares,
    SampledLocation,
};
use streetcount_core::stats::{pearson_matrix, Transform};
use streetcount_server::AppState;

use crate::config::RunConfig;
use crate::error::{CliError, Context};
use crate::output::Outputs;
use crate::{
    AggregateArgs, CorrelateArgs, CvArgs, GenderArgs, HarvestArgs, ModelArgs, ReproduceArgs, SampleArgs, SelectArgs,
    ServeArgs,
};

type Written = Result<Vec<PathBuf>, CliError>;

fn input(flag: Option<PathBuf>, configured: Option<&PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    let path = flag
        .or_else(|| configured.cloned())
        .ok_or_else(|| CliError::invalid(format!("missing --{name}")))?;
    if !path.exists() {
        return Err(CliError::invalid(format!("--{name}: {} does not exist", path.display())));
    }
    Ok(path)
}

fn inputs(flags: Vec<PathBuf>, configured: &[PathBuf], name: &str) -> Result<Vec<PathBuf>, CliError> {
    let paths = if flags.is_empty() { configured.to_vec() } else { flags };
    if paths.is_empty() {
        return Err(CliError::invalid(format!("missing --{name}")));
    }
    if let Some(p) = paths.iter().find(|p| !p.exists()) {
        return Err(CliError::invalid(format!("--{name}: {} does not exist", p.display())));
    }
    Ok(paths)
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).runtime(&format!("opening {}", path.display()))
}

fn to_bytes<F, E>(f: F) -> Result<Vec<u8>, CliError>
where
    F: FnOnce(&mut Vec<u8>) -> Result<(), E>,
    E: std::fmt::Display,
{
    let mut buf = Vec::new();
    f(&mut buf).runtime("formatting output")?;
    Ok(buf)
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    Dataset::read_csv(open(path)?).runtime(&format!("reading {}", path.display()))
}

fn load_tasks(paths: &[PathBuf]) -> Result<Vec<AnnotationTask>, CliError> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(read_tasks_csv(open(p)?).runtime(&format!("reading {}", p.display()))?);
    }
    Ok(all)
}

fn imagery_client(cfg: &RunConfig, fixtures: Option<PathBuf>) -> Result<ImageryClient, CliError> {
    let mut pc = cfg.provider.clone();
    if let Some(dir) = fixtures {
        pc.kind = ProviderKind::Fixture;
        pc.fixture_path = Some(dir);
    }
    pc.validate().invalid("provider configuration")?;
    ImageryClient::from_config(pc).invalid("imagery provider")
}

#[derive(Serialize)]
struct SampleReport {
    seed: u64,
    stage1: usize,
    stage2: usize,
    eligible: usize,
    selected: usize,
    shortfall: Option<usize>,
    year_shares: BTreeMap<i32, f64>,
}

pub fn sample(cfg: &RunConfig, out: &Path, a: SampleArgs) -> Written {
    let network = input(a.network, cfg.paths.network.as_ref(), "network")?;
    let seed = a
        .seed
        .or(cfg.seed)
        .ok_or_else(|| CliError::invalid("sampling needs --seed or `seed` in the config"))?;
    let mut stages = cfg.stages.clone();
    stages.rng_seed = seed;
    if let Some(n) = a.stage2_n {
        stages.stage2_n = n;
    }
    if let Some(n) = a.stage3_target {
        stages.stage3_target = n;
    }
    stages.validate().invalid("stage configuration")?;
    let panos = match a.panos.or_else(|| cfg.paths.panos.clone()) {
        Some(p) => Some(input(Some(p), None, "panos")?),
        None => None,
    };

    let links = load_network(&network).runtime("reading network")?;
    let s1 = sample_stage1(&links, seed).runtime("stage 1")?;
    let s2 = sample_stage2(&s1, &stages).runtime("stage 2")?;
    let mut outputs = Outputs::new(out);
    let with_meta: Vec<(SampledLocation, Vec<PanoramaMeta>)> = match panos {
        Some(p) => {
            let by_point = read_panos_csv(open(&p)?).runtime(&format!("reading {}", p.display()))?;
            s2.iter()
                .map(|pt| (pt.clone(), by_point.get(&pt.point_id).cloned().unwrap_or_default()))
                .collect()
        }
        None => {
            let client = imagery_client(cfg, a.fixtures)?;
            let h = run_harvest(&s2, &client, a.workers.unwrap_or(cfg.harvest.workers)).runtime("harvest")?;
            outputs.add("panos.csv", to_bytes(|b| write_panos_csv(b, &h.records))?);
            outputs.add_json("harvest_report.json", &h.report)?;
            h.records
        }
    };
    let sel = select_stage3(&with_meta, &stages).runtime("stage 3")?;
    outputs.add("stage2.csv", to_bytes(|b| write_points_csv(b, &s2))?);
    outputs.add("points.csv", to_bytes(|b| write_points_csv(b, &sel.selected))?);
    outputs.add_json(
        "sample_report.json",
        &SampleReport {
            seed,
            stage1: s1.len(),
            stage2: s2.len(),
            eligible: sel.eligible,
            selected: sel.selected.len(),
            shortfall: sel.shortfall,
            year_shares: year_shares(&sel.selected),
        },
    )?;
    outputs.commit()
}

pub fn harvest(cfg: &RunConfig, out: &Path, a: HarvestArgs) -> Written {
    let points_path = input(a.points, cfg.paths.points.as_ref(), "points")?;
    let city = a.city.or_else(|| cfg.city.clone());
    let client = imagery_client(cfg, a.fixtures)?;
    let points = read_points_csv(open(&points_path)?).runtime(&format!("reading {}", points_path.display()))?;
    let chosen: Vec<&SampledLocation> = points.iter().filter(|p| p.pano.is_some()).collect();
    if !chosen.is_empty() && city.is_none() {
        return Err(CliError::invalid("tasks.csv needs --city or `city` in the config"));
    }

    let h = run_harvest(&points, &client, a.workers.unwrap_or(cfg.harvest.workers)).runtime("harvest")?;
    let mut tasks = Vec::new();
    for p in chosen {
        let pano = p.pano.as_ref().expect("filtered");
        for &heading in &p.headings {
            let img = client.image_request(&pano.pano_id, heading).runtime("image locator")?;
            tasks.push(AnnotationTask {
                image_id: img.image_id(),
                city_id: city.clone().expect("checked"),
                locator: img.url,
                year: pano.year,
                month: pano.month,
            });
        }
    }
    let mut outputs = Outputs::new(out);
    outputs.add("panos.csv", to_bytes(|b| write_panos_csv(b, &h.records))?);
    outputs.add_json("harvest_report.json", &h.report)?;
    outputs.add("tasks.csv", to_bytes(|b| write_tasks_csv(b, &tasks))?);
    outputs.commit()
}

pub fn serve(cfg: &RunConfig, out: &Path, a: ServeArgs) -> Result<(), CliError> {
    let tasks = load_tasks(&inputs(a.tasks, &cfg.paths.tasks, "tasks")?)?;
    let annotators = if a.annotators.is_empty() { cfg.service.annotators.clone() } else { a.annotators };
    if annotators.is_empty() {
        return Err(CliError::invalid("no annotators: pass --annotators or set service.annotators"));
    }
    let bind: SocketAddr = a
        .bind
        .unwrap_or_else(|| cfg.service.bind.clone())
        .parse()
        .invalid("--bind")?;
    let assets = match a.assets.or_else(|| cfg.paths.assets.clone()) {
        Some(p) => Some(input(Some(p), None, "assets")?),
        None => None,
    };
    let qa = a.qa_fraction.or(cfg.service.qa_fraction);
    let seed = a.seed.or(cfg.seed);
    if qa.is_some() && seed.is_none() {
        return Err(CliError::invalid("--qa-fraction needs --seed"));
    }
    let log_path = a.log.or_else(|| cfg.paths.log.clone()).unwrap_or_else(|| out.join("events.jsonl"));
    if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).runtime(&format!("creating {}", dir.display()))?;
    }
    let log = JsonlLog::open(&log_path).runtime(&format!("opening {}", log_path.display()))?;
    let qcfg = QueueConfig { lease_minutes: cfg.service.lease_minutes, gender_raters: cfg.service.gender_raters };
    let mut queue = AnnotationQueue::open(tasks, annotators, qcfg, log).runtime("replaying event log")?;
    if let (Some(f), Some(s)) = (qa, seed) {
        if queue.qa_pool().is_empty() {
            let pool = queue.start_qa(f, s).invalid("QA pool")?;
            log::info!("queued {} images for re-assessment", pool.len());
        }
    }
    let state = Arc::new(AppState::new(queue));
    let rt = tokio::runtime::Runtime::new().runtime("starting runtime")?;
    rt.block_on(streetcount_server::serve(bind, state, assets)).runtime("annotation service")
}

fn replay(log: &Path, tasks: Vec<AnnotationTask>) -> Result<AnnotationQueue<JsonlLog>, CliError> {
    let l = JsonlLog::open(log).runtime(&format!("opening {}", log.display()))?;
    AnnotationQueue::open(tasks, Vec::<String>::new(), QueueConfig::default(), l).runtime("replaying event log")
}

pub fn aggregate(cfg: &RunConfig, out: &Path, a: AggregateArgs) -> Written {
    let tasks = load_tasks(&inputs(a.tasks, &cfg.paths.tasks, "tasks")?)?;
    let census_path = input(a.census, cfg.paths.census.as_ref(), "census")?;
    let aps_path = match a.aps.or_else(|| cfg.paths.aps.clone()) {
        Some(p) => Some(input(Some(p), None, "aps")?),
        None => None,
    };
    let mut outputs = Outputs::new(out);
    let annotations: Vec<ImageAnnotation> = match (a.log, a.annotations) {
        (Some(log), _) => {
            let log = input(Some(log), None, "log")?;
            let q = replay(&log, tasks.clone())?;
            let anns = q.annotations().to_vec();
            let rows = gender_rows(&q).runtime("gender reconciliation")?;
            outputs.add("annotations.csv", to_bytes(|b| write_annotations_csv(b, &anns))?);
            outputs.add("gender.csv", to_bytes(|b| write_gender_csv(b, &rows))?);
            anns
        }
        (None, flag) => {
            let p = input(flag, cfg.paths.annotations.as_ref(), "annotations")?;
            read_annotations_csv(open(&p)?).runtime(&format!("reading {}", p.display()))?
        }
    };
    let counts = collapse_all(&annotations, &tasks).runtime("collapsing annotations")?;
    let census = read_census_csv(open(&census_path)?).runtime(&format!("reading {}", census_path.display()))?;
    let aps = match aps_path {
        Some(p) => read_aps_csv(open(&p)?).runtime(&format!("reading {}", p.display()))?,
        None => BTreeMap::new(),
    };
    let ds = build_dataset(&counts, &census, &aps).runtime("joining outcomes")?;
    outputs.add("dataset.csv", to_bytes(|b| ds.write_csv(b))?);
    outputs.add_json("city_counts.json", &counts)?;
    outputs.commit()
}

fn data_path(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    input(flag, cfg.paths.dataset.as_ref(), "data")
}

pub fn correlate(cfg: &RunConfig, out: &Path, a: CorrelateArgs) -> Written {
    let ds = load_dataset(&data_path(a.data, cfg)?)?;
    let names: Vec<String> = if a.columns.is_empty() {
        GSV_PREDICTORS
            .iter()
            .chain(&CENSUS_COLUMNS)
            .chain(&APS_COLUMNS)
            .filter(|n| ds.column(n).is_some())
            .map(|s| s.to_string())
            .collect()
    } else {
        if let Some(bad) = a.columns.iter().find(|c| ds.column(c).is_none()) {
            return Err(CliError::invalid(format!("dataset has no column `{bad}`")));
        }
        a.columns
    };
    if names.len() < 2 {
        return Err(CliError::invalid("need at least two columns to correlate"));
    }
    let columns: Vec<Vec<Option<f64>>> = names.iter().map(|n| ds.column(n).expect("checked").to_vec()).collect();
    let m = pearson_matrix(&names, &columns);
    let mut outputs = Outputs::new(out);
    outputs.add("correlation.csv", m.to_csv());
    outputs.commit()
}

fn structure_only(mut spec: ModelSpec) -> ModelSpec {
    spec.intercept = None;
    spec.terms.iter_mut().for_each(|t| t.coefficient = None);
    spec
}

fn canonical(id: u32) -> Result<ModelSpec, CliError> {
    canonical_models()
        .into_iter()
        .find(|m| m.model_id == Some(id))
        .ok_or_else(|| CliError::invalid(format!("no canonical model {id}; choose 1 to 10")))
}

fn chosen_spec(m: &ModelArgs) -> Result<Option<ModelSpec>, CliError> {
    if let Some(id) = m.model {
        return Ok(Some(structure_only(canonical(id)?)));
    }
    match &m.spec {
        Some(p) => {
            let p = input(Some(p.clone()), None, "spec")?;
            let text = std::fs::read_to_string(&p).runtime(&format!("reading {}", p.display()))?;
            serde_json::from_str(&text).invalid("model spec").map(Some)
        }
        None => Ok(None),
    }
}

pub fn fit(cfg: &RunConfig, out: &Path, a: ModelArgs) -> Written {
    let single = chosen_spec(&a)?;
    let ds = load_dataset(&data_path(a.data.clone(), cfg)?)?;
    let mut outputs = Outputs::new(out);
    match single {
        Some(spec) => {
            let (_, summary) = fit_spec(&spec, &ds).runtime(&format!("fitting {}", spec.label()))?;
            outputs.add_json(format!("fit_{}.json", spec.label()), &summary)?;
        }
        None => {
            let mut status = Vec::new();
            for spec in canonical_models().into_iter().map(structure_only) {
                match fit_spec(&spec, &ds) {
                    Ok((_, summary)) => {
                        outputs.add_json(format!("fit_{}.json", spec.label()), &summary)?;
                        status.push(json!({ "model": spec.label(), "status": "ok" }));
                    }
                    Err(e) => {
                        log::warn!("{}: {e}", spec.label());
                        status.push(json!({ "model": spec.label(), "status": "failed", "error": e.to_string() }));
                    }
                }
            }
            if status.iter().all(|s| s["status"] == "failed") {
                return Err(CliError::runtime("no model could be fitted"));
            }
            outputs.add_json("fit_summary.json", &status)?;
        }
    }
    outputs.commit()
}

pub fn cv(cfg: &RunConfig, out: &Path, a: CvArgs) -> Written {
    let spec = chosen_spec(&a.model)?.ok_or_else(|| CliError::invalid("cv needs --model or --spec"))?;
    let ds = load_dataset(&data_path(a.model.data.clone(), cfg)?)?;
    let report = cv_report(&spec, &ds).runtime(&format!("cross-validating {}", spec.label()))?;
    let trim: Vec<&str> = a.trim.iter().map(String::as_str).collect();
    let mut outputs = Outputs::new(out);
    outputs.add_json("cv_report.json", &report)?;
    outputs.add(format!("scatter_{}.csv", spec.label()), scatter_csv(&report, &trim));
    outputs.commit()
}

fn parse_family(s: &str) -> Result<Family, CliError> {
    match s {
        "beta" => Ok(Family::Beta),
        "ols" => Ok(Family::Ols),
        "robust" => Ok(Family::Robust),
        other => Err(CliError::invalid(format!("unknown family `{other}`; use beta, ols or robust"))),
    }
}

fn parse_candidate(s: &str) -> Result<TermSpec, CliError> {
    match s.split_once(':') {
        None => Ok(TermSpec::new(s, Transform::Identity)),
        Some((name, "sqrt")) => Ok(TermSpec::new(name, Transform::Sqrt)),
        Some((_, t)) => Err(CliError::invalid(format!("unknown transform `{t}` in `{s}`"))),
    }
}

pub fn select(cfg: &RunConfig, out: &Path, a: SelectArgs) -> Written {
    let family = parse_family(&a.family)?;
    let candidates: Vec<TermSpec> = if a.candidates.is_empty() {
        GSV_PREDICTORS.iter().map(|n| TermSpec::new(n, Transform::Identity)).collect()
    } else {
        a.candidates.iter().map(|c| parse_candidate(c)).collect::<Result<_, _>>()?
    };
    let threshold = a.threshold.unwrap_or(cfg.selection.threshold);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CliError::invalid(format!("threshold {threshold} outside [0, 1]")));
    }
    let ds = load_dataset(&data_path(a.data, cfg)?)?;
    if ds.column(&a.outcome).is_none() {
        return Err(CliError::invalid(format!("dataset has no column `{}`", a.outcome)));
    }
    let months = if a.no_months { Vec::new() } else { default_month_candidates() };
    let sc = SelectionConfig { family, outcome: a.outcome, candidates, months, threshold };
    let sel = select_variables(&sc, &ds).runtime("variable selection")?;
    log::info!("selected terms: {:?}", sel.spec.term_names());
    let mut outputs = Outputs::new(out);
    outputs.add_json("selection_trace.json", &sel)?;
    outputs.commit()
}

#[derive(Debug, Deserialize)]
struct CountRow {
    city_id: String,
    female: u64,
    male: u64,
}

pub fn gender(cfg: &RunConfig, out: &Path, a: GenderArgs) -> Written {
    if a.groups == 0 {
        return Err(CliError::invalid("--groups must be at least 1"));
    }
    let ds = load_dataset(&data_path(a.data, cfg)?)?;
    let census = ds
        .column(RATIO_COLUMNS[0])
        .ok_or_else(|| CliError::invalid(format!("dataset has no `{}` column", RATIO_COLUMNS[0])))?;
    let mut outputs = Outputs::new(out);
    let counts: BTreeMap<String, (u64, u64)> = match (a.log, a.counts) {
        (Some(log), _) => {
            let log = input(Some(log), None, "log")?;
            let tasks = load_tasks(&inputs(a.tasks, &cfg.paths.tasks, "tasks")?)?;
            let q = replay(&log, tasks)?;
            let rows = gender_rows(&q).runtime("gender reconciliation")?;
            outputs.add("gender.csv", to_bytes(|b| write_gender_csv(b, &rows))?);
            tally_by_city(&rows).into_iter().map(|(c, t)| (c, (t.female, t.male))).collect()
        }
        (None, flag) => {
            let p = input(flag, cfg.paths.gender_counts.as_ref(), "counts")?;
            let mut r = csv_reader(&p)?;
            let mut m = BTreeMap::new();
            for row in r.deserialize() {
                let row: CountRow = row.runtime(&format!("reading {}", p.display()))?;
                m.insert(row.city_id, (row.female, row.male));
            }
            m
        }
    };
    let row_of: HashMap<&str, usize> = ds.cities().iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let survey = |name: &str, i: usize| ds.column(name).and_then(|c| c[i]);
    let mut cities = Vec::with_capacity(counts.len());
    for (city, (female, male)) in counts {
        let i = *row_of
            .get(city.as_str())
            .ok_or_else(|| CliError::runtime(format!("city `{city}` is not in the dataset")))?;
        let census_ratio = census[i].ok_or_else(|| CliError::runtime(format!("city `{city}` has no Census ratio")))?;
        cities.push(CityGender {
            census_ratio,
            female,
            male,
            aps_all_ratio: survey(RATIO_COLUMNS[1], i),
            aps_utly_ratio: survey(RATIO_COLUMNS[2], i),
            city_id: city,
        });
    }
    let groups = group_cities(&cities, a.groups).runtime("grouping cities")?;
    if !is_monotonic(&groups) {
        log::warn!("observed ratios do not rise across Census-ordered groups");
    }
    outputs.add("gender_report.csv", to_bytes(|b| write_gender_report(b, &groups))?);
    outputs.commit()
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>, CliError> {
    Ok(csv::Reader::from_reader(open(path)?))
}

pub fn reproduce(cfg: &RunConfig, out: &Path, a: ReproduceArgs) -> Written {
    let specs = match a.model {
        Some(id) => vec![canonical(id)?],
        None => canonical_models(),
    };
    let ds = load_dataset(&data_path(a.data, cfg)?)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "city_id", "observed", "predicted"]).runtime("formatting output")?;
    let mut evaluated = 0;
    for spec in &specs {
        let preds = match predict_fixed_dataset(spec, &ds) {
            Ok(p) => p,
            Err(e) if a.model.is_none() => {
                log::info!("skipping {}: {e}", spec.label());
                continue;
            }
            Err(e) => return Err(CliError::runtime(format!("{}: {e}", spec.label()))),
        };
        evaluated += 1;
        for p in preds {
            w.write_record([
                spec.label(),
                p.city,
                p.observed.map_or(String::new(), |v| v.to_string()),
                p.predicted.to_string(),
            ])
            .runtime("formatting output")?;
        }
    }
    if evaluated == 0 {
        return Err(CliError::runtime("the data has the predictors of no canonical model"));
    }
    let bytes = w.into_inner().map_err(|e| CliError::runtime(e.to_string()))?;
    let mut outputs = Outputs::new(out);
    outputs.add("reproduce.csv", bytes);
    outputs.commit()
}
