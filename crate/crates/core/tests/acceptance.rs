//! Acceptance checks, one line per criterion. Run with
//! `cargo test -p streetcount-core --test acceptance`.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;
use std::fmt::Display;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use num_rational::Ratio;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta as BetaDist, Binomial, Distribution, Normal};
use statrs::distribution::{Beta as BetaPdf, Continuous};

use streetcount_core::aggregation::{build_dataset, census_mode_shares, collapse_all, CensusCounts, Dataset};
use streetcount_core::annotation::{agreement, kappa_from_table, AnnotationTask, Bin, Category, ImageAnnotation};
use streetcount_core::gender::{format_ratio_2dp, group_cities, gsv_group_ratio, CityGender};
use streetcount_core::geo::{haversine_m, LatLon};
use streetcount_core::harness::{
    canonical_models, cv_report, fit_spec, loocv, metrics, predict_fixed, select_variables, Family, ModelSpec,
    SelectionConfig, TermSpec,
};
use streetcount_core::imagery::PanoramaMeta;
use streetcount_core::sampling::{
    sample_stage1, sample_stage2, select_stage3, write_points_csv, HeadingPair, RoadLink, SampledLocation, Stage,
    StageConfig,
};
use streetcount_core::stats::{
    beta_gradient, beta_loglik, espinheira_residuals, fit_beta, fit_huber, fit_huber_with, logistic, BetaFit,
    DesignMatrix, HuberOptions, ResidualParts, Transform,
};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

fn e<E: Display>(err: E) -> String {
    err.to_string()
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check, Option<u64>); 10] = [
        ("reproduction mode (cycle commute model)", reproduction, Some(1)),
        ("gender ratios", gender_ratios, Some(1)),
        ("beta regression", beta_regression, Some(10)),
        ("loocv and press", loocv_press, None),
        ("robust regression", robust_regression, None),
        ("variable selection", variable_selection, None),
        ("sampling determinism and priority", sampling, None),
        ("end-to-end synthetic pipeline", end_to_end, Some(60)),
        ("agreement statistics", agreement_stats, None),
        ("standardized residuals", standardized_residuals, None),
    ];
    let mut failed = 0;
    for (name, run, limit) in criteria {
        let start = Instant::now();
        let mut outcome = run();
        let took = start.elapsed();
        if let (Ok(_), Some(secs)) = (&outcome, limit) {
            if took > Duration::from_secs(secs) {
                outcome = Err(format!("took {:.2} s, limit {secs} s", took.as_secs_f64()));
            }
        }
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{:.2} s]", took.as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{:.2} s]", took.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn reproduction() -> Check {
    let model = canonical_models().into_iter().find(|m| m.model_id == Some(2)).ok_or("model 2 missing")?;
    let oracle = |g: f64| 1.0 / (1.0 + (4.877 - 0.408 * g.sqrt()).exp());
    let mut out = Vec::new();
    for (g, target, tol) in [(94.0, 0.285, 0.001), (0.0, 0.0076, 0.0002)] {
        let row = BTreeMap::from([("gsv_cycle".to_string(), g)]);
        let mu = predict_fixed(&model, &row).map_err(e)?;
        ensure!((mu - oracle(g)).abs() <= 1e-12, "mu({g}) = {mu}, oracle {}", oracle(g));
        ensure!((mu - target).abs() <= tol, "mu({g}) = {mu}, expected {target} ± {tol}");
        out.push(format!("mu({g}) = {mu:.5}"));
    }
    Ok(out.join(", "))
}

/// Cities in ascending Census-ratio order whose optimal four-way split has
/// the group counts 28/33, 18/42, 18/39 and 18/58.
fn gender_fixture() -> Vec<CityGender> {
    let mut fm: Vec<(u64, u64)> = vec![(28, 33), (9, 21), (9, 21), (5, 10), (4, 10), (5, 9), (4, 10), (6, 24)];
    fm.extend([(1, 2); 4]);
    fm.extend([(1, 1); 8]);
    fm.extend([(0, 2); 9]);
    fm.iter()
        .enumerate()
        .rev()
        .map(|(i, &(female, male))| CityGender {
            city_id: format!("city{:02}", i + 1),
            census_ratio: 1.0 + 0.05 * i as f64,
            female,
            male,
            aps_all_ratio: None,
            aps_utly_ratio: None,
        })
        .collect()
}

fn gender_ratios() -> Check {
    let table = [((172, 82), "2.10"), ((33, 28), "1.18"), ((42, 18), "2.33"), ((39, 18), "2.17"), ((58, 18), "3.22")];
    for ((male, female), text) in table {
        let r = gsv_group_ratio(male, female).ok_or("ratio undefined")?;
        ensure!(r == Ratio::new(male, female), "{male}/{female} gave {r}");
        ensure!(format_ratio_2dp(&r) == text, "{male}/{female} printed {}, expected {text}", format_ratio_2dp(&r));
    }
    let groups = group_cities(&gender_fixture(), 4).map_err(e)?;
    let split: Vec<(u64, u64)> = groups.iter().map(|g| (g.female, g.male)).collect();
    ensure!(split == [(28, 33), (18, 42), (18, 39), (18, 58)], "groups {split:?}");
    let printed: Vec<String> = groups.iter().map(|g| g.gsv_ratio.map_or("NA".into(), |r| format_ratio_2dp(&r))).collect();
    ensure!(printed == ["1.18", "2.33", "2.17", "3.22"], "group ratios {printed:?}");
    let (f, m) = split.iter().fold((0, 0), |(f, m), g| (f + g.0, m + g.1));
    let all = format_ratio_2dp(&gsv_group_ratio(m, f).ok_or("overall ratio undefined")?);
    ensure!(all == "2.10", "overall {all}");
    Ok(format!("overall {all}, groups {}", printed.join(" ")))
}

fn oracle_loglik(x: &[f64], y: &[f64], b0: f64, b1: f64, phi: f64) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let mu = 1.0 / (1.0 + (-(b0 + b1 * xi)).exp());
            match BetaPdf::new(mu * phi, (1.0 - mu) * phi) {
                Ok(d) => d.ln_pdf(yi),
                Err(_) => f64::NEG_INFINITY,
            }
        })
        .sum()
}

fn simplex_search(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], step: f64) -> (Vec<f64>, f64) {
    let d = x0.len();
    let mut pts: Vec<(Vec<f64>, f64)> = (0..=d)
        .map(|i| {
            let mut p = x0.to_vec();
            if i > 0 {
                p[i - 1] += step;
            }
            let v = f(&p);
            (p, v)
        })
        .collect();
    for _ in 0..20_000 {
        pts.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = pts[d].1 - pts[0].1;
        let size = pts[1..]
            .iter()
            .flat_map(|p| p.0.iter().zip(&pts[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread <= 1e-13 * (1.0 + pts[0].1.abs()) && size < 1e-7 {
            break;
        }
        let centroid: Vec<f64> = (0..d).map(|j| pts[..d].iter().map(|p| p.0[j]).sum::<f64>() / d as f64).collect();
        let worst = pts[d].0.clone();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&worst).map(|(c, w)| c + t * (c - w)).collect() };
        let xr = along(1.0);
        let fr = f(&xr);
        if fr < pts[0].1 {
            let xe = along(2.0);
            let fe = f(&xe);
            pts[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < pts[d - 1].1 {
            pts[d] = (xr, fr);
        } else {
            let xc = if fr < pts[d].1 { along(0.5) } else { along(-0.5) };
            let fc = f(&xc);
            if fc < fr.min(pts[d].1) {
                pts[d] = (xc, fc);
            } else {
                let best = pts[0].0.clone();
                for p in pts.iter_mut().skip(1) {
                    p.0 = best.iter().zip(&p.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    p.1 = f(&p.0);
                }
            }
        }
    }
    pts.sort_by(|a, b| a.1.total_cmp(&b.1));
    pts.swap_remove(0)
}

/// Nelder-Mead restarted from its own answer until the objective stops improving.
fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, start: &[f64]) -> Vec<f64> {
    let (mut best, mut fbest) = simplex_search(f, start, 0.5);
    for _ in 0..20 {
        let (x, fx) = simplex_search(f, &best, 0.05);
        let gain = fbest - fx;
        if fx < fbest {
            best = x;
            fbest = fx;
        }
        if gain <= 1e-12 {
            break;
        }
    }
    best
}

fn beta_regression() -> Check {
    let (b0, b1, phi) = (-1.0, 2.0, 50.0);
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let x: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|&xi| {
            let mu = logistic(b0 + b1 * xi);
            BetaDist::new(mu * phi, (1.0 - mu) * phi).unwrap().sample(&mut rng)
        })
        .collect();
    let design = DesignMatrix::from_columns(&["x"], &[x.clone()]).map_err(e)?;
    let fit = fit_beta(&design, &y).map_err(e)?;
    let mut z = Vec::new();
    for (j, truth) in [b0, b1].into_iter().enumerate() {
        let dev = (fit.coefficients[j] - truth).abs() / fit.std_errors[j];
        ensure!(dev <= 3.0, "coefficient {j} = {} is {dev:.2} SE from {truth}", fit.coefficients[j]);
        z.push(dev);
    }

    let nll = |t: &[f64]| -oracle_loglik(&x, &y, t[0], t[1], t[2].exp());
    let generic = nelder_mead(&nll, &[0.0, 0.0, 10f64.ln()]);
    let gap = (0..2).map(|j| (fit.coefficients[j] - generic[j]).abs()).fold(0.0, f64::max);
    ensure!(gap <= 1e-4, "Newton {:?} vs Nelder-Mead {:?}", fit.coefficients, &generic[..2]);

    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let beta = vec![rng.random_range(-2.0..0.0), rng.random_range(1.0..3.0)];
        let phi = rng.random_range(10.0..100.0);
        let ll = beta_loglik(&design, &y, &beta, phi);
        let reference = oracle_loglik(&x, &y, beta[0], beta[1], phi);
        ensure!((ll - reference).abs() <= 1e-8 * reference.abs(), "log-likelihood {ll} vs {reference}");
        let g = beta_gradient(&design, &y, &beta, phi);
        for j in 0..3 {
            let at = |h: f64| {
                let (mut b, mut p) = (beta.clone(), phi);
                if j < 2 {
                    b[j] += h;
                } else {
                    p += h;
                }
                beta_loglik(&design, &y, &b, p)
            };
            let h = 1e-3 * if j < 2 { beta[j].abs().max(1.0) } else { phi };
            let fd = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
            let rel = (g[j] - fd).abs() / g[j].abs().max(fd.abs());
            worst = worst.max(rel);
        }
    }
    ensure!(worst <= 1e-5, "gradient relative error {worst:.2e}");
    Ok(format!(
        "beta = ({:.4}, {:.4}) at {:.2}/{:.2} SE, optimizer gap {gap:.1e}, gradient rel err {worst:.1e}",
        fit.coefficients[0], fit.coefficients[1], z[0], z[1]
    ))
}

fn column(values: &[f64]) -> Vec<Option<f64>> {
    values.iter().map(|&v| Some(v)).collect()
}

fn loocv_press() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n: usize = rng.random_range(8..30);
        let p: usize = rng.random_range(1..=3);
        let cols: Vec<Vec<f64>> = (0..p).map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 1.0 + cols.iter().enumerate().map(|(j, c)| (j as f64 + 0.5) * c[i]).sum::<f64>() + noise.sample(&mut rng))
            .collect();
        let cities: Vec<String> = (0..n).map(|i| format!("c{i:02}")).collect();
        let mut ds = Dataset::new(cities.clone()).map_err(e)?;
        let names: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
        for (name, c) in names.iter().zip(&cols) {
            ds.push_column(name, column(c)).map_err(e)?;
        }
        ds.push_column("y", column(&y)).map_err(e)?;
        let spec = ModelSpec::new(Family::Ols, "y", names.iter().map(|nm| TermSpec::new(nm, Transform::Identity)).collect());
        let cv = loocv(&spec, &ds).map_err(e)?;
        ensure!(cv.pairs.len() == n, "{} pairs for {n} rows", cv.pairs.len());

        let x = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { cols[j - 1][i] });
        let xtx_inv = (x.transpose() * &x).try_inverse().ok_or("singular fixture")?;
        let beta = &xtx_inv * x.transpose() * DVector::from_column_slice(&y);
        let hat = &x * &xtx_inv * x.transpose();
        for (i, city) in cities.iter().enumerate() {
            let resid = y[i] - (x.row(i) * &beta)[(0, 0)];
            let deleted = resid / (1.0 - hat[(i, i)]);
            let pair = cv.pairs.iter().find(|q| &q.city == city).ok_or("missing pair")?;
            worst = worst.max((deleted - (pair.observed - pair.predicted)).abs());
        }
    }
    ensure!(worst <= 1e-10, "deleted-residual mismatch {worst:.2e}");

    let mut ds = Dataset::new(vec!["a".into(), "b".into(), "c".into()]).map_err(e)?;
    ds.push_column("y", column(&[0.0, 1.0, 0.0])).map_err(e)?;
    let cv = loocv(&ModelSpec::new(Family::Ols, "y", Vec::new()), &ds).map_err(e)?;
    let preds: Vec<f64> = cv.pairs.iter().map(|p| p.predicted).collect();
    ensure!(preds == [0.5, 0.0, 0.5], "out-of-fold predictions {preds:?}");
    let m = metrics(&cv.pairs).map_err(e)?;
    ensure!(m.press == 1.5 && m.mae == 2.0 / 3.0 && m.mdae == 0.5, "press {} mae {} mdae {}", m.press, m.mae, m.mdae);
    Ok(format!("max identity error {worst:.1e} over 20 fixtures; press 1.5, mae 2/3, mdae 0.5"))
}

fn wls_line(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64) {
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..x.len() {
        sw += w[i];
        sx += w[i] * x[i];
        sy += w[i] * y[i];
        sxx += w[i] * x[i] * x[i];
        sxy += w[i] * x[i] * y[i];
    }
    let slope = (sw * sxy - sx * sy) / (sw * sxx - sx * sx);
    ((sy - slope * sx) / sw, slope)
}

fn huber_oracle(x: &[f64], y: &[f64], k: f64) -> (f64, f64) {
    let (mut a, mut b) = wls_line(x, y, &vec![1.0; x.len()]);
    for _ in 0..50 {
        let r: Vec<f64> = x.iter().zip(y).map(|(xi, yi)| yi - a - b * xi).collect();
        let mut abs: Vec<f64> = r.iter().map(|v| v.abs()).collect();
        abs.sort_by(f64::total_cmp);
        let mid = abs.len() / 2;
        let med = if abs.len() % 2 == 1 { abs[mid] } else { 0.5 * (abs[mid - 1] + abs[mid]) };
        let mut s = med / 0.6745;
        if s == 0.0 {
            s = abs.iter().sum::<f64>() / abs.len() as f64;
            if s == 0.0 {
                break;
            }
        }
        let w: Vec<f64> = r.iter().map(|v| if v.abs() <= k * s { 1.0 } else { k * s / v.abs() }).collect();
        let (na, nb) = wls_line(x, y, &w);
        let change = (na - a).abs().max((nb - b).abs());
        (a, b) = (na, nb);
        if change < 1e-8 {
            break;
        }
    }
    (a, b)
}

fn robust_regression() -> Check {
    let x = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
    let y = [0.0, 1.0, 2.0, 3.0, 4.0, 50.0];
    let design = DesignMatrix::from_columns(&["x"], &[x.to_vec()]).map_err(e)?;
    let fit = fit_huber(&design, &y).map_err(e)?;
    let (oa, ob) = huber_oracle(&x, &y, 1.345);
    let gap = (fit.coefficients[0] - oa).abs().max((fit.coefficients[1] - ob).abs());
    ensure!(gap <= 1e-6, "IRLS {:?} vs oracle ({oa}, {ob})", fit.coefficients);

    let (la, lb) = wls_line(&x, &y, &[1.0; 6]);
    let wide = fit_huber_with(&design, &y, HuberOptions { k: 1e6, ..HuberOptions::default() }).map_err(e)?;
    let ols_gap = (wide.coefficients[0] - la).abs().max((wide.coefficients[1] - lb).abs());
    ensure!(ols_gap <= 1e-8, "k = 1e6 gives {:?}, OLS ({la}, {lb})", wide.coefficients);

    let slope = fit.coefficients[1];
    ensure!((slope - 1.0).abs() < (lb - 1.0).abs(), "robust slope {slope} not closer to 1 than OLS {lb}");
    Ok(format!("slope {slope:.4} vs OLS {lb:.4}, oracle gap {gap:.1e}, large-k gap {ols_gap:.1e}"))
}

/// Response driven by `x1`; `x2` is either built orthogonal to the sample
/// response or drawn independently of everything.
fn selection_data(seed: u64, orthogonal: bool) -> Result<Dataset, String> {
    let n = 60;
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let x1: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
    let y: Vec<f64> = x1
        .iter()
        .map(|&v| {
            let mu = logistic(-2.0 + 0.25 * v);
            BetaDist::new(mu * 40.0, (1.0 - mu) * 40.0).unwrap().sample(&mut rng)
        })
        .collect();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let z: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    let x2: Vec<f64> = if orthogonal {
        let (zm, ym) = (z.iter().sum::<f64>() / n as f64, y.iter().sum::<f64>() / n as f64);
        let zc: Vec<f64> = z.iter().map(|v| v - zm).collect();
        let yc: Vec<f64> = y.iter().map(|v| v - ym).collect();
        let proj = zc.iter().zip(&yc).map(|(a, b)| a * b).sum::<f64>() / yc.iter().map(|v| v * v).sum::<f64>();
        zc.iter().zip(&yc).map(|(a, b)| 5.0 + a - proj * b).collect()
    } else {
        z.iter().map(|v| 5.0 + v).collect()
    };
    let mut ds = Dataset::new((0..n).map(|i| format!("c{i:02}")).collect()).map_err(e)?;
    ds.push_column("x1", column(&x1)).map_err(e)?;
    ds.push_column("x2", column(&x2)).map_err(e)?;
    ds.push_column("y", column(&y)).map_err(e)?;
    Ok(ds)
}

fn variable_selection() -> Check {
    let cfg = SelectionConfig {
        family: Family::Beta,
        outcome: "y".into(),
        candidates: vec![TermSpec::new("x1", Transform::Identity), TermSpec::new("x2", Transform::Identity)],
        months: Vec::new(),
        threshold: 0.1,
    };
    let (mut hits, mut independent_hits) = (0, 0);
    for seed in 0..50 {
        for orthogonal in [true, false] {
            let sel = select_variables(&cfg, &selection_data(seed, orthogonal)?).map_err(e)?;
            let press = sel.accepted_press();
            ensure!(press.windows(2).all(|w| w[1] < w[0]), "seed {seed}: PRESS sequence {press:?}");
            let names = sel.spec.term_names();
            let right = names.contains(&"x1") && !names.contains(&"x2");
            match (orthogonal, right) {
                (true, true) => hits += 1,
                (false, true) => independent_hits += 1,
                _ => {}
            }
        }
    }
    ensure!(hits >= 45, "correct model in {hits}/50 runs");
    Ok(format!("correct in {hits}/50 runs; independent decoy (informational) {independent_hits}/50"))
}

fn location(id: &str, link: &str) -> SampledLocation {
    SampledLocation {
        point_id: id.into(),
        link_id: link.into(),
        lat: 52.0,
        lon: 0.1,
        stage: Stage::Stage2,
        headings: Vec::new(),
        pano: None,
    }
}

/// Rank every eligible point by (year priority, shuffle key, input position)
/// and keep the first `target`.
fn stage3_oracle(input: &[(SampledLocation, Vec<PanoramaMeta>)], cfg: &StageConfig) -> (Vec<(String, String)>, usize) {
    let mut keys = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    keys.set_stream(3);
    let mut seen = HashSet::new();
    let mut ranked = Vec::new();
    for (idx, (point, panos)) in input.iter().enumerate() {
        if !seen.insert(point.point_id.clone()) {
            continue;
        }
        let best = panos
            .iter()
            .filter_map(|p| cfg.year_priority.iter().position(|&y| y == p.year).map(|r| (r, std::cmp::Reverse(p.month), p.pano_id.clone())))
            .min();
        if let Some((rank, _, pano)) = best {
            ranked.push((rank, keys.next_u64(), idx, point.point_id.clone(), pano));
        }
    }
    let eligible = ranked.len();
    ranked.sort();
    (ranked.into_iter().take(cfg.stage3_target).map(|r| (r.3, r.4)).collect(), eligible)
}

fn sampling() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let years = [2007, 2008, 2009, 2010, 2011, 2012, 2013];
    for fixture in 0..200 {
        let n: usize = rng.random_range(1..40);
        let mut input = Vec::new();
        for i in 0..n {
            let id = if i > 0 && rng.random_bool(0.1) { format!("p{}", rng.random_range(0..i)) } else { format!("p{i}") };
            let panos = (0..rng.random_range(0..4))
                .map(|_| PanoramaMeta {
                    pano_id: format!("pano{}", rng.random_range(0..30)),
                    year: years[rng.random_range(0..years.len())],
                    month: rng.random_range(1..=12),
                    lat: 52.0,
                    lon: 0.1,
                    distance_m: 1.0,
                })
                .collect();
            input.push((location(&id, &format!("L{i}")), panos));
        }
        let mut priority = years.to_vec();
        for i in (1..priority.len()).rev() {
            priority.swap(i, rng.random_range(0..=i));
        }
        priority.truncate(rng.random_range(1..=5));
        let target = rng.random_range(1..=n + 3);
        let cfg = StageConfig {
            stage2_n: target.max(n),
            stage3_target: target,
            year_priority: priority,
            heading_pair: HeadingPair::Deg90_270,
            rng_seed: rng.next_u64(),
        };
        let got = select_stage3(&input, &cfg).map_err(e)?;
        let (want, eligible) = stage3_oracle(&input, &cfg);
        let picked: Vec<(String, String)> =
            got.selected.iter().map(|s| (s.point_id.clone(), s.pano.as_ref().map_or(String::new(), |p| p.pano_id.clone()))).collect();
        ensure!(picked == want, "fixture {fixture}: selected {picked:?}, oracle {want:?}");
        ensure!(got.eligible == eligible, "fixture {fixture}: eligible {} vs {eligible}", got.eligible);
        ensure!(got.shortfall == (want.len() < target).then(|| target - want.len()), "fixture {fixture}: shortfall {:?}", got.shortfall);
        ensure!(got.selected.iter().all(|s| s.headings == [90.0, 270.0]), "fixture {fixture}: headings");
    }

    let run = |seed: u64| -> Result<Vec<u8>, String> {
        let links: Vec<RoadLink> = (0..50)
            .map(|i| {
                let lat = 52.0 + 0.001 * i as f64;
                RoadLink::new(format!("L{i}"), vec![LatLon::new(lat, 0.1), LatLon::new(lat + 0.002, 0.103)])
            })
            .collect::<Result<_, _>>()
            .map_err(e)?;
        let cfg = StageConfig { stage2_n: 30, stage3_target: 12, rng_seed: seed, ..StageConfig::default() };
        let s1 = sample_stage1(&links, seed).map_err(e)?;
        let s2 = sample_stage2(&s1, &cfg).map_err(e)?;
        let with_meta: Vec<(SampledLocation, Vec<PanoramaMeta>)> = s2
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                let pano = PanoramaMeta {
                    pano_id: format!("pano{i}"),
                    year: [2011, 2010, 2008, 2006][i % 4],
                    month: (1 + i % 12) as u8,
                    lat: p.lat,
                    lon: p.lon,
                    distance_m: 0.0,
                };
                (p, vec![pano])
            })
            .collect();
        let s3 = select_stage3(&with_meta, &cfg).map_err(e)?;
        let mut bytes = Vec::new();
        write_points_csv(&mut bytes, &s3.selected).map_err(e)?;
        Ok(bytes)
    };
    let first = run(2011)?;
    ensure!(first == run(2011)?, "same seed gave different points.csv");
    ensure!(first != run(2012)?, "different seeds gave identical points.csv");

    let start = LatLon::new(52.0, 0.1);
    let end = LatLon::new(52.0 + (1000.0 / 6_371_008.8f64).to_degrees(), 0.1);
    let length = haversine_m(start, end);
    let links: Vec<RoadLink> =
        (0..10_000).map(|i| RoadLink::new(format!("L{i}"), vec![start, end])).collect::<Result<_, _>>().map_err(e)?;
    let mut along: Vec<f64> =
        sample_stage1(&links, 99).map_err(e)?.iter().map(|p| 1000.0 * haversine_m(start, LatLon::new(p.lat, p.lon)) / length).collect();
    along.sort_by(f64::total_cmp);
    let q: Vec<f64> = [2500, 5000, 7500].iter().map(|&i| along[i]).collect();
    for (got, want) in q.iter().zip([250.0, 500.0, 750.0]) {
        ensure!((got - want).abs() <= 20.0, "quartile {got:.1} m, expected {want} m ± 20 m");
    }
    Ok(format!("200 oracle fixtures, byte-identical rerun, quartiles {:.1}/{:.1}/{:.1} m", q[0], q[1], q[2]))
}

fn end_to_end() -> Check {
    let (a, b, phi) = (-4.5, 0.4, 150.0);
    let images = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mut tasks = Vec::new();
    let mut annotations = Vec::new();
    let mut census = BTreeMap::new();
    let mut expected = Vec::new();
    for c in 0..30 {
        let city = format!("city{c:02}");
        let sightings: f64 = rng.random_range(5.0..100.0);
        for i in 0..images {
            let image_id = format!("{city}_{i:04}");
            tasks.push(AnnotationTask {
                image_id: image_id.clone(),
                city_id: city.clone(),
                locator: format!("fixture://{image_id}"),
                year: 2011,
                month: (1 + i % 12) as u8,
            });
            let mut bins: BTreeMap<Category, Bin> = Category::ALL.iter().map(|&k| (k, Bin::Zero)).collect();
            if rng.random_bool(sightings / images as f64) {
                bins.insert(Category::Cyclists, Bin::OneToThree);
            }
            annotations.push(ImageAnnotation { image_id, annotator_id: "sim".into(), bins, flagged: false, reason: None, ts: None });
        }
        let share = logistic(a + b * sightings.sqrt());
        let y = BetaDist::new(share * phi, (1.0 - share) * phi).unwrap().sample(&mut rng);
        let commuters = 1_000_000.0;
        let cycle = (y * commuters).round();
        let counts = CensusCounts { cycle, car_driver: commuters - cycle, ..CensusCounts::default() };
        census.insert(city.clone(), census_mode_shares(&city, &counts, None, None).map_err(e)?);
        expected.push(sightings);
    }

    let counts = collapse_all(&annotations, &tasks).map_err(e)?;
    let data = build_dataset(&counts, &census, &BTreeMap::new()).map_err(e)?;
    let spec = ModelSpec::new(Family::Beta, "census_cycle", vec![TermSpec::new("gsv_cycle", Transform::Sqrt)]);
    let (_, summary) = fit_spec(&spec, &data).map_err(e)?;
    let mut z = Vec::new();
    for (term, truth) in summary.terms.iter().zip([a, b]) {
        let dev = (term.coefficient - truth).abs() / term.se;
        ensure!(dev <= 3.0, "{} = {:.4} (SE {:.4}) is {dev:.2} SE from {truth}", term.name, term.coefficient, term.se);
        z.push(dev);
    }
    let report = cv_report(&spec, &data).map_err(e)?;

    let mut sim = ChaCha8Rng::seed_from_u64(31);
    let mut deviations = Vec::new();
    for _ in 0..200 {
        for &sightings in &expected {
            let seen = Binomial::new(images as u64, sightings / images as f64).unwrap().sample(&mut sim) as f64;
            let share = logistic(a + b * sightings.sqrt());
            let y = BetaDist::new(share * phi, (1.0 - share) * phi).unwrap().sample(&mut sim);
            deviations.push((y - logistic(a + b * seen.sqrt())).abs());
        }
    }
    deviations.sort_by(f64::total_cmp);
    let noise = deviations[deviations.len() / 2];
    let mdae = report.metrics.mdae;
    ensure!(mdae <= 1.5 * noise, "LOOCV MDAE {mdae:.5} exceeds 1.5 × noise {noise:.5}");
    Ok(format!(
        "a = {:.3} ({:.2} SE), b = {:.4} ({:.2} SE), MDAE {mdae:.5} vs noise {noise:.5}",
        summary.terms[0].coefficient, z[0], summary.terms[1].coefficient, z[1]
    ))
}

fn agreement_stats() -> Check {
    let (n, p_o, kappa) = kappa_from_table(&[vec![20, 5], vec![10, 15]]).map_err(e)?;
    ensure!(n == 50 && p_o == 0.7 && kappa == 0.4, "table gave n {n}, p_o {p_o}, kappa {kappa}");

    let cells = [(Bin::Zero, Bin::Zero, 20), (Bin::Zero, Bin::OneToThree, 5), (Bin::OneToThree, Bin::Zero, 10), (Bin::OneToThree, Bin::OneToThree, 15)];
    let (mut ra, mut rb) = (BTreeMap::new(), BTreeMap::new());
    for (a, b, count) in cells {
        for _ in 0..count {
            let id = format!("img{:03}", ra.len());
            ra.insert(id.clone(), a);
            rb.insert(id, b);
        }
    }
    let stats = agreement(Some(Category::Cyclists), &ra, &rb).map_err(e)?;
    ensure!(stats.cohen_kappa == 0.4 && stats.n_items == 50, "rating maps gave kappa {}", stats.cohen_kappa);

    let same = agreement(Some(Category::Cyclists), &ra, &ra).map_err(e)?;
    ensure!(same.percent_agreement == 1.0 && same.cohen_kappa == 1.0, "identical ratings gave {same:?}");
    let uniform: BTreeMap<String, Bin> = (0..10).map(|i| (format!("img{i}"), Bin::Zero)).collect();
    let flat = agreement(None, &uniform, &uniform).map_err(e)?;
    ensure!(flat.percent_agreement == 1.0 && flat.cohen_kappa == 1.0, "identical single-bin ratings gave {flat:?}");
    Ok("kappa 0.4 on the 2x2 table; identical ratings 1.0/1.0".into())
}

fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + x.ln() - 0.5 / x - x2 * (1.0 / 12.0 - x2 * (1.0 / 120.0 - x2 * (1.0 / 252.0 - x2 * (1.0 / 240.0 - x2 / 132.0))))
}

fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 20.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let z = 1.0 / x;
    let z2 = z * z;
    acc + z + 0.5 * z2 + z * z2 * (1.0 / 6.0 - z2 * (1.0 / 30.0 - z2 * (1.0 / 42.0 - z2 * (1.0 / 30.0 - z2 * 5.0 / 66.0))))
}

fn residual_oracle(x: &[f64], y: &[f64], beta: &[f64], phi: f64) -> Result<Vec<f64>, String> {
    let n = x.len();
    let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { x[i] });
    let mut w = Vec::with_capacity(n);
    let mut raw = Vec::with_capacity(n);
    for i in 0..n {
        let mu = 1.0 / (1.0 + (-(beta[0] + beta[1] * x[i])).exp());
        let (p, q) = (mu * phi, (1.0 - mu) * phi);
        let v = trigamma(p) + trigamma(q);
        let ystar = (y[i] / (1.0 - y[i])).ln();
        raw.push((ystar - (digamma(p) - digamma(q)), v));
        w.push(phi * v * (mu * (1.0 - mu)).powi(2));
    }
    let wmat = DMatrix::from_diagonal(&DVector::from_vec(w.clone()));
    let info_inv = (design.transpose() * &wmat * &design).try_inverse().ok_or("singular information")?;
    Ok((0..n)
        .map(|i| {
            let row = design.row(i);
            let h = w[i] * (row * &info_inv * row.transpose())[(0, 0)];
            raw[i].0 / (raw[i].1 * (1.0 - h)).sqrt()
        })
        .collect())
}

fn standardized_residuals() -> Check {
    let parts = ResidualParts::new(0.5, 0.5, 2.0).map_err(e)?;
    ensure!(parts.mu_star.abs() <= 1e-9, "mu* = {}", parts.mu_star);
    ensure!((parts.v - PI * PI / 3.0).abs() <= 1e-9, "v = {}", parts.v);

    let xs: Vec<f64> = (0..10).map(|i| -0.8 + 1.6 * i as f64 / 9.0).collect();
    let design = DesignMatrix::from_columns(&["x"], &[xs.clone()]).map_err(e)?;
    let at_mean: Vec<f64> = xs.iter().map(|&x| logistic(x)).collect();
    let fixed = BetaFit {
        terms: design.terms().to_vec(),
        coefficients: vec![0.0, 1.0],
        std_errors: vec![0.0; 2],
        z_values: vec![0.0; 2],
        p_values: vec![1.0; 2],
        phi: 1e6,
        phi_se: 0.0,
        loglik: 0.0,
        fitted: at_mean.clone(),
        std_residuals: Vec::new(),
        iterations: 0,
        gradient_norm: 0.0,
        weighted_gram_inv: DMatrix::zeros(2, 2),
    };
    let large = espinheira_residuals(&fixed, &design, &at_mean).map_err(e)?;
    let biggest = large.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    ensure!(biggest < 1e-3, "max |r| = {biggest:.2e} at phi = 1e6");

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let y: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let mu = logistic(0.3 - 1.2 * x);
            BetaDist::new(mu * 25.0, (1.0 - mu) * 25.0).unwrap().sample(&mut rng)
        })
        .collect();
    let fit = fit_beta(&design, &y).map_err(e)?;
    let oracle = residual_oracle(&xs, &y, &fit.coefficients, fit.phi)?;
    let direct = espinheira_residuals(&fit, &design, &y).map_err(e)?;
    let gap = oracle
        .iter()
        .zip(&direct)
        .chain(oracle.iter().zip(&fit.std_residuals))
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    ensure!(fit.std_residuals.len() == 10 && gap <= 1e-8, "residual vector differs from oracle by {gap:.2e}");
    Ok(format!("mu* {:.1e}, v - pi^2/3 {:.1e}, large-phi max |r| {biggest:.1e}, oracle gap {gap:.1e}", parts.mu_star, parts.v - PI * PI / 3.0))
}
