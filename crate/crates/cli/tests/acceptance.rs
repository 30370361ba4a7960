//! Acceptance suite: one PASS/FAIL line per criterion, with the tolerance
//! and runtime budget each criterion is held to. Exits non-zero if any
//! criterion fails.

use std::process::Command;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use umbra::dataset::{
    clean_dataset, random_scene_spec, synthesize_scene, write_records, AnnotationRecord,
    BoundingBox, CleaningRules,
};
use umbra::photogrammetry::{height_from_shadow, shadow_from_height};
use umbra::regressor::synthetic::{run_table1_grid, GridSetup};
use umbra::regressor::{height_loss, LossKind, OptimizerKind, TrainConfig};
use umbra::solar::{daylight_window, local_solar_date, solar_position};
use umbra::time_inference::{infer_capture_time, ShadowObservation};
use umbra::{
    BuildingHeight, GeoLocation, GroundSampling, PixelPoint, ShadowLength, SolarPosition,
    UtcInstant,
};

// Pinned tolerances.
const ROUND_TRIP_REL: f64 = 1e-9;
const SOLAR_ELEVATION_DEG: f64 = 0.05;
const TIME_WINDOW_S: i64 = 120;
const TIME_RESIDUAL_M: f64 = 0.01;
const GRADIENT_REL: f64 = 1e-5;
const GRADIENT_KINK_BAND: f64 = 1e-6;
const FLOOR_MARGIN_M: f64 = 1.0;
const FIG5_TOL_M: f64 = 0.001;
const PIPELINE_RMSE_M: f64 = 1e-9;

const ORACLE: &str = include_str!("../../core/tests/data/solar_oracle.csv");
const UMBRA: &str = env!("CARGO_BIN_EXE_umbra");

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    budget: Duration,
    check: fn() -> Outcome,
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let h: f64 = rng.random_range(0.0..=500.0);
        let sun = SolarPosition::new(rng.random_range(5.0..=85.0), 180.0).unwrap();
        let s = shadow_from_height(BuildingHeight::new(h).unwrap(), &sun)
            .unwrap()
            .value;
        let back = height_from_shadow(s, &sun).unwrap().value.meters();
        let rel = if h == 0.0 {
            back.abs()
        } else {
            ((back - h) / h).abs()
        };
        worst = worst.max(rel);
    }
    ensure(
        worst <= ROUND_TRIP_REL,
        format!("worst relative error {worst:e}"),
    )?;
    Ok(format!(
        "10000 pairs, worst relative error {worst:.1e} (tol {ROUND_TRIP_REL:e})"
    ))
}

fn solar_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut n = 0;
    let mut reference = f64::NAN;
    for line in ORACLE.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let loc = GeoLocation::new(f[0].parse().unwrap(), f[1].parse().unwrap()).unwrap();
        let t: UtcInstant = f[2].parse().unwrap();
        let want: f64 = f[3].parse().unwrap();
        let mut err = (solar_position(loc, t).elevation_deg() - want).abs();
        if n == 0 {
            // The oracle row carries the full-precision latitude 39.742476;
            // the published point is also evaluated at its rounded form.
            ensure(
                (loc.lat_deg() - 39.7424).abs() < 1e-4 && (loc.lon_deg() + 105.1786).abs() < 1e-9,
                "first row is not the reference point",
            )?;
            ensure(
                t == UtcInstant::from_ymd_hms(2003, 10, 17, 19, 30, 30).unwrap(),
                "reference instant",
            )?;
            let rounded = GeoLocation::new(39.7424, -105.1786).unwrap();
            err = err.max((solar_position(rounded, t).elevation_deg() - want).abs());
            reference = err;
        }
        worst = worst.max(err);
        n += 1;
    }
    ensure(n == 101, format!("{n} oracle rows"))?;
    ensure(
        worst < SOLAR_ELEVATION_DEG,
        format!("worst elevation error {worst}°"),
    )?;
    Ok(format!(
        "reference point off by {reference:.5}°, 100 samples worst {worst:.5}° (tol {SOLAR_ELEVATION_DEG}°)"
    ))
}

fn time_inference() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let (mut worst_dt, mut worst_res) = (0_i64, 0.0_f64);
    let mut cases = 0;
    while cases < 20 {
        let loc = GeoLocation::new(
            rng.random_range(-60.0..60.0),
            rng.random_range(-180.0..180.0),
        )
        .unwrap();
        let date = NaiveDate::from_ymd_opt(
            rng.random_range(1990..2040),
            rng.random_range(1..=12),
            rng.random_range(1..=28),
        )
        .unwrap();
        let Some(w) = daylight_window(loc, date) else {
            continue;
        };
        // Morning captures: a single elevation can also be met in the
        // afternoon, and that twin is only separable by the azimuth the
        // residual does not see.
        let (rise, noon) = (w.sunrise.unix_seconds(), w.solar_noon.unix_seconds());
        let t = UtcInstant::from_unix_seconds(
            rise + ((noon - rise) as f64 * rng.random_range(0.35..0.75)) as i64,
        );
        if solar_position(loc, t).elevation_deg() < 12.0 {
            continue;
        }
        let spec = random_scene_spec(
            &format!("case{cases}"),
            400,
            400,
            GroundSampling::patch_default(),
            12,
            40.0,
            cases,
        )
        .map_err(|e| e.to_string())?;
        let scene = synthesize_scene(&spec, loc, t).map_err(|e| e.to_string())?;
        let obs: Vec<_> = scene
            .records
            .iter()
            .map(|r| {
                ShadowObservation::new(
                    r.shadow_length().unwrap(),
                    BuildingHeight::new(r.gt_height_m.unwrap()).unwrap(),
                )
            })
            .collect();
        let fit =
            infer_capture_time(local_solar_date(loc, t), loc, &obs).map_err(|e| e.to_string())?;
        let dt = (fit.best_time.unix_seconds() - t.unix_seconds()).abs();
        ensure(
            dt <= TIME_WINDOW_S,
            format!("{loc:?} {t}: recovered {} ({dt} s off)", fit.best_time),
        )?;
        ensure(
            fit.residual_rmse_m < TIME_RESIDUAL_M,
            format!("{loc:?} {t}: residual {}", fit.residual_rmse_m),
        )?;
        worst_dt = worst_dt.max(dt);
        worst_res = worst_res.max(fit.residual_rmse_m);
        cases += 1;
    }
    Ok(format!(
        "20 cases × 12 buildings, worst offset {worst_dt} s (tol ±{TIME_WINDOW_S} s), worst residual {worst_res:.1e} m (tol {TIME_RESIDUAL_M} m)"
    ))
}

fn gradient() -> Outcome {
    let mut out = Vec::new();
    for (kind, seed) in [(LossKind::L1, 31), (LossKind::Mse, 32)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut checked, mut worst) = (0, 0.0_f64);
        while checked < 1000 {
            let pred: f64 = rng.random_range(0.5..200.0);
            let elev: f64 = rng.random_range(5.0..85.0);
            let h: f64 = rng.random_range(0.0..500.0);
            let sun = SolarPosition::new(elev, 180.0).unwrap();
            let step = 1e-5 * pred;
            let tan = elev.to_radians().tan();
            if kind == LossKind::L1
                && (pred * tan - h).abs() <= GRADIENT_KINK_BAND.max(2.0 * step * tan)
            {
                continue;
            }
            let loss = |p: f64| {
                height_loss(
                    ShadowLength::new(p).unwrap(),
                    &sun,
                    BuildingHeight::new(h).unwrap(),
                    kind,
                )
                .unwrap()
            };
            let g = loss(pred).1;
            let fd = (loss(pred + step).0 - loss(pred - step).0) / (2.0 * step);
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-300);
            ensure(
                rel < GRADIENT_REL,
                format!("{kind} pred={pred} σ={elev} H={h}: {g} vs {fd}"),
            )?;
            worst = worst.max(rel);
            checked += 1;
        }
        out.push(format!("{kind} worst {worst:.1e}"));
    }
    Ok(format!(
        "1000 samples per loss, {} (tol {GRADIENT_REL:e})",
        out.join(", ")
    ))
}

fn table1() -> Outcome {
    let base = TrainConfig {
        learning_rate: 1e-4,
        weight_decay: 1e-5,
        seed: 7,
        ..Default::default()
    };
    let result = run_table1_grid(&GridSetup::table1(7), &base).map_err(|e| e.to_string())?;
    let rmse = |l, o| result.row(l, o).map(|r| r.report.height_rmse_m).unwrap();
    let l1a = rmse(LossKind::L1, OptimizerKind::Adam);
    let msea = rmse(LossKind::Mse, OptimizerKind::Adam);
    let l1s = rmse(LossKind::L1, OptimizerKind::Sgd);
    let mses = rmse(LossKind::Mse, OptimizerKind::Sgd);
    let floor = result.noise_floor_m;
    let checks = [
        ("L1+Adam < MSE+Adam", l1a < msea),
        ("MSE+Adam < L1+SGD", msea < l1s),
        ("L1+SGD < MSE+SGD", l1s < mses),
        ("L1+Adam <= floor + 1 m", l1a <= floor + FLOOR_MARGIN_M),
    ];
    let detail = format!(
        "height RMSE L1+Adam {l1a:.3}, MSE+Adam {msea:.3}, L1+SGD {l1s:.3}, MSE+SGD {mses:.3}; noise floor {floor:.3} m"
    );
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    if failed.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; violated: {}", failed.join(", ")))
    }
}

fn fixture(h: Option<f64>, floors: Option<u32>, shadow_m: f64) -> AnnotationRecord {
    let mut r = AnnotationRecord::unannotated(
        "fixture",
        0,
        BoundingBox::full(),
        GroundSampling::patch_default(),
        GeoLocation::new(31.23, 121.47).unwrap(),
        NaiveDate::from_ymd_opt(2015, 6, 1).unwrap(),
    );
    r.gt_height_m = h;
    r.gt_floors = floors;
    r.shadow_start_px = Some(PixelPoint::new(0.0, 0.0));
    r.shadow_end_px = Some(PixelPoint::new(shadow_m / 2.5, 0.0));
    r
}

fn cleaning() -> Outcome {
    // (height, floors, shadow m) → expected kept height, or None if dropped.
    type Case = (Option<f64>, Option<u32>, f64, Option<f64>);
    let cases: [Case; 11] = [
        (Some(36.0), None, 20.0, Some(33.0)),  // above the cap
        (Some(120.0), None, 90.0, Some(33.0)), // far above the cap, long shadow
        (Some(30.0), None, 20.0, Some(30.0)),  // at the cap: a valid 10-storey label
        (Some(33.0), None, 20.0, Some(33.0)),  // already the cap label
        (Some(3.0), None, 50.0, None),         // low, shadow exactly at the limit
        (Some(6.0), None, 75.0, None),         // low, long shadow
        (None, Some(3), 60.0, None),           // low via floors, long shadow
        (Some(9.0), None, 49.9, Some(9.0)),    // low, shadow just under the limit
        (Some(12.0), None, 80.0, Some(12.0)),  // not low: long shadow allowed
        (None, Some(5), 10.0, Some(15.0)),     // floors only
        (Some(15.0), None, 10.0, Some(15.0)),  // benign
    ];
    let input: Vec<_> = cases
        .iter()
        .enumerate()
        .map(|(i, &(h, f, s, _))| AnnotationRecord {
            box_index: i as u32,
            ..fixture(h, f, s)
        })
        .collect();
    let rules = CleaningRules::default();
    let (kept, stats) = clean_dataset(input, &rules);
    for (i, &(.., want)) in cases.iter().enumerate() {
        let got = kept
            .iter()
            .find(|r| r.box_index == i as u32)
            .map(|r| r.gt_height_m.unwrap());
        ensure(
            got == want,
            format!("case {i}: expected {want:?}, got {got:?}"),
        )?;
    }
    ensure(
        stats.n_capped == 2 && stats.n_dropped_long_shadow == 3,
        format!("{stats:?}"),
    )?;
    let (again, stats2) = clean_dataset(kept.clone(), &rules);
    ensure(again == kept, "second pass changed the records")?;
    ensure(
        stats2.n_capped == 0 && stats2.n_dropped() == 0,
        format!("second pass {stats2:?}"),
    )?;
    Ok("11 fixture records: 2 capped to 33, 3 dropped, 6 kept unchanged; idempotent".into())
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(UMBRA)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "umbra {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn csv_field(csv: &str, row: usize, name: &str) -> Result<String, String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().ok_or("empty csv")?.split(',').collect();
    let col = header
        .iter()
        .position(|h| *h == name)
        .ok_or(format!("no column {name}"))?;
    let line = lines.nth(row).ok_or(format!("no row {row}"))?;
    Ok(line.split(',').nth(col).ok_or("short row")?.to_string())
}

fn tall_building() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let loc = GeoLocation::new(31.2355, 121.5015).unwrap();
    let t = UtcInstant::from_ymd_hms(2015, 3, 10, 2, 30, 0).unwrap();
    let sun = solar_position(loc, t);
    let shadow = shadow_from_height(BuildingHeight::new(430.0).unwrap(), &sun)
        .unwrap()
        .value
        .meters();
    let mut rec = fixture(Some(420.0), None, 0.0);
    rec.loc = loc;
    rec.capture_date = local_solar_date(loc, t);
    rec.capture_time = Some(t);
    rec.shadow_start_px = Some(PixelPoint::new(200.0, 100.0));
    rec.shadow_end_px = Some(PixelPoint::new(200.0, 100.0 + shadow / 2.5));
    let path = dir.path().join("tower.ndrec");
    write_records(&path, &[rec]).map_err(|e| e.to_string())?;

    let out = run_cli(&[
        "--format",
        "csv",
        "estimate",
        "--records",
        path.to_str().unwrap(),
    ])?;
    let h: f64 = csv_field(&out, 0, "height_m")?
        .parse()
        .map_err(|e| format!("{e}"))?;
    let err: f64 = csv_field(&out, 0, "abs_error_m")?
        .parse()
        .map_err(|e| format!("{e}"))?;
    ensure((h - 430.0).abs() <= FIG5_TOL_M, format!("height {h}"))?;
    ensure((err - 10.0).abs() <= FIG5_TOL_M, format!("abs error {err}"))?;

    // Same building through the endpoint/location form.
    let end = format!("200,{}", 100.0 + shadow / 2.5);
    let ts = t.to_string();
    let text = run_cli(&[
        "estimate",
        "--start",
        "200,100",
        "--end",
        &end,
        "--gsd",
        "2.5",
        "--lat",
        "31.2355",
        "--lon",
        "121.5015",
        "--time",
        &ts,
        "--gt-height-m",
        "420",
    ])?;
    ensure(
        text.contains("height_m: 430.000") && text.contains("abs_error_m: 10.000"),
        text.clone(),
    )?;
    Ok(format!(
        "height {h:.6} m (tol ±{FIG5_TOL_M}), abs error {err:.6} m vs 420 m ground truth"
    ))
}

fn pipeline() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    run_cli(&[
        "synth",
        "--out-dir",
        &d(""),
        "--image-id",
        "tile",
        "--n-buildings",
        "40",
        "--lat",
        "-33.87",
        "--lon",
        "151.21",
        "--time",
        "2016-01-12T22:40:00Z",
        "--seed",
        "5",
    ])?;
    run_cli(&[
        "clean",
        "--input",
        &d("tile.ndrec"),
        "--output",
        &d("clean.ndrec"),
    ])?;
    let sel = run_cli(&[
        "--format",
        "csv",
        "select",
        "--input",
        &d("clean.ndrec"),
        "--output",
        &d("subset.ndrec"),
    ])?;
    let retention: f64 = csv_field(&sel, 0, "retention_pct")?
        .parse()
        .map_err(|e| format!("{e}"))?;
    let n_in: usize = csv_field(&sel, 0, "n_input")?
        .parse()
        .map_err(|e| format!("{e}"))?;
    ensure(n_in == 40, format!("{n_in} records after cleaning"))?;
    ensure(retention == 100.0, format!("retention {retention}%"))?;
    let csv = run_cli(&["--format", "csv", "eval", "--input", &d("subset.ndrec")])?;
    let bins = umbra::eval::parse_plot_data(&csv).map_err(|e| e.to_string())?;
    let n: usize = bins.iter().map(|b| b.n).sum();
    let worst = bins.iter().map(|b| b.max).fold(0.0, f64::max);
    ensure(n == 40, format!("{n} evaluated"))?;
    // RMSE is bounded by the largest absolute error.
    ensure(worst <= PIPELINE_RMSE_M, format!("max abs error {worst:e}"))?;
    let text = run_cli(&["eval", "--input", &d("subset.ndrec")])?;
    ensure(text.starts_with("overall_rmse_m: 0.000\n"), text.clone())?;
    Ok(format!("40 buildings, retention {retention}%, RMSE ≤ max abs error {worst:.1e} m (tol {PIPELINE_RMSE_M:e})"))
}

fn main() {
    let criteria = [
        Criterion {
            name: "height/shadow round trip",
            budget: Duration::from_secs(1),
            check: round_trip,
        },
        Criterion {
            name: "solar position vs ephemeris oracle",
            budget: Duration::from_secs(1),
            check: solar_oracle,
        },
        Criterion {
            name: "capture-time inference",
            budget: Duration::from_secs(30),
            check: time_inference,
        },
        Criterion {
            name: "height-loss gradient",
            budget: Duration::from_secs(5),
            check: gradient,
        },
        Criterion {
            name: "loss/optimizer ordering",
            budget: Duration::from_secs(300),
            check: table1,
        },
        Criterion {
            name: "cleaning rules",
            budget: Duration::from_secs(1),
            check: cleaning,
        },
        Criterion {
            name: "tall-building sanity via CLI",
            budget: Duration::from_secs(1),
            check: tall_building,
        },
        Criterion {
            name: "end-to-end pipeline via CLI",
            budget: Duration::from_secs(60),
            check: pipeline,
        },
    ];
    let mut failures = 0;
    println!("\nacceptance: {} criteria", criteria.len());
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.check)();
        let took = start.elapsed();
        let (ok, msg) = match outcome {
            Ok(m) if took <= c.budget => (true, m),
            Ok(m) => (false, format!("{m}; over budget")),
            Err(m) => (false, m),
        };
        if !ok {
            failures += 1;
        }
        println!(
            "{} {:<38} [{:.2}s / {}s] {}",
            if ok { "PASS" } else { "FAIL" },
            c.name,
            took.as_secs_f64(),
            c.budget.as_secs(),
            msg
        );
    }
    println!(
        "acceptance: {} passed, {failures} failed\n",
        criteria.len() - failures
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
