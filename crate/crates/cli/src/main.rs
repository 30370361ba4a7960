//! `umbra`: command-line front end.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use umbra::dataset::{
    clean_dataset, compact, format_yolo_labels, random_scene_spec, read_records,
    select_test_subset, synthesize_scene, write_records, AnnotationRecord, CleaningRules,
};
use umbra::eval::{evaluate_records, export_plot_data, reported_reference_table};
use umbra::photogrammetry::{height_from_endpoints, height_from_shadow, Estimate};
use umbra::regressor::synthetic::{
    run_table1_grid, synthetic_building_set, GridSetup, SyntheticSetConfig,
};
use umbra::regressor::{train, LossKind, OptimizerKind, TrainConfig};
use umbra::solar::{local_solar_date, solar_position};
use umbra::time_inference::{infer_capture_time, ShadowObservation};
use umbra::{
    BuildingHeight, GeoLocation, GroundSampling, PixelPoint, ShadowLength, SolarPosition,
    UtcInstant,
};

#[derive(Debug, Parser)]
#[command(
    name = "umbra",
    version,
    about = "Building heights from shadows in overhead imagery"
)]
struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Apply the height cap and long-shadow rule to a record file.
    Clean(CleanArgs),
    /// Fit the capture time of each image to its ground-truthed records.
    InferTime(InferTimeArgs),
    /// Height from a shadow length or endpoints and a sun elevation.
    Estimate(EstimateArgs),
    /// Render a synthetic scene with exact ground truth.
    Synth(SynthArgs),
    /// Keep records whose analytic height is within a threshold of ground truth.
    Select(SelectArgs),
    /// Analytic-height error report with per-bin statistics.
    Eval(EvalArgs),
    /// Train the shadow regressor; `--grid table1` runs the four-row comparison.
    Train(TrainArgs),
    /// Drop superseded records (last write per box wins).
    Compact(CompactArgs),
    /// Run the annotation service.
    Serve(ServeArgs),
}

fn existing_file(s: &str) -> Result<PathBuf, String> {
    let p = PathBuf::from(s);
    if p.is_file() {
        Ok(p)
    } else {
        Err(format!("no such file: {s}"))
    }
}

fn existing_dir(s: &str) -> Result<PathBuf, String> {
    let p = PathBuf::from(s);
    if p.is_dir() {
        Ok(p)
    } else {
        Err(format!("no such directory: {s}"))
    }
}

/// An output path whose parent directory exists.
fn output_path(s: &str) -> Result<PathBuf, String> {
    let p = PathBuf::from(s);
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() && !d.is_dir() => {
            Err(format!("no such directory: {}", d.display()))
        }
        _ => Ok(p),
    }
}

fn pixel_point(s: &str) -> Result<PixelPoint, String> {
    let (x, y) = s
        .split_once(',')
        .ok_or_else(|| format!("expected X,Y, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok(PixelPoint::new(parse(x)?, parse(y)?))
}

fn instant(s: &str) -> Result<UtcInstant, String> {
    s.parse()
        .map_err(|e: umbra::solar::SolarError| e.to_string())
}

#[derive(Debug, Args)]
struct CleanArgs {
    /// Input record file.
    #[arg(long, env = "UMBRA_STORE", value_parser = existing_file)]
    input: PathBuf,
    #[arg(long, value_parser = output_path)]
    output: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    height_cap_m: f64,
    #[arg(long, default_value_t = 33.0)]
    cap_label_m: f64,
    #[arg(long, default_value_t = 9.0)]
    low_height_max_m: f64,
    #[arg(long, default_value_t = 50.0)]
    shadow_outlier_m: f64,
}

#[derive(Debug, Args)]
struct InferTimeArgs {
    #[arg(long, env = "UMBRA_STORE", value_parser = existing_file)]
    records: PathBuf,
    /// Only this image.
    #[arg(long)]
    image_id: Option<String>,
    /// Write the records with their capture time set to the fit.
    #[arg(long, value_parser = output_path)]
    apply: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Shadow length in meters.
    #[arg(long, conflicts_with_all = ["start", "end", "records"], allow_hyphen_values = true)]
    shadow_m: Option<f64>,
    /// Shadow start in pixels, `X,Y`.
    #[arg(long, value_parser = pixel_point, requires = "end", allow_hyphen_values = true)]
    start: Option<PixelPoint>,
    #[arg(long, value_parser = pixel_point, requires = "start", allow_hyphen_values = true)]
    end: Option<PixelPoint>,
    /// Ground sampling, meters per pixel.
    #[arg(long, default_value_t = umbra::photogrammetry::PATCH_GSD_M_PER_PX)]
    gsd: f64,
    /// Solar elevation in degrees; alternatively give --lat, --lon and --time.
    #[arg(long, conflicts_with_all = ["lat", "lon", "time"], allow_hyphen_values = true)]
    elevation_deg: Option<f64>,
    #[arg(long, requires_all = ["lon", "time"], allow_hyphen_values = true)]
    lat: Option<f64>,
    #[arg(long, requires_all = ["lat", "time"], allow_hyphen_values = true)]
    lon: Option<f64>,
    /// Capture instant, UTC (`YYYY-MM-DDTHH:MM:SSZ`).
    #[arg(long, value_parser = instant)]
    time: Option<UtcInstant>,
    /// Known height, to report the absolute error.
    #[arg(long, allow_hyphen_values = true)]
    gt_height_m: Option<f64>,
    /// Estimate every annotated record in this file at its own location and time.
    #[arg(long, value_parser = existing_file, conflicts_with_all = ["elevation_deg", "lat", "start", "gt_height_m"])]
    records: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_parser = existing_dir)]
    out_dir: PathBuf,
    #[arg(long, default_value = "synth")]
    image_id: String,
    #[arg(long, default_value_t = 30)]
    n_buildings: usize,
    #[arg(long, default_value_t = 400)]
    width: u32,
    #[arg(long, default_value_t = 400)]
    height: u32,
    #[arg(long, default_value_t = umbra::photogrammetry::PATCH_GSD_M_PER_PX)]
    gsd: f64,
    /// Border kept free of footprints, pixels.
    #[arg(long, default_value_t = 40.0)]
    margin_px: f64,
    #[arg(long, allow_hyphen_values = true)]
    lat: f64,
    #[arg(long, allow_hyphen_values = true)]
    lon: f64,
    #[arg(long, value_parser = instant)]
    time: UtcInstant,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[arg(long, env = "UMBRA_STORE", value_parser = existing_file)]
    input: PathBuf,
    #[arg(long, value_parser = output_path)]
    output: PathBuf,
    #[arg(long, default_value_t = 2.5)]
    threshold_m: f64,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, env = "UMBRA_STORE", value_parser = existing_file)]
    input: PathBuf,
    /// Leave out records carrying the cap label.
    #[arg(long)]
    exclude_capped: bool,
    /// Also write the per-bin CSV here.
    #[arg(long, value_parser = output_path)]
    plot_data: Option<PathBuf>,
    /// Append published RMSEs of other methods (text format only).
    #[arg(long)]
    reference: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Grid {
    Table1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LossArg {
    L1,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Run a fixed comparison grid instead of a single configuration.
    #[arg(long, value_enum)]
    grid: Option<Grid>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = LossArg::L1)]
    loss: LossArg,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    optimizer: OptimizerArg,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 1e-5)]
    weight_decay: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Synthetic training buildings (default: the grid's size, or 500).
    #[arg(long)]
    n_train: Option<usize>,
    /// Synthetic test buildings for the grid.
    #[arg(long)]
    n_test: Option<usize>,
    /// Save the trained model (single configuration only).
    #[arg(long, value_parser = output_path, conflicts_with = "grid")]
    model_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompactArgs {
    #[arg(long, env = "UMBRA_STORE", value_parser = existing_file)]
    store: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Directory of `<id>.png`, `<id>.txt` and optional `<id>.ndrec`.
    #[arg(long, value_parser = existing_dir)]
    catalog: PathBuf,
    /// Record store the service appends to.
    #[arg(long, env = "UMBRA_STORE", value_parser = output_path)]
    store: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: std::net::SocketAddr,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<String> {
    let fmt = cli.format;
    match cli.command {
        Command::Clean(a) => clean(a, fmt),
        Command::InferTime(a) => infer_time(a, fmt),
        Command::Estimate(a) => estimate(a, fmt),
        Command::Synth(a) => synth(a, fmt),
        Command::Select(a) => select(a, fmt),
        Command::Eval(a) => eval(a, fmt),
        Command::Train(a) => train_cmd(a, fmt),
        Command::Compact(a) => {
            let removed = compact(&a.store)?;
            Ok(match fmt {
                Format::Text => format!("removed: {removed}\n"),
                Format::Csv => format!("removed\n{removed}\n"),
            })
        }
        Command::Serve(a) => serve(a),
    }
}

fn load(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let replay = read_records(path)?;
    if let Some((line, why)) = replay.rejected.first() {
        bail!(
            "{}: line {line}: {why} ({} bad lines)",
            path.display(),
            replay.rejected.len()
        );
    }
    Ok(replay.records)
}

fn clean(a: CleanArgs, fmt: Format) -> Result<String> {
    let rules = CleaningRules {
        height_cap_m: a.height_cap_m,
        cap_label_m: a.cap_label_m,
        low_height_max_m: a.low_height_max_m,
        shadow_outlier_m: a.shadow_outlier_m,
    };
    let (kept, stats) = clean_dataset(load(&a.input)?, &rules);
    write_records(&a.output, &kept)?;
    let fields = [
        ("n_input", stats.n_input),
        ("n_kept", stats.n_kept),
        ("n_capped", stats.n_capped),
        ("n_dropped_long_shadow", stats.n_dropped_long_shadow),
        ("n_without_ground_truth", stats.n_without_ground_truth),
    ];
    let mut s = String::new();
    match fmt {
        Format::Text => {
            for (k, v) in fields {
                writeln!(s, "{k}: {v}")?;
            }
            for (bin, n) in &stats.height_histogram {
                writeln!(s, "bin_{bin}m: {n}")?;
            }
        }
        Format::Csv => {
            s.push_str("key,value\n");
            for (k, v) in fields {
                writeln!(s, "{k},{v}")?;
            }
            for (bin, n) in &stats.height_histogram {
                writeln!(s, "bin_{bin}m,{n}")?;
            }
        }
    }
    Ok(s)
}

fn infer_time(a: InferTimeArgs, fmt: Format) -> Result<String> {
    let mut records = load(&a.records)?;
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if a.image_id.as_ref().is_none_or(|id| *id == r.image_id) {
            groups.entry(r.image_id.clone()).or_default().push(i);
        }
    }
    if groups.is_empty() {
        bail!("no records to fit");
    }
    let mut s = match fmt {
        Format::Text => String::new(),
        Format::Csv => String::from("image_id,best_time,residual_rmse_m,n_buildings\n"),
    };
    for (image_id, idx) in &groups {
        let first = &records[idx[0]];
        let (loc, date) = (first.loc, first.capture_date);
        let obs: Vec<ShadowObservation> = idx
            .iter()
            .filter_map(|&i| {
                let r = &records[i];
                let h = BuildingHeight::new(r.ground_truth_height()?).ok()?;
                Some(ShadowObservation::new(r.shadow_length()?, h))
            })
            .collect();
        let fit =
            infer_capture_time(date, loc, &obs).with_context(|| format!("image {image_id}"))?;
        match fmt {
            Format::Text => {
                let minima: Vec<String> = fit
                    .local_minima
                    .iter()
                    .map(|m| format!("{} ({:.4} m)", m.time, m.residual_rmse_m))
                    .collect();
                writeln!(
                    s,
                    "{image_id}: best_time {} residual_rmse_m {:.4} n_buildings {} local_minima [{}]",
                    fit.best_time,
                    fit.residual_rmse_m,
                    fit.n_buildings,
                    minima.join(", ")
                )?;
            }
            Format::Csv => writeln!(
                s,
                "{image_id},{},{:?},{}",
                fit.best_time, fit.residual_rmse_m, fit.n_buildings
            )?,
        }
        for &i in idx {
            records[i].capture_time = Some(fit.best_time);
        }
    }
    if let Some(out) = a.apply {
        write_records(&out, &records)?;
    }
    Ok(s)
}

fn sun_for(a: &EstimateArgs) -> Result<SolarPosition> {
    match (a.elevation_deg, a.lat, a.lon, a.time) {
        (Some(e), ..) => Ok(SolarPosition::new(e, 180.0)?),
        (None, Some(lat), Some(lon), Some(t)) => Ok(solar_position(GeoLocation::new(lat, lon)?, t)),
        _ => bail!("give --elevation-deg, or --lat, --lon and --time"),
    }
}

fn estimate(a: EstimateArgs, fmt: Format) -> Result<String> {
    if let Some(path) = &a.records {
        return estimate_records(path, fmt);
    }
    let sun = sun_for(&a)?;
    let gsd = GroundSampling::new(a.gsd)?;
    let (shadow_m, est): (f64, Estimate<BuildingHeight>) = match (a.shadow_m, a.start, a.end) {
        (Some(s), ..) => (s, height_from_shadow(ShadowLength::new(s)?, &sun)?),
        (None, Some(p), Some(q)) => {
            let s = p.distance(q) * gsd.meters_per_pixel();
            (s, height_from_endpoints(p, q, gsd, &sun)?)
        }
        _ => bail!("give --shadow-m, or --start and --end"),
    };
    let h = est.value.meters();
    let err = a.gt_height_m.map(|g| (h - g).abs());
    let mut s = String::new();
    match fmt {
        Format::Text => {
            writeln!(s, "shadow_m: {shadow_m:.3}")?;
            writeln!(s, "elevation_deg: {:.3}", sun.elevation_deg())?;
            writeln!(s, "height_m: {h:.3}")?;
            if let (Some(g), Some(e)) = (a.gt_height_m, err) {
                writeln!(s, "gt_height_m: {g:.3}")?;
                writeln!(s, "abs_error_m: {e:.3}")?;
            }
            if est.outside_usable_band {
                writeln!(
                    s,
                    "warning: elevation outside the usable band; estimate unreliable"
                )?;
            }
        }
        Format::Csv => {
            s.push_str("shadow_m,elevation_deg,height_m,gt_height_m,abs_error_m\n");
            let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
            writeln!(
                s,
                "{shadow_m:?},{:?},{h:?},{},{}",
                sun.elevation_deg(),
                opt(a.gt_height_m),
                opt(err)
            )?;
        }
    }
    Ok(s)
}

fn estimate_records(path: &Path, fmt: Format) -> Result<String> {
    let mut s = match fmt {
        Format::Text => String::new(),
        Format::Csv => String::from(
            "image_id,box_index,shadow_m,elevation_deg,height_m,gt_height_m,abs_error_m\n",
        ),
    };
    let mut n = 0;
    for r in load(path)? {
        let (Some(shadow), Some(t)) = (r.shadow_length(), r.capture_time) else {
            continue;
        };
        let est = r.analytic_height()?;
        let h = est.value.meters();
        let elev = solar_position(r.loc, t).elevation_deg();
        let gt = r.ground_truth_height();
        let err = gt.map(|g| (h - g).abs());
        match fmt {
            Format::Text => {
                write!(s, "{}#{} height_m: {h:.3}", r.image_id, r.box_index)?;
                if let (Some(g), Some(e)) = (gt, err) {
                    write!(s, " gt_height_m: {g:.3} abs_error_m: {e:.3}")?;
                }
                if est.outside_usable_band {
                    write!(s, " (elevation {elev:.2}° outside the usable band)")?;
                }
                s.push('\n');
            }
            Format::Csv => {
                let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
                writeln!(
                    s,
                    "{},{},{:?},{elev:?},{h:?},{},{}",
                    r.image_id,
                    r.box_index,
                    shadow.meters(),
                    opt(gt),
                    opt(err)
                )?;
            }
        }
        n += 1;
    }
    if n == 0 {
        bail!(
            "{}: no record has both shadow endpoints and a capture time",
            path.display()
        );
    }
    Ok(s)
}

fn synth(a: SynthArgs, fmt: Format) -> Result<String> {
    let loc = GeoLocation::new(a.lat, a.lon)?;
    let gsd = GroundSampling::new(a.gsd)?;
    let spec = random_scene_spec(
        &a.image_id,
        a.width,
        a.height,
        gsd,
        a.n_buildings,
        a.margin_px,
        a.seed,
    )?;
    let scene = synthesize_scene(&spec, loc, a.time)?;
    let stem = a.out_dir.join(&a.image_id);
    let png = stem.with_extension("png");
    let labels = stem.with_extension("txt");
    let records = stem.with_extension("ndrec");
    scene.image.save_png(&png)?;
    let boxes: Vec<_> = scene.records.iter().map(|r| r.bbox).collect();
    std::fs::write(&labels, format_yolo_labels(&boxes))
        .with_context(|| labels.display().to_string())?;
    write_records(&records, &scene.records)?;
    Ok(match fmt {
        Format::Text => format!(
            "image: {}\nlabels: {}\nrecords: {}\nn_buildings: {}\nlocal_date: {}\nelevation_deg: {:.3}\nazimuth_deg: {:.3}\n",
            png.display(),
            labels.display(),
            records.display(),
            scene.records.len(),
            local_solar_date(loc, a.time),
            scene.sun.elevation_deg(),
            scene.sun.azimuth_deg()
        ),
        Format::Csv => format!(
            "image,labels,records,n_buildings,elevation_deg,azimuth_deg\n{},{},{},{},{:?},{:?}\n",
            png.display(),
            labels.display(),
            records.display(),
            scene.records.len(),
            scene.sun.elevation_deg(),
            scene.sun.azimuth_deg()
        ),
    })
}

fn select(a: SelectArgs, fmt: Format) -> Result<String> {
    let records = load(&a.input)?;
    let kept = select_test_subset(&records, a.threshold_m)?;
    write_records(&a.output, &kept)?;
    let pct = if records.is_empty() {
        100.0
    } else {
        100.0 * kept.len() as f64 / records.len() as f64
    };
    Ok(match fmt {
        Format::Text => format!("kept: {}/{} ({pct:.1}%)\n", kept.len(), records.len()),
        Format::Csv => format!(
            "n_input,n_kept,retention_pct\n{},{},{pct:?}\n",
            records.len(),
            kept.len()
        ),
    })
}

fn eval(a: EvalArgs, fmt: Format) -> Result<String> {
    let report = evaluate_records(&load(&a.input)?, a.exclude_capped)?;
    if let Some(p) = &a.plot_data {
        export_plot_data(&report, p)?;
    }
    Ok(match fmt {
        Format::Text if a.reference => {
            format!("{}\n{}", report.to_text(), reported_reference_table())
        }
        Format::Text => report.to_text(),
        Format::Csv => report.to_csv(),
    })
}

fn train_cmd(a: TrainArgs, fmt: Format) -> Result<String> {
    let base = TrainConfig {
        loss: match a.loss {
            LossArg::L1 => LossKind::L1,
            LossArg::Mse => LossKind::Mse,
        },
        optimizer: match a.optimizer {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::Sgd => OptimizerKind::Sgd,
        },
        learning_rate: a.lr,
        weight_decay: a.weight_decay,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        ..Default::default()
    };
    base.validate()?;
    if let Some(Grid::Table1) = a.grid {
        let mut setup = GridSetup::table1(a.seed);
        if let Some(n) = a.n_train {
            setup.train.n_buildings = n;
        }
        if let Some(n) = a.n_test {
            setup.test.n_buildings = n;
        }
        let result = run_table1_grid(&setup, &base)?;
        return Ok(match fmt {
            Format::Text => result.to_text(),
            Format::Csv => result.to_csv(),
        });
    }
    let set = synthetic_building_set(&SyntheticSetConfig {
        n_buildings: a.n_train.unwrap_or(500),
        seed: a.seed,
        ..Default::default()
    })?;
    let (model, report) = train::<f64>(&set.samples, &base)?;
    if let Some(p) = &a.model_out {
        model.save(p)?;
    }
    let last = report.epoch_loss.last().copied().unwrap_or(f64::NAN);
    Ok(match fmt {
        Format::Text => format!(
            "loss: {}\noptimizer: {}\nn_train: {}\nn_eval: {}\nfinal_epoch_loss: {last:.4}\nheight_rmse_m: {:.3}\nshadow_rmse_m: {:.3}\n",
            base.loss, base.optimizer, report.n_train, report.n_eval, report.height_rmse_m, report.shadow_rmse_m
        ),
        Format::Csv => format!(
            "loss,optimizer,n_train,n_eval,final_epoch_loss,height_rmse_m,shadow_rmse_m\n{},{},{},{},{last:?},{:?},{:?}\n",
            base.loss, base.optimizer, report.n_train, report.n_eval, report.height_rmse_m, report.shadow_rmse_m
        ),
    })
}

fn serve(a: ServeArgs) -> Result<String> {
    let service = umbra_service::AnnotationService::open(&a.catalog, &a.store)?;
    eprintln!(
        "{} images, store {}",
        service.image_ids().len(),
        service.store_path().display()
    );
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(umbra_service::serve(Arc::new(service), a.addr))
        .map_err(|e| anyhow!("serve: {e}"))?;
    Ok(String::new())
}
