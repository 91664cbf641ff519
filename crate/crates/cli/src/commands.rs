use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use roadsafe_core::crash::{totals_per_slot, write_crashes};
use roadsafe_core::nsm::IntervalMetrics;
use roadsafe_core::pipeline::{build_dataset, report_tables, run_association, shapley_analysis};
use roadsafe_core::projection::{keypoint_pairs, parse_keypoints};
use roadsafe_core::ssm::write_ssm_rows;
use roadsafe_core::trajectory::parse_trajectories_with;
use roadsafe_core::{
    bin_crashes, compute_pair_ssms, compute_segment_metrics, fit_homography, parse_crashes, prepare_tracks,
    read_metrics, run_scenario, write_metrics, write_trajectories, CrashCounts, CrashFamily, CrashRecord,
    Homography64, ScenarioSpec, SegmentConfig, TrackPoint, Trajectory,
};
use serde::Serialize;

use crate::config::{Paths, RunConfig, SegmentEntry};
use crate::failure::Failure;
use crate::{Common, Format};

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path).map(BufReader::new).map_err(|e| Failure::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Failure::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Failure::io(path, e))
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(common.seed);
    Ok(cfg)
}

fn require_config(common: &Common) -> Result<RunConfig, Failure> {
    if common.config.is_none() {
        return Err(Failure::new("usage", "--config is required for this command"));
    }
    load_config(common)
}

fn output_dir(cfg: &RunConfig) -> PathBuf {
    cfg.resolve(cfg.paths.output_dir.as_deref().unwrap_or(Path::new(".")))
}

fn read_trajectories(path: &Path, cfg: &RunConfig) -> Result<Vec<Trajectory>, Failure> {
    parse_trajectories_with(open(path)?, cfg.metrics.fps, cfg.metrics.class_threshold_m)
        .map_err(|e| Failure::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Segments to process and their world-frame inputs: `--in` with one
/// segment, or every configured segment that names a trajectory file.
fn world_inputs<'a>(
    common: &Common,
    cfg: &'a RunConfig,
    segment: Option<&str>,
) -> Result<Vec<(&'a SegmentEntry, PathBuf)>, Failure> {
    if let Some(input) = &common.input {
        return Ok(vec![(cfg.pick_segment(segment)?, input.clone())]);
    }
    let picked: Vec<(&SegmentEntry, PathBuf)> = cfg
        .segments
        .iter()
        .filter(|s| segment.is_none_or(|id| s.segment.segment_id == id))
        .filter_map(|s| s.trajectories.as_ref().map(|p| (s, cfg.resolve(p))))
        .collect();
    if picked.is_empty() {
        return Err(Failure::new("usage", "no input: pass --in or set segments[].trajectories"));
    }
    Ok(picked)
}

#[derive(Serialize)]
struct HomographyFile {
    matrix: [[f64; 3]; 3],
    residual_rms: f64,
    /// Tangent-plane origin when the keypoints were GPS coordinates.
    anchor: Option<[f64; 2]>,
}

fn project_point(h: &Homography64, p: &TrackPoint, fps: f64) -> Result<TrackPoint, Failure> {
    let corners = [[p.x1, p.y1], [p.x2, p.y1], [p.x2, p.y2], [p.x1, p.y2]];
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for c in corners {
        let w = h.apply(c)?;
        for k in 0..2 {
            lo[k] = lo[k].min(w[k]);
            hi[k] = hi[k].max(w[k]);
        }
    }
    Ok(TrackPoint::new(p.frame, fps, lo[0], lo[1], hi[0], hi[1]))
}

fn project_file(
    input: &Path,
    output: &Path,
    keypoints: &Path,
    anchor: Option<[f64; 2]>,
    cfg: &RunConfig,
) -> Result<(), Failure> {
    let text = fs::read_to_string(keypoints).map_err(|e| Failure::io(keypoints, e))?;
    let kps = parse_keypoints(&text)?;
    let (pairs, plane) = keypoint_pairs(&kps, anchor.map(|a| (a[0], a[1])));
    let h = fit_homography(&pairs)?;
    let fps = cfg.metrics.fps;
    let trajs = read_trajectories(input, cfg)?;
    let projected = trajs
        .iter()
        .map(|t| {
            let points = t.points.iter().map(|p| project_point(&h, p, fps)).collect::<Result<Vec<_>, _>>()?;
            Ok(Trajectory::new(t.vehicle_id.clone(), points, cfg.metrics.class_threshold_m))
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    let mut w = create(output)?;
    write_trajectories(&mut w, &projected)?;
    w.flush().map_err(|e| Failure::io(output, e))?;
    let mut sidecar = output.as_os_str().to_owned();
    sidecar.push(".homography.json");
    write_json(
        Path::new(&sidecar),
        &HomographyFile {
            matrix: h.matrix,
            residual_rms: h.residual_rms,
            anchor: plane.map(|p| [p.lat0, p.lon0]),
        },
    )
}

pub fn project(common: &Common, keypoints: Option<&Path>, segment: Option<&str>) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let global_kp = keypoints
        .map(Path::to_path_buf)
        .or_else(|| cfg.paths.keypoints.as_ref().map(|p| cfg.resolve(p)));
    if let Some(input) = &common.input {
        let out = common
            .out
            .as_ref()
            .ok_or_else(|| Failure::new("usage", "--out is required with --in"))?;
        let entry = if cfg.segments.is_empty() && segment.is_none() {
            None
        } else {
            Some(cfg.pick_segment(segment)?)
        };
        let kp = keypoints
            .map(Path::to_path_buf)
            .or_else(|| entry.and_then(|e| e.keypoints.as_ref()).map(|p| cfg.resolve(p)))
            .or(global_kp)
            .ok_or_else(|| Failure::new("usage", "no keypoints: pass --keypoints or set them in the config"))?;
        return project_file(input, out, &kp, entry.and_then(|e| e.segment.anchor), &cfg);
    }
    let mut done = 0;
    for s in &cfg.segments {
        let (Some(raw), Some(world)) = (&s.raw_trajectories, &s.trajectories) else {
            continue;
        };
        if segment.is_some_and(|id| id != s.segment.segment_id) {
            continue;
        }
        let kp = s
            .keypoints
            .as_ref()
            .map(|p| cfg.resolve(p))
            .or_else(|| global_kp.clone())
            .ok_or_else(|| Failure::new("config", format!("segment {:?} has no keypoints", s.segment.segment_id)))?;
        project_file(&cfg.resolve(raw), &cfg.resolve(world), &kp, s.segment.anchor, &cfg)?;
        done += 1;
    }
    if done == 0 {
        return Err(Failure::new(
            "usage",
            "no input: pass --in/--out or set segments[].raw_trajectories and trajectories",
        ));
    }
    Ok(())
}

pub fn metrics(common: &Common, segment: Option<&str>) -> Result<(), Failure> {
    let cfg = require_config(common)?;
    let inputs = world_inputs(common, &cfg, segment)?;
    let thresholds = inputs[0].0.segment.osr_thresholds.clone();
    if inputs.iter().any(|(s, _)| s.segment.osr_thresholds != thresholds) {
        return Err(Failure::new(
            "config",
            "segments written to one metrics file must share osr_thresholds",
        ));
    }
    let mut rows: Vec<IntervalMetrics> = Vec::new();
    for (entry, path) in &inputs {
        let trajs = read_trajectories(path, &cfg)?;
        let (tracks, _) = prepare_tracks(&trajs, &cfg.metrics)?;
        rows.extend(compute_segment_metrics(&tracks, &entry.segment, &cfg.metrics)?);
    }
    let out = common.out.clone().unwrap_or_else(|| match common.format {
        Format::Csv => output_dir(&cfg).join("metrics.csv"),
        Format::Json => output_dir(&cfg).join("metrics.json"),
    });
    match common.format {
        Format::Csv => {
            let mut w = create(&out)?;
            write_metrics(&mut w, &rows, &thresholds, cfg.metrics.emit_e_ttc)?;
            w.flush().map_err(|e| Failure::io(&out, e))
        }
        Format::Json => write_json(&out, &rows),
    }
}

pub fn ssm(common: &Common, segment: Option<&str>) -> Result<(), Failure> {
    let cfg = require_config(common)?;
    let inputs = world_inputs(common, &cfg, segment)?;
    if inputs.len() > 1 && common.out.is_some() {
        return Err(Failure::new("usage", "--out needs a single segment; pass --segment"));
    }
    for (entry, path) in &inputs {
        let trajs = read_trajectories(path, &cfg)?;
        let (tracks, _) = prepare_tracks(&trajs, &cfg.metrics)?;
        let rows = compute_pair_ssms(&tracks, &entry.segment, &cfg.ssm)?;
        let ext = match common.format {
            Format::Csv => "csv",
            Format::Json => "json",
        };
        let out = common
            .out
            .clone()
            .unwrap_or_else(|| output_dir(&cfg).join(format!("ssm_{}.{ext}", entry.segment.segment_id)));
        match common.format {
            Format::Csv => {
                let mut w = create(&out)?;
                write_ssm_rows(&mut w, &rows)?;
                w.flush().map_err(|e| Failure::io(&out, e))?;
            }
            Format::Json => write_json(&out, &rows)?,
        }
    }
    Ok(())
}

struct AssociationInputs {
    cfg: RunConfig,
    segments: Vec<SegmentConfig>,
    metrics: Vec<IntervalMetrics>,
    counts: Vec<CrashCounts>,
    hourly: Vec<u64>,
    warnings: Vec<String>,
}

fn association_inputs(common: &Common, crashes: Option<&Path>) -> Result<AssociationInputs, Failure> {
    let cfg = require_config(common)?;
    let metrics_path = common
        .input
        .clone()
        .or_else(|| cfg.paths.metrics.as_ref().map(|p| cfg.resolve(p)))
        .unwrap_or_else(|| output_dir(&cfg).join("metrics.csv"));
    let crash_path = crashes
        .map(Path::to_path_buf)
        .or_else(|| cfg.paths.crashes.as_ref().map(|p| cfg.resolve(p)))
        .ok_or_else(|| Failure::new("usage", "no crash file: pass --crashes or set paths.crashes"))?;
    let metrics = read_metrics(open(&metrics_path)?)
        .map_err(|e| Failure::new(e.kind(), format!("{}: {e}", metrics_path.display())))?;
    let (records, mut warnings): (Vec<CrashRecord>, Vec<String>) = parse_crashes(open(&crash_path)?)
        .map_err(|e| Failure::new(e.kind(), format!("{}: {e}", crash_path.display())))?;
    let segments = cfg.segment_configs();
    let years = cfg.analysis.years.map(|[a, b]| (a, b));
    let binned = bin_crashes(&records, &segments, cfg.analysis.slot_minutes, years)?;
    let hourly = bin_crashes(&records, &segments, 60, years)?;
    warnings.extend(binned.warnings.iter().cloned());
    Ok(AssociationInputs {
        hourly: totals_per_slot(&hourly.counts, CrashFamily::AllType, 24),
        counts: binned.counts,
        segments,
        metrics,
        warnings,
        cfg,
    })
}

fn association_out_dir(common: &Common, cfg: &RunConfig) -> PathBuf {
    common.out.clone().unwrap_or_else(|| output_dir(cfg))
}

pub fn associate(common: &Common, crashes: Option<&Path>) -> Result<(), Failure> {
    let inp = association_inputs(common, crashes)?;
    let mut report = run_association(
        &inp.metrics,
        &inp.counts,
        &inp.segments,
        inp.cfg.metrics.interval_s,
        Some(&inp.hourly),
        &inp.cfg.analysis,
    )?;
    report.warnings.extend(inp.warnings);
    let dir = association_out_dir(common, &inp.cfg);
    write_json(&dir.join("association_report.json"), &report)?;
    if common.format == Format::Csv {
        for (name, body) in report_tables(&report) {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Failure::io(&path, e))?;
        }
    }
    Ok(())
}

pub fn shapley(common: &Common, crashes: Option<&Path>) -> Result<(), Failure> {
    let inp = association_inputs(common, crashes)?;
    inp.cfg.analysis.validate()?;
    let predictors = inp.cfg.analysis.active_predictors();
    let mut csv = String::from("family,rank,metric,phi\n");
    let mut reports = Vec::new();
    for &family in &inp.cfg.analysis.families {
        let (d, _) = build_dataset(
            &inp.metrics,
            &inp.counts,
            &inp.segments,
            inp.cfg.metrics.interval_s,
            family,
            &predictors,
        )?;
        let s = shapley_analysis(&d)?;
        for (rank, &j) in s.ranking().iter().enumerate() {
            csv.push_str(&format!("{},{},{},{}\n", family.name(), rank + 1, s.predictor_names[j], roadsafe_core::format_float(s.phi[j])));
        }
        reports.push((family, s));
    }
    let dir = association_out_dir(common, &inp.cfg);
    match common.format {
        Format::Csv => {
            let path = dir.join("shapley.csv");
            if let Some(d) = path.parent() {
                fs::create_dir_all(d).map_err(|e| Failure::io(d, e))?;
            }
            fs::write(&path, csv).map_err(|e| Failure::io(&path, e))
        }
        Format::Json => write_json(&dir.join("shapley.json"), &reports),
    }
}

#[derive(Serialize)]
struct Truth<'a> {
    spec: &'a ScenarioSpec,
    interval_params: &'a [Vec<roadsafe_core::synth::IntervalParams>],
    outcome: &'a roadsafe_core::synth::PlantOutcome,
}

/// Four planar keypoints with pixel coordinates equal to meters.
const IDENTITY_KEYPOINTS: &str = r#"[
  {"u": 0.0, "v": 0.0, "x": 0.0, "y": 0.0},
  {"u": 100.0, "v": 0.0, "x": 100.0, "y": 0.0},
  {"u": 100.0, "v": 100.0, "x": 100.0, "y": 100.0},
  {"u": 0.0, "v": 100.0, "x": 0.0, "y": 100.0}
]
"#;

pub fn synth(common: &Common) -> Result<(), Failure> {
    let mut spec: ScenarioSpec = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::io(p, e))?;
            toml::from_str(&text).map_err(|e| Failure::new("config", format!("{}: {e}", p.display())))?
        }
        None => ScenarioSpec::default(),
    };
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    let dir = common
        .out
        .clone()
        .ok_or_else(|| Failure::new("usage", "--out <dir> is required"))?;
    let out = run_scenario(&spec)?;

    let mut entries = Vec::new();
    for (seg, trajs) in out.segments.iter().zip(&out.trajectories) {
        let raw = PathBuf::from("raw").join(format!("{}.csv", seg.segment_id));
        let mut w = create(&dir.join(&raw))?;
        write_trajectories(&mut w, trajs)?;
        w.flush().map_err(|e| Failure::io(&raw, e))?;
        entries.push(SegmentEntry {
            segment: seg.clone(),
            trajectories: Some(PathBuf::from("world").join(format!("{}.csv", seg.segment_id))),
            raw_trajectories: Some(raw),
            keypoints: None,
        });
    }
    let kp = dir.join("keypoints.json");
    fs::write(&kp, IDENTITY_KEYPOINTS).map_err(|e| Failure::io(&kp, e))?;
    let crashes = dir.join("crashes.csv");
    let mut w = create(&crashes)?;
    write_crashes(&mut w, &out.crashes)?;
    w.flush().map_err(|e| Failure::io(&crashes, e))?;

    let plant = &spec.plant;
    let mut run = RunConfig {
        seed: Some(spec.seed),
        fps: None,
        paths: Paths {
            keypoints: Some("keypoints.json".into()),
            crashes: Some("crashes.csv".into()),
            metrics: Some("out/metrics.csv".into()),
            output_dir: Some("out".into()),
        },
        segments: entries,
        metrics: spec.metrics_config(),
        ..RunConfig::default()
    };
    run.analysis.seed = spec.seed;
    run.analysis.slot_minutes = plant.slot_minutes;
    run.analysis.years = Some([plant.first_year, plant.first_year + plant.years as i32 - 1]);
    let text = toml::to_string(&run).map_err(|e| Failure::new("config", e.to_string()))?;
    let run_path = dir.join("run.toml");
    fs::write(&run_path, text).map_err(|e| Failure::io(&run_path, e))?;
    write_json(
        &dir.join("truth.json"),
        &Truth {
            spec: &spec,
            interval_params: &out.interval_params,
            outcome: &out.outcome,
        },
    )
}
