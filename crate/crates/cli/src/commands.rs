use crate::config::{CameraMotion, ConfigError, RunConfig};
use crate::manifest::Outputs;
use crate::{CliError, NormalizeArgs, OverlayArgs, TrackArgs, WindArgs};
use formloop_client::Client;
use formloop_core::bench::{
    amplification_study, evaluate, generate_observations, generate_scene, geometric_occlusion, look_at,
    predicted_amplification, AmplificationReport, CameraTrajectory, GroundTruth, TruthSource,
};
use formloop_core::camera::CameraIntrinsics;
use formloop_core::ingest::{crop, load_cloud, normalize as normalize_cloud, save_cloud, PlyEncoding};
use formloop_core::pipeline::{
    refine_multi_pass, write_pass_metrics_csv, LogEstimator, OcclusionSchedule, PassMetrics, SyntheticEstimator,
};
use formloop_core::protocol::{Event, StudyRequest, TrackRequest, WindRunRequest};
use formloop_core::render::{
    frame_name, render_plot, render_speed_map, render_wind_overlay, render_wireframe, scene_items, track_items,
    write_image, Image, Series, SeriesStyle, BLUE, RED,
};
use formloop_core::scene::{read_trajectories_jsonl, write_trajectories_jsonl, ObservationLog, Provenance, Scene, Trajectories};
use formloop_core::se3::Pose;
use formloop_core::seed::mix_seed;
use formloop_core::wind::{
    read_binary, run_to_steady_with, voxelize, write_binary, write_csv, FieldExport, FieldSidecar, GridSpec, WindField,
};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

/// Background behind wind overlays.
const OVERLAY_BASE: [u8; 3] = [30, 30, 30];

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let file = File::open(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(ConfigError::Invalid(msg.into()))
}

pub fn normalize(config: &RunConfig, args: &NormalizeArgs, out: &mut Outputs) -> Result<Value, CliError> {
    let mut cloud = load_cloud(&args.input)?;
    if let Some(bounds) = &config.normalize.crop {
        cloud = crop(&cloud, bounds)?;
    }
    let (normalized, params) = normalize_cloud(&cloud)?;
    save_cloud(&out.path("normalized.ply")?, &normalized, PlyEncoding::Ascii)?;
    out.write_json("normalization.json", &params)?;
    Ok(json!({"points": normalized.len(), "center": params.center, "radius": params.radius}))
}

pub(crate) fn camera_path(config: &RunConfig) -> CameraTrajectory {
    let s = &config.synth;
    match s.camera {
        CameraMotion::Orbit => CameraTrajectory::orbit(&s.orbit),
        CameraMotion::Fixed => {
            let eye = s.fixed_eye.into();
            CameraTrajectory::fixed(&look_at(&eye, &s.orbit.target.into()), s.orbit.frames)
        }
    }
}

pub fn synth(config: &RunConfig, out: &mut Outputs) -> Result<Value, CliError> {
    let s = &config.synth;
    s.noise.validate().map_err(invalid)?;
    let (scene_seed, noise_seed) = (mix_seed(&[config.seed, 1]), mix_seed(&[config.seed, 2]));
    out.record_seed("scene", scene_seed);
    out.record_seed("noise", noise_seed);

    let scene = generate_scene(s.blocks, s.layout, scene_seed)?;
    let truth = GroundTruth::static_scene(scene, camera_path(config));
    let mut schedule = OcclusionSchedule { intervals: s.occlusion.clone() };
    if s.geometric_occlusion {
        schedule.intervals.extend(geometric_occlusion(&truth).intervals);
    }
    schedule.intervals.sort();
    schedule.intervals.dedup();
    let est = SyntheticEstimator::new(&truth, s.noise, noise_seed)
        .with_occlusion(schedule.clone())
        .with_intrinsics(s.intrinsics);
    let log = generate_observations(&truth, &est);

    out.write_json("scene.json", &truth.scene)?;
    out.write_json("truth.json", &truth)?;
    out.write_json("occlusion.json", &schedule)?;
    log.write_jsonl(File::create(out.path("observations.jsonl")?)?)?;
    let hidden = log.observations.iter().filter(|o| !o.visible).count();
    Ok(json!({
        "blocks": truth.scene.blocks.len(),
        "frames": truth.frame_count(),
        "observations": log.observations.len(),
        "hidden": hidden,
    }))
}

fn provenance_counts(tracks: &Trajectories) -> BTreeMap<&'static str, usize> {
    let mut counts = BTreeMap::new();
    for t in tracks.values() {
        for (_, e) in t.frames() {
            let key = match e.provenance {
                Provenance::Observed => "observed",
                Provenance::HeldLast => "held_last",
                Provenance::AnchorInferred { .. } => "anchor_inferred",
                Provenance::PriorRefined { .. } => "prior_refined",
            };
            *counts.entry(key).or_default() += 1;
        }
    }
    counts
}

/// Writes trajectories and, with ground truth, metrics; returns the summary.
pub(crate) fn write_tracking(
    tracks: &Trajectories,
    pass_metrics: &[PassMetrics],
    truth: Option<&GroundTruth>,
    out: &mut Outputs,
) -> Result<Value, CliError> {
    write_trajectories_jsonl(tracks, File::create(out.path("trajectories.jsonl")?)?)?;
    let mut summary = json!({"blocks": tracks.len(), "provenance": provenance_counts(tracks)});
    if let Some(truth) = truth {
        let metrics = evaluate(tracks, truth)?;
        out.write_json("metrics.json", &metrics)?;
        summary["metrics"] = serde_json::to_value(metrics.aggregate)?;
    }
    if !pass_metrics.is_empty() {
        write_pass_metrics_csv(pass_metrics, File::create(out.path("pass_metrics.csv")?)?)?;
    }
    Ok(summary)
}

pub fn track(config: &RunConfig, args: &TrackArgs, remote: Option<&Client>, out: &mut Outputs) -> Result<Value, CliError> {
    let file = File::open(&args.log).map_err(|e| CliError::Runtime(format!("{}: {e}", args.log.display())))?;
    let log = ObservationLog::read_jsonl(BufReader::new(file))?;
    let truth: Option<GroundTruth> = args.truth.as_deref().map(read_json).transpose()?;
    config.tracker.validate()?;

    let (tracks, pass_metrics) = match remote {
        Some(client) => {
            let req = TrackRequest {
                scene: log.scene.clone(),
                observations: log.observations.clone(),
                config: config.tracker.clone(),
            };
            (runtime()?.block_on(client.track(&req))?.trajectories, Vec::new())
        }
        None => {
            let est = LogEstimator::new(&log);
            let t = truth.as_ref().map(|t| t as &dyn TruthSource);
            let outcome = refine_multi_pass(&est, &log.scene, &config.tracker, log.frame_count(), t)?;
            (outcome.trajectories, outcome.pass_metrics)
        }
    };
    write_tracking(&tracks, &pass_metrics, truth.as_ref(), out)
}

pub(crate) fn study_plot(report: &AmplificationReport) -> Result<Image, CliError> {
    let measured = Series {
        points: report.rows.iter().map(|r| [r.distance_m, r.mean_error_m]).collect(),
        color: RED,
        style: SeriesStyle::Markers,
    };
    let predicted = Series {
        points: report.rows.iter().map(|r| [r.distance_m, r.predicted_m]).collect(),
        color: BLUE,
        style: SeriesStyle::Line,
    };
    Ok(render_plot(&[predicted, measured], 480, 320)?)
}

pub fn study(config: &RunConfig, remote: Option<&Client>, out: &mut Outputs) -> Result<Value, CliError> {
    let s = &config.study;
    out.record_seed("study", config.seed);
    let report = match remote {
        Some(client) => {
            let req = StudyRequest {
                distances: s.distances.clone(),
                sigma_deg: s.sigma_deg,
                trials: s.trials,
                seed: config.seed,
                axis_model: s.axis_model,
            };
            runtime()?.block_on(client.study(&req))?
        }
        None => amplification_study(&s.distances, s.sigma_deg.to_radians(), s.trials, config.seed, s.axis_model)?,
    };
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    out.write("amplification.csv", &csv)?;
    write_image(&study_plot(&report)?, &out.path(&format!("amplification.{}", config.render.format.ext()))?)?;
    let base = report.rows.first().map(|r| r.mean_error_m).unwrap_or(f64::NAN);
    let rows: Vec<Value> = report
        .rows
        .iter()
        .map(|r| {
            json!({
                "distance_m": r.distance_m,
                "mean_error_m": r.mean_error_m,
                "predicted_m": predicted_amplification(r.distance_m, r.sigma_rad),
                "ratio_to_first": r.mean_error_m / base,
            })
        })
        .collect();
    Ok(json!({"rows": rows, "slope": report.slope()}))
}

/// A scene file, or a ground-truth file whose scene is used.
pub(crate) fn load_scene(path: Option<&Path>) -> Result<Scene, CliError> {
    let Some(path) = path else {
        return Ok(Scene::default_tabletop());
    };
    let v: Value = read_json(path)?;
    if v.get("camera").is_some() {
        Ok(serde_json::from_value::<GroundTruth>(v)?.scene)
    } else {
        Ok(serde_json::from_value(v)?)
    }
}

pub(crate) fn solve_local(scene: &Scene, config: &RunConfig) -> Result<WindField, CliError> {
    let w = &config.wind;
    let mask = voxelize(scene, &w.spec)?;
    mask.check(&w.spec)?;
    Ok(run_to_steady_with(&mask, &w.spec, w.tol, w.max_iters, |iter, residual| {
        tracing::debug!(iter, residual, "wind progress");
    })?)
}

fn solve_remote(client: &Client, scene: &Scene, config: &RunConfig) -> Result<(WindField, u64), CliError> {
    let w = &config.wind;
    let req = WindRunRequest { spec: w.spec, tol: w.tol, max_iters: w.max_iters };
    runtime()?.block_on(async {
        let session = client.create_session(Some(scene.clone())).await?;
        let mut events = client.events(&session.id).await?;
        let run = client.start_wind(&session.id, &req).await?;
        while let Some(ev) = events.next().await {
            match ev?.event {
                Event::WindDone { run_id, .. } if run_id == run.run_id => {
                    let r = client.wind(&session.id).await?;
                    let export = FieldExport { nx: r.nx, ny: r.ny, dx: r.spec.dx, rho: r.rho, ux: r.ux, uy: r.uy };
                    let mut field = WindField::from_export(&export)?;
                    field.iterations = r.iterations;
                    field.converged = r.converged;
                    return Ok((field, r.scene_version));
                }
                Event::WindFailed { run_id, reason } if run_id == run.run_id => return Err(CliError::Runtime(reason)),
                Event::WindProgress { iter, residual, .. } => tracing::debug!(iter, residual, "wind progress"),
                _ => {}
            }
        }
        Err(CliError::Runtime("event stream closed before the run finished".into()))
    })
}

/// Writes `wind.bin`, its `wind.json` sidecar, `wind.csv` and a plan-view
/// speed map.
pub(crate) fn write_wind(
    field: &WindField,
    spec: &GridSpec,
    scene_version: Option<u64>,
    config: &RunConfig,
    out: &mut Outputs,
) -> Result<Value, CliError> {
    let mut bin = Vec::new();
    write_binary(field, spec.dx, &mut bin)?;
    out.write("wind.bin", &bin)?;
    let sidecar = FieldSidecar {
        spec: *spec,
        iterations: field.iterations,
        converged: field.converged,
        max_speed_lattice: field.max_speed(),
        scene_version,
    };
    out.write_json("wind.json", &sidecar)?;
    let mut csv = Vec::new();
    write_csv(field, spec, &mut csv)?;
    out.write("wind.csv", &csv)?;
    let map = render_speed_map(field, config.render.map_scale)?;
    write_image(&map, &out.path(&format!("wind.{}", config.render.format.ext()))?)?;

    let dt = spec.dx * spec.inlet_velocity / spec.physical_inlet_speed;
    Ok(json!({
        "nx": field.nx,
        "ny": field.ny,
        "iterations": field.iterations,
        "converged": field.converged,
        "max_speed_lattice": field.max_speed(),
        "max_speed_m_s": field.max_speed() * spec.physical_inlet_speed / spec.inlet_velocity,
        "tau": spec.tau,
        "viscosity_m2_s": spec.lattice_viscosity() * spec.dx * spec.dx / dt,
    }))
}

pub fn wind(config: &RunConfig, args: &WindArgs, remote: Option<&Client>, out: &mut Outputs) -> Result<Value, CliError> {
    config.wind.spec.validate()?;
    let scene = load_scene(args.scene.as_deref())?;
    let (field, version) = match remote {
        Some(client) => {
            let (f, v) = solve_remote(client, &scene, config)?;
            (f, Some(v))
        }
        None => (solve_local(&scene, config)?, None),
    };
    write_wind(&field, &config.wind.spec, version, config, out)
}

/// One composited frame: optional wind slice, then wireframes.
pub(crate) fn render_frame(
    scene: &Scene,
    extrinsic: &Pose,
    tracks: Option<(&Trajectories, usize)>,
    wind: Option<(&WindField, &GridSpec)>,
    k: &CameraIntrinsics,
    alpha: f64,
) -> Result<Image, CliError> {
    let base = match wind {
        Some((field, spec)) => {
            let bg = Image::filled(k.width, k.height, OVERLAY_BASE)?;
            render_wind_overlay(field, spec, extrinsic, k, &bg, alpha)
        }
        None => Image::blank_for(k),
    };
    let items = match tracks {
        Some((t, frame)) => track_items(scene, t, frame),
        None => scene_items(scene, extrinsic),
    };
    Ok(render_wireframe(&items, k, &base))
}

pub(crate) fn load_field(path: &Path) -> Result<(WindField, GridSpec), CliError> {
    let file = File::open(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let export = read_binary(BufReader::new(file))?;
    let sidecar: FieldSidecar = read_json(&path.with_extension("json"))?;
    if (sidecar.spec.nx, sidecar.spec.ny) != (export.nx, export.ny) {
        return Err(CliError::Runtime("field and sidecar dimensions differ".into()));
    }
    Ok((WindField::from_export(&export)?, sidecar.spec))
}

pub fn overlay(config: &RunConfig, args: &OverlayArgs, out: &mut Outputs) -> Result<Value, CliError> {
    let r = &config.render;
    r.intrinsics.validate()?;
    if r.frame_stride == 0 {
        return Err(invalid("render.frame_stride must be at least 1"));
    }
    let truth: GroundTruth = read_json(&args.truth)?;
    let tracks = match &args.trajectories {
        Some(p) => {
            let f = File::open(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
            Some(read_trajectories_jsonl(BufReader::new(f))?)
        }
        None => None,
    };
    let wind = args.field.as_deref().map(load_field).transpose()?;
    let mut rendered = 0;
    for f in (0..truth.frame_count()).step_by(r.frame_stride) {
        let mut scene = truth.scene.clone();
        scene.world_poses = truth.world_poses[f].clone();
        let img = render_frame(
            &scene,
            &truth.camera.poses[f],
            tracks.as_ref().map(|t| (t, f)),
            wind.as_ref().map(|(w, s)| (w, s)),
            &r.intrinsics,
            r.alpha,
        )?;
        write_image(&img, &out.path(&format!("frames/{}", frame_name(f, r.format.ext())))?)?;
        rendered += 1;
    }
    Ok(json!({"frames": rendered}))
}

pub fn serve(config: &RunConfig) -> Result<(), CliError> {
    let server = formloop_server::ServerConfig { snapshot: config.serve.snapshot.clone() };
    runtime()?.block_on(async {
        let listener = tokio::net::TcpListener::bind(&config.serve.bind).await?;
        println!("{}", json!({"listening": listener.local_addr()?.to_string()}));
        formloop_server::serve(listener, server, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        Ok(())
    })
}
