//! Batch experiments. Each writes CSV tables and JSON summaries into a run
//! directory and returns its manifest.

use std::path::Path;

use anyhow::{bail, Context, Result};
use log::info;
use serde::Serialize;

use stewart_core::experiments::{derive_seed, run_disturb, run_trace, summarize_traces, LetterSummary};
use stewart_core::learnkin::{build_dataset, evaluate_held_out, train, IkErrorReport, MlpModel, Split};
use stewart_core::rig::RIG_HEADER;
use stewart_core::sysid::{correlation_matrix, run_bode, workspace_extents, workspace_scan, BodeResult, CorrelationMatrix, WorkspaceExtents, WorkspaceSample};
use stewart_core::{ExperimentConfig, Plant};

use crate::manifest::{fmt, ExperimentKind, RunDir, RunManifest};

const TRACE_STREAM: u64 = 1;
const DATASET_STREAM: u64 = 3;
const TRAIN_STREAM: u64 = 4;
const EVAL_STREAM: u64 = 5;

pub const MODEL_FILE: &str = "model.json";
pub const DATASET_FILE: &str = "dataset.csv";

#[derive(Debug, Clone, Serialize)]
pub struct TraceTrialSummary {
    pub letter: char,
    pub position: usize,
    pub trial: usize,
    pub seed: u64,
    pub file: String,
    pub duration: f64,
    pub mse_cm2: Option<f64>,
    pub per_waypoint_cm2: Vec<Option<f64>>,
    pub flagged_waypoints: Vec<usize>,
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceSummary {
    pub letters: String,
    pub trials_per_letter: usize,
    pub aborted: usize,
    pub per_letter: Vec<LetterSummary>,
    pub trials: Vec<TraceTrialSummary>,
}

pub fn trace(config: &ExperimentConfig, seed: u64, out: &Path) -> Result<(RunManifest, TraceSummary)> {
    let mut dir = RunDir::create(out, ExperimentKind::Trace, seed, config)?;
    let s = &config.trace;
    let rig = config.trace_rig();
    let trials = run_trace(&rig, &s.letters, s.trials, derive_seed(seed, TRACE_STREAM, 0))?;
    let mut rows = Vec::new();
    for (i, t) in trials.iter().enumerate() {
        let position = i / s.trials;
        let file = format!("trajectories/{position:02}_{}_trial{}.csv", t.letter, t.trial);
        dir.write_csv(&file, &RIG_HEADER, t.samples.iter().map(|r| r.csv_row()))?;
        info!("trace {} trial {}: {:?}", t.letter, t.trial, t.error.as_ref().map(|e| e.mse_cm2));
        rows.push(TraceTrialSummary {
            letter: t.letter,
            position,
            trial: t.trial,
            seed: t.seed,
            file,
            duration: rig.cascade.waypoint_dwell * t.waypoints.len() as f64,
            mse_cm2: t.error.as_ref().map(|e| e.mse_cm2),
            per_waypoint_cm2: t.error.as_ref().map(|e| e.per_waypoint.clone()).unwrap_or_default(),
            flagged_waypoints: t.error.as_ref().map(|e| e.flagged.clone()).unwrap_or_default(),
            aborted: t.aborted.clone(),
        });
    }
    let summary = TraceSummary {
        letters: s.letters.clone(),
        trials_per_letter: s.trials,
        aborted: trials.iter().filter(|t| t.aborted.is_some()).count(),
        per_letter: summarize_traces(&trials),
        trials: rows,
    };
    dir.write_json("trace_summary.json", &summary)?;
    Ok((dir.finish()?, summary))
}

#[derive(Debug, Clone, Serialize)]
pub struct DisturbTrialSummary {
    pub direction_deg: f64,
    pub magnitude: f64,
    pub seed: u64,
    pub file: String,
    pub impulse_time: f64,
    pub peak_displacement: f64,
    pub final_displacement: f64,
    pub rejection: f64,
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DisturbSummary {
    pub horizon: f64,
    pub min_rejection: f64,
    pub trials: Vec<DisturbTrialSummary>,
}

pub fn disturb(config: &ExperimentConfig, seed: u64, out: &Path) -> Result<(RunManifest, DisturbSummary)> {
    let mut dir = RunDir::create(out, ExperimentKind::Disturb, seed, config)?;
    let s = &config.disturb;
    let trials = run_disturb(&config.disturb_rig(), &s.impulses, s.timing, seed)?;
    let mut rows = Vec::new();
    for (k, t) in trials.iter().enumerate() {
        let file = format!("disturb_{k}.csv");
        dir.write_csv(&file, &RIG_HEADER, t.samples.iter().map(|r| r.csv_row()))?;
        rows.push(DisturbTrialSummary {
            direction_deg: t.impulse.direction_deg,
            magnitude: t.impulse.magnitude,
            seed: t.seed,
            file,
            impulse_time: t.impulse_time,
            peak_displacement: t.peak_displacement,
            final_displacement: t.final_displacement,
            rejection: t.rejection,
            aborted: t.aborted.clone(),
        });
    }
    let summary = DisturbSummary {
        horizon: s.timing.horizon,
        min_rejection: rows.iter().map(|r| r.rejection).fold(f64::INFINITY, f64::min),
        trials: rows,
    };
    dir.write_json("disturb_summary.json", &summary)?;
    Ok((dir.finish()?, summary))
}

pub const BODE_HEADER: [&str; 4] = ["frequency_hz", "amplitude_rad", "magnitude_db", "phase_deg"];

pub fn sweep(config: &ExperimentConfig, seed: u64, out: &Path) -> Result<(RunManifest, BodeResult)> {
    let mut dir = RunDir::create(out, ExperimentKind::Sweep, seed, config)?;
    let plant = Plant::new(config.plant.clone())?;
    let result = run_bode(&plant, &config.sweep, &config.limits)?;
    let rows = result.points.iter().map(|p| {
        vec![
            fmt(p.frequency),
            fmt(p.amplitude),
            fmt(p.magnitude_db),
            p.phase_deg.map(fmt).unwrap_or_default(),
        ]
    });
    dir.write_csv("bode.csv", &BODE_HEADER, rows)?;
    dir.write_json("bode_summary.json", &result)?;
    Ok((dir.finish()?, result))
}

pub const SCAN_HEADER: [&str; 14] = [
    "j1", "j2", "j3", "j4", "j5", "j6", "x", "y", "z", "roll_deg", "pitch_deg", "yaw_deg", "buckled", "settle_time",
];

#[derive(Debug, Clone, Serialize)]
pub struct ScanSummary {
    pub samples: usize,
    pub buckled: usize,
    pub extents: WorkspaceExtents,
    /// Rows and columns in the order x, y, z, roll, pitch, yaw.
    pub correlation: CorrelationMatrix,
}

fn scan_rows(samples: &[WorkspaceSample]) -> impl Iterator<Item = Vec<String>> + '_ {
    samples.iter().map(|s| {
        let mut row: Vec<String> = s.joints.angles.iter().map(|v| fmt(*v)).collect();
        row.extend(s.pose.to_external().iter().map(|v| fmt(*v)));
        row.push(u8::from(s.buckled).to_string());
        row.push(fmt(s.settle_time));
        row
    })
}

pub fn scan(config: &ExperimentConfig, seed: u64, out: &Path) -> Result<(RunManifest, ScanSummary)> {
    let mut dir = RunDir::create(out, ExperimentKind::Scan, seed, config)?;
    let plant = Plant::new(config.plant.clone())?;
    let samples = workspace_scan(&plant, &config.scan, seed)?;
    dir.write_csv("scan.csv", &SCAN_HEADER, scan_rows(&samples))?;
    let summary = ScanSummary {
        samples: samples.len(),
        buckled: samples.iter().filter(|s| s.buckled).count(),
        extents: workspace_extents(&samples)?,
        correlation: correlation_matrix(&samples)?,
    };
    dir.write_json("scan_summary.json", &summary)?;
    Ok((dir.finish()?, summary))
}

pub const DATASET_HEADER: [&str; 13] = [
    "split", "x", "y", "z", "roll_deg", "pitch_deg", "yaw_deg", "j1", "j2", "j3", "j4", "j5", "j6",
];

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub pairs: usize,
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub excluded_buckled: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    /// Training loss at epoch 0 over training loss at epoch 49.
    pub loss_drop_first_50: Option<f64>,
}

pub fn train_ik(config: &ExperimentConfig, seed: u64, out: &Path) -> Result<(RunManifest, TrainSummary)> {
    let mut dir = RunDir::create(out, ExperimentKind::TrainIk, seed, config)?;
    let plant = Plant::new(config.plant.clone())?;
    let scan = workspace_scan(&plant, &config.scan, seed)?;
    let dataset = build_dataset(&plant, &scan, config.learn.random_poses, derive_seed(seed, DATASET_STREAM, 0))?;
    info!("dataset: {} pairs", dataset.len());
    let rows = dataset.pairs.iter().map(|p| {
        let mut row = vec![match p.split {
            Split::Train => "TRAIN".to_string(),
            Split::Test => "TEST".to_string(),
        }];
        row.extend(p.pose.iter().chain(p.joints.iter()).map(|v| format!("{v:?}")));
        row
    });
    dir.write_csv(DATASET_FILE, &DATASET_HEADER, rows)?;
    let mut params = config.learn.train.clone();
    params.seed = derive_seed(seed, TRAIN_STREAM, 0);
    let (model, report) = train(&dataset, config.plant.geometry.joint_limits, &params)?;
    let rows = (0..report.train_loss.len()).map(|e| {
        vec![
            e.to_string(),
            format!("{:e}", report.train_loss[e]),
            format!("{:e}", report.validation_loss[e]),
            format!("{:e}", report.learning_rate[e]),
        ]
    });
    dir.write_csv("training.csv", &["epoch", "train_loss", "validation_loss", "learning_rate"], rows)?;
    let mut text = model.to_json()?;
    text.push('\n');
    dir.write_text(MODEL_FILE, &text)?;
    let summary = TrainSummary {
        pairs: dataset.len(),
        train_pairs: dataset.split(Split::Train).count(),
        test_pairs: dataset.split(Split::Test).count(),
        excluded_buckled: dataset.excluded_buckled,
        epochs: report.train_loss.len(),
        best_epoch: report.best_epoch,
        best_validation_loss: report.best_validation_loss,
        loss_drop_first_50: report.train_loss.get(49).map(|l| report.train_loss[0] / l),
    };
    dir.write_json("train_summary.json", &summary)?;
    Ok((dir.finish()?, summary))
}

/// Poses of a `dataset.csv` written by [`train_ik`].
pub fn read_dataset_poses(path: &Path) -> Result<Vec<[f64; 6]>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != DATASET_HEADER.len() {
            bail!("{}: expected {} columns", path.display(), DATASET_HEADER.len());
        }
        let mut pose = [0.0; 6];
        for (i, v) in pose.iter_mut().enumerate() {
            *v = rec[i + 1].parse()?;
        }
        out.push(pose);
    }
    Ok(out)
}

pub fn eval_ik(config: &ExperimentConfig, seed: u64, model_path: &Path, dataset: Option<&Path>, out: &Path) -> Result<(RunManifest, IkErrorReport)> {
    let text = std::fs::read_to_string(model_path).with_context(|| format!("reading {}", model_path.display()))?;
    let model = MlpModel::from_json(&text)?;
    let exclude = match dataset {
        Some(p) => read_dataset_poses(p)?,
        None => Vec::new(),
    };
    let mut dir = RunDir::create(out, ExperimentKind::EvalIk, seed, config)?;
    let plant = Plant::new(config.plant.clone())?;
    let report = evaluate_held_out(&model, &plant, config.learn.eval_poses, derive_seed(seed, EVAL_STREAM, 0), &exclude)?;
    let rows = (0..6).map(|i| {
        vec![
            report.axes[i].clone(),
            fmt(report.rigid[i]),
            fmt(report.learned[i]),
            fmt(report.improvement[i]),
        ]
    });
    dir.write_csv("ik_errors.csv", &["axis", "rigid", "learned", "improvement"], rows)?;
    dir.write_json("ik_errors.json", &report)?;
    Ok((dir.finish()?, report))
}
