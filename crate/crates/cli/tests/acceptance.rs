//! Acceptance suite. One PASS/FAIL line per criterion; exits non-zero when
//! any criterion fails. An optional argument selects criteria by substring.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stewart_cli::runs;
use stewart_core::experiments::{derive_seed, run_disturb, run_trace, summarize_traces};
use stewart_core::geometry::{
    forward_kinematics, inverse_kinematics, AnchorLayout, FkOptions, JointVector,
};
use stewart_core::learnkin::{build_dataset, evaluate_held_out, train, Split};
use stewart_core::plant::Axis;
use stewart_core::sysid::{
    analyse_sweep, correlation_matrix, generate_sweep, record_sweep, run_bode, workspace_extents, workspace_scan,
    SecondOrderSystem, SweepSpec, WorkspaceSample,
};
use stewart_core::{ExperimentConfig, Plant, PlatformGeometry, Pose6, WorkspaceLimits};

const SEED: u64 = 1;

type Outcome = Result<String, String>;

/// Shared between criteria: the full joint-grid scan of the calibrated plant.
#[derive(Default)]
struct Context {
    scan: Option<(Vec<WorkspaceSample>, Duration)>,
}

impl Context {
    fn scan(&mut self, plant: &Plant) -> Result<&(Vec<WorkspaceSample>, Duration), String> {
        if self.scan.is_none() {
            let t = Instant::now();
            let samples = workspace_scan(plant, &ExperimentConfig::default().scan, SEED).map_err(|e| e.to_string())?;
            self.scan = Some((samples, t.elapsed()));
        }
        Ok(self.scan.as_ref().unwrap())
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, bound: f64) -> bool {
    elapsed.as_secs_f64() < bound
}

fn random_poses(n: usize, seed: u64, limits: &WorkspaceLimits) -> Vec<Pose6> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Pose6::from_external(std::array::from_fn(|i| rng.random_range(limits.min[i]..=limits.max[i]))))
        .collect()
}

type Mat4 = [[f64; 4]; 4];

fn mul(a: &Mat4, b: &Mat4) -> Mat4 {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..4).map(|k| a[i][k] * b[k][j]).sum()))
}

fn translation(x: f64, y: f64, z: f64) -> Mat4 {
    [[1.0, 0.0, 0.0, x], [0.0, 1.0, 0.0, y], [0.0, 0.0, 1.0, z], [0.0, 0.0, 0.0, 1.0]]
}

fn rot_x(a: f64) -> Mat4 {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0, 0.0], [0.0, c, -s, 0.0], [0.0, s, c, 0.0], [0.0, 0.0, 0.0, 1.0]]
}

fn rot_y(a: f64) -> Mat4 {
    let (s, c) = a.sin_cos();
    [[c, 0.0, s, 0.0], [0.0, 1.0, 0.0, 0.0], [-s, 0.0, c, 0.0], [0.0, 0.0, 0.0, 1.0]]
}

fn rot_z(a: f64) -> Mat4 {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0, 0.0], [s, c, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
}

/// Strut lengths by chaining homogeneous transforms: base to plate, then
/// plate centre to each upper anchor, measured from each lower anchor.
fn transform_chain_lengths(pose: &Pose6, g: &PlatformGeometry) -> [f64; 6] {
    let plate = mul(
        &mul(&mul(&translation(pose.x, pose.y, pose.z), &rot_z(pose.yaw)), &rot_y(pose.pitch)),
        &rot_x(pose.roll),
    );
    std::array::from_fn(|i| {
        let n = i as i32 + 1;
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        let lower_angle = sign * g.corner_offset + TAU / 3.0 * f64::from(n / 2);
        let upper_angle = match g.anchor_layout {
            AnchorLayout::Mirrored => lower_angle + sign * (PI / 3.0 - 2.0 * g.corner_offset),
            AnchorLayout::Coincident => lower_angle,
        };
        let anchor = mul(&mul(&plate, &rot_z(upper_angle)), &translation(g.upper_radius, 0.0, 0.0));
        let lower = mul(&rot_z(lower_angle), &translation(g.lower_radius, 0.0, 0.0));
        (0..3).map(|k| (anchor[k][3] - lower[k][3]).powi(2)).sum::<f64>().sqrt()
    })
}

fn ik_oracle(_: &mut Context) -> Outcome {
    let g = PlatformGeometry::default();
    let poses = random_poses(1000, 101, &WorkspaceLimits::default());
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for p in &poses {
        let ik = inverse_kinematics(p, &g).0;
        let oracle = transform_chain_lengths(p, &g);
        for (a, b) in ik.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    let el = t.elapsed();
    check(
        worst < 1e-9 && within(el, 1.0),
        format!("1000 poses, max |dl| {worst:.2e} m (< 1e-9), {:.3} s (< 1 s)", el.as_secs_f64()),
    )
}

fn fk_round_trip(_: &mut Context) -> Outcome {
    let g = PlatformGeometry::default();
    let limits = WorkspaceLimits::default();
    let poses = random_poses(500, 102, &limits);
    let guess = limits.center_pose();
    let t = Instant::now();
    let mut recovered = 0;
    let (mut worst_t, mut worst_r): (f64, f64) = (0.0, 0.0);
    for p in &poses {
        let lengths = inverse_kinematics(p, &g).0;
        let joints = JointVector::new(lengths.map(|l| ((l - g.neutral_strut_length) / g.servo_gain).to_degrees()));
        let Ok(sol) = forward_kinematics(&joints, &g, &guess, &FkOptions::default()) else {
            continue;
        };
        let a = p.to_array();
        let b = sol.pose.to_array();
        let dt = (0..3).map(|i| (a[i] - b[i]).abs()).fold(0.0, f64::max);
        let dr = (3..6).map(|i| (a[i] - b[i]).abs()).fold(0.0, f64::max);
        if dt <= 1e-6 && dr <= 1e-5 {
            recovered += 1;
            worst_t = worst_t.max(dt);
            worst_r = worst_r.max(dr);
        }
    }
    let el = t.elapsed();
    let rate = recovered as f64 / poses.len() as f64;
    check(
        rate >= 0.99 && within(el, 10.0),
        format!(
            "{recovered}/500 recovered within 1e-6 m / 1e-5 rad ({:.1}% >= 99%), worst {worst_t:.1e} m / {worst_r:.1e} rad, {:.2} s (< 10 s)",
            100.0 * rate,
            el.as_secs_f64()
        ),
    )
}

/// `wn^2 / (s^2 + 2 zeta wn s + wn^2)` at `f` Hz: (dB, degrees).
fn second_order(fnat: f64, zeta: f64, f: f64) -> (f64, f64) {
    let r = f / fnat;
    let re = 1.0 - r * r;
    let im = 2.0 * zeta * r;
    (-20.0 * re.hypot(im).log10(), -im.atan2(re).to_degrees())
}

fn bode_oracle(_: &mut Context) -> Outcome {
    let (fnat, zeta, dt) = (16.0, 0.7, 1e-3);
    let t = Instant::now();
    let spec = SweepSpec { segment_duration: 6.0, ..Default::default() };
    let schedule = generate_sweep(&spec, &WorkspaceLimits::default()).map_err(|e| e.to_string())?;
    let mut sys = SecondOrderSystem::new(fnat, zeta, 0.0, dt);
    let records = record_sweep(&mut sys, &schedule, 1.0);
    let result = analyse_sweep(Axis::Roll, &records, dt, 0.0);
    let el = t.elapsed();
    let reference = second_order(fnat, zeta, spec.f_min).0;
    let (mut worst_db, mut worst_deg): (f64, f64) = (0.0, 0.0);
    for p in &result.points {
        let (db, deg) = second_order(fnat, zeta, p.frequency);
        worst_db = worst_db.max((p.magnitude_db - (db - reference)).abs());
        worst_deg = worst_deg.max(p.phase_deg.map_or(f64::INFINITY, |ph| (ph - deg).abs()));
    }
    let z2 = 2.0 * zeta * zeta;
    let analytic = fnat * (1.0 - z2 + ((1.0 - z2).powi(2) + 1.0).sqrt()).sqrt();
    let bw_err = result.crossover_3db.map_or(f64::INFINITY, |f| (f / analytic - 1.0).abs());
    check(
        result.points.len() == 30 && worst_db <= 0.5 && worst_deg <= 5.0 && bw_err <= 0.05 && within(el, 30.0),
        format!(
            "{} frequencies, worst {worst_db:.3} dB (<= 0.5), {worst_deg:.2} deg (<= 5); -3 dB {:?} Hz vs {analytic:.2} Hz ({:.2}% <= 5%); {:.1} s (< 30 s)",
            result.points.len(),
            result.crossover_3db.map(|f| (f * 100.0).round() / 100.0),
            100.0 * bw_err,
            el.as_secs_f64()
        ),
    )
}

fn plant_bandwidth(_: &mut Context) -> Outcome {
    let config = ExperimentConfig::default();
    let plant = Plant::new(config.plant.clone()).map_err(|e| e.to_string())?;
    let t = Instant::now();
    let result = run_bode(&plant, &config.sweep, &config.limits).map_err(|e| e.to_string())?;
    let el = t.elapsed();
    let mag: Vec<f64> = result.points.iter().map(|p| p.magnitude_db).collect();
    let maxima: Vec<f64> = (1..mag.len() - 1)
        .filter(|&i| mag[i] > mag[i - 1] && mag[i] > mag[i + 1])
        .map(|i| result.points[i].frequency)
        .collect();
    // "Near": a local maximum within 15% of each modal frequency.
    let missing: Vec<f64> = [4.0, 6.0, 9.0, 20.0]
        .into_iter()
        .filter(|f| !maxima.iter().any(|m| (m / f - 1.0).abs() <= 0.15))
        .collect();
    let f3 = result.crossover_3db.unwrap_or(f64::NAN);
    let f180 = result.crossover_180.unwrap_or(f64::NAN);
    check(
        (f3 - 16.0).abs() <= 2.0 && (f180 - 14.0).abs() <= 2.0 && missing.is_empty() && within(el, 300.0),
        format!(
            "roll -3 dB {f3:.2} Hz (16 +- 2), -180 deg {f180:.2} Hz (14 +- 2); local maxima {:?} Hz, missing {missing:?}; {:.1} s (< 300 s)",
            maxima.iter().map(|f| (f * 100.0).round() / 100.0).collect::<Vec<_>>(),
            el.as_secs_f64()
        ),
    )
}

fn scan(ctx: &mut Context) -> Outcome {
    let config = ExperimentConfig::default();
    let plant = Plant::new(config.plant.clone()).map_err(|e| e.to_string())?;
    let (samples, el) = ctx.scan(&plant)?;
    let extents = workspace_extents(samples).map_err(|e| e.to_string())?;
    let corr = correlation_matrix(samples).map_err(|e| e.to_string())?;
    let table = config.limits.span();
    let ratios: Vec<f64> = (0..6).map(|i| extents.total[i] / table[i]).collect();
    let extents_ok = ratios.iter().all(|r| (r - 1.0).abs() <= 0.25);
    let pitch_x = corr.get(4, 0).unwrap_or(f64::NAN);
    let roll_y = corr.get(3, 1).unwrap_or(f64::NAN);
    check(
        samples.len() == 4096 && extents_ok && pitch_x > 0.5 && roll_y < -0.5 && within(*el, 120.0),
        format!(
            "{} samples (4096); extent ratios {:?} (1 +- 0.25); corr(pitch,x) {pitch_x:+.2} (> 0.5), corr(roll,y) {roll_y:+.2} (< -0.5); {:.1} s (< 120 s)",
            samples.len(),
            ratios.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            el.as_secs_f64()
        ),
    )
}

fn disturbance(_: &mut Context) -> Outcome {
    let config = ExperimentConfig::default();
    let t = Instant::now();
    let trials = run_disturb(&config.disturb_rig(), &config.disturb.impulses, config.disturb.timing, SEED)
        .map_err(|e| e.to_string())?;
    let el = t.elapsed();
    let rejections: Vec<f64> = trials.iter().map(|t| t.rejection).collect();
    let ok = trials.len() == 3
        && trials.iter().all(|t| t.aborted.is_none() && t.rejection >= 0.95 && t.peak_displacement > 0.0)
        && config.disturb.timing.horizon <= 20.0;
    check(
        ok && within(el, 30.0),
        format!(
            "{} directions, rejection within {} s {:?} (>= 0.95); {:.1} s (< 30 s)",
            trials.len(),
            config.disturb.timing.horizon,
            rejections.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            el.as_secs_f64()
        ),
    )
}

fn tracing(_: &mut Context) -> Outcome {
    let config = ExperimentConfig::default();
    let t = Instant::now();
    let trials = run_trace(&config.trace_rig(), "HELLO WORLD", 5, SEED).map_err(|e| e.to_string())?;
    let el = t.elapsed();
    let summary = summarize_traces(&trials);
    let aborted: usize = summary.iter().map(|s| s.aborted).sum();
    let worst = summary.iter().map(|s| s.mean_mse_cm2).fold(0.0, f64::max);
    let per_letter: Vec<String> = summary.iter().map(|s| format!("{}:{:.3}", s.letter, s.mean_mse_cm2)).collect();
    check(
        trials.len() == 50 && aborted == 0 && worst <= 0.5 && within(el, 600.0),
        format!(
            "{} trajectories, {aborted} aborted; mean MSE per letter cm^2 [{}] (<= 0.5); {:.0} s (< 600 s)",
            trials.len(),
            per_letter.join(" "),
            el.as_secs_f64()
        ),
    )
}

fn learned_ik(ctx: &mut Context) -> Outcome {
    let config = ExperimentConfig::default();
    let plant = Plant::new(config.plant.clone()).map_err(|e| e.to_string())?;
    let scan = ctx.scan(&plant)?.0.clone();
    let dataset = build_dataset(&plant, &scan, config.learn.random_poses, derive_seed(SEED, 3, 0)).map_err(|e| e.to_string())?;
    let mut params = config.learn.train.clone();
    params.seed = derive_seed(SEED, 4, 0);
    let t = Instant::now();
    let (model, report) = train(&dataset, config.plant.geometry.joint_limits, &params).map_err(|e| e.to_string())?;
    let train_time = t.elapsed();
    let eval = evaluate_held_out(&model, &plant, config.learn.eval_poses, derive_seed(SEED, 5, 0), &[]).map_err(|e| e.to_string())?;
    let translation = eval.learned_translation / eval.rigid_translation;
    let rotation = eval.learned_rotation / eval.rigid_rotation;

    let test: Vec<_> = dataset.split(Split::Test).take(32).collect();
    let x = model.input.matrix(&test.iter().map(|p| p.pose).collect::<Vec<_>>());
    let y = model.output.matrix(&test.iter().map(|p| p.joints).collect::<Vec<_>>());
    let mut net = model.network.clone();
    let (_, grads) = net.loss_and_gradients(x.view(), y.view());
    let n = net.parameter_count();
    let h = 1e-6;
    let (mut diff, mut norm) = (0.0, 0.0);
    for i in (0..n).step_by(n / 2000 + 1) {
        let v = net.parameter(i);
        net.set_parameter(i, v + h);
        let up = net.loss(x.view(), y.view());
        net.set_parameter(i, v - h);
        let down = net.loss(x.view(), y.view());
        net.set_parameter(i, v);
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads.parameter(i);
        diff += (analytic - numeric).powi(2);
        norm += analytic.powi(2) + numeric.powi(2);
    }
    let grad_err = diff.sqrt() / norm.sqrt().max(f64::MIN_POSITIVE);

    let pairs = dataset.len() + dataset.excluded_buckled;
    check(
        pairs == 10_000
            && params.hidden == [128, 128, 128]
            && eval.evaluated == 100
            && translation <= 0.60
            && rotation <= 0.70
            && grad_err < 1e-4
            && within(train_time, 180.0),
        format!(
            "{} pairs ({} buckled scan poses dropped), 3x128 MLP; {} held-out poses: translation {translation:.3} of rigid (<= 0.60), rotation {rotation:.3} (<= 0.70); gradient check {grad_err:.1e} (< 1e-4); training {:.0} s (< 180 s), best epoch {}",
            dataset.len(),
            dataset.excluded_buckled,
            eval.evaluated,
            train_time.as_secs_f64(),
            report.best_epoch
        ),
    )
}

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(dir).unwrap().flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "manifest.json") {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism(_: &mut Context) -> Outcome {
    let mut config = ExperimentConfig::default();
    config.trace.letters = "L".into();
    config.trace.trials = 1;
    config.sweep.n_freqs = 6;
    config.sweep.segment_duration = 4.0;
    config.scan.increment = 135.0;
    config.learn.random_poses = 200;
    config.learn.eval_poses = 10;
    config.learn.train.epochs = 10;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let t = Instant::now();
    let run = |tag: &str| -> Result<(), String> {
        let root = tmp.path().join(tag);
        let e = |e: anyhow::Error| e.to_string();
        runs::trace(&config, 7, &root.join("trace")).map_err(e)?;
        runs::disturb(&config, 7, &root.join("disturb")).map_err(e)?;
        runs::sweep(&config, 7, &root.join("sweep")).map_err(e)?;
        runs::scan(&config, 7, &root.join("scan")).map_err(e)?;
        runs::train_ik(&config, 7, &root.join("train")).map_err(e)?;
        let train = root.join("train");
        runs::eval_ik(&config, 7, &train.join(runs::MODEL_FILE), Some(&train.join(runs::DATASET_FILE)), &root.join("eval"))
            .map_err(e)?;
        Ok(())
    };
    run("a")?;
    run("b")?;
    let a = files(&tmp.path().join("a"));
    let b = files(&tmp.path().join("b"));
    let differing: Vec<&String> = a.keys().filter(|k| b.get(*k) != a.get(*k)).collect();
    check(
        a.len() > 6 && a.keys().eq(b.keys()) && differing.is_empty(),
        format!(
            "{} CSV/JSON/TOML outputs over 6 experiment kinds, {} differ; {:.1} s",
            a.len(),
            differing.len(),
            t.elapsed().as_secs_f64()
        ),
    )
}

type Criterion = (&'static str, fn(&mut Context) -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("ik_oracle_equivalence", ik_oracle),
        ("fk_ik_round_trip", fk_round_trip),
        ("bode_analyzer_oracle", bode_oracle),
        ("calibrated_plant_bandwidth", plant_bandwidth),
        ("workspace_scan", scan),
        ("disturbance_rejection", disturbance),
        ("letter_tracing", tracing),
        ("learned_ik", learned_ik),
        ("determinism", determinism),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut ctx = Context::default();
    let mut failed = 0;
    let mut ran = 0;
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        match run(&mut ctx) {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
