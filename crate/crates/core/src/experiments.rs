//! Letter tracing and disturbance rejection trials on the closed loop.

use serde::{Deserialize, Serialize};

use crate::ball::BallMode;
use crate::control::{letter_path, waypoint_sequencer};
use crate::error::{Error, Result};
use crate::rig::{Rig, RigConfig, RigSample};
use crate::sysid::{trace_mse, TraceError, TrajectoryPoint};

/// Trial seed derived from the master seed, a stream tag and an index.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED69));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seconds the object may stay against the fence before the trial aborts.
pub const PINNED_LIMIT: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceTrial {
    pub letter: char,
    pub trial: usize,
    pub seed: u64,
    pub waypoints: Vec<[f64; 2]>,
    pub samples: Vec<RigSample>,
    pub error: Option<TraceError>,
    /// Diagnostic when the trial was aborted.
    pub aborted: Option<String>,
}

/// Trace one letter with the object starting at rest on its first waypoint.
pub fn run_trace_trial(config: &RigConfig, letter: char, trial: usize, seed: u64) -> Result<TraceTrial> {
    let waypoints = letter_path(letter)?;
    trace_path(config, letter, waypoints, trial, seed)
}

/// Trace an arbitrary waypoint path.
pub fn trace_path(
    config: &RigConfig,
    letter: char,
    waypoints: Vec<[f64; 2]>,
    trial: usize,
    seed: u64,
) -> Result<TraceTrial> {
    let first = *waypoints.first().ok_or(Error::EmptyPath)?;
    let mut rig = Rig::new(config.clone(), first, seed)?;
    let dwell = config.cascade.waypoint_dwell;
    let start = rig.time();
    let duration = dwell * waypoints.len() as f64;
    let steps = (duration / rig.plant().dt()).round() as u64;
    let mut samples = Vec::with_capacity((duration * config.cascade.control_rate) as usize + 2);
    let mut pinned_since: Option<f64> = None;
    let mut aborted = None;
    for _ in 0..steps {
        let t = rig.time() - start;
        let wp = waypoint_sequencer(&waypoints, t, dwell)?;
        if let Some(s) = rig.step(wp) {
            samples.push(RigSample { t: s.t - start, ..s });
        }
        if rig.ball.at_fence {
            let since = *pinned_since.get_or_insert(t);
            if t - since > PINNED_LIMIT {
                aborted = Some(format!(
                    "object pinned to the fence for more than {PINNED_LIMIT} s at t = {t:.2} s"
                ));
                break;
            }
        } else {
            pinned_since = None;
        }
    }
    let error = if aborted.is_none() {
        let traj: Vec<TrajectoryPoint> = samples.iter().map(|s| TrajectoryPoint { t: s.t, x: s.x, y: s.y }).collect();
        Some(trace_mse(&traj, &waypoints, dwell, 0.0)?)
    } else {
        None
    };
    Ok(TraceTrial {
        letter,
        trial,
        seed,
        waypoints,
        samples,
        error,
        aborted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LetterSummary {
    pub letter: char,
    pub trials: usize,
    pub aborted: usize,
    /// Mean over completed trials, cm^2.
    pub mean_mse_cm2: f64,
    pub max_mse_cm2: f64,
}

/// Per-letter statistics in first-appearance order.
pub fn summarize_traces(trials: &[TraceTrial]) -> Vec<LetterSummary> {
    let mut letters: Vec<char> = Vec::new();
    for t in trials {
        if !letters.contains(&t.letter) {
            letters.push(t.letter);
        }
    }
    letters
        .into_iter()
        .map(|letter| {
            let group: Vec<&TraceTrial> = trials.iter().filter(|t| t.letter == letter).collect();
            let mses: Vec<f64> = group.iter().filter_map(|t| t.error.as_ref().map(|e| e.mse_cm2)).collect();
            LetterSummary {
                letter,
                trials: group.len(),
                aborted: group.iter().filter(|t| t.aborted.is_some()).count(),
                mean_mse_cm2: if mses.is_empty() {
                    f64::NAN
                } else {
                    mses.iter().sum::<f64>() / mses.len() as f64
                },
                max_mse_cm2: mses.iter().copied().fold(f64::NAN, f64::max),
            }
        })
        .collect()
}

/// Letters of `text` with whitespace removed, upper-cased.
pub fn letters_of(text: &str) -> Vec<char> {
    text.chars().filter(|c| !c.is_whitespace()).map(|c| c.to_ascii_uppercase()).collect()
}

/// Trace every letter of `text` `trials` times. Trial seeds come from
/// [`derive_seed`] with the position of the letter and the trial number.
pub fn run_trace(config: &RigConfig, text: &str, trials: usize, seed: u64) -> Result<Vec<TraceTrial>> {
    let mut out = Vec::new();
    for (i, letter) in letters_of(text).into_iter().enumerate() {
        for k in 0..trials {
            let s = derive_seed(seed, 1, (i * trials + k) as u64);
            out.push(run_trace_trial(config, letter, k, s)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Impulse {
    /// Direction in the plate frame, degrees from +x.
    pub direction_deg: f64,
    /// Velocity change, m/s.
    pub magnitude: f64,
}

impl Impulse {
    pub fn velocity(&self) -> [f64; 2] {
        let a = self.direction_deg.to_radians();
        [self.magnitude * a.cos(), self.magnitude * a.sin()]
    }
}

/// Three directions 120 degrees apart at 0.2 m/s.
pub fn default_impulses() -> Vec<Impulse> {
    [0.0, 120.0, 240.0]
        .into_iter()
        .map(|d| Impulse {
            direction_deg: d,
            magnitude: 0.2,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbTiming {
    /// Balance time before the impulse, s.
    pub stabilize: f64,
    /// Time after the impulse at which rejection is measured, s.
    pub horizon: f64,
}

impl Default for DisturbTiming {
    fn default() -> Self {
        Self {
            stabilize: 10.0,
            horizon: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbTrial {
    pub impulse: Impulse,
    pub seed: u64,
    /// Time of the impulse, s from the start of the trial.
    pub impulse_time: f64,
    pub samples: Vec<RigSample>,
    /// Largest distance from the setpoint after the impulse, m.
    pub peak_displacement: f64,
    /// Distance from the setpoint at impulse time + horizon, m.
    pub final_displacement: f64,
    /// `1 - final / peak`; 1 for a zero impulse.
    pub rejection: f64,
    pub aborted: Option<String>,
}

/// Balance the object at the plate centre, kick it and watch it return.
pub fn run_disturb_trial(config: &RigConfig, impulse: Impulse, timing: DisturbTiming, seed: u64) -> Result<DisturbTrial> {
    let setpoint = [0.0, 0.0];
    let mut rig = Rig::new(config.clone(), setpoint, seed)?;
    let dt = rig.plant().dt();
    let start = rig.time();
    let mut samples = Vec::new();
    let pre = (timing.stabilize / dt).round() as u64;
    let post = (timing.horizon / dt).round() as u64;
    let mut pinned_since: Option<f64> = None;
    let mut aborted = None;
    let dist = |x: f64, y: f64| (x - setpoint[0]).hypot(y - setpoint[1]);
    let mut peak: f64 = 0.0;
    let mut impulse_time = f64::NAN;
    for k in 0..pre + post {
        if k == pre {
            impulse_time = rig.time() - start;
            rig.kick(impulse.velocity());
        }
        if let Some(s) = rig.step(setpoint) {
            samples.push(RigSample { t: s.t - start, ..s });
        }
        if k >= pre {
            peak = peak.max(dist(rig.ball.x, rig.ball.y));
        }
        let t = rig.time() - start;
        if rig.ball.at_fence {
            let since = *pinned_since.get_or_insert(t);
            if t - since > PINNED_LIMIT {
                aborted = Some(format!("object pinned to the fence for more than {PINNED_LIMIT} s at t = {t:.2} s"));
                break;
            }
        } else {
            pinned_since = None;
        }
    }
    let final_displacement = dist(rig.ball.x, rig.ball.y);
    let rejection = if impulse.magnitude == 0.0 || peak == 0.0 {
        1.0
    } else {
        1.0 - final_displacement / peak
    };
    Ok(DisturbTrial {
        impulse,
        seed,
        impulse_time,
        samples,
        peak_displacement: peak,
        final_displacement,
        rejection,
        aborted,
    })
}

pub fn run_disturb(config: &RigConfig, impulses: &[Impulse], timing: DisturbTiming, seed: u64) -> Result<Vec<DisturbTrial>> {
    impulses
        .iter()
        .enumerate()
        .map(|(i, imp)| run_disturb_trial(config, *imp, timing, derive_seed(seed, 2, i as u64)))
        .collect()
}

/// Whether `config` drives the expected object for the experiment.
pub fn check_mode(config: &RigConfig, mode: BallMode) -> Result<()> {
    if config.ball.mode == mode {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "experiment needs {mode:?}, configuration has {:?}",
            config.ball.mode
        )))
    }
}
