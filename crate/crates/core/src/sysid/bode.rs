use std::collections::VecDeque;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pose_to_joints, Pose6, WorkspaceLimits};
use crate::plant::{Axis, Plant, PlantState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: Axis,
    pub n_freqs: usize,
    /// Hz
    pub f_min: f64,
    /// Hz
    pub f_max: f64,
    /// Peak amplitude as a fraction of the axis half-range.
    pub amplitude_fraction: f64,
    /// Z offset above the workspace centre as a fraction of the Z range.
    pub z_offset_fraction: f64,
    /// s
    pub segment_duration: f64,
    /// Rest at the centre pose between segments, s.
    pub gap: f64,
    /// Sensor latency removed before phase estimation, s.
    pub latency_compensation: f64,
    /// Segments shorter than this many wavelengths are lengthened.
    pub min_wavelengths: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            axis: Axis::Roll,
            n_freqs: 30,
            f_min: 0.1,
            f_max: 30.0,
            amplitude_fraction: 0.10,
            z_offset_fraction: 0.20,
            segment_duration: 60.0,
            gap: 3.0,
            latency_compensation: 0.008,
            min_wavelengths: 4.5,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_freqs < 2 || !(self.f_min > 0.0 && self.f_max > self.f_min) {
            return Err(Error::InvalidConfig("sweep needs n >= 2 and 0 < f_min < f_max".into()));
        }
        if self.segment_duration <= 0.0 || self.gap < 0.0 || self.amplitude_fraction <= 0.0 {
            return Err(Error::InvalidConfig("sweep durations and amplitude must be positive".into()));
        }
        if self.min_wavelengths < 3.0 {
            return Err(Error::InvalidConfig("segments need at least 3 wavelengths".into()));
        }
        Ok(())
    }

    /// Log-spaced frequencies from `f_min` to `f_max`.
    pub fn frequencies(&self) -> Vec<f64> {
        let ratio = self.f_max / self.f_min;
        (0..self.n_freqs)
            .map(|i| self.f_min * ratio.powf(i as f64 / (self.n_freqs - 1) as f64))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSegment {
    /// Hz
    pub frequency: f64,
    /// s from schedule start
    pub start: f64,
    /// s
    pub duration: f64,
}

/// Command schedule: a centre pose with one axis driven sinusoidally per
/// segment and held at the centre in the gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSchedule {
    pub axis: Axis,
    pub center: Pose6,
    /// rad
    pub amplitude: f64,
    pub segments: Vec<SweepSegment>,
    pub total_duration: f64,
}

impl SweepSchedule {
    /// Offset of the driven axis from the centre at time `t`.
    pub fn offset_at(&self, t: f64) -> f64 {
        for s in &self.segments {
            if t >= s.start && t < s.start + s.duration {
                return self.amplitude * (TAU * s.frequency * (t - s.start)).sin();
            }
        }
        0.0
    }

    pub fn command_at(&self, t: f64) -> Pose6 {
        let mut p = self.center.to_array();
        p[self.axis.pose_index()] += self.offset_at(t);
        Pose6::from_array(p)
    }
}

pub fn generate_sweep(spec: &SweepSpec, limits: &WorkspaceLimits) -> Result<SweepSchedule> {
    spec.validate()?;
    let mut c = limits.center();
    c[2] += spec.z_offset_fraction * limits.span()[2];
    let half = 0.5 * limits.span()[spec.axis.pose_index()];
    let amplitude = (spec.amplitude_fraction * half).to_radians();
    let mut segments = Vec::with_capacity(spec.n_freqs);
    let mut t = 0.0;
    for (i, f) in spec.frequencies().into_iter().enumerate() {
        if i > 0 {
            t += spec.gap;
        }
        let duration = spec.segment_duration.max(spec.min_wavelengths / f);
        segments.push(SweepSegment {
            frequency: f,
            start: t,
            duration,
        });
        t += duration;
    }
    Ok(SweepSchedule {
        axis: spec.axis,
        center: Pose6::from_external(c),
        amplitude,
        segments,
        total_duration: t,
    })
}

/// Mean half peak-to-peak over every one-wavelength window of `signal`.
pub fn amplitude_envelope(signal: &[f64], dt: f64, f: f64) -> Result<f64> {
    let w = (1.0 / (f * dt)).round().max(1.0) as usize;
    let have = signal.len() as f64 * dt * f;
    if signal.len() < 3 * w {
        return Err(Error::SignalTooShort { have, need: 3.0 });
    }
    let mut maxq: VecDeque<usize> = VecDeque::new();
    let mut minq: VecDeque<usize> = VecDeque::new();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, &v) in signal.iter().enumerate() {
        while maxq.back().is_some_and(|&j| signal[j] <= v) {
            maxq.pop_back();
        }
        maxq.push_back(i);
        while minq.back().is_some_and(|&j| signal[j] >= v) {
            minq.pop_back();
        }
        minq.push_back(i);
        if i + 1 >= w {
            let lo = i + 1 - w;
            while maxq.front().is_some_and(|&j| j < lo) {
                maxq.pop_front();
            }
            while minq.front().is_some_and(|&j| j < lo) {
                minq.pop_front();
            }
            sum += 0.5 * (signal[maxq[0]] - signal[minq[0]]);
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// `20 log10(A / A[0])`.
pub fn bode_magnitude(amplitudes: &[f64]) -> Result<Vec<f64>> {
    let a0 = *amplitudes.first().ok_or(Error::TooFewSamples { have: 0, need: 1 })?;
    if !(a0 > 0.0) {
        return Err(Error::ZeroReference(a0));
    }
    Ok(amplitudes.iter().map(|a| 20.0 * (a / a0).log10()).collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Normalized cross-correlation of `x` and `y` at lag `k` (y delayed).
fn xcorr(x: &[f64], y: &[f64], base: usize, len: usize, k: isize, stride: usize) -> f64 {
    let mut s = 0.0;
    let mut c = 0usize;
    let mut i = base;
    while i < base + len {
        s += x[i] * y[(i as isize + k) as usize];
        c += 1;
        i += stride;
    }
    s / c as f64
}

/// Phase of `output` relative to `input` at `f` Hz, degrees in `(-360, 0]`.
///
/// The output is first advanced by `latency`. The delay maximizing the
/// cross-correlation over one period is found on a coarse grid, refined at
/// full rate and then to sub-sample resolution with a cosine through the
/// peak. Returns `None` when the output is flat.
pub fn phase_delay(input: &[f64], output: &[f64], dt: f64, f: f64, latency: f64) -> Result<Option<f64>> {
    let shift = (latency / dt).round() as usize;
    if output.len() <= shift || input.len() <= shift {
        return Err(Error::TooFewSamples {
            have: output.len(),
            need: shift + 1,
        });
    }
    let n = input.len().min(output.len() - shift);
    let x0 = &input[..n];
    let y0 = &output[shift..shift + n];
    let (mx, my) = (mean(x0), mean(y0));
    let x: Vec<f64> = x0.iter().map(|v| v - mx).collect();
    let y: Vec<f64> = y0.iter().map(|v| v - my).collect();
    let var_x = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let var_y = y.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if var_y <= 1e-20 * var_x.max(my * my).max(1e-300) {
        return Ok(None);
    }
    let samples_per_period = 1.0 / (f * dt);
    let period = samples_per_period.round().max(2.0) as usize;
    // Every lag in [-1, period + 1] sees the same window of whole cycles.
    let base = 1;
    let cycles = ((n.saturating_sub(period + 3)) as f64 / samples_per_period).floor();
    if cycles < 1.0 {
        return Err(Error::SignalTooShort {
            have: n as f64 / samples_per_period,
            need: 1.0 + (period + 3) as f64 / samples_per_period,
        });
    }
    let len = ((cycles * samples_per_period).round() as usize).min(n - period - 3);
    let stride = (period / 200).max(1);
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    let mut k = 0;
    while k < period {
        let v = xcorr(&x, &y, base, len, k as isize, stride);
        if v > best_v {
            best_v = v;
            best = k;
        }
        k += stride;
    }
    if stride > 1 {
        let lo = best.saturating_sub(stride);
        let hi = (best + stride).min(period);
        best_v = f64::NEG_INFINITY;
        for k in lo..=hi {
            let v = xcorr(&x, &y, base, len, k as isize, 1);
            if v > best_v {
                best_v = v;
                best = k;
            }
        }
    }
    // The correlation of two tones is a cosine in the lag, so three samples
    // around the peak fix its phase exactly.
    let b = best as isize;
    let c_m = xcorr(&x, &y, base, len, b - 1, 1);
    let c_0 = xcorr(&x, &y, base, len, b, 1);
    let c_p = xcorr(&x, &y, base, len, b + 1, 1);
    let w = TAU * f * dt;
    let theta = ((c_m - c_p) / (2.0 * w.sin())).atan2(c_0);
    let mut phase = -(w * best as f64 - theta).to_degrees();
    phase = phase.rem_euclid(360.0);
    if phase > 1e-9 {
        phase -= 360.0;
    } else {
        phase = 0.0;
    }
    Ok(Some(phase))
}

/// Unwrap by choosing, for each phase, the branch nearest the previous one.
pub fn unwrap_phases(phases: &[Option<f64>]) -> Vec<Option<f64>> {
    let mut prev: Option<f64> = None;
    phases
        .iter()
        .map(|p| {
            p.map(|mut v| {
                if let Some(q) = prev {
                    while v > q + 180.0 {
                        v -= 360.0;
                    }
                    while v < q - 180.0 {
                        v += 360.0;
                    }
                } else if v < -180.0 {
                    v += 360.0;
                }
                prev = Some(v);
                v
            })
        })
        .collect()
}

/// First downward crossing of `level`, interpolated linearly in log frequency.
pub fn crossing_frequency(freqs: &[f64], values: &[Option<f64>], level: f64) -> Option<f64> {
    let mut prev: Option<(f64, f64)> = None;
    for (f, v) in freqs.iter().zip(values) {
        let Some(v) = *v else { continue };
        if let Some((pf, pv)) = prev {
            if pv >= level && v < level {
                let a = (level - pv) / (v - pv);
                return Some((pf.ln() + a * (f.ln() - pf.ln())).exp());
            }
        }
        prev = Some((*f, v));
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodePoint {
    /// Hz
    pub frequency: f64,
    /// Output amplitude in the driven axis units (rad).
    pub amplitude: f64,
    /// dB relative to the lowest frequency.
    pub magnitude_db: f64,
    /// degrees, unwrapped; `None` when undefined.
    pub phase_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFailure {
    pub frequency: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodeResult {
    pub axis: Axis,
    pub points: Vec<BodePoint>,
    /// Hz
    pub crossover_3db: Option<f64>,
    /// Hz
    pub crossover_180: Option<f64>,
    pub failures: Vec<SegmentFailure>,
}

/// A system that can be driven through a sweep: one scalar command in, one
/// recorded scalar out, at a fixed step.
pub trait SweepTarget {
    fn dt(&self) -> f64;
    /// Advance one step and return the recorded axis offset at its end.
    /// `hold` is the command held over the step, sampled mid-step, so a
    /// held input tracks the continuous sinusoid without a half-step lag;
    /// `end` is the command at the end of the step.
    fn step(&mut self, hold: f64, end: f64) -> f64;
}

/// Recorded series of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRecord {
    pub frequency: f64,
    pub input: Vec<f64>,
    pub output: Vec<f64>,
}

/// Drive `target` through `schedule`, returning the analysed part of each
/// segment. The first `max(1/f, duration / 10)` of each segment is
/// discarded as transient.
pub fn record_sweep<T: SweepTarget>(target: &mut T, schedule: &SweepSchedule, lead_in: f64) -> Vec<SegmentRecord> {
    let dt = target.dt();
    for _ in 0..(lead_in / dt).round() as usize {
        target.step(0.0, 0.0);
    }
    let mut out = Vec::with_capacity(schedule.segments.len());
    let mut t_prev_end = 0.0;
    for seg in &schedule.segments {
        let gap = seg.start - t_prev_end;
        for _ in 0..(gap / dt).round() as usize {
            target.step(0.0, 0.0);
        }
        let n = (seg.duration / dt).round() as usize;
        let skip = ((1.0 / seg.frequency).max(seg.duration / 10.0) / dt).round() as usize;
        let mut rec = SegmentRecord {
            frequency: seg.frequency,
            input: Vec::with_capacity(n - skip.min(n)),
            output: Vec::with_capacity(n - skip.min(n)),
        };
        for k in 0..n {
            let w = TAU * seg.frequency * dt;
            let hold = schedule.amplitude * (w * (k as f64 + 0.5)).sin();
            let end = schedule.amplitude * (w * (k + 1) as f64).sin();
            let y = target.step(hold, end);
            if k >= skip {
                rec.input.push(end);
                rec.output.push(y);
            }
        }
        t_prev_end = seg.start + seg.duration;
        out.push(rec);
    }
    out
}

/// Turn recorded segments into a Bode table with crossovers.
pub fn analyse_sweep(axis: Axis, records: &[SegmentRecord], dt: f64, latency: f64) -> BodeResult {
    let mut failures = Vec::new();
    let mut amps = Vec::with_capacity(records.len());
    let mut raw_phase = Vec::with_capacity(records.len());
    for r in records {
        let a = match amplitude_envelope(&r.output, dt, r.frequency) {
            Ok(a) => Some(a),
            Err(e) => {
                failures.push(SegmentFailure {
                    frequency: r.frequency,
                    reason: e.to_string(),
                });
                None
            }
        };
        amps.push(a);
        let p = match phase_delay(&r.input, &r.output, dt, r.frequency, latency) {
            Ok(p) => p,
            Err(e) => {
                failures.push(SegmentFailure {
                    frequency: r.frequency,
                    reason: e.to_string(),
                });
                None
            }
        };
        raw_phase.push(p);
    }
    let phases = unwrap_phases(&raw_phase);
    let reference = amps.first().copied().flatten().filter(|a| *a > 0.0);
    let mags: Vec<Option<f64>> = amps
        .iter()
        .map(|a| match (a, reference) {
            (Some(a), Some(r)) => Some(20.0 * (a / r).log10()),
            _ => None,
        })
        .collect();
    if reference.is_none() {
        failures.push(SegmentFailure {
            frequency: records.first().map(|r| r.frequency).unwrap_or(0.0),
            reason: Error::ZeroReference(amps.first().copied().flatten().unwrap_or(0.0)).to_string(),
        });
    }
    let freqs: Vec<f64> = records.iter().map(|r| r.frequency).collect();
    let points = records
        .iter()
        .enumerate()
        .map(|(i, r)| BodePoint {
            frequency: r.frequency,
            amplitude: amps[i].unwrap_or(f64::NAN),
            magnitude_db: mags[i].unwrap_or(f64::NAN),
            phase_deg: phases[i],
        })
        .collect();
    BodeResult {
        axis,
        points,
        crossover_3db: crossing_frequency(&freqs, &mags, -3.0),
        crossover_180: crossing_frequency(&freqs, &phases, -180.0),
        failures,
    }
}

/// Open-loop plant driven through rigid IK, recording the IMU-delayed pose.
pub struct PlantSweep<'a> {
    plant: &'a Plant,
    state: PlantState,
    center: Pose6,
    axis: Axis,
    latency: f64,
}

impl<'a> PlantSweep<'a> {
    pub fn new(plant: &'a Plant, schedule: &SweepSchedule) -> Self {
        Self {
            plant,
            state: plant.initial_state(0.0),
            center: schedule.center,
            axis: schedule.axis,
            latency: plant.config().sensor.latency,
        }
    }
}

impl SweepTarget for PlantSweep<'_> {
    fn dt(&self) -> f64 {
        self.plant.dt()
    }

    fn step(&mut self, hold: f64, _end: f64) -> f64 {
        let i = self.axis.pose_index();
        let mut p = self.center.to_array();
        p[i] += hold;
        let joints = pose_to_joints(&Pose6::from_array(p), &self.plant.config().geometry);
        self.plant.step(&mut self.state, &joints);
        let seen = self.state.pose_at(self.state.time() - self.latency).to_array();
        seen[i] - self.center.to_array()[i]
    }
}

/// Sweep the plant open loop along `spec.axis`.
pub fn run_bode(plant: &Plant, spec: &SweepSpec, limits: &WorkspaceLimits) -> Result<BodeResult> {
    let schedule = generate_sweep(spec, limits)?;
    let mut target = PlantSweep::new(plant, &schedule);
    let records = record_sweep(&mut target, &schedule, spec.gap.max(3.0));
    Ok(analyse_sweep(spec.axis, &records, plant.dt(), spec.latency_compensation))
}

/// Exactly discretized `wn^2 / (s^2 + 2 zeta wn s + wn^2)` with an optional
/// pure output delay.
#[derive(Debug, Clone)]
pub struct SecondOrderSystem {
    dt: f64,
    phi: nalgebra::Matrix2<f64>,
    gamma: nalgebra::Vector2<f64>,
    x: nalgebra::Vector2<f64>,
    delay: VecDeque<f64>,
}

impl SecondOrderSystem {
    pub fn new(natural_freq_hz: f64, damping: f64, delay: f64, dt: f64) -> Self {
        let w = TAU * natural_freq_hz;
        let a = nalgebra::Matrix2::new(0.0, 1.0, -w * w, -2.0 * damping * w);
        let b = nalgebra::Vector2::new(0.0, w * w);
        let phi = (a * dt).exp();
        let ainv = a.try_inverse().expect("positive natural frequency");
        let gamma = ainv * (phi - nalgebra::Matrix2::identity()) * b;
        let steps = (delay / dt).round() as usize;
        Self {
            dt,
            phi,
            gamma,
            x: nalgebra::Vector2::zeros(),
            delay: VecDeque::from(vec![0.0; steps]),
        }
    }
}

impl SweepTarget for SecondOrderSystem {
    fn dt(&self) -> f64 {
        self.dt
    }

    fn step(&mut self, hold: f64, _end: f64) -> f64 {
        self.x = self.phi * self.x + self.gamma * hold;
        self.delay.push_back(self.x[0]);
        self.delay.pop_front().unwrap_or(self.x[0])
    }
}

/// Output equals input.
#[derive(Debug, Clone, Copy)]
pub struct PassThrough {
    pub dt: f64,
}

impl SweepTarget for PassThrough {
    fn dt(&self) -> f64 {
        self.dt
    }

    fn step(&mut self, _hold: f64, end: f64) -> f64 {
        end
    }
}
