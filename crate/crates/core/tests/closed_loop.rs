use stewart_core::config::ExperimentConfig;
use stewart_core::experiments::{run_disturb_trial, trace_path, DisturbTiming, Impulse};
use stewart_core::rig::Rig;

#[test]
fn rolling_ball_offset_settles_without_oscillation() {
    let config = ExperimentConfig::default().disturb_rig();
    let mut rig = Rig::new(config, [0.05, 0.0], 3).unwrap();
    let start = rig.time();
    let mut tail_peak: f64 = 0.0;
    while rig.time() - start < 20.0 {
        rig.step([0.0, 0.0]);
        if rig.time() - start > 15.0 {
            tail_peak = tail_peak.max(rig.ball.x.hypot(rig.ball.y));
        }
    }
    assert!(tail_peak < 0.005, "ball still {tail_peak} m from the setpoint");
}

#[test]
fn puck_holds_a_single_waypoint() {
    let cfg = ExperimentConfig::default();
    let mut rig = cfg.trace_rig();
    rig.cascade.waypoint_dwell = 4.0;
    let t = trace_path(&rig, 'I', vec![[0.01, -0.01]], 0, 5).unwrap();
    assert!(t.aborted.is_none());
    let e = t.error.unwrap();
    assert_eq!(e.per_waypoint.len(), 1);
    assert!(e.mse_cm2 < 0.5, "{}", e.mse_cm2);
}

#[test]
fn zero_impulse_is_fully_rejected() {
    let cfg = ExperimentConfig::default().disturb_rig();
    let timing = DisturbTiming { stabilize: 1.0, horizon: 1.0 };
    let imp = Impulse { direction_deg: 0.0, magnitude: 0.0 };
    let t = run_disturb_trial(&cfg, imp, timing, 1).unwrap();
    assert_eq!(t.rejection, 1.0);
}

#[test]
fn disturbance_trials_repeat_exactly() {
    let cfg = ExperimentConfig::default().disturb_rig();
    let timing = DisturbTiming { stabilize: 2.0, horizon: 2.0 };
    let imp = Impulse { direction_deg: 120.0, magnitude: 0.2 };
    let a = run_disturb_trial(&cfg, imp, timing, 9).unwrap();
    let b = run_disturb_trial(&cfg, imp, timing, 9).unwrap();
    let c = run_disturb_trial(&cfg, imp, timing, 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.samples, c.samples);
    assert!(a.peak_displacement > 0.0);
}
