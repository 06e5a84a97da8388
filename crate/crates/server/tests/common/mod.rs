#![allow(dead_code)]

use std::path::Path;

use stressmon_core::signal::{synthesize_ppg, HrProfile, PpgSynthConfig, RawWindow};
use stressmon_server::ServiceConfig;

pub const T0: i64 = 1_700_000_000_000;
pub const STEP: i64 = 15 * 60 * 1000;
pub const MIN: i64 = 60 * 1000;

/// A clean 2-minute window whose heart rate and variability depend on `i`.
pub fn window(subject: &str, i: i64) -> RawWindow {
    let bpm = 60.0 + ((i * 37) % 50) as f64;
    let mut cfg = PpgSynthConfig::new(HrProfile::constant(bpm).unwrap(), 1000 + i as u64);
    cfg.hrv_jitter_ms = 10.0 + ((i * 13) % 40) as f64;
    cfg.noise_rms = 0.02;
    cfg.subject_id = subject.to_string();
    cfg.start_time_ms = T0 + i * STEP;
    synthesize_ppg(&cfg).unwrap().window
}

pub fn flat_window(subject: &str, i: i64) -> RawWindow {
    RawWindow {
        subject_id: subject.to_string(),
        start_time_ms: T0 + i * STEP,
        sample_rate_hz: 20.0,
        ppg: vec![0.5; 2400],
        motion: None,
    }
}

pub fn config(dir: &Path, initial: usize) -> ServiceConfig {
    let mut cfg = ServiceConfig {
        data_dir: dir.to_path_buf(),
        snapshot_every: 7,
        ..Default::default()
    };
    cfg.query.initial_count = initial;
    cfg.query.rng_seed = 42;
    cfg
}

/// Every query-phase window triggers until its region saturates.
pub fn always_query(dir: &Path, initial: usize) -> ServiceConfig {
    let mut cfg = config(dir, initial);
    cfg.query.p_min = 1.0;
    cfg
}
