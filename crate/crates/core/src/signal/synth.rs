//! Synthetic PPG with known beat times.
//!
//! Each beat contributes an asymmetric systolic pulse (fast rise, slower
//! decay) followed by a smaller dicrotic bump. Baseline drift stays below
//! 0.2 Hz and white Gaussian noise is added last.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{peaks::REFRACTORY_MS, RawWindow, SignalError};

const MIN_BPM: f64 = 42.0;
const MAX_BPM: f64 = 210.0;
const MAX_INTERVAL_MS: f64 = 60_000.0 / MIN_BPM;

/// Piecewise-constant heart rate over window time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrProfile {
    /// `(start_s, bpm)` pairs, sorted by start; the first starts at 0.
    segments: Vec<(f64, f64)>,
}

impl HrProfile {
    pub fn constant(bpm: f64) -> Result<Self, SignalError> {
        Self::piecewise(vec![(0.0, bpm)])
    }

    pub fn piecewise(mut segments: Vec<(f64, f64)>) -> Result<Self, SignalError> {
        if segments.is_empty() {
            return Err(SignalError::BadParameter("empty heart-rate profile".into()));
        }
        segments.sort_by(|a, b| a.0.total_cmp(&b.0));
        segments[0].0 = 0.0;
        for &(_, bpm) in &segments {
            if !(MIN_BPM..=MAX_BPM).contains(&bpm) {
                return Err(SignalError::HrOutOfRange(bpm));
            }
        }
        Ok(Self { segments })
    }

    pub fn bpm_at(&self, t_s: f64) -> f64 {
        let i = self.segments.partition_point(|s| s.0 <= t_s);
        self.segments[i.saturating_sub(1)].1
    }
}

/// Respiratory sinus arrhythmia: sinusoidal modulation of beat intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Respiration {
    pub rate_hz: f64,
    pub amplitude_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpgSynthConfig {
    pub hr_profile: HrProfile,
    /// Standard deviation of the Gaussian beat-to-beat interval jitter.
    pub hrv_jitter_ms: f64,
    pub noise_rms: f64,
    pub drift_amp: f64,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub seed: u64,
    pub respiration: Option<Respiration>,
    pub subject_id: String,
    pub start_time_ms: i64,
}

impl PpgSynthConfig {
    pub fn new(hr_profile: HrProfile, seed: u64) -> Self {
        Self {
            hr_profile,
            hrv_jitter_ms: 0.0,
            noise_rms: 0.0,
            drift_amp: 0.0,
            duration_s: super::WINDOW_DURATION_S,
            sample_rate_hz: super::DEFAULT_SAMPLE_RATE_HZ,
            seed,
            respiration: None,
            subject_id: "synthetic".into(),
            start_time_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPpg {
    pub window: RawWindow,
    /// Systolic peak times in ms from window start.
    pub beat_times_ms: Vec<f64>,
}

pub fn synthesize_ppg(cfg: &PpgSynthConfig) -> Result<SyntheticPpg, SignalError> {
    let bad = |what: &str| Err(SignalError::BadParameter(what.into()));
    if !(cfg.sample_rate_hz > 0.0 && cfg.sample_rate_hz.is_finite()) {
        return bad("sample rate must be positive");
    }
    if !(cfg.duration_s > 0.0 && cfg.duration_s.is_finite()) {
        return bad("duration must be positive");
    }
    if cfg.hrv_jitter_ms < 0.0 || cfg.noise_rms < 0.0 || cfg.drift_amp < 0.0 {
        return bad("jitter, noise and drift must be non-negative");
    }
    for &(_, bpm) in &cfg.hr_profile.segments {
        if !(MIN_BPM..=MAX_BPM).contains(&bpm) {
            return Err(SignalError::HrOutOfRange(bpm));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let duration_ms = cfg.duration_s * 1000.0;
    let jitter = Normal::new(0.0, cfg.hrv_jitter_ms).expect("non-negative sigma");

    let mut beats = Vec::new();
    let first_period = 60_000.0 / cfg.hr_profile.bpm_at(0.0);
    let mut t = rng.random::<f64>() * first_period;
    while t < duration_ms {
        beats.push(t);
        let mut interval = 60_000.0 / cfg.hr_profile.bpm_at(t / 1000.0) + jitter.sample(&mut rng);
        if let Some(r) = cfg.respiration {
            interval += r.amplitude_ms * (2.0 * PI * r.rate_hz * t / 1000.0).sin();
        }
        t += interval.clamp(REFRACTORY_MS, MAX_INTERVAL_MS);
    }

    let n = RawWindow::expected_len(cfg.duration_s, cfg.sample_rate_hz);
    let dt_ms = 1000.0 / cfg.sample_rate_hz;
    let mut ppg = vec![0.0; n];
    for (k, &tb) in beats.iter().enumerate() {
        let period = beats
            .get(k + 1)
            .map(|&next| next - tb)
            .unwrap_or_else(|| 60_000.0 / cfg.hr_profile.bpm_at(tb / 1000.0));
        let lo = ((tb - 0.6 * period) / dt_ms).floor().max(0.0) as usize;
        let hi = (((tb + 1.2 * period) / dt_ms).ceil() as usize).min(n);
        for (i, v) in ppg.iter_mut().enumerate().take(hi).skip(lo) {
            *v += pulse(i as f64 * dt_ms - tb, period);
        }
    }

    let phase1 = rng.random::<f64>() * 2.0 * PI;
    let phase2 = rng.random::<f64>() * 2.0 * PI;
    let noise = Normal::new(0.0, cfg.noise_rms).expect("non-negative sigma");
    for (i, v) in ppg.iter_mut().enumerate() {
        let ts = i as f64 / cfg.sample_rate_hz;
        *v += cfg.drift_amp
            * (0.6 * (2.0 * PI * 0.05 * ts + phase1).sin()
                + 0.4 * (2.0 * PI * 0.13 * ts + phase2).sin());
        *v += noise.sample(&mut rng);
    }

    Ok(SyntheticPpg {
        window: RawWindow {
            subject_id: cfg.subject_id.clone(),
            start_time_ms: cfg.start_time_ms,
            sample_rate_hz: cfg.sample_rate_hz,
            ppg,
            motion: None,
        },
        beat_times_ms: beats,
    })
}

/// One beat's waveform at offset `dt` (ms) from its systolic peak.
fn pulse(dt: f64, period: f64) -> f64 {
    let rise = 0.07 * period;
    let fall = 0.14 * period;
    let s = if dt < 0.0 { dt / rise } else { dt / fall };
    let systolic = (-0.5 * s * s).exp();
    let d = (dt - 0.38 * period) / (0.07 * period);
    systolic + 0.2 * (-0.5 * d * d).exp()
}
