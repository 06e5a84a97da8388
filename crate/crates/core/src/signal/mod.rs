//! PPG signal path: band-pass design and zero-phase filtering, smoothing,
//! beat detection, and a synthetic PPG generator.

mod filter;
mod peaks;
mod smoothing;
mod synth;
pub mod window_csv;

pub use filter::{apply_filter, design_bandpass, FilterCoefficients, FilterSpec, Section};
pub use peaks::{detect_peaks, detect_peaks_with, PeakDetectorConfig, PeakList, REFRACTORY_MS};
pub use smoothing::moving_average;
pub use synth::{synthesize_ppg, HrProfile, PpgSynthConfig, Respiration, SyntheticPpg};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default capture length of one window, in seconds.
pub const WINDOW_DURATION_S: f64 = 120.0;
/// Default watch sampling rate.
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("filter design: {0}")]
    Design(String),
    #[error("unstable filter section {0}")]
    Unstable(usize),
    #[error("signal too short: {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("moving-average window must be odd and positive, got {0}")]
    BadWindow(usize),
    #[error("heart-rate profile value {0} bpm outside [42, 210]")]
    HrOutOfRange(f64),
    #[error("invalid synthesis parameter: {0}")]
    BadParameter(String),
}

/// One fixed-length PPG capture from one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawWindow {
    pub subject_id: String,
    pub start_time_ms: i64,
    pub sample_rate_hz: f64,
    pub ppg: Vec<f64>,
    /// Accelerometer triples, carried along but never processed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<Vec<[f64; 3]>>,
}

impl RawWindow {
    pub fn duration_s(&self) -> f64 {
        self.ppg.len() as f64 / self.sample_rate_hz
    }

    /// Number of samples a window of `duration_s` must hold at `rate`.
    pub fn expected_len(duration_s: f64, rate: f64) -> usize {
        (duration_s * rate).round() as usize
    }
}
