//! Raw window to feature vector: band-pass, moving average, peaks, NN
//! series, features.

use thiserror::Error;

use crate::hrv::{self, FeatureFlags, FeatureVector, HrvError, NnSeries};
use crate::signal::{self, FilterSpec, PeakDetectorConfig, PeakList, RawWindow, SignalError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Hrv(#[from] HrvError),
}

impl PipelineError {
    /// Too few usable beats; the window is kept but never used.
    pub fn is_insufficient_beats(&self) -> bool {
        matches!(self, PipelineError::Hrv(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Band edges and order; the sampling rate comes from each window.
    pub filter: FilterSpec,
    pub moving_average_len: usize,
    pub peaks: PeakDetectorConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            filter: FilterSpec::default(),
            moving_average_len: 5,
            peaks: PeakDetectorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub cleaned: Vec<f64>,
    pub peaks: PeakList,
    pub nn: NnSeries,
    pub features: FeatureVector,
    pub flags: FeatureFlags,
}

/// Band-pass then smooth; output has the input's length.
pub fn clean_signal(window: &RawWindow, cfg: &PipelineConfig) -> Result<Vec<f64>, SignalError> {
    let spec = FilterSpec {
        sample_rate_hz: window.sample_rate_hz,
        ..cfg.filter
    };
    let coeffs = signal::design_bandpass(&spec)?;
    let filtered = signal::apply_filter(&coeffs, &window.ppg)?;
    signal::moving_average(&filtered, cfg.moving_average_len)
}

pub fn process_window(
    window: &RawWindow,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    let cleaned = clean_signal(window, cfg)?;
    let peaks = signal::detect_peaks_with(&cleaned, window.sample_rate_hz, &cfg.peaks);
    let nn = hrv::nn_from_peaks(&peaks)?;
    let (features, flags) = hrv::compute_features(&nn)?;
    Ok(PipelineOutput {
        cleaned,
        peaks,
        nn,
        features,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{synthesize_ppg, HrProfile, PpgSynthConfig};

    #[test]
    fn stages_preserve_length() {
        let mut cfg = PpgSynthConfig::new(HrProfile::constant(80.0).unwrap(), 5);
        cfg.noise_rms = 0.05;
        cfg.drift_amp = 0.5;
        let w = synthesize_ppg(&cfg).unwrap().window;
        let out = process_window(&w, &PipelineConfig::default()).unwrap();
        assert_eq!(out.cleaned.len(), w.ppg.len());
        assert!(
            (out.features.bpm - 80.0).abs() < 2.0,
            "{}",
            out.features.bpm
        );
    }

    #[test]
    fn flat_window_has_insufficient_beats() {
        let w = RawWindow {
            subject_id: "s".into(),
            start_time_ms: 0,
            sample_rate_hz: 20.0,
            ppg: vec![1.0; 2400],
            motion: None,
        };
        let err = process_window(&w, &PipelineConfig::default()).unwrap_err();
        assert!(err.is_insufficient_beats());
    }
}
