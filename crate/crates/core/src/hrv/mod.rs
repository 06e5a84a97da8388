//! HR/HRV features of one window.
//!
//! Beat indices become an NN-interval series, artifacts are gated by the
//! physiologic 42–210 bpm band, and thirteen time-domain and Poincaré
//! features plus a tachogram-based breathing rate are computed from it.

mod breathing;

pub use breathing::{breathing_rate, BreathingEstimate, BR_BAND_HZ};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{PeakList, REFRACTORY_MS};

pub const MIN_NN_MS: f64 = REFRACTORY_MS;
pub const MAX_NN_MS: f64 = 60_000.0 / 42.0;
/// Minimum NN intervals for a feature vector.
pub const MIN_INTERVALS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HrvError {
    #[error("insufficient beats: {0}")]
    InsufficientBeats(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

/// Successive inter-beat intervals. `contiguous[i]` is true when interval
/// `i` directly follows interval `i - 1` (no artifact gap between them).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnSeries {
    pub intervals_ms: Vec<f64>,
    /// Time of the beat that closes each interval.
    pub beat_times_ms: Vec<f64>,
    pub contiguous: Vec<bool>,
}

impl NnSeries {
    /// Gap-free series whose first beat sits at t = 0.
    pub fn from_intervals(intervals_ms: Vec<f64>) -> Self {
        let mut t = 0.0;
        let beat_times_ms = intervals_ms
            .iter()
            .map(|nn| {
                t += nn;
                t
            })
            .collect();
        let contiguous = (0..intervals_ms.len()).map(|i| i > 0).collect();
        Self {
            intervals_ms,
            beat_times_ms,
            contiguous,
        }
    }

    pub fn len(&self) -> usize {
        self.intervals_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals_ms.is_empty()
    }

    /// `NN[i+1] - NN[i]` for contiguous neighbours only.
    pub fn successive_diffs(&self) -> Vec<f64> {
        (1..self.len())
            .filter(|&i| self.contiguous[i])
            .map(|i| self.intervals_ms[i] - self.intervals_ms[i - 1])
            .collect()
    }

    pub fn shifted(&self, offset_ms: f64) -> Self {
        Self {
            beat_times_ms: self.beat_times_ms.iter().map(|t| t + offset_ms).collect(),
            ..self.clone()
        }
    }
}

fn in_band(nn: f64) -> bool {
    const TOL: f64 = 1e-9;
    nn >= MIN_NN_MS * (1.0 - TOL) && nn <= MAX_NN_MS * (1.0 + TOL)
}

/// Intervals outside the physiologic band are dropped. A too-short interval
/// also drops the interval after it, since that one starts at the spurious
/// peak. No successive difference is formed across a dropped interval.
pub fn nn_from_peaks(peaks: &PeakList) -> Result<NnSeries, HrvError> {
    if peaks.len() < 3 {
        return Err(HrvError::InsufficientBeats(format!(
            "{} peaks, need at least 3",
            peaks.len()
        )));
    }
    let times = peaks.times_ms();
    let mut series = NnSeries {
        intervals_ms: Vec::new(),
        beat_times_ms: Vec::new(),
        contiguous: Vec::new(),
    };
    let mut prev_kept = false;
    let mut after_spurious = false;
    for w in times.windows(2) {
        let nn = w[1] - w[0];
        let keep = in_band(nn) && !after_spurious;
        after_spurious = nn < MIN_NN_MS && !in_band(nn);
        if keep {
            series.intervals_ms.push(nn);
            series.beat_times_ms.push(w[1]);
            series.contiguous.push(prev_kept);
        }
        prev_kept = keep;
    }
    if series.len() < 2 {
        return Err(HrvError::InsufficientBeats(format!(
            "{} usable intervals, need at least 2",
            series.len()
        )));
    }
    Ok(series)
}

/// Quality notes attached to a feature vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureFlags {
    /// `2 SDNN^2 - var(d)/2` was negative and SD2 was clamped to 0.
    pub sd2_clamped: bool,
    /// No usable respiratory peak inside the search band.
    pub br_degenerate: bool,
    /// Series too short for a breathing-rate estimate; `br_per_min` is 0.
    pub br_unavailable: bool,
}

/// Always present in the exported flags: the breathing rate comes from the
/// NN tachogram spectrum.
pub const BR_METHOD_FLAG: &str = "br_tachogram";

impl fmt::Display for FeatureFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(BR_METHOD_FLAG)?;
        for (set, name) in [
            (self.sd2_clamped, "sd2_clamped"),
            (self.br_degenerate, "br_degenerate"),
            (self.br_unavailable, "br_unavailable"),
        ] {
            if set {
                write!(f, "|{name}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for FeatureFlags {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut flags = FeatureFlags::default();
        for part in s.split('|').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                BR_METHOD_FLAG => {}
                "sd2_clamped" => flags.sd2_clamped = true,
                "br_degenerate" => flags.br_degenerate = true,
                "br_unavailable" => flags.br_unavailable = true,
                other => return Err(format!("unknown flag `{other}`")),
            }
        }
        Ok(flags)
    }
}

/// The thirteen features of one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub bpm: f64,
    pub ibi_ms: f64,
    pub sdnn_ms: f64,
    pub sdsd_ms: f64,
    pub rmssd_ms: f64,
    pub pnn20: f64,
    pub pnn50: f64,
    pub mad_ms: f64,
    pub sd1_ms: f64,
    pub sd2_ms: f64,
    pub s_area_ms2: f64,
    pub sd_ratio: f64,
    pub br_per_min: f64,
}

pub const FEATURE_COUNT: usize = 13;

/// Column names, in [`FeatureVector::to_array`] order.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "bpm", "ibi", "sdnn", "sdsd", "rmssd", "pnn20", "pnn50", "mad", "sd1", "sd2", "s", "sd_ratio",
    "br",
];

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.bpm,
            self.ibi_ms,
            self.sdnn_ms,
            self.sdsd_ms,
            self.rmssd_ms,
            self.pnn20,
            self.pnn50,
            self.mad_ms,
            self.sd1_ms,
            self.sd2_ms,
            self.s_area_ms2,
            self.sd_ratio,
            self.br_per_min,
        ]
    }

    pub fn from_array(a: [f64; FEATURE_COUNT]) -> Self {
        Self {
            bpm: a[0],
            ibi_ms: a[1],
            sdnn_ms: a[2],
            sdsd_ms: a[3],
            rmssd_ms: a[4],
            pnn20: a[5],
            pnn50: a[6],
            mad_ms: a[7],
            sd1_ms: a[8],
            sd2_ms: a[9],
            s_area_ms2: a[10],
            sd_ratio: a[11],
            br_per_min: a[12],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn population_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

pub fn compute_features(nn: &NnSeries) -> Result<(FeatureVector, FeatureFlags), HrvError> {
    let x = &nn.intervals_ms;
    if x.len() < MIN_INTERVALS {
        return Err(HrvError::InsufficientData(format!(
            "{} intervals, need at least {MIN_INTERVALS}",
            x.len()
        )));
    }
    let d = nn.successive_diffs();
    if d.len() < MIN_INTERVALS - 1 {
        return Err(HrvError::InsufficientData(format!(
            "{} successive differences, need at least {}",
            d.len(),
            MIN_INTERVALS - 1
        )));
    }
    let mut flags = FeatureFlags::default();

    let ibi = mean(x);
    let sdnn_sq = population_var(x);
    let diff_var = population_var(&d);
    let sdsd = diff_var.sqrt();
    let rmssd = (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt();
    let nd = d.len() as f64;
    let pnn20 = d.iter().filter(|v| v.abs() > 20.0).count() as f64 / nd;
    let pnn50 = d.iter().filter(|v| v.abs() > 50.0).count() as f64 / nd;
    let med = median(x);
    let abs_dev: Vec<f64> = x.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&abs_dev);

    let sd1 = (diff_var / 2.0).sqrt();
    let sd2_sq = 2.0 * sdnn_sq - diff_var / 2.0;
    let sd2 = if sd2_sq < 0.0 {
        flags.sd2_clamped = true;
        0.0
    } else {
        sd2_sq.sqrt()
    };
    let sd_ratio = if sd2 > 0.0 { sd1 / sd2 } else { 0.0 };

    let br = match breathing_rate(nn) {
        Ok(est) => {
            flags.br_degenerate = est.degenerate;
            est.br_per_min
        }
        Err(_) => {
            flags.br_unavailable = true;
            0.0
        }
    };

    Ok((
        FeatureVector {
            bpm: 60_000.0 / ibi,
            ibi_ms: ibi,
            sdnn_ms: sdnn_sq.sqrt(),
            sdsd_ms: sdsd,
            rmssd_ms: rmssd,
            pnn20,
            pnn50,
            mad_ms: mad,
            sd1_ms: sd1,
            sd2_ms: sd2,
            s_area_ms2: std::f64::consts::PI * sd1 * sd2,
            sd_ratio,
            br_per_min: br,
        },
        flags,
    ))
}
