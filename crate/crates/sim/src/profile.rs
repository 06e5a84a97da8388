//! Subject profiles.
//!
//! A profile is a TOML document; times are minutes from simulation start.
//!
//! ```toml
//! subject_id = "S01"
//! baseline_hr = 68.0
//! baseline_rmssd = 42.0
//! adherence_prob = 0.8
//! label_noise_prob = 0.05
//! schedule_period_min = 10080.0     # optional: repeat the schedule weekly
//!
//! [response_delay]
//! kind = "exponential"               # or "fixed" (minutes) / "uniform" (min, max)
//! mean = 4.0
//!
//! [[stress_schedule]]
//! start_min = 0.0
//! level = "not_at_all"
//!
//! [[stress_schedule]]
//! start_min = 540.0
//! level = "a_lot"
//!
//! [[dropouts]]
//! start_min = 600.0
//! end_min = 720.0
//! kind = "buffered"                  # or "off": watch not worn, nothing recorded
//! ```
//!
//! `daily_off = { start_hour = 23.0, end_hour = 7.0 }`, `high_volume`,
//! `stress_effect`, `noise_rms`, `drift_amp`, `respiration_rate_hz` and
//! `respiration_amp_ms` are optional.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use stressmon_core::ema::StressLevel;
use thiserror::Error;

pub const MIN_HR: f64 = 42.0;
pub const MAX_HR: f64 = 210.0;

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("profile `{subject}`: {msg}")]
    Invalid { subject: String, msg: String },
    #[error("profile parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StressSegment {
    pub start_min: f64,
    pub level: StressLevel,
}

/// Heart-rate offset and RMSSD factor per stress level, indexed 0–4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StressEffect {
    pub hr_delta: [f64; 5],
    pub rmssd_mult: [f64; 5],
}

impl Default for StressEffect {
    fn default() -> Self {
        Self {
            hr_delta: [0.0, 10.0, 15.0, 20.0, 25.0],
            rmssd_mult: [1.0, 0.85, 0.75, 0.65, 0.55],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResponseDelay {
    Fixed { minutes: f64 },
    Uniform { min: f64, max: f64 },
    Exponential { mean: f64 },
}

impl ResponseDelay {
    pub fn sample_min<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ResponseDelay::Fixed { minutes } => minutes,
            ResponseDelay::Uniform { min, max } if max > min => rng.random_range(min..max),
            ResponseDelay::Uniform { min, .. } => min,
            ResponseDelay::Exponential { mean } if mean > 0.0 => {
                Exp::new(1.0 / mean).expect("positive rate").sample(rng)
            }
            ResponseDelay::Exponential { .. } => 0.0,
        }
    }

    fn valid(&self) -> bool {
        match *self {
            ResponseDelay::Fixed { minutes } => minutes >= 0.0 && minutes.is_finite(),
            ResponseDelay::Uniform { min, max } => min >= 0.0 && max >= min && max.is_finite(),
            ResponseDelay::Exponential { mean } => mean >= 0.0 && mean.is_finite(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutKind {
    /// Windows are recorded on the watch and delivered when the segment ends.
    Buffered,
    /// Watch off: nothing is recorded.
    Off,
}

/// Hours of day, `start_hour` to `end_hour`, wrapping past midnight when
/// `end_hour < start_hour`. Day boundaries are counted from simulation start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyOff {
    pub start_hour: f64,
    pub end_hour: f64,
}

impl DailyOff {
    pub fn contains(&self, t_min: f64) -> bool {
        let h = (t_min / 60.0).rem_euclid(24.0);
        if self.start_hour <= self.end_hour {
            self.start_hour <= h && h < self.end_hour
        } else {
            h >= self.start_hour || h < self.end_hour
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    pub start_min: f64,
    pub end_min: f64,
    pub kind: DropoutKind,
}

fn default_noise() -> f64 {
    0.05
}
fn default_drift() -> f64 {
    0.2
}
fn default_resp_rate() -> f64 {
    0.25
}
fn default_resp_amp() -> f64 {
    20.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectProfile {
    pub subject_id: String,
    pub baseline_hr: f64,
    pub baseline_rmssd: f64,
    pub stress_schedule: Vec<StressSegment>,
    #[serde(default)]
    pub schedule_period_min: Option<f64>,
    #[serde(default)]
    pub stress_effect: StressEffect,
    pub adherence_prob: f64,
    pub response_delay: ResponseDelay,
    #[serde(default)]
    pub label_noise_prob: f64,
    #[serde(default)]
    pub dropouts: Vec<Dropout>,
    /// Watch worn around the clock; mirrors the largest subjects.
    #[serde(default)]
    pub high_volume: bool,
    /// Watch taken off every day during these hours of the day.
    #[serde(default)]
    pub daily_off: Option<DailyOff>,
    #[serde(default = "default_noise")]
    pub noise_rms: f64,
    #[serde(default = "default_drift")]
    pub drift_amp: f64,
    #[serde(default = "default_resp_rate")]
    pub respiration_rate_hz: f64,
    #[serde(default = "default_resp_amp")]
    pub respiration_amp_ms: f64,
}

impl SubjectProfile {
    /// Constant "not at all" schedule, full adherence, no delay, no noise.
    pub fn simple(subject_id: impl Into<String>, baseline_hr: f64, baseline_rmssd: f64) -> Self {
        Self {
            subject_id: subject_id.into(),
            baseline_hr,
            baseline_rmssd,
            stress_schedule: vec![StressSegment {
                start_min: 0.0,
                level: StressLevel::NotAtAll,
            }],
            schedule_period_min: None,
            stress_effect: StressEffect::default(),
            adherence_prob: 1.0,
            response_delay: ResponseDelay::Fixed { minutes: 0.0 },
            label_noise_prob: 0.0,
            dropouts: Vec::new(),
            high_volume: false,
            daily_off: None,
            noise_rms: default_noise(),
            drift_amp: default_drift(),
            respiration_rate_hz: default_resp_rate(),
            respiration_amp_ms: default_resp_amp(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ProfileError> {
        let p: Self = toml::from_str(text).map_err(|e| ProfileError::Parse(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("profile serializes")
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let err = |msg: String| {
            Err(ProfileError::Invalid {
                subject: self.subject_id.clone(),
                msg,
            })
        };
        if self.subject_id.is_empty() {
            return err("empty subject id".into());
        }
        for (lvl, (&d, &m)) in self
            .stress_effect
            .hr_delta
            .iter()
            .zip(&self.stress_effect.rmssd_mult)
            .enumerate()
        {
            let hr = self.baseline_hr + d;
            if !(MIN_HR..=MAX_HR).contains(&hr) {
                return err(format!(
                    "heart rate {hr} at level {lvl} outside [{MIN_HR}, {MAX_HR}]"
                ));
            }
            if !(m > 0.0 && m.is_finite()) {
                return err(format!(
                    "RMSSD multiplier {m} at level {lvl} must be positive"
                ));
            }
        }
        if !(self.baseline_rmssd >= 0.0 && self.baseline_rmssd.is_finite()) {
            return err("baseline_rmssd must be non-negative".into());
        }
        for (name, p) in [
            ("adherence_prob", self.adherence_prob),
            ("label_noise_prob", self.label_noise_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return err(format!("{name} {p} outside [0, 1]"));
            }
        }
        if !self.response_delay.valid() {
            return err("invalid response_delay".into());
        }
        if self.stress_schedule.is_empty() {
            return err("empty stress schedule".into());
        }
        if self
            .stress_schedule
            .windows(2)
            .any(|w| w[1].start_min <= w[0].start_min)
        {
            return err("stress schedule must be sorted by start_min".into());
        }
        if let Some(p) = self.schedule_period_min {
            if !(p > 0.0) {
                return err("schedule_period_min must be positive".into());
            }
        }
        if let Some(o) = self.daily_off {
            if !((0.0..24.0).contains(&o.start_hour) && (0.0..=24.0).contains(&o.end_hour)) {
                return err("daily_off hours must lie in [0, 24]".into());
            }
        }
        if self.dropouts.iter().any(|d| !(d.end_min > d.start_min)) {
            return err("dropout ends before it starts".into());
        }
        if self.noise_rms < 0.0 || self.drift_amp < 0.0 || self.respiration_amp_ms < 0.0 {
            return err("noise, drift and respiration amplitude must be non-negative".into());
        }
        Ok(())
    }

    /// Ground-truth level at `t_min` minutes after simulation start.
    pub fn level_at(&self, t_min: f64) -> StressLevel {
        let t = match self.schedule_period_min {
            Some(p) => t_min.rem_euclid(p),
            None => t_min,
        };
        self.stress_schedule
            .iter()
            .take_while(|s| s.start_min <= t)
            .last()
            .map_or(StressLevel::NotAtAll, |s| s.level)
    }

    /// Dropout covering `t_min`; explicit segments take precedence over
    /// the daily off-wrist hours.
    pub fn dropout_at(&self, t_min: f64) -> Option<Dropout> {
        if let Some(d) = self
            .dropouts
            .iter()
            .find(|d| d.start_min <= t_min && t_min < d.end_min)
        {
            return Some(*d);
        }
        self.daily_off
            .filter(|o| o.contains(t_min))
            .map(|_| Dropout {
                start_min: t_min,
                end_min: t_min,
                kind: DropoutKind::Off,
            })
    }

    pub fn heart_rate(&self, level: StressLevel) -> f64 {
        self.baseline_hr + self.stress_effect.hr_delta[level.index() as usize]
    }

    pub fn rmssd(&self, level: StressLevel) -> f64 {
        self.baseline_rmssd * self.stress_effect.rmssd_mult[level.index() as usize]
    }

    /// Interval jitter giving the target RMSSD: successive differences of
    /// i.i.d. intervals have standard deviation `sigma * sqrt(2)`.
    pub fn jitter_ms(&self, level: StressLevel) -> f64 {
        self.rmssd(level) / std::f64::consts::SQRT_2
    }
}
