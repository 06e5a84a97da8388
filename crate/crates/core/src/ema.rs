//! EMA answer vocabulary shared by the service, the simulator and the models.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid {kind} value `{value}`")]
pub struct ParseEnumError {
    kind: &'static str,
    value: String,
}

/// Five-level self-reported stress.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StressLevel {
    NotAtAll,
    ALittleBit,
    Some,
    ALot,
    Extremely,
}

impl StressLevel {
    pub const ALL: [StressLevel; 5] = [
        StressLevel::NotAtAll,
        StressLevel::ALittleBit,
        StressLevel::Some,
        StressLevel::ALot,
        StressLevel::Extremely,
    ];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }

    /// Wording shown to the respondent.
    pub fn label(self) -> &'static str {
        match self {
            StressLevel::NotAtAll => "not at all",
            StressLevel::ALittleBit => "a little bit",
            StressLevel::Some => "some",
            StressLevel::ALot => "a lot",
            StressLevel::Extremely => "extremely",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StressLevel::NotAtAll => "not_at_all",
            StressLevel::ALittleBit => "a_little_bit",
            StressLevel::Some => "some",
            StressLevel::ALot => "a_lot",
            StressLevel::Extremely => "extremely",
        }
    }
}

impl fmt::Display for StressLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StressLevel {
    type Err = ParseEnumError;

    /// Accepts the snake-case name, the displayed wording or the numeric level.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if let Ok(i) = t.parse::<u8>() {
            return Self::from_index(i).ok_or_else(|| ParseEnumError {
                kind: "stress level",
                value: s.to_string(),
            });
        }
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == t || l.label() == t)
            .ok_or_else(|| ParseEnumError {
                kind: "stress level",
                value: s.to_string(),
            })
    }
}

/// Physical activity or state reported alongside the stress level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    Sitting,
    Standing,
    Walking,
    Running,
    Lying,
    Other,
}

impl Activity {
    pub const ALL: [Activity; 6] = [
        Activity::Sitting,
        Activity::Standing,
        Activity::Walking,
        Activity::Running,
        Activity::Lying,
        Activity::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Activity::Sitting => "sitting",
            Activity::Standing => "standing",
            Activity::Walking => "walking",
            Activity::Running => "running",
            Activity::Lying => "lying",
            Activity::Other => "other",
        }
    }
}

impl fmt::Display for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activity {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s.trim())
            .ok_or_else(|| ParseEnumError {
                kind: "activity",
                value: s.to_string(),
            })
    }
}
