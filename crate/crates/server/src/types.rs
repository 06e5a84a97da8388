use serde::{Deserialize, Serialize};
use stressmon_core::ema::{Activity, StressLevel};
use stressmon_core::hrv::{FeatureFlags, FeatureVector};
use stressmon_core::query::QueryDecision;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingPrompt {
    pub prompt_id: String,
    pub subject_id: String,
    pub sample_id: String,
    pub window_start_ms: i64,
    pub created_at_ms: i64,
    pub expires_at_ms: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptState {
    Open,
    Answered,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelResponse {
    pub prompt_id: String,
    pub stress_level: StressLevel,
    pub activity: Activity,
    /// Defaults to the receive time.
    #[serde(default)]
    pub responded_at_ms: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnginePhase {
    Initial,
    Query,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOutcome {
    pub accepted: bool,
    pub sample_id: String,
    /// Same (subject, start time) was already stored; nothing changed.
    pub duplicate: bool,
    /// Start time precedes the newest stored window.
    pub late: bool,
    pub usable: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unusable_reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureVector>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flags: Option<FeatureFlags>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query_decision: Option<QueryDecision>,
    pub phase: EnginePhase,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt: Option<PendingPrompt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseAck {
    pub prompt_id: String,
    pub sample_id: String,
    pub stress_level: StressLevel,
    pub activity: Activity,
    pub responded_at_ms: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportKind {
    Labeled,
    Unlabeled,
}

impl std::str::FromStr for ExportKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "labeled" => Ok(ExportKind::Labeled),
            "unlabeled" => Ok(ExportKind::Unlabeled),
            other => Err(format!("unknown export kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubjectStats {
    pub subject_id: String,
    pub windows: usize,
    pub usable_windows: usize,
    pub unusable_windows: usize,
    pub late_windows: usize,
    pub phase: Option<EnginePhase>,
    pub decisions: usize,
    pub prompts: usize,
    pub answered: usize,
    pub pending: usize,
    pub expired: usize,
    pub regions: usize,
    pub saturated_regions: usize,
    /// Answered prompts per UTC day (`days since epoch`, count), ascending.
    pub labels_per_day: Vec<(i64, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub subjects: Vec<SubjectStats>,
}

/// One line of the per-subject decision audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub sample_id: String,
    pub neighbor_count: usize,
    pub probability: f64,
    pub trigger: bool,
    pub region_id: Vec<i64>,
}
