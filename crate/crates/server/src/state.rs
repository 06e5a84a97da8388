//! In-memory state of one subject and the log events that drive it.
//!
//! Every mutation goes through [`SubjectState::apply_window`] or
//! [`SubjectState::apply_response`], both for live requests and for replay,
//! so a replayed log rebuilds exactly the state that produced it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use stressmon_core::ema::{Activity, StressLevel};
use stressmon_core::hrv::{FeatureFlags, FeatureVector};
use stressmon_core::query::{Admission, Phase, QueryDecision, QueryEngine, SampleRecord};

use crate::error::ServiceError;
use crate::types::{
    DecisionRecord, EnginePhase, IngestOutcome, PendingPrompt, PromptState, SubjectStats,
};

pub const STATE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum WindowResult {
    Usable {
        features: FeatureVector,
        flags: FeatureFlags,
    },
    Unusable {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEvent {
    pub start_time_ms: i64,
    pub sample_rate_hz: f64,
    pub received_at_ms: i64,
    pub result: WindowResult,
    /// Outcome of the engine at ingest time; checked again on replay.
    #[serde(default)]
    pub decision: Option<QueryDecision>,
    #[serde(default)]
    pub prompt: Option<PendingPrompt>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseEvent {
    pub prompt_id: String,
    pub stress_level: StressLevel,
    pub activity: Activity,
    pub responded_at_ms: i64,
    pub received_at_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Window(WindowEvent),
    Response(ResponseEvent),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEntry {
    pub sample_id: String,
    pub start_time_ms: i64,
    pub sample_rate_hz: f64,
    pub received_at_ms: i64,
    pub late: bool,
    pub result: WindowResult,
    pub decision: Option<QueryDecision>,
    pub phase: EnginePhase,
    pub prompt_id: Option<String>,
}

impl WindowEntry {
    pub fn usable(&self) -> Option<(&FeatureVector, &FeatureFlags)> {
        match &self.result {
            WindowResult::Usable { features, flags } => Some((features, flags)),
            WindowResult::Unusable { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub stress_level: StressLevel,
    pub activity: Activity,
    pub responded_at_ms: i64,
    pub received_at_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEntry {
    pub prompt: PendingPrompt,
    pub answer: Option<Answer>,
}

impl PromptEntry {
    pub fn state(&self, now_ms: i64) -> PromptState {
        if self.answer.is_some() {
            PromptState::Answered
        } else if now_ms > self.prompt.expires_at_ms {
            PromptState::Expired
        } else {
            PromptState::Open
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectState {
    pub subject_id: String,
    pub engine: QueryEngine,
    pub windows: BTreeMap<i64, WindowEntry>,
    pub prompts: BTreeMap<String, PromptEntry>,
    /// Engine decisions in the order they were made.
    pub decisions: Vec<DecisionRecord>,
    /// Sequence number of the last applied event.
    pub seq: u64,
}

#[derive(Serialize, Deserialize)]
struct StateSnapshot {
    version: u32,
    seq: u64,
    engine: String,
    windows: Vec<WindowEntry>,
    prompts: Vec<PromptEntry>,
    decisions: Vec<DecisionRecord>,
}

pub fn sample_id(subject: &str, start_time_ms: i64) -> String {
    format!("{subject}-{start_time_ms}")
}

pub fn prompt_id(subject: &str, start_time_ms: i64) -> String {
    format!("p-{subject}-{start_time_ms}")
}

fn phase_of(engine: &QueryEngine) -> EnginePhase {
    match engine.phase() {
        Phase::Initial => EnginePhase::Initial,
        Phase::Query => EnginePhase::Query,
    }
}

impl SubjectState {
    pub fn new(engine: QueryEngine) -> Self {
        Self {
            subject_id: engine.subject_id().to_string(),
            engine,
            windows: BTreeMap::new(),
            prompts: BTreeMap::new(),
            decisions: Vec::new(),
            seq: 0,
        }
    }

    pub fn phase(&self) -> EnginePhase {
        phase_of(&self.engine)
    }

    pub fn outcome(&self, entry: &WindowEntry, duplicate: bool) -> IngestOutcome {
        let (features, flags, reason) = match &entry.result {
            WindowResult::Usable { features, flags } => (Some(*features), Some(*flags), None),
            WindowResult::Unusable { reason } => (None, None, Some(reason.clone())),
        };
        IngestOutcome {
            accepted: true,
            sample_id: entry.sample_id.clone(),
            duplicate,
            late: entry.late,
            usable: features.is_some(),
            unusable_reason: reason,
            features,
            flags,
            query_decision: entry.decision,
            phase: entry.phase,
            prompt: entry
                .prompt_id
                .as_ref()
                .and_then(|p| self.prompts.get(p))
                .map(|p| p.prompt.clone()),
        }
    }

    /// Admits a new window. `expiry_ms` sets the deadline of a prompt
    /// created live; a replayed event carries its own prompt instead.
    pub fn apply_window(
        &mut self,
        ev: &mut WindowEvent,
        expiry_ms: Option<i64>,
    ) -> Result<IngestOutcome, ServiceError> {
        let start = ev.start_time_ms;
        if self.windows.contains_key(&start) {
            return Err(ServiceError::Storage(format!(
                "window {start} of `{}` applied twice",
                self.subject_id
            )));
        }
        let sid = sample_id(&self.subject_id, start);
        let late = self
            .windows
            .last_key_value()
            .is_some_and(|(&newest, _)| start < newest);
        let mut decision = None;
        let mut prompt = None;
        if let WindowResult::Usable { features, .. } = &ev.result {
            let rec = SampleRecord::new(sid.clone(), self.subject_id.clone(), start, *features);
            if let Admission::Decided(d) = self.engine.submit(rec)? {
                decision = Some(d);
                let region_id = self
                    .engine
                    .record(&sid)
                    .and_then(|r| r.region_id.clone())
                    .unwrap_or_default();
                self.decisions.push(DecisionRecord {
                    sample_id: sid.clone(),
                    neighbor_count: d.neighbor_count,
                    probability: d.probability,
                    trigger: d.trigger,
                    region_id,
                });
                if d.trigger {
                    prompt = Some(match (expiry_ms, &ev.prompt) {
                        (Some(expiry), _) => PendingPrompt {
                            prompt_id: prompt_id(&self.subject_id, start),
                            subject_id: self.subject_id.clone(),
                            sample_id: sid.clone(),
                            window_start_ms: start,
                            created_at_ms: ev.received_at_ms,
                            expires_at_ms: ev.received_at_ms + expiry,
                        },
                        (None, Some(p)) => p.clone(),
                        (None, None) => {
                            return Err(ServiceError::Storage(format!(
                                "replayed trigger for {sid} has no logged prompt"
                            )))
                        }
                    });
                }
            }
        }
        if expiry_ms.is_none() && (decision != ev.decision || prompt != ev.prompt) {
            return Err(ServiceError::Storage(format!(
                "replay of {sid} diverged from the log: logged {:?}, replayed {:?}",
                ev.decision, decision
            )));
        }
        ev.decision = decision;
        ev.prompt = prompt.clone();
        let entry = WindowEntry {
            sample_id: sid,
            start_time_ms: start,
            sample_rate_hz: ev.sample_rate_hz,
            received_at_ms: ev.received_at_ms,
            late,
            result: ev.result.clone(),
            decision,
            phase: self.phase(),
            prompt_id: prompt.as_ref().map(|p| p.prompt_id.clone()),
        };
        if let Some(p) = prompt {
            self.prompts.insert(
                p.prompt_id.clone(),
                PromptEntry {
                    prompt: p,
                    answer: None,
                },
            );
        }
        let outcome = self.outcome(&entry, false);
        self.windows.insert(start, entry);
        Ok(outcome)
    }

    /// Checks that `prompt_id` can take an answer now.
    pub fn check_response(
        &self,
        prompt_id: &str,
        responded_at_ms: i64,
        now_ms: i64,
    ) -> Result<&PromptEntry, ServiceError> {
        let p = self
            .prompts
            .get(prompt_id)
            .ok_or_else(|| ServiceError::UnknownPrompt(prompt_id.to_string()))?;
        if p.answer.is_some() {
            return Err(ServiceError::AlreadyAnswered(prompt_id.to_string()));
        }
        if now_ms > p.prompt.expires_at_ms || responded_at_ms > p.prompt.expires_at_ms {
            return Err(ServiceError::PromptExpired(prompt_id.to_string()));
        }
        Ok(p)
    }

    pub fn apply_response(&mut self, ev: &ResponseEvent) -> Result<(), ServiceError> {
        let entry = self
            .prompts
            .get_mut(&ev.prompt_id)
            .ok_or_else(|| ServiceError::UnknownPrompt(ev.prompt_id.clone()))?;
        if entry.answer.is_some() {
            return Err(ServiceError::AlreadyAnswered(ev.prompt_id.clone()));
        }
        self.engine
            .record_label(&entry.prompt.sample_id, ev.stress_level, ev.activity)?;
        entry.answer = Some(Answer {
            stress_level: ev.stress_level,
            activity: ev.activity,
            responded_at_ms: ev.responded_at_ms,
            received_at_ms: ev.received_at_ms,
        });
        Ok(())
    }

    pub fn apply(&mut self, rec: &LogRecord) -> Result<(), ServiceError> {
        match &rec.event {
            Event::Window(ev) => {
                let mut ev = ev.clone();
                self.apply_window(&mut ev, None)?;
            }
            Event::Response(ev) => self.apply_response(ev)?,
        }
        self.seq = rec.seq;
        Ok(())
    }

    /// Unanswered, unexpired prompts, oldest first.
    pub fn pending(&self, now_ms: i64) -> Vec<PendingPrompt> {
        let mut out: Vec<PendingPrompt> = self
            .prompts
            .values()
            .filter(|p| p.state(now_ms) == PromptState::Open)
            .map(|p| p.prompt.clone())
            .collect();
        out.sort_by(|a, b| {
            (a.created_at_ms, a.window_start_ms).cmp(&(b.created_at_ms, b.window_start_ms))
        });
        out
    }

    pub fn stats(&self, now_ms: i64) -> SubjectStats {
        let mut s = SubjectStats {
            subject_id: self.subject_id.clone(),
            windows: self.windows.len(),
            phase: Some(self.phase()),
            decisions: self.decisions.len(),
            prompts: self.prompts.len(),
            regions: self.engine.regions().len(),
            saturated_regions: self
                .engine
                .regions()
                .values()
                .filter(|r| r.saturated)
                .count(),
            ..Default::default()
        };
        for w in self.windows.values() {
            if w.usable().is_some() {
                s.usable_windows += 1;
            } else {
                s.unusable_windows += 1;
            }
            s.late_windows += usize::from(w.late);
        }
        let mut per_day: BTreeMap<i64, usize> = BTreeMap::new();
        for p in self.prompts.values() {
            match p.state(now_ms) {
                PromptState::Open => s.pending += 1,
                PromptState::Expired => s.expired += 1,
                PromptState::Answered => {
                    s.answered += 1;
                    let t = p.answer.as_ref().map_or(0, |a| a.responded_at_ms);
                    *per_day.entry(t.div_euclid(86_400_000)).or_default() += 1;
                }
            }
        }
        s.labels_per_day = per_day.into_iter().collect();
        s
    }

    pub fn to_snapshot(&self) -> String {
        serde_json::to_string(&StateSnapshot {
            version: STATE_VERSION,
            seq: self.seq,
            engine: self.engine.snapshot(),
            windows: self.windows.values().cloned().collect(),
            prompts: self.prompts.values().cloned().collect(),
            decisions: self.decisions.clone(),
        })
        .expect("subject state serializes")
    }

    pub fn from_snapshot(data: &str) -> Result<Self, ServiceError> {
        let snap: StateSnapshot = serde_json::from_str(data)
            .map_err(|e| ServiceError::Storage(format!("snapshot: {e}")))?;
        if snap.version != STATE_VERSION {
            return Err(ServiceError::Storage(format!(
                "snapshot version {} unsupported",
                snap.version
            )));
        }
        let engine = QueryEngine::restore(&snap.engine)?;
        Ok(Self {
            subject_id: engine.subject_id().to_string(),
            engine,
            windows: snap
                .windows
                .into_iter()
                .map(|w| (w.start_time_ms, w))
                .collect(),
            prompts: snap
                .prompts
                .into_iter()
                .map(|p| (p.prompt.prompt_id.clone(), p))
                .collect(),
            decisions: snap.decisions,
            seq: snap.seq,
        })
    }
}
