use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use log::{debug, warn};
use stressmon_core::dataset::{self, FeatureRow, LabeledRow};
use stressmon_core::pipeline::{process_window, PipelineConfig, PipelineError};
use stressmon_core::signal::RawWindow;

use crate::config::ServiceConfig;
use crate::error::ServiceError;
use crate::state::{Event, LogRecord, ResponseEvent, SubjectState, WindowEvent, WindowResult};
use crate::store::{self, SnapshotJob, SnapshotWriter, SubjectStore};
use crate::types::{
    DecisionRecord, ExportKind, IngestOutcome, LabelResponse, PendingPrompt, ResponseAck,
    StatsReport, SubjectStats,
};

/// Window length in seconds accepted by [`Service::ingest`].
pub const WINDOW_SECONDS: f64 = 120.0;

pub fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as i64)
}

struct Subject {
    state: SubjectState,
    store: SubjectStore,
}

type Slot = Arc<Mutex<Subject>>;

/// The ingestion service. Requests for different subjects run in
/// parallel; each subject's writes are serialized by its own lock.
pub struct Service {
    cfg: ServiceConfig,
    pipeline: PipelineConfig,
    subjects: RwLock<BTreeMap<String, Slot>>,
    prompt_owner: RwLock<HashMap<String, String>>,
    snapshots: SnapshotWriter,
}

fn lock(slot: &Slot) -> MutexGuard<'_, Subject> {
    slot.lock().unwrap_or_else(|p| p.into_inner())
}

impl Service {
    /// Opens `cfg.data_dir`, recovering every subject found there.
    pub fn open(cfg: ServiceConfig) -> Result<Self, ServiceError> {
        cfg.validate()?;
        let root = store::subjects_dir(&cfg.data_dir);
        fs::create_dir_all(&root)?;
        let mut subjects = BTreeMap::new();
        let mut owners = HashMap::new();
        let mut dirs: Vec<_> = fs::read_dir(&root)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .collect();
        dirs.sort_by_key(|e| e.file_name());
        for e in dirs {
            let name = e.file_name().to_string_lossy().into_owned();
            if !store::valid_subject_id(&name) {
                warn!("skipping unexpected directory {}", e.path().display());
                continue;
            }
            let (store, state) = SubjectStore::open(&e.path(), cfg.fsync)?;
            for id in state.prompts.keys() {
                owners.insert(id.clone(), name.clone());
            }
            subjects.insert(name, Arc::new(Mutex::new(Subject { state, store })));
        }
        Ok(Self {
            cfg,
            pipeline: PipelineConfig::default(),
            subjects: RwLock::new(subjects),
            prompt_owner: RwLock::new(owners),
            snapshots: SnapshotWriter::spawn(),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    pub fn subject_ids(&self) -> Vec<String> {
        self.subjects
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .keys()
            .cloned()
            .collect()
    }

    fn slot(&self, subject: &str) -> Option<Slot> {
        self.subjects
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(subject)
            .cloned()
    }

    fn slot_or_create(&self, subject: &str) -> Result<Slot, ServiceError> {
        if let Some(s) = self.slot(subject) {
            return Ok(s);
        }
        let mut map = self.subjects.write().unwrap_or_else(|p| p.into_inner());
        if let Some(s) = map.get(subject) {
            return Ok(s.clone());
        }
        let (store, state) =
            SubjectStore::create(&self.cfg.data_dir, subject, &self.cfg.query, self.cfg.fsync)?;
        let slot = Arc::new(Mutex::new(Subject { state, store }));
        map.insert(subject.to_string(), slot.clone());
        Ok(slot)
    }

    pub fn validate_window(&self, w: &RawWindow) -> Result<(), ServiceError> {
        let bad = |m: String| Err(ServiceError::BadWindow(m));
        if !store::valid_subject_id(&w.subject_id) {
            return bad(format!("invalid subject id `{}`", w.subject_id));
        }
        let nyquist_min = 2.0 * self.pipeline.filter.high_cut_hz;
        if !w.sample_rate_hz.is_finite() || w.sample_rate_hz <= nyquist_min {
            return bad(format!(
                "sample rate {} Hz must exceed {nyquist_min} Hz",
                w.sample_rate_hz
            ));
        }
        let expected = RawWindow::expected_len(WINDOW_SECONDS, w.sample_rate_hz);
        if w.ppg.len() != expected {
            return bad(format!(
                "window has {} samples, expected {expected} ({WINDOW_SECONDS} s at {} Hz)",
                w.ppg.len(),
                w.sample_rate_hz
            ));
        }
        if let Some(i) = w.ppg.iter().position(|v| !v.is_finite()) {
            return bad(format!("ppg sample {i} is not finite"));
        }
        if let Some(m) = &w.motion {
            if m.len() != w.ppg.len() {
                return bad(format!(
                    "motion has {} samples, ppg has {}",
                    m.len(),
                    w.ppg.len()
                ));
            }
        }
        Ok(())
    }

    /// Validates, processes and stores one window. Late windows take the
    /// same path; a repeated (subject, start time) returns the stored result.
    pub fn ingest(&self, window: &RawWindow, now_ms: i64) -> Result<IngestOutcome, ServiceError> {
        self.validate_window(window)?;
        let start = window.start_time_ms;
        if let Some(slot) = self.slot(&window.subject_id) {
            let g = lock(&slot);
            if let Some(e) = g.state.windows.get(&start) {
                return Ok(g.state.outcome(e, true));
            }
        }

        let result = match process_window(window, &self.pipeline) {
            Ok(out) if out.features.is_finite() => WindowResult::Usable {
                features: out.features,
                flags: out.flags,
            },
            Ok(_) => WindowResult::Unusable {
                reason: "non-finite features".into(),
            },
            Err(e @ PipelineError::Hrv(_)) => WindowResult::Unusable {
                reason: format!("insufficient beats: {e}"),
            },
            Err(e) => return Err(ServiceError::BadWindow(e.to_string())),
        };

        let slot = self.slot_or_create(&window.subject_id)?;
        let mut g = lock(&slot);
        let subject = &mut *g;
        if let Some(e) = subject.state.windows.get(&start) {
            return Ok(subject.state.outcome(e, true));
        }
        if self.cfg.store_raw_windows {
            subject.store.store_raw(window)?;
        }
        let mut ev = WindowEvent {
            start_time_ms: start,
            sample_rate_hz: window.sample_rate_hz,
            received_at_ms: now_ms,
            result,
            decision: None,
            prompt: None,
        };
        let outcome = subject
            .state
            .apply_window(&mut ev, Some(self.cfg.prompt_expiry_ms))?;
        subject.state.seq += 1;
        let rec = LogRecord {
            seq: subject.state.seq,
            event: Event::Window(ev),
        };
        if let Err(e) = subject.store.append(&rec) {
            self.reload(subject);
            return Err(e);
        }
        if let Some(p) = &outcome.prompt {
            self.prompt_owner
                .write()
                .unwrap_or_else(|p| p.into_inner())
                .insert(p.prompt_id.clone(), window.subject_id.clone());
        }
        if let Some(job) = self.snapshot_job(subject) {
            self.snapshots.submit(job);
        }
        debug!(
            "ingested {} late={} usable={}",
            outcome.sample_id, outcome.late, outcome.usable
        );
        Ok(outcome)
    }

    /// Same as [`ingest`](Self::ingest); late windows need no special path.
    pub fn accept_late(
        &self,
        window: &RawWindow,
        now_ms: i64,
    ) -> Result<IngestOutcome, ServiceError> {
        self.ingest(window, now_ms)
    }

    /// Rebuilds a subject from disk after a failed append, discarding the
    /// unacknowledged change.
    fn reload(&self, subject: &mut Subject) {
        let dir = subject.store.dir().to_path_buf();
        match SubjectStore::open(&dir, self.cfg.fsync) {
            Ok((store, state)) => *subject = Subject { state, store },
            Err(e) => warn!("reloading {} failed: {e}", dir.display()),
        }
    }

    fn snapshot_job(&self, subject: &mut Subject) -> Option<SnapshotJob> {
        subject
            .store
            .snapshot_due(self.cfg.snapshot_every)
            .then(|| subject.store.snapshot_job(&subject.state))
    }

    pub fn pending(&self, subject: &str, now_ms: i64) -> Result<Vec<PendingPrompt>, ServiceError> {
        let slot = self
            .slot(subject)
            .ok_or_else(|| ServiceError::UnknownSubject(subject.to_string()))?;
        let g = lock(&slot);
        Ok(g.state.pending(now_ms))
    }

    pub fn submit_response(
        &self,
        resp: &LabelResponse,
        now_ms: i64,
    ) -> Result<ResponseAck, ServiceError> {
        let owner = self
            .prompt_owner
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(&resp.prompt_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownPrompt(resp.prompt_id.clone()))?;
        let slot = self
            .slot(&owner)
            .ok_or_else(|| ServiceError::UnknownPrompt(resp.prompt_id.clone()))?;
        let mut g = lock(&slot);
        let subject = &mut *g;
        let responded_at_ms = resp.responded_at_ms.unwrap_or(now_ms);
        let sample_id = subject
            .state
            .check_response(&resp.prompt_id, responded_at_ms, now_ms)?
            .prompt
            .sample_id
            .clone();
        let ev = ResponseEvent {
            prompt_id: resp.prompt_id.clone(),
            stress_level: resp.stress_level,
            activity: resp.activity,
            responded_at_ms,
            received_at_ms: now_ms,
        };
        let rec = LogRecord {
            seq: subject.state.seq + 1,
            event: Event::Response(ev),
        };
        subject.state.apply(&rec)?;
        if let Err(e) = subject.store.append(&rec) {
            self.reload(subject);
            return Err(e);
        }
        if let Some(job) = self.snapshot_job(subject) {
            self.snapshots.submit(job);
        }
        Ok(ResponseAck {
            prompt_id: resp.prompt_id.clone(),
            sample_id,
            stress_level: resp.stress_level,
            activity: resp.activity,
            responded_at_ms,
        })
    }

    fn selected(&self, subject: Option<&str>) -> Vec<Slot> {
        let map = self.subjects.read().unwrap_or_else(|p| p.into_inner());
        match subject {
            Some(s) => map.get(s).cloned().into_iter().collect(),
            None => map.values().cloned().collect(),
        }
    }

    /// Labeled rows are answered prompts; unlabeled rows are every other
    /// usable window. Ordered by subject, then window start.
    pub fn export(&self, subject: Option<&str>, kind: ExportKind) -> String {
        let mut buf = Vec::new();
        let mut labeled = Vec::new();
        let mut unlabeled = Vec::new();
        for slot in self.selected(subject) {
            let g = lock(&slot);
            let st = &g.state;
            for w in st.windows.values() {
                let Some((features, flags)) = w.usable() else {
                    continue;
                };
                let answer = w
                    .prompt_id
                    .as_ref()
                    .and_then(|p| st.prompts.get(p))
                    .and_then(|p| p.answer.as_ref());
                match answer {
                    Some(a) => labeled.push(LabeledRow {
                        subject_id: st.subject_id.clone(),
                        timestamp_ms: w.start_time_ms,
                        features: *features,
                        flags: *flags,
                        level: a.stress_level,
                        activity: a.activity,
                    }),
                    None => unlabeled.push(FeatureRow {
                        subject_id: st.subject_id.clone(),
                        timestamp_ms: w.start_time_ms,
                        features: *features,
                        flags: *flags,
                    }),
                }
            }
        }
        let res = match kind {
            ExportKind::Labeled => dataset::write_labeled_rows(&mut buf, &labeled),
            ExportKind::Unlabeled => dataset::write_feature_rows(&mut buf, &unlabeled),
        };
        res.expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn stats(&self, subject: Option<&str>, now_ms: i64) -> Result<StatsReport, ServiceError> {
        if let Some(s) = subject {
            if self.slot(s).is_none() {
                return Err(ServiceError::UnknownSubject(s.to_string()));
            }
        }
        let subjects: Vec<SubjectStats> = self
            .selected(subject)
            .iter()
            .map(|slot| lock(slot).state.stats(now_ms))
            .collect();
        Ok(StatsReport { subjects })
    }

    /// Engine decisions for `subject`, in decision order.
    pub fn decisions(&self, subject: &str) -> Result<Vec<DecisionRecord>, ServiceError> {
        let slot = self
            .slot(subject)
            .ok_or_else(|| ServiceError::UnknownSubject(subject.to_string()))?;
        let g = lock(&slot);
        Ok(g.state.decisions.clone())
    }

    /// Snapshots every subject; called on orderly shutdown.
    pub fn checkpoint(&self) -> Result<(), ServiceError> {
        for slot in self.selected(None) {
            let mut g = lock(&slot);
            let subject = &mut *g;
            self.snapshots
                .write_now(subject.store.snapshot_job(&subject.state))?;
        }
        Ok(())
    }
}
