//! On-disk layout of one subject:
//!
//! ```text
//! <data_dir>/subjects/<id>/meta.json       engine config fixed at creation
//!                          events.jsonl    one LogRecord per line
//!                          snapshot.json   SubjectState at some seq
//!                          windows/<start>.csv   raw windows, if enabled
//! ```

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc, Mutex};
use std::thread::JoinHandle;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use stressmon_core::query::{QueryConfig, QueryEngine};
use stressmon_core::signal::{window_csv, RawWindow};

use crate::error::ServiceError;
use crate::state::{LogRecord, SubjectState};

const META: &str = "meta.json";
const EVENTS: &str = "events.jsonl";
const SNAPSHOT: &str = "snapshot.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    subject_id: String,
    query: QueryConfig,
}

pub fn subjects_dir(data_dir: &Path) -> PathBuf {
    data_dir.join("subjects")
}

/// `[A-Za-z0-9_.-]{1,64}`, not starting with a dot.
pub fn valid_subject_id(id: &str) -> bool {
    (1..=64).contains(&id.len())
        && !id.starts_with('.')
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.'))
}

/// Per-subject engine seed, stable across builds and platforms.
pub fn subject_seed(base: u64, subject: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in subject.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ base.rotate_left(17)
}

pub struct SubjectStore {
    dir: PathBuf,
    log: File,
    fsync: bool,
    since_snapshot: u64,
}

fn write_atomic(path: &Path, data: &[u8], fsync: bool) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(data)?;
        if fsync {
            f.sync_all()?;
        }
    }
    fs::rename(&tmp, path)
}

fn open_log(dir: &Path) -> io::Result<File> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join(EVENTS))
}

impl SubjectStore {
    /// Creates the directory of a new subject.
    pub fn create(
        data_dir: &Path,
        subject: &str,
        query: &QueryConfig,
        fsync: bool,
    ) -> Result<(Self, SubjectState), ServiceError> {
        let dir = subjects_dir(data_dir).join(subject);
        fs::create_dir_all(&dir)?;
        let mut query = query.clone();
        query.rng_seed = subject_seed(query.rng_seed, subject);
        let meta = Meta {
            subject_id: subject.to_string(),
            query: query.clone(),
        };
        write_atomic(
            &dir.join(META),
            serde_json::to_string_pretty(&meta)
                .expect("meta serializes")
                .as_bytes(),
            fsync,
        )?;
        let engine = QueryEngine::new(subject, query)?;
        let store = Self {
            log: open_log(&dir)?,
            dir,
            fsync,
            since_snapshot: 0,
        };
        Ok((store, SubjectState::new(engine)))
    }

    /// Loads the snapshot, if any, then replays the log past it. A record
    /// that fails to parse, breaks the sequence, or lacks its newline ends
    /// the log: it and everything after are cut off with a warning.
    pub fn open(dir: &Path, fsync: bool) -> Result<(Self, SubjectState), ServiceError> {
        let meta: Meta = serde_json::from_str(&fs::read_to_string(dir.join(META))?)
            .map_err(|e| ServiceError::Storage(format!("{}: {e}", dir.join(META).display())))?;
        let fresh = || -> Result<SubjectState, ServiceError> {
            Ok(SubjectState::new(QueryEngine::new(
                meta.subject_id.clone(),
                meta.query.clone(),
            )?))
        };
        let mut state = match fs::read_to_string(dir.join(SNAPSHOT)) {
            Ok(text) => match SubjectState::from_snapshot(&text) {
                Ok(s) if s.subject_id == meta.subject_id => s,
                Ok(_) => {
                    warn!(
                        "{}: snapshot belongs to another subject, ignored",
                        dir.display()
                    );
                    fresh()?
                }
                Err(e) => {
                    warn!("{}: unreadable snapshot ignored: {e}", dir.display());
                    fresh()?
                }
            },
            Err(e) if e.kind() == io::ErrorKind::NotFound => fresh()?,
            Err(e) => return Err(e.into()),
        };
        let snapshot_seq = state.seq;

        let path = dir.join(EVENTS);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let mut offset = 0usize;
        let mut replayed = 0u64;
        let mut last_logged = 0u64;
        let mut cut: Option<String> = None;
        while offset < bytes.len() {
            let Some(nl) = bytes[offset..].iter().position(|&b| b == b'\n') else {
                cut = Some("incomplete final record".into());
                break;
            };
            let line = &bytes[offset..offset + nl];
            let rec: LogRecord = match serde_json::from_slice(line) {
                Ok(r) => r,
                Err(e) => {
                    cut = Some(format!("unparsable record: {e}"));
                    break;
                }
            };
            if rec.seq != last_logged + 1 && last_logged != 0 {
                cut = Some(format!("sequence jumps from {last_logged} to {}", rec.seq));
                break;
            }
            if rec.seq > state.seq {
                if rec.seq != state.seq + 1 {
                    cut = Some(format!("record {} follows state {}", rec.seq, state.seq));
                    break;
                }
                state.apply(&rec)?;
                replayed += 1;
            }
            last_logged = rec.seq;
            offset += nl + 1;
        }
        if let Some(why) = cut {
            warn!(
                "{}: {why}; truncating {} trailing bytes",
                path.display(),
                bytes.len() - offset
            );
            let f = OpenOptions::new().write(true).open(&path)?;
            f.set_len(offset as u64)?;
            f.sync_all()?;
        }
        if snapshot_seq > last_logged {
            warn!(
                "{}: snapshot at seq {snapshot_seq} is newer than the log (seq {last_logged}); using snapshot",
                dir.display()
            );
        }
        info!(
            "recovered `{}`: snapshot seq {snapshot_seq}, {replayed} events replayed",
            state.subject_id
        );
        let mut store = Self {
            log: open_log(dir)?,
            dir: dir.to_path_buf(),
            fsync,
            since_snapshot: replayed,
        };
        if replayed > 0 {
            store.snapshot(&state)?;
        }
        Ok((store, state))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes one record and flushes it to the OS (and disk if `fsync`).
    pub fn append(&mut self, rec: &LogRecord) -> Result<(), ServiceError> {
        let mut line = serde_json::to_vec(rec).expect("log record serializes");
        line.push(b'\n');
        self.log.write_all(&line)?;
        self.log.flush()?;
        if self.fsync {
            self.log.sync_data()?;
        }
        self.since_snapshot += 1;
        Ok(())
    }

    pub fn snapshot_due(&self, every: u64) -> bool {
        self.since_snapshot >= every
    }

    pub fn snapshot(&mut self, state: &SubjectState) -> Result<(), ServiceError> {
        write_atomic(
            &self.dir.join(SNAPSHOT),
            state.to_snapshot().as_bytes(),
            self.fsync,
        )?;
        self.since_snapshot = 0;
        Ok(())
    }

    /// Copies `state` for writing elsewhere and restarts the snapshot count.
    pub fn snapshot_job(&mut self, state: &SubjectState) -> SnapshotJob {
        self.since_snapshot = 0;
        SnapshotJob {
            path: self.dir.join(SNAPSHOT),
            fsync: self.fsync,
            state: state.clone(),
        }
    }

    pub fn store_raw(&self, window: &RawWindow) -> Result<(), ServiceError> {
        let dir = self.dir.join("windows");
        fs::create_dir_all(&dir)?;
        let mut buf = Vec::new();
        window_csv::write_window(&mut buf, window)?;
        write_atomic(
            &dir.join(format!("{}.csv", window.start_time_ms)),
            &buf,
            self.fsync,
        )?;
        Ok(())
    }
}

pub struct SnapshotJob {
    path: PathBuf,
    fsync: bool,
    state: SubjectState,
}

type Written = Arc<Mutex<HashMap<PathBuf, u64>>>;

fn write_job(written: &Written, job: SnapshotJob) -> Result<(), ServiceError> {
    let mut seqs = written.lock().unwrap_or_else(|p| p.into_inner());
    if seqs.get(&job.path).is_some_and(|&s| s >= job.state.seq) {
        return Ok(());
    }
    write_atomic(&job.path, job.state.to_snapshot().as_bytes(), job.fsync)?;
    seqs.insert(job.path, job.state.seq);
    Ok(())
}

/// Writes snapshots on a background thread. A snapshot never replaces one
/// with a higher sequence number. Dropping the writer drains the queue.
pub struct SnapshotWriter {
    tx: Option<mpsc::Sender<SnapshotJob>>,
    worker: Option<JoinHandle<()>>,
    written: Written,
}

impl SnapshotWriter {
    pub fn spawn() -> Self {
        let written = Written::default();
        let (tx, rx) = mpsc::channel::<SnapshotJob>();
        let w = written.clone();
        let worker = std::thread::Builder::new()
            .name("snapshot-writer".into())
            .spawn(move || {
                for job in rx {
                    let path = job.path.clone();
                    if let Err(e) = write_job(&w, job) {
                        warn!("snapshot {} failed: {e}", path.display());
                    }
                }
            })
            .ok();
        Self {
            tx: worker.as_ref().map(|_| tx),
            worker,
            written,
        }
    }

    pub fn submit(&self, job: SnapshotJob) {
        let job = match &self.tx {
            Some(tx) => match tx.send(job) {
                Ok(()) => return,
                Err(mpsc::SendError(job)) => job,
            },
            None => job,
        };
        let path = job.path.clone();
        if let Err(e) = write_job(&self.written, job) {
            warn!("snapshot {} failed: {e}", path.display());
        }
    }

    pub fn write_now(&self, job: SnapshotJob) -> Result<(), ServiceError> {
        write_job(&self.written, job)
    }
}

impl Drop for SnapshotWriter {
    fn drop(&mut self) {
        self.tx = None;
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subject_ids() {
        for ok in ["S01", "a.b-c_d", &"x".repeat(64)] {
            assert!(valid_subject_id(ok), "{ok}");
        }
        for bad in ["", ".hidden", "a/b", "..", "sp ace", &"x".repeat(65), "é"] {
            assert!(!valid_subject_id(bad), "{bad}");
        }
    }

    #[test]
    fn seeds_differ_per_subject() {
        assert_eq!(subject_seed(7, "S01"), subject_seed(7, "S01"));
        assert_ne!(subject_seed(7, "S01"), subject_seed(7, "S02"));
        assert_ne!(subject_seed(7, "S01"), subject_seed(8, "S01"));
    }
}
