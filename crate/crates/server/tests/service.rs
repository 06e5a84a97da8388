mod common;

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use common::*;
use stressmon_core::dataset::{read_feature_rows, read_labeled_rows};
use stressmon_core::ema::{Activity, StressLevel};
use stressmon_server::{EnginePhase, ExportKind, LabelResponse, Service, ServiceError};

fn answer(prompt_id: &str, level: StressLevel) -> LabelResponse {
    LabelResponse {
        prompt_id: prompt_id.to_string(),
        stress_level: level,
        activity: Activity::Sitting,
        responded_at_ms: None,
    }
}

#[test]
fn truncated_window_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::open(config(dir.path(), 5)).unwrap();
    let mut w = window("S01", 0);
    w.ppg.truncate(100);
    let err = svc.ingest(&w, T0).unwrap_err();
    assert!(matches!(err, ServiceError::BadWindow(_)), "{err}");
    assert!(svc.subject_ids().is_empty());

    let mut w = window("S01", 0);
    w.ppg[7] = f64::NAN;
    assert!(matches!(
        svc.ingest(&w, T0),
        Err(ServiceError::BadWindow(_))
    ));
    let mut w = window("bad/id", 0);
    w.subject_id = "bad/id".into();
    assert!(matches!(
        svc.ingest(&w, T0),
        Err(ServiceError::BadWindow(_))
    ));
    let mut w = window("S01", 0);
    w.motion = Some(vec![[0.0; 3]; 10]);
    assert!(matches!(
        svc.ingest(&w, T0),
        Err(ServiceError::BadWindow(_))
    ));
}

#[test]
fn initial_phase_never_prompts_then_decisions_follow_rule() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 6);
    let svc = Service::open(cfg.clone()).unwrap();
    for i in 0..6 {
        let out = svc.ingest(&window("S01", i), T0 + i * STEP).unwrap();
        assert!(out.accepted && out.usable && !out.duplicate);
        assert!(out.query_decision.is_none() && out.prompt.is_none());
        let expected = if i < 5 {
            EnginePhase::Initial
        } else {
            EnginePhase::Query
        };
        assert_eq!(out.phase, expected);
    }
    for i in 6..30 {
        let out = svc.ingest(&window("S01", i), T0 + i * STEP).unwrap();
        let d = out.query_decision.expect("query phase decides");
        assert_eq!(d.probability, cfg.query.probability(d.neighbor_count));
        assert_eq!(d.trigger, out.prompt.is_some());
    }
    assert_eq!(svc.decisions("S01").unwrap().len(), 24);
    assert!(svc.pending("S01", T0).is_ok());
}

#[test]
fn prompt_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::open(always_query(dir.path(), 3)).unwrap();
    for i in 0..3 {
        svc.ingest(&window("S01", i), T0 + i * STEP).unwrap();
    }
    assert!(svc.pending("S01", T0).unwrap().is_empty());
    assert!(matches!(
        svc.pending("nobody", T0),
        Err(ServiceError::UnknownSubject(_))
    ));

    let t3 = T0 + 3 * STEP;
    let t4 = t3 + MIN;
    let a = svc.ingest(&window("S01", 3), t3).unwrap().prompt.unwrap();
    let b = svc.ingest(&window("S01", 4), t4).unwrap().prompt.unwrap();
    assert_eq!(a.expires_at_ms, t3 + 15 * MIN);
    assert_eq!(svc.pending("S01", t4).unwrap(), vec![a.clone(), b.clone()]);

    // a is 16 minutes old now; b is 15 minutes old and still open.
    let now = t3 + 16 * MIN;
    assert_eq!(svc.pending("S01", now).unwrap(), vec![b.clone()]);
    assert!(matches!(
        svc.submit_response(&answer(&a.prompt_id, StressLevel::Some), now),
        Err(ServiceError::PromptExpired(_))
    ));

    let region = |svc: &Service| svc.stats(Some("S01"), now).unwrap().subjects[0].clone();
    let before = region(&svc);
    let ack = svc
        .submit_response(&answer(&b.prompt_id, StressLevel::Some), now)
        .unwrap();
    assert_eq!(ack.sample_id, b.sample_id);
    assert_eq!(ack.responded_at_ms, now);
    assert!(matches!(
        svc.submit_response(&answer(&b.prompt_id, StressLevel::ALot), now),
        Err(ServiceError::AlreadyAnswered(_))
    ));
    assert!(matches!(
        svc.submit_response(&answer("p-none", StressLevel::ALot), now),
        Err(ServiceError::UnknownPrompt(_))
    ));
    let after = region(&svc);
    assert_eq!(after.answered, before.answered + 1);
    assert_eq!(after.expired, 1);
    assert_eq!(after.pending, 0);
    assert_eq!(after.labels_per_day.iter().map(|d| d.1).sum::<usize>(), 1);

    let labeled = read_labeled_rows(svc.export(Some("S01"), ExportKind::Labeled).as_bytes())
        .unwrap()
        .rows;
    assert_eq!(labeled.len(), 1);
    assert_eq!(labeled[0].level, StressLevel::Some);
    assert_eq!(labeled[0].activity, Activity::Sitting);
    assert_eq!(labeled[0].timestamp_ms, b.window_start_ms);
    let unlabeled =
        read_feature_rows(svc.export(Some("S01"), ExportKind::Unlabeled).as_bytes()).unwrap();
    assert_eq!(unlabeled.len(), 4);
}

#[test]
fn labeled_count_reaches_region_state() {
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::open(always_query(dir.path(), 2)).unwrap();
    for i in 0..2 {
        svc.ingest(&window("S01", i), T0).unwrap();
    }
    let p = svc.ingest(&window("S01", 2), T0).unwrap().prompt.unwrap();
    let labeled = |svc: &Service| {
        let csv = svc.export(None, ExportKind::Labeled);
        read_labeled_rows(csv.as_bytes()).unwrap().rows.len()
    };
    assert_eq!(labeled(&svc), 0);
    svc.submit_response(&answer(&p.prompt_id, StressLevel::Some), T0)
        .unwrap();
    assert_eq!(labeled(&svc), 1);
}

#[test]
fn late_and_duplicate_windows() {
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::open(config(dir.path(), 50)).unwrap();
    let now = T0 + 40 * STEP;
    for i in [20, 21, 8, 22, 9] {
        let out = svc.ingest(&window("S01", i), now).unwrap();
        assert_eq!(out.late, i < 20, "{i}");
    }
    for i in [5, 3] {
        svc.accept_late(&window("S02", i), now).unwrap();
    }
    let again = svc.ingest(&window("S01", 8), now + 1).unwrap();
    assert!(again.duplicate && again.late);
    let stats = svc.stats(None, now).unwrap();
    let counts: Vec<_> = stats
        .subjects
        .iter()
        .map(|s| (s.subject_id.clone(), s.windows))
        .collect();
    assert_eq!(counts, vec![("S01".to_string(), 5), ("S02".to_string(), 2)]);
    assert_eq!(stats.subjects[0].late_windows, 2);

    let rows = read_feature_rows(svc.export(None, ExportKind::Unlabeled).as_bytes()).unwrap();
    let keys: Vec<_> = rows
        .iter()
        .map(|r| (r.subject_id.as_str(), (r.timestamp_ms - T0) / STEP))
        .collect();
    assert_eq!(
        keys,
        vec![
            ("S01", 8),
            ("S01", 9),
            ("S01", 20),
            ("S01", 21),
            ("S01", 22),
            ("S02", 3),
            ("S02", 5)
        ]
    );
    let only =
        read_feature_rows(svc.export(Some("S02"), ExportKind::Unlabeled).as_bytes()).unwrap();
    assert_eq!(only.len(), 2);
}

#[test]
fn unusable_windows_are_kept_out_of_density_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::open(always_query(dir.path(), 2)).unwrap();
    let out = svc.ingest(&flat_window("S01", 0), T0).unwrap();
    assert!(out.accepted && !out.usable);
    assert!(out.unusable_reason.unwrap().contains("insufficient beats"));
    assert_eq!(out.phase, EnginePhase::Initial);
    svc.ingest(&window("S01", 1), T0).unwrap();
    // still in the initial phase: the flat window did not count
    let out = svc.ingest(&flat_window("S01", 2), T0).unwrap();
    assert_eq!(out.phase, EnginePhase::Initial);
    assert!(out.query_decision.is_none());

    let s = &svc.stats(Some("S01"), T0).unwrap().subjects[0];
    assert_eq!((s.windows, s.usable_windows, s.unusable_windows), (3, 1, 2));
    let rows = read_feature_rows(svc.export(None, ExportKind::Unlabeled).as_bytes()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(
        read_labeled_rows(svc.export(None, ExportKind::Labeled).as_bytes())
            .unwrap()
            .rows
            .len(),
        0
    );
}

#[test]
fn export_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::open(always_query(dir.path(), 3)).unwrap();
    for i in 0..8 {
        if let Some(p) = svc.ingest(&window("S01", i), T0 + i * STEP).unwrap().prompt {
            svc.submit_response(
                &answer(&p.prompt_id, StressLevel::ALittleBit),
                T0 + i * STEP,
            )
            .unwrap();
        }
    }
    for kind in [ExportKind::Labeled, ExportKind::Unlabeled] {
        assert_eq!(svc.export(None, kind), svc.export(None, kind));
    }
    let first = svc.export(None, ExportKind::Labeled);
    drop(svc);
    let svc = Service::open(always_query(dir.path(), 3)).unwrap();
    assert_eq!(svc.export(None, ExportKind::Labeled), first);
}

/// Feeds windows and answers every prompt at once; returns the decision
/// audit. `crash_after` drops the service without a checkpoint and reopens.
fn run_stream(dir: &std::path::Path, n: i64, crash_after: Option<i64>) -> Vec<String> {
    let cfg = {
        let mut c = config(dir, 10);
        c.query.density_divisor = 4.0;
        c.query.saturation_threshold = 3;
        c
    };
    let mut svc = Service::open(cfg.clone()).unwrap();
    for i in 0..n {
        if Some(i) == crash_after {
            drop(svc);
            svc = Service::open(cfg.clone()).unwrap();
        }
        for s in ["A", "B"] {
            let now = T0 + i * STEP;
            if let Some(p) = svc
                .ingest(&window(s, i + (s == "B") as i64 * 3), now)
                .unwrap()
                .prompt
            {
                let level = StressLevel::from_index((i % 5) as u8).unwrap();
                svc.submit_response(&answer(&p.prompt_id, level), now)
                    .unwrap();
            }
        }
    }
    ["A", "B"]
        .iter()
        .flat_map(|s| svc.decisions(s).unwrap())
        .map(|d| format!("{d:?}"))
        .collect()
}

#[test]
fn restart_mid_stream_matches_uninterrupted_run() {
    let reference = run_stream(tempfile::tempdir().unwrap().path(), 40, None);
    assert!(reference.len() > 40);
    assert!(reference.iter().any(|d| d.contains("trigger: true")));
    for crash in [1, 11, 23, 37] {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(
            run_stream(dir.path(), 40, Some(crash)),
            reference,
            "crash at {crash}"
        );
    }
}

#[test]
fn corrupt_tail_is_truncated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 3);
    let svc = Service::open(cfg.clone()).unwrap();
    for i in 0..5 {
        svc.ingest(&window("S01", i), T0).unwrap();
    }
    let reference = svc.export(None, ExportKind::Unlabeled);
    drop(svc);
    let log = dir.path().join("subjects/S01/events.jsonl");
    let good_len = fs::metadata(&log).unwrap().len();
    OpenOptions::new()
        .append(true)
        .open(&log)
        .unwrap()
        .write_all(b"{\"seq\":6,\"type\":\"win")
        .unwrap();

    let svc = Service::open(cfg.clone()).unwrap();
    assert_eq!(fs::metadata(&log).unwrap().len(), good_len);
    assert_eq!(svc.export(None, ExportKind::Unlabeled), reference);
    svc.ingest(&window("S01", 5), T0).unwrap();
    drop(svc);
    let svc = Service::open(cfg).unwrap();
    assert_eq!(svc.stats(None, T0).unwrap().subjects[0].windows, 6);
}

#[test]
fn snapshot_newer_than_log_wins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 3);
    let svc = Service::open(cfg.clone()).unwrap();
    for i in 0..6 {
        svc.ingest(&window("S01", i), T0).unwrap();
    }
    svc.checkpoint().unwrap();
    let decisions = svc.decisions("S01").unwrap();
    drop(svc);
    fs::write(dir.path().join("subjects/S01/events.jsonl"), b"").unwrap();
    let svc = Service::open(cfg.clone()).unwrap();
    assert_eq!(svc.decisions("S01").unwrap(), decisions);
    assert_eq!(svc.stats(None, T0).unwrap().subjects[0].windows, 6);
    svc.ingest(&window("S01", 6), T0).unwrap();
    drop(svc);
    let svc = Service::open(cfg).unwrap();
    assert_eq!(svc.stats(None, T0).unwrap().subjects[0].windows, 7);
}

#[test]
fn empty_directory_gives_fresh_state() {
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::open(config(&dir.path().join("new"), 3)).unwrap();
    assert!(svc.subject_ids().is_empty());
    assert!(svc.stats(None, T0).unwrap().subjects.is_empty());
    assert_eq!(
        svc.export(None, ExportKind::Labeled).trim_end(),
        stressmon_core::dataset::labeled_header()
    );
}

#[test]
fn concurrent_ingest_is_serializable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = always_query(dir.path(), 4);
    let svc = Arc::new(Service::open(cfg.clone()).unwrap());
    std::thread::scope(|s| {
        for t in 0..4 {
            let svc = svc.clone();
            s.spawn(move || {
                for i in 0..6 {
                    svc.ingest(&window("S01", t * 6 + i), T0).unwrap();
                    svc.ingest(&window("S02", t * 6 + i), T0).unwrap();
                }
            });
        }
    });
    let decisions: Vec<_> = ["S01", "S02"].map(|s| svc.decisions(s).unwrap()).into();
    assert_eq!(decisions[0].len(), 20);
    let stats = svc.stats(None, T0).unwrap();
    assert!(stats.subjects.iter().all(|s| s.windows == 24));
    drop(svc);
    // replay checks every logged decision against a serial re-execution
    let svc = Service::open(cfg).unwrap();
    let replayed: Vec<_> = ["S01", "S02"].map(|s| svc.decisions(s).unwrap()).into();
    assert_eq!(replayed, decisions);
}

#[test]
fn raw_windows_stored_when_enabled() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), 3);
    cfg.store_raw_windows = true;
    let svc = Service::open(cfg).unwrap();
    let w = window("S01", 2);
    svc.ingest(&w, T0).unwrap();
    let path = dir
        .path()
        .join(format!("subjects/S01/windows/{}.csv", w.start_time_ms));
    let text = fs::read_to_string(path).unwrap();
    let back = stressmon_core::signal::window_csv::read_windows(text.as_bytes()).unwrap();
    assert_eq!(back.len(), 1);
    assert_eq!(back[0].ppg.len(), w.ppg.len());
}

#[test]
fn single_window_latency() {
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::open(config(dir.path(), 3)).unwrap();
    let windows: Vec<_> = (0..20).map(|i| window("S01", i)).collect();
    let mut worst = 0.0f64;
    for w in &windows {
        let t = Instant::now();
        svc.ingest(w, T0).unwrap();
        worst = worst.max(t.elapsed().as_secs_f64());
    }
    assert!(worst <= 0.1, "slowest ingest {worst:.3} s");
}

#[test]
fn periodic_snapshots_are_flushed_on_drop() {
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::open(config(dir.path(), 5)).unwrap();
    for i in 0..16 {
        svc.ingest(&window("S01", i), T0 + i * STEP).unwrap();
    }
    drop(svc);
    let text = fs::read_to_string(dir.path().join("subjects/S01/snapshot.json")).unwrap();
    let snap: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(snap["seq"], 14);
}
