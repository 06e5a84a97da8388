use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use stressmon_core::dataset::{read_feature_rows, read_labeled_rows};
use stressmon_core::ema::StressLevel;
use stressmon_core::signal::RawWindow;
use stressmon_server::{
    ExportKind, IngestOutcome, LabelResponse, PendingPrompt, ResponseAck, Service, ServiceConfig,
};
use stressmon_sim::{
    make_cohort, run, run_cohort, Dropout, DropoutKind, EndpointError, HttpEndpoint, ResponseDelay,
    ServiceEndpoint, SimClock, SimOptions, StressSegment, SubjectProfile, SubjectSim, CADENCE_MS,
    WINDOW_MS,
};

/// 2023-11-15 00:00 UTC.
const MIDNIGHT: i64 = 1_700_006_400_000;
const HOUR: i64 = 3_600_000;

fn service(dir: &std::path::Path, initial: usize, p_min: f64, saturation: usize) -> Service {
    let mut cfg = ServiceConfig {
        data_dir: dir.to_path_buf(),
        ..Default::default()
    };
    cfg.query.initial_count = initial;
    cfg.query.p_min = p_min;
    cfg.query.saturation_threshold = saturation;
    Service::open(cfg).unwrap()
}

fn opts(days: f64, seed: u64) -> SimOptions {
    SimOptions::days(MIDNIGHT, days, seed)
}

fn simulate(profile: &SubjectProfile, o: &SimOptions, svc: &Service) -> stressmon_sim::SimReport {
    run(profile, o, &mut SimClock::unpaced(o.start_ms), svc).unwrap()
}

#[test]
fn one_day_emits_96_windows_on_cadence() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path(), 100, 0.1, 10);
    let p = SubjectProfile::simple("S01", 70.0, 40.0);
    let r = simulate(&p, &opts(1.0, 1), &svc);
    assert_eq!(r.rows.len(), 96);
    for (k, row) in r.rows.iter().enumerate() {
        assert_eq!(row.window_start_ms, MIDNIGHT + k as i64 * CADENCE_MS);
        assert_eq!(row.emitted_at_ms, row.window_start_ms + WINDOW_MS);
        assert_eq!(row.delivered_at_ms, Some(row.emitted_at_ms));
    }
    assert_eq!(
        svc.stats(Some("S01"), MIDNIGHT).unwrap().subjects[0].windows,
        96
    );
    let mut csv = Vec::new();
    r.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("window_start_ms,truth_level,emitted_at_ms,delivered_at_ms")
    );
    assert_eq!(
        lines.next().unwrap(),
        format!(
            "{MIDNIGHT},0,{},{}",
            MIDNIGHT + WINDOW_MS,
            MIDNIGHT + WINDOW_MS
        )
    );
}

#[test]
fn buffered_dropout_delivers_late_with_original_start_times() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path(), 100, 0.1, 10);
    let mut p = SubjectProfile::simple("S01", 70.0, 40.0);
    p.dropouts.push(Dropout {
        start_min: 600.0,
        end_min: 720.0,
        kind: DropoutKind::Buffered,
    });
    let r = simulate(&p, &opts(1.0, 2), &svc);
    let held: Vec<_> = r
        .rows
        .iter()
        .filter(|row| row.delivered_at_ms != Some(row.emitted_at_ms))
        .collect();
    assert_eq!(held.len(), 8);
    for (j, row) in held.iter().enumerate() {
        assert_eq!(
            row.window_start_ms,
            MIDNIGHT + 10 * HOUR + j as i64 * CADENCE_MS
        );
        assert_eq!(row.delivered_at_ms, Some(MIDNIGHT + 12 * HOUR));
    }
    let rows = read_feature_rows(svc.export(None, ExportKind::Unlabeled).as_bytes()).unwrap();
    assert_eq!(rows.len(), 96);
    assert!(rows
        .windows(2)
        .all(|w| w[0].timestamp_ms < w[1].timestamp_ms));
}

#[test]
fn watch_off_records_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path(), 100, 0.1, 10);
    let mut p = SubjectProfile::simple("S01", 70.0, 40.0);
    p.dropouts.push(Dropout {
        start_min: 0.0,
        end_min: 120.0,
        kind: DropoutKind::Off,
    });
    p.daily_off = Some(stressmon_sim::DailyOff {
        start_hour: 22.0,
        end_hour: 24.0,
    });
    let r = simulate(&p, &opts(1.0, 3), &svc);
    assert_eq!(r.rows.len(), 96 - 8 - 8);
    assert_eq!(r.rows[0].window_start_ms, MIDNIGHT + 2 * HOUR);
}

#[test]
fn stress_segment_raises_extracted_heart_rate() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path(), 100, 0.1, 10);
    let mut p = SubjectProfile::simple("S01", 70.0, 40.0);
    p.stress_schedule = vec![
        StressSegment {
            start_min: 0.0,
            level: StressLevel::NotAtAll,
        },
        StressSegment {
            start_min: 360.0,
            level: StressLevel::ALot,
        },
        StressSegment {
            start_min: 720.0,
            level: StressLevel::NotAtAll,
        },
    ];
    let r = simulate(&p, &opts(1.0, 4), &svc);
    let (mut calm, mut stressed) = (Vec::new(), Vec::new());
    for row in &r.rows {
        let bpm = row.extracted_bpm.expect("clean windows are usable");
        if row.truth_level == StressLevel::ALot {
            assert!((bpm - 90.0).abs() <= 3.0, "{bpm}");
            stressed.push(bpm);
        } else {
            calm.push(bpm);
        }
    }
    assert_eq!(stressed.len(), 24);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&stressed) > mean(&calm) + 15.0);
}

#[test]
fn cohort_profiles_raise_heart_rate_under_stress() {
    let profiles = make_cohort(3, 11);
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path(), 100, 0.1, 10);
    for p in &profiles {
        let r = simulate(p, &opts(2.0, 5), &svc);
        let mut by_level = [(0.0, 0usize); 2];
        for row in &r.rows {
            if let Some(b) = row.extracted_bpm {
                let slot = &mut by_level[usize::from(row.truth_level != StressLevel::NotAtAll)];
                slot.0 += b;
                slot.1 += 1;
            }
        }
        if by_level[1].1 > 0 {
            let calm = by_level[0].0 / by_level[0].1 as f64;
            let stressed = by_level[1].0 / by_level[1].1 as f64;
            assert!(stressed > calm, "{}: {stressed} vs {calm}", p.subject_id);
        }
    }
}

#[test]
fn perfect_respondent_answers_every_prompt_with_truth() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path(), 20, 0.5, 1_000_000);
    let mut p = SubjectProfile::simple("S01", 70.0, 40.0);
    p.stress_schedule = vec![
        StressSegment {
            start_min: 0.0,
            level: StressLevel::NotAtAll,
        },
        StressSegment {
            start_min: 500.0,
            level: StressLevel::Some,
        },
        StressSegment {
            start_min: 900.0,
            level: StressLevel::Extremely,
        },
    ];
    let r = simulate(&p, &opts(1.0, 6), &svc);
    assert!(r.prompts_seen > 20);
    assert_eq!(r.responses_accepted, r.prompts_seen);
    assert_eq!(r.responses_rejected + r.prompts_ignored, 0);
    let labeled = read_labeled_rows(svc.export(None, ExportKind::Labeled).as_bytes()).unwrap();
    assert_eq!(labeled.rows.len(), r.responses_accepted);
    for row in &labeled.rows {
        let truth = r
            .rows
            .iter()
            .find(|x| x.window_start_ms == row.timestamp_ms)
            .unwrap()
            .truth_level;
        assert_eq!(row.level, truth);
    }
}

#[test]
fn adherence_half_over_many_prompts() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path(), 10, 1.0, 1_000_000);
    let mut p = SubjectProfile::simple("S01", 70.0, 40.0);
    p.adherence_prob = 0.5;
    let r = simulate(&p, &opts(4.5, 7), &svc);
    assert!(r.prompts_seen >= 400, "{}", r.prompts_seen);
    let frac = r.responses_accepted as f64 / r.prompts_seen as f64;
    assert!((frac - 0.5).abs() <= 0.08, "{frac}");
}

#[test]
fn slow_answers_expire_and_stay_unlabeled() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path(), 10, 1.0, 1_000_000);
    let mut p = SubjectProfile::simple("S01", 70.0, 40.0);
    p.response_delay = ResponseDelay::Uniform {
        min: 0.0,
        max: 30.0,
    };
    let r = simulate(&p, &opts(1.0, 8), &svc);
    assert!(
        r.responses_rejected > 10 && r.responses_accepted > 10,
        "{r:?}"
    );
    assert_eq!(r.responses_accepted + r.responses_rejected, r.prompts_seen);
    let labeled = read_labeled_rows(svc.export(None, ExportKind::Labeled).as_bytes()).unwrap();
    assert_eq!(labeled.rows.len(), r.responses_accepted);
    let s = &svc
        .stats(Some("S01"), MIDNIGHT + 2 * 24 * HOUR)
        .unwrap()
        .subjects[0];
    assert_eq!(s.expired, r.responses_rejected);
}

#[test]
fn noisy_labels_differ_from_truth() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path(), 10, 1.0, 1_000_000);
    let mut p = SubjectProfile::simple("S01", 70.0, 40.0);
    p.label_noise_prob = 0.5;
    let r = simulate(&p, &opts(1.0, 9), &svc);
    let labeled = read_labeled_rows(svc.export(None, ExportKind::Labeled).as_bytes()).unwrap();
    let flipped = labeled
        .rows
        .iter()
        .filter(|x| x.level != StressLevel::NotAtAll)
        .count();
    let frac = flipped as f64 / labeled.rows.len() as f64;
    assert!(
        (frac - 0.5).abs() < 0.2,
        "{frac} of {}",
        r.responses_accepted
    );
}

#[test]
fn cohort_is_reproducible_and_heterogeneous() {
    let a = make_cohort(14, 3);
    assert_eq!(a, make_cohort(14, 3));
    assert_ne!(a, make_cohort(14, 4));
    let hrs: Vec<f64> = a.iter().map(|p| p.baseline_hr).collect();
    let span =
        hrs.iter().cloned().fold(f64::MIN, f64::max) - hrs.iter().cloned().fold(f64::MAX, f64::min);
    assert!(span >= 20.0, "{span}");
    assert_eq!(a.iter().filter(|p| p.high_volume).count(), 1);
    for p in &a {
        p.validate().unwrap();
        assert_eq!(SubjectProfile::from_toml(&p.to_toml()).unwrap(), *p);
    }
}

#[test]
fn runs_are_deterministic_per_seed() {
    let profiles = make_cohort(2, 21);
    let go = |seed| {
        let dir = tempfile::tempdir().unwrap();
        let svc = service(dir.path(), 30, 0.1, 10);
        let reports: Vec<_> = run_cohort(&profiles, &opts(1.0, seed), 0.0, &svc)
            .into_iter()
            .map(|r| r.unwrap())
            .collect();
        (
            reports,
            svc.export(None, ExportKind::Labeled),
            svc.export(None, ExportKind::Unlabeled),
        )
    };
    let a = go(1);
    assert_eq!(a, go(1));
    assert_ne!(a.2, go(2).2);
}

/// Fails the first `failures` ingests, then forwards to the service.
struct Flaky {
    inner: Service,
    failures: usize,
    calls: AtomicUsize,
}

impl ServiceEndpoint for Flaky {
    fn ingest(&self, w: &RawWindow, now: i64) -> Result<IngestOutcome, EndpointError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) < self.failures {
            return Err(EndpointError::Unavailable("connection refused".into()));
        }
        ServiceEndpoint::ingest(&self.inner, w, now)
    }
    fn pending(&self, s: &str, now: i64) -> Result<Vec<PendingPrompt>, EndpointError> {
        ServiceEndpoint::pending(&self.inner, s, now)
    }
    fn respond(&self, r: &LabelResponse, now: i64) -> Result<ResponseAck, EndpointError> {
        ServiceEndpoint::respond(&self.inner, r, now)
    }
}

#[test]
fn outage_is_retried_then_recovered() {
    let dir = tempfile::tempdir().unwrap();
    let ep = Flaky {
        inner: service(dir.path(), 100, 0.1, 10),
        failures: 5,
        calls: AtomicUsize::new(0),
    };
    let p = SubjectProfile::simple("S01", 70.0, 40.0);
    let r = run(&p, &opts(0.25, 1), &mut SimClock::unpaced(MIDNIGHT), &ep).unwrap();
    assert!(r.failure.is_none());
    assert_eq!(r.failed_attempts, 5);
    assert_eq!(r.delivered(), 24);
    assert_eq!(
        r.rows[0].delivered_at_ms,
        Some(r.rows[0].emitted_at_ms + 5 * 60_000)
    );
}

#[test]
fn unreachable_service_reports_failure() {
    let dir = tempfile::tempdir().unwrap();
    let ep = Flaky {
        inner: service(dir.path(), 100, 0.1, 10),
        failures: usize::MAX,
        calls: AtomicUsize::new(0),
    };
    let p = SubjectProfile::simple("S01", 70.0, 40.0);
    let mut o = opts(1.0, 1);
    o.max_retries = 3;
    let r = run(&p, &o, &mut SimClock::unpaced(MIDNIGHT), &ep).unwrap();
    assert_eq!(r.failed_attempts, 4);
    assert!(r.failure.as_deref().unwrap().contains("unreachable"));
    assert_eq!(r.delivered(), 0);
}

#[test]
fn restart_between_steps_keeps_decisions() {
    let cfg = |dir: &std::path::Path| {
        let mut c = ServiceConfig {
            data_dir: dir.to_path_buf(),
            ..Default::default()
        };
        c.query.initial_count = 20;
        c
    };
    let p = SubjectProfile::simple("S01", 70.0, 40.0);
    let o = opts(1.0, 13);
    let ref_dir = tempfile::tempdir().unwrap();
    let reference = Service::open(cfg(ref_dir.path())).unwrap();
    simulate(&p, &o, &reference);

    let dir = tempfile::tempdir().unwrap();
    let mut sim = SubjectSim::new(p, o).unwrap();
    let svc = Service::open(cfg(dir.path())).unwrap();
    sim.run_until(&svc, MIDNIGHT + 9 * HOUR).unwrap();
    drop(svc);
    let svc = Service::open(cfg(dir.path())).unwrap();
    sim.run_until(&svc, i64::MAX).unwrap();
    assert_eq!(
        svc.decisions("S01").unwrap(),
        reference.decisions("S01").unwrap()
    );
}

#[test]
fn http_endpoint_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ServiceConfig {
        data_dir: dir.path().to_path_buf(),
        ..Default::default()
    };
    cfg.trust_client_clock = true;
    cfg.query.initial_count = 10;
    cfg.query.p_min = 0.5;
    let svc = Arc::new(Service::open(cfg).unwrap());
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt
        .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
        .unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = rt.spawn(stressmon_server::http::serve(
        svc.clone(),
        listener,
        async {
            rx.await.ok();
        },
    ));

    let ep = HttpEndpoint::new(&format!("http://{addr}"));
    ep.health().unwrap();
    let profiles = make_cohort(2, 5);
    let reports: Vec<_> = run_cohort(&profiles, &opts(0.5, 3), 0.0, &ep)
        .into_iter()
        .map(|r| r.unwrap())
        .collect();
    let stats = ep.stats(None).unwrap();
    assert_eq!(stats.subjects.len(), 2);
    let labeled = ep.export(None, ExportKind::Labeled).unwrap();
    let n_labeled = read_labeled_rows(labeled.as_bytes()).unwrap().rows.len();
    assert_eq!(
        n_labeled,
        reports.iter().map(|r| r.responses_accepted).sum::<usize>()
    );
    for (r, s) in reports.iter().zip(&stats.subjects) {
        assert_eq!(s.windows, r.delivered());
    }
    assert!(matches!(
        ep.stats(Some("nobody")),
        Err(EndpointError::Rejected { ref kind, .. }) if kind == "unknown_subject"
    ));

    tx.send(()).unwrap();
    rt.block_on(server).unwrap().unwrap();
    let dead =
        HttpEndpoint::with_timeout(&format!("http://{addr}"), std::time::Duration::from_secs(2));
    assert!(matches!(dead.health(), Err(EndpointError::Unavailable(_))));
}
