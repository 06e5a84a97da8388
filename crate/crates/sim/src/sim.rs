//! One simulated wearer: a watch that records a 2-minute window every 15
//! minutes, buffers during dropouts, and a respondent that answers prompts.

use std::collections::{HashSet, VecDeque};
use std::io::{self, Write};

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stressmon_core::ema::{Activity, StressLevel};
use stressmon_core::model::derive_seed;
use stressmon_core::signal::{synthesize_ppg, HrProfile, PpgSynthConfig, RawWindow, Respiration};
use stressmon_server::LabelResponse;
use thiserror::Error;

use crate::clock::SimClock;
use crate::endpoint::{EndpointError, ServiceEndpoint};
use crate::profile::{DropoutKind, ProfileError, SubjectProfile};

pub const CADENCE_MS: i64 = 15 * 60 * 1000;
pub const WINDOW_MS: i64 = 2 * 60 * 1000;
const MINUTE_MS: f64 = 60_000.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("synthesis failed: {0}")]
    Synth(String),
    #[error("window {start_ms} of `{subject}` rejected: {source}")]
    WindowRejected {
        subject: String,
        start_ms: i64,
        source: EndpointError,
    },
    #[error("invalid options: {0}")]
    Options(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub start_ms: i64,
    pub duration_ms: i64,
    pub seed: u64,
    pub auto_respond: bool,
    /// Consecutive failed delivery attempts before the run gives up.
    pub max_retries: u32,
    /// Simulated wait between delivery attempts.
    pub retry_interval_ms: i64,
}

impl SimOptions {
    pub fn days(start_ms: i64, days: f64, seed: u64) -> Self {
        Self {
            start_ms,
            duration_ms: (days * 86_400_000.0).round() as i64,
            seed,
            auto_respond: true,
            max_retries: 20,
            retry_interval_ms: 60_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub window_start_ms: i64,
    pub truth_level: StressLevel,
    pub emitted_at_ms: i64,
    pub delivered_at_ms: Option<i64>,
    /// Heart rate the service extracted, when the window was usable.
    pub extracted_bpm: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimReport {
    pub subject_id: String,
    pub rows: Vec<ReportRow>,
    pub prompts_seen: usize,
    /// Prompts the respondent chose to ignore.
    pub prompts_ignored: usize,
    pub responses_accepted: usize,
    /// Responses the service refused, e.g. because the prompt expired.
    pub responses_rejected: usize,
    pub failed_attempts: usize,
    /// Set when delivery was abandoned after `max_retries`.
    pub failure: Option<String>,
}

impl SimReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "window_start_ms,truth_level,emitted_at_ms,delivered_at_ms"
        )?;
        for r in &self.rows {
            let delivered = r.delivered_at_ms.map(|t| t.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{delivered}",
                r.window_start_ms,
                r.truth_level.index(),
                r.emitted_at_ms
            )?;
        }
        Ok(())
    }

    pub fn delivered(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.delivered_at_ms.is_some())
            .count()
    }
}

struct Buffered {
    window: RawWindow,
    row: usize,
    not_before_ms: i64,
}

struct Scheduled {
    due_ms: i64,
    response: LabelResponse,
    attempts: u32,
}

/// Step-wise simulation of one subject, so callers can swap or restart
/// the service between events.
pub struct SubjectSim {
    profile: SubjectProfile,
    opts: SimOptions,
    responder_rng: ChaCha8Rng,
    next_k: i64,
    n_windows: i64,
    buffer: VecDeque<Buffered>,
    delivery_failures: u32,
    seen: HashSet<String>,
    scheduled: Vec<Scheduled>,
    report: SimReport,
}

impl SubjectSim {
    pub fn new(profile: SubjectProfile, opts: SimOptions) -> Result<Self, SimError> {
        profile.validate()?;
        if opts.duration_ms < 0 || opts.retry_interval_ms <= 0 {
            return Err(SimError::Options(
                "duration must be non-negative and retry interval positive".into(),
            ));
        }
        let tag = subject_tag(&profile.subject_id);
        Ok(Self {
            responder_rng: ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, tag ^ 0x5e5)),
            n_windows: (opts.duration_ms + CADENCE_MS - 1) / CADENCE_MS,
            next_k: 0,
            buffer: VecDeque::new(),
            delivery_failures: 0,
            seen: HashSet::new(),
            scheduled: Vec::new(),
            report: SimReport {
                subject_id: profile.subject_id.clone(),
                ..Default::default()
            },
            profile,
            opts,
        })
    }

    pub fn profile(&self) -> &SubjectProfile {
        &self.profile
    }

    pub fn report(&self) -> &SimReport {
        &self.report
    }

    pub fn into_report(self) -> SimReport {
        self.report
    }

    fn minutes(&self, t_ms: i64) -> f64 {
        (t_ms - self.opts.start_ms) as f64 / MINUTE_MS
    }

    fn window_start(&self, k: i64) -> i64 {
        self.opts.start_ms + k * CADENCE_MS
    }

    /// Simulated time of the next event, or `None` when finished.
    pub fn next_event_ms(&self) -> Option<i64> {
        if self.report.failure.is_some() {
            return None;
        }
        let emit =
            (self.next_k < self.n_windows).then(|| self.window_start(self.next_k) + WINDOW_MS);
        let flush = self.buffer.front().map(|b| b.not_before_ms);
        let respond = self.scheduled.iter().map(|s| s.due_ms).min();
        [emit, flush, respond].into_iter().flatten().min()
    }

    pub fn is_done(&self) -> bool {
        self.next_event_ms().is_none()
    }

    /// Ground-truth physiology for window `k`.
    pub fn synthesize(&self, k: i64) -> Result<(RawWindow, StressLevel), SimError> {
        let start = self.window_start(k);
        let level = self.profile.level_at(self.minutes(start));
        let hr = HrProfile::constant(self.profile.heart_rate(level))
            .map_err(|e| SimError::Synth(e.to_string()))?;
        let seed = derive_seed(
            derive_seed(self.opts.seed, subject_tag(&self.profile.subject_id)),
            k as u64,
        );
        let mut cfg = PpgSynthConfig::new(hr, seed);
        cfg.hrv_jitter_ms = self.profile.jitter_ms(level);
        cfg.noise_rms = self.profile.noise_rms;
        cfg.drift_amp = self.profile.drift_amp;
        if self.profile.respiration_amp_ms > 0.0 {
            cfg.respiration = Some(Respiration {
                rate_hz: self.profile.respiration_rate_hz,
                amplitude_ms: self.profile.respiration_amp_ms,
            });
        }
        cfg.subject_id = self.profile.subject_id.clone();
        cfg.start_time_ms = start;
        let w = synthesize_ppg(&cfg).map_err(|e| SimError::Synth(e.to_string()))?;
        Ok((w.window, level))
    }

    /// Processes every event up to and including `until_ms`.
    pub fn run_until<E: ServiceEndpoint + ?Sized>(
        &mut self,
        ep: &E,
        until_ms: i64,
    ) -> Result<(), SimError> {
        while let Some(t) = self.next_event_ms() {
            if t > until_ms {
                break;
            }
            self.step(ep)?;
        }
        Ok(())
    }

    /// Handles the next event. Returns its time, or `None` when finished.
    pub fn step<E: ServiceEndpoint + ?Sized>(&mut self, ep: &E) -> Result<Option<i64>, SimError> {
        let Some(t) = self.next_event_ms() else {
            return Ok(None);
        };
        if self.next_k < self.n_windows && self.window_start(self.next_k) + WINDOW_MS == t {
            self.emit(self.next_k, t)?;
            self.next_k += 1;
        }
        let delivered = self.flush(ep, t)?;
        if delivered && self.opts.auto_respond {
            self.poll(ep, t);
        }
        self.submit_due(ep, t);
        Ok(Some(t))
    }

    fn emit(&mut self, k: i64, t: i64) -> Result<(), SimError> {
        let start = self.window_start(k);
        let dropout = self.profile.dropout_at(self.minutes(start));
        if matches!(dropout, Some(d) if d.kind == DropoutKind::Off) {
            return Ok(());
        }
        let (window, level) = self.synthesize(k)?;
        let hold = match dropout {
            Some(d) => self.opts.start_ms + (d.end_min * MINUTE_MS).round() as i64,
            None => t,
        };
        self.report.rows.push(ReportRow {
            window_start_ms: start,
            truth_level: level,
            emitted_at_ms: t,
            delivered_at_ms: None,
            extracted_bpm: None,
        });
        self.buffer.push_back(Buffered {
            window,
            row: self.report.rows.len() - 1,
            not_before_ms: hold.max(t),
        });
        Ok(())
    }

    /// Delivers buffered windows in recording order. Returns whether any
    /// window reached the service.
    fn flush<E: ServiceEndpoint + ?Sized>(&mut self, ep: &E, t: i64) -> Result<bool, SimError> {
        let mut delivered = false;
        while let Some(front) = self.buffer.front() {
            if front.not_before_ms > t {
                break;
            }
            match ep.ingest(&front.window, t) {
                Ok(out) => {
                    let b = self.buffer.pop_front().expect("front exists");
                    let row = &mut self.report.rows[b.row];
                    row.delivered_at_ms = Some(t);
                    row.extracted_bpm = out.features.map(|f| f.bpm);
                    self.delivery_failures = 0;
                    delivered = true;
                }
                Err(EndpointError::Unavailable(msg)) => {
                    self.delivery_failures += 1;
                    self.report.failed_attempts += 1;
                    if self.delivery_failures > self.opts.max_retries {
                        warn!(
                            "{}: giving up after {} attempts: {msg}",
                            self.profile.subject_id, self.delivery_failures
                        );
                        self.report.failure = Some(format!(
                            "service unreachable after {} attempts: {msg}",
                            self.delivery_failures
                        ));
                        return Ok(delivered);
                    }
                    debug!(
                        "{}: delivery failed, retrying: {msg}",
                        self.profile.subject_id
                    );
                    let retry = t + self.opts.retry_interval_ms;
                    for b in self.buffer.iter_mut() {
                        b.not_before_ms = b.not_before_ms.max(retry);
                    }
                    break;
                }
                Err(e) => {
                    return Err(SimError::WindowRejected {
                        subject: self.profile.subject_id.clone(),
                        start_ms: front.window.start_time_ms,
                        source: e,
                    })
                }
            }
        }
        Ok(delivered)
    }

    /// Fetches new prompts and schedules answers. Draws a fixed number of
    /// random values per prompt so later prompts see the same stream
    /// whatever the outcome.
    fn poll<E: ServiceEndpoint + ?Sized>(&mut self, ep: &E, t: i64) {
        let prompts = match ep.pending(&self.profile.subject_id, t) {
            Ok(p) => p,
            Err(e) => {
                debug!("{}: poll failed: {e}", self.profile.subject_id);
                return;
            }
        };
        for p in prompts {
            if !self.seen.insert(p.prompt_id.clone()) {
                continue;
            }
            self.report.prompts_seen += 1;
            let rng = &mut self.responder_rng;
            let adhere = rng.random::<f64>() < self.profile.adherence_prob;
            let delay_min = self.profile.response_delay.sample_min(rng);
            let flip = rng.random::<f64>() < self.profile.label_noise_prob;
            let other = rng.random_range(0..4u8);
            let activity = Activity::ALL[rng.random_range(0..Activity::ALL.len())];
            if !adhere {
                self.report.prompts_ignored += 1;
                continue;
            }
            let truth = self.profile.level_at(self.minutes(p.window_start_ms));
            let level = if flip {
                let idx = if other >= truth.index() {
                    other + 1
                } else {
                    other
                };
                StressLevel::from_index(idx).expect("index below 5")
            } else {
                truth
            };
            // counted from the poll, not `created_at`, which comes from the
            // server's clock
            let due = t + (delay_min * MINUTE_MS).round() as i64;
            self.scheduled.push(Scheduled {
                due_ms: due,
                response: LabelResponse {
                    prompt_id: p.prompt_id,
                    stress_level: level,
                    activity,
                    responded_at_ms: None,
                },
                attempts: 0,
            });
        }
    }

    fn submit_due<E: ServiceEndpoint + ?Sized>(&mut self, ep: &E, t: i64) {
        let mut due: Vec<Scheduled> = Vec::new();
        let mut i = 0;
        while i < self.scheduled.len() {
            if self.scheduled[i].due_ms <= t {
                due.push(self.scheduled.remove(i));
            } else {
                i += 1;
            }
        }
        due.sort_by(|a, b| {
            (a.due_ms, &a.response.prompt_id).cmp(&(b.due_ms, &b.response.prompt_id))
        });
        for mut s in due {
            match ep.respond(&s.response, t) {
                Ok(_) => self.report.responses_accepted += 1,
                Err(EndpointError::Unavailable(msg)) if s.attempts < self.opts.max_retries => {
                    debug!(
                        "{}: response failed, retrying: {msg}",
                        self.profile.subject_id
                    );
                    s.attempts += 1;
                    s.due_ms = t + self.opts.retry_interval_ms;
                    self.scheduled.push(s);
                }
                Err(e) => {
                    debug!("{}: response rejected: {e}", self.profile.subject_id);
                    self.report.responses_rejected += 1;
                }
            }
        }
    }
}

/// Stable tag of a subject id for seed derivation.
pub fn subject_tag(subject: &str) -> u64 {
    subject.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Runs one subject to completion against `ep`, paced by `clock`.
pub fn run<E: ServiceEndpoint + ?Sized>(
    profile: &SubjectProfile,
    opts: &SimOptions,
    clock: &mut SimClock,
    ep: &E,
) -> Result<SimReport, SimError> {
    let mut sim = SubjectSim::new(profile.clone(), opts.clone())?;
    while let Some(t) = sim.next_event_ms() {
        clock.advance_to(t);
        sim.step(ep)?;
    }
    Ok(sim.into_report())
}

/// Runs every profile on its own thread; reports come back in input order.
pub fn run_cohort<E: ServiceEndpoint + ?Sized>(
    profiles: &[SubjectProfile],
    opts: &SimOptions,
    accel: f64,
    ep: &E,
) -> Vec<Result<SimReport, SimError>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = profiles
            .iter()
            .map(|p| {
                s.spawn(move || {
                    let mut clock = SimClock::new(opts.start_ms, accel);
                    run(p, opts, &mut clock, ep)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    })
}
