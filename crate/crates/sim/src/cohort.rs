use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use stressmon_core::ema::StressLevel;

use crate::profile::{
    DailyOff, Dropout, DropoutKind, ResponseDelay, StressEffect, StressSegment, SubjectProfile,
};

const WEEK_MIN: f64 = 7.0 * 24.0 * 60.0;

/// Weekly-repeating schedule: calm stretches (mean 8 h) broken by stress
/// episodes of 1–4 h at a random level.
fn weekly_schedule(rng: &mut ChaCha8Rng) -> Vec<StressSegment> {
    let calm = Exp::new(1.0 / (8.0 * 60.0)).expect("positive rate");
    let mut segs = vec![StressSegment {
        start_min: 0.0,
        level: StressLevel::NotAtAll,
    }];
    let mut t = 0.0;
    loop {
        t += (calm.sample(rng) as f64).max(60.0).round();
        if t >= WEEK_MIN {
            break;
        }
        let level = StressLevel::from_index(rng.random_range(1..5)).expect("level index");
        segs.push(StressSegment {
            start_min: t,
            level,
        });
        t += (rng.random_range(60.0..240.0f64)).round();
        if t >= WEEK_MIN {
            break;
        }
        segs.push(StressSegment {
            start_min: t,
            level: StressLevel::NotAtAll,
        });
    }
    segs
}

/// `n` heterogeneous subjects `S01`, `S02`, …, deterministic per seed.
/// Baselines are stratified over 55–85 bpm, so any cohort of two or more
/// spans at least 15 bpm and fourteen span over 25. One subject wears the
/// watch around the clock; the rest take it off for 7–10 hours a night.
pub fn make_cohort(n: usize, seed: u64) -> Vec<SubjectProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hr_slots: Vec<f64> = (0..n)
        .map(|i| 55.0 + 30.0 * (i as f64 + rng.random::<f64>()) / n as f64)
        .collect();
    if n > 1 {
        // pin the extremes so the spread never collapses
        hr_slots[0] = 55.0;
        hr_slots[n - 1] = 85.0;
    }
    hr_slots.shuffle(&mut rng);
    let heavy = rng.random_range(0..n.max(1));
    (0..n)
        .map(|i| {
            let high_volume = i == heavy;
            let off_len = rng.random_range(7.0..10.0f64);
            let off_start = rng.random_range(21.0..24.0f64);
            let mut p = SubjectProfile::simple(
                format!("S{:02}", i + 1),
                hr_slots[i].round(),
                rng.random_range(20.0..70.0f64).round(),
            );
            p.stress_schedule = weekly_schedule(&mut rng);
            p.schedule_period_min = Some(WEEK_MIN);
            p.stress_effect = StressEffect::default();
            p.adherence_prob = if high_volume {
                0.95
            } else {
                rng.random_range(0.5..0.95)
            };
            p.response_delay = ResponseDelay::Exponential {
                mean: rng.random_range(2.0..8.0f64),
            };
            p.label_noise_prob = rng.random_range(0.0..0.1);
            p.high_volume = high_volume;
            if !high_volume {
                p.daily_off = Some(DailyOff {
                    start_hour: off_start,
                    end_hour: (off_start + off_len) % 24.0,
                });
            }
            let gap_start = rng.random_range(8.0..18.0f64).floor() * 60.0;
            p.dropouts.push(Dropout {
                start_min: gap_start,
                end_min: gap_start + rng.random_range(1..4) as f64 * 60.0,
                kind: DropoutKind::Buffered,
            });
            p
        })
        .collect()
}
