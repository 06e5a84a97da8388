use std::f64::consts::PI;

use proptest::prelude::*;
use stressmon_core::pipeline::{clean_signal, PipelineConfig};
use stressmon_core::signal::{
    apply_filter, design_bandpass, detect_peaks, moving_average, synthesize_ppg, FilterSpec,
    HrProfile, PpgSynthConfig,
};

fn valid_spec() -> impl Strategy<Value = FilterSpec> {
    (1usize..=6, 5.0f64..200.0, 0.01f64..0.8, 0.05f64..0.95).prop_map(|(order, fs, a, b)| {
        let nyq = fs / 2.0;
        let lo = a * nyq * 0.9;
        let hi = lo + b * (nyq * 0.98 - lo);
        FilterSpec {
            order,
            low_cut_hz: lo,
            high_cut_hz: hi.max(lo * 1.01),
            sample_rate_hz: fs,
        }
    })
}

/// Analog Butterworth band-pass magnitude at the prewarped frequency.
fn analog_magnitude(spec: &FilterSpec, f: f64) -> f64 {
    let fs = spec.sample_rate_hz;
    let warp = |x: f64| 2.0 * fs * (PI * x / fs).tan();
    let (w1, w2, w) = (warp(spec.low_cut_hz), warp(spec.high_cut_hz), warp(f));
    let q = (w * w - w1 * w2) / (w * (w2 - w1));
    1.0 / (1.0 + q.powi(2 * spec.order as i32)).sqrt()
}

fn signal(len: usize, seed: u64) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let t = i as f64 / 20.0;
            (2.0 * PI * 1.3 * t + seed as f64).sin()
                + 0.3 * (2.0 * PI * 0.2 * t).cos()
                + ((i * 7919 + seed as usize) % 13) as f64 / 13.0
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn designs_are_stable(spec in valid_spec()) {
        let c = design_bandpass(&spec).unwrap();
        prop_assert_eq!(c.sections.len(), spec.order);
        for p in c.poles() {
            prop_assert!(p.norm() < 1.0, "{:?}", p);
        }
    }

    #[test]
    fn magnitude_tracks_analog_prototype(spec in valid_spec(), u in 0.01f64..0.99) {
        let c = design_bandpass(&spec).unwrap();
        let f = u * spec.sample_rate_hz / 2.0;
        let want = analog_magnitude(&spec, f);
        prop_assert!((c.magnitude(f) - want).abs() < 1e-6 * want.max(1e-3), "{} vs {}", c.magnitude(f), want);
    }

    #[test]
    fn filtering_is_linear(seed in 0u64..1000, a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let c = design_bandpass(&FilterSpec::default()).unwrap();
        let x = signal(600, seed);
        let y = signal(600, seed + 1);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let fx = apply_filter(&c, &x).unwrap();
        let fy = apply_filter(&c, &y).unwrap();
        let fm = apply_filter(&c, &mix).unwrap();
        let scale = fm.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
        for i in 0..fm.len() {
            let want = a * fx[i] + b * fy[i];
            prop_assert!((fm[i] - want).abs() <= 1e-9 * scale.max(want.abs()));
        }
    }

    #[test]
    fn peaks_ignore_positive_scaling(seed in 0u64..500, c in 1e-3f64..1e3) {
        let mut cfg = PpgSynthConfig::new(HrProfile::constant(50.0 + (seed % 120) as f64).unwrap(), seed);
        cfg.noise_rms = 0.05;
        cfg.hrv_jitter_ms = 20.0;
        let w = synthesize_ppg(&cfg).unwrap().window;
        let x = clean_signal(&w, &PipelineConfig::default()).unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        prop_assert_eq!(detect_peaks(&x, 20.0), detect_peaks(&scaled, 20.0));
    }

    #[test]
    fn stages_keep_length(len in 12usize..3000, seed in 0u64..100) {
        let x = signal(len, seed);
        let c = design_bandpass(&FilterSpec::default()).unwrap();
        let f = apply_filter(&c, &x).unwrap();
        prop_assert_eq!(f.len(), len);
        prop_assert_eq!(moving_average(&f, 5).unwrap().len(), len);
    }
}

#[test]
fn zero_phase_pulse_train() {
    let mut cfg = PpgSynthConfig::new(HrProfile::constant(72.0).unwrap(), 4);
    cfg.drift_amp = 0.0;
    let x = synthesize_ppg(&cfg).unwrap().window.ppg;
    let c = design_bandpass(&FilterSpec::default()).unwrap();
    let y = apply_filter(&c, &x).unwrap();
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let xc: Vec<f64> = x.iter().map(|v| v - m).collect();
    let lag = (-10i64..=10)
        .max_by(|&a, &b| {
            let corr = |l: i64| -> f64 {
                (100..x.len() as i64 - 100)
                    .map(|i| xc[i as usize] * y[(i + l) as usize])
                    .sum()
            };
            corr(a).total_cmp(&corr(b))
        })
        .unwrap();
    assert_eq!(lag, 0);
}

#[test]
fn sinusoid_attenuation() {
    let c = design_bandpass(&FilterSpec::default()).unwrap();
    let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    let tone = |f: f64| -> Vec<f64> {
        (0..2400)
            .map(|i| (2.0 * PI * f * i as f64 / 20.0).sin())
            .collect()
    };
    let low = tone(0.1);
    assert!(rms(&apply_filter(&c, &low).unwrap()) <= 0.1 * rms(&low));
    let mid = tone(1.5);
    let out = apply_filter(&c, &mid).unwrap();
    assert!(rms(&out[100..2300]) >= 0.95 * rms(&mid[100..2300]));
}
