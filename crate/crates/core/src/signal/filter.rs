//! Digital Butterworth band-pass design (analog prototype, low-pass to
//! band-pass transform, prewarped bilinear transform) realized as a cascade
//! of second-order sections, and forward-backward application.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::SignalError;

/// Band-pass Butterworth parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    /// Analog prototype order; the digital band-pass has twice this order.
    pub order: usize,
    pub low_cut_hz: f64,
    pub high_cut_hz: f64,
    pub sample_rate_hz: f64,
}

impl Default for FilterSpec {
    /// Order 3, 0.7–3.5 Hz (42–210 bpm) at the watch's 20 Hz rate.
    fn default() -> Self {
        Self {
            order: 3,
            low_cut_hz: 0.7,
            high_cut_hz: 3.5,
            sample_rate_hz: 20.0,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<(), SignalError> {
        let FilterSpec {
            order,
            low_cut_hz: lo,
            high_cut_hz: hi,
            sample_rate_hz: fs,
        } = *self;
        if order == 0 {
            return Err(SignalError::Design("order must be positive".into()));
        }
        if !(lo.is_finite() && hi.is_finite() && fs.is_finite()) {
            return Err(SignalError::Design("non-finite frequency".into()));
        }
        if !(0.0 < lo && lo < hi) {
            return Err(SignalError::Design(format!(
                "cutoffs must satisfy 0 < low < high, got {lo} / {hi}"
            )));
        }
        if hi >= fs / 2.0 {
            return Err(SignalError::Design(format!(
                "high cutoff {hi} Hz is not below Nyquist ({} Hz)",
                fs / 2.0
            )));
        }
        Ok(())
    }
}

/// One biquad: `b` is the numerator, `a` the denominator with `a[0] == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Section {
    /// Poles of `z^2 + a1 z + a2` lie strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        let [_, a1, a2] = self.a;
        a2.abs() < 1.0 && a1.abs() < 1.0 + a2
    }

    pub fn poles(&self) -> [Complex64; 2] {
        let [_, a1, a2] = self.a;
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }

    fn response(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let zi2 = zi * zi;
        (self.b[0] + self.b[1] * zi + self.b[2] * zi2)
            / (self.a[0] + self.a[1] * zi + self.a[2] * zi2)
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }
}

/// Cascade of second-order sections with an overall gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCoefficients {
    pub sections: Vec<Section>,
    pub gain: f64,
    pub sample_rate_hz: f64,
}

impl FilterCoefficients {
    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate_hz;
        let z = Complex64::from_polar(1.0, w);
        self.sections
            .iter()
            .fold(Complex64::new(self.gain, 0.0), |acc, s| acc * s.response(z))
    }

    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    pub fn magnitude_db(&self, freq_hz: f64) -> f64 {
        20.0 * self.magnitude(freq_hz).log10()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(|s| s.poles()).collect()
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(Section::is_stable)
    }

    /// Sections with the overall gain folded into the first numerator.
    fn scaled_sections(&self) -> Vec<Section> {
        let mut out = self.sections.clone();
        if let Some(first) = out.first_mut() {
            for b in &mut first.b {
                *b *= self.gain;
            }
        }
        out
    }
}

pub fn design_bandpass(spec: &FilterSpec) -> Result<FilterCoefficients, SignalError> {
    spec.validate()?;
    let n = spec.order;
    let fs = spec.sample_rate_hz;
    let k = 2.0 * fs;

    // prewarped analog band edges (rad/s)
    let w_lo = k * (PI * spec.low_cut_hz / fs).tan();
    let w_hi = k * (PI * spec.high_cut_hz / fs).tan();
    let bw = w_hi - w_lo;
    let w0_sq = w_lo * w_hi;

    let mut digital_poles = Vec::with_capacity(2 * n);
    for i in 0..n {
        let theta = PI * (2 * i + n + 1) as f64 / (2 * n) as f64;
        let p = Complex64::from_polar(1.0, theta);
        let half = p * bw / 2.0;
        let disc = (half * half - w0_sq).sqrt();
        for s in [half + disc, half - disc] {
            digital_poles.push((k + s) / (k - s));
        }
    }

    let sections = pair_poles(digital_poles)?
        .into_iter()
        .map(|(a1, a2)| Section {
            b: [1.0, 0.0, -1.0],
            a: [1.0, a1, a2],
        })
        .collect::<Vec<_>>();

    let mut coeffs = FilterCoefficients {
        sections,
        gain: 1.0,
        sample_rate_hz: fs,
    };
    // the analog band-pass has unit gain at its geometric centre; the
    // bilinear map sends that point to this digital frequency
    let centre_hz = (w0_sq.sqrt() / k).atan() * fs / PI;
    coeffs.gain = 1.0 / coeffs.magnitude(centre_hz);

    if let Some(i) = coeffs.sections.iter().position(|s| !s.is_stable()) {
        return Err(SignalError::Unstable(i));
    }
    Ok(coeffs)
}

/// Groups poles into real-coefficient quadratics `(a1, a2)`.
fn pair_poles(mut poles: Vec<Complex64>) -> Result<Vec<(f64, f64)>, SignalError> {
    const EPS: f64 = 1e-12;
    let mut out = Vec::new();
    let mut reals: Vec<f64> = poles
        .iter()
        .filter(|p| p.im.abs() <= EPS)
        .map(|p| p.re)
        .collect();
    poles.retain(|p| p.im > EPS);
    for p in poles {
        out.push((-2.0 * p.re, p.norm_sqr()));
    }
    if reals.len() % 2 != 0 {
        return Err(SignalError::Design("odd number of real poles".into()));
    }
    reals.sort_by(f64::total_cmp);
    for pair in reals.chunks(2) {
        out.push((-(pair[0] + pair[1]), pair[0] * pair[1]));
    }
    Ok(out)
}

/// Zero-phase (forward then backward) application with odd-extension
/// padding and steady-state initial conditions.
pub fn apply_filter(coeffs: &FilterCoefficients, signal: &[f64]) -> Result<Vec<f64>, SignalError> {
    if let Some(i) = coeffs.sections.iter().position(|s| !s.is_stable()) {
        return Err(SignalError::Unstable(i));
    }
    let n_sec = coeffs.sections.len().max(1);
    let min_len = 3 * n_sec;
    if signal.len() < min_len {
        return Err(SignalError::TooShort {
            len: signal.len(),
            min: min_len,
        });
    }
    let sections = coeffs.scaled_sections();
    let zi = steady_state(&sections);

    let n = signal.len();
    let pad = (3 * (2 * n_sec + 1)).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    let (first, last) = (signal[0], signal[n - 1]);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - signal[i]));
    ext.extend_from_slice(signal);
    ext.extend((1..=pad).map(|i| 2.0 * last - signal[n - 1 - i]));

    let x0 = ext[0];
    run_cascade(&sections, &zi, x0, &mut ext);
    ext.reverse();
    let x0 = ext[0];
    run_cascade(&sections, &zi, x0, &mut ext);
    ext.reverse();

    Ok(ext[pad..pad + n].to_vec())
}

/// Per-section DF-II-transposed state for a unit step already passed
/// through the preceding sections.
fn steady_state(sections: &[Section]) -> Vec<[f64; 2]> {
    let mut scale = 1.0;
    sections
        .iter()
        .map(|s| {
            let g = s.dc_gain();
            let s2 = s.b[2] - s.a[2] * g;
            let s1 = s.b[1] - s.a[1] * g + s2;
            let out = [s1 * scale, s2 * scale];
            scale *= g;
            out
        })
        .collect()
}

fn run_cascade(sections: &[Section], zi: &[[f64; 2]], x0: f64, data: &mut [f64]) {
    for (s, z) in sections.iter().zip(zi) {
        let (mut s1, mut s2) = (z[0] * x0, z[1] * x0);
        let [b0, b1, b2] = s.b;
        let [_, a1, a2] = s.a;
        for v in data.iter_mut() {
            let x = *v;
            let y = b0 * x + s1;
            s1 = b1 * x - a1 * y + s2;
            s2 = b2 * x - a2 * y;
            *v = y;
        }
    }
}
