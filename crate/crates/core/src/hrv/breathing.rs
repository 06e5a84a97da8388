//! Breathing rate from respiratory sinus arrhythmia in the NN tachogram.

use rustfft::{num_complex::Complex64, FftPlanner};

use super::{HrvError, NnSeries};

/// Respiratory search band (6–24 breaths/min).
pub const BR_BAND_HZ: (f64, f64) = (0.1, 0.4);
const RESAMPLE_HZ: f64 = 4.0;
const MIN_SPAN_MS: f64 = 30_000.0;
const MIN_FFT_LEN: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BreathingEstimate {
    pub br_per_min: f64,
    /// Flat tachogram, or the spectral maximum lies outside the band or on
    /// its edge.
    pub degenerate: bool,
}

pub fn breathing_rate(nn: &NnSeries) -> Result<BreathingEstimate, HrvError> {
    let t = &nn.beat_times_ms;
    let y = &nn.intervals_ms;
    if t.len() < 4 {
        return Err(HrvError::InsufficientData(
            "fewer than 4 beats in tachogram".into(),
        ));
    }
    let span = t[t.len() - 1] - t[0];
    if span < MIN_SPAN_MS {
        return Err(HrvError::InsufficientData(format!(
            "tachogram spans {:.1} s, need 30 s",
            span / 1000.0
        )));
    }

    let spline = NaturalSpline::new(t, y);
    let step = 1000.0 / RESAMPLE_HZ;
    let n = (span / step).floor() as usize + 1;
    let mut grid: Vec<f64> = (0..n)
        .map(|i| spline.eval(t[0] + i as f64 * step))
        .collect();
    let m = grid.iter().sum::<f64>() / n as f64;
    for (i, v) in grid.iter_mut().enumerate() {
        let hann = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos();
        *v = (*v - m) * hann;
    }
    let energy = grid.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if energy.sqrt() < 1e-6 {
        return Ok(BreathingEstimate {
            br_per_min: 0.0,
            degenerate: true,
        });
    }

    let len = n.next_power_of_two().max(MIN_FFT_LEN);
    let mut buf: Vec<Complex64> = grid.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(len, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);

    let df = RESAMPLE_HZ / len as f64;
    let lo = (BR_BAND_HZ.0 / df).ceil() as usize;
    let hi = (BR_BAND_HZ.1 / df).floor() as usize;
    let best = (lo..=hi)
        .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()).then(b.cmp(&a)))
        .expect("non-empty band");
    // the dominant oscillation of the whole tachogram lies outside the band
    let out_of_band = (1..lo)
        .chain(hi + 1..len / 2)
        .map(|k| buf[k].norm())
        .fold(0.0, f64::max);
    Ok(BreathingEstimate {
        br_per_min: 60.0 * best as f64 * df,
        degenerate: best == lo || best == hi || out_of_band > buf[best].norm(),
    })
}

/// Natural cubic spline through `(x, y)`; only evaluated inside the knots.
struct NaturalSpline<'a> {
    x: &'a [f64],
    y: &'a [f64],
    m: Vec<f64>,
}

impl<'a> NaturalSpline<'a> {
    fn new(x: &'a [f64], y: &'a [f64]) -> Self {
        let n = x.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // tridiagonal system for interior second derivatives
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 1..n - 1 {
                let h0 = x[i] - x[i - 1];
                let h1 = x[i + 1] - x[i];
                diag[i - 1] = 2.0 * (h0 + h1);
                upper[i - 1] = h1;
                rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
            }
            for i in 1..k {
                let lower = x[i + 1] - x[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Self { x, y, m }
    }

    fn eval(&self, t: f64) -> f64 {
        let (x, y, m) = (self.x, self.y, &self.m);
        let i = x.partition_point(|&v| v <= t).clamp(1, x.len() - 1) - 1;
        let h = x[i + 1] - x[i];
        let a = (x[i + 1] - t) / h;
        let b = (t - x[i]) / h;
        a * y[i]
            + b * y[i + 1]
            + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h * h / 6.0
    }
}
