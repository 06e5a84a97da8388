use serde::{Deserialize, Serialize};

/// Shortest admissible beat spacing: one beat at 210 bpm.
pub const REFRACTORY_MS: f64 = 60_000.0 / 210.0;

/// Beat locations within one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakList {
    pub indices: Vec<usize>,
    pub sample_rate_hz: f64,
}

impl PeakList {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn times_ms(&self) -> Vec<f64> {
        self.indices
            .iter()
            .map(|&i| i as f64 * 1000.0 / self.sample_rate_hz)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakDetectorConfig {
    /// Threshold = rolling mean + `alpha` x rolling std.
    pub alpha: f64,
    pub window_s: f64,
    pub refractory_ms: f64,
    /// Samples this close to either end are never reported.
    pub edge_s: f64,
}

impl Default for PeakDetectorConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            window_s: 2.0,
            refractory_ms: REFRACTORY_MS,
            edge_s: 1.0,
        }
    }
}

pub fn detect_peaks(signal: &[f64], sample_rate_hz: f64) -> PeakList {
    detect_peaks_with(signal, sample_rate_hz, &PeakDetectorConfig::default())
}

/// Local maxima above an adaptive threshold, thinned by a refractory period
/// in which the taller of two competing candidates survives.
pub fn detect_peaks_with(
    signal: &[f64],
    sample_rate_hz: f64,
    cfg: &PeakDetectorConfig,
) -> PeakList {
    let n = signal.len();
    let empty = PeakList {
        indices: Vec::new(),
        sample_rate_hz,
    };
    if n < 3 {
        return empty;
    }
    let edge = (cfg.edge_s * sample_rate_hz).round() as usize;
    let half = ((cfg.window_s * sample_rate_hz).round() as usize / 2).max(1);
    let refractory = cfg.refractory_ms * sample_rate_hz / 1000.0;

    let lo_bound = edge.max(1);
    let hi_bound = n.saturating_sub(edge.max(1));
    let mut candidates = Vec::new();
    for i in lo_bound..hi_bound {
        let x = signal[i];
        if !(x > signal[i - 1] && x >= signal[i + 1]) {
            continue;
        }
        let (lo, hi) = (i.saturating_sub(half), (i + half + 1).min(n));
        let win = &signal[lo..hi];
        let m = win.iter().sum::<f64>() / win.len() as f64;
        let var = win.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / win.len() as f64;
        if x > m + cfg.alpha * var.sqrt() {
            candidates.push(i);
        }
    }

    candidates.sort_by(|&a, &b| signal[b].total_cmp(&signal[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        // kept stays sorted so only the two neighbours need checking
        let pos = kept.partition_point(|&k| k < c);
        let clear_left = pos == 0 || (c - kept[pos - 1]) as f64 >= refractory;
        let clear_right = pos == kept.len() || (kept[pos] - c) as f64 >= refractory;
        if clear_left && clear_right {
            kept.insert(pos, c);
        }
    }
    PeakList {
        indices: kept,
        sample_rate_hz,
    }
}
