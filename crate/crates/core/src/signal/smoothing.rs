use super::SignalError;

/// Centered moving average. Near the edges the window shrinks symmetrically
/// so every output sample is the mean of an odd, centered neighbourhood.
pub fn moving_average(signal: &[f64], window_len: usize) -> Result<Vec<f64>, SignalError> {
    if window_len == 0 || window_len % 2 == 0 {
        return Err(SignalError::BadWindow(window_len));
    }
    if window_len > signal.len() {
        return Err(SignalError::TooShort {
            len: signal.len(),
            min: window_len,
        });
    }
    let n = signal.len();
    let half = window_len / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &v in signal {
        acc += v;
        prefix.push(acc);
    }
    Ok((0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            if h == 0 {
                return signal[i];
            }
            (prefix[i + h + 1] - prefix[i - h]) / (2 * h + 1) as f64
        })
        .collect())
}
