//! Offline raw-window files.
//!
//! ```text
//! #meta subject=S01 start_time_ms=1700000000000 sample_rate_hz=20
//! t_ms,ppg,ax,ay,az
//! 0,0.132,0.01,0.98,0.02
//! 50,0.140,0.01,0.97,0.02
//! ```
//!
//! A file may hold several windows; every `#meta ` line starts a new one.
//! Accelerometer columns are optional but all-or-nothing per window.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use thiserror::Error;

use super::RawWindow;

#[derive(Debug, Error)]
pub enum WindowCsvError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn parse_err(line: usize, msg: impl Into<String>) -> WindowCsvError {
    WindowCsvError::Parse {
        line,
        msg: msg.into(),
    }
}

struct Partial {
    window: RawWindow,
    has_motion: Option<bool>,
}

pub fn read_windows<R: BufRead>(reader: R) -> Result<Vec<RawWindow>, WindowCsvError> {
    let mut out = Vec::new();
    let mut cur: Option<Partial> = None;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix("#meta ") {
            if let Some(p) = cur.take() {
                out.push(p.window);
            }
            cur = Some(Partial {
                window: parse_meta(meta, lineno)?,
                has_motion: None,
            });
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let Some(p) = cur.as_mut() else {
            return Err(parse_err(lineno, "data before the first #meta line"));
        };
        if line.starts_with("t_ms") {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            match cols.as_slice() {
                ["t_ms", "ppg"] => p.has_motion = Some(false),
                ["t_ms", "ppg", "ax", "ay", "az"] => p.has_motion = Some(true),
                _ => return Err(parse_err(lineno, format!("unexpected header `{line}`"))),
            }
            continue;
        }
        let fields = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| parse_err(lineno, e.to_string()))?;
        let with_motion = match (fields.len(), p.has_motion) {
            (2, Some(false) | None) => false,
            (5, Some(true) | None) => true,
            (n, _) => {
                return Err(parse_err(
                    lineno,
                    format!("expected 2 or 5 columns, got {n}"),
                ))
            }
        };
        p.has_motion = Some(with_motion);
        p.window.ppg.push(fields[1]);
        if with_motion {
            p.window
                .motion
                .get_or_insert_with(Vec::new)
                .push([fields[2], fields[3], fields[4]]);
        }
    }
    if let Some(p) = cur {
        out.push(p.window);
    }
    Ok(out)
}

fn parse_meta(meta: &str, line: usize) -> Result<RawWindow, WindowCsvError> {
    let mut subject = None;
    let mut start = None;
    let mut rate = None;
    for kv in meta.split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| parse_err(line, format!("bad meta field `{kv}`")))?;
        match k {
            "subject" => subject = Some(v.to_string()),
            "start_time_ms" => {
                start = Some(
                    v.parse::<i64>()
                        .map_err(|e| parse_err(line, e.to_string()))?,
                )
            }
            "sample_rate_hz" => {
                rate = Some(
                    v.parse::<f64>()
                        .map_err(|e| parse_err(line, e.to_string()))?,
                )
            }
            _ => {}
        }
    }
    Ok(RawWindow {
        subject_id: subject.ok_or_else(|| parse_err(line, "meta is missing subject"))?,
        start_time_ms: start.ok_or_else(|| parse_err(line, "meta is missing start_time_ms"))?,
        sample_rate_hz: rate.ok_or_else(|| parse_err(line, "meta is missing sample_rate_hz"))?,
        ppg: Vec::new(),
        motion: None,
    })
}

pub fn write_window<W: Write>(mut w: W, window: &RawWindow) -> io::Result<()> {
    let mut buf = String::with_capacity(window.ppg.len() * 16);
    let _ = writeln!(
        buf,
        "#meta subject={} start_time_ms={} sample_rate_hz={}",
        window.subject_id, window.start_time_ms, window.sample_rate_hz
    );
    let motion = window
        .motion
        .as_ref()
        .filter(|m| m.len() == window.ppg.len());
    buf.push_str(if motion.is_some() {
        "t_ms,ppg,ax,ay,az\n"
    } else {
        "t_ms,ppg\n"
    });
    for (i, v) in window.ppg.iter().enumerate() {
        let t = (i as f64 * 1000.0 / window.sample_rate_hz).round() as i64;
        let _ = write!(buf, "{t},{v}");
        if let Some(m) = motion {
            let [ax, ay, az] = m[i];
            let _ = write!(buf, ",{ax},{ay},{az}");
        }
        buf.push('\n');
    }
    w.write_all(buf.as_bytes())
}
