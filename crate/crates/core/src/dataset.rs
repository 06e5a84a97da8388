//! Feature-row and labeled-row CSV files.
//!
//! Feature rows:
//! `subject,start_time_ms,bpm,ibi,sdnn,sdsd,rmssd,pnn20,pnn50,mad,sd1,sd2,s,sd_ratio,br,flags`
//!
//! Labeled rows append `stress_level,activity` (level as 0–4).

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::ema::{Activity, StressLevel};
use crate::hrv::{FeatureFlags, FeatureVector, FEATURE_COUNT, FEATURE_NAMES};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub subject_id: String,
    pub timestamp_ms: i64,
    pub features: FeatureVector,
    pub flags: FeatureFlags,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRow {
    pub subject_id: String,
    pub timestamp_ms: i64,
    pub features: FeatureVector,
    pub flags: FeatureFlags,
    pub level: StressLevel,
    pub activity: Activity,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledDataset {
    pub rows: Vec<LabeledRow>,
}

impl LabeledDataset {
    pub fn subjects(&self) -> Vec<String> {
        let mut s: Vec<String> = self.rows.iter().map(|r| r.subject_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }
}

pub fn feature_header() -> String {
    format!("subject,start_time_ms,{},flags", FEATURE_NAMES.join(","))
}

pub fn labeled_header() -> String {
    format!("{},stress_level,activity", feature_header())
}

fn write_features(
    line: &mut String,
    subject: &str,
    ts: i64,
    f: &FeatureVector,
    flags: &FeatureFlags,
) {
    use std::fmt::Write as _;
    let _ = write!(line, "{subject},{ts}");
    for v in f.to_array() {
        let _ = write!(line, ",{v}");
    }
    let _ = write!(line, ",{flags}");
}

pub fn format_feature_row(r: &FeatureRow) -> String {
    let mut s = String::new();
    write_features(&mut s, &r.subject_id, r.timestamp_ms, &r.features, &r.flags);
    s
}

pub fn format_labeled_row(r: &LabeledRow) -> String {
    let mut s = String::new();
    write_features(&mut s, &r.subject_id, r.timestamp_ms, &r.features, &r.flags);
    s.push_str(&format!(",{},{}", r.level.index(), r.activity));
    s
}

pub fn write_feature_rows<W: Write>(mut w: W, rows: &[FeatureRow]) -> io::Result<()> {
    writeln!(w, "{}", feature_header())?;
    for r in rows {
        writeln!(w, "{}", format_feature_row(r))?;
    }
    Ok(())
}

pub fn write_labeled_rows<W: Write>(mut w: W, rows: &[LabeledRow]) -> io::Result<()> {
    writeln!(w, "{}", labeled_header())?;
    for r in rows {
        writeln!(w, "{}", format_labeled_row(r))?;
    }
    Ok(())
}

struct Columns {
    subject: usize,
    ts: usize,
    features: [usize; FEATURE_COUNT],
    flags: Option<usize>,
    level: Option<usize>,
    activity: Option<usize>,
}

fn columns(headers: &csv::StringRecord) -> Result<Columns, DatasetError> {
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let need = |name: &str| find(name).ok_or_else(|| DatasetError::MissingColumn(name.to_string()));
    let mut features = [0; FEATURE_COUNT];
    for (slot, name) in features.iter_mut().zip(FEATURE_NAMES) {
        *slot = need(name)?;
    }
    Ok(Columns {
        subject: need("subject")?,
        ts: need("start_time_ms")?,
        features,
        flags: find("flags"),
        level: find("stress_level"),
        activity: find("activity"),
    })
}

fn parse_common(
    rec: &csv::StringRecord,
    cols: &Columns,
    row: usize,
) -> Result<FeatureRow, DatasetError> {
    let bad = |msg: String| DatasetError::Row { row, msg };
    let get = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
    let mut a = [0.0; FEATURE_COUNT];
    for (v, &c) in a.iter_mut().zip(&cols.features) {
        *v = get(c)
            .parse()
            .map_err(|e| bad(format!("feature column {c}: {e}")))?;
    }
    Ok(FeatureRow {
        subject_id: get(cols.subject).to_string(),
        timestamp_ms: get(cols.ts)
            .parse()
            .map_err(|e| bad(format!("start_time_ms: {e}")))?,
        features: FeatureVector::from_array(a),
        flags: match cols.flags {
            Some(c) => get(c).parse().map_err(bad)?,
            None => FeatureFlags::default(),
        },
    })
}

pub fn read_feature_rows<R: Read>(r: R) -> Result<Vec<FeatureRow>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let cols = columns(rdr.headers()?)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        out.push(parse_common(&rec?, &cols, i + 1)?);
    }
    Ok(out)
}

pub fn read_labeled_rows<R: Read>(r: R) -> Result<LabeledDataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let cols = columns(rdr.headers()?)?;
    let level_col = cols
        .level
        .ok_or_else(|| DatasetError::MissingColumn("stress_level".into()))?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let base = parse_common(&rec, &cols, row)?;
        let level = rec
            .get(level_col)
            .unwrap_or("")
            .parse::<StressLevel>()
            .map_err(|e| DatasetError::Row {
                row,
                msg: e.to_string(),
            })?;
        let activity = match cols
            .activity
            .and_then(|c| rec.get(c))
            .filter(|s| !s.is_empty())
        {
            Some(s) => s.parse::<Activity>().map_err(|e| DatasetError::Row {
                row,
                msg: e.to_string(),
            })?,
            None => Activity::Other,
        };
        rows.push(LabeledRow {
            subject_id: base.subject_id,
            timestamp_ms: base.timestamp_ms,
            features: base.features,
            flags: base.flags,
            level,
            activity,
        });
    }
    Ok(LabeledDataset { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(i: usize) -> LabeledRow {
        let mut a = [0.0; FEATURE_COUNT];
        for (j, v) in a.iter_mut().enumerate() {
            *v = (i * 13 + j) as f64 / 7.0;
        }
        LabeledRow {
            subject_id: format!("S{i:02}"),
            timestamp_ms: 1_700_000_000_000 + i as i64,
            features: FeatureVector::from_array(a),
            flags: FeatureFlags {
                br_degenerate: i % 2 == 0,
                ..Default::default()
            },
            level: StressLevel::from_index((i % 5) as u8).unwrap(),
            activity: Activity::ALL[i % 6],
        }
    }

    #[test]
    fn labeled_rows_round_trip_exactly() {
        let rows: Vec<LabeledRow> = (0..12).map(row).collect();
        let mut buf = Vec::new();
        write_labeled_rows(&mut buf, &rows).unwrap();
        let back = read_labeled_rows(buf.as_slice()).unwrap();
        assert_eq!(back.rows, rows);
        assert_eq!(back.subjects().len(), 12);
    }

    #[test]
    fn header_layout() {
        assert_eq!(
            feature_header(),
            "subject,start_time_ms,bpm,ibi,sdnn,sdsd,rmssd,pnn20,pnn50,mad,sd1,sd2,s,sd_ratio,br,flags"
        );
    }

    #[test]
    fn missing_level_column() {
        let mut buf = Vec::new();
        let r = row(1);
        write_feature_rows(
            &mut buf,
            &[FeatureRow {
                subject_id: r.subject_id,
                timestamp_ms: r.timestamp_ms,
                features: r.features,
                flags: r.flags,
            }],
        )
        .unwrap();
        assert_eq!(read_feature_rows(buf.as_slice()).unwrap().len(), 1);
        assert!(matches!(
            read_labeled_rows(buf.as_slice()),
            Err(DatasetError::MissingColumn(_))
        ));
    }
}
