//! Line-delimited cohort file: one JSON object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::cohort::{CohortRecord, IcdCode};
use crate::error::{Error, Result};
use crate::signal::Signal;
use crate::synth::SIGNAL_QUANTUM;

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";
/// Fraction of malformed lines above which loading fails outright.
pub const MAX_MALFORMED_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignalEncoding {
    /// Little-endian i16 counts of 2^-10.
    #[serde(rename = "i16le-q10")]
    I16Q10,
    #[serde(rename = "f32le")]
    F32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIcd {
    code: String,
    version: u8,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    record_id: u64,
    subject_id: Option<u64>,
    admission_id: Option<u64>,
    timestamp: Option<String>,
    channels: usize,
    samples: usize,
    encoding: SignalEncoding,
    signal: String,
    #[serde(default)]
    icd: Vec<RawIcd>,
    #[serde(default)]
    report: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<usize>>,
}

fn on_grid(signal: &Signal) -> bool {
    signal.data.iter().all(|&v| {
        let q = v / SIGNAL_QUANTUM;
        q == q.round() && q.abs() <= i16::MAX as f32
    })
}

fn encode_signal(signal: &Signal) -> (SignalEncoding, String) {
    if on_grid(signal) {
        let mut bytes = Vec::with_capacity(signal.data.len() * 2);
        for &v in &signal.data {
            bytes.extend_from_slice(&((v / SIGNAL_QUANTUM) as i16).to_le_bytes());
        }
        (SignalEncoding::I16Q10, B64.encode(bytes))
    } else {
        let mut bytes = Vec::with_capacity(signal.data.len() * 4);
        for &v in &signal.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        (SignalEncoding::F32, B64.encode(bytes))
    }
}

fn decode_signal(raw: &RawRecord) -> std::result::Result<Signal, String> {
    let bytes = B64.decode(raw.signal.as_bytes()).map_err(|e| format!("signal: {e}"))?;
    let n = raw.channels * raw.samples;
    let width = match raw.encoding {
        SignalEncoding::I16Q10 => 2,
        SignalEncoding::F32 => 4,
    };
    if n == 0 || bytes.len() != n * width {
        return Err(format!(
            "signal: {} bytes for {}x{} samples",
            bytes.len(),
            raw.channels,
            raw.samples
        ));
    }
    let data: Vec<f32> = match raw.encoding {
        SignalEncoding::I16Q10 => bytes
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 * SIGNAL_QUANTUM)
            .collect(),
        SignalEncoding::F32 => bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect(),
    };
    if data.iter().any(|v| !v.is_finite()) {
        return Err("signal: non-finite sample".into());
    }
    Ok(Signal {
        channels: raw.channels,
        samples: raw.samples,
        data,
    })
}

pub fn record_to_line(r: &CohortRecord) -> Result<String> {
    let (encoding, signal) = encode_signal(&r.signal);
    let raw = RawRecord {
        record_id: r.record_id,
        subject_id: Some(r.subject_id),
        admission_id: Some(r.admission_id),
        timestamp: Some(r.timestamp.format(TIMESTAMP_FORMAT).to_string()),
        channels: r.signal.channels,
        samples: r.signal.samples,
        encoding,
        signal,
        icd: r
            .icd_codes
            .iter()
            .map(|c| RawIcd {
                code: c.code.clone(),
                version: c.version,
            })
            .collect(),
        report: r.report.clone(),
        labels: r.labels.clone(),
    };
    Ok(serde_json::to_string(&raw)?)
}

#[derive(Debug)]
enum Parsed {
    Record(Box<CohortRecord>),
    MissingMetadata,
}

fn parse_line(line: &str) -> std::result::Result<Parsed, String> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    for c in &raw.icd {
        if c.version != 9 && c.version != 10 {
            return Err(format!("icd version {} for code {}", c.version, c.code));
        }
    }
    let signal = decode_signal(&raw)?;
    let (Some(subject_id), Some(admission_id), Some(ts)) = (raw.subject_id, raw.admission_id, raw.timestamp.as_deref())
    else {
        return Ok(Parsed::MissingMetadata);
    };
    if ts.trim().is_empty() {
        return Ok(Parsed::MissingMetadata);
    }
    let timestamp = NaiveDateTime::parse_from_str(ts, TIMESTAMP_FORMAT).map_err(|e| format!("timestamp {ts:?}: {e}"))?;
    Ok(Parsed::Record(Box::new(CohortRecord {
        record_id: raw.record_id,
        subject_id,
        admission_id,
        timestamp,
        signal,
        icd_codes: raw.icd.into_iter().map(|c| IcdCode::new(c.code, c.version)).collect(),
        report: raw.report,
        labels: raw.labels,
    })))
}

/// Streaming writer; one record per line.
pub struct CohortWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CohortWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(CohortWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
        })
    }

    pub fn write(&mut self, r: &CohortRecord) -> Result<()> {
        let line = record_to_line(r)?;
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn write_cohort(path: &Path, records: &[CohortRecord]) -> Result<()> {
    let mut w = CohortWriter::create(path)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MalformedLine {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCohort {
    pub records: Vec<CohortRecord>,
    /// Well-formed records dropped for missing subject, admission or timestamp.
    pub excluded_missing_metadata: usize,
    pub malformed: Vec<MalformedLine>,
}

/// Parse a cohort file. Blank lines are ignored. Malformed lines are
/// reported with 1-based line numbers; more than 10% malformed is an error.
pub fn load_cohort(path: &Path) -> Result<LoadedCohort> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut excluded = 0;
    let mut malformed = Vec::new();
    let mut total = 0usize;
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        match parse_line(&line) {
            Ok(Parsed::Record(r)) => records.push(*r),
            Ok(Parsed::MissingMetadata) => excluded += 1,
            Err(message) => malformed.push(MalformedLine { line: i + 1, message }),
        }
    }
    if total > 0 && malformed.len() as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        return Err(Error::TooManyMalformed {
            path: path.to_path_buf(),
            malformed: malformed.len(),
            total,
            first_line: malformed[0].line,
        });
    }
    for m in &malformed {
        log::warn!("{}:{}: malformed record: {}", path.display(), m.line, m.message);
    }
    if excluded > 0 {
        log::info!("{}: {excluded} records excluded for missing metadata", path.display());
    }
    Ok(LoadedCohort {
        records,
        excluded_missing_metadata: excluded,
        malformed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn record(id: u64) -> CohortRecord {
        let mut s = Signal::zeros(2, 3);
        s.data = vec![0.5, -1.0, 0.0, 2.0, 0.25, 1.0 / 1024.0];
        CohortRecord {
            record_id: id,
            subject_id: 1,
            admission_id: 10,
            timestamp: NaiveDate::from_ymd_opt(2014, 5, 6).unwrap().and_hms_opt(7, 8, 9).unwrap(),
            signal: s,
            icd_codes: vec![IcdCode::new("427.31", 9)],
            report: "afib noted.".into(),
            labels: Some(vec![0]),
        }
    }

    #[test]
    fn line_roundtrip_both_encodings() {
        let r = record(3);
        let line = record_to_line(&r).unwrap();
        assert!(line.contains("i16le-q10"));
        let Parsed::Record(back) = parse_line(&line).unwrap() else { panic!() };
        assert_eq!(*back, r);
        let mut f = record(4);
        f.signal.data[0] = 0.1;
        let line = record_to_line(&f).unwrap();
        assert!(line.contains("f32le"));
        let Parsed::Record(back) = parse_line(&line).unwrap() else { panic!() };
        assert_eq!(*back, f);
    }

    #[test]
    fn trailing_garbage_rejected() {
        let line = record_to_line(&record(1)).unwrap() + " x";
        assert!(parse_line(&line).is_err());
    }

    #[test]
    fn wrong_signal_length_rejected() {
        let line = record_to_line(&record(1)).unwrap().replace("\"samples\":3", "\"samples\":4");
        assert!(parse_line(&line).unwrap_err().contains("bytes"));
    }

    #[test]
    fn missing_timestamp_is_exclusion() {
        let line = record_to_line(&record(1)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        let mut o = v.as_object().unwrap().clone();
        o.remove("timestamp");
        let line = serde_json::to_string(&o).unwrap();
        assert!(matches!(parse_line(&line), Ok(Parsed::MissingMetadata)));
    }

    #[test]
    fn bad_timestamp_is_malformed() {
        let line = record_to_line(&record(1)).unwrap().replace("2014-05-06T07:08:09", "yesterday");
        assert!(parse_line(&line).is_err());
    }
}
