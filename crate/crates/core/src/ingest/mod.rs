//! Cohort ingestion, ICD→phecode mapping, first-ECG selection and
//! prevalence filtering.

mod format;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::CohortRecord;
use crate::error::{Error, Result};

pub use format::{
    load_cohort, record_to_line, write_cohort, CohortWriter, LoadedCohort, MalformedLine, SignalEncoding,
    MAX_MALFORMED_FRACTION, TIMESTAMP_FORMAT,
};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MappingEntry {
    pub icd_code: String,
    pub icd_version: u8,
    pub phecode: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhecodeMapping {
    entries: Vec<MappingEntry>,
    index: HashMap<(String, u8), usize>,
}

impl PhecodeMapping {
    pub fn new(entries: Vec<MappingEntry>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.icd_version != 9 && e.icd_version != 10 {
                return Err(Error::InvalidInput(format!("{}: icd_version {}", e.icd_code, e.icd_version)));
            }
            if e.phecode.trim().is_empty() {
                return Err(Error::InvalidInput(format!("{}: empty phecode", e.icd_code)));
            }
            if index.insert((e.icd_code.clone(), e.icd_version), i).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate mapping key ({}, {})",
                    e.icd_code, e.icd_version
                )));
            }
        }
        Ok(PhecodeMapping { entries, index })
    }

    pub fn entries(&self) -> &[MappingEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, code: &str, version: u8) -> Option<&MappingEntry> {
        self.index.get(&(code.to_string(), version)).map(|&i| &self.entries[i])
    }

    /// phecode → description (first description seen for the phecode).
    pub fn descriptions(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            out.entry(e.phecode.clone()).or_insert_with(|| e.description.clone());
        }
        out
    }

    /// Header `icd_code,icd_version,phecode,description`.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut entries = Vec::new();
        for (i, row) in rdr.deserialize::<MappingEntry>().enumerate() {
            entries.push(row.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: e.to_string(),
            })?);
        }
        Self::new(entries)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Csv(e)
    }
}

/// Binary record × phecode matrix, stored by column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhenotypeMatrix {
    pub record_ids: Vec<u64>,
    /// Sorted lexicographically.
    pub phecodes: Vec<String>,
    pub columns: Vec<Vec<bool>>,
}

impl PhenotypeMatrix {
    pub fn n_records(&self) -> usize {
        self.record_ids.len()
    }

    pub fn column(&self, phecode: &str) -> Option<&[bool]> {
        self.phecodes
            .binary_search_by(|p| p.as_str().cmp(phecode))
            .ok()
            .map(|j| self.columns[j].as_slice())
    }

    pub fn case_count(&self, j: usize) -> usize {
        self.columns[j].iter().filter(|&&v| v).count()
    }

    pub fn prevalence(&self, j: usize) -> f64 {
        if self.record_ids.is_empty() {
            0.0
        } else {
            self.case_count(j) as f64 / self.n_records() as f64
        }
    }

    /// Keep only rows whose record id is in `ids`, in `ids` order.
    pub fn select_rows(&self, ids: &[u64]) -> Result<PhenotypeMatrix> {
        let pos: HashMap<u64, usize> = self.record_ids.iter().enumerate().map(|(i, &r)| (r, i)).collect();
        let rows: Vec<usize> = ids
            .iter()
            .map(|id| {
                pos.get(id)
                    .copied()
                    .ok_or_else(|| Error::InvalidInput(format!("record {id} not in phenotype matrix")))
            })
            .collect::<Result<_>>()?;
        Ok(PhenotypeMatrix {
            record_ids: ids.to_vec(),
            phecodes: self.phecodes.clone(),
            columns: self.columns.iter().map(|c| rows.iter().map(|&r| c[r]).collect()).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MappingStats {
    /// ICD code occurrences with no mapping row; dropped.
    pub unmapped_codes: usize,
}

/// Record × phecode indicator matrix. Columns are every phecode reached
/// by at least one record, sorted.
pub fn map_to_phecodes(records: &[CohortRecord], mapping: &PhecodeMapping) -> (PhenotypeMatrix, MappingStats) {
    if mapping.is_empty() {
        log::warn!("empty phecode mapping: phenotype matrix will have no columns");
    }
    let per_record: Vec<(BTreeSet<&str>, usize)> = records
        .par_iter()
        .map(|r| {
            let mut set = BTreeSet::new();
            let mut unmapped = 0;
            for c in &r.icd_codes {
                match mapping.lookup(&c.code, c.version) {
                    Some(e) => {
                        set.insert(e.phecode.as_str());
                    }
                    None => unmapped += 1,
                }
            }
            (set, unmapped)
        })
        .collect();
    let phecodes: Vec<String> = per_record
        .iter()
        .flat_map(|(s, _)| s.iter().copied())
        .collect::<BTreeSet<&str>>()
        .into_iter()
        .map(str::to_string)
        .collect();
    let col_of: HashMap<&str, usize> = phecodes.iter().enumerate().map(|(j, p)| (p.as_str(), j)).collect();
    let mut columns = vec![vec![false; records.len()]; phecodes.len()];
    let mut stats = MappingStats::default();
    for (i, (set, unmapped)) in per_record.iter().enumerate() {
        stats.unmapped_codes += unmapped;
        for p in set {
            columns[col_of[p]][i] = true;
        }
    }
    (
        PhenotypeMatrix {
            record_ids: records.iter().map(|r| r.record_id).collect(),
            phecodes,
            columns,
        },
        stats,
    )
}

/// What a phecode's prevalence counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrevalenceUnit {
    /// Rows of the first-ECG matrix, one per admission.
    #[default]
    Admissions,
    /// Distinct subjects with at least one positive row.
    Subjects,
}

impl PrevalenceUnit {
    pub fn as_str(&self) -> &'static str {
        match self {
            PrevalenceUnit::Admissions => "admissions",
            PrevalenceUnit::Subjects => "subjects",
        }
    }

    pub fn parse(s: &str) -> Option<PrevalenceUnit> {
        match s {
            "admissions" => Some(PrevalenceUnit::Admissions),
            "subjects" => Some(PrevalenceUnit::Subjects),
            _ => None,
        }
    }
}

/// Keep phecode columns whose share of distinct subjects (`subject_ids`
/// row-aligned with the matrix) is ≥ `threshold`.
pub fn subject_prevalence_filter(matrix: &PhenotypeMatrix, subject_ids: &[u64], threshold: f64) -> Result<PhenotypeMatrix> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("prevalence threshold {threshold} outside (0, 1)")));
    }
    if subject_ids.len() != matrix.n_records() {
        return Err(Error::InvalidInput("subject ids are not row-aligned with the phenotype matrix".into()));
    }
    let n = subject_ids.iter().collect::<BTreeSet<_>>().len();
    let keep: Vec<usize> = (0..matrix.phecodes.len())
        .filter(|&j| {
            let cases: BTreeSet<u64> = matrix.columns[j]
                .iter()
                .zip(subject_ids)
                .filter(|(v, _)| **v)
                .map(|(_, s)| *s)
                .collect();
            n > 0 && passes(cases.len(), n, threshold)
        })
        .collect();
    Ok(PhenotypeMatrix {
        record_ids: matrix.record_ids.clone(),
        phecodes: keep.iter().map(|&j| matrix.phecodes[j].clone()).collect(),
        columns: keep.iter().map(|&j| matrix.columns[j].clone()).collect(),
    })
}

/// Keep phecode columns with prevalence ≥ `threshold` (inclusive). The
/// denominator is the number of rows in the matrix.
pub fn prevalence_filter(matrix: &PhenotypeMatrix, threshold: f64) -> Result<PhenotypeMatrix> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("prevalence threshold {threshold} outside (0, 1)")));
    }
    let n = matrix.n_records();
    let keep: Vec<usize> = (0..matrix.phecodes.len())
        .filter(|&j| n > 0 && passes(matrix.case_count(j), n, threshold))
        .collect();
    Ok(PhenotypeMatrix {
        record_ids: matrix.record_ids.clone(),
        phecodes: keep.iter().map(|&j| matrix.phecodes[j].clone()).collect(),
        columns: keep.iter().map(|&j| matrix.columns[j].clone()).collect(),
    })
}

/// `count / n >= threshold`, decided without rounding error at the boundary.
pub fn passes(count: usize, n: usize, threshold: f64) -> bool {
    let lhs = count as f64;
    let rhs = threshold * n as f64;
    lhs >= rhs || (rhs - lhs).abs() <= 1e-9 * rhs.max(1.0)
}

/// Indices of the first ECG of every (subject, admission): earliest
/// timestamp, ties to the smallest record id. Output is in record-id order.
pub fn first_ecg_indices(records: &[CohortRecord]) -> Vec<usize> {
    let mut best: HashMap<(u64, u64), usize> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        best.entry((r.subject_id, r.admission_id))
            .and_modify(|j| {
                let o = &records[*j];
                if (r.timestamp, r.record_id) < (o.timestamp, o.record_id) {
                    *j = i;
                }
            })
            .or_insert(i);
    }
    let mut idx: Vec<usize> = best.into_values().collect();
    idx.sort_by_key(|&i| (records[i].record_id, i));
    idx
}

pub fn first_ecg_filter(records: Vec<CohortRecord>) -> Vec<CohortRecord> {
    let keep = first_ecg_indices(&records);
    let mut slots: Vec<Option<CohortRecord>> = records.into_iter().map(Some).collect();
    keep.into_iter().map(|i| slots[i].take().expect("index kept once")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::IcdCode;
    use crate::signal::Signal;
    use chrono::NaiveDate;

    fn rec(id: u64, subject: u64, adm: u64, minute: u32, codes: &[(&str, u8)]) -> CohortRecord {
        CohortRecord {
            record_id: id,
            subject_id: subject,
            admission_id: adm,
            timestamp: NaiveDate::from_ymd_opt(2016, 1, 1).unwrap().and_hms_opt(0, minute, 0).unwrap(),
            signal: Signal::zeros(1, 1),
            icd_codes: codes.iter().map(|(c, v)| IcdCode::new(*c, *v)).collect(),
            report: String::new(),
            labels: None,
        }
    }

    fn mapping() -> PhecodeMapping {
        PhecodeMapping::new(vec![
            MappingEntry {
                icd_code: "X1".into(),
                icd_version: 10,
                phecode: "P1".into(),
                description: "one".into(),
            },
            MappingEntry {
                icd_code: "X2".into(),
                icd_version: 10,
                phecode: "P1".into(),
                description: "one".into(),
            },
            MappingEntry {
                icd_code: "X1".into(),
                icd_version: 9,
                phecode: "P0".into(),
                description: "zero".into(),
            },
        ])
        .unwrap()
    }

    #[test]
    fn first_ecg_rules() {
        let rs = vec![
            rec(1, 1, 1, 5, &[]),
            rec(7, 2, 2, 3, &[]),
            rec(3, 2, 2, 3, &[]),
            rec(4, 3, 3, 9, &[]),
            rec(5, 3, 3, 2, &[]),
        ];
        let ids: Vec<u64> = first_ecg_filter(rs.clone()).iter().map(|r| r.record_id).collect();
        assert_eq!(ids, vec![1, 3, 5]);
        let once = first_ecg_filter(rs);
        assert_eq!(first_ecg_filter(once.clone()), once);
    }

    #[test]
    fn mapping_examples() {
        let rs = vec![
            rec(1, 1, 1, 0, &[]),
            rec(2, 2, 2, 0, &[("X1", 10)]),
            rec(3, 3, 3, 0, &[("X1", 10), ("X2", 10), ("ZZ", 10)]),
            rec(4, 4, 4, 0, &[("X1", 9)]),
        ];
        let (m, stats) = map_to_phecodes(&rs, &mapping());
        assert_eq!(m.phecodes, vec!["P0", "P1"]);
        assert_eq!(m.column("P1").unwrap(), &[false, true, true, false]);
        assert_eq!(m.column("P0").unwrap(), &[false, false, false, true]);
        assert_eq!(stats.unmapped_codes, 1);
    }

    #[test]
    fn empty_mapping_gives_no_columns() {
        let rs = vec![rec(1, 1, 1, 0, &[("X1", 10)])];
        let (m, stats) = map_to_phecodes(&rs, &PhecodeMapping::default());
        assert!(m.phecodes.is_empty());
        assert_eq!(m.n_records(), 1);
        assert_eq!(stats.unmapped_codes, 1);
    }

    #[test]
    fn duplicate_key_rejected() {
        let mut e = mapping().entries().to_vec();
        e.push(e[0].clone());
        assert!(PhecodeMapping::new(e).is_err());
    }

    fn matrix(n: usize, cases: &[usize]) -> PhenotypeMatrix {
        PhenotypeMatrix {
            record_ids: (0..n as u64).collect(),
            phecodes: (0..cases.len()).map(|j| format!("P{j}")).collect(),
            columns: cases.iter().map(|&k| (0..n).map(|i| i < k).collect()).collect(),
        }
    }

    #[test]
    fn prevalence_boundaries() {
        let m = matrix(2000, &[1, 2]);
        let f = prevalence_filter(&m, 0.001).unwrap();
        assert_eq!(f.phecodes, vec!["P1"]);
        let m = matrix(10, &[5, 4]);
        assert_eq!(prevalence_filter(&m, 0.5).unwrap().phecodes, vec!["P0"]);
        assert!(prevalence_filter(&m, 0.0).is_err());
        assert!(prevalence_filter(&m, 1.0).is_err());
    }

    #[test]
    fn subject_prevalence_counts_distinct_subjects() {
        // Rows 0..3 belong to subject 1, rows 4..9 to subjects 2..7.
        let m = matrix(10, &[4, 5]);
        let subjects: Vec<u64> = (0..10u64).map(|i| if i < 4 { 1 } else { i - 2 }).collect();
        // P0: 4/10 rows but 1/7 subjects; P1: 5/10 rows and 2/7 subjects.
        assert_eq!(prevalence_filter(&m, 0.4).unwrap().phecodes, vec!["P0", "P1"]);
        assert_eq!(subject_prevalence_filter(&m, &subjects, 0.2).unwrap().phecodes, vec!["P1"]);
        assert!(subject_prevalence_filter(&m, &subjects[1..], 0.2).is_err());
        assert_eq!(PrevalenceUnit::parse("subjects"), Some(PrevalenceUnit::Subjects));
        assert_eq!(PrevalenceUnit::parse(PrevalenceUnit::Admissions.as_str()), Some(PrevalenceUnit::Admissions));
    }
}
