//! Readers and writers for the intermediate files passed between stages.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assoc::{FeatureColumn, FeatureMatrix, Granularity};
use crate::error::{Error, Result};
use crate::ingest::{csv_err, PhenotypeMatrix};
use crate::proto::{BestMatch, InferenceOutput};

pub fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// `record_id,<name>...` with 0/1 cells.
pub fn write_bool_matrix(path: &Path, record_ids: &[u64], names: &[String], columns: &[Vec<bool>]) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["record_id".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(names.len() + 1);
    for (r, id) in record_ids.iter().enumerate() {
        row.clear();
        row.push(id.to_string());
        row.extend(columns.iter().map(|c| if c[r] { "1".to_string() } else { "0".to_string() }));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub struct BoolMatrix {
    pub record_ids: Vec<u64>,
    pub names: Vec<String>,
    pub columns: Vec<Vec<bool>>,
}

pub fn read_bool_matrix(path: &Path) -> Result<BoolMatrix> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("record_id") {
        return Err(parse_err(path, 1, "first column must be record_id"));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut record_ids = Vec::new();
    let mut columns = vec![Vec::new(); names.len()];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != names.len() + 1 {
            return Err(parse_err(path, line, format!("{} fields, expected {}", rec.len(), names.len() + 1)));
        }
        record_ids.push(rec[0].parse().map_err(|_| parse_err(path, line, "bad record_id"))?);
        for (c, cell) in columns.iter_mut().zip(rec.iter().skip(1)) {
            c.push(match cell {
                "1" => true,
                "0" => false,
                other => return Err(parse_err(path, line, format!("cell {other:?} is not 0/1"))),
            });
        }
    }
    Ok(BoolMatrix {
        record_ids,
        names,
        columns,
    })
}

pub fn write_phenotypes(path: &Path, m: &PhenotypeMatrix) -> Result<()> {
    write_bool_matrix(path, &m.record_ids, &m.phecodes, &m.columns)
}

pub fn read_phenotypes(path: &Path) -> Result<PhenotypeMatrix> {
    let b = read_bool_matrix(path)?;
    if b.names.windows(2).any(|w| w[0] >= w[1]) {
        return Err(parse_err(path, 1, "phecode columns must be sorted and unique"));
    }
    Ok(PhenotypeMatrix {
        record_ids: b.record_ids,
        phecodes: b.names,
        columns: b.columns,
    })
}

pub fn write_concepts(path: &Path, m: &FeatureMatrix) -> Result<()> {
    let names: Vec<String> = m.columns.iter().map(|c| c.name.clone()).collect();
    let cols: Vec<Vec<bool>> = m.columns.iter().map(|c| c.values.clone()).collect();
    write_bool_matrix(path, &m.record_ids, &names, &cols)
}

pub fn read_concepts(path: &Path) -> Result<FeatureMatrix> {
    let b = read_bool_matrix(path)?;
    let columns = b
        .names
        .into_iter()
        .zip(b.columns)
        .map(|(name, values)| FeatureColumn {
            name,
            granularity: Granularity::Cui,
            values,
        })
        .collect();
    FeatureMatrix::new(b.record_ids, columns)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClassRow {
    class_id: usize,
    name: String,
}

pub fn write_class_names(path: &Path, names: &[String]) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for (class_id, name) in names.iter().enumerate() {
        w.serialize(ClassRow {
            class_id,
            name: name.clone(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Rows must list class ids 0, 1, 2, … in order.
pub fn read_class_names(path: &Path) -> Result<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<ClassRow>().enumerate() {
        let row = row.map_err(|e| parse_err(path, i + 2, e.to_string()))?;
        if row.class_id != out.len() {
            return Err(parse_err(path, i + 2, format!("class_id {} out of order", row.class_id)));
        }
        out.push(row.name);
    }
    if out.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no classes", path.display())));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CategoryRow {
    phecode: String,
    category: String,
}

pub fn write_categories(path: &Path, cats: &BTreeMap<String, String>) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for (phecode, category) in cats {
        w.serialize(CategoryRow {
            phecode: phecode.clone(),
            category: category.clone(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_categories(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = BTreeMap::new();
    for (i, row) in rdr.deserialize::<CategoryRow>().enumerate() {
        let row = row.map_err(|e| parse_err(path, i + 2, e.to_string()))?;
        out.insert(row.phecode, row.category);
    }
    Ok(out)
}

/// One line of `inference.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceLine {
    pub record_id: u64,
    pub subject_id: u64,
    pub class_probs: Vec<f64>,
    pub similarities: Vec<f64>,
    pub best: Vec<BestMatch>,
    pub embedding: Vec<f64>,
}

impl InferenceLine {
    pub fn output(&self) -> InferenceOutput {
        InferenceOutput {
            record_id: self.record_id,
            similarities: self.similarities.clone(),
            class_probs: self.class_probs.clone(),
            best: self.best.clone(),
        }
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    create_parent(path)?;
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e.to_string()))?);
    }
    Ok(out)
}

/// `record_id,subject_id,<class>...` probabilities at full precision.
pub fn write_probabilities(path: &Path, class_names: &[String], rows: &[(u64, u64, Vec<f64>)]) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["record_id".to_string(), "subject_id".into()];
    header.extend(class_names.iter().cloned());
    w.write_record(&header)?;
    for (rid, sid, p) in rows {
        let mut rec = vec![rid.to_string(), sid.to_string()];
        rec.extend(p.iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub struct Probabilities {
    pub class_names: Vec<String>,
    pub rows: Vec<(u64, u64, Vec<f64>)>,
}

pub fn read_probabilities(path: &Path) -> Result<Probabilities> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rdr.headers()?.clone();
    if header.len() < 2 || &header[0] != "record_id" || &header[1] != "subject_id" {
        return Err(parse_err(path, 1, "expected record_id,subject_id,<classes>"));
    }
    let class_names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| parse_err(path, line, format!("bad number {s:?}"))) };
        if rec.len() != header.len() {
            return Err(parse_err(path, line, "wrong field count"));
        }
        let rid = rec[0].parse().map_err(|_| parse_err(path, line, "bad record_id"))?;
        let sid = rec[1].parse().map_err(|_| parse_err(path, line, "bad subject_id"))?;
        let p = rec.iter().skip(2).map(num).collect::<Result<Vec<f64>>>()?;
        rows.push((rid, sid, p));
    }
    Ok(Probabilities { class_names, rows })
}
