use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, Granularity};
use crate::error::{Error, Result};
use crate::ingest::{csv_err, PhenotypeMatrix};
use crate::stats::{bh_fdr, odds_ratio, ContingencyTable, FisherExact};

pub const DEFAULT_Q_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationResult {
    pub granularity: Granularity,
    pub feature: String,
    pub phecode: String,
    pub table: ContingencyTable,
    pub odds_ratio: f64,
    pub p: f64,
    pub q: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedColumn {
    pub granularity: Option<Granularity>,
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScanOutput {
    pub results: Vec<AssociationResult>,
    pub skipped: Vec<SkippedColumn>,
}

fn table(feature: &[bool], outcome: &[bool]) -> ContingencyTable {
    let (mut a, mut b, mut c, mut d) = (0u64, 0u64, 0u64, 0u64);
    for (&f, &y) in feature.iter().zip(outcome) {
        match (f, y) {
            (true, true) => a += 1,
            (true, false) => b += 1,
            (false, true) => c += 1,
            (false, false) => d += 1,
        }
    }
    ContingencyTable::new(a, b, c, d)
}

/// Fisher test for every (non-constant feature, non-constant phecode) pair,
/// one BH family over the whole scan, ordered by (granularity, feature,
/// phecode). Constant columns are skipped before FDR and reported.
pub fn phewas_scan(features: &FeatureMatrix, phenotypes: &PhenotypeMatrix, q_threshold: f64) -> Result<ScanOutput> {
    if !(q_threshold > 0.0 && q_threshold <= 1.0) {
        return Err(Error::Config(format!("q threshold {q_threshold} outside (0, 1]")));
    }
    if features.record_ids != phenotypes.record_ids {
        return Err(Error::InvalidInput(
            "feature and phenotype matrices are not row-aligned".into(),
        ));
    }
    let mut skipped = Vec::new();
    let mut feats: Vec<usize> = Vec::new();
    for (i, c) in features.columns.iter().enumerate() {
        if c.is_constant() {
            skipped.push(SkippedColumn {
                granularity: Some(c.granularity),
                name: c.name.clone(),
                reason: format!("zero variance ({} of {} set)", c.count(), c.values.len()),
            });
        } else {
            feats.push(i);
        }
    }
    feats.sort_by(|&i, &j| {
        let (a, b) = (&features.columns[i], &features.columns[j]);
        (a.granularity, &a.name).cmp(&(b.granularity, &b.name))
    });
    let mut phes: Vec<usize> = Vec::new();
    for (j, p) in phenotypes.phecodes.iter().enumerate() {
        let k = phenotypes.case_count(j);
        if k == 0 || k == phenotypes.n_records() {
            skipped.push(SkippedColumn {
                granularity: None,
                name: p.clone(),
                reason: format!("zero variance ({k} of {} cases)", phenotypes.n_records()),
            });
        } else {
            phes.push(j);
        }
    }
    phes.sort_by(|&i, &j| phenotypes.phecodes[i].cmp(&phenotypes.phecodes[j]));

    let fisher = FisherExact::new(features.n_records());
    let pairs: Vec<(usize, usize)> = feats.iter().flat_map(|&f| phes.iter().map(move |&p| (f, p))).collect();
    let partial: Vec<(ContingencyTable, f64, f64)> = pairs
        .par_iter()
        .map(|&(f, p)| {
            let t = table(&features.columns[f].values, &phenotypes.columns[p]);
            (t, odds_ratio(&t), fisher.two_sided(&t).p_value)
        })
        .collect();
    let p_values: Vec<f64> = partial.iter().map(|x| x.2).collect();
    let fdr = bh_fdr(&p_values);
    let results = pairs
        .iter()
        .zip(partial)
        .zip(fdr.q_values)
        .map(|((&(f, p), (t, or, pv)), q)| {
            let col = &features.columns[f];
            AssociationResult {
                granularity: col.granularity,
                feature: col.name.clone(),
                phecode: phenotypes.phecodes[p].clone(),
                table: t,
                odds_ratio: or,
                p: pv,
                q,
                significant: q < q_threshold,
            }
        })
        .collect();
    Ok(ScanOutput { results, skipped })
}

#[derive(Debug, Serialize, Deserialize)]
struct ResultRow {
    granularity: String,
    feature: String,
    phecode: String,
    a: u64,
    b: u64,
    c: u64,
    d: u64,
    odds_ratio: f64,
    p: f64,
    q: f64,
    significant: bool,
}

/// Header `granularity,feature,phecode,a,b,c,d,odds_ratio,p,q,significant`.
/// Reals use shortest round-trip formatting, so reading back is lossless.
pub fn write_results_csv(path: &Path, results: &[AssociationResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in results {
        w.serialize(ResultRow {
            granularity: r.granularity.to_string(),
            feature: r.feature.clone(),
            phecode: r.phecode.clone(),
            a: r.table.a,
            b: r.table.b,
            c: r.table.c,
            d: r.table.d,
            odds_ratio: r.odds_ratio,
            p: r.p,
            q: r.q,
            significant: r.significant,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results_csv(path: &Path) -> Result<Vec<AssociationResult>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<ResultRow>().enumerate() {
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            msg,
        };
        let row = row.map_err(|e| parse_err(e.to_string()))?;
        let granularity =
            Granularity::parse(&row.granularity).ok_or_else(|| parse_err(format!("granularity {:?}", row.granularity)))?;
        out.push(AssociationResult {
            granularity,
            feature: row.feature,
            phecode: row.phecode,
            table: ContingencyTable::new(row.a, row.b, row.c, row.d),
            odds_ratio: row.odds_ratio,
            p: row.p,
            q: row.q,
            significant: row.significant,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assoc::FeatureColumn;

    fn feat(name: &str, g: Granularity, values: Vec<bool>) -> FeatureColumn {
        FeatureColumn {
            name: name.into(),
            granularity: g,
            values,
        }
    }

    fn phen(n: usize, cols: Vec<(&str, Vec<bool>)>) -> PhenotypeMatrix {
        PhenotypeMatrix {
            record_ids: (0..n as u64).collect(),
            phecodes: cols.iter().map(|c| c.0.to_string()).collect(),
            columns: cols.into_iter().map(|c| c.1).collect(),
        }
    }

    #[test]
    fn identical_and_independent_columns() {
        let n = 100;
        let y: Vec<bool> = (0..n).map(|i| i < 30).collect();
        let half: Vec<bool> = (0..n).map(|i| i < 50).collect();
        let alt: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let f = FeatureMatrix::new(
            (0..n as u64).collect(),
            vec![feat("same", Granularity::Cui, y.clone()), feat("half", Granularity::Cui, half)],
        )
        .unwrap();
        let p = phen(n, vec![("P1", y), ("P2", alt)]);
        let out = phewas_scan(&f, &p, 0.05).unwrap();
        let same = out.results.iter().find(|r| r.feature == "same" && r.phecode == "P1").unwrap();
        assert_eq!(same.table, ContingencyTable::new(30, 0, 0, 70));
        assert!(same.significant);
        let ind = out.results.iter().find(|r| r.feature == "half" && r.phecode == "P2").unwrap();
        assert_eq!(ind.table, ContingencyTable::new(25, 25, 25, 25));
        assert_eq!(ind.odds_ratio, 1.0);
        assert!(ind.p >= 0.9);
    }

    #[test]
    fn empty_phenotypes_give_no_results() {
        let f = FeatureMatrix::new(vec![0, 1], vec![feat("x", Granularity::Cui, vec![true, false])]).unwrap();
        let p = phen(2, vec![]);
        assert!(phewas_scan(&f, &p, 0.05).unwrap().results.is_empty());
    }

    #[test]
    fn constant_columns_skipped() {
        let f = FeatureMatrix::new(
            vec![0, 1, 2],
            vec![
                feat("x", Granularity::Cui, vec![true, false, true]),
                feat("k", Granularity::Cui, vec![true, true, true]),
            ],
        )
        .unwrap();
        let p = phen(3, vec![("P", vec![true, false, false]), ("Z", vec![false; 3])]);
        let out = phewas_scan(&f, &p, 0.05).unwrap();
        assert_eq!(out.results.len(), 1);
        assert_eq!(out.skipped.len(), 2);
    }

    #[test]
    fn misaligned_rows_rejected() {
        let f = FeatureMatrix::new(vec![0, 1], vec![feat("x", Granularity::Cui, vec![true, false])]).unwrap();
        let mut p = phen(2, vec![("P", vec![true, false])]);
        p.record_ids = vec![1, 0];
        assert!(phewas_scan(&f, &p, 0.05).is_err());
    }
}
