//! Phecode prediction benchmark: subject-level splits, logistic models per
//! (phecode, feature set), test AUC with bootstrap intervals.

mod logistic;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assoc::{FeatureMatrix, Granularity};
use crate::error::{Error, Result};
use crate::ingest::{csv_err, PhenotypeMatrix};
use crate::seed::{derive_seed, rng_for};
use crate::stats::{auc_roc, bootstrap_ci, BootstrapConfig};

pub use logistic::{fit_logistic, logistic_objective, LogisticConfig, LogisticModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub test_fraction: f64,
    pub train: BTreeSet<u64>,
    pub test: BTreeSet<u64>,
}

impl SplitAssignment {
    pub fn is_train(&self, subject: u64) -> bool {
        self.train.contains(&subject)
    }
}

/// Shuffle the distinct subjects with `seed`; the first ⌈(1−f)·S⌉ train.
pub fn subject_split(subject_ids: &[u64], test_fraction: f64, seed: u64) -> Result<SplitAssignment> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    let mut subjects: Vec<u64> = subject_ids.iter().copied().collect::<BTreeSet<u64>>().into_iter().collect();
    if subjects.len() < 2 {
        return Err(Error::InvalidInput(format!("{} subjects; a split needs at least 2", subjects.len())));
    }
    subjects.shuffle(&mut rng_for(seed, 0x5B11_7000));
    let s = subjects.len();
    // tolerance absorbs products such as 0.8·10 landing just above 8
    let n_train = (((1.0 - test_fraction) * s as f64) - 1e-9).ceil().clamp(1.0, s as f64) as usize;
    Ok(SplitAssignment {
        seed,
        test_fraction,
        train: subjects[..n_train].iter().copied().collect(),
        test: subjects[n_train..].iter().copied().collect(),
    })
}

/// Row indices whose subject is in the training split, in row order.
pub fn train_rows(subject_ids: &[u64], split: &SplitAssignment) -> Vec<usize> {
    (0..subject_ids.len()).filter(|&r| split.is_train(subject_ids[r])).collect()
}

/// Fit on the given rows only; no other row of `x` or `y` is read.
pub fn fit_on_train(x: &[Vec<f64>], y: &[bool], rows: &[usize], cfg: &LogisticConfig) -> Result<LogisticModel> {
    let x_train: Vec<Vec<f64>> = rows.iter().map(|&r| x[r].clone()).collect();
    let y_train: Vec<bool> = rows.iter().map(|&r| y[r]).collect();
    fit_logistic(&x_train, &y_train, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub auc: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Point AUC and percentile bootstrap interval over test-record resamples.
pub fn evaluate_phecode(scores: &[f64], labels: &[bool], n_resamples: usize, seed: u64) -> Result<Evaluation> {
    let pos = labels.iter().filter(|&&v| v).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::SingleClass(format!("{pos} positives among {} test rows", labels.len())));
    }
    let auc = auc_roc(scores, labels)?;
    let metric = |idx: &[usize]| {
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        auc_roc(&s, &l).ok()
    };
    let (ci_lo, ci_hi) = bootstrap_ci(
        scores.len(),
        metric,
        &BootstrapConfig {
            n_resamples,
            alpha: 0.05,
            seed,
        },
    )?;
    Ok(Evaluation { auc, ci_lo, ci_hi })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSet {
    Fusion,
    Class,
    Cui,
    PrototypeCombined,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 4] = [
        FeatureSet::Fusion,
        FeatureSet::Class,
        FeatureSet::Cui,
        FeatureSet::PrototypeCombined,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureSet::Fusion => "fusion",
            FeatureSet::Class => "class",
            FeatureSet::Cui => "cui",
            FeatureSet::PrototypeCombined => "prototype-combined",
        }
    }

    pub fn parse(s: &str) -> Option<FeatureSet> {
        FeatureSet::ALL.into_iter().find(|f| f.as_str() == s)
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Real-valued source for the prototype part of `prototype-combined`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombinedSource {
    #[default]
    Similarities,
    Embeddings,
}

/// Everything the benchmark reads, row-aligned by record.
#[derive(Debug, Clone)]
pub struct BenchmarkInputs<'a> {
    pub subject_ids: &'a [u64],
    pub features: &'a FeatureMatrix,
    pub similarities: &'a [Vec<f64>],
    /// Pooled latent vectors per record, used by [`CombinedSource::Embeddings`].
    pub embeddings: Option<&'a [Vec<f64>]>,
    pub phenotypes: &'a PhenotypeMatrix,
    pub descriptions: &'a BTreeMap<String, String>,
}

impl BenchmarkInputs<'_> {
    fn validate(&self) -> Result<()> {
        let n = self.features.n_records();
        if self.subject_ids.len() != n || self.similarities.len() != n || self.phenotypes.record_ids != self.features.record_ids {
            return Err(Error::InvalidInput("benchmark inputs are not row-aligned".into()));
        }
        if let Some(e) = self.embeddings {
            if e.len() != n {
                return Err(Error::InvalidInput("embeddings are not row-aligned".into()));
            }
        }
        Ok(())
    }

    /// Design matrix for a feature set; binary columns become 0/1.
    pub fn design(&self, set: FeatureSet, source: CombinedSource) -> Result<Vec<Vec<f64>>> {
        let binary = |g: Granularity| -> Vec<&Vec<bool>> { self.features.of(g).map(|c| &c.values).collect() };
        let n = self.features.n_records();
        let (real, bins): (Option<&[Vec<f64>]>, Vec<&Vec<bool>>) = match set {
            FeatureSet::Fusion => (None, binary(Granularity::FusionLabel)),
            FeatureSet::Class => (None, binary(Granularity::PrototypeClass)),
            FeatureSet::Cui => (None, binary(Granularity::Cui)),
            FeatureSet::PrototypeCombined => {
                let real = match source {
                    CombinedSource::Similarities => self.similarities,
                    CombinedSource::Embeddings => self
                        .embeddings
                        .ok_or_else(|| Error::Config("prototype-combined from embeddings, but none supplied".into()))?,
                };
                (Some(real), binary(Granularity::FusionLabel))
            }
        };
        Ok((0..n)
            .map(|r| {
                let mut row: Vec<f64> = real.map(|m| m[r].clone()).unwrap_or_default();
                row.extend(bins.iter().map(|c| if c[r] { 1.0 } else { 0.0 }));
                row
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub test_fraction: f64,
    pub split_seed: u64,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
    pub logistic: LogisticConfig,
    pub combined_source: CombinedSource,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            test_fraction: 0.2,
            split_seed: 0,
            bootstrap_resamples: 1000,
            bootstrap_seed: 0,
            logistic: LogisticConfig::default(),
            combined_source: CombinedSource::Similarities,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Ok(Evaluation),
    Failed(String),
}

impl Cell {
    pub fn evaluation(&self) -> Option<&Evaluation> {
        match self {
            Cell::Ok(e) => Some(e),
            Cell::Failed(_) => None,
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Ok(e) => write!(f, "{:.2} [{:.2}, {:.2}]", e.auc, e.ci_lo, e.ci_hi),
            Cell::Failed(_) => f.write_str("NA"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub phecode: String,
    pub description: String,
    pub training_cases: usize,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub feature_sets: Vec<FeatureSet>,
    pub rows: Vec<BenchmarkRow>,
    pub split: SplitAssignment,
}

/// One logistic model per (phecode, feature set), trained on the training
/// subjects and scored on the test subjects. Failures are recorded per cell.
pub fn run_benchmark(
    inputs: &BenchmarkInputs<'_>,
    phecodes: &[String],
    sets: &[FeatureSet],
    cfg: &BenchmarkConfig,
) -> Result<BenchmarkTable> {
    inputs.validate()?;
    let split = subject_split(inputs.subject_ids, cfg.test_fraction, cfg.split_seed)?;
    let train_rows = train_rows(inputs.subject_ids, &split);
    let test_rows: Vec<usize> = (0..inputs.subject_ids.len()).filter(|&r| !split.is_train(inputs.subject_ids[r])).collect();
    let designs: Vec<Vec<Vec<f64>>> = sets
        .iter()
        .map(|&s| inputs.design(s, cfg.combined_source))
        .collect::<Result<_>>()?;
    let outcome = |phe: &str| -> Result<&[bool]> {
        inputs
            .phenotypes
            .column(phe)
            .ok_or_else(|| Error::InvalidInput(format!("phecode {phe} not in phenotype matrix")))
    };
    let jobs: Vec<(usize, usize)> = (0..phecodes.len()).flat_map(|p| (0..sets.len()).map(move |s| (p, s))).collect();
    let cells: Vec<Cell> = jobs
        .par_iter()
        .map(|&(p, s)| {
            let run = || -> Result<Evaluation> {
                let y = outcome(&phecodes[p])?;
                let model = fit_on_train(&designs[s], y, &train_rows, &cfg.logistic)?;
                let scores: Vec<f64> = test_rows.iter().map(|&r| model.predict_proba(&designs[s][r])).collect();
                let y_test: Vec<bool> = test_rows.iter().map(|&r| y[r]).collect();
                let seed = derive_seed(cfg.bootstrap_seed, ((p as u64) << 8) | s as u64);
                evaluate_phecode(&scores, &y_test, cfg.bootstrap_resamples, seed)
            };
            match run() {
                Ok(e) => Cell::Ok(e),
                Err(e) => {
                    log::warn!("{} / {}: {e}", phecodes[p], sets[s]);
                    Cell::Failed(e.to_string())
                }
            }
        })
        .collect();
    let mut rows = Vec::with_capacity(phecodes.len());
    for (p, phe) in phecodes.iter().enumerate() {
        let training_cases = match outcome(phe) {
            Ok(y) => train_rows.iter().filter(|&&r| y[r]).count(),
            Err(_) => 0,
        };
        rows.push(BenchmarkRow {
            phecode: phe.clone(),
            description: inputs.descriptions.get(phe).cloned().unwrap_or_default(),
            training_cases,
            cells: cells[p * sets.len()..(p + 1) * sets.len()].to_vec(),
        });
    }
    Ok(BenchmarkTable {
        feature_sets: sets.to_vec(),
        rows,
        split,
    })
}

/// Header `phecode,description,training_cases,<one column per set>`;
/// cells `auc [lo, hi]` to two decimals, `NA` for failed fits.
pub fn write_benchmark_csv(path: &Path, table: &BenchmarkTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["phecode".to_string(), "description".into(), "training_cases".into()];
    header.extend(table.feature_sets.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for r in &table.rows {
        let mut rec = vec![r.phecode.clone(), r.description.clone(), r.training_cases.to_string()];
        rec.extend(r.cells.iter().map(Cell::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_rounding_and_determinism() {
        let subjects: Vec<u64> = (0..10).collect();
        let s = subject_split(&subjects, 0.2, 3).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (8, 2));
        assert_eq!(s, subject_split(&subjects, 0.2, 3).unwrap());
        assert!(subject_split(&[1, 1, 1], 0.2, 0).is_err());
    }

    #[test]
    fn split_is_per_subject() {
        let subjects = [5u64, 5, 5, 6, 7, 8, 9];
        let s = subject_split(&subjects, 0.5, 1).unwrap();
        assert!(s.train.is_disjoint(&s.test));
        assert_eq!(s.train.len() + s.test.len(), 5);
    }

    #[test]
    fn perfect_scores() {
        let labels = [true, false, true, false, true];
        let scores: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
        let e = evaluate_phecode(&scores, &labels, 200, 1).unwrap();
        assert_eq!((e.auc, e.ci_lo, e.ci_hi), (1.0, 1.0, 1.0));
        assert!(evaluate_phecode(&scores, &[true; 5], 10, 1).is_err());
    }

    #[test]
    fn empty_phecode_list_header_only() {
        let fm = FeatureMatrix::new(vec![1, 2], vec![]).unwrap();
        let pm = PhenotypeMatrix {
            record_ids: vec![1, 2],
            phecodes: vec![],
            columns: vec![],
        };
        let d = BTreeMap::new();
        let inputs = BenchmarkInputs {
            subject_ids: &[1, 2],
            features: &fm,
            similarities: &[vec![], vec![]],
            embeddings: None,
            phenotypes: &pm,
            descriptions: &d,
        };
        let t = run_benchmark(&inputs, &[], &FeatureSet::ALL, &BenchmarkConfig::default()).unwrap();
        assert!(t.rows.is_empty());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_benchmark_csv(&p, &t).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.trim(), "phecode,description,training_cases,fusion,class,cui,prototype-combined");
    }
}
