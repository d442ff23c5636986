//! `key = value` run configuration with environment and flag overrides.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::assoc::SignificanceRule;
use crate::error::{Error, Result};
use crate::ingest::PrevalenceUnit;
use crate::predict::CombinedSource;
use crate::proto::{BranchConfig, BranchId, LossWeights};
use crate::seed::derive_seed;

/// Environment overrides are `PROTOPHEN_<KEY>` with the key upper-cased.
pub const ENV_PREFIX: &str = "PROTOPHEN_";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Worker cap; 0 uses every core.
    pub threads: usize,

    pub train_subjects: usize,
    pub infer_subjects: usize,
    pub shift: Vec<f64>,

    /// Input overrides; `None` means the synth stage's output.
    pub train_cohort: Option<PathBuf>,
    pub infer_cohort: Option<PathBuf>,
    pub classes: Option<PathBuf>,
    pub phecode_map: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub abbreviations: Option<PathBuf>,
    pub allowlist: Option<PathBuf>,
    pub negation_triggers: Option<PathBuf>,
    pub phecode_categories: Option<PathBuf>,

    pub fusion_threshold: f64,
    pub prevalence_threshold: f64,
    pub prevalence_unit: PrevalenceUnit,
    pub min_concept_count: usize,
    pub q_threshold: f64,
    pub negation_window: usize,
    pub significance_rule: SignificanceRule,
    /// Odds-ratio comparison across granularities over every test rather
    /// than significant ones only.
    pub or_include_nonsignificant: bool,

    pub prototypes_rhythm: usize,
    pub prototypes_partial: usize,
    pub prototypes_global: usize,
    pub epochs: usize,
    pub step: f64,
    pub lambda_cluster: f64,
    pub lambda_separation: f64,
    pub fusion_epochs: usize,
    pub fusion_step: f64,
    pub fusion_l2: f64,

    pub test_fraction: f64,
    pub bootstrap_resamples: usize,
    pub logistic_l2: f64,
    pub logistic_max_iter: usize,
    pub combined_source: CombinedSource,
    /// Empty means every phecode that survives the prevalence filter.
    pub predict_phecodes: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        RunConfig {
            out_dir: PathBuf::from("out"),
            seed: 7,
            threads: 0,
            train_subjects: 5000,
            infer_subjects: 5000,
            shift: crate::synth::CohortSpec::default_shift(),
            train_cohort: None,
            infer_cohort: None,
            classes: None,
            phecode_map: None,
            lexicon: None,
            abbreviations: None,
            allowlist: None,
            negation_triggers: None,
            phecode_categories: None,
            fusion_threshold: 0.5,
            prevalence_threshold: 0.001,
            prevalence_unit: PrevalenceUnit::default(),
            min_concept_count: 100,
            q_threshold: 0.05,
            negation_window: 5,
            significance_rule: SignificanceRule::default(),
            or_include_nonsignificant: false,
            prototypes_rhythm: 5,
            prototypes_partial: 18,
            prototypes_global: 7,
            epochs: 30,
            step: 0.5,
            lambda_cluster: w.cluster,
            lambda_separation: w.separation,
            fusion_epochs: 400,
            fusion_step: 1.0,
            fusion_l2: 1e-4,
            test_fraction: 0.2,
            bootstrap_resamples: 1000,
            logistic_l2: 1e-4,
            logistic_max_iter: 500,
            combined_source: CombinedSource::Similarities,
            predict_phecodes: Vec::new(),
        }
    }
}

/// Every key in print order.
pub const KEYS: [&str; 45] = [
    "out_dir",
    "seed",
    "threads",
    "train_subjects",
    "infer_subjects",
    "shift",
    "train_cohort",
    "infer_cohort",
    "classes",
    "phecode_map",
    "lexicon",
    "abbreviations",
    "allowlist",
    "negation_triggers",
    "phecode_categories",
    "fusion_threshold",
    "prevalence_threshold",
    "prevalence_unit",
    "min_concept_count",
    "q_threshold",
    "negation_window",
    "significance_rule",
    "or_include_nonsignificant",
    "prototypes_rhythm",
    "prototypes_partial",
    "prototypes_global",
    "epochs",
    "step",
    "lambda_cluster",
    "lambda_separation",
    "fusion_epochs",
    "fusion_step",
    "fusion_l2",
    "test_fraction",
    "bootstrap_resamples",
    "logistic_l2",
    "logistic_max_iter",
    "combined_source",
    "predict_phecodes",
    // derived seeds are printed but not settable
    "seed.train_cohort",
    "seed.infer_cohort",
    "seed.extractor",
    "seed.train",
    "seed.split",
    "seed.bootstrap",
];

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn list(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "out_dir" => self.out_dir = PathBuf::from(v),
            "seed" => self.seed = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "train_subjects" => self.train_subjects = parse(key, v)?,
            "infer_subjects" => self.infer_subjects = parse(key, v)?,
            "shift" => {
                self.shift = list(v)
                    .iter()
                    .map(|x| parse::<f64>(key, x))
                    .collect::<Result<_>>()?
            }
            "train_cohort" => self.train_cohort = opt_path(v),
            "infer_cohort" => self.infer_cohort = opt_path(v),
            "classes" => self.classes = opt_path(v),
            "phecode_map" => self.phecode_map = opt_path(v),
            "lexicon" => self.lexicon = opt_path(v),
            "abbreviations" => self.abbreviations = opt_path(v),
            "allowlist" => self.allowlist = opt_path(v),
            "negation_triggers" => self.negation_triggers = opt_path(v),
            "phecode_categories" => self.phecode_categories = opt_path(v),
            "fusion_threshold" => self.fusion_threshold = parse(key, v)?,
            "prevalence_threshold" => self.prevalence_threshold = parse(key, v)?,
            "prevalence_unit" => {
                self.prevalence_unit = PrevalenceUnit::parse(v)
                    .ok_or_else(|| Error::Config(format!("prevalence_unit: {v:?} (admissions|subjects)")))?
            }
            "min_concept_count" => self.min_concept_count = parse(key, v)?,
            "q_threshold" => self.q_threshold = parse(key, v)?,
            "negation_window" => self.negation_window = parse(key, v)?,
            "significance_rule" => {
                self.significance_rule = SignificanceRule::parse(v)
                    .ok_or_else(|| Error::Config(format!("significance_rule: {v:?} (risk|any)")))?
            }
            "or_include_nonsignificant" => self.or_include_nonsignificant = parse(key, v)?,
            "prototypes_rhythm" => self.prototypes_rhythm = parse(key, v)?,
            "prototypes_partial" => self.prototypes_partial = parse(key, v)?,
            "prototypes_global" => self.prototypes_global = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "step" => self.step = parse(key, v)?,
            "lambda_cluster" => self.lambda_cluster = parse(key, v)?,
            "lambda_separation" => self.lambda_separation = parse(key, v)?,
            "fusion_epochs" => self.fusion_epochs = parse(key, v)?,
            "fusion_step" => self.fusion_step = parse(key, v)?,
            "fusion_l2" => self.fusion_l2 = parse(key, v)?,
            "test_fraction" => self.test_fraction = parse(key, v)?,
            "bootstrap_resamples" => self.bootstrap_resamples = parse(key, v)?,
            "logistic_l2" => self.logistic_l2 = parse(key, v)?,
            "logistic_max_iter" => self.logistic_max_iter = parse(key, v)?,
            "combined_source" => {
                self.combined_source = match v {
                    "similarities" => CombinedSource::Similarities,
                    "embeddings" => CombinedSource::Embeddings,
                    _ => return Err(Error::Config(format!("combined_source: {v:?} (similarities|embeddings)"))),
                }
            }
            "predict_phecodes" => self.predict_phecodes = list(v),
            k if k.starts_with("seed.") => {
                return Err(Error::Config(format!("{k} is derived from `seed` and cannot be set")))
            }
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let f = |x: f64| format!("{x}");
        Some(match key {
            "out_dir" => self.out_dir.display().to_string(),
            "seed" => self.seed.to_string(),
            "threads" => self.threads.to_string(),
            "train_subjects" => self.train_subjects.to_string(),
            "infer_subjects" => self.infer_subjects.to_string(),
            "shift" => self.shift.iter().map(|&x| f(x)).collect::<Vec<_>>().join(","),
            "train_cohort" => show_path(&self.train_cohort),
            "infer_cohort" => show_path(&self.infer_cohort),
            "classes" => show_path(&self.classes),
            "phecode_map" => show_path(&self.phecode_map),
            "lexicon" => show_path(&self.lexicon),
            "abbreviations" => show_path(&self.abbreviations),
            "allowlist" => show_path(&self.allowlist),
            "negation_triggers" => show_path(&self.negation_triggers),
            "phecode_categories" => show_path(&self.phecode_categories),
            "fusion_threshold" => f(self.fusion_threshold),
            "prevalence_threshold" => f(self.prevalence_threshold),
            "prevalence_unit" => self.prevalence_unit.as_str().into(),
            "min_concept_count" => self.min_concept_count.to_string(),
            "q_threshold" => f(self.q_threshold),
            "negation_window" => self.negation_window.to_string(),
            "significance_rule" => self.significance_rule.as_str().into(),
            "or_include_nonsignificant" => self.or_include_nonsignificant.to_string(),
            "prototypes_rhythm" => self.prototypes_rhythm.to_string(),
            "prototypes_partial" => self.prototypes_partial.to_string(),
            "prototypes_global" => self.prototypes_global.to_string(),
            "epochs" => self.epochs.to_string(),
            "step" => f(self.step),
            "lambda_cluster" => f(self.lambda_cluster),
            "lambda_separation" => f(self.lambda_separation),
            "fusion_epochs" => self.fusion_epochs.to_string(),
            "fusion_step" => f(self.fusion_step),
            "fusion_l2" => f(self.fusion_l2),
            "test_fraction" => f(self.test_fraction),
            "bootstrap_resamples" => self.bootstrap_resamples.to_string(),
            "logistic_l2" => f(self.logistic_l2),
            "logistic_max_iter" => self.logistic_max_iter.to_string(),
            "combined_source" => match self.combined_source {
                CombinedSource::Similarities => "similarities".into(),
                CombinedSource::Embeddings => "embeddings".into(),
            },
            "predict_phecodes" => self.predict_phecodes.join(","),
            "seed.train_cohort" => self.seeds().train_cohort.to_string(),
            "seed.infer_cohort" => self.seeds().infer_cohort.to_string(),
            "seed.extractor" => self.seeds().extractor.to_string(),
            "seed.train" => self.seeds().train.to_string(),
            "seed.split" => self.seeds().split.to_string(),
            "seed.bootstrap" => self.seeds().bootstrap.to_string(),
            _ => return None,
        })
    }

    /// Parse `key = value` lines; `#` starts a comment, blank lines are
    /// skipped, later keys win.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: i + 1,
                    msg: "expected `key = value`".into(),
                });
            };
            self.set(k.trim(), v).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = RunConfig::default();
        c.apply_text(&text, path)?;
        Ok(c)
    }

    /// Apply `PROTOPHEN_<KEY>=value` pairs. Unknown `PROTOPHEN_` variables
    /// are errors so typos do not pass silently.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<()> {
        let mut pairs: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|s| (s.to_ascii_lowercase(), v)))
            .collect();
        pairs.sort();
        for (k, v) in pairs {
            self.set(&k, &v)
                .map_err(|e| Error::Config(format!("{ENV_PREFIX}{}: {e}", k.to_ascii_uppercase())))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let open01 = |x: f64| x > 0.0 && x < 1.0;
        if !(0.0..=1.0).contains(&self.fusion_threshold) {
            return bad(format!("fusion_threshold {} outside [0, 1]", self.fusion_threshold));
        }
        if !open01(self.prevalence_threshold) {
            return bad(format!("prevalence_threshold {} outside (0, 1)", self.prevalence_threshold));
        }
        if !open01(self.q_threshold) {
            return bad(format!("q_threshold {} outside (0, 1)", self.q_threshold));
        }
        if !open01(self.test_fraction) {
            return bad(format!("test_fraction {} outside (0, 1)", self.test_fraction));
        }
        if self.min_concept_count == 0 {
            return bad("min_concept_count must be at least 1".into());
        }
        if self.train_subjects == 0 || self.infer_subjects == 0 {
            return bad("subject counts must be positive".into());
        }
        if self.bootstrap_resamples == 0 {
            return bad("bootstrap_resamples must be positive".into());
        }
        if self.prototypes_rhythm == 0 || self.prototypes_partial == 0 || self.prototypes_global == 0 {
            return bad("prototypes per class must be positive".into());
        }
        for (name, v) in [
            ("step", self.step),
            ("fusion_step", self.fusion_step),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        for (name, v) in [
            ("lambda_cluster", self.lambda_cluster),
            ("lambda_separation", self.lambda_separation),
            ("fusion_l2", self.fusion_l2),
            ("logistic_l2", self.logistic_l2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative"));
            }
        }
        if self.shift.iter().any(|&m| !(m >= 0.0 && m.is_finite())) {
            return bad("shift multipliers must be non-negative".into());
        }
        Ok(())
    }

    pub fn seeds(&self) -> Seeds {
        let d = |k| derive_seed(self.seed, k);
        Seeds {
            train_cohort: d(1),
            infer_cohort: d(2),
            extractor: d(3),
            train: d(4),
            split: d(5),
            bootstrap: d(6),
        }
    }

    pub fn branch_configs(&self) -> Vec<BranchConfig> {
        BranchId::ALL
            .into_iter()
            .map(|b| {
                let mut c = BranchConfig::default_for(b);
                c.prototypes_per_class = match b {
                    BranchId::Rhythm1d => self.prototypes_rhythm,
                    BranchId::Partial2d => self.prototypes_partial,
                    BranchId::Global2d => self.prototypes_global,
                };
                c
            })
            .collect()
    }

    /// Every key, one `key = value` line each, in [`KEYS`] order.
    pub fn effective_text(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            let _ = writeln!(out, "{k} = {}", self.get(k).unwrap_or_default());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub train_cohort: u64,
    pub infer_cohort: u64,
    pub extractor: u64,
    pub train: u64,
    pub split: u64,
    pub bootstrap: u64,
}
