//! The seven pipeline stages. Each reads its prerequisites from the output
//! directory (or configured input paths), writes its artifacts and a
//! manifest, and refuses upstream manifests from another chain.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::artifacts::*;
use super::config::RunConfig;
use super::manifest::{chain_id, common_chain, digest_files, sha256_file, Manifest};
use super::report;
use super::run::{
    build_extractors, concepts, encode_all, label_masks, phenotypes, run_inference, train_model_on_latents,
    CohortInference, ModelConfig,
};
use crate::assoc::{
    build_feature_sets, classify_significance_groups, granularity_comparison,
    mixed_uniform_analysis, phewas_scan, read_results_csv, write_results_csv, AssociationResult, Comparison,
    FeatureMatrix, GranularityComparison,
};
use crate::cohort::{CohortRecord, GroundTruth};
use crate::concept::{read_allowlist, write_allowlist, ConceptLexicon, NegationRules};
use crate::error::{Error, Result};
use crate::ingest::{csv_err, first_ecg_filter, load_cohort, write_cohort, PhecodeMapping};
use crate::predict::{run_benchmark, write_benchmark_csv, BenchmarkConfig, BenchmarkInputs, Cell, FeatureSet, LogisticConfig};
use crate::proto::{collapse_redundant, read_model, write_model, Collapse, FusionTrainConfig, LossWeights, ProtoModel, TrainConfig};
use crate::synth::{self, CohortSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Synth,
    Train,
    Infer,
    Extract,
    Phewas,
    Predict,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Synth,
        Stage::Train,
        Stage::Infer,
        Stage::Extract,
        Stage::Phewas,
        Stage::Predict,
        Stage::Report,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Train => "train",
            Stage::Infer => "infer",
            Stage::Extract => "extract",
            Stage::Phewas => "phewas",
            Stage::Predict => "predict",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn run_stage(stage: Stage, cfg: &RunConfig) -> Result<Manifest> {
    cfg.validate()?;
    let ctx = Ctx::new(cfg)?;
    let m = match stage {
        Stage::Synth => synth_stage(&ctx)?,
        Stage::Train => train_stage(&ctx)?,
        Stage::Infer => infer_stage(&ctx)?,
        Stage::Extract => extract_stage(&ctx)?,
        Stage::Phewas => phewas_stage(&ctx)?,
        Stage::Predict => predict_stage(&ctx)?,
        Stage::Report => report_stage(&ctx)?,
    };
    let path = m.write(&ctx.out)?;
    log::info!("{stage}: wrote {} outputs, manifest {}", m.outputs.len(), path.display());
    Ok(m)
}

pub fn run_all(cfg: &RunConfig) -> Result<Vec<Manifest>> {
    Stage::ALL.into_iter().map(|s| run_stage(s, cfg)).collect()
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    out: PathBuf,
}

impl<'a> Ctx<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self> {
        std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
        Ok(Ctx {
            cfg,
            out: cfg.out_dir.clone(),
        })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    /// A configured input, else the synth stage's file (which must exist).
    fn input(&self, configured: &Option<PathBuf>, synth_rel: &str) -> Result<PathBuf> {
        if let Some(p) = configured {
            if !p.exists() {
                return Err(Error::InvalidInput(format!("configured input {} does not exist", p.display())));
            }
            return Ok(p.clone());
        }
        let p = self.path(synth_rel);
        if !p.exists() {
            return Err(Error::MissingArtifact {
                stage: Stage::Synth.to_string(),
                path: p,
            });
        }
        Ok(p)
    }

    /// An output of an earlier stage; absence names that stage.
    fn upstream(&self, stage: Stage, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if !p.exists() {
            return Err(Error::MissingArtifact {
                stage: stage.to_string(),
                path: p,
            });
        }
        Ok(p)
    }

    fn train_cohort(&self) -> Result<PathBuf> {
        self.input(&self.cfg.train_cohort, paths::TRAIN_COHORT)
    }

    fn infer_cohort(&self) -> Result<PathBuf> {
        self.input(&self.cfg.infer_cohort, paths::INFER_COHORT)
    }

    fn cohort_chain(&self) -> Result<String> {
        let t = sha256_file(&self.train_cohort()?)?;
        let i = sha256_file(&self.infer_cohort()?)?;
        Ok(chain_id(&t, &i))
    }

    /// Reads upstream manifests, warns on stale outputs and returns their
    /// shared chain id.
    fn upstream_manifests(&self, stages: &[Stage]) -> Result<(Vec<Manifest>, String)> {
        let ms: Vec<Manifest> = stages
            .iter()
            .map(|s| Manifest::read(&self.out, s.as_str()))
            .collect::<Result<_>>()?;
        for m in &ms {
            m.check_outputs(&self.out)?;
        }
        let refs: Vec<&Manifest> = ms.iter().collect();
        let chain = common_chain(&refs)?;
        Ok((ms, chain))
    }

    fn manifest(
        &self,
        stage: Stage,
        chain: String,
        upstream: &[Stage],
        seeds: &[(&str, u64)],
        keys: &[&str],
        inputs: &[PathBuf],
        outputs: &[PathBuf],
    ) -> Result<Manifest> {
        let parameters: BTreeMap<String, String> = keys
            .iter()
            .map(|k| (k.to_string(), self.cfg.get(k).unwrap_or_default()))
            .collect();
        Ok(Manifest {
            stage: stage.to_string(),
            chain_id: chain,
            upstream: upstream.iter().map(|s| s.to_string()).collect(),
            seeds: seeds.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            parameters,
            inputs: digest_files(&self.out, inputs)?,
            outputs: digest_files(&self.out, outputs)?,
        })
    }
}

/// Artifact locations relative to the output directory.
pub mod paths {
    pub const TRAIN_COHORT: &str = "synth/train_cohort.jsonl";
    pub const INFER_COHORT: &str = "synth/infer_cohort.jsonl";
    pub const CLASSES: &str = "synth/classes.csv";
    pub const PHECODE_MAP: &str = "synth/phecode_map.csv";
    pub const LEXICON: &str = "synth/lexicon.csv";
    pub const ABBREVIATIONS: &str = "synth/abbreviations.csv";
    pub const ALLOWLIST: &str = "synth/allowlist.csv";
    pub const NEGATION_TRIGGERS: &str = "synth/negation_triggers.csv";
    pub const PHECODE_CATEGORIES: &str = "synth/phecode_categories.csv";
    pub const SPEC: &str = "synth/spec.json";
    pub const TRAIN_TRUTH: &str = "synth/truth/train_truth.csv";
    pub const INFER_TRUTH: &str = "synth/truth/infer_truth.csv";

    pub const MODEL: &str = "train/model.json";
    pub const TRAIN_REPORT: &str = "train/train_report.json";

    pub const INFERENCE: &str = "infer/inference.jsonl";
    pub const TRAIN_PROBABILITIES: &str = "infer/train_probabilities.csv";
    pub const INFER_PROBABILITIES: &str = "infer/infer_probabilities.csv";

    pub const PHENOTYPES: &str = "extract/phenotypes.csv";
    pub const CONCEPTS: &str = "extract/concepts.csv";
    pub const CONCEPT_COUNTS: &str = "extract/concept_counts.csv";
    pub const EXTRACT_STATS: &str = "extract/extract_stats.json";

    pub const RESULTS: &str = "phewas/results.csv";
    pub const SKIPPED: &str = "phewas/skipped.csv";
    pub const COLLAPSE: &str = "phewas/collapse.csv";
    pub const GRANULARITY: &str = "phewas/granularity.csv";
    pub const GRANULARITY_TESTS: &str = "phewas/granularity_tests.csv";
    pub const GROUPS: &str = "phewas/groups.csv";
    pub const GROUP_MEASURES: &str = "phewas/group_measures.csv";
    pub const MIXED_UNIFORM: &str = "phewas/mixed_uniform.csv";
    pub const MIXED_UNIFORM_TESTS: &str = "phewas/mixed_uniform_tests.csv";

    pub const BENCHMARK: &str = "predict/benchmark.csv";
    pub const BENCHMARK_LONG: &str = "predict/benchmark_long.csv";
    pub const SPLIT: &str = "predict/split.csv";
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    create_parent(path)?;
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn flush(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// The synthetic training-cohort spec for a configuration.
pub fn train_spec(cfg: &RunConfig) -> CohortSpec {
    CohortSpec::desk_default(cfg.train_subjects, cfg.seeds().train_cohort)
}

/// The inference-cohort spec: shifted prevalences, no labels, subject ids
/// after the training cohort's.
pub fn infer_spec(cfg: &RunConfig) -> Result<CohortSpec> {
    let mut t = train_spec(cfg);
    t.n_subjects = cfg.infer_subjects;
    let offset = t.subject_id_offset + cfg.train_subjects as u64;
    t.shifted("infer", &cfg.shift, cfg.seeds().infer_cohort, offset)
}

fn write_truth(path: &Path, truth: &[GroundTruth]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["record_id", "subject_id", "classes", "subtypes"])?;
    for t in truth {
        let classes: Vec<String> = t.classes.iter().map(|c| c.to_string()).collect();
        let subs: Vec<String> = t.subtypes.iter().map(|(c, s)| format!("{c}:{s}")).collect();
        w.write_record([t.record_id.to_string(), t.subject_id.to_string(), classes.join(";"), subs.join(";")])?;
    }
    flush(w, path)
}

fn synth_stage(ctx: &Ctx) -> Result<Manifest> {
    let cfg = ctx.cfg;
    let spec = train_spec(cfg);
    let ispec = infer_spec(cfg)?;
    spec.validate()?;
    ispec.validate()?;
    let mut outputs = Vec::new();
    let mut emit = |rel: &str| -> PathBuf {
        let p = ctx.path(rel);
        outputs.push(p.clone());
        p
    };

    for (s, cohort_rel, truth_rel) in [
        (&spec, paths::TRAIN_COHORT, paths::TRAIN_TRUTH),
        (&ispec, paths::INFER_COHORT, paths::INFER_TRUTH),
    ] {
        let cohort = synth::generate(s)?;
        log::info!("{}: {} subjects, {} records", s.name, s.n_subjects, cohort.records.len());
        let p = emit(cohort_rel);
        create_parent(&p)?;
        write_cohort(&p, &cohort.records)?;
        write_truth(&emit(truth_rel), &cohort.truth)?;
    }
    write_class_names(&emit(paths::CLASSES), &spec.class_names())?;
    let mapping = synth::phecode_mapping(&spec)?;
    mapping.write_csv(&emit(paths::PHECODE_MAP))?;
    let lex = synth::lexicon(&spec)?;
    lex.write_csv(&emit(paths::LEXICON), &emit(paths::ABBREVIATIONS))?;
    write_allowlist(&emit(paths::ALLOWLIST), &synth::allowlist(&spec))?;
    NegationRules::default().write_csv(&emit(paths::NEGATION_TRIGGERS))?;
    write_categories(&emit(paths::PHECODE_CATEGORIES), &synth::phecode_categories(&spec))?;
    write_json(&emit(paths::SPEC), &[&spec, &ispec])?;

    let chain = chain_id(
        &sha256_file(&ctx.path(paths::TRAIN_COHORT))?,
        &sha256_file(&ctx.path(paths::INFER_COHORT))?,
    );
    let s = cfg.seeds();
    ctx.manifest(
        Stage::Synth,
        chain,
        &[],
        &[("train_cohort", s.train_cohort), ("infer_cohort", s.infer_cohort)],
        &["seed", "train_subjects", "infer_subjects", "shift"],
        &[],
        &outputs,
    )
}

fn load_first_ecgs(path: &Path) -> Result<Vec<CohortRecord>> {
    let loaded = load_cohort(path)?;
    let n = loaded.records.len();
    let records = first_ecg_filter(loaded.records);
    log::info!("{}: {} records, {} first ECGs", path.display(), n, records.len());
    if records.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no usable records", path.display())));
    }
    Ok(records)
}

fn model_config(cfg: &RunConfig) -> ModelConfig {
    let s = cfg.seeds();
    ModelConfig {
        branches: cfg.branch_configs(),
        train: TrainConfig {
            epochs: cfg.epochs,
            step: cfg.step,
            weights: LossWeights {
                cluster: cfg.lambda_cluster,
                separation: cfg.lambda_separation,
            },
            seed: s.train,
        },
        fusion: FusionTrainConfig {
            epochs: cfg.fusion_epochs,
            step: cfg.fusion_step,
            l2: cfg.fusion_l2,
        },
        extractor_seed: s.extractor,
    }
}

const MODEL_KEYS: [&str; 11] = [
    "seed",
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
];

fn train_stage(ctx: &Ctx) -> Result<Manifest> {
    let cfg = ctx.cfg;
    let cohort_path = ctx.train_cohort()?;
    let classes_path = ctx.input(&cfg.classes, paths::CLASSES)?;
    let chain = ctx.cohort_chain()?;
    let class_names = read_class_names(&classes_path)?;
    let records = load_first_ecgs(&cohort_path)?;
    let channels = records[0].signal.channels;
    let labels = label_masks(&records, class_names.len())?;
    let mc = model_config(cfg);
    let extractors = build_extractors(&mc.branches, channels, mc.extractor_seed)?;
    let latents = encode_all(&extractors, &records)?;
    drop(records);
    let (model, report) = train_model_on_latents(&latents, &labels, &class_names, channels, &mc)?;
    let model_path = ctx.path(paths::MODEL);
    create_parent(&model_path)?;
    write_model(&model_path, &model)?;
    let report_path = ctx.path(paths::TRAIN_REPORT);
    write_json(&report_path, &report)?;
    let s = cfg.seeds();
    ctx.manifest(
        Stage::Train,
        chain,
        &[],
        &[("extractor", s.extractor), ("train", s.train)],
        &MODEL_KEYS,
        &[cohort_path, classes_path],
        &[model_path, report_path],
    )
}

fn read_model_checked(ctx: &Ctx) -> Result<(ProtoModel, PathBuf)> {
    let p = ctx.upstream(Stage::Train, paths::MODEL)?;
    Ok((read_model(&p)?, p))
}

fn probability_rows(inf: &CohortInference) -> Vec<(u64, u64, Vec<f64>)> {
    inf.outputs
        .iter()
        .zip(&inf.subject_ids)
        .map(|(o, &s)| (o.record_id, s, o.class_probs.clone()))
        .collect()
}

fn infer_stage(ctx: &Ctx) -> Result<Manifest> {
    let (_, chain) = ctx.upstream_manifests(&[Stage::Train])?;
    let own = ctx.cohort_chain()?;
    if own != chain {
        return Err(Error::ChainMismatch(
            "the model was trained from different cohort files; rerun `train`".into(),
        ));
    }
    let (model, model_path) = read_model_checked(ctx)?;
    let train_path = ctx.train_cohort()?;
    let infer_path = ctx.infer_cohort()?;

    let train_inf = run_inference(&model, &load_first_ecgs(&train_path)?)?;
    let train_probs = ctx.path(paths::TRAIN_PROBABILITIES);
    write_probabilities(&train_probs, &model.class_names, &probability_rows(&train_inf))?;
    drop(train_inf);

    let inf = run_inference(&model, &load_first_ecgs(&infer_path)?)?;
    let infer_probs = ctx.path(paths::INFER_PROBABILITIES);
    write_probabilities(&infer_probs, &model.class_names, &probability_rows(&inf))?;
    let lines: Vec<InferenceLine> = inf
        .outputs
        .into_iter()
        .zip(inf.subject_ids)
        .zip(inf.embeddings)
        .map(|((o, subject_id), embedding)| InferenceLine {
            record_id: o.record_id,
            subject_id,
            class_probs: o.class_probs,
            similarities: o.similarities,
            best: o.best,
            embedding,
        })
        .collect();
    let inference = ctx.path(paths::INFERENCE);
    write_jsonl(&inference, &lines)?;
    ctx.manifest(
        Stage::Infer,
        chain,
        &[Stage::Train],
        &[],
        &[],
        &[model_path, train_path, infer_path],
        &[inference, train_probs, infer_probs],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct ExtractStats {
    records: usize,
    unmapped_codes: usize,
    mapped_phecodes: usize,
    retained_phecodes: usize,
    concepts_seen: usize,
    concepts_retained: usize,
}

fn extract_stage(ctx: &Ctx) -> Result<Manifest> {
    let cfg = ctx.cfg;
    let chain = ctx.cohort_chain()?;
    let infer_path = ctx.infer_cohort()?;
    let map_path = ctx.input(&cfg.phecode_map, paths::PHECODE_MAP)?;
    let lex_path = ctx.input(&cfg.lexicon, paths::LEXICON)?;
    let abbr_path = ctx.input(&cfg.abbreviations, paths::ABBREVIATIONS)?;
    let allow_path = ctx.input(&cfg.allowlist, paths::ALLOWLIST)?;
    let neg_path = ctx.input(&cfg.negation_triggers, paths::NEGATION_TRIGGERS)?;

    let records = load_first_ecgs(&infer_path)?;
    let mapping = PhecodeMapping::read_csv(&map_path)?;
    let ph = phenotypes(&records, &mapping, cfg.prevalence_threshold, cfg.prevalence_unit)?;
    let lexicon = ConceptLexicon::read_csv(&lex_path, &abbr_path)?;
    let rules = NegationRules::read_csv(&neg_path, cfg.negation_window)?;
    let allow = read_allowlist(&allow_path)?;
    let con = concepts(&records, &lexicon, &rules, cfg.min_concept_count, &allow, cfg.prevalence_threshold)?;

    let pheno_path = ctx.path(paths::PHENOTYPES);
    write_phenotypes(&pheno_path, &ph.matrix)?;
    let concept_path = ctx.path(paths::CONCEPTS);
    write_concepts(&concept_path, &con.matrix)?;
    let counts_path = ctx.path(paths::CONCEPT_COUNTS);
    let mut w = csv_writer(&counts_path)?;
    w.write_record(["cui", "affirmed_mentions", "allowlisted", "retained"])?;
    for (cui, n) in &con.counts {
        w.write_record([
            cui.clone(),
            n.to_string(),
            allow.contains(cui).to_string(),
            con.retained.contains(cui).to_string(),
        ])?;
    }
    flush(w, &counts_path)?;
    let stats_path = ctx.path(paths::EXTRACT_STATS);
    write_json(
        &stats_path,
        &ExtractStats {
            records: records.len(),
            unmapped_codes: ph.stats.unmapped_codes,
            mapped_phecodes: ph.n_mapped_phecodes,
            retained_phecodes: ph.matrix.phecodes.len(),
            concepts_seen: con.counts.len(),
            concepts_retained: con.retained.len(),
        },
    )?;
    ctx.manifest(
        Stage::Extract,
        chain,
        &[],
        &[],
        &["prevalence_threshold", "prevalence_unit", "min_concept_count", "negation_window"],
        &[infer_path, map_path, lex_path, abbr_path, allow_path, neg_path],
        &[pheno_path, concept_path, counts_path, stats_path],
    )
}

/// Everything the association and prediction stages share.
struct Analysis {
    model: ProtoModel,
    lines: Vec<InferenceLine>,
    collapse: Collapse,
    features: FeatureMatrix,
    phenotypes: crate::ingest::PhenotypeMatrix,
    inputs: Vec<PathBuf>,
    chain: String,
}

fn load_analysis(ctx: &Ctx) -> Result<Analysis> {
    let (_, chain) = ctx.upstream_manifests(&[Stage::Train, Stage::Infer, Stage::Extract])?;
    let (model, model_path) = read_model_checked(ctx)?;
    let inf_path = ctx.upstream(Stage::Infer, paths::INFERENCE)?;
    let pheno_path = ctx.upstream(Stage::Extract, paths::PHENOTYPES)?;
    let concept_path = ctx.upstream(Stage::Extract, paths::CONCEPTS)?;
    let lines: Vec<InferenceLine> = read_jsonl(&inf_path)?;
    let phenotypes = read_phenotypes(&pheno_path)?;
    let concepts = read_concepts(&concept_path)?;
    let ids: Vec<u64> = lines.iter().map(|l| l.record_id).collect();
    if ids != phenotypes.record_ids || ids != concepts.record_ids {
        return Err(Error::InvalidInput(
            "inference and extraction outputs cover different records; rerun `infer` and `extract`".into(),
        ));
    }
    let protos: Vec<_> = model.prototypes().cloned().collect();
    let collapse = collapse_redundant(&protos);
    let outputs: Vec<_> = lines.iter().map(InferenceLine::output).collect();
    let features = build_feature_sets(&outputs, &model, &collapse, Some(&concepts), ctx.cfg.fusion_threshold)?;
    Ok(Analysis {
        model,
        lines,
        collapse,
        features,
        phenotypes,
        inputs: vec![model_path, inf_path, pheno_path, concept_path],
        chain,
    })
}

fn write_comparison_rows(
    dist: &mut csv::Writer<std::fs::File>,
    tests: &mut csv::Writer<std::fs::File>,
    scope: &str,
    c: &Comparison,
) -> Result<()> {
    for d in &c.distributions {
        dist.write_record([
            scope.to_string(),
            d.granularity.to_string(),
            d.odds_ratios.len().to_string(),
            d.median.to_string(),
            d.magnitude_median.to_string(),
            String::new(),
        ])?;
    }
    for (g, why) in &c.excluded {
        dist.write_record([scope.to_string(), g.to_string(), "0".into(), String::new(), String::new(), why.clone()])?;
    }
    for t in &c.pairwise {
        tests.write_record([
            scope.to_string(),
            t.a.to_string(),
            t.b.to_string(),
            t.test.statistic.to_string(),
            t.test.p_value.to_string(),
            t.degenerate.to_string(),
        ])?;
    }
    Ok(())
}

fn write_granularity(ctx: &Ctx, gc: &GranularityComparison) -> Result<(PathBuf, PathBuf)> {
    let dist_path = ctx.path(paths::GRANULARITY);
    let tests_path = ctx.path(paths::GRANULARITY_TESTS);
    let mut dist = csv_writer(&dist_path)?;
    let mut tests = csv_writer(&tests_path)?;
    dist.write_record(["scope", "granularity", "n_significant", "median_or", "median_or_magnitude", "excluded"])?;
    tests.write_record(["scope", "a", "b", "u", "p", "degenerate"])?;
    write_comparison_rows(&mut dist, &mut tests, "overall", &gc.overall)?;
    for (cat, c) in &gc.by_category {
        write_comparison_rows(&mut dist, &mut tests, cat, c)?;
    }
    flush(dist, &dist_path)?;
    flush(tests, &tests_path)?;
    Ok((dist_path, tests_path))
}

fn phewas_stage(ctx: &Ctx) -> Result<Manifest> {
    let cfg = ctx.cfg;
    let a = load_analysis(ctx)?;
    let cats_path = ctx.input(&cfg.phecode_categories, paths::PHECODE_CATEGORIES)?;
    let categories = read_categories(&cats_path)?;
    let scan = phewas_scan(&a.features, &a.phenotypes, cfg.q_threshold)?;
    log::info!(
        "scan: {} tests, {} significant, {} columns skipped",
        scan.results.len(),
        scan.results.iter().filter(|r| r.significant).count(),
        scan.skipped.len()
    );
    let mut outputs = Vec::new();

    let results_path = ctx.path(paths::RESULTS);
    create_parent(&results_path)?;
    write_results_csv(&results_path, &scan.results)?;
    outputs.push(results_path);

    let skipped_path = ctx.path(paths::SKIPPED);
    let mut w = csv_writer(&skipped_path)?;
    w.write_record(["granularity", "name", "reason"])?;
    for s in &scan.skipped {
        w.write_record([s.granularity.map(|g| g.to_string()).unwrap_or_default(), s.name.clone(), s.reason.clone()])?;
    }
    flush(w, &skipped_path)?;
    outputs.push(skipped_path);

    let collapse_path = ctx.path(paths::COLLAPSE);
    let ids = a.model.prototype_ids();
    let mut w = csv_writer(&collapse_path)?;
    w.write_record(["prototype", "representative"])?;
    for (i, &rep) in a.collapse.alias.iter().enumerate() {
        w.write_record([ids[i].to_string(), ids[rep].to_string()])?;
    }
    flush(w, &collapse_path)?;
    outputs.push(collapse_path);

    let gc = granularity_comparison(&scan.results, cfg.or_include_nonsignificant, Some(&categories));
    let (d, t) = write_granularity(ctx, &gc)?;
    outputs.extend([d, t]);

    let groups = classify_significance_groups(&scan.results, &a.model, &a.collapse, cfg.significance_rule);
    let groups_path = ctx.path(paths::GROUPS);
    let mut w = csv_writer(&groups_path)?;
    w.write_record(["branch", "class_id", "class", "phecode", "status", "members"])?;
    for g in &groups {
        let members: Vec<String> = g
            .members
            .iter()
            .map(|m| format!("{}:{}:{}", m.id, if m.significant { "S" } else { "n" }, m.odds_ratio))
            .collect();
        w.write_record([
            g.branch.to_string(),
            g.class_id.to_string(),
            a.model.class_names[g.class_id].clone(),
            g.phecode.clone(),
            g.status.as_str().to_string(),
            members.join(";"),
        ])?;
    }
    flush(w, &groups_path)?;
    outputs.push(groups_path);

    let mu = mixed_uniform_analysis(&groups, &scan.results, &a.model, &a.collapse);
    for n in &mu.notes {
        log::warn!("{n}");
    }
    let measures_path = ctx.path(paths::GROUP_MEASURES);
    let mut w = csv_writer(&measures_path)?;
    w.write_record(["branch", "class_id", "phecode", "status", "distance", "odds_ratio"])?;
    for m in &mu.measures {
        w.write_record([
            m.branch.to_string(),
            m.class_id.to_string(),
            m.phecode.clone(),
            m.status.as_str().to_string(),
            m.distance.to_string(),
            m.odds_ratio.map(|o| o.to_string()).unwrap_or_default(),
        ])?;
    }
    flush(w, &measures_path)?;
    outputs.push(measures_path);

    let summary_path = ctx.path(paths::MIXED_UNIFORM);
    let mut w = csv_writer(&summary_path)?;
    w.write_record(["status", "n", "mean", "std", "ci_lo", "ci_hi"])?;
    for s in &mu.summary {
        w.write_record([
            s.status.as_str().to_string(),
            s.n.to_string(),
            s.mean.to_string(),
            s.std.to_string(),
            s.ci_lo.to_string(),
            s.ci_hi.to_string(),
        ])?;
    }
    flush(w, &summary_path)?;
    outputs.push(summary_path);

    let tests_path = ctx.path(paths::MIXED_UNIFORM_TESTS);
    let mut w = csv_writer(&tests_path)?;
    w.write_record(["test", "statistic", "p", "note"])?;
    for (name, t) in [("mann-whitney", &mu.mann_whitney), ("spearman", &mu.spearman)] {
        match t {
            Some(t) => w.write_record([name.to_string(), t.statistic.to_string(), t.p_value.to_string(), String::new()])?,
            None => {
                let note = mu.notes.iter().find(|n| n.starts_with(name)).cloned().unwrap_or_default();
                w.write_record([name.to_string(), String::new(), String::new(), note])?
            }
        }
    }
    flush(w, &tests_path)?;
    outputs.push(tests_path);

    let mut inputs = a.inputs;
    inputs.push(cats_path);
    ctx.manifest(
        Stage::Phewas,
        a.chain,
        &[Stage::Train, Stage::Infer, Stage::Extract],
        &[],
        &["fusion_threshold", "q_threshold", "significance_rule", "or_include_nonsignificant"],
        &inputs,
        &outputs,
    )
}

fn predict_stage(ctx: &Ctx) -> Result<Manifest> {
    let cfg = ctx.cfg;
    let a = load_analysis(ctx)?;
    let map_path = ctx.input(&cfg.phecode_map, paths::PHECODE_MAP)?;
    let descriptions = PhecodeMapping::read_csv(&map_path)?.descriptions();
    let subject_ids: Vec<u64> = a.lines.iter().map(|l| l.subject_id).collect();
    let sims: Vec<Vec<f64>> = a.lines.iter().map(|l| l.similarities.clone()).collect();
    let embeddings: Vec<Vec<f64>> = a.lines.iter().map(|l| l.embedding.clone()).collect();
    let inputs = BenchmarkInputs {
        subject_ids: &subject_ids,
        features: &a.features,
        similarities: &sims,
        embeddings: Some(&embeddings),
        phenotypes: &a.phenotypes,
        descriptions: &descriptions,
    };
    let phecodes = if cfg.predict_phecodes.is_empty() {
        a.phenotypes.phecodes.clone()
    } else {
        cfg.predict_phecodes.clone()
    };
    let s = cfg.seeds();
    let bc = BenchmarkConfig {
        test_fraction: cfg.test_fraction,
        split_seed: s.split,
        bootstrap_resamples: cfg.bootstrap_resamples,
        bootstrap_seed: s.bootstrap,
        logistic: LogisticConfig {
            l2: cfg.logistic_l2,
            max_iter: cfg.logistic_max_iter,
            ..LogisticConfig::default()
        },
        combined_source: cfg.combined_source,
    };
    let table = run_benchmark(&inputs, &phecodes, &FeatureSet::ALL, &bc)?;

    let bench_path = ctx.path(paths::BENCHMARK);
    create_parent(&bench_path)?;
    write_benchmark_csv(&bench_path, &table)?;
    let long_path = ctx.path(paths::BENCHMARK_LONG);
    let mut w = csv_writer(&long_path)?;
    w.write_record(["phecode", "feature_set", "auc", "ci_lo", "ci_hi", "error"])?;
    for r in &table.rows {
        for (set, cell) in table.feature_sets.iter().zip(&r.cells) {
            let rec = match cell {
                Cell::Ok(e) => [
                    r.phecode.clone(),
                    set.to_string(),
                    e.auc.to_string(),
                    e.ci_lo.to_string(),
                    e.ci_hi.to_string(),
                    String::new(),
                ],
                Cell::Failed(msg) => [r.phecode.clone(), set.to_string(), String::new(), String::new(), String::new(), msg.clone()],
            };
            w.write_record(&rec)?;
        }
    }
    flush(w, &long_path)?;
    let split_path = ctx.path(paths::SPLIT);
    let mut w = csv_writer(&split_path)?;
    w.write_record(["subject_id", "side"])?;
    for sid in &table.split.train {
        w.write_record([sid.to_string(), "train".into()])?;
    }
    for sid in &table.split.test {
        w.write_record([sid.to_string(), "test".into()])?;
    }
    flush(w, &split_path)?;

    let mut ins = a.inputs;
    ins.push(map_path);
    ctx.manifest(
        Stage::Predict,
        a.chain,
        &[Stage::Train, Stage::Infer, Stage::Extract],
        &[("split", s.split), ("bootstrap", s.bootstrap)],
        &[
            "fusion_threshold",
            "test_fraction",
            "bootstrap_resamples",
            "logistic_l2",
            "logistic_max_iter",
            "combined_source",
            "predict_phecodes",
        ],
        &ins,
        &[bench_path, long_path, split_path],
    )
}

fn report_stage(ctx: &Ctx) -> Result<Manifest> {
    let cfg = ctx.cfg;
    let upstream = [Stage::Train, Stage::Infer, Stage::Extract, Stage::Phewas, Stage::Predict];
    let (_, chain) = ctx.upstream_manifests(&upstream)?;
    let (model, model_path) = read_model_checked(ctx)?;
    let train_probs = ctx.upstream(Stage::Infer, paths::TRAIN_PROBABILITIES)?;
    let infer_probs = ctx.upstream(Stage::Infer, paths::INFER_PROBABILITIES)?;
    let results_path = ctx.upstream(Stage::Phewas, paths::RESULTS)?;
    let measures_path = ctx.upstream(Stage::Phewas, paths::GROUP_MEASURES)?;
    let bench_path = ctx.upstream(Stage::Predict, paths::BENCHMARK_LONG)?;
    let cats_path = ctx.input(&cfg.phecode_categories, paths::PHECODE_CATEGORIES)?;

    let results: Vec<AssociationResult> = read_results_csv(&results_path)?;
    let inputs = report::ReportInputs {
        model: &model,
        train_probabilities: read_probabilities(&train_probs)?,
        infer_probabilities: read_probabilities(&infer_probs)?,
        results: &results,
        group_measures: report::read_group_measures(&measures_path)?,
        benchmark: report::read_benchmark_long(&bench_path)?,
        categories: read_categories(&cats_path)?,
        fusion_threshold: cfg.fusion_threshold,
    };
    let outputs = report::write_report(&ctx.out.join("report"), &inputs)?;
    ctx.manifest(
        Stage::Report,
        chain,
        &upstream,
        &[],
        &["fusion_threshold"],
        &[model_path, train_probs, infer_probs, results_path, measures_path, bench_path, cats_path],
        &outputs,
    )
}
