//! In-memory pipeline steps shared by the CLI stages and the tests.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assoc::FeatureMatrix;
use crate::cohort::CohortRecord;
use crate::concept::{concept_matrix, extract_corpus, frequency_filter, mention_counts, ConceptLexicon, NegationRules};
use crate::error::{Error, Result};
use crate::ingest::{
    map_to_phecodes, prevalence_filter, subject_prevalence_filter, MappingStats, PhecodeMapping, PhenotypeMatrix,
    PrevalenceUnit,
};
use crate::proto::{
    encode, infer_batch, project_prototypes, similarity, train_fusion_head, train_prototypes, BranchConfig,
    BranchId, BranchModel, FeatureExtractor, FusionTrainConfig, InferenceOutput, LossBreakdown, ProtoModel,
    RecordLatents, TrainConfig, MODEL_FORMAT_VERSION,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub branches: Vec<BranchConfig>,
    pub train: TrainConfig,
    pub fusion: FusionTrainConfig,
    pub extractor_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            branches: BranchConfig::defaults(),
            train: TrainConfig::default(),
            fusion: FusionTrainConfig::default(),
            extractor_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchTrainReport {
    pub branch: BranchId,
    pub loss_history: Vec<LossBreakdownRow>,
    pub frozen_classes: Vec<usize>,
    /// Flattened (within branch) indices of prototypes with no eligible patch.
    pub unprojected: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdownRow {
    pub total: f64,
    pub bce: f64,
    pub cluster: f64,
    pub separation: f64,
}

impl From<LossBreakdown> for LossBreakdownRow {
    fn from(l: LossBreakdown) -> Self {
        LossBreakdownRow {
            total: l.total,
            bce: l.bce,
            cluster: l.cluster,
            separation: l.separation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub n_records: usize,
    pub branches: Vec<BranchTrainReport>,
}

pub fn build_extractors(branches: &[BranchConfig], channels: usize, seed: u64) -> Result<Vec<FeatureExtractor>> {
    branches.iter().map(|b| FeatureExtractor::new(b, channels, seed)).collect()
}

pub fn encode_all(extractors: &[FeatureExtractor], records: &[CohortRecord]) -> Result<Vec<RecordLatents>> {
    records
        .par_iter()
        .map(|r| encode(extractors, r.record_id, &r.signal))
        .collect()
}

/// Label masks from annotated records; errors if any record is unannotated.
pub fn label_masks(records: &[CohortRecord], num_classes: usize) -> Result<Vec<Vec<bool>>> {
    records
        .iter()
        .map(|r| {
            if r.labels.is_none() {
                return Err(Error::InvalidInput(format!(
                    "record {} carries no annotated labels; training needs an annotated cohort",
                    r.record_id
                )));
            }
            Ok(r.label_mask(num_classes))
        })
        .collect()
}

/// Train prototypes branch by branch on latents, project them onto
/// class-positive training patches, then fit the fusion head on the
/// projected similarities.
pub fn train_model_on_latents(
    latents: &[RecordLatents],
    labels: &[Vec<bool>],
    class_names: &[String],
    channels: usize,
    cfg: &ModelConfig,
) -> Result<(ProtoModel, TrainReport)> {
    let num_classes = class_names.len();
    let mut branches = Vec::new();
    let mut reports = Vec::new();
    for bc in &cfg.branches {
        let tc = TrainConfig {
            seed: crate::seed::derive_seed(cfg.train.seed, bc.branch.index() as u64),
            ..cfg.train
        };
        let outcome = train_prototypes(latents, labels, bc, num_classes, &tc)?;
        let projection = project_prototypes(&outcome.prototypes, latents, labels);
        log::info!(
            "{}: loss {:.4} -> {:.4} over {} accepted steps",
            bc.branch,
            outcome.loss_history.first().map_or(f64::NAN, |l| l.total),
            outcome.loss_history.last().map_or(f64::NAN, |l| l.total),
            outcome.loss_history.len().saturating_sub(1)
        );
        reports.push(BranchTrainReport {
            branch: bc.branch,
            loss_history: outcome.loss_history.into_iter().map(Into::into).collect(),
            frozen_classes: outcome.frozen_classes,
            unprojected: projection.unprojected,
        });
        branches.push(BranchModel {
            config: bc.clone(),
            prototypes: projection.prototypes,
        });
    }
    let mut model = ProtoModel {
        format_version: MODEL_FORMAT_VERSION,
        class_names: class_names.to_vec(),
        channels,
        extractor_seed: cfg.extractor_seed,
        branches,
        head: crate::proto::FusionHead::zeros(num_classes, 0),
    };
    let sims = similarity_matrix(latents, &model)?;
    model.head = train_fusion_head(&sims, labels, num_classes, &cfg.fusion)?;
    Ok((
        model,
        TrainReport {
            n_records: latents.len(),
            branches: reports,
        },
    ))
}

/// Similarity of every record to every prototype, flattened model order.
pub fn similarity_matrix(latents: &[RecordLatents], model: &ProtoModel) -> Result<Vec<Vec<f64>>> {
    latents
        .par_iter()
        .map(|l| {
            let mut row = Vec::with_capacity(model.num_prototypes());
            for b in &model.branches {
                let map = l
                    .get(b.config.branch)
                    .ok_or_else(|| Error::MissingBranch(b.config.branch.to_string()))?;
                for p in &b.prototypes {
                    row.push(similarity(p, map)?);
                }
            }
            Ok(row)
        })
        .collect()
}

/// Mean latent patch per branch, concatenated in model branch order.
pub fn pooled_embedding(latents: &RecordLatents, model: &ProtoModel) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for b in &model.branches {
        let map = latents
            .get(b.config.branch)
            .ok_or_else(|| Error::MissingBranch(b.config.branch.to_string()))?;
        let p = map.positions().max(1) as f64;
        let mut mean = vec![0.0; map.dim];
        for patch in map.iter_patches() {
            for (m, v) in mean.iter_mut().zip(patch) {
                *m += v / p;
            }
        }
        out.extend(mean);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortInference {
    pub record_ids: Vec<u64>,
    pub subject_ids: Vec<u64>,
    pub outputs: Vec<InferenceOutput>,
    pub embeddings: Vec<Vec<f64>>,
}

/// Encode and infer in chunks so only one chunk of latents is alive.
pub fn run_inference(model: &ProtoModel, records: &[CohortRecord]) -> Result<CohortInference> {
    let extractors = model.extractors()?;
    let mut outputs = Vec::with_capacity(records.len());
    let mut embeddings = Vec::with_capacity(records.len());
    for chunk in records.chunks(2048) {
        let latents = encode_all(&extractors, chunk)?;
        outputs.extend(infer_batch(&latents, model)?);
        for l in &latents {
            embeddings.push(pooled_embedding(l, model)?);
        }
    }
    Ok(CohortInference {
        record_ids: records.iter().map(|r| r.record_id).collect(),
        subject_ids: records.iter().map(|r| r.subject_id).collect(),
        outputs,
        embeddings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phenotypes {
    pub matrix: PhenotypeMatrix,
    pub stats: MappingStats,
    /// Columns before the prevalence filter.
    pub n_mapped_phecodes: usize,
}

pub fn phenotypes(
    records: &[CohortRecord],
    mapping: &PhecodeMapping,
    threshold: f64,
    unit: PrevalenceUnit,
) -> Result<Phenotypes> {
    let (matrix, stats) = map_to_phecodes(records, mapping);
    let n_mapped_phecodes = matrix.phecodes.len();
    let matrix = match unit {
        PrevalenceUnit::Admissions => prevalence_filter(&matrix, threshold)?,
        PrevalenceUnit::Subjects => {
            let subjects: Vec<u64> = records.iter().map(|r| r.subject_id).collect();
            subject_prevalence_filter(&matrix, &subjects, threshold)?
        }
    };
    Ok(Phenotypes {
        matrix,
        stats,
        n_mapped_phecodes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Concepts {
    pub matrix: FeatureMatrix,
    pub counts: BTreeMap<String, usize>,
    pub retained: BTreeSet<String>,
}

/// Concept matrix over `records`: CUIs with at least `min_count`
/// affirmed mentions in these reports, allowlisted, and present in at
/// least `prevalence` of records.
pub fn concepts(
    records: &[CohortRecord],
    lexicon: &ConceptLexicon,
    rules: &NegationRules,
    min_count: usize,
    allowlist: &BTreeSet<String>,
    prevalence: f64,
) -> Result<Concepts> {
    let reports: Vec<&str> = records.iter().map(|r| r.report.as_str()).collect();
    let corpus = extract_corpus(&reports, lexicon, rules);
    let counts = mention_counts(&corpus);
    let frequent = frequency_filter(&corpus, min_count, allowlist);
    let ids: Vec<u64> = records.iter().map(|r| r.record_id).collect();
    let full = concept_matrix(&ids, &corpus, &frequent)?;
    let n = ids.len();
    let keep: Vec<_> = full
        .columns
        .into_iter()
        .filter(|c| n > 0 && crate::ingest::passes(c.count(), n, prevalence))
        .collect();
    let retained = keep.iter().map(|c| c.name.clone()).collect();
    Ok(Concepts {
        matrix: FeatureMatrix::new(ids, keep)?,
        counts,
        retained,
    })
}
