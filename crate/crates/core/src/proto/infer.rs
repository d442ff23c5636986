use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::similarity_with_position;
use super::{cosine, norm, BranchId, LatentMap, ProtoModel, Prototype, PrototypeId, RecordLatents};
use crate::error::{Error, Result};

/// Max over positions of the cosine between the prototype and each patch.
pub fn similarity(p: &Prototype, m: &LatentMap) -> Result<f64> {
    if p.branch != m.branch {
        return Err(Error::InvalidInput(format!(
            "prototype branch {} vs latent branch {}",
            p.branch, m.branch
        )));
    }
    if p.vector.len() != m.dim {
        return Err(Error::InvalidInput(format!(
            "prototype dim {} vs latent dim {}",
            p.vector.len(),
            m.dim
        )));
    }
    Ok(similarity_with_position(&p.vector, norm(&p.vector), m).0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestMatch {
    pub branch: BranchId,
    /// Index into the model's flattened prototype list.
    pub prototype: usize,
    pub id: PrototypeId,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceOutput {
    pub record_id: u64,
    pub similarities: Vec<f64>,
    pub class_probs: Vec<f64>,
    pub best: Vec<BestMatch>,
}

/// Similarity vector, class probabilities and per-branch best prototype.
/// Nothing in the model is modified.
pub fn infer(latents: &RecordLatents, model: &ProtoModel) -> Result<InferenceOutput> {
    let mut similarities = Vec::with_capacity(model.num_prototypes());
    let mut best = Vec::with_capacity(model.branches.len());
    for branch in &model.branches {
        let map = latents
            .get(branch.config.branch)
            .ok_or_else(|| Error::MissingBranch(branch.config.branch.to_string()))?;
        let mut top: Option<BestMatch> = None;
        for p in &branch.prototypes {
            let s = similarity(p, map)?;
            let global = similarities.len();
            similarities.push(s);
            // strict > keeps the lowest (class, index) on ties
            if top.is_none_or(|t| s > t.similarity) {
                top = Some(BestMatch {
                    branch: branch.config.branch,
                    prototype: global,
                    id: p.id(),
                    similarity: s,
                });
            }
        }
        if let Some(t) = top {
            best.push(t);
        }
    }
    let class_probs = model.head.probabilities(&similarities);
    Ok(InferenceOutput {
        record_id: latents.record_id,
        similarities,
        class_probs,
        best,
    })
}

pub fn infer_batch(latents: &[RecordLatents], model: &ProtoModel) -> Result<Vec<InferenceOutput>> {
    latents.par_iter().map(|l| infer(l, model)).collect()
}

/// Analysis-only deduplication of prototypes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Collapse {
    /// For every prototype (flattened order), the index of its representative.
    pub alias: Vec<usize>,
    /// Distinct representatives in ascending order.
    pub representatives: Vec<usize>,
}

impl Collapse {
    pub fn is_identity(&self) -> bool {
        self.alias.iter().enumerate().all(|(i, &a)| i == a)
    }
}

/// Merge prototypes of the same branch and class that share a projection
/// source or are within cosine distance 1e-9; the lowest index represents
/// the group.
pub fn collapse_redundant(prototypes: &[Prototype]) -> Collapse {
    let mut alias: Vec<usize> = (0..prototypes.len()).collect();
    let mut representatives: Vec<usize> = Vec::new();
    for (j, p) in prototypes.iter().enumerate() {
        let rep = representatives.iter().copied().find(|&i| {
            let q = &prototypes[i];
            q.branch == p.branch
                && q.class_id == p.class_id
                && ((q.source.is_some() && q.source == p.source) || 1.0 - cosine(&q.vector, &p.vector) < 1e-9)
        });
        match rep {
            Some(i) => alias[j] = i,
            None => representatives.push(j),
        }
    }
    Collapse {
        alias,
        representatives,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proto::PatchSource;

    fn proto(class_id: usize, idx: usize, v: Vec<f64>, src: Option<(u64, usize)>) -> Prototype {
        Prototype {
            branch: BranchId::Partial2d,
            class_id,
            proto_index: idx,
            vector: v,
            source: src.map(|(r, p)| PatchSource { record_id: r, position: p }),
        }
    }

    fn map(patches: Vec<f64>, dim: usize) -> LatentMap {
        LatentMap {
            record_id: 0,
            branch: BranchId::Partial2d,
            dim,
            patches,
            degenerate: false,
        }
    }

    #[test]
    fn similarity_examples() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let m = map(vec![0.0, 1.0, h, h], 2);
        let s = similarity(&proto(0, 0, vec![1.0, 0.0], None), &m).unwrap();
        assert!((s - h).abs() < 1e-15);
        assert!((similarity(&proto(0, 0, vec![h, h], None), &m).unwrap() - 1.0).abs() < 1e-15);
        let orth = map(vec![0.0, 1.0, 0.0, 2.0], 2);
        assert_eq!(similarity(&proto(0, 0, vec![1.0, 0.0], None), &orth).unwrap(), 0.0);
    }

    #[test]
    fn zero_patch_contributes_zero() {
        let m = map(vec![0.0, 0.0, -1.0, 0.0], 2);
        assert_eq!(similarity(&proto(0, 0, vec![1.0, 0.0], None), &m).unwrap(), 0.0);
    }

    #[test]
    fn branch_mismatch_is_error() {
        let mut m = map(vec![1.0, 0.0], 2);
        m.branch = BranchId::Global2d;
        assert!(similarity(&proto(0, 0, vec![1.0, 0.0], None), &m).is_err());
    }

    #[test]
    fn collapse_identity_when_distinct() {
        let ps = vec![
            proto(0, 0, vec![1.0, 0.0], Some((1, 0))),
            proto(0, 1, vec![0.0, 1.0], Some((2, 0))),
        ];
        assert!(collapse_redundant(&ps).is_identity());
    }

    #[test]
    fn collapse_shared_source() {
        let ps = vec![
            proto(0, 0, vec![1.0, 0.0], Some((1, 3))),
            proto(0, 1, vec![1.0, 0.0], Some((1, 3))),
        ];
        let c = collapse_redundant(&ps);
        assert_eq!(c.alias, vec![0, 0]);
        assert_eq!(c.representatives, vec![0]);
    }

    #[test]
    fn collapse_mixed_five_with_two_duplicates() {
        let ps = vec![
            proto(0, 0, vec![1.0, 0.0, 0.0], Some((1, 0))),
            proto(0, 1, vec![0.0, 1.0, 0.0], Some((2, 0))),
            proto(0, 2, vec![1.0, 0.0, 0.0], Some((1, 0))),
            proto(1, 0, vec![0.0, 0.0, 1.0], Some((3, 1))),
            proto(1, 1, vec![0.0, 0.0, 1.0], Some((4, 2))),
        ];
        // index 2 shares index 0's source; index 4 is cosine-identical to 3
        let c = collapse_redundant(&ps);
        assert_eq!(c.representatives, vec![0, 1, 3]);
        assert_eq!(c.alias, vec![0, 1, 0, 3, 3]);
        let ps4: Vec<Prototype> = ps.iter().take(4).cloned().chain([proto(1, 1, vec![0.0, 1.0, 1.0], Some((4, 2)))]).collect();
        assert_eq!(collapse_redundant(&ps4).representatives.len(), 4);
    }

    #[test]
    fn different_class_never_merges() {
        let ps = vec![
            proto(0, 0, vec![1.0, 0.0], Some((1, 0))),
            proto(1, 0, vec![1.0, 0.0], Some((1, 0))),
        ];
        assert!(collapse_redundant(&ps).is_identity());
    }
}
