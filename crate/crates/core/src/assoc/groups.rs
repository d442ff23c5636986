use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{prototype_class_name, AssociationResult, Granularity};
use crate::proto::{cosine, BranchId, Collapse, ProtoModel, PrototypeId};
use crate::stats::{mann_whitney_u, mean_std, spearman_rho, TestResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignificanceStatus {
    Mixed,
    Uniform,
}

impl SignificanceStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SignificanceStatus::Mixed => "Mixed",
            SignificanceStatus::Uniform => "Uniform",
        }
    }
}

/// Which prototype-id results count as significant when forming groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignificanceRule {
    /// q below threshold in either direction.
    Any,
    /// q below threshold and OR > 1: the prototype marks raised risk.
    #[default]
    Risk,
}

impl SignificanceRule {
    pub fn as_str(&self) -> &'static str {
        match self {
            SignificanceRule::Any => "any",
            SignificanceRule::Risk => "risk",
        }
    }

    pub fn parse(s: &str) -> Option<SignificanceRule> {
        match s {
            "any" => Some(SignificanceRule::Any),
            "risk" => Some(SignificanceRule::Risk),
            _ => None,
        }
    }

    pub fn accepts(&self, r: &AssociationResult) -> bool {
        r.significant && (*self == SignificanceRule::Any || r.odds_ratio > 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMember {
    pub id: PrototypeId,
    /// Index into the model's flattened prototype list.
    pub index: usize,
    pub significant: bool,
    pub odds_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSignificanceGroup {
    pub branch: BranchId,
    pub class_id: usize,
    pub phecode: String,
    pub status: SignificanceStatus,
    pub members: Vec<GroupMember>,
}

/// Collapsed representatives per (branch, class), in flattened order.
pub fn class_representatives(model: &ProtoModel, collapse: &Collapse) -> BTreeMap<(BranchId, usize), Vec<usize>> {
    let ids = model.prototype_ids();
    let mut out: BTreeMap<(BranchId, usize), Vec<usize>> = BTreeMap::new();
    for &rep in &collapse.representatives {
        out.entry((ids[rep].branch, ids[rep].class_id)).or_default().push(rep);
    }
    out
}

/// Mixed or Uniform for every (branch, class, phecode) whose class has at
/// least two collapsed prototypes with a prototype-id scan result for the
/// phecode. Prototypes whose column was skipped as constant (never a best
/// match) have no result and are not members. `rule` decides which member
/// results count as significant.
pub fn classify_significance_groups(
    results: &[AssociationResult],
    model: &ProtoModel,
    collapse: &Collapse,
    rule: SignificanceRule,
) -> Vec<ClassSignificanceGroup> {
    let ids = model.prototype_ids();
    let name_to_index: HashMap<String, usize> = collapse
        .representatives
        .iter()
        .map(|&i| (ids[i].to_string(), i))
        .collect();
    // (branch, class) → phecode → members
    let mut acc: BTreeMap<(BranchId, usize), BTreeMap<String, Vec<GroupMember>>> = BTreeMap::new();
    for r in results.iter().filter(|r| r.granularity == Granularity::PrototypeId) {
        let Some(&index) = name_to_index.get(&r.feature) else { continue };
        let id = ids[index];
        acc.entry((id.branch, id.class_id))
            .or_default()
            .entry(r.phecode.clone())
            .or_default()
            .push(GroupMember {
                id,
                index,
                significant: rule.accepts(r),
                odds_ratio: r.odds_ratio,
            });
    }
    let reps = class_representatives(model, collapse);
    let mut groups = Vec::new();
    for ((branch, class_id), by_phe) in acc {
        if reps.get(&(branch, class_id)).map_or(0, Vec::len) < 2 {
            continue;
        }
        for (phecode, mut members) in by_phe {
            if members.len() < 2 {
                continue;
            }
            members.sort_by_key(|m| m.index);
            let any_sig = members.iter().any(|m| m.significant);
            let any_non = members.iter().any(|m| !m.significant);
            groups.push(ClassSignificanceGroup {
                branch,
                class_id,
                phecode,
                status: if any_sig && any_non {
                    SignificanceStatus::Mixed
                } else {
                    SignificanceStatus::Uniform
                },
                members,
            });
        }
    }
    groups
}

/// Mean over unordered pairs of (1 − cosine). `None` for fewer than two.
pub fn intra_class_distance(vectors: &[&[f64]]) -> Option<f64> {
    let n = vectors.len();
    if n < 2 {
        return None;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += 1.0 - cosine(vectors[i], vectors[j]);
        }
    }
    Some(sum / (n * (n - 1) / 2) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMeasure {
    pub branch: BranchId,
    pub class_id: usize,
    pub phecode: String,
    pub status: SignificanceStatus,
    pub distance: f64,
    /// Odds ratio of the group's prototype-class association, if scanned.
    pub odds_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusSummary {
    pub status: SignificanceStatus,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedUniformAnalysis {
    pub measures: Vec<GroupMeasure>,
    /// Mixed (x) vs Uniform (y) intra-class distances.
    pub mann_whitney: Option<TestResult>,
    /// Group odds ratio vs intra-class distance.
    pub spearman: Option<TestResult>,
    pub summary: Vec<StatusSummary>,
    pub notes: Vec<String>,
}

/// Intra-class distance of every group (over all collapsed prototypes of
/// its branch and class), Mann–Whitney Mixed vs Uniform, Spearman between
/// group odds ratio and distance, and per-status summaries with normal
/// 95% intervals.
pub fn mixed_uniform_analysis(
    groups: &[ClassSignificanceGroup],
    results: &[AssociationResult],
    model: &ProtoModel,
    collapse: &Collapse,
) -> MixedUniformAnalysis {
    let flat: Vec<&[f64]> = model.prototypes().map(|p| p.vector.as_slice()).collect();
    let reps = class_representatives(model, collapse);
    let class_or: HashMap<(&str, &str), f64> = results
        .iter()
        .filter(|r| r.granularity == Granularity::PrototypeClass)
        .map(|r| ((r.feature.as_str(), r.phecode.as_str()), r.odds_ratio))
        .collect();
    let mut notes = Vec::new();
    let measures: Vec<GroupMeasure> = groups
        .iter()
        .filter_map(|g| {
            let vs: Vec<&[f64]> = reps.get(&(g.branch, g.class_id))?.iter().map(|&i| flat[i]).collect();
            let distance = intra_class_distance(&vs)?;
            let feature = prototype_class_name(g.branch, &model.class_names[g.class_id]);
            Some(GroupMeasure {
                branch: g.branch,
                class_id: g.class_id,
                phecode: g.phecode.clone(),
                status: g.status,
                distance,
                odds_ratio: class_or.get(&(feature.as_str(), g.phecode.as_str())).copied(),
            })
        })
        .collect();

    let of = |s: SignificanceStatus| -> Vec<f64> { measures.iter().filter(|m| m.status == s).map(|m| m.distance).collect() };
    let mixed = of(SignificanceStatus::Mixed);
    let uniform = of(SignificanceStatus::Uniform);
    let mann_whitney = if mixed.len() >= 2 && uniform.len() >= 2 {
        mann_whitney_u(&mixed, &uniform).ok()
    } else {
        notes.push(format!(
            "mann-whitney skipped: {} mixed and {} uniform groups (need at least 2 each)",
            mixed.len(),
            uniform.len()
        ));
        None
    };

    let (ors, ds): (Vec<f64>, Vec<f64>) = measures
        .iter()
        .filter_map(|m| m.odds_ratio.map(|o| (o, m.distance)))
        .unzip();
    let spearman = match spearman_rho(&ors, &ds) {
        Ok(t) => Some(t),
        Err(e) => {
            notes.push(format!("spearman skipped: {e}"));
            None
        }
    };

    let summary = [SignificanceStatus::Mixed, SignificanceStatus::Uniform]
        .into_iter()
        .map(|status| {
            let v = if status == SignificanceStatus::Mixed { &mixed } else { &uniform };
            let (mean, std) = mean_std(v);
            let half = 1.96 * std / (v.len() as f64).sqrt();
            StatusSummary {
                status,
                n: v.len(),
                mean,
                std,
                ci_lo: mean - half,
                ci_hi: mean + half,
            }
        })
        .collect();
    MixedUniformAnalysis {
        measures,
        mann_whitney,
        spearman,
        summary,
        notes,
    }
}
