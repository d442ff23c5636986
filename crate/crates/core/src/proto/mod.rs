//! Desk-scale prototype layer.
//!
//! Three branches (rhythm 1D, partial 2D, global 2D) each map a signal to a
//! grid of latent patches through a frozen random convolution bank. Every
//! branch owns `prototypes_per_class` prototypes per diagnostic class; a
//! record's similarity to a prototype is the best cosine over its patches.
//! A linear fusion head over all similarities yields per-class
//! probabilities.

mod bundle;
mod features;
mod infer;
mod loss;
mod train;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use bundle::{read_model, write_model, MODEL_FORMAT_VERSION};
pub use features::{encode, FeatureExtractor, LatentMap, RecordLatents};
pub use infer::{collapse_redundant, infer, infer_batch, similarity, BestMatch, Collapse, InferenceOutput};
pub use loss::{
    fusion_head_objective, prototype_loss, prototype_loss_and_grad, prototype_loss_from_similarities,
    LossBreakdown, LossGradient, LossWeights,
};
pub use train::{
    initialize_prototypes, project_prototypes, train_fusion_head, train_prototypes, FusionTrainConfig,
    Projection, TrainConfig, TrainOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BranchId {
    #[serde(rename = "rhythm-1d")]
    Rhythm1d,
    #[serde(rename = "partial-2d")]
    Partial2d,
    #[serde(rename = "global-2d")]
    Global2d,
}

impl BranchId {
    pub const ALL: [BranchId; 3] = [BranchId::Rhythm1d, BranchId::Partial2d, BranchId::Global2d];

    pub fn as_str(&self) -> &'static str {
        match self {
            BranchId::Rhythm1d => "rhythm-1d",
            BranchId::Partial2d => "partial-2d",
            BranchId::Global2d => "global-2d",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }

    pub fn parse(s: &str) -> Option<BranchId> {
        BranchId::ALL.into_iter().find(|b| b.as_str() == s)
    }
}

impl fmt::Display for BranchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PatchExtent {
    Global,
    Local { window: usize, stride: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchConfig {
    pub branch: BranchId,
    pub prototypes_per_class: usize,
    pub extent: PatchExtent,
    pub latent_dim: usize,
    /// Taps per convolution filter.
    pub kernel_width: usize,
    /// Dilations assigned round-robin across the filter bank.
    pub dilations: Vec<usize>,
}

impl BranchConfig {
    pub fn default_for(branch: BranchId) -> Self {
        match branch {
            BranchId::Rhythm1d => BranchConfig {
                branch,
                prototypes_per_class: 5,
                extent: PatchExtent::Global,
                latent_dim: 16,
                kernel_width: 7,
                dilations: vec![1, 4, 12],
            },
            BranchId::Partial2d => BranchConfig {
                branch,
                prototypes_per_class: 18,
                extent: PatchExtent::Local {
                    window: 50,
                    stride: 25,
                },
                latent_dim: 24,
                kernel_width: 7,
                dilations: vec![1, 2],
            },
            BranchId::Global2d => BranchConfig {
                branch,
                prototypes_per_class: 7,
                extent: PatchExtent::Global,
                latent_dim: 16,
                kernel_width: 7,
                dilations: vec![1, 4],
            },
        }
    }

    pub fn defaults() -> Vec<BranchConfig> {
        BranchId::ALL.into_iter().map(BranchConfig::default_for).collect()
    }

    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: &str| Err(crate::Error::InvalidInput(format!("{}: {m}", self.branch)));
        if self.prototypes_per_class == 0 {
            return bad("prototypes_per_class must be > 0");
        }
        if self.latent_dim == 0 || self.kernel_width == 0 {
            return bad("latent_dim and kernel_width must be > 0");
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return bad("dilations must be non-empty and positive");
        }
        if let PatchExtent::Local { window, stride } = self.extent {
            if window == 0 || stride == 0 {
                return bad("window and stride must be > 0");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchSource {
    pub record_id: u64,
    pub position: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PrototypeId {
    pub branch: BranchId,
    pub class_id: usize,
    pub proto_index: usize,
}

impl fmt::Display for PrototypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/c{}/p{}", self.branch, self.class_id, self.proto_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub branch: BranchId,
    pub class_id: usize,
    pub proto_index: usize,
    pub vector: Vec<f64>,
    /// Training patch this prototype was projected onto.
    pub source: Option<PatchSource>,
}

impl Prototype {
    pub fn id(&self) -> PrototypeId {
        PrototypeId {
            branch: self.branch,
            class_id: self.class_id,
            proto_index: self.proto_index,
        }
    }
}

/// Linear classifier over the concatenated similarity vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionHead {
    pub num_classes: usize,
    pub num_prototypes: usize,
    /// Row-major `num_classes × num_prototypes`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl FusionHead {
    pub fn zeros(num_classes: usize, num_prototypes: usize) -> Self {
        FusionHead {
            num_classes,
            num_prototypes,
            weights: vec![0.0; num_classes * num_prototypes],
            bias: vec![0.0; num_classes],
        }
    }

    /// Positive weight to own-class prototypes and a smaller negative weight
    /// to the rest, scaled by the per-class prototype count.
    pub fn class_connection(prototypes: &[Prototype], num_classes: usize) -> Self {
        let mut head = FusionHead::zeros(num_classes, prototypes.len());
        let mut per_class = vec![0usize; num_classes];
        for p in prototypes {
            per_class[p.class_id] += 1;
        }
        for c in 0..num_classes {
            for (j, p) in prototypes.iter().enumerate() {
                let scale = per_class[p.class_id].max(1) as f64;
                head.weights[c * prototypes.len() + j] =
                    if p.class_id == c { 1.0 } else { -0.5 } / scale;
            }
        }
        head
    }

    pub fn weight(&self, class: usize, proto: usize) -> f64 {
        self.weights[class * self.num_prototypes + proto]
    }

    pub fn logits(&self, similarities: &[f64]) -> Vec<f64> {
        (0..self.num_classes)
            .map(|c| {
                let row = &self.weights[c * self.num_prototypes..(c + 1) * self.num_prototypes];
                row.iter().zip(similarities).map(|(w, s)| w * s).sum::<f64>() + self.bias[c]
            })
            .collect()
    }

    pub fn probabilities(&self, similarities: &[f64]) -> Vec<f64> {
        self.logits(similarities).into_iter().map(sigmoid).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchModel {
    pub config: BranchConfig,
    pub prototypes: Vec<Prototype>,
}

/// Trained artifacts: branch configs, prototypes (with projection sources),
/// fusion head, and the seed that regenerates the frozen extractors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtoModel {
    pub format_version: u32,
    pub class_names: Vec<String>,
    pub channels: usize,
    pub extractor_seed: u64,
    pub branches: Vec<BranchModel>,
    pub head: FusionHead,
}

impl ProtoModel {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn prototypes(&self) -> impl Iterator<Item = &Prototype> {
        self.branches.iter().flat_map(|b| b.prototypes.iter())
    }

    pub fn prototype_ids(&self) -> Vec<PrototypeId> {
        self.prototypes().map(Prototype::id).collect()
    }

    pub fn num_prototypes(&self) -> usize {
        self.branches.iter().map(|b| b.prototypes.len()).sum()
    }

    pub fn extractors(&self) -> crate::Result<Vec<FeatureExtractor>> {
        self.branches
            .iter()
            .map(|b| FeatureExtractor::new(&b.config, self.channels, self.extractor_seed))
            .collect()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

pub(crate) fn normalize(v: &mut [f64]) -> bool {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}
