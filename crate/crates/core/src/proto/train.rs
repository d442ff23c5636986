//! Prototype training, projection onto training patches, and the fusion
//! head fit.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::loss::{fusion_head_objective, prototype_loss_and_grad, LossBreakdown, LossWeights};
use super::{normalize, BranchConfig, FusionHead, PatchSource, Prototype, RecordLatents};
use crate::error::{Error, Result};
use crate::seed::rng_for;

const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub step: f64,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            step: 0.5,
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub prototypes: Vec<Prototype>,
    pub head: FusionHead,
    /// Training loss before the first step followed by one entry per
    /// accepted step.
    pub loss_history: Vec<LossBreakdown>,
    /// Classes with no positive training record; their prototypes were
    /// never updated.
    pub frozen_classes: Vec<usize>,
}

/// One prototype per (class, index) drawn from a random patch of a random
/// class-positive record. Classes without positives get random unit vectors
/// and are reported back.
pub fn initialize_prototypes(
    batch: &[RecordLatents],
    labels: &[Vec<bool>],
    cfg: &BranchConfig,
    num_classes: usize,
    seed: u64,
) -> (Vec<Prototype>, Vec<usize>) {
    let mut rng = rng_for(seed, 0x1A17_0000 + cfg.branch.index() as u64);
    let mut prototypes = Vec::with_capacity(num_classes * cfg.prototypes_per_class);
    let mut frozen = Vec::new();
    for c in 0..num_classes {
        let positives: Vec<usize> = (0..batch.len()).filter(|&r| labels[r][c]).collect();
        if positives.is_empty() {
            frozen.push(c);
        }
        for k in 0..cfg.prototypes_per_class {
            let mut vector = None;
            for _ in 0..16 {
                if positives.is_empty() {
                    break;
                }
                let r = positives[rng.random_range(0..positives.len())];
                let Some(map) = batch[r].get(cfg.branch) else { break };
                if map.positions() == 0 {
                    continue;
                }
                let mut v = map.patch(rng.random_range(0..map.positions())).to_vec();
                if normalize(&mut v) {
                    vector = Some(v);
                    break;
                }
            }
            let vector = vector.unwrap_or_else(|| {
                let mut v: Vec<f64> = (0..cfg.latent_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                normalize(&mut v);
                v
            });
            prototypes.push(Prototype {
                branch: cfg.branch,
                class_id: c,
                proto_index: k,
                vector,
                source: None,
            });
        }
    }
    (prototypes, frozen)
}

fn apply_step(
    prototypes: &[Prototype],
    head: &FusionHead,
    grad: &super::LossGradient,
    step: f64,
    frozen: &[usize],
) -> (Vec<Prototype>, FusionHead) {
    let mut protos = prototypes.to_vec();
    for (p, g) in protos.iter_mut().zip(&grad.prototypes) {
        if frozen.contains(&p.class_id) {
            continue;
        }
        let mut v: Vec<f64> = p.vector.iter().zip(g).map(|(x, d)| x - step * d).collect();
        if normalize(&mut v) {
            p.vector = v;
        }
    }
    let mut h = head.clone();
    for (w, d) in h.weights.iter_mut().zip(&grad.head_weights) {
        *w -= step * d;
    }
    for (b, d) in h.bias.iter_mut().zip(&grad.head_bias) {
        *b -= step * d;
    }
    (protos, h)
}

/// Full-batch gradient descent on prototype vectors and a branch-local head.
/// A step is accepted only if the training loss does not increase; otherwise
/// the step size is halved and retried. Training stops early once no step
/// size yields a non-increasing loss.
pub fn train_prototypes(
    batch: &[RecordLatents],
    labels: &[Vec<bool>],
    cfg: &BranchConfig,
    num_classes: usize,
    tc: &TrainConfig,
) -> Result<TrainOutcome> {
    if batch.len() != labels.len() {
        return Err(Error::InvalidInput("records and labels differ in length".into()));
    }
    let (mut prototypes, frozen) = initialize_prototypes(batch, labels, cfg, num_classes, tc.seed);
    let mut head = FusionHead::class_connection(&prototypes, num_classes);
    let (mut loss, mut grad) = prototype_loss_and_grad(batch, labels, &prototypes, &head, tc.weights)?;
    let mut history = vec![loss];
    let mut step = tc.step;
    for _epoch in 0..tc.epochs {
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let (cand_p, cand_h) = apply_step(&prototypes, &head, &grad, step, &frozen);
            let (cand_loss, cand_grad) = prototype_loss_and_grad(batch, labels, &cand_p, &cand_h, tc.weights)?;
            if cand_loss.total <= loss.total {
                prototypes = cand_p;
                head = cand_h;
                loss = cand_loss;
                grad = cand_grad;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        history.push(loss);
        step = (step * 1.5).min(tc.step * 8.0);
    }
    Ok(TrainOutcome {
        prototypes,
        head,
        loss_history: history,
        frozen_classes: frozen,
    })
}

#[derive(Debug, Clone)]
pub struct Projection {
    pub prototypes: Vec<Prototype>,
    /// Indices of prototypes with no eligible patch; left as they were.
    pub unprojected: Vec<usize>,
}

/// Replace every prototype by the unit-normalised training patch, among
/// records positive for its class, with the highest cosine similarity.
/// Ties go to the smallest (record id, position).
pub fn project_prototypes(prototypes: &[Prototype], batch: &[RecordLatents], labels: &[Vec<bool>]) -> Projection {
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.sort_by_key(|&r| batch[r].record_id);
    let projected: Vec<Option<Prototype>> = prototypes
        .par_iter()
        .map(|p| {
            let pn = super::norm(&p.vector);
            let mut best: Option<(f64, PatchSource, &[f64])> = None;
            for &r in &order {
                if !labels[r].get(p.class_id).copied().unwrap_or(false) {
                    continue;
                }
                let Some(map) = batch[r].get(p.branch) else { continue };
                for (pos, patch) in map.iter_patches().enumerate() {
                    let zn = super::norm(patch);
                    if zn == 0.0 {
                        continue;
                    }
                    let c = if pn == 0.0 { 0.0 } else { super::dot(&p.vector, patch) / (pn * zn) };
                    if best.is_none_or(|(b, _, _)| c > b) {
                        best = Some((
                            c,
                            PatchSource {
                                record_id: batch[r].record_id,
                                position: pos,
                            },
                            patch,
                        ));
                    }
                }
            }
            best.map(|(_, src, patch)| {
                let mut v = patch.to_vec();
                normalize(&mut v);
                Prototype {
                    vector: v,
                    source: Some(src),
                    ..p.clone()
                }
            })
        })
        .collect();
    let mut unprojected = Vec::new();
    let prototypes = projected
        .into_iter()
        .zip(prototypes)
        .enumerate()
        .map(|(i, (np, old))| {
            np.unwrap_or_else(|| {
                unprojected.push(i);
                old.clone()
            })
        })
        .collect();
    Projection {
        prototypes,
        unprojected,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionTrainConfig {
    pub epochs: usize,
    pub step: f64,
    pub l2: f64,
}

impl Default for FusionTrainConfig {
    fn default() -> Self {
        FusionTrainConfig {
            epochs: 400,
            step: 1.0,
            l2: 1e-4,
        }
    }
}

/// Logistic fit of the fusion head on frozen similarity scores.
///
/// Optimisation runs on standardised similarities (gradient descent with
/// step halving); the result is folded back into a head that acts on raw
/// similarities. Constant columns get weight 0.
pub fn train_fusion_head(
    similarities: &[Vec<f64>],
    labels: &[Vec<bool>],
    num_classes: usize,
    cfg: &FusionTrainConfig,
) -> Result<FusionHead> {
    if similarities.len() != labels.len() {
        return Err(Error::InvalidInput("similarities and labels differ in length".into()));
    }
    let n = similarities.len();
    let j_count = similarities.first().map_or(0, Vec::len);
    if similarities.iter().any(|s| s.len() != j_count) {
        return Err(Error::InvalidInput("ragged similarity matrix".into()));
    }
    if n == 0 {
        return Ok(FusionHead::zeros(num_classes, j_count));
    }
    let mut mean = vec![0.0; j_count];
    for s in similarities {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v / n as f64;
        }
    }
    let mut sd = vec![0.0; j_count];
    for s in similarities {
        for ((d, v), m) in sd.iter_mut().zip(s).zip(&mean) {
            *d += (v - m).powi(2) / n as f64;
        }
    }
    sd.iter_mut().for_each(|d| *d = d.sqrt());
    let xs: Vec<Vec<f64>> = similarities
        .iter()
        .map(|s| {
            s.iter()
                .zip(&mean)
                .zip(&sd)
                .map(|((v, m), d)| if *d > 0.0 { (v - m) / d } else { 0.0 })
                .collect()
        })
        .collect();

    let mut w = vec![0.0; num_classes * j_count];
    let mut b: Vec<f64> = (0..num_classes)
        .map(|c| {
            let pos = labels.iter().filter(|y| y[c]).count() as f64;
            let p = ((pos + 0.5) / (n as f64 + 1.0)).clamp(1e-6, 1.0 - 1e-6);
            (p / (1.0 - p)).ln()
        })
        .collect();
    let (mut f, mut gw, mut gb) = fusion_head_objective(&w, &b, &xs, labels, cfg.l2);
    let mut step = cfg.step;
    for _ in 0..cfg.epochs {
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let cw: Vec<f64> = w.iter().zip(&gw).map(|(x, g)| x - step * g).collect();
            let cb: Vec<f64> = b.iter().zip(&gb).map(|(x, g)| x - step * g).collect();
            let (cf, cgw, cgb) = fusion_head_objective(&cw, &cb, &xs, labels, cfg.l2);
            if cf <= f {
                w = cw;
                b = cb;
                f = cf;
                gw = cgw;
                gb = cgb;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        step = (step * 1.25).min(cfg.step * 64.0);
    }

    let mut head = FusionHead::zeros(num_classes, j_count);
    for c in 0..num_classes {
        let mut bias = b[c];
        for j in 0..j_count {
            if sd[j] > 0.0 {
                let raw = w[c * j_count + j] / sd[j];
                head.weights[c * j_count + j] = raw;
                bias -= raw * mean[j];
            }
        }
        head.bias[c] = bias;
    }
    Ok(head)
}
