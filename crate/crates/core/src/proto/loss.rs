//! Prototype training objective: BCE of the head plus cluster and
//! separation costs, with analytic gradients.

use rayon::prelude::*;

use super::{dot, norm, sigmoid, FusionHead, LatentMap, Prototype, RecordLatents};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub cluster: f64,
    pub separation: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            cluster: 0.8,
            separation: 0.08,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub bce: f64,
    pub cluster: f64,
    pub separation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    /// d total / d raw prototype vector, one per prototype.
    pub prototypes: Vec<Vec<f64>>,
    pub head_weights: Vec<f64>,
    pub head_bias: Vec<f64>,
}

/// ln(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn bce_with_logit(logit: f64, y: bool) -> f64 {
    softplus(logit) - if y { logit } else { 0.0 }
}

struct SimilarityGrads {
    dsim: Vec<Vec<f64>>,
    head_weights: Vec<f64>,
    head_bias: Vec<f64>,
}

fn argmax_first<I: Iterator<Item = (usize, f64)>>(it: I) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, v) in it {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((j, v));
        }
    }
    best
}

fn loss_core(
    sims: &[Vec<f64>],
    labels: &[Vec<bool>],
    proto_classes: &[usize],
    head: &FusionHead,
    weights: LossWeights,
    want_grad: bool,
) -> (LossBreakdown, Option<SimilarityGrads>) {
    let r_count = sims.len();
    let c_count = head.num_classes;
    let j_count = proto_classes.len();
    let mut grads = want_grad.then(|| SimilarityGrads {
        dsim: vec![vec![0.0; j_count]; r_count],
        head_weights: vec![0.0; head.weights.len()],
        head_bias: vec![0.0; c_count],
    });
    if r_count == 0 {
        return (LossBreakdown::default(), grads);
    }

    let bce_scale = 1.0 / (r_count * c_count).max(1) as f64;
    let mut bce = 0.0;
    let mut cluster_pairs: Vec<(usize, usize)> = Vec::new();
    let mut cluster_sum = 0.0;
    let mut sep_pairs: Vec<(usize, usize)> = Vec::new();
    let mut sep_sum = 0.0;

    for (r, (s, y)) in sims.iter().zip(labels).enumerate() {
        let logits = head.logits(s);
        for (c, &l) in logits.iter().enumerate() {
            bce += bce_with_logit(l, y[c]);
            if let Some(g) = grads.as_mut() {
                let dl = (sigmoid(l) - if y[c] { 1.0 } else { 0.0 }) * bce_scale;
                g.head_bias[c] += dl;
                for j in 0..j_count {
                    g.head_weights[c * j_count + j] += dl * s[j];
                    g.dsim[r][j] += dl * head.weights[c * j_count + j];
                }
            }
        }
        for c in (0..c_count).filter(|&c| y[c]) {
            let own = proto_classes.iter().enumerate().filter(|(_, &pc)| pc == c).map(|(j, _)| (j, s[j]));
            if let Some((j, best)) = argmax_first(own) {
                cluster_sum += 1.0 - best;
                cluster_pairs.push((r, j));
            }
        }
        let other = proto_classes.iter().enumerate().filter(|(_, &pc)| !y[pc]).map(|(j, _)| (j, s[j]));
        if let Some((j, best)) = argmax_first(other) {
            sep_sum += best;
            sep_pairs.push((r, j));
        }
    }

    let bce = bce * bce_scale;
    let cluster = if cluster_pairs.is_empty() { 0.0 } else { cluster_sum / cluster_pairs.len() as f64 };
    let separation = if sep_pairs.is_empty() { 0.0 } else { sep_sum / sep_pairs.len() as f64 };
    if let Some(g) = grads.as_mut() {
        let k = cluster_pairs.len().max(1) as f64;
        for &(r, j) in &cluster_pairs {
            g.dsim[r][j] -= weights.cluster / k;
        }
        let k = sep_pairs.len().max(1) as f64;
        for &(r, j) in &sep_pairs {
            g.dsim[r][j] += weights.separation / k;
        }
    }
    (
        LossBreakdown {
            total: bce + weights.cluster * cluster + weights.separation * separation,
            bce,
            cluster,
            separation,
        },
        grads,
    )
}

/// Loss on precomputed similarities (`sims[r][j]`, one column per prototype,
/// `proto_classes[j]` its class).
pub fn prototype_loss_from_similarities(
    sims: &[Vec<f64>],
    labels: &[Vec<bool>],
    proto_classes: &[usize],
    head: &FusionHead,
    weights: LossWeights,
) -> LossBreakdown {
    loss_core(sims, labels, proto_classes, head, weights, false).0
}

/// Best cosine over positions plus the winning position. Zero-norm patches
/// contribute 0 and carry no gradient.
pub(crate) fn similarity_with_position(vector: &[f64], vector_norm: f64, map: &LatentMap) -> (f64, Option<usize>) {
    if vector_norm == 0.0 || map.positions() == 0 {
        return (0.0, None);
    }
    let mut best = f64::NEG_INFINITY;
    let mut arg = None;
    for (pos, patch) in map.iter_patches().enumerate() {
        let pn = norm(patch);
        let (c, a) = if pn == 0.0 {
            (0.0, None)
        } else {
            (dot(vector, patch) / (vector_norm * pn), Some(pos))
        };
        if c > best {
            best = c;
            arg = a;
        }
    }
    (best, arg)
}

fn check_batch(batch: &[RecordLatents], labels: &[Vec<bool>], prototypes: &[Prototype], head: &FusionHead) -> Result<()> {
    if batch.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} records but {} label rows",
            batch.len(),
            labels.len()
        )));
    }
    if head.num_prototypes != prototypes.len() {
        return Err(Error::InvalidInput(format!(
            "head expects {} prototypes, got {}",
            head.num_prototypes,
            prototypes.len()
        )));
    }
    if labels.iter().any(|y| y.len() != head.num_classes) {
        return Err(Error::InvalidInput("label width differs from head classes".into()));
    }
    Ok(())
}

type SimTable = (Vec<Vec<f64>>, Vec<Vec<Option<usize>>>);

fn similarity_table(batch: &[RecordLatents], prototypes: &[Prototype]) -> Result<SimTable> {
    let norms: Vec<f64> = prototypes.iter().map(|p| norm(&p.vector)).collect();
    let rows: Vec<Result<(Vec<f64>, Vec<Option<usize>>)>> = batch
        .par_iter()
        .map(|rec| {
            let mut s = Vec::with_capacity(prototypes.len());
            let mut a = Vec::with_capacity(prototypes.len());
            for (p, &pn) in prototypes.iter().zip(&norms) {
                let map = rec
                    .get(p.branch)
                    .ok_or_else(|| Error::MissingBranch(p.branch.to_string()))?;
                let (v, pos) = similarity_with_position(&p.vector, pn, map);
                s.push(v);
                a.push(pos);
            }
            Ok((s, a))
        })
        .collect();
    let mut sims = Vec::with_capacity(rows.len());
    let mut args = Vec::with_capacity(rows.len());
    for row in rows {
        let (s, a) = row?;
        sims.push(s);
        args.push(a);
    }
    Ok((sims, args))
}

pub fn prototype_loss(
    batch: &[RecordLatents],
    labels: &[Vec<bool>],
    prototypes: &[Prototype],
    head: &FusionHead,
    weights: LossWeights,
) -> Result<LossBreakdown> {
    check_batch(batch, labels, prototypes, head)?;
    let (sims, _) = similarity_table(batch, prototypes)?;
    let classes: Vec<usize> = prototypes.iter().map(|p| p.class_id).collect();
    Ok(loss_core(&sims, labels, &classes, head, weights, false).0)
}

pub fn prototype_loss_and_grad(
    batch: &[RecordLatents],
    labels: &[Vec<bool>],
    prototypes: &[Prototype],
    head: &FusionHead,
    weights: LossWeights,
) -> Result<(LossBreakdown, LossGradient)> {
    check_batch(batch, labels, prototypes, head)?;
    let (sims, args) = similarity_table(batch, prototypes)?;
    let classes: Vec<usize> = prototypes.iter().map(|p| p.class_id).collect();
    let (loss, g) = loss_core(&sims, labels, &classes, head, weights, true);
    let g = g.expect("gradient requested");

    let mut proto_grads: Vec<Vec<f64>> = prototypes.iter().map(|p| vec![0.0; p.vector.len()]).collect();
    for (j, p) in prototypes.iter().enumerate() {
        let pn = norm(&p.vector);
        if pn == 0.0 {
            continue;
        }
        let grad = &mut proto_grads[j];
        for (r, rec) in batch.iter().enumerate() {
            let d = g.dsim[r][j];
            let Some(pos) = args[r][j] else { continue };
            if d == 0.0 {
                continue;
            }
            let map = rec.get(p.branch).expect("checked in similarity_table");
            let z = map.patch(pos);
            let zn = norm(z);
            let cos = sims[r][j];
            // d cos / dp = z / (|p||z|) - cos * p / |p|^2
            for k in 0..grad.len() {
                grad[k] += d * (z[k] / (pn * zn) - cos * p.vector[k] / (pn * pn));
            }
        }
    }
    Ok((
        loss,
        LossGradient {
            prototypes: proto_grads,
            head_weights: g.head_weights,
            head_bias: g.head_bias,
        },
    ))
}

/// Mean BCE over (record, class) plus `l2/2 · ||W||²`, with gradients, for
/// a linear head on (already standardised) inputs `xs`.
pub fn fusion_head_objective(
    weights: &[f64],
    bias: &[f64],
    xs: &[Vec<f64>],
    labels: &[Vec<bool>],
    l2: f64,
) -> (f64, Vec<f64>, Vec<f64>) {
    let c_count = bias.len();
    let j_count = if c_count == 0 { 0 } else { weights.len() / c_count };
    let scale = 1.0 / (xs.len() * c_count).max(1) as f64;
    let mut f = 0.0;
    let mut gw = vec![0.0; weights.len()];
    let mut gb = vec![0.0; c_count];
    for (x, y) in xs.iter().zip(labels) {
        for c in 0..c_count {
            let row = &weights[c * j_count..(c + 1) * j_count];
            let l = dot(row, x) + bias[c];
            f += bce_with_logit(l, y[c]) * scale;
            let dl = (sigmoid(l) - if y[c] { 1.0 } else { 0.0 }) * scale;
            gb[c] += dl;
            for (g, xv) in gw[c * j_count..(c + 1) * j_count].iter_mut().zip(x) {
                *g += dl * xv;
            }
        }
    }
    f += 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    for (g, w) in gw.iter_mut().zip(weights) {
        *g += l2 * w;
    }
    (f, gw, gb)
}
