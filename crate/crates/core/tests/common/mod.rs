//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use protophen::concept::{extract, NegationRules};
use protophen::proto::{BranchId, FusionHead, LatentMap, Prototype, RecordLatents};
use protophen::seed::rng_for;
use protophen::synth::{lexicon, CohortSpec};
use protophen::stats::ContingencyTable;
use rand::Rng;
use serde::Deserialize;

fn choose(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r
}

/// Exact-integer enumeration: every table with the observed margins whose
/// numerator C(r,x)·C(N-r,k-x) does not exceed the observed one.
pub fn fisher_oracle(t: &ContingencyTable) -> f64 {
    let n = t.total();
    let r = t.a + t.b;
    let k = t.a + t.c;
    let denom = choose(n, k);
    let num = |x: u64| choose(r, x) * choose(n - r, k - x);
    let obs = num(t.a);
    let lo = (r + k).saturating_sub(n);
    let hi = r.min(k);
    let total: u128 = (lo..=hi).filter(|&x| num(x) <= obs).map(num).sum();
    total as f64 / denom as f64
}

/// Brute-force permutation p-value for Mann–Whitney: every split of the
/// pooled data into groups of the original sizes.
pub fn mwu_permutation_oracle(x: &[f64], y: &[f64]) -> f64 {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let n = pooled.len();
    let nx = x.len();
    let u_of = |mask: u32| -> f64 {
        let mut u = 0.0;
        for i in 0..n {
            if mask & (1 << i) == 0 {
                continue;
            }
            for j in 0..n {
                if mask & (1 << j) != 0 {
                    continue;
                }
                if pooled[i] > pooled[j] {
                    u += 1.0;
                } else if pooled[i] == pooled[j] {
                    u += 0.5;
                }
            }
        }
        u
    };
    let observed = u_of((1u32 << nx) - 1);
    let mean = (nx * (n - nx)) as f64 / 2.0;
    let mut hit = 0u64;
    let mut total = 0u64;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != nx {
            continue;
        }
        total += 1;
        if (u_of(mask) - mean).abs() >= (observed - mean).abs() - 1e-9 {
            hit += 1;
        }
    }
    hit as f64 / total as f64
}

/// `‖a − n‖ / max(‖a‖, ‖n‖, 1e-8)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let l2 = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = l2(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = l2(&mut analytic.iter().copied()).max(l2(&mut numeric.iter().copied())).max(1e-8);
    diff / scale
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub struct ProtoInstance {
    pub batch: Vec<RecordLatents>,
    pub labels: Vec<Vec<bool>>,
    pub prototypes: Vec<Prototype>,
    pub head: FusionHead,
}

/// Random latents in two branches of different widths, random multi-hot
/// labels, Gaussian prototypes and head.
pub fn random_proto_instance(seed: u64, n_records: usize, n_classes: usize, per_class: usize) -> ProtoInstance {
    let mut rng = rng_for(seed, 0xF00D);
    let branches = [(BranchId::Rhythm1d, 3usize, 5usize), (BranchId::Global2d, 4, 3)];
    let mut gauss = move || -> f64 { rng.random::<f64>() * 2.0 - 1.0 };
    let batch: Vec<RecordLatents> = (0..n_records as u64)
        .map(|record_id| RecordLatents {
            record_id,
            maps: branches
                .iter()
                .map(|&(branch, dim, positions)| LatentMap {
                    record_id,
                    branch,
                    dim,
                    patches: (0..dim * positions).map(|_| gauss()).collect(),
                    degenerate: false,
                })
                .collect(),
        })
        .collect();
    let labels: Vec<Vec<bool>> = (0..n_records)
        .map(|r| (0..n_classes).map(|c| (r + c) % 3 == 0 || gauss() > 0.6).collect())
        .collect();
    let mut prototypes = Vec::new();
    for &(branch, dim, _) in &branches {
        for class_id in 0..n_classes {
            for proto_index in 0..per_class {
                prototypes.push(Prototype {
                    branch,
                    class_id,
                    proto_index,
                    vector: (0..dim).map(|_| gauss()).collect(),
                    source: None,
                });
            }
        }
    }
    let mut head = FusionHead::zeros(n_classes, prototypes.len());
    head.weights.iter_mut().for_each(|w| *w = gauss());
    head.bias.iter_mut().for_each(|b| *b = 0.3 * gauss());
    ProtoInstance {
        batch,
        labels,
        prototypes,
        head,
    }
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

#[derive(Debug, Deserialize)]
pub struct NegationCase {
    pub id: usize,
    pub case: String,
    pub sentence: String,
    pub cui: String,
    pub label: String,
}

pub fn negation_cases() -> Vec<NegationCase> {
    let mut r = csv::Reader::from_path(fixture("negation_scope.csv")).expect("negation fixture");
    r.deserialize().map(|row| row.expect("negation fixture row")).collect()
}

/// Cases whose target mention is classified differently from its hand
/// label, as `(id, got)`; a missing target mention counts as "missing".
pub fn negation_disagreements(cases: &[NegationCase]) -> Vec<(usize, String)> {
    let lex = lexicon(&CohortSpec::desk_default(1, 1)).expect("default lexicon");
    let rules = NegationRules::default();
    cases
        .iter()
        .filter_map(|c| {
            let mentions: Vec<_> = extract(&c.sentence, &lex, &rules).into_iter().filter(|m| m.cui == c.cui).collect();
            let got = match mentions.as_slice() {
                [m] if m.negated => "negated",
                [_] => "affirmed",
                _ => "missing",
            };
            (got != c.label).then(|| (c.id, got.to_string()))
        })
        .collect()
}

pub fn table(a: u64, b: u64, c: u64, d: u64) -> ContingencyTable {
    ContingencyTable::new(a, b, c, d)
}
