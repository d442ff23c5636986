use serde::{Deserialize, Serialize};

/// p-values with their Benjamini–Hochberg q-values, both in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdrVector {
    pub p_values: Vec<f64>,
    pub q_values: Vec<f64>,
}

/// Benjamini–Hochberg step-up adjustment.
///
/// q at sorted rank i is `min_{j >= i} p_(j) * m / j`, capped at 1. Tied
/// p-values receive identical q-values because the running minimum from the
/// top rank always reaches the largest tied rank first.
pub fn bh_fdr(p: &[f64]) -> FdrVector {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p[i].total_cmp(&p[j]).then(i.cmp(&j)));

    let mut q = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let idx = order[rank];
        // ratio >= 1 first, so rounding can never push q below p
        let adjusted = p[idx] * (m as f64 / (rank + 1) as f64);
        running = running.min(adjusted);
        q[idx] = running.min(1.0);
    }
    FdrVector {
        p_values: p.to_vec(),
        q_values: q,
    }
}
