//! Statistical primitives shared by the association scan and the prediction
//! harness: exact and rank-based tests, FDR control, PCA, AUC and bootstrap
//! intervals.

mod bootstrap;
mod dist;
mod fdr;
mod fisher;
mod pca;
mod rank;

pub use bootstrap::{bootstrap_ci, percentile_linear, BootstrapConfig};
pub use dist::{normal_sf, student_t_two_sided};
pub use fdr::{bh_fdr, FdrVector};
pub use fisher::{fisher_exact_two_sided, odds_ratio, ContingencyTable, FisherExact, LogFactorials};
pub use pca::{jacobi_eigen, pca_2d, Pca2d};
pub use rank::{auc_roc, average_ranks, mann_whitney_u, spearman_rho, EXACT_MWU_MAX_N};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    NormalApprox,
    TApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: Method,
    /// Set when the input admits only one outcome (zero margin, total ties),
    /// in which case `p_value` is 1.
    pub degenerate: bool,
}

impl TestResult {
    pub(crate) fn new(statistic: f64, p_value: f64, method: Method) -> Self {
        TestResult {
            statistic,
            p_value: p_value.clamp(0.0, 1.0),
            method,
            degenerate: false,
        }
    }

    pub(crate) fn degenerate(statistic: f64, method: Method) -> Self {
        TestResult {
            statistic,
            p_value: 1.0,
            method,
            degenerate: true,
        }
    }
}

/// Mean and sample standard deviation (n-1 divisor; 0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Median of a non-empty slice (average of the two middle values for even n).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
