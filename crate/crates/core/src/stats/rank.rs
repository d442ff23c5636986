//! Rank statistics: Mann–Whitney U, Spearman's rho and the ROC AUC.

use super::dist::{normal_sf, student_t_two_sided};
use super::{Method, TestResult};
use crate::error::{Error, Result};

/// Combined sample size at or below which Mann–Whitney uses the exact null
/// distribution (when there are no ties).
pub const EXACT_MWU_MAX_N: usize = 12;

/// 1-based ranks with ties replaced by their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = avg;
        }
        i = j;
    }
    ranks
}

/// Sizes of the tie groups in `values`.
fn tie_groups(values: &[f64]) -> Vec<usize> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut groups = Vec::new();
    let mut i = 0;
    while i < v.len() {
        let mut j = i + 1;
        while j < v.len() && v[j] == v[i] {
            j += 1;
        }
        groups.push(j - i);
        i = j;
    }
    groups
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput(format!("{what} contains NaN")));
    }
    Ok(())
}

/// Null distribution of U for samples of size m and n without ties:
/// `counts[u]` is the number of the C(m+n, m) arrangements giving U = u.
fn exact_u_counts(m: usize, n: usize) -> Vec<u64> {
    // f[i][j] = counts for i x-values and j y-values. The largest pooled
    // value is either an x (beating all j y-values) or a y.
    let mut f: Vec<Vec<Vec<u64>>> = vec![vec![Vec::new(); n + 1]; m + 1];
    for (i, row) in f.iter_mut().enumerate() {
        row[0] = vec![1];
        if i == 0 {
            for cell in row.iter_mut() {
                *cell = vec![1];
            }
        }
    }
    for i in 1..=m {
        for j in 1..=n {
            let mut counts = vec![0u64; i * j + 1];
            for (u, &c) in f[i - 1][j].iter().enumerate() {
                counts[u + j] += c;
            }
            for (u, &c) in f[i][j - 1].iter().enumerate() {
                counts[u] += c;
            }
            f[i][j] = counts;
        }
    }
    std::mem::take(&mut f[m][n])
}

/// Two-sided Mann–Whitney U test. The reported statistic is U for `x`
/// (number of (x, y) pairs with x > y, ties counting one half).
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<TestResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidInput(
            "mann-whitney requires two non-empty samples".into(),
        ));
    }
    check_finite(x, "x")?;
    check_finite(y, "y")?;
    let nx = x.len();
    let ny = y.len();
    let n = nx + ny;
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = average_ranks(&pooled);
    let rank_sum_x: f64 = ranks[..nx].iter().sum();
    let u_x = rank_sum_x - (nx * (nx + 1)) as f64 / 2.0;
    let mean = (nx * ny) as f64 / 2.0;

    let groups = tie_groups(&pooled);
    if groups.len() == 1 {
        return Ok(TestResult::degenerate(mean, Method::Exact));
    }
    let has_ties = groups.iter().any(|&g| g > 1);

    if n <= EXACT_MWU_MAX_N && !has_ties {
        let counts = exact_u_counts(nx, ny);
        let total: u64 = counts.iter().sum();
        let observed_dev = (u_x - mean).abs();
        let extreme: u64 = counts
            .iter()
            .enumerate()
            .filter(|(u, _)| (*u as f64 - mean).abs() >= observed_dev - 1e-9)
            .map(|(_, &c)| c)
            .sum();
        return Ok(TestResult::new(
            u_x,
            extreme as f64 / total as f64,
            Method::Exact,
        ));
    }

    let nf = n as f64;
    let tie_term: f64 = groups
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum();
    let var = (nx * ny) as f64 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    let z = ((u_x - mean).abs() - 0.5).max(0.0) / var.sqrt();
    Ok(TestResult::new(u_x, 2.0 * normal_sf(z), Method::NormalApprox))
}

/// Spearman rank correlation with a t-approximation p-value on n-2 df.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<TestResult> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "spearman: length mismatch {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::InvalidInput(
            "spearman requires at least 3 pairs".into(),
        ));
    }
    check_finite(x, "x")?;
    check_finite(y, "y")?;
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let rho = pearson(&rx, &ry)
        .ok_or_else(|| Error::Undefined("spearman: zero rank variance".into()))?;
    let df = (x.len() - 2) as f64;
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        student_t_two_sided(t, df)
    };
    Ok(TestResult::new(rho, p, Method::TApprox))
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Rank-based ROC AUC: (concordant + 0.5·tied) / (n_pos·n_neg).
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "auc: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    check_finite(scores, "scores")?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined("auc: labels contain a single class".into()));
    }
    let ranks = average_ranks(scores);
    let rank_sum_pos: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let u_pos = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u_pos / (n_pos as f64 * n_neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(average_ranks(&[3.0, 1.0, 2.0]), vec![3.0, 1.0, 2.0]);
    }

    #[test]
    fn exact_counts_total_binomial() {
        let c = exact_u_counts(3, 4);
        assert_eq!(c.iter().sum::<u64>(), 35);
        assert_eq!(c.len(), 13);
        // symmetric around m*n/2
        for u in 0..c.len() {
            assert_eq!(c[u], c[c.len() - 1 - u]);
        }
    }

    #[test]
    fn mwu_small_exact() {
        let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 2.0 / 6.0).abs() < 1e-12);
        assert_eq!(r.method, Method::Exact);
    }

    #[test]
    fn mwu_total_ties() {
        let r = mann_whitney_u(&[5.0, 5.0], &[5.0, 5.0]).unwrap();
        assert_eq!(r.statistic, 2.0);
        assert_eq!(r.p_value, 1.0);
        assert!(r.degenerate);
    }

    #[test]
    fn mwu_empty_is_error() {
        assert!(mann_whitney_u(&[], &[1.0]).is_err());
    }

    #[test]
    fn spearman_monotone() {
        let r = spearman_rho(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap();
        assert_eq!(r.statistic, 1.0);
        let r = spearman_rho(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert_eq!(r.statistic, -1.0);
    }

    #[test]
    fn spearman_with_ties_matches_hand_ranks() {
        // ranks x = [1, 2.5, 2.5, 4], y = [1, 3, 2, 4]; centred:
        // x' = [-1.5, 0, 0, 1.5], y' = [-1.5, 0.5, -0.5, 1.5]
        // sxy = 4.5, sxx = 4.5, syy = 5 -> rho = 4.5 / sqrt(22.5)
        let r = spearman_rho(&[1.0, 2.0, 2.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r.statistic - 4.5 / 22.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn spearman_zero_variance_flagged() {
        assert!(matches!(
            spearman_rho(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(
            auc_roc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(),
            1.0
        );
        assert_eq!(
            auc_roc(&[0.3; 4], &[false, true, false, true]).unwrap(),
            0.5
        );
        assert!(
            (auc_roc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap() - 0.75)
                .abs()
                < 1e-12
        );
        assert!(auc_roc(&[0.1, 0.2], &[true, true]).is_err());
    }
}
