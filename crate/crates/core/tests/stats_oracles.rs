//! Independent oracles and property checks for the statistics kernel.

mod common;

use common::{fisher_oracle, mwu_permutation_oracle};
use proptest::prelude::*;
use protophen::seed::rng_for;
use protophen::stats::*;
use rand::Rng;

#[test]
fn fisher_matches_enumeration_on_random_tables() {
    let mut rng = rng_for(2024, 0);
    let tester = FisherExact::new(40);
    for _ in 0..1000 {
        let n = rng.random_range(1..=40u64);
        let a = rng.random_range(0..=n);
        let b = rng.random_range(0..=n - a);
        let c = rng.random_range(0..=n - a - b);
        let d = n - a - b - c;
        let t = ContingencyTable::new(a, b, c, d);
        let got = tester.two_sided(&t).p_value;
        let want = fisher_oracle(&t);
        assert!((got - want).abs() < 1e-9, "{t:?}: {got} vs {want}");
    }
}

#[test]
fn fisher_worked_examples_match_oracle() {
    for (t, want) in [
        (ContingencyTable::new(3, 1, 1, 3), 34.0 / 70.0),
        (ContingencyTable::new(5, 0, 0, 5), 2.0 / 252.0),
        (ContingencyTable::new(0, 5, 0, 5), 1.0),
    ] {
        assert!((fisher_oracle(&t) - want).abs() < 1e-15);
        assert!((fisher_exact_two_sided(&t).p_value - want).abs() < 1e-12);
    }
}

#[test]
fn hypergeometric_pmf_sums_to_one_up_to_60() {
    let f = FisherExact::new(60);
    for n in 1..=60u64 {
        for r in 0..=n {
            for k in (0..=n).step_by(3) {
                let a = r.min(k);
                let t = ContingencyTable::new(a, r - a, k - a, n - r - (k - a));
                let (_, pmf) = f.support_pmf(&t);
                let s: f64 = pmf.iter().sum();
                assert!((s - 1.0).abs() < 1e-12, "n={n} r={r} k={k}: {s}");
            }
        }
    }
}

#[test]
fn mwu_exact_matches_permutation_oracle() {
    let mut rng = rng_for(7, 1);
    for _ in 0..300 {
        let nx = rng.random_range(1..=5usize);
        let ny = rng.random_range(1..=(10 - nx));
        // draw without ties so the exact path is taken
        let mut vals: Vec<f64> = (0..nx + ny).map(|i| i as f64 + rng.random::<f64>() * 0.5).collect();
        for i in (1..vals.len()).rev() {
            vals.swap(i, rng.random_range(0..=i));
        }
        let (x, y) = vals.split_at(nx);
        let r = mann_whitney_u(x, y).unwrap();
        assert_eq!(r.method, Method::Exact);
        let want = mwu_permutation_oracle(x, y);
        assert!((r.p_value - want).abs() < 1e-12, "{x:?} {y:?}");
    }
}

#[test]
fn mwu_interleaved_fourteen_uses_normal_and_is_near_oracle() {
    let x = [1.0, 3.0, 5.0, 7.0, 9.0, 11.0, 13.0];
    let y = [2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0];
    let r = mann_whitney_u(&x, &y).unwrap();
    let oracle = mwu_permutation_oracle(&x, &y);
    // combined n = 14 exceeds the exact cutoff; the continuity-corrected
    // normal approximation lands close to the permutation value
    assert_eq!(r.method, Method::NormalApprox);
    assert_eq!(r.statistic, 21.0);
    assert!((r.p_value - oracle).abs() < 0.02, "{} vs {oracle}", r.p_value);
}

#[test]
fn auc_times_pairs_equals_u_on_random_instances() {
    let mut rng = rng_for(99, 2);
    for _ in 0..500 {
        let n = rng.random_range(2..60usize);
        let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..20) as f64) / 4.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let pos: Vec<f64> = scores.iter().zip(&labels).filter(|(_, &l)| l).map(|(s, _)| *s).collect();
        let neg: Vec<f64> = scores.iter().zip(&labels).filter(|(_, &l)| !l).map(|(s, _)| *s).collect();
        let auc = auc_roc(&scores, &labels).unwrap();
        let u = mann_whitney_u(&pos, &neg).unwrap().statistic;
        assert!((auc * pos.len() as f64 * neg.len() as f64 - u).abs() < 1e-9);
    }
}

#[test]
fn pca_on_planar_data_is_an_isometry() {
    let mut rng = rng_for(5, 3);
    // points in the plane spanned by two orthonormal vectors of R^4
    let e1 = [0.5, 0.5, 0.5, 0.5];
    let e2 = [0.5, -0.5, 0.5, -0.5];
    let rows: Vec<Vec<f64>> = (0..12)
        .map(|_| {
            let s: f64 = rng.random_range(-3.0..3.0);
            let t: f64 = rng.random_range(-1.0..1.0);
            (0..4).map(|k| s * e1[k] + t * e2[k] + 1.0).collect()
        })
        .collect();
    let p = pca_2d(&rows).unwrap();
    for i in 0..rows.len() {
        for j in 0..rows.len() {
            let orig: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let proj = ((p.coords[i][0] - p.coords[j][0]).powi(2) + (p.coords[i][1] - p.coords[j][1]).powi(2)).sqrt();
            assert!((orig - proj).abs() < 1e-9);
        }
    }
}

#[test]
fn pca_projected_covariance_is_diagonal_of_top_eigenvalues() {
    let mut rng = rng_for(6, 4);
    let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let p = pca_2d(&rows).unwrap();
    // oracle: full eigendecomposition of the covariance computed here
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..4).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
    let mut cov = vec![0.0; 16];
    for r in &rows {
        for i in 0..4 {
            for j in 0..4 {
                cov[i * 4 + j] += (r[i] - mean[i]) * (r[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    let (vals, _) = jacobi_eigen(&cov, 4);
    let c = |a: usize, b: usize| p.coords.iter().map(|x| x[a] * x[b]).sum::<f64>() / (n - 1.0);
    assert!((c(0, 0) - vals[0]).abs() < 1e-9);
    assert!((c(1, 1) - vals[1]).abs() < 1e-9);
    assert!(c(0, 1).abs() < 1e-9);
    assert!((p.explained_variance[0] - vals[0]).abs() < 1e-12);
}

/// Straightforward sequential percentile bootstrap for AUC, written without
/// the library's bootstrap helper.
fn bootstrap_auc_oracle(scores: &[f64], labels: &[bool], seed: u64, b: usize) -> (f64, f64) {
    let n = scores.len();
    let mut stats = Vec::new();
    for i in 0..b {
        let mut rng = rng_for(seed, i as u64);
        loop {
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let s: Vec<f64> = idx.iter().map(|&k| scores[k]).collect();
            let l: Vec<bool> = idx.iter().map(|&k| labels[k]).collect();
            let np = l.iter().filter(|&&v| v).count();
            if np == 0 || np == n {
                continue;
            }
            // pairwise concordance count
            let mut conc = 0.0;
            for p in 0..n {
                if !l[p] {
                    continue;
                }
                for q in 0..n {
                    if l[q] {
                        continue;
                    }
                    if s[p] > s[q] {
                        conc += 1.0;
                    } else if s[p] == s[q] {
                        conc += 0.5;
                    }
                }
            }
            stats.push(conc / (np * (n - np)) as f64);
            break;
        }
    }
    stats.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = (stats.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(stats.len() - 1);
        stats[lo] + (h - lo as f64) * (stats[hi] - stats[lo])
    };
    (q(0.025), q(0.975))
}

#[test]
fn bootstrap_auc_matches_independent_implementation() {
    let mut rng = rng_for(31, 5);
    let n = 200;
    let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
    let scores: Vec<f64> = labels
        .iter()
        .map(|&l| rng.random::<f64>() + if l { 0.4 } else { 0.0 })
        .collect();
    let point = auc_roc(&scores, &labels).unwrap();
    let cfg = BootstrapConfig { n_resamples: 1000, alpha: 0.05, seed: 77 };
    let metric = |idx: &[usize]| {
        let s: Vec<f64> = idx.iter().map(|&k| scores[k]).collect();
        let l: Vec<bool> = idx.iter().map(|&k| labels[k]).collect();
        auc_roc(&s, &l).ok()
    };
    let (lo, hi) = bootstrap_ci(n, metric, &cfg).unwrap();
    let (olo, ohi) = bootstrap_auc_oracle(&scores, &labels, 77, 1000);
    assert!(lo <= point && point <= hi);
    assert!((lo - olo).abs() < 1e-12 && (hi - ohi).abs() < 1e-12, "{lo},{hi} vs {olo},{ohi}");
}

proptest! {
    #[test]
    fn bh_q_dominates_p_and_is_permutation_equivariant(
        p in prop::collection::vec(0.0f64..=1.0, 0..40),
        seed in any::<u64>(),
    ) {
        let f = bh_fdr(&p);
        for (q, p) in f.q_values.iter().zip(&p) {
            prop_assert!(*q >= *p && *q <= 1.0);
        }
        let mut rng = rng_for(seed, 0);
        let mut perm: Vec<usize> = (0..p.len()).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permuted: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
        let g = bh_fdr(&permuted);
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(g.q_values[k], f.q_values[i]);
        }
    }

    #[test]
    fn bh_monotone_in_p_rank(p in prop::collection::vec(0.0f64..=1.0, 1..40)) {
        let f = bh_fdr(&p);
        let mut idx: Vec<usize> = (0..p.len()).collect();
        idx.sort_by(|&i, &j| p[i].total_cmp(&p[j]));
        for w in idx.windows(2) {
            prop_assert!(f.q_values[w[0]] <= f.q_values[w[1]]);
        }
    }

    #[test]
    fn spearman_invariant_to_increasing_transform(
        pairs in prop::collection::vec((-50i32..50, -50i32..50), 3..30),
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let fx: Vec<f64> = x.iter().map(|v| (v / 10.0).exp() * 3.0 + 1.0).collect();
        match (spearman_rho(&x, &y), spearman_rho(&fx, &y)) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.statistic, b.statistic),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "definedness changed under monotone map"),
        }
    }

    #[test]
    fn pca_invariant_to_row_order(
        rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 3..12),
        seed in any::<u64>(),
    ) {
        let p = pca_2d(&rows).unwrap();
        let mut rng = rng_for(seed, 9);
        let mut perm: Vec<usize> = (0..rows.len()).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let q = pca_2d(&shuffled).unwrap();
        // skip near-degenerate spectra where component identity is ill-posed
        let ev = p.explained_variance;
        let gap = (ev[0] - ev[1]).abs().min(ev[1]);
        prop_assume!(gap > 1e-3);
        let third_gap = p.total_variance - ev[0] - ev[1];
        prop_assume!((ev[1] - third_gap).abs() > 1e-3);
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((q.coords[k][0] - p.coords[i][0]).abs() < 1e-9);
            prop_assert!((q.coords[k][1] - p.coords[i][1]).abs() < 1e-9);
        }
    }
}
