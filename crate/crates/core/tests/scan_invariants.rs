//! Association scan invariants on random binary matrices, with each
//! p-value checked against exact enumeration.

mod common;

use common::fisher_oracle;
use proptest::prelude::*;
use protophen::assoc::{phewas_scan, read_results_csv, write_results_csv, FeatureColumn, FeatureMatrix, Granularity};
use protophen::ingest::PhenotypeMatrix;
use protophen::stats::bh_fdr;

fn matrices(n: usize, feats: &[Vec<bool>], phes: &[Vec<bool>]) -> (FeatureMatrix, PhenotypeMatrix) {
    let ids: Vec<u64> = (0..n as u64).map(|i| 1000 + i).collect();
    let grans = [Granularity::FusionLabel, Granularity::PrototypeId, Granularity::Cui];
    let columns = feats
        .iter()
        .enumerate()
        .map(|(i, v)| FeatureColumn {
            name: format!("f{i:02}"),
            granularity: grans[i % grans.len()],
            values: v.clone(),
        })
        .collect();
    let fm = FeatureMatrix::new(ids.clone(), columns).unwrap();
    let pm = PhenotypeMatrix {
        record_ids: ids,
        phecodes: (0..phes.len()).map(|j| format!("{}.{j}", 100 + j)).collect(),
        columns: phes.to_vec(),
    };
    (fm, pm)
}

fn case() -> impl Strategy<Value = (usize, Vec<Vec<bool>>, Vec<Vec<bool>>)> {
    (4usize..30).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec(prop::collection::vec(any::<bool>(), n), 1..6),
            prop::collection::vec(prop::collection::vec(prop::bool::weighted(0.3), n), 1..5),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tables_p_and_q_are_consistent((n, feats, phes) in case()) {
        let (fm, pm) = matrices(n, &feats, &phes);
        let out = phewas_scan(&fm, &pm, 0.05).unwrap();
        let live_f = fm.columns.iter().filter(|c| !c.is_constant()).count();
        let live_p = (0..pm.phecodes.len()).filter(|&j| { let k = pm.case_count(j); k > 0 && k < n }).count();
        prop_assert_eq!(out.results.len(), live_f * live_p);
        prop_assert_eq!(out.skipped.len(), fm.columns.len() - live_f + pm.phecodes.len() - live_p);
        let q = bh_fdr(&out.results.iter().map(|r| r.p).collect::<Vec<_>>()).q_values;
        for (r, q) in out.results.iter().zip(q) {
            let f = fm.column(&r.feature).unwrap();
            let y = pm.column(&r.phecode).unwrap();
            prop_assert_eq!(r.table.total(), n as u64);
            prop_assert_eq!(r.table.a + r.table.b, f.count() as u64);
            prop_assert_eq!(r.table.a + r.table.c, y.iter().filter(|&&v| v).count() as u64);
            prop_assert!((r.p - fisher_oracle(&r.table)).abs() < 1e-9);
            prop_assert!(r.q >= r.p && r.q == q);
            prop_assert_eq!(r.significant, r.q < 0.05);
            prop_assert!(r.odds_ratio.is_finite() && r.odds_ratio > 0.0);
        }
        // deterministic (granularity, feature, phecode) order
        let keys: Vec<_> = out.results.iter().map(|r| (r.granularity, r.feature.clone(), r.phecode.clone())).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        prop_assert_eq!(keys, sorted);
    }

    #[test]
    fn record_order_does_not_matter((n, feats, phes) in case(), rot in 0usize..30) {
        let (fm, pm) = matrices(n, &feats, &phes);
        let k = rot % n;
        let rotate = |v: &Vec<bool>| { let mut v = v.clone(); v.rotate_left(k); v };
        let (fm2, pm2) = matrices(n, &feats.iter().map(rotate).collect::<Vec<_>>(), &phes.iter().map(rotate).collect::<Vec<_>>());
        let a = phewas_scan(&fm, &pm, 0.05).unwrap();
        let b = phewas_scan(&fm2, &pm2, 0.05).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn complementing_a_feature_inverts_its_odds_ratio((n, feats, phes) in case()) {
        let (fm, pm) = matrices(n, &feats, &phes);
        let flipped: Vec<Vec<bool>> = feats.iter().map(|v| v.iter().map(|b| !b).collect()).collect();
        let (fm2, _) = matrices(n, &flipped, &phes);
        let a = phewas_scan(&fm, &pm, 0.05).unwrap();
        let b = phewas_scan(&fm2, &pm, 0.05).unwrap();
        for (x, y) in a.results.iter().zip(&b.results) {
            prop_assert!((x.odds_ratio * y.odds_ratio - 1.0).abs() < 1e-9);
            prop_assert!((x.p - y.p).abs() < 1e-12);
        }
    }

    #[test]
    fn results_csv_roundtrips((n, feats, phes) in case()) {
        let (fm, pm) = matrices(n, &feats, &phes);
        let out = phewas_scan(&fm, &pm, 0.05).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        write_results_csv(&path, &out.results).unwrap();
        prop_assert_eq!(read_results_csv(&path).unwrap(), out.results);
    }
}

#[test]
fn misaligned_matrices_are_rejected() {
    let (fm, mut pm) = matrices(4, &[vec![true, false, true, false]], &[vec![true, true, false, false]]);
    pm.record_ids.reverse();
    assert!(phewas_scan(&fm, &pm, 0.05).is_err());
    assert!(phewas_scan(&fm, &matrices(4, &[], &[]).1, 0.0).is_err());
}
