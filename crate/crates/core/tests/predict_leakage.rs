//! Subject-level splitting and training-row isolation in the benchmark.

use proptest::prelude::*;
use protophen::predict::{fit_on_train, subject_split, train_rows, LogisticConfig, LogisticModel};

fn bits(m: &LogisticModel) -> Vec<u64> {
    m.weights.iter().chain([&m.intercept]).chain(&m.means).chain(&m.sds).map(|v| v.to_bits()).collect()
}

proptest! {
    #[test]
    fn split_partitions_subjects(
        subjects in prop::collection::vec(0u64..60, 2..200),
        fraction in 0.05f64..0.6,
        seed in any::<u64>(),
    ) {
        prop_assume!(subjects.iter().any(|&s| s != subjects[0]));
        let split = subject_split(&subjects, fraction, seed).unwrap();
        prop_assert!(split.train.is_disjoint(&split.test));
        for s in &subjects {
            prop_assert!(split.train.contains(s) ^ split.test.contains(s));
        }
        prop_assert!(!split.train.is_empty());
        prop_assert_eq!(subject_split(&subjects, fraction, seed).unwrap(), split);
    }

    #[test]
    fn test_rows_never_reach_the_fit(
        rows in prop::collection::vec((0u64..25, -3.0f64..3.0, -3.0f64..3.0, any::<bool>()), 20..80),
        noise in prop::collection::vec((-100.0f64..100.0, any::<bool>()), 80),
        seed in any::<u64>(),
    ) {
        let subjects: Vec<u64> = rows.iter().map(|r| r.0).collect();
        prop_assume!(subjects.iter().any(|&s| s != subjects[0]));
        let x: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.1, r.2]).collect();
        let y: Vec<bool> = rows.iter().map(|r| r.3).collect();
        let split = subject_split(&subjects, 0.3, seed).unwrap();
        let tr = train_rows(&subjects, &split);
        let ytr: Vec<bool> = tr.iter().map(|&r| y[r]).collect();
        prop_assume!(ytr.iter().any(|&v| v) && ytr.iter().any(|&v| !v));
        let cfg = LogisticConfig::default();
        let base = fit_on_train(&x, &y, &tr, &cfg).unwrap();
        let (mut x2, mut y2) = (x.clone(), y.clone());
        for r in 0..x.len() {
            if !split.is_train(subjects[r]) {
                x2[r] = vec![noise[r].0, -noise[r].0];
                y2[r] = noise[r].1;
            }
        }
        prop_assert_eq!(bits(&fit_on_train(&x2, &y2, &tr, &cfg).unwrap()), bits(&base));
    }
}

