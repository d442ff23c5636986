//! Prototype objective, training and projection checked against
//! finite differences and the projection anchor invariant.

mod common;

use common::{central_difference, random_proto_instance, relative_error};
use proptest::prelude::*;
use protophen::proto::{
    project_prototypes, prototype_loss, prototype_loss_and_grad, train_prototypes, BranchConfig, BranchId,
    LossWeights, PatchExtent, TrainConfig,
};

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn rhythm_config(per_class: usize) -> BranchConfig {
    BranchConfig {
        branch: BranchId::Rhythm1d,
        prototypes_per_class: per_class,
        extent: PatchExtent::Global,
        latent_dim: 3,
        kernel_width: 3,
        dilations: vec![1],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prototype_gradient_matches_central_differences(
        seed in any::<u64>(),
        cluster in 0.0f64..2.0,
        separation in 0.0f64..0.5,
    ) {
        let inst = random_proto_instance(seed, 5, 2, 2);
        let w = LossWeights { cluster, separation };
        let (_, g) = prototype_loss_and_grad(&inst.batch, &inst.labels, &inst.prototypes, &inst.head, w).unwrap();
        for (j, p) in inst.prototypes.iter().enumerate() {
            let numeric = central_difference(&p.vector, 1e-5, |v| {
                let mut protos = inst.prototypes.clone();
                protos[j].vector.copy_from_slice(v);
                prototype_loss(&inst.batch, &inst.labels, &protos, &inst.head, w).unwrap().total
            });
            prop_assert!(relative_error(&g.prototypes[j], &numeric) < 1e-4, "prototype {}", j);
        }
        let numeric = central_difference(&inst.head.bias, 1e-5, |b| {
            let mut head = inst.head.clone();
            head.bias.copy_from_slice(b);
            prototype_loss(&inst.batch, &inst.labels, &inst.prototypes, &head, w).unwrap().total
        });
        prop_assert!(relative_error(&g.head_bias, &numeric) < 1e-4);
    }

    #[test]
    fn projection_lands_on_class_positive_patches(seed in any::<u64>()) {
        let inst = random_proto_instance(seed, 7, 3, 2);
        let proj = project_prototypes(&inst.prototypes, &inst.batch, &inst.labels);
        for (i, p) in proj.prototypes.iter().enumerate() {
            if proj.unprojected.contains(&i) {
                prop_assert!(inst.labels.iter().all(|y| !y[p.class_id]));
                continue;
            }
            let src = p.source.expect("projected prototypes record their source");
            let r = inst.batch.iter().position(|b| b.record_id == src.record_id).unwrap();
            prop_assert!(inst.labels[r][p.class_id]);
            let patch = inst.batch[r].get(p.branch).unwrap().patch(src.position);
            for (a, b) in unit(patch).iter().zip(&p.vector) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
        // projecting again changes nothing: each prototype is its own best match
        let again = project_prototypes(&proj.prototypes, &inst.batch, &inst.labels);
        prop_assert_eq!(again.prototypes, proj.prototypes);
    }
}

#[test]
fn accepted_training_steps_never_increase_the_loss() {
    for seed in 0..5 {
        let inst = random_proto_instance(seed, 12, 3, 2);
        let out = train_prototypes(&inst.batch, &inst.labels, &rhythm_config(2), 3, &TrainConfig { epochs: 15, ..Default::default() }).unwrap();
        let totals: Vec<f64> = out.loss_history.iter().map(|l| l.total).collect();
        assert!(totals.len() >= 2, "no step accepted for seed {seed}");
        assert!(totals.windows(2).all(|w| w[1] <= w[0]), "{totals:?}");
        assert!(totals.last().unwrap() < &totals[0]);
    }
}

#[test]
fn class_without_positives_is_frozen_and_left_unprojected() {
    let mut inst = random_proto_instance(3, 10, 3, 2);
    inst.labels.iter_mut().for_each(|y| y[2] = false);
    let out = train_prototypes(&inst.batch, &inst.labels, &rhythm_config(2), 3, &TrainConfig { epochs: 5, ..Default::default() }).unwrap();
    assert_eq!(out.frozen_classes, vec![2]);
    let proj = project_prototypes(&out.prototypes, &inst.batch, &inst.labels);
    let frozen: Vec<usize> = out.prototypes.iter().enumerate().filter(|(_, p)| p.class_id == 2).map(|(i, _)| i).collect();
    assert_eq!(proj.unprojected, frozen);
    for &i in &frozen {
        assert_eq!(proj.prototypes[i], out.prototypes[i]);
    }
}
