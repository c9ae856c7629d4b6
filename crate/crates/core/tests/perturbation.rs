mod common;

use common::{argmax, softmax};
use dvge_core::debias::{clip_eps, perturb, train_dvge, train_plain, PerturbationConfig};
use dvge_core::nn::{Activation, AdamConfig, Mlp, MlpSpec, TrainConfig};
use dvge_core::rng::{rng_from_seed, standard_normal};
use dvge_core::Tensor;
use proptest::prelude::*;

fn tensor(v: &[f64]) -> Tensor {
    Tensor::matrix(1, v.len(), v.to_vec()).unwrap()
}

proptest! {
    #[test]
    fn displacement_never_exceeds_the_budget(
        rows in prop::collection::vec((-50.0f64..50.0, -10.0f64..10.0, -10.0f64..10.0), 1..40),
        eta1 in 0.0f64..5.0,
        eta2 in 0.0f64..5.0,
        eps_ratio in 0.0f64..1.0,
    ) {
        let z: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let fs: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let ft: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let cfg = PerturbationConfig { eta1, eta2, eps_ratio };
        let out = perturb(&tensor(&z), &tensor(&fs), &tensor(&ft), &cfg).unwrap();
        for (i, (&a, &b)) in out.data().iter().zip(&z).enumerate() {
            prop_assert!((a - b).abs() <= eps_ratio * b.abs(), "dim {}: {} -> {}", i, b, a);
            let step = eta1 * fs[i] - eta2 * ft[i];
            if step != 0.0 && b != 0.0 && eps_ratio > 0.0 {
                prop_assert!((a - b) * step >= 0.0, "moved against the step");
            }
        }
    }

    #[test]
    fn clipping_is_a_symmetric_clamp(
        pairs in prop::collection::vec((-10.0f64..10.0, 0.0f64..3.0), 1..30)
    ) {
        let v: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let e: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let c = clip_eps(&v, &e).unwrap();
        for i in 0..v.len() {
            prop_assert_eq!(c[i], v[i].max(-e[i]).min(e[i]));
        }
    }
}

#[test]
fn zero_coordinates_and_identity_config_are_fixed_points() {
    let z = tensor(&[0.0, 1.5, -0.0, -2.0]);
    let f = tensor(&[3.0, -3.0, 3.0, 3.0]);
    let out = perturb(&z, &f, &f, &PerturbationConfig::new(2.0, 0.0)).unwrap();
    assert_eq!(out.data()[0], 0.0);
    assert_eq!(out.data()[2], 0.0);
    assert_eq!(
        perturb(&z, &f, &f, &PerturbationConfig::new(0.0, 0.0)).unwrap(),
        z
    );
}

#[test]
fn invalid_settings_are_rejected() {
    let z = tensor(&[1.0]);
    for cfg in [
        PerturbationConfig::new(-0.1, 0.0),
        PerturbationConfig::new(0.0, f64::NAN),
        PerturbationConfig {
            eta1: 1.0,
            eta2: 1.0,
            eps_ratio: -0.5,
        },
    ] {
        assert!(perturb(&z, &z, &z, &cfg).is_err());
    }
    assert!(perturb(
        &z,
        &tensor(&[1.0, 2.0]),
        &z,
        &PerturbationConfig::new(1.0, 0.0)
    )
    .is_err());
    assert!(perturb(
        &tensor(&[f64::INFINITY]),
        &z,
        &z,
        &PerturbationConfig::new(1.0, 0.0)
    )
    .is_err());
}

/// Focus of a linear two-class model written out by hand.
fn linear_focus(w: &Tensor, b: &Tensor, z: &[f64]) -> Vec<f64> {
    let d = z.len();
    let logits: Vec<f64> = (0..2)
        .map(|k| b.data()[k] + (0..d).map(|i| z[i] * w.data()[i * 2 + k]).sum::<f64>())
        .collect();
    let p = softmax(&logits);
    let t = argmax(&logits);
    (0..d)
        .map(|i| {
            (0..2)
                .map(|k| (p[k] - if k == t { 1.0 } else { 0.0 }) * w.data()[i * 2 + k])
                .sum()
        })
        .collect()
}

#[test]
fn one_dvge_step_matches_hand_computation() {
    let (n, d) = (8, 3);
    let mut rng = rng_from_seed(21);
    let codes = standard_normal(&mut rng, &[n, d]);
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let sensitive = Mlp::new(MlpSpec::linear(d, 2), &mut rng).unwrap();
    let task0 = Mlp::new(MlpSpec::linear(d, 2), &mut rng).unwrap();
    let adam = AdamConfig::new(0.01, 0.9, 0.999);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: n,
        adam,
    };
    let pcfg = PerturbationConfig::new(1.0, 0.5);

    let mut task = task0.clone();
    train_dvge(
        &mut task,
        &sensitive,
        &codes,
        &labels,
        &pcfg,
        &cfg,
        &mut rng_from_seed(1),
    )
    .unwrap();

    let (ws, bs) = (&sensitive.params()[0], &sensitive.params()[1]);
    let (wt, bt) = (&task0.params()[0], &task0.params()[1]);
    let mut gw = vec![0.0; d * 2];
    let mut gb = vec![0.0; 2];
    for i in 0..n {
        let z = codes.row(i);
        let fs = linear_focus(ws, bs, z);
        let ft = linear_focus(wt, bt, z);
        let zp: Vec<f64> = (0..d)
            .map(|j| {
                let eps = 0.1 * z[j].abs();
                z[j] + (fs[j] - 0.5 * ft[j]).clamp(-eps, eps)
            })
            .collect();
        let logits: Vec<f64> = (0..2)
            .map(|k| bt.data()[k] + (0..d).map(|j| zp[j] * wt.data()[j * 2 + k]).sum::<f64>())
            .collect();
        let p = softmax(&logits);
        for k in 0..2 {
            let r = (p[k] - if k == labels[i] { 1.0 } else { 0.0 }) / n as f64;
            gb[k] += r;
            for j in 0..d {
                gw[j * 2 + k] += zp[j] * r;
            }
        }
    }
    let adam_step = |p: f64, g: f64| p - adam.lr * g / (g.abs() + adam.eps);
    for (k, (&p, &g)) in wt.data().iter().zip(&gw).enumerate() {
        let got = task.params()[0].data()[k];
        assert!(
            (got - adam_step(p, g)).abs() < 1e-12,
            "w[{}]: {} vs {}",
            k,
            got,
            adam_step(p, g)
        );
    }
    for (k, (&p, &g)) in bt.data().iter().zip(&gb).enumerate() {
        assert!((task.params()[1].data()[k] - adam_step(p, g)).abs() < 1e-12);
    }
}

#[test]
fn zero_strength_is_bitwise_plain_training() {
    let mut rng = rng_from_seed(8);
    let codes = standard_normal(&mut rng, &[64, 5]);
    let labels: Vec<usize> = (0..64)
        .map(|i| usize::from(codes.row(i)[0] > 0.0))
        .collect();
    let sensitive = Mlp::new(MlpSpec::new(5, vec![8], Activation::LEAKY, 2), &mut rng).unwrap();
    let init = Mlp::new(MlpSpec::new(5, vec![8], Activation::LEAKY, 2), &mut rng).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 16,
        adam: AdamConfig::default(),
    };
    let mut a = init.clone();
    let mut b = init.clone();
    let la = train_plain(&mut a, &codes, &labels, &cfg, &mut rng_from_seed(99)).unwrap();
    let lb = train_dvge(
        &mut b,
        &sensitive,
        &codes,
        &labels,
        &PerturbationConfig::new(0.0, 0.0),
        &cfg,
        &mut rng_from_seed(99),
    )
    .unwrap();
    assert_eq!(la, lb);
    assert_eq!(a, b);
    assert_ne!(a, init);
}

#[test]
fn sensitive_classifier_is_only_read() {
    let mut rng = rng_from_seed(9);
    let codes = standard_normal(&mut rng, &[32, 4]);
    let labels: Vec<usize> = (0..32).map(|i| i % 2).collect();
    let sensitive = Mlp::new(MlpSpec::new(4, vec![6], Activation::LEAKY, 2), &mut rng).unwrap();
    let frozen = sensitive.clone();
    let mut task = Mlp::new(MlpSpec::new(4, vec![6], Activation::LEAKY, 2), &mut rng).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        adam: AdamConfig::default(),
    };
    train_dvge(
        &mut task,
        &sensitive,
        &codes,
        &labels,
        &PerturbationConfig::new(1.0, 1.0),
        &cfg,
        &mut rng,
    )
    .unwrap();
    assert_eq!(sensitive, frozen);
    let wrong = Mlp::new(MlpSpec::new(3, vec![], Activation::None, 2), &mut rng).unwrap();
    assert!(train_dvge(
        &mut task,
        &wrong,
        &codes,
        &labels,
        &PerturbationConfig::new(1.0, 1.0),
        &cfg,
        &mut rng
    )
    .is_err());
}
