mod common;

use common::{central_difference, cross_entropy_sum, forward, relative_error};
use dvge_core::explain::{focus, focus_for_targets};
use dvge_core::nn::{cross_entropy, Activation, Mlp, MlpSpec};
use dvge_core::rng::{rng_from_seed, standard_normal, Rng};
use dvge_core::vae::{kl_standard_normal, reparameterize};
use dvge_core::{Graph, Tensor};
use rand::Rng as _;

const H: f64 = 1e-4;

fn random_mlp(rng: &mut Rng) -> Mlp {
    let input = rng.random_range(1..=6);
    let depth = rng.random_range(0..=2);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=16)).collect();
    let act = match rng.random_range(0..3) {
        0 => Activation::Relu,
        1 => Activation::LEAKY,
        _ => Activation::None,
    };
    let output = rng.random_range(2..=4);
    Mlp::new(MlpSpec::new(input, hidden, act, output), rng).unwrap()
}

fn with_param(mlp: &Mlp, k: usize, data: &[f64]) -> Mlp {
    let mut params = mlp.params().to_vec();
    params[k] = Tensor::new(params[k].shape().to_vec(), data.to_vec()).unwrap();
    Mlp::from_params(mlp.spec().clone(), params).unwrap()
}

#[test]
fn mlp_cross_entropy_gradients_match_finite_differences() {
    let mut rng = rng_from_seed(11);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for _ in 0..30 {
        let mlp = random_mlp(&mut rng);
        let n = rng.random_range(1..=4);
        let x = standard_normal(&mut rng, &[n, mlp.input_width()]);
        let y: Vec<usize> = (0..n)
            .map(|_| rng.random_range(0..mlp.output_width()))
            .collect();

        let mut g = Graph::new();
        let vars = mlp.bind(&mut g, true);
        let xv = g.leaf(x.clone(), true);
        let logits = mlp.forward(&mut g, &vars, xv).unwrap();
        let loss = cross_entropy(&mut g, logits, &y).unwrap();
        let mut wrt = vars.params.clone();
        wrt.push(xv);
        let grads = g.backward(loss, &wrt).unwrap();

        let base_pattern = forward(&mlp, &x).1;
        let mean_ce = |m: &Mlp, x: &Tensor| {
            let (rows, p) = forward(m, x);
            (cross_entropy_sum(&rows, &y) / n as f64, p)
        };
        for k in 0..mlp.params().len() {
            let original = mlp.params()[k].data().to_vec();
            let mut kink = false;
            let fd = central_difference(&original, H, |p| {
                let (v, pat) = mean_ce(&with_param(&mlp, k, p), &x);
                kink |= pat != base_pattern;
                v
            });
            if kink {
                continue;
            }
            for (a, b) in grads[k].data().iter().zip(&fd) {
                worst = worst.max(relative_error(*a, *b, 1e-6));
                checked += 1;
            }
        }
        let mut kink = false;
        let fd = central_difference(x.data(), H, |d| {
            let xp = Tensor::new(x.shape().to_vec(), d.to_vec()).unwrap();
            let (v, pat) = mean_ce(&mlp, &xp);
            kink |= pat != base_pattern;
            v
        });
        if !kink {
            for (a, b) in grads.last().unwrap().data().iter().zip(&fd) {
                worst = worst.max(relative_error(*a, *b, 1e-6));
                checked += 1;
            }
        }
    }
    assert!(checked > 500, "only {} coordinates checked", checked);
    assert!(worst < 1e-3, "worst relative error {}", worst);
}

#[test]
fn reparameterisation_gradient_is_analytic() {
    let mut rng = rng_from_seed(3);
    let mu = standard_normal(&mut rng, &[3, 4]);
    let logvar = standard_normal(&mut rng, &[3, 4]);
    let noise = standard_normal(&mut rng, &[3, 4]);
    let c = standard_normal(&mut rng, &[3, 4]);
    let mut g = Graph::new();
    let m = g.leaf(mu.clone(), true);
    let l = g.leaf(logvar.clone(), true);
    let e = g.constant(noise.clone());
    let cv = g.constant(c.clone());
    let z = reparameterize(&mut g, m, l, e).unwrap();
    let zc = g.mul(z, cv).unwrap();
    let s = g.sum(zc);
    let grads = g.backward(s, &[m, l]).unwrap();
    for i in 0..12 {
        assert!((grads[0].data()[i] - c.data()[i]).abs() < 1e-14);
        let expect = c.data()[i] * 0.5 * (0.5 * logvar.data()[i]).exp() * noise.data()[i];
        assert!((grads[1].data()[i] - expect).abs() < 1e-12);
    }
    let zval = g.value(z).data().to_vec();
    for i in 0..12 {
        let expect = mu.data()[i] + (0.5 * logvar.data()[i]).exp() * noise.data()[i];
        assert!((zval[i] - expect).abs() < 1e-14);
    }
}

#[test]
fn kl_gradient_matches_finite_differences() {
    let mut rng = rng_from_seed(4);
    let mu = standard_normal(&mut rng, &[2, 3]);
    let logvar = standard_normal(&mut rng, &[2, 3]);
    let kl_value = |mu: &[f64], lv: &[f64]| {
        mu.iter()
            .zip(lv)
            .map(|(m, l)| 0.5 * (m * m + l.exp() - l - 1.0))
            .sum::<f64>()
            / 2.0
    };
    let mut g = Graph::new();
    let m = g.leaf(mu.clone(), true);
    let l = g.leaf(logvar.clone(), true);
    let kl = kl_standard_normal(&mut g, m, l).unwrap();
    assert!((g.value(kl).item() - kl_value(mu.data(), logvar.data())).abs() < 1e-12);
    let grads = g.backward(kl, &[m, l]).unwrap();
    let fd_mu = central_difference(mu.data(), H, |p| kl_value(p, logvar.data()));
    let fd_lv = central_difference(logvar.data(), H, |p| kl_value(mu.data(), p));
    for (a, b) in grads[0]
        .data()
        .iter()
        .zip(&fd_mu)
        .chain(grads[1].data().iter().zip(&fd_lv))
    {
        assert!(relative_error(*a, *b, 1e-6) < 1e-6, "{} vs {}", a, b);
    }
}

#[test]
fn focus_is_the_input_gradient_of_own_prediction_loss() {
    let mut rng = rng_from_seed(5);
    let mlp = Mlp::new(MlpSpec::new(4, vec![8], Activation::LEAKY, 2), &mut rng).unwrap();
    let z = standard_normal(&mut rng, &[6, 4]);
    let (rows, base) = forward(&mlp, &z);
    let targets: Vec<usize> = rows.iter().map(|r| common::argmax(r)).collect();
    let f = focus(&mlp, &z).unwrap();
    assert_eq!(f, focus_for_targets(&mlp, &z, &targets).unwrap());
    let mut kink = false;
    let fd = central_difference(z.data(), H, |d| {
        let zp = Tensor::new(z.shape().to_vec(), d.to_vec()).unwrap();
        let (r, p) = forward(&mlp, &zp);
        kink |= p != base;
        cross_entropy_sum(&r, &targets)
    });
    assert!(!kink);
    for (a, b) in f.data().iter().zip(&fd) {
        assert!(relative_error(*a, *b, 1e-6) < 1e-5, "{} vs {}", a, b);
    }
}

#[test]
fn focus_rows_depend_only_on_their_own_sample() {
    let mut rng = rng_from_seed(6);
    let mlp = Mlp::new(MlpSpec::new(5, vec![16, 8], Activation::LEAKY, 2), &mut rng).unwrap();
    let z = standard_normal(&mut rng, &[7, 5]);
    let batch = focus(&mlp, &z).unwrap();
    for i in 0..7 {
        let single = focus(&mlp, &z.select_rows(&[i])).unwrap();
        for (a, b) in single.data().iter().zip(batch.row(i)) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}

#[test]
fn focus_leaves_the_model_untouched() {
    let mut rng = rng_from_seed(7);
    let mlp = Mlp::new(MlpSpec::new(3, vec![4], Activation::LEAKY, 2), &mut rng).unwrap();
    let before = mlp.clone();
    let z = standard_normal(&mut rng, &[4, 3]);
    let a = focus(&mlp, &z).unwrap();
    let b = focus(&mlp, &z).unwrap();
    assert_eq!(mlp, before);
    assert_eq!(a, b);
}
