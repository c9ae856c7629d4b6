//! End-to-end acceptance checks. Each test prints one `criterion N` line
//! with PASS or FAIL and the measured numbers, then asserts.

mod common;

use std::path::Path;
use std::time::Instant;

use dvge::commands;
use dvge::config::{DatasetSource, EncoderKind, ExperimentConfig, MethodGrid};
use dvge::report::{method_front, seed_means, MeanPoint};
use dvge_core::baselines::spearman;
use dvge_core::debias::{clip_eps, perturb, PerturbationConfig};
use dvge_core::fairness::{
    accuracy, best_accuracy_within, delta_dp, delta_eo, delta_eo_fnr, pareto_front, EvalBatch,
    TradeoffPoint,
};
use dvge_core::nn::{cross_entropy, Activation, AdamConfig, Mlp, MlpSpec};
use dvge_core::rng::{rng_from_seed, standard_normal, Rng};
use dvge_core::synth::SyntheticSpec;
use dvge_core::vae::{
    kl_standard_normal, train_factor_vae, train_vanilla_vae, TcDiscriminator, VaeConfig,
};
use dvge_core::{Graph, Tensor};
use rand::Rng as _;

fn verdict(n: u32, name: &str, pass: bool, detail: String) {
    println!(
        "criterion {} ({}): {} | {}",
        n,
        name,
        if pass { "PASS" } else { "FAIL" },
        detail
    );
    assert!(pass, "criterion {} failed: {}", n, detail);
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

// ---------------------------------------------------------------- 1

/// Plain-loop forward pass and mean cross-entropy; also reports the hidden
/// pre-activation sign pattern so that finite differences straddling a kink
/// can be recognised.
fn oracle_loss(
    spec: &MlpSpec,
    params: &[Vec<f64>],
    x: &[f64],
    rows: usize,
    y: &[usize],
) -> (f64, Vec<bool>) {
    let mut total = 0.0;
    let mut pattern = Vec::new();
    let dims = spec.layer_dims();
    for r in 0..rows {
        let mut h = x[r * spec.input_width..(r + 1) * spec.input_width].to_vec();
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let (w, b) = (&params[2 * l], &params[2 * l + 1]);
            let mut out = b.clone();
            for i in 0..fan_in {
                for j in 0..fan_out {
                    out[j] += h[i] * w[i * fan_out + j];
                }
            }
            if l + 1 < dims.len() {
                for v in out.iter_mut() {
                    pattern.push(*v > 0.0);
                    *v = match spec.activation {
                        Activation::Relu => v.max(0.0),
                        Activation::LeakyRelu(s) if *v <= 0.0 => s * *v,
                        _ => *v,
                    };
                }
            }
            h = out;
        }
        let m = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + h.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - h[y[r]];
    }
    (total / rows as f64, pattern)
}

#[test]
fn criterion_01_gradients_match_finite_differences() {
    let start = Instant::now();
    let h = 1e-4;
    let mut rng = rng_from_seed(2024);
    let (mut worst, mut checked, mut kinks) = (0.0f64, 0usize, 0usize);
    for _ in 0..100 {
        let input = rng.random_range(1..=16);
        let hidden: Vec<usize> = (0..rng.random_range(0..=2))
            .map(|_| rng.random_range(1..=16))
            .collect();
        let act = [Activation::Relu, Activation::LEAKY, Activation::None][rng.random_range(0..3)];
        let spec = MlpSpec::new(input, hidden, act, rng.random_range(2..=16));
        let mlp = Mlp::new(spec.clone(), &mut rng).unwrap();
        let rows = rng.random_range(1..=4);
        let x = standard_normal(&mut rng, &[rows, input]);
        let y: Vec<usize> = (0..rows)
            .map(|_| rng.random_range(0..spec.output_width))
            .collect();

        let mut g = Graph::new();
        let vars = mlp.bind(&mut g, true);
        let xv = g.leaf(x.clone(), true);
        let logits = mlp.forward(&mut g, &vars, xv).unwrap();
        let loss = cross_entropy(&mut g, logits, &y).unwrap();
        let mut wrt = vars.params.clone();
        wrt.push(xv);
        let grads = g.backward(loss, &wrt).unwrap();

        // slot k < params.len() is a parameter tensor, the last slot is the input
        let mut values: Vec<Vec<f64>> = mlp.params().iter().map(|p| p.data().to_vec()).collect();
        values.push(x.data().to_vec());
        let np = values.len() - 1;
        let eval = |v: &[Vec<f64>]| oracle_loss(&spec, &v[..np], &v[np], rows, &y);
        let base = eval(&values).1;
        for k in 0..values.len() {
            for i in 0..values[k].len() {
                let orig = values[k][i];
                values[k][i] = orig + h;
                let (up, pu) = eval(&values);
                values[k][i] = orig - h;
                let (down, pd) = eval(&values);
                values[k][i] = orig;
                if pu != base || pd != base {
                    kinks += 1;
                    continue;
                }
                let fd = (up - down) / (2.0 * h);
                let a = grads[k].data()[i];
                worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
                checked += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "gradient correctness",
        worst < 1e-3 && secs < 30.0,
        format!(
            "100 MLPs, {} coordinates, max rel err {:.2e} (< 1e-3), {} kink-straddling coordinates skipped, {:.1}s (< 30s)",
            checked, worst, kinks, secs
        ),
    );
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_02_metrics_match_brute_force() {
    let mut rng = rng_from_seed(7);
    let mut worst = 0.0f64;
    let mut eq_gap = 0.0f64;
    let mut batches = 0;
    let mut front_mismatch = 0;
    while batches < 1000 {
        let n = rng.random_range(4..=500);
        let bias: f64 = rng.random();
        let p: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < bias).collect();
        let y: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let s: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        if !(0..n).any(|i| s[i] && y[i]) || !(0..n).any(|i| !s[i] && y[i]) {
            continue;
        }
        batches += 1;
        let b = EvalBatch::new(&p, &y, &s).unwrap();
        let share = |keep: &dyn Fn(usize) -> bool, hit: &dyn Fn(usize) -> bool| {
            let (mut k, mut c) = (0usize, 0usize);
            for i in 0..n {
                if keep(i) {
                    k += 1;
                    if hit(i) {
                        c += 1;
                    }
                }
            }
            c as f64 / k as f64
        };
        let dp = (share(&|i| s[i], &|i| p[i]) - share(&|i| !s[i], &|i| p[i])).abs();
        let eo = (share(&|i| s[i] && y[i], &|i| p[i]) - share(&|i| !s[i] && y[i], &|i| p[i])).abs();
        let acc = share(&|_| true, &|i| p[i] == y[i]);
        let e2 = delta_eo(&b).unwrap();
        let e3 = delta_eo_fnr(&b).unwrap();
        worst = worst
            .max((delta_dp(&b).unwrap() - dp).abs())
            .max((e2 - eo).abs())
            .max((accuracy(&b).unwrap() - acc).abs());
        eq_gap = eq_gap.max((e2 - e3).abs());

        let pts: Vec<TradeoffPoint> = (0..rng.random_range(1..40))
            .map(|_| {
                TradeoffPoint::new(
                    rng.random_range(0..10) as f64 / 9.0,
                    rng.random_range(0..10) as f64 / 19.0,
                )
            })
            .collect();
        let mut brute: Vec<TradeoffPoint> = Vec::new();
        for q in &pts {
            let dominated = pts.iter().any(|r| {
                r.accuracy >= q.accuracy
                    && r.delta <= q.delta
                    && (r.accuracy > q.accuracy || r.delta < q.delta)
            });
            if !dominated && !brute.contains(q) {
                brute.push(*q);
            }
        }
        brute.sort_by(|a, b| a.delta.total_cmp(&b.delta));
        if pareto_front(&pts) != brute {
            front_mismatch += 1;
        }
    }
    verdict(
        2,
        "metric oracle equivalence",
        worst <= 1e-12 && eq_gap <= 1e-12 && front_mismatch == 0,
        format!(
            "1000 batches: max metric diff {:.1e}, max TPR-gap vs FNR-gap diff {:.1e}, pareto mismatches {}",
            worst, eq_gap, front_mismatch
        ),
    );
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_03_perturbation_invariants() {
    let mut rng = rng_from_seed(3);
    let mut violations = 0;
    let mut identity_breaks = 0;
    for _ in 0..10_000 {
        let d = rng.random_range(1..=12);
        let scale = 10f64.powi(rng.random_range(-3..=3));
        let z = standard_normal(&mut rng, &[1, d]).map(|v| v * scale);
        let (ps, pt) = (10f64.powi(rng_pow(&mut rng)), 10f64.powi(rng_pow(&mut rng)));
        let fs = standard_normal(&mut rng, &[1, d]).map(|v| v * ps);
        let ft = standard_normal(&mut rng, &[1, d]).map(|v| v * pt);
        let cfg = PerturbationConfig::new(rng.random_range(0.0..5.0), rng.random_range(0.0..5.0));
        let out = perturb(&z, &fs, &ft, &cfg).unwrap();
        violations += out
            .data()
            .iter()
            .zip(z.data())
            .filter(|(a, b)| (**a - **b).abs() > 0.1 * b.abs())
            .count();
        let same = perturb(&z, &fs, &ft, &PerturbationConfig::new(0.0, 0.0)).unwrap();
        if same
            .data()
            .iter()
            .zip(z.data())
            .any(|(a, b)| a.to_bits() != b.to_bits())
        {
            identity_breaks += 1;
        }
    }
    let clip = clip_eps(&[0.7, -0.7, 0.3], &[0.5, 0.5, 0.5]).unwrap();
    let clip_ok = clip == [0.5, -0.5, 0.3];
    verdict(
        3,
        "perturbation invariants",
        violations == 0 && identity_breaks == 0 && clip_ok,
        format!(
            "10000 cases: {} bound violations, {} identity mismatches, clip examples {:?}",
            violations, identity_breaks, clip
        ),
    );
}

fn rng_pow(rng: &mut Rng) -> i32 {
    rng.random_range(-2..=2)
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_04_identity_path_is_plain_training() {
    let mut cfg = common::tiny_config();
    cfg.methods = vec![
        MethodGrid::Plain,
        MethodGrid::Dvge {
            eta1: vec![0.0],
            eta2: vec![0.0],
            max_points: 0,
        },
    ];
    let data = dvge::pipeline::load_dataset(&cfg).unwrap();
    let ctx =
        dvge::pipeline::prepare_seed(&cfg, &data, EncoderKind::Vanilla, 5, &Default::default())
            .unwrap();
    let grid = cfg.grid();
    let plain = dvge::pipeline::run_point(&cfg, &ctx, &grid[0]).unwrap();
    let dvge = dvge::pipeline::run_point(&cfg, &ctx, &grid[1]).unwrap();
    let bits = |m: &dvge::pipeline::TaskModel| match m {
        dvge::pipeline::TaskModel::Mlp(g) => g
            .params()
            .iter()
            .flat_map(|p| p.data().iter().map(|v| v.to_bits()))
            .collect::<Vec<u64>>(),
        _ => unreachable!(),
    };
    let (a, b) = (bits(&plain.model), bits(&dvge.model));
    let identical = a == b && plain.losses == dvge.losses;
    verdict(
        4,
        "identity-path equivalence",
        identical,
        format!(
            "{} parameters compared bitwise, identical = {}",
            a.len(),
            identical
        ),
    );
}

// ---------------------------------------------------------------- 5

fn synthetic_config(name: &str, seeds: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::synthetic_default();
    cfg.experiment = name.into();
    cfg.dataset = DatasetSource::Synthetic {
        spec: SyntheticSpec {
            n: 10_000,
            label_bias: 0.3,
            proxy_corr: 0.8,
            ..Default::default()
        },
    };
    cfg.seeds = (0..seeds).collect();
    cfg
}

#[test]
fn criterion_05_synthetic_debiasing_trend() {
    let start = Instant::now();
    let mut cfg = synthetic_config("trend", 5);
    let etas = [0.0, 0.5, 1.0, 2.0];
    cfg.methods = vec![MethodGrid::Dvge {
        eta1: etas.to_vec(),
        eta2: vec![0.5],
        max_points: 0,
    }];
    let dir = tempfile::tempdir().unwrap();
    let (_, rows) = commands::sweep(&cfg, dir.path(), jobs()).unwrap();
    let means = seed_means(&rows);
    let at = |e: f64| means.iter().find(|m| m.eta1 == e).unwrap();
    let dp: Vec<f64> = etas.iter().map(|&e| at(e).delta_dp).collect();
    let acc: Vec<f64> = etas.iter().map(|&e| at(e).accuracy).collect();
    let rises: Vec<f64> = dp
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| *d > 0.0)
        .collect();
    let trend_ok = rises.is_empty() || (rises.len() == 1 && rises[0] < 0.01);
    let acc_ok = (acc[0] - acc[3]).abs() <= 0.15;
    let secs = start.elapsed().as_secs_f64();
    verdict(
        5,
        "synthetic debiasing trend",
        trend_ok && acc_ok && secs < 900.0,
        format!(
            "5-seed mean delta_dp at eta1 {:?} = {:?} (increases {:?}); accuracy {:?}; {:.0}s",
            etas,
            round4(&dp),
            round4(&rises),
            round4(&acc),
            secs
        ),
    );
}

fn round4(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_06_ablation_trends() {
    let mut cfg = synthetic_config("ablation", 5);
    cfg.ablation.encoders = vec![EncoderKind::Vanilla, EncoderKind::Factor];
    let dir = tempfile::tempdir().unwrap();
    let (_, out) = commands::ablation(&cfg, dir.path(), jobs()).unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    for ((name, r), (_, f)) in out.retrained.iter().zip(&out.fixed) {
        let rho = spearman(&r.eta1, &r.accuracy);
        let below = r
            .eta1
            .iter()
            .zip(&r.accuracy)
            .any(|(&e, &a)| e <= 0.5 && a < r.removed);
        let faster =
            (0..r.eta1.len()).all(|j| f.no_removal - f.accuracy[j] >= r.no_removal - r.accuracy[j]);
        pass &= rho <= -0.9 && below && faster;
        detail.push(format!(
            "{}: spearman {:.3}, retrained {:?} vs removal {:.4} (below at eta1<=0.5: {}), fixed {:?} from {:.4} (drops at least as fast: {})",
            name,
            rho,
            round4(&r.accuracy),
            r.removed,
            below,
            round4(&f.accuracy),
            f.no_removal,
            faster
        ));
    }
    verdict(6, "ablation trends", pass, detail.join("; "));
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_07_proxy_coverage() {
    let mut cfg = synthetic_config("proxy", 5);
    cfg.dataset = DatasetSource::Synthetic {
        spec: SyntheticSpec {
            n: 10_000,
            label_bias: 0.3,
            proxy_corr: 1.0,
            ..Default::default()
        },
    };
    cfg.drop_columns = vec![dvge_core::synth::SENSITIVE.into()];
    cfg.ablation.encoders = vec![EncoderKind::Vanilla];
    cfg.ablation.eta1 = vec![1.0];
    let dir = tempfile::tempdir().unwrap();
    let (_, out) = commands::ablation(&cfg, dir.path(), jobs()).unwrap();
    let r = &out.retrained[0].1;
    let leak = r.removed > 0.9;
    let covered = r.accuracy[0] < 0.7;
    verdict(
        7,
        "proxy coverage",
        leak && covered,
        format!(
            "5-seed mean retrained sensitive accuracy: after removing 1 dim {:.4} (> 0.9: {}), dvge eta1=1 {:.4} (< 0.7: {}), unperturbed {:.4}",
            r.removed, leak, r.accuracy[0], covered, r.no_removal
        ),
    );
}

// ---------------------------------------------------------------- 8

/// Thresholds spread evenly over the ΔDP range covered by both fronts.
fn matched_grid(a: &[TradeoffPoint], b: &[TradeoffPoint], points: usize) -> Vec<f64> {
    let lo = a[0].delta.max(b[0].delta);
    let hi = a.last().unwrap().delta.min(b.last().unwrap().delta);
    if lo > hi {
        return Vec::new();
    }
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

fn tradeoff(front: &[dvge::io::FrontRow]) -> Vec<TradeoffPoint> {
    front
        .iter()
        .map(|r| TradeoffPoint::new(r.accuracy, r.delta))
        .collect()
}

#[test]
fn criterion_08_credit_end_to_end() {
    let start = Instant::now();
    let cfg = ExperimentConfig::credit_default(common::credit_file());
    let dir = tempfile::tempdir().unwrap();
    let (manifest, rows) = commands::sweep(&cfg, dir.path(), jobs()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let means: Vec<MeanPoint> = seed_means(&rows);
    let dv = tradeoff(&method_front(&means, "dvge", "dp"));
    let rm = tradeoff(&method_front(&means, "dim_removal", "dp"));
    let grid = matched_grid(&dv, &rm, 21);
    let wins = grid
        .iter()
        .filter(|&&t| {
            best_accuracy_within(&dv, t).unwrap_or(f64::NEG_INFINITY)
                >= best_accuracy_within(&rm, t).unwrap_or(f64::NEG_INFINITY)
        })
        .count();
    let share = if grid.is_empty() {
        0.0
    } else {
        wins as f64 / grid.len() as f64
    };
    let plain = means.iter().find(|m| m.method == "plain").unwrap().accuracy;
    let reach = means
        .iter()
        .filter(|m| m.method == "dvge" && m.delta_dp < 0.05 && m.accuracy >= plain - 0.1)
        .max_by(|a, b| a.accuracy.total_cmp(&b.accuracy));
    let pass = secs < 1200.0 && share >= 0.5 && reach.is_some() && manifest.failures.is_empty();
    verdict(
        8,
        "credit end-to-end",
        pass,
        format!(
            "{} runs in {:.0}s; dvge front {:?}; removal front {:?}; dominance at {}/{} matched delta_dp points ({:.0}%); plain accuracy {:.4}; best dvge point with delta_dp < 0.05: {}",
            rows.len(),
            secs,
            dv.iter().map(|p| (round4(&[p.accuracy])[0], round4(&[p.delta])[0])).collect::<Vec<_>>(),
            rm.iter().map(|p| (round4(&[p.accuracy])[0], round4(&[p.delta])[0])).collect::<Vec<_>>(),
            wins,
            grid.len(),
            share * 100.0,
            plain,
            reach.map_or("none".to_string(), |m| format!(
                "eta1 {} eta2 {} accuracy {:.4} delta_dp {:.4}",
                m.eta1, m.eta2, m.accuracy, m.delta_dp
            ))
        ),
    );
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_09_vae_correctness() {
    let kl = |mu: f64, lv: f64, d: usize| {
        let mut g = Graph::new();
        let m = g.constant(Tensor::full(&[1, d], mu));
        let l = g.constant(Tensor::full(&[1, d], lv));
        let k = kl_standard_normal(&mut g, m, l).unwrap();
        g.value(k).item()
    };
    let (k0, k1) = (kl(0.0, 0.0, 6), kl(1.0, 0.0, 6));
    let kl_ok = k0.abs() <= 1e-12 && (k1 - 0.5 * 6.0).abs() <= 1e-12;

    let mut rng = rng_from_seed(9);
    let x = standard_normal(&mut rng, &[500, 8]).map(|v| 0.5 + 0.2 * v);
    let vcfg = VaeConfig {
        latent_dim: 4,
        hidden_widths: vec![32, 32],
        epochs: 5,
        seed: 3,
        ..VaeConfig::default()
    };
    let vanilla = train_vanilla_vae(&x, &vcfg).unwrap();
    let factor = train_factor_vae(&x, &vcfg).unwrap();
    let bits = |m: &dvge_core::vae::VaeModel| {
        m.encoder
            .params()
            .iter()
            .chain(m.decoder.params())
            .flat_map(|p| p.data().iter().map(|v| v.to_bits()))
            .collect::<Vec<u64>>()
    };
    let same = bits(&vanilla.model) == bits(&factor.model);

    let codes = standard_normal(&mut rng, &[5000, 10]);
    let mut disc = TcDiscriminator::new(10, vec![64, 64], Activation::LEAKY, &mut rng).unwrap();
    disc.fit(&codes, 5, 64, AdamConfig::new(1e-4, 0.5, 0.9), &mut rng)
        .unwrap();
    let fresh = standard_normal(&mut rng, &[5000, 10]);
    let acc = disc.accuracy(&fresh, &mut rng).unwrap();
    let disc_ok = (acc - 0.5).abs() <= 0.05;
    verdict(
        9,
        "vae correctness",
        kl_ok && same && disc_ok,
        format!(
            "KL(0,0) = {:e}, KL(1,0) over 6 dims = {} (expected 3), gamma=0 bit-identical: {}, discriminator accuracy on factorised codes {:.4}",
            k0, k1, same, acc
        ),
    );
}

// ---------------------------------------------------------------- 10

#[test]
fn criterion_10_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::synthetic_default();
    cfg.seeds = vec![0];
    let cfg_path = common::write_config(dir.path(), &cfg);
    let run = |out: &Path| {
        let o = common::dvge(&[
            "sweep",
            "--config",
            cfg_path.to_str().unwrap(),
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", common::text(&o.stderr));
        (
            std::fs::read(out.join("synthetic_results.csv")).unwrap(),
            std::fs::read(out.join("synthetic_pareto.csv")).unwrap(),
        )
    };
    let a = run(&dir.path().join("first"));
    let b = run(&dir.path().join("second"));
    let rows = a.0.iter().filter(|&&c| c == b'\n').count() - 1;
    verdict(
        10,
        "determinism",
        a == b,
        format!(
            "two fresh sweeps of {} rows: results identical {}, fronts identical {}",
            rows,
            a.0 == b.0,
            a.1 == b.1
        ),
    );
}
