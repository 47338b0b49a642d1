use behave::flow::{boundary_displacements, fit_flow, flow_nll_graph, recursive_sample, CodeSource, FlowConfig, FlowModel, FlowTrainConfig};
use behave::gradcheck::grad_check;
use behave::model::{BehaviorModel, ModelConfig};
use behave::nn::standard_normal;
use behave::params::Bound;
use behave::{Error, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg(latent: usize, blocks: usize, seed: u64) -> FlowConfig {
    FlowConfig { latent, blocks, seed }
}

/// An initialized flow whose every parameter (including the zero-initialized
/// coupling outputs) has been randomized, so no block is trivially the identity.
fn random_flow(latent: usize, blocks: usize, seed: u64) -> FlowModel {
    let mut f = FlowModel::new(cfg(latent, blocks, seed)).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(seed + 1000);
    let batch = Tensor::new(vec![32, latent], (0..32 * latent).map(|_| r.gen_range(-2.0..3.0)).collect()).unwrap();
    f.actnorm_init(&batch).unwrap();
    let names: Vec<String> = f.params.names().map(String::from).collect();
    for n in names {
        let t = f.params.get(&n).unwrap().clone();
        let noisy = t.data().iter().map(|v| v + r.gen_range(-0.3..0.3)).collect();
        f.params.set(&n, Tensor::new(t.shape().to_vec(), noisy).unwrap()).unwrap();
    }
    f
}

fn randn(rows: usize, cols: usize, seed: u64) -> Tensor {
    standard_normal(&[rows, cols], &mut ChaCha8Rng::seed_from_u64(seed))
}

/// log|det A| by Gaussian elimination with partial pivoting.
fn log_abs_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap()).unwrap();
        a.swap(c, p);
        let piv = a[c][c];
        acc += piv.abs().ln();
        for r in c + 1..n {
            let f = a[r][c] / piv;
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    acc
}

/// Numeric Jacobian of the flow at a single point (five-point stencil).
fn numeric_log_det(f: &FlowModel, z: &[f64]) -> f64 {
    let d = z.len();
    let h = 1e-4;
    let eval = |x: &[f64]| f.forward(&Tensor::new(vec![1, d], x.to_vec()).unwrap()).unwrap().0.into_data();
    let mut jac = vec![vec![0.0; d]; d];
    for j in 0..d {
        let shifted = |k: f64| {
            let mut x = z.to_vec();
            x[j] += k * h;
            eval(&x)
        };
        let (p1, m1, p2, m2) = (shifted(1.0), shifted(-1.0), shifted(2.0), shifted(-2.0));
        for i in 0..d {
            jac[i][j] = (8.0 * (p1[i] - m1[i]) - (p2[i] - m2[i])) / (12.0 * h);
        }
    }
    log_abs_det(jac)
}

#[test]
fn fresh_blocks_are_identity_up_to_the_shuffle() {
    let f = FlowModel::identity(cfg(6, 1, 3)).unwrap();
    let z = randn(4, 6, 1);
    let (u, logdet) = f.forward(&z).unwrap();
    let perm = f.permutation(0);
    for r in 0..4 {
        for j in 0..6 {
            assert_eq!(u.row(r)[j], z.row(r)[perm[j]]);
        }
        assert_eq!(logdet[r], 0.0);
    }
    let mut sorted = perm.to_vec();
    sorted.sort();
    assert_eq!(sorted, (0..6).collect::<Vec<_>>());
}

#[test]
fn empty_flow_is_identity() {
    let f = FlowModel::identity(cfg(4, 0, 0)).unwrap();
    let z = randn(3, 4, 2);
    let (u, logdet) = f.forward(&z).unwrap();
    assert_eq!(u, z);
    assert_eq!(logdet, vec![0.0; 3]);
    assert_eq!(f.inverse(&z).unwrap(), z);
}

#[test]
fn block_round_trip_within_1e_10() {
    for seed in 0..10 {
        let f = random_flow(7, 1, seed);
        let z = randn(16, 7, seed + 50).map(|v| 2.0 * v);
        let back = f.inverse(&f.forward(&z).unwrap().0).unwrap();
        assert!(back.max_abs_diff(&z) < 1e-10, "seed {seed}: {}", back.max_abs_diff(&z));
    }
}

#[test]
fn deep_flow_round_trip_within_1e_8() {
    let f = random_flow(64, 6, 11);
    let z = randn(32, 64, 12);
    let back = f.inverse(&f.forward(&z).unwrap().0).unwrap();
    assert!(back.max_abs_diff(&z) < 1e-8);
    // and the other direction
    let u = randn(32, 64, 13);
    let again = f.forward(&f.inverse(&u).unwrap()).unwrap().0;
    assert!(again.max_abs_diff(&u) < 1e-8);
}

#[test]
fn block_logdet_matches_numeric_jacobian() {
    for seed in 0..5 {
        let f = random_flow(6, 1, seed);
        let z = randn(1, 6, seed + 7).into_data();
        let (_, logdet) = f.forward(&Tensor::new(vec![1, 6], z.clone()).unwrap()).unwrap();
        let numeric = numeric_log_det(&f, &z);
        let rel = (logdet[0] - numeric).abs() / numeric.abs().max(1.0);
        assert!(rel < 1e-6, "seed {seed}: {} vs {numeric}", logdet[0]);
    }
}

#[test]
fn flow_logdet_matches_numeric_jacobian() {
    for seed in 0..5 {
        let f = random_flow(6, 2, seed + 20);
        let z = randn(1, 6, seed + 30).into_data();
        let (_, logdet) = f.forward(&Tensor::new(vec![1, 6], z.clone()).unwrap()).unwrap();
        let numeric = numeric_log_det(&f, &z);
        let rel = (logdet[0] - numeric).abs() / numeric.abs().max(1.0);
        assert!(rel < 1e-5, "seed {seed}: {} vs {numeric}", logdet[0]);
    }
}

#[test]
fn identity_flow_nll_is_standard_normal_nll() {
    let f = FlowModel::identity(cfg(2, 3, 0)).unwrap();
    let nll = f.nll(&Tensor::zeros(&[1, 2])).unwrap();
    assert!((nll - (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    assert!((nll - 1.8379).abs() < 1e-4);
    let z = randn(5, 2, 3);
    let expected: f64 = (0..5)
        .map(|r| z.row(r).iter().map(|v| 0.5 * v * v + 0.5 * (2.0 * std::f64::consts::PI).ln()).sum::<f64>())
        .sum::<f64>()
        / 5.0;
    assert!((f.nll(&z).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn nll_uses_the_change_of_variables_sign() {
    // a single block that only scales: u = s·z, density p(z) = N(sz)·|s|
    let mut f = FlowModel::identity(cfg(2, 1, 0)).unwrap();
    f.params.set("b00.an.s", Tensor::vector(vec![2.0, 2.0])).unwrap();
    let z = Tensor::new(vec![1, 2], vec![0.3, -0.1]).unwrap();
    let u2: f64 = z.data().iter().map(|v| (2.0 * v).powi(2)).sum();
    let expected = 0.5 * u2 + (2.0 * std::f64::consts::PI).ln() - 2.0 * 2f64.ln();
    assert!((f.nll(&z).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn actnorm_init_standardizes_the_batch() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let (n, d) = (200, 5);
    let data: Vec<f64> = (0..n * d).map(|i| 3.0 * (i % d) as f64 - 2.0 + (1.0 + i as f64 % 3.0) * r.gen_range(-1.0..1.0)).collect();
    let batch = Tensor::new(vec![n, d], data).unwrap();
    let mut f = FlowModel::new(cfg(d, 1, 9)).unwrap();
    f.actnorm_init(&batch).unwrap();
    // the coupling is still the identity, so outputs are shuffled actnorm outputs
    let (u, _) = f.forward(&batch).unwrap();
    for j in 0..d {
        let mean = (0..n).map(|i| u.row(i)[j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (u.row(i)[j] - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 1e-10 && (var - 1.0).abs() < 1e-10, "dim {j}: {mean} {var}");
    }
    assert!(matches!(f.actnorm_init(&batch), Err(Error::Contract(_))));
}

#[test]
fn actnorm_on_standardized_batch_is_identity_and_constant_dims_are_floored() {
    let raw = randn(100, 3, 5);
    // standardize each column exactly
    let mut std_batch = raw.clone();
    for j in 0..3 {
        let m = (0..100).map(|i| raw.row(i)[j]).sum::<f64>() / 100.0;
        let s = ((0..100).map(|i| (raw.row(i)[j] - m).powi(2)).sum::<f64>() / 100.0).sqrt();
        for i in 0..100 {
            std_batch.data_mut()[i * 3 + j] = (raw.row(i)[j] - m) / s;
        }
    }
    let mut f = FlowModel::new(cfg(3, 1, 0)).unwrap();
    f.actnorm_init(&std_batch).unwrap();
    for (s, b) in f.params.get("b00.an.s").unwrap().data().iter().zip(f.params.get("b00.an.b").unwrap().data()) {
        assert!((s - 1.0).abs() < 1e-12 && b.abs() < 1e-12);
    }

    let mut constant = randn(10, 3, 6);
    for i in 0..10 {
        constant.data_mut()[i * 3 + 1] = 4.0;
    }
    let mut f = FlowModel::new(cfg(3, 2, 0)).unwrap();
    f.actnorm_init(&constant).unwrap();
    assert!(f.params.get("b00.an.s").unwrap().data()[1] <= 1e6 + 1e-6);
    let (u, logdet) = f.forward(&constant).unwrap();
    assert!(u.is_finite() && logdet.iter().all(|l| l.is_finite()));
}

#[test]
fn uninitialized_flow_is_rejected() {
    let f = FlowModel::new(cfg(4, 2, 0)).unwrap();
    let z = randn(2, 4, 0);
    assert!(matches!(f.forward(&z), Err(Error::Contract(_))));
    assert!(matches!(f.inverse(&z), Err(Error::Contract(_))));
    assert!(matches!(f.nll(&z), Err(Error::Contract(_))));
    assert!(matches!(f.forward(&randn(2, 5, 0)), Err(Error::Shape(_))));
}

#[test]
fn flow_nll_gradients_pass_finite_differences() {
    for seed in 0..20 {
        let f = random_flow(4, 2, seed + 100);
        let (names, mut inputs): (Vec<String>, Vec<Tensor>) = f.params.iter().map(|(k, t)| (k.to_string(), t.clone())).unzip();
        inputs.push(randn(3, 4, seed + 200));
        let err = grad_check(
            |g, vars| {
                let pairs: Vec<(&str, _)> = names.iter().map(String::as_str).zip(vars.iter().copied()).collect();
                let p = Bound::from_pairs(&pairs);
                flow_nll_graph(g, &f, &p, *vars.last().unwrap())
            },
            &inputs,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}

#[test]
fn sampling_is_seeded_and_invertible() {
    let f = random_flow(5, 3, 8);
    let a = f.sample(&mut ChaCha8Rng::seed_from_u64(1), 10).unwrap();
    let b = f.sample(&mut ChaCha8Rng::seed_from_u64(1), 10).unwrap();
    assert_eq!(a, b);
    let u = standard_normal(&[10, 5], &mut ChaCha8Rng::seed_from_u64(1));
    assert!(f.forward(&a).unwrap().0.max_abs_diff(&u) < 1e-8);
    // the identity flow returns the base draws themselves
    let id = FlowModel::identity(cfg(5, 0, 0)).unwrap();
    assert_eq!(id.sample(&mut ChaCha8Rng::seed_from_u64(1), 10).unwrap(), u);
}

/// Two well-separated Gaussian blobs in 2-D.
fn mixture(n: usize, seed: u64) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n)
        .flat_map(|_| {
            let c = if r.gen_bool(0.5) { 2.0 } else { -2.0 };
            let e = standard_normal(&[2], &mut r).into_data();
            vec![c + 0.3 * e[0], 0.5 * c + 0.3 * e[1]]
        })
        .collect();
    Tensor::new(vec![n, 2], data).unwrap()
}

#[test]
fn trained_flow_beats_identity_on_a_mixture() {
    let train = mixture(512, 1);
    let held_out = mixture(256, 2);
    let tc = FlowTrainConfig {
        blocks: 4,
        epochs: 40,
        batch_size: 64,
        lr: 5e-3,
        seed: 3,
    };
    let out = fit_flow(&train, &tc).unwrap();
    let identity = FlowModel::identity(cfg(2, 4, 3)).unwrap();
    let trained = out.flow.nll(&held_out).unwrap();
    let base = identity.nll(&held_out).unwrap();
    assert!(trained < base, "{trained} vs {base}");
    assert_eq!(out.epoch_nll.len(), 40);
    // training NLL does not rise beyond a 5% noise band
    for w in out.epoch_nll.windows(2) {
        assert!(w[1] <= w[0] + 0.05 * w[0].abs(), "{:?}", out.epoch_nll);
    }
    // deterministic refit
    let again = fit_flow(&train, &tc).unwrap();
    assert_eq!(again.flow, out.flow);
}

#[test]
fn zero_epochs_gives_the_identity_flow() {
    let out = fit_flow(&mixture(10, 0), &FlowTrainConfig { epochs: 0, ..FlowTrainConfig::default() }).unwrap();
    assert!(out.epoch_nll.is_empty());
    let z = mixture(4, 1);
    assert_eq!(out.flow.forward(&z).unwrap().1, vec![0.0; 4]);
}

#[test]
fn checkpoint_round_trip_keeps_the_initialized_flag() {
    let dir = tempfile::tempdir().unwrap();
    let f = random_flow(6, 3, 2);
    let path = dir.path().join("flow.ckpt");
    f.save(&path, serde_json::json!({"epochs": 1})).unwrap();
    let back = FlowModel::load(&path).unwrap();
    assert_eq!(back, f);
    let fresh = FlowModel::new(cfg(6, 3, 2)).unwrap();
    fresh.save(&path, serde_json::Value::Null).unwrap();
    assert!(!FlowModel::load(&path).unwrap().is_initialized());
}

fn tiny_vae() -> BehaviorModel {
    let c = ModelConfig {
        joints: 2,
        frames: 4,
        latent: 4,
        hidden: 6,
        aux_hidden: 5,
    };
    BehaviorModel::init(c, 3).unwrap()
}

#[test]
fn recursive_sampling_chains_segments() {
    let m = tiny_vae();
    let x_t = vec![0.1, 0.2, -0.3, 0.4, 0.0, 1.0];
    let flow = random_flow(4, 2, 6);
    assert!(matches!(
        recursive_sample(&m, &x_t, 0, CodeSource::Prior, &mut ChaCha8Rng::seed_from_u64(0)),
        Err(Error::Contract(_))
    ));
    let one = recursive_sample(&m, &x_t, 1, CodeSource::Flow(&flow), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(one.frames(), 4);

    let seq = recursive_sample(&m, &x_t, 3, CodeSource::Flow(&flow), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    assert_eq!(seq.frames(), 12);
    // replay the construction by hand
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let mut start = x_t.clone();
    for s in 0..3 {
        let z = flow.sample(&mut r, 1).unwrap().into_data();
        let seg = m.decode(&z, &start, 4).unwrap();
        for f in 0..4 {
            assert_eq!(seq.frame(4 * s + f), seg.frame(f));
        }
        start = seg.last_frame().to_vec();
    }
    assert_eq!(boundary_displacements(&seq, 4).len(), 2);

    let wrong = random_flow(5, 1, 0);
    assert!(matches!(
        recursive_sample(&m, &x_t, 2, CodeSource::Flow(&wrong), &mut ChaCha8Rng::seed_from_u64(0)),
        Err(Error::Contract(_))
    ));
}

#[test]
fn boundary_displacement_is_the_largest_joint_jump() {
    // 2 joints, 2 segments of 2 frames; the jump at the boundary moves joint 1 by (3,4,0)
    let data = vec![
        0.0, 0.0, 0.0, 1.0, 1.0, 1.0, //
        0.0, 0.0, 0.0, 1.0, 1.0, 1.0, //
        0.5, 0.0, 0.0, 4.0, 5.0, 1.0, //
        0.5, 0.0, 0.0, 4.0, 5.0, 1.0,
    ];
    let seq = behave::PoseSequence::new("s", None, 4, 2, data).unwrap();
    assert_eq!(boundary_displacements(&seq, 2), vec![5.0]);
}
