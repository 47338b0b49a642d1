use behave::gradcheck::{grad_check, primitive_cases, relative_error};
use behave::{Graph, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tensor(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::new(vec![rows, cols], data).unwrap()
}

#[test]
fn every_primitive_passes_twenty_random_gradient_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in primitive_cases() {
        for i in 0..20 {
            let err = case.check(&mut rng, 1e-5).unwrap();
            assert!(err < 1e-4, "{} instance {i}: relative error {err:.3e}", case.name);
        }
    }
}

#[test]
fn the_catalogue_covers_the_whole_tape() {
    let names: Vec<&str> = primitive_cases().iter().map(|c| c.name).collect();
    for op in [
        "matmul_t", "add_row", "mul_row", "add", "sub", "mul", "scale", "add_scalar", "sigmoid", "tanh", "exp", "relu",
        "log_abs", "square", "clamp", "slice_cols", "slice_rows", "concat_cols", "concat_rows", "gather_cols", "sum",
        "mean", "sum_cols", "reshape", "softmax_xent", "bce_logits",
    ] {
        assert!(names.contains(&op), "missing {op}");
    }
}

#[test]
fn matmul_t_matches_the_textbook_product() {
    let x = tensor(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let w = tensor(2, 3, vec![1.0, 0.0, -1.0, 0.5, 0.5, 0.5]);
    let mut g = Graph::new();
    let (xv, wv) = (g.constant(x), g.constant(w));
    let y = g.matmul_t(xv, wv).unwrap();
    assert_eq!(g.value(y).shape(), [2, 2]);
    assert_eq!(g.value(y).data(), [-2.0, 3.0, -2.0, 7.5]);
}

#[test]
fn softmax_xent_and_bce_match_closed_forms() {
    let mut g = Graph::new();
    let l = g.constant(tensor(1, 3, vec![0.0, 0.0, 0.0]));
    let ce = g.softmax_xent(l, &[2]).unwrap();
    assert!((g.value(ce).item() - 3f64.ln()).abs() < 1e-14);
    let b = g.constant(tensor(2, 1, vec![0.0, 800.0]));
    let bce = g.bce_logits(b, &[1.0, 1.0]).unwrap();
    // ln 2 for the first, ~0 for a saturated correct logit; both finite
    assert!((g.value(bce).item() - 2f64.ln() / 2.0).abs() < 1e-12);
}

#[test]
fn detach_and_constants_block_gradients() {
    let mut g = Graph::new();
    let a = g.param(Tensor::vector(vec![1.0, 2.0]));
    let c = g.constant(Tensor::vector(vec![3.0, 4.0]));
    let d = g.detach(a);
    let p = g.mul(d, a).unwrap();
    let q = g.mul(p, c).unwrap();
    let loss = g.sum(q);
    let grads = g.backward(loss).unwrap();
    // only the non-detached factor contributes: d(loss)/da = d * c
    assert_eq!(grads.get(a).unwrap().data(), [3.0, 8.0]);
    assert!(grads.get(c).is_none());
    assert!(!g.requires_grad(d));
}

#[test]
fn backward_rejects_non_scalars_and_shape_errors_surface() {
    let mut g = Graph::new();
    let a = g.param(tensor(2, 2, vec![1.0; 4]));
    assert!(g.backward(a).is_err());
    let b = g.param(tensor(3, 3, vec![1.0; 9]));
    assert!(g.add(a, b).is_err());
    assert!(g.matmul_t(a, b).is_err());
    assert!(g.slice_cols(a, 1, 2).is_err());
    assert!(g.softmax_xent(a, &[0, 2]).is_err());
    assert!(grad_check(|_, v| Ok(v[0]), &[tensor(2, 2, vec![0.0; 4])], 1e-5).is_err());
}

#[test]
fn a_reused_variable_accumulates_its_adjoints() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    let y = g.mul(x, x).unwrap();
    let z = g.add(y, x).unwrap();
    let grads = g.backward(z).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), 7.0);
}

#[test]
fn relative_error_is_scale_free_with_a_floor() {
    assert_eq!(relative_error(1.0, 1.0), 0.0);
    assert!((relative_error(100.0, 101.0) - 1.0 / 101.0).abs() < 1e-15);
    assert!(relative_error(1e-12, 0.0) < 1e-3);
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |d| tensor(rows, cols, d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_of_a_sum_is_all_ones(x in matrix(3, 4)) {
        let mut g = Graph::new();
        let v = g.param(x);
        let s = g.sum(v);
        let grads = g.backward(s).unwrap();
        prop_assert!(grads.get(v).unwrap().data().iter().all(|&d| d == 1.0));
    }

    #[test]
    fn matmul_gradients_are_the_transposed_products(x in matrix(3, 4), w in matrix(2, 4)) {
        let mut g = Graph::new();
        let (xv, wv) = (g.param(x.clone()), g.param(w.clone()));
        let y = g.matmul_t(xv, wv).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        // d/dx_ij Σ x w^T = Σ_k w_kj ; d/dw_kj = Σ_i x_ij
        for i in 0..3 {
            for j in 0..4 {
                let expect: f64 = (0..2).map(|k| w.row(k)[j]).sum();
                prop_assert!((grads.get(xv).unwrap().row(i)[j] - expect).abs() < 1e-12);
            }
        }
        for k in 0..2 {
            for j in 0..4 {
                let expect: f64 = (0..3).map(|i| x.row(i)[j]).sum();
                prop_assert!((grads.get(wv).unwrap().row(k)[j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn concat_then_slice_is_identity(a in matrix(2, 3), b in matrix(2, 2)) {
        let mut g = Graph::new();
        let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
        let c = g.concat_cols(&[av, bv]).unwrap();
        let a2 = g.slice_cols(c, 0, 3).unwrap();
        let b2 = g.slice_cols(c, 3, 2).unwrap();
        prop_assert_eq!(g.value(a2), &a);
        prop_assert_eq!(g.value(b2), &b);
    }

    #[test]
    fn softmax_xent_is_shift_invariant(x in matrix(2, 5), shift in -50.0f64..50.0) {
        let mut g = Graph::new();
        let a = g.constant(x.clone());
        let b = g.constant(x.map(|v| v + shift));
        let la = g.softmax_xent(a, &[0, 4]).unwrap();
        let lb = g.softmax_xent(b, &[0, 4]).unwrap();
        prop_assert!((g.value(la).item() - g.value(lb).item()).abs() < 1e-9);
        prop_assert!(g.value(la).item() > 0.0);
    }

    #[test]
    fn sigmoid_and_tanh_stay_finite_and_bounded(x in prop::collection::vec(-800.0f64..800.0, 8)) {
        let mut g = Graph::new();
        let v = g.param(Tensor::vector(x));
        let s = g.sigmoid(v);
        let t = g.tanh(v);
        prop_assert!(g.value(s).data().iter().all(|&y| (0.0..=1.0).contains(&y)));
        prop_assert!(g.value(t).data().iter().all(|&y| (-1.0..=1.0).contains(&y)));
        let p = g.add(s, t).unwrap();
        let loss = g.sum(p);
        prop_assert!(g.backward(loss).unwrap().get(v).unwrap().is_finite());
    }
}
