use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!(
            (x - y).abs() <= tol,
            "index {}: {} vs {} (tol {})",
            i,
            x,
            y,
            tol
        );
    }
}

#[test]
fn matmul_identity_passes_through() {
    let a = Tensor::matrix(3, 4, (0..12).map(|v| v as f64 * 0.5 - 2.0).collect());
    let out = Tensor::identity(3).matmul(&a).unwrap();
    assert_eq!(out.shape(), &[3, 4]);
    assert_close(out.values(), a.values(), 0.0);
}

#[test]
fn sigmoid_at_zero_is_half() {
    let out = Tensor::vector(vec![0.0]).sigmoid().unwrap();
    assert_eq!(out.values(), &[0.5]);
}

#[test]
fn softplus_at_zero_is_ln_two() {
    // Hand evaluation: softplus(0) = ln(1 + e^0) = ln 2.
    let out = Tensor::vector(vec![0.0]).softplus().unwrap();
    assert_close(out.values(), &[std::f64::consts::LN_2], 1e-15);
}

#[test]
fn softplus_is_stable_at_extremes() {
    let out = Tensor::vector(vec![-745.0, 745.0]).softplus().unwrap();
    assert!(out.values()[0] >= 0.0 && out.values()[0] < 1e-300);
    assert!((out.values()[1] - 745.0).abs() < 1e-9);
}

#[test]
fn backward_of_sum_of_squares() {
    let tape = Tape::new();
    let x = tape.leaf(&Tensor::vector(vec![1.0, 2.0, 3.0]));
    let root = x.mul(&x).unwrap().sum_all().unwrap();
    let grads = backward(&root).unwrap();
    assert_close(grads.wrt(&x).unwrap().values(), &[2.0, 4.0, 6.0], 1e-12);
}

#[test]
fn backward_of_linear_matmul_matches_finite_differences() {
    // root = sum(W x): dW = 1 · xᵀ replicated per row, checked against
    // central differences with h = 1e-6.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w = Parameter::new(
        "w",
        Tensor::matrix(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()),
    );
    let x = Tensor::matrix(4, 1, vec![0.5, -1.5, 2.0, 0.25]);
    let report = grad_check(
        |p| p[0].matmul(&x)?.sum_all(),
        std::slice::from_ref(&w),
        1e-6,
        1e-7,
    )
    .unwrap();
    assert!(report.all_within(), "max rel err {}", report.max_rel_err());

    // Structure check: gradient row i equals xᵀ.
    let tape = Tape::new();
    let binds = Bindings::new(&tape);
    let wb = binds.bind(&w);
    let root = wb.matmul(&x).unwrap().sum_all().unwrap();
    let g = backward(&root).unwrap().wrt(&wb).unwrap();
    for r in 0..3 {
        assert_close(&g.values()[r * 4..(r + 1) * 4], x.values(), 1e-12);
    }
}

#[test]
fn backward_gives_zeros_for_unreached_parameters() {
    let tape = Tape::new();
    let x = tape.leaf(&Tensor::vector(vec![1.0, 2.0]));
    let unused = tape.leaf(&Tensor::vector(vec![3.0, 4.0, 5.0]));
    let root = x.sum_all().unwrap();
    let grads = backward(&root).unwrap();
    assert_close(grads.wrt(&unused).unwrap().values(), &[0.0, 0.0, 0.0], 0.0);
}

#[test]
fn backward_rejects_non_scalar_and_detached_roots() {
    let tape = Tape::new();
    let x = tape.leaf(&Tensor::vector(vec![1.0, 2.0]));
    match backward(&x) {
        Err(Error::NonScalarRoot(s)) => assert_eq!(s, vec![2]),
        other => panic!("expected NonScalarRoot, got {:?}", other.map(|_| ())),
    }
    let detached = Tensor::scalar_value(1.0);
    assert!(matches!(backward(&detached), Err(Error::DetachedRoot)));
}

#[test]
fn mixing_tapes_is_an_error() {
    let t1 = Tape::new();
    let t2 = Tape::new();
    let a = t1.leaf(&Tensor::vector(vec![1.0]));
    let b = t2.leaf(&Tensor::vector(vec![2.0]));
    assert!(matches!(a.add(&b), Err(Error::TapeMismatch)));
}

#[test]
fn shape_mismatch_names_the_primitive() {
    let a = Tensor::matrix(2, 3, vec![0.0; 6]);
    let b = Tensor::matrix(2, 3, vec![0.0; 6]);
    let err = a.matmul(&b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("matmul"), "{}", msg);
    assert!(msg.contains("[2, 3]"), "{}", msg);
}

#[test]
fn log_rejects_non_positive_input() {
    let err = Tensor::vector(vec![1.0, 0.0]).log().unwrap_err();
    assert!(matches!(err, Error::Domain { op: "log", .. }));
}

#[test]
fn inputs_are_never_mutated_and_results_are_reproducible() {
    let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
    let b = Tensor::matrix(2, 2, vec![0.5, -0.5, 1.5, -1.5]);
    let before = a.values().to_vec();
    let r1 = a.matmul(&b).unwrap();
    let r2 = a.matmul(&b).unwrap();
    assert_eq!(a.values(), &before[..]);
    assert_eq!(r1.values(), r2.values());
}

#[test]
fn broadcast_add_column_sum_gradient() {
    // sum(X + b) over an n-row broadcast: db = n * (gradient of the
    // single-row case).
    let n = 5;
    let bias = Parameter::new("b", Tensor::vector(vec![0.3, -0.2, 0.7]));
    let x = Tensor::matrix(n, 3, (0..15).map(|v| v as f64 * 0.1).collect());
    let tape = Tape::new();
    let binds = Bindings::new(&tape);
    let bb = binds.bind(&bias);
    let root = x.add(&bb).unwrap().sum_all().unwrap();
    let g = backward(&root).unwrap().wrt(&bb).unwrap();
    assert_close(g.values(), &[n as f64, n as f64, n as f64], 1e-12);
}

#[test]
fn concat_and_slice_roundtrip_with_gradients() {
    let tape = Tape::new();
    let a = tape.leaf(&Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
    let b = tape.leaf(&Tensor::matrix(2, 3, vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0]));
    let joined = concat(&[&a, &b], 1).unwrap();
    assert_eq!(joined.shape(), &[2, 5]);
    let back = joined.slice(1, 2, 3).unwrap();
    assert_close(back.values(), b.values(), 0.0);

    let root = back.sum_all().unwrap();
    let grads = backward(&root).unwrap();
    assert_close(grads.wrt(&a).unwrap().values(), &[0.0; 4], 0.0);
    assert_close(grads.wrt(&b).unwrap().values(), &[1.0; 6], 0.0);
}

#[test]
fn clamp_via_relu_saturates_and_passes_through() {
    let x = Tensor::vector(vec![-12.0, -3.0, 0.0, 5.0, 9.5]);
    let y = x.clamp_via_relu(-8.0, 8.0).unwrap();
    assert_close(y.values(), &[-8.0, -3.0, 0.0, 5.0, 8.0], 1e-12);
}

#[test]
fn grad_check_examples_from_named_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);

    // f = sum(sigmoid(W x)), small random W.
    let w = Parameter::new(
        "w",
        Tensor::matrix(4, 3, (0..12).map(|_| rng.random_range(-0.5..0.5)).collect()),
    );
    let x = Tensor::matrix(3, 1, vec![0.2, -0.4, 0.6]);
    let report = grad_check(
        |p| p[0].matmul(&x)?.sigmoid()?.sum_all(),
        std::slice::from_ref(&w),
        1e-5,
        1e-6,
    )
    .unwrap();
    assert!(report.all_within(), "max rel err {}", report.max_rel_err());

    // f linear in p: error at machine precision.
    let p = Parameter::new("p", Tensor::vector(vec![1.0, -2.0, 3.0]));
    let c = Tensor::vector(vec![0.5, 1.5, -0.5]);
    let report = grad_check(
        |t| t[0].mul(&c)?.sum_all(),
        std::slice::from_ref(&p),
        1e-5,
        1e-10,
    )
    .unwrap();
    assert!(report.all_within(), "max rel err {}", report.max_rel_err());

    // f = sum(relu(x)) with entries bounded away from the kink by > h.
    let p = Parameter::new("x", Tensor::vector(vec![-1.0, 0.5, 2.0, -0.25]));
    let report = grad_check(
        |t| t[0].relu()?.sum_all(),
        std::slice::from_ref(&p),
        1e-5,
        1e-6,
    )
    .unwrap();
    assert!(report.all_within(), "max rel err {}", report.max_rel_err());
}

/// Every primitive's backward matches central finite differences within
/// relative error 1e-5 on random inputs in [-2, 2] (log inputs shifted
/// positive, relu inputs kept away from the kink), over >= 100 trials.
#[test]
fn all_primitives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut trials = 0;
    for round in 0..8 {
        let n = 2 + (round % 3);
        let d = 2 + (round % 2);
        let mk = |rng: &mut ChaCha8Rng, lo: f64, hi: f64, len: usize| -> Vec<f64> {
            (0..len).map(|_| rng.random_range(lo..hi)).collect()
        };
        // Weight the reduced output by a fixed random tensor so adjoints
        // are non-uniform.
        let weight = Tensor::matrix(n, d, mk(&mut rng, -1.0, 1.0, n * d));
        let weight_v = Tensor::vector(mk(&mut rng, -1.0, 1.0, d));
        let weight_r = Tensor::vector(mk(&mut rng, -1.0, 1.0, n));

        type Case = (Vec<Parameter>, Box<dyn Fn(&[Tensor]) -> crate::error::Result<Tensor>>);
        let general = Tensor::matrix(n, d, mk(&mut rng, -2.0, 2.0, n * d));
        let positive = Tensor::matrix(n, d, mk(&mut rng, 0.25, 2.0, n * d));
        let off_kink: Vec<f64> = mk(&mut rng, 0.05, 2.0, n * d)
            .into_iter()
            .map(|v| if rng.random_range(0.0..1.0) < 0.5 { v } else { -v })
            .collect();
        let off_kink = Tensor::matrix(n, d, off_kink);
        let other = Tensor::matrix(n, d, mk(&mut rng, -2.0, 2.0, n * d));
        let mat_b = Tensor::matrix(d, n, mk(&mut rng, -2.0, 2.0, d * n));
        let bias = Tensor::vector(mk(&mut rng, -2.0, 2.0, d));

        let w = weight.clone();
        let cases: Vec<Case> = vec![
            (
                vec![Parameter::new("a", general.clone()), Parameter::new("b", mat_b.clone())],
                Box::new(move |t| t[0].matmul(&t[1])?.sum_all()),
            ),
            (
                vec![Parameter::new("a", general.clone()), Parameter::new("b", other.clone())],
                {
                    let w = weight.clone();
                    Box::new(move |t| t[0].add(&t[1])?.mul(&w)?.sum_all())
                },
            ),
            (
                vec![Parameter::new("a", general.clone()), Parameter::new("b", bias.clone())],
                {
                    let w = weight.clone();
                    Box::new(move |t| t[0].add(&t[1])?.mul(&w)?.sum_all())
                },
            ),
            (
                vec![Parameter::new("a", general.clone()), Parameter::new("b", other.clone())],
                {
                    let w = weight.clone();
                    Box::new(move |t| t[0].sub(&t[1])?.mul(&w)?.sum_all())
                },
            ),
            (
                vec![Parameter::new("a", general.clone()), Parameter::new("b", other.clone())],
                {
                    let w = weight.clone();
                    Box::new(move |t| t[0].mul(&t[1])?.mul(&w)?.sum_all())
                },
            ),
            (vec![Parameter::new("a", general.clone())], {
                let w = weight.clone();
                Box::new(move |t| t[0].negate()?.mul(&w)?.sum_all())
            }),
            (vec![Parameter::new("a", general.clone())], {
                let w = weight.clone();
                Box::new(move |t| t[0].exp()?.mul(&w)?.sum_all())
            }),
            (vec![Parameter::new("a", positive.clone())], {
                let w = weight.clone();
                Box::new(move |t| t[0].log()?.mul(&w)?.sum_all())
            }),
            (vec![Parameter::new("a", general.clone())], {
                let w = weight.clone();
                Box::new(move |t| t[0].sigmoid()?.mul(&w)?.sum_all())
            }),
            (vec![Parameter::new("a", general.clone())], {
                let w = weight.clone();
                Box::new(move |t| t[0].softplus()?.mul(&w)?.sum_all())
            }),
            (vec![Parameter::new("a", general.clone())], {
                let w = weight.clone();
                Box::new(move |t| t[0].tanh()?.mul(&w)?.sum_all())
            }),
            (vec![Parameter::new("a", off_kink.clone())], {
                let w = weight.clone();
                Box::new(move |t| t[0].relu()?.mul(&w)?.sum_all())
            }),
            (vec![Parameter::new("a", general.clone())], {
                Box::new(move |t| t[0].square()?.mul(&w)?.sum_all())
            }),
            (vec![Parameter::new("a", general.clone())], {
                let wv = weight_v.clone();
                Box::new(move |t| t[0].sum_axis(0)?.mul(&wv)?.sum_all())
            }),
            (vec![Parameter::new("a", general.clone())], {
                let wr = weight_r.clone();
                Box::new(move |t| t[0].mean_axis(1)?.mul(&wr)?.sum_all())
            }),
            (
                vec![Parameter::new("a", general.clone()), Parameter::new("b", other.clone())],
                {
                    let wr = weight_r.clone();
                    let d = d;
                    Box::new(move |t| {
                        concat(&[&t[0], &t[1]], 1)?
                            .slice(1, d / 2, d)?
                            .sum_axis(1)?
                            .mul(&wr)?
                            .sum_all()
                    })
                },
            ),
        ];

        for (params, f) in cases {
            let report = grad_check(|t| f(t), &params, 1e-5, 1e-5).unwrap();
            assert!(
                report.all_within(),
                "round {} primitive case failed: max rel err {}",
                round,
                report.max_rel_err()
            );
            trials += 1;
        }
    }
    assert!(trials >= 100, "only {} trials", trials);
}

#[test]
fn binding_twice_reuses_the_same_leaf() {
    let p = Parameter::new("w", Tensor::vector(vec![2.0]));
    let tape = Tape::new();
    let binds = Bindings::new(&tape);
    let a = binds.bind(&p);
    let b = binds.bind(&p);
    // Two uses of the same parameter accumulate one gradient.
    let root = a.mul(&b).unwrap().sum_all().unwrap();
    let grads = backward(&root).unwrap();
    let by_name = binds.grads_by_name(&grads);
    assert_close(by_name["w"].values(), &[4.0], 1e-12);
}
