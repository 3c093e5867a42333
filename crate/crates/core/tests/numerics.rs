use hicl::numerics::{
    cosine, cosine_sim, finite_diff_check, normalize_rows, value_and_grad, GradCheckOptions, Graph, Purpose,
    RngStream, Tensor, Var,
};
use hicl::{HiclError, Result};
use proptest::prelude::*;
use rand::Rng;

fn random(seed: u64, key: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut rng = RngStream::new(seed, Purpose::Data).fork(key);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap().with_grad()
}

fn check<F>(f: F, inputs: &[Tensor]) -> f64
where
    F: for<'g> Fn(&mut Graph<'g>, &[Var]) -> Result<Var>,
{
    let report = finite_diff_check(f, inputs, GradCheckOptions::default()).unwrap();
    report.max_rel_err
}

#[test]
fn square_value_and_grad() {
    let x = Tensor::scalar(3.0).with_grad();
    let (v, g) = value_and_grad(|g, xs| Ok(g.mul(xs[0], xs[0])), &[x]).unwrap();
    assert_eq!(v, 9.0);
    assert_eq!(g[0].as_ref().unwrap().data(), &[6.0]);
}

#[test]
fn sum_value_and_grad() {
    let x = Tensor::vector(vec![1.0, 2.0, 3.0]).with_grad();
    let (v, g) = value_and_grad(|g, xs| Ok(g.sum(xs[0])), &[x]).unwrap();
    assert_eq!(v, 6.0);
    assert_eq!(g[0].as_ref().unwrap().data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn logsumexp_value_and_grad() {
    let x = Tensor::vector(vec![0.0, 0.0]).with_grad();
    let (v, g) = value_and_grad(
        |g, xs| {
            let e = g.exp(xs[0]);
            let s = g.sum(e);
            Ok(g.log(s))
        },
        &[x],
    )
    .unwrap();
    assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    let grad = g[0].as_ref().unwrap();
    assert!(grad.data().iter().all(|&d| (d - 0.5).abs() < 1e-15));
}

#[test]
fn non_scalar_output_is_rejected() {
    let x = Tensor::vector(vec![1.0, 2.0]).with_grad();
    let err = value_and_grad(|g, xs| Ok(g.exp(xs[0])), &[x]).unwrap_err();
    assert!(matches!(err, HiclError::Shape { .. }), "{err}");
}

#[test]
fn nan_names_producing_op() {
    let x = Tensor::vector(vec![-1.0, 2.0]).with_grad();
    let err = value_and_grad(
        |g, xs| {
            let l = g.log(xs[0]);
            Ok(g.sum(l))
        },
        &[x],
    )
    .unwrap_err();
    match err {
        HiclError::NonFinite { op, .. } => assert_eq!(op, "log"),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn inputs_without_grad_get_none() {
    let x = Tensor::vector(vec![1.0, 2.0]).with_grad();
    let c = Tensor::vector(vec![3.0, 4.0]);
    let (v, g) = value_and_grad(
        |g, xs| {
            let p = g.mul(xs[0], xs[1]);
            Ok(g.sum(p))
        },
        &[x, c],
    )
    .unwrap();
    assert_eq!(v, 11.0);
    assert_eq!(g[0].as_ref().unwrap().data(), &[3.0, 4.0]);
    assert!(g[1].is_none());
}

#[test]
fn finite_diff_exact_for_quadratic() {
    let x = Tensor::scalar(3.0).with_grad();
    let report = finite_diff_check(|g, xs| Ok(g.mul(xs[0], xs[0])), &[x], GradCheckOptions::default()).unwrap();
    assert!(report.max_rel_err < 1e-8, "{}", report.max_rel_err);
}

#[test]
fn finite_diff_rejects_nondeterminism() {
    use std::sync::atomic::{AtomicU64, Ordering};
    let counter = AtomicU64::new(0);
    let x = Tensor::scalar(1.0).with_grad();
    let err = finite_diff_check(
        |g, xs| {
            let k = counter.fetch_add(1, Ordering::SeqCst) as f64;
            let c = g.constant(Tensor::scalar(k));
            Ok(g.mul(xs[0], c))
        },
        &[x],
        GradCheckOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(err, HiclError::NonDeterministic { .. }));
}

#[test]
fn finite_diff_rejects_bad_epsilon() {
    let x = Tensor::scalar(1.0).with_grad();
    let opts = GradCheckOptions { epsilon: 0.1, ..Default::default() };
    assert!(finite_diff_check(|g, xs| Ok(g.mul(xs[0], xs[0])), &[x], opts).is_err());
}

/// Every primitive, each reduced to a scalar through a random projection so
/// that all output coordinates carry distinct weight.
#[test]
fn every_primitive_matches_finite_differences() {
    type Prim = fn(&mut Graph<'_>, &[Var]) -> Var;
    let prims: Vec<(&str, Vec<Vec<usize>>, (f64, f64), Prim)> = vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], (-1.0, 1.0), |g, x| g.matmul(x[0], x[1])),
        ("matmul_nt", vec![vec![3, 4], vec![2, 4]], (-1.0, 1.0), |g, x| g.matmul_nt(x[0], x[1])),
        ("add_bcast_row", vec![vec![3, 4], vec![1, 4]], (-1.0, 1.0), |g, x| g.add(x[0], x[1])),
        ("sub_bcast_col", vec![vec![3, 4], vec![3, 1]], (-1.0, 1.0), |g, x| g.sub(x[0], x[1])),
        ("mul_bcast_scalar", vec![vec![3, 4], vec![]], (-1.0, 1.0), |g, x| g.mul(x[0], x[1])),
        ("div", vec![vec![3, 4], vec![3, 1]], (0.5, 2.0), |g, x| g.div(x[0], x[1])),
        ("scale", vec![vec![3, 4]], (-1.0, 1.0), |g, x| g.scale(x[0], -2.5)),
        ("exp", vec![vec![3, 4]], (-1.0, 1.0), |g, x| g.exp(x[0])),
        ("log", vec![vec![3, 4]], (0.5, 2.0), |g, x| g.log(x[0])),
        ("expm1", vec![vec![3, 4]], (-1.0, 1.0), |g, x| g.expm1(x[0])),
        ("log1p", vec![vec![3, 4]], (-0.5, 2.0), |g, x| g.log1p(x[0])),
        ("sqrt", vec![vec![3, 4]], (0.5, 2.0), |g, x| g.sqrt(x[0])),
        ("sum_rows", vec![vec![3, 4]], (-1.0, 1.0), |g, x| g.sum_rows(x[0])),
        ("transpose", vec![vec![3, 4]], (-1.0, 1.0), |g, x| g.transpose(x[0])),
        ("gather_rows", vec![vec![3, 4]], (-1.0, 1.0), |g, x| g.gather_rows(x[0], &[2, 0, 2])),
        ("concat_rows", vec![vec![2, 4], vec![1, 4]], (-1.0, 1.0), |g, x| g.concat_rows(&[x[1], x[0]])),
        ("softmax_rows", vec![vec![3, 4]], (-2.0, 2.0), |g, x| g.softmax_rows(x[0])),
        ("gelu", vec![vec![3, 4]], (-3.0, 3.0), |g, x| g.gelu(x[0])),
        ("layer_norm", vec![vec![3, 4]], (-2.0, 2.0), |g, x| g.layer_norm(x[0], 1e-5)),
    ];
    for (name, shapes, (lo, hi), prim) in prims {
        let mut worst: f64 = 0.0;
        for seed in 0..100u64 {
            let mut inputs: Vec<Tensor> =
                shapes.iter().enumerate().map(|(k, s)| random(seed, k as u64, s, lo, hi)).collect();
            let probe_seed = seed + 10_000;
            // Output shape is needed for the projection; compute it once.
            let out_shape = {
                let mut g = Graph::new();
                let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t)).collect();
                let y = prim(&mut g, &vars);
                g.value(y).shape().to_vec()
            };
            inputs.push(Tensor::new(out_shape.clone(), random(probe_seed, 99, &out_shape, -1.0, 1.0).into_data()).unwrap());
            let n = inputs.len();
            let err = check(
                move |g, x| {
                    let y = prim(g, &x[..n - 1]);
                    let p = g.mul(y, x[n - 1]);
                    Ok(g.sum(p))
                },
                &inputs,
            );
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "{name}: max rel err {worst:e}");
    }
}

#[test]
fn cosine_examples() {
    let cases = [
        (vec![1.0, 0.0], vec![1.0, 0.0], 1.0),
        (vec![1.0, 0.0], vec![0.0, 1.0], 0.0),
        (vec![1.0, 1.0], vec![1.0, 0.0], std::f64::consts::FRAC_1_SQRT_2),
    ];
    for (u, v, want) in cases {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(u.clone()));
        let b = g.constant(Tensor::vector(v.clone()));
        let c = cosine_sim(&mut g, a, b).unwrap();
        assert!((g.value(c).item().unwrap() - want).abs() < 1e-15);
        assert!((cosine(&u, &v).unwrap() - want).abs() < 1e-15);
    }
}

#[test]
fn cosine_zero_norm_is_error() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::vector(vec![0.0, 0.0]));
    let b = g.constant(Tensor::vector(vec![1.0, 0.0]));
    assert!(matches!(cosine_sim(&mut g, a, b), Err(HiclError::ZeroNorm { .. })));
    assert!(cosine(&[0.0], &[1.0]).is_err());
}

#[test]
fn cosine_gradient_matches_finite_differences() {
    for seed in 0..100 {
        let u = random(seed, 0, &[5], -1.0, 1.0);
        let v = random(seed, 1, &[5], -1.0, 1.0);
        assert!(check(|g, x| cosine_sim(g, x[0], x[1]), &[u, v]) < 1e-4);
    }
}

#[test]
fn normalize_rows_gradient_matches_finite_differences() {
    for seed in 0..100 {
        let x = random(seed, 0, &[3, 4], -1.0, 1.0);
        let w = Tensor::new(vec![3, 4], random(seed, 1, &[3, 4], -1.0, 1.0).into_data()).unwrap();
        let err = check(
            |g, x| {
                let n = normalize_rows(g, x[0], "test")?;
                let p = g.mul(n, x[1]);
                Ok(g.sum(p))
            },
            &[x, w],
        );
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

proptest! {
    #[test]
    fn cosine_scale_invariant(
        u in prop::collection::vec(-10.0f64..10.0, 4),
        v in prop::collection::vec(-10.0f64..10.0, 4),
        c in 1e-3f64..1e3,
        d in 1e-3f64..1e3,
    ) {
        prop_assume!(u.iter().any(|x| x.abs() > 1e-6) && v.iter().any(|x| x.abs() > 1e-6));
        let base = cosine(&u, &v).unwrap();
        let cu: Vec<f64> = u.iter().map(|x| x * c).collect();
        let dv: Vec<f64> = v.iter().map(|x| x * d).collect();
        prop_assert!((cosine(&cu, &dv).unwrap() - base).abs() < 1e-12);
        prop_assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rng_stream_reproducible(seed in any::<u64>(), idx in 0u64..1_000_000) {
        for p in [Purpose::Init, Purpose::DropoutA, Purpose::DropoutB, Purpose::Data, Purpose::Repetition] {
            let s = RngStream::new(seed, p);
            prop_assert_eq!(s.value(idx).to_bits(), RngStream::new(seed, p).value(idx).to_bits());
        }
    }
}
