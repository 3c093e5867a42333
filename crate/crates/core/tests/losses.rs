mod common;

use common::*;
use hicl::losses::{
    entailment_loss, global_loss, info_nce, local_loss, local_mask, total_loss, ContrastMask, LossConfig, LossViews,
    Relationship, Variant,
};
use hicl::numerics::{finite_diff_check, GradCheckOptions, Graph, Tensor, Var};

fn scalar(g: &Graph<'_>, v: Var) -> f64 {
    g.value(v).item().unwrap()
}

fn nce(anchor: &[f64], positive: &[f64], negatives: &[Vec<f64>], tau: f64) -> f64 {
    let mut g = Graph::new();
    let a = g.constant(Tensor::matrix(1, anchor.len(), anchor.to_vec()).unwrap());
    let p = g.constant(Tensor::matrix(1, positive.len(), positive.to_vec()).unwrap());
    let (n, mask) = if negatives.is_empty() {
        (None, ContrastMask::from_fn(1, 0, |_, _| true))
    } else {
        (Some(g.constant(Tensor::from_rows(negatives).unwrap())), ContrastMask::from_fn(1, negatives.len(), |_, _| true))
    };
    let out = info_nce(&mut g, a, p, n, &mask, tau).unwrap();
    scalar(&g, out.mean)
}

#[test]
fn info_nce_worked_examples() {
    let tiny = nce(&[1.0, 0.0], &[2.0, 0.0], &[vec![0.0, 3.0]], 0.05);
    assert_close(tiny, (-20f64).exp().ln_1p(), 1e-12);
    assert!((tiny - 2.061e-9).abs() < 1e-12);
    for tau in [0.01, 0.05, 1.0] {
        let half = nce(&[1.0, 1.0], &[1.0, 0.0], &[vec![0.0, 1.0]], tau);
        assert_close(half, std::f64::consts::LN_2, 1e-12);
    }
    assert_eq!(nce(&[1.0, 2.0], &[3.0, 1.0], &[], 0.05), 0.0);
}

#[test]
fn info_nce_rejects_bad_inputs() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
    let p = g.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
    let mask = ContrastMask::from_fn(1, 0, |_, _| true);
    assert!(info_nce(&mut g, a, p, None, &mask, 0.05).is_err());
    assert!(info_nce(&mut g, p, p, None, &mask, 0.0).is_err());
}

fn two_views(seed: u64, parents: &[usize], d: usize) -> (Tensor, Tensor) {
    (random_matrix(seed, parents.len(), d), random_matrix(seed + 1000, parents.len(), d))
}

fn losses_on(a: &Tensor, b: &Tensor, parents: &[usize], lengths: &[usize], cfg: &LossConfig) -> (f64, f64, f64, Vec<f64>) {
    let mut g = Graph::new();
    let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
    let ha = hier_from(&mut g, va, parents, lengths);
    let hb = hier_from(&mut g, vb, parents, lengths);
    let l = local_loss(&mut g, &ha, &hb, cfg).unwrap();
    let gl = global_loss(&mut g, &ha, &hb, cfg, None).unwrap();
    let e = entailment_loss(&mut g, &ha, &hb, cfg).unwrap();
    let per = g.value(l.per_anchor).data().to_vec();
    (scalar(&g, l.mean), scalar(&g, gl.mean), scalar(&g, e.mean), per)
}

#[test]
fn global_and_entailment_reduce_to_the_scalar_example() {
    let a = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let (_, gl, e, _) = losses_on(&a, &a, &[0, 1], &[4, 4], &LossConfig::default());
    assert_close(gl, (-20f64).exp().ln_1p(), 1e-12);
    assert_close(e, (-20f64).exp().ln_1p(), 1e-12);
}

#[test]
fn batch_of_one_has_zero_loss_and_a_warning() {
    let a = random_matrix(1, 1, 4);
    let b = random_matrix(2, 1, 4);
    let mut g = Graph::new();
    let (va, vb) = (g.constant(a), g.constant(b));
    let ha = hier_from(&mut g, va, &[0], &[5]);
    let hb = hier_from(&mut g, vb, &[0], &[5]);
    let out = total_loss(&mut g, &LossViews::pair(&ha, &hb), &LossConfig::default()).unwrap();
    assert_eq!(out.breakdown.total, 0.0);
    assert!(out.breakdown.warnings.iter().any(|w| w.contains("global")));
    let e = entailment_loss(&mut g, &ha, &hb, &LossConfig::default()).unwrap();
    assert_eq!(scalar(&g, e.mean), 0.0);
}

#[test]
fn local_mask_counts() {
    let parents = [0, 0, 1];
    let neither = local_mask(&parents, Relationship::Neither);
    assert_eq!(neither.count(0), 1);
    assert!(!neither.includes(0, 1) && neither.includes(0, 2) && !neither.includes(0, 0));
    assert_eq!(local_mask(&parents, Relationship::Negative).count(0), 2);
    assert_eq!(local_mask(&parents, Relationship::Positive).count(0), 1);
}

#[test]
fn positive_mode_with_identical_siblings_matches_dropout_term() {
    let parents = [0, 0, 0, 1, 2];
    let lengths = [8, 8, 3, 6, 2];
    let mut a = random_matrix(3, 5, 6);
    let mut b = random_matrix(4, 5, 6);
    for t in [&mut a, &mut b] {
        let row0 = t.row(0).to_vec();
        for r in 1..3 {
            t.data_mut()[r * 6..(r + 1) * 6].copy_from_slice(&row0);
        }
    }
    let pos = LossConfig { relationship: Relationship::Positive, ..LossConfig::default() };
    let neither = LossConfig::default();
    let (lp, _, _, per_p) = losses_on(&a, &b, &parents, &lengths, &pos);
    let (ln, _, _, per_n) = losses_on(&a, &b, &parents, &lengths, &neither);
    assert!((lp - ln).abs() < 1e-10, "{lp} vs {ln}");
    for (x, y) in per_p.iter().zip(&per_n) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn entailment_equals_global_for_single_segment_sequences() {
    let parents = [0, 1, 2, 3];
    let lengths = [5, 9, 2, 7];
    let (a, b) = two_views(5, &parents, 8);
    let (_, gl, e, _) = losses_on(&a, &b, &parents, &lengths, &LossConfig::default());
    assert!((gl - e).abs() < 1e-10);
}

#[test]
fn losses_are_scale_invariant() {
    let parents = [0, 0, 1, 2, 2, 2];
    let lengths = [32, 4, 20, 32, 32, 1];
    let (a, b) = two_views(6, &parents, 8);
    for rel in [Relationship::Neither, Relationship::Negative, Relationship::Positive] {
        let cfg = LossConfig { relationship: rel, ..LossConfig::default() };
        let base = losses_on(&a, &b, &parents, &lengths, &cfg);
        for c in [1e-3, 3.7, 1e3] {
            let mut sa = a.clone();
            // Row 2 is the only segment of sequence 1, so its sequence row scales too.
            sa.data_mut()[16..24].iter_mut().for_each(|x| *x *= c);
            let sb = Tensor::matrix(6, 8, b.data().iter().map(|x| x * c).collect()).unwrap();
            let scaled = losses_on(&sa, &sb, &parents, &lengths, &cfg);
            assert!((base.0 - scaled.0).abs() < 1e-10);
            assert!((base.1 - scaled.1).abs() < 1e-10);
            assert!((base.2 - scaled.2).abs() < 1e-10);
        }
    }
}

#[test]
fn batch_permutation_permutes_per_anchor_losses() {
    let parents = [0, 1, 2, 3];
    let lengths = [3, 3, 3, 3];
    let (a, b) = two_views(7, &parents, 8);
    let perm = [2, 0, 3, 1];
    let pa = Tensor::from_rows(&perm.iter().map(|&i| a.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
    let pb = Tensor::from_rows(&perm.iter().map(|&i| b.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
    let cfg = LossConfig { relationship: Relationship::Negative, ..LossConfig::default() };
    let (l, gl, _, per) = losses_on(&a, &b, &parents, &lengths, &cfg);
    let (lq, glq, _, perq) = losses_on(&pa, &pb, &parents, &lengths, &cfg);
    assert!((l - lq).abs() < 1e-12 && (gl - glq).abs() < 1e-12);
    for (k, &i) in perm.iter().enumerate() {
        assert!((perq[k] - per[i]).abs() < 1e-12);
    }
}

#[test]
fn losses_are_positive_and_shrink_with_tau_when_positives_dominate() {
    let a = Tensor::from_rows(&[vec![1.0, 0.1, 0.0], vec![0.0, 1.0, 0.2], vec![0.3, 0.0, 1.0]]).unwrap();
    let b = Tensor::from_rows(&[vec![1.0, 0.2, 0.1], vec![0.1, 1.0, 0.1], vec![0.2, 0.1, 1.0]]).unwrap();
    let parents = [0, 1, 2];
    let mut prev = f64::INFINITY;
    for tau in [1.0, 0.1, 0.05, 0.01] {
        let cfg = LossConfig { tau, ..LossConfig::default() };
        let (l, gl, _, _) = losses_on(&a, &b, &parents, &[1, 1, 1], &cfg);
        assert!(l >= 0.0 && gl > 0.0 && gl < prev, "tau {tau}: {gl} vs {prev}");
        prev = gl;
    }
}

#[test]
fn saturated_similarities_stay_finite() {
    let a = Tensor::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![1.0, 0.0]]).unwrap();
    let b = Tensor::from_rows(&[vec![-1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
    let cfg = LossConfig { tau: 0.01, relationship: Relationship::Negative, variant: Variant::HiclV2, beta: 0.1, ..LossConfig::default() };
    let (l, gl, e, _) = losses_on(&a, &b, &[0, 1, 2], &[1, 1, 1], &cfg);
    assert!(l.is_finite() && gl.is_finite() && e.is_finite());
    assert!(gl > 100.0);
}

#[test]
fn total_loss_combinations() {
    let parents = [0, 0, 1, 2];
    let lengths = [32, 6, 10, 11];
    let (a, b) = two_views(8, &parents, 6);
    let run = |cfg: LossConfig| {
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
        let ha = hier_from(&mut g, va, &parents, &lengths);
        let hb = hier_from(&mut g, vb, &parents, &lengths);
        total_loss(&mut g, &LossViews::pair(&ha, &hb), &cfg).unwrap().breakdown
    };
    let hicl = run(LossConfig::default());
    assert!((hicl.total - (0.05 * hicl.local + 0.95 * hicl.global)).abs() < 1e-12);
    let zero = run(LossConfig { alpha: 0.0, ..LossConfig::default() });
    let global_only = run(LossConfig { variant: Variant::GlobalOnly, ..LossConfig::default() });
    assert_eq!(zero.total.to_bits(), global_only.total.to_bits());
    assert_eq!(global_only.total.to_bits(), global_only.global.to_bits());
    let one = run(LossConfig { alpha: 1.0, ..LossConfig::default() });
    let local_only = run(LossConfig { variant: Variant::LocalOnly, ..LossConfig::default() });
    assert_eq!(one.total.to_bits(), local_only.total.to_bits());
    let v2 = run(LossConfig { variant: Variant::HiclV2, beta: 0.0, ..LossConfig::default() });
    assert!((v2.total - hicl.total).abs() < 1e-12);
    let v2b = run(LossConfig { variant: Variant::HiclV2, beta: 0.2, ..LossConfig::default() });
    let e = v2b.entailment.unwrap();
    assert!((v2b.total - (0.05 * v2b.local + 0.2 * e + 0.75 * v2b.global)).abs() < 1e-12);
}

#[test]
fn config_validation() {
    assert!(LossConfig { tau: 0.0, ..LossConfig::default() }.validate().is_err());
    assert!(LossConfig { alpha: 1.5, ..LossConfig::default() }.validate().is_err());
    assert!(LossConfig { alpha: 0.6, beta: 0.5, ..LossConfig::default() }.validate().is_err());
    assert!(LossConfig { beta: -0.1, ..LossConfig::default() }.validate().is_err());
    assert_eq!(LossConfig { alpha: 0.05, ..LossConfig::default() }.weights(), (0.05, 0.0, 0.95));
}

#[test]
fn loss_gradients_on_raw_embeddings() {
    let parents = [0, 0, 1, 2, 2];
    let lengths = [16, 3, 9, 16, 16];
    for rel in [Relationship::Neither, Relationship::Negative, Relationship::Positive] {
        for variant in [Variant::Hicl, Variant::HiclV2] {
            let cfg = LossConfig { relationship: rel, variant, beta: 0.1, tau: 0.5, ..LossConfig::default() };
            let (a, b) = two_views(9, &parents, 4);
            let f = |g: &mut Graph<'_>, v: &[Var]| {
                let ha = hier_from(g, v[0], &parents, &lengths);
                let hb = hier_from(g, v[1], &parents, &lengths);
                Ok(total_loss(g, &LossViews::pair(&ha, &hb), &cfg)?.total)
            };
            let report = finite_diff_check(f, &[a.with_grad(), b.with_grad()], GradCheckOptions::default()).unwrap();
            assert!(report.passed(), "{rel:?} {variant:?}: {:?}", report.worst());
        }
    }
}
