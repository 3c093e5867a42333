mod common;

use common::*;
use hicl::encoder::{encode, encode_pair, encode_values, init_params, DropoutBranch, EncoderConfig, EncoderParams};
use hicl::numerics::{cosine, finite_diff_check, GradCheckOptions, Graph, Tensor};
use hicl::textproc::TokenSeq;

fn forward(params: &EncoderParams, inputs: &[TokenSeq], branch: &DropoutBranch) -> Tensor {
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false);
    let ids: Vec<&[usize]> = inputs.iter().map(|s| s.ids.as_slice()).collect();
    let out = encode(&mut g, &vars, &ids, branch).unwrap();
    g.value(out.vectors).clone()
}

#[test]
fn identical_inputs_give_identical_rows() {
    let params = tiny_params(3);
    let s = random_batch(1, 1, 10, TINY_VOCAB).remove(0);
    let out = forward(&params, &[s.clone(), s], &DropoutBranch::off());
    assert_eq!(out.row(0), out.row(1));
}

#[test]
fn output_shape_is_batch_by_d() {
    let params = init_params(1, EncoderConfig::with_dims(30, 16, 4, 1)).unwrap();
    let out = forward(&params, &random_batch(2, 3, 12, 30), &DropoutBranch::off());
    assert_eq!(out.shape(), &[3, 16]);
}

#[test]
fn branches_differ_and_rate_zero_collapses() {
    let params = tiny_params(5);
    let batch = random_batch(4, 2, 10, TINY_VOCAB);
    let ids: Vec<&[usize]> = batch.iter().map(|s| s.ids.as_slice()).collect();
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false);
    let (a, b) = encode_pair(&mut g, &vars, &ids, 0.1, 9, 1).unwrap();
    assert!(g.value(a.vectors).max_abs_diff(g.value(b.vectors)) > 0.0);
    let (a, b) = encode_pair(&mut g, &vars, &ids, 0.0, 9, 1).unwrap();
    assert_eq!(g.value(a.vectors), g.value(b.vectors));
    let (a, b) = encode_pair(&mut g, &vars, &ids[..1], 0.1, 9, 1).unwrap();
    assert_eq!((a.len(), b.len()), (1, 1));
}

#[test]
fn dropout_twins_are_closer_than_other_rows() {
    let params = init_params(11, EncoderConfig::new(200)).unwrap();
    let batch = random_batch(12, 16, 30, 200);
    let ids: Vec<&[usize]> = batch.iter().map(|s| s.ids.as_slice()).collect();
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false);
    let (a, b) = encode_pair(&mut g, &vars, &ids, 0.1, 13, 1).unwrap();
    let (a, b) = (g.value(a.vectors), g.value(b.vectors));
    let good = (0..16)
        .filter(|&i| {
            let twin = cosine(a.row(i), b.row(i)).unwrap();
            (0..16).filter(|&j| j != i).all(|j| twin > cosine(a.row(i), a.row(j)).unwrap())
        })
        .count();
    assert!(good >= 15, "only {good} of 16 rows closest to their twin");
}

#[test]
fn off_branch_is_pure() {
    let params = tiny_params(6);
    let batch = random_batch(7, 3, 14, TINY_VOCAB);
    let first = forward(&params, &batch, &DropoutBranch::off());
    for _ in 0..100 {
        assert_eq!(forward(&params, &batch, &DropoutBranch::off()), first);
    }
}

#[test]
fn permutation_equivariance() {
    let params = tiny_params(8);
    let batch = random_batch(9, 5, 14, TINY_VOCAB);
    let perm = [3, 0, 4, 1, 2];
    let permuted: Vec<TokenSeq> = perm.iter().map(|&i| batch[i].clone()).collect();
    let (a, b) = (forward(&params, &batch, &DropoutBranch::off()), forward(&params, &permuted, &DropoutBranch::off()));
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(b.row(k), a.row(i));
    }
}

#[test]
fn values_path_matches_graph_path() {
    let params = tiny_params(10);
    let batch = random_batch(11, 4, 14, TINY_VOCAB);
    let ids: Vec<&[usize]> = batch.iter().map(|s| s.ids.as_slice()).collect();
    let graph = forward(&params, &batch, &DropoutBranch::off());
    assert_eq!(encode_values(&params, &ids, &DropoutBranch::off(), false).unwrap(), graph);
    assert_eq!(encode_values(&params, &ids, &DropoutBranch::off(), true).unwrap(), graph);
}

#[test]
fn init_contract() {
    let cfg = EncoderConfig::with_dims(30, 16, 4, 2);
    let a = init_params(1, cfg).unwrap();
    assert_eq!(a, init_params(1, cfg).unwrap());
    assert_ne!(a, init_params(2, cfg).unwrap());
    assert_eq!(a.flat_len(), cfg.param_count());
    assert!(init_params(1, EncoderConfig::with_dims(30, 16, 3, 1)).is_err());
}

#[test]
fn input_errors() {
    let params = tiny_params(1);
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false);
    let none: Vec<&[usize]> = vec![];
    assert!(encode(&mut g, &vars, &none, &DropoutBranch::off()).is_err());
    let long = vec![5usize; 17];
    assert!(encode(&mut g, &vars, &[long.as_slice()], &DropoutBranch::off()).is_err());
    let bad = vec![0usize, TINY_VOCAB];
    assert!(encode(&mut g, &vars, &[bad.as_slice()], &DropoutBranch::off()).is_err());
}

#[test]
fn encoder_gradients_match_finite_differences() {
    for seed in 0..3 {
        let params = tiny_params(seed);
        let batch = random_batch(seed + 100, 3, 10, TINY_VOCAB);
        let (p, _) = DropoutBranch::pair(0.1, seed, 1).unwrap();
        let weights = random_matrix(seed, 3, 8);
        let f = |g: &mut Graph<'_>, v: &[hicl::numerics::Var]| {
            let vars = rebind(&params, &v[1..])?;
            let ids: Vec<&[usize]> = batch.iter().map(|s| s.ids.as_slice()).collect();
            let out = encode(g, &vars, &ids, &p)?;
            let prod = g.mul(out.vectors, v[0]);
            Ok(g.sum(prod))
        };
        let mut inputs = vec![weights.clone()];
        inputs.extend(trainable(&params));
        let opts = GradCheckOptions { max_coords_per_input: Some(12), ..Default::default() };
        let report = finite_diff_check(f, &inputs, opts).unwrap();
        assert!(report.passed(), "seed {seed}: worst {:?}", report.worst());
    }
}
