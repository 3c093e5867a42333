#![allow(dead_code)]

use hicl::encoder::{init_params, EncoderConfig, EncoderParams, EncoderVars};
use hicl::numerics::{Purpose, RngStream, Tensor, Var};
use hicl::textproc::TokenSeq;
use hicl::Result;
use rand::Rng;

pub const TINY_VOCAB: usize = 24;

/// d=8, one layer, two heads, 16 positions.
pub fn tiny_config() -> EncoderConfig {
    let mut cfg = EncoderConfig::with_dims(TINY_VOCAB, 8, 2, 1);
    cfg.max_positions = 16;
    cfg
}

pub fn tiny_params(seed: u64) -> EncoderParams {
    init_params(seed, tiny_config()).unwrap()
}

/// Random sequences whose bodies have 1..=max_body tokens drawn from the
/// non-special part of the vocabulary.
pub fn random_batch(seed: u64, n: usize, max_body: usize, vocab: usize) -> Vec<TokenSeq> {
    let mut rng = RngStream::new(seed, Purpose::Data).fork(77);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=max_body);
            let body: Vec<usize> = (0..len).map(|_| rng.gen_range(5..vocab)).collect();
            TokenSeq::from_body(&body, 0)
        })
        .collect()
}

pub fn random_matrix(seed: u64, rows: usize, cols: usize) -> Tensor {
    let mut rng = RngStream::new(seed, Purpose::Init).fork(991);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Parameter tensors marked trainable, ready for `value_and_grad` or
/// `finite_diff_check`.
pub fn trainable(params: &EncoderParams) -> Vec<Tensor> {
    params.tensors.iter().cloned().map(Tensor::with_grad).collect()
}

pub fn rebind(params: &EncoderParams, vars: &[Var]) -> Result<EncoderVars> {
    EncoderVars::new(params.config, vars.to_vec())
}

pub fn assert_close(a: f64, b: f64, rel: f64) {
    let denom = a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
    assert!((a - b).abs() / denom <= rel, "{a} vs {b} (rel tol {rel})");
}

/// A hierarchical batch over explicit segment rows, pooled with length weights.
pub fn hier_from(
    g: &mut hicl::numerics::Graph<'_>,
    vectors: Var,
    parents: &[usize],
    lengths: &[usize],
) -> hicl::hierarchy::HierarchicalBatch {
    use hicl::encoder::{BranchLabel, EmbeddingBatch, Provenance, SegmentId};
    let provenance = parents
        .iter()
        .enumerate()
        .map(|(j, &sequence)| Provenance { sequence, segment: SegmentId::Segment(j), branch: BranchLabel::Off })
        .collect();
    let segments = EmbeddingBatch { vectors, provenance };
    let n_seq = parents.iter().max().map_or(0, |&p| p + 1);
    let (sequences, weights) =
        hicl::hierarchy::pool(g, &segments, lengths, n_seq, hicl::hierarchy::PoolingMode::Weighted).unwrap();
    hicl::hierarchy::HierarchicalBatch {
        segments,
        sequences,
        weights,
        parents: parents.to_vec(),
        lengths: lengths.to_vec(),
    }
}

/// Rank of each entry by exhaustive comparison: one plus the number of
/// strictly smaller entries, plus half the number of other equal entries.
pub fn brute_force_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            1.0 + below + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn brute_force_spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (brute_force_ranks(x), brute_force_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Every permutation of `items` (Heap's algorithm).
pub fn permutations(items: &[f64]) -> Vec<Vec<f64>> {
    fn heap(k: usize, a: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, a, out);
            let j = if k % 2 == 0 { i } else { 0 };
            if i + 1 < k {
                a.swap(j, k - 1);
            }
        }
    }
    let mut out = Vec::new();
    heap(items.len(), &mut items.to_vec(), &mut out);
    out
}

pub struct SyntheticTask {
    pub vocab: hicl::textproc::Vocab,
    pub corpus: Vec<TokenSeq>,
    pub dev: Vec<hicl::eval::StsExample>,
    pub test: Vec<hicl::eval::StsExample>,
}

/// Train/dev/test splits of the synthetic overlap task, tokenized with a
/// vocabulary built from the training sentences.
pub fn synthetic_task(seed: u64, pairs: (usize, usize, usize), vocab_size: usize, body_length: usize) -> SyntheticTask {
    let splits = hicl::eval::synthetic_splits(seed, pairs, vocab_size, body_length).unwrap();
    let vocab = hicl::textproc::Vocab::build(&splits.train.corpus, hicl::textproc::DEFAULT_VOCAB_LIMIT);
    let corpus = splits.train.corpus.iter().map(|l| hicl::textproc::tokenize(l, &vocab)).collect();
    let dev = splits.dev.examples(&vocab);
    let test = splits.test.examples(&vocab);
    SyntheticTask { vocab, corpus, dev, test }
}
