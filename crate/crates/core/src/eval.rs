//! Similarity scoring, Spearman correlation and a synthetic overlap task.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng;

use crate::encoder::EncoderParams;
use crate::error::{HiclError, Result};
use crate::hierarchy::{hierarchical_encode_values, PoolingMode};
use crate::numerics::{cosine, Purpose, RngStream};
use crate::textproc::{tokenize, TokenSeq, Vocab};

#[derive(Clone, Debug, PartialEq)]
pub struct StsExample {
    pub first: TokenSeq,
    pub second: TokenSeq,
    /// Gold similarity in `[0, 5]`.
    pub gold: f64,
}

impl StsExample {
    pub fn from_tuples(rows: Vec<(TokenSeq, TokenSeq, f64)>) -> Vec<Self> {
        rows.into_iter().map(|(first, second, gold)| Self { first, second, gold }).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub predicted: Vec<f64>,
    pub gold: Vec<f64>,
    pub spearman: f64,
}

impl EvalReport {
    pub fn pairs(&self) -> usize {
        self.predicted.len()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("pair\tpredicted\tgold\n");
        for (i, (p, g)) in self.predicted.iter().zip(&self.gold).enumerate() {
            let _ = writeln!(out, "{i}\t{p:.6}\t{g}");
        }
        let _ = writeln!(out, "pairs\t{}", self.pairs());
        let _ = writeln!(out, "spearman\t{:.6}", self.spearman);
        out
    }
}

/// Cosine similarity of the two pooled sequence vectors, dropout off.
pub fn predict_similarity(
    params: &EncoderParams,
    pair: (&TokenSeq, &TokenSeq),
    slice_len: usize,
    mode: PoolingMode,
) -> Result<f64> {
    let v = hierarchical_encode_values(params, &[pair.0.clone(), pair.1.clone()], slice_len, mode, false)?;
    cosine(v.row(0), v.row(1))
}

/// Average (fractional) ranks starting at 1; ties share the mean of their positions.
pub fn fractional_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of tie-averaged ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(HiclError::shape("spearman", format!("lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(HiclError::invalid("spearman needs at least two observations"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(HiclError::invalid("spearman input contains non-finite values"));
    }
    pearson(&fractional_ranks(x), &fractional_ranks(y))
        .ok_or_else(|| HiclError::invalid("spearman is undefined for constant input"))
}

/// Score every pair and correlate with the gold scores. Sentences are
/// encoded in parallel; results do not depend on scheduling.
pub fn evaluate(params: &EncoderParams, dataset: &[StsExample], slice_len: usize, mode: PoolingMode) -> Result<EvalReport> {
    if dataset.len() < 2 {
        return Err(HiclError::invalid("evaluation needs at least two pairs"));
    }
    let sentences: Vec<TokenSeq> = dataset.iter().flat_map(|e| [e.first.clone(), e.second.clone()]).collect();
    let vectors = hierarchical_encode_values(params, &sentences, slice_len, mode, true)?;
    let predicted = (0..dataset.len())
        .map(|i| cosine(vectors.row(2 * i), vectors.row(2 * i + 1)))
        .collect::<Result<Vec<_>>>()?;
    let gold: Vec<f64> = dataset.iter().map(|e| e.gold).collect();
    let spearman = spearman(&predicted, &gold)?;
    Ok(EvalReport { predicted, gold, spearman })
}

/// Gold levels: shared fraction `k / 5` for `k` in `0..=5`, scored `5 * k / 5 = k`.
pub const SHARED_LEVELS: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPair {
    pub first: String,
    pub second: String,
    pub gold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSet {
    /// Every generated sentence, pair by pair.
    pub corpus: Vec<String>,
    pub pairs: Vec<SyntheticPair>,
}

impl SyntheticSet {
    pub fn examples(&self, vocab: &Vocab) -> Vec<StsExample> {
        self.pairs
            .iter()
            .map(|p| StsExample { first: tokenize(&p.first, vocab), second: tokenize(&p.second, vocab), gold: p.gold })
            .collect()
    }

    /// STS file body: `first \t second \t gold` per line.
    pub fn to_sts_tsv(&self) -> String {
        self.pairs.iter().map(|p| format!("{}\t{}\t{}\n", p.first, p.second, p.gold)).collect()
    }
}

pub fn synthetic_word(id: usize) -> String {
    format!("w{id}")
}

/// Pairs whose second sentence keeps `floor(p * len)` randomly chosen
/// positions of the first and resamples the rest, with `p` uniform over
/// `{0, 0.2, .., 1}` and gold `5p`.
pub fn generate_synthetic(seed: u64, n_pairs: usize, vocab_size: usize, body_length: usize) -> Result<SyntheticSet> {
    generate_keyed(seed, 0, n_pairs, vocab_size, body_length)
}

fn generate_keyed(seed: u64, key: u64, n_pairs: usize, vocab_size: usize, body_length: usize) -> Result<SyntheticSet> {
    if vocab_size < 50 {
        return Err(HiclError::invalid(format!("synthetic vocab_size must be at least 50, got {vocab_size}")));
    }
    if body_length < 8 {
        return Err(HiclError::invalid(format!("synthetic body_length must be at least 8, got {body_length}")));
    }
    if n_pairs == 0 {
        return Err(HiclError::invalid("synthetic set needs at least one pair"));
    }
    let mut rng = RngStream::new(seed, Purpose::Data).fork(key);
    let mut corpus = Vec::with_capacity(2 * n_pairs);
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let level = rng.gen_range(0..SHARED_LEVELS);
        let first: Vec<usize> = (0..body_length).map(|_| rng.gen_range(0..vocab_size)).collect();
        let mut second: Vec<usize> = (0..body_length).map(|_| rng.gen_range(0..vocab_size)).collect();
        let shared = level * body_length / (SHARED_LEVELS - 1);
        for pos in sample(&mut rng, body_length, shared) {
            second[pos] = first[pos];
        }
        let text = |ids: &[usize]| ids.iter().map(|&i| synthetic_word(i)).collect::<Vec<_>>().join(" ");
        let (a, b) = (text(&first), text(&second));
        corpus.push(a.clone());
        corpus.push(b.clone());
        pairs.push(SyntheticPair { first: a, second: b, gold: level as f64 });
    }
    Ok(SyntheticSet { corpus, pairs })
}

/// Independent train, dev and test sets drawn from disjoint streams of `seed`.
#[derive(Clone, Debug)]
pub struct SyntheticSplits {
    pub train: SyntheticSet,
    pub dev: SyntheticSet,
    pub test: SyntheticSet,
}

pub fn synthetic_splits(
    seed: u64,
    (train_pairs, dev_pairs, test_pairs): (usize, usize, usize),
    vocab_size: usize,
    body_length: usize,
) -> Result<SyntheticSplits> {
    Ok(SyntheticSplits {
        train: generate_keyed(seed, 1, train_pairs, vocab_size, body_length)?,
        dev: generate_keyed(seed, 2, dev_pairs, vocab_size, body_length)?,
        test: generate_keyed(seed, 3, test_pairs, vocab_size, body_length)?,
    })
}
