//! A small pre-norm transformer encoder. Each input is encoded
//! independently and represented by the final hidden state at its first
//! position.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HiclError, Result};
use crate::numerics::{Graph, Purpose, RngStream, Tensor, Var};
use crate::textproc::MAX_SEQ_LEN;

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
}

impl EncoderConfig {
    /// `d = 64`, 4 heads, 2 layers, feed-forward width `4d`.
    pub fn new(vocab_size: usize) -> Self {
        Self::with_dims(vocab_size, 64, 4, 2)
    }

    pub fn with_dims(vocab_size: usize, d_model: usize, n_heads: usize, n_layers: usize) -> Self {
        Self { vocab_size, d_model, n_heads, n_layers, ffn_dim: 4 * d_model, max_positions: MAX_SEQ_LEN }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 || self.ffn_dim == 0 {
            return Err(HiclError::invalid(format!("encoder dimensions must be positive: {self:?}")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(HiclError::invalid(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_positions == 0 || self.max_positions > MAX_SEQ_LEN {
            return Err(HiclError::invalid(format!("max_positions must be in 1..={MAX_SEQ_LEN}")));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    fn tensors_per_layer(&self) -> usize {
        9 + 7 * self.n_heads
    }

    pub fn tensor_count(&self) -> usize {
        2 + self.n_layers * self.tensors_per_layer() + 2
    }

    /// Names and shapes of every parameter tensor, in storage order.
    ///
    /// The order is: token embeddings, positional embeddings, then per layer
    /// `ln1.gain, ln1.bias`, per head `q.w, q.b, k.w, k.b, v.w, v.b`, per
    /// head `o.w`, then `o.b, ln2.gain, ln2.bias, ff1.w, ff1.b, ff2.w,
    /// ff2.b`, and finally `lnf.gain, lnf.bias`.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (d, dh, f) = (self.d_model, self.head_dim(), self.ffn_dim);
        let mut out = vec![
            ("tok_emb".to_string(), vec![self.vocab_size, d]),
            ("pos_emb".to_string(), vec![self.max_positions, d]),
        ];
        for l in 0..self.n_layers {
            let p = |n: &str| format!("layer{l}.{n}");
            out.push((p("ln1.gain"), vec![1, d]));
            out.push((p("ln1.bias"), vec![1, d]));
            for h in 0..self.n_heads {
                for m in ["q", "k", "v"] {
                    out.push((p(&format!("head{h}.{m}.w")), vec![d, dh]));
                    out.push((p(&format!("head{h}.{m}.b")), vec![1, dh]));
                }
            }
            for h in 0..self.n_heads {
                out.push((p(&format!("head{h}.o.w")), vec![dh, d]));
            }
            out.push((p("o.b"), vec![1, d]));
            out.push((p("ln2.gain"), vec![1, d]));
            out.push((p("ln2.bias"), vec![1, d]));
            out.push((p("ff1.w"), vec![d, f]));
            out.push((p("ff1.b"), vec![1, f]));
            out.push((p("ff2.w"), vec![f, d]));
            out.push((p("ff2.b"), vec![1, d]));
        }
        out.push(("lnf.gain".to_string(), vec![1, d]));
        out.push(("lnf.bias".to_string(), vec![1, d]));
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub tensors: Vec<Tensor>,
}

impl EncoderParams {
    pub fn from_tensors(config: EncoderConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != tensors.len() {
            return Err(HiclError::invalid(format!("expected {} tensors, got {}", layout.len(), tensors.len())));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(HiclError::shape("EncoderParams", format!("{name}: expected {shape:?}, got {:?}", t.shape())));
            }
            if !t.is_finite() {
                return Err(HiclError::invalid(format!("{name} has non-finite entries")));
            }
        }
        Ok(Self { config, tensors })
    }

    /// Record every tensor on `g`. With `trainable` the tensors are
    /// differentiable leaves; otherwise they are frozen.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a>, trainable: bool) -> EncoderVars {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { g.leaf_owned(t.clone().with_grad()) } else { g.frozen(t) })
            .collect();
        EncoderVars { config: self.config, vars }
    }

    pub fn flat_len(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

/// Xavier-uniform matrices, uniform embeddings, zero biases and unit
/// layer-norm gains. Each tensor draws from its own stream of `seed`.
pub fn init_params(seed: u64, config: EncoderConfig) -> Result<EncoderParams> {
    config.validate()?;
    let stream = RngStream::new(seed, Purpose::Init);
    let tensors = config
        .layout()
        .into_iter()
        .enumerate()
        .map(|(i, (name, shape))| {
            let n: usize = shape.iter().product();
            let bound = if name.ends_with("_emb") {
                Some(0.5)
            } else if name.ends_with(".w") {
                Some((6.0 / (shape[0] + shape[1]) as f64).sqrt())
            } else {
                None
            };
            let data = match bound {
                Some(a) => {
                    let mut rng = stream.fork(i as u64);
                    (0..n).map(|_| rng.gen_range(-a..a)).collect()
                }
                None if name.ends_with(".gain") => vec![1.0; n],
                None => vec![0.0; n],
            };
            Tensor::from_parts(shape, data)
        })
        .collect();
    EncoderParams::from_tensors(config, tensors)
}

/// Parameter handles on a particular [`Graph`].
#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub config: EncoderConfig,
    pub vars: Vec<Var>,
}

struct HeadVars {
    q: (Var, Var),
    k: (Var, Var),
    v: (Var, Var),
    o: Var,
}

struct LayerVars {
    ln1: (Var, Var),
    heads: Vec<HeadVars>,
    o_bias: Var,
    ln2: (Var, Var),
    ff1: (Var, Var),
    ff2: (Var, Var),
}

impl EncoderVars {
    pub fn new(config: EncoderConfig, vars: Vec<Var>) -> Result<Self> {
        config.validate()?;
        if vars.len() != config.tensor_count() {
            return Err(HiclError::invalid(format!("expected {} parameter vars, got {}", config.tensor_count(), vars.len())));
        }
        Ok(Self { config, vars })
    }

    fn layer(&self, l: usize) -> LayerVars {
        let h = self.config.n_heads;
        let base = 2 + l * self.config.tensors_per_layer();
        let v = |i: usize| self.vars[base + i];
        let heads = (0..h)
            .map(|j| {
                let b = 2 + 6 * j;
                HeadVars { q: (v(b), v(b + 1)), k: (v(b + 2), v(b + 3)), v: (v(b + 4), v(b + 5)), o: v(2 + 6 * h + j) }
            })
            .collect();
        let rest = 2 + 7 * h;
        LayerVars {
            ln1: (v(0), v(1)),
            heads,
            o_bias: v(rest),
            ln2: (v(rest + 1), v(rest + 2)),
            ff1: (v(rest + 3), v(rest + 4)),
            ff2: (v(rest + 5), v(rest + 6)),
        }
    }

    fn final_norm(&self) -> (Var, Var) {
        let n = self.vars.len();
        (self.vars[n - 2], self.vars[n - 1])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BranchLabel {
    /// First dropout mask `p`.
    P,
    /// Second, independent dropout mask `p+`.
    PPlus,
    Off,
}

/// Dropout configuration for one encoder pass. Masks are a pure function of
/// `(seed, label, nonce, input row, layer, site)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutBranch {
    pub rate: f64,
    pub label: BranchLabel,
    pub seed: u64,
    /// Distinguishes passes that should see fresh masks, e.g. the training step.
    pub nonce: u64,
}

impl DropoutBranch {
    pub fn off() -> Self {
        Self { rate: 0.0, label: BranchLabel::Off, seed: 0, nonce: 0 }
    }

    pub fn new(label: BranchLabel, rate: f64, seed: u64, nonce: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(HiclError::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Self { rate, label, seed, nonce })
    }

    /// The `(p, p+)` pair used for positive construction.
    pub fn pair(rate: f64, seed: u64, nonce: u64) -> Result<(Self, Self)> {
        Ok((Self::new(BranchLabel::P, rate, seed, nonce)?, Self::new(BranchLabel::PPlus, rate, seed, nonce)?))
    }

    fn active(&self) -> bool {
        self.label != BranchLabel::Off && self.rate > 0.0
    }

    fn mask(&self, row: usize, layer: usize, site: usize, shape: (usize, usize)) -> Tensor {
        let purpose = if self.label == BranchLabel::P { Purpose::DropoutA } else { Purpose::DropoutB };
        let key = ((self.nonce << 24) ^ ((row as u64) << 8) ^ ((layer as u64) << 2) ^ site as u64) & ((1 << 61) - 1);
        let mut rng = RngStream::new(self.seed, purpose).fork(key);
        let keep = 1.0 / (1.0 - self.rate);
        let data = (0..shape.0 * shape.1)
            .map(|_| if rng.gen::<f64>() < self.rate { 0.0 } else { keep })
            .collect();
        Tensor::from_parts(vec![shape.0, shape.1], data)
    }
}

/// Where an embedding row came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SegmentId {
    Whole,
    Segment(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Provenance {
    pub sequence: usize,
    pub segment: SegmentId,
    pub branch: BranchLabel,
}

/// Row-per-input representation matrix recorded on a graph.
#[derive(Clone, Debug)]
pub struct EmbeddingBatch {
    pub vectors: Var,
    pub provenance: Vec<Provenance>,
}

impl EmbeddingBatch {
    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }
}

fn check_input(config: &EncoderConfig, row: usize, ids: &[usize]) -> Result<()> {
    if ids.is_empty() {
        return Err(HiclError::invalid(format!("input {row} is empty")));
    }
    if ids.len() > config.max_positions {
        return Err(HiclError::invalid(format!(
            "input {row} has {} tokens, more than the {} supported",
            ids.len(),
            config.max_positions
        )));
    }
    if let Some(&bad) = ids.iter().find(|&&id| id >= config.vocab_size) {
        return Err(HiclError::invalid(format!("input {row} has token id {bad} outside vocab of {}", config.vocab_size)));
    }
    Ok(())
}

fn affine_norm(g: &mut Graph<'_>, x: Var, (gain, bias): (Var, Var)) -> Var {
    let n = g.layer_norm(x, LN_EPS);
    let s = g.mul(n, gain);
    g.add(s, bias)
}

fn linear(g: &mut Graph<'_>, x: Var, (w, b): (Var, Var)) -> Var {
    let y = g.matmul(x, w);
    g.add(y, b)
}

/// Row layout of a packed activation: input `i` owns rows
/// `spans[i].0..spans[i].0 + spans[i].1` and is batch row `first + i`.
#[derive(Clone, Copy)]
struct Rows<'s> {
    first: usize,
    spans: &'s [(usize, usize)],
}

/// Each input draws its own mask, exactly as if it were encoded alone.
fn dropout(g: &mut Graph<'_>, x: Var, branch: &DropoutBranch, rows: Rows<'_>, layer: usize, site: usize) -> Var {
    if !branch.active() {
        return x;
    }
    let (n, cols) = g.value(x).dims2();
    let mut data = Vec::with_capacity(n * cols);
    for (i, &(_, len)) in rows.spans.iter().enumerate() {
        data.extend_from_slice(branch.mask(rows.first + i, layer, site, (len, cols)).data());
    }
    let m = g.constant(Tensor::from_parts(vec![n, cols], data));
    g.mul(x, m)
}

/// Attention for one head. Inputs attend only within their own rows.
fn attention(g: &mut Graph<'_>, h: Var, head: &HeadVars, spans: &[(usize, usize)], scale: f64) -> Var {
    let q = linear(g, h, head.q);
    let k = linear(g, h, head.k);
    let v = linear(g, h, head.v);
    let mut ctx = Vec::with_capacity(spans.len());
    for &(start, len) in spans {
        let (qi, ki, vi) = if spans.len() == 1 {
            (q, k, v)
        } else {
            let rows: Vec<usize> = (start..start + len).collect();
            (g.gather_rows(q, &rows), g.gather_rows(k, &rows), g.gather_rows(v, &rows))
        };
        let scores = g.matmul_nt(qi, ki);
        let scores = g.scale(scores, scale);
        let probs = g.softmax_rows(scores);
        ctx.push(g.matmul(probs, vi));
    }
    let ctx = if ctx.len() == 1 { ctx[0] } else { g.concat_rows(&ctx) };
    g.matmul(ctx, head.o)
}

/// Encode token-id sequences, returning their `n x d` representations.
/// Row-wise work runs on all inputs stacked together; attention is split
/// per input, so each row equals the result of encoding its input alone.
fn encode_packed<S: AsRef<[usize]>>(
    g: &mut Graph<'_>,
    p: &EncoderVars,
    inputs: &[S],
    first_row: usize,
    branch: &DropoutBranch,
) -> Var {
    let cfg = p.config;
    let mut spans = Vec::with_capacity(inputs.len());
    let (mut ids, mut positions) = (Vec::new(), Vec::new());
    for input in inputs {
        let input = input.as_ref();
        spans.push((ids.len(), input.len()));
        ids.extend_from_slice(input);
        positions.extend(0..input.len());
    }
    let tok = g.gather_rows(p.vars[0], &ids);
    let pos = g.gather_rows(p.vars[1], &positions);
    // No dropout on the embeddings: masking the shared CLS embedding swamps
    // the content signal that distinguishes inputs.
    let mut x = g.add(tok, pos);
    let scale = 1.0 / (cfg.head_dim() as f64).sqrt();
    let rows = Rows { first: first_row, spans: &spans };

    for l in 0..cfg.n_layers {
        let lv = p.layer(l);
        let h = affine_norm(g, x, lv.ln1);
        let mut attn: Option<Var> = None;
        for head in &lv.heads {
            let out = attention(g, h, head, &spans, scale);
            attn = Some(match attn {
                Some(acc) => g.add(acc, out),
                None => out,
            });
        }
        let attn = g.add(attn.expect("at least one head"), lv.o_bias);
        let attn = dropout(g, attn, branch, rows, l + 1, 1);
        x = g.add(x, attn);

        let h2 = affine_norm(g, x, lv.ln2);
        let f = linear(g, h2, lv.ff1);
        let f = g.gelu(f);
        let f = linear(g, f, lv.ff2);
        let f = dropout(g, f, branch, rows, l + 1, 2);
        x = g.add(x, f);
    }
    let out = affine_norm(g, x, p.final_norm());
    let cls: Vec<usize> = spans.iter().map(|s| s.0).collect();
    g.gather_rows(out, &cls)
}

/// Encode each input independently; row `i` of the result represents
/// `inputs[i]`. Provenance rows are `(i, Whole, branch.label)`.
pub fn encode<S: AsRef<[usize]>>(
    g: &mut Graph<'_>,
    params: &EncoderVars,
    inputs: &[S],
    branch: &DropoutBranch,
) -> Result<EmbeddingBatch> {
    if inputs.is_empty() {
        return Err(HiclError::invalid("encode called with no inputs"));
    }
    for (row, ids) in inputs.iter().enumerate() {
        check_input(&params.config, row, ids.as_ref())?;
    }
    let vectors = encode_packed(g, params, inputs, 0, branch);
    g.check()?;
    let provenance = (0..inputs.len())
        .map(|sequence| Provenance { sequence, segment: SegmentId::Whole, branch: branch.label })
        .collect();
    Ok(EmbeddingBatch { vectors, provenance })
}

/// Two passes over the same inputs with independent masks `p` and `p+`.
pub fn encode_pair<S: AsRef<[usize]>>(
    g: &mut Graph<'_>,
    params: &EncoderVars,
    inputs: &[S],
    rate: f64,
    seed: u64,
    nonce: u64,
) -> Result<(EmbeddingBatch, EmbeddingBatch)> {
    let (p, p_plus) = DropoutBranch::pair(rate, seed, nonce)?;
    Ok((encode(g, params, inputs, &p)?, encode(g, params, inputs, &p_plus)?))
}

/// Forward-only encoding without gradient bookkeeping. Each input runs on
/// its own graph, optionally in parallel; rows are assembled in input order.
pub fn encode_values<S: AsRef<[usize]> + Sync>(
    params: &EncoderParams,
    inputs: &[S],
    branch: &DropoutBranch,
    parallel: bool,
) -> Result<Tensor> {
    if inputs.is_empty() {
        return Err(HiclError::invalid("encode called with no inputs"));
    }
    let one = |(row, ids): (usize, &S)| -> Result<Vec<f64>> {
        check_input(&params.config, row, ids.as_ref())?;
        let mut g = Graph::new();
        let vars = params.bind(&mut g, false);
        let v = encode_packed(&mut g, &vars, std::slice::from_ref(ids), row, branch);
        g.check()?;
        Ok(g.value(v).data().to_vec())
    };
    let rows: Vec<Vec<f64>> = if parallel {
        inputs.par_iter().enumerate().map(one).collect::<Result<_>>()?
    } else {
        inputs.iter().enumerate().map(one).collect::<Result<_>>()?
    };
    Tensor::from_rows(&rows)
}
