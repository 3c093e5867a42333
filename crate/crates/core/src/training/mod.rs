//! Batch assembly, the training step, dev-set checkpoint selection and
//! checkpoint files.

mod checkpoint;
mod optim;
mod positives;
mod queue;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MAGIC};
pub use optim::{Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use positives::{make_positive_inputs, repeat_words, PositiveStrategy, DEFAULT_REPETITION_RATE};
pub use queue::MomentumQueue;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::encoder::{init_params, DropoutBranch, EncoderConfig, EncoderParams};
use crate::error::{HiclError, Result};
use crate::eval::{evaluate, StsExample};
use crate::hierarchy::{hierarchical_encode, PoolingMode};
use crate::losses::{total_loss, LossBreakdown, LossConfig, LossViews};
use crate::numerics::{Graph, Purpose, RngStream, Tensor};
use crate::textproc::{TokenSeq, DEFAULT_SLICE_LEN};

pub const DEFAULT_EVAL_EVERY: usize = 125;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub encoder: EncoderConfig,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub eval_every: usize,
    pub slice_len: usize,
    pub pooling: PoolingMode,
    pub loss: LossConfig,
    pub positive: PositiveStrategy,
    pub repetition_rate: f64,
    /// Momentum queue capacity in rows; `None` disables the queue.
    pub queue_capacity: Option<usize>,
    pub dropout: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(encoder: EncoderConfig) -> Self {
        Self {
            encoder,
            batch_size: 64,
            steps: 1000,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            eval_every: DEFAULT_EVAL_EVERY,
            slice_len: DEFAULT_SLICE_LEN,
            pooling: PoolingMode::Weighted,
            loss: LossConfig::default(),
            positive: PositiveStrategy::Dropout,
            repetition_rate: DEFAULT_REPETITION_RATE,
            queue_capacity: None,
            dropout: 0.1,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.loss.validate()?;
        if self.batch_size == 0 {
            return Err(HiclError::invalid("batch_size must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(HiclError::invalid("eval_every must be at least 1"));
        }
        if self.slice_len == 0 || self.slice_len > crate::textproc::MAX_SEQ_LEN {
            return Err(HiclError::invalid(format!("slice_len must be in 1..=512, got {}", self.slice_len)));
        }
        if !(0.0..=0.5).contains(&self.repetition_rate) {
            return Err(HiclError::invalid(format!("repetition_rate must be in [0, 0.5], got {}", self.repetition_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(HiclError::invalid(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.queue_capacity == Some(0) {
            return Err(HiclError::invalid("queue capacity must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(HiclError::invalid("learning_rate must be positive"));
        }
        Ok(())
    }
}

/// Mutable training state: parameters, optimizer moments and the queue.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: EncoderParams,
    pub optimizer: Optimizer,
    pub queue: Option<MomentumQueue>,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig, params: EncoderParams) -> Result<Self> {
        let optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, &params.tensors)?;
        let queue = cfg.queue_capacity.map(MomentumQueue::new).transpose()?;
        Ok(Self { params, optimizer, queue })
    }
}

/// One optimization step on `batch`. `step` (1-based) keys the dropout masks
/// and the repetition draws, so a step is a pure function of its inputs.
pub fn train_step(state: &mut TrainState, batch: &[TokenSeq], cfg: &TrainConfig, step: u64) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(HiclError::invalid("train_step called with an empty batch"));
    }
    let mut rep_rng = RngStream::new(cfg.seed, Purpose::Repetition).fork(step);
    let (inputs_a, inputs_b) = make_positive_inputs(batch, cfg.positive, cfg.repetition_rate, &mut rep_rng)?;
    let (p, p_plus) = DropoutBranch::pair(cfg.dropout, cfg.seed, step)?;
    let queue_rows = state.queue.as_ref().and_then(MomentumQueue::snapshot);

    let (breakdown, grads, pushed) = {
        let mut g = Graph::new();
        let vars = state.params.bind(&mut g, true);
        let hb_a = hierarchical_encode(&mut g, &vars, &inputs_a, cfg.slice_len, cfg.pooling, &p)?;
        let hb_b = hierarchical_encode(&mut g, &vars, &inputs_b, cfg.slice_len, cfg.pooling, &p_plus)?;
        let hb_twin = match cfg.positive {
            PositiveStrategy::Dropout => None,
            PositiveStrategy::Repetition => {
                Some(hierarchical_encode(&mut g, &vars, &inputs_a, cfg.slice_len, cfg.pooling, &p_plus)?)
            }
        };
        let views = LossViews {
            anchor: &hb_a,
            global_positive: &hb_b,
            local_positive: hb_twin.as_ref().unwrap_or(&hb_b),
            queue: queue_rows.as_ref(),
        };
        let loss = total_loss(&mut g, &views, &cfg.loss)?;
        if !loss.breakdown.total.is_finite() {
            return Err(HiclError::NonFinite { op: "total_loss", node: loss.total.index() });
        }
        let mut grads = g.backward(loss.total)?;
        let grads: Vec<Tensor> = vars
            .vars
            .iter()
            .zip(&state.params.tensors)
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        let pushed = g.value(hb_b.sequences.vectors).clone();
        (loss.breakdown, grads, pushed)
    };

    state.optimizer.step(&mut state.params.tensors, &grads)?;
    if let Some(q) = state.queue.as_mut() {
        q.push(&pushed)?;
    }
    Ok(breakdown)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub loss: LossBreakdown,
    pub dev: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn evaluations(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().filter_map(|e| e.dev.map(|d| (e.step, d)))
    }

    pub fn totals(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.loss.total).collect()
    }

    /// Tab-separated `step, total, local, global, entailment, dev`; absent
    /// values are written as `-`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("step\ttotal\tlocal\tglobal\tentailment\tdev\n");
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| v.to_string());
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.step,
                e.loss.total,
                e.loss.local,
                e.loss.global,
                opt(e.loss.entailment),
                opt(e.dev)
            );
        }
        out
    }
}

/// Yields batches from per-epoch permutations of the corpus. A trailing
/// partial batch is dropped unless the corpus is smaller than one batch.
struct Batcher<'c> {
    corpus: &'c [TokenSeq],
    batch_size: usize,
    stream: RngStream,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl<'c> Batcher<'c> {
    fn new(corpus: &'c [TokenSeq], batch_size: usize, seed: u64) -> Self {
        let mut b = Self {
            corpus,
            batch_size: batch_size.min(corpus.len()),
            stream: RngStream::new(seed, Purpose::Data),
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
        };
        b.reshuffle();
        b
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.corpus.len()).collect();
        // Stream 0 of the data purpose belongs to the synthetic generator.
        self.order.shuffle(&mut self.stream.fork(1_000 + self.epoch));
        self.epoch += 1;
        self.cursor = 0;
    }

    fn next_batch(&mut self) -> Vec<TokenSeq> {
        if self.cursor + self.batch_size > self.order.len() {
            self.reshuffle();
        }
        let batch = self.order[self.cursor..self.cursor + self.batch_size].iter().map(|&i| self.corpus[i].clone()).collect();
        self.cursor += self.batch_size;
        batch
    }
}

/// Train from a seeded initialization, evaluating dev Spearman every
/// `eval_every` steps and keeping the best parameters (earliest on ties).
/// When fewer than `eval_every` steps run, the final parameters are
/// evaluated once.
pub fn train(cfg: &TrainConfig, corpus: &[TokenSeq], dev: &[StsExample]) -> Result<(Checkpoint, TrainLog)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(HiclError::invalid("training corpus is empty"));
    }
    if dev.len() < 2 {
        return Err(HiclError::invalid("dev set needs at least two pairs"));
    }
    let params = init_params(cfg.seed, cfg.encoder)?;
    train_from(cfg, params, corpus, dev)
}

pub fn train_from(
    cfg: &TrainConfig,
    params: EncoderParams,
    corpus: &[TokenSeq],
    dev: &[StsExample],
) -> Result<(Checkpoint, TrainLog)> {
    let mut state = TrainState::new(cfg, params)?;
    let mut batcher = Batcher::new(corpus, cfg.batch_size, cfg.seed);
    let mut log = TrainLog::default();
    let mut best: Option<Checkpoint> = None;

    for step in 1..=cfg.steps {
        let batch = batcher.next_batch();
        let loss = train_step(&mut state, &batch, cfg, step as u64)?;
        let due = step % cfg.eval_every == 0 || (cfg.steps < cfg.eval_every && step == cfg.steps);
        let dev_metric = if due {
            let rho = evaluate(&state.params, dev, cfg.slice_len, cfg.pooling)?.spearman;
            if best.as_ref().and_then(|b| b.dev_metric).map_or(true, |b| rho > b) {
                best = Some(Checkpoint { params: state.params.clone(), step, dev_metric: Some(rho) });
            }
            Some(rho)
        } else {
            None
        };
        log.entries.push(LogEntry { step, loss, dev: dev_metric });
    }
    let best = best.unwrap_or(Checkpoint { params: state.params, step: cfg.steps, dev_metric: None });
    Ok((best, log))
}
