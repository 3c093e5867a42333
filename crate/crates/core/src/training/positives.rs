use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HiclError, Result};
use crate::textproc::TokenSeq;

/// How the positive view of each sequence is built.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PositiveStrategy {
    /// Same tokens, second dropout mask.
    #[default]
    Dropout,
    /// Duplicate a fraction of the body tokens in place.
    Repetition,
}

pub const DEFAULT_REPETITION_RATE: f64 = 0.25;

/// Duplicate `ceil(rate * body_len)` distinct, uniformly chosen body tokens
/// directly after themselves. CLS and SEP are never repeated.
pub fn repeat_words<R: Rng + ?Sized>(seq: &TokenSeq, rate: f64, rng: &mut R) -> TokenSeq {
    let body = seq.body();
    let k = ((rate * body.len() as f64).ceil() as usize).min(body.len());
    let mut dup = vec![false; body.len()];
    for i in sample(rng, body.len(), k) {
        dup[i] = true;
    }
    let mut out = Vec::with_capacity(body.len() + k);
    for (&tok, &twice) in body.iter().zip(&dup) {
        out.push(tok);
        if twice {
            out.push(tok);
        }
    }
    TokenSeq::from_body(&out, seq.line)
}

/// Inputs for the anchor and positive views.
pub fn make_positive_inputs<R: Rng + ?Sized>(
    batch: &[TokenSeq],
    strategy: PositiveStrategy,
    rate: f64,
    rng: &mut R,
) -> Result<(Vec<TokenSeq>, Vec<TokenSeq>)> {
    if !(0.0..=0.5).contains(&rate) {
        return Err(HiclError::invalid(format!("repetition rate {rate} outside [0, 0.5]")));
    }
    let anchors = batch.to_vec();
    let positives = match strategy {
        PositiveStrategy::Dropout => anchors.clone(),
        PositiveStrategy::Repetition => batch.iter().map(|s| repeat_words(s, rate, rng)).collect(),
    };
    Ok((anchors, positives))
}
