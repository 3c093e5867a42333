//! Attention-cost model for whole-sequence versus segmented encoding, and a
//! wall-clock measurement of both on the toy encoder.
//!
//! Model units count attention token pairs: a sequence of `n` tokens costs
//! `n^2` whole, or `L^2 (l - 1) + r^2` when cut into `l` segments whose last
//! one holds `r` tokens. Feed-forward cost is linear in tokens and identical
//! in both modes, so it is left out.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::encoder::{encode_values, DropoutBranch, EncoderParams};
use crate::error::{HiclError, Result};
use crate::hierarchy::{hierarchical_encode_values, PoolingMode};
use crate::textproc::{segment_count, TokenSeq};

/// Minimum measured speed-up expected at `seq_len = 256, L = 32`, where the
/// model predicts 8x. Non-attention work is shared by both modes and dilutes
/// the quadratic saving.
pub const WALLCLOCK_MIN_RATIO_256_32: f64 = 2.0;
/// Band for equal-work inputs (`seq_len <= L`).
pub const WALLCLOCK_EQUAL_WORK_BAND: (f64, f64) = (0.5, 2.0);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostModel {
    pub full_units: u64,
    pub hicl_units: u64,
    pub segments: usize,
    /// Length of the last segment.
    pub remainder: usize,
}

impl CostModel {
    pub fn ratio(&self) -> f64 {
        self.full_units as f64 / self.hicl_units as f64
    }
}

pub fn cost_model(seq_len: usize, slice_len: usize) -> Result<CostModel> {
    if seq_len == 0 || slice_len == 0 {
        return Err(HiclError::invalid("cost_model needs seq_len >= 1 and L >= 1"));
    }
    let segments = segment_count(seq_len, slice_len);
    let remainder = seq_len - slice_len * (segments - 1);
    let (n, l, r) = (seq_len as u64, slice_len as u64, remainder as u64);
    Ok(CostModel { full_units: n * n, hicl_units: l * l * (segments as u64 - 1) + r * r, segments, remainder })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub slice_len: usize,
    pub sequences: usize,
    pub repetitions: usize,
    pub parallel: bool,
    pub full_units: u64,
    pub hicl_units: u64,
    pub predicted_ratio: f64,
    pub full_seconds: f64,
    pub hicl_seconds: f64,
    pub measured_ratio: f64,
}

impl CostReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("mode\tmodel_units\tmedian_seconds\n");
        let _ = writeln!(out, "full\t{}\t{:.6}", self.full_units, self.full_seconds);
        let _ = writeln!(out, "hicl\t{}\t{:.6}", self.hicl_units, self.hicl_seconds);
        let _ = writeln!(out, "ratio\t{}\t{:.4}", self.predicted_ratio, self.measured_ratio);
        out
    }

    /// `key=value` lines.
    pub fn to_kv(&self) -> String {
        format!(
            "slice_len={}\nsequences={}\nrepetitions={}\nparallel={}\nfull_units={}\nhicl_units={}\n\
             predicted_ratio={}\nfull_seconds={}\nhicl_seconds={}\nmeasured_ratio={}\n",
            self.slice_len,
            self.sequences,
            self.repetitions,
            self.parallel,
            self.full_units,
            self.hicl_units,
            self.predicted_ratio,
            self.full_seconds,
            self.hicl_seconds,
            self.measured_ratio
        )
    }
}

fn median(mut xs: Vec<Duration>) -> Duration {
    xs.sort();
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2
    }
}

/// Median wall-clock time of whole-sequence versus hierarchical encoding of
/// `corpus`, dropout off, after one untimed warm-up pass of each.
pub fn wallclock_bench(
    params: &EncoderParams,
    corpus: &[TokenSeq],
    slice_len: usize,
    repetitions: usize,
    parallel: bool,
) -> Result<CostReport> {
    if corpus.is_empty() {
        return Err(HiclError::invalid("benchmark corpus is empty"));
    }
    if repetitions < 3 {
        return Err(HiclError::invalid(format!("need at least 3 repetitions, got {repetitions}")));
    }
    let (mut full_units, mut hicl_units) = (0u64, 0u64);
    for seq in corpus {
        let c = cost_model(seq.len(), slice_len)?;
        full_units += c.full_units;
        hicl_units += c.hicl_units;
    }
    let whole: Vec<&[usize]> = corpus.iter().map(|s| s.ids.as_slice()).collect();
    let off = DropoutBranch::off();
    let run_full = || encode_values(params, &whole, &off, parallel).map(drop);
    let run_hicl = || hierarchical_encode_values(params, corpus, slice_len, PoolingMode::Weighted, parallel).map(drop);

    run_full()?;
    run_hicl()?;
    let mut full_times = Vec::with_capacity(repetitions);
    let mut hicl_times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let t = Instant::now();
        run_full()?;
        full_times.push(t.elapsed());
        let t = Instant::now();
        run_hicl()?;
        hicl_times.push(t.elapsed());
    }
    let full_seconds = median(full_times).as_secs_f64();
    let hicl_seconds = median(hicl_times).as_secs_f64();
    Ok(CostReport {
        slice_len,
        sequences: corpus.len(),
        repetitions,
        parallel,
        full_units,
        hicl_units,
        predicted_ratio: full_units as f64 / hicl_units as f64,
        full_seconds,
        hicl_seconds,
        measured_ratio: full_seconds / hicl_seconds,
    })
}
