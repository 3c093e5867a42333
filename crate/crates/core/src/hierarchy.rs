//! Slice -> encode -> pool: sequence vectors as length-weighted averages of
//! independently encoded segment vectors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode, DropoutBranch, EmbeddingBatch, EncoderParams, EncoderVars, Provenance, SegmentId};
use crate::error::{HiclError, Result};
use crate::numerics::{Graph, Tensor};
use crate::textproc::{slice, TokenSeq, CLS};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolingMode {
    /// `w_ij = |seg_ij| / sum_k |seg_ik|`
    #[default]
    Weighted,
    /// `w_ij = 1 / l_i`
    Unweighted,
}

#[derive(Clone, Debug)]
pub struct HierarchicalBatch {
    pub segments: EmbeddingBatch,
    pub sequences: EmbeddingBatch,
    /// Pooling weight of each segment row.
    pub weights: Vec<f64>,
    /// Parent sequence row of each segment row.
    pub parents: Vec<usize>,
    /// Token count of each segment before CLS re-attachment.
    pub lengths: Vec<usize>,
}

impl HierarchicalBatch {
    pub fn n_sequences(&self) -> usize {
        self.sequences.len()
    }

    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }
}

/// Per-segment pooling weights. Every sequence `0..n_sequences` must own at
/// least one segment.
pub fn pooling_weights(lengths: &[usize], parents: &[usize], n_sequences: usize, mode: PoolingMode) -> Result<Vec<f64>> {
    if lengths.len() != parents.len() {
        return Err(HiclError::shape("pool", format!("{} lengths for {} segments", lengths.len(), parents.len())));
    }
    let mut totals = vec![0usize; n_sequences];
    let mut counts = vec![0usize; n_sequences];
    for (row, (&p, &len)) in parents.iter().zip(lengths).enumerate() {
        if p >= n_sequences {
            return Err(HiclError::invalid(format!("segment row {row} has orphan parent {p}")));
        }
        if len == 0 {
            return Err(HiclError::invalid(format!("segment row {row} has zero length")));
        }
        totals[p] += len;
        counts[p] += 1;
    }
    if let Some(i) = totals.iter().position(|&t| t == 0) {
        return Err(HiclError::invalid(format!("sequence {i} has zero total length")));
    }
    Ok(parents
        .iter()
        .zip(lengths)
        .map(|(&p, &len)| match mode {
            PoolingMode::Weighted => len as f64 / totals[p] as f64,
            PoolingMode::Unweighted => 1.0 / counts[p] as f64,
        })
        .collect())
}

/// Pool segment rows into `n_sequences` sequence rows using the parent
/// recorded in each row's provenance.
pub fn pool(
    g: &mut Graph<'_>,
    segments: &EmbeddingBatch,
    lengths: &[usize],
    n_sequences: usize,
    mode: PoolingMode,
) -> Result<(EmbeddingBatch, Vec<f64>)> {
    let parents: Vec<usize> = segments.provenance.iter().map(|p| p.sequence).collect();
    let weights = pooling_weights(lengths, &parents, n_sequences, mode)?;
    let n_seg = parents.len();
    let mut matrix = vec![0.0; n_sequences * n_seg];
    for (j, (&p, &w)) in parents.iter().zip(&weights).enumerate() {
        matrix[p * n_seg + j] = w;
    }
    let pool_m = g.constant(Tensor::matrix(n_sequences, n_seg, matrix)?);
    let vectors = g.matmul(pool_m, segments.vectors);
    let branch = segments.provenance.first().map(|p| p.branch).unwrap_or(crate::encoder::BranchLabel::Off);
    let provenance = (0..n_sequences)
        .map(|sequence| Provenance { sequence, segment: SegmentId::Whole, branch })
        .collect();
    Ok((EmbeddingBatch { vectors, provenance }, weights))
}

/// Encoder inputs for every segment of every sequence in `batch`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentPlan {
    /// Segment ids with a CLS prepended when the segment does not already start with one.
    pub inputs: Vec<Vec<usize>>,
    pub parents: Vec<usize>,
    pub indices: Vec<usize>,
    pub lengths: Vec<usize>,
}

pub fn plan_segments(batch: &[TokenSeq], slice_len: usize) -> Result<SegmentPlan> {
    let mut plan = SegmentPlan { inputs: Vec::new(), parents: Vec::new(), indices: Vec::new(), lengths: Vec::new() };
    for (i, seq) in batch.iter().enumerate() {
        for seg in slice(seq, slice_len, i)? {
            let input = if seg.ids.first() == Some(&CLS) {
                seg.ids.clone()
            } else {
                std::iter::once(CLS).chain(seg.ids.iter().copied()).collect()
            };
            plan.lengths.push(seg.len());
            plan.parents.push(seg.parent);
            plan.indices.push(seg.index);
            plan.inputs.push(input);
        }
    }
    Ok(plan)
}

/// Slice every sequence, encode all segments in one call, and pool per sequence.
pub fn hierarchical_encode(
    g: &mut Graph<'_>,
    params: &EncoderVars,
    batch: &[TokenSeq],
    slice_len: usize,
    mode: PoolingMode,
    branch: &DropoutBranch,
) -> Result<HierarchicalBatch> {
    if batch.is_empty() {
        return Err(HiclError::invalid("hierarchical_encode called with an empty batch"));
    }
    let plan = plan_segments(batch, slice_len)?;
    let mut segments = encode(g, params, &plan.inputs, branch)?;
    for ((prov, &parent), &index) in segments.provenance.iter_mut().zip(&plan.parents).zip(&plan.indices) {
        prov.sequence = parent;
        prov.segment = SegmentId::Segment(index);
    }
    let (sequences, weights) = pool(g, &segments, &plan.lengths, batch.len(), mode)?;
    Ok(HierarchicalBatch { segments, sequences, weights, parents: plan.parents, lengths: plan.lengths })
}

/// Sequence vectors with dropout off and no gradient bookkeeping. Each
/// sequence runs on its own graph; rows come back in batch order.
pub fn hierarchical_encode_values(
    params: &EncoderParams,
    batch: &[TokenSeq],
    slice_len: usize,
    mode: PoolingMode,
    parallel: bool,
) -> Result<Tensor> {
    if batch.is_empty() {
        return Err(HiclError::invalid("hierarchical_encode called with an empty batch"));
    }
    let one = |seq: &TokenSeq| -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let vars = params.bind(&mut g, false);
        let hb = hierarchical_encode(&mut g, &vars, std::slice::from_ref(seq), slice_len, mode, &DropoutBranch::off())?;
        Ok(g.value(hb.sequences.vectors).data().to_vec())
    };
    let rows: Vec<Vec<f64>> = if parallel {
        batch.par_iter().map(one).collect::<Result<_>>()?
    } else {
        batch.iter().map(one).collect::<Result<_>>()?
    };
    Tensor::from_rows(&rows)
}
