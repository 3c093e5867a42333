//! InfoNCE objectives over hierarchical batches.
//!
//! Every loss takes an anchor view `a` (dropout mask `p`) and a positive view
//! `b` (mask `p+`). Positives and in-batch negatives are both drawn from `b`.

use serde::{Deserialize, Serialize};

use crate::error::{HiclError, Result};
use crate::hierarchy::HierarchicalBatch;
use crate::numerics::{normalize_rows, Graph, Tensor, Var};

pub const DEFAULT_TAU: f64 = 0.05;
pub const DEFAULT_ALPHA: f64 = 0.05;

/// How the local loss treats segments that share the anchor's parent sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relationship {
    /// Each sibling is an extra positive; per-positive terms are averaged.
    Positive,
    /// Siblings are ordinary negatives.
    Negative,
    /// Siblings are left out of the denominator.
    #[default]
    Neither,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// `alpha * local + (1 - alpha) * global`
    #[default]
    Hicl,
    /// `alpha * local + beta * entailment + (1 - alpha - beta) * global`
    HiclV2,
    GlobalOnly,
    LocalOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub relationship: Relationship,
    pub variant: Variant,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU, alpha: DEFAULT_ALPHA, beta: 0.0, relationship: Relationship::Neither, variant: Variant::Hicl }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(HiclError::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(HiclError::invalid(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(HiclError::invalid(format!("beta must be non-negative, got {}", self.beta)));
        }
        if self.alpha + self.beta > 1.0 {
            return Err(HiclError::invalid(format!("alpha + beta = {} exceeds 1", self.alpha + self.beta)));
        }
        Ok(())
    }

    /// `(local, entailment, global)` weights of the total objective.
    pub fn weights(&self) -> (f64, f64, f64) {
        match self.variant {
            Variant::Hicl => (self.alpha, 0.0, 1.0 - self.alpha),
            Variant::HiclV2 => (self.alpha, self.beta, 1.0 - self.alpha - self.beta),
            Variant::GlobalOnly => (0.0, 0.0, 1.0),
            Variant::LocalOnly => (1.0, 0.0, 0.0),
        }
    }
}

/// Which `(anchor, candidate)` pairs enter the InfoNCE denominator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContrastMask {
    pub anchors: usize,
    pub candidates: usize,
    include: Vec<bool>,
}

impl ContrastMask {
    pub fn from_fn(anchors: usize, candidates: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let include = (0..anchors).flat_map(|a| (0..candidates).map(move |c| (a, c))).map(|(a, c)| f(a, c)).collect();
        Self { anchors, candidates, include }
    }

    pub fn includes(&self, anchor: usize, candidate: usize) -> bool {
        self.include[anchor * self.candidates + candidate]
    }

    /// Number of included negatives for `anchor`.
    pub fn count(&self, anchor: usize) -> usize {
        self.include[anchor * self.candidates..(anchor + 1) * self.candidates].iter().filter(|&&b| b).count()
    }

    fn gather(&self, rows: &[usize]) -> Self {
        let include = rows
            .iter()
            .flat_map(|&r| self.include[r * self.candidates..(r + 1) * self.candidates].iter().copied())
            .collect();
        Self { anchors: rows.len(), candidates: self.candidates, include }
    }

    fn any(&self) -> bool {
        self.include.iter().any(|&b| b)
    }

    fn as_tensor(&self) -> Tensor {
        let data = self.include.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Tensor::from_parts_checked(self.anchors, self.candidates, data)
    }
}

/// Result of one InfoNCE evaluation.
#[derive(Clone, Debug)]
pub struct InfoNce {
    /// Scalar mean over anchors.
    pub mean: Var,
    /// `anchors x 1` per-anchor losses.
    pub per_anchor: Var,
    /// Set when no anchor had any negative, so the loss is identically zero.
    pub empty_negatives: bool,
}

/// Per-anchor `-log(e^{s+/tau} / (e^{s+/tau} + sum_included e^{s-/tau}))`
/// with cosine similarities `s`.
///
/// Evaluated as `(m - z+) + log1p(expm1(z+ - m) + sum e^{z- - m})` where
/// `z = s / tau` and `m` is the row maximum over the positive and included
/// negatives, which keeps tiny losses accurate to full relative precision.
pub fn info_nce(
    g: &mut Graph<'_>,
    anchors: Var,
    positives: Var,
    negatives: Option<Var>,
    mask: &ContrastMask,
    tau: f64,
) -> Result<InfoNce> {
    if !(tau > 0.0) {
        return Err(HiclError::invalid(format!("tau must be positive, got {tau}")));
    }
    let (n, d) = g.value(anchors).dims2();
    if g.value(positives).dims2() != (n, d) {
        return Err(HiclError::shape("info_nce", format!("anchors {:?} vs positives {:?}", (n, d), g.value(positives).dims2())));
    }
    let m_cols = negatives.map_or(0, |v| g.value(v).rows());
    if let Some(neg) = negatives {
        if g.value(neg).cols() != d {
            return Err(HiclError::shape("info_nce", "negative width differs from anchors"));
        }
    }
    if mask.anchors != n || mask.candidates != m_cols {
        return Err(HiclError::shape(
            "info_nce",
            format!("mask {}x{} for {n} anchors and {m_cols} negatives", mask.anchors, mask.candidates),
        ));
    }

    let an = normalize_rows(g, anchors, "info_nce anchors")?;
    let pn = normalize_rows(g, positives, "info_nce positives")?;
    let ap = g.mul(an, pn);
    let pos_sim = g.sum_rows(ap);
    let zp = g.scale(pos_sim, 1.0 / tau);

    let has_negatives = m_cols > 0 && mask.any();
    let zn = match negatives {
        Some(neg) if has_negatives => {
            let nn = normalize_rows(g, neg, "info_nce negatives")?;
            let sims = g.matmul_nt(an, nn);
            Some(g.scale(sims, 1.0 / tau))
        }
        _ => None,
    };

    // Row maxima over included logits, held constant.
    let row_max: Vec<f64> = (0..n)
        .map(|i| {
            let mut m = g.value(zp).data()[i];
            if let Some(zn) = zn {
                for (c, &z) in g.value(zn).row(i).iter().enumerate() {
                    if mask.includes(i, c) {
                        m = m.max(z);
                    }
                }
            }
            m
        })
        .collect();
    let m = g.constant(Tensor::from_parts_checked(n, 1, row_max));

    let zp_shift = g.sub(zp, m);
    let mut inner = g.expm1(zp_shift);
    if let Some(zn) = zn {
        let shifted = g.sub(zn, m);
        let e = g.exp(shifted);
        let mask_t = g.constant(mask.as_tensor());
        let kept = g.mul(e, mask_t);
        let s = g.sum_rows(kept);
        inner = g.add(inner, s);
    }
    let lse = g.log1p(inner);
    let per_anchor = g.sub(lse, zp_shift);
    let mean = g.mean(per_anchor);
    g.check()?;
    Ok(InfoNce { mean, per_anchor, empty_negatives: !has_negatives })
}

fn check_views(a: &HierarchicalBatch, b: &HierarchicalBatch) -> Result<()> {
    if a.n_sequences() != b.n_sequences() || a.parents != b.parents {
        return Err(HiclError::shape(
            "loss",
            format!(
                "views disagree: {} vs {} sequences, {} vs {} segments",
                a.n_sequences(),
                b.n_sequences(),
                a.n_segments(),
                b.n_segments()
            ),
        ));
    }
    Ok(())
}

/// Sequence-level InfoNCE. Negatives are the other sequences of view `b`
/// followed by any `extra_negatives` rows (e.g. a momentum queue), which are
/// recorded as constants.
pub fn global_loss(
    g: &mut Graph<'_>,
    a: &HierarchicalBatch,
    b: &HierarchicalBatch,
    cfg: &LossConfig,
    extra_negatives: Option<&Tensor>,
) -> Result<InfoNce> {
    if a.n_sequences() != b.n_sequences() {
        return Err(HiclError::shape("global_loss", "views have different batch sizes"));
    }
    let n = a.n_sequences();
    let mut negatives = b.sequences.vectors;
    let mut extra = 0;
    if let Some(q) = extra_negatives.filter(|q| q.rows() > 0) {
        extra = q.rows();
        let qv = g.constant(q.clone());
        negatives = g.concat_rows(&[negatives, qv]);
    }
    let mask = ContrastMask::from_fn(n, n + extra, |i, c| c != i);
    info_nce(g, a.sequences.vectors, b.sequences.vectors, Some(negatives), &mask, cfg.tau)
}

/// Denominator mask for the local loss: the anchor's own positive is never a
/// negative, other sequences' segments always are, and siblings follow `rel`.
pub fn local_mask(parents: &[usize], rel: Relationship) -> ContrastMask {
    let n = parents.len();
    ContrastMask::from_fn(n, n, |a, c| {
        if a == c {
            false
        } else if parents[a] != parents[c] {
            true
        } else {
            rel == Relationship::Negative
        }
    })
}

/// Segment-level InfoNCE.
pub fn local_loss(g: &mut Graph<'_>, a: &HierarchicalBatch, b: &HierarchicalBatch, cfg: &LossConfig) -> Result<InfoNce> {
    check_views(a, b)?;
    let parents = &a.parents;
    let mask = local_mask(parents, cfg.relationship);
    let (sa, sb) = (a.segments.vectors, b.segments.vectors);
    if cfg.relationship != Relationship::Positive {
        return info_nce(g, sa, sb, Some(sb), &mask, cfg.tau);
    }

    // One term per (anchor, positive): the dropout twin first, then siblings.
    let n = parents.len();
    let mut term_anchor = Vec::new();
    let mut term_pos = Vec::new();
    let mut positives_per_anchor = vec![0usize; n];
    for i in 0..n {
        for j in std::iter::once(i).chain((0..n).filter(|&j| j != i && parents[j] == parents[i])) {
            term_anchor.push(i);
            term_pos.push(j);
            positives_per_anchor[i] += 1;
        }
    }
    let t = term_anchor.len();
    let mut averaging = vec![0.0; n * t];
    for (k, &i) in term_anchor.iter().enumerate() {
        averaging[i * t + k] = 1.0 / positives_per_anchor[i] as f64;
    }
    let anchors = g.gather_rows(sa, &term_anchor);
    let positives = g.gather_rows(sb, &term_pos);
    let term_mask = mask.gather(&term_anchor);
    let terms = info_nce(g, anchors, positives, Some(sb), &term_mask, cfg.tau)?;
    let avg = g.constant(Tensor::from_parts_checked(n, t, averaging));
    let per_anchor = g.matmul(avg, terms.per_anchor);
    let mean = g.mean(per_anchor);
    Ok(InfoNce { mean, per_anchor, empty_negatives: terms.empty_negatives })
}

/// Segment-to-parent InfoNCE: segment `(i, j)` of view `a` is pulled toward
/// sequence `i` of view `b` and away from the other sequences of `b`.
pub fn entailment_loss(
    g: &mut Graph<'_>,
    a: &HierarchicalBatch,
    b: &HierarchicalBatch,
    cfg: &LossConfig,
) -> Result<InfoNce> {
    check_views(a, b)?;
    let parents = &a.parents;
    let positives = g.gather_rows(b.sequences.vectors, parents);
    let mask = ContrastMask::from_fn(parents.len(), b.n_sequences(), |s, k| k != parents[s]);
    info_nce(g, a.segments.vectors, positives, Some(b.sequences.vectors), &mask, cfg.tau)
}

/// The views a total loss is computed from. With dropout positives both
/// `global_positive` and `local_positive` are the `p+` encoding of the same
/// inputs; with word repetition the global positive encodes the repeated
/// inputs while segment-level terms keep the dropout twin.
#[derive(Clone, Copy)]
pub struct LossViews<'h> {
    pub anchor: &'h HierarchicalBatch,
    pub global_positive: &'h HierarchicalBatch,
    pub local_positive: &'h HierarchicalBatch,
    pub queue: Option<&'h Tensor>,
}

impl<'h> LossViews<'h> {
    pub fn pair(anchor: &'h HierarchicalBatch, positive: &'h HierarchicalBatch) -> Self {
        Self { anchor, global_positive: positive, local_positive: positive, queue: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub local: f64,
    pub global: f64,
    pub entailment: Option<f64>,
    pub warnings: Vec<String>,
}

pub struct TotalLoss {
    /// Differentiable total. Components with zero weight are not part of it.
    pub total: Var,
    pub breakdown: LossBreakdown,
}

/// Weighted combination selected by `cfg.variant`. Every component is
/// evaluated for reporting, but only nonzero-weight components are summed
/// into the differentiable total.
pub fn total_loss(g: &mut Graph<'_>, views: &LossViews<'_>, cfg: &LossConfig) -> Result<TotalLoss> {
    cfg.validate()?;
    let local = local_loss(g, views.anchor, views.local_positive, cfg)?;
    let global = global_loss(g, views.anchor, views.global_positive, cfg, views.queue)?;
    let entail = match cfg.variant {
        Variant::HiclV2 => Some(entailment_loss(g, views.anchor, views.local_positive, cfg)?),
        _ => None,
    };
    let (wl, we, wg) = cfg.weights();

    let mut warnings = Vec::new();
    let mut terms = Vec::new();
    for (name, w, part) in [("local", wl, Some(&local)), ("entailment", we, entail.as_ref()), ("global", wg, Some(&global))] {
        let Some(part) = part else { continue };
        if part.empty_negatives {
            warnings.push(format!("{name} loss has no negatives; it is identically zero"));
        }
        if w != 0.0 {
            terms.push(g.scale(part.mean, w));
        }
    }
    let total = terms
        .into_iter()
        .reduce(|acc, t| g.add(acc, t))
        .ok_or_else(|| HiclError::invalid("all loss weights are zero"))?;
    g.check()?;
    let item = |v: Var| g.value(v).item().expect("scalar loss");
    let breakdown = LossBreakdown {
        total: item(total),
        local: item(local.mean),
        global: item(global.mean),
        entailment: entail.as_ref().map(|e| item(e.mean)),
        warnings,
    };
    Ok(TotalLoss { total, breakdown })
}
