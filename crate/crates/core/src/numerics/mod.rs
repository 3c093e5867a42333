//! Tensors, reverse-mode differentiation, seeded randomness and a
//! finite-difference gradient oracle.

mod gradcheck;
mod graph;
mod rng;
mod tensor;

pub use gradcheck::{evaluate, finite_diff_check, value_and_grad, CoordError, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use rng::{Purpose, RngStream};
pub use tensor::Tensor;

use crate::error::{HiclError, Result};

/// Cosine similarity `u.v / (|u| |v|)` of two vectors, recorded on `g`.
pub fn cosine_sim(g: &mut Graph<'_>, u: Var, v: Var) -> Result<Var> {
    for (row, x) in [u, v].into_iter().enumerate() {
        if g.value(x).data().iter().all(|&e| e == 0.0) {
            return Err(HiclError::ZeroNorm { context: "cosine_sim", row });
        }
    }
    let uv = g.mul(u, v);
    let dot = g.sum(uv);
    let uu = g.mul(u, u);
    let vv = g.mul(v, v);
    let nu = g.sum(uu);
    let nv = g.sum(vv);
    let prod = g.mul(nu, nv);
    let denom = g.sqrt(prod);
    Ok(g.div(dot, denom))
}

/// Scale every row of a matrix to unit Euclidean norm.
pub fn normalize_rows(g: &mut Graph<'_>, x: Var, context: &'static str) -> Result<Var> {
    let v = g.value(x);
    for i in 0..v.rows() {
        if v.row(i).iter().all(|&e| e == 0.0) {
            return Err(HiclError::ZeroNorm { context, row: i });
        }
    }
    let sq = g.mul(x, x);
    let ss = g.sum_rows(sq);
    let norm = g.sqrt(ss);
    Ok(g.div(x, norm))
}

/// Plain cosine similarity of two slices, clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(HiclError::shape("cosine", format!("lengths {} and {}", u.len(), v.len())));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum();
    let nv: f64 = v.iter().map(|a| a * a).sum();
    if nu == 0.0 || nv == 0.0 {
        return Err(HiclError::ZeroNorm { context: "cosine", row: usize::from(nu != 0.0) });
    }
    let c = dot / (nu * nv).sqrt();
    if !c.is_finite() {
        return Err(HiclError::NonFinite { op: "cosine", node: 0 });
    }
    Ok(c.clamp(-1.0, 1.0))
}
