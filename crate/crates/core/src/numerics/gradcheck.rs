use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{HiclError, Result};

/// Evaluate a scalar function recorded on a fresh graph and return its value
/// together with the gradient of every input whose `requires_grad` is set.
/// Inputs without `requires_grad` get `None`.
pub fn value_and_grad<F>(f: F, inputs: &[Tensor]) -> Result<(f64, Vec<Option<Tensor>>)>
where
    F: for<'g> Fn(&mut Graph<'g>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t)).collect();
    let out = f(&mut g, &vars)?;
    let value = scalar_of(&g, out)?;
    let mut grads = g.backward(out)?;
    let per_input = inputs
        .iter()
        .zip(&vars)
        .map(|(t, &v)| {
            t.requires_grad
                .then(|| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        })
        .collect();
    Ok((value, per_input))
}

fn scalar_of(g: &Graph<'_>, out: Var) -> Result<f64> {
    g.check()?;
    g.value(out)
        .item()
        .ok_or_else(|| HiclError::shape("value_and_grad", format!("output shape {:?} is not scalar", g.value(out).shape())))
}

/// Forward-only evaluation of `f` at `inputs`.
pub fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: for<'g> Fn(&mut Graph<'g>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    scalar_of(&g, out)
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub epsilon: f64,
    pub rel_tol: f64,
    /// Lower bound on the relative-error denominator, so that coordinates
    /// whose true gradient is near zero are judged on absolute error.
    pub abs_floor: f64,
    /// Check at most this many evenly strided coordinates per input.
    pub max_coords_per_input: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { epsilon: 1e-5, rel_tol: 1e-4, abs_floor: 1e-3, max_coords_per_input: None }
    }
}

#[derive(Clone, Debug)]
pub struct CoordError {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub coords: Vec<CoordError>,
    pub max_rel_err: f64,
    pub rel_tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.rel_tol
    }

    pub fn worst(&self) -> Option<&CoordError> {
        self.coords.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// Compare reverse-mode gradients against central differences
/// `(f(x + eps e) - f(x - eps e)) / (2 eps)` coordinate by coordinate.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&mut Graph<'g>, &[Var]) -> Result<Var>,
{
    if !(opts.epsilon > 0.0 && opts.epsilon <= 1e-2) {
        return Err(HiclError::invalid(format!("epsilon {} outside (0, 1e-2]", opts.epsilon)));
    }
    let first = evaluate(&f, inputs)?;
    let second = evaluate(&f, inputs)?;
    if first.to_bits() != second.to_bits() {
        return Err(HiclError::NonDeterministic { first, second });
    }

    let (_, grads) = value_and_grad(&f, inputs)?;
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut coords = Vec::new();
    for (input, grad) in grads.iter().enumerate() {
        let Some(grad) = grad else { continue };
        let n = inputs[input].numel();
        let stride = match opts.max_coords_per_input {
            Some(max) if max > 0 && n > max => n.div_ceil(max),
            _ => 1,
        };
        for index in (0..n).step_by(stride) {
            let x0 = inputs[input].data()[index];
            work[input].data_mut()[index] = x0 + opts.epsilon;
            let plus = evaluate(&f, &work)?;
            work[input].data_mut()[index] = x0 - opts.epsilon;
            let minus = evaluate(&f, &work)?;
            work[input].data_mut()[index] = x0;

            let numeric = (plus - minus) / (2.0 * opts.epsilon);
            let analytic = grad.data()[index];
            let denom = analytic.abs().max(numeric.abs()).max(opts.abs_floor);
            coords.push(CoordError { input, index, analytic, numeric, rel_err: (analytic - numeric).abs() / denom });
        }
    }
    let max_rel_err = coords.iter().map(|c| c.rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport { coords, max_rel_err, rel_tol: opts.rel_tol })
}
