//! Finite-difference validation harness for the autodiff graph.

use crate::error::{CourageError, Result};
use crate::numerics::{Graph, Matrix, NodeId};

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Compares analytic gradients against central finite differences.
///
/// `build` receives a fresh graph plus one leaf per entry of `params` and
/// must return a scalar (1x1) loss node. Returns the maximum over all
/// parameter entries of `|analytic - numeric| / max(1, |numeric|)`; the
/// clamped denominator keeps near-zero gradients from blowing up the ratio.
pub fn gradient_check<F>(build: F, params: &[Matrix], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if epsilon <= 0.0 {
        return Err(CourageError::config("gradient_check epsilon must be > 0"));
    }

    let eval = |values: &[Matrix]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|m| g.leaf(m.clone())).collect();
        let loss = build(&mut g, &ids)?;
        let v = g.value(loss);
        if v.shape() != (1, 1) {
            return Err(CourageError::contract("gradient_check loss must be 1x1"));
        }
        let out = v.get(0, 0);
        if !out.is_finite() {
            return Err(CourageError::numeric("non-finite loss in gradient_check"));
        }
        Ok(out)
    };

    // Analytic pass.
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|m| g.leaf(m.clone())).collect();
    let loss = build(&mut g, &ids)?;
    g.backward(loss)?;
    let analytic: Vec<Matrix> = ids.iter().map(|&id| g.grad(id).clone()).collect();

    let mut worst: f64 = 0.0;
    let mut work: Vec<Matrix> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for idx in 0..param.len() {
            let orig = param.data()[idx];
            work[pi].data_mut()[idx] = orig + epsilon;
            let plus = eval(&work)?;
            work[pi].data_mut()[idx] = orig - epsilon;
            let minus = eval(&work)?;
            work[pi].data_mut()[idx] = orig;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[pi].data()[idx];
            let rel = (a - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
