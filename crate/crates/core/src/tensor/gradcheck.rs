//! Central-difference verification of tape gradients (64-bit only).

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Builds a scalar loss from bound parameter vars.
pub trait LossFn: Fn(&mut Graph<f64>, &[Var]) -> Result<Var> {}
impl<T: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>> LossFn for T {}

fn eval(f: &impl LossFn, params: &[Tensor<f64>]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.constant(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.value(loss).item()
}

/// Analytic gradients of `f` at `params`.
pub fn analytic_grads(f: &impl LossFn, params: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?.collect(&vars)
}

/// Gradients smaller than this are compared absolutely; central differences
/// of an O(1) loss carry ~1e-11 of roundoff, which would otherwise dominate
/// coordinates whose true gradient is exactly zero (e.g. attention key
/// biases, to which softmax is invariant).
pub const GRAD_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, GRAD_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Max of [`relative_error`] over every coordinate.
pub fn finite_diff_check(params: &[Tensor<f64>], h: f64, f: impl LossFn) -> Result<f64> {
    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(p, t)| (0..t.len()).map(move |i| (p, i)))
        .collect();
    finite_diff_check_at(params, h, &coords, f)
}

/// Same as [`finite_diff_check`] restricted to `(param, element)` coordinates.
pub fn finite_diff_check_at(
    params: &[Tensor<f64>],
    h: f64,
    coords: &[(usize, usize)],
    f: impl LossFn,
) -> Result<f64> {
    if !(1e-6..=1e-3).contains(&h) {
        return Err(Error::Input(format!("step h={h} outside [1e-6, 1e-3]")));
    }
    let analytic = analytic_grads(&f, params)?;
    let mut worst = 0.0f64;
    for &(p, i) in coords {
        if p >= params.len() || i >= params[p].len() {
            return Err(Error::Index {
                what: "gradcheck coordinate",
                index: i,
                size: params.get(p).map_or(0, |t| t.len()),
            });
        }
        let mut shifted = params.to_vec();
        let orig = params[p].data()[i];
        shifted[p].data_mut()[i] = orig + h;
        let up = eval(&f, &shifted)?;
        shifted[p].data_mut()[i] = orig - h;
        let down = eval(&f, &shifted)?;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[p].data()[i];
        worst = worst.max(relative_error(a, numeric));
    }
    Ok(worst)
}
