//! Central finite-difference gradient oracle.
//!
//! Independent of the tape: callers rebuild their computation from plain
//! parameter slices, so the oracle cannot inherit a bug in the backward
//! rules it is checking.

/// Central differences (f(x+εeᵢ) − f(x−εeᵢ)) / 2ε for every coordinate.
///
/// `f` must be deterministic; `x` is restored to its original values.
pub fn finite_difference_grad<F>(mut f: F, x: &mut [f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(step > 0.0, "finite differences need a positive step");
    (0..x.len())
        .map(|i| central_diff(&mut f, x, i, step))
        .collect()
}

/// Central differences at selected coordinates only; used to sample a
/// few hundred parameters out of a large model.
pub fn finite_difference_grad_at<F>(
    mut f: F,
    x: &mut [f64],
    coords: &[usize],
    step: f64,
) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(step > 0.0, "finite differences need a positive step");
    coords
        .iter()
        .map(|&i| central_diff(&mut f, x, i, step))
        .collect()
}

fn central_diff<F>(f: &mut F, x: &mut [f64], i: usize, step: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let orig = x[i];
    x[i] = orig + step;
    let plus = f(x);
    x[i] = orig - step;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (2.0 * step)
}

/// Gradient-check comparison: relative error below `rel_tol` with an
/// absolute floor so near-zero gradients are not judged on
/// finite-difference noise alone.
pub fn grads_close(analytic: f64, numeric: f64, rel_tol: f64) -> bool {
    let scale = analytic.abs().max(numeric.abs()).max(1e-3);
    (analytic - numeric).abs() <= rel_tol * scale
}

/// Largest relative error over paired gradients, with the same floor as
/// [`grads_close`].
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}
