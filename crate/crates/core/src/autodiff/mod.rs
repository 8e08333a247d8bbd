//! Reverse-mode automatic differentiation over real and complex tensors.
//!
//! A [`Tape`] is rebuilt for every forward pass. Trainable parameters enter
//! as real leaves via [`Tape::param`]; [`Tape::backward`] returns their
//! gradients keyed by [`ParamId`].

mod tape;

pub use tape::{GradientMap, Gradients, ParamId, Region, Tape, Tensor, Var};
pub(crate) use tape::sigmoid;

/// Central differences `(f(p + h·e_k) - f(p - h·e_k)) / 2h` for every coordinate.
pub fn finite_diff_gradient<F>(mut f: F, params: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut p = params.to_vec();
    (0..params.len())
        .map(|k| {
            let orig = p[k];
            p[k] = orig + h;
            let up = f(&p);
            p[k] = orig - h;
            let down = f(&p);
            p[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max|a - b| / max(max|a|, max|b|, 1e-12)` over one parameter block.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(1e-12f64, |m, v| m.max(v.abs()));
    diff / scale
}
