use super::{Tape, Tensor, Var};
use crate::error::Result;
use crate::scalar::Scalar;

/// Relative discrepancy between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-6, analytic.abs() + numeric.abs())
}

/// Compares the tape gradient of a scalar function against central
/// differences `(f(x+εeᵢ) − f(x−εeᵢ)) / 2ε` and returns the largest
/// per-element [`relative_error`].
///
/// `f` receives a fresh tape and the recorded input and must return a
/// one-element result. It is evaluated `2·numel + 1` times.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, eps: T) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let input = tape.param(x.clone());
    let out = f(&mut tape, input)?;
    tape.backward(out)?;
    let analytic = tape.grad(input).map(|g| g.into_vec()).unwrap_or_else(|| vec![T::zero(); x.numel()]);

    let eval = |probe: Tensor<T>| -> Result<T> {
        let mut tape = Tape::new();
        let v = tape.constant(probe);
        let out = f(&mut tape, v)?;
        tape.value(out).item()
    };

    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (eps + eps);
        worst = worst.max(relative_error(analytic[i].as_f64(), numeric.as_f64()));
    }
    Ok(worst)
}
