//! Central finite-difference gradient checking in 64-bit precision.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Builds a scalar-valued graph from the supplied leaves.
pub trait ScalarFn: Fn(&mut Tape<f64>, &[Var]) -> Result<Var> {}
impl<F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>> ScalarFn for F {}

fn evaluate(f: &impl ScalarFn, inputs: &[Tensor<f64>], grads: bool) -> Result<(Tape<f64>, Vec<Var>, Var)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|x| {
            if grads {
                tape.param(x.clone())
            } else {
                tape.constant(x.clone())
            }
        })
        .collect();
    let out = f(&mut tape, &vars)?;
    if tape.is_stochastic() {
        return Err(Error::usage("gradient check on a graph with active dropout"));
    }
    if tape.value(out).len() != 1 {
        return Err(Error::usage("gradient check needs a scalar-valued function"));
    }
    Ok((tape, vars, out))
}

/// Max over every coordinate of every input of
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn finite_diff_check_many(f: impl ScalarFn, inputs: &[Tensor<f64>]) -> Result<f64> {
    finite_diff_check_with_step(f, inputs, DEFAULT_STEP)
}

pub fn finite_diff_check_with_step(f: impl ScalarFn, inputs: &[Tensor<f64>], eps: f64) -> Result<f64> {
    let (mut tape, vars, out) = evaluate(&f, inputs, true)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
        .collect();

    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (which, x) in inputs.iter().enumerate() {
        for i in 0..x.len() {
            let orig = x.data()[i];
            probe[which].data_mut()[i] = orig + eps;
            let (t, _, o) = evaluate(&f, &probe, false)?;
            let plus = t.value(o).data()[0];
            probe[which].data_mut()[i] = orig - eps;
            let (t, _, o) = evaluate(&f, &probe, false)?;
            let minus = t.value(o).data()[0];
            probe[which].data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[which].data()[i];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Single-input form of [`finite_diff_check_many`].
pub fn finite_diff_check(
    f: impl Fn(&mut Tape<f64>, Var) -> Result<Var>,
    x: &Tensor<f64>,
) -> Result<f64> {
    finite_diff_check_many(|tape: &mut Tape<f64>, v: &[Var]| f(tape, v[0]), std::slice::from_ref(x))
}
