//! Differentiable models and the autodiff they are trained with.

pub mod check;
pub mod model;
pub mod tape;

pub use model::{forward_scalar, forward_simplex, softmax, Activation, LayerLayout, ModelKind, ModelParams, ModelSpec};
pub use tape::{Adjoints, Tape, Var};

use crate::error::Result;
use crate::scalar::Scalar;

/// Value and reverse-mode gradient of `loss` at `params`.
pub fn value_and_grad<T, F>(params: &[T], loss: F) -> Result<(T, Vec<T>)>
where
    T: Scalar,
    F: for<'t> FnOnce(&'t Tape<T>, &[Var<'t, T>]) -> Result<Var<'t, T>>,
{
    let tape = Tape::new();
    let vars = tape.vars(params);
    let out = loss(&tape, &vars)?;
    tape.check_finite()?;
    let g = tape.gradient(out).wrt(&vars);
    Ok((out.value(), g))
}

pub fn grad<T, F>(params: &[T], loss: F) -> Result<Vec<T>>
where
    T: Scalar,
    F: for<'t> FnOnce(&'t Tape<T>, &[Var<'t, T>]) -> Result<Var<'t, T>>,
{
    value_and_grad(params, loss).map(|(_, g)| g)
}
