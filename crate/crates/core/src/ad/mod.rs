//! Tape-based algorithmic differentiation.
//!
//! A [`Tape`] stores elementary operations in evaluation order together with
//! their local partial derivatives. Two sweeps run over it:
//!
//! * [`Tape::forward_sweep`] pushes one input direction through the tape
//!   (tangent-linear mode); a full gradient needs one call per input.
//! * [`Tape::reverse_sweep`] / [`Tape::vjp`] pull output adjoints back to
//!   every input in a single pass (adjoint mode).
//!
//! Tapes are usually built through a [`Recorder`], whose [`Var`] handles
//! implement [`Scalar`] so that the same generic function can run on `f64`,
//! complex numbers or the tape.

mod random;
mod record;
mod scalar;
mod tape;

pub use random::RandomProgram;
pub use record::{Recorder, Var};
pub use scalar::Scalar;
pub use tape::{AdError, Node, NodeId, Op, Tape, UserOp, UserOpId};

/// Records `f` at `x` and returns the tape with the ids of the outputs.
pub fn record<F>(x: &[f64], f: F) -> Result<(Tape, Vec<NodeId>), AdError>
where
    F: for<'a> FnOnce(&[Var<'a>]) -> Vec<Var<'a>>,
{
    let rec = Recorder::with_capacity(48 * x.len().max(4));
    let inputs = rec.inputs(x);
    let outs: Vec<NodeId> = f(&inputs).iter().map(Var::id).collect();
    let tape = rec.finish()?;
    Ok((tape, outs))
}

/// Value and reverse-mode gradient of a scalar function.
pub fn gradient<F>(x: &[f64], f: F) -> Result<(f64, Vec<f64>), AdError>
where
    F: for<'a> FnOnce(&[Var<'a>]) -> Var<'a>,
{
    let (tape, outs) = record(x, |v| vec![f(v)])?;
    let g = tape.reverse_sweep(outs[0])?;
    Ok((tape.value(outs[0])?, g))
}

/// Full gradient by one forward sweep per input direction.
pub fn forward_gradient<F>(x: &[f64], f: F) -> Result<(f64, Vec<f64>), AdError>
where
    F: for<'a> FnOnce(&[Var<'a>]) -> Var<'a>,
{
    let (tape, outs) = record(x, |v| vec![f(v)])?;
    let mut seed = vec![0.0; x.len()];
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        seed[i] = 1.0;
        g.push(tape.forward_sweep(outs[0], &seed)?);
        seed[i] = 0.0;
    }
    Ok((tape.value(outs[0])?, g))
}

/// Dense Jacobian of a vector function, one row per output, via reverse sweeps.
pub fn jacobian<F>(x: &[f64], f: F) -> Result<(Vec<f64>, Vec<Vec<f64>>), AdError>
where
    F: for<'a> FnOnce(&[Var<'a>]) -> Vec<Var<'a>>,
{
    let (tape, outs) = record(x, f)?;
    let values = outs
        .iter()
        .map(|&o| tape.value(o))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::with_capacity(outs.len());
    for &o in &outs {
        rows.push(tape.reverse_sweep(o)?);
    }
    Ok((values, rows))
}
