//! Seeded random straight-line programs over the elementary operations.
//!
//! Every operation with a restricted domain is applied to a bounded,
//! strictly admissible argument (`ln(sin(a)^2 + 0.5)`, `b / (sin(c)^2 + 1)`,
//! ...), so a program is smooth everywhere and can be checked with finite
//! differences at any input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{record, AdError, NodeId, Scalar, Tape};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Instr {
    Add(usize, usize),
    Sub(usize, usize),
    /// `sin(a * b)`
    Mul(usize, usize),
    /// `a / (sin(b)^2 + 1)`
    Div(usize, usize),
    Neg(usize),
    Sin(usize),
    Cos(usize),
    /// `exp(sin(a))`
    Exp(usize),
    /// `ln(sin(a)^2 + 0.5)`
    Ln(usize),
    /// `sqrt(sin(a)^2 + 0.25)`
    Sqrt(usize),
    /// `(sin(a)^2 + 0.5)^p`
    Pow(usize, f64),
    Scale(usize, f64),
    Shift(usize, f64),
}

/// A random program of `n_inputs` inputs whose outputs are its last slots.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomProgram {
    n_inputs: usize,
    n_outputs: usize,
    instrs: Vec<Instr>,
}

impl RandomProgram {
    pub fn new(seed: u64, n_inputs: usize, n_instrs: usize, n_outputs: usize) -> Self {
        let n_inputs = n_inputs.max(1);
        let n_instrs = n_instrs.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut instrs = Vec::with_capacity(n_instrs);
        for k in 0..n_instrs {
            let slots = n_inputs + k;
            let a = rng.random_range(0..slots);
            let b = rng.random_range(0..slots);
            instrs.push(match rng.random_range(0..13) {
                0 => Instr::Add(a, b),
                1 => Instr::Sub(a, b),
                2 => Instr::Mul(a, b),
                3 => Instr::Div(a, b),
                4 => Instr::Neg(a),
                5 => Instr::Sin(a),
                6 => Instr::Cos(a),
                7 => Instr::Exp(a),
                8 => Instr::Ln(a),
                9 => Instr::Sqrt(a),
                10 => Instr::Pow(a, [0.5, 1.5, -1.0, 3.0][rng.random_range(0..4)]),
                11 => Instr::Scale(a, rng.random_range(-2.0..2.0)),
                _ => Instr::Shift(a, rng.random_range(-1.0..1.0)),
            });
        }
        Self {
            n_inputs,
            n_outputs: n_outputs.clamp(1, n_instrs),
            instrs,
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        assert_eq!(x.len(), self.n_inputs, "input length");
        let mut v: Vec<S> = x.to_vec();
        for &ins in &self.instrs {
            let sq = |a: S| {
                let s = a.sin();
                s * s
            };
            let out = match ins {
                Instr::Add(a, b) => v[a] + v[b],
                Instr::Sub(a, b) => v[a] - v[b],
                Instr::Mul(a, b) => (v[a] * v[b]).sin(),
                Instr::Div(a, b) => v[a] / sq(v[b]).shift(1.0),
                Instr::Neg(a) => -v[a],
                Instr::Sin(a) => v[a].sin(),
                Instr::Cos(a) => v[a].cos(),
                Instr::Exp(a) => v[a].sin().exp(),
                Instr::Ln(a) => sq(v[a]).shift(0.5).ln(),
                Instr::Sqrt(a) => sq(v[a]).shift(0.25).sqrt(),
                Instr::Pow(a, p) => sq(v[a]).shift(0.5).powf(p),
                Instr::Scale(a, k) => v[a].scale(k),
                Instr::Shift(a, k) => v[a].shift(k),
            };
            v.push(out);
        }
        v.split_off(v.len() - self.n_outputs)
    }

    /// Tape of the program recorded at `x`, with its output node ids.
    pub fn record(&self, x: &[f64]) -> Result<(Tape, Vec<NodeId>), AdError> {
        record(x, |v| self.eval(v))
    }
}
