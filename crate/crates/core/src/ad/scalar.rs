use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_complex::Complex64;

/// Arithmetic needed by the generic evaluation paths.
///
/// Implemented for `f64` (primal runs), [`Complex64`] (complex-step checks)
/// and [`super::Var`] (taped runs). Mixed arithmetic with plain numbers goes
/// through [`Scalar::cst`].
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// A value that does not depend on any input.
    ///
    /// For taped scalars this needs a recorder, taken from `like`.
    fn cst_like(like: Self, value: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn powf(self, p: f64) -> Self;
    /// Real part of the value, for branching on the executed path.
    fn re(self) -> f64;

    fn cst(self, value: f64) -> Self {
        Self::cst_like(self, value)
    }

    fn scale(self, k: f64) -> Self {
        self * self.cst(k)
    }

    fn shift(self, k: f64) -> Self {
        self + self.cst(k)
    }

    fn square(self) -> Self {
        self * self
    }
}

impl Scalar for f64 {
    fn cst_like(_: Self, value: f64) -> Self {
        value
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    fn re(self) -> f64 {
        self
    }
    fn scale(self, k: f64) -> Self {
        self * k
    }
    fn shift(self, k: f64) -> Self {
        self + k
    }
}

impl Scalar for Complex64 {
    fn cst_like(_: Self, value: f64) -> Self {
        Complex64::new(value, 0.0)
    }
    fn sin(self) -> Self {
        Complex64::sin(self)
    }
    fn cos(self) -> Self {
        Complex64::cos(self)
    }
    fn exp(self) -> Self {
        Complex64::exp(self)
    }
    fn ln(self) -> Self {
        Complex64::ln(self)
    }
    fn sqrt(self) -> Self {
        Complex64::sqrt(self)
    }
    fn powf(self, p: f64) -> Self {
        // integer powers by repeated multiplication keep the complex step exact
        if p.fract() == 0.0 && p.abs() <= 16.0 {
            let mut acc = Complex64::new(1.0, 0.0);
            for _ in 0..p.abs() as u32 {
                acc *= self;
            }
            if p < 0.0 {
                acc.inv()
            } else {
                acc
            }
        } else {
            Complex64::powf(self, p)
        }
    }
    fn re(self) -> f64 {
        self.re
    }
    fn scale(self, k: f64) -> Self {
        self * k
    }
    fn shift(self, k: f64) -> Self {
        self + k
    }
}
