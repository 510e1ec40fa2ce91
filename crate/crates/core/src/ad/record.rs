use std::cell::{Cell, RefCell};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::scalar::Scalar;
use super::tape::{eval_builtin, AdError, NodeId, Op, Tape};

/// Operator-overloading front end to a [`Tape`].
///
/// The first domain violation poisons the recorder: later operations are
/// skipped and [`Recorder::finish`] reports the original error with its
/// node id.
pub struct Recorder {
    tape: RefCell<Tape>,
    poisoned: Cell<bool>,
    error: RefCell<Option<AdError>>,
}

impl Default for Recorder {
    fn default() -> Self {
        Self::new()
    }
}

impl Recorder {
    pub fn new() -> Self {
        Self::with_capacity(64)
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Self {
            tape: RefCell::new(Tape::with_capacity(nodes)),
            poisoned: Cell::new(false),
            error: RefCell::new(None),
        }
    }

    fn fail(&self, e: AdError) {
        if !self.poisoned.replace(true) {
            *self.error.borrow_mut() = Some(e);
        }
    }

    fn var(&self, r: Result<NodeId, AdError>) -> Var<'_> {
        match r {
            Ok(id) => {
                let value = self.tape.borrow().nodes()[id].value;
                Var {
                    rec: self,
                    id,
                    value,
                }
            }
            Err(e) => {
                self.fail(e);
                Var {
                    rec: self,
                    id: usize::MAX,
                    value: f64::NAN,
                }
            }
        }
    }

    pub fn input(&self, value: f64) -> Var<'_> {
        if self.poisoned.get() {
            return self.var(Err(AdError::UnknownNode(usize::MAX)));
        }
        let r = self.tape.borrow_mut().input(value);
        self.var(r)
    }

    pub fn inputs(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.input(v)).collect()
    }

    pub fn constant(&self, value: f64) -> Var<'_> {
        if self.poisoned.get() {
            return self.var(Err(AdError::UnknownNode(usize::MAX)));
        }
        let r = self.tape.borrow_mut().constant(value);
        self.var(r)
    }

    /// Built-in operation on values already held by the handles, skipping
    /// the tape lookups done by [`Tape::apply`].
    #[inline(always)]
    fn builtin<'a>(&'a self, op: Op, x: Var<'a>, y: Option<Var<'a>>) -> Var<'a> {
        let same_tape = y.map_or(true, |v| std::ptr::eq(v.rec, self));
        if !self.poisoned.get() && same_tape {
            if let Some((value, partials)) = eval_builtin(op, x.value, y.map_or(0.0, |v| v.value)) {
                if value.is_finite() && partials[0].is_finite() && partials[1].is_finite() {
                    let parents = [x.id as u32, y.map_or(0, |v| v.id as u32)];
                    let n = 1 + y.is_some() as u8;
                    let id = self.tape.borrow_mut().push_finite(op, parents, n, value, partials);
                    return Var { rec: self, id, value };
                }
            }
        }
        self.builtin_slow(op, x, y)
    }

    #[cold]
    #[inline(never)]
    fn builtin_slow<'a>(&'a self, op: Op, x: Var<'a>, y: Option<Var<'a>>) -> Var<'a> {
        if self.poisoned.get() {
            return self.var(Err(AdError::UnknownNode(usize::MAX)));
        }
        if let Some(v) = y.filter(|v| !std::ptr::eq(v.rec, self)) {
            // a handle recorded on another tape
            return self.var(Err(AdError::UnknownNode(v.id)));
        }
        let yv = y.map_or(0.0, |v| v.value);
        let pushed = {
            let mut tape = self.tape.borrow_mut();
            match eval_builtin(op, x.value, yv) {
                Some((value, partials)) => {
                    let parents = [x.id as u32, y.map_or(0, |v| v.id as u32)];
                    let n = 1 + y.is_some() as u8;
                    tape.push_node(op, parents, n, value, partials).map(|id| (id, value))
                }
                // outside the domain: the checked path builds the error report
                None => {
                    let ids = [x.id, y.map_or(0, |v| v.id)];
                    tape.apply(op, &ids[..1 + y.is_some() as usize]).map(|id| (id, f64::NAN))
                }
            }
        };
        match pushed {
            Ok((id, value)) => Var { rec: self, id, value },
            Err(e) => self.var(Err(e)),
        }
    }

    pub fn apply<'a>(&'a self, op: Op, args: &[Var<'a>]) -> Var<'a> {
        if self.poisoned.get() {
            return self.var(Err(AdError::UnknownNode(usize::MAX)));
        }
        let mut ids = [0; 2];
        for (slot, a) in ids.iter_mut().zip(args) {
            *slot = a.id;
        }
        let r = self.tape.borrow_mut().apply(op, &ids[..args.len().min(2)]);
        self.var(r)
    }

    pub fn is_poisoned(&self) -> bool {
        self.poisoned.get()
    }

    /// Completed tape, or the first recording error.
    pub fn finish(self) -> Result<Tape, AdError> {
        match self.error.into_inner() {
            Some(e) => Err(e),
            None => Ok(self.tape.into_inner()),
        }
    }
}

/// A taped real number: a node id plus its recorded value.
#[derive(Clone, Copy)]
pub struct Var<'a> {
    rec: &'a Recorder,
    id: NodeId,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{} = {})", self.id, self.value)
    }
}

impl<'a> Var<'a> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    #[inline(always)]
    fn unary(self, op: Op) -> Self {
        self.rec.builtin(op, self, None)
    }

    #[inline(always)]
    fn binary(self, op: Op, rhs: Self) -> Self {
        self.rec.builtin(op, self, Some(rhs))
    }
}

macro_rules! var_binop {
    ($tr:ident, $method:ident, $op:expr) => {
        impl<'a> $tr for Var<'a> {
            type Output = Var<'a>;
            #[inline]
            fn $method(self, rhs: Var<'a>) -> Var<'a> {
                self.binary($op, rhs)
            }
        }
    };
}

var_binop!(Add, add, Op::Add);
var_binop!(Sub, sub, Op::Sub);
var_binop!(Mul, mul, Op::Mul);
var_binop!(Div, div, Op::Div);

impl<'a> Neg for Var<'a> {
    type Output = Var<'a>;
    #[inline]
    fn neg(self) -> Var<'a> {
        self.unary(Op::Neg)
    }
}

impl<'a> Scalar for Var<'a> {
    fn cst_like(like: Self, value: f64) -> Self {
        like.rec.constant(value)
    }
    #[inline]
    fn sin(self) -> Self {
        self.unary(Op::Sin)
    }
    #[inline]
    fn cos(self) -> Self {
        self.unary(Op::Cos)
    }
    #[inline]
    fn exp(self) -> Self {
        self.unary(Op::Exp)
    }
    #[inline]
    fn ln(self) -> Self {
        self.unary(Op::Ln)
    }
    #[inline]
    fn sqrt(self) -> Self {
        self.unary(Op::Sqrt)
    }
    #[inline]
    fn powf(self, p: f64) -> Self {
        self.unary(Op::PowConst(p))
    }
    #[inline]
    fn re(self) -> f64 {
        self.value
    }
    #[inline]
    fn scale(self, k: f64) -> Self {
        self.unary(Op::Scale(k))
    }
    #[inline]
    fn shift(self, k: f64) -> Self {
        self.unary(Op::Shift(k))
    }
}
