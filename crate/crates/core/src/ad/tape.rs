use std::fmt::{self, Write as _};
use std::sync::Arc;

use thiserror::Error;

/// Index of a node on a [`Tape`]. Identifiers are dense: `0..tape.len()`.
pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdError {
    #[error("node {node}: non-finite value {value} from `{op}`")]
    NonFinite { node: NodeId, op: String, value: f64 },
    #[error("node {node}: `{op}` undefined at argument {arg}")]
    Domain { node: NodeId, op: String, arg: f64 },
    #[error("node {node}: `{op}` expects {expected} argument(s), got {got}")]
    Arity {
        node: NodeId,
        op: String,
        expected: usize,
        got: usize,
    },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown user operation #{0}")]
    UnknownOp(usize),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// A user-registered elementary operation.
///
/// `eval` returns the value and one local partial per argument, or `None`
/// when the arguments lie outside the operation's domain.
pub trait UserOp: Send + Sync {
    fn name(&self) -> &str;
    fn arity(&self) -> usize;
    fn eval(&self, args: &[f64]) -> Option<(f64, [f64; 2])>;
}

/// Value and local partials of a built-in operation, `None` outside its domain.
#[inline(always)]
pub(crate) fn eval_builtin(op: Op, x: f64, y: f64) -> Option<(f64, [f64; 2])> {
    Some(match op {
        Op::Add => (x + y, [1.0, 1.0]),
        Op::Sub => (x - y, [1.0, -1.0]),
        Op::Mul => (x * y, [y, x]),
        Op::Div => {
            if y == 0.0 {
                return None;
            }
            let q = x / y;
            (q, [1.0 / y, -q / y])
        }
        Op::Neg => (-x, [-1.0, 0.0]),
        Op::Scale(k) => (k * x, [k, 0.0]),
        Op::Shift(k) => (x + k, [1.0, 0.0]),
        Op::Sin => {
            let (s, c) = x.sin_cos();
            (s, [c, 0.0])
        }
        Op::Cos => {
            let (s, c) = x.sin_cos();
            (c, [-s, 0.0])
        }
        Op::Exp => {
            let e = x.exp();
            (e, [e, 0.0])
        }
        Op::Ln => {
            if x <= 0.0 {
                return None;
            }
            (x.ln(), [1.0 / x, 0.0])
        }
        Op::Sqrt => {
            // the derivative blows up at the origin
            if x <= 0.0 {
                return None;
            }
            let s = x.sqrt();
            (s, [0.5 / s, 0.0])
        }
        Op::PowConst(p) => {
            if x < 0.0 && p.fract() != 0.0 || x == 0.0 && p < 1.0 && p != 0.0 {
                return None;
            }
            (x.powf(p), [p * x.powf(p - 1.0), 0.0])
        }
        Op::Input | Op::Const | Op::User(_) => return None,
    })
}

/// Handle to a user operation registered on a particular tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UserOpId {
    index: u32,
    arity: u8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Input,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    PowConst(f64),
    /// `k * x`
    Scale(f64),
    /// `x + k`
    Shift(f64),
    User(UserOpId),
}

impl Op {
    pub fn arity(self) -> usize {
        match self {
            Op::Input | Op::Const => 0,
            Op::Neg
            | Op::Sin
            | Op::Cos
            | Op::Exp
            | Op::Ln
            | Op::Sqrt
            | Op::PowConst(_)
            | Op::Scale(_)
            | Op::Shift(_) => 1,
            Op::Add | Op::Sub | Op::Mul | Op::Div => 2,
            Op::User(u) => u.arity as usize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub op: Op,
    parents: [u32; 2],
    partials: [f64; 2],
    pub value: f64,
}

impl Node {
    pub fn parents(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.parents[..self.n_parents()]
            .iter()
            .map(|&p| p as NodeId)
    }

    pub fn local_partials(&self) -> &[f64] {
        &self.partials[..self.n_parents()]
    }

    fn n_parents(&self) -> usize {
        self.op.arity().min(2)
    }

    fn is_leaf(&self) -> bool {
        matches!(self.op, Op::Input | Op::Const)
    }
}

/// Recorded elementary operations in evaluation order, with local partials
/// frozen at record time.
#[derive(Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    inputs: Vec<NodeId>,
    user_ops: Vec<Arc<dyn UserOp>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.len())
            .field("inputs", &self.inputs)
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(nodes),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn inputs(&self) -> &[NodeId] {
        &self.inputs
    }

    pub fn value(&self, id: NodeId) -> Result<f64, AdError> {
        self.nodes
            .get(id)
            .map(|n| n.value)
            .ok_or(AdError::UnknownNode(id))
    }

    pub fn register_op(&mut self, op: Arc<dyn UserOp>) -> UserOpId {
        let id = UserOpId {
            index: self.user_ops.len() as u32,
            arity: op.arity().min(u8::MAX as usize) as u8,
        };
        self.user_ops.push(op);
        id
    }

    fn op_name(&self, op: Op) -> String {
        match op {
            Op::Input => "input".into(),
            Op::Const => "const".into(),
            Op::Add => "add".into(),
            Op::Sub => "sub".into(),
            Op::Mul => "mul".into(),
            Op::Div => "div".into(),
            Op::Neg => "neg".into(),
            Op::Sin => "sin".into(),
            Op::Cos => "cos".into(),
            Op::Exp => "exp".into(),
            Op::Ln => "ln".into(),
            Op::Sqrt => "sqrt".into(),
            Op::PowConst(p) => format!("pow{p}"),
            Op::Scale(k) => format!("scale{k}"),
            Op::Shift(k) => format!("shift{k}"),
            Op::User(UserOpId { index, .. }) => self
                .user_ops
                .get(index as usize)
                .map_or_else(|| format!("user#{index}"), |u| u.name().to_string()),
        }
    }

    fn leaf(&mut self, op: Op, value: f64) -> Result<NodeId, AdError> {
        let id = self.nodes.len();
        if !value.is_finite() {
            return Err(AdError::NonFinite {
                node: id,
                op: self.op_name(op),
                value,
            });
        }
        self.nodes.push(Node {
            op,
            parents: [0; 2],
            partials: [0.0; 2],
            value,
        });
        Ok(id)
    }

    /// Appends an independent variable.
    pub fn input(&mut self, value: f64) -> Result<NodeId, AdError> {
        let id = self.leaf(Op::Input, value)?;
        self.inputs.push(id);
        Ok(id)
    }

    /// Appends a constant: a parentless node that is not an input.
    pub fn constant(&mut self, value: f64) -> Result<NodeId, AdError> {
        self.leaf(Op::Const, value)
    }

    /// Appends `op(args)` with its analytic local partials.
    pub fn apply(&mut self, op: Op, args: &[NodeId]) -> Result<NodeId, AdError> {
        let id = self.nodes.len();
        let expected = match op {
            Op::User(UserOpId { index, .. }) => self
                .user_ops
                .get(index as usize)
                .ok_or(AdError::UnknownOp(index as usize))?
                .arity(),
            Op::Input | Op::Const => {
                return Err(AdError::Arity {
                    node: id,
                    op: self.op_name(op),
                    expected: 0,
                    got: args.len(),
                })
            }
            other => other.arity(),
        };
        if args.len() != expected || expected > 2 {
            return Err(AdError::Arity {
                node: id,
                op: self.op_name(op),
                expected,
                got: args.len(),
            });
        }
        let mut vals = [0.0; 2];
        for (slot, &a) in vals.iter_mut().zip(args) {
            *slot = self.value(a)?;
        }
        let [x, y] = vals;
        let (value, partials) = match op {
            Op::User(UserOpId { index, .. }) => self.user_ops[index as usize].eval(&vals[..expected]),
            _ => eval_builtin(op, x, y),
        }
        .ok_or_else(|| AdError::Domain {
            node: id,
            op: self.op_name(op),
            arg: x,
        })?;
        let mut parents = [0u32; 2];
        for (slot, &a) in parents.iter_mut().zip(args) {
            *slot = a as u32;
        }
        self.push_node(op, parents, expected as u8, value, partials)
    }

    /// Appends a node whose value and partials were computed by the caller
    /// from valid parent ids.
    #[inline(always)]
    pub(crate) fn push_node(
        &mut self,
        op: Op,
        parents: [u32; 2],
        n_parents: u8,
        value: f64,
        partials: [f64; 2],
    ) -> Result<NodeId, AdError> {
        let id = self.nodes.len();
        if !(value.is_finite() && partials[0].is_finite() && partials[1].is_finite()) {
            return Err(self.non_finite(op, id, value));
        }
        Ok(self.push_finite(op, parents, n_parents, value, partials))
    }

    /// [`Tape::push_node`] for values and partials already known to be finite.
    #[inline(always)]
    pub(crate) fn push_finite(
        &mut self,
        op: Op,
        parents: [u32; 2],
        n_parents: u8,
        value: f64,
        mut partials: [f64; 2],
    ) -> NodeId {
        if n_parents < 2 {
            partials[1] = 0.0;
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            parents,
            partials,
            value,
        });
        id
    }

    #[cold]
    fn non_finite(&self, op: Op, node: NodeId, value: f64) -> AdError {
        AdError::NonFinite {
            node,
            op: self.op_name(op),
            value,
        }
    }

    fn check_node(&self, id: NodeId) -> Result<(), AdError> {
        if id < self.nodes.len() {
            Ok(())
        } else {
            Err(AdError::UnknownNode(id))
        }
    }

    /// Tangents of every node for one input direction.
    fn tangents(&self, seed: &[f64], upto: usize) -> Result<Vec<f64>, AdError> {
        if seed.len() != self.inputs.len() {
            return Err(AdError::LengthMismatch {
                expected: self.inputs.len(),
                got: seed.len(),
            });
        }
        let mut dot = vec![0.0; upto];
        for (&id, &s) in self.inputs.iter().zip(seed) {
            if id < upto {
                dot[id] = s;
            }
        }
        for (id, node) in self.nodes[..upto].iter().enumerate() {
            if node.is_leaf() {
                continue;
            }
            dot[id] = node.partials[0] * dot[node.parents[0] as usize]
                + node.partials[1] * dot[node.parents[1] as usize];
        }
        Ok(dot)
    }

    /// Directional derivative of `output` along `seed` (one entry per input).
    pub fn forward_sweep(&self, output: NodeId, seed: &[f64]) -> Result<f64, AdError> {
        self.check_node(output)?;
        Ok(self.tangents(seed, output + 1)?[output])
    }

    /// Jacobian-vector product for a set of outputs.
    pub fn jvp(&self, outputs: &[NodeId], seed: &[f64]) -> Result<Vec<f64>, AdError> {
        for &o in outputs {
            self.check_node(o)?;
        }
        let upto = outputs.iter().max().map_or(0, |&m| m + 1);
        let dot = self.tangents(seed, upto)?;
        Ok(outputs.iter().map(|&o| dot[o]).collect())
    }

    /// Gradient of `output` with respect to every input in one reverse pass.
    pub fn reverse_sweep(&self, output: NodeId) -> Result<Vec<f64>, AdError> {
        self.vjp(&[output], &[1.0])
    }

    /// Vector-Jacobian product: seeds each designated output with its
    /// adjoint and accumulates back to the inputs.
    pub fn vjp(&self, outputs: &[NodeId], output_adjoints: &[f64]) -> Result<Vec<f64>, AdError> {
        if outputs.len() != output_adjoints.len() {
            return Err(AdError::LengthMismatch {
                expected: outputs.len(),
                got: output_adjoints.len(),
            });
        }
        for &o in outputs {
            self.check_node(o)?;
        }
        let upto = outputs.iter().max().map_or(0, |&m| m + 1);
        let mut bar = vec![0.0; upto];
        for (&o, &w) in outputs.iter().zip(output_adjoints) {
            bar[o] += w;
        }
        // unused parent slots hold partial 0, so both slots can be applied
        for id in (0..upto).rev() {
            let b = bar[id];
            let node = &self.nodes[id];
            if b == 0.0 || node.is_leaf() {
                continue;
            }
            bar[node.parents[0] as usize] += node.partials[0] * b;
            bar[node.parents[1] as usize] += node.partials[1] * b;
        }
        Ok(self
            .inputs
            .iter()
            .map(|&i| if i < upto { bar[i] } else { 0.0 })
            .collect())
    }

    /// Line-oriented dump: `id op parent-ids partials value`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (id, node) in self.nodes.iter().enumerate() {
            let parents: Vec<String> = node.parents().map(|p| p.to_string()).collect();
            let partials: Vec<String> = node
                .local_partials()
                .iter()
                .map(|d| d.to_string())
                .collect();
            let _ = writeln!(
                out,
                "{id} {} [{}] [{}] {}",
                self.op_name(node.op),
                parents.join(","),
                partials.join(","),
                node.value
            );
        }
        out
    }
}
