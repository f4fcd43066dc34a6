//! Tape-based reverse-mode automatic differentiation.
//!
//! The tape is a Wengert list: every primitive operation appends one
//! [`TapeNode`] holding the ids of its operands and the local partial
//! derivatives with respect to them. Because a node can only reference nodes
//! that already exist, ids are dense and parents always precede children, so
//! a single sweep in descending id order propagates adjoints correctly.
//!
//! Two front ends share the tape:
//!
//! * the explicit API ([`Tape::new_leaf`], [`Tape::apply`],
//!   [`Tape::gradient`]) working on [`DualRef`] handles, and
//! * [`Active`], an operator-overloaded scalar implementing [`Real`] so the
//!   kernel suite can be recorded without modification.
//!
//! Arithmetic between an active value and a constant records a one-parent
//! node carrying the constant as the partial; arithmetic between two
//! constants records nothing.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

use crate::real::Real;

pub type NodeId = u32;

const NO_PARENT: NodeId = NodeId::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum AdError {
    #[error("domain error: {op} applied to {value}")]
    Domain { op: Op, value: f64 },
    #[error("node {0} is not on the tape")]
    UnknownNode(NodeId),
    #[error("{op} expects {expected} argument(s), got {got}")]
    Arity { op: Op, expected: usize, got: usize },
}

/// Primitive operations the tape knows how to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Sqrt,
    Exp,
    Ln,
    Powi(i32),
    Max,
}

impl Op {
    pub fn arity(self) -> usize {
        match self {
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Max => 2,
            Op::Neg | Op::Sqrt | Op::Exp | Op::Ln | Op::Powi(_) => 1,
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Add => f.write_str("add"),
            Op::Sub => f.write_str("sub"),
            Op::Mul => f.write_str("mul"),
            Op::Div => f.write_str("div"),
            Op::Neg => f.write_str("neg"),
            Op::Sqrt => f.write_str("sqrt"),
            Op::Exp => f.write_str("exp"),
            Op::Ln => f.write_str("ln"),
            Op::Powi(n) => write!(f, "powi({n})"),
            Op::Max => f.write_str("max"),
        }
    }
}

/// One recorded operation: up to two parents and `∂self/∂parent` for each.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TapeNode {
    parents: [NodeId; 2],
    partials: [f64; 2],
}

impl TapeNode {
    const LEAF: TapeNode = TapeNode {
        parents: [NO_PARENT; 2],
        partials: [0.0; 2],
    };

    pub fn arity(&self) -> usize {
        self.parents.iter().take_while(|&&p| p != NO_PARENT).count()
    }

    pub fn parents(&self) -> &[NodeId] {
        &self.parents[..self.arity()]
    }

    pub fn partials(&self) -> &[f64] {
        &self.partials[..self.arity()]
    }
}

/// Handle pairing a primal value with its node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualRef {
    pub value: f64,
    pub node: NodeId,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<TapeNode>>,
    fault: Cell<Option<AdError>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(n)),
            fault: Cell::new(None),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node(&self, id: NodeId) -> Option<TapeNode> {
        self.nodes.borrow().get(id as usize).copied()
    }

    /// First domain error raised by an [`Active`] operation, if any.
    pub fn fault(&self) -> Option<AdError> {
        self.fault.get()
    }

    fn record_fault(&self, err: AdError) {
        if self.fault.get().is_none() {
            self.fault.set(Some(err));
        }
    }

    fn push(&self, node: TapeNode) -> NodeId {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        assert!(id < NO_PARENT as usize, "tape exhausted the node id space");
        nodes.push(node);
        id as NodeId
    }

    fn push_unary(&self, parent: NodeId, partial: f64) -> NodeId {
        self.push(TapeNode {
            parents: [parent, NO_PARENT],
            partials: [partial, 0.0],
        })
    }

    fn push_binary(&self, a: NodeId, da: f64, b: NodeId, db: f64) -> NodeId {
        self.push(TapeNode {
            parents: [a, b],
            partials: [da, db],
        })
    }

    pub fn new_leaf(&self, value: f64) -> DualRef {
        DualRef {
            value,
            node: self.push(TapeNode::LEAF),
        }
    }

    /// Records `op` applied to `args` and returns the result handle.
    pub fn apply(&self, op: Op, args: &[DualRef]) -> Result<DualRef, AdError> {
        if args.len() != op.arity() {
            return Err(AdError::Arity {
                op,
                expected: op.arity(),
                got: args.len(),
            });
        }
        {
            let len = self.len();
            if let Some(bad) = args.iter().find(|a| a.node as usize >= len) {
                return Err(AdError::UnknownNode(bad.node));
            }
        }
        if op == Op::Max {
            return Ok(self.max(args[0], args[1]));
        }
        if args.len() == 2 {
            let (a, b) = (args[0], args[1]);
            let (value, da, db) = binary_rule(op, a.value, b.value)?;
            let node = self.push_binary(a.node, da, b.node, db);
            Ok(DualRef { value, node })
        } else {
            let x = args[0];
            let (value, dx) = unary_rule(op, x.value)?;
            Ok(DualRef {
                value,
                node: self.push_unary(x.node, dx),
            })
        }
    }

    /// `max(x, y)` with partials `(1, 0)` unless `y > x`.
    pub fn max(&self, x: DualRef, y: DualRef) -> DualRef {
        let (value, dx, dy) = if y.value > x.value {
            (y.value, 0.0, 1.0)
        } else {
            (x.value, 1.0, 0.0)
        };
        DualRef {
            value,
            node: self.push_binary(x.node, dx, y.node, dy),
        }
    }

    /// Adjoints of every node up to and including `output`, from one reverse
    /// sweep seeded with `∂output/∂output = 1`.
    pub fn adjoints(&self, output: NodeId) -> Result<Vec<f64>, AdError> {
        let nodes = self.nodes.borrow();
        let out = output as usize;
        if out >= nodes.len() {
            return Err(AdError::UnknownNode(output));
        }
        let mut adj = vec![0.0_f64; out + 1];
        adj[out] = 1.0;
        for id in (0..=out).rev() {
            let a = adj[id];
            // Zero adjoints contribute nothing; skipping them also keeps
            // unreachable nodes at exactly 0.0 even if a partial is infinite.
            if a == 0.0 {
                continue;
            }
            let node = &nodes[id];
            for (&p, &d) in node.parents.iter().zip(&node.partials) {
                if p == NO_PARENT {
                    break;
                }
                adj[p as usize] += a * d;
            }
        }
        Ok(adj)
    }

    /// `∂output/∂leaf` for each requested leaf.
    pub fn gradient(&self, output: DualRef, leaves: &[NodeId]) -> Result<Vec<f64>, AdError> {
        let len = self.len();
        if let Some(&bad) = leaves.iter().find(|&&l| l as usize >= len) {
            return Err(AdError::UnknownNode(bad));
        }
        let adj = self.adjoints(output.node)?;
        Ok(leaves
            .iter()
            .map(|&l| adj.get(l as usize).copied().unwrap_or(0.0))
            .collect())
    }

    /// An operator-overloaded leaf bound to this tape.
    pub fn active_leaf(&self, value: f64) -> Active<'_> {
        let r = self.new_leaf(value);
        Active {
            value,
            node: r.node,
            tape: Some(self),
        }
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

fn binary_rule(op: Op, a: f64, b: f64) -> Result<(f64, f64, f64), AdError> {
    Ok(match op {
        Op::Add => (a + b, 1.0, 1.0),
        Op::Sub => (a - b, 1.0, -1.0),
        Op::Mul => (a * b, b, a),
        Op::Div => {
            if b == 0.0 {
                return Err(AdError::Domain { op, value: b });
            }
            (a / b, 1.0 / b, -a / (b * b))
        }
        _ => unreachable!("{op} is not binary"),
    })
}

fn unary_rule(op: Op, x: f64) -> Result<(f64, f64), AdError> {
    Ok(match op {
        Op::Neg => (-x, -1.0),
        Op::Sqrt => {
            if x <= 0.0 {
                return Err(AdError::Domain { op, value: x });
            }
            let s = x.sqrt();
            (s, 0.5 / s)
        }
        Op::Exp => {
            let e = x.exp();
            (e, e)
        }
        Op::Ln => {
            if x <= 0.0 {
                return Err(AdError::Domain { op, value: x });
            }
            (x.ln(), 1.0 / x)
        }
        Op::Powi(n) => (x.powi(n), f64::from(n) * x.powi(n - 1)),
        _ => unreachable!("{op} is not unary"),
    })
}

/// Scalar recorded on a tape, or a constant when `tape` is `None`.
#[derive(Clone, Copy)]
pub struct Active<'t> {
    value: f64,
    node: NodeId,
    tape: Option<&'t Tape>,
}

impl<'t> Active<'t> {
    pub fn node(&self) -> Option<NodeId> {
        self.tape.map(|_| self.node)
    }

    pub fn is_constant(&self) -> bool {
        self.tape.is_none()
    }

    pub fn as_dual(&self) -> Option<DualRef> {
        self.tape.map(|_| DualRef {
            value: self.value,
            node: self.node,
        })
    }

    fn unary(self, op: Op) -> Self {
        let Some(tape) = self.tape else {
            let x = self.value;
            return Active::constant(match op {
                Op::Neg => -x,
                Op::Sqrt => x.sqrt(),
                Op::Exp => x.exp(),
                Op::Ln => x.ln(),
                Op::Powi(n) => x.powi(n),
                _ => unreachable!("{op} is not unary"),
            });
        };
        let (value, dx) = match unary_rule(op, self.value) {
            Ok(r) => r,
            Err(e) => {
                tape.record_fault(e);
                (f64::NAN, f64::NAN)
            }
        };
        Active {
            value,
            node: tape.push_unary(self.node, dx),
            tape: Some(tape),
        }
    }

    fn binary(self, op: Op, rhs: Self) -> Self {
        let (value, da, db) = match binary_rule(op, self.value, rhs.value) {
            Ok(r) => r,
            Err(e) => {
                if let Some(t) = self.tape.or(rhs.tape) {
                    t.record_fault(e);
                }
                (fallback(op, self.value, rhs.value), f64::NAN, f64::NAN)
            }
        };
        match (self.tape, rhs.tape) {
            (None, None) => Active::constant(value),
            (Some(t), None) => Active {
                value,
                node: t.push_unary(self.node, da),
                tape: Some(t),
            },
            (None, Some(t)) => Active {
                value,
                node: t.push_unary(rhs.node, db),
                tape: Some(t),
            },
            (Some(t), Some(_)) => Active {
                value,
                node: t.push_binary(self.node, da, rhs.node, db),
                tape: Some(t),
            },
        }
    }
}

fn fallback(op: Op, a: f64, b: f64) -> f64 {
    match op {
        Op::Div => a / b,
        _ => f64::NAN,
    }
}

impl fmt::Debug for Active<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Some(n) => write!(f, "Active({} @ {n})", self.value),
            None => write!(f, "Active({} const)", self.value),
        }
    }
}

macro_rules! active_binop {
    ($trait:ident, $method:ident, $op:expr) => {
        impl<'t> $trait for Active<'t> {
            type Output = Active<'t>;
            #[inline]
            fn $method(self, rhs: Self) -> Self {
                self.binary($op, rhs)
            }
        }

        impl<'t> $trait<f64> for Active<'t> {
            type Output = Active<'t>;
            #[inline]
            fn $method(self, rhs: f64) -> Self {
                self.binary($op, Active::constant(rhs))
            }
        }
    };
}

active_binop!(Add, add, Op::Add);
active_binop!(Sub, sub, Op::Sub);
active_binop!(Mul, mul, Op::Mul);
active_binop!(Div, div, Op::Div);

impl<'t> Neg for Active<'t> {
    type Output = Active<'t>;
    #[inline]
    fn neg(self) -> Self {
        self.unary(Op::Neg)
    }
}

impl Real for Active<'_> {
    fn constant(c: f64) -> Self {
        Active {
            value: c,
            node: NO_PARENT,
            tape: None,
        }
    }

    fn value(self) -> f64 {
        self.value
    }

    fn sqrt(self) -> Self {
        self.unary(Op::Sqrt)
    }

    fn max(self, other: Self) -> Self {
        match (self.tape, other.tape) {
            (None, None) => Active::constant(Real::max(self.value, other.value)),
            (Some(t), _) | (None, Some(t)) => {
                let lift = |a: Active<'_>| match a.tape {
                    Some(_) => (a.node, true),
                    None => (NO_PARENT, false),
                };
                let (xn, xa) = lift(self);
                let (yn, ya) = lift(other);
                let (value, dx, dy) = if other.value > self.value {
                    (other.value, 0.0, 1.0)
                } else {
                    (self.value, 1.0, 0.0)
                };
                let node = match (xa, ya) {
                    (true, true) => t.push_binary(xn, dx, yn, dy),
                    (true, false) => t.push_unary(xn, dx),
                    (false, _) => t.push_unary(yn, dy),
                };
                Active {
                    value,
                    node,
                    tape: Some(t),
                }
            }
        }
    }
}

impl Active<'_> {
    pub fn exp(self) -> Self {
        self.unary(Op::Exp)
    }

    pub fn ln(self) -> Self {
        self.unary(Op::Ln)
    }

    pub fn powi(self, n: i32) -> Self {
        self.unary(Op::Powi(n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn leaves_get_dense_ids() {
        let t = Tape::new();
        let a = t.new_leaf(3.0);
        let b = t.new_leaf(0.0);
        assert_eq!(a.value, 3.0);
        assert_eq!(b.value, 0.0);
        assert_eq!(b.node, a.node + 1);
        assert_eq!(t.node(a.node).unwrap().arity(), 0);
    }

    #[test]
    fn mul_records_product_rule() {
        let t = Tape::new();
        let x = t.new_leaf(2.0);
        let y = t.new_leaf(5.0);
        let z = t.apply(Op::Mul, &[x, y]).unwrap();
        assert_eq!(z.value, 10.0);
        let n = t.node(z.node).unwrap();
        assert_eq!(n.parents(), &[x.node, y.node]);
        assert_eq!(n.partials(), &[5.0, 2.0]);
    }

    #[test]
    fn sqrt_records_half_inverse_root() {
        let t = Tape::new();
        let x = t.new_leaf(4.0);
        let s = t.apply(Op::Sqrt, &[x]).unwrap();
        assert_eq!(s.value, 2.0);
        assert_eq!(t.node(s.node).unwrap().partials(), &[0.25]);
    }

    #[test]
    fn domain_errors() {
        let t = Tape::new();
        let zero = t.new_leaf(0.0);
        let one = t.new_leaf(1.0);
        let neg = t.new_leaf(-1.0);
        assert!(matches!(
            t.apply(Op::Div, &[one, zero]),
            Err(AdError::Domain { op: Op::Div, .. })
        ));
        assert!(matches!(
            t.apply(Op::Sqrt, &[zero]),
            Err(AdError::Domain { op: Op::Sqrt, .. })
        ));
        assert!(matches!(
            t.apply(Op::Ln, &[neg]),
            Err(AdError::Domain { op: Op::Ln, .. })
        ));
        assert!(matches!(
            t.apply(Op::Add, &[one]),
            Err(AdError::Arity { .. })
        ));
    }

    #[test]
    fn active_domain_error_is_latched() {
        let t = Tape::new();
        let x = t.active_leaf(-4.0);
        let _ = x.sqrt();
        let _ = t.active_leaf(1.0) / t.active_leaf(0.0);
        assert!(matches!(t.fault(), Some(AdError::Domain { op: Op::Sqrt, .. })));
    }

    #[test]
    fn max_partials_and_tie_break() {
        let t = Tape::new();
        let a = t.new_leaf(3.0);
        let b = t.new_leaf(2.0);
        let m = t.max(a, b);
        assert_eq!(m.value, 3.0);
        assert_eq!(t.node(m.node).unwrap().partials(), &[1.0, 0.0]);
        let m = t.max(b, a);
        assert_eq!(m.value, 3.0);
        assert_eq!(t.node(m.node).unwrap().partials(), &[0.0, 1.0]);
        let c = t.new_leaf(2.0);
        let m = t.max(b, c);
        assert_eq!(m.value, 2.0);
        assert_eq!(t.node(m.node).unwrap().partials(), &[1.0, 0.0]);
    }

    #[test]
    fn unused_leaf_gets_exact_zero() {
        let t = Tape::new();
        let a: Vec<_> = [2.0, 5.0, 7.0].iter().map(|&v| t.new_leaf(v)).collect();
        let f = t.apply(Op::Mul, &[a[0], a[1]]).unwrap();
        let leaves: Vec<_> = a.iter().map(|r| r.node).collect();
        let g = t.gradient(f, &leaves).unwrap();
        assert_eq!(g, vec![5.0, 2.0, 0.0]);
        assert_eq!(g[2].to_bits(), 0.0_f64.to_bits());
    }

    #[test]
    fn sum_has_unit_gradient() {
        let t = Tape::new();
        let a: Vec<_> = (0..5).map(|i| t.active_leaf(i as f64)).collect();
        let s = a[1..].iter().fold(a[0], |acc, &x| acc + x);
        let leaves: Vec<_> = a.iter().map(|x| x.node().unwrap()).collect();
        let g = t.gradient(s.as_dual().unwrap(), &leaves).unwrap();
        assert_eq!(g, vec![1.0; 5]);
    }

    #[test]
    fn l2_norm_matches_finite_differences() {
        let f = |v: &[f64]| (v[0] * v[0] + v[1] * v[1]).sqrt();
        let v = [3.0, 4.0];
        let t = Tape::new();
        let x = t.active_leaf(v[0]);
        let y = t.active_leaf(v[1]);
        let n = (x * x + y * y).sqrt();
        let g = t
            .gradient(n.as_dual().unwrap(), &[x.node().unwrap(), y.node().unwrap()])
            .unwrap();
        for i in 0..2 {
            let h = 1e-6 * v[i].abs().max(1.0);
            let mut p = v;
            let mut m = v;
            p[i] += h;
            m[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!(close(g[i], fd, 1e-6), "{} vs {}", g[i], fd);
        }
        assert!(close(g[0], 0.6, 1e-15));
        assert!(close(g[1], 0.8, 1e-15));
    }

    // Composite in the style of a textbook reverse-mode walkthrough:
    // u = a·x, v = exp(x), y = u·v, f = ln(y) + y², with constant a.
    // Closed form: df/dx = (1/y + 2y) · a·e^x·(1 + x).
    #[test]
    fn composite_chain_rule_matches_closed_form() {
        let a = 1.5;
        for &x0 in &[0.3, 1.0, 2.2] {
            let t = Tape::new();
            let x = t.active_leaf(x0);
            let u = x * a;
            let v = x.exp();
            let y = u * v;
            let f = y.ln() + y.powi(2);
            let g = t
                .gradient(f.as_dual().unwrap(), &[x.node().unwrap()])
                .unwrap()[0];
            let yv = a * x0 * x0.exp();
            let expected = (1.0 / yv + 2.0 * yv) * a * x0.exp() * (1.0 + x0);
            assert!(close(g, expected, 1e-13), "x={x0}: {g} vs {expected}");
            assert_eq!(f.value(), yv.ln() + yv.powi(2));
        }
    }

    #[test]
    fn constants_do_not_touch_the_tape() {
        let t = Tape::new();
        let c = Active::constant(2.0) * Active::constant(3.0) + 1.0;
        assert!(c.is_constant());
        assert_eq!(c.value(), 7.0);
        assert!(t.is_empty());
        let x = t.active_leaf(1.0);
        let y = x * 4.0 + 1.0;
        assert_eq!(t.len(), 3);
        assert_eq!(t.node(y.node().unwrap()).unwrap().arity(), 1);
    }

    #[test]
    fn parents_precede_children_and_sweep_is_repeatable() {
        let t = Tape::new();
        let xs: Vec<_> = (0..10).map(|i| t.active_leaf(1.0 + i as f64)).collect();
        let mut acc = xs[0];
        for w in xs.windows(2) {
            acc = acc * w[1] - w[0].sqrt() + Real::max(w[0], w[1]);
        }
        for id in 0..t.len() as NodeId {
            let n = t.node(id).unwrap();
            assert!(n.parents().iter().all(|&p| p < id));
        }
        let a = t.adjoints(acc.node().unwrap()).unwrap();
        let b = t.adjoints(acc.node().unwrap()).unwrap();
        assert_eq!(a.len(), b.len());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a[acc.node().unwrap() as usize], 1.0);
    }

    #[test]
    fn unknown_nodes_are_rejected() {
        let t = Tape::new();
        let x = t.new_leaf(1.0);
        assert_eq!(t.gradient(x, &[7]), Err(AdError::UnknownNode(7)));
        let ghost = DualRef { value: 0.0, node: 9 };
        assert_eq!(t.gradient(ghost, &[0]), Err(AdError::UnknownNode(9)));
    }
}
