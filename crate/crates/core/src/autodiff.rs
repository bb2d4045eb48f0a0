//! Scalar automatic differentiation.
//!
//! Two layers live here:
//!
//! * [`Dual2`], a plain second-order dual number `(value, d1, d2)` carrying the
//!   first and second derivative with respect to one seeded input.
//! * [`Tape`], an append-only reverse-mode tape of scalar operations. A
//!   [`DualVar`] is a `Dual2` whose three channels are tape nodes, so the
//!   derivative propagation itself is differentiated when [`Tape::reverse`]
//!   runs. That is what lets a loss built from `u_xx` be differentiated with
//!   respect to network parameters.

use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("non-finite value at tape node {node} ({op}) during {phase}")]
    NonFinite {
        node: usize,
        op: &'static str,
        phase: &'static str,
    },
    #[error("result handle {0} does not belong to this tape")]
    UnknownNode(usize),
}

/// Second-order dual number with respect to a single seeded input.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dual2 {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Dual2 {
    pub const fn new(value: f64, d1: f64, d2: f64) -> Self {
        Self { value, d1, d2 }
    }

    pub const fn constant(value: f64) -> Self {
        Self::new(value, 0.0, 0.0)
    }

    pub const fn variable(value: f64) -> Self {
        Self::new(value, 1.0, 0.0)
    }

    /// Seeds slot `slot` of an input vector: the derivative channels are set
    /// only when it matches the differentiation slot.
    pub fn seed(slot: usize, seeded_slot: usize, value: f64) -> Self {
        if slot == seeded_slot {
            Self::variable(value)
        } else {
            Self::constant(value)
        }
    }

    pub fn scale(self, c: f64) -> Self {
        Self::new(self.value * c, self.d1 * c, self.d2 * c)
    }

    pub fn tanh(self) -> Self {
        let t = self.value.tanh();
        let s = 1.0 - t * t;
        Self::new(t, s * self.d1, s * self.d2 - 2.0 * t * s * self.d1 * self.d1)
    }

    pub fn exp(self) -> Self {
        let e = self.value.exp();
        Self::new(e, e * self.d1, e * (self.d2 + self.d1 * self.d1))
    }

    pub fn sinh(self) -> Self {
        let sh = self.value.sinh();
        let ch = self.value.cosh();
        Self::new(sh, ch * self.d1, ch * self.d2 + sh * self.d1 * self.d1)
    }

    pub fn is_finite(self) -> bool {
        self.value.is_finite() && self.d1.is_finite() && self.d2.is_finite()
    }
}

impl Add for Dual2 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.value + rhs.value, self.d1 + rhs.d1, self.d2 + rhs.d2)
    }
}

impl Sub for Dual2 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.value - rhs.value, self.d1 - rhs.d1, self.d2 - rhs.d2)
    }
}

impl Mul for Dual2 {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self::new(
            self.value * rhs.value,
            self.d1 * rhs.value + self.value * rhs.d1,
            self.d2 * rhs.value + 2.0 * self.d1 * rhs.d1 + self.value * rhs.d2,
        )
    }
}

impl Div for Dual2 {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.value;
        let q = self.value * inv;
        let q1 = (self.d1 - q * rhs.d1) * inv;
        let q2 = (self.d2 - 2.0 * q1 * rhs.d1 - q * rhs.d2) * inv;
        Self::new(q, q1, q2)
    }
}

impl Neg for Dual2 {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.value, -self.d1, -self.d2)
    }
}

/// Handle to a scalar node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Constant,
    Param(u32),
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale,
    Tanh,
    Exp,
    Sinh,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Constant => "constant",
            OpKind::Param(_) => "param",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::Neg => "neg",
            OpKind::Scale => "scale",
            OpKind::Tanh => "tanh",
            OpKind::Exp => "exp",
            OpKind::Sinh => "sinh",
        }
    }
}

const NO_OPERAND: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Node {
    op: OpKind,
    operands: [u32; 2],
    partials: [f64; 2],
}

/// Parameter gradient, aligned index-for-index with the flat parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub entries: Vec<f64>,
}

impl Gradient {
    pub fn zeros(len: usize) -> Self {
        Self {
            entries: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|g| g.is_finite())
    }
}

/// Append-only reverse-mode tape.
///
/// Nodes are stored in recording order, so every operand index is smaller
/// than the node that consumes it and a single backward pass suffices.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<f64>,
    param_count: usize,
    adjoints: Vec<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(nodes),
            values: Vec::with_capacity(nodes),
            param_count: 0,
            adjoints: Vec::new(),
        }
    }

    /// Drops all nodes but keeps the allocations for the next recording.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.values.clear();
        self.param_count = 0;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> f64 {
        self.values[v.index()]
    }

    /// Number of gradient slots: one past the largest registered parameter index.
    pub fn param_count(&self) -> usize {
        self.param_count
    }

    fn push(&mut self, op: OpKind, operands: [u32; 2], partials: [f64; 2], value: f64) -> Var {
        let idx = self.nodes.len();
        assert!(idx < NO_OPERAND as usize, "tape exceeded u32 node capacity");
        self.nodes.push(Node {
            op,
            operands,
            partials,
        });
        self.values.push(value);
        Var(idx as u32)
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.push(OpKind::Constant, [NO_OPERAND; 2], [0.0; 2], value)
    }

    /// Registers a trainable leaf whose adjoint lands in `Gradient::entries[index]`.
    pub fn param(&mut self, index: usize, value: f64) -> Var {
        self.param_count = self.param_count.max(index + 1);
        self.push(OpKind::Param(index as u32), [NO_OPERAND; 2], [0.0; 2], value)
    }

    /// Registers a whole flat parameter array, in order.
    pub fn params(&mut self, values: &[f64]) -> Vec<Var> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| self.param(i, v))
            .collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(OpKind::Add, [a.0, b.0], [1.0, 1.0], v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(OpKind::Sub, [a.0, b.0], [1.0, -1.0], v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        self.push(OpKind::Mul, [a.0, b.0], [vb, va], va * vb)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let q = va / vb;
        self.push(OpKind::Div, [a.0, b.0], [1.0 / vb, -q / vb], q)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = -self.value(a);
        self.push(OpKind::Neg, [a.0, NO_OPERAND], [-1.0, 0.0], v)
    }

    /// Multiplication by a constant that is not itself tracked.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(OpKind::Scale, [a.0, NO_OPERAND], [c, 0.0], v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).tanh();
        self.push(OpKind::Tanh, [a.0, NO_OPERAND], [1.0 - t * t, 0.0], t)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let e = self.value(a).exp();
        self.push(OpKind::Exp, [a.0, NO_OPERAND], [e, 0.0], e)
    }

    pub fn sinh(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.push(OpKind::Sinh, [a.0, NO_OPERAND], [x.cosh(), 0.0], x.sinh())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    /// Sum of many nodes, recorded as a chain of additions.
    pub fn sum(&mut self, terms: &[Var]) -> Var {
        let mut iter = terms.iter();
        let Some(&first) = iter.next() else {
            return self.constant(0.0);
        };
        iter.fold(first, |acc, &t| self.add(acc, t))
    }

    /// Dot product of tracked values with tracked weights.
    pub fn dot(&mut self, a: &[Var], b: &[Var]) -> Var {
        let products: Vec<Var> = a.iter().zip(b).map(|(&x, &y)| self.mul(x, y)).collect();
        self.sum(&products)
    }

    /// Seeds input slot `slot`; derivative channels are 1/0 only when it matches `seeded_slot`.
    pub fn seed_input(&mut self, slot: usize, seeded_slot: usize, value: f64) -> DualVar {
        let d = Dual2::seed(slot, seeded_slot, value);
        self.dual_constant(d)
    }

    pub fn dual_constant(&mut self, d: Dual2) -> DualVar {
        DualVar {
            value: self.constant(d.value),
            d1: self.constant(d.d1),
            d2: self.constant(d.d2),
        }
    }

    pub fn dual_value(&self, d: DualVar) -> Dual2 {
        Dual2::new(self.value(d.value), self.value(d.d1), self.value(d.d2))
    }

    pub fn dual_add(&mut self, a: DualVar, b: DualVar) -> DualVar {
        DualVar {
            value: self.add(a.value, b.value),
            d1: self.add(a.d1, b.d1),
            d2: self.add(a.d2, b.d2),
        }
    }

    /// Product of a dual with a tracked scalar that does not depend on the seeded input,
    /// such as a network weight.
    pub fn dual_mul_scalar(&mut self, a: DualVar, w: Var) -> DualVar {
        DualVar {
            value: self.mul(a.value, w),
            d1: self.mul(a.d1, w),
            d2: self.mul(a.d2, w),
        }
    }

    pub fn dual_add_scalar(&mut self, a: DualVar, b: Var) -> DualVar {
        DualVar {
            value: self.add(a.value, b),
            d1: a.d1,
            d2: a.d2,
        }
    }

    pub fn dual_mul(&mut self, a: DualVar, b: DualVar) -> DualVar {
        let value = self.mul(a.value, b.value);
        let l = self.mul(a.d1, b.value);
        let r = self.mul(a.value, b.d1);
        let d1 = self.add(l, r);
        let p = self.mul(a.d2, b.value);
        let q = self.mul(a.d1, b.d1);
        let q = self.scale(q, 2.0);
        let s = self.mul(a.value, b.d2);
        let pq = self.add(p, q);
        let d2 = self.add(pq, s);
        DualVar { value, d1, d2 }
    }

    /// `tanh` on a dual: `d1' = s·d1`, `d2' = s·d2 − 2·t·s·d1²` with `t = tanh(v)`, `s = 1 − t²`.
    pub fn tanh_node(&mut self, h: DualVar) -> DualVar {
        let t = self.tanh(h.value);
        let tt = self.square(t);
        let one = self.constant(1.0);
        let s = self.sub(one, tt);
        let d1 = self.mul(s, h.d1);
        let sd2 = self.mul(s, h.d2);
        let ts = self.mul(t, s);
        let d1sq = self.square(h.d1);
        let curv = self.mul(ts, d1sq);
        let curv = self.scale(curv, 2.0);
        let d2 = self.sub(sd2, curv);
        DualVar { value: t, d1, d2 }
    }

    /// Reverse sweep from `result`, returning the adjoint of every registered parameter.
    pub fn reverse(&mut self, result: Var) -> Result<Gradient, AutodiffError> {
        let root = result.index();
        if root >= self.nodes.len() {
            return Err(AutodiffError::UnknownNode(root));
        }
        if let Some(bad) = self.values[..=root].iter().position(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite {
                node: bad,
                op: self.nodes[bad].op.name(),
                phase: "forward",
            });
        }
        self.adjoints.clear();
        self.adjoints.resize(root + 1, 0.0);
        self.adjoints[root] = 1.0;
        let mut grad = Gradient::zeros(self.param_count);
        for i in (0..=root).rev() {
            let adj = self.adjoints[i];
            if adj == 0.0 {
                continue;
            }
            if !adj.is_finite() {
                return Err(AutodiffError::NonFinite {
                    node: i,
                    op: self.nodes[i].op.name(),
                    phase: "reverse",
                });
            }
            let node = self.nodes[i];
            if let OpKind::Param(p) = node.op {
                grad.entries[p as usize] += adj;
                continue;
            }
            for (&operand, &partial) in node.operands.iter().zip(&node.partials) {
                if operand != NO_OPERAND {
                    self.adjoints[operand as usize] += adj * partial;
                }
            }
        }
        Ok(grad)
    }
}

/// A [`Dual2`] whose channels are recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DualVar {
    pub value: Var,
    pub d1: Var,
    pub d2: Var,
}

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn central_difference_gradient<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let fp = f(&probe);
            probe[i] = orig - h;
            let fm = f(&probe);
            probe[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Relative error with the `|a| + |b| + 1e-12` denominator used by all gradient checks.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs() + 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeding_sets_channels() {
        let mut tape = Tape::new();
        let x = tape.seed_input(0, 0, 0.3);
        assert_eq!(tape.dual_value(x), Dual2::new(0.3, 1.0, 0.0));
        let y = tape.seed_input(1, 0, 0.3);
        assert_eq!(tape.dual_value(y), Dual2::new(0.3, 0.0, 0.0));
        let k = tape.seed_input(2, 2, 0.01);
        assert_eq!(tape.dual_value(k), Dual2::new(0.01, 1.0, 0.0));
    }

    #[test]
    fn tanh_node_at_zero() {
        let mut tape = Tape::new();
        let h = tape.dual_constant(Dual2::new(0.0, 1.0, 0.0));
        let out = tape.tanh_node(h);
        assert_eq!(tape.dual_value(out), Dual2::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn tanh_node_at_one() {
        let mut tape = Tape::new();
        let h = tape.dual_constant(Dual2::new(1.0, 1.0, 0.0));
        let t = tape.tanh_node(h);
        let out = tape.dual_value(t);
        // closed-form tanh derivatives at 1
        assert!((out.value - 0.761_594_155_955_764_9).abs() < 1e-12);
        assert!((out.d1 - 0.419_974_341_614_026_1).abs() < 1e-12);
        assert!((out.d2 - -0.639_700_008_449_225_4).abs() < 1e-12);
    }

    #[test]
    fn tanh_chain_rule_matches_finite_differences() {
        // g(s) = tanh(0.5 + 2s + 1.5 s²) has g at s=0 seeded as (0.5, 2, 3).
        let g = |s: f64| (0.5 + 2.0 * s + 1.5 * s * s).tanh();
        let h = 1e-4;
        let fd1 = (g(h) - g(-h)) / (2.0 * h);
        let fd2 = (g(h) - 2.0 * g(0.0) + g(-h)) / (h * h);
        let mut tape = Tape::new();
        let d = tape.dual_constant(Dual2::new(0.5, 2.0, 3.0));
        let t = tape.tanh_node(d);
        let out = tape.dual_value(t);
        let plain = Dual2::new(0.5, 2.0, 3.0).tanh();
        assert_eq!(out, plain);
        assert!(relative_error(out.d1, fd1) < 1e-7);
        assert!(relative_error(out.d2, fd2) < 1e-5);
    }

    #[test]
    fn reverse_product_rule() {
        let mut tape = Tape::new();
        let p = tape.params(&[2.0, 3.0]);
        let r = tape.mul(p[0], p[1]);
        let g = tape.reverse(r).unwrap();
        assert_eq!(g.entries, vec![3.0, 2.0]);
    }

    #[test]
    fn reverse_tanh_at_zero() {
        let mut tape = Tape::new();
        let p = tape.param(0, 0.0);
        let r = tape.tanh(p);
        assert_eq!(tape.reverse(r).unwrap().entries, vec![1.0]);
    }

    #[test]
    fn reverse_matches_finite_differences_on_mixed_expression() {
        let f = |p: &[f64]| {
            let a = (p[0] * p[1]).tanh();
            let b = (p[2] / (1.5 + p[0] * p[0])).exp();
            (a * b - p[1]).sinh() + a / b
        };
        let point = [0.3, -0.7, 0.45];
        let mut tape = Tape::new();
        let p = tape.params(&point);
        let a = tape.mul(p[0], p[1]);
        let a = tape.tanh(a);
        let c = tape.constant(1.5);
        let sq = tape.square(p[0]);
        let den = tape.add(c, sq);
        let b = tape.div(p[2], den);
        let b = tape.exp(b);
        let ab = tape.mul(a, b);
        let ab = tape.sub(ab, p[1]);
        let left = tape.sinh(ab);
        let right = tape.div(a, b);
        let r = tape.add(left, right);
        assert!((tape.value(r) - f(&point)).abs() < 1e-15);
        let g = tape.reverse(r).unwrap();
        let fd = central_difference_gradient(f, &point, 1e-4);
        for (a, b) in g.entries.iter().zip(&fd) {
            assert!(relative_error(*a, *b) < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn reverse_through_dual_channels() {
        // u(x) = tanh(w·x): d/dw of u_xx must match differentiating the closed form.
        let w0 = 0.8;
        let x0 = 0.4;
        let uxx = |w: f64| {
            let t = (w * x0).tanh();
            -2.0 * w * w * t * (1.0 - t * t)
        };
        let mut tape = Tape::new();
        let w = tape.param(0, w0);
        let x = tape.seed_input(0, 0, x0);
        let z = tape.dual_mul_scalar(x, w);
        let u = tape.tanh_node(z);
        assert!((tape.value(u.d2) - uxx(w0)).abs() < 1e-14);
        let g = tape.reverse(u.d2).unwrap();
        let fd = (uxx(w0 + 1e-5) - uxx(w0 - 1e-5)) / 2e-5;
        assert!(relative_error(g.entries[0], fd) < 1e-8);
    }

    #[test]
    fn affine_chain_has_zero_curvature() {
        let mut tape = Tape::new();
        let w = tape.params(&[1.7, -0.3, 2.2]);
        let mut d = tape.seed_input(0, 0, 0.25);
        for &wi in &w {
            d = tape.dual_mul_scalar(d, wi);
            d = tape.dual_add_scalar(d, wi);
        }
        let out = tape.dual_value(d);
        assert_eq!(out.d2, 0.0);
        assert!((out.d1 - 1.7 * -0.3 * 2.2).abs() < 1e-15);
    }

    #[test]
    fn nan_is_reported_with_node() {
        let mut tape = Tape::new();
        let p = tape.param(0, 0.0);
        let z = tape.constant(0.0);
        let q = tape.div(p, z);
        match tape.reverse(q) {
            Err(AutodiffError::NonFinite { node, op, .. }) => {
                assert_eq!(node, q.index());
                assert_eq!(op, "div");
            }
            other => panic!("expected NaN diagnostic, got {other:?}"),
        }
    }

    #[test]
    fn clear_reuses_tape_deterministically() {
        let build = |tape: &mut Tape| {
            let p = tape.params(&[0.1, 0.2, 0.3]);
            let a = tape.mul(p[0], p[1]);
            let b = tape.tanh(p[2]);
            let r = tape.dual_constant(Dual2::new(0.2, 1.0, 0.0));
            let r = tape.dual_mul_scalar(r, a);
            let r = tape.tanh_node(r);
            let s = tape.add(r.d2, b);
            tape.reverse(s).unwrap()
        };
        let mut tape = Tape::new();
        let g1 = build(&mut tape);
        tape.clear();
        let g2 = build(&mut tape);
        assert_eq!(g1.entries, g2.entries);
    }

    #[test]
    fn dual_arithmetic_matches_closed_forms() {
        let x = Dual2::variable(0.7);
        let f = (x * x + Dual2::constant(1.0)) / (x.exp() + x.sinh());
        let g = |x: f64| (x * x + 1.0) / (x.exp() + x.sinh());
        let h = 1e-4;
        let fd1 = (g(0.7 + h) - g(0.7 - h)) / (2.0 * h);
        let fd2 = (g(0.7 + h) - 2.0 * g(0.7) + g(0.7 - h)) / (h * h);
        assert!((f.value - g(0.7)).abs() < 1e-15);
        assert!(relative_error(f.d1, fd1) < 1e-7);
        assert!(relative_error(f.d2, fd2) < 1e-5);
    }
}
