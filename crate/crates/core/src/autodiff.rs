//! Reverse-mode scalar autodiff.
//!
//! A [`Tape`] records one scalar expression graph per training step; [`Var`]
//! implements [`Real`] so the generic pipeline code runs unchanged on tape
//! variables. Constants fold eagerly and never touch the tape, so constant
//! subgraphs (frozen backends fed with constant inputs) cost nothing.
//!
//! Gradients are exact: every operator stores its local partials at record
//! time and [`Tape::backward`] accumulates adjoints in one reverse sweep.

use std::cell::RefCell;
use std::rc::Rc;

use crate::scalar::Real;

const NO_PARENT: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
}

type NodeStore = Rc<RefCell<Vec<Node>>>;

/// Expression tape. Cheap to clone (shared handle).
#[derive(Clone, Default)]
pub struct Tape {
    nodes: NodeStore,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Create a differentiable leaf variable.
    pub fn leaf(&self, value: f64) -> Var {
        let idx = self.push(Node {
            parents: [NO_PARENT; 2],
            partials: [0.0; 2],
        });
        Var(Repr::Node {
            nodes: self.nodes.clone(),
            idx,
            val: value,
        })
    }

    pub fn leaves(&self, values: &[f64]) -> Vec<Var> {
        values.iter().map(|&v| self.leaf(v)).collect()
    }

    fn push(&self, node: Node) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        assert!(idx < NO_PARENT as usize, "tape overflow");
        nodes.push(node);
        idx as u32
    }

    /// Reverse sweep from `output`; returns the adjoint of every node.
    ///
    /// A `Const` output has no dependence on any leaf, so all gradients are
    /// zero.
    pub fn backward(&self, output: &Var) -> Grads {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0f64; nodes.len()];
        if let Repr::Node { nodes: store, idx, .. } = &output.0 {
            assert!(
                Rc::ptr_eq(store, &self.nodes),
                "output variable belongs to a different tape"
            );
            adj[*idx as usize] = 1.0;
            for i in (0..=*idx as usize).rev() {
                let a = adj[i];
                if a == 0.0 {
                    continue;
                }
                let node = nodes[i];
                for k in 0..2 {
                    let p = node.parents[k];
                    if p != NO_PARENT {
                        adj[p as usize] += a * node.partials[k];
                    }
                }
            }
        }
        Grads {
            nodes: self.nodes.clone(),
            adj,
        }
    }
}

/// Adjoints computed by [`Tape::backward`].
pub struct Grads {
    nodes: NodeStore,
    adj: Vec<f64>,
}

impl Grads {
    /// Gradient of the backward output with respect to `v`.
    pub fn wrt(&self, v: &Var) -> f64 {
        match &v.0 {
            Repr::Const(_) => 0.0,
            Repr::Node { nodes, idx, .. } => {
                assert!(
                    Rc::ptr_eq(nodes, &self.nodes),
                    "variable belongs to a different tape"
                );
                self.adj[*idx as usize]
            }
        }
    }
}

/// Scalar value, either a folded constant or a recorded tape node.
#[derive(Clone)]
pub struct Var(Repr);

#[derive(Clone)]
enum Repr {
    Const(f64),
    Node { nodes: NodeStore, idx: u32, val: f64 },
}

impl Var {
    pub fn constant(v: f64) -> Self {
        Var(Repr::Const(v))
    }

    pub fn value(&self) -> f64 {
        match &self.0 {
            Repr::Const(v) => *v,
            Repr::Node { val, .. } => *val,
        }
    }

    /// True when this value folded to a constant (no tape node).
    pub fn is_const(&self) -> bool {
        matches!(self.0, Repr::Const(_))
    }

    fn store(&self) -> Option<&NodeStore> {
        match &self.0 {
            Repr::Const(_) => None,
            Repr::Node { nodes, .. } => Some(nodes),
        }
    }

    fn idx(&self) -> u32 {
        match &self.0 {
            Repr::Const(_) => NO_PARENT,
            Repr::Node { idx, .. } => *idx,
        }
    }
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.0 {
            Repr::Const(v) => write!(f, "Var::Const({v})"),
            Repr::Node { idx, val, .. } => write!(f, "Var::Node[{idx}]({val})"),
        }
    }
}

fn unary(a: &Var, val: f64, da: f64) -> Var {
    match a.store() {
        None => Var(Repr::Const(val)),
        Some(store) => {
            let node = Node {
                parents: [a.idx(), NO_PARENT],
                partials: [da, 0.0],
            };
            let mut nodes = store.borrow_mut();
            let idx = nodes.len() as u32;
            nodes.push(node);
            Var(Repr::Node {
                nodes: store.clone(),
                idx,
                val,
            })
        }
    }
}

fn binary(a: &Var, b: &Var, val: f64, da: f64, db: f64) -> Var {
    let store = match (a.store(), b.store()) {
        (None, None) => return Var(Repr::Const(val)),
        (Some(sa), Some(sb)) => {
            assert!(Rc::ptr_eq(sa, sb), "operands belong to different tapes");
            sa
        }
        (Some(sa), None) => sa,
        (None, Some(sb)) => sb,
    };
    let node = Node {
        parents: [a.idx(), b.idx()],
        partials: [da, db],
    };
    let mut nodes = store.borrow_mut();
    let idx = nodes.len() as u32;
    nodes.push(node);
    Var(Repr::Node {
        nodes: store.clone(),
        idx,
        val,
    })
}

impl std::ops::Add for Var {
    type Output = Var;
    fn add(self, rhs: Var) -> Var {
        binary(&self, &rhs, self.value() + rhs.value(), 1.0, 1.0)
    }
}

impl std::ops::Sub for Var {
    type Output = Var;
    fn sub(self, rhs: Var) -> Var {
        binary(&self, &rhs, self.value() - rhs.value(), 1.0, -1.0)
    }
}

impl std::ops::Mul for Var {
    type Output = Var;
    fn mul(self, rhs: Var) -> Var {
        binary(&self, &rhs, self.value() * rhs.value(), rhs.value(), self.value())
    }
}

impl std::ops::Div for Var {
    type Output = Var;
    fn div(self, rhs: Var) -> Var {
        let (x, y) = (self.value(), rhs.value());
        binary(&self, &rhs, x / y, 1.0 / y, -x / (y * y))
    }
}

impl std::ops::Neg for Var {
    type Output = Var;
    fn neg(self) -> Var {
        unary(&self, -self.value(), -1.0)
    }
}

impl PartialEq for Var {
    fn eq(&self, other: &Self) -> bool {
        self.value() == other.value()
    }
}

impl PartialOrd for Var {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.value().partial_cmp(&other.value())
    }
}

impl Real for Var {
    fn from_f64(v: f64) -> Self {
        Var(Repr::Const(v))
    }
    fn to_f64(&self) -> f64 {
        self.value()
    }
    fn exp(&self) -> Self {
        let e = self.value().exp();
        unary(self, e, e)
    }
    fn ln(&self) -> Self {
        let x = self.value();
        unary(self, x.ln(), 1.0 / x)
    }
    fn sqrt(&self) -> Self {
        let s = self.value().sqrt();
        unary(self, s, 0.5 / s)
    }
    fn tanh(&self) -> Self {
        let t = self.value().tanh();
        unary(self, t, 1.0 - t * t)
    }
    fn abs(&self) -> Self {
        let x = self.value();
        unary(self, x.abs(), if x >= 0.0 { 1.0 } else { -1.0 })
    }
    fn powi(&self, n: i32) -> Self {
        let x = self.value();
        unary(self, x.powi(n), f64::from(n) * x.powi(n - 1))
    }
    fn max(&self, other: &Self) -> Self {
        // Branch on primal values; both sides agree at ties.
        if self.value() >= other.value() {
            self.clone()
        } else {
            other.clone()
        }
    }
    fn min(&self, other: &Self) -> Self {
        if self.value() <= other.value() {
            self.clone()
        } else {
            other.clone()
        }
    }
}
