//! Expression graph construction and symbolic reverse-mode differentiation.
//!
//! Every node is a scalar expression. Its value is evaluated over a set of
//! *lanes* (independent samples) whose count depends on the node's [`Level`]:
//! level 0 holds one shared value (parameters, constants), level 1 one value
//! per batch element and level 2 one value per (batch element, inner
//! replicate) pair. Operands of lower level broadcast to higher levels.
//!
//! Gradients are built as new graph nodes, so a gradient can itself be
//! differentiated again.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::AutodiffError;

pub type NodeId = u32;

/// Lane nesting level of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Level(pub u8);

impl Level {
    /// One value shared by every lane.
    pub const SHARED: Level = Level(0);
    /// One value per batch element.
    pub const BATCH: Level = Level(1);
    /// One value per Monte-Carlo replicate of a batch element.
    pub const MC: Level = Level(2);
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) enum Op {
    Input(u32),
    Const(u64),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, u64),
    Exp(NodeId),
    Log(NodeId),
    Tanh(NodeId),
    /// `1 - t^2` of a tanh output `t`, i.e. the tanh derivative.
    TanhPrime(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    Sum(Box<[NodeId]>),
    Dot(Box<[NodeId]>, Box<[NodeId]>),
    Expand(NodeId),
    Reduce(NodeId),
    LogSumExp(NodeId),
}

impl Op {
    pub(crate) fn for_each_parent(&self, mut f: impl FnMut(NodeId)) {
        match self {
            Op::Input(_) | Op::Const(_) => {}
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                f(*a);
                f(*b);
            }
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Tanh(a)
            | Op::TanhPrime(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Expand(a)
            | Op::Reduce(a)
            | Op::LogSumExp(a) => f(*a),
            Op::Sum(xs) => xs.iter().copied().for_each(f),
            Op::Dot(ws, xs) => {
                ws.iter().copied().for_each(&mut f);
                xs.iter().copied().for_each(f);
            }
        }
    }

    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Const(_) => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Tanh(_) => "tanh",
            Op::TanhPrime(_) => "tanh'",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softplus(_) => "softplus",
            Op::Square(_) => "square",
            Op::Sqrt(_) => "sqrt",
            Op::Sum(_) => "sum",
            Op::Dot(..) => "dot",
            Op::Expand(_) => "expand",
            Op::Reduce(_) => "reduce",
            Op::LogSumExp(_) => "logsumexp",
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) level: Level,
}

#[derive(Default)]
pub(crate) struct Inner {
    pub(crate) nodes: Vec<Node>,
    pub(crate) inputs: Vec<(NodeId, String)>,
    cse: HashMap<(Op, Level), NodeId>,
}

/// A growable expression graph. Construction is single-threaded; compile it
/// into a [`Program`](super::Program) for (repeated) evaluation.
#[derive(Default)]
pub struct Graph {
    pub(crate) inner: RefCell<Inner>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: NodeId,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.graph.inner.borrow();
        let node = &inner.nodes[self.id as usize];
        write!(f, "Var#{}({}, L{})", self.id, node.op.name(), node.level.0)
    }
}

impl PartialEq for Var<'_> {
    fn eq(&self, other: &Self) -> bool {
        std::ptr::eq(self.graph, other.graph) && self.id == other.id
    }
}

/// Components of a gradient, themselves graph nodes.
#[derive(Debug, Clone)]
pub struct GradHandle<'g> {
    pub of: Var<'g>,
    pub wrt: Vec<Var<'g>>,
    pub nodes: Vec<Var<'g>>,
}

impl<'g> GradHandle<'g> {
    pub fn component(&self, i: usize) -> Var<'g> {
        self.nodes[i]
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn var(&self, id: NodeId) -> Var<'_> {
        Var { graph: self, id }
    }

    /// Declares a new input bound at evaluation time.
    pub fn input(&self, name: impl Into<String>, level: Level) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let slot = inner.inputs.len() as u32;
        let id = inner.nodes.len() as NodeId;
        inner.nodes.push(Node { op: Op::Input(slot), level });
        inner.inputs.push((id, name.into()));
        drop(inner);
        self.var(id)
    }

    /// Declares `n` inputs named `name[0]..name[n-1]`.
    pub fn inputs(&self, name: &str, n: usize, level: Level) -> Vec<Var<'_>> {
        (0..n)
            .map(|i| self.input(format!("{name}[{i}]"), level))
            .collect()
    }

    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(Op::Const(value.to_bits()), Level::SHARED)
    }

    pub(crate) fn node(&self, id: NodeId) -> Node {
        self.inner.borrow().nodes[id as usize].clone()
    }

    pub(crate) fn level_of(&self, id: NodeId) -> Level {
        self.inner.borrow().nodes[id as usize].level
    }

    fn const_value(&self, id: NodeId) -> Option<f64> {
        match self.inner.borrow().nodes[id as usize].op {
            Op::Const(bits) => Some(f64::from_bits(bits)),
            _ => None,
        }
    }

    fn push(&self, op: Op, level: Level) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let key = (op, level);
        if let Some(&id) = inner.cse.get(&key) {
            drop(inner);
            return self.var(id);
        }
        let id = inner.nodes.len() as NodeId;
        inner.nodes.push(Node {
            op: key.0.clone(),
            level,
        });
        inner.cse.insert(key, id);
        drop(inner);
        self.var(id)
    }

    fn binary_level(&self, a: NodeId, b: NodeId) -> Level {
        self.level_of(a).max(self.level_of(b))
    }

    pub(crate) fn add_ids(&self, a: NodeId, b: NodeId) -> Var<'_> {
        match (self.const_value(a), self.const_value(b)) {
            (Some(x), Some(y)) => return self.constant(x + y),
            (Some(x), None) if x == 0.0 => return self.var(b),
            (None, Some(y)) if y == 0.0 => return self.var(a),
            _ => {}
        }
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        self.push(Op::Add(lo, hi), self.binary_level(a, b))
    }

    pub(crate) fn sub_ids(&self, a: NodeId, b: NodeId) -> Var<'_> {
        match (self.const_value(a), self.const_value(b)) {
            (Some(x), Some(y)) => return self.constant(x - y),
            (Some(x), None) if x == 0.0 => return self.neg_id(b),
            (None, Some(y)) if y == 0.0 => return self.var(a),
            _ => {}
        }
        if a == b {
            return self.constant(0.0);
        }
        self.push(Op::Sub(a, b), self.binary_level(a, b))
    }

    pub(crate) fn mul_ids(&self, a: NodeId, b: NodeId) -> Var<'_> {
        match (self.const_value(a), self.const_value(b)) {
            (Some(x), Some(y)) => return self.constant(x * y),
            (Some(x), None) => return self.scale_id(b, x),
            (None, Some(y)) => return self.scale_id(a, y),
            _ => {}
        }
        if a == b {
            return self.push(Op::Square(a), self.level_of(a));
        }
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        self.push(Op::Mul(lo, hi), self.binary_level(a, b))
    }

    pub(crate) fn div_ids(&self, a: NodeId, b: NodeId) -> Var<'_> {
        match (self.const_value(a), self.const_value(b)) {
            (Some(x), Some(y)) => return self.constant(x / y),
            (Some(x), None) if x == 0.0 => return self.constant(0.0),
            (None, Some(y)) => return self.scale_id(a, 1.0 / y),
            _ => {}
        }
        self.push(Op::Div(a, b), self.binary_level(a, b))
    }

    pub(crate) fn neg_id(&self, a: NodeId) -> Var<'_> {
        if let Some(x) = self.const_value(a) {
            return self.constant(-x);
        }
        if let Op::Neg(inner) = self.node(a).op {
            return self.var(inner);
        }
        self.push(Op::Neg(a), self.level_of(a))
    }

    pub(crate) fn scale_id(&self, a: NodeId, c: f64) -> Var<'_> {
        if c == 1.0 {
            return self.var(a);
        }
        if c == 0.0 {
            return self.constant(0.0);
        }
        if c == -1.0 {
            return self.neg_id(a);
        }
        if let Some(x) = self.const_value(a) {
            return self.constant(x * c);
        }
        if let Op::Scale(inner, bits) = self.node(a).op {
            return self.scale_id(inner, c * f64::from_bits(bits));
        }
        self.push(Op::Scale(a, c.to_bits()), self.level_of(a))
    }

    fn unary(&self, a: NodeId, make: fn(NodeId) -> Op, fold: fn(f64) -> f64) -> Var<'_> {
        if let Some(x) = self.const_value(a) {
            return self.constant(fold(x));
        }
        self.push(make(a), self.level_of(a))
    }

    /// Sum of several nodes (broadcasting to the highest level).
    pub fn sum(&self, xs: &[Var<'_>]) -> Var<'_> {
        let ids: Vec<NodeId> = xs.iter().map(|v| v.id).collect();
        self.sum_ids(&ids)
    }

    pub(crate) fn sum_ids(&self, ids: &[NodeId]) -> Var<'_> {
        let mut constant = 0.0;
        let mut rest: Vec<NodeId> = Vec::with_capacity(ids.len());
        for &id in ids {
            match self.const_value(id) {
                Some(c) => constant += c,
                None => rest.push(id),
            }
        }
        if constant != 0.0 {
            rest.push(self.constant(constant).id);
        }
        match rest.len() {
            0 => self.constant(0.0),
            1 => self.var(rest[0]),
            2 => self.add_ids(rest[0], rest[1]),
            _ => {
                rest.sort_unstable();
                let level = rest.iter().map(|&i| self.level_of(i)).max().unwrap();
                self.push(Op::Sum(rest.into_boxed_slice()), level)
            }
        }
    }

    /// `sum_i ws[i] * xs[i]`.
    pub fn dot(&self, ws: &[Var<'_>], xs: &[Var<'_>]) -> Var<'_> {
        assert_eq!(ws.len(), xs.len(), "dot: length mismatch");
        let a: Vec<NodeId> = ws.iter().map(|v| v.id).collect();
        let b: Vec<NodeId> = xs.iter().map(|v| v.id).collect();
        self.dot_ids(&a, &b)
    }

    pub(crate) fn dot_ids(&self, ws: &[NodeId], xs: &[NodeId]) -> Var<'_> {
        let mut a = Vec::with_capacity(ws.len());
        let mut b = Vec::with_capacity(xs.len());
        let mut extra = Vec::new();
        for (&w, &x) in ws.iter().zip(xs) {
            match (self.const_value(w), self.const_value(x)) {
                (Some(c), _) | (_, Some(c)) if c == 0.0 => {}
                (Some(c), _) => extra.push(self.scale_id(x, c).id),
                (_, Some(c)) => extra.push(self.scale_id(w, c).id),
                _ => {
                    a.push(w);
                    b.push(x);
                }
            }
        }
        let core = match a.len() {
            0 => None,
            1 => Some(self.mul_ids(a[0], b[0]).id),
            _ => {
                let level = a
                    .iter()
                    .chain(b.iter())
                    .map(|&i| self.level_of(i))
                    .max()
                    .unwrap();
                Some(self.push(Op::Dot(a.into(), b.into()), level).id)
            }
        };
        extra.extend(core);
        self.sum_ids(&extra)
    }

    /// Row-by-row products `rows[i] . xs`, i.e. a matrix-vector product.
    pub fn matvec<'a>(&'a self, rows: &[Vec<Var<'a>>], xs: &[Var<'a>]) -> Vec<Var<'a>> {
        rows.iter().map(|row| self.dot(row, xs)).collect()
    }

    /// Repeats `v` onto the lanes of a higher level.
    pub fn expand<'a>(&'a self, v: Var<'a>, level: Level) -> Var<'a> {
        self.to_level(v.id, level)
    }

    /// Sums groups of lanes of `v` down to a lower level.
    pub fn reduce<'a>(&'a self, v: Var<'a>, level: Level) -> Var<'a> {
        self.to_level(v.id, level)
    }

    /// Group-wise `log(sum(exp(.)))` down to a lower level.
    pub fn logsumexp<'a>(&'a self, v: Var<'a>, level: Level) -> Var<'a> {
        let from = v.level();
        assert!(level < from, "logsumexp must reduce to a lower level");
        self.push(Op::LogSumExp(v.id), level)
    }

    pub(crate) fn to_level(&self, id: NodeId, level: Level) -> Var<'_> {
        let from = self.level_of(id);
        if from == level {
            self.var(id)
        } else if from < level {
            self.push(Op::Expand(id), level)
        } else {
            self.push(Op::Reduce(id), level)
        }
    }

    /// Gradient of `of` with respect to the inputs `wrt`.
    ///
    /// For a lane-valued `of` this is the per-lane gradient (equivalently the
    /// gradient of the lane sum). Fails when `of` depends on none of `wrt`.
    pub fn gradient<'a>(&'a self, of: Var<'a>, wrt: &[Var<'a>]) -> Result<GradHandle<'a>, AutodiffError> {
        let reachable = self.depends_on(of, wrt);
        if !reachable {
            return Err(AutodiffError::NotReachable { of: of.id });
        }
        Ok(self.gradient_or_zero(of, wrt))
    }

    /// As [`Graph::gradient`] but unreachable inputs get a zero gradient.
    pub fn gradient_or_zero<'a>(&'a self, of: Var<'a>, wrt: &[Var<'a>]) -> GradHandle<'a> {
        let one = self.constant(1.0);
        let nodes = self
            .vjp(&[(of, one)], wrt)
            .into_iter()
            .zip(wrt)
            .map(|(g, w)| g.unwrap_or_else(|| self.to_level(self.constant(0.0).id, w.level())))
            .collect();
        GradHandle {
            of,
            wrt: wrt.to_vec(),
            nodes,
        }
    }

    /// True when `of` depends on at least one of `wrt`.
    pub fn depends_on(&self, of: Var<'_>, wrt: &[Var<'_>]) -> bool {
        let Some(min_id) = wrt.iter().map(|v| v.id).min() else {
            return false;
        };
        if of.id < min_id {
            return false;
        }
        let inner = self.inner.borrow();
        let span = (of.id - min_id + 1) as usize;
        let mut dep = vec![false; span];
        for w in wrt {
            if w.id <= of.id {
                dep[(w.id - min_id) as usize] = true;
            }
        }
        for id in min_id..=of.id {
            let k = (id - min_id) as usize;
            if dep[k] {
                continue;
            }
            let mut any = false;
            inner.nodes[id as usize].op.for_each_parent(|p| {
                if p >= min_id && dep[(p - min_id) as usize] {
                    any = true;
                }
            });
            dep[k] = any;
        }
        dep[span - 1]
    }

    /// Vector-Jacobian product: gradient of `sum_k <seeds[k].1, seeds[k].0>`
    /// with respect to `wrt`, where the cotangents are graph nodes too (so the
    /// result remains differentiable through them). `None` marks an
    /// identically zero component.
    pub fn vjp<'a>(&'a self, seeds: &[(Var<'a>, Var<'a>)], wrt: &[Var<'a>]) -> Vec<Option<Var<'a>>> {
        let mut out = vec![None; wrt.len()];
        let Some(min_id) = wrt.iter().map(|v| v.id).min() else {
            return out;
        };
        let Some(max_id) = seeds.iter().map(|(o, _)| o.id).max() else {
            return out;
        };
        if max_id < min_id {
            return out;
        }
        let span = (max_id - min_id + 1) as usize;
        let idx = |id: NodeId| (id - min_id) as usize;

        let mut is_wrt = vec![false; span];
        for w in wrt {
            if w.id <= max_id {
                is_wrt[idx(w.id)] = true;
            }
        }
        let mut dep = is_wrt.clone();
        {
            let inner = self.inner.borrow();
            for id in min_id..=max_id {
                if dep[idx(id)] {
                    continue;
                }
                let mut any = false;
                inner.nodes[id as usize].op.for_each_parent(|p| {
                    if p >= min_id && dep[idx(p)] {
                        any = true;
                    }
                });
                dep[idx(id)] = any;
            }
        }

        let mut adj: Vec<Vec<NodeId>> = vec![Vec::new(); span];
        for (o, c) in seeds {
            if o.id >= min_id && dep[idx(o.id)] {
                let c = self.to_level(c.id, o.level());
                adj[idx(o.id)].push(c.id);
            }
        }
        let mut finals: HashMap<NodeId, NodeId> = HashMap::new();

        for id in (min_id..=max_id).rev() {
            let k = idx(id);
            if adj[k].is_empty() || !dep[k] {
                continue;
            }
            let list = std::mem::take(&mut adj[k]);
            let g = self.sum_ids(&list).id;
            if is_wrt[k] {
                finals.insert(id, g);
            }
            let node = self.node(id);
            let mut push = |parent: NodeId, contrib: Var<'a>| {
                if parent >= min_id && dep[idx(parent)] {
                    let lvl = self.level_of(parent);
                    let c = self.to_level(contrib.id, lvl);
                    adj[idx(parent)].push(c.id);
                }
            };
            let gv = self.var(g);
            let me = self.var(id);
            match node.op {
                Op::Input(_) | Op::Const(_) => {}
                Op::Add(a, b) => {
                    push(a, gv);
                    push(b, gv);
                }
                Op::Sub(a, b) => {
                    push(a, gv);
                    if is_dep(&dep, b, min_id) {
                        push(b, -gv);
                    }
                }
                Op::Mul(a, b) => {
                    if is_dep(&dep, a, min_id) {
                        push(a, gv * self.var(b));
                    }
                    if is_dep(&dep, b, min_id) {
                        push(b, gv * self.var(a));
                    }
                }
                Op::Div(a, b) => {
                    let bv = self.var(b);
                    if is_dep(&dep, a, min_id) {
                        push(a, gv / bv);
                    }
                    if is_dep(&dep, b, min_id) {
                        push(b, -(gv * me / bv));
                    }
                }
                Op::Neg(a) => push(a, -gv),
                Op::Scale(a, bits) => push(a, gv * f64::from_bits(bits)),
                Op::Exp(a) => push(a, gv * me),
                Op::Log(a) => push(a, gv / self.var(a)),
                Op::Tanh(a) => push(a, gv * self.push(Op::TanhPrime(id), self.level_of(id))),
                Op::TanhPrime(t) => push(t, gv * self.var(t) * (-2.0)),
                Op::Sigmoid(a) => push(a, gv * (me * (1.0 - me))),
                Op::Softplus(a) => push(a, gv * self.var(a).sigmoid()),
                Op::Square(a) => push(a, gv * self.var(a) * 2.0),
                Op::Sqrt(a) => push(a, gv / (me * 2.0)),
                Op::Sum(xs) => {
                    for &x in xs.iter() {
                        push(x, gv);
                    }
                }
                Op::Dot(ws, xs) => {
                    for (&w, &x) in ws.iter().zip(xs.iter()) {
                        if is_dep(&dep, w, min_id) {
                            push(w, gv * self.var(x));
                        }
                        if is_dep(&dep, x, min_id) {
                            push(x, gv * self.var(w));
                        }
                    }
                }
                Op::Expand(a) | Op::Reduce(a) => push(a, gv),
                Op::LogSumExp(a) => {
                    let lvl = self.level_of(a);
                    let av = self.var(a);
                    let soft = (av - self.to_level(id, lvl)).exp();
                    push(a, self.to_level(g, lvl) * soft);
                }
            }
        }

        for (slot, w) in out.iter_mut().zip(wrt) {
            if let Some(&g) = finals.get(&w.id) {
                *slot = Some(self.var(g));
            }
        }
        out
    }
}

fn is_dep(dep: &[bool], id: NodeId, min_id: NodeId) -> bool {
    id >= min_id && dep[(id - min_id) as usize]
}

impl<'g> Var<'g> {
    pub fn id(self) -> NodeId {
        self.id
    }

    pub fn graph(self) -> &'g Graph {
        self.graph
    }

    pub fn level(self) -> Level {
        self.graph.level_of(self.id)
    }

    pub fn exp(self) -> Self {
        self.graph.unary(self.id, Op::Exp, f64::exp)
    }

    pub fn ln(self) -> Self {
        self.graph.unary(self.id, Op::Log, f64::ln)
    }

    pub fn tanh(self) -> Self {
        self.graph.unary(self.id, Op::Tanh, f64::tanh)
    }

    /// Derivative of tanh evaluated at `self`.
    pub fn tanh_prime(self) -> Self {
        let t = self.tanh();
        t.graph.unary(t.id, Op::TanhPrime, |t| 1.0 - t * t)
    }

    pub fn sigmoid(self) -> Self {
        self.graph.unary(self.id, Op::Sigmoid, sigmoid)
    }

    pub fn softplus(self) -> Self {
        self.graph.unary(self.id, Op::Softplus, softplus)
    }

    pub fn square(self) -> Self {
        self.graph.unary(self.id, Op::Square, |x| x * x)
    }

    pub fn sqrt(self) -> Self {
        self.graph.unary(self.id, Op::Sqrt, f64::sqrt)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

macro_rules! binop {
    ($trait:ident, $method:ident, $ids:ident) => {
        impl<'g> $trait for Var<'g> {
            type Output = Var<'g>;
            fn $method(self, rhs: Var<'g>) -> Var<'g> {
                debug_assert!(std::ptr::eq(self.graph, rhs.graph));
                self.graph.$ids(self.id, rhs.id)
            }
        }
        impl<'g> $trait<f64> for Var<'g> {
            type Output = Var<'g>;
            fn $method(self, rhs: f64) -> Var<'g> {
                let c = self.graph.constant(rhs);
                self.graph.$ids(self.id, c.id)
            }
        }
        impl<'g> $trait<Var<'g>> for f64 {
            type Output = Var<'g>;
            fn $method(self, rhs: Var<'g>) -> Var<'g> {
                let c = rhs.graph.constant(self);
                rhs.graph.$ids(c.id, rhs.id)
            }
        }
    };
}

binop!(Add, add, add_ids);
binop!(Sub, sub, sub_ids);
binop!(Mul, mul, mul_ids);
binop!(Div, div, div_ids);

impl<'g> Neg for Var<'g> {
    type Output = Var<'g>;
    fn neg(self) -> Var<'g> {
        self.graph.neg_id(self.id)
    }
}
