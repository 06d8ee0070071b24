//! Compiled evaluation of graph outputs over many lanes.
//!
//! A [`Program`] is a topologically ordered instruction list with buffer
//! slots reused by liveness. Lanes are processed in chunks of batch elements
//! so the working set stays in cache; shared outputs that are lane sums are
//! accumulated across chunks.

use std::collections::HashMap;

use super::graph::{Graph, NodeId, Op, Var};
use super::{sigmoid, softplus, AutodiffError};

const MAX_LEVELS: usize = 3;
const DEFAULT_CHUNK_LANES: usize = 2048;

#[derive(Debug, Clone, Copy)]
enum Loc {
    Slot(u32),
    Input(u32),
    Const(f64),
}

#[derive(Debug, Clone, Copy)]
struct Operand {
    loc: Loc,
    level: u8,
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(f64),
    Exp,
    Log,
    Tanh,
    TanhPrime,
    Sigmoid,
    Softplus,
    Square,
    Sqrt,
    Sum,
    Dot,
    Reduce,
    /// Lane-group sum of a product whose operands live on `from`.
    ReduceMul,
    LogSumExp,
}

#[derive(Debug, Clone)]
struct Instr {
    kind: Kind,
    level: u8,
    out: u32,
    args: Vec<Operand>,
    /// Level the operand of a reduction is summed from.
    from: u8,
}

#[derive(Debug, Clone, Copy)]
struct OutputSpec {
    src: Operand,
    level: u8,
    /// Shared value that is a sum over lanes, accumulated across chunks.
    accumulate: bool,
}

/// Compiled, immutable evaluator for a set of graph outputs.
#[derive(Debug, Clone)]
pub struct Program {
    instrs: Vec<Instr>,
    outputs: Vec<OutputSpec>,
    slot_levels: Vec<u8>,
    input_levels: Vec<u8>,
    input_names: Vec<String>,
    input_used: Vec<bool>,
    input_of_node: HashMap<NodeId, u32>,
    chunkable: bool,
    chunk_lanes: usize,
}

/// Input values for one evaluation of a [`Program`].
#[derive(Debug, Clone)]
pub struct Bindings {
    batch: usize,
    mc: usize,
    data: Vec<Option<Vec<f64>>>,
    input_of_node: HashMap<NodeId, u32>,
    input_levels: Vec<u8>,
}

/// Reusable scratch buffers for [`Program::eval_with`].
#[derive(Debug, Default)]
pub struct Workspace {
    slots: Vec<Vec<f64>>,
}

impl Bindings {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn mc(&self) -> usize {
        self.mc
    }

    /// Sets the values of `input`; the expected length is 1, `batch` or
    /// `batch * mc` depending on its level.
    pub fn set(&mut self, input: Var<'_>, values: &[f64]) -> &mut Self {
        let slot = *self
            .input_of_node
            .get(&input.id())
            .expect("set: node is not an input of this program's graph");
        let buf = self.data[slot as usize].get_or_insert_with(Vec::new);
        buf.clear();
        buf.extend_from_slice(values);
        self
    }

    /// Sets a shared input to one value.
    pub fn set_scalar(&mut self, input: Var<'_>, value: f64) -> &mut Self {
        self.set(input, &[value])
    }

    /// Binds a list of inputs component-wise from `columns[i]`.
    pub fn set_all(&mut self, inputs: &[Var<'_>], columns: &[Vec<f64>]) -> &mut Self {
        assert_eq!(inputs.len(), columns.len(), "set_all: length mismatch");
        for (v, c) in inputs.iter().zip(columns) {
            self.set(*v, c);
        }
        self
    }

    /// Binds shared inputs one value each.
    pub fn set_scalars(&mut self, inputs: &[Var<'_>], values: &[f64]) -> &mut Self {
        assert_eq!(inputs.len(), values.len(), "set_scalars: length mismatch");
        for (v, &x) in inputs.iter().zip(values) {
            self.set(*v, &[x]);
        }
        self
    }

    fn lanes(&self, level: u8) -> usize {
        match level {
            0 => 1,
            1 => self.batch,
            _ => self.batch * self.mc,
        }
    }
}

impl Program {
    /// Compiles the evaluation of `outputs`.
    pub fn compile(graph: &Graph, outputs: &[Var<'_>]) -> Result<Self, AutodiffError> {
        let inner = graph.inner.borrow();
        let nodes = &inner.nodes;
        let n = nodes.len();
        for v in outputs {
            if !std::ptr::eq(v.graph(), graph) {
                return Err(AutodiffError::ForeignNode);
            }
        }

        // Expand nodes are views of their operand.
        let alias = |mut id: NodeId| -> NodeId {
            while let Op::Expand(a) = nodes[id as usize].op {
                id = a;
            }
            id
        };

        let mut needed = vec![false; n];
        let mut stack: Vec<NodeId> = outputs.iter().map(|v| v.id()).collect();
        while let Some(id) = stack.pop() {
            if needed[id as usize] {
                continue;
            }
            needed[id as usize] = true;
            nodes[id as usize].op.for_each_parent(|p| stack.push(p));
        }

        let is_output: Vec<bool> = {
            let mut m = vec![false; n];
            for v in outputs {
                m[alias(v.id()) as usize] = true;
            }
            m
        };

        // A product read only by a lane reduction is folded into it.
        let mut uses = vec![0u32; n];
        for id in 0..n {
            if needed[id] {
                nodes[id].op.for_each_parent(|p| uses[alias(p) as usize] += 1);
            }
        }
        let mut fused = vec![false; n];
        for id in 0..n {
            if !needed[id] {
                continue;
            }
            if let Op::Reduce(a) = nodes[id].op {
                let ai = a as usize;
                if matches!(nodes[ai].op, Op::Mul(..))
                    && uses[ai] == 1
                    && !is_output[ai]
                    && nodes[ai].level.0 > nodes[id].level.0
                {
                    fused[ai] = true;
                }
            }
        }
        let parents_of = |id: usize| -> Vec<NodeId> {
            let mut ps = Vec::new();
            match nodes[id].op {
                Op::Reduce(a) if fused[a as usize] => nodes[a as usize].op.for_each_parent(|p| ps.push(p)),
                ref op => op.for_each_parent(|p| ps.push(p)),
            }
            ps
        };

        // Last instruction (by node id) that reads each materialized node.
        let mut last_use: Vec<NodeId> = (0..n as NodeId).collect();
        for id in 0..n {
            if !needed[id] || fused[id] || matches!(nodes[id].op, Op::Expand(_)) {
                continue;
            }
            for p in parents_of(id) {
                let p = alias(p) as usize;
                last_use[p] = last_use[p].max(id as NodeId);
            }
        }

        // Lane-sum tracking for chunked evaluation.
        let mut reduced = vec![false; n];
        let mut chunkable = true;
        for id in 0..n {
            if !needed[id] {
                continue;
            }
            let (red, ok) = lane_sum_rule(&nodes[id], &reduced, |p| nodes[p as usize].level.0);
            reduced[id] = red;
            chunkable &= ok;
        }

        let mut input_of_node = HashMap::new();
        let mut input_levels = Vec::with_capacity(inner.inputs.len());
        let mut input_names = Vec::with_capacity(inner.inputs.len());
        for (slot, (id, name)) in inner.inputs.iter().enumerate() {
            input_of_node.insert(*id, slot as u32);
            input_levels.push(nodes[*id as usize].level.0);
            input_names.push(name.clone());
        }
        let mut input_used = vec![false; inner.inputs.len()];

        let mut loc: Vec<Option<Loc>> = vec![None; n];
        let mut free: [Vec<u32>; MAX_LEVELS] = Default::default();
        let mut slot_levels: Vec<u8> = Vec::new();
        let mut freed = vec![false; n];
        let mut instrs = Vec::new();

        let operand = |loc: &[Option<Loc>], id: NodeId| -> Operand {
            let a = alias(id);
            Operand {
                loc: loc[a as usize].expect("operand evaluated before use"),
                level: nodes[a as usize].level.0,
            }
        };

        for id in 0..n {
            if !needed[id] || fused[id] {
                continue;
            }
            let node = &nodes[id];
            let level = node.level.0;
            if level as usize >= MAX_LEVELS {
                return Err(AutodiffError::UnsupportedLevel(level));
            }
            let (kind, parents): (Kind, Vec<NodeId>) = match &node.op {
                Op::Input(slot) => {
                    input_used[*slot as usize] = true;
                    loc[id] = Some(Loc::Input(*slot));
                    continue;
                }
                Op::Const(bits) => {
                    loc[id] = Some(Loc::Const(f64::from_bits(*bits)));
                    continue;
                }
                Op::Expand(_) => continue,
                Op::Add(a, b) => (Kind::Add, vec![*a, *b]),
                Op::Sub(a, b) => (Kind::Sub, vec![*a, *b]),
                Op::Mul(a, b) => (Kind::Mul, vec![*a, *b]),
                Op::Div(a, b) => (Kind::Div, vec![*a, *b]),
                Op::Neg(a) => (Kind::Neg, vec![*a]),
                Op::Scale(a, c) => (Kind::Scale(f64::from_bits(*c)), vec![*a]),
                Op::Exp(a) => (Kind::Exp, vec![*a]),
                Op::Log(a) => (Kind::Log, vec![*a]),
                Op::Tanh(a) => (Kind::Tanh, vec![*a]),
                Op::TanhPrime(a) => (Kind::TanhPrime, vec![*a]),
                Op::Sigmoid(a) => (Kind::Sigmoid, vec![*a]),
                Op::Softplus(a) => (Kind::Softplus, vec![*a]),
                Op::Square(a) => (Kind::Square, vec![*a]),
                Op::Sqrt(a) => (Kind::Sqrt, vec![*a]),
                Op::Sum(xs) => (Kind::Sum, xs.to_vec()),
                Op::Dot(ws, xs) => (Kind::Dot, ws.iter().chain(xs.iter()).copied().collect()),
                Op::Reduce(a) if fused[*a as usize] => (Kind::ReduceMul, parents_of(id)),
                Op::Reduce(a) => (Kind::Reduce, vec![*a]),
                Op::LogSumExp(a) => (Kind::LogSumExp, vec![*a]),
            };
            let args: Vec<Operand> = parents.iter().map(|&p| operand(&loc, p)).collect();
            let from = match &node.op {
                Op::Reduce(a) => nodes[*a as usize].level.0,
                _ => nodes[parents[0] as usize].level.0,
            };

            let out = match free[level as usize].pop() {
                Some(s) => s,
                None => {
                    slot_levels.push(level);
                    (slot_levels.len() - 1) as u32
                }
            };
            loc[id] = Some(Loc::Slot(out));
            instrs.push(Instr {
                kind,
                level,
                out,
                args,
                from,
            });

            for &p in &parents {
                let a = alias(p) as usize;
                if last_use[a] == id as NodeId && !is_output[a] && !freed[a] {
                    if let Some(Loc::Slot(s)) = loc[a] {
                        freed[a] = true;
                        free[nodes[a].level.0 as usize].push(s);
                    }
                }
            }
            if last_use[id] == id as NodeId && !is_output[id] {
                // Dead value (only reachable through an unused Expand chain).
                freed[id] = true;
                free[level as usize].push(out);
            }
        }

        let outputs = outputs
            .iter()
            .map(|v| {
                let a = alias(v.id());
                OutputSpec {
                    src: operand(&loc, v.id()),
                    level: v.level().0,
                    accumulate: reduced[a as usize] && v.level().0 == 0,
                }
            })
            .collect();

        Ok(Self {
            instrs,
            outputs,
            slot_levels,
            input_levels,
            input_names,
            input_used,
            input_of_node,
            chunkable,
            chunk_lanes: DEFAULT_CHUNK_LANES,
        })
    }

    /// Sets the target number of innermost lanes per chunk.
    pub fn with_chunk_lanes(mut self, lanes: usize) -> Self {
        self.chunk_lanes = lanes.max(1);
        self
    }

    pub fn n_instructions(&self) -> usize {
        self.instrs.len()
    }

    pub fn n_slots(&self) -> usize {
        self.slot_levels.len()
    }

    /// Whether lanes can be evaluated in chunks (otherwise one pass).
    pub fn is_chunkable(&self) -> bool {
        self.chunkable
    }

    /// Fresh bindings for `batch` elements with `mc` replicates each.
    pub fn bindings(&self, batch: usize, mc: usize) -> Bindings {
        Bindings {
            batch,
            mc,
            data: vec![None; self.input_levels.len()],
            input_of_node: self.input_of_node.clone(),
            input_levels: self.input_levels.clone(),
        }
    }

    /// Evaluates all outputs; each result has the lane count of its level.
    pub fn eval(&self, b: &Bindings) -> Result<Vec<Vec<f64>>, AutodiffError> {
        self.eval_with(&mut Workspace::default(), b)
    }

    pub fn eval_with(&self, ws: &mut Workspace, b: &Bindings) -> Result<Vec<Vec<f64>>, AutodiffError> {
        for (slot, used) in self.input_used.iter().enumerate() {
            if !used {
                continue;
            }
            let Some(d) = &b.data[slot] else {
                return Err(AutodiffError::Unbound(self.input_names[slot].clone()));
            };
            let expected = b.lanes(b.input_levels[slot]);
            if d.len() != expected {
                return Err(AutodiffError::BadLength {
                    name: self.input_names[slot].clone(),
                    expected,
                    got: d.len(),
                });
            }
        }
        if b.batch == 0 {
            return Err(AutodiffError::EmptyBatch);
        }

        let mc = b.mc.max(1);
        let chunk_b = if self.chunkable {
            (self.chunk_lanes / mc).clamp(1, b.batch)
        } else {
            b.batch
        };
        let ratio = [0usize, 1, mc];

        let mut results: Vec<Vec<f64>> = self
            .outputs
            .iter()
            .map(|o| vec![0.0; b.lanes(o.level)])
            .collect();

        ws.slots.resize_with(self.slot_levels.len(), Vec::new);
        for (buf, &lvl) in ws.slots.iter_mut().zip(&self.slot_levels) {
            let need = if lvl == 0 { 1 } else { chunk_b * ratio[lvl as usize] };
            if buf.len() < need {
                buf.resize(need, 0.0);
            }
        }

        let mut start = 0;
        let mut first = true;
        while start < b.batch {
            let cb = chunk_b.min(b.batch - start);
            let lanes = [1usize, cb, cb * mc];
            let offset = [0usize, start, start * mc];
            let ctx = Ctx {
                lanes,
                offset,
                data: &b.data,
            };
            for ins in &self.instrs {
                run_instr(ins, &ctx, &mut ws.slots);
            }
            for (o, res) in self.outputs.iter().zip(results.iter_mut()) {
                let src = ctx.src(o.src, o.level, &ws.slots);
                if o.level == 0 {
                    let v = src.first();
                    if o.accumulate {
                        res[0] += v;
                    } else if first {
                        res[0] = v;
                    }
                } else {
                    let off = offset[o.level as usize];
                    let dst = &mut res[off..off + lanes[o.level as usize]];
                    zip1(dst, src, |d, x| *d = x);
                }
            }
            first = false;
            start += cb;
        }
        Ok(results)
    }
}

/// Whether a shared node is a sum over lanes, and whether its operation is
/// linear in such operands (so chunk partial results can be added up).
fn lane_sum_rule(node: &super::graph::Node, reduced: &[bool], level: impl Fn(NodeId) -> u8) -> (bool, bool) {
    let r = |p: NodeId| reduced[p as usize];
    if node.level.0 > 0 {
        let mut any = false;
        node.op.for_each_parent(|p| any |= r(p));
        return (false, !any);
    }
    match &node.op {
        Op::Reduce(a) if level(*a) > 0 => (true, true),
        Op::LogSumExp(a) if level(*a) > 0 => (true, false),
        Op::Add(a, b) | Op::Sub(a, b) => (r(*a) || r(*b), r(*a) == r(*b)),
        Op::Neg(a) | Op::Scale(a, _) | Op::Reduce(a) => (r(*a), true),
        Op::Mul(a, b) => (r(*a) || r(*b), !(r(*a) && r(*b))),
        Op::Div(a, b) => (r(*a) || r(*b), !r(*b)),
        Op::Sum(xs) => {
            let cnt = xs.iter().filter(|&&x| r(x)).count();
            (cnt > 0, cnt == 0 || cnt == xs.len())
        }
        Op::Dot(ws, xs) => {
            let mut any = false;
            let mut all = true;
            let mut ok = true;
            for (&w, &x) in ws.iter().zip(xs.iter()) {
                ok &= !(r(w) && r(x));
                let t = r(w) || r(x);
                any |= t;
                all &= t;
            }
            (any, ok && (!any || all))
        }
        other => {
            let mut any = false;
            other.for_each_parent(|p| any |= r(p));
            (any, !any)
        }
    }
}

struct Ctx<'a> {
    lanes: [usize; MAX_LEVELS],
    offset: [usize; MAX_LEVELS],
    data: &'a [Option<Vec<f64>>],
}

#[derive(Clone, Copy)]
enum Src<'a> {
    Slice(&'a [f64]),
    Scalar(f64),
    /// Each value repeated over a contiguous group of the given size.
    Repeat(&'a [f64], usize),
}

impl Src<'_> {
    fn first(self) -> f64 {
        match self {
            Src::Slice(s) | Src::Repeat(s, _) => s[0],
            Src::Scalar(x) => x,
        }
    }
}

impl<'a> Ctx<'a> {
    fn raw(&self, op: Operand, slots: &'a [Vec<f64>]) -> &'a [f64] {
        let l = op.level as usize;
        match op.loc {
            Loc::Slot(s) => &slots[s as usize][..self.lanes[l]],
            Loc::Input(i) => {
                let d = self.data[i as usize].as_deref().expect("checked bound");
                &d[self.offset[l]..self.offset[l] + self.lanes[l]]
            }
            Loc::Const(_) => unreachable!("constants have no buffer"),
        }
    }

    /// Operand viewed at the lane layout of `level`.
    fn src(&self, op: Operand, level: u8, slots: &'a [Vec<f64>]) -> Src<'a> {
        if let Loc::Const(c) = op.loc {
            return Src::Scalar(c);
        }
        let raw = self.raw(op, slots);
        if op.level == 0 {
            Src::Scalar(raw[0])
        } else if op.level == level {
            Src::Slice(raw)
        } else {
            debug_assert!(op.level < level);
            Src::Repeat(raw, self.lanes[level as usize] / self.lanes[op.level as usize])
        }
    }
}

fn run_instr(ins: &Instr, ctx: &Ctx<'_>, slots: &mut [Vec<f64>]) {
    let n = ctx.lanes[ins.level as usize];
    let mut out = std::mem::take(&mut slots[ins.out as usize]);
    {
        let o = &mut out[..n];
        let s: &[Vec<f64>] = slots;
        let arg = |i: usize| ctx.src(ins.args[i], ins.level, s);
        match ins.kind {
            Kind::Add => zip2(o, arg(0), arg(1), |o, a, b| *o = a + b),
            Kind::Sub => zip2(o, arg(0), arg(1), |o, a, b| *o = a - b),
            Kind::Mul => zip2(o, arg(0), arg(1), |o, a, b| *o = a * b),
            Kind::Div => zip2(o, arg(0), arg(1), |o, a, b| *o = a / b),
            Kind::Neg => zip1(o, arg(0), |o, a| *o = -a),
            Kind::Scale(c) => zip1(o, arg(0), |o, a| *o = c * a),
            Kind::Exp => zip1(o, arg(0), |o, a| *o = a.exp()),
            Kind::Log => zip1(o, arg(0), |o, a| *o = a.ln()),
            Kind::Tanh => zip1(o, arg(0), |o, a| *o = a.tanh()),
            Kind::TanhPrime => zip1(o, arg(0), |o, t| *o = 1.0 - t * t),
            Kind::Sigmoid => zip1(o, arg(0), |o, a| *o = sigmoid(a)),
            Kind::Softplus => zip1(o, arg(0), |o, a| *o = softplus(a)),
            Kind::Square => zip1(o, arg(0), |o, a| *o = a * a),
            Kind::Sqrt => zip1(o, arg(0), |o, a| *o = a.sqrt()),
            Kind::Sum => {
                zip1(o, arg(0), |o, a| *o = a);
                for i in 1..ins.args.len() {
                    zip1(o, arg(i), |o, a| *o += a);
                }
            }
            Kind::Dot => {
                let m = ins.args.len() / 2;
                zip2(o, arg(0), arg(m), |o, a, b| *o = a * b);
                for i in 1..m {
                    zip2(o, arg(i), arg(m + i), |o, a, b| *o += a * b);
                }
            }
            Kind::Reduce => {
                let a = ctx.src(ins.args[0], ins.from, s);
                let k = ctx.lanes[ins.from as usize] / n;
                reduce_groups(o, a, k, |g| g.iter().sum(), |x| x * k as f64);
            }
            Kind::ReduceMul => {
                let a = ctx.src(ins.args[0], ins.from, s);
                let b = ctx.src(ins.args[1], ins.from, s);
                let k = ctx.lanes[ins.from as usize] / n;
                reduce_product(o, a, b, k);
            }
            Kind::LogSumExp => {
                let a = ctx.src(ins.args[0], ins.from, s);
                let k = ctx.lanes[ins.from as usize] / n;
                reduce_groups(o, a, k, logsumexp, |x| x + (k as f64).ln());
            }
        }
    }
    slots[ins.out as usize] = out;
}

/// Reduces consecutive groups of `k` lanes of `a` into `out`; `uniform`
/// handles a group of `k` equal values.
fn reduce_groups(
    out: &mut [f64],
    a: Src<'_>,
    k: usize,
    group: impl Fn(&[f64]) -> f64,
    uniform: impl Fn(f64) -> f64,
) {
    match a {
        Src::Slice(raw) => {
            for (dst, g) in out.iter_mut().zip(raw.chunks(k)) {
                *dst = group(g);
            }
        }
        Src::Scalar(x) => out.fill(uniform(x)),
        Src::Repeat(raw, r) => {
            let mut buf = vec![0.0; k];
            for (gi, dst) in out.iter_mut().enumerate() {
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = raw[(gi * k + j) / r];
                }
                *dst = group(&buf);
            }
        }
    }
}

/// `out[g] = sum_j a[g k + j] b[g k + j]`.
fn reduce_product(out: &mut [f64], a: Src<'_>, b: Src<'_>, k: usize) {
    match (a, b) {
        (Src::Slice(a), Src::Slice(b)) => {
            for ((dst, ga), gb) in out.iter_mut().zip(a.chunks(k)).zip(b.chunks(k)) {
                *dst = ga.iter().zip(gb).map(|(x, y)| x * y).sum();
            }
        }
        // One factor constant over each group.
        (Src::Repeat(a, r), Src::Slice(b)) | (Src::Slice(b), Src::Repeat(a, r)) if r == k => {
            for ((dst, &x), gb) in out.iter_mut().zip(a).zip(b.chunks(k)) {
                *dst = x * gb.iter().sum::<f64>();
            }
        }
        (Src::Scalar(x), Src::Slice(b)) | (Src::Slice(b), Src::Scalar(x)) => {
            for (dst, gb) in out.iter_mut().zip(b.chunks(k)) {
                *dst = x * gb.iter().sum::<f64>();
            }
        }
        (a, b) => {
            let at = |s: Src<'_>, i: usize| match s {
                Src::Slice(v) => v[i],
                Src::Scalar(x) => x,
                Src::Repeat(v, r) => v[i / r],
            };
            for (g, dst) in out.iter_mut().enumerate() {
                *dst = (g * k..(g + 1) * k).map(|i| at(a, i) * at(b, i)).sum();
            }
        }
    }
}

pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

#[inline(always)]
fn zip1(out: &mut [f64], a: Src<'_>, f: impl Fn(&mut f64, f64)) {
    match a {
        Src::Slice(a) => {
            for (o, &x) in out.iter_mut().zip(a) {
                f(o, x);
            }
        }
        Src::Scalar(x) => {
            for o in out {
                f(o, x);
            }
        }
        Src::Repeat(a, k) => {
            for (oc, &x) in out.chunks_mut(k).zip(a) {
                for o in oc {
                    f(o, x);
                }
            }
        }
    }
}

#[inline(always)]
fn zip2(out: &mut [f64], a: Src<'_>, b: Src<'_>, f: impl Fn(&mut f64, f64, f64)) {
    match (a, b) {
        (Src::Slice(a), Src::Slice(b)) => {
            for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
                f(o, x, y);
            }
        }
        (Src::Scalar(x), b) => zip1(out, b, |o, y| f(o, x, y)),
        (a, Src::Scalar(y)) => zip1(out, a, |o, x| f(o, x, y)),
        (Src::Repeat(a, k), Src::Slice(b)) => {
            for ((oc, bc), &x) in out.chunks_mut(k).zip(b.chunks(k)).zip(a) {
                for (o, &y) in oc.iter_mut().zip(bc) {
                    f(o, x, y);
                }
            }
        }
        (Src::Slice(a), Src::Repeat(b, k)) => {
            for ((oc, ac), &y) in out.chunks_mut(k).zip(a.chunks(k)).zip(b) {
                for (o, &x) in oc.iter_mut().zip(ac) {
                    f(o, x, y);
                }
            }
        }
        (Src::Repeat(a, ka), Src::Repeat(b, kb)) => {
            for (i, o) in out.iter_mut().enumerate() {
                f(o, a[i / ka], b[i / kb]);
            }
        }
    }
}
