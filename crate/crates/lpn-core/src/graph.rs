//! Scalar computation tape with reverse-mode differentiation, including
//! gradients of gradients.
//!
//! Nodes live in an append-only arena; every operation references strictly
//! earlier nodes, so insertion order is a topological order and one reverse
//! sweep computes adjoints. Two backward flavors exist:
//!
//! * [`Tape::gradient`] — accumulates adjoint *values*; nothing is recorded.
//! * [`Tape::gradient_nodes`] — emits the adjoints as new tape nodes. Every
//!   backward rule is itself expressed in tape operations, so the returned
//!   gradients can be combined into new scalars and differentiated again.
//!
//! Differentiation depth is tracked per node: forward nodes are order 0,
//! nodes emitted while deriving an order-k scalar are order k+1, and nodes
//! built from existing nodes inherit the maximum parent order. Requesting a
//! pass that would exceed order 2 fails with
//! [`GraphError::UnsupportedOrder`] — second derivatives are supported,
//! third are not.
//!
//! Alongside the scalar primitives the tape has three fused reductions —
//! [`Tape::dot`], [`Tape::dot_sq`], and the `PairSum`/`PairSumSq` nodes the
//! backward pass emits — which keep gradient graphs of wide dense layers at
//! unit granularity instead of weight granularity. They are conveniences,
//! not a tensor IR: each is still a single scalar-valued node with a
//! registered derivative in tape language.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;
use crate::gauss::{std_normal_cdf, std_normal_pdf};

/// Handle to a tape node. Only meaningful for the tape that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Errors from tape construction and differentiation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphError {
    /// A differentiation pass would produce derivatives beyond order two.
    UnsupportedOrder { attempted: u8 },
    /// A node id does not belong to this tape.
    InvalidNode { id: u32, len: u32 },
    /// A fused reduction was called with operand lists of different lengths.
    ReductionShape { left: usize, right: usize },
}

impl core::fmt::Display for GraphError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            GraphError::UnsupportedOrder { attempted } => write!(
                f,
                "derivative order {attempted} is not supported (the tape differentiates at most twice)"
            ),
            GraphError::InvalidNode { id, len } => {
                write!(f, "node id {id} out of range for tape of {len} nodes")
            }
            GraphError::ReductionShape { left, right } => {
                write!(f, "reduction operands disagree in length: {left} vs {right}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for GraphError {}

/// Smoothing constant for `|x| ≈ √(x² + ε²)`; keeps the heteroscedastic loss
/// differentiable at zero residual.
pub const ABS_SMOOTH_EPSILON: f64 = 1e-8;

#[derive(Clone, Copy)]
enum Op {
    Leaf,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    Exp(u32),
    Ln(u32),
    Sqrt(u32),
    /// `x^k` for constant `k`.
    Powf(u32, f64),
    NormPdf(u32),
    NormCdf(u32),
    /// `x > 0 ? x : c·x`.
    LeakyRelu(u32, f64),
    /// Derivative of [`Op::LeakyRelu`]: `x > 0 ? 1 : c`, with the value baked
    /// in at creation. Its own derivative is zero everywhere it is defined.
    LeakyStep(u32),
    /// `max(x, c)` for constant `c`.
    MaxConst(u32, f64),
    /// Derivative of [`Op::MaxConst`]: `x > c ? 1 : 0`, value baked in at
    /// creation; derivative zero.
    StepConst(u32),
    AddConst(u32),
    MulConst(u32, f64),
    /// `Σᵢ a[i]·value[b₀+i]` where `a` is a side list and `b₀` a contiguous
    /// block start.
    Dot { list: u32, start: u32 },
    /// `Σᵢ value[w₀+i]²·a[i]`: squared contiguous block against a side list.
    DotSq { list: u32, start: u32 },
    /// `Σ value[g]·value[o]` over a side pair list; emitted by backward.
    PairSum(u32),
    /// `Σ value[g]·value[o]²` over a side pair list; emitted by backward.
    PairSumSq(u32),
}

struct Node {
    value: f64,
    op: Op,
}

/// Pending adjoint contributions for one node during a backward sweep.
enum Pending {
    None,
    One(Contrib),
    Many(Vec<Contrib>),
}

#[derive(Clone, Copy)]
enum Contrib {
    /// An already-materialized node carrying the full contribution.
    Direct(u32),
    /// Product `value[g]·value[o]`.
    Pair(u32, u32),
    /// Product `value[g]·value[o]²`.
    PairSq(u32, u32),
}

impl Pending {
    #[inline]
    fn push(&mut self, c: Contrib) {
        match self {
            Pending::None => *self = Pending::One(c),
            Pending::One(first) => *self = Pending::Many(vec![*first, c]),
            Pending::Many(v) => v.push(c),
        }
    }
}

/// Append-only scalar computation tape. See the module docs for semantics.
pub struct Tape {
    nodes: Vec<Node>,
    orders: Vec<u8>,
    lists: Vec<Box<[u32]>>,
    pairs: Vec<Box<[(u32, u32)]>>,
    /// Order stamped on nodes created while a recording backward pass runs.
    emit_order: u8,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            orders: Vec::new(),
            lists: Vec::new(),
            pairs: Vec::new(),
            emit_order: 0,
        }
    }

    pub fn with_capacity(nodes: usize) -> Self {
        let mut t = Self::new();
        t.nodes.reserve(nodes);
        t.orders.reserve(nodes);
        t
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops all nodes but keeps allocations for reuse.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.orders.clear();
        self.lists.clear();
        self.pairs.clear();
        self.emit_order = 0;
    }

    /// Current value of a node.
    pub fn value(&self, id: NodeId) -> f64 {
        self.nodes[id.index()].value
    }

    fn push(&mut self, value: f64, op: Op) -> NodeId {
        let order = match parents_of(&op) {
            ParentIter::None => self.emit_order,
            ParentIter::One(a) => self.emit_order.max(self.orders[a as usize]),
            ParentIter::Two(a, b) => self
                .emit_order
                .max(self.orders[a as usize])
                .max(self.orders[b as usize]),
            // Fused ops appear only via builder methods which stamp the max
            // operand order themselves; fall back to emit order here.
            ParentIter::Fused => self.emit_order,
        };
        self.push_with_order(value, op, order)
    }

    fn push_with_order(&mut self, value: f64, op: Op, order: u8) -> NodeId {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node { value, op });
        self.orders.push(order.max(self.emit_order));
        NodeId(id)
    }

    /// A leaf holding a constant or input value.
    pub fn leaf(&mut self, value: f64) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Leaves for a whole slice, allocated contiguously (so they can serve as
    /// the block side of [`Tape::dot`] / [`Tape::dot_sq`]).
    pub fn leaves(&mut self, values: &[f64]) -> Vec<NodeId> {
        values.iter().map(|&v| self.leaf(v)).collect()
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(self.nodes[a.index()].value + self.nodes[b.index()].value, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(self.nodes[a.index()].value - self.nodes[b.index()].value, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(self.nodes[a.index()].value * self.nodes[b.index()].value, Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(self.nodes[a.index()].value / self.nodes[b.index()].value, Op::Div(a.0, b.0))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.push(-self.nodes[a.index()].value, Op::Neg(a.0))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(fmath::exp(self.nodes[a.index()].value), Op::Exp(a.0))
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.push(fmath::ln(self.nodes[a.index()].value), Op::Ln(a.0))
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.push(fmath::sqrt(self.nodes[a.index()].value), Op::Sqrt(a.0))
    }

    /// `x^k` for a constant exponent.
    pub fn powf(&mut self, a: NodeId, k: f64) -> NodeId {
        self.push(fmath::powf(self.nodes[a.index()].value, k), Op::Powf(a.0, k))
    }

    /// Standard normal density of the operand.
    pub fn norm_pdf(&mut self, a: NodeId) -> NodeId {
        self.push(std_normal_pdf(self.nodes[a.index()].value), Op::NormPdf(a.0))
    }

    /// Standard normal CDF of the operand.
    pub fn norm_cdf(&mut self, a: NodeId) -> NodeId {
        self.push(std_normal_cdf(self.nodes[a.index()].value), Op::NormCdf(a.0))
    }

    /// Pointwise leaky relu (the deterministic activation, not the moment
    /// filter). Differentiable once; its slope-switch derivative is constant.
    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let x = self.nodes[a.index()].value;
        let v = if x > 0.0 { x } else { slope * x };
        self.push(v, Op::LeakyRelu(a.0, slope))
    }

    /// `max(x, c)`.
    pub fn max_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let x = self.nodes[a.index()].value;
        self.push(if x > c { x } else { c }, Op::MaxConst(a.0, c))
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        self.push(self.nodes[a.index()].value + c, Op::AddConst(a.0))
    }

    pub fn mul_const(&mut self, a: NodeId, c: f64) -> NodeId {
        self.push(self.nodes[a.index()].value * c, Op::MulConst(a.0, c))
    }

    /// Smoothed absolute value `√(x² + ε²)` with [`ABS_SMOOTH_EPSILON`];
    /// composed from primitives, so it differentiates to any supported order.
    pub fn abs_smooth(&mut self, a: NodeId) -> NodeId {
        let sq = self.mul(a, a);
        let shifted = self.add_const(sq, ABS_SMOOTH_EPSILON * ABS_SMOOTH_EPSILON);
        self.sqrt(shifted)
    }

    /// Sum of a slice of nodes (empty slice yields a zero leaf).
    pub fn sum(&mut self, xs: &[NodeId]) -> NodeId {
        match xs.split_first() {
            None => self.leaf(0.0),
            Some((&first, rest)) => {
                let mut acc = first;
                for &x in rest {
                    acc = self.add(acc, x);
                }
                acc
            }
        }
    }

    fn contiguous_start(ids: &[NodeId]) -> Option<u32> {
        let first = ids.first()?.0;
        for (i, id) in ids.iter().enumerate() {
            if id.0 != first + i as u32 {
                return None;
            }
        }
        Some(first)
    }

    fn max_order(&self, ids: &[NodeId]) -> u8 {
        ids.iter().map(|id| self.orders[id.index()]).max().unwrap_or(0)
    }

    /// Fused inner product `Σᵢ a[i]·b[i]`.
    ///
    /// One operand side must be a contiguous id block (the model builders
    /// allocate parameter rows contiguously for exactly this reason); the
    /// other side may be arbitrary ids. When neither side is contiguous the
    /// call falls back to an equivalent mul/add chain — same value, same
    /// derivatives, just more nodes.
    pub fn dot(&mut self, a: &[NodeId], b: &[NodeId]) -> Result<NodeId, GraphError> {
        if a.len() != b.len() {
            return Err(GraphError::ReductionShape { left: a.len(), right: b.len() });
        }
        if a.is_empty() {
            return Ok(self.leaf(0.0));
        }
        let (list_side, start) = if let Some(s) = Self::contiguous_start(b) {
            (a, s)
        } else if let Some(s) = Self::contiguous_start(a) {
            (b, s)
        } else {
            let mut acc = self.mul(a[0], b[0]);
            for i in 1..a.len() {
                let t = self.mul(a[i], b[i]);
                acc = self.add(acc, t);
            }
            return Ok(acc);
        };
        let value: f64 = list_side
            .iter()
            .enumerate()
            .map(|(i, id)| self.nodes[id.index()].value * self.nodes[start as usize + i].value)
            .sum();
        let order = self
            .max_order(list_side)
            .max(self.max_order(a))
            .max(self.max_order(b));
        let list = self.intern_list(list_side);
        Ok(self.push_with_order(value, Op::Dot { list, start }, order))
    }

    /// Fused squared-weight reduction `Σᵢ w[i]²·a[i]` — the variance path of
    /// a dense layer. `w` must be a contiguous id block.
    pub fn dot_sq(&mut self, a: &[NodeId], w: &[NodeId]) -> Result<NodeId, GraphError> {
        if a.len() != w.len() {
            return Err(GraphError::ReductionShape { left: a.len(), right: w.len() });
        }
        if a.is_empty() {
            return Ok(self.leaf(0.0));
        }
        let Some(start) = Self::contiguous_start(w) else {
            // Fallback chain: Σ (wᵢ·wᵢ)·aᵢ.
            let mut acc = {
                let ww = self.mul(w[0], w[0]);
                self.mul(ww, a[0])
            };
            for i in 1..a.len() {
                let ww = self.mul(w[i], w[i]);
                let t = self.mul(ww, a[i]);
                acc = self.add(acc, t);
            }
            return Ok(acc);
        };
        let value: f64 = a
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let wv = self.nodes[start as usize + i].value;
                wv * wv * self.nodes[id.index()].value
            })
            .sum();
        let order = self.max_order(a).max(self.max_order(w));
        let list = self.intern_list(a);
        Ok(self.push_with_order(value, Op::DotSq { list, start }, order))
    }

    fn intern_list(&mut self, ids: &[NodeId]) -> u32 {
        // Consecutive reductions over one layer share their operand list
        // (every unit reads the same activations); reuse it instead of
        // re-interning per unit.
        if let Some(last) = self.lists.last() {
            if last.len() == ids.len() && last.iter().zip(ids).all(|(&a, b)| a == b.0) {
                return (self.lists.len() - 1) as u32;
            }
        }
        let idx = self.lists.len() as u32;
        self.lists.push(ids.iter().map(|id| id.0).collect());
        idx
    }

    fn check(&self, id: NodeId) -> Result<(), GraphError> {
        if id.index() < self.nodes.len() {
            Ok(())
        } else {
            Err(GraphError::InvalidNode { id: id.0, len: self.nodes.len() as u32 })
        }
    }

    fn pass_order(&self, output: NodeId) -> Result<u8, GraphError> {
        let attempted = self.orders[output.index()] + 1;
        if attempted > 2 {
            Err(GraphError::UnsupportedOrder { attempted })
        } else {
            Ok(attempted)
        }
    }

    /// Marks every node forward-reachable from `seeds`.
    fn descendants(&self, seeds: &[NodeId], upto: usize) -> Vec<bool> {
        let mut desc = vec![false; upto + 1];
        for s in seeds {
            if s.index() <= upto {
                desc[s.index()] = true;
            }
        }
        for i in 0..=upto {
            if desc[i] {
                continue;
            }
            let hit = match self.nodes[i].op {
                Op::Leaf => false,
                Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                    desc[a as usize] || desc[b as usize]
                }
                Op::Neg(a)
                | Op::Exp(a)
                | Op::Ln(a)
                | Op::Sqrt(a)
                | Op::Powf(a, _)
                | Op::NormPdf(a)
                | Op::NormCdf(a)
                | Op::LeakyRelu(a, _)
                | Op::LeakyStep(a)
                | Op::MaxConst(a, _)
                | Op::StepConst(a)
                | Op::AddConst(a)
                | Op::MulConst(a, _) => desc[a as usize],
                Op::Dot { list, start } | Op::DotSq { list, start } => {
                    let ids = &self.lists[list as usize];
                    ids.iter().any(|&x| desc[x as usize])
                        || (0..ids.len()).any(|k| desc[start as usize + k])
                }
                Op::PairSum(p) | Op::PairSumSq(p) => self.pairs[p as usize]
                    .iter()
                    .any(|&(g, o)| desc[g as usize] || desc[o as usize]),
            };
            desc[i] = hit;
        }
        desc
    }

    /// First-order gradient values of `output` with respect to `wrt`.
    ///
    /// Nothing is recorded; inputs the output does not depend on yield an
    /// exact `0.0`. Counts as a differentiation pass for the order limit.
    pub fn gradient(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<f64>, GraphError> {
        self.check(output)?;
        for id in wrt {
            self.check(*id)?;
        }
        self.pass_order(output)?;
        let upto = output.index();
        let mut adj = vec![0.0f64; upto + 1];
        adj[upto] = 1.0;
        for i in (0..=upto).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            // Copy the op out to release the borrow on self.nodes.
            let op = self.nodes[i].op;
            self.value_contributions(op, i, g, &mut adj);
        }
        Ok(wrt.iter().map(|id| if id.index() <= upto { adj[id.index()] } else { 0.0 }).collect())
    }

    /// Alias of [`Tape::gradient`] for scalars assembled from first-order
    /// gradient nodes: the second-order entry point. The order bookkeeping is
    /// the same — a scalar already two derivatives deep is rejected.
    pub fn gradient_of_gradient(
        &mut self,
        scalar_of_grads: NodeId,
        wrt: &[NodeId],
    ) -> Result<Vec<f64>, GraphError> {
        self.gradient(scalar_of_grads, wrt)
    }

    #[inline]
    fn value_contributions(&self, op: Op, i: usize, g: f64, adj: &mut [f64]) {
        let val = |idx: u32| self.nodes[idx as usize].value;
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                adj[a as usize] += g;
                adj[b as usize] += g;
            }
            Op::Sub(a, b) => {
                adj[a as usize] += g;
                adj[b as usize] -= g;
            }
            Op::Mul(a, b) => {
                adj[a as usize] += g * val(b);
                adj[b as usize] += g * val(a);
            }
            Op::Div(a, b) => {
                let bv = val(b);
                adj[a as usize] += g / bv;
                adj[b as usize] -= g * val(a) / (bv * bv);
            }
            Op::Neg(a) => adj[a as usize] -= g,
            Op::Exp(a) => adj[a as usize] += g * self.nodes[i].value,
            Op::Ln(a) => adj[a as usize] += g / val(a),
            Op::Sqrt(a) => adj[a as usize] += g * 0.5 / self.nodes[i].value,
            Op::Powf(a, k) => {
                adj[a as usize] += g * k * fmath::powf(val(a), k - 1.0);
            }
            Op::NormPdf(a) => {
                adj[a as usize] -= g * val(a) * self.nodes[i].value;
            }
            Op::NormCdf(a) => adj[a as usize] += g * std_normal_pdf(val(a)),
            Op::LeakyRelu(a, c) => {
                adj[a as usize] += g * if val(a) > 0.0 { 1.0 } else { c };
            }
            Op::LeakyStep(_) | Op::StepConst(_) => {}
            Op::MaxConst(a, c) => {
                if val(a) > c {
                    adj[a as usize] += g;
                }
            }
            Op::AddConst(a) => adj[a as usize] += g,
            Op::MulConst(a, c) => adj[a as usize] += g * c,
            Op::Dot { list, start } => {
                let ids = &self.lists[list as usize];
                for (k, &aid) in ids.iter().enumerate() {
                    let bid = start as usize + k;
                    adj[aid as usize] += g * self.nodes[bid].value;
                    adj[bid] += g * val(aid);
                }
            }
            Op::DotSq { list, start } => {
                let ids = &self.lists[list as usize];
                for (k, &aid) in ids.iter().enumerate() {
                    let wid = start as usize + k;
                    let wv = self.nodes[wid].value;
                    adj[aid as usize] += g * wv * wv;
                    adj[wid] += g * 2.0 * wv * val(aid);
                }
            }
            Op::PairSum(p) => {
                for &(gi, oi) in self.pairs[p as usize].iter() {
                    adj[gi as usize] += g * val(oi);
                    adj[oi as usize] += g * val(gi);
                }
            }
            Op::PairSumSq(p) => {
                for &(gi, oi) in self.pairs[p as usize].iter() {
                    let ov = val(oi);
                    adj[gi as usize] += g * ov * ov;
                    adj[oi as usize] += g * 2.0 * ov * val(gi);
                }
            }
        }
    }

    /// First-order gradients of `output` with respect to `wrt`, emitted as
    /// tape nodes so they can be combined and differentiated once more.
    ///
    /// Emission is pruned to the forward cone of `wrt`: adjoints are only
    /// materialized for nodes the requested inputs can actually influence.
    /// Inputs outside the output's dependency cone come back as zero leaves.
    pub fn gradient_nodes(
        &mut self,
        output: NodeId,
        wrt: &[NodeId],
    ) -> Result<Vec<NodeId>, GraphError> {
        self.check(output)?;
        for id in wrt {
            self.check(*id)?;
        }
        let pass = self.pass_order(output)?;
        let upto = output.index();
        let desc = self.descendants(wrt, upto);

        let prev_emit = self.emit_order;
        self.emit_order = pass;
        let mut pending: Vec<Pending> = Vec::with_capacity(upto + 1);
        pending.resize_with(upto + 1, || Pending::None);
        let seed = self.leaf(1.0);
        pending[upto] = Pending::One(Contrib::Direct(seed.0));

        for i in (0..=upto).rev() {
            let slot = core::mem::replace(&mut pending[i], Pending::None);
            let adj = match self.materialize(slot) {
                Some(id) => id,
                None => continue,
            };
            self.record_adjoint(i, adj, &desc, &mut pending);
            // Re-store the finalized adjoint for wrt lookup.
            pending[i] = Pending::One(Contrib::Direct(adj.0));
        }

        let result = wrt
            .iter()
            .map(|id| match pending.get(id.index()) {
                Some(Pending::One(Contrib::Direct(n))) => NodeId(*n),
                _ => self.leaf(0.0),
            })
            .collect();
        self.emit_order = prev_emit;
        Ok(result)
    }

    /// Turns accumulated contributions into a single node.
    fn materialize(&mut self, slot: Pending) -> Option<NodeId> {
        match slot {
            Pending::None => None,
            Pending::One(c) => Some(self.materialize_one(c)),
            Pending::Many(cs) => {
                let mut plain: Vec<(u32, u32)> = Vec::new();
                let mut sq: Vec<(u32, u32)> = Vec::new();
                let mut direct: Vec<u32> = Vec::new();
                for c in cs {
                    match c {
                        Contrib::Direct(n) => direct.push(n),
                        Contrib::Pair(g, o) => plain.push((g, o)),
                        Contrib::PairSq(g, o) => sq.push((g, o)),
                    }
                }
                let mut parts: Vec<NodeId> = Vec::with_capacity(3);
                if !plain.is_empty() {
                    parts.push(self.push_pairs(plain, false));
                }
                if !sq.is_empty() {
                    parts.push(self.push_pairs(sq, true));
                }
                for n in direct {
                    parts.push(NodeId(n));
                }
                let mut acc = parts[0];
                for p in &parts[1..] {
                    acc = self.add(acc, *p);
                }
                Some(acc)
            }
        }
    }

    fn materialize_one(&mut self, c: Contrib) -> NodeId {
        match c {
            Contrib::Direct(n) => NodeId(n),
            Contrib::Pair(g, o) => self.mul(NodeId(g), NodeId(o)),
            Contrib::PairSq(g, o) => {
                let osq = self.mul(NodeId(o), NodeId(o));
                self.mul(NodeId(g), osq)
            }
        }
    }

    fn push_pairs(&mut self, pairs: Vec<(u32, u32)>, squared: bool) -> NodeId {
        let value: f64 = pairs
            .iter()
            .map(|&(g, o)| {
                let ov = self.nodes[o as usize].value;
                self.nodes[g as usize].value * if squared { ov * ov } else { ov }
            })
            .sum();
        let order = pairs
            .iter()
            .map(|&(g, o)| self.orders[g as usize].max(self.orders[o as usize]))
            .max()
            .unwrap_or(0);
        let idx = self.pairs.len() as u32;
        self.pairs.push(pairs.into_boxed_slice());
        let op = if squared { Op::PairSumSq(idx) } else { Op::PairSum(idx) };
        self.push_with_order(value, op, order)
    }

    /// Emits the backward rule of node `i` given its adjoint node, pushing
    /// contributions onto descendants of the differentiation targets only.
    fn record_adjoint(&mut self, i: usize, adj: NodeId, desc: &[bool], pending: &mut [Pending]) {
        macro_rules! want {
            ($p:expr) => {
                desc[$p as usize]
            };
        }
        let op = self.nodes[i].op;
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if want!(a) {
                    pending[a as usize].push(Contrib::Direct(adj.0));
                }
                if want!(b) {
                    pending[b as usize].push(Contrib::Direct(adj.0));
                }
            }
            Op::Sub(a, b) => {
                if want!(a) {
                    pending[a as usize].push(Contrib::Direct(adj.0));
                }
                if want!(b) {
                    let n = self.neg(adj);
                    pending[b as usize].push(Contrib::Direct(n.0));
                }
            }
            Op::Mul(a, b) => {
                if want!(a) {
                    pending[a as usize].push(Contrib::Pair(adj.0, b));
                }
                if want!(b) {
                    pending[b as usize].push(Contrib::Pair(adj.0, a));
                }
            }
            Op::Div(a, b) => {
                if want!(a) {
                    let n = self.div(adj, NodeId(b));
                    pending[a as usize].push(Contrib::Direct(n.0));
                }
                if want!(b) {
                    // −g·(a/b)/b = −g·self/b
                    let t = self.mul(adj, NodeId(i as u32));
                    let t = self.div(t, NodeId(b));
                    let n = self.neg(t);
                    pending[b as usize].push(Contrib::Direct(n.0));
                }
            }
            Op::Neg(a) => {
                if want!(a) {
                    let n = self.neg(adj);
                    pending[a as usize].push(Contrib::Direct(n.0));
                }
            }
            Op::Exp(a) => {
                if want!(a) {
                    pending[a as usize].push(Contrib::Pair(adj.0, i as u32));
                }
            }
            Op::Ln(a) => {
                if want!(a) {
                    let n = self.div(adj, NodeId(a));
                    pending[a as usize].push(Contrib::Direct(n.0));
                }
            }
            Op::Sqrt(a) => {
                if want!(a) {
                    // g / (2·√x) = 0.5·g / self
                    let half = self.mul_const(adj, 0.5);
                    let n = self.div(half, NodeId(i as u32));
                    pending[a as usize].push(Contrib::Direct(n.0));
                }
            }
            Op::Powf(a, k) => {
                if want!(a) {
                    let pw = self.powf(NodeId(a), k - 1.0);
                    let t = self.mul(adj, pw);
                    let n = self.mul_const(t, k);
                    pending[a as usize].push(Contrib::Direct(n.0));
                }
            }
            Op::NormPdf(a) => {
                if want!(a) {
                    // d/dx φ(x) = −x·φ(x)
                    let t = self.mul(NodeId(a), NodeId(i as u32));
                    let t = self.mul(adj, t);
                    let n = self.neg(t);
                    pending[a as usize].push(Contrib::Direct(n.0));
                }
            }
            Op::NormCdf(a) => {
                if want!(a) {
                    let pdf = self.norm_pdf(NodeId(a));
                    pending[a as usize].push(Contrib::Pair(adj.0, pdf.0));
                }
            }
            Op::LeakyRelu(a, c) => {
                if want!(a) {
                    let step = self.push(
                        if self.nodes[a as usize].value > 0.0 { 1.0 } else { c },
                        Op::LeakyStep(a),
                    );
                    pending[a as usize].push(Contrib::Pair(adj.0, step.0));
                }
            }
            Op::LeakyStep(_) | Op::StepConst(_) => {}
            Op::MaxConst(a, c) => {
                if want!(a) {
                    let step = self.push(
                        if self.nodes[a as usize].value > c { 1.0 } else { 0.0 },
                        Op::StepConst(a),
                    );
                    pending[a as usize].push(Contrib::Pair(adj.0, step.0));
                }
            }
            Op::AddConst(a) => {
                if want!(a) {
                    pending[a as usize].push(Contrib::Direct(adj.0));
                }
            }
            Op::MulConst(a, c) => {
                if want!(a) {
                    let n = self.mul_const(adj, c);
                    pending[a as usize].push(Contrib::Direct(n.0));
                }
            }
            Op::Dot { list, start } => {
                let ids = core::mem::take(&mut self.lists[list as usize]);
                for (k, &aid) in ids.iter().enumerate() {
                    let bid = start + k as u32;
                    if desc[aid as usize] {
                        pending[aid as usize].push(Contrib::Pair(adj.0, bid));
                    }
                    if desc[bid as usize] {
                        pending[bid as usize].push(Contrib::Pair(adj.0, aid));
                    }
                }
                self.lists[list as usize] = ids;
            }
            Op::DotSq { list, start } => {
                let ids = core::mem::take(&mut self.lists[list as usize]);
                for (k, &aid) in ids.iter().enumerate() {
                    let wid = start + k as u32;
                    if desc[aid as usize] {
                        pending[aid as usize].push(Contrib::PairSq(adj.0, wid));
                    }
                    if desc[wid as usize] {
                        // 2·g·wᵢ·aᵢ
                        let t = self.mul(NodeId(wid), NodeId(aid));
                        let t = self.mul(adj, t);
                        let n = self.mul_const(t, 2.0);
                        pending[wid as usize].push(Contrib::Direct(n.0));
                    }
                }
                self.lists[list as usize] = ids;
            }
            Op::PairSum(p) => {
                let ps = core::mem::take(&mut self.pairs[p as usize]);
                for &(gi, oi) in ps.iter() {
                    if desc[gi as usize] {
                        pending[gi as usize].push(Contrib::Pair(adj.0, oi));
                    }
                    if desc[oi as usize] {
                        pending[oi as usize].push(Contrib::Pair(adj.0, gi));
                    }
                }
                self.pairs[p as usize] = ps;
            }
            Op::PairSumSq(p) => {
                let ps = core::mem::take(&mut self.pairs[p as usize]);
                for &(gi, oi) in ps.iter() {
                    if desc[gi as usize] {
                        pending[gi as usize].push(Contrib::PairSq(adj.0, oi));
                    }
                    if desc[oi as usize] {
                        let t = self.mul(NodeId(gi), NodeId(oi));
                        let t = self.mul(adj, t);
                        let n = self.mul_const(t, 2.0);
                        pending[oi as usize].push(Contrib::Direct(n.0));
                    }
                }
                self.pairs[p as usize] = ps;
            }
        }
    }
}

enum ParentIter {
    None,
    One(u32),
    Two(u32, u32),
    Fused,
}

fn parents_of(op: &Op) -> ParentIter {
    match *op {
        Op::Leaf => ParentIter::None,
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => ParentIter::Two(a, b),
        Op::Neg(a)
        | Op::Exp(a)
        | Op::Ln(a)
        | Op::Sqrt(a)
        | Op::Powf(a, _)
        | Op::NormPdf(a)
        | Op::NormCdf(a)
        | Op::LeakyRelu(a, _)
        | Op::LeakyStep(a)
        | Op::MaxConst(a, _)
        | Op::StepConst(a)
        | Op::AddConst(a)
        | Op::MulConst(a, _) => ParentIter::One(a),
        Op::Dot { .. } | Op::DotSq { .. } | Op::PairSum(_) | Op::PairSumSq(_) => ParentIter::Fused,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_gradient_at_three() {
        let mut t = Tape::new();
        let x = t.leaf(3.0);
        let y = t.mul(x, x);
        let g = t.gradient(y, &[x]).unwrap();
        assert_eq!(g, vec![6.0]);
    }

    #[test]
    fn cdf_derivative_is_pdf() {
        let mut t = Tape::new();
        let x = t.leaf(0.0);
        let y = t.norm_cdf(x);
        let g = t.gradient(y, &[x]).unwrap();
        assert!((g[0] - 0.3989422804014327).abs() < 1e-12);
    }

    #[test]
    fn unreachable_input_gets_exact_zero() {
        let mut t = Tape::new();
        let x = t.leaf(2.0);
        let z = t.leaf(5.0);
        let y = t.exp(x);
        assert_eq!(t.gradient(y, &[z]).unwrap(), vec![0.0]);
        let nodes = t.gradient_nodes(y, &[z]).unwrap();
        assert_eq!(t.value(nodes[0]), 0.0);
    }

    /// Central finite difference of a closure over one coordinate.
    fn fd(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn primitive_gradients_match_finite_differences() {
        // One composite touching every differentiable primitive.
        let build = |vals: &[f64]| -> f64 {
            let mut t = Tape::new();
            let a = t.leaf(vals[0]);
            let b = t.leaf(vals[1]);
            let c = t.leaf(vals[2]);
            let s = t.add(a, b);
            let d = t.sub(s, c);
            let m = t.mul(d, a);
            let q = t.div(m, b);
            let e = t.exp(q);
            let l = t.ln(b);
            let r = t.sqrt(b);
            let p = t.powf(b, 1.7);
            let pdf = t.norm_pdf(a);
            let cdf = t.norm_cdf(d);
            let lk = t.leaky_relu(m, 0.01);
            let mx = t.max_const(q, -0.3);
            let ab = t.abs_smooth(d);
            let ac = t.add_const(p, 0.4);
            let mc = t.mul_const(l, -1.3);
            let parts = [e, l, r, p, pdf, cdf, lk, mx, ab, ac, mc];
            let mut y = t.neg(parts[0]);
            for n in &parts[1..] {
                y = t.add(y, *n);
            }
            let y = t.mul(y, y);
            t.value(y)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let vals = [
                rng.gen_range(-1.5..1.5),
                rng.gen_range(0.2..2.0),
                rng.gen_range(-1.0..1.0),
            ];
            // Analytic gradient from the tape version of the same formula.
            let mut t = Tape::new();
            let ids = t.leaves(&vals);
            let a = ids[0];
            let b = ids[1];
            let c = ids[2];
            let s = t.add(a, b);
            let d = t.sub(s, c);
            let m = t.mul(d, a);
            let q = t.div(m, b);
            let e = t.exp(q);
            let l = t.ln(b);
            let r = t.sqrt(b);
            let p = t.powf(b, 1.7);
            let pdf = t.norm_pdf(a);
            let cdf = t.norm_cdf(d);
            let lk = t.leaky_relu(m, 0.01);
            let mx = t.max_const(q, -0.3);
            let ab = t.abs_smooth(d);
            let ac = t.add_const(p, 0.4);
            let mc = t.mul_const(l, -1.3);
            let parts = [e, l, r, p, pdf, cdf, lk, mx, ab, ac, mc];
            let mut y = t.neg(parts[0]);
            for n in &parts[1..] {
                y = t.add(y, *n);
            }
            let y = t.mul(y, y);
            let grad = t.gradient(y, &[a, b, c]).unwrap();
            for (j, gj) in grad.iter().enumerate() {
                let num = fd(
                    |x| {
                        let mut v = vals;
                        v[j] = x;
                        build(&v)
                    },
                    vals[j],
                    1e-6,
                );
                let scale = gj.abs().max(num.abs()).max(1.0);
                assert!(
                    (gj - num).abs() / scale < 1e-5,
                    "input {j}: analytic {gj} vs fd {num} at {vals:?}"
                );
            }
        }
    }

    #[test]
    fn emitted_gradient_nodes_equal_value_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let vals: Vec<f64> = (0..4).map(|_| rng.gen_range(0.3..1.8)).collect();
            let mut t = Tape::new();
            let xs = t.leaves(&vals);
            let m0 = t.mul(xs[0], xs[1]);
            let m1 = t.mul(xs[2], xs[3]);
            let s = t.add(m0, m1);
            let e = t.exp(xs[0]);
            let q = t.div(s, e);
            let y = t.abs_smooth(q);
            let gv = t.gradient(y, &xs).unwrap();
            let gn = t.gradient_nodes(y, &xs).unwrap();
            for (v, n) in gv.iter().zip(gn.iter()) {
                assert!((v - t.value(*n)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dot_and_dot_sq_match_scalar_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for n in [1usize, 2, 5, 17] {
            let av: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let wv: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();

            // Fused path: w allocated contiguously.
            let mut t = Tape::new();
            let w = t.leaves(&wv);
            // Interleave an unrelated leaf so the `a` side is non-contiguous.
            let a: Vec<NodeId> = av
                .iter()
                .map(|&v| {
                    let _pad = t.leaf(0.0);
                    t.leaf(v)
                })
                .collect();
            let d = t.dot(&a, &w).unwrap();
            let dsq = t.dot_sq(&a, &w).unwrap();

            // Scalar reference on a fresh tape.
            let mut ts = Tape::new();
            let ws = ts.leaves(&wv);
            let as_: Vec<NodeId> = av.iter().map(|&v| ts.leaf(v)).collect();
            let mut ref_dot = ts.leaf(0.0);
            let mut ref_dsq = ts.leaf(0.0);
            for i in 0..n {
                let m = ts.mul(as_[i], ws[i]);
                ref_dot = ts.add(ref_dot, m);
                let ww = ts.mul(ws[i], ws[i]);
                let m2 = ts.mul(ww, as_[i]);
                ref_dsq = ts.add(ref_dsq, m2);
            }
            assert!((t.value(d) - ts.value(ref_dot)).abs() < 1e-12);
            assert!((t.value(dsq) - ts.value(ref_dsq)).abs() < 1e-12);

            // Gradients agree for both operand sides.
            let combined = t.add(d, dsq);
            let ref_combined = ts.add(ref_dot, ref_dsq);
            let mut wrt = a.clone();
            wrt.extend_from_slice(&w);
            let mut wrt_ref = as_.clone();
            wrt_ref.extend_from_slice(&ws);
            let g = t.gradient(combined, &wrt).unwrap();
            let gr = ts.gradient(ref_combined, &wrt_ref).unwrap();
            for (x, y) in g.iter().zip(gr.iter()) {
                assert!((x - y).abs() < 1e-12, "fused {x} vs scalar {y}");
            }
        }
    }

    #[test]
    fn dot_non_contiguous_fallback_still_differentiates() {
        let mut t = Tape::new();
        let a0 = t.leaf(2.0);
        let _gap = t.leaf(0.0);
        let a1 = t.leaf(3.0);
        let b0 = t.leaf(5.0);
        let _gap2 = t.leaf(0.0);
        let b1 = t.leaf(7.0);
        let d = t.dot(&[a0, a1], &[b0, b1]).unwrap();
        assert!((t.value(d) - 31.0).abs() < 1e-12);
        let g = t.gradient(d, &[a0, a1, b0, b1]).unwrap();
        assert_eq!(g, vec![5.0, 7.0, 2.0, 3.0]);
    }

    #[test]
    fn second_order_textbook_example() {
        // f = θ·x²; penalty = (∂f/∂x)² = 4θ²x²; ∂penalty/∂θ = 8θx² → 4 at
        // θ = 0.5, x = 1.
        let mut t = Tape::new();
        let theta = t.leaf(0.5);
        let x = t.leaf(1.0);
        let xsq = t.mul(x, x);
        let f = t.mul(theta, xsq);
        let gx = t.gradient_nodes(f, &[x]).unwrap()[0];
        let penalty = t.mul(gx, gx);
        let gg = t.gradient_of_gradient(penalty, &[theta]).unwrap();
        assert!((gg[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn second_order_matches_finite_differences_of_gradients() {
        // p(a, b) = (∂y/∂a)² + sin-free mix of both grads, y = exp(a·b) + a/b.
        // Check ∂p/∂a and ∂p/∂b against central differences of p computed via
        // fresh first-order tapes.
        let eval_p = |a: f64, b: f64| -> f64 {
            let mut t = Tape::new();
            let na = t.leaf(a);
            let nb = t.leaf(b);
            let m = t.mul(na, nb);
            let e = t.exp(m);
            let q = t.div(na, nb);
            let y = t.add(e, q);
            let g = t.gradient(y, &[na, nb]).unwrap();
            g[0] * g[0] + 0.5 * g[0] * g[1]
        };
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..25 {
            let a = rng.gen_range(0.2..1.2);
            let b = rng.gen_range(0.4..1.5);
            let mut t = Tape::new();
            let na = t.leaf(a);
            let nb = t.leaf(b);
            let m = t.mul(na, nb);
            let e = t.exp(m);
            let q = t.div(na, nb);
            let y = t.add(e, q);
            let g = t.gradient_nodes(y, &[na, nb]).unwrap();
            let g0sq = t.mul(g[0], g[0]);
            let cross = t.mul(g[0], g[1]);
            let half_cross = t.mul_const(cross, 0.5);
            let p = t.add(g0sq, half_cross);
            let gg = t.gradient_of_gradient(p, &[na, nb]).unwrap();
            let fa = fd(|x| eval_p(x, b), a, 1e-5);
            let fb = fd(|x| eval_p(a, x), b, 1e-5);
            assert!((gg[0] - fa).abs() / fa.abs().max(1.0) < 1e-5, "{} vs {fa}", gg[0]);
            assert!((gg[1] - fb).abs() / fb.abs().max(1.0) < 1e-5, "{} vs {fb}", gg[1]);
        }
    }

    #[test]
    fn second_order_through_fused_reductions() {
        // y = Σ wᵢ·xᵢ + Σ wᵢ²·vᵢ; s = Σⱼ (∂y/∂xⱼ)² = Σ wⱼ²;
        // ∂s/∂wⱼ = 2wⱼ exactly, independent of x and v.
        let mut t = Tape::new();
        let w = t.leaves(&[0.3, -1.2, 0.8]);
        let x = t.leaves(&[1.0, 2.0, -0.5]);
        let v = t.leaves(&[0.1, 0.2, 0.3]);
        let mean = t.dot(&x, &w).unwrap();
        let var = t.dot_sq(&v, &w).unwrap();
        let y = t.add(mean, var);
        let gx = t.gradient_nodes(y, &x).unwrap();
        let squares: Vec<NodeId> = gx.iter().map(|g| t.mul(*g, *g)).collect();
        let s = t.sum(&squares);
        let gw = t.gradient_of_gradient(s, &w).unwrap();
        for (g, wv) in gw.iter().zip([0.3, -1.2, 0.8]) {
            assert!((g - 2.0 * wv).abs() < 1e-12, "{g} vs {}", 2.0 * wv);
        }
        // And the v-side second order: ∂/∂vⱼ of s is zero.
        let gv = t.gradient_of_gradient(s, &v).unwrap();
        assert_eq!(gv, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn third_order_is_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(0.7);
        let theta = t.leaf(0.4);
        let m = t.mul(theta, x);
        let y = t.exp(m);
        let g = t.gradient_nodes(y, &[x]).unwrap();
        let p = t.mul(g[0], g[0]);
        let gg = t.gradient_nodes(p, &[theta]).unwrap();
        let deep = t.mul(gg[0], gg[0]);
        match t.gradient(deep, &[theta]) {
            Err(GraphError::UnsupportedOrder { attempted: 3 }) => {}
            other => panic!("expected unsupported-order error, got {other:?}"),
        }
        match t.gradient_nodes(deep, &[theta]) {
            Err(GraphError::UnsupportedOrder { attempted: 3 }) => {}
            other => panic!("expected unsupported-order error, got {other:?}"),
        }
    }

    #[test]
    fn foreign_node_ids_are_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(1.0);
        let bogus = NodeId(99);
        assert!(matches!(
            t.gradient(bogus, &[x]),
            Err(GraphError::InvalidNode { .. })
        ));
        assert!(matches!(
            t.gradient(x, &[bogus]),
            Err(GraphError::InvalidNode { .. })
        ));
    }

    #[test]
    fn multiple_first_order_passes_before_one_second_order_pass() {
        // Two separate first-order emissions (e.g. mean and variance heads)
        // feed one scalar; differentiating that scalar is order 2 and fine.
        let mut t = Tape::new();
        let x = t.leaf(0.8);
        let w = t.leaf(1.3);
        let m = t.mul(w, x);
        let head_a = t.exp(m);
        let head_b = t.mul(m, m);
        let ga = t.gradient_nodes(head_a, &[x]).unwrap()[0];
        let gb = t.gradient_nodes(head_b, &[x]).unwrap()[0];
        let s = t.mul(ga, gb);
        let gg = t.gradient_of_gradient(s, &[w]).unwrap();
        // s(w) = (w·e^{wx})·(2w²x) = 2w³x·e^{wx}; ds/dw = (6w²x + 2w³x²)e^{wx}.
        let x_ = 0.8f64;
        let w_ = 1.3f64;
        let expect = (6.0 * w_ * w_ * x_ + 2.0 * w_ * w_ * w_ * x_ * x_) * (w_ * x_).exp();
        assert!((gg[0] - expect).abs() / expect < 1e-12, "{} vs {expect}", gg[0]);
    }

    #[test]
    fn abs_smooth_tracks_abs_away_from_zero() {
        let mut t = Tape::new();
        let x = t.leaf(-0.25);
        let y = t.abs_smooth(x);
        assert!((t.value(y) - 0.25).abs() < 1e-9);
        let g = t.gradient(y, &[x]).unwrap();
        assert!((g[0] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn clear_retains_capacity_and_resets_state() {
        let mut t = Tape::new();
        let x = t.leaf(2.0);
        let y = t.mul(x, x);
        let _ = t.gradient_nodes(y, &[x]).unwrap();
        t.clear();
        assert!(t.is_empty());
        let x = t.leaf(4.0);
        let y = t.mul(x, x);
        assert_eq!(t.gradient(y, &[x]).unwrap(), vec![8.0]);
    }
}
