//! Exact branch-and-bound search for the most accurate formula of bounded
//! size.
//!
//! The space is walked skeleton-first. Canonical tree shapes are enumerated
//! by size, and the leaf slots of a shape are filled depth-first from a table
//! of candidate propositions. A partial assignment is evaluated in
//! three-valued logic over bitmasks: every point on which the root is
//! already decided and wrong is a certain error, which bounds the accuracy
//! of every completion from above.
//!
//! Work is cut into units (a shape plus the candidate of its first slot)
//! and processed in waves of fixed length. All units of a wave start from
//! the incumbent as it stood before the wave and their results are merged in
//! unit order, so the outcome does not depend on the number of workers.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::dataset::{EncodedDataset, Vocabulary};
use crate::formula::{Accuracy, BinOp, Formula, Token};
use crate::propspace::{candidate_grid, scheme_leaf_space, CandidateGrid, Proposition, Scheme};
use crate::{Error, Result};

const WAVE: usize = 64;
const CLOCK_EVERY: u64 = 1024;

/// Search effort limits. `None` means unlimited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Budget {
    pub time: Option<Duration>,
    /// Limit on explored nodes, one node per candidate proposition tried in
    /// a slot. Unlike wall-clock time this is reproducible.
    pub nodes: Option<u64>,
}

impl Budget {
    pub fn unlimited() -> Self {
        Budget::default()
    }

    pub fn with_time(time: Duration) -> Self {
        Budget {
            time: Some(time),
            nodes: None,
        }
    }

    pub fn with_nodes(nodes: u64) -> Self {
        Budget {
            time: None,
            nodes: Some(nodes),
        }
    }

    /// The tighter limit in each dimension.
    pub fn min(self, other: Budget) -> Budget {
        fn tighter<T: Ord>(a: Option<T>, b: Option<T>) -> Option<T> {
            match (a, b) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, None) => a,
                (None, b) => b,
            }
        }
        Budget {
            time: tighter(self.time, other.time),
            nodes: tighter(self.nodes, other.nodes),
        }
    }

    pub fn is_unlimited(&self) -> bool {
        self.time.is_none() && self.nodes.is_none()
    }

    fn is_positive(&self) -> bool {
        self.time.is_none_or(|t| !t.is_zero()) && self.nodes != Some(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub length_bound: usize,
    pub scheme: Scheme,
    pub budget: Budget,
    pub workers: usize,
    /// Recorded with the run. The search itself draws no random numbers.
    pub seed: u64,
}

impl SearchConfig {
    pub fn new(length_bound: usize, scheme: Scheme) -> Self {
        SearchConfig {
            length_bound,
            scheme,
            budget: Budget::unlimited(),
            workers: 1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length_bound == 0 {
            return Err(Error::Usage("length bound must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Usage("worker count must be positive".into()));
        }
        if !self.budget.is_positive() {
            return Err(Error::Usage("search budget must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: Formula,
    pub train_accuracy: Accuracy,
    /// False only when the budget ran out before the space was covered.
    pub proved_optimal: bool,
    pub nodes_explored: u64,
    pub elapsed: Duration,
    pub length_bound: usize,
}

/// Tree shape of a canonical formula with its leaves left open.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Shape {
    Leaf,
    Not(Box<Shape>),
    /// Flattened chain of at least two operands, none of which is a chain
    /// of the same operator.
    Chain(BinOp, Vec<Shape>),
}

impl Shape {
    pub fn size(&self) -> usize {
        match self {
            Shape::Leaf => 1,
            Shape::Not(c) => 1 + c.size(),
            Shape::Chain(_, cs) => cs.iter().map(Shape::size).sum::<usize>() + cs.len() - 1,
        }
    }

    /// Number of leaf slots.
    pub fn slots(&self) -> usize {
        match self {
            Shape::Leaf => 1,
            Shape::Not(c) => c.slots(),
            Shape::Chain(_, cs) => cs.iter().map(Shape::slots).sum(),
        }
    }

    /// Structural token ranks of the right-nested RPN form.
    #[cfg(test)]
    fn ranks(&self) -> Vec<u8> {
        let placeholder = Proposition::Bool { attr: 0 };
        let leaves = vec![placeholder; self.slots()];
        self.instantiate(&leaves)
            .rpn()
            .iter()
            .map(Token::rank)
            .collect()
    }

    /// The formula with slots filled from `leaves` left to right.
    ///
    /// Panics if `leaves` does not have one proposition per slot.
    pub fn instantiate(&self, leaves: &[Proposition]) -> Formula {
        assert_eq!(leaves.len(), self.slots(), "one proposition per slot");
        let mut rpn = Vec::with_capacity(self.size());
        let mut it = leaves.iter();
        self.push_rpn(&mut it, &mut rpn);
        Formula::new(rpn).expect("shapes yield well-formed formulas")
    }

    fn push_rpn<'a>(
        &self,
        leaves: &mut impl Iterator<Item = &'a Proposition>,
        out: &mut Vec<Token>,
    ) {
        match self {
            Shape::Leaf => out.push(Token::Leaf(*leaves.next().expect("enough leaves"))),
            Shape::Not(c) => {
                c.push_rpn(leaves, out);
                out.push(Token::Not);
            }
            Shape::Chain(op, cs) => {
                for c in cs {
                    c.push_rpn(leaves, out);
                }
                let t = match op {
                    BinOp::And => Token::And,
                    BinOp::Or => Token::Or,
                };
                out.extend(std::iter::repeat_n(t, cs.len() - 1));
            }
        }
    }
}

const RANK_LEAF: u8 = 0;
const RANK_NOT: u8 = 1;

fn op_rank(op: BinOp) -> u8 {
    match op {
        BinOp::And => 2,
        BinOp::Or => 3,
    }
}

/// Canonical shapes by size, each size sorted by structure. Shapes are kept
/// as their right-nested RPN token ranks, which is both compact and the sort
/// key; at the larger sizes there are hundreds of thousands of them.
#[derive(Debug, Default)]
struct ShapeCatalog {
    by_size: Vec<Vec<Box<[u8]>>>,
}

impl ShapeCatalog {
    fn of_size(&mut self, size: usize) -> &[Box<[u8]>] {
        while self.by_size.len() <= size {
            let s = self.by_size.len();
            let shapes = self.build(s);
            self.by_size.push(shapes);
        }
        &self.by_size[size]
    }

    fn build(&self, s: usize) -> Vec<Box<[u8]>> {
        if s == 0 {
            return Vec::new();
        }
        if s == 1 {
            return vec![Box::new([RANK_LEAF])];
        }
        let mut out: Vec<Box<[u8]>> = self.by_size[s - 1]
            .iter()
            .filter(|c| c.last() != Some(&RANK_NOT))
            .map(|c| c.iter().copied().chain([RANK_NOT]).collect())
            .collect();
        for op in [BinOp::And, BinOp::Or] {
            let r = op_rank(op);
            let pool: Vec<&[u8]> = self.by_size[..s - 1]
                .iter()
                .flatten()
                .filter(|c| c.last() != Some(&r))
                .map(|c| &c[..])
                .collect();
            chains(r, &pool, 0, s + 1, false, &mut Vec::new(), &mut out);
        }
        out.sort_unstable();
        out
    }
}

// Operands are drawn in non-decreasing pool order; each costs its size plus
// one connective, and the chain is complete when the budget is used up.
fn chains<'a>(
    op: u8,
    pool: &[&'a [u8]],
    start: usize,
    budget: usize,
    negated: bool,
    stack: &mut Vec<&'a [u8]>,
    out: &mut Vec<Box<[u8]>>,
) {
    if budget == 0 {
        if stack.len() >= 2 {
            let mut ranks: Vec<u8> = stack.concat();
            ranks.extend(std::iter::repeat_n(op, stack.len() - 1));
            out.push(ranks.into());
        }
        return;
    }
    for (i, &c) in pool.iter().enumerate().skip(start) {
        let cost = c.len() + 1;
        if cost > budget {
            break;
        }
        let is_not = c.last() == Some(&RANK_NOT);
        if is_not && negated {
            continue;
        }
        stack.push(c);
        chains(op, pool, i, budget - cost, negated || is_not, stack, out);
        stack.pop();
    }
}

impl Shape {
    // Inverse of `ranks` on canonical shapes: a same-operator right operand
    // can only be the rest of the chain.
    fn from_ranks(ranks: &[u8]) -> Shape {
        let mut stack: Vec<Shape> = Vec::new();
        for &r in ranks {
            let sh = match r {
                RANK_LEAF => Shape::Leaf,
                RANK_NOT => Shape::Not(Box::new(stack.pop().expect("operand"))),
                _ => {
                    let op = if r == 2 { BinOp::And } else { BinOp::Or };
                    let right = stack.pop().expect("operand");
                    let left = stack.pop().expect("operand");
                    match right {
                        Shape::Chain(o, mut cs) if o == op => {
                            cs.insert(0, left);
                            Shape::Chain(op, cs)
                        }
                        right => Shape::Chain(op, vec![left, right]),
                    }
                }
            };
            stack.push(sh);
        }
        assert_eq!(stack.len(), 1, "well-formed ranks");
        stack.pop().unwrap()
    }
}

/// All canonical shapes of exactly `size` tokens, in search order.
pub fn canonical_shapes(size: usize) -> Vec<Shape> {
    ShapeCatalog::default()
        .of_size(size)
        .iter()
        .map(|r| Shape::from_ranks(r))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Leaf,
    Not,
    And,
    Or,
}

#[derive(Debug, Clone)]
struct PlanNode {
    op: Op,
    children: Vec<usize>,
    first_slot: usize,
    last_slot: usize,
    /// Previous chain sibling with the same shape.
    twin: Option<usize>,
    /// All previous chain siblings.
    earlier: Vec<usize>,
}

/// A shape flattened in post-order for the walker.
#[derive(Debug, Clone)]
struct Plan {
    shape: Shape,
    nodes: Vec<PlanNode>,
    slot_node: Vec<usize>,
    /// Ancestors of each slot's leaf, bottom-up.
    path: Vec<Vec<usize>>,
    /// Nodes whose last slot is this one, bottom-up.
    completes: Vec<Vec<usize>>,
    /// `(first slot of the twin, strict)` bounds on a slot's candidate.
    lower: Vec<Vec<(usize, bool)>>,
}

impl Plan {
    fn new(shape: &Shape) -> Plan {
        let mut nodes = Vec::new();
        let mut parent = Vec::new();
        let mut slot_node = Vec::new();
        add_node(shape, &mut nodes, &mut parent, &mut slot_node);
        let k = slot_node.len();
        let mut path = vec![Vec::new(); k];
        let mut completes = vec![Vec::new(); k];
        let mut lower = vec![Vec::new(); k];
        for (slot, &leaf) in slot_node.iter().enumerate() {
            let mut v = leaf;
            while let Some(p) = parent[v] {
                path[slot].push(p);
                v = p;
            }
        }
        for (v, node) in nodes.iter().enumerate() {
            completes[node.last_slot].push(v);
            if let Some(u) = node.twin {
                lower[node.first_slot].push((nodes[u].first_slot, node.op == Op::Leaf));
            }
        }
        Plan {
            shape: shape.clone(),
            nodes,
            slot_node,
            path,
            completes,
            lower,
        }
    }

    fn slots(&self) -> usize {
        self.slot_node.len()
    }

    fn root(&self) -> usize {
        self.nodes.len() - 1
    }
}

fn add_node(
    shape: &Shape,
    nodes: &mut Vec<PlanNode>,
    parent: &mut Vec<Option<usize>>,
    slot_node: &mut Vec<usize>,
) -> usize {
    let (op, children) = match shape {
        Shape::Leaf => {
            let slot = slot_node.len();
            nodes.push(PlanNode {
                op: Op::Leaf,
                children: Vec::new(),
                first_slot: slot,
                last_slot: slot,
                twin: None,
                earlier: Vec::new(),
            });
            parent.push(None);
            slot_node.push(nodes.len() - 1);
            return nodes.len() - 1;
        }
        Shape::Not(c) => (Op::Not, vec![add_node(c, nodes, parent, slot_node)]),
        Shape::Chain(op, cs) => {
            let ids: Vec<usize> = cs
                .iter()
                .map(|c| add_node(c, nodes, parent, slot_node))
                .collect();
            for j in 1..cs.len() {
                nodes[ids[j]].earlier = ids[..j].to_vec();
                if cs[j - 1] == cs[j] {
                    nodes[ids[j]].twin = Some(ids[j - 1]);
                }
            }
            let op = match op {
                BinOp::And => Op::And,
                BinOp::Or => Op::Or,
            };
            (op, ids)
        }
    };
    let first_slot = nodes[children[0]].first_slot;
    let last_slot = nodes[*children.last().unwrap()].last_slot;
    let v = nodes.len();
    for &c in &children {
        parent[c] = Some(v);
    }
    nodes.push(PlanNode {
        op,
        children,
        first_slot,
        last_slot,
        twin: None,
        earlier: Vec::new(),
    });
    parent.push(None);
    v
}

/// Candidate propositions with their truth masks, in proposition order.
struct LeafTable {
    props: Vec<Proposition>,
    words: usize,
    masks: Vec<u64>,
    comps: Vec<u64>,
}

impl LeafTable {
    /// With `dedup`, a proposition whose mask equals that of an earlier one
    /// is dropped.
    fn new(props: Vec<Proposition>, ds: &EncodedDataset, dedup: bool) -> LeafTable {
        let n = ds.len();
        let words = n.div_ceil(64);
        let mut table = LeafTable {
            props: Vec::new(),
            words,
            masks: Vec::new(),
            comps: Vec::new(),
        };
        let mut seen = HashSet::new();
        for p in props {
            let mask = p.mask(ds);
            if dedup && !seen.insert(mask.words().to_vec()) {
                continue;
            }
            let mut comp = mask.clone();
            comp.not_assign();
            table.props.push(p);
            table.masks.extend_from_slice(mask.words());
            table.comps.extend_from_slice(comp.words());
        }
        table
    }

    fn len(&self) -> usize {
        self.props.len()
    }

    fn mask(&self, id: u32) -> &[u64] {
        let i = id as usize * self.words;
        &self.masks[i..i + self.words]
    }

    fn comp(&self, id: u32) -> &[u64] {
        let i = id as usize * self.words;
        &self.comps[i..i + self.words]
    }
}

struct Problem<'a> {
    table: &'a LeafTable,
    words: usize,
    n: u64,
    y: Vec<u64>,
    ny: Vec<u64>,
    ones: Vec<u64>,
    /// Prune operands whose truth masks make them redundant on this data.
    dominance: bool,
}

impl<'a> Problem<'a> {
    fn new(ds: &EncodedDataset, table: &'a LeafTable, dominance: bool) -> Self {
        let n = ds.len();
        let target = crate::bits::Bits::from_fn(n, |i| ds.target()[i]);
        let mut not_target = target.clone();
        not_target.not_assign();
        let ones = crate::bits::Bits::ones(n);
        Problem {
            table,
            words: table.words,
            n: n as u64,
            y: target.words().to_vec(),
            ny: not_target.words().to_vec(),
            ones: ones.words().to_vec(),
            dominance,
        }
    }
}

#[derive(Clone, Copy)]
enum LeafState {
    Unknown,
    Id(u32),
    AllTrue,
    AllFalse,
    /// Only what every candidate of the slot agrees on.
    Hull,
}

struct UnitResult {
    best: Option<(u64, Vec<u32>)>,
    nodes: u64,
    halted: bool,
}

/// Depth-first walker over the slot assignments of one plan.
struct Walker<'a> {
    prob: &'a Problem<'a>,
    plan: &'a Plan,
    cands: &'a [&'a [u32]],
    t: Vec<u64>,
    f: Vec<u64>,
    assign: Vec<u32>,
    floor: i64,
    best: Option<(u64, Vec<u32>)>,
    nodes: u64,
    cap: u64,
    deadline: Option<Instant>,
    halted: bool,
    scratch: Vec<u64>,
}

fn popcount_and(a: &[u64], b: &[u64]) -> u64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x & y).count_ones() as u64)
        .sum()
}

fn is_subset(a: &[u64], b: &[u64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x & !y == 0)
}

impl<'a> Walker<'a> {
    fn new(
        prob: &'a Problem<'a>,
        plan: &'a Plan,
        cands: &'a [&'a [u32]],
        floor: i64,
        cap: u64,
        deadline: Option<Instant>,
    ) -> Self {
        let cells = plan.nodes.len() * prob.words;
        Walker {
            prob,
            plan,
            cands,
            t: vec![0; cells],
            f: vec![0; cells],
            assign: vec![0; plan.slots()],
            floor,
            best: None,
            nodes: 0,
            cap,
            deadline,
            halted: false,
            scratch: vec![0; 4 * prob.words],
        }
    }

    fn finish(self) -> UnitResult {
        UnitResult {
            best: self.best,
            nodes: self.nodes,
            halted: self.halted,
        }
    }

    fn tick(&mut self) -> bool {
        if self.nodes >= self.cap {
            self.halted = true;
        } else {
            self.nodes += 1;
            if self.nodes.is_multiple_of(CLOCK_EVERY) {
                if let Some(d) = self.deadline {
                    if Instant::now() >= d {
                        self.halted = true;
                    }
                }
            }
        }
        self.halted
    }

    fn row(&self, v: usize) -> std::ops::Range<usize> {
        v * self.prob.words..(v + 1) * self.prob.words
    }

    fn set_leaf(&mut self, slot: usize, state: LeafState) {
        let v = self.plan.slot_node[slot];
        let r = self.row(v);
        let table = self.prob.table;
        match state {
            LeafState::Unknown => {
                self.t[r.clone()].fill(0);
                self.f[r].fill(0);
            }
            LeafState::Id(id) => {
                self.assign[slot] = id;
                self.t[r.clone()].copy_from_slice(table.mask(id));
                self.f[r].copy_from_slice(table.comp(id));
            }
            LeafState::AllTrue => {
                self.t[r.clone()].copy_from_slice(&self.prob.ones);
                self.f[r].fill(0);
            }
            LeafState::AllFalse => {
                self.t[r.clone()].fill(0);
                self.f[r].copy_from_slice(&self.prob.ones);
            }
            LeafState::Hull => {
                self.t[r.clone()].copy_from_slice(&self.prob.ones);
                self.f[r.clone()].copy_from_slice(&self.prob.ones);
                for &id in self.cands[slot] {
                    for (i, w) in r.clone().enumerate() {
                        self.t[w] &= table.mask(id)[i];
                        self.f[w] &= table.comp(id)[i];
                    }
                }
            }
        }
        for i in 0..self.plan.path[slot].len() {
            self.recompute(self.plan.path[slot][i]);
        }
    }

    fn recompute(&mut self, v: usize) {
        let w = self.prob.words;
        let node = &self.plan.nodes[v];
        let (t_lo, t_hi) = self.t.split_at_mut(v * w);
        let (f_lo, f_hi) = self.f.split_at_mut(v * w);
        let (tv, fv) = (&mut t_hi[..w], &mut f_hi[..w]);
        let child = |c: usize| c * w..(c + 1) * w;
        match node.op {
            Op::Leaf => unreachable!("leaves are set directly"),
            Op::Not => {
                let c = child(node.children[0]);
                tv.copy_from_slice(&f_lo[c.clone()]);
                fv.copy_from_slice(&t_lo[c]);
            }
            Op::And | Op::Or => {
                let c0 = child(node.children[0]);
                tv.copy_from_slice(&t_lo[c0.clone()]);
                fv.copy_from_slice(&f_lo[c0]);
                let and = node.op == Op::And;
                for &c in &node.children[1..] {
                    let c = child(c);
                    for i in 0..w {
                        if and {
                            tv[i] &= t_lo[c.start + i];
                            fv[i] |= f_lo[c.start + i];
                        } else {
                            tv[i] |= t_lo[c.start + i];
                            fv[i] &= f_lo[c.start + i];
                        }
                    }
                }
            }
        }
    }

    /// Agreements that no completion of the current assignment can lose.
    fn bound(&self) -> u64 {
        let r = self.row(self.plan.root());
        let errors = popcount_and(&self.t[r.clone()], &self.prob.ny)
            + popcount_and(&self.f[r], &self.prob.y);
        self.prob.n - errors
    }

    fn start_pos(&self, slot: usize) -> usize {
        let list = self.cands[slot];
        self.plan.lower[slot]
            .iter()
            .map(|&(s, strict)| {
                let id = self.assign[s];
                if strict {
                    list.partition_point(|&c| c <= id)
                } else {
                    list.partition_point(|&c| c < id)
                }
            })
            .max()
            .unwrap_or(0)
    }

    /// Sibling constraints of the nodes completed by assigning `slot`.
    fn checks_ok(&mut self, slot: usize) -> bool {
        for &v in &self.plan.completes[slot] {
            let node = &self.plan.nodes[v];
            if let Some(u) = node.twin {
                let nu = &self.plan.nodes[u];
                let a = &self.assign[nu.first_slot..=nu.last_slot];
                let b = &self.assign[node.first_slot..=node.last_slot];
                if a >= b {
                    return false;
                }
            }
            if !self.prob.dominance {
                continue;
            }
            let tv = &self.t[self.row(v)];
            for &e in &node.earlier {
                let te = &self.t[self.row(e)];
                if is_subset(te, tv) || is_subset(tv, te) {
                    return false;
                }
            }
            if matches!(node.op, Op::And | Op::Or)
                && node.children.len() > 2
                && self.redundant_operand(v)
            {
                return false;
            }
        }
        true
    }

    // An operand is redundant when the others already imply (for ∧) or
    // cover (for ∨) it on every point.
    fn redundant_operand(&mut self, v: usize) -> bool {
        let w = self.prob.words;
        let node = &self.plan.nodes[v];
        let and = node.op == Op::And;
        for (i, &ci) in node.children.iter().enumerate() {
            let acc = &mut self.scratch[..w];
            acc.fill(if and { u64::MAX } else { 0 });
            for (j, &cj) in node.children.iter().enumerate() {
                if i == j {
                    continue;
                }
                for k in 0..w {
                    if and {
                        acc[k] &= self.t[cj * w + k];
                    } else {
                        acc[k] |= self.t[cj * w + k];
                    }
                }
            }
            let mine = &self.t[ci * w..(ci + 1) * w];
            let redundant = if and {
                is_subset(&self.scratch[..w], mine)
            } else {
                is_subset(mine, &self.scratch[..w])
            };
            if redundant {
                return true;
            }
        }
        false
    }

    fn record(&mut self, agree: u64) {
        self.floor = agree as i64;
        self.best = Some((agree, self.assign.clone()));
    }

    fn dfs(&mut self, slot: usize) {
        if slot + 1 == self.plan.slots() {
            self.scan_last(slot);
            return;
        }
        let list = self.cands[slot];
        for pos in self.start_pos(slot)..list.len() {
            if self.tick() {
                break;
            }
            self.set_leaf(slot, LeafState::Id(list[pos]));
            if !self.checks_ok(slot) || self.bound() as i64 <= self.floor {
                continue;
            }
            self.dfs(slot + 1);
            if self.halted {
                break;
            }
        }
        self.set_leaf(slot, LeafState::Unknown);
    }

    // With one open slot the root is, pointwise, either constant, equal to
    // the leaf or its negation, so each candidate costs a few popcounts.
    fn scan_last(&mut self, slot: usize) {
        let list = self.cands[slot];
        let start = self.start_pos(slot);
        if start >= list.len() {
            return;
        }
        let w = self.prob.words;
        let root = self.row(self.plan.root());
        self.set_leaf(slot, LeafState::AllTrue);
        let (mut rt, mut rf) = (vec![0; w], vec![0; w]);
        rt.copy_from_slice(&self.t[root.clone()]);
        rf.copy_from_slice(&self.f[root.clone()]);
        self.set_leaf(slot, LeafState::AllFalse);
        let mut follow = vec![0u64; w];
        let mut anti = vec![0u64; w];
        let mut base = 0u64;
        for i in 0..w {
            let (t0, f0) = (self.t[root.start + i], self.f[root.start + i]);
            follow[i] = rt[i] & f0;
            anti[i] = rf[i] & t0;
            base += ((rt[i] & t0 & self.prob.y[i]).count_ones()
                + (rf[i] & f0 & self.prob.ny[i]).count_ones()) as u64;
        }
        let reach = base
            + follow
                .iter()
                .zip(&anti)
                .map(|(a, b)| (a | b).count_ones() as u64)
                .sum::<u64>();
        if reach as i64 > self.floor {
            for &id in &list[start..] {
                if self.tick() {
                    break;
                }
                let m = self.prob.table.mask(id);
                let mut agree = base;
                for i in 0..w {
                    let x = m[i] ^ self.prob.y[i];
                    agree += ((follow[i] & !x).count_ones() + (anti[i] & x).count_ones()) as u64;
                }
                if agree as i64 > self.floor {
                    self.set_leaf(slot, LeafState::Id(id));
                    if self.checks_ok(slot) {
                        self.record(agree);
                        if agree == reach {
                            break;
                        }
                    }
                }
            }
        }
        self.set_leaf(slot, LeafState::Unknown);
    }

    /// Explores the unit whose first slot holds `list[pos]`, or the whole
    /// plan when `first` is `None`.
    fn run(&mut self, first: Option<usize>) {
        match first {
            None => self.dfs(0),
            Some(pos) => {
                if self.tick() {
                    return;
                }
                self.set_leaf(0, LeafState::Id(self.cands[0][pos]));
                if self.checks_ok(0) && self.bound() as i64 > self.floor {
                    self.dfs(1);
                }
            }
        }
    }
}

/// Returns the accuracy-maximal, then size-minimal, then earliest formula
/// of size at most `cfg.length_bound`.
///
/// Sizes are searched in increasing order, shapes in structural order and
/// leaves in proposition order; ties keep the first formula found.
pub fn best_formula(ds: &EncodedDataset, cfg: &SearchConfig) -> Result<SearchOutcome> {
    best_formula_from(ds, cfg, None)
}

/// Like [`best_formula`], resuming from `warm`, an outcome on the same data
/// and scheme at a smaller bound. A warm outcome that was not proved optimal
/// is ignored.
pub fn best_formula_from(
    ds: &EncodedDataset,
    cfg: &SearchConfig,
    warm: Option<&SearchOutcome>,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let started = Instant::now();
    let deadline = cfg.budget.time.map(|t| started + t);
    let n = ds.len() as u64;

    let grid = candidate_grid(ds);
    let space = scheme_leaf_space(cfg.scheme, &grid, ds);
    let table = LeafTable::new(space.all().copied().collect(), ds, true);
    let prob = Problem::new(ds, &table, true);
    let all: Vec<u32> = (0..table.len() as u32).collect();

    let mut incumbent: Option<(u64, Formula)> = None;
    let mut first_size = 1;
    if let Some(w) = warm {
        if w.proved_optimal && w.length_bound <= cfg.length_bound && w.train_accuracy.total == n {
            incumbent = Some((w.train_accuracy.agree, w.best.clone()));
            first_size = w.length_bound + 1;
        }
    }

    let pool = if cfg.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build()
                .map_err(|e| Error::Usage(format!("cannot start workers: {e}")))?,
        )
    } else {
        None
    };

    let mut catalog = ShapeCatalog::default();
    let mut nodes = 0u64;
    let mut complete = true;
    'sizes: for size in first_size..=cfg.length_bound {
        if matches!(&incumbent, Some((a, _)) if *a == n) {
            break;
        }
        let shapes = catalog.of_size(size);
        let mut units = shapes.iter().enumerate().flat_map(|(i, r)| {
            let slots = r.iter().filter(|&&t| t == RANK_LEAF).count();
            let firsts = if slots == 1 { 0..1 } else { 0..all.len() };
            firsts.map(move |f| (i, (slots > 1).then_some(f)))
        });
        // Plans are built per wave; a wave touches at most WAVE shapes.
        let mut plans: Vec<(usize, Plan)> = Vec::new();
        loop {
            let wave: Vec<(usize, Option<usize>)> = units.by_ref().take(WAVE).collect();
            if wave.is_empty() {
                break;
            }
            plans.retain(|(i, _)| *i == wave[0].0);
            for &(i, _) in &wave {
                if plans.last().is_none_or(|(j, _)| *j != i) {
                    plans.push((i, Plan::new(&Shape::from_ranks(&shapes[i]))));
                }
            }
            let plan_of = |i: usize| &plans.iter().find(|(j, _)| *j == i).expect("plan built").1;
            let cap = match cfg.budget.nodes {
                Some(limit) if nodes >= limit => {
                    complete = false;
                    break 'sizes;
                }
                Some(limit) => limit - nodes,
                None => u64::MAX,
            };
            if deadline.is_some_and(|d| Instant::now() >= d) {
                complete = false;
                break 'sizes;
            }
            let floor = incumbent.as_ref().map_or(-1, |(a, _)| *a as i64);
            let run = |&(i, first): &(usize, Option<usize>)| {
                let plan = plan_of(i);
                let cands = vec![&all[..]; plan.slots()];
                let mut walker = Walker::new(&prob, plan, &cands, floor, cap, deadline);
                walker.run(first);
                walker.finish()
            };
            let results: Vec<UnitResult> = match &pool {
                Some(pool) => pool.install(|| wave.par_iter().map(run).collect()),
                None => wave.iter().map(run).collect(),
            };
            // Units are accounted in order; the first one that would cross
            // the node limit ends the search and its work is discarded.
            let mut halted = false;
            for (&(i, _), r) in wave.iter().zip(results) {
                if cfg
                    .budget
                    .nodes
                    .is_some_and(|limit| nodes + r.nodes > limit)
                {
                    halted = true;
                    break;
                }
                nodes += r.nodes;
                if r.halted {
                    halted = true;
                }
                if let Some((agree, assign)) = r.best {
                    if incumbent.as_ref().is_none_or(|(a, _)| agree > *a) {
                        let leaves: Vec<Proposition> =
                            assign.iter().map(|&id| table.props[id as usize]).collect();
                        incumbent = Some((agree, plan_of(i).shape.instantiate(&leaves)));
                    }
                }
                if halted {
                    break;
                }
            }
            if halted {
                complete = false;
                break 'sizes;
            }
            if matches!(&incumbent, Some((a, _)) if *a == n) {
                break 'sizes;
            }
        }
    }

    let (agree, best) = incumbent.ok_or(Error::NoIncumbent)?;
    Ok(SearchOutcome {
        best,
        train_accuracy: Accuracy::new(agree, n),
        proved_optimal: complete,
        nodes_explored: nodes,
        elapsed: started.elapsed(),
        length_bound: cfg.length_bound,
    })
}

/// A canonical shape whose slots carry attributes but no thresholds yet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skeleton {
    shape: Shape,
    attrs: Vec<usize>,
    scheme: Scheme,
}

impl Skeleton {
    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    /// Attribute of each slot, in RPN order.
    pub fn attrs(&self) -> &[usize] {
        &self.attrs
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn size(&self) -> usize {
        self.shape.size()
    }

    pub fn instantiate(&self, leaves: &[Proposition]) -> Formula {
        self.shape.instantiate(leaves)
    }
}

/// Every canonical skeleton of size at most `length_bound` over the
/// attributes of `vocab`, by size, shape and attribute tuple.
///
/// Slots that hold Boolean attributes, or any attribute under the median
/// scheme, admit a single proposition; equal sibling subterms over such
/// slots are therefore excluded.
pub fn enumerate_skeletons(
    vocab: &Vocabulary,
    length_bound: usize,
    scheme: Scheme,
) -> impl Iterator<Item = Skeleton> {
    let fixed: Vec<bool> = vocab
        .scales
        .iter()
        .map(|s| s.is_none() || scheme == Scheme::Median)
        .collect();
    let mut catalog = ShapeCatalog::default();
    let shapes: Vec<Shape> = (1..=length_bound)
        .flat_map(|s| {
            catalog
                .of_size(s)
                .iter()
                .map(|r| Shape::from_ranks(r))
                .collect::<Vec<_>>()
        })
        .collect();
    shapes.into_iter().flat_map(move |shape| {
        let plan = Plan::new(&shape);
        let mut out = Vec::new();
        let mut attrs = vec![0; plan.slots()];
        fill_attrs(&plan, &fixed, 0, &mut attrs, &mut |a: &[usize]| {
            out.push(Skeleton {
                shape: shape.clone(),
                attrs: a.to_vec(),
                scheme,
            })
        });
        out
    })
}

fn fill_attrs(
    plan: &Plan,
    fixed: &[bool],
    slot: usize,
    attrs: &mut Vec<usize>,
    emit: &mut impl FnMut(&[usize]),
) {
    if slot == plan.slots() {
        emit(attrs);
        return;
    }
    let start = plan.lower[slot]
        .iter()
        .map(|&(s, strict)| attrs[s] + usize::from(strict && fixed[attrs[s]]))
        .max()
        .unwrap_or(0);
    'attr: for a in start..fixed.len() {
        attrs[slot] = a;
        for &v in &plan.completes[slot] {
            let node = &plan.nodes[v];
            if let Some(u) = node.twin {
                let nu = &plan.nodes[u];
                let x = &attrs[nu.first_slot..=nu.last_slot];
                let y = &attrs[node.first_slot..=node.last_slot];
                if x > y || (x == y && y.iter().all(|&b| fixed[b])) {
                    continue 'attr;
                }
            }
        }
        fill_attrs(plan, fixed, slot + 1, attrs, emit);
    }
}

struct SkeletonProblem {
    plan: Plan,
    table: LeafTable,
    lists: Vec<Vec<u32>>,
}

impl SkeletonProblem {
    fn new(sk: &Skeleton, ds: &EncodedDataset, grid: &CandidateGrid) -> Self {
        let space = scheme_leaf_space(sk.scheme, grid, ds);
        let mut offsets = Vec::with_capacity(space.per_attr.len());
        let mut next = 0u32;
        for leaves in &space.per_attr {
            offsets.push(next);
            next += leaves.len() as u32;
        }
        let table = LeafTable::new(space.all().copied().collect(), ds, false);
        let lists = sk
            .attrs
            .iter()
            .map(|&a| (offsets[a]..offsets[a] + space.per_attr[a].len() as u32).collect())
            .collect();
        SkeletonProblem {
            plan: Plan::new(&sk.shape),
            table,
            lists,
        }
    }
}

/// Best threshold assignment for `sk` on `ds` over the grid `grid`.
///
/// Returns `None` when no assignment reaches `incumbent`. Otherwise the
/// returned accuracy is the exact maximum over all assignments that keep the
/// formula canonical, and the assignment is the first one attaining it.
pub fn optimize_thresholds(
    sk: &Skeleton,
    ds: &EncodedDataset,
    grid: &CandidateGrid,
    incumbent: Accuracy,
) -> Option<(Vec<Proposition>, Accuracy)> {
    if ds.is_empty() {
        return None;
    }
    let n = ds.len() as u64;
    let sp = SkeletonProblem::new(sk, ds, grid);
    let prob = Problem::new(ds, &sp.table, false);
    let cands: Vec<&[u32]> = sp.lists.iter().map(Vec::as_slice).collect();
    let need = if incumbent.total == 0 {
        0
    } else {
        (incumbent.agree * n).div_ceil(incumbent.total)
    };
    let mut walker = Walker::new(&prob, &sp.plan, &cands, need as i64 - 1, u64::MAX, None);
    walker.run(None);
    let (agree, assign) = walker.finish().best?;
    let leaves = assign
        .iter()
        .map(|&id| sp.table.props[id as usize])
        .collect();
    Some((leaves, Accuracy::new(agree, n)))
}

/// An upper bound on the accuracy of every instantiation of `sk` on `ds`.
///
/// Each slot is replaced by what all of its candidates agree on and the
/// formula is evaluated in three-valued logic; points where the result is
/// decided and wrong are certain errors. With a single slot the bound is
/// the exact maximum.
pub fn accuracy_upper_bound(sk: &Skeleton, ds: &EncodedDataset) -> Accuracy {
    let n = ds.len() as u64;
    if n == 0 {
        return Accuracy::new(0, 0);
    }
    let grid = candidate_grid(ds);
    if sk.shape.slots() == 1 {
        let exact = optimize_thresholds(sk, ds, &grid, Accuracy::new(0, n));
        return exact.map_or(Accuracy::new(0, n), |(_, acc)| acc);
    }
    let sp = SkeletonProblem::new(sk, ds, &grid);
    let prob = Problem::new(ds, &sp.table, false);
    let cands: Vec<&[u32]> = sp.lists.iter().map(Vec::as_slice).collect();
    let mut walker = Walker::new(&prob, &sp.plan, &cands, -1, u64::MAX, None);
    for slot in 0..sp.plan.slots() {
        walker.set_leaf(slot, LeafState::Hull);
    }
    Accuracy::new(walker.bound(), n)
}
