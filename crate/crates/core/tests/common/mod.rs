// Helpers shared by the integration tests: random small datasets and an
// exhaustive RPN oracle that shares no code with the search engine.
#![allow(dead_code)]

use std::collections::HashMap;

use formula_size::dataset::{AttributeValues, EncodedDataset};
use formula_size::formula::{Formula, Token};
use formula_size::propspace::{Proposition, Scheme};
use rand::Rng;

/// At most 8 points, 1 to 3 attributes mixing Boolean and numeric columns,
/// numeric values in 0..=9.
pub fn random_small(rng: &mut impl Rng) -> EncodedDataset {
    let n = rng.gen_range(1..=8);
    let attrs = rng.gen_range(1..=3);
    let mut bools = Vec::new();
    let mut nums = Vec::new();
    for a in 0..attrs {
        if rng.gen_bool(0.4) {
            bools.push((a, (0..n).map(|_| rng.gen_bool(0.5)).collect::<Vec<bool>>()));
        } else {
            nums.push((
                a,
                (0..n).map(|_| rng.gen_range(0..=9)).collect::<Vec<i64>>(),
            ));
        }
    }
    let names = ["a", "b", "c"];
    let target = (0..n).map(|_| rng.gen_bool(0.5)).collect();
    EncodedDataset::from_columns(
        bools.into_iter().map(|(a, v)| (names[a], v)).collect(),
        nums.into_iter().map(|(a, v)| (names[a], v)).collect(),
        target,
    )
    .unwrap()
}

fn column(ds: &EncodedDataset, attr: usize) -> Result<Vec<i64>, Vec<bool>> {
    match &ds.attribute(attr).values {
        AttributeValues::Numeric(v) => Ok(v.clone()),
        AttributeValues::Boolean(v) => Err(v.clone()),
    }
}

fn pack(bits: impl Iterator<Item = bool>) -> u8 {
    bits.enumerate().fold(0, |m, (i, b)| m | (u8::from(b) << i))
}

/// Truth masks (bit i = point i) of every leaf a scheme admits, computed
/// straight from the raw columns.
pub fn oracle_leaf_masks(ds: &EncodedDataset, scheme: Scheme) -> Vec<u8> {
    let mut out = Vec::new();
    for attr in 0..ds.num_attributes() {
        match column(ds, attr) {
            Err(b) => out.push(pack(b.iter().copied())),
            Ok(v) => {
                let mut grid = v.clone();
                grid.sort();
                grid.dedup();
                match scheme {
                    Scheme::Median => {
                        let mut s = v.clone();
                        s.sort();
                        let m = s[(s.len() - 1) / 2];
                        out.push(pack(v.iter().map(|&x| x >= m)));
                    }
                    Scheme::Pivot => {
                        for &r in &grid {
                            out.push(pack(v.iter().map(|&x| x >= r)));
                        }
                    }
                    Scheme::Interval => {
                        for &l in &grid {
                            for &u in grid.iter().filter(|&&u| u >= l) {
                                out.push(pack(v.iter().map(|&x| l <= x && x <= u)));
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Enumerates every well-formed RPN sequence of exactly `len` tokens over
/// `leaves` and returns the set of truth vectors they compute. Sequences
/// are built token by token; prefixes with the same stack of truth vectors
/// are merged.
struct Rpn {
    leaves: Vec<u8>,
    full: u8,
    memo: HashMap<(Vec<u8>, usize), [u64; 4]>,
}

impl Rpn {
    fn finals(&mut self, stack: &mut Vec<u8>, rem: usize) -> [u64; 4] {
        let mut out = [0u64; 4];
        if rem == 0 {
            if stack.len() == 1 {
                let m = stack[0] as usize;
                out[m / 64] |= 1 << (m % 64);
            }
            return out;
        }
        if stack.len() > rem + 1 {
            return out;
        }
        let key = (stack.clone(), rem);
        if let Some(v) = self.memo.get(&key) {
            return *v;
        }
        let merge = |out: &mut [u64; 4], x: [u64; 4]| {
            for i in 0..4 {
                out[i] |= x[i];
            }
        };
        for i in 0..self.leaves.len() {
            stack.push(self.leaves[i]);
            let r = self.finals(stack, rem - 1);
            merge(&mut out, r);
            stack.pop();
        }
        if let Some(&top) = stack.last() {
            *stack.last_mut().unwrap() = !top & self.full;
            let r = self.finals(stack, rem - 1);
            merge(&mut out, r);
            *stack.last_mut().unwrap() = top;
        }
        if stack.len() >= 2 {
            let b = stack.pop().unwrap();
            let a = stack.pop().unwrap();
            for c in [a & b, a | b] {
                stack.push(c);
                let r = self.finals(stack, rem - 1);
                merge(&mut out, r);
                stack.pop();
            }
            stack.push(a);
            stack.push(b);
        }
        self.memo.insert(key, out);
        out
    }
}

/// Maximal number of agreeing points over all formulas of size at most
/// `max_len`, and the smallest size attaining it.
pub fn oracle_best(ds: &EncodedDataset, scheme: Scheme, max_len: usize) -> (u64, usize) {
    let n = ds.len();
    assert!(n <= 8);
    let full = if n == 8 { 0xff } else { (1u8 << n) - 1 };
    let y = pack(ds.target().iter().copied());
    let mut rpn = Rpn {
        leaves: oracle_leaf_masks(ds, scheme),
        full,
        memo: HashMap::new(),
    };
    let mut best = (0u64, 0usize);
    for len in 1..=max_len {
        let set = rpn.finals(&mut Vec::new(), len);
        for m in 0..256usize {
            if set[m / 64] >> (m % 64) & 1 == 1 {
                let agree = n as u64 - ((m as u8 ^ y) & full).count_ones() as u64;
                if agree > best.0 || best.1 == 0 {
                    best = (agree, len);
                }
            }
        }
    }
    best
}

/// A random leaf valid for `ds`.
pub fn random_leaf(ds: &EncodedDataset, rng: &mut impl Rng) -> Proposition {
    let attr = rng.gen_range(0..ds.num_attributes());
    match column(ds, attr) {
        Err(_) => Proposition::Bool { attr },
        Ok(_) => {
            let a = rng.gen_range(-1..=10);
            let b = rng.gen_range(-1..=10);
            if rng.gen_bool(0.5) {
                Proposition::Pivot { attr, threshold: a }
            } else {
                Proposition::Interval {
                    attr,
                    lo: a.min(b),
                    hi: a.max(b),
                }
            }
        }
    }
}

/// A random well-formed formula of at most `max_len` tokens.
pub fn random_formula(ds: &EncodedDataset, max_len: usize, rng: &mut impl Rng) -> Formula {
    let mut rpn = Vec::new();
    push_random(ds, rng.gen_range(1..=max_len), rng, &mut rpn);
    Formula::new(rpn).unwrap()
}

fn push_random(ds: &EncodedDataset, budget: usize, rng: &mut impl Rng, out: &mut Vec<Token>) {
    let kind = if budget >= 3 {
        rng.gen_range(0..4)
    } else if budget == 2 {
        rng.gen_range(0..2)
    } else {
        0
    };
    match kind {
        0 => out.push(Token::Leaf(random_leaf(ds, rng))),
        1 => {
            push_random(ds, budget - 1, rng, out);
            out.push(Token::Not);
        }
        k => {
            let left = rng.gen_range(1..=budget - 2);
            push_random(ds, left, rng, out);
            push_random(ds, budget - 1 - left, rng, out);
            out.push(if k == 2 { Token::And } else { Token::Or });
        }
    }
}
