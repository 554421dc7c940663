//! Boolean formulas in reverse Polish notation.
//!
//! A formula is a token sequence evaluated with a stack: a leaf pushes its
//! truth value, `¬` replaces the top, `∧`/`∨` pop two values and push one.
//! The sequence `p3 p2 ∧ ¬ p1 ∨` is `p1 ∨ ¬(p2 ∧ p3)`. Size is the token
//! count, so every leaf and every connective counts one.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bits::Bits;
use crate::dataset::{scale_value, unscale, EncodedDataset, Vocabulary};
use crate::propspace::{eval_prop, Proposition};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Leaf(Proposition),
    Not,
    And,
    Or,
}

impl Token {
    /// Structural rank used by the subterm order: `Leaf < Not < And < Or`.
    pub(crate) fn rank(&self) -> u8 {
        match self {
            Token::Leaf(_) => 0,
            Token::Not => 1,
            Token::And => 2,
            Token::Or => 3,
        }
    }
}

/// Well-formed RPN token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Formula {
    rpn: Vec<Token>,
}

/// Checks the stack discipline of an RPN sequence.
pub fn is_well_formed(rpn: &[Token]) -> bool {
    let mut depth: usize = 0;
    for t in rpn {
        match t {
            Token::Leaf(_) => depth += 1,
            Token::Not => {
                if depth == 0 {
                    return false;
                }
            }
            Token::And | Token::Or => {
                if depth < 2 {
                    return false;
                }
                depth -= 1;
            }
        }
    }
    depth == 1
}

impl Formula {
    pub fn new(rpn: Vec<Token>) -> Result<Self> {
        if !is_well_formed(&rpn) {
            return Err(Error::Malformed(format!(
                "token sequence of length {} violates the stack discipline",
                rpn.len()
            )));
        }
        Ok(Formula { rpn })
    }

    pub fn leaf(p: Proposition) -> Self {
        Formula {
            rpn: vec![Token::Leaf(p)],
        }
    }

    pub fn rpn(&self) -> &[Token] {
        &self.rpn
    }

    /// Number of proposition occurrences plus connectives.
    pub fn size(&self) -> usize {
        self.rpn.len()
    }

    pub fn negated(&self) -> Formula {
        let mut rpn = self.rpn.clone();
        rpn.push(Token::Not);
        Formula { rpn }
    }

    pub fn and(&self, other: &Formula) -> Formula {
        self.join(other, Token::And)
    }

    pub fn or(&self, other: &Formula) -> Formula {
        self.join(other, Token::Or)
    }

    fn join(&self, other: &Formula, op: Token) -> Formula {
        let mut rpn = self.rpn.clone();
        rpn.extend_from_slice(&other.rpn);
        rpn.push(op);
        Formula { rpn }
    }

    pub fn propositions(&self) -> impl Iterator<Item = &Proposition> + '_ {
        self.rpn.iter().filter_map(|t| match t {
            Token::Leaf(p) => Some(p),
            _ => None,
        })
    }

    /// Checks every proposition against the attribute kinds of `ds`.
    pub fn validate(&self, ds: &EncodedDataset) -> Result<()> {
        self.propositions().try_for_each(|p| p.validate(ds))
    }

    /// Evaluates the formula at the point in position `pos`.
    pub fn eval(&self, ds: &EncodedDataset, pos: usize) -> bool {
        let mut stack: Vec<bool> = Vec::with_capacity(self.rpn.len());
        for t in &self.rpn {
            match t {
                Token::Leaf(p) => stack.push(eval_prop(p, ds, pos)),
                Token::Not => {
                    let v = stack.pop().expect("well-formed");
                    stack.push(!v);
                }
                Token::And | Token::Or => {
                    let b = stack.pop().expect("well-formed");
                    let a = stack.pop().expect("well-formed");
                    stack.push(if *t == Token::And { a && b } else { a || b });
                }
            }
        }
        stack.pop().expect("well-formed")
    }

    /// Truth values at every point, evaluated word-parallel.
    pub fn truth(&self, ds: &EncodedDataset) -> Bits {
        let mut stack: Vec<Bits> = Vec::new();
        for t in &self.rpn {
            match t {
                Token::Leaf(p) => stack.push(p.mask(ds)),
                Token::Not => stack.last_mut().expect("well-formed").not_assign(),
                Token::And | Token::Or => {
                    let b = stack.pop().expect("well-formed");
                    let a = stack.last_mut().expect("well-formed");
                    if *t == Token::And {
                        a.and_assign(&b);
                    } else {
                        a.or_assign(&b);
                    }
                }
            }
        }
        stack.pop().expect("well-formed")
    }

    pub fn accuracy(&self, ds: &EncodedDataset) -> Accuracy {
        accuracy(self, ds)
    }

    pub fn is_canonical(&self) -> bool {
        is_canonical(self)
    }

    pub fn to_tree(&self) -> Node {
        let mut stack: Vec<Node> = Vec::new();
        for t in &self.rpn {
            match *t {
                Token::Leaf(p) => stack.push(Node::Leaf(p)),
                Token::Not => {
                    let a = stack.pop().expect("well-formed");
                    stack.push(Node::Not(Box::new(a)));
                }
                Token::And | Token::Or => {
                    let b = stack.pop().expect("well-formed");
                    let a = stack.pop().expect("well-formed");
                    let op = if t == &Token::And {
                        BinOp::And
                    } else {
                        BinOp::Or
                    };
                    stack.push(Node::Bin(op, Box::new(a), Box::new(b)));
                }
            }
        }
        stack.pop().expect("well-formed")
    }

    pub fn from_tree(node: &Node) -> Formula {
        let mut rpn = Vec::new();
        node.push_rpn(&mut rpn);
        Formula { rpn }
    }

    /// Infix text with minimal parentheses, e.g. `¬(p ∧ q) ∨ x≥2.9`.
    pub fn render(&self, vocab: &Vocabulary) -> String {
        render_node(&self.to_tree(), vocab, Prec::Top)
    }

    /// Parses text produced by [`Formula::render`]. ASCII spellings `!`/`~`,
    /// `&`, `|`, `>=` and `in` are accepted as well.
    pub fn parse(text: &str, vocab: &Vocabulary) -> Result<Formula> {
        let node = Parser::new(text, vocab).parse()?;
        Ok(Formula::from_tree(&node))
    }

    pub fn to_serialized(&self, vocab: &Vocabulary) -> SerializedFormula {
        let tokens = self
            .rpn
            .iter()
            .map(|t| match *t {
                Token::Not => SerializedToken::Op(OpName::Not),
                Token::And => SerializedToken::Op(OpName::And),
                Token::Or => SerializedToken::Op(OpName::Or),
                Token::Leaf(p) => {
                    let name = vocab.names[p.attr()].clone();
                    let d = vocab.scales[p.attr()].unwrap_or(0);
                    let raw = |v: i64| unscale(v, d).parse::<f64>().expect("decimal text");
                    SerializedToken::Leaf(match p {
                        Proposition::Bool { .. } => SerializedLeaf {
                            attr: name,
                            ge: None,
                            within: None,
                        },
                        Proposition::Pivot { threshold, .. } => SerializedLeaf {
                            attr: name,
                            ge: Some(raw(threshold)),
                            within: None,
                        },
                        Proposition::Interval { lo, hi, .. } => SerializedLeaf {
                            attr: name,
                            ge: None,
                            within: Some([raw(lo), raw(hi)]),
                        },
                    })
                }
            })
            .collect();
        SerializedFormula { rpn: tokens }
    }

    pub fn from_serialized(s: &SerializedFormula, vocab: &Vocabulary) -> Result<Formula> {
        let rpn = s
            .rpn
            .iter()
            .map(|t| match t {
                SerializedToken::Op(OpName::Not) => Ok(Token::Not),
                SerializedToken::Op(OpName::And) => Ok(Token::And),
                SerializedToken::Op(OpName::Or) => Ok(Token::Or),
                SerializedToken::Leaf(leaf) => {
                    let attr = vocab.index_of(&leaf.attr).ok_or_else(|| {
                        Error::Parse(format!("unknown attribute `{}`", leaf.attr))
                    })?;
                    let scale = vocab.scales[attr];
                    let p = match (leaf.ge, leaf.within, scale) {
                        (None, None, None) => Proposition::Bool { attr },
                        (Some(r), None, Some(d)) => Proposition::Pivot {
                            attr,
                            threshold: scale_threshold(r, d, &leaf.attr)?,
                        },
                        (None, Some([l, u]), Some(d)) => Proposition::Interval {
                            attr,
                            lo: scale_threshold(l, d, &leaf.attr)?,
                            hi: scale_threshold(u, d, &leaf.attr)?,
                        },
                        _ => {
                            return Err(Error::Parse(format!(
                                "leaf on `{}` does not match the attribute kind",
                                leaf.attr
                            )))
                        }
                    };
                    if let Proposition::Interval { lo, hi, .. } = p {
                        if lo > hi {
                            return Err(Error::Parse(format!("interval [{lo}, {hi}] is empty")));
                        }
                    }
                    Ok(Token::Leaf(p))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Formula::new(rpn).map_err(|e| Error::Parse(e.to_string()))
    }
}

fn scale_threshold(x: f64, decimals: u32, attr: &str) -> Result<i64> {
    scale_value(x, decimals)
        .ok_or_else(|| Error::Parse(format!("threshold {x} of `{attr}` out of range")))
}

/// JSON form of a formula: the RPN token list with attribute names and
/// thresholds on the original (unscaled) value scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerializedFormula {
    pub rpn: Vec<SerializedToken>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SerializedToken {
    Op(OpName),
    Leaf(SerializedLeaf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpName {
    Not,
    And,
    Or,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SerializedLeaf {
    pub attr: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ge: Option<f64>,
    #[serde(default, rename = "in", skip_serializing_if = "Option::is_none")]
    pub within: Option<[f64; 2]>,
}

/// Exact agreement ratio `agree / total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Accuracy {
    pub agree: u64,
    pub total: u64,
}

impl Accuracy {
    pub fn new(agree: u64, total: u64) -> Self {
        assert!(
            total > 0 && agree <= total,
            "invalid accuracy {agree}/{total}"
        );
        Accuracy { agree, total }
    }

    pub fn value(&self) -> f64 {
        self.agree as f64 / self.total as f64
    }

    pub fn is_perfect(&self) -> bool {
        self.agree == self.total
    }
}

impl Ord for Accuracy {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.agree as u128 * other.total as u128).cmp(&(other.agree as u128 * self.total as u128))
    }
}

impl PartialOrd for Accuracy {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Accuracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{} ({:.4})", self.agree, self.total, self.value())
    }
}

/// Fraction of points where the formula equals the target.
///
/// Panics on an empty dataset.
pub fn accuracy(f: &Formula, ds: &EncodedDataset) -> Accuracy {
    assert!(!ds.is_empty(), "accuracy over an empty dataset");
    let target = Bits::from_fn(ds.len(), |i| ds.target()[i]);
    Accuracy::new(f.truth(ds).count_agree(&target), ds.len() as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    And,
    Or,
}

/// Binary tree form of a formula.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Node {
    Leaf(Proposition),
    Not(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
}

impl Node {
    fn push_rpn(&self, out: &mut Vec<Token>) {
        match self {
            Node::Leaf(p) => out.push(Token::Leaf(*p)),
            Node::Not(a) => {
                a.push_rpn(out);
                out.push(Token::Not);
            }
            Node::Bin(op, a, b) => {
                a.push_rpn(out);
                b.push_rpn(out);
                out.push(match op {
                    BinOp::And => Token::And,
                    BinOp::Or => Token::Or,
                });
            }
        }
    }

    fn rpn(&self) -> Vec<Token> {
        let mut v = Vec::new();
        self.push_rpn(&mut v);
        v
    }

    /// Operands of the maximal chain of `op` rooted here, right-nested
    /// chains flattened. A node that is not `op` is its own single operand.
    fn chain_operands(&self, op: BinOp) -> Vec<&Node> {
        let mut out = Vec::new();
        let mut cur = self;
        while let Node::Bin(o, a, b) = cur {
            if *o != op {
                break;
            }
            out.push(a.as_ref());
            cur = b.as_ref();
        }
        out.push(cur);
        out
    }
}

/// Compares two token sequences under the subterm order: size, then the
/// structural token ranks, then the leaf propositions left to right.
pub fn subterm_cmp(a: &[Token], b: &[Token]) -> Ordering {
    a.len()
        .cmp(&b.len())
        .then_with(|| a.iter().map(Token::rank).cmp(b.iter().map(Token::rank)))
        .then_with(|| leaves_of(a).cmp(leaves_of(b)))
}

fn leaves_of(rpn: &[Token]) -> impl Iterator<Item = &Proposition> + '_ {
    rpn.iter().filter_map(|t| match t {
        Token::Leaf(p) => Some(p),
        _ => None,
    })
}

/// Canonical-form test used to break formula symmetries.
///
/// A formula is canonical when
/// - no `¬` is applied directly to a `¬`;
/// - `∧`/`∨` chains are right-nested: the left operand of an `∧` is never an
///   `∧` (same for `∨`);
/// - the operands of every flattened chain are strictly increasing in the
///   subterm order of [`subterm_cmp`], which rules out both reorderings and
///   repeated operands;
/// - at most one operand of a chain is a negation, since `¬a ∧ ¬b` is
///   always expressible by the smaller `¬(a ∨ b)`.
///
/// Every formula has an equivalent canonical formula of no greater size.
pub fn is_canonical(f: &Formula) -> bool {
    node_canonical(&f.to_tree())
}

fn node_canonical(node: &Node) -> bool {
    match node {
        Node::Leaf(_) => true,
        Node::Not(a) => !matches!(a.as_ref(), Node::Not(_)) && node_canonical(a),
        Node::Bin(op, a, _) => {
            if matches!(a.as_ref(), Node::Bin(o, _, _) if o == op) {
                return false;
            }
            let operands = node.chain_operands(*op);
            let negations = operands
                .iter()
                .filter(|n| matches!(n, Node::Not(_)))
                .count();
            if negations > 1 {
                return false;
            }
            let rpns: Vec<Vec<Token>> = operands.iter().map(|n| n.rpn()).collect();
            if rpns
                .windows(2)
                .any(|w| subterm_cmp(&w[0], &w[1]) != Ordering::Less)
            {
                return false;
            }
            operands
                .iter()
                .all(|n| !matches!(n, Node::Bin(o, _, _) if o == op) && node_canonical(n))
        }
    }
}

/// Rewrites a formula into canonical form without increasing its size.
pub fn canonicalize(f: &Formula) -> Formula {
    Formula::from_tree(&canon_node(&f.to_tree()))
}

fn canon_node(node: &Node) -> Node {
    match node {
        Node::Leaf(p) => Node::Leaf(*p),
        Node::Not(a) => match canon_node(a) {
            Node::Not(inner) => *inner,
            other => Node::Not(Box::new(other)),
        },
        Node::Bin(op, a, b) => {
            let mut operands = Vec::new();
            for child in [a, b] {
                collect_chain(&canon_node(child), *op, &mut operands);
            }
            build_chain(*op, operands)
        }
    }
}

fn collect_chain(node: &Node, op: BinOp, out: &mut Vec<Node>) {
    match node {
        Node::Bin(o, a, b) if *o == op => {
            collect_chain(a, op, out);
            collect_chain(b, op, out);
        }
        other => out.push(other.clone()),
    }
}

fn dual(op: BinOp) -> BinOp {
    match op {
        BinOp::And => BinOp::Or,
        BinOp::Or => BinOp::And,
    }
}

/// Builds a canonical chain from canonical operands that are not `op`
/// chains themselves.
fn build_chain(op: BinOp, mut operands: Vec<Node>) -> Node {
    // ¬a ∧ ¬b ∧ c  →  ¬(a ∨ b) ∧ c
    let negated: Vec<usize> = operands
        .iter()
        .enumerate()
        .filter(|(_, n)| matches!(n, Node::Not(_)))
        .map(|(i, _)| i)
        .collect();
    if negated.len() > 1 {
        let mut inner = Vec::new();
        for &i in negated.iter().rev() {
            match operands.remove(i) {
                Node::Not(x) => collect_chain(&x, dual(op), &mut inner),
                _ => unreachable!(),
            }
        }
        let merged = Node::Not(Box::new(build_chain(dual(op), inner)));
        match merged {
            // the dual chain may have collapsed to a single negation
            Node::Not(x) if matches!(*x, Node::Not(_)) => match *x {
                Node::Not(y) => operands.push(*y),
                _ => unreachable!(),
            },
            other => operands.push(other),
        }
        let mut flat = Vec::new();
        for n in operands {
            collect_chain(&n, op, &mut flat);
        }
        return build_chain(op, flat);
    }
    let mut keyed: Vec<(Vec<Token>, Node)> = operands.into_iter().map(|n| (n.rpn(), n)).collect();
    keyed.sort_by(|x, y| subterm_cmp(&x.0, &y.0));
    keyed.dedup_by(|x, y| x.0 == y.0);
    let mut nodes: Vec<Node> = keyed.into_iter().map(|(_, n)| n).collect();
    let mut acc = nodes.pop().expect("chain has an operand");
    while let Some(n) = nodes.pop() {
        acc = Node::Bin(op, Box::new(n), Box::new(acc));
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Prec {
    Top,
    Or,
    And,
    Unary,
}

fn render_leaf(p: &Proposition, vocab: &Vocabulary) -> String {
    let name = &vocab.names[p.attr()];
    let d = vocab.scales[p.attr()].unwrap_or(0);
    match *p {
        Proposition::Bool { .. } => name.clone(),
        Proposition::Pivot { threshold, .. } => format!("{name}≥{}", unscale(threshold, d)),
        Proposition::Interval { lo, hi, .. } => {
            format!("{name}∈[{},{}]", unscale(lo, d), unscale(hi, d))
        }
    }
}

fn render_node(node: &Node, vocab: &Vocabulary, ctx: Prec) -> String {
    match node {
        Node::Leaf(p) => render_leaf(p, vocab),
        Node::Not(a) => format!("¬{}", render_node(a, vocab, Prec::Unary)),
        Node::Bin(op, a, b) => {
            let (prec, sym) = match op {
                BinOp::And => (Prec::And, "∧"),
                BinOp::Or => (Prec::Or, "∨"),
            };
            // both operands may be same-op chains; the connective is
            // associative so neither side needs parentheses
            let text = format!(
                "{} {sym} {}",
                render_node(a, vocab, prec),
                render_node(b, vocab, prec)
            );
            if prec < ctx {
                format!("({text})")
            } else {
                text
            }
        }
    }
}

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    vocab: &'a Vocabulary,
}

impl<'a> Parser<'a> {
    fn new(text: &str, vocab: &'a Vocabulary) -> Self {
        Parser {
            chars: text.chars().collect(),
            pos: 0,
            vocab,
        }
    }

    fn err(&self, msg: impl fmt::Display) -> Error {
        Error::Parse(format!("{msg} at character {}", self.pos))
    }

    fn skip_ws(&mut self) {
        while self.chars.get(self.pos).is_some_and(|c| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_str(&mut self, s: &str) -> bool {
        self.skip_ws();
        let n = s.chars().count();
        if self.chars.len() >= self.pos + n
            && self.chars[self.pos..self.pos + n]
                .iter()
                .copied()
                .eq(s.chars())
        {
            self.pos += n;
            true
        } else {
            false
        }
    }

    fn parse(mut self) -> Result<Node> {
        let node = self.disjunction(0)?;
        if self.peek().is_some() {
            return Err(self.err("unexpected trailing input"));
        }
        Ok(node)
    }

    fn disjunction(&mut self, depth: usize) -> Result<Node> {
        let mut items = vec![self.conjunction(depth)?];
        while self.eat('∨') || self.eat('|') {
            items.push(self.conjunction(depth)?);
        }
        Ok(right_nest(BinOp::Or, items))
    }

    fn conjunction(&mut self, depth: usize) -> Result<Node> {
        let mut items = vec![self.unary(depth)?];
        while self.eat('∧') || self.eat('&') {
            items.push(self.unary(depth)?);
        }
        Ok(right_nest(BinOp::And, items))
    }

    fn unary(&mut self, depth: usize) -> Result<Node> {
        if depth > 256 {
            return Err(self.err("nesting too deep"));
        }
        if self.eat('¬') || self.eat('!') || self.eat('~') {
            return Ok(Node::Not(Box::new(self.unary(depth + 1)?)));
        }
        if self.eat('(') {
            let inner = self.disjunction(depth + 1)?;
            if !self.eat(')') {
                return Err(self.err("expected `)`"));
            }
            return Ok(inner);
        }
        self.atom()
    }

    fn name(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        while self
            .chars
            .get(self.pos)
            .is_some_and(|&c| !crate::dataset::is_reserved_char(c))
        {
            // `in` after whitespace is the ASCII interval keyword, handled by
            // the caller; names themselves never contain whitespace
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn number(&mut self, attr: usize) -> Result<i64> {
        self.skip_ws();
        let start = self.pos;
        while self
            .chars
            .get(self.pos)
            .is_some_and(|&c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'))
        {
            self.pos += 1;
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        let x: f64 = text
            .parse()
            .map_err(|_| self.err(format!("invalid number `{text}`")))?;
        let d = self.vocab.scales[attr].unwrap_or(0);
        scale_value(x, d).ok_or_else(|| self.err(format!("number `{text}` out of range")))
    }

    fn atom(&mut self) -> Result<Node> {
        let name = self.name();
        if name.is_empty() {
            return Err(self.err("expected an attribute name"));
        }
        let attr = self
            .vocab
            .index_of(&name)
            .ok_or_else(|| self.err(format!("unknown attribute `{name}`")))?;
        let numeric = self.vocab.scales[attr].is_some();
        if self.eat('≥') || self.eat_str(">=") {
            if !numeric {
                return Err(self.err(format!("`{name}` is not numeric")));
            }
            let threshold = self.number(attr)?;
            return Ok(Node::Leaf(Proposition::Pivot { attr, threshold }));
        }
        if self.eat('∈') || self.eat_str("in") {
            if !numeric {
                return Err(self.err(format!("`{name}` is not numeric")));
            }
            if !self.eat('[') {
                return Err(self.err("expected `[`"));
            }
            let lo = self.number(attr)?;
            if !self.eat(',') {
                return Err(self.err("expected `,`"));
            }
            let hi = self.number(attr)?;
            if !self.eat(']') {
                return Err(self.err("expected `]`"));
            }
            if lo > hi {
                return Err(self.err("empty interval"));
            }
            return Ok(Node::Leaf(Proposition::Interval { attr, lo, hi }));
        }
        if numeric {
            return Err(self.err(format!("numeric attribute `{name}` needs `≥` or `∈`")));
        }
        Ok(Node::Leaf(Proposition::Bool { attr }))
    }
}

fn right_nest(op: BinOp, mut items: Vec<Node>) -> Node {
    let mut acc = items.pop().expect("at least one operand");
    while let Some(n) = items.pop() {
        acc = Node::Bin(op, Box::new(n), Box::new(acc));
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(i: usize) -> Token {
        Token::Leaf(Proposition::Bool { attr: i })
    }

    fn f(rpn: Vec<Token>) -> Formula {
        Formula::new(rpn).unwrap()
    }

    fn bool_ds(n_attrs: usize) -> EncodedDataset {
        // all 2^n valuations
        let rows = 1usize << n_attrs;
        let names: Vec<String> = (0..n_attrs).map(|i| format!("p{i}")).collect();
        let cols = (0..n_attrs)
            .map(|a| {
                (
                    names[a].as_str(),
                    (0..rows).map(|r| r >> a & 1 == 1).collect(),
                )
            })
            .collect();
        EncodedDataset::from_columns(cols, vec![], vec![false; rows]).unwrap()
    }

    #[test]
    fn sizes() {
        let neg_and = f(vec![p(0), p(1), Token::And, Token::Not]);
        assert_eq!(neg_and.size(), 4);
        assert_eq!(f(vec![p(0)]).size(), 1);
        let neg_or3 = f(vec![p(0), p(1), p(2), Token::Or, Token::Or, Token::Not]);
        assert_eq!(neg_or3.size(), 6);
    }

    #[test]
    fn malformed_sequences_are_rejected() {
        assert!(Formula::new(vec![]).is_err());
        assert!(Formula::new(vec![Token::Not]).is_err());
        assert!(Formula::new(vec![p(0), p(1)]).is_err());
        assert!(Formula::new(vec![p(0), Token::And]).is_err());
    }

    #[test]
    fn rpn_example_matches_infix() {
        // p3 p2 ∧ ¬ p1 ∨  ==  p1 ∨ ¬(p2 ∧ p3)
        let ds = bool_ds(4);
        let g = f(vec![p(3), p(2), Token::And, Token::Not, p(1), Token::Or]);
        for w in 0..ds.len() {
            let (v1, v2, v3) = (ds.boolean(1, w), ds.boolean(2, w), ds.boolean(3, w));
            assert_eq!(g.eval(&ds, w), v1 || !(v2 && v3));
        }
        assert_eq!(g.render(&ds.vocabulary()), "¬(p3 ∧ p2) ∨ p1");
    }

    #[test]
    fn negation_flips() {
        let ds = bool_ds(1);
        let g = f(vec![p(0), Token::Not]);
        let w = (0..ds.len()).find(|&w| ds.boolean(0, w)).unwrap();
        assert!(!g.eval(&ds, w));
    }

    #[test]
    fn accuracy_counts() {
        let ds = EncodedDataset::from_columns(
            vec![("a", vec![true, true, false, false])],
            vec![],
            vec![true, false, true, false],
        )
        .unwrap();
        assert_eq!(f(vec![p(0)]).accuracy(&ds), Accuracy::new(2, 4));
        let exact = EncodedDataset::from_columns(
            vec![("a", vec![true, false, true])],
            vec![],
            vec![true, false, true],
        )
        .unwrap();
        assert!(f(vec![p(0)]).accuracy(&exact).is_perfect());
    }

    #[test]
    fn accuracy_ordering_is_exact() {
        assert!(Accuracy::new(2, 3) > Accuracy::new(66, 100));
        assert_eq!(
            Accuracy::new(1, 2).cmp(&Accuracy::new(2, 4)),
            Ordering::Equal
        );
    }

    #[test]
    fn canonical_rules() {
        // order p0 < p1
        assert!(!f(vec![p(1), p(0), Token::And]).is_canonical());
        assert!(f(vec![p(0), p(1), Token::And]).is_canonical());
        assert!(!f(vec![p(0), Token::Not, Token::Not]).is_canonical());
        assert!(!f(vec![p(0), p(0), Token::And]).is_canonical());
        // left-nested chain
        assert!(!f(vec![p(0), p(1), Token::And, p(2), Token::And]).is_canonical());
        assert!(f(vec![p(0), p(1), p(2), Token::And, Token::And]).is_canonical());
        // two negated operands
        assert!(!f(vec![p(0), Token::Not, p(1), Token::Not, Token::And]).is_canonical());
        assert!(f(vec![p(0), p(1), Token::Not, Token::And]).is_canonical());
        // mixed chains are fine
        assert!(f(vec![p(0), p(1), p(2), Token::Or, Token::And]).is_canonical());
    }

    #[test]
    fn canonicalize_keeps_semantics_and_size() {
        let ds = bool_ds(3);
        let cases = vec![
            f(vec![p(1), p(0), Token::And]),
            f(vec![p(0), Token::Not, Token::Not]),
            f(vec![
                p(0),
                Token::Not,
                p(1),
                Token::Not,
                Token::And,
                p(2),
                Token::And,
            ]),
            f(vec![
                p(2),
                p(1),
                Token::Or,
                p(0),
                Token::Or,
                Token::Not,
                Token::Not,
            ]),
            f(vec![p(0), p(0), Token::And, p(0), Token::Or]),
        ];
        for g in cases {
            let c = canonicalize(&g);
            assert!(c.is_canonical(), "{:?}", c);
            assert!(c.size() <= g.size());
            assert_eq!(c.truth(&ds), g.truth(&ds));
        }
    }

    #[test]
    fn render_examples() {
        let ds = EncodedDataset::from_columns(
            vec![("p", vec![true]), ("q", vec![false])],
            vec![("age", vec![30]), ("glucose", vec![150])],
            vec![true],
        )
        .unwrap();
        let v = ds.vocabulary();
        let interval = f(vec![
            Token::Leaf(Proposition::Interval {
                attr: 2,
                lo: 25,
                hi: 60,
            }),
            Token::Leaf(Proposition::Interval {
                attr: 3,
                lo: 128,
                hi: 196,
            }),
            Token::And,
        ]);
        assert_eq!(interval.render(&v), "age∈[25,60] ∧ glucose∈[128,196]");
        assert_eq!(f(vec![p(0)]).render(&v), "p");
        assert_eq!(
            f(vec![p(0), p(1), Token::And, Token::Not]).render(&v),
            "¬(p ∧ q)"
        );
        let bm = f(vec![
            p(0),
            Token::Leaf(Proposition::Pivot {
                attr: 2,
                threshold: 767,
            }),
            Token::Or,
            p(1),
            Token::Not,
            Token::And,
        ]);
        assert_eq!(bm.render(&v), "(p ∨ age≥767) ∧ ¬q");
    }

    #[test]
    fn render_unscales_thresholds() {
        let mut ds =
            EncodedDataset::from_columns(vec![], vec![("h", vec![29, 64])], vec![true, false])
                .unwrap();
        let attrs = ds.attributes().to_vec();
        let mut a = attrs[0].clone();
        a.provenance = crate::dataset::Provenance::Numeric {
            column: "h".into(),
            decimals: 1,
        };
        ds = EncodedDataset::new(ds.ids().to_vec(), vec![a], ds.target().to_vec()).unwrap();
        let g = Formula::leaf(Proposition::Interval {
            attr: 0,
            lo: 29,
            hi: 64,
        });
        let text = g.render(&ds.vocabulary());
        assert_eq!(text, "h∈[2.9,6.4]");
        assert_eq!(Formula::parse(&text, &ds.vocabulary()).unwrap(), g);
    }

    #[test]
    fn parse_accepts_ascii() {
        let ds =
            EncodedDataset::from_columns(vec![("p", vec![true])], vec![("x", vec![3])], vec![true])
                .unwrap();
        let v = ds.vocabulary();
        let g = Formula::parse("!(p & x>=3) | x in [1, 4]", &v).unwrap();
        assert_eq!(g.size(), 6);
        assert!(Formula::parse("p ∧", &v).is_err());
        assert!(Formula::parse("x", &v).is_err());
        assert!(Formula::parse("p≥1", &v).is_err());
        assert!(Formula::parse("zz", &v).is_err());
    }

    #[test]
    fn serialization_round_trip() {
        let ds =
            EncodedDataset::from_columns(vec![("p", vec![true])], vec![("x", vec![3])], vec![true])
                .unwrap();
        let v = ds.vocabulary();
        let g = f(vec![
            p(0),
            Token::Leaf(Proposition::Pivot {
                attr: 1,
                threshold: 3,
            }),
            Token::Leaf(Proposition::Interval {
                attr: 1,
                lo: 1,
                hi: 4,
            }),
            Token::Or,
            Token::And,
            Token::Not,
        ]);
        let s = g.to_serialized(&v);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(
            json,
            r#"{"rpn":[{"attr":"p"},{"attr":"x","ge":3.0},{"attr":"x","in":[1.0,4.0]},"or","and","not"]}"#
        );
        let back: SerializedFormula = serde_json::from_str(&json).unwrap();
        assert_eq!(Formula::from_serialized(&back, &v).unwrap(), g);
    }
}
