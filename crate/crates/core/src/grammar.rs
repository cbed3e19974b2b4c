//! Context-free grammar for symbolic expressions.
//!
//! Expressions are built from a single nonterminal `A` by applying production
//! rules such as `A->(A+A)` or `A->log(A)`. Each rule replaces the leftmost
//! open `A`, so a rule sequence is exactly the preorder traversal of the
//! expression tree it derives. The rule-string syntax used here is the wire
//! format everywhere: grammar files, the rewrite DSL, the CLI and the logs.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ordered_float::OrderedFloat;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("malformed rule `{rule}`: unexpected `{token}`")]
    Malformed { rule: String, token: String },
    #[error("variable x{0} is not covered by the input vector")]
    MissingVariable(u32),
    #[error("coefficient slot {0} is not covered by the coefficient vector")]
    MissingCoefficient(usize),
    #[error("expression still contains an open nonterminal")]
    Incomplete,
    #[error("expression contains pattern placeholder `{0}`")]
    Placeholder(char),
    #[error("grammar defines no terminal rule")]
    NoTerminals,
}

/// Operator carried by an expression node, an e-node or a production rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Neg,
    Sqrt,
    Log,
    Exp,
    Sin,
    Cos,
    Tan,
    Sec,
    Csc,
    Cot,
    Cosh,
    Tanh,
    /// Partial derivative with respect to `x_i`.
    Partial(u32),
    /// Input variable `x_i`, 1-based.
    Var(u32),
    /// Fitted coefficient. All `const` leaves are the same symbol until fitting.
    Const,
    /// Numeric literal, used by rewrite rules such as the double-angle identities.
    Lit(OrderedFloat<f64>),
    /// The open nonterminal `A` of a partial expression.
    Hole,
    /// Pattern variable `a`, `b`, ... of a rewrite rule.
    Placeholder(u8),
}

const UNARY: &[(&str, Op)] = &[
    ("neg", Op::Neg),
    ("sqrt", Op::Sqrt),
    ("log", Op::Log),
    ("exp", Op::Exp),
    ("sin", Op::Sin),
    ("cos", Op::Cos),
    ("tan", Op::Tan),
    ("sec", Op::Sec),
    ("csc", Op::Csc),
    ("cot", Op::Cot),
    ("cosh", Op::Cosh),
    ("tanh", Op::Tanh),
];

/// Classification of a production rule by the shape of its right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RuleKind {
    BinaryOp,
    UnaryOp,
    TerminalVariable,
    TerminalConst,
    TerminalLiteral,
    NonterminalPlaceholder,
}

impl Op {
    pub fn lit(value: f64) -> Op {
        Op::Lit(OrderedFloat(value))
    }

    pub fn arity(self) -> usize {
        match self {
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Pow => 2,
            Op::Neg
            | Op::Sqrt
            | Op::Log
            | Op::Exp
            | Op::Sin
            | Op::Cos
            | Op::Tan
            | Op::Sec
            | Op::Csc
            | Op::Cot
            | Op::Cosh
            | Op::Tanh
            | Op::Partial(_) => 1,
            Op::Var(_) | Op::Const | Op::Lit(_) | Op::Hole | Op::Placeholder(_) => 0,
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Op::Var(_) | Op::Const | Op::Lit(_))
    }

    fn binary_symbol(self) -> Option<char> {
        match self {
            Op::Add => Some('+'),
            Op::Sub => Some('-'),
            Op::Mul => Some('*'),
            Op::Div => Some('/'),
            Op::Pow => Some('^'),
            _ => None,
        }
    }

    fn unary_name(self) -> Option<&'static str> {
        UNARY.iter().find(|(_, op)| *op == self).map(|(name, _)| *name)
    }

    /// Canonical operator name, also the key used by extraction cost models.
    pub fn tag(self) -> String {
        match self {
            Op::Add => "add".into(),
            Op::Sub => "sub".into(),
            Op::Mul => "mul".into(),
            Op::Div => "div".into(),
            Op::Pow => "pow".into(),
            Op::Partial(i) => format!("partial_{i}"),
            Op::Var(i) => format!("var_{i}"),
            Op::Const => "const".into(),
            Op::Lit(_) => "lit".into(),
            Op::Hole => "hole".into(),
            Op::Placeholder(_) => "placeholder".into(),
            op => op.unary_name().expect("unary operator").into(),
        }
    }

    pub fn kind(self) -> Option<RuleKind> {
        Some(match self {
            Op::Hole => return None,
            Op::Var(_) => RuleKind::TerminalVariable,
            Op::Const => RuleKind::TerminalConst,
            Op::Lit(_) => RuleKind::TerminalLiteral,
            Op::Placeholder(_) => RuleKind::NonterminalPlaceholder,
            op if op.arity() == 2 => RuleKind::BinaryOp,
            _ => RuleKind::UnaryOp,
        })
    }
}

/// A production rule `A->RHS`. The nonterminal `A` itself is not a rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProductionRule(Op);

impl ProductionRule {
    /// Wraps an operator as a rule. Returns `None` for the open nonterminal.
    pub fn new(op: Op) -> Option<Self> {
        (op != Op::Hole).then_some(ProductionRule(op))
    }

    pub fn op(self) -> Op {
        self.0
    }

    pub fn arity(self) -> usize {
        self.0.arity()
    }

    pub fn kind(self) -> RuleKind {
        self.0.kind().expect("rules never wrap the hole")
    }

    pub fn tag(self) -> String {
        self.0.tag()
    }

    pub fn is_terminal(self) -> bool {
        self.0.is_terminal()
    }
}

impl fmt::Display for ProductionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Op::Add => f.write_str("A->(A+A)"),
            Op::Sub => f.write_str("A->(A-A)"),
            Op::Mul => f.write_str("A->A*A"),
            Op::Div => f.write_str("A->A/A"),
            Op::Pow => f.write_str("A->A^A"),
            Op::Partial(i) => write!(f, "A->d(A)/dx{i}"),
            Op::Var(i) => write!(f, "A->x{i}"),
            Op::Const => f.write_str("A->const"),
            Op::Lit(v) => write!(f, "A->{}", v.0),
            Op::Placeholder(c) => write!(f, "A->{}", c as char),
            Op::Hole => unreachable!("the hole is not a rule"),
            op => write!(f, "A->{}(A)", op.unary_name().expect("unary operator")),
        }
    }
}

impl FromStr for ProductionRule {
    type Err = GrammarError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        parse_rule(text)
    }
}

fn strip_outer_parens(body: &str) -> &str {
    if !(body.starts_with('(') && body.ends_with(')')) {
        return body;
    }
    let mut depth = 0i32;
    for (i, ch) in body.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 && i + 1 != body.len() {
                    return body;
                }
            }
            _ => {}
        }
    }
    &body[1..body.len() - 1]
}

fn parse_index(digits: &str) -> Option<u32> {
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok().filter(|&i| i >= 1)
}

/// Parses a single rule string such as `A->sin(A)` or `A->x2`.
pub fn parse_rule(text: &str) -> Result<ProductionRule, GrammarError> {
    let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let malformed = |token: &str| GrammarError::Malformed {
        rule: text.trim().to_string(),
        token: if token.is_empty() {
            "<end of rule>".to_string()
        } else {
            token.to_string()
        },
    };
    let Some(rhs) = compact.strip_prefix("A->") else {
        let head = compact.split("->").next().unwrap_or(&compact);
        return Err(malformed(head));
    };
    let body = strip_outer_parens(rhs);
    if body.is_empty() {
        return Err(malformed(""));
    }

    if let Some(inner) = body.strip_prefix('A').and_then(|s| s.strip_suffix('A')) {
        let op = match inner {
            "+" => Op::Add,
            "-" => Op::Sub,
            "*" => Op::Mul,
            "/" => Op::Div,
            "^" | "**" => Op::Pow,
            _ => return Err(malformed(inner)),
        };
        return Ok(ProductionRule(op));
    }

    for prefix in ["d(A)/dx", "∂(A)/∂x"] {
        if let Some(digits) = body.strip_prefix(prefix) {
            return parse_index(digits)
                .map(|i| ProductionRule(Op::Partial(i)))
                .ok_or_else(|| malformed(digits));
        }
    }

    if let Some(name) = body.strip_suffix("(A)") {
        return UNARY
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, op)| ProductionRule(*op))
            .ok_or_else(|| malformed(name));
    }

    if body == "const" {
        return Ok(ProductionRule(Op::Const));
    }
    if let Some(digits) = body.strip_prefix('x') {
        if !digits.is_empty() {
            return parse_index(digits)
                .map(|i| ProductionRule(Op::Var(i)))
                .ok_or_else(|| malformed(body));
        }
    }
    if body.len() == 1 && body.as_bytes()[0].is_ascii_lowercase() {
        return Ok(ProductionRule(Op::Placeholder(body.as_bytes()[0])));
    }
    if body.starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '.') {
        if let Ok(v) = body.parse::<f64>() {
            if v.is_finite() {
                return Ok(ProductionRule(Op::lit(v)));
            }
        }
    }
    Err(malformed(body))
}

/// An ordered list of production rules, applied leftmost-first from `A`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RuleSequence {
    rules: Vec<ProductionRule>,
}

/// Result of expanding a rule sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivation {
    /// The derived expression; open nonterminals remain as [`Op::Hole`] leaves.
    pub expr: Expr,
    /// Rules left over after the expression closed.
    pub discarded: Vec<ProductionRule>,
}

impl Derivation {
    pub fn is_complete(&self) -> bool {
        self.expr.is_complete()
    }
}

impl RuleSequence {
    pub fn new(rules: Vec<ProductionRule>) -> Self {
        RuleSequence { rules }
    }

    pub fn rules(&self) -> &[ProductionRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn push(&mut self, rule: ProductionRule) {
        self.rules.push(rule);
    }

    /// Open nonterminals left after consuming every rule, or `None` when the
    /// expression closes before the sequence ends.
    pub fn open_nonterminals(&self) -> Option<usize> {
        let mut open = 1usize;
        for rule in &self.rules {
            if open == 0 {
                return None;
            }
            open = open - 1 + rule.arity();
        }
        Some(open)
    }

    /// No nonterminal remains and every rule was consumed.
    pub fn is_complete(&self) -> bool {
        self.open_nonterminals() == Some(0)
    }

    /// Expands the sequence, always rewriting the leftmost nonterminal.
    pub fn to_expression(&self) -> Derivation {
        fn build(rules: &[ProductionRule], pos: &mut usize) -> Expr {
            let Some(rule) = rules.get(*pos) else {
                return Expr::hole();
            };
            *pos += 1;
            let op = rule.op();
            let children = (0..op.arity()).map(|_| build(rules, pos)).collect();
            Expr { op, children }
        }
        let mut pos = 0;
        let expr = build(&self.rules, &mut pos);
        Derivation {
            expr,
            discarded: self.rules[pos..].to_vec(),
        }
    }

    /// Drops rules that would be discarded by [`RuleSequence::to_expression`].
    pub fn truncated(&self) -> RuleSequence {
        let mut open = 1usize;
        let mut end = 0;
        for rule in &self.rules {
            if open == 0 {
                break;
            }
            open = open - 1 + rule.arity();
            end += 1;
        }
        RuleSequence::new(self.rules[..end].to_vec())
    }
}

impl fmt::Display for RuleSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, rule) in self.rules.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{rule}")?;
        }
        Ok(())
    }
}

impl FromStr for RuleSequence {
    type Err = GrammarError;

    /// Rules separated by commas, semicolons or newlines.
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        text.split([',', ';', '\n'])
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(parse_rule)
            .collect::<Result<Vec<_>, _>>()
            .map(RuleSequence::new)
    }
}

impl FromIterator<ProductionRule> for RuleSequence {
    fn from_iter<I: IntoIterator<Item = ProductionRule>>(iter: I) -> Self {
        RuleSequence::new(iter.into_iter().collect())
    }
}

/// Expression tree. Coefficient slots are implicit: the k-th `const` leaf in
/// preorder reads `c[k]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Expr {
    op: Op,
    children: Vec<Expr>,
}

impl Expr {
    /// Builds a node. Panics if the child count does not match the arity.
    pub fn new(op: Op, children: Vec<Expr>) -> Self {
        assert_eq!(op.arity(), children.len(), "arity mismatch for {op:?}");
        Expr { op, children }
    }

    pub fn leaf(op: Op) -> Self {
        Expr::new(op, Vec::new())
    }

    pub fn unary(op: Op, a: Expr) -> Self {
        Expr::new(op, vec![a])
    }

    pub fn binary(op: Op, a: Expr, b: Expr) -> Self {
        Expr::new(op, vec![a, b])
    }

    pub fn var(i: u32) -> Self {
        Expr::leaf(Op::Var(i))
    }

    pub fn constant() -> Self {
        Expr::leaf(Op::Const)
    }

    pub fn lit(v: f64) -> Self {
        Expr::leaf(Op::lit(v))
    }

    pub fn hole() -> Self {
        Expr::leaf(Op::Hole)
    }

    pub fn op(&self) -> Op {
        self.op
    }

    pub fn children(&self) -> &[Expr] {
        &self.children
    }

    /// Parses a complete or partial rule sequence; trailing rules are dropped.
    pub fn parse_sequence(text: &str) -> Result<Expr, GrammarError> {
        Ok(text.parse::<RuleSequence>()?.to_expression().expr)
    }

    pub fn preorder(&self) -> Vec<&Expr> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            out.push(node);
            stack.extend(node.children.iter().rev());
        }
        out
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(Expr::size).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(Expr::depth).max().unwrap_or(0)
    }

    pub fn is_complete(&self) -> bool {
        self.preorder().iter().all(|n| n.op != Op::Hole)
    }

    pub fn coefficient_count(&self) -> usize {
        self.preorder().iter().filter(|n| n.op == Op::Const).count()
    }

    pub fn placeholders(&self) -> BTreeSet<u8> {
        self.preorder()
            .iter()
            .filter_map(|n| match n.op {
                Op::Placeholder(c) => Some(c),
                _ => None,
            })
            .collect()
    }

    /// True when every open nonterminal follows every rule in preorder, which
    /// is the shape a leftmost derivation prefix always has.
    pub fn is_prefix_form(&self) -> bool {
        let mut seen_hole = false;
        for node in self.preorder() {
            if node.op == Op::Hole {
                seen_hole = true;
            } else if seen_hole {
                return false;
            }
        }
        true
    }

    /// Preorder emission of rules. Open nonterminals emit nothing, so for a
    /// partial expression the result is meaningful only in prefix form.
    pub fn to_sequence(&self) -> RuleSequence {
        self.preorder()
            .into_iter()
            .filter_map(|n| ProductionRule::new(n.op))
            .collect()
    }

    /// Replaces every placeholder leaf by the bound expression.
    pub fn substitute(&self, bind: &impl Fn(u8) -> Option<Expr>) -> Expr {
        if let Op::Placeholder(c) = self.op {
            if let Some(e) = bind(c) {
                return e;
            }
        }
        Expr {
            op: self.op,
            children: self.children.iter().map(|c| c.substitute(bind)).collect(),
        }
    }

    /// Re-associates every maximal `+` or `*` chain into a right-nested chain
    /// with the same operand order. Two expressions equal up to associativity
    /// have the same flattened form.
    pub fn flatten_assoc(&self) -> Expr {
        fn collect<'a>(e: &'a Expr, op: Op, out: &mut Vec<&'a Expr>) {
            if e.op == op {
                collect(&e.children[0], op, out);
                collect(&e.children[1], op, out);
            } else {
                out.push(e);
            }
        }
        match self.op {
            Op::Add | Op::Mul => {
                let mut operands = Vec::new();
                collect(self, self.op, &mut operands);
                let mut flat: Vec<Expr> = operands.iter().map(|e| e.flatten_assoc()).collect();
                let mut acc = flat.pop().expect("chain has operands");
                while let Some(next) = flat.pop() {
                    acc = Expr::binary(self.op, next, acc);
                }
                acc
            }
            _ => Expr {
                op: self.op,
                children: self.children.iter().map(Expr::flatten_assoc).collect(),
            },
        }
    }

    pub fn compile(&self) -> Result<Compiled, GrammarError> {
        let mut slot = 0;
        let term = Term::lower(self, &mut slot)?;
        Ok(Compiled::new(&term, slot))
    }

    /// Evaluates at input `x` (index 0 holds `x1`) with coefficients `c`.
    pub fn evaluate(&self, x: &[f64], c: &[f64]) -> Result<f64, GrammarError> {
        self.compile()?.evaluate(x, c)
    }

    fn fmt_infix(&self, f: &mut fmt::Formatter<'_>, slot: &mut usize) -> fmt::Result {
        match self.op {
            Op::Var(i) => write!(f, "x{i}"),
            Op::Const => {
                *slot += 1;
                write!(f, "c{}", *slot)
            }
            Op::Lit(v) => write!(f, "{}", v.0),
            Op::Hole => f.write_str("A"),
            Op::Placeholder(c) => write!(f, "{}", c as char),
            Op::Partial(i) => {
                f.write_str("d(")?;
                self.children[0].fmt_infix(f, slot)?;
                write!(f, ")/dx{i}")
            }
            op => {
                if let Some(sym) = op.binary_symbol() {
                    f.write_str("(")?;
                    self.children[0].fmt_infix(f, slot)?;
                    write!(f, " {sym} ")?;
                    self.children[1].fmt_infix(f, slot)?;
                    f.write_str(")")
                } else {
                    write!(f, "{}(", op.unary_name().expect("unary operator"))?;
                    self.children[0].fmt_infix(f, slot)?;
                    f.write_str(")")
                }
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_infix(f, &mut 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Fun {
    Neg,
    Sqrt,
    Log,
    Exp,
    Sin,
    Cos,
    Tan,
    Sec,
    Csc,
    Cot,
    Cosh,
    Sinh,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Bin {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Numeric form of an expression with coefficient slots resolved and partial
/// derivatives expanded symbolically.
#[derive(Debug, Clone, PartialEq)]
enum Term {
    Var(u32),
    Coef(usize),
    Num(f64),
    Un(Fun, Box<Term>),
    Bin(Bin, Box<Term>, Box<Term>),
}

fn num(v: f64) -> Term {
    Term::Num(v)
}

fn un(f: Fun, a: Term) -> Term {
    Term::Un(f, Box::new(a))
}

fn add(a: Term, b: Term) -> Term {
    match (&a, &b) {
        (Term::Num(x), _) if *x == 0.0 => b,
        (_, Term::Num(y)) if *y == 0.0 => a,
        _ => Term::Bin(Bin::Add, Box::new(a), Box::new(b)),
    }
}

fn sub(a: Term, b: Term) -> Term {
    match (&a, &b) {
        (_, Term::Num(y)) if *y == 0.0 => a,
        (Term::Num(x), _) if *x == 0.0 => un(Fun::Neg, b),
        _ => Term::Bin(Bin::Sub, Box::new(a), Box::new(b)),
    }
}

fn mul(a: Term, b: Term) -> Term {
    match (&a, &b) {
        (Term::Num(x), _) | (_, Term::Num(x)) if *x == 0.0 => num(0.0),
        (Term::Num(x), _) if *x == 1.0 => b,
        (_, Term::Num(y)) if *y == 1.0 => a,
        _ => Term::Bin(Bin::Mul, Box::new(a), Box::new(b)),
    }
}

fn div(a: Term, b: Term) -> Term {
    match &a {
        Term::Num(x) if *x == 0.0 => num(0.0),
        _ => Term::Bin(Bin::Div, Box::new(a), Box::new(b)),
    }
}

fn pow(a: Term, b: Term) -> Term {
    Term::Bin(Bin::Pow, Box::new(a), Box::new(b))
}

impl Term {
    fn lower(e: &Expr, slot: &mut usize) -> Result<Term, GrammarError> {
        let mut kids = Vec::with_capacity(e.children.len());
        if !matches!(e.op, Op::Partial(_)) {
            for child in &e.children {
                kids.push(Term::lower(child, slot)?);
            }
        }
        let mut kid = || Box::new(kids.remove(0));
        Ok(match e.op {
            Op::Var(i) => Term::Var(i),
            Op::Const => {
                *slot += 1;
                Term::Coef(*slot - 1)
            }
            Op::Lit(v) => Term::Num(v.0),
            Op::Hole => return Err(GrammarError::Incomplete),
            Op::Placeholder(c) => return Err(GrammarError::Placeholder(c as char)),
            Op::Partial(i) => Term::lower(&e.children[0], slot)?.derivative(i),
            Op::Add => Term::Bin(Bin::Add, kid(), kid()),
            Op::Sub => Term::Bin(Bin::Sub, kid(), kid()),
            Op::Mul => Term::Bin(Bin::Mul, kid(), kid()),
            Op::Div => Term::Bin(Bin::Div, kid(), kid()),
            Op::Pow => Term::Bin(Bin::Pow, kid(), kid()),
            Op::Neg => Term::Un(Fun::Neg, kid()),
            Op::Sqrt => Term::Un(Fun::Sqrt, kid()),
            Op::Log => Term::Un(Fun::Log, kid()),
            Op::Exp => Term::Un(Fun::Exp, kid()),
            Op::Sin => Term::Un(Fun::Sin, kid()),
            Op::Cos => Term::Un(Fun::Cos, kid()),
            Op::Tan => Term::Un(Fun::Tan, kid()),
            Op::Sec => Term::Un(Fun::Sec, kid()),
            Op::Csc => Term::Un(Fun::Csc, kid()),
            Op::Cot => Term::Un(Fun::Cot, kid()),
            Op::Cosh => Term::Un(Fun::Cosh, kid()),
            Op::Tanh => Term::Un(Fun::Tanh, kid()),
        })
    }

    fn depends_on(&self, var: u32) -> bool {
        match self {
            Term::Var(i) => *i == var,
            Term::Coef(_) | Term::Num(_) => false,
            Term::Un(_, a) => a.depends_on(var),
            Term::Bin(_, a, b) => a.depends_on(var) || b.depends_on(var),
        }
    }

    fn derivative(&self, var: u32) -> Term {
        if !self.depends_on(var) {
            return num(0.0);
        }
        match self {
            Term::Var(_) => num(1.0),
            Term::Coef(_) | Term::Num(_) => num(0.0),
            Term::Un(f, a) => {
                let a = (**a).clone();
                let da = a.derivative(var);
                let outer = match f {
                    Fun::Neg => num(-1.0),
                    Fun::Sqrt => div(num(0.5), un(Fun::Sqrt, a)),
                    Fun::Log => div(num(1.0), a),
                    Fun::Exp => un(Fun::Exp, a),
                    Fun::Sin => un(Fun::Cos, a),
                    Fun::Cos => un(Fun::Neg, un(Fun::Sin, a)),
                    Fun::Tan => pow(un(Fun::Sec, a), num(2.0)),
                    Fun::Sec => mul(un(Fun::Sec, a.clone()), un(Fun::Tan, a)),
                    Fun::Csc => un(Fun::Neg, mul(un(Fun::Csc, a.clone()), un(Fun::Cot, a))),
                    Fun::Cot => un(Fun::Neg, pow(un(Fun::Csc, a), num(2.0))),
                    Fun::Cosh => un(Fun::Sinh, a),
                    Fun::Sinh => un(Fun::Cosh, a),
                    Fun::Tanh => sub(num(1.0), pow(un(Fun::Tanh, a), num(2.0))),
                };
                mul(outer, da)
            }
            Term::Bin(op, a, b) => {
                let (a, b) = ((**a).clone(), (**b).clone());
                let (da, db) = (a.derivative(var), b.derivative(var));
                match op {
                    Bin::Add => add(da, db),
                    Bin::Sub => sub(da, db),
                    Bin::Mul => add(mul(da, b.clone()), mul(a, db)),
                    Bin::Div => div(
                        sub(mul(da, b.clone()), mul(a, db)),
                        pow(b, num(2.0)),
                    ),
                    Bin::Pow => {
                        if b.depends_on(var) {
                            // d(a^b) = a^b (b' ln a + b a' / a)
                            let base = pow(a.clone(), b.clone());
                            mul(
                                base,
                                add(mul(db, un(Fun::Log, a.clone())), div(mul(b, da), a)),
                            )
                        } else {
                            mul(mul(b.clone(), pow(a, sub(b, num(1.0)))), da)
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Instr {
    Var(usize),
    Coef(usize),
    Num(f64),
    Un(Fun),
    Bin(Bin),
}

/// Postfix program for fast repeated evaluation of one expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Compiled {
    code: Vec<Instr>,
    n_vars: usize,
    n_coefs: usize,
}

impl Compiled {
    fn new(term: &Term, n_coefs: usize) -> Self {
        fn emit(t: &Term, code: &mut Vec<Instr>, n_vars: &mut usize) {
            match t {
                Term::Var(i) => {
                    *n_vars = (*n_vars).max(*i as usize);
                    code.push(Instr::Var(*i as usize - 1));
                }
                Term::Coef(k) => code.push(Instr::Coef(*k)),
                Term::Num(v) => code.push(Instr::Num(*v)),
                Term::Un(f, a) => {
                    emit(a, code, n_vars);
                    code.push(Instr::Un(*f));
                }
                Term::Bin(op, a, b) => {
                    emit(a, code, n_vars);
                    emit(b, code, n_vars);
                    code.push(Instr::Bin(*op));
                }
            }
        }
        let mut code = Vec::new();
        let mut n_vars = 0;
        emit(term, &mut code, &mut n_vars);
        Compiled {
            code,
            n_vars,
            n_coefs,
        }
    }

    /// Highest variable index read.
    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_coefs(&self) -> usize {
        self.n_coefs
    }

    fn check(&self, x: &[f64], c: &[f64]) -> Result<(), GrammarError> {
        if x.len() < self.n_vars {
            return Err(GrammarError::MissingVariable(self.n_vars as u32));
        }
        if c.len() < self.n_coefs {
            return Err(GrammarError::MissingCoefficient(c.len()));
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &[f64], c: &[f64]) -> Result<f64, GrammarError> {
        self.check(x, c)?;
        Ok(self.run(x, c, &mut Vec::with_capacity(8)))
    }

    /// Evaluates every row of `inputs` into `out`.
    pub fn predict(
        &self,
        inputs: &[Vec<f64>],
        c: &[f64],
        out: &mut Vec<f64>,
    ) -> Result<(), GrammarError> {
        out.clear();
        if let Some(row) = inputs.first() {
            self.check(row, c)?;
        }
        let mut stack = Vec::with_capacity(8);
        for row in inputs {
            if row.len() < self.n_vars {
                return Err(GrammarError::MissingVariable(self.n_vars as u32));
            }
            out.push(self.run(row, c, &mut stack));
        }
        Ok(())
    }

    fn run(&self, x: &[f64], c: &[f64], stack: &mut Vec<f64>) -> f64 {
        stack.clear();
        for instr in &self.code {
            match *instr {
                Instr::Var(i) => stack.push(x[i]),
                Instr::Coef(k) => stack.push(c[k]),
                Instr::Num(v) => stack.push(v),
                Instr::Un(f) => {
                    let a = stack.pop().expect("operand");
                    stack.push(match f {
                        Fun::Neg => -a,
                        Fun::Sqrt => a.sqrt(),
                        Fun::Log => a.ln(),
                        Fun::Exp => a.exp(),
                        Fun::Sin => a.sin(),
                        Fun::Cos => a.cos(),
                        Fun::Tan => a.tan(),
                        Fun::Sec => 1.0 / a.cos(),
                        Fun::Csc => 1.0 / a.sin(),
                        Fun::Cot => 1.0 / a.tan(),
                        Fun::Cosh => a.cosh(),
                        Fun::Sinh => a.sinh(),
                        Fun::Tanh => a.tanh(),
                    });
                }
                Instr::Bin(op) => {
                    let b = stack.pop().expect("operand");
                    let a = stack.pop().expect("operand");
                    stack.push(match op {
                        Bin::Add => a + b,
                        Bin::Sub => a - b,
                        Bin::Mul => a * b,
                        Bin::Div => a / b,
                        Bin::Pow => a.powf(b),
                    });
                }
            }
        }
        stack.pop().expect("result")
    }
}

/// A set of production rules over the single nonterminal `A`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    rules: Vec<ProductionRule>,
}

impl Grammar {
    /// Duplicate rules are dropped, keeping first occurrence order.
    pub fn new(rules: Vec<ProductionRule>) -> Result<Self, GrammarError> {
        let mut seen = BTreeSet::new();
        let rules: Vec<_> = rules.into_iter().filter(|r| seen.insert(*r)).collect();
        if !rules.iter().any(|r| r.is_terminal()) {
            return Err(GrammarError::NoTerminals);
        }
        Ok(Grammar { rules })
    }

    /// Parses a grammar file: one rule per line, `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, GrammarError> {
        let rules = text
            .lines()
            .map(|line| line.split('#').next().unwrap_or("").trim())
            .filter(|line| !line.is_empty())
            .map(parse_rule)
            .collect::<Result<Vec<_>, _>>()?;
        Grammar::new(rules)
    }

    /// Binary and unary operator rules plus `x1..xn` and `const`.
    pub fn with_operators(ops: &[Op], n_vars: u32, with_const: bool) -> Result<Self, GrammarError> {
        let mut rules: Vec<ProductionRule> =
            ops.iter().filter_map(|&op| ProductionRule::new(op)).collect();
        rules.extend((1..=n_vars).map(|i| ProductionRule(Op::Var(i))));
        if with_const {
            rules.push(ProductionRule(Op::Const));
        }
        Grammar::new(rules)
    }

    pub fn rules(&self) -> &[ProductionRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn index_of(&self, rule: ProductionRule) -> Option<usize> {
        self.rules.iter().position(|r| *r == rule)
    }

    pub fn terminal_indices(&self) -> Vec<usize> {
        (0..self.rules.len()).filter(|&i| self.rules[i].is_terminal()).collect()
    }

    /// Closes every open nonterminal with a uniformly drawn terminal rule.
    /// Rules past the point where the expression closes are dropped first.
    pub fn complete_randomly<R: Rng + ?Sized>(&self, seq: &RuleSequence, rng: &mut R) -> RuleSequence {
        let mut out = seq.truncated();
        let terminals = self.terminal_indices();
        let open = out.open_nonterminals().unwrap_or(0);
        for _ in 0..open {
            let pick = terminals[rng.random_range(0..terminals.len())];
            out.push(self.rules[pick]);
        }
        out
    }
}

impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for rule in &self.rules {
            writeln!(f, "{rule}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(text: &str) -> RuleSequence {
        text.parse().unwrap()
    }

    #[test]
    fn parse_rule_kinds() {
        let add = parse_rule("A->(A+A)").unwrap();
        assert_eq!(add.op(), Op::Add);
        assert_eq!(add.kind(), RuleKind::BinaryOp);
        assert_eq!(add.arity(), 2);
        assert_eq!(add.tag(), "add");

        let x1 = parse_rule("A->x1").unwrap();
        assert_eq!(x1.kind(), RuleKind::TerminalVariable);
        assert_eq!(x1.arity(), 0);
        assert_eq!(x1.tag(), "var_1");

        let sin = parse_rule("A->sin(A)").unwrap();
        assert_eq!(sin.kind(), RuleKind::UnaryOp);
        assert_eq!(sin.arity(), 1);
        assert_eq!(sin.tag(), "sin");
    }

    #[test]
    fn parse_rule_variants() {
        assert_eq!(parse_rule("A -> A * A").unwrap().op(), Op::Mul);
        assert_eq!(parse_rule("A->A**A").unwrap().op(), Op::Pow);
        assert_eq!(parse_rule("A->d(A)/dx2").unwrap().op(), Op::Partial(2));
        assert_eq!(parse_rule("A->∂(A)/∂x3").unwrap().op(), Op::Partial(3));
        assert_eq!(parse_rule("A->0.5").unwrap().op(), Op::lit(0.5));
        assert_eq!(parse_rule("A->b").unwrap().kind(), RuleKind::NonterminalPlaceholder);
        assert_eq!(parse_rule("A->const").unwrap().kind(), RuleKind::TerminalConst);
    }

    #[test]
    fn parse_rule_errors_name_the_token() {
        let err = parse_rule("A->foo(A)").unwrap_err();
        assert_eq!(
            err,
            GrammarError::Malformed { rule: "A->foo(A)".into(), token: "foo".into() }
        );
        let err = parse_rule("B->x1").unwrap_err();
        assert!(matches!(err, GrammarError::Malformed { ref token, .. } if token == "B"));
        let err = parse_rule("A->A%A").unwrap_err();
        assert!(matches!(err, GrammarError::Malformed { ref token, .. } if token == "%"));
        assert!(parse_rule("A->x0").is_err());
        assert!(parse_rule("A->").is_err());
        assert!(parse_rule("A->A").is_err());
    }

    #[test]
    fn rule_text_round_trips() {
        for text in [
            "A->(A+A)", "A->(A-A)", "A->A*A", "A->A/A", "A->A^A", "A->log(A)", "A->tanh(A)",
            "A->d(A)/dx4", "A->x12", "A->const", "A->2", "A->0.5", "A->a",
        ] {
            assert_eq!(parse_rule(text).unwrap().to_string(), text);
        }
    }

    #[test]
    fn c1_log_x1_from_rules() {
        let d = seq("A->A*A, A->const, A->log(A), A->x1").to_expression();
        assert!(d.is_complete());
        assert!(d.discarded.is_empty());
        let expected = Expr::binary(Op::Mul, Expr::constant(), Expr::unary(Op::Log, Expr::var(1)));
        assert_eq!(d.expr, expected);
        assert_eq!(d.expr.to_string(), "(c1 * log(x1))");
    }

    #[test]
    fn single_terminal_and_partial() {
        assert_eq!(seq("A->x1").to_expression().expr, Expr::var(1));
        let d = seq("A->(A+A), A->x1").to_expression();
        assert!(!d.is_complete());
        assert_eq!(d.expr, Expr::binary(Op::Add, Expr::var(1), Expr::hole()));
        assert_eq!(d.expr.to_string(), "(x1 + A)");
    }

    #[test]
    fn trailing_rules_are_reported() {
        let s = seq("A->x1, A->x2, A->const");
        assert_eq!(s.open_nonterminals(), None);
        assert!(!s.is_complete());
        let d = s.to_expression();
        assert_eq!(d.expr, Expr::var(1));
        assert_eq!(d.discarded.len(), 2);
        assert_eq!(s.truncated(), seq("A->x1"));
    }

    #[test]
    fn expression_to_sequence_examples() {
        let e = Expr::binary(Op::Mul, Expr::constant(), Expr::unary(Op::Log, Expr::var(1)));
        assert_eq!(e.to_sequence(), seq("A->A*A, A->const, A->log(A), A->x1"));
        assert_eq!(Expr::var(1).to_sequence(), seq("A->x1"));

        let s = seq("A->log(A), A->A*A, A->A^A, A->x1, A->3, A->A^A, A->x2, A->2");
        let e = s.to_expression().expr;
        assert_eq!(e.to_sequence(), s);
        assert_eq!(e.to_string(), "log(((x1 ^ 3) * (x2 ^ 2)))");
    }

    #[test]
    fn evaluate_examples() {
        let e = std::f64::consts::E;
        let expr = Expr::parse_sequence(
            "A->(A+A), A->A*A, A->3, A->log(A), A->x1, A->A*A, A->2, A->log(A), A->x2",
        )
        .unwrap();
        assert!((expr.evaluate(&[e, e], &[]).unwrap() - 5.0).abs() < 1e-12);

        let expr = Expr::parse_sequence("A->A*A, A->const, A->log(A), A->x1").unwrap();
        assert_eq!(expr.evaluate(&[1.0], &[7.0]).unwrap(), 0.0);

        let expr = Expr::parse_sequence("A->sin(A), A->(A+A), A->x1, A->x2").unwrap();
        assert_eq!(expr.evaluate(&[0.0, 0.0], &[]).unwrap(), 0.0);
    }

    #[test]
    fn evaluate_domain_and_argument_errors() {
        let log = Expr::parse_sequence("A->log(A), A->x1").unwrap();
        assert!(log.evaluate(&[-1.0], &[]).unwrap().is_nan());
        let div = Expr::parse_sequence("A->A/A, A->x1, A->x2").unwrap();
        assert!(div.evaluate(&[1.0, 0.0], &[]).unwrap().is_infinite());
        assert_eq!(div.evaluate(&[1.0], &[]), Err(GrammarError::MissingVariable(2)));
        let c = Expr::parse_sequence("A->A*A, A->const, A->const").unwrap();
        assert_eq!(c.evaluate(&[], &[1.0]), Err(GrammarError::MissingCoefficient(1)));
        let partial = Expr::parse_sequence("A->(A+A), A->x1").unwrap();
        assert_eq!(partial.evaluate(&[1.0], &[]), Err(GrammarError::Incomplete));
    }

    #[test]
    fn coefficient_slots_follow_preorder() {
        // c1 * x1 + c2 * x2 with c = (2, 5)
        let e = Expr::parse_sequence(
            "A->(A+A), A->A*A, A->const, A->x1, A->A*A, A->const, A->x2",
        )
        .unwrap();
        assert_eq!(e.coefficient_count(), 2);
        assert_eq!(e.evaluate(&[1.0, 10.0], &[2.0, 5.0]).unwrap(), 52.0);
        assert_eq!(e.to_string(), "((c1 * x1) + (c2 * x2))");
    }

    #[test]
    fn partial_derivatives_evaluate_symbolically() {
        // d/dx1 d/dx2 (x1 * x2^2) = 2 x2
        let e = Expr::parse_sequence(
            "A->d(A)/dx1, A->d(A)/dx2, A->A*A, A->x1, A->A^A, A->x2, A->2",
        )
        .unwrap();
        assert!((e.evaluate(&[0.7, 1.5], &[]).unwrap() - 3.0).abs() < 1e-12);
        // d/dx1 (c1 * sin(x1)) = c1 cos(x1)
        let e = Expr::parse_sequence("A->d(A)/dx1, A->A*A, A->const, A->sin(A), A->x1").unwrap();
        assert!((e.evaluate(&[0.3], &[2.0]).unwrap() - 2.0 * 0.3f64.cos()).abs() < 1e-12);
    }

    #[test]
    fn complete_randomly_behaviour() {
        let g = Grammar::parse("A->(A+A)\nA->A*A\nA->log(A)\nA->x1\nA->x2\nA->const # c\n").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let partial = seq("A->(A+A), A->x1");
        let done = g.complete_randomly(&partial, &mut rng);
        assert!(done.is_complete());
        assert_eq!(done.len(), 3);
        assert_eq!(&done.rules()[..2], partial.rules());
        assert!(done.rules()[2].is_terminal());
        // fixed-seed snapshot
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(g.complete_randomly(&partial, &mut rng), done);

        let complete = seq("A->x1");
        assert_eq!(g.complete_randomly(&complete, &mut rng), complete);

        let sin = seq("A->sin(A)");
        assert_eq!(g.complete_randomly(&sin, &mut rng).len(), 2);
    }

    #[test]
    fn grammar_requires_terminal() {
        assert_eq!(Grammar::parse("A->(A+A)"), Err(GrammarError::NoTerminals));
    }

    #[test]
    fn flatten_assoc_ignores_grouping() {
        let left = Expr::parse_sequence("A->A*A, A->A*A, A->x1, A->x2, A->x3").unwrap();
        let right = Expr::parse_sequence("A->A*A, A->x1, A->A*A, A->x2, A->x3").unwrap();
        assert_ne!(left, right);
        assert_eq!(left.flatten_assoc(), right.flatten_assoc());
        let swapped = Expr::parse_sequence("A->A*A, A->x2, A->A*A, A->x1, A->x3").unwrap();
        assert_ne!(swapped.flatten_assoc(), right.flatten_assoc());
    }
}
