//! Rewrite rules as pattern pairs over the grammar, and the built-in catalog.
//!
//! A pattern is an [`Expr`] whose leaves may be placeholders `a`, `b`, ...
//! that bind arbitrary sub-expressions. Rules are written in the rule-string
//! syntax, one per line, as `name : LHS_SEQ => RHS_SEQ`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::grammar::{Expr, GrammarError, Op, RuleSequence};

/// Patterns share the expression representation; placeholders are leaves.
pub type Pattern = Expr;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RewriteError {
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("rule `{rule}`: {side} pattern leaves an open nonterminal")]
    Incomplete { rule: String, side: &'static str },
    #[error("rule `{rule}`: placeholder `{placeholder}` appears on the right but not on the left")]
    UnboundPlaceholder { rule: String, placeholder: char },
    #[error("unknown rule category `{0}`")]
    UnknownCategory(String),
    #[error("line {line}: {message}")]
    Dsl { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Commutative,
    Associative,
    Distributive,
    Factorization,
    LogExp,
    Trig,
    HalfAngle,
    Derivative,
    Custom,
}

impl Category {
    pub const BUILTIN: [Category; 8] = [
        Category::Commutative,
        Category::Associative,
        Category::Distributive,
        Category::Factorization,
        Category::LogExp,
        Category::Trig,
        Category::HalfAngle,
        Category::Derivative,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Commutative => "commutative",
            Category::Associative => "associative",
            Category::Distributive => "distributive",
            Category::Factorization => "factorization",
            Category::LogExp => "log-exp",
            Category::Trig => "trig",
            Category::HalfAngle => "half-angle",
            Category::Derivative => "derivative",
            Category::Custom => "custom",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = RewriteError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::BUILTIN
            .iter()
            .chain(&[Category::Custom])
            .find(|c| c.name() == s.trim())
            .copied()
            .ok_or_else(|| RewriteError::UnknownCategory(s.trim().to_string()))
    }
}

/// Directed rule `lhs ⇝ rhs`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriteRule {
    name: String,
    category: Category,
    lhs: Pattern,
    rhs: Pattern,
}

impl RewriteRule {
    /// Builds a rule from two placeholder patterns, checking that the right
    /// side binds nothing the left side does not.
    pub fn new(
        name: impl Into<String>,
        category: Category,
        lhs: Pattern,
        rhs: Pattern,
    ) -> Result<Self, RewriteError> {
        let name = name.into();
        for (side, pattern) in [("left", &lhs), ("right", &rhs)] {
            if !pattern.is_complete() {
                return Err(RewriteError::Incomplete { rule: name, side });
            }
        }
        let bound = lhs.placeholders();
        if let Some(&p) = rhs.placeholders().iter().find(|p| !bound.contains(p)) {
            return Err(RewriteError::UnboundPlaceholder {
                rule: name,
                placeholder: p as char,
            });
        }
        Ok(RewriteRule { name, category, lhs, rhs })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn category(&self) -> Category {
        self.category
    }

    pub fn lhs(&self) -> &Pattern {
        &self.lhs
    }

    pub fn rhs(&self) -> &Pattern {
        &self.rhs
    }

    /// The opposite direction, when it is a valid rule that is not merely a
    /// renaming of this one and does not match every class.
    pub fn reversed(&self) -> Option<RewriteRule> {
        if self.rhs.op() == Op::Hole || matches!(self.rhs.op(), Op::Placeholder(_)) {
            return None;
        }
        let rev = RewriteRule::new(
            format!("{}-rev", self.name),
            self.category,
            self.rhs.clone(),
            self.lhs.clone(),
        )
        .ok()?;
        (rev.alpha_key() != self.alpha_key()).then_some(rev)
    }

    /// Both sides with placeholders renamed by first appearance on the left.
    fn alpha_key(&self) -> (Expr, Expr) {
        let mut order = BTreeMap::new();
        for node in self.lhs.preorder() {
            if let Op::Placeholder(c) = node.op() {
                let next = order.len() as u8;
                order.entry(c).or_insert(b'a' + next);
            }
        }
        let rename = |c: u8| order.get(&c).map(|&n| Expr::leaf(Op::Placeholder(n)));
        (self.lhs.substitute(&rename), self.rhs.substitute(&rename))
    }
}

impl fmt::Display for RewriteRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} : {} => {}",
            self.name,
            self.lhs.to_sequence(),
            self.rhs.to_sequence()
        )
    }
}

/// Builds a custom rule from two rule sequences with placeholders.
pub fn make_rule(
    name: &str,
    lhs: &RuleSequence,
    rhs: &RuleSequence,
) -> Result<RewriteRule, RewriteError> {
    make_rule_in(name, Category::Custom, lhs, rhs)
}

fn make_rule_in(
    name: &str,
    category: Category,
    lhs: &RuleSequence,
    rhs: &RuleSequence,
) -> Result<RewriteRule, RewriteError> {
    let side = |seq: &RuleSequence, side| {
        let d = seq.to_expression();
        if !d.is_complete() || !d.discarded.is_empty() {
            return Err(RewriteError::Incomplete { rule: name.to_string(), side });
        }
        Ok(d.expr)
    };
    RewriteRule::new(name, category, side(lhs, "left")?, side(rhs, "right")?)
}

fn parse_line(line: &str, category: Category) -> Result<RewriteRule, String> {
    let (name, body) = line.split_once(':').ok_or("expected `name : LHS => RHS`")?;
    let (lhs, rhs) = body.split_once("=>").ok_or("expected `=>`")?;
    let lhs: RuleSequence = lhs.parse().map_err(|e: GrammarError| e.to_string())?;
    let rhs: RuleSequence = rhs.parse().map_err(|e: GrammarError| e.to_string())?;
    make_rule_in(name.trim(), category, &lhs, &rhs).map_err(|e| e.to_string())
}

fn parse_dsl(text: &str, category: Category) -> Result<Vec<RewriteRule>, RewriteError> {
    text.lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line.split('#').next().unwrap_or("").trim()))
        .filter(|(_, line)| !line.is_empty())
        .map(|(line, text)| {
            parse_line(text, category).map_err(|message| RewriteError::Dsl { line, message })
        })
        .collect()
}

/// Parses a rule file. Every line is one directed rule in category `custom`.
pub fn parse_rules(text: &str) -> Result<Vec<RewriteRule>, RewriteError> {
    parse_dsl(text, Category::Custom)
}

const COMMUTATIVE: &str = "
add-comm : A->(A+A), A->a, A->b => A->(A+A), A->b, A->a
mul-comm : A->A*A, A->a, A->b => A->A*A, A->b, A->a
";

const ASSOCIATIVE: &str = "
add-assoc : A->(A+A), A->(A+A), A->a, A->b, A->c => A->(A+A), A->a, A->(A+A), A->b, A->c
mul-assoc : A->A*A, A->A*A, A->a, A->b, A->c => A->A*A, A->a, A->A*A, A->b, A->c
";

const DISTRIBUTIVE: &str = "
mul-distribute : A->A*A, A->a, A->(A+A), A->b, A->c => A->(A+A), A->A*A, A->a, A->b, A->A*A, A->a, A->c
square-of-sum : A->A^A, A->(A+A), A->a, A->b, A->2 => A->(A+A), A->(A+A), A->A^A, A->a, A->2, A->A*A, A->A*A, A->2, A->a, A->b, A->A^A, A->b, A->2
";

const FACTORIZATION: &str = "
diff-of-squares : A->(A-A), A->A^A, A->a, A->2, A->A^A, A->b, A->2 => A->A*A, A->(A+A), A->a, A->b, A->(A-A), A->a, A->b
factor-square : A->(A+A), A->a, A->A*A, A->b, A->A^A, A->a, A->2 => A->A*A, A->a, A->(A+A), A->1, A->A*A, A->b, A->a
sqrt-product : A->sqrt(A), A->A*A, A->a, A->b => A->A*A, A->sqrt(A), A->a, A->sqrt(A), A->b
quotient-of-squares : A->A/A, A->A^A, A->a, A->2, A->A^A, A->b, A->2 => A->A^A, A->A/A, A->a, A->b, A->2
";

const LOG_EXP: &str = "
exp-sum : A->exp(A), A->(A+A), A->a, A->b => A->A*A, A->exp(A), A->a, A->exp(A), A->b
log-product : A->log(A), A->A*A, A->a, A->b => A->(A+A), A->log(A), A->a, A->log(A), A->b
log-power : A->log(A), A->A^A, A->a, A->b => A->A*A, A->b, A->log(A), A->a
log-quotient : A->log(A), A->A/A, A->a, A->b => A->(A-A), A->log(A), A->a, A->log(A), A->b
exp-cosh : A->(A+A), A->exp(A), A->a, A->exp(A), A->neg(A), A->a => A->A*A, A->2, A->cosh(A), A->a
tanh-exp : A->tanh(A), A->a => A->A/A, A->(A-A), A->exp(A), A->A*A, A->2, A->a, A->1, A->(A+A), A->exp(A), A->A*A, A->2, A->a, A->1
";

const TRIG: &str = "
sin-sum-to-product : A->(A+A), A->sin(A), A->a, A->sin(A), A->b => A->A*A, A->A*A, A->2, A->sin(A), A->A/A, A->(A+A), A->a, A->b, A->2, A->cos(A), A->A/A, A->(A-A), A->a, A->b, A->2
cos-sum-to-product : A->(A+A), A->cos(A), A->a, A->cos(A), A->b => A->A*A, A->A*A, A->2, A->cos(A), A->A/A, A->(A+A), A->a, A->b, A->2, A->cos(A), A->A/A, A->(A-A), A->a, A->b, A->2
sin-cos-to-sum : A->A*A, A->sin(A), A->a, A->cos(A), A->b => A->A/A, A->(A+A), A->sin(A), A->(A+A), A->a, A->b, A->sin(A), A->(A-A), A->a, A->b, A->2
cos-cos-to-sum : A->A*A, A->cos(A), A->a, A->cos(A), A->b => A->A/A, A->(A+A), A->cos(A), A->(A+A), A->a, A->b, A->cos(A), A->(A-A), A->a, A->b, A->2
sin-sin-to-sum : A->A*A, A->sin(A), A->a, A->sin(A), A->b => A->A/A, A->(A-A), A->cos(A), A->(A-A), A->a, A->b, A->cos(A), A->(A+A), A->a, A->b, A->2
sin-double : A->sin(A), A->(A+A), A->a, A->a => A->A*A, A->A*A, A->2, A->sin(A), A->a, A->cos(A), A->a
cos-double : A->cos(A), A->(A+A), A->a, A->a => A->(A-A), A->A^A, A->cos(A), A->a, A->2, A->A^A, A->sin(A), A->a, A->2
cos-double-cos : A->cos(A), A->(A+A), A->a, A->a => A->(A-A), A->A*A, A->2, A->A^A, A->cos(A), A->a, A->2, A->1
cos-double-sin : A->cos(A), A->(A+A), A->a, A->a => A->(A-A), A->1, A->A*A, A->2, A->A^A, A->sin(A), A->a, A->2
tan-double : A->tan(A), A->(A+A), A->a, A->a => A->A/A, A->A*A, A->2, A->tan(A), A->a, A->(A-A), A->1, A->A^A, A->tan(A), A->a, A->2
pythagorean-sin-cos : A->(A+A), A->A^A, A->sin(A), A->a, A->2, A->A^A, A->cos(A), A->a, A->2 => A->1
pythagorean-sec-tan : A->(A-A), A->A^A, A->sec(A), A->a, A->2, A->A^A, A->tan(A), A->a, A->2 => A->1
pythagorean-csc-cot : A->(A-A), A->A^A, A->csc(A), A->a, A->2, A->A^A, A->cot(A), A->a, A->2 => A->1
sin-sum : A->sin(A), A->(A+A), A->a, A->b => A->(A+A), A->A*A, A->sin(A), A->a, A->cos(A), A->b, A->A*A, A->cos(A), A->a, A->sin(A), A->b
sin-diff : A->sin(A), A->(A-A), A->a, A->b => A->(A-A), A->A*A, A->sin(A), A->a, A->cos(A), A->b, A->A*A, A->cos(A), A->a, A->sin(A), A->b
cos-sum : A->cos(A), A->(A+A), A->a, A->b => A->(A-A), A->A*A, A->cos(A), A->a, A->cos(A), A->b, A->A*A, A->sin(A), A->a, A->sin(A), A->b
cos-diff : A->cos(A), A->(A-A), A->a, A->b => A->(A+A), A->A*A, A->cos(A), A->a, A->cos(A), A->b, A->A*A, A->sin(A), A->a, A->sin(A), A->b
tan-sum : A->tan(A), A->(A+A), A->a, A->b => A->A/A, A->(A+A), A->tan(A), A->a, A->tan(A), A->b, A->(A-A), A->1, A->A*A, A->tan(A), A->a, A->tan(A), A->b
tan-diff : A->tan(A), A->(A-A), A->a, A->b => A->A/A, A->(A-A), A->tan(A), A->a, A->tan(A), A->b, A->(A+A), A->1, A->A*A, A->tan(A), A->a, A->tan(A), A->b
cos-sin-product : A->A*A, A->cos(A), A->a, A->sin(A), A->a => A->A/A, A->sin(A), A->A*A, A->2, A->a, A->2
";

const HALF_ANGLE: &str = "
half-angle-sin : A->A^A, A->sin(A), A->A/A, A->a, A->2, A->2 => A->A/A, A->(A-A), A->1, A->cos(A), A->a, A->2
half-angle-cos : A->A^A, A->cos(A), A->A/A, A->a, A->2, A->2 => A->A/A, A->(A+A), A->1, A->cos(A), A->a, A->2
half-angle-tan : A->A^A, A->tan(A), A->A/A, A->a, A->2, A->2 => A->A/A, A->(A-A), A->1, A->cos(A), A->a, A->(A+A), A->1, A->cos(A), A->a
";

/// Highest variable index covered by the derivative rules.
pub const DERIVATIVE_VARS: u32 = 4;

fn derivative_dsl() -> String {
    let mut text = String::new();
    for i in 1..=DERIVATIVE_VARS {
        for j in i + 1..=DERIVATIVE_VARS {
            text.push_str(&format!(
                "partial-commute-{i}-{j} : A->d(A)/dx{i}, A->d(A)/dx{j}, A->a => A->d(A)/dx{j}, A->d(A)/dx{i}, A->a\n"
            ));
        }
    }
    for i in 1..=DERIVATIVE_VARS {
        text.push_str(&format!(
            "partial-sum-{i} : A->d(A)/dx{i}, A->(A+A), A->a, A->b => A->(A+A), A->d(A)/dx{i}, A->a, A->d(A)/dx{i}, A->b\n"
        ));
    }
    text
}

/// The forward direction of each identity in a category.
pub fn identities(category: Category) -> Vec<RewriteRule> {
    let text = match category {
        Category::Commutative => COMMUTATIVE.to_string(),
        Category::Associative => ASSOCIATIVE.to_string(),
        Category::Distributive => DISTRIBUTIVE.to_string(),
        Category::Factorization => FACTORIZATION.to_string(),
        Category::LogExp => LOG_EXP.to_string(),
        Category::Trig => TRIG.to_string(),
        Category::HalfAngle => HALF_ANGLE.to_string(),
        Category::Derivative => derivative_dsl(),
        Category::Custom => String::new(),
    };
    parse_dsl(&text, category).expect("built-in catalog parses")
}

/// Every identity in the given categories, in both directions where the
/// reverse is a distinct, well-formed rule. Reverses introducing a fresh
/// placeholder (`1 ⇝ sin²a + cos²a`) are omitted.
pub fn builtin_rules(categories: &[Category]) -> Result<Vec<RewriteRule>, RewriteError> {
    let mut out = Vec::new();
    for &category in categories {
        for rule in identities(category) {
            let rev = rule.reversed();
            out.push(rule);
            out.extend(rev);
        }
    }
    Ok(out)
}

/// Resolves category names, as written in configuration files.
pub fn builtin_rules_named<S: AsRef<str>>(names: &[S]) -> Result<Vec<RewriteRule>, RewriteError> {
    let categories = names
        .iter()
        .map(|n| n.as_ref().parse())
        .collect::<Result<Vec<Category>, _>>()?;
    builtin_rules(&categories)
}

/// The whole built-in catalog.
pub fn all_builtin_rules() -> Vec<RewriteRule> {
    builtin_rules(&Category::BUILTIN).expect("built-in categories")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(text: &str) -> RuleSequence {
        text.parse().unwrap()
    }

    #[test]
    fn make_rule_log_product() {
        let rule = make_rule(
            "log-product",
            &seq("A->log(A), A->A*A, A->a, A->b"),
            &seq("A->(A+A), A->log(A), A->a, A->log(A), A->b"),
        )
        .unwrap();
        assert_eq!(rule.lhs().to_string(), "log((a * b))");
        assert_eq!(rule.rhs().to_string(), "(log(a) + log(b))");
        assert_eq!(rule.category(), Category::Custom);
    }

    #[test]
    fn make_rule_commutativity() {
        let rule = make_rule(
            "comm",
            &seq("A->(A+A), A->a, A->b"),
            &seq("A->(A+A), A->b, A->a"),
        )
        .unwrap();
        assert_eq!(rule.rhs().to_string(), "(b + a)");
        assert!(rule.reversed().is_none());
    }

    #[test]
    fn make_rule_rejects_unbound_placeholder() {
        let err = make_rule("bad", &seq("A->(A+A), A->a, A->b"), &seq("A->A*A, A->a, A->c"))
            .unwrap_err();
        assert_eq!(
            err,
            RewriteError::UnboundPlaceholder { rule: "bad".into(), placeholder: 'c' }
        );
        let err = make_rule("open", &seq("A->(A+A), A->a"), &seq("A->a")).unwrap_err();
        assert!(matches!(err, RewriteError::Incomplete { side: "left", .. }));
    }

    #[test]
    fn trig_contains_sum_formula_both_ways() {
        let rules = builtin_rules(&[Category::Trig]).unwrap();
        let fwd = rules.iter().find(|r| r.name() == "sin-sum").unwrap();
        assert_eq!(fwd.lhs().to_string(), "sin((a + b))");
        assert_eq!(fwd.rhs().to_string(), "((sin(a) * cos(b)) + (cos(a) * sin(b)))");
        let rev = rules.iter().find(|r| r.name() == "sin-sum-rev").unwrap();
        assert_eq!(rev.lhs(), fwd.rhs());
        assert!(rules.iter().any(|r| r.name() == "sin-diff"));
    }

    #[test]
    fn log_power_present() {
        let rules = builtin_rules(&[Category::LogExp]).unwrap();
        let rule = rules.iter().find(|r| r.name() == "log-power").unwrap();
        assert_eq!(rule.lhs().to_string(), "log((a ^ b))");
        assert_eq!(rule.rhs().to_string(), "(b * log(a))");
    }

    #[test]
    fn derivative_commutation_present() {
        let rules = builtin_rules(&[Category::Derivative]).unwrap();
        let rule = rules.iter().find(|r| r.name() == "partial-commute-1-2").unwrap();
        assert_eq!(rule.lhs().to_string(), "d(d(a)/dx2)/dx1");
        assert_eq!(rule.rhs().to_string(), "d(d(a)/dx1)/dx2");
        assert!(rules.iter().any(|r| r.name() == "partial-commute-1-2-rev"));
    }

    #[test]
    fn pythagorean_reverse_is_omitted() {
        let rules = builtin_rules(&[Category::Trig]).unwrap();
        assert!(rules.iter().any(|r| r.name() == "pythagorean-sin-cos"));
        assert!(!rules.iter().any(|r| r.name().starts_with("pythagorean") && r.name().ends_with("-rev")));
    }

    #[test]
    fn unknown_category() {
        assert_eq!(
            "bogus".parse::<Category>(),
            Err(RewriteError::UnknownCategory("bogus".into()))
        );
        assert!(builtin_rules_named(&["trig", "nope"]).is_err());
        assert_eq!("log-exp".parse::<Category>(), Ok(Category::LogExp));
    }

    #[test]
    fn dsl_round_trip_and_errors() {
        let rules = parse_rules("# comment\nswap : A->A*A, A->a, A->b => A->A*A, A->b, A->a\n").unwrap();
        assert_eq!(rules.len(), 1);
        let again = parse_rules(&rules[0].to_string()).unwrap();
        assert_eq!(again, rules);
        let err = parse_rules("\nbroken A->x1 => A->x2").unwrap_err();
        assert!(matches!(err, RewriteError::Dsl { line: 2, .. }));
    }

    #[test]
    fn names_are_unique() {
        let rules = all_builtin_rules();
        let mut names: Vec<_> = rules.iter().map(|r| r.name()).collect();
        names.sort();
        let before = names.len();
        names.dedup();
        assert_eq!(before, names.len());
    }
}
