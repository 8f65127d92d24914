//! Exact-rational multivariate polynomials over action-probability variables.
//!
//! Every payoff entry in this crate is a [`PolyExpr`]: a canonical sum of
//! monomials with `BigRational` coefficients, the indeterminates being
//! [`ProbVar`]s (one per player action). Arithmetic is exact; floating point
//! enters only when a caller evaluates an expression with [`eval_expr_f64`]
//! or compiles it for the numeric solver.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::collections::BTreeMap;
use std::fmt;

/// Exact rational scalar used throughout the crate.
pub type Rat = BigRational;

/// Builds a rational from a numerator/denominator pair of machine integers.
pub fn rat(num: i64, den: i64) -> Rat {
    Rat::new(BigInt::from(num), BigInt::from(den))
}

/// Converts a float to the rational it represents exactly.
///
/// Panics on NaN or infinity; finite floats are dyadic rationals, so the
/// conversion is lossless.
pub fn rat_from_f64(x: f64) -> Rat {
    Rat::from_float(x).expect("finite float")
}

/// The probability variable of one action of one player.
///
/// Used as a polynomial indeterminate. Ordering is lexicographic by
/// `(player, action)`, which fixes the canonical term order everywhere.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct ProbVar {
    pub player: usize,
    pub action: String,
}

impl ProbVar {
    pub fn new(player: usize, action: impl Into<String>) -> Self {
        ProbVar { player, action: action.into() }
    }
}

impl fmt::Display for ProbVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.action)
    }
}

/// A monomial: map from variable to (positive) exponent. Empty = the constant.
pub type Monomial = BTreeMap<ProbVar, u32>;

/// Canonical multivariate polynomial with exact rational coefficients.
///
/// Invariant: no stored coefficient is zero, so structural equality is
/// mathematical equality.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct PolyExpr {
    terms: BTreeMap<Monomial, Rat>,
}

/// Errors from parsing, resolution and evaluation of expressions.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExprError {
    #[error("syntax error at byte {position}: {message}")]
    SyntaxError { position: usize, message: String },
    #[error("unknown variable `{name}` at byte {position}")]
    UnknownVariable { name: String, position: usize },
    #[error("non-polynomial expression at byte {position}: {message}")]
    NonPolynomial { position: usize, message: String },
    #[error("no value assigned for variable `{0}`")]
    MissingAssignment(String),
}

impl PolyExpr {
    /// The zero polynomial.
    pub fn zero() -> Self {
        PolyExpr::default()
    }

    /// A constant polynomial.
    pub fn constant(c: Rat) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(Monomial::new(), c);
        }
        PolyExpr { terms }
    }

    /// A constant polynomial from a machine integer.
    pub fn from_int(c: i64) -> Self {
        Self::constant(rat(c, 1))
    }

    /// The polynomial consisting of a single variable.
    pub fn var(v: ProbVar) -> Self {
        let mut m = Monomial::new();
        m.insert(v, 1);
        let mut terms = BTreeMap::new();
        terms.insert(m, Rat::one());
        PolyExpr { terms }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// True when the polynomial has no variables.
    pub fn is_constant(&self) -> bool {
        self.terms.keys().all(|m| m.is_empty())
    }

    /// Value of a constant polynomial; `None` if variables are present.
    pub fn constant_value(&self) -> Option<Rat> {
        if self.is_zero() {
            return Some(Rat::zero());
        }
        if self.is_constant() {
            self.terms.get(&Monomial::new()).cloned()
        } else {
            None
        }
    }

    /// Total degree (0 for constants, including zero).
    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|m| m.values().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    /// Iterator over `(monomial, coefficient)` in canonical order.
    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Rat)> {
        self.terms.iter()
    }

    /// All distinct variables, in canonical order.
    pub fn vars(&self) -> Vec<ProbVar> {
        let mut out: Vec<ProbVar> = Vec::new();
        for m in self.terms.keys() {
            for v in m.keys() {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
        }
        out.sort();
        out
    }

    fn add_term(&mut self, m: Monomial, c: Rat) {
        if c.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(m) {
            Entry::Occupied(mut e) => {
                *e.get_mut() += c;
                if e.get().is_zero() {
                    e.remove();
                }
            }
            Entry::Vacant(slot) => {
                slot.insert(c);
            }
        }
    }

    pub fn add(&self, other: &PolyExpr) -> PolyExpr {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &PolyExpr) -> PolyExpr {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), -c.clone());
        }
        out
    }

    pub fn neg(&self) -> PolyExpr {
        let mut out = PolyExpr::zero();
        for (m, c) in &self.terms {
            out.terms.insert(m.clone(), -c.clone());
        }
        out
    }

    pub fn mul(&self, other: &PolyExpr) -> PolyExpr {
        let mut out = PolyExpr::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                let mut m = ma.clone();
                for (v, e) in mb {
                    *m.entry(v.clone()).or_insert(0) += e;
                }
                out.add_term(m, ca * cb);
            }
        }
        out
    }

    pub fn scale(&self, c: &Rat) -> PolyExpr {
        if c.is_zero() {
            return PolyExpr::zero();
        }
        let mut out = PolyExpr::zero();
        for (m, k) in &self.terms {
            out.terms.insert(m.clone(), k * c);
        }
        out
    }
}

impl fmt::Display for PolyExpr {
    /// Canonical form: terms in `(player, action)`-lexicographic monomial
    /// order, constant first, exponents written as repeated factors so the
    /// output re-parses under the expression grammar.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, c) in &self.terms {
            let neg = c.is_negative();
            let abs = c.abs();
            if first {
                if neg {
                    write!(f, "-")?;
                }
                first = false;
            } else if neg {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let mut factors: Vec<String> = Vec::new();
            if !abs.is_one() || m.is_empty() {
                factors.push(fmt_rat(&abs));
            }
            for (v, e) in m {
                for _ in 0..*e {
                    factors.push(v.action.clone());
                }
            }
            write!(f, "{}", factors.join("*"))?;
        }
        Ok(())
    }
}

/// Prints a rational as `n` or `n/d` (used by the canonical form).
pub fn fmt_rat(r: &Rat) -> String {
    if r.denom().is_one() {
        format!("{}", r.numer())
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Rational-valued assignment of variables.
pub type Assignment = BTreeMap<ProbVar, Rat>;

/// Evaluates `e` exactly at a rational assignment.
///
/// Every variable occurring in `e` must be assigned, otherwise
/// [`ExprError::MissingAssignment`] is returned.
pub fn eval_expr(e: &PolyExpr, assignment: &Assignment) -> Result<Rat, ExprError> {
    let mut total = Rat::zero();
    for (m, c) in &e.terms {
        let mut term = c.clone();
        for (v, exp) in m {
            let val = assignment
                .get(v)
                .ok_or_else(|| ExprError::MissingAssignment(v.action.clone()))?;
            for _ in 0..*exp {
                term *= val;
            }
        }
        total += term;
    }
    Ok(total)
}

/// Evaluates `e` in floating point (the solver boundary).
pub fn eval_expr_f64(
    e: &PolyExpr,
    assignment: &BTreeMap<ProbVar, f64>,
) -> Result<f64, ExprError> {
    let mut total = 0.0;
    for (m, c) in &e.terms {
        let mut term = c.to_f64().unwrap_or(f64::NAN);
        for (v, exp) in m {
            let val = assignment
                .get(v)
                .ok_or_else(|| ExprError::MissingAssignment(v.action.clone()))?;
            term *= val.powi(*exp as i32);
        }
        total += term;
    }
    Ok(total)
}

/// Partial derivatives of `e` with respect to each variable in `vars`.
pub fn grad_expr(e: &PolyExpr, vars: &[ProbVar]) -> Vec<PolyExpr> {
    vars.iter().map(|v| partial(e, v)).collect()
}

fn partial(e: &PolyExpr, v: &ProbVar) -> PolyExpr {
    let mut out = PolyExpr::zero();
    for (m, c) in &e.terms {
        if let Some(&exp) = m.get(v) {
            let mut dm = m.clone();
            if exp == 1 {
                dm.remove(v);
            } else {
                dm.insert(v.clone(), exp - 1);
            }
            out.add_term(dm, c * Rat::from(BigInt::from(exp)));
        }
    }
    out
}

/// Replaces each mapped variable by a polynomial; unmapped variables stay.
pub fn substitute(e: &PolyExpr, map: &BTreeMap<ProbVar, PolyExpr>) -> PolyExpr {
    let mut out = PolyExpr::zero();
    for (m, c) in &e.terms {
        let mut term = PolyExpr::constant(c.clone());
        for (v, exp) in m {
            let factor = match map.get(v) {
                Some(p) => p.clone(),
                None => PolyExpr::var(v.clone()),
            };
            for _ in 0..*exp {
                term = term.mul(&factor);
            }
        }
        out = out.add(&term);
    }
    out
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/// Raw expression syntax tree, prior to identifier resolution.
///
/// Grammar (whitespace insensitive):
///
/// ```text
/// expr     := term (('+' | '-') term)*
/// term     := factor (('*' | '/') factor)*
/// factor   := rational | ident | '(' expr ')' | '-' factor
/// rational := digits ['.' digits]
/// ident    := [A-Za-z_][A-Za-z0-9_]*
/// ```
///
/// `a/b` of two integer literals is the usual exact rational; a divisor that
/// is not a nonzero constant is rejected as non-polynomial at resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExprAst {
    Num(Rat),
    Ident { name: String, position: usize },
    Neg(Box<ExprAst>),
    Add(Box<ExprAst>, Box<ExprAst>),
    Sub(Box<ExprAst>, Box<ExprAst>),
    Mul(Box<ExprAst>, Box<ExprAst>),
    Div { num: Box<ExprAst>, den: Box<ExprAst>, position: usize },
}

impl fmt::Display for ExprAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Parenthesize conservatively: additive children of multiplicative
        // nodes and every negation argument, which is enough for
        // parse(print(ast)) == ast up to positions.
        fn needs_parens(e: &ExprAst) -> bool {
            matches!(e, ExprAst::Add(..) | ExprAst::Sub(..) | ExprAst::Neg(..))
        }
        fn child(e: &ExprAst, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            if needs_parens(e) {
                write!(f, "({})", e)
            } else {
                write!(f, "{}", e)
            }
        }
        match self {
            ExprAst::Num(r) => write!(f, "{}", fmt_rat(r)),
            ExprAst::Ident { name, .. } => write!(f, "{}", name),
            ExprAst::Neg(e) => {
                write!(f, "-")?;
                child(e, f)
            }
            ExprAst::Add(a, b) => write!(f, "{} + {}", a, b),
            ExprAst::Sub(a, b) => {
                write!(f, "{} - ", a)?;
                child(b, f)
            }
            ExprAst::Mul(a, b) => {
                child(a, f)?;
                write!(f, "*")?;
                child(b, f)
            }
            ExprAst::Div { num, den, .. } => {
                child(num, f)?;
                write!(f, "/")?;
                child(den, f)
            }
        }
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(Rat),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
    Eof,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src: src.as_bytes(), pos: 0 }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    /// Returns the next token and its starting byte offset.
    fn next(&mut self) -> Result<(Tok, usize), ExprError> {
        self.skip_ws();
        let start = self.pos;
        if self.pos >= self.src.len() {
            return Ok((Tok::Eof, start));
        }
        let c = self.src[self.pos];
        let tok = match c {
            b'+' => {
                self.pos += 1;
                Tok::Plus
            }
            b'-' => {
                self.pos += 1;
                Tok::Minus
            }
            b'*' => {
                self.pos += 1;
                Tok::Star
            }
            b'/' => {
                self.pos += 1;
                Tok::Slash
            }
            b'(' => {
                self.pos += 1;
                Tok::LParen
            }
            b')' => {
                self.pos += 1;
                Tok::RParen
            }
            b',' => {
                self.pos += 1;
                Tok::Comma
            }
            b'0'..=b'9' => {
                let mut end = self.pos;
                while end < self.src.len() && self.src[end].is_ascii_digit() {
                    end += 1;
                }
                let int_part = &self.src[self.pos..end];
                let mut value = Rat::new(
                    BigInt::parse_bytes(int_part, 10).unwrap(),
                    BigInt::one(),
                );
                if end < self.src.len() && self.src[end] == b'.' {
                    let fs = end + 1;
                    let mut fe = fs;
                    while fe < self.src.len() && self.src[fe].is_ascii_digit() {
                        fe += 1;
                    }
                    if fe == fs {
                        return Err(ExprError::SyntaxError {
                            position: end,
                            message: "expected digits after decimal point".into(),
                        });
                    }
                    let frac = BigInt::parse_bytes(&self.src[fs..fe], 10).unwrap();
                    let scale = BigInt::from(10u32).pow((fe - fs) as u32);
                    value += Rat::new(frac, scale);
                    end = fe;
                }
                self.pos = end;
                Tok::Num(value)
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let mut end = self.pos;
                while end < self.src.len()
                    && (self.src[end].is_ascii_alphanumeric() || self.src[end] == b'_')
                {
                    end += 1;
                }
                let name = std::str::from_utf8(&self.src[self.pos..end])
                    .unwrap()
                    .to_string();
                self.pos = end;
                Tok::Ident(name)
            }
            other => {
                return Err(ExprError::SyntaxError {
                    position: self.pos,
                    message: format!("unexpected character `{}`", other as char),
                })
            }
        };
        Ok((tok, start))
    }

    fn peek(&mut self) -> Result<(Tok, usize), ExprError> {
        let save = self.pos;
        let t = self.next();
        self.pos = save;
        t
    }
}

struct Parser<'a> {
    lex: Lexer<'a>,
}

impl<'a> Parser<'a> {
    fn expr(&mut self) -> Result<ExprAst, ExprError> {
        let mut acc = self.term()?;
        loop {
            match self.lex.peek()? {
                (Tok::Plus, _) => {
                    self.lex.next()?;
                    let rhs = self.term()?;
                    acc = ExprAst::Add(Box::new(acc), Box::new(rhs));
                }
                (Tok::Minus, _) => {
                    self.lex.next()?;
                    let rhs = self.term()?;
                    acc = ExprAst::Sub(Box::new(acc), Box::new(rhs));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<ExprAst, ExprError> {
        let mut acc = self.factor()?;
        loop {
            match self.lex.peek()? {
                (Tok::Star, _) => {
                    self.lex.next()?;
                    let rhs = self.factor()?;
                    acc = ExprAst::Mul(Box::new(acc), Box::new(rhs));
                }
                (Tok::Slash, pos) => {
                    self.lex.next()?;
                    let rhs = self.factor()?;
                    acc = ExprAst::Div {
                        num: Box::new(acc),
                        den: Box::new(rhs),
                        position: pos,
                    };
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<ExprAst, ExprError> {
        let (tok, pos) = self.lex.next()?;
        match tok {
            Tok::Num(r) => Ok(ExprAst::Num(r)),
            Tok::Ident(name) => Ok(ExprAst::Ident { name, position: pos }),
            Tok::Minus => {
                let inner = self.factor()?;
                Ok(ExprAst::Neg(Box::new(inner)))
            }
            Tok::LParen => {
                let inner = self.expr()?;
                let (close, cpos) = self.lex.next()?;
                if close != Tok::RParen {
                    return Err(ExprError::SyntaxError {
                        position: cpos,
                        message: "expected `)`".into(),
                    });
                }
                Ok(inner)
            }
            other => Err(ExprError::SyntaxError {
                position: pos,
                message: format!("expected a factor, found {:?}", other),
            }),
        }
    }
}

/// Parses `text` into a raw [`ExprAst`] without resolving identifiers.
pub fn parse_expr_ast(text: &str) -> Result<ExprAst, ExprError> {
    let mut p = Parser { lex: Lexer::new(text) };
    let ast = p.expr()?;
    let (tok, pos) = p.lex.next()?;
    if tok != Tok::Eof {
        return Err(ExprError::SyntaxError {
            position: pos,
            message: format!("unexpected trailing input {:?}", tok),
        });
    }
    Ok(ast)
}

/// Identifier vocabulary: each name maps to the polynomial it stands for
/// (a variable, a constant, or any other polynomial).
pub type Vocab = BTreeMap<String, PolyExpr>;

/// Resolves a raw tree against a vocabulary, producing a canonical polynomial.
///
/// Division requires the divisor to resolve to a nonzero constant; anything
/// else is a [`ExprError::NonPolynomial`].
pub fn resolve_expr(ast: &ExprAst, vocab: &Vocab) -> Result<PolyExpr, ExprError> {
    match ast {
        ExprAst::Num(r) => Ok(PolyExpr::constant(r.clone())),
        ExprAst::Ident { name, position } => vocab.get(name).cloned().ok_or_else(|| {
            ExprError::UnknownVariable { name: name.clone(), position: *position }
        }),
        ExprAst::Neg(e) => Ok(resolve_expr(e, vocab)?.neg()),
        ExprAst::Add(a, b) => Ok(resolve_expr(a, vocab)?.add(&resolve_expr(b, vocab)?)),
        ExprAst::Sub(a, b) => Ok(resolve_expr(a, vocab)?.sub(&resolve_expr(b, vocab)?)),
        ExprAst::Mul(a, b) => Ok(resolve_expr(a, vocab)?.mul(&resolve_expr(b, vocab)?)),
        ExprAst::Div { num, den, position } => {
            let n = resolve_expr(num, vocab)?;
            let d = resolve_expr(den, vocab)?;
            match d.constant_value() {
                Some(c) if !c.is_zero() => Ok(n.scale(&c.recip())),
                Some(_) => Err(ExprError::NonPolynomial {
                    position: *position,
                    message: "division by zero".into(),
                }),
                None => Err(ExprError::NonPolynomial {
                    position: *position,
                    message: "divisor contains variables".into(),
                }),
            }
        }
    }
}

/// Parses and resolves in one step.
pub fn parse_expr(text: &str, vocab: &Vocab) -> Result<PolyExpr, ExprError> {
    resolve_expr(&parse_expr_ast(text)?, vocab)
}
