//! Model files and result serialization.
//!
//! Games are described in a small guarded-command language (extension
//! `.pg`). A file opens with `nfpg` or `pcsg`, then declares constants,
//! players and — for `pcsg` — bounded integer state variables, followed by
//! transition commands and per-player reward blocks. Inside reward
//! expressions the name of an action denotes the probability with which it
//! is played, so belief-dependent terms are written directly, e.g.
//! `5 + 4*(2 - 4*reject)`. The surface syntax borrows the guarded-command
//! style of probabilistic model checkers but is not compatible with any of
//! them; the bundled guide documents the grammar in full.
//!
//! [`parse_model`] produces a [`ModelAst`], [`elaborate`] grounds it into an
//! [`Nfpg`] or [`Pcsg`] under parameter bindings, and [`builtin_models`]
//! ships the case-study catalog. [`write_results`] serializes solver output
//! as CSV or JSON.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::expr::{
    parse_expr_ast, rat, resolve_expr, ExprError, PolyExpr, Rat, Vocab,
};
use crate::game::{EquilibriumCandidate, GameError, Nfpg, IDLE};
use crate::pcsg::{
    Branch, CmpOp, Command, Guard, IntExpr, Pcsg, PcsgError, RewardRule, StateRewardRule, StateVar,
    Update,
};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("{line}:{col}: {message}")]
    SyntaxError {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("{line}:{col}: unknown identifier `{name}`")]
    UnknownIdentifier {
        name: String,
        line: usize,
        col: usize,
    },
    #[error("duplicate action `{0}`")]
    DuplicateAction(String),
    #[error("bad player declarations: {0}")]
    DuplicateOrMissingPlayers(String),
    #[error("`{var}`: {detail}")]
    RangeError { var: String, detail: String },
    #[error("constant `{0}` has neither a declared value nor a binding")]
    UnboundConstant(String),
    #[error("`{0}` is not a parameter of this model")]
    UnknownParameter(String),
    #[error("{context}: not a polynomial after substitution")]
    NonPolynomial { context: String },
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Pcsg(#[from] PcsgError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A ground game produced by [`elaborate`].
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Nfpg(Nfpg),
    Pcsg(Pcsg),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Nfpg(_) => ModelKind::Nfpg,
            Model::Pcsg(_) => ModelKind::Pcsg,
        }
    }

    pub fn as_nfpg(&self) -> Option<&Nfpg> {
        match self {
            Model::Nfpg(g) => Some(g),
            Model::Pcsg(_) => None,
        }
    }

    pub fn as_pcsg(&self) -> Option<&Pcsg> {
        match self {
            Model::Pcsg(g) => Some(g),
            Model::Nfpg(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Nfpg,
    Pcsg,
}

/// `const name;` or `const name = expr;` — the expression may reference
/// earlier constants and is stored as written.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstDecl {
    pub name: String,
    pub value: Option<String>,
}

/// `player name;` (idle, nfpg only) or `player name: a, b;`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlayerDecl {
    pub name: String,
    pub actions: Vec<String>,
}

/// `var name : [lo..hi] init v;` with constant integer bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct VarDecl {
    pub name: String,
    pub lo: IntAst,
    pub hi: IntAst,
    pub init: IntAst,
}

/// Integer arithmetic with unresolved identifiers (constants or state
/// variables, depending on context).
#[derive(Clone, Debug, PartialEq)]
pub enum IntAst {
    Num(i64),
    Ident(String),
    Neg(Box<IntAst>),
    Add(Box<IntAst>, Box<IntAst>),
    Sub(Box<IntAst>, Box<IntAst>),
    Mul(Box<IntAst>, Box<IntAst>),
    Min(Box<IntAst>, Box<IntAst>),
    Max(Box<IntAst>, Box<IntAst>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum GuardAst {
    True,
    False,
    Cmp(IntAst, CmpOp, IntAst),
    And(Box<GuardAst>, Box<GuardAst>),
    Or(Box<GuardAst>, Box<GuardAst>),
    Not(Box<GuardAst>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateAst {
    pub var: String,
    pub value: IntAst,
}

/// One probabilistic outcome: `prob : (x'=e & y'=e)`. A missing probability
/// (allowed only in single-branch commands) means 1.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchAst {
    pub prob: Option<String>,
    pub updates: Vec<UpdateAst>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CommandAst {
    pub label: Vec<String>,
    pub guard: GuardAst,
    pub branches: Vec<BranchAst>,
}

/// `[label] guard : expr;` inside a rewards block. A rule without a label is
/// a state reward (pcsg only, constant expression); a missing guard means
/// `true`. The expression is stored as written.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardRuleAst {
    pub label: Option<Vec<String>>,
    pub guard: GuardAst,
    pub expr: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardBlockAst {
    pub player: String,
    pub rules: Vec<RewardRuleAst>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelAst {
    pub kind: ModelKind,
    pub consts: Vec<ConstDecl>,
    pub players: Vec<PlayerDecl>,
    pub vars: Vec<VarDecl>,
    pub commands: Vec<CommandAst>,
    pub rewards: Vec<RewardBlockAst>,
}

const RESERVED: &[&str] = &[
    "nfpg",
    "pcsg",
    "const",
    "player",
    "var",
    "init",
    "rewards",
    "endrewards",
    "true",
    "false",
    "min",
    "max",
    IDLE,
];

/// Which identifiers an integer expression may reference.
#[derive(Clone, Copy, PartialEq)]
enum IdentCtx {
    ConstsOnly,
    ConstsAndVars,
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    kind: ModelKind,
    consts: BTreeSet<String>,
    /// action name -> index of the declaring player
    actions: BTreeMap<String, usize>,
    players: Vec<PlayerDecl>,
    vars: BTreeSet<String>,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            src,
            pos: 0,
            kind: ModelKind::Nfpg,
            consts: BTreeSet::new(),
            actions: BTreeMap::new(),
            players: Vec::new(),
            vars: BTreeSet::new(),
        }
    }

    fn line_col(&self, pos: usize) -> (usize, usize) {
        let pos = pos.min(self.src.len());
        let before = &self.src[..pos];
        let line = before.matches('\n').count() + 1;
        let col = before.rfind('\n').map_or(pos, |n| pos - n - 1) + 1;
        (line, col)
    }

    fn err_at(&self, pos: usize, message: impl Into<String>) -> ModelError {
        let (line, col) = self.line_col(pos);
        ModelError::SyntaxError {
            line,
            col,
            message: message.into(),
        }
    }

    fn unknown_at(&self, pos: usize, name: &str) -> ModelError {
        let (line, col) = self.line_col(pos);
        ModelError::UnknownIdentifier {
            name: name.to_string(),
            line,
            col,
        }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        loop {
            let rest = self.rest();
            let trimmed = rest.trim_start();
            self.pos += rest.len() - trimmed.len();
            if trimmed.starts_with("//") {
                match trimmed.find('\n') {
                    Some(n) => self.pos += n + 1,
                    None => self.pos = self.src.len(),
                }
            } else {
                return;
            }
        }
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos >= self.src.len()
    }

    fn peek_char(&mut self) -> Option<char> {
        self.skip_ws();
        self.rest().chars().next()
    }

    fn eat_char(&mut self, c: char) -> bool {
        if self.peek_char() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect_char(&mut self, c: char) -> Result<(), ModelError> {
        if self.eat_char(c) {
            Ok(())
        } else {
            Err(self.err_at(self.pos, format!("expected `{c}`")))
        }
    }

    /// Consumes `tok` if the input continues with it (two-character
    /// operators and keywords; keywords must not run into an identifier).
    fn eat_str(&mut self, tok: &str) -> bool {
        self.skip_ws();
        if !self.rest().starts_with(tok) {
            return false;
        }
        if tok.chars().next().is_some_and(ident_start) {
            let after = self.rest()[tok.len()..].chars().next();
            if after.is_some_and(ident_char) {
                return false;
            }
        }
        self.pos += tok.len();
        true
    }

    fn expect_str(&mut self, tok: &str) -> Result<(), ModelError> {
        if self.eat_str(tok) {
            Ok(())
        } else {
            Err(self.err_at(self.pos, format!("expected `{tok}`")))
        }
    }

    /// Parses an identifier, returning it with its starting offset.
    fn ident(&mut self) -> Result<(String, usize), ModelError> {
        self.skip_ws();
        let start = self.pos;
        let rest = self.rest();
        let mut chars = rest.char_indices();
        match chars.next() {
            Some((_, c)) if ident_start(c) => {}
            _ => return Err(self.err_at(start, "expected an identifier")),
        }
        let end = chars
            .find(|&(_, c)| !ident_char(c))
            .map_or(rest.len(), |(i, _)| i);
        self.pos += end;
        Ok((rest[..end].to_string(), start))
    }

    fn number(&mut self) -> Result<i64, ModelError> {
        self.skip_ws();
        let start = self.pos;
        let digits: String = self.rest().chars().take_while(char::is_ascii_digit).collect();
        if digits.is_empty() {
            return Err(self.err_at(start, "expected a number"));
        }
        self.pos += digits.len();
        digits
            .parse()
            .map_err(|_| self.err_at(start, "integer literal out of range"))
    }

    /// Slices raw text up to (but not including) the first `stop` byte at
    /// bracket depth zero, leaving the parser on the stop character.
    fn slice_until(&mut self, stop: u8) -> Result<(String, usize), ModelError> {
        self.skip_ws();
        let start = self.pos;
        let bytes = self.src.as_bytes();
        let mut depth = 0usize;
        let mut i = start;
        while i < bytes.len() {
            match bytes[i] {
                b'(' | b'[' => depth += 1,
                b')' | b']' => {
                    if depth == 0 {
                        return Err(self.err_at(i, "unbalanced bracket"));
                    }
                    depth -= 1;
                }
                b if b == stop && depth == 0 => {
                    let text = self.src[start..i].trim().to_string();
                    self.pos = i;
                    return Ok((text, start));
                }
                _ => {}
            }
            i += 1;
        }
        Err(self.err_at(start, format!("missing `{}`", stop as char)))
    }

    /// Reports whether a `stop` byte occurs at depth zero before `end_stop`.
    fn has_depth0(&self, stop: u8, end_stop: u8) -> bool {
        let bytes = self.src.as_bytes();
        let mut depth = 0usize;
        let mut i = self.pos;
        while i < bytes.len() {
            match bytes[i] {
                b'(' | b'[' => depth += 1,
                b')' | b']' => depth = depth.saturating_sub(1),
                b if b == stop && depth == 0 => return true,
                b if b == end_stop && depth == 0 => return false,
                _ => {}
            }
            i += 1;
        }
        false
    }

    /// Checks a freshly declared name against the reserved words and the
    /// shared constant/action/variable namespace.
    fn declare(&mut self, name: &str, pos: usize, what: &str) -> Result<(), ModelError> {
        if RESERVED.contains(&name) {
            return Err(self.err_at(pos, format!("`{name}` is a reserved word")));
        }
        if self.consts.contains(name) || self.vars.contains(name) || self.actions.contains_key(name)
        {
            return Err(self.err_at(pos, format!("`{name}` is already declared ({what})")));
        }
        Ok(())
    }

    /// Validates an expression slice: it must parse, and every identifier
    /// must be declared and admissible for `allow_actions`/`allow_vars`.
    fn check_expr(
        &self,
        text: &str,
        start: usize,
        allow_actions: bool,
        allow_vars: bool,
    ) -> Result<(), ModelError> {
        let ast = parse_expr_ast(text).map_err(|e| self.lift_expr_err(e, start))?;
        let mut idents = Vec::new();
        collect_idents(&ast, &mut idents);
        for (name, rel) in idents {
            let known = self.consts.contains(&name)
                || (allow_actions && self.actions.contains_key(&name))
                || (allow_vars && self.vars.contains(&name));
            if !known {
                return Err(self.unknown_at(start + rel, &name));
            }
        }
        Ok(())
    }

    fn lift_expr_err(&self, e: ExprError, start: usize) -> ModelError {
        match e {
            ExprError::SyntaxError { position, message } => self.err_at(start + position, message),
            ExprError::UnknownVariable { name, position } => {
                self.unknown_at(start + position, &name)
            }
            ExprError::NonPolynomial { position, message } => {
                self.err_at(start + position, message)
            }
            ExprError::MissingAssignment(name) => {
                self.err_at(start, format!("no value for `{name}`"))
            }
        }
    }

    fn parse_model(&mut self) -> Result<ModelAst, ModelError> {
        self.skip_ws();
        let (kw, pos) = self.ident()?;
        self.kind = match kw.as_str() {
            "nfpg" => ModelKind::Nfpg,
            "pcsg" => ModelKind::Pcsg,
            _ => return Err(self.err_at(pos, "expected `nfpg` or `pcsg` header")),
        };
        let mut ast = ModelAst {
            kind: self.kind,
            consts: Vec::new(),
            players: Vec::new(),
            vars: Vec::new(),
            commands: Vec::new(),
            rewards: Vec::new(),
        };
        while !self.at_end() {
            if self.eat_str("const") {
                ast.consts.push(self.const_decl()?);
            } else if self.eat_str("player") {
                ast.players.push(self.player_decl()?);
            } else if self.eat_str("var") {
                if self.kind == ModelKind::Nfpg {
                    return Err(self.err_at(self.pos, "state variables need a `pcsg` model"));
                }
                ast.vars.push(self.var_decl()?);
            } else if self.eat_str("rewards") {
                ast.rewards.push(self.reward_block()?);
            } else if self.peek_char() == Some('[') {
                if self.kind == ModelKind::Nfpg {
                    return Err(self.err_at(self.pos, "commands need a `pcsg` model"));
                }
                ast.commands.push(self.command()?);
            } else {
                return Err(self.err_at(self.pos, "expected a declaration"));
            }
        }
        if ast.players.is_empty() {
            return Err(ModelError::DuplicateOrMissingPlayers(
                "no players declared".into(),
            ));
        }
        if self.kind == ModelKind::Pcsg {
            if let Some(p) = ast.players.iter().find(|p| p.actions.is_empty()) {
                return Err(ModelError::DuplicateOrMissingPlayers(format!(
                    "pcsg player `{}` declares no actions",
                    p.name
                )));
            }
        }
        Ok(ast)
    }

    fn const_decl(&mut self) -> Result<ConstDecl, ModelError> {
        let (name, pos) = self.ident()?;
        self.declare(&name, pos, "constant")?;
        let value = if self.eat_char('=') {
            let (text, start) = self.slice_until(b';')?;
            if text.is_empty() {
                return Err(self.err_at(start, "missing constant value"));
            }
            self.check_expr(&text, start, false, false)?;
            Some(text)
        } else {
            None
        };
        self.expect_char(';')?;
        self.consts.insert(name.clone());
        Ok(ConstDecl { name, value })
    }

    fn player_decl(&mut self) -> Result<PlayerDecl, ModelError> {
        let (name, pos) = self.ident()?;
        if RESERVED.contains(&name.as_str()) {
            return Err(self.err_at(pos, format!("`{name}` is a reserved word")));
        }
        if self.players.iter().any(|p| p.name == name) {
            return Err(ModelError::DuplicateOrMissingPlayers(format!(
                "player `{name}` declared twice"
            )));
        }
        let mut actions = Vec::new();
        if self.eat_char(':') {
            loop {
                let (a, apos) = self.ident()?;
                if self.actions.contains_key(&a) {
                    return Err(ModelError::DuplicateAction(a));
                }
                self.declare(&a, apos, "action")?;
                self.actions.insert(a.clone(), self.players.len());
                actions.push(a);
                if !self.eat_char(',') {
                    break;
                }
            }
            if actions.is_empty() {
                return Err(self.err_at(self.pos, "expected an action list"));
            }
        }
        self.expect_char(';')?;
        let decl = PlayerDecl { name, actions };
        self.players.push(decl.clone());
        Ok(decl)
    }

    fn var_decl(&mut self) -> Result<VarDecl, ModelError> {
        let (name, pos) = self.ident()?;
        self.declare(&name, pos, "variable")?;
        self.expect_char(':')?;
        self.expect_char('[')?;
        let lo = self.int_expr(IdentCtx::ConstsOnly)?;
        self.expect_str("..")?;
        let hi = self.int_expr(IdentCtx::ConstsOnly)?;
        self.expect_char(']')?;
        self.expect_str("init")?;
        let init = self.int_expr(IdentCtx::ConstsOnly)?;
        self.expect_char(';')?;
        self.vars.insert(name.clone());
        Ok(VarDecl { name, lo, hi, init })
    }

    /// Parses a joint-action label. Every player with declared actions must
    /// occur exactly once; players without actions are implicitly idle.
    fn label(&mut self) -> Result<Vec<String>, ModelError> {
        let lpos = self.pos;
        self.expect_char('[')?;
        let mut label = Vec::new();
        let mut covered = vec![false; self.players.len()];
        if !self.eat_char(']') {
            loop {
                let (a, apos) = self.ident()?;
                let Some(&pi) = self.actions.get(&a) else {
                    return Err(self.unknown_at(apos, &a));
                };
                if covered[pi] {
                    return Err(self.err_at(
                        apos,
                        format!("player `{}` appears twice in this label", self.players[pi].name),
                    ));
                }
                covered[pi] = true;
                label.push(a);
                if !self.eat_char(',') {
                    break;
                }
            }
            self.expect_char(']')?;
        }
        for (pi, p) in self.players.iter().enumerate() {
            if !p.actions.is_empty() && !covered[pi] {
                return Err(self.err_at(
                    lpos,
                    format!("label does not pick an action for player `{}`", p.name),
                ));
            }
        }
        Ok(label)
    }

    fn command(&mut self) -> Result<CommandAst, ModelError> {
        let label = self.label()?;
        let guard = self.guard()?;
        self.expect_str("->")?;
        let mut branches = Vec::new();
        if self.has_depth0(b':', b';') {
            loop {
                let (prob, start) = self.slice_until(b':')?;
                if prob.is_empty() {
                    return Err(self.err_at(start, "missing branch probability"));
                }
                self.check_expr(&prob, start, false, false)?;
                self.expect_char(':')?;
                let updates = self.updates()?;
                branches.push(BranchAst {
                    prob: Some(prob),
                    updates,
                });
                if !self.eat_char('+') {
                    break;
                }
            }
        } else {
            let updates = self.updates()?;
            branches.push(BranchAst {
                prob: None,
                updates,
            });
        }
        self.expect_char(';')?;
        Ok(CommandAst {
            label,
            guard,
            branches,
        })
    }

    fn updates(&mut self) -> Result<Vec<UpdateAst>, ModelError> {
        if self.eat_str("true") {
            return Ok(Vec::new());
        }
        let mut updates = Vec::new();
        let mut seen = BTreeSet::new();
        loop {
            self.expect_char('(')?;
            loop {
                let (var, vpos) = self.ident()?;
                if !self.vars.contains(&var) {
                    return Err(self.unknown_at(vpos, &var));
                }
                if !seen.insert(var.clone()) {
                    return Err(self.err_at(vpos, format!("`{var}` updated twice in one branch")));
                }
                self.expect_char('\'')?;
                self.expect_char('=')?;
                let value = self.int_expr(IdentCtx::ConstsAndVars)?;
                updates.push(UpdateAst { var, value });
                if !self.eat_char('&') {
                    break;
                }
            }
            self.expect_char(')')?;
            if !self.eat_char('&') {
                return Ok(updates);
            }
        }
    }

    fn reward_block(&mut self) -> Result<RewardBlockAst, ModelError> {
        self.skip_ws();
        let qpos = self.pos;
        self.expect_char('"')?;
        let rest = self.rest();
        let Some(n) = rest.find('"') else {
            return Err(self.err_at(qpos, "unterminated player name"));
        };
        let player = rest[..n].to_string();
        self.pos += n + 1;
        if !self.players.iter().any(|p| p.name == player) {
            return Err(self.unknown_at(qpos, &player));
        }
        let mut rules = Vec::new();
        while !self.eat_str("endrewards") {
            if self.at_end() {
                return Err(self.err_at(self.pos, "missing `endrewards`"));
            }
            rules.push(self.reward_rule()?);
        }
        Ok(RewardBlockAst { player, rules })
    }

    fn reward_rule(&mut self) -> Result<RewardRuleAst, ModelError> {
        let label = if self.peek_char() == Some('[') {
            Some(self.label()?)
        } else {
            if self.kind == ModelKind::Nfpg {
                return Err(self.err_at(self.pos, "nfpg reward rules need an action label"));
            }
            None
        };
        let guard = if self.peek_char() == Some(':') {
            GuardAst::True
        } else {
            if self.kind == ModelKind::Nfpg {
                return Err(self.err_at(self.pos, "state guards need a `pcsg` model"));
            }
            self.guard()?
        };
        self.expect_char(':')?;
        let (expr, start) = self.slice_until(b';')?;
        if expr.is_empty() {
            return Err(self.err_at(start, "missing reward expression"));
        }
        // State rewards are flat per-state values, so only labeled rules may
        // mention probabilities or state variables.
        let allow_vars = self.kind == ModelKind::Pcsg && label.is_some();
        let allow_actions = label.is_some();
        self.check_expr(&expr, start, allow_actions, allow_vars)?;
        self.expect_char(';')?;
        Ok(RewardRuleAst { label, guard, expr })
    }

    fn guard(&mut self) -> Result<GuardAst, ModelError> {
        let mut g = self.guard_conj()?;
        while self.eat_char('|') {
            let rhs = self.guard_conj()?;
            g = GuardAst::Or(Box::new(g), Box::new(rhs));
        }
        Ok(g)
    }

    fn guard_conj(&mut self) -> Result<GuardAst, ModelError> {
        let mut g = self.guard_atom()?;
        while self.eat_char('&') {
            let rhs = self.guard_atom()?;
            g = GuardAst::And(Box::new(g), Box::new(rhs));
        }
        Ok(g)
    }

    fn guard_atom(&mut self) -> Result<GuardAst, ModelError> {
        if self.eat_str("true") {
            return Ok(GuardAst::True);
        }
        if self.eat_str("false") {
            return Ok(GuardAst::False);
        }
        if self.eat_char('!') {
            let g = self.guard_atom()?;
            return Ok(GuardAst::Not(Box::new(g)));
        }
        // `(j+1) < k` and `(j < k)` both start with `(`: try a comparison
        // first and fall back to a parenthesized guard.
        let save = self.pos;
        match self.cmp_guard() {
            Ok(g) => Ok(g),
            Err(cmp_err) => {
                self.pos = save;
                if self.eat_char('(') {
                    let g = self.guard()?;
                    self.expect_char(')')?;
                    Ok(g)
                } else {
                    Err(cmp_err)
                }
            }
        }
    }

    fn cmp_guard(&mut self) -> Result<GuardAst, ModelError> {
        let lhs = self.int_expr(IdentCtx::ConstsAndVars)?;
        self.skip_ws();
        let op = if self.eat_str("!=") {
            CmpOp::Ne
        } else if self.eat_str("<=") {
            CmpOp::Le
        } else if self.eat_str(">=") {
            CmpOp::Ge
        } else if self.eat_char('<') {
            CmpOp::Lt
        } else if self.eat_char('>') {
            CmpOp::Gt
        } else if self.eat_char('=') {
            CmpOp::Eq
        } else {
            return Err(self.err_at(self.pos, "expected a comparison operator"));
        };
        let rhs = self.int_expr(IdentCtx::ConstsAndVars)?;
        Ok(GuardAst::Cmp(lhs, op, rhs))
    }

    fn int_expr(&mut self, ctx: IdentCtx) -> Result<IntAst, ModelError> {
        let mut e = self.int_term(ctx)?;
        loop {
            // `..` ends a range bound and `->` ends a command guard; neither
            // minus belongs to the expression.
            self.skip_ws();
            if self.rest().starts_with("..") || self.rest().starts_with("->") {
                return Ok(e);
            }
            if self.eat_char('+') {
                let rhs = self.int_term(ctx)?;
                e = IntAst::Add(Box::new(e), Box::new(rhs));
            } else if self.eat_char('-') {
                let rhs = self.int_term(ctx)?;
                e = IntAst::Sub(Box::new(e), Box::new(rhs));
            } else {
                return Ok(e);
            }
        }
    }

    fn int_term(&mut self, ctx: IdentCtx) -> Result<IntAst, ModelError> {
        let mut e = self.int_factor(ctx)?;
        while self.eat_char('*') {
            let rhs = self.int_factor(ctx)?;
            e = IntAst::Mul(Box::new(e), Box::new(rhs));
        }
        Ok(e)
    }

    fn int_factor(&mut self, ctx: IdentCtx) -> Result<IntAst, ModelError> {
        self.skip_ws();
        if self.eat_char('-') {
            let e = self.int_factor(ctx)?;
            return Ok(IntAst::Neg(Box::new(e)));
        }
        if self.eat_char('(') {
            let e = self.int_expr(ctx)?;
            self.expect_char(')')?;
            return Ok(e);
        }
        for (kw, mk) in [
            ("min", IntAst::Min as fn(_, _) -> _),
            ("max", IntAst::Max as fn(_, _) -> _),
        ] {
            if self.eat_str(kw) {
                self.expect_char('(')?;
                let a = self.int_expr(ctx)?;
                self.expect_char(',')?;
                let b = self.int_expr(ctx)?;
                self.expect_char(')')?;
                return Ok(mk(Box::new(a), Box::new(b)));
            }
        }
        if self.peek_char().is_some_and(|c| c.is_ascii_digit()) {
            return Ok(IntAst::Num(self.number()?));
        }
        let (name, pos) = self.ident()?;
        let known = self.consts.contains(&name)
            || (ctx == IdentCtx::ConstsAndVars && self.vars.contains(&name));
        if !known {
            return Err(self.unknown_at(pos, &name));
        }
        Ok(IntAst::Ident(name))
    }
}

fn ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn collect_idents(ast: &crate::expr::ExprAst, out: &mut Vec<(String, usize)>) {
    use crate::expr::ExprAst as E;
    match ast {
        E::Num(_) => {}
        E::Ident { name, position } => out.push((name.clone(), *position)),
        E::Neg(a) => collect_idents(a, out),
        E::Add(a, b) | E::Sub(a, b) | E::Mul(a, b) => {
            collect_idents(a, out);
            collect_idents(b, out);
        }
        E::Div { num, den, .. } => {
            collect_idents(num, out);
            collect_idents(den, out);
        }
    }
}

/// Parses `.pg` text into an AST, validating declarations, label coverage
/// and identifier use along the way.
pub fn parse_model(text: &str) -> Result<ModelAst, ModelError> {
    Parser::new(text).parse_model()
}

/// Renders an AST back to canonical `.pg` text. The output parses to an AST
/// equal to the input.
pub fn print_model(ast: &ModelAst) -> String {
    let mut out = String::new();
    let kind = match ast.kind {
        ModelKind::Nfpg => "nfpg",
        ModelKind::Pcsg => "pcsg",
    };
    let _ = writeln!(out, "{kind}");
    if !ast.consts.is_empty() {
        out.push('\n');
        for c in &ast.consts {
            match &c.value {
                Some(v) => {
                    let _ = writeln!(out, "const {} = {};", c.name, v);
                }
                None => {
                    let _ = writeln!(out, "const {};", c.name);
                }
            }
        }
    }
    out.push('\n');
    for p in &ast.players {
        if p.actions.is_empty() {
            let _ = writeln!(out, "player {};", p.name);
        } else {
            let _ = writeln!(out, "player {}: {};", p.name, p.actions.join(", "));
        }
    }
    if !ast.vars.is_empty() {
        out.push('\n');
        for v in &ast.vars {
            let _ = writeln!(
                out,
                "var {} : [{}..{}] init {};",
                v.name,
                print_int(&v.lo),
                print_int(&v.hi),
                print_int(&v.init)
            );
        }
    }
    if !ast.commands.is_empty() {
        out.push('\n');
        for c in &ast.commands {
            let branches: Vec<String> = c
                .branches
                .iter()
                .map(|b| {
                    let upd = if b.updates.is_empty() {
                        "true".to_string()
                    } else {
                        let parts: Vec<String> = b
                            .updates
                            .iter()
                            .map(|u| format!("{}'={}", u.var, print_int(&u.value)))
                            .collect();
                        format!("({})", parts.join(" & "))
                    };
                    match &b.prob {
                        Some(p) => format!("{p} : {upd}"),
                        None => upd,
                    }
                })
                .collect();
            let _ = writeln!(
                out,
                "[{}] {} -> {};",
                c.label.join(", "),
                print_guard(&c.guard),
                branches.join(" + ")
            );
        }
    }
    for b in &ast.rewards {
        let _ = writeln!(out, "\nrewards \"{}\"", b.player);
        for r in &b.rules {
            let mut line = String::from("  ");
            if let Some(label) = &r.label {
                let _ = write!(line, "[{}] ", label.join(", "));
            }
            if r.guard != GuardAst::True {
                let _ = write!(line, "{} ", print_guard(&r.guard));
            }
            let _ = write!(line, ": {};", r.expr);
            let _ = writeln!(out, "{line}");
        }
        let _ = writeln!(out, "endrewards");
    }
    out
}

fn print_int(e: &IntAst) -> String {
    fn go(e: &IntAst, prec: u8, out: &mut String) {
        match e {
            IntAst::Num(n) => {
                let _ = write!(out, "{n}");
            }
            IntAst::Ident(s) => out.push_str(s),
            IntAst::Neg(a) => {
                if prec > 2 {
                    out.push('(');
                }
                out.push('-');
                go(a, 3, out);
                if prec > 2 {
                    out.push(')');
                }
            }
            IntAst::Add(a, b) | IntAst::Sub(a, b) => {
                if prec > 1 {
                    out.push('(');
                }
                go(a, 1, out);
                out.push_str(if matches!(e, IntAst::Add(..)) { "+" } else { "-" });
                go(b, 2, out);
                if prec > 1 {
                    out.push(')');
                }
            }
            IntAst::Mul(a, b) => {
                if prec > 2 {
                    out.push('(');
                }
                go(a, 2, out);
                out.push('*');
                go(b, 3, out);
                if prec > 2 {
                    out.push(')');
                }
            }
            IntAst::Min(a, b) | IntAst::Max(a, b) => {
                out.push_str(if matches!(e, IntAst::Min(..)) {
                    "min("
                } else {
                    "max("
                });
                go(a, 0, out);
                out.push(',');
                go(b, 0, out);
                out.push(')');
            }
        }
    }
    let mut s = String::new();
    go(e, 0, &mut s);
    s
}

fn print_guard(g: &GuardAst) -> String {
    fn go(g: &GuardAst, prec: u8, out: &mut String) {
        match g {
            GuardAst::True => out.push_str("true"),
            GuardAst::False => out.push_str("false"),
            GuardAst::Cmp(a, op, b) => {
                let ops = match op {
                    CmpOp::Eq => "=",
                    CmpOp::Ne => "!=",
                    CmpOp::Lt => "<",
                    CmpOp::Le => "<=",
                    CmpOp::Gt => ">",
                    CmpOp::Ge => ">=",
                };
                let _ = write!(out, "{}{}{}", print_int(a), ops, print_int(b));
            }
            GuardAst::And(a, b) => {
                if prec > 2 {
                    out.push('(');
                }
                go(a, 2, out);
                out.push('&');
                go(b, 2, out);
                if prec > 2 {
                    out.push(')');
                }
            }
            GuardAst::Or(a, b) => {
                if prec > 1 {
                    out.push('(');
                }
                go(a, 1, out);
                out.push('|');
                go(b, 1, out);
                if prec > 1 {
                    out.push(')');
                }
            }
            GuardAst::Not(a) => {
                out.push('!');
                match **a {
                    GuardAst::True | GuardAst::False | GuardAst::Not(_) => go(a, 3, out),
                    _ => {
                        out.push('(');
                        go(a, 0, out);
                        out.push(')');
                    }
                }
            }
        }
    }
    let mut s = String::new();
    go(g, 0, &mut s);
    s
}

/// Resolves every declared constant to a value, applying `bindings` on top
/// of declared defaults. Bindings must cover constants declared without a
/// value; binding a name the model does not declare is an error.
pub fn resolve_constants(
    ast: &ModelAst,
    bindings: &BTreeMap<String, Rat>,
) -> Result<BTreeMap<String, Rat>, ModelError> {
    let declared: BTreeSet<&str> = ast.consts.iter().map(|c| c.name.as_str()).collect();
    for name in bindings.keys() {
        if !declared.contains(name.as_str()) {
            return Err(ModelError::UnknownParameter(name.clone()));
        }
    }
    let mut env: BTreeMap<String, Rat> = BTreeMap::new();
    for c in &ast.consts {
        let v = if let Some(b) = bindings.get(&c.name) {
            b.clone()
        } else if let Some(text) = &c.value {
            eval_const_text(text, &env, &format!("constant `{}`", c.name))?
        } else {
            return Err(ModelError::UnboundConstant(c.name.clone()));
        };
        env.insert(c.name.clone(), v);
    }
    Ok(env)
}

/// Grounds an AST into a game under the given parameter bindings.
pub fn elaborate(ast: &ModelAst, bindings: &BTreeMap<String, Rat>) -> Result<Model, ModelError> {
    let env = resolve_constants(ast, bindings)?;
    match ast.kind {
        ModelKind::Nfpg => elaborate_nfpg(ast, &env).map(Model::Nfpg),
        ModelKind::Pcsg => elaborate_pcsg(ast, &env).map(Model::Pcsg),
    }
}

fn const_vocab(env: &BTreeMap<String, Rat>) -> Vocab {
    env.iter()
        .map(|(k, v)| (k.clone(), PolyExpr::constant(v.clone())))
        .collect()
}

fn resolve_text(text: &str, vocab: &Vocab, context: &str) -> Result<PolyExpr, ModelError> {
    let ast = parse_expr_ast(text).map_err(|e| ModelError::SyntaxError {
        line: 0,
        col: 0,
        message: format!("{context}: {e}"),
    })?;
    resolve_expr(&ast, vocab).map_err(|e| match e {
        ExprError::UnknownVariable { name, .. } => ModelError::UnknownIdentifier {
            name,
            line: 0,
            col: 0,
        },
        ExprError::NonPolynomial { .. } => ModelError::NonPolynomial {
            context: context.to_string(),
        },
        other => ModelError::SyntaxError {
            line: 0,
            col: 0,
            message: format!("{context}: {other}"),
        },
    })
}

fn eval_const_text(
    text: &str,
    env: &BTreeMap<String, Rat>,
    context: &str,
) -> Result<Rat, ModelError> {
    let poly = resolve_text(text, &const_vocab(env), context)?;
    poly.constant_value().ok_or_else(|| ModelError::NonPolynomial {
        context: context.to_string(),
    })
}

/// Maps a written label to a full joint (one action index per player),
/// assigning idle players their single implicit action.
fn resolve_joint(
    label: &[String],
    lookup: &BTreeMap<String, (usize, usize)>,
    players: &[PlayerDecl],
    context: &str,
) -> Result<Vec<usize>, ModelError> {
    let mut joint: Vec<Option<usize>> = vec![None; players.len()];
    for name in label {
        let Some(&(pi, ai)) = lookup.get(name) else {
            return Err(ModelError::UnknownIdentifier {
                name: name.clone(),
                line: 0,
                col: 0,
            });
        };
        if joint[pi].replace(ai).is_some() {
            return Err(ModelError::SyntaxError {
                line: 0,
                col: 0,
                message: format!("{context}: two actions for player `{}`", players[pi].name),
            });
        }
    }
    joint
        .into_iter()
        .zip(players)
        .map(|(slot, p)| match slot {
            Some(a) => Ok(a),
            None if p.actions.is_empty() => Ok(0),
            None => Err(ModelError::SyntaxError {
                line: 0,
                col: 0,
                message: format!("{context}: no action for player `{}`", p.name),
            }),
        })
        .collect()
}

fn action_table(players: &[PlayerDecl]) -> Result<BTreeMap<String, (usize, usize)>, ModelError> {
    let mut lookup = BTreeMap::new();
    for (pi, p) in players.iter().enumerate() {
        for (ai, a) in p.actions.iter().enumerate() {
            if lookup.insert(a.clone(), (pi, ai)).is_some() {
                return Err(ModelError::DuplicateAction(a.clone()));
            }
        }
    }
    Ok(lookup)
}

fn player_index(players: &[PlayerDecl], name: &str) -> Result<usize, ModelError> {
    players
        .iter()
        .position(|p| p.name == name)
        .ok_or_else(|| ModelError::UnknownIdentifier {
            name: name.to_string(),
            line: 0,
            col: 0,
        })
}

fn elaborate_nfpg(ast: &ModelAst, env: &BTreeMap<String, Rat>) -> Result<Nfpg, ModelError> {
    if !ast.vars.is_empty() || !ast.commands.is_empty() {
        return Err(ModelError::SyntaxError {
            line: 0,
            col: 0,
            message: "nfpg models cannot carry state variables or commands".into(),
        });
    }
    let lookup = action_table(&ast.players)?;
    let names: Vec<String> = ast.players.iter().map(|p| p.name.clone()).collect();
    let actions: Vec<Vec<String>> = ast.players.iter().map(|p| p.actions.clone()).collect();
    let mut game = Nfpg::new(names, actions)?;
    let mut vocab = game.vocab();
    vocab.extend(const_vocab(env));
    for block in &ast.rewards {
        let pi = player_index(&ast.players, &block.player)?;
        for rule in &block.rules {
            let context = format!("rewards for `{}`", block.player);
            let Some(label) = &rule.label else {
                return Err(ModelError::SyntaxError {
                    line: 0,
                    col: 0,
                    message: format!("{context}: nfpg reward rules need an action label"),
                });
            };
            if rule.guard != GuardAst::True {
                return Err(ModelError::SyntaxError {
                    line: 0,
                    col: 0,
                    message: format!("{context}: state guards need a `pcsg` model"),
                });
            }
            let joint = resolve_joint(label, &lookup, &ast.players, &context)?;
            let poly = resolve_text(&rule.expr, &vocab, &context)?;
            let sum = game.utility(pi, &joint).add(&poly);
            game.set_utility(pi, &joint, sum)?;
        }
    }
    Ok(game)
}

fn int_value(e: &IntAst, env: &BTreeMap<String, Rat>, subject: &str) -> Result<i64, ModelError> {
    let bad = |detail: String| ModelError::RangeError {
        var: subject.to_string(),
        detail,
    };
    match e {
        IntAst::Num(n) => Ok(*n),
        IntAst::Ident(name) => {
            let v = env
                .get(name)
                .ok_or_else(|| bad(format!("constant `{name}` is not available here")))?;
            if !v.is_integer() {
                return Err(bad(format!("constant `{name}` = {v} is not an integer")));
            }
            num_traits::ToPrimitive::to_i64(&v.to_integer())
                .ok_or_else(|| bad(format!("constant `{name}` is out of machine range")))
        }
        IntAst::Neg(a) => Ok(-int_value(a, env, subject)?),
        IntAst::Add(a, b) => int_value(a, env, subject)?
            .checked_add(int_value(b, env, subject)?)
            .ok_or_else(|| bad("integer overflow".into())),
        IntAst::Sub(a, b) => int_value(a, env, subject)?
            .checked_sub(int_value(b, env, subject)?)
            .ok_or_else(|| bad("integer overflow".into())),
        IntAst::Mul(a, b) => int_value(a, env, subject)?
            .checked_mul(int_value(b, env, subject)?)
            .ok_or_else(|| bad("integer overflow".into())),
        IntAst::Min(a, b) => Ok(int_value(a, env, subject)?.min(int_value(b, env, subject)?)),
        IntAst::Max(a, b) => Ok(int_value(a, env, subject)?.max(int_value(b, env, subject)?)),
    }
}

fn resolve_int(
    e: &IntAst,
    env: &BTreeMap<String, Rat>,
    vars: &BTreeMap<String, usize>,
) -> Result<IntExpr, ModelError> {
    Ok(match e {
        IntAst::Num(n) => IntExpr::Const(*n),
        IntAst::Ident(name) => match vars.get(name) {
            Some(&i) => IntExpr::Var(i),
            None => IntExpr::Const(int_value(&IntAst::Ident(name.clone()), env, name)?),
        },
        IntAst::Neg(a) => IntExpr::Sub(
            Box::new(IntExpr::Const(0)),
            Box::new(resolve_int(a, env, vars)?),
        ),
        IntAst::Add(a, b) => IntExpr::Add(
            Box::new(resolve_int(a, env, vars)?),
            Box::new(resolve_int(b, env, vars)?),
        ),
        IntAst::Sub(a, b) => IntExpr::Sub(
            Box::new(resolve_int(a, env, vars)?),
            Box::new(resolve_int(b, env, vars)?),
        ),
        IntAst::Mul(a, b) => IntExpr::Mul(
            Box::new(resolve_int(a, env, vars)?),
            Box::new(resolve_int(b, env, vars)?),
        ),
        IntAst::Min(a, b) => IntExpr::Min(
            Box::new(resolve_int(a, env, vars)?),
            Box::new(resolve_int(b, env, vars)?),
        ),
        IntAst::Max(a, b) => IntExpr::Max(
            Box::new(resolve_int(a, env, vars)?),
            Box::new(resolve_int(b, env, vars)?),
        ),
    })
}

fn resolve_guard(
    g: &GuardAst,
    env: &BTreeMap<String, Rat>,
    vars: &BTreeMap<String, usize>,
) -> Result<Guard, ModelError> {
    Ok(match g {
        GuardAst::True => Guard::True,
        GuardAst::False => Guard::Not(Box::new(Guard::True)),
        GuardAst::Cmp(a, op, b) => Guard::Cmp(
            resolve_int(a, env, vars)?,
            *op,
            resolve_int(b, env, vars)?,
        ),
        GuardAst::And(a, b) => Guard::And(
            Box::new(resolve_guard(a, env, vars)?),
            Box::new(resolve_guard(b, env, vars)?),
        ),
        GuardAst::Or(a, b) => Guard::Or(
            Box::new(resolve_guard(a, env, vars)?),
            Box::new(resolve_guard(b, env, vars)?),
        ),
        GuardAst::Not(a) => Guard::Not(Box::new(resolve_guard(a, env, vars)?)),
    })
}

fn elaborate_pcsg(ast: &ModelAst, env: &BTreeMap<String, Rat>) -> Result<Pcsg, ModelError> {
    if let Some(p) = ast.players.iter().find(|p| p.actions.is_empty()) {
        return Err(ModelError::DuplicateOrMissingPlayers(format!(
            "pcsg player `{}` declares no actions",
            p.name
        )));
    }
    let lookup = action_table(&ast.players)?;
    let mut var_idx = BTreeMap::new();
    let mut vars = Vec::new();
    for (i, d) in ast.vars.iter().enumerate() {
        let lo = int_value(&d.lo, env, &d.name)?;
        let hi = int_value(&d.hi, env, &d.name)?;
        let init = int_value(&d.init, env, &d.name)?;
        if lo > hi || init < lo || init > hi {
            return Err(ModelError::RangeError {
                var: d.name.clone(),
                detail: format!("init {init} outside range [{lo}..{hi}]"),
            });
        }
        var_idx.insert(d.name.clone(), i);
        vars.push(StateVar {
            name: d.name.clone(),
            lo,
            hi,
            init,
        });
    }
    let mut commands = Vec::new();
    for c in &ast.commands {
        let context = format!("command [{}]", c.label.join(", "));
        let label = resolve_joint(&c.label, &lookup, &ast.players, &context)?;
        let guard = resolve_guard(&c.guard, env, &var_idx)?;
        let mut branches = Vec::new();
        for b in &c.branches {
            let prob = match &b.prob {
                Some(text) => eval_const_text(text, env, &context)?,
                None => rat(1, 1),
            };
            let updates = b
                .updates
                .iter()
                .map(|u| {
                    Ok(Update {
                        var: *var_idx.get(&u.var).ok_or_else(|| {
                            ModelError::UnknownIdentifier {
                                name: u.var.clone(),
                                line: 0,
                                col: 0,
                            }
                        })?,
                        value: resolve_int(&u.value, env, &var_idx)?,
                    })
                })
                .collect::<Result<Vec<_>, ModelError>>()?;
            branches.push(Branch { prob, updates });
        }
        commands.push(Command {
            label,
            guard,
            branches,
        });
    }
    let mut vocab = const_vocab(env);
    for (pi, p) in ast.players.iter().enumerate() {
        for a in &p.actions {
            vocab.insert(
                a.clone(),
                PolyExpr::var(crate::expr::ProbVar::new(pi, a.clone())),
            );
        }
    }
    for name in var_idx.keys() {
        vocab.insert(name.clone(), PolyExpr::var(Pcsg::state_var(name.clone())));
    }
    let n = ast.players.len();
    let mut action_rewards: Vec<Vec<RewardRule>> = vec![Vec::new(); n];
    let mut state_rewards: Vec<Vec<StateRewardRule>> = vec![Vec::new(); n];
    for block in &ast.rewards {
        let pi = player_index(&ast.players, &block.player)?;
        for rule in &block.rules {
            let context = format!("rewards for `{}`", block.player);
            let guard = resolve_guard(&rule.guard, env, &var_idx)?;
            match &rule.label {
                Some(label) => {
                    let joint = resolve_joint(label, &lookup, &ast.players, &context)?;
                    let expr = resolve_text(&rule.expr, &vocab, &context)?;
                    action_rewards[pi].push(RewardRule {
                        label: joint,
                        guard,
                        expr,
                    });
                }
                None => {
                    let value = eval_const_text(&rule.expr, env, &context)?;
                    state_rewards[pi].push(StateRewardRule { guard, value });
                }
            }
        }
    }
    let names: Vec<String> = ast.players.iter().map(|p| p.name.clone()).collect();
    let actions: Vec<Vec<String>> = ast.players.iter().map(|p| p.actions.clone()).collect();
    Ok(Pcsg::new(
        names,
        actions,
        vars,
        commands,
        action_rewards,
        state_rewards,
    )?)
}

/// One bundled case-study model: canonical `.pg` text plus metadata. The
/// same games are also available through direct constructors
/// ([`confidence_game`] and friends); the two routes produce identical
/// games, which the test suite checks.
#[derive(Clone, Copy, Debug)]
pub struct BuiltinModel {
    pub name: &'static str,
    pub kind: ModelKind,
    pub summary: &'static str,
    pub text: &'static str,
}

impl BuiltinModel {
    pub fn ast(&self) -> ModelAst {
        parse_model(self.text).expect("bundled model text parses")
    }

    pub fn elaborate(&self, bindings: &BTreeMap<String, Rat>) -> Result<Model, ModelError> {
        elaborate(&self.ast(), bindings)
    }

    /// Declared parameters with their default value texts.
    pub fn params(&self) -> Vec<(String, Option<String>)> {
        self.ast()
            .consts
            .iter()
            .map(|c| (c.name.clone(), c.value.clone()))
            .collect()
    }
}

static CATALOG: &[BuiltinModel] = &[
    BuiltinModel {
        name: "confidence",
        kind: ModelKind::Nfpg,
        summary: "idle proposer whose utility rides on two reviewers' acceptance odds",
        text: include_str!("../models/confidence.pg"),
    },
    BuiltinModel {
        name: "example2",
        kind: ModelKind::Nfpg,
        summary: "one indifferent chooser; welfare selects an interior mixture",
        text: include_str!("../models/example2.pg"),
    },
    BuiltinModel {
        name: "reciprocity",
        kind: ModelKind::Nfpg,
        summary: "fair/greedy split with reciprocal kindness (theta1, theta2)",
        text: include_str!("../models/reciprocity.pg"),
    },
    BuiltinModel {
        name: "ultimatum",
        kind: ModelKind::Nfpg,
        summary: "ultimatum bargaining with reciprocal kindness (theta1, theta2)",
        text: include_str!("../models/ultimatum.pg"),
    },
    BuiltinModel {
        name: "crossing",
        kind: ModelKind::Nfpg,
        summary: "vehicle vs pedestrian road crossing; jaywalking penalty weight mu",
        text: include_str!("../models/crossing.pg"),
    },
    BuiltinModel {
        name: "cyclist_vehicle",
        kind: ModelKind::Nfpg,
        summary: "cyclist vs vehicle with nature choosing the vehicle type",
        text: include_str!("../models/cyclist_vehicle.pg"),
    },
    BuiltinModel {
        name: "cyclist_bimatrix",
        kind: ModelKind::Nfpg,
        summary: "two-player cyclist game at a fixed autonomous-vehicle share p",
        text: include_str!("../models/cyclist_bimatrix.pg"),
    },
    BuiltinModel {
        name: "crossing_multi",
        kind: ModelKind::Pcsg,
        summary: "k-stage crossing with attention-weighted history counters (mu, gamma, k)",
        text: include_str!("../models/crossing_multi.pg"),
    },
];

pub fn builtin_models() -> &'static [BuiltinModel] {
    CATALOG
}

pub fn builtin(name: &str) -> Option<&'static BuiltinModel> {
    CATALOG.iter().find(|m| m.name == name)
}

fn must(game: Result<Nfpg, GameError>) -> Nfpg {
    game.expect("fixed constructor input is valid")
}

/// Three players: an idle proposer and two reviewers who each accept or
/// reject. The proposer's stake rides on how likely acceptance looks;
/// reviewer 2 warms to accepting only when acceptance is already expected.
pub fn confidence_game() -> Nfpg {
    let mut g = must(Nfpg::new(
        vec!["p1".into(), "p2".into(), "p3".into()],
        vec![
            vec![],
            vec!["a2".into(), "r2".into()],
            vec!["a3".into(), "r3".into()],
        ],
    ));
    let a2 = PolyExpr::var(g.var(1, 0));
    let a3 = PolyExpr::var(g.var(2, 0));
    let acc = a2.add(&a3);
    let one = PolyExpr::from_int(1);
    let half = PolyExpr::constant(rat(1, 2));
    let off_diag = half.sub(&acc.scale(&rat(3, 2)));
    let entries = [
        (0, [0, 0, 0], one.add(&acc)),
        (0, [0, 0, 1], off_diag.clone()),
        (0, [0, 1, 0], off_diag),
        (0, [0, 1, 1], acc.scale(&rat(-4, 1))),
        (1, [0, 0, 0], acc.scale(&rat(3, 2))),
        (1, [0, 0, 1], acc.scale(&rat(3, 2))),
        (1, [0, 1, 0], half.clone()),
        (1, [0, 1, 1], half.clone()),
        (2, [0, 0, 1], half.clone()),
        (2, [0, 1, 1], half.clone()),
    ];
    for (p, joint, e) in entries {
        g.set_utility(p, &joint, e).expect("joint in range");
    }
    g
}

/// One idle player and one chooser who is indifferent between two actions;
/// the idle player's utility peaks at an interior mixture, so welfare picks
/// p(a2) = 0.45 out of the equilibrium continuum.
pub fn example2_game() -> Nfpg {
    let mut g = must(Nfpg::new(
        vec!["p1".into(), "p2".into()],
        vec![vec![], vec!["a2".into(), "b2".into()]],
    ));
    let a2 = PolyExpr::var(g.var(1, 0));
    let e = a2
        .scale(&rat(-400, 81))
        .add(&PolyExpr::constant(rat(40, 9)));
    g.set_utility(0, &[0, 0], e).expect("joint in range");
    g
}

fn split_game(
    theta1: Rat,
    theta2: Rat,
    kind_factor: Rat,
    base_kind: PolyExpr,
    materials1: [i64; 4],
    materials2: [i64; 4],
    mut g: Nfpg,
) -> Nfpg {
    // Entry order: (fair,accept), (fair,reject), (greedy,accept),
    // (greedy,reject). The kindness product flips sign with the proposer's
    // greed and with the responder's rejection.
    for (pi, theta, materials) in [(0, theta1, materials1), (1, theta2, materials2)] {
        for (idx, (row, col)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
            let mut term = base_kind.scale(&(theta.clone() * kind_factor.clone()));
            if row == 1 {
                term = term.neg();
            }
            if col == 1 {
                term = term.neg();
            }
            let e = PolyExpr::from_int(materials[idx]).add(&term);
            g.set_utility(pi, &[row, col], e).expect("joint in range");
        }
    }
    g
}

/// Split-the-pie where both players weigh mutual kindness: the responder may
/// reject a greedy split out of spite, and `theta1`/`theta2` scale how much
/// each player cares.
pub fn reciprocity_game(theta1: Rat, theta2: Rat) -> Nfpg {
    let g = must(Nfpg::new(
        vec!["proposer".into(), "responder".into()],
        vec![
            vec!["fair".into(), "greedy".into()],
            vec!["accept".into(), "reject".into()],
        ],
    ));
    let reject = PolyExpr::var(g.var(1, 1));
    // Kindness of a fair proposal, given the believed rejection rate.
    let base = PolyExpr::from_int(2).sub(&reject.scale(&rat(4, 1)));
    split_game(
        theta1,
        theta2,
        rat(4, 1),
        base,
        [5, 5, 9, 1],
        [5, 5, 1, 9],
        g,
    )
}

/// Ultimatum bargaining with the same kindness structure as
/// [`reciprocity_game`] but a harsher material fallback: rejection leaves
/// both players with nothing.
pub fn ultimatum_game(theta1: Rat, theta2: Rat) -> Nfpg {
    let g = must(Nfpg::new(
        vec!["proposer".into(), "responder".into()],
        vec![
            vec!["fair".into(), "greedy".into()],
            vec!["accept".into(), "reject".into()],
        ],
    ));
    let reject = PolyExpr::var(g.var(1, 1));
    let base = PolyExpr::from_int(2).add(&reject.scale(&rat(1, 2)));
    split_game(
        theta1,
        theta2,
        rat(9, 2),
        base,
        [5, 5, 9, 0],
        [5, 5, 1, 0],
        g,
    )
}

/// One-shot road crossing: the vehicle reduces or maintains speed, the
/// pedestrian waits or crosses, and `mu` weighs the pedestrian's fear of a
/// jaywalking penalty (proportional to the expected crossing probability).
pub fn crossing_game(mu: Rat) -> Nfpg {
    let mut g = must(Nfpg::new(
        vec!["vehicle".into(), "pedestrian".into()],
        vec![
            vec!["reduce".into(), "maintain".into()],
            vec!["wait".into(), "cross".into()],
        ],
    ));
    let r = PolyExpr::var(g.var(0, 0));
    let m = PolyExpr::var(g.var(0, 1));
    let w = PolyExpr::var(g.var(1, 0));
    let c = PolyExpr::var(g.var(1, 1));
    let one = PolyExpr::from_int(1);
    let fine = c.scale(&mu);
    let entries = [
        (0, [0, 0], one.sub(&w)),
        (0, [0, 1], one.add(&c)),
        (0, [1, 0], one.add(&w)),
        (0, [1, 1], one.sub(&c)),
        (1, [0, 0], one.sub(&r)),
        (1, [0, 1], one.add(&r).sub(&fine)),
        (1, [1, 0], one.add(&m)),
        (1, [1, 1], one.sub(&m).sub(&fine)),
    ];
    for (p, joint, e) in entries {
        g.set_utility(p, &joint, e).expect("joint in range");
    }
    g
}

/// Cyclist vs vehicle with an active but indifferent nature player choosing
/// the vehicle type; the cyclist's stakes scale with their belief about that
/// type. The vehicle's payoff for stopping while the cyclist walks in front
/// of an autonomous vehicle is +15 here; a sign-flipped statement (−15) of
/// this scenario also circulates, and the bundled guide flags the choice.
pub fn cyclist_vehicle_game() -> Nfpg {
    let mut g = must(Nfpg::new(
        vec!["nature".into(), "cyclist".into(), "vehicle".into()],
        vec![
            vec!["auto".into(), "human".into()],
            vec!["yield".into(), "walk".into(), "cycle".into()],
            vec!["go".into(), "stop".into()],
        ],
    ));
    // cyclist coefficients [nature][cyclist][vehicle], scaled by the belief
    // in that nature type; vehicle utilities are plain constants.
    let cyc = [
        [[5, 3], [-400, 15], [-500, 20]],
        [[8, 6], [-400, 15], [-500, 20]],
    ];
    let veh = [
        [[7, 10], [-500, 15], [-300, 15]],
        [[15, 1], [-400, 7], [-200, 7]],
    ];
    for n in 0..2 {
        let belief = PolyExpr::var(g.var(0, n));
        for cy in 0..3 {
            for v in 0..2 {
                let joint = [n, cy, v];
                g.set_utility(1, &joint, belief.scale(&rat(cyc[n][cy][v], 1)))
                    .expect("joint in range");
                g.set_utility(2, &joint, PolyExpr::from_int(veh[n][cy][v]))
                    .expect("joint in range");
            }
        }
    }
    g
}

/// Classical two-player reduction of [`cyclist_vehicle_game`]: the type is
/// no longer chosen by a player but fixed as a prior `p` on the autonomous
/// type, and payoffs are averaged over it. For p > 14/17 the only
/// equilibrium is (cycle, stop).
pub fn cyclist_bimatrix_game(p: Rat) -> Nfpg {
    let mut g = must(Nfpg::new(
        vec!["cyclist".into(), "vehicle".into()],
        vec![
            vec!["yield".into(), "walk".into(), "cycle".into()],
            vec!["go".into(), "stop".into()],
        ],
    ));
    let affine = |a: i64, b: i64| PolyExpr::constant(rat(a, 1) * p.clone() + rat(b, 1));
    let cyc = [
        [affine(-3, 8), affine(-3, 6)],
        [affine(0, -400), affine(0, 15)],
        [affine(0, -500), affine(0, 20)],
    ];
    let veh = [
        [affine(-8, 15), affine(9, 1)],
        [affine(-100, -400), affine(8, 7)],
        [affine(-100, -200), affine(8, 7)],
    ];
    for cy in 0..3 {
        for v in 0..2 {
            g.set_utility(0, &[cy, v], cyc[cy][v].clone())
                .expect("joint in range");
            g.set_utility(1, &[cy, v], veh[cy][v].clone())
                .expect("joint in range");
        }
    }
    g
}

/// Multi-stage crossing: the one-shot game repeats for `k` steps while
/// saturating counters `cr`, `cw` track each side's past choices. With
/// probability `gamma` a counter registers the latest action (up on
/// reduce/wait, down on maintain/cross); otherwise it resets to 0.
pub fn crossing_multi_game(mu: Rat, gamma: Rat, k: i64) -> Result<Pcsg, ModelError> {
    if k < 1 {
        return Err(ModelError::RangeError {
            var: "k".into(),
            detail: format!("horizon {k} must be at least 1"),
        });
    }
    if gamma < rat(0, 1) || gamma > rat(1, 1) {
        return Err(ModelError::RangeError {
            var: "gamma".into(),
            detail: format!("attention {gamma} outside [0, 1]"),
        });
    }
    let vars = vec![
        StateVar {
            name: "j".into(),
            lo: 0,
            hi: k,
            init: 0,
        },
        StateVar {
            name: "cr".into(),
            lo: 0,
            hi: 10,
            init: 0,
        },
        StateVar {
            name: "cw".into(),
            lo: 0,
            hi: 10,
            init: 0,
        },
    ];
    let guard = Guard::Cmp(IntExpr::Var(0), CmpOp::Lt, IntExpr::Const(k));
    let bump = |var: usize, up: bool| {
        if up {
            IntExpr::Min(
                Box::new(IntExpr::Add(
                    Box::new(IntExpr::Var(var)),
                    Box::new(IntExpr::Const(1)),
                )),
                Box::new(IntExpr::Const(10)),
            )
        } else {
            IntExpr::Max(
                Box::new(IntExpr::Sub(
                    Box::new(IntExpr::Var(var)),
                    Box::new(IntExpr::Const(1)),
                )),
                Box::new(IntExpr::Const(0)),
            )
        }
    };
    let step = Update {
        var: 0,
        value: IntExpr::Add(Box::new(IntExpr::Var(0)), Box::new(IntExpr::Const(1))),
    };
    let mut commands = Vec::new();
    for vi in 0..2 {
        for pa in 0..2 {
            let mut branches = Vec::new();
            for (cr_reg, cw_reg) in [(true, true), (true, false), (false, true), (false, false)] {
                let pr = |reg: bool| {
                    if reg {
                        gamma.clone()
                    } else {
                        rat(1, 1) - gamma.clone()
                    }
                };
                let cr_val = if cr_reg {
                    bump(1, vi == 0)
                } else {
                    IntExpr::Const(0)
                };
                let cw_val = if cw_reg {
                    bump(2, pa == 0)
                } else {
                    IntExpr::Const(0)
                };
                branches.push(Branch {
                    prob: pr(cr_reg) * pr(cw_reg),
                    updates: vec![
                        step.clone(),
                        Update { var: 1, value: cr_val },
                        Update { var: 2, value: cw_val },
                    ],
                });
            }
            commands.push(Command {
                label: vec![vi, pa],
                guard: guard.clone(),
                branches,
            });
        }
    }
    let r = PolyExpr::var(crate::expr::ProbVar::new(0, "r".to_string()));
    let m = PolyExpr::var(crate::expr::ProbVar::new(0, "m".to_string()));
    let w = PolyExpr::var(crate::expr::ProbVar::new(1, "w".to_string()));
    let c = PolyExpr::var(crate::expr::ProbVar::new(1, "c".to_string()));
    let cr = PolyExpr::var(Pcsg::state_var("cr"));
    let cw = PolyExpr::var(Pcsg::state_var("cw"));
    let konst = |n: i64, d: i64| PolyExpr::constant(rat(n, d));
    let half = rat(1, 2);
    let fine = c.scale(&mu);
    // vehicle rows follow the pedestrian's history counter and vice versa
    let veh_hist = w.add(&cw.scale(&rat(1, 10))).scale(&half);
    let veh_swing = c.sub(&cw.scale(&rat(1, 10))).scale(&half);
    let ped_hist = r.add(&cr.scale(&rat(1, 10))).scale(&half);
    let ped_swing = m.sub(&cr.scale(&rat(1, 10))).scale(&half);
    let veh_rewards = vec![
        rule([0, 0], konst(1, 1).sub(&veh_hist)),
        rule([0, 1], konst(3, 2).add(&veh_swing)),
        rule([1, 0], konst(1, 1).add(&veh_hist)),
        rule([1, 1], konst(1, 2).sub(&veh_swing)),
    ];
    let ped_rewards = vec![
        rule([0, 0], konst(1, 1).sub(&ped_hist)),
        rule([0, 1], konst(1, 1).add(&ped_hist).sub(&fine)),
        rule([1, 0], konst(3, 2).add(&ped_swing)),
        rule([1, 1], konst(1, 2).sub(&ped_swing).sub(&fine)),
    ];
    Ok(Pcsg::new(
        vec!["vehicle".into(), "pedestrian".into()],
        vec![
            vec!["r".into(), "m".into()],
            vec!["w".into(), "c".into()],
        ],
        vars,
        commands,
        vec![veh_rewards, ped_rewards],
        vec![Vec::new(), Vec::new()],
    )?)
}

fn rule(label: [usize; 2], expr: PolyExpr) -> RewardRule {
    RewardRule {
        label: label.to_vec(),
        guard: Guard::True,
        expr,
    }
}

/// Solver output for one model at one parameter point, ready for CSV or
/// JSON serialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub model: String,
    pub params: BTreeMap<String, f64>,
    pub players: Vec<String>,
    pub equilibria: Vec<EquilibriumRecord>,
    /// Set when solving this point failed; such records carry no equilibria.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumRecord {
    /// Supported action names per player.
    pub support: Vec<Vec<String>>,
    /// Full strategy rows: per player, `(action, probability)`.
    pub strategy: Vec<Vec<(String, f64)>>,
    pub utilities: Vec<f64>,
    pub welfare: f64,
    pub residual: f64,
}

impl EquilibriumRecord {
    pub fn from_candidate(game: &Nfpg, c: &EquilibriumCandidate) -> Self {
        let support = (0..game.num_players())
            .map(|i| {
                c.support
                    .indices(i)
                    .into_iter()
                    .map(|a| game.action_name(i, a).to_string())
                    .collect()
            })
            .collect();
        EquilibriumRecord {
            support,
            strategy: c.profile.rows().to_vec(),
            utilities: c.payoffs.clone(),
            welfare: c.welfare,
            residual: c.residual,
        }
    }
}

impl ResultRecord {
    pub fn new(
        model: impl Into<String>,
        params: BTreeMap<String, f64>,
        game: &Nfpg,
        candidates: &[EquilibriumCandidate],
    ) -> Self {
        ResultRecord {
            model: model.into(),
            params,
            players: game.player_names().to_vec(),
            equilibria: candidates
                .iter()
                .map(|c| EquilibriumRecord::from_candidate(game, c))
                .collect(),
            error: None,
        }
    }

    pub fn failed(model: impl Into<String>, params: BTreeMap<String, f64>, error: String) -> Self {
        ResultRecord {
            model: model.into(),
            params,
            players: Vec::new(),
            equilibria: Vec::new(),
            error: Some(error),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!("unknown format `{other}` (expected csv or json)")),
        }
    }
}

/// Formats with 12 significant digits, trimming trailing zeros; integers
/// print without a decimal point.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let e = format!("{x:.11e}");
    let (mantissa, exp) = e.split_once('e').expect("exponential format");
    let exp: i32 = exp.parse().expect("exponent parses");
    let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
    if (-4..12).contains(&exp) {
        let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
        let neg = mantissa.starts_with('-');
        let point = exp + 1;
        let mut s = String::new();
        if neg {
            s.push('-');
        }
        if point <= 0 {
            s.push_str("0.");
            for _ in 0..-point {
                s.push('0');
            }
            s.push_str(&digits);
        } else if (point as usize) >= digits.len() {
            s.push_str(&digits);
            for _ in 0..point as usize - digits.len() {
                s.push('0');
            }
        } else {
            s.push_str(&digits[..point as usize]);
            s.push('.');
            s.push_str(&digits[point as usize..]);
        }
        s
    } else {
        format!("{mantissa}e{exp}")
    }
}

/// Writes records in the long CSV layout
/// `model,param:*,eq_index,player,action,prob,utility,welfare,residual`:
/// per equilibrium, one probability row per (player, action) followed by one
/// utility row per player. JSON mirrors the records verbatim.
pub fn write_results<W: Write>(
    records: &[ResultRecord],
    format: OutputFormat,
    mut dest: W,
) -> Result<(), ModelError> {
    match format {
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut dest, records).map_err(std::io::Error::from)?;
            dest.write_all(b"\n")?;
        }
        OutputFormat::Csv => {
            let mut params: BTreeSet<&str> = BTreeSet::new();
            for r in records {
                params.extend(r.params.keys().map(String::as_str));
            }
            let mut w = csv::Writer::from_writer(dest);
            let mut header = vec!["model".to_string()];
            header.extend(params.iter().map(|p| format!("param:{p}")));
            header.extend(
                ["eq_index", "player", "action", "prob", "utility", "welfare", "residual"]
                    .map(String::from),
            );
            w.write_record(&header).map_err(io_err)?;
            for r in records {
                let fixed: Vec<String> = std::iter::once(r.model.clone())
                    .chain(
                        params
                            .iter()
                            .map(|p| r.params.get(*p).map(|v| fmt_sig(*v)).unwrap_or_default()),
                    )
                    .collect();
                let player = |pi: usize| {
                    r.players
                        .get(pi)
                        .cloned()
                        .unwrap_or_else(|| format!("p{pi}"))
                };
                if r.equilibria.is_empty() {
                    // Failed or empty points keep one all-blank row so the
                    // sweep grid stays visible in the table.
                    let mut rec = fixed.clone();
                    rec.extend(std::iter::repeat(String::new()).take(7));
                    w.write_record(&rec).map_err(io_err)?;
                }
                for (ei, eq) in r.equilibria.iter().enumerate() {
                    let welfare = fmt_sig(eq.welfare);
                    let residual = fmt_sig(eq.residual);
                    for (pi, row) in eq.strategy.iter().enumerate() {
                        for (action, prob) in row {
                            let mut rec = fixed.clone();
                            rec.extend([
                                ei.to_string(),
                                player(pi),
                                action.clone(),
                                fmt_sig(*prob),
                                String::new(),
                                welfare.clone(),
                                residual.clone(),
                            ]);
                            w.write_record(&rec).map_err(io_err)?;
                        }
                    }
                    for (pi, u) in eq.utilities.iter().enumerate() {
                        let mut rec = fixed.clone();
                        rec.extend([
                            ei.to_string(),
                            player(pi),
                            String::new(),
                            String::new(),
                            fmt_sig(*u),
                            welfare.clone(),
                            residual.clone(),
                        ]);
                        w.write_record(&rec).map_err(io_err)?;
                    }
                }
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn io_err(e: csv::Error) -> ModelError {
    ModelError::Io(std::io::Error::other(e))
}

/// Reads back records written as JSON.
pub fn read_results_json<R: Read>(src: R) -> Result<Vec<ResultRecord>, ModelError> {
    serde_json::from_reader(src)
        .map_err(|e| ModelError::Io(std::io::Error::other(e)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bindings(pairs: &[(&str, Rat)]) -> BTreeMap<String, Rat> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    }

    #[test]
    fn parse_rejects_malformed_input() {
        let missing_header = parse_model("player p: a;");
        assert!(
            matches!(missing_header, Err(ModelError::SyntaxError { line: 1, col: 1, .. })),
            "{missing_header:?}"
        );

        let dup = parse_model("nfpg\nplayer p: a;\nplayer q: a;");
        assert!(matches!(dup, Err(ModelError::DuplicateAction(ref n)) if n == "a"), "{dup:?}");

        let unknown = parse_model("nfpg\nplayer p: a, b;\nrewards \"p\"\n  [a] : a + zz;\nendrewards\n");
        assert!(
            matches!(
                unknown,
                Err(ModelError::UnknownIdentifier { ref name, line: 4, col: 13 }) if name == "zz"
            ),
            "{unknown:?}"
        );

        let reserved = parse_model("nfpg\nconst true = 1;\nplayer p: a;");
        assert!(matches!(reserved, Err(ModelError::SyntaxError { line: 2, .. })), "{reserved:?}");

        let nfpg_var = parse_model("nfpg\nplayer p: a;\nvar x : [0..1] init 0;");
        assert!(matches!(nfpg_var, Err(ModelError::SyntaxError { line: 3, .. })), "{nfpg_var:?}");

        let uncovered = parse_model("nfpg\nplayer p: a;\nplayer q: b;\nrewards \"p\"\n  [a] : 1;\nendrewards\n");
        assert!(matches!(uncovered, Err(ModelError::SyntaxError { line: 5, .. })), "{uncovered:?}");

        let no_players = parse_model("nfpg\nconst c = 1;\n");
        assert!(matches!(no_players, Err(ModelError::DuplicateOrMissingPlayers(_))), "{no_players:?}");
    }

    #[test]
    fn bundled_texts_round_trip_through_print() {
        for m in builtin_models() {
            let ast = parse_model(m.text).unwrap_or_else(|e| panic!("{}: {e}", m.name));
            let printed = print_model(&ast);
            let reparsed =
                parse_model(&printed).unwrap_or_else(|e| panic!("{} (printed): {e}\n{printed}", m.name));
            assert_eq!(reparsed, ast, "{} changed across print/parse", m.name);
        }
    }

    #[test]
    fn dsl_and_constructor_routes_agree() {
        let cases: Vec<(&str, Model)> = vec![
            ("confidence", Model::Nfpg(confidence_game())),
            ("example2", Model::Nfpg(example2_game())),
            ("reciprocity", Model::Nfpg(reciprocity_game(rat(1, 1), rat(1, 1)))),
            ("ultimatum", Model::Nfpg(ultimatum_game(rat(1, 1), rat(1, 1)))),
            ("crossing", Model::Nfpg(crossing_game(rat(1, 1)))),
            ("cyclist_vehicle", Model::Nfpg(cyclist_vehicle_game())),
            ("cyclist_bimatrix", Model::Nfpg(cyclist_bimatrix_game(rat(9, 10)))),
            (
                "crossing_multi",
                Model::Pcsg(crossing_multi_game(rat(1, 1), rat(1, 2), 5).unwrap()),
            ),
        ];
        for (name, constructed) in cases {
            let parsed = builtin(name)
                .unwrap_or_else(|| panic!("no builtin `{name}`"))
                .elaborate(&BTreeMap::new())
                .unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(parsed, constructed, "routes disagree for `{name}`");
        }
    }

    #[test]
    fn elaboration_binds_and_overrides_constants() {
        let m = builtin("reciprocity").unwrap();
        let half = m
            .elaborate(&bindings(&[("theta1", rat(1, 2))]))
            .unwrap();
        assert_eq!(half, Model::Nfpg(reciprocity_game(rat(1, 2), rat(1, 1))));

        let unknown = m.elaborate(&bindings(&[("zeta", rat(1, 1))]));
        assert!(matches!(unknown, Err(ModelError::UnknownParameter(ref n)) if n == "zeta"));

        let ast = parse_model("nfpg\nconst a;\nplayer p: x, y;\nrewards \"p\"\n  [x] : a*x;\nendrewards\n")
            .unwrap();
        let unbound = elaborate(&ast, &BTreeMap::new());
        assert!(matches!(unbound, Err(ModelError::UnboundConstant(ref n)) if n == "a"));
        let bound = elaborate(&ast, &bindings(&[("a", rat(3, 1))])).unwrap();
        let g = bound.as_nfpg().unwrap();
        let x = PolyExpr::var(g.var(0, 0));
        assert_eq!(*g.utility(0, &[0]), x.scale(&rat(3, 1)));

        let k2 = builtin("crossing_multi")
            .unwrap()
            .elaborate(&bindings(&[("k", rat(2, 1)), ("gamma", rat(1, 1))]))
            .unwrap();
        assert_eq!(
            k2,
            Model::Pcsg(crossing_multi_game(rat(1, 1), rat(1, 1), 2).unwrap())
        );
    }

    #[test]
    fn pcsg_guards_updates_and_state_rewards_parse() {
        let text = "\
pcsg
const g = 1/3;
player one: u, d;
var x : [0..2] init 1;
var y : [-1..1] init 0;
[u] (x<2 & !(y=1)) | false -> g : (x'=min(x+1,2)) & (y'=1) + 1-g : true;
[d] x>0 -> (x'=max(x-1,0) & y'=-1);
rewards \"one\"
  [u] : 1/2 + x/2 - u;
  x=2 : 7;
endrewards
";
        let ast = parse_model(text).unwrap();
        assert_eq!(parse_model(&print_model(&ast)).unwrap(), ast);
        let model = elaborate(&ast, &BTreeMap::new()).unwrap();
        let g = model.as_pcsg().unwrap();
        let succ = g.transition(&vec![1, 0], &[0]).unwrap();
        assert_eq!(succ.get(&vec![2, 1]), Some(&rat(1, 3)));
        assert_eq!(succ.get(&vec![1, 0]), Some(&rat(2, 3)));
        let down = g.transition(&vec![1, 0], &[1]).unwrap();
        assert_eq!(down.get(&vec![0, -1]), Some(&rat(1, 1)));

        let vars_in_state_reward =
            parse_model("pcsg\nplayer one: u;\nvar x : [0..1] init 0;\n[u] true -> true;\nrewards \"one\"\n  x<1 : x;\nendrewards\n");
        assert!(
            matches!(vars_in_state_reward, Err(ModelError::UnknownIdentifier { ref name, .. }) if name == "x"),
            "{vars_in_state_reward:?}"
        );
    }

    #[test]
    fn fmt_sig_goldens() {
        for (x, want) in [
            (0.0, "0"),
            (-0.0, "0"),
            (1.0, "1"),
            (0.45, "0.45"),
            (-8.0 / 9.0, "-0.888888888889"),
            (1.875, "1.875"),
            (123456789.0, "123456789"),
            (100000000000.0, "100000000000"),
            (1e12, "1e12"),
            (0.0001, "0.0001"),
            (1e-5, "1e-5"),
            (-2.5e-7, "-2.5e-7"),
        ] {
            assert_eq!(fmt_sig(x), want, "fmt_sig({x})");
        }
    }

    fn sample_record() -> ResultRecord {
        ResultRecord {
            model: "crossing".into(),
            params: [("mu".to_string(), 2.0)].into(),
            players: vec!["vehicle".into(), "pedestrian".into()],
            equilibria: vec![EquilibriumRecord {
                support: vec![
                    vec!["reduce".into(), "maintain".into()],
                    vec!["wait".into(), "cross".into()],
                ],
                strategy: vec![
                    vec![("reduce".into(), 0.75), ("maintain".into(), 0.25)],
                    vec![("wait".into(), 0.5), ("cross".into(), 0.5)],
                ],
                utilities: vec![1.0, 0.875],
                welfare: 1.875,
                residual: 0.0,
            }],
            error: None,
        }
    }

    #[test]
    fn csv_layout_is_stable() {
        let mut out = Vec::new();
        write_results(&[sample_record()], OutputFormat::Csv, &mut out).unwrap();
        let expected = "\
model,param:mu,eq_index,player,action,prob,utility,welfare,residual
crossing,2,0,vehicle,reduce,0.75,,1.875,0
crossing,2,0,vehicle,maintain,0.25,,1.875,0
crossing,2,0,pedestrian,wait,0.5,,1.875,0
crossing,2,0,pedestrian,cross,0.5,,1.875,0
crossing,2,0,vehicle,,,1,1.875,0
crossing,2,0,pedestrian,,,0.875,1.875,0
";
        assert_eq!(String::from_utf8(out).unwrap(), expected);
    }

    #[test]
    fn failed_points_keep_a_csv_row() {
        let rec = ResultRecord::failed(
            "crossing",
            [("mu".to_string(), 5.0)].into(),
            "no equilibrium found".into(),
        );
        let mut out = Vec::new();
        write_results(&[rec], OutputFormat::Csv, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().starts_with("crossing,5,"));
    }

    #[test]
    fn json_round_trips() {
        let records = vec![
            sample_record(),
            ResultRecord::failed("x", BTreeMap::new(), "solver gave up".into()),
        ];
        let mut out = Vec::new();
        write_results(&records, OutputFormat::Json, &mut out).unwrap();
        let back = read_results_json(&out[..]).unwrap();
        assert_eq!(back, records);
    }
}
