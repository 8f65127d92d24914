//! Normal-form psychological games: representation, expected utility under
//! shared beliefs, support machinery, and equilibrium verification.
//!
//! A psychological game differs from an ordinary normal-form game in that a
//! utility entry may mention the *probabilities* with which actions are
//! played, not only the actions chosen. Entries are [`PolyExpr`] values over
//! the game's own action-probability variables. Freezing those variables at a
//! strategy profile — beliefs matching reality — turns the game into an
//! ordinary numeric game; a profile is a psychological equilibrium exactly
//! when it is a Nash equilibrium of the numeric game obtained by freezing
//! beliefs at the profile itself. [`verify_pe`] checks this condition with a
//! quantitative residual.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::ToPrimitive;

use crate::expr::{PolyExpr, ProbVar, Vocab};

/// Tolerance on per-player probability sums when validating a profile.
pub const EPS_PROB: f64 = 1e-9;

/// Probabilities at or below this threshold count as zero when classifying a
/// profile's support.
pub const EPS_SUPP: f64 = 1e-8;

/// Default equilibrium-verification tolerance; matches the solver's
/// feasibility tolerance so synthesized equilibria verify.
pub const DEFAULT_TOL: f64 = 1e-6;

/// Name given to the action materialized for a player declared with no
/// actions. Several players may share it; it may not appear in utility
/// expressions.
pub const IDLE: &str = "idle";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GameError {
    #[error("game has no players")]
    NoPlayers,
    #[error("duplicate action name `{0}`")]
    DuplicateAction(String),
    #[error("player {player} has {count} actions; at most 63 are supported")]
    TooManyActions { player: usize, count: usize },
    #[error("utility for player {player} references unknown probability variable `{action}` of player {var_player}")]
    UnknownProbVar {
        player: usize,
        var_player: usize,
        action: String,
    },
    #[error("utility for player {player} references an idle action's probability")]
    IdleProbVar { player: usize },
    #[error("strategy profile does not match game shape: {0}")]
    ProfileShapeMismatch(String),
    #[error("player {player} probabilities do not form a distribution (sum {sum})")]
    InvalidDistribution { player: usize, sum: f64 },
    #[error("joint action does not name one action per player")]
    BadJointAction,
}

// ---------------------------------------------------------------------------
// Nfpg
// ---------------------------------------------------------------------------

/// A normal-form psychological game.
///
/// Players and actions are ordered; a joint action picks one action index per
/// player. Utility entries are polynomials over [`ProbVar`]s of this same
/// game, kept exact until a solver or evaluator converts to floating point.
#[derive(Clone, Debug, PartialEq)]
pub struct Nfpg {
    players: Vec<String>,
    actions: Vec<Vec<String>>,
    /// `utility[i][j]` for player `i` at joint index `j`; joint indices are
    /// row-major with player 0 most significant.
    utility: Vec<Vec<PolyExpr>>,
}

impl Nfpg {
    /// Creates a game with all-zero utilities.
    ///
    /// A player with an empty action list gets the single action [`IDLE`].
    /// Action names must be globally unique (the idle name excepted, since it
    /// never carries a probability variable).
    pub fn new(players: Vec<String>, actions: Vec<Vec<String>>) -> Result<Self, GameError> {
        if players.is_empty() || players.len() != actions.len() {
            return Err(GameError::NoPlayers);
        }
        let actions: Vec<Vec<String>> = actions
            .into_iter()
            .map(|acts| {
                if acts.is_empty() {
                    vec![IDLE.to_string()]
                } else {
                    acts
                }
            })
            .collect();
        let mut seen = BTreeMap::new();
        for (i, acts) in actions.iter().enumerate() {
            if acts.len() > 63 {
                return Err(GameError::TooManyActions {
                    player: i,
                    count: acts.len(),
                });
            }
            for a in acts {
                if a != IDLE && seen.insert(a.clone(), i).is_some() {
                    return Err(GameError::DuplicateAction(a.clone()));
                }
            }
        }
        let joint_count: usize = actions.iter().map(Vec::len).product();
        let utility = vec![vec![PolyExpr::zero(); joint_count]; players.len()];
        Ok(Nfpg {
            players,
            actions,
            utility,
        })
    }

    /// Creates a game and fills every utility entry from `f(player, joint)`.
    pub fn with_utilities(
        players: Vec<String>,
        actions: Vec<Vec<String>>,
        mut f: impl FnMut(usize, &[usize]) -> PolyExpr,
    ) -> Result<Self, GameError> {
        let mut g = Nfpg::new(players, actions)?;
        let mut joint = vec![0usize; g.num_players()];
        for j in 0..g.joint_count() {
            g.decode_joint(j, &mut joint);
            for i in 0..g.num_players() {
                let e = f(i, &joint);
                g.set_utility(i, &joint, e)?;
            }
        }
        Ok(g)
    }

    pub fn num_players(&self) -> usize {
        self.players.len()
    }

    pub fn player_name(&self, i: usize) -> &str {
        &self.players[i]
    }

    pub fn player_names(&self) -> &[String] {
        &self.players
    }

    pub fn actions(&self, i: usize) -> &[String] {
        &self.actions[i]
    }

    pub fn action_count(&self, i: usize) -> usize {
        self.actions[i].len()
    }

    pub fn action_name(&self, i: usize, a: usize) -> &str {
        &self.actions[i][a]
    }

    /// Finds the (player, action-index) pair declaring `name`. Idle actions
    /// resolve to the first player carrying one.
    pub fn action_lookup(&self, name: &str) -> Option<(usize, usize)> {
        for (i, acts) in self.actions.iter().enumerate() {
            if let Some(a) = acts.iter().position(|x| x == name) {
                return Some((i, a));
            }
        }
        None
    }

    /// The probability variable of action `a` of player `i`.
    pub fn var(&self, i: usize, a: usize) -> ProbVar {
        ProbVar::new(i, self.actions[i][a].clone())
    }

    /// Name-to-variable vocabulary for [`crate::expr::parse_expr`], covering
    /// every non-idle action.
    pub fn vocab(&self) -> Vocab {
        let mut v = Vocab::new();
        for (i, acts) in self.actions.iter().enumerate() {
            for (a, name) in acts.iter().enumerate() {
                if name != IDLE {
                    v.insert(name.clone(), PolyExpr::var(self.var(i, a)));
                }
            }
        }
        v
    }

    /// Number of joint actions, `Π_i |A_i|`.
    pub fn joint_count(&self) -> usize {
        self.actions.iter().map(Vec::len).product()
    }

    /// Row-major joint index of `joint`, player 0 most significant.
    pub fn joint_index(&self, joint: &[usize]) -> Result<usize, GameError> {
        if joint.len() != self.num_players() {
            return Err(GameError::BadJointAction);
        }
        let mut idx = 0usize;
        for (i, &a) in joint.iter().enumerate() {
            if a >= self.actions[i].len() {
                return Err(GameError::BadJointAction);
            }
            idx = idx * self.actions[i].len() + a;
        }
        Ok(idx)
    }

    /// Writes the per-player action indices of joint index `idx` into `out`.
    pub fn decode_joint(&self, idx: usize, out: &mut [usize]) {
        let mut rem = idx;
        for i in (0..self.num_players()).rev() {
            let k = self.actions[i].len();
            out[i] = rem % k;
            rem /= k;
        }
    }

    /// Sets player `i`'s utility at `joint`. Every probability variable in
    /// `e` must name a declared, non-idle action of this game.
    pub fn set_utility(
        &mut self,
        i: usize,
        joint: &[usize],
        e: PolyExpr,
    ) -> Result<(), GameError> {
        for v in e.vars() {
            if v.action == IDLE {
                return Err(GameError::IdleProbVar { player: i });
            }
            let declared = self
                .actions
                .get(v.player)
                .map(|acts| acts.iter().any(|a| *a == v.action))
                .unwrap_or(false);
            if !declared {
                return Err(GameError::UnknownProbVar {
                    player: i,
                    var_player: v.player,
                    action: v.action,
                });
            }
        }
        let idx = self.joint_index(joint)?;
        self.utility[i][idx] = e;
        Ok(())
    }

    pub fn utility(&self, i: usize, joint: &[usize]) -> &PolyExpr {
        let idx = self.joint_index(joint).expect("joint action in range");
        &self.utility[i][idx]
    }

    pub(crate) fn utility_by_index(&self, i: usize, idx: usize) -> &PolyExpr {
        &self.utility[i][idx]
    }
}

// ---------------------------------------------------------------------------
// StrategyProfile
// ---------------------------------------------------------------------------

/// Per-player probability distribution over that player's actions, stored in
/// the owning game's action order together with the action names.
#[derive(Clone, Debug, PartialEq)]
pub struct StrategyProfile {
    rows: Vec<Vec<(String, f64)>>,
}

impl StrategyProfile {
    /// Uniform distribution for every player.
    pub fn uniform(game: &Nfpg) -> Self {
        let rows = game
            .actions
            .iter()
            .map(|acts| {
                let p = 1.0 / acts.len() as f64;
                acts.iter().map(|a| (a.clone(), p)).collect()
            })
            .collect();
        StrategyProfile { rows }
    }

    /// Pure profile playing `joint` with probability one.
    pub fn pure(game: &Nfpg, joint: &[usize]) -> Result<Self, GameError> {
        if joint.len() != game.num_players() {
            return Err(GameError::BadJointAction);
        }
        let rows = game
            .actions
            .iter()
            .zip(joint)
            .map(|(acts, &chosen)| {
                acts.iter()
                    .enumerate()
                    .map(|(a, name)| (name.clone(), if a == chosen { 1.0 } else { 0.0 }))
                    .collect()
            })
            .collect();
        Ok(StrategyProfile { rows })
    }

    /// Builds a profile from per-player probability vectors in action order.
    pub fn from_rows(game: &Nfpg, rows: Vec<Vec<f64>>) -> Result<Self, GameError> {
        if rows.len() != game.num_players() {
            return Err(GameError::ProfileShapeMismatch(format!(
                "{} rows for {} players",
                rows.len(),
                game.num_players()
            )));
        }
        let mut out = Vec::with_capacity(rows.len());
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != game.action_count(i) {
                return Err(GameError::ProfileShapeMismatch(format!(
                    "player {} has {} probabilities for {} actions",
                    i,
                    row.len(),
                    game.action_count(i)
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > EPS_PROB || row.iter().any(|&p| p < -EPS_PROB) {
                return Err(GameError::InvalidDistribution { player: i, sum });
            }
            out.push(
                game.actions[i]
                    .iter()
                    .zip(row)
                    .map(|(a, p)| (a.clone(), p))
                    .collect(),
            );
        }
        Ok(StrategyProfile { rows: out })
    }

    /// Builds a profile from `(action name, probability)` pairs. Unnamed
    /// actions get probability zero, except that a player with a single
    /// action defaults to playing it.
    pub fn from_named(game: &Nfpg, named: &[(&str, f64)]) -> Result<Self, GameError> {
        let mut rows: Vec<Vec<f64>> = game
            .actions
            .iter()
            .map(|acts| {
                if acts.len() == 1 {
                    vec![1.0]
                } else {
                    vec![0.0; acts.len()]
                }
            })
            .collect();
        for (name, p) in named {
            let (i, a) = game.action_lookup(name).ok_or_else(|| {
                GameError::ProfileShapeMismatch(format!("unknown action `{name}`"))
            })?;
            rows[i][a] = *p;
        }
        StrategyProfile::from_rows(game, rows)
    }

    /// Wraps already-validated rows; used by the solver, whose iterates are
    /// simplex-projected by construction.
    pub(crate) fn from_parts(rows: Vec<Vec<(String, f64)>>) -> Self {
        StrategyProfile { rows }
    }

    pub fn num_players(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<(String, f64)>] {
        &self.rows
    }

    pub fn prob(&self, player: usize, action: usize) -> f64 {
        self.rows[player][action].1
    }

    /// Probability of the uniquely named action, if any player declares it.
    pub fn prob_of(&self, name: &str) -> Option<f64> {
        self.rows
            .iter()
            .flatten()
            .find(|(a, _)| a == name)
            .map(|(_, p)| *p)
    }

    /// All probabilities concatenated in player order.
    pub fn flat(&self) -> Vec<f64> {
        self.rows.iter().flatten().map(|(_, p)| *p).collect()
    }

    /// Actions played with probability above `eps`.
    pub fn support(&self, eps: f64) -> Support {
        let masks = self
            .rows
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, (_, p))| *p > eps)
                    .fold(0u64, |m, (a, _)| m | (1 << a))
            })
            .collect();
        Support::from_masks(masks)
    }

    fn check_shape(&self, game: &Nfpg) -> Result<(), GameError> {
        if self.rows.len() != game.num_players() {
            return Err(GameError::ProfileShapeMismatch(format!(
                "{} rows for {} players",
                self.rows.len(),
                game.num_players()
            )));
        }
        for (i, row) in self.rows.iter().enumerate() {
            let names: Vec<&str> = row.iter().map(|(a, _)| a.as_str()).collect();
            let declared: Vec<&str> = game.actions[i].iter().map(String::as_str).collect();
            if names != declared {
                return Err(GameError::ProfileShapeMismatch(format!(
                    "player {} actions {:?} do not match {:?}",
                    i, names, declared
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for StrategyProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first_row = true;
        for row in &self.rows {
            if !first_row {
                write!(f, " | ")?;
            }
            first_row = false;
            let mut first = true;
            for (a, p) in row {
                if !first {
                    write!(f, ", ")?;
                }
                first = false;
                write!(f, "{a}={p:.6}")?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Support
// ---------------------------------------------------------------------------

/// Per-player nonempty subset of actions, stored as bitmasks. The derived
/// ordering (player 0 mask first) matches the order of [`enumerate_supports`].
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Support {
    masks: Vec<u64>,
}

impl Support {
    pub fn from_masks(masks: Vec<u64>) -> Self {
        debug_assert!(masks.iter().all(|&m| m != 0), "support must be nonempty");
        Support { masks }
    }

    pub fn from_sets(sets: &[Vec<usize>]) -> Self {
        let masks = sets
            .iter()
            .map(|s| s.iter().fold(0u64, |m, &a| m | (1 << a)))
            .collect();
        Support::from_masks(masks)
    }

    /// Support containing every action of every player.
    pub fn full(game: &Nfpg) -> Self {
        let masks = game
            .actions
            .iter()
            .map(|acts| (1u64 << acts.len()) - 1)
            .collect();
        Support { masks }
    }

    pub fn num_players(&self) -> usize {
        self.masks.len()
    }

    pub fn masks(&self) -> &[u64] {
        &self.masks
    }

    pub fn contains(&self, player: usize, action: usize) -> bool {
        self.masks[player] & (1 << action) != 0
    }

    /// Supported action indices of `player`, ascending.
    pub fn indices(&self, player: usize) -> Vec<usize> {
        (0..64).filter(|&a| self.contains(player, a)).collect()
    }

    pub fn card(&self, player: usize) -> usize {
        self.masks[player].count_ones() as usize
    }

    pub fn is_pure(&self) -> bool {
        self.masks.iter().all(|m| m.count_ones() == 1)
    }

    /// Renders the support with action names, e.g. `{a2,r2}x{r3}`.
    pub fn describe(&self, game: &Nfpg) -> String {
        let mut parts = Vec::with_capacity(self.masks.len());
        for (i, _) in self.masks.iter().enumerate() {
            let names: Vec<&str> = self
                .indices(i)
                .into_iter()
                .map(|a| game.action_name(i, a))
                .collect();
            parts.push(format!("{{{}}}", names.join(",")));
        }
        parts.join("x")
    }
}

/// All `Π_i (2^{|A_i|} − 1)` supports in lexicographic order: ordered by
/// player 0's action-subset bitmask, then player 1's, and so on, each mask
/// ascending from 1.
pub fn enumerate_supports(game: &Nfpg) -> Vec<Support> {
    let mut out = Vec::new();
    let n = game.num_players();
    let max: Vec<u64> = (0..n).map(|i| (1u64 << game.action_count(i)) - 1).collect();
    let mut masks = vec![1u64; n];
    loop {
        out.push(Support::from_masks(masks.clone()));
        let mut i = n;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if masks[i] < max[i] {
                masks[i] += 1;
                for m in &mut masks[i + 1..] {
                    *m = 1;
                }
                break;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// EquilibriumCandidate
// ---------------------------------------------------------------------------

/// A strategy profile together with its frozen-belief payoffs, welfare,
/// support classification, and equilibrium residual.
#[derive(Clone, Debug)]
pub struct EquilibriumCandidate {
    pub profile: StrategyProfile,
    pub payoffs: Vec<f64>,
    pub welfare: f64,
    pub support: Support,
    pub residual: f64,
}

impl EquilibriumCandidate {
    /// Evaluates `profile` on `game`: payoffs with beliefs frozen at the
    /// profile, welfare as their sum, support at [`EPS_SUPP`], and the
    /// verification residual.
    pub fn assess(game: &Nfpg, profile: StrategyProfile) -> Result<Self, GameError> {
        profile.check_shape(game)?;
        let cg = CompiledGame::new(game);
        let x = profile.flat();
        let (values, devs) = cg.values_and_deviations(&x, &x);
        let residual = residual_from(&cg, &x, &values, &devs);
        let welfare = values.iter().sum();
        let support = profile.support(EPS_SUPP);
        Ok(EquilibriumCandidate {
            profile,
            payoffs: values,
            welfare,
            support,
            residual,
        })
    }

    pub fn is_pe(&self, tol: f64) -> bool {
        self.residual <= tol
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Freezes every probability variable at `profile` and evaluates all utility
/// entries, yielding per-player numeric tables indexed like the game's joint
/// actions.
pub fn instantiate(game: &Nfpg, profile: &StrategyProfile) -> Result<Vec<Vec<f64>>, GameError> {
    profile.check_shape(game)?;
    let cg = CompiledGame::new(game);
    Ok(cg.instantiate(&profile.flat()))
}

/// Expected utility per player: coefficients frozen at `belief`, outcome
/// distribution taken from `play`.
pub fn expected_utility(
    game: &Nfpg,
    belief: &StrategyProfile,
    play: &StrategyProfile,
) -> Result<Vec<f64>, GameError> {
    belief.check_shape(game)?;
    play.check_shape(game)?;
    let cg = CompiledGame::new(game);
    let (values, _) = cg.values_and_deviations(&belief.flat(), &play.flat());
    Ok(values)
}

/// Checks whether `profile` is a psychological equilibrium within `tol`.
///
/// With beliefs frozen at the profile, every supported action must earn its
/// player the profile's value (absolute gap contributes to the residual) and
/// every unsupported action must not beat it (positive gap contributes).
/// Returns `(residual ≤ tol, residual)`.
pub fn verify_pe(
    game: &Nfpg,
    profile: &StrategyProfile,
    tol: f64,
) -> Result<(bool, f64), GameError> {
    assert!(tol > 0.0, "tolerance must be positive");
    profile.check_shape(game)?;
    let cg = CompiledGame::new(game);
    let x = profile.flat();
    let (values, devs) = cg.values_and_deviations(&x, &x);
    let residual = residual_from(&cg, &x, &values, &devs);
    Ok((residual <= tol, residual))
}

fn residual_from(cg: &CompiledGame, x: &[f64], values: &[f64], devs: &[Vec<f64>]) -> f64 {
    let mut res = 0.0f64;
    for i in 0..cg.action_counts.len() {
        for a in 0..cg.action_counts[i] {
            let gap = devs[i][a] - values[i];
            let contribution = if x[cg.offsets[i] + a] > EPS_SUPP {
                gap.abs()
            } else {
                gap.max(0.0)
            };
            res = res.max(contribution);
        }
    }
    res
}

// ---------------------------------------------------------------------------
// Compiled evaluation
// ---------------------------------------------------------------------------

/// Utility entry compiled to floating point: a sum of `coeff · Π x[var]`
/// terms over flat variable ids.
#[derive(Clone, Debug)]
pub(crate) struct CompiledPoly {
    terms: Vec<(f64, Vec<u32>)>,
}

impl CompiledPoly {
    pub(crate) fn compile_with(e: &PolyExpr, var_id: impl Fn(&ProbVar) -> usize) -> Self {
        let mut terms = Vec::new();
        for (m, c) in e.terms() {
            let mut ids = Vec::new();
            for (v, &exp) in m {
                let id = var_id(v) as u32;
                ids.extend(std::iter::repeat(id).take(exp as usize));
            }
            terms.push((c.to_f64().unwrap_or(f64::NAN), ids));
        }
        CompiledPoly { terms }
    }

    pub(crate) fn eval(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for (c, ids) in &self.terms {
            let mut term = *c;
            for &id in ids {
                term *= x[id as usize];
            }
            total += term;
        }
        total
    }
}

/// Game lowered to flat arrays for the solver and oracle hot paths. Variable
/// id of action `a` of player `i` is `offsets[i] + a`; strategy vectors are
/// laid out the same way (as produced by [`StrategyProfile::flat`]).
pub(crate) struct CompiledGame {
    pub action_counts: Vec<usize>,
    pub offsets: Vec<usize>,
    pub total_vars: usize,
    /// Decoded per-player action indices of each joint index.
    pub joints: Vec<Vec<usize>>,
    /// `tables[i][j]`: player `i`'s compiled utility at joint index `j`.
    pub tables: Vec<Vec<CompiledPoly>>,
}

impl CompiledGame {
    pub(crate) fn new(game: &Nfpg) -> Self {
        let n = game.num_players();
        let action_counts: Vec<usize> = (0..n).map(|i| game.action_count(i)).collect();
        let mut offsets = Vec::with_capacity(n);
        let mut total = 0usize;
        for &k in &action_counts {
            offsets.push(total);
            total += k;
        }
        let lookup: Vec<BTreeMap<&str, usize>> = (0..n)
            .map(|i| {
                game.actions(i)
                    .iter()
                    .enumerate()
                    .map(|(a, name)| (name.as_str(), a))
                    .collect()
            })
            .collect();
        let var_id = |v: &ProbVar| offsets[v.player] + lookup[v.player][v.action.as_str()];
        let joint_count = game.joint_count();
        let mut joints = Vec::with_capacity(joint_count);
        let mut buf = vec![0usize; n];
        for j in 0..joint_count {
            game.decode_joint(j, &mut buf);
            joints.push(buf.clone());
        }
        let tables = (0..n)
            .map(|i| {
                (0..joint_count)
                    .map(|j| CompiledPoly::compile_with(game.utility_by_index(i, j), var_id))
                    .collect()
            })
            .collect();
        CompiledGame {
            action_counts,
            offsets,
            total_vars: total,
            joints,
            tables,
        }
    }

    /// Evaluates every utility entry at the belief vector `belief`.
    pub(crate) fn instantiate(&self, belief: &[f64]) -> Vec<Vec<f64>> {
        self.tables
            .iter()
            .map(|row| row.iter().map(|p| p.eval(belief)).collect())
            .collect()
    }

    /// Returns `(values, devs)` where `devs[i][a]` is player `i`'s payoff for
    /// deviating to pure action `a` while everyone else follows `play`, with
    /// utility coefficients frozen at `belief`, and `values[i]` is the payoff
    /// of following `play`.
    pub(crate) fn values_and_deviations(
        &self,
        belief: &[f64],
        play: &[f64],
    ) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = self.action_counts.len();
        let inst = self.instantiate(belief);
        let mut devs: Vec<Vec<f64>> = self.action_counts.iter().map(|&k| vec![0.0; k]).collect();
        let mut pre = vec![0.0f64; n + 1];
        let mut suf = vec![0.0f64; n + 1];
        for (j, joint) in self.joints.iter().enumerate() {
            pre[0] = 1.0;
            for i in 0..n {
                pre[i + 1] = pre[i] * play[self.offsets[i] + joint[i]];
            }
            suf[n] = 1.0;
            for i in (0..n).rev() {
                suf[i] = suf[i + 1] * play[self.offsets[i] + joint[i]];
            }
            for i in 0..n {
                let weight = pre[i] * suf[i + 1];
                if weight != 0.0 {
                    devs[i][joint[i]] += inst[i][j] * weight;
                }
            }
        }
        let values = (0..n)
            .map(|i| {
                (0..self.action_counts[i])
                    .map(|a| play[self.offsets[i] + a] * devs[i][a])
                    .sum()
            })
            .collect();
        (values, devs)
    }

    /// Preallocated buffers for [`CompiledGame::residual_with`]; lets grid
    /// scans evaluate millions of points without reallocating.
    pub(crate) fn scratch(&self) -> EvalScratch {
        EvalScratch {
            inst: self.action_counts.iter().map(|_| Vec::new()).collect(),
            devs: self.action_counts.iter().map(|&k| vec![0.0; k]).collect(),
            values: vec![0.0; self.action_counts.len()],
            pre: vec![0.0; self.action_counts.len() + 1],
            suf: vec![0.0; self.action_counts.len() + 1],
        }
    }

    /// Equilibrium residual of the flat strategy vector `x` (beliefs frozen
    /// at `x` itself), written into preallocated buffers.
    pub(crate) fn residual_with(&self, x: &[f64], s: &mut EvalScratch) -> f64 {
        let n = self.action_counts.len();
        for (i, row) in self.tables.iter().enumerate() {
            s.inst[i].clear();
            s.inst[i].extend(row.iter().map(|p| p.eval(x)));
            for d in &mut s.devs[i] {
                *d = 0.0;
            }
        }
        for (j, joint) in self.joints.iter().enumerate() {
            s.pre[0] = 1.0;
            for i in 0..n {
                s.pre[i + 1] = s.pre[i] * x[self.offsets[i] + joint[i]];
            }
            s.suf[n] = 1.0;
            for i in (0..n).rev() {
                s.suf[i] = s.suf[i + 1] * x[self.offsets[i] + joint[i]];
            }
            for i in 0..n {
                let weight = s.pre[i] * s.suf[i + 1];
                if weight != 0.0 {
                    s.devs[i][joint[i]] += s.inst[i][j] * weight;
                }
            }
        }
        for i in 0..n {
            s.values[i] = (0..self.action_counts[i])
                .map(|a| x[self.offsets[i] + a] * s.devs[i][a])
                .sum();
        }
        residual_from(self, x, &s.values, &s.devs)
    }
}

pub(crate) struct EvalScratch {
    inst: Vec<Vec<f64>>,
    devs: Vec<Vec<f64>>,
    values: Vec<f64>,
    pre: Vec<f64>,
    suf: Vec<f64>,
}
