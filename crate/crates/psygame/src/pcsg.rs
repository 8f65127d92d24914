//! Finite-horizon psychological concurrent stochastic games.
//!
//! A state is a tuple of bounded integer variables. Guarded commands define,
//! per state, which joint actions are available and how the state evolves
//! (probabilistically, with exact rational branch probabilities). Rewards
//! are per-player and state-based: an action reward may mention the
//! probabilities of *same-state* actions — beliefs are local — plus a plain
//! state reward.
//!
//! Solving is backward induction over steps remaining: at each reachable
//! state the one-step lookahead forms an ordinary [`Nfpg`] (reward plus
//! expected continuation), which [`find_swpe`] solves; the chosen
//! equilibrium's payoffs become the state's value for the next layer. States
//! in which no command is enabled are terminal: every player idles and the
//! state self-loops with probability one.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::expr::{rat_from_f64, substitute, PolyExpr, ProbVar, Rat};
use crate::game::{EquilibriumCandidate, GameError, Nfpg};
use crate::nlp::{derive_seed, find_swpe, NlpError, SolverConfig};

/// Values of the state variables, in declaration order.
pub type State = Vec<i64>;

/// Player index under which state variables masquerade as [`ProbVar`]s
/// inside reward expressions; never a real player, and always substituted
/// away before a stage game is built.
const STATE_VAR_PLAYER: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PcsgError {
    #[error("invalid model: {0}")]
    BadModel(String),
    #[error("update drives `{var}` to {value}, outside its range, in state {state}")]
    OutOfRange {
        var: String,
        value: i64,
        state: String,
    },
    #[error("state {state} enables actions {joint} without a matching command")]
    MissingCommand { state: String, joint: String },
    #[error("no continuation value for successor state {state}")]
    MissingContinuation { state: String },
    #[error("no equilibrium at {t} steps remaining in state {state}: {source}")]
    NoEquilibriumFound {
        t: usize,
        state: String,
        source: NlpError,
    },
    #[error(transparent)]
    Game(#[from] GameError),
}

/// A bounded integer state variable.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVar {
    pub name: String,
    pub lo: i64,
    pub hi: i64,
    pub init: i64,
}

/// Integer arithmetic over state variables (guards and updates).
#[derive(Clone, Debug, PartialEq)]
pub enum IntExpr {
    Const(i64),
    /// Index into the game's variable list.
    Var(usize),
    Add(Box<IntExpr>, Box<IntExpr>),
    Sub(Box<IntExpr>, Box<IntExpr>),
    Mul(Box<IntExpr>, Box<IntExpr>),
    Min(Box<IntExpr>, Box<IntExpr>),
    Max(Box<IntExpr>, Box<IntExpr>),
}

impl IntExpr {
    pub fn eval(&self, state: &[i64]) -> i64 {
        match self {
            IntExpr::Const(c) => *c,
            IntExpr::Var(v) => state[*v],
            IntExpr::Add(a, b) => a.eval(state) + b.eval(state),
            IntExpr::Sub(a, b) => a.eval(state) - b.eval(state),
            IntExpr::Mul(a, b) => a.eval(state) * b.eval(state),
            IntExpr::Min(a, b) => a.eval(state).min(b.eval(state)),
            IntExpr::Max(a, b) => a.eval(state).max(b.eval(state)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

/// Boolean condition over state variables.
#[derive(Clone, Debug, PartialEq)]
pub enum Guard {
    True,
    Cmp(IntExpr, CmpOp, IntExpr),
    And(Box<Guard>, Box<Guard>),
    Or(Box<Guard>, Box<Guard>),
    Not(Box<Guard>),
}

impl Guard {
    pub fn eval(&self, state: &[i64]) -> bool {
        match self {
            Guard::True => true,
            Guard::Cmp(a, op, b) => {
                let (x, y) = (a.eval(state), b.eval(state));
                match op {
                    CmpOp::Eq => x == y,
                    CmpOp::Ne => x != y,
                    CmpOp::Lt => x < y,
                    CmpOp::Le => x <= y,
                    CmpOp::Gt => x > y,
                    CmpOp::Ge => x >= y,
                }
            }
            Guard::And(a, b) => a.eval(state) && b.eval(state),
            Guard::Or(a, b) => a.eval(state) || b.eval(state),
            Guard::Not(a) => !a.eval(state),
        }
    }
}

/// One assignment `var' = value` inside a branch.
#[derive(Clone, Debug, PartialEq)]
pub struct Update {
    pub var: usize,
    pub value: IntExpr,
}

/// One probabilistic outcome of a command.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub prob: Rat,
    pub updates: Vec<Update>,
}

/// A guarded command: when `guard` holds, the labeled joint action is
/// available and resolves through `branches`.
#[derive(Clone, Debug, PartialEq)]
pub struct Command {
    /// One action index per player.
    pub label: Vec<usize>,
    pub guard: Guard,
    pub branches: Vec<Branch>,
}

/// A guarded action reward for one player: applies when the state satisfies
/// `guard` and the joint action equals `label`.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardRule {
    pub label: Vec<usize>,
    pub guard: Guard,
    /// Polynomial over action probabilities and state variables (the latter
    /// via [`Pcsg::state_var`], replaced by constants per state).
    pub expr: PolyExpr,
}

/// A guarded state reward for one player.
#[derive(Clone, Debug, PartialEq)]
pub struct StateRewardRule {
    pub guard: Guard,
    pub value: Rat,
}

/// A psychological concurrent stochastic game in guarded-command form. The
/// state space is never materialized here; induction expands forward
/// reachability up to its horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct Pcsg {
    players: Vec<String>,
    actions: Vec<Vec<String>>,
    vars: Vec<StateVar>,
    commands: Vec<Command>,
    action_rewards: Vec<Vec<RewardRule>>,
    state_rewards: Vec<Vec<StateRewardRule>>,
}

impl Pcsg {
    pub fn new(
        players: Vec<String>,
        actions: Vec<Vec<String>>,
        vars: Vec<StateVar>,
        commands: Vec<Command>,
        action_rewards: Vec<Vec<RewardRule>>,
        state_rewards: Vec<Vec<StateRewardRule>>,
    ) -> Result<Self, PcsgError> {
        let n = players.len();
        if n == 0 || actions.len() != n || action_rewards.len() != n || state_rewards.len() != n {
            return Err(PcsgError::BadModel(
                "player, action and reward lists must align".into(),
            ));
        }
        let mut names = BTreeSet::new();
        for acts in &actions {
            for a in acts {
                if !names.insert(a.clone()) {
                    return Err(PcsgError::BadModel(format!("duplicate action `{a}`")));
                }
            }
        }
        let mut var_names = BTreeSet::new();
        for v in &vars {
            if !var_names.insert(v.name.clone()) {
                return Err(PcsgError::BadModel(format!(
                    "duplicate variable `{}`",
                    v.name
                )));
            }
            if v.lo > v.hi || v.init < v.lo || v.init > v.hi {
                return Err(PcsgError::BadModel(format!(
                    "variable `{}`: init {} outside range [{}..{}]",
                    v.name, v.init, v.lo, v.hi
                )));
            }
        }
        let check_label = |label: &[usize]| -> Result<(), PcsgError> {
            if label.len() != n || label.iter().enumerate().any(|(i, &a)| a >= actions[i].len()) {
                return Err(PcsgError::BadModel(
                    "command label must pick one declared action per player".into(),
                ));
            }
            Ok(())
        };
        for cmd in &commands {
            check_label(&cmd.label)?;
            if cmd.branches.is_empty() {
                return Err(PcsgError::BadModel("command with no branches".into()));
            }
            let sum: Rat = cmd.branches.iter().map(|b| b.prob.clone()).sum();
            if !sum.is_one() || cmd.branches.iter().any(|b| b.prob.is_negative()) {
                return Err(PcsgError::BadModel(format!(
                    "branch probabilities sum to {} instead of 1",
                    crate::expr::fmt_rat(&sum)
                )));
            }
            for b in &cmd.branches {
                for u in &b.updates {
                    if u.var >= vars.len() {
                        return Err(PcsgError::BadModel("update names unknown variable".into()));
                    }
                }
            }
        }
        for rules in &action_rewards {
            for r in rules {
                check_label(&r.label)?;
            }
        }
        Ok(Pcsg {
            players,
            actions,
            vars,
            commands,
            action_rewards,
            state_rewards,
        })
    }

    pub fn player_names(&self) -> &[String] {
        &self.players
    }

    pub fn num_players(&self) -> usize {
        self.players.len()
    }

    pub fn actions(&self, player: usize) -> &[String] {
        &self.actions[player]
    }

    pub fn vars(&self) -> &[StateVar] {
        &self.vars
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    pub fn initial_state(&self) -> State {
        self.vars.iter().map(|v| v.init).collect()
    }

    /// The pseudo-variable standing for a state variable inside reward
    /// expressions.
    pub fn state_var(name: impl Into<String>) -> ProbVar {
        ProbVar::new(STATE_VAR_PLAYER, name)
    }

    pub fn describe_state(&self, s: &State) -> String {
        let parts: Vec<String> = self
            .vars
            .iter()
            .zip(s)
            .map(|(v, val)| format!("{}={}", v.name, val))
            .collect();
        format!("<{}>", parts.join(","))
    }

    fn enabled(&self, s: &State) -> Vec<&Command> {
        self.commands.iter().filter(|c| c.guard.eval(s)).collect()
    }

    /// Available actions per player: the label projections of enabled
    /// commands. Empty everywhere exactly when the state is terminal.
    pub fn avail(&self, s: &State) -> Vec<Vec<usize>> {
        let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.players.len()];
        for cmd in self.enabled(s) {
            for (i, &a) in cmd.label.iter().enumerate() {
                sets[i].insert(a);
            }
        }
        sets.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    /// Successor distribution of joint action `label` in `s` (branches with
    /// identical outcomes merged). A terminal state self-loops under the
    /// empty label.
    pub fn transition(&self, s: &State, label: &[usize]) -> Result<BTreeMap<State, Rat>, PcsgError> {
        let enabled = self.enabled(s);
        if enabled.is_empty() {
            let mut out = BTreeMap::new();
            out.insert(s.clone(), Rat::one());
            return Ok(out);
        }
        let cmd = enabled
            .iter()
            .find(|c| c.label == label)
            .ok_or_else(|| PcsgError::MissingCommand {
                state: self.describe_state(s),
                joint: format!("{label:?}"),
            })?;
        let mut out: BTreeMap<State, Rat> = BTreeMap::new();
        for branch in &cmd.branches {
            if branch.prob.is_zero() {
                continue;
            }
            let mut next = s.clone();
            for u in &branch.updates {
                let val = u.value.eval(s);
                let v = &self.vars[u.var];
                if val < v.lo || val > v.hi {
                    return Err(PcsgError::OutOfRange {
                        var: v.name.clone(),
                        value: val,
                        state: self.describe_state(s),
                    });
                }
                next[u.var] = val;
            }
            *out.entry(next).or_insert_with(Rat::zero) += branch.prob.clone();
        }
        Ok(out)
    }

    /// All enabled joint labels of `s` (the cross product of the per-player
    /// available sets), or the empty label for a terminal state.
    pub fn joint_labels(&self, s: &State) -> Result<Vec<Vec<usize>>, PcsgError> {
        let avail = self.avail(s);
        if avail.iter().all(|a| a.is_empty()) {
            return Ok(vec![Vec::new()]);
        }
        let enabled = self.enabled(s);
        let mut out = vec![Vec::new()];
        for set in &avail {
            let mut next = Vec::with_capacity(out.len() * set.len());
            for prefix in &out {
                for &a in set {
                    let mut p = prefix.clone();
                    p.push(a);
                    next.push(p);
                }
            }
            out = next;
        }
        for label in &out {
            if !enabled.iter().any(|c| &c.label == label) {
                return Err(PcsgError::MissingCommand {
                    state: self.describe_state(s),
                    joint: format!("{label:?}"),
                });
            }
        }
        Ok(out)
    }

    fn successors(&self, s: &State) -> Result<BTreeSet<State>, PcsgError> {
        let mut out = BTreeSet::new();
        for label in self.joint_labels(s)? {
            for next in self.transition(s, &label)?.into_keys() {
                out.insert(next);
            }
        }
        Ok(out)
    }

    /// Cumulative reachable sets: element `d` holds every state reachable
    /// from the initial state in at most `d` steps.
    pub fn reachable_within(&self, k: usize) -> Result<Vec<BTreeSet<State>>, PcsgError> {
        let mut cumulative = BTreeSet::new();
        cumulative.insert(self.initial_state());
        let mut frontier = cumulative.clone();
        let mut out = vec![cumulative.clone()];
        for _ in 0..k {
            let mut next = BTreeSet::new();
            for s in &frontier {
                for succ in self.successors(s)? {
                    if !cumulative.contains(&succ) {
                        next.insert(succ);
                    }
                }
            }
            cumulative.extend(next.iter().cloned());
            frontier = next;
            out.push(cumulative.clone());
        }
        Ok(out)
    }

    fn substitute_state(&self, e: &PolyExpr, s: &State) -> PolyExpr {
        let map: BTreeMap<ProbVar, PolyExpr> = self
            .vars
            .iter()
            .zip(s)
            .map(|(v, &val)| {
                (
                    Pcsg::state_var(v.name.clone()),
                    PolyExpr::from_int(val),
                )
            })
            .collect();
        substitute(e, &map)
    }

    /// Action reward of player `i` for joint `label` in `s`: the sum of the
    /// matching rules' expressions with state variables substituted.
    pub fn action_reward(&self, i: usize, s: &State, label: &[usize]) -> PolyExpr {
        let mut out = PolyExpr::zero();
        for rule in &self.action_rewards[i] {
            if rule.label == label && rule.guard.eval(s) {
                out = out.add(&self.substitute_state(&rule.expr, s));
            }
        }
        out
    }

    pub fn state_reward(&self, i: usize, s: &State) -> Rat {
        self.state_rewards[i]
            .iter()
            .filter(|r| r.guard.eval(s))
            .map(|r| r.value.clone())
            .sum()
    }
}

// ---------------------------------------------------------------------------
// Stage games and induction
// ---------------------------------------------------------------------------

/// Builds the one-step lookahead game at `s`: player `i`'s entry at joint
/// action `α` is `action_reward_i(s,α) + state_reward_i(s) +
/// Σ_{s′} transition(s,α)(s′) · cont[s′][i]`, the continuation folded in as
/// an exact constant.
pub fn build_stage_game(
    g: &Pcsg,
    s: &State,
    cont: &BTreeMap<State, Vec<f64>>,
) -> Result<Nfpg, PcsgError> {
    let n = g.num_players();
    let avail = g.avail(s);
    let local_actions: Vec<Vec<String>> = (0..n)
        .map(|i| {
            avail[i]
                .iter()
                .map(|&a| g.actions[i][a].clone())
                .collect()
        })
        .collect();
    let mut stage = Nfpg::new(g.players.clone(), local_actions)?;
    let mut joint = vec![0usize; n];
    for j in 0..stage.joint_count() {
        stage.decode_joint(j, &mut joint);
        // Map local stage indices back to the model's action indices; the
        // empty label denotes the terminal self-loop.
        let label: Vec<usize> = if avail.iter().all(|a| a.is_empty()) {
            Vec::new()
        } else {
            joint
                .iter()
                .enumerate()
                .map(|(i, &a)| avail[i][a])
                .collect()
        };
        let trans = g.transition(s, &label)?;
        for i in 0..n {
            let mut expected = Rat::zero();
            for (succ, p) in &trans {
                let c = cont.get(succ).ok_or_else(|| PcsgError::MissingContinuation {
                    state: g.describe_state(succ),
                })?;
                expected += p * rat_from_f64(c[i]);
            }
            let constant = g.state_reward(i, s) + expected;
            let entry = g
                .action_reward(i, s, &label)
                .add(&PolyExpr::constant(constant));
            stage.set_utility(i, &joint, entry)?;
        }
    }
    Ok(stage)
}

/// How induction picks among a state's equilibrium candidates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    /// The social-welfare-optimal candidate.
    SwOptimal,
    /// Uniformly random over the candidate list, deterministic in the seed
    /// and the (steps-remaining, state) pair.
    RandomUniform(u64),
}

/// Values and chosen equilibria of a finite-horizon induction run.
#[derive(Clone, Debug)]
pub struct ValueTable {
    pub horizon: usize,
    /// `values[t][s]`: per-player value with `t` steps remaining; `t = 0` is
    /// identically zero on every state reachable within the horizon.
    pub values: Vec<BTreeMap<State, Vec<f64>>>,
    /// `strategies[t][s]` for `t = 1..=horizon`; index 0 stays empty.
    pub strategies: Vec<BTreeMap<State, EquilibriumCandidate>>,
}

impl ValueTable {
    /// Game value at the initial state with the full horizon remaining.
    pub fn initial_values(&self, g: &Pcsg) -> &[f64] {
        &self.values[self.horizon][&g.initial_state()]
    }
}

fn state_salt(t: usize, s: &State) -> u64 {
    let mut h = derive_seed(0x5171_c1b7_2722_0a95, t as u64);
    for &c in s {
        h = derive_seed(h, c as u64);
    }
    h
}

/// Solves the game over horizon `k` by backward induction.
///
/// Layer `t` (steps remaining) solves every state reachable within `k − t`
/// steps: the stage game against layer `t − 1`'s values goes through
/// [`find_swpe`], and `select` picks the equilibrium whose payoffs become
/// `values[t]`. States within a layer are independent and solved in
/// parallel; per-(t, state) seeds keep the result thread-count independent.
pub fn backward_induction(
    g: &Pcsg,
    k: usize,
    cfg: &SolverConfig,
    select: Selection,
) -> Result<ValueTable, PcsgError> {
    assert!(k >= 1, "horizon must be at least 1");
    let reach = g.reachable_within(k)?;
    let zeros: BTreeMap<State, Vec<f64>> = reach[k]
        .iter()
        .map(|s| (s.clone(), vec![0.0; g.num_players()]))
        .collect();
    let mut values: Vec<BTreeMap<State, Vec<f64>>> = vec![zeros];
    let mut strategies: Vec<BTreeMap<State, EquilibriumCandidate>> = vec![BTreeMap::new()];
    for t in 1..=k {
        let prev = &values[t - 1];
        let states: Vec<State> = reach[k - t].iter().cloned().collect();
        let solved: Result<Vec<(State, EquilibriumCandidate)>, PcsgError> = states
            .par_iter()
            .map(|s| {
                let stage = build_stage_game(g, s, prev)?;
                let salt = state_salt(t, s);
                let mut sub = cfg.clone();
                sub.seed = derive_seed(cfg.seed, salt);
                let (best, all) =
                    find_swpe(&stage, &sub).map_err(|e| PcsgError::NoEquilibriumFound {
                        t,
                        state: g.describe_state(s),
                        source: e,
                    })?;
                let chosen = match select {
                    Selection::SwOptimal => best,
                    Selection::RandomUniform(seed) => {
                        let mut rng =
                            ChaCha8Rng::seed_from_u64(derive_seed(seed, salt));
                        all[rng.gen_range(0..all.len())].clone()
                    }
                };
                Ok((s.clone(), chosen))
            })
            .collect();
        let mut layer_values = BTreeMap::new();
        let mut layer_strategies = BTreeMap::new();
        for (s, c) in solved? {
            layer_values.insert(s.clone(), c.payoffs.clone());
            layer_strategies.insert(s, c);
        }
        // States beyond this layer's frontier keep no values; successors of
        // layer-(t+1) states always lie within `k − t` steps, so lookups
        // stay inside the map.
        values.push(layer_values);
        strategies.push(layer_strategies);
    }
    Ok(ValueTable {
        horizon: k,
        values,
        strategies,
    })
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

/// Aggregates over repeated induction runs with random equilibrium
/// selection.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ExperimentReport {
    pub runs: usize,
    pub horizon: usize,
    pub player_names: Vec<String>,
    /// Initial-state utility vector of each run.
    pub per_run_utilities: Vec<Vec<f64>>,
    pub utility_mean: Vec<f64>,
    /// Population standard deviation across runs.
    pub utility_std: Vec<f64>,
    /// Per run: time-averaged, reachability-weighted probability of each
    /// named action under the selected equilibria (idle omitted).
    pub per_run_action_probs: Vec<BTreeMap<String, f64>>,
    pub action_prob_mean: BTreeMap<String, f64>,
}

/// Runs `backward_induction` with `RandomUniform(seed + run)` for each run
/// and aggregates initial-state utilities and action probabilities.
///
/// The probability of action `a` in one run is the average over the `k`
/// steps of the chance that `a` is played at that step: state occupancies
/// are propagated forward from the initial state under the selected
/// profiles and weight each state's local probabilities.
pub fn run_experiments(
    g: &Pcsg,
    k: usize,
    runs: usize,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<ExperimentReport, PcsgError> {
    assert!(runs >= 1, "need at least one run");
    let n = g.num_players();
    let mut per_run_utilities = Vec::with_capacity(runs);
    let mut per_run_action_probs = Vec::with_capacity(runs);
    for run in 0..runs {
        let vt = backward_induction(
            g,
            k,
            cfg,
            Selection::RandomUniform(seed.wrapping_add(run as u64)),
        )?;
        per_run_utilities.push(vt.initial_values(g).to_vec());
        let mut acc: BTreeMap<String, f64> = BTreeMap::new();
        let mut occupancy: BTreeMap<State, f64> = BTreeMap::new();
        occupancy.insert(g.initial_state(), 1.0);
        for step in 0..k {
            let t = k - step;
            let mut next: BTreeMap<State, f64> = BTreeMap::new();
            for (s, &mass) in &occupancy {
                let candidate = &vt.strategies[t][s];
                let avail = g.avail(s);
                for row in candidate.profile.rows() {
                    for (name, p) in row {
                        if name != crate::game::IDLE {
                            *acc.entry(name.clone()).or_insert(0.0) += mass * p;
                        }
                    }
                }
                // Push occupancy through the profile's joint distribution.
                let stage_counts: Vec<usize> = candidate
                    .profile
                    .rows()
                    .iter()
                    .map(|r| r.len())
                    .collect();
                let mut joint = vec![0usize; n];
                loop {
                    let q: f64 = joint
                        .iter()
                        .enumerate()
                        .map(|(i, &a)| candidate.profile.prob(i, a))
                        .product();
                    if q > 0.0 {
                        let label: Vec<usize> = if avail.iter().all(|a| a.is_empty()) {
                            Vec::new()
                        } else {
                            joint.iter().enumerate().map(|(i, &a)| avail[i][a]).collect()
                        };
                        for (succ, p) in g.transition(s, &label)? {
                            *next.entry(succ).or_insert(0.0) +=
                                mass * q * p.to_f64().unwrap_or(f64::NAN);
                        }
                    }
                    let mut i = n;
                    let done = loop {
                        if i == 0 {
                            break true;
                        }
                        i -= 1;
                        if joint[i] + 1 < stage_counts[i] {
                            joint[i] += 1;
                            for v in &mut joint[i + 1..] {
                                *v = 0;
                            }
                            break false;
                        }
                    };
                    if done {
                        break;
                    }
                }
            }
            occupancy = next;
        }
        for v in acc.values_mut() {
            *v /= k as f64;
        }
        per_run_action_probs.push(acc);
    }
    let utility_mean: Vec<f64> = (0..n)
        .map(|i| per_run_utilities.iter().map(|u| u[i]).sum::<f64>() / runs as f64)
        .collect();
    let utility_std: Vec<f64> = (0..n)
        .map(|i| {
            let m = utility_mean[i];
            let var = per_run_utilities
                .iter()
                .map(|u| (u[i] - m) * (u[i] - m))
                .sum::<f64>()
                / runs as f64;
            var.sqrt()
        })
        .collect();
    let mut action_prob_mean: BTreeMap<String, f64> = BTreeMap::new();
    for probs in &per_run_action_probs {
        for (name, p) in probs {
            *action_prob_mean.entry(name.clone()).or_insert(0.0) += p / runs as f64;
        }
    }
    Ok(ExperimentReport {
        runs,
        horizon: k,
        player_names: g.player_names().to_vec(),
        per_run_utilities,
        utility_mean,
        utility_std,
        per_run_action_probs,
        action_prob_mean,
    })
}

/// Counts states reachable within `k` steps and the transition triples
/// `(s, α, s′)` with nonzero probability leaving them.
pub fn model_stats(g: &Pcsg, k: usize) -> Result<(usize, usize), PcsgError> {
    let reach = g.reachable_within(k)?;
    let states = &reach[k];
    let mut transitions = 0usize;
    for s in states {
        for label in g.joint_labels(s)? {
            transitions += g.transition(s, &label)?.len();
        }
    }
    Ok((states.len(), transitions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::rat;
    use crate::game::verify_pe;

    /// One player, states {0, 1}: `stay` self-loops on 0 for reward 1,
    /// `advance` moves to 1 for nothing; state 1 is terminal and pays 5 per
    /// remaining step.
    fn chain() -> Pcsg {
        let stay = RewardRule {
            label: vec![1],
            guard: Guard::True,
            expr: PolyExpr::from_int(1),
        };
        Pcsg::new(
            vec!["M".into()],
            vec![vec!["advance".into(), "stay".into()]],
            vec![StateVar {
                name: "j".into(),
                lo: 0,
                hi: 1,
                init: 0,
            }],
            vec![
                Command {
                    label: vec![0],
                    guard: Guard::Cmp(IntExpr::Var(0), CmpOp::Lt, IntExpr::Const(1)),
                    branches: vec![Branch {
                        prob: rat(1, 1),
                        updates: vec![Update {
                            var: 0,
                            value: IntExpr::Const(1),
                        }],
                    }],
                },
                Command {
                    label: vec![1],
                    guard: Guard::Cmp(IntExpr::Var(0), CmpOp::Lt, IntExpr::Const(1)),
                    branches: vec![Branch {
                        prob: rat(1, 1),
                        updates: vec![],
                    }],
                },
            ],
            vec![vec![stay]],
            vec![vec![StateRewardRule {
                guard: Guard::Cmp(IntExpr::Var(0), CmpOp::Eq, IntExpr::Const(1)),
                value: rat(5, 1),
            }]],
        )
        .unwrap()
    }

    #[test]
    fn chain_values_match_hand_induction() {
        let g = chain();
        let vt = backward_induction(&g, 2, &SolverConfig::seeded(0), Selection::SwOptimal).unwrap();
        // t=1: stay earns 1, advancing earns 0; at state 1 the idle step
        // collects the state reward 5.
        assert!((vt.values[1][&vec![0]][0] - 1.0).abs() < 1e-9);
        assert!((vt.values[1][&vec![1]][0] - 5.0).abs() < 1e-9);
        // t=2: advance then idle beats staying twice.
        assert!((vt.values[2][&vec![0]][0] - 5.0).abs() < 1e-9);
        assert_eq!(vt.initial_values(&g), &[5.0][..]);
        // Zero-horizon layer is identically zero.
        assert!(vt.values[0].values().all(|v| v.iter().all(|&x| x == 0.0)));
        // Chosen strategies verify on their own stage games.
        for t in 1..=2usize {
            for (s, c) in &vt.strategies[t] {
                let stage = build_stage_game(&g, s, &vt.values[t - 1]).unwrap();
                let (ok, res) = verify_pe(&stage, &c.profile, 2e-6).unwrap();
                assert!(ok, "stage ({t},{s:?}) residual {res}");
            }
        }
    }

    #[test]
    fn terminal_states_idle_and_self_loop() {
        let g = chain();
        let terminal = vec![1i64];
        assert!(g.avail(&terminal).iter().all(|a| a.is_empty()));
        let trans = g.transition(&terminal, &[]).unwrap();
        assert_eq!(trans.len(), 1);
        assert_eq!(trans[&terminal], rat(1, 1));
        let mut cont = BTreeMap::new();
        cont.insert(terminal.clone(), vec![2.5]);
        let stage = build_stage_game(&g, &terminal, &cont).unwrap();
        assert_eq!(stage.actions(0), ["idle"]);
        // Reward 5 per step at the terminal plus the continuation.
        let e = stage.utility(0, &[0]);
        assert_eq!(e.constant_value().unwrap(), rat(15, 2));
    }

    #[test]
    fn stats_count_reachable_states_and_transitions() {
        let g = chain();
        // Within 1 step: both states; transitions: advance, stay, idle loop.
        assert_eq!(model_stats(&g, 1).unwrap(), (2, 3));
        assert_eq!(model_stats(&g, 5).unwrap(), (2, 3));
    }

    #[test]
    fn colliding_branch_outcomes_merge() {
        let g = Pcsg::new(
            vec!["M".into()],
            vec![vec!["go".into()]],
            vec![StateVar {
                name: "c".into(),
                lo: 0,
                hi: 3,
                init: 0,
            }],
            vec![Command {
                label: vec![0],
                guard: Guard::True,
                branches: vec![
                    Branch {
                        prob: rat(1, 3),
                        // max(c−1, 0) collides with the reset below at c=0.
                        updates: vec![Update {
                            var: 0,
                            value: IntExpr::Max(
                                Box::new(IntExpr::Sub(
                                    Box::new(IntExpr::Var(0)),
                                    Box::new(IntExpr::Const(1)),
                                )),
                                Box::new(IntExpr::Const(0)),
                            ),
                        }],
                    },
                    Branch {
                        prob: rat(2, 3),
                        updates: vec![Update {
                            var: 0,
                            value: IntExpr::Const(0),
                        }],
                    },
                ],
            }],
            vec![vec![]],
            vec![vec![]],
        )
        .unwrap();
        let trans = g.transition(&vec![0], &[0]).unwrap();
        assert_eq!(trans.len(), 1);
        assert_eq!(trans[&vec![0]], rat(1, 1));
        let trans2 = g.transition(&vec![2], &[0]).unwrap();
        assert_eq!(trans2.len(), 2);
        assert_eq!(trans2[&vec![1]], rat(1, 3));
        assert_eq!(trans2[&vec![0]], rat(2, 3));
    }

    #[test]
    fn out_of_range_updates_are_reported() {
        let g = Pcsg::new(
            vec!["M".into()],
            vec![vec!["go".into()]],
            vec![StateVar {
                name: "c".into(),
                lo: 0,
                hi: 1,
                init: 0,
            }],
            vec![Command {
                label: vec![0],
                guard: Guard::True,
                branches: vec![Branch {
                    prob: rat(1, 1),
                    updates: vec![Update {
                        var: 0,
                        value: IntExpr::Add(Box::new(IntExpr::Var(0)), Box::new(IntExpr::Const(1))),
                    }],
                }],
            }],
            vec![vec![]],
            vec![vec![]],
        )
        .unwrap();
        assert!(g.transition(&vec![0], &[0]).is_ok());
        assert!(matches!(
            g.transition(&vec![1], &[0]),
            Err(PcsgError::OutOfRange { value: 2, .. })
        ));
    }

    #[test]
    fn bad_models_are_rejected() {
        let bad_prob = Pcsg::new(
            vec!["M".into()],
            vec![vec!["go".into()]],
            vec![],
            vec![Command {
                label: vec![0],
                guard: Guard::True,
                branches: vec![Branch {
                    prob: rat(1, 2),
                    updates: vec![],
                }],
            }],
            vec![vec![]],
            vec![vec![]],
        );
        assert!(matches!(bad_prob, Err(PcsgError::BadModel(_))));
        let bad_init = Pcsg::new(
            vec!["M".into()],
            vec![vec![]],
            vec![StateVar {
                name: "x".into(),
                lo: 0,
                hi: 2,
                init: 3,
            }],
            vec![],
            vec![vec![]],
            vec![vec![]],
        );
        assert!(matches!(bad_init, Err(PcsgError::BadModel(_))));
    }

    #[test]
    fn random_selection_is_seed_deterministic() {
        let g = chain();
        let cfg = SolverConfig::seeded(2);
        let r1 = run_experiments(&g, 3, 4, &cfg, 11).unwrap();
        let r2 = run_experiments(&g, 3, 4, &cfg, 11).unwrap();
        assert_eq!(r1.per_run_utilities, r2.per_run_utilities);
        assert_eq!(r1.per_run_action_probs, r2.per_run_action_probs);
        // Mean really is the arithmetic mean of the per-run values.
        for i in 0..1 {
            let m = r1.per_run_utilities.iter().map(|u| u[i]).sum::<f64>() / 4.0;
            assert!((m - r1.utility_mean[i]).abs() < 1e-12);
        }
    }
}
