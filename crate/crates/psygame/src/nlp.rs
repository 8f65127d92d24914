//! Per-support constrained polynomial optimization and the search for
//! social-welfare-optimal psychological equilibria.
//!
//! For a fixed support, the equilibrium conditions become polynomial
//! constraints over the supported action probabilities: every supported
//! action of a player must tie the player's pivot action, every unsupported
//! action must not beat it, and each player's probabilities form a
//! distribution. Maximizing welfare subject to these yields the best
//! equilibrium on that support; enumerating supports and keeping the best
//! feasible solution yields the social-welfare-optimal equilibrium.
//!
//! The local solver is multi-start projected gradient ascent on an
//! exact-penalty objective, followed by an active-set polish (Gauss–Newton
//! feasibility restoration plus reduced-gradient ascent) that sharpens
//! solutions to the requested tolerances. Failure is explicit: a support can
//! come back `Infeasible` (with a coarse-grid certificate) or `Inconclusive`
//! (no start converged), never silently wrong.
//!
//! [`grid_oracle`] is an independent brute-force check used by tests: it
//! scans simplex grids, accepts points by the verification residual alone,
//! and refines accepted points by Newton iteration on the indifference
//! system. It shares no code path with [`solve_program`].

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::expr::{grad_expr, substitute, PolyExpr, ProbVar, Rat};
use num_traits::Zero;
use crate::game::{
    enumerate_supports, CompiledGame, CompiledPoly, EquilibriumCandidate, GameError, Nfpg,
    StrategyProfile, Support, EPS_SUPP,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NlpError {
    #[error("pivot action {action} of player {player} is outside the support")]
    PivotNotInSupport { player: usize, action: usize },
    #[error("no equilibrium found ({inconclusive} support(s) inconclusive)")]
    NoEquilibriumFound { inconclusive: usize },
    #[error("grid of {points} points exceeds the 10^8 limit")]
    TooLarge { points: u128 },
    #[error(transparent)]
    Game(#[from] GameError),
}

/// Mixes a salt into a seed; used to give supports, starts, and runs
/// independent deterministic random streams.
pub(crate) fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// SupportProgram
// ---------------------------------------------------------------------------

/// The optimization instance for one support: maximize welfare subject to
/// the equilibrium conditions restricted to that support.
///
/// Variables are the supported actions' probabilities, player-major in
/// ascending action order. Belief variables inside utility entries are the
/// same variables (beliefs match play) and unsupported actions' variables
/// are substituted by zero before constraints are formed.
#[derive(Clone, Debug)]
pub struct SupportProgram {
    pub support: Support,
    /// Per-player pivot action index; the pivot's payoff stands for the
    /// player's equilibrium value in the constraints.
    pub pivots: Vec<usize>,
    /// One variable per supported action.
    pub vars: Vec<ProbVar>,
    /// `(player, action index)` of each variable.
    pub var_actions: Vec<(usize, usize)>,
    /// Per-player `(start, len)` ranges into `vars` (the simplex blocks).
    pub groups: Vec<(usize, usize)>,
    /// Welfare: sum of the per-player payoff polynomials.
    pub objective: PolyExpr,
    /// Per-player payoff polynomial `Σ_{a∈Q_i} p_a · D_i(a)`.
    pub payoff_polys: Vec<PolyExpr>,
    /// Required `= 0`: one per player per supported non-pivot action,
    /// player-major, `D_i(a) − D_i(pivot_i)`.
    pub eq_constraints: Vec<PolyExpr>,
    /// Required `≥ 0`: one per player per unsupported action, player-major,
    /// `D_i(pivot_i) − D_i(a)`.
    pub ineq_constraints: Vec<PolyExpr>,
    /// `deviation_polys[i][a]`: player `i`'s payoff when deviating to pure
    /// action `a` while everyone else plays the supported mix.
    pub deviation_polys: Vec<Vec<PolyExpr>>,
    /// Full per-player action-name lists of the originating game, used to
    /// assemble complete profiles from solution vectors.
    pub actions: Vec<Vec<String>>,
}

/// Deviation payoffs `D_i(a)` for all players and all actions, with
/// unsupported opponents' probabilities fixed at zero.
fn deviation_polys(game: &Nfpg, support: &Support) -> Vec<Vec<PolyExpr>> {
    let n = game.num_players();
    let mut zeros: BTreeMap<ProbVar, PolyExpr> = BTreeMap::new();
    for j in 0..n {
        for a in 0..game.action_count(j) {
            if !support.contains(j, a) {
                zeros.insert(game.var(j, a), PolyExpr::zero());
            }
        }
    }
    let mut out: Vec<Vec<PolyExpr>> = (0..n)
        .map(|i| vec![PolyExpr::zero(); game.action_count(i)])
        .collect();
    let mut joint = vec![0usize; n];
    for idx in 0..game.joint_count() {
        game.decode_joint(idx, &mut joint);
        for i in 0..n {
            if (0..n).any(|j| j != i && !support.contains(j, joint[j])) {
                continue;
            }
            let mut term = substitute(game.utility_by_index(i, idx), &zeros);
            if term.is_zero() {
                continue;
            }
            for j in 0..n {
                if j != i {
                    term = term.mul(&PolyExpr::var(game.var(j, joint[j])));
                }
            }
            out[i][joint[i]] = out[i][joint[i]].add(&term);
        }
    }
    out
}

/// Builds the optimization instance for `support` with the given pivots.
pub fn build_support_program(
    game: &Nfpg,
    support: &Support,
    pivots: &[usize],
) -> Result<SupportProgram, NlpError> {
    let n = game.num_players();
    for (i, &p) in pivots.iter().enumerate() {
        if !support.contains(i, p) {
            return Err(NlpError::PivotNotInSupport {
                player: i,
                action: p,
            });
        }
    }
    let mut vars = Vec::new();
    let mut var_actions = Vec::new();
    let mut groups = Vec::with_capacity(n);
    for i in 0..n {
        let start = vars.len();
        for a in support.indices(i) {
            vars.push(game.var(i, a));
            var_actions.push((i, a));
        }
        groups.push((start, vars.len() - start));
    }
    let devs = deviation_polys(game, support);
    let mut payoff_polys = Vec::with_capacity(n);
    for i in 0..n {
        let mut p = PolyExpr::zero();
        for a in support.indices(i) {
            p = p.add(&devs[i][a].mul(&PolyExpr::var(game.var(i, a))));
        }
        payoff_polys.push(p);
    }
    let objective = payoff_polys
        .iter()
        .fold(PolyExpr::zero(), |acc, p| acc.add(p));
    let mut eq_constraints = Vec::new();
    let mut ineq_constraints = Vec::new();
    for i in 0..n {
        for a in 0..game.action_count(i) {
            if a == pivots[i] {
                continue;
            }
            if support.contains(i, a) {
                eq_constraints.push(devs[i][a].sub(&devs[i][pivots[i]]));
            } else {
                ineq_constraints.push(devs[i][pivots[i]].sub(&devs[i][a]));
            }
        }
    }
    Ok(SupportProgram {
        support: support.clone(),
        pivots: pivots.to_vec(),
        vars,
        var_actions,
        groups,
        objective,
        payoff_polys,
        eq_constraints,
        ineq_constraints,
        deviation_polys: devs,
        actions: (0..n).map(|i| game.actions(i).to_vec()).collect(),
    })
}

/// Lowest supported action index of each player; the default pivot choice.
pub fn lowest_pivots(support: &Support) -> Vec<usize> {
    (0..support.num_players())
        .map(|i| support.indices(i)[0])
        .collect()
}

// ---------------------------------------------------------------------------
// Solver configuration and outcomes
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct SolverConfig {
    /// Constraint residual below which a point counts as feasible.
    pub feas_tol: f64,
    /// Optimality gap: stationarity threshold and lexicographic level slack.
    pub opt_tol: f64,
    /// Number of random interior starts per support.
    pub starts: usize,
    /// Ascent iteration budget per start.
    pub max_iters: usize,
    pub seed: u64,
    /// Lower bound standing in for strict positivity of supported
    /// probabilities.
    pub eps_lower: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            feas_tol: 1e-6,
            opt_tol: 1e-6,
            starts: 64,
            max_iters: 2000,
            seed: 0,
            eps_lower: 1e-8,
        }
    }
}

impl SolverConfig {
    pub fn seeded(seed: u64) -> Self {
        SolverConfig {
            seed,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub enum SolveStatus {
    Feasible(EquilibriumCandidate),
    /// Certified empty: no point of the support's closed feasible region
    /// comes within the certificate margin of satisfying the constraints.
    Infeasible,
    /// No start converged and no certificate was found.
    Inconclusive,
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub starts_converged: usize,
}

// ---------------------------------------------------------------------------
// Compiled numeric program
// ---------------------------------------------------------------------------

/// A program lowered to floating point: compiled objective, constraints, and
/// their gradients over the support variables.
struct NumProgram {
    dim: usize,
    groups: Vec<(usize, usize)>,
    lo: f64,
    objective: CompiledPoly,
    obj_grad: Vec<CompiledPoly>,
    eqs: Vec<CompiledPoly>,
    eq_grads: Vec<Vec<CompiledPoly>>,
    ineqs: Vec<CompiledPoly>,
    ineq_grads: Vec<Vec<CompiledPoly>>,
    /// Bound on `‖∇c‖₁` over the box `[0,1]^dim` per constraint (eqs then
    /// ineqs); used by the infeasibility certificate.
    lipschitz: Vec<f64>,
    payoffs: Vec<CompiledPoly>,
    devs: Vec<Vec<CompiledPoly>>,
    /// Variable index of each supported `(player, action)`.
    var_of: BTreeMap<(usize, usize), usize>,
}

/// Sum of absolute gradient coefficients: a Lipschitz bound with respect to
/// the max norm on the unit box.
fn lipschitz_bound(e: &PolyExpr, vars: &[ProbVar]) -> f64 {
    grad_expr(e, vars)
        .iter()
        .map(|g| {
            g.terms()
                .map(|(_, c)| num_traits::ToPrimitive::to_f64(c).unwrap_or(f64::NAN).abs())
                .sum::<f64>()
        })
        .sum()
}

impl NumProgram {
    fn build(prog: &SupportProgram, objective: &PolyExpr, extra_ineqs: &[PolyExpr], lo: f64) -> Self {
        let index: BTreeMap<&ProbVar, usize> =
            prog.vars.iter().enumerate().map(|(k, v)| (v, k)).collect();
        let var_id = |v: &ProbVar| index[v];
        let compile = |e: &PolyExpr| CompiledPoly::compile_with(e, var_id);
        let compile_grad =
            |e: &PolyExpr| grad_expr(e, &prog.vars).iter().map(compile).collect::<Vec<_>>();
        let mut eqs = Vec::new();
        let mut eq_grads = Vec::new();
        let mut lipschitz = Vec::new();
        for e in &prog.eq_constraints {
            if e.is_zero() {
                continue;
            }
            eqs.push(compile(e));
            eq_grads.push(compile_grad(e));
            lipschitz.push(lipschitz_bound(e, &prog.vars));
        }
        let mut ineqs = Vec::new();
        let mut ineq_grads = Vec::new();
        for e in prog.ineq_constraints.iter().chain(extra_ineqs) {
            if e.is_zero() {
                continue;
            }
            ineqs.push(compile(e));
            ineq_grads.push(compile_grad(e));
            lipschitz.push(lipschitz_bound(e, &prog.vars));
        }
        NumProgram {
            dim: prog.vars.len(),
            groups: prog.groups.clone(),
            lo,
            objective: compile(objective),
            obj_grad: compile_grad(objective),
            eqs,
            eq_grads,
            ineqs,
            ineq_grads,
            lipschitz,
            payoffs: prog.payoff_polys.iter().map(compile).collect(),
            devs: prog
                .deviation_polys
                .iter()
                .map(|row| row.iter().map(compile).collect())
                .collect(),
            var_of: prog
                .var_actions
                .iter()
                .enumerate()
                .map(|(k, &(i, a))| ((i, a), k))
                .collect(),
        }
    }

    /// Max constraint violation at `x` (equalities absolute, inequalities
    /// one-sided).
    fn violation(&self, x: &[f64]) -> f64 {
        let mut v = 0.0f64;
        for c in &self.eqs {
            v = v.max(c.eval(x).abs());
        }
        for c in &self.ineqs {
            v = v.max(-c.eval(x));
        }
        v.max(0.0)
    }

    /// Exact-penalty objective: welfare minus `rho` times the summed
    /// violation.
    fn penalty(&self, x: &[f64], rho: f64) -> f64 {
        let mut p = self.objective.eval(x);
        for c in &self.eqs {
            p -= rho * c.eval(x).abs();
        }
        for c in &self.ineqs {
            let v = c.eval(x);
            if v < 0.0 {
                p -= rho * -v;
            }
        }
        p
    }

    fn penalty_grad(&self, x: &[f64], rho: f64, g: &mut [f64]) {
        for (k, gp) in self.obj_grad.iter().enumerate() {
            g[k] = gp.eval(x);
        }
        for (c, grads) in self.eqs.iter().zip(&self.eq_grads) {
            let v = c.eval(x);
            if v != 0.0 {
                let s = -rho * v.signum();
                for (k, gp) in grads.iter().enumerate() {
                    g[k] += s * gp.eval(x);
                }
            }
        }
        for (c, grads) in self.ineqs.iter().zip(&self.ineq_grads) {
            if c.eval(x) < 0.0 {
                for (k, gp) in grads.iter().enumerate() {
                    g[k] += rho * gp.eval(x);
                }
            }
        }
    }

    fn project(&self, x: &mut [f64]) {
        for &(start, len) in &self.groups {
            project_simplex_lb(&mut x[start..start + len], self.lo);
        }
    }
}

/// Euclidean projection onto `{x : Σx = 1, x ≥ lo}`.
fn project_simplex_lb(x: &mut [f64], lo: f64) {
    let k = x.len();
    if k == 1 {
        x[0] = 1.0;
        return;
    }
    let mass = 1.0 - k as f64 * lo;
    let mut z: Vec<f64> = x.iter().map(|&v| v - lo).collect();
    let mut sorted = z.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &zj) in sorted.iter().enumerate() {
        cumsum += zj;
        let t = (cumsum - mass) / (j + 1) as f64;
        if zj - t > 0.0 {
            theta = t;
        }
    }
    for v in &mut z {
        *v = (*v - theta).max(0.0);
    }
    for (xi, zi) in x.iter_mut().zip(z) {
        *xi = zi + lo;
    }
}

// ---------------------------------------------------------------------------
// Dense least squares (Gauss–Newton workhorse)
// ---------------------------------------------------------------------------

/// Minimum-norm-ish least-squares solution of `A x ≈ b` via ridge-stabilized
/// normal equations; adequate for the tiny, mildly conditioned systems here.
fn lstsq(a: &[Vec<f64>], b: &[f64], n: usize) -> Vec<f64> {
    let mut g = vec![vec![0.0; n]; n];
    let mut rhs = vec![0.0; n];
    for (row, &bi) in a.iter().zip(b) {
        for i in 0..n {
            if row[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                g[i][j] += row[i] * row[j];
            }
            rhs[i] += row[i] * bi;
        }
    }
    let scale: f64 = (0..n).map(|i| g[i][i]).sum::<f64>() / n.max(1) as f64;
    let ridge = 1e-12 * (1.0 + scale);
    for (i, gi) in g.iter_mut().enumerate() {
        gi[i] += ridge;
        let _ = i;
    }
    // Gaussian elimination with partial pivoting.
    let mut x = rhs;
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if g[r][col].abs() > g[piv][col].abs() {
                piv = r;
            }
        }
        g.swap(col, piv);
        x.swap(col, piv);
        let d = g[col][col];
        if d.abs() < 1e-300 {
            continue;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = g[r][col] / d;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                g[r][c] -= f * g[col][c];
            }
            x[r] -= f * x[col];
        }
    }
    for col in 0..n {
        let d = g[col][col];
        x[col] = if d.abs() < 1e-300 { 0.0 } else { x[col] / d };
    }
    x
}

// ---------------------------------------------------------------------------
// Active-set polish
// ---------------------------------------------------------------------------

struct Polished {
    x: Vec<f64>,
    objective: f64,
}

/// Sharpens a near-solution: restores feasibility by damped Gauss–Newton on
/// the active constraints, then climbs the reduced gradient until first-order
/// stationarity, freeing wrongly active constraints by multiplier sign.
/// Returns `None` when no feasible stationary point is reached.
fn polish(np: &NumProgram, x0: &[f64], feas_tol: f64, opt_tol: f64) -> Option<Polished> {
    const OUTER: usize = 40;
    let n = np.dim;
    let mut x = x0.to_vec();
    let mut dropped: BTreeSet<usize> = BTreeSet::new();
    for _ in 0..OUTER {
        if !restore_feasibility(np, &mut x, &dropped) {
            return None;
        }
        // Constraint normals active at x: group sums, equalities, bound-fixed
        // variables, and binding inequalities (minus any dropped this round).
        let mut normals: Vec<Vec<f64>> = Vec::new();
        // (kind, index): kind 0 = structural, 1 = bound, 2 = inequality.
        let mut labels: Vec<(u8, usize)> = Vec::new();
        for &(start, len) in &np.groups {
            let mut row = vec![0.0; n];
            for r in row.iter_mut().skip(start).take(len) {
                *r = 1.0;
            }
            normals.push(row);
            labels.push((0, 0));
        }
        for grads in &np.eq_grads {
            normals.push(grads.iter().map(|g| g.eval(&x)).collect());
            labels.push((0, 0));
        }
        // Working-set margin: variables this close to the floor count as
        // bound-active. Pinning one wrongly is harmless — a positive
        // multiplier frees it again below.
        for v in 0..n {
            if x[v] <= np.lo + 1e-6 {
                let mut row = vec![0.0; n];
                row[v] = 1.0;
                normals.push(row);
                labels.push((1, v));
            }
        }
        for (ci, c) in np.ineqs.iter().enumerate() {
            if dropped.contains(&ci) {
                continue;
            }
            if c.eval(&x) <= 1e-8 {
                normals.push(np.ineq_grads[ci].iter().map(|g| g.eval(&x)).collect());
                labels.push((2, ci));
            }
        }
        let g: Vec<f64> = np.obj_grad.iter().map(|gp| gp.eval(&x)).collect();
        // Multipliers: least-squares fit of g by the active normals.
        let nt: Vec<Vec<f64>> = (0..n)
            .map(|v| normals.iter().map(|row| row[v]).collect())
            .collect();
        let lambda = lstsq(&nt, &g, normals.len());
        let mut reduced = g.clone();
        for (row, &l) in normals.iter().zip(&lambda) {
            for v in 0..n {
                reduced[v] -= l * row[v];
            }
        }
        let red_norm = reduced.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        // At a constrained maximum every active bound or inequality `c ≥ 0`
        // carries a non-positive multiplier; a positive one means the
        // objective still climbs into the feasible interior, so that
        // constraint is wrongly active: free the worst offender and retry.
        let mut worst: Option<(usize, f64)> = None;
        for (k, &(kind, idx)) in labels.iter().enumerate() {
            if kind != 0 && lambda[k] > opt_tol {
                if worst.map_or(true, |(_, w)| lambda[k] > w) {
                    worst = Some((k, lambda[k]));
                }
            }
            let _ = idx;
        }
        if red_norm <= opt_tol {
            match worst {
                None => {
                    return Some(Polished {
                        objective: np.objective.eval(&x),
                        x,
                    });
                }
                Some((k, _)) => {
                    let (kind, idx) = labels[k];
                    if kind == 2 {
                        dropped.insert(idx);
                        continue;
                    }
                    // A bound with a positive multiplier: step off it along
                    // the freed reduced gradient below.
                }
            }
        }
        // Line search along the reduced gradient (with wrongly active rows
        // removed from the projection).
        let mut free_normals = normals.clone();
        if let Some((k, _)) = worst {
            free_normals.remove(k);
            let ntf: Vec<Vec<f64>> = (0..n)
                .map(|v| free_normals.iter().map(|row| row[v]).collect())
                .collect();
            let lf = lstsq(&ntf, &g, free_normals.len());
            reduced = g.clone();
            for (row, &l) in free_normals.iter().zip(&lf) {
                for v in 0..n {
                    reduced[v] -= l * row[v];
                }
            }
        }
        let dir_norm = reduced.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        if dir_norm <= opt_tol {
            // Nothing to gain: accept if properly stationary.
            if red_norm <= opt_tol && worst.is_none() {
                return Some(Polished {
                    objective: np.objective.eval(&x),
                    x,
                });
            }
            return None;
        }
        let obj0 = np.objective.eval(&x);
        let mut t = 1.0 / dir_norm.max(1.0);
        let mut improved = false;
        for _ in 0..25 {
            let mut trial: Vec<f64> = x
                .iter()
                .zip(&reduced)
                .map(|(&xi, &r)| (xi + t * r).max(np.lo))
                .collect();
            np.project(&mut trial);
            if restore_feasibility(np, &mut trial, &dropped)
                && np.objective.eval(&trial) > obj0 + 1e-13
            {
                x = trial;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            // The multi-scale line search over restored trials is the
            // operative stationarity test: at degenerate corners of the
            // feasible set the multiplier fit can keep a spurious
            // first-order residual even though no feasible direction
            // improves. Feasibility still decides acceptance.
            if np.violation(&x) <= feas_tol {
                return Some(Polished {
                    objective: np.objective.eval(&x),
                    x,
                });
            }
            return None;
        }
    }
    None
}

/// Damped Gauss–Newton on the active equality system (equalities, group
/// sums, violated inequalities pinned to zero). Returns false on stall.
fn restore_feasibility(np: &NumProgram, x: &mut Vec<f64>, dropped: &BTreeSet<usize>) -> bool {
    let n = np.dim;
    for _ in 0..30 {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut res: Vec<f64> = Vec::new();
        for &(start, len) in &np.groups {
            let mut row = vec![0.0; n];
            for r in row.iter_mut().skip(start).take(len) {
                *r = 1.0;
            }
            let s: f64 = x[start..start + len].iter().sum();
            rows.push(row);
            res.push(s - 1.0);
        }
        for (c, grads) in np.eqs.iter().zip(&np.eq_grads) {
            rows.push(grads.iter().map(|g| g.eval(x)).collect());
            res.push(c.eval(x));
        }
        for (ci, c) in np.ineqs.iter().enumerate() {
            let v = c.eval(x);
            if v < 0.0 && !dropped.contains(&ci) {
                rows.push(np.ineq_grads[ci].iter().map(|g| g.eval(x)).collect());
                res.push(v);
            }
        }
        let worst = res.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        if worst <= 1e-12 {
            return true;
        }
        let neg: Vec<f64> = res.iter().map(|r| -r).collect();
        let d = lstsq(&rows, &neg, n);
        let mut t = 1.0;
        let mut stepped = false;
        for _ in 0..20 {
            let mut trial: Vec<f64> = x
                .iter()
                .zip(&d)
                .map(|(&xi, &di)| (xi + t * di).max(np.lo))
                .collect();
            for &(start, len) in &np.groups {
                if len == 1 {
                    trial[start] = 1.0;
                }
            }
            let w = {
                let mut m = 0.0f64;
                for &(start, len) in &np.groups {
                    let s: f64 = trial[start..start + len].iter().sum();
                    m = m.max((s - 1.0).abs());
                }
                for c in &np.eqs {
                    m = m.max(c.eval(&trial).abs());
                }
                for (ci, c) in np.ineqs.iter().enumerate() {
                    if !dropped.contains(&ci) {
                        m = m.max(-c.eval(&trial).max(f64::MIN));
                    }
                }
                m.max(0.0)
            };
            if w < worst * (1.0 - 1e-3 * t) {
                *x = trial;
                stepped = true;
                break;
            }
            t *= 0.5;
        }
        if !stepped {
            return res.iter().fold(0.0f64, |m, r| m.max(r.abs())) <= 1e-9;
        }
    }
    // Converged enough if the remaining violation is tiny.
    let mut worst = 0.0f64;
    for &(start, len) in &np.groups {
        let s: f64 = x[start..start + len].iter().sum();
        worst = worst.max((s - 1.0).abs());
    }
    worst.max(np.violation(x)) <= 1e-9
}

// ---------------------------------------------------------------------------
// Multi-start solve
// ---------------------------------------------------------------------------

/// A start that reached a feasible first-order point.
struct ConvergedStart {
    x: Vec<f64>,
    objective: f64,
}

/// Uniform interior point of each simplex block (Dirichlet(1,…,1) via
/// normalized exponentials), nudged off the boundary.
fn interior_start(np: &NumProgram, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x = vec![0.0; np.dim];
    for &(start, len) in &np.groups {
        let mut sum = 0.0;
        for v in x.iter_mut().skip(start).take(len) {
            let u: f64 = rng.gen();
            *v = (-(1.0 - u).ln()).max(1e-12);
            sum += *v;
        }
        for v in x.iter_mut().skip(start).take(len) {
            *v /= sum;
        }
    }
    np.project(&mut x);
    x
}

/// Projected-gradient ascent with exact penalty followed by polishing, from
/// multiple deterministic starts. Returns the converged starts in discovery
/// order.
fn run_starts(np: &NumProgram, cfg: &SolverConfig, warm: &[Vec<f64>]) -> Vec<ConvergedStart> {
    let mut converged: Vec<ConvergedStart> = Vec::new();
    let mut best_obj = f64::NEG_INFINITY;
    let mut agree = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let block = 150usize.min(cfg.max_iters.max(1));
    for start_idx in 0..cfg.starts + warm.len() {
        let mut x = if start_idx < warm.len() {
            let mut w = warm[start_idx].clone();
            np.project(&mut w);
            w
        } else {
            rng.set_stream(derive_seed(cfg.seed, (start_idx - warm.len()) as u64 + 1));
            interior_start(np, &mut rng)
        };
        let mut rho = 10.0;
        let mut iters = 0usize;
        let mut g = vec![0.0; np.dim];
        let mut success: Option<Polished> = None;
        let mut prev_viol = f64::INFINITY;
        loop {
            // Try polishing first: warm starts and easy programs finish here.
            if let Some(p) = polish(np, &x, cfg.feas_tol, cfg.opt_tol) {
                success = Some(p);
                break;
            }
            if iters >= cfg.max_iters {
                break;
            }
            let mut t_init = 1.0;
            for _ in 0..block {
                np.penalty_grad(&x, rho, &mut g);
                let f0 = np.penalty(&x, rho);
                let mut t = t_init;
                let mut accepted = false;
                for _ in 0..25 {
                    let mut trial: Vec<f64> = x.iter().zip(&g).map(|(&xi, &gi)| xi + t * gi).collect();
                    np.project(&mut trial);
                    let gain: f64 = g
                        .iter()
                        .zip(trial.iter().zip(x.iter()))
                        .map(|(&gi, (&ti, &xi))| gi * (ti - xi))
                        .sum();
                    if np.penalty(&trial, rho) >= f0 + 1e-4 * gain {
                        x = trial;
                        t_init = (t * 2.0).min(1.0);
                        accepted = true;
                        break;
                    }
                    t *= 0.5;
                }
                iters += 1;
                if !accepted {
                    break;
                }
            }
            let viol = np.violation(&x);
            if viol > cfg.feas_tol {
                // A violation that stopped shrinking despite the growing
                // penalty will not recover: give this start up instead of
                // burning the full iteration budget on it.
                if viol > 0.9 * prev_viol && viol > 100.0 * cfg.feas_tol {
                    break;
                }
                rho = (rho * 2.0).min(1e9);
            }
            prev_viol = viol;
        }
        if let Some(p) = success {
            if (p.objective - best_obj).abs() <= 10.0 * cfg.opt_tol {
                agree += 1;
            } else if p.objective > best_obj {
                best_obj = p.objective;
                agree = 1;
            }
            converged.push(ConvergedStart {
                x: p.x,
                objective: p.objective,
            });
            // Stop once the best value is well confirmed, but never before a
            // minimum share of the starts has run: agreement among the first
            // few starts may just mean they share a basin of attraction.
            let quota = cfg.starts.min(cfg.starts / 2 + 6);
            if agree >= 6 && start_idx + 1 >= quota {
                break;
            }
        }
    }
    converged
}

/// Assembles a full-profile candidate from a solution of the support
/// program. Payoffs and residual come from the program's own deviation
/// polynomials, which agree with the game-level verification because
/// unsupported probabilities are exactly zero in both.
fn candidate_from(prog: &SupportProgram, np: &NumProgram, x: &[f64]) -> EquilibriumCandidate {
    let mut rows: Vec<Vec<(String, f64)>> = prog
        .actions
        .iter()
        .map(|acts| acts.iter().map(|a| (a.clone(), 0.0)).collect())
        .collect();
    for (k, &(i, a)) in prog.var_actions.iter().enumerate() {
        rows[i][a].1 = x[k];
    }
    let profile = StrategyProfile::from_parts(rows);
    let payoffs: Vec<f64> = np.payoffs.iter().map(|p| p.eval(x)).collect();
    let welfare = payoffs.iter().sum();
    let mut residual = 0.0f64;
    for (i, row) in np.devs.iter().enumerate() {
        for (a, dev) in row.iter().enumerate() {
            let p = np.var_of.get(&(i, a)).map_or(0.0, |&k| x[k]);
            let gap = dev.eval(x) - payoffs[i];
            residual = residual.max(if p > EPS_SUPP { gap.abs() } else { gap.max(0.0) });
        }
    }
    let support = profile.support(EPS_SUPP);
    EquilibriumCandidate {
        profile,
        payoffs,
        welfare,
        support,
        residual,
    }
}

/// Certifies emptiness of the support's feasible region by scanning a coarse
/// grid: if even the least-violating grid point exceeds the constraint
/// Lipschitz bound times the covering radius, no feasible point exists.
/// Applicable only when every player mixes over at most two actions (and at
/// most three players mix).
fn infeasibility_certificate(np: &NumProgram) -> bool {
    const RES: usize = 64;
    if np.eqs.is_empty() && np.ineqs.is_empty() {
        return false;
    }
    if np.groups.iter().any(|&(_, len)| len > 2) {
        return false;
    }
    let mixing: Vec<(usize, usize)> = np
        .groups
        .iter()
        .filter(|&&(_, len)| len == 2)
        .cloned()
        .collect();
    if mixing.len() > 3 {
        return false;
    }
    let mut x = vec![1.0; np.dim];
    let mut idx = vec![0usize; mixing.len()];
    let mut min_viol = f64::INFINITY;
    loop {
        for (m, &(start, _)) in mixing.iter().enumerate() {
            let t = idx[m] as f64 / RES as f64;
            x[start] = t;
            x[start + 1] = 1.0 - t;
        }
        min_viol = min_viol.min(np.violation(&x));
        let mut m = mixing.len();
        loop {
            if m == 0 {
                let lip = np.lipschitz.iter().fold(0.0f64, |a, &b| a.max(b));
                let margin = lip / (2.0 * RES as f64) + 1e-9;
                return min_viol > margin;
            }
            m -= 1;
            if idx[m] < RES {
                idx[m] += 1;
                for i in &mut idx[m + 1..] {
                    *i = 0;
                }
                break;
            }
        }
    }
}

/// Solves one support program by multi-start local search.
///
/// The best feasible stationary point (by objective) becomes the candidate.
/// Pure supports are decided exactly: the single admissible point either
/// satisfies the inequalities or the support is infeasible.
pub fn solve_program(prog: &SupportProgram, cfg: &SolverConfig) -> SolveOutcome {
    let np = NumProgram::build(prog, &prog.objective, &[], cfg.eps_lower);
    if prog.support.is_pure() {
        let x = vec![1.0; np.dim];
        let feasible = np.violation(&x) <= cfg.feas_tol;
        return SolveOutcome {
            status: if feasible {
                SolveStatus::Feasible(candidate_from(prog, &np, &x))
            } else {
                SolveStatus::Infeasible
            },
            starts_converged: if feasible { cfg.starts } else { 0 },
        };
    }
    // Constraints that collapsed to constants decide the support exactly,
    // and the grid certificate is far cheaper than a futile multi-start.
    let constant_conflict = prog
        .eq_constraints
        .iter()
        .any(|e| e.constant_value().is_some_and(|c| !c.is_zero()))
        || prog
            .ineq_constraints
            .iter()
            .any(|e| e.constant_value().is_some_and(|c| c < Rat::zero()));
    if constant_conflict || infeasibility_certificate(&np) {
        return SolveOutcome {
            status: SolveStatus::Infeasible,
            starts_converged: 0,
        };
    }
    let converged = run_starts(&np, cfg, &[]);
    if converged.is_empty() {
        return SolveOutcome {
            status: SolveStatus::Inconclusive,
            starts_converged: 0,
        };
    }
    let best = converged
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.objective
                .partial_cmp(&b.objective)
                .unwrap()
                .then(ib.cmp(ia))
        })
        .map(|(_, c)| c)
        .unwrap();
    let candidate = candidate_from(prog, &np, &best.x);
    let starts_converged = converged.len();
    if candidate.residual <= cfg.feas_tol {
        SolveOutcome {
            status: SolveStatus::Feasible(candidate),
            starts_converged,
        }
    } else {
        SolveOutcome {
            status: SolveStatus::Inconclusive,
            starts_converged: 0,
        }
    }
}

/// Re-optimizes within the welfare-optimal set: holding the objective within
/// `opt_tol` of `welfare_opt`, maximizes each player's payoff in increasing
/// player order, fixing each attained level as a constraint for the next.
pub fn lexicographic_refine(
    prog: &SupportProgram,
    cfg: &SolverConfig,
    welfare_opt: f64,
) -> SolveOutcome {
    let mut extra: Vec<PolyExpr> = vec![prog
        .objective
        .sub(&PolyExpr::constant(crate::expr::rat_from_f64(
            welfare_opt - cfg.opt_tol,
        )))];
    let n = prog.payoff_polys.len();
    let mut warm: Vec<Vec<f64>> = Vec::new();
    let mut last: Option<(Vec<f64>, NumProgram)> = None;
    for i in 0..n {
        let np = NumProgram::build(prog, &prog.payoff_polys[i], &extra, cfg.eps_lower);
        let converged = if prog.support.is_pure() {
            let x = vec![1.0; np.dim];
            if np.violation(&x) <= cfg.feas_tol {
                vec![ConvergedStart {
                    objective: np.objective.eval(&x),
                    x,
                }]
            } else {
                Vec::new()
            }
        } else {
            run_starts(&np, cfg, &warm)
        };
        let best = converged.into_iter().enumerate().max_by(|(ia, a), (ib, b)| {
            a.objective
                .partial_cmp(&b.objective)
                .unwrap()
                .then(ib.cmp(ia))
        });
        let Some((_, best)) = best else {
            return SolveOutcome {
                status: SolveStatus::Inconclusive,
                starts_converged: 0,
            };
        };
        extra.push(prog.payoff_polys[i].sub(&PolyExpr::constant(
            crate::expr::rat_from_f64(best.objective - cfg.opt_tol),
        )));
        warm = vec![best.x.clone()];
        last = Some((best.x, np));
    }
    match last {
        Some((x, np)) => {
            let candidate = candidate_from(prog, &np, &x);
            if candidate.residual <= cfg.feas_tol {
                SolveOutcome {
                    status: SolveStatus::Feasible(candidate),
                    starts_converged: 1,
                }
            } else {
                SolveOutcome {
                    status: SolveStatus::Inconclusive,
                    starts_converged: 0,
                }
            }
        }
        None => SolveOutcome {
            status: SolveStatus::Inconclusive,
            starts_converged: 0,
        },
    }
}

// ---------------------------------------------------------------------------
// find_swpe
// ---------------------------------------------------------------------------

/// Searches every support for equilibria and returns the social-welfare
/// optimum together with one candidate per feasible support (in support
/// enumeration order).
///
/// Supports are independent subproblems solved (possibly in parallel) with
/// per-support random streams derived from `cfg.seed`, so results do not
/// depend on thread count. Welfare ties among the best are broken by
/// lexicographic payoff refinement, then by support order.
pub fn find_swpe(
    game: &Nfpg,
    cfg: &SolverConfig,
) -> Result<(EquilibriumCandidate, Vec<EquilibriumCandidate>), NlpError> {
    let supports = enumerate_supports(game);
    let indexed: Vec<(usize, Support)> = supports.into_iter().enumerate().collect();
    let solved: Vec<(usize, SupportProgram, SolveOutcome)> = indexed
        .par_iter()
        .map(|(idx, support)| {
            let prog = build_support_program(game, support, &lowest_pivots(support))
                .expect("lowest pivots are in the support");
            let mut sub = cfg.clone();
            sub.seed = derive_seed(cfg.seed, *idx as u64);
            let outcome = solve_program(&prog, &sub);
            (*idx, prog, outcome)
        })
        .collect::<Vec<_>>();
    let mut solved = solved;
    solved.sort_by_key(|(idx, _, _)| *idx);

    let mut inconclusive = 0usize;
    // (support index, program, candidate re-assessed against the game).
    let mut feasible: Vec<(usize, SupportProgram, EquilibriumCandidate)> = Vec::new();
    for (idx, prog, outcome) in solved {
        match outcome.status {
            SolveStatus::Feasible(c) => {
                let assessed = EquilibriumCandidate::assess(game, c.profile)?;
                if assessed.residual <= cfg.feas_tol {
                    feasible.push((idx, prog, assessed));
                } else {
                    inconclusive += 1;
                }
            }
            SolveStatus::Infeasible => {}
            SolveStatus::Inconclusive => inconclusive += 1,
        }
    }
    if feasible.is_empty() {
        return Err(NlpError::NoEquilibriumFound { inconclusive });
    }
    let w_opt = feasible
        .iter()
        .map(|(_, _, c)| c.welfare)
        .fold(f64::NEG_INFINITY, f64::max);
    // Refine every near-optimal candidate, then pick the lexicographically
    // best refined payoff vector; earlier supports win remaining ties.
    let mut best: Option<(usize, EquilibriumCandidate)> = None;
    let mut refined_by_pos: Vec<(usize, EquilibriumCandidate)> = Vec::new();
    for (pos, (idx, prog, c)) in feasible.iter().enumerate() {
        if c.welfare < w_opt - cfg.opt_tol {
            continue;
        }
        let mut sub = cfg.clone();
        sub.seed = derive_seed(cfg.seed, (*idx as u64) | (1 << 63));
        let refined = match lexicographic_refine(prog, &sub, w_opt).status {
            SolveStatus::Feasible(r) => {
                let assessed = EquilibriumCandidate::assess(game, r.profile)?;
                if assessed.residual <= cfg.feas_tol {
                    assessed
                } else {
                    c.clone()
                }
            }
            _ => c.clone(),
        };
        refined_by_pos.push((pos, refined.clone()));
        let better = match &best {
            None => true,
            Some((_, b)) => {
                let mut cmp = std::cmp::Ordering::Equal;
                if (refined.welfare - b.welfare).abs() > cfg.opt_tol {
                    cmp = refined.welfare.partial_cmp(&b.welfare).unwrap();
                } else {
                    for (rp, bp) in refined.payoffs.iter().zip(&b.payoffs) {
                        if (rp - bp).abs() > cfg.opt_tol {
                            cmp = rp.partial_cmp(bp).unwrap();
                            break;
                        }
                    }
                }
                cmp == std::cmp::Ordering::Greater
            }
        };
        if better {
            best = Some((pos, refined));
        }
    }
    let mut all: Vec<EquilibriumCandidate> = feasible.into_iter().map(|(_, _, c)| c).collect();
    for (pos, refined) in refined_by_pos {
        all[pos] = refined;
    }
    let (best_pos, _) = best.as_ref().unwrap();
    let best_candidate = all[*best_pos].clone();
    Ok((best_candidate, all))
}

// ---------------------------------------------------------------------------
// Grid oracle
// ---------------------------------------------------------------------------

/// All per-player distributions with entries `i/resolution`.
fn simplex_grid(actions: usize, resolution: usize) -> Vec<Vec<f64>> {
    fn rec(slots: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if slots == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for v in 0..=left {
            prefix.push(v);
            rec(slots - 1, left - v, prefix, out);
            prefix.pop();
        }
    }
    let mut ints = Vec::new();
    rec(actions, resolution, &mut Vec::new(), &mut ints);
    ints.into_iter()
        .map(|v| v.into_iter().map(|i| i as f64 / resolution as f64).collect())
        .collect()
}

/// Brute-force equilibrium search on a uniform simplex grid, independent of
/// the NLP solver.
///
/// Grid points are accepted by the verification residual at `tol`, grouped
/// by the support they classify to (threshold half a grid step), and each
/// group's best point is refined by damped Newton on its indifference
/// system (single-variable groups fall back to bisection) until the
/// indifference residual drops below 1e-9. Refined points must verify at
/// 1e-7; each support keeps its lowest-residual representative, returned in
/// support order.
pub fn grid_oracle(
    game: &Nfpg,
    resolution: usize,
    tol: f64,
) -> Result<Vec<EquilibriumCandidate>, NlpError> {
    assert!(resolution >= 10, "resolution must be at least 10");
    assert!(
        (0..game.num_players()).all(|i| game.action_count(i) <= 3),
        "grid oracle supports at most 3 actions per player"
    );
    let n = game.num_players();
    let per_player: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|i| simplex_grid(game.action_count(i), resolution))
        .collect();
    let total: u128 = per_player.iter().map(|g| g.len() as u128).product();
    if total > 100_000_000 {
        return Err(NlpError::TooLarge { points: total });
    }
    let cg = CompiledGame::new(game);
    let classify_eps = 1.0 / (2.0 * resolution as f64);
    let mut x = vec![0.0; cg.total_vars];
    let mut idx = vec![0usize; n];
    let mut hits: BTreeMap<Vec<u64>, (f64, Vec<f64>)> = BTreeMap::new();
    let mut scratch = cg.scratch();
    loop {
        for i in 0..n {
            let row = &per_player[i][idx[i]];
            x[cg.offsets[i]..cg.offsets[i] + row.len()].copy_from_slice(row);
        }
        let res = cg.residual_with(&x, &mut scratch);
        if res <= tol {
            let masks: Vec<u64> = (0..n)
                .map(|i| {
                    (0..cg.action_counts[i])
                        .filter(|&a| x[cg.offsets[i] + a] > classify_eps)
                        .fold(0u64, |m, a| m | (1 << a))
                })
                .collect();
            if masks.iter().all(|&m| m != 0) {
                let entry = hits.entry(masks).or_insert((f64::INFINITY, Vec::new()));
                if res < entry.0 {
                    *entry = (res, x.clone());
                }
            }
        }
        let mut i = n;
        let done = loop {
            if i == 0 {
                break true;
            }
            i -= 1;
            if idx[i] + 1 < per_player[i].len() {
                idx[i] += 1;
                for v in &mut idx[i + 1..] {
                    *v = 0;
                }
                break false;
            }
        };
        if done {
            break;
        }
    }
    let mut out: BTreeMap<Support, EquilibriumCandidate> = BTreeMap::new();
    for (masks, (_, point)) in hits {
        let support = Support::from_masks(masks);
        if let Some(candidate) = refine_on_support(game, &cg, &support, &point, resolution) {
            if candidate.residual <= 1e-7 {
                let key = candidate.support.clone();
                let keep = out
                    .get(&key)
                    .map_or(true, |old| candidate.residual < old.residual);
                if keep {
                    out.insert(key, candidate);
                }
            }
        }
    }
    Ok(out.into_values().collect())
}

/// Newton-refines a grid point on the indifference system of its classified
/// support; independent reconstruction of the equilibrium conditions from
/// the game's utility entries.
fn refine_on_support(
    game: &Nfpg,
    cg: &CompiledGame,
    support: &Support,
    point: &[f64],
    resolution: usize,
) -> Option<EquilibriumCandidate> {
    let n = game.num_players();
    let mut zeros: BTreeMap<ProbVar, PolyExpr> = BTreeMap::new();
    for j in 0..n {
        for a in 0..game.action_count(j) {
            if !support.contains(j, a) {
                zeros.insert(game.var(j, a), PolyExpr::zero());
            }
        }
    }
    // Supported variables and the stacked system: per-player indifference to
    // the first supported action, plus the per-player sum-to-one rows.
    let mut vars: Vec<ProbVar> = Vec::new();
    let mut var_pos: Vec<(usize, usize)> = Vec::new();
    let mut group_of: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for a in support.indices(i) {
            group_of[i].push(vars.len());
            vars.push(game.var(i, a));
            var_pos.push((i, a));
        }
    }
    let mut joint = vec![0usize; n];
    let mut devs: Vec<Vec<PolyExpr>> = (0..n)
        .map(|i| vec![PolyExpr::zero(); game.action_count(i)])
        .collect();
    for idx in 0..game.joint_count() {
        game.decode_joint(idx, &mut joint);
        for i in 0..n {
            if (0..n).any(|j| j != i && !support.contains(j, joint[j])) {
                continue;
            }
            if !support.contains(i, joint[i]) {
                continue;
            }
            let mut term = substitute(game.utility_by_index(i, idx), &zeros);
            if term.is_zero() {
                continue;
            }
            for j in 0..n {
                if j != i {
                    term = term.mul(&PolyExpr::var(game.var(j, joint[j])));
                }
            }
            devs[i][joint[i]] = devs[i][joint[i]].add(&term);
        }
    }
    let mut eqs: Vec<PolyExpr> = Vec::new();
    for i in 0..n {
        let sup = support.indices(i);
        for &a in &sup[1..] {
            eqs.push(devs[i][a].sub(&devs[i][sup[0]]));
        }
    }
    let index: BTreeMap<&ProbVar, usize> = vars.iter().enumerate().map(|(k, v)| (v, k)).collect();
    let var_id = |v: &ProbVar| index[v];
    let ceqs: Vec<CompiledPoly> = eqs.iter().map(|e| CompiledPoly::compile_with(e, var_id)).collect();
    let cgrads: Vec<Vec<CompiledPoly>> = eqs
        .iter()
        .map(|e| {
            grad_expr(e, &vars)
                .iter()
                .map(|g| CompiledPoly::compile_with(g, var_id))
                .collect()
        })
        .collect();
    let dim = vars.len();
    let mut y: Vec<f64> = var_pos
        .iter()
        .map(|&(i, a)| point[cg.offsets[i] + a])
        .collect();
    let system_norm = |y: &[f64], groups: &[Vec<usize>], ceqs: &[CompiledPoly]| -> f64 {
        let mut m = 0.0f64;
        for g in groups {
            let s: f64 = g.iter().map(|&k| y[k]).sum();
            m = m.max((s - 1.0).abs());
        }
        for c in ceqs {
            m = m.max(c.eval(y).abs());
        }
        m
    };
    let mut ok = false;
    for _ in 0..60 {
        let worst = system_norm(&y, &group_of, &ceqs);
        if worst <= 1e-9 {
            ok = true;
            break;
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut res: Vec<f64> = Vec::new();
        for g in &group_of {
            let mut row = vec![0.0; dim];
            for &k in g {
                row[k] = 1.0;
            }
            rows.push(row);
            res.push(g.iter().map(|&k| y[k]).sum::<f64>() - 1.0);
        }
        for (c, grads) in ceqs.iter().zip(&cgrads) {
            rows.push(grads.iter().map(|g| g.eval(&y)).collect());
            res.push(c.eval(&y));
        }
        let neg: Vec<f64> = res.iter().map(|r| -r).collect();
        let d = lstsq(&rows, &neg, dim);
        let mut t = 1.0;
        let mut stepped = false;
        for _ in 0..25 {
            let trial: Vec<f64> = y.iter().zip(&d).map(|(&yi, &di)| yi + t * di).collect();
            if system_norm(&trial, &group_of, &ceqs) < worst {
                y = trial;
                stepped = true;
                break;
            }
            t *= 0.5;
        }
        if !stepped {
            break;
        }
    }
    if !ok && dim == group_of.iter().filter(|g| g.len() == 1).count() + 2 && ceqs.len() == 1 {
        // One free degree of freedom: bisect the single indifference
        // equation along the grid cell around the accepted point.
        let free: Vec<usize> = group_of
            .iter()
            .find(|g| g.len() == 2)
            .cloned()
            .unwrap_or_default();
        if free.len() == 2 {
            let step = 1.0 / resolution as f64;
            let (k0, k1) = (free[0], free[1]);
            let eval_at = |t: f64, y: &mut Vec<f64>| {
                y[k0] = t;
                y[k1] = 1.0 - t;
                ceqs[0].eval(y)
            };
            let t_mid = y[k0];
            let mut a = (t_mid - step).max(0.0);
            let mut b = (t_mid + step).min(1.0);
            let fa = eval_at(a, &mut y);
            let fb = eval_at(b, &mut y);
            if fa == 0.0 {
                y[k0] = a;
                y[k1] = 1.0 - a;
                ok = true;
            } else if fb == 0.0 {
                ok = true;
            } else if fa.signum() != fb.signum() {
                for _ in 0..80 {
                    let mid = 0.5 * (a + b);
                    let fm = eval_at(mid, &mut y);
                    if fm.abs() <= 1e-12 {
                        break;
                    }
                    if fm.signum() == fa.signum() {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                let mid = 0.5 * (a + b);
                y[k0] = mid;
                y[k1] = 1.0 - mid;
                ok = system_norm(&y, &group_of, &ceqs) <= 1e-9;
            }
        }
    }
    if !ok {
        return None;
    }
    if y.iter().any(|&v| !(-1e-12..=1.0 + 1e-12).contains(&v)) {
        return None;
    }
    let mut rows: Vec<Vec<f64>> = game
        .player_names()
        .iter()
        .enumerate()
        .map(|(i, _)| vec![0.0; game.action_count(i)])
        .collect();
    for (k, &(i, a)) in var_pos.iter().enumerate() {
        rows[i][a] = y[k].clamp(0.0, 1.0);
    }
    for row in &mut rows {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            for v in row.iter_mut() {
                *v /= s;
            }
        }
    }
    let profile = StrategyProfile::from_rows(game, rows).ok()?;
    EquilibriumCandidate::assess(game, profile).ok()
}
