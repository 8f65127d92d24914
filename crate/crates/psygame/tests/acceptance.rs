//! Release checks: every bundled case study reproduces its known equilibria,
//! statistics and trends within stated tolerances and time budgets, and
//! randomized suites cross-validate the solver against the independent grid
//! oracle. Each test prints one `pass:` line with the measured values.

mod common;

use std::collections::BTreeMap;
use std::process::Command;
use std::time::Instant;

use common::recompute_value;
use psygame::expr::{eval_expr_f64, grad_expr, rat, PolyExpr, ProbVar, Rat};
use psygame::game::{verify_pe, EquilibriumCandidate, Nfpg, Support};
use psygame::modelio::{
    crossing_game, crossing_multi_game, cyclist_bimatrix_game, cyclist_vehicle_game,
    example2_game, reciprocity_game, ultimatum_game,
};
use psygame::nlp::{find_swpe, grid_oracle, SolverConfig};
use psygame::pcsg::{backward_induction, build_stage_game, model_stats, run_experiments, Selection};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn assert_budget(started: Instant, secs: f64, what: &str) -> f64 {
    let took = started.elapsed().as_secs_f64();
    assert!(took < secs, "{what} took {took:.2}s, budget {secs}s");
    took
}

// ---------------------------------------------------------------------------
// Three-player confidence game, exercised end to end through the binary
// ---------------------------------------------------------------------------

#[test]
fn confidence_equilibria_arrive_through_the_cli() {
    let started = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_psygame"))
        .args(["solve", "confidence", "--all", "--seed", "0", "--format", "csv"])
        .env_remove("PG_THREADS")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "solver exit: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    // Records: model,eq_index,player,action,prob,utility,welfare,residual.
    // Utility rows leave the action column blank.
    let mut utilities: BTreeMap<u64, BTreeMap<String, f64>> = BTreeMap::new();
    let mut welfare: BTreeMap<u64, f64> = BTreeMap::new();
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    for rec in rdr.records() {
        let rec = rec.unwrap();
        if rec[3].is_empty() {
            let eq: u64 = rec[1].parse().unwrap();
            utilities
                .entry(eq)
                .or_default()
                .insert(rec[2].to_string(), rec[5].parse().unwrap());
            welfare.insert(eq, rec[6].parse().unwrap());
        }
    }

    assert_eq!(utilities.len(), 3, "expected exactly three equilibria");
    let mut want = vec![(-8.0 / 9.0, 0.5, 0.5), (-1.0, 1.5, 0.5), (0.0, 0.5, 0.5)];
    for utils in utilities.values() {
        let got = (utils["p1"], utils["p2"], utils["p3"]);
        let pos = want
            .iter()
            .position(|w| {
                (w.0 - got.0).abs() <= 1e-6
                    && (w.1 - got.1).abs() <= 1e-6
                    && (w.2 - got.2).abs() <= 1e-6
            })
            .unwrap_or_else(|| panic!("unexpected payoffs {got:?}"));
        want.remove(pos);
    }
    let best = welfare.values().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!((best - 1.0).abs() <= 1e-6, "best welfare {best}");

    let took = assert_budget(started, 5.0, "confidence via cli");
    println!("pass: three equilibria, payoffs as expected, best welfare {best} ({took:.2}s)");
}

// ---------------------------------------------------------------------------
// Interior welfare optimum on an indifference continuum
// ---------------------------------------------------------------------------

#[test]
fn indifference_continuum_yields_the_interior_optimum() {
    let started = Instant::now();
    let (best, _) = find_swpe(&example2_game(), &SolverConfig::default()).unwrap();
    let p = best.profile.prob_of("a2").unwrap();
    assert!((p - 0.45).abs() <= 1e-4, "p(a2) = {p}");
    assert!(
        (best.welfare - 1.0).abs() <= 1e-6,
        "welfare {}",
        best.welfare
    );
    let took = assert_budget(started, 2.0, "example2");
    println!(
        "pass: p(a2) = {p:.6}, welfare {:.6} ({took:.2}s)",
        best.welfare
    );
}

// ---------------------------------------------------------------------------
// Bargaining: guilt and reciprocity agree on the fair split
// ---------------------------------------------------------------------------

#[test]
fn bargaining_sensitivities_pick_the_fair_agreement() {
    let mut report = String::new();
    let cfg = SolverConfig::default();

    let started = Instant::now();
    let g = ultimatum_game(rat(1, 1), rat(1, 1));
    let (best, _) = find_swpe(&g, &cfg).unwrap();
    assert_eq!(best.support.describe(&g), "{fair}x{accept}");
    assert!((best.payoffs[0] - 14.0).abs() <= 1e-6, "{:?}", best.payoffs);
    assert!((best.payoffs[1] - 14.0).abs() <= 1e-6, "{:?}", best.payoffs);
    let took = assert_budget(started, 5.0, "guilt-sensitive split");
    report.push_str(&format!("guilt (14,14) {took:.2}s"));

    let started = Instant::now();
    let g = reciprocity_game(rat(1, 1), rat(1, 1));
    let (best, _) = find_swpe(&g, &cfg).unwrap();
    assert_eq!(best.support.describe(&g), "{fair}x{accept}");
    assert!((best.payoffs[0] - 13.0).abs() <= 1e-6, "{:?}", best.payoffs);
    assert!((best.payoffs[1] - 13.0).abs() <= 1e-6, "{:?}", best.payoffs);
    let took = assert_budget(started, 5.0, "reciprocity split");
    report.push_str(&format!(", reciprocity (13,13) {took:.2}s"));

    let started = Instant::now();
    let g = ultimatum_game(rat(0, 1), rat(0, 1));
    let (best, _) = find_swpe(&g, &cfg).unwrap();
    assert!(
        (best.welfare - 10.0).abs() <= 1e-6,
        "welfare {}",
        best.welfare
    );
    let took = assert_budget(started, 5.0, "materialist split");
    report.push_str(&format!(", materialist welfare 10 {took:.2}s"));

    println!("pass: {report}");
}

// ---------------------------------------------------------------------------
// Road crossing: unique avoidance at high sanction, mixing at low sanction,
// cross-validated by the grid oracle
// ---------------------------------------------------------------------------

#[test]
fn crossing_equilibria_cross_validate_with_the_grid_oracle() {
    let started = Instant::now();

    let g5 = crossing_game(rat(5, 1));
    let (best, all) = find_swpe(&g5, &SolverConfig::default()).unwrap();
    assert_eq!(all.len(), 1, "expected a unique support at mu=5");
    assert_eq!(best.support.describe(&g5), "{maintain}x{wait}");

    let g2 = crossing_game(rat(2, 1));
    let (_, all) = find_swpe(&g2, &SolverConfig::default()).unwrap();
    let want = [("reduce", 0.75), ("maintain", 0.25), ("wait", 0.5), ("cross", 0.5)];
    let near = |c: &EquilibriumCandidate, tol: f64| {
        want.iter()
            .all(|&(a, p)| (c.profile.prob_of(a).unwrap() - p).abs() <= tol)
    };
    let mixed = all
        .iter()
        .find(|c| near(c, 1e-4))
        .expect("mixed candidate at mu=2");
    let oracle = grid_oracle(&g2, 400, 1e-6).unwrap();
    let seen = oracle
        .iter()
        .find(|c| c.support == mixed.support)
        .expect("oracle misses the mixed support");
    assert!(near(seen, 1e-4), "oracle point {:?}", seen.profile.flat());

    let took = assert_budget(started, 10.0, "crossing");
    println!(
        "pass: unique (maintain,wait) at mu=5; mixed point confirmed on a 400-grid at mu=2 ({took:.2}s)"
    );
}

// ---------------------------------------------------------------------------
// Cyclist under type uncertainty, and its classical reduction
// ---------------------------------------------------------------------------

#[test]
fn cyclist_uncertainty_and_its_classical_reduction() {
    let started = Instant::now();

    let g = cyclist_vehicle_game();
    let (_, all) = find_swpe(&g, &SolverConfig::default()).unwrap();
    let auto = 14.0 / 17.0;
    let go = all
        .iter()
        .find(|c| {
            (c.profile.prob_of("auto").unwrap() - auto).abs() <= 1e-4
                && (c.profile.prob_of("go").unwrap() - 1.0).abs() <= 1e-4
        })
        .expect("no equilibrium with the vehicle committed to go");
    let stop = all
        .iter()
        .find(|c| {
            (c.profile.prob_of("auto").unwrap() - auto).abs() <= 1e-4
                && (c.profile.prob_of("stop").unwrap() - 0.97).abs() <= 1e-2
        })
        .expect("no equilibrium with the vehicle stopping at ~0.97");
    assert!(!std::ptr::eq(go, stop));

    let b = cyclist_bimatrix_game(rat(9, 10));
    let oracle = grid_oracle(&b, 150, 1e-6).unwrap();
    assert_eq!(oracle.len(), 1, "reduction should have a unique equilibrium");
    assert_eq!(oracle[0].support.describe(&b), "{cycle}x{stop}");
    assert!((oracle[0].payoffs[0] - 20.0).abs() <= 1e-6);
    assert!((oracle[0].payoffs[1] - 14.2).abs() <= 1e-6);

    let took = assert_budget(started, 30.0, "cyclist");
    println!(
        "pass: both fixed points at p(auto) = 14/17 (stop {:.4}); reduction is (cycle,stop) ({took:.2}s)",
        stop.profile.prob_of("stop").unwrap()
    );
}

// ---------------------------------------------------------------------------
// Multi-step crossing: model sizes across the attention regimes
// ---------------------------------------------------------------------------

#[test]
fn multi_step_model_sizes_match_across_attention_regimes() {
    let regimes: [(Rat, [(usize, usize); 6]); 3] = [
        (
            rat(0, 1),
            [(6, 21), (7, 25), (8, 29), (9, 33), (10, 37), (11, 41)],
        ),
        (
            rat(3, 10),
            [(91, 701), (140, 1198), (204, 1889), (285, 2806), (385, 3981), (506, 5446)],
        ),
        (
            rat(1, 1),
            [(91, 256), (140, 413), (204, 624), (285, 897), (385, 1240), (506, 1661)],
        ),
    ];
    for (gamma, sizes) in regimes {
        for (i, want) in sizes.iter().enumerate() {
            let k = 5 + i as i64;
            let g = crossing_multi_game(rat(1, 1), gamma.clone(), k).unwrap();
            let got = model_stats(&g, k as usize).unwrap();
            assert_eq!(got, *want, "gamma={gamma} k={k}");
        }
    }
    println!("pass: all 18 state/transition counts match");
}

// ---------------------------------------------------------------------------
// Multi-step crossing: attention lowers crossings and, at long horizons,
// lifts pedestrian utility
// ---------------------------------------------------------------------------

#[test]
fn attention_reduces_crossings_and_lifts_pedestrian_utility() {
    let started = Instant::now();
    let mut cfg = SolverConfig::default();
    cfg.starts = 8;

    let mut lines = Vec::new();
    for k in 5..=10usize {
        let mut point = Vec::new();
        for gamma in [rat(0, 1), rat(1, 1)] {
            let g = crossing_multi_game(rat(1, 1), gamma, k as i64).unwrap();
            let rep = run_experiments(&g, k, 10, &cfg, cfg.seed).unwrap();
            point.push((rep.action_prob_mean["c"], rep.utility_mean[1]));
        }
        let (lapsed, attentive) = (point[0], point[1]);
        assert!(
            attentive.0 < lapsed.0,
            "k={k}: crossing probability {:.4} did not drop below {:.4}",
            attentive.0,
            lapsed.0
        );
        if k >= 8 {
            assert!(
                attentive.1 > lapsed.1,
                "k={k}: pedestrian utility {:.4} did not exceed {:.4}",
                attentive.1,
                lapsed.1
            );
        }
        lines.push(format!(
            "k={k} crossing {:.3}->{:.3} utility {:.2}->{:.2}",
            lapsed.0, attentive.0, lapsed.1, attentive.1
        ));
    }

    let took = assert_budget(started, 600.0, "experiment sweep");
    println!("pass: {} ({took:.1}s)", lines.join("; "));
}

// ---------------------------------------------------------------------------
// Randomized suites
// ---------------------------------------------------------------------------

fn eighth(rng: &mut ChaCha8Rng, lo: i64, hi: i64) -> Rat {
    rat(rng.gen_range(lo..=hi), 8)
}

fn two_by_two(mut f: impl FnMut(usize, &[usize]) -> PolyExpr) -> Nfpg {
    Nfpg::with_utilities(
        vec!["one".into(), "two".into()],
        vec![
            vec!["up".into(), "down".into()],
            vec!["left".into(), "right".into()],
        ],
        &mut f,
    )
    .unwrap()
}

#[test]
fn random_psychological_games_agree_with_the_grid_oracle() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = SolverConfig::default();
    let vars = [
        ProbVar::new(0, "up"),
        ProbVar::new(0, "down"),
        ProbVar::new(1, "left"),
        ProbVar::new(1, "right"),
    ];

    for case in 0..200 {
        let g = two_by_two(|_, _| {
            let mut e = PolyExpr::constant(eighth(&mut rng, -40, 40));
            for v in &vars {
                e = e.add(&PolyExpr::var(v.clone()).scale(&eighth(&mut rng, -40, 40)));
            }
            e
        });
        let (_, all) = find_swpe(&g, &cfg).unwrap();
        let solver: Vec<Support> = all.iter().map(|c| c.support.clone()).collect();
        // The scan tolerance must cover the residual of the grid point
        // nearest an off-grid equilibrium (payoff slopes times the grid
        // step); the oracle's refinement gate still certifies at 1e-7.
        let oracle: Vec<Support> = grid_oracle(&g, 300, 0.2)
            .unwrap()
            .iter()
            .map(|c| c.support.clone())
            .collect();
        assert_eq!(solver, oracle, "case {case}: support sets disagree");
    }

    let took = started.elapsed().as_secs_f64();
    println!("pass: 200 random belief-linear games, solver and oracle agree ({took:.1}s)");
}

#[test]
fn dominant_cells_are_the_unique_candidates() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cfg = SolverConfig::default();

    for case in 0..200 {
        let target = (rng.gen_range(0..2usize), rng.gen_range(0..2usize));
        // Base payoffs in [-5, 3], then a margin in [1/2, 2] keeps the
        // dominant entries within [-5, 5].
        let mut pay = [[[rat(0, 1), rat(0, 1)], [rat(0, 1), rat(0, 1)]], [
            [rat(0, 1), rat(0, 1)],
            [rat(0, 1), rat(0, 1)],
        ]];
        for cell in pay.iter_mut().flatten().flatten() {
            *cell = eighth(&mut rng, -40, 24);
        }
        for j in 0..2 {
            pay[0][target.0][j] = pay[0][1 - target.0][j].clone() + eighth(&mut rng, 4, 16);
        }
        for i in 0..2 {
            pay[1][i][target.1] = pay[1][i][1 - target.1].clone() + eighth(&mut rng, 4, 16);
        }
        let g = two_by_two(|i, joint| PolyExpr::constant(pay[i][joint[0]][joint[1]].clone()));

        let (best, all) = find_swpe(&g, &cfg).unwrap();
        assert_eq!(all.len(), 1, "case {case}: spurious candidates");
        let want = Support::from_sets(&[vec![target.0], vec![target.1]]);
        assert_eq!(best.support, want, "case {case}");
    }

    let took = started.elapsed().as_secs_f64();
    println!("pass: 200 dominant-cell classical games resolve to their cell ({took:.1}s)");
}

#[test]
fn gradients_agree_with_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let vars = [
        ProbVar::new(0, "x"),
        ProbVar::new(0, "y"),
        ProbVar::new(1, "z"),
    ];

    for case in 0..100 {
        let mut e = PolyExpr::zero();
        for _ in 0..rng.gen_range(1..=5) {
            let mut m = PolyExpr::constant(eighth(&mut rng, -40, 40));
            for v in &vars {
                for _ in 0..rng.gen_range(0..3usize) {
                    m = m.mul(&PolyExpr::var(v.clone()));
                }
            }
            e = e.add(&m);
        }
        let point: BTreeMap<ProbVar, f64> = vars
            .iter()
            .map(|v| (v.clone(), rng.gen_range(0..=8) as f64 / 8.0))
            .collect();

        let h = 1e-4;
        for (v, d) in vars.iter().zip(grad_expr(&e, &vars)) {
            let analytic = eval_expr_f64(&d, &point).unwrap();
            let mut hi = point.clone();
            *hi.get_mut(v).unwrap() += h;
            let mut lo = point.clone();
            *lo.get_mut(v).unwrap() -= h;
            let central =
                (eval_expr_f64(&e, &hi).unwrap() - eval_expr_f64(&e, &lo).unwrap()) / (2.0 * h);
            assert!(
                (analytic - central).abs() <= 1e-4 * analytic.abs().max(1.0),
                "case {case}, d/d{}: {analytic} vs {central}",
                v.action
            );
        }
    }

    println!("pass: 100 random polynomials, gradients match central differences");
}

#[test]
fn induction_runs_recompute_and_verify_at_every_stage() {
    let started = Instant::now();
    let mut cfg = SolverConfig::default();
    cfg.starts = 8;

    let mut pairs = 0;
    for gamma in [rat(0, 1), rat(1, 2), rat(1, 1)] {
        for k in [1usize, 3] {
            let g = crossing_multi_game(rat(1, 1), gamma.clone(), k as i64).unwrap();
            for sel in [Selection::SwOptimal, Selection::RandomUniform(0)] {
                let vt = backward_induction(&g, k, &cfg, sel).unwrap();
                for t in 1..=vt.horizon {
                    for (s, c) in &vt.strategies[t] {
                        let want = recompute_value(&g, s, c.profile.rows(), &vt.values[t - 1]);
                        for (a, b) in vt.values[t][s].iter().zip(&want) {
                            assert!(
                                (a - b).abs() <= 1e-9,
                                "gamma={gamma} t={t} {}: value {a} recomputes to {b}",
                                g.describe_state(s)
                            );
                        }
                        let stage = build_stage_game(&g, s, &vt.values[t - 1]).unwrap();
                        let (ok, residual) = verify_pe(&stage, &c.profile, 2e-6).unwrap();
                        assert!(
                            ok,
                            "gamma={gamma} t={t} {}: stage residual {residual}",
                            g.describe_state(s)
                        );
                        pairs += 1;
                    }
                }
            }
        }
    }

    let took = started.elapsed().as_secs_f64();
    println!("pass: {pairs} stage decisions recompute exactly and verify ({took:.1}s)");
}
