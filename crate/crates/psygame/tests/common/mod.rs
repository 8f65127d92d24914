//! Helpers shared by the integration test targets.

use std::collections::BTreeMap;

use num_traits::ToPrimitive;
use psygame::expr::{eval_expr_f64, ProbVar};
use psygame::pcsg::{Pcsg, State};

/// Recomputes a state value from the raw model pieces: availability,
/// transitions, reward rules and the previous layer, evaluated with the
/// plain expression evaluator instead of the stage-game machinery.
pub fn recompute_value(
    g: &Pcsg,
    s: &State,
    profile_rows: &[Vec<(String, f64)>],
    prev: &BTreeMap<State, Vec<f64>>,
) -> Vec<f64> {
    let n = g.num_players();
    let avail = g.avail(s);
    let mut frozen: BTreeMap<ProbVar, f64> = BTreeMap::new();
    for i in 0..n {
        for name in g.actions(i) {
            let p = profile_rows[i]
                .iter()
                .find(|(a, _)| a == name)
                .map(|&(_, p)| p)
                .unwrap_or(0.0);
            frozen.insert(ProbVar::new(i, name), p);
        }
    }
    let labels: Vec<Vec<usize>> = if avail.iter().all(|a| a.is_empty()) {
        vec![Vec::new()]
    } else {
        avail[0]
            .iter()
            .flat_map(|&a| avail[1].iter().map(move |&b| vec![a, b]))
            .collect()
    };
    let mut out = vec![0.0; n];
    for label in labels {
        let weight: f64 = label
            .iter()
            .enumerate()
            .map(|(i, &a)| frozen[&ProbVar::new(i, &g.actions(i)[a])])
            .product();
        if weight == 0.0 {
            continue;
        }
        let trans = g.transition(s, &label).unwrap();
        for i in 0..n {
            let reward = eval_expr_f64(&g.action_reward(i, s, &label), &frozen).unwrap();
            let cont: f64 = trans
                .iter()
                .map(|(succ, p)| p.to_f64().unwrap() * prev[succ][i])
                .sum();
            out[i] += weight * (reward + cont);
        }
    }
    for i in 0..n {
        out[i] += g.state_reward(i, s).to_f64().unwrap();
    }
    out
}
