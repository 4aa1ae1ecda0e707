//! Brute-force oracles used only by tests: exhaustive sample-path
//! enumeration over the model kernel, independent of every closed form
//! and series implementation it is used to check.

use std::collections::HashMap;

use crate::model::{dtmc_transitions, OccupancyState, SwitchParams};

/// Walk every sample path of the uniformized chain out of a state
/// outside S until it re-enters S, up to `max_steps` transitions deep.
///
/// Returns the re-entry law (state -> probability), the probability mass
/// per excursion length (`by_len[s]` = probability the chain spends
/// exactly `s` steps outside S), and the path mass left unexplored.
pub(crate) fn excursion_law(
    params: &SwitchParams,
    start: &OccupancyState,
    max_steps: usize,
) -> (HashMap<OccupancyState, f64>, Vec<f64>, f64) {
    assert!(!start.is_in_s(), "excursions start outside S");
    let mut law = HashMap::new();
    let mut by_len = vec![0.0f64; max_steps + 2];
    let mut leftover = 0.0f64;

    #[allow(clippy::too_many_arguments)]
    fn rec(
        params: &SwitchParams,
        state: &OccupancyState,
        prob: f64,
        depth: usize,
        max_steps: usize,
        law: &mut HashMap<OccupancyState, f64>,
        by_len: &mut [f64],
        leftover: &mut f64,
    ) {
        for (target, w) in dtmc_transitions(params, state).unwrap().entries() {
            let p = prob * w;
            if target.is_in_s() {
                *law.entry(target.clone()).or_insert(0.0) += p;
                by_len[depth + 1] += p;
            } else if depth + 1 < max_steps {
                rec(
                    params,
                    target,
                    p,
                    depth + 1,
                    max_steps,
                    law,
                    by_len,
                    leftover,
                );
            } else {
                *leftover += p;
            }
        }
    }

    rec(
        params,
        start,
        1.0,
        0,
        max_steps,
        &mut law,
        &mut by_len,
        &mut leftover,
    );
    (law, by_len, leftover)
}

/// One-step expectation of an arbitrary function under the model kernel;
/// used to cross-check drift formulas.
pub(crate) fn one_step_expectation(
    params: &SwitchParams,
    state: &OccupancyState,
    f: impl Fn(&OccupancyState) -> f64,
) -> f64 {
    dtmc_transitions(params, state)
        .unwrap()
        .entries()
        .iter()
        .map(|(target, w)| w * f(target))
        .sum()
}
