//! Ground truth: the true safe set, the safe-optimal Q-function, the
//! sub-optimality metric, and brute-force checkers for small instances.
//!
//! The brute-force routines here are deliberately naive (enumeration,
//! linear solves) so that they stay independent of the fixed-point code
//! they are used to check.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{is_closed, is_communicating, value_iteration, ActionId, Mdp, Pair, Policy, QTable, StateActionSet, StateId, Value};

/// Default ε for the sub-optimality metric.
pub const DEFAULT_EPS_METRIC: f64 = 0.01;

/// Largest number of candidate additions [`brute_force_safe_expand`] accepts.
pub const SAFE_EXPAND_LIMIT: usize = 20;

/// States from which some policy restricted to `allowed` reaches `target`
/// with probability 1.
///
/// Iterated elimination: keep a surviving set `U`; an action is usable if it
/// is allowed and its whole support stays in `U`; shrink `U` to the states
/// that reach the target through usable actions; repeat until stable.
pub fn almost_sure_reach_set(mdp: &Mdp, allowed: &StateActionSet, target: &[bool]) -> Vec<bool> {
    let ns = mdp.num_states();
    let mut alive = vec![true; ns];
    loop {
        let usable = |p: Pair, alive: &[bool]| allowed.contains(p) && mdp.support(p).iter().all(|&(s2, _)| alive[s2.0]);
        // Backward reachability to the target through usable actions.
        let mut reach: Vec<bool> = (0..ns).map(|s| target[s]).collect();
        let mut changed = true;
        while changed {
            changed = false;
            for s in 0..ns {
                if reach[s] || !alive[s] {
                    continue;
                }
                let hit = (0..mdp.num_actions()).any(|a| {
                    let p = Pair::new(s, a);
                    usable(p, &alive) && mdp.support(p).iter().any(|&(s2, _)| reach[s2.0])
                });
                if hit {
                    reach[s] = true;
                    changed = true;
                }
            }
        }
        if reach == alive {
            return reach;
        }
        alive = reach;
    }
}

/// The true safe set together with the communicating check on it.
#[derive(Clone, Debug)]
pub struct TrueSafeSet {
    pub z_safe: StateActionSet,
    /// Whether the returned set is communicating; a `false` here means the
    /// environment violates the communicating-safe-set assumption.
    pub communicating: bool,
}

/// Checks that `z0` is a nonempty safe, communicating set containing the
/// initial state.
pub fn check_initial_safe_set(mdp: &Mdp, z0: &StateActionSet) -> Result<()> {
    if !z0.contains_state(mdp.s_init) {
        return Err(Error::InitialSafeSet("initial state has no action in Z0".into()));
    }
    if let Some(p) = z0.iter().find(|&p| mdp.reward(p) < 0.0) {
        return Err(Error::InitialSafeSet(format!("pair {p} has negative reward")));
    }
    if !is_closed(z0, mdp) {
        return Err(Error::InitialSafeSet("not closed".into()));
    }
    if !is_communicating(z0, mdp) {
        return Err(Error::InitialSafeSet("not communicating".into()));
    }
    Ok(())
}

/// Maximal set of nonnegative-reward pairs from which a probability-1
/// return to `z0` exists without ever taking a negative-reward pair,
/// restricted to the states it lets the agent reach from `s_init`.
pub fn compute_true_safe_set(mdp: &Mdp, z0: &StateActionSet) -> Result<TrueSafeSet> {
    check_initial_safe_set(mdp, z0)?;
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let nonneg = StateActionSet::from_fn(ns, na, |p| mdp.reward(p) >= 0.0);
    let target = z0.state_mask();
    let returnable = almost_sure_reach_set(mdp, &nonneg, &target);
    let returning = StateActionSet::from_fn(ns, na, |p| {
        z0.contains(p) || (mdp.reward(p) >= 0.0 && mdp.support(p).iter().all(|&(s2, _)| returnable[s2.0]))
    });
    // States entered only through pairs outside the set are never visited
    // by a safe policy; dropping them keeps the set closed.
    let mut reached = vec![false; ns];
    reached[mdp.s_init.0] = true;
    let mut stack = vec![mdp.s_init];
    while let Some(s) = stack.pop() {
        for a in returning.actions_of(s) {
            for &(s2, _) in mdp.support(Pair { s, a }) {
                if !reached[s2.0] {
                    reached[s2.0] = true;
                    stack.push(s2);
                }
            }
        }
    }
    let z_safe = StateActionSet::from_fn(ns, na, |p| reached[p.s.0] && returning.contains(p));
    let communicating = is_communicating(&z_safe, mdp);
    Ok(TrueSafeSet { z_safe, communicating })
}

/// Optimal Q over policies confined to `z_safe`.
pub fn safe_optimal_q(mdp: &Mdp, z_safe: &StateActionSet, tol: f64) -> Result<QTable> {
    value_iteration(mdp, z_safe, tol)
}

/// `Q(s,a) < max_a' Q(s,a') - eps`, with `Bottom` treated as -inf.
pub fn is_eps_suboptimal(q: &QTable, s: StateId, a: ActionId, eps: f64) -> bool {
    match (q.get(Pair { s, a }), q.state_value(s)) {
        (_, Value::Bottom) => false,
        (Value::Bottom, Value::Finite(_)) => true,
        (Value::Finite(v), Value::Finite(best)) => v < best - eps,
    }
}

pub fn count_eps_suboptimal_steps(trace: &[(StateId, ActionId)], q: &QTable, eps: f64) -> usize {
    trace.iter().filter(|&&(s, a)| is_eps_suboptimal(q, s, a, eps)).count()
}

/// Maximum expected next value over the candidate set
/// `{q : ||q - row||_1 <= width, supp(q) ⊆ allowed}` discretized to
/// multiples of `grid`. Exhaustive; meant for a handful of successors.
///
/// `row` is indexed by successor position, aligned with `allowed` and
/// `next_values` (entries outside `allowed` must be zero). Returns -inf when
/// every feasible point puts mass on a `Bottom` entry.
pub fn brute_force_candidate_max(row: &[f64], width: f64, allowed: &[bool], next_values: &[Value], grid: f64) -> f64 {
    let idx: Vec<usize> = (0..row.len()).filter(|&i| allowed[i]).collect();
    let steps = (1.0 / grid).round() as i64;
    let slack = 1e-9;
    // Mass of the center outside the allowed set is always removed.
    let outside: f64 = (0..row.len()).filter(|&i| !allowed[i]).map(|i| row[i]).sum();
    let mut best = f64::NEG_INFINITY;

    fn recurse(
        k: usize,
        remaining: i64,
        l1: f64,
        value: f64,
        ctx: &(&[usize], &[f64], &[Value], f64, f64, f64),
        best: &mut f64,
    ) {
        let (idx, row, vals, grid, width, slack) = *ctx;
        if l1 > width + slack {
            return;
        }
        if k + 1 == idx.len() {
            let q = remaining as f64 * grid;
            let i = idx[k];
            let l1 = l1 + (q - row[i]).abs();
            if l1 > width + slack {
                return;
            }
            let v = match vals[i] {
                _ if q == 0.0 => value,
                Value::Bottom => return,
                Value::Finite(x) => value + q * x,
            };
            if v > *best {
                *best = v;
            }
            return;
        }
        for units in 0..=remaining {
            let q = units as f64 * grid;
            let i = idx[k];
            let v = match vals[i] {
                _ if units == 0 => value,
                Value::Bottom => continue,
                Value::Finite(x) => value + q * x,
            };
            recurse(k + 1, remaining - units, l1 + (q - row[i]).abs(), v, ctx, best);
        }
    }

    if idx.is_empty() {
        return best;
    }
    let ctx = (&idx[..], row, next_values, grid, width, slack);
    recurse(0, steps, outside, 0.0, &ctx, &mut best);
    best
}

/// Reach probabilities to `target` under a fixed policy, by linear solve.
pub fn reach_probabilities(mdp: &Mdp, policy: &Policy, target: &[bool]) -> Vec<f64> {
    let ns = mdp.num_states();
    // States with any chance of reaching the target.
    let mut can = target.to_vec();
    let mut changed = true;
    while changed {
        changed = false;
        for s in 0..ns {
            if !can[s] && mdp.support(Pair { s: StateId(s), a: policy.action(StateId(s)) }).iter().any(|&(s2, _)| can[s2.0]) {
                can[s] = true;
                changed = true;
            }
        }
    }
    let unknowns: Vec<usize> = (0..ns).filter(|&s| can[s] && !target[s]).collect();
    let mut out: Vec<f64> = (0..ns).map(|s| if target[s] { 1.0 } else { 0.0 }).collect();
    if unknowns.is_empty() {
        return out;
    }
    let pos: Vec<Option<usize>> = {
        let mut pos = vec![None; ns];
        for (k, &s) in unknowns.iter().enumerate() {
            pos[s] = Some(k);
        }
        pos
    };
    let n = unknowns.len();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for (k, &s) in unknowns.iter().enumerate() {
        let row = mdp.row(Pair { s: StateId(s), a: policy.action(StateId(s)) });
        for (s2, &p) in row.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            if target[s2] {
                b[k] += p;
            } else if let Some(j) = pos[s2] {
                a[(k, j)] -= p;
            }
        }
    }
    let x = a.lu().solve(&b).expect("reach system is nonsingular on states that can reach the target");
    for (k, &s) in unknowns.iter().enumerate() {
        out[s] = x[k];
    }
    out
}

/// Calls `f` on every deterministic policy that picks, at each state, one of
/// `choices[s]` (or action 0 for states with no choice). Exponential.
fn for_each_policy(num_states: usize, choices: &[Vec<ActionId>], mut f: impl FnMut(&Policy)) {
    let mut policy = Policy::constant(num_states, ActionId(0));
    let mut digits = vec![0usize; num_states];
    for s in 0..num_states {
        if let Some(&a) = choices[s].first() {
            policy.actions[s] = a;
        }
    }
    loop {
        f(&policy);
        let mut s = 0;
        loop {
            if s == num_states {
                return;
            }
            let n = choices[s].len().max(1);
            digits[s] += 1;
            if digits[s] < n {
                policy.actions[s] = choices[s][digits[s]];
                break;
            }
            digits[s] = 0;
            if let Some(&a) = choices[s].first() {
                policy.actions[s] = a;
            }
            s += 1;
        }
    }
}

/// Brute-force almost-sure reachability: enumerate deterministic policies
/// over `allowed`, solve for reach probabilities, keep states that reach
/// the target with probability 1 under some policy.
pub fn almost_sure_reach_by_enumeration(mdp: &Mdp, allowed: &StateActionSet, target: &[bool]) -> Vec<bool> {
    let ns = mdp.num_states();
    // A state without allowed actions cannot move; model that by keeping
    // it out of every policy's reach (probability 0 unless it is a target).
    let choices: Vec<Vec<ActionId>> = (0..ns).map(|s| allowed.actions_of(StateId(s)).collect()).collect();
    let stuck: Vec<bool> = (0..ns).map(|s| choices[s].is_empty()).collect();
    let mut result: Vec<bool> = target.to_vec();
    for_each_policy(ns, &choices, |policy| {
        let probs = reach_probabilities_with_stuck(mdp, policy, target, &stuck);
        for s in 0..ns {
            if probs[s] > 1.0 - 1e-9 {
                result[s] = true;
            }
        }
    });
    result
}

fn reach_probabilities_with_stuck(mdp: &Mdp, policy: &Policy, target: &[bool], stuck: &[bool]) -> Vec<f64> {
    // Redirect stuck non-target states to an absorbing self-loop.
    let ns = mdp.num_states();
    let na = mdp.num_actions();
    let mut rows = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            let p = Pair::new(s, a);
            if stuck[s] && !target[s] {
                rows.push(vec![(StateId(s), 1.0)]);
            } else {
                rows.push(mdp.support(p).clone());
            }
        }
    }
    let patched = Mdp::from_rows(ns, na, &rows, vec![0.0; ns * na], 0.5, mdp.s_init, mdp.tau).expect("patched shape");
    reach_probabilities(&patched, policy, target)
}

/// Communicating check by enumeration: for every destination state of `z`
/// some single policy in Π(Z) reaches it from every state of `z` with
/// probability 1.
pub fn communicating_by_enumeration(z: &StateActionSet, mdp: &Mdp) -> bool {
    if z.is_empty() || !is_closed(z, mdp) {
        return false;
    }
    let ns = mdp.num_states();
    let choices: Vec<Vec<ActionId>> = (0..ns).map(|s| z.actions_of(StateId(s)).collect()).collect();
    let states = z.states();
    states.iter().all(|&dest| {
        let target: Vec<bool> = (0..ns).map(|s| s == dest.0).collect();
        let mut found = false;
        for_each_policy(ns, &choices, |policy| {
            if found {
                return;
            }
            // The return must leave `dest` too, so check from each state
            // including `dest` via one step of the policy.
            let probs = reach_probabilities(mdp, policy, &target);
            let from_dest: f64 = mdp
                .support(Pair { s: dest, a: policy.action(dest) })
                .iter()
                .map(|&(s2, p)| p * probs[s2.0])
                .sum();
            if states.iter().all(|s| probs[s.0] > 1.0 - 1e-9) && from_dest > 1.0 - 1e-9 {
                found = true;
            }
        });
        found
    })
}

/// Largest closed, communicating, nonnegative-reward superset of `z_init`
/// that only adds pairs from `tight`, by exhaustive subset search.
pub fn brute_force_safe_expand(mdp: &Mdp, z_init: &StateActionSet, tight: &StateActionSet) -> Result<StateActionSet> {
    let candidates: Vec<Pair> = tight.iter().filter(|&p| !z_init.contains(p) && mdp.reward(p) >= 0.0).collect();
    if candidates.len() > SAFE_EXPAND_LIMIT {
        return Err(Error::InstanceTooLarge { pairs: candidates.len(), limit: SAFE_EXPAND_LIMIT });
    }
    let mut best = z_init.clone();
    let mut best_len = 0usize;
    for mask in 1u64..(1u64 << candidates.len()) {
        let size = mask.count_ones() as usize;
        if size <= best_len {
            continue;
        }
        let mut z = z_init.clone();
        for (i, &p) in candidates.iter().enumerate() {
            if mask & (1 << i) != 0 {
                z.insert(p);
            }
        }
        if is_communicating(&z, mdp) {
            best = z;
            best_len = size;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::DEFAULT_VI_TOL;

    fn chain() -> Mdp {
        // s2 -> s1 -> s0 (absorbing), single action.
        let rows = vec![vec![(StateId(0), 1.0)], vec![(StateId(0), 1.0)], vec![(StateId(1), 1.0)]];
        Mdp::from_rows(3, 1, &rows, vec![0.0; 3], 0.9, StateId(0), 1.0).unwrap()
    }

    /// s0: a0 self-loop, a1 -> {s0 .5, s2 .5}; s2 absorbing trap; s1 unused.
    fn trap() -> Mdp {
        let rows = vec![
            vec![(StateId(0), 1.0)],
            vec![(StateId(1), 0.5), (StateId(2), 0.5)],
            vec![(StateId(0), 1.0)],
            vec![(StateId(0), 1.0)],
            vec![(StateId(2), 1.0)],
            vec![(StateId(2), 1.0)],
        ];
        Mdp::from_rows(3, 2, &rows, vec![0.0; 6], 0.9, StateId(0), 0.5).unwrap()
    }

    #[test]
    fn reach_chain() {
        let mdp = chain();
        let all = StateActionSet::full(3, 1);
        let target = vec![true, false, false];
        assert_eq!(almost_sure_reach_set(&mdp, &all, &target), vec![true, true, true]);
    }

    #[test]
    fn reach_excludes_trap_source() {
        // Target {s1}; from s0 the only way there is a coin flip that may
        // land in the absorbing trap s2.
        let mdp = trap();
        let target = vec![false, true, false];
        let gamble = StateActionSet::from_pairs(3, 2, [Pair::new(0, 1), Pair::new(2, 0), Pair::new(2, 1)]);
        let got = almost_sure_reach_set(&mdp, &gamble, &target);
        assert_eq!(got, vec![false, true, false]);
        assert_eq!(got, almost_sure_reach_by_enumeration(&mdp, &gamble, &target));
        let full = StateActionSet::full(3, 2);
        assert_eq!(almost_sure_reach_set(&mdp, &full, &target), vec![false, true, false]);
        // With target {s0} every state but the trap returns surely.
        let home = vec![true, false, false];
        assert_eq!(almost_sure_reach_set(&mdp, &full, &home), vec![true, true, false]);
    }

    #[test]
    fn true_safe_set_all_nonnegative_communicating() {
        let rows = vec![
            vec![(StateId(0), 1.0)],
            vec![(StateId(1), 1.0)],
            vec![(StateId(0), 1.0)],
            vec![(StateId(1), 1.0)],
        ];
        let mdp = Mdp::from_rows(2, 2, &rows, vec![0.0, 0.1, 0.2, 0.0], 0.9, StateId(0), 1.0).unwrap();
        let z0 = StateActionSet::from_pairs(2, 2, [Pair::new(0, 0)]);
        let t = compute_true_safe_set(&mdp, &z0).unwrap();
        assert_eq!(t.z_safe, StateActionSet::full(2, 2));
        assert!(t.communicating);

        let neg = mdp.with_rewards(vec![0.0, 0.1, -0.2, 0.0]).unwrap();
        let t = compute_true_safe_set(&neg, &z0).unwrap();
        assert!(!t.z_safe.contains(Pair::new(1, 0)));
    }

    #[test]
    fn initial_set_must_be_valid() {
        let mdp = trap();
        let leaky = StateActionSet::from_pairs(3, 2, [Pair::new(0, 1)]);
        assert!(matches!(compute_true_safe_set(&mdp, &leaky), Err(Error::InitialSafeSet(_))));
    }

    #[test]
    fn safe_q_examples() {
        let mdp = Mdp::new(1, 1, vec![1.0], vec![0.5], 0.9, StateId(0), 1.0).unwrap();
        let z = StateActionSet::full(1, 1);
        let q = safe_optimal_q(&mdp, &z, DEFAULT_VI_TOL).unwrap();
        assert!((q.get(Pair::new(0, 0)).finite().unwrap() - 5.0).abs() < 1e-7);
        let q0 = safe_optimal_q(&mdp.with_gamma(0.0), &z, DEFAULT_VI_TOL).unwrap();
        assert_eq!(q0.get(Pair::new(0, 0)), Value::Finite(0.5));
    }

    #[test]
    fn suboptimal_counting() {
        let mut q = QTable::filled(1, 3, Value::Finite(1.0));
        q.set(Pair::new(0, 1), Value::Finite(0.98));
        q.set(Pair::new(0, 2), Value::Bottom);
        let s = StateId(0);
        assert_eq!(count_eps_suboptimal_steps(&[(s, ActionId(0)), (s, ActionId(0))], &q, 0.01), 0);
        assert_eq!(count_eps_suboptimal_steps(&[(s, ActionId(1)), (s, ActionId(0))], &q, 0.01), 1);
        assert_eq!(count_eps_suboptimal_steps(&[(s, ActionId(2))], &q, 0.01), 1);
        let dead = QTable::filled(1, 1, Value::Bottom);
        assert_eq!(count_eps_suboptimal_steps(&[(s, ActionId(0))], &dead, 0.01), 0);
    }

    #[test]
    fn candidate_max_examples() {
        let vals = [Value::Finite(1.0), Value::Finite(0.0)];
        let all = [true, true];
        let zero = brute_force_candidate_max(&[0.5, 0.5], 0.0, &all, &vals, 0.01);
        assert!((zero - 0.5).abs() < 1e-9);
        let mid = brute_force_candidate_max(&[0.5, 0.5], 0.2, &all, &vals, 0.01);
        assert!((mid - 0.6).abs() < 0.01 + 1e-9);
        let vals3 = [Value::Finite(0.2), Value::Finite(0.9), Value::Finite(0.4)];
        let wide = brute_force_candidate_max(&[1.0, 0.0, 0.0], 2.0, &[true, true, false], &vals3, 0.1);
        assert!((wide - 0.9).abs() < 1e-9);
    }

    #[test]
    fn safe_expand_examples() {
        // s0: a0 self-loop, a1 -> s1; s1: a0 -> s0, a1 -> s1.
        let rows = vec![
            vec![(StateId(0), 1.0)],
            vec![(StateId(1), 1.0)],
            vec![(StateId(0), 1.0)],
            vec![(StateId(1), 1.0)],
        ];
        let mdp = Mdp::from_rows(2, 2, &rows, vec![0.0; 4], 0.9, StateId(0), 1.0).unwrap();
        let z_init = StateActionSet::from_pairs(2, 2, [Pair::new(0, 0)]);
        assert_eq!(brute_force_safe_expand(&mdp, &z_init, &StateActionSet::empty(2, 2)).unwrap(), z_init);
        let tight = StateActionSet::from_pairs(2, 2, [Pair::new(0, 1), Pair::new(1, 0)]);
        let got = brute_force_safe_expand(&mdp, &z_init, &tight).unwrap();
        assert_eq!(got, StateActionSet::from_pairs(2, 2, [Pair::new(0, 0), Pair::new(0, 1), Pair::new(1, 0)]));
        let half = StateActionSet::from_pairs(2, 2, [Pair::new(0, 1)]);
        assert_eq!(brute_force_safe_expand(&mdp, &z_init, &half).unwrap(), z_init);
    }

    #[test]
    fn communicating_oracle_agrees_on_small_cases() {
        let mdp = trap();
        let z = StateActionSet::from_pairs(3, 2, [Pair::new(0, 0)]);
        assert!(communicating_by_enumeration(&z, &mdp));
        let islands = StateActionSet::from_pairs(3, 2, [Pair::new(0, 0), Pair::new(2, 0)]);
        assert!(!communicating_by_enumeration(&islands, &mdp));
        assert_eq!(is_communicating(&islands, &mdp), false);
    }
}
