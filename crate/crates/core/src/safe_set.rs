//! Certified safe-set expansion: add pairs whose exact supports are known
//! and that are reachable from, and can return to, the current safe set.

use crate::confidence::ConfidenceModel;
use crate::mdp::{Pair, StateActionSet};

/// Result of [`expand_safe_set`] with loop counters for termination checks.
#[derive(Clone, Debug)]
pub struct Expansion {
    pub z_safe: StateActionSet,
    pub outer_iterations: usize,
    /// Largest number of sweeps any single inner loop needed.
    pub max_inner_iterations: usize,
}

/// Expands `z_safe` by the largest set of candidate pairs (transferred
/// width below `τ/2`, nonnegative reward) that is reachable from `z_safe`,
/// returns to it, and is closed together with it. Supports are read from
/// the transferred rows.
pub fn expand_safe_set(z_safe: &StateActionSet, model: &ConfidenceModel, rewards: &[f64], tau: f64) -> Expansion {
    let (ns, na) = (z_safe.num_states(), z_safe.num_actions());
    let limit = ns * na + 1;
    let safe_states = z_safe.state_mask();
    let succ = |p: Pair| model.t_tilde(p).iter().map(|&(s, _)| s);

    let mut candidates: Vec<Pair> = (0..ns * na)
        .map(|i| Pair::from_index(i, na))
        .filter(|&p| !z_safe.contains(p) && model.eps_tilde(p) < tau / 2.0 && rewards[p.index(na)] >= 0.0)
        .collect();
    let mut outer = 0;
    let mut max_inner = 0;
    loop {
        outer += 1;
        assert!(outer <= limit, "safe-set expansion exceeded its iteration bound");

        // Reachable: grow from the safe states through candidate supports.
        let mut reach_states = safe_states.clone();
        let mut in_reach = vec![false; candidates.len()];
        let mut sweeps = 0;
        loop {
            sweeps += 1;
            let mut changed = false;
            for (k, &p) in candidates.iter().enumerate() {
                if !in_reach[k] && reach_states[p.s.0] {
                    in_reach[k] = true;
                    changed = true;
                    for s2 in succ(p) {
                        reach_states[s2.0] = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        max_inner = max_inner.max(sweeps);
        let reachable: Vec<Pair> = candidates.iter().zip(&in_reach).filter(|(_, &r)| r).map(|(&p, _)| p).collect();

        // Returnable: some successor leads back to the safe set.
        let mut ret_states = safe_states.clone();
        let mut in_ret = vec![false; reachable.len()];
        sweeps = 0;
        loop {
            sweeps += 1;
            let mut changed = false;
            for (k, &p) in reachable.iter().enumerate() {
                if !in_ret[k] && succ(p).any(|s2| ret_states[s2.0]) {
                    in_ret[k] = true;
                    ret_states[p.s.0] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        max_inner = max_inner.max(sweeps);
        let mut closed: Vec<Pair> = reachable.iter().zip(&in_ret).filter(|(_, &r)| r).map(|(&p, _)| p).collect();

        // Closed: drop pairs with a successor that has no remaining action.
        sweeps = 0;
        loop {
            sweeps += 1;
            let mut states = safe_states.clone();
            for p in &closed {
                states[p.s.0] = true;
            }
            let before = closed.len();
            closed.retain(|&p| succ(p).all(|s2| states[s2.0]));
            if closed.len() == before {
                break;
            }
        }
        max_inner = max_inner.max(sweeps);
        assert!(max_inner <= limit, "safe-set expansion exceeded its iteration bound");

        if closed.len() == candidates.len() {
            break;
        }
        candidates = closed;
    }
    let mut out = z_safe.clone();
    for p in candidates {
        out.insert(p);
    }
    Expansion { z_safe: out, outer_iterations: outer, max_inner_iterations: max_inner }
}
