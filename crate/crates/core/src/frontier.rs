//! Goal planning against the certified sets and the choice of safe pairs
//! whose exploration can certify the goal path's edge.

use crate::confidence::{AnalogyOracle, CandidateSpec, ConfidenceModel};
use crate::error::{Error, Result};
use crate::mdp::{edge_pairs, ActionId, Pair, StateActionSet, StateId};
use crate::plan::{build_planning_rewards, compute_optimistic_goal_set, optimistic_value_iteration, OptimisticResult, RewardKind};

/// Output of [`compute_explore_set`].
#[derive(Clone, Debug)]
pub struct ExploreSearch {
    pub z_explore: StateActionSet,
    /// Every pair examined on a candidate return path.
    pub visited: StateActionSet,
    pub layers: usize,
}

/// Breadth-first search over the return paths of `z_edge`.
///
/// A pair whose transferred width is at least `τ/2` contributes its safe
/// analogs with `Δ ≤ τ/4` to the explore set; a tight pair passes its
/// successors' unexamined pairs to the next layer. Stops at the first layer
/// that yields explore pairs or when the frontier empties.
pub fn compute_explore_set(
    z_edge: &StateActionSet,
    model: &ConfidenceModel,
    analogy: &AnalogyOracle,
    z_safe: &StateActionSet,
    z_unsafe: &StateActionSet,
    tau: f64,
) -> ExploreSearch {
    let (ns, na) = (z_safe.num_states(), z_safe.num_actions());
    let mut z_explore = StateActionSet::empty(ns, na);
    let mut visited = StateActionSet::empty(ns, na);
    let mut layer: Vec<Pair> = z_edge.iter().collect();
    let mut queued = z_edge.clone();
    let mut layers = 0;
    while !layer.is_empty() && z_explore.is_empty() {
        layers += 1;
        let mut next = Vec::new();
        for &p in &layer {
            visited.insert(p);
            if model.eps_tilde(p) >= tau / 2.0 {
                for (q, d) in analogy.analogs(p) {
                    if d <= tau / 4.0 && z_safe.contains(q) {
                        z_explore.insert(q);
                    }
                }
            } else {
                for &(s2, _) in model.t_tilde(p) {
                    for a in 0..na {
                        let q = Pair { s: s2, a: ActionId(a) };
                        if !queued.contains(q) && !z_safe.contains(q) && !z_unsafe.contains(q) {
                            queued.insert(q);
                            next.push(q);
                        }
                    }
                }
            }
        }
        next.sort();
        layer = next;
    }
    ExploreSearch { z_explore, visited, layers }
}

/// Inputs shared by every goal-planning round.
#[derive(Clone, Copy, Debug)]
pub struct FrontierInputs<'a> {
    pub model: &'a ConfidenceModel,
    pub spec: &'a CandidateSpec,
    pub analogy: &'a AnalogyOracle,
    pub z_safe: &'a StateActionSet,
    pub rewards: &'a [f64],
    pub gamma: f64,
    pub tau: f64,
    pub s_init: StateId,
    pub tol: f64,
    /// Search from every edge of the safe set instead of the goal path's.
    pub undirected: bool,
}

/// Output of [`plan_goal_and_frontier`].
#[derive(Clone, Debug)]
pub struct FrontierPlan {
    pub goal: OptimisticResult,
    pub z_goal: StateActionSet,
    pub z_explore: StateActionSet,
    pub z_unsafe: StateActionSet,
    /// Rounds in which an edge was declared unsafe.
    pub failures: usize,
}

/// Plans the optimistic goal policy avoiding `z_unsafe`. If its path leaves
/// the safe set, looks for explore pairs along the path's edge; an edge
/// with no learnable return path is added to the unsafe set and the goal is
/// replanned.
///
/// On return either the goal set lies inside the safe set or the explore
/// set is nonempty, never both.
pub fn plan_goal_and_frontier(inputs: FrontierInputs<'_>, z_unsafe: &StateActionSet) -> Result<FrontierPlan> {
    let z_safe = inputs.z_safe;
    let (ns, na) = (z_safe.num_states(), z_safe.num_actions());
    let mut z_unsafe = z_unsafe.clone();
    let mut failures = 0;
    loop {
        if (0..na).all(|a| z_unsafe.contains(Pair::new(inputs.s_init.0, a))) {
            return Err(Error::NoSafePlan);
        }
        let rewards = build_planning_rewards(RewardKind::Goal { base: inputs.rewards, z_unsafe: &z_unsafe });
        let goal = optimistic_value_iteration(inputs.spec, &rewards, inputs.gamma, inputs.tol)?;
        let z_goal = compute_optimistic_goal_set(&goal, inputs.s_init, ns);
        if z_goal.is_subset(z_safe) {
            return Ok(FrontierPlan { goal, z_goal, z_explore: StateActionSet::empty(ns, na), z_unsafe, failures });
        }
        let z_edge = if inputs.undirected {
            edge_pairs(z_safe).difference(&z_unsafe)
        } else {
            let safe_states = z_safe.state_mask();
            let mut e = z_goal.difference(z_safe);
            let leaving = StateActionSet::from_fn(ns, na, |p| e.contains(p) && safe_states[p.s.0]);
            if !leaving.is_empty() {
                e = leaving;
            }
            e
        };
        let search = compute_explore_set(&z_edge, inputs.model, inputs.analogy, z_safe, &z_unsafe, inputs.tau);
        if !search.z_explore.is_empty() {
            return Ok(FrontierPlan { goal, z_goal, z_explore: search.z_explore, z_unsafe, failures });
        }
        z_unsafe.union_with(&z_edge);
        failures += 1;
        assert!(failures <= ns * na, "unsafe set grew past the number of pairs");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confidence::AlphaFn;
    use crate::mdp::{Mdp, StateId};
    use std::sync::Arc;

    /// s0 (safe hub, a0 self-loop), a1 -> s1 (dead end: both actions loop to s2),
    /// s2 absorbing with reward 1 on a0. a1 at s2 has a negative reward.
    fn dead_end() -> Mdp {
        let rows = vec![
            vec![(StateId(0), 1.0)],
            vec![(StateId(1), 1.0)],
            vec![(StateId(2), 1.0)],
            vec![(StateId(2), 1.0)],
            vec![(StateId(2), 1.0)],
            vec![(StateId(2), 1.0)],
        ];
        Mdp::from_rows(3, 2, &rows, vec![0.0, 0.0, 0.0, 0.0, 1.0, -1.0], 0.9, StateId(0), 1.0).unwrap()
    }

    #[test]
    fn goal_inside_safe_set_returns_immediately() {
        let mdp = dead_end();
        let analogy = AnalogyOracle::identity(3, 2);
        let mut model = ConfidenceModel::new(&analogy, 5, 0.1, 2).unwrap();
        for p in mdp.pairs() {
            model.set_known_row(p, mdp.support(p).clone());
        }
        model.transfer(&analogy);
        let z_safe = StateActionSet::from_pairs(3, 2, [Pair::new(0, 0)]);
        let z_unsafe = StateActionSet::from_pairs(3, 2, [Pair::new(0, 1)]);
        let spec = CandidateSpec::build(&model, &z_safe, 1.0);
        let inputs = FrontierInputs {
            model: &model,
            spec: &spec,
            analogy: &analogy,
            z_safe: &z_safe,
            rewards: mdp.rewards(),
            gamma: 0.9,
            tau: 1.0,
            s_init: StateId(0),
            tol: 1e-9,
            undirected: false,
        };
        let plan = plan_goal_and_frontier(inputs, &z_unsafe).unwrap();
        assert!(plan.z_explore.is_empty());
        assert_eq!(plan.z_unsafe, z_unsafe);
        assert_eq!(plan.z_goal, StateActionSet::from_pairs(3, 2, [Pair::new(0, 0)]));
    }

    #[test]
    fn dead_end_edge_becomes_unsafe() {
        let mdp = dead_end();
        let analogy = AnalogyOracle::identity(3, 2);
        let mut model = ConfidenceModel::new(&analogy, 5, 0.1, 2).unwrap();
        for p in mdp.pairs() {
            model.set_known_row(p, mdp.support(p).clone());
        }
        model.transfer(&analogy);
        let z_safe = StateActionSet::from_pairs(3, 2, [Pair::new(0, 0)]);
        let z_unsafe = mdp.negative_reward_pairs();
        let spec = CandidateSpec::build(&model, &z_safe, 1.0);
        let inputs = FrontierInputs {
            model: &model,
            spec: &spec,
            analogy: &analogy,
            z_safe: &z_safe,
            rewards: mdp.rewards(),
            gamma: 0.9,
            tau: 1.0,
            s_init: StateId(0),
            tol: 1e-9,
            undirected: false,
        };
        let plan = plan_goal_and_frontier(inputs, &z_unsafe).unwrap();
        assert!(plan.z_explore.is_empty());
        assert!(plan.z_unsafe.contains(Pair::new(0, 1)));
        assert!(plan.failures >= 1);
        assert!(plan.z_goal.is_subset(&z_safe));
    }

    #[test]
    fn loose_edge_yields_safe_analog() {
        // s0 safe with two actions; (0,1) is loose and analogous to (0,0).
        let links = vec![vec![], vec![(Pair::new(0, 0), 0.0)], vec![], vec![]];
        let alpha: Arc<AlphaFn> = Arc::new(|_, s2, _| Some(s2));
        let analogy = AnalogyOracle::new(2, 2, links, alpha);
        let model = ConfidenceModel::new(&analogy, 5, 0.1, 2).unwrap();
        let z_safe = StateActionSet::from_pairs(2, 2, [Pair::new(0, 0)]);
        let z_edge = StateActionSet::from_pairs(2, 2, [Pair::new(0, 1)]);
        let out = compute_explore_set(&z_edge, &model, &analogy, &z_safe, &StateActionSet::empty(2, 2), 0.3);
        assert_eq!(out.z_explore, z_safe);
        assert!(out.visited.contains(Pair::new(0, 1)));
    }
}
