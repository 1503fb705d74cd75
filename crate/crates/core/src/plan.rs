//! Optimistic planning over candidate transition sets, the goal/explore/
//! switch reward tables, discounted occupancy, and the optimistic goal set.

use std::cmp::Ordering;
use std::collections::VecDeque;

use crate::confidence::{Allowed, CandidateRow, CandidateSpec};
use crate::error::{Error, Result};
use crate::mdp::{ActionId, Pair, Policy, QTable, SparseRow, StateActionSet, StateId, Value, MAX_SWEEPS};

/// Rewards for one planning problem; `forbidden` pairs are worth `Bottom`.
#[derive(Clone, Debug)]
pub struct PlanningRewards {
    pub reward: Vec<f64>,
    pub forbidden: StateActionSet,
}

/// Which reward table to build.
#[derive(Clone, Copy, Debug)]
pub enum RewardKind<'a> {
    /// Base rewards, with `z_unsafe` forbidden.
    Goal { base: &'a [f64], z_unsafe: &'a StateActionSet },
    /// 1 on `z_explore`, 0 on the rest of `z_safe`, forbidden elsewhere.
    Explore { z_safe: &'a StateActionSet, z_explore: &'a StateActionSet },
    /// 1 on `z_goal`, 0 on the rest of `z_safe`, forbidden elsewhere.
    Switch { z_safe: &'a StateActionSet, z_goal: &'a StateActionSet },
}

pub fn build_planning_rewards(kind: RewardKind<'_>) -> PlanningRewards {
    match kind {
        RewardKind::Goal { base, z_unsafe } => PlanningRewards { reward: base.to_vec(), forbidden: z_unsafe.clone() },
        RewardKind::Explore { z_safe, z_explore: target } | RewardKind::Switch { z_safe, z_goal: target } => {
            let reward = (0..z_safe.num_states() * z_safe.num_actions())
                .map(|i| {
                    let p = Pair::from_index(i, z_safe.num_actions());
                    if target.contains(p) && z_safe.contains(p) {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            PlanningRewards { reward, forbidden: z_safe.complement() }
        }
    }
}

/// Greedy L1-ball maximization around a sparse center.
///
/// Moves `min(width/2, 1 - center(best))` mass onto `best` and takes it from
/// the other center entries in ascending value order, `Bottom` first.
/// Returns `Bottom` if some `Bottom` entry keeps positive mass.
fn shift_mass(center: &SparseRow, width: f64, best: StateId, values: &[Value], scratch: &mut Vec<(StateId, f64)>) -> Value {
    let Value::Finite(best_v) = values[best.0] else {
        return Value::Bottom;
    };
    if center.is_empty() {
        scratch.clear();
        scratch.push((best, 1.0));
        return Value::Finite(best_v);
    }
    let c_best: f64 = center.iter().filter(|&&(s, _)| s == best).map(|&(_, q)| q).sum();
    let mut budget = (width / 2.0).min(1.0 - c_best).max(0.0);
    scratch.clear();
    scratch.extend(center.iter().copied().filter(|&(s, _)| s != best));
    scratch.sort_by(|a, b| value_cmp(values[a.0 .0], values[b.0 .0]).then(a.0.cmp(&b.0)));
    let mut moved = 0.0;
    for e in scratch.iter_mut() {
        if budget <= 0.0 {
            break;
        }
        let take = e.1.min(budget);
        e.1 -= take;
        budget -= take;
        moved += take;
    }
    let mut acc = (c_best + moved) * best_v;
    for &(s, q) in scratch.iter() {
        if q <= 1e-15 {
            continue;
        }
        match values[s.0] {
            Value::Bottom => return Value::Bottom,
            Value::Finite(v) => acc += q * v,
        }
    }
    scratch.push((best, c_best + moved));
    Value::Finite(acc)
}

fn value_cmp(a: Value, b: Value) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

/// Highest-valued finite state among `states`, ties to the lowest index.
fn argmax_state(states: impl Iterator<Item = StateId>, values: &[Value]) -> Option<StateId> {
    let mut best: Option<(StateId, f64)> = None;
    for s in states {
        if let Value::Finite(v) = values[s.0] {
            if best.map_or(true, |(b, bv)| v > bv || (v == bv && s < b)) {
                best = Some((s, v));
            }
        }
    }
    best.map(|(s, _)| s)
}

/// Distribution within L1 distance `width` of `center`, supported in
/// `allowed`, maximizing the expectation of `values`. `None` stands for
/// `Bottom`: every allowed state is `Bottom`, or `Bottom` mass cannot be
/// moved away within the budget.
///
/// A center with mass outside `allowed` is projected onto it and
/// renormalized first.
pub fn inner_max(center: &[f64], width: f64, allowed: &[bool], values: &[Value]) -> Option<Vec<f64>> {
    let mut sparse: SparseRow =
        center.iter().enumerate().filter(|&(s, &q)| q > 0.0 && allowed[s]).map(|(s, &q)| (StateId(s), q)).collect();
    let mass: f64 = sparse.iter().map(|&(_, q)| q).sum();
    if mass > 0.0 {
        for e in &mut sparse {
            e.1 /= mass;
        }
    }
    let best = argmax_state((0..allowed.len()).filter(|&s| allowed[s]).map(StateId), values)?;
    let mut scratch = Vec::new();
    shift_mass(&sparse, width, best, values, &mut scratch).finite()?;
    let mut out = vec![0.0; center.len()];
    for (s, q) in scratch {
        out[s.0] += q;
    }
    Some(out)
}

/// Maximum expectation over the candidate set (see [`inner_max`]).
pub fn inner_max_value(center: &[f64], width: f64, allowed: &[bool], values: &[Value]) -> Value {
    match inner_max(center, width, allowed, values) {
        None => Value::Bottom,
        Some(q) => {
            let e = q.iter().zip(values).filter(|(&p, _)| p > 0.0).map(|(&p, v)| p * v.finite().unwrap_or(0.0)).sum();
            Value::Finite(e)
        }
    }
}

/// Optimistic Q, its greedy policy, and the maximizing transitions.
#[derive(Clone, Debug)]
pub struct OptimisticResult {
    pub q: QTable,
    pub policy: Policy,
    /// Per pair index; empty for `Bottom` pairs.
    pub opt_transitions: Vec<SparseRow>,
    pub sweeps: usize,
}

struct Bests {
    global: Option<StateId>,
    z0: Option<StateId>,
}

fn row_best(row: &CandidateRow, bests: &Bests, values: &[Value]) -> Option<StateId> {
    match row.allowed {
        Allowed::All => bests.global,
        Allowed::Z0 => bests.z0,
        Allowed::Center => argmax_state(row.center.iter().map(|&(s, _)| s), values),
    }
}

fn state_values(q: &QTable, out: &mut [Value]) {
    for (s, slot) in out.iter_mut().enumerate() {
        *slot = q.state_value(StateId(s));
    }
}

fn bests(spec: &CandidateSpec, values: &[Value]) -> Bests {
    Bests {
        global: argmax_state((0..spec.num_states).map(StateId), values),
        z0: argmax_state((0..spec.num_states).filter(|&s| spec.z0_states[s]).map(StateId), values),
    }
}

/// Fixed point of `Q(s,a) = R(s,a) + γ max_{T ∈ CI} Σ T(s') max_a' Q(s',a')`
/// with forbidden pairs at `Bottom`, to within `tol` in sup norm.
pub fn optimistic_value_iteration(
    spec: &CandidateSpec,
    rewards: &PlanningRewards,
    gamma: f64,
    tol: f64,
) -> Result<OptimisticResult> {
    let (ns, na) = (spec.num_states, spec.num_actions);
    let mut q = QTable::filled(ns, na, Value::Bottom);
    let active: Vec<Pair> = (0..ns * na)
        .map(|i| Pair::from_index(i, na))
        .filter(|&p| !rewards.forbidden.contains(p))
        .collect();
    for &p in &active {
        q.set(p, Value::Finite(0.0));
    }
    let stop = tol * (1.0 - gamma).max(f64::EPSILON);
    let mut values = vec![Value::Bottom; ns];
    let mut scratch = Vec::new();
    let mut sweeps = 0;
    loop {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps });
        }
        sweeps += 1;
        state_values(&q, &mut values);
        let b = bests(spec, &values);
        let mut delta: f64 = 0.0;
        let mut pattern_changed = false;
        for &p in &active {
            let row = spec.row(p);
            let next = match row_best(row, &b, &values) {
                None => Value::Bottom,
                Some(best) => match shift_mass(&row.center, row.width, best, &values, &mut scratch) {
                    Value::Bottom => Value::Bottom,
                    Value::Finite(e) => Value::Finite(rewards.reward[p.index(na)] + gamma * e),
                },
            };
            match (q.get(p), next) {
                (Value::Finite(old), Value::Finite(new)) => delta = delta.max((old - new).abs()),
                (Value::Bottom, Value::Bottom) => {}
                _ => pattern_changed = true,
            }
            q.set(p, next);
        }
        if !pattern_changed && delta <= stop {
            break;
        }
    }
    state_values(&q, &mut values);
    let b = bests(spec, &values);
    let mut opt_transitions = vec![Vec::new(); ns * na];
    for &p in &active {
        if q.get(p).is_bottom() {
            continue;
        }
        let row = spec.row(p);
        if let Some(best) = row_best(row, &b, &values) {
            if shift_mass(&row.center, row.width, best, &values, &mut scratch).finite().is_some() {
                let mut r: SparseRow = scratch.iter().copied().filter(|&(_, pr)| pr > 1e-15).collect();
                r.sort_by_key(|&(s, _)| s);
                opt_transitions[p.index(na)] = r;
            }
        }
    }
    let policy = q.greedy_policy();
    Ok(OptimisticResult { q, policy, opt_transitions, sweeps })
}

/// Discounted state-action occupancy truncated at a horizon.
#[derive(Clone, Debug)]
pub struct Occupancy {
    /// Per pair index.
    pub rho: Vec<f64>,
    pub horizon: usize,
}

impl Occupancy {
    pub fn total(&self) -> f64 {
        self.rho.iter().sum()
    }
}

/// `ρ(s,a) = (1-γ) Σ_{t=0..H} γ^t Pr(s_t = s, a_t = a)` under a
/// deterministic policy, by propagating the per-step state distribution.
pub fn occupancy_distribution(
    policy: &Policy,
    transitions: &[SparseRow],
    num_actions: usize,
    s_init: StateId,
    gamma: f64,
    horizon: usize,
) -> Occupancy {
    let ns = policy.actions.len();
    let mut rho = vec![0.0; ns * num_actions];
    let mut dist = vec![0.0; ns];
    let mut next = vec![0.0; ns];
    dist[s_init.0] = 1.0;
    let mut weight = 1.0 - gamma;
    for t in 0..=horizon {
        for s in 0..ns {
            if dist[s] == 0.0 {
                continue;
            }
            let p = Pair { s: StateId(s), a: policy.action(StateId(s)) };
            rho[p.index(num_actions)] += weight * dist[s];
        }
        if t == horizon {
            break;
        }
        next.iter_mut().for_each(|x| *x = 0.0);
        for s in 0..ns {
            if dist[s] == 0.0 {
                continue;
            }
            let p = Pair { s: StateId(s), a: policy.action(StateId(s)) };
            for &(s2, pr) in &transitions[p.index(num_actions)] {
                next[s2.0] += pr * dist[s];
            }
        }
        std::mem::swap(&mut dist, &mut next);
        weight *= gamma;
    }
    Occupancy { rho, horizon }
}

/// Pairs with positive occupancy after `horizon` steps. The positivity
/// pattern is tracked exactly (as reachability), so tiny probabilities
/// cannot underflow to zero.
pub fn goal_set_by_occupancy(result: &OptimisticResult, s_init: StateId, horizon: usize) -> StateActionSet {
    let (ns, na) = (result.q.num_states(), result.q.num_actions());
    let mut z = StateActionSet::empty(ns, na);
    let mut reached = vec![false; ns];
    reached[s_init.0] = true;
    for t in 0..=horizon {
        let mut next = reached.clone();
        for s in (0..ns).filter(|&s| reached[s]) {
            let p = Pair { s: StateId(s), a: result.policy.action(StateId(s)) };
            z.insert(p);
            if t < horizon {
                for &(s2, _) in &result.opt_transitions[p.index(na)] {
                    next[s2.0] = true;
                }
            }
        }
        if next == reached {
            break;
        }
        reached = next;
    }
    z
}

/// Pairs `(s, π(s))` for states reachable from `s_init` along the policy
/// and the maximizing transitions.
pub fn goal_set_by_closure(result: &OptimisticResult, s_init: StateId) -> StateActionSet {
    let (ns, na) = (result.q.num_states(), result.q.num_actions());
    let mut z = StateActionSet::empty(ns, na);
    let mut seen = vec![false; ns];
    let mut queue = VecDeque::from([s_init]);
    seen[s_init.0] = true;
    while let Some(s) = queue.pop_front() {
        let p = Pair { s, a: result.policy.action(s) };
        z.insert(p);
        for &(s2, _) in &result.opt_transitions[p.index(na)] {
            if !seen[s2.0] {
                seen[s2.0] = true;
                queue.push_back(s2);
            }
        }
    }
    z
}

/// Pairs the optimistic goal policy visits with positive probability from
/// `s_init`. Any horizon of at least `|S|` gives the infinite-horizon set.
pub fn compute_optimistic_goal_set(result: &OptimisticResult, s_init: StateId, horizon: usize) -> StateActionSet {
    let z = goal_set_by_closure(result, s_init);
    debug_assert!(horizon < result.q.num_states() || z == goal_set_by_occupancy(result, s_init, horizon));
    z
}

/// Greedy action among pairs that are not `Bottom`; `None` if all are.
pub fn best_finite_action(q: &QTable, s: StateId) -> Option<ActionId> {
    let a = q.greedy_action(s);
    (!q.get(Pair { s, a }).is_bottom()).then_some(a)
}
