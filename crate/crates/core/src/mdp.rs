//! Dense tabular MDPs, state-action sets, and the set predicates
//! (closed, communicating, edge) everything else is built on.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum tolerance used by [`validate_mdp`].
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Default sup-norm tolerance for value iteration.
pub const DEFAULT_VI_TOL: f64 = 1e-8;
/// Sweep cap for every value-iteration loop in the crate.
pub const MAX_SWEEPS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionId(pub usize);

/// A state-action pair. Ordered by (state, action), which is also the
/// iteration order used wherever determinism matters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pair {
    pub s: StateId,
    pub a: ActionId,
}

impl Pair {
    pub fn new(s: usize, a: usize) -> Self {
        Pair { s: StateId(s), a: ActionId(a) }
    }

    #[inline]
    pub fn index(self, num_actions: usize) -> usize {
        self.s.0 * num_actions + self.a.0
    }

    #[inline]
    pub fn from_index(idx: usize, num_actions: usize) -> Self {
        Pair::new(idx / num_actions, idx % num_actions)
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.s.0, self.a.0)
    }
}

/// A sparse probability row: `(successor, probability)` with strictly
/// positive probabilities, sorted by successor.
pub type SparseRow = Vec<(StateId, f64)>;

/// Extended-real value. `Bottom` is the forbidden (-inf) marker and orders
/// below every finite value; it never enters floating-point arithmetic.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub enum Value {
    Bottom,
    Finite(f64),
}

impl Value {
    pub fn finite(self) -> Option<f64> {
        match self {
            Value::Bottom => None,
            Value::Finite(v) => Some(v),
        }
    }

    pub fn is_bottom(self) -> bool {
        matches!(self, Value::Bottom)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bottom => write!(f, "-inf"),
            Value::Finite(v) => write!(f, "{v}"),
        }
    }
}

/// Membership over S x A.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateActionSet {
    num_states: usize,
    num_actions: usize,
    members: Vec<bool>,
}

impl fmt::Debug for StateActionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(|p| (p.s.0, p.a.0))).finish()
    }
}

impl StateActionSet {
    pub fn empty(num_states: usize, num_actions: usize) -> Self {
        StateActionSet { num_states, num_actions, members: vec![false; num_states * num_actions] }
    }

    pub fn full(num_states: usize, num_actions: usize) -> Self {
        StateActionSet { num_states, num_actions, members: vec![true; num_states * num_actions] }
    }

    pub fn from_pairs(num_states: usize, num_actions: usize, pairs: impl IntoIterator<Item = Pair>) -> Self {
        let mut set = Self::empty(num_states, num_actions);
        for p in pairs {
            set.insert(p);
        }
        set
    }

    pub fn from_fn(num_states: usize, num_actions: usize, mut f: impl FnMut(Pair) -> bool) -> Self {
        let members = (0..num_states * num_actions).map(|i| f(Pair::from_index(i, num_actions))).collect();
        StateActionSet { num_states, num_actions, members }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn contains(&self, p: Pair) -> bool {
        self.members[p.index(self.num_actions)]
    }

    /// `s ∈ Z` in the state sense: some action of `s` is a member.
    pub fn contains_state(&self, s: StateId) -> bool {
        let base = s.0 * self.num_actions;
        self.members[base..base + self.num_actions].iter().any(|&m| m)
    }

    /// Returns true if the pair was newly inserted.
    pub fn insert(&mut self, p: Pair) -> bool {
        let slot = &mut self.members[p.index(self.num_actions)];
        let fresh = !*slot;
        *slot = true;
        fresh
    }

    pub fn remove(&mut self, p: Pair) -> bool {
        let slot = &mut self.members[p.index(self.num_actions)];
        let had = *slot;
        *slot = false;
        had
    }

    pub fn len(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.members.iter().any(|&m| m)
    }

    /// Members in ascending (state, action) order.
    pub fn iter(&self) -> impl Iterator<Item = Pair> + '_ {
        let na = self.num_actions;
        self.members.iter().enumerate().filter(|(_, &m)| m).map(move |(i, _)| Pair::from_index(i, na))
    }

    pub fn actions_of(&self, s: StateId) -> impl Iterator<Item = ActionId> + '_ {
        let base = s.0 * self.num_actions;
        (0..self.num_actions).filter(move |&a| self.members[base + a]).map(ActionId)
    }

    /// Membership per state (`s ∈ Z`).
    pub fn state_mask(&self) -> Vec<bool> {
        (0..self.num_states).map(|s| self.contains_state(StateId(s))).collect()
    }

    pub fn states(&self) -> Vec<StateId> {
        (0..self.num_states).map(StateId).filter(|&s| self.contains_state(s)).collect()
    }

    pub fn is_subset(&self, other: &StateActionSet) -> bool {
        self.members.iter().zip(&other.members).all(|(&a, &b)| !a || b)
    }

    pub fn intersects(&self, other: &StateActionSet) -> bool {
        self.members.iter().zip(&other.members).any(|(&a, &b)| a && b)
    }

    pub fn union_with(&mut self, other: &StateActionSet) {
        for (a, &b) in self.members.iter_mut().zip(&other.members) {
            *a |= b;
        }
    }

    pub fn difference(&self, other: &StateActionSet) -> StateActionSet {
        let members = self.members.iter().zip(&other.members).map(|(&a, &b)| a && !b).collect();
        StateActionSet { num_states: self.num_states, num_actions: self.num_actions, members }
    }

    pub fn complement(&self) -> StateActionSet {
        let members = self.members.iter().map(|&a| !a).collect();
        StateActionSet { num_states: self.num_states, num_actions: self.num_actions, members }
    }
}

/// Deterministic stationary policy, total over states.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub actions: Vec<ActionId>,
}

impl Policy {
    pub fn constant(num_states: usize, a: ActionId) -> Self {
        Policy { actions: vec![a; num_states] }
    }

    #[inline]
    pub fn action(&self, s: StateId) -> ActionId {
        self.actions[s.0]
    }

    /// True if every state of `z` picks an action inside `z`.
    pub fn is_within(&self, z: &StateActionSet) -> bool {
        z.states().into_iter().all(|s| z.contains(Pair { s, a: self.action(s) }))
    }
}

/// Q-values over S x A with explicit `Bottom` entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    num_states: usize,
    num_actions: usize,
    values: Vec<Value>,
}

impl QTable {
    pub fn filled(num_states: usize, num_actions: usize, v: Value) -> Self {
        QTable { num_states, num_actions, values: vec![v; num_states * num_actions] }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn get(&self, p: Pair) -> Value {
        self.values[p.index(self.num_actions)]
    }

    #[inline]
    pub fn set(&mut self, p: Pair, v: Value) {
        self.values[p.index(self.num_actions)] = v;
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }

    /// Max over actions; `Bottom` iff every action is `Bottom`.
    pub fn state_value(&self, s: StateId) -> Value {
        let base = s.0 * self.num_actions;
        self.values[base..base + self.num_actions]
            .iter()
            .copied()
            .fold(Value::Bottom, |best, v| if v > best { v } else { best })
    }

    /// Argmax over actions, ties to the lowest index.
    pub fn greedy_action(&self, s: StateId) -> ActionId {
        let base = s.0 * self.num_actions;
        let mut best = 0;
        for a in 1..self.num_actions {
            if self.values[base + a] > self.values[base + best] {
                best = a;
            }
        }
        ActionId(best)
    }

    pub fn greedy_policy(&self) -> Policy {
        Policy { actions: (0..self.num_states).map(|s| self.greedy_action(StateId(s))).collect() }
    }
}

/// Dense tabular MDP.
#[derive(Clone, Debug)]
pub struct Mdp {
    num_states: usize,
    num_actions: usize,
    /// `T[s][a][s']`, flattened.
    transitions: Vec<f64>,
    rewards: Vec<f64>,
    pub gamma: f64,
    pub s_init: StateId,
    pub tau: f64,
    /// Episode-ending states. Their dynamics restart at `s_init`; the flag
    /// lets agents treat those rows as known.
    pub terminal: Vec<bool>,
    supports: Vec<SparseRow>,
}

impl Mdp {
    /// Builds an MDP from dense tables. Shapes are checked; probabilistic
    /// content is not (see [`validate_mdp`]).
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        gamma: f64,
        s_init: StateId,
        tau: f64,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidMdp("empty state or action space".into()));
        }
        if transitions.len() != num_states * num_actions * num_states {
            return Err(Error::InvalidMdp(format!(
                "transition tensor has {} entries, expected {}",
                transitions.len(),
                num_states * num_actions * num_states
            )));
        }
        if rewards.len() != num_states * num_actions {
            return Err(Error::InvalidMdp(format!(
                "reward table has {} entries, expected {}",
                rewards.len(),
                num_states * num_actions
            )));
        }
        if s_init.0 >= num_states {
            return Err(Error::InvalidMdp(format!("initial state {} out of range", s_init.0)));
        }
        if !(gamma > 0.0 && gamma < 1.0) && gamma != 0.0 {
            return Err(Error::InvalidMdp(format!("discount {gamma} outside [0,1)")));
        }
        let mut mdp = Mdp {
            num_states,
            num_actions,
            transitions,
            rewards,
            gamma,
            s_init,
            tau,
            terminal: vec![false; num_states],
            supports: Vec::new(),
        };
        mdp.rebuild_supports();
        Ok(mdp)
    }

    /// Builds from sparse rows indexed by pair.
    pub fn from_rows(
        num_states: usize,
        num_actions: usize,
        rows: &[SparseRow],
        rewards: Vec<f64>,
        gamma: f64,
        s_init: StateId,
        tau: f64,
    ) -> Result<Self> {
        if rows.len() != num_states * num_actions {
            return Err(Error::InvalidMdp(format!("{} rows for {} pairs", rows.len(), num_states * num_actions)));
        }
        let mut t = vec![0.0; num_states * num_actions * num_states];
        for (i, row) in rows.iter().enumerate() {
            for &(s2, p) in row {
                if s2.0 >= num_states {
                    return Err(Error::InvalidMdp(format!("successor {} out of range", s2.0)));
                }
                t[i * num_states + s2.0] += p;
            }
        }
        Self::new(num_states, num_actions, t, rewards, gamma, s_init, tau)
    }

    fn rebuild_supports(&mut self) {
        let ns = self.num_states;
        self.supports = (0..ns * self.num_actions)
            .map(|i| {
                self.transitions[i * ns..(i + 1) * ns]
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(s, &p)| (StateId(s), p))
                    .collect()
            })
            .collect();
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_pairs(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn pairs(&self) -> impl Iterator<Item = Pair> {
        let na = self.num_actions;
        (0..self.num_states * na).map(move |i| Pair::from_index(i, na))
    }

    #[inline]
    pub fn prob(&self, p: Pair, s2: StateId) -> f64 {
        self.transitions[p.index(self.num_actions) * self.num_states + s2.0]
    }

    /// Dense row `T(s,a,·)`.
    pub fn row(&self, p: Pair) -> &[f64] {
        let i = p.index(self.num_actions) * self.num_states;
        &self.transitions[i..i + self.num_states]
    }

    /// Positive-probability successors of `p`.
    #[inline]
    pub fn support(&self, p: Pair) -> &SparseRow {
        &self.supports[p.index(self.num_actions)]
    }

    #[inline]
    pub fn reward(&self, p: Pair) -> f64 {
        self.rewards[p.index(self.num_actions)]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    /// Same dynamics, different reward table.
    pub fn with_rewards(&self, rewards: Vec<f64>) -> Result<Self> {
        if rewards.len() != self.num_pairs() {
            return Err(Error::InvalidMdp("reward table shape mismatch".into()));
        }
        let mut out = self.clone();
        out.rewards = rewards;
        Ok(out)
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        let mut out = self.clone();
        out.gamma = gamma;
        out
    }

    /// Samples a successor given a uniform draw `u ∈ [0,1)`.
    pub fn sample_next(&self, p: Pair, u: f64) -> StateId {
        let row = self.support(p);
        let mut acc = 0.0;
        for &(s2, prob) in row {
            acc += prob;
            if u < acc {
                return s2;
            }
        }
        row.last().map(|&(s2, _)| s2).expect("transition row has no support")
    }

    /// Pairs with negative reward.
    pub fn negative_reward_pairs(&self) -> StateActionSet {
        StateActionSet::from_fn(self.num_states, self.num_actions, |p| self.reward(p) < 0.0)
    }
}

/// A single problem found by [`validate_mdp`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    RowSum { pair: Pair, sum: f64 },
    BelowTau { pair: Pair, next: StateId, prob: f64 },
    Negative { pair: Pair, next: StateId, prob: f64 },
    RewardRange { pair: Pair, reward: f64 },
    Discount(f64),
    Tau(f64),
}

/// Report-style validation: an empty list means the MDP is well formed.
pub fn validate_mdp(mdp: &Mdp) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(mdp.gamma > 0.0 && mdp.gamma < 1.0) {
        out.push(Violation::Discount(mdp.gamma));
    }
    if !(mdp.tau > 0.0 && mdp.tau <= 1.0) {
        out.push(Violation::Tau(mdp.tau));
    }
    for pair in mdp.pairs() {
        let row = mdp.row(pair);
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            out.push(Violation::RowSum { pair, sum });
        }
        for (s2, &p) in row.iter().enumerate() {
            if p < 0.0 {
                out.push(Violation::Negative { pair, next: StateId(s2), prob: p });
            } else if p > 0.0 && p < mdp.tau - ROW_SUM_TOL {
                out.push(Violation::BelowTau { pair, next: StateId(s2), prob: p });
            }
        }
        let r = mdp.reward(pair);
        if !(-1.0..=1.0).contains(&r) {
            out.push(Violation::RewardRange { pair, reward: r });
        }
    }
    out
}

/// Every positive-probability successor of a member pair has an action in `z`.
pub fn is_closed(z: &StateActionSet, mdp: &Mdp) -> bool {
    let in_z = z.state_mask();
    z.iter().all(|p| mdp.support(p).iter().all(|&(s2, _)| in_z[s2.0]))
}

/// Closed, and the support digraph restricted to `z` is strongly connected
/// over the states of `z`. The empty set is not communicating.
pub fn is_communicating(z: &StateActionSet, mdp: &Mdp) -> bool {
    if !is_closed(z, mdp) {
        return false;
    }
    let states = z.states();
    let Some(&root) = states.first() else {
        return false;
    };
    let ns = mdp.num_states();
    let mut fwd: Vec<Vec<usize>> = vec![Vec::new(); ns];
    let mut bwd: Vec<Vec<usize>> = vec![Vec::new(); ns];
    for p in z.iter() {
        for &(s2, _) in mdp.support(p) {
            fwd[p.s.0].push(s2.0);
            bwd[s2.0].push(p.s.0);
        }
    }
    let reach = |adj: &Vec<Vec<usize>>| {
        let mut seen = vec![false; ns];
        let mut queue = VecDeque::from([root.0]);
        seen[root.0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    };
    let f = reach(&fwd);
    let b = reach(&bwd);
    states.iter().all(|s| f[s.0] && b[s.0])
}

/// `{(s,a) : (s,a) ∉ Z, s ∈ Z}`.
pub fn edge_pairs(z: &StateActionSet) -> StateActionSet {
    let in_z = z.state_mask();
    StateActionSet::from_fn(z.num_states(), z.num_actions(), |p| in_z[p.s.0] && !z.contains(p))
}

/// Expected value of `values` under a sparse row; `Bottom` if any
/// positive-probability successor is `Bottom`.
#[inline]
pub fn expectation(row: &[(StateId, f64)], values: &[Value]) -> Value {
    let mut acc = 0.0;
    for &(s2, p) in row {
        match values[s2.0] {
            Value::Bottom => return Value::Bottom,
            Value::Finite(v) => acc += p * v,
        }
    }
    Value::Finite(acc)
}

/// Bellman fixed point over the pairs in `allowed`; every other pair is
/// `Bottom`. Converges to within `tol` of the fixed point in sup norm.
pub fn value_iteration(mdp: &Mdp, allowed: &StateActionSet, tol: f64) -> Result<QTable> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let gamma = mdp.gamma;
    let mut q = QTable::filled(ns, na, Value::Bottom);
    for p in allowed.iter() {
        q.set(p, Value::Finite(0.0));
    }
    // Stop once a sweep moves less than tol(1-γ): the remaining distance to
    // the fixed point is then at most tol·γ.
    let stop = tol * (1.0 - gamma).max(f64::EPSILON);
    let mut v = vec![Value::Bottom; ns];
    for _ in 0..MAX_SWEEPS {
        for (s, slot) in v.iter_mut().enumerate() {
            *slot = q.state_value(StateId(s));
        }
        let mut delta: f64 = 0.0;
        let mut pattern_changed = false;
        for p in allowed.iter() {
            let next = match expectation(mdp.support(p), &v) {
                Value::Bottom => Value::Bottom,
                Value::Finite(e) => Value::Finite(mdp.reward(p) + gamma * e),
            };
            match (q.get(p), next) {
                (Value::Finite(old), Value::Finite(new)) => delta = delta.max((old - new).abs()),
                (Value::Bottom, Value::Bottom) => {}
                _ => pattern_changed = true,
            }
            q.set(p, next);
        }
        if !pattern_changed && delta <= stop {
            return Ok(q);
        }
    }
    Err(Error::NoConvergence { sweeps: MAX_SWEEPS })
}
