//! The safe explorer (goal / explore / switch mode machine) and its
//! baselines: MBIE, R-Max, ε-greedy, their safe variants, and the
//! undirected explorer.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::confidence::{samples_for_width, theoretical_delta_t, width_states, AnalogyOracle, CandidateSpec, ConfidenceModel};
use crate::envs::{EnvName, Environment};
use crate::error::{Error, Result};
use crate::frontier::{plan_goal_and_frontier, FrontierInputs};
use crate::mdp::{expectation, is_communicating, ActionId, Pair, Policy, QTable, StateActionSet, StateId, Value, MAX_SWEEPS};
use crate::plan::{build_planning_rewards, optimistic_value_iteration, PlanningRewards, RewardKind};
use crate::safe_set::expand_safe_set;

/// Value given to unknown pairs by R-Max.
pub const RMAX_VMAX: f64 = 1.0;
const EPS_START: f64 = 1.0;
const EPS_END: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Ase,
    UndirectedAse,
    Mbie,
    Rmax,
    SafeRmax,
    EpsGreedy,
    SafeEpsGreedy,
}

impl AgentKind {
    pub const ALL: [AgentKind; 7] = [
        AgentKind::Ase,
        AgentKind::UndirectedAse,
        AgentKind::Mbie,
        AgentKind::Rmax,
        AgentKind::SafeRmax,
        AgentKind::EpsGreedy,
        AgentKind::SafeEpsGreedy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Ase => "ase",
            AgentKind::UndirectedAse => "undirected_ase",
            AgentKind::Mbie => "mbie",
            AgentKind::Rmax => "rmax",
            AgentKind::SafeRmax => "safe_rmax",
            AgentKind::EpsGreedy => "eps_greedy",
            AgentKind::SafeEpsGreedy => "safe_eps_greedy",
        }
    }

    /// Keeps every action inside its certified safe set.
    pub fn is_safe(self) -> bool {
        !matches!(self, AgentKind::Mbie | AgentKind::Rmax | AgentKind::EpsGreedy)
    }

    fn is_explorer(self) -> bool {
        matches!(self, AgentKind::Ase | AgentKind::UndirectedAse)
    }
}

/// Agent parameters. `None` fields are derived from the environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub kind: AgentKind,
    /// Samples per pair before its interval freezes; defaults to the
    /// smallest count whose width is below `τ/2`.
    pub m: Option<u32>,
    /// Overall failure probability, used by `theoretical_params`.
    pub delta: f64,
    /// Per-estimate failure probability.
    pub delta_t: f64,
    /// Derive `delta_t` from `delta` instead of using `delta_t`.
    pub theoretical_params: bool,
    /// Range the width bound over at most `⌊1/τ⌋` outcomes (the largest
    /// possible support) instead of all states.
    pub support_bounded_width: bool,
    /// Goal-planning discount; defaults to the environment's.
    pub gamma: Option<f64>,
    pub gamma_explore: f64,
    pub gamma_switch: f64,
    /// Counted steps between replans.
    pub recompute_period: usize,
    /// ε-greedy anneal length; defaults per environment.
    pub eps_anneal_steps: Option<usize>,
    /// R-Max "known" threshold; defaults to `τ/2`.
    pub rmax_known_width: Option<f64>,
    /// Magnitude of the penalty that replaces negative rewards for the
    /// unsafe baselines.
    pub unsafe_penalty: f64,
    pub plan_tol: f64,
    /// Recompute every transferred row on each replan.
    pub full_transfer: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            kind: AgentKind::Ase,
            m: None,
            delta: 0.1,
            delta_t: 0.1,
            theoretical_params: false,
            support_bounded_width: true,
            gamma: None,
            gamma_explore: 0.95,
            gamma_switch: 0.95,
            recompute_period: 100,
            eps_anneal_steps: None,
            rmax_known_width: None,
            unsafe_penalty: 100.0,
            plan_tol: 1e-6,
            full_transfer: false,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.recompute_period == 0 {
            return Err(Error::Config("recompute_period must be at least 1".into()));
        }
        if self.m == Some(0) {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if self.eps_anneal_steps == Some(0) {
            return Err(Error::Config("eps_anneal_steps must be at least 1".into()));
        }
        for (name, g) in [("gamma_explore", self.gamma_explore), ("gamma_switch", self.gamma_switch)] {
            if !(g > 0.0 && g < 1.0) {
                return Err(Error::Config(format!("{name} {g} outside (0,1)")));
            }
        }
        if !(self.plan_tol > 0.0) {
            return Err(Error::Config("plan_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Parameters after filling in environment-dependent defaults.
#[derive(Clone, Debug)]
pub struct ResolvedParams {
    pub m: u32,
    pub delta_t: f64,
    pub width_states: usize,
    pub gamma: f64,
    pub tau: f64,
    pub eps_prime: f64,
    pub eps_anneal_steps: usize,
}

pub fn resolve_params(cfg: &AgentConfig, env: &Environment) -> Result<ResolvedParams> {
    cfg.validate()?;
    let mdp = &env.mdp;
    let tau = mdp.tau;
    let k = width_states(mdp.num_states(), tau, cfg.support_bounded_width);
    let provisional_m = match cfg.m {
        Some(m) => m,
        None => samples_for_width(tau / 2.0, k, cfg.delta_t)?,
    };
    let delta_t = if cfg.theoretical_params {
        theoretical_delta_t(cfg.delta, mdp.num_states(), mdp.num_actions(), provisional_m)
    } else {
        cfg.delta_t
    };
    let m = match cfg.m {
        Some(m) => m,
        None if cfg.theoretical_params => samples_for_width(tau / 2.0, k, delta_t)?,
        None => provisional_m,
    };
    Ok(ResolvedParams {
        m,
        delta_t,
        width_states: k,
        gamma: cfg.gamma.unwrap_or(mdp.gamma),
        tau,
        eps_prime: cfg.rmax_known_width.unwrap_or(tau / 2.0),
        eps_anneal_steps: cfg.eps_anneal_steps.unwrap_or(default_anneal_steps(env.name)),
    })
}

/// ε-greedy anneal length used when the config leaves it unset.
pub fn default_anneal_steps(env: EnvName) -> usize {
    match env {
        EnvName::GridWorld => 5_000,
        EnvName::Platformer => 20_000,
    }
}

/// Linear anneal from 1 to 0.1 over `anneal_steps`, then constant.
pub fn epsilon_schedule(t: usize, anneal_steps: usize) -> f64 {
    if t >= anneal_steps {
        return EPS_END;
    }
    EPS_START + (EPS_END - EPS_START) * t as f64 / anneal_steps as f64
}

/// Pairs with an analog (itself included) within `Δ < τ/2` whose own
/// empirical width is below `eps_prime`.
pub fn rmax_known_mask(model: &ConfidenceModel, analogy: &AnalogyOracle, eps_prime: f64, tau: f64) -> StateActionSet {
    StateActionSet::from_fn(model.num_states(), model.num_actions(), |p| {
        model.eps_hat(p) < eps_prime || analogy.analogs(p).any(|(q, d)| d < tau / 2.0 && model.eps_hat(q) < eps_prime)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Goal,
    Explore,
    Switch,
    Greedy,
    Random,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Goal => "goal",
            Mode::Explore => "explore",
            Mode::Switch => "switch",
            Mode::Greedy => "greedy",
            Mode::Random => "random",
        }
    }
}

/// Checks made after each replan of an explorer.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Audit {
    pub step: usize,
    /// Goal set inside the safe set, or explore set nonempty, not both.
    pub goal_xor_explore: bool,
    /// Explore pairs are all below `m` samples.
    pub explore_outside_known: bool,
    /// Safe and unsafe sets only grew and stayed disjoint.
    pub monotone: bool,
    /// The certified safe set is closed and communicating.
    pub safe_communicating: bool,
    /// Certified-unsafe pairs avoid the true safe set (when it is supplied).
    pub unsafe_disjoint_truth: Option<bool>,
    /// Certified-safe pairs lie in the true safe set (when it is supplied).
    pub safe_within_truth: Option<bool>,
    pub failures: usize,
}

impl Audit {
    pub fn ok(&self) -> bool {
        self.goal_xor_explore
            && self.explore_outside_known
            && self.monotone
            && self.safe_communicating
            && self.unsafe_disjoint_truth != Some(false)
            && self.safe_within_truth != Some(false)
    }
}

/// One agent's learning state.
pub struct Agent {
    kind: AgentKind,
    cfg: AgentConfig,
    params: ResolvedParams,
    env: Arc<Environment>,
    truth: Option<Arc<StateActionSet>>,
    /// Rewards the agent plans with (penalized for unsafe baselines).
    rewards: Vec<f64>,
    model: ConfidenceModel,
    z_safe: StateActionSet,
    z_unsafe: StateActionSet,
    z_goal: StateActionSet,
    z_explore: StateActionSet,
    goal_policy: Policy,
    explore_policy: Policy,
    switch_policy: Policy,
    /// Baselines' action values.
    q: QTable,
    counted_since_replan: usize,
    steps: usize,
    replans: usize,
    audits: Vec<Audit>,
}

impl Agent {
    /// Builds the agent and runs its first plan. Reset rows of terminal
    /// states are given to the agent as known.
    pub fn new(cfg: AgentConfig, env: Arc<Environment>, truth: Option<Arc<StateActionSet>>) -> Result<Self> {
        let params = resolve_params(&cfg, &env)?;
        let mdp = &env.mdp;
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        let mut model = ConfidenceModel::new(&env.analogy, params.m, params.delta_t, params.width_states)?;
        for s in (0..ns).filter(|&s| mdp.terminal[s]) {
            for a in 0..na {
                let p = Pair::new(s, a);
                model.set_known_row(p, mdp.support(p).clone());
            }
        }
        let rewards: Vec<f64> = if cfg.kind.is_safe() {
            mdp.rewards().to_vec()
        } else {
            mdp.rewards().iter().map(|&r| if r < 0.0 { -cfg.unsafe_penalty } else { r }).collect()
        };
        let z_safe = if cfg.kind.is_safe() { env.z0.clone() } else { StateActionSet::full(ns, na) };
        let mut agent = Agent {
            kind: cfg.kind,
            cfg,
            params,
            truth,
            rewards,
            model,
            z_safe,
            z_unsafe: mdp.negative_reward_pairs(),
            z_goal: StateActionSet::empty(ns, na),
            z_explore: StateActionSet::empty(ns, na),
            goal_policy: Policy::constant(ns, ActionId(0)),
            explore_policy: Policy::constant(ns, ActionId(0)),
            switch_policy: Policy::constant(ns, ActionId(0)),
            q: QTable::filled(ns, na, Value::Finite(0.0)),
            counted_since_replan: 0,
            steps: 0,
            replans: 0,
            audits: Vec::new(),
            env,
        };
        agent.replan()?;
        Ok(agent)
    }

    pub fn kind(&self) -> AgentKind {
        self.kind
    }

    pub fn params(&self) -> &ResolvedParams {
        &self.params
    }

    pub fn model(&self) -> &ConfidenceModel {
        &self.model
    }

    pub fn z_safe(&self) -> &StateActionSet {
        &self.z_safe
    }

    pub fn z_unsafe(&self) -> &StateActionSet {
        &self.z_unsafe
    }

    pub fn z_goal(&self) -> &StateActionSet {
        &self.z_goal
    }

    pub fn z_explore(&self) -> &StateActionSet {
        &self.z_explore
    }

    pub fn audits(&self) -> &[Audit] {
        &self.audits
    }

    pub fn replans(&self) -> usize {
        self.replans
    }

    /// Picks the action at `s`; draws from `rng` only for ε-greedy kinds.
    pub fn select_action<R: Rng>(&mut self, s: StateId, rng: &mut R) -> (ActionId, Mode) {
        let (a, mode) = match self.kind {
            AgentKind::Ase | AgentKind::UndirectedAse => self.ase_select_action(s),
            AgentKind::EpsGreedy | AgentKind::SafeEpsGreedy => {
                let eps = epsilon_schedule(self.steps, self.params.eps_anneal_steps);
                if rng.gen::<f64>() < eps {
                    let allowed: Vec<ActionId> = self.z_safe.actions_of(s).collect();
                    assert!(!allowed.is_empty(), "no allowed action at state {}", s.0);
                    (allowed[rng.gen_range(0..allowed.len())], Mode::Random)
                } else {
                    (self.q.greedy_action(s), Mode::Greedy)
                }
            }
            _ => (self.q.greedy_action(s), Mode::Greedy),
        };
        if self.kind.is_safe() {
            assert!(self.z_safe.contains(Pair { s, a }), "{} chose ({}, {}) outside its safe set", self.kind.as_str(), s.0, a.0);
        }
        self.steps += 1;
        (a, mode)
    }

    /// Goal policy inside the goal set once it is certified safe; explore
    /// policy while it is not; switch policy to get back to the goal set.
    pub fn ase_select_action(&self, s: StateId) -> (ActionId, Mode) {
        if self.z_explore.is_empty() {
            if self.z_goal.contains_state(s) {
                (self.goal_policy.action(s), Mode::Goal)
            } else {
                (self.switch_policy.action(s), Mode::Switch)
            }
        } else {
            (self.explore_policy.action(s), Mode::Explore)
        }
    }

    /// Records the transition and replans when the gate opens: every
    /// `recompute_period` counted steps, or when a pair reaches `m`.
    /// Returns whether the transition was counted.
    pub fn observe(&mut self, s: StateId, a: ActionId, s2: StateId) -> Result<bool> {
        let p = Pair { s, a };
        let counted = self.model.record_transition(p, s2);
        if counted {
            self.counted_since_replan += 1;
            if self.counted_since_replan >= self.cfg.recompute_period || self.model.is_saturated(p) {
                self.replan()?;
            }
        }
        Ok(counted)
    }

    fn replan(&mut self) -> Result<()> {
        self.counted_since_replan = 0;
        self.replans += 1;
        if self.cfg.full_transfer {
            self.model.transfer_full(&self.env.analogy);
        } else {
            self.model.transfer(&self.env.analogy);
        }
        let tau = self.params.tau;
        if self.kind.is_safe() {
            self.z_safe = expand_safe_set(&self.z_safe, &self.model, &self.rewards, tau).z_safe;
        }
        match self.kind {
            AgentKind::Ase | AgentKind::UndirectedAse => self.replan_explorer(),
            AgentKind::Mbie => {
                let spec = CandidateSpec::build(&self.model, &StateActionSet::empty(self.model.num_states(), self.model.num_actions()), tau);
                let rewards = PlanningRewards { reward: self.rewards.clone(), forbidden: self.z_safe.complement() };
                self.q = optimistic_value_iteration(&spec, &rewards, self.params.gamma, self.cfg.plan_tol)?.q;
                Ok(())
            }
            AgentKind::Rmax | AgentKind::SafeRmax => {
                let known = rmax_known_mask(&self.model, &self.env.analogy, self.params.eps_prime, tau);
                self.q = model_value_iteration(&self.model, &self.rewards, &self.z_safe, Some(&known), self.params.gamma, self.cfg.plan_tol)?;
                Ok(())
            }
            AgentKind::EpsGreedy | AgentKind::SafeEpsGreedy => {
                self.q = model_value_iteration(&self.model, &self.rewards, &self.z_safe, None, self.params.gamma, self.cfg.plan_tol)?;
                Ok(())
            }
        }
    }

    fn replan_explorer(&mut self) -> Result<()> {
        debug_assert!(self.kind.is_explorer());
        let env = Arc::clone(&self.env);
        let tau = self.params.tau;
        let spec = CandidateSpec::build(&self.model, &env.z0, tau);
        let prev_safe = self.z_safe.clone();
        let prev_unsafe = self.z_unsafe.clone();
        let inputs = FrontierInputs {
            model: &self.model,
            spec: &spec,
            analogy: &env.analogy,
            z_safe: &self.z_safe,
            rewards: &self.rewards,
            gamma: self.params.gamma,
            tau,
            s_init: env.mdp.s_init,
            tol: self.cfg.plan_tol,
            undirected: self.kind == AgentKind::UndirectedAse,
        };
        let plan = plan_goal_and_frontier(inputs, &self.z_unsafe)?;
        self.goal_policy = plan.goal.policy;
        self.z_goal = plan.z_goal;
        self.z_explore = plan.z_explore;
        self.z_unsafe = plan.z_unsafe;
        if !self.z_explore.is_empty() {
            let rewards = build_planning_rewards(RewardKind::Explore { z_safe: &self.z_safe, z_explore: &self.z_explore });
            self.explore_policy = optimistic_value_iteration(&spec, &rewards, self.cfg.gamma_explore, self.cfg.plan_tol)?.policy;
        } else {
            let rewards = build_planning_rewards(RewardKind::Switch { z_safe: &self.z_safe, z_goal: &self.z_goal });
            self.switch_policy = optimistic_value_iteration(&spec, &rewards, self.cfg.gamma_switch, self.cfg.plan_tol)?.policy;
        }

        let goal_inside = self.z_goal.is_subset(&self.z_safe);
        self.audits.push(Audit {
            step: self.steps,
            goal_xor_explore: goal_inside != !self.z_explore.is_empty(),
            explore_outside_known: self.z_explore.iter().all(|p| !self.model.is_saturated(p)),
            monotone: prev_safe.is_subset(&self.z_safe)
                && prev_unsafe.is_subset(&self.z_unsafe)
                && !self.z_safe.intersects(&self.z_unsafe),
            safe_communicating: is_communicating(&self.z_safe, &env.mdp),
            unsafe_disjoint_truth: self.truth.as_ref().map(|t| !self.z_unsafe.intersects(t)),
            safe_within_truth: self.truth.as_ref().map(|t| self.z_safe.is_subset(t)),
            failures: plan.failures,
        });
        Ok(())
    }
}

/// Value iteration on the transferred model, restricted to `allowed`.
///
/// With `known`, pairs outside it are worth [`RMAX_VMAX`] (R-Max). Pairs
/// with no transferred row are worth their reward alone.
pub fn model_value_iteration(
    model: &ConfidenceModel,
    rewards: &[f64],
    allowed: &StateActionSet,
    known: Option<&StateActionSet>,
    gamma: f64,
    tol: f64,
) -> Result<QTable> {
    let (ns, na) = (model.num_states(), model.num_actions());
    let mut q = QTable::filled(ns, na, Value::Bottom);
    let active: Vec<Pair> = allowed.iter().collect();
    for &p in &active {
        q.set(p, Value::Finite(0.0));
    }
    let stop = tol * (1.0 - gamma).max(f64::EPSILON);
    let mut v = vec![Value::Bottom; ns];
    for _ in 0..MAX_SWEEPS {
        for (s, slot) in v.iter_mut().enumerate() {
            *slot = q.state_value(StateId(s));
        }
        let mut delta: f64 = 0.0;
        let mut pattern_changed = false;
        for &p in &active {
            let r = rewards[p.index(na)];
            let row = model.t_tilde(p);
            let next = if known.is_some_and(|k| !k.contains(p)) {
                Value::Finite(RMAX_VMAX)
            } else if row.is_empty() {
                Value::Finite(r)
            } else {
                match expectation(row, &v) {
                    Value::Bottom => Value::Bottom,
                    Value::Finite(e) => Value::Finite(r + gamma * e),
                }
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_schedule_examples() {
        assert_eq!(epsilon_schedule(0, 5000), 1.0);
        assert!((epsilon_schedule(5000, 5000) - 0.1).abs() < 1e-12);
        assert!((epsilon_schedule(2500, 5000) - 0.55).abs() < 1e-12);
        assert!((epsilon_schedule(90_000, 5000) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut cfg = AgentConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.recompute_period = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rmax_mask_starts_empty() {
        let analogy = AnalogyOracle::identity(3, 2);
        let model = ConfidenceModel::new(&analogy, 10, 0.1, 2).unwrap();
        assert!(rmax_known_mask(&model, &analogy, 0.15, 0.3).is_empty());
    }

    #[test]
    fn model_vi_unknown_pairs_get_vmax() {
        let analogy = AnalogyOracle::identity(1, 2);
        let mut model = ConfidenceModel::new(&analogy, 1, 0.1, 2).unwrap();
        model.set_known_row(Pair::new(0, 0), vec![(StateId(0), 1.0)]);
        model.transfer(&analogy);
        let known = rmax_known_mask(&model, &analogy, 0.15, 0.3);
        assert!(known.contains(Pair::new(0, 0)) && !known.contains(Pair::new(0, 1)));
        let q = model_value_iteration(&model, &[0.0, 0.0], &StateActionSet::full(1, 2), Some(&known), 0.5, 1e-12).unwrap();
        assert_eq!(q.get(Pair::new(0, 1)), Value::Finite(RMAX_VMAX));
        assert!((q.get(Pair::new(0, 0)).finite().unwrap() - 0.5).abs() < 1e-9);
    }
}
