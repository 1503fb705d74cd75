//! Randomized property suites, each checked against an independent oracle
//! on small generated instances. Shared by the CLI and the acceptance run.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::{AgentConfig, AgentKind};
use crate::confidence::{
    hoeffding_width, samples_for_width, width_states, Allowed, AnalogyOracle, CandidateRow, CandidateSpec, ConfidenceModel,
};
use crate::envs::EnvName;
use crate::error::Result;
use crate::harness::{run_experiment, EnvContext, ExperimentConfig};
use crate::mdp::{is_closed, is_communicating, value_iteration, Mdp, Pair, Policy, QTable, SparseRow, StateActionSet, StateId, Value};
use crate::oracle::{brute_force_candidate_max, brute_force_safe_expand, compute_true_safe_set};
use crate::plan::{goal_set_by_closure, goal_set_by_occupancy, inner_max_value, occupancy_distribution, optimistic_value_iteration, OptimisticResult, PlanningRewards};
use crate::safe_set::expand_safe_set;

/// Probability mass unit of the lattice used by the candidate-max check.
pub const LATTICE: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuiteSize {
    /// Reduced instance counts for smoke runs.
    Quick,
    Full,
}

impl SuiteSize {
    fn scale(self, full: usize) -> usize {
        match self {
            SuiteSize::Quick => (full / 10).max(5),
            SuiteSize::Full => full,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    pub passed: bool,
    /// First failure, or a summary statistic.
    pub detail: String,
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {} cases, {} failures ({})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.failures,
            self.detail
        )
    }
}

struct Tally {
    name: &'static str,
    cases: usize,
    failures: usize,
    first: Option<String>,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Tally { name, cases: 0, failures: 0, first: None }
    }

    fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.failures += 1;
            if self.first.is_none() {
                self.first = Some(msg());
            }
        }
    }

    fn finish(self) -> SuiteReport {
        SuiteReport {
            name: self.name,
            cases: self.cases,
            failures: self.failures,
            passed: self.failures == 0 && self.cases > 0,
            detail: self.first.unwrap_or_else(|| "all cases hold".into()),
        }
    }
}

/// Random row over `num_states` with support size at most `⌊1/τ⌋` and
/// every nonzero probability at least `tau`.
pub fn random_row<R: Rng>(rng: &mut R, num_states: usize, tau: f64) -> SparseRow {
    let max_k = ((1.0 / tau + 1e-9).floor() as usize).clamp(1, num_states);
    let k = rng.gen_range(1..=max_k);
    let mut states: Vec<usize> = (0..num_states).collect();
    states.shuffle(rng);
    let extra: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
    let total: f64 = extra.iter().sum();
    let free = 1.0 - k as f64 * tau;
    let mut row: SparseRow = states[..k].iter().zip(&extra).map(|(&s, &e)| (StateId(s), tau + free * e / total)).collect();
    let sum: f64 = row.iter().map(|&(_, p)| p).sum();
    row[0].1 += 1.0 - sum;
    row.sort_by_key(|&(s, _)| s);
    row
}

/// Random MDP whose pair `(0, 0)` is a zero-reward self-loop at the initial
/// state, so `{(0, 0)}` is a valid initial safe set. Other rewards are
/// negative with probability `neg_prob`.
pub fn random_mdp<R: Rng>(rng: &mut R, num_states: usize, num_actions: usize, tau: f64, neg_prob: f64) -> Mdp {
    let mut rows = Vec::with_capacity(num_states * num_actions);
    let mut rewards = Vec::with_capacity(num_states * num_actions);
    for i in 0..num_states * num_actions {
        if i == 0 {
            rows.push(vec![(StateId(0), 1.0)]);
            rewards.push(0.0);
            continue;
        }
        rows.push(random_row(rng, num_states, tau));
        rewards.push(if rng.gen::<f64>() < neg_prob { -1.0 } else { (rng.gen::<f64>() * 10.0).round() / 10.0 });
    }
    Mdp::from_rows(num_states, num_actions, &rows, rewards, 0.9, StateId(0), tau).expect("generated MDP is valid")
}

fn self_loop_z0(mdp: &Mdp) -> StateActionSet {
    StateActionSet::from_pairs(mdp.num_states(), mdp.num_actions(), [Pair::new(0, 0)])
}

/// Safe-set expansion on random MDPs with a random subset of exactly known
/// rows: closed, communicating, monotone, inside the true safe set, and
/// equal to the exhaustive search.
pub fn safe_expand_suite(size: SuiteSize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5afe);
    let mut tally = Tally::new("safe-set expansion vs exhaustive search");
    for case in 0..size.scale(200) {
        let ns = rng.gen_range(2..=6);
        let na = rng.gen_range(1..=3);
        let tau = [0.2, 0.25, 0.5][rng.gen_range(0..3)];
        let mdp = random_mdp(&mut rng, ns, na, tau, 0.15);
        let z0 = self_loop_z0(&mdp);
        let analogy = AnalogyOracle::identity(ns, na);
        let mut model = ConfidenceModel::new(&analogy, 10, 0.1, width_states(ns, tau, true).max(2)).expect("model");
        for p in mdp.pairs() {
            if rng.gen::<f64>() < 0.75 {
                model.set_known_row(p, mdp.support(p).clone());
            }
        }
        model.transfer(&analogy);
        let tight = StateActionSet::from_fn(ns, na, |p| model.eps_tilde(p) < tau / 2.0);
        let got = expand_safe_set(&z0, &model, mdp.rewards(), tau).z_safe;
        let truth = compute_true_safe_set(&mdp, &z0).expect("initial safe set is valid").z_safe;
        let oracle = brute_force_safe_expand(&mdp, &z0, &tight).expect("instance within the exhaustive limit");
        let ok = is_closed(&got, &mdp) && is_communicating(&got, &mdp) && z0.is_subset(&got) && got.is_subset(&truth) && got == oracle;
        tally.check(ok, || format!("case {case}: got {} pairs, exhaustive {} pairs", got.len(), oracle.len()));
    }
    tally.finish()
}

/// The greedy candidate maximization against exhaustive enumeration on a
/// probability lattice. Centers and widths lie on the lattice so the exact
/// optimum does too.
pub fn inner_max_suite(size: SuiteSize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1a4e);
    let units = (1.0 / LATTICE).round() as usize;
    let mut tally = Tally::new("candidate maximization vs lattice enumeration");
    for case in 0..size.scale(500) {
        let k = rng.gen_range(2..=5);
        let allowed: Vec<bool> = {
            let mut a: Vec<bool> = (0..k).map(|_| rng.gen::<f64>() < 0.8).collect();
            let i = rng.gen_range(0..k);
            a[i] = true;
            a
        };
        let slots: Vec<usize> = (0..k).filter(|&i| allowed[i]).collect();
        let mut counts = vec![0usize; k];
        for _ in 0..units {
            counts[*slots.choose(&mut rng).expect("one allowed slot")] += 1;
        }
        let center: Vec<f64> = counts.iter().map(|&c| c as f64 * LATTICE).collect();
        let width = rng.gen_range(0..=units) as f64 * 2.0 * LATTICE;
        let values: Vec<Value> = (0..k)
            .map(|_| if rng.gen::<f64>() < 0.2 { Value::Bottom } else { Value::Finite(rng.gen_range(-1.0..1.0)) })
            .collect();
        let got = inner_max_value(&center, width, &allowed, &values);
        let oracle = brute_force_candidate_max(&center, width, &allowed, &values, LATTICE);
        let ok = match got {
            Value::Bottom => oracle == f64::NEG_INFINITY,
            Value::Finite(v) => oracle.is_finite() && (v - oracle).abs() <= 1e-6,
        };
        tally.check(ok, || format!("case {case}: greedy {got:?}, enumeration {oracle}"));
    }
    tally.finish()
}

/// Whenever the width is below `τ/2`, the revealed support equals the true
/// support, on sampled random MDPs.
pub fn known_support_suite(size: SuiteSize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5bb0);
    let mut tally = Tally::new("revealed support equals true support");
    let mut defined = 0;
    for case in 0..size.scale(200) {
        let ns = rng.gen_range(2..=6);
        let na = rng.gen_range(1..=3);
        let tau = [0.2, 0.25, 0.5][rng.gen_range(0..3)];
        let mdp = random_mdp(&mut rng, ns, na, tau, 0.0);
        let k = width_states(ns, tau, true).max(2);
        let m = samples_for_width(tau / 2.0, k, 0.1).expect("finite sample count");
        let analogy = AnalogyOracle::identity(ns, na);
        let mut model = ConfidenceModel::new(&analogy, m, 0.1, k).expect("model");
        for p in mdp.pairs() {
            let n = if rng.gen::<bool>() { m } else { rng.gen_range(0..=m) };
            for _ in 0..n {
                model.record_transition(p, mdp.sample_next(p, rng.gen()));
            }
        }
        model.transfer(&analogy);
        let mut ok = true;
        for p in mdp.pairs() {
            if let Some(support) = model.known_support(p, tau) {
                defined += 1;
                let truth: Vec<StateId> = mdp.support(p).iter().map(|&(s, _)| s).collect();
                ok &= support == truth;
            }
        }
        tally.check(ok, || format!("case {case}: revealed support differs"));
    }
    let mut report = tally.finish();
    if report.passed {
        report.detail = format!("{defined} revealed supports checked");
    }
    report
}

/// Occupancy mass is `1 - γ^{H+1}`, and positive occupancy coincides with
/// reachability along the policy, on random policies and transitions.
pub fn occupancy_suite(size: SuiteSize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0cc0);
    let mut tally = Tally::new("occupancy mass and positivity");
    for case in 0..size.scale(200) {
        let ns = rng.gen_range(1..=8);
        let na = rng.gen_range(1..=3);
        let gamma = rng.gen_range(0.05..0.99);
        let horizon = rng.gen_range(0..=3 * ns);
        let transitions: Vec<SparseRow> = (0..ns * na).map(|_| random_row(&mut rng, ns, 0.1)).collect();
        let policy = Policy { actions: (0..ns).map(|_| crate::mdp::ActionId(rng.gen_range(0..na))).collect() };
        let s_init = StateId(rng.gen_range(0..ns));
        let occ = occupancy_distribution(&policy, &transitions, na, s_init, gamma, horizon);
        let mass_ok = (occ.total() - (1.0 - gamma.powi(horizon as i32 + 1))).abs() <= 1e-9;
        let result = OptimisticResult {
            q: QTable::filled(ns, na, Value::Finite(0.0)),
            policy,
            opt_transitions: transitions,
            sweeps: 0,
        };
        let positive = StateActionSet::from_fn(ns, na, |p| occ.rho[p.index(na)] > 0.0);
        let by_dp = goal_set_by_occupancy(&result, s_init, horizon);
        let pattern_ok = by_dp == positive;
        let closure_ok = horizon < ns || by_dp == goal_set_by_closure(&result, s_init);
        tally.check(mass_ok && pattern_ok && closure_ok, || {
            format!("case {case}: mass {} vs {}, pattern {pattern_ok}, closure {closure_ok}", occ.total(), 1.0 - gamma.powi(horizon as i32 + 1))
        });
    }
    tally.finish()
}

/// Candidate row around `truth` that still contains it: mass up to half
/// the width moves from one entry to another state.
fn admissible_row<R: Rng>(rng: &mut R, truth: &SparseRow, num_states: usize, tau: f64) -> CandidateRow {
    let width = if rng.gen::<bool>() { rng.gen_range(0.0..tau) } else { rng.gen_range(0.0..2.0) };
    let mut dense = vec![0.0; num_states];
    for &(s, p) in truth {
        dense[s.0] = p;
    }
    let (from, _) = truth[rng.gen_range(0..truth.len())];
    let to = rng.gen_range(0..num_states);
    let moved = rng.gen_range(0.0..=1.0) * (width / 2.0).min(dense[from.0]);
    let moved = if width < tau { moved.min(dense[from.0] - 1e-9) } else { moved };
    dense[from.0] -= moved;
    dense[to] += moved;
    let center: SparseRow = dense.iter().enumerate().filter(|&(_, &p)| p > 0.0).map(|(s, &p)| (StateId(s), p)).collect();
    let allowed = if width < tau { Allowed::Center } else { Allowed::All };
    CandidateRow { center, width, allowed }
}

/// Optimistic values dominate the true optimal values when every candidate
/// row contains the true row.
pub fn optimism_suite(size: SuiteSize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0b71);
    let mut tally = Tally::new("optimistic values dominate true values");
    for case in 0..size.scale(100) {
        let ns = rng.gen_range(2..=6);
        let na = rng.gen_range(1..=3);
        let tau = [0.2, 0.25, 0.5][rng.gen_range(0..3)];
        let mdp = random_mdp(&mut rng, ns, na, tau, 0.2);
        let rows = mdp.pairs().map(|p| admissible_row(&mut rng, mdp.support(p), ns, tau)).collect();
        let spec = CandidateSpec { num_states: ns, num_actions: na, rows, z0_states: vec![false; ns] };
        let rewards = PlanningRewards { reward: mdp.rewards().to_vec(), forbidden: StateActionSet::empty(ns, na) };
        let optimistic = optimistic_value_iteration(&spec, &rewards, mdp.gamma, 1e-10).expect("converges");
        let exact = value_iteration(&mdp, &StateActionSet::full(ns, na), 1e-10).expect("converges");
        let worst = mdp
            .pairs()
            .map(|p| match (optimistic.q.get(p), exact.get(p)) {
                (Value::Finite(o), Value::Finite(e)) => o - e,
                _ => f64::NEG_INFINITY,
            })
            .fold(f64::INFINITY, f64::min);
        tally.check(worst >= -1e-6, || format!("case {case}: optimistic falls {} below exact", -worst));
    }
    tally.finish()
}

/// Frequency with which the true row lies inside the L1 interval, over
/// resampled rows and sample counts; must be at least `1 - δ_T`.
pub fn admissibility_suite(size: SuiteSize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xad15);
    let (ns, tau, delta_t) = (8, 0.2, 0.1);
    let k = width_states(ns, tau, true);
    let runs = size.scale(1000);
    let mut covered = 0;
    for _ in 0..runs {
        let truth = random_row(&mut rng, ns, tau);
        let n = rng.gen_range(1..=200u32);
        let analogy = AnalogyOracle::identity(ns, 1);
        let mut model = ConfidenceModel::new(&analogy, n, delta_t, k).expect("model");
        let mdp = Mdp::from_rows(ns, 1, &vec![truth.clone(); ns], vec![0.0; ns], 0.9, StateId(0), tau).expect("valid");
        let p = Pair::new(0, 0);
        for _ in 0..n {
            model.record_transition(p, mdp.sample_next(p, rng.gen()));
        }
        let width = hoeffding_width(n, k, delta_t).expect("width");
        debug_assert!((model.eps_hat(p) - width).abs() < 1e-12);
        let mut dense = vec![0.0; ns];
        for &(s, q) in &truth {
            dense[s.0] += q;
        }
        for &(s, q) in model.t_hat(p) {
            dense[s.0] -= q;
        }
        let l1: f64 = dense.iter().map(|x| x.abs()).sum();
        covered += usize::from(l1 <= width);
    }
    let freq = covered as f64 / runs as f64;
    SuiteReport {
        name: "confidence interval coverage",
        cases: runs,
        failures: runs - covered,
        passed: freq >= 1.0 - delta_t,
        detail: format!("coverage {freq:.4}, required {:.2}", 1.0 - delta_t),
    }
}

/// Every replan of the safe explorers on both environments: goal set inside
/// the safe set xor a nonempty explore set, certified-unsafe pairs outside
/// the true safe set, certified-safe pairs inside it, monotone growth.
pub fn audit_suite(size: SuiteSize, seed: u64) -> Result<SuiteReport> {
    let mut tally = Tally::new("replan postconditions on seeded runs");
    for env in [EnvName::GridWorld, EnvName::Platformer] {
        let ctx = EnvContext::build(env)?;
        for kind in [AgentKind::Ase, AgentKind::UndirectedAse] {
            let mut cfg = ExperimentConfig::new(env, AgentConfig { kind, ..AgentConfig::default() });
            cfg.seed = seed;
            cfg.trials = match size {
                SuiteSize::Quick => 1,
                SuiteSize::Full => 2,
            };
            cfg.horizon = Some(match size {
                SuiteSize::Quick => 2_000,
                SuiteSize::Full => 10_000,
            });
            cfg.write_steps = false;
            for tr in run_experiment(&cfg, &ctx)? {
                for audit in &tr.audits {
                    tally.check(audit.ok(), || format!("{} on {} trial {}: {audit:?}", kind.as_str(), env.as_str(), tr.trial));
                }
            }
        }
    }
    Ok(tally.finish())
}

/// Runs every suite in a fixed order.
pub fn run_all_suites(size: SuiteSize, seed: u64) -> Vec<SuiteReport> {
    let mut reports = vec![
        safe_expand_suite(size, seed),
        inner_max_suite(size, seed),
        known_support_suite(size, seed),
        occupancy_suite(size, seed),
        optimism_suite(size, seed),
        admissibility_suite(size, seed),
    ];
    reports.push(audit_suite(size, seed).unwrap_or_else(|e| SuiteReport {
        name: "replan postconditions on seeded runs",
        cases: 0,
        failures: 1,
        passed: false,
        detail: e.to_string(),
    }));
    reports
}
