//! Acceptance gate: full-horizon seeded runs of every agent on both
//! environments plus the full property suites. Prints one PASS/FAIL line per
//! criterion and exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use ase_core::agents::{AgentConfig, AgentKind};
use ase_core::envs::EnvName;
use ase_core::harness::{run_experiment, EnvContext, ExperimentConfig, DEFAULT_TRIALS};
use ase_core::verify::{run_all_suites, SuiteSize};

const SEED: u64 = 0;
const EPS_METRIC: f64 = 0.01;
/// Fraction of the horizon at the end that must contain no new suboptimal steps.
const PLATEAU_FRACTION: f64 = 0.2;

/// Per-trial numbers kept from a run; the step traces are dropped.
struct RunStats {
    agent: AgentKind,
    env: EnvName,
    unsafe_steps: Vec<usize>,
    suboptimal: Vec<usize>,
    /// Suboptimal steps inside the trailing plateau window.
    late_suboptimal: Vec<usize>,
    explored_pairs: Vec<usize>,
    audits: usize,
    audit_failures: usize,
}

impl RunStats {
    fn total_unsafe(&self) -> usize {
        self.unsafe_steps.iter().sum()
    }

    fn mean_unsafe(&self) -> f64 {
        self.total_unsafe() as f64 / self.unsafe_steps.len() as f64
    }
}

fn run(ctx: &EnvContext, env: EnvName, agent: AgentKind) -> RunStats {
    let mut cfg = ExperimentConfig::new(env, AgentConfig { kind: agent, ..Default::default() });
    cfg.trials = DEFAULT_TRIALS;
    cfg.seed = SEED;
    cfg.eps_metric = EPS_METRIC;
    let horizon = cfg.horizon();
    let window_start = horizon - (horizon as f64 * PLATEAU_FRACTION).round() as usize;
    let start = Instant::now();
    let traces = run_experiment(&cfg, ctx).unwrap_or_else(|e| panic!("{} on {}: {e}", agent.as_str(), env.as_str()));
    let stats = RunStats {
        agent,
        env,
        unsafe_steps: traces.iter().map(|t| t.total_unsafe()).collect(),
        suboptimal: traces.iter().map(|t| t.total_suboptimal()).collect(),
        late_suboptimal: traces
            .iter()
            .map(|t| t.steps[window_start..].iter().filter(|r| r.suboptimal).count())
            .collect(),
        explored_pairs: traces.iter().map(|t| t.explored_pairs).collect(),
        audits: traces.iter().map(|t| t.audits.len()).sum(),
        audit_failures: traces.iter().flat_map(|t| &t.audits).filter(|a| !a.ok()).count(),
    };
    println!(
        "  {:<16} {:<11} unsafe {:?} suboptimal {:?} explored {:?} ({:.1}s)",
        agent.as_str(),
        env.as_str(),
        stats.unsafe_steps,
        stats.suboptimal,
        stats.explored_pairs,
        start.elapsed().as_secs_f64()
    );
    stats
}

fn find(runs: &[RunStats], env: EnvName, agent: AgentKind) -> &RunStats {
    runs.iter().find(|r| r.env == env && r.agent == agent).expect("run present")
}

fn report(results: &mut Vec<bool>, name: &str, passed: bool, detail: String) {
    println!("{} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
    results.push(passed);
}

fn main() -> ExitCode {
    let envs = [EnvName::GridWorld, EnvName::Platformer];
    println!("acceptance runs ({DEFAULT_TRIALS} trials, base seed {SEED})");
    let mut runs = Vec::new();
    for env in envs {
        let ctx = EnvContext::build(env).expect("environment builds");
        for agent in AgentKind::ALL {
            runs.push(run(&ctx, env, agent));
        }
    }

    let mut results = Vec::new();

    let safe_agents = [AgentKind::Ase, AgentKind::UndirectedAse, AgentKind::SafeRmax, AgentKind::SafeEpsGreedy];
    let unsafe_total: usize = envs
        .iter()
        .flat_map(|&env| safe_agents.iter().map(move |&agent| (env, agent)))
        .map(|(env, agent)| find(&runs, env, agent).total_unsafe())
        .sum();
    report(
        &mut results,
        "1 safety",
        unsafe_total == 0,
        format!("safe agents took {unsafe_total} negative-reward steps over all seeds and environments (required 0)"),
    );

    let unsafe_agents = [AgentKind::Mbie, AgentKind::Rmax, AgentKind::EpsGreedy];
    let mut positive = true;
    let mut counts = Vec::new();
    for env in envs {
        for agent in unsafe_agents {
            let r = find(&runs, env, agent);
            positive &= r.total_unsafe() > 0;
            counts.push(format!("{}/{} {:.1}", agent.as_str(), env.as_str(), r.mean_unsafe()));
        }
    }
    let rmax_grid = find(&runs, EnvName::GridWorld, AgentKind::Rmax).mean_unsafe();
    let mbie_grid = find(&runs, EnvName::GridWorld, AgentKind::Mbie).mean_unsafe();
    report(
        &mut results,
        "2 unsafe baselines",
        positive && rmax_grid > mbie_grid,
        format!("mean unsafe steps per trial: {}; grid rmax > mbie: {}", counts.join(", "), rmax_grid > mbie_grid),
    );

    let ase_grid = find(&runs, EnvName::GridWorld, AgentKind::Ase);
    report(
        &mut results,
        "3 convergence",
        ase_grid.late_suboptimal.iter().all(|&n| n == 0),
        format!(
            "ase on grid_world: suboptimal steps in the final {:.0}% per trial {:?} (required all 0)",
            PLATEAU_FRACTION * 100.0,
            ase_grid.late_suboptimal
        ),
    );

    let ase_plat = find(&runs, EnvName::Platformer, AgentKind::Ase);
    let rmax_plat = find(&runs, EnvName::Platformer, AgentKind::SafeRmax);
    let fewer = ase_plat.explored_pairs.iter().zip(&rmax_plat.explored_pairs).all(|(a, b)| a < b);
    report(
        &mut results,
        "4 directedness",
        fewer,
        format!(
            "platformer distinct pairs explored per seed: ase {:?} vs safe_rmax {:?} (required ase < safe_rmax on every seed)",
            ase_plat.explored_pairs, rmax_plat.explored_pairs
        ),
    );

    let start = Instant::now();
    let suites = run_all_suites(SuiteSize::Full, SEED);
    for s in &suites {
        println!("  {s}");
    }
    let run_audits: usize = runs.iter().map(|r| r.audits).sum();
    let run_audit_failures: usize = runs.iter().map(|r| r.audit_failures).sum();
    let failed: Vec<&str> = suites.iter().filter(|s| !s.passed).map(|s| s.name).collect();
    report(
        &mut results,
        "5 property suites",
        failed.is_empty() && run_audit_failures == 0,
        format!(
            "{} suites in {:.1}s, failed {:?}; replan audits from acceptance runs {run_audits}, failing {run_audit_failures}",
            suites.len(),
            start.elapsed().as_secs_f64(),
            failed
        ),
    );

    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
