//! Seeded experiments: configuration, trial loop, metrics, CSV output.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{Agent, AgentConfig, Audit, Mode};
use crate::envs::{EnvName, Environment};
use crate::error::{Error, Result};
use crate::mdp::{Pair, QTable, StateId, DEFAULT_VI_TOL};
use crate::oracle::{compute_true_safe_set, is_eps_suboptimal, safe_optimal_q, TrueSafeSet, DEFAULT_EPS_METRIC};

pub const DEFAULT_TRIALS: usize = 5;
pub const STEPS_HEADER: [&str; 8] = ["t", "state", "action", "reward", "mode", "counted", "suboptimal", "unsafe"];
pub const CURVE_HEADER: [&str; 4] = ["t", "mean", "min", "max"];
pub const SUMMARY_HEADER: [&str; 5] = ["agent", "env", "trials", "total_suboptimal", "total_unsafe"];

/// Steps per trial when the config leaves the horizon unset.
pub fn default_horizon(env: EnvName) -> usize {
    match env {
        EnvName::GridWorld => 50_000,
        EnvName::Platformer => 200_000,
    }
}

fn default_trials() -> usize {
    DEFAULT_TRIALS
}

fn default_eps_metric() -> f64 {
    DEFAULT_EPS_METRIC
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_true() -> bool {
    true
}

/// One experiment: an agent on an environment over several seeded trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvName,
    #[serde(default)]
    pub agent: AgentConfig,
    /// Steps per trial; defaults per environment.
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Base seed; trial `k` uses stream `k` of it.
    #[serde(default)]
    pub seed: u64,
    /// Explicit per-trial seeds, overriding `seed`.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "default_eps_metric")]
    pub eps_metric: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Write the per-step log of every trial.
    #[serde(default = "default_true")]
    pub write_steps: bool,
}

impl ExperimentConfig {
    pub fn new(env: EnvName, agent: AgentConfig) -> Self {
        ExperimentConfig {
            env,
            agent,
            horizon: None,
            trials: DEFAULT_TRIALS,
            seed: 0,
            seeds: None,
            eps_metric: DEFAULT_EPS_METRIC,
            output_dir: default_output_dir(),
            write_steps: true,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon.unwrap_or_else(|| default_horizon(self.env))
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.horizon == Some(0) {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if let Some(seeds) = &self.seeds {
            if seeds.len() != self.trials {
                return Err(Error::Config(format!("{} seeds given for {} trials", seeds.len(), self.trials)));
            }
        }
        if !(self.eps_metric >= 0.0) {
            return Err(Error::Config("eps_metric must be nonnegative".into()));
        }
        self.agent.validate()
    }

    /// The trial's random stream.
    pub fn trial_rng(&self, trial: usize) -> ChaCha8Rng {
        match &self.seeds {
            Some(seeds) => ChaCha8Rng::seed_from_u64(seeds[trial]),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(trial as u64);
                rng
            }
        }
    }
}

/// Parses a JSON config; unknown keys are errors.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io { context: path.to_path_buf(), source })?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// The environment with its ground truth, computed once and shared by trials.
pub struct EnvContext {
    pub env: Arc<Environment>,
    pub truth: Arc<TrueSafeSet>,
    pub q_star: QTable,
}

impl EnvContext {
    pub fn build(name: EnvName) -> Result<Self> {
        let env = name.build();
        let truth = compute_true_safe_set(&env.mdp, &env.z0)?;
        let q_star = safe_optimal_q(&env.mdp, &truth.z_safe, DEFAULT_VI_TOL)?;
        Ok(EnvContext { env: Arc::new(env), truth: Arc::new(truth), q_star })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub state: StateId,
    pub action: crate::mdp::ActionId,
    pub reward: f64,
    pub mode: Mode,
    pub counted: bool,
    pub suboptimal: bool,
    pub unsafe_: bool,
}

#[derive(Clone, Debug)]
pub struct TrialResult {
    pub trial: usize,
    pub steps: Vec<StepRecord>,
    pub audits: Vec<Audit>,
    /// Distinct pairs tried at least once.
    pub explored_pairs: usize,
    pub safe_set_size: usize,
    pub replans: usize,
}

impl TrialResult {
    pub fn total_suboptimal(&self) -> usize {
        self.steps.iter().filter(|r| r.suboptimal).count()
    }

    pub fn total_unsafe(&self) -> usize {
        self.steps.iter().filter(|r| r.unsafe_).count()
    }

    /// Cumulative ε-suboptimal count after each step.
    pub fn cumulative_suboptimal(&self) -> Vec<usize> {
        self.steps
            .iter()
            .scan(0, |acc, r| {
                *acc += r.suboptimal as usize;
                Some(*acc)
            })
            .collect()
    }
}

/// Runs one trial. Dangerous and goal states are terminal and lead back to
/// the initial state, so the loop never resets explicitly.
pub fn run_trial(cfg: &ExperimentConfig, ctx: &EnvContext, trial: usize) -> Result<TrialResult> {
    let mdp = &ctx.env.mdp;
    let mut rng = cfg.trial_rng(trial);
    let mut agent = Agent::new(cfg.agent.clone(), Arc::clone(&ctx.env), Some(Arc::new(ctx.truth.z_safe.clone())))?;
    let horizon = cfg.horizon();
    let mut steps = Vec::with_capacity(horizon);
    let mut s = mdp.s_init;
    for t in 0..horizon {
        let (a, mode) = agent.select_action(s, &mut rng);
        let p = Pair { s, a };
        let reward = mdp.reward(p);
        let s2 = mdp.sample_next(p, rng.gen());
        let counted = agent.observe(s, a, s2)?;
        steps.push(StepRecord {
            t,
            state: s,
            action: a,
            reward,
            mode,
            counted,
            suboptimal: is_eps_suboptimal(&ctx.q_star, s, a, cfg.eps_metric),
            unsafe_: reward < 0.0,
        });
        s = s2;
    }
    Ok(TrialResult {
        trial,
        steps,
        audits: agent.audits().to_vec(),
        explored_pairs: agent.model().visited().len(),
        safe_set_size: agent.z_safe().len(),
        replans: agent.replans(),
    })
}

/// Runs every trial of `cfg` in parallel.
pub fn run_experiment(cfg: &ExperimentConfig, ctx: &EnvContext) -> Result<Vec<TrialResult>> {
    cfg.validate()?;
    (0..cfg.trials).into_par_iter().map(|k| run_trial(cfg, ctx, k)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub t: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Cross-trial metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub trials: usize,
    pub curve: Vec<CurvePoint>,
    /// Per-trial means of the totals.
    pub mean_suboptimal: f64,
    pub mean_unsafe: f64,
}

/// Per-step mean/min/max of cumulative ε-suboptimal counts.
pub fn aggregate_metrics(traces: &[TrialResult]) -> Result<Aggregate> {
    let first = traces.first().ok_or_else(|| Error::Config("no traces to aggregate".into()))?;
    let horizon = first.steps.len();
    if let Some(bad) = traces.iter().find(|tr| tr.steps.len() != horizon) {
        return Err(Error::HorizonMismatch(horizon, bad.steps.len()));
    }
    let cumulative: Vec<Vec<usize>> = traces.iter().map(TrialResult::cumulative_suboptimal).collect();
    let k = traces.len() as f64;
    let curve = (0..horizon)
        .map(|t| {
            let vals = cumulative.iter().map(|c| c[t] as f64);
            CurvePoint {
                t,
                mean: vals.clone().sum::<f64>() / k,
                min: vals.clone().fold(f64::INFINITY, f64::min),
                max: vals.fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    Ok(Aggregate {
        trials: traces.len(),
        curve,
        mean_suboptimal: traces.iter().map(|tr| tr.total_suboptimal() as f64).sum::<f64>() / k,
        mean_unsafe: traces.iter().map(|tr| tr.total_unsafe() as f64).sum::<f64>() / k,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|source| Error::Csv { context: path.to_path_buf(), source })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv { context: path.to_path_buf(), source }
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

pub fn write_steps_csv(steps: &[StepRecord], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(STEPS_HEADER).map_err(csv_err(path))?;
    for r in steps {
        w.write_record([
            r.t.to_string(),
            r.state.0.to_string(),
            r.action.0.to_string(),
            r.reward.to_string(),
            r.mode.as_str().to_string(),
            flag(r.counted).to_string(),
            flag(r.suboptimal).to_string(),
            flag(r.unsafe_).to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| Error::Io { context: path.to_path_buf(), source })
}

pub fn write_curve_csv(curve: &[CurvePoint], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(CURVE_HEADER).map_err(csv_err(path))?;
    for c in curve {
        w.write_record([c.t.to_string(), c.mean.to_string(), c.min.to_string(), c.max.to_string()])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| Error::Io { context: path.to_path_buf(), source })
}

/// `trial,t,<state coordinates>,unsafe`, coordinates named by the layout.
pub fn write_trajectories_csv(traces: &[TrialResult], env: &Environment, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let coords = &env.layout.coord_names;
    let header: Vec<&str> = ["trial", "t"].into_iter().chain(coords.iter().map(String::as_str)).chain(["unsafe"]).collect();
    w.write_record(&header).map_err(csv_err(path))?;
    for tr in traces {
        for r in &tr.steps {
            let mut row = vec![tr.trial.to_string(), r.t.to_string()];
            row.extend(env.layout.state_coords[r.state.0].iter().map(i64::to_string));
            row.push(flag(r.unsafe_).to_string());
            w.write_record(&row).map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(|source| Error::Io { context: path.to_path_buf(), source })
}

pub fn write_summary_csv(cfg: &ExperimentConfig, agg: &Aggregate, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(SUMMARY_HEADER).map_err(csv_err(path))?;
    w.write_record([
        cfg.agent.kind.as_str().to_string(),
        cfg.env.as_str().to_string(),
        agg.trials.to_string(),
        agg.mean_suboptimal.to_string(),
        agg.mean_unsafe.to_string(),
    ])
    .map_err(csv_err(path))?;
    w.flush().map_err(|source| Error::Io { context: path.to_path_buf(), source })
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(path, text).map_err(|source| Error::Io { context: path.to_path_buf(), source })
}

/// Writes `summary.csv`, `curve.csv`, `trajectories.csv`, `layout.json`,
/// `config.json`, and `trial_<k>/steps.csv` under `dir`.
pub fn emit_outputs(cfg: &ExperimentConfig, env: &Environment, traces: &[TrialResult], agg: &Aggregate, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { context: dir.to_path_buf(), source })?;
    if cfg.write_steps {
        traces.par_iter().try_for_each(|tr| {
            let sub = dir.join(format!("trial_{}", tr.trial));
            fs::create_dir_all(&sub).map_err(|source| Error::Io { context: sub.clone(), source })?;
            write_steps_csv(&tr.steps, &sub.join("steps.csv"))
        })?;
    }
    write_curve_csv(&agg.curve, &dir.join("curve.csv"))?;
    write_trajectories_csv(traces, env, &dir.join("trajectories.csv"))?;
    write_summary_csv(cfg, agg, &dir.join("summary.csv"))?;
    write_json(&env.layout, &dir.join("layout.json"))?;
    write_json(cfg, &dir.join("config.json"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::ActionId;

    fn trace(trial: usize, subs: &[bool]) -> TrialResult {
        TrialResult {
            trial,
            steps: subs
                .iter()
                .enumerate()
                .map(|(t, &s)| StepRecord {
                    t,
                    state: StateId(0),
                    action: ActionId(0),
                    reward: 0.0,
                    mode: Mode::Goal,
                    counted: false,
                    suboptimal: s,
                    unsafe_: false,
                })
                .collect(),
            audits: Vec::new(),
            explored_pairs: 0,
            safe_set_size: 0,
            replans: 0,
        }
    }

    #[test]
    fn single_trace_curve_is_flat_band() {
        let agg = aggregate_metrics(&[trace(0, &[true, false, true])]).unwrap();
        for c in &agg.curve {
            assert_eq!(c.mean, c.min);
            assert_eq!(c.mean, c.max);
        }
        assert_eq!(agg.curve[2].mean, 2.0);
    }

    #[test]
    fn zero_traces_give_zero_curve() {
        let agg = aggregate_metrics(&[trace(0, &[false; 4]), trace(1, &[false; 4])]).unwrap();
        assert!(agg.curve.iter().all(|c| c.mean == 0.0 && c.max == 0.0));
    }

    #[test]
    fn mismatched_horizons_rejected() {
        let err = aggregate_metrics(&[trace(0, &[false; 3]), trace(1, &[false; 4])]).unwrap_err();
        assert!(matches!(err, Error::HorizonMismatch(3, 4)));
    }

    #[test]
    fn mean_min_max_across_trials() {
        let agg = aggregate_metrics(&[trace(0, &[true, true]), trace(1, &[false, true])]).unwrap();
        assert_eq!(agg.curve[1], CurvePoint { t: 1, mean: 1.5, min: 1.0, max: 2.0 });
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config_str(r#"{"env": "grid_world", "agent": {"kind": "ase"}}"#).unwrap();
        assert_eq!(cfg.trials, 5);
        assert_eq!(cfg.horizon(), 50_000);
        assert_eq!(cfg.eps_metric, 0.01);
        assert_eq!(cfg.agent, AgentConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config_str(r#"{"env": "grid_world", "agent": {"kind": "ase", "gama": 0.9}}"#).unwrap_err();
        assert!(err.to_string().contains("gama"), "{err}");
        let err = parse_config_str(r#"{"env": "grid_world", "horizn": 3}"#).unwrap_err();
        assert!(err.to_string().contains("horizn"), "{err}");
    }

    #[test]
    fn config_round_trip() {
        let mut cfg = ExperimentConfig::new(EnvName::Platformer, AgentConfig::default());
        cfg.seeds = Some(vec![3, 4, 5, 6, 7]);
        cfg.agent.m = Some(12);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(parse_config_str(&text).unwrap(), cfg);
    }

    #[test]
    fn invalid_counts_rejected() {
        assert!(parse_config_str(r#"{"env": "grid_world", "trials": 0}"#).is_err());
        assert!(parse_config_str(r#"{"env": "grid_world", "horizon": 0}"#).is_err());
        assert!(parse_config_str(r#"{"env": "grid_world", "trials": 2, "seeds": [1]}"#).is_err());
    }
}
