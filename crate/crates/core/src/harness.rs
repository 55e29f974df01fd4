//! Experiment orchestration: configuration, seeded parallel runs, regret
//! traces and their aggregation, CSV/JSON output.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coreset::{run_coreset, CoresetConfig, CoresetReport, ThresholdRule};
use crate::environment::{stream_rng, ActionSpaceSpec, Environment, ProtectedInstance, RoundOutcome, POLICY_STREAM};
use crate::error::{Error, Result};
use crate::instances;
use crate::linalg;
use crate::policies::{
    eps_greedy_step, plinucb_step, rr_linucb_step, ActionChoice, AlphaFormula, BetaCount, DeltaSplit,
    DirectionMode, EpsGreedyState, EpsSchedule, IndexSet, OptimizerConfig, PolicyOptions, ProtectedLinUCBState,
    RoundRobinState,
};

pub const WORKERS_ENV: &str = "BANDITLAB_WORKERS";

/// Learning algorithm to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Plinucb,
    RrLinucb,
    RrLinucb2,
    EpsGreedy,
}

/// Where the instance comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSource {
    /// Instance JSON file; relative paths resolve against the config file's directory.
    File { path: PathBuf },
    Synthetic {
        d: usize,
        #[serde(rename = "L")]
        l: usize,
        s: usize,
        #[serde(rename = "M", default = "one")]
        m: f64,
        #[serde(rename = "R")]
        r: f64,
        #[serde(default)]
        seed: u64,
        action_space: ActionSpaceSpec,
    },
    LowerBound {
        horizon: u64,
        which: u8,
        #[serde(default)]
        seed: u64,
    },
    Example1,
}

fn one() -> f64 {
    1.0
}

fn default_runs() -> usize {
    10
}

fn default_rho() -> f64 {
    0.1
}

fn default_delta() -> f64 {
    0.001
}

fn default_true() -> bool {
    true
}

/// Everything needed to reproduce an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceSource,
    pub policy: PolicyKind,
    pub horizon: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// ε-greedy exploration constant.
    #[serde(default = "one")]
    pub epsilon: f64,
    /// Overrides the round-robin schedule implied by the policy name.
    #[serde(default)]
    pub schedule: Option<EpsSchedule>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub delta_split: DeltaSplit,
    #[serde(default)]
    pub index_set: IndexSet,
    #[serde(default)]
    pub alpha_formula: AlphaFormula,
    #[serde(default)]
    pub direction: DirectionMode,
    #[serde(default)]
    pub coreset_threshold: ThresholdRule,
    #[serde(default)]
    pub coreset_max_rounds: Option<u64>,
    #[serde(default = "default_true")]
    pub charge_coreset: bool,
    #[serde(default)]
    pub beta_count: BetaCount,
    /// Joint protected-parameter alternatives for the optimistic search,
    /// keyed by protected index.
    #[serde(default)]
    pub candidates: Vec<BTreeMap<usize, Vec<f64>>>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Defaults for everything but the essentials.
    pub fn new(instance: InstanceSource, policy: PolicyKind, horizon: u64) -> Self {
        serde_json::from_value(serde_json::json!({
            "instance": instance,
            "policy": policy,
            "horizon": horizon,
        }))
        .expect("minimal config deserializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads a config file, resolving a relative instance path against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read config '{}': {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)
            .map_err(|e| Error::invalid(format!("config '{}': {e}", path.display())))?;
        if let InstanceSource::File { path: p } = &mut cfg.instance {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Every violated constraint, reported together.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.horizon < 1 {
            problems.push("horizon must be >= 1".to_string());
        }
        if self.runs < 1 {
            problems.push("runs must be >= 1".to_string());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            problems.push(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            problems.push(format!("rho must be > 0, got {}", self.rho));
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            problems.push(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        if self.optimizer.max_iters < 1 {
            problems.push("optimizer.max_iters must be >= 1".to_string());
        }
        if !(self.optimizer.tol >= 0.0) {
            problems.push("optimizer.tol must be >= 0".to_string());
        }
        if self.workers == Some(0) {
            problems.push("workers must be >= 1".to_string());
        }
        if self.coreset_max_rounds == Some(0) {
            problems.push("coreset_max_rounds must be >= 1".to_string());
        }
        if let InstanceSource::LowerBound { which, .. } = self.instance {
            if which != 1 && which != 2 {
                problems.push(format!("lower_bound.which must be 1 or 2, got {which}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(problems.join("; ")))
        }
    }

    pub fn build_instance(&self) -> Result<ProtectedInstance> {
        match &self.instance {
            InstanceSource::File { path } => ProtectedInstance::read(path),
            InstanceSource::Synthetic {
                d,
                l,
                s,
                m,
                r,
                seed,
                action_space,
            } => instances::gen_synthetic(*d, *l, *s, *m, *r, *seed, action_space.clone()),
            InstanceSource::LowerBound { horizon, which, seed } => {
                let pair = instances::gen_lower_bound(*horizon, *seed)?;
                Ok(if *which == 2 { pair.instance2 } else { pair.instance1 })
            }
            InstanceSource::Example1 => Ok(instances::gen_example1()),
        }
    }

    fn policy_options(&self) -> PolicyOptions {
        PolicyOptions {
            optimizer: self.optimizer,
            alpha: self.alpha_formula,
            direction: self.direction,
            index_set: self.index_set,
            delta_split: self.delta_split,
            beta_count: self.beta_count,
            horizon: self.horizon,
        }
    }

    fn worker_count(&self) -> Result<Option<usize>> {
        match std::env::var(WORKERS_ENV) {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(n) if n >= 1 => Ok(Some(n)),
                _ => Err(Error::invalid(format!("{WORKERS_ENV} must be a positive integer, got '{v}'"))),
            },
            Err(_) => Ok(self.workers),
        }
    }
}

/// One row of a regret trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: u64,
    pub index: usize,
    pub feedback: f64,
    pub instant_regret: f64,
    pub cum_regret: f64,
    pub arm: Vec<f64>,
}

/// Everything one run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretTrace {
    pub run_id: usize,
    pub records: Vec<TraceRecord>,
    pub coreset: Option<CoresetReport>,
    pub wall_clock_secs: f64,
    /// Set when the run failed; records then hold what was completed.
    pub error: Option<String>,
}

impl RegretTrace {
    pub fn final_regret(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cum_regret)
    }

    pub fn cumulative(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.cum_regret).collect()
    }
}

struct Recorder {
    records: Vec<TraceRecord>,
    cum: f64,
}

impl Recorder {
    fn push(&mut self, o: &RoundOutcome) {
        self.cum += o.suboptimality;
        self.records.push(TraceRecord {
            t: self.records.len() as u64 + 1,
            index: o.action.index,
            feedback: o.feedback,
            instant_regret: o.suboptimality,
            cum_regret: self.cum,
            arm: o.action.arm.clone(),
        });
    }
}

/// Plays `(arm, index)` against a fresh action set, for exploration queries.
fn query(env: &mut Environment<'_>, arm: &[f64], index: usize) -> Result<RoundOutcome> {
    let arms = env.next_arms();
    let choice = ActionChoice {
        arm: arm.to_vec(),
        index,
    };
    env.play(&arms, &choice, None)
}

fn warm_start(state: &mut ProtectedLinUCBState, env: &mut Environment<'_>, rec: &mut Recorder) -> Result<()> {
    let d = state.dim();
    for i in state.untrained() {
        for j in 0..d {
            let e = linalg::basis_vector(d, j);
            let o = query(env, &e, i)?;
            state.update(i, &e, o.feedback)?;
            rec.push(&o);
        }
    }
    Ok(())
}

fn build_protected_state(
    cfg: &ExperimentConfig,
    instance: &ProtectedInstance,
    env: &mut Environment<'_>,
    rec: &mut Recorder,
    coreset_report: &mut Option<CoresetReport>,
) -> Result<ProtectedLinUCBState> {
    let (d, l, s) = (instance.dim(), instance.num_protected(), instance.subspace_dim());
    let opts = cfg.policy_options();
    let new_state = |coreset: Vec<usize>| {
        ProtectedLinUCBState::new(d, coreset, l, instance.noise(), instance.norm_bound(), cfg.delta, cfg.rho, opts)
    };
    let mut state = if s == 0 {
        new_state(Vec::new())?
    } else if s == l {
        new_state((1..=l).collect())?
    } else {
        let mut ccfg = CoresetConfig::new(cfg.delta, instance.noise(), instance.norm_bound())?;
        ccfg.threshold = cfg.coreset_threshold;
        if let Some(cap) = cfg.coreset_max_rounds {
            ccfg.max_rounds = cap;
        }
        let charge = cfg.charge_coreset;
        let result = {
            let oracle = |a: &[f64], i: usize| {
                let o = query(env, a, i)?;
                if charge {
                    rec.push(&o);
                }
                Ok(o.feedback)
            };
            run_coreset(oracle, l, d, s, &ccfg)?
        };
        *coreset_report = Some(result.report());
        let mut state = new_state(result.subset.clone())?;
        for &i in &result.subset {
            let mut est = result.estimators[i - 1].clone();
            est.rebase_regularizer(cfg.rho)?;
            state.set_estimator(i, est)?;
        }
        state
    };
    for c in &cfg.candidates {
        state.add_candidate(c.clone())?;
    }
    warm_start(&mut state, env, rec)?;
    Ok(state)
}

fn run_policy(
    cfg: &ExperimentConfig,
    instance: &ProtectedInstance,
    env: &mut Environment<'_>,
    rec: &mut Recorder,
    coreset_report: &mut Option<CoresetReport>,
    run_seed: u64,
) -> Result<()> {
    let mut rng = stream_rng(run_seed, POLICY_STREAM);
    match cfg.policy {
        PolicyKind::Plinucb => {
            let mut state = build_protected_state(cfg, instance, env, rec, coreset_report)?;
            for _ in 0..cfg.horizon {
                let arms = env.next_arms();
                let o = plinucb_step(&mut state, &arms, env, &mut rng)?;
                rec.push(&o);
            }
        }
        PolicyKind::RrLinucb | PolicyKind::RrLinucb2 => {
            let (d, l) = (instance.dim(), instance.num_protected());
            let mut inner = ProtectedLinUCBState::new(
                d,
                (1..=l).collect(),
                l,
                instance.noise(),
                instance.norm_bound(),
                cfg.delta,
                cfg.rho,
                cfg.policy_options(),
            )?;
            warm_start(&mut inner, env, rec)?;
            let exponent = if cfg.policy == PolicyKind::RrLinucb { 0.5 } else { 0.25 };
            let schedule = cfg.schedule.unwrap_or(EpsSchedule::Power { exponent });
            let mut state = RoundRobinState::new(inner, schedule);
            for _ in 0..cfg.horizon {
                let arms = env.next_arms();
                let o = rr_linucb_step(&mut state, &arms, env, &mut rng)?;
                rec.push(&o);
            }
        }
        PolicyKind::EpsGreedy => {
            let mut state = EpsGreedyState::new(
                instance.dim(),
                instance.num_protected(),
                instance.subspace_dim(),
                cfg.epsilon,
                cfg.rho,
            )?;
            for _ in 0..cfg.horizon {
                let arms = env.next_arms();
                let o = eps_greedy_step(&mut state, &arms, env, &mut rng)?;
                rec.push(&o);
            }
        }
    }
    Ok(())
}

/// Executes one run with seed `base_seed + run_id`. Failures are recorded in the trace.
pub fn run_single(cfg: &ExperimentConfig, instance: &ProtectedInstance, run_id: usize) -> RegretTrace {
    let start = Instant::now();
    let run_seed = cfg.base_seed.wrapping_add(run_id as u64);
    let mut env = Environment::new(instance, run_seed);
    let mut rec = Recorder {
        records: Vec::with_capacity(cfg.horizon as usize),
        cum: 0.0,
    };
    let mut coreset = None;
    let outcome = run_policy(cfg, instance, &mut env, &mut rec, &mut coreset, run_seed);
    if let Err(e) = &outcome {
        log::error!("run {run_id} failed: {e}");
    }
    RegretTrace {
        run_id,
        records: rec.records,
        coreset,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        error: outcome.err().map(|e| e.to_string()),
    }
}

/// Runs every configured run in parallel on the given instance.
pub fn run_experiment_on(cfg: &ExperimentConfig, instance: &ProtectedInstance) -> Result<Vec<RegretTrace>> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.worker_count()? {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| {
        (0..cfg.runs)
            .into_par_iter()
            .map(|run_id| run_single(cfg, instance, run_id))
            .collect()
    }))
}

/// Validates the config, builds its instance and runs the experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RegretTrace>> {
    cfg.validate()?;
    let instance = cfg.build_instance()?;
    run_experiment_on(cfg, &instance)
}

/// Per-round mean and sample standard deviation of cumulative regret.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub t: u64,
    pub mean: f64,
    pub std: f64,
}

/// Mean ± sample std (n − 1) of cumulative regret across traces.
/// Values are combined in sorted order, so the result does not depend on
/// the order of the traces.
pub fn aggregate(traces: &[RegretTrace]) -> Result<Vec<SummaryRow>> {
    let first = traces.first().ok_or_else(|| Error::invalid("aggregate needs at least one trace"))?;
    let horizon = first.records.len();
    if let Some(bad) = traces.iter().find(|t| t.records.len() != horizon) {
        return Err(Error::invalid(format!(
            "run {} has {} rounds, run {} has {horizon}",
            bad.run_id,
            bad.records.len(),
            first.run_id
        )));
    }
    let n = traces.len() as f64;
    let mut values = Vec::with_capacity(traces.len());
    Ok((0..horizon)
        .map(|k| {
            values.clear();
            values.extend(traces.iter().map(|t| t.records[k].cum_regret));
            values.sort_by(f64::total_cmp);
            let mean = values.iter().sum::<f64>() / n;
            let mut dev: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
            dev.sort_by(f64::total_cmp);
            let std = if traces.len() > 1 {
                (dev.iter().sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                t: first.records[k].t,
                mean,
                std,
            }
        })
        .collect())
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes traces as `run_id,t,index,feedback,instant_regret,cum_regret,arm_0..`.
pub fn write_traces<W: std::io::Write>(out: W, traces: &[RegretTrace]) -> Result<()> {
    let d = traces
        .iter()
        .flat_map(|t| t.records.first())
        .map(|r| r.arm.len())
        .next()
        .unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["run_id", "t", "index", "feedback", "instant_regret", "cum_regret"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..d).map(|j| format!("arm_{j}")));
    w.write_record(&header)?;
    for trace in traces {
        for r in &trace.records {
            let mut row = vec![
                trace.run_id.to_string(),
                r.t.to_string(),
                r.index.to_string(),
                fmt_f64(r.feedback),
                fmt_f64(r.instant_regret),
                fmt_f64(r.cum_regret),
            ];
            row.extend(r.arm.iter().map(|&v| fmt_f64(v)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses a trace CSV back into per-run traces, ordered by run id.
pub fn read_traces<R: std::io::Read>(input: R) -> Result<Vec<RegretTrace>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let fixed = ["run_id", "t", "index", "feedback", "instant_regret", "cum_regret"];
    if headers.len() < fixed.len() || headers.iter().zip(fixed).any(|(h, f)| h != f) {
        return Err(Error::invalid("trace CSV header does not match the expected columns"));
    }
    let mut runs: BTreeMap<usize, Vec<TraceRecord>> = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let num = |i: usize| -> Result<f64> {
            rec.get(i).and_then(|c| c.trim().parse::<f64>().ok()).ok_or_else(|| Error::Parse {
                row,
                msg: format!("column '{}' is not numeric", &headers[i]),
            })
        };
        let int = |i: usize| -> Result<u64> {
            rec.get(i).and_then(|c| c.trim().parse::<u64>().ok()).ok_or_else(|| Error::Parse {
                row,
                msg: format!("column '{}' is not an integer", &headers[i]),
            })
        };
        let record = TraceRecord {
            t: int(1)?,
            index: int(2)? as usize,
            feedback: num(3)?,
            instant_regret: num(4)?,
            cum_regret: num(5)?,
            arm: (6..headers.len()).map(num).collect::<Result<_>>()?,
        };
        runs.entry(int(0)? as usize).or_default().push(record);
    }
    Ok(runs
        .into_iter()
        .map(|(run_id, records)| RegretTrace {
            run_id,
            records,
            coreset: None,
            wall_clock_secs: 0.0,
            error: None,
        })
        .collect())
}

pub fn write_summary<W: std::io::Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "mean", "std"])?;
    for r in rows {
        w.write_record([r.t.to_string(), fmt_f64(r.mean), fmt_f64(r.std)])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct RunMeta<'a> {
    run_id: usize,
    rounds: usize,
    final_regret: f64,
    wall_clock_secs: f64,
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct CoresetEntry<'a> {
    run_id: usize,
    #[serde(flatten)]
    report: &'a CoresetReport,
}

/// Writes `traces.csv`, `summary.csv` (successful runs only), `coreset.json`
/// and `runs.json` into `dir`.
pub fn write_outputs(dir: &Path, traces: &[RegretTrace]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_traces(std::fs::File::create(dir.join("traces.csv"))?, traces)?;
    let ok: Vec<RegretTrace> = traces.iter().filter(|t| t.error.is_none()).cloned().collect();
    if !ok.is_empty() {
        write_summary(std::fs::File::create(dir.join("summary.csv"))?, &aggregate(&ok)?)?;
    }
    let coresets: Vec<CoresetEntry> = traces
        .iter()
        .filter_map(|t| t.coreset.as_ref().map(|report| CoresetEntry { run_id: t.run_id, report }))
        .collect();
    let mut f = std::fs::File::create(dir.join("coreset.json"))?;
    serde_json::to_writer_pretty(&mut f, &coresets)?;
    writeln!(f)?;
    let meta: Vec<RunMeta> = traces
        .iter()
        .map(|t| RunMeta {
            run_id: t.run_id,
            rounds: t.records.len(),
            final_regret: t.final_regret(),
            wall_clock_secs: t.wall_clock_secs,
            error: t.error.as_deref(),
        })
        .collect();
    let mut f = std::fs::File::create(dir.join("runs.json"))?;
    serde_json::to_writer_pretty(&mut f, &meta)?;
    writeln!(f)?;
    Ok(())
}

/// Reads `traces.csv` from `dir`, writes `summary.csv` next to it.
pub fn aggregate_dir(dir: &Path) -> Result<Vec<SummaryRow>> {
    let path = dir.join("traces.csv");
    let file = std::fs::File::open(&path)
        .map_err(|e| Error::invalid(format!("cannot open '{}': {e}", path.display())))?;
    let rows = aggregate(&read_traces(file)?)?;
    write_summary(std::fs::File::create(dir.join("summary.csv"))?, &rows)?;
    Ok(rows)
}
