//! End-to-end runs: synthesize pipelines, carve graphs, schedule, simulate,
//! and tabulate sweeps over decode skew and seeds.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::graph::{construct_graph_with_roster, GraphConfig, GraphError};
use crate::scheduler::{run_policy, Instance, Policy, ScheduleError, DEFAULT_WINDOW};
use crate::sim::{simulate, SimError, SimulationReport};
use crate::slowdown::SlowdownModel;
use crate::workload::{
    contiguous_assignment, expand_with_roster, generate_synthetic, ExpandOptions, GeneratorConfig, LatencyModel,
    LogNormalTokens, PipelineSpec, WorkloadError,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("experiment config: {0}")]
    Config(String),
}

/// Everything needed to reproduce a run apart from the slowdown model and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Template for every pipeline; only `pipeline_id` differs between them.
    pub generator: GeneratorConfig,
    pub pipelines: u32,
    pub policies: Vec<Policy>,
    pub window: usize,
    pub graph: GraphConfig,
    pub latency: LatencyModel,
    pub expand: ExpandOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::new(1024, 2, LogNormalTokens::new(384.0, 0.75)),
            pipelines: 2,
            policies: vec![Policy::Serial, Policy::Lookahead { window: DEFAULT_WINDOW }],
            window: DEFAULT_WINDOW,
            graph: GraphConfig::default(),
            latency: LatencyModel::default(),
            expand: ExpandOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.into()));
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if self.graph.stability_window == 0 {
            return bad("stability window must be at least 1");
        }
        if self.pipelines == 0 {
            return bad("at least one pipeline is required");
        }
        if self.policies.is_empty() {
            return bad("no policies given");
        }
        self.generator.validate()?;
        Ok(())
    }

    /// Copy with the decode-length skew replaced.
    pub fn with_skew(&self, sigma: f64) -> Self {
        let mut c = self.clone();
        c.generator.decode.sigma = sigma;
        c
    }

    /// Resolved settings recorded in every report.
    pub fn metadata(&self) -> BTreeMap<String, String> {
        let g = &self.generator;
        let mut m = BTreeMap::new();
        m.insert("version".into(), crate::VERSION.to_string());
        m.insert("W".into(), self.window.to_string());
        m.insert("L_s".into(), self.graph.stability_window.to_string());
        m.insert(
            "buckets".into(),
            self.graph.buckets.lowers().iter().map(u64::to_string).collect::<Vec<_>>().join(" "),
        );
        m.insert("pipelines".into(), self.pipelines.to_string());
        m.insert("batch".into(), g.batch.to_string());
        m.insert("workers".into(), g.workers.to_string());
        m.insert("decode_median".into(), g.decode.median.to_string());
        m.insert("decode_sigma".into(), g.decode.sigma.to_string());
        m.insert("prefill_chunk".into(), self.expand.prefill_chunk_tokens.to_string());
        m.insert(
            "latency".into(),
            self.latency.per_bucket.iter().map(f64::to_string).collect::<Vec<_>>().join(" "),
        );
        m
    }
}

/// Seed of pipeline `p` within run `seed`.
pub fn pipeline_seed(seed: u64, p: u32) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ u64::from(p)
}

pub fn generate_specs(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<PipelineSpec>, ExperimentError> {
    cfg.validate()?;
    (0..cfg.pipelines)
        .map(|p| {
            let mut g = cfg.generator.clone();
            g.pipeline_id = p;
            Ok(generate_synthetic(&g, pipeline_seed(seed, p))?)
        })
        .collect()
}

/// Generates each pipeline, expands it to per-worker traces and carves the
/// sub-stage graphs.
pub fn build_instance(cfg: &ExperimentConfig, seed: u64) -> Result<Instance, ExperimentError> {
    let mut graphs = Vec::new();
    for spec in generate_specs(cfg, seed)? {
        let exp = expand_with_roster(
            &spec,
            &contiguous_assignment(&spec),
            &cfg.latency,
            &cfg.graph.buckets,
            cfg.expand,
        )?;
        graphs.push(construct_graph_with_roster(&spec, &exp, &cfg.graph)?);
    }
    Ok(Instance::new(graphs)?)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    /// Serial schedule of the shared instance; speedups are measured against it.
    pub baseline: SimulationReport,
    pub reports: Vec<SimulationReport>,
    /// Per report, the step latency of each pipeline scheduled alone on the
    /// workers by the same policy.
    pub exclusive: Vec<Vec<f64>>,
}

impl RunOutcome {
    /// Step latency of each pipeline in report `i` over its exclusive latency.
    pub fn latency_ratios(&self, i: usize) -> Vec<f64> {
        self.reports[i]
            .pipelines
            .iter()
            .zip(&self.exclusive[i])
            .map(|(m, &x)| m.step_latency / x)
            .collect()
    }
}

fn simulate_policy(
    policy: Policy,
    inst: &Instance,
    model: &SlowdownModel,
    meta: &BTreeMap<String, String>,
    seed: u64,
) -> Result<SimulationReport, ExperimentError> {
    let schedule = run_policy(policy, inst, model)?;
    let mut r = simulate(&schedule, inst, model)?;
    r.policy = policy.to_string();
    r.metadata = meta.clone();
    Ok(r.with_metadata("seed", seed).with_metadata("policy", policy))
}

pub fn run(cfg: &ExperimentConfig, model: &SlowdownModel, seed: u64) -> Result<RunOutcome, ExperimentError> {
    let inst = build_instance(cfg, seed)?;
    let meta = cfg.metadata();
    let baseline = simulate_policy(Policy::Serial, &inst, model, &meta, seed)?;
    let reports = cfg
        .policies
        .iter()
        .map(|&p| simulate_policy(p, &inst, model, &meta, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let alone: Vec<Instance> = (0..inst.n_pipelines()).map(|p| inst.single(p)).collect();
    let exclusive = cfg
        .policies
        .iter()
        .map(|&policy| {
            alone
                .iter()
                .map(|a| Ok(simulate(&run_policy(policy, a, model)?, a, model)?.makespan))
                .collect::<Result<Vec<_>, ExperimentError>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RunOutcome {
        seed,
        baseline,
        reports,
        exclusive,
    })
}

/// One row of a sweep: a (skew, seed, policy) point, or the error that
/// stopped the point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub skew: f64,
    pub seed: u64,
    pub policy: String,
    pub makespan: f64,
    pub speedup: f64,
    pub throughput: f64,
    pub mean_latency_ratio: f64,
    pub max_latency_ratio: f64,
    pub error: Option<String>,
}

pub fn sweep_points(skews: &[f64], seeds: &[u64]) -> Result<Vec<(f64, u64)>, ExperimentError> {
    if seeds.is_empty() {
        return Err(ExperimentError::Config("empty seed list".into()));
    }
    if skews.is_empty() {
        return Err(ExperimentError::Config("empty skew list".into()));
    }
    Ok(skews.iter().flat_map(|&k| seeds.iter().map(move |&s| (k, s))).collect())
}

/// Runs one sweep point. Failures become a single row carrying the error.
pub fn run_point(cfg: &ExperimentConfig, model: &SlowdownModel, skew: f64, seed: u64) -> Vec<SweepRow> {
    match run(&cfg.with_skew(skew), model, seed) {
        Ok(out) => out
            .reports
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let ratios = out.latency_ratios(i);
                SweepRow {
                    skew,
                    seed,
                    policy: r.policy.clone(),
                    makespan: r.makespan,
                    speedup: out.baseline.makespan / r.makespan,
                    throughput: r.aggregate_throughput,
                    mean_latency_ratio: ratios.iter().sum::<f64>() / ratios.len() as f64,
                    max_latency_ratio: ratios.iter().copied().fold(f64::MIN, f64::max),
                    error: None,
                }
            })
            .collect(),
        Err(e) => vec![SweepRow {
            skew,
            seed,
            policy: String::new(),
            makespan: f64::NAN,
            speedup: f64::NAN,
            throughput: f64::NAN,
            mean_latency_ratio: f64::NAN,
            max_latency_ratio: f64::NAN,
            error: Some(e.to_string()),
        }],
    }
}

/// Every (skew, seed) point in order, run sequentially.
pub fn sweep(
    cfg: &ExperimentConfig,
    model: &SlowdownModel,
    skews: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepRow>, ExperimentError> {
    cfg.validate()?;
    Ok(sweep_points(skews, seeds)?
        .into_iter()
        .flat_map(|(k, s)| run_point(cfg, model, k, s))
        .collect())
}

/// Mean of each metric per (skew, policy) over the successful rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepMean {
    pub skew: f64,
    pub policy: String,
    pub runs: usize,
    pub failures: usize,
    pub speedup: f64,
    pub throughput: f64,
    pub mean_latency_ratio: f64,
    pub max_latency_ratio: f64,
}

pub fn aggregate(rows: &[SweepRow]) -> Vec<SweepMean> {
    let mut out: Vec<SweepMean> = Vec::new();
    for r in rows.iter().filter(|r| r.error.is_none()) {
        let i = match out.iter().position(|m| m.skew == r.skew && m.policy == r.policy) {
            Some(i) => i,
            None => {
                out.push(SweepMean {
                    skew: r.skew,
                    policy: r.policy.clone(),
                    runs: 0,
                    failures: 0,
                    speedup: 0.0,
                    throughput: 0.0,
                    mean_latency_ratio: 0.0,
                    max_latency_ratio: 0.0,
                });
                out.len() - 1
            }
        };
        let m = &mut out[i];
        m.runs += 1;
        m.speedup += r.speedup;
        m.throughput += r.throughput;
        m.mean_latency_ratio += r.mean_latency_ratio;
        m.max_latency_ratio += r.max_latency_ratio;
    }
    for m in &mut out {
        let n = m.runs as f64;
        m.speedup /= n;
        m.throughput /= n;
        m.mean_latency_ratio /= n;
        m.max_latency_ratio /= n;
        m.failures = rows.iter().filter(|r| r.skew == m.skew && r.error.is_some()).count();
    }
    out
}

fn write_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    for r in rows {
        w.write_record(&r).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flushing to memory")).expect("csv output is utf-8")
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    write_csv(
        &[
            "skew",
            "seed",
            "policy",
            "makespan",
            "speedup",
            "throughput",
            "mean_latency_ratio",
            "max_latency_ratio",
            "error",
        ],
        rows.iter().map(|r| {
            vec![
                r.skew.to_string(),
                r.seed.to_string(),
                r.policy.clone(),
                format!("{:.6}", r.makespan),
                format!("{:.6}", r.speedup),
                format!("{:.6}", r.throughput),
                format!("{:.6}", r.mean_latency_ratio),
                format!("{:.6}", r.max_latency_ratio),
                r.error.clone().unwrap_or_default(),
            ]
        }),
    )
}

pub fn aggregate_csv(means: &[SweepMean]) -> String {
    write_csv(
        &[
            "skew",
            "policy",
            "runs",
            "failures",
            "mean_speedup",
            "mean_throughput",
            "mean_latency_ratio",
            "mean_max_latency_ratio",
        ],
        means.iter().map(|m| {
            vec![
                m.skew.to_string(),
                m.policy.clone(),
                m.runs.to_string(),
                m.failures.to_string(),
                format!("{:.6}", m.speedup),
                format!("{:.6}", m.throughput),
                format!("{:.6}", m.mean_latency_ratio),
                format!("{:.6}", m.max_latency_ratio),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.generator = GeneratorConfig::new(8, 2, LogNormalTokens::new(96.0, 0.5));
        c
    }

    #[test]
    fn defaults_recorded() {
        let m = ExperimentConfig::default().metadata();
        assert_eq!(m["W"], "3");
        assert_eq!(m["L_s"], "10");
    }

    #[test]
    fn run_is_deterministic() {
        let model = SlowdownModel::default();
        let a = run(&small(), &model, 5).unwrap();
        let b = run(&small(), &model, 5).unwrap();
        assert_eq!(a.reports, b.reports);
        assert_eq!(a.reports[0].makespan, a.baseline.makespan);
        assert!(a.exclusive.iter().flatten().all(|&x| x > 0.0));
        assert_eq!(a.latency_ratios(0).len(), 2);
    }

    #[test]
    fn sweep_rows_per_point() {
        let model = SlowdownModel::default();
        let rows = sweep(&small(), &model, &[0.25, 0.5], &[1, 2]).unwrap();
        assert_eq!(rows.len(), 2 * 2 * 2);
        assert!(rows.iter().all(|r| r.error.is_none()));
        let means = aggregate(&rows);
        assert_eq!(means.len(), 4);
        assert!(matches!(sweep(&small(), &model, &[0.5], &[]), Err(ExperimentError::Config(_))));
    }

    #[test]
    fn bad_config_rejected() {
        let mut c = small();
        c.window = 0;
        assert!(c.validate().is_err());
        let mut c = small();
        c.graph.stability_window = 0;
        assert!(c.validate().is_err());
    }
}
