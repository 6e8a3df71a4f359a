use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use rlmux::experiment::{self, aggregate, aggregate_csv, sweep_csv, sweep_points, ExperimentConfig};
use rlmux::graph::{construct_graph, format_graph, format_graphs, parse_graphs, Buckets, GraphConfig};
use rlmux::scheduler::{run_policy, Instance, Policy, Schedule};
use rlmux::sim::{self, compare, SimulationReport};
use rlmux::slowdown::{self, load_table, SlowdownModel};
use rlmux::workload::{
    contiguous_assignment, decode_stats, expand_to_trace, load_trace, save_trace, GeneratorConfig, PipelineSpec,
};

use crate::{GraphArgs, PolicyArgs, WorkloadArgs};

/// `0,3,7`, `0..10` or a mix such as `0..3,8`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once("..") {
            Some((a, b)) => {
                let a: u64 = a.parse().with_context(|| format!("bad seed range `{part}`"))?;
                let b: u64 = b.parse().with_context(|| format!("bad seed range `{part}`"))?;
                out.extend(a..b);
            }
            None => out.push(part.parse().with_context(|| format!("bad seed `{part}`"))?),
        }
    }
    if out.is_empty() {
        bail!("empty seed list");
    }
    Ok(out)
}

fn parse_policy(name: &str, window: usize) -> Result<Policy> {
    if name == "lookahead" {
        return Ok(Policy::Lookahead { window });
    }
    Ok(name.parse()?)
}

fn load_model(table: &str) -> Result<SlowdownModel> {
    if table == "default" {
        return Ok(SlowdownModel::default());
    }
    Ok(SlowdownModel::new(load_table(Path::new(table))?))
}

fn write_out(path: Option<&Path>, body: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

/// Filesystem-safe form of a policy label such as `lookahead(W=3)`.
fn stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

fn graph_config(g: &GraphArgs) -> Result<GraphConfig> {
    Ok(GraphConfig {
        stability_window: g.stability_window,
        buckets: Buckets::new(g.buckets.clone())?,
        ..GraphConfig::default()
    })
}

fn experiment_config(
    w: &WorkloadArgs,
    g: Option<&GraphArgs>,
    p: Option<(&PolicyArgs, &[String])>,
) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &w.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.generator = GeneratorConfig::from_toml(&text)?;
    }
    if let Some(s) = w.sigma {
        cfg.generator.decode.sigma = s;
    }
    if let Some(b) = w.batch {
        cfg.generator.batch = b;
    }
    if let Some(n) = w.workers {
        cfg.generator.workers = n;
    }
    cfg.pipelines = w.pipelines;
    if let Some(g) = g {
        cfg.graph = graph_config(g)?;
    }
    if let Some((sched, names)) = p {
        cfg.window = sched.window;
        cfg.policies = names
            .iter()
            .map(|n| parse_policy(n, sched.window))
            .collect::<Result<_>>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn annotate(mut r: SimulationReport, w: &WorkloadArgs, sched: &PolicyArgs) -> SimulationReport {
    let source = w.config.as_ref().map_or("builtin".to_string(), |p| p.display().to_string());
    r.metadata.insert("generator".into(), source);
    r.metadata.insert("table".into(), sched.table.clone());
    r
}

fn save_report(r: &SimulationReport, dir: &Path, name: &str) -> Result<()> {
    r.save(dir, name)?;
    let path = dir.join(format!("{name}.report.json"));
    fs::write(&path, serde_json::to_string_pretty(r)?).with_context(|| format!("writing {}", path.display()))
}

fn load_graphs(paths: &[PathBuf]) -> Result<Instance> {
    let mut graphs = Vec::new();
    for p in paths {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        graphs.extend(parse_graphs(&text).with_context(|| format!("parsing {}", p.display()))?);
    }
    Ok(Instance::new(graphs)?)
}

pub fn gen_trace(w: &WorkloadArgs, seeds: &str, out: &Path) -> Result<()> {
    let seeds = parse_seeds(seeds)?;
    let cfg = experiment_config(w, None, None)?;
    ensure_dir(out)?;
    fs::write(out.join("generator.toml"), cfg.generator.to_toml())?;
    for seed in seeds {
        for spec in experiment::generate_specs(&cfg, seed)? {
            let p = spec.pipeline_id.0;
            let path = out.join(format!("s{seed}.p{p}.spec.json"));
            fs::write(&path, serde_json::to_string(&spec)?).with_context(|| format!("writing {}", path.display()))?;
            let traces = expand_to_trace(
                &spec,
                &contiguous_assignment(&spec),
                &cfg.latency,
                &cfg.graph.buckets,
                cfg.expand,
            )?;
            for t in &traces {
                save_trace(t, &out.join(format!("s{seed}.p{p}.w{}.trace", t.worker_id.0)))?;
            }
            let st = decode_stats(&spec);
            println!(
                "seed {seed} pipeline {p}: decode max {} median {} max/median {:.3}",
                st.max,
                st.median,
                st.ratio()
            );
        }
    }
    Ok(())
}

pub fn build_graph(spec: &Path, traces: &[PathBuf], g: &GraphArgs, output: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let spec: PipelineSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", spec.display()))?;
    let traces = traces.iter().map(|p| load_trace(p)).collect::<Result<Vec<_>, _>>()?;
    let graph = construct_graph(&spec, &traces, &graph_config(g)?)?;
    write_out(output, &format_graph(&graph))
}

pub fn default_table(output: Option<&Path>) -> Result<()> {
    write_out(output, &slowdown::default_table().to_text())
}

pub fn schedule(graphs: &[PathBuf], policy: &str, sched: &PolicyArgs, output: Option<&Path>) -> Result<()> {
    let inst = load_graphs(graphs)?;
    let model = load_model(&sched.table)?;
    let s = run_policy(parse_policy(policy, sched.window)?, &inst, &model)?;
    write_out(output, &s.to_text())
}

pub fn simulate(graphs: &[PathBuf], schedule: &Path, table: &str, out: &Path) -> Result<()> {
    let inst = load_graphs(graphs)?;
    let model = load_model(table)?;
    let s = Schedule::load(schedule)?;
    let r = sim::simulate(&s, &inst, &model)?
        .with_metadata("version", rlmux::VERSION)
        .with_metadata("table", table)
        .with_metadata("schedule", schedule.display());
    ensure_dir(out)?;
    save_report(&r, out, &stem(&r.policy))?;
    println!(
        "{}: makespan {:.3} s, throughput {:.1} tok/s",
        r.policy, r.makespan, r.aggregate_throughput
    );
    Ok(())
}

pub fn run(
    w: &WorkloadArgs,
    g: &GraphArgs,
    sched: &PolicyArgs,
    policies: &[String],
    seeds: &str,
    out: &Path,
) -> Result<()> {
    let seeds = parse_seeds(seeds)?;
    let cfg = experiment_config(w, Some(g), Some((sched, policies)))?;
    let model = load_model(&sched.table)?;
    ensure_dir(out)?;
    fs::write(out.join("generator.toml"), cfg.generator.to_toml())?;
    for seed in seeds {
        let inst = experiment::build_instance(&cfg, seed)?;
        fs::write(out.join(format!("s{seed}.graphs")), format_graphs(inst.graphs()))?;
        let outcome = experiment::run(&cfg, &model, seed)?;
        let baseline = annotate(outcome.baseline, w, sched);
        let reports: Vec<SimulationReport> = outcome.reports.into_iter().map(|r| annotate(r, w, sched)).collect();
        for r in &reports {
            save_report(r, out, &format!("s{seed}.{}", stem(&r.policy)))?;
        }
        let others: Vec<&SimulationReport> = reports.iter().filter(|r| r.policy != baseline.policy).collect();
        let table = compare(&baseline, &others)?;
        fs::write(out.join(format!("s{seed}.comparison.csv")), &table)?;
        for r in &reports {
            println!(
                "seed {seed} {}: makespan {:.3} s, speedup {:.4}",
                r.policy,
                r.makespan,
                baseline.makespan / r.makespan
            );
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn sweep(
    w: &WorkloadArgs,
    g: &GraphArgs,
    sched: &PolicyArgs,
    policies: &[String],
    skews: &[f64],
    seeds: &str,
    jobs: Option<usize>,
    out: &Path,
) -> Result<()> {
    let seeds = parse_seeds(seeds)?;
    let cfg = experiment_config(w, Some(g), Some((sched, policies)))?;
    let model = load_model(&sched.table)?;
    let points = sweep_points(skews, &seeds)?;
    ensure_dir(out)?;

    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.unwrap_or(0)).build()?;
    let rows: Vec<_> = pool.install(|| {
        points
            .par_iter()
            .map(|&(k, s)| experiment::run_point(&cfg, &model, k, s))
            .collect::<Vec<_>>()
    });
    let rows: Vec<_> = rows.into_iter().flatten().collect();
    let means = aggregate(&rows);
    fs::write(out.join("generator.toml"), cfg.generator.to_toml())?;
    fs::write(out.join("sweep.csv"), sweep_csv(&rows))?;
    fs::write(out.join("sweep_means.csv"), aggregate_csv(&means))?;

    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    for m in &means {
        println!(
            "skew {} {}: mean speedup {:.4}, mean latency ratio {:.4} over {} runs",
            m.skew, m.policy, m.speedup, m.mean_latency_ratio, m.runs
        );
    }
    if failed > 0 {
        eprintln!("{failed} of {} rows failed; see the error column of sweep.csv", rows.len());
    }
    Ok(())
}

pub fn report(paths: &[PathBuf], output: Option<&Path>) -> Result<()> {
    let reports = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<SimulationReport>(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let rest: Vec<&SimulationReport> = reports[1..].iter().collect();
    write_out(output, &compare(&reports[0], &rest)?)
}
