mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "rlmux", version, about = "Schedule and simulate multiplexed RL post-training pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Knobs shared by every command that synthesizes pipelines.
#[derive(Args, Debug, Clone)]
pub struct WorkloadArgs {
    /// Generator TOML; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the decode-length log-normal sigma.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub batch: Option<u32>,
    #[arg(long)]
    pub workers: Option<u32>,
    /// Pipelines sharing the cluster.
    #[arg(long, default_value_t = 2)]
    pub pipelines: u32,
}

/// Graph construction settings.
#[derive(Args, Debug, Clone)]
pub struct GraphArgs {
    /// Stability window L_s in forward steps.
    #[arg(long = "stability-window", default_value_t = 10)]
    pub stability_window: usize,
    /// Lower bounds of the token-count buckets.
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 128, 1024])]
    pub buckets: Vec<u64>,
}

/// Scheduling settings.
#[derive(Args, Debug, Clone)]
pub struct PolicyArgs {
    /// Slowdown table file, or `default` for the built-in table.
    #[arg(long, default_value = "default")]
    pub table: String,
    /// Look-ahead window W used by `lookahead`.
    #[arg(long, default_value_t = 3)]
    pub window: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize pipelines and write their specs and per-worker traces.
    GenTrace {
        #[command(flatten)]
        workload: WorkloadArgs,
        /// Seeds, e.g. `0,3,7` or `0..10`.
        #[arg(long, default_value = "0")]
        seeds: String,
        #[arg(long, env = "RLMUX_OUT", default_value = "out")]
        out: PathBuf,
    },
    /// Carve a sub-stage graph from a spec and its traces.
    BuildGraph {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long = "trace", required = true)]
        traces: Vec<PathBuf>,
        #[command(flatten)]
        graph: GraphArgs,
        /// Output file; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print the built-in slowdown table.
    DefaultTable {
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Schedule one or more graph dumps with a policy.
    Schedule {
        #[arg(long = "graphs", required = true)]
        graphs: Vec<PathBuf>,
        #[arg(long, default_value = "lookahead")]
        policy: String,
        #[command(flatten)]
        sched: PolicyArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Replay a schedule and write its report files.
    Simulate {
        #[arg(long = "graphs", required = true)]
        graphs: Vec<PathBuf>,
        #[arg(long)]
        schedule: PathBuf,
        #[arg(long, default_value = "default")]
        table: String,
        #[arg(long, env = "RLMUX_OUT", default_value = "out")]
        out: PathBuf,
    },
    /// Generate, build, schedule and simulate end to end.
    Run {
        #[command(flatten)]
        workload: WorkloadArgs,
        #[command(flatten)]
        graph: GraphArgs,
        #[command(flatten)]
        sched: PolicyArgs,
        #[arg(long, value_delimiter = ',', default_values_t = ["serial".to_string(), "lookahead".to_string()])]
        policies: Vec<String>,
        #[arg(long, default_value = "0")]
        seeds: String,
        #[arg(long, env = "RLMUX_OUT", default_value = "out")]
        out: PathBuf,
    },
    /// Run every (skew, seed) point and aggregate.
    Sweep {
        #[command(flatten)]
        workload: WorkloadArgs,
        #[command(flatten)]
        graph: GraphArgs,
        #[command(flatten)]
        sched: PolicyArgs,
        #[arg(long, value_delimiter = ',', default_values_t = ["lookahead".to_string()])]
        policies: Vec<String>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.75, 1.25])]
        skews: Vec<f64>,
        #[arg(long, default_value = "0..10")]
        seeds: String,
        /// Worker threads; rayon's default when omitted.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, env = "RLMUX_OUT", default_value = "out")]
        out: PathBuf,
    },
    /// Compare saved reports against the first one.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::GenTrace { workload, seeds, out } => commands::gen_trace(&workload, &seeds, &out),
        Command::BuildGraph {
            spec,
            traces,
            graph,
            output,
        } => commands::build_graph(&spec, &traces, &graph, output.as_deref()),
        Command::DefaultTable { output } => commands::default_table(output.as_deref()),
        Command::Schedule {
            graphs,
            policy,
            sched,
            output,
        } => commands::schedule(&graphs, &policy, &sched, output.as_deref()),
        Command::Simulate {
            graphs,
            schedule,
            table,
            out,
        } => commands::simulate(&graphs, &schedule, &table, &out),
        Command::Run {
            workload,
            graph,
            sched,
            policies,
            seeds,
            out,
        } => commands::run(&workload, &graph, &sched, &policies, &seeds, &out),
        Command::Sweep {
            workload,
            graph,
            sched,
            policies,
            skews,
            seeds,
            jobs,
            out,
        } => commands::sweep(&workload, &graph, &sched, &policies, &skews, &seeds, jobs, &out),
        Command::Report { reports, output } => commands::report(&reports, output.as_deref()),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
