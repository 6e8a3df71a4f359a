use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::workload::PipelineId;

use super::{Engine, SimError, TimelineEvent, UtilSegment};

pub const METRICS_VERSION: u32 = 1;
pub const EVENTS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineMetrics {
    pub pipeline: PipelineId,
    /// Completion time of the pipeline's last sub-stage.
    pub step_latency: f64,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerUtilization {
    pub worker: usize,
    /// Time-weighted SM share over the makespan.
    pub mean: f64,
    pub series: Vec<UtilSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub policy: String,
    /// Resolved configuration and tool version, emitted with the metrics.
    pub metadata: BTreeMap<String, String>,
    pub makespan: f64,
    pub pipelines: Vec<PipelineMetrics>,
    pub total_tokens: u64,
    /// Tokens per second across all pipelines.
    pub aggregate_throughput: f64,
    pub utilization: Vec<WorkerUtilization>,
    pub events: Vec<TimelineEvent>,
}

fn csv_body(rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(r).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flushing to memory")).expect("csv output is utf-8")
}

impl SimulationReport {
    pub(crate) fn from_engine(policy: &str, e: &mut Engine<'_>) -> Self {
        let inst = e.instance();
        let makespan = e.makespan();
        let pipelines = (0..inst.n_pipelines())
            .map(|p| {
                let range = inst.pipeline_range(p);
                PipelineMetrics {
                    pipeline: inst.graphs()[p].pipeline_id(),
                    step_latency: range.clone().map(|g| e.finish_time(g)).fold(0.0, f64::max),
                    tokens: range
                        .filter(|&g| !e.finish_time(g).is_nan())
                        .map(|g| inst.stage(g).tokens)
                        .sum(),
                }
            })
            .collect::<Vec<_>>();
        let total_tokens = pipelines.iter().map(|p| p.tokens).sum();
        let log = e.take_log().unwrap_or_default();
        let utilization = (0..inst.n_workers())
            .map(|w| {
                let series: Vec<UtilSegment> = log.util.iter().filter(|s| s.worker == w).cloned().collect();
                let busy: f64 = series.iter().map(|s| s.util * (s.end - s.start)).sum();
                WorkerUtilization {
                    worker: w,
                    mean: if makespan > 0.0 { busy / makespan } else { 0.0 },
                    series,
                }
            })
            .collect();
        Self {
            policy: policy.to_string(),
            metadata: BTreeMap::new(),
            makespan,
            pipelines,
            total_tokens,
            aggregate_throughput: if makespan > 0.0 {
                total_tokens as f64 / makespan
            } else {
                0.0
            },
            utilization,
            events: log.events,
        }
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.metadata.insert(key.into(), value.to_string());
        self
    }

    /// `scope,key,value` rows; the first data row carries the schema version.
    pub fn metrics_csv(&self) -> String {
        let mut rows = vec![
            vec!["scope".into(), "key".into(), "value".into()],
            vec!["schema".into(), "metrics_version".into(), METRICS_VERSION.to_string()],
        ];
        for (k, v) in &self.metadata {
            rows.push(vec!["meta".into(), k.clone(), v.clone()]);
        }
        let run = |k: &str, v: String| vec!["run".to_string(), k.to_string(), v];
        rows.push(run("policy", self.policy.clone()));
        rows.push(run("makespan", self.makespan.to_string()));
        rows.push(run("total_tokens", self.total_tokens.to_string()));
        rows.push(run("aggregate_throughput", self.aggregate_throughput.to_string()));
        for p in &self.pipelines {
            let scope = format!("pipeline:{}", p.pipeline.0);
            rows.push(vec![scope.clone(), "step_latency".into(), p.step_latency.to_string()]);
            rows.push(vec![scope, "tokens".into(), p.tokens.to_string()]);
        }
        for u in &self.utilization {
            rows.push(vec![format!("worker:{}", u.worker), "utilization_mean".into(), u.mean.to_string()]);
        }
        csv_body(&rows)
    }

    pub fn utilization_csv(&self) -> String {
        let mut rows = vec![vec!["worker".to_string(), "start".into(), "end".into(), "util".into()]];
        for u in &self.utilization {
            for s in &u.series {
                rows.push(vec![
                    s.worker.to_string(),
                    s.start.to_string(),
                    s.end.to_string(),
                    s.util.to_string(),
                ]);
            }
        }
        csv_body(&rows)
    }

    /// Writes `<stem>.metrics.csv`, `<stem>.utilization.csv` and
    /// `<stem>.events` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), SimError> {
        let write = |name: String, body: String| {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| SimError::io(&path, e))
        };
        write(format!("{stem}.metrics.csv"), self.metrics_csv())?;
        write(format!("{stem}.utilization.csv"), self.utilization_csv())?;
        write(format!("{stem}.events"), format_events(&self.events))
    }
}

/// Line-delimited event log: `time worker kind node alpha mem`.
pub fn format_events(events: &[TimelineEvent]) -> String {
    let mut out = format!("events version={EVENTS_VERSION}\n");
    for ev in events {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {}",
            ev.time, ev.worker, ev.kind, ev.node, ev.alloc.sm_share, ev.alloc.mem_share
        );
    }
    out
}

/// Ratios of each report against `baseline` as CSV. A ratio above 1 in
/// `speedup` means the candidate finished sooner.
pub fn compare(baseline: &SimulationReport, reports: &[&SimulationReport]) -> Result<String, SimError> {
    let key = |r: &SimulationReport| r.pipelines.iter().map(|p| (p.pipeline, p.tokens)).collect::<Vec<_>>();
    let mut rows = vec![[
        "policy",
        "baseline",
        "makespan",
        "speedup",
        "throughput_ratio",
        "mean_latency_ratio",
        "max_latency_ratio",
    ]
    .map(String::from)
    .to_vec()];
    for r in std::iter::once(&baseline).chain(reports.iter()) {
        if key(r) != key(baseline) {
            return Err(SimError::Mismatch(format!(
                "{} has pipelines/tokens {:?}, baseline {} has {:?}",
                r.policy,
                key(r),
                baseline.policy,
                key(baseline)
            )));
        }
        let ratios: Vec<f64> = r
            .pipelines
            .iter()
            .zip(&baseline.pipelines)
            .map(|(c, b)| c.step_latency / b.step_latency)
            .collect();
        let mean = ratios.iter().sum::<f64>() / ratios.len().max(1) as f64;
        let max = ratios.iter().copied().fold(f64::MIN, f64::max);
        rows.push(vec![
            r.policy.clone(),
            baseline.policy.clone(),
            r.makespan.to_string(),
            (baseline.makespan / r.makespan).to_string(),
            (r.aggregate_throughput / baseline.aggregate_throughput).to_string(),
            mean.to_string(),
            max.to_string(),
        ]);
    }
    Ok(csv_body(&rows))
}
