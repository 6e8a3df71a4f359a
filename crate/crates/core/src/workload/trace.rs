//! Line-oriented trace and latency-model files.
//!
//! A trace file starts with a header such as
//! `version=1 pipeline_id=0 worker_id=1` followed by one `step prefill decode`
//! record per line. The latency model lives next to it (same path with a
//! `.latency` suffix) as `bucket_index seconds_per_step` lines plus a
//! `tool seconds_per_marker` line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::model::{ForwardStepRecord, LatencyModel, PipelineId, ProfileTrace, WorkerId};
use super::WorkloadError;

pub const TRACE_VERSION: u32 = 1;

fn parse_err(line: usize, field: &str, msg: impl Into<String>) -> WorkloadError {
    WorkloadError::Parse {
        line,
        field: field.to_string(),
        msg: msg.into(),
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn format_trace(trace: &ProfileTrace) -> String {
    let mut out = String::with_capacity(16 * (trace.records.len() + 1));
    let _ = writeln!(
        out,
        "version={TRACE_VERSION} pipeline_id={} worker_id={}",
        trace.pipeline_id.0, trace.worker_id.0
    );
    for r in &trace.records {
        let _ = writeln!(out, "{} {} {}", r.step_index, r.prefill_tokens, r.active_decode_requests);
    }
    out
}

/// Parses a trace body. The latency model is supplied separately.
pub fn parse_trace(text: &str, latency: LatencyModel) -> Result<ProfileTrace, WorkloadError> {
    let mut lines = content_lines(text);
    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "header", "empty trace file"))?;
    let mut version = None;
    let mut pipeline = None;
    let mut worker = None;
    for kv in header.split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| parse_err(hline, "header", format!("expected key=value, got `{kv}`")))?;
        let n: u32 = v
            .parse()
            .map_err(|_| parse_err(hline, k, format!("not an integer: `{v}`")))?;
        match k {
            "version" => version = Some(n),
            "pipeline_id" => pipeline = Some(n),
            "worker_id" => worker = Some(n),
            other => return Err(parse_err(hline, other, "unknown header field")),
        }
    }
    match version {
        Some(TRACE_VERSION) => {}
        Some(v) => return Err(parse_err(hline, "version", format!("unsupported version {v}"))),
        None => return Err(parse_err(hline, "version", "missing")),
    }
    let pipeline = pipeline.ok_or_else(|| parse_err(hline, "pipeline_id", "missing"))?;
    let worker = worker.ok_or_else(|| parse_err(hline, "worker_id", "missing"))?;

    let mut records: Vec<ForwardStepRecord> = Vec::new();
    for (ln, line) in lines {
        let mut fields = line.split_whitespace();
        let mut next = |name: &str| -> Result<u64, WorkloadError> {
            let raw = fields.next().ok_or_else(|| parse_err(ln, name, "missing"))?;
            raw.parse()
                .map_err(|_| parse_err(ln, name, format!("not a non-negative integer: `{raw}`")))
        };
        let record = ForwardStepRecord {
            step_index: next("step")?,
            prefill_tokens: next("prefill")?,
            active_decode_requests: next("decode")?,
        };
        if fields.next().is_some() {
            return Err(parse_err(ln, "record", "trailing fields"));
        }
        if let Some(prev) = records.last() {
            if record.step_index <= prev.step_index {
                return Err(parse_err(
                    ln,
                    "step",
                    format!("step {} does not follow step {}", record.step_index, prev.step_index),
                ));
            }
        }
        records.push(record);
    }
    Ok(ProfileTrace {
        pipeline_id: PipelineId(pipeline),
        worker_id: WorkerId(worker),
        records,
        latency,
    })
}

pub fn format_latency(model: &LatencyModel) -> String {
    let mut out = String::new();
    for (i, s) in model.per_bucket.iter().enumerate() {
        let _ = writeln!(out, "{i} {s}");
    }
    let _ = writeln!(out, "tool {}", model.tool_tick);
    out
}

pub fn parse_latency(text: &str) -> Result<LatencyModel, WorkloadError> {
    let mut per_bucket: Vec<Option<f64>> = Vec::new();
    let mut tool_tick = None;
    for (ln, line) in content_lines(text) {
        let (key, value) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| parse_err(ln, "latency", "expected `bucket seconds`"))?;
        let secs: f64 = value
            .trim()
            .parse()
            .map_err(|_| parse_err(ln, "seconds_per_step", format!("not a number: `{}`", value.trim())))?;
        if key == "tool" {
            tool_tick = Some(secs);
            continue;
        }
        let idx: usize = key
            .parse()
            .map_err(|_| parse_err(ln, "bucket_index", format!("not an index: `{key}`")))?;
        if per_bucket.len() <= idx {
            per_bucket.resize(idx + 1, None);
        }
        per_bucket[idx] = Some(secs);
    }
    let per_bucket = per_bucket
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or(WorkloadError::MissingLatency { bucket: i }))
        .collect::<Result<Vec<_>, _>>()?;
    let model = LatencyModel {
        per_bucket,
        tool_tick: tool_tick.unwrap_or(LatencyModel::default().tool_tick),
    };
    model.validate()?;
    Ok(model)
}

pub fn latency_path(trace_path: &Path) -> PathBuf {
    let mut name = trace_path.as_os_str().to_owned();
    name.push(".latency");
    PathBuf::from(name)
}

/// Writes `path` and its `.latency` sibling.
pub fn save_trace(trace: &ProfileTrace, path: &Path) -> Result<(), WorkloadError> {
    fs::write(path, format_trace(trace)).map_err(|e| WorkloadError::io(path, e))?;
    let lp = latency_path(path);
    fs::write(&lp, format_latency(&trace.latency)).map_err(|e| WorkloadError::io(&lp, e))
}

pub fn load_trace(path: &Path) -> Result<ProfileTrace, WorkloadError> {
    let lp = latency_path(path);
    let latency_text = fs::read_to_string(&lp).map_err(|e| WorkloadError::io(&lp, e))?;
    let latency = parse_latency(&latency_text)?;
    let text = fs::read_to_string(path).map_err(|e| WorkloadError::io(path, e))?;
    parse_trace(&text, latency)
}
