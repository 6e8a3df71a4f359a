//! Plain-text graph dump used for golden files and by the `build-graph` /
//! `schedule` commands. Floats use Rust's shortest round-trip formatting so
//! a dump parses back to an identical graph.

use std::fmt::Write as _;

use crate::workload::{LatencyModel, PipelineId, WorkerId};

use super::{Buckets, GraphError, NodeId, PipelineParams, SubStage, SubStageGraph};

pub const GRAPH_VERSION: u32 = 1;

pub fn format_graph(g: &SubStageGraph) -> String {
    let mut out = String::new();
    let p = &g.params;
    let _ = writeln!(
        out,
        "graph version={GRAPH_VERSION} pipeline_id={} model_params={} device_peak_flops={} prefill_mfu={}",
        p.pipeline_id.0, p.model_params, p.device_peak_flops, p.prefill_mfu
    );
    let lat: Vec<String> = g.latency.per_bucket.iter().map(|s| s.to_string()).collect();
    let _ = writeln!(out, "latency {} tool={}", lat.join(" "), g.latency.tool_tick);
    let lowers: Vec<String> = g.buckets.lowers().iter().map(|b| b.to_string()).collect();
    let _ = writeln!(out, "buckets {}", lowers.join(" "));
    for n in g.nodes() {
        let span = match n.step_span {
            Some((a, b)) => format!("{a}-{b}"),
            None => "-".to_string(),
        };
        let samples: Vec<String> = n.sample_ids.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(
            out,
            "node id={} worker={} kind={} duration={} mem={} span={} steps={} tokens={} decode={} active={} context={} samples={}",
            n.id,
            n.worker_id.0,
            n.kind,
            n.duration,
            n.mem_fraction,
            span,
            n.steps,
            n.tokens,
            n.remaining_decode_tokens,
            n.active_requests,
            n.context_tokens,
            if samples.is_empty() { "-".to_string() } else { samples.join(",") }
        );
    }
    for (a, b) in g.edges() {
        let _ = writeln!(out, "edge {a} {b}");
    }
    out
}

fn err(line: usize, msg: impl Into<String>) -> GraphError {
    GraphError::Parse {
        line,
        msg: msg.into(),
    }
}

fn kv<'a>(line: usize, tok: &'a str) -> Result<(&'a str, &'a str), GraphError> {
    tok.split_once('=')
        .ok_or_else(|| err(line, format!("expected key=value, got `{tok}`")))
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, GraphError> {
    v.parse()
        .map_err(|_| err(line, format!("field `{key}`: cannot parse `{v}`")))
}

pub fn parse_graph(text: &str) -> Result<SubStageGraph, GraphError> {
    let mut params: Option<PipelineParams> = None;
    let mut latency = LatencyModel::default();
    let mut buckets = Buckets::default();
    let mut nodes: Vec<SubStage> = Vec::new();
    let mut edges = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        let head = toks.next().unwrap_or_default();
        match head {
            "graph" => {
                let mut p = PipelineParams::example(0);
                for tok in toks {
                    let (k, v) = kv(ln, tok)?;
                    match k {
                        "version" => {
                            let ver: u32 = num(ln, k, v)?;
                            if ver != GRAPH_VERSION {
                                return Err(err(ln, format!("unsupported graph version {ver}")));
                            }
                        }
                        "pipeline_id" => p.pipeline_id = PipelineId(num(ln, k, v)?),
                        "model_params" => p.model_params = num(ln, k, v)?,
                        "device_peak_flops" => p.device_peak_flops = num(ln, k, v)?,
                        "prefill_mfu" => p.prefill_mfu = num(ln, k, v)?,
                        _ => return Err(err(ln, format!("unknown graph field `{k}`"))),
                    }
                }
                params = Some(p);
            }
            "latency" => {
                let mut per_bucket = Vec::new();
                for tok in toks {
                    if let Some(v) = tok.strip_prefix("tool=") {
                        latency.tool_tick = num(ln, "tool", v)?;
                    } else {
                        per_bucket.push(num(ln, "latency", tok)?);
                    }
                }
                latency.per_bucket = per_bucket;
            }
            "buckets" => {
                let lowers = toks
                    .map(|t| num(ln, "buckets", t))
                    .collect::<Result<Vec<u64>, _>>()?;
                buckets = Buckets::new(lowers)?;
            }
            "node" => {
                let pid = params
                    .as_ref()
                    .ok_or_else(|| err(ln, "node before graph header"))?
                    .pipeline_id;
                let mut n = SubStage::new(0, pid.0, 0, super::SubStageKind::DecodeSmall, 1.0);
                for tok in toks {
                    let (k, v) = kv(ln, tok)?;
                    match k {
                        "id" => n.id = NodeId(num(ln, k, v)?),
                        "worker" => n.worker_id = WorkerId(num(ln, k, v)?),
                        "kind" => n.kind = v.parse().map_err(|_| err(ln, format!("unknown kind `{v}`")))?,
                        "duration" => n.duration = num(ln, k, v)?,
                        "mem" => n.mem_fraction = num(ln, k, v)?,
                        "span" => {
                            n.step_span = if v == "-" {
                                None
                            } else {
                                let (a, b) = v
                                    .split_once('-')
                                    .ok_or_else(|| err(ln, format!("bad span `{v}`")))?;
                                Some((num(ln, k, a)?, num(ln, k, b)?))
                            }
                        }
                        "steps" => n.steps = num(ln, k, v)?,
                        "tokens" => n.tokens = num(ln, k, v)?,
                        "decode" => n.remaining_decode_tokens = num(ln, k, v)?,
                        "active" => n.active_requests = num(ln, k, v)?,
                        "context" => n.context_tokens = num(ln, k, v)?,
                        "samples" => {
                            n.sample_ids = if v == "-" {
                                Vec::new()
                            } else {
                                v.split(',').map(|s| num(ln, k, s)).collect::<Result<_, _>>()?
                            }
                        }
                        _ => return Err(err(ln, format!("unknown node field `{k}`"))),
                    }
                }
                nodes.push(n);
            }
            "edge" => {
                let a: u32 = num(ln, "edge", toks.next().unwrap_or_default())?;
                let b: u32 = num(ln, "edge", toks.next().unwrap_or_default())?;
                edges.push((NodeId(a), NodeId(b)));
            }
            other => return Err(err(ln, format!("unknown record `{other}`"))),
        }
    }
    let params = params.ok_or_else(|| err(1, "missing graph header"))?;
    SubStageGraph::new(params, latency, buckets, nodes, edges)
}

/// Several pipeline graphs concatenated in one file.
pub fn format_graphs(graphs: &[SubStageGraph]) -> String {
    graphs.iter().map(format_graph).collect::<Vec<_>>().join("\n")
}

pub fn parse_graphs(text: &str) -> Result<Vec<SubStageGraph>, GraphError> {
    let mut chunks: Vec<(usize, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim_start().starts_with("graph ") || chunks.is_empty() {
            chunks.push((i, String::new()));
        }
        let chunk = &mut chunks.last_mut().expect("pushed above").1;
        chunk.push_str(line);
        chunk.push('\n');
    }
    chunks
        .into_iter()
        .filter(|(_, c)| !c.trim().is_empty())
        .map(|(offset, c)| {
            parse_graph(&c).map_err(|e| match e {
                GraphError::Parse { line, msg } => GraphError::Parse {
                    line: line + offset,
                    msg,
                },
                other => other,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, SubStageKind::*};

    fn sample_graph(pid: u32) -> SubStageGraph {
        let mut b = GraphBuilder::new(pid);
        let c = b.chain(0, &[(PrefillBurst, 1.25), (DecodeSmall, 10.0 / 3.0)]);
        let t = b.node(0, Training, 7.0);
        b.node_mut(c[1]).sample_ids = vec![3, 9];
        b.node_mut(c[1]).step_span = Some((12, 140));
        b.edge(c[1], t);
        b.build().unwrap()
    }

    #[test]
    fn dump_round_trips() {
        let g = sample_graph(3);
        let text = format_graph(&g);
        assert_eq!(parse_graph(&text).unwrap(), g);
        let many = vec![sample_graph(0), sample_graph(1)];
        assert_eq!(parse_graphs(&format_graphs(&many)).unwrap(), many);
    }

    #[test]
    fn parse_errors_carry_line() {
        let text = "graph version=1 pipeline_id=0 model_params=1 device_peak_flops=1 prefill_mfu=0.5\nnode id=0 kind=Nope\n";
        match parse_graph(text) {
            Err(GraphError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
