use serde::{Deserialize, Serialize};

use crate::workload::{
    token_count, Expansion, PipelineSpec, ProfileTrace, SampleActivity, StageKind, WorkerId,
};

use super::{Buckets, GraphError, NodeId, PipelineParams, SubStage, SubStageGraph, SubStageKind};

/// FLOPs-per-token multipliers (in units of model parameters) used to size
/// the stage-level Reference and Training nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCosts {
    pub reference_flops_per_param_token: f64,
    pub training_flops_per_param_token: f64,
    pub mfu: f64,
}

impl Default for StageCosts {
    fn default() -> Self {
        Self {
            reference_flops_per_param_token: 2.0,
            training_flops_per_param_token: 6.0,
            mfu: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Steps a new bucket must persist before a sub-stage boundary is placed.
    pub stability_window: usize,
    pub buckets: Buckets,
    pub costs: StageCosts,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            stability_window: 10,
            buckets: Buckets::default(),
            costs: StageCosts::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StepClass {
    Bucket(usize),
    Tool,
}

/// A maximal run `[start, end)` of records assigned to one sub-stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub class: StepClass,
}

fn stable_at(classes: &[StepClass], j: usize, window: usize) -> bool {
    j + window <= classes.len() && classes[j..j + window].iter().all(|&c| c == classes[j])
}

/// Splits a class sequence into sub-stages. A new sub-stage starts at the
/// first step of any run that keeps one class for `window` consecutive
/// steps; shorter runs are absorbed into the current sub-stage. Sequences
/// with no stable run collapse to one segment of the majority class.
pub fn segment(classes: &[StepClass], window: usize) -> Vec<Segment> {
    let window = window.max(1);
    if classes.is_empty() {
        return Vec::new();
    }
    let Some(first_stable) = (0..classes.len()).find(|&j| stable_at(classes, j, window)) else {
        let mut counts: Vec<(StepClass, usize)> = Vec::new();
        for &c in classes {
            match counts.iter_mut().find(|(k, _)| *k == c) {
                Some((_, n)) => *n += 1,
                None => counts.push((c, 1)),
            }
        }
        counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        return vec![Segment {
            start: 0,
            end: classes.len(),
            class: counts[0].0,
        }];
    };

    let mut segments = Vec::new();
    let mut current = classes[first_stable];
    let mut start = 0;
    for j in first_stable + 1..classes.len() {
        if classes[j] != current && stable_at(classes, j, window) {
            segments.push(Segment {
                start,
                end: j,
                class: current,
            });
            current = classes[j];
            start = j;
        }
    }
    segments.push(Segment {
        start,
        end: classes.len(),
        class: current,
    });
    segments
}

pub fn classify(trace: &ProfileTrace, buckets: &Buckets) -> Vec<StepClass> {
    trace
        .records
        .iter()
        .map(|r| {
            if r.is_tool_wait() {
                StepClass::Tool
            } else {
                StepClass::Bucket(buckets.bucketize(token_count(r)))
            }
        })
        .collect()
}

/// Builds the sub-stage graph from per-worker traces alone. Sample ids are
/// left empty and migration context is estimated from token totals.
pub fn construct_graph(
    spec: &PipelineSpec,
    traces: &[ProfileTrace],
    config: &GraphConfig,
) -> Result<SubStageGraph, GraphError> {
    build(spec, traces, None, config)
}

/// Builds the graph from an expansion, attaching exact sample rosters.
pub fn construct_graph_with_roster(
    spec: &PipelineSpec,
    expansion: &Expansion,
    config: &GraphConfig,
) -> Result<SubStageGraph, GraphError> {
    build(spec, &expansion.traces, Some(&expansion.rosters), config)
}

fn build(
    spec: &PipelineSpec,
    traces: &[ProfileTrace],
    rosters: Option<&[Vec<SampleActivity>]>,
    config: &GraphConfig,
) -> Result<SubStageGraph, GraphError> {
    if config.stability_window == 0 {
        return Err(GraphError::InvalidConfig("stability window must be at least 1".into()));
    }
    if traces.is_empty() {
        return Err(GraphError::InvalidConfig("no traces supplied".into()));
    }
    let mut ordered: Vec<(usize, &ProfileTrace)> = traces.iter().enumerate().collect();
    ordered.sort_by_key(|(_, t)| t.worker_id);
    for (i, (_, t)) in ordered.iter().enumerate() {
        if t.pipeline_id != spec.pipeline_id {
            return Err(GraphError::InvalidConfig(format!(
                "trace for {} passed to {}",
                t.pipeline_id, spec.pipeline_id
            )));
        }
        if t.worker_id != WorkerId(i as u32) {
            return Err(GraphError::InvalidConfig(format!(
                "expected one trace per worker 0..{}, found {}",
                traces.len(),
                t.worker_id
            )));
        }
        if t.records.is_empty() {
            return Err(GraphError::EmptyTrace { worker: t.worker_id });
        }
    }

    let params = PipelineParams::of(spec);
    let pid = spec.pipeline_id;
    let mut nodes: Vec<SubStage> = Vec::new();
    let mut edges: Vec<(NodeId, NodeId)> = Vec::new();
    let mut tails: Vec<(WorkerId, NodeId, u64)> = Vec::new();

    for &(orig, trace) in &ordered {
        let roster = rosters.and_then(|r| r.get(orig));
        let classes = classify(trace, &config.buckets);
        let step_secs: Vec<f64> = trace
            .records
            .iter()
            .map(|r| {
                if r.is_tool_wait() {
                    Ok(trace.latency.tool_tick)
                } else {
                    trace
                        .latency
                        .step_seconds(config.buckets.bucketize(token_count(r)))
                        .map_err(|e| GraphError::Latency(e.to_string()))
                }
            })
            .collect::<Result<_, _>>()?;
        let peak_active = trace
            .records
            .iter()
            .map(|r| r.active_decode_requests)
            .max()
            .unwrap_or(0)
            .max(1);
        let mut cumulative = 0u64;
        let mut prev: Option<NodeId> = None;
        for seg in segment(&classes, config.stability_window) {
            let recs = &trace.records[seg.start..seg.end];
            let prefill: u64 = recs.iter().map(|r| r.prefill_tokens).sum();
            let decode: u64 = recs.iter().map(|r| r.active_decode_requests).sum();
            let tokens = prefill + decode;
            cumulative += tokens;
            let kind = match seg.class {
                StepClass::Tool => SubStageKind::ToolWait,
                StepClass::Bucket(b) => {
                    SubStageKind::for_bucket(b, config.buckets.len(), 2 * prefill >= tokens.max(1))
                }
            };
            let first = recs[0].step_index;
            let last = recs[recs.len() - 1].step_index;
            let active = recs.iter().map(|r| r.active_decode_requests).max().unwrap_or(0);
            let (sample_ids, context_tokens) = match roster {
                Some(roster) => {
                    let ids: Vec<&SampleActivity> =
                        roster.iter().filter(|a| a.active_within(first, last)).collect();
                    let ctx = ids.iter().map(|a| a.context_at(last)).sum();
                    (ids.iter().map(|a| a.sample_id).collect(), ctx)
                }
                None => {
                    let per_sample = cumulative as f64 / peak_active as f64;
                    (Vec::new(), (active as f64 * per_sample).round() as u64)
                }
            };
            let id = NodeId(nodes.len() as u32);
            nodes.push(SubStage {
                id,
                pipeline_id: pid,
                worker_id: trace.worker_id,
                kind,
                duration: step_secs[seg.start..seg.end].iter().sum(),
                mem_fraction: kind.default_mem_fraction(),
                sample_ids,
                step_span: Some((first, last)),
                steps: recs.len() as u64,
                tokens,
                remaining_decode_tokens: decode,
                active_requests: active,
                context_tokens,
            });
            if let Some(p) = prev {
                edges.push((p, id));
            }
            prev = Some(id);
        }
        let tail = prev.expect("non-empty trace yields at least one segment");
        tails.push((trace.worker_id, tail, trace.processed_tokens()));
    }

    let stage_node = |nodes: &mut Vec<SubStage>, worker: WorkerId, kind, flops_per: f64, tokens: u64| {
        let id = NodeId(nodes.len() as u32);
        let flops = flops_per * spec.model_params * tokens as f64;
        let duration = (flops / (config.costs.mfu * spec.device_peak_flops)).max(1e-6);
        let mut n = SubStage::new(id.0, pid.0, worker.0, kind, duration);
        n.pipeline_id = pid;
        nodes.push(n);
        id
    };

    let mut barrier_sources: Vec<NodeId> = tails.iter().map(|t| t.1).collect();
    if spec.has_stage(StageKind::Reference) {
        barrier_sources = tails
            .iter()
            .map(|&(w, tail, tokens)| {
                let r = stage_node(
                    &mut nodes,
                    w,
                    SubStageKind::Reference,
                    config.costs.reference_flops_per_param_token,
                    tokens,
                );
                edges.push((tail, r));
                r
            })
            .collect();
    }
    if spec.has_stage(StageKind::Training) {
        for &(w, _, tokens) in &tails {
            let t = stage_node(
                &mut nodes,
                w,
                SubStageKind::Training,
                config.costs.training_flops_per_param_token,
                tokens,
            );
            edges.extend(barrier_sources.iter().map(|&s| (s, t)));
        }
    }

    SubStageGraph::new(params, traces[0].latency.clone(), config.buckets.clone(), nodes, edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{
        contiguous_assignment, expand_with_roster, ExpandOptions, ForwardStepRecord, LatencyModel,
        PipelineId, SampleSpec, TurnSpec,
    };

    fn runs(spec: &[(usize, usize)]) -> Vec<StepClass> {
        spec.iter()
            .flat_map(|&(b, n)| std::iter::repeat(StepClass::Bucket(b)).take(n))
            .collect()
    }

    #[test]
    fn constant_trace_is_one_segment() {
        let segs = segment(&runs(&[(1, 300)]), 10);
        assert_eq!(segs.len(), 1);
        assert_eq!((segs[0].start, segs[0].end), (0, 300));
    }

    #[test]
    fn three_runs_three_segments() {
        let segs = segment(&runs(&[(2, 50), (1, 200), (0, 100)]), 10);
        let bounds: Vec<(usize, usize, StepClass)> =
            segs.iter().map(|s| (s.start, s.end, s.class)).collect();
        assert_eq!(
            bounds,
            vec![
                (0, 50, StepClass::Bucket(2)),
                (50, 250, StepClass::Bucket(1)),
                (250, 350, StepClass::Bucket(0)),
            ]
        );
    }

    #[test]
    fn short_noise_is_suppressed() {
        // 5-step bucket-0 bursts every 40 steps inside the bucket-1 run.
        let mut classes = runs(&[(2, 50)]);
        for i in 0..200 {
            let noisy = i % 40 >= 20 && i % 40 < 25;
            classes.push(StepClass::Bucket(if noisy { 0 } else { 1 }));
        }
        classes.extend(runs(&[(0, 100)]));
        let segs = segment(&classes, 10);
        assert_eq!(segs.len(), 3);
        assert_eq!(segs[1].start, 50);
        assert_eq!(segs[2].start, 250);
    }

    #[test]
    fn short_trace_majority() {
        let segs = segment(&runs(&[(2, 2), (0, 5)]), 10);
        assert_eq!(segs, vec![Segment { start: 0, end: 7, class: StepClass::Bucket(0) }]);
    }

    #[test]
    fn leading_noise_joins_first_stable_run() {
        let segs = segment(&runs(&[(1, 3), (0, 40)]), 10);
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].class, StepClass::Bucket(0));
    }

    fn spec_with(samples: Vec<SampleSpec>, workers: u32) -> PipelineSpec {
        PipelineSpec {
            pipeline_id: PipelineId(4),
            model_params: 1e9,
            dp_workers: workers,
            global_batch: samples.len() as u32,
            stages: vec![StageKind::Rollout, StageKind::Reference, StageKind::Training],
            samples,
            device_peak_flops: 1e15,
            prefill_mfu: 0.5,
        }
    }

    fn sample(id: u32, prompt: u64, decode: u64) -> SampleSpec {
        SampleSpec {
            sample_id: id,
            prompt_tokens: prompt,
            turns: vec![TurnSpec {
                prefill_tokens: 0,
                decode_tokens: decode,
                tool_latency: 0.0,
            }],
        }
    }

    #[test]
    fn graph_from_expansion() {
        // 200 samples per worker: prefill burst, medium decode, small tail.
        let samples: Vec<SampleSpec> = (0..400)
            .map(|i| sample(i, 300, if i % 200 < 190 { 40 } else { 400 }))
            .collect();
        let spec = spec_with(samples, 2);
        let e = expand_with_roster(
            &spec,
            &contiguous_assignment(&spec),
            &LatencyModel::default(),
            &Buckets::default(),
            ExpandOptions::default(),
        )
        .unwrap();
        let g = construct_graph_with_roster(&spec, &e, &GraphConfig::default()).unwrap();
        let chain: Vec<SubStageKind> = g
            .worker_chain(WorkerId(0))
            .iter()
            .map(|&n| g.node(n).kind)
            .collect();
        assert_eq!(
            chain,
            vec![
                SubStageKind::PrefillBurst,
                SubStageKind::DecodeMedium,
                SubStageKind::DecodeSmall
            ]
        );
        let tail = g.node(g.worker_chain(WorkerId(0))[2]);
        // The ten long samples on worker 0 are ids 190..200.
        assert!((190..200).all(|id| tail.sample_ids.contains(&id)));
        assert!(tail.active_requests < 128);
        assert!(tail.context_tokens >= 10 * 700);
        // Per-worker chains, then Reference, then Training behind a barrier.
        let trainings: Vec<&SubStage> =
            g.nodes().iter().filter(|n| n.kind == SubStageKind::Training).collect();
        assert_eq!(trainings.len(), 2);
        for t in trainings {
            let preds: Vec<SubStageKind> = g.preds(t.id).iter().map(|&p| g.node(p).kind).collect();
            assert_eq!(preds, vec![SubStageKind::Reference, SubStageKind::Reference]);
        }
        let rollout_tokens: u64 = g.total_tokens();
        assert_eq!(rollout_tokens, spec.total_tokens());
        // Durations are step counts times per-step latency.
        let t0: f64 = g
            .worker_chain(WorkerId(0))
            .iter()
            .map(|&n| g.node(n).duration)
            .sum();
        let expect: f64 = e.traces[0]
            .records
            .iter()
            .map(|r| LatencyModel::default().per_bucket[Buckets::default().bucketize(token_count(r))])
            .sum();
        assert!((t0 - expect).abs() < 1e-9);
    }

    #[test]
    fn tool_markers_become_tool_wait() {
        let mut records = Vec::new();
        let mut push = |p: u64, d: u64, n: usize| {
            for _ in 0..n {
                let step = records.len() as u64;
                records.push(ForwardStepRecord {
                    step_index: step,
                    prefill_tokens: p,
                    active_decode_requests: d,
                });
            }
        };
        push(0, 50, 30);
        push(0, 0, 20);
        push(0, 40, 30);
        let trace = ProfileTrace {
            pipeline_id: PipelineId(4),
            worker_id: WorkerId(0),
            records,
            latency: LatencyModel::default(),
        };
        let spec = spec_with(vec![sample(0, 1, 1)], 1);
        let g = construct_graph(&spec, &[trace], &GraphConfig::default()).unwrap();
        let kinds: Vec<SubStageKind> =
            g.worker_chain(WorkerId(0)).iter().map(|&n| g.node(n).kind).collect();
        assert_eq!(
            kinds,
            vec![SubStageKind::DecodeSmall, SubStageKind::ToolWait, SubStageKind::DecodeSmall]
        );
        let tool = g.node(g.worker_chain(WorkerId(0))[1]);
        assert!((tool.duration - 2.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_empty_and_mismatched_traces() {
        let spec = spec_with(vec![sample(0, 1, 1)], 1);
        let empty = ProfileTrace {
            pipeline_id: PipelineId(4),
            worker_id: WorkerId(0),
            records: vec![],
            latency: LatencyModel::default(),
        };
        assert!(matches!(
            construct_graph(&spec, &[empty.clone()], &GraphConfig::default()),
            Err(GraphError::EmptyTrace { .. })
        ));
        let mut other = empty;
        other.pipeline_id = PipelineId(9);
        assert!(construct_graph(&spec, &[other], &GraphConfig::default()).is_err());
    }
}
