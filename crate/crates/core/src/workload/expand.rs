use std::collections::{BTreeMap, VecDeque};

use crate::graph::Buckets;

use super::model::{
    token_count, ForwardStepRecord, LatencyModel, PipelineSpec, ProfileTrace, SampleSpec, WorkerId,
};
use super::WorkloadError;

/// Sample id → worker.
pub type Assignment = BTreeMap<u32, WorkerId>;

/// Splits the batch into `dp_workers` contiguous, equally sized blocks.
pub fn contiguous_assignment(spec: &PipelineSpec) -> Assignment {
    let per = (spec.samples.len() / spec.dp_workers.max(1) as usize).max(1);
    spec.samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let w = ((i / per) as u32).min(spec.dp_workers.saturating_sub(1));
            (s.sample_id, WorkerId(w))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpandOptions {
    /// Maximum prefill tokens injected per forward step (chunked prefill).
    pub prefill_chunk_tokens: u64,
}

impl Default for ExpandOptions {
    fn default() -> Self {
        Self {
            prefill_chunk_tokens: 2048,
        }
    }
}

/// A contiguous run of steps in which one sample was being prefilled or decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActivitySegment {
    pub first_step: u64,
    pub last_step: u64,
    /// Context length (prompt + injected + generated tokens) after `last_step`.
    pub context_after: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleActivity {
    pub sample_id: u32,
    pub segments: Vec<ActivitySegment>,
}

impl SampleActivity {
    pub fn active_within(&self, first: u64, last: u64) -> bool {
        self.segments
            .iter()
            .any(|s| s.first_step <= last && s.last_step >= first)
    }

    /// Context length at the end of `step` (or at the last activity before it).
    pub fn context_at(&self, step: u64) -> u64 {
        let mut ctx = 0;
        for s in &self.segments {
            if s.first_step > step {
                break;
            }
            if s.last_step <= step {
                ctx = s.context_after;
            } else {
                // Decode segments grow by one token per step.
                ctx = s.context_after - (s.last_step - step);
            }
        }
        ctx
    }
}

/// Per-worker traces plus which samples were active at which steps.
#[derive(Debug, Clone)]
pub struct Expansion {
    pub traces: Vec<ProfileTrace>,
    pub rosters: Vec<Vec<SampleActivity>>,
}

/// Replays a pipeline's rollout step by step on each worker.
pub fn expand_to_trace(
    spec: &PipelineSpec,
    assignment: &Assignment,
    latency: &LatencyModel,
    buckets: &Buckets,
    options: ExpandOptions,
) -> Result<Vec<ProfileTrace>, WorkloadError> {
    expand_with_roster(spec, assignment, latency, buckets, options).map(|e| e.traces)
}

pub fn expand_with_roster(
    spec: &PipelineSpec,
    assignment: &Assignment,
    latency: &LatencyModel,
    buckets: &Buckets,
    options: ExpandOptions,
) -> Result<Expansion, WorkloadError> {
    latency.validate()?;
    if options.prefill_chunk_tokens == 0 {
        return Err(WorkloadError::Config("prefill_chunk_tokens must be positive".into()));
    }
    let mut per_worker: Vec<Vec<&SampleSpec>> = vec![Vec::new(); spec.dp_workers as usize];
    for s in &spec.samples {
        let w = assignment
            .get(&s.sample_id)
            .ok_or(WorkloadError::Unassigned { sample_id: s.sample_id })?;
        let slot = per_worker
            .get_mut(w.0 as usize)
            .ok_or(WorkloadError::UnknownWorker {
                sample_id: s.sample_id,
                worker: *w,
            })?;
        slot.push(s);
    }

    let mut traces = Vec::with_capacity(per_worker.len());
    let mut rosters = Vec::with_capacity(per_worker.len());
    for (w, samples) in per_worker.iter().enumerate() {
        let (records, roster) = run_worker(samples, latency, buckets, options)?;
        traces.push(ProfileTrace {
            pipeline_id: spec.pipeline_id,
            worker_id: WorkerId(w as u32),
            records,
            latency: latency.clone(),
        });
        rosters.push(roster);
    }
    Ok(Expansion { traces, rosters })
}

#[derive(Debug, Clone, Copy)]
enum Phase {
    Prefill { left: u64 },
    Decode { left: u64 },
    Waiting { until: f64 },
    Done,
}

struct Live<'a> {
    spec: &'a SampleSpec,
    turn: usize,
    phase: Phase,
    context: u64,
    activity: SampleActivity,
}

impl Live<'_> {
    fn note_active(&mut self, step: u64) {
        match self.activity.segments.last_mut() {
            Some(seg) if seg.last_step + 1 == step => {
                seg.last_step = step;
                seg.context_after = self.context;
            }
            _ => self.activity.segments.push(ActivitySegment {
                first_step: step,
                last_step: step,
                context_after: self.context,
            }),
        }
    }

    fn start_turn(&mut self) {
        let turn = &self.spec.turns[self.turn];
        let inject = turn.prefill_tokens + if self.turn == 0 { self.spec.prompt_tokens } else { 0 };
        self.phase = if inject == 0 {
            Phase::Decode {
                left: turn.decode_tokens,
            }
        } else {
            Phase::Prefill { left: inject }
        };
    }
}

const TIME_EPS: f64 = 1e-9;

fn run_worker(
    samples: &[&SampleSpec],
    latency: &LatencyModel,
    buckets: &Buckets,
    options: ExpandOptions,
) -> Result<(Vec<ForwardStepRecord>, Vec<SampleActivity>), WorkloadError> {
    let mut live: Vec<Live> = samples
        .iter()
        .map(|s| Live {
            spec: s,
            turn: 0,
            phase: Phase::Done,
            context: 0,
            activity: SampleActivity {
                sample_id: s.sample_id,
                segments: Vec::new(),
            },
        })
        .collect();
    let mut queue: VecDeque<usize> = VecDeque::new();
    for (i, l) in live.iter_mut().enumerate() {
        l.start_turn();
        if matches!(l.phase, Phase::Prefill { .. }) {
            queue.push_back(i);
        }
    }

    let mut records = Vec::new();
    let mut now = 0.0f64;
    let mut step = 0u64;
    loop {
        for (i, l) in live.iter_mut().enumerate() {
            if let Phase::Waiting { until } = l.phase {
                if until <= now + TIME_EPS {
                    l.start_turn();
                    if matches!(l.phase, Phase::Prefill { .. }) {
                        queue.push_back(i);
                    }
                }
            }
        }

        let decoding: Vec<usize> = (0..live.len())
            .filter(|&i| matches!(live[i].phase, Phase::Decode { .. }))
            .collect();

        if decoding.is_empty() && queue.is_empty() {
            let next = live
                .iter()
                .filter_map(|l| match l.phase {
                    Phase::Waiting { until } => Some(until),
                    _ => None,
                })
                .fold(f64::INFINITY, f64::min);
            if !next.is_finite() {
                break;
            }
            let ticks = (((next - now) / latency.tool_tick) - TIME_EPS).ceil().max(1.0) as u64;
            for _ in 0..ticks {
                records.push(ForwardStepRecord {
                    step_index: step,
                    prefill_tokens: 0,
                    active_decode_requests: 0,
                });
                step += 1;
            }
            now += ticks as f64 * latency.tool_tick;
            continue;
        }

        let mut budget = options.prefill_chunk_tokens;
        let mut prefilled = 0u64;
        let mut finished_prefill = Vec::new();
        while budget > 0 {
            let Some(&i) = queue.front() else { break };
            let l = &mut live[i];
            let Phase::Prefill { left } = l.phase else {
                unreachable!("queued sample is not prefilling")
            };
            let take = left.min(budget);
            budget -= take;
            prefilled += take;
            l.context += take;
            l.note_active(step);
            if take == left {
                queue.pop_front();
                finished_prefill.push(i);
            } else {
                l.phase = Phase::Prefill { left: left - take };
            }
        }

        let record = ForwardStepRecord {
            step_index: step,
            prefill_tokens: prefilled,
            active_decode_requests: decoding.len() as u64,
        };
        now += latency.step_seconds(buckets.bucketize(token_count(&record)))?;
        records.push(record);

        for &i in &decoding {
            let l = &mut live[i];
            let Phase::Decode { left } = l.phase else {
                unreachable!()
            };
            l.context += 1;
            l.note_active(step);
            if left > 1 {
                l.phase = Phase::Decode { left: left - 1 };
                continue;
            }
            let tool = l.spec.turns[l.turn].tool_latency;
            l.turn += 1;
            if l.turn == l.spec.turns.len() {
                l.phase = Phase::Done;
            } else if tool > 0.0 {
                l.phase = Phase::Waiting { until: now + tool };
            } else {
                l.start_turn();
                if matches!(l.phase, Phase::Prefill { .. }) {
                    queue.push_back(i);
                }
            }
        }
        for i in finished_prefill {
            let l = &mut live[i];
            l.phase = Phase::Decode {
                left: l.spec.turns[l.turn].decode_tokens,
            };
        }
        step += 1;
    }

    Ok((records, live.into_iter().map(|l| l.activity).collect()))
}
