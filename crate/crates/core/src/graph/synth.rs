//! Single-worker traces with known sub-stage boundaries, for checking
//! reconstruction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::workload::{
    ForwardStepRecord, LatencyModel, PipelineId, PipelineSpec, ProfileTrace, SampleSpec, StageKind, TurnSpec,
    WorkerId,
};

use super::{Buckets, StepClass};

#[derive(Debug, Clone)]
pub struct LabeledTrace {
    pub spec: PipelineSpec,
    pub trace: ProfileTrace,
    /// First step and class of every ground-truth run.
    pub runs: Vec<(usize, StepClass)>,
}

fn record(step: usize, class: StepClass, buckets: &Buckets, rng: &mut ChaCha8Rng) -> ForwardStepRecord {
    let active = match class {
        StepClass::Tool => 0,
        StepClass::Bucket(b) => {
            let (lo, hi) = buckets.bounds(b).expect("bucket in range");
            rng.random_range(lo.max(1)..hi.unwrap_or(lo.max(1) * 4))
        }
    };
    ForwardStepRecord {
        step_index: step as u64,
        prefill_tokens: 0,
        active_decode_requests: active,
    }
}

/// Runs of at least `2 * window` steps with bursts shorter than `window`
/// of some other class sprinkled inside. Each run opens with `window`
/// clean steps.
pub fn labeled_trace(seed: u64, window: usize, buckets: &Buckets) -> LabeledTrace {
    let window = window.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<StepClass> = (0..buckets.len()).map(StepClass::Bucket).collect();
    classes.push(StepClass::Tool);

    let n_runs = rng.random_range(2..=6);
    let mut runs: Vec<(usize, StepClass)> = Vec::new();
    let mut steps: Vec<StepClass> = Vec::new();
    for _ in 0..n_runs {
        let class = loop {
            let c = classes[rng.random_range(0..classes.len())];
            if runs.last().is_none_or(|&(_, p)| p != c) {
                break c;
            }
        };
        let start = steps.len();
        let len = rng.random_range(2 * window..=2 * window + 200);
        let mut body = vec![class; len];
        if window > 1 {
            for _ in 0..rng.random_range(0..=3) {
                let blen = rng.random_range(1..window);
                let at = rng.random_range(window..=len - blen);
                let lo = at.saturating_sub(1);
                let hi = (at + blen + 1).min(len);
                if body[lo..hi].iter().all(|&c| c == class) {
                    let noise = loop {
                        let c = classes[rng.random_range(0..classes.len())];
                        if c != class {
                            break c;
                        }
                    };
                    body[at..at + blen].fill(noise);
                }
            }
        }
        steps.extend(body);
        runs.push((start, class));
    }

    let records = steps
        .iter()
        .enumerate()
        .map(|(i, &c)| record(i, c, buckets, &mut rng))
        .collect();
    let spec = PipelineSpec {
        pipeline_id: PipelineId(0),
        model_params: 1.0e9,
        dp_workers: 1,
        global_batch: 1,
        stages: vec![StageKind::Rollout],
        samples: vec![SampleSpec {
            sample_id: 0,
            prompt_tokens: 1,
            turns: vec![TurnSpec {
                prefill_tokens: 0,
                decode_tokens: 1,
                tool_latency: 0.0,
            }],
        }],
        device_peak_flops: 1.0e15,
        prefill_mfu: 0.5,
    };
    let trace = ProfileTrace {
        pipeline_id: PipelineId(0),
        worker_id: WorkerId(0),
        records,
        latency: LatencyModel::default(),
    };
    LabeledTrace { spec, trace, runs }
}
