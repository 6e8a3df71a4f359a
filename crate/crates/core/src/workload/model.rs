use std::fmt;

use serde::{Deserialize, Serialize};

use super::WorkloadError;

/// Identifies one RL pipeline (one training job) in a multiplexed instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PipelineId(pub u32);

/// Identifies a GPU worker. Data-parallel rank `i` of every pipeline lives on worker `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WorkerId(pub u32);

impl fmt::Display for PipelineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}", self.0)
    }
}

/// Stage-level structure of a pipeline step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StageKind {
    Rollout,
    /// Tool calls issued from inside the rollout. They show up as tool-wait
    /// markers in the rollout trace, so this stage adds no nodes of its own.
    Tool,
    Reference,
    Training,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnSpec {
    /// New context injected at the start of this turn (tool output). The
    /// first turn's prompt is carried by [`SampleSpec::prompt_tokens`].
    pub prefill_tokens: u64,
    pub decode_tokens: u64,
    /// Seconds spent waiting on a tool after this turn's decode. Zero when
    /// the turn issues no tool call.
    pub tool_latency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub sample_id: u32,
    pub prompt_tokens: u64,
    pub turns: Vec<TurnSpec>,
}

impl SampleSpec {
    pub fn decode_tokens(&self) -> u64 {
        self.turns.iter().map(|t| t.decode_tokens).sum()
    }

    pub fn prefill_tokens(&self) -> u64 {
        self.prompt_tokens + self.turns.iter().map(|t| t.prefill_tokens).sum::<u64>()
    }

    /// Every token the rollout engine processes for this sample.
    pub fn total_tokens(&self) -> u64 {
        self.prefill_tokens() + self.decode_tokens()
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |msg: &str| WorkloadError::InvalidSample {
            sample_id: self.sample_id,
            reason: msg.to_string(),
        };
        if self.turns.is_empty() {
            return Err(bad("sample has no turns"));
        }
        if self.prompt_tokens == 0 {
            return Err(bad("prompt_tokens must be at least 1"));
        }
        for turn in &self.turns {
            if turn.decode_tokens == 0 {
                return Err(bad("every turn must decode at least one token"));
            }
            if !(turn.tool_latency >= 0.0) || !turn.tool_latency.is_finite() {
                return Err(bad("tool_latency must be a finite non-negative number"));
            }
        }
        Ok(())
    }
}

/// One RL pipeline: model constants for cost estimates plus one global batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub pipeline_id: PipelineId,
    /// Parameter count, used for FLOPs estimates.
    pub model_params: f64,
    pub dp_workers: u32,
    pub global_batch: u32,
    pub stages: Vec<StageKind>,
    pub samples: Vec<SampleSpec>,
    /// Peak device throughput in FLOP/s.
    pub device_peak_flops: f64,
    /// Average MFU of prefill, in (0, 1].
    pub prefill_mfu: f64,
}

impl PipelineSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |msg: String| WorkloadError::InvalidPipeline {
            pipeline: self.pipeline_id,
            reason: msg,
        };
        if self.dp_workers == 0 {
            return Err(bad("dp_workers must be at least 1".into()));
        }
        if self.global_batch % self.dp_workers != 0 {
            return Err(bad(format!(
                "global_batch {} is not divisible by dp_workers {}",
                self.global_batch, self.dp_workers
            )));
        }
        if self.stages.first() != Some(&StageKind::Rollout) {
            return Err(bad("stage list must begin with Rollout".into()));
        }
        if self.samples.len() != self.global_batch as usize {
            return Err(bad(format!(
                "{} samples for a global batch of {}",
                self.samples.len(),
                self.global_batch
            )));
        }
        if !(self.prefill_mfu > 0.0 && self.prefill_mfu <= 1.0) {
            return Err(bad(format!("prefill_mfu {} outside (0, 1]", self.prefill_mfu)));
        }
        if !(self.model_params > 0.0) || !(self.device_peak_flops > 0.0) {
            return Err(bad("model_params and device_peak_flops must be positive".into()));
        }
        for s in &self.samples {
            s.validate()?;
        }
        Ok(())
    }

    pub fn total_tokens(&self) -> u64 {
        self.samples.iter().map(SampleSpec::total_tokens).sum()
    }

    pub fn has_stage(&self, kind: StageKind) -> bool {
        self.stages.contains(&kind)
    }
}

/// One forward step of the rollout engine on one worker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardStepRecord {
    pub step_index: u64,
    pub prefill_tokens: u64,
    pub active_decode_requests: u64,
}

impl ForwardStepRecord {
    /// A record with no work at all marks a tick spent waiting on tools.
    pub fn is_tool_wait(&self) -> bool {
        self.prefill_tokens == 0 && self.active_decode_requests == 0
    }
}

/// Tokens processed by one forward step: injected prefill tokens plus one
/// token per active decode request.
pub fn token_count(record: &ForwardStepRecord) -> u64 {
    record.prefill_tokens + record.active_decode_requests
}

/// Seconds per forward step for each token-count bucket, plus the wall time
/// represented by one tool-wait marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub per_bucket: Vec<f64>,
    pub tool_tick: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            per_bucket: vec![0.025, 0.035, 0.06],
            tool_tick: 0.1,
        }
    }
}

impl LatencyModel {
    pub fn step_seconds(&self, bucket: usize) -> Result<f64, WorkloadError> {
        self.per_bucket
            .get(bucket)
            .copied()
            .ok_or(WorkloadError::MissingLatency { bucket })
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.per_bucket.is_empty() {
            return Err(WorkloadError::InvalidLatency("no buckets".into()));
        }
        for (i, s) in self.per_bucket.iter().enumerate() {
            if !(*s > 0.0) || !s.is_finite() {
                return Err(WorkloadError::InvalidLatency(format!(
                    "bucket {i}: seconds_per_step must be positive, got {s}"
                )));
            }
        }
        if !(self.tool_tick > 0.0) || !self.tool_tick.is_finite() {
            return Err(WorkloadError::InvalidLatency(format!(
                "tool tick must be positive, got {}",
                self.tool_tick
            )));
        }
        Ok(())
    }
}

/// Per-step profile of one pipeline's rollout on one worker.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTrace {
    pub pipeline_id: PipelineId,
    pub worker_id: WorkerId,
    pub records: Vec<ForwardStepRecord>,
    pub latency: LatencyModel,
}

impl ProfileTrace {
    pub fn decoded_tokens(&self) -> u64 {
        self.records.iter().map(|r| r.active_decode_requests).sum()
    }

    pub fn processed_tokens(&self) -> u64 {
        self.records.iter().map(token_count).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(prefill: u64, decode: u64) -> ForwardStepRecord {
        ForwardStepRecord {
            step_index: 0,
            prefill_tokens: prefill,
            active_decode_requests: decode,
        }
    }

    #[test]
    fn token_count_examples() {
        assert_eq!(token_count(&rec(0, 64)), 64);
        assert_eq!(token_count(&rec(512, 32)), 544);
        assert_eq!(token_count(&rec(0, 0)), 0);
        assert!(rec(0, 0).is_tool_wait());
        assert!(!rec(1, 0).is_tool_wait());
    }

    #[test]
    fn sample_validation() {
        let mut s = SampleSpec {
            sample_id: 3,
            prompt_tokens: 10,
            turns: vec![TurnSpec {
                prefill_tokens: 0,
                decode_tokens: 5,
                tool_latency: 0.0,
            }],
        };
        assert!(s.validate().is_ok());
        assert_eq!(s.total_tokens(), 15);
        s.turns[0].decode_tokens = 0;
        assert!(s.validate().is_err());
        s.turns.clear();
        assert!(s.validate().is_err());
    }
}
