use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::{PipelineId, PipelineSpec, SampleSpec, StageKind, TurnSpec};
use super::WorkloadError;

/// Log-normal token-count distribution parameterised by its median.
///
/// A draw is `median * exp(sigma * z)` with `z ~ N(0, 1)`, rounded and
/// clamped to `[1, max]`. `sigma = 0` yields the median exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogNormalTokens {
    pub median: f64,
    pub sigma: f64,
    #[serde(default = "default_token_cap")]
    pub max: u64,
}

fn default_token_cap() -> u64 {
    32_768
}

impl LogNormalTokens {
    pub fn new(median: f64, sigma: f64) -> Self {
        Self {
            median,
            sigma,
            max: default_token_cap(),
        }
    }

    fn validate(&self, what: &str) -> Result<(), WorkloadError> {
        if !(self.median >= 1.0) || !self.median.is_finite() {
            return Err(WorkloadError::InvalidDistribution(format!(
                "{what}: median must be >= 1, got {}",
                self.median
            )));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(WorkloadError::InvalidDistribution(format!(
                "{what}: sigma must be finite and non-negative, got {}",
                self.sigma
            )));
        }
        if self.max == 0 {
            return Err(WorkloadError::InvalidDistribution(format!("{what}: max must be >= 1")));
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        let z: f64 = StandardNormal.sample(rng);
        let v = (self.median * (self.sigma * z).exp()).round();
        (v as u64).clamp(1, self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToolLatency {
    Zero,
    Constant { seconds: f64 },
    LogNormal { median: f64, sigma: f64 },
}

impl ToolLatency {
    fn validate(&self) -> Result<(), WorkloadError> {
        let ok = match self {
            ToolLatency::Zero => true,
            ToolLatency::Constant { seconds } => *seconds >= 0.0 && seconds.is_finite(),
            ToolLatency::LogNormal { median, sigma } => {
                *median > 0.0 && median.is_finite() && *sigma >= 0.0 && sigma.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(WorkloadError::InvalidDistribution(format!(
                "tool_latency parameters out of range: {self:?}"
            )))
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            ToolLatency::Zero => 0.0,
            ToolLatency::Constant { seconds } => *seconds,
            ToolLatency::LogNormal { median, sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                median * (sigma * z).exp()
            }
        }
    }
}

/// Knobs for [`generate_synthetic`]. Loaded from TOML by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    #[serde(default)]
    pub pipeline_id: u32,
    pub batch: u32,
    pub workers: u32,
    pub decode: LogNormalTokens,
    #[serde(default = "default_prompt")]
    pub prompt: LogNormalTokens,
    /// Probability of a sample having 1, 2, 3, ... turns.
    #[serde(default = "default_turn_weights")]
    pub turn_weights: Vec<f64>,
    #[serde(default = "default_tool_latency")]
    pub tool_latency: ToolLatency,
    /// Tool output injected as prefill at the start of every turn after the first.
    #[serde(default = "default_tool_output")]
    pub tool_output: LogNormalTokens,
    #[serde(default = "default_stages")]
    pub stages: Vec<StageKind>,
    #[serde(default = "default_model_params")]
    pub model_params: f64,
    #[serde(default = "default_peak_flops")]
    pub device_peak_flops: f64,
    #[serde(default = "default_prefill_mfu")]
    pub prefill_mfu: f64,
}

fn default_prompt() -> LogNormalTokens {
    LogNormalTokens::new(256.0, 0.3)
}
fn default_turn_weights() -> Vec<f64> {
    vec![0.5, 0.3, 0.1, 0.06, 0.04]
}
fn default_tool_latency() -> ToolLatency {
    ToolLatency::LogNormal {
        median: 2.0,
        sigma: 0.5,
    }
}
fn default_tool_output() -> LogNormalTokens {
    LogNormalTokens::new(192.0, 0.5)
}
fn default_stages() -> Vec<StageKind> {
    vec![
        StageKind::Rollout,
        StageKind::Tool,
        StageKind::Reference,
        StageKind::Training,
    ]
}
fn default_model_params() -> f64 {
    4.0e9
}
fn default_peak_flops() -> f64 {
    989.0e12
}
fn default_prefill_mfu() -> f64 {
    0.4
}

impl GeneratorConfig {
    /// Default prompts, turns and tools with the given batch, worker count
    /// and decode skew.
    pub fn new(batch: u32, workers: u32, decode: LogNormalTokens) -> Self {
        Self {
            pipeline_id: 0,
            batch,
            workers,
            decode,
            prompt: default_prompt(),
            turn_weights: default_turn_weights(),
            tool_latency: default_tool_latency(),
            tool_output: default_tool_output(),
            stages: default_stages(),
            model_params: default_model_params(),
            device_peak_flops: default_peak_flops(),
            prefill_mfu: default_prefill_mfu(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, WorkloadError> {
        toml::from_str(text).map_err(|e| WorkloadError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("generator config serializes")
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.batch == 0 || self.workers == 0 {
            return Err(WorkloadError::Config("batch and workers must be positive".into()));
        }
        if self.batch % self.workers != 0 {
            return Err(WorkloadError::Config(format!(
                "batch {} is not divisible by workers {}",
                self.batch, self.workers
            )));
        }
        self.decode.validate("decode")?;
        self.prompt.validate("prompt")?;
        self.tool_output.validate("tool_output")?;
        self.tool_latency.validate()?;
        if self.turn_weights.is_empty()
            || self.turn_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite())
            || self.turn_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(WorkloadError::InvalidDistribution(format!(
                "turn_weights must be non-negative with positive mass, got {:?}",
                self.turn_weights
            )));
        }
        Ok(())
    }
}

/// Draws one global batch of agentic samples. Identical `(config, seed)`
/// pairs produce identical specs.
pub fn generate_synthetic(config: &GeneratorConfig, seed: u64) -> Result<PipelineSpec, WorkloadError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let turns_dist = WeightedIndex::new(&config.turn_weights)
        .map_err(|e| WorkloadError::InvalidDistribution(e.to_string()))?;

    let samples = (0..config.batch)
        .map(|sample_id| {
            let prompt_tokens = config.prompt.sample(&mut rng);
            let n_turns = turns_dist.sample(&mut rng) + 1;
            let turns = (0..n_turns)
                .map(|i| {
                    let prefill_tokens = if i == 0 {
                        0
                    } else {
                        config.tool_output.sample(&mut rng)
                    };
                    let decode_tokens = config.decode.sample(&mut rng);
                    let tool_latency = if i + 1 < n_turns {
                        config.tool_latency.sample(&mut rng)
                    } else {
                        0.0
                    };
                    TurnSpec {
                        prefill_tokens,
                        decode_tokens,
                        tool_latency,
                    }
                })
                .collect();
            SampleSpec {
                sample_id,
                prompt_tokens,
                turns,
            }
        })
        .collect();

    let spec = PipelineSpec {
        pipeline_id: PipelineId(config.pipeline_id),
        model_params: config.model_params,
        dp_workers: config.workers,
        global_batch: config.batch,
        stages: config.stages.clone(),
        samples,
        device_peak_flops: config.device_peak_flops,
        prefill_mfu: config.prefill_mfu,
    };
    spec.validate()?;
    Ok(spec)
}

/// Summary of per-sample decode lengths, as printed by `gen-trace`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeStats {
    pub max: u64,
    pub median: f64,
}

impl DecodeStats {
    pub fn ratio(&self) -> f64 {
        self.max as f64 / self.median
    }
}

pub fn decode_stats(spec: &PipelineSpec) -> DecodeStats {
    let mut lens: Vec<u64> = spec.samples.iter().map(SampleSpec::decode_tokens).collect();
    lens.sort_unstable();
    let n = lens.len();
    let median = if n == 0 {
        0.0
    } else if n % 2 == 1 {
        lens[n / 2] as f64
    } else {
        (lens[n / 2 - 1] + lens[n / 2]) as f64 / 2.0
    };
    DecodeStats {
        max: lens.last().copied().unwrap_or(0),
        median,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_turn(sigma: f64, batch: u32) -> GeneratorConfig {
        let mut c = GeneratorConfig::new(batch, 1, LogNormalTokens::new(300.0, sigma));
        c.turn_weights = vec![1.0];
        c
    }

    #[test]
    fn zero_sigma_is_degenerate() {
        let spec = generate_synthetic(&single_turn(0.0, 32), 7).unwrap();
        assert!(spec.samples.iter().all(|s| s.decode_tokens() == 300));
        assert_eq!(decode_stats(&spec).ratio(), 1.0);
    }

    #[test]
    fn zero_tool_latency_everywhere() {
        let mut c = GeneratorConfig::new(64, 2, LogNormalTokens::new(100.0, 1.0));
        c.tool_latency = ToolLatency::Zero;
        let spec = generate_synthetic(&c, 3).unwrap();
        assert!(spec
            .samples
            .iter()
            .flat_map(|s| &s.turns)
            .all(|t| t.tool_latency == 0.0));
    }

    #[test]
    fn same_seed_same_spec() {
        let c = GeneratorConfig::new(64, 2, LogNormalTokens::new(400.0, 1.2));
        assert_eq!(generate_synthetic(&c, 11).unwrap(), generate_synthetic(&c, 11).unwrap());
        assert_ne!(generate_synthetic(&c, 11).unwrap(), generate_synthetic(&c, 12).unwrap());
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut c = single_turn(-0.5, 8);
        assert!(matches!(
            generate_synthetic(&c, 0),
            Err(WorkloadError::InvalidDistribution(_))
        ));
        c.decode.sigma = 1.0;
        c.decode.median = 0.0;
        assert!(generate_synthetic(&c, 0).is_err());
        let mut c = single_turn(1.0, 10);
        c.workers = 3;
        assert!(generate_synthetic(&c, 0).is_err());
    }

    #[test]
    fn heavy_skew_has_long_tail_for_every_seed() {
        // Sampling oracle: with sigma = 1.5 and 64 samples the max/median
        // ratio falls below 4 with probability ~ 4e-6 per seed.
        let c = single_turn(1.5, 64);
        for seed in 0..1000 {
            let spec = generate_synthetic(&c, seed).unwrap();
            let stats = decode_stats(&spec);
            assert!(stats.ratio() > 4.0, "seed {seed}: ratio {}", stats.ratio());
        }
    }

    #[test]
    fn log_moments_match_configuration() {
        let c = single_turn(0.8, 4096);
        let spec = generate_synthetic(&c, 99).unwrap();
        let logs: Vec<f64> = spec
            .samples
            .iter()
            .map(|s| (s.decode_tokens() as f64).ln())
            .collect();
        let n = logs.len() as f64;
        let mean = logs.iter().sum::<f64>() / n;
        let var = logs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // Standard error of the mean is 0.8/64 = 0.0125; allow four of them.
        assert!((mean - 300f64.ln()).abs() < 0.05, "log-mean {mean}");
        assert!((var.sqrt() - 0.8).abs() < 0.04, "log-sd {}", var.sqrt());
    }

    #[test]
    fn turn_counts_follow_weights() {
        let c = GeneratorConfig::new(4000, 1, LogNormalTokens::new(50.0, 0.5));
        let spec = generate_synthetic(&c, 5).unwrap();
        let one_or_two = spec.samples.iter().filter(|s| s.turns.len() <= 2).count() as f64;
        assert!((one_or_two / 4000.0 - 0.8).abs() < 0.03);
        assert!(spec.samples.iter().all(|s| s.turns.len() <= 5));
        assert!(spec.samples.iter().all(|s| s.turns[0].prefill_tokens == 0));
        assert!(spec
            .samples
            .iter()
            .all(|s| s.turns.last().unwrap().tool_latency == 0.0));
    }

    #[test]
    fn config_toml_round_trip() {
        let c = GeneratorConfig::new(16, 2, LogNormalTokens::new(128.0, 0.75));
        let back = GeneratorConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, back);
        let minimal = "batch = 8\nworkers = 2\n[decode]\nmedian = 64.0\nsigma = 0.5\n";
        let parsed = GeneratorConfig::from_toml(minimal).unwrap();
        assert_eq!(parsed.turn_weights, default_turn_weights());
    }
}
