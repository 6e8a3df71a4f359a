use serde::{Deserialize, Serialize};

use super::GraphError;

/// Half-open token-count intervals. Stored as the ascending list of lower
/// bounds; the last bucket is unbounded above.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Buckets {
    lowers: Vec<u64>,
}

impl Default for Buckets {
    /// `[0,128)`, `[128,1024)`, `[1024,inf)`.
    fn default() -> Self {
        Self {
            lowers: vec![0, 128, 1024],
        }
    }
}

impl Buckets {
    pub fn new(lowers: Vec<u64>) -> Result<Self, GraphError> {
        if lowers.first() != Some(&0) {
            return Err(GraphError::InvalidBuckets(format!(
                "boundaries must start at 0, got {lowers:?}"
            )));
        }
        if lowers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GraphError::InvalidBuckets(format!(
                "boundaries must be strictly increasing, got {lowers:?}"
            )));
        }
        Ok(Self { lowers })
    }

    pub fn len(&self) -> usize {
        self.lowers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lowers.is_empty()
    }

    pub fn lowers(&self) -> &[u64] {
        &self.lowers
    }

    /// `(lower, upper)` of bucket `index`; `upper` is `None` for the last one.
    pub fn bounds(&self, index: usize) -> Option<(u64, Option<u64>)> {
        let lower = *self.lowers.get(index)?;
        Some((lower, self.lowers.get(index + 1).copied()))
    }

    pub fn bucketize(&self, token_count: u64) -> usize {
        self.lowers.partition_point(|&l| l <= token_count) - 1
    }
}
