use std::fmt;

use serde::{Deserialize, Serialize};

/// Memory reserved on every device and never granted to a sub-stage.
pub const DEFAULT_HEADROOM: f64 = 0.05;

pub const ALPHA_GRID: [f64; 4] = [0.25, 0.50, 0.75, 1.00];
pub const MEM_GRID: [f64; 4] = [0.20, 0.40, 0.60, 0.80];

const EPS: f64 = 1e-9;

/// SM and memory share granted to one side of a co-location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceAllocation {
    pub sm_share: f64,
    pub mem_share: f64,
}

impl ResourceAllocation {
    /// Full device: the identity point of every slowdown row.
    pub const EXCLUSIVE: ResourceAllocation = ResourceAllocation {
        sm_share: 1.0,
        mem_share: 0.8,
    };

    pub fn new(sm_share: f64, mem_share: f64) -> Self {
        Self { sm_share, mem_share }
    }

    pub fn is_valid(&self) -> bool {
        self.sm_share > 0.0 && self.sm_share <= 1.0 && self.mem_share > 0.0 && self.mem_share <= 1.0
    }

    /// Memory left for the partner once this side and the headroom are taken.
    pub fn partner_mem(&self, headroom: f64) -> f64 {
        1.0 - headroom - self.mem_share
    }
}

impl fmt::Display for ResourceAllocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "alpha={} mem={}", self.sm_share, self.mem_share)
    }
}

/// Whether two co-located footprints fit on one device.
pub fn feasible(mem_a: f64, mem_b: f64, headroom: f64) -> bool {
    mem_a + mem_b <= 1.0 - headroom + EPS
}
