use crate::graph::{SubStage, SubStageKind};

use super::{
    default_table, feasible, ResourceAllocation, SlowdownError, SlowdownTable, DEFAULT_HEADROOM,
};

/// Position of `x` on `grid` as a segment index and weight, clamped at the ends.
fn locate(grid: &[f64], x: f64) -> (usize, f64) {
    let n = grid.len();
    if n == 1 || x <= grid[0] {
        return (0, 0.0);
    }
    if x >= grid[n - 1] {
        return (n - 2, 1.0);
    }
    let i = grid.partition_point(|&g| g <= x) - 1;
    (i, (x - grid[i]) / (grid[i + 1] - grid[i]))
}

/// Slowdown lookup with bilinear interpolation over the α × mem lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowdownModel {
    pub table: SlowdownTable,
    pub headroom: f64,
}

impl Default for SlowdownModel {
    fn default() -> Self {
        Self::new(default_table())
    }
}

impl SlowdownModel {
    pub fn new(table: SlowdownTable) -> Self {
        Self {
            table,
            headroom: DEFAULT_HEADROOM,
        }
    }

    fn missing_rows(&self, a: SubStageKind, b: Option<SubStageKind>) -> Vec<String> {
        let mut missing = Vec::new();
        if !self.table.has_kind(a) {
            missing.push(format!("{a} (all partners)"));
        }
        if let Some(b) = b {
            if !self.table.has_kind(b) {
                missing.push(format!("{a} x {b}"));
            }
        }
        missing
    }

    /// `f(k_A, k_B, α_A, mem_A)`. A ToolWait partner holds no SMs, so it
    /// reads the isolation row when the table has no ToolWait entries.
    pub fn slowdown(
        &self,
        a: SubStageKind,
        b: Option<SubStageKind>,
        alloc: ResourceAllocation,
    ) -> Result<f64, SlowdownError> {
        if !alloc.is_valid() {
            return Err(SlowdownError::InvalidAllocation(alloc.to_string()));
        }
        if a == SubStageKind::ToolWait {
            return Ok(1.0);
        }
        let b = match b {
            Some(SubStageKind::ToolWait) if !self.table.has_kind(SubStageKind::ToolWait) => None,
            other => other,
        };
        let row = match self.table.row(a, b) {
            Some(r) => r,
            None => {
                return Err(SlowdownError::UnknownPair {
                    a,
                    b,
                    missing: self.missing_rows(a, b).join(", "),
                })
            }
        };
        let t = &self.table;
        let nm = t.mem.len();
        let (i, tx) = locate(&t.alpha, alloc.sm_share);
        let (j, ty) = locate(&t.mem, alloc.mem_share);
        let at = |ii: usize, jj: usize| row[ii.min(t.alpha.len() - 1) * nm + jj.min(nm - 1)];
        let lo = (1.0 - ty) * at(i, j) + ty * at(i, j + 1);
        let hi = (1.0 - ty) * at(i + 1, j) + ty * at(i + 1, j + 1);
        let v = (1.0 - tx) * lo + tx * hi;
        Ok(v.max(1.0))
    }

    /// The partner's share when one side is granted `alloc`: SM complement
    /// snapped to the α grid, memory after headroom.
    pub fn complement(&self, alloc: ResourceAllocation) -> ResourceAllocation {
        let sm = if self.table.oversubscribed && alloc.sm_share >= 1.0 {
            1.0
        } else {
            let want = 1.0 - alloc.sm_share;
            self.table
                .alpha
                .iter()
                .copied()
                .min_by(|x, y| (x - want).abs().total_cmp(&(y - want).abs()))
                .unwrap_or(want)
        };
        ResourceAllocation::new(sm, alloc.partner_mem(self.headroom).clamp(1e-6, 1.0))
    }

    /// `T̂(k)`: exclusive duration scaled by the co-location slowdown.
    pub fn adjusted_duration(
        &self,
        k: &SubStage,
        partner: Option<SubStageKind>,
        alloc: ResourceAllocation,
    ) -> Result<f64, SlowdownError> {
        if k.kind == SubStageKind::ToolWait {
            return Ok(k.duration);
        }
        Ok(k.duration * self.slowdown(k.kind, partner, alloc)?)
    }

    pub fn feasible(&self, mem_a: f64, mem_b: f64) -> bool {
        feasible(mem_a, mem_b, self.headroom)
    }

    /// Grid allocations for the first side of a co-located pair whose grants
    /// cover both memory needs.
    pub fn multiplex_allocations(&self, need_a: f64, need_b: f64) -> Vec<ResourceAllocation> {
        let mut out = Vec::new();
        if !self.feasible(need_a, need_b) {
            return out;
        }
        for &x in &self.table.alpha {
            if x >= 1.0 && !self.table.oversubscribed {
                continue;
            }
            for &m in &self.table.mem {
                let r = ResourceAllocation::new(x, m);
                if m + 1e-9 >= need_a && r.partner_mem(self.headroom) + 1e-9 >= need_b {
                    out.push(r);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use SubStageKind::*;

    fn fixture() -> SlowdownModel {
        // Training-only table: 2.0 at alpha=0.25 and 1.5 at alpha=0.5 on every mem line.
        let t = SlowdownTable::from_fn(
            vec![Training],
            vec![0.25, 0.5, 1.0],
            vec![0.4, 0.8],
            |_, b, x, m| match (x, b) {
                (x, _) if x == 0.25 => 2.0,
                (x, _) if x == 0.5 => 1.5,
                (_, None) if m == 0.8 => 1.0,
                _ => 1.2,
            },
        )
        .unwrap();
        SlowdownModel::new(t)
    }

    #[test]
    fn midpoint_interpolation() {
        let m = fixture();
        let v = m.slowdown(Training, None, ResourceAllocation::new(0.375, 0.8)).unwrap();
        assert!((v - 1.75).abs() < 1e-9, "{v}");
    }

    #[test]
    fn clamps_outside_grid() {
        let m = fixture();
        let low = m.slowdown(Training, None, ResourceAllocation::new(0.1, 0.8)).unwrap();
        assert_eq!(low, 2.0);
        let tiny_mem = m.slowdown(Training, None, ResourceAllocation::new(1.0, 0.1)).unwrap();
        assert_eq!(tiny_mem, 1.2);
    }

    #[test]
    fn default_examples() {
        let m = SlowdownModel::default();
        assert_eq!(m.slowdown(Training, None, ResourceAllocation::EXCLUSIVE).unwrap(), 1.0);
        assert_eq!(m.slowdown(Training, None, ResourceAllocation::new(0.25, 0.8)).unwrap(), 2.7);
        let train = crate::graph::SubStage::new(0, 0, 0, Training, 10.0);
        let d = m
            .adjusted_duration(&train, Some(Training), ResourceAllocation::new(0.5, 0.4))
            .unwrap();
        assert!((d - 21.9).abs() < 1e-9);
        let tool = crate::graph::SubStage::new(1, 0, 0, ToolWait, 3.0);
        let d = m
            .adjusted_duration(&tool, Some(Training), ResourceAllocation::new(0.25, 0.2))
            .unwrap();
        assert_eq!(d, 3.0);
    }

    #[test]
    fn unknown_pair_lists_rows() {
        let m = fixture();
        let err = m
            .slowdown(DecodeSmall, Some(Training), ResourceAllocation::EXCLUSIVE)
            .unwrap_err();
        assert!(err.to_string().contains("DecodeSmall"), "{err}");
        assert!(m.slowdown(Training, Some(Reference), ResourceAllocation::EXCLUSIVE).is_err());
    }

    #[test]
    fn asymmetric_pairs_both_queryable() {
        let m = SlowdownModel::default();
        let a = ResourceAllocation::new(0.25, 0.6);
        let ab = m.slowdown(DecodeSmall, Some(Training), a).unwrap();
        let ba = m.slowdown(Training, Some(DecodeSmall), m.complement(a)).unwrap();
        assert!(ab >= 1.0 && ba >= 1.0);
        assert_ne!(ab, ba);
    }

    #[test]
    fn complement_snaps_alpha() {
        let m = SlowdownModel::default();
        let c = m.complement(ResourceAllocation::new(0.3, 0.4));
        assert_eq!(c.sm_share, 0.75);
        assert!((c.mem_share - 0.55).abs() < 1e-12);
    }

    #[test]
    fn allocations_cover_needs() {
        let m = SlowdownModel::default();
        // Training first: only mem=0.6 leaves room for a 0.3 partner.
        let r = m.multiplex_allocations(0.6, 0.3);
        assert_eq!(r.len(), 3);
        assert!(r.iter().all(|a| a.mem_share == 0.6 && a.sm_share < 1.0));
        assert!(m.multiplex_allocations(0.3, 0.6).is_empty());
        assert!(m.multiplex_allocations(0.6, 0.6).is_empty());
    }
}
