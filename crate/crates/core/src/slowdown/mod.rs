//! Co-location slowdown model: resource lattice, profiled table and lookup.

mod alloc;
mod model;
mod table;

use std::path::Path;

use thiserror::Error;

use crate::graph::SubStageKind;

pub use alloc::{feasible, ResourceAllocation, ALPHA_GRID, DEFAULT_HEADROOM, MEM_GRID};
pub use model::SlowdownModel;
pub use table::{default_table, load_table, save_table, RowKey, SlowdownTable, TABLE_VERSION};

#[derive(Debug, Error)]
pub enum SlowdownError {
    #[error("no slowdown rows for ({a}, {}); missing: {missing}", b.map_or("None".to_string(), |k| k.to_string()))]
    UnknownPair {
        a: SubStageKind,
        b: Option<SubStageKind>,
        missing: String,
    },
    #[error("allocation out of range: {0}")]
    InvalidAllocation(String),
    #[error("cell {cell}: {reason}")]
    Cell { cell: String, reason: String },
    #[error("missing grid point {0}")]
    MissingCell(String),
    #[error("grid: {0}")]
    Grid(String),
    #[error("table line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SlowdownError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        SlowdownError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_points_are_exact() {
        let m = SlowdownModel::default();
        for ((a, b), row) in m.table.rows() {
            for (i, &x) in m.table.alpha.iter().enumerate() {
                for (j, &mm) in m.table.mem.iter().enumerate() {
                    let got = m.slowdown(*a, *b, ResourceAllocation::new(x, mm)).unwrap();
                    let want = row[i * m.table.mem.len() + j];
                    assert_eq!(got.to_bits(), want.to_bits(), "{a} {b:?} {x} {mm}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn monotone_along_gridlines(
            a in 0usize..7, b in 0usize..8,
            x0 in 0.05f64..1.0, dx in 0.0f64..0.5,
            m0 in 0.05f64..1.0, dm in 0.0f64..0.5,
        ) {
            let m = SlowdownModel::default();
            let a = SubStageKind::ALL[a];
            let b = if b == 7 { None } else { Some(SubStageKind::ALL[b]) };
            let x1 = (x0 + dx).min(1.0);
            let m1 = (m0 + dm).min(1.0);
            let base = m.slowdown(a, b, ResourceAllocation::new(x0, m0)).unwrap();
            let more_sm = m.slowdown(a, b, ResourceAllocation::new(x1, m0)).unwrap();
            let more_mem = m.slowdown(a, b, ResourceAllocation::new(x0, m1)).unwrap();
            prop_assert!(base >= 1.0);
            prop_assert!(more_sm <= base + 1e-12);
            prop_assert!(more_mem <= base + 1e-12);
        }
    }
}
