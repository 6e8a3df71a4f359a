use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::graph::SubStageKind;

use super::{SlowdownError, ALPHA_GRID, MEM_GRID};

pub const TABLE_VERSION: u32 = 1;

/// Row key: the sub-stage being slowed and its co-located partner.
pub type RowKey = (SubStageKind, Option<SubStageKind>);

/// Profiled slowdown factors over an α × mem lattice, one row per kind pair.
/// Rows with partner `None` are the isolation curves.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowdownTable {
    pub kinds: Vec<SubStageKind>,
    pub alpha: Vec<f64>,
    pub mem: Vec<f64>,
    /// Allows SM shares of the two sides to sum above 1.
    pub oversubscribed: bool,
    rows: BTreeMap<RowKey, Vec<f64>>,
}

fn partner_name(b: Option<SubStageKind>) -> &'static str {
    b.map_or("None", SubStageKind::name)
}

fn cell_name(a: SubStageKind, b: Option<SubStageKind>, alpha: f64, mem: f64) -> String {
    format!("({a}, {}, alpha={alpha}, mem={mem})", partner_name(b))
}

impl SlowdownTable {
    /// Builds a table from a cell function and validates it.
    pub fn from_fn<F>(
        kinds: Vec<SubStageKind>,
        alpha: Vec<f64>,
        mem: Vec<f64>,
        mut f: F,
    ) -> Result<Self, SlowdownError>
    where
        F: FnMut(SubStageKind, Option<SubStageKind>, f64, f64) -> f64,
    {
        let mut rows = BTreeMap::new();
        for &a in &kinds {
            for b in std::iter::once(None).chain(kinds.iter().copied().map(Some)) {
                let mut row = Vec::with_capacity(alpha.len() * mem.len());
                for &x in &alpha {
                    for &m in &mem {
                        row.push(f(a, b, x, m));
                    }
                }
                rows.insert((a, b), row);
            }
        }
        let table = Self {
            kinds,
            alpha,
            mem,
            oversubscribed: false,
            rows,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn row(&self, a: SubStageKind, b: Option<SubStageKind>) -> Option<&[f64]> {
        self.rows.get(&(a, b)).map(Vec::as_slice)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&RowKey, &Vec<f64>)> {
        self.rows.iter()
    }

    pub fn has_kind(&self, k: SubStageKind) -> bool {
        self.kinds.contains(&k)
    }

    /// Stored factor at grid indices `(i, j)`.
    pub fn cell(&self, a: SubStageKind, b: Option<SubStageKind>, i: usize, j: usize) -> Option<f64> {
        self.row(a, b).map(|r| r[i * self.mem.len() + j])
    }

    /// Largest factor anywhere in the table.
    pub fn max_factor(&self) -> f64 {
        self.rows
            .values()
            .flat_map(|r| r.iter().copied())
            .fold(1.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), SlowdownError> {
        for (name, grid) in [("alpha", &self.alpha), ("mem", &self.mem)] {
            if grid.is_empty() {
                return Err(SlowdownError::Grid(format!("{name} grid is empty")));
            }
            if grid.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
                return Err(SlowdownError::Grid(format!("{name} grid values must lie in (0, 1]")));
            }
            if grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(SlowdownError::Grid(format!("{name} grid must be strictly increasing")));
            }
        }
        let full_alpha = self.alpha.iter().position(|&a| a == 1.0);
        let full_mem = self.mem.iter().position(|&m| (m - 0.8).abs() < 1e-12);
        let (Some(fa), Some(fm)) = (full_alpha, full_mem) else {
            return Err(SlowdownError::Grid(
                "grid must contain alpha=1 and mem=0.8 (the exclusive point)".into(),
            ));
        };
        let nm = self.mem.len();
        for &a in &self.kinds {
            for b in std::iter::once(None).chain(self.kinds.iter().copied().map(Some)) {
                let Some(row) = self.rows.get(&(a, b)) else {
                    return Err(SlowdownError::MissingCell(format!(
                        "row ({a}, {}) is missing",
                        partner_name(b)
                    )));
                };
                let at = |i: usize, j: usize| row[i * nm + j];
                for (i, &x) in self.alpha.iter().enumerate() {
                    for (j, &m) in self.mem.iter().enumerate() {
                        let v = at(i, j);
                        let bad = |reason: String| SlowdownError::Cell {
                            cell: cell_name(a, b, x, m),
                            reason,
                        };
                        if !v.is_finite() || v < 1.0 {
                            return Err(bad(format!("factor {v} is below 1.0")));
                        }
                        if a == SubStageKind::ToolWait && v != 1.0 {
                            return Err(bad(format!("ToolWait rows must be 1.0, found {v}")));
                        }
                        if i + 1 < self.alpha.len() && at(i + 1, j) > v {
                            return Err(bad(format!(
                                "factor rises from {v} to {} as alpha grows",
                                at(i + 1, j)
                            )));
                        }
                        if j + 1 < nm && at(i, j + 1) > v {
                            return Err(bad(format!(
                                "factor rises from {v} to {} as mem grows",
                                at(i, j + 1)
                            )));
                        }
                    }
                }
                if b.is_none() && at(fa, fm) != 1.0 {
                    return Err(SlowdownError::Cell {
                        cell: cell_name(a, b, 1.0, 0.8),
                        reason: format!("isolated full allocation must be 1.0, found {}", at(fa, fm)),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "slowdown version={TABLE_VERSION} oversubscribed={}",
            self.oversubscribed
        );
        let kinds: Vec<&str> = self.kinds.iter().map(|k| k.name()).collect();
        let _ = writeln!(out, "kinds {}", kinds.join(" "));
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "alpha {}", join(&self.alpha));
        let _ = writeln!(out, "mem {}", join(&self.mem));
        for ((a, b), row) in &self.rows {
            for (i, x) in self.alpha.iter().enumerate() {
                for (j, m) in self.mem.iter().enumerate() {
                    let v = row[i * self.mem.len() + j];
                    let _ = writeln!(out, "{a} {} {x} {m} {v}", partner_name(*b));
                }
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, SlowdownError> {
        let perr = |line: usize, msg: String| SlowdownError::Parse { line, msg };
        let mut oversubscribed = false;
        let mut kinds: Option<Vec<SubStageKind>> = None;
        let mut alpha: Option<Vec<f64>> = None;
        let mut mem: Option<Vec<f64>> = None;
        let mut cells: Vec<(usize, SubStageKind, Option<SubStageKind>, f64, f64, f64)> = Vec::new();
        let mut saw_header = false;

        let num = |ln: usize, s: &str| -> Result<f64, SlowdownError> {
            s.parse::<f64>()
                .map_err(|_| perr(ln, format!("cannot parse number `{s}`")))
        };
        let kind = |ln: usize, s: &str| -> Result<SubStageKind, SlowdownError> {
            s.parse().map_err(|_| perr(ln, format!("unknown kind `{s}`")))
        };

        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks[0] {
                "slowdown" => {
                    saw_header = true;
                    for t in &toks[1..] {
                        match t.split_once('=') {
                            Some(("version", v)) => {
                                if v != TABLE_VERSION.to_string() {
                                    return Err(perr(ln, format!("unsupported table version {v}")));
                                }
                            }
                            Some(("oversubscribed", v)) => {
                                oversubscribed = v
                                    .parse()
                                    .map_err(|_| perr(ln, format!("bad oversubscribed flag `{v}`")))?
                            }
                            _ => return Err(perr(ln, format!("unknown header field `{t}`"))),
                        }
                    }
                }
                "kinds" => {
                    kinds = Some(toks[1..].iter().map(|s| kind(ln, s)).collect::<Result<_, _>>()?)
                }
                "alpha" => alpha = Some(toks[1..].iter().map(|s| num(ln, s)).collect::<Result<_, _>>()?),
                "mem" => mem = Some(toks[1..].iter().map(|s| num(ln, s)).collect::<Result<_, _>>()?),
                _ if toks.len() == 5 => {
                    let a = kind(ln, toks[0])?;
                    let b = if toks[1] == "None" { None } else { Some(kind(ln, toks[1])?) };
                    cells.push((ln, a, b, num(ln, toks[2])?, num(ln, toks[3])?, num(ln, toks[4])?));
                }
                _ => return Err(perr(ln, format!("unrecognized line `{line}`"))),
            }
        }
        if !saw_header {
            return Err(perr(1, "missing `slowdown version=` header".into()));
        }
        let kinds = kinds.ok_or_else(|| perr(1, "missing `kinds` line".into()))?;
        let alpha = alpha.ok_or_else(|| perr(1, "missing `alpha` grid".into()))?;
        let mem = mem.ok_or_else(|| perr(1, "missing `mem` grid".into()))?;

        let nm = mem.len();
        let mut rows: BTreeMap<RowKey, Vec<Option<f64>>> = BTreeMap::new();
        for (ln, a, b, x, m, v) in cells {
            if !kinds.contains(&a) || b.is_some_and(|b| !kinds.contains(&b)) {
                return Err(perr(ln, format!("kind pair ({a}, {}) not in `kinds`", partner_name(b))));
            }
            let i = alpha
                .iter()
                .position(|&g| (g - x).abs() < 1e-12)
                .ok_or_else(|| perr(ln, format!("alpha {x} is not a grid value")))?;
            let j = mem
                .iter()
                .position(|&g| (g - m).abs() < 1e-12)
                .ok_or_else(|| perr(ln, format!("mem {m} is not a grid value")))?;
            let row = rows.entry((a, b)).or_insert_with(|| vec![None; alpha.len() * nm]);
            if row[i * nm + j].replace(v).is_some() {
                return Err(perr(ln, format!("duplicate cell {}", cell_name(a, b, x, m))));
            }
        }
        let mut full = BTreeMap::new();
        for &a in &kinds {
            for b in std::iter::once(None).chain(kinds.iter().copied().map(Some)) {
                let row = rows.remove(&(a, b)).unwrap_or_else(|| vec![None; alpha.len() * nm]);
                let mut vals = Vec::with_capacity(row.len());
                for (idx, v) in row.into_iter().enumerate() {
                    let v = v.ok_or_else(|| {
                        SlowdownError::MissingCell(cell_name(a, b, alpha[idx / nm], mem[idx % nm]))
                    })?;
                    vals.push(v);
                }
                full.insert((a, b), vals);
            }
        }
        let table = Self {
            kinds,
            alpha,
            mem,
            oversubscribed,
            rows: full,
        };
        table.validate()?;
        Ok(table)
    }
}

pub fn load_table(path: &Path) -> Result<SlowdownTable, SlowdownError> {
    let text = std::fs::read_to_string(path).map_err(|e| SlowdownError::io(path, e))?;
    SlowdownTable::parse(&text)
}

pub fn save_table(table: &SlowdownTable, path: &Path) -> Result<(), SlowdownError> {
    std::fs::write(path, table.to_text()).map_err(|e| SlowdownError::io(path, e))
}

// Per-kind factors indexed like ALPHA_GRID / MEM_GRID.
fn sm_curve(k: SubStageKind) -> [f64; 4] {
    use SubStageKind::*;
    match k {
        Training => [2.7, 1.6, 1.2, 1.0],
        Reference => [2.5, 1.55, 1.18, 1.0],
        PrefillBurst => [2.6, 1.6, 1.2, 1.0],
        DecodeLarge => [2.2, 1.45, 1.15, 1.0],
        DecodeMedium => [1.5, 1.2, 1.06, 1.0],
        DecodeSmall => [1.08, 1.03, 1.01, 1.0],
        ToolWait => [1.0; 4],
    }
}

fn mem_curve(k: SubStageKind) -> [f64; 4] {
    use SubStageKind::*;
    match k {
        Training => [1.35, 1.15, 1.05, 1.0],
        Reference => [1.2, 1.08, 1.02, 1.0],
        PrefillBurst => [1.15, 1.05, 1.02, 1.0],
        DecodeLarge => [1.7, 1.43, 1.15, 1.0],
        DecodeMedium => [1.4, 1.2, 1.07, 1.0],
        DecodeSmall => [1.05, 1.02, 1.0, 1.0],
        ToolWait => [1.0; 4],
    }
}

/// How hard a kind presses on shared bandwidth and caches.
fn pressure(k: Option<SubStageKind>) -> f64 {
    use SubStageKind::*;
    match k {
        Some(Training) => 1.0,
        Some(PrefillBurst) => 0.9,
        Some(Reference) => 0.8,
        Some(DecodeLarge) => 0.7,
        Some(DecodeMedium) => 0.4,
        Some(DecodeSmall) => 0.2,
        Some(ToolWait) | None => 0.0,
    }
}

fn sensitivity(k: SubStageKind) -> f64 {
    use SubStageKind::*;
    match k {
        Training => 0.19,
        Reference | PrefillBurst => 0.17,
        DecodeLarge => 0.2,
        DecodeMedium => 0.15,
        DecodeSmall => 0.1,
        ToolWait => 0.0,
    }
}

/// Built-in fixture table. Each cell is the product of an SM-share curve, a
/// memory-share curve and a pairwise contention term, rounded to 0.01.
pub fn default_table() -> SlowdownTable {
    SlowdownTable::from_fn(
        SubStageKind::ALL.to_vec(),
        ALPHA_GRID.to_vec(),
        MEM_GRID.to_vec(),
        |a, b, x, m| {
            let i = ALPHA_GRID.iter().position(|&g| g == x).expect("grid value");
            let j = MEM_GRID.iter().position(|&g| g == m).expect("grid value");
            let raw = sm_curve(a)[i] * mem_curve(a)[j] * (1.0 + sensitivity(a) * pressure(b));
            (raw * 100.0).round() / 100.0
        },
    )
    .expect("built-in table is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use SubStageKind::*;

    #[test]
    fn default_table_anchors() {
        let t = default_table();
        assert_eq!(t.cell(Training, None, 0, 3), Some(2.7));
        assert_eq!(t.cell(Training, Some(Training), 1, 1), Some(2.19));
        assert_eq!(t.cell(DecodeLarge, None, 3, 1), Some(1.43));
        assert!(t.cell(DecodeSmall, None, 0, 3).unwrap() <= 1.1);
        for k in SubStageKind::ALL {
            assert_eq!(t.cell(k, None, 3, 3), Some(1.0));
        }
        assert!(t.row(ToolWait, Some(Training)).unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn text_round_trip() {
        let t = default_table();
        let back = SlowdownTable::parse(&t.to_text()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_text(), t.to_text());
    }

    fn small(v: f64) -> String {
        let t = SlowdownTable::from_fn(vec![Training], vec![0.5, 1.0], vec![0.4, 0.8], |_, b, x, m| {
            if b.is_none() && x == 1.0 && m == 0.8 {
                1.0
            } else {
                1.5
            }
        })
        .unwrap();
        t.to_text().replacen("Training None 0.5 0.4 1.5", &format!("Training None 0.5 0.4 {v}"), 1)
    }

    #[test]
    fn rejects_factor_below_one() {
        let err = SlowdownTable::parse(&small(0.9)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("Training, None, alpha=0.5, mem=0.4"), "{msg}");
    }

    #[test]
    fn rejects_non_monotone_and_missing() {
        // Raising the low-alpha cell is fine; lowering it below its neighbour is not.
        assert!(SlowdownTable::parse(&small(1.6)).is_ok());
        assert!(matches!(SlowdownTable::parse(&small(1.2)), Err(SlowdownError::Cell { .. })));
        let missing: String = small(1.5)
            .lines()
            .filter(|l| !l.starts_with("Training Training 1 0.8"))
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(matches!(SlowdownTable::parse(&missing), Err(SlowdownError::MissingCell(_))));
    }

    #[test]
    fn rejects_nonunit_identity() {
        let text = small(1.5).replace("Training None 1 0.8 1", "Training None 1 0.8 1.1");
        assert!(SlowdownTable::parse(&text).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("table.txt");
        save_table(&default_table(), &p).unwrap();
        assert_eq!(load_table(&p).unwrap(), default_table());
    }
}
