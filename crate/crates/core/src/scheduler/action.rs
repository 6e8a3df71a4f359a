use std::fmt::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::slowdown::ResourceAllocation;

use super::{NodeRef, ScheduleError};

pub const SCHEDULE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScheduleAction {
    Exclusive(NodeRef),
    /// `a` runs with `alloc`, `b` with its complement. Either side may
    /// already be running, in which case it is re-rated.
    Multiplex {
        a: NodeRef,
        b: NodeRef,
        alloc: ResourceAllocation,
    },
    /// Moves the listed rollout sub-stages onto `target`'s worker.
    Merge { members: Vec<NodeRef>, target: NodeRef },
}

impl ScheduleAction {
    /// Tie-break rank: Multiplex, then Merge, then Exclusive.
    pub fn rank(&self) -> u8 {
        match self {
            ScheduleAction::Multiplex { .. } => 0,
            ScheduleAction::Merge { .. } => 1,
            ScheduleAction::Exclusive(_) => 2,
        }
    }

    pub fn nodes(&self) -> Vec<NodeRef> {
        match self {
            ScheduleAction::Exclusive(n) => vec![*n],
            ScheduleAction::Multiplex { a, b, .. } => vec![*a, *b],
            ScheduleAction::Merge { members, .. } => members.clone(),
        }
    }
}

impl fmt::Display for ScheduleAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleAction::Exclusive(n) => write!(f, "exclusive {n}"),
            ScheduleAction::Multiplex { a, b, alloc } => {
                write!(f, "multiplex {a} {b} alpha={} mem={}", alloc.sm_share, alloc.mem_share)
            }
            ScheduleAction::Merge { members, target } => {
                let m: Vec<String> = members.iter().map(|n| n.to_string()).collect();
                write!(f, "merge {} target={target}", m.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledAction {
    pub start: f64,
    pub action: ScheduleAction,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Schedule {
    pub policy: String,
    pub actions: Vec<ScheduledAction>,
}

impl Schedule {
    pub fn new(policy: impl Into<String>) -> Self {
        Self {
            policy: policy.into(),
            actions: Vec::new(),
        }
    }

    pub fn push(&mut self, start: f64, action: ScheduleAction) {
        self.actions.push(ScheduledAction { start, action });
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ScheduledAction> {
        self.actions.iter()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "schedule version={SCHEDULE_VERSION} policy={}", self.policy);
        for a in &self.actions {
            let _ = writeln!(out, "{} {}", a.start, a.action);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ScheduleError> {
        let err = |line: usize, msg: String| ScheduleError::Parse { line, msg };
        let mut sched: Option<Schedule> = None;
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks[0] == "schedule" {
                let mut s = Schedule::default();
                for t in &toks[1..] {
                    match t.split_once('=') {
                        Some(("version", v)) if v == SCHEDULE_VERSION.to_string() => {}
                        Some(("version", v)) => {
                            return Err(err(ln, format!("unsupported schedule version {v}")))
                        }
                        Some(("policy", p)) => s.policy = p.to_string(),
                        _ => return Err(err(ln, format!("unknown header field `{t}`"))),
                    }
                }
                sched = Some(s);
                continue;
            }
            let s = sched
                .as_mut()
                .ok_or_else(|| err(ln, "action before `schedule` header".into()))?;
            let start: f64 = toks[0]
                .parse()
                .map_err(|_| err(ln, format!("bad start time `{}`", toks[0])))?;
            let node = |t: &str| t.parse::<NodeRef>().map_err(|m| err(ln, m));
            let kv = |t: &str, key: &str| -> Result<f64, ScheduleError> {
                t.strip_prefix(key)
                    .and_then(|v| v.strip_prefix('='))
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| err(ln, format!("expected {key}=<number>, got `{t}`")))
            };
            let action = match (toks.get(1).copied(), toks.len()) {
                (Some("exclusive"), 3) => ScheduleAction::Exclusive(node(toks[2])?),
                (Some("multiplex"), 6) => ScheduleAction::Multiplex {
                    a: node(toks[2])?,
                    b: node(toks[3])?,
                    alloc: ResourceAllocation::new(kv(toks[4], "alpha")?, kv(toks[5], "mem")?),
                },
                (Some("merge"), 4) => {
                    let members = toks[2].split(',').map(node).collect::<Result<Vec<_>, _>>()?;
                    let target = toks[3]
                        .strip_prefix("target=")
                        .ok_or_else(|| err(ln, format!("expected target=<node>, got `{}`", toks[3])))?;
                    ScheduleAction::Merge {
                        members,
                        target: node(target)?,
                    }
                }
                _ => return Err(err(ln, format!("unrecognized action `{line}`"))),
            };
            s.push(start, action);
        }
        sched.ok_or_else(|| err(1, "missing `schedule` header".into()))
    }

    pub fn save(&self, path: &Path) -> Result<(), ScheduleError> {
        std::fs::write(path, self.to_text()).map_err(|e| ScheduleError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, ScheduleError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScheduleError::io(path, e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut s = Schedule::new("lookahead");
        s.push(0.0, ScheduleAction::Exclusive(NodeRef::new(0, 1)));
        s.push(
            12.5,
            ScheduleAction::Multiplex {
                a: NodeRef::new(0, 2),
                b: NodeRef::new(1, 0),
                alloc: ResourceAllocation::new(0.25, 0.6),
            },
        );
        s.push(
            1.0 / 3.0,
            ScheduleAction::Merge {
                members: vec![NodeRef::new(0, 3), NodeRef::new(0, 7)],
                target: NodeRef::new(0, 7),
            },
        );
        let text = s.to_text();
        assert!(text.contains("multiplex p0:2 p1:0 alpha=0.25 mem=0.6"));
        assert_eq!(Schedule::parse(&text).unwrap(), s);
    }

    #[test]
    fn parse_errors() {
        assert!(Schedule::parse("0 exclusive p0:1\n").is_err());
        let e = Schedule::parse("schedule version=1\n0 teleport p0:1\n").unwrap_err();
        assert!(matches!(e, ScheduleError::Parse { line: 2, .. }));
    }
}
