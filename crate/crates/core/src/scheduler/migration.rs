use serde::{Deserialize, Serialize};

use crate::graph::{PipelineParams, SubStage, SubStageGraph, SubStageKind};
use crate::slowdown::{ResourceAllocation, SlowdownModel};

use super::ScheduleError;

/// KV-cache rebuild time for a migrated sub-stage's samples, estimated as
/// `2 * P * context` FLOPs at the prefill MFU.
pub fn migration_cost(k: &SubStage, params: &PipelineParams) -> Result<f64, ScheduleError> {
    if params.prefill_mfu <= 0.0 || params.device_peak_flops <= 0.0 {
        return Err(ScheduleError::InvalidMerge(format!(
            "prefill_mfu {} and device_peak_flops {} must be positive",
            params.prefill_mfu, params.device_peak_flops
        )));
    }
    Ok(2.0 * params.model_params * k.context_tokens as f64
        / (params.prefill_mfu * params.device_peak_flops))
}

fn kind_bucket(kind: SubStageKind, n_buckets: usize) -> usize {
    match kind {
        SubStageKind::DecodeSmall => 0,
        SubStageKind::DecodeMedium => 1.min(n_buckets.saturating_sub(1)),
        _ => n_buckets.saturating_sub(1),
    }
}

/// Exclusive time and kind of a merged decode batch. Members are given with
/// the fraction of their work still outstanding. All requests decode together
/// at the merged bucket's step latency, so the batch lasts as long as its
/// longest member would at that latency.
pub fn merged_duration(graph: &SubStageGraph, members: &[(&SubStage, f64)]) -> (f64, SubStageKind) {
    let n = graph.buckets.len();
    let active: u64 = members.iter().map(|(k, _)| k.active_requests).sum();
    let bucket = members
        .iter()
        .map(|(k, _)| kind_bucket(k.kind, n))
        .fold(graph.buckets.bucketize(active), usize::max);
    let lat = |b: usize| {
        graph
            .latency
            .per_bucket
            .get(b)
            .or(graph.latency.per_bucket.last())
            .copied()
            .unwrap_or(1.0)
    };
    let lat_k = lat(bucket);
    let t = members
        .iter()
        .map(|(k, frac)| {
            let own = lat(graph.buckets.bucketize(k.active_requests).max(kind_bucket(k.kind, n)));
            let scale = if own > 0.0 { lat_k / own } else { 1.0 };
            frac * k.duration * scale
        })
        .fold(0.0, f64::max);
    (t, SubStageKind::for_bucket(bucket, n, false))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationEstimate {
    pub t_origin: f64,
    pub t_migr: f64,
    pub delta: f64,
    /// `M(k_i)` per member; zero for the target.
    pub member_costs: Vec<f64>,
    pub merged_time: f64,
}

impl MigrationEstimate {
    pub fn recommends_migration(&self) -> bool {
        self.delta > 0.0
    }
}

/// Per-member inputs of the gain formulas. An idle partner has `t_partner = 0`
/// and `s_partner = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemberTerms {
    pub t_k: f64,
    pub s_k: f64,
    pub t_partner: f64,
    pub s_partner: f64,
    pub cost: f64,
}

/// Evaluates `T_origin` and `T_migr` from already-resolved terms.
pub fn estimate(
    members: &[MemberTerms],
    target: usize,
    merged_time: f64,
    s_target_partner: f64,
) -> Result<MigrationEstimate, ScheduleError> {
    if members.len() < 2 {
        return Err(ScheduleError::InvalidMerge(format!(
            "a merge needs at least two members, got {}",
            members.len()
        )));
    }
    if target >= members.len() {
        return Err(ScheduleError::InvalidMerge(format!("target index {target} out of range")));
    }
    let max_k = members.iter().map(|m| m.s_k * m.t_k).fold(f64::MIN, f64::max);
    let max_p = members.iter().map(|m| m.s_partner * m.t_partner).fold(f64::MIN, f64::max);
    let t_origin = max_k + max_p;

    let costs: Vec<f64> = members
        .iter()
        .enumerate()
        .map(|(i, m)| if i == target { 0.0 } else { m.cost })
        .collect();
    let freed = members
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != target)
        .map(|(_, m)| m.t_partner)
        .fold(f64::MIN, f64::max);
    let on_target = s_target_partner * members[target].t_partner;
    let t_migr = merged_time + costs.iter().sum::<f64>() + on_target.max(freed);
    Ok(MigrationEstimate {
        t_origin,
        t_migr,
        delta: t_origin - t_migr,
        member_costs: costs,
        merged_time,
    })
}

/// A merge member together with its current grant and co-located partner.
#[derive(Debug, Clone, Copy)]
pub struct MigrationMember<'a> {
    pub stage: &'a SubStage,
    pub alloc: ResourceAllocation,
    pub partner: Option<&'a SubStage>,
}

/// Expected gain of merging `members` onto `members[target]`'s worker.
pub fn migration_gain(
    members: &[MigrationMember<'_>],
    target: usize,
    model: &SlowdownModel,
    graph: &SubStageGraph,
) -> Result<MigrationEstimate, ScheduleError> {
    let staged: Vec<(&SubStage, f64)> = members.iter().map(|m| (m.stage, 1.0)).collect();
    let (t_merged, merged_kind) = merged_duration(graph, &staged);
    let mut terms = Vec::with_capacity(members.len());
    for m in members {
        let partner_kind = m.partner.map(|p| p.kind);
        let s_k = model.slowdown(m.stage.kind, partner_kind, m.alloc)?;
        let (t_partner, s_partner) = match m.partner {
            Some(p) => (
                p.duration,
                model.slowdown(p.kind, Some(m.stage.kind), model.complement(m.alloc))?,
            ),
            None => (0.0, 1.0),
        };
        terms.push(MemberTerms {
            t_k: m.stage.duration,
            s_k,
            t_partner,
            s_partner,
            cost: migration_cost(m.stage, &graph.params)?,
        });
    }
    let s_target_partner = match members.get(target).and_then(|m| m.partner) {
        Some(p) => model.slowdown(p.kind, Some(merged_kind), model.complement(members[target].alloc))?,
        None => 1.0,
    };
    estimate(&terms, target, t_merged, s_target_partner)
}
