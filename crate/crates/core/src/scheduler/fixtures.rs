//! Seeded instance generators and hand-built scenarios for tests and the
//! acceptance harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{GraphBuilder, NodeId, SubStageGraph, SubStageKind};
use crate::slowdown::{ResourceAllocation, SlowdownModel};

use crate::sim::{Engine, SimError, SimOptions};

use super::{migration_gain, Instance, MigrationEstimate, MigrationMember, ScheduleError};

const ROLLOUT_KINDS: [SubStageKind; 4] = [
    SubStageKind::PrefillBurst,
    SubStageKind::DecodeLarge,
    SubStageKind::DecodeMedium,
    SubStageKind::DecodeSmall,
];

fn fill_rollout(b: &mut GraphBuilder, id: NodeId, kind: SubStageKind, rng: &mut ChaCha8Rng) {
    let n = b.node_mut(id);
    n.active_requests = match kind {
        SubStageKind::DecodeSmall => rng.random_range(8..120),
        SubStageKind::DecodeMedium => rng.random_range(128..1000),
        _ => rng.random_range(1024..4000),
    };
    n.context_tokens = rng.random_range(1_000..40_000);
    n.tokens = (n.duration * 40.0 * n.active_requests as f64).round() as u64;
}

/// One pipeline: a short rollout chain per worker, then a Training node per
/// worker behind a barrier on every rollout chain.
fn random_pipeline(pipeline: u32, workers: u32, max_nodes: usize, rng: &mut ChaCha8Rng) -> SubStageGraph {
    let mut b = GraphBuilder::new(pipeline);
    let rollout_budget = max_nodes - workers as usize;
    let mut lens = vec![1usize; workers as usize];
    let mut spare = rollout_budget - lens.len();
    for l in lens.iter_mut() {
        let extra = rng.random_range(0..=spare.min(1));
        *l += extra;
        spare -= extra;
    }
    let mut tails = Vec::new();
    for (w, &len) in lens.iter().enumerate() {
        let mut prev = None;
        for _ in 0..len {
            let kind = if rng.random_bool(0.1) {
                SubStageKind::ToolWait
            } else {
                ROLLOUT_KINDS[rng.random_range(0..ROLLOUT_KINDS.len())]
            };
            let dur = (rng.random_range(2.0..20.0f64) * 4.0).round() / 4.0;
            let id = b.node(w as u32, kind, dur);
            if kind != SubStageKind::ToolWait {
                fill_rollout(&mut b, id, kind, rng);
            }
            if let Some(p) = prev {
                b.edge(p, id);
            }
            prev = Some(id);
        }
        tails.push(prev.unwrap());
    }
    for w in 0..workers {
        let dur = (rng.random_range(3.0..15.0f64) * 4.0).round() / 4.0;
        let t = b.node(w, SubStageKind::Training, dur);
        b.node_mut(t).tokens = (dur * 500.0) as u64;
        for &tail in &tails {
            b.edge(tail, t);
        }
    }
    b.build().expect("generated graphs are valid")
}

/// Two pipelines on one or two shared workers with at most ten sub-stages.
pub fn random_small_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let workers = rng.random_range(1..=2u32);
    let per_pipeline = if workers == 1 { rng.random_range(2..=4) } else { rng.random_range(4..=5) };
    let graphs = (0..2).map(|p| random_pipeline(p, workers, per_pipeline, &mut rng)).collect();
    Instance::new(graphs).expect("two distinct pipelines")
}

/// One worker, two pipelines. A runs a rollout then trains; B trains, waits
/// on a tool, then runs a short rollout. Giving A's rollout the worker first
/// leaves the two training steps to collide.
pub fn trap_instance() -> Instance {
    let mut a = GraphBuilder::new(0);
    a.chain(0, &[(SubStageKind::DecodeLarge, 4.0), (SubStageKind::Training, 6.0)]);
    let mut b = GraphBuilder::new(1);
    b.chain(
        0,
        &[
            (SubStageKind::Training, 6.0),
            (SubStageKind::ToolWait, 4.0),
            (SubStageKind::DecodeSmall, 6.0),
        ],
    );
    Instance::new(vec![a.build().expect("valid"), b.build().expect("valid")]).expect("two distinct pipelines")
}

/// Long-tail fragments of pipeline 0, one per worker, each co-running with
/// a pipeline 1 partner (or alone), and a merge target.
#[derive(Debug, Clone)]
pub struct MigrationCase {
    pub instance: Instance,
    pub fragments: Vec<usize>,
    pub partners: Vec<Option<usize>>,
    pub allocs: Vec<ResourceAllocation>,
    pub target: usize,
}

impl MigrationCase {
    pub fn estimate(&self, model: &SlowdownModel) -> Result<MigrationEstimate, ScheduleError> {
        let inst = &self.instance;
        let members: Vec<MigrationMember<'_>> = (0..self.fragments.len())
            .map(|i| MigrationMember {
                stage: inst.stage(self.fragments[i]),
                alloc: self.allocs[i],
                partner: self.partners[i].map(|p| inst.stage(p)),
            })
            .collect();
        migration_gain(&members, self.target, model, inst.graph_of(self.fragments[0]))
    }

    /// Simulated makespans without and with the merge, everything started at 0.
    pub fn simulate(&self, model: &SlowdownModel) -> Result<(f64, f64), SimError> {
        let mut stay = Engine::new(&self.instance, model, SimOptions::default());
        for (i, &f) in self.fragments.iter().enumerate() {
            match self.partners[i] {
                Some(p) => stay.multiplex(f, p, self.allocs[i])?,
                None => stay.start_exclusive(f)?,
            }
        }
        let mut moved = stay.fork();
        moved.merge(&self.fragments, self.fragments[self.target])?;
        let mut out = [0.0; 2];
        for (o, mut e) in out.iter_mut().zip([stay, moved]) {
            while !e.is_finished() {
                e.advance()?;
            }
            *o = e.makespan();
        }
        Ok((out[0], out[1]))
    }
}

const PARTNER_KINDS: [SubStageKind; 5] = [
    SubStageKind::Training,
    SubStageKind::DecodeLarge,
    SubStageKind::PrefillBurst,
    SubStageKind::DecodeMedium,
    SubStageKind::DecodeSmall,
];

pub fn random_migration_case(seed: u64, model: &SlowdownModel) -> MigrationCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let workers = rng.random_range(2..=3u32);
        let mut a = GraphBuilder::new(0);
        let mut b = GraphBuilder::new(1);
        let mut frag_ids = Vec::new();
        let mut partner_ids = Vec::new();
        for w in 0..workers {
            let kind = if rng.random_bool(0.5) { SubStageKind::DecodeSmall } else { SubStageKind::DecodeMedium };
            let id = a.node(w, kind, (rng.random_range(2.0..30.0f64) * 4.0).round() / 4.0);
            fill_rollout(&mut a, id, kind, &mut rng);
            a.node_mut(id).context_tokens = rng.random_range(5_000..150_000);
            frag_ids.push(id);
            partner_ids.push(if rng.random_bool(0.15) {
                None
            } else {
                let kind = PARTNER_KINDS[rng.random_range(0..PARTNER_KINDS.len())];
                let id = b.node(w, kind, (rng.random_range(2.0..30.0f64) * 4.0).round() / 4.0);
                if kind != SubStageKind::Training {
                    fill_rollout(&mut b, id, kind, &mut rng);
                }
                Some(id)
            });
        }
        let has_b = partner_ids.iter().any(Option::is_some);
        let mut graphs = vec![a.build().expect("valid")];
        if has_b {
            graphs.push(b.build().expect("valid"));
        }
        let instance = Instance::new(graphs).expect("distinct pipelines");
        let offset = instance.pipeline_range(1).start;
        let fragments: Vec<usize> = frag_ids.iter().map(|id| id.index()).collect();
        let partners: Vec<Option<usize>> = partner_ids.iter().map(|p| p.map(|id| offset + id.index())).collect();

        let mut allocs = Vec::new();
        for (&f, p) in fragments.iter().zip(&partners) {
            match p {
                None => allocs.push(ResourceAllocation::EXCLUSIVE),
                Some(p) => {
                    let opts =
                        model.multiplex_allocations(instance.stage(f).mem_fraction, instance.stage(*p).mem_fraction);
                    if opts.is_empty() {
                        break;
                    }
                    allocs.push(opts[rng.random_range(0..opts.len())]);
                }
            }
        }
        if allocs.len() < fragments.len() {
            continue;
        }
        let need = fragments.iter().map(|&f| instance.stage(f).mem_fraction).fold(0.0, f64::max);
        let targets: Vec<usize> = (0..fragments.len())
            .filter(|&i| partners[i].is_none_or(|p| model.feasible(need, instance.stage(p).mem_fraction)))
            .collect();
        if targets.is_empty() {
            continue;
        }
        let target = targets[rng.random_range(0..targets.len())];
        return MigrationCase {
            instance,
            fragments,
            partners,
            allocs,
            target,
        };
    }
}
