use serde::{Deserialize, Serialize};

use super::ScheduleError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancePlan {
    /// Batch size per worker; index `target` is `bs_t`.
    pub batch_sizes: Vec<usize>,
    pub target: usize,
    pub s_factor: f64,
    /// `T(bs_i) / T(bs_t)` achieved by the plan.
    pub realized_ratio: f64,
}

/// Splits `global_batch` so that every non-target worker runs `s_factor`
/// times longer than the target, which is slowed by co-location. All
/// non-target workers receive the same batch size.
pub fn balance_batches<F>(
    global_batch: usize,
    n: usize,
    target: usize,
    s_factor: f64,
    latency: F,
) -> Result<BalancePlan, ScheduleError>
where
    F: Fn(usize) -> f64,
{
    if n == 0 || target >= n {
        return Err(ScheduleError::Balance(format!("target {target} not among {n} workers")));
    }
    if global_batch < n {
        return Err(ScheduleError::Balance(format!(
            "global batch {global_batch} is smaller than the {n} workers"
        )));
    }
    if !(s_factor >= 1.0 && s_factor.is_finite()) {
        return Err(ScheduleError::Balance(format!("slowdown factor {s_factor} must be >= 1")));
    }
    if n == 1 {
        return Ok(BalancePlan {
            batch_sizes: vec![global_batch],
            target,
            s_factor,
            realized_ratio: 1.0,
        });
    }
    let others = n - 1;
    let mut best: Option<(f64, usize, usize, f64)> = None;
    for b in 1..=(global_batch - 1) / others {
        let bs_t = global_batch - others * b;
        let ratio = latency(b) / latency(bs_t);
        let err = (ratio - s_factor).abs();
        let better = match best {
            None => true,
            Some((e, _, t, _)) => err < e - 1e-12 || ((err - e).abs() <= 1e-12 && bs_t > t),
        };
        if better {
            best = Some((err, b, bs_t, ratio));
        }
    }
    let (_, b, bs_t, ratio) = best.expect("at least one split exists when global_batch >= n");
    let mut batch_sizes = vec![b; n];
    batch_sizes[target] = bs_t;
    Ok(BalancePlan {
        batch_sizes,
        target,
        s_factor,
        realized_ratio: ratio,
    })
}
