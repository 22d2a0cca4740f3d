//! Closed-form regret bounds for an instance: the Gaussian lower-bound
//! coefficient, the per-pair elimination phases `p'_{k,m}`, the four-term
//! upper bound and the lower-bound coefficients at alpha = 0 and alpha = 1.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mixed_model::{
    global_means, mixed_means, BanditInstance, MixedModelView, MixingWeights,
};
use crate::schedule::ExplorationSchedule;

fn check_gaps(view: &MixedModelView) -> Result<()> {
    for (m, k, gap) in view.suboptimal_pairs() {
        if gap.is_nan() || gap <= 0.0 {
            return Err(Error::DegenerateInstance { client: m, arm: k });
        }
    }
    Ok(())
}

/// Coefficient of `ln T` in the lower bound for unit-variance Gaussian rewards.
pub fn gaussian_lower_bound(view: &MixedModelView, weights: &MixingWeights) -> Result<f64> {
    check_gaps(view)?;
    let (b2, g2) = (weights.beta * weights.beta, weights.gamma * weights.gamma);
    Ok(view
        .suboptimal_pairs()
        .map(|(_, k, gap)| {
            let local = 2.0 * b2 / gap;
            let min_gap = view.min_gaps[k];
            let global = if min_gap.is_finite() {
                2.0 * g2 * gap / (min_gap * min_gap)
            } else {
                0.0
            };
            local.max(global)
        })
        .sum())
}

/// Smallest phase `p >= 1` with `M F(p) >= 64 ln T / gap^2`.
pub fn solve_p_prime(schedule: &ExplorationSchedule, num_clients: usize, gap: f64) -> Result<u32> {
    if gap.is_nan() || gap <= 0.0 {
        return Err(Error::NonPositiveGap(gap));
    }
    let target = 64.0 * schedule.log_horizon() / (gap * gap);
    let m = num_clients as f64;
    let reached = |p: u32| m * schedule.cumulative(p) >= target;
    if reached(1) {
        return Ok(1);
    }
    // F is increasing: gallop to a bracket, then bisect.
    let mut hi = 2u32;
    while !reached(hi) {
        hi = hi.checked_mul(2).ok_or_else(|| {
            Error::InvalidConfig(format!("gap {gap} needs more than u32::MAX phases"))
        })?;
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if reached(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpperBoundTerms {
    pub local_exploration: f64,
    pub global_exploration: f64,
    pub exploitation: f64,
    pub communication: f64,
    pub constant: f64,
}

impl UpperBoundTerms {
    pub fn total(&self) -> f64 {
        self.local_exploration
            + self.global_exploration
            + self.exploitation
            + self.communication
            + self.constant
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub num_clients: usize,
    pub num_arms: usize,
    pub lower_bound_coeff: f64,
    /// Row-major `M x K`; `None` at each client's optimal arm.
    pub p_prime: Vec<Option<u32>>,
    /// Max of `p'_{k,m}` over clients for which `k` is suboptimal.
    pub p_prime_k: Vec<Option<u32>>,
    pub p_prime_max: u32,
    pub upper_bound: f64,
    pub terms: UpperBoundTerms,
}

impl BoundReport {
    pub fn p_prime_at(&self, client: usize, arm: usize) -> Option<u32> {
        self.p_prime[client * self.num_arms + arm]
    }

    /// Flat `key=value` lines; arms and clients are zero-based.
    pub fn to_key_values(&self) -> String {
        let show = |p: Option<u32>| p.map_or_else(|| "inf".to_string(), |v| v.to_string());
        let mut out = String::new();
        writeln!(out, "lower_bound_coeff={}", self.lower_bound_coeff).unwrap();
        writeln!(out, "upper_bound={}", self.upper_bound).unwrap();
        writeln!(
            out,
            "upper.local_exploration={}",
            self.terms.local_exploration
        )
        .unwrap();
        writeln!(
            out,
            "upper.global_exploration={}",
            self.terms.global_exploration
        )
        .unwrap();
        writeln!(out, "upper.exploitation={}", self.terms.exploitation).unwrap();
        writeln!(out, "upper.communication={}", self.terms.communication).unwrap();
        writeln!(out, "upper.constant={}", self.terms.constant).unwrap();
        writeln!(out, "p_prime_max={}", self.p_prime_max).unwrap();
        for (k, p) in self.p_prime_k.iter().enumerate() {
            writeln!(out, "p_prime_k.{k}={}", show(*p)).unwrap();
        }
        for m in 0..self.num_clients {
            for k in 0..self.num_arms {
                writeln!(out, "p_prime.{m}.{k}={}", show(self.p_prime_at(m, k))).unwrap();
            }
        }
        out
    }
}

/// Evaluates every term of the high-probability upper bound on the regret.
///
/// The exploitation sum starts at phase 2, where `F(p - 1) = F(1)`: phase 1
/// has identical durations at every client and so no waiting.
pub fn regret_upper_bound(
    view: &MixedModelView,
    schedule: &ExplorationSchedule,
    comm_cost: f64,
) -> Result<BoundReport> {
    check_gaps(view)?;
    let (num_clients, num_arms) = (view.num_clients, view.num_arms);
    let weights = MixingWeights::new(view.alpha, num_clients)?;
    let m = num_clients as f64;

    let mut p_prime = vec![None; num_clients * num_arms];
    for (c, k, gap) in view.suboptimal_pairs() {
        p_prime[c * num_arms + k] = Some(solve_p_prime(schedule, num_clients, gap)?);
    }
    let p_prime_k: Vec<Option<u32>> = (0..num_arms)
        .map(|k| {
            (0..num_clients)
                .filter_map(|c| p_prime[c * num_arms + k])
                .max()
        })
        .collect();
    let p_prime_max = p_prime_k.iter().flatten().copied().max().unwrap_or(0);

    let local_len = |p: u32| schedule.phase_lengths(p, view.alpha, num_clients).n_local as f64;
    let global_len = |p: u32| schedule.phase_lengths(p, view.alpha, num_clients).n_global as f64;

    let mut terms = UpperBoundTerms::default();
    for (c, k, gap) in view.suboptimal_pairs() {
        let own = p_prime[c * num_arms + k].expect("suboptimal pairs carry p'");
        let hardest = p_prime_k[k].expect("suboptimal arm carries p'_k");
        terms.local_exploration += gap * (1..=own).map(local_len).sum::<f64>();
        terms.global_exploration += gap * (1..=hardest).map(global_len).sum::<f64>();
        terms.exploitation += gap
            * (2..=own)
                .map(|p| {
                    let miss = (-gap * gap * m * schedule.cumulative(p - 1) / 4.0).exp();
                    num_arms as f64 * local_len(p) * miss
                })
                .sum::<f64>();
    }
    terms.communication = 2.0 * comm_cost * m * p_prime_max as f64;
    terms.constant = 2.0 * (1.0 + 2.0 * comm_cost) * m * m * num_arms as f64;

    Ok(BoundReport {
        num_clients,
        num_arms,
        lower_bound_coeff: gaussian_lower_bound(view, &weights)?,
        p_prime,
        p_prime_k,
        p_prime_max,
        upper_bound: terms.total(),
        terms,
    })
}

/// Lower-bound coefficients of `ln T` at full personalization and at
/// none: `(sum_m sum_k 2 / gap_{k,m}, sum_k 2 M / gap_k)`.
pub fn endpoint_lower_bounds(instance: &BanditInstance) -> Result<(f64, f64)> {
    let local = mixed_means(instance, &MixingWeights::new(1.0, instance.num_clients())?)?;
    check_gaps(&local)?;
    let personalized = local.suboptimal_pairs().map(|(_, _, gap)| 2.0 / gap).sum();

    let global = global_means(instance);
    let best = crate::mixed_model::argmax(&global);
    let m = instance.num_clients() as f64;
    let mut generalized = 0.0;
    for (k, &mu) in global.iter().enumerate() {
        if k == best {
            continue;
        }
        let gap = global[best] - mu;
        if gap.is_nan() || gap <= 0.0 {
            return Err(Error::DegenerateInstance { client: 0, arm: k });
        }
        generalized += 2.0 * m / gap;
    }
    Ok((personalized, generalized))
}
