//! Exploration-length schedules `f(p)`, their partial sums `F(p)`, and the
//! per-phase pull counts and confidence radius derived from them.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Largest exponent evaluated before `2^p` is treated as saturated.
const MAX_EXPONENT: u32 = 1023;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    /// `f(p) = lambda`
    Constant(f64),
    /// `f(p) = lambda * ln T`
    LogScaled(f64),
    /// `f(p) = 2^p`
    Exponential,
    /// `f(p) = 2^p * ln T`
    ExponentialLog,
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse_lambda = |v: &str| {
            v.parse::<f64>()
                .map_err(|e| Error::InvalidSchedule(format!("bad lambda {v:?}: {e}")))
        };
        match s.split_once(':') {
            Some(("const", v)) => Ok(Self::Constant(parse_lambda(v)?)),
            Some(("logT", v)) => Ok(Self::LogScaled(parse_lambda(v)?)),
            None if s == "exp" => Ok(Self::Exponential),
            None if s == "explogT" => Ok(Self::ExponentialLog),
            _ => Err(Error::InvalidSchedule(format!(
                "{s:?}; expected const:<lambda>, logT:<lambda>, exp or explogT"
            ))),
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(l) => write!(f, "const:{l}"),
            Self::LogScaled(l) => write!(f, "logT:{l}"),
            Self::Exponential => f.write_str("exp"),
            Self::ExponentialLog => f.write_str("explogT"),
        }
    }
}

/// A schedule bound to a horizon. Phases are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplorationSchedule {
    kind: ScheduleKind,
    horizon: u64,
    log_horizon: f64,
}

/// Pulls per active arm in the two exploration sub-phases of one phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseLengths {
    pub n_global: u64,
    pub n_local: u64,
}

impl ExplorationSchedule {
    pub fn new(kind: ScheduleKind, horizon: u64) -> Result<Self> {
        if horizon < 3 {
            return Err(Error::InvalidSchedule(format!(
                "horizon must be at least 3, got {horizon}"
            )));
        }
        if let ScheduleKind::Constant(l) | ScheduleKind::LogScaled(l) = kind {
            if !(l >= 1.0 && l.is_finite()) {
                return Err(Error::InvalidSchedule(format!(
                    "lambda must be a finite value >= 1, got {l}"
                )));
            }
        }
        Ok(Self {
            kind,
            horizon,
            log_horizon: (horizon as f64).ln(),
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn log_horizon(&self) -> f64 {
        self.log_horizon
    }

    /// `f(p)`, saturating at `f64::MAX`.
    pub fn f(&self, phase: u32) -> f64 {
        debug_assert!(phase >= 1);
        let value = match self.kind {
            ScheduleKind::Constant(l) => l,
            ScheduleKind::LogScaled(l) => l * self.log_horizon,
            ScheduleKind::Exponential => pow2(phase),
            ScheduleKind::ExponentialLog => pow2(phase) * self.log_horizon,
        };
        value.min(f64::MAX)
    }

    /// `F(p) = f(1) + ... + f(p)`, with `F(0) = 0`.
    pub fn cumulative(&self, phase: u32) -> f64 {
        let p = phase as f64;
        let value = match self.kind {
            ScheduleKind::Constant(l) => p * l,
            ScheduleKind::LogScaled(l) => p * l * self.log_horizon,
            ScheduleKind::Exponential => pow2(phase.saturating_add(1)) - 2.0,
            ScheduleKind::ExponentialLog => {
                (pow2(phase.saturating_add(1)) - 2.0) * self.log_horizon
            }
        };
        value.min(f64::MAX)
    }

    pub fn phase_lengths(&self, phase: u32, alpha: f64, num_clients: usize) -> PhaseLengths {
        let f = self.f(phase);
        PhaseLengths {
            n_global: ceil_count((1.0 - alpha) * f),
            n_local: ceil_count(num_clients as f64 * alpha * f),
        }
    }

    /// `B_p = sqrt(4 ln T / (M F(p)))`.
    pub fn confidence_bound(&self, phase: u32, num_clients: usize) -> f64 {
        (4.0 * self.log_horizon / (num_clients as f64 * self.cumulative(phase))).sqrt()
    }

    /// Per-arm lengths for the adaptive variant, aligned with `gap_estimates`.
    ///
    /// The arm with the smallest estimate keeps the base length; an arm whose
    /// estimate is `r` times larger gets `1/sqrt(r)` of it, rounded up.
    pub fn enhanced_lengths(
        &self,
        phase: u32,
        alpha: f64,
        num_clients: usize,
        gap_estimates: &[f64],
    ) -> Result<Vec<PhaseLengths>> {
        if let Some(&bad) = gap_estimates.iter().find(|g| g.is_nan() || **g <= 0.0) {
            return Err(Error::NonPositiveGap(bad));
        }
        let smallest = gap_estimates.iter().cloned().fold(f64::INFINITY, f64::min);
        let f = self.f(phase);
        let local = num_clients as f64 * alpha * f;
        let global = (1.0 - alpha) * f;
        Ok(gap_estimates
            .iter()
            .map(|&g| {
                let scale = (smallest / g).sqrt();
                PhaseLengths {
                    n_global: ceil_count(global * scale),
                    n_local: ceil_count(local * scale),
                }
            })
            .collect())
    }
}

/// `max_l mu'_l(p-1) - mu'_k(p-1) + 2 B_{p-1}` over the arms that carry an estimate.
pub fn gap_estimate(prev_mixed_estimates: &[Option<f64>], prev_bound: f64, arm: usize) -> f64 {
    let best = prev_mixed_estimates
        .iter()
        .flatten()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let own =
        prev_mixed_estimates[arm].expect("gap estimate requested for an arm without an estimate");
    best - own + 2.0 * prev_bound
}

fn pow2(exp: u32) -> f64 {
    if exp > MAX_EXPONENT {
        f64::MAX
    } else {
        2f64.powi(exp as i32)
    }
}

fn ceil_count(x: f64) -> u64 {
    // `as` saturates for values beyond u64::MAX.
    x.ceil() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn explog() -> ExplorationSchedule {
        ExplorationSchedule::new(ScheduleKind::ExponentialLog, 1_000_000).unwrap()
    }

    #[test]
    fn schedule_values() {
        assert!((explog().f(1) - 27.631021115928547).abs() < 1e-9);
        let c = ExplorationSchedule::new(ScheduleKind::Constant(5.0), 100).unwrap();
        assert_eq!(c.f(1), 5.0);
        assert_eq!(c.f(40), 5.0);
        let e = ExplorationSchedule::new(ScheduleKind::Exponential, 100).unwrap();
        assert_eq!(e.f(3), 8.0);
        assert_eq!(e.f(5000), f64::MAX);
        assert_eq!(explog().f(5000), f64::MAX);
    }

    #[test]
    fn lengths_at_first_phase() {
        let s = explog();
        assert_eq!(
            s.phase_lengths(1, 0.5, 4),
            PhaseLengths {
                n_global: 14,
                n_local: 56
            }
        );
        assert_eq!(s.phase_lengths(1, 1.0, 4).n_global, 0);
        assert_eq!(
            s.phase_lengths(1, 0.0, 4),
            PhaseLengths {
                n_global: 28,
                n_local: 0
            }
        );
    }

    #[test]
    fn confidence_bound_closed_form() {
        let s = explog();
        assert!((s.confidence_bound(1, 4) - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((s.confidence_bound(2, 4) - (2.0f64 / 12.0).sqrt()).abs() < 1e-12);
        for p in 1..=20u32 {
            let closed = (2.0 / (4.0 * (2f64.powi(p as i32) - 1.0))).sqrt();
            assert!((s.confidence_bound(p, 4) - closed).abs() <= 1e-12 * closed);
            assert!(s.confidence_bound(p + 1, 4) < s.confidence_bound(p, 4));
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(ExplorationSchedule::new(ScheduleKind::Constant(0.5), 100).is_err());
        assert!(ExplorationSchedule::new(ScheduleKind::ExponentialLog, 2).is_err());
        assert!("const:abc".parse::<ScheduleKind>().is_err());
        assert!("bogus".parse::<ScheduleKind>().is_err());
    }

    #[test]
    fn parse_and_display() {
        for s in ["const:5", "logT:10", "exp", "explogT"] {
            assert_eq!(s.parse::<ScheduleKind>().unwrap().to_string(), s);
        }
        assert_eq!(
            "logT:2.5".parse::<ScheduleKind>().unwrap(),
            ScheduleKind::LogScaled(2.5)
        );
    }

    #[test]
    fn enhanced_lengths_scale_by_inverse_root() {
        let s = explog();
        let base = s.phase_lengths(1, 0.5, 4);
        let same = s.enhanced_lengths(1, 0.5, 4, &[0.3, 0.3, 0.3]).unwrap();
        assert!(same.iter().all(|l| *l == base));

        let two = s.enhanced_lengths(1, 0.5, 4, &[0.1, 0.4]).unwrap();
        assert_eq!((two[0].n_local, two[1].n_local), (56, 28));

        let one = s.enhanced_lengths(3, 0.5, 4, &[0.7]).unwrap();
        assert_eq!(one[0], s.phase_lengths(3, 0.5, 4));

        assert!(matches!(
            s.enhanced_lengths(1, 0.5, 4, &[0.1, 0.0]),
            Err(Error::NonPositiveGap(_))
        ));
    }

    #[test]
    fn gap_estimate_examples() {
        let est = [Some(0.7), Some(0.5), None];
        assert!((gap_estimate(&est, 0.1, 1) - 0.4).abs() < 1e-12);
        assert!((gap_estimate(&est, 0.1, 0) - 0.2).abs() < 1e-12);
        let flat = [Some(0.3); 4];
        for k in 0..4 {
            assert!((gap_estimate(&flat, 0.05, k) - 0.1).abs() < 1e-12);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn schedule() -> impl Strategy<Value = ExplorationSchedule> {
            let kind = prop_oneof![
                (1.0f64..50.0).prop_map(ScheduleKind::Constant),
                (1.0f64..50.0).prop_map(ScheduleKind::LogScaled),
                Just(ScheduleKind::Exponential),
                Just(ScheduleKind::ExponentialLog),
            ];
            (kind, 3u64..10_000_000).prop_map(|(k, t)| ExplorationSchedule::new(k, t).unwrap())
        }

        proptest! {
            #[test]
            fn cumulative_is_partial_sum(s in schedule(), p in 1u32..40) {
                let sum: f64 = (1..=p).map(|q| s.f(q)).sum();
                prop_assert!((s.cumulative(p) - sum).abs() <= 1e-9 * sum);
                prop_assert!(s.f(p) >= 1.0);
                prop_assert!(s.cumulative(p + 1) > s.cumulative(p));
            }

            #[test]
            fn enhanced_never_exceeds_base(
                s in schedule(),
                p in 1u32..12,
                alpha in 0.0f64..=1.0,
                m in 1usize..8,
                gaps in prop::collection::vec(1e-4f64..2.0, 1..10),
            ) {
                let base = s.phase_lengths(p, alpha, m);
                for l in s.enhanced_lengths(p, alpha, m, &gaps).unwrap() {
                    prop_assert!(l.n_local <= base.n_local && l.n_global <= base.n_global);
                }
            }
        }
    }
}
