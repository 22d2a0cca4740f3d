//! Per-client phased elimination: global exploration, local exploration,
//! exploit-while-waiting, elimination and arm fixation.

use crate::error::{Error, Result};
use crate::mixed_model::argmax;
use crate::schedule::{gap_estimate, ExplorationSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubPhase {
    GlobalExplore,
    LocalExplore,
    AwaitGlobalMeans,
    Finished,
}

/// Pull quotas for one phase: `(arm, pulls)` over `A(p)` and over `A_m(p)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhasePlan {
    pub global: Vec<(usize, u64)>,
    pub local: Vec<(usize, u64)>,
}

impl PhasePlan {
    /// Exploration slots the plan occupies, `D_m(p)`.
    pub fn duration(&self) -> u64 {
        self.global.iter().chain(&self.local).map(|(_, n)| n).sum()
    }
}

/// Outcome of one elimination step. `eliminated` and `surviving` partition
/// the local active set; `fixed` is set when exactly one arm survived.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EliminationDecision {
    pub eliminated: Vec<usize>,
    pub surviving: Vec<usize>,
    pub fixed: Option<usize>,
}

impl EliminationDecision {
    /// The set reported to the server: `A_m(p+1)`, empty once an arm is fixed.
    pub fn reported_set(&self) -> &[usize] {
        if self.fixed.is_some() {
            &[]
        } else {
            &self.surviving
        }
    }
}

/// Cycles through arms in ascending order, skipping arms whose quota is spent.
#[derive(Debug, Clone, Default)]
struct RoundRobin {
    arms: Vec<usize>,
    quota: Vec<u64>,
    cursor: usize,
    remaining: u64,
}

impl RoundRobin {
    fn new(plan: &[(usize, u64)]) -> Self {
        Self {
            arms: plan.iter().map(|p| p.0).collect(),
            quota: plan.iter().map(|p| p.1).collect(),
            cursor: 0,
            remaining: plan.iter().map(|p| p.1).sum(),
        }
    }

    fn next(&mut self) -> Option<usize> {
        if self.remaining == 0 {
            return None;
        }
        let len = self.arms.len();
        let mut i = self.cursor;
        while self.quota[i] == 0 {
            i = (i + 1) % len;
        }
        self.quota[i] -= 1;
        self.remaining -= 1;
        self.cursor = (i + 1) % len;
        Some(self.arms[i])
    }
}

#[derive(Debug, Clone)]
pub struct ClientState {
    id: usize,
    alpha: f64,
    num_clients: usize,
    phase: u32,
    sub_phase: SubPhase,
    reward_sums: Vec<f64>,
    pull_counts: Vec<u64>,
    global_active: Vec<usize>,
    local_active: Vec<usize>,
    global_robin: RoundRobin,
    local_robin: RoundRobin,
    fixed_arm: Option<usize>,
    /// `mu'_{k,m}(p-1)` for the arms of `A(p-1)`.
    prev_mixed_estimates: Vec<Option<f64>>,
    prev_bound: Option<f64>,
    /// `mu_{k,m}(p)` as last reported to the server.
    current_local_means: Vec<Option<f64>>,
}

impl ClientState {
    pub fn new(id: usize, num_arms: usize, num_clients: usize, alpha: f64) -> Self {
        let all: Vec<usize> = (0..num_arms).collect();
        Self {
            id,
            alpha,
            num_clients,
            phase: 1,
            sub_phase: SubPhase::AwaitGlobalMeans,
            reward_sums: vec![0.0; num_arms],
            pull_counts: vec![0; num_arms],
            global_active: all.clone(),
            local_active: all,
            global_robin: RoundRobin::default(),
            local_robin: RoundRobin::default(),
            fixed_arm: None,
            prev_mixed_estimates: vec![None; num_arms],
            prev_bound: None,
            current_local_means: vec![None; num_arms],
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn phase(&self) -> u32 {
        self.phase
    }

    pub fn sub_phase(&self) -> SubPhase {
        self.sub_phase
    }

    pub fn fixed_arm(&self) -> Option<usize> {
        self.fixed_arm
    }

    pub fn local_active(&self) -> &[usize] {
        &self.local_active
    }

    pub fn global_active(&self) -> &[usize] {
        &self.global_active
    }

    pub fn pull_count(&self, arm: usize) -> u64 {
        self.pull_counts[arm]
    }

    pub fn prev_mixed_estimates(&self) -> &[Option<f64>] {
        &self.prev_mixed_estimates
    }

    /// `Δ̄'_{k,m}(p)` for every arm of the current `A(p)`, or `None` before any
    /// elimination round has produced estimates.
    pub fn gap_estimates(&self) -> Option<Vec<(usize, f64)>> {
        let bound = self.prev_bound?;
        Some(
            self.global_active
                .iter()
                .map(|&k| (k, gap_estimate(&self.prev_mixed_estimates, bound, k)))
                .collect(),
        )
    }

    /// Pull quotas for the upcoming phase. With `gap_estimates` (adaptive
    /// variant), lengths shrink as `1/sqrt` of each arm's estimated gap relative
    /// to the smallest estimate within `A(p)` and within `A_m(p)` respectively.
    pub fn plan_phase(
        &self,
        schedule: &ExplorationSchedule,
        gap_estimates: Option<&[(usize, f64)]>,
    ) -> Result<PhasePlan> {
        let p = self.phase;
        let Some(gaps) = gap_estimates else {
            let base = schedule.phase_lengths(p, self.alpha, self.num_clients);
            return Ok(PhasePlan {
                global: self
                    .global_active
                    .iter()
                    .map(|&k| (k, base.n_global))
                    .collect(),
                local: self
                    .local_active
                    .iter()
                    .map(|&k| (k, base.n_local))
                    .collect(),
            });
        };
        let lookup = |k: usize| {
            gaps.iter()
                .find(|g| g.0 == k)
                .map(|g| g.1)
                .ok_or_else(|| Error::Protocol(format!("no gap estimate for arm {k}")))
        };
        let global_gaps = self
            .global_active
            .iter()
            .map(|&k| lookup(k))
            .collect::<Result<Vec<_>>>()?;
        let local_gaps = self
            .local_active
            .iter()
            .map(|&k| lookup(k))
            .collect::<Result<Vec<_>>>()?;
        let global = schedule.enhanced_lengths(p, self.alpha, self.num_clients, &global_gaps)?;
        let local = schedule.enhanced_lengths(p, self.alpha, self.num_clients, &local_gaps)?;
        Ok(PhasePlan {
            global: self
                .global_active
                .iter()
                .zip(global)
                .map(|(&k, l)| (k, l.n_global))
                .collect(),
            local: self
                .local_active
                .iter()
                .zip(local)
                .map(|(&k, l)| (k, l.n_local))
                .collect(),
        })
    }

    pub fn start_phase(&mut self, plan: &PhasePlan) -> Result<()> {
        if self.sub_phase != SubPhase::AwaitGlobalMeans {
            return Err(Error::Protocol(format!(
                "client {} cannot start phase {} from {:?}",
                self.id, self.phase, self.sub_phase
            )));
        }
        self.global_robin = RoundRobin::new(&plan.global);
        self.local_robin = RoundRobin::new(&plan.local);
        self.current_local_means.iter_mut().for_each(|v| *v = None);
        self.sub_phase = SubPhase::GlobalExplore;
        self.settle();
        Ok(())
    }

    /// Skips past exploration sub-phases whose quota is exhausted.
    fn settle(&mut self) {
        if self.sub_phase == SubPhase::GlobalExplore && self.global_robin.remaining == 0 {
            self.sub_phase = SubPhase::LocalExplore;
        }
        if self.sub_phase == SubPhase::LocalExplore && self.local_robin.remaining == 0 {
            self.sub_phase = SubPhase::AwaitGlobalMeans;
        }
    }

    /// True once both exploration sub-phases of the current phase are done.
    pub fn exploration_complete(&self) -> bool {
        matches!(
            self.sub_phase,
            SubPhase::AwaitGlobalMeans | SubPhase::Finished
        )
    }

    /// The arm to pull in the next slot.
    pub fn next_action(&mut self) -> usize {
        let arm = match self.sub_phase {
            SubPhase::GlobalExplore => self.global_robin.next(),
            SubPhase::LocalExplore => self.local_robin.next(),
            SubPhase::AwaitGlobalMeans => Some(self.exploit_arm()),
            SubPhase::Finished => self.fixed_arm,
        }
        .expect("client has an arm to pull in every sub-phase");
        self.settle();
        arm
    }

    /// The fixed arm if any, else the best previous mixed estimate over `A_m(p)`.
    pub fn exploit_arm(&self) -> usize {
        if let Some(arm) = self.fixed_arm {
            return arm;
        }
        let scores: Vec<f64> = self
            .local_active
            .iter()
            .map(|&k| self.prev_mixed_estimates[k].unwrap_or(f64::NEG_INFINITY))
            .collect();
        self.local_active[argmax(&scores)]
    }

    pub fn observe(&mut self, arm: usize, reward: f64) {
        self.reward_sums[arm] += reward;
        self.pull_counts[arm] += 1;
    }

    /// Cumulative sample means `s_{k,m} / T_{k,m}` for every arm of `A(p)`.
    pub fn build_local_update(&mut self) -> Result<Vec<(usize, f64)>> {
        if self.sub_phase != SubPhase::AwaitGlobalMeans {
            return Err(Error::Protocol(format!(
                "client {} has not finished exploring phase {}",
                self.id, self.phase
            )));
        }
        let mut update = Vec::with_capacity(self.global_active.len());
        for &k in &self.global_active {
            let n = self.pull_counts[k];
            if n == 0 {
                return Err(Error::Protocol(format!(
                    "client {} has never pulled active arm {k}",
                    self.id
                )));
            }
            let mean = self.reward_sums[k] / n as f64;
            self.current_local_means[k] = Some(mean);
            update.push((k, mean));
        }
        Ok(update)
    }

    /// Blends the broadcast global means with the local ones and eliminates
    /// every arm trailing the local leader by at least `2 B_p`.
    pub fn apply_global_means(
        &mut self,
        global_means: &[(usize, f64)],
        bound: f64,
    ) -> Result<EliminationDecision> {
        if self.sub_phase != SubPhase::AwaitGlobalMeans {
            return Err(Error::Protocol(format!(
                "client {} received global means while in {:?}",
                self.id, self.sub_phase
            )));
        }
        if global_means.len() != self.global_active.len()
            || global_means
                .iter()
                .zip(&self.global_active)
                .any(|(g, &k)| g.0 != k)
        {
            return Err(Error::Protocol(format!(
                "client {}: broadcast does not cover the global active set",
                self.id
            )));
        }
        let mut estimates = vec![None; self.prev_mixed_estimates.len()];
        for &(k, global) in global_means {
            let local = self.current_local_means[k].ok_or_else(|| {
                Error::Protocol(format!(
                    "client {} has no local update for arm {k}",
                    self.id
                ))
            })?;
            estimates[k] = Some(self.alpha * local + (1.0 - self.alpha) * global);
        }

        let value = |k: usize| estimates[k].expect("estimate for every active arm");
        let leader = self
            .local_active
            .iter()
            .map(|&k| value(k))
            .fold(f64::NEG_INFINITY, f64::max);
        let (eliminated, surviving): (Vec<usize>, Vec<usize>) = self
            .local_active
            .iter()
            .partition(|&&k| leader - value(k) >= 2.0 * bound);

        let fixed = (surviving.len() == 1).then(|| surviving[0]);
        if let Some(arm) = fixed {
            self.fixed_arm = Some(arm);
            self.local_active.clear();
        } else {
            self.local_active = surviving.clone();
        }
        self.prev_mixed_estimates = estimates;
        self.prev_bound = Some(bound);
        Ok(EliminationDecision {
            eliminated,
            surviving,
            fixed,
        })
    }

    /// Installs `A(p+1)` and advances the phase; an empty set finishes the client.
    pub fn receive_global_active(&mut self, next: Vec<usize>) -> Result<()> {
        if let Some(k) = self.local_active.iter().find(|k| !next.contains(k)) {
            return Err(Error::Protocol(format!(
                "client {}: local arm {k} missing from the global active set",
                self.id
            )));
        }
        if next.is_empty() {
            if self.fixed_arm.is_none() {
                return Err(Error::Protocol(format!(
                    "client {} finished without a fixed arm",
                    self.id
                )));
            }
            self.sub_phase = SubPhase::Finished;
        }
        self.global_active = next;
        self.phase += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleKind;

    fn explog() -> ExplorationSchedule {
        ExplorationSchedule::new(ScheduleKind::ExponentialLog, 1_000_000).unwrap()
    }

    fn explore(client: &mut ClientState, mut reward: impl FnMut(usize) -> f64) -> Vec<usize> {
        let mut arms = Vec::new();
        while !client.exploration_complete() {
            let a = client.next_action();
            client.observe(a, reward(a));
            arms.push(a);
        }
        arms
    }

    #[test]
    fn round_robin_in_ascending_order() {
        let mut c = ClientState::new(0, 8, 1, 0.5);
        let plan = PhasePlan {
            global: vec![(2, 2), (5, 2), (7, 2)],
            local: vec![],
        };
        c.start_phase(&plan).unwrap();
        let arms: Vec<usize> = (0..4).map(|_| c.next_action()).collect();
        assert_eq!(arms, vec![2, 5, 7, 2]);
    }

    #[test]
    fn uneven_quotas_skip_exhausted_arms() {
        let mut c = ClientState::new(0, 4, 1, 0.5);
        let plan = PhasePlan {
            global: vec![(0, 1), (1, 3), (3, 2)],
            local: vec![],
        };
        c.start_phase(&plan).unwrap();
        let arms = explore(&mut c, |_| 0.0);
        assert_eq!(arms, vec![0, 1, 3, 1, 3, 1]);
    }

    #[test]
    fn no_global_exploration_when_fully_personalized() {
        let c = ClientState::new(0, 9, 4, 1.0);
        let plan = c.plan_phase(&explog(), None).unwrap();
        assert!(plan.global.iter().all(|g| g.1 == 0));
        let mut c = c;
        c.start_phase(&plan).unwrap();
        assert_eq!(c.sub_phase(), SubPhase::LocalExplore);
    }

    #[test]
    fn first_phase_pulls_every_arm_equally() {
        let s = explog();
        let mut c = ClientState::new(0, 9, 4, 0.5);
        let plan = c.plan_phase(&s, None).unwrap();
        c.start_phase(&plan).unwrap();
        explore(&mut c, |_| 0.0);
        let len = s.phase_lengths(1, 0.5, 4);
        for k in 0..9 {
            assert_eq!(c.pull_count(k), len.n_global + len.n_local);
        }
        assert_eq!(plan.duration(), 9 * (14 + 56));
    }

    #[test]
    fn local_update_uses_cumulative_means() {
        let mut c = ClientState::new(0, 2, 1, 1.0);
        c.start_phase(&PhasePlan {
            global: vec![],
            local: vec![(0, 1), (1, 2)],
        })
        .unwrap();
        let mut rewards = vec![0.8, 0.2, 0.6].into_iter();
        // Arm order is 0, 1, 1.
        explore(&mut c, |_| rewards.next().unwrap());
        let update = c.build_local_update().unwrap();
        assert_eq!(update[0], (0, 0.8));
        assert!((update[1].1 - 0.4).abs() < 1e-12);
    }

    #[test]
    fn update_before_exploration_finishes_is_rejected() {
        let mut c = ClientState::new(0, 2, 1, 0.5);
        c.start_phase(&PhasePlan {
            global: vec![(0, 1), (1, 1)],
            local: vec![],
        })
        .unwrap();
        assert!(c.build_local_update().is_err());
    }

    fn client_with_means(means: &[f64]) -> ClientState {
        let mut c = ClientState::new(0, means.len(), 1, 1.0);
        c.start_phase(&PhasePlan {
            global: vec![],
            local: (0..means.len()).map(|k| (k, 1)).collect(),
        })
        .unwrap();
        explore(&mut c, |k| means[k]);
        c
    }

    #[test]
    fn elimination_rule() {
        let mut c = client_with_means(&[0.9, 0.3]);
        let update = c.build_local_update().unwrap();
        let d = c.apply_global_means(&update, 0.2).unwrap();
        assert_eq!(d.eliminated, vec![1]);
        assert_eq!(d.fixed, Some(0));
        assert!(d.reported_set().is_empty());
        assert_eq!(c.fixed_arm(), Some(0));

        let mut c = client_with_means(&[0.9, 0.55]);
        let update = c.build_local_update().unwrap();
        let d = c.apply_global_means(&update, 0.2).unwrap();
        assert!(d.eliminated.is_empty());
        assert_eq!(d.reported_set(), &[0, 1]);

        let mut c = client_with_means(&[0.4, 0.4, 0.4]);
        let update = c.build_local_update().unwrap();
        assert!(c
            .apply_global_means(&update, 1e-6)
            .unwrap()
            .eliminated
            .is_empty());
    }

    #[test]
    fn broadcast_must_cover_active_set() {
        let mut c = client_with_means(&[0.9, 0.3]);
        c.build_local_update().unwrap();
        assert!(c.apply_global_means(&[(0, 0.5)], 0.2).is_err());
    }

    #[test]
    fn locally_eliminated_arm_keeps_reporting() {
        // Two clients' worth of global set with one client: arm 2 leaves the
        // local set but stays globally active, so global-exploration pulls keep
        // refreshing its cumulative mean.
        let mut c = ClientState::new(0, 3, 2, 0.5);
        c.start_phase(&PhasePlan {
            global: vec![(0, 1), (1, 1), (2, 1)],
            local: vec![(0, 1), (1, 1), (2, 1)],
        })
        .unwrap();
        explore(&mut c, |k| [0.9, 0.8, 0.0][k]);
        let update = c.build_local_update().unwrap();
        let d = c.apply_global_means(&update, 0.1).unwrap();
        assert_eq!(d.eliminated, vec![2]);
        assert_eq!(d.surviving, vec![0, 1]);
        c.receive_global_active(vec![0, 1, 2]).unwrap();
        assert_eq!(c.local_active(), &[0, 1]);

        c.start_phase(&PhasePlan {
            global: vec![(0, 1), (1, 1), (2, 2)],
            local: vec![(0, 1), (1, 1)],
        })
        .unwrap();
        explore(&mut c, |k| if k == 2 { 0.6 } else { 0.85 });
        let update = c.build_local_update().unwrap();
        // Arm 2: rewards {0.0, 0.0, 0.6, 0.6} so far.
        assert_eq!(update[2], (2, 0.3));
    }

    #[test]
    fn exploit_arm_uses_previous_estimates() {
        let mut c = ClientState::new(0, 3, 1, 1.0);
        c.start_phase(&PhasePlan {
            global: vec![],
            local: vec![(0, 1), (1, 1), (2, 1)],
        })
        .unwrap();
        explore(&mut c, |k| [0.5, 0.7, 0.6][k]);
        let update = c.build_local_update().unwrap();
        c.apply_global_means(&update, 1.0).unwrap();
        c.receive_global_active(vec![0, 1, 2]).unwrap();
        assert_eq!(c.exploit_arm(), 1);
        assert_eq!(c.phase(), 2);
    }

    #[test]
    fn gap_estimates_follow_previous_phase() {
        let mut c = client_with_means(&[0.7, 0.5]);
        assert!(c.gap_estimates().is_none());
        let update = c.build_local_update().unwrap();
        c.apply_global_means(&update, 0.1).unwrap();
        c.receive_global_active(vec![0, 1]).unwrap();
        let g = c.gap_estimates().unwrap();
        assert!((g[0].1 - 0.2).abs() < 1e-12);
        assert!((g[1].1 - 0.4).abs() < 1e-12);
    }
}
