//! Slot-by-slot orchestration of clients and server up to the horizon.
//!
//! All clients start each phase in the same slot. A client whose exploration
//! finishes early exploits until the slowest client is done, after which the
//! two exchanges of the phase (local means up / global means down, active
//! sets up / union down) happen between slots and cost `C * M` each.

use std::sync::Arc;

use rayon::prelude::*;

use crate::client::ClientState;
use crate::environment::{replication_seed, RegretAccumulator, RewardSampler};
use crate::error::{Error, Result};
use crate::mixed_model::{mixed_means, BanditInstance, MixedModelView, MixingWeights};
use crate::schedule::{ExplorationSchedule, ScheduleKind};
use crate::server::ServerState;

/// Which slots get a trace point. The horizon and the start of the reward tail
/// window are always included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceResolution {
    Stride(u64),
    LogSpaced(usize),
}

impl Default for TraceResolution {
    fn default() -> Self {
        Self::LogSpaced(500)
    }
}

/// Fraction of the horizon, at the end, over which tail reward rates are measured.
pub const TAIL_FRACTION: f64 = 0.1;

/// First slot of the tail window, which always spans at least one slot.
pub fn tail_start(horizon: u64) -> u64 {
    horizon - ((horizon as f64 * TAIL_FRACTION).floor() as u64).max(1)
}

impl TraceResolution {
    pub fn sample_slots(&self, horizon: u64) -> Vec<u64> {
        let mut slots: Vec<u64> = match *self {
            Self::Stride(step) => {
                let step = step.max(1);
                (1..=horizon / step).map(|i| i * step).collect()
            }
            Self::LogSpaced(n) => {
                let n = n.max(2);
                let top = (horizon as f64).ln();
                (0..n)
                    .map(|i| (top * i as f64 / (n - 1) as f64).exp().round() as u64)
                    .collect()
            }
        };
        slots.push(tail_start(horizon));
        slots.push(horizon);
        slots.retain(|&t| t >= 1 && t <= horizon);
        slots.sort_unstable();
        slots.dedup();
        slots
    }
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub instance: Arc<BanditInstance>,
    pub alpha: f64,
    pub horizon: u64,
    pub comm_cost: f64,
    pub schedule: ScheduleKind,
    pub enhanced: bool,
    pub seed: u64,
    pub trace_resolution: TraceResolution,
    /// Standard deviation of the Gaussian reward noise.
    pub noise_std: f64,
}

impl SimulationConfig {
    /// Defaults match the reference experiments: `C = 1`, `f(p) = 2^p ln T`.
    pub fn new(instance: Arc<BanditInstance>, alpha: f64, horizon: u64) -> Self {
        Self {
            instance,
            alpha,
            horizon,
            comm_cost: 1.0,
            schedule: ScheduleKind::ExponentialLog,
            enhanced: false,
            seed: 0,
            trace_resolution: TraceResolution::default(),
            noise_std: 1.0,
        }
    }

    pub fn view(&self) -> Result<MixedModelView> {
        mixed_means(
            &self.instance,
            &MixingWeights::new(self.alpha, self.instance.num_clients())?,
        )
    }

    pub fn exploration_schedule(&self) -> Result<ExplorationSchedule> {
        ExplorationSchedule::new(self.schedule, self.horizon)
    }

    fn validate(&self) -> Result<()> {
        if !(self.comm_cost >= 0.0 && self.comm_cost.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "communication cost must be finite and >= 0, got {}",
                self.comm_cost
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise standard deviation must be finite and >= 0, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }
}

/// Cumulative state at the end of slot `t`, summed over clients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub t: u64,
    pub regret: f64,
    pub mixed_reward: f64,
    pub local_reward: f64,
    pub global_reward: f64,
    pub comm_slots: u64,
    pub phase: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRecord {
    pub phase: u32,
    /// Slots played before the phase began.
    pub start_slot: u64,
    /// Slots played when the phase closed (or when the horizon cut it).
    pub end_slot: u64,
    pub completed: bool,
    pub global_active: Vec<usize>,
    /// `A_m(p)` per client at the start of the phase.
    pub local_active: Vec<Vec<usize>>,
    /// Exploration slots `D_m(p)` per client.
    pub durations: Vec<u64>,
    /// `E_m(p)` per client; empty for a phase cut by the horizon.
    pub eliminated: Vec<Vec<usize>>,
    pub newly_fixed: Vec<Option<usize>>,
    pub bound: f64,
}

/// Per-client, per-slot expected reward rates over a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardRates {
    pub mixed: f64,
    pub local: f64,
    pub global: f64,
}

#[derive(Debug, Clone)]
pub struct SimulationTrace {
    pub num_clients: usize,
    pub num_arms: usize,
    pub horizon: u64,
    pub seed: u64,
    pub points: Vec<TracePoint>,
    /// Row-major `M x K` pull counts at the horizon.
    pub pull_counts: Vec<u64>,
    pub fixed_arms: Vec<Option<usize>>,
    pub phases: Vec<PhaseRecord>,
    /// Slot at which the global active set emptied, if it did.
    pub terminated_at: Option<u64>,
    pub final_regret: f64,
    pub comm_slots: u64,
}

impl SimulationTrace {
    pub fn completed_phases(&self) -> usize {
        self.phases.iter().filter(|p| p.completed).count()
    }

    pub fn point_at(&self, t: u64) -> Option<&TracePoint> {
        self.points
            .binary_search_by_key(&t, |p| p.t)
            .ok()
            .map(|i| &self.points[i])
    }

    /// Reward rates between the trace point at `from` and the horizon.
    pub fn window_rates(&self, from: u64) -> Option<RewardRates> {
        let start = self.point_at(from)?;
        let end = self.points.last()?;
        let slots = (end.t - start.t) as f64 * self.num_clients as f64;
        (slots > 0.0).then(|| RewardRates {
            mixed: (end.mixed_reward - start.mixed_reward) / slots,
            local: (end.local_reward - start.local_reward) / slots,
            global: (end.global_reward - start.global_reward) / slots,
        })
    }

    pub fn tail_rates(&self) -> RewardRates {
        self.window_rates(tail_start(self.horizon))
            .expect("tail start is always sampled")
    }

    /// The phase at whose end `client` eliminated `arm`, if it did.
    pub fn elimination_phase(&self, client: usize, arm: usize) -> Option<u32> {
        self.phases
            .iter()
            .find(|p| p.eliminated[client].contains(&arm))
            .map(|p| p.phase)
    }

    pub fn eliminated_optimal_arm(&self, view: &MixedModelView) -> bool {
        (0..self.num_clients).any(|m| self.elimination_phase(m, view.optimal_arms[m]).is_some())
    }

    pub fn pull_count(&self, client: usize, arm: usize) -> u64 {
        self.pull_counts[client * self.num_arms + arm]
    }
}

struct Recorder {
    slots: Vec<u64>,
    next: usize,
    points: Vec<TracePoint>,
}

impl Recorder {
    fn new(slots: Vec<u64>) -> Self {
        let points = Vec::with_capacity(slots.len());
        Self {
            slots,
            next: 0,
            points,
        }
    }

    fn next_slot(&self) -> Option<u64> {
        self.slots.get(self.next).copied()
    }

    fn observe(&mut self, t: u64, acc: &RegretAccumulator, phase: u32) {
        while self.next_slot().is_some_and(|s| s < t) {
            self.next += 1;
        }
        if self.next_slot() == Some(t) {
            let r = acc.rewards();
            self.points.push(TracePoint {
                t,
                regret: acc.pseudo_regret(),
                mixed_reward: r.mixed,
                local_reward: r.local,
                global_reward: r.global,
                comm_slots: acc.comm_slots(),
                phase,
            });
            self.next += 1;
        }
    }
}

pub fn run(config: &SimulationConfig) -> Result<SimulationTrace> {
    config.validate()?;
    let schedule = config.exploration_schedule()?;
    let view = config.view()?;
    let instance = &*config.instance;
    let (num_clients, num_arms) = (instance.num_clients(), instance.num_arms());
    let horizon = config.horizon;

    let mut clients: Vec<ClientState> = (0..num_clients)
        .map(|m| ClientState::new(m, num_arms, num_clients, config.alpha))
        .collect();
    let mut server = ServerState::new(num_clients, num_arms);
    let mut acc = RegretAccumulator::new(num_clients, num_arms);
    let mut sampler = RewardSampler::new(instance, config.seed, config.noise_std);
    let mut recorder = Recorder::new(config.trace_resolution.sample_slots(horizon));
    let mut phases = Vec::new();
    let mut terminated_at = None;
    let mut t = 0u64;
    let mut phase = 1;

    while t < horizon {
        if server.global_active().is_empty() {
            terminated_at = Some(t);
            break;
        }
        phase = server.phase();

        let mut plans = Vec::with_capacity(num_clients);
        for c in &clients {
            let gaps = if config.enhanced {
                server.gap_broadcast().get(&c.id()).cloned()
            } else {
                None
            };
            plans.push(c.plan_phase(&schedule, gaps.as_deref())?);
        }
        let durations: Vec<u64> = plans.iter().map(|p| p.duration()).collect();
        let longest = durations.iter().copied().max().unwrap_or(0);
        debug_assert!(longest > 0, "a phase with an active arm always explores");

        let mut record = PhaseRecord {
            phase,
            start_slot: t,
            end_slot: t,
            completed: false,
            global_active: server.global_active().to_vec(),
            local_active: clients.iter().map(|c| c.local_active().to_vec()).collect(),
            durations: durations.clone(),
            eliminated: vec![Vec::new(); num_clients],
            newly_fixed: vec![None; num_clients],
            bound: schedule.confidence_bound(phase, num_clients),
        };

        for (m, (c, plan)) in clients.iter_mut().zip(&plans).enumerate() {
            c.start_phase(plan)?;
            if durations[m] == 0 {
                server.submit_update(m, c.build_local_update()?)?;
            }
        }

        let mut elapsed = 0u64;
        while elapsed < longest && t < horizon {
            for (m, c) in clients.iter_mut().enumerate() {
                let arm = c.next_action();
                let reward = sampler.sample_reward(m, arm);
                c.observe(arm, reward);
                acc.record_pull(m, arm, t, &view)?;
            }
            t += 1;
            elapsed += 1;
            for (m, c) in clients.iter_mut().enumerate() {
                if durations[m] == elapsed {
                    server.submit_update(m, c.build_local_update()?)?;
                }
            }
            if elapsed < longest {
                recorder.observe(t, &acc, phase);
            }
        }
        record.end_slot = t;

        if elapsed < longest {
            recorder.observe(t, &acc, phase);
            phases.push(record);
            break;
        }

        let global_means = server.broadcast_global_means()?;
        acc.record_communication(1, config.comm_cost, num_clients);
        for (m, c) in clients.iter_mut().enumerate() {
            let decision = c.apply_global_means(&global_means, record.bound)?;
            server.submit_active_set(m, decision.reported_set().to_vec())?;
            record.newly_fixed[m] = decision.fixed;
            record.eliminated[m] = decision.eliminated;
        }
        let next = server.broadcast_global_active()?;
        acc.record_communication(1, config.comm_cost, num_clients);
        for (m, c) in clients.iter_mut().enumerate() {
            c.receive_global_active(next.clone())?;
            if config.enhanced && !next.is_empty() {
                if let Some(gaps) = c.gap_estimates() {
                    server.submit_gap_estimates(m, gaps)?;
                }
            }
        }
        record.completed = true;
        phases.push(record);
        recorder.observe(t, &acc, phase);
    }

    if terminated_at.is_none() && server.global_active().is_empty() {
        terminated_at = Some(t);
    }
    if terminated_at.is_some() {
        let fixed: Vec<usize> = clients
            .iter()
            .map(|c| c.fixed_arm().expect("terminated clients hold a fixed arm"))
            .collect();
        while t < horizon {
            let until = recorder.next_slot().unwrap_or(horizon).min(horizon);
            for (m, &arm) in fixed.iter().enumerate() {
                acc.record_repeated_pulls(m, arm, t, until - t, &view)?;
            }
            t = until;
            recorder.observe(t, &acc, phase);
        }
    }

    Ok(SimulationTrace {
        num_clients,
        num_arms,
        horizon,
        seed: config.seed,
        points: recorder.points,
        pull_counts: acc.pull_counts().to_vec(),
        fixed_arms: clients.iter().map(|c| c.fixed_arm()).collect(),
        phases,
        terminated_at,
        final_regret: acc.pseudo_regret(),
        comm_slots: acc.comm_slots(),
    })
}

/// One point of a curve averaged over replications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub t: u64,
    pub regret_mean: f64,
    pub regret_std: f64,
    pub comm_slots_mean: f64,
    /// Median phase across replications.
    pub phase: u32,
}

#[derive(Debug, Clone)]
pub struct Replications {
    pub view: MixedModelView,
    pub traces: Vec<SimulationTrace>,
}

/// Runs `num_seeds` independent replications. Replication `i` uses
/// `replication_seed(config.seed, i)`; results are ordered by `i`.
pub fn replicate(config: &SimulationConfig, num_seeds: usize) -> Result<Replications> {
    if num_seeds == 0 {
        return Err(Error::InvalidConfig("need at least one seed".into()));
    }
    let view = config.view()?;
    let traces = (0..num_seeds as u64)
        .into_par_iter()
        .map(|i| {
            let mut cfg = config.clone();
            cfg.seed = replication_seed(config.seed, i);
            run(&cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Replications { view, traces })
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    // Shifted by the first value so identical inputs give an exact mean.
    let first = values.clone().next().unwrap_or(0.0);
    let mean = first + values.clone().map(|v| v - first).sum::<f64>() / n;
    let var = if n > 1.0 {
        values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl Replications {
    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn curve(&self) -> Vec<CurvePoint> {
        let first = &self.traces[0];
        (0..first.points.len())
            .map(|i| {
                let (regret_mean, regret_std) =
                    mean_std(self.traces.iter().map(move |tr| tr.points[i].regret));
                let comm_slots_mean = self
                    .traces
                    .iter()
                    .map(|tr| tr.points[i].comm_slots as f64)
                    .sum::<f64>()
                    / self.len() as f64;
                let mut phases: Vec<u32> =
                    self.traces.iter().map(|tr| tr.points[i].phase).collect();
                phases.sort_unstable();
                CurvePoint {
                    t: first.points[i].t,
                    regret_mean,
                    regret_std,
                    comm_slots_mean,
                    phase: phases[phases.len() / 2],
                }
            })
            .collect()
    }

    pub fn final_regrets(&self) -> Vec<f64> {
        self.traces.iter().map(|t| t.final_regret).collect()
    }

    /// Mean and sample standard deviation of the final regret.
    pub fn final_regret_stats(&self) -> (f64, f64) {
        mean_std(self.traces.iter().map(|t| t.final_regret))
    }

    /// Fraction of `(client, seed)` pairs whose fixed arm is the mixed-optimal arm.
    pub fn success_rate(&self) -> f64 {
        let hits = self
            .traces
            .iter()
            .flat_map(|tr| tr.fixed_arms.iter().enumerate())
            .filter(|(m, arm)| **arm == Some(self.view.optimal_arms[*m]))
            .count();
        hits as f64 / (self.len() * self.view.num_clients) as f64
    }

    pub fn mean_comm_slots(&self) -> f64 {
        self.traces.iter().map(|t| t.comm_slots as f64).sum::<f64>() / self.len() as f64
    }

    pub fn mean_tail_rates(&self) -> RewardRates {
        let n = self.len() as f64;
        let rates: Vec<RewardRates> = self.traces.iter().map(|t| t.tail_rates()).collect();
        RewardRates {
            mixed: rates.iter().map(|r| r.mixed).sum::<f64>() / n,
            local: rates.iter().map(|r| r.local).sum::<f64>() / n,
            global: rates.iter().map(|r| r.global).sum::<f64>() / n,
        }
    }
}
