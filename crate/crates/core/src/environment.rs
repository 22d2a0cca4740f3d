//! Reward generation and expected-value regret accounting.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::mixed_model::{BanditInstance, MixedModelView};

/// Derives the seed of replication `index` from a master seed.
pub fn replication_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

/// Gaussian local rewards around the instance means, one ChaCha stream per client.
#[derive(Debug, Clone)]
pub struct RewardSampler {
    num_arms: usize,
    means: Vec<f64>,
    std_dev: f64,
    streams: Vec<ChaCha8Rng>,
}

impl RewardSampler {
    pub fn new(instance: &BanditInstance, seed: u64, std_dev: f64) -> Self {
        let streams = (0..instance.num_clients())
            .map(|m| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(m as u64);
                rng
            })
            .collect();
        let means = (0..instance.num_clients())
            .flat_map(|m| instance.row(m).to_vec())
            .collect();
        Self {
            num_arms: instance.num_arms(),
            means,
            std_dev,
            streams,
        }
    }

    #[inline]
    pub fn sample_reward(&mut self, client: usize, arm: usize) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.streams[client]);
        self.means[client * self.num_arms + arm] + self.std_dev * z
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Expected rewards accumulated so far, summed over clients and slots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardTotals {
    pub mixed: f64,
    pub local: f64,
    pub global: f64,
}

#[derive(Debug, Clone)]
pub struct RegretAccumulator {
    num_arms: usize,
    pseudo_regret: CompensatedSum,
    comm_slots: u64,
    mixed: CompensatedSum,
    local: CompensatedSum,
    global: CompensatedSum,
    pull_counts: Vec<u64>,
    /// Next slot each client may record.
    next_slot: Vec<u64>,
}

impl RegretAccumulator {
    pub fn new(num_clients: usize, num_arms: usize) -> Self {
        Self {
            num_arms,
            pseudo_regret: CompensatedSum::default(),
            comm_slots: 0,
            mixed: CompensatedSum::default(),
            local: CompensatedSum::default(),
            global: CompensatedSum::default(),
            pull_counts: vec![0; num_clients * num_arms],
            next_slot: vec![0; num_clients],
        }
    }

    /// Accounts one pull of `arm` by `client` in `slot` (zero-based).
    #[inline]
    pub fn record_pull(
        &mut self,
        client: usize,
        arm: usize,
        slot: u64,
        view: &MixedModelView,
    ) -> Result<()> {
        if slot < self.next_slot[client] {
            return Err(Error::Protocol(format!(
                "client {client} already recorded slot {slot}"
            )));
        }
        self.next_slot[client] = slot + 1;
        self.pseudo_regret.add(view.gap(client, arm));
        self.mixed.add(view.mixed_mean(client, arm));
        self.local.add(view.local_mean(client, arm));
        self.global.add(view.global_means[arm]);
        self.pull_counts[client * self.num_arms + arm] += 1;
        Ok(())
    }

    /// Accounts `count` consecutive pulls of the same arm starting at `slot`.
    pub fn record_repeated_pulls(
        &mut self,
        client: usize,
        arm: usize,
        slot: u64,
        count: u64,
        view: &MixedModelView,
    ) -> Result<()> {
        if count == 0 {
            return Ok(());
        }
        if slot < self.next_slot[client] {
            return Err(Error::Protocol(format!(
                "client {client} already recorded slot {slot}"
            )));
        }
        self.next_slot[client] = slot + count;
        let n = count as f64;
        self.pseudo_regret.add(n * view.gap(client, arm));
        self.mixed.add(n * view.mixed_mean(client, arm));
        self.local.add(n * view.local_mean(client, arm));
        self.global.add(n * view.global_means[arm]);
        self.pull_counts[client * self.num_arms + arm] += count;
        Ok(())
    }

    pub fn record_communication(&mut self, rounds: u64, comm_cost: f64, num_clients: usize) {
        self.comm_slots += rounds;
        self.pseudo_regret
            .add(comm_cost * num_clients as f64 * rounds as f64);
    }

    pub fn pseudo_regret(&self) -> f64 {
        self.pseudo_regret.value()
    }

    pub fn comm_slots(&self) -> u64 {
        self.comm_slots
    }

    pub fn rewards(&self) -> RewardTotals {
        RewardTotals {
            mixed: self.mixed.value(),
            local: self.local.value(),
            global: self.global.value(),
        }
    }

    pub fn pull_count(&self, client: usize, arm: usize) -> u64 {
        self.pull_counts[client * self.num_arms + arm]
    }

    pub fn pull_counts(&self) -> &[u64] {
        &self.pull_counts
    }

    /// `sum_{k,m} T_{k,m} gap_{k,m} + C M T_c`, the closed form of the incremental total.
    pub fn regret_from_counts(&self, view: &MixedModelView, comm_cost: f64) -> f64 {
        let mut total = CompensatedSum::default();
        for m in 0..view.num_clients {
            for k in 0..view.num_arms {
                total.add(self.pull_count(m, k) as f64 * view.gap(m, k));
            }
        }
        total.add(comm_cost * view.num_clients as f64 * self.comm_slots as f64);
        total.value()
    }
}
