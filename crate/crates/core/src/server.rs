//! The aggregating server: averages local means into global means and keeps
//! `A(p+1)` as the union of the reported local active sets.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Per-arm average of the clients' local means over `active`.
pub fn aggregate(updates: &[Vec<(usize, f64)>], active: &[usize]) -> Result<Vec<(usize, f64)>> {
    if updates.is_empty() {
        return Err(Error::Protocol("no updates to aggregate".into()));
    }
    for (m, update) in updates.iter().enumerate() {
        if update.len() != active.len() || update.iter().zip(active).any(|(u, &k)| u.0 != k) {
            return Err(Error::Protocol(format!(
                "update from client {m} does not cover the global active set"
            )));
        }
    }
    let n = updates.len() as f64;
    Ok(active
        .iter()
        .enumerate()
        .map(|(i, &k)| (k, updates.iter().map(|u| u[i].1).sum::<f64>() / n))
        .collect())
}

/// `A(p+1)` as the ascending union of the reported sets, each of which must lie in `active`.
pub fn union_active(sets: &[Vec<usize>], active: &[usize]) -> Result<Vec<usize>> {
    let mut union = Vec::new();
    for (m, set) in sets.iter().enumerate() {
        if let Some(k) = set.iter().find(|k| !active.contains(k)) {
            return Err(Error::Protocol(format!(
                "client {m} reported arm {k}, which is not globally active"
            )));
        }
        union.extend_from_slice(set);
    }
    union.sort_unstable();
    union.dedup();
    Ok(union)
}

#[derive(Debug, Clone)]
pub struct ServerState {
    num_clients: usize,
    phase: u32,
    global_active: Vec<usize>,
    pending_updates: BTreeMap<usize, Vec<(usize, f64)>>,
    pending_sets: BTreeMap<usize, Vec<usize>>,
    gap_broadcast: BTreeMap<usize, Vec<(usize, f64)>>,
}

impl ServerState {
    pub fn new(num_clients: usize, num_arms: usize) -> Self {
        Self {
            num_clients,
            phase: 1,
            global_active: (0..num_arms).collect(),
            pending_updates: BTreeMap::new(),
            pending_sets: BTreeMap::new(),
            gap_broadcast: BTreeMap::new(),
        }
    }

    pub fn phase(&self) -> u32 {
        self.phase
    }

    pub fn global_active(&self) -> &[usize] {
        &self.global_active
    }

    fn check_client(&self, client: usize) -> Result<()> {
        if client >= self.num_clients {
            return Err(Error::Protocol(format!("unknown client {client}")));
        }
        Ok(())
    }

    pub fn submit_update(&mut self, client: usize, means: Vec<(usize, f64)>) -> Result<()> {
        self.check_client(client)?;
        if self.pending_updates.contains_key(&client) {
            return Err(Error::Protocol(format!(
                "client {client} sent two updates in phase {}",
                self.phase
            )));
        }
        self.pending_updates.insert(client, means);
        Ok(())
    }

    pub fn updates_complete(&self) -> bool {
        self.pending_updates.len() == self.num_clients
    }

    /// Averages the phase's updates once every client has reported.
    pub fn broadcast_global_means(&mut self) -> Result<Vec<(usize, f64)>> {
        if !self.updates_complete() {
            return Err(Error::Protocol(format!(
                "only {} of {} updates received in phase {}",
                self.pending_updates.len(),
                self.num_clients,
                self.phase
            )));
        }
        let updates: Vec<_> = std::mem::take(&mut self.pending_updates)
            .into_values()
            .collect();
        aggregate(&updates, &self.global_active)
    }

    pub fn submit_active_set(&mut self, client: usize, set: Vec<usize>) -> Result<()> {
        self.check_client(client)?;
        if self.pending_sets.contains_key(&client) {
            return Err(Error::Protocol(format!(
                "client {client} sent two active sets in phase {}",
                self.phase
            )));
        }
        self.pending_sets.insert(client, set);
        Ok(())
    }

    /// Closes the phase: returns `A(p+1)` and advances the phase counter.
    pub fn broadcast_global_active(&mut self) -> Result<Vec<usize>> {
        if self.pending_sets.len() != self.num_clients {
            return Err(Error::Protocol(format!(
                "only {} of {} active sets received in phase {}",
                self.pending_sets.len(),
                self.num_clients,
                self.phase
            )));
        }
        let sets: Vec<_> = std::mem::take(&mut self.pending_sets)
            .into_values()
            .collect();
        let next = union_active(&sets, &self.global_active)?;
        self.global_active = next.clone();
        self.phase += 1;
        Ok(next)
    }

    /// Records one client's gap estimates for the adaptive variant's relay.
    pub fn submit_gap_estimates(&mut self, client: usize, gaps: Vec<(usize, f64)>) -> Result<()> {
        self.check_client(client)?;
        self.gap_broadcast.insert(client, gaps);
        Ok(())
    }

    pub fn gap_broadcast(&self) -> &BTreeMap<usize, Vec<(usize, f64)>> {
        &self.gap_broadcast
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_averages_per_arm() {
        let ups = vec![
            vec![(0, 1.0)],
            vec![(0, 0.0)],
            vec![(0, 0.0)],
            vec![(0, 0.0)],
        ];
        assert_eq!(aggregate(&ups, &[0]).unwrap(), vec![(0, 0.25)]);
        let same = vec![vec![(1, 0.3), (4, 0.6)]; 3];
        assert_eq!(aggregate(&same, &[1, 4]).unwrap(), same[0]);
        let one = vec![vec![(2, 0.7)]];
        assert_eq!(aggregate(&one, &[2]).unwrap(), one[0]);
    }

    #[test]
    fn aggregate_rejects_missing_arms() {
        let ups = vec![vec![(0, 1.0), (1, 0.5)], vec![(0, 1.0)]];
        assert!(aggregate(&ups, &[0, 1]).is_err());
        assert!(aggregate(&[], &[0]).is_err());
    }

    #[test]
    fn union_of_local_sets() {
        let all: Vec<usize> = (0..6).collect();
        let sets = vec![vec![1, 2], vec![2, 3], vec![], vec![]];
        assert_eq!(union_active(&sets, &all).unwrap(), vec![1, 2, 3]);
        assert!(union_active(&[vec![], vec![]], &all).unwrap().is_empty());
        assert_eq!(union_active(&[vec![], vec![5]], &all).unwrap(), vec![5]);
        assert!(union_active(&[vec![7]], &all).is_err());
    }

    #[test]
    fn server_waits_for_every_client() {
        let mut s = ServerState::new(2, 3);
        s.submit_update(0, vec![(0, 0.1), (1, 0.2), (2, 0.3)])
            .unwrap();
        assert!(!s.updates_complete());
        assert!(s.broadcast_global_means().is_err());
        assert!(s.submit_update(0, vec![]).is_err());
        s.submit_update(1, vec![(0, 0.3), (1, 0.4), (2, 0.5)])
            .unwrap();
        let g = s.broadcast_global_means().unwrap();
        assert!((g[2].1 - 0.4).abs() < 1e-12);

        s.submit_active_set(0, vec![1]).unwrap();
        assert!(s.broadcast_global_active().is_err());
        s.submit_active_set(1, vec![2]).unwrap();
        assert_eq!(s.broadcast_global_active().unwrap(), vec![1, 2]);
        assert_eq!(s.phase(), 2);
        assert!(s.submit_update(5, vec![]).is_err());
    }
}
