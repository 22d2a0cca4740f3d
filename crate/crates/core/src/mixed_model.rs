//! Bandit instances and the closed-form quantities of the mixed local/global model.
//!
//! Arms and clients are indexed from zero throughout the crate.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// An `M x K` matrix of local mean rewards, row `m` holding client `m`'s arms.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditInstance {
    num_clients: usize,
    num_arms: usize,
    local_means: Vec<f64>,
}

impl BanditInstance {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let num_clients = rows.len();
        if num_clients == 0 {
            return Err(Error::InvalidInstance("no clients".into()));
        }
        let num_arms = rows[0].len();
        let mut local_means = Vec::with_capacity(num_clients * num_arms);
        for (m, row) in rows.into_iter().enumerate() {
            if row.len() != num_arms {
                return Err(Error::InvalidInstance(format!(
                    "client {m} has {} arms, expected {num_arms}",
                    row.len()
                )));
            }
            local_means.extend(row);
        }
        Self::from_flat(num_clients, num_arms, local_means)
    }

    pub fn from_flat(num_clients: usize, num_arms: usize, local_means: Vec<f64>) -> Result<Self> {
        if num_clients == 0 || num_arms == 0 {
            return Err(Error::InvalidInstance(format!(
                "need at least one client and one arm, got {num_clients}x{num_arms}"
            )));
        }
        if local_means.len() != num_clients * num_arms {
            return Err(Error::InvalidInstance(format!(
                "expected {} means, got {}",
                num_clients * num_arms,
                local_means.len()
            )));
        }
        if let Some(i) = local_means.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInstance(format!(
                "non-finite mean at client {}, arm {}",
                i / num_arms,
                i % num_arms
            )));
        }
        Ok(Self {
            num_clients,
            num_arms,
            local_means,
        })
    }

    pub fn num_clients(&self) -> usize {
        self.num_clients
    }

    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    #[inline]
    pub fn mean(&self, client: usize, arm: usize) -> f64 {
        self.local_means[client * self.num_arms + arm]
    }

    pub fn row(&self, client: usize) -> &[f64] {
        &self.local_means[client * self.num_arms..(client + 1) * self.num_arms]
    }

    /// Parses a headerless CSV of `M` rows by `K` decimal columns.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (r, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .enumerate()
                .map(|(c, cell)| {
                    cell.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::InstanceParse {
                            row: r + 1,
                            column: c + 1,
                            message: format!("{e} ({:?})", cell.trim()),
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            if let Some(first) = rows.first().map(Vec::len) {
                if row.len() != first {
                    return Err(Error::InstanceParse {
                        row: r + 1,
                        column: row.len().min(first) + 1,
                        message: format!("expected {first} columns, found {}", row.len()),
                    });
                }
            }
            rows.push(row);
        }
        Self::new(rows)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    /// Renders the matrix in the same headerless CSV format `from_csv_str` reads.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for m in 0..self.num_clients {
            for (k, v) in self.row(m).iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// The weights `beta` (own data) and `gamma` (each other client) induced by `alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
    pub num_clients: usize,
}

impl MixingWeights {
    pub fn new(alpha: f64, num_clients: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidAlpha(alpha));
        }
        if num_clients == 0 {
            return Err(Error::InvalidConfig("num_clients must be positive".into()));
        }
        let m = num_clients as f64;
        let gamma = (1.0 - alpha) / m;
        let beta = alpha + gamma;
        let eta = (beta * beta + (m - 1.0) * gamma * gamma).sqrt();
        Ok(Self {
            alpha,
            beta,
            gamma,
            eta,
            num_clients,
        })
    }
}

/// Mixed means, gaps and optimal arms of an instance under fixed weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedModelView {
    pub alpha: f64,
    pub num_clients: usize,
    pub num_arms: usize,
    /// Row-major `M x K`.
    local_means: Vec<f64>,
    mixed_means: Vec<f64>,
    pub global_means: Vec<f64>,
    /// Row-major `M x K`; exactly zero at each client's optimal arm.
    gaps: Vec<f64>,
    /// Per arm, the smallest gap among clients for which the arm is suboptimal,
    /// or `+inf` when the arm is optimal for every client.
    pub min_gaps: Vec<f64>,
    pub optimal_arms: Vec<usize>,
}

impl MixedModelView {
    #[inline]
    pub fn local_mean(&self, client: usize, arm: usize) -> f64 {
        self.local_means[client * self.num_arms + arm]
    }

    #[inline]
    pub fn mixed_mean(&self, client: usize, arm: usize) -> f64 {
        self.mixed_means[client * self.num_arms + arm]
    }

    #[inline]
    pub fn gap(&self, client: usize, arm: usize) -> f64 {
        self.gaps[client * self.num_arms + arm]
    }

    pub fn mixed_row(&self, client: usize) -> &[f64] {
        &self.mixed_means[client * self.num_arms..(client + 1) * self.num_arms]
    }

    pub fn gap_row(&self, client: usize) -> &[f64] {
        &self.gaps[client * self.num_arms..(client + 1) * self.num_arms]
    }

    pub fn optimal_mixed_mean(&self, client: usize) -> f64 {
        self.mixed_mean(client, self.optimal_arms[client])
    }

    /// Iterates `(client, arm, gap)` over every suboptimal pair.
    pub fn suboptimal_pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.num_clients).flat_map(move |m| {
            (0..self.num_arms)
                .filter(move |&k| k != self.optimal_arms[m])
                .map(move |k| (m, k, self.gap(m, k)))
        })
    }
}

/// Index of the largest value, ties resolved to the lowest index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-arm average of the local means over all clients.
pub fn global_means(instance: &BanditInstance) -> Vec<f64> {
    let m = instance.num_clients() as f64;
    (0..instance.num_arms())
        .map(|k| {
            (0..instance.num_clients())
                .map(|c| instance.mean(c, k))
                .sum::<f64>()
                / m
        })
        .collect()
}

pub fn mixed_means(instance: &BanditInstance, weights: &MixingWeights) -> Result<MixedModelView> {
    let (num_clients, num_arms) = (instance.num_clients(), instance.num_arms());
    if weights.num_clients != num_clients {
        return Err(Error::InvalidConfig(format!(
            "weights built for {} clients, instance has {num_clients}",
            weights.num_clients
        )));
    }
    let column_sums: Vec<f64> = (0..num_arms)
        .map(|k| (0..num_clients).map(|c| instance.mean(c, k)).sum())
        .collect();

    let mut mixed = Vec::with_capacity(num_clients * num_arms);
    for m in 0..num_clients {
        for (&own, &column) in instance.row(m).iter().zip(&column_sums) {
            mixed.push(weights.beta * own + weights.gamma * (column - own));
        }
    }

    let mut optimal_arms = Vec::with_capacity(num_clients);
    let mut gaps = Vec::with_capacity(num_clients * num_arms);
    for m in 0..num_clients {
        let row = &mixed[m * num_arms..(m + 1) * num_arms];
        let best = argmax(row);
        optimal_arms.push(best);
        gaps.extend(
            row.iter()
                .enumerate()
                .map(|(k, &v)| if k == best { 0.0 } else { row[best] - v }),
        );
    }

    let min_gaps = (0..num_arms)
        .map(|k| {
            (0..num_clients)
                .filter(|&n| optimal_arms[n] != k)
                .map(|n| gaps[n * num_arms + k])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();

    Ok(MixedModelView {
        alpha: weights.alpha,
        num_clients,
        num_arms,
        local_means: instance.local_means.clone(),
        mixed_means: mixed,
        global_means: global_means(instance),
        gaps,
        min_gaps,
        optimal_arms,
    })
}
