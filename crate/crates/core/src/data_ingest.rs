//! Instance builders: the nine-arm synthetic game, seeded random instances and
//! grouped-mean ingestion from rating files.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mixed_model::BanditInstance;

/// The 4-client, 9-arm game: arms 0..4 are each one client's favourite,
/// arms 4..8 are near-favourites and arm 8 is the shared compromise.
pub fn nine_arm_game() -> BanditInstance {
    BanditInstance::new(vec![
        vec![1.0, 0.0, 0.0, 0.0, 0.9, 0.4, 0.35, 0.35, 0.5],
        vec![0.0, 1.0, 0.0, 0.0, 0.3, 0.9, 0.35, 0.3, 0.5],
        vec![0.0, 0.0, 1.0, 0.0, 0.35, 0.35, 0.9, 0.3, 0.5],
        vec![0.0, 0.0, 0.0, 1.0, 0.4, 0.3, 0.35, 0.9, 0.5],
    ])
    .expect("static matrix is valid")
}

/// I.i.d. uniform means on `[lo, hi]`, reproducible per seed.
pub fn random_instance(
    num_clients: usize,
    num_arms: usize,
    seed: u64,
    lo: f64,
    hi: f64,
) -> Result<BanditInstance> {
    if lo.is_nan() || hi.is_nan() || lo >= hi || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "mean range [{lo}, {hi}] is empty"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = (0..num_clients * num_arms)
        .map(|_| rng.random_range(lo..=hi))
        .collect();
    BanditInstance::from_flat(num_clients, num_arms, means)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatingsConfig {
    pub num_client_groups: usize,
    pub num_arm_groups: usize,
    pub partition_seed: u64,
    pub rating_scale_max: f64,
}

impl Default for RatingsConfig {
    fn default() -> Self {
        Self {
            num_client_groups: 10,
            num_arm_groups: 40,
            partition_seed: 0,
            rating_scale_max: 5.0,
        }
    }
}

struct Rating {
    user: String,
    item: String,
    value: f64,
}

fn parse_ratings(reader: impl Read, scale: f64) -> Result<Vec<Rating>> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let bad = |line: u64, message: String| Error::RatingsParse { line, message };

    let header = csv.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names != ["user_id", "item_id", "rating"] {
        return Err(bad(
            1,
            format!(
                "expected header user_id,item_id,rating, found {}",
                names.join(",")
            ),
        ));
    }

    let mut out = Vec::new();
    for record in csv.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            bad(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let (user, item, value) = (&record[0], &record[1], &record[2]);
        if user.is_empty() || item.is_empty() {
            return Err(bad(line, "empty user or item id".into()));
        }
        let value: f64 = value
            .parse()
            .map_err(|_| bad(line, format!("rating {value:?} is not a number")))?;
        if !value.is_finite() || value < 0.0 {
            return Err(bad(
                line,
                format!("rating {value} is not a nonnegative number"),
            ));
        }
        if value > scale {
            return Err(bad(
                line,
                format!("rating {value} exceeds the scale maximum {scale}"),
            ));
        }
        out.push(Rating {
            user: user.to_string(),
            item: item.to_string(),
            value,
        });
    }
    if out.is_empty() {
        return Err(bad(1, "no ratings".into()));
    }
    Ok(out)
}

/// Seeded uniform partition of the ascending `ids` into `groups` near-equal classes.
fn partition(ids: BTreeSet<&str>, groups: usize, rng: &mut ChaCha8Rng) -> BTreeMap<String, usize> {
    let mut ids: Vec<&str> = ids.into_iter().collect();
    ids.shuffle(rng);
    ids.into_iter()
        .enumerate()
        .map(|(i, id)| (id.to_string(), i % groups))
        .collect()
}

/// Local means as group-average ratings divided by the scale maximum.
pub fn ingest_ratings(reader: impl Read, config: &RatingsConfig) -> Result<BanditInstance> {
    if !config.rating_scale_max.is_finite() || config.rating_scale_max <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "rating scale maximum must be positive, got {}",
            config.rating_scale_max
        )));
    }
    let ratings = parse_ratings(reader, config.rating_scale_max)?;
    let users: BTreeSet<&str> = ratings.iter().map(|r| r.user.as_str()).collect();
    let items: BTreeSet<&str> = ratings.iter().map(|r| r.item.as_str()).collect();
    let (m, k) = (config.num_client_groups, config.num_arm_groups);
    if m == 0 || m > users.len() {
        return Err(Error::InvalidConfig(format!(
            "{m} client groups for {} distinct users",
            users.len()
        )));
    }
    if k == 0 || k > items.len() {
        return Err(Error::InvalidConfig(format!(
            "{k} arm groups for {} distinct items",
            items.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.partition_seed);
    let user_group = partition(users, m, &mut rng);
    let item_group = partition(items, k, &mut rng);

    let mut sums = vec![0.0; m * k];
    let mut counts = vec![0u64; m * k];
    for r in &ratings {
        let cell = user_group[&r.user] * k + item_group[&r.item];
        sums[cell] += r.value;
        counts[cell] += 1;
    }
    if let Some(cell) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyCell {
            client_group: cell / k,
            arm_group: cell % k,
        });
    }
    let means = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64 / config.rating_scale_max)
        .collect();
    BanditInstance::from_flat(m, k, means)
}
