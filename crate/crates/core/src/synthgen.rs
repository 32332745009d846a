//! Synthetic trajectories with a tunable regularity knob.
//!
//! Each user walks a fixed tour of `p` distinct locations out of `L`. At each
//! hourly step the tour location is replaced, with probability `rho`, by a
//! uniform draw over all `L` locations. `rho = 0` gives a zero-entropy cycle
//! and `rho = 1` an i.i.d. uniform source of `log2 L` bits.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cdr_ingest::{utc, Trajectory};
use crate::entropy::{entropy_profile, EntropyProfile};
use crate::error::{Error, Result};
use crate::markov::{evaluate_prequential, EvaluationOptions, PredictionResult};

/// 2014-07-01 00:00:00 UTC.
pub const DEFAULT_START_EPOCH: i64 = 1_404_172_800;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_users: usize,
    pub seq_length: usize,
    pub n_locations: usize,
    pub rho_min: f64,
    pub rho_max: f64,
    pub tour_period: usize,
    pub seed: u64,
    pub start_epoch: i64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_users: 2_000,
            seq_length: 5_000,
            n_locations: 16,
            rho_min: 0.0,
            rho_max: 1.0,
            tour_period: 8,
            seed: 0,
            start_epoch: DEFAULT_START_EPOCH,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_users == 0 {
            return fail("n_users must be at least 1".into());
        }
        if self.seq_length == 0 {
            return fail("seq_length must be at least 1".into());
        }
        if self.n_locations < 2 {
            return fail(format!("n_locations must be at least 2, got {}", self.n_locations));
        }
        if self.tour_period == 0 || self.tour_period > self.n_locations {
            return fail(format!(
                "tour_period must be in 1..={}, got {}",
                self.n_locations, self.tour_period
            ));
        }
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !in_unit(self.rho_min) || !in_unit(self.rho_max) || self.rho_min > self.rho_max {
            return fail(format!(
                "rho range [{}, {}] must lie inside [0, 1]",
                self.rho_min, self.rho_max
            ));
        }
        Ok(())
    }
}

/// A generated user together with the noise level it was drawn with.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUser {
    pub rho: f64,
    pub trajectory: Trajectory,
}

fn digits(n: usize) -> usize {
    n.max(1).to_string().len()
}

pub fn generate_user(config: &GeneratorConfig, index: usize) -> Result<SyntheticUser> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let rho = if config.rho_min == config.rho_max {
        config.rho_min
    } else {
        rng.random_range(config.rho_min..=config.rho_max)
    };
    let l = config.n_locations;
    let tour: Vec<usize> = sample(&mut rng, l, config.tour_period).into_vec();
    let width = digits(l - 1);
    let vocabulary: Vec<String> = (0..l).map(|i| format!("L{i:0width$}")).collect();
    let symbols: Vec<u32> = (0..config.seq_length)
        .map(|t| {
            let loc = if rng.random_bool(rho) {
                rng.random_range(0..l)
            } else {
                tour[t % tour.len()]
            };
            loc as u32
        })
        .collect();
    // keep only the locations actually visited so the vocabulary matches the
    // one ingest would build from the trajectory file
    let mut used = vec![false; l];
    for &s in &symbols {
        used[s as usize] = true;
    }
    let mut remap = vec![0u32; l];
    let mut kept = Vec::new();
    for (i, name) in vocabulary.into_iter().enumerate() {
        if used[i] {
            remap[i] = kept.len() as u32;
            kept.push(name);
        }
    }
    let symbols = symbols.into_iter().map(|s| remap[s as usize]).collect();
    let timestamps = (0..config.seq_length)
        .map(|t| config.start_epoch + 3_600 * t as i64)
        .collect();
    let user_id = format!("u{:0w$}", index + 1, w = digits(config.n_users).max(5));
    let trajectory = Trajectory::from_parts(user_id, timestamps, symbols, kept, &utc())?;
    Ok(SyntheticUser { rho, trajectory })
}

/// Users in index order. Output does not depend on thread scheduling.
pub fn generate_users(config: &GeneratorConfig) -> Result<Vec<SyntheticUser>> {
    config.validate()?;
    (0..config.n_users)
        .into_par_iter()
        .map(|i| generate_user(config, i))
        .collect()
}

pub fn generate(config: &GeneratorConfig) -> Result<Vec<Trajectory>> {
    Ok(generate_users(config)?.into_iter().map(|u| u.trajectory).collect())
}

/// Entropy profile and prediction result for every trajectory, in input order.
pub fn profile_users(
    trajectories: &[Trajectory],
    options: &EvaluationOptions,
) -> Result<Vec<(EntropyProfile, PredictionResult)>> {
    trajectories
        .par_iter()
        .map(|t| Ok((entropy_profile(t)?, evaluate_prequential(t, options)?)))
        .collect()
}

pub fn entropy_accuracy_sweep(
    config: &GeneratorConfig,
    options: &EvaluationOptions,
) -> Result<Vec<(EntropyProfile, PredictionResult)>> {
    profile_users(&generate(config)?, options)
}
