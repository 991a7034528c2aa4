//! Final-iteration rewards of two experiments under Welch's t-test.

use std::path::Path;

use attn_marl_core::{Error, Result};

use crate::curves::load_groups;
use crate::metrics::MetricsRow;
use crate::stats::{welch_t_test, WelchReport};

/// Metrics of every seed named by `spec`: an experiment directory (its
/// `metrics_seed*.csv` files) or a glob pattern.
pub fn load_runs(spec: &str) -> Result<Vec<Vec<MetricsRow>>> {
    let pattern = if Path::new(spec).is_dir() {
        Path::new(spec).join("metrics_seed*.csv").to_string_lossy().into_owned()
    } else {
        spec.to_string()
    };
    Ok(load_groups(&pattern)?.into_values().flatten().collect())
}

pub fn final_rewards(runs: &[Vec<MetricsRow>]) -> Result<Vec<f64>> {
    runs.iter()
        .map(|r| {
            r.last()
                .map(|row| row.mean_episode_reward)
                .ok_or(Error::InsufficientSamples { need: 1, got: 0 })
        })
        .collect()
}

pub fn compare_runs(a: &[Vec<MetricsRow>], b: &[Vec<MetricsRow>]) -> Result<WelchReport> {
    welch_t_test(&final_rewards(a)?, &final_rewards(b)?)
}
