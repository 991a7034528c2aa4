//! Per-iteration training metrics, one CSV file per seed.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use attn_marl_core::{Error, IterationStats, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub seed: u64,
    pub mean_episode_reward: f64,
    pub mean_system_speed: Option<f64>,
    pub surrogate_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub kl: f64,
    pub beta: f64,
    pub grad_norm: f64,
    pub timesteps: usize,
    pub wall_seconds: f64,
}

impl MetricsRow {
    pub fn new(seed: u64, s: &IterationStats, wall_seconds: f64) -> Self {
        Self {
            iteration: s.iteration,
            seed,
            mean_episode_reward: s.mean_episode_reward,
            mean_system_speed: s.mean_system_speed,
            surrogate_loss: s.surrogate_loss,
            value_loss: s.value_loss,
            entropy: s.entropy,
            kl: s.kl,
            beta: s.beta,
            grad_norm: s.grad_norm,
            timesteps: s.timesteps,
            wall_seconds,
        }
    }

    /// Every field except the wall clock, which is the one column that
    /// legitimately differs between reruns.
    pub fn same_run(&self, other: &Self) -> bool {
        Self {
            wall_seconds: 0.0,
            ..*self
        } == Self {
            wall_seconds: 0.0,
            ..*other
        }
    }
}

/// Iterations averaged by [`tail_mean_reward`].
pub const FINAL_WINDOW: usize = 10;

/// Mean episode reward over the last [`FINAL_WINDOW`] iterations (all of
/// them for shorter runs); a steadier summary of where a run ended than its
/// last row.
pub fn tail_mean_reward(rows: &[MetricsRow]) -> Option<f64> {
    if rows.is_empty() {
        return None;
    }
    let tail = &rows[rows.len().saturating_sub(FINAL_WINDOW)..];
    Some(tail.iter().map(|r| r.mean_episode_reward).sum::<f64>() / tail.len() as f64)
}

pub fn metrics_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("metrics_seed{seed}.csv"))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::config("metrics", format!("{other:?}")),
    }
}

/// Appends rows as training proceeds, flushing after each.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    /// Starts a fresh file (a rerun replaces the previous one).
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            inner: csv::Writer::from_writer(File::create(path)?),
        })
    }

    pub fn push(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.serialize(row).map_err(csv_err)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let rows = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<MetricsRow>, _>>()
        .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    Ok(rows)
}

pub fn write_metrics<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
