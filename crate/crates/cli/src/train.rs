//! Seeded training runs: metrics rows, periodic and final checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use attn_marl_core::merge_env::{EnvConfig, MergeEnv};
use attn_marl_core::{ActorCritic, AnyModel, Checkpoint, Result, Rng, Trainer};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::metrics::{metrics_path, MetricsRow, MetricsWriter};

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub checkpoint: Checkpoint,
}

pub fn checkpoint_path(dir: &Path, seed: u64, iteration: Option<usize>) -> PathBuf {
    match iteration {
        Some(i) => dir.join(format!("checkpoint_seed{seed}_iter{i}.json")),
        None => dir.join(format!("checkpoint_seed{seed}.json")),
    }
}

fn metadata(cfg: &ExperimentConfig, env: &EnvConfig, seed: u64, iteration: usize) -> Result<BTreeMap<String, Value>> {
    Ok(BTreeMap::from([
        ("experiment".to_string(), json!(cfg.name)),
        ("scenario".to_string(), json!(cfg.scenario)),
        ("seed".to_string(), json!(seed)),
        ("iterations".to_string(), json!(iteration)),
        ("env".to_string(), serde_json::to_value(env)?),
        ("ppo".to_string(), serde_json::to_value(cfg.ppo)?),
    ]))
}

struct Job<'a> {
    cfg: &'a ExperimentConfig,
    env_cfg: EnvConfig,
    seed: u64,
    dir: Option<&'a Path>,
    verbose: bool,
}

impl Job<'_> {
    fn run<M: ActorCritic>(&self, model: M, rng: &Rng) -> Result<SeedRun> {
        let env = MergeEnv::new(self.env_cfg)?;
        let mut trainer = Trainer::new(model, self.cfg.ppo, rng.split("train"))?;
        let mut writer = match self.dir {
            Some(d) => Some(MetricsWriter::create(&metrics_path(d, self.seed))?),
            None => None,
        };
        let start = Instant::now();
        let mut rows = Vec::with_capacity(self.cfg.iterations);
        for it in 0..self.cfg.iterations {
            let stats = trainer.train_iteration(&env)?;
            let row = MetricsRow::new(self.seed, &stats, start.elapsed().as_secs_f64());
            if let Some(w) = writer.as_mut() {
                w.push(&row)?;
            }
            if self.verbose && (it + 1) % 10 == 0 {
                eprintln!(
                    "[{} seed {}] iteration {:>4}  reward {:>9.3}  kl {:.4}",
                    self.cfg.name,
                    self.seed,
                    it + 1,
                    row.mean_episode_reward,
                    row.kl
                );
            }
            rows.push(row);
            let every = self.cfg.checkpoint_every;
            if let Some(d) = self.dir {
                if every > 0 && (it + 1) % every == 0 && it + 1 < self.cfg.iterations {
                    let meta = metadata(self.cfg, &self.env_cfg, self.seed, it + 1)?;
                    Checkpoint::from_model(&trainer.model, meta).save(&checkpoint_path(d, self.seed, Some(it + 1)))?;
                }
            }
        }
        let meta = metadata(self.cfg, &self.env_cfg, self.seed, self.cfg.iterations)?;
        let checkpoint = Checkpoint::from_model(&trainer.model, meta);
        if let Some(d) = self.dir {
            checkpoint.save(&checkpoint_path(d, self.seed, None))?;
        }
        Ok(SeedRun {
            seed: self.seed,
            rows,
            checkpoint,
        })
    }
}

/// One seed of one experiment. With `dir` set, metrics rows are appended to
/// `metrics_seed<S>.csv` as they are produced and checkpoints are written
/// alongside.
pub fn train_seed(cfg: &ExperimentConfig, seed: u64, dir: Option<&Path>, verbose: bool) -> Result<SeedRun> {
    let env_cfg = cfg.env_config()?;
    let root = Rng::new(seed);
    let job = Job {
        cfg,
        env_cfg,
        seed,
        dir,
        verbose,
    };
    match AnyModel::init(cfg.arch_spec(&env_cfg), &mut root.split("init"))? {
        AnyModel::Attn(m) => job.run(m, &root),
        AnyModel::Mlp(m) => job.run(m, &root),
    }
}

/// Every seed of an experiment as independent jobs, writing into
/// `output_dir/name/` together with the resolved configuration.
pub fn run_experiment(cfg: &ExperimentConfig, verbose: bool) -> Result<Vec<SeedRun>> {
    cfg.validate()?;
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.json"), cfg.to_json()?)?;
    cfg.seeds
        .par_iter()
        .map(|&seed| train_seed(cfg, seed, Some(&dir), verbose))
        .collect()
}
