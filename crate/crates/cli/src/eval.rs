//! Deterministic evaluation of a trained policy against the all-IDM road.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use attn_marl_core::merge_env::{run_idm_episode, write_trace, EnvConfig, MergeEnv, OBS_DIM, ACT_DIM};
use attn_marl_core::rollout::{collect, ActionMode};
use attn_marl_core::{ActorCritic, AnyModel, ArchSpec, Checkpoint, Error, Result, Rng};
use serde::Serialize;

use crate::stats::{mean, sample_var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub episode: usize,
    pub reward: f64,
    pub mean_speed: Option<f64>,
    /// The same arrivals with every vehicle on IDM.
    pub idm_reward: f64,
    pub idm_mean_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_reward: Option<f64>,
    pub std_reward: Option<f64>,
    pub mean_speed: Option<f64>,
    pub idm_mean_reward: Option<f64>,
    pub idm_mean_speed: Option<f64>,
    pub per_episode: Vec<EpisodeResult>,
}

/// Environment the checkpoint was trained on, from its metadata.
pub fn checkpoint_env(ckpt: &Checkpoint) -> Result<EnvConfig> {
    let v = ckpt
        .metadata
        .get("env")
        .ok_or_else(|| Error::Checkpoint("metadata has no `env` entry".into()))?;
    Ok(serde_json::from_value(v.clone())?)
}

pub fn check_compatible(spec: &ArchSpec, env: &EnvConfig) -> Result<()> {
    if spec.obs_dim() != OBS_DIM || spec.act_dim() != ACT_DIM {
        return Err(Error::Checkpoint(format!(
            "network expects {}-d observations and {}-d actions, the merge scenario has {OBS_DIM} and {ACT_DIM}",
            spec.obs_dim(),
            spec.act_dim()
        )));
    }
    match spec {
        ArchSpec::Attentional(a) if a.classes != env.num_classes() => Err(Error::Checkpoint(format!(
            "network has {} edge classes, the scenario graph has {}",
            a.classes,
            env.num_classes()
        ))),
        ArchSpec::Mlp(a) if a.capacity != env.max_controlled => Err(Error::Checkpoint(format!(
            "MLP capacity {} differs from the scenario's {} controlled vehicles",
            a.capacity, env.max_controlled
        ))),
        _ => Ok(()),
    }
}

fn summarise(per_episode: Vec<EpisodeResult>) -> EvalSummary {
    let n = per_episode.len();
    let rewards: Vec<f64> = per_episode.iter().map(|e| e.reward).collect();
    let speeds: Vec<f64> = per_episode.iter().filter_map(|e| e.mean_speed).collect();
    let idm_rewards: Vec<f64> = per_episode.iter().map(|e| e.idm_reward).collect();
    let idm_speeds: Vec<f64> = per_episode.iter().map(|e| e.idm_mean_speed).collect();
    let some = |xs: &[f64]| (!xs.is_empty()).then(|| mean(xs));
    EvalSummary {
        episodes: n,
        mean_reward: some(&rewards),
        std_reward: (n > 0).then(|| sample_var(&rewards).sqrt()),
        mean_speed: some(&speeds),
        idm_mean_reward: some(&idm_rewards),
        idm_mean_speed: some(&idm_speeds),
        per_episode,
    }
}

/// `episodes` full-horizon episodes with mean actions. Episode `k` draws its
/// traffic from `seed` split by `k`, and the IDM comparison replays the same
/// arrivals. With `trace_dir`, each episode's vehicle trace is written as
/// `trace_episode<k>.jsonl`.
pub fn evaluate_model<M: ActorCritic>(
    model: &M,
    env_cfg: &EnvConfig,
    episodes: usize,
    seed: u64,
    trace_dir: Option<&Path>,
) -> Result<EvalSummary> {
    check_compatible(&model.spec(), env_cfg)?;
    let root = Rng::new(seed);
    let mut env = MergeEnv::new(*env_cfg)?;
    if trace_dir.is_some() {
        env.enable_trace();
    }
    let mut per_episode = Vec::with_capacity(episodes);
    for k in 0..episodes {
        let rng = root.split_index("episode", k as u64);
        let traj = collect(&mut env, model, env_cfg.horizon, ActionMode::Mean, &rng)?;
        if let Some(dir) = trace_dir {
            let f = File::create(dir.join(format!("trace_episode{k}.jsonl")))?;
            write_trace(&env.take_trace(), BufWriter::new(f))?;
        }
        let idm = run_idm_episode(env_cfg, rng.split("env"))?;
        per_episode.push(EpisodeResult {
            episode: k,
            reward: traj.episode_reward,
            mean_speed: traj.mean_speed,
            idm_reward: idm.total_reward,
            idm_mean_speed: idm.mean_speed,
        });
    }
    Ok(summarise(per_episode))
}

/// Evaluates on the checkpoint's own scenario unless `env_override` is set.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    env_override: Option<EnvConfig>,
    episodes: usize,
    seed: u64,
    trace_dir: Option<&Path>,
) -> Result<EvalSummary> {
    let env = match env_override {
        Some(e) => e,
        None => checkpoint_env(ckpt)?,
    };
    match ckpt.to_model()? {
        AnyModel::Attn(m) => evaluate_model(&m, &env, episodes, seed, trace_dir),
        AnyModel::Mlp(m) => evaluate_model(&m, &env, episodes, seed, trace_dir),
    }
}
