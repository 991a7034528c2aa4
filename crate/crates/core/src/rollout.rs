//! Trajectory collection and advantage estimation.

use crate::attn_net::{log_prob, sample_actions, GaussianPolicyOut};
use crate::error::{Error, Result};
use crate::graph::{AgentGraph, ObservationBatch};
use crate::model::ActorCritic;
use crate::numerics::{Matrix, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub obs: ObservationBatch,
    pub graph: AgentGraph,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    /// Mean speed over every vehicle, for environments that have one.
    pub mean_speed: Option<f64>,
}

/// An environment whose agent set may change from step to step.
pub trait MultiAgentEnv: Clone + Send {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    /// Starts a new episode; the environment keeps `rng` for its own draws.
    fn reset(&mut self, rng: Rng) -> Result<()>;
    fn observe(&mut self) -> Result<Observation>;
    /// `actions` has one row per observation row. Rows with `active[i]`
    /// false are not driven by the policy.
    fn step(&mut self, actions: &Matrix, active: &[bool]) -> Result<StepOutcome>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub obs: ObservationBatch,
    pub graph: AgentGraph,
    pub actions: Matrix,
    pub reward: f64,
    pub log_prob_old: f64,
    pub value_old: f64,
    /// Frozen statistics of the behaviour policy.
    pub old: GaussianPolicyOut,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Value of the state after the last record, or 0 if the episode ended.
    pub bootstrap: f64,
    /// Sum of every environment reward, including steps with no agents.
    pub episode_reward: f64,
    pub env_steps: usize,
    pub mean_speed: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.value_old).collect()
    }

    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) -> Result<()> {
        let (adv, ret) = compute_gae(&self.rewards(), &self.values(), self.bootstrap, gamma, lambda)?;
        self.advantages = adv;
        self.returns = ret;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Sample,
    /// Act with the policy mean.
    Mean,
}

/// Runs one episode of at most `horizon` environment steps.
///
/// A step where no agent is present produces no record; its reward is added
/// to the previous record's reward (or dropped if there is none yet).
pub fn collect<M: ActorCritic, E: MultiAgentEnv>(
    env: &mut E,
    model: &M,
    horizon: usize,
    mode: ActionMode,
    rng: &Rng,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::config("horizon", "must be at least 1"));
    }
    env.reset(rng.split("env"))?;
    let mut policy_rng = rng.split("policy");
    let mut traj = Trajectory::default();
    let mut speed_sum = 0.0;
    let mut speed_n = 0usize;
    let mut ended = false;
    for _ in 0..horizon {
        let o = env.observe()?;
        let outcome = if o.obs.num_valid() == 0 {
            let empty = Matrix::zeros(o.obs.rows(), env.act_dim());
            let outcome = env.step(&empty, &vec![false; o.obs.rows()])?;
            if let Some(last) = traj.steps.last_mut() {
                last.reward += outcome.reward;
            }
            outcome
        } else {
            let (out, _) = model.policy_forward(&o.obs, &o.graph)?;
            let (value, _) = model.value_forward(&o.obs, &o.graph)?;
            let actions = match mode {
                ActionMode::Sample => sample_actions(&out, &mut policy_rng),
                ActionMode::Mean => out.means.clone(),
            };
            let log_prob_old = log_prob(&out, &actions)?;
            let outcome = env.step(&actions, &out.valid)?;
            traj.steps.push(StepRecord {
                obs: o.obs,
                graph: o.graph,
                actions,
                reward: outcome.reward,
                log_prob_old,
                value_old: value,
                old: out,
                done: outcome.done,
            });
            outcome
        };
        traj.env_steps += 1;
        traj.episode_reward += outcome.reward;
        if let Some(s) = outcome.mean_speed {
            speed_sum += s;
            speed_n += 1;
        }
        if outcome.done {
            ended = true;
            break;
        }
    }
    if let Some(last) = traj.steps.last_mut() {
        last.done = ended;
    }
    if !ended {
        let o = env.observe()?;
        if o.obs.num_valid() > 0 {
            traj.bootstrap = model.value_forward(&o.obs, &o.graph)?.0;
        }
    }
    traj.mean_speed = (speed_n > 0).then(|| speed_sum / speed_n as f64);
    Ok(traj)
}

/// Generalised advantage estimates and value targets.
///
/// `δ_t = r_t + γ V_{t+1} − V_t` with `V_T = bootstrap`, `A_t = δ_t + γλ A_{t+1}`,
/// and `returns_t = A_t + V_t`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() {
        return Err(Error::shape(format!(
            "{} rewards but {} values",
            rewards.len(),
            values.len()
        )));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::config("gamma", "must lie in (0, 1]"));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config("lambda", "must lie in [0, 1]"));
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Zero mean, unit (population) variance. Batches with fewer than two
/// entries or no spread are returned unchanged.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    if adv.len() < 2 {
        return adv.to_vec();
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return adv.to_vec();
    }
    adv.iter().map(|a| (a - mean) / std).collect()
}
