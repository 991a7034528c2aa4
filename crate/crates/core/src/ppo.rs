//! Multi-agent PPO with a clipped surrogate, adaptive KL penalty and a value
//! baseline, where every per-timestep term is a statistic of the joint
//! (factorised) policy over the agents present at that timestep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attn_net::{entropy, entropy_grad, kl, kl_grad, log_prob, log_prob_grad, GaussianPolicyOut};
use crate::error::{Error, Result};
use crate::graph::{AgentGraph, ObservationBatch};
use crate::model::ActorCritic;
use crate::numerics::{AdamConfig, AdamState, Matrix, Rng};
use crate::rollout::{collect, normalize_advantages, ActionMode, MultiAgentEnv, StepRecord, Trajectory};

pub const BETA_MIN: f64 = 1e-6;
pub const BETA_MAX: f64 = 1e2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    /// Surrogate clip range ε; `None` disables clipping.
    pub clip: Option<f64>,
    pub value_coef: f64,
    pub entropy_coef: f64,
    /// Initial KL penalty β; 0 disables the penalty and its adaptation.
    pub kl_coef: f64,
    pub kl_target: f64,
    pub epochs: usize,
    /// Timesteps per minibatch.
    pub minibatch: usize,
    pub rollouts: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Global-norm clip applied separately to the policy and value gradients.
    pub max_grad_norm: Option<f64>,
    /// Agent rows every timestep is padded to; `None` evaluates unpadded.
    pub pad_size: Option<usize>,
    /// Rollout length cap; `None` uses the environment's horizon.
    pub horizon: Option<usize>,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: Some(0.3),
            value_coef: 0.5,
            entropy_coef: 0.0,
            kl_coef: 1.0,
            kl_target: 0.01,
            epochs: 10,
            minibatch: 64,
            rollouts: 20,
            learning_rate: 3e-4,
            gamma: 0.99,
            lambda: 0.95,
            max_grad_norm: Some(0.5),
            pad_size: None,
            horizon: None,
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let clip_on = self.clip.is_some_and(|e| e > 0.0);
        if let Some(e) = self.clip {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::config("clip", "must be positive when set"));
            }
        }
        if !clip_on && self.kl_coef <= 0.0 {
            return Err(Error::config("clip", "either clipping or the KL penalty must be enabled"));
        }
        for (key, v) in [
            ("value_coef", self.value_coef),
            ("entropy_coef", self.entropy_coef),
            ("kl_coef", self.kl_coef),
            ("learning_rate", self.learning_rate),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be a finite non-negative number"));
            }
        }
        if !(self.kl_target > 0.0 && self.kl_target.is_finite()) {
            return Err(Error::config("kl_target", "must be positive"));
        }
        for (key, v) in [
            ("epochs", self.epochs),
            ("minibatch", self.minibatch),
            ("rollouts", self.rollouts),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("gamma", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config("lambda", "must lie in [0, 1]"));
        }
        if let Some(g) = self.max_grad_norm {
            if !(g > 0.0) {
                return Err(Error::config("max_grad_norm", "must be positive when set"));
            }
        }
        if self.pad_size == Some(0) {
            return Err(Error::config("pad_size", "must be at least 1 when set"));
        }
        if self.horizon == Some(0) {
            return Err(Error::config("horizon", "must be at least 1 when set"));
        }
        Ok(())
    }
}

/// `min(r·A, clip(r, 1−ε, 1+ε)·A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    unclipped.min(clipped)
}

/// Derivative of the surrogate with respect to the log-ratio.
fn surrogate_dlogratio(ratio: f64, advantage: f64, clip: Option<f64>) -> f64 {
    match clip {
        None => ratio * advantage,
        Some(eps) => {
            let unclipped = ratio * advantage;
            let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
            if unclipped <= clipped {
                unclipped
            } else {
                0.0
            }
        }
    }
}

/// Doubles β when the measured KL overshoots 1.5× the target, halves it when
/// it undershoots target/1.5, and keeps it within `[BETA_MIN, BETA_MAX]`.
pub fn update_beta(measured_kl: f64, target: f64, beta: f64) -> f64 {
    let next = if measured_kl > 1.5 * target {
        beta * 2.0
    } else if measured_kl < target / 1.5 {
        beta / 2.0
    } else {
        beta
    };
    next.clamp(BETA_MIN, BETA_MAX)
}

/// A timestep with every per-agent quantity padded to a fixed row count.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedStep {
    pub obs: ObservationBatch,
    pub graph: AgentGraph,
    pub actions: Matrix,
    pub old: GaussianPolicyOut,
}

fn pad_matrix(m: &Matrix, rows: usize) -> Matrix {
    let mut data = m.data().to_vec();
    data.resize(rows * m.cols(), 0.0);
    Matrix::from_vec(rows, m.cols(), data).expect("padded size")
}

pub fn pad_step(step: &StepRecord, pad: usize, timestep: usize) -> Result<PaddedStep> {
    let agents = step.obs.rows();
    if agents > pad {
        return Err(Error::PadOverflow {
            pad,
            agents,
            timestep,
        });
    }
    let mut valid = step.old.valid.clone();
    valid.resize(pad, false);
    Ok(PaddedStep {
        obs: step.obs.padded(pad)?,
        graph: step.graph.padded(pad)?,
        actions: pad_matrix(&step.actions, pad),
        old: GaussianPolicyOut::new(
            pad_matrix(&step.old.means, pad),
            pad_matrix(&step.old.log_vars, pad),
            valid,
        )?,
    })
}

/// Pads every timestep to `pad` agent rows.
pub fn pad_batch(steps: &[&StepRecord], pad: usize) -> Result<Vec<PaddedStep>> {
    steps
        .iter()
        .enumerate()
        .map(|(t, s)| pad_step(s, pad, t))
        .collect()
}

/// One timestep of training data.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub step: &'a StepRecord,
    pub advantage: f64,
    pub ret: f64,
    /// Position in the iteration's batch, used in error reports.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Negated objective, averaged over timesteps.
    pub loss: f64,
    pub policy_grad: Vec<f64>,
    pub value_grad: Vec<f64>,
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub kl: f64,
    pub clip_fraction: f64,
}

/// Minimisable form of `L^CLIP − c₁ L^VF + c₂ S − β KL`, each term a
/// per-timestep scalar, averaged over the samples.
pub fn ppo_loss<M: ActorCritic>(
    model: &M,
    samples: &[Sample<'_>],
    cfg: &PpoConfig,
    beta: f64,
) -> Result<LossOutput> {
    if samples.is_empty() {
        return Err(Error::InsufficientSamples { need: 1, got: 0 });
    }
    let inv_b = 1.0 / samples.len() as f64;
    let mut out = LossOutput {
        loss: 0.0,
        policy_grad: vec![0.0; model.policy_params().len()],
        value_grad: vec![0.0; model.value_params().len()],
        surrogate: 0.0,
        value_loss: 0.0,
        entropy: 0.0,
        kl: 0.0,
        clip_fraction: 0.0,
    };
    for s in samples {
        let padded;
        let (obs, graph, actions, old) = match cfg.pad_size {
            Some(pad) => {
                padded = pad_step(s.step, pad, s.index)?;
                (&padded.obs, &padded.graph, &padded.actions, &padded.old)
            }
            None => (&s.step.obs, &s.step.graph, &s.step.actions, &s.step.old),
        };
        let (pi, pcache) = model.policy_forward(obs, graph)?;
        let lp = log_prob(&pi, actions)?;
        let ratio = (lp - s.step.log_prob_old).exp();
        let surr = match cfg.clip {
            Some(eps) => clipped_surrogate(ratio, s.advantage, eps),
            None => ratio * s.advantage,
        };
        let ent = entropy(&pi);
        let kl_t = kl(old, &pi)?;
        let (v, vcache) = model.value_forward(obs, graph)?;
        let verr = v - s.ret;
        let objective = surr - cfg.value_coef * verr * verr + cfg.entropy_coef * ent - beta * kl_t;
        if !objective.is_finite() {
            return Err(Error::NonFiniteLoss { timestep: s.index });
        }
        out.loss -= objective * inv_b;
        out.surrogate += surr * inv_b;
        out.value_loss += verr * verr * inv_b;
        out.entropy += ent * inv_b;
        out.kl += kl_t * inv_b;
        if let Some(eps) = cfg.clip {
            if (ratio - 1.0).abs() > eps {
                out.clip_fraction += inv_b;
            }
        }

        let g_lp = surrogate_dlogratio(ratio, s.advantage, cfg.clip);
        let (lp_dm, lp_dlv) = log_prob_grad(&pi, actions)?;
        let mut dm = lp_dm;
        let mut dlv = lp_dlv;
        dm.data_mut().iter_mut().for_each(|d| *d *= -g_lp * inv_b);
        dlv.data_mut().iter_mut().for_each(|d| *d *= -g_lp * inv_b);
        if cfg.entropy_coef != 0.0 {
            let eg = entropy_grad(&pi);
            for (d, e) in dlv.data_mut().iter_mut().zip(eg.data()) {
                *d -= cfg.entropy_coef * e * inv_b;
            }
        }
        if beta != 0.0 {
            let (kdm, kdlv) = kl_grad(old, &pi)?;
            for (d, k) in dm.data_mut().iter_mut().zip(kdm.data()) {
                *d += beta * k * inv_b;
            }
            for (d, k) in dlv.data_mut().iter_mut().zip(kdlv.data()) {
                *d += beta * k * inv_b;
            }
        }
        model.policy_backward(&pcache, &dm, &dlv, &mut out.policy_grad)?;
        model.value_backward(&vcache, 2.0 * cfg.value_coef * verr * inv_b, &mut out.value_grad)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub mean_episode_reward: f64,
    pub mean_system_speed: Option<f64>,
    pub surrogate_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub kl: f64,
    pub beta: f64,
    pub grad_norm: f64,
    pub timesteps: usize,
    pub episodes: usize,
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn clip_norm(g: &mut [f64], max: Option<f64>) -> f64 {
    let norm = l2(g);
    if let Some(max) = max {
        if norm > max {
            let s = max / norm;
            g.iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// Owns the model, optimiser state and KL coefficient across iterations.
#[derive(Debug, Clone)]
pub struct Trainer<M: ActorCritic> {
    pub model: M,
    pub config: PpoConfig,
    pub beta: f64,
    pub iteration: usize,
    policy_opt: AdamState,
    value_opt: AdamState,
    root: Rng,
}

impl<M: ActorCritic> Trainer<M> {
    pub fn new(model: M, config: PpoConfig, rng: Rng) -> Result<Self> {
        config.validate()?;
        let adam = AdamConfig {
            step_size: config.learning_rate,
            ..AdamConfig::default()
        };
        Ok(Self {
            policy_opt: AdamState::new(model.policy_params().len(), adam),
            value_opt: AdamState::new(model.value_params().len(), adam),
            beta: config.kl_coef,
            iteration: 0,
            root: rng,
            model,
            config,
        })
    }

    /// Collects rollouts in parallel (merged in rollout order), then runs
    /// minibatched Adam epochs sequentially and adapts β once.
    pub fn train_iteration<E: MultiAgentEnv + Sync>(&mut self, env: &E) -> Result<IterationStats> {
        let cfg = self.config;
        let iter_rng = self.root.split_index("iteration", self.iteration as u64);
        let horizon = cfg.horizon.unwrap_or(env.horizon());
        let model = &self.model;
        let mut trajs: Vec<Trajectory> = (0..cfg.rollouts)
            .into_par_iter()
            .map(|k| {
                let mut e = env.clone();
                collect(&mut e, model, horizon, ActionMode::Sample, &iter_rng.split_index("rollout", k as u64))
            })
            .collect::<Result<_>>()?;
        for t in &mut trajs {
            t.compute_advantages(cfg.gamma, cfg.lambda)?;
        }

        let raw_adv: Vec<f64> = trajs.iter().flat_map(|t| t.advantages.iter().copied()).collect();
        let adv = if cfg.normalize_advantages {
            normalize_advantages(&raw_adv)
        } else {
            raw_adv
        };
        let samples: Vec<Sample<'_>> = trajs
            .iter()
            .flat_map(|t| t.steps.iter().zip(&t.returns))
            .zip(adv)
            .enumerate()
            .map(|(index, ((step, &ret), advantage))| Sample {
                step,
                advantage,
                ret,
                index,
            })
            .collect();

        let mut shuffle_rng = iter_rng.split("shuffle");
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut grad_norm_sum = 0.0;
        let mut updates = 0usize;
        let (mut surr, mut vloss, mut ent) = (0.0, 0.0, 0.0);
        let mut batch = Vec::with_capacity(cfg.minibatch);
        for epoch in 0..cfg.epochs {
            shuffle_rng.shuffle(&mut order);
            let (mut es, mut ev, mut ee, mut n) = (0.0, 0.0, 0.0, 0usize);
            for chunk in order.chunks(cfg.minibatch) {
                batch.clear();
                batch.extend(chunk.iter().map(|&i| samples[i]));
                let mut lo = ppo_loss(&self.model, &batch, &cfg, self.beta)?;
                let pn = clip_norm(&mut lo.policy_grad, cfg.max_grad_norm);
                let vn = clip_norm(&mut lo.value_grad, cfg.max_grad_norm);
                grad_norm_sum += (pn * pn + vn * vn).sqrt();
                updates += 1;
                self.policy_opt.step(self.model.policy_params_mut(), &lo.policy_grad)?;
                self.value_opt.step(self.model.value_params_mut(), &lo.value_grad)?;
                let w = chunk.len() as f64;
                es += lo.surrogate * w;
                ev += lo.value_loss * w;
                ee += lo.entropy * w;
                n += chunk.len();
            }
            if epoch + 1 == cfg.epochs && n > 0 {
                surr = es / n as f64;
                vloss = ev / n as f64;
                ent = ee / n as f64;
            }
        }

        let measured_kl = if samples.is_empty() {
            0.0
        } else {
            let mut total = 0.0;
            for s in &samples {
                let padded;
                let (obs, graph, old) = match cfg.pad_size {
                    Some(pad) => {
                        padded = pad_step(s.step, pad, s.index)?;
                        (&padded.obs, &padded.graph, &padded.old)
                    }
                    None => (&s.step.obs, &s.step.graph, &s.step.old),
                };
                let (pi, _) = self.model.policy_forward(obs, graph)?;
                total += kl(old, &pi)?;
            }
            total / samples.len() as f64
        };
        if cfg.kl_coef > 0.0 {
            self.beta = update_beta(measured_kl, cfg.kl_target, self.beta);
        }

        let episodes = trajs.len();
        let speeds: Vec<f64> = trajs.iter().filter_map(|t| t.mean_speed).collect();
        let stats = IterationStats {
            iteration: self.iteration,
            mean_episode_reward: trajs.iter().map(|t| t.episode_reward).sum::<f64>() / episodes as f64,
            mean_system_speed: (!speeds.is_empty()).then(|| speeds.iter().sum::<f64>() / speeds.len() as f64),
            surrogate_loss: surr,
            value_loss: vloss,
            entropy: ent,
            kl: measured_kl,
            beta: self.beta,
            grad_norm: if updates > 0 { grad_norm_sum / updates as f64 } else { 0.0 },
            timesteps: samples.len(),
            episodes,
        };
        self.iteration += 1;
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surrogate_hand_cases() {
        assert_eq!(clipped_surrogate(1.0, 2.0, 0.2), 2.0);
        assert!((clipped_surrogate(2.0, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
    }

    #[test]
    fn surrogate_is_unclipped_inside_the_band() {
        for &r in &[0.8, 0.95, 1.0, 1.1, 1.2] {
            for &a in &[-3.0, -0.5, 0.7, 2.0] {
                assert_eq!(clipped_surrogate(r, a, 0.2), r * a);
            }
        }
    }

    #[test]
    fn clip_kills_gradient_outside_band() {
        assert_eq!(surrogate_dlogratio(1.5, 1.0, Some(0.2)), 0.0);
        assert_eq!(surrogate_dlogratio(0.5, -1.0, Some(0.2)), 0.0);
        assert_eq!(surrogate_dlogratio(1.5, -1.0, Some(0.2)), -1.5);
    }

    #[test]
    fn beta_rule() {
        assert_eq!(update_beta(0.01, 0.01, 1.0), 1.0);
        assert_eq!(update_beta(0.1, 0.01, 1.0), 2.0);
        assert_eq!(update_beta(0.001, 0.01, 1.0), 0.5);
        let mut b = 1.0;
        for _ in 0..100 {
            b = update_beta(1.0, 0.01, b);
            assert!(b.is_finite());
        }
        assert_eq!(b, BETA_MAX);
        let mut b = 1.0;
        for _ in 0..100 {
            b = update_beta(0.0, 0.01, b);
        }
        assert_eq!(b, BETA_MIN);
    }

    #[test]
    fn config_validation() {
        assert!(PpoConfig::default().validate().is_ok());
        let no_trust = PpoConfig {
            clip: None,
            kl_coef: 0.0,
            ..Default::default()
        };
        assert!(no_trust.validate().is_err());
        let zero_epochs = PpoConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(zero_epochs.validate().is_err());
    }
}
