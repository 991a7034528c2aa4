#[path = "common/oracles.rs"]
mod oracles;

use attn_marl_core::attn_net::gradcheck::{random_graph, randomize, relative_error};
use attn_marl_core::attn_net::{log_prob, sample_actions, GaussianPolicyOut, NetKind};
use attn_marl_core::bandit::QuadraticBandit;
use attn_marl_core::model::{ActorCritic, AttnActorCritic};
use attn_marl_core::ppo::{clipped_surrogate, pad_batch, ppo_loss, update_beta, PpoConfig, Sample};
use attn_marl_core::rollout::{collect, compute_gae, normalize_advantages, ActionMode};
use attn_marl_core::{
    Error, Matrix, MultiAgentEnv, Observation, ObservationBatch, Rng, StepOutcome, StepRecord,
};
use oracles::*;

fn model(classes: usize, rng: &mut Rng) -> AttnActorCritic {
    let mut m = AttnActorCritic::init(small_arch(2, classes), rng).unwrap();
    randomize(&mut m.policy, 0.3, rng);
    randomize(&mut m.value, 0.3, rng);
    m
}

fn nudge(m: &AttnActorCritic, scale: f64, rng: &mut Rng) -> AttnActorCritic {
    let mut out = m.clone();
    out.policy_params_mut().iter_mut().for_each(|v| *v += scale * rng.normal());
    out
}

fn record(old: &AttnActorCritic, agents: usize, rng: &mut Rng) -> StepRecord {
    let graph = random_graph(agents, 3, 0.5, rng).unwrap();
    let obs = ObservationBatch::new(random_matrix(agents, 5, rng));
    let (pi, _) = old.policy_forward(&obs, &graph).unwrap();
    let (v, _) = old.value_forward(&obs, &graph).unwrap();
    let actions = sample_actions(&pi, rng);
    StepRecord {
        log_prob_old: log_prob(&pi, &actions).unwrap(),
        obs,
        graph,
        actions,
        reward: rng.normal(),
        value_old: v,
        old: pi,
        done: false,
    }
}

fn samples<'a>(steps: &'a [StepRecord], rng: &mut Rng) -> Vec<Sample<'a>> {
    steps
        .iter()
        .enumerate()
        .map(|(index, step)| Sample {
            step,
            advantage: rng.normal(),
            ret: rng.normal(),
            index,
        })
        .collect()
}

#[test]
fn gae_matches_explicit_double_sum() {
    let mut rng = Rng::new(1);
    for _ in 0..100 {
        let r: Vec<f64> = (0..50).map(|_| rng.normal()).collect();
        let v: Vec<f64> = (0..50).map(|_| rng.normal()).collect();
        let boot = rng.normal();
        let gamma = rng.uniform_in(0.5, 1.0);
        let lambda = rng.uniform_in(0.0, 1.0);
        let (adv, ret) = compute_gae(&r, &v, boot, gamma, lambda).unwrap();
        let oracle = gae_double_sum(&r, &v, boot, gamma, lambda);
        for t in 0..50 {
            assert!((adv[t] - oracle[t]).abs() < 1e-10);
            assert!((ret[t] - adv[t] - v[t]).abs() < 1e-12);
        }
    }
}

#[test]
fn gae_lambda_extremes() {
    let mut rng = Rng::new(2);
    let r: Vec<f64> = (0..20).map(|_| rng.normal()).collect();
    let v: Vec<f64> = (0..20).map(|_| rng.normal()).collect();
    let boot = 0.7;
    let gamma = 0.95;
    let (td, _) = compute_gae(&r, &v, boot, gamma, 0.0).unwrap();
    let (mc, _) = compute_gae(&r, &v, boot, gamma, 1.0).unwrap();
    for t in 0..20 {
        let next = if t + 1 < 20 { v[t + 1] } else { boot };
        assert!((td[t] - (r[t] + gamma * next - v[t])).abs() < 1e-12);
        let g: f64 = (t..20).map(|l| gamma.powi((l - t) as i32) * r[l]).sum::<f64>()
            + gamma.powi((20 - t) as i32) * boot;
        assert!((mc[t] - (g - v[t])).abs() < 1e-10);
    }
}

#[test]
fn normalised_advantages_are_standardised() {
    let z = normalize_advantages(&[1.0, 2.0, 3.0, 4.0]);
    let sd = 1.25f64.sqrt();
    for (a, e) in z.iter().zip([-1.5, -0.5, 0.5, 1.5]) {
        assert!((a - e / sd).abs() < 1e-12);
    }
    assert_eq!(normalize_advantages(&[4.0]), vec![4.0]);
}

#[test]
fn surrogate_and_beta_rules() {
    assert_eq!(clipped_surrogate(1.5, 2.0, 0.2), 2.4);
    assert_eq!(clipped_surrogate(1.5, -2.0, 0.2), -3.0);
    assert_eq!(clipped_surrogate(0.5, 2.0, 0.2), 1.0);
    assert_eq!(clipped_surrogate(0.5, -2.0, 0.2), -1.6);
    assert_eq!(update_beta(0.02, 0.01, 1.0), 2.0);
    assert_eq!(update_beta(0.001, 0.01, 1.0), 0.5);
    assert_eq!(update_beta(0.01, 0.01, 1.0), 1.0);
    assert_eq!(update_beta(1.0, 0.01, 100.0), 100.0);
    assert_eq!(update_beta(0.0, 0.01, 1e-6), 1e-6);
}

#[test]
fn on_policy_batch_has_unit_ratio_and_zero_kl() {
    let mut rng = Rng::new(3);
    let m = model(3, &mut rng);
    let steps: Vec<StepRecord> = (0..4).map(|_| record(&m, 4, &mut rng)).collect();
    let batch = samples(&steps, &mut rng);
    let cfg = PpoConfig::default();
    let out = ppo_loss(&m, &batch, &cfg, 1.0).unwrap();
    assert_eq!(out.kl, 0.0);
    assert_eq!(out.clip_fraction, 0.0);
    let mean_adv: f64 = batch.iter().map(|s| s.advantage).sum::<f64>() / 4.0;
    assert!((out.surrogate - mean_adv).abs() < 1e-12);
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let mut rng = Rng::new(4);
    let old = model(3, &mut rng);
    let steps: Vec<StepRecord> = (0..3).map(|t| record(&old, 2 + t, &mut rng)).collect();
    let batch = samples(&steps, &mut rng);
    let current = nudge(&old, 0.002, &mut rng);
    for clip in [None, Some(0.3)] {
        let cfg = PpoConfig {
            clip,
            entropy_coef: 0.05,
            ..Default::default()
        };
        let beta = 0.7;
        let out = ppo_loss(&current, &batch, &cfg, beta).unwrap();
        assert_eq!(out.clip_fraction, 0.0, "ratios should sit inside the clip range");
        let h = 1e-5;
        let loss_at = |m: &AttnActorCritic| ppo_loss(m, &batch, &cfg, beta).unwrap().loss;
        for k in 0..current.policy_params().len() {
            let mut up = current.clone();
            up.policy_params_mut()[k] += h;
            let mut down = current.clone();
            down.policy_params_mut()[k] -= h;
            let fd = (loss_at(&up) - loss_at(&down)) / (2.0 * h);
            let rel = relative_error(out.policy_grad[k], fd, 1e-6);
            assert!(rel < 1e-4, "policy[{k}] analytic {} fd {fd}", out.policy_grad[k]);
        }
        for k in 0..current.value_params().len() {
            let mut up = current.clone();
            up.value_params_mut()[k] += h;
            let mut down = current.clone();
            down.value_params_mut()[k] -= h;
            let fd = (loss_at(&up) - loss_at(&down)) / (2.0 * h);
            let rel = relative_error(out.value_grad[k], fd, 1e-6);
            assert!(rel < 1e-4, "value[{k}] analytic {} fd {fd}", out.value_grad[k]);
        }
    }
}

#[test]
fn clipped_samples_contribute_no_policy_gradient() {
    let mut rng = Rng::new(5);
    let old = model(3, &mut rng);
    let steps = [record(&old, 3, &mut rng)];
    let current = nudge(&old, 0.5, &mut rng);
    let (pi, _) = current.policy_forward(&steps[0].obs, &steps[0].graph).unwrap();
    let ratio = (log_prob(&pi, &steps[0].actions).unwrap() - steps[0].log_prob_old).exp();
    assert!((ratio - 1.0).abs() > 0.3);
    let advantage = if ratio > 1.0 { 1.0 } else { -1.0 };
    let batch = [Sample {
        step: &steps[0],
        advantage,
        ret: 0.0,
        index: 0,
    }];
    let cfg = PpoConfig {
        clip: Some(0.3),
        ..Default::default()
    };
    let out = ppo_loss(&current, &batch, &cfg, 0.0).unwrap();
    assert!(out.policy_grad.iter().all(|&g| g == 0.0));
    assert_eq!(out.clip_fraction, 1.0);
}

#[test]
fn padded_and_unpadded_losses_agree() {
    let mut rng = Rng::new(6);
    let old = model(3, &mut rng);
    let steps: Vec<StepRecord> = (0..5).map(|t| record(&old, 1 + 3 * t, &mut rng)).collect();
    let batch = samples(&steps, &mut rng);
    let current = nudge(&old, 0.01, &mut rng);
    let plain = PpoConfig::default();
    let padded = PpoConfig {
        pad_size: Some(17),
        ..Default::default()
    };
    let a = ppo_loss(&current, &batch, &plain, 0.5).unwrap();
    let b = ppo_loss(&current, &batch, &padded, 0.5).unwrap();
    assert!((a.loss - b.loss).abs() < 1e-12);
    for (x, y) in a.policy_grad.iter().zip(&b.policy_grad) {
        assert!((x - y).abs() < 1e-12);
    }
    for (x, y) in a.value_grad.iter().zip(&b.value_grad) {
        assert!((x - y).abs() < 1e-12);
    }

    let refs: Vec<&StepRecord> = steps.iter().collect();
    assert!(matches!(
        pad_batch(&refs, 8),
        Err(Error::PadOverflow { pad: 8, agents: 10, timestep: 3 })
    ));
}

#[test]
fn empty_batch_is_rejected() {
    let mut rng = Rng::new(7);
    let m = model(3, &mut rng);
    assert!(matches!(
        ppo_loss(&m, &[], &PpoConfig::default(), 1.0),
        Err(Error::InsufficientSamples { .. })
    ));
}

/// Three agents on a line; the observation drifts with the chosen actions.
#[derive(Debug, Clone)]
struct Drift {
    state: Vec<f64>,
    t: usize,
    horizon: usize,
}

impl MultiAgentEnv for Drift {
    fn obs_dim(&self) -> usize {
        5
    }
    fn act_dim(&self) -> usize {
        2
    }
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn reset(&mut self, mut rng: Rng) -> attn_marl_core::Result<()> {
        self.state = (0..3).map(|_| rng.normal()).collect();
        self.t = 0;
        Ok(())
    }
    fn observe(&mut self) -> attn_marl_core::Result<Observation> {
        let rows: Vec<[f64; 5]> = self.state.iter().map(|&s| [s, s * s, 1.0, 0.0, self.t as f64 * 0.1]).collect();
        Ok(Observation {
            obs: ObservationBatch::new(Matrix::from_rows(&rows)?),
            graph: attn_marl_core::AgentGraph::complete(vec![0, 1, 2], 3, |i, j| (i + j) % 3)?,
        })
    }
    fn step(&mut self, actions: &Matrix, _active: &[bool]) -> attn_marl_core::Result<StepOutcome> {
        let mut reward = 0.0;
        for i in 0..3 {
            self.state[i] += 0.1 * actions.get(i, 0);
            reward -= self.state[i] * self.state[i];
        }
        self.t += 1;
        Ok(StepOutcome {
            reward,
            done: self.t >= 100,
            mean_speed: None,
        })
    }
}

fn drift(horizon: usize) -> Drift {
    Drift {
        state: Vec::new(),
        t: 0,
        horizon,
    }
}

#[test]
fn horizon_one_bootstraps_from_next_state() {
    let mut rng = Rng::new(8);
    let m = model(3, &mut rng);
    let mut env = drift(1);
    let traj = collect(&mut env, &m, 1, ActionMode::Sample, &Rng::new(9)).unwrap();
    assert_eq!(traj.len(), 1);
    assert!(!traj.steps[0].done);
    let o = env.observe().unwrap();
    assert_eq!(traj.bootstrap, m.value_forward(&o.obs, &o.graph).unwrap().0);
}

#[test]
fn terminal_episode_has_zero_bootstrap() {
    let mut rng = Rng::new(10);
    let m = AttnActorCritic::init(attn_marl_core::ArchConfig::standard(1, 1, 1), &mut rng).unwrap();
    let mut env = QuadraticBandit::new(1);
    let traj = collect(&mut env, &m, 5, ActionMode::Sample, &Rng::new(1)).unwrap();
    assert_eq!(traj.len(), 1);
    assert!(traj.steps[0].done);
    assert_eq!(traj.bootstrap, 0.0);
}

#[test]
fn collection_is_reproducible_and_mean_mode_is_deterministic() {
    let mut rng = Rng::new(11);
    let m = model(3, &mut rng);
    let a = collect(&mut drift(10), &m, 10, ActionMode::Sample, &Rng::new(3)).unwrap();
    let b = collect(&mut drift(10), &m, 10, ActionMode::Sample, &Rng::new(3)).unwrap();
    assert_eq!(a.steps, b.steps);
    let c = collect(&mut drift(10), &m, 10, ActionMode::Mean, &Rng::new(3)).unwrap();
    let d = collect(&mut drift(10), &m, 10, ActionMode::Mean, &Rng::new(3)).unwrap();
    assert_eq!(c.steps, d.steps);
    for s in &c.steps {
        assert_eq!(s.actions, s.old.means);
    }
    assert_eq!(a.env_steps, 10);
}

#[test]
fn sampled_actions_follow_the_policy_moments() {
    let means = Matrix::from_rows(&[[0.5, -1.0]]).unwrap();
    let lvs = Matrix::from_rows(&[[0.0, (0.25f64).ln()]]).unwrap();
    let pi = GaussianPolicyOut::new(means, lvs, vec![true]).unwrap();
    let mut rng = Rng::new(12);
    let n = 100_000;
    let mut sum = [0.0; 2];
    let mut sq = [0.0; 2];
    for _ in 0..n {
        let a = sample_actions(&pi, &mut rng);
        for k in 0..2 {
            sum[k] += a.get(0, k);
            sq[k] += a.get(0, k) * a.get(0, k);
        }
    }
    let expect_mean = [0.5, -1.0];
    let expect_var = [1.0, 0.25];
    for k in 0..2 {
        let mean = sum[k] / n as f64;
        let var = sq[k] / n as f64 - mean * mean;
        assert!((mean - expect_mean[k]).abs() < 4.0 * (expect_var[k] / n as f64).sqrt());
        assert!((var - expect_var[k]).abs() < 0.02 * expect_var[k]);
    }
}

#[test]
fn value_kind_reports_scalar_output() {
    let arch = small_arch(1, 1);
    assert_eq!(NetKind::Value.out_dim(&arch), 1);
    assert_eq!(NetKind::Policy.out_dim(&arch), 4);
}
