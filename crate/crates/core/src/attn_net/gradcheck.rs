//! Central finite-difference verification of analytic gradients.

use crate::attn_net::{
    log_prob, log_prob_grad, policy_backward, policy_fwd, value_backward, value_fwd, ArchConfig,
    NetKind, ParamSet,
};
use crate::error::{Error, Result};
use crate::graph::{AgentGraph, Edge, ObservationBatch};
use crate::numerics::{Matrix, Rng};
use crate::params::TensorSpec;

/// A scalar function of a flat parameter vector with an analytic gradient.
pub trait Objective {
    fn tensors(&self) -> Vec<TensorSpec>;
    fn loss(&self, params: &[f64]) -> Result<f64>;
    fn loss_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tol: f64,
    /// Lower bound on the denominator of the relative error, so that
    /// coordinates whose true gradient is ~0 are judged on absolute error.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorReport {
    pub name: String,
    pub len: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Offset within the tensor of the worst coordinate.
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tol: f64,
    pub tensors: Vec<TensorReport>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_err < self.tol)
    }

    /// Error naming the worst tensor if any exceeds the tolerance.
    pub fn ensure(&self) -> Result<()> {
        match self
            .tensors
            .iter()
            .filter(|t| t.max_rel_err >= self.tol)
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        {
            Some(t) => Err(Error::GradCheck {
                tensor: t.name.clone(),
                rel_err: t.max_rel_err,
                tol: self.tol,
            }),
            None => Ok(()),
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// Compares every coordinate of the analytic gradient with a central
/// difference of step `cfg.step`.
pub fn grad_check(
    obj: &dyn Objective,
    params: &[f64],
    cfg: GradCheckConfig,
) -> Result<GradCheckReport> {
    let (_, analytic) = obj.loss_and_grad(params)?;
    if analytic.len() != params.len() {
        return Err(Error::shape("objective returned a gradient of the wrong length"));
    }
    let mut theta = params.to_vec();
    let mut tensors = Vec::new();
    for spec in obj.tensors() {
        let mut report = TensorReport {
            name: spec.name.clone(),
            len: spec.len(),
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            worst_index: 0,
        };
        for (local, idx) in spec.range().enumerate() {
            let orig = theta[idx];
            theta[idx] = orig + cfg.step;
            let up = obj.loss(&theta)?;
            theta[idx] = orig - cfg.step;
            let down = obj.loss(&theta)?;
            theta[idx] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            let rel = relative_error(analytic[idx], numeric, cfg.floor);
            report.max_abs_err = report.max_abs_err.max((analytic[idx] - numeric).abs());
            if rel > report.max_rel_err || rel.is_nan() {
                report.max_rel_err = if rel.is_nan() { f64::INFINITY } else { rel };
                report.worst_index = local;
            }
        }
        tensors.push(report);
    }
    Ok(GradCheckReport {
        tol: cfg.tol,
        tensors,
    })
}

/// A random observation batch, graph and loss weights for probing a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub obs: ObservationBatch,
    pub graph: AgentGraph,
    pub actions: Matrix,
    pub mean_weights: Matrix,
    pub log_var_weights: Matrix,
    pub value_target: f64,
}

impl Probe {
    /// Random graph in which every self-edge exists and each other edge is
    /// present with probability `density`.
    pub fn random(arch: &ArchConfig, agents: usize, density: f64, rng: &mut Rng) -> Result<Self> {
        let obs = Matrix::from_vec(
            agents,
            arch.obs_dim,
            (0..agents * arch.obs_dim).map(|_| rng.normal()).collect(),
        )?;
        let graph = random_graph(agents, arch.classes, density, rng)?;
        let d = arch.act_dim;
        let rand_mat = |rng: &mut Rng| {
            Matrix::from_vec(agents, d, (0..agents * d).map(|_| rng.normal()).collect())
        };
        Ok(Self {
            obs: ObservationBatch::new(obs),
            graph,
            actions: rand_mat(rng)?,
            mean_weights: rand_mat(rng)?,
            log_var_weights: rand_mat(rng)?,
            value_target: rng.normal(),
        })
    }
}

pub fn random_graph(agents: usize, classes: usize, density: f64, rng: &mut Rng) -> Result<AgentGraph> {
    let mut edges = Vec::new();
    for i in 0..agents {
        for j in 0..agents {
            if i == j || rng.bernoulli(density) {
                let class = (rng.next_u64() % classes as u64) as usize;
                edges.push(Edge { src: i, dst: j, class });
            }
        }
    }
    AgentGraph::new((0..agents as u64).collect(), edges, classes)
}

/// Fills every tensor (including the zero-initialised biases) with random
/// values so that no gradient path is trivially dead.
pub fn randomize(p: &mut ParamSet, scale: f64, rng: &mut Rng) {
    for v in p.flat_mut() {
        *v = scale * rng.normal();
    }
    for name in ["ln1_gain", "ln2_gain"] {
        for v in p.tensor_mut(name).expect("gain tensor") {
            *v = 1.0 + 0.2 * rng.normal();
        }
    }
}

/// `log π(a) + Σ w_μ·μ + Σ w_lv·log σ²` for the policy network.
pub struct PolicyObjective<'a> {
    pub template: &'a ParamSet,
    pub probe: &'a Probe,
}

impl PolicyObjective<'_> {
    fn params(&self, flat: &[f64]) -> Result<ParamSet> {
        ParamSet::from_flat(*self.template.arch(), NetKind::Policy, flat.to_vec())
    }
}

impl Objective for PolicyObjective<'_> {
    fn tensors(&self) -> Vec<TensorSpec> {
        self.template.specs().to_vec()
    }

    fn loss(&self, flat: &[f64]) -> Result<f64> {
        let p = self.params(flat)?;
        let (out, _) = policy_fwd(&p, &self.probe.obs, &self.probe.graph)?;
        let lin: f64 = out
            .means
            .data()
            .iter()
            .zip(self.probe.mean_weights.data())
            .chain(out.log_vars.data().iter().zip(self.probe.log_var_weights.data()))
            .map(|(a, b)| a * b)
            .sum();
        Ok(log_prob(&out, &self.probe.actions)? + lin)
    }

    fn loss_and_grad(&self, flat: &[f64]) -> Result<(f64, Vec<f64>)> {
        let p = self.params(flat)?;
        let loss = self.loss(flat)?;
        let (out, cache) = policy_fwd(&p, &self.probe.obs, &self.probe.graph)?;
        let (mut dm, mut dlv) = log_prob_grad(&out, &self.probe.actions)?;
        for (d, w) in dm.data_mut().iter_mut().zip(self.probe.mean_weights.data()) {
            *d += w;
        }
        for (d, w) in dlv.data_mut().iter_mut().zip(self.probe.log_var_weights.data()) {
            *d += w;
        }
        let mut grad = vec![0.0; p.len()];
        policy_backward(&p, &cache, &dm, &dlv, &mut grad, None)?;
        Ok((loss, grad))
    }
}

/// `½ (V − target)²` for the value network.
pub struct ValueObjective<'a> {
    pub template: &'a ParamSet,
    pub probe: &'a Probe,
}

impl Objective for ValueObjective<'_> {
    fn tensors(&self) -> Vec<TensorSpec> {
        self.template.specs().to_vec()
    }

    fn loss(&self, flat: &[f64]) -> Result<f64> {
        let p = ParamSet::from_flat(*self.template.arch(), NetKind::Value, flat.to_vec())?;
        let (v, _) = value_fwd(&p, &self.probe.obs, &self.probe.graph)?;
        Ok(0.5 * (v - self.probe.value_target).powi(2))
    }

    fn loss_and_grad(&self, flat: &[f64]) -> Result<(f64, Vec<f64>)> {
        let p = ParamSet::from_flat(*self.template.arch(), NetKind::Value, flat.to_vec())?;
        let (v, cache) = value_fwd(&p, &self.probe.obs, &self.probe.graph)?;
        let mut grad = vec![0.0; p.len()];
        value_backward(&p, &cache, v - self.probe.value_target, &mut grad, None)?;
        Ok((0.5 * (v - self.probe.value_target).powi(2), grad))
    }
}
