use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 2.0;

fn ln_2pi() -> f64 {
    (2.0 * PI).ln()
}

/// Factorised diagonal Gaussian over every agent's action.
///
/// Rows with `valid[i] == false` are padding and are skipped by every
/// statistic below.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicyOut {
    pub means: Matrix,
    pub log_vars: Matrix,
    pub valid: Vec<bool>,
}

impl GaussianPolicyOut {
    pub fn new(means: Matrix, log_vars: Matrix, valid: Vec<bool>) -> Result<Self> {
        if means.shape() != log_vars.shape() || valid.len() != means.rows() {
            return Err(Error::shape("means, log-variances and mask disagree"));
        }
        Ok(Self {
            means,
            log_vars,
            valid,
        })
    }

    pub fn agents(&self) -> usize {
        self.means.rows()
    }

    pub fn act_dim(&self) -> usize {
        self.means.cols()
    }

    fn check_actions(&self, actions: &Matrix) -> Result<()> {
        if actions.shape() != self.means.shape() {
            return Err(Error::shape(format!(
                "actions are {}x{} but the policy covers {}x{}",
                actions.rows(),
                actions.cols(),
                self.agents(),
                self.act_dim()
            )));
        }
        Ok(())
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.means.shape() != other.means.shape() || self.valid != other.valid {
            return Err(Error::shape("policy outputs cover different agents"));
        }
        Ok(())
    }
}

fn agent_log_density(out: &GaussianPolicyOut, actions: &Matrix, i: usize) -> f64 {
    let mut total = 0.0;
    for k in 0..out.act_dim() {
        let lv = out.log_vars.get(i, k);
        let diff = actions.get(i, k) - out.means.get(i, k);
        total -= 0.5 * (diff * diff * (-lv).exp() + lv + ln_2pi());
    }
    total
}

/// Joint log-density: the sum of every valid agent's own log-density.
pub fn log_prob(out: &GaussianPolicyOut, actions: &Matrix) -> Result<f64> {
    out.check_actions(actions)?;
    Ok((0..out.agents())
        .filter(|&i| out.valid[i])
        .map(|i| agent_log_density(out, actions, i))
        .sum())
}

pub fn log_prob_agent(out: &GaussianPolicyOut, actions: &Matrix, i: usize) -> Result<f64> {
    out.check_actions(actions)?;
    if i >= out.agents() {
        return Err(Error::AgentIndex {
            index: i,
            len: out.agents(),
        });
    }
    Ok(agent_log_density(out, actions, i))
}

/// Gradient of [`log_prob`] with respect to `(means, log_vars)`.
pub fn log_prob_grad(out: &GaussianPolicyOut, actions: &Matrix) -> Result<(Matrix, Matrix)> {
    out.check_actions(actions)?;
    let (n, d) = out.means.shape();
    let mut dm = Matrix::zeros(n, d);
    let mut dlv = Matrix::zeros(n, d);
    for i in (0..n).filter(|&i| out.valid[i]) {
        for k in 0..d {
            let inv_var = (-out.log_vars.get(i, k)).exp();
            let diff = actions.get(i, k) - out.means.get(i, k);
            dm.set(i, k, diff * inv_var);
            dlv.set(i, k, 0.5 * (diff * diff * inv_var - 1.0));
        }
    }
    Ok((dm, dlv))
}

pub fn entropy(out: &GaussianPolicyOut) -> f64 {
    let mut total = 0.0;
    for i in (0..out.agents()).filter(|&i| out.valid[i]) {
        for &lv in out.log_vars.row(i) {
            total += 0.5 * (ln_2pi() + 1.0 + lv);
        }
    }
    total
}

/// Gradient of [`entropy`] with respect to the log-variances.
pub fn entropy_grad(out: &GaussianPolicyOut) -> Matrix {
    let (n, d) = out.log_vars.shape();
    let mut g = Matrix::zeros(n, d);
    for i in (0..n).filter(|&i| out.valid[i]) {
        g.row_mut(i).fill(0.5);
    }
    g
}

/// `KL(old || new)` summed over valid agents and action dimensions.
pub fn kl(old: &GaussianPolicyOut, new: &GaussianPolicyOut) -> Result<f64> {
    old.check_same(new)?;
    let mut total = 0.0;
    for i in (0..old.agents()).filter(|&i| old.valid[i]) {
        for k in 0..old.act_dim() {
            let (lv0, lv1) = (old.log_vars.get(i, k), new.log_vars.get(i, k));
            let diff = old.means.get(i, k) - new.means.get(i, k);
            total += 0.5 * (lv1 - lv0 + (lv0 - lv1).exp() + diff * diff * (-lv1).exp() - 1.0);
        }
    }
    Ok(total)
}

/// Gradient of [`kl`] with respect to the `new` distribution's parameters.
pub fn kl_grad(old: &GaussianPolicyOut, new: &GaussianPolicyOut) -> Result<(Matrix, Matrix)> {
    old.check_same(new)?;
    let (n, d) = new.means.shape();
    let mut dm = Matrix::zeros(n, d);
    let mut dlv = Matrix::zeros(n, d);
    for i in (0..n).filter(|&i| old.valid[i]) {
        for k in 0..d {
            let (lv0, lv1) = (old.log_vars.get(i, k), new.log_vars.get(i, k));
            let inv_var1 = (-lv1).exp();
            let diff = new.means.get(i, k) - old.means.get(i, k);
            dm.set(i, k, diff * inv_var1);
            dlv.set(i, k, 0.5 * (1.0 - (lv0 - lv1).exp() - diff * diff * inv_var1));
        }
    }
    Ok((dm, dlv))
}

/// One draw per valid agent; pad rows stay zero.
pub fn sample_actions(out: &GaussianPolicyOut, rng: &mut Rng) -> Matrix {
    let (n, d) = out.means.shape();
    let mut a = Matrix::zeros(n, d);
    for i in (0..n).filter(|&i| out.valid[i]) {
        for k in 0..d {
            let std = (0.5 * out.log_vars.get(i, k)).exp();
            a.set(i, k, out.means.get(i, k) + std * rng.normal());
        }
    }
    a
}
