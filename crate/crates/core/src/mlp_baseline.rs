//! Fixed-capacity centralised MLP controller over a packed global observation.
//!
//! The first `N` valid agents (in row order, which the simulator keeps
//! upstream-first) are concatenated into one vector; missing slots are
//! zero. Agents beyond the capacity are left to the car-following model.

use serde::{Deserialize, Serialize};

use crate::attn_net::gradcheck::{Objective, Probe};
use crate::attn_net::{log_prob, log_prob_grad, GaussianPolicyOut, NetKind, LOG_VAR_MAX, LOG_VAR_MIN};
use crate::error::{Error, Result};
use crate::graph::ObservationBatch;
use crate::numerics::{axpy, dot, outer_acc, vec_mat, vec_mat_t_acc, Matrix, Rng};
use crate::params::{fill, output_init, tensor_matrix, Init, LayoutBuilder, TensorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    pub obs_dim: usize,
    pub capacity: usize,
    pub hidden: usize,
    pub act_dim: usize,
}

impl MlpArch {
    pub fn standard(obs_dim: usize, capacity: usize, act_dim: usize) -> Self {
        Self {
            obs_dim,
            capacity,
            hidden: 64,
            act_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("obs_dim", self.obs_dim),
            ("capacity", self.capacity),
            ("hidden", self.hidden),
            ("act_dim", self.act_dim),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.capacity * self.obs_dim
    }

    fn out_dim(&self, kind: NetKind) -> usize {
        match kind {
            NetKind::Policy => 2 * self.capacity * self.act_dim,
            NetKind::Value => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w_out: usize,
    b_out: usize,
}

fn layout(arch: &MlpArch, kind: NetKind) -> (Vec<TensorSpec>, usize, Offsets, Vec<Init>) {
    let (inp, hid, out) = (arch.input_dim(), arch.hidden, arch.out_dim(kind));
    let mut b = LayoutBuilder::default();
    let mut inits = Vec::new();
    let mut push = |name: &str, rows, cols, init| {
        inits.push(init);
        b.push(name, rows, cols)
    };
    let off = Offsets {
        w1: push("w1", inp, hid, Init::FanIn(inp)),
        b1: push("b1", 1, hid, Init::Zeros),
        w2: push("w2", hid, hid, Init::FanIn(hid)),
        b2: push("b2", 1, hid, Init::Zeros),
        w_out: push("w_out", hid, out, output_init(kind, hid)),
        b_out: push("b_out", 1, out, Init::Zeros),
    };
    let (specs, total) = b.finish();
    (specs, total, off, inits)
}

/// Output slot `s` of the policy network holds `[mean (d), log-variance (d)]`
/// at columns `2·d·s..2·d·(s+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    arch: MlpArch,
    kind: NetKind,
    specs: Vec<TensorSpec>,
    off: Offsets,
    values: Vec<f64>,
}

impl MlpParams {
    pub fn init(arch: MlpArch, kind: NetKind, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(arch, kind)?;
        let (_, _, _, inits) = layout(&arch, kind);
        for (spec, init) in p.specs.clone().iter().zip(inits) {
            fill(&mut p.values[spec.range()], init, rng);
        }
        Ok(p)
    }

    pub fn zeros(arch: MlpArch, kind: NetKind) -> Result<Self> {
        arch.validate()?;
        let (specs, total, off, _) = layout(&arch, kind);
        Ok(Self {
            arch,
            kind,
            specs,
            off,
            values: vec![0.0; total],
        })
    }

    pub fn from_flat(arch: MlpArch, kind: NetKind, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(arch, kind)?;
        if values.len() != p.values.len() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                p.values.len(),
                values.len()
            )));
        }
        p.values = values;
        Ok(p)
    }

    pub fn arch(&self) -> &MlpArch {
        &self.arch
    }

    pub fn kind(&self) -> NetKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn flat(&self) -> &[f64] {
        &self.values
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn tensor(&self, name: &str) -> Option<Matrix> {
        tensor_matrix(&self.specs, &self.values, name)
    }
}

/// Packs the first `capacity` valid rows; returns the vector and how many
/// agents made it in.
pub fn pack_global_obs(obs: &ObservationBatch, capacity: usize) -> (Vec<f64>, usize) {
    let n = obs.obs_dim();
    let mut packed = vec![0.0; capacity * n];
    let mut used = 0;
    for i in (0..obs.rows()).filter(|&i| obs.valid()[i]) {
        if used == capacity {
            break;
        }
        packed[used * n..(used + 1) * n].copy_from_slice(obs.obs().row(i));
        used += 1;
    }
    (packed, used)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpCache {
    pub input: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub raw: Vec<f64>,
    pub used: usize,
}

fn mlp_trunk(p: &MlpParams, input: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (inp, hid) = (p.arch.input_dim(), p.arch.hidden);
    let out = p.arch.out_dim(p.kind);
    let w = &p.values;
    let o = p.off;
    let mut a1 = vec![0.0; hid];
    vec_mat(input, &w[o.w1..][..inp * hid], hid, &mut a1);
    axpy(1.0, &w[o.b1..][..hid], &mut a1);
    a1.iter_mut().for_each(|v| *v = v.tanh());
    let mut a2 = vec![0.0; hid];
    vec_mat(&a1, &w[o.w2..][..hid * hid], hid, &mut a2);
    axpy(1.0, &w[o.b2..][..hid], &mut a2);
    a2.iter_mut().for_each(|v| *v = v.tanh());
    let mut raw = vec![0.0; out];
    vec_mat(&a2, &w[o.w_out..][..hid * out], out, &mut raw);
    axpy(1.0, &w[o.b_out..][..out], &mut raw);
    (a1, a2, raw)
}

fn check_input(p: &MlpParams, packed: &[f64], kind: NetKind) -> Result<()> {
    if p.kind != kind {
        return Err(Error::shape(format!("expected {kind:?} parameters, got {:?}", p.kind)));
    }
    if packed.len() != p.arch.input_dim() {
        return Err(Error::shape(format!(
            "packed observation has {} entries, network expects {}",
            packed.len(),
            p.arch.input_dim()
        )));
    }
    Ok(())
}

/// Policy over the `capacity` slots; slots at or beyond `used` are marked
/// invalid because their actions are discarded.
pub fn mlp_policy_fwd(
    p: &MlpParams,
    packed: &[f64],
    used: usize,
) -> Result<(GaussianPolicyOut, MlpCache)> {
    check_input(p, packed, NetKind::Policy)?;
    let (cap, d) = (p.arch.capacity, p.arch.act_dim);
    let (a1, a2, raw) = mlp_trunk(p, packed);
    let mut means = Matrix::zeros(cap, d);
    let mut log_vars = Matrix::zeros(cap, d);
    for s in 0..cap {
        let slot = &raw[2 * d * s..2 * d * (s + 1)];
        means.row_mut(s).copy_from_slice(&slot[..d]);
        for (lv, &r) in log_vars.row_mut(s).iter_mut().zip(&slot[d..]) {
            *lv = r.clamp(LOG_VAR_MIN, LOG_VAR_MAX);
        }
    }
    let valid = (0..cap).map(|s| s < used).collect();
    let out = GaussianPolicyOut::new(means, log_vars, valid)?;
    Ok((
        out,
        MlpCache {
            input: packed.to_vec(),
            a1,
            a2,
            raw,
            used,
        },
    ))
}

pub fn mlp_value_fwd(p: &MlpParams, packed: &[f64]) -> Result<(f64, MlpCache)> {
    check_input(p, packed, NetKind::Value)?;
    let (a1, a2, raw) = mlp_trunk(p, packed);
    Ok((
        raw[0],
        MlpCache {
            input: packed.to_vec(),
            a1,
            a2,
            raw,
            used: 0,
        },
    ))
}

fn mlp_backward_raw(p: &MlpParams, cache: &MlpCache, draw: &[f64], grad: &mut [f64]) -> Result<()> {
    if grad.len() != p.len() {
        return Err(Error::shape("gradient buffer length differs from parameter count"));
    }
    let (inp, hid) = (p.arch.input_dim(), p.arch.hidden);
    let out = p.arch.out_dim(p.kind);
    if draw.len() != out || cache.raw.len() != out || cache.input.len() != inp {
        return Err(Error::shape("cache does not match this network"));
    }
    let w = &p.values;
    let o = p.off;
    outer_acc(&cache.a2, draw, &mut grad[o.w_out..][..hid * out]);
    axpy(1.0, draw, &mut grad[o.b_out..][..out]);
    let mut dz2 = vec![0.0; hid];
    vec_mat_t_acc(draw, &w[o.w_out..][..hid * out], &mut dz2);
    for (d, a) in dz2.iter_mut().zip(&cache.a2) {
        *d *= 1.0 - a * a;
    }
    outer_acc(&cache.a1, &dz2, &mut grad[o.w2..][..hid * hid]);
    axpy(1.0, &dz2, &mut grad[o.b2..][..hid]);
    let mut dz1 = vec![0.0; hid];
    vec_mat_t_acc(&dz2, &w[o.w2..][..hid * hid], &mut dz1);
    for (d, a) in dz1.iter_mut().zip(&cache.a1) {
        *d *= 1.0 - a * a;
    }
    outer_acc(&cache.input, &dz1, &mut grad[o.w1..][..inp * hid]);
    axpy(1.0, &dz1, &mut grad[o.b1..][..hid]);
    Ok(())
}

/// Accumulates the gradient for upstream partials on the slot outputs.
pub fn mlp_policy_backward(
    p: &MlpParams,
    cache: &MlpCache,
    d_means: &Matrix,
    d_log_vars: &Matrix,
    grad: &mut [f64],
) -> Result<()> {
    let (cap, d) = (p.arch.capacity, p.arch.act_dim);
    if d_means.shape() != (cap, d) || d_log_vars.shape() != (cap, d) {
        return Err(Error::shape("upstream gradient does not cover every slot"));
    }
    let mut draw = vec![0.0; 2 * cap * d];
    for s in 0..cache.used.min(cap) {
        for k in 0..d {
            draw[2 * d * s + k] = d_means.get(s, k);
            let r = cache.raw[2 * d * s + d + k];
            if (LOG_VAR_MIN..=LOG_VAR_MAX).contains(&r) {
                draw[2 * d * s + d + k] = d_log_vars.get(s, k);
            }
        }
    }
    mlp_backward_raw(p, cache, &draw, grad)
}

pub fn mlp_value_backward(p: &MlpParams, cache: &MlpCache, d_value: f64, grad: &mut [f64]) -> Result<()> {
    mlp_backward_raw(p, cache, &[d_value], grad)
}

/// Log-density plus a random linear functional of the slot outputs.
pub struct MlpPolicyObjective<'a> {
    pub template: &'a MlpParams,
    pub probe: &'a Probe,
}

impl MlpPolicyObjective<'_> {
    fn eval(&self, flat: &[f64], want_grad: bool) -> Result<(f64, Vec<f64>)> {
        let p = MlpParams::from_flat(self.template.arch, NetKind::Policy, flat.to_vec())?;
        let (packed, used) = pack_global_obs(&self.probe.obs, p.arch.capacity);
        let (out, cache) = mlp_policy_fwd(&p, &packed, used)?;
        let actions = slot_matrix(&self.probe.actions, p.arch.capacity);
        let wm = slot_matrix(&self.probe.mean_weights, p.arch.capacity);
        let wl = slot_matrix(&self.probe.log_var_weights, p.arch.capacity);
        let loss = log_prob(&out, &actions)? + dot(out.means.data(), wm.data()) + dot(out.log_vars.data(), wl.data());
        let mut grad = vec![0.0; p.len()];
        if want_grad {
            let (mut dm, mut dlv) = log_prob_grad(&out, &actions)?;
            axpy(1.0, wm.data(), dm.data_mut());
            axpy(1.0, wl.data(), dlv.data_mut());
            mlp_policy_backward(&p, &cache, &dm, &dlv, &mut grad)?;
        }
        Ok((loss, grad))
    }
}

fn slot_matrix(m: &Matrix, capacity: usize) -> Matrix {
    let mut out = Matrix::zeros(capacity, m.cols());
    for s in 0..capacity.min(m.rows()) {
        out.row_mut(s).copy_from_slice(m.row(s));
    }
    out
}

impl Objective for MlpPolicyObjective<'_> {
    fn tensors(&self) -> Vec<TensorSpec> {
        self.template.specs.clone()
    }

    fn loss(&self, flat: &[f64]) -> Result<f64> {
        Ok(self.eval(flat, false)?.0)
    }

    fn loss_and_grad(&self, flat: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.eval(flat, true)
    }
}

pub struct MlpValueObjective<'a> {
    pub template: &'a MlpParams,
    pub probe: &'a Probe,
}

impl Objective for MlpValueObjective<'_> {
    fn tensors(&self) -> Vec<TensorSpec> {
        self.template.specs.clone()
    }

    fn loss(&self, flat: &[f64]) -> Result<f64> {
        Ok(self.loss_and_grad(flat)?.0)
    }

    fn loss_and_grad(&self, flat: &[f64]) -> Result<(f64, Vec<f64>)> {
        let p = MlpParams::from_flat(self.template.arch, NetKind::Value, flat.to_vec())?;
        let (packed, _) = pack_global_obs(&self.probe.obs, p.arch.capacity);
        let (v, cache) = mlp_value_fwd(&p, &packed)?;
        let mut grad = vec![0.0; p.len()];
        mlp_value_backward(&p, &cache, v - self.probe.value_target, &mut grad)?;
        Ok((0.5 * (v - self.probe.value_target).powi(2), grad))
    }
}
