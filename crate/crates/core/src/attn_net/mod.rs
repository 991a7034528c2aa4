//! Cross-context attentional policy and value networks.
//!
//! Each agent attends over its out-neighbours with one multi-head attention
//! layer whose keys and values carry a learned bias per edge class, followed
//! by ReLU, layer norm, a shared 64-unit layer, ReLU, layer norm and a linear
//! head. The policy head emits a mean and log-variance per action dimension
//! for every agent; the value head max-pools the trunk over valid agents.

mod dist;
mod forward;
pub mod gradcheck;

pub use dist::{
    entropy, entropy_grad, kl, kl_grad, log_prob, log_prob_agent, log_prob_grad, sample_actions,
    GaussianPolicyOut, LOG_VAR_MAX, LOG_VAR_MIN,
};
pub use forward::{
    attention_fwd, policy_backward, policy_fwd, value_backward, value_fwd, AttnCache,
    PolicyCache, TrunkCache, ValueCache,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};
use crate::params::{fill, output_init, tensor_matrix, Init, LayoutBuilder, TensorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub obs_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub classes: usize,
    pub hidden: usize,
    pub act_dim: usize,
}

impl ArchConfig {
    /// Four heads of 16 units and a 64-unit shared layer.
    pub fn standard(obs_dim: usize, classes: usize, act_dim: usize) -> Self {
        Self {
            obs_dim,
            heads: 4,
            head_dim: 16,
            classes,
            hidden: 64,
            act_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("obs_dim", self.obs_dim),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("classes", self.classes),
            ("hidden", self.hidden),
            ("act_dim", self.act_dim),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn attn_width(&self) -> usize {
        self.heads * self.head_dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    Policy,
    Value,
}

impl NetKind {
    pub fn out_dim(self, arch: &ArchConfig) -> usize {
        match self {
            NetKind::Policy => 2 * arch.act_dim,
            NetKind::Value => 1,
        }
    }
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Offsets {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub ak: usize,
    pub av: usize,
    pub ln1_gain: usize,
    pub ln1_offset: usize,
    pub trunk_w: usize,
    pub trunk_b: usize,
    pub ln2_gain: usize,
    pub ln2_offset: usize,
    pub head_w: usize,
    pub head_b: usize,
}

fn layout(arch: &ArchConfig, kind: NetKind) -> (Vec<TensorSpec>, usize, Offsets, Vec<Init>) {
    let (n, h, m, c) = (arch.obs_dim, arch.heads, arch.head_dim, arch.classes);
    let width = arch.attn_width();
    let out = kind.out_dim(arch);
    let mut b = LayoutBuilder::default();
    let mut inits = Vec::new();
    let mut push = |name: &str, rows, cols, init| {
        inits.push(init);
        b.push(name, rows, cols)
    };
    let off = Offsets {
        wq: push("w_q", h * n, m, Init::FanIn(n)),
        wk: push("w_k", h * n, m, Init::FanIn(n)),
        wv: push("w_v", h * n, m, Init::FanIn(n)),
        ak: push("a_k", h * c, m, Init::Zeros),
        av: push("a_v", h * c, m, Init::Zeros),
        ln1_gain: push("ln1_gain", 1, width, Init::Ones),
        ln1_offset: push("ln1_offset", 1, width, Init::Zeros),
        trunk_w: push("trunk_w", width, arch.hidden, Init::FanIn(width)),
        trunk_b: push("trunk_b", 1, arch.hidden, Init::Zeros),
        ln2_gain: push("ln2_gain", 1, arch.hidden, Init::Ones),
        ln2_offset: push("ln2_offset", 1, arch.hidden, Init::Zeros),
        head_w: push("head_w", arch.hidden, out, output_init(kind, arch.hidden)),
        head_b: push("head_b", 1, out, Init::Zeros),
    };
    let (specs, total) = b.finish();
    (specs, total, off, inits)
}

/// Every learned tensor of one attentional network in a single flat vector.
///
/// `w_q`, `w_k`, `w_v` stack the per-head `n×m` matrices vertically (head
/// `h` owns rows `h·n..(h+1)·n`); `a_k`, `a_v` hold one row per
/// `(head, class)` pair at row `h·C + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    arch: ArchConfig,
    kind: NetKind,
    specs: Vec<TensorSpec>,
    pub(crate) off: Offsets,
    values: Vec<f64>,
}

impl ParamSet {
    pub fn init(arch: ArchConfig, kind: NetKind, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let (specs, total, off, inits) = layout(&arch, kind);
        let mut values = vec![0.0; total];
        for (spec, init) in specs.iter().zip(inits) {
            fill(&mut values[spec.range()], init, rng);
        }
        Ok(Self {
            arch,
            kind,
            specs,
            off,
            values,
        })
    }

    pub fn zeros(arch: ArchConfig, kind: NetKind) -> Result<Self> {
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

    pub fn from_flat(arch: ArchConfig, kind: NetKind, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(arch, kind)?;
        p.set_flat(&values)?;
        Ok(p)
    }

    /// Parameter count, a function of the architecture alone.
    pub fn count(arch: &ArchConfig, kind: NetKind) -> usize {
        layout(arch, kind).1
    }

    pub fn arch(&self) -> &ArchConfig {
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

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.values.len(),
                values.len()
            )));
        }
        self.values.copy_from_slice(values);
        Ok(())
    }

    /// Copy of a named tensor as a matrix.
    pub fn tensor(&self, name: &str) -> Option<Matrix> {
        tensor_matrix(&self.specs, &self.values, name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let spec = self.specs.iter().find(|s| s.name == name)?;
        Some(&mut self.values[spec.range()])
    }

    pub fn set_tensor(&mut self, name: &str, m: &Matrix) -> Result<()> {
        let spec = self
            .specs
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::shape(format!("no tensor named `{name}`")))?;
        if (spec.rows, spec.cols) != m.shape() {
            return Err(Error::shape(format!(
                "tensor `{name}` is {}x{}, got {}x{}",
                spec.rows,
                spec.cols,
                m.rows(),
                m.cols()
            )));
        }
        let range = spec.range();
        self.values[range].copy_from_slice(m.data());
        Ok(())
    }

    /// Head `h`'s query projection.
    pub fn w_q(&self, h: usize) -> Matrix {
        self.head_block(self.off.wq, h)
    }

    pub fn w_k(&self, h: usize) -> Matrix {
        self.head_block(self.off.wk, h)
    }

    pub fn w_v(&self, h: usize) -> Matrix {
        self.head_block(self.off.wv, h)
    }

    /// Key bias for head `h` and edge class `c`.
    pub fn a_k(&self, h: usize, c: usize) -> &[f64] {
        self.class_row(self.off.ak, h, c)
    }

    pub fn a_v(&self, h: usize, c: usize) -> &[f64] {
        self.class_row(self.off.av, h, c)
    }

    fn head_block(&self, base: usize, h: usize) -> Matrix {
        let size = self.arch.obs_dim * self.arch.head_dim;
        let start = base + h * size;
        Matrix::from_vec(
            self.arch.obs_dim,
            self.arch.head_dim,
            self.values[start..start + size].to_vec(),
        )
        .expect("head block size")
    }

    fn class_row(&self, base: usize, h: usize, c: usize) -> &[f64] {
        let m = self.arch.head_dim;
        let start = base + (h * self.arch.classes + c) * m;
        &self.values[start..start + m]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_is_a_function_of_the_architecture() {
        let arch = ArchConfig::standard(5, 7, 1);
        let (n, h, m, c, hid, d) = (5, 4, 16, 7, 64, 1);
        let attn = 3 * h * n * m + 2 * h * c * m;
        let trunk = 2 * h * m + h * m * hid + hid + 2 * hid;
        assert_eq!(ParamSet::count(&arch, NetKind::Policy), attn + trunk + hid * 2 * d + 2 * d);
        assert_eq!(ParamSet::count(&arch, NetKind::Value), attn + trunk + hid + 1);
        let p = ParamSet::init(arch, NetKind::Policy, &mut Rng::new(0)).unwrap();
        assert_eq!(p.len(), ParamSet::count(&arch, NetKind::Policy));
    }

    #[test]
    fn flat_round_trip_is_identity() {
        let arch = ArchConfig::standard(5, 3, 2);
        let p = ParamSet::init(arch, NetKind::Policy, &mut Rng::new(1)).unwrap();
        let q = ParamSet::from_flat(arch, NetKind::Policy, p.flat().to_vec()).unwrap();
        assert_eq!(p, q);
        let mut r = ParamSet::zeros(arch, NetKind::Policy).unwrap();
        for spec in p.specs() {
            r.set_tensor(&spec.name, &p.tensor(&spec.name).unwrap()).unwrap();
        }
        assert_eq!(p, r);
    }

    #[test]
    fn initialisation_conventions() {
        let arch = ArchConfig::standard(5, 3, 1);
        let p = ParamSet::init(arch, NetKind::Policy, &mut Rng::new(2)).unwrap();
        assert!(p.tensor("a_k").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(p.tensor("a_v").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(p.tensor("ln1_gain").unwrap().data().iter().all(|&v| v == 1.0));
        assert!(p.tensor("ln2_offset").unwrap().data().iter().all(|&v| v == 0.0));
        let bound = 1.0 / 5f64.sqrt();
        let wq = p.tensor("w_q").unwrap();
        assert!(wq.data().iter().all(|v| v.abs() <= bound));
        assert!(wq.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn rejects_degenerate_architecture() {
        let mut arch = ArchConfig::standard(5, 3, 1);
        arch.heads = 0;
        assert!(ParamSet::init(arch, NetKind::Policy, &mut Rng::new(0)).is_err());
    }
}
