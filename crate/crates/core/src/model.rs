//! Policy/value network pairs behind one interface, so the training loop is
//! shared by the attentional model and the MLP baseline.

use serde::{Deserialize, Serialize};

use crate::attn_net::{
    policy_backward, policy_fwd, value_backward, value_fwd, ArchConfig, GaussianPolicyOut,
    NetKind, ParamSet, PolicyCache, ValueCache,
};
use crate::error::{Error, Result};
use crate::graph::{AgentGraph, ObservationBatch};
use crate::mlp_baseline::{
    mlp_policy_backward, mlp_policy_fwd, mlp_value_backward, mlp_value_fwd, pack_global_obs,
    MlpArch, MlpCache, MlpParams,
};
use crate::numerics::{Matrix, Rng};
use crate::params::TensorSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ArchSpec {
    Attentional(ArchConfig),
    Mlp(MlpArch),
}

impl ArchSpec {
    pub fn obs_dim(&self) -> usize {
        match self {
            ArchSpec::Attentional(a) => a.obs_dim,
            ArchSpec::Mlp(a) => a.obs_dim,
        }
    }

    pub fn act_dim(&self) -> usize {
        match self {
            ArchSpec::Attentional(a) => a.act_dim,
            ArchSpec::Mlp(a) => a.act_dim,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ArchSpec::Attentional(_) => "attentional",
            ArchSpec::Mlp(_) => "mlp",
        }
    }
}

pub trait ActorCritic: Clone + Send + Sync {
    type PolicyCache: Send;
    type ValueCache: Send;

    fn spec(&self) -> ArchSpec;
    fn policy_tensors(&self) -> &[TensorSpec];
    fn value_tensors(&self) -> &[TensorSpec];
    fn policy_params(&self) -> &[f64];
    fn policy_params_mut(&mut self) -> &mut [f64];
    fn value_params(&self) -> &[f64];
    fn value_params_mut(&mut self) -> &mut [f64];

    /// One output row per observation row; rows the network does not
    /// control are marked invalid.
    fn policy_forward(
        &self,
        obs: &ObservationBatch,
        graph: &AgentGraph,
    ) -> Result<(GaussianPolicyOut, Self::PolicyCache)>;

    /// Accumulates into `grad` (policy parameter layout).
    fn policy_backward(
        &self,
        cache: &Self::PolicyCache,
        d_means: &Matrix,
        d_log_vars: &Matrix,
        grad: &mut [f64],
    ) -> Result<()>;

    fn value_forward(
        &self,
        obs: &ObservationBatch,
        graph: &AgentGraph,
    ) -> Result<(f64, Self::ValueCache)>;

    /// Accumulates into `grad` (value parameter layout).
    fn value_backward(&self, cache: &Self::ValueCache, d_value: f64, grad: &mut [f64]) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnActorCritic {
    pub policy: ParamSet,
    pub value: ParamSet,
}

impl AttnActorCritic {
    pub fn init(arch: ArchConfig, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            policy: ParamSet::init(arch, NetKind::Policy, &mut rng.split("policy"))?,
            value: ParamSet::init(arch, NetKind::Value, &mut rng.split("value"))?,
        })
    }
}

impl ActorCritic for AttnActorCritic {
    type PolicyCache = PolicyCache;
    type ValueCache = ValueCache;

    fn spec(&self) -> ArchSpec {
        ArchSpec::Attentional(*self.policy.arch())
    }

    fn policy_tensors(&self) -> &[TensorSpec] {
        self.policy.specs()
    }

    fn value_tensors(&self) -> &[TensorSpec] {
        self.value.specs()
    }

    fn policy_params(&self) -> &[f64] {
        self.policy.flat()
    }

    fn policy_params_mut(&mut self) -> &mut [f64] {
        self.policy.flat_mut()
    }

    fn value_params(&self) -> &[f64] {
        self.value.flat()
    }

    fn value_params_mut(&mut self) -> &mut [f64] {
        self.value.flat_mut()
    }

    fn policy_forward(
        &self,
        obs: &ObservationBatch,
        graph: &AgentGraph,
    ) -> Result<(GaussianPolicyOut, PolicyCache)> {
        policy_fwd(&self.policy, obs, graph)
    }

    fn policy_backward(
        &self,
        cache: &PolicyCache,
        d_means: &Matrix,
        d_log_vars: &Matrix,
        grad: &mut [f64],
    ) -> Result<()> {
        policy_backward(&self.policy, cache, d_means, d_log_vars, grad, None)
    }

    fn value_forward(&self, obs: &ObservationBatch, graph: &AgentGraph) -> Result<(f64, ValueCache)> {
        value_fwd(&self.value, obs, graph)
    }

    fn value_backward(&self, cache: &ValueCache, d_value: f64, grad: &mut [f64]) -> Result<()> {
        value_backward(&self.value, cache, d_value, grad, None)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpActorCritic {
    pub policy: MlpParams,
    pub value: MlpParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicyCache {
    pub mlp: MlpCache,
    /// Slot assigned to each observation row, if any.
    pub slots: Vec<Option<usize>>,
}

impl MlpActorCritic {
    pub fn init(arch: MlpArch, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            policy: MlpParams::init(arch, NetKind::Policy, &mut rng.split("policy"))?,
            value: MlpParams::init(arch, NetKind::Value, &mut rng.split("value"))?,
        })
    }
}

impl ActorCritic for MlpActorCritic {
    type PolicyCache = MlpPolicyCache;
    type ValueCache = MlpCache;

    fn spec(&self) -> ArchSpec {
        ArchSpec::Mlp(*self.policy.arch())
    }

    fn policy_tensors(&self) -> &[TensorSpec] {
        self.policy.specs()
    }

    fn value_tensors(&self) -> &[TensorSpec] {
        self.value.specs()
    }

    fn policy_params(&self) -> &[f64] {
        self.policy.flat()
    }

    fn policy_params_mut(&mut self) -> &mut [f64] {
        self.policy.flat_mut()
    }

    fn value_params(&self) -> &[f64] {
        self.value.flat()
    }

    fn value_params_mut(&mut self) -> &mut [f64] {
        self.value.flat_mut()
    }

    fn policy_forward(
        &self,
        obs: &ObservationBatch,
        _graph: &AgentGraph,
    ) -> Result<(GaussianPolicyOut, MlpPolicyCache)> {
        let cap = self.policy.arch().capacity;
        let (packed, used) = pack_global_obs(obs, cap);
        let (slot_out, mlp) = mlp_policy_fwd(&self.policy, &packed, used)?;
        let d = slot_out.act_dim();
        let mut slots = vec![None; obs.rows()];
        let mut means = Matrix::zeros(obs.rows(), d);
        let mut log_vars = Matrix::zeros(obs.rows(), d);
        for (next, i) in (0..obs.rows()).filter(|&i| obs.valid()[i]).take(used).enumerate() {
            slots[i] = Some(next);
            means.row_mut(i).copy_from_slice(slot_out.means.row(next));
            log_vars.row_mut(i).copy_from_slice(slot_out.log_vars.row(next));
        }
        let valid = slots.iter().map(Option::is_some).collect();
        Ok((
            GaussianPolicyOut::new(means, log_vars, valid)?,
            MlpPolicyCache { mlp, slots },
        ))
    }

    fn policy_backward(
        &self,
        cache: &MlpPolicyCache,
        d_means: &Matrix,
        d_log_vars: &Matrix,
        grad: &mut [f64],
    ) -> Result<()> {
        let arch = self.policy.arch();
        if d_means.rows() != cache.slots.len() || d_log_vars.rows() != cache.slots.len() {
            return Err(Error::shape("upstream gradient rows differ from cached agents"));
        }
        let mut dm = Matrix::zeros(arch.capacity, arch.act_dim);
        let mut dlv = Matrix::zeros(arch.capacity, arch.act_dim);
        for (i, slot) in cache.slots.iter().enumerate() {
            if let Some(s) = *slot {
                dm.row_mut(s).copy_from_slice(d_means.row(i));
                dlv.row_mut(s).copy_from_slice(d_log_vars.row(i));
            }
        }
        mlp_policy_backward(&self.policy, &cache.mlp, &dm, &dlv, grad)
    }

    fn value_forward(&self, obs: &ObservationBatch, _graph: &AgentGraph) -> Result<(f64, MlpCache)> {
        let (packed, _) = pack_global_obs(obs, self.value.arch().capacity);
        mlp_value_fwd(&self.value, &packed)
    }

    fn value_backward(&self, cache: &MlpCache, d_value: f64, grad: &mut [f64]) -> Result<()> {
        mlp_value_backward(&self.value, cache, d_value, grad)
    }
}

/// Either model, for code that picks the architecture at run time.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Attn(AttnActorCritic),
    Mlp(MlpActorCritic),
}

impl AnyModel {
    pub fn init(spec: ArchSpec, rng: &mut Rng) -> Result<Self> {
        Ok(match spec {
            ArchSpec::Attentional(a) => AnyModel::Attn(AttnActorCritic::init(a, rng)?),
            ArchSpec::Mlp(a) => AnyModel::Mlp(MlpActorCritic::init(a, rng)?),
        })
    }

    pub fn spec(&self) -> ArchSpec {
        match self {
            AnyModel::Attn(m) => m.spec(),
            AnyModel::Mlp(m) => m.spec(),
        }
    }
}
