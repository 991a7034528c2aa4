//! Self-describing JSON checkpoints holding both networks of a model.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attn_net::{NetKind, ParamSet};
use crate::error::{Error, Result};
use crate::mlp_baseline::MlpParams;
use crate::model::{ActorCritic, AnyModel, ArchSpec, AttnActorCritic, MlpActorCritic};
use crate::params::{from_nested, to_nested, TensorSpec};

pub const CHECKPOINT_FORMAT: &str = "attn-marl-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorDoc {
    pub name: String,
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub arch: ArchSpec,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
    pub policy: Vec<TensorDoc>,
    pub value: Vec<TensorDoc>,
}

fn docs(specs: &[TensorSpec], values: &[f64]) -> Vec<TensorDoc> {
    to_nested(specs, values)
        .into_iter()
        .map(|(name, values)| TensorDoc { name, values })
        .collect()
}

fn undocs(specs: &[TensorSpec], total: usize, docs: &[TensorDoc]) -> Result<Vec<f64>> {
    let pairs: Vec<(String, Vec<Vec<f64>>)> =
        docs.iter().map(|d| (d.name.clone(), d.values.clone())).collect();
    from_nested(specs, total, &pairs)
}

impl Checkpoint {
    pub fn from_model<M: ActorCritic>(model: &M, metadata: BTreeMap<String, serde_json::Value>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            arch: model.spec(),
            metadata,
            policy: docs(model.policy_tensors(), model.policy_params()),
            value: docs(model.value_tensors(), model.value_params()),
        }
    }

    pub fn to_model(&self) -> Result<AnyModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format `{}` (expected `{CHECKPOINT_FORMAT}`)",
                self.format
            )));
        }
        match self.arch {
            ArchSpec::Attentional(arch) => {
                let mut p = ParamSet::zeros(arch, NetKind::Policy)?;
                let mut v = ParamSet::zeros(arch, NetKind::Value)?;
                let pv = undocs(p.specs(), p.len(), &self.policy)?;
                let vv = undocs(v.specs(), v.len(), &self.value)?;
                p.set_flat(&pv)?;
                v.set_flat(&vv)?;
                Ok(AnyModel::Attn(AttnActorCritic { policy: p, value: v }))
            }
            ArchSpec::Mlp(arch) => {
                let p = MlpParams::zeros(arch, NetKind::Policy)?;
                let v = MlpParams::zeros(arch, NetKind::Value)?;
                let pv = undocs(p.specs(), p.len(), &self.policy)?;
                let vv = undocs(v.specs(), v.len(), &self.value)?;
                Ok(AnyModel::Mlp(MlpActorCritic {
                    policy: MlpParams::from_flat(arch, NetKind::Policy, pv)?,
                    value: MlpParams::from_flat(arch, NetKind::Value, vv)?,
                }))
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
