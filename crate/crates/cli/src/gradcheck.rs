//! Finite-difference checks of every parameter tensor on a random 4-agent
//! instance of the scenario-sized networks.

use attn_marl_core::attn_net::gradcheck::{
    grad_check, randomize, GradCheckConfig, GradCheckReport, PolicyObjective, Probe, ValueObjective,
};
use attn_marl_core::merge_env::{ACT_DIM, OBS_DIM};
use attn_marl_core::mlp_baseline::{MlpPolicyObjective, MlpValueObjective};
use attn_marl_core::{ArchConfig, MlpArch, MlpParams, NetKind, ParamSet, Result, Rng};

pub const AGENTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradArch {
    Attn,
    Mlp,
}

/// (network label, report) for the policy and value networks.
pub fn run_gradcheck(arch: GradArch, seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = Rng::new(seed);
    let cfg = GradCheckConfig::default();
    let attn = ArchConfig::standard(OBS_DIM, 7, ACT_DIM);
    let probe = Probe::random(&attn, AGENTS, 0.6, &mut rng)?;
    match arch {
        GradArch::Attn => {
            let mut pp = ParamSet::init(attn, NetKind::Policy, &mut rng)?;
            randomize(&mut pp, 0.3, &mut rng);
            let mut vp = ParamSet::init(attn, NetKind::Value, &mut rng)?;
            randomize(&mut vp, 0.3, &mut rng);
            Ok(vec![
                ("attentional policy".into(), grad_check(&PolicyObjective { template: &pp, probe: &probe }, pp.flat(), cfg)?),
                ("attentional value".into(), grad_check(&ValueObjective { template: &vp, probe: &probe }, vp.flat(), cfg)?),
            ])
        }
        GradArch::Mlp => {
            let arch = MlpArch::standard(OBS_DIM, 5, ACT_DIM);
            let mut nets = Vec::new();
            for kind in [NetKind::Policy, NetKind::Value] {
                let mut p = MlpParams::init(arch, kind, &mut rng)?;
                for v in p.flat_mut() {
                    *v = 0.3 * rng.normal();
                }
                nets.push(p);
            }
            let (pp, vp) = (&nets[0], &nets[1]);
            Ok(vec![
                ("mlp policy".into(), grad_check(&MlpPolicyObjective { template: pp, probe: &probe }, pp.flat(), cfg)?),
                ("mlp value".into(), grad_check(&MlpValueObjective { template: vp, probe: &probe }, vp.flat(), cfg)?),
            ])
        }
    }
}
