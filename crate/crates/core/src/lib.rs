//! Cross-context attentional actor-critic networks, multi-agent PPO and a
//! small highway-merge simulator to train them on.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attn_net;
pub mod bandit;
pub mod checkpoint;
pub mod error;
pub mod graph;
pub mod merge_env;
pub mod mlp_baseline;
pub mod model;
pub mod numerics;
pub mod params;
pub mod ppo;
pub mod rollout;

pub use checkpoint::Checkpoint;
pub use mlp_baseline::{MlpArch, MlpParams};
pub use model::{ActorCritic, AnyModel, ArchSpec, AttnActorCritic, MlpActorCritic};
pub use attn_net::{ArchConfig, GaussianPolicyOut, NetKind, ParamSet};
pub use error::{Error, Result};
pub use graph::{apply_edge_dropout, AgentGraph, AgentId, Edge, Neighbor, ObservationBatch};
pub use numerics::{matmul, AdamConfig, AdamState, Matrix, Rng};
pub use params::TensorSpec;
pub use ppo::{IterationStats, PpoConfig, Trainer};
pub use rollout::{MultiAgentEnv, Observation, StepOutcome, StepRecord, Trajectory};
