//! Experiment configuration files and the built-in figure presets.

use std::fs;
use std::path::{Path, PathBuf};

use attn_marl_core::merge_env::{EnvConfig, ACT_DIM, OBS_DIM};
use attn_marl_core::{ArchConfig, ArchSpec, Error, MlpArch, PpoConfig, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    #[default]
    Attentional,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// One of the environment presets.
    pub scenario: String,
    /// Field overrides applied on top of the scenario preset.
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub env: Map<String, Value>,
    #[serde(default)]
    pub arch: ArchKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rel_pos: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_dropout: Option<f64>,
    #[serde(default)]
    pub ppo: PpoConfig,
    pub seeds: Vec<u64>,
    pub iterations: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Write a checkpoint every this many iterations; 0 keeps only the final one.
    #[serde(default)]
    pub checkpoint_every: usize,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

fn path_error<E: std::fmt::Display>(prefix: &str, err: serde_path_to_error::Error<E>) -> Error {
    let path = err.path().to_string();
    let key = match (prefix, path.as_str()) {
        ("", ".") => "<root>".to_string(),
        ("", p) => p.to_string(),
        (pre, ".") => pre.to_string(),
        (pre, p) => format!("{pre}.{p}"),
    };
    Error::config(key, err.into_inner().to_string())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| path_error("", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Scenario preset with overrides, relative-position range and dropout
    /// applied.
    pub fn env_config(&self) -> Result<EnvConfig> {
        let mut value = serde_json::to_value(EnvConfig::preset(&self.scenario)?)?;
        merge(&mut value, &Value::Object(self.env.clone()));
        let mut cfg: EnvConfig = serde_path_to_error::deserialize(value).map_err(|e| path_error("env", e))?;
        if let Some(p) = self.max_rel_pos {
            cfg.max_rel_pos = p;
        }
        if let Some(d) = self.edge_dropout {
            cfg.edge_dropout = d;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn arch_spec(&self, env: &EnvConfig) -> ArchSpec {
        match self.arch {
            ArchKind::Attentional => ArchSpec::Attentional(ArchConfig::standard(OBS_DIM, env.num_classes(), ACT_DIM)),
            ArchKind::Mlp => ArchSpec::Mlp(MlpArch::standard(OBS_DIM, env.max_controlled, ACT_DIM)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::config("name", "must be a non-empty file-name-safe string"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("seeds", "seeds must be distinct"));
        }
        if self.iterations == 0 {
            return Err(Error::config("iterations", "must be at least 1"));
        }
        self.ppo.validate()?;
        self.env_config()?;
        Ok(())
    }

    /// Directory holding this experiment's metrics and checkpoints.
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.name)
    }
}

/// Training settings sized for a single desktop core: a few short rollouts
/// per iteration and a higher step size than the library default.
pub fn desk_ppo() -> PpoConfig {
    PpoConfig {
        rollouts: 4,
        epochs: 4,
        minibatch: 64,
        learning_rate: 1e-3,
        horizon: Some(100),
        ..PpoConfig::default()
    }
}

pub const FIGURES: [&str; 3] = ["fig3a", "fig3b", "fig3c"];

pub const DEFAULT_ITERATIONS: usize = 150;
pub const DEFAULT_SEEDS: u64 = 10;

fn variant(
    prefix: &str,
    label: &str,
    scenario: &str,
    arch: ArchKind,
    p: usize,
    dropout: f64,
) -> ExperimentConfig {
    ExperimentConfig {
        name: format!("{prefix}-{label}"),
        scenario: scenario.to_string(),
        env: Map::new(),
        arch,
        max_rel_pos: Some(p),
        edge_dropout: Some(dropout),
        ppo: desk_ppo(),
        seeds: (0..DEFAULT_SEEDS).collect(),
        iterations: DEFAULT_ITERATIONS,
        output_dir: default_output_dir(),
        checkpoint_every: 0,
    }
}

/// The experiment matrix behind one figure panel: architectures on both
/// scenarios, the relative-position ablation, or the dropout sweep.
pub fn figure_preset(name: &str) -> Result<Vec<ExperimentConfig>> {
    use ArchKind::*;
    let v = match name {
        "fig3a" => vec![
            variant(name, "merge0-attentional", "mini-merge-0", Attentional, 3, 0.0),
            variant(name, "merge0-mlp", "mini-merge-0", Mlp, 3, 0.0),
            variant(name, "merge2-attentional", "mini-merge-2", Attentional, 3, 0.0),
            variant(name, "merge2-mlp", "mini-merge-2", Mlp, 3, 0.0),
        ],
        "fig3b" => [3, 1, 0]
            .into_iter()
            .map(|p| variant(name, &format!("relpos{p}"), "mini-merge-2", Attentional, p, 0.0))
            .collect(),
        "fig3c" => [0.0, 0.2, 0.5, 0.8]
            .into_iter()
            .map(|d| variant(name, &format!("dropout{d}"), "mini-merge-2", Attentional, 1, d))
            .collect(),
        other => {
            return Err(Error::config(
                "preset",
                format!("unknown figure preset `{other}` (expected one of {FIGURES:?})"),
            ))
        }
    };
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for f in FIGURES {
            for cfg in figure_preset(f).unwrap() {
                cfg.validate().unwrap();
            }
        }
        assert_eq!(figure_preset("fig3b").unwrap().len(), 3);
        assert_eq!(figure_preset("fig3c").unwrap().len(), 4);
        assert!(figure_preset("fig9").is_err());
    }

    #[test]
    fn overrides_merge_into_the_preset() {
        let mut cfg = figure_preset("fig3c").unwrap().remove(2);
        cfg.env.insert("penetration".into(), 0.5.into());
        cfg.env.insert("geometry".into(), serde_json::json!({"merged_length": 123.0}));
        let env = cfg.env_config().unwrap();
        assert_eq!(env.penetration, 0.5);
        assert_eq!(env.geometry.merged_length, 123.0);
        assert_eq!(env.geometry.main_length, EnvConfig::mini_merge_2().geometry.main_length);
        assert_eq!(env.max_controlled, 17);
        assert_eq!((env.max_rel_pos, env.edge_dropout), (1, 0.5));
    }

    #[test]
    fn bad_override_names_the_key() {
        let mut cfg = figure_preset("fig3a").unwrap().remove(0);
        cfg.env.insert("geometry".into(), serde_json::json!({"ramp": 1.0}));
        let msg = cfg.env_config().unwrap_err().to_string();
        assert!(msg.contains("env.geometry"), "{msg}");
    }

    #[test]
    fn arch_follows_scenario() {
        let cfg = figure_preset("fig3a").unwrap();
        let env = cfg[3].env_config().unwrap();
        match cfg[3].arch_spec(&env) {
            ArchSpec::Mlp(a) => assert_eq!(a.capacity, 17),
            _ => panic!("expected the MLP"),
        }
        let env = cfg[0].env_config().unwrap();
        match cfg[0].arch_spec(&env) {
            ArchSpec::Attentional(a) => assert_eq!(a.classes, 7),
            _ => panic!("expected attention"),
        }
    }
}
