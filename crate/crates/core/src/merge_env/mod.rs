//! Two single-lane roads joining into one, driven by IDM humans and a
//! varying set of controlled vehicles.
//!
//! Ramp vehicles queue behind a stop line at the merge point and enter the
//! main lane by gap acceptance once inside the merge zone. Controlled
//! vehicles take accelerations from the policy, bounded by a braking
//! failsafe; everything else follows IDM.

mod idm;
pub mod sim;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use idm::{idm_accel, IdmParams};
pub use sim::{Ahead, Dynamics, Geometry, Route, SimState, StepCounts, Vehicle, MIN_GAP};

use crate::error::{Error, Result};
use crate::graph::{apply_edge_dropout, AgentGraph, ObservationBatch};
use crate::numerics::{Matrix, Rng};
use crate::rollout::{MultiAgentEnv, Observation, StepOutcome};

pub const OBS_DIM: usize = 5;
pub const ACT_DIM: usize = 1;

pub const PRESETS: [&str; 2] = ["mini-merge-0", "mini-merge-2"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub geometry: Geometry,
    pub idm: IdmParams,
    /// Vehicles per second offered at each entrance.
    pub main_inflow: f64,
    pub ramp_inflow: f64,
    pub main_spawn_speed: f64,
    pub ramp_spawn_speed: f64,
    /// Distance before the merge point within which ramp vehicles merge.
    pub merge_zone: f64,
    /// Headway (s) a merging vehicle needs behind it in the main lane.
    pub accept_headway: f64,
    /// Probability that a spawned vehicle is controlled.
    pub penetration: f64,
    pub max_controlled: usize,
    pub dt: f64,
    pub horizon: usize,
    pub warmup_steps: usize,
    pub accel_penalty: f64,
    pub action_bound: f64,
    pub speed_limit: f64,
    /// Gap normaliser for observations (m).
    pub gap_scale: f64,
    pub max_rel_pos: usize,
    pub edge_dropout: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self::mini_merge_0()
    }
}

impl EnvConfig {
    /// Short road, at most five controlled vehicles.
    pub fn mini_merge_0() -> Self {
        Self {
            geometry: Geometry {
                main_length: 300.0,
                ramp_length: 150.0,
                merged_length: 150.0,
                ..Geometry::default()
            },
            idm: IdmParams::default(),
            main_inflow: 0.6,
            ramp_inflow: 0.1,
            main_spawn_speed: 25.0,
            ramp_spawn_speed: 15.0,
            merge_zone: 80.0,
            accept_headway: 0.5,
            penetration: 0.35,
            max_controlled: 5,
            dt: 0.5,
            horizon: 300,
            warmup_steps: 200,
            accel_penalty: 0.1,
            action_bound: 3.0,
            speed_limit: 30.0,
            gap_scale: 100.0,
            max_rel_pos: 3,
            edge_dropout: 0.0,
        }
    }

    /// Full-length road, at most seventeen controlled vehicles.
    pub fn mini_merge_2() -> Self {
        Self {
            geometry: Geometry::default(),
            merge_zone: 100.0,
            penetration: 0.33,
            max_controlled: 17,
            ..Self::mini_merge_0()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "mini-merge-0" => Ok(Self::mini_merge_0()),
            "mini-merge-2" => Ok(Self::mini_merge_2()),
            other => Err(Error::config(
                "scenario",
                format!("unknown preset `{other}` (expected one of {PRESETS:?})"),
            )),
        }
    }

    pub fn num_classes(&self) -> usize {
        2 * self.max_rel_pos + 1
    }

    pub fn dynamics(&self) -> Dynamics {
        Dynamics {
            idm: self.idm,
            dt: self.dt,
            speed_limit: self.speed_limit,
            merge_zone: self.merge_zone,
            accept_headway: self.accept_headway,
            brake: self.action_bound,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.idm.validate()?;
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config("dt", "must be positive"));
        }
        for (key, rate) in [("main_inflow", self.main_inflow), ("ramp_inflow", self.ramp_inflow)] {
            if !(rate >= 0.0 && rate * self.dt <= 1.0) {
                return Err(Error::config(key, "must be non-negative with at most one arrival per step"));
            }
        }
        for (key, v) in [
            ("main_spawn_speed", self.main_spawn_speed),
            ("ramp_spawn_speed", self.ramp_spawn_speed),
        ] {
            if !(v >= 0.0 && v <= self.speed_limit) {
                return Err(Error::config(key, "must lie in [0, speed_limit]"));
            }
        }
        if !(self.merge_zone > 0.0 && self.merge_zone <= self.geometry.ramp_length) {
            return Err(Error::config("merge_zone", "must lie in (0, ramp length]"));
        }
        if !(self.accept_headway >= 0.0) {
            return Err(Error::config("accept_headway", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.penetration) {
            return Err(Error::config("penetration", "must lie in [0, 1]"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be at least 1"));
        }
        if !(self.accel_penalty >= 0.0) {
            return Err(Error::config("accel_penalty", "must be non-negative"));
        }
        if !(self.action_bound > 0.0) {
            return Err(Error::config("action_bound", "must be positive"));
        }
        if !(self.speed_limit > 0.0 && self.speed_limit.is_finite()) {
            return Err(Error::config("speed_limit", "must be positive"));
        }
        if !(self.gap_scale > 0.0) {
            return Err(Error::config("gap_scale", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.edge_dropout) {
            return Err(Error::config("edge_dropout", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Per controlled vehicle, upstream first: own speed, leader gap, leader
/// speed, follower gap, distance to the merge point. Missing neighbours read
/// as the top of the range (1.0).
pub fn observe(state: &SimState, cfg: &EnvConfig) -> ObservationBatch {
    let geom = &cfg.geometry;
    let v_scale = cfg.speed_limit;
    let idx = state.controlled_indices();
    if idx.is_empty() {
        return ObservationBatch::empty(OBS_DIM);
    }
    let leaders = state.leaders();
    let followers = state.followers(&leaders);
    let mut data = Vec::with_capacity(idx.len() * OBS_DIM);
    for &k in &idx {
        let v = &state.vehicles()[k];
        let (lead_gap, lead_speed) = match state.gap_to(geom, k, leaders[k]) {
            Some((g, s)) => ((g / cfg.gap_scale).min(1.0), s / v_scale),
            None => (1.0, 1.0),
        };
        let follow_gap = followers[k].map_or(1.0, |j| {
            let g = state.gap_to(geom, j, Ahead::Vehicle(k)).expect("follower has a gap").0;
            (g / cfg.gap_scale).min(1.0)
        });
        let to_merge = (-geom.coordinate(v)).max(0.0) / geom.main_length;
        data.extend_from_slice(&[v.speed / v_scale, lead_gap, lead_speed, follow_gap, to_merge]);
    }
    ObservationBatch::new(Matrix::from_vec(idx.len(), OBS_DIM, data).expect("row-major observation block"))
}

/// Edge class of `(i, j)` for agents ranked upstream-first: the signed rank
/// offset of `j` from `i`, saturated at `±p`, shifted to `0..=2p`.
pub fn relative_class(i: usize, j: usize, p: usize) -> usize {
    let d = (j as i64 - i as i64).clamp(-(p as i64), p as i64);
    (d + p as i64) as usize
}

/// Complete graph over controlled vehicles with relative-position classes,
/// then independent deletion of non-self edges at `dropout`.
pub fn build_graph(state: &SimState, p: usize, dropout: f64, rng: &mut Rng) -> Result<AgentGraph> {
    let ids: Vec<u64> = state
        .controlled_indices()
        .into_iter()
        .map(|k| state.vehicles()[k].id)
        .collect();
    let g = AgentGraph::complete(ids, 2 * p + 1, |i, j| relative_class(i, j, p))?;
    Ok(apply_edge_dropout(&g, dropout, rng))
}

/// Mean speed over all vehicles divided by `v0`, minus the penalty weight
/// times the mean squared commanded acceleration in units of the action
/// bound. Zero for an empty road.
pub fn reward(state: &SimState, cfg: &EnvConfig, accels: &[f64]) -> f64 {
    let Some(mean_speed) = state.mean_speed() else {
        return 0.0;
    };
    let penalty = if accels.is_empty() {
        0.0
    } else {
        accels.iter().map(|a| (a / cfg.action_bound).powi(2)).sum::<f64>() / accels.len() as f64
    };
    mean_speed / cfg.idm.v0 - cfg.accel_penalty * penalty
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: f64,
    pub id: u64,
    pub route: Route,
    pub position: f64,
    pub speed: f64,
    pub controlled: bool,
}

pub fn write_trace<W: Write>(records: &[TraceRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct Streams {
    main: Rng,
    ramp: Rng,
    penetration: Rng,
    dropout: Rng,
}

impl Streams {
    fn new(rng: &Rng) -> Self {
        Self {
            main: rng.split("inflow-main"),
            ramp: rng.split("inflow-ramp"),
            penetration: rng.split("penetration"),
            dropout: rng.split("dropout"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MergeEnv {
    config: EnvConfig,
    state: SimState,
    streams: Streams,
    episode_step: usize,
    trace: Option<Vec<TraceRecord>>,
}

impl MergeEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            state: SimState::new(),
            streams: Streams::new(&Rng::new(0)),
            episode_step: 0,
            trace: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    /// Replaces the simulation state, e.g. with a hand-built scene.
    pub fn set_state(&mut self, state: SimState) {
        self.state = state;
    }

    pub fn episode_step(&self) -> usize {
        self.episode_step
    }

    /// Starts recording one record per vehicle per step.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn record_trace(&mut self) {
        if let Some(trace) = self.trace.as_mut() {
            trace.extend(self.state.vehicles().iter().map(|v| TraceRecord {
                time: self.state.time,
                id: v.id,
                route: v.route,
                position: v.position,
                speed: v.speed,
                controlled: v.controlled,
            }));
        }
    }

    fn spawn(&mut self) {
        let cfg = self.config;
        for (route, rate, speed) in [
            (Route::Main, cfg.main_inflow, cfg.main_spawn_speed),
            (Route::Ramp, cfg.ramp_inflow, cfg.ramp_spawn_speed),
        ] {
            if rate <= 0.0 {
                continue;
            }
            let stream = match route {
                Route::Main => &mut self.streams.main,
                _ => &mut self.streams.ramp,
            };
            if !stream.bernoulli(rate * cfg.dt) {
                continue;
            }
            let wants_control = self.streams.penetration.bernoulli(cfg.penetration);
            let controlled = wants_control && self.state.num_controlled() < cfg.max_controlled;
            self.state
                .try_spawn(&cfg.geometry, &cfg.idm, route, speed, controlled);
        }
    }

    /// Advances one step with every vehicle on IDM.
    fn idle_step(&mut self) -> Result<()> {
        let commands = vec![None; self.state.len()];
        self.state
            .advance(&self.config.geometry, &self.config.dynamics(), &commands)?;
        self.spawn();
        Ok(())
    }
}

impl MultiAgentEnv for MergeEnv {
    fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    fn act_dim(&self) -> usize {
        ACT_DIM
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    /// Empty road, then `warmup_steps` of inflow under IDM.
    fn reset(&mut self, rng: Rng) -> Result<()> {
        self.state = SimState::new();
        self.streams = Streams::new(&rng);
        self.episode_step = 0;
        if let Some(t) = self.trace.as_mut() {
            t.clear();
        }
        for _ in 0..self.config.warmup_steps {
            self.idle_step()?;
        }
        self.record_trace();
        Ok(())
    }

    fn observe(&mut self) -> Result<Observation> {
        let obs = observe(&self.state, &self.config);
        let graph = build_graph(
            &self.state,
            self.config.max_rel_pos,
            self.config.edge_dropout,
            &mut self.streams.dropout,
        )?;
        Ok(Observation { obs, graph })
    }

    /// `actions` has one row per controlled vehicle in observation order;
    /// rows with `active[r] == false` drive by IDM instead.
    fn step(&mut self, actions: &Matrix, active: &[bool]) -> Result<StepOutcome> {
        let idx = self.state.controlled_indices();
        if actions.shape() != (idx.len(), ACT_DIM) || active.len() != idx.len() {
            return Err(Error::shape(format!(
                "expected {} action rows of width {ACT_DIM} and as many flags, got {:?} and {}",
                idx.len(),
                actions.shape(),
                active.len()
            )));
        }
        let bound = self.config.action_bound;
        let mut commands = vec![None; self.state.len()];
        let mut accels = Vec::with_capacity(idx.len());
        for (r, &k) in idx.iter().enumerate() {
            if !active[r] {
                continue;
            }
            let a = actions.get(r, 0);
            if !a.is_finite() {
                return Err(Error::config("action", format!("non-finite action {a} for agent row {r}")));
            }
            let a = a.clamp(-bound, bound);
            commands[k] = Some(a);
            accels.push(a);
        }
        self.state
            .advance(&self.config.geometry, &self.config.dynamics(), &commands)?;
        self.spawn();
        self.episode_step += 1;
        self.record_trace();
        Ok(StepOutcome {
            reward: reward(&self.state, &self.config, &accels),
            done: self.episode_step >= self.config.horizon,
            mean_speed: self.state.mean_speed(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub total_reward: f64,
    /// Time-average of the per-step mean vehicle speed (m/s).
    pub mean_speed: f64,
    pub steps: usize,
    pub mean_agents: f64,
}

/// One episode with every vehicle, controlled or not, driven by IDM.
pub fn run_idm_episode(config: &EnvConfig, rng: Rng) -> Result<EpisodeSummary> {
    let mut env = MergeEnv::new(*config)?;
    env.reset(rng)?;
    let mut total_reward = 0.0;
    let (mut speed_sum, mut speed_n, mut agents) = (0.0, 0usize, 0usize);
    for _ in 0..config.horizon {
        let n = env.state.num_controlled();
        agents += n;
        let out = env.step(&Matrix::zeros(n, ACT_DIM), &vec![false; n])?;
        total_reward += out.reward;
        if let Some(s) = out.mean_speed {
            speed_sum += s;
            speed_n += 1;
        }
    }
    Ok(EpisodeSummary {
        total_reward,
        mean_speed: if speed_n > 0 { speed_sum / speed_n as f64 } else { 0.0 },
        steps: config.horizon,
        mean_agents: agents as f64 / config.horizon as f64,
    })
}
