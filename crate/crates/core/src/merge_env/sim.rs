use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::idm::{idm_accel, IdmParams};
use crate::error::{Error, Result};

/// Smallest bumper-to-bumper gap the speed cap leaves behind a leader.
pub const MIN_GAP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Main,
    Ramp,
    Merged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: u64,
    pub route: Route,
    /// Metres from the start of the vehicle's current edge.
    pub position: f64,
    pub speed: f64,
    pub controlled: bool,
    /// A ramp vehicle that has accepted a gap and now follows the main lane.
    pub merging: bool,
}

impl Vehicle {
    /// Main, merged and merging vehicles share one virtual lane.
    pub fn in_main_lane(&self) -> bool {
        self.route != Route::Ramp || self.merging
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub main_length: f64,
    pub ramp_length: f64,
    pub merged_length: f64,
    pub vehicle_length: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            main_length: 600.0,
            ramp_length: 200.0,
            merged_length: 300.0,
            vehicle_length: 5.0,
        }
    }
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("geometry.main_length", self.main_length),
            ("geometry.ramp_length", self.ramp_length),
            ("geometry.merged_length", self.merged_length),
            ("geometry.vehicle_length", self.vehicle_length),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key, "must be positive and finite"));
            }
        }
        if self.ramp_length > self.main_length {
            return Err(Error::config(
                "geometry.ramp_length",
                "must not exceed the main road length",
            ));
        }
        Ok(())
    }

    pub fn edge_length(&self, route: Route) -> f64 {
        match route {
            Route::Main => self.main_length,
            Route::Ramp => self.ramp_length,
            Route::Merged => self.merged_length,
        }
    }

    /// Signed distance past the merge point: negative on the approaches.
    pub fn coordinate(&self, v: &Vehicle) -> f64 {
        match v.route {
            Route::Main => v.position - self.main_length,
            Route::Ramp => v.position - self.ramp_length,
            Route::Merged => v.position,
        }
    }

    /// Upstream-first order by signed distance to the merge point; at equal
    /// distance the main-road vehicle counts as ahead.
    pub fn lane_order(&self, a: &Vehicle, b: &Vehicle) -> Ordering {
        let rank = |r: Route| match r {
            Route::Ramp => 0,
            Route::Main | Route::Merged => 1,
        };
        self.coordinate(a)
            .total_cmp(&self.coordinate(b))
            .then(rank(a.route).cmp(&rank(b.route)))
            .then(a.id.cmp(&b.id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dynamics {
    pub idm: IdmParams,
    pub dt: f64,
    pub speed_limit: f64,
    /// Ramp vehicles within this distance of the merge point look for a gap.
    pub merge_zone: f64,
    /// Time headway a merging vehicle leaves to the main-lane vehicle behind it.
    pub accept_headway: f64,
    /// Deceleration assumed by the failsafe on commanded vehicles.
    pub brake: f64,
}

/// Largest speed from which a commanded vehicle could still stop `s0`
/// behind its leader if both braked at `brake` from the next step on.
pub fn safe_speed(gap: f64, v_lead: f64, d: &Dynamics) -> f64 {
    if gap.is_infinite() {
        return f64::INFINITY;
    }
    let b = d.brake;
    let room = (gap - d.idm.s0 + v_lead * v_lead / (2.0 * b)).max(0.0);
    (-b * d.dt + (b * b * d.dt * d.dt + 2.0 * b * room).sqrt()).max(0.0)
}

/// What a vehicle follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ahead {
    Vehicle(usize),
    /// End of the ramp for a ramp vehicle still waiting for a gap.
    StopLine,
    Open,
}

/// Vehicles sorted upstream-first by distance to the merge point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimState {
    vehicles: Vec<Vehicle>,
    pub time: f64,
    pub entered: u64,
    pub exited: u64,
    pub blocked: u64,
    next_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepCounts {
    pub exited: u64,
    pub merged: u64,
}

impl SimState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn len(&self) -> usize {
        self.vehicles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }

    pub fn num_controlled(&self) -> usize {
        self.vehicles.iter().filter(|v| v.controlled).count()
    }

    /// Indices (into `vehicles()`) of controlled vehicles, upstream first.
    pub fn controlled_indices(&self) -> Vec<usize> {
        (0..self.vehicles.len()).filter(|&k| self.vehicles[k].controlled).collect()
    }

    pub fn mean_speed(&self) -> Option<f64> {
        (!self.vehicles.is_empty())
            .then(|| self.vehicles.iter().map(|v| v.speed).sum::<f64>() / self.vehicles.len() as f64)
    }

    /// Leader of every vehicle. Main-lane vehicles (including merging ones)
    /// follow the next main-lane vehicle; waiting ramp vehicles follow the
    /// next ramp vehicle or the stop line.
    pub fn leaders(&self) -> Vec<Ahead> {
        let n = self.vehicles.len();
        let mut ahead = vec![Ahead::Open; n];
        let mut last_main = None;
        let mut last_ramp = None;
        for k in (0..n).rev() {
            let v = &self.vehicles[k];
            ahead[k] = if v.in_main_lane() {
                last_main.map_or(Ahead::Open, Ahead::Vehicle)
            } else {
                last_ramp.map_or(Ahead::StopLine, Ahead::Vehicle)
            };
            if v.in_main_lane() {
                last_main = Some(k);
            }
            if v.route == Route::Ramp {
                last_ramp = Some(k);
            }
        }
        ahead
    }

    /// Nearest vehicle following each vehicle.
    pub fn followers(&self, leaders: &[Ahead]) -> Vec<Option<usize>> {
        let mut behind = vec![None; self.vehicles.len()];
        for (j, a) in leaders.iter().enumerate() {
            if let Ahead::Vehicle(k) = *a {
                behind[k] = Some(j);
            }
        }
        behind
    }

    /// Bumper-to-bumper gap and speed of what `k` follows; `None` on an
    /// open road.
    pub fn gap_to(&self, geom: &Geometry, k: usize, ahead: Ahead) -> Option<(f64, f64)> {
        let me = geom.coordinate(&self.vehicles[k]);
        match ahead {
            Ahead::Vehicle(j) => Some((
                geom.coordinate(&self.vehicles[j]) - me - geom.vehicle_length,
                self.vehicles[j].speed,
            )),
            Ahead::StopLine => Some((-me, 0.0)),
            Ahead::Open => None,
        }
    }

    /// Inserts a vehicle directly, keeping lane order. Used to build scenes
    /// by hand; fails if it would overlap a neighbour.
    pub fn insert(&mut self, geom: &Geometry, route: Route, position: f64, speed: f64, controlled: bool) -> Result<u64> {
        if !(0.0..geom.edge_length(route)).contains(&position) || !(speed >= 0.0) {
            return Err(Error::config("vehicle", "position off the edge or negative speed"));
        }
        let id = self.next_id;
        let v = Vehicle {
            id,
            route,
            position,
            speed,
            controlled,
            merging: false,
        };
        let at = self
            .vehicles
            .partition_point(|w| geom.lane_order(w, &v) == Ordering::Less);
        self.vehicles.insert(at, v);
        if let Err(e) = self.check_gaps(geom) {
            self.vehicles.remove(at);
            return Err(e);
        }
        self.next_id += 1;
        Ok(id)
    }

    /// Spawns at the start of `route` if the vehicle ahead in that lane is
    /// at least a desired gap away; the speed drops to the leader's when
    /// that is slower.
    pub(crate) fn try_spawn(&mut self, geom: &Geometry, idm: &IdmParams, route: Route, speed: f64, controlled: bool) -> bool {
        let mut v = Vehicle {
            id: self.next_id,
            route,
            position: 0.0,
            speed,
            controlled,
            merging: false,
        };
        let at = self
            .vehicles
            .partition_point(|w| geom.lane_order(w, &v) == Ordering::Less);
        let same_lane = |w: &Vehicle| match route {
            Route::Ramp => w.route == Route::Ramp,
            _ => w.in_main_lane(),
        };
        let u = geom.coordinate(&v);
        if let Some(lead) = self.vehicles[at..].iter().find(|w| same_lane(w)) {
            let gap = geom.coordinate(lead) - u - geom.vehicle_length;
            v.speed = v.speed.min(lead.speed);
            if gap < idm.s0 + v.speed * idm.t_headway {
                self.blocked += 1;
                return false;
            }
        }
        if let Some(back) = self.vehicles[..at].iter().rev().find(|w| same_lane(w)) {
            let gap = u - geom.coordinate(back) - geom.vehicle_length;
            if gap < idm.s0 + back.speed * idm.t_headway {
                self.blocked += 1;
                return false;
            }
        }
        self.vehicles.insert(at, v);
        self.next_id += 1;
        self.entered += 1;
        true
    }

    /// Lets the most downstream waiting ramp vehicle inside the merge zone
    /// join the main lane when the main-lane gaps around its projected
    /// position are acceptable.
    fn accept_merge(&mut self, geom: &Geometry, d: &Dynamics) -> bool {
        let Some(k) = (0..self.vehicles.len())
            .rev()
            .find(|&k| self.vehicles[k].route == Route::Ramp && !self.vehicles[k].merging)
        else {
            return false;
        };
        let me = &self.vehicles[k];
        let u = geom.coordinate(me);
        if -u > d.merge_zone {
            return false;
        }
        let lead = self.vehicles[k + 1..].iter().find(|w| w.in_main_lane());
        let lag = self.vehicles[..k].iter().rev().find(|w| w.in_main_lane());
        if let Some(l) = lead {
            if geom.coordinate(l) - u - geom.vehicle_length < d.idm.s0 {
                return false;
            }
        }
        if let Some(f) = lag {
            let gap = u - geom.coordinate(f) - geom.vehicle_length;
            if gap < d.idm.s0 + f.speed * d.accept_headway {
                return false;
            }
        }
        self.vehicles[k].merging = true;
        true
    }

    /// One step: gap acceptance, accelerations from the state at the start
    /// of the step, then semi-implicit Euler. `commands[k]` overrides the
    /// car-following model for vehicle `k` (already clipped by the caller).
    /// Every vehicle's new speed is capped so it stays at least `MIN_GAP`
    /// behind what it follows.
    pub(crate) fn advance(&mut self, geom: &Geometry, d: &Dynamics, commands: &[Option<f64>]) -> Result<StepCounts> {
        if commands.len() != self.vehicles.len() {
            return Err(Error::shape(format!(
                "{} commands for {} vehicles",
                commands.len(),
                self.vehicles.len()
            )));
        }
        let merged = u64::from(self.accept_merge(geom, d));
        let leaders = self.leaders();
        let mut speeds = Vec::with_capacity(self.vehicles.len());
        for (k, &ahead) in leaders.iter().enumerate() {
            let v = self.vehicles[k].speed;
            let (gap, v_lead) = self.gap_to(geom, k, ahead).unwrap_or((f64::INFINITY, v));
            let (accel, mut cap) = match commands[k] {
                Some(a) => (a, safe_speed(gap, v_lead, d)),
                None => (idm_accel(v, v_lead, gap, &d.idm)?, f64::INFINITY),
            };
            cap = cap.min(((gap - MIN_GAP) / d.dt).max(0.0));
            speeds.push((v + accel * d.dt).clamp(0.0, d.speed_limit).min(cap));
        }
        let mut exited = 0;
        let mut kept = Vec::with_capacity(self.vehicles.len());
        for (mut v, speed) in self.vehicles.drain(..).zip(speeds) {
            v.speed = speed;
            v.position += speed * d.dt;
            if v.route != Route::Merged && v.position >= geom.edge_length(v.route) {
                v.position -= geom.edge_length(v.route);
                v.route = Route::Merged;
                v.merging = false;
            }
            if v.route == Route::Merged && v.position >= geom.merged_length {
                exited += 1;
                continue;
            }
            kept.push(v);
        }
        self.vehicles = kept;
        self.vehicles.sort_by(|a, b| geom.lane_order(a, b));
        self.check_gaps(geom)?;
        self.exited += exited;
        self.time += d.dt;
        Ok(StepCounts { exited, merged })
    }

    fn check_gaps(&self, geom: &Geometry) -> Result<()> {
        for (k, ahead) in self.leaders().into_iter().enumerate() {
            if let Some((gap, _)) = self.gap_to(geom, k, ahead) {
                let stop_line_ok = ahead == Ahead::StopLine && gap >= 0.0;
                if !(gap > 0.0 || stop_line_ok) {
                    let leader = match ahead {
                        Ahead::Vehicle(j) => self.vehicles[j].id,
                        _ => u64::MAX,
                    };
                    return Err(Error::Collision {
                        follower: self.vehicles[k].id,
                        leader,
                        gap,
                    });
                }
            }
        }
        Ok(())
    }

    /// Smallest gap between a vehicle and the vehicle it follows.
    pub fn min_gap(&self, geom: &Geometry) -> Option<f64> {
        self.leaders()
            .into_iter()
            .enumerate()
            .filter(|(_, a)| matches!(a, Ahead::Vehicle(_)))
            .filter_map(|(k, a)| self.gap_to(geom, k, a).map(|g| g.0))
            .min_by(f64::total_cmp)
    }
}
