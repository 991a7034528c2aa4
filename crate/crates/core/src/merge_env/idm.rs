use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdmParams {
    /// Desired speed (m/s).
    pub v0: f64,
    /// Desired time headway (s).
    pub t_headway: f64,
    pub a_max: f64,
    pub b_comf: f64,
    pub delta: f64,
    /// Jam distance (m).
    pub s0: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            v0: 30.0,
            t_headway: 1.0,
            a_max: 1.0,
            b_comf: 1.5,
            delta: 4.0,
            s0: 2.0,
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("idm.v0", self.v0),
            ("idm.t_headway", self.t_headway),
            ("idm.a_max", self.a_max),
            ("idm.b_comf", self.b_comf),
            ("idm.delta", self.delta),
            ("idm.s0", self.s0),
        ];
        for (key, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key, "must be positive and finite"));
            }
        }
        Ok(())
    }

    /// Dynamic desired gap `s*`; the velocity-dependent part is floored at
    /// zero so a fast-receding leader never reads as a reason to brake.
    pub fn desired_gap(&self, v: f64, v_lead: f64) -> f64 {
        let dv = v - v_lead;
        let dynamic = v * self.t_headway + v * dv / (2.0 * (self.a_max * self.b_comf).sqrt());
        self.s0 + dynamic.max(0.0)
    }

    /// Bumper-to-bumper gap at which a follower at speed `v` behind a leader
    /// at the same speed has zero acceleration.
    pub fn equilibrium_gap(&self, v: f64) -> Option<f64> {
        let free = 1.0 - (v / self.v0).powf(self.delta);
        (free > 0.0).then(|| self.desired_gap(v, v) / free.sqrt())
    }
}

/// Intelligent Driver Model acceleration. A vehicle without a leader passes
/// `gap = f64::INFINITY` and `v_lead = v`.
pub fn idm_accel(v: f64, v_lead: f64, gap: f64, p: &IdmParams) -> Result<f64> {
    if !(gap > 0.0) {
        return Err(Error::NonPositiveGap { gap });
    }
    let free = 1.0 - (v / p.v0).powf(p.delta);
    let interaction = if gap.is_infinite() {
        0.0
    } else {
        (p.desired_gap(v, v_lead) / gap).powi(2)
    };
    Ok(p.a_max * (free - interaction))
}
