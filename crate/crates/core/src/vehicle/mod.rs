//! Kinematic vehicle model and its controllers.
//!
//! Coordinates follow the model's convention: the yaw angle is measured from
//! the `+y` axis toward `+x`, so `x' = v sin(theta)` and `y' = v cos(theta)`.

mod longitudinal;
mod path;

use serde::{Deserialize, Serialize};

pub use longitudinal::{plan_longitudinal, replan_longitudinal, ControlSchedule, LongitudinalProblem};
pub use path::{build_reference_path, PathProjection, ReferencePath};

use crate::scenario::Point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// Wheelbase, m.
    pub wheelbase: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub delta_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams { wheelbase: 2.7, v_min: 0.0, v_max: 20.0, a_min: -10.0, a_max: 5.0, delta_max: 0.5 }
    }
}

impl VehicleParams {
    pub fn validate(&self, v_f: f64) -> crate::Result<()> {
        let ok = self.wheelbase > 0.0
            && self.delta_max > 0.0
            && self.v_min <= v_f
            && v_f <= self.v_max
            && self.a_min < 0.0
            && self.a_max > 0.0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::InvalidArgument(format!("vehicle parameters {self:?} with v_F = {v_f}")))
        }
    }
}

/// One forward-Euler step of the kinematic model.
pub fn step_dynamics(z: &VehicleState, a: f64, delta: f64, dt: f64, p: &VehicleParams) -> VehicleState {
    let delta = delta.clamp(-p.delta_max, p.delta_max);
    VehicleState {
        x: z.x + z.v * z.theta.sin() * dt,
        y: z.y + z.v * z.theta.cos() * dt,
        v: (z.v + a * dt).clamp(p.v_min, p.v_max),
        theta: z.theta + z.v / p.wheelbase * delta.tan() * dt,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreviewGains {
    /// Cross-track gain, 1/m.
    pub k_lat: f64,
    pub k_head: f64,
    /// Look-ahead time, s.
    pub preview_time: f64,
}

impl Default for PreviewGains {
    fn default() -> Self {
        PreviewGains { k_lat: 0.15, k_head: 1.2, preview_time: 0.6 }
    }
}

/// Heading of a tangent under the model's yaw convention.
pub fn heading_of(t: Point) -> f64 {
    t[0].atan2(t[1])
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let r = (a + std::f64::consts::PI).rem_euclid(two_pi);
    r - std::f64::consts::PI
}

/// Steering from the cross-track error at the closest path point and the
/// heading error at the preview point.
///
/// Positive cross-track error means the vehicle is on the `+x` side of the
/// path when the path runs along `+y` (the side a positive yaw rate turns
/// toward), and yields a negative command.
pub fn lateral_preview_control(z: &VehicleState, path: &ReferencePath, g: &PreviewGains, p: &VehicleParams) -> f64 {
    lateral_preview_with_hint(z, path, g, p, None).0
}

/// As [`lateral_preview_control`], reusing a projection hint; returns the
/// command and the projection of the vehicle.
pub fn lateral_preview_with_hint(
    z: &VehicleState,
    path: &ReferencePath,
    g: &PreviewGains,
    p: &VehicleParams,
    hint: Option<usize>,
) -> (f64, PathProjection) {
    let proj = path.project([z.x, z.y], hint);
    let ahead = proj.station + g.preview_time * z.v.max(0.0);
    let (_, t_prev) = path.point_at(ahead);
    let e_heading = wrap_angle(z.theta - heading_of(t_prev));
    let delta = -g.k_lat * proj.cross_track - g.k_head * e_heading;
    (delta.clamp(-p.delta_max, p.delta_max), proj)
}
