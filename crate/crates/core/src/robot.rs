//! Robot parameters and the nominal (disturbance-free) reference motion.

use nalgebra::{Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::gait::Leg;
use crate::terrain::TerrainPlane;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotConfig {
    pub mass: f64,
    pub gravity: f64,
    /// Default COM height above the terrain along the normal.
    pub com_height: f64,
    /// Default wheel contact offsets from the COM in the heading frame, ordered LF, RF, LH, RH.
    pub leg_offsets: [[f64; 2]; 4],
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            mass: 35.0,
            gravity: 9.81,
            com_height: 0.45,
            leg_offsets: [[0.35, 0.25], [0.35, -0.25], [-0.35, 0.25], [-0.35, -0.25]],
        }
    }
}

impl RobotConfig {
    pub fn leg_offset(&self, leg: Leg) -> Vector2<f64> {
        let o = self.leg_offsets[leg.index()];
        Vector2::new(o[0], o[1])
    }

    pub fn gravity_vector(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, -self.gravity)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.mass > 0.0 && self.gravity > 0.0 && self.com_height > 0.0) {
            return Err("mass, gravity and com_height must be positive".into());
        }
        Ok(())
    }
}

/// Constant-twist motion of the COM in the world xy plane starting from a pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NominalMotion {
    pub position: Vector2<f64>,
    pub yaw: f64,
    /// Reference velocity in the heading frame.
    pub v_ref: Vector2<f64>,
    pub omega_ref: f64,
}

impl NominalMotion {
    /// Position and yaw after `dt` seconds.
    pub fn pose(&self, dt: f64) -> (Vector2<f64>, f64) {
        let w = self.omega_ref;
        let (vx, vy) = (self.v_ref.x, self.v_ref.y);
        // displacement in the initial heading frame
        let local = if (w * dt).abs() < 1e-9 {
            Vector2::new(vx * dt, vy * dt)
        } else {
            let (s, c) = (w * dt).sin_cos();
            Vector2::new((s * vx - (1.0 - c) * vy) / w, ((1.0 - c) * vx + s * vy) / w)
        };
        let (s0, c0) = self.yaw.sin_cos();
        let world = Vector2::new(c0 * local.x - s0 * local.y, s0 * local.x + c0 * local.y);
        (self.position + world, self.yaw + w * dt)
    }

    /// World-frame xy velocity after `dt` seconds.
    pub fn velocity(&self, dt: f64) -> Vector2<f64> {
        let (s, c) = (self.yaw + self.omega_ref * dt).sin_cos();
        Vector2::new(
            c * self.v_ref.x - s * self.v_ref.y,
            s * self.v_ref.x + c * self.v_ref.y,
        )
    }

    pub fn advance(&self, dt: f64) -> Self {
        let (position, yaw) = self.pose(dt);
        Self {
            position,
            yaw,
            ..*self
        }
    }

    /// Default contact position of `leg` after `dt` seconds, dropped vertically onto the plane.
    pub fn wheel_default(
        &self,
        robot: &RobotConfig,
        leg: Leg,
        dt: f64,
        plane: &TerrainPlane,
    ) -> Vector3<f64> {
        let (p, yaw) = self.pose(dt);
        let xy = p + rotate2(yaw, &robot.leg_offset(leg));
        Vector3::new(xy.x, xy.y, plane.height_at(xy.x, xy.y))
    }
}

/// From `time` on, the reference twist is `v_ref`, `omega_ref`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwistChange {
    pub time: f64,
    /// Heading-frame velocity (m/s).
    pub v_ref: [f64; 2],
    #[serde(default)]
    pub omega_ref: f64,
}

/// Reference pose and twist at `t` for a motion that starts as `start` at
/// `t = 0` and switches twist at each of the time-sorted `changes`.
pub fn nominal_with_changes(
    start: &NominalMotion,
    changes: &[TwistChange],
    t: f64,
) -> NominalMotion {
    let mut m = *start;
    let mut t_cur = 0.0;
    for c in changes.iter().filter(|c| c.time <= t && c.time >= 0.0) {
        m = m.advance(c.time - t_cur);
        m.v_ref = Vector2::new(c.v_ref[0], c.v_ref[1]);
        m.omega_ref = c.omega_ref;
        t_cur = c.time;
    }
    m.advance(t - t_cur)
}

pub fn rotate2(angle: f64, v: &Vector2<f64>) -> Vector2<f64> {
    let (s, c) = angle.sin_cos();
    Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// Rotation from yaw-pitch-roll angles (intrinsic Z-Y'-X'').
pub fn rotation_from_ypr(ypr: &Vector3<f64>) -> Rotation3<f64> {
    Rotation3::from_euler_angles(ypr[2], ypr[1], ypr[0])
}
