//! Local terrain plane and per-wheel frames.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TerrainError {
    #[error("plane fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("contact points are degenerate (singular values {0:?})")]
    Degenerate([f64; 3]),
    #[error("fitted plane is vertical")]
    Vertical,
    #[error("heading is parallel to the terrain normal")]
    FrameDegenerate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerrainPlane {
    pub normal: Vector3<f64>,
    pub point: Vector3<f64>,
}

impl TerrainPlane {
    pub fn flat() -> Self {
        Self {
            normal: Vector3::z(),
            point: Vector3::zeros(),
        }
    }

    /// Plane `z = slope * x` through the origin.
    pub fn incline(slope: f64) -> Self {
        Self {
            normal: Vector3::new(-slope, 0.0, 1.0).normalize(),
            point: Vector3::zeros(),
        }
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(&(p - self.point))
    }

    pub fn project(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p - self.normal * self.signed_distance(p)
    }

    /// Height of the plane above world point `(x, y)`.
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        let n = &self.normal;
        self.point.z - (n.x * (x - self.point.x) + n.y * (y - self.point.y)) / n.z
    }

    /// Pitch and roll (rad) of a yaw-aligned frame lying on the plane.
    pub fn pitch_roll(&self, yaw: f64) -> (f64, f64) {
        let (s, c) = yaw.sin_cos();
        let n = &self.normal;
        // slope along heading and along the lateral axis
        let along = -(n.x * c + n.y * s) / n.z;
        let lateral = -(-n.x * s + n.y * c) / n.z;
        (-along.atan(), lateral.atan())
    }
}

/// Least-squares plane through `points`; the normal points upward.
pub fn fit_plane(points: &[Vector3<f64>]) -> Result<TerrainPlane, TerrainError> {
    if points.len() < 3 {
        return Err(TerrainError::TooFewPoints(points.len()));
    }
    let centroid = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    let eig = scatter.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let sv = order.map(|i| eig.eigenvalues[i].max(0.0).sqrt());
    // a plane needs two independent in-plane directions
    if sv[1] <= 1e-8 {
        return Err(TerrainError::Degenerate(sv));
    }
    let mut normal: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned().normalize();
    if normal.z.abs() < 1e-9 {
        return Err(TerrainError::Vertical);
    }
    if normal.z < 0.0 {
        normal = -normal;
    }
    Ok(TerrainPlane {
        normal,
        point: centroid,
    })
}

/// Terrain-aligned frame of one wheel. Columns of `rotation` are the frame
/// axes expressed in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WheelFrame {
    pub origin: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl WheelFrame {
    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.origin)
    }

    pub fn to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.origin + self.rotation * p
    }

    pub fn vec_to_local(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * v
    }

    pub fn vec_to_world(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }
}

pub fn wheel_frame(
    plane: &TerrainPlane,
    axle_center: &Vector3<f64>,
    heading: &Vector3<f64>,
) -> Result<WheelFrame, TerrainError> {
    let z = plane.normal;
    let proj = heading - z * z.dot(heading);
    let norm = proj.norm();
    if norm < 1e-9 {
        return Err(TerrainError::FrameDegenerate);
    }
    let x = proj / norm;
    let y = z.cross(&x);
    Ok(WheelFrame {
        origin: plane.project(axle_center),
        rotation: Matrix3::from_columns(&[x, y, z]),
    })
}
