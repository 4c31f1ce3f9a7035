//! Polynomial trajectory segments.
//!
//! Two parameterizations are used for wheel trajectories:
//!
//! * [`AirSegment`]: an independent quintic per axis. Coefficients are stored
//!   highest power first so that `position = eval_basis(tau) . coeffs`, with the
//!   basis `[tau^5, tau^4, tau^3, tau^2, tau, 1]`.
//! * [`ContactSegment`]: a rolling wheel. The speed along the rolling direction
//!   is quadratic in time and the rolling direction turns at a constant yaw
//!   rate. Lateral and vertical velocity are zero by construction, so the
//!   parameterization cannot express lateral slip.
//!
//! All segments are evaluated in local time `tau = t - t_start`. The heading of
//! a contact segment is measured from the start of the sequence, i.e. at
//! sequence time `t` the rolling direction is `R_z(omega * t) e_x`.
//!
//! Base trajectories reuse [`AirSegment`] for the COM position and for the
//! yaw-pitch-roll angles.

use nalgebra::{DMatrix, Matrix3, Matrix3xX, Vector3};
use thiserror::Error;

/// Interval membership tolerance in seconds.
pub const BOUNDARY_TOL: f64 = 1e-9;

/// Below this value of `|omega * tau|` the rotated-velocity integrals are
/// evaluated by their Taylor series instead of the closed form.
pub const SERIES_THRESHOLD: f64 = 0.25;

const SERIES_TERMS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("segment duration must be positive and finite, got {0}")]
    NonPositiveDuration(f64),
    #[error("time {t} outside segment interval [{start}, {end}]")]
    OutOfInterval { t: f64, start: f64, end: f64 },
    #[error("segment sequence is empty")]
    Empty,
    #[error("segments do not tile the horizon: gap or overlap of {gap} s at segment {index}")]
    NotContiguous { index: usize, gap: f64 },
    #[error("coefficient vector has length {got}, expected {expected}")]
    CoefficientLength { expected: usize, got: usize },
}

/// Which time derivative of a trajectory to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Derivative {
    Position,
    Velocity,
    Acceleration,
}

impl Derivative {
    pub const ALL: [Derivative; 3] = [
        Derivative::Position,
        Derivative::Velocity,
        Derivative::Acceleration,
    ];

    pub fn order(self) -> usize {
        match self {
            Derivative::Position => 0,
            Derivative::Velocity => 1,
            Derivative::Acceleration => 2,
        }
    }
}

/// Position, velocity and acceleration at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

impl KinematicState {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
        }
    }

    pub fn get(&self, d: Derivative) -> Vector3<f64> {
        match d {
            Derivative::Position => self.position,
            Derivative::Velocity => self.velocity,
            Derivative::Acceleration => self.acceleration,
        }
    }

    /// Expresses the state in a frame with the given origin and axes (columns of `rotation`).
    pub fn to_frame(&self, origin: &Vector3<f64>, rotation: &Matrix3<f64>) -> Self {
        let rt = rotation.transpose();
        Self {
            position: rt * (self.position - origin),
            velocity: rt * self.velocity,
            acceleration: rt * self.acceleration,
        }
    }

    /// Inverse of [`KinematicState::to_frame`].
    pub fn from_frame(&self, origin: &Vector3<f64>, rotation: &Matrix3<f64>) -> Self {
        Self {
            position: rotation * self.position + origin,
            velocity: rotation * self.velocity,
            acceleration: rotation * self.acceleration,
        }
    }
}

/// Quintic basis `[t^5, t^4, t^3, t^2, t, 1]`.
pub fn eval_basis(t: f64) -> [f64; 6] {
    basis_derivative(t, Derivative::Position)
}

/// Derivative of the quintic basis with respect to `t`.
pub fn basis_derivative(t: f64, d: Derivative) -> [f64; 6] {
    let k = d.order();
    let mut out = [0.0; 6];
    for (i, slot) in out.iter_mut().enumerate() {
        let p = 5 - i;
        if p < k {
            continue;
        }
        let falling: f64 = (0..k).map(|j| (p - j) as f64).product();
        *slot = falling * t.powi((p - k) as i32);
    }
    out
}

fn dot6(a: &[f64; 6], b: &[f64; 6]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_duration(duration: f64) -> Result<(), SplineError> {
    if duration.is_finite() && duration > 0.0 {
        Ok(())
    } else {
        Err(SplineError::NonPositiveDuration(duration))
    }
}

fn local_time(t: f64, t_start: f64, duration: f64) -> Result<f64, SplineError> {
    let end = t_start + duration;
    if !(t >= t_start - BOUNDARY_TOL && t <= end + BOUNDARY_TOL) {
        return Err(SplineError::OutOfInterval {
            t,
            start: t_start,
            end,
        });
    }
    Ok((t - t_start).clamp(0.0, duration))
}

/// Quintic segment, one polynomial per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AirSegment {
    pub coeffs: [[f64; 6]; 3],
    pub t_start: f64,
    pub duration: f64,
}

impl AirSegment {
    pub const NUM_VARS: usize = 18;

    pub fn new(coeffs: [[f64; 6]; 3], t_start: f64, duration: f64) -> Result<Self, SplineError> {
        check_duration(duration)?;
        Ok(Self {
            coeffs,
            t_start,
            duration,
        })
    }

    /// Builds the segment from a stacked `[x; y; z]` coefficient slice of length 18.
    pub fn from_slice(coeffs: &[f64], t_start: f64, duration: f64) -> Result<Self, SplineError> {
        if coeffs.len() != Self::NUM_VARS {
            return Err(SplineError::CoefficientLength {
                expected: Self::NUM_VARS,
                got: coeffs.len(),
            });
        }
        let mut c = [[0.0; 6]; 3];
        for (axis, row) in c.iter_mut().enumerate() {
            row.copy_from_slice(&coeffs[axis * 6..axis * 6 + 6]);
        }
        Self::new(c, t_start, duration)
    }

    /// Quintic Hermite segment matching position, velocity and acceleration at both ends.
    pub fn hermite(
        t_start: f64,
        duration: f64,
        start: &KinematicState,
        end: &KinematicState,
    ) -> Result<Self, SplineError> {
        check_duration(duration)?;
        let d = duration;
        let m = Matrix3::new(
            d.powi(5),
            d.powi(4),
            d.powi(3),
            5.0 * d.powi(4),
            4.0 * d.powi(3),
            3.0 * d * d,
            20.0 * d.powi(3),
            12.0 * d * d,
            6.0 * d,
        );
        let lu = m.lu();
        let mut coeffs = [[0.0; 6]; 3];
        for (axis, c) in coeffs.iter_mut().enumerate() {
            let p0 = start.position[axis];
            let v0 = start.velocity[axis];
            let a0 = start.acceleration[axis];
            let c3 = 0.5 * a0;
            let rhs = Vector3::new(
                end.position[axis] - (p0 + v0 * d + c3 * d * d),
                end.velocity[axis] - (v0 + 2.0 * c3 * d),
                end.acceleration[axis] - 2.0 * c3,
            );
            let high = lu.solve(&rhs).unwrap_or_else(Vector3::zeros);
            *c = [high[0], high[1], high[2], c3, v0, p0];
        }
        Self::new(coeffs, t_start, duration)
    }

    pub fn end(&self) -> f64 {
        self.t_start + self.duration
    }

    pub fn eval(&self, t: f64) -> Result<KinematicState, SplineError> {
        let tau = local_time(t, self.t_start, self.duration)?;
        Ok(self.eval_local(tau))
    }

    pub fn eval_local(&self, tau: f64) -> KinematicState {
        let b0 = basis_derivative(tau, Derivative::Position);
        let b1 = basis_derivative(tau, Derivative::Velocity);
        let b2 = basis_derivative(tau, Derivative::Acceleration);
        let axis = |b: &[f64; 6]| {
            Vector3::new(
                dot6(b, &self.coeffs[0]),
                dot6(b, &self.coeffs[1]),
                dot6(b, &self.coeffs[2]),
            )
        };
        KinematicState {
            position: axis(&b0),
            velocity: axis(&b1),
            acceleration: axis(&b2),
        }
    }

    /// The 3x18 map from stacked coefficients to the requested derivative at local time `tau`.
    pub fn basis(tau: f64, d: Derivative) -> Matrix3xX<f64> {
        let b = basis_derivative(tau, d);
        let mut m = Matrix3xX::zeros(Self::NUM_VARS);
        for axis in 0..3 {
            for (i, v) in b.iter().enumerate() {
                m[(axis, axis * 6 + i)] = *v;
            }
        }
        m
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.coeffs.iter().flatten().copied().collect()
    }
}

/// `C_k = int_0^tau u^k cos(w u) du` and `S_k = int_0^tau u^k sin(w u) du` for k = 0, 1, 2.
pub fn rotated_moments(omega: f64, tau: f64) -> ([f64; 3], [f64; 3]) {
    if (omega * tau).abs() < SERIES_THRESHOLD {
        rotated_moments_series(omega, tau)
    } else {
        rotated_moments_closed(omega, tau)
    }
}

fn rotated_moments_closed(w: f64, tau: f64) -> ([f64; 3], [f64; 3]) {
    let (s, c) = (w * tau).sin_cos();
    let w2 = w * w;
    let w3 = w2 * w;
    let cos_m = [
        s / w,
        tau * s / w + (c - 1.0) / w2,
        tau * tau * s / w + 2.0 * tau * c / w2 - 2.0 * s / w3,
    ];
    let sin_m = [
        (1.0 - c) / w,
        -tau * c / w + s / w2,
        -tau * tau * c / w + 2.0 * tau * s / w2 + 2.0 * (c - 1.0) / w3,
    ];
    (cos_m, sin_m)
}

fn rotated_moments_series(w: f64, tau: f64) -> ([f64; 3], [f64; 3]) {
    let mut cos_m = [0.0; 3];
    let mut sin_m = [0.0; 3];
    for k in 0..3 {
        // term_j = (-1)^j (w tau)^n / n! * tau^(k+1) / (k + n + 1), n = 2j (cos) or 2j + 1 (sin)
        let mut pow_over_fact = 1.0;
        let mut sign = 1.0;
        let base = tau.powi(k as i32 + 1);
        let wt = w * tau;
        for n in 0..(2 * SERIES_TERMS) {
            if n > 0 {
                pow_over_fact *= wt / n as f64;
            }
            let term = pow_over_fact * base / (k + n + 1) as f64;
            if n % 2 == 0 {
                cos_m[k] += sign * term;
            } else {
                sin_m[k] += sign * term;
                sign = -sign;
            }
        }
    }
    (cos_m, sin_m)
}

/// Rolling-contact segment.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactSegment {
    /// Rolling speed coefficients: `v(tau) = alpha[0] + alpha[1] tau + alpha[2] tau^2`.
    pub alpha: [f64; 3],
    pub x0: f64,
    pub y0: f64,
    pub omega: f64,
    pub t_start: f64,
    pub duration: f64,
}

impl ContactSegment {
    pub const NUM_VARS: usize = 5;

    pub fn new(
        alpha: [f64; 3],
        x0: f64,
        y0: f64,
        omega: f64,
        t_start: f64,
        duration: f64,
    ) -> Result<Self, SplineError> {
        check_duration(duration)?;
        Ok(Self {
            alpha,
            x0,
            y0,
            omega,
            t_start,
            duration,
        })
    }

    /// Builds the segment from `[alpha0, alpha1, alpha2, x0, y0]`.
    pub fn from_slice(
        xi: &[f64],
        omega: f64,
        t_start: f64,
        duration: f64,
    ) -> Result<Self, SplineError> {
        if xi.len() != Self::NUM_VARS {
            return Err(SplineError::CoefficientLength {
                expected: Self::NUM_VARS,
                got: xi.len(),
            });
        }
        Self::new(
            [xi[0], xi[1], xi[2]],
            xi[3],
            xi[4],
            omega,
            t_start,
            duration,
        )
    }

    pub fn end(&self) -> f64 {
        self.t_start + self.duration
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.alpha[0],
            self.alpha[1],
            self.alpha[2],
            self.x0,
            self.y0,
        ]
    }

    pub fn eval(&self, t: f64) -> Result<KinematicState, SplineError> {
        let tau = local_time(t, self.t_start, self.duration)?;
        Ok(self.eval_local(tau))
    }

    pub fn eval_local(&self, tau: f64) -> KinematicState {
        let xi = self.to_vec();
        let apply = |m: Matrix3xX<f64>| -> Vector3<f64> {
            let mut v = Vector3::zeros();
            for (j, x) in xi.iter().enumerate() {
                v += m.column(j) * *x;
            }
            v
        };
        KinematicState {
            position: apply(Self::basis(
                self.omega,
                self.t_start,
                tau,
                Derivative::Position,
            )),
            velocity: apply(Self::basis(
                self.omega,
                self.t_start,
                tau,
                Derivative::Velocity,
            )),
            acceleration: apply(Self::basis(
                self.omega,
                self.t_start,
                tau,
                Derivative::Acceleration,
            )),
        }
    }

    /// Rolling speed along the heading (before rotation into the frame).
    pub fn rolling_speed(&self, tau: f64) -> f64 {
        self.alpha[0] + self.alpha[1] * tau + self.alpha[2] * tau * tau
    }

    /// Heading angle at local time `tau`.
    pub fn heading(&self, tau: f64) -> f64 {
        self.omega * (self.t_start + tau)
    }

    /// The 3x5 map from `[alpha0, alpha1, alpha2, x0, y0]` to the requested
    /// derivative. The z row is identically zero.
    pub fn basis(omega: f64, t_start: f64, tau: f64, d: Derivative) -> Matrix3xX<f64> {
        let mut m = Matrix3xX::zeros(Self::NUM_VARS);
        let phi0 = omega * t_start;
        match d {
            Derivative::Position => {
                let (cm, sm) = rotated_moments(omega, tau);
                let (s0, c0) = phi0.sin_cos();
                for k in 0..3 {
                    m[(0, k)] = c0 * cm[k] - s0 * sm[k];
                    m[(1, k)] = s0 * cm[k] + c0 * sm[k];
                }
                m[(0, 3)] = 1.0;
                m[(1, 4)] = 1.0;
            }
            Derivative::Velocity => {
                let (s, c) = (phi0 + omega * tau).sin_cos();
                let p = [1.0, tau, tau * tau];
                for k in 0..3 {
                    m[(0, k)] = c * p[k];
                    m[(1, k)] = s * p[k];
                }
            }
            Derivative::Acceleration => {
                // d/dt [R(phi) e_x v] = R(phi) (e_x dv + omega e_y v)
                let (s, c) = (phi0 + omega * tau).sin_cos();
                let p = [1.0, tau, tau * tau];
                let dp = [0.0, 1.0, 2.0 * tau];
                for k in 0..3 {
                    m[(0, k)] = c * dp[k] - s * omega * p[k];
                    m[(1, k)] = s * dp[k] + c * omega * p[k];
                }
            }
        }
        m
    }
}

/// Acceleration Hessian of an air segment: `xi^T Q xi = 2 int_0^T r''^T W r'' dt`.
pub fn accel_hessian_air(
    duration: f64,
    weight: &Vector3<f64>,
) -> Result<DMatrix<f64>, SplineError> {
    check_duration(duration)?;
    let mut q = DMatrix::zeros(AirSegment::NUM_VARS, AirSegment::NUM_VARS);
    for axis in 0..3 {
        let w = weight[axis];
        if w == 0.0 {
            continue;
        }
        for i in 0..4 {
            let p = (5 - i) as i32;
            for j in 0..4 {
                let r = (5 - j) as i32;
                let e = p + r - 3;
                let v = (p * (p - 1) * r * (r - 1)) as f64 * duration.powi(e) / e as f64;
                q[(axis * 6 + i, axis * 6 + j)] = 2.0 * w * v;
            }
        }
    }
    Ok(q)
}

/// Acceleration Hessian of a contact segment over `[alpha0, alpha1, alpha2, x0, y0]`.
///
/// `|r''|^2 = v'^2 + omega^2 v^2` because the rotation is orthonormal and the
/// two contributions are orthogonal, so the integral is polynomial.
pub fn accel_hessian_contact(
    duration: f64,
    omega: f64,
    weight: f64,
) -> Result<DMatrix<f64>, SplineError> {
    check_duration(duration)?;
    let mut q = DMatrix::zeros(ContactSegment::NUM_VARS, ContactSegment::NUM_VARS);
    let w2 = omega * omega;
    for i in 0..3 {
        for j in 0..3 {
            let e = (i + j + 1) as i32;
            let mut v = w2 * duration.powi(e) / e as f64;
            if i >= 1 && j >= 1 {
                let e = (i + j - 1) as i32;
                v += (i * j) as f64 * duration.powi(e) / e as f64;
            }
            q[(i, j)] = 2.0 * weight * v;
        }
    }
    Ok(q)
}

/// One piece of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum Segment {
    Air(AirSegment),
    Contact(ContactSegment),
}

impl Segment {
    pub fn t_start(&self) -> f64 {
        match self {
            Segment::Air(s) => s.t_start,
            Segment::Contact(s) => s.t_start,
        }
    }

    pub fn duration(&self) -> f64 {
        match self {
            Segment::Air(s) => s.duration,
            Segment::Contact(s) => s.duration,
        }
    }

    pub fn end(&self) -> f64 {
        self.t_start() + self.duration()
    }

    pub fn is_contact(&self) -> bool {
        matches!(self, Segment::Contact(_))
    }

    pub fn num_vars(&self) -> usize {
        match self {
            Segment::Air(_) => AirSegment::NUM_VARS,
            Segment::Contact(_) => ContactSegment::NUM_VARS,
        }
    }

    pub fn eval(&self, t: f64) -> Result<KinematicState, SplineError> {
        match self {
            Segment::Air(s) => s.eval(t),
            Segment::Contact(s) => s.eval(t),
        }
    }

    pub fn eval_local(&self, tau: f64) -> KinematicState {
        match self {
            Segment::Air(s) => s.eval_local(tau),
            Segment::Contact(s) => s.eval_local(tau),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Segment::Air(s) => s.to_vec(),
            Segment::Contact(s) => s.to_vec(),
        }
    }
}

/// Residual of the continuity conditions at one junction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JunctionResidual {
    pub time: f64,
    pub position: f64,
    pub velocity: f64,
    /// `None` at air/contact junctions where acceleration may jump.
    pub acceleration: Option<f64>,
}

impl JunctionResidual {
    pub fn max(&self) -> f64 {
        self.position
            .max(self.velocity)
            .max(self.acceleration.unwrap_or(0.0))
    }
}

/// Ordered segments tiling `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSequence {
    segments: Vec<Segment>,
}

impl SegmentSequence {
    pub fn new(segments: Vec<Segment>) -> Result<Self, SplineError> {
        let first = segments.first().ok_or(SplineError::Empty)?;
        if first.t_start().abs() > BOUNDARY_TOL {
            return Err(SplineError::NotContiguous {
                index: 0,
                gap: first.t_start(),
            });
        }
        for (i, pair) in segments.windows(2).enumerate() {
            let gap = pair[1].t_start() - pair[0].end();
            if gap.abs() > BOUNDARY_TOL {
                return Err(SplineError::NotContiguous { index: i + 1, gap });
            }
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.segments.last().map(Segment::end).unwrap_or(0.0)
    }

    /// Index of the segment containing `t`. Junction times belong to the later segment.
    pub fn locate(&self, t: f64) -> Option<usize> {
        if t < -BOUNDARY_TOL || t > self.horizon() + BOUNDARY_TOL {
            return None;
        }
        let idx = self
            .segments
            .iter()
            .position(|s| t < s.end() - BOUNDARY_TOL)
            .unwrap_or(self.segments.len() - 1);
        Some(idx)
    }

    pub fn eval(&self, t: f64) -> Result<KinematicState, SplineError> {
        let idx = self.locate(t).ok_or(SplineError::OutOfInterval {
            t,
            start: 0.0,
            end: self.horizon(),
        })?;
        self.segments[idx].eval(t)
    }

    /// Evaluates at `t` clamped to `[0, horizon]`.
    pub fn eval_clamped(&self, t: f64) -> KinematicState {
        let t = t.clamp(0.0, self.horizon());
        let idx = self.locate(t).unwrap_or(self.segments.len() - 1);
        let seg = &self.segments[idx];
        seg.eval_local((t - seg.t_start()).clamp(0.0, seg.duration()))
    }

    pub fn junction_residuals(&self) -> Vec<JunctionResidual> {
        self.segments
            .windows(2)
            .map(|pair| {
                let a = pair[0].eval_local(pair[0].duration());
                let b = pair[1].eval_local(0.0);
                let both_air = !pair[0].is_contact() && !pair[1].is_contact();
                JunctionResidual {
                    time: pair[1].t_start(),
                    position: (a.position - b.position).amax(),
                    velocity: (a.velocity - b.velocity).amax(),
                    acceleration: both_air.then(|| (a.acceleration - b.acceleration).amax()),
                }
            })
            .collect()
    }

    pub fn max_junction_residual(&self) -> f64 {
        self.junction_residuals()
            .iter()
            .map(JunctionResidual::max)
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gauss_legendre_64() -> (Vec<f64>, Vec<f64>) {
        // Newton iteration on Legendre polynomials; independent of the closed form.
        let n = 64;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    let (mut p0, mut p1) = (1.0, x);
                    for k in 2..=n {
                        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                        p0 = p1;
                        p1 = p2;
                    }
                    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                    weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
                    break;
                }
            }
            nodes[i] = x;
        }
        (nodes, weights)
    }

    fn quadrature_position(seg: &ContactSegment, tau: f64) -> Vector3<f64> {
        let (nodes, weights) = gauss_legendre_64();
        let mut acc = Vector3::new(seg.x0, seg.y0, 0.0);
        for (x, w) in nodes.iter().zip(&weights) {
            let s = 0.5 * tau * (x + 1.0);
            let phi = seg.omega * (seg.t_start + s);
            let v = seg.rolling_speed(s);
            acc += 0.5 * tau * w * Vector3::new(phi.cos() * v, phi.sin() * v, 0.0);
        }
        acc
    }

    #[test]
    fn basis_values() {
        assert_eq!(eval_basis(0.0), [0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(eval_basis(1.0), [1.0; 6]);
        assert_eq!(eval_basis(2.0), [32.0, 16.0, 8.0, 4.0, 2.0, 1.0]);
        assert_eq!(
            basis_derivative(2.0, Derivative::Velocity),
            [80.0, 32.0, 12.0, 4.0, 1.0, 0.0]
        );
        assert_eq!(
            basis_derivative(2.0, Derivative::Acceleration),
            [160.0, 48.0, 12.0, 2.0, 0.0, 0.0]
        );
    }

    #[test]
    fn air_constant_and_ramp() {
        let mut c = [[0.0; 6]; 3];
        c[0][5] = 1.0;
        c[1][5] = -2.0;
        c[2][5] = 0.3;
        let seg = AirSegment::new(c, 0.0, 1.0).unwrap();
        let s = seg.eval(0.4).unwrap();
        assert_eq!(s.position, Vector3::new(1.0, -2.0, 0.3));
        assert_eq!(s.velocity, Vector3::zeros());
        assert_eq!(s.acceleration, Vector3::zeros());

        let mut c = [[0.0; 6]; 3];
        c[0] = [0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let seg = AirSegment::new(c, 0.0, 1.0).unwrap();
        let s = seg.eval(0.5).unwrap();
        assert_eq!(s.position.x, 0.5);
        assert_eq!(s.velocity.x, 1.0);
        assert_eq!(s.acceleration.x, 0.0);
    }

    #[test]
    fn air_rejects_out_of_interval_and_bad_duration() {
        let seg = AirSegment::new([[0.0; 6]; 3], 1.0, 0.5).unwrap();
        assert!(seg.eval(1.5 + 0.5e-9).is_ok());
        assert!(seg.eval(1.0 - 0.5e-9).is_ok());
        assert!(matches!(
            seg.eval(1.6),
            Err(SplineError::OutOfInterval { .. })
        ));
        assert!(matches!(
            AirSegment::new([[0.0; 6]; 3], 0.0, 0.0),
            Err(SplineError::NonPositiveDuration(_))
        ));
        assert!(accel_hessian_air(-1.0, &Vector3::repeat(1.0)).is_err());
        assert!(accel_hessian_contact(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn contact_zero_yaw_rate() {
        let seg = ContactSegment::new([1.0, 0.0, 0.0], 0.0, 0.0, 0.0, 0.0, 1.0).unwrap();
        let s = seg.eval(0.7).unwrap();
        assert_relative_eq!(s.position, Vector3::new(0.7, 0.0, 0.0), epsilon = 1e-15);

        let seg = ContactSegment::new([0.3, -0.7, 1.1], 0.2, -0.45, 0.0, 0.0, 1.0).unwrap();
        for i in 0..=10 {
            let s = seg.eval(i as f64 * 0.1).unwrap();
            assert_eq!(s.position.y, -0.45);
            assert_eq!(s.position.z, 0.0);
        }
    }

    #[test]
    fn contact_matches_quadrature() {
        let seg = ContactSegment::new([1.0, 0.2, -0.1], 0.0, 0.0, 0.5, 0.0, 1.0).unwrap();
        let s = seg.eval(1.0).unwrap();
        let q = quadrature_position(&seg, 1.0);
        assert!((s.position - q).amax() < 1e-9, "{} vs {}", s.position, q);
    }

    #[test]
    fn contact_series_switch_is_continuous() {
        let tau = 0.8;
        let omega_eps = SERIES_THRESHOLD / tau;
        for sign in [-1.0, 1.0] {
            let below = ContactSegment::new(
                [0.9, -0.4, 0.6],
                0.1,
                0.2,
                sign * omega_eps * (1.0 - 1e-12),
                0.0,
                tau,
            )
            .unwrap();
            let above = ContactSegment {
                omega: sign * omega_eps * (1.0 + 1e-12),
                ..below.clone()
            };
            let a = below.eval_local(tau).position;
            let b = above.eval_local(tau).position;
            assert!((a - b).amax() < 1e-9);
        }
    }

    #[test]
    fn contact_velocity_has_no_lateral_component() {
        let seg = ContactSegment::new([0.5, 0.3, -0.2], 0.0, 0.0, 0.8, 0.4, 0.6).unwrap();
        for i in 0..=12 {
            let tau = i as f64 * 0.05;
            let s = seg.eval_local(tau);
            let phi = seg.heading(tau);
            let lateral = Vector3::new(-phi.sin(), phi.cos(), 0.0);
            assert!(s.velocity.dot(&lateral).abs() < 1e-15);
            assert_eq!(s.velocity.z, 0.0);
            assert_eq!(s.position.z, 0.0);
        }
    }

    #[test]
    fn hessian_weight_zero_and_structure() {
        let q = accel_hessian_air(0.4, &Vector3::zeros()).unwrap();
        assert!(q.iter().all(|v| *v == 0.0));
        let q = accel_hessian_contact(0.4, 0.7, 0.0).unwrap();
        assert!(q.iter().all(|v| *v == 0.0));
        let q = accel_hessian_contact(0.4, 0.0, 1.0).unwrap();
        for k in 0..5 {
            assert_eq!(q[(3, k)], 0.0);
            assert_eq!(q[(4, k)], 0.0);
            assert_eq!(q[(k, 3)], 0.0);
            assert_eq!(q[(k, 4)], 0.0);
        }
        // linear motion has zero acceleration cost
        let q = accel_hessian_air(0.7, &Vector3::repeat(1.0)).unwrap();
        let mut xi = nalgebra::DVector::zeros(18);
        for axis in 0..3 {
            xi[axis * 6 + 4] = 1.3 - axis as f64;
            xi[axis * 6 + 5] = 0.2 * axis as f64;
        }
        assert_eq!((xi.transpose() * &q * &xi)[0], 0.0);
    }

    #[test]
    fn hermite_matches_boundary_data() {
        let a = KinematicState {
            position: Vector3::new(0.1, 0.2, 0.3),
            velocity: Vector3::new(1.0, -1.0, 0.5),
            acceleration: Vector3::new(0.0, 2.0, -1.0),
        };
        let b = KinematicState {
            position: Vector3::new(0.5, 0.0, 0.1),
            velocity: Vector3::new(0.0, 0.3, 0.0),
            acceleration: Vector3::new(1.0, 0.0, 0.0),
        };
        let seg = AirSegment::hermite(0.3, 0.45, &a, &b).unwrap();
        let s0 = seg.eval(0.3).unwrap();
        let s1 = seg.eval(0.75).unwrap();
        for d in Derivative::ALL {
            assert!((s0.get(d) - a.get(d)).amax() < 1e-12);
            assert!((s1.get(d) - b.get(d)).amax() < 1e-10);
        }
    }

    #[test]
    fn sequence_tiling_and_lookup() {
        let a = Segment::Air(AirSegment::new([[0.0; 6]; 3], 0.0, 0.5).unwrap());
        let b = Segment::Air(AirSegment::new([[0.0; 6]; 3], 0.5, 0.25).unwrap());
        let seq = SegmentSequence::new(vec![a.clone(), b.clone()]).unwrap();
        assert_eq!(seq.horizon(), 0.75);
        assert_eq!(seq.locate(0.5), Some(1));
        assert_eq!(seq.locate(0.75), Some(1));
        assert_eq!(seq.locate(0.0), Some(0));
        assert_eq!(seq.locate(0.8), None);
        let gap = Segment::Air(AirSegment::new([[0.0; 6]; 3], 0.6, 0.25).unwrap());
        assert!(matches!(
            SegmentSequence::new(vec![a, gap]),
            Err(SplineError::NotContiguous { .. })
        ));
        assert!(matches!(
            SegmentSequence::new(vec![]),
            Err(SplineError::Empty)
        ));
    }
}
