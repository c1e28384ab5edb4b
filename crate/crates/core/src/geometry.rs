//! Frames, poses, the 4-DoF transform and pose interpolation.
//!
//! Both agents run gravity-aligned odometry, so their local frames differ by
//! a translation and a rotation about +z only. Headings are measured
//! counterclockwise about +z from the host frame to the target frame.

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::num::Real;

/// Tolerance on the quaternion norm accepted by [`Pose::new`].
pub const QUATERNION_NORM_TOL: f64 = 1e-9;

/// Timestamped position and orientation of one agent in its own local frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T: Real> {
    pub t: T,
    pub p: Vector3<T>,
    /// Body-to-local rotation. Stored as (x, y, z, w).
    pub q: UnitQuaternion<T>,
}

impl<T: Real> Pose<T> {
    /// Builds a pose from a raw quaternion, rejecting non-unit input.
    ///
    /// The quaternion is stored as given (not renormalized) so that values
    /// read back from a log are bit-identical to the ones written.
    pub fn new(t: T, p: Vector3<T>, q: Quaternion<T>) -> Result<Self> {
        if !t.is_finite_val() || !p.iter().all(|v| v.is_finite_val()) {
            return Err(Error::InvalidInput("non-finite pose".into()));
        }
        let norm = q.norm();
        if (norm - T::ONE).abs() > T::lit(QUATERNION_NORM_TOL) {
            return Err(Error::InvalidInput(format!(
                "quaternion norm {} is not 1",
                norm.to_f64_lossy()
            )));
        }
        Ok(Self {
            t,
            p,
            q: UnitQuaternion::new_unchecked(q),
        })
    }

    pub fn from_yaw(t: T, p: Vector3<T>, yaw: T) -> Self {
        Self {
            t,
            p,
            q: UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
        }
    }
}

/// Relative transform between the two local frames: translation and heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform4DoF<T: Real> {
    pub t: Vector3<T>,
    /// Heading in `[-pi, pi)`.
    pub theta: T,
}

impl<T: Real> Transform4DoF<T> {
    /// Creates a transform, wrapping `theta` into `[-pi, pi)`.
    pub fn new(t: Vector3<T>, theta: T) -> Self {
        Self {
            t,
            theta: wrap_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), T::ZERO)
    }

    pub fn rotation(&self) -> Matrix3<T> {
        heading_rotation(self.theta)
    }

    /// Maps a point from the target frame into the host frame.
    pub fn apply(&self, p: &Vector3<T>) -> Vector3<T> {
        apply_transform(self, p)
    }

    /// Homogeneous 4x4 form.
    pub fn to_homogeneous(&self) -> Matrix4<T> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.t);
        m
    }

    /// Parameters in the order `[t_x, t_y, t_z, theta]`.
    pub fn params(&self) -> [T; 4] {
        [self.t.x, self.t.y, self.t.z, self.theta]
    }

    pub fn from_params(p: [T; 4]) -> Self {
        Self::new(Vector3::new(p[0], p[1], p[2]), p[3])
    }

    pub fn is_finite(&self) -> bool {
        self.theta.is_finite_val() && self.t.iter().all(|v| v.is_finite_val())
    }
}

/// Antenna offset in the body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeverArm<T: Real> {
    pub r: Vector3<T>,
}

impl<T: Real> LeverArm<T> {
    pub fn new(r: Vector3<T>) -> Self {
        Self { r }
    }

    pub fn zero() -> Self {
        Self { r: Vector3::zeros() }
    }
}

impl<T: Real> Default for LeverArm<T> {
    fn default() -> Self {
        Self::zero()
    }
}

/// Rotation about +z by `theta`.
pub fn heading_rotation<T: Real>(theta: T) -> Matrix3<T> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(
        c,
        -s,
        T::ZERO, //
        s,
        c,
        T::ZERO, //
        T::ZERO,
        T::ZERO,
        T::ONE,
    )
}

/// `t + C(theta) p`.
pub fn apply_transform<T: Real>(tf: &Transform4DoF<T>, p: &Vector3<T>) -> Vector3<T> {
    tf.t + heading_rotation(tf.theta) * p
}

/// Antenna position in the agent's local odometry frame: `p + R(q) r`.
pub fn antenna_world_position<T: Real>(pose: &Pose<T>, arm: &LeverArm<T>) -> Vector3<T> {
    pose.p + pose.q * arm.r
}

/// Interpolates between two poses: linear in position, slerp in orientation.
pub fn interpolate_pose<T: Real>(a: &Pose<T>, b: &Pose<T>, t: T) -> Result<Pose<T>> {
    if !(a.t < b.t) {
        return Err(Error::InvalidInput(format!(
            "interpolation endpoints not increasing: {} >= {}",
            a.t.to_f64_lossy(),
            b.t.to_f64_lossy()
        )));
    }
    if t < a.t || t > b.t || !t.is_finite_val() {
        return Err(Error::OutOfRange {
            t: t.to_f64_lossy(),
            start: a.t.to_f64_lossy(),
            end: b.t.to_f64_lossy(),
        });
    }
    if t == a.t {
        return Ok(*a);
    }
    if t == b.t {
        return Ok(*b);
    }
    let alpha = (t - a.t) / (b.t - a.t);
    let p = a.p + (b.p - a.p) * alpha;
    // A half-turn between samples has no unique slerp path; fall back to the
    // nearer endpoint.
    let q =
        a.q.try_slerp(&b.q, alpha, T::default_epsilon())
            .unwrap_or(if alpha < T::HALF { a.q } else { b.q });
    Ok(Pose { t, p, q })
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle<T: Real>(theta: T) -> T {
    let pi = T::pi();
    let two_pi = T::two_pi();
    let mut r = theta - two_pi * ((theta + pi) / two_pi).floor();
    if r >= pi {
        r -= two_pi;
    }
    if r < -pi {
        r += two_pi;
    }
    r
}

/// Smallest absolute difference between two headings.
pub fn angle_distance<T: Real>(a: T, b: T) -> T {
    wrap_angle(a - b).abs()
}
