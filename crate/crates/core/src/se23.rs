//! Small-matrix Lie group kernel: SO(3), so(3), SE2(3), the input submanifold
//! of 5x5 matrices, and unit quaternions.
//!
//! Everything here is a pure function over `Copy` values.

use core::ops::Mul;

use libm::{cos, sin, sqrt};
use nalgebra::{Matrix3, SMatrix};

use crate::Error;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat5 = SMatrix<f64, 5, 5>;

/// Frobenius tolerance on `R Rᵀ - I` accepted by [`Rotation::try_from_matrix`].
pub const ORTHO_TOL: f64 = 1e-9;

/// Angle below which the exponential coefficients switch to their Taylor series.
const SERIES_THRESHOLD: f64 = 1e-2;

/// Element of SO(3), stored as a direction cosine matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Checks orthogonality and orientation before accepting `m`.
    pub fn try_from_matrix(m: Mat3) -> Result<Self, Error> {
        let drift = orthogonality_drift(&m);
        let det = m.determinant();
        if !drift.is_finite() || drift > ORTHO_TOL || (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::NotARotation { drift, det });
        }
        Ok(Rotation(m))
    }

    /// Wraps `m` without checking. Callers guarantee `m` is a rotation.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    /// Projects a nearly orthogonal matrix back onto SO(3) when its drift
    /// exceeds [`ORTHO_TOL`]; otherwise returns it untouched.
    pub fn renormalized(m: Mat3) -> Self {
        if orthogonality_drift(&m) <= ORTHO_TOL {
            return Rotation(m);
        }
        Rotation(polar_project(m))
    }

    /// Rotation by `angle` radians about the z axis.
    pub fn about_z(angle: f64) -> Self {
        so3_exp(&Vec3::new(0.0, 0.0, angle))
    }

    #[inline]
    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// `‖M Mᵀ − I‖_F`.
pub fn orthogonality_drift(m: &Mat3) -> f64 {
    (m * m.transpose() - Mat3::identity()).norm()
}

// Newton-Schulz iteration towards the orthogonal polar factor; quadratic
// convergence from the small drifts seen after long exponential chains.
fn polar_project(mut m: Mat3) -> Mat3 {
    for _ in 0..8 {
        let gram = m.transpose() * m;
        m = m * (Mat3::identity() * 3.0 - gram) * 0.5;
        if orthogonality_drift(&m) < 1e-15 {
            break;
        }
    }
    m
}

/// Element of so(3). Only ever built from a vector or by antisymmetric
/// projection, so it is skew-symmetric by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewMatrix(Mat3);

impl SkewMatrix {
    pub fn zero() -> Self {
        SkewMatrix(Mat3::zeros())
    }

    #[inline]
    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }
}

/// `[x]×`, the cross-product matrix of `x`.
pub fn skew(x: &Vec3) -> SkewMatrix {
    SkewMatrix(skew_matrix(x))
}

#[inline]
pub(crate) fn skew_matrix(x: &Vec3) -> Mat3 {
    Mat3::new(0.0, -x.z, x.y, x.z, 0.0, -x.x, -x.y, x.x, 0.0)
}

/// Inverse of [`skew`].
pub fn vex(m: &SkewMatrix) -> Vec3 {
    Vec3::new(m.0[(2, 1)], m.0[(0, 2)], m.0[(1, 0)])
}

/// `½(M − Mᵀ)`.
pub fn antisym_project(m: &Mat3) -> SkewMatrix {
    SkewMatrix((m - m.transpose()) * 0.5)
}

/// `vex(½(M − Mᵀ))`.
pub fn upsilon(m: &Mat3) -> Vec3 {
    vex(&antisym_project(m))
}

/// Normalized attitude distance `¼ Tr{I − R}`, in `[0, 1]`.
pub fn rot_distance(r: &Rotation) -> f64 {
    0.25 * (3.0 - r.trace())
}

/// Weighted attitude distance `¼ Tr{M − MR̃}` given `M` and the product `MR̃`.
pub fn weighted_rot_distance(m: &Mat3, m_r: &Mat3) -> f64 {
    0.25 * (m - m_r).trace()
}

/// Coefficients `(sin θ/θ, (1−cos θ)/θ², (θ−sin θ)/θ³, (θ²/2+cos θ−1)/θ⁴)`.
fn exp_coefficients(theta: f64) -> [f64; 4] {
    if theta < SERIES_THRESHOLD {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        let t6 = t4 * t2;
        [
            1.0 - t2 / 6.0 + t4 / 120.0 - t6 / 5040.0,
            0.5 - t2 / 24.0 + t4 / 720.0 - t6 / 40320.0,
            1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0 - t6 / 362880.0,
            1.0 / 24.0 - t2 / 720.0 + t4 / 40320.0 - t6 / 3628800.0,
        ]
    } else {
        let (s, c) = (sin(theta), cos(theta));
        let t2 = theta * theta;
        [
            s / theta,
            (1.0 - c) / t2,
            (theta - s) / (t2 * theta),
            (0.5 * t2 + c - 1.0) / (t2 * t2),
        ]
    }
}

/// Rodrigues exponential of `[x]×`.
pub fn so3_exp(x: &Vec3) -> Rotation {
    let k = skew_matrix(x);
    let [a, b, _, _] = exp_coefficients(x.norm());
    Rotation::renormalized(Mat3::identity() + k * a + k * k * b)
}

/// The series `Σ Kⁿ/(n+1)!` and `Σ Kⁿ/(n+2)!` for `K = [phi]×`, i.e. the
/// left Jacobian of SO(3) and its second-order companion.
pub fn so3_jacobians(phi: &Vec3) -> (Mat3, Mat3) {
    let k = skew_matrix(phi);
    let k2 = k * k;
    let [_, b, c, d] = exp_coefficients(phi.norm());
    let j1 = Mat3::identity() + k * b + k2 * c;
    let j2 = Mat3::identity() * 0.5 + k * c + k2 * d;
    (j1, j2)
}

/// Element of SE2(3): attitude, inertial position and inertial velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    pub rot: Rotation,
    pub pos: Vec3,
    pub vel: Vec3,
}

impl NavState {
    pub fn new(rot: Rotation, pos: Vec3, vel: Vec3) -> Self {
        NavState { rot, pos, vel }
    }

    pub fn identity() -> Self {
        NavState::new(Rotation::identity(), Vec3::zeros(), Vec3::zeros())
    }

    /// The homogeneous 5x5 embedding.
    pub fn to_matrix(&self) -> Mat5 {
        let mut x = Mat5::identity();
        x.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rot.matrix());
        x.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.pos);
        x.fixed_view_mut::<3, 1>(0, 4).copy_from(&self.vel);
        x
    }

    /// Reads `(R, P, V)` back out of a 5x5 matrix, checking the bottom rows
    /// and re-orthonormalizing the attitude block if it drifted.
    pub fn from_matrix(x: &Mat5) -> Result<Self, Error> {
        let bottom = x.fixed_view::<2, 5>(3, 0);
        let expected = Mat5::identity().fixed_view::<2, 5>(3, 0).into_owned();
        let off = (bottom - expected).norm();
        if !(off <= 1e-9) {
            return Err(Error::NotOnGroup(off));
        }
        let rot: Mat3 = x.fixed_view::<3, 3>(0, 0).into_owned();
        Ok(NavState {
            rot: Rotation::renormalized(rot),
            pos: x.fixed_view::<3, 1>(0, 3).into_owned(),
            vel: x.fixed_view::<3, 1>(0, 4).into_owned(),
        })
    }

    /// Reads `R, P, V` from the first three rows, ignoring the bottom two.
    /// Used on products whose bottom rows are standard by construction.
    pub fn from_top_rows(x: &Mat5) -> Self {
        let rot: Mat3 = x.fixed_view::<3, 3>(0, 0).into_owned();
        NavState {
            rot: Rotation::renormalized(rot),
            pos: x.fixed_view::<3, 1>(0, 3).into_owned(),
            vel: x.fixed_view::<3, 1>(0, 4).into_owned(),
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rot.transpose();
        NavState::new(rt, -(rt * self.pos), -(rt * self.vel))
    }

    pub fn compose(&self, other: &NavState) -> Self {
        NavState::new(
            self.rot * other.rot,
            self.rot * other.pos + self.pos,
            self.rot * other.vel + self.vel,
        )
    }
}

/// `u([Ω]×, V, a, κ)`: element of the input submanifold of 5x5 matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentElement {
    pub omega_skew: SkewMatrix,
    pub v: Vec3,
    pub a: Vec3,
    pub kappa: f64,
}

impl TangentElement {
    pub fn new(omega: &Vec3, v: Vec3, a: Vec3, kappa: f64) -> Self {
        TangentElement {
            omega_skew: skew(omega),
            v,
            a,
            kappa,
        }
    }

    pub fn zero() -> Self {
        TangentElement::new(&Vec3::zeros(), Vec3::zeros(), Vec3::zeros(), 0.0)
    }

    pub fn omega(&self) -> Vec3 {
        vex(&self.omega_skew)
    }

    pub fn to_matrix(&self) -> Mat5 {
        let mut u = Mat5::zeros();
        u.fixed_view_mut::<3, 3>(0, 0).copy_from(self.omega_skew.matrix());
        u.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.v);
        u.fixed_view_mut::<3, 1>(0, 4).copy_from(&self.a);
        u[(4, 3)] = self.kappa;
        u
    }

    pub fn scaled(&self, s: f64) -> Self {
        TangentElement {
            omega_skew: SkewMatrix(self.omega_skew.0 * s),
            v: self.v * s,
            a: self.a * s,
            kappa: self.kappa * s,
        }
    }
}

/// `exp(u·dt)` for the full 5x5 embedding, including the κ coupling that
/// feeds the a-column into the fourth column.
///
/// With `A = [Ω]×dt`, `J₁ = Σ Aⁿ/(n+1)!`, `J₂ = Σ Aⁿ/(n+2)!`:
/// column 4 is `(dt J₁ V + κ dt² J₂ a, 1, κ dt)` and column 5 is
/// `(dt J₁ a, 0, 1)`.
pub fn se23_exp(u: &TangentElement, dt: f64) -> Mat5 {
    let phi = u.omega() * dt;
    let rot = so3_exp(&phi);
    let (j1, j2) = so3_jacobians(&phi);
    let mut x = Mat5::identity();
    x.fixed_view_mut::<3, 3>(0, 0).copy_from(rot.matrix());
    let col4 = j1 * u.v * dt + j2 * u.a * (u.kappa * dt * dt);
    let col5 = j1 * u.a * dt;
    x.fixed_view_mut::<3, 1>(0, 3).copy_from(&col4);
    x.fixed_view_mut::<3, 1>(0, 4).copy_from(&col5);
    x[(4, 3)] = u.kappa * dt;
    x
}

/// Unit quaternion `(q0, q)` with `q0 ≥ 0` after normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    pub q0: f64,
    pub q: Vec3,
}

impl UnitQuaternion {
    pub fn identity() -> Self {
        UnitQuaternion {
            q0: 1.0,
            q: Vec3::zeros(),
        }
    }

    /// Normalizes `(q0, q)` and fixes the sign so that `q0 ≥ 0`.
    pub fn new_normalize(q0: f64, q: Vec3) -> Result<Self, Error> {
        let n = sqrt(q0 * q0 + q.norm_squared());
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::DegenerateQuaternion);
        }
        let s = if q0 < 0.0 { -1.0 / n } else { 1.0 / n };
        Ok(UnitQuaternion {
            q0: q0 * s,
            q: q * s,
        })
    }

    /// Raw constructor without normalization, used to test double cover.
    pub fn from_parts_unchecked(q0: f64, q: Vec3) -> Self {
        UnitQuaternion { q0, q }
    }

    pub fn norm(&self) -> f64 {
        sqrt(self.q0 * self.q0 + self.q.norm_squared())
    }

    pub fn inverse(&self) -> Self {
        UnitQuaternion {
            q0: self.q0,
            q: -self.q,
        }
    }

    /// Quaternion of the rotation `so3_exp(phi)`.
    pub fn exp(phi: &Vec3) -> Self {
        let theta = phi.norm();
        let half = 0.5 * theta;
        // sin(θ/2)/θ, series near zero
        let k = if theta < SERIES_THRESHOLD {
            let t2 = theta * theta;
            0.5 - t2 / 48.0 + t2 * t2 / 3840.0
        } else {
            sin(half) / theta
        };
        UnitQuaternion::new_normalize(cos(half), phi * k).unwrap_or_else(|_| Self::identity())
    }

    /// Quaternion of a rotation matrix (Shepperd's method).
    pub fn from_rotation(r: &Rotation) -> Self {
        let m = r.matrix();
        let tr = m.trace();
        let (q0, q) = if tr > 0.0 {
            let s = 2.0 * sqrt(tr + 1.0);
            (
                0.25 * s,
                Vec3::new(
                    (m[(2, 1)] - m[(1, 2)]) / s,
                    (m[(0, 2)] - m[(2, 0)]) / s,
                    (m[(1, 0)] - m[(0, 1)]) / s,
                ),
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = 2.0 * sqrt(1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]);
            (
                (m[(2, 1)] - m[(1, 2)]) / s,
                Vec3::new(
                    0.25 * s,
                    (m[(0, 1)] + m[(1, 0)]) / s,
                    (m[(0, 2)] + m[(2, 0)]) / s,
                ),
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = 2.0 * sqrt(1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]);
            (
                (m[(0, 2)] - m[(2, 0)]) / s,
                Vec3::new(
                    (m[(0, 1)] + m[(1, 0)]) / s,
                    0.25 * s,
                    (m[(1, 2)] + m[(2, 1)]) / s,
                ),
            )
        } else {
            let s = 2.0 * sqrt(1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]);
            (
                (m[(1, 0)] - m[(0, 1)]) / s,
                Vec3::new(
                    (m[(0, 2)] + m[(2, 0)]) / s,
                    (m[(1, 2)] + m[(2, 1)]) / s,
                    0.25 * s,
                ),
            )
        };
        UnitQuaternion::new_normalize(q0, q).unwrap_or_else(|_| Self::identity())
    }

    /// Spherical linear interpolation from `self` (at 0) to `other` (at 1).
    pub fn slerp(&self, other: &UnitQuaternion, s: f64) -> Self {
        let mut dot = self.q0 * other.q0 + self.q.dot(&other.q);
        let mut b = *other;
        if dot < 0.0 {
            dot = -dot;
            b = UnitQuaternion::from_parts_unchecked(-b.q0, -b.q);
        }
        let (wa, wb) = if dot > 1.0 - 1e-12 {
            (1.0 - s, s)
        } else {
            let theta = libm::acos(dot.min(1.0));
            let st = sin(theta);
            (sin((1.0 - s) * theta) / st, sin(s * theta) / st)
        };
        UnitQuaternion::new_normalize(wa * self.q0 + wb * b.q0, self.q * wa + b.q * wb)
            .unwrap_or(*self)
    }
}

/// `(q0² − ‖q‖²) I + 2 q qᵀ + 2 q0 [q]×`.
pub fn quat_to_rot(q: &UnitQuaternion) -> Rotation {
    let m = Mat3::identity() * (q.q0 * q.q0 - q.q.norm_squared())
        + q.q * q.q.transpose() * 2.0
        + skew_matrix(&q.q) * (2.0 * q.q0);
    Rotation::renormalized(m)
}

/// Raw quaternion product, no normalization.
#[inline]
fn quat_product(a0: f64, a: &Vec3, b0: f64, b: &Vec3) -> (f64, Vec3) {
    (a0 * b0 - a.dot(b), b * a0 + a * b0 + a.cross(b))
}

/// `q1 ⊙ q2`, renormalized.
pub fn quat_mul(q1: &UnitQuaternion, q2: &UnitQuaternion) -> UnitQuaternion {
    let (w, v) = quat_product(q1.q0, &q1.q, q2.q0, &q2.q);
    UnitQuaternion::new_normalize(w, v).unwrap_or_else(|_| UnitQuaternion::identity())
}

/// Vector part of `q ⊙ (0, v) ⊙ q⁻¹`.
pub fn quat_sandwich(q: &UnitQuaternion, v: &Vec3) -> Vec3 {
    let (w1, v1) = quat_product(q.q0, &q.q, 0.0, v);
    let (_, out) = quat_product(w1, &v1, q.q0, &(-q.q));
    out
}
