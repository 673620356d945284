//! Landmark statistics consumed by the filter, and synthetic observations.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::SymmetricEigen;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::se23::{Mat3, NavState, Rotation, Vec3};
use crate::{Error, Result};

/// Relative threshold on the second-smallest eigenvalue of `M`.
pub const RANK_TOL: f64 = 1e-9;

/// Inertial feature with a confidence weight `s > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub id: u32,
    pub p: Vec3,
    pub s: f64,
}

impl Landmark {
    pub fn new(id: u32, p: Vec3, s: f64) -> Result<Self> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::InvalidParameter {
                name: "landmark.s",
                reason: "weight must be positive and finite",
            });
        }
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "landmark.p",
                reason: "position must be finite",
            });
        }
        Ok(Landmark { id, p, s })
    }
}

/// Body-frame measurement `y` of landmark `id`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkObservation {
    pub id: u32,
    pub y: Vec3,
    pub timestamp: f64,
}

/// Weighted landmark statistics for one filter update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementBundle {
    /// Weighted centroid of the observed landmarks.
    pub p_c: Vec3,
    /// Total weight.
    pub s_t: f64,
    pub m: Mat3,
    /// `M R̃`, computed from observations without knowing the true attitude.
    pub m_rtilde: Mat3,
    /// `R̃ᵀ P̃_ε`, the weighted mean of `p − R̂y − P̂`.
    pub rt_pe: Vec3,
}

impl MeasurementBundle {
    /// `‖MR̃‖_I = ¼ Tr{M − MR̃}`.
    pub fn attitude_error(&self) -> f64 {
        crate::se23::weighted_rot_distance(&self.m, &self.m_rtilde)
    }
}

/// Per-landmark constant bias and isotropic Gaussian noise for observations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationNoiseSpec {
    pub bias_y: BTreeMap<u32, Vec3>,
    pub sigma_y: f64,
}

impl ObservationNoiseSpec {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn isotropic(sigma_y: f64) -> Self {
        ObservationNoiseSpec {
            bias_y: BTreeMap::new(),
            sigma_y,
        }
    }
}

/// Centroid, total weight and `M = Σ sᵢ pᵢ pᵢᵀ − s_T p_c p_cᵀ`.
///
/// `M` is accumulated in centered form, which is algebraically identical and
/// avoids cancellation for landmarks far from the origin.
pub fn landmark_stats(landmarks: &[Landmark]) -> Result<(Vec3, f64, Mat3)> {
    stats_of(landmarks.iter().map(|l| (l.p, l.s)))
}

fn stats_of<I>(points: I) -> Result<(Vec3, f64, Mat3)>
where
    I: Iterator<Item = (Vec3, f64)> + Clone,
{
    let mut s_t = 0.0;
    let mut weighted = Vec3::zeros();
    for (p, s) in points.clone() {
        s_t += s;
        weighted += p * s;
    }
    if s_t == 0.0 {
        return Err(Error::EmptyLandmarkSet);
    }
    let p_c = weighted / s_t;
    let mut m = Mat3::zeros();
    for (p, s) in points {
        let d = p - p_c;
        m += d * d.transpose() * s;
    }
    let m = (m + m.transpose()) * 0.5;
    Ok((p_c, s_t, m))
}

/// Eigenvalues of a symmetric 3x3 matrix in ascending order.
pub fn sorted_eigenvalues(m: &Mat3) -> [f64; 3] {
    let e = SymmetricEigen::new(*m).eigenvalues;
    let mut v = [e[0], e[1], e[2]];
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// At least three landmarks whose `M` has rank ≥ 2.
pub fn check_noncollinear(landmarks: &[Landmark]) -> bool {
    if landmarks.len() < 3 {
        return false;
    }
    match landmark_stats(landmarks) {
        Ok((_, _, m)) => rank_at_least_two(&m),
        Err(_) => false,
    }
}

fn rank_at_least_two(m: &Mat3) -> bool {
    let trace = m.trace();
    trace > 0.0 && sorted_eigenvalues(m)[1] > RANK_TOL * trace
}

/// Builds the update statistics from the observations of one instant.
///
/// Only observed landmarks enter `p_c`, `s_T` and `M`.
pub fn build_bundle(
    landmarks: &[Landmark],
    observations: &[LandmarkObservation],
    r_hat: &Rotation,
    p_hat: &Vec3,
) -> Result<MeasurementBundle> {
    let pairs = match_observations(landmarks, observations)?;
    build_from_pairs(&pairs, |y| r_hat.matrix() * y, r_hat.matrix(), p_hat)
}

pub(crate) fn match_observations(
    landmarks: &[Landmark],
    observations: &[LandmarkObservation],
) -> Result<Vec<(Landmark, Vec3)>> {
    observations
        .iter()
        .map(|o| {
            landmarks
                .iter()
                .find(|l| l.id == o.id)
                .map(|l| (*l, o.y))
                .ok_or(Error::UnknownLandmarkId(o.id))
        })
        .collect()
}

/// Shared by both attitude backends: `rotate` maps a body vector to the
/// inertial frame with the current estimate, `r_hat` is its matrix form.
pub(crate) fn build_from_pairs<F>(
    pairs: &[(Landmark, Vec3)],
    rotate: F,
    r_hat: &Mat3,
    p_hat: &Vec3,
) -> Result<MeasurementBundle>
where
    F: Fn(&Vec3) -> Vec3,
{
    if pairs.len() < 3 {
        return Err(Error::InsufficientFeatures(pairs.len()));
    }
    let (p_c, s_t, m) = stats_of(pairs.iter().map(|(l, _)| (l.p, l.s)))?;
    if !rank_at_least_two(&m) {
        return Err(Error::InsufficientFeatures(pairs.len()));
    }
    let mut py = Mat3::zeros();
    let mut ytilde = Vec3::zeros();
    for (l, y) in pairs {
        py += (l.p - p_c) * y.transpose() * l.s;
        ytilde += (l.p - rotate(y) - p_hat) * l.s;
    }
    Ok(MeasurementBundle {
        p_c,
        s_t,
        m,
        m_rtilde: py * r_hat.transpose(),
        rt_pe: ytilde / s_t,
    })
}

/// `y = Rᵀ(p − P) + b + n`, with `n ~ N(0, σ² I)` drawn from `rng`.
pub fn synthesize_observation<R: Rng + ?Sized>(
    landmark: &Landmark,
    x: &NavState,
    noise: &ObservationNoiseSpec,
    timestamp: f64,
    rng: &mut R,
) -> LandmarkObservation {
    let mut y = x.rot.transpose() * (landmark.p - x.pos);
    if let Some(b) = noise.bias_y.get(&landmark.id) {
        y += b;
    }
    if noise.sigma_y > 0.0 {
        y += gaussian3(rng) * noise.sigma_y;
    }
    LandmarkObservation {
        id: landmark.id,
        y,
        timestamp,
    }
}

pub(crate) fn gaussian3<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se23::so3_exp;
    use approx::assert_relative_eq;
    use core::f64::consts::PI;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lm(id: u32, x: f64, y: f64, z: f64) -> Landmark {
        Landmark::new(id, Vec3::new(x, y, z), 1.0).unwrap()
    }

    fn cloud() -> Vec<Landmark> {
        alloc::vec![
            lm(0, 1.0, 0.0, 0.5),
            lm(1, -0.5, 2.0, 0.0),
            lm(2, 0.3, -1.0, 1.5),
            lm(3, 2.0, 1.0, -0.7),
            lm(4, -1.2, -0.4, 0.9),
        ]
    }

    fn observe(landmarks: &[Landmark], x: &NavState) -> Vec<LandmarkObservation> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        landmarks
            .iter()
            .map(|l| synthesize_observation(l, x, &ObservationNoiseSpec::noiseless(), 0.0, &mut rng))
            .collect()
    }

    #[test]
    fn single_landmark_stats() {
        let p = Vec3::new(1.0, -2.0, 3.0);
        let (p_c, s_t, m) = landmark_stats(&[Landmark::new(7, p, 1.0).unwrap()]).unwrap();
        assert_eq!(p_c, p);
        assert_eq!(s_t, 1.0);
        assert_eq!(m, Mat3::zeros());
    }

    #[test]
    fn basis_landmark_stats() {
        let ls = [lm(0, 1.0, 0.0, 0.0), lm(1, 0.0, 1.0, 0.0), lm(2, 0.0, 0.0, 1.0)];
        let (p_c, s_t, m) = landmark_stats(&ls).unwrap();
        assert_relative_eq!(p_c, Vec3::repeat(1.0 / 3.0), epsilon = 1e-15);
        assert_eq!(s_t, 3.0);
        let expected = Mat3::identity() - Mat3::repeat(1.0 / 3.0);
        assert_relative_eq!(m, expected, epsilon = 1e-15);
        assert!(check_noncollinear(&ls));
        // eigenvalues of I − ones/3 are {0, 1, 1}
        let ev = sorted_eigenvalues(&m);
        assert_relative_eq!(ev[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(ev[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn empty_and_degenerate_sets() {
        assert_eq!(landmark_stats(&[]), Err(Error::EmptyLandmarkSet));
        let line = [lm(0, 0.0, 0.0, 0.0), lm(1, 1.0, 1.0, 1.0), lm(2, 2.0, 2.0, 2.0)];
        assert!(!check_noncollinear(&line));
        let (_, _, m) = landmark_stats(&line).unwrap();
        assert!(sorted_eigenvalues(&m)[1] < 1e-12);
        assert!(!check_noncollinear(&line[..2]));
        assert!(Landmark::new(0, Vec3::zeros(), 0.0).is_err());
    }

    #[test]
    fn perfect_estimate_bundle() {
        let ls = cloud();
        let x = NavState::new(so3_exp(&Vec3::new(0.2, -0.1, 0.7)), Vec3::new(0.5, 1.0, -2.0), Vec3::zeros());
        let obs = observe(&ls, &x);
        let b = build_bundle(&ls, &obs, &x.rot, &x.pos).unwrap();
        assert_relative_eq!(b.rt_pe, Vec3::zeros(), epsilon = 1e-14);
        assert_relative_eq!(b.m_rtilde, b.m, epsilon = 1e-13);
        assert!(b.attitude_error().abs() < 1e-14);
    }

    #[test]
    fn position_offset_shows_in_rt_pe() {
        let ls = cloud();
        let x = NavState::new(so3_exp(&Vec3::new(0.0, 0.3, 0.1)), Vec3::new(1.0, 2.0, 3.0), Vec3::zeros());
        let d = Vec3::new(0.25, -0.5, 0.125);
        let obs = observe(&ls, &x);
        let b = build_bundle(&ls, &obs, &x.rot, &(x.pos - d)).unwrap();
        assert_relative_eq!(b.rt_pe, d, epsilon = 1e-13);
    }

    #[test]
    fn rotation_offset_shows_in_m_rtilde() {
        let ls = cloud();
        let x = NavState::new(Rotation::identity(), Vec3::zeros(), Vec3::zeros());
        let r_hat = Rotation::about_z(-PI / 6.0);
        let obs = observe(&ls, &x);
        let b = build_bundle(&ls, &obs, &r_hat, &x.pos).unwrap();
        let r_tilde = x.rot * r_hat.transpose();
        assert_relative_eq!(b.m_rtilde, b.m * r_tilde.matrix(), epsilon = 1e-12);
    }

    #[test]
    fn bundle_errors() {
        let ls = cloud();
        let x = NavState::identity();
        let mut obs = observe(&ls, &x);
        obs[0].id = 99;
        assert_eq!(
            build_bundle(&ls, &obs, &x.rot, &x.pos),
            Err(Error::UnknownLandmarkId(99))
        );
        let obs = observe(&ls[..2], &x);
        assert_eq!(
            build_bundle(&ls, &obs, &x.rot, &x.pos),
            Err(Error::InsufficientFeatures(2))
        );
    }

    #[test]
    fn synthesized_observation_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = lm(0, 1.0, 0.0, 0.0);
        let none = ObservationNoiseSpec::noiseless();
        let o = synthesize_observation(&l, &NavState::identity(), &none, 0.0, &mut rng);
        assert_eq!(o.y, Vec3::new(1.0, 0.0, 0.0));
        let x = NavState::new(Rotation::identity(), Vec3::new(1.0, 0.0, 0.0), Vec3::zeros());
        let o = synthesize_observation(&l, &x, &none, 0.0, &mut rng);
        assert_eq!(o.y, Vec3::zeros());
        let mut biased = ObservationNoiseSpec::noiseless();
        biased.bias_y.insert(0, Vec3::new(0.0, 0.1, 0.0));
        let o = synthesize_observation(&l, &x, &biased, 0.0, &mut rng);
        assert_eq!(o.y, Vec3::new(0.0, 0.1, 0.0));
    }

    #[test]
    fn observation_noise_statistics() {
        let sigma = 0.01;
        let n = 100_000;
        let l = lm(0, 3.0, -1.0, 2.0);
        let x = NavState::new(so3_exp(&Vec3::new(0.1, 0.2, 0.3)), Vec3::new(0.5, 0.5, 0.5), Vec3::zeros());
        let noise = ObservationNoiseSpec::isotropic(sigma);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut mean = Vec3::zeros();
        for _ in 0..n {
            mean += synthesize_observation(&l, &x, &noise, 0.0, &mut rng).y;
        }
        mean /= n as f64;
        let expected = x.rot.transpose() * (l.p - x.pos);
        let bound = 3.0 * sigma / (n as f64).sqrt();
        for i in 0..3 {
            assert!((mean[i] - expected[i]).abs() < bound, "axis {i}");
        }
    }
}
