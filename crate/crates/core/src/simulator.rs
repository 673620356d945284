//! Ground-truth trajectories and synthetic IMU/feature streams.
//!
//! Truth advances with `X_{k+1} = exp(−G dt) X_k exp(U_k dt)`, where `U_k`
//! takes the profile at the midpoint of the step. The same midpoint values are
//! what the IMU reports for that step, so a perfect filter driven by clean
//! samples reproduces truth to rounding error.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use libm::{atan2, cos, round, sin};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::filter::{gravity_tangent, GravityModel};
use crate::measurement::{
    gaussian3, synthesize_observation, Landmark, LandmarkObservation, ObservationNoiseSpec,
};
use crate::se23::{se23_exp, NavState, Rotation, TangentElement, Vec3};
use crate::{Error, Result};

pub type ProfileFn = Box<dyn Fn(f64) -> Vec3 + Send + Sync>;

/// Scripted body rate and specific force.
pub struct TrajectoryProfile {
    pub name: String,
    /// Body angular velocity, rad/s.
    pub omega_fn: ProfileFn,
    /// Body specific force (non-gravitational), m/s².
    pub accel_fn: ProfileFn,
    pub duration: f64,
    pub dt: f64,
    /// State consistent with the profile at t = 0.
    pub initial: NavState,
}

impl core::fmt::Debug for TrajectoryProfile {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("TrajectoryProfile")
            .field("name", &self.name)
            .field("duration", &self.duration)
            .field("dt", &self.dt)
            .finish_non_exhaustive()
    }
}

impl TrajectoryProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter {
                name: "profile.dt",
                reason: "must be positive",
            });
        }
        if !(self.duration >= self.dt) || !self.duration.is_finite() {
            return Err(Error::InvalidParameter {
                name: "profile.duration",
                reason: "must be at least one step",
            });
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        round(self.duration / self.dt) as usize
    }

    /// Stationary at height `h`, level attitude.
    pub fn hover(duration: f64, dt: f64, h: f64, gravity: &GravityModel) -> Self {
        let g = gravity.g;
        TrajectoryProfile {
            name: "hover".into(),
            omega_fn: Box::new(|_| Vec3::zeros()),
            accel_fn: Box::new(move |_| -g),
            duration,
            dt,
            initial: NavState::new(Rotation::identity(), Vec3::new(0.0, 0.0, h), Vec3::zeros()),
        }
    }

    /// Constant velocity `(speed, 0, 0)` at height `h`.
    pub fn straight(duration: f64, dt: f64, speed: f64, h: f64, gravity: &GravityModel) -> Self {
        let mut p = Self::hover(duration, dt, h, gravity);
        p.name = "straight".into();
        p.initial.vel = Vec3::new(speed, 0.0, 0.0);
        p
    }

    /// Level circle of radius `r` about `(0, 0, h)` at yaw rate `w`, nose
    /// along the velocity.
    pub fn circle(duration: f64, dt: f64, r: f64, w: f64, h: f64, gravity: &GravityModel) -> Self {
        let g = gravity.g;
        TrajectoryProfile {
            name: "circle".into(),
            omega_fn: Box::new(move |_| Vec3::new(0.0, 0.0, w)),
            accel_fn: Box::new(move |_| Vec3::new(0.0, r * w * w, 0.0) - g),
            duration,
            dt,
            initial: NavState::new(
                Rotation::identity(),
                Vec3::new(0.0, -r, h),
                Vec3::new(r * w, 0.0, 0.0),
            ),
        }
    }

    /// `p(t) = (a sin wt, b sin 2wt, h + c sin wt)` with heading along the
    /// horizontal velocity.
    pub fn figure_eight(
        duration: f64,
        dt: f64,
        (a, b, c): (f64, f64, f64),
        w: f64,
        h: f64,
        gravity: &GravityModel,
    ) -> Self {
        let g = gravity.g;
        let vel = move |t: f64| {
            Vec3::new(a * w * cos(w * t), 2.0 * b * w * cos(2.0 * w * t), c * w * cos(w * t))
        };
        let acc = move |t: f64| {
            Vec3::new(
                -a * w * w * sin(w * t),
                -4.0 * b * w * w * sin(2.0 * w * t),
                -c * w * w * sin(w * t),
            )
        };
        let yaw_rate = move |t: f64| {
            let v = vel(t);
            let p = acc(t);
            (v.x * p.y - v.y * p.x) / (v.x * v.x + v.y * v.y)
        };
        let heading = move |t: f64| {
            let v = vel(t);
            atan2(v.y, v.x)
        };
        TrajectoryProfile {
            name: "figure_eight".into(),
            omega_fn: Box::new(move |t| Vec3::new(0.0, 0.0, yaw_rate(t))),
            accel_fn: Box::new(move |t| Rotation::about_z(heading(t)).transpose() * (acc(t) - g)),
            duration,
            dt,
            initial: NavState::new(Rotation::about_z(heading(0.0)), Vec3::new(0.0, 0.0, h), vel(0.0)),
        }
    }

    /// `(Ω, a)` reported for the step starting at `t`.
    pub fn sample_step(&self, t: f64, dt: f64) -> (Vec3, Vec3) {
        let mid = t + 0.5 * dt;
        ((self.omega_fn)(mid), (self.accel_fn)(mid))
    }
}

/// One exact step of the true dynamics.
pub fn truth_step(x: &NavState, omega: &Vec3, accel: &Vec3, gravity: &GravityModel, dt: f64) -> NavState {
    let u = TangentElement::new(omega, Vec3::zeros(), *accel, 1.0);
    let e_g = se23_exp(&gravity_tangent(&gravity.g), dt);
    NavState::from_top_rows(&(e_g * x.to_matrix() * se23_exp(&u, dt)))
}

/// Truth states at `t_k = k·dt`, `k = 0..=steps`.
pub fn integrate_truth(profile: &TrajectoryProfile, x0: &NavState, gravity: &GravityModel) -> Vec<NavState> {
    let n = profile.steps();
    let mut out = Vec::with_capacity(n + 1);
    let mut x = *x0;
    out.push(x);
    for k in 0..n {
        let (omega, accel) = profile.sample_step(k as f64 * profile.dt, profile.dt);
        x = truth_step(&x, &omega, &accel, gravity, profile.dt);
        out.push(x);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub omega_m: Vec3,
    pub a_m: Vec3,
}

/// Constant biases and optional white noise added to clean IMU values.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImuCorruption {
    pub b_omega: Vec3,
    pub b_a: Vec3,
    pub sigma_omega: f64,
    pub sigma_a: f64,
}

impl ImuCorruption {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_omega >= 0.0) || !(self.sigma_a >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "imu.sigma",
                reason: "noise standard deviations must be nonnegative",
            });
        }
        Ok(())
    }
}

/// `Ω_m = Ω + b_Ω + n_Ω`, `a_m = a + b_a + n_a`.
pub fn corrupt_imu<R: Rng + ?Sized>(
    t: f64,
    omega: &Vec3,
    accel: &Vec3,
    corruption: &ImuCorruption,
    rng: &mut R,
) -> ImuSample {
    let mut omega_m = omega + corruption.b_omega;
    let mut a_m = accel + corruption.b_a;
    if corruption.sigma_omega > 0.0 {
        omega_m += gaussian3(rng) * corruption.sigma_omega;
    }
    if corruption.sigma_a > 0.0 {
        a_m += gaussian3(rng) * corruption.sigma_a;
    }
    ImuSample { t, omega_m, a_m }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub state: NavState,
    pub b_omega: Vec3,
    pub b_a: Vec3,
}

/// Aligned sensor and truth streams.
///
/// `imu[k]` covers `[t_k, t_{k+1}]`; `observations[k]`, when present, was taken
/// at `t_{k+1}`; `truth` has one more entry than `imu`.
#[derive(Debug, Clone, PartialEq)]
pub struct Streams {
    pub dt: f64,
    pub imu: Vec<ImuSample>,
    pub observations: Vec<Option<Vec<LandmarkObservation>>>,
    pub truth: Vec<TruthSample>,
}

/// Nanosecond step for a rate in Hz.
pub fn period_ns(rate: f64) -> Result<u64> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::RateMismatch("rates must be positive"));
    }
    Ok(round(1e9 / rate) as u64)
}

pub fn emit_streams(
    profile: &TrajectoryProfile,
    landmarks: &[Landmark],
    corruption: &ImuCorruption,
    obs_noise: &ObservationNoiseSpec,
    (imu_rate, cam_rate): (f64, f64),
    gravity: &GravityModel,
    seed: u64,
) -> Result<Streams> {
    profile.validate()?;
    corruption.validate()?;
    if !(cam_rate > 0.0) || !(imu_rate > 0.0) {
        return Err(Error::RateMismatch("rates must be positive"));
    }
    let ratio = imu_rate / cam_rate;
    let every = round(ratio);
    if every < 1.0 || (ratio - every).abs() > 1e-9 * ratio {
        return Err(Error::RateMismatch("imu_rate must be an integer multiple of cam_rate"));
    }
    let every = every as usize;
    let step_ns = period_ns(imu_rate)?;
    let dt = step_ns as f64 * 1e-9;
    if (dt - profile.dt).abs() > 1e-9 * profile.dt {
        return Err(Error::RateMismatch("profile dt differs from 1/imu_rate"));
    }

    let mut imu_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs_rng = ChaCha8Rng::seed_from_u64(seed);
    obs_rng.set_stream(1);

    let n = profile.steps();
    let time = |k: usize| (k as u64 * step_ns) as f64 * 1e-9;
    let mut x = profile.initial;
    let mut imu = Vec::with_capacity(n);
    let mut observations = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n + 1);
    let truth_at = |t, state| TruthSample {
        t,
        state,
        b_omega: corruption.b_omega,
        b_a: corruption.b_a,
    };
    truth.push(truth_at(0.0, x));
    for k in 0..n {
        let t = time(k);
        let (omega, accel) = profile.sample_step(t, dt);
        imu.push(corrupt_imu(t, &omega, &accel, corruption, &mut imu_rng));
        x = truth_step(&x, &omega, &accel, gravity, dt);
        let t_next = time(k + 1);
        truth.push(truth_at(t_next, x));
        if (k + 1) % every == 0 {
            let obs = landmarks
                .iter()
                .map(|l| synthesize_observation(l, &x, obs_noise, t_next, &mut obs_rng))
                .collect();
            observations.push(Some(obs));
        } else {
            observations.push(None);
        }
    }
    Ok(Streams {
        dt,
        imu,
        observations,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se23::orthogonality_drift;
    use approx::assert_relative_eq;

    fn no_gravity() -> GravityModel {
        GravityModel { g: Vec3::zeros() }
    }

    #[test]
    fn free_drift_is_linear() {
        let g = no_gravity();
        let mut p = TrajectoryProfile::straight(2.0, 0.01, 1.5, 0.0, &g);
        p.initial.pos = Vec3::new(1.0, 2.0, 3.0);
        let xs = integrate_truth(&p, &p.initial, &g);
        assert_eq!(xs.len(), 201);
        let last = xs.last().unwrap();
        assert_relative_eq!(last.pos, Vec3::new(4.0, 2.0, 3.0), epsilon = 1e-12);
    }

    #[test]
    fn hover_keeps_velocity() {
        let g = GravityModel::default();
        let p = TrajectoryProfile::hover(5.0, 0.005, 1.0, &g);
        let xs = integrate_truth(&p, &p.initial, &g);
        for x in &xs {
            assert!(x.vel.norm() < 1e-12);
            assert!((x.pos.z - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn speed_is_conserved_without_forces() {
        let g = no_gravity();
        let mut p = TrajectoryProfile::straight(20.0, 0.01, 2.0, 0.0, &g);
        p.omega_fn = Box::new(|t| Vec3::new(0.3 * libm::sin(t), 0.2, -0.1));
        p.accel_fn = Box::new(|_| Vec3::zeros());
        for x in integrate_truth(&p, &p.initial, &g) {
            assert!((x.vel.norm() - 2.0).abs() < 1e-9);
            assert!(orthogonality_drift(x.rot.matrix()) < 1e-9);
        }
    }

    #[test]
    fn circle_returns_to_start() {
        let g = GravityModel::default();
        let w = 0.5;
        let period = 2.0 * core::f64::consts::PI / w;
        let p = TrajectoryProfile::circle(period, period / 2000.0, 2.0, w, 1.0, &g);
        let xs = integrate_truth(&p, &p.initial, &g);
        let last = xs.last().unwrap();
        assert!((last.pos - p.initial.pos).norm() < 1e-9);
        assert!((last.vel - p.initial.vel).norm() < 1e-9);
        for x in xs.iter().step_by(100) {
            let radial = Vec3::new(x.pos.x, x.pos.y, 0.0).norm();
            assert!((radial - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn figure_eight_follows_its_path() {
        let g = GravityModel::default();
        let dt = 0.002;
        let p = TrajectoryProfile::figure_eight(10.0, dt, (2.0, 1.0, 0.3), 0.4, 1.0, &g);
        let xs = integrate_truth(&p, &p.initial, &g);
        let t = 10.0;
        let expected = Vec3::new(2.0 * libm::sin(0.4 * t), libm::sin(0.8 * t), 1.0 + 0.3 * libm::sin(0.4 * t));
        assert!((xs.last().unwrap().pos - expected).norm() < 1e-3);
    }

    #[test]
    fn imu_corruption_is_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let omega = Vec3::new(0.1, 0.2, 0.3);
        let a = Vec3::new(0.0, 0.0, 9.81);
        let clean = corrupt_imu(0.0, &omega, &a, &ImuCorruption::default(), &mut rng);
        assert_eq!(clean.omega_m, omega);
        assert_eq!(clean.a_m, a);
        let c = ImuCorruption {
            b_omega: Vec3::new(0.01, -0.02, 0.005),
            ..Default::default()
        };
        let s = corrupt_imu(0.0, &omega, &a, &c, &mut rng);
        assert_relative_eq!(s.omega_m - omega, Vec3::new(0.01, -0.02, 0.005), epsilon = 1e-15);
    }

    #[test]
    fn imu_noise_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = ImuCorruption {
            sigma_omega: 0.002,
            ..Default::default()
        };
        let n = 100_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let v = corrupt_imu(0.0, &Vec3::zeros(), &Vec3::zeros(), &c, &mut rng).omega_m.x;
            sum += v;
            sq += v * v;
        }
        let mean = sum / n as f64;
        let std = libm::sqrt(sq / n as f64 - mean * mean);
        assert!((std - 0.002).abs() < 0.05 * 0.002, "std {std}");
    }

    fn basis_landmarks() -> Vec<Landmark> {
        (0..4)
            .map(|i| {
                let mut p = Vec3::zeros();
                if i < 3 {
                    p[i] = 1.0;
                }
                Landmark::new(i as u32, p, 1.0).unwrap()
            })
            .collect()
    }

    #[test]
    fn stream_rates() {
        let g = GravityModel::default();
        let p = TrajectoryProfile::hover(1.0, 0.005, 1.0, &g);
        let ls = basis_landmarks();
        let noise = ObservationNoiseSpec::noiseless();
        let s = emit_streams(&p, &ls, &ImuCorruption::default(), &noise, (200.0, 20.0), &g, 1).unwrap();
        assert_eq!(s.imu.len(), 200);
        assert_eq!(s.truth.len(), 201);
        assert_eq!(s.observations.iter().filter(|o| o.is_some()).count(), 20);
        assert!(s.observations[9].is_some());
        assert!(s.observations[..9].iter().all(|o| o.is_none()));
        let every = emit_streams(&p, &ls, &ImuCorruption::default(), &noise, (200.0, 200.0), &g, 1).unwrap();
        assert!(every.observations.iter().all(|o| o.is_some()));
        assert_eq!(
            emit_streams(&p, &ls, &ImuCorruption::default(), &noise, (200.0, 30.0), &g, 1).unwrap_err(),
            Error::RateMismatch("imu_rate must be an integer multiple of cam_rate")
        );
        assert!(emit_streams(&p, &ls, &ImuCorruption::default(), &noise, (100.0, 20.0), &g, 1).is_err());
    }

    #[test]
    fn streams_are_deterministic() {
        let g = GravityModel::default();
        let p = TrajectoryProfile::circle(2.0, 0.005, 1.0, 0.5, 1.0, &g);
        let ls = basis_landmarks();
        let c = ImuCorruption {
            sigma_omega: 0.001,
            sigma_a: 0.01,
            ..Default::default()
        };
        let noise = ObservationNoiseSpec::isotropic(0.01);
        let a = emit_streams(&p, &ls, &c, &noise, (200.0, 20.0), &g, 9).unwrap();
        let b = emit_streams(&p, &ls, &c, &noise, (200.0, 20.0), &g, 9).unwrap();
        assert_eq!(a, b);
        let other = emit_streams(&p, &ls, &c, &noise, (200.0, 20.0), &g, 10).unwrap();
        assert_ne!(a.imu, other.imu);
    }
}
