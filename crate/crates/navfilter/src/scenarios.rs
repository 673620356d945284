//! Reference closed-loop scenarios shared by `validate` and the test suites.

use navfilter_core::measurement::ObservationNoiseSpec;
use navfilter_core::se23::so3_exp;
use navfilter_core::simulator::{emit_streams, ImuCorruption, TrajectoryProfile};
use navfilter_core::{FilterConfig, GravityModel, Landmark, NavState, Vec3};

use crate::euroc::ReplayDataset;

/// Six weighted-equally landmarks spread around the unit circle at 1 m height.
pub fn reference_landmarks() -> Vec<Landmark> {
    const PTS: [[f64; 3]; 6] = [
        [1.0, 0.0, 0.5],
        [-0.5, 1.0, 0.0],
        [0.3, -1.0, 1.0],
        [1.0, 1.0, -0.7],
        [-1.0, -0.4, 0.9],
        [0.0, 0.0, 2.0],
    ];
    PTS.iter()
        .enumerate()
        .map(|(i, p)| Landmark {
            id: i as u32,
            p: Vec3::new(p[0], p[1], p[2]),
            s: 1.0,
        })
        .collect()
}

/// Inputs of one closed-loop run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub data: ReplayDataset,
    pub init: NavState,
    pub config: FilterConfig,
}

/// Large-error convergence run: circle of radius 1 m at 0.5 rad/s, constant
/// biases, noiseless sensors at `imu_rate`/`cam_rate`, estimate started 60°
/// off about (1,1,1) and 2 m off along (1,1,1).
pub fn convergence(duration: f64, imu_rate: f64, cam_rate: f64, seed: u64) -> Scenario {
    let gravity = GravityModel::default();
    let profile = TrajectoryProfile::circle(duration, 1.0 / imu_rate, 1.0, 0.5, 1.0, &gravity);
    let landmarks = reference_landmarks();
    let corruption = ImuCorruption {
        b_omega: Vec3::repeat(0.01),
        b_a: Vec3::repeat(0.1),
        ..Default::default()
    };
    let streams = emit_streams(
        &profile,
        &landmarks,
        &corruption,
        &ObservationNoiseSpec::noiseless(),
        (imu_rate, cam_rate),
        &gravity,
        seed,
    )
    .expect("reference scenario is well formed");
    let axis = Vec3::repeat(1.0).normalize();
    let x0 = profile.initial;
    let init = NavState::new(
        x0.rot * so3_exp(&(axis * 60f64.to_radians())),
        x0.pos + axis * 2.0,
        x0.vel,
    );
    Scenario {
        data: ReplayDataset::from_streams(&streams, landmarks),
        init,
        config: FilterConfig::default(),
    }
}

/// Hover at 1 m with perfect initialization and clean sensors.
pub fn equilibrium(steps: usize) -> Scenario {
    let gravity = GravityModel::default();
    let dt = 0.005;
    let profile = TrajectoryProfile::hover(steps as f64 * dt, dt, 1.0, &gravity);
    let landmarks = reference_landmarks();
    let streams = emit_streams(
        &profile,
        &landmarks,
        &ImuCorruption::default(),
        &ObservationNoiseSpec::noiseless(),
        (200.0, 200.0),
        &gravity,
        0,
    )
    .expect("reference scenario is well formed");
    Scenario {
        data: ReplayDataset::from_streams(&streams, landmarks),
        init: profile.initial,
        config: FilterConfig::default(),
    }
}
