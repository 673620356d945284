//! Nonlinear inertial-navigation filter on SE2(3) with prescribed performance
//! envelopes and IMU bias compensation.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, configuration and
//! the command-line front-end live in the `navfilter` crate.
//!
//! Module map:
//! - [`se23`]: SO(3)/SE2(3)/quaternion kernel.
//! - [`measurement`]: landmark statistics and observation synthesis.
//! - [`envelope`]: decaying performance envelopes and the error transform.
//! - [`filter`]: the discrete filter (matrix and quaternion backends).
//! - [`error_dynamics`]: analytic and finite-difference error rates.
//! - [`simulator`]: ground-truth trajectories and sensor streams.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod envelope;
pub mod error_dynamics;
pub mod filter;
pub mod measurement;
pub mod se23;
pub mod simulator;

pub use envelope::{EnvelopeParams, EnvelopeState, ErrorVector, TransformedError};
pub use filter::{
    CorrectionTerms, FilterConfig, FilterGains, FilterState, GravityModel, QuatFilterState,
    StepDiagnostics, StepInput,
};
pub use measurement::{Landmark, LandmarkObservation, MeasurementBundle, ObservationNoiseSpec};
pub use se23::{Mat3, Mat5, NavState, Rotation, SkewMatrix, TangentElement, UnitQuaternion, Vec3};
pub use simulator::{ImuCorruption, ImuSample, TrajectoryProfile};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("matrix is not a rotation (orthogonality drift {drift:e}, det {det})")]
    NotARotation { drift: f64, det: f64 },
    #[error("matrix is not on SE2(3) (bottom-row deviation {0:e})")]
    NotOnGroup(f64),
    #[error("quaternion has zero or non-finite norm")]
    DegenerateQuaternion,
    #[error("landmark set is empty")]
    EmptyLandmarkSet,
    #[error("observation refers to unknown landmark id {0}")]
    UnknownLandmarkId(u32),
    #[error("need at least three non-collinear features, got {0} usable")]
    InsufficientFeatures(usize),
    #[error("error {e} is outside the envelope band (xi = {xi}, delta = [{delta_lo}, {delta_hi}])")]
    EnvelopeViolation {
        e: f64,
        xi: f64,
        delta_lo: f64,
        delta_hi: f64,
    },
    #[error("time went backwards or step is empty: t = {t}, previous = {previous}, dt = {dt}")]
    NonMonotoneTime { t: f64, previous: f64, dt: f64 },
    #[error("rate mismatch: {0}")]
    RateMismatch(&'static str),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter {
        name: &'static str,
        reason: &'static str,
    },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
