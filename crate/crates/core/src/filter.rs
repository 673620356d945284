//! Discrete nonlinear navigation filter with bias compensation.
//!
//! One step advances the estimate over one IMU interval:
//!
//! 1. prediction `X̂ exp(Û Δt)` with `Û = u([Ω_m − b̂_Ω]×, 0, a_m − b̂_a, 1)`;
//! 2. the gravity factor `exp(−G Δt)`, `G = u(0, 0, −ḡ, 1)`, so the predicted
//!    state lines up in time with the measurement instant;
//! 3. if a usable feature bundle is present: error vector, envelope guard,
//!    transformed errors, correction terms, bias updates, and
//!    `exp(−(W − G) Δt)` applied on the left.
//!
//! Steps 2 and 3 together are `exp(−W Δt)` split into its gravity and
//! innovation parts; at zero innovation they coincide exactly.
//!
//! Two attitude representations share the same step: the 5x5 matrix form
//! ([`NavState`]) and the unit-quaternion form ([`QuatNav`]).

use alloc::vec::Vec;

use crate::envelope::{
    envelope_at, guard_envelope, transform_error, transform_vector, EnvelopeParams, ErrorVector,
    TransformedError,
};
use crate::measurement::{build_from_pairs, match_observations, Landmark, LandmarkObservation, MeasurementBundle};
use crate::se23::{
    quat_mul, quat_sandwich, quat_to_rot, se23_exp, skew_matrix, so3_jacobians, upsilon,
    NavState, TangentElement, UnitQuaternion, Vec3,
};
use crate::simulator::ImuSample;
use crate::{Error, Result};

/// Slack allowed when comparing an IMU timestamp against the filter clock.
const TIME_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterGains {
    pub k_w: f64,
    pub k_v: f64,
    pub k_a: f64,
    pub ell_p: f64,
    pub gamma_b: f64,
    pub gamma_a: f64,
    pub delta: f64,
}

impl Default for FilterGains {
    fn default() -> Self {
        FilterGains {
            k_w: 3.0,
            k_v: 4.0,
            k_a: 4.0,
            ell_p: 4.0,
            gamma_b: 2.0,
            gamma_a: 3.0,
            delta: 0.15,
        }
    }
}

impl FilterGains {
    pub fn validate(&self) -> Result<()> {
        let checks: [(&'static str, f64); 7] = [
            ("gains.k_w", self.k_w),
            ("gains.k_v", self.k_v),
            ("gains.k_a", self.k_a),
            ("gains.ell_p", self.ell_p),
            ("gains.gamma_b", self.gamma_b),
            ("gains.gamma_a", self.gamma_a),
            ("gains.delta", self.delta),
        ];
        for (name, v) in checks {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    reason: "must be a positive constant",
                });
            }
        }
        Ok(())
    }
}

/// Constant gravity vector in the inertial frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GravityModel {
    pub g: Vec3,
}

impl Default for GravityModel {
    fn default() -> Self {
        GravityModel {
            g: Vec3::new(0.0, 0.0, -9.81),
        }
    }
}

/// How a channel's `ξ⁰` and `δ̲ = δ̄` are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnvelopeInit {
    Fixed { xi0: f64, delta: f64 },
    /// `ξ⁰ = δ = scale·|e(0)| + offset`, evaluated at the first usable bundle.
    FromFirstError { scale: f64, offset: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelEnvelope {
    pub xi_inf: f64,
    pub ell: f64,
    pub init: EnvelopeInit,
    /// Guard increment; `None` means `1e-3·ξ^∞`.
    pub epsilon: Option<f64>,
}

impl ChannelEnvelope {
    fn resolve(&self, e0: f64) -> Result<EnvelopeParams> {
        let (xi0, delta) = match self.init {
            EnvelopeInit::Fixed { xi0, delta } => (xi0, delta),
            EnvelopeInit::FromFirstError { scale, offset } => {
                let v = scale * e0.abs() + offset;
                (v, v)
            }
        };
        EnvelopeParams::symmetric(xi0, self.xi_inf, self.ell, delta)
    }
}

/// How long one correction acts when bundles arrive slower than IMU samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrectionSpan {
    /// The current IMU step only, as in the single-rate loop.
    ImuStep,
    /// The time since the previous correction, applied as IMU-sized
    /// sub-steps that re-evaluate the innovation against the same features.
    /// Identical to `ImuStep` when every step carries a bundle.
    #[default]
    SinceLastCorrection,
}

/// Upper bound on the span caught up by one bundle after a feature gap.
const MAX_CORRECTION_SPAN: f64 = 0.25;

/// Deliberate defects used by mutation runs of the validation suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mutation {
    #[default]
    None,
    /// Negates `w_Ω` before it is used anywhere.
    FlipOmegaCorrection,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub gains: FilterGains,
    pub gravity: GravityModel,
    pub channels: [ChannelEnvelope; 4],
    pub correction_span: CorrectionSpan,
    pub mutation: Mutation,
}

impl Default for FilterConfig {
    /// Gains `k_w=3, k_v=4, k_a=ℓ_P=4, γ_b=2, γ_a=3, δ=0.15`, `ℓ = 1.2`,
    /// `ξ^∞ = [0.03, 0.08, 0.08, 0.08]` and
    /// `ξ⁰ = δ = [1.3 e₁(0), 2|e₂..₄(0)|] + [0.5, 2, 2, 2]`.
    fn default() -> Self {
        let ch = |xi_inf, scale, offset| ChannelEnvelope {
            xi_inf,
            ell: 1.2,
            init: EnvelopeInit::FromFirstError { scale, offset },
            epsilon: None,
        };
        FilterConfig {
            gains: FilterGains::default(),
            gravity: GravityModel::default(),
            channels: [
                ch(0.03, 1.3, 0.5),
                ch(0.08, 2.0, 2.0),
                ch(0.08, 2.0, 2.0),
                ch(0.08, 2.0, 2.0),
            ],
            correction_span: CorrectionSpan::default(),
            mutation: Mutation::None,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        self.gains.validate()?;
        for ch in &self.channels {
            let bad = |name, reason| Err(Error::InvalidParameter { name, reason });
            if !(ch.xi_inf > 0.0) {
                return bad("envelope.xi_inf", "must be positive");
            }
            if !(ch.ell > 0.0) {
                return bad("envelope.ell", "must be positive");
            }
            if let Some(eps) = ch.epsilon {
                if !(eps > 0.0) {
                    return bad("envelope.epsilon", "must be positive");
                }
            }
            match ch.init {
                EnvelopeInit::Fixed { xi0, delta } => {
                    EnvelopeParams::symmetric(xi0, ch.xi_inf, ch.ell, delta)?;
                }
                EnvelopeInit::FromFirstError { scale, offset } => {
                    if !(scale >= 0.0) || !(offset > ch.xi_inf) {
                        return bad(
                            "envelope.init",
                            "need scale >= 0 and offset > xi_inf",
                        );
                    }
                }
            }
        }
        Ok(())
    }

    pub fn resolve_envelopes(&self, e0: &ErrorVector) -> Result<[EnvelopeParams; 4]> {
        Ok([
            self.channels[0].resolve(e0.0[0])?,
            self.channels[1].resolve(e0.0[1])?,
            self.channels[2].resolve(e0.0[2])?,
            self.channels[3].resolve(e0.0[3])?,
        ])
    }

    fn epsilon(&self, i: usize, params: &EnvelopeParams) -> f64 {
        self.channels[i]
            .epsilon
            .unwrap_or_else(|| params.default_epsilon())
    }
}

/// Correction factors `w_Ω`, `w_V`, `w_a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionTerms {
    pub w_omega: Vec3,
    pub w_v: Vec3,
    pub w_a: Vec3,
}

impl CorrectionTerms {
    /// The terms produced by a zero innovation: only gravity remains.
    pub fn equilibrium(gravity: &GravityModel) -> Self {
        CorrectionTerms {
            w_omega: Vec3::zeros(),
            w_v: Vec3::zeros(),
            w_a: -gravity.g,
        }
    }

    /// `W = u([w_Ω]×, w_V, w_a, 1)`.
    pub fn tangent(&self) -> TangentElement {
        TangentElement::new(&self.w_omega, self.w_v, self.w_a, 1.0)
    }
}

/// Attitude/position/velocity representation the filter can run on.
pub trait NavRepr: Copy + core::fmt::Debug {
    /// Right-multiplication by `exp(Û dt)`, reading back the first three rows.
    fn predict(&self, omega: &Vec3, accel: &Vec3, dt: f64) -> Self;
    /// Left-multiplication by `exp(−G dt)` of a state produced by `predict`.
    fn settle_gravity(&self, g: &Vec3, dt: f64) -> Self;
    /// Left-multiplication by `exp(−(W − G) dt)`.
    fn apply_correction(&self, terms: &CorrectionTerms, g: &Vec3, dt: f64) -> Self;
    fn bundle(&self, pairs: &[(Landmark, Vec3)]) -> Result<MeasurementBundle>;
    /// `R̂ᵀ v`.
    fn to_body(&self, v: &Vec3) -> Vec3;
    fn nav_state(&self) -> NavState;
}

pub(crate) fn gravity_tangent(g: &Vec3) -> TangentElement {
    // −G = u(0, 0, ḡ, −1)
    TangentElement::new(&Vec3::zeros(), Vec3::zeros(), *g, -1.0)
}

fn innovation_tangent(terms: &CorrectionTerms, g: &Vec3) -> TangentElement {
    // −(W − G) = u(−[w_Ω]×, −w_V, −(w_a + ḡ), 0)
    TangentElement::new(&(-terms.w_omega), -terms.w_v, -(terms.w_a + g), 0.0)
}

impl NavRepr for NavState {
    fn predict(&self, omega: &Vec3, accel: &Vec3, dt: f64) -> Self {
        let u = TangentElement::new(omega, Vec3::zeros(), *accel, 1.0);
        NavState::from_top_rows(&(self.to_matrix() * se23_exp(&u, dt)))
    }

    fn settle_gravity(&self, g: &Vec3, dt: f64) -> Self {
        let mut y = self.to_matrix();
        y[(4, 3)] = dt;
        NavState::from_top_rows(&(se23_exp(&gravity_tangent(g), dt) * y))
    }

    fn apply_correction(&self, terms: &CorrectionTerms, g: &Vec3, dt: f64) -> Self {
        NavState::from_top_rows(&(se23_exp(&innovation_tangent(terms, g), dt) * self.to_matrix()))
    }

    fn bundle(&self, pairs: &[(Landmark, Vec3)]) -> Result<MeasurementBundle> {
        let r = self.rot.matrix();
        build_from_pairs(pairs, |y| r * y, r, &self.pos)
    }

    fn to_body(&self, v: &Vec3) -> Vec3 {
        self.rot.matrix().tr_mul(v)
    }

    fn nav_state(&self) -> NavState {
        *self
    }
}

/// Quaternion form of the navigation state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuatNav {
    pub q: UnitQuaternion,
    pub p: Vec3,
    pub v: Vec3,
}

impl QuatNav {
    pub fn from_nav_state(x: &NavState) -> Self {
        QuatNav {
            q: UnitQuaternion::from_rotation(&x.rot),
            p: x.pos,
            v: x.vel,
        }
    }
}

impl NavRepr for QuatNav {
    fn predict(&self, omega: &Vec3, accel: &Vec3, dt: f64) -> Self {
        // Q̇ = ½ Γ(Ω) Q integrates to Q ⊙ exp(Ω dt)
        let phi = omega * dt;
        let (j1, j2) = so3_jacobians(&phi);
        let dp = j2 * accel * (dt * dt);
        let dv = j1 * accel * dt;
        QuatNav {
            q: quat_mul(&self.q, &UnitQuaternion::exp(&phi)),
            p: self.p + self.v * dt + quat_sandwich(&self.q, &dp),
            v: self.v + quat_sandwich(&self.q, &dv),
        }
    }

    fn settle_gravity(&self, g: &Vec3, dt: f64) -> Self {
        QuatNav {
            q: self.q,
            p: self.p + g * (-0.5 * dt * dt) + g * dt * dt,
            v: self.v + g * dt,
        }
    }

    fn apply_correction(&self, terms: &CorrectionTerms, g: &Vec3, dt: f64) -> Self {
        // −½ Ψ(w_Ω) Q integrates to exp(−w_Ω dt) ⊙ Q
        let phi = -terms.w_omega * dt;
        let (j1, _) = so3_jacobians(&phi);
        let left = UnitQuaternion::exp(&phi);
        QuatNav {
            q: quat_mul(&left, &self.q),
            p: quat_sandwich(&left, &self.p) - j1 * terms.w_v * dt,
            v: quat_sandwich(&left, &self.v) - j1 * (terms.w_a + g) * dt,
        }
    }

    fn bundle(&self, pairs: &[(Landmark, Vec3)]) -> Result<MeasurementBundle> {
        let r = quat_to_rot(&self.q);
        build_from_pairs(pairs, |y| quat_sandwich(&self.q, y), r.matrix(), &self.p)
    }

    fn to_body(&self, v: &Vec3) -> Vec3 {
        quat_sandwich(&self.q.inverse(), v)
    }

    fn nav_state(&self) -> NavState {
        NavState::new(quat_to_rot(&self.q), self.p, self.v)
    }
}

/// Filter state: navigation estimate, bias estimates, and the clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimator<N> {
    pub x_hat: N,
    pub b_omega_hat: Vec3,
    pub b_a_hat: Vec3,
    pub t: f64,
    pub k: u64,
    /// Origin of the envelope time base.
    pub t_start: f64,
    /// Envelope parameters, fixed at the first usable bundle.
    pub envelope: Option<[EnvelopeParams; 4]>,
    pub last_correction: Option<f64>,
}

pub type FilterState = Estimator<NavState>;
pub type QuatFilterState = Estimator<QuatNav>;

impl<N: NavRepr> Estimator<N> {
    /// Fresh filter with zero bias estimates starting at time `t0`.
    pub fn new(x_hat: N, t0: f64) -> Self {
        Estimator {
            x_hat,
            b_omega_hat: Vec3::zeros(),
            b_a_hat: Vec3::zeros(),
            t: t0,
            k: 0,
            t_start: t0,
            envelope: None,
            last_correction: None,
        }
    }
}

impl QuatFilterState {
    pub fn from_matrix_state(s: &FilterState) -> Self {
        Estimator {
            x_hat: QuatNav::from_nav_state(&s.x_hat),
            b_omega_hat: s.b_omega_hat,
            b_a_hat: s.b_a_hat,
            t: s.t,
            k: s.k,
            t_start: s.t_start,
            envelope: s.envelope,
            last_correction: s.last_correction,
        }
    }
}

/// Inputs for one filter step.
#[derive(Debug, Clone, Copy)]
pub struct StepInput<'a> {
    pub imu: ImuSample,
    pub dt: f64,
    /// Features observed at the end of the step, if any.
    pub observations: Option<&'a [LandmarkObservation]>,
}

/// Everything one step computed, for logging and invariant checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    /// Time at the end of the step.
    pub t: f64,
    pub k: u64,
    pub corrected: bool,
    pub e: Option<ErrorVector>,
    /// Envelope values after the guard; NaN before the envelope is fixed.
    pub xi: [f64; 4],
    pub transformed: Option<TransformedError>,
    pub terms: Option<CorrectionTerms>,
    pub b_omega_hat: Vec3,
    pub b_a_hat: Vec3,
    pub guard: [bool; 4],
    /// Set on the step that fixed the envelopes: whether `ξ⁰ > |e(0)|` and
    /// `δ > |e(0)|` held on every channel.
    pub initial_conditions_ok: Option<bool>,
}

impl StepDiagnostics {
    pub fn guard_count(&self) -> usize {
        self.guard.iter().filter(|g| **g).count()
    }
}

/// Prediction over `dt`: `X̂ exp(Û dt)`. Biases are untouched.
pub fn predict<N: NavRepr>(state: &Estimator<N>, imu: &ImuSample, dt: f64) -> Estimator<N> {
    let omega = imu.omega_m - state.b_omega_hat;
    let accel = imu.a_m - state.b_a_hat;
    Estimator {
        x_hat: state.x_hat.predict(&omega, &accel, dt),
        t: imu.t.max(state.t) + dt,
        ..*state
    }
}

/// `w_Ω`, `w_V`, `w_a` from the bundle and transformed errors.
pub fn correction_terms(
    bundle: &MeasurementBundle,
    tr: &TransformedError,
    gains: &FilterGains,
    gravity: &GravityModel,
    mutation: Mutation,
) -> CorrectionTerms {
    let ups = upsilon(&bundle.m_rtilde);
    let mut w_omega = -ups * (gains.k_w * (tr.e_r * tr.delta_r + 1.0));
    if mutation == Mutation::FlipOmegaCorrection {
        w_omega = -w_omega;
    }
    let x = bundle.rt_pe;
    let dp_ep = tr.delta_p.component_mul(&tr.e_p);
    let w_v = skew_matrix(&(bundle.p_c - x)) * w_omega - x * gains.ell_p - dp_ep * gains.k_v;
    let w_a = -gravity.g + (skew_matrix(&w_omega) * tr.e_p * gains.delta - dp_ep) * gains.k_a;
    CorrectionTerms { w_omega, w_v, w_a }
}

/// Correction of a gravity-settled prediction: bias updates plus the
/// innovation part of `exp(−W dt)`.
pub fn correct<N: NavRepr>(
    state: &Estimator<N>,
    bundle: &MeasurementBundle,
    tr: &TransformedError,
    config: &FilterConfig,
    dt: f64,
) -> (Estimator<N>, CorrectionTerms) {
    let gains = &config.gains;
    let terms = correction_terms(bundle, tr, gains, &config.gravity, config.mutation);
    let ups = upsilon(&bundle.m_rtilde);
    let b_omega_rate = state.x_hat.to_body(&ups) * (gains.gamma_b * (tr.delta_r * tr.e_r + 1.0));
    let b_a_rate = state.x_hat.to_body(&tr.e_p) * (gains.gamma_a * gains.delta);
    let next = Estimator {
        x_hat: state.x_hat.apply_correction(&terms, &config.gravity.g, dt),
        b_omega_hat: state.b_omega_hat - b_omega_rate * dt,
        b_a_hat: state.b_a_hat - b_a_rate * dt,
        ..*state
    };
    (next, terms)
}

/// Guarded envelope values and the transformed errors for one bundle.
fn guarded_transform(
    e: &ErrorVector,
    params: &[EnvelopeParams; 4],
    config: &FilterConfig,
    env_time: f64,
) -> Result<([f64; 4], [bool; 4], TransformedError)> {
    let mut xi = [0.0; 4];
    let mut guard = [false; 4];
    for i in 0..4 {
        let nominal = envelope_at(&params[i], env_time).xi;
        let eps = config.epsilon(i, &params[i]);
        let mut x = guard_envelope(e.0[i], nominal, eps);
        // the band is |e/ξ| < δ; with δ < 1 the plain guard is not enough
        if transform_error(e.0[i], x, &params[i]).is_err() {
            x = e.0[i].abs() / params[i].delta_lo.min(params[i].delta_hi) + eps;
        }
        guard[i] = x != nominal;
        xi[i] = x;
    }
    let tr = transform_vector(e, &xi, params)?;
    Ok((xi, guard, tr))
}

/// One full filter step: prediction, and correction when `input` carries a
/// usable bundle (at least three non-collinear known features).
pub fn step<N: NavRepr>(
    state: &Estimator<N>,
    input: &StepInput<'_>,
    landmarks: &[Landmark],
    config: &FilterConfig,
) -> Result<(Estimator<N>, StepDiagnostics)> {
    let dt = input.dt;
    if !(dt > 0.0) || !dt.is_finite() || !(input.imu.t >= state.t - TIME_SLACK) {
        return Err(Error::NonMonotoneTime {
            t: input.imu.t,
            previous: state.t,
            dt,
        });
    }
    let env_time = state.t - state.t_start;
    let mut next = predict(state, &input.imu, dt);
    next.x_hat = next.x_hat.settle_gravity(&config.gravity.g, dt);

    let mut diag = StepDiagnostics {
        t: next.t,
        k: state.k,
        corrected: false,
        e: None,
        xi: match &state.envelope {
            Some(p) => core::array::from_fn(|i| envelope_at(&p[i], env_time).xi),
            None => [f64::NAN; 4],
        },
        transformed: None,
        terms: None,
        b_omega_hat: state.b_omega_hat,
        b_a_hat: state.b_a_hat,
        guard: [false; 4],
        initial_conditions_ok: None,
    };

    let pairs: Vec<(Landmark, Vec3)> = match input.observations {
        Some(obs) => match_observations(landmarks, obs)?,
        None => Vec::new(),
    };
    let bundle = match next.x_hat.bundle(&pairs) {
        Ok(b) => Some(b),
        Err(Error::InsufficientFeatures(_)) | Err(Error::EmptyLandmarkSet) => None,
        Err(other) => return Err(other),
    };

    if let Some(first) = bundle {
        let e0 = ErrorVector::new(first.attitude_error(), &first.rt_pe);
        let params = match next.envelope {
            Some(p) => p,
            None => {
                let p = config.resolve_envelopes(&e0)?;
                diag.initial_conditions_ok =
                    Some((0..4).all(|i| p[i].admits_initial_error(e0.0[i])));
                next.envelope = Some(p);
                p
            }
        };
        let (n, h) = match config.correction_span {
            CorrectionSpan::ImuStep => (1, dt),
            CorrectionSpan::SinceLastCorrection => {
                let since = next.last_correction.unwrap_or(next.t_start);
                let span = (next.t - since).clamp(dt, MAX_CORRECTION_SPAN.max(dt));
                let n = libm::round(span / dt).max(1.0);
                (n as usize, span / n)
            }
        };
        let mut bundle = first;
        for i in 0..n {
            if i > 0 {
                bundle = next.x_hat.bundle(&pairs)?;
            }
            let e = ErrorVector::new(bundle.attitude_error(), &bundle.rt_pe);
            let (xi, guard, tr) = guarded_transform(&e, &params, config, env_time)?;
            let (corrected, terms) = correct(&next, &bundle, &tr, config, h);
            next = corrected;
            for (flag, g) in diag.guard.iter_mut().zip(guard) {
                *flag |= g;
            }
            if i == 0 {
                diag.e = Some(e);
                diag.xi = xi;
                diag.transformed = Some(tr);
                diag.terms = Some(terms);
            }
        }
        diag.corrected = true;
        next.last_correction = Some(next.t);
    }

    next.k = state.k + 1;
    diag.b_omega_hat = next.b_omega_hat;
    diag.b_a_hat = next.b_a_hat;
    Ok((next, diag))
}

/// [`step`] on the quaternion backend.
pub fn quat_step(
    state: &QuatFilterState,
    input: &StepInput<'_>,
    landmarks: &[Landmark],
    config: &FilterConfig,
) -> Result<(QuatFilterState, StepDiagnostics)> {
    step(state, input, landmarks, config)
}

/// `Γ(Ω) = [[0, −Ωᵀ], [Ω, −[Ω]×]]` applied to `(q0, q)`.
pub fn gamma_apply(omega: &Vec3, q: &UnitQuaternion) -> (f64, Vec3) {
    (-omega.dot(&q.q), omega * q.q0 - omega.cross(&q.q))
}

/// `Ψ(Ω) = [[0, −Ωᵀ], [Ω, [Ω]×]]` applied to `(q0, q)`.
pub fn psi_apply(omega: &Vec3, q: &UnitQuaternion) -> (f64, Vec3) {
    (-omega.dot(&q.q), omega * q.q0 + omega.cross(&q.q))
}
