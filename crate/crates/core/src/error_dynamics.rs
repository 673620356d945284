//! Continuous-time error dynamics, for checking the filter against twin
//! truth/estimate flows.
//!
//! Errors are `R̃ = RR̂ᵀ`, `P̃ = P − R̃P̂`, `Ṽ = V − R̃V̂`. Bias errors are
//! `b̃_Ω = b_Ω − b̂_Ω` and `b̃_a = b̂_a − b_a`. With `W` and the bias estimates
//! held constant, truth follows `exp(−Gh) X exp(Uh)` and the estimate follows
//! `exp(−Wh) X̂ exp(Ûh)`; [`finite_difference`] differentiates along those
//! flows and [`closed_form`] gives the analytic right-hand sides.

use crate::filter::{gravity_tangent, CorrectionTerms};
use crate::se23::{skew_matrix, upsilon, weighted_rot_distance, Mat3, Mat5, NavState, TangentElement, Vec3};

/// One instant of a truth/estimate pair with everything the rates depend on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwinPoint {
    pub truth: NavState,
    pub estimate: NavState,
    /// True body rate and specific force.
    pub omega: Vec3,
    pub accel: Vec3,
    pub b_omega: Vec3,
    pub b_a: Vec3,
    pub b_omega_hat: Vec3,
    pub b_a_hat: Vec3,
    pub terms: CorrectionTerms,
    pub p_c: Vec3,
    pub m: Mat3,
    pub gravity: Vec3,
}

/// `(R̃, P̃, Ṽ, ‖MR̃‖_I, R̃ᵀP̃_ε, R̃ᵀṼ)` or their time derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorQuantities {
    pub r_tilde: Mat3,
    pub p_tilde: Vec3,
    pub v_tilde: Vec3,
    pub attitude: f64,
    pub rt_pe: Vec3,
    pub rt_v: Vec3,
}

impl ErrorQuantities {
    pub fn of(truth: &NavState, estimate: &NavState, p_c: &Vec3, m: &Mat3) -> Self {
        let r_tilde = truth.rot.matrix() * estimate.rot.matrix().transpose();
        let p_tilde = truth.pos - r_tilde * estimate.pos;
        let v_tilde = truth.vel - r_tilde * estimate.vel;
        let rt = r_tilde.transpose();
        ErrorQuantities {
            r_tilde,
            p_tilde,
            v_tilde,
            attitude: weighted_rot_distance(m, &(m * r_tilde)),
            rt_pe: rt * p_tilde - rt * p_c + p_c,
            rt_v: rt * v_tilde,
        }
    }

    /// Largest entrywise difference per quantity, each scaled by
    /// `max(1, |reference|)` of the matching entry of `reference`.
    pub fn relative_residuals(&self, reference: &ErrorQuantities) -> [f64; 6] {
        fn rel(a: f64, b: f64) -> f64 {
            (a - b).abs() / b.abs().max(1.0)
        }
        fn worst<'a>(a: impl Iterator<Item = &'a f64>, b: impl Iterator<Item = &'a f64>) -> f64 {
            a.zip(b).map(|(x, y)| rel(*x, *y)).fold(0.0, f64::max)
        }
        [
            worst(self.r_tilde.iter(), reference.r_tilde.iter()),
            worst(self.p_tilde.iter(), reference.p_tilde.iter()),
            worst(self.v_tilde.iter(), reference.v_tilde.iter()),
            rel(self.attitude, reference.attitude),
            worst(self.rt_pe.iter(), reference.rt_pe.iter()),
            worst(self.rt_v.iter(), reference.rt_v.iter()),
        ]
    }
}

/// Analytic error rates at `pt`.
pub fn closed_form(pt: &TwinPoint) -> ErrorQuantities {
    let q = ErrorQuantities::of(&pt.truth, &pt.estimate, &pt.p_c, &pt.m);
    let r_hat = pt.estimate.rot.matrix();
    let r = pt.truth.rot.matrix();
    let rt = q.r_tilde.transpose();
    let w = &pt.terms;
    let bw = r_hat * (pt.b_omega - pt.b_omega_hat);
    let ba_tilde = pt.b_a_hat - pt.b_a;
    let sx = skew_matrix;

    let r_dot = -q.r_tilde * sx(&bw) + q.r_tilde * sx(&w.w_omega);
    let p_dot = q.v_tilde - q.r_tilde * sx(&pt.estimate.pos) * bw + q.r_tilde * w.w_v;
    let v_dot = pt.gravity + r * ba_tilde - q.r_tilde * sx(&pt.estimate.vel) * bw + q.r_tilde * w.w_a;
    let attitude_dot = -0.5 * upsilon(&(pt.m * q.r_tilde)).dot(&(bw - w.w_omega));
    let rt_pe_dot = q.rt_v - sx(&(pt.estimate.pos - pt.p_c + q.rt_pe)) * bw
        - sx(&(pt.p_c - q.rt_pe)) * w.w_omega
        + w.w_v;
    let rt_v_dot = -sx(&(rt * pt.truth.vel)) * bw - sx(&w.w_omega) * q.rt_v
        + r_hat * ba_tilde
        + rt * pt.gravity
        + w.w_a;

    ErrorQuantities {
        r_tilde: r_dot,
        p_tilde: p_dot,
        v_tilde: v_dot,
        attitude: attitude_dot,
        rt_pe: rt_pe_dot,
        rt_v: rt_v_dot,
    }
}

/// Central differences of the error quantities along the twin flows over
/// `±h`. `flow(u, t)` must return `exp(u t)` for a tangent element `u`.
pub fn finite_difference<F>(pt: &TwinPoint, h: f64, flow: F) -> ErrorQuantities
where
    F: Fn(&TangentElement, f64) -> Mat5,
{
    let u = TangentElement::new(&pt.omega, Vec3::zeros(), pt.accel, 1.0);
    let omega_m = pt.omega + pt.b_omega;
    let a_m = pt.accel + pt.b_a;
    let u_hat = TangentElement::new(&(omega_m - pt.b_omega_hat), Vec3::zeros(), a_m - pt.b_a_hat, 1.0);
    let neg_g = gravity_tangent(&pt.gravity);
    let neg_w = pt.terms.tangent().scaled(-1.0);
    let x = pt.truth.to_matrix();
    let x_hat = pt.estimate.to_matrix();

    let at = |s: f64| {
        let truth = NavState::from_top_rows(&(flow(&neg_g, s) * x * flow(&u, s)));
        let est = NavState::from_top_rows(&(flow(&neg_w, s) * x_hat * flow(&u_hat, s)));
        ErrorQuantities::of(&truth, &est, &pt.p_c, &pt.m)
    };
    let fwd = at(h);
    let back = at(-h);
    let k = 0.5 / h;
    ErrorQuantities {
        r_tilde: (fwd.r_tilde - back.r_tilde) * k,
        p_tilde: (fwd.p_tilde - back.p_tilde) * k,
        v_tilde: (fwd.v_tilde - back.v_tilde) * k,
        attitude: (fwd.attitude - back.attitude) * k,
        rt_pe: (fwd.rt_pe - back.rt_pe) * k,
        rt_v: (fwd.rt_v - back.rt_v) * k,
    }
}
