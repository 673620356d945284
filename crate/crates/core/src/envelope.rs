//! Prescribed-performance envelopes and the logarithmic error transform.
//!
//! Each error channel `eᵢ` is kept inside `(−δ̲ᵢ ξᵢ(t), δ̄ᵢ ξᵢ(t))` where
//! `ξᵢ(t) = (ξ⁰ − ξ^∞) e^{−ℓt} + ξ^∞`. Inside that band the transformed error
//! `Eᵢ = ½ ln((δ̲ + e/ξ)/(δ̄ − e/ξ))` is unconstrained.

use libm::{exp, log, tanh};

use crate::se23::Vec3;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeParams {
    pub xi0: f64,
    pub xi_inf: f64,
    pub ell: f64,
    pub delta_lo: f64,
    pub delta_hi: f64,
}

impl EnvelopeParams {
    /// Symmetric band `δ̲ = δ̄ = delta`.
    pub fn symmetric(xi0: f64, xi_inf: f64, ell: f64, delta: f64) -> Result<Self> {
        let p = EnvelopeParams {
            xi0,
            xi_inf,
            ell,
            delta_lo: delta,
            delta_hi: delta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason| Err(Error::InvalidParameter { name, reason });
        if !(self.xi_inf > 0.0) || !self.xi_inf.is_finite() {
            return bad("envelope.xi_inf", "must be positive");
        }
        if !(self.xi0 > self.xi_inf) || !self.xi0.is_finite() {
            return bad("envelope.xi0", "must exceed xi_inf");
        }
        if !(self.ell > 0.0) || !self.ell.is_finite() {
            return bad("envelope.ell", "must be positive");
        }
        if !(self.delta_lo > 0.0 && self.delta_hi > 0.0)
            || !(self.delta_lo.is_finite() && self.delta_hi.is_finite())
        {
            return bad("envelope.delta", "must be positive");
        }
        Ok(())
    }

    /// Conditions under which convergence inside the envelope is guaranteed:
    /// `δ̲ = δ̄ > |e(0)|` and `ξ⁰ > |e(0)|`.
    pub fn admits_initial_error(&self, e0: f64) -> bool {
        self.delta_lo == self.delta_hi && self.delta_lo > e0.abs() && self.xi0 > e0.abs()
    }

    /// Default guard increment: a thousandth of the steady-state bound.
    pub fn default_epsilon(&self) -> f64 {
        1e-3 * self.xi_inf
    }
}

/// Envelope value, its rate, and `μ = ξ̇/ξ` at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeState {
    pub xi: f64,
    pub xi_dot: f64,
    pub mu: f64,
}

/// `[‖MR̃‖_I, (R̃ᵀP̃_ε)ᵀ]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorVector(pub [f64; 4]);

impl ErrorVector {
    pub fn new(attitude: f64, position: &Vec3) -> Self {
        ErrorVector([attitude, position.x, position.y, position.z])
    }

    pub fn attitude(&self) -> f64 {
        self.0[0]
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.0[1], self.0[2], self.0[3])
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|v| v * v).sum())
    }
}

/// Transformed errors and gain factors for the attitude and position channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformedError {
    pub e_r: f64,
    pub e_p: Vec3,
    pub delta_r: f64,
    /// Diagonal of `Δ_P`.
    pub delta_p: Vec3,
}

pub fn envelope_at(params: &EnvelopeParams, t: f64) -> EnvelopeState {
    let decay = exp(-params.ell * t);
    let span = params.xi0 - params.xi_inf;
    let xi = span * decay + params.xi_inf;
    let xi_dot = -params.ell * span * decay;
    EnvelopeState {
        xi,
        xi_dot,
        mu: xi_dot / xi,
    }
}

/// `(E, Δ)` for error `e` against envelope value `xi`.
pub fn transform_error(e: f64, xi: f64, params: &EnvelopeParams) -> Result<(f64, f64)> {
    let r = e / xi;
    let lo = params.delta_lo + r;
    let hi = params.delta_hi - r;
    if !(lo > 0.0 && hi > 0.0) || !(xi > 0.0) {
        return Err(Error::EnvelopeViolation {
            e,
            xi,
            delta_lo: params.delta_lo,
            delta_hi: params.delta_hi,
        });
    }
    let big_e = 0.5 * log(lo / hi);
    let delta = (1.0 / lo + 1.0 / hi) / (2.0 * xi);
    Ok((big_e, delta))
}

/// Inverse of the transform: the normalized error `e/ξ` for a given `E`.
pub fn inverse_transform(big_e: f64, params: &EnvelopeParams) -> f64 {
    if params.delta_lo == params.delta_hi {
        return params.delta_hi * tanh(big_e);
    }
    // (δ̲ + r) = e^{2E}(δ̄ − r), written to avoid overflow for large |E|
    if big_e >= 0.0 {
        let w = exp(-2.0 * big_e);
        (params.delta_hi - params.delta_lo * w) / (1.0 + w)
    } else {
        let w = exp(2.0 * big_e);
        (params.delta_hi * w - params.delta_lo) / (w + 1.0)
    }
}

/// Widens the envelope to `|e| + ε` when the error has left it.
pub fn guard_envelope(e: f64, xi: f64, epsilon: f64) -> f64 {
    if e.abs() > xi {
        e.abs() + epsilon
    } else {
        xi
    }
}

/// Channelwise transform of the full error vector.
pub fn transform_vector(
    e: &ErrorVector,
    xi: &[f64; 4],
    params: &[EnvelopeParams; 4],
) -> Result<TransformedError> {
    let mut big = [0.0; 4];
    let mut gain = [0.0; 4];
    for i in 0..4 {
        let (b, g) = transform_error(e.0[i], xi[i], &params[i])?;
        big[i] = b;
        gain[i] = g;
    }
    Ok(TransformedError {
        e_r: big[0],
        e_p: Vec3::new(big[1], big[2], big[3]),
        delta_r: gain[0],
        delta_p: Vec3::new(gain[1], gain[2], gain[3]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(delta: f64) -> EnvelopeParams {
        EnvelopeParams::symmetric(0.53, 0.03, 1.2, delta).unwrap()
    }

    #[test]
    fn envelope_closed_form() {
        let p = params(1.0);
        assert_eq!(envelope_at(&p, 0.0).xi, 0.53);
        assert_relative_eq!(envelope_at(&p, 1e3).xi, 0.03, epsilon = 1e-15);
        assert_relative_eq!(
            envelope_at(&p, 1.0).xi,
            0.5 * (-1.2f64).exp() + 0.03,
            epsilon = 1e-15
        );
        assert_relative_eq!(envelope_at(&p, 1.0).xi, 0.180597, epsilon = 1e-6);
        let s = envelope_at(&p, 0.7);
        assert!(s.mu < 0.0);
        assert_relative_eq!(s.mu, s.xi_dot / s.xi, epsilon = 0.0);
    }

    #[test]
    fn transform_known_values() {
        let p = params(1.0);
        let (e, d) = transform_error(0.0, 0.4, &p).unwrap();
        assert_eq!(e, 0.0);
        assert_relative_eq!(d, 1.0 / (0.4 * 1.0), epsilon = 1e-15);
        let (e, _) = transform_error(0.2, 0.4, &p).unwrap();
        assert_relative_eq!(e, 0.5 * 3f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(e, 0.549306, epsilon = 1e-6);
        let (e, _) = transform_error(-0.2, 0.4, &p).unwrap();
        assert!(e < 0.0);
    }

    #[test]
    fn transform_rejects_outside_band() {
        let p = params(1.0);
        assert!(matches!(
            transform_error(0.4, 0.4, &p),
            Err(Error::EnvelopeViolation { .. })
        ));
        assert!(transform_error(-0.5, 0.4, &p).is_err());
        assert!(transform_error(0.39, 0.4, &p).is_ok());
    }

    #[test]
    fn guard_cases() {
        assert_eq!(guard_envelope(0.1, 0.5, 1e-3), 0.5);
        assert_relative_eq!(guard_envelope(0.6, 0.5, 1e-3), 0.601, epsilon = 1e-15);
        assert_relative_eq!(guard_envelope(-0.6, 0.5, 1e-3), 0.601, epsilon = 1e-15);
    }

    #[test]
    fn zero_error_vector() {
        let p = [params(2.0); 4];
        let t = transform_vector(&ErrorVector([0.0; 4]), &[0.5; 4], &p).unwrap();
        assert_eq!(t.e_r, 0.0);
        assert_eq!(t.e_p, Vec3::zeros());
        assert!(t.delta_p.iter().all(|d| *d > 0.0));
    }

    #[test]
    fn asymmetric_inverse_round_trip() {
        let p = EnvelopeParams {
            xi0: 1.0,
            xi_inf: 0.1,
            ell: 1.0,
            delta_lo: 0.5,
            delta_hi: 2.0,
        };
        for r in [-0.49, -0.2, 0.0, 0.7, 1.99] {
            let (e, _) = transform_error(r, 1.0, &p).unwrap();
            assert_relative_eq!(inverse_transform(e, &p), r, epsilon = 1e-12);
        }
    }

    #[test]
    fn params_validation() {
        assert!(EnvelopeParams::symmetric(0.01, 0.03, 1.2, 1.0).is_err());
        assert!(EnvelopeParams::symmetric(1.0, 0.03, 0.0, 1.0).is_err());
        assert!(EnvelopeParams::symmetric(1.0, 0.03, 1.2, -1.0).is_err());
        let p = params(1.0);
        assert!(p.admits_initial_error(0.5));
        assert!(!p.admits_initial_error(1.5));
        assert_relative_eq!(p.default_epsilon(), 3e-5, epsilon = 1e-18);
    }
}
