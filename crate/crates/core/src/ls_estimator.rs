//! Scalar recursive least squares, equivalently the Kalman filter for a
//! constant parameter with a Gaussian prior.
//!
//! The state is carried in information form: `r = P^{-1}` is primary and `P`
//! is derived from it. Exponential nonlinearities push `φ²` across hundreds of
//! orders of magnitude, and `P ← P - P²φ²/(1+φ²P)` loses every digit there.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsState {
    /// Current estimate `θ_t`.
    pub theta_hat: f64,
    /// Posterior variance `P_t = 1 / r_{t-1}`.
    pub p: f64,
    /// Accumulated information `r_{t-1} = 1/P_0 + Σ_{i<t} φ_i²`.
    pub r_prev: f64,
    pub t: u64,
    pub sum_phi_sq: f64,
    /// `Σ_{i<t} φ_i·z_i` with `z_i = y_{i+1} - u_i`.
    pub sum_phi_residual: f64,
}

impl LsState {
    pub fn new(theta0: f64, p0: f64) -> Result<Self> {
        if !theta0.is_finite() || !(p0 > 0.0) || !p0.is_finite() {
            return Err(Error::domain(format!("prior needs finite theta0 and 0 < p0 < inf, got ({theta0}, {p0})")));
        }
        Ok(Self {
            theta_hat: theta0,
            p: p0,
            r_prev: 1.0 / p0,
            t: 0,
            sum_phi_sq: 0.0,
            sum_phi_residual: 0.0,
        })
    }

    /// One step of the recursion given the regressor and `z = y_{t+1} - u_t`.
    pub fn update(&self, phi: f64, observation_minus_control: f64) -> Result<Self> {
        if !observation_minus_control.is_finite() {
            return Err(Error::EstimatorPoisoned("non-finite observation"));
        }
        self.update_innovation(phi, observation_minus_control - phi * self.theta_hat)
            .map(|mut next| {
                next.sum_phi_residual = self.sum_phi_residual + phi * observation_minus_control;
                next
            })
    }

    /// Same step, fed the innovation `z - φθ_t` directly.
    ///
    /// The closed loop knows the innovation as `θ̃φ + w` without forming
    /// `z = θφ + u + w`, which would cancel catastrophically for large `φ`.
    pub fn update_innovation(&self, phi: f64, innovation: f64) -> Result<Self> {
        if !phi.is_finite() {
            return Err(Error::EstimatorPoisoned("non-finite regressor"));
        }
        if !innovation.is_finite() {
            return Err(Error::EstimatorPoisoned("non-finite innovation"));
        }
        let phi_sq = phi * phi;
        let r = self.r_prev + phi_sq;
        if !r.is_finite() {
            return Err(Error::EstimatorPoisoned("information overflow"));
        }
        // a_t·P_t·φ_t = φ_t / r_t
        let theta_hat = self.theta_hat + phi * (innovation / r);
        if !theta_hat.is_finite() {
            return Err(Error::EstimatorPoisoned("non-finite estimate"));
        }
        Ok(Self {
            theta_hat,
            p: 1.0 / r,
            r_prev: r,
            t: self.t + 1,
            sum_phi_sq: self.sum_phi_sq + phi_sq,
            sum_phi_residual: self.sum_phi_residual + phi * (innovation + phi * self.theta_hat),
        })
    }

    /// `σ_t² = 1 + φ²P_t = r_t / r_{t-1}` for the regressor about to be used.
    pub fn sigma_sq(&self, phi: f64) -> f64 {
        (self.r_prev + phi * phi) / self.r_prev
    }

    /// `a_t = (1 + φ²P_t)^{-1}`.
    pub fn gain_factor(&self, phi: f64) -> f64 {
        self.r_prev / (self.r_prev + phi * phi)
    }
}

/// Closed-form Gaussian posterior of `θ ~ N(θ0, P0)` after observing
/// `z_i = θφ_i + w_i` with unit-variance noise.
pub fn batch_posterior(theta0: f64, p0: f64, history: &[(f64, f64)]) -> (f64, f64) {
    let mut info = 1.0 / p0;
    let mut weighted = theta0 / p0;
    for &(phi, z) in history {
        info += phi * phi;
        weighted += phi * z;
    }
    (weighted / info, 1.0 / info)
}
