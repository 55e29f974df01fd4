//! Regularised least squares per unknown vector, with self-normalised
//! confidence ellipsoids `{θ : ‖θ̂ − θ‖_V ≤ √β}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};

/// The maintained inverse is recomputed from `V` after this many rank-one updates.
pub const INVERSE_REFRESH_INTERVAL: u64 = 256;

/// Ridge-regression state for one unknown vector.
///
/// Holds `V = ρI + Σ a aᵀ`, its inverse, `b = Σ a·x`, and the query count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorState {
    design: SymMatrix,
    design_inv: SymMatrix,
    response: Vec<f64>,
    theta_hat: Vec<f64>,
    count: u64,
    rho: f64,
    since_refresh: u64,
}

impl EstimatorState {
    pub fn new(d: usize, rho: f64) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::invalid(format!("regulariser must be > 0, got {rho}")));
        }
        if d == 0 {
            return Err(Error::invalid("dimension must be >= 1"));
        }
        Ok(Self {
            design: SymMatrix::scaled_identity(d, rho),
            design_inv: SymMatrix::scaled_identity(d, 1.0 / rho),
            response: vec![0.0; d],
            theta_hat: vec![0.0; d],
            count: 0,
            rho,
            since_refresh: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.response.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn design(&self) -> &SymMatrix {
        &self.design
    }

    pub fn design_inv(&self) -> &SymMatrix {
        &self.design_inv
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    /// Records one observation `x ≈ ⟨a, θ⟩`.
    pub fn update(&mut self, a: &[f64], x: f64) -> Result<()> {
        if a.len() != self.dim() {
            return Err(Error::invalid(format!(
                "action has dimension {}, estimator has {}",
                a.len(),
                self.dim()
            )));
        }
        if !linalg::is_finite(a) || !x.is_finite() {
            return Err(Error::invalid("non-finite observation"));
        }
        self.design.add_outer(a, 1.0);
        linalg::axpy(&mut self.response, x, a);
        self.count += 1;
        self.since_refresh += 1;
        if self.since_refresh >= INVERSE_REFRESH_INTERVAL {
            self.design_inv = linalg::spd_inverse(&self.design)?;
            self.since_refresh = 0;
        } else {
            linalg::sherman_morrison_in_place(&mut self.design_inv, a)?;
        }
        self.theta_hat = linalg::spd_solve(&self.design, &self.response)?;
        Ok(())
    }

    /// Regularised maximum-likelihood estimate `θ̂ = V⁻¹ b`.
    pub fn mle(&self) -> &[f64] {
        &self.theta_hat
    }

    /// `‖a‖_{V⁻¹}`
    pub fn exploration_width(&self, a: &[f64]) -> f64 {
        self.design_inv.quad_form(a).max(0.0).sqrt()
    }

    /// `‖a‖_V`
    pub fn design_norm(&self, a: &[f64]) -> f64 {
        self.design.quad_form(a).max(0.0).sqrt()
    }

    /// `‖θ̂ − θ‖_V`
    pub fn distance(&self, theta: &[f64]) -> f64 {
        self.design_norm(&linalg::sub(&self.theta_hat, theta))
    }

    pub fn in_ellipsoid(&self, theta: &[f64], radius: f64) -> bool {
        self.distance(theta) <= radius
    }

    /// Swaps the ridge term `ρI` for `ρ'I`, keeping all observations.
    pub fn rebase_regularizer(&mut self, rho: f64) -> Result<()> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::invalid(format!("regulariser must be > 0, got {rho}")));
        }
        self.design.add_identity(rho - self.rho);
        self.rho = rho;
        self.design_inv = linalg::spd_inverse(&self.design)?;
        self.since_refresh = 0;
        self.theta_hat = linalg::spd_solve(&self.design, &self.response)?;
        Ok(())
    }
}

/// Noise scale `R`, norm bound `M`, failure probability `δ` and dimension `d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceParams {
    pub noise: f64,
    pub norm_bound: f64,
    pub delta: f64,
    pub dim: usize,
}

impl ConfidenceParams {
    /// `noise` may be zero (noiseless simulations); the other bounds are strict.
    pub fn new(noise: f64, norm_bound: f64, delta: f64, dim: usize) -> Result<Self> {
        if !(noise >= 0.0) || !noise.is_finite() {
            return Err(Error::invalid(format!("noise scale must be >= 0, got {noise}")));
        }
        if !(norm_bound > 0.0) || !norm_bound.is_finite() {
            return Err(Error::invalid(format!("norm bound must be > 0, got {norm_bound}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0,1), got {delta}")));
        }
        if dim == 0 {
            return Err(Error::invalid("dimension must be >= 1"));
        }
        Ok(Self {
            noise,
            norm_bound,
            delta,
            dim,
        })
    }

    pub fn with_delta(self, delta: f64) -> Result<Self> {
        Self::new(self.noise, self.norm_bound, delta, self.dim)
    }
}

/// `√β_T = R √(d log((1 + T M²/ρ)/δ)) + √ρ M`
pub fn beta_radius(count: u64, params: &ConfidenceParams, rho: f64) -> f64 {
    let m = params.norm_bound;
    let log_term = ((1.0 + count as f64 * m * m / rho) / params.delta).ln();
    params.noise * (params.dim as f64 * log_term).sqrt() + rho.sqrt() * m
}
