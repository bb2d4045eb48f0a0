//! Steady reaction-advection-diffusion on the unit square:
//!
//! ```text
//! −k Δu + a ∂u/∂x + σ u = 1   in (0,1)²
//!                     u = 0   on x = 0 and x = 1
//!                 ∇u · n = 0   on y = 0 and y = 1
//! ```
//!
//! plus the closed-form solutions for the pure reaction (`a = 0`) and pure
//! advection (`σ = 0`) regimes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::Derivatives;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("diffusion coefficient must be positive, got {0}")]
    NonPositiveDiffusion(f64),
    #[error("no closed-form solution for sigma = {sigma}, a = {a}")]
    NoExactSolution { sigma: f64, a: f64 },
    #[error("invalid problem: {0}")]
    Invalid(String),
}

/// Coefficients of the constant-coefficient problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    /// Reaction coefficient σ.
    pub sigma: f64,
    /// First component of the advection field (a, 0).
    pub a: f64,
    /// Right-hand side.
    #[serde(default = "default_forcing")]
    pub forcing: f64,
}

fn default_forcing() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Reaction,
    Advection,
    Mixed,
}

impl ProblemSpec {
    pub const fn reaction() -> Self {
        Self {
            sigma: 1.0,
            a: 0.0,
            forcing: 1.0,
        }
    }

    pub const fn advection() -> Self {
        Self {
            sigma: 0.0,
            a: 1.0,
            forcing: 1.0,
        }
    }

    pub fn regime(&self) -> Regime {
        match (self.sigma > 0.0, self.a > 0.0) {
            (true, false) => Regime::Reaction,
            (false, true) => Regime::Advection,
            _ => Regime::Mixed,
        }
    }

    /// Lists every violated invariant.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            out.push(format!("problem.sigma >= 0 and finite (got {})", self.sigma));
        }
        if !(self.a.is_finite() && self.a >= 0.0) {
            out.push(format!("problem.a >= 0 and finite (got {})", self.a));
        }
        if !self.forcing.is_finite() {
            out.push(format!("problem.forcing finite (got {})", self.forcing));
        }
        out
    }

    /// `−k(u_xx + u_yy) + a·u_x + σ·u − f`.
    pub fn residual(&self, k: f64, d: &Derivatives) -> Result<f64, PhysicsError> {
        check_k(k)?;
        Ok(self.residual_unchecked(k, d))
    }

    #[inline]
    pub fn residual_unchecked(&self, k: f64, d: &Derivatives) -> f64 {
        -k * (d.u_xx + d.u_yy) + self.a * d.u_x + self.sigma * d.u - self.forcing
    }

    /// Closed-form solution for this problem's regime.
    pub fn exact(&self, k: f64, x: f64, y: f64) -> Result<f64, PhysicsError> {
        check_k(k)?;
        let scale = self.forcing;
        match self.regime() {
            Regime::Reaction => Ok(scale / self.sigma * reaction_profile(self.sigma / k, x)),
            Regime::Advection => Ok(scale / self.a * advection_profile(self.a / k, x)),
            Regime::Mixed => {
                let _ = y;
                Err(PhysicsError::NoExactSolution {
                    sigma: self.sigma,
                    a: self.a,
                })
            }
        }
    }
}

fn check_k(k: f64) -> Result<(), PhysicsError> {
    if k > 0.0 && k.is_finite() {
        Ok(())
    } else {
        Err(PhysicsError::NonPositiveDiffusion(k))
    }
}

/// `1 + [sinh(λ(x−1)) − sinh(λx)] / sinh(λ)` with `λ² = ratio`.
///
/// Evaluated as `1 − cosh(λ(x−½)) / cosh(λ/2)` with both hyperbolic cosines
/// reduced to decaying exponentials, so it never overflows.
fn reaction_profile(ratio: f64, x: f64) -> f64 {
    let lambda = ratio.sqrt();
    let d = (x - 0.5).abs();
    let num = (-lambda * (0.5 - d)).exp() + (-lambda * (0.5 + d)).exp();
    let den = 1.0 + (-lambda).exp();
    1.0 - num / den
}

/// `x − (e^{rx} − 1)/(e^r − 1)` evaluated as `x − e^{r(x−1)}·(1 − e^{−rx})/(1 − e^{−r})`.
fn advection_profile(r: f64, x: f64) -> f64 {
    let ratio = (r * (x - 1.0)).exp() * (-(-r * x).exp_m1()) / (-(-r).exp_m1());
    x - ratio
}

/// Reaction-dominated solution (σ = 1, a = 0).
pub fn exact_reaction(k: f64, x: f64, y: f64) -> Result<f64, PhysicsError> {
    ProblemSpec::reaction().exact(k, x, y)
}

/// Advection-dominated solution (σ = 0, a = 1).
pub fn exact_advection(k: f64, x: f64, y: f64) -> Result<f64, PhysicsError> {
    ProblemSpec::advection().exact(k, x, y)
}

/// The advection solution written with `√a` and `sinh`.
/// It coincides with [`exact_advection`] only at `a = 1`, and it
/// overflows for small `k`; kept as a cross-check.
pub fn sqrt_a_advection_formula(a: f64, k: f64, x: f64) -> f64 {
    let s = a.sqrt() / (2.0 * k);
    (x - (s * x).sinh() / s.sinh() * (s * (x - 1.0)).exp()) / a
}

/// The reaction solution exactly as the naive `sinh` ratio; overflows for `λ ≳ 710`.
pub fn naive_reaction_formula(sigma: f64, k: f64, x: f64) -> f64 {
    let lambda = (4.0 * k * sigma).sqrt() / (2.0 * k);
    ((lambda * (x - 1.0)).sinh() - (lambda * x).sinh()) / lambda.sinh() + 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
}

/// A sampled point on ∂Ω together with its condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub x: f64,
    pub y: f64,
    pub kind: BoundaryKind,
    /// Outward unit normal; meaningful for Neumann points.
    pub normal: (f64, f64),
}

impl BoundaryPoint {
    pub fn dirichlet(x: f64, y: f64) -> Self {
        let normal = if x == 0.0 { (-1.0, 0.0) } else { (1.0, 0.0) };
        Self {
            x,
            y,
            kind: BoundaryKind::Dirichlet,
            normal,
        }
    }

    pub fn neumann(x: f64, y: f64) -> Self {
        let normal = if y == 0.0 { (0.0, -1.0) } else { (0.0, 1.0) };
        Self {
            x,
            y,
            kind: BoundaryKind::Neumann,
            normal,
        }
    }

    pub fn is_valid(&self) -> bool {
        match self.kind {
            BoundaryKind::Dirichlet => (self.x == 0.0 || self.x == 1.0) && (0.0..=1.0).contains(&self.y),
            BoundaryKind::Neumann => {
                (self.y == 0.0 || self.y == 1.0)
                    && (0.0..=1.0).contains(&self.x)
                    && self.normal == (0.0, if self.y == 0.0 { -1.0 } else { 1.0 })
            }
        }
    }

    /// Prescribed value: 0 for both homogeneous conditions.
    pub fn target(&self) -> f64 {
        0.0
    }

    /// The network quantity compared with [`target`](Self::target):
    /// `u` on Dirichlet edges, `∂u/∂n = u_y·n_y` on Neumann edges.
    pub fn observed(&self, d: &Derivatives) -> f64 {
        match self.kind {
            BoundaryKind::Dirichlet => d.u,
            BoundaryKind::Neumann => d.u_x * self.normal.0 + d.u_y * self.normal.1,
        }
    }
}
