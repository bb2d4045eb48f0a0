//! Composite PINN loss `c1·φ_bd + c2·φ_bn + c3·φ_r`.
//!
//! Each term is a mean of squared errors over (point, k) pairs: the Dirichlet
//! mismatch `u`, the Neumann mismatch `∂u/∂n`, and the PDE residual. For a
//! parametric model every spatial point is paired with every training k.
//!
//! This module holds the pointwise reference implementation and the tape
//! recording; [`crate::kernel`] evaluates the same loss batched.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Gradient, Tape, Var};
use crate::network::{InputEncoding, NetworkError, NetworkParams};
use crate::par::KahanSum;
use crate::physics::{BoundaryKind, BoundaryPoint, PhysicsError, ProblemSpec};
use crate::sampling::SampleSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("loss term {0} has no points")]
    Empty(&'static str),
    #[error("no diffusion coefficients to evaluate the loss at")]
    NoK,
    #[error("invalid loss weights: {0}")]
    Weights(String),
    #[error("expected a {expected:?} point, got {got:?}")]
    WrongKind {
        expected: BoundaryKind,
        got: BoundaryKind,
    },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Dirichlet term.
    pub c1: f64,
    /// Neumann term.
    pub c2: f64,
    /// Residual term.
    pub c3: f64,
}

impl LossWeights {
    pub const REACTION: LossWeights = LossWeights {
        c1: 2.0,
        c2: 1.0,
        c3: 0.01,
    };
    pub const ADVECTION: LossWeights = LossWeights {
        c1: 1.0,
        c2: 1.2,
        c3: 1.0,
    };

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [("c1", self.c1), ("c2", self.c2), ("c3", self.c3)] {
            if !(v.is_finite() && v >= 0.0) {
                out.push(format!("weights.{name} >= 0 and finite (got {v})"));
            }
        }
        if out.is_empty() && self.c1 == 0.0 && self.c2 == 0.0 && self.c3 == 0.0 {
            out.push("weights not all zero".into());
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            c1: self.c1 * factor,
            c2: self.c2 * factor,
            c3: self.c3 * factor,
        }
    }

    pub fn combine(&self, phi_bd: f64, phi_bn: f64, phi_r: f64) -> LossBreakdown {
        LossBreakdown {
            phi_bd,
            phi_bn,
            phi_r,
            total: self.c1 * phi_bd + self.c2 * phi_bn + self.c3 * phi_r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub phi_bd: f64,
    pub phi_bn: f64,
    pub phi_r: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.phi_bd.is_finite() && self.phi_bn.is_finite() && self.phi_r.is_finite() && self.total.is_finite()
    }
}

/// Which diffusion coefficients each spatial point is evaluated at, and how
/// they enter the network.
#[derive(Debug, Clone, PartialEq)]
pub struct KPairing {
    pub ks: Vec<f64>,
    pub encoding: InputEncoding,
}

impl KPairing {
    /// Fixed-k model: one coefficient, spatial inputs only.
    pub fn fixed(k: f64) -> Self {
        Self {
            ks: vec![k],
            encoding: InputEncoding::Spatial,
        }
    }

    pub fn parametric(ks: Vec<f64>, encoding: InputEncoding) -> Self {
        Self { ks, encoding }
    }

    fn check(&self) -> Result<(), LossError> {
        if self.ks.is_empty() {
            return Err(LossError::NoK);
        }
        if let Some(&k) = self.ks.iter().find(|&&k| !(k > 0.0 && k.is_finite())) {
            return Err(PhysicsError::NonPositiveDiffusion(k).into());
        }
        Ok(())
    }
}

/// Everything the loss needs besides the parameters.
#[derive(Debug, Clone)]
pub struct LossData<'a> {
    pub spec: ProblemSpec,
    pub samples: &'a SampleSet,
    pub pairing: KPairing,
}

fn check_points(points: &[BoundaryPoint], kind: BoundaryKind, name: &'static str) -> Result<(), LossError> {
    if points.is_empty() {
        return Err(LossError::Empty(name));
    }
    if let Some(p) = points.iter().find(|p| p.kind != kind) {
        return Err(LossError::WrongKind {
            expected: kind,
            got: p.kind,
        });
    }
    Ok(())
}

/// Mean of `u²` over Dirichlet points.
pub fn loss_dirichlet(
    params: &NetworkParams,
    points: &[BoundaryPoint],
    pairing: &KPairing,
) -> Result<f64, LossError> {
    check_points(points, BoundaryKind::Dirichlet, "dirichlet")?;
    pairing.check()?;
    let mut acc = KahanSum::default();
    let mut buf = [0.0; 3];
    for p in points {
        for &k in &pairing.ks {
            let u = params.forward(pairing.encoding.encode(p.x, p.y, k, &mut buf))?;
            acc.add((u - p.target()).powi(2));
        }
    }
    Ok(acc.value() / (points.len() * pairing.ks.len()) as f64)
}

/// Mean of `(∂u/∂n)²` over Neumann points.
pub fn loss_neumann(
    params: &NetworkParams,
    points: &[BoundaryPoint],
    pairing: &KPairing,
) -> Result<f64, LossError> {
    check_points(points, BoundaryKind::Neumann, "neumann")?;
    pairing.check()?;
    let mut acc = KahanSum::default();
    let mut buf = [0.0; 3];
    for p in points {
        for &k in &pairing.ks {
            let d = params.forward_with_derivatives(pairing.encoding.encode(p.x, p.y, k, &mut buf))?;
            acc.add((p.observed(&d) - p.target()).powi(2));
        }
    }
    Ok(acc.value() / (points.len() * pairing.ks.len()) as f64)
}

/// Mean squared PDE residual over every (collocation point, k) pair.
pub fn loss_residual(
    params: &NetworkParams,
    spec: &ProblemSpec,
    points: &[(f64, f64)],
    pairing: &KPairing,
) -> Result<f64, LossError> {
    if points.is_empty() {
        return Err(LossError::Empty("residual"));
    }
    pairing.check()?;
    let mut acc = KahanSum::default();
    let mut buf = [0.0; 3];
    for &(x, y) in points {
        for &k in &pairing.ks {
            let d = params.forward_with_derivatives(pairing.encoding.encode(x, y, k, &mut buf))?;
            acc.add(spec.residual(k, &d)?.powi(2));
        }
    }
    Ok(acc.value() / (points.len() * pairing.ks.len()) as f64)
}

/// Pointwise evaluation of all three terms.
pub fn total_loss(
    params: &NetworkParams,
    data: &LossData<'_>,
    weights: &LossWeights,
) -> Result<LossBreakdown, LossError> {
    let phi_bd = loss_dirichlet(params, &data.samples.dirichlet, &data.pairing)?;
    let phi_bn = loss_neumann(params, &data.samples.neumann, &data.pairing)?;
    let phi_r = loss_residual(params, &data.spec, &data.samples.collocation, &data.pairing)?;
    Ok(weights.combine(phi_bd, phi_bn, phi_r))
}

/// Records the whole loss on `tape` (cleared first) and returns the breakdown
/// together with the tape node of the total.
pub fn record_total_loss(
    tape: &mut Tape,
    params: &NetworkParams,
    data: &LossData<'_>,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Var), LossError> {
    let s = data.samples;
    check_points(&s.dirichlet, BoundaryKind::Dirichlet, "dirichlet")?;
    check_points(&s.neumann, BoundaryKind::Neumann, "neumann")?;
    if s.collocation.is_empty() {
        return Err(LossError::Empty("residual"));
    }
    data.pairing.check()?;
    tape.clear();
    let vars = tape.params(&params.values);
    let enc = data.pairing.encoding;
    let ks = &data.pairing.ks;
    let mut buf = [0.0; 3];

    let mut terms = Vec::new();
    for p in &s.dirichlet {
        for &k in ks {
            let u = params.record_dual(tape, &vars, enc.encode(p.x, p.y, k, &mut buf), 0)?;
            terms.push(tape.square(u.value));
        }
    }
    let phi_bd = mean_on_tape(tape, &terms);

    terms.clear();
    for p in &s.neumann {
        for &k in ks {
            let d = params.record_dual(tape, &vars, enc.encode(p.x, p.y, k, &mut buf), 1)?;
            let e = tape.scale(d.d1, p.normal.1);
            terms.push(tape.square(e));
        }
    }
    let phi_bn = mean_on_tape(tape, &terms);

    terms.clear();
    let spec = data.spec;
    for &(x, y) in &s.collocation {
        for &k in ks {
            let d = params.record_with_derivatives(tape, &vars, enc.encode(x, y, k, &mut buf))?;
            let lap = tape.add(d.u_xx, d.u_yy);
            let diff = tape.scale(lap, -k);
            let adv = tape.scale(d.u_x, spec.a);
            let rea = tape.scale(d.u, spec.sigma);
            let r = tape.add(diff, adv);
            let r = tape.add(r, rea);
            let f = tape.constant(spec.forcing);
            let r = tape.sub(r, f);
            terms.push(tape.square(r));
        }
    }
    let phi_r = mean_on_tape(tape, &terms);

    let a = tape.scale(phi_bd, weights.c1);
    let b = tape.scale(phi_bn, weights.c2);
    let c = tape.scale(phi_r, weights.c3);
    let ab = tape.add(a, b);
    let total = tape.add(ab, c);
    let breakdown = weights.combine(tape.value(phi_bd), tape.value(phi_bn), tape.value(phi_r));
    Ok((breakdown, total))
}

fn mean_on_tape(tape: &mut Tape, terms: &[Var]) -> Var {
    let s = tape.sum(terms);
    tape.scale(s, 1.0 / terms.len() as f64)
}

/// Loss and parameter gradient through the scalar tape.
pub fn tape_value_and_grad(
    tape: &mut Tape,
    params: &NetworkParams,
    data: &LossData<'_>,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Gradient), LossError> {
    let (breakdown, total) = record_total_loss(tape, params, data, weights)?;
    let grad = tape.reverse(total)?;
    Ok((breakdown, grad))
}
