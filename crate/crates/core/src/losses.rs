//! Convex margin losses and their conjugate duals.
//!
//! Every loss is a [`MarginLoss`] trait object looked up by name through
//! [`loss_by_name`]. Dual quantities are expressed through `x*`, so that
//! `dual(x*)` is the conjugate `φ*(-x*)` evaluated on the loss's dual domain.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Name of the loss used when none is configured.
pub const DEFAULT_LOSS: &str = "logistic";

/// Closed interval of admissible `x*` values. Either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualDomain {
    pub lo: f64,
    pub hi: f64,
}

impl DualDomain {
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }
}

pub trait MarginLoss: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// `φ(u)`.
    fn eval(&self, u: f64) -> f64;

    /// A (sub)derivative of `φ` at `u`.
    fn derivative(&self, u: f64) -> f64;

    fn dual_domain(&self) -> DualDomain;

    /// `φ*(-x*)` without the domain check.
    fn dual_unchecked(&self, xstar: f64) -> f64;

    /// `d/dx* φ*(-x*)`. May be infinite on the domain boundary.
    fn dual_slope(&self, xstar: f64) -> f64;

    /// `(a, r)` such that `a^r (φ(0) - R*_φ(η)) >= |1/2 - η|^r` for all `η`.
    fn assumption_constants(&self) -> (f64, f64);

    /// `φ(0) - R*_φ(η)`, evaluated without cancellation near `η = 1/2`.
    fn excess_conditional_risk(&self, eta: f64) -> f64;

    /// Whether the dual slope blows up at the domain boundary, in which case
    /// iterates must stay strictly inside it.
    fn open_dual_boundary(&self) -> bool {
        false
    }

    /// `φ(0)`.
    fn at_zero(&self) -> f64 {
        self.eval(0.0)
    }

    /// `φ*(-x*)`, rejecting points outside the dual domain.
    fn dual(&self, xstar: f64) -> Result<f64> {
        let dom = self.dual_domain();
        if !dom.contains(xstar) || xstar.is_nan() {
            return Err(Error::Domain {
                loss: self.name(),
                value: xstar,
                lo: dom.lo,
                hi: dom.hi,
            });
        }
        Ok(self.dual_unchecked(xstar))
    }

    /// `R*_φ(η) = inf_γ η φ(γ) + (1 - η) φ(-γ)`.
    fn conditional_risk(&self, eta: f64) -> f64 {
        self.at_zero() - self.excess_conditional_risk(eta)
    }

    /// An interior `x*` used to seed dual iterations.
    fn dual_start(&self) -> f64 {
        let dom = self.dual_domain();
        if dom.is_bounded() {
            0.5 * (dom.lo + dom.hi)
        } else {
            1.0
        }
    }
}

/// `x ln x` with `0 ln 0 = 0`.
fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// `φ(u) = e^{-u}`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Exponential;

impl MarginLoss for Exponential {
    fn name(&self) -> &'static str {
        "exponential"
    }
    fn eval(&self, u: f64) -> f64 {
        (-u).exp()
    }
    fn derivative(&self, u: f64) -> f64 {
        -(-u).exp()
    }
    fn dual_domain(&self) -> DualDomain {
        DualDomain {
            lo: 0.0,
            hi: f64::INFINITY,
        }
    }
    fn dual_unchecked(&self, x: f64) -> f64 {
        xlogx(x) - x
    }
    fn dual_slope(&self, x: f64) -> f64 {
        x.ln()
    }
    fn assumption_constants(&self) -> (f64, f64) {
        (std::f64::consts::FRAC_1_SQRT_2, 2.0)
    }
    fn excess_conditional_risk(&self, eta: f64) -> f64 {
        // 1 - 2 sqrt(η(1-η)) = (1-2η)^2 / (1 + 2 sqrt(η(1-η)))
        let t = 2.0 * (0.5 - eta);
        t * t / (1.0 + 2.0 * (eta * (1.0 - eta)).sqrt())
    }
    fn open_dual_boundary(&self) -> bool {
        true
    }
}

/// `φ(u) = log(1 + e^{-u})`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Logistic;

impl MarginLoss for Logistic {
    fn name(&self) -> &'static str {
        "logistic"
    }
    fn eval(&self, u: f64) -> f64 {
        if u >= 0.0 {
            (-u).exp().ln_1p()
        } else {
            -u + u.exp().ln_1p()
        }
    }
    fn derivative(&self, u: f64) -> f64 {
        if u >= 0.0 {
            let e = (-u).exp();
            -e / (1.0 + e)
        } else {
            -1.0 / (1.0 + u.exp())
        }
    }
    fn dual_domain(&self) -> DualDomain {
        DualDomain { lo: 0.0, hi: 1.0 }
    }
    fn dual_unchecked(&self, x: f64) -> f64 {
        xlogx(x) + xlogx(1.0 - x)
    }
    fn dual_slope(&self, x: f64) -> f64 {
        x.ln() - (1.0 - x).ln()
    }
    fn assumption_constants(&self) -> (f64, f64) {
        (std::f64::consts::FRAC_1_SQRT_2, 2.0)
    }
    fn excess_conditional_risk(&self, eta: f64) -> f64 {
        // log 2 - H(η) = KL(η || 1/2), written around η = 1/2 + d.
        let d = eta - 0.5;
        let up = if eta == 0.0 { 0.0 } else { eta * (2.0 * d).ln_1p() };
        let down = if eta == 1.0 {
            0.0
        } else {
            (1.0 - eta) * (-2.0 * d).ln_1p()
        };
        (up + down).max(0.0)
    }
    fn conditional_risk(&self, eta: f64) -> f64 {
        // binary entropy in nats
        -xlogx(eta) - xlogx(1.0 - eta)
    }
    fn open_dual_boundary(&self) -> bool {
        true
    }
}

/// `φ(u) = max(1 - u, 0)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Hinge;

impl MarginLoss for Hinge {
    fn name(&self) -> &'static str {
        "hinge"
    }
    fn eval(&self, u: f64) -> f64 {
        (1.0 - u).max(0.0)
    }
    fn derivative(&self, u: f64) -> f64 {
        if u < 1.0 {
            -1.0
        } else {
            0.0
        }
    }
    fn dual_domain(&self) -> DualDomain {
        DualDomain { lo: 0.0, hi: 1.0 }
    }
    fn dual_unchecked(&self, x: f64) -> f64 {
        -x
    }
    fn dual_slope(&self, _x: f64) -> f64 {
        -1.0
    }
    fn assumption_constants(&self) -> (f64, f64) {
        (0.5, 1.0)
    }
    fn excess_conditional_risk(&self, eta: f64) -> f64 {
        2.0 * (0.5 - eta).abs()
    }
}

/// `φ(u) = (1 - u)^2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Quadratic;

impl MarginLoss for Quadratic {
    fn name(&self) -> &'static str {
        "quadratic"
    }
    fn eval(&self, u: f64) -> f64 {
        (1.0 - u) * (1.0 - u)
    }
    fn derivative(&self, u: f64) -> f64 {
        -2.0 * (1.0 - u)
    }
    fn dual_domain(&self) -> DualDomain {
        DualDomain {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }
    fn dual_unchecked(&self, x: f64) -> f64 {
        x * x / 4.0 - x
    }
    fn dual_slope(&self, x: f64) -> f64 {
        x / 2.0 - 1.0
    }
    fn assumption_constants(&self) -> (f64, f64) {
        (0.5, 2.0)
    }
    fn excess_conditional_risk(&self, eta: f64) -> f64 {
        let t = 2.0 * (0.5 - eta);
        t * t
    }
}

type LossCtor = fn() -> Arc<dyn MarginLoss>;

const REGISTRY: &[(&str, LossCtor)] = &[
    ("exponential", || Arc::new(Exponential)),
    ("logistic", || Arc::new(Logistic)),
    ("hinge", || Arc::new(Hinge)),
    ("quadratic", || Arc::new(Quadratic)),
];

/// Names accepted by [`loss_by_name`].
pub fn loss_names() -> impl Iterator<Item = &'static str> {
    REGISTRY.iter().map(|(name, _)| *name)
}

pub fn loss_by_name(name: &str) -> Result<Arc<dyn MarginLoss>> {
    let key = name.trim().to_ascii_lowercase();
    REGISTRY
        .iter()
        .find(|(n, _)| *n == key)
        .map(|(_, ctor)| ctor())
        .ok_or_else(|| Error::UnknownLoss(name.to_string()))
}
