//! Projected-gradient ascent with Armijo backtracking.

use serde::{Deserialize, Serialize};

/// Settings of the inner convex solves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerConfig {
    pub max_iters: usize,
    /// Relative objective change below which an inner solve stops.
    pub tol: f64,
    /// Armijo sufficient-increase constant.
    pub armijo: f64,
    /// Step shrink factor during backtracking.
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Distance kept from open dual-domain boundaries, in units of `x*`.
    pub boundary_margin: f64,
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig {
            max_iters: 500,
            tol: 1e-12,
            armijo: 1e-4,
            shrink: 0.5,
            max_backtracks: 60,
            boundary_margin: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Ascent {
    pub x: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximizes `value` from `x0` by projected gradient.
///
/// `project` maps a trial point into the feasible set and returns `false` if it
/// cannot; such trials count as failed steps. A step is accepted only if it
/// satisfies the Armijo condition and does not decrease the objective, so the
/// returned value is never below `value(x0)`. Later steps start from the
/// Barzilai-Borwein length.
pub(crate) fn projected_ascent<F, G, P>(
    x0: Vec<f64>,
    value: F,
    grad: G,
    project: P,
    step0: f64,
    cfg: &InnerConfig,
) -> Ascent
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
    P: Fn(&mut [f64]) -> bool,
{
    let mut x = x0;
    let mut f = value(&x);
    let mut g = grad(&x);
    let mut step = step0;
    let mut iters = 0;
    let mut trial = vec![0.0; x.len()];
    while iters < cfg.max_iters {
        iters += 1;
        let mut t = step;
        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            for ((y, xi), gi) in trial.iter_mut().zip(&x).zip(&g) {
                *y = xi + t * gi;
            }
            if project(&mut trial) {
                let d: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
                if d.iter().all(|&v| v == 0.0) {
                    return Ascent { x };
                }
                let ft = value(&trial);
                if ft.is_finite() && ft >= f && ft - f >= cfg.armijo * dot(&g, &d) {
                    accepted = Some((ft, d));
                    break;
                }
            }
            t *= cfg.shrink;
        }
        let Some((ft, d)) = accepted else { break };
        let gt = grad(&trial);
        let r: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let curv = -dot(&d, &r);
        step = if curv > 0.0 { dot(&d, &d) / curv } else { 2.0 * t };
        if !step.is_finite() || step <= 0.0 {
            step = step0;
        }
        let rel = (ft - f) / f.abs().max(1e-300);
        std::mem::swap(&mut x, &mut trial);
        f = ft;
        g = gt;
        if rel <= cfg.tol {
            break;
        }
    }
    Ascent { x }
}
