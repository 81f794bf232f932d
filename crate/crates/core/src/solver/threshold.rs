//! Threshold search: block coordinate ascent of the private dual over `(β, Q)`.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::inner::projected_ascent;
use super::simplex::{column_mass_ok, project_table, random_constrained_mapping};
use super::{maximize_dual, require_count, SolverConfig};
use crate::error::{Error, Result};
use crate::kernels::PrivacyMapping;
use crate::risk::{block_quadratic, block_quadratic_grad, DualProblem, DualVector, GramCache, RiskConfig, TrainingSet};

/// Output of the threshold search for one constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    /// Final dual value, the largest achievable constraint level found.
    pub theta_star: f64,
    pub beta: DualVector,
    pub q: PrivacyMapping,
    /// Dual value before the first sweep and after each sweep.
    pub trace: Vec<f64>,
    pub converged: bool,
}

pub(crate) fn relative_change(new: f64, old: f64) -> f64 {
    (new - old).abs() / old.abs().max(1e-300)
}

/// Ascends `-Σ_g c_g ‖Q^tᵀ C_g‖²` in block `t` over the constrained set.
fn ascend_block(
    t: usize,
    aggs: &[(f64, Array1<f64>)],
    q: &PrivacyMapping,
    scfg: &SolverConfig,
) -> Result<PrivacyMapping> {
    let (xc, zc) = (q.x_card(), q.z_card());
    let mut start = q.table(t).clone();
    if !project_table(&mut start, Some(scfg.delta2)) || !column_mass_ok(&start, scfg.delta1) {
        return Err(Error::InfeasibleProjection);
    }
    let as_table = |v: &[f64]| Array2::from_shape_vec((xc, zc), v.to_vec()).expect("table shape");
    let value = |v: &[f64]| {
        let tab = as_table(v);
        -aggs.iter().map(|(c, a)| c * block_quadratic(&tab, a)).sum::<f64>()
    };
    let grad = |v: &[f64]| {
        let tab = as_table(v);
        let mut g = Array2::<f64>::zeros((xc, zc));
        for (c, a) in aggs {
            g.scaled_add(-c, &block_quadratic_grad(&tab, a));
        }
        g.into_raw_vec_and_offset().0
    };
    let project = |v: &mut [f64]| {
        let mut tab = as_table(v);
        if !project_table(&mut tab, Some(scfg.delta2)) || !column_mass_ok(&tab, scfg.delta1) {
            return false;
        }
        v.copy_from_slice(tab.as_slice().expect("standard layout"));
        true
    };
    let x0 = start.as_slice().expect("standard layout").to_vec();
    let gmax = grad(&x0).iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut out = q.clone();
    if gmax == 0.0 {
        out.set_table(t, start);
        return Ok(out);
    }
    let res = projected_ascent(x0, value, grad, project, 0.1 / gmax, &scfg.inner);
    out.set_table(t, as_table(&res.x));
    Ok(out)
}

/// One threshold-search step on `Q^t` for the class-normalized risk of a
/// binary `G`, holding `β` and the other blocks fixed.
pub fn update_q_block_alg1(
    t: usize,
    beta: &DualVector,
    q: &PrivacyMapping,
    ts: &TrainingSet,
    rcfg: &RiskConfig,
    scfg: &SolverConfig,
) -> Result<PrivacyMapping> {
    require_count(rcfg)?;
    let p = DualProblem::private_normalized(ts, rcfg)?;
    update_block_for(&p, t, beta, q, ts, scfg)
}

pub(crate) fn update_block_for(
    p: &DualProblem,
    t: usize,
    beta: &DualVector,
    q: &PrivacyMapping,
    ts: &TrainingSet,
    scfg: &SolverConfig,
) -> Result<PrivacyMapping> {
    if beta.len() != p.len() {
        return Err(Error::LengthMismatch {
            expected: p.len(),
            got: beta.len(),
        });
    }
    let agg = p.aggregate(ts, t, &beta.values);
    ascend_block(t, &[(0.5 / p.reg, agg)], q, scfg)
}

/// Threshold search for one constraint, from a random constrained mapping.
pub fn find_theta_star_for<R: Rng + ?Sized>(
    problem: &DualProblem,
    ts: &TrainingSet,
    rcfg: &RiskConfig,
    scfg: &SolverConfig,
    rng: &mut R,
) -> Result<ThresholdResult> {
    require_count(rcfg)?;
    let loss = rcfg.loss.as_ref();
    let kernel = rcfg.kernel.as_ref();
    let mut q = random_constrained_mapping(ts.sensors(), ts.x_card, scfg.z_card, scfg.delta1, scfg.delta2, rng)?;
    let mut gram = GramCache::new(ts, &q, kernel);
    let mut beta = problem.start(loss);
    let mut value = problem.dual_value(loss, gram.matrix(), &beta)?;
    let mut trace = vec![value];
    let mut converged = false;
    for _ in 0..scfg.max_outer {
        beta = maximize_dual(problem, gram.matrix(), loss, Some(&beta), &scfg.inner)?;
        for t in 0..q.sensors() {
            q = update_block_for(problem, t, &beta, &q, ts, scfg)?;
            gram.update_sensor(t, ts, &q, kernel);
        }
        let next = problem.dual_value(loss, gram.matrix(), &beta)?;
        trace.push(next);
        let rel = relative_change(next, value);
        value = next;
        if rel <= scfg.stop_tol {
            converged = true;
            break;
        }
    }
    Ok(ThresholdResult {
        theta_star: value,
        beta,
        q,
        trace,
        converged,
    })
}

fn min_slack(
    problems: &[DualProblem],
    betas: &[DualVector],
    gram: &GramCache,
    theta: f64,
    rcfg: &RiskConfig,
) -> Result<f64> {
    let mut m = f64::INFINITY;
    for (p, b) in problems.iter().zip(betas) {
        m = m.min(p.dual_value(rcfg.loss.as_ref(), gram.matrix(), b)? - theta);
    }
    Ok(m)
}

/// Warm start for several constraints: the per-constraint mapping with the
/// largest worst-case slack, refined by joint ascent of the summed duals when
/// that slack is not positive.
pub(crate) fn joint_warm_start(
    problems: &[DualProblem],
    searches: &[ThresholdResult],
    theta: f64,
    ts: &TrainingSet,
    rcfg: &RiskConfig,
    scfg: &SolverConfig,
) -> Result<(Vec<DualVector>, PrivacyMapping)> {
    let loss = rcfg.loss.as_ref();
    let kernel = rcfg.kernel.as_ref();
    let mut best: Option<(f64, Vec<DualVector>, PrivacyMapping)> = None;
    for cand in searches {
        let gram = GramCache::new(ts, &cand.q, kernel);
        let betas = problems
            .iter()
            .zip(searches)
            .map(|(p, s)| maximize_dual(p, gram.matrix(), loss, Some(&s.beta), &scfg.inner))
            .collect::<Result<Vec<_>>>()?;
        let slack = min_slack(problems, &betas, &gram, theta, rcfg)?;
        if best.as_ref().is_none_or(|(b, _, _)| slack > *b) {
            best = Some((slack, betas, cand.q.clone()));
        }
    }
    let (slack, mut betas, mut q) = best.expect("at least one constraint");
    if slack > 0.0 {
        return Ok((betas, q));
    }
    let mut gram = GramCache::new(ts, &q, kernel);
    let total = |betas: &[DualVector], gram: &GramCache| -> Result<f64> {
        let mut acc = 0.0;
        for (p, b) in problems.iter().zip(betas) {
            acc += p.dual_value(loss, gram.matrix(), b)?;
        }
        Ok(acc)
    };
    let mut value = total(&betas, &gram)?;
    for _ in 0..scfg.max_outer {
        for (p, b) in problems.iter().zip(betas.iter_mut()) {
            *b = maximize_dual(p, gram.matrix(), loss, Some(b), &scfg.inner)?;
        }
        for t in 0..q.sensors() {
            let aggs: Vec<(f64, Array1<f64>)> = problems
                .iter()
                .zip(&betas)
                .map(|(p, b)| (0.5 / p.reg, p.aggregate(ts, t, &b.values)))
                .collect();
            q = ascend_block(t, &aggs, &q, scfg)?;
            gram.update_sensor(t, ts, &q, kernel);
        }
        let next = total(&betas, &gram)?;
        let rel = relative_change(next, value);
        value = next;
        if rel <= scfg.stop_tol {
            break;
        }
    }
    let slack = min_slack(problems, &betas, &gram, theta, rcfg)?;
    if slack > 0.0 {
        Ok((betas, q))
    } else {
        Err(Error::BarrierViolation { slack })
    }
}
