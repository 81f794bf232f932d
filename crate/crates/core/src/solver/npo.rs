//! Barrier optimization of `(α, β, Q)` for the public risk under privacy
//! constraints `R̂*_g(β_g, Q) > θ`.
//!
//! The fusion rule `w` is held fixed during the mapping steps, which makes the
//! public risk convex in each block `Q^t`. An `α` step only replaces `w` when
//! the new rule has a lower public risk at the current mapping.

use ndarray::{Array1, Array2};

use super::inner::projected_ascent;
use super::simplex::project_table;
use super::threshold::relative_change;
use super::{maximize_dual, require_count, SolveResult, SolverConfig, TraceRecord};
use crate::error::{Error, Result};
use crate::kernels::PrivacyMapping;
use crate::risk::{block_quadratic, block_quadratic_grad, DualProblem, DualVector, FusionWeights, GramCache, RiskConfig, TrainingSet};

pub(crate) struct Outcome {
    pub alpha: DualVector,
    pub betas: Vec<DualVector>,
    pub q: PrivacyMapping,
    pub fusion: FusionWeights,
    pub trace: Vec<TraceRecord>,
    pub converged: bool,
}

impl Outcome {
    pub(crate) fn into_result(
        self,
        metric: &str,
        theta_star: f64,
        theta_stars: Vec<f64>,
        theta: f64,
        threshold_traces: Vec<Vec<f64>>,
    ) -> SolveResult {
        SolveResult {
            metric: metric.to_string(),
            alpha: self.alpha,
            betas: self.betas,
            q: self.q,
            fusion: self.fusion,
            theta_star: theta_star.is_finite().then_some(theta_star),
            theta_stars,
            theta: theta.is_finite().then_some(theta),
            trace: self.trace,
            threshold_traces,
            converged: self.converged,
        }
    }
}

struct Barrier<'a> {
    problems: &'a [DualProblem],
    theta: f64,
    mu: f64,
}

impl Barrier<'_> {
    fn active(&self) -> bool {
        self.theta.is_finite() && !self.problems.is_empty()
    }

    fn slacks(&self, betas: &[DualVector], q: &PrivacyMapping, ts: &TrainingSet, rcfg: &RiskConfig) -> Result<Vec<f64>> {
        if !self.active() {
            return Ok(vec![]);
        }
        self.problems
            .iter()
            .zip(betas)
            .map(|(p, b)| Ok(p.dual_value_count(rcfg.loss.as_ref(), ts, q, b)? - self.theta))
            .collect()
    }

    fn term(&self, slacks: &[f64]) -> f64 {
        if slacks.iter().any(|&s| !(s > 0.0)) {
            return f64::INFINITY;
        }
        -slacks.iter().map(|s| s.ln()).sum::<f64>() / self.mu
    }
}

fn min_of(v: &[f64]) -> Option<f64> {
    v.iter().cloned().reduce(f64::min)
}

/// Descends the barrier objective in block `t` over row-stochastic tables.
#[allow(clippy::too_many_arguments)]
fn descend_block(
    t: usize,
    public: &DualProblem,
    w: &FusionWeights,
    barrier: &Barrier<'_>,
    betas: &[DualVector],
    q: &PrivacyMapping,
    ts: &TrainingSet,
    rcfg: &RiskConfig,
    scfg: &SolverConfig,
) -> Result<PrivacyMapping> {
    let loss = rcfg.loss.as_ref();
    let (xc, zc) = (q.x_card(), q.z_card());
    let wt = Array1::from(w.weights[t].clone());
    let tab0 = q.table(t);
    let base: Vec<f64> = public
        .members
        .iter()
        .map(|&i| {
            let x = &ts.xs[i];
            w.score(x, q) - tab0.row(x[t]).dot(&wt)
        })
        .collect();
    let cols: Vec<usize> = public.members.iter().map(|&i| ts.xs[i][t]).collect();
    let reg_term = 0.5 * public.reg * w.norm_sq();
    // per constraint: fixed part of the dual, C^t, and 1/(2ρ)
    let mut parts = Vec::new();
    if barrier.active() {
        for (p, b) in barrier.problems.iter().zip(betas) {
            let sep = p.separable(loss, &b.values)?;
            let other: f64 = (0..q.sensors())
                .filter(|&u| u != t)
                .map(|u| block_quadratic(q.table(u), &p.aggregate(ts, u, &b.values)))
                .sum();
            let c = 0.5 / p.reg;
            parts.push((sep - c * other - barrier.theta, p.aggregate(ts, t, &b.values), c));
        }
    }
    let as_table = |v: &[f64]| Array2::from_shape_vec((xc, zc), v.to_vec()).expect("table shape");
    let margins = |tab: &Array2<f64>| -> Vec<f64> {
        let proj = tab.dot(&wt);
        base.iter().zip(&cols).map(|(b, &a)| b + proj[a]).collect()
    };
    let slacks = |tab: &Array2<f64>| -> Vec<f64> {
        parts
            .iter()
            .map(|(fixed, agg, c)| fixed - c * block_quadratic(tab, agg))
            .collect()
    };
    let value = |v: &[f64]| {
        let tab = as_table(v);
        let m = margins(&tab);
        let f: f64 = m
            .iter()
            .enumerate()
            .map(|(k, mk)| public.weights[k] * loss.eval(public.labels[k] * mk))
            .sum::<f64>()
            + reg_term;
        let b = barrier.term(&slacks(&tab));
        -(f + b)
    };
    let grad = |v: &[f64]| {
        let tab = as_table(v);
        let m = margins(&tab);
        let mut g = Array2::<f64>::zeros((xc, zc));
        for (k, mk) in m.iter().enumerate() {
            let y = public.labels[k];
            let d = public.weights[k] * y * loss.derivative(y * mk);
            for z in 0..zc {
                g[[cols[k], z]] -= d * wt[z];
            }
        }
        let sl = slacks(&tab);
        for ((_, agg, c), s) in parts.iter().zip(&sl) {
            if *s > 0.0 {
                g.scaled_add(-c / (barrier.mu * s), &block_quadratic_grad(&tab, agg));
            }
        }
        g.into_raw_vec_and_offset().0
    };
    let project = |v: &mut [f64]| {
        let mut tab = as_table(v);
        project_table(&mut tab, None);
        v.copy_from_slice(tab.as_slice().expect("standard layout"));
        true
    };
    let x0 = tab0.as_standard_layout().as_slice().expect("standard layout").to_vec();
    let g0 = grad(&x0);
    let gmax = g0.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    if gmax == 0.0 || !value(&x0).is_finite() {
        return Ok(q.clone());
    }
    let res = projected_ascent(x0, value, grad, project, 0.1 / gmax, &scfg.inner);
    let mut out = q.clone();
    out.set_table(t, as_table(&res.x));
    Ok(out)
}

fn check_entry(slacks: &[f64]) -> Result<()> {
    match min_of(slacks) {
        Some(s) if !(s > 0.0) => Err(Error::BarrierViolation { slack: s }),
        _ => Ok(()),
    }
}

/// One barrier step on `Q^t` for a binary `G`, holding `α` (through its fusion
/// rule), `β` and the other blocks fixed. Rows stay on the simplex.
#[allow(clippy::too_many_arguments)]
pub fn update_q_block_alg2(
    t: usize,
    alpha: &DualVector,
    beta: &DualVector,
    q: &PrivacyMapping,
    ts: &TrainingSet,
    theta: f64,
    rcfg: &RiskConfig,
    scfg: &SolverConfig,
) -> Result<PrivacyMapping> {
    require_count(rcfg)?;
    let public = DualProblem::public(ts, rcfg);
    let problems = [DualProblem::private_normalized(ts, rcfg)?];
    let barrier = Barrier {
        problems: &problems,
        theta,
        mu: scfg.mu,
    };
    let betas = std::slice::from_ref(beta);
    check_entry(&barrier.slacks(betas, q, ts, rcfg)?)?;
    let w = FusionWeights::from_dual(&public, alpha, ts, q);
    descend_block(t, &public, &w, &barrier, betas, q, ts, rcfg, scfg)
}

pub(crate) fn optimize(
    ts: &TrainingSet,
    problems: &[DualProblem],
    mut betas: Vec<DualVector>,
    mut q: PrivacyMapping,
    theta: f64,
    rcfg: &RiskConfig,
    scfg: &SolverConfig,
) -> Result<Outcome> {
    require_count(rcfg)?;
    if theta == f64::INFINITY || theta.is_nan() {
        return Err(Error::Config(format!("invalid privacy threshold {theta}")));
    }
    if betas.len() != problems.len() {
        return Err(Error::LengthMismatch {
            expected: problems.len(),
            got: betas.len(),
        });
    }
    let loss = rcfg.loss.as_ref();
    let kernel = rcfg.kernel.as_ref();
    let public = DualProblem::public(ts, rcfg);
    let barrier = Barrier {
        problems,
        theta,
        mu: scfg.mu,
    };
    let mut gram = GramCache::new(ts, &q, kernel);
    let slacks = barrier.slacks(&betas, &q, ts, rcfg)?;
    check_entry(&slacks)?;

    let mut alpha = maximize_dual(&public, gram.matrix(), loss, None, &scfg.inner)?;
    let mut w = FusionWeights::from_dual(&public, &alpha, ts, &q);
    let objective = |w: &FusionWeights, q: &PrivacyMapping, betas: &[DualVector]| -> Result<(f64, Vec<f64>)> {
        let s = barrier.slacks(betas, q, ts, rcfg)?;
        Ok((w.primal_value(&public, loss, ts, q) + barrier.term(&s), s))
    };
    let (mut value, s0) = objective(&w, &q, &betas)?;
    let mut trace = vec![TraceRecord {
        iteration: 0,
        objective: value,
        slack: min_of(&s0),
    }];
    let mut converged = false;
    for k in 1..=scfg.max_outer {
        let cand = maximize_dual(&public, gram.matrix(), loss, Some(&alpha), &scfg.inner)?;
        let wc = FusionWeights::from_dual(&public, &cand, ts, &q);
        if wc.primal_value(&public, loss, ts, &q) <= w.primal_value(&public, loss, ts, &q) {
            alpha = cand;
            w = wc;
        }
        if barrier.active() {
            for (p, b) in problems.iter().zip(betas.iter_mut()) {
                let nb = maximize_dual(p, gram.matrix(), loss, Some(b), &scfg.inner)?;
                if p.dual_value_count(loss, ts, &q, &nb)? >= p.dual_value_count(loss, ts, &q, b)? {
                    *b = nb;
                }
            }
        }
        for t in 0..q.sensors() {
            q = descend_block(t, &public, &w, &barrier, &betas, &q, ts, rcfg, scfg)?;
            gram.update_sensor(t, ts, &q, kernel);
        }
        let (next, s) = objective(&w, &q, &betas)?;
        trace.push(TraceRecord {
            iteration: k,
            objective: next,
            slack: min_of(&s),
        });
        let rel = relative_change(next, value);
        value = next;
        if rel <= scfg.stop_tol {
            converged = true;
            break;
        }
    }
    alpha = maximize_dual(&public, gram.matrix(), loss, Some(&alpha), &scfg.inner)?;
    let fusion = FusionWeights::from_dual(&public, &alpha, ts, &q);
    Ok(Outcome {
        alpha,
        betas,
        q,
        fusion,
        trace,
        converged,
    })
}

/// Unconstrained minimization of the public risk from `q0`.
pub fn optimize_ndd_from(ts: &TrainingSet, q0: PrivacyMapping, rcfg: &RiskConfig, scfg: &SolverConfig) -> Result<SolveResult> {
    scfg.validate()?;
    let out = optimize(ts, &[], vec![], q0, f64::NEG_INFINITY, rcfg, scfg)?;
    Ok(out.into_result("none", f64::NAN, vec![], f64::NEG_INFINITY, vec![]))
}
