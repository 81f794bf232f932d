//! Threshold search, barrier optimization of the privacy mapping, and prediction.

mod inner;
mod npo;
mod predict;
pub mod simplex;
mod threshold;

use std::fmt;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::PrivacyMapping;
use crate::losses::MarginLoss;
use crate::risk::{DualProblem, DualVector, FusionWeights, GramCache, PrivateAlphabet, RiskConfig, TrainingSet};

pub use inner::InnerConfig;
pub use npo::{optimize_ndd_from, update_q_block_alg2};
pub use predict::{predict_h, predict_h_batch, sample_messages, PredictMode};
pub use threshold::{find_theta_star_for, update_q_block_alg1, ThresholdResult};

/// Outer-loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Message alphabet size `|Z|`.
    pub z_card: usize,
    /// Minimum column mass of threshold-search mappings.
    pub delta1: f64,
    /// Half-width of the excluded band around `1/|Z|`.
    pub delta2: f64,
    /// Barrier weight `μ`.
    pub mu: f64,
    /// Threshold ratio `p` in `θ = p θ*`.
    pub p_ratio: f64,
    /// Relative-change stopping tolerance of the outer loops.
    pub stop_tol: f64,
    pub max_outer: usize,
    pub inner: InnerConfig,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            z_card: 2,
            delta1: 0.005,
            delta2: 0.005,
            mu: 100.0,
            p_ratio: 0.999,
            stop_tol: 1e-4,
            max_outer: 200,
            inner: InnerConfig::default(),
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.z_card < 2 {
            return bad("z_card must be at least 2");
        }
        if !(self.delta1 >= 0.0) || !(self.delta2 >= 0.0) {
            return bad("delta1 and delta2 must be nonnegative");
        }
        if self.delta2 >= 1.0 / self.z_card as f64 - self.delta2 {
            return bad("delta2 leaves no feasible band for this z_card");
        }
        if self.delta1 > self.z_card as f64 {
            return bad("delta1 exceeds the achievable column mass");
        }
        if !(self.mu > 0.0) {
            return bad("mu must be positive");
        }
        if !(self.p_ratio > 0.0 && self.p_ratio < 1.0) {
            return bad("p_ratio must lie in (0, 1)");
        }
        if !(self.stop_tol > 0.0) || self.max_outer == 0 {
            return bad("stop_tol must be positive and max_outer nonzero");
        }
        if self.inner.max_iters == 0 || !(self.inner.shrink > 0.0 && self.inner.shrink < 1.0) {
            return bad("invalid inner solver settings");
        }
        Ok(())
    }
}

/// One row of an outer-loop trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub objective: f64,
    /// Smallest `R̂*_g - θ` over the constraints, if any are active.
    pub slack: Option<f64>,
}

/// Output of a full training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub metric: String,
    pub alpha: DualVector,
    /// One dual vector per privacy constraint.
    pub betas: Vec<DualVector>,
    pub q: PrivacyMapping,
    /// Fusion rule `w_H` induced by `alpha` under `q`.
    pub fusion: FusionWeights,
    /// `min_g θ*_g`, when a threshold search was run.
    pub theta_star: Option<f64>,
    /// Threshold of each constraint found by the threshold search.
    pub theta_stars: Vec<f64>,
    /// Operating threshold; absent for unconstrained runs.
    pub theta: Option<f64>,
    /// Barrier-optimization trace (nonincreasing).
    pub trace: Vec<TraceRecord>,
    /// Threshold-search trace of each constraint (nondecreasing).
    pub threshold_traces: Vec<Vec<f64>>,
    pub converged: bool,
}

impl SolveResult {
    /// The first (for binary `G`, the only) private dual vector.
    pub fn beta(&self) -> &DualVector {
        &self.betas[0]
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.objective).collect()
    }
}

/// Dual box `[lo_k, hi_k]` of each member, kept off open boundaries.
pub(crate) fn dual_box(problem: &DualProblem, loss: &dyn MarginLoss, inner: &InnerConfig) -> Vec<(f64, f64)> {
    let dom = loss.dual_domain();
    let m = if loss.open_dual_boundary() { inner.boundary_margin } else { 0.0 };
    problem
        .weights
        .iter()
        .map(|&w| {
            let lo = if dom.lo.is_finite() { w * (dom.lo + m) } else { f64::NEG_INFINITY };
            let hi = if dom.hi.is_finite() { w * (dom.hi - m) } else { f64::INFINITY };
            (lo, hi)
        })
        .collect()
}

/// Maximizes the dual objective of `problem` over its box.
pub fn maximize_dual(
    problem: &DualProblem,
    gram: &Array2<f64>,
    loss: &dyn MarginLoss,
    warm: Option<&DualVector>,
    inner: &InnerConfig,
) -> Result<DualVector> {
    let bounds = dual_box(problem, loss, inner);
    let clamp = |v: &mut [f64]| {
        for (x, &(lo, hi)) in v.iter_mut().zip(&bounds) {
            *x = x.clamp(lo, hi);
        }
    };
    let mut x0 = match warm {
        Some(w) => {
            if w.len() != problem.len() {
                return Err(Error::LengthMismatch {
                    expected: problem.len(),
                    got: w.len(),
                });
            }
            w.values.clone()
        }
        None => problem.start(loss).values,
    };
    clamp(&mut x0);
    let role = problem.role;
    let wrap = |v: &[f64]| DualVector {
        values: v.to_vec(),
        role,
    };
    let value = |v: &[f64]| problem.dual_value(loss, gram, &wrap(v)).unwrap_or(f64::NEG_INFINITY);
    let grad = |v: &[f64]| {
        problem
            .dual_gradient(loss, gram, &wrap(v))
            .map(|g| g.to_vec())
            .unwrap_or_else(|_| vec![0.0; v.len()])
    };
    let g0 = grad(&x0);
    let gmax = g0.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    if gmax == 0.0 {
        return Ok(wrap(&x0));
    }
    let scale = problem.weights.iter().cloned().fold(0.0f64, f64::max);
    let out = inner::projected_ascent(
        x0,
        value,
        grad,
        |v| {
            clamp(v);
            true
        },
        scale / gmax,
        inner,
    );
    Ok(wrap(&out.x))
}

/// `argmax_β R̂*(β, Q)` for the class-normalized private risk.
pub fn maximize_beta(q: &PrivacyMapping, ts: &TrainingSet, rcfg: &RiskConfig, scfg: &SolverConfig) -> Result<DualVector> {
    let p = DualProblem::private_normalized(ts, rcfg)?;
    let gram = GramCache::new(ts, q, rcfg.kernel.as_ref());
    maximize_dual(&p, gram.matrix(), rcfg.loss.as_ref(), None, &scfg.inner)
}

/// `argmax_α F*(α, Q)` for the public risk.
pub fn maximize_alpha(q: &PrivacyMapping, ts: &TrainingSet, rcfg: &RiskConfig, scfg: &SolverConfig) -> Result<DualVector> {
    let p = DualProblem::public(ts, rcfg);
    let gram = GramCache::new(ts, q, rcfg.kernel.as_ref());
    maximize_dual(&p, gram.matrix(), rcfg.loss.as_ref(), None, &scfg.inner)
}

/// How the privacy of `G` is measured in the constraint.
pub trait PrivacyMetric: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// One dual problem per constraint.
    fn constraints(&self, ts: &TrainingSet, rcfg: &RiskConfig) -> Result<Vec<DualProblem>>;
}

/// Class-normalized risk; one constraint per pair `(0, g)` for m-ary `G`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NormalizedRisk;

impl PrivacyMetric for NormalizedRisk {
    fn name(&self) -> &'static str {
        "normalized"
    }

    fn constraints(&self, ts: &TrainingSet, rcfg: &RiskConfig) -> Result<Vec<DualProblem>> {
        ts.require_all_classes()?;
        match ts.private {
            PrivateAlphabet::Binary => Ok(vec![DualProblem::private_normalized(ts, rcfg)?]),
            PrivateAlphabet::Mary(m) => (1..m as i32).map(|g| DualProblem::private_pair(ts, g, rcfg)).collect(),
        }
    }
}

/// Unnormalized empirical risk with weights `1/n` and regularizer `λ`.
#[derive(Debug, Clone, Copy, Default)]
pub struct BayesErrorRisk;

impl PrivacyMetric for BayesErrorRisk {
    fn name(&self) -> &'static str {
        "bayes_error"
    }

    fn constraints(&self, ts: &TrainingSet, rcfg: &RiskConfig) -> Result<Vec<DualProblem>> {
        ts.require_all_classes()?;
        match ts.private {
            PrivateAlphabet::Binary => Ok(vec![DualProblem::private_unnormalized(ts, rcfg)?]),
            PrivateAlphabet::Mary(m) => (1..m as i32)
                .map(|g| DualProblem::private_pair_unnormalized(ts, g, rcfg))
                .collect(),
        }
    }
}

type MetricCtor = fn() -> Box<dyn PrivacyMetric>;

const METRICS: &[(&str, MetricCtor)] = &[
    ("normalized", || Box::new(NormalizedRisk)),
    ("bayes_error", || Box::new(BayesErrorRisk)),
];

pub fn metric_names() -> impl Iterator<Item = &'static str> {
    METRICS.iter().map(|(n, _)| *n)
}

pub fn metric_by_name(name: &str) -> Result<Box<dyn PrivacyMetric>> {
    METRICS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, ctor)| ctor())
        .ok_or_else(|| Error::UnknownMetric(name.to_string()))
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn require_count(rcfg: &RiskConfig) -> Result<()> {
    if rcfg.kernel.is_count() {
        Ok(())
    } else {
        Err(Error::UnsupportedKernel(rcfg.kernel.spec()))
    }
}

/// Threshold search for the class-normalized risk of a binary `G`.
pub fn find_theta_star(ts: &TrainingSet, rcfg: &RiskConfig, scfg: &SolverConfig) -> Result<ThresholdResult> {
    scfg.validate()?;
    let p = DualProblem::private_normalized(ts, rcfg)?;
    find_theta_star_for(&p, ts, rcfg, scfg, &mut seeded(scfg.seed, 0))
}

/// Barrier optimization for a binary `G` from a threshold-search warm start.
pub fn optimize_npo(
    ts: &TrainingSet,
    theta: f64,
    warm: (&DualVector, &PrivacyMapping),
    rcfg: &RiskConfig,
    scfg: &SolverConfig,
) -> Result<SolveResult> {
    scfg.validate()?;
    let p = DualProblem::private_normalized(ts, rcfg)?;
    let out = npo::optimize(ts, &[p], vec![warm.0.clone()], warm.1.clone(), theta, rcfg, scfg)?;
    Ok(out.into_result("normalized", f64::NAN, vec![], theta, vec![]))
}

/// Full pipeline: threshold search per constraint, `θ = p min_g θ*_g`, then
/// barrier optimization.
pub fn train(ts: &TrainingSet, metric: &dyn PrivacyMetric, rcfg: &RiskConfig, scfg: &SolverConfig) -> Result<SolveResult> {
    scfg.validate()?;
    require_count(rcfg)?;
    let problems = metric.constraints(ts, rcfg)?;
    let mut searches = Vec::with_capacity(problems.len());
    for (k, p) in problems.iter().enumerate() {
        searches.push(find_theta_star_for(p, ts, rcfg, scfg, &mut seeded(scfg.seed, k as u64))?);
    }
    let theta_stars: Vec<f64> = searches.iter().map(|s| s.theta_star).collect();
    let theta_star = theta_stars.iter().cloned().fold(f64::INFINITY, f64::min);
    let theta = scfg.p_ratio * theta_star;
    let (betas, q) = if searches.len() == 1 {
        let s = &searches[0];
        (vec![s.beta.clone()], s.q.clone())
    } else {
        threshold::joint_warm_start(&problems, &searches, theta, ts, rcfg, scfg)?
    };
    let out = npo::optimize(ts, &problems, betas, q, theta, rcfg, scfg)?;
    let traces = searches.into_iter().map(|s| s.trace).collect();
    Ok(out.into_result(metric.name(), theta_star, theta_stars, theta, traces))
}

/// [`train`] with the class-normalized metric; handles m-ary `G` through its
/// `m - 1` pairwise constraints.
pub fn optimize_npo_mary(ts: &TrainingSet, rcfg: &RiskConfig, scfg: &SolverConfig) -> Result<SolveResult> {
    train(ts, &NormalizedRisk, rcfg, scfg)
}

/// [`train`] with the unnormalized (Bayes-error) metric.
pub fn optimize_bayes_metric(ts: &TrainingSet, rcfg: &RiskConfig, scfg: &SolverConfig) -> Result<SolveResult> {
    train(ts, &BayesErrorRisk, rcfg, scfg)
}

/// Detection without privacy constraints, from a random mapping.
pub fn optimize_ndd(ts: &TrainingSet, rcfg: &RiskConfig, scfg: &SolverConfig) -> Result<SolveResult> {
    scfg.validate()?;
    let q0 = simplex::random_constrained_mapping(
        ts.sensors(),
        ts.x_card,
        scfg.z_card,
        scfg.delta1,
        scfg.delta2,
        &mut seeded(scfg.seed, 0),
    )?;
    optimize_ndd_from(ts, q0, rcfg, scfg)
}
