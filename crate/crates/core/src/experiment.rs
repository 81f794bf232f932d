//! End-to-end runs: train on a dataset, certify the learned mapping against
//! ground truth or samples, and sweep a fixture parameter.

use serde::{Deserialize, Serialize};

use crate::data::{generate, Dataset, SyntheticKind, SyntheticSpec};
use crate::error::{Error, Result};
use crate::kernels::PrivacyMapping;
use crate::losses::MarginLoss;
use crate::oracle::{
    balanced_risk, bayes_error, budget_exact, budget_weak, compute_c, compute_c_prime, estimate_epsilon_hat,
    extended_float_opt, induced_joint, posterior_ratio_extremes, InducedJoint, JointModel,
    LabeledPmf, PrivacyCertificate,
};
use crate::risk::{PrivateAlphabet, RiskConfig, TrainingSet};
use crate::solver::{predict_h_batch, sample_messages, train, PredictMode, PrivacyMetric, SolveResult, SolverConfig};

/// Default `δ` grid of the weak certificates.
pub const DEFAULT_DELTAS: [f64; 3] = [0.01, 0.05, 0.1];

/// Privacy and utility of a learned mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyReport {
    pub metric: String,
    pub mary: bool,
    pub theta_stars: Vec<f64>,
    pub theta: Option<f64>,
    /// Bayes error of `H` from `Z` under the exact joint.
    pub bayes_error_h: Option<f64>,
    pub bayes_error_g: Option<f64>,
    /// Population error of the sampled-message fusion rule.
    pub rule_error_h: Option<f64>,
    /// `min_γ R(γ)`, or its minimum over the pairs `(0, g)`.
    pub min_risk_r: Option<f64>,
    /// `c`, or `c'` for m-ary `G`; absent without common support.
    pub c: Option<f64>,
    /// Budget implied by `min_risk_r` and `c`.
    pub certificate: Option<PrivacyCertificate>,
    /// [`CertifyReport::certificate`]'s `ε`, infinite without common support.
    #[serde(with = "extended_float_opt")]
    pub certified_epsilon: Option<f64>,
    /// Budgets implied by the constraint level `θ` over a `δ` grid.
    pub weak: Vec<PrivacyCertificate>,
    /// Smallest `ε` for which the exact joint is `ε`-private.
    #[serde(with = "extended_float_opt")]
    pub posterior_epsilon: Option<f64>,
    /// Plug-in estimate from sampled messages.
    #[serde(with = "extended_float_opt")]
    pub epsilon_hat: Option<f64>,
    /// Empirical error of the `H` decisions on the evaluation samples.
    pub test_error_h: Option<f64>,
    /// The exact joint was too large to enumerate.
    pub support_overflow: bool,
}

/// Certificate quantities of one induced `p(z, g)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacySummary {
    pub min_risk_r: f64,
    pub c: Option<f64>,
    pub certificate: Option<PrivacyCertificate>,
    pub certified_epsilon: f64,
    pub posterior_epsilon: f64,
}

/// `R`, `c` and the exact budget of `p(z, g)`. Without common support the
/// budget is infinite and `c` is absent.
pub fn summarize_privacy(pzg: &LabeledPmf, private: PrivateAlphabet) -> PrivacySummary {
    let conds = pzg.conditionals();
    let mary = matches!(private, PrivateAlphabet::Mary(_));
    let min_risk_r = conds[1..]
        .iter()
        .map(|cg| balanced_risk(&conds[0], cg))
        .fold(f64::INFINITY, f64::min);
    let c = if mary {
        compute_c_prime(&conds).ok()
    } else {
        compute_c(&conds[0], &conds[1]).ok()
    };
    let certificate = c.map(|c| budget_exact(min_risk_r, c, mary));
    PrivacySummary {
        min_risk_r,
        c,
        certified_epsilon: certificate.map_or(f64::INFINITY, |c| c.epsilon),
        certificate,
        posterior_epsilon: posterior_ratio_extremes(pzg),
    }
}

/// Error of `z ↦ sign(⟨w, Φ(z)⟩)` under the exact joint.
pub fn rule_error(result: &SolveResult, ij: &InducedJoint) -> f64 {
    let pzh = ij.public();
    (0..pzh.atoms())
        .map(|i| {
            let z = ij.message(i);
            let wrong = if result.fusion.message_score(&z) >= 0.0 { 0 } else { 1 };
            pzh.p[[i, wrong]]
        })
        .sum()
}

/// Options of [`certify`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CertifyOptions {
    pub deltas: Vec<f64>,
    pub mode: PredictMode,
    /// Seed of the messages drawn for `ε̂`.
    pub seed: u64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            deltas: DEFAULT_DELTAS.to_vec(),
            mode: PredictMode::Expected,
            seed: 0,
        }
    }
}

/// Oracle certification against `joint` when given and enumerable, plus
/// sample-based quantities from `samples`.
pub fn certify(
    result: &SolveResult,
    joint: Option<&JointModel>,
    samples: Option<&TrainingSet>,
    loss: &dyn MarginLoss,
    opts: &CertifyOptions,
) -> Result<CertifyReport> {
    let private = joint
        .map(|j| j.private)
        .or(samples.map(|s| s.private))
        .ok_or_else(|| Error::Config("certification needs a joint model or samples".into()))?;
    let mary = matches!(private, PrivateAlphabet::Mary(_));
    let mut report = CertifyReport {
        metric: result.metric.clone(),
        mary,
        theta_stars: result.theta_stars.clone(),
        theta: result.theta,
        bayes_error_h: None,
        bayes_error_g: None,
        rule_error_h: None,
        min_risk_r: None,
        c: None,
        certificate: None,
        certified_epsilon: None,
        weak: vec![],
        posterior_epsilon: None,
        epsilon_hat: None,
        test_error_h: None,
        support_overflow: false,
    };
    if let Some(jm) = joint {
        match induced_joint(&result.q, jm) {
            Ok(ij) => {
                let pzg = ij.private_joint();
                let s = summarize_privacy(&pzg, private);
                report.bayes_error_h = Some(bayes_error(&ij.public()));
                report.bayes_error_g = Some(bayes_error(&pzg));
                report.rule_error_h = Some(rule_error(result, &ij));
                report.min_risk_r = Some(s.min_risk_r);
                report.c = s.c;
                report.certificate = s.certificate;
                report.certified_epsilon = Some(s.certified_epsilon);
                report.posterior_epsilon = Some(s.posterior_epsilon);
                if let (Some(c), Some(theta), "normalized") = (s.c, result.theta, result.metric.as_str()) {
                    report.weak = opts.deltas.iter().map(|&d| budget_weak(theta, d, loss, c, mary)).collect();
                }
            }
            Err(Error::SupportTooLarge { .. }) => report.support_overflow = true,
            Err(e) => return Err(e),
        }
    }
    if let Some(ts) = samples {
        let zs = sample_messages(&result.q, &ts.xs, opts.seed);
        let pairs: Vec<(i32, Vec<usize>)> = ts.gs.iter().cloned().zip(zs).collect();
        report.epsilon_hat = Some(estimate_epsilon_hat(&pairs)?);
        let pred = predict_h_batch(result, &ts.xs, opts.mode);
        let wrong = pred.iter().zip(&ts.hs).filter(|(a, b)| a != b).count();
        report.test_error_h = Some(wrong as f64 / ts.len() as f64);
    }
    Ok(report)
}

/// Bayes errors of `H` and `G` from the raw observations.
pub fn raw_errors(jm: &JointModel) -> Result<(f64, f64)> {
    let ij = induced_joint(&PrivacyMapping::identity(jm.sensors, jm.x_card), jm)?;
    Ok((bayes_error(&ij.public()), bayes_error(&ij.private_joint())))
}

/// Parameter varied by a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "axis", content = "values")]
pub enum SweepAxis {
    Rho(Vec<f64>),
    P(Vec<f64>),
    M(Vec<usize>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Rho(_) => "rho",
            SweepAxis::P(_) => "p",
            SweepAxis::M(_) => "m",
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            SweepAxis::Rho(v) | SweepAxis::P(v) => v.clone(),
            SweepAxis::M(v) => v.iter().map(|&m| m as f64).collect(),
        }
    }
}

/// One sweep point; failed points keep their error message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub error_h: Option<f64>,
    pub error_g: Option<f64>,
    #[serde(with = "extended_float_opt")]
    pub epsilon: Option<f64>,
    pub theta_star: Option<f64>,
    pub error: Option<String>,
}

/// Generates the fixture, trains and certifies against its exact joint.
pub fn run_synthetic(
    spec: &SyntheticSpec,
    metric: &dyn PrivacyMetric,
    rcfg: &RiskConfig,
    scfg: &SolverConfig,
) -> Result<(Dataset, SolveResult, CertifyReport)> {
    let data = generate(spec)?;
    let result = train(&data.train, metric, rcfg, scfg)?;
    let opts = CertifyOptions {
        seed: scfg.seed,
        ..Default::default()
    };
    let report = certify(&result, Some(&data.joint), Some(&data.test), rcfg.loss.as_ref(), &opts)?;
    Ok((data, result, report))
}

/// Train-and-certify at one grid value of `axis`.
pub fn sweep_point(
    base: &SyntheticSpec,
    axis: &SweepAxis,
    value: f64,
    metric: &dyn PrivacyMetric,
    rcfg: &RiskConfig,
    scfg: &SolverConfig,
) -> SweepRow {
    let mut spec = base.clone();
    let mut sc = scfg.clone();
    match axis {
        SweepAxis::Rho(_) => spec.rho = value,
        SweepAxis::P(_) => sc.p_ratio = value,
        SweepAxis::M(_) => {
            spec.kind = SyntheticKind::MarySec4a3;
            spec.m = value as usize;
        }
    }
    match run_synthetic(&spec, metric, rcfg, &sc) {
        Ok((_, result, rep)) => SweepRow {
            value,
            error_h: rep.bayes_error_h,
            error_g: rep.bayes_error_g,
            epsilon: rep.certified_epsilon,
            theta_star: result.theta_star,
            error: None,
        },
        Err(e) => SweepRow {
            value,
            error_h: None,
            error_g: None,
            epsilon: None,
            theta_star: None,
            error: Some(e.to_string()),
        },
    }
}

/// One train-and-certify run per grid value, all from the same seeds.
pub fn sweep(
    base: &SyntheticSpec,
    axis: &SweepAxis,
    metric: &dyn PrivacyMetric,
    rcfg: &RiskConfig,
    scfg: &SolverConfig,
) -> Vec<SweepRow> {
    axis.values()
        .into_iter()
        .map(|v| sweep_point(base, axis, v, metric, rcfg, scfg))
        .collect()
}

/// Median of finite values.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().cloned().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    Some(if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) })
}
