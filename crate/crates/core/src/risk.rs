//! Regularized empirical risks, their conjugate duals, and analytic gradients.
//!
//! Every risk handled here has the shape
//!
//! ```text
//! min_w  Σ_k ω_k φ(y_k ⟨w, Φ_Q(x_k)⟩) + (ρ/2) ‖w‖²
//!   =  max_β  -Σ_k ω_k φ*(-β_k/ω_k) - (1/2ρ) Σ_{k,l} β_k β_l y_k y_l κ_Q(x_k, x_l)
//! ```
//!
//! over some subset of the training samples, and is described by a
//! [`DualProblem`]. The public risk uses `ω_k = 1/n` and `ρ = λ`; the
//! class-normalized private risk uses `ω_k = 1/(2|S_{g_k}|)` and `ρ = λ_n`.
//! The primal optimum is `w = (1/ρ) Σ_k β_k y_k Φ_Q(x_k)`.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{gram_q, kernel_from_spec, MessageKernel, PrivacyMapping};
use crate::losses::{loss_by_name, MarginLoss};

/// Alphabet of the private hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrivateAlphabet {
    /// Labels in `{-1, +1}`.
    Binary,
    /// Labels in `{0, …, m-1}`.
    Mary(usize),
}

impl PrivateAlphabet {
    pub fn labels(&self) -> Vec<i32> {
        match *self {
            PrivateAlphabet::Binary => vec![-1, 1],
            PrivateAlphabet::Mary(m) => (0..m as i32).collect(),
        }
    }

    pub fn size(&self) -> usize {
        match *self {
            PrivateAlphabet::Binary => 2,
            PrivateAlphabet::Mary(m) => m,
        }
    }

    /// Position of a label in [`labels`](Self::labels).
    pub fn index_of(&self, g: i32) -> Option<usize> {
        match *self {
            PrivateAlphabet::Binary => match g {
                -1 => Some(0),
                1 => Some(1),
                _ => None,
            },
            PrivateAlphabet::Mary(m) => (g >= 0 && (g as usize) < m).then_some(g as usize),
        }
    }
}

/// Labeled samples `(x_i, h_i, g_i)`. Observations are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub xs: Vec<Vec<usize>>,
    pub hs: Vec<i8>,
    pub gs: Vec<i32>,
    pub private: PrivateAlphabet,
    pub x_card: usize,
}

impl TrainingSet {
    pub fn new(
        xs: Vec<Vec<usize>>,
        hs: Vec<i8>,
        gs: Vec<i32>,
        private: PrivateAlphabet,
        x_card: usize,
    ) -> Result<Self> {
        let n = xs.len();
        if n == 0 {
            return Err(Error::InvalidTrainingSet("no samples".into()));
        }
        if hs.len() != n || gs.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: if hs.len() != n { hs.len() } else { gs.len() },
            });
        }
        let s = xs[0].len();
        if s == 0 || xs.iter().any(|x| x.len() != s) {
            return Err(Error::InvalidTrainingSet(
                "observations must share a nonzero sensor count".into(),
            ));
        }
        if xs.iter().flatten().any(|&v| v >= x_card) {
            return Err(Error::InvalidTrainingSet(format!(
                "observation outside alphabet of size {x_card}"
            )));
        }
        if hs.iter().any(|&h| h != 1 && h != -1) {
            return Err(Error::InvalidTrainingSet("public labels must be ±1".into()));
        }
        if let Some(&g) = gs.iter().find(|&&g| private.index_of(g).is_none()) {
            return Err(Error::InvalidTrainingSet(format!(
                "private label {g} outside its alphabet"
            )));
        }
        Ok(TrainingSet {
            xs,
            hs,
            gs,
            private,
            x_card,
        })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn sensors(&self) -> usize {
        self.xs[0].len()
    }

    /// `S_{g,n}`.
    pub fn class_indices(&self, g: i32) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.gs[i] == g).collect()
    }

    /// Errors unless every private class of the alphabet occurs.
    pub fn require_all_classes(&self) -> Result<()> {
        for g in self.private.labels() {
            if !self.gs.contains(&g) {
                return Err(Error::InvalidTrainingSet(format!(
                    "private class {g} has no training samples"
                )));
            }
        }
        Ok(())
    }
}

/// Which dual variable a vector holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualRole {
    AlphaForH,
    BetaForG,
}

/// Dual coefficients, one per member of the owning [`DualProblem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualVector {
    pub values: Vec<f64>,
    pub role: DualRole,
}

impl DualVector {
    pub fn zeros(len: usize, role: DualRole) -> Self {
        DualVector {
            values: vec![0.0; len],
            role,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Loss, kernel and regularization weights.
#[derive(Clone)]
pub struct RiskConfig {
    /// Regularizer of the public risk.
    pub lambda: f64,
    /// Regularizer of the private risk.
    pub lambda_n: f64,
    pub loss: Arc<dyn MarginLoss>,
    pub kernel: Arc<dyn MessageKernel>,
}

impl fmt::Debug for RiskConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RiskConfig")
            .field("lambda", &self.lambda)
            .field("lambda_n", &self.lambda_n)
            .field("loss", &self.loss.name())
            .field("kernel", &self.kernel.spec())
            .finish()
    }
}

impl RiskConfig {
    pub fn new(lambda: f64, lambda_n: f64, loss: &str, kernel: &str) -> Result<Self> {
        if !(lambda > 0.0) || !(lambda_n > 0.0) {
            return Err(Error::Config(
                "regularization weights must be positive".into(),
            ));
        }
        Ok(RiskConfig {
            lambda,
            lambda_n,
            loss: loss_by_name(loss)?,
            kernel: kernel_from_spec(kernel)?,
        })
    }

    /// `λ = 1/n`, `λ_n = n^{-1/2}`, logistic loss, count kernel.
    pub fn defaults_for(n: usize) -> Self {
        let n = n.max(1) as f64;
        RiskConfig::new(1.0 / n, 1.0 / n.sqrt(), "logistic", "count").unwrap()
    }
}

/// Gram matrix `[κ_Q(x_i, x_j)]` over the whole training set.
///
/// For the count kernel the matrix is a sum of per-sensor blocks, so changing
/// one `Q^t` only rebuilds that block.
#[derive(Debug, Clone)]
pub struct GramCache {
    total: Array2<f64>,
    per_sensor: Option<Vec<Array2<f64>>>,
}

impl GramCache {
    pub fn new(ts: &TrainingSet, q: &PrivacyMapping, kernel: &dyn MessageKernel) -> Self {
        if kernel.is_count() {
            let blocks: Vec<Array2<f64>> =
                (0..q.sensors()).map(|t| count_block(ts, q, t)).collect();
            let mut total = Array2::zeros((ts.len(), ts.len()));
            for b in &blocks {
                total += b;
            }
            GramCache {
                total,
                per_sensor: Some(blocks),
            }
        } else {
            GramCache {
                total: gram_q(&ts.xs, q, kernel),
                per_sensor: None,
            }
        }
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.total
    }

    /// Refreshes after `Q^t` changed.
    pub fn update_sensor(
        &mut self,
        t: usize,
        ts: &TrainingSet,
        q: &PrivacyMapping,
        kernel: &dyn MessageKernel,
    ) {
        match &mut self.per_sensor {
            Some(blocks) => {
                let fresh = count_block(ts, q, t);
                self.total -= &blocks[t];
                self.total += &fresh;
                blocks[t] = fresh;
            }
            None => self.total = gram_q(&ts.xs, q, kernel),
        }
    }
}

fn count_block(ts: &TrainingSet, q: &PrivacyMapping, t: usize) -> Array2<f64> {
    // Gram of the per-sensor feature Q^t(·|x^t) over the |X| observation values,
    // then gathered to samples.
    let tab = q.table(t);
    let by_value = tab.dot(&tab.t());
    let n = ts.len();
    Array2::from_shape_fn((n, n), |(i, j)| by_value[[ts.xs[i][t], ts.xs[j][t]]])
}

/// One weighted regularized risk over a subset of the training samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualProblem {
    pub role: DualRole,
    /// Training-set indices of the participating samples.
    pub members: Vec<usize>,
    /// `±1` label of each member.
    pub labels: Vec<f64>,
    /// Loss weight `ω_k` of each member.
    pub weights: Vec<f64>,
    /// Regularization weight `ρ`.
    pub reg: f64,
}

impl DualProblem {
    /// `F`: public labels, weights `1/n`, regularizer `λ`.
    pub fn public(ts: &TrainingSet, cfg: &RiskConfig) -> Self {
        let n = ts.len();
        DualProblem {
            role: DualRole::AlphaForH,
            members: (0..n).collect(),
            labels: ts.hs.iter().map(|&h| h as f64).collect(),
            weights: vec![1.0 / n as f64; n],
            reg: cfg.lambda,
        }
    }

    /// Class-normalized private risk for a binary `G`.
    pub fn private_normalized(ts: &TrainingSet, cfg: &RiskConfig) -> Result<Self> {
        if ts.private != PrivateAlphabet::Binary {
            return Err(Error::InvalidTrainingSet(
                "binary private risk requested on an m-ary alphabet".into(),
            ));
        }
        Self::class_balanced(ts, (0..ts.len()).collect(), |g| g as f64, cfg.lambda_n)
    }

    /// Class-normalized risk of telling `G = 0` (label -1) from `G = g` (label +1).
    pub fn private_pair(ts: &TrainingSet, g: i32, cfg: &RiskConfig) -> Result<Self> {
        let members: Vec<usize> = (0..ts.len())
            .filter(|&i| ts.gs[i] == 0 || ts.gs[i] == g)
            .collect();
        Self::class_balanced(
            ts,
            members,
            |gi| if gi == 0 { -1.0 } else { 1.0 },
            cfg.lambda_n,
        )
    }

    /// Unnormalized private risk: weights `1/n` and regularizer `λ`.
    pub fn private_unnormalized(ts: &TrainingSet, cfg: &RiskConfig) -> Result<Self> {
        if ts.private != PrivateAlphabet::Binary {
            return Err(Error::InvalidTrainingSet(
                "binary private risk requested on an m-ary alphabet".into(),
            ));
        }
        ts.require_all_classes()?;
        let n = ts.len();
        Ok(DualProblem {
            role: DualRole::BetaForG,
            members: (0..n).collect(),
            labels: ts.gs.iter().map(|&g| g as f64).collect(),
            weights: vec![1.0 / n as f64; n],
            reg: cfg.lambda,
        })
    }

    /// Unnormalized risk of the pair `(0, g)` of an m-ary alphabet.
    pub fn private_pair_unnormalized(ts: &TrainingSet, g: i32, cfg: &RiskConfig) -> Result<Self> {
        let members: Vec<usize> = (0..ts.len())
            .filter(|&i| ts.gs[i] == 0 || ts.gs[i] == g)
            .collect();
        let labels: Vec<f64> = members
            .iter()
            .map(|&i| if ts.gs[i] == 0 { -1.0 } else { 1.0 })
            .collect();
        if !labels.contains(&-1.0) || !labels.contains(&1.0) {
            return Err(Error::InvalidTrainingSet(format!(
                "pair (0, {g}) lacks one of its classes"
            )));
        }
        let m = members.len();
        Ok(DualProblem {
            role: DualRole::BetaForG,
            members,
            labels,
            weights: vec![1.0 / m as f64; m],
            reg: cfg.lambda,
        })
    }

    fn class_balanced(
        ts: &TrainingSet,
        members: Vec<usize>,
        label_of: impl Fn(i32) -> f64,
        reg: f64,
    ) -> Result<Self> {
        let labels: Vec<f64> = members.iter().map(|&i| label_of(ts.gs[i])).collect();
        let pos = labels.iter().filter(|&&y| y > 0.0).count();
        let neg = labels.len() - pos;
        if pos == 0 || neg == 0 {
            return Err(Error::InvalidTrainingSet(
                "every private class needs at least one sample".into(),
            ));
        }
        let weights = labels
            .iter()
            .map(|&y| 1.0 / (2.0 * if y > 0.0 { pos } else { neg } as f64))
            .collect();
        Ok(DualProblem {
            role: DualRole::BetaForG,
            members,
            labels,
            weights,
            reg,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Box `[ω_k lo, ω_k hi]` of member `k`, where `[lo, hi]` is the dual domain.
    pub fn bounds(&self, k: usize, loss: &dyn MarginLoss) -> (f64, f64) {
        let dom = loss.dual_domain();
        let w = self.weights[k];
        (w * dom.lo, w * dom.hi)
    }

    /// A mid-box starting point.
    pub fn start(&self, loss: &dyn MarginLoss) -> DualVector {
        let x = loss.dual_start();
        DualVector {
            values: self.weights.iter().map(|w| w * x).collect(),
            role: self.role,
        }
    }

    fn check_len(&self, v: &DualVector) -> Result<()> {
        if v.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// `y ∘ v` scattered onto the whole training set.
    pub fn signed_coefficients(&self, v: &[f64], n: usize) -> Array1<f64> {
        let mut c = Array1::zeros(n);
        for (k, &i) in self.members.iter().enumerate() {
            c[i] = self.labels[k] * v[k];
        }
        c
    }

    /// `Σ_{k,l} v_k v_l y_k y_l K_{kl}`.
    pub fn quadratic(&self, gram: &Array2<f64>, v: &[f64]) -> f64 {
        let c = self.signed_coefficients(v, gram.nrows());
        c.dot(&gram.dot(&c))
    }

    /// `-Σ_k ω_k φ*(-v_k/ω_k)`.
    pub fn separable(&self, loss: &dyn MarginLoss, v: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for (k, &vk) in v.iter().enumerate() {
            let w = self.weights[k];
            acc -= w * loss.dual(vk / w)?;
        }
        Ok(acc)
    }

    /// Dual objective.
    pub fn dual_value(&self, loss: &dyn MarginLoss, gram: &Array2<f64>, v: &DualVector) -> Result<f64> {
        self.check_len(v)?;
        let sep = self.separable(loss, &v.values)?;
        Ok(sep - self.quadratic(gram, &v.values) / (2.0 * self.reg))
    }

    /// Gradient of the dual objective in `v`.
    pub fn dual_gradient(
        &self,
        loss: &dyn MarginLoss,
        gram: &Array2<f64>,
        v: &DualVector,
    ) -> Result<Array1<f64>> {
        self.check_len(v)?;
        let c = self.signed_coefficients(&v.values, gram.nrows());
        let kc = gram.dot(&c);
        let mut g = Array1::zeros(self.len());
        for k in 0..self.len() {
            let w = self.weights[k];
            let x = v.values[k] / w;
            loss.dual(x)?;
            let slope = loss.dual_slope(x);
            if !slope.is_finite() {
                let dom = loss.dual_domain();
                return Err(Error::Domain {
                    loss: loss.name(),
                    value: x,
                    lo: dom.lo,
                    hi: dom.hi,
                });
            }
            g[k] = -slope - self.labels[k] * kc[self.members[k]] / self.reg;
        }
        Ok(g)
    }

    /// Primal objective at `w = Σ_k c_k y_k Φ_Q(x_k)`.
    pub fn primal_value(&self, loss: &dyn MarginLoss, gram: &Array2<f64>, coeffs: &[f64]) -> f64 {
        let c = self.signed_coefficients(coeffs, gram.nrows());
        let scores = gram.dot(&c);
        let risk: f64 = self
            .members
            .iter()
            .enumerate()
            .map(|(k, &i)| self.weights[k] * loss.eval(self.labels[k] * scores[i]))
            .sum();
        risk + 0.5 * self.reg * c.dot(&scores)
    }

    /// Primal coefficients of the optimum paired with dual point `v`.
    pub fn primal_coefficients(&self, v: &DualVector) -> Vec<f64> {
        v.values.iter().map(|b| b / self.reg).collect()
    }

    /// `C^t_a = Σ_{k: x_k^t = a} y_k v_k`.
    pub fn aggregate(&self, ts: &TrainingSet, t: usize, v: &[f64]) -> Array1<f64> {
        let mut c = Array1::zeros(ts.x_card);
        for (k, &i) in self.members.iter().enumerate() {
            c[ts.xs[i][t]] += self.labels[k] * v[k];
        }
        c
    }

    /// Dual objective for the count kernel, evaluated as
    /// `sep - (1/2ρ) Σ_t ‖Q^tᵀ C^t‖²` without forming a Gram matrix.
    pub fn dual_value_count(
        &self,
        loss: &dyn MarginLoss,
        ts: &TrainingSet,
        q: &PrivacyMapping,
        v: &DualVector,
    ) -> Result<f64> {
        self.check_len(v)?;
        let sep = self.separable(loss, &v.values)?;
        let quad: f64 = (0..q.sensors())
            .map(|t| block_quadratic(q.table(t), &self.aggregate(ts, t, &v.values)))
            .sum();
        Ok(sep - quad / (2.0 * self.reg))
    }
}

/// `Σ_z (Σ_a C_a Q(z|a))²`.
pub fn block_quadratic(table: &Array2<f64>, agg: &Array1<f64>) -> f64 {
    let v = table.t().dot(agg);
    v.dot(&v)
}

/// Gradient of [`block_quadratic`] in the table: `2 C_a v_z`.
pub fn block_quadratic_grad(table: &Array2<f64>, agg: &Array1<f64>) -> Array2<f64> {
    let v = table.t().dot(agg);
    let mut g = Array2::zeros(table.dim());
    for a in 0..table.nrows() {
        for z in 0..table.ncols() {
            g[[a, z]] = 2.0 * agg[a] * v[z];
        }
    }
    g
}

/// A fusion rule `w` held as an element of the count-kernel feature space:
/// `⟨w, Φ(z)⟩ = Σ_t weights[t, z^t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    /// `weights[t][z]`
    pub weights: Vec<Vec<f64>>,
}

impl FusionWeights {
    /// `w = (1/ρ) Σ_k v_k y_k Φ_Q(x_k)`.
    pub fn from_dual(problem: &DualProblem, v: &DualVector, ts: &TrainingSet, q: &PrivacyMapping) -> Self {
        let weights = (0..q.sensors())
            .map(|t| {
                let agg = problem.aggregate(ts, t, &v.values);
                (q.table(t).t().dot(&agg) / problem.reg).to_vec()
            })
            .collect();
        FusionWeights { weights }
    }

    /// `⟨w, Φ_Q(x)⟩`.
    pub fn score(&self, x: &[usize], q: &PrivacyMapping) -> f64 {
        x.iter()
            .enumerate()
            .map(|(t, &xt)| {
                q.row(t, xt)
                    .iter()
                    .zip(&self.weights[t])
                    .map(|(p, w)| p * w)
                    .sum::<f64>()
            })
            .sum()
    }

    /// `⟨w, Φ(z)⟩`.
    pub fn message_score(&self, z: &[usize]) -> f64 {
        z.iter().enumerate().map(|(t, &zt)| self.weights[t][zt]).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.weights.iter().flatten().map(|w| w * w).sum()
    }

    /// Primal objective of `problem` at this fixed `w`.
    pub fn primal_value(
        &self,
        problem: &DualProblem,
        loss: &dyn MarginLoss,
        ts: &TrainingSet,
        q: &PrivacyMapping,
    ) -> f64 {
        let risk: f64 = problem
            .members
            .iter()
            .enumerate()
            .map(|(k, &i)| problem.weights[k] * loss.eval(problem.labels[k] * self.score(&ts.xs[i], q)))
            .sum();
        risk + 0.5 * problem.reg * self.norm_sq()
    }

    /// Gradient of [`primal_value`](Self::primal_value) in `Q^t` at fixed `w`.
    pub fn primal_grad_sensor(
        &self,
        t: usize,
        problem: &DualProblem,
        loss: &dyn MarginLoss,
        ts: &TrainingSet,
        q: &PrivacyMapping,
    ) -> Array2<f64> {
        let mut g = Array2::zeros((q.x_card(), q.z_card()));
        for (k, &i) in problem.members.iter().enumerate() {
            let y = problem.labels[k];
            let d = problem.weights[k] * y * loss.derivative(y * self.score(&ts.xs[i], q));
            let a = ts.xs[i][t];
            for (z, w) in self.weights[t].iter().enumerate() {
                g[[a, z]] += d * w;
            }
        }
        g
    }
}

fn dual_for(
    vec: &DualVector,
    ts: &TrainingSet,
    cfg: &RiskConfig,
) -> Result<DualProblem> {
    match vec.role {
        DualRole::AlphaForH => Ok(DualProblem::public(ts, cfg)),
        DualRole::BetaForG => DualProblem::private_normalized(ts, cfg),
    }
}

fn role_check(vec: &DualVector, want: DualRole) -> Result<()> {
    if vec.role != want {
        return Err(Error::Config(format!(
            "expected a {want:?} dual vector, got {:?}",
            vec.role
        )));
    }
    Ok(())
}

/// Dual of the class-normalized private risk at `(β, Q)`.
pub fn dual_risk_g(beta: &DualVector, q: &PrivacyMapping, ts: &TrainingSet, cfg: &RiskConfig) -> Result<f64> {
    role_check(beta, DualRole::BetaForG)?;
    let p = DualProblem::private_normalized(ts, cfg)?;
    let gram = gram_q(&ts.xs, q, cfg.kernel.as_ref());
    p.dual_value(cfg.loss.as_ref(), &gram, beta)
}

/// Dual of the public risk at `(α, Q)`.
pub fn dual_risk_h(alpha: &DualVector, q: &PrivacyMapping, ts: &TrainingSet, cfg: &RiskConfig) -> Result<f64> {
    role_check(alpha, DualRole::AlphaForH)?;
    let p = DualProblem::public(ts, cfg);
    let gram = gram_q(&ts.xs, q, cfg.kernel.as_ref());
    p.dual_value(cfg.loss.as_ref(), &gram, alpha)
}

/// Public risk `F` at `w = Σ_j c_j h_j Φ_Q(x_j)`.
pub fn primal_risk_h(w_coeffs: &[f64], q: &PrivacyMapping, ts: &TrainingSet, cfg: &RiskConfig) -> f64 {
    let p = DualProblem::public(ts, cfg);
    let gram = gram_q(&ts.xs, q, cfg.kernel.as_ref());
    p.primal_value(cfg.loss.as_ref(), &gram, w_coeffs)
}

/// Class-normalized private risk at `w = Σ_j c_j g_j Φ_Q(x_j)`.
pub fn primal_risk_g(w_coeffs: &[f64], q: &PrivacyMapping, ts: &TrainingSet, cfg: &RiskConfig) -> Result<f64> {
    let p = DualProblem::private_normalized(ts, cfg)?;
    let gram = gram_q(&ts.xs, q, cfg.kernel.as_ref());
    Ok(p.primal_value(cfg.loss.as_ref(), &gram, w_coeffs))
}

/// Gradient of [`dual_risk_h`] or [`dual_risk_g`], chosen by the vector's role.
pub fn grad_dual(vec: &DualVector, q: &PrivacyMapping, ts: &TrainingSet, cfg: &RiskConfig) -> Result<Array1<f64>> {
    let p = dual_for(vec, ts, cfg)?;
    let gram = gram_q(&ts.xs, q, cfg.kernel.as_ref());
    p.dual_gradient(cfg.loss.as_ref(), &gram, vec)
}

/// What a per-sensor mapping gradient differentiates.
#[derive(Debug, Clone)]
pub enum SensorObjective<'a> {
    /// The private dual `R̂*(β, Q)`.
    PrivateDual { beta: &'a DualVector },
    /// The barrier objective `F(w, Q) - (1/μ) log(R̂*(β, Q) - θ)` with the
    /// fusion rule `w` fixed at the one induced by `α` under the current `Q`.
    Barrier {
        alpha: &'a DualVector,
        beta: &'a DualVector,
        theta: f64,
        mu: f64,
    },
}

/// Gradient of the chosen objective with respect to the entries of `Q^t`.
pub fn grad_q_sensor(
    t: usize,
    objective: &SensorObjective<'_>,
    q: &PrivacyMapping,
    ts: &TrainingSet,
    cfg: &RiskConfig,
) -> Result<Array2<f64>> {
    if !cfg.kernel.is_count() {
        return Err(Error::UnsupportedKernel(cfg.kernel.spec()));
    }
    let private = DualProblem::private_normalized(ts, cfg)?;
    match objective {
        SensorObjective::PrivateDual { beta } => {
            role_check(beta, DualRole::BetaForG)?;
            private.check_len(beta)?;
            Ok(private_dual_grad_sensor(&private, beta, t, ts, q))
        }
        SensorObjective::Barrier {
            alpha,
            beta,
            theta,
            mu,
        } => {
            role_check(alpha, DualRole::AlphaForH)?;
            role_check(beta, DualRole::BetaForG)?;
            let public = DualProblem::public(ts, cfg);
            let w = FusionWeights::from_dual(&public, alpha, ts, q);
            let slack = private.dual_value_count(cfg.loss.as_ref(), ts, q, beta)? - theta;
            if !(slack > 0.0) {
                return Err(Error::BarrierViolation { slack });
            }
            let mut g = w.primal_grad_sensor(t, &public, cfg.loss.as_ref(), ts, q);
            let dr = private_dual_grad_sensor(&private, beta, t, ts, q);
            g.scaled_add(-1.0 / (mu * slack), &dr);
            Ok(g)
        }
    }
}

/// `∂R̂*/∂Q^t = -(1/ρ) C_a v_z` for the count kernel.
pub(crate) fn private_dual_grad_sensor(
    problem: &DualProblem,
    v: &DualVector,
    t: usize,
    ts: &TrainingSet,
    q: &PrivacyMapping,
) -> Array2<f64> {
    let agg = problem.aggregate(ts, t, &v.values);
    block_quadratic_grad(q.table(t), &agg) * (-0.5 / problem.reg)
}

/// Barrier objective with a fixed fusion rule, as differentiated by
/// [`SensorObjective::Barrier`]. Returns `+∞` outside the barrier domain.
pub fn barrier_objective(
    w: &FusionWeights,
    beta: &DualVector,
    theta: f64,
    mu: f64,
    q: &PrivacyMapping,
    ts: &TrainingSet,
    cfg: &RiskConfig,
) -> Result<f64> {
    let public = DualProblem::public(ts, cfg);
    let private = DualProblem::private_normalized(ts, cfg)?;
    let f = w.primal_value(&public, cfg.loss.as_ref(), ts, q);
    let slack = private.dual_value_count(cfg.loss.as_ref(), ts, q, beta)? - theta;
    Ok(if slack > 0.0 {
        f - slack.ln() / mu
    } else {
        f64::INFINITY
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_set(rng: &mut ChaCha8Rng, n: usize, s: usize, x_card: usize) -> TrainingSet {
        loop {
            let xs = (0..n)
                .map(|_| (0..s).map(|_| rng.random_range(0..x_card)).collect())
                .collect();
            let hs = (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
            let gs = (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
            let ts = TrainingSet::new(xs, hs, gs, PrivateAlphabet::Binary, x_card).unwrap();
            if ts.require_all_classes().is_ok() && ts.hs.contains(&1) && ts.hs.contains(&-1) {
                return ts;
            }
        }
    }

    #[test]
    fn zero_duals_are_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ts = small_set(&mut rng, 6, 2, 3);
        let q = PrivacyMapping::random(2, 3, 2, &mut rng);
        for loss in ["logistic", "hinge", "exponential"] {
            let cfg = RiskConfig::new(0.5, 0.5, loss, "count").unwrap();
            let beta = DualVector::zeros(6, DualRole::BetaForG);
            assert_eq!(dual_risk_g(&beta, &q, &ts, &cfg).unwrap(), 0.0);
            let alpha = DualVector::zeros(6, DualRole::AlphaForH);
            assert_eq!(dual_risk_h(&alpha, &q, &ts, &cfg).unwrap(), 0.0);
        }
    }

    #[test]
    fn two_sample_private_dual_by_hand() {
        // one sample per class, s = 1, |Z| = 2
        let ts = TrainingSet::new(vec![vec![0], vec![1]], vec![1, -1], vec![-1, 1], PrivateAlphabet::Binary, 2)
            .unwrap();
        let q = PrivacyMapping::new(vec![ndarray::array![[0.7, 0.3], [0.2, 0.8]]]).unwrap();
        let cfg = RiskConfig::new(0.3, 0.4, "logistic", "count").unwrap();
        let beta = DualVector {
            values: vec![0.1, 0.35],
            role: DualRole::BetaForG,
        };
        // |S_g| = 1 for both classes; κ_Q by hand
        let k00 = 0.7 * 0.7 + 0.3 * 0.3;
        let k11 = 0.2 * 0.2 + 0.8 * 0.8;
        let k01 = 0.7 * 0.2 + 0.3 * 0.8;
        let ent = |x: f64| x * x.ln() + (1.0 - x) * (1.0 - x).ln();
        let sep = -ent(2.0 * 0.1) / 2.0 - ent(2.0 * 0.35) / 2.0;
        let (b0, b1) = (0.1 * -1.0, 0.35 * 1.0);
        let quad = b0 * b0 * k00 + b1 * b1 * k11 + 2.0 * b0 * b1 * k01;
        let expected = sep - quad / (2.0 * 0.4);
        assert_abs_diff_eq!(dual_risk_g(&beta, &q, &ts, &cfg).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn single_sample_public_dual_by_hand() {
        let ts = TrainingSet::new(vec![vec![0, 1, 2, 3]], vec![1], vec![1], PrivateAlphabet::Binary, 4).unwrap();
        let q = PrivacyMapping::uniform(4, 4, 2);
        let cfg = RiskConfig::new(0.25, 1.0, "logistic", "count").unwrap();
        let a = 0.4;
        let alpha = DualVector {
            values: vec![a],
            role: DualRole::AlphaForH,
        };
        let expected = -(a * a.ln() + (1.0 - a) * (1.0 - a).ln()) - a * a * 2.0 / (2.0 * 0.25);
        assert_abs_diff_eq!(dual_risk_h(&alpha, &q, &ts, &cfg).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn identity_gram_fixture() {
        // with an identity Gram the dual separates per coordinate
        let p = DualProblem {
            role: DualRole::AlphaForH,
            members: vec![0, 1],
            labels: vec![1.0, -1.0],
            weights: vec![0.5, 0.5],
            reg: 2.0,
        };
        let gram = Array2::eye(2);
        let v = DualVector {
            values: vec![0.2, 0.3],
            role: DualRole::AlphaForH,
        };
        let got = p.dual_value(&crate::losses::Logistic, &gram, &v).unwrap();
        let ent = |x: f64| x * x.ln() + (1.0 - x) * (1.0 - x).ln();
        let expected = -0.5 * ent(0.4) - 0.5 * ent(0.6) - (0.04 + 0.09) / 4.0;
        assert_abs_diff_eq!(got, expected, epsilon = 1e-14);
    }

    #[test]
    fn primal_at_zero_is_phi_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ts = small_set(&mut rng, 5, 2, 3);
        let q = PrivacyMapping::random(2, 3, 2, &mut rng);
        for loss in ["logistic", "hinge", "quadratic", "exponential"] {
            let cfg = RiskConfig::new(0.5, 0.5, loss, "count").unwrap();
            let phi0 = cfg.loss.at_zero();
            assert_abs_diff_eq!(primal_risk_h(&[0.0; 5], &q, &ts, &cfg), phi0, epsilon = 1e-15);
            assert_abs_diff_eq!(primal_risk_g(&[0.0; 5], &q, &ts, &cfg).unwrap(), phi0, epsilon = 1e-15);
        }
    }

    #[test]
    fn balanced_normalized_equals_unnormalized_weights() {
        let ts = TrainingSet::new(
            vec![vec![0], vec![1], vec![2], vec![0]],
            vec![1, 1, -1, -1],
            vec![1, -1, 1, -1],
            PrivateAlphabet::Binary,
            3,
        )
        .unwrap();
        let cfg = RiskConfig::new(0.7, 0.7, "logistic", "count").unwrap();
        let a = DualProblem::private_normalized(&ts, &cfg).unwrap();
        let b = DualProblem::private_unnormalized(&ts, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hinge_gradient_at_zero_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ts = small_set(&mut rng, 6, 2, 3);
        let q = PrivacyMapping::random(2, 3, 2, &mut rng);
        let cfg = RiskConfig::new(0.5, 0.5, "hinge", "count").unwrap();
        let g = grad_dual(&DualVector::zeros(6, DualRole::BetaForG), &q, &ts, &cfg).unwrap();
        assert!(g.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn logistic_gradient_rejects_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ts = small_set(&mut rng, 6, 2, 3);
        let q = PrivacyMapping::random(2, 3, 2, &mut rng);
        let cfg = RiskConfig::defaults_for(6);
        let r = grad_dual(&DualVector::zeros(6, DualRole::AlphaForH), &q, &ts, &cfg);
        assert!(matches!(r, Err(Error::Domain { .. })));
    }

    #[test]
    fn label_swap_negates_private_gradient_quadratic_part() {
        // two symmetric points: swapping g flips the sign structure
        let mk = |g0: i32, g1: i32| {
            TrainingSet::new(vec![vec![0], vec![1]], vec![1, -1], vec![g0, g1], PrivateAlphabet::Binary, 2).unwrap()
        };
        let q = PrivacyMapping::new(vec![ndarray::array![[0.9, 0.1], [0.3, 0.7]]]).unwrap();
        let cfg = RiskConfig::new(0.5, 0.5, "quadratic", "count").unwrap();
        let beta = DualVector {
            values: vec![0.3, -0.2],
            role: DualRole::BetaForG,
        };
        let ga = grad_dual(&beta, &q, &mk(1, -1), &cfg).unwrap();
        let gb = grad_dual(&beta, &q, &mk(-1, 1), &cfg).unwrap();
        // separable part is label-independent; the quadratic part y_k (K (β∘y))_k is invariant
        // under a global label flip, so the gradients agree
        assert_abs_diff_eq!(ga[0], gb[0], epsilon = 1e-14);
        assert_abs_diff_eq!(ga[1], gb[1], epsilon = 1e-14);
    }

    #[test]
    fn count_factorization_matches_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ts = small_set(&mut rng, 9, 3, 4);
        let q = PrivacyMapping::random(3, 4, 3, &mut rng);
        let cfg = RiskConfig::new(0.2, 0.3, "logistic", "count").unwrap();
        let p = DualProblem::private_normalized(&ts, &cfg).unwrap();
        let v = DualVector {
            values: p.weights.iter().map(|w| w * rng.random_range(0.05..0.95)).collect(),
            role: DualRole::BetaForG,
        };
        let gram = GramCache::new(&ts, &q, cfg.kernel.as_ref());
        let a = p.dual_value(cfg.loss.as_ref(), gram.matrix(), &v).unwrap();
        let b = p.dual_value_count(cfg.loss.as_ref(), &ts, &q, &v).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn gram_cache_block_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ts = small_set(&mut rng, 7, 3, 4);
        let mut q = PrivacyMapping::random(3, 4, 2, &mut rng);
        let kernel = crate::kernels::CountKernel;
        let mut cache = GramCache::new(&ts, &q, &kernel);
        let other = PrivacyMapping::random(3, 4, 2, &mut rng);
        q.set_table(1, other.table(1).clone());
        cache.update_sensor(1, &ts, &q, &kernel);
        let fresh = gram_q(&ts.xs, &q, &kernel);
        for (a, b) in cache.matrix().iter().zip(fresh.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn fusion_weights_reproduce_representer_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let ts = small_set(&mut rng, 8, 2, 3);
        let q = PrivacyMapping::random(2, 3, 2, &mut rng);
        let cfg = RiskConfig::defaults_for(8);
        let p = DualProblem::public(&ts, &cfg);
        let v = DualVector {
            values: (0..8).map(|_| rng.random_range(0.01..0.12)).collect(),
            role: DualRole::AlphaForH,
        };
        let w = FusionWeights::from_dual(&p, &v, &ts, &q);
        let coeffs = p.primal_coefficients(&v);
        let gram = gram_q(&ts.xs, &q, cfg.kernel.as_ref());
        assert_abs_diff_eq!(
            w.primal_value(&p, cfg.loss.as_ref(), &ts, &q),
            p.primal_value(cfg.loss.as_ref(), &gram, &coeffs),
            epsilon = 1e-12
        );
    }

    #[test]
    fn sensor_gradient_needs_count_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let ts = small_set(&mut rng, 4, 2, 3);
        let q = PrivacyMapping::random(2, 3, 2, &mut rng);
        let cfg = RiskConfig::new(0.5, 0.5, "logistic", "gaussian:1").unwrap();
        let beta = DualVector::zeros(4, DualRole::BetaForG);
        let r = grad_q_sensor(0, &SensorObjective::PrivateDual { beta: &beta }, &q, &ts, &cfg);
        assert!(matches!(r, Err(Error::UnsupportedKernel(_))));
    }

    #[test]
    fn zero_beta_gives_zero_sensor_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let ts = small_set(&mut rng, 6, 2, 3);
        let q = PrivacyMapping::random(2, 3, 2, &mut rng);
        let cfg = RiskConfig::defaults_for(6);
        let beta = DualVector::zeros(6, DualRole::BetaForG);
        let g = grad_q_sensor(1, &SensorObjective::PrivateDual { beta: &beta }, &q, &ts, &cfg).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn training_set_validation() {
        assert!(TrainingSet::new(vec![], vec![], vec![], PrivateAlphabet::Binary, 2).is_err());
        assert!(TrainingSet::new(vec![vec![0]], vec![2], vec![1], PrivateAlphabet::Binary, 2).is_err());
        assert!(TrainingSet::new(vec![vec![0]], vec![1], vec![0], PrivateAlphabet::Binary, 2).is_err());
        assert!(TrainingSet::new(vec![vec![3]], vec![1], vec![1], PrivateAlphabet::Binary, 2).is_err());
        assert!(TrainingSet::new(vec![vec![0]], vec![1], vec![2], PrivateAlphabet::Mary(3), 2).is_ok());
        let ts = TrainingSet::new(vec![vec![0]], vec![1], vec![1], PrivateAlphabet::Binary, 2).unwrap();
        assert!(ts.require_all_classes().is_err());
        let cfg = RiskConfig::defaults_for(1);
        assert!(DualProblem::private_normalized(&ts, &cfg).is_err());
    }

    #[test]
    fn risk_config_rejects_nonpositive_regularizers() {
        assert!(RiskConfig::new(0.0, 1.0, "logistic", "count").is_err());
        assert!(RiskConfig::new(1.0, -1.0, "logistic", "count").is_err());
        let d = RiskConfig::defaults_for(100);
        assert_abs_diff_eq!(d.lambda, 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(d.lambda_n, 0.1, epsilon = 1e-15);
    }
}
