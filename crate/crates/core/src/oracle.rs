//! Exact computations on finite distributions: induced message joints, Bayes
//! errors, the minimum risk `R`, the constants `c` and `c'`, privacy budgets,
//! the Fano bound and the plug-in budget estimate.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::kernels::PrivacyMapping;
use crate::losses::MarginLoss;
use crate::risk::{FusionWeights, PrivateAlphabet};

/// Largest message support [`induced_joint`] enumerates.
pub const INDUCED_SUPPORT_LIMIT: u128 = 1 << 20;

/// Largest observation support enumerated by the exact risk computations.
pub const OBSERVATION_SUPPORT_LIMIT: u128 = 1 << 20;

/// Mass tolerance of distribution checks.
pub const MASS_TOL: f64 = 1e-12;

/// Relative tolerance when grouping likelihood-ratio ties.
pub const TIE_TOL: f64 = 1e-12;

/// Observation law `p(x | h, g)` of one hypothesis cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellObservations {
    /// Sensors independent given the cell; `[t][x]`.
    Independent(Vec<Vec<f64>>),
    /// Explicit list of `(x, p(x | cell))`.
    Dense(Vec<(Vec<usize>, f64)>),
}

/// One `(h, g)` cell with its probability and observation law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointCell {
    pub h: i8,
    pub g: i32,
    pub prob: f64,
    pub obs: CellObservations,
}

/// A finite joint law `p(x, h, g)`. Observations are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointModel {
    pub x_card: usize,
    pub sensors: usize,
    pub private: PrivateAlphabet,
    pub cells: Vec<JointCell>,
}

fn mass_ok(total: f64) -> bool {
    (total - 1.0).abs() <= MASS_TOL * 10.0
}

impl JointModel {
    pub fn new(x_card: usize, sensors: usize, private: PrivateAlphabet, cells: Vec<JointCell>) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidDistribution(m));
        if cells.iter().any(|c| !(c.prob >= 0.0)) {
            return bad("negative cell probability".into());
        }
        let total: f64 = cells.iter().map(|c| c.prob).sum();
        if !mass_ok(total) {
            return bad(format!("cell probabilities sum to {total}"));
        }
        for c in &cells {
            if c.h != 1 && c.h != -1 {
                return bad(format!("public label {} is not ±1", c.h));
            }
            if private.index_of(c.g).is_none() {
                return bad(format!("private label {} outside its alphabet", c.g));
            }
            match &c.obs {
                CellObservations::Independent(per) => {
                    if per.len() != sensors {
                        return bad("sensor count mismatch".into());
                    }
                    for row in per {
                        if row.len() != x_card || row.iter().any(|&p| !(p >= 0.0)) || !mass_ok(row.iter().sum()) {
                            return bad("sensor conditional is not a pmf over the alphabet".into());
                        }
                    }
                }
                CellObservations::Dense(list) => {
                    if list.iter().any(|(x, p)| x.len() != sensors || x.iter().any(|&v| v >= x_card) || !(*p >= 0.0)) {
                        return bad("dense conditional has an invalid entry".into());
                    }
                    if !mass_ok(list.iter().map(|(_, p)| p).sum()) {
                        return bad("dense conditional does not sum to one".into());
                    }
                }
            }
        }
        let jm = JointModel {
            x_card,
            sensors,
            private,
            cells,
        };
        if jm.prior_g().iter().any(|&(_, p)| !(p > 0.0)) {
            return bad("every private class needs positive prior".into());
        }
        Ok(jm)
    }

    /// `p_G(g)` in alphabet order.
    pub fn prior_g(&self) -> Vec<(i32, f64)> {
        self.private
            .labels()
            .into_iter()
            .map(|g| (g, self.cells.iter().filter(|c| c.g == g).map(|c| c.prob).sum()))
            .collect()
    }

    /// `p_H(-1), p_H(1)`.
    pub fn prior_h(&self) -> [(i8, f64); 2] {
        let p = |h: i8| self.cells.iter().filter(|c| c.h == h).map(|c| c.prob).sum();
        [(-1, p(-1)), (1, p(1))]
    }

    /// `p(x | cell)`.
    pub fn cell_prob(&self, cell: usize, x: &[usize]) -> f64 {
        match &self.cells[cell].obs {
            CellObservations::Independent(per) => x.iter().zip(per).map(|(&v, row)| row[v]).product(),
            CellObservations::Dense(list) => list.iter().filter(|(y, _)| y == x).map(|(_, p)| p).sum(),
        }
    }

    /// `p(x, h, g)`.
    pub fn prob(&self, x: &[usize], h: i8, g: i32) -> f64 {
        (0..self.cells.len())
            .filter(|&k| self.cells[k].h == h && self.cells[k].g == g)
            .map(|k| self.cells[k].prob * self.cell_prob(k, x))
            .sum()
    }

    pub fn observation_support(&self) -> u128 {
        (self.x_card as u128).saturating_pow(self.sensors as u32)
    }

    /// Draws `n` i.i.d. samples `(x, h, g)`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<(Vec<usize>, i8, i32)> {
        let cell_dist = WeightedIndex::new(self.cells.iter().map(|c| c.prob)).expect("cell probabilities");
        let sensor_dists: Vec<Option<Vec<WeightedIndex<f64>>>> = self
            .cells
            .iter()
            .map(|c| match &c.obs {
                CellObservations::Independent(per) => Some(
                    per.iter()
                        .map(|row| WeightedIndex::new(row.iter().cloned()).expect("sensor pmf"))
                        .collect(),
                ),
                CellObservations::Dense(_) => None,
            })
            .collect();
        let dense_dists: Vec<Option<WeightedIndex<f64>>> = self
            .cells
            .iter()
            .map(|c| match &c.obs {
                CellObservations::Dense(list) => Some(WeightedIndex::new(list.iter().map(|(_, p)| *p)).expect("dense pmf")),
                CellObservations::Independent(_) => None,
            })
            .collect();
        (0..n)
            .map(|_| {
                let k = cell_dist.sample(rng);
                let cell = &self.cells[k];
                let x = match (&sensor_dists[k], &cell.obs) {
                    (Some(d), _) => d.iter().map(|d| d.sample(rng)).collect(),
                    (None, CellObservations::Dense(list)) => {
                        list[dense_dists[k].as_ref().expect("dense").sample(rng)].0.clone()
                    }
                    _ => unreachable!(),
                };
                (x, cell.h, cell.g)
            })
            .collect()
    }

    /// Every observation vector in lexicographic order.
    pub fn observations(&self) -> Result<Vec<Vec<usize>>> {
        let size = self.observation_support();
        if size > OBSERVATION_SUPPORT_LIMIT {
            return Err(Error::SupportTooLarge {
                size,
                limit: OBSERVATION_SUPPORT_LIMIT,
            });
        }
        Ok(crate::kernels::message_vectors(self.sensors, self.x_card).collect())
    }
}

/// A pmf over `(atom, label)`: rows are atoms, columns labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPmf {
    pub labels: Vec<i32>,
    pub p: Array2<f64>,
}

impl LabeledPmf {
    pub fn new(labels: Vec<i32>, p: Array2<f64>) -> Result<Self> {
        if p.ncols() != labels.len() {
            return Err(Error::LengthMismatch {
                expected: labels.len(),
                got: p.ncols(),
            });
        }
        if p.iter().any(|&v| !(v >= 0.0)) || !mass_ok(p.sum()) {
            return Err(Error::InvalidDistribution("joint must be a pmf".into()));
        }
        Ok(LabeledPmf { labels, p })
    }

    pub fn atoms(&self) -> usize {
        self.p.nrows()
    }

    /// `p(label)` in column order.
    pub fn label_marginal(&self) -> Vec<f64> {
        self.p.columns().into_iter().map(|c| c.sum()).collect()
    }

    /// `p(atom)`.
    pub fn atom_marginal(&self) -> Vec<f64> {
        self.p.rows().into_iter().map(|r| r.sum()).collect()
    }

    /// `p(atom | label)` per column.
    pub fn conditionals(&self) -> Vec<Vec<f64>> {
        self.p
            .columns()
            .into_iter()
            .map(|c| {
                let m = c.sum();
                c.iter().map(|v| v / m).collect()
            })
            .collect()
    }

    /// Column of `label`.
    pub fn column_of(&self, label: i32) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }
}

/// `p(z, h, g)` over all message vectors, in lexicographic message order.
#[derive(Debug, Clone, PartialEq)]
pub struct InducedJoint {
    pub sensors: usize,
    pub z_card: usize,
    /// `(h, g)` of each column.
    pub cells: Vec<(i8, i32)>,
    pub private: PrivateAlphabet,
    /// `[message, cell]`
    pub p: Array2<f64>,
}

impl InducedJoint {
    /// Message vector of a row index.
    pub fn message(&self, mut idx: usize) -> Vec<usize> {
        let mut z = vec![0; self.sensors];
        for t in (0..self.sensors).rev() {
            z[t] = idx % self.z_card;
            idx /= self.z_card;
        }
        z
    }

    fn by_label(&self, labels: Vec<i32>, of: impl Fn(&(i8, i32)) -> i32) -> LabeledPmf {
        let mut p = Array2::zeros((self.p.nrows(), labels.len()));
        for (k, cell) in self.cells.iter().enumerate() {
            let col = labels.iter().position(|&l| l == of(cell)).expect("label in alphabet");
            for z in 0..self.p.nrows() {
                p[[z, col]] += self.p[[z, k]];
            }
        }
        LabeledPmf { labels, p }
    }

    /// `p(z, h)`.
    pub fn public(&self) -> LabeledPmf {
        self.by_label(vec![-1, 1], |c| c.0 as i32)
    }

    /// `p(z, g)`.
    pub fn private_joint(&self) -> LabeledPmf {
        self.by_label(self.private.labels(), |c| c.1)
    }
}

/// Exact `p(z, h, g) = Σ_x Π_t Q^t(z^t|x^t) p(x, h, g)`.
pub fn induced_joint(q: &PrivacyMapping, jm: &JointModel) -> Result<InducedJoint> {
    if q.sensors() != jm.sensors || q.x_card() != jm.x_card {
        return Err(Error::InvalidMapping(format!(
            "mapping is {}×{} but the model has {} sensors over {} symbols",
            q.sensors(),
            q.x_card(),
            jm.sensors,
            jm.x_card
        )));
    }
    let size = (q.z_card() as u128).saturating_pow(q.sensors() as u32);
    if size > INDUCED_SUPPORT_LIMIT {
        return Err(Error::SupportTooLarge {
            size,
            limit: INDUCED_SUPPORT_LIMIT,
        });
    }
    let (s, zc) = (q.sensors(), q.z_card());
    let messages: Vec<Vec<usize>> = crate::kernels::message_vectors(s, zc).collect();
    let mut p = Array2::zeros((messages.len(), jm.cells.len()));
    for (k, cell) in jm.cells.iter().enumerate() {
        match &cell.obs {
            CellObservations::Independent(per) => {
                // r_t(z | cell) = Σ_x Q^t(z|x) p_t(x | cell)
                let r: Vec<Vec<f64>> = (0..s)
                    .map(|t| {
                        (0..zc)
                            .map(|z| (0..jm.x_card).map(|x| q.prob(t, x, z) * per[t][x]).sum())
                            .collect()
                    })
                    .collect();
                for (i, z) in messages.iter().enumerate() {
                    p[[i, k]] = cell.prob * z.iter().enumerate().map(|(t, &zt)| r[t][zt]).product::<f64>();
                }
            }
            CellObservations::Dense(list) => {
                for (i, z) in messages.iter().enumerate() {
                    p[[i, k]] = cell.prob * list.iter().map(|(x, px)| px * q.joint_prob(z, x)).sum::<f64>();
                }
            }
        }
    }
    Ok(InducedJoint {
        sensors: s,
        z_card: zc,
        cells: jm.cells.iter().map(|c| (c.h, c.g)).collect(),
        private: jm.private,
        p,
    })
}

/// Minimum misclassification probability `Σ_z (p(z) - max_l p(z, l))`.
pub fn bayes_error(pzl: &LabeledPmf) -> f64 {
    pzl.p
        .rows()
        .into_iter()
        .map(|r| {
            let k = r
                .iter()
                .enumerate()
                .fold(0, |best, (i, &v)| if v > r[best] { i } else { best });
            r.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, v)| v).sum::<f64>()
        })
        .sum()
}

fn check_conditionals(p_minus: &[f64], p_plus: &[f64]) -> Result<()> {
    if p_minus.len() != p_plus.len() {
        return Err(Error::LengthMismatch {
            expected: p_minus.len(),
            got: p_plus.len(),
        });
    }
    for (a, b) in [(p_minus, "G = -1"), (p_plus, "G = 1")] {
        if a.iter().any(|&v| !(v >= 0.0)) || !mass_ok(a.iter().sum()) {
            return Err(Error::InvalidDistribution(format!("conditional given {b} is not a pmf")));
        }
    }
    if p_minus.iter().zip(p_plus).any(|(&a, &b)| (a > 0.0) != (b > 0.0)) {
        return Err(Error::SupportMismatch);
    }
    Ok(())
}

/// `min_γ R(γ) = 1/2 - (1/4) Σ_z |p(z|1) - p(z|-1)|`.
pub fn min_risk_r(p_minus: &[f64], p_plus: &[f64]) -> Result<f64> {
    check_conditionals(p_minus, p_plus)?;
    Ok(balanced_risk(p_minus, p_plus))
}

/// [`min_risk_r`] without the common-support requirement.
pub fn balanced_risk(p_minus: &[f64], p_plus: &[f64]) -> f64 {
    let tv: f64 = p_minus.iter().zip(p_plus).map(|(a, b)| (b - a).abs()).sum();
    (0.5 - 0.25 * tv).clamp(0.0, 0.5)
}

/// `c = min{P(ℓ = min ℓ | G=-1), P(ℓ = max ℓ | G=1)}` with `ℓ = p(z|1)/p(z|-1)`.
pub fn compute_c(p_minus: &[f64], p_plus: &[f64]) -> Result<f64> {
    check_conditionals(p_minus, p_plus)?;
    let support: Vec<usize> = (0..p_minus.len()).filter(|&z| p_minus[z] > 0.0).collect();
    let ratio = |z: usize| p_plus[z] / p_minus[z];
    let lmin = support.iter().map(|&z| ratio(z)).fold(f64::INFINITY, f64::min);
    let lmax = support.iter().map(|&z| ratio(z)).fold(f64::NEG_INFINITY, f64::max);
    let tie = |a: f64, b: f64| (a - b).abs() <= TIE_TOL * a.abs().max(b.abs());
    let low: f64 = support.iter().filter(|&&z| tie(ratio(z), lmin)).map(|&z| p_minus[z]).sum();
    let high: f64 = support.iter().filter(|&&z| tie(ratio(z), lmax)).map(|&z| p_plus[z]).sum();
    Ok(low.min(high))
}

/// `c' = min_{g ≥ 1}` of [`compute_c`] between class `0` and class `g`.
pub fn compute_c_prime(conditionals: &[Vec<f64>]) -> Result<f64> {
    if conditionals.len() < 2 {
        return Err(Error::InvalidDistribution("need at least two classes".into()));
    }
    let mut c = f64::INFINITY;
    for cg in &conditionals[1..] {
        c = c.min(compute_c(&conditionals[0], cg)?);
    }
    Ok(c)
}

/// `min_{g ≥ 1} min_γ R_g(γ)` over the pairs `(0, g)`.
pub fn min_pair_risk(conditionals: &[Vec<f64>]) -> Result<f64> {
    if conditionals.len() < 2 {
        return Err(Error::InvalidDistribution("need at least two classes".into()));
    }
    let mut r = f64::INFINITY;
    for cg in &conditionals[1..] {
        r = r.min(min_risk_r(&conditionals[0], cg)?);
    }
    Ok(r)
}

/// Which budget formula produced a certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CertificateKind {
    ExactProp1,
    WeakThm1 { delta: f64 },
    MaryThm2,
    MaryWeakThm3 { delta: f64 },
}

/// A privacy budget implied by a risk level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyCertificate {
    pub theta: f64,
    pub c: f64,
    #[serde(with = "extended_float")]
    pub epsilon: f64,
    pub kind: CertificateKind,
}

/// Serializes `±∞` as the strings `"inf"` and `"-inf"`.
pub mod extended_float {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => Err(serde::de::Error::custom(format!("not a number: {s}"))),
            },
        }
    }
}

/// [`extended_float`] for optional values.
pub mod extended_float_opt {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match v {
            Some(v) => extended_float::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        struct Wrap(#[serde(with = "extended_float")] f64);
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

fn log_ratio(c: f64, denom: f64) -> f64 {
    if denom > 0.0 {
        (c / denom).ln().max(0.0)
    } else {
        f64::INFINITY
    }
}

/// `ε = log c/(c + 2θ - 1)₊`, doubled for m-ary `G` (with `c = c'`).
pub fn budget_exact(theta: f64, c: f64, mary: bool) -> PrivacyCertificate {
    let eps = log_ratio(c, c + 2.0 * theta - 1.0);
    PrivacyCertificate {
        theta,
        c,
        epsilon: if mary { 2.0 * eps } else { eps },
        kind: if mary {
            CertificateKind::MaryThm2
        } else {
            CertificateKind::ExactProp1
        },
    }
}

/// `ε = log c/(c - 2a(φ(0) - θ + δ)^{1/r})₊`, halved for m-ary `G`.
pub fn budget_weak(theta: f64, delta: f64, loss: &dyn MarginLoss, c: f64, mary: bool) -> PrivacyCertificate {
    let (a, r) = loss.assumption_constants();
    let gap = (loss.at_zero() - theta + delta).max(0.0);
    let eps = log_ratio(c, c - 2.0 * a * gap.powf(1.0 / r));
    PrivacyCertificate {
        theta,
        c,
        epsilon: if mary { 0.5 * eps } else { eps },
        kind: if mary {
            CertificateKind::MaryWeakThm3 { delta }
        } else {
            CertificateKind::WeakThm1 { delta }
        },
    }
}

/// Binary entropy in nats.
pub fn binary_entropy(p: f64) -> f64 {
    let h = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.ln() };
    h(p) + h(1.0 - p)
}

/// Entropy in nats.
pub fn entropy(pmf: &[f64]) -> f64 {
    pmf.iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum()
}

/// `θ / (2 max_g p_G(g))` for the largest `θ ∈ [0, 1/2]` with
/// `H(θ) ≤ H(G) - ε`.
pub fn fano_risk_bound(epsilon: f64, priors: &[f64]) -> Result<f64> {
    let hg = entropy(priors);
    if epsilon > hg {
        return Err(Error::BudgetTooLarge { epsilon, entropy: hg });
    }
    let target = hg - epsilon;
    let theta = if target >= std::f64::consts::LN_2 {
        0.5
    } else {
        let (mut lo, mut hi) = (0.0f64, 0.5f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if binary_entropy(mid) <= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let pmax = priors.iter().cloned().fold(0.0, f64::max);
    Ok(theta / (2.0 * pmax))
}

/// Smallest `ε` with `e^{-ε} ≤ p(g|z)/p(g) ≤ e^{ε}` on the support of `Z`.
pub fn posterior_ratio_extremes(pzg: &LabeledPmf) -> f64 {
    let pg = pzg.label_marginal();
    let pz = pzg.atom_marginal();
    let mut worst: f64 = 0.0;
    for (z, &mz) in pz.iter().enumerate() {
        if mz <= 0.0 {
            continue;
        }
        for (k, &mg) in pg.iter().enumerate() {
            let v = pzg.p[[z, k]];
            let r = if v > 0.0 { (v / (mz * mg)).ln().abs() } else { f64::INFINITY };
            worst = worst.max(r);
        }
    }
    worst
}

/// Plug-in `ε̂ = max |log p̂(g, z)/(p̂(g) p̂(z))|` over observed cells.
pub fn estimate_epsilon_hat<Z: Ord + Clone>(samples: &[(i32, Z)]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidDistribution("no samples".into()));
    }
    let mut joint: BTreeMap<(i32, Z), f64> = BTreeMap::new();
    let mut ng: BTreeMap<i32, f64> = BTreeMap::new();
    let mut nz: BTreeMap<Z, f64> = BTreeMap::new();
    for (g, z) in samples {
        *joint.entry((*g, z.clone())).or_default() += 1.0;
        *ng.entry(*g).or_default() += 1.0;
        *nz.entry(z.clone()).or_default() += 1.0;
    }
    Ok(estimate_from_counts(&joint, &ng, &nz, samples.len() as f64))
}

fn estimate_from_counts<Z: Ord>(
    joint: &BTreeMap<(i32, Z), f64>,
    ng: &BTreeMap<i32, f64>,
    nz: &BTreeMap<Z, f64>,
    n: f64,
) -> f64 {
    joint
        .iter()
        .map(|((g, z), &c)| (c * n / (ng[g] * nz[z])).ln().abs())
        .fold(0.0, f64::max)
}

/// [`estimate_epsilon_hat`] from a table of counts `[atom, label]`.
pub fn estimate_epsilon_hat_counts(counts: &LabeledPmf) -> f64 {
    let n: f64 = counts.p.sum();
    let pg = counts.label_marginal();
    let pz = counts.atom_marginal();
    let mut worst: f64 = 0.0;
    for z in 0..counts.atoms() {
        for k in 0..counts.labels.len() {
            let c = counts.p[[z, k]];
            if c > 0.0 {
                worst = worst.max((c * n / (pg[k] * pz[z])).ln().abs());
            }
        }
    }
    worst
}

/// Population class-normalized risk of a fixed fusion rule:
/// `(1/2) Σ_g E[φ(g ⟨w, Φ_Q(X)⟩) | G = g]` for a binary `G`.
pub fn expected_normalized_risk(
    w: &FusionWeights,
    q: &PrivacyMapping,
    jm: &JointModel,
    loss: &dyn MarginLoss,
) -> Result<f64> {
    if jm.private != PrivateAlphabet::Binary {
        return Err(Error::InvalidDistribution("binary private hypothesis required".into()));
    }
    let priors = jm.prior_g();
    let mut acc = 0.0;
    for x in jm.observations()? {
        let score = w.score(&x, q);
        for (k, cell) in jm.cells.iter().enumerate() {
            let px = cell.prob * jm.cell_prob(k, &x);
            if px == 0.0 {
                continue;
            }
            let pg = priors.iter().find(|(g, _)| *g == cell.g).expect("prior").1;
            acc += 0.5 * px / pg * loss.eval(cell.g as f64 * score);
        }
    }
    Ok(acc)
}
