//! Message-space kernels and the marginalized kernel induced by a privacy mapping.
//!
//! Observations and messages are stored 0-based internally: a sensor reading
//! `x ∈ {1, …, |X|}` is held as `x - 1`. File formats convert at the boundary.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stochasticity tolerance for mapping rows.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Largest `|Z|^s` for which kernels are marginalized by enumerating message pairs.
pub const ENUMERATION_LIMIT: usize = 4096;

/// Per-sensor row-stochastic matrices `Q^t(z | x)`, each of shape `|X| × |Z|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MappingRepr", into = "MappingRepr")]
pub struct PrivacyMapping {
    x_card: usize,
    z_card: usize,
    tables: Vec<Array2<f64>>,
}

#[derive(Serialize, Deserialize)]
struct MappingRepr {
    x_card: usize,
    z_card: usize,
    /// `tables[t][x][z]`
    tables: Vec<Vec<Vec<f64>>>,
}

impl From<PrivacyMapping> for MappingRepr {
    fn from(q: PrivacyMapping) -> Self {
        MappingRepr {
            x_card: q.x_card,
            z_card: q.z_card,
            tables: q
                .tables
                .iter()
                .map(|t| t.outer_iter().map(|row| row.to_vec()).collect())
                .collect(),
        }
    }
}

impl TryFrom<MappingRepr> for PrivacyMapping {
    type Error = Error;

    fn try_from(r: MappingRepr) -> Result<Self> {
        let mut tables = Vec::with_capacity(r.tables.len());
        for rows in r.tables {
            if rows.len() != r.x_card || rows.iter().any(|row| row.len() != r.z_card) {
                return Err(Error::InvalidMapping("table shape mismatch".into()));
            }
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            tables.push(Array2::from_shape_vec((r.x_card, r.z_card), flat).unwrap());
        }
        PrivacyMapping::new(tables)
    }
}

impl PrivacyMapping {
    /// Builds a mapping, checking shapes, nonnegativity and row sums.
    pub fn new(tables: Vec<Array2<f64>>) -> Result<Self> {
        let first = tables
            .first()
            .ok_or_else(|| Error::InvalidMapping("no sensors".into()))?;
        let (x_card, z_card) = first.dim();
        if x_card == 0 || z_card == 0 {
            return Err(Error::InvalidMapping("empty alphabet".into()));
        }
        if tables.iter().any(|t| t.dim() != (x_card, z_card)) {
            return Err(Error::InvalidMapping(
                "all sensors must share |X| and |Z|".into(),
            ));
        }
        let q = PrivacyMapping {
            x_card,
            z_card,
            tables,
        };
        q.check_stochastic(ROW_SUM_TOL)?;
        Ok(q)
    }

    /// Every row equal to `1/|Z|`.
    pub fn uniform(sensors: usize, x_card: usize, z_card: usize) -> Self {
        let v = 1.0 / z_card as f64;
        PrivacyMapping {
            x_card,
            z_card,
            tables: vec![Array2::from_elem((x_card, z_card), v); sensors],
        }
    }

    /// One-hot rows given by `f(t, x) -> z`.
    pub fn deterministic(
        sensors: usize,
        x_card: usize,
        z_card: usize,
        f: impl Fn(usize, usize) -> usize,
    ) -> Self {
        let tables = (0..sensors)
            .map(|t| {
                let mut tab = Array2::zeros((x_card, z_card));
                for x in 0..x_card {
                    tab[[x, f(t, x)]] = 1.0;
                }
                tab
            })
            .collect();
        PrivacyMapping {
            x_card,
            z_card,
            tables,
        }
    }

    /// The identity channel `Z = X` (requires `|Z| = |X|`).
    pub fn identity(sensors: usize, card: usize) -> Self {
        Self::deterministic(sensors, card, card, |_, x| x)
    }

    /// Rows drawn independently and uniformly from the probability simplex.
    pub fn random<R: Rng + ?Sized>(
        sensors: usize,
        x_card: usize,
        z_card: usize,
        rng: &mut R,
    ) -> Self {
        let tables = (0..sensors)
            .map(|_| {
                let mut tab = Array2::zeros((x_card, z_card));
                for mut row in tab.outer_iter_mut() {
                    let draw = uniform_simplex(z_card, rng);
                    row.assign(&draw);
                }
                tab
            })
            .collect();
        PrivacyMapping {
            x_card,
            z_card,
            tables,
        }
    }

    pub fn sensors(&self) -> usize {
        self.tables.len()
    }

    pub fn x_card(&self) -> usize {
        self.x_card
    }

    pub fn z_card(&self) -> usize {
        self.z_card
    }

    pub fn table(&self, t: usize) -> &Array2<f64> {
        &self.tables[t]
    }

    pub fn tables(&self) -> &[Array2<f64>] {
        &self.tables
    }

    /// `Q^t(· | x)`.
    pub fn row(&self, t: usize, x: usize) -> ArrayView1<'_, f64> {
        self.tables[t].row(x)
    }

    /// `Q^t(z | x)`.
    #[inline]
    pub fn prob(&self, t: usize, x: usize, z: usize) -> f64 {
        self.tables[t][[x, z]]
    }

    /// Replaces one sensor's table. The caller is responsible for feasibility.
    pub fn set_table(&mut self, t: usize, table: Array2<f64>) {
        assert_eq!(table.dim(), (self.x_card, self.z_card));
        self.tables[t] = table;
    }

    /// `Q(z | x) = Π_t Q^t(z^t | x^t)`.
    pub fn joint_prob(&self, z: &[usize], x: &[usize]) -> f64 {
        z.iter()
            .zip(x)
            .enumerate()
            .map(|(t, (&zt, &xt))| self.prob(t, xt, zt))
            .product()
    }

    /// Nonnegativity and `Σ_z Q^t(z|x) = 1` within `tol`.
    pub fn check_stochastic(&self, tol: f64) -> Result<()> {
        for (t, tab) in self.tables.iter().enumerate() {
            for (x, row) in tab.outer_iter().enumerate() {
                if row.iter().any(|&v| !(v >= 0.0) || v > 1.0 + tol) {
                    return Err(Error::InvalidMapping(format!(
                        "sensor {t}, row {x}: entries must lie in [0, 1]"
                    )));
                }
                let sum: f64 = row.sum();
                if (sum - 1.0).abs() > tol {
                    return Err(Error::InvalidMapping(format!(
                        "sensor {t}, row {x}: row sums to {sum}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Column mass `Σ_x Q^t(z|x) >= Δ₁` for every sensor and message.
    pub fn satisfies_column_mass(&self, delta1: f64) -> bool {
        self.tables
            .iter()
            .all(|tab| tab.sum_axis(ndarray::Axis(0)).iter().all(|&m| m >= delta1))
    }

    /// `|Q^t(z|x) - 1/|Z|| >= Δ₂` for every entry.
    pub fn satisfies_band(&self, delta2: f64) -> bool {
        let center = 1.0 / self.z_card as f64;
        self.tables
            .iter()
            .all(|tab| tab.iter().all(|&v| (v - center).abs() >= delta2 - 1e-15))
    }

    /// Membership in the constrained set used while searching for the threshold.
    pub fn satisfies_constraints(&self, delta1: f64, delta2: f64) -> bool {
        self.check_stochastic(1e-9).is_ok()
            && self.satisfies_column_mass(delta1)
            && self.satisfies_band(delta2)
    }

    /// The same mapping with sensors reordered: sensor `t` of the result is
    /// sensor `perm[t]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        PrivacyMapping {
            x_card: self.x_card,
            z_card: self.z_card,
            tables: perm.iter().map(|&p| self.tables[p].clone()).collect(),
        }
    }
}

/// A uniform draw from the probability simplex of dimension `k`.
pub fn uniform_simplex<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Array1<f64> {
    let mut v: Array1<f64> = (0..k)
        .map(|_| -(1.0 - rng.random::<f64>()).ln())
        .collect();
    let s = v.sum();
    v /= s;
    v
}

/// Number of coordinates on which two message vectors agree.
pub fn count_kernel(z: &[usize], z2: &[usize]) -> Result<usize> {
    if z.len() != z2.len() {
        return Err(Error::LengthMismatch {
            expected: z.len(),
            got: z2.len(),
        });
    }
    Ok(z.iter().zip(z2).filter(|(a, b)| a == b).count())
}

/// A positive semidefinite kernel on message vectors in `Z^s`.
pub trait MessageKernel: Send + Sync + fmt::Debug {
    /// Configuration string that round-trips through [`kernel_from_spec`].
    fn spec(&self) -> String;

    fn eval(&self, z: &[usize], z2: &[usize]) -> f64;

    /// `κ_Q(x, x2) = Σ_z Σ_z' Q(z|x) Q(z'|x2) κ(z, z')`.
    ///
    /// The default enumerates `Z^s × Z^s` and panics beyond [`ENUMERATION_LIMIT`].
    fn marginal(&self, x: &[usize], x2: &[usize], q: &PrivacyMapping) -> f64 {
        marginal_by_enumeration(self, x, x2, q)
            .expect("message space too large to enumerate for this kernel")
    }

    /// True for the coordinate-agreement kernel, whose feature map is a
    /// concatenation of per-sensor one-hot vectors.
    fn is_count(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CountKernel;

impl MessageKernel for CountKernel {
    fn spec(&self) -> String {
        "count".into()
    }

    fn eval(&self, z: &[usize], z2: &[usize]) -> f64 {
        z.iter().zip(z2).filter(|(a, b)| a == b).count() as f64
    }

    fn marginal(&self, x: &[usize], x2: &[usize], q: &PrivacyMapping) -> f64 {
        // Σ_t Σ_z Q^t(z|x^t) Q^t(z|x2^t), O(s|Z|)
        x.iter()
            .zip(x2)
            .enumerate()
            .map(|(t, (&a, &b))| q.row(t, a).dot(&q.row(t, b)))
            .sum()
    }

    fn is_count(&self) -> bool {
        true
    }
}

/// `exp(-‖z - z'‖² / (2 w²))` on message indices.
#[derive(Debug, Clone, Copy)]
pub struct GaussianKernel {
    pub width: f64,
}

impl Default for GaussianKernel {
    fn default() -> Self {
        GaussianKernel { width: 1.0 }
    }
}

impl GaussianKernel {
    fn coordinate(&self, a: usize, b: usize) -> f64 {
        let d = a as f64 - b as f64;
        (-d * d / (2.0 * self.width * self.width)).exp()
    }
}

impl MessageKernel for GaussianKernel {
    fn spec(&self) -> String {
        format!("gaussian:{}", self.width)
    }

    fn eval(&self, z: &[usize], z2: &[usize]) -> f64 {
        z.iter()
            .zip(z2)
            .map(|(&a, &b)| self.coordinate(a, b))
            .product()
    }

    fn marginal(&self, x: &[usize], x2: &[usize], q: &PrivacyMapping) -> f64 {
        // The kernel is a product over sensors, and Q(z|x) factorizes the same way.
        let zc = q.z_card();
        x.iter()
            .zip(x2)
            .enumerate()
            .map(|(t, (&a, &b))| {
                let (ra, rb) = (q.row(t, a), q.row(t, b));
                let mut acc = 0.0;
                for z in 0..zc {
                    for z2 in 0..zc {
                        acc += ra[z] * rb[z2] * self.coordinate(z, z2);
                    }
                }
                acc
            })
            .product()
    }
}

/// Parses `count`, `gaussian` or `gaussian:<width>`.
pub fn kernel_from_spec(spec: &str) -> Result<Arc<dyn MessageKernel>> {
    let s = spec.trim().to_ascii_lowercase();
    match s.split_once(':') {
        None if s == "count" => Ok(Arc::new(CountKernel)),
        None if s == "gaussian" => Ok(Arc::new(GaussianKernel::default())),
        Some(("gaussian", w)) => match w.trim().parse::<f64>() {
            Ok(width) if width > 0.0 && width.is_finite() => Ok(Arc::new(GaussianKernel { width })),
            _ => Err(Error::UnknownKernel(spec.to_string())),
        },
        _ => Err(Error::UnknownKernel(spec.to_string())),
    }
}

/// Iterates over every message vector in `Z^s` in lexicographic order.
pub fn message_vectors(sensors: usize, z_card: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = z_card.checked_pow(sensors as u32).unwrap_or(usize::MAX);
    (0..total).map(move |mut k| {
        let mut z = vec![0; sensors];
        for slot in z.iter_mut().rev() {
            *slot = k % z_card;
            k /= z_card;
        }
        z
    })
}

/// The defining double sum of `κ_Q`, for any kernel, over all message pairs.
pub fn marginal_by_enumeration<K: MessageKernel + ?Sized>(
    kernel: &K,
    x: &[usize],
    x2: &[usize],
    q: &PrivacyMapping,
) -> Result<f64> {
    let s = q.sensors();
    let size = (q.z_card() as u128).pow(s as u32);
    if size > ENUMERATION_LIMIT as u128 {
        return Err(Error::SupportTooLarge {
            size,
            limit: ENUMERATION_LIMIT as u128,
        });
    }
    let msgs: Vec<Vec<usize>> = message_vectors(s, q.z_card()).collect();
    let px: Vec<f64> = msgs.iter().map(|z| q.joint_prob(z, x)).collect();
    let px2: Vec<f64> = msgs.iter().map(|z| q.joint_prob(z, x2)).collect();
    let mut acc = 0.0;
    for (z, &pa) in msgs.iter().zip(&px) {
        if pa == 0.0 {
            continue;
        }
        for (z2, &pb) in msgs.iter().zip(&px2) {
            if pb != 0.0 {
                acc += pa * pb * kernel.eval(z, z2);
            }
        }
    }
    Ok(acc)
}

/// `κ_Q(x, x2)` for the given kernel.
pub fn kernel_q(x: &[usize], x2: &[usize], q: &PrivacyMapping, k: &dyn MessageKernel) -> f64 {
    debug_assert_eq!(x.len(), q.sensors());
    debug_assert_eq!(x2.len(), q.sensors());
    k.marginal(x, x2, q)
}

/// The symmetric Gram matrix `[κ_Q(x_i, x_j)]`.
pub fn gram_q(xs: &[Vec<usize>], q: &PrivacyMapping, k: &dyn MessageKernel) -> Array2<f64> {
    let n = xs.len();
    let mut g = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = k.marginal(&xs[i], &xs[j], q);
            g[[i, j]] = v;
            g[[j, i]] = v;
        }
    }
    g
}
