//! Row projections for privacy-mapping tables.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::{uniform_simplex, PrivacyMapping};

/// Maximum number of band-repair passes per row.
pub const REPAIR_PASSES: usize = 10;

const BAND_SLACK: f64 = 1e-15;

/// Euclidean projection onto the probability simplex (sorted-threshold method).
pub fn project_simplex(v: &mut [f64]) {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            tau = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - tau).max(0.0);
    }
    // absorb rounding so the row sums to 1 to machine precision
    let sum: f64 = v.iter().sum();
    let k = argmax(v);
    v[k] += 1.0 - sum;
}

fn argmax(v: &[f64]) -> usize {
    let mut k = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[k] {
            k = i;
        }
    }
    k
}

fn in_band(x: f64, center: f64, delta2: f64) -> bool {
    (x - center).abs() < delta2 - BAND_SLACK
}

/// Pushes entries out of the band `(1/|Z| - Δ₂, 1/|Z| + Δ₂)` and renormalizes
/// through the largest entry. Returns `false` if the row is still infeasible
/// after [`REPAIR_PASSES`] passes.
pub fn repair_row(row: &mut [f64], delta2: f64) -> bool {
    if delta2 <= 0.0 {
        return true;
    }
    let center = 1.0 / row.len() as f64;
    let (lo, hi) = (center - delta2, center + delta2);
    for _ in 0..REPAIR_PASSES {
        if row.iter().all(|&x| !in_band(x, center, delta2) && (0.0..=1.0).contains(&x)) {
            return true;
        }
        for x in row.iter_mut() {
            if in_band(*x, center, delta2) {
                *x = if *x - lo <= hi - *x { lo } else { hi };
            }
        }
        let sum: f64 = row.iter().sum();
        let k = argmax(row);
        row[k] += 1.0 - sum;
        if row[k] < 0.0 {
            return false;
        }
    }
    row.iter().all(|&x| !in_band(x, center, delta2) && (0.0..=1.0).contains(&x))
}

/// Projects every row of `table` onto the simplex, then band-repairs it.
/// Returns `false` if some row cannot be repaired.
pub fn project_table(table: &mut Array2<f64>, delta2: Option<f64>) -> bool {
    for mut row in table.rows_mut() {
        let slice = row.as_slice_mut().expect("tables are standard layout");
        project_simplex(slice);
        if let Some(d) = delta2 {
            if !repair_row(slice, d) {
                return false;
            }
        }
    }
    true
}

/// `Σ_x Q(z|x) ≥ Δ₁` for every column.
pub fn column_mass_ok(table: &Array2<f64>, delta1: f64) -> bool {
    table.columns().into_iter().all(|c| c.sum() >= delta1)
}

/// A mapping whose rows are uniform on the simplex, repaired into the
/// constrained set.
pub fn random_constrained_mapping<R: Rng + ?Sized>(
    s: usize,
    x_card: usize,
    z_card: usize,
    delta1: f64,
    delta2: f64,
    rng: &mut R,
) -> Result<PrivacyMapping> {
    const ATTEMPTS: usize = 100;
    let mut tables = Vec::with_capacity(s);
    for _ in 0..s {
        let mut found = None;
        for _ in 0..ATTEMPTS {
            let mut tab = Array2::zeros((x_card, z_card));
            let mut ok = true;
            for x in 0..x_card {
                let mut row = uniform_simplex(z_card, rng).to_vec();
                ok &= repair_row(&mut row, delta2);
                for (z, v) in row.into_iter().enumerate() {
                    tab[[x, z]] = v;
                }
            }
            if ok && column_mass_ok(&tab, delta1) {
                found = Some(tab);
                break;
            }
        }
        tables.push(found.ok_or(Error::InfeasibleProjection)?);
    }
    PrivacyMapping::new(tables)
}
