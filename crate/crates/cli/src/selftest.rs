//! Closed-form checks of the oracle, run by `oracle-selftest`.

use infopriv::oracle::{
    bayes_error, budget_exact, compute_c, estimate_epsilon_hat, estimate_epsilon_hat_counts, fano_risk_bound,
    min_risk_r, posterior_ratio_extremes, LabeledPmf,
};
use infopriv::kernels::uniform_simplex;
use ndarray::{array, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn table_one() -> Check {
    let mut ok = true;
    let mut detail = String::new();
    for d in [10.0, 100.0] {
        let pm = 0.2;
        let j = LabeledPmf::new(vec![-1, 1], array![[pm / d, 1.0 - 2.0 * pm], [(1.0 - 1.0 / d) * pm, pm]])
            .expect("valid table");
        let be = bayes_error(&j);
        let ratio = j.p[[0, 0]] / j.atom_marginal()[0] / pm;
        ok &= close(be, 0.2, 1e-12) && close(ratio, 1.0 / (0.2 + 0.6 * d), 1e-12);
        detail.push_str(&format!("d={d}: bayes={be:.6} ratio={ratio:.6}; "));
    }
    check("two-cell table", ok, detail)
}

fn symmetric_channel() -> Check {
    let (m, p) = ([0.2, 0.8], [0.8, 0.2]);
    let r = min_risk_r(&m, &p).unwrap_or(f64::NAN);
    let c = compute_c(&m, &p).unwrap_or(f64::NAN);
    check(
        "symmetric channel",
        close(r, 0.2, 1e-12) && close(c, 0.8, 1e-12),
        format!("R={r} c={c}"),
    )
}

fn budgets() -> Check {
    let a = budget_exact(0.5, 0.3, false).epsilon;
    let b = budget_exact(0.4, 0.5, false).epsilon;
    let c = budget_exact(0.2, 0.5, false).epsilon;
    check(
        "exact budget",
        a == 0.0 && close(b, (5.0f64 / 3.0).ln(), 1e-12) && c == f64::INFINITY,
        format!("{a} {b} {c}"),
    )
}

fn fano() -> Check {
    let a = fano_risk_bound(0.0, &[0.5, 0.5]).unwrap_or(f64::NAN);
    let b = fano_risk_bound(2f64.ln(), &[0.5, 0.5]).unwrap_or(f64::NAN);
    let c = fano_risk_bound(1.0, &[0.5, 0.5]).is_err();
    check(
        "fano bound",
        close(a, 0.5, 1e-12) && close(b, 0.0, 1e-12) && c,
        format!("{a} {b} rejects-large={c}"),
    )
}

fn random_joints(seed: u64, trials: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    for t in 0..trials {
        let atoms = 2 + t % 5;
        let flat = uniform_simplex(2 * atoms, &mut rng);
        let p = Array2::from_shape_vec((atoms, 2), flat.to_vec()).expect("shape");
        let Ok(j) = LabeledPmf::new(vec![-1, 1], p) else { continue };
        let conds = j.conditionals();
        let (Ok(r), Ok(c)) = (min_risk_r(&conds[0], &conds[1]), compute_c(&conds[0], &conds[1])) else {
            continue;
        };
        let bound = budget_exact(r, c, false).epsilon;
        if posterior_ratio_extremes(&j) > bound + 1e-9 {
            violations += 1;
        }
    }
    check(
        "risk budget bounds privacy",
        violations == 0,
        format!("{violations} violations in {trials} random joints"),
    )
}

fn plug_in() -> Check {
    let samples: Vec<(i32, usize)> = vec![(-1, 0), (-1, 0), (-1, 1), (1, 1), (1, 1), (1, 0), (1, 1), (-1, 1)];
    let direct = estimate_epsilon_hat(&samples).unwrap_or(f64::NAN);
    let mut counts = Array2::zeros((2, 2));
    for &(g, z) in &samples {
        counts[[z, usize::from(g == 1)]] += 1.0;
    }
    let table = LabeledPmf::new(vec![-1, 1], counts.clone() / samples.len() as f64).expect("valid table");
    let via_counts = estimate_epsilon_hat_counts(&table);
    let exact = posterior_ratio_extremes(&table);
    check(
        "plug-in estimate",
        close(direct, via_counts, 1e-12) && close(direct, exact, 1e-12),
        format!("samples={direct} counts={via_counts} exact={exact}"),
    )
}

/// Every check; the random-joint check draws from `seed`.
pub fn run(seed: u64) -> Vec<Check> {
    vec![
        table_one(),
        symmetric_channel(),
        budgets(),
        fano(),
        random_joints(seed, 500),
        plug_in(),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_pass() {
        for c in super::run(0) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
