#![allow(dead_code)]

use infopriv::kernels::{uniform_simplex, PrivacyMapping};
use infopriv::oracle::LabeledPmf;
use infopriv::risk::{PrivateAlphabet, TrainingSet};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A binary training set with both private classes present.
pub fn random_set<R: Rng>(rng: &mut R, n: usize, s: usize, x_card: usize) -> TrainingSet {
    assert!(n >= 2);
    let xs = (0..n).map(|_| (0..s).map(|_| rng.random_range(0..x_card)).collect()).collect();
    let hs = (0..n).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect();
    let mut gs: Vec<i32> = (0..n).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect();
    gs[0] = -1;
    gs[1] = 1;
    TrainingSet::new(xs, hs, gs, PrivateAlphabet::Binary, x_card).unwrap()
}

pub fn random_mapping<R: Rng>(rng: &mut R, s: usize, x_card: usize, z_card: usize) -> PrivacyMapping {
    PrivacyMapping::random(s, x_card, z_card, rng)
}

/// A random joint `p(z, g)` over `atoms` messages with labels `{-1, 1}`.
pub fn random_pzg<R: Rng>(rng: &mut R, atoms: usize) -> LabeledPmf {
    let flat = uniform_simplex(2 * atoms, rng).to_vec();
    LabeledPmf::new(vec![-1, 1], Array2::from_shape_vec((atoms, 2), flat).unwrap()).unwrap()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]] * m[[i, j]])
            .sum();
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * m[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[[k, p]], m[[k, q]]);
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[[p, k]], m[[q, k]]);
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..n).map(|i| m[[i, i]]).collect()
}

/// Smallest error over every deterministic rule `z -> label`.
pub fn brute_force_bayes_error(p: &LabeledPmf) -> f64 {
    let (atoms, k) = (p.atoms(), p.labels.len());
    let mut best = f64::INFINITY;
    let total = k.pow(atoms as u32);
    for code in 0..total {
        let mut c = code;
        let mut correct = 0.0;
        for z in 0..atoms {
            correct += p.p[[z, c % k]];
            c /= k;
        }
        best = best.min(1.0 - correct);
    }
    best
}

/// Smallest `(P(γ=1|G=-1) + P(γ=-1|G=1))/2` over every deterministic rule.
pub fn brute_force_min_risk(minus: &[f64], plus: &[f64]) -> f64 {
    let atoms = minus.len();
    (0..1usize << atoms)
        .map(|set| {
            let (mut fa, mut miss) = (0.0, 0.0);
            for z in 0..atoms {
                if set >> z & 1 == 1 {
                    fa += minus[z];
                } else {
                    miss += plus[z];
                }
            }
            0.5 * (fa + miss)
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn rel_close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + abs
}
