//! Public-hypothesis decisions from a trained mapping and fusion rule.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SolveResult;
use crate::kernels::PrivacyMapping;

/// How the fusion center sees an observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictMode {
    /// Score the expected message feature `Φ_Q(x)`.
    Expected,
    /// Draw `z ~ Q(·|x)` per sensor and score `Φ(z)`.
    Sampled(u64),
}

fn sign(v: f64) -> i8 {
    if v >= 0.0 {
        1
    } else {
        -1
    }
}

fn sample_message<R: Rng + ?Sized>(q: &PrivacyMapping, x: &[usize], rng: &mut R) -> Vec<usize> {
    x.iter()
        .enumerate()
        .map(|(t, &xt)| {
            let row = q.row(t, xt);
            WeightedIndex::new(row.iter().map(|p| p.max(0.0)))
                .expect("rows are probability vectors")
                .sample(rng)
        })
        .collect()
}

/// Messages `z ~ Q(·|x)` for a batch of observations, from one stream.
pub fn sample_messages(q: &PrivacyMapping, xs: &[Vec<usize>], seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    xs.iter().map(|x| sample_message(q, x, &mut rng)).collect()
}

/// Decision `Ĥ ∈ {-1, +1}` for observation `x`; a zero score maps to `+1`.
pub fn predict_h(result: &SolveResult, x: &[usize], mode: PredictMode) -> i8 {
    match mode {
        PredictMode::Expected => sign(result.fusion.score(x, &result.q)),
        PredictMode::Sampled(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sign(result.fusion.message_score(&sample_message(&result.q, x, &mut rng)))
        }
    }
}

/// Decisions for a batch; sampled mode draws all messages from one stream.
pub fn predict_h_batch(result: &SolveResult, xs: &[Vec<usize>], mode: PredictMode) -> Vec<i8> {
    match mode {
        PredictMode::Expected => xs.iter().map(|x| predict_h(result, x, mode)).collect(),
        PredictMode::Sampled(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            xs.iter()
                .map(|x| sign(result.fusion.message_score(&sample_message(&result.q, x, &mut rng))))
                .collect()
        }
    }
}
