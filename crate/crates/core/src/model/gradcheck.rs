//! Central finite-difference comparison for the hand-written gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::network::Batch;
use super::params::{standard_normal, Parameters, TensorRole};

/// Vocabulary 11, width 8, two heads, feed-forward 16, eight positions.
pub fn micro_config(layers: usize, num_labels: usize) -> ModelConfig {
    ModelConfig {
        enc_layers: layers,
        dec_layers: layers,
        d_model: 8,
        heads: 2,
        d_ff: 16,
        max_positions: 8,
        vocab_size: 11,
        dropout: 0.0,
        final_layer_norm: true,
        num_labels,
    }
}

/// Two rows of unequal length so that padding and masks are exercised.
pub fn micro_batch() -> Batch {
    Batch::from_rows(&[
        (vec![5, 6, 7, 8, 9], vec![10, 5, 6, 7], vec![5, 6, 7, 2]),
        (vec![7, 4, 9], vec![10, 8, 3], vec![8, 3, 2]),
    ])
}

/// Weights at 20 times the training scale and perturbed gains and biases,
/// so that every path carries signal and no gradient is trivially small.
pub fn probe_parameters(config: &ModelConfig, seed: u64) -> Parameters<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Parameters::<f64>::init(config, &mut rng);
    p.for_each_mut(|_, role, t| {
        for v in t.data.iter_mut() {
            if role == TensorRole::Weight {
                *v *= 20.0;
            } else {
                *v += 0.1 * standard_normal(&mut rng);
            }
        }
    });
    p
}

/// Below this combined norm both gradients are round-off around zero.
pub const ZERO_NORM: f64 = 1e-8;

/// Per-tensor relative error `‖a − n‖ / (‖a‖ + ‖n‖)` between `analytic` and
/// central differences of `loss` with step `step`, worst tensor first.
///
/// A tensor whose combined norm is under [`ZERO_NORM`] agrees by
/// definition: the attention key bias has an exactly zero gradient (softmax
/// is shift invariant), and the ratio of two round-off vectors carries no
/// signal.
pub fn relative_errors(
    params: &Parameters<f64>,
    analytic: &Parameters<f64>,
    step: f64,
    loss: impl Fn(&Parameters<f64>) -> f64,
) -> Vec<(String, f64)> {
    let mut work = params.clone();
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _, _)| n).collect();
    let analytic: Vec<Vec<f64>> = analytic.tensors().into_iter().map(|(_, _, t)| t.data.clone()).collect();
    let mut out = Vec::new();
    for (ti, name) in names.iter().enumerate() {
        let len = analytic[ti].len();
        let mut numeric = vec![0.0; len];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = work.tensors()[ti].2.data[j];
            work.tensors_mut()[ti].2.data[j] = orig + step;
            let plus = loss(&work);
            work.tensors_mut()[ti].2.data[j] = orig - step;
            let minus = loss(&work);
            work.tensors_mut()[ti].2.data[j] = orig;
            *slot = (plus - minus) / (2.0 * step);
        }
        let diff = analytic[ti]
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale =
            analytic[ti].iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        let rel = if scale < ZERO_NORM { 0.0 } else { diff / scale };
        out.push((name.clone(), rel));
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    out
}
