#![allow(dead_code)]

use icr::policy::{
    policy_backward, policy_forward, value_backward, value_forward, PolicyParameters, Tensors,
    Upstream, ValueParameters,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// |a − n| relative to the larger magnitude, with a floor for near-zero entries.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

fn random_state(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Largest relative error between backprop and central differences for
/// `L = Σ c_k π_k(s)` on a random network and state.
pub fn policy_gradient_error(seed: u64, d_state: usize, hidden: usize, vocab: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = PolicyParameters::init(d_state, hidden, vocab, &mut rng);
    let state = random_state(&mut rng, d_state);
    let coeffs: Vec<f64> = (0..vocab).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = |p: &PolicyParameters| {
        let (probs, _) = policy_forward(&state, p).unwrap();
        probs.iter().zip(&coeffs).map(|(a, b)| a * b).sum::<f64>()
    };
    let (_, cache) = policy_forward(&state, &params).unwrap();
    let grads = policy_backward(&cache, &params, Upstream::Probs(&coeffs)).unwrap();
    let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.iter().copied()).collect();

    let mut worst: f64 = 0.0;
    let mut flat = 0;
    let n_tensors = params.tensors().len();
    for t in 0..n_tensors {
        let len = params.tensors()[t].len();
        for i in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[t][i] += FD_STEP;
            let mut minus = params.clone();
            minus.tensors_mut()[t][i] -= FD_STEP;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[flat], numeric));
            flat += 1;
        }
    }
    worst
}

/// Same check for the value network with `L = V(s)`.
pub fn value_gradient_error(seed: u64, d_state: usize, hidden: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let params = ValueParameters::init(d_state, hidden, &mut rng);
    let state = random_state(&mut rng, d_state);
    let loss = |p: &ValueParameters| value_forward(&state, p).unwrap().0;
    let (_, cache) = value_forward(&state, &params).unwrap();
    let grads = value_backward(&cache, &params, 1.0).unwrap();
    let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.iter().copied()).collect();

    let mut worst: f64 = 0.0;
    let mut flat = 0;
    for t in 0..params.tensors().len() {
        for i in 0..params.tensors()[t].len() {
            let mut plus = params.clone();
            plus.tensors_mut()[t][i] += FD_STEP;
            let mut minus = params.clone();
            minus.tensors_mut()[t][i] -= FD_STEP;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[flat], numeric));
            flat += 1;
        }
    }
    worst
}
