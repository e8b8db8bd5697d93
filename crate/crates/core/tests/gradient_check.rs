//! Analytic gradients of the rate-distortion loss through the whole chain
//! against central finite differences, in double precision.

use mdvsc_core::model::{CodecConfig, ModelState};
use mdvsc_core::network::Net;
use mdvsc_core::training::{build_loss, StepNoise};
use mdvsc_core::video::{Frame, Gop};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn tiny_config(use_cfe: bool) -> CodecConfig {
    CodecConfig {
        channel_width: 8,
        jscc_blocks: 1,
        residual_per_block: 1,
        hyper_width: 8,
        hyper_stages: 1,
        use_cfe,
        ..CodecConfig::default()
    }
}

fn random_gop(rng: &mut ChaCha8Rng, id: u32) -> Gop {
    let frames = (0..2)
        .map(|i| Frame::new(8, 8, 3, (0..192).map(|_| rng.random::<f32>()).collect(), i).unwrap())
        .collect();
    Gop::new(frames, id).unwrap()
}

fn loss_at(state: &ModelState, values: &[Vec<f64>], batch: &[Gop], noise: &StepNoise<f64>) -> f64 {
    build_loss(Net::with_values(state, values), batch, 0.5, noise).unwrap().terms().loss
}

/// Worst relative error over `per_param` sampled elements of every parameter,
/// and the fraction of sampled gradients above 1e-6 in magnitude.
fn worst_relative_error(use_cfe: bool, seed: u64, per_param: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state = ModelState::init(tiny_config(use_cfe), seed).unwrap();
    let jitter = Normal::new(0.0, 0.05).unwrap();
    let values: Vec<Vec<f64>> = state
        .params()
        .iter()
        .map(|p| p.data.iter().map(|&v| v as f64 + jitter.sample(&mut rng)).collect())
        .collect();
    let batch = [random_gop(&mut rng, 0), random_gop(&mut rng, 1)];
    let noise = StepNoise::<f64>::draw(&mut rng, &state.config, 2, 2, (8, 8), 10.0);

    let g = build_loss(Net::with_values(&state, &values), &batch, 0.5, &noise).unwrap();
    let grads = g.net.graph.backward(g.loss);
    let analytic: Vec<Vec<f64>> = g
        .net
        .bound_params()
        .iter()
        .zip(state.params())
        .map(|(v, p)| match v.and_then(|v| grads.get(v)) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; p.data.len()],
        })
        .collect();

    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    let (mut live, mut total) = (0, 0);
    for (pi, p) in state.params().iter().enumerate() {
        for _ in 0..per_param {
            let k = rng.random_range(0..p.data.len());
            let mut plus = values.clone();
            plus[pi][k] += eps;
            let mut minus = values.clone();
            minus[pi][k] -= eps;
            let numeric = (loss_at(&state, &plus, &batch, &noise) - loss_at(&state, &minus, &batch, &noise)) / (2.0 * eps);
            let a = analytic[pi][k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(rel <= 1e-3, "{}[{k}]: analytic {a:e}, numeric {numeric:e}", p.name);
            worst = worst.max(rel);
            total += 1;
            live += usize::from(a.abs() > 1e-6);
        }
    }
    (worst, live as f64 / total as f64)
}

#[test]
fn full_chain_gradients_match_central_differences() {
    let (worst, live) = worst_relative_error(true, 11, 3);
    assert!(worst <= 1e-3);
    assert!(live > 0.8, "only {live} of sampled gradients are non-negligible");
}

#[test]
fn gradients_without_the_common_extractor_match_too() {
    let (worst, live) = worst_relative_error(false, 12, 2);
    assert!(worst <= 1e-3);
    assert!(live > 0.8, "only {live} of sampled gradients are non-negligible");
}
