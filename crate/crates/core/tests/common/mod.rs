#![allow(dead_code)]

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sthrn::autodiff::Tensor;
use sthrn::geometry::LieVector;
use sthrn::model::{ModelConfig, ModelParams};

pub fn config(layout: &str, hidden: usize, layers: usize) -> ModelConfig {
    let mut c = ModelConfig::new(layout.parse().unwrap());
    c.encoder.hidden = hidden;
    c.encoder.layers = layers;
    c
}

/// Every parameter, biases included, uniform in [-0.5, 0.5).
pub fn random_params(cfg: &ModelConfig, seed: u64) -> ModelParams<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = ModelParams::shapes(cfg);
    let leaves: Vec<Tensor> = shapes
        .named()
        .into_iter()
        .map(|(_, s)| {
            let n = s.iter().product();
            Tensor::new(s.clone(), (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap()
        })
        .collect();
    shapes.with_leaves(&leaves).unwrap()
}

pub fn random_frames(frames: usize, k: usize, seed: u64) -> Vec<LieVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..frames)
        .map(|_| {
            LieVector::new(
                (0..k)
                    .map(|_| {
                        Vector3::new(
                            rng.random_range(-1.0..1.0),
                            rng.random_range(-1.0..1.0),
                            rng.random_range(-1.0..1.0),
                        )
                    })
                    .collect(),
            )
        })
        .collect()
}

pub fn plain(frames: &[LieVector]) -> Vec<Vec<[f64; 3]>> {
    frames.iter().map(|f| f.entries().iter().map(|v| [v.x, v.y, v.z]).collect()).collect()
}

/// Gradient check of the full encode -> decode loss on the small reference
/// configuration: two three-bone chains (K = 4), hidden 6, two layers, five
/// encoder frames, horizon 3, batch 2, step 1e-5.
pub fn tiny_gradient_check(
    adjust: impl Fn(&mut ModelConfig),
    kind: sthrn::training::LossKind,
) -> sthrn::autodiff::GradCheckReport {
    use sthrn::skeleton::{sample_windows, synth_motion, SkeletonTopology, SynthKind};

    let topo = SkeletonTopology::tiny();
    let mut cfg = ModelConfig::new(topo.layout());
    cfg.encoder.hidden = 6;
    cfg.encoder.layers = 2;
    adjust(&mut cfg);
    let params = ModelParams::init(&cfg, 0.1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let seq = synth_motion(SynthKind::sinusoid(), 40, &topo, 7);
    let windows = sample_windows(&seq, 6, 3, 2, 11).unwrap();
    let lengths = topo.entry_lengths();
    let leaves: Vec<Tensor> = params.named().into_iter().map(|(_, t)| t.clone()).collect();
    sthrn::autodiff::grad_check(
        |tape, vars| -> Result<_, sthrn::model::ModelError> {
            let p = params.with_leaves(vars)?;
            sthrn::training::window_loss(tape, &p, &cfg, &windows, kind, &lengths, false)
        },
        &leaves,
        1e-5,
    )
    .unwrap()
}
