use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{MotionSequence, SkeletonTopology};
use crate::geometry::{wrap_rotation_vector, LieVector};

/// Frame rate assigned to generated sequences.
const SYNTH_FPS: f64 = 25.0;

/// Shape of generated motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthKind {
    /// One fixed pose repeated.
    Constant,
    /// Every entry's angle grows by `step` radians per frame.
    LinearSweep { step: f64 },
    /// Every entry oscillates about a base angle with a shared period (in frames)
    /// and its own phase.
    Sinusoid { period: f64 },
}

impl SynthKind {
    pub fn linear_sweep() -> Self {
        SynthKind::LinearSweep { step: 0.01 }
    }

    pub fn sinusoid() -> Self {
        SynthKind::Sinusoid { period: 22.5 }
    }
}

/// Generates rotation-vector motion for `topo`.
///
/// All entries of a chain rotate about one axis perpendicular to the chain's rest
/// direction, so each chain moves in a plane. That keeps every entry exactly the
/// minimal rotation between its two bones: converting the forward-kinematics pose
/// back to rotation vectors recovers the generated values.
pub fn synth_motion(kind: SynthKind, frames: usize, topo: &SkeletonTopology, seed: u64) -> MotionSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut axes = Vec::with_capacity(topo.entry_count());
    for chain in topo.chains() {
        let axis = plane_normal(chain.rest_direction().as_vector(), &mut rng);
        axes.extend(std::iter::repeat_n(axis, chain.entry_count()));
    }
    let k = axes.len();

    let out: Vec<LieVector> = match kind {
        SynthKind::Constant => {
            let angles: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let pose = LieVector::new(axes.iter().zip(&angles).map(|(a, th)| a * *th).collect());
            vec![pose; frames]
        }
        SynthKind::LinearSweep { step } => (0..frames)
            .map(|i| {
                let angle = step * i as f64;
                LieVector::new(axes.iter().map(|a| wrap_rotation_vector(a * angle)).collect())
            })
            .collect(),
        SynthKind::Sinusoid { period } => {
            let params: Vec<(f64, f64, f64)> = (0..k)
                .map(|_| {
                    let base = rng.random_range(-0.4..0.4);
                    let amplitude = rng.random_range(0.2..0.6);
                    let phase = rng.random_range(0.0..TAU);
                    (base, amplitude, phase)
                })
                .collect();
            (0..frames)
                .map(|i| {
                    let entries = axes
                        .iter()
                        .zip(&params)
                        .map(|(a, &(base, amp, phase))| a * (base + amp * (TAU * i as f64 / period + phase).sin()))
                        .collect();
                    LieVector::new(entries)
                })
                .collect()
        }
    };
    debug_assert!(out.iter().all(|f| f.max_angle() <= PI));
    MotionSequence::from_lie(SYNTH_FPS, out)
}

/// Random unit vector perpendicular to `dir`.
fn plane_normal(dir: &Vector3<f64>, rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v - dir * dir.dot(&v);
        let len = n.norm();
        if len > 0.1 {
            return n / len;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_norm_grows_linearly() {
        let seq = synth_motion(SynthKind::linear_sweep(), 50, &SkeletonTopology::human(), 1);
        for (i, f) in seq.lie_frames().unwrap().iter().enumerate() {
            for e in f.entries() {
                assert!((e.norm() - 0.01 * i as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_is_constant() {
        let seq = synth_motion(SynthKind::Constant, 5, &SkeletonTopology::tiny(), 2);
        let f = seq.lie_frames().unwrap();
        assert!(f.iter().all(|x| x == &f[0]));
        assert_eq!(f[0].len(), 4);
    }

    #[test]
    fn sinusoid_is_seeded_and_bounded() {
        let topo = SkeletonTopology::mouse();
        let a = synth_motion(SynthKind::sinusoid(), 200, &topo, 7);
        assert_eq!(a, synth_motion(SynthKind::sinusoid(), 200, &topo, 7));
        assert_ne!(a, synth_motion(SynthKind::sinusoid(), 200, &topo, 8));
        assert!(a.lie_frames().unwrap().iter().all(|f| f.max_angle() < 1.0));
    }
}
