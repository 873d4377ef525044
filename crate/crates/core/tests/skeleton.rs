use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use sthrn::geometry::{lie_to_pose, LieVector, RootConfig};
use sthrn::skeleton::{
    normalize_lengths, resample_fps, sample_windows, synth_motion, window_offsets, ChainRole, MotionFormat,
    MotionSequence, SkeletonError, SkeletonTopology, SynthKind,
};

const ELBOW: &str = "[joints]\na\nb\nc\n[chains]\narm: a b c\n[rest]\na b 1 0 0\n";

#[test]
fn minimal_topology_has_no_entries() {
    let t = SkeletonTopology::parse("# toy\n[joints]\na\nb\n[chains]\nspine: a b\n").unwrap();
    assert_eq!(t.chains().len(), 1);
    assert_eq!(t.bone_count(), 1);
    assert_eq!(t.entry_count(), 0);
}

#[test]
fn shipped_human_topology() {
    let t = SkeletonTopology::human();
    assert_eq!(t.chains().len(), 5);
    assert_eq!(t.bone_count(), 17);
    assert_eq!(t.entry_count(), 12);
    let bones: Vec<usize> = t.chains().iter().map(|c| c.bone_count()).collect();
    assert_eq!(bones.iter().sum::<usize>(), 17);
    assert_eq!(t.layout().entry_count(), 12);
    assert_eq!(t.chains()[0].role(), ChainRole::Spine);
    assert_eq!(SkeletonTopology::parse(&t.to_text()).unwrap(), t);
}

#[test]
fn bundled_topologies_parse() {
    assert_eq!(SkeletonTopology::tiny().entry_count(), 4);
    assert_eq!(SkeletonTopology::single_chain().entry_count(), 3);
    assert!(SkeletonTopology::mouse().entry_count() > 0);
}

#[test]
fn zero_length_bone_is_rejected() {
    let text = format!("{ELBOW}[lengths]\na b 1.0\nb c 0\n");
    assert!(matches!(SkeletonTopology::parse(&text), Err(SkeletonError::Validation(_))));
}

#[test]
fn malformed_topologies_are_rejected() {
    for text in [
        "[joints]\na\nb\n[chains]\nspine: a x\n",
        "[joints]\na\nb\nc\nd\n[chains]\nspine: a b\narm: c d\n",
        "[joints]\na\na\n[chains]\nspine: a a\n",
        "[joints]\na\nb\n[chains]\ntail: a b\n",
        "[bogus]\n",
    ] {
        assert!(SkeletonTopology::parse(text).is_err(), "{text:?}");
    }
    match SkeletonTopology::parse("[joints]\na\nb\n[chains]\nspine: a b\n[lengths]\na b x\n") {
        Err(SkeletonError::Parse { line, .. }) => assert_eq!(line, 7),
        other => panic!("{other:?}"),
    }
}

fn elbow_frames(lengths: &[(f64, f64)]) -> MotionSequence {
    let frames = lengths
        .iter()
        .map(|&(a, b)| vec![Vector3::zeros(), Vector3::new(a, 0.0, 0.0), Vector3::new(a, b, 0.0)])
        .collect();
    MotionSequence::from_joints(50.0, frames)
}

#[test]
fn normalized_lengths_are_means() {
    let topo = SkeletonTopology::parse(ELBOW).unwrap();
    let t = normalize_lengths(&[elbow_frames(&[(2.0, 2.0), (2.0, 2.0)])], &topo).unwrap();
    assert_eq!(t.chains()[0].lengths(), &[2.0, 2.0]);
    let t = normalize_lengths(&[elbow_frames(&[(1.0, 0.5), (3.0, 1.5)])], &topo).unwrap();
    assert_eq!(t.chains()[0].lengths(), &[2.0, 1.0]);
    assert_eq!(normalize_lengths(&[], &topo), Err(SkeletonError::EmptyInput));
}

#[test]
fn normalized_lengths_match_direct_mean_on_jittered_poses() {
    let topo = SkeletonTopology::human();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let root = RootConfig::rest(&topo);
    let seqs: Vec<MotionSequence> = (0..3)
        .map(|_| {
            let frames = (0..20)
                .map(|_| {
                    let pose = lie_to_pose(&LieVector::zeros(12), &topo, &root).unwrap();
                    pose.into_iter()
                        .map(|p| p + Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), 0.0))
                        .collect()
                })
                .collect();
            MotionSequence::from_joints(25.0, frames)
        })
        .collect();
    let got = normalize_lengths(&seqs, &topo).unwrap();
    let bones = topo.bones();
    let mut expect = vec![0.0; bones.len()];
    let mut n = 0.0;
    for s in &seqs {
        for f in s.joint_frames().unwrap() {
            n += 1.0;
            for (e, &(a, b)) in expect.iter_mut().zip(&bones) {
                *e += (f[b] - f[a]).norm();
            }
        }
    }
    let lengths: Vec<f64> = got.chains().iter().flat_map(|c| c.lengths().to_vec()).collect();
    for (l, e) in lengths.iter().zip(&expect) {
        assert!((l - e / n).abs() < 1e-12);
    }
    let reversed: Vec<MotionSequence> = seqs.iter().rev().cloned().collect();
    assert_eq!(normalize_lengths(&reversed, &topo).unwrap(), got);
}

fn numbered(fps: f64, frames: usize) -> MotionSequence {
    MotionSequence::from_lie(fps, (0..frames).map(|i| LieVector::new(vec![Vector3::new(i as f64, 0.0, 0.0)])).collect())
}

fn first_values(seq: &MotionSequence) -> Vec<f64> {
    seq.lie_frames().unwrap().iter().map(|f| f.entries()[0].x).collect()
}

#[test]
fn resampling_by_integer_stride() {
    let half = resample_fps(&numbered(50.0, 100), 25.0).unwrap();
    assert_eq!((half.fps, half.len()), (25.0, 50));
    let same = resample_fps(&numbered(25.0, 30), 25.0).unwrap();
    assert_eq!(same, numbered(25.0, 30));
    let quarter = resample_fps(&numbered(100.0, 10), 25.0).unwrap();
    assert_eq!(first_values(&quarter), vec![0.0, 4.0, 8.0]);
    assert!(matches!(resample_fps(&numbered(10.0, 5), 25.0), Err(SkeletonError::UnsupportedRate { .. })));
}

#[test]
fn exact_length_sequence_has_one_window() {
    let seq = numbered(25.0, 60);
    for w in sample_windows(&seq, 50, 10, 20, 9).unwrap() {
        assert_eq!(w.start, 0);
        assert_eq!(w.observed.len(), 50);
        assert_eq!(
            first_values(&MotionSequence::from_lie(25.0, w.target)),
            (50..60).map(f64::from).collect::<Vec<_>>()
        );
    }
    assert_eq!(
        sample_windows(&numbered(25.0, 59), 50, 10, 1, 0),
        Err(SkeletonError::SequenceTooShort { len: 59, needed: 60 })
    );
}

#[test]
fn window_sampling_is_seeded() {
    let seq = numbered(25.0, 200);
    assert_eq!(sample_windows(&seq, 50, 10, 30, 4).unwrap(), sample_windows(&seq, 50, 10, 30, 4).unwrap());
    assert_ne!(sample_windows(&seq, 50, 10, 30, 4).unwrap(), sample_windows(&seq, 50, 10, 30, 5).unwrap());
}

#[test]
fn window_offsets_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let offsets = window_offsets(200, 50, 10, 1000, &mut rng).unwrap();
    let mut counts = [0usize; 141];
    for o in offsets {
        counts[o] += 1;
    }
    let expected = 1000.0 / 141.0;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new(140.0).unwrap().inverse_cdf(0.99);
    assert!(stat < critical, "chi-square {stat} >= {critical}");
}

#[test]
fn constant_synthesis_repeats_one_pose() {
    let seq = synth_motion(SynthKind::Constant, 30, &SkeletonTopology::human(), 2);
    let f = seq.lie_frames().unwrap();
    assert!(f.iter().all(|x| x == &f[0]));
}

#[test]
fn sweep_synthesis_grows_by_the_step() {
    let seq = synth_motion(SynthKind::linear_sweep(), 300, &SkeletonTopology::tiny(), 8);
    for (i, f) in seq.lie_frames().unwrap().iter().enumerate() {
        let expect = 0.01 * i as f64;
        if expect < std::f64::consts::PI {
            for e in f.entries() {
                assert!((e.norm() - expect).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn joint_file_of_synthetic_motion_recovers_the_generator() {
    let topo = SkeletonTopology::human();
    let seq = synth_motion(SynthKind::sinusoid(), 40, &topo, 11);
    let root = RootConfig::rest(&topo);
    let joints = seq.lie_frames().unwrap().iter().map(|w| lie_to_pose(w, &topo, &root).unwrap()).collect();
    let csv = MotionSequence::from_joints(seq.fps, joints).to_csv();
    let loaded = MotionSequence::parse(&csv, MotionFormat::CsvJoints, Some(&topo)).unwrap();
    assert_eq!(loaded.len(), 40);
    let lie = loaded.to_lie(&topo).unwrap();
    for (a, b) in lie.lie_frames().unwrap().iter().zip(seq.lie_frames().unwrap()) {
        for (x, y) in a.entries().iter().zip(b.entries()) {
            assert!((x - y).norm() < 1e-9);
        }
    }
}

#[test]
fn csv_roundtrips_are_exact() {
    let topo = SkeletonTopology::tiny();
    let lie = synth_motion(SynthKind::sinusoid(), 12, &topo, 5).with_labels("s1", "walking");
    let back = MotionSequence::parse(&lie.to_csv(), MotionFormat::CsvLie, None).unwrap();
    assert_eq!(back, lie);

    let root = RootConfig::rest(&topo);
    let joints = MotionSequence::from_joints(
        50.0,
        lie.lie_frames().unwrap().iter().map(|w| lie_to_pose(w, &topo, &root).unwrap()).collect(),
    );
    let back = MotionSequence::parse(&joints.to_csv(), MotionFormat::CsvJoints, Some(&topo)).unwrap();
    assert_eq!(back, joints);
}

#[test]
fn two_frame_joint_file() {
    let topo = SkeletonTopology::parse(ELBOW).unwrap();
    let csv = "fps=50\n0,0,0,1,0,0,1,1,0\n0,0,0,1,0,0,2,0,0\n";
    let seq = MotionSequence::parse(csv, MotionFormat::CsvJoints, Some(&topo)).unwrap();
    assert_eq!((seq.fps, seq.len()), (50.0, 2));
    let bad = "fps=50\n0,0,0,1,0,0\n";
    assert!(MotionSequence::parse(bad, MotionFormat::CsvJoints, Some(&topo)).is_err());
}

#[test]
fn save_and_load_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seq.csv");
    let seq = synth_motion(SynthKind::linear_sweep(), 9, &SkeletonTopology::human(), 1);
    seq.save(&path).unwrap();
    assert_eq!(MotionSequence::load(&path, MotionFormat::CsvLie, None).unwrap(), seq);
    assert!(matches!(
        MotionSequence::load(dir.path().join("missing.csv"), MotionFormat::CsvLie, None),
        Err(SkeletonError::Io { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn synthetic_frames_stay_in_the_ball(seed in 0u64..10_000, kind in 0usize..3) {
        let kind = [SynthKind::Constant, SynthKind::linear_sweep(), SynthKind::sinusoid()][kind];
        let seq = synth_motion(kind, 400, &SkeletonTopology::human(), seed);
        for f in seq.lie_frames().unwrap() {
            prop_assert!(f.max_angle() <= std::f64::consts::PI);
        }
    }

    #[test]
    fn lie_csv_roundtrip(values in proptest::collection::vec(-3.0f64..3.0, 6..=6), fps in 1.0f64..200.0) {
        let seq = MotionSequence::from_lie(fps, vec![LieVector::from_flat(&values).unwrap(); 2]);
        prop_assert_eq!(MotionSequence::parse(&seq.to_csv(), MotionFormat::CsvLie, None).unwrap(), seq);
    }
}
