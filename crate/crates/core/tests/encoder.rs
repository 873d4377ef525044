mod common;
mod oracle;

use common::{config, plain, random_frames, random_params};
use nalgebra::Vector3;
use oracle::{max_diff, Oracle};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sthrn::autodiff::Tensor;
use sthrn::decoder::Model;
use sthrn::encoder::EncoderState;
use sthrn::model::{gate, ModelParams};

fn flat(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

fn assert_matches(state: &EncoderState, o: &oracle::Enc, tol: f64) {
    let f = state.frames();
    let k = state.entries();
    for i in 0..f {
        for j in 0..k {
            assert!(max_diff(state.h_at(i, j), &o.h[i][j]) < tol, "h({i},{j})");
            assert!(max_diff(state.c_at(i, j), &o.c[i][j]) < tol, "c({i},{j})");
        }
    }
    assert!(max_diff(state.g_t.data(), &flat(&o.g_t)) < tol, "g_t");
    assert!(max_diff(state.c_gt.data(), &flat(&o.c_gt)) < tol, "c_gt");
    assert!(max_diff(state.g_s.data(), &flat(&o.g_s)) < tol, "g_s");
    assert!(max_diff(state.c_gs.data(), &flat(&o.c_gs)) < tol, "c_gs");
}

#[test]
fn zero_embedding_gives_zero_states() {
    let cfg = config("arm:2,leg:2", 6, 2);
    let model = Model::new(cfg.clone(), ModelParams::zeros(&cfg)).unwrap();
    let s = model.encoder().init_states(&random_frames(5, 4, 1)).unwrap();
    for t in [&s.h, &s.c, &s.g_t, &s.c_gt, &s.g_s, &s.c_gs] {
        assert!(t.data().iter().all(|&x| x == 0.0));
    }
}

#[test]
fn initial_global_states_are_means_of_embeddings() {
    let cfg = config("spine:2,arm:1,leg:3", 5, 1);
    let params = random_params(&cfg, 2);
    let model = Model::new(cfg.clone(), params.clone()).unwrap();
    let frames = random_frames(4, 6, 3);
    let s = model.encoder().init_states(&frames).unwrap();
    assert_matches(&s, &Oracle::new(&params, &cfg).embed(&plain(&frames)), 1e-12);

    // One frame: its spatial state is the mean of its own embeddings.
    let one = model.encoder().init_states(&frames[..1]).unwrap();
    let mut mean = vec![0.0; 5];
    for j in 0..6 {
        for (m, x) in mean.iter_mut().zip(one.h_at(0, j)) {
            *m += x / 6.0;
        }
    }
    assert!(max_diff(one.g_s.data(), &mean) < 1e-15);
}

#[test]
fn zero_parameters_and_zero_cells_give_zero_cell() {
    let cfg = config("arm:2,leg:2", 6, 1);
    let model = Model::new(cfg.clone(), ModelParams::zeros(&cfg)).unwrap();
    let frames = random_frames(3, 4, 4);
    let prev = model.encoder().init_states(&frames).unwrap();
    let (h, c) = model.encoder().local_cell_step(&prev, &frames, 1, 1).unwrap();
    assert!(h.iter().chain(&c).all(|&x| x == 0.0));
}

#[test]
fn zero_parameters_halve_six_equal_incoming_cells() {
    let cfg = config("arm:2,leg:2", 6, 1);
    let model = Model::new(cfg.clone(), ModelParams::zeros(&cfg)).unwrap();
    let frames = random_frames(3, 4, 5);
    let mut prev = model.encoder().init_states(&frames).unwrap();
    let c0 = [0.3, -0.2, 0.7, 0.1, -0.5, 0.05];
    for t in [&mut prev.c, &mut prev.c_gt, &mut prev.c_gs] {
        for row in 0..t.rows() {
            t.data_mut()[row * 6..(row + 1) * 6].copy_from_slice(&c0);
        }
    }
    // Cell (1, 1) has all six neighbours inside the grid.
    let (h, c) = model.encoder().local_cell_step(&prev, &frames, 1, 1).unwrap();
    for d in 0..6 {
        assert!((c[d] - 3.0 * c0[d]).abs() < 1e-15);
        assert!((h[d] - 0.5 * (3.0 * c0[d]).tanh()).abs() < 1e-15);
    }
}

#[test]
fn local_step_matches_reference_everywhere() {
    let cfg = config("spine:2,arm:2,leg:1", 4, 1);
    let params = random_params(&cfg, 6);
    let model = Model::new(cfg.clone(), params.clone()).unwrap();
    let frames = random_frames(4, 5, 7);
    let o = Oracle::new(&params, &cfg);
    // Perturbed layer-0 states so every input channel carries something distinct.
    let prev = model.encoder().encode(&frames).unwrap();
    let mut po = o.embed(&plain(&frames));
    po = o.layer(&po, &plain(&frames));
    for i in 0..4 {
        for j in 0..5 {
            let (h, c) = model.encoder().local_cell_step(&prev, &frames, i, j).unwrap();
            let (he, ce) = o.cell(&po, &plain(&frames), i, j);
            assert!(max_diff(&h, &he) < 1e-12 && max_diff(&c, &ce) < 1e-12, "cell ({i},{j})");
        }
    }
}

#[test]
fn global_steps_with_zero_parameters() {
    // Temporal: four frames of c0 and half of the previous state.
    let cfg = config("spine:1", 3, 1);
    let model = Model::new(cfg.clone(), ModelParams::zeros(&cfg)).unwrap();
    let frames = random_frames(4, 1, 8);
    let mut prev = model.encoder().init_states(&frames).unwrap();
    let zeros = Tensor::zeros(&[4, 3]);
    let (g, c) = model.encoder().global_temporal_step(&prev, &zeros, &zeros).unwrap();
    assert!(g.data().iter().chain(c.data()).all(|&x| x == 0.0));

    let c0 = [0.2, -0.4, 0.9];
    let prev_c = [0.6, 0.1, -0.3];
    prev.c_gt.data_mut().copy_from_slice(&prev_c);
    let cells = Tensor::new(vec![4, 3], c0.repeat(4)).unwrap();
    let (g, c) = model.encoder().global_temporal_step(&prev, &zeros, &cells).unwrap();
    for d in 0..3 {
        let expect = 2.0 * c0[d] + 0.5 * prev_c[d];
        assert!((c.data()[d] - expect).abs() < 1e-15);
        assert!((g.data()[d] - 0.5 * expect.tanh()).abs() < 1e-15);
    }

    // Spatial: six entries of c0 in one frame.
    let cfg = config("arm:3,leg:3", 3, 1);
    let model = Model::new(cfg.clone(), ModelParams::zeros(&cfg)).unwrap();
    let frames = random_frames(1, 6, 9);
    let mut prev = model.encoder().init_states(&frames).unwrap();
    prev.c_gs.data_mut().copy_from_slice(&prev_c);
    let zeros = Tensor::zeros(&[6, 3]);
    let cells = Tensor::new(vec![6, 3], c0.repeat(6)).unwrap();
    let (_, c) = model.encoder().global_spatial_step(&prev, &zeros, &cells).unwrap();
    for d in 0..3 {
        assert!((c.data()[d] - (3.0 * c0[d] + 0.5 * prev_c[d])).abs() < 1e-15);
    }
}

#[test]
fn global_steps_match_reference() {
    let cfg = config("spine:2,arm:2,leg:1", 4, 1);
    let params = random_params(&cfg, 10);
    let model = Model::new(cfg.clone(), params.clone()).unwrap();
    let frames = random_frames(3, 5, 11);
    let o = Oracle::new(&params, &cfg);
    let prev = model.encoder().init_states(&frames).unwrap();
    let po = o.embed(&plain(&frames));
    let next = o.layer(&po, &plain(&frames));
    let h = Tensor::new(vec![15, 4], next.h.iter().flatten().flatten().copied().collect()).unwrap();
    let c = Tensor::new(vec![15, 4], next.c.iter().flatten().flatten().copied().collect()).unwrap();
    let (g_t, c_gt) = model.encoder().global_temporal_step(&prev, &h, &c).unwrap();
    let (g_s, c_gs) = model.encoder().global_spatial_step(&prev, &h, &c).unwrap();
    assert!(max_diff(g_t.data(), &flat(&next.g_t)) < 1e-12);
    assert!(max_diff(c_gt.data(), &flat(&next.c_gt)) < 1e-12);
    assert!(max_diff(g_s.data(), &flat(&next.g_s)) < 1e-12);
    assert!(max_diff(c_gs.data(), &flat(&next.c_gs)) < 1e-12);
}

#[test]
fn full_encode_matches_reference_with_and_without_ablations() {
    for (gt, gs) in [(false, false), (true, false), (false, true), (true, true)] {
        let mut cfg = config("spine:2,arm:1,arm:1,leg:2", 4, 3);
        cfg.encoder.disable_global_temporal = gt;
        cfg.encoder.disable_global_spatial = gs;
        let params = random_params(&cfg, 12);
        let model = Model::new(cfg.clone(), params.clone()).unwrap();
        let frames = random_frames(5, 6, 13);
        let s = model.encoder().encode(&frames).unwrap();
        assert_matches(&s, &Oracle::new(&params, &cfg).encode(&plain(&frames)), 1e-12);
    }
}

#[test]
fn single_cell_grid_is_one_local_step_plus_global_steps() {
    let cfg = config("spine:1", 3, 1);
    let params = random_params(&cfg, 14);
    let model = Model::new(cfg.clone(), params).unwrap();
    let frames = random_frames(1, 1, 15);
    let enc = model.encoder();
    let init = enc.init_states(&frames).unwrap();
    let (h, c) = enc.local_cell_step(&init, &frames, 0, 0).unwrap();
    let (h, c) = (Tensor::row(h), Tensor::row(c));
    let (g_t, c_gt) = enc.global_temporal_step(&init, &h, &c).unwrap();
    let (g_s, c_gs) = enc.global_spatial_step(&init, &h, &c).unwrap();
    let full = enc.encode(&frames).unwrap();
    assert_eq!((&full.h, &full.c), (&h, &c));
    assert_eq!((&full.g_t, &full.c_gt, &full.g_s, &full.c_gs), (&g_t, &c_gt, &g_s, &c_gs));
}

/// Zeroes the weights feeding gate block `g` from `name` and pins its bias far
/// negative, so the gate is exactly closed.
fn close_gate(params: &mut ModelParams<Tensor>, g: usize, inputs: &[&str], hidden: usize) {
    let cols = g * hidden..(g + 1) * hidden;
    params.encoder.cell.bias.data_mut()[cols].iter_mut().for_each(|x| *x = -1e3);
    for name in inputs {
        let t = match *name {
            "global_spatial" => &mut params.encoder.cell.global_spatial,
            "spatial" => &mut params.encoder.cell.spatial,
            _ => unreachable!(),
        };
        t.data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
}

#[test]
fn closed_global_spatial_channel_equals_ablation() {
    let cfg = config("spine:2,arm:2,leg:2", 4, 3);
    let mut params = random_params(&cfg, 16);
    close_gate(&mut params, gate::GLOBAL_SPATIAL, &["global_spatial"], 4);
    let mut ablated = cfg.clone();
    ablated.encoder.disable_global_spatial = true;
    let frames = random_frames(4, 6, 17);
    let a = Model::new(cfg, params.clone()).unwrap().encoder().encode(&frames).unwrap();
    let b = Model::new(ablated, params).unwrap().encoder().encode(&frames).unwrap();
    assert_eq!((&a.h, &a.c, &a.g_t, &a.c_gt), (&b.h, &b.c, &b.g_t, &b.c_gt));
}

#[test]
fn entry_rows_are_independent_without_cross_entry_channels() {
    let mut cfg = config("arm:3,leg:2", 4, 3);
    cfg.encoder.disable_global_temporal = true;
    cfg.encoder.disable_global_spatial = true;
    let mut params = random_params(&cfg, 18);
    close_gate(&mut params, gate::SPATIAL, &["spatial"], 4);
    let model = Model::new(cfg, params).unwrap();
    let frames = random_frames(4, 5, 19);
    let base = model.encoder().encode(&frames).unwrap();
    let mut moved = frames.clone();
    for f in &mut moved {
        f.entries_mut()[3] += Vector3::new(0.4, -0.2, 0.3);
    }
    let other = model.encoder().encode(&moved).unwrap();
    for i in 0..4 {
        for j in [0, 1, 2, 4] {
            assert_eq!(base.h_at(i, j), other.h_at(i, j), "({i},{j})");
        }
        assert_ne!(base.h_at(i, 3), other.h_at(i, 3));
    }
}

#[test]
fn parameter_count_does_not_depend_on_depth() {
    let a = config("spine:4,arm:2,arm:2,leg:2,leg:2", 20, 10);
    let b = config("spine:4,arm:2,arm:2,leg:2,leg:2", 20, 1);
    assert_eq!(ModelParams::zeros(&a).parameter_count(), ModelParams::zeros(&b).parameter_count());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn visitation_order_does_not_change_output(seed in 0u64..1000, frames in 1usize..5) {
        let cfg = config("spine:2,arm:2,leg:1", 3, 2);
        let model = Model::new(cfg.clone(), random_params(&cfg, seed)).unwrap();
        let input = random_frames(frames, 5, seed + 1);
        let mut order: Vec<usize> = (0..frames * 5).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + 2));
        let a = model.encoder().encode(&input).unwrap();
        let b = model.encoder().encode_in_order(&input, Some(&order)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn states_stay_in_the_unit_box(seed in 0u64..1000) {
        let cfg = config("arm:2,leg:2", 4, 3);
        let model = Model::new(cfg.clone(), random_params(&cfg, seed)).unwrap();
        let s = model.encoder().encode(&random_frames(3, 4, seed + 3)).unwrap();
        for t in [&s.h, &s.g_t, &s.g_s] {
            prop_assert!(t.data().iter().all(|x| x.abs() <= 1.0));
        }
    }
}
