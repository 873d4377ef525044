use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sthrn::autodiff::{grad_check, relative_error, AutodiffError, Tape, Tensor, Var, RELATIVE_FLOOR};

fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.get(i, p) * b.get(p, j);
            }
        }
    }
    out
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (m, k, n) in [(4, 4, 4), (1, 7, 3), (5, 2, 6)] {
        let (a, b) = (random(m, k, &mut rng), random(k, n, &mut rng));
        let mut tape = Tape::new();
        let (va, vb) = (tape.leaf(a.clone()), tape.leaf(b.clone()));
        let c = tape.matmul(va, vb).unwrap();
        assert_eq!(tape.value(c).shape(), &[m, n]);
        for (x, y) in tape.value(c).data().iter().zip(naive_matmul(&a, &b)) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn shape_errors() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(&[2, 3]));
    let b = tape.leaf(Tensor::zeros(&[2, 3]));
    assert!(matches!(tape.matmul(a, b), Err(AutodiffError::ShapeMismatch { op: "matmul", .. })));
    let c = tape.leaf(Tensor::zeros(&[3, 2]));
    assert!(tape.add(a, c).is_err());
    assert!(tape.slice_cols(a, 2, 4).is_err());
    assert!(tape.concat_cols(&[a, c]).is_err());
    assert_eq!(tape.concat_cols(&[]), Err(AutodiffError::EmptyOperands("concat_cols")));
    assert!(matches!(tape.backward(a), Err(AutodiffError::NonScalarRoot(_))));
    assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
}

#[test]
fn forward_values() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::matrix(2, 2, vec![1.0, -2.0, 3.0, 0.0]).unwrap());
    let bias = tape.leaf(Tensor::row(vec![0.5, 1.0]));
    let s = tape.add(a, bias).unwrap();
    assert_eq!(tape.value(s).data(), &[1.5, -1.0, 3.5, 1.0]);
    let sig = tape.sigmoid(a);
    assert_eq!(tape.value(sig).get(1, 1), 0.5);
    assert!((tape.value(sig).get(0, 0) - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-16);
    let cat = tape.concat_cols(&[a, a]).unwrap();
    assert_eq!(tape.value(cat).row_slice(1), &[3.0, 0.0, 3.0, 0.0]);
    let g = tape.gather_rows(a, vec![Some(1), None, Some(0)]).unwrap();
    assert_eq!(tape.value(g).data(), &[3.0, 0.0, 0.0, 0.0, 1.0, -2.0]);
    let seg = tape.segment_sum(a, vec![vec![0, 1], vec![], vec![1]]).unwrap();
    assert_eq!(tape.value(seg).data(), &[4.0, -2.0, 0.0, 0.0, 3.0, 0.0]);
    let n = tape.l2norm(a);
    assert_eq!(tape.value(n).data(), &[14.0f64.sqrt()]);
    let m = tape.mean(a);
    assert_eq!(tape.value(m).data(), &[0.5]);
}

#[test]
fn sum_of_squares_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(3, 4, &mut rng);
    let report = grad_check(
        |t: &mut Tape, v: &[Var]| -> Result<Var, AutodiffError> {
            let s = t.square(v[0]);
            Ok(t.sum(s))
        },
        &[x],
        1e-5,
    )
    .unwrap();
    assert_eq!(report.compared, 12);
    assert!(report.max_rel_error < 1e-10, "{}", report.max_rel_error);
}

/// `mean((tanh(tanh(x W1 + b1) W2 + b2) - y)²)`.
fn two_layer(t: &mut Tape, v: &[Var]) -> Result<Var, AutodiffError> {
    let z1 = t.matmul(v[0], v[1])?;
    let a1 = t.add(z1, v[2])?;
    let h = t.tanh(a1);
    let z2 = t.matmul(h, v[3])?;
    let a2 = t.add(z2, v[4])?;
    let o = t.tanh(a2);
    let d = t.sub(o, v[5])?;
    let sq = t.square(d);
    Ok(t.mean(sq))
}

#[test]
fn two_layer_tanh_network_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let point = vec![
        random(5, 4, &mut rng),
        random(4, 6, &mut rng),
        random(1, 6, &mut rng),
        random(6, 3, &mut rng),
        random(1, 3, &mut rng),
        random(5, 3, &mut rng),
    ];
    let report = grad_check(two_layer, &point, 1e-5).unwrap();
    assert!(report.flagged.is_empty());
    assert!(report.max_rel_error < 1e-6, "{}", report.max_rel_error);
}

#[test]
fn every_op_passes_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let point = vec![random(4, 3, &mut rng), random(4, 3, &mut rng), random(3, 2, &mut rng)];
    let report = grad_check(
        |t: &mut Tape, v: &[Var]| -> Result<Var, AutodiffError> {
            let m = t.mul(v[0], v[1])?;
            let s = t.sigmoid(m);
            let w = t.scale(v[1], 1.7);
            let cat = t.concat_cols(&[s, w, v[0]])?;
            let sl = t.slice_cols(cat, 2, 5)?;
            let big = t.scale(sl, 2.0);
            let wrapped = t.wrap_rotation_rows(big)?;
            let g = t.gather_rows(wrapped, vec![Some(3), None, Some(0), Some(3)])?;
            let seg = t.segment_sum(g, vec![vec![0, 2], vec![1, 3], vec![0]])?;
            let r = t.reshape(seg, &[9])?;
            let r = t.reshape(r, &[3, 3])?;
            let p = t.matmul(r, v[2])?;
            let norms = t.row_l2norm(p);
            let total = t.add_all(&[norms, norms])?;
            let a = t.sum(total);
            let b = t.l2norm(v[2]);
            let sum = t.add(a, b)?;
            let m2 = t.mean(p);
            t.sub(sum, m2)
        },
        &point,
        1e-5,
    )
    .unwrap();
    assert!(report.flagged.is_empty(), "{:?}", report.flagged);
    assert!(report.max_rel_error < 1e-6, "{}", report.max_rel_error);
}

#[test]
fn backward_is_repeatable() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tape = Tape::new();
    let v: Vec<Var> =
        (0..6).map(|i| tape.leaf(random([5, 4, 1, 6, 1, 5][i], [4, 6, 6, 3, 3, 3][i], &mut rng))).collect();
    let loss = two_layer(&mut tape, &v).unwrap();
    let first = tape.backward(loss).unwrap();
    let second = tape.backward(loss).unwrap();
    for &x in &v {
        assert_eq!(first.get(x), second.get(x));
    }
}

#[test]
fn unreached_leaves_get_zero_gradient() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::filled(&[2, 2], 3.0));
    let unused = tape.leaf(Tensor::filled(&[1, 5], 1.0));
    let s = tape.sum(a);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(a), Tensor::filled(&[2, 2], 1.0));
    assert_eq!(g.get(unused), Tensor::zeros(&[1, 5]));
}

#[test]
fn relative_error_uses_the_floor() {
    assert_eq!(relative_error(1.0, 1.0), 0.0);
    assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-16);
    assert!((relative_error(1e-10, 0.0) - 1e-10 / RELATIVE_FLOOR).abs() < 1e-20);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gradient_of_a_sum_is_the_sum_of_gradients(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, w1, w2) = (random(3, 4, &mut rng), random(4, 2, &mut rng), random(4, 2, &mut rng));
        let f = |t: &mut Tape, x: Var, w: Var| {
            let z = t.matmul(x, w).unwrap();
            let h = t.tanh(z);
            t.sum(h)
        };
        let grad_of = |which: u8| {
            let mut t = Tape::new();
            let (vx, v1, v2) = (t.leaf(x.clone()), t.leaf(w1.clone()), t.leaf(w2.clone()));
            let out = match which {
                1 => f(&mut t, vx, v1),
                2 => f(&mut t, vx, v2),
                _ => {
                    let a = f(&mut t, vx, v1);
                    let b = f(&mut t, vx, v2);
                    t.add(a, b).unwrap()
                }
            };
            t.backward(out).unwrap().get(vx)
        };
        let (g1, g2, g12) = (grad_of(1), grad_of(2), grad_of(0));
        for ((a, b), c) in g1.data().iter().zip(g2.data()).zip(g12.data()) {
            prop_assert!((a + b - c).abs() < 1e-12);
        }
    }
}
