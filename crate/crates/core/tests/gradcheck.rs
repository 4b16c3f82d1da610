mod common;

use common::gradcheck::{check_op, lm_trial, op_trial, randn, TOLERANCE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..100 {
        for (op, err) in op_trial(&mut rng) {
            assert!(
                err < TOLERANCE,
                "trial {trial}: {op} relative error {err:e}"
            );
        }
    }
}

#[test]
fn language_model_loss_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..100 {
        let err = lm_trial(&mut rng);
        assert!(err < TOLERANCE, "trial {trial}: relative error {err:e}");
    }
}

#[test]
fn squared_norm_of_linear_map() {
    use sugd_core::autograd::Tape;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = randn(&mut rng, &[4, 3], 1.0);
    let theta = randn(&mut rng, &[3, 1], 1.0);
    let mut tape = Tape::new();
    let av = tape.leaf(a.clone(), false);
    let tv = tape.leaf(theta.clone(), true);
    let y = tape.matmul(av, tv).unwrap();
    let sq = tape.mul(y, y).unwrap();
    let loss = tape.sum(sq);
    let g = tape.backward(loss).unwrap();
    let got = g.wrt(tv).unwrap().data().to_vec();
    // 2 AᵀA θ by explicit loops
    let (ad, td) = (a.data(), theta.data());
    for j in 0..3 {
        let mut want = 0.0;
        for i in 0..4 {
            let row: f64 = (0..3).map(|k| ad[i * 3 + k] * td[k]).sum();
            want += 2.0 * ad[i * 3 + j] * row;
        }
        assert!((got[j] - want).abs() < 1e-12);
    }
    let _ = check_op(&mut rng, &[a, theta], |t, v| t.matmul(v[0], v[1]).unwrap());
}

#[test]
fn backward_is_linear_in_the_loss() {
    use sugd_core::autograd::Tape;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = randn(&mut rng, &[3, 4], 1.0);
    let w = randn(&mut rng, &[4, 2], 1.0);
    let grad = |a: f64, b: f64| {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), false);
        let wv = tape.leaf(w.clone(), true);
        let h = tape.matmul(xv, wv).unwrap();
        let g = tape.gelu(h);
        let l1 = tape.sum(g);
        let sq = tape.mul(h, h).unwrap();
        let l2 = tape.sum(sq);
        let total = tape.combine(&[(l1, a), (l2, b)]).unwrap();
        tape.backward(total)
            .unwrap()
            .wrt(wv)
            .unwrap()
            .data()
            .to_vec()
    };
    let (g1, g2, both) = (grad(1.0, 0.0), grad(0.0, 1.0), grad(-0.7, 2.5));
    for i in 0..both.len() {
        assert!((both[i] - (-0.7 * g1[i] + 2.5 * g2[i])).abs() < 1e-12);
    }
}

#[test]
fn gradients_are_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        lm_trial(&mut rng)
    };
    assert_eq!(run().to_bits(), run().to_bits());
}
