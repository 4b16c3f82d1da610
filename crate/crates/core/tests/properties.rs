mod common;

use common::oracles::{brute_force_auc, check_streams, lcs_recursive, rouge_l_oracle};
use proptest::prelude::*;
use sugd_core::eval::{final_score, harmonic_mean, lcs_len, mia_auc, mia_score, rouge_l};

/// Losses on a coarse grid so ties are common.
fn losses(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0u32..40).prop_map(|x| f64::from(x) / 8.0), 1..=max)
}

fn tokens() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0u32..6, 0..=30)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn auc_equals_pair_counting(m in losses(50), n in losses(50)) {
        prop_assert_eq!(mia_auc(&m, &n).unwrap(), brute_force_auc(&m, &n));
    }

    #[test]
    fn rouge_equals_recursive_lcs(a in tokens(), b in tokens()) {
        prop_assert_eq!(lcs_len(&a, &b), lcs_recursive(&a, &b));
        prop_assert_eq!(rouge_l(&a, &b), rouge_l_oracle(&a, &b));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn auc_swaps_to_complement(m in losses(20), n in losses(20)) {
        let ab = mia_auc(&m, &n).unwrap();
        let ba = mia_auc(&n, &m).unwrap();
        prop_assert!((ab + ba - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn mia_score_symmetric_about_half(d in 0.0f64..0.5) {
        prop_assert!((mia_score(0.5 + d) - mia_score(0.5 - d)).abs() < 1e-12);
        prop_assert!(mia_score(0.5 + d) <= 1.0);
    }

    #[test]
    fn harmonic_mean_ignores_order(mut v in prop::collection::vec(0.01f64..1.0, 12), seed in any::<u64>()) {
        let before = harmonic_mean(&v);
        let k = (seed % 12) as usize;
        v.rotate_left(k);
        v.reverse();
        prop_assert!((harmonic_mean(&v) - before).abs() < 1e-12);
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = v.iter().cloned().fold(0.0, f64::max);
        prop_assert!(before >= min - 1e-12 && before <= max + 1e-12);
    }

    #[test]
    fn harmonic_mean_zero_absorbs(v in prop::collection::vec(0.01f64..1.0, 11), at in 0usize..12) {
        let mut w = v.clone();
        w.insert(at, 0.0);
        prop_assert_eq!(harmonic_mean(&w), 0.0);
    }

    #[test]
    fn final_score_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0, up in 0.0f64..0.5) {
        let base = final_score(a, b, c);
        prop_assert!(final_score(a + up, b, c) >= base);
        prop_assert!(final_score(a, b + up, c) >= base);
        prop_assert!(final_score(a, b, c + up) >= base);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn interleaved_streams_follow_the_pattern(forget in 1usize..80, retain in 1usize..40, chunk in 1usize..40, n in 1usize..9) {
        prop_assert_eq!(check_streams(forget, retain, chunk, n), Ok(()));
    }
}
