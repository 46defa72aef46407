use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;
use qcdistort_core::cantor::{build_cantor, build_cantor_exact};

fn alpha() -> impl Strategy<Value = (i64, i64)> {
    (3i64..40).prop_flat_map(|q| (1..=(q - 1) / 2, Just(q))).prop_filter("below 1/2", |(p, q)| 2 * p < *q)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_and_float_agree((p, q) in alpha(), depth in 0usize..8) {
        let a = BigRational::new(BigInt::from(p), BigInt::from(q));
        let exact = build_cantor_exact(&a, depth).unwrap().to_float();
        let float = build_cantor(p as f64 / q as f64, depth).unwrap();
        for (ge, gf) in exact.generations.iter().zip(&float.generations) {
            prop_assert_eq!(ge.len(), gf.len());
            for (e, f) in ge.iter().zip(gf) {
                prop_assert!((e.left - f.left).abs() < 1e-12);
                prop_assert!((e.length - f.length).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn children_nest_and_separate((p, q) in alpha(), depth in 1usize..9) {
        let c = build_cantor(p as f64 / q as f64, depth).unwrap();
        for n in 1..=depth {
            let (prev, next) = (&c.generations[n - 1], &c.generations[n]);
            prop_assert_eq!(next.len(), 2 * prev.len());
            for (i, parent) in prev.iter().enumerate() {
                let (l, r) = (next[2 * i], next[2 * i + 1]);
                prop_assert!(l.left > parent.left - 1e-15);
                prop_assert!(r.right() < parent.right() + 1e-15);
                prop_assert!(l.right() < r.left);
            }
        }
    }

    #[test]
    fn masses_sum_to_one((p, q) in alpha(), depth in 0usize..10) {
        let c = build_cantor(p as f64 / q as f64, depth).unwrap();
        for g in c.natural_masses() {
            prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
