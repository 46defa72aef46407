use proptest::prelude::*;
use qcdistort_core::modulus::{
    mixture_grid_bound, product_family, product_modulus_exact, solve_modulus, BaseMeasure, DiscreteMeasureFamily,
};

const REL: f64 = 1e-5;

fn family_strategy(max_rows: usize, max_atoms: usize) -> impl Strategy<Value = (DiscreteMeasureFamily, BaseMeasure)> {
    (1..=max_atoms).prop_flat_map(move |n| {
        let row = proptest::collection::vec((0..n, 0.1f64..2.0), 1..=n.min(6));
        (
            proptest::collection::vec(row, 1..=max_rows),
            proptest::collection::vec(0.1f64..2.0, n),
        )
            .prop_map(move |(rows, w)| {
                let rows = rows
                    .into_iter()
                    .map(|mut r| {
                        r.sort_by_key(|e| e.0);
                        r.dedup_by_key(|e| e.0);
                        r
                    })
                    .collect();
                (DiscreteMeasureFamily::new(n, rows), BaseMeasure { weights: w })
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adding_a_measure_never_decreases((fam, base) in family_strategy(10, 20), p in 1.5f64..3.0) {
        let full = solve_modulus(&fam, &base, p).unwrap().value;
        let sub = DiscreteMeasureFamily::new(fam.n_atoms, fam.rows[..fam.rows.len().div_ceil(2)].to_vec());
        let part = solve_modulus(&sub, &base, p).unwrap().value;
        prop_assert!(part <= full * (1.0 + REL), "{part} > {full}");
    }

    #[test]
    fn union_is_subadditive((fam, base) in family_strategy(10, 20), cut in 0.0f64..1.0) {
        let k = ((fam.rows.len() as f64 * cut) as usize).clamp(0, fam.rows.len());
        let a = DiscreteMeasureFamily::new(fam.n_atoms, fam.rows[..k].to_vec());
        let b = DiscreteMeasureFamily::new(fam.n_atoms, fam.rows[k..].to_vec());
        let all = solve_modulus(&fam, &base, 2.0).unwrap().value;
        let va = solve_modulus(&a, &base, 2.0).unwrap().value;
        let vb = solve_modulus(&b, &base, 2.0).unwrap().value;
        prop_assert!(all <= (va + vb) * (1.0 + REL) + 1e-12, "{all} > {va} + {vb}");
    }

    #[test]
    fn scaling_rows((fam, base) in family_strategy(6, 10), c in 0.2f64..5.0, p in 1.5f64..3.0) {
        let scaled = DiscreteMeasureFamily::new(
            fam.n_atoms,
            fam.rows.iter().map(|r| r.iter().map(|&(j, w)| (j, c * w)).collect()).collect(),
        );
        let v = solve_modulus(&fam, &base, p).unwrap().value;
        let vs = solve_modulus(&scaled, &base, p).unwrap().value;
        prop_assert!((vs - v * c.powf(-p)).abs() <= 1e-5 * vs.max(1e-12));
    }

    #[test]
    fn duality_certificate((fam, base) in family_strategy(8, 12), p in 1.5f64..3.0) {
        let r = solve_modulus(&fam, &base, p).unwrap();
        prop_assert!((r.value - r.dual_bound).abs() <= 1e-6 * r.value);
        let lam = fam.apply(&r.rho);
        prop_assert!(lam.iter().all(|&v| v >= 1.0 - 1e-8));
    }

    #[test]
    fn small_families_match_grid_oracle((fam, base) in family_strategy(3, 4), p in 1.5f64..3.0) {
        let v = solve_modulus(&fam, &base, p).unwrap().value;
        let b = mixture_grid_bound(&fam, &base, p, 300);
        prop_assert!(b <= v * (1.0 + 1e-6));
        prop_assert!((v - b) / v <= 1e-2, "solver {v}, grid {b}");
    }

    #[test]
    fn product_oracle(ne in 1usize..8, ny in 1usize..8, le in 0.5f64..3.0, p in 1.5f64..3.0) {
        let lambda = vec![le / ne as f64; ne];
        let nu: Vec<f64> = (0..ny).map(|y| 0.5 + y as f64).collect();
        let (fam, base) = product_family(&lambda, &nu);
        let v = solve_modulus(&fam, &base, p).unwrap().value;
        let exact = product_modulus_exact(le, nu.iter().sum(), p);
        prop_assert!((v - exact).abs() <= 1e-6 * exact);
    }
}
