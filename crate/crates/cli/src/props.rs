//! Randomized spot checks of modulus monotonicity and subadditivity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use qcdistort_core::modulus::{solve_modulus, BaseMeasure, DiscreteMeasureFamily, ModulusError};

/// Slack allowed for solver tolerance in the comparisons.
pub const PROPERTY_SLACK: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertySummary {
    pub seed: u64,
    pub trials: usize,
    pub p: f64,
    pub monotone_failures: usize,
    pub subadditive_failures: usize,
    pub worst_monotone_excess: f64,
    pub worst_subadditive_excess: f64,
}

fn random_rows(rng: &mut ChaCha8Rng, n_atoms: usize, count: usize) -> Vec<Vec<(usize, f64)>> {
    (0..count)
        .map(|_| {
            let mut row = Vec::new();
            for j in 0..n_atoms {
                if rng.gen_bool(0.4) {
                    row.push((j, rng.gen_range(0.1..2.0)));
                }
            }
            if row.is_empty() {
                row.push((rng.gen_range(0..n_atoms), rng.gen_range(0.1..2.0)));
            }
            row
        })
        .collect()
}

/// `trials` random families of at most 10 measures on at most 20 atoms. A
/// sub-family must not have larger modulus, and a union must not exceed the
/// sum of its parts.
pub fn property_summary(seed: u64, trials: usize, p: f64) -> Result<PropertySummary, ModulusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = PropertySummary {
        seed,
        trials,
        p,
        monotone_failures: 0,
        subadditive_failures: 0,
        worst_monotone_excess: 0.0,
        worst_subadditive_excess: 0.0,
    };
    for _ in 0..trials {
        let n = rng.gen_range(1..=20);
        let count = rng.gen_range(2..=10);
        let rows = random_rows(&mut rng, n, count);
        let base = BaseMeasure { weights: (0..n).map(|_| rng.gen_range(0.1..2.0)).collect() };
        let cut = rng.gen_range(1..count);
        let fam = |r: &[Vec<(usize, f64)>]| DiscreteMeasureFamily::new(n, r.to_vec());
        let all = solve_modulus(&fam(&rows), &base, p)?.value;
        let a = solve_modulus(&fam(&rows[..cut]), &base, p)?.value;
        let b = solve_modulus(&fam(&rows[cut..]), &base, p)?.value;
        let mono = (a - all) / all.max(1e-300);
        if mono > PROPERTY_SLACK {
            s.monotone_failures += 1;
        }
        s.worst_monotone_excess = s.worst_monotone_excess.max(mono);
        let sub = (all - a - b) / all.max(1e-300);
        if sub > PROPERTY_SLACK {
            s.subadditive_failures += 1;
        }
        s.worst_subadditive_excess = s.worst_subadditive_excess.max(sub);
    }
    Ok(s)
}
