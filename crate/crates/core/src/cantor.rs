//! Cantor sets `E_α`, nested interval families with their natural measures,
//! gauge-function mass checks and Ahlfors-regularity scanning.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CANTOR_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CantorError {
    #[error("alpha must lie in (0, 1/2), got {0}")]
    AlphaOutOfRange(f64),
    #[error("branching value {value} at level {level} is below 4")]
    BranchingTooSmall { level: usize, value: String },
    #[error("gauge {name} is not increasing on [{lo:e}, {hi:e}]")]
    GaugeNotIncreasing { name: String, lo: f64, hi: f64 },
    #[error("unknown gauge {0:?}")]
    UnknownGauge(String),
    #[error("family has depth 0; nothing to check")]
    EmptyFamily,
    #[error("branching search hit the iteration cap at level {level}; last tried n = {last_tried}")]
    SearchExhausted { level: usize, last_tried: String, partial: Vec<String> },
    #[error("exponent d must be positive, got {0}")]
    NonPositiveExponent(f64),
    #[error("weighted point set is empty")]
    EmptyPointSet,
    #[error("scale {0} outside (0, diam]")]
    BadScale(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub left: f64,
    pub length: f64,
}

impl Interval {
    pub fn right(&self) -> f64 {
        self.left + self.length
    }

    pub fn mid(&self) -> f64 {
        self.left + 0.5 * self.length
    }

    pub fn contains(&self, y: f64) -> bool {
        y >= self.left && y <= self.right()
    }
}

/// Generations `0..=depth` of the Cantor set `E_α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CantorApprox {
    pub schema_version: u32,
    pub alpha: f64,
    pub generations: Vec<Vec<Interval>>,
}

fn check_alpha(alpha: f64) -> Result<(), CantorError> {
    if alpha > 0.0 && alpha < 0.5 {
        Ok(())
    } else {
        Err(CantorError::AlphaOutOfRange(alpha))
    }
}

/// Float construction: each interval `I` is replaced by two children of
/// length `α|I|` at distance `(1−2α)|I|/3` from each other and from the ends.
pub fn build_cantor(alpha: f64, depth: usize) -> Result<CantorApprox, CantorError> {
    check_alpha(alpha)?;
    let gap = (1.0 - 2.0 * alpha) / 3.0;
    let mut generations = vec![vec![Interval { left: 0.0, length: 1.0 }]];
    for n in 1..=depth {
        let length = alpha.powi(n as i32);
        let prev = &generations[n - 1];
        let mut next = Vec::with_capacity(2 * prev.len());
        for p in prev {
            let g = gap * p.length;
            next.push(Interval { left: p.left + g, length });
            next.push(Interval { left: p.left + 2.0 * g + length, length });
        }
        generations.push(next);
    }
    Ok(CantorApprox { schema_version: CANTOR_SCHEMA_VERSION, alpha, generations })
}

/// Exact construction over the rationals; intervals as `(left, length)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactCantor {
    pub alpha: BigRational,
    pub generations: Vec<Vec<(BigRational, BigRational)>>,
}

pub fn build_cantor_exact(alpha: &BigRational, depth: usize) -> Result<ExactCantor, CantorError> {
    let a = alpha.to_f64().unwrap_or(f64::NAN);
    check_alpha(a)?;
    let one = BigRational::one();
    let two = BigRational::from_integer(BigInt::from(2));
    let three = BigRational::from_integer(BigInt::from(3));
    let gap = (&one - &two * alpha) / &three;
    let mut generations = vec![vec![(BigRational::zero(), one.clone())]];
    for n in 1..=depth {
        let prev = &generations[n - 1];
        let mut next = Vec::with_capacity(2 * prev.len());
        for (left, len) in prev {
            let g = &gap * len;
            let child = alpha * len;
            next.push((left + &g, child.clone()));
            next.push((left + &g + &g + &child, child));
        }
        generations.push(next);
    }
    Ok(ExactCantor { alpha: alpha.clone(), generations })
}

impl ExactCantor {
    pub fn to_float(&self) -> CantorApprox {
        CantorApprox {
            schema_version: CANTOR_SCHEMA_VERSION,
            alpha: self.alpha.to_f64().unwrap_or(f64::NAN),
            generations: self
                .generations
                .iter()
                .map(|g| {
                    g.iter()
                        .map(|(l, len)| Interval {
                            left: l.to_f64().unwrap_or(f64::NAN),
                            length: len.to_f64().unwrap_or(f64::NAN),
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

impl CantorApprox {
    pub fn depth(&self) -> usize {
        self.generations.len() - 1
    }

    pub fn leaves(&self) -> &[Interval] {
        self.generations.last().expect("generation 0 always present")
    }

    /// Natural measure: every generation-`n` interval carries mass `2^{−n}`.
    pub fn natural_masses(&self) -> Vec<Vec<f64>> {
        self.generations
            .iter()
            .enumerate()
            .map(|(n, g)| vec![0.5f64.powi(n as i32); g.len()])
            .collect()
    }

    /// Leaf midpoints with their natural masses.
    pub fn weighted_leaves(&self) -> Vec<WeightedAtom> {
        let m = 0.5f64.powi(self.depth() as i32);
        self.leaves().iter().map(|i| WeightedAtom { pos: i.mid(), mass: m }).collect()
    }

    /// Index of the generation-`n` interval containing `y`, if any.
    pub fn locate(&self, n: usize, y: f64) -> Option<usize> {
        let g = &self.generations[n];
        let i = g.partition_point(|iv| iv.right() < y);
        (i < g.len() && g[i].contains(y)).then_some(i)
    }
}

/// Similarity dimension `t = −log 2 / log α`.
pub fn cantor_dimension(alpha: f64) -> f64 {
    -(2f64.ln()) / alpha.ln()
}

/// How `α` is given to [`integer_power_check`].
#[derive(Debug, Clone, PartialEq)]
pub enum AlphaSpec {
    /// `α` itself is rational.
    Rational(BigRational),
    /// `α^root = radicand` with `radicand` rational.
    Root { radicand: BigRational, root: u32 },
    /// Plain float; integrality tested to a relative 1e−9.
    Float(f64),
}

impl AlphaSpec {
    pub fn reciprocal_of(q: u64) -> Self {
        AlphaSpec::Rational(BigRational::new(BigInt::one(), BigInt::from(q)))
    }

    pub fn value(&self) -> f64 {
        match self {
            AlphaSpec::Rational(r) => r.to_f64().unwrap_or(f64::NAN),
            AlphaSpec::Root { radicand, root } => {
                radicand.to_f64().unwrap_or(f64::NAN).powf(1.0 / *root as f64)
            }
            AlphaSpec::Float(a) => *a,
        }
    }
}

/// Smallest `k ≤ kmax` with `α^{−k}` an integer, returned with that integer.
pub fn integer_power_check(alpha: &AlphaSpec, kmax: u32) -> Option<(u32, BigUint)> {
    for k in 1..=kmax {
        match alpha {
            AlphaSpec::Rational(r) => {
                let inv = r.recip();
                let p = num_traits::pow(inv, k as usize);
                if p.is_integer() && p.numer() > &BigInt::zero() {
                    return Some((k, p.to_integer().to_biguint()?));
                }
            }
            AlphaSpec::Root { radicand, root } => {
                // α^{−k} = N  ⇔  N^root = radicand^{−k}.
                let p = num_traits::pow(radicand.recip(), k as usize);
                if p.is_integer() && p.numer() > &BigInt::zero() {
                    let v = p.to_integer().to_biguint()?;
                    let n = v.nth_root(*root);
                    if num_traits::pow(n.clone(), *root as usize) == v {
                        return Some((k, n));
                    }
                }
            }
            AlphaSpec::Float(a) => {
                let v = a.powi(-(k as i32));
                let r = v.round();
                if (v - r).abs() <= 1e-9 * v.max(1.0) && r >= 1.0 {
                    return Some((k, BigUint::from(r as u64)));
                }
            }
        }
    }
    None
}

/// Gauge functions `h` with `h(t)/t → ∞` (except `Linear`, kept as the
/// negative control).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaugeFunction {
    Linear,
    Sqrt,
    /// `t·log(e/t) = t·(1 + log(1/t))`, increasing on `(0, 1]`.
    TLog,
    Power(f64),
}

impl GaugeFunction {
    pub fn parse(name: &str) -> Result<Self, CantorError> {
        match name {
            "linear" | "t" => Ok(GaugeFunction::Linear),
            "sqrt" => Ok(GaugeFunction::Sqrt),
            "tlog" | "t_log" => Ok(GaugeFunction::TLog),
            other => other
                .strip_prefix("power:")
                .and_then(|s| s.parse::<f64>().ok())
                .map(GaugeFunction::Power)
                .ok_or_else(|| CantorError::UnknownGauge(other.to_string())),
        }
    }

    pub fn name(&self) -> String {
        match self {
            GaugeFunction::Linear => "linear".into(),
            GaugeFunction::Sqrt => "sqrt".into(),
            GaugeFunction::TLog => "tlog".into(),
            GaugeFunction::Power(p) => format!("power:{p}"),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.ln_eval(t.ln()).exp()
    }

    /// `log h(t)` as a function of `log t`; stays finite where `t` underflows.
    pub fn ln_eval(&self, ln_t: f64) -> f64 {
        match self {
            GaugeFunction::Linear => ln_t,
            GaugeFunction::Sqrt => 0.5 * ln_t,
            GaugeFunction::TLog => ln_t + (1.0 - ln_t).ln(),
            GaugeFunction::Power(p) => p * ln_t,
        }
    }

    /// Nondecreasing check on a log-spaced sample of `[e^{lo}, e^{hi}]`.
    pub fn check_increasing(&self, ln_lo: f64, ln_hi: f64) -> Result<(), CantorError> {
        let n = 256;
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=n {
            let s = ln_lo + (ln_hi - ln_lo) * i as f64 / n as f64;
            let v = self.ln_eval(s);
            if !(v >= prev - 1e-12 * v.abs().max(1.0)) || v.is_nan() {
                return Err(CantorError::GaugeNotIncreasing {
                    name: self.name(),
                    lo: ln_lo.exp(),
                    hi: ln_hi.exp(),
                });
            }
            prev = v;
        }
        Ok(())
    }
}

/// Natural log of a positive big integer.
pub fn ln_biguint(n: &BigUint) -> f64 {
    let bits = n.bits();
    if bits <= 60 {
        return n.to_u64().map(|v| (v as f64).ln()).unwrap_or(f64::NEG_INFINITY);
    }
    let shift = bits - 60;
    let top = (n >> shift).to_u64().unwrap_or(0) as f64;
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

fn serialize_big<S: serde::Serializer>(v: &[BigUint], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v {
        seq.serialize_element(&x.to_str_radix(10))?;
    }
    seq.end()
}

/// Per-level description: every parent at level `k` has the same length and
/// the same number of children, so mass and gauge checks can run per level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelSpec {
    pub level: usize,
    pub ln_length: f64,
    pub children_per_parent: String,
    pub ln_count: f64,
}

/// Intervals on the left side of `Q`; generation `k+1` sits in the middle half
/// of each generation-`k` parent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NestedIntervalFamily {
    pub schema_version: u32,
    #[serde(serialize_with = "serialize_big")]
    pub branching: Vec<BigUint>,
    pub levels: Vec<LevelSpec>,
    /// Present only when the total interval count is small enough to store.
    pub generations: Option<Vec<Vec<Interval>>>,
}

/// Above this many intervals per generation the family is kept symbolic.
pub const MATERIALIZE_CAP: f64 = (1u64 << 22) as f64;

/// Child count for branching `n`: `⌊n/4⌋`.
pub fn child_count(n: &BigUint) -> BigUint {
    n >> 2u32
}

/// Place `⌊n/4⌋` children of length `|I|/n` on a grid of pitch `2|I|/n`,
/// centered in the middle half of `parent`.
pub fn place_children(parent: Interval, n: u64) -> Vec<Interval> {
    let c = (n / 4) as usize;
    let len = parent.length / n as f64;
    let pitch = 2.0 * len;
    let span = (2 * c - 1) as f64 * len;
    let start = parent.mid() - 0.5 * span;
    (0..c).map(|i| Interval { left: start + i as f64 * pitch, length: len }).collect()
}

pub fn build_nested_family(branching: &[u64], depth: usize) -> Result<NestedIntervalFamily, CantorError> {
    let big: Vec<BigUint> = branching.iter().take(depth).map(|&n| BigUint::from(n)).collect();
    if big.len() < depth {
        return Err(CantorError::BranchingTooSmall { level: big.len() + 1, value: "missing".into() });
    }
    NestedIntervalFamily::from_branching(big)
}

impl NestedIntervalFamily {
    pub fn from_branching(branching: Vec<BigUint>) -> Result<Self, CantorError> {
        let four = BigUint::from(4u32);
        for (i, n) in branching.iter().enumerate() {
            if n < &four {
                return Err(CantorError::BranchingTooSmall { level: i + 1, value: n.to_string() });
            }
        }
        let mut levels = vec![LevelSpec {
            level: 0,
            ln_length: 0.0,
            children_per_parent: String::new(),
            ln_count: 0.0,
        }];
        for (i, n) in branching.iter().enumerate() {
            let prev = &levels[i];
            let c = child_count(n);
            levels.push(LevelSpec {
                level: i + 1,
                ln_length: prev.ln_length - ln_biguint(n),
                children_per_parent: c.to_string(),
                ln_count: prev.ln_count + ln_biguint(&c),
            });
        }
        let small = branching.iter().all(|n| n.bits() < 40)
            && levels.last().map(|l| l.ln_count.exp() <= MATERIALIZE_CAP).unwrap_or(true);
        let generations = small.then(|| {
            let mut gens = vec![vec![Interval { left: 0.0, length: 1.0 }]];
            for n in &branching {
                let n = n.to_u64().expect("checked size");
                let next: Vec<Interval> =
                    gens.last().unwrap().iter().flat_map(|p| place_children(*p, n)).collect();
                gens.push(next);
            }
            gens
        });
        Ok(NestedIntervalFamily { schema_version: CANTOR_SCHEMA_VERSION, branching, levels, generations })
    }

    pub fn depth(&self) -> usize {
        self.branching.len()
    }

    pub fn branching_u64(&self) -> Option<Vec<u64>> {
        self.branching.iter().map(|n| n.to_u64()).collect()
    }

    /// `Σ_k 1/n_k`.
    pub fn reciprocal_sum(&self) -> f64 {
        self.branching.iter().map(|n| (-ln_biguint(n)).exp()).sum()
    }

    /// Natural measure per generation: each child gets an equal share of its
    /// parent's mass. Returned as the per-interval mass at every level.
    pub fn natural_masses(&self) -> Vec<f64> {
        self.levels.iter().map(|l| (-l.ln_count).exp()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationCheck {
    pub generation: usize,
    pub parents_checked: usize,
    pub parents_passing: usize,
    /// `log Σ_children h(|I_j|)` for the worst parent.
    pub ln_children_sum: f64,
    /// `log 2h(|I|)`.
    pub ln_target: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HMeasureReport {
    pub gauge: String,
    pub generations: Vec<GenerationCheck>,
    pub pass: bool,
}

fn ln_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// For every parent `I` check `Σ_children h(|I_j|) ≥ 2h(|I|)`.
///
/// Stored families are checked interval by interval; symbolic families use the
/// per-level description (all parents in a level are congruent).
pub fn h_measure_check(
    family: &NestedIntervalFamily,
    gauge: GaugeFunction,
) -> Result<HMeasureReport, CantorError> {
    if family.depth() == 0 {
        return Err(CantorError::EmptyFamily);
    }
    let ln_min = family.levels.last().unwrap().ln_length;
    gauge.check_increasing(ln_min, 0.0)?;
    let ln2 = std::f64::consts::LN_2;
    let mut out = Vec::with_capacity(family.depth());
    for k in 0..family.depth() {
        let check = match &family.generations {
            Some(gens) => {
                let parents = &gens[k];
                let children = &gens[k + 1];
                let c = children.len() / parents.len();
                let mut passing = 0;
                let mut worst = (f64::INFINITY, 0.0, 0.0);
                for (i, p) in parents.iter().enumerate() {
                    let lhs = ln_sum_exp(
                        children[i * c..(i + 1) * c].iter().map(|j| gauge.ln_eval(j.length.ln())),
                    );
                    let rhs = ln2 + gauge.ln_eval(p.length.ln());
                    if lhs >= rhs {
                        passing += 1;
                    }
                    if lhs - rhs < worst.0 {
                        worst = (lhs - rhs, lhs, rhs);
                    }
                }
                GenerationCheck {
                    generation: k + 1,
                    parents_checked: parents.len(),
                    parents_passing: passing,
                    ln_children_sum: worst.1,
                    ln_target: worst.2,
                    pass: passing == parents.len(),
                }
            }
            None => {
                let parent = &family.levels[k];
                let child = &family.levels[k + 1];
                let lhs = (child.ln_count - parent.ln_count) + gauge.ln_eval(child.ln_length);
                let rhs = ln2 + gauge.ln_eval(parent.ln_length);
                let pass = lhs >= rhs;
                GenerationCheck {
                    generation: k + 1,
                    parents_checked: 1,
                    parents_passing: usize::from(pass),
                    ln_children_sum: lhs,
                    ln_target: rhs,
                    pass,
                }
            }
        };
        out.push(check);
    }
    let pass = out.iter().all(|c| c.pass);
    Ok(HMeasureReport { gauge: gauge.name(), generations: out, pass })
}

/// Doubling cap per level for [`select_branching`].
pub const BRANCHING_SEARCH_CAP: usize = 100_000;

/// Greedy doubling search starting from `n_k = 10·2^{k−1}` at each level.
pub fn select_branching(gauge: GaugeFunction, depth: usize) -> Result<Vec<BigUint>, CantorError> {
    let ln2 = std::f64::consts::LN_2;
    let mut chosen: Vec<BigUint> = Vec::with_capacity(depth);
    let mut ln_len = 0.0;
    for level in 0..depth {
        let mut n = BigUint::from(10u32) << level;
        let mut tries = 0;
        loop {
            let c = child_count(&n);
            let ln_n = ln_biguint(&n);
            let lhs = ln_biguint(&c) + gauge.ln_eval(ln_len - ln_n);
            let rhs = ln2 + gauge.ln_eval(ln_len);
            if lhs >= rhs {
                break;
            }
            tries += 1;
            if tries >= BRANCHING_SEARCH_CAP {
                return Err(CantorError::SearchExhausted {
                    level: level + 1,
                    last_tried: format!("2^{:.1}", ln_biguint(&n) / ln2),
                    partial: chosen.iter().map(|b| b.to_string()).collect(),
                });
            }
            n <<= 1u32;
        }
        ln_len -= ln_biguint(&n);
        chosen.push(n);
    }
    Ok(chosen)
}

/// A point mass on the line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedAtom {
    pub pos: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AhlforsRow {
    pub x: f64,
    pub r: f64,
    pub mass: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AhlforsReport {
    pub d: f64,
    /// Smallest `C` with `C⁻¹ r^d ≤ μ(B(x,r)) ≤ C r^d` over the sample.
    pub constant: f64,
    pub worst: AhlforsRow,
    pub rows: Vec<AhlforsRow>,
}

/// Dyadic radii `2^{−j}` for `j` in `lo..=hi`.
pub fn dyadic_radii(lo: u32, hi: u32) -> Vec<f64> {
    (lo..=hi).map(|j| 0.5f64.powi(j as i32)).collect()
}

/// Scan open balls centered at every atom, at every radius in `radii`.
pub fn ahlfors_scan(atoms: &[WeightedAtom], d: f64, radii: &[f64]) -> Result<AhlforsReport, CantorError> {
    if d <= 0.0 {
        return Err(CantorError::NonPositiveExponent(d));
    }
    if atoms.is_empty() {
        return Err(CantorError::EmptyPointSet);
    }
    let mut sorted = atoms.to_vec();
    sorted.sort_by(|a, b| a.pos.total_cmp(&b.pos));
    let diam = sorted.last().unwrap().pos - sorted[0].pos;
    for &r in radii {
        if !(r > 0.0 && r <= diam.max(f64::MIN_POSITIVE)) {
            return Err(CantorError::BadScale(r));
        }
    }
    let mut prefix = Vec::with_capacity(sorted.len() + 1);
    prefix.push(0.0);
    for a in &sorted {
        prefix.push(prefix.last().unwrap() + a.mass);
    }
    let mut rows = Vec::with_capacity(sorted.len() * radii.len());
    let mut worst = AhlforsRow { x: 0.0, r: 0.0, mass: 0.0, ratio: 1.0 };
    let mut constant: f64 = 1.0;
    for a in &sorted {
        for &r in radii {
            let lo = sorted.partition_point(|b| b.pos <= a.pos - r);
            let hi = sorted.partition_point(|b| b.pos < a.pos + r);
            let mass = prefix[hi] - prefix[lo];
            let ratio = mass / r.powf(d);
            let c = ratio.max(1.0 / ratio);
            let row = AhlforsRow { x: a.pos, r, mass, ratio };
            if c > constant {
                constant = c;
                worst = row;
            }
            rows.push(row);
        }
    }
    Ok(AhlforsReport { d, constant, worst, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn cantor_small_cases() {
        let c = build_cantor(0.25, 0).unwrap();
        assert_eq!(c.generations, vec![vec![Interval { left: 0.0, length: 1.0 }]]);
        let c = build_cantor(0.25, 1).unwrap();
        let g = &c.generations[1];
        assert_abs_diff_eq!(g[0].left, 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g[0].right(), 5.0 / 12.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1].left, 7.0 / 12.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1].right(), 5.0 / 6.0, epsilon = 1e-15);
        let c = build_cantor(0.125, 2).unwrap();
        assert_eq!(c.generations[2].len(), 4);
        assert!(c.generations[2].iter().all(|i| i.length == 1.0 / 64.0));
        assert!(matches!(build_cantor(0.6, 2), Err(CantorError::AlphaOutOfRange(_))));
        assert!(build_cantor(0.0, 2).is_err());
    }

    #[test]
    fn exact_matches_hand_values() {
        let e = build_cantor_exact(&q(1, 4), 1).unwrap();
        assert_eq!(e.generations[1][0], (q(1, 6), q(1, 4)));
        assert_eq!(e.generations[1][1], (q(7, 12), q(1, 4)));
        let e = build_cantor_exact(&q(1, 4), 10).unwrap();
        let want = num_traits::pow(q(1, 4), 10);
        assert!(e.generations[10].iter().all(|(_, len)| *len == want));
    }

    #[test]
    fn exact_structure_invariants() {
        let alpha = q(1, 8);
        let e = build_cantor_exact(&alpha, 6).unwrap();
        let gap = (q(1, 1) - q(2, 1) * &alpha) / q(3, 1);
        for n in 1..=6 {
            let (parents, kids) = (&e.generations[n - 1], &e.generations[n]);
            assert_eq!(kids.len(), 1 << n);
            for (i, (pl, plen)) in parents.iter().enumerate() {
                let (a, b) = (&kids[2 * i], &kids[2 * i + 1]);
                assert_eq!(&a.0 - pl, &gap * plen);
                assert_eq!(&b.0 - (&a.0 + &a.1), &gap * plen);
                assert_eq!((pl + plen) - (&b.0 + &b.1), &gap * plen);
            }
        }
    }

    #[test]
    fn natural_masses_sum_to_one() {
        let c = build_cantor(0.25, 10).unwrap();
        for g in c.natural_masses() {
            assert_abs_diff_eq!(g.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn dimension_formula() {
        assert_abs_diff_eq!(cantor_dimension(0.25), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(cantor_dimension(0.125), 1.0 / 3.0, epsilon = 1e-15);
        let mut prev = 0.0;
        for a in [0.4, 0.45, 0.49, 0.499, 0.4999] {
            let t = cantor_dimension(a);
            assert!(t > prev && t < 1.0);
            prev = t;
        }
        assert!(1.0 - prev < 1e-3);
    }

    #[test]
    fn integer_powers() {
        let (k, n) = integer_power_check(&AlphaSpec::reciprocal_of(8), 10).unwrap();
        assert_eq!((k, n), (1, BigUint::from(8u32)));
        let root = AlphaSpec::Root { radicand: q(1, 8), root: 2 };
        let (k, n) = integer_power_check(&root, 10).unwrap();
        assert_eq!((k, n), (2, BigUint::from(8u32)));
        assert_eq!(integer_power_check(&AlphaSpec::Float(0.3), 10), None);
        assert_eq!(integer_power_check(&AlphaSpec::Rational(q(3, 10)), 10), None);
        let (k, _) = integer_power_check(&AlphaSpec::Float(0.125), 10).unwrap();
        assert_eq!(k, 1);
    }

    #[test]
    fn nested_family_placement() {
        let f = build_nested_family(&[8], 1).unwrap();
        let g = f.generations.as_ref().unwrap();
        assert_eq!(g[1].len(), 2);
        for c in &g[1] {
            assert_abs_diff_eq!(c.length, 0.125, epsilon = 1e-15);
            assert!(c.left >= 0.25 && c.right() <= 0.75);
        }
        assert!(g[1][1].left - g[1][0].right() >= 0.125 - 1e-15);
        let f0 = build_nested_family(&[], 0).unwrap();
        assert_eq!(f0.generations.unwrap(), vec![vec![Interval { left: 0.0, length: 1.0 }]]);
        let f2 = build_nested_family(&[8, 16], 2).unwrap();
        let leaves = &f2.generations.as_ref().unwrap()[2];
        assert_eq!(leaves.len(), 8);
        assert!(leaves.iter().all(|i| (i.length - 1.0 / 128.0).abs() < 1e-16));
        assert!(matches!(build_nested_family(&[3], 1), Err(CantorError::BranchingTooSmall { .. })));
    }

    #[test]
    fn nested_family_separation_and_masses() {
        let f = build_nested_family(&[12, 20, 9], 3).unwrap();
        let g = f.generations.as_ref().unwrap();
        for k in 0..3 {
            let n = [12.0, 20.0, 9.0][k];
            let c = g[k + 1].len() / g[k].len();
            for (i, p) in g[k].iter().enumerate() {
                let kids = &g[k + 1][i * c..(i + 1) * c];
                for w in kids.windows(2) {
                    assert!(w[1].left - w[0].right() >= p.length / n * (1.0 - 1e-12));
                }
                assert!(kids[0].left >= p.left + 0.25 * p.length - 1e-15);
                assert!(kids[c - 1].right() <= p.left + 0.75 * p.length + 1e-15);
            }
        }
        for (k, m) in f.natural_masses().iter().enumerate() {
            assert_abs_diff_eq!(m * g[k].len() as f64, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn h_measure_examples() {
        let f = build_nested_family(&[8], 1).unwrap();
        assert!(!h_measure_check(&f, GaugeFunction::Linear).unwrap().pass);
        // 2·√(1/8) ≈ 0.707 < 2
        let r = h_measure_check(&f, GaugeFunction::Sqrt).unwrap();
        assert!(!r.pass);
        assert_abs_diff_eq!(r.generations[0].ln_children_sum.exp(), 2.0 * (0.125f64).sqrt(), epsilon = 1e-12);
        // 8 children of length 1/64 (n = 64 → ⌊64/4⌋ = 16 children, so build by hand)
        let lhs: f64 = (0..8).map(|_| GaugeFunction::Sqrt.eval(1.0 / 64.0)).sum();
        assert_abs_diff_eq!(lhs, 1.0, epsilon = 1e-12);
        assert!(lhs < 2.0 * GaugeFunction::Sqrt.eval(1.0));
        assert!(matches!(
            h_measure_check(&build_nested_family(&[], 0).unwrap(), GaugeFunction::Sqrt),
            Err(CantorError::EmptyFamily)
        ));
        assert!(matches!(
            h_measure_check(&f, GaugeFunction::Power(-1.0)),
            Err(CantorError::GaugeNotIncreasing { .. })
        ));
    }

    #[test]
    fn selector_contracts() {
        for gauge in [GaugeFunction::Sqrt, GaugeFunction::TLog] {
            let b = select_branching(gauge, 3).unwrap();
            let fam = NestedIntervalFamily::from_branching(b).unwrap();
            assert!(fam.reciprocal_sum() <= 0.2);
            assert!(h_measure_check(&fam, gauge).unwrap().pass);
        }
        assert!(matches!(
            select_branching(GaugeFunction::Linear, 3),
            Err(CantorError::SearchExhausted { level: 1, .. })
        ));
    }

    #[test]
    fn symbolic_and_stored_checks_agree() {
        let fam = build_nested_family(&[80, 80, 80], 3).unwrap();
        let stored = h_measure_check(&fam, GaugeFunction::Sqrt).unwrap();
        let mut symbolic = fam.clone();
        symbolic.generations = None;
        let sym = h_measure_check(&symbolic, GaugeFunction::Sqrt).unwrap();
        for (a, b) in stored.generations.iter().zip(&sym.generations) {
            assert_eq!(a.pass, b.pass);
            assert_abs_diff_eq!(a.ln_children_sum, b.ln_children_sum, epsilon = 1e-9);
        }
    }

    #[test]
    fn ahlfors_uniform_line() {
        let n = 1 << 10;
        let atoms: Vec<WeightedAtom> = (0..=n)
            .map(|i| WeightedAtom { pos: i as f64 / n as f64, mass: 1.0 / (n + 1) as f64 })
            .collect();
        let r = ahlfors_scan(&atoms, 1.0, &dyadic_radii(1, 6)).unwrap();
        assert!(r.constant <= 2.0, "C = {}", r.constant);
        assert!(matches!(ahlfors_scan(&atoms, 0.0, &[0.1]), Err(CantorError::NonPositiveExponent(_))));
        assert!(matches!(ahlfors_scan(&[], 1.0, &[0.1]), Err(CantorError::EmptyPointSet)));
    }

    #[test]
    fn ln_big() {
        let n = BigUint::from(3u32) << 200u32;
        assert_abs_diff_eq!(ln_biguint(&n), 3f64.ln() + 200.0 * std::f64::consts::LN_2, epsilon = 1e-12);
    }
}
