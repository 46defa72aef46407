//! Fuglede p-modulus of finite measure families, discrete modulus over ball
//! covers, Δ-exponent estimation and extremal length on grids.

use crate::geometry::{clip_polygon_to_rect, point_segment_distance, polygon_area, segment_box_range, segment_meets_open_box, Point2};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use crate::sparse::{cg, Csr};
use std::collections::{BinaryHeap, HashMap};
use thiserror::Error;

pub const MODULUS_SCHEMA_VERSION: u32 = 1;
pub const FEASIBILITY_TOL: f64 = 1e-8;
pub const GAP_TOL: f64 = 1e-6;
pub const MAX_SWEEPS: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModulusError {
    #[error("exponent p must exceed 1, got {0}")]
    InvalidExponent(f64),
    #[error("base measure has {got} weights for {expected} atoms")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("row {row} references atom {atom} out of range")]
    AtomOutOfRange { row: usize, atom: usize },
    #[error("negative or non-finite weight {value} ({place})")]
    BadWeight { value: f64, place: String },
    #[error("invalid cover: {0}")]
    InvalidCover(String),
    #[error("need at least 3 cover levels, got {0}")]
    TooFewLevels(usize),
    #[error("p grid must be increasing and exceed 1")]
    BadExponentGrid,
    #[error("resolution must be positive")]
    BadResolution,
    #[error("region is empty")]
    EmptyRegion,
}

/// Rows of `Λ`: row `i` lists `(atom, weight)` pairs of measure `λ_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasureFamily {
    pub n_atoms: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<[f64; 2]>>,
}

impl DiscreteMeasureFamily {
    pub fn new(n_atoms: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        DiscreteMeasureFamily { n_atoms, rows, positions: None }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n = rows.first().map_or(0, |r| r.len());
        let sparse = rows
            .iter()
            .map(|r| r.iter().enumerate().filter(|(_, w)| **w != 0.0).map(|(j, w)| (j, *w)).collect())
            .collect();
        DiscreteMeasureFamily::new(n, sparse)
    }

    /// Indices of rows without any positive weight.
    pub fn degenerate_rows(&self) -> Vec<usize> {
        (0..self.rows.len()).filter(|&i| !self.rows[i].iter().any(|(_, w)| *w > 0.0)).collect()
    }

    /// `(Λρ)_i` for every row.
    pub fn apply(&self, rho: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|(j, w)| w * rho[*j]).sum()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseMeasure {
    pub weights: Vec<f64>,
}

impl BaseMeasure {
    pub fn uniform(n: usize) -> Self {
        BaseMeasure { weights: vec![1.0; n] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    /// Some row has no positive weight; the modulus is `+∞`.
    Infinite,
    NotConverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub iteration: usize,
    pub primal: f64,
    pub dual: f64,
    pub worst_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusResult {
    pub schema_version: u32,
    pub status: SolveStatus,
    #[serde(with = "crate::ext_real")]
    pub value: f64,
    pub dual_bound: f64,
    pub rho: Vec<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
    #[serde(with = "crate::ext_real")]
    pub certified_gap: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degenerate_row: Option<usize>,
    #[serde(skip)]
    pub dual: Vec<f64>,
    #[serde(skip)]
    pub ledger: Vec<LedgerRow>,
}

impl ModulusResult {
    fn infinite(n_atoms: usize, n_rows: usize, row: usize) -> Self {
        ModulusResult {
            schema_version: MODULUS_SCHEMA_VERSION,
            status: SolveStatus::Infinite,
            value: f64::INFINITY,
            dual_bound: f64::INFINITY,
            rho: vec![0.0; n_atoms],
            active: vec![],
            iterations: 0,
            certified_gap: 0.0,
            degenerate_row: Some(row),
            dual: vec![0.0; n_rows],
            ledger: vec![],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub gap_tol: f64,
    pub max_sweeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { gap_tol: GAP_TOL, max_sweeps: MAX_SWEEPS }
    }
}

fn check_weight(value: f64, place: impl FnOnce() -> String) -> Result<(), ModulusError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(ModulusError::BadWeight { value, place: place() })
    }
}

/// Minimize `Σ μ_j ρ_j^p` subject to `Λρ ≥ 1`, `ρ ≥ 0`.
pub fn solve_modulus(
    family: &DiscreteMeasureFamily,
    base: &BaseMeasure,
    p: f64,
) -> Result<ModulusResult, ModulusError> {
    solve_modulus_with(family, base, p, &SolverOptions::default(), None)
}

/// Cyclic coordinate ascent on the dual
/// `D(y) = Σ y_i − (p−1) Σ μ_j ρ_j(y)^p`, `ρ_j(y) = (g_j / pμ_j)^{1/(p−1)}`,
/// `g = Λᵀy`. Each sweep is certified by rescaling `ρ(y)` to a feasible point.
pub fn solve_modulus_with(
    family: &DiscreteMeasureFamily,
    base: &BaseMeasure,
    p: f64,
    opts: &SolverOptions,
    warm: Option<&[f64]>,
) -> Result<ModulusResult, ModulusError> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(ModulusError::InvalidExponent(p));
    }
    let n = family.n_atoms;
    if base.weights.len() != n {
        return Err(ModulusError::DimensionMismatch { expected: n, got: base.weights.len() });
    }
    for (j, &w) in base.weights.iter().enumerate() {
        check_weight(w, || format!("base weight of atom {j}"))?;
    }
    for (i, row) in family.rows.iter().enumerate() {
        for &(j, w) in row {
            if j >= n {
                return Err(ModulusError::AtomOutOfRange { row: i, atom: j });
            }
            check_weight(w, || format!("row {i}, atom {j}"))?;
        }
    }
    let n_rows = family.rows.len();
    if let Some(&row) = family.degenerate_rows().first() {
        return Ok(ModulusResult::infinite(n, n_rows, row));
    }

    let mu = &base.weights;
    // Atoms of zero mass make every row touching them free.
    let mut free_rho = vec![0.0f64; n];
    let mut rows: Vec<(usize, Vec<(usize, f64)>)> = Vec::new();
    for (i, row) in family.rows.iter().enumerate() {
        let free = row.iter().filter(|(j, w)| *w > 0.0 && mu[*j] == 0.0).map(|(j, w)| (*j, 1.0 / w)).next();
        match free {
            Some((j, need)) => free_rho[j] = free_rho[j].max(need),
            None => rows.push((i, row.iter().filter(|(_, w)| *w > 0.0).cloned().collect())),
        }
    }

    let q = 1.0 / (p - 1.0);
    let rho_of = |g: f64, m: f64| if g > 0.0 { (g / (p * m)).powf(q) } else { 0.0 };

    let mut y: Vec<f64> = match warm {
        Some(w) => rows.iter().map(|(i, _)| w.get(*i).copied().unwrap_or(0.0).max(0.0)).collect(),
        None => vec![0.0; rows.len()],
    };
    let mut g = vec![0.0f64; n];
    for ((_, row), yi) in rows.iter().zip(&y) {
        for &(j, w) in row {
            g[j] += w * yi;
        }
    }

    let mut ledger = Vec::new();
    let mut status = SolveStatus::NotConverged;
    let mut sweeps = 0;
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    if rows.is_empty() {
        status = SolveStatus::Converged;
        best = Some((0.0, 0.0, vec![0.0; n]));
    }
    while status != SolveStatus::Converged && sweeps < opts.max_sweeps {
        sweeps += 1;
        for (k, (_, row)) in rows.iter().enumerate() {
            let old = y[k];
            for &(j, w) in row {
                g[j] -= w * old;
            }
            let phi = |t: f64| -> f64 { row.iter().map(|&(j, w)| w * rho_of(g[j] + w * t, mu[j])).sum() };
            let t = if phi(0.0) >= 1.0 {
                0.0
            } else {
                solve_row(row, &g, mu, p, q, old, &phi)
            };
            y[k] = t;
            for &(j, w) in row {
                g[j] += w * t;
            }
        }
        // certificate
        let rho: Vec<f64> = (0..n).map(|j| if mu[j] > 0.0 { rho_of(g[j], mu[j]) } else { 0.0 }).collect();
        let min_row = rows
            .iter()
            .map(|(_, row)| row.iter().map(|&(j, w)| w * rho[j]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let energy: f64 = (0..n).filter(|&j| mu[j] > 0.0).map(|j| mu[j] * rho[j].powf(p)).sum();
        let dual = y.iter().sum::<f64>() - (p - 1.0) * energy;
        let primal = if min_row > 0.0 { energy / min_row.powf(p) } else { f64::INFINITY };
        ledger.push(LedgerRow { iteration: sweeps, primal, dual, worst_violation: (1.0 - min_row).max(0.0) });
        if primal.is_finite() {
            let gap = (primal - dual) / primal.max(f64::MIN_POSITIVE);
            if best.as_ref().map_or(true, |b| primal < b.0) {
                best = Some((primal, dual, rho.iter().map(|r| r / min_row).collect()));
            } else if let Some(b) = best.as_mut() {
                b.1 = b.1.max(dual);
            }
            if gap <= opts.gap_tol {
                status = SolveStatus::Converged;
            }
        }
    }
    let (value, dual_bound, mut rho) = best.unwrap_or((f64::INFINITY, 0.0, vec![0.0; n]));
    for j in 0..n {
        if mu[j] == 0.0 {
            rho[j] = free_rho[j];
        }
    }
    let certified_gap = if value > 0.0 { ((value - dual_bound) / value).max(0.0) } else { 0.0 };
    let lam = family.apply(&rho);
    let active = (0..n_rows).filter(|&i| lam[i] <= 1.0 + 1e-6).collect();
    let mut dual_full = vec![0.0; n_rows];
    for ((i, _), yi) in rows.iter().zip(&y) {
        dual_full[*i] = *yi;
    }
    Ok(ModulusResult {
        schema_version: MODULUS_SCHEMA_VERSION,
        status,
        value,
        dual_bound,
        rho,
        active,
        iterations: sweeps,
        certified_gap,
        degenerate_row: None,
        dual: dual_full,
        ledger,
    })
}

/// Root of `φ(t) = 1` on `t > 0` for an increasing `φ` with `φ(0) < 1`:
/// safeguarded Newton inside a doubling bracket.
fn solve_row(
    row: &[(usize, f64)],
    g: &[f64],
    mu: &[f64],
    p: f64,
    q: f64,
    guess: f64,
    phi: &dyn Fn(f64) -> f64,
) -> f64 {
    let dphi = |t: f64| -> f64 {
        row.iter()
            .map(|&(j, w)| {
                let s = (g[j] + w * t).max(0.0);
                let c = p * mu[j];
                w * w * q / c * (s / c).powf(q - 1.0)
            })
            .sum()
    };
    let (mut lo, mut hi) = (0.0f64, guess.max(1e-300));
    while phi(hi) < 1.0 {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return lo;
        }
    }
    let mut t = if guess > lo && guess < hi { guess } else { 0.5 * (lo + hi) };
    for _ in 0..200 {
        let f = phi(t) - 1.0;
        if f.abs() <= 1e-14 {
            break;
        }
        if f < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        if hi - lo <= 1e-16 * hi {
            break;
        }
        let d = dphi(t);
        let newton = t - f / d;
        t = if d.is_finite() && d > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    t
}

/// CSV text of a solver ledger: `iteration,primal,dual,worst_violation`.
pub fn ledger_csv(rows: &[LedgerRow]) -> String {
    let mut s = String::from("iteration,primal,dual,worst_violation\n");
    for r in rows {
        s.push_str(&format!("{},{:e},{:e},{:e}\n", r.iteration, r.primal, r.dual, r.worst_violation));
    }
    s
}

/// Modulus of the product family `{λ_y}` on `E × Y`: `ν(Y)/λ(E)^{p−1}`.
pub fn product_modulus_exact(lambda_e: f64, nu_y: f64, p: f64) -> f64 {
    nu_y / lambda_e.powf(p - 1.0)
}

/// Discrete product family: atoms `(a, y)` with mass `λ_a ν_y`, one row per
/// `y` carrying `λ_a` on the fiber `E × {y}`.
pub fn product_family(lambda: &[f64], nu: &[f64]) -> (DiscreteMeasureFamily, BaseMeasure) {
    let ne = lambda.len();
    let rows = (0..nu.len()).map(|y| (0..ne).map(|a| (y * ne + a, lambda[a])).collect()).collect();
    let weights = nu.iter().flat_map(|v| lambda.iter().map(move |l| l * v)).collect();
    (DiscreteMeasureFamily::new(ne * nu.len(), rows), BaseMeasure { weights })
}

/// Brute-force lower bound by grid search over mixtures of the measures.
///
/// For `q` in the simplex, Hölder gives `Σ μ_j ρ_j^p ≥ (Σ μ_j^{1−p'} g_j^{p'})^{−(p−1)}`
/// with `g = Λᵀq`, `p' = p/(p−1)`, for every admissible `ρ`; the modulus is the
/// supremum over `q`. `divisions` sets the simplex pitch `1/divisions`.
/// Atoms of zero mass that some measure charges make the bound `+∞`.
pub fn mixture_grid_bound(family: &DiscreteMeasureFamily, base: &BaseMeasure, p: f64, divisions: usize) -> f64 {
    let r = family.rows.len();
    if r == 0 {
        return 0.0;
    }
    let pc = p / (p - 1.0);
    let mut best = 0.0f64;
    let mut q = vec![0usize; r];
    let mut g = vec![0.0; family.n_atoms];
    fn walk(
        i: usize,
        left: usize,
        q: &mut Vec<usize>,
        g: &mut [f64],
        fam: &DiscreteMeasureFamily,
        base: &BaseMeasure,
        p: f64,
        pc: f64,
        m: usize,
        best: &mut f64,
    ) {
        if i + 1 == q.len() {
            q[i] = left;
            g.iter_mut().for_each(|v| *v = 0.0);
            for (row, &qi) in fam.rows.iter().zip(q.iter()) {
                for &(j, w) in row {
                    g[j] += w * qi as f64 / m as f64;
                }
            }
            let mut phi = 0.0;
            for (j, &gj) in g.iter().enumerate() {
                if gj > 0.0 {
                    let mu = base.weights[j];
                    if mu == 0.0 {
                        *best = f64::INFINITY;
                        return;
                    }
                    phi += mu.powf(1.0 - pc) * gj.powf(pc);
                }
            }
            if phi > 0.0 {
                *best = best.max(phi.powf(-(p - 1.0)));
            } else {
                *best = f64::INFINITY;
            }
            return;
        }
        for v in 0..=left {
            q[i] = v;
            walk(i + 1, left - v, q, g, fam, base, p, pc, m, best);
        }
    }
    walk(0, divisions, &mut q, &mut g, family, base, p, pc, divisions, &mut best);
    best
}

/// An `L∞` ball (axis-aligned square) in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquareBall {
    pub center: [f64; 2],
    pub radius: f64,
}

impl SquareBall {
    fn shrunk(&self, s: f64) -> (f64, f64, f64, f64) {
        let r = s * self.radius;
        (self.center[0] - r, self.center[1] - r, self.center[0] + r, self.center[1] + r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallCover {
    pub balls: Vec<SquareBall>,
    /// Incidence uses the open ball `s·B`.
    pub shrink: f64,
    pub delta: f64,
}

impl BallCover {
    pub fn new(balls: Vec<SquareBall>, shrink: f64, delta: f64) -> Result<Self, ModulusError> {
        let cover = BallCover { balls, shrink, delta };
        cover.validate()?;
        Ok(cover)
    }

    /// Dyadic squares of side `2^{−level}` tiling `[0,1]^dim` (`dim` 1 or 2;
    /// in dimension 1 the squares are centered on the x-axis). With `s = 1`
    /// the open squares are disjoint.
    pub fn dyadic(level: u32, dim: usize, shrink: f64) -> Result<Self, ModulusError> {
        let k = 1usize << level;
        let side = 1.0 / k as f64;
        let r = 0.5 * side;
        let rows = if dim == 1 { 1 } else { k };
        let mut balls = Vec::with_capacity(k * rows);
        for j in 0..rows {
            for i in 0..k {
                let cy = if dim == 1 { 0.0 } else { (j as f64 + 0.5) * side };
                balls.push(SquareBall { center: [(i as f64 + 0.5) * side, cy], radius: r });
            }
        }
        BallCover::new(balls, shrink, r)
    }

    pub fn validate(&self) -> Result<(), ModulusError> {
        if !(self.shrink > 0.0 && self.shrink <= 1.0) {
            return Err(ModulusError::InvalidCover(format!("shrink {} outside (0,1]", self.shrink)));
        }
        for (i, b) in self.balls.iter().enumerate() {
            if !(b.radius > 0.0 && b.radius <= self.delta * (1.0 + 1e-12)) {
                return Err(ModulusError::InvalidCover(format!("ball {i} radius {} exceeds δ {}", b.radius, self.delta)));
            }
        }
        // sweep over x for pairwise disjointness of the open shrunken squares
        let mut order: Vec<usize> = (0..self.balls.len()).collect();
        order.sort_by(|&a, &b| self.balls[a].center[0].total_cmp(&self.balls[b].center[0]));
        let rmax = self.balls.iter().map(|b| b.radius).fold(0.0, f64::max) * self.shrink;
        for (k, &a) in order.iter().enumerate() {
            let (ax0, ay0, ax1, ay1) = self.balls[a].shrunk(self.shrink);
            for &b in &order[k + 1..] {
                let (bx0, by0, bx1, by1) = self.balls[b].shrunk(self.shrink);
                if bx0 >= ax1 && self.balls[b].center[0] - rmax >= ax1 {
                    break;
                }
                let overlap = ax0 < bx1 && bx0 < ax1 && ay0 < by1 && by0 < ay1;
                if overlap {
                    return Err(ModulusError::InvalidCover(format!("shrunken balls {a} and {b} overlap")));
                }
            }
        }
        Ok(())
    }
}

/// A subset of the plane, for incidence with open squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetShape {
    Points(Vec<[f64; 2]>),
    Segments(Vec<[[f64; 2]; 2]>),
}

impl SetShape {
    fn meets_open_box(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> bool {
        match self {
            SetShape::Points(ps) => ps.iter().any(|p| p[0] > x0 && p[0] < x1 && p[1] > y0 && p[1] < y1),
            SetShape::Segments(ss) => ss.iter().any(|s| {
                let a = Point2::new(s[0][0], s[0][1]);
                let b = Point2::new(s[1][0], s[1][1]);
                segment_meets_open_box(a, b, x0, y0, x1, y1)
            }),
        }
    }
}

/// 0/1 incidence of every set with the shrunken balls.
pub fn incidence(sets: &[SetShape], cover: &BallCover) -> Vec<Vec<usize>> {
    sets.iter()
        .map(|e| {
            (0..cover.balls.len())
                .filter(|&b| {
                    let (x0, y0, x1, y1) = cover.balls[b].shrunk(cover.shrink);
                    e.meets_open_box(x0, y0, x1, y1)
                })
                .collect()
        })
        .collect()
}

/// Discrete modulus `dmod_p^δ`: minimize `Σ_B v(B)^p` with
/// `Σ_{sB ∩ E ≠ ∅} v(B) ≥ 1` for every set `E`, and `v ≤ 1`.
pub fn discrete_modulus(sets: &[SetShape], cover: &BallCover, p: f64) -> Result<ModulusResult, ModulusError> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(ModulusError::InvalidExponent(p));
    }
    cover.validate()?;
    let inc = incidence(sets, cover);
    if let Some(i) = inc.iter().position(|r| r.is_empty()) {
        return Ok(ModulusResult::infinite(cover.balls.len(), sets.len(), i));
    }
    // identical incidence rows are the same constraint
    let mut unique: HashMap<&[usize], usize> = HashMap::new();
    let mut rows = Vec::new();
    for r in &inc {
        unique.entry(r.as_slice()).or_insert_with(|| {
            rows.push(r.iter().map(|&b| (b, 1.0)).collect::<Vec<_>>());
            rows.len() - 1
        });
    }
    let family = DiscreteMeasureFamily::new(cover.balls.len(), rows);
    let mut res = solve_modulus(&family, &BaseMeasure::uniform(cover.balls.len()), p)?;
    for v in res.rho.iter_mut() {
        *v = v.min(1.0);
    }
    let value: f64 = res.rho.iter().map(|v| v.powf(p)).sum();
    if value < res.value {
        res.value = value;
    }
    let lam = family.apply(&res.rho);
    res.active = (0..sets.len())
        .filter(|&i| lam[unique[inc[i].as_slice()]] <= 1.0 + 1e-6)
        .collect();
    Ok(res)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaStatus {
    /// Trend flips inside the grid.
    Finite,
    /// Bounded away from 0 for every p on the grid.
    Infinite,
    /// Already decaying at the smallest p; the estimate is an upper bound.
    BelowGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub p: f64,
    #[serde(with = "vec_ext_real")]
    pub values: Vec<f64>,
    /// Least-squares slope of `log dmod` against `log(1/δ)`.
    #[serde(with = "crate::ext_real")]
    pub slope: f64,
}

mod vec_ext_real {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct W(#[serde(with = "crate::ext_real")] f64);

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|x| W(*x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<W>::deserialize(d)?.into_iter().map(|w| w.0).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaEstimate {
    pub status: DeltaStatus,
    #[serde(with = "crate::ext_real")]
    pub delta: f64,
    pub deltas: Vec<f64>,
    pub table: Vec<DeltaRow>,
    /// `(level, p)` pairs where `dmod_p` exceeds `dmod` at the previous p.
    pub monotonicity_violations: Vec<(usize, f64)>,
}

/// A slope above `−BOUNDED_SLOPE_TOL` counts as bounded away from 0.
pub const BOUNDED_SLOPE_TOL: f64 = 0.05;

fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Estimate `Δ = inf{p : dmod_p = 0}` from a refining sequence of covers.
pub fn delta_exponent(sets: &[SetShape], covers: &[BallCover], p_grid: &[f64]) -> Result<DeltaEstimate, ModulusError> {
    if covers.len() < 3 {
        return Err(ModulusError::TooFewLevels(covers.len()));
    }
    if p_grid.is_empty() || p_grid[0] <= 1.0 || p_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ModulusError::BadExponentGrid);
    }
    let x: Vec<f64> = covers.iter().map(|c| -c.delta.ln()).collect();
    let mut table = Vec::with_capacity(p_grid.len());
    for &p in p_grid {
        let values = covers
            .iter()
            .map(|c| discrete_modulus(sets, c, p).map(|r| r.value))
            .collect::<Result<Vec<_>, _>>()?;
        let slope = if values.iter().any(|v| !v.is_finite()) {
            f64::INFINITY
        } else {
            let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
            ls_slope(&x, &y)
        };
        table.push(DeltaRow { p, values, slope });
    }
    let mut violations = Vec::new();
    for w in 1..table.len() {
        for lvl in 0..covers.len() {
            let (a, b) = (table[w - 1].values[lvl], table[w].values[lvl]);
            if b > a * (1.0 + 1e-6) + 1e-12 {
                violations.push((lvl, table[w].p));
            }
        }
    }
    let first_decay = table.iter().position(|r| r.slope < -BOUNDED_SLOPE_TOL);
    let (status, delta) = match first_decay {
        None => (DeltaStatus::Infinite, f64::INFINITY),
        Some(0) => (DeltaStatus::BelowGrid, p_grid[0]),
        Some(k) => {
            let (a, b) = (&table[k - 1], &table[k]);
            let d = if a.slope >= 0.0 && a.slope.is_finite() {
                a.p + (b.p - a.p) * a.slope / (a.slope - b.slope)
            } else if a.slope.is_infinite() {
                b.p
            } else {
                a.p
            };
            (DeltaStatus::Finite, d)
        }
    };
    Ok(DeltaEstimate {
        status,
        delta,
        deltas: covers.iter().map(|c| c.delta).collect(),
        table,
        monotonicity_violations: violations,
    })
}

/// Region for grid extremal length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionShape {
    /// Unit cells `[i, i+1] × [j, j+1]`.
    Cells(Vec<(i64, i64)>),
    /// Simple polygon; subcells carry their covered area fraction.
    Polygon(Vec<Point2>),
}

/// Node grid: subcells of side `1/resolution` with their area weights.
#[derive(Debug, Clone)]
pub struct GridGraph {
    pub h: f64,
    pub origin: (i64, i64),
    pub width: usize,
    pub height: usize,
    /// `-1` for excluded subcells, otherwise node id.
    pub id: Vec<i64>,
    pub coords: Vec<(usize, usize)>,
    pub mass: Vec<f64>,
}

impl GridGraph {
    pub fn build(region: &RegionShape, resolution: usize) -> Result<Self, ModulusError> {
        if resolution == 0 {
            return Err(ModulusError::BadResolution);
        }
        let r = resolution as i64;
        let h = 1.0 / resolution as f64;
        let (ix0, iy0, ix1, iy1) = match region {
            RegionShape::Cells(cells) => {
                if cells.is_empty() {
                    return Err(ModulusError::EmptyRegion);
                }
                let x0 = cells.iter().map(|c| c.0).min().unwrap();
                let y0 = cells.iter().map(|c| c.1).min().unwrap();
                let x1 = cells.iter().map(|c| c.0).max().unwrap() + 1;
                let y1 = cells.iter().map(|c| c.1).max().unwrap() + 1;
                (x0 * r, y0 * r, x1 * r, y1 * r)
            }
            RegionShape::Polygon(poly) => {
                if poly.len() < 3 {
                    return Err(ModulusError::EmptyRegion);
                }
                let f = |g: fn(f64, f64) -> f64, s: fn(&Point2) -> f64, init: f64| poly.iter().map(s).fold(init, g);
                let x0 = (f(f64::min, |p| p.x, f64::INFINITY) / h).floor() as i64;
                let y0 = (f(f64::min, |p| p.y, f64::INFINITY) / h).floor() as i64;
                let x1 = (f(f64::max, |p| p.x, f64::NEG_INFINITY) / h).ceil() as i64;
                let y1 = (f(f64::max, |p| p.y, f64::NEG_INFINITY) / h).ceil() as i64;
                (x0, y0, x1, y1)
            }
        };
        let (width, height) = ((ix1 - ix0) as usize, (iy1 - iy0) as usize);
        let mut cover = vec![0.0f64; width * height];
        match region {
            RegionShape::Cells(cells) => {
                for &(cx, cy) in cells {
                    for dy in 0..r {
                        for dx in 0..r {
                            let (x, y) = ((cx * r + dx - ix0) as usize, (cy * r + dy - iy0) as usize);
                            cover[y * width + x] = 1.0;
                        }
                    }
                }
            }
            RegionShape::Polygon(poly) => {
                let sign = polygon_area(poly).signum();
                for y in 0..height {
                    let y0 = (iy0 + y as i64) as f64 * h;
                    for x in 0..width {
                        let x0 = (ix0 + x as i64) as f64 * h;
                        let c = clip_polygon_to_rect(poly, x0, y0, x0 + h, y0 + h);
                        if c.len() >= 3 {
                            cover[y * width + x] = (sign * polygon_area(&c) / (h * h)).clamp(0.0, 1.0);
                        }
                    }
                }
            }
        }
        let mut id = vec![-1i64; width * height];
        let mut coords = Vec::new();
        let mut mass = Vec::new();
        for y in 0..height {
            for x in 0..width {
                let c = cover[y * width + x];
                if c > 1e-12 {
                    id[y * width + x] = coords.len() as i64;
                    coords.push((x, y));
                    mass.push(c * h * h);
                }
            }
        }
        if coords.is_empty() {
            return Err(ModulusError::EmptyRegion);
        }
        Ok(GridGraph { h, origin: (ix0, iy0), width, height, id, coords, mass })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    fn node(&self, x: i64, y: i64) -> Option<usize> {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return None;
        }
        let v = self.id[y as usize * self.width + x as usize];
        (v >= 0).then_some(v as usize)
    }

    pub fn center(&self, v: usize) -> Point2 {
        let (x, y) = self.coords[v];
        Point2::new(
            ((self.origin.0 + x as i64) as f64 + 0.5) * self.h,
            ((self.origin.1 + y as i64) as f64 + 0.5) * self.h,
        )
    }

    /// Neighbors with step length; diagonals only across two present
    /// orthogonal neighbors.
    fn neighbors(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (x, y) = (self.coords[v].0 as i64, self.coords[v].1 as i64);
        let h = self.h;
        const DIRS: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
        DIRS.iter().filter_map(move |&(dx, dy)| {
            let u = self.node(x + dx, y + dy)?;
            if dx != 0 && dy != 0 {
                self.node(x + dx, y)?;
                self.node(x, y + dy)?;
                Some((u, h * std::f64::consts::SQRT_2))
            } else {
                Some((u, h))
            }
        })
    }

    /// Nodes whose closed subcell meets the polyline, with the distance from
    /// the subcell center to the polyline (the terminal stub length).
    pub fn terminals(&self, arc: &[Point2]) -> Vec<(usize, f64)> {
        let h = self.h;
        (0..self.len())
            .filter_map(|v| {
                let c = self.center(v);
                // slightly enlarged so arcs on subcell edges are not lost to rounding
                let e = 0.5 * h * (1.0 + 1e-9);
                let touches =
                    arc.windows(2).any(|s| segment_box_range(s[0], s[1], c.x - e, c.y - e, c.x + e, c.y + e).is_some());
                touches.then(|| {
                    let d = arc.windows(2).map(|s| point_segment_distance(c, s[0], s[1])).fold(f64::INFINITY, f64::min);
                    (v, d)
                })
            })
            .collect()
    }
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0).then_with(|| o.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Multi-source Dijkstra from the start terminals; returns distances and
/// predecessors.
fn dijkstra(g: &GridGraph, rho: &[f64], starts: &[(usize, f64)]) -> (Vec<f64>, Vec<usize>) {
    let n = g.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    for &(v, stub) in starts {
        let d = rho[v] * stub;
        if d < dist[v] {
            dist[v] = d;
            heap.push(HeapItem(d, v));
        }
    }
    while let Some(HeapItem(d, v)) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        for (u, step) in g.neighbors(v) {
            let nd = d + 0.5 * (rho[v] + rho[u]) * step;
            if nd < dist[u] {
                dist[u] = nd;
                pred[u] = v;
                heap.push(HeapItem(nd, u));
            }
        }
    }
    (dist, pred)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremalLengthResult {
    /// Flow energy: an upper bound on the extremal length.
    #[serde(with = "crate::ext_real")]
    pub lambda: f64,
    /// `d_ρ² / Σμρ²` for the final metric: a lower bound.
    #[serde(with = "crate::ext_real")]
    pub lambda_lower: f64,
    pub modulus: f64,
    pub nodes: usize,
    pub iterations: usize,
    pub status: SolveStatus,
    pub certified_gap: f64,
}

pub const EXTREMAL_GAP_TOL: f64 = 1e-6;
pub const EXTREMAL_MAX_ITER: usize = 5000;

/// Extremal length `λ = 1/m_2` of the grid paths joining two boundary arcs.
pub fn extremal_length_grid(
    region: &RegionShape,
    resolution: usize,
    start: &[Point2],
    end: &[Point2],
) -> Result<ExtremalLengthResult, ModulusError> {
    let g = GridGraph::build(region, resolution)?;
    extremal_length_on(&g, start, end, EXTREMAL_GAP_TOL)
}

// Graph edge for the flow form; endpoints `n` and `n + 1` are the source
// and sink, and `c` is the share of the edge length charged to each end.
struct FlowEdge {
    a: usize,
    b: usize,
    ca: f64,
    cb: f64,
}

/// Solves `λ = min Σ_j n_j²/μ_j` over unit flows between the arcs, where
/// `n_j` is the length-weighted flow through node `j`. Alternates between
/// the electrical flow for fixed splitting weights and the closed-form
/// weight update. Each iterate is certified: the flow energy bounds `λ` from
/// above and `ρ = n/μ` normalized by its shortest path from below.
pub fn extremal_length_on(
    g: &GridGraph,
    start: &[Point2],
    end: &[Point2],
    gap_tol: f64,
) -> Result<ExtremalLengthResult, ModulusError> {
    let n = g.len();
    let starts = g.terminals(start);
    let ends = g.terminals(end);
    let done = |lambda: f64, lower: f64, iterations, status, gap| ExtremalLengthResult {
        lambda,
        lambda_lower: lower,
        modulus: 1.0 / lambda,
        nodes: n,
        iterations,
        status,
        certified_gap: gap,
    };
    let (src, snk) = (n, n + 1);
    let mut fixed: Vec<Option<f64>> = vec![None; n + 2];
    fixed[src] = Some(1.0);
    fixed[snk] = Some(0.0);
    let mut edges = Vec::new();
    for v in 0..n {
        for (u, step) in g.neighbors(v) {
            if u > v {
                edges.push(FlowEdge { a: v, b: u, ca: 0.5 * step, cb: 0.5 * step });
            }
        }
    }
    for &(v, stub) in &starts {
        if stub > 0.0 {
            edges.push(FlowEdge { a: src, b: v, ca: 0.0, cb: stub });
        } else {
            fixed[v] = Some(1.0);
        }
    }
    for &(v, stub) in &ends {
        if stub > 0.0 {
            edges.push(FlowEdge { a: v, b: snk, ca: stub, cb: 0.0 });
        } else if fixed[v] == Some(1.0) {
            return Ok(done(0.0, 0.0, 0, SolveStatus::Converged, 0.0));
        } else {
            fixed[v] = Some(0.0);
        }
    }
    // connectivity from the source side to the sink side
    {
        let mut adj = vec![Vec::new(); n + 2];
        for e in &edges {
            adj[e.a].push(e.b);
            adj[e.b].push(e.a);
        }
        let mut seen = vec![false; n + 2];
        let mut stack: Vec<usize> = (0..n + 2).filter(|&v| fixed[v] == Some(1.0)).collect();
        for &v in &stack {
            seen[v] = true;
        }
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if !seen[u] && fixed[u] != Some(1.0) {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        let reached = (0..n + 2).any(|v| seen[v] && fixed[v] == Some(0.0));
        if !reached {
            return Ok(done(f64::INFINITY, f64::INFINITY, 0, SolveStatus::Infinite, 0.0));
        }
    }
    // only nodes on some source-sink route matter; others carry no flow
    let mu = &g.mass;
    let mut deg = vec![0usize; n + 2];
    for e in &edges {
        if e.ca > 0.0 {
            deg[e.a] += 1;
        }
        if e.cb > 0.0 {
            deg[e.b] += 1;
        }
    }
    let mut theta: Vec<[f64; 2]> =
        edges.iter().map(|e| [1.0 / deg[e.a].max(1) as f64, 1.0 / deg[e.b].max(1) as f64]).collect();
    let free: Vec<usize> = (0..n).filter(|&v| fixed[v].is_none()).collect();
    let mut slot = vec![usize::MAX; n + 2];
    for (i, &v) in free.iter().enumerate() {
        slot[v] = i;
    }
    let mut phi_free = vec![0.5; free.len()];
    let mut phi = vec![0.0; n + 2];
    let mut best = (f64::INFINITY, 0.0);
    let mut status = SolveStatus::NotConverged;
    let mut iterations = 0;
    for it in 0..EXTREMAL_MAX_ITER {
        iterations = it + 1;
        let kappa: Vec<f64> = edges
            .iter()
            .zip(&theta)
            .map(|(e, th)| {
                let mut r = 0.0;
                if e.ca > 0.0 {
                    r += e.ca * e.ca / (th[0] * mu[e.a]);
                }
                if e.cb > 0.0 {
                    r += e.cb * e.cb / (th[1] * mu[e.b]);
                }
                1.0 / r
            })
            .collect();
        let mut trip = Vec::with_capacity(4 * edges.len());
        let mut rhs = vec![0.0; free.len()];
        for (e, &k) in edges.iter().zip(&kappa) {
            for (x, y) in [(e.a, e.b), (e.b, e.a)] {
                if slot[x] == usize::MAX {
                    continue;
                }
                trip.push((slot[x], slot[x], k));
                match fixed[y] {
                    Some(val) => rhs[slot[x]] += k * val,
                    None if slot[y] != usize::MAX => trip.push((slot[x], slot[y], -k)),
                    None => {}
                }
            }
        }
        let lap = Csr::from_triplets(free.len(), trip);
        cg(&lap, &rhs, &mut phi_free, 1e-12, 20 * free.len() + 100);
        for v in 0..n + 2 {
            phi[v] = match fixed[v] {
                Some(val) => val,
                None => phi_free[slot[v]],
            };
        }
        let flow: Vec<f64> = edges.iter().zip(&kappa).map(|(e, k)| k * (phi[e.a] - phi[e.b])).collect();
        let current: f64 = edges.iter().zip(&flow).map(|(e, f)| f * (phi[e.a] - phi[e.b])).sum();
        if current <= 0.0 {
            return Ok(done(f64::INFINITY, f64::INFINITY, iterations, SolveStatus::Infinite, 0.0));
        }
        let mut usage = vec![0.0; n + 2];
        for (e, f) in edges.iter().zip(&flow) {
            usage[e.a] += e.ca * f.abs();
            usage[e.b] += e.cb * f.abs();
        }
        let upper: f64 = (0..n).map(|j| (usage[j] / current).powi(2) / mu[j]).sum();
        let rho: Vec<f64> = (0..n).map(|j| usage[j] / current / mu[j]).collect();
        let mass: f64 = (0..n).map(|j| mu[j] * rho[j] * rho[j]).sum();
        let (dist, _) = dijkstra(g, &rho, &starts);
        let short = ends.iter().map(|&(v, stub)| dist[v] + rho[v] * stub).fold(f64::INFINITY, f64::min);
        let lower = short * short / mass;
        if upper < best.0 {
            best.0 = upper;
        }
        if lower > best.1 {
            best.1 = lower;
        }
        if (best.0 - best.1) / best.0 <= gap_tol {
            status = SolveStatus::Converged;
            break;
        }
        for ((e, f), th) in edges.iter().zip(&flow).zip(theta.iter_mut()) {
            for (k, (j, c)) in [(e.a, e.ca), (e.b, e.cb)].into_iter().enumerate() {
                if c > 0.0 && usage[j] > 0.0 {
                    let w = c * f.abs() / usage[j];
                    th[k] = (w + 1e-12 / deg[j] as f64) / (1.0 + 1e-12);
                }
            }
        }
    }
    let gap = (best.0 - best.1) / best.0;
    Ok(done(best.0, best.1, iterations, status, gap))
}
