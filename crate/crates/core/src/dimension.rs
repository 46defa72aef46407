//! Box-counting and mass-distribution dimension estimates, and checks of the
//! fiber dimension bounds against them.
//!
//! Estimates here are box dimensions; for the self-similar sets used in this
//! crate they agree with Hausdorff dimension, but each report says which
//! quantity it measured.

use crate::geometry::Point2;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

pub const DIMENSION_SCHEMA_VERSION: u32 = 1;

/// Above this RMS residual (log2 units) a box-count slope is diagnostic only.
pub const HEADLINE_RESIDUAL: f64 = 0.1;

/// Bisection stops when the bracket on `s` is narrower than this.
pub const MASS_EXPONENT_PITCH: f64 = 1e-3;

/// Upper end of the bisection bracket for `s`.
pub const MASS_EXPONENT_MAX: f64 = 16.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DimensionError {
    #[error("scale window [{lo}, {hi}] has fewer than 4 octaves")]
    DegenerateWindow { lo: u32, hi: u32 },
    #[error("empty point set")]
    Empty,
    #[error("non-finite point at index {0}")]
    NonFinite(usize),
    #[error("mass ledger needs rows from at least two generations")]
    SingleGeneration,
    #[error("mass ledger has no usable rows")]
    EmptyLedger,
    #[error("parameters out of range: {0}")]
    OutOfRange(String),
}

/// Octaves `lo..=hi`; octave `j` means boxes of side `2^{−j}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScaleWindow {
    pub lo: u32,
    pub hi: u32,
}

impl ScaleWindow {
    pub fn new(lo: u32, hi: u32) -> Result<Self, DimensionError> {
        if hi < lo + 3 {
            return Err(DimensionError::DegenerateWindow { lo, hi });
        }
        Ok(ScaleWindow { lo, hi })
    }

    /// Drop the top and bottom octave of `[lo, hi]`.
    pub fn trimmed(lo: u32, hi: u32) -> Result<Self, DimensionError> {
        if hi < lo + 2 {
            return Err(DimensionError::DegenerateWindow { lo, hi });
        }
        Self::new(lo + 1, hi - 1)
    }

    pub fn octaves(&self) -> impl Iterator<Item = u32> {
        self.lo..=self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxCountResult {
    pub schema_version: u32,
    pub quantity: &'static str,
    pub window: ScaleWindow,
    pub scales: Vec<f64>,
    pub counts: Vec<usize>,
    pub slope: f64,
    pub intercept: f64,
    /// RMS of the fit residuals in log2 units.
    pub residual: f64,
    pub slope_stderr: f64,
    /// `slope ± 2·stderr`.
    pub band: (f64, f64),
    /// The slope, or `None` when the residual is above [`HEADLINE_RESIDUAL`].
    pub headline: Option<f64>,
}

fn check_points(points: &[Point2]) -> Result<Point2, DimensionError> {
    if points.is_empty() {
        return Err(DimensionError::Empty);
    }
    let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        if !p.is_finite() {
            return Err(DimensionError::NonFinite(i));
        }
        lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
    }
    Ok(lo)
}

/// Boxes are `(iδ, (i+1)δ]`, with the origin folded into the first one, so a
/// set spanning exactly `[0, 1]` meets `2^j` boxes at octave `j`.
fn cell(u: f64, inv: f64) -> i64 {
    ((u * inv).ceil() as i64 - 1).max(0)
}

fn count_at(points: &[Point2], origin: Point2, octave: u32) -> usize {
    let inv = (octave as f64).exp2();
    let cells: HashSet<(i64, i64)> = points
        .iter()
        .map(|p| (cell(p.x - origin.x, inv), cell(p.y - origin.y, inv)))
        .collect();
    cells.len()
}

/// Occupied dyadic boxes per octave, anchored at the lower-left corner of the
/// bounding box.
pub fn box_counts(points: &[Point2], window: ScaleWindow) -> Result<Vec<usize>, DimensionError> {
    let origin = check_points(points)?;
    Ok(window.octaves().map(|j| count_at(points, origin, j)).collect())
}

/// Least-squares slope of `log2 N(2^{−j})` against `j` over the window.
pub fn box_dimension(points: &[Point2], window: ScaleWindow) -> Result<BoxCountResult, DimensionError> {
    let counts = box_counts(points, window)?;
    let xs: Vec<f64> = window.octaves().map(|j| j as f64).collect();
    let ys: Vec<f64> = counts.iter().map(|&c| (c as f64).log2()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let residual = (sse / m).sqrt();
    let slope_stderr = (sse / (m - 2.0) / sxx).sqrt();
    Ok(BoxCountResult {
        schema_version: DIMENSION_SCHEMA_VERSION,
        quantity: "box dimension",
        window,
        scales: window.octaves().map(|j| (-(j as f64)).exp2()).collect(),
        counts,
        slope,
        intercept,
        residual,
        slope_stderr,
        band: (slope - 2.0 * slope_stderr, slope + 2.0 * slope_stderr),
        headline: (residual <= HEADLINE_RESIDUAL).then_some(slope),
    })
}

/// Octaves from the one whose box holds the whole set down to the first at
/// which at least half the points sit in distinct boxes, then trimmed.
pub fn saturation_window(points: &[Point2]) -> Result<ScaleWindow, DimensionError> {
    let origin = check_points(points)?;
    let n = points.len();
    let (mut lo, mut hi) = (0u32, 0u32);
    let diam = points
        .iter()
        .map(|p| (p.x - origin.x).max(p.y - origin.y))
        .fold(0.0, f64::max);
    if diam > 0.0 {
        lo = (1.0 / diam).log2().floor().max(0.0) as u32;
    }
    for j in lo..60 {
        hi = j;
        if 2 * count_at(points, origin, j) >= n {
            break;
        }
    }
    ScaleWindow::trimmed(lo, hi)
}

/// Insert points along each segment so consecutive samples are at most
/// `step` apart.
pub fn densify(polyline: &[Point2], step: f64) -> Vec<Point2> {
    let mut out = Vec::with_capacity(polyline.len());
    for w in polyline.windows(2) {
        let k = ((w[0].dist(w[1]) / step).ceil() as usize).max(1);
        for i in 0..k {
            out.push(w[0].lerp(w[1], i as f64 / k as f64));
        }
    }
    if let Some(p) = polyline.last() {
        out.push(*p);
    }
    out
}

/// Box dimension of a curve given as a polyline; segments are densified to a
/// quarter of the finest box side.
pub fn box_dimension_polyline(polyline: &[Point2], window: ScaleWindow) -> Result<BoxCountResult, DimensionError> {
    let step = 0.25 * (-(window.hi as f64)).exp2();
    box_dimension(&densify(polyline, step), window)
}

/// One covering set: its generation, mass and image diameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MassRow {
    pub generation: usize,
    pub mass: f64,
    pub diameter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MassCertificate {
    pub schema_version: u32,
    pub quantity: &'static str,
    pub s: f64,
    pub c: f64,
    pub generations: Vec<usize>,
    /// `max μ/diam^s` per generation at the certified `s`.
    pub c_by_generation: Vec<f64>,
    pub rows: Vec<MassRow>,
    /// Indices of rows dropped for a zero (or non-finite) diameter.
    pub flagged_rows: Vec<usize>,
}

fn c_per_generation(rows: &[MassRow], gens: &[usize], s: f64) -> Vec<f64> {
    gens.iter()
        .map(|&g| {
            rows.iter()
                .filter(|r| r.generation == g)
                .map(|r| (r.mass.ln() - s * r.diameter.ln()).exp())
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Largest `s` for which the constant in `μ(Q) ≤ C·diam(f(Q))^s` does not
/// grow past its value at the coarsest generation of the ledger, found by
/// bisection to [`MASS_EXPONENT_PITCH`].
///
/// A single generation always admits some `C`, so at least two are needed.
pub fn mass_exponent(ledger: &[MassRow]) -> Result<MassCertificate, DimensionError> {
    let mut rows = Vec::new();
    let mut flagged_rows = Vec::new();
    for (i, r) in ledger.iter().enumerate() {
        if r.diameter > 0.0 && r.diameter.is_finite() && r.mass > 0.0 {
            rows.push(*r);
        } else {
            flagged_rows.push(i);
        }
    }
    if rows.is_empty() {
        return Err(DimensionError::EmptyLedger);
    }
    let mut gens: Vec<usize> = rows.iter().map(|r| r.generation).collect();
    gens.sort_unstable();
    gens.dedup();
    if gens.len() < 2 {
        return Err(DimensionError::SingleGeneration);
    }
    let ok = |s: f64| {
        let c = c_per_generation(&rows, &gens, s);
        c.iter().skip(1).all(|&v| v <= c[0] * (1.0 + 1e-12))
    };
    let (mut lo, mut hi) = (0.0, MASS_EXPONENT_MAX);
    if !ok(lo) {
        hi = 0.0;
    }
    while hi - lo > MASS_EXPONENT_PITCH {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c_by_generation = c_per_generation(&rows, &gens, lo);
    Ok(MassCertificate {
        schema_version: DIMENSION_SCHEMA_VERSION,
        quantity: "mass distribution exponent",
        s: lo,
        c: c_by_generation.iter().cloned().fold(0.0, f64::max),
        generations: gens,
        c_by_generation,
        rows,
        flagged_rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Inconclusive,
}

/// Pass/fail at tolerance `tol`; a pass whose residual exceeds `tol` is
/// downgraded to inconclusive.
pub fn status(holds: bool, residual: f64, tol: f64) -> CheckStatus {
    match (holds, residual > tol) {
        (false, _) => CheckStatus::Fail,
        (true, true) => CheckStatus::Inconclusive,
        (true, false) => CheckStatus::Pass,
    }
}

/// Dimension estimate of one fiber image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FiberEstimate {
    /// `y` for horizontal fibers, `x` for vertical ones.
    pub coordinate: f64,
    pub dimension: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub tolerance: f64,
    pub residual: f64,
    pub status: CheckStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub schema_version: u32,
    pub quantity: &'static str,
    pub d: f64,
    pub horizontal_bound: f64,
    pub vertical_bound: f64,
    pub horizontal: Vec<FiberEstimate>,
    pub vertical: Vec<FiberEstimate>,
    pub inf_horizontal: f64,
    pub inf_vertical: f64,
    /// Fibers sampled; the bounds quantify over all of them, we check these.
    pub sampled_quantifier: String,
    pub checks: Vec<BoundCheck>,
}

/// Tolerances for [`verify_thm12`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundsTolerance {
    /// Slack above each upper bound.
    pub upper: f64,
    /// How far below `2/(d+1)` the construction may land.
    pub sharpness: f64,
}

fn inf_of(v: &[FiberEstimate]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, 0.0), |(m, r), e| {
        if e.dimension < m {
            (e.dimension, e.residual)
        } else {
            (m, r)
        }
    })
}

/// Upper bounds `inf_y dim ≤ 2/(d+1)` and `inf_x dim ≤ 2d/(d+1)`, and the
/// sharpness side `dim ≥ 2/(d+1) − ε` for every sampled horizontal fiber.
pub fn verify_thm12(
    d: f64,
    horizontal: &[FiberEstimate],
    vertical: &[FiberEstimate],
    tol: BoundsTolerance,
) -> BoundsReport {
    let hb = 2.0 / (d + 1.0);
    let vb = 2.0 * d / (d + 1.0);
    let (inf_h, res_h) = inf_of(horizontal);
    let (inf_v, res_v) = inf_of(vertical);
    let mut checks = Vec::new();
    if !horizontal.is_empty() {
        checks.push(BoundCheck {
            name: "horizontal upper".into(),
            value: inf_h,
            bound: hb,
            tolerance: tol.upper,
            residual: res_h,
            status: status(inf_h <= hb + tol.upper, res_h, tol.upper),
        });
        let (worst, res) = horizontal
            .iter()
            .map(|e| (e.dimension, e.residual))
            .fold((f64::INFINITY, 0.0), |a, b| if b.0 < a.0 { b } else { a });
        checks.push(BoundCheck {
            name: "horizontal sharpness".into(),
            value: worst,
            bound: hb - tol.sharpness,
            tolerance: tol.sharpness,
            residual: res,
            status: status(worst >= hb - tol.sharpness, res, tol.sharpness),
        });
    }
    if !vertical.is_empty() {
        checks.push(BoundCheck {
            name: "vertical upper".into(),
            value: inf_v,
            bound: vb,
            tolerance: tol.upper,
            residual: res_v,
            status: status(inf_v <= vb + tol.upper, res_v, tol.upper),
        });
    }
    BoundsReport {
        schema_version: DIMENSION_SCHEMA_VERSION,
        quantity: "box dimension of fiber images",
        d,
        horizontal_bound: hb,
        vertical_bound: vb,
        horizontal: horizontal.to_vec(),
        vertical: vertical.to_vec(),
        inf_horizontal: inf_h,
        inf_vertical: inf_v,
        sampled_quantifier: format!(
            "infima over {} sampled horizontal and {} sampled vertical fibers",
            horizontal.len(),
            vertical.len()
        ),
        checks,
    }
}

/// Dimension estimates going into the expansion inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionInputs {
    pub dim_e: f64,
    pub dim_y: f64,
    pub dim_product: f64,
    pub dim_image_product: f64,
    pub inf_fiber_image: f64,
    /// Largest residual among the estimates.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionReport {
    pub schema_version: u32,
    pub inputs: ExpansionInputs,
    /// `dim(E×Y) / dim E`.
    pub lhs: f64,
    /// `dim f(E×Y) / inf_y dim f(E×{y})`.
    pub rhs: f64,
    pub slack: f64,
    pub inequality: BoundCheck,
    pub product_rule: BoundCheck,
}

pub fn verify_expansion(inputs: ExpansionInputs, tol: f64, product_tol: f64) -> ExpansionReport {
    let lhs = inputs.dim_product / inputs.dim_e;
    let rhs = inputs.dim_image_product / inputs.inf_fiber_image;
    let sum = inputs.dim_e + inputs.dim_y;
    let gap = (inputs.dim_product - sum).abs();
    ExpansionReport {
        schema_version: DIMENSION_SCHEMA_VERSION,
        inputs,
        lhs,
        rhs,
        slack: rhs - lhs,
        inequality: BoundCheck {
            name: "fiberwise expansion".into(),
            value: lhs,
            bound: rhs,
            tolerance: tol,
            residual: inputs.residual,
            status: status(lhs <= rhs + tol, inputs.residual, tol),
        },
        product_rule: BoundCheck {
            name: "product dimension".into(),
            value: inputs.dim_product,
            bound: sum,
            tolerance: product_tol,
            residual: inputs.residual,
            status: status(gap <= product_tol, inputs.residual, product_tol),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorollaryReport {
    pub delta: f64,
    pub eps: f64,
    /// `2/δ − 1 − ε`.
    pub bound: f64,
    /// `2/δ − 1`.
    pub limit: f64,
    pub achieved: Option<f64>,
    pub tolerance: f64,
    pub consistent: Option<bool>,
}

/// `2/δ − 1 − ε`.
pub fn corollary_size(delta: f64, eps: f64) -> Result<f64, DimensionError> {
    if !(delta > 1.0) || !(eps > 0.0) {
        return Err(DimensionError::OutOfRange(format!("need δ > 1 and ε > 0, got δ = {delta}, ε = {eps}")));
    }
    let b = 2.0 / delta - 1.0 - eps;
    if !(b > 0.0) {
        return Err(DimensionError::OutOfRange(format!("2/δ − 1 − ε = {b} is not positive")));
    }
    Ok(b)
}

/// Compare an achieved exceptional-set dimension with `2/δ − 1`.
pub fn corollary_compare(delta: f64, eps: f64, achieved: Option<f64>, tol: f64) -> Result<CorollaryReport, DimensionError> {
    let bound = corollary_size(delta, eps)?;
    let limit = 2.0 / delta - 1.0;
    Ok(CorollaryReport {
        delta,
        eps,
        bound,
        limit,
        achieved,
        tolerance: tol,
        consistent: achieved.map(|a| (a - limit).abs() <= tol),
    })
}

/// Points `(x, 0)` at the midpoints of the given intervals.
pub fn interval_midpoints(ivs: &[crate::cantor::Interval]) -> Vec<Point2> {
    ivs.iter().map(|iv| Point2::new(iv.mid(), 0.0)).collect()
}

/// `{(a, b)}` for `a` in `xs`, `b` in `ys`.
pub fn product_points(xs: &[f64], ys: &[f64]) -> Vec<Point2> {
    xs.iter().flat_map(|&x| ys.iter().map(move |&y| Point2::new(x, y))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cantor::{build_cantor, cantor_dimension};

    #[test]
    fn segment_has_dimension_one() {
        let pts: Vec<Point2> = (0..1000).map(|i| Point2::new(i as f64 / 999.0, 0.3)).collect();
        let w = saturation_window(&pts).unwrap();
        let r = box_dimension(&pts, w).unwrap();
        assert!((r.slope - 1.0).abs() < 0.05, "{r:?}");
        assert!(r.headline.is_some());
        assert!(r.counts.windows(2).all(|c| c[1] >= c[0]));
    }

    #[test]
    fn cantor_box_dimensions() {
        for (alpha, depth) in [(0.25, 10), (0.125, 8)] {
            let c = build_cantor(alpha, depth).unwrap();
            let pts = interval_midpoints(c.leaves());
            let r = box_dimension(&pts, saturation_window(&pts).unwrap()).unwrap();
            assert!((r.slope - cantor_dimension(alpha)).abs() < 0.03, "{alpha} {r:?}");
        }
    }

    #[test]
    fn window_needs_four_octaves() {
        assert!(ScaleWindow::new(2, 4).is_err());
        assert!(ScaleWindow::new(2, 5).is_ok());
        assert!(ScaleWindow::trimmed(0, 4).is_err());
        assert!(box_dimension(&[], ScaleWindow::new(0, 4).unwrap()).is_err());
    }

    #[test]
    fn identity_grid_mass_exponent() {
        for m in [4usize, 8, 16] {
            let side = 1.0 / m as f64;
            let mut rows = vec![MassRow { generation: 0, mass: 1.0, diameter: 2f64.sqrt() }];
            for _ in 0..m * m {
                rows.push(MassRow { generation: 1, mass: side * side, diameter: side * 2f64.sqrt() });
            }
            let c = mass_exponent(&rows).unwrap();
            assert!((c.s - 2.0).abs() <= MASS_EXPONENT_PITCH, "{}", c.s);
        }
    }

    #[test]
    fn mass_exponent_is_homogeneous_and_flags_zero_rows() {
        let rows = vec![
            MassRow { generation: 1, mass: 0.25, diameter: 0.3 },
            MassRow { generation: 1, mass: 0.25, diameter: 0.35 },
            MassRow { generation: 2, mass: 1.0 / 16.0, diameter: 0.05 },
            MassRow { generation: 2, mass: 1.0 / 16.0, diameter: 0.0 },
        ];
        let a = mass_exponent(&rows).unwrap();
        assert_eq!(a.flagged_rows, vec![3]);
        let scaled: Vec<MassRow> = rows.iter().map(|r| MassRow { diameter: 2.0 * r.diameter, ..*r }).collect();
        let b = mass_exponent(&scaled).unwrap();
        assert!((a.s - b.s).abs() < 1e-12);
        assert!((b.c - a.c * 2f64.powf(-a.s)).abs() < 1e-9 * a.c);
        assert_eq!(mass_exponent(&rows[..2]), Err(DimensionError::SingleGeneration));
    }

    #[test]
    fn thm12_bounds_arithmetic_and_identity() {
        let d = 1.0 / 3.0;
        let tol = BoundsTolerance { upper: 0.05, sharpness: 0.05 };
        let h = [FiberEstimate { coordinate: 0.2, dimension: 1.0, residual: 0.01 }];
        let v = [FiberEstimate { coordinate: 0.5, dimension: d, residual: 0.01 }];
        let r = verify_thm12(d, &h, &v, tol);
        assert!((r.horizontal_bound - 1.5).abs() < 1e-15 && (r.vertical_bound - 0.5).abs() < 1e-15);
        assert_eq!(r.checks[0].status, CheckStatus::Pass);
        assert_eq!(r.checks[2].status, CheckStatus::Pass);
        // identity does not reach the sharpness side
        assert_eq!(r.checks[1].status, CheckStatus::Fail);
        let noisy = [FiberEstimate { residual: 0.2, ..h[0] }];
        assert_eq!(verify_thm12(d, &noisy, &v, tol).checks[0].status, CheckStatus::Inconclusive);
    }

    #[test]
    fn expansion_identity_and_product_rule() {
        let c = build_cantor(0.25, 8).unwrap();
        let xs: Vec<f64> = c.leaves().iter().map(|iv| iv.mid()).collect();
        let prod = product_points(&xs, &xs);
        let r = box_dimension(&prod, saturation_window(&prod).unwrap()).unwrap();
        assert!((r.slope - 1.0).abs() < 0.06, "{r:?}");
        let e = box_dimension(&interval_midpoints(c.leaves()), saturation_window(&interval_midpoints(c.leaves())).unwrap()).unwrap();
        let inputs = ExpansionInputs {
            dim_e: e.slope,
            dim_y: e.slope,
            dim_product: r.slope,
            dim_image_product: r.slope,
            inf_fiber_image: e.slope,
            residual: r.residual.max(e.residual),
        };
        let rep = verify_expansion(inputs, 0.05, 0.06);
        assert!((rep.lhs - rep.rhs).abs() < 1e-12);
        assert_ne!(rep.inequality.status, CheckStatus::Fail);
        assert_ne!(rep.product_rule.status, CheckStatus::Fail);
    }

    #[test]
    fn corollary_examples() {
        assert!((corollary_size(1.5, 0.1).unwrap() - (2.0 / 1.5 - 1.1)).abs() < 1e-15);
        assert!(corollary_size(1.999, 0.0001).unwrap() < 1e-3);
        assert!(corollary_size(2.0, 0.1).is_err());
        assert!(corollary_size(0.9, 0.1).is_err());
        let r = corollary_compare(1.5, 0.01, Some(cantor_dimension(0.125)), 0.05).unwrap();
        assert_eq!(r.consistent, Some(true));
    }
}
