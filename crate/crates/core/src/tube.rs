//! Snake tubes: combinatorics, rounding, thinning to a target modulus, the
//! piecewise linear rectangle→tube map, generation assembly and composition.

use crate::geometry::{
    affine_between, dilatation_of, polygon_area, polygon_distance, GeometryError, Point2, Triangle, TriangulatedMap,
};
use crate::modulus::{extremal_length_grid, ModulusError, RegionShape};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use thiserror::Error;

mod assemble;
mod compose;

pub use assemble::*;
pub use compose::*;

pub const TUBE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TubeError {
    #[error("alpha^-k is not an integer for alpha = {num}/{den}, k = {k}")]
    NotIntegerPower { num: u64, den: u64, k: u32 },
    #[error("alpha = {num}/{den} outside (0, 1/2)")]
    AlphaOutOfRange { num: u64, den: u64 },
    #[error("k must be at least 1")]
    BadK,
    #[error("N = {0} is beyond the supported range")]
    TooLarge(String),
    #[error("tube with {cells} cells cannot be realized in a {rows} x {cols} grid")]
    Unrealizable { cells: usize, rows: usize, cols: usize },
    #[error("chamfer {0} outside [0, 1/2)")]
    BadChamfer(f64),
    #[error("width {0} outside (0, 1]")]
    BadWidth(f64),
    #[error("initial extremal length {lambda} already exceeds target {target}")]
    CannotThicken { lambda: f64, target: f64 },
    #[error("extremal length not monotone in width: w = {w_lo} gives {l_lo}, w = {w_hi} gives {l_hi}")]
    NonMonotone { w_lo: f64, l_lo: f64, w_hi: f64, l_hi: f64 },
    #[error("thinning did not reach the target within {} steps", trace.len())]
    ThinningExhausted { trace: Vec<ThinningStep> },
    #[error("rectangle modulus {rect} differs from tube modulus {tube} by more than 1%")]
    ModulusMismatch { rect: f64, tube: f64 },
    #[error("tube exit is not level with its entry; the generation map cannot be periodic")]
    AsymmetricTube,
    #[error("tubes {a} and {b} overlap")]
    Overlap { a: usize, b: usize },
    #[error("Cantor approximation has depth {have}, need {need}")]
    InsufficientDepth { have: usize, need: usize },
    #[error("stages are not nested: {0}")]
    NotNested(String),
    #[error("mesh construction failed: {0}")]
    Mesh(String),
    #[error("denominator {0} is not positive; C1 too large for this k")]
    NonPositiveDenominator(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Modulus(#[from] ModulusError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeParams {
    pub alpha_num: u64,
    pub alpha_den: u64,
    pub k: u32,
    /// `N = α^{−k}`.
    pub n: u64,
    pub m: u64,
    /// Cell count `m²·2^{k−1} + 1`.
    pub cells: u64,
    pub grid_rows: u64,
    pub grid_cols: u64,
    /// `N` below the tested regime, or `N/2 ≤ M` fails.
    pub small_n: bool,
}

impl TubeParams {
    pub fn alpha(&self) -> f64 {
        self.alpha_num as f64 / self.alpha_den as f64
    }

    /// Expected width ratio `(2α)^{−k/2}`.
    pub fn expected_width_ratio(&self) -> f64 {
        (2.0 * self.alpha()).powf(-(self.k as f64) / 2.0)
    }

    /// Number of turn cells in the layout, `2^k m`.
    pub fn corner_count(&self) -> u64 {
        (1u64 << self.k) * self.m
    }
}

/// Below this `N` the layout is too coarse for the bracket estimates.
pub const SMALL_N_THRESHOLD: u64 = 64;

pub fn tube_params(alpha_num: u64, alpha_den: u64, k: u32) -> Result<TubeParams, TubeError> {
    if k == 0 {
        return Err(TubeError::BadK);
    }
    if alpha_num == 0 || 2 * alpha_num >= alpha_den {
        return Err(TubeError::AlphaOutOfRange { num: alpha_num, den: alpha_den });
    }
    let r = BigRational::new(BigInt::from(alpha_den), BigInt::from(alpha_num));
    let nk = num_traits::pow(r, k as usize);
    if !nk.is_integer() {
        return Err(TubeError::NotIntegerPower { num: alpha_num, den: alpha_den, k });
    }
    let n = nk.to_integer().to_u64().filter(|&n| n <= 1 << 24).ok_or_else(|| TubeError::TooLarge(nk.to_string()))?;
    let half = 1u64 << (k - 1);
    let m = (((n - 1) as f64 / half as f64).sqrt().floor() as u64).max(1);
    // guard the float floor
    let m = if (m + 1) * (m + 1) * half <= n - 1 { m + 1 } else if m * m * half > n - 1 { m - 1 } else { m };
    let cells = m * m * half + 1;
    Ok(TubeParams {
        alpha_num,
        alpha_den,
        k,
        n,
        m,
        cells,
        grid_rows: m,
        grid_cols: (1u64 << k) * m + 1,
        small_n: n < SMALL_N_THRESHOLD || 2 * cells < n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnakeTube {
    pub params: TubeParams,
    pub rows: usize,
    pub cols: usize,
    /// `(column, row)` in path order.
    pub cells: Vec<(usize, usize)>,
    pub corner: Vec<bool>,
    /// Polyline through turn-cell centers, ending on the two vertical sides.
    pub spine: Vec<Point2>,
    /// Straight fallback used when `m ≤ 2` leaves no room for a sweep.
    pub straight: bool,
    /// Corner count minus `2^k m`.
    pub corner_deviation: i64,
}

impl SnakeTube {
    pub fn corner_count(&self) -> usize {
        self.corner.iter().filter(|c| **c).count()
    }

    /// Exit row equals entry row, so the tube is symmetric about the
    /// vertical bisector of its grid.
    pub fn is_level(&self) -> bool {
        self.cells.first().map(|c| c.1) == self.cells.last().map(|c| c.1)
    }
}

pub fn build_snake_tube(params: &TubeParams) -> Result<SnakeTube, TubeError> {
    let m = params.m as usize;
    let total = params.cells as usize;
    let (rows, cols, cells, straight) = if m <= 2 {
        // no room for vertical sweeps: one row of M cells
        (1usize, total, (0..total).map(|c| (c, 0usize)).collect::<Vec<_>>(), true)
    } else {
        let cols = params.grid_cols as usize;
        let runs = (cols - 1) / 2;
        let mut cells = vec![(0usize, 0usize)];
        for r in 0..runs {
            let col = 2 * r + 1;
            if r % 2 == 0 {
                cells.extend((0..m - 1).map(|row| (col, row)));
            } else {
                cells.extend((0..m - 1).rev().map(|row| (col, row)));
            }
            cells.push((col + 1, if r % 2 == 0 { m - 2 } else { 0 }));
        }
        (m, cols, cells, false)
    };
    if cells.len() != total || cells.iter().any(|c| c.0 >= cols || c.1 >= rows) {
        return Err(TubeError::Unrealizable { cells: total, rows, cols });
    }
    // corners: direction changes, with horizontal entry and exit
    let n = cells.len();
    let dir = |a: (usize, usize), b: (usize, usize)| (b.0 as i64 - a.0 as i64, b.1 as i64 - a.1 as i64);
    let mut corner = vec![false; n];
    let mut spine = vec![Point2::new(0.0, cells[0].1 as f64 + 0.5)];
    for i in 0..n {
        let d_in = if i == 0 { (1, 0) } else { dir(cells[i - 1], cells[i]) };
        let d_out = if i + 1 == n { (1, 0) } else { dir(cells[i], cells[i + 1]) };
        if d_in != d_out {
            corner[i] = true;
            spine.push(Point2::new(cells[i].0 as f64 + 0.5, cells[i].1 as f64 + 0.5));
        }
    }
    spine.push(Point2::new(cols as f64, cells[n - 1].1 as f64 + 0.5));
    let corners = corner.iter().filter(|c| **c).count() as i64;
    Ok(SnakeTube {
        params: params.clone(),
        rows,
        cols,
        cells,
        corner,
        spine,
        straight,
        corner_deviation: corners - params.corner_count() as i64,
    })
}

/// Tube polygon around the spine: half-width `w/2`, miter joins, outer
/// corners cut by `chamfer·w`. The polygon is `right ++ reverse(left)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeRegion {
    pub width: f64,
    pub chamfer: f64,
    pub spine: Vec<Point2>,
    /// Boundary on the right of the direction of travel (image of `y = 0`).
    pub right: Vec<Point2>,
    /// Boundary on the left (image of `y = 1`).
    pub left: Vec<Point2>,
    /// Index into `right` / `left` of the ruling endpoint at each spine vertex.
    pub right_marks: Vec<usize>,
    pub left_marks: Vec<usize>,
}

impl TubeRegion {
    pub fn polygon(&self) -> Vec<Point2> {
        let mut p = self.right.clone();
        p.extend(self.left.iter().rev().cloned());
        p
    }

    pub fn area(&self) -> f64 {
        polygon_area(&self.polygon())
    }

    pub fn start_arc(&self) -> Vec<Point2> {
        vec![self.right[0], self.left[0]]
    }

    pub fn end_arc(&self) -> Vec<Point2> {
        vec![*self.right.last().unwrap(), *self.left.last().unwrap()]
    }

    /// Same region under `p ↦ origin + scale·p`.
    pub fn transformed(&self, origin: Point2, scale: f64) -> TubeRegion {
        let t = |v: &Vec<Point2>| v.iter().map(|p| origin + *p * scale).collect();
        TubeRegion {
            width: self.width * scale,
            chamfer: self.chamfer,
            spine: t(&self.spine),
            right: t(&self.right),
            left: t(&self.left),
            right_marks: self.right_marks.clone(),
            left_marks: self.left_marks.clone(),
        }
    }
}

fn unit(v: Point2) -> Point2 {
    v * (1.0 / v.norm())
}

/// Build the tube polygon for width factor `width` and chamfer (cell units).
pub fn tube_region(tube: &SnakeTube, width: f64, chamfer: f64) -> Result<TubeRegion, TubeError> {
    if !(chamfer >= 0.0 && chamfer < 0.5) {
        return Err(TubeError::BadChamfer(chamfer));
    }
    if !(width > 0.0 && width <= 1.0) {
        return Err(TubeError::BadWidth(width));
    }
    let h = 0.5 * width;
    let cut = chamfer * width;
    let s = &tube.spine;
    let n = s.len();
    let (mut right, mut left) = (Vec::new(), Vec::new());
    let (mut rm, mut lm) = (Vec::new(), Vec::new());
    for i in 0..n {
        let d0 = if i == 0 { unit(s[1] - s[0]) } else { unit(s[i] - s[i - 1]) };
        let d1 = if i + 1 == n { d0 } else { unit(s[i + 1] - s[i]) };
        let (n0, n1) = (d0.perp(), d1.perp());
        let miter = (n0 + n1) * (h / (1.0 + n0.dot(n1)));
        let (l, r) = (s[i] + miter, s[i] - miter);
        let turn = d0.cross(d1);
        let push = |chain: &mut Vec<Point2>, marks: &mut Vec<usize>, v: Point2, outer: bool| {
            if outer && cut > 0.0 {
                let (a, b) = (v - d0 * cut, v + d1 * cut);
                chain.push(a);
                marks.push(chain.len());
                chain.push(a.lerp(b, 0.5));
                chain.push(b);
            } else {
                marks.push(chain.len());
                chain.push(v);
            }
        };
        push(&mut right, &mut rm, r, turn > 1e-12);
        push(&mut left, &mut lm, l, turn < -1e-12);
    }
    Ok(TubeRegion { width, chamfer, spine: s.clone(), right, left, right_marks: rm, left_marks: lm })
}

/// Corner rounding at full width.
pub fn round_corners(tube: &SnakeTube, chamfer: f64) -> Result<TubeRegion, TubeError> {
    tube_region(tube, 1.0, chamfer)
}

/// Grid extremal length between the short sides of a tube region.
pub fn region_extremal_length(region: &TubeRegion, resolution: usize) -> Result<f64, TubeError> {
    let r = extremal_length_grid(&RegionShape::Polygon(region.polygon()), resolution, &region.start_arc(), &region.end_arc())?;
    Ok(r.lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThinningStep {
    pub width: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThinnedTube {
    pub tube: SnakeTube,
    pub region: TubeRegion,
    pub width: f64,
    pub lambda: f64,
    pub target: f64,
    pub resolution: usize,
    pub trace: Vec<ThinningStep>,
}

pub const THINNING_MAX_STEPS: usize = 40;

fn check_monotone(trace: &[ThinningStep]) -> Result<(), TubeError> {
    let mut t = trace.to_vec();
    t.sort_by(|a, b| a.width.total_cmp(&b.width));
    for w in t.windows(2) {
        if w[1].lambda > w[0].lambda * (1.0 + 1e-6) {
            return Err(TubeError::NonMonotone { w_lo: w[0].width, l_lo: w[0].lambda, w_hi: w[1].width, l_hi: w[1].lambda });
        }
    }
    Ok(())
}

/// Shrink the width factor until `|λ(w) − target| ≤ tol·target`.
///
/// Bracketed search in `w`; each step takes the log-log secant point of the
/// bracket, clamped to its middle 80%, which falls back to bisection when the
/// secant is unhelpful.
pub fn thin_to_modulus(
    tube: &SnakeTube,
    chamfer: f64,
    target: f64,
    tol: f64,
    resolution: usize,
) -> Result<ThinnedTube, TubeError> {
    let mut trace = Vec::new();
    let eval = |w: f64, trace: &mut Vec<ThinningStep>| -> Result<f64, TubeError> {
        let region = tube_region(tube, w, chamfer)?;
        let lambda = region_extremal_length(&region, resolution)?;
        trace.push(ThinningStep { width: w, lambda });
        check_monotone(trace)?;
        Ok(lambda)
    };
    let done = |w: f64, lambda: f64, trace: Vec<ThinningStep>| -> Result<ThinnedTube, TubeError> {
        Ok(ThinnedTube {
            tube: tube.clone(),
            region: tube_region(tube, w, chamfer)?,
            width: w,
            lambda,
            target,
            resolution,
            trace,
        })
    };
    let l1 = eval(1.0, &mut trace)?;
    if (l1 - target).abs() <= tol * target {
        return done(1.0, l1, trace);
    }
    if l1 > target {
        return Err(TubeError::CannotThicken { lambda: l1, target });
    }
    let (mut w_hi, mut l_hi) = (1.0, l1);
    let mut w_lo = (l1 / target * 0.9).min(0.95);
    let mut l_lo = eval(w_lo, &mut trace)?;
    while l_lo < target {
        if (l_lo - target).abs() <= tol * target {
            return done(w_lo, l_lo, trace);
        }
        w_hi = w_lo;
        l_hi = l_lo;
        w_lo *= 0.7;
        if w_lo < 1e-3 {
            return Err(TubeError::ThinningExhausted { trace });
        }
        l_lo = eval(w_lo, &mut trace)?;
    }
    if (l_lo - target).abs() <= tol * target {
        return done(w_lo, l_lo, trace);
    }
    for _ in 0..THINNING_MAX_STEPS {
        let (a, b) = (w_lo.ln(), w_hi.ln());
        let (fa, fb) = (l_lo.ln() - target.ln(), l_hi.ln() - target.ln());
        let secant = if fa != fb { a - fa * (b - a) / (fb - fa) } else { 0.5 * (a + b) };
        let t = ((secant - a) / (b - a)).clamp(0.1, 0.9);
        let w = (a + t * (b - a)).exp();
        let l = eval(w, &mut trace)?;
        if (l - target).abs() <= tol * target {
            return done(w, l, trace);
        }
        if l > target {
            w_lo = w;
            l_lo = l;
        } else {
            w_hi = w;
            l_hi = l;
        }
    }
    Err(TubeError::ThinningExhausted { trace })
}

/// Piecewise linear stand-in for the conformal map from `[0, N] × [0, 1]`
/// onto a tube region (cell units). Spine segments get `x`-ranges in
/// proportion to their length; within a segment both boundary chains are
/// parametrized by arclength, and rulings join equal-`x` points.
#[derive(Debug, Clone)]
pub struct TubeMap {
    pub rect_len: f64,
    pub map: TriangulatedMap,
    /// Ruling positions in `[0, N]`.
    pub breaks: Vec<f64>,
    pub right_pts: Vec<Point2>,
    pub left_pts: Vec<Point2>,
    /// Max dilatation over pieces within one cell of a turn, and elsewhere.
    pub corner_k: f64,
    pub straight_k: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthRatio {
    /// `w·σ·N`: tube width over rectangle width, in `Q` units.
    pub measured: f64,
    /// `(2α)^{−k/2}`.
    pub expected: f64,
}

pub fn width_ratio(thinned: &ThinnedTube) -> WidthRatio {
    let p = &thinned.tube.params;
    WidthRatio {
        measured: thinned.width * p.n as f64 / p.grid_cols as f64,
        expected: p.expected_width_ratio(),
    }
}

fn chain_lengths(c: &[Point2]) -> Vec<f64> {
    let mut acc = vec![0.0];
    for w in c.windows(2) {
        acc.push(acc.last().unwrap() + w[0].dist(w[1]));
    }
    acc
}

fn chain_at(c: &[Point2], acc: &[f64], s: f64) -> Point2 {
    let i = acc.partition_point(|&a| a <= s).clamp(1, c.len() - 1);
    let seg = acc[i] - acc[i - 1];
    if seg <= 0.0 {
        return c[i];
    }
    c[i - 1].lerp(c[i], ((s - acc[i - 1]) / seg).clamp(0.0, 1.0))
}

/// Merge tolerance for ruling positions, in rectangle units.
const BREAK_EPS: f64 = 1e-7;

/// Map quads `[x_a, x_b] × [0,1] → (R_a, R_b, L_b, L_a)` as two triangles,
/// trying the other diagonal if the first split folds.
fn strip_pieces(
    xa: f64,
    xb: f64,
    y0: f64,
    y1: f64,
    ra: Point2,
    rb: Point2,
    lb: Point2,
    la: Point2,
) -> Result<[(Triangle, Triangle); 2], GeometryError> {
    let (s00, s10, s11, s01) = (Point2::new(xa, y0), Point2::new(xb, y0), Point2::new(xb, y1), Point2::new(xa, y1));
    let first = (|| {
        Ok::<_, GeometryError>([
            (Triangle::new(s00, s10, s11)?, Triangle::new(ra, rb, lb)?),
            (Triangle::new(s00, s11, s01)?, Triangle::new(ra, lb, la)?),
        ])
    })();
    first.or_else(|_| {
        Ok([
            (Triangle::new(s00, s10, s01)?, Triangle::new(ra, rb, la)?),
            (Triangle::new(s10, s11, s01)?, Triangle::new(rb, lb, la)?),
        ])
    })
}

pub fn tube_map_region(region: &TubeRegion, rect_len: f64) -> Result<TubeMap, TubeError> {
    let s = &region.spine;
    let seg_len: Vec<f64> = s.windows(2).map(|w| w[0].dist(w[1])).collect();
    let total: f64 = seg_len.iter().sum();
    let mut x_at = vec![0.0];
    for l in &seg_len {
        x_at.push(x_at.last().unwrap() + rect_len * l / total);
    }
    *x_at.last_mut().unwrap() = rect_len;
    let mut breaks = Vec::new();
    let mut right_pts = Vec::new();
    let mut left_pts = Vec::new();
    for k in 0..seg_len.len() {
        let rc = &region.right[region.right_marks[k]..=region.right_marks[k + 1]];
        let lc = &region.left[region.left_marks[k]..=region.left_marks[k + 1]];
        let (ra, la) = (chain_lengths(rc), chain_lengths(lc));
        let (rt, lt) = (*ra.last().unwrap(), *la.last().unwrap());
        let (x0, x1) = (x_at[k], x_at[k + 1]);
        let span = x1 - x0;
        let mut xs: Vec<f64> = vec![x0, x1];
        xs.extend(ra[1..ra.len() - 1].iter().map(|a| x0 + span * a / rt));
        xs.extend(la[1..la.len() - 1].iter().map(|a| x0 + span * a / lt));
        let mut i = x0.floor() as i64 + 1;
        while (i as f64) < x1 {
            xs.push(i as f64);
            i += 1;
        }
        xs.sort_by(|a, b| a.total_cmp(b));
        // keep kinks, drop integer marks that crowd them
        let kinks: Vec<f64> = xs.iter().cloned().filter(|x| x.fract() != 0.0 || *x == x0 || *x == x1).collect();
        let mut merged: Vec<f64> = Vec::new();
        for x in xs {
            let crowded = merged.last().is_some_and(|&m| x - m < BREAK_EPS * rect_len.max(1.0));
            if crowded {
                let is_kink = kinks.iter().any(|&kx| kx == x);
                if is_kink && x != x1 {
                    *merged.last_mut().unwrap() = x;
                } else if x == x1 {
                    *merged.last_mut().unwrap() = x1;
                }
                continue;
            }
            merged.push(x);
        }
        if k > 0 {
            merged.remove(0);
        }
        for x in merged {
            let t = ((x - x0) / span).clamp(0.0, 1.0);
            breaks.push(x);
            right_pts.push(chain_at(rc, &ra, t * rt));
            left_pts.push(chain_at(lc, &la, t * lt));
        }
    }
    let corners: Vec<Point2> = s[1..s.len() - 1].to_vec();
    let mut pieces = Vec::with_capacity(2 * breaks.len());
    let (mut corner_k, mut straight_k) = (1.0f64, 1.0f64);
    for i in 0..breaks.len() - 1 {
        let pair = strip_pieces(
            breaks[i],
            breaks[i + 1],
            0.0,
            1.0,
            right_pts[i],
            right_pts[i + 1],
            left_pts[i + 1],
            left_pts[i],
        )?;
        for (src, dst) in pair {
            let piece = affine_between(&src, &dst);
            let k = dilatation_of(&piece)?.k;
            let c = dst.vertices().iter().fold(Point2::new(0.0, 0.0), |a, v| a + *v) * (1.0 / 3.0);
            if corners.iter().any(|q| q.dist(c) <= 1.0) {
                corner_k = corner_k.max(k);
            } else {
                straight_k = straight_k.max(k);
            }
            pieces.push(piece);
        }
    }
    Ok(TubeMap { rect_len, map: TriangulatedMap::new(pieces), breaks, right_pts, left_pts, corner_k, straight_k })
}

/// Map `[0, N] × [0, 1]` onto the thinned tube. The tube's achieved extremal
/// length must match `N` within 1%.
pub fn tube_map(thinned: &ThinnedTube, rect_len: f64) -> Result<TubeMap, TubeError> {
    if (thinned.lambda - rect_len).abs() > 0.01 * rect_len {
        return Err(TubeError::ModulusMismatch { rect: rect_len, tube: thinned.lambda });
    }
    tube_map_region(&thinned.region, rect_len)
}

/// Minimum distance between distinct tube polygons.
pub fn min_polygon_separation(polys: &[Vec<Point2>]) -> (f64, Option<(usize, usize)>) {
    let mut best = (f64::INFINITY, None);
    for a in 0..polys.len() {
        for b in a + 1..polys.len() {
            let d = polygon_distance(&polys[a], &polys[b]);
            if d < best.0 {
                best = (d, Some((a, b)));
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentReport {
    pub s: f64,
    pub big_s: f64,
    pub t: f64,
    pub s_limit: f64,
    pub big_s_limit: f64,
    pub c1: f64,
}

/// `s = log N / (−log C1 + ½ log N + (k/2) log 2)`, `S = k log 2 / (same)`.
pub fn exponent_limits(alpha: f64, k: u32, c1: f64) -> Result<ExponentReport, TubeError> {
    if !(c1 > 0.0) {
        return Err(TubeError::NonPositiveDenominator(f64::NAN));
    }
    let ln_n = -(k as f64) * alpha.ln();
    let kl2 = k as f64 * std::f64::consts::LN_2;
    let den = -c1.ln() + 0.5 * ln_n + 0.5 * kl2;
    if den <= 0.0 {
        return Err(TubeError::NonPositiveDenominator(den));
    }
    let t = crate::cantor::cantor_dimension(alpha);
    Ok(ExponentReport {
        s: ln_n / den,
        big_s: kl2 / den,
        t,
        s_limit: 2.0 / (1.0 + t),
        big_s_limit: 2.0 * t / (1.0 + t),
        c1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn params_examples() {
        let p = tube_params(1, 8, 2).unwrap();
        assert_eq!((p.n, p.m, p.cells, p.grid_rows, p.grid_cols), (64, 5, 51, 5, 21));
        assert!(!p.small_n);
        assert!(p.n / 2 <= p.cells && p.cells <= p.n);
        let p = tube_params(1, 4, 1).unwrap();
        assert_eq!((p.n, p.m, p.cells), (4, 1, 2));
        assert!(p.small_n);
        assert!(matches!(tube_params(3, 10, 3), Err(TubeError::NotIntegerPower { .. })));
        assert!(matches!(tube_params(1, 2, 1), Err(TubeError::AlphaOutOfRange { .. })));
    }

    #[test]
    fn snake_fig_parameters() {
        let t = build_snake_tube(&tube_params(1, 8, 2).unwrap()).unwrap();
        assert_eq!(t.cells.len(), 51);
        assert_eq!((t.rows, t.cols), (5, 21));
        assert_eq!(t.cells[0].0, 0);
        assert_eq!(t.cells.last().unwrap().0, 20);
        assert_eq!(t.corner_count(), 20);
        assert_eq!(t.corner_deviation, 0);
        assert!(t.is_level());
        for w in t.cells.windows(2) {
            let d = (w[0].0 as i64 - w[1].0 as i64).abs() + (w[0].1 as i64 - w[1].1 as i64).abs();
            assert_eq!(d, 1);
        }
    }

    #[test]
    fn straight_fallback() {
        let t = build_snake_tube(&tube_params(1, 4, 1).unwrap()).unwrap();
        assert!(t.straight);
        assert_eq!(t.cells, vec![(0, 0), (1, 0)]);
        assert_eq!(t.corner_count(), 0);
    }

    #[test]
    fn rounded_area_closed_form() {
        let t = build_snake_tube(&tube_params(1, 8, 2).unwrap()).unwrap();
        let r = round_corners(&t, 0.0).unwrap();
        assert_abs_diff_eq!(r.area(), 51.0, epsilon = 1e-9);
        let r = round_corners(&t, 0.25).unwrap();
        assert_abs_diff_eq!(r.area(), 51.0 - 20.0 * 0.25 * 0.25 / 2.0, epsilon = 1e-9);
        let r = round_corners(&t, 1e-6).unwrap();
        assert_abs_diff_eq!(r.area(), 51.0, epsilon = 1e-9);
        assert!(matches!(round_corners(&t, 0.5), Err(TubeError::BadChamfer(_))));
        let s = build_snake_tube(&tube_params(1, 4, 1).unwrap()).unwrap();
        let a = round_corners(&s, 0.3).unwrap();
        assert_eq!(a.polygon().len(), 4);
        assert_abs_diff_eq!(a.area(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn exponent_formula() {
        let r = exponent_limits(0.125, 2, 1.0).unwrap();
        assert_abs_diff_eq!(r.s, 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.big_s, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.s_limit, 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.big_s_limit, 0.5, epsilon = 1e-12);
        let s: Vec<f64> = [2, 8, 32].iter().map(|&k| exponent_limits(0.125, k, 0.5).unwrap().s).collect();
        assert!(s[0] < s[1] && s[1] < s[2] && s[2] < 1.5);
        assert!(matches!(exponent_limits(0.125, 1, 100.0), Err(TubeError::NonPositiveDenominator(_))));
    }

    #[test]
    fn straight_tube_map_is_identity() {
        let t = build_snake_tube(&tube_params(1, 4, 1).unwrap()).unwrap();
        let r = tube_region(&t, 1.0, 0.0).unwrap();
        let m = tube_map_region(&r, 2.0).unwrap();
        assert_abs_diff_eq!(m.map.max_dilatation(), 1.0, epsilon = 1e-12);
        let p = m.map.apply(Point2::new(1.3, 0.2)).unwrap();
        assert_abs_diff_eq!(p.x, 1.3, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn snake_tube_map_is_valid() {
        let t = build_snake_tube(&tube_params(1, 8, 2).unwrap()).unwrap();
        let r = tube_region(&t, 0.8, 0.25).unwrap();
        let m = tube_map_region(&r, 64.0).unwrap();
        assert_abs_diff_eq!(m.map.source_area(), 64.0, epsilon = 1e-9);
        let img: f64 = m.map.pieces().iter().map(|p| Triangle::new(p.image()[0], p.image()[1], p.image()[2]).unwrap().area()).sum();
        assert_abs_diff_eq!(img, r.area(), epsilon = 1e-9);
        assert!(m.map.max_dilatation().is_finite());
        assert!(m.corner_k >= m.straight_k);
        assert!(m.breaks.windows(2).all(|w| w[1] > w[0]));
        for i in 0..=64 {
            assert!(m.breaks.iter().any(|b| (b - i as f64).abs() < 1e-6), "missing {i}");
        }
    }

    fn fixed_width(num: u64, den: u64, k: u32, w: f64) -> (ThinnedTube, TubeMap) {
        let p = tube_params(num, den, k).unwrap();
        let t = build_snake_tube(&p).unwrap();
        let region = tube_region(&t, w, 0.25).unwrap();
        let n = p.n as f64;
        let th = ThinnedTube { tube: t, region, width: w, lambda: n, target: n, resolution: 0, trace: vec![] };
        let m = tube_map(&th, n).unwrap();
        (th, m)
    }

    #[test]
    fn straight_generation_is_identity() {
        let (th, m) = fixed_width(1, 4, 1, 0.5);
        let c = crate::cantor::build_cantor(0.25, 2).unwrap();
        let g = assemble_generation(&th, &m, &c, 1).unwrap();
        assert_eq!(g.rects.len(), 2);
        for iy in 0..=40 {
            for ix in 0..=40 {
                let p = Point2::new(ix as f64 / 40.0, iy as f64 / 40.0);
                assert!(g.apply(p).unwrap().dist(p) < 1e-9, "moved {p:?}");
            }
        }
        assert!(g.map.max_dilatation() < 1.0 + 1e-9);
    }

    #[test]
    fn snake_generation_invariants() {
        let (th, m) = fixed_width(1, 8, 2, 0.73);
        let c = crate::cantor::build_cantor(0.125, 4).unwrap();
        let g = assemble_generation(&th, &m, &c, 1).unwrap();
        assert_eq!(g.tubes.len(), 4);
        assert!(g.ledger.separation > 0.0);
        assert!(g.ledger.trace_error < 1e-9);
        assert!(g.ledger.edge_error < 1e-12);
        assert!(g.ledger.extension_k.is_finite());
        assert_abs_diff_eq!(g.map.source_area(), 1.0, epsilon = 1e-9);
        let img: f64 = g.map.pieces().iter().map(|p| Triangle::new(p.image()[0], p.image()[1], p.image()[2]).unwrap().area()).sum();
        assert_abs_diff_eq!(img, 1.0, epsilon = 1e-9);
        // R_j goes onto T_j
        for (j, &(a, h)) in g.rects.iter().enumerate() {
            let q = g.apply(Point2::new(0.37, a + 0.5 * h)).unwrap();
            assert!(crate::geometry::point_in_polygon(&g.tubes[j], q));
        }

        let mut g2 = g.clone();
        g2.stage = 2;
        let one = compose_generations(std::slice::from_ref(&g), &c).unwrap();
        let two = compose_generations(&[g.clone(), g2], &c).unwrap();
        for i in 0..50 {
            let p = Point2::new((i as f64 * 0.618).fract(), (i as f64 * 0.414).fract());
            assert_eq!(one.apply(p).unwrap(), g.apply(p).unwrap());
        }
        let rep = locality_report(&two, 64).unwrap();
        assert!(rep.max_extension_layers <= 1);
        assert!(rep.boundary_drift < 1e-9);
        // continuity across the square boundaries of stage 2
        let y = c.generations[2][1].mid();
        for col in 1..64 {
            let x = col as f64 / 64.0;
            let (l, r) = (two.apply(Point2::new(x - 1e-12, y)).unwrap(), two.apply(Point2::new(x + 1e-12, y)).unwrap());
            assert!(l.dist(r) < 1e-9);
        }
        let mut bad = g.clone();
        bad.stage = 3;
        assert!(matches!(compose_generations(&[g, bad], &c), Err(TubeError::NotNested(_))));
    }

    #[test]
    fn thinning_straight_tube() {
        let t = build_snake_tube(&tube_params(1, 4, 1).unwrap()).unwrap();
        let th = thin_to_modulus(&t, 0.25, 4.0, 0.01, 8).unwrap();
        assert!((th.width - 0.5).abs() < 0.01, "w = {}", th.width);
        assert!((th.lambda - 4.0).abs() <= 0.04);
        let l1 = th.trace[0].lambda;
        let same = thin_to_modulus(&t, 0.25, l1, 0.01, 8).unwrap();
        assert_eq!(same.width, 1.0);
        assert!(matches!(thin_to_modulus(&t, 0.25, 1.0, 0.01, 8), Err(TubeError::CannotThicken { .. })));
    }
}
