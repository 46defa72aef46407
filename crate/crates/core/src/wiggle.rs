//! Wiggle construction: a bend map on the unit square, polygonal tubes around
//! the bent curves, per-stage piecewise-linear maps over a nested interval
//! family, their composition, and oscillation diagnostics for image curves.

use crate::cantor::{place_children, Interval, NestedIntervalFamily};
use crate::geometry::{
    dilatation_of, dilatation_of_linear, point_segment_distance, quad_pieces, GeometryError, Linear2,
    Point2, Quad, TriangulatedMap,
};
use serde::Serialize;
use thiserror::Error;

pub const WIGGLE_SCHEMA_VERSION: u32 = 1;

/// Vertical displacement of the bend at the center of `Q`.
pub const DEFAULT_AMPLITUDE: f64 = 0.125;

/// Points per side of the grid on which the bend Jacobian is checked.
pub const BEND_CHECK_GRID: usize = 200;

/// Normalized chord deviation at or above which a window is flagged.
pub const OSCILLATION_THRESHOLD: f64 = 0.1;

/// Smallest branching for which the first and last tube segments are flat.
pub const MIN_STAGE_BRANCHING: u64 = 8;

/// Dense samples per polygon segment when inscribing a bent curve.
const SAMPLES_PER_SEGMENT: usize = 16;

/// Local K above this counts as a distorting stage.
pub const STAGE_K_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WiggleError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("bend amplitude {amplitude} outside the safe range [0, {limit})")]
    AmplitudeOutOfRange { amplitude: f64, limit: f64 },
    #[error("bend Jacobian {det:e} ≤ 0 at ({x}, {y})")]
    BendNotDiffeomorphic { x: f64, y: f64, det: f64 },
    #[error("polyline needs n ≥ 2, got {n}")]
    TooFewSegments { n: usize },
    #[error("curve samples are not a graph over [0, 1] near sample {index}")]
    NotAGraph { index: usize },
    #[error("turning angle at vertex {index} is not below 90°")]
    SharpTurn { index: usize },
    #[error("offset polyline crosses itself at quad {index}")]
    OffsetSelfIntersects { index: usize },
    #[error("strip {strip} overlaps its neighbour at column {column}")]
    TubesOverlap { strip: usize, column: usize },
    #[error("layer endpoint drifts {drift:e} from the side of Q")]
    SideDrift { drift: f64 },
    #[error("branching {n} at level {level} is below {min}")]
    BranchingTooSmall { level: usize, n: String, min: u64 },
    #[error("family has no level {level}")]
    LevelMissing { level: usize },
    #[error("family generations are not materialized")]
    FamilySymbolic,
    #[error("stage {index} has level {level}, expected {expected}")]
    NestingViolated { index: usize, level: usize, expected: usize },
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

fn smoothstep_d(t: f64) -> f64 {
    if !(0.0..=1.0).contains(&t) {
        return 0.0;
    }
    30.0 * t * t * (t - 1.0) * (t - 1.0)
}

/// `(x, y) ↦ (x, y + a·b(x)·c(y))` with quintic smoothstep bumps.
///
/// `b` rises on `[1/8, 1/2]` and falls on `[1/2, 7/8]`; `c` rises on `[0, 1/4]`,
/// is 1 on `[1/4, 3/4]` and falls on `[3/4, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BendMap {
    pub amplitude: f64,
    /// Smallest Jacobian determinant seen on the check grid.
    pub min_jacobian: f64,
}

impl BendMap {
    /// Largest amplitude keeping `1 + a·b·c' > 0`.
    pub fn amplitude_limit() -> f64 {
        // max |c'| = (15/8) / (1/4)
        1.0 / 7.5
    }

    /// `(b(x), b'(x))`.
    pub fn bump_x(x: f64) -> (f64, f64) {
        const W: f64 = 0.375;
        if x <= 0.125 || x >= 0.875 {
            (0.0, 0.0)
        } else if x <= 0.5 {
            let t = (x - 0.125) / W;
            (smoothstep(t), smoothstep_d(t) / W)
        } else {
            let t = (0.875 - x) / W;
            (smoothstep(t), -smoothstep_d(t) / W)
        }
    }

    /// `(c(y), c'(y))`.
    pub fn bump_y(y: f64) -> (f64, f64) {
        const W: f64 = 0.25;
        if y <= 0.0 || y >= 1.0 {
            (0.0, 0.0)
        } else if y <= 0.25 {
            let t = y / W;
            (smoothstep(t), smoothstep_d(t) / W)
        } else if y < 0.75 {
            (1.0, 0.0)
        } else {
            let t = (1.0 - y) / W;
            (smoothstep(t), -smoothstep_d(t) / W)
        }
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        let (b, _) = Self::bump_x(p.x);
        let (c, _) = Self::bump_y(p.y);
        Point2::new(p.x, p.y + self.amplitude * b * c)
    }

    pub fn jacobian(&self, p: Point2) -> Linear2 {
        let (b, db) = Self::bump_x(p.x);
        let (c, dc) = Self::bump_y(p.y);
        Linear2::new(1.0, 0.0, self.amplitude * db * c, 1.0 + self.amplitude * b * dc)
    }
}

pub fn bend_map(amplitude: f64) -> Result<BendMap, WiggleError> {
    let limit = BendMap::amplitude_limit();
    if !(0.0..limit).contains(&amplitude) {
        return Err(WiggleError::AmplitudeOutOfRange { amplitude, limit });
    }
    let mut bend = BendMap { amplitude, min_jacobian: f64::INFINITY };
    let m = BEND_CHECK_GRID;
    for i in 0..=m {
        for j in 0..=m {
            let p = Point2::new(i as f64 / m as f64, j as f64 / m as f64);
            let det = bend.jacobian(p).det();
            if det <= 0.0 {
                return Err(WiggleError::BendNotDiffeomorphic { x: p.x, y: p.y, det });
            }
            bend.min_jacobian = bend.min_jacobian.min(det);
        }
    }
    Ok(bend)
}

/// Vertices `z_k` at `x = k/n` on a curve given by dense samples, by linear
/// interpolation between neighbouring samples.
pub fn inscribe_polyline(samples: &[Point2], n: usize) -> Result<Vec<Point2>, WiggleError> {
    if n < 2 {
        return Err(WiggleError::TooFewSegments { n });
    }
    if samples.len() < 2 {
        return Err(WiggleError::NotAGraph { index: 0 });
    }
    for (i, w) in samples.windows(2).enumerate() {
        if !(w[1].x > w[0].x) || !w[1].is_finite() {
            return Err(WiggleError::NotAGraph { index: i + 1 });
        }
    }
    let (first, last) = (samples[0].x, samples[samples.len() - 1].x);
    if first > 1e-12 {
        return Err(WiggleError::NotAGraph { index: 0 });
    }
    if last < 1.0 - 1e-12 {
        return Err(WiggleError::NotAGraph { index: samples.len() - 1 });
    }
    let out = (0..=n)
        .map(|k| {
            let x = k as f64 / n as f64;
            let j = samples.partition_point(|p| p.x <= x).clamp(1, samples.len() - 1);
            let (a, b) = (samples[j - 1], samples[j]);
            let y = if a.x == x {
                a.y
            } else if b.x == x {
                b.y
            } else {
                a.y + (b.y - a.y) * (x - a.x) / (b.x - a.x)
            };
            Point2::new(x, y)
        })
        .collect();
    Ok(out)
}

/// A polygonal curve, its perpendicular offset above it, and the strip of
/// quads between them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolyTube {
    pub gamma_n: Vec<Point2>,
    pub gamma_tilde: Vec<Point2>,
    pub quads: Vec<Quad>,
    /// Radians.
    pub max_angle_deviation: f64,
}

/// Offset each `z_k` along the unit normal by the length of the segment
/// ending at `z_k` (the first segment for `z_0`).
///
/// The tangent at an interior vertex is the chord `z_{k+1} − z_{k−1}`; at the
/// ends it is the adjacent segment.
pub fn offset_tube(gamma_n: &[Point2]) -> Result<PolyTube, WiggleError> {
    let n = gamma_n.len().saturating_sub(1);
    if n < 2 {
        return Err(WiggleError::TooFewSegments { n });
    }
    let seg: Vec<Point2> = gamma_n.windows(2).map(|w| w[1] - w[0]).collect();
    for k in 1..n {
        if seg[k - 1].dot(seg[k]) <= 0.0 || seg[k - 1].cross(seg[k]).abs() >= seg[k - 1].norm() * seg[k].norm() {
            return Err(WiggleError::SharpTurn { index: k });
        }
    }
    let gamma_tilde: Vec<Point2> = (0..=n)
        .map(|k| {
            let len = seg[k.saturating_sub(1)].norm();
            let t = if k == 0 {
                seg[0]
            } else if k == n {
                seg[n - 1]
            } else {
                gamma_n[k + 1] - gamma_n[k - 1]
            };
            gamma_n[k] + t.perp() * (len / t.norm())
        })
        .collect();
    let mut quads = Vec::with_capacity(n);
    let mut dev: f64 = 0.0;
    for k in 0..n {
        let q = Quad([gamma_n[k], gamma_n[k + 1], gamma_tilde[k + 1], gamma_tilde[k]]);
        if !q.is_strictly_convex() || gamma_tilde[k + 1].x <= gamma_tilde[k].x {
            return Err(WiggleError::OffsetSelfIntersects { index: k });
        }
        dev = dev.max(q.angle_deviation());
        quads.push(q);
    }
    Ok(PolyTube { gamma_n: gamma_n.to_vec(), gamma_tilde, quads, max_angle_deviation: dev })
}

/// Image of `[0, 1] × {y0}` under the bend, inscribed with `n` segments.
pub fn bent_polyline(bend: &BendMap, y0: f64, n: usize) -> Result<Vec<Point2>, WiggleError> {
    let m = n * SAMPLES_PER_SEGMENT;
    let samples: Vec<Point2> = (0..=m).map(|i| bend.apply(Point2::new(i as f64 / m as f64, y0))).collect();
    inscribe_polyline(&samples, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageLedger {
    pub level: usize,
    pub n: u64,
    pub tube_pieces: usize,
    pub extension_pieces: usize,
    pub tube_k: f64,
    pub extension_k: f64,
    /// Radians.
    pub angle_deviation: f64,
    /// `(tube_k − 1)·n`.
    pub c_estimate: f64,
}

/// The map `f_n` on `Q` for one stage, applied in every square of the
/// generation-`(level−1)` rectangles and the identity elsewhere.
#[derive(Debug, Clone)]
pub struct WiggleStage {
    pub level: usize,
    pub n: u64,
    pub bend: BendMap,
    /// Level-`(level−1)` intervals, sorted.
    pub intervals: Vec<Interval>,
    pub base: TriangulatedMap,
    pub tube_piece: Vec<bool>,
    pub tubes: Vec<PolyTube>,
    pub ledger: StageLedger,
}

struct Layer {
    y: f64,
    chain: Vec<Point2>,
}

/// Base stage map on `Q`: horizontal layers (bottom edge, then `γ_n` and
/// `γ̃_n` for each child interval, then the top edge) with quad strips
/// between consecutive layers. Strips from `γ_n` to `γ̃_n` are the tubes.
pub fn base_stage_map(
    bend: &BendMap,
    n: u64,
) -> Result<(TriangulatedMap, Vec<bool>, Vec<PolyTube>), WiggleError> {
    let nu = n as usize;
    let h = 1.0 / n as f64;
    let flat = |y: f64| (0..=nu).map(|k| Point2::new(k as f64 * h, y)).collect::<Vec<_>>();
    let mut layers = vec![Layer { y: 0.0, chain: flat(0.0) }];
    let mut tubes = Vec::new();
    for j in place_children(Interval { left: 0.0, length: 1.0 }, n) {
        let tube = offset_tube(&bent_polyline(bend, j.left, nu)?)?;
        layers.push(Layer { y: j.left, chain: tube.gamma_n.clone() });
        layers.push(Layer { y: j.left + h, chain: tube.gamma_tilde.clone() });
        tubes.push(tube);
    }
    layers.push(Layer { y: 1.0, chain: flat(1.0) });
    for l in layers.iter_mut() {
        for k in [0, nu] {
            let side = Point2::new(k as f64 * h, l.y);
            let drift = l.chain[k].dist(side);
            if drift > 1e-12 {
                return Err(WiggleError::SideDrift { drift });
            }
            l.chain[k] = side;
        }
        l.chain[nu].x = 1.0;
    }
    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut is_tube = Vec::new();
    for (s, pair) in layers.windows(2).enumerate() {
        let (lo, hi) = (&pair[0], &pair[1]);
        let tube = s % 2 == 1;
        for k in 0..nu {
            let x1 = if k + 1 == nu { 1.0 } else { (k + 1) as f64 * h };
            src.push(Quad::axis_rect(k as f64 * h, lo.y, x1, hi.y));
            let q = Quad([lo.chain[k], lo.chain[k + 1], hi.chain[k + 1], hi.chain[k]]);
            if !q.is_strictly_convex() {
                return Err(WiggleError::TubesOverlap { strip: s, column: k });
            }
            dst.push(q);
            is_tube.extend([tube, tube]);
        }
    }
    let pieces = quad_pieces(&src, &dst)?;
    Ok((TriangulatedMap::new(pieces), is_tube, tubes))
}

fn family_level(family: &NestedIntervalFamily, level: usize) -> Result<&Vec<Interval>, WiggleError> {
    let gens = family.generations.as_ref().ok_or(WiggleError::FamilySymbolic)?;
    gens.get(level).ok_or(WiggleError::LevelMissing { level })
}

/// Stage `level ≥ 1`: uses `n = branching[level−1]` and acts on the
/// level-`(level−1)` rectangles.
pub fn build_stage(family: &NestedIntervalFamily, level: usize, bend: &BendMap) -> Result<WiggleStage, WiggleError> {
    if level == 0 || level > family.depth() {
        return Err(WiggleError::LevelMissing { level });
    }
    let intervals = family_level(family, level - 1)?.clone();
    let n = family.branching_u64().ok_or(WiggleError::FamilySymbolic)?[level - 1];
    if n < MIN_STAGE_BRANCHING {
        return Err(WiggleError::BranchingTooSmall { level, n: n.to_string(), min: MIN_STAGE_BRANCHING });
    }
    let (base, tube_piece, tubes) = base_stage_map(bend, n)?;
    let mut tube_k: f64 = 1.0;
    let mut extension_k: f64 = 1.0;
    for (p, &t) in base.pieces().iter().zip(&tube_piece) {
        let k = dilatation_of(p)?.k;
        if t {
            tube_k = tube_k.max(k);
        } else {
            extension_k = extension_k.max(k);
        }
    }
    let tube_pieces = tube_piece.iter().filter(|t| **t).count();
    let angle_deviation = tubes.iter().map(|t| t.max_angle_deviation).fold(0.0, f64::max);
    let ledger = StageLedger {
        level,
        n,
        tube_pieces,
        extension_pieces: tube_piece.len() - tube_pieces,
        tube_k,
        extension_k,
        angle_deviation,
        c_estimate: (tube_k - 1.0) * n as f64,
    };
    Ok(WiggleStage { level, n, bend: *bend, intervals, base, tube_piece, tubes, ledger })
}

/// One stage evaluated at a point.
#[derive(Debug, Clone, Copy)]
pub struct StageEval {
    pub image: Point2,
    pub jacobian: Linear2,
    /// `None` outside the rectangles the stage acts on.
    pub tube: Option<bool>,
}

impl WiggleStage {
    fn interval_of(&self, y: f64) -> Option<Interval> {
        let i = self.intervals.partition_point(|iv| iv.left <= y);
        let iv = *self.intervals.get(i.checked_sub(1)?)?;
        (y <= iv.right() + 1e-15).then_some(iv)
    }

    pub fn eval(&self, p: Point2) -> Result<StageEval, WiggleError> {
        let Some(iv) = self.interval_of(p.y) else {
            return Ok(StageEval { image: p, jacobian: Linear2::IDENTITY, tube: None });
        };
        let s = iv.length;
        let count = (1.0 / s).round().max(1.0) as usize;
        let col = ((p.x / s).floor().max(0.0) as usize).min(count - 1);
        let x0 = col as f64 * s;
        let local = Point2::new(((p.x - x0) / s).clamp(0.0, 1.0), ((p.y - iv.left) / s).clamp(0.0, 1.0));
        let idx = self
            .base
            .locate(local)
            .ok_or(GeometryError::OutsideDomain { x: local.x, y: local.y })?;
        let piece = &self.base.pieces()[idx];
        let q = piece.apply(local);
        Ok(StageEval {
            image: Point2::new(x0 + s * q.x, iv.left + s * q.y),
            jacobian: piece.linear,
            tube: Some(self.tube_piece[idx]),
        })
    }

    pub fn apply(&self, p: Point2) -> Result<Point2, WiggleError> {
        Ok(self.eval(p)?.image)
    }
}

/// `g_h = f_1 ∘ … ∘ f_h` evaluated at a point.
#[derive(Debug, Clone)]
pub struct WigglePoint {
    pub point: Point2,
    pub image: Point2,
    pub jacobian: Linear2,
    pub k: f64,
    /// Local K of each stage, innermost last.
    pub stage_k: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct WiggleComposed {
    pub stages: Vec<WiggleStage>,
}

/// Stages must be levels `1, 2, …` in order.
pub fn compose_stages(stages: Vec<WiggleStage>) -> Result<WiggleComposed, WiggleError> {
    for (i, s) in stages.iter().enumerate() {
        if s.level != i + 1 {
            return Err(WiggleError::NestingViolated { index: i, level: s.level, expected: i + 1 });
        }
    }
    Ok(WiggleComposed { stages })
}

impl WiggleComposed {
    pub fn depth(&self) -> usize {
        self.stages.len()
    }

    pub fn eval_to(&self, h: usize, p: Point2) -> Result<WigglePoint, WiggleError> {
        let h = h.min(self.stages.len());
        let mut q = p;
        let mut jac = Linear2::IDENTITY;
        let mut stage_k = vec![1.0; h];
        for l in (0..h).rev() {
            let e = self.stages[l].eval(q)?;
            stage_k[l] = dilatation_of_linear(&e.jacobian)?.k;
            jac = e.jacobian.compose(&jac);
            q = e.image;
        }
        let k = dilatation_of_linear(&jac)?.k;
        Ok(WigglePoint { point: p, image: q, jacobian: jac, k, stage_k })
    }

    pub fn apply_to(&self, h: usize, p: Point2) -> Result<Point2, WiggleError> {
        Ok(self.eval_to(h, p)?.image)
    }

    /// `Σ 1/n_j` over the stages.
    pub fn reciprocal_sum(&self) -> f64 {
        self.stages.iter().map(|s| 1.0 / s.n as f64).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DilatationBudget {
    pub schema_version: u32,
    pub stages: Vec<StageLedger>,
    pub reciprocal_sum: f64,
    /// `c` measured at the first stage.
    pub c_first: f64,
    /// Largest `c_estimate` over later stages divided by `c_first`.
    pub c_ratio: f64,
    /// `exp(c_first·Σ 1/n_j)`.
    pub tube_bound: f64,
    /// `Π tube_k`, the worst case inside the nested tubes.
    pub tube_product: f64,
    /// Largest K among samples lying in every stage's tube.
    pub measured_tube_k: f64,
    pub tube_samples: usize,
    /// Largest K over all samples, per depth `1..=h`.
    pub max_k_by_depth: Vec<f64>,
    /// Largest number of stages with local K > 1 at one sample.
    pub max_distorting_stages: usize,
    pub samples: usize,
    pub budget_pass: bool,
}

/// Grid samples of `Q` plus grids inside a few rectangles of every level.
pub fn budget_samples(g: &WiggleComposed, res: usize) -> Vec<Point2> {
    let mut pts = Vec::new();
    for i in 0..res {
        for j in 0..res {
            pts.push(Point2::new((i as f64 + 0.5) / res as f64, (j as f64 + 0.5) / res as f64));
        }
    }
    for st in g.stages.iter().skip(1) {
        let ivs = &st.intervals;
        let pick = 4.min(ivs.len());
        for t in 0..pick {
            let iv = ivs[t * ivs.len() / pick];
            for i in 0..res {
                for j in 0..res / 4 {
                    let x = (i as f64 + 0.5) / res as f64;
                    let y = iv.left + iv.length * (j as f64 + 0.5) / (res / 4) as f64;
                    pts.push(Point2::new(x, y));
                }
            }
        }
    }
    pts
}

pub fn dilatation_budget(g: &WiggleComposed, res: usize, limit: f64) -> Result<DilatationBudget, WiggleError> {
    let stages: Vec<StageLedger> = g.stages.iter().map(|s| s.ledger).collect();
    let c_first = stages.first().map_or(0.0, |s| s.c_estimate);
    let c_ratio = stages.iter().skip(1).map(|s| s.c_estimate / c_first).fold(0.0, f64::max);
    let reciprocal_sum = g.reciprocal_sum();
    let tube_product = stages.iter().map(|s| s.tube_k).product();
    let pts = budget_samples(g, res);
    let h = g.depth();
    let mut max_k_by_depth = vec![1.0f64; h];
    let mut measured_tube_k: f64 = 1.0;
    let mut tube_samples = 0;
    let mut max_distorting_stages = 0;
    for p in &pts {
        for d in 1..=h {
            let e = g.eval_to(d, *p)?;
            max_k_by_depth[d - 1] = max_k_by_depth[d - 1].max(e.k);
            if d == h {
                let distorting = e.stage_k.iter().filter(|k| **k > 1.0 + STAGE_K_TOL).count();
                max_distorting_stages = max_distorting_stages.max(distorting);
                let mut q = *p;
                let mut all_tube = true;
                for st in g.stages.iter().rev() {
                    let s = st.eval(q)?;
                    all_tube &= s.tube == Some(true);
                    q = s.image;
                }
                if all_tube {
                    tube_samples += 1;
                    measured_tube_k = measured_tube_k.max(e.k);
                }
            }
        }
    }
    Ok(DilatationBudget {
        schema_version: WIGGLE_SCHEMA_VERSION,
        stages,
        reciprocal_sum,
        c_first,
        c_ratio,
        tube_bound: (c_first * reciprocal_sum).exp(),
        tube_product,
        measured_tube_k,
        tube_samples,
        max_k_by_depth,
        max_distorting_stages,
        samples: pts.len(),
        budget_pass: reciprocal_sum <= limit,
    })
}

/// Chord deviations at one dyadic octave: window widths `2^{−j−m/4}`,
/// `m = 0..4`, sliding along the curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleRow {
    pub octave: usize,
    pub windows: usize,
    pub flagged_windows: usize,
    pub max_deviation: f64,
    pub flagged_fraction: f64,
    /// `flagged_fraction ≥ BAND_FRACTION`.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthRow {
    pub octave: usize,
    pub delta: f64,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OscillationReport {
    pub schema_version: u32,
    pub y: f64,
    pub samples: usize,
    pub threshold: f64,
    pub scales: Vec<ScaleRow>,
    pub lengths: Vec<LengthRow>,
    pub monotone: bool,
}

fn hull_diameter(pts: &[Point2]) -> f64 {
    let mut p: Vec<Point2> = pts.to_vec();
    p.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    p.dedup();
    if p.len() < 2 {
        return 0.0;
    }
    let mut hull: Vec<Point2> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point2>> =
            if pass == 0 { Box::new(p.iter()) } else { Box::new(p.iter().rev()) };
        for &q in iter {
            while hull.len() >= start + 2
                && crate::geometry::orient(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0
            {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    let mut best: f64 = 0.0;
    for i in 0..hull.len() {
        for j in i + 1..hull.len() {
            best = best.max(hull[i].dist(hull[j]));
        }
    }
    best
}

/// Share of windows at one octave that must be flagged for the octave to
/// count. Isolated kinks of a PL curve flag a few windows at every scale.
pub const BAND_FRACTION: f64 = 0.25;

/// Oscillation of the image of `[0, 1] × {y}` under `map`, sampled at
/// `2^log2_samples + 1` points, over octaves `0..=max_octave`.
pub fn oscillation_report<F>(
    map: F,
    y: f64,
    max_octave: usize,
    log2_samples: u32,
) -> Result<OscillationReport, WiggleError>
where
    F: Fn(Point2) -> Result<Point2, WiggleError>,
{
    let m = 1usize << log2_samples;
    let pts: Vec<Point2> = (0..=m).map(|i| map(Point2::new(i as f64 / m as f64, y))).collect::<Result<_, _>>()?;
    let mut scales = Vec::new();
    for j in 0..=max_octave {
        let mut row = ScaleRow {
            octave: j,
            windows: 0,
            flagged_windows: 0,
            max_deviation: 0.0,
            flagged_fraction: 0.0,
            flagged: false,
        };
        for sub in 0..4 {
            let width = (-(j as f64) - sub as f64 / 4.0).exp2();
            let w = (width * m as f64).round() as usize;
            if w < 2 || w > m {
                continue;
            }
            let step = (w / 32).max(1);
            let mut s = 0;
            while s + w <= m {
                let win = &pts[s..=s + w];
                let (a, b) = (win[0], win[w]);
                let dev = win.iter().map(|p| point_segment_distance(*p, a, b)).fold(0.0, f64::max);
                let diam = hull_diameter(win);
                let nd = if diam > 0.0 { dev / diam } else { 0.0 };
                row.windows += 1;
                if nd >= OSCILLATION_THRESHOLD {
                    row.flagged_windows += 1;
                }
                row.max_deviation = row.max_deviation.max(nd);
                s += step;
            }
        }
        row.flagged_fraction = row.flagged_windows as f64 / row.windows.max(1) as f64;
        row.flagged = row.flagged_fraction >= BAND_FRACTION;
        scales.push(row);
    }
    let lengths: Vec<LengthRow> = (0..=log2_samples as usize)
        .map(|j| {
            let stride = m >> j;
            let length = (0..(1usize << j)).map(|i| pts[i * stride].dist(pts[(i + 1) * stride])).sum();
            LengthRow { octave: j, delta: (-(j as f64)).exp2(), length }
        })
        .collect();
    let monotone = lengths.windows(2).all(|w| w[1].length >= w[0].length * (1.0 - 1e-12));
    Ok(OscillationReport {
        schema_version: WIGGLE_SCHEMA_VERSION,
        y,
        samples: m + 1,
        threshold: OSCILLATION_THRESHOLD,
        scales,
        lengths,
        monotone,
    })
}

/// Oscillation attributed to one stage: octaves around the side of the
/// squares the stage bends, compared with the curve before the stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageBand {
    pub stage: usize,
    pub square_side: f64,
    pub first_octave: usize,
    pub last_octave: usize,
    /// Largest flagged fraction over the band octaves, after the stage.
    pub fraction: f64,
    /// Same octaves, before the stage.
    pub fraction_before: f64,
    /// Flagged after the stage and not before.
    pub flagged: bool,
    /// Finest inscribed length before and after the stage.
    pub length_before: f64,
    pub length_after: f64,
    pub growth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageBandReport {
    pub schema_version: u32,
    pub y: f64,
    pub depth: usize,
    pub band_fraction: f64,
    pub bands: Vec<StageBand>,
    pub flagged_bands: usize,
    /// Reports for `g_0 = id, g_1, …, g_depth`.
    pub reports: Vec<OscillationReport>,
}

/// Octave band for squares of side `s`: the octaves whose window widths
/// `2^{−j−m/4}` bracket `s`.
pub fn band_octaves(s: f64) -> (usize, usize) {
    let c = (1.0 / s).log2().max(0.0).floor() as usize;
    (c, c + 1)
}

/// Per-stage bands along `[0, 1] × {y}` for every depth of `g`.
pub fn stage_bands(g: &WiggleComposed, y: f64, log2_samples: u32) -> Result<StageBandReport, WiggleError> {
    let depth = g.depth();
    let sides: Vec<f64> = g
        .stages
        .iter()
        .map(|st| st.interval_of(y).map_or(1.0, |iv| iv.length))
        .collect();
    let max_octave = sides.iter().map(|s| band_octaves(*s).1).max().unwrap_or(1).min(log2_samples as usize - 2);
    let reports: Vec<OscillationReport> = (0..=depth)
        .map(|h| oscillation_report(|p| g.apply_to(h, p), y, max_octave, log2_samples))
        .collect::<Result<_, _>>()?;
    let mut bands = Vec::new();
    for (l, &side) in sides.iter().enumerate() {
        let (lo, hi) = band_octaves(side);
        let frac = |r: &OscillationReport| {
            r.scales.iter().filter(|s| s.octave >= lo && s.octave <= hi).map(|s| s.flagged_fraction).fold(0.0, f64::max)
        };
        let (before, after) = (&reports[l], &reports[depth]);
        let fraction = frac(after);
        let fraction_before = frac(before);
        let length_before = before.lengths.last().map_or(1.0, |r| r.length);
        let length_after = reports[l + 1].lengths.last().map_or(1.0, |r| r.length);
        bands.push(StageBand {
            stage: l + 1,
            square_side: side,
            first_octave: lo,
            last_octave: hi,
            fraction,
            fraction_before,
            flagged: fraction >= BAND_FRACTION && fraction_before < BAND_FRACTION,
            length_before,
            length_after,
            growth: length_after / length_before,
        });
    }
    let flagged_bands = bands.iter().filter(|b| b.flagged).count();
    Ok(StageBandReport {
        schema_version: WIGGLE_SCHEMA_VERSION,
        y,
        depth,
        band_fraction: BAND_FRACTION,
        bands,
        flagged_bands,
        reports,
    })
}

/// Minimal SVG with `Q` drawn as the unit square, y pointing up.
pub fn polylines_svg(curves: &[(Vec<Point2>, &str)], size: f64) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"-0.02 -1.02 1.04 1.04\">\n\
         <rect x=\"0\" y=\"-1\" width=\"1\" height=\"1\" fill=\"none\" stroke=\"#888\" stroke-width=\"0.002\"/>\n"
    );
    for (pts, color) in curves {
        let coords: Vec<String> = pts.iter().map(|p| format!("{:.6},{:.6}", p.x, -p.y)).collect();
        s.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"0.0015\" points=\"{}\"/>\n",
            coords.join(" ")
        ));
    }
    s.push_str("</svg>\n");
    s
}

/// Boundaries of the first `limit` level-`level` rectangles mapped by `g_level`.
pub fn tube_outlines(
    g: &WiggleComposed,
    family: &NestedIntervalFamily,
    level: usize,
    limit: usize,
    per_side: usize,
) -> Result<Vec<Vec<Point2>>, WiggleError> {
    let ivs = family_level(family, level)?;
    let mut out = Vec::new();
    for iv in ivs.iter().take(limit) {
        let corners = [
            Point2::new(0.0, iv.left),
            Point2::new(1.0, iv.left),
            Point2::new(1.0, iv.right()),
            Point2::new(0.0, iv.right()),
        ];
        let mut ring = Vec::new();
        for c in 0..4 {
            let (a, b) = (corners[c], corners[(c + 1) % 4]);
            let steps = if c % 2 == 0 { per_side } else { 2 };
            for t in 0..steps {
                ring.push(g.apply_to(level, a.lerp(b, t as f64 / steps as f64))?);
            }
        }
        ring.push(ring[0]);
        out.push(ring);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cantor::build_nested_family;

    #[test]
    fn bend_fixes_boundary_and_lifts_center() {
        let b = bend_map(DEFAULT_AMPLITUDE).unwrap();
        for i in 0..100 {
            let t = i as f64 / 100.0;
            for p in [Point2::new(t, 0.0), Point2::new(1.0, t), Point2::new(1.0 - t, 1.0), Point2::new(0.0, 1.0 - t)] {
                assert!(b.apply(p).dist(p) < 1e-12);
            }
        }
        let c = b.apply(Point2::new(0.5, 0.5));
        assert!((c.y - 0.625).abs() < 1e-15 && c.x == 0.5);
        assert!(b.min_jacobian > 0.0);
        let dev = (0..=200)
            .map(|i| b.apply(Point2::new(i as f64 / 200.0, 0.5)).y - 0.5)
            .fold(0.0, f64::max);
        assert!(dev >= 0.125 - 1e-15);
        assert!(bend_map(0.2).is_err());
    }

    #[test]
    fn bend_jacobian_matches_differences() {
        let b = bend_map(DEFAULT_AMPLITUDE).unwrap();
        let p = Point2::new(0.3, 0.15);
        let j = b.jacobian(p);
        let e = 1e-6;
        let dx = (b.apply(Point2::new(p.x + e, p.y)) - b.apply(Point2::new(p.x - e, p.y))) * (0.5 / e);
        let dy = (b.apply(Point2::new(p.x, p.y + e)) - b.apply(Point2::new(p.x, p.y - e))) * (0.5 / e);
        assert!((dx.y - j.c).abs() < 1e-6 && (dy.y - j.d).abs() < 1e-6);
    }

    #[test]
    fn inscribe_straight_and_rejects_non_graph() {
        let line: Vec<Point2> = (0..=100).map(|i| Point2::new(i as f64 / 100.0, 0.3)).collect();
        let g = inscribe_polyline(&line, 7).unwrap();
        assert_eq!(g.len(), 8);
        assert!(g.iter().all(|p| p.y == 0.3));
        let mut bad = line.clone();
        bad.swap(10, 11);
        assert_eq!(inscribe_polyline(&bad, 7), Err(WiggleError::NotAGraph { index: 11 }));
        assert!(inscribe_polyline(&line, 1).is_err());
    }

    #[test]
    fn inscribed_bend_is_second_order_close() {
        let b = bend_map(DEFAULT_AMPLITUDE).unwrap();
        let err = |n: usize| {
            let g = bent_polyline(&b, 0.5, n).unwrap();
            (0..=4000)
                .map(|i| {
                    let x = i as f64 / 4000.0;
                    let k = ((x * n as f64) as usize).min(n - 1);
                    let t = x * n as f64 - k as f64;
                    (g[k].lerp(g[k + 1], t).y - b.apply(Point2::new(x, 0.5)).y).abs()
                })
                .fold(0.0, f64::max)
        };
        let (e20, e40) = (err(20), err(40));
        assert!(e20 * 400.0 < 1.0, "{e20}");
        assert!(e40 < 0.35 * e20, "{e20} {e40}");
    }

    #[test]
    fn straight_offset_is_a_strip_of_squares() {
        let g: Vec<Point2> = (0..=10).map(|k| Point2::new(k as f64 / 10.0, 0.2)).collect();
        let t = offset_tube(&g).unwrap();
        assert!(t.max_angle_deviation < 1e-12);
        for (z, w) in t.gamma_n.iter().zip(&t.gamma_tilde) {
            assert!((w.x - z.x).abs() < 1e-15 && (w.y - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn offset_angle_deviation_scales_like_one_over_n() {
        let b = bend_map(DEFAULT_AMPLITUDE).unwrap();
        let d = |n| offset_tube(&bent_polyline(&b, 0.5, n).unwrap()).unwrap().max_angle_deviation;
        let (d20, d40) = (d(20), d(40));
        let ratio = d40 / d20;
        assert!((0.35..=0.65).contains(&ratio), "{d20} {d40}");
    }

    #[test]
    fn offset_rejects_sharp_turn() {
        let g = vec![Point2::new(0.0, 0.0), Point2::new(0.5, 0.0), Point2::new(0.4, 0.5)];
        assert_eq!(offset_tube(&g), Err(WiggleError::SharpTurn { index: 1 }));
    }

    #[test]
    fn flat_bend_stage_is_identity() {
        let fam = build_nested_family(&[10, 20], 2).unwrap();
        let bend = bend_map(0.0).unwrap();
        let st = build_stage(&fam, 1, &bend).unwrap();
        assert!((st.ledger.tube_k - 1.0).abs() < 1e-9 && (st.ledger.extension_k - 1.0).abs() < 1e-9);
        for i in 0..=20 {
            for j in 0..=20 {
                let p = Point2::new(i as f64 / 20.0, j as f64 / 20.0);
                assert!(st.apply(p).unwrap().dist(p) < 1e-12);
            }
        }
    }

    #[test]
    fn stage_fixes_boundary_and_reports_dilatation() {
        let fam = build_nested_family(&[10, 20, 40], 3).unwrap();
        let bend = bend_map(DEFAULT_AMPLITUDE).unwrap();
        let st = build_stage(&fam, 1, &bend).unwrap();
        for i in 0..100 {
            let t = i as f64 / 99.0;
            for p in [Point2::new(t, 0.0), Point2::new(t, 1.0), Point2::new(0.0, t), Point2::new(1.0, t)] {
                assert!(st.apply(p).unwrap().dist(p) < 1e-12);
            }
        }
        assert!(st.ledger.tube_k > 1.0 && st.ledger.tube_k.is_finite());
        assert!(st.ledger.extension_k < 10.0);
        let st2 = build_stage(&fam, 2, &bend).unwrap();
        assert!(st2.ledger.c_estimate <= 2.0 * st.ledger.c_estimate);
        // identity off the level-1 rectangles
        let p = Point2::new(0.3, 0.05);
        assert_eq!(st2.apply(p).unwrap(), p);
    }

    #[test]
    fn stage_maps_children_into_tubes() {
        let fam = build_nested_family(&[12], 1).unwrap();
        let bend = bend_map(DEFAULT_AMPLITUDE).unwrap();
        let st = build_stage(&fam, 1, &bend).unwrap();
        let j = place_children(Interval { left: 0.0, length: 1.0 }, 12)[1];
        let z = st.apply(Point2::new(0.5, j.left)).unwrap();
        assert!((z.y - (j.left + 0.125)).abs() < 1e-12);
    }

    #[test]
    fn composition_checks_and_locality() {
        let fam = build_nested_family(&[10, 20, 40], 3).unwrap();
        let bend = bend_map(DEFAULT_AMPLITUDE).unwrap();
        let s: Vec<WiggleStage> = (1..=3).map(|l| build_stage(&fam, l, &bend).unwrap()).collect();
        assert!(matches!(
            compose_stages(vec![s[1].clone()]),
            Err(WiggleError::NestingViolated { index: 0, level: 2, expected: 1 })
        ));
        let one = compose_stages(vec![s[0].clone()]).unwrap();
        let g = compose_stages(s.clone()).unwrap();
        let first = &fam.generations.as_ref().unwrap()[1];
        let mut checked = 0;
        for i in 0..400 {
            let p = Point2::new((i % 20) as f64 / 19.0, (i / 20) as f64 / 19.0);
            assert_eq!(one.apply_to(1, p).unwrap(), s[0].apply(p).unwrap());
            if first.iter().any(|iv| iv.contains(p.y)) {
                continue;
            }
            let a = g.apply_to(2, p).unwrap();
            let b = g.apply_to(3, p).unwrap();
            assert!(a.dist(b) < 1e-12);
            checked += 1;
        }
        assert!(checked >= 100);
        assert!((g.reciprocal_sum() - 0.175).abs() < 1e-15);
    }

    #[test]
    fn identity_has_no_oscillation() {
        let r = oscillation_report(|p| Ok(p), 0.4, 6, 10).unwrap();
        assert!(r.scales.iter().all(|s| s.max_deviation < 1e-12 && !s.flagged));
        assert!(r.lengths.iter().all(|l| (l.length - 1.0).abs() < 1e-12));
        assert!(r.monotone);
    }

    #[test]
    fn first_stage_deviates_at_top_scale() {
        let fam = build_nested_family(&[10], 1).unwrap();
        let bend = bend_map(DEFAULT_AMPLITUDE).unwrap();
        let g = compose_stages(vec![build_stage(&fam, 1, &bend).unwrap()]).unwrap();
        let y = fam.generations.as_ref().unwrap()[1][0].mid();
        let r = oscillation_report(|p| g.apply_to(1, p), y, 4, 12).unwrap();
        assert!(r.scales[0].max_deviation >= 0.12, "{:?}", r.scales[0]);
        assert!(r.monotone);
    }

    #[test]
    fn second_stage_adds_a_band() {
        let fam = build_nested_family(&[10, 20], 2).unwrap();
        let bend = bend_map(DEFAULT_AMPLITUDE).unwrap();
        let s: Vec<WiggleStage> = (1..=2).map(|l| build_stage(&fam, l, &bend).unwrap()).collect();
        let g = compose_stages(s).unwrap();
        let y = fam.generations.as_ref().unwrap()[2][3].mid();
        let r = stage_bands(&g, y, 11).unwrap();
        assert_eq!(r.flagged_bands, 2, "{:?}", r.bands);
        assert!(r.bands.iter().all(|b| b.growth > 1.0));
        assert!(r.reports.iter().all(|o| o.monotone));
        assert_eq!(band_octaves(0.1), (3, 4));
    }
}
