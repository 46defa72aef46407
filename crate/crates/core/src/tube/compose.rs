//! Composition `g_n = f_1 ∘ … ∘ f_n`, where `f_ℓ` is the identity off the
//! generation-`(ℓ−1)` rectangles and a scaled copy of the stage map on each
//! of their squares.

use super::{GenerationMap, TubeError};
use crate::cantor::CantorApprox;
use crate::geometry::{dilatation_of_linear, Linear2, Point2};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Stage-`K` threshold for "non-conformal" in the locality ledger.
pub const LOCALITY_K_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct ComposedMap {
    pub base: GenerationMap,
    pub cantor: CantorApprox,
    pub stages: usize,
}

/// One evaluated point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEval {
    pub point: Point2,
    pub image: Point2,
    pub jacobian: Linear2,
    pub k: f64,
    /// Dilatation of each stage at the point it acts on, stage 1 first.
    pub stage_k: Vec<f64>,
    /// Stages whose complement extension was used.
    pub extension_layers: usize,
}

pub fn compose_generations(maps: &[GenerationMap], cantor: &CantorApprox) -> Result<ComposedMap, TubeError> {
    let first = maps.first().ok_or_else(|| TubeError::NotNested("no stages".into()))?;
    for (i, m) in maps.iter().enumerate() {
        if m.stage != i + 1 {
            return Err(TubeError::NotNested(format!("map {i} has stage {}", m.stage)));
        }
        if m.params != first.params || m.rects != first.rects {
            return Err(TubeError::NotNested(format!("stage {} is not a scaled copy of stage 1", m.stage)));
        }
    }
    let need = maps.len() * first.params.k as usize;
    if cantor.depth() < need {
        return Err(TubeError::InsufficientDepth { have: cantor.depth(), need });
    }
    Ok(ComposedMap { base: first.clone(), cantor: cantor.clone(), stages: maps.len() })
}

impl ComposedMap {
    pub fn n(&self) -> f64 {
        self.base.n
    }

    fn depth_of(&self, stage: usize) -> usize {
        (stage - 1) * self.base.params.k as usize
    }

    /// Stage `ℓ` at `p`: image, linear part and whether an extension piece
    /// was used. Identity off the generation-`(ℓ−1)` rectangles.
    fn stage_at(&self, stage: usize, p: Point2) -> Result<(Point2, Linear2, bool), TubeError> {
        let (q, l, ext) = if stage == 1 {
            self.base_at(p)?
        } else {
            let d = self.depth_of(stage);
            let Some(i) = self.cantor.locate(d, p.y) else {
                return Ok((p, Linear2::IDENTITY, false));
            };
            let iv = self.cantor.generations[d][i];
            let count = self.n().powi(stage as i32 - 1);
            let side = 1.0 / count;
            let col = (p.x * count).floor().clamp(0.0, count - 1.0);
            let local = Point2::new(((p.x - col * side) / side).clamp(0.0, 1.0), ((p.y - iv.left) / iv.length).clamp(0.0, 1.0));
            let (q, l, ext) = self.base_at(local)?;
            let back = Point2::new(col * side + q.x * side, iv.left + q.y * iv.length);
            (back, l, ext)
        };
        Ok((q, l, ext))
    }

    fn base_at(&self, p: Point2) -> Result<(Point2, Linear2, bool), TubeError> {
        let i = self.base.map.locate(p).ok_or(TubeError::Geometry(crate::geometry::GeometryError::OutsideDomain { x: p.x, y: p.y }))?;
        let piece = &self.base.map.pieces()[i];
        Ok((piece.apply(p), piece.linear, self.base.is_extension_piece(i)))
    }

    /// `g_h(p)` for `h ≤ stages`, with the chain-rule Jacobian.
    pub fn eval_to(&self, h: usize, p: Point2) -> Result<PointEval, TubeError> {
        let mut q = p;
        let mut jac = Linear2::IDENTITY;
        let mut stage_k = vec![1.0; h];
        let mut layers = 0;
        for stage in (1..=h).rev() {
            let (next, l, ext) = self.stage_at(stage, q)?;
            stage_k[stage - 1] = dilatation_of_linear(&l)?.k;
            if ext {
                layers += 1;
            }
            jac = l.compose(&jac);
            q = next;
        }
        let k = dilatation_of_linear(&jac)?.k;
        Ok(PointEval { point: p, image: q, jacobian: jac, k, stage_k, extension_layers: layers })
    }

    pub fn eval(&self, p: Point2) -> Result<PointEval, TubeError> {
        self.eval_to(self.stages, p)
    }

    pub fn apply(&self, p: Point2) -> Result<Point2, TubeError> {
        Ok(self.eval(p)?.image)
    }
}

/// Summary of a grid of evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalityReport {
    pub samples: usize,
    pub max_extension_layers: usize,
    /// Points where more than one stage exceeds `1 + LOCALITY_K_TOL`.
    pub multi_stage_points: usize,
    pub max_k: f64,
    pub max_stage_k: f64,
    /// `max_k / max_stage_k`.
    pub slack: f64,
    /// Largest departure on `∂Q`: `|g(p) − p|` on the top and bottom edges,
    /// `|g(p).x − p.x|` on the sides.
    pub boundary_drift: f64,
}

/// Evaluate on the cell centers of a `res × res` grid plus the boundary.
pub fn locality_report(g: &ComposedMap, res: usize) -> Result<LocalityReport, TubeError> {
    let mut rep = LocalityReport {
        samples: 0,
        max_extension_layers: 0,
        multi_stage_points: 0,
        max_k: 1.0,
        max_stage_k: 1.0,
        slack: 1.0,
        boundary_drift: 0.0,
    };
    for iy in 0..res {
        for ix in 0..res {
            let p = Point2::new((ix as f64 + 0.5) / res as f64, (iy as f64 + 0.5) / res as f64);
            let e = g.eval(p)?;
            rep.samples += 1;
            rep.max_extension_layers = rep.max_extension_layers.max(e.extension_layers);
            if e.stage_k.iter().filter(|&&k| k > 1.0 + LOCALITY_K_TOL).count() > 1 {
                rep.multi_stage_points += 1;
            }
            rep.max_k = rep.max_k.max(e.k);
            rep.max_stage_k = rep.max_stage_k.max(e.stage_k.iter().cloned().fold(1.0, f64::max));
        }
    }
    for i in 0..=res {
        let u = i as f64 / res as f64;
        for p in [Point2::new(u, 0.0), Point2::new(u, 1.0)] {
            rep.boundary_drift = rep.boundary_drift.max(g.apply(p)?.dist(p));
        }
        let (l, r) = (g.apply(Point2::new(0.0, u))?, g.apply(Point2::new(1.0, u))?);
        rep.boundary_drift = rep.boundary_drift.max(l.x.abs()).max((r.x - 1.0).abs());
    }
    rep.slack = rep.max_k / rep.max_stage_k;
    Ok(rep)
}

/// One covering square and its image diameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiameterRow {
    pub generation: usize,
    /// Column (horizontal fibers) or rectangle index (vertical fibers).
    pub index: usize,
    pub mass: f64,
    pub diameter: f64,
}

/// Which fiber a diameter ledger covers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fiber {
    /// `[0,1] × {y}`, covered by `N^h` squares of mass `N^{−h}`.
    Horizontal(f64),
    /// `{x} × E`, covered by `2^{kh}` squares of mass `2^{−kh}`.
    Vertical(f64),
}

fn diameter(pts: &[Point2]) -> f64 {
    let mut d = 0.0f64;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            d = d.max(pts[i].dist(pts[j]));
        }
    }
    d
}

/// Boundary samples of the square `[x0, x0+s] × [y0, y0+t]`.
fn square_boundary(x0: f64, y0: f64, s: f64, t: f64, per_side: usize) -> Vec<Point2> {
    let mut out = Vec::with_capacity(4 * per_side);
    for i in 0..per_side {
        let u = i as f64 / per_side as f64;
        out.push(Point2::new(x0 + u * s, y0));
        out.push(Point2::new(x0 + s, y0 + u * t));
        out.push(Point2::new(x0 + s - u * s, y0 + t));
        out.push(Point2::new(x0, y0 + t - u * t));
    }
    out
}

/// Image diameters of the generation-`h` squares covering a fiber, for
/// `h = 1..=generations`. Images are taken under `g_h`; deeper stages map
/// each such square onto itself.
pub fn diameter_ledger(g: &ComposedMap, fiber: Fiber, generations: usize, per_side: usize) -> Result<Vec<DiameterRow>, TubeError> {
    if generations > g.stages {
        return Err(TubeError::InsufficientDepth { have: g.stages, need: generations });
    }
    let k = g.base.params.k as usize;
    let mut rows = Vec::new();
    for h in 1..=generations {
        let d = h * k;
        let count = g.n().powi(h as i32);
        let side = 1.0 / count;
        match fiber {
            Fiber::Horizontal(y) => {
                let i = g.cantor.locate(d, y).ok_or_else(|| TubeError::NotNested(format!("y = {y} is not in generation {d}")))?;
                let iv = g.cantor.generations[d][i];
                for c in 0..count as usize {
                    let pts: Result<Vec<Point2>, TubeError> = square_boundary(c as f64 * side, iv.left, side, iv.length, per_side)
                        .into_iter()
                        .map(|p| Ok(g.eval_to(h, p)?.image))
                        .collect();
                    rows.push(DiameterRow { generation: h, index: c, mass: 1.0 / count, diameter: diameter(&pts?) });
                }
            }
            Fiber::Vertical(x) => {
                let col = (x * count).floor().clamp(0.0, count - 1.0);
                let ivs = &g.cantor.generations[d];
                for (i, iv) in ivs.iter().enumerate() {
                    let pts: Result<Vec<Point2>, TubeError> = square_boundary(col * side, iv.left, side, iv.length, per_side)
                        .into_iter()
                        .map(|p| Ok(g.eval_to(h, p)?.image))
                        .collect();
                    rows.push(DiameterRow { generation: h, index: i, mass: 1.0 / ivs.len() as f64, diameter: diameter(&pts?) });
                }
            }
        }
    }
    Ok(rows)
}

/// Largest `C1` with `diam_h ≥ (C1·(2α)^{−k/2}/N)^h` for every row, i.e.
/// `min_h (min diam_h · N^h / ((2α)^{−k/2})^h)^{1/h}`.
pub fn measured_c1(g: &ComposedMap, rows: &[DiameterRow]) -> f64 {
    let p = &g.base.params;
    let unit = p.expected_width_ratio() / p.n as f64;
    rows.iter()
        .filter(|r| r.generation >= 1)
        .map(|r| (r.diameter.ln() / r.generation as f64 - unit.ln()).exp())
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationRow {
    pub generation: usize,
    pub distance: f64,
    /// `(distance · N^h)^{1/h}`.
    pub c2: f64,
}

/// Smallest distance between images of distinct generation-`h` tubes, from
/// boundary samples, for `h = 1..=generations`.
pub fn tube_separation(g: &ComposedMap, generations: usize) -> Result<Vec<SeparationRow>, TubeError> {
    let k = g.base.params.k as usize;
    let n = g.n();
    let mut out = Vec::new();
    for h in 1..=generations.min(g.stages) {
        // tube boundaries of stage h, in source coordinates, grouped by the
        // generation-h rectangle they belong to
        let parents = if h == 1 { vec![(0.0, 1.0)] } else { g.cantor.generations[(h - 1) * k].iter().map(|iv| (iv.left, iv.length)).collect() };
        let count = n.powi(h as i32 - 1);
        let side = 1.0 / count;
        let mut sets: Vec<Vec<Point2>> = Vec::new();
        for &(a, len) in &parents {
            for tube in &g.base.tubes {
                let mut pts = Vec::new();
                for c in 0..count as usize {
                    for i in 0..tube.len() {
                        let (p, q) = (tube[i], tube[(i + 1) % tube.len()]);
                        for t in [0.0, 0.5] {
                            let l = p.lerp(q, t);
                            let src = Point2::new(c as f64 * side + l.x * side, a + l.y * len);
                            // f_h has already been applied: src lies on the stage-h tube
                            let img = if h == 1 { src } else { g.eval_to(h - 1, src)?.image };
                            pts.push(img);
                        }
                    }
                }
                sets.push(pts);
            }
        }
        let d = min_set_distance(&sets);
        out.push(SeparationRow { generation: h, distance: d, c2: (d * n.powi(h as i32)).powf(1.0 / h as f64) });
    }
    Ok(out)
}

/// Smallest distance between points of different sets, by grid hashing.
fn min_set_distance(sets: &[Vec<Point2>]) -> f64 {
    // a pair closer than `cell` always sits in neighboring cells
    let mut cell = 1e-4;
    loop {
        let mut grid: HashMap<(i64, i64), Vec<(usize, Point2)>> = HashMap::new();
        for (s, pts) in sets.iter().enumerate() {
            for &p in pts {
                grid.entry(((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)).or_default().push((s, p));
            }
        }
        let mut best = f64::INFINITY;
        for (&(cx, cy), items) in &grid {
            for dx in -1..=1 {
                for dy in -1..=1 {
                    if let Some(other) = grid.get(&(cx + dx, cy + dy)) {
                        for &(s, p) in items {
                            for &(t, q) in other {
                                if s != t {
                                    best = best.min(p.dist(q));
                                }
                            }
                        }
                    }
                }
            }
        }
        if best <= cell || cell >= 1.0 {
            return best;
        }
        cell *= 2.0;
    }
}
