//! Planar primitives, affine pieces and piecewise-linear maps.
//!
//! A [`TriangulatedMap`] is a list of affine pieces, each defined on a source
//! triangle. Point location goes through a uniform bucket grid so composed
//! maps with tens of thousands of pieces stay cheap to evaluate.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Sub};
use thiserror::Error;

/// Boundary tolerance for point-in-triangle tests (distance to an edge line).
pub const EDGE_EPS: f64 = 1e-12;

/// Current version of the serialized map document.
pub const MAP_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate or negatively oriented triangle (signed area {area:e})")]
    DegenerateTriangle { area: f64 },
    #[error("affine piece is orientation reversing (det {det:e})")]
    OrientationReversing { det: f64 },
    #[error("quad {index} is not strictly convex")]
    NonConvexQuad { index: usize },
    #[error("point ({x}, {y}) lies outside the map domain")]
    OutsideDomain { x: f64, y: f64 },
    #[error("source and image quad lists differ in length ({src} vs {dst})")]
    QuadCountMismatch { src: usize, dst: usize },
    #[error("non-finite coordinate")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    /// Counterclockwise perpendicular.
    pub fn perp(self) -> Point2 {
        Point2::new(-self.y, self.x)
    }

    pub fn lerp(self, other: Point2, t: f64) -> Point2 {
        self + (other - self) * t
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

/// Twice the signed area of `(a, b, c)`; positive when counterclockwise.
pub fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b - a).cross(c - a)
}

/// Signed area of a closed polygon (shoelace), positive when counterclockwise.
pub fn polygon_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        s += poly[i].cross(poly[(i + 1) % n]);
    }
    0.5 * s
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(poly: &[Point2], p: Point2) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

/// Minimum distance between two closed polygonal chains given as vertex loops.
pub fn polygon_distance(a: &[Point2], b: &[Point2]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..a.len() {
        let (a0, a1) = (a[i], a[(i + 1) % a.len()]);
        for j in 0..b.len() {
            let (b0, b1) = (b[j], b[(j + 1) % b.len()]);
            if segments_intersect(a0, a1, b0, b1) {
                return 0.0;
            }
            best = best
                .min(point_segment_distance(a0, b0, b1))
                .min(point_segment_distance(a1, b0, b1))
                .min(point_segment_distance(b0, a0, a1))
                .min(point_segment_distance(b1, a0, a1));
        }
    }
    best
}

/// Proper or touching intersection of two closed segments.
pub fn segments_intersect(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |a: Point2, b: Point2, c: Point2, d: f64| {
        d == 0.0
            && c.x >= a.x.min(b.x)
            && c.x <= a.x.max(b.x)
            && c.y >= a.y.min(b.y)
            && c.y <= a.y.max(b.y)
    };
    on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4)
}

/// Clip a (possibly nonconvex) polygon to the axis-aligned box
/// `[x0, x1] × [y0, y1]` (Sutherland–Hodgman). The result may contain
/// degenerate edges but its signed area is exact.
pub fn clip_polygon_to_rect(poly: &[Point2], x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Point2> {
    fn clip(input: &[Point2], inside: impl Fn(Point2) -> f64) -> Vec<Point2> {
        let n = input.len();
        let mut out = Vec::with_capacity(n + 4);
        for i in 0..n {
            let (a, b) = (input[i], input[(i + 1) % n]);
            let (da, db) = (inside(a), inside(b));
            if da >= 0.0 {
                out.push(a);
            }
            if (da >= 0.0) != (db >= 0.0) {
                out.push(a.lerp(b, da / (da - db)));
            }
        }
        out
    }
    let mut p = poly.to_vec();
    for f in [
        &(|q: Point2| q.x - x0) as &dyn Fn(Point2) -> f64,
        &|q: Point2| x1 - q.x,
        &|q: Point2| q.y - y0,
        &|q: Point2| y1 - q.y,
    ] {
        if p.is_empty() {
            break;
        }
        p = clip(&p, f);
    }
    p
}

/// Parameter range `[t0, t1]` of the segment `a + t(b − a)` inside the closed
/// box, or `None` (Liang–Barsky).
pub fn segment_box_range(a: Point2, b: Point2, x0: f64, y0: f64, x1: f64, y1: f64) -> Option<(f64, f64)> {
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-d.x, a.x - x0), (d.x, x1 - a.x), (-d.y, a.y - y0), (d.y, y1 - a.y)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Whether the segment meets the open box `(x0, x1) × (y0, y1)`.
pub fn segment_meets_open_box(a: Point2, b: Point2, x0: f64, y0: f64, x1: f64, y1: f64) -> bool {
    match segment_box_range(a, b, x0, y0, x1, y1) {
        None => false,
        Some((t0, t1)) => {
            let m = a.lerp(b, 0.5 * (t0 + t1));
            m.x > x0 && m.x < x1 && m.y > y0 && m.y < y1
        }
    }
}

/// A positively oriented, nondegenerate triangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Triangle {
    vertices: [Point2; 3],
}

impl Triangle {
    pub fn new(a: Point2, b: Point2, c: Point2) -> Result<Self, GeometryError> {
        if !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let area = 0.5 * orient(a, b, c);
        if area <= 0.0 {
            return Err(GeometryError::DegenerateTriangle { area });
        }
        Ok(Triangle { vertices: [a, b, c] })
    }

    pub fn vertices(&self) -> [Point2; 3] {
        self.vertices
    }

    pub fn area(&self) -> f64 {
        let [a, b, c] = self.vertices;
        0.5 * orient(a, b, c)
    }

    /// Containment with the boundary fallback: a point within [`EDGE_EPS`]
    /// of an edge line (on the inner side or just outside) counts as inside.
    pub fn contains(&self, p: Point2) -> bool {
        let [a, b, c] = self.vertices;
        for (u, v) in [(a, b), (b, c), (c, a)] {
            let o = orient(u, v, p);
            if o < 0.0 && -o > EDGE_EPS * u.dist(v) {
                return false;
            }
        }
        true
    }

    /// Longest edge squared over twice the area; 2/√3 for equilateral.
    pub fn aspect_ratio(&self) -> f64 {
        let [a, b, c] = self.vertices;
        let l = a.dist(b).max(b.dist(c)).max(c.dist(a));
        l * l / (2.0 * self.area())
    }

    pub fn bbox(&self) -> (Point2, Point2) {
        let [a, b, c] = self.vertices;
        (
            Point2::new(a.x.min(b.x).min(c.x), a.y.min(b.y).min(c.y)),
            Point2::new(a.x.max(b.x).max(c.x), a.y.max(b.y).max(c.y)),
        )
    }
}

impl<'de> Deserialize<'de> for Triangle {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            vertices: [Point2; 3],
        }
        let raw = Raw::deserialize(d)?;
        let [a, b, c] = raw.vertices;
        Triangle::new(a, b, c).map_err(serde::de::Error::custom)
    }
}

/// A 2×2 real matrix `[[a, b], [c, d]]` acting on column vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Linear2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Linear2 {
    pub const IDENTITY: Linear2 = Linear2 { a: 1.0, b: 0.0, c: 0.0, d: 1.0 };

    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Linear2 { a, b, c, d }
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        Point2::new(self.a * p.x + self.b * p.y, self.c * p.x + self.d * p.y)
    }

    /// `self ∘ other`.
    pub fn compose(&self, o: &Linear2) -> Linear2 {
        Linear2 {
            a: self.a * o.a + self.b * o.c,
            b: self.a * o.b + self.b * o.d,
            c: self.c * o.a + self.d * o.c,
            d: self.c * o.b + self.d * o.d,
        }
    }

    pub fn scale(&self, s: f64) -> Linear2 {
        Linear2::new(self.a * s, self.b * s, self.c * s, self.d * s)
    }

    pub fn inverse(&self) -> Option<Linear2> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        Some(Linear2::new(self.d / det, -self.b / det, -self.c / det, self.a / det))
    }

    pub fn rotation(theta: f64) -> Linear2 {
        let (s, c) = theta.sin_cos();
        Linear2::new(c, -s, s, c)
    }
}

/// An orientation-preserving affine map restricted to a source triangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffinePiece {
    pub source: Triangle,
    pub linear: Linear2,
    pub translation: Point2,
}

impl AffinePiece {
    pub fn apply(&self, p: Point2) -> Point2 {
        self.linear.apply(p) + self.translation
    }

    pub fn image(&self) -> [Point2; 3] {
        self.source.vertices().map(|v| self.apply(v))
    }
}

/// The unique affine map sending the vertices of `src` to those of `dst`, in order.
pub fn affine_between(src: &Triangle, dst: &Triangle) -> AffinePiece {
    let [s0, s1, s2] = src.vertices();
    let [d0, d1, d2] = dst.vertices();
    let (u1, u2) = (s1 - s0, s2 - s0);
    let (w1, w2) = (d1 - d0, d2 - d0);
    // A = W · V⁻¹ with V = [u1 u2], W = [w1 w2] as columns.
    let v = Linear2::new(u1.x, u2.x, u1.y, u2.y);
    let w = Linear2::new(w1.x, w2.x, w1.y, w2.y);
    let vinv = v.inverse().expect("nondegenerate source triangle");
    let linear = w.compose(&vinv);
    let translation = d0 - linear.apply(s0);
    AffinePiece { source: *src, linear, translation }
}

/// Checked variant of [`affine_between`] taking raw vertex triples.
pub fn affine_between_points(
    src: [Point2; 3],
    dst: [Point2; 3],
) -> Result<AffinePiece, GeometryError> {
    let s = Triangle::new(src[0], src[1], src[2])?;
    let d = Triangle::new(dst[0], dst[1], dst[2])?;
    Ok(affine_between(&s, &d))
}

/// Beltrami coefficient and distortion of an affine piece.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dilatation {
    pub mu_re: f64,
    pub mu_im: f64,
    pub k: f64,
}

impl Dilatation {
    pub fn mu_abs(&self) -> f64 {
        self.mu_re.hypot(self.mu_im)
    }
}

/// Closed-form Beltrami coefficient of `z ↦ Lz`: `f_z = ((a+d) + i(c−b))/2`,
/// `f_z̄ = ((a−d) + i(c+b))/2`, `μ = f_z̄ / f_z`.
pub fn dilatation_of_linear(l: &Linear2) -> Result<Dilatation, GeometryError> {
    let det = l.det();
    if det <= 0.0 {
        return Err(GeometryError::OrientationReversing { det });
    }
    let (fz_re, fz_im) = (0.5 * (l.a + l.d), 0.5 * (l.c - l.b));
    let (fzb_re, fzb_im) = (0.5 * (l.a - l.d), 0.5 * (l.c + l.b));
    let den = fz_re * fz_re + fz_im * fz_im;
    // det = |f_z|² − |f_z̄|² > 0 so den > 0.
    let mu_re = (fzb_re * fz_re + fzb_im * fz_im) / den;
    let mu_im = (fzb_im * fz_re - fzb_re * fz_im) / den;
    let m = mu_re.hypot(mu_im);
    Ok(Dilatation { mu_re, mu_im, k: (1.0 + m) / (1.0 - m) })
}

pub fn dilatation_of(piece: &AffinePiece) -> Result<Dilatation, GeometryError> {
    dilatation_of_linear(&piece.linear)
}

/// Distortion `K` of a linear map, via singular values (equivalent to the
/// Beltrami route; kept separate so tests can compare the two).
pub fn distortion_from_singular_values(l: &Linear2) -> f64 {
    let s = l.a * l.a + l.b * l.b + l.c * l.c + l.d * l.d;
    let det = l.det().abs();
    let disc = (s * s - 4.0 * det * det).max(0.0).sqrt();
    let smax = ((s + disc) / 2.0).sqrt();
    let smin = ((s - disc) / 2.0).max(0.0).sqrt();
    smax / smin
}

#[derive(Debug, Clone)]
struct BucketGrid {
    origin: Point2,
    cell: Point2,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl BucketGrid {
    fn build(tris: &[Triangle]) -> Self {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for t in tris {
            let (a, b) = t.bbox();
            lo = Point2::new(lo.x.min(a.x), lo.y.min(a.y));
            hi = Point2::new(hi.x.max(b.x), hi.y.max(b.y));
        }
        if tris.is_empty() {
            lo = Point2::default();
            hi = Point2::new(1.0, 1.0);
        }
        let n = ((tris.len() as f64).sqrt().ceil() as usize).clamp(1, 512);
        let w = (hi.x - lo.x).max(1e-300);
        let h = (hi.y - lo.y).max(1e-300);
        let cell = Point2::new(w / n as f64, h / n as f64);
        let mut buckets = vec![Vec::new(); n * n];
        let slack = 1e-9 * w.max(h);
        for (i, t) in tris.iter().enumerate() {
            let (a, b) = t.bbox();
            let (x0, y0) = Self::index_of(lo, cell, n, n, Point2::new(a.x - slack, a.y - slack));
            let (x1, y1) = Self::index_of(lo, cell, n, n, Point2::new(b.x + slack, b.y + slack));
            for iy in y0..=y1 {
                for ix in x0..=x1 {
                    buckets[iy * n + ix].push(i as u32);
                }
            }
        }
        BucketGrid { origin: lo, cell, nx: n, ny: n, buckets }
    }

    fn index_of(o: Point2, cell: Point2, nx: usize, ny: usize, p: Point2) -> (usize, usize) {
        let fx = ((p.x - o.x) / cell.x).floor();
        let fy = ((p.y - o.y) / cell.y).floor();
        (
            (fx.max(0.0) as usize).min(nx - 1),
            (fy.max(0.0) as usize).min(ny - 1),
        )
    }

    fn candidates(&self, p: Point2) -> &[u32] {
        let (ix, iy) = Self::index_of(self.origin, self.cell, self.nx, self.ny, p);
        &self.buckets[iy * self.nx + ix]
    }
}

/// A piecewise-linear map given by affine pieces over a triangulated domain.
#[derive(Debug, Clone)]
pub struct TriangulatedMap {
    pieces: Vec<AffinePiece>,
    index: BucketGrid,
}

impl TriangulatedMap {
    pub fn new(pieces: Vec<AffinePiece>) -> Self {
        let tris: Vec<Triangle> = pieces.iter().map(|p| p.source).collect();
        let index = BucketGrid::build(&tris);
        TriangulatedMap { pieces, index }
    }

    /// Identity on the union of the given triangles.
    pub fn identity_on(tris: &[Triangle]) -> Self {
        Self::new(
            tris.iter()
                .map(|t| AffinePiece {
                    source: *t,
                    linear: Linear2::IDENTITY,
                    translation: Point2::default(),
                })
                .collect(),
        )
    }

    pub fn pieces(&self) -> &[AffinePiece] {
        &self.pieces
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Index of a piece whose source triangle contains `p`.
    pub fn locate(&self, p: Point2) -> Option<usize> {
        if !p.is_finite() {
            return None;
        }
        self.index
            .candidates(p)
            .iter()
            .map(|&i| i as usize)
            .find(|&i| self.pieces[i].source.contains(p))
    }

    pub fn apply(&self, p: Point2) -> Result<Point2, GeometryError> {
        self.locate(p)
            .map(|i| self.pieces[i].apply(p))
            .ok_or(GeometryError::OutsideDomain { x: p.x, y: p.y })
    }

    /// Image point together with the linear part of the piece used.
    pub fn apply_with_jacobian(&self, p: Point2) -> Result<(Point2, Linear2), GeometryError> {
        self.locate(p)
            .map(|i| (self.pieces[i].apply(p), self.pieces[i].linear))
            .ok_or(GeometryError::OutsideDomain { x: p.x, y: p.y })
    }

    pub fn max_dilatation(&self) -> f64 {
        self.pieces
            .iter()
            .filter_map(|p| dilatation_of(p).ok())
            .map(|d| d.k)
            .fold(1.0, f64::max)
    }

    pub fn dilatations(&self) -> Vec<f64> {
        self.pieces
            .iter()
            .map(|p| dilatation_of(p).map(|d| d.k).unwrap_or(f64::INFINITY))
            .collect()
    }

    pub fn source_area(&self) -> f64 {
        self.pieces.iter().map(|p| p.source.area()).sum()
    }

    pub fn to_document(&self) -> MapDocument {
        MapDocument {
            schema_version: MAP_SCHEMA_VERSION,
            pieces: self
                .pieces
                .iter()
                .map(|p| PieceRecord {
                    source: p.source.vertices().map(|v| [v.x, v.y]),
                    matrix: [[p.linear.a, p.linear.b], [p.linear.c, p.linear.d]],
                    translation: [p.translation.x, p.translation.y],
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &MapDocument) -> Result<Self, GeometryError> {
        let mut pieces = Vec::with_capacity(doc.pieces.len());
        for r in &doc.pieces {
            let [a, b, c] = r.source.map(|[x, y]| Point2::new(x, y));
            let source = Triangle::new(a, b, c)?;
            let linear = Linear2::new(r.matrix[0][0], r.matrix[0][1], r.matrix[1][0], r.matrix[1][1]);
            if linear.det() <= 0.0 {
                return Err(GeometryError::OrientationReversing { det: linear.det() });
            }
            pieces.push(AffinePiece {
                source,
                linear,
                translation: Point2::new(r.translation[0], r.translation[1]),
            });
        }
        Ok(Self::new(pieces))
    }
}

/// Versioned JSON form of a [`TriangulatedMap`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapDocument {
    pub schema_version: u32,
    pub pieces: Vec<PieceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PieceRecord {
    pub source: [[f64; 2]; 3],
    pub matrix: [[f64; 2]; 2],
    pub translation: [f64; 2],
}

/// A quadrilateral with vertices counterclockwise, starting at the lower-left
/// vertex of the source cell it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quad(pub [Point2; 4]);

impl Quad {
    pub fn axis_rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Quad {
        Quad([
            Point2::new(x0, y0),
            Point2::new(x1, y0),
            Point2::new(x1, y1),
            Point2::new(x0, y1),
        ])
    }

    pub fn is_strictly_convex(&self) -> bool {
        let v = self.0;
        (0..4).all(|i| orient(v[i], v[(i + 1) % 4], v[(i + 2) % 4]) > 0.0)
    }

    /// The two triangles cut by the diagonal from vertex 0.
    pub fn split(&self) -> [[Point2; 3]; 2] {
        let [a, b, c, d] = self.0;
        [[a, b, c], [a, c, d]]
    }

    /// Largest deviation of an interior angle from 90°, in radians.
    pub fn angle_deviation(&self) -> f64 {
        let v = self.0;
        (0..4)
            .map(|i| {
                let p = v[(i + 3) % 4] - v[i];
                let q = v[(i + 1) % 4] - v[i];
                let ang = q.cross(p).atan2(q.dot(p));
                (ang - std::f64::consts::FRAC_PI_2).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Split each convex quad along the diagonal from its first (lower-left) vertex.
pub fn triangulate_quads(quads: &[Quad]) -> Result<Vec<Triangle>, GeometryError> {
    let mut out = Vec::with_capacity(2 * quads.len());
    for (i, q) in quads.iter().enumerate() {
        if !q.is_strictly_convex() {
            return Err(GeometryError::NonConvexQuad { index: i });
        }
        for [a, b, c] in q.split() {
            out.push(Triangle::new(a, b, c)?);
        }
    }
    Ok(out)
}

/// Piecewise-linear map sending each source quad onto the matching image quad,
/// using the same diagonal on both sides.
pub fn map_quads(src: &[Quad], dst: &[Quad]) -> Result<TriangulatedMap, GeometryError> {
    Ok(TriangulatedMap::new(quad_pieces(src, dst)?))
}

pub fn quad_pieces(src: &[Quad], dst: &[Quad]) -> Result<Vec<AffinePiece>, GeometryError> {
    if src.len() != dst.len() {
        return Err(GeometryError::QuadCountMismatch { src: src.len(), dst: dst.len() });
    }
    let stris = triangulate_quads(src)?;
    let mut pieces = Vec::with_capacity(stris.len());
    for (i, q) in dst.iter().enumerate() {
        for (h, [a, b, c]) in q.split().into_iter().enumerate() {
            let d = Triangle::new(a, b, c)?;
            pieces.push(affine_between(&stris[2 * i + h], &d));
        }
    }
    Ok(pieces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_tri() -> Triangle {
        Triangle::new(Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)).unwrap()
    }

    #[test]
    fn identity_piece() {
        let t = unit_tri();
        let p = affine_between(&t, &t);
        assert_abs_diff_eq!(p.linear.a, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.linear.b, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.linear.c, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.linear.d, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.translation.norm(), 0.0, epsilon = 1e-15);
        let d = dilatation_of(&p).unwrap();
        assert_eq!(d.k, 1.0);
    }

    #[test]
    fn axis_stretch() {
        let dst =
            Triangle::new(Point2::new(0.0, 0.0), Point2::new(2.0, 0.0), Point2::new(0.0, 1.0)).unwrap();
        let p = affine_between(&unit_tri(), &dst);
        assert_eq!(p.linear, Linear2::new(2.0, 0.0, 0.0, 1.0));
        let d = dilatation_of(&p).unwrap();
        assert_abs_diff_eq!(d.mu_abs(), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.k, 2.0, epsilon = 1e-14);
        let m = TriangulatedMap::new(vec![p]);
        let q = m.apply(Point2::new(0.25, 0.25)).unwrap();
        assert_eq!(q, Point2::new(0.5, 0.25));
    }

    #[test]
    fn quarter_turn() {
        // (1,0) ↦ (0,1) and (0,1) ↦ (−1,0) force [[0,−1],[1,0]].
        let dst =
            Triangle::new(Point2::new(0.0, 0.0), Point2::new(0.0, 1.0), Point2::new(-1.0, 0.0)).unwrap();
        let p = affine_between(&unit_tri(), &dst);
        assert_abs_diff_eq!(p.linear.a, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.linear.b, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.linear.c, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.linear.d, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dilatation_of(&p).unwrap().k, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rotations_are_conformal() {
        for i in 0..16 {
            let l = Linear2::rotation(i as f64 * 0.41).scale(0.3 + i as f64);
            assert_abs_diff_eq!(dilatation_of_linear(&l).unwrap().k, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_and_reversed_rejected() {
        let e = Triangle::new(Point2::new(0.0, 0.0), Point2::new(1.0, 1.0), Point2::new(2.0, 2.0));
        assert!(matches!(e, Err(GeometryError::DegenerateTriangle { .. })));
        let e = Triangle::new(Point2::new(0.0, 0.0), Point2::new(0.0, 1.0), Point2::new(1.0, 0.0));
        assert!(e.is_err());
        let r = dilatation_of_linear(&Linear2::new(1.0, 0.0, 0.0, -1.0));
        assert!(matches!(r, Err(GeometryError::OrientationReversing { .. })));
    }

    #[test]
    fn max_dilatation_picks_largest() {
        let t = unit_tri();
        let mk = |sx: f64| AffinePiece {
            source: t,
            linear: Linear2::new(sx, 0.0, 0.0, 1.0),
            translation: Point2::default(),
        };
        let m = TriangulatedMap::new(vec![mk(1.0), mk(2.0), mk(1.5)]);
        assert_abs_diff_eq!(m.max_dilatation(), 2.0, epsilon = 1e-14);
        let id = TriangulatedMap::identity_on(&[t]);
        assert_eq!(id.max_dilatation(), 1.0);
        assert_eq!(id.apply(Point2::new(0.2, 0.3)).unwrap(), Point2::new(0.2, 0.3));
    }

    #[test]
    fn outside_domain_rejected() {
        let m = TriangulatedMap::identity_on(&[unit_tri()]);
        assert!(matches!(
            m.apply(Point2::new(0.8, 0.8)),
            Err(GeometryError::OutsideDomain { .. })
        ));
    }

    #[test]
    fn split_square_agrees_on_diagonal() {
        let src = [Quad::axis_rect(0.0, 0.0, 1.0, 1.0)];
        let dst = [Quad([
            Point2::new(0.0, 0.0),
            Point2::new(1.2, 0.1),
            Point2::new(1.1, 1.3),
            Point2::new(-0.1, 0.9),
        ])];
        let m = map_quads(&src, &dst).unwrap();
        assert_eq!(m.len(), 2);
        for i in 0..=10 {
            let t = i as f64 / 10.0;
            let p = Point2::new(t, t);
            let a = m.pieces()[0].apply(p);
            let b = m.pieces()[1].apply(p);
            assert!(a.dist(b) < 1e-12);
        }
    }

    #[test]
    fn triangulate_counts_and_rejects_nonconvex() {
        let strip: Vec<Quad> =
            (0..3).map(|i| Quad::axis_rect(i as f64, 0.0, i as f64 + 1.0, 1.0)).collect();
        let tris = triangulate_quads(&strip).unwrap();
        assert_eq!(tris.len(), 6);
        let area: f64 = tris.iter().map(|t| t.area()).sum();
        assert_abs_diff_eq!(area, 3.0, epsilon = 1e-14);
        let dart = Quad([
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 0.0),
            Point2::new(0.5, 0.5),
            Point2::new(0.0, 2.0),
        ]);
        let e = triangulate_quads(&[strip[0], dart]);
        assert_eq!(e, Err(GeometryError::NonConvexQuad { index: 1 }));
    }

    #[test]
    fn document_round_trip() {
        let src = [Quad::axis_rect(0.0, 0.0, 1.0, 1.0)];
        let dst = [Quad::axis_rect(0.0, 0.0, 2.0, 1.0)];
        let m = map_quads(&src, &dst).unwrap();
        let json = serde_json::to_string(&m.to_document()).unwrap();
        let doc: MapDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(doc.schema_version, MAP_SCHEMA_VERSION);
        let back = TriangulatedMap::from_document(&doc).unwrap();
        assert_eq!(back.pieces(), m.pieces());
    }

    #[test]
    fn polygon_helpers() {
        let sq = [
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
        ];
        assert_abs_diff_eq!(polygon_area(&sq), 1.0);
        assert!(point_in_polygon(&sq, Point2::new(0.5, 0.5)));
        assert!(!point_in_polygon(&sq, Point2::new(1.5, 0.5)));
        let moved: Vec<Point2> = sq.iter().map(|p| *p + Point2::new(3.0, 0.0)).collect();
        assert_abs_diff_eq!(polygon_distance(&sq, &moved), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn clipping_and_box_tests() {
        // L-shape of area 3
        let l = [
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 0.0),
            Point2::new(2.0, 1.0),
            Point2::new(1.0, 1.0),
            Point2::new(1.0, 2.0),
            Point2::new(0.0, 2.0),
        ];
        assert_abs_diff_eq!(polygon_area(&l), 3.0);
        let c = clip_polygon_to_rect(&l, 0.5, 0.5, 1.5, 1.5);
        assert_abs_diff_eq!(polygon_area(&c), 0.75, epsilon = 1e-15);
        assert!(clip_polygon_to_rect(&l, 5.0, 5.0, 6.0, 6.0).len() < 3);
        let (a, b) = (Point2::new(-1.0, 0.5), Point2::new(2.0, 0.5));
        assert!(segment_meets_open_box(a, b, 0.0, 0.0, 1.0, 1.0));
        let (a, b) = (Point2::new(-1.0, 1.0), Point2::new(2.0, 1.0));
        assert!(!segment_meets_open_box(a, b, 0.0, 0.0, 1.0, 1.0));
        assert!(segment_box_range(a, b, 0.0, 0.0, 1.0, 1.0).is_some());
        let (a, b) = (Point2::new(1.0, 2.0), Point2::new(2.0, 1.0));
        assert!(!segment_meets_open_box(a, b, 0.0, 0.0, 1.5, 1.5));
    }
}
