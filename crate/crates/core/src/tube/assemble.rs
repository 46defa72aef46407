//! One stage map `f: Q → Q`: rectangles `R_j = [0,1] × I_j` go onto the
//! placed tubes `T_j` through the tube map; the complement components are
//! matched by a convex-combination embedding of a constrained Delaunay
//! triangulation of the target.

use super::{TubeError, TubeMap, TubeParams, ThinnedTube};
use crate::cantor::CantorApprox;
use crate::geometry::{
    affine_between, dilatation_of, orient, point_in_polygon, point_segment_distance, AffinePiece, Point2, Triangle,
    TriangulatedMap,
};
use crate::sparse::{bicgstab, Csr};
use serde::{Deserialize, Serialize};
use spade::{ConstrainedDelaunayTriangulation, Triangulation};
use std::collections::HashMap;

pub const GENERATION_SCHEMA_VERSION: u32 = 1;

/// Rounds of midpoint insertion for chords joining two vertices on one side
/// of a source component.
const MAX_CHORD_ROUNDS: usize = 30;

/// Placement of one tube: `p ↦ origin + scale·p` from cell units into `Q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub origin: Point2,
    pub scale: f64,
}

impl Placement {
    /// Coordinates within `1e-12` of `0` or `1` are snapped onto the edge.
    pub fn apply(&self, p: Point2) -> Point2 {
        let q = self.origin + p * self.scale;
        let snap = |v: f64| {
            if v.abs() < 1e-12 {
                0.0
            } else if (v - 1.0).abs() < 1e-12 {
                1.0
            } else {
                v
            }
        };
        Point2::new(snap(q.x), snap(q.y))
    }
}

/// Diagnostics of an assembled stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationLedger {
    pub tube_pieces: usize,
    pub extension_pieces: usize,
    pub tube_k: f64,
    pub extension_k: f64,
    /// Smallest distance between two tubes or a tube and the top/bottom edge.
    pub separation: f64,
    /// `max |f(1,y) − f(0,y) − 1|` over sampled `y`.
    pub trace_error: f64,
    /// `max |f(x,0) − (x,0)|, |f(x,1) − (x,1)|` over sampled `x`.
    pub edge_error: f64,
    pub chord_rounds: usize,
}

#[derive(Debug, Clone)]
pub struct GenerationMap {
    pub stage: usize,
    pub params: TubeParams,
    /// `N`, the rectangle count per unit length.
    pub n: f64,
    /// `R_j` as `(bottom, height)`.
    pub rects: Vec<(f64, f64)>,
    pub placements: Vec<Placement>,
    /// Tube boundaries in `Q`.
    pub tubes: Vec<Vec<Point2>>,
    /// The map on `Q`; pieces below `ledger.tube_pieces` come from tube maps.
    pub map: TriangulatedMap,
    pub ledger: GenerationLedger,
}

impl GenerationMap {
    pub fn apply(&self, p: Point2) -> Result<Point2, TubeError> {
        Ok(self.map.apply(p)?)
    }

    /// Whether the piece at index `i` belongs to a complement extension.
    pub fn is_extension_piece(&self, i: usize) -> bool {
        i >= self.ledger.tube_pieces
    }
}

/// Tube placement in `Q`: the snake grid scaled to unit width, tube `j` in
/// grid rows `1 + jm ..`; the straight fallback sits centered on `I_j`.
pub fn place_tubes(thinned: &ThinnedTube, rects: &[(f64, f64)]) -> Vec<Placement> {
    let t = &thinned.tube;
    let scale = 1.0 / t.cols as f64;
    rects
        .iter()
        .enumerate()
        .map(|(j, &(a, h))| {
            let y = if t.straight {
                a + 0.5 * h - 0.5 * scale
            } else {
                (1 + j * t.rows) as f64 * scale
            };
            Placement { origin: Point2::new(0.0, y), scale }
        })
        .collect()
}

// Vertex bookkeeping for the complement triangulation.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Kind {
    Boundary(Point2),
    Interior,
}

struct MeshInput {
    pts: Vec<Point2>,
    kind: Vec<Kind>,
    edges: Vec<[usize; 2]>,
    lookup: HashMap<(u64, u64), usize>,
}

impl MeshInput {
    fn add(&mut self, p: Point2, kind: Kind) -> usize {
        let key = (p.x.to_bits(), p.y.to_bits());
        if let Some(&i) = self.lookup.get(&key) {
            return i;
        }
        self.lookup.insert(key, self.pts.len());
        self.pts.push(p);
        self.kind.push(kind);
        self.pts.len() - 1
    }

    fn chain(&mut self, pts: &[(Point2, Point2)]) {
        let ids: Vec<usize> = pts.iter().map(|&(p, s)| self.add(p, Kind::Boundary(s))).collect();
        for w in ids.windows(2) {
            if w[0] != w[1] {
                self.edges.push([w[0], w[1]]);
            }
        }
    }
}

fn lerp1(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Assemble stage `stage` of the construction from the thinned tube and its
/// tube map. `cantor` must reach generation `k`.
pub fn assemble_generation(
    thinned: &ThinnedTube,
    tmap: &TubeMap,
    cantor: &CantorApprox,
    stage: usize,
) -> Result<GenerationMap, TubeError> {
    let params = thinned.tube.params.clone();
    let k = params.k as usize;
    if cantor.depth() < k {
        return Err(TubeError::InsufficientDepth { have: cantor.depth(), need: k });
    }
    let n = params.n as f64;
    let rects: Vec<(f64, f64)> = cantor.generations[k].iter().map(|iv| (iv.left, iv.length)).collect();
    let placements = place_tubes(thinned, &rects);
    let tubes: Vec<Vec<Point2>> = placements
        .iter()
        .map(|pl| {
            let mut p: Vec<Point2> = tmap.right_pts.iter().map(|&q| pl.apply(q)).collect();
            p.extend(tmap.left_pts.iter().rev().map(|&q| pl.apply(q)));
            p
        })
        .collect();

    // placement checks
    let mut separation = f64::INFINITY;
    for (j, t) in tubes.iter().enumerate() {
        let lo = t.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let hi = t.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        separation = separation.min(lo).min(1.0 - hi);
        if lo <= 0.0 || hi >= 1.0 {
            return Err(TubeError::Overlap { a: j, b: j });
        }
    }
    let (sep, pair) = super::min_polygon_separation(&tubes);
    if let Some((a, b)) = pair {
        if sep <= 0.0 || polygons_cross(&tubes[a], &tubes[b]) {
            return Err(TubeError::Overlap { a, b });
        }
    }
    separation = separation.min(sep);

    // tube pieces, pulled back to Q
    let mut pieces: Vec<AffinePiece> = Vec::new();
    let mut tube_k = 1.0f64;
    for (j, pl) in placements.iter().enumerate() {
        let a = rects[j].0;
        let to_q = |p: Point2| Point2::new(p.x / n, a + p.y / n);
        for piece in tmap.map.pieces() {
            let s = piece.source.vertices().map(to_q);
            let d = piece.image().map(|p| pl.apply(p));
            let src = Triangle::new(s[0], s[1], s[2])?;
            let dst = Triangle::new(d[0], d[1], d[2])?;
            let p = affine_between(&src, &dst);
            tube_k = tube_k.max(dilatation_of(&p)?.k);
            pieces.push(p);
        }
    }
    let tube_pieces = pieces.len();

    // complement: boundary vertices with their source positions
    let mut room = placements[0].scale;
    for w in rects.windows(2) {
        room = room.min(w[1].0 - w[0].0 - w[0].1);
    }
    let spacing = room / 4.0;
    let mut input = MeshInput { pts: Vec::new(), kind: Vec::new(), edges: Vec::new(), lookup: HashMap::new() };
    for (j, pl) in placements.iter().enumerate() {
        let (a, h) = rects[j];
        let right: Vec<(Point2, Point2)> = tmap
            .right_pts
            .iter()
            .zip(&tmap.breaks)
            .map(|(&p, &x)| (pl.apply(p), Point2::new(x / n, a)))
            .collect();
        let left: Vec<(Point2, Point2)> = tmap
            .left_pts
            .iter()
            .zip(&tmap.breaks)
            .map(|(&p, &x)| (pl.apply(p), Point2::new(x / n, a + h)))
            .collect();
        input.chain(&right);
        input.chain(&left);
    }
    // side marks: gaps between tube ends, mapped linearly onto source gaps
    let mut side: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    for (j, t) in placements.iter().enumerate() {
        let (a, h) = rects[j];
        let r0 = t.apply(tmap.right_pts[0]).y;
        let l0 = t.apply(tmap.left_pts[0]).y;
        let (g_lo, s_lo) = *side.last().unwrap();
        let steps = ((r0 - g_lo) / spacing).ceil().max(1.0) as usize;
        for i in 1..steps {
            let u = i as f64 / steps as f64;
            side.push((lerp1(g_lo, r0, u), lerp1(s_lo, a, u)));
        }
        side.push((r0, a));
        side.push((l0, a + h));
    }
    {
        let (g_lo, s_lo) = *side.last().unwrap();
        let steps = ((1.0 - g_lo) / spacing).ceil().max(1.0) as usize;
        for i in 1..=steps {
            let u = i as f64 / steps as f64;
            side.push((lerp1(g_lo, 1.0, u), lerp1(s_lo, 1.0, u)));
        }
    }
    let right_exit: Vec<f64> = placements.iter().map(|t| t.apply(*tmap.right_pts.last().unwrap()).y).collect();
    let entry: Vec<f64> = placements.iter().map(|t| t.apply(tmap.right_pts[0]).y).collect();
    if right_exit.iter().zip(&entry).any(|(a, b)| (a - b).abs() > 1e-12) {
        return Err(TubeError::AsymmetricTube);
    }
    let cols = (1.0 / spacing).round() as usize;
    let bottom: Vec<(Point2, Point2)> = (0..=cols)
        .map(|i| {
            let x = i as f64 / cols as f64;
            (Point2::new(x, 0.0), Point2::new(x, 0.0))
        })
        .collect();
    let top: Vec<(Point2, Point2)> = bottom.iter().rev().map(|&(p, _)| (Point2::new(p.x, 1.0), Point2::new(p.x, 1.0))).collect();
    let right_side: Vec<(Point2, Point2)> =
        side.iter().map(|&(g, s)| (Point2::new(1.0, g), Point2::new(1.0, s))).collect();
    let left_side: Vec<(Point2, Point2)> =
        side.iter().rev().map(|&(g, s)| (Point2::new(0.0, g), Point2::new(0.0, s))).collect();
    input.chain(&bottom);
    input.chain(&right_side);
    input.chain(&top);
    input.chain(&left_side);

    // Steiner grid away from the tubes
    let boxes: Vec<(Point2, Point2)> = tubes.iter().map(|t| bbox(t)).collect();
    let clear = 0.3 * spacing;
    for iy in 1..cols {
        for ix in 1..cols {
            let p = Point2::new(ix as f64 / cols as f64, iy as f64 / cols as f64);
            let near = tubes.iter().zip(&boxes).any(|(t, (lo, hi))| {
                if p.x < lo.x - clear || p.x > hi.x + clear || p.y < lo.y - clear || p.y > hi.y + clear {
                    return false;
                }
                point_in_polygon(t, p)
                    || (0..t.len()).any(|i| point_segment_distance(p, t[i], t[(i + 1) % t.len()]) < clear)
            });
            if !near {
                input.add(p, Kind::Interior);
            }
        }
    }

    // triangulate, splitting chords until every complement triangle has a
    // nondegenerate source
    let mut chord_rounds = 0;
    let (faces, adjacency) = loop {
        let (faces, adjacency, chords) = triangulate_complement(&input, &tubes, &boxes)?;
        if chords.is_empty() {
            break (faces, adjacency);
        }
        chord_rounds += 1;
        if chord_rounds > MAX_CHORD_ROUNDS {
            return Err(TubeError::Mesh(format!("{} chords remain after {MAX_CHORD_ROUNDS} rounds", chords.len())));
        }
        for (a, b) in chords {
            let m = input.pts[a].lerp(input.pts[b], 0.5);
            input.add(m, Kind::Interior);
        }
    };

    let source = embed(&input, &adjacency)?;
    let mut extension_k = 1.0f64;
    for f in &faces {
        let d = f.map(|i| input.pts[i]);
        let s = f.map(|i| source[i]);
        let src = Triangle::new(s[0], s[1], s[2])
            .map_err(|e| TubeError::Mesh(format!("folded extension triangle at {:?}: {e}", d[0])))?;
        let dst = Triangle::new(d[0], d[1], d[2])?;
        let p = affine_between(&src, &dst);
        extension_k = extension_k.max(dilatation_of(&p)?.k);
        pieces.push(p);
    }
    let extension_pieces = pieces.len() - tube_pieces;
    let map = TriangulatedMap::new(pieces);

    let mut trace_error = 0.0f64;
    let mut edge_error = 0.0f64;
    for i in 0..=100 {
        let u = i as f64 / 100.0;
        let l = map.apply(Point2::new(0.0, u))?;
        let r = map.apply(Point2::new(1.0, u))?;
        trace_error = trace_error.max((r.x - l.x - 1.0).abs()).max((r.y - l.y).abs());
        for y in [0.0, 1.0] {
            edge_error = edge_error.max(map.apply(Point2::new(u, y))?.dist(Point2::new(u, y)));
        }
    }

    Ok(GenerationMap {
        stage,
        params,
        n,
        rects,
        placements,
        tubes,
        map,
        ledger: GenerationLedger {
            tube_pieces,
            extension_pieces,
            tube_k,
            extension_k,
            separation,
            trace_error,
            edge_error,
            chord_rounds,
        },
    })
}

fn bbox(p: &[Point2]) -> (Point2, Point2) {
    let lo = p.iter().fold(Point2::new(f64::INFINITY, f64::INFINITY), |a, q| Point2::new(a.x.min(q.x), a.y.min(q.y)));
    let hi = p
        .iter()
        .fold(Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY), |a, q| Point2::new(a.x.max(q.x), a.y.max(q.y)));
    (lo, hi)
}

fn polygons_cross(a: &[Point2], b: &[Point2]) -> bool {
    point_in_polygon(a, b[0]) || point_in_polygon(b, a[0])
}

type Faces = Vec<[usize; 3]>;
type Adjacency = Vec<Vec<usize>>;

/// Complement faces (counterclockwise), vertex adjacency restricted to them,
/// and the chords whose two ends lie on one straight side of the source.
fn triangulate_complement(
    input: &MeshInput,
    tubes: &[Vec<Point2>],
    boxes: &[(Point2, Point2)],
) -> Result<(Faces, Adjacency, Vec<(usize, usize)>), TubeError> {
    let verts: Vec<spade::Point2<f64>> = input.pts.iter().map(|p| spade::Point2::new(p.x, p.y)).collect();
    let mut conflicts = Vec::new();
    let cdt = ConstrainedDelaunayTriangulation::<spade::Point2<f64>>::try_bulk_load_cdt(
        verts,
        input.edges.clone(),
        |e| conflicts.push(e),
    )
    .map_err(|e| TubeError::Mesh(format!("{e:?}")))?;
    if !conflicts.is_empty() {
        return Err(TubeError::Mesh(format!("{} crossing constraint edges", conflicts.len())));
    }
    if cdt.num_vertices() != input.pts.len() {
        return Err(TubeError::Mesh("duplicate vertices in triangulation input".into()));
    }
    let mut faces = Vec::new();
    let mut adjacency = vec![Vec::new(); input.pts.len()];
    let mut chords = Vec::new();
    for face in cdt.inner_faces() {
        let v = face.vertices().map(|h| h.fix().index());
        let p = v.map(|i| input.pts[i]);
        let c = (p[0] + p[1] + p[2]) * (1.0 / 3.0);
        let in_tube = tubes
            .iter()
            .zip(boxes)
            .any(|(t, (lo, hi))| c.x >= lo.x && c.x <= hi.x && c.y >= lo.y && c.y <= hi.y && point_in_polygon(t, c));
        if in_tube {
            continue;
        }
        let v = if orient(p[0], p[1], p[2]) > 0.0 { v } else { [v[0], v[2], v[1]] };
        for (a, b) in [(v[0], v[1]), (v[1], v[2]), (v[2], v[0])] {
            adjacency[a].push(b);
            if let (Kind::Boundary(sa), Kind::Boundary(sb)) = (input.kind[a], input.kind[b]) {
                let straight = sa.y == sb.y || (sa.x == sb.x && (sa.x == 0.0 || sa.x == 1.0));
                let is_side = input.edges.iter().any(|e| (e[0] == a && e[1] == b) || (e[0] == b && e[1] == a));
                if straight && !is_side && a < b {
                    chords.push((a, b));
                }
            }
        }
        faces.push(v);
    }
    // an interior chord appears from both faces; keep one
    chords.sort_unstable();
    chords.dedup();
    for a in adjacency.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    Ok((faces, adjacency, chords))
}

/// Source positions: boundary vertices are prescribed, interior vertices
/// are the mean value coordinate combination of their neighbors.
fn embed(input: &MeshInput, adjacency: &Adjacency) -> Result<Vec<Point2>, TubeError> {
    let n = input.pts.len();
    let mut slot = vec![usize::MAX; n];
    let mut interior = Vec::new();
    for i in 0..n {
        if input.kind[i] == Kind::Interior && !adjacency[i].is_empty() {
            slot[i] = interior.len();
            interior.push(i);
        }
    }
    let mut source: Vec<Point2> = (0..n)
        .map(|i| match input.kind[i] {
            Kind::Boundary(s) => s,
            Kind::Interior => input.pts[i],
        })
        .collect();
    if interior.is_empty() {
        return Ok(source);
    }
    let mut trip = Vec::new();
    let mut bx = vec![0.0; interior.len()];
    let mut by = vec![0.0; interior.len()];
    for (r, &v) in interior.iter().enumerate() {
        let c = input.pts[v];
        let mut nb: Vec<(f64, usize)> =
            adjacency[v].iter().map(|&u| ((input.pts[u].y - c.y).atan2(input.pts[u].x - c.x), u)).collect();
        nb.sort_by(|a, b| a.0.total_cmp(&b.0));
        let d = nb.len();
        let gap = |j: usize| {
            let a = nb[(j + 1) % d].0 - nb[j].0;
            if a <= 0.0 {
                a + std::f64::consts::TAU
            } else {
                a
            }
        };
        let mut w = Vec::with_capacity(d);
        for j in 0..d {
            let before = gap((j + d - 1) % d);
            let after = gap(j);
            let len = input.pts[nb[j].1].dist(c);
            w.push(((0.5 * before).tan() + (0.5 * after).tan()) / len);
        }
        let total: f64 = w.iter().sum();
        trip.push((r, r, 1.0));
        for (j, &(_, u)) in nb.iter().enumerate() {
            let wj = w[j] / total;
            if slot[u] != usize::MAX {
                trip.push((r, slot[u], -wj));
            } else {
                bx[r] += wj * source[u].x;
                by[r] += wj * source[u].y;
            }
        }
    }
    let a = Csr::from_triplets(interior.len(), trip);
    let mut x: Vec<f64> = interior.iter().map(|&v| input.pts[v].x).collect();
    let mut y: Vec<f64> = interior.iter().map(|&v| input.pts[v].y).collect();
    let cap = 20 * interior.len() + 1000;
    let ix = bicgstab(&a, &bx, &mut x, 1e-13, cap);
    let iy = bicgstab(&a, &by, &mut y, 1e-13, cap);
    if !(ix.converged && iy.converged) {
        return Err(TubeError::Mesh(format!("embedding solve residuals {:e}, {:e}", ix.residual, iy.residual)));
    }
    for (r, &v) in interior.iter().enumerate() {
        source[v] = Point2::new(x[r], y[r]);
    }
    Ok(source)
}
