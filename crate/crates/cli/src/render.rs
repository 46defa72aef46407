use qcdistort_core::geometry::Point2;

/// One path to draw.
pub struct Shape<'a> {
    pub points: &'a [Point2],
    pub stroke: &'a str,
    pub closed: bool,
}

/// SVG of the given shapes fitted to their bounding box, y pointing up.
/// Coordinates are printed at fixed precision so output is reproducible.
pub fn svg(shapes: &[Shape], width: f64) -> String {
    let (mut lo, mut hi) = (Point2::new(f64::INFINITY, f64::INFINITY), Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
    for s in shapes {
        for p in s.points {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
    }
    if !lo.x.is_finite() {
        lo = Point2::new(0.0, 0.0);
        hi = Point2::new(1.0, 1.0);
    }
    let span = (hi.x - lo.x).max(hi.y - lo.y).max(1e-12);
    let pad = 0.02 * span;
    let (w, h) = (hi.x - lo.x + 2.0 * pad, hi.y - lo.y + 2.0 * pad);
    let height = width * h / w;
    let stroke = 0.002 * span;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"{:.6} {:.6} {:.6} {:.6}\">\n",
        lo.x - pad,
        -hi.y - pad,
        w,
        h
    );
    for s in shapes {
        let pts: Vec<String> = s.points.iter().map(|p| format!("{:.6},{:.6}", p.x, -p.y)).collect();
        let tag = if s.closed { "polygon" } else { "polyline" };
        out.push_str(&format!(
            "<{tag} fill=\"none\" stroke=\"{}\" stroke-width=\"{stroke:.6}\" points=\"{}\"/>\n",
            s.stroke,
            pts.join(" ")
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Every `step`-th point, keeping the last.
pub fn thin_out(points: &[Point2], max: usize) -> Vec<Point2> {
    if points.len() <= max {
        return points.to_vec();
    }
    let step = points.len().div_ceil(max);
    let mut v: Vec<Point2> = points.iter().step_by(step).cloned().collect();
    if let Some(&last) = points.last() {
        if v.last() != Some(&last) {
            v.push(last);
        }
    }
    v
}

pub fn unit_square() -> Vec<Point2> {
    vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(1.0, 1.0), Point2::new(0.0, 1.0)]
}
