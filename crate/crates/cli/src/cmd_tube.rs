use anyhow::Result;
use serde::{Deserialize, Serialize};

use qcdistort_core::cantor::{build_cantor, cantor_dimension, CantorApprox};
use qcdistort_core::dimension::{
    box_dimension, box_dimension_polyline, densify, mass_exponent, verify_expansion, verify_thm12, BoundsTolerance,
    ExpansionInputs, FiberEstimate, MassRow, ScaleWindow,
};
use qcdistort_core::geometry::Point2;
use qcdistort_core::tube::{
    assemble_generation, build_snake_tube, compose_generations, diameter_ledger, exponent_limits, locality_report,
    measured_c1, region_extremal_length, round_corners, thin_to_modulus, tube_map, tube_params, ComposedMap,
    DiameterRow, Fiber, ThinningStep, TubeError, TUBE_SCHEMA_VERSION,
};

use crate::config::{default_alpha, ensure, Rational};
use crate::exit::{input_error, nonconvergence};
use crate::output::OutDir;
use crate::render::{svg, thin_out, unit_square, Shape};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TubeConfig {
    pub alpha: Rational,
    pub k: u32,
    /// Number of composed stages.
    pub generations: usize,
    pub resolution: usize,
    pub chamfer: f64,
    /// Relative tolerance of the thinning search.
    pub thin_tol: f64,
    /// Stages covered by the diameter ledgers.
    pub ledger_generations: usize,
    pub ledger_per_side: usize,
    pub horizontal_fibers: usize,
    pub vertical_fibers: usize,
    /// `log2` of the sample count along a horizontal fiber.
    pub horizontal_log2_samples: u32,
    /// Samples along each deepest-generation interval of a vertical fiber.
    pub vertical_per_interval: usize,
    /// `log2` of the samples per fiber in the image of the whole product set.
    pub product_log2_samples: u32,
    pub locality_resolution: usize,
    pub upper_tolerance: f64,
    pub sharpness_tolerance: f64,
}

impl Default for TubeConfig {
    fn default() -> Self {
        TubeConfig {
            alpha: default_alpha(),
            k: 2,
            generations: 2,
            resolution: 8,
            chamfer: 0.25,
            thin_tol: 0.01,
            ledger_generations: 2,
            ledger_per_side: 16,
            horizontal_fibers: 3,
            vertical_fibers: 3,
            horizontal_log2_samples: 20,
            vertical_per_interval: 64,
            product_log2_samples: 14,
            locality_resolution: 64,
            upper_tolerance: 0.1,
            sharpness_tolerance: 0.2,
        }
    }
}

#[derive(Serialize)]
struct ParamsDoc {
    schema_version: u32,
    params: qcdistort_core::tube::TubeParams,
    corner_count: usize,
    corner_deviation: i64,
    straight: bool,
    lambda_rounded: f64,
    bracket: (f64, f64),
    in_bracket: bool,
    width: Option<f64>,
    lambda_thinned: Option<f64>,
}

#[derive(Serialize)]
struct StageRow {
    stage: usize,
    tube_pieces: usize,
    extension_pieces: usize,
    tube_k: f64,
    extension_k: f64,
    separation: f64,
    trace_error: f64,
    edge_error: f64,
}

#[derive(Serialize)]
struct DiameterCsvRow {
    fiber: &'static str,
    coordinate: f64,
    generation: usize,
    index: usize,
    mass: f64,
    diameter: f64,
}

#[derive(Serialize)]
struct ExponentDoc {
    schema_version: u32,
    formula_unit_c1: qcdistort_core::tube::ExponentReport,
    measured_c1: f64,
    formula_measured_c1: Option<qcdistort_core::tube::ExponentReport>,
    mass_certificate: Option<qcdistort_core::dimension::MassCertificate>,
    mass_note: Option<String>,
    /// `|mass s − formula s|` with the measured constant.
    gap: Option<f64>,
}

#[derive(Serialize)]
struct FiberWindow {
    lo: u32,
    hi: u32,
    extrapolated_diameter: f64,
}

#[derive(Serialize)]
struct BoundsDoc {
    schema_version: u32,
    depth: usize,
    window: FiberWindow,
    report: qcdistort_core::dimension::BoundsReport,
}

fn thinning_csv(out: &mut OutDir, trace: &[ThinningStep]) -> Result<()> {
    out.csv("thinning.csv", trace.iter())
}

/// Even spread of `count` indices in `0..len`.
fn spread(len: usize, count: usize) -> Vec<usize> {
    (0..count).map(|j| ((2 * j + 1) * len) / (2 * count)).collect()
}

/// Octave window for images of depth-`h` fibers: from octave 1 to one below
/// the extrapolated smallest depth-`h` square image.
fn fiber_window(rows: &[DiameterRow], h: usize) -> Result<FiberWindow> {
    let min_at = |g: usize| {
        rows.iter().filter(|r| r.generation == g).map(|r| r.diameter).fold(f64::INFINITY, f64::min)
    };
    let d1 = min_at(1);
    let d2 = min_at(2);
    let d = if d2.is_finite() { d1 * (d2 / d1).powi(h as i32 - 1) } else { d1.powi(h as i32) };
    ensure(d.is_finite() && d > 0.0, || "no positive diameters in the ledger".into())?;
    let hi = ((1.0 / d).log2().floor() as i64 - 1).max(4) as u32;
    Ok(FiberWindow { lo: 1, hi, extrapolated_diameter: d })
}

fn horizontal_image(g: &ComposedMap, h: usize, y: f64, log2_samples: u32) -> Result<Vec<Point2>> {
    let m = 1usize << log2_samples;
    (0..=m)
        .map(|i| Ok(g.eval_to(h, Point2::new(i as f64 / m as f64, y))?.image))
        .collect()
}

fn vertical_image(g: &ComposedMap, cantor: &CantorApprox, h: usize, x: f64, per: usize) -> Result<Vec<Point2>> {
    let mut pts = Vec::new();
    for iv in cantor.leaves() {
        for j in 0..=per {
            pts.push(g.eval_to(h, Point2::new(x, iv.left + iv.length * j as f64 / per as f64))?.image);
        }
    }
    Ok(pts)
}

pub fn run(cfg: &TubeConfig, out: &mut OutDir) -> Result<()> {
    let (num, den) = cfg.alpha.small_parts().ok_or_else(|| input_error(format!("alpha {} out of range", cfg.alpha)))?;
    ensure(cfg.generations >= 1 && cfg.generations <= 3, || "generations must be 1, 2 or 3".into())?;
    ensure(cfg.ledger_generations >= 1 && cfg.ledger_generations <= cfg.generations, || {
        "ledger_generations must lie in 1..=generations".into()
    })?;
    ensure(cfg.horizontal_log2_samples <= 24, || "horizontal_log2_samples above 24".into())?;
    let params = tube_params(num, den, cfg.k).map_err(|e| input_error(e.to_string()))?;
    if params.small_n {
        out.flags.push(format!("small N: N = {} is outside the tested regime", params.n));
    }
    let snake = build_snake_tube(&params).map_err(|e| input_error(e.to_string()))?;
    let rounded = round_corners(&snake, cfg.chamfer).map_err(|e| input_error(e.to_string()))?;
    let lambda_rounded = region_extremal_length(&rounded, cfg.resolution).map_err(|e| input_error(e.to_string()))?;
    let bracket = (params.cells as f64 / 2.0, params.cells as f64);
    let in_bracket = lambda_rounded >= bracket.0 && lambda_rounded <= bracket.1;
    out.check("extremal length bracket", if in_bracket { "pass" } else { "fail" }, Some(format!("{lambda_rounded:.4}")));
    out.write(
        "tube_rounded.svg",
        svg(&[Shape { points: &rounded.polygon(), stroke: "black", closed: true }, Shape { points: &snake.spine, stroke: "#c33", closed: false }], 800.0)
            .as_bytes(),
    )?;

    let target = params.n as f64;
    let mut doc = ParamsDoc {
        schema_version: TUBE_SCHEMA_VERSION,
        params: params.clone(),
        corner_count: snake.corner_count(),
        corner_deviation: snake.corner_deviation,
        straight: snake.straight,
        lambda_rounded,
        bracket,
        in_bracket,
        width: None,
        lambda_thinned: None,
    };
    let thinned = match thin_to_modulus(&snake, cfg.chamfer, target, cfg.thin_tol, cfg.resolution) {
        Ok(t) => t,
        Err(e) => {
            let trace = match &e {
                TubeError::ThinningExhausted { trace } => trace.clone(),
                TubeError::CannotThicken { lambda, .. } => vec![ThinningStep { width: 1.0, lambda: *lambda }],
                TubeError::NonMonotone { w_lo, l_lo, w_hi, l_hi } => {
                    vec![ThinningStep { width: *w_lo, lambda: *l_lo }, ThinningStep { width: *w_hi, lambda: *l_hi }]
                }
                _ => vec![],
            };
            thinning_csv(out, &trace)?;
            out.json("params.json", &doc)?;
            out.check("thinning", "infeasible", Some(e.to_string()));
            out.deferred = Some(nonconvergence(format!("thinning to lambda = {target} failed: {e}")));
            return Ok(());
        }
    };
    doc.width = Some(thinned.width);
    doc.lambda_thinned = Some(thinned.lambda);
    out.check("thinning", "pass", Some(format!("lambda {:.4} at width {:.5}", thinned.lambda, thinned.width)));
    thinning_csv(out, &thinned.trace)?;
    out.json("params.json", &doc)?;
    out.write(
        "tube_thinned.svg",
        svg(&[Shape { points: &thinned.region.polygon(), stroke: "black", closed: true }], 800.0).as_bytes(),
    )?;

    let tmap = tube_map(&thinned, target).map_err(|e| nonconvergence(e.to_string()))?;
    let k = cfg.k as usize;
    let h = cfg.generations;
    let cantor = build_cantor(cfg.alpha.value(), k * h).map_err(|e| input_error(e.to_string()))?;
    let first = assemble_generation(&thinned, &tmap, &cantor, 1).map_err(|e| nonconvergence(e.to_string()))?;
    let stages: Vec<_> = (1..=h)
        .map(|s| {
            let mut g = first.clone();
            g.stage = s;
            g
        })
        .collect();
    let g = compose_generations(&stages, &cantor).map_err(|e| nonconvergence(e.to_string()))?;

    let mut placed = vec![Shape { points: &[], stroke: "#888", closed: true }];
    let square = unit_square();
    placed[0].points = &square;
    placed.extend(first.tubes.iter().map(|t| Shape { points: t, stroke: "black", closed: true }));
    out.write("tubes_placed.svg", svg(&placed, 800.0).as_bytes())?;

    out.csv(
        "dilatation.csv",
        stages.iter().map(|s| StageRow {
            stage: s.stage,
            tube_pieces: s.ledger.tube_pieces,
            extension_pieces: s.ledger.extension_pieces,
            tube_k: s.ledger.tube_k,
            extension_k: s.ledger.extension_k,
            separation: s.ledger.separation,
            trace_error: s.ledger.trace_error,
            edge_error: s.ledger.edge_error,
        }),
    )?;
    let locality = locality_report(&g, cfg.locality_resolution).map_err(|e| nonconvergence(e.to_string()))?;
    out.json("locality.json", &locality)?;

    // Diameter ledgers on one horizontal and one vertical fiber.
    let leaves = cantor.generations[k * cfg.ledger_generations].clone();
    let y0 = leaves[spread(leaves.len(), 1)[0]].mid();
    let x0 = 0.5;
    let hrows = diameter_ledger(&g, Fiber::Horizontal(y0), cfg.ledger_generations, cfg.ledger_per_side)
        .map_err(|e| nonconvergence(e.to_string()))?;
    let vrows = diameter_ledger(&g, Fiber::Vertical(x0), cfg.ledger_generations, cfg.ledger_per_side)
        .map_err(|e| nonconvergence(e.to_string()))?;
    let csv_rows = hrows
        .iter()
        .map(|r| ("horizontal", y0, r))
        .chain(vrows.iter().map(|r| ("vertical", x0, r)))
        .map(|(fiber, coordinate, r)| DiameterCsvRow {
            fiber,
            coordinate,
            generation: r.generation,
            index: r.index,
            mass: r.mass,
            diameter: r.diameter,
        });
    out.csv("diameters.csv", csv_rows)?;

    // Exponents: formula with C1 = 1 and with the measured constant, and the
    // mass-distribution exponent of the horizontal ledger.
    let alpha = cfg.alpha.value();
    let unit = exponent_limits(alpha, cfg.k, 1.0).map_err(|e| input_error(e.to_string()))?;
    let c1 = measured_c1(&g, &hrows);
    let measured = exponent_limits(alpha, cfg.k, c1).ok();
    let mut ledger = vec![MassRow { generation: 0, mass: 1.0, diameter: 2f64.sqrt() }];
    ledger.extend(hrows.iter().map(|r| MassRow { generation: r.generation, mass: r.mass, diameter: r.diameter }));
    let (cert, note) = match mass_exponent(&ledger) {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let gap = match (&cert, &measured) {
        (Some(c), Some(m)) => Some((c.s - m.s).abs()),
        _ => None,
    };
    out.json(
        "exponent_report.json",
        &ExponentDoc {
            schema_version: TUBE_SCHEMA_VERSION,
            formula_unit_c1: unit,
            measured_c1: c1,
            formula_measured_c1: measured,
            mass_certificate: cert,
            mass_note: note,
            gap,
        },
    )?;

    // Fiber image dimensions at depth h.
    let window = fiber_window(&hrows, h)?;
    let sw = ScaleWindow::new(window.lo, window.hi).map_err(|e| input_error(e.to_string()))?;
    let deepest = &cantor.generations[k * h];
    let mut horizontal = Vec::new();
    let mut curves = Vec::new();
    for i in spread(deepest.len(), cfg.horizontal_fibers) {
        let y = deepest[i].mid();
        let pts = horizontal_image(&g, h, y, cfg.horizontal_log2_samples)?;
        let r = box_dimension_polyline(&pts, sw).map_err(|e| nonconvergence(e.to_string()))?;
        horizontal.push(FiberEstimate { coordinate: y, dimension: r.slope, residual: r.residual });
        curves.push(thin_out(&pts, 1 << 14));
    }
    let mut vertical = Vec::new();
    for j in 0..cfg.vertical_fibers {
        let x = (2 * j + 1) as f64 / (2 * cfg.vertical_fibers) as f64;
        let pts = vertical_image(&g, &cantor, h, x, cfg.vertical_per_interval)?;
        let r = box_dimension(&pts, sw).map_err(|e| nonconvergence(e.to_string()))?;
        vertical.push(FiberEstimate { coordinate: x, dimension: r.slope, residual: r.residual });
    }
    let mut shapes = vec![Shape { points: &square, stroke: "#888", closed: true }];
    shapes.extend(curves.iter().map(|c| Shape { points: c, stroke: "black", closed: false }));
    out.write("image_curves.svg", svg(&shapes, 800.0).as_bytes())?;

    let tol = BoundsTolerance { upper: cfg.upper_tolerance, sharpness: cfg.sharpness_tolerance };
    let report = verify_thm12(cantor_dimension(alpha), &horizontal, &vertical, tol);
    for c in &report.checks {
        out.check(&c.name, &format!("{:?}", c.status).to_lowercase(), Some(format!("{:.4} vs {:.4}", c.value, c.bound)));
    }

    // Image of [0, 1] × E_h through the fibers at every deepest interval.
    let mut product = Vec::new();
    let step = 0.25 * (-(sw.hi as f64)).exp2();
    for iv in deepest.iter() {
        let pts = horizontal_image(&g, h, iv.mid(), cfg.product_log2_samples)?;
        product.extend(densify(&pts, step));
    }
    let pr = box_dimension(&product, sw).map_err(|e| nonconvergence(e.to_string()))?;
    let d = cantor_dimension(alpha);
    let inputs = ExpansionInputs {
        dim_e: 1.0,
        dim_y: d,
        dim_product: 1.0 + d,
        dim_image_product: pr.slope,
        inf_fiber_image: report.inf_horizontal,
        residual: pr.residual.max(report.horizontal.iter().map(|e| e.residual).fold(0.0, f64::max)),
    };
    let expansion = verify_expansion(inputs, cfg.upper_tolerance, cfg.upper_tolerance);
    out.check(
        "fiberwise expansion",
        &format!("{:?}", expansion.inequality.status).to_lowercase(),
        Some(format!("{:.4} vs {:.4}", expansion.lhs, expansion.rhs)),
    );
    out.json("expansion_report.json", &expansion)?;
    out.json("bounds_report.json", &BoundsDoc { schema_version: TUBE_SCHEMA_VERSION, depth: h, window, report })?;
    Ok(())
}
