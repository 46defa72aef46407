use anyhow::Result;
use serde::{Deserialize, Serialize};

use qcdistort_core::cantor::{ahlfors_scan, build_cantor_exact, cantor_dimension, dyadic_radii, AhlforsRow, CANTOR_SCHEMA_VERSION};
use qcdistort_core::dimension::{box_dimension, interval_midpoints, saturation_window, BoxCountResult};

use crate::config::{ensure, Rational};
use crate::exit::input_error;
use crate::output::OutDir;

pub const MAX_DEPTH: usize = 18;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CantorConfig {
    pub alpha: Rational,
    pub depth: usize,
    /// Radius bands `[lo, hi]` (octaves) for the Ahlfors scan.
    pub ahlfors_bands: Vec<(u32, u32)>,
    /// Allowed ratio between the band constants.
    pub ahlfors_stability: f64,
    pub box_tolerance: f64,
}

impl Default for CantorConfig {
    fn default() -> Self {
        CantorConfig {
            alpha: Rational::parse("1/4").unwrap(),
            depth: 10,
            ahlfors_bands: vec![(3, 9), (10, 16)],
            ahlfors_stability: 2.0,
            box_tolerance: 0.03,
        }
    }
}

#[derive(Serialize)]
struct ExactInterval {
    left: String,
    length: String,
}

#[derive(Serialize)]
struct IntervalsDoc {
    schema_version: u32,
    alpha: String,
    depth: usize,
    dimension: f64,
    generations: Vec<Vec<ExactInterval>>,
}

#[derive(Serialize)]
struct MeasureRow {
    index: usize,
    left: f64,
    right: f64,
    mass: f64,
}

#[derive(Serialize)]
struct BandSummary {
    lo: u32,
    hi: u32,
    constant: f64,
    worst: AhlforsRow,
    balls: usize,
}

#[derive(Serialize)]
struct RegularityDoc {
    schema_version: u32,
    d: f64,
    bands: Vec<BandSummary>,
    /// Largest ratio between two band constants.
    spread: Option<f64>,
    stable: Option<bool>,
    note: Option<String>,
}

#[derive(Serialize)]
struct BoxCountDoc {
    schema_version: u32,
    expected: f64,
    tolerance: f64,
    result: Option<BoxCountResult>,
    within_tolerance: Option<bool>,
    note: Option<String>,
}

fn rat(r: &num_rational::BigRational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

pub fn run(cfg: &CantorConfig, out: &mut OutDir) -> Result<()> {
    let a = cfg.alpha.value();
    ensure(a > 0.0 && a < 0.5, || format!("alpha must lie in (0, 1/2), got {}", cfg.alpha))?;
    ensure(cfg.depth <= MAX_DEPTH, || format!("depth {} exceeds {MAX_DEPTH}", cfg.depth))?;
    let exact = build_cantor_exact(&cfg.alpha.0, cfg.depth).map_err(|e| input_error(e.to_string()))?;
    let approx = exact.to_float();
    let d = cantor_dimension(a);

    out.json(
        "intervals.json",
        &IntervalsDoc {
            schema_version: CANTOR_SCHEMA_VERSION,
            alpha: cfg.alpha.to_string(),
            depth: cfg.depth,
            dimension: d,
            generations: exact
                .generations
                .iter()
                .map(|g| g.iter().map(|(l, len)| ExactInterval { left: rat(l), length: rat(len) }).collect())
                .collect(),
        },
    )?;

    let mass = 0.5f64.powi(cfg.depth as i32);
    out.csv(
        "measure.csv",
        approx.leaves().iter().enumerate().map(|(index, iv)| MeasureRow { index, left: iv.left, right: iv.right(), mass }),
    )?;

    let atoms = approx.weighted_leaves();
    let mut bands = Vec::new();
    for &(lo, hi) in &cfg.ahlfors_bands {
        ensure(lo <= hi, || format!("empty Ahlfors band [{lo}, {hi}]"))?;
        // Radii below the leaf length see single atoms, not the measure.
        let floor = approx.leaves()[0].length;
        let radii: Vec<f64> = dyadic_radii(lo, hi).into_iter().filter(|&r| r >= floor).collect();
        if radii.is_empty() {
            continue;
        }
        let rep = ahlfors_scan(&atoms, d, &radii).map_err(|e| input_error(e.to_string()))?;
        bands.push(BandSummary { lo, hi, constant: rep.constant, worst: rep.worst, balls: rep.rows.len() });
    }
    let spread = (bands.len() >= 2).then(|| {
        let cs: Vec<f64> = bands.iter().map(|b| b.constant).collect();
        let mx = cs.iter().cloned().fold(0.0, f64::max);
        let mn = cs.iter().cloned().fold(f64::INFINITY, f64::min);
        mx / mn
    });
    let stable = spread.map(|s| s <= cfg.ahlfors_stability);
    out.check(
        "ahlfors stability",
        match stable {
            Some(true) => "pass",
            Some(false) => "fail",
            None => "skipped",
        },
        spread.map(|s| format!("constant spread {s:.4} (allowed {})", cfg.ahlfors_stability)),
    );
    out.json(
        "regularity.json",
        &RegularityDoc {
            schema_version: CANTOR_SCHEMA_VERSION,
            d,
            note: (bands.len() < 2).then(|| "fewer than two radius bands above the leaf length".to_string()),
            bands,
            spread,
            stable,
        },
    )?;

    let pts = interval_midpoints(approx.leaves());
    let fit = saturation_window(&pts).and_then(|w| box_dimension(&pts, w));
    let (result, note) = match fit {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let within = result.as_ref().map(|r| (r.slope - d).abs() <= cfg.box_tolerance);
    out.check(
        "box dimension",
        match within {
            Some(true) => "pass",
            Some(false) => "fail",
            None => "skipped",
        },
        result.as_ref().map(|r| format!("slope {:.4}, expected {d:.4}", r.slope)),
    );
    out.json(
        "box_count.json",
        &BoxCountDoc {
            schema_version: CANTOR_SCHEMA_VERSION,
            expected: d,
            tolerance: cfg.box_tolerance,
            result,
            within_tolerance: within,
            note,
        },
    )?;
    Ok(())
}
