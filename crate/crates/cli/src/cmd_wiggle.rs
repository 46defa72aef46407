use anyhow::Result;
use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use qcdistort_core::cantor::{h_measure_check, select_branching, GaugeFunction, LevelSpec, NestedIntervalFamily};
use qcdistort_core::geometry::Point2;
use qcdistort_core::wiggle::{
    bend_map, build_stage, compose_stages, dilatation_budget, stage_bands, tube_outlines, StageBand, WiggleComposed,
    WiggleStage, DEFAULT_AMPLITUDE, WIGGLE_SCHEMA_VERSION,
};

use crate::config::ensure;
use crate::exit::input_error;
use crate::output::OutDir;
use crate::render::{svg, unit_square, Shape};

/// Explicit branching numbers, or `"auto"` to search for them with the gauge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Branching {
    List(Vec<u64>),
    Named(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WiggleConfig {
    /// Stages to build and compose.
    pub k: usize,
    /// Defaults to `n_j = 10·2^j`, `j = 0..k`.
    pub branching: Option<Branching>,
    pub gauge: String,
    /// Generations covered by the gauge check.
    pub h_depth: usize,
    pub amplitude: f64,
    /// Warn when `Σ 1/n_j` exceeds this.
    pub budget_limit: f64,
    pub budget_resolution: usize,
    /// Horizontal fibers sampled for oscillation, at deepest-level midpoints.
    pub oscillation_fibers: usize,
    pub oscillation_log2_samples: u32,
    /// Rectangles outlined per generation in the SVGs.
    pub outline_limit: usize,
    pub outline_per_side: usize,
}

impl Default for WiggleConfig {
    fn default() -> Self {
        WiggleConfig {
            k: 3,
            branching: None,
            gauge: "sqrt".into(),
            h_depth: 5,
            amplitude: DEFAULT_AMPLITUDE,
            budget_limit: 0.5,
            budget_resolution: 48,
            oscillation_fibers: 2,
            oscillation_log2_samples: 13,
            outline_limit: 64,
            outline_per_side: 256,
        }
    }
}

#[derive(Serialize)]
struct FamilyDoc {
    schema_version: u32,
    branching: Vec<String>,
    levels: Vec<LevelSpec>,
    reciprocal_sum: f64,
}

#[derive(Serialize)]
struct HRow {
    gauge: String,
    generation: usize,
    parents_checked: usize,
    parents_passing: usize,
    ln_children_sum: f64,
    ln_target: f64,
    pass: bool,
}

#[derive(Serialize)]
struct BandRow {
    y: f64,
    stage: usize,
    square_side: f64,
    first_octave: usize,
    last_octave: usize,
    fraction: f64,
    fraction_before: f64,
    flagged: bool,
    growth: f64,
}

impl BandRow {
    fn new(y: f64, b: &StageBand) -> Self {
        BandRow {
            y,
            stage: b.stage,
            square_side: b.square_side,
            first_octave: b.first_octave,
            last_octave: b.last_octave,
            fraction: b.fraction,
            fraction_before: b.fraction_before,
            flagged: b.flagged,
            growth: b.growth,
        }
    }
}

fn branching_for(cfg: &WiggleConfig, gauge: GaugeFunction) -> Result<Vec<BigUint>> {
    let depth = cfg.k.max(cfg.h_depth);
    match &cfg.branching {
        None => Ok((0..depth).map(|j| BigUint::from(10u64 << j)).collect()),
        Some(Branching::List(v)) => {
            ensure(v.len() >= cfg.k, || format!("branching lists {} levels, k = {}", v.len(), cfg.k))?;
            Ok(v.iter().map(|&n| BigUint::from(n)).collect())
        }
        Some(Branching::Named(s)) if s == "auto" => {
            select_branching(gauge, depth).map_err(|e| input_error(e.to_string()))
        }
        Some(Branching::Named(s)) => Err(input_error(format!("branching must be a list or \"auto\", got {s:?}"))),
    }
}

fn generation_svg(g: &WiggleComposed, family: &NestedIntervalFamily, level: usize, cfg: &WiggleConfig) -> Result<String> {
    let outlines = tube_outlines(g, family, level, cfg.outline_limit, cfg.outline_per_side)
        .map_err(|e| input_error(e.to_string()))?;
    let square = unit_square();
    let mut lines = Vec::new();
    for i in 1..8 {
        let y = i as f64 / 8.0;
        let m = 512;
        let pts = (0..=m)
            .map(|j| g.apply_to(level, Point2::new(j as f64 / m as f64, y)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| input_error(e.to_string()))?;
        lines.push(pts);
    }
    let mut shapes = vec![Shape { points: &square, stroke: "#888", closed: true }];
    shapes.extend(lines.iter().map(|l| Shape { points: l, stroke: "#36c", closed: false }));
    shapes.extend(outlines.iter().map(|o| Shape { points: o, stroke: "black", closed: false }));
    Ok(svg(&shapes, 800.0))
}

pub fn run(cfg: &WiggleConfig, out: &mut OutDir) -> Result<()> {
    ensure(cfg.k >= 1 && cfg.k <= 4, || format!("k must lie in 1..=4, got {}", cfg.k))?;
    ensure(cfg.oscillation_log2_samples >= 6 && cfg.oscillation_log2_samples <= 20, || {
        "oscillation_log2_samples must lie in 6..=20".into()
    })?;
    let gauge = GaugeFunction::parse(&cfg.gauge).map_err(|e| input_error(e.to_string()))?;
    let branching = branching_for(cfg, gauge)?;
    let full = NestedIntervalFamily::from_branching(branching.clone()).map_err(|e| input_error(e.to_string()))?;
    let sum = full.reciprocal_sum();
    if sum > cfg.budget_limit {
        out.flags.push(format!("budget warning: sum of 1/n = {sum:.4} exceeds {}", cfg.budget_limit));
    }
    out.json(
        "family.json",
        &FamilyDoc {
            schema_version: WIGGLE_SCHEMA_VERSION,
            branching: branching.iter().map(|n| n.to_string()).collect(),
            levels: full.levels.clone(),
            reciprocal_sum: sum,
        },
    )?;

    let h_family = NestedIntervalFamily::from_branching(branching.iter().take(cfg.h_depth).cloned().collect())
        .map_err(|e| input_error(e.to_string()))?;
    let report = h_measure_check(&h_family, gauge).map_err(|e| input_error(e.to_string()))?;
    out.check(
        "h-measure",
        if report.pass { "pass" } else { "fail" },
        Some(format!("gauge {} over {} generations", report.gauge, report.generations.len())),
    );
    out.csv(
        "h_measure.csv",
        report.generations.iter().map(|c| HRow {
            gauge: report.gauge.clone(),
            generation: c.generation,
            parents_checked: c.parents_checked,
            parents_passing: c.parents_passing,
            ln_children_sum: c.ln_children_sum,
            ln_target: c.ln_target,
            pass: c.pass,
        }),
    )?;

    // Stages need stored intervals; keep the longest prefix that can be stored.
    let mut family = NestedIntervalFamily::from_branching(branching[..cfg.k].to_vec()).map_err(|e| input_error(e.to_string()))?;
    while family.generations.is_none() && family.depth() > 1 {
        let d = family.depth() - 1;
        family = NestedIntervalFamily::from_branching(branching[..d].to_vec()).map_err(|e| input_error(e.to_string()))?;
    }
    if family.generations.is_none() {
        return Err(input_error(format!("first branching number {} is too large to build a stage", branching[0])));
    }
    let k = family.depth();
    if k < cfg.k {
        out.flags.push(format!("stages truncated to {k} of {}: later levels are too large to store", cfg.k));
    }
    let bend = bend_map(cfg.amplitude).map_err(|e| input_error(e.to_string()))?;
    let stages: Vec<WiggleStage> = (1..=k)
        .map(|l| build_stage(&family, l, &bend))
        .collect::<Result<_, _>>()
        .map_err(|e| input_error(e.to_string()))?;
    let g = compose_stages(stages).map_err(|e| input_error(e.to_string()))?;

    let budget = dilatation_budget(&g, cfg.budget_resolution, cfg.budget_limit).map_err(|e| input_error(e.to_string()))?;
    out.check(
        "dilatation budget",
        if budget.budget_pass { "pass" } else { "warning" },
        Some(format!("sum of 1/n = {:.4}, c ratio {:.3}", budget.reciprocal_sum, budget.c_ratio)),
    );
    out.csv("budget.csv", budget.stages.iter())?;
    out.json("budget.json", &budget)?;

    let deepest = family.generations.as_ref().ok_or_else(|| input_error("family too large to store"))?;
    let leaves = &deepest[k];
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for j in 0..cfg.oscillation_fibers {
        let y = leaves[((2 * j + 1) * leaves.len()) / (2 * cfg.oscillation_fibers)].mid();
        let r = stage_bands(&g, y, cfg.oscillation_log2_samples).map_err(|e| input_error(e.to_string()))?;
        rows.extend(r.bands.iter().map(|b| BandRow::new(y, b)));
        reports.push(r);
    }
    // Bands finer than the sampling cannot be flagged.
    let finest = cfg.oscillation_log2_samples as usize - 2;
    let resolved = reports.first().map_or(0, |r| r.bands.iter().filter(|b| b.last_octave <= finest).count());
    let least = reports.iter().map(|r| r.flagged_bands).min().unwrap_or(0);
    out.check(
        "oscillation bands",
        if least >= resolved { "pass" } else { "fail" },
        Some(format!("fewest flagged bands {least}; {resolved} of {k} bands resolved by the sampling")),
    );
    out.csv("oscillation.csv", rows)?;
    out.json("oscillation.json", &reports)?;

    for level in 1..=k {
        out.write(&format!("generation_{level}.svg"), generation_svg(&g, &family, level, cfg)?.as_bytes())?;
    }
    Ok(())
}
