use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use serde::{Deserialize, Serialize};

use qcdistort_core::dimension::{
    corollary_compare, verify_expansion, verify_thm12, BoundsReport, BoundsTolerance, CorollaryReport,
    ExpansionInputs, ExpansionReport, FiberEstimate, DIMENSION_SCHEMA_VERSION,
};

use crate::config::ensure;
use crate::exit::input_error;
use crate::output::{load_verified, read_json, OutDir};
use crate::props::{property_summary, PropertySummary};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Run directories, relative to the config file.
    pub runs: Vec<String>,
    pub upper_tolerance: f64,
    pub sharpness_tolerance: f64,
    pub corollary_eps: f64,
    pub corollary_tolerance: f64,
    pub property_trials: usize,
    pub property_p: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            runs: Vec::new(),
            upper_tolerance: 0.2,
            sharpness_tolerance: 0.2,
            corollary_eps: 0.01,
            corollary_tolerance: 0.2,
            property_trials: 100,
            property_p: 2.0,
        }
    }
}

#[derive(Deserialize)]
struct StoredEstimate {
    coordinate: f64,
    dimension: f64,
    residual: f64,
}

#[derive(Deserialize)]
struct StoredReport {
    d: f64,
    horizontal: Vec<StoredEstimate>,
    vertical: Vec<StoredEstimate>,
}

#[derive(Deserialize)]
struct StoredBounds {
    report: StoredReport,
}

#[derive(Deserialize)]
struct StoredExpansion {
    inputs: ExpansionInputs,
}

#[derive(Serialize)]
struct RunSummary {
    dir: String,
    command: String,
    artifacts: usize,
    checks: Vec<(String, String)>,
    flags: Vec<String>,
}

#[derive(Serialize)]
struct FiberChecks {
    dir: String,
    bounds: BoundsReport,
    expansion: Option<ExpansionReport>,
    corollary: Option<CorollaryReport>,
    corollary_note: Option<String>,
}

#[derive(Serialize)]
struct VerifyDoc {
    schema_version: u32,
    runs: Vec<RunSummary>,
    fibers: Vec<FiberChecks>,
    modulus_properties: PropertySummary,
}

fn estimates(v: &[StoredEstimate]) -> Vec<FiberEstimate> {
    v.iter().map(|e| FiberEstimate { coordinate: e.coordinate, dimension: e.dimension, residual: e.residual }).collect()
}

pub fn run(cfg: &VerifyConfig, base_dir: &Path, seed: u64, out: &mut OutDir) -> Result<()> {
    ensure(!cfg.runs.is_empty(), || "config lists no runs".into())?;
    let tol = BoundsTolerance { upper: cfg.upper_tolerance, sharpness: cfg.sharpness_tolerance };
    let mut runs = Vec::new();
    let mut fibers = Vec::new();
    for r in &cfg.runs {
        let dir = base_dir.join(r);
        let m = load_verified(&dir)?;
        if m.artifacts.iter().any(|a| a.path == "bounds_report.json") {
            let stored: StoredBounds = read_json(&dir.join("bounds_report.json"))?;
            let d = stored.report.d;
            let bounds = verify_thm12(d, &estimates(&stored.report.horizontal), &estimates(&stored.report.vertical), tol);
            for c in &bounds.checks {
                out.check(&format!("{r}: {}", c.name), &format!("{:?}", c.status).to_lowercase(), Some(format!("{:.4} vs {:.4}", c.value, c.bound)));
            }
            // The exceptional set E has dimension d; its fibers reach δ = inf dim.
            let (corollary, note) = match corollary_compare(bounds.inf_horizontal, cfg.corollary_eps, Some(d), cfg.corollary_tolerance) {
                Ok(c) => (Some(c), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let expansion = if m.artifacts.iter().any(|a| a.path == "expansion_report.json") {
                let stored: StoredExpansion = read_json(&dir.join("expansion_report.json"))?;
                let e = verify_expansion(stored.inputs, cfg.upper_tolerance, cfg.upper_tolerance);
                out.check(
                    &format!("{r}: fiberwise expansion"),
                    &format!("{:?}", e.inequality.status).to_lowercase(),
                    Some(format!("{:.4} vs {:.4}", e.lhs, e.rhs)),
                );
                Some(e)
            } else {
                None
            };
            let detail = corollary
                .map(|c| format!("d = {:.4} vs 2/delta - 1 = {:.4}", d, c.limit))
                .or_else(|| note.clone());
            let status = match corollary.and_then(|c| c.consistent) {
                Some(true) => "pass",
                Some(false) => "fail",
                None => "skipped",
            };
            out.check(&format!("{r}: corollary consistency"), status, detail);
            fibers.push(FiberChecks { dir: r.clone(), bounds, expansion, corollary, corollary_note: note });
        }
        runs.push(RunSummary {
            dir: r.clone(),
            command: m.command.clone(),
            artifacts: m.artifacts.len(),
            checks: m.checks.iter().map(|c| (c.name.clone(), c.status.clone())).collect(),
            flags: m.flags.clone(),
        });
    }
    let props = property_summary(seed, cfg.property_trials, cfg.property_p).map_err(|e| input_error(e.to_string()))?;
    let props_ok = props.monotone_failures == 0 && props.subadditive_failures == 0;
    out.check(
        "modulus properties",
        if props_ok { "pass" } else { "fail" },
        Some(format!("{} trials, {} + {} failures", props.trials, props.monotone_failures, props.subadditive_failures)),
    );

    let mut table = String::new();
    writeln!(table, "{:<48} {:<14} detail", "check", "status")?;
    for c in &out.checks {
        writeln!(table, "{:<48} {:<14} {}", c.name, c.status, c.detail.clone().unwrap_or_default())?;
    }
    for r in &runs {
        for (name, status) in &r.checks {
            writeln!(table, "{:<48} {:<14} (recorded)", format!("{}: {}", r.dir, name), status)?;
        }
        for f in &r.flags {
            writeln!(table, "{:<48} {:<14} {f}", format!("{}: flag", r.dir), "-")?;
        }
    }
    out.write("verify.txt", table.as_bytes())?;
    out.json(
        "verify.json",
        &VerifyDoc { schema_version: DIMENSION_SCHEMA_VERSION, runs, fibers, modulus_properties: props },
    )?;
    Ok(())
}
