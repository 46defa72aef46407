use std::path::Path;

use anyhow::Result;
use serde::{Deserialize, Serialize};

use qcdistort_core::modulus::{
    product_family, product_modulus_exact, solve_modulus_with, BaseMeasure, DiscreteMeasureFamily, SolveStatus,
    SolverOptions, GAP_TOL, MAX_SWEEPS, MODULUS_SCHEMA_VERSION,
};

use crate::config::ensure;
use crate::exit::{input_error, nonconvergence};
use crate::output::{read_json, OutDir};

/// A family of measures, as stored in a family file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    /// Fibers `E × {y}` of a product, weighted `λ_a ν_y`.
    Product { lambda: Vec<f64>, nu: Vec<f64> },
    Dense {
        rows: Vec<Vec<f64>>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    Sparse {
        n_atoms: usize,
        rows: Vec<Vec<(usize, f64)>>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
}

impl FamilySpec {
    pub fn build(&self) -> (DiscreteMeasureFamily, BaseMeasure) {
        match self {
            FamilySpec::Product { lambda, nu } => product_family(lambda, nu),
            FamilySpec::Dense { rows, weights } => {
                let fam = DiscreteMeasureFamily::from_dense(rows);
                let n = rows.first().map_or(0, |r| r.len());
                (fam, weights.clone().map_or_else(|| BaseMeasure::uniform(n), |w| BaseMeasure { weights: w }))
            }
            FamilySpec::Sparse { n_atoms, rows, weights } => (
                DiscreteMeasureFamily::new(*n_atoms, rows.clone()),
                weights.clone().map_or_else(|| BaseMeasure::uniform(*n_atoms), |w| BaseMeasure { weights: w }),
            ),
        }
    }
}

/// A family given inline or as a path relative to the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FamilySource {
    Path(String),
    Inline(FamilySpec),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModulusConfig {
    pub family: Option<FamilySource>,
    pub p: f64,
    pub gap_tol: f64,
    pub max_sweeps: usize,
    /// Relative tolerance of the product oracle comparison.
    pub oracle_tol: f64,
}

impl Default for ModulusConfig {
    fn default() -> Self {
        ModulusConfig { family: None, p: 2.0, gap_tol: GAP_TOL, max_sweeps: MAX_SWEEPS, oracle_tol: 1e-6 }
    }
}

#[derive(Serialize)]
struct OracleDoc {
    schema_version: u32,
    p: f64,
    lambda_e: f64,
    nu_y: f64,
    exact: f64,
    solved: Option<f64>,
    relative_error: Option<f64>,
    tolerance: f64,
    pass: bool,
}

pub fn run(cfg: &ModulusConfig, base_dir: &Path, out: &mut OutDir) -> Result<()> {
    let spec = match &cfg.family {
        None => return Err(input_error("config has no \"family\"")),
        Some(FamilySource::Inline(s)) => s.clone(),
        Some(FamilySource::Path(p)) => read_json::<FamilySpec>(&base_dir.join(p))?,
    };
    ensure(cfg.p > 1.0 && cfg.p.is_finite(), || format!("p must exceed 1, got {}", cfg.p))?;
    out.json("family.json", &spec)?;
    let (family, base) = spec.build();
    let opts = SolverOptions { gap_tol: cfg.gap_tol, max_sweeps: cfg.max_sweeps };
    let result = solve_modulus_with(&family, &base, cfg.p, &opts, None).map_err(|e| input_error(e.to_string()))?;
    out.json("result.json", &result)?;
    out.csv("iterations.csv", result.ledger.iter())?;
    match result.status {
        SolveStatus::Converged => out.check("solver", "converged", Some(format!("gap {:e}", result.certified_gap))),
        SolveStatus::Infinite => {
            out.check("solver", "infinite", result.degenerate_row.map(|r| format!("row {r} has no positive weight")));
            out.flags.push("infinite modulus: degenerate family".into());
        }
        SolveStatus::NotConverged => {
            out.check("solver", "not converged", Some(format!("gap {:e}", result.certified_gap)));
            out.deferred = Some(nonconvergence(format!(
                "modulus solve stopped after {} sweeps with gap {:e}",
                result.iterations, result.certified_gap
            )));
        }
    }
    if let FamilySpec::Product { lambda, nu } = &spec {
        let lambda_e: f64 = lambda.iter().sum();
        let nu_y: f64 = nu.iter().sum();
        let exact = product_modulus_exact(lambda_e, nu_y, cfg.p);
        let solved = result.is_finite().then_some(result.value);
        let rel = solved.map(|v| (v - exact).abs() / exact.abs().max(f64::MIN_POSITIVE));
        let pass = rel.is_some_and(|r| r <= cfg.oracle_tol);
        out.check("product oracle", if pass { "pass" } else { "fail" }, rel.map(|r| format!("relative error {r:e}")));
        out.json(
            "oracle.json",
            &OracleDoc {
                schema_version: MODULUS_SCHEMA_VERSION,
                p: cfg.p,
                lambda_e,
                nu_y,
                exact,
                solved,
                relative_error: rel,
                tolerance: cfg.oracle_tol,
                pass,
            },
        )?;
    }
    Ok(())
}
