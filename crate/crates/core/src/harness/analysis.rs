//! Steady-state tables of the cancelling attack's residual measure g.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{eval_g, g_steady_state};
use crate::error::{FedRlError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GRow {
    pub n: usize,
    pub lambda: f64,
    /// `eval_g` at α = β = 1/n.
    pub g: f64,
    /// Closed form `(n − 1 − λ)/n`.
    pub g_ss: f64,
}

fn row(lambda: f64, n: usize) -> Result<GRow> {
    let w = 1.0 / n as f64;
    Ok(GRow { n, lambda, g: eval_g(lambda, n, w, w)?, g_ss: g_steady_state(lambda, n) })
}

/// g over `n ∈ [n_min, n_max]` at fixed λ.
pub fn g_vs_n(lambda: f64, n_min: usize, n_max: usize) -> Result<Vec<GRow>> {
    (n_min..=n_max).map(|n| row(lambda, n)).collect()
}

/// g over `λ ∈ {0, step, 2·step, …, n − 1}` at fixed n.
pub fn g_vs_lambda(n: usize, step: f64) -> Result<Vec<GRow>> {
    if !(step > 0.0) {
        return Err(FedRlError::Config(format!("lambda step {step} must be > 0")));
    }
    let top = n as f64 - 1.0;
    let count = (top / step).floor() as usize;
    let mut rows: Vec<GRow> = (0..=count).map(|i| row(i as f64 * step, n)).collect::<Result<_>>()?;
    if rows.last().is_some_and(|r| r.lambda < top) {
        rows.push(row(top, n)?);
    }
    Ok(rows)
}

/// Writes `g_vs_n.csv` (λ = 1, n = 3..=200) and `g_vs_lambda.csv`
/// (n = 100, λ = 0..=99) into `dir`; returns the written paths.
pub fn emit_analysis_tables(dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| FedRlError::io(dir, e))?;
    let tables = [("g_vs_n.csv", g_vs_n(1.0, 3, 200)?), ("g_vs_lambda.csv", g_vs_lambda(100, 1.0)?)];
    let mut paths = Vec::new();
    for (name, rows) in tables {
        let path = dir.join(name);
        let mut w = csv::Writer::from_path(&path)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| FedRlError::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}
