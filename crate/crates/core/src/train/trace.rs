//! The per-run optimization record: loss components per iteration, split
//! events, PSNR snapshots, and wall-clock time, serializable to CSV (rows)
//! and JSON (full record).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Loss component values for one evaluation. Component fields hold the
/// raw (unweighted) term values; `total` is the weighted sum actually
/// optimized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub rgb: f64,
    pub silhouette: f64,
    pub offset: f64,
    pub landmark: f64,
    pub laplacian: f64,
    pub mesh: f64,
    pub perceptual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitTraceRow {
    pub iteration: u64,
    pub losses: LossBreakdown,
    /// Current primitive count: Gaussians in stage II, surface vertices in
    /// stage I.
    pub gaussians: usize,
    pub psnr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitEvent {
    pub iteration: u64,
    pub parents: Vec<usize>,
    pub added: usize,
    pub total_after: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub rows: Vec<FitTraceRow>,
    pub splits: Vec<SplitEvent>,
    pub wall_seconds: f64,
    /// Present when the fit stopped early; the rows cover everything up to
    /// the abort.
    pub aborted: Option<String>,
}

impl FitTrace {
    pub fn new() -> FitTrace {
        FitTrace::default()
    }

    /// Appends a row, enforcing the strictly increasing iteration index.
    pub fn push_row(&mut self, row: FitTraceRow) {
        if let Some(last) = self.rows.last() {
            assert!(
                row.iteration > last.iteration,
                "trace iterations must increase: {} after {}",
                row.iteration,
                last.iteration
            );
        }
        self.rows.push(row);
    }

    pub fn validate(&self) -> Result<()> {
        for pair in self.rows.windows(2) {
            if pair[1].iteration <= pair[0].iteration {
                return Err(Error::invalid("trace iteration index is not increasing"));
            }
        }
        Ok(())
    }

    /// Copy with wall-clock zeroed, for comparing runs whose arithmetic
    /// should agree exactly while their timing never can.
    pub fn comparable(&self) -> FitTrace {
        let mut t = self.clone();
        t.wall_seconds = 0.0;
        t
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "iteration",
            "total",
            "rgb",
            "silhouette",
            "offset",
            "landmark",
            "laplacian",
            "mesh",
            "perceptual",
            "gaussians",
            "psnr",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.iteration.to_string(),
                format!("{:.17e}", r.losses.total),
                format!("{:.17e}", r.losses.rgb),
                format!("{:.17e}", r.losses.silhouette),
                format!("{:.17e}", r.losses.offset),
                format!("{:.17e}", r.losses.landmark),
                format!("{:.17e}", r.losses.laplacian),
                format!("{:.17e}", r.losses.mesh),
                format!("{:.17e}", r.losses.perceptual),
                r.gaussians.to_string(),
                r.psnr.map(|p| format!("{p:.6}")).unwrap_or_default(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv flush: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::invalid(format!("csv utf8: {e}")))
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?)
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)
            .map_err(|e| Error::io(path.display().to_string(), e))
    }
}
