//! Cartesian sweeps over config keys. Each run writes its own CSV; a
//! summary table records one line per run, failures included.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::runner::{fmt_f64, run_to_csv};

/// One axis of the grid, parsed from `key=v1,v2,...`.
#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (key, vals) = s
            .split_once('=')
            .ok_or_else(|| format!("grid axis must be key=v1,v2,..., got '{s}'"))?;
        let values: Vec<String> = vals
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if key.trim().is_empty() || values.is_empty() {
            return Err(format!("grid axis must be key=v1,v2,..., got '{s}'"));
        }
        Ok(Axis {
            key: key.trim().to_string(),
            values,
        })
    }
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub index: usize,
    pub assignment: Vec<String>,
    pub file: PathBuf,
    pub exit_code: i32,
    pub message: String,
    pub f_final: Option<f64>,
    pub gap_final: Option<f64>,
}

fn combinations(axes: &[Axis]) -> Vec<Vec<String>> {
    axes.iter().fold(vec![vec![]], |acc, axis| {
        acc.into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut next = prefix.clone();
                    next.push(v.clone());
                    next
                })
            })
            .collect()
    })
}

/// Runs every grid point and writes `run_NNNN.csv` files plus
/// `summary.csv` into `out_dir`. Config errors in the grid itself are
/// reported before anything runs.
pub fn sweep(base: &RunConfig, axes: &[Axis], out_dir: &Path) -> Result<Vec<SweepRow>> {
    if axes.is_empty() {
        return Err(HarnessError::usage("sweep needs at least one --grid axis"));
    }
    if base.out.is_some() {
        return Err(HarnessError::usage("sweep writes into --out-dir; drop --out"));
    }
    let configs: Vec<(Vec<String>, RunConfig)> = combinations(axes)
        .into_iter()
        .map(|vals| {
            let cfg = axes
                .iter()
                .zip(&vals)
                .try_fold(base.clone(), |c, (axis, v)| c.with_assignment(&axis.key, v))?;
            Ok((vals, cfg))
        })
        .collect::<Result<_>>()?;
    std::fs::create_dir_all(out_dir)?;

    let rows: Vec<SweepRow> = configs
        .par_iter()
        .enumerate()
        .map(|(index, (assignment, cfg))| {
            let file = out_dir.join(format!("run_{index:04}.csv"));
            let result = cfg.resolve().and_then(|plan| run_to_csv(&plan, Some(&file)));
            let (exit_code, message, f_final, gap_final) = match result {
                Ok(out) => (0, String::new(), Some(out.f_final), out.gap_final),
                Err(e) => (e.exit_code(), e.to_string(), None, None),
            };
            SweepRow {
                index,
                assignment: assignment.clone(),
                file,
                exit_code,
                message,
                f_final,
                gap_final,
            }
        })
        .collect();

    let mut w = csv::Writer::from_path(out_dir.join("summary.csv"))?;
    let mut header: Vec<String> = vec!["index".into()];
    header.extend(axes.iter().map(|a| a.key.clone()));
    header.extend(["exit_code", "f_final", "gap_final", "file", "message"].map(String::from));
    w.write_record(&header)?;
    let mut buf = ryu::Buffer::new();
    for r in &rows {
        let mut rec = vec![r.index.to_string()];
        rec.extend(r.assignment.iter().cloned());
        rec.push(r.exit_code.to_string());
        rec.push(r.f_final.map(|v| fmt_f64(v, &mut buf)).unwrap_or_default());
        rec.push(r.gap_final.map(|v| fmt_f64(v, &mut buf)).unwrap_or_default());
        rec.push(
            r.file
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
        rec.push(r.message.clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(rows)
}
