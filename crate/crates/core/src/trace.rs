//! Per-iteration records shared by every optimizer run.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::point::Point;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Fixed,
    Da,
    Sc,
    Df,
    DfPractical,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Fixed => "fixed",
            Algorithm::Da => "da",
            Algorithm::Sc => "sc",
            Algorithm::Df => "df",
            Algorithm::DfPractical => "df_practical",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Algorithm::Fixed,
            Algorithm::Da,
            Algorithm::Sc,
            Algorithm::Df,
            Algorithm::DfPractical,
        ]
        .into_iter()
        .find(|a| a.name() == s)
        .ok_or_else(|| Error::config(format!("unknown algorithm '{s}'")))
    }
}

/// State at iterate `k` together with the scale chosen for the step taken
/// from it.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    pub f: f64,
    pub gap: Option<f64>,
    pub grad_dual_norm: f64,
    /// `η_k` for trust-region methods, `R_k` for DF-Muon.
    pub scale: f64,
    /// Algorithm-specific columns, named by [`Trace::extra_names`].
    pub extras: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub algorithm: Algorithm,
    pub extra_names: Vec<&'static str>,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new(algorithm: Algorithm, extra_names: &[&'static str]) -> Self {
        Self {
            algorithm,
            extra_names: extra_names.to_vec(),
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub(crate) fn push(&mut self, rec: TraceRecord) {
        debug_assert_eq!(rec.extras.len(), self.extra_names.len());
        debug_assert_eq!(rec.k, self.records.len());
        self.records.push(rec);
    }

    /// Values of a named extra column.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.extra_names.iter().position(|n| *n == name)?;
        Some(self.records.iter().map(|r| r.extras[idx]).collect())
    }

    pub fn scales(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.scale).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.f).collect()
    }
}

/// A completed run: per-step trace plus the final iterate `x_T`.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trace: Trace,
    pub x_final: Point,
    pub f_final: f64,
    pub gap_final: Option<f64>,
    pub grad_dual_norm_final: f64,
    /// Number of gradient (or minibatch gradient) evaluations performed.
    pub grad_evals: usize,
}

impl RunOutput {
    /// `min_{1≤k≤T} ‖∇f(x_k)‖_*` over the iterates after the first step.
    pub fn min_grad_after_start(&self) -> f64 {
        self.trace
            .records
            .iter()
            .skip(1)
            .map(|r| r.grad_dual_norm)
            .fold(self.grad_dual_norm_final, f64::min)
    }
}

pub(crate) fn finite_or_diverged(step: usize, f: f64) -> Result<f64> {
    if f.is_finite() {
        Ok(f)
    } else {
        Err(Error::Divergence { step, value: f })
    }
}
