//! Log-log rate fits: one independent run per horizon and seed, aggregated
//! per horizon by the geometric mean over seeds.

use std::io::Write;

use muonscale::testkit::{slope_fit, SlopeFit};
use muonscale::{Algorithm, RunOutput};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::runner::{execute, fmt_f64};

pub const MIN_HORIZONS: usize = 4;

/// Powers of two from `lo` to `hi` inclusive.
pub fn doubling(lo: usize, hi: usize) -> Vec<usize> {
    std::iter::successors(Some(lo.max(1)), |t| Some(t * 2))
        .take_while(|t| *t <= hi)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    /// `f(x_T) − f★`.
    FinalGap,
    /// `min_{1≤k≤T} ‖∇f(x_k)‖_*`.
    MinGradNorm,
}

impl Metric {
    pub fn for_algorithm(algo: Algorithm) -> Result<Self> {
        match algo {
            Algorithm::Da => Ok(Metric::MinGradNorm),
            Algorithm::Fixed | Algorithm::Sc | Algorithm::Df => Ok(Metric::FinalGap),
            Algorithm::DfPractical => Err(HarnessError::usage("rates needs a deterministic algorithm")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::FinalGap => "final_gap",
            Metric::MinGradNorm => "min_grad_norm",
        }
    }

    fn read(self, out: &RunOutput) -> Result<f64> {
        match self {
            Metric::MinGradNorm => Ok(out.min_grad_after_start()),
            Metric::FinalGap => out
                .gap_final
                .ok_or_else(|| HarnessError::usage("final gap needs a problem with known f*")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HorizonRow {
    pub horizon: usize,
    /// Geometric mean over the seeds with a positive value.
    pub value: Option<f64>,
    pub seeds_used: usize,
    /// Seeds whose value was zero or negative (exact solves).
    pub seeds_excluded: usize,
}

#[derive(Clone, Debug)]
pub struct RatesReport {
    pub algo: Algorithm,
    pub problem: String,
    pub metric: Metric,
    pub rows: Vec<HorizonRow>,
    /// `None` when fewer than three horizons kept a positive value.
    pub fit: Option<SlopeFit>,
}

/// `base` must name the algorithm and problem; its seed is the first of
/// `seeds` consecutive seeds, and its `T` is ignored.
pub fn measure(base: &RunConfig, horizons: &[usize], seeds: usize) -> Result<RatesReport> {
    if horizons.len() < MIN_HORIZONS {
        return Err(HarnessError::usage(format!(
            "rates needs >= {MIN_HORIZONS} horizons, got {}",
            horizons.len()
        )));
    }
    if seeds == 0 {
        return Err(HarnessError::usage("rates needs >= 1 seed"));
    }
    let algo: Algorithm = base
        .algo
        .as_deref()
        .ok_or_else(|| HarnessError::usage("missing --algo"))?
        .parse()?;
    let metric = Metric::for_algorithm(algo)?;
    let first = base.seed.unwrap_or(0);
    let jobs: Vec<(usize, u64)> = horizons
        .iter()
        .flat_map(|&t| (0..seeds as u64).map(move |s| (t, first + s)))
        .collect();
    let values: Vec<f64> = jobs
        .par_iter()
        .map(|&(t, seed)| {
            let cfg = RunConfig {
                horizon: Some(t),
                seed: Some(seed),
                ..base.clone()
            };
            metric.read(&execute(&cfg.resolve()?)?)
        })
        .collect::<Result<_>>()?;

    let rows: Vec<HorizonRow> = horizons
        .iter()
        .zip(values.chunks(seeds))
        .map(|(&horizon, vals)| {
            let pos: Vec<f64> = vals.iter().copied().filter(|v| *v > 0.0).collect();
            let value = (!pos.is_empty()).then(|| (pos.iter().map(|v| v.ln()).sum::<f64>() / pos.len() as f64).exp());
            HorizonRow {
                horizon,
                value,
                seeds_used: pos.len(),
                seeds_excluded: vals.len() - pos.len(),
            }
        })
        .collect();
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.value.map(|v| (r.horizon as f64, v)))
        .collect();
    let fit = if points.len() >= 3 {
        Some(slope_fit(&points)?)
    } else {
        None
    };
    Ok(RatesReport {
        algo,
        problem: base.problem.clone().unwrap_or_default(),
        metric,
        rows,
        fit,
    })
}

impl RatesReport {
    /// One row per horizon; the fitted slope and R² repeat on every row so
    /// the table stands alone. Excluded horizons have an empty value.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record([
            "algo",
            "problem",
            "metric",
            "T",
            "value",
            "seeds_used",
            "seeds_excluded",
            "slope",
            "r_squared",
        ])?;
        let mut buf = ryu::Buffer::new();
        let slope = self.fit.map(|f| fmt_f64(f.slope, &mut buf)).unwrap_or_default();
        let r2 = self.fit.map(|f| fmt_f64(f.r_squared, &mut buf)).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                self.algo.name().to_string(),
                self.problem.clone(),
                self.metric.name().to_string(),
                r.horizon.to_string(),
                r.value.map(|v| fmt_f64(v, &mut buf)).unwrap_or_default(),
                r.seeds_used.to_string(),
                r.seeds_excluded.to_string(),
                slope.clone(),
                r2.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Human-readable summary, including any excluded horizons.
    pub fn summary(&self) -> String {
        let mut s = match self.fit {
            Some(f) => format!(
                "{} on {}: {} slope {:.4} (R^2 {:.4})",
                self.algo,
                self.problem,
                self.metric.name(),
                f.slope,
                f.r_squared
            ),
            None => format!("{} on {}: too few positive horizons to fit", self.algo, self.problem),
        };
        let dropped: Vec<String> = self
            .rows
            .iter()
            .filter(|r| r.seeds_excluded > 0)
            .map(|r| r.horizon.to_string())
            .collect();
        if !dropped.is_empty() {
            s.push_str(&format!("; nonpositive values excluded at T = {}", dropped.join(", ")));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(algo: &str, problem: &str) -> RunConfig {
        RunConfig {
            algo: Some(algo.into()),
            problem: Some(problem.into()),
            dim: Some(crate::Dim::Vector(5)),
            ..RunConfig::default()
        }
    }

    #[test]
    fn doubling_horizons() {
        assert_eq!(doubling(32, 4096), vec![32, 64, 128, 256, 512, 1024, 2048, 4096]);
        assert_eq!(doubling(3, 2), Vec::<usize>::new());
    }

    #[test]
    fn too_few_horizons_is_a_usage_error() {
        let err = measure(&cfg("df", "least_squares"), &[8, 16, 32], 1).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn exact_solves_are_excluded_and_noted() {
        // SC solves quad_iso exactly in one Euclidean step.
        let c = RunConfig {
            dim: Some(crate::Dim::Vector(1)),
            x0: Some(1.0),
            ..cfg("sc", "quad_iso")
        };
        let rep = measure(&c, &[4, 8, 16, 32], 2).unwrap();
        assert!(rep.rows.iter().all(|r| r.value.is_none() && r.seeds_excluded == 2));
        assert!(rep.fit.is_none());
        assert!(rep.summary().contains("excluded at T = 4, 8, 16, 32"));
    }

    #[test]
    fn reports_are_deterministic_under_parallel_runs() {
        let c = cfg("df", "least_squares");
        let a = measure(&c, &[16, 32, 64, 128], 3).unwrap();
        let b = measure(&c, &[16, 32, 64, 128], 3).unwrap();
        let (mut x, mut y) = (vec![], vec![]);
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        assert!(a.fit.unwrap().slope < 0.0);
    }
}
