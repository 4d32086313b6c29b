//! Executes a [`RunPlan`] and writes its trace as CSV.

use std::io::Write;

use muonscale::da::da_run;
use muonscale::df::df_run;
use muonscale::muon::fixed_muon_run;
use muonscale::practical::practical_run;
use muonscale::sc::sc_run;
use muonscale::{RunOutput, Trace};

use crate::config::{Method, RunPlan, Target};
use crate::error::{HarnessError, Result};

pub fn execute(plan: &RunPlan) -> Result<RunOutput> {
    let t = plan.horizon;
    let x0 = &plan.x0;
    let out = match (&plan.target, &plan.method) {
        (Target::Deterministic { problem, geom }, m) => match m {
            Method::Fixed(cfg) => fixed_muon_run(problem, geom, x0, cfg, t)?,
            Method::Da(cfg) => da_run(problem, geom, x0, cfg, t)?,
            Method::Sc { alpha } => sc_run(problem, geom, x0, *alpha, t)?,
            Method::Df { cfg, d0 } => df_run(problem, geom, x0, cfg, t, *d0)?,
            Method::Practical { .. } => return Err(HarnessError::usage("df_practical needs the stochastic model")),
        },
        (Target::Stochastic(model), Method::Practical { cfg, batch, seed }) => {
            practical_run(model.as_ref(), x0, cfg, *batch, t, *seed)?
        }
        (Target::Stochastic(_), _) => return Err(HarnessError::usage("the stochastic model only runs df_practical")),
    };
    Ok(out)
}

/// Shortest text that parses back to the same double; empty for
/// non-finite values and absent gaps.
pub fn fmt_f64(v: f64, buf: &mut ryu::Buffer) -> String {
    if v.is_finite() {
        buf.format_finite(v).to_string()
    } else {
        String::new()
    }
}

/// Header `k,f,gap,grad_dual_norm,eta,<extras>` then one row per step.
pub fn write_trace<W: Write>(trace: &Trace, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["k", "f", "gap", "grad_dual_norm", "eta"];
    header.extend(trace.extra_names.iter().copied());
    w.write_record(&header)?;
    let mut buf = ryu::Buffer::new();
    for r in &trace.records {
        let mut row = vec![
            r.k.to_string(),
            fmt_f64(r.f, &mut buf),
            r.gap.map(|g| fmt_f64(g, &mut buf)).unwrap_or_default(),
            fmt_f64(r.grad_dual_norm, &mut buf),
            fmt_f64(r.scale, &mut buf),
        ];
        row.extend(r.extras.iter().map(|v| fmt_f64(*v, &mut buf)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the plan and writes its CSV to `out`, or to stdout when absent.
pub fn run_to_csv(plan: &RunPlan, out: Option<&std::path::Path>) -> Result<RunOutput> {
    let output = execute(plan)?;
    match out {
        Some(path) => {
            let file = std::fs::File::create(path)?;
            write_trace(&output.trace, std::io::BufWriter::new(file))?;
        }
        None => write_trace(&output.trace, std::io::stdout().lock())?,
    }
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn csv_of(cfg: &RunConfig) -> String {
        let out = execute(&cfg.resolve().unwrap()).unwrap();
        let mut bytes = vec![];
        write_trace(&out.trace, &mut bytes).unwrap();
        String::from_utf8(bytes).unwrap()
    }

    #[test]
    fn floats_round_trip() {
        let mut buf = ryu::Buffer::new();
        for v in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, 0.0] {
            assert_eq!(fmt_f64(v, &mut buf).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(f64::NAN, &mut buf), "");
    }

    #[test]
    fn da_rows_follow_the_hand_recurrence() {
        let cfg = RunConfig::from_toml_str(
            "problem = \"quad_iso\"\ndim = 1\nx0 = 1.0\nalgo = \"da\"\nT = 2\nr0 = 0.5\nalpha = 0.5",
        )
        .unwrap();
        let text = csv_of(&cfg);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,f,gap,grad_dual_norm,eta,r_bar,dist,track_err,track_bound");
        assert_eq!(lines.len(), 3);
        let row0: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(&row0[..6], &["0", "0.5", "0.5", "1.0", "0.5", "0.5"]);
        let row1: Vec<f64> = lines[2].split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(row1[1], 0.125);
        assert!((row1[4] - 0.5 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn unknown_gap_is_left_empty() {
        let cfg = RunConfig::from_toml_str("algo = \"df_practical\"\nT = 3").unwrap();
        let text = csv_of(&cfg);
        assert!(text.lines().skip(1).all(|l| l.split(',').nth(2) == Some("")));
    }
}
