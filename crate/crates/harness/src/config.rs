//! Run configuration: one flat key set shared by command-line flags and
//! TOML files, merged with flags taking precedence, then resolved into a
//! validated [`RunPlan`].

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use muonscale::da::{default_initial_radius, DaConfig};
use muonscale::df::{beta_for_horizon, DfConfig, OmegaRule, DEFAULT_ALPHA, DEFAULT_BIG_M, DEFAULT_LAMBDA, DEFAULT_RHO};
use muonscale::muon::FixedConfig;
use muonscale::practical::{PracticalCfg, SoftmaxModel};
use muonscale::problems::{build_problem, ProblemOptions};
use muonscale::{Algorithm, BlockShape, Geometry, NormTag, Point, ProblemKind, ProblemSpec};
use serde::Deserialize;

use crate::error::{HarnessError, Result};

/// Name of the stochastic model driven by `df_practical`.
pub const SOFTMAX_PROBLEM: &str = "softmax";
pub const SOFTMAX_CLASSES: usize = 3;
pub const SOFTMAX_FEATURES: usize = 8;
pub const SOFTMAX_SAMPLES: usize = 512;
pub const DEFAULT_BATCH: usize = 32;
pub const DEFAULT_DIM: usize = 10;

/// Problem dimension: `n` for a vector block, `RxC` for a matrix block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(try_from = "DimRepr")]
pub enum Dim {
    Vector(usize),
    Matrix(usize, usize),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DimRepr {
    Int(usize),
    Text(String),
}

impl TryFrom<DimRepr> for Dim {
    type Error = String;

    fn try_from(r: DimRepr) -> std::result::Result<Self, String> {
        match r {
            DimRepr::Int(n) => Ok(Dim::Vector(n)),
            DimRepr::Text(s) => s.parse(),
        }
    }
}

impl FromStr for Dim {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let bad = || format!("dim must be N or RxC, got '{s}'");
        match s.split_once(['x', 'X']) {
            Some((r, c)) => Ok(Dim::Matrix(
                r.trim().parse().map_err(|_| bad())?,
                c.trim().parse().map_err(|_| bad())?,
            )),
            None => Ok(Dim::Vector(s.trim().parse().map_err(|_| bad())?)),
        }
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dim::Vector(n) => write!(f, "{n}"),
            Dim::Matrix(r, c) => write!(f, "{r}x{c}"),
        }
    }
}

impl Dim {
    fn layout(self) -> Vec<BlockShape> {
        match self {
            Dim::Vector(n) => vec![BlockShape::vector("x", n)],
            Dim::Matrix(r, c) => vec![BlockShape::matrix("W", r, c)],
        }
    }
}

/// Every settable key. All optional so that a file and the flags can be
/// layered; [`RunConfig::resolve`] fills defaults and rejects keys the
/// chosen algorithm does not use.
#[derive(Args, Deserialize, Clone, Debug, Default, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// quad_iso | least_squares | logistic | ripple | star_1d | softmax
    #[arg(long)]
    pub problem: Option<String>,
    /// N for a vector block or RxC for a matrix block
    #[arg(long)]
    pub dim: Option<Dim>,
    /// Seeds the problem data and the initial point
    #[arg(long)]
    pub seed: Option<u64>,
    /// euclidean | linf | spectral
    #[arg(long)]
    pub geometry: Option<String>,
    /// fixed | da | sc | df | df_practical
    #[arg(long)]
    pub algo: Option<String>,
    /// Number of steps
    #[arg(long = "T")]
    #[serde(rename = "T")]
    pub horizon: Option<usize>,
    /// Momentum weight of the newest gradient
    #[arg(long)]
    pub alpha: Option<f64>,
    /// DF recentering weight; default min(alpha, 2 ln(T+1)/T)
    #[arg(long)]
    pub beta: Option<f64>,
    /// DF majorant weight on the step length
    #[arg(long)]
    pub rho: Option<f64>,
    /// DF weight tying the radius to the distance certificate
    #[arg(long)]
    pub lambda: Option<f64>,
    /// DF majorant weight on the recentered offset
    #[arg(long = "bigM")]
    #[serde(rename = "bigM")]
    pub big_m: Option<f64>,
    /// Initial DA radius
    #[arg(long)]
    pub r0: Option<f64>,
    /// Initial DF distance certificate
    #[arg(long)]
    pub d0: Option<f64>,
    /// Constant radius for `fixed`
    #[arg(long)]
    pub eta: Option<f64>,
    /// DA radius clamp, or the top of the practical scale range
    #[arg(long = "eta-max")]
    #[serde(alias = "eta-max")]
    pub eta_max: Option<f64>,
    /// DF certificate weights: unit | normalized
    #[arg(long)]
    pub omega: Option<String>,
    /// Start from the constant point with this value instead of a seeded draw
    #[arg(long)]
    pub x0: Option<f64>,
    /// Rows of the least-squares design
    #[arg(long)]
    pub rows: Option<usize>,
    /// Curvature of quad_iso
    #[arg(long = "quad-l")]
    #[serde(alias = "quad-l")]
    pub quad_l: Option<f64>,
    /// Minibatch size for df_practical
    #[arg(long)]
    pub batch: Option<usize>,
    /// CSV destination; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

macro_rules! overlay_fields {
    ($base:ident, $top:ident, $($f:ident),*) => {
        RunConfig { $($f: $top.$f.or($base.$f)),* }
    };
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| HarnessError::usage(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Values set in `top` win over `self`.
    pub fn overlay(self, top: RunConfig) -> RunConfig {
        overlay_fields!(
            self, top, problem, dim, seed, geometry, algo, horizon, alpha, beta, rho, lambda, big_m, r0, d0, eta,
            eta_max, omega, x0, rows, quad_l, batch, out
        )
    }

    /// Sets one key from its textual value, as written on a sweep grid.
    pub fn with_assignment(self, key: &str, value: &str) -> Result<RunConfig> {
        // Parse as a TOML value first so numbers keep their type; fall back
        // to a string for bare words like `least_squares`.
        let one = RunConfig::from_toml_str(&format!("{key} = {value}"))
            .or_else(|_| RunConfig::from_toml_str(&format!("{key} = {}", toml::Value::String(value.to_string()))))?;
        Ok(self.overlay(one))
    }

    /// Keys with a value, in file spelling.
    fn set_keys(&self) -> Vec<&'static str> {
        let mut keys = vec![];
        macro_rules! note {
            ($($f:ident => $k:literal),*) => { $( if self.$f.is_some() { keys.push($k); } )* };
        }
        note!(alpha => "alpha", beta => "beta", rho => "rho", lambda => "lambda", big_m => "bigM", r0 => "r0",
              d0 => "d0", eta => "eta", eta_max => "eta_max", omega => "omega", batch => "batch",
              rows => "rows", quad_l => "quad_l", x0 => "x0", geometry => "geometry", dim => "dim");
        keys
    }

    pub fn resolve(&self) -> Result<RunPlan> {
        let algo: Algorithm = self
            .algo
            .as_deref()
            .ok_or_else(|| HarnessError::usage("missing --algo"))?
            .parse()?;
        let horizon = self.horizon.ok_or_else(|| HarnessError::usage("missing --T"))?;
        if horizon == 0 {
            return Err(HarnessError::usage("T must be >= 1"));
        }
        let allowed: &[&str] = match algo {
            Algorithm::Fixed => &["eta", "alpha"],
            Algorithm::Da => &["r0", "alpha", "eta_max"],
            Algorithm::Sc => &["alpha"],
            Algorithm::Df => &["alpha", "beta", "rho", "lambda", "bigM", "d0", "omega"],
            Algorithm::DfPractical => &["alpha", "eta_max", "batch"],
        };
        let shared: &[&str] = match algo {
            Algorithm::DfPractical => &[],
            _ => &["rows", "quad_l", "x0", "geometry", "dim"],
        };
        if let Some(k) = self
            .set_keys()
            .into_iter()
            .find(|k| !allowed.contains(k) && !shared.contains(k))
        {
            return Err(HarnessError::usage(format!("'{k}' does not apply to algorithm {algo}")));
        }
        let seed = self.seed.unwrap_or(0);

        if algo == Algorithm::DfPractical {
            if let Some(p) = self.problem.as_deref().filter(|p| *p != SOFTMAX_PROBLEM) {
                return Err(HarnessError::usage(format!(
                    "df_practical runs on problem '{SOFTMAX_PROBLEM}', not '{p}'"
                )));
            }
            let model = SoftmaxModel::synthetic(SOFTMAX_CLASSES, SOFTMAX_FEATURES, SOFTMAX_SAMPLES, seed)?;
            let x0 = model.initial_point(seed);
            let mut cfg = PracticalCfg::default();
            if let Some(a) = self.alpha {
                cfg.momentum_alpha = a;
            }
            if let Some(e) = self.eta_max {
                cfg.eta_max = e;
            }
            cfg.validate()?;
            return Ok(RunPlan {
                horizon,
                x0,
                target: Target::Stochastic(Box::new(model)),
                method: Method::Practical {
                    cfg,
                    batch: self.batch.unwrap_or(DEFAULT_BATCH),
                    seed,
                },
            });
        }

        let name = self
            .problem
            .as_deref()
            .ok_or_else(|| HarnessError::usage("missing --problem"))?;
        if name == SOFTMAX_PROBLEM {
            return Err(HarnessError::usage(format!(
                "problem '{SOFTMAX_PROBLEM}' needs --algo df_practical"
            )));
        }
        let kind: ProblemKind = name.parse()?;
        let layout = self.dim.unwrap_or(Dim::Vector(DEFAULT_DIM)).layout();
        let opts = ProblemOptions {
            quad_l: self.quad_l.unwrap_or(1.0),
            lsq_rows: self.rows,
        };
        let problem = build_problem(kind, layout.clone(), seed, &opts)?;
        let tag: NormTag = self.geometry.as_deref().unwrap_or("euclidean").parse()?;
        let geom = Geometry::uniform(tag, layout.len());
        geom.check_layout(&layout)?;
        let x0 = match self.x0 {
            Some(v) => {
                let n: usize = layout.iter().map(BlockShape::len).sum();
                Point::from_flat(&layout, &vec![v; n])?
            }
            None => problem.initial_point(seed),
        };
        let alpha = self.alpha.unwrap_or(DEFAULT_ALPHA);
        let method = match algo {
            Algorithm::Fixed => Method::Fixed(FixedConfig {
                eta: self.eta.ok_or_else(|| HarnessError::usage("fixed needs --eta"))?,
                alpha,
            }),
            Algorithm::Da => Method::Da(DaConfig {
                r: match self.r0 {
                    Some(r) => r,
                    None => default_initial_radius(&x0, &geom)?,
                },
                alpha,
                eta_max: self.eta_max,
            }),
            Algorithm::Sc => Method::Sc { alpha },
            Algorithm::Df => {
                let omega: OmegaRule = self.omega.as_deref().unwrap_or("unit").parse()?;
                let cfg = DfConfig::new(
                    alpha,
                    self.beta.unwrap_or_else(|| beta_for_horizon(alpha, horizon)),
                    self.rho.unwrap_or(DEFAULT_RHO),
                    self.lambda.unwrap_or(DEFAULT_LAMBDA),
                    self.big_m.unwrap_or(DEFAULT_BIG_M),
                    omega,
                )?;
                Method::Df {
                    cfg,
                    d0: self.d0.unwrap_or(0.0),
                }
            }
            Algorithm::DfPractical => unreachable!("handled above"),
        };
        Ok(RunPlan {
            horizon,
            x0,
            target: Target::Deterministic { problem, geom },
            method,
        })
    }
}

pub enum Target {
    Deterministic { problem: ProblemSpec, geom: Geometry },
    Stochastic(Box<SoftmaxModel>),
}

#[derive(Clone, Debug)]
pub enum Method {
    Fixed(FixedConfig),
    Da(DaConfig),
    Sc { alpha: f64 },
    Df { cfg: DfConfig, d0: f64 },
    Practical { cfg: PracticalCfg, batch: usize, seed: u64 },
}

/// A validated run, ready to execute.
pub struct RunPlan {
    pub horizon: usize,
    pub x0: Point,
    pub target: Target,
    pub method: Method,
}

impl RunPlan {
    /// Replaces the geometry with one whose oracle is deliberately broken.
    pub fn inject_negated_lmo(&mut self) {
        if let Target::Deterministic { geom, .. } = &mut self.target {
            *geom = geom.clone().with_negated_lmo();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunConfig {
        RunConfig {
            problem: Some("quad_iso".into()),
            algo: Some("da".into()),
            horizon: Some(5),
            ..RunConfig::default()
        }
    }

    #[test]
    fn dims_parse_both_forms() {
        assert_eq!("7".parse::<Dim>(), Ok(Dim::Vector(7)));
        assert_eq!("3x4".parse::<Dim>(), Ok(Dim::Matrix(3, 4)));
        assert!("3x".parse::<Dim>().is_err());
        let c = RunConfig::from_toml_str("dim = 4").unwrap();
        assert_eq!(c.dim, Some(Dim::Vector(4)));
        let c = RunConfig::from_toml_str("dim = \"2x5\"").unwrap();
        assert_eq!(c.dim, Some(Dim::Matrix(2, 5)));
    }

    #[test]
    fn unknown_file_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("aplha = 0.5").is_err());
        let c = RunConfig::from_toml_str("T = 9\nbigM = 3.0\neta_max = 0.2").unwrap();
        assert_eq!((c.horizon, c.big_m, c.eta_max), (Some(9), Some(3.0), Some(0.2)));
    }

    #[test]
    fn flags_override_file_values() {
        let file = RunConfig::from_toml_str("alpha = 0.3\nseed = 4").unwrap();
        let flags = RunConfig {
            alpha: Some(0.7),
            ..RunConfig::default()
        };
        let c = file.overlay(flags);
        assert_eq!((c.alpha, c.seed), (Some(0.7), Some(4)));
    }

    #[test]
    fn assignments_keep_types() {
        let c = base().with_assignment("alpha", "0.25").unwrap();
        assert_eq!(c.alpha, Some(0.25));
        let c = c.with_assignment("problem", "ripple").unwrap();
        assert_eq!(c.problem.as_deref(), Some("ripple"));
        assert!(base().with_assignment("nope", "1").is_err());
    }

    #[test]
    fn parameters_must_match_the_algorithm() {
        let mut c = base();
        c.eta = Some(0.1);
        assert!(matches!(c.resolve(), Err(HarnessError::Usage(_))));
        c.algo = Some("fixed".into());
        assert!(c.resolve().is_ok());
        c.eta = None;
        assert!(matches!(c.resolve(), Err(HarnessError::Usage(_))));
    }

    #[test]
    fn zero_horizon_is_a_usage_error() {
        let mut c = base();
        c.horizon = Some(0);
        let err = c.resolve().err().unwrap();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn df_defaults_follow_the_horizon_rule() {
        let mut c = base();
        c.algo = Some("df".into());
        c.horizon = Some(100);
        let plan = c.resolve().unwrap();
        let Method::Df { cfg, d0 } = plan.method else { panic!() };
        assert_eq!(cfg.alpha, 0.9);
        assert_eq!(cfg.beta, beta_for_horizon(0.9, 100));
        assert_eq!(d0, 0.0);
    }

    #[test]
    fn practical_only_runs_the_softmax_model() {
        let c = RunConfig {
            algo: Some("df_practical".into()),
            horizon: Some(3),
            ..RunConfig::default()
        };
        assert!(c.resolve().is_ok());
        let mut bad = c.clone();
        bad.problem = Some("ripple".into());
        assert!(bad.resolve().is_err());
        let mut bad = c;
        bad.geometry = Some("linf".into());
        assert!(bad.resolve().is_err());
    }
}
