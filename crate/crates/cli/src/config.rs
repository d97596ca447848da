//! TOML run configuration.

use std::path::Path;

use mvreins_core::beliefs::{ClaimDistribution, DistortionFunction, LikelihoodRatio, LrPiece, ReinsurerBelief};
use mvreins_core::partition::MarketParams;
use mvreins_core::solver::{Method, Problem, SolveOptions};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub distribution: DistributionConfig,
    #[serde(default)]
    pub reinsurer: ReinsurerConfig,
    pub market: MarketConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionConfig {
    Exponential {
        scale: f64,
        #[serde(default)]
        atom_at_zero: f64,
    },
    Weibull {
        scale: f64,
        shape: f64,
        #[serde(default)]
        atom_at_zero: f64,
    },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceConfig {
    pub start: f64,
    pub coef: f64,
    #[serde(default)]
    pub rate: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReinsurerConfig {
    #[default]
    Homogeneous,
    /// Exponential claims with scale `scale` (insurer must be exponential).
    Exponential { scale: f64 },
    /// `LR(y) = coef·e^{rate·y}` on `[start, next start)`.
    Piecewise { pieces: Vec<PieceConfig> },
    /// Distortion `g(u) = u^exponent`.
    Power { exponent: f64 },
    Var { alpha: f64 },
    Es { alpha: f64 },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub gamma: f64,
    pub theta: f64,
    pub r: f64,
    pub horizon: f64,
    pub premium_rate: f64,
    #[serde(default)]
    pub initial_surplus: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Method,
    pub residual_grid: usize,
    pub multistarts: usize,
    pub search_precision: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolveOptions::default();
        SolverConfig { method: Method::Auto, residual_grid: d.residual_grid, multistarts: d.multistarts, search_precision: d.search_precision }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub start: f64,
    pub nodes: usize,
    /// Time used by the single-time subcommands; defaults to mid-horizon.
    pub at: Option<f64>,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig { start: 0.0, nodes: 101, at: None }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub cells: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { cells: 2000 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub paths: usize,
    pub seed: u64,
    pub t0: Option<f64>,
    pub x0: Option<f64>,
    /// `equilibrium`, a solver method name, or a path to a solution file.
    pub strategy: String,
    /// Time nodes of the strategy; falls back to `time.nodes`.
    pub nodes: Option<usize>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { paths: 100_000, seed: 0, t0: None, x0: None, strategy: "equilibrium".into(), nodes: None }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Points of the claim grid in `compare` output.
    pub y_points: usize,
    /// Right end of that grid; defaults to the 0.999 quantile.
    pub y_range: Option<f64>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { y_points: 501, y_range: None }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(config_err)
    }

    pub fn market(&self) -> MarketParams {
        let m = self.market;
        MarketParams {
            gamma: m.gamma,
            theta: m.theta,
            r: m.r,
            horizon: m.horizon,
            premium_rate: m.premium_rate,
            initial_surplus: m.initial_surplus,
        }
    }

    pub fn distribution(&self) -> Result<ClaimDistribution, CliError> {
        let (dist, atom) = match self.distribution {
            DistributionConfig::Exponential { scale, atom_at_zero } => (ClaimDistribution::exponential(scale), atom_at_zero),
            DistributionConfig::Weibull { scale, shape, atom_at_zero } => (ClaimDistribution::weibull(scale, shape), atom_at_zero),
        };
        let dist = dist.map_err(config_err)?;
        if atom == 0.0 {
            Ok(dist)
        } else {
            dist.with_atom_at_zero(atom).map_err(config_err)
        }
    }

    pub fn belief(&self, dist: &ClaimDistribution) -> Result<ReinsurerBelief, CliError> {
        let belief = match &self.reinsurer {
            ReinsurerConfig::Homogeneous => Ok(ReinsurerBelief::homogeneous()),
            ReinsurerConfig::Exponential { scale } => {
                let DistributionConfig::Exponential { scale: scale_p, atom_at_zero } = self.distribution else {
                    return Err(CliError::Config("an exponential reinsurer needs exponential claims".into()));
                };
                if atom_at_zero != 0.0 {
                    return Err(CliError::Config("an exponential reinsurer needs claims without an atom at zero".into()));
                }
                LikelihoodRatio::exponential(scale_p, *scale).map(ReinsurerBelief::from_lr)
            }
            ReinsurerConfig::Piecewise { pieces } => {
                let pieces = pieces.iter().map(|p| LrPiece { start: p.start, coef: p.coef, rate: p.rate }).collect();
                LikelihoodRatio::new(pieces).map(ReinsurerBelief::from_lr)
            }
            ReinsurerConfig::Power { exponent } => {
                DistortionFunction::power(*exponent).and_then(|g| ReinsurerBelief::from_distortion(dist, g))
            }
            ReinsurerConfig::Var { alpha } => {
                DistortionFunction::value_at_risk(*alpha).and_then(|g| ReinsurerBelief::from_distortion(dist, g))
            }
            ReinsurerConfig::Es { alpha } => {
                DistortionFunction::expected_shortfall(*alpha).and_then(|g| ReinsurerBelief::from_distortion(dist, g))
            }
        };
        belief.map_err(config_err)
    }

    /// Validated problem; every parameter check happens here, before any
    /// output is written.
    pub fn problem(&self) -> Result<Problem, CliError> {
        let dist = self.distribution()?;
        let belief = self.belief(&dist)?;
        let problem = Problem::new(dist, belief, self.market()).map_err(config_err)?;
        let t = self.at();
        if !(self.time.start >= 0.0 && self.time.start < problem.market.horizon) {
            return Err(CliError::Config(format!("time.start must lie in [0, {})", problem.market.horizon)));
        }
        if !(t >= 0.0 && t <= problem.market.horizon) {
            return Err(CliError::Config(format!("time.at must lie in [0, {}]", problem.market.horizon)));
        }
        if self.time.nodes < 2 {
            return Err(CliError::Config("time.nodes must be at least 2".into()));
        }
        Ok(problem)
    }

    pub fn at(&self) -> f64 {
        self.time.at.unwrap_or(0.5 * self.market.horizon)
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            residual_grid: self.solver.residual_grid,
            search_precision: self.solver.search_precision,
            multistarts: self.solver.multistarts,
        }
    }
}
