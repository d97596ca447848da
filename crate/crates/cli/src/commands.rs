//! Subcommand drivers.

use std::path::{Path, PathBuf};

use mvreins_core::hjb::{solve_value_odes, ValueFunctions};
use mvreins_core::indemnity::check_class_c;
use mvreins_core::oracle::oracle_solve;
use mvreins_core::partition::classify_partition;
use mvreins_core::simulate::{estimate_objective, Schedule, SimConfig, Simulator};
use mvreins_core::solver::{
    solve_homogeneous, solve_static, solve_unconstrained, uniform_times, EquilibriumSolution, Method, Problem, SolveOptions,
    StaticSolution,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{num, opt_num, OutDir};

/// Largest accepted `|H_param - H_oracle|` in the certification report.
pub const ORACLE_GAP_TOLERANCE: f64 = 1e-3;
const CLASS_CHECK_POINTS: usize = 2001;

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub grid: Option<usize>,
    pub with_oracle: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct SimulateArgs {
    pub paths: Option<usize>,
    pub t0: Option<f64>,
    pub x0: Option<f64>,
    pub strategy: Option<String>,
}

#[derive(Debug)]
pub struct Context {
    pub config: RunConfig,
    pub problem: Problem,
    pub out: OutDir,
    pub overrides: Overrides,
}

impl Context {
    pub fn new(config_path: &Path, out: &Path, overrides: Overrides) -> Result<Self, CliError> {
        let config = RunConfig::load(config_path)?;
        let problem = config.problem()?;
        if overrides.grid.is_some_and(|n| n < 2) {
            return Err(CliError::Config("--grid needs at least 2 nodes".into()));
        }
        if overrides.with_oracle.is_some_and(|n| n < mvreins_core::oracle::MIN_CELLS) {
            return Err(CliError::Config(format!("--with-oracle needs at least {} cells", mvreins_core::oracle::MIN_CELLS)));
        }
        Ok(Context { config, problem, out: OutDir::new(out), overrides })
    }

    fn times_with(&self, nodes: usize) -> Vec<f64> {
        uniform_times(self.config.time.start, self.problem.market.horizon, nodes)
    }

    fn times(&self) -> Vec<f64> {
        self.times_with(self.overrides.grid.unwrap_or(self.config.time.nodes))
    }

    fn solve_nodes(&self, times: &[f64], opts: &SolveOptions) -> Vec<Result<StaticSolution, mvreins_core::Error>> {
        let method = self.config.solver.method;
        times.par_iter().map(|&t| solve_static(&self.problem, method, t, opts)).collect()
    }

    fn equilibrium(&self, times: &[f64], opts: &SolveOptions) -> Result<EquilibriumSolution, CliError> {
        let nodes = self.solve_nodes(times, opts).into_iter().collect::<Result<Vec<_>, _>>()?;
        Ok(EquilibriumSolution::from_nodes(nodes)?)
    }

    fn class_grid(&self) -> Vec<f64> {
        let y_max = self.problem.y_max;
        (0..CLASS_CHECK_POINTS).map(|i| y_max * i as f64 / (CLASS_CHECK_POINTS - 1) as f64).collect()
    }
}

#[derive(Debug, Serialize)]
struct NodeReport {
    t: f64,
    tag: &'static str,
    h: f64,
    residual: Option<f64>,
    certified: bool,
    class_c: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    class_c_violation: Option<f64>,
}

#[derive(Debug, Serialize)]
struct OracleReport {
    t: f64,
    cells: usize,
    h_param: f64,
    h_oracle: f64,
    gap: f64,
    sup_distance: f64,
    grid_step: f64,
    converged: bool,
    iterations: usize,
    pass: bool,
}

#[derive(Debug, Serialize)]
struct CertificationReport {
    status: &'static str,
    nodes: Vec<NodeReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    value_error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<OracleReport>,
}

fn value_rows(v: &ValueFunctions) -> Vec<Vec<String>> {
    v.times.iter().zip(&v.big_m).zip(&v.small_m).map(|((&t, &a), &b)| vec![num(t), num(a), num(b)]).collect()
}

fn oracle_report(ctx: &Context, cells: usize) -> Result<OracleReport, CliError> {
    let t = ctx.config.at();
    let param = solve_static(&ctx.problem, ctx.config.solver.method, t, &ctx.config.solve_options())?;
    let oracle = oracle_solve(&ctx.problem, t, cells)?;
    let sup_distance =
        oracle.marginal.grid.iter().map(|&y| (oracle.marginal.eval(y) - param.indemnity.eval(y)).abs()).fold(0.0, f64::max);
    let gap = (param.h - oracle.h).abs();
    Ok(OracleReport {
        t,
        cells,
        h_param: param.h,
        h_oracle: oracle.h,
        gap,
        sup_distance,
        grid_step: ctx.problem.y_max / cells as f64,
        converged: oracle.converged,
        iterations: oracle.iterations,
        pass: gap <= ORACLE_GAP_TOLERANCE,
    })
}

pub fn run_solve(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let times = ctx.times();
    let solution = ctx.equilibrium(&times, &ctx.config.solve_options())?;
    let mut written = vec![ctx.out.json("solution.json", &solution)?];
    let (values, value_error) = match solve_value_odes(&solution, &ctx.problem.market) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    if let Some(v) = &values {
        written.push(ctx.out.csv("value.csv", &["t", "M", "m"], &value_rows(v))?);
    }
    let grid = ctx.class_grid();
    let nodes: Vec<NodeReport> = solution
        .nodes
        .iter()
        .map(|n| {
            let violation = check_class_c(|y| n.indemnity.eval(y), &grid);
            NodeReport {
                t: n.t,
                tag: n.tag.as_str(),
                h: n.h,
                residual: n.residual,
                certified: n.certified,
                class_c: violation.is_none(),
                class_c_violation: violation,
            }
        })
        .collect();
    let oracle = ctx.overrides.with_oracle.map(|cells| oracle_report(ctx, cells)).transpose()?;
    let pass = value_error.is_none()
        && nodes.iter().all(|n| n.certified && n.class_c)
        && oracle.as_ref().is_none_or(|o| o.pass);
    let report = CertificationReport { status: if pass { "PASS" } else { "FAIL" }, nodes, value_error, oracle };
    written.push(ctx.out.json("certification.json", &report)?);
    if !pass {
        return Err(CliError::NotCertified("see certification.json".into()));
    }
    Ok(written)
}

#[derive(Debug, Serialize)]
struct PartitionRow {
    t: f64,
    breakpoints: Vec<f64>,
    labels: Vec<u8>,
}

pub fn run_partition(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let lr = ctx.problem.belief.lr();
    if lr.singular_atom().is_some() {
        return Err(CliError::Config("partition needs a finite likelihood ratio".into()));
    }
    let rows = ctx
        .times()
        .par_iter()
        .map(|&t| {
            classify_partition(lr, &ctx.problem.market, t, ctx.problem.y_max)
                .map(|p| PartitionRow { t, breakpoints: p.breakpoints(), labels: p.labels() })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(vec![ctx.out.json("partition.json", &rows)?])
}

#[derive(Debug, Serialize)]
struct OracleSummary {
    t: f64,
    cells: usize,
    h: f64,
    iterations: usize,
    converged: bool,
    gradient_norm: f64,
}

pub fn run_oracle(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let t = ctx.config.at();
    let cells = ctx.overrides.with_oracle.unwrap_or(ctx.config.oracle.cells);
    let sol = oracle_solve(&ctx.problem, t, cells)?;
    let values = sol.marginal.values();
    let rows: Vec<Vec<String>> = sol.marginal.grid.iter().zip(&values).map(|(&y, &v)| vec![num(y), num(v)]).collect();
    let summary = OracleSummary {
        t,
        cells,
        h: sol.h,
        iterations: sol.iterations,
        converged: sol.converged,
        gradient_norm: sol.gradient_norm,
    };
    Ok(vec![ctx.out.csv("oracle.csv", &["y", "I"], &rows)?, ctx.out.json("oracle.json", &summary)?])
}

#[derive(Debug, Serialize)]
struct SimulateSummary {
    strategy: String,
    paths: usize,
    seed: u64,
    t0: f64,
    x0: f64,
    mean: f64,
    var: f64,
    #[serde(rename = "J")]
    j: f64,
    se: f64,
    se_mean: f64,
    #[serde(rename = "V", skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
    #[serde(rename = "g", skip_serializing_if = "Option::is_none")]
    expected_wealth: Option<f64>,
}

fn parse_method(name: &str) -> Option<Method> {
    serde_json::from_value(serde_json::Value::String(name.to_owned())).ok()
}

pub fn run_simulate(ctx: &Context, args: &SimulateArgs) -> Result<Vec<PathBuf>, CliError> {
    let sc = &ctx.config.simulate;
    let paths = args.paths.unwrap_or(sc.paths);
    let seed = ctx.overrides.seed.unwrap_or(sc.seed);
    let t0 = args.t0.or(sc.t0).unwrap_or(ctx.config.at());
    let x0 = args.x0.or(sc.x0).unwrap_or(ctx.problem.market.initial_surplus);
    let strategy = args.strategy.clone().unwrap_or_else(|| sc.strategy.clone());
    if paths < 2 {
        return Err(CliError::Config("simulate needs at least 2 paths".into()));
    }
    if !(t0 >= ctx.config.time.start && t0 < ctx.problem.market.horizon) {
        return Err(CliError::Config("t0 must lie in [time.start, horizon)".into()));
    }
    let method = if strategy == "equilibrium" { Some(ctx.config.solver.method) } else { parse_method(&strategy) };
    let solution = match method {
        Some(method) => {
            let nodes = sc.nodes.or(ctx.overrides.grid).unwrap_or(ctx.config.time.nodes);
            let opts = SolveOptions { residual_grid: 0, ..ctx.config.solve_options() };
            let times = ctx.times_with(nodes);
            let nodes = times
                .par_iter()
                .map(|&t| solve_static(&ctx.problem, method, t, &opts))
                .collect::<Result<Vec<_>, _>>()?;
            EquilibriumSolution::from_nodes(nodes)?
        }
        None => {
            let text = std::fs::read_to_string(&strategy)
                .map_err(|e| CliError::Config(format!("strategy `{strategy}` is neither a solver name nor a readable file: {e}")))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("strategy file `{strategy}`: {e}")))?
        }
    };
    let values = solve_value_odes(&solution, &ctx.problem.market).ok();
    let sim = Simulator::new(&ctx.problem, Schedule::from_solution(&solution), t0)?;
    let cfg = SimConfig { t0, x0, paths, seed };
    let samples: Vec<f64> = (0..paths as u64).into_par_iter().map(|i| sim.path(&cfg, i)).collect();
    let est = estimate_objective(&samples, ctx.problem.market.gamma)?;
    let summary = SimulateSummary {
        strategy,
        paths,
        seed,
        t0,
        x0,
        mean: est.mean,
        var: est.var,
        j: est.j,
        se: est.se,
        se_mean: est.se_mean,
        value: values.as_ref().map(|v| v.value(t0, x0)),
        expected_wealth: values.as_ref().map(|v| v.expected_wealth(t0, x0)),
    };
    Ok(vec![ctx.out.json("simulate.json", &summary)?])
}

pub fn run_value(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let opts = SolveOptions { residual_grid: 0, ..ctx.config.solve_options() };
    let solution = ctx.equilibrium(&ctx.times(), &opts)?;
    let values = solve_value_odes(&solution, &ctx.problem.market)?;
    Ok(vec![ctx.out.csv("value.csv", &["t", "M", "m"], &value_rows(&values))?])
}

pub fn run_compare(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let t = ctx.config.at();
    let full = solve_static(&ctx.problem, ctx.config.solver.method, t, &ctx.config.solve_options())?;
    let (_, homog) = solve_homogeneous(&ctx.problem.market, t);
    let relaxed = solve_unconstrained(&ctx.problem, t)?;
    let out = &ctx.config.output;
    let y_range = out.y_range.unwrap_or_else(|| ctx.problem.dist.quantile(0.999));
    let n = out.y_points.max(2);
    let rows: Vec<Vec<String>> = (0..n)
        .map(|i| {
            let y = y_range * i as f64 / (n - 1) as f64;
            vec![num(y), num(full.indemnity.eval(y)), num(homog.eval(y)), num(relaxed.indemnity.eval(y))]
        })
        .collect();
    let path = ctx.out.csv("compare.csv", &["y", "I_full", "I_homog", "I_noIC"], &rows)?;
    if !full.certified {
        return Err(CliError::NotCertified(format!("full model at t = {t}: residual {}", opt_num(full.residual))));
    }
    Ok(vec![path])
}

fn join(v: &[f64]) -> String {
    v.iter().map(|&x| num(x)).collect::<Vec<_>>().join(";")
}

pub fn run_sweep(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let times = ctx.times();
    let results = ctx.solve_nodes(&times, &ctx.config.solve_options());
    let mut flagged = 0;
    let rows: Vec<Vec<String>> = times
        .iter()
        .zip(&results)
        .map(|(&t, r)| match r {
            Ok(s) => {
                if !s.certified {
                    flagged += 1;
                }
                let p = &s.params;
                vec![
                    num(t),
                    s.tag.as_str().into(),
                    opt_num(p.d),
                    opt_num(p.a),
                    opt_num(p.b),
                    opt_num(p.lambda),
                    join(&p.endpoint_values),
                    join(&p.kinks),
                    num(s.h),
                    opt_num(s.residual),
                    s.certified.to_string(),
                    String::new(),
                ]
            }
            Err(e) => {
                flagged += 1;
                let mut row = vec![num(t)];
                row.extend(std::iter::repeat_n(String::new(), 9));
                row.push("false".into());
                row.push(e.to_string().replace(',', ";"));
                row
            }
        })
        .collect();
    let header = ["t", "tag", "d", "a", "b", "lambda", "endpoint_values", "kinks", "H", "residual", "certified", "error"];
    let path = ctx.out.csv("sweep.csv", &header, &rows)?;
    if flagged > 0 {
        return Err(CliError::NotCertified(format!("{flagged} sweep nodes flagged")));
    }
    Ok(vec![path])
}
