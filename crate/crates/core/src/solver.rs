//! Equilibrium contracts: closed forms and one-dimensional root problems for
//! the special belief structures, the finite-dimensional search over the
//! parametric optimal family for general likelihood ratios, and the relaxed
//! benchmark without incentive compatibility.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::beliefs::{ClaimDistribution, ClaimKind, DistortionKind, LikelihoodRatio, ReinsurerBelief, TAIL_PROBABILITY};
use crate::error::{Error, Result};
use crate::indemnity::{build_theorem2, check_class_c, saturation_bounds, CurveContext, IndemnityFunction, Theorem2Params, UnconstrainedIndemnity};
use crate::numeric::{self, PatternSearch};
use crate::objective::{self, H_MULTIPLIER};
use crate::partition::{classify_partition, Interval, MarketParams, Partition, SlopeRegime};

/// Residual above which a solution is reported as not certified.
pub const CERTIFICATION_TOLERANCE: f64 = 1e-4;

/// A validated problem instance: beliefs, market and truncation point.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub dist: ClaimDistribution,
    pub belief: ReinsurerBelief,
    pub market: MarketParams,
    /// Truncation point for improper integrals.
    pub y_max: f64,
}

impl Problem {
    pub fn new(dist: ClaimDistribution, belief: ReinsurerBelief, market: MarketParams) -> Result<Self> {
        market.validate()?;
        market.check_net_profit(&dist)?;
        belief.check_consistency(&dist)?;
        let p_cap = dist.tail_truncation();
        let q_cap = belief.upper_quantile_q(&dist, TAIL_PROBABILITY, p_cap)?;
        Ok(Problem { dist, belief, market, y_max: p_cap.max(q_cap) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverTag {
    Homogeneous,
    DecreasingLr,
    ConvexDistortion,
    Var,
    Es,
    ExponentialI,
    ExponentialIi,
    ExponentialIii,
    General,
    Unconstrained,
}

impl SolverTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverTag::Homogeneous => "homogeneous",
            SolverTag::DecreasingLr => "decreasing_lr",
            SolverTag::ConvexDistortion => "convex_distortion",
            SolverTag::Var => "var",
            SolverTag::Es => "es",
            SolverTag::ExponentialI => "exponential_i",
            SolverTag::ExponentialIi => "exponential_ii",
            SolverTag::ExponentialIii => "exponential_iii",
            SolverTag::General => "general",
            SolverTag::Unconstrained => "unconstrained",
        }
    }
}

/// Solver selection; `Auto` picks the most specific applicable solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Auto,
    Homogeneous,
    DecreasingLr,
    ConvexDistortion,
    Var,
    Es,
    Exponential,
    General,
}

/// Parameters of a solved contract; unused entries stay empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub endpoint_values: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub kinks: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticSolution {
    pub t: f64,
    pub tag: SolverTag,
    pub indemnity: IndemnityFunction,
    /// Optimal `H(t, I*)`.
    pub h: f64,
    /// `(1+θ)E^Q[I*]`.
    pub premium: f64,
    /// `E[Y - I*]`.
    pub retained_mean: f64,
    pub params: ParamRecord,
    /// First-order residual, when computed.
    pub residual: Option<f64>,
    pub certified: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

/// Per-time optimal contracts on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    pub times: Vec<f64>,
    pub nodes: Vec<StaticSolution>,
}

impl EquilibriumSolution {
    pub fn from_nodes(nodes: Vec<StaticSolution>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::invalid("time_grid", "needs at least one node"));
        }
        if nodes.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::invalid("time_grid", "must be strictly increasing"));
        }
        Ok(EquilibriumSolution { times: nodes.iter().map(|n| n.t).collect(), nodes })
    }

    pub fn h_values(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.h).collect()
    }

    pub fn certified(&self) -> bool {
        self.nodes.iter().all(|n| n.certified)
    }

    /// Node whose interval `[t_i, t_{i+1})` contains `t`.
    pub fn node_index(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t).saturating_sub(1)
    }
}

/// Options shared by the solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Points of the first-order residual grid; zero skips certification.
    pub residual_grid: usize,
    /// Final pattern-search step (unit-cube coordinates).
    pub search_precision: f64,
    pub multistarts: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { residual_grid: 10_000, search_precision: 1e-10, multistarts: 8 }
    }
}

/// `n` uniform nodes on `[start, end]`.
pub fn uniform_times(start: f64, end: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| if i + 1 == n { end } else { start + (end - start) * i as f64 / (n - 1) as f64 }).collect()
}

/// `d* = θ / (γ e^{r(T-t)})` and the excess-of-loss contract.
pub fn solve_homogeneous(mkt: &MarketParams, t: f64) -> (f64, IndemnityFunction) {
    let d = mkt.theta / mkt.risk_weight(t);
    (d, IndemnityFunction::excess_of_loss(t, d))
}

fn finish(
    prob: &Problem,
    t: f64,
    tag: SolverTag,
    indemnity: IndemnityFunction,
    params: ParamRecord,
    diagnostic: Option<String>,
    opts: &SolveOptions,
) -> Result<StaticSolution> {
    let parts = objective::objective_parts(prob, t, indemnity.piecewise())?;
    let residual = if opts.residual_grid > 0 {
        Some(objective::first_order_residual(prob, t, &indemnity, H_MULTIPLIER, opts.residual_grid)?)
    } else {
        None
    };
    let grid: Vec<f64> = (0..=CLASS_CHECK_POINTS).map(|i| prob.y_max * i as f64 / CLASS_CHECK_POINTS as f64).collect();
    let violation = check_class_c(|y| indemnity.eval(y), &grid);
    let diagnostic = match violation {
        Some(y) => Some(format!("not incentive compatible near y = {y}")),
        None => diagnostic,
    };
    let certified = violation.is_none() && residual.is_none_or(|r| r <= CERTIFICATION_TOLERANCE);
    Ok(StaticSolution {
        t,
        tag,
        indemnity,
        h: parts.h,
        premium: parts.premium,
        retained_mean: parts.retained_mean,
        params,
        residual,
        certified,
        diagnostic,
    })
}

/// Deductible for a nonincreasing likelihood ratio or a convex distortion:
/// the smallest `d` with `1 + kd - (1+θ) S^Q(d)/S(d) >= 0`.
pub fn solve_decreasing_lr(prob: &Problem, t: f64, opts: &SolveOptions) -> Result<StaticSolution> {
    prob.market.check_time(t)?;
    let convex = prob.belief.distortion().is_some_and(|g| g.is_convex());
    if !convex && !prob.belief.lr().is_nonincreasing() {
        return Err(Error::invalid("belief", "needs a nonincreasing likelihood ratio or a convex distortion"));
    }
    let k = prob.market.risk_weight(t);
    let loading = prob.market.loading();
    let bracket = |d: f64| {
        let s = prob.dist.survival(d);
        if s <= 0.0 {
            return 1.0 + k * d;
        }
        let sq = prob.belief.survival_q(&prob.dist, d, prob.y_max).unwrap_or(0.0);
        1.0 + k * d - loading * sq / s
    };
    let (d, diagnostic) = match numeric::first_nonnegative(bracket, 0.0, prob.y_max, 1e-14) {
        Some(d) => (d, None),
        None => (prob.y_max, Some(String::from("no sign change below the truncation point; deductible set to it"))),
    };
    let tag = if convex && prob.belief.lr().is_nonincreasing() && prob.belief.distortion().is_some() {
        SolverTag::ConvexDistortion
    } else {
        SolverTag::DecreasingLr
    };
    let params = ParamRecord { d: Some(d), ..Default::default() };
    finish(prob, t, tag, IndemnityFunction::excess_of_loss(t, d), params, diagnostic, opts)
}

fn distortion_level(prob: &Problem, want: &str) -> Result<(DistortionKind, f64)> {
    let g = prob.belief.distortion().ok_or_else(|| Error::invalid("belief", format!("{want} solver needs a distortion")))?;
    let alpha = g.alpha().ok_or_else(|| Error::invalid("belief", format!("{want} solver needs a level alpha")))?;
    Ok((g.kind(), alpha))
}

/// `θ + F(a) + k(aS(a) - α VaR - ∫_a^{VaR} y dF)`, increasing in `a`.
pub fn var_bracket(dist: &ClaimDistribution, alpha: f64, mkt: &MarketParams, t: f64, a: f64) -> Result<f64> {
    let v = dist.var_alpha(alpha)?;
    let k = mkt.risk_weight(t);
    let mid = dist.partial_moments(a, v)?[1];
    Ok(mkt.theta + dist.cdf(a) + k * (a * dist.survival(a) - alpha * v - mid))
}

/// Dual truncated cover `y ∧ a* + (y - VaR)_+` under a VaR premium.
pub fn solve_var(prob: &Problem, t: f64, opts: &SolveOptions) -> Result<StaticSolution> {
    prob.market.check_time(t)?;
    let (kind, alpha) = distortion_level(prob, "VaR")?;
    if !matches!(kind, DistortionKind::ValueAtRisk { .. }) {
        return Err(Error::invalid("belief", "VaR solver needs a VaR distortion"));
    }
    let v = prob.dist.var_alpha(alpha)?;
    let f = |a: f64| var_bracket(&prob.dist, alpha, &prob.market, t, a).unwrap_or(f64::NAN);
    let a = numeric::first_nonnegative(f, 0.0, v, 1e-14).unwrap_or(v);
    let params = ParamRecord { a: Some(a), b: Some(v), ..Default::default() };
    finish(prob, t, SolverTag::Var, IndemnityFunction::dual_truncated(t, a, v)?, params, None, opts)
}

/// Feasible box of the ES problem: `a ∈ [0, VaR]`,
/// `b ∈ [VaR, max{a + (1+θ)/(α k), VaR}]`.
pub fn es_box(prob: &Problem, alpha: f64, t: f64, a: f64) -> Result<(f64, f64)> {
    let v = prob.dist.var_alpha(alpha)?;
    let k = prob.market.risk_weight(t);
    Ok((v, (a + prob.market.loading() / (alpha * k)).max(v)))
}

/// Grid resolution of the ES search per axis.
pub const ES_GRID: usize = 128;
const CLASS_CHECK_POINTS: usize = 2000;

/// `y ∧ a* + (y - b*)_+` under an ES premium: dense grid over the feasible
/// box followed by a local pattern search.
pub fn solve_es(prob: &Problem, t: f64, opts: &SolveOptions) -> Result<StaticSolution> {
    prob.market.check_time(t)?;
    let (kind, alpha) = distortion_level(prob, "ES")?;
    if !matches!(kind, DistortionKind::ExpectedShortfall { .. }) {
        return Err(Error::invalid("belief", "ES solver needs an ES distortion"));
    }
    let v = prob.dist.var_alpha(alpha)?;
    let decode = |u: &[f64]| -> Result<(f64, f64)> {
        let a = v * u[0];
        let (lo, hi) = es_box(prob, alpha, t, a)?;
        Ok((a, lo + (hi - lo) * u[1]))
    };
    let h_of = |u: &[f64]| -> f64 {
        decode(u)
            .and_then(|(a, b)| IndemnityFunction::dual_truncated(t, a, b))
            .and_then(|f| objective::objective_h(prob, t, f.piecewise()))
            .unwrap_or(f64::INFINITY)
    };
    let mut best = (vec![0.0, 0.0], f64::INFINITY);
    for i in 0..ES_GRID {
        for j in 0..ES_GRID {
            let u = [i as f64 / (ES_GRID - 1) as f64, j as f64 / (ES_GRID - 1) as f64];
            let h = h_of(&u);
            if h < best.1 {
                best = (u.to_vec(), h);
            }
        }
    }
    let refined = numeric::pattern_search(
        h_of,
        &best.0,
        PatternSearch { initial_step: 1.0 / ES_GRID as f64, min_step: opts.search_precision, max_evals: 50_000 },
    );
    let u = if refined.value <= best.1 { refined.x } else { best.0 };
    let (a, b) = decode(&u)?;
    let params = ParamRecord { a: Some(a), b: Some(b), ..Default::default() };
    finish(prob, t, SolverTag::Es, IndemnityFunction::dual_truncated(t, a, b)?, params, None, opts)
}

/// Case split for exponential beliefs with insurer scale `scale_p` and
/// reinsurer scale `scale_q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExponentialCase {
    /// Insurer's claims at least as heavy: excess of loss.
    Deductible,
    /// Reinsurer's claims much heavier: limited cover.
    Limited,
    /// In between: coinsurance band, then full cover, then a cap.
    Mixed,
}

pub fn exponential_case(scale_p: f64, scale_q: f64, mkt: &MarketParams, t: f64) -> ExponentialCase {
    let ratio = scale_p / scale_q;
    let k = mkt.risk_weight(t);
    if ratio >= 1.0 {
        ExponentialCase::Deductible
    } else if ratio <= 1.0 - k * scale_q / mkt.loading() {
        ExponentialCase::Limited
    } else {
        ExponentialCase::Mixed
    }
}

/// Where `LR'` crosses the threshold for exponential beliefs.
pub fn exponential_split(scale_p: f64, scale_q: f64, mkt: &MarketParams, t: f64) -> f64 {
    let c = scale_p * scale_q / (scale_q - scale_p);
    c * (mkt.r * (mkt.horizon - t)) + c * (mkt.gamma * scale_q * scale_q / (mkt.loading() * (scale_q - scale_p))).ln()
}

/// Closed forms and the three-parameter family for exponential beliefs.
pub fn solve_exponential(scale_p: f64, scale_q: f64, mkt: &MarketParams, t: f64, opts: &SolveOptions) -> Result<StaticSolution> {
    let dist = ClaimDistribution::exponential(scale_p)?;
    let belief = ReinsurerBelief::from_lr(LikelihoodRatio::exponential(scale_p, scale_q)?);
    let prob = Problem::new(dist, belief, *mkt)?;
    solve_exponential_in(&prob, scale_p, scale_q, t, opts)
}

fn solve_exponential_in(prob: &Problem, scale_p: f64, scale_q: f64, t: f64, opts: &SolveOptions) -> Result<StaticSolution> {
    let mkt = &prob.market;
    mkt.check_time(t)?;
    let k = mkt.risk_weight(t);
    let loading = mkt.loading();
    match exponential_case(scale_p, scale_q, mkt, t) {
        ExponentialCase::Deductible => {
            let decay = 1.0 / scale_q - 1.0 / scale_p;
            let f = |d: f64| 1.0 + k * d - loading * (-decay * d).exp();
            let d = numeric::first_nonnegative(f, 0.0, mkt.theta / k + 1.0, 1e-15).unwrap_or(0.0);
            let params = ParamRecord { d: Some(d), ..Default::default() };
            finish(prob, t, SolverTag::ExponentialI, IndemnityFunction::excess_of_loss(t, d), params, None, opts)
        }
        ExponentialCase::Limited => {
            let d = if mkt.theta >= k * scale_p {
                0.0
            } else {
                scale_p * scale_q / (scale_q - scale_p) * ((1.0 + k * scale_p) / loading).ln()
            };
            let params = ParamRecord { d: Some(d), ..Default::default() };
            finish(prob, t, SolverTag::ExponentialIi, IndemnityFunction::limited(t, d), params, None, opts)
        }
        ExponentialCase::Mixed => {
            let y1 = exponential_split(scale_p, scale_q, mkt, t);
            let partition = Partition::from_intervals(
                t,
                vec![
                    Interval { lo: 0.0, hi: y1, label: SlopeRegime::Moderate },
                    Interval { lo: y1, hi: f64::INFINITY, label: SlopeRegime::Decreasing },
                ],
            )?;
            let found = parametric_search(prob, &partition, opts)?;
            let params = ParamRecord {
                a: found.params.endpoint_values.first().copied(),
                d: found.params.kinks.get(1).copied().flatten(),
                lambda: Some(found.params.lambda),
                endpoint_values: found.params.endpoint_values.clone(),
                kinks: found.params.kinks.iter().flatten().copied().collect(),
                ..Default::default()
            };
            finish(prob, t, SolverTag::ExponentialIii, found.indemnity, params, None, opts)
        }
    }
}

/// Result of the parametric search on a fixed partition.
#[derive(Debug, Clone)]
pub struct SearchResult {
    pub indemnity: IndemnityFunction,
    pub params: Theorem2Params,
    pub h: f64,
    /// `(λ_min, λ_max)` at the optimum, when a curve band exists.
    pub lambda_range: Option<(f64, f64)>,
}

/// Maps unit-cube coordinates to the parameters of the optimal family on a
/// partition: interior endpoint values first, then one kink per steep or
/// decreasing interval, then `λ` (inside its saturation range).
#[derive(Debug, Clone)]
pub struct FamilyCoordinates<'a> {
    prob: &'a Problem,
    partition: &'a Partition,
    ctx: CurveContext,
    n_endpoints: usize,
    kink_slots: Vec<Option<usize>>,
    lambda_slot: Option<usize>,
}

impl<'a> FamilyCoordinates<'a> {
    pub fn new(prob: &'a Problem, partition: &'a Partition) -> Self {
        let n = partition.intervals.len();
        let mut next = n - 1;
        let mut kink_slots = Vec::with_capacity(n);
        let mut has_band = false;
        for iv in &partition.intervals {
            if iv.label == SlopeRegime::Moderate {
                kink_slots.push(None);
                has_band = true;
            } else {
                kink_slots.push(Some(next));
                next += 1;
            }
        }
        let lambda_slot = if has_band { Some(next) } else { None };
        FamilyCoordinates {
            prob,
            partition,
            ctx: CurveContext::new(prob.belief.lr(), &prob.market, partition.t),
            n_endpoints: n - 1,
            kink_slots,
            lambda_slot,
        }
    }

    pub fn dimension(&self) -> usize {
        self.n_endpoints + self.kink_slots.iter().flatten().count() + usize::from(self.lambda_slot.is_some())
    }

    /// Decodes `u` into parameters and the saturation range of `λ`.
    pub fn decode(&self, u: &[f64]) -> (Theorem2Params, Option<(f64, f64)>) {
        let y_max = self.prob.y_max;
        let n = self.partition.intervals.len();
        let mut endpoint_values = Vec::with_capacity(self.n_endpoints);
        let mut kinks = Vec::with_capacity(n);
        let mut range: Option<(f64, f64)> = None;
        let mut a = 0.0;
        for (i, iv) in self.partition.intervals.iter().enumerate() {
            let terminal = i + 1 == n;
            let (lo, hi) = (iv.lo, iv.hi);
            let b = if terminal { a } else { a + u[i] * (hi - lo) };
            if !terminal {
                endpoint_values.push(b);
            }
            let delta = b - a;
            let kink = self.kink_slots[i].map(|slot| {
                let w = u[slot];
                match (iv.label, terminal) {
                    (_, true) => lo + w * (y_max.max(lo) - lo),
                    (SlopeRegime::Steep, false) => lo + w * (hi - delta - lo),
                    _ => lo + w * delta,
                }
            });
            kinks.push(kink);
            if iv.label == SlopeRegime::Moderate {
                let (lmin, lmax) = saturation_bounds(&self.ctx, lo, hi, a, b, y_max);
                range = Some(match range {
                    None => (lmin, lmax),
                    Some((x, y)) => (x.min(lmin), y.max(lmax)),
                });
            }
            a = b;
        }
        let lambda = match (self.lambda_slot, range) {
            (Some(slot), Some((lmin, lmax))) => lmin + u[slot] * (lmax - lmin),
            _ => H_MULTIPLIER,
        };
        (Theorem2Params { endpoint_values, kinks, lambda }, range)
    }

    /// Unit coordinate that decodes to `λ` given the other coordinates.
    pub fn lambda_coordinate(&self, u: &[f64], lambda: f64) -> Option<f64> {
        let slot = self.lambda_slot?;
        let (_, range) = self.decode(u);
        let (lmin, lmax) = range?;
        let _ = slot;
        if lmax > lmin {
            Some(((lambda - lmin) / (lmax - lmin)).clamp(0.0, 1.0))
        } else {
            Some(0.5)
        }
    }

    pub fn lambda_slot(&self) -> Option<usize> {
        self.lambda_slot
    }

    pub fn objective(&self, u: &[f64]) -> f64 {
        let (params, _) = self.decode(u);
        build_theorem2(self.partition, &params, self.prob.belief.lr(), &self.prob.market, self.prob.y_max)
            .and_then(|f| objective::objective_h(self.prob, self.partition.t, f.piecewise()))
            .unwrap_or(f64::INFINITY)
    }
}

/// Multi-start pattern search over the parametric family on `partition`.
pub fn parametric_search(prob: &Problem, partition: &Partition, opts: &SolveOptions) -> Result<SearchResult> {
    let coords = FamilyCoordinates::new(prob, partition);
    let dim = coords.dimension();
    let mut starts: Vec<Vec<f64>> = Vec::new();
    let mut centre = vec![0.5; dim];
    if let (Some(slot), Some(c)) = (coords.lambda_slot(), coords.lambda_coordinate(&centre, H_MULTIPLIER)) {
        centre[slot] = c;
    }
    starts.push(centre);
    const BASES: [u64; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29];
    for i in 1..opts.multistarts.max(1) as u64 {
        starts.push((0..dim).map(|j| numeric::halton(i, BASES[j % BASES.len()])).collect());
    }
    let coarse = PatternSearch { initial_step: 0.125, min_step: 1e-6, max_evals: 20_000 };
    let mut best: Option<numeric::SearchOutcome> = None;
    for s in &starts {
        let out = numeric::pattern_search(|u| coords.objective(u), s, coarse);
        if best.as_ref().is_none_or(|b| out.value < b.value) {
            best = Some(out);
        }
    }
    let mut best = best.expect("at least one start");
    let fine = PatternSearch { initial_step: 0.125, min_step: opts.search_precision, max_evals: 200_000 };
    loop {
        let out = numeric::pattern_search(|u| coords.objective(u), &best.x, fine);
        if out.value < best.value {
            best = out;
        } else {
            break;
        }
    }
    let (params, lambda_range) = coords.decode(&best.x);
    let indemnity = build_theorem2(partition, &params, prob.belief.lr(), &prob.market, prob.y_max)?;
    Ok(SearchResult { indemnity, params, h: best.value, lambda_range })
}

/// Partition, then search the parametric family.
pub fn solve_general(prob: &Problem, t: f64, opts: &SolveOptions) -> Result<StaticSolution> {
    prob.market.check_time(t)?;
    let partition = classify_partition(prob.belief.lr(), &prob.market, t, prob.y_max)?;
    let found = parametric_search(prob, &partition, opts)?;
    let params = ParamRecord {
        lambda: found.lambda_range.map(|_| found.params.lambda),
        endpoint_values: found.params.endpoint_values.clone(),
        kinks: found.params.kinks.iter().flatten().copied().collect(),
        ..Default::default()
    };
    finish(prob, t, SolverTag::General, found.indemnity, params, None, opts)
}

/// Relaxed optimum `min{y, max{0, φ_λ}}` with `λ` chosen by golden section.
#[derive(Debug, Clone)]
pub struct UnconstrainedSolution {
    pub t: f64,
    pub indemnity: UnconstrainedIndemnity,
    pub lambda: f64,
    pub h: f64,
}

pub fn solve_unconstrained(prob: &Problem, t: f64) -> Result<UnconstrainedSolution> {
    prob.market.check_time(t)?;
    let lr = prob.belief.lr();
    let k = prob.market.risk_weight(t);
    let lo = -k * prob.y_max;
    let hi = prob.market.loading() * lr.sup_on(0.0, prob.y_max) + 1.0;
    let h_of = |lambda: f64| {
        UnconstrainedIndemnity::clipped_phi(lr, &prob.market, t, lambda, prob.y_max)
            .and_then(|f| objective::objective_h(prob, t, f.piecewise()))
            .unwrap_or(f64::INFINITY)
    };
    let (lambda, h) = numeric::golden_section(h_of, lo, hi, 1e-10);
    let indemnity = UnconstrainedIndemnity::clipped_phi(lr, &prob.market, t, lambda, prob.y_max)?;
    Ok(UnconstrainedSolution { t, indemnity, lambda, h })
}

/// Recovers `(scale_p, scale_q)` when both beliefs are exponential.
pub fn exponential_scales(prob: &Problem) -> Option<(f64, f64)> {
    let ClaimKind::Exponential { scale } = prob.dist.kind() else { return None };
    if prob.dist.atom_at_zero() != 0.0 || prob.belief.distortion().is_some() {
        return None;
    }
    let lr = prob.belief.lr();
    if lr.pieces().len() != 1 || lr.singular_atom().is_some() {
        return None;
    }
    let piece = lr.pieces()[0];
    let inv_q = 1.0 / scale - piece.rate;
    if !(inv_q > 0.0) {
        return None;
    }
    let scale_q = 1.0 / inv_q;
    ((piece.coef - scale / scale_q).abs() <= 1e-12 * piece.coef.max(1.0)).then_some((scale, scale_q))
}

/// Dispatches one time node.
pub fn solve_static(prob: &Problem, method: Method, t: f64, opts: &SolveOptions) -> Result<StaticSolution> {
    let method = match method {
        Method::Auto => auto_method(prob),
        m => m,
    };
    match method {
        Method::Homogeneous => {
            if !prob.belief.lr().is_identity() {
                return Err(Error::invalid("solver", "homogeneous solver needs identical beliefs"));
            }
            prob.market.check_time(t)?;
            let (d, f) = solve_homogeneous(&prob.market, t);
            finish(prob, t, SolverTag::Homogeneous, f, ParamRecord { d: Some(d), ..Default::default() }, None, opts)
        }
        Method::DecreasingLr | Method::ConvexDistortion => solve_decreasing_lr(prob, t, opts),
        Method::Var => solve_var(prob, t, opts),
        Method::Es => solve_es(prob, t, opts),
        Method::Exponential => {
            let (p, q) = exponential_scales(prob)
                .ok_or_else(|| Error::invalid("solver", "exponential solver needs exponential beliefs"))?;
            solve_exponential_in(prob, p, q, t, opts)
        }
        Method::General | Method::Auto => solve_general(prob, t, opts),
    }
}

pub fn auto_method(prob: &Problem) -> Method {
    let lr = prob.belief.lr();
    if lr.is_identity() {
        return Method::Homogeneous;
    }
    if let Some(g) = prob.belief.distortion() {
        match g.kind() {
            DistortionKind::ValueAtRisk { .. } => return Method::Var,
            DistortionKind::ExpectedShortfall { .. } => return Method::Es,
            _ if g.is_convex() => return Method::ConvexDistortion,
            _ => {}
        }
    }
    if exponential_scales(prob).is_some() {
        return Method::Exponential;
    }
    if lr.is_nonincreasing() {
        return Method::DecreasingLr;
    }
    Method::General
}

/// Solves every node of `times` in order.
pub fn solve_equilibrium(prob: &Problem, method: Method, times: &[f64], opts: &SolveOptions) -> Result<EquilibriumSolution> {
    let nodes = times.iter().map(|&t| solve_static(prob, method, t, opts)).collect::<Result<Vec<_>>>()?;
    EquilibriumSolution::from_nodes(nodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beliefs::DistortionFunction;
    use crate::indemnity::check_class_c;

    fn market(gamma: f64, theta: f64, r: f64) -> MarketParams {
        MarketParams { gamma, theta, r, horizon: 10.0, premium_rate: 3.0, initial_surplus: 10.0 }
    }

    fn quick() -> SolveOptions {
        SolveOptions { residual_grid: 2000, ..Default::default() }
    }

    #[test]
    fn homogeneous_closed_form() {
        assert_eq!(solve_homogeneous(&market(1.0, 0.2, 0.0), 3.0).0, 0.2);
        assert!((solve_homogeneous(&market(1.0, 0.35, 0.1), 10.0).0 - 0.35).abs() < 1e-15);
        assert!((solve_homogeneous(&market(1.0, 0.35, 0.1), 0.0).0 - 0.128758).abs() < 1e-6);
    }

    #[test]
    fn net_profit_condition_is_enforced() {
        let mut m = market(1.0, 0.2, 0.0);
        m.premium_rate = 1.0;
        let err = Problem::new(ClaimDistribution::exponential(1.0).unwrap(), ReinsurerBelief::homogeneous(), m);
        assert!(matches!(err, Err(Error::NetProfit { .. })));
    }

    #[test]
    fn identity_distortion_reproduces_homogeneous_deductible() {
        let one = ClaimDistribution::exponential(1.0).unwrap();
        let p = Problem::new(one, ReinsurerBelief::from_distortion(&one, DistortionFunction::identity()).unwrap(), market(1.0, 0.2, 0.1)).unwrap();
        let s = solve_decreasing_lr(&p, 4.0, &quick()).unwrap();
        assert!((s.params.d.unwrap() - solve_homogeneous(&p.market, 4.0).0).abs() < 1e-12);
    }

    #[test]
    fn decreasing_ratio_deductible_root() {
        let m = market(1.0, 0.35, 0.1);
        let s = solve_exponential(2.0, 1.0, &m, 10.0, &quick()).unwrap();
        assert_eq!(s.tag, SolverTag::ExponentialI);
        let d = s.params.d.unwrap();
        assert!((1.0 + d - 1.35 * (-0.5 * d).exp()).abs() < 1e-12);
        assert!((d - 0.2134).abs() < 5e-4);
        let dist = ClaimDistribution::exponential(2.0).unwrap();
        let p = Problem::new(dist, ReinsurerBelief::from_lr(LikelihoodRatio::exponential(2.0, 1.0).unwrap()), m).unwrap();
        let g = solve_decreasing_lr(&p, 10.0, &quick()).unwrap();
        assert!((g.params.d.unwrap() - d).abs() < 1e-10);
        assert!(g.certified, "residual {:?}", g.residual);
    }

    #[test]
    fn convex_distortion_deductible_below_homogeneous() {
        let one = ClaimDistribution::exponential(1.0).unwrap();
        let m = market(1.0, 0.3, 0.1);
        let p = Problem::new(one, ReinsurerBelief::from_distortion(&one, DistortionFunction::power(1.5).unwrap()).unwrap(), m).unwrap();
        let mut prev = -1.0;
        for t in [0.0, 2.5, 5.0, 7.5, 10.0] {
            let s = solve_static(&p, Method::Auto, t, &quick()).unwrap();
            assert_eq!(s.tag, SolverTag::ConvexDistortion);
            let d = s.params.d.unwrap();
            assert!(d <= solve_homogeneous(&m, t).0 + 1e-12);
            assert!(d >= prev);
            prev = d;
        }
    }

    #[test]
    fn limited_case_closed_form() {
        let m = market(0.1, 0.05, 0.1);
        let s = solve_exponential(0.5, 1.0, &m, 0.0, &quick()).unwrap();
        assert_eq!(s.tag, SolverTag::ExponentialIi);
        assert!((s.params.d.unwrap() - 0.078649).abs() < 1e-5);
        let s = solve_exponential(0.5, 1.0, &m, 10.0, &quick()).unwrap();
        assert_eq!(s.params.d.unwrap(), 0.0);
    }

    #[test]
    fn var_threshold_rule() {
        let one = ClaimDistribution::exponential(1.0).unwrap();
        let belief = ReinsurerBelief::from_distortion(&one, DistortionFunction::value_at_risk(0.1).unwrap()).unwrap();
        let p = Problem::new(one, belief.clone(), market(0.1, 0.1, 0.0)).unwrap();
        assert_eq!(solve_var(&p, 5.0, &quick()).unwrap().params.a.unwrap(), 0.0);
        let p = Problem::new(one, belief, market(1.0, 0.1, 0.0)).unwrap();
        let s = solve_var(&p, 5.0, &quick()).unwrap();
        let a = s.params.a.unwrap();
        assert!(a > 0.0 && a < 10f64.ln());
        assert!(var_bracket(&one, 0.1, &p.market, 5.0, a).unwrap().abs() < 1e-10);
    }

    #[test]
    fn unconstrained_matches_constrained_when_homogeneous() {
        let p = Problem::new(ClaimDistribution::exponential(1.0).unwrap(), ReinsurerBelief::homogeneous(), market(1.0, 0.2, 0.1)).unwrap();
        let u = solve_unconstrained(&p, 3.0).unwrap();
        let (d, f) = solve_homogeneous(&p.market, 3.0);
        for i in 0..200 {
            let y = 0.05 * i as f64;
            assert!((u.indemnity.eval(y) - f.eval(y)).abs() < 1e-6, "y={y} d={d}");
        }
        assert!((u.lambda - 1.0).abs() < 1e-6);
    }

    #[test]
    fn general_search_on_mixed_exponential_case() {
        let m = market(0.5, 0.35, 0.1);
        let dist = ClaimDistribution::exponential(1.5).unwrap();
        let p = Problem::new(dist, ReinsurerBelief::from_lr(LikelihoodRatio::exponential(1.5, 2.0).unwrap()), m).unwrap();
        let g = solve_general(&p, 5.0, &quick()).unwrap();
        let e = solve_exponential(1.5, 2.0, &m, 5.0, &quick()).unwrap();
        assert!((g.h - e.h).abs() < 1e-8, "{} vs {}", g.h, e.h);
        assert!(g.certified, "residual {:?}", g.residual);
        let grid: Vec<f64> = (0..=10_000).map(|i| p.y_max * i as f64 / 10_000.0).collect();
        assert_eq!(check_class_c(|y| g.indemnity.eval(y), &grid), None);
    }
}
