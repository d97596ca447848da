//! Value functions of the equilibrium: `V(t,x) = e^{r(T-t)}x + M(t)` and
//! `g(t,x) = e^{r(T-t)}x + m(t)`, with `M` and `m` obtained by integrating
//! their ODEs backward from `T` over the per-time optima.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indemnity::IndemnityFunction;
use crate::objective;
use crate::partition::MarketParams;
use crate::solver::{EquilibriumSolution, Problem};

/// Relative tolerance of the grid-halving check.
pub const RICHARDSON_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunctions {
    pub times: Vec<f64>,
    /// `M(t_i)`.
    pub big_m: Vec<f64>,
    /// `m(t_i)`.
    pub small_m: Vec<f64>,
    pub r: f64,
    pub horizon: f64,
}

/// `∫_{t_i}^{t_N} f` for every node of a uniform grid with spacing `h`:
/// composite Simpson, with a 3/8 panel at the front when the number of
/// remaining intervals is odd.
pub fn cumulative_simpson(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    let last = n - 1;
    if n == 2 {
        out[0] = 0.5 * h * (f[0] + f[1]);
        return out;
    }
    // intervals remaining from node i: last - i
    for i in (0..last).rev() {
        let remaining = last - i;
        out[i] = match remaining {
            1 => h / 12.0 * (-f[last - 2] + 8.0 * f[last - 1] + 5.0 * f[last]),
            3 => 3.0 * h / 8.0 * (f[i] + 3.0 * f[i + 1] + 3.0 * f[i + 2] + f[i + 3]),
            r if r % 2 == 0 => out[i + 2] + h / 3.0 * (f[i] + 4.0 * f[i + 1] + f[i + 2]),
            _ => 3.0 * h / 8.0 * (f[i] + 3.0 * f[i + 1] + 3.0 * f[i + 2] + f[i + 3]) + out[i + 3],
        };
    }
    out
}

fn uniform_spacing(times: &[f64]) -> Result<f64> {
    let n = times.len();
    if n < 2 {
        return Err(Error::Discretization("time grid needs at least two nodes".into()));
    }
    let h = (times[n - 1] - times[0]) / (n - 1) as f64;
    for (i, &t) in times.iter().enumerate() {
        if (t - (times[0] + h * i as f64)).abs() > 1e-9 * h.max(1.0) {
            return Err(Error::Discretization("time grid must be uniform".into()));
        }
    }
    Ok(h)
}

/// Integrates `M` and `m` backward from `T` and checks the result against
/// the same rule on every other node.
pub fn solve_value_odes(solution: &EquilibriumSolution, mkt: &MarketParams) -> Result<ValueFunctions> {
    let times = &solution.times;
    let (start, end) = (times[0], times[times.len() - 1]);
    if (end - mkt.horizon).abs() > 1e-12 * mkt.horizon.max(1.0) {
        return Err(Error::Coverage { start, end, needed_start: start, needed_end: mkt.horizon });
    }
    let h = uniform_spacing(times)?;
    let growth = |t: f64| (mkt.r * (mkt.horizon - t)).exp();
    let f_big: Vec<f64> = solution.nodes.iter().map(|n| growth(n.t) * (mkt.premium_rate - n.h)).collect();
    let f_small: Vec<f64> =
        solution.nodes.iter().map(|n| growth(n.t) * (mkt.premium_rate - n.premium - n.retained_mean)).collect();
    let big_m = cumulative_simpson(&f_big, h);
    let small_m = cumulative_simpson(&f_small, h);

    let last = times.len() - 1;
    if last < 4 {
        return Err(Error::Discretization("the refinement check needs at least five time nodes".into()));
    }
    for (f, fine) in [(&f_big, &big_m), (&f_small, &small_m)] {
        // every other node, counted back from T
        let coarse_f: Vec<f64> = (0..=last).rev().step_by(2).collect::<Vec<_>>().into_iter().rev().map(|i| f[i]).collect();
        let coarse = cumulative_simpson(&coarse_f, 2.0 * h);
        let offset = last % 2;
        for (j, c) in coarse.iter().enumerate() {
            let v = fine[offset + 2 * j];
            let gap = (v - c).abs();
            let tolerance = RICHARDSON_TOLERANCE * v.abs().max(1.0);
            if gap > tolerance {
                return Err(Error::GridTooCoarse { disagreement: gap, tolerance });
            }
        }
    }
    Ok(ValueFunctions { times: times.clone(), big_m, small_m, r: mkt.r, horizon: mkt.horizon })
}

impl ValueFunctions {
    fn interpolate(&self, values: &[f64], t: f64) -> f64 {
        let i = self.times.partition_point(|&s| s <= t);
        if i == 0 {
            return values[0];
        }
        if i >= self.times.len() {
            return values[values.len() - 1];
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let w = (t - t0) / (t1 - t0);
        values[i - 1] * (1.0 - w) + values[i] * w
    }

    pub fn big_m_at(&self, t: f64) -> f64 {
        self.interpolate(&self.big_m, t)
    }

    pub fn small_m_at(&self, t: f64) -> f64 {
        self.interpolate(&self.small_m, t)
    }

    fn growth(&self, t: f64) -> f64 {
        (self.r * (self.horizon - t)).exp()
    }

    /// `V(t, x)`, the equilibrium value.
    pub fn value(&self, t: f64, x: f64) -> f64 {
        self.growth(t) * x + self.big_m_at(t)
    }

    /// `g(t, x)`, the expected terminal surplus.
    pub fn expected_wealth(&self, t: f64, x: f64) -> f64 {
        self.growth(t) * x + self.small_m_at(t)
    }

    /// Five-point finite difference of node values at node `i`.
    fn derivative(&self, values: &[f64], i: usize) -> f64 {
        let n = values.len();
        let h = (self.times[n - 1] - self.times[0]) / (n - 1) as f64;
        let v = |k: usize| values[k];
        if n < 5 {
            return if i + 1 < n { (v(i + 1) - v(i)) / h } else { (v(i) - v(i - 1)) / h };
        }
        if i >= 2 && i + 2 < n {
            (-v(i + 2) + 8.0 * v(i + 1) - 8.0 * v(i - 1) + v(i - 2)) / (12.0 * h)
        } else if i < 2 {
            (-25.0 * v(i) + 48.0 * v(i + 1) - 36.0 * v(i + 2) + 16.0 * v(i + 3) - 3.0 * v(i + 4)) / (12.0 * h)
        } else {
            (25.0 * v(i) - 48.0 * v(i - 1) + 36.0 * v(i - 2) - 16.0 * v(i - 3) + 3.0 * v(i - 4)) / (12.0 * h)
        }
    }

    pub fn nearest_node(&self, t: f64) -> usize {
        let i = self.times.partition_point(|&s| s < t);
        if i == 0 {
            0
        } else if i >= self.times.len() {
            self.times.len() - 1
        } else if t - self.times[i - 1] <= self.times[i] - t {
            i - 1
        } else {
            i
        }
    }
}

/// Left-hand sides of the two equations of the extended HJB system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HjbResidual {
    /// Equation for `V` with the quadratic correction in `g`.
    pub value_equation: f64,
    /// Generator of `g` under the contract.
    pub mean_equation: f64,
}

/// Evaluates both equations at `(t, x)` for contract `indemnity`, with the
/// generator applied term by term to `V`, `g²` and `g`. Time derivatives use
/// finite differences of the node values; `t` is snapped to the nearest
/// node.
pub fn hjb_residual(prob: &Problem, values: &ValueFunctions, t: f64, x: f64, indemnity: &IndemnityFunction) -> Result<HjbResidual> {
    let mkt = &prob.market;
    let i = values.nearest_node(t);
    let t = values.times[i];
    let growth = values.growth(t);
    let big_m_dot = values.derivative(&values.big_m, i);
    let small_m_dot = values.derivative(&values.small_m, i);
    let parts = objective::objective_parts(prob, t, indemnity.piecewise())?;
    let retained_mean = parts.retained_mean;
    let retained_sq = parts.retained_second_moment;
    let drift = mkt.premium_rate - parts.premium + mkt.r * x;

    let g = growth * x + values.small_m[i];
    let g_t = -mkt.r * growth * x + small_m_dot;
    let v_t = -mkt.r * growth * x + big_m_dot;
    // E[φ(x - R) - φ(x)] for φ = V, g and g²
    let jump_v = -growth * retained_mean;
    let jump_g = -growth * retained_mean;
    let jump_g2 = -2.0 * g * growth * retained_mean + growth * growth * retained_sq;

    let gen_v = v_t + drift * growth + jump_v;
    let gen_g = g_t + drift * growth + jump_g;
    let gen_g2 = 2.0 * g * g_t + drift * 2.0 * g * growth + jump_g2;
    Ok(HjbResidual { value_equation: gen_v - 0.5 * mkt.gamma * gen_g2 + mkt.gamma * g * gen_g, mean_equation: gen_g })
}
