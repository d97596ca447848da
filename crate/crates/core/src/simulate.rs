//! Monte Carlo for the controlled surplus
//! `dX = (c - c(I) + rX) dt - d(Σ Y_i - I(τ_i, Y_i))` under the insurer's
//! belief, with unit claim intensity. Every path draws from its own ChaCha
//! stream, so results do not depend on how paths are split across workers.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::beliefs::ClaimDistribution;
use crate::error::{Error, Result};
use crate::indemnity::IndemnityFunction;
use crate::objective;
use crate::solver::{EquilibriumSolution, Problem};

/// Contracts and premium rates, piecewise constant from each node onward.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub times: Vec<f64>,
    pub contracts: Vec<IndemnityFunction>,
    /// `(1+θ) E^Q[I]` per node.
    pub premiums: Vec<f64>,
}

impl Schedule {
    pub fn from_solution(solution: &EquilibriumSolution) -> Self {
        Schedule {
            times: solution.times.clone(),
            contracts: solution.nodes.iter().map(|n| n.indemnity.clone()).collect(),
            premiums: solution.nodes.iter().map(|n| n.premium).collect(),
        }
    }

    /// The same contract at all times, priced under the problem's belief.
    pub fn constant(prob: &Problem, contract: IndemnityFunction) -> Result<Self> {
        let premium = objective::premium(prob, contract.piecewise())?;
        Ok(Schedule { times: alloc::vec![0.0], contracts: alloc::vec![contract], premiums: alloc::vec![premium] })
    }

    /// A fresh schedule on the nodes of `self`, with contracts from `f`.
    pub fn map_contracts<F: Fn(f64, &IndemnityFunction) -> IndemnityFunction>(&self, prob: &Problem, f: F) -> Result<Self> {
        let contracts: Vec<IndemnityFunction> = self.times.iter().zip(&self.contracts).map(|(&t, c)| f(t, c)).collect();
        let premiums = contracts.iter().map(|c| objective::premium(prob, c.piecewise())).collect::<Result<Vec<_>>>()?;
        Ok(Schedule { times: self.times.clone(), contracts, premiums })
    }

    fn node(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t).saturating_sub(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t0: f64,
    pub x0: f64,
    pub paths: usize,
    pub seed: u64,
}

/// Path kernel with the premium accrual precomputed per node.
#[derive(Debug, Clone)]
pub struct Simulator {
    dist: ClaimDistribution,
    r: f64,
    premium_rate: f64,
    horizon: f64,
    schedule: Schedule,
    /// `A(t_i) = ∫_0^{t_i} e^{-rs}(c - p(s)) ds`.
    accrued: Vec<f64>,
}

fn discount_integral(r: f64, a: f64, b: f64) -> f64 {
    // ∫_a^b e^{-rs} ds
    if r == 0.0 {
        b - a
    } else {
        (-r * a).exp() * -(-r * (b - a)).exp_m1() / r
    }
}

impl Simulator {
    pub fn new(prob: &Problem, schedule: Schedule, t0: f64) -> Result<Self> {
        let mkt = &prob.market;
        mkt.check_time(t0)?;
        let start = schedule.times.first().copied().unwrap_or(f64::INFINITY);
        if !(start <= t0) || schedule.times.len() != schedule.contracts.len() || schedule.times.len() != schedule.premiums.len() {
            let end = schedule.times.last().copied().unwrap_or(start);
            return Err(Error::Coverage { start, end, needed_start: t0, needed_end: mkt.horizon });
        }
        let mut accrued = Vec::with_capacity(schedule.times.len());
        let mut acc = 0.0;
        for i in 0..schedule.times.len() {
            if i > 0 {
                let (a, b) = (schedule.times[i - 1], schedule.times[i]);
                acc += (mkt.premium_rate - schedule.premiums[i - 1]) * discount_integral(mkt.r, a, b);
            }
            accrued.push(acc);
        }
        Ok(Simulator { dist: prob.dist, r: mkt.r, premium_rate: mkt.premium_rate, horizon: mkt.horizon, schedule, accrued })
    }

    fn accrued_at(&self, t: f64) -> f64 {
        let i = self.schedule.node(t);
        let t_i = self.schedule.times[i];
        self.accrued[i] + (self.premium_rate - self.schedule.premiums[i]) * discount_integral(self.r, t_i, t)
    }

    /// Exact solution of the drift ODE from `s1` to `s2`.
    fn accrue(&self, x: f64, s1: f64, s2: f64) -> f64 {
        (self.r * (s2 - s1)).exp() * x + (self.r * s2).exp() * (self.accrued_at(s2) - self.accrued_at(s1))
    }

    /// Terminal surplus for a given list of `(arrival time, claim)` events.
    pub fn evolve<I: IntoIterator<Item = (f64, f64)>>(&self, t0: f64, x0: f64, events: I) -> f64 {
        let mut x = x0;
        let mut t = t0;
        for (tau, y) in events {
            if tau >= self.horizon {
                break;
            }
            x = self.accrue(x, t, tau);
            let contract = &self.schedule.contracts[self.schedule.node(tau)];
            x -= y - contract.eval(y);
            t = tau;
        }
        self.accrue(x, t, self.horizon)
    }

    /// Terminal surplus of path `index`.
    pub fn path(&self, cfg: &SimConfig, index: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(index);
        let horizon = self.horizon;
        let dist = self.dist;
        let mut t = cfg.t0;
        let events = core::iter::from_fn(move || {
            t += -unit_open(&mut rng).ln();
            if t >= horizon {
                return None;
            }
            Some((t, dist.sample_from_uniform(unit_open(&mut rng))))
        });
        self.evolve(cfg.t0, cfg.x0, events)
    }
}

/// Uniform on `(0, 1)` from the top 53 bits.
fn unit_open<R: RngCore>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Terminal surplus for paths `0..cfg.paths`, in path order.
pub fn simulate_terminal(prob: &Problem, schedule: Schedule, cfg: &SimConfig) -> Result<Vec<f64>> {
    if cfg.paths == 0 {
        return Err(Error::invalid("paths", "must be at least one"));
    }
    let sim = Simulator::new(prob, schedule, cfg.t0)?;
    Ok((0..cfg.paths as u64).map(|i| sim.path(cfg, i)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub paths: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub var: f64,
    /// `mean - (γ/2) var`.
    #[serde(rename = "J")]
    pub j: f64,
    /// Delta-method standard error of `J`.
    pub se: f64,
    pub se_mean: f64,
}

/// Mean-variance estimate with delta-method standard errors.
pub fn estimate_objective(samples: &[f64], gamma: f64) -> Result<SimResult> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::invalid("samples", "need at least two"));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &s in samples {
        let d = s - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let var = m2 / (nf - 1.0);
    let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
    let j_var = (m2 - gamma * m3 + 0.25 * gamma * gamma * (m4 - m2 * m2)) / nf;
    Ok(SimResult {
        paths: n,
        mean,
        var,
        j: mean - 0.5 * gamma * var,
        se: j_var.max(0.0).sqrt(),
        se_mean: (m2 / nf).sqrt(),
    })
}
