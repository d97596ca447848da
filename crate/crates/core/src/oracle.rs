//! Brute-force reference solver. The claim axis up to `y_max` is cut into
//! `n` uniform cells, the contract is represented by its slope on each cell,
//! and `H` becomes a convex quadratic in those slopes, minimized over the box
//! `[0, 1]^n` by preconditioned projected gradient descent.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::beliefs::{ClaimDistribution, ClaimKind};
use crate::error::{Error, Result};
use crate::indemnity::MarginalIndemnity;
use crate::numeric;
use crate::solver::Problem;

pub const MIN_CELLS: usize = 16;

/// Moments of one cell about its left node `y_k`: `W_j = ∫ (y-y_k)^j dF`
/// and `V_j = ∫ (y-y_k)^j dQ`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CellMoments {
    pub w: [f64; 3],
    pub v: [f64; 2],
}

/// Discretized static problem at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedProblem {
    pub t: f64,
    /// Nodes `0 = y_0 < ... < y_n = y_max`.
    pub grid: Vec<f64>,
    pub cells: Vec<CellMoments>,
    /// `E[Y; Y <= y_max]`.
    pub mean_claim: f64,
    pub risk_weight: f64,
    pub loading: f64,
}

/// `∫_a^b (y - origin)^j coef^m e^{m·rate·y} dF(y)`, `j = 0, 1, 2`.
fn local_moments(dist: &ClaimDistribution, coef: f64, rate: f64, m: i32, a: f64, b: f64, origin: f64) -> Result<[f64; 3]> {
    if !(b > a) {
        return Ok([0.0; 3]);
    }
    let w = 1.0 - dist.atom_at_zero();
    let cm = coef.powi(m);
    match dist.kind() {
        ClaimKind::Exponential { scale } => {
            let beta = 1.0 / scale - m as f64 * rate;
            let hi = numeric::exp_poly_moments(beta, b - origin);
            let lo = numeric::exp_poly_moments(beta, a - origin);
            let f = w * cm / scale * (-beta * origin).exp();
            Ok([f * (hi[0] - lo[0]), f * (hi[1] - lo[1]), f * (hi[2] - lo[2])])
        }
        ClaimKind::Weibull { .. } => {
            let mr = m as f64 * rate;
            numeric::integrate(
                |y| {
                    let d = dist.density(y) * cm * (mr * y).exp();
                    let u = y - origin;
                    [d, u * d, u * u * d]
                },
                a,
                b,
                b - a,
                1e-15,
            )
        }
    }
}

/// Cell moments on a uniform grid of `n` cells over `[0, y_max]`.
pub fn discretize(prob: &Problem, t: f64, n: usize) -> Result<DiscretizedProblem> {
    if n < MIN_CELLS {
        return Err(Error::invalid("n", format!("needs at least {MIN_CELLS} cells")));
    }
    prob.market.check_time(t)?;
    let y_max = prob.y_max;
    let grid: Vec<f64> = (0..=n).map(|i| if i == n { y_max } else { y_max * i as f64 / n as f64 }).collect();
    let lr = prob.belief.lr();
    let mut cells = Vec::with_capacity(n);
    let mut mean_claim = 0.0;
    for k in 0..n {
        let (lo, hi) = (grid[k], grid[k + 1]);
        let w = local_moments(&prob.dist, 1.0, 0.0, 0, lo, hi, lo)?;
        mean_claim += w[1] + lo * w[0];
        let mut v = [0.0; 2];
        for (i, piece) in lr.pieces().iter().enumerate() {
            let a = lo.max(piece.start);
            let b = hi.min(lr.piece_end(i));
            if b > a {
                let m = local_moments(&prob.dist, piece.coef, piece.rate, 1, a, b, lo)?;
                v[0] += m[0];
                v[1] += m[1];
            }
        }
        if let Some(at) = lr.singular_atom() {
            let inside = at > lo && at <= hi || (k == 0 && at == 0.0);
            if inside {
                v[0] += 1.0;
                v[1] += at - lo;
            }
        }
        cells.push(CellMoments { w, v });
    }
    let total: f64 = cells.iter().map(|c| c.w[0]).sum();
    let expected = prob.dist.cdf(y_max) - prob.dist.atom_at_zero();
    if (total - expected).abs() > 1e-10 {
        return Err(Error::Discretization(format!("cell masses sum to {total}, expected {expected}")));
    }
    Ok(DiscretizedProblem {
        t,
        grid,
        cells,
        mean_claim,
        risk_weight: prob.market.risk_weight(t),
        loading: prob.market.loading(),
    })
}

impl DiscretizedProblem {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    fn widths(&self) -> impl Iterator<Item = f64> + '_ {
        self.grid.windows(2).map(|w| w[1] - w[0])
    }

    /// `H(q)`, and the gradient into `grad` when given.
    pub fn evaluate(&self, q: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let k = self.risk_weight;
        let loading = self.loading;
        let n = self.cells.len();
        let mut h = self.mean_claim;
        let mut level = 0.0;
        let mut dq = vec![0.0; if grad.is_some() { n } else { 0 }];
        let mut dc = vec![0.0; dq.len()];
        for (j, (cell, width)) in self.cells.iter().zip(self.widths()).enumerate() {
            let (qj, c) = (q[j], level);
            let e = self.grid[j] - c;
            let w = 1.0 - qj;
            let [w0, w1, w2] = cell.w;
            let [v0, v1] = cell.v;
            h += loading * (c * v0 + qj * v1) - (c * w0 + qj * w1) + 0.5 * k * (e * e * w0 + 2.0 * e * w * w1 + w * w * w2);
            if !dq.is_empty() {
                dq[j] = loading * v1 - w1 - k * (e * w1 + w * w2);
                dc[j] = loading * v0 - w0 - k * (e * w0 + w * w1);
            }
            level += qj * width;
        }
        if let Some(g) = grad {
            let mut suffix = 0.0;
            for (j, width) in self.widths().enumerate().collect::<Vec<_>>().into_iter().rev() {
                g[j] = dq[j] + width * suffix;
                suffix += dc[j];
            }
        }
        h
    }

    /// Diagonal of the Hessian, used as a preconditioner.
    pub fn hessian_diagonal(&self) -> Vec<f64> {
        let k = self.risk_weight;
        let widths: Vec<f64> = self.widths().collect();
        let mut out = vec![0.0; self.cells.len()];
        let mut suffix = 0.0;
        for j in (0..self.cells.len()).rev() {
            out[j] = k * self.cells[j].w[2] + k * widths[j] * widths[j] * suffix;
            suffix += self.cells[j].w[0];
        }
        out
    }

    /// `Σ_k w_k`.
    pub fn total_mass(&self) -> f64 {
        self.cells.iter().map(|c| c.w[0]).sum()
    }

    /// `Σ_k V0_k`.
    pub fn total_q_mass(&self) -> f64 {
        self.cells.iter().map(|c| c.v[0]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Keep the objective value of every iterate.
    pub record_trace: bool,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions { tolerance: 1e-8, max_iterations: 100_000, record_trace: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub marginal: MarginalIndemnity,
    pub h: f64,
    pub iterations: usize,
    /// Max-norm of the projected gradient at the returned iterate.
    pub gradient_norm: f64,
    /// False when the iteration cap was hit.
    pub converged: bool,
    pub trace: Vec<f64>,
}

fn project(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Newton direction on the cells not held at a bound: conjugate gradients on
/// `H_FF d = -g_F`, with `H v = ∇H(v) - ∇H(0)` since `H` is quadratic.
fn newton_direction(prob: &DiscretizedProblem, q: &[f64], g: &[f64], diag: &[f64], grad_zero: &[f64]) -> Vec<f64> {
    let n = q.len();
    let free: Vec<bool> = (0..n).map(|i| !((q[i] <= 0.0 && g[i] > 0.0) || (q[i] >= 1.0 && g[i] < 0.0))).collect();
    let mask = |v: &mut [f64]| v.iter_mut().zip(&free).for_each(|(x, &f)| if !f { *x = 0.0 });
    let hess = |v: &[f64], out: &mut [f64]| {
        prob.evaluate(v, Some(out));
        out.iter_mut().zip(grad_zero).for_each(|(o, &z)| *o -= z);
        mask(out);
    };
    let mut d = vec![0.0; n];
    let mut res: Vec<f64> = g.iter().map(|&x| -x).collect();
    mask(&mut res);
    let mut z: Vec<f64> = res.iter().zip(diag).map(|(&r, &dg)| r / dg).collect();
    let mut dir = z.clone();
    let mut rz: f64 = res.iter().zip(&z).map(|(a, b)| a * b).sum();
    let start = rz;
    let mut hd = vec![0.0; n];
    for _ in 0..n.min(400) {
        if !(rz > 1e-24 * start) {
            break;
        }
        hess(&dir, &mut hd);
        let curv: f64 = dir.iter().zip(&hd).map(|(a, b)| a * b).sum();
        if !(curv > 0.0) {
            break;
        }
        let step = rz / curv;
        for i in 0..n {
            d[i] += step * dir[i];
            res[i] -= step * hd[i];
            z[i] = res[i] / diag[i];
        }
        let rz_next: f64 = res.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_next / rz;
        rz = rz_next;
        dir.iter_mut().zip(&z).for_each(|(p, &zi)| *p = zi + beta * *p);
    }
    d
}

/// Projected gradient on `[0, 1]^n` with Jacobi scaling, Barzilai–Borwein
/// trial steps and Armijo backtracking, started from `q ≡ 0.5`. Each accepted
/// gradient step is followed by a projected Newton step on the free cells.
pub fn solve_qp(prob: &DiscretizedProblem, opts: &QpOptions) -> Result<OracleSolution> {
    let n = prob.len();
    let diag: Vec<f64> = {
        let d = prob.hessian_diagonal();
        let floor = d.iter().copied().fold(0.0, f64::max) * 1e-14 + f64::MIN_POSITIVE;
        d.into_iter().map(|v| v.max(floor)).collect()
    };
    let mut grad_zero = vec![0.0; n];
    prob.evaluate(&vec![0.0; n], Some(&mut grad_zero));
    let stationarity = |q: &[f64], g: &[f64]| -> f64 {
        q.iter().zip(g).map(|(&x, &gi)| (project(x - gi) - x).abs()).fold(0.0, f64::max)
    };
    let mut q = vec![0.5; n];
    let mut g = vec![0.0; n];
    let mut h = prob.evaluate(&q, Some(&mut g));
    let mut trace = Vec::new();
    if opts.record_trace {
        trace.push(h);
    }
    let mut step = 1.0;
    let mut trial = vec![0.0; n];
    let mut g_trial = vec![0.0; n];
    let mut iterations = 0;
    let mut norm = stationarity(&q, &g);
    // Armijo search along `q -> project(q + alpha·dir(i))`.
    let search = |q: &[f64], g: &[f64], h: f64, dir: &dyn Fn(usize) -> f64, alpha0: f64, trial: &mut [f64], g_trial: &mut [f64]| {
        let mut alpha = alpha0;
        for _ in 0..60 {
            let mut decrease = 0.0;
            for i in 0..n {
                trial[i] = project(q[i] + alpha * dir(i));
                decrease += g[i] * (trial[i] - q[i]);
            }
            if decrease < 0.0 {
                let h_trial = prob.evaluate(trial, Some(g_trial));
                if h_trial <= h + 1e-4 * decrease {
                    return Some(h_trial);
                }
            }
            alpha *= 0.5;
        }
        None
    };
    while norm > opts.tolerance && iterations < opts.max_iterations {
        iterations += 1;
        let gradient_dir = |i: usize| -g[i] / diag[i];
        let Some(h_trial) = search(&q, &g, h, &gradient_dir, step, &mut trial, &mut g_trial) else {
            // no descent at machine precision
            break;
        };
        // Barzilai–Borwein step in the scaled metric
        let (mut sds, mut sy) = (0.0, 0.0);
        for i in 0..n {
            let s = trial[i] - q[i];
            sds += s * s * diag[i];
            sy += s * (g_trial[i] - g[i]);
        }
        step = if sy > 0.0 { (sds / sy).clamp(1e-10, 1e10) } else { (step * 2.0).min(1e10) };
        core::mem::swap(&mut q, &mut trial);
        core::mem::swap(&mut g, &mut g_trial);
        h = h_trial;
        if stationarity(&q, &g) > opts.tolerance {
            let d = newton_direction(prob, &q, &g, &diag, &grad_zero);
            if let Some(h_trial) = search(&q, &g, h, &|i| d[i], 1.0, &mut trial, &mut g_trial) {
                core::mem::swap(&mut q, &mut trial);
                core::mem::swap(&mut g, &mut g_trial);
                h = h_trial;
            }
        }
        if opts.record_trace {
            trace.push(h);
        }
        norm = stationarity(&q, &g);
    }
    let marginal = MarginalIndemnity::new(prob.grid.clone(), q)?;
    Ok(OracleSolution { marginal, h, iterations, gradient_norm: norm, converged: norm <= opts.tolerance, trace })
}

/// Discretize and solve in one call.
pub fn oracle_solve(prob: &Problem, t: f64, n: usize) -> Result<OracleSolution> {
    solve_qp(&discretize(prob, t, n)?, &QpOptions::default())
}
