//! The static per-time objective `H(t, I)`, the Lagrangian `G`, the
//! first-order function `L(s)` and the certification residual built on it.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::Result;
use crate::indemnity::{IndemnityFunction, Piecewise, SegmentKind};
use crate::solver::Problem;

/// Half-width of the band around `L = 0` in which any slope is accepted.
pub const RESIDUAL_BAND: f64 = 1e-8;

/// Expectations over the claims in `(from, ∞)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Expectations {
    /// `P(Y > from)`, continuous part.
    pub mass: f64,
    pub e_y: f64,
    pub e_y2: f64,
    pub e_i: f64,
    pub e_yi: f64,
    pub e_i2: f64,
    /// `E^Q[I]` including any singular `Q` atom.
    pub eq_i: f64,
}

/// Integrates `I`, `yI`, `I²` and `I·LR` segment by segment, split at the
/// likelihood-ratio breakpoints, using closed-form partial moments where
/// available.
pub fn expectations(prob: &Problem, f: &Piecewise, from: f64) -> Result<Expectations> {
    let dist = &prob.dist;
    let lr = prob.belief.lr();
    let y_cap = prob.y_max;
    let mut e = Expectations::default();
    let ctx = f.curve.as_ref();
    for seg in &f.segments {
        let lo = seg.lo.max(from);
        if !(seg.hi > lo) {
            continue;
        }
        for (pi, piece) in lr.pieces().iter().enumerate() {
            let a = lo.max(piece.start);
            let b = seg.hi.min(lr.piece_end(pi));
            if !(b > a) {
                continue;
            }
            let m0 = dist.tilted_moments(a, b, 1.0, 0.0, 0, y_cap)?;
            let m1 = dist.tilted_moments(a, b, piece.coef, piece.rate, 1, y_cap)?;
            e.mass += m0[0];
            e.e_y += m0[1];
            e.e_y2 += m0[2];
            match seg.kind {
                SegmentKind::Flat | SegmentKind::Full => {
                    let (alpha, beta) =
                        if seg.kind == SegmentKind::Flat { (seg.anchor, 0.0) } else { (seg.anchor - seg.lo, 1.0) };
                    e.e_i += alpha * m0[0] + beta * m0[1];
                    e.e_yi += alpha * m0[1] + beta * m0[2];
                    e.e_i2 += alpha * alpha * m0[0] + 2.0 * alpha * beta * m0[1] + beta * beta * m0[2];
                    e.eq_i += alpha * m1[0] + beta * m1[1];
                }
                SegmentKind::Curve => {
                    // I = y + c0 - c1·LR
                    let ctx = ctx.expect("curve segment without context");
                    let c0 = seg.lambda.unwrap_or(0.0) / ctx.risk_weight;
                    let c1 = ctx.loading / ctx.risk_weight;
                    let m2 = dist.tilted_moments(a, b, piece.coef, piece.rate, 2, y_cap)?;
                    e.e_i += m0[1] + c0 * m0[0] - c1 * m1[0];
                    e.e_yi += m0[2] + c0 * m0[1] - c1 * m1[1];
                    e.e_i2 += m0[2] + c0 * c0 * m0[0] + c1 * c1 * m2[0] + 2.0 * c0 * m0[1]
                        - 2.0 * c1 * m1[1]
                        - 2.0 * c0 * c1 * m1[0];
                    e.eq_i += m1[1] + c0 * m1[0] - c1 * m2[0];
                }
            }
        }
    }
    if let Some(v) = lr.singular_atom() {
        if v > from {
            e.eq_i += f.eval(v);
        }
    }
    Ok(e)
}

/// Decomposition of `H` at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParts {
    /// `(1+θ) E^Q[I]`.
    pub premium: f64,
    /// `E[Y - I]`.
    pub retained_mean: f64,
    /// `E[(Y - I)²]`.
    pub retained_second_moment: f64,
    pub h: f64,
}

pub fn objective_parts(prob: &Problem, t: f64, f: &Piecewise) -> Result<ObjectiveParts> {
    let e = expectations(prob, f, 0.0)?;
    let k = prob.market.risk_weight(t);
    let premium = prob.market.loading() * e.eq_i;
    let retained_mean = e.e_y - e.e_i;
    let retained_second_moment = (e.e_y2 - 2.0 * e.e_yi + e.e_i2).max(0.0);
    Ok(ObjectiveParts { premium, retained_mean, retained_second_moment, h: premium + retained_mean + 0.5 * k * retained_second_moment })
}

/// `(1+θ) E^Q[I(Y)]`.
pub fn premium(prob: &Problem, f: &Piecewise) -> Result<f64> {
    Ok(prob.market.loading() * expectations(prob, f, 0.0)?.eq_i)
}

/// `H(t, I) = (1+θ)E^Q[I] + E[Y - I] + (γe^{r(T-t)}/2) E[(Y - I)²]`.
pub fn objective_h(prob: &Problem, t: f64, f: &Piecewise) -> Result<f64> {
    Ok(objective_parts(prob, t, f)?.h)
}

/// `G(t, I; λ) = (1+θ)E^Q[I] + (k/2)E[I²] - kE[YI] - λE[I]`.
pub fn lagrangian_g(prob: &Problem, t: f64, f: &Piecewise, lambda: f64) -> Result<f64> {
    let e = expectations(prob, f, 0.0)?;
    let k = prob.market.risk_weight(t);
    Ok(prob.market.loading() * e.eq_i + 0.5 * k * e.e_i2 - k * e.e_yi - lambda * e.e_i)
}

/// `L(s) = ∫_s^∞ (kI(y) - ky - λ) dF(y) + (1+θ) S^Q(s)`.
pub fn lemma_l(prob: &Problem, t: f64, f: &Piecewise, lambda: f64, s: f64) -> Result<f64> {
    let e = expectations(prob, f, s)?;
    let k = prob.market.risk_weight(t);
    let sq = prob.belief.q_mass(&prob.dist, s, f64::INFINITY, prob.y_max)?;
    Ok(k * e.e_i - k * e.e_y - lambda * e.mass + prob.market.loading() * sq)
}

/// Multiplier at which the first-order conditions of `H` hold: `H` equals
/// `G(·; 1)` up to a constant.
pub const H_MULTIPLIER: f64 = 1.0;

/// Worst violation of the first-order conditions on `n` equispaced points
/// in `(0, y_max)`: where `L < 0` the slope should be one, where `L > 0` it
/// should be zero. Each violation is weighted by `|L|`; inside the band
/// `|L| <= 1e-8` any slope is accepted.
pub fn first_order_residual(prob: &Problem, t: f64, f: &IndemnityFunction, lambda: f64, n: usize) -> Result<f64> {
    let mut worst = 0.0_f64;
    for s in residual_grid(prob.y_max, n) {
        let l = lemma_l(prob, t, f.piecewise(), lambda, s)?;
        let slope = f.piecewise().slope(s).clamp(0.0, 1.0);
        let mismatch = if l > RESIDUAL_BAND {
            slope
        } else if l < -RESIDUAL_BAND {
            1.0 - slope
        } else {
            0.0
        };
        worst = worst.max(l.abs() * mismatch);
    }
    Ok(worst)
}

fn residual_grid(y_max: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (1..n).map(|i| y_max * i as f64 / n as f64).collect()
}
