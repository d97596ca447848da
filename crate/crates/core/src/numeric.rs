//! Numerical building blocks: panelled Gauss–Kronrod quadrature, bracketed
//! root finding, golden-section search and a compass pattern search on the
//! unit box.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const GL8_X: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_W: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

fn gk15<const N: usize, F: Fn(f64) -> [f64; N]>(f: &F, a: f64, b: f64) -> ([f64; N], f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kron = [0.0; N];
    let mut gauss = [0.0; N];
    for (i, (&x, &wk)) in XGK.iter().zip(WGK.iter()).enumerate() {
        let points: &[f64] = if x == 0.0 { &[0.0] } else { &[-1.0, 1.0] };
        for &sgn in points {
            let v = f(c + sgn * h * x);
            for k in 0..N {
                kron[k] += wk * v[k];
                if i % 2 == 1 {
                    gauss[k] += WG[i / 2] * v[k];
                }
            }
        }
    }
    let mut err = 0.0_f64;
    for k in 0..N {
        kron[k] *= h;
        gauss[k] *= h;
        err = err.max((kron[k] - gauss[k]).abs());
    }
    (kron, err)
}

/// Integrates a vector-valued integrand over `[a, b]`.
///
/// The interval is first cut into equal panels no wider than `panel_width`;
/// each panel is integrated by 15-point Gauss–Kronrod and bisected until the
/// Kronrod/Gauss difference is below its share of `abs_tol`. For smooth
/// integrands and sensible panels no refinement happens, which keeps the
/// result a smooth function of `a` and `b`.
pub fn integrate<const N: usize, F: Fn(f64) -> [f64; N]>(
    f: F,
    a: f64,
    b: f64,
    panel_width: f64,
    abs_tol: f64,
) -> Result<[f64; N]> {
    let mut total = [0.0; N];
    if !(b > a) {
        return Ok(total);
    }
    let panels = ((b - a) / panel_width).ceil().clamp(1.0, 4096.0) as usize;
    let width = (b - a) / panels as f64;
    let per_panel_tol = abs_tol / panels as f64;
    let mut stack: Vec<(f64, f64, u32)> = Vec::new();
    let mut worst = 0.0_f64;
    for p in 0..panels {
        let lo = a + p as f64 * width;
        let hi = if p + 1 == panels { b } else { lo + width };
        stack.push((lo, hi, 0));
        while let Some((l, h, depth)) = stack.pop() {
            let (v, err) = gk15(&f, l, h);
            let tol = per_panel_tol * (h - l) / width;
            if err <= tol.max(1e-15) || depth >= 30 {
                if depth >= 30 {
                    worst = worst.max(err);
                }
                for k in 0..N {
                    total[k] += v[k];
                }
            } else {
                let m = 0.5 * (l + h);
                stack.push((m, h, depth + 1));
                stack.push((l, m, depth + 1));
            }
        }
    }
    if worst > abs_tol {
        return Err(Error::Quadrature { a, b, achieved: worst });
    }
    Ok(total)
}

/// Fixed 8-point Gauss–Legendre rule on `[a, b]`.
pub fn gauss_legendre8<const N: usize, F: Fn(f64) -> [f64; N]>(f: F, a: f64, b: f64) -> [f64; N] {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut acc = [0.0; N];
    for (&x, &w) in GL8_X.iter().zip(GL8_W.iter()) {
        let lo = f(c - h * x);
        let hi = f(c + h * x);
        for k in 0..N {
            acc[k] += w * (lo[k] + hi[k]);
        }
    }
    for v in acc.iter_mut() {
        *v *= h;
    }
    acc
}

/// Bisection on a bracket with a sign change. Returns the point where the
/// sign flips, to within `xtol` (absolute) or 1e-15 relative.
pub fn bisect<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, xtol: f64) -> Result<f64> {
    let (mut a, mut b) = (lo, hi);
    let fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() || fa.is_nan() || fb.is_nan() {
        return Err(Error::NotBracketed { lo, hi });
    }
    let neg_left = fa < 0.0;
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (b - a) <= xtol.max(1e-15 * m.abs()) || m == a || m == b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return Ok(m);
        }
        if (fm < 0.0) == neg_left {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// Smallest `x` in `[lo, hi]` with `f(x) >= 0` for a nondecreasing `f`
/// (the generalized "inf { x : f(x) >= 0 }" used by the deductible rules).
/// Returns `lo` if `f(lo) >= 0` and `None` if `f(hi) < 0`.
pub fn first_nonnegative<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, xtol: f64) -> Option<f64> {
    if f(lo) >= 0.0 {
        return Some(lo);
    }
    if f(hi) < 0.0 {
        return None;
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (b - a) <= xtol.max(1e-15 * m.abs()) || m == a || m == b {
            break;
        }
        if f(m) >= 0.0 {
            b = m;
        } else {
            a = m;
        }
    }
    Some(b)
}

/// Scans `[lo, hi]` on `samples + 1` equispaced points and returns the
/// sub-brackets on which `f` changes sign.
pub fn sign_change_brackets<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, samples: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    if !(hi > lo) {
        return out;
    }
    let n = samples.max(1);
    let mut prev_x = lo;
    let mut prev_v = f(lo);
    for i in 1..=n {
        let x = if i == n { hi } else { lo + (hi - lo) * i as f64 / n as f64 };
        let v = f(x);
        if (prev_v < 0.0 && v > 0.0) || (prev_v > 0.0 && v < 0.0) {
            out.push((prev_x, x));
        } else if v == 0.0 && prev_v != 0.0 && i < n {
            // exact zero on a sample: bracket it with the next sample
            let nx = lo + (hi - lo) * (i + 1) as f64 / n as f64;
            let nv = f(nx.min(hi));
            if nv != 0.0 && nv.signum() != prev_v.signum() {
                out.push((prev_x, nx.min(hi)));
            }
        }
        prev_x = x;
        prev_v = v;
    }
    out
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, xtol: f64) -> (f64, f64) {
    let inv_phi = 0.5 * (5.0_f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a) > xtol.max(1e-14 * (a.abs() + b.abs())) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    // compare the interior estimate against the bracket ends
    let mid = 0.5 * (a + b);
    let mut best = (mid, f(mid));
    for x in [lo, hi] {
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    best
}

/// Settings for [`pattern_search`].
#[derive(Debug, Clone, Copy)]
pub struct PatternSearch {
    pub initial_step: f64,
    pub min_step: f64,
    pub max_evals: usize,
}

impl Default for PatternSearch {
    fn default() -> Self {
        PatternSearch { initial_step: 0.125, min_step: 1e-6, max_evals: 20_000 }
    }
}

/// Result of a box-constrained search.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

/// Compass search on `[0, 1]^n` starting at `x0`. Each sweep polls
/// `x ± step·e_i` in coordinate order and moves on strict improvement; the
/// step halves after an unsuccessful sweep.
pub fn pattern_search<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: PatternSearch) -> SearchOutcome {
    let n = x0.len();
    let mut x: Vec<f64> = x0.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let mut fx = f(&x);
    let mut evals = 1;
    if n == 0 {
        return SearchOutcome { x, value: fx, evals };
    }
    let mut step = opts.initial_step;
    let mut trial = x.clone();
    while step >= opts.min_step && evals < opts.max_evals {
        let mut improved = false;
        for i in 0..n {
            for dir in [-1.0, 1.0] {
                let cand = (x[i] + dir * step).clamp(0.0, 1.0);
                if cand == x[i] {
                    continue;
                }
                trial.copy_from_slice(&x);
                trial[i] = cand;
                let v = f(&trial);
                evals += 1;
                if v < fx {
                    fx = v;
                    x.copy_from_slice(&trial);
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    SearchOutcome { x, value: fx, evals }
}

/// Radical inverse of `index` in `base` (Halton sequence component).
pub fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// `∫_0^h u^j e^{-β u} du` for `j = 0, 1, 2`, stable for small `|β h|`.
pub fn exp_poly_moments(beta: f64, h: f64) -> [f64; 3] {
    let x = beta * h;
    if x.abs() < 0.5 {
        // series: sum_m (-β)^m h^{m+j+1} / (m! (m+j+1))
        let mut out = [0.0; 3];
        for (j, o) in out.iter_mut().enumerate() {
            let mut term = h.powi(j as i32 + 1); // (-x)^m h^{j+1} / m!
            let mut acc = 0.0;
            for m in 0..40 {
                let contrib = term / (m + j + 1) as f64;
                acc += contrib;
                if contrib.abs() < 1e-18 * acc.abs() {
                    break;
                }
                term *= -x / (m + 1) as f64;
            }
            *o = acc;
        }
        return out;
    }
    let e = (-x).exp();
    let m0 = -(-x).exp_m1() / beta;
    let m1 = (1.0 - e * (1.0 + x)) / (beta * beta);
    let m2 = (2.0 - e * (x * x + 2.0 * x + 2.0)) / (beta * beta * beta);
    [m0, m1, m2]
}

/// `∫_a^b y^j e^{-β y} dy` for `j = 0, 1, 2`; `b` may be infinite when `β > 0`.
pub fn exp_poly_integral(beta: f64, a: f64, b: f64) -> [f64; 3] {
    if !(b > a) {
        return [0.0; 3];
    }
    if b.is_infinite() {
        // ∫_a^∞ y^j e^{-βy} dy = e^{-βa} ∫_0^∞ (a+u)^j e^{-βu} du
        let e = (-beta * a).exp();
        let i0 = 1.0 / beta;
        let i1 = 1.0 / (beta * beta);
        let i2 = 2.0 / (beta * beta * beta);
        return [e * i0, e * (a * i0 + i1), e * (a * a * i0 + 2.0 * a * i1 + i2)];
    }
    let e = (-beta * a).exp();
    let [u0, u1, u2] = exp_poly_moments(beta, b - a);
    [e * u0, e * (a * u0 + u1), e * (a * a * u0 + 2.0 * a * u1 + u2)]
}
