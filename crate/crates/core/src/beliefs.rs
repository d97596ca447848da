//! Claim-size beliefs: the insurer's distribution `P`, the reinsurer's
//! measure `Q` given as a likelihood ratio against `P`, and the distortion
//! functions (VaR, ES, power) that generate `Q` from `P`.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric;

/// Survival probability at which improper integrals are truncated.
pub const TAIL_PROBABILITY: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClaimKind {
    Exponential { scale: f64 },
    /// Weibull with `shape >= 1` (bounded density at the origin).
    Weibull { scale: f64, shape: f64 },
}

/// Insurer's belief about the claim size `Y >= 0`: a continuous law on
/// `(0, ∞)` mixed with an optional atom at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaimDistribution {
    kind: ClaimKind,
    atom_at_zero: f64,
}

impl ClaimDistribution {
    pub fn exponential(scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid("scale", "must be positive and finite"));
        }
        Ok(ClaimDistribution { kind: ClaimKind::Exponential { scale }, atom_at_zero: 0.0 })
    }

    pub fn weibull(scale: f64, shape: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid("scale", "must be positive and finite"));
        }
        if !(shape >= 1.0 && shape.is_finite()) {
            return Err(Error::invalid("shape", "must be at least 1"));
        }
        Ok(ClaimDistribution { kind: ClaimKind::Weibull { scale, shape }, atom_at_zero: 0.0 })
    }

    pub fn with_atom_at_zero(mut self, p0: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p0) {
            return Err(Error::invalid("atom_at_zero", "must lie in [0, 1)"));
        }
        self.atom_at_zero = p0;
        Ok(self)
    }

    pub fn kind(&self) -> ClaimKind {
        self.kind
    }

    pub fn atom_at_zero(&self) -> f64 {
        self.atom_at_zero
    }

    /// `true` when partial moments are available in closed form.
    pub fn is_exponential(&self) -> bool {
        matches!(self.kind, ClaimKind::Exponential { .. })
    }

    fn cont_survival(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 1.0;
        }
        match self.kind {
            ClaimKind::Exponential { scale } => (-y / scale).exp(),
            ClaimKind::Weibull { scale, shape } => (-(y / scale).powf(shape)).exp(),
        }
    }

    pub fn cdf(&self, y: f64) -> f64 {
        if y < 0.0 {
            return 0.0;
        }
        1.0 - self.survival(y)
    }

    pub fn survival(&self, y: f64) -> f64 {
        if y < 0.0 {
            return 1.0;
        }
        (1.0 - self.atom_at_zero) * self.cont_survival(y)
    }

    /// Density of the continuous part.
    pub fn density(&self, y: f64) -> f64 {
        if y < 0.0 {
            return 0.0;
        }
        let w = 1.0 - self.atom_at_zero;
        match self.kind {
            ClaimKind::Exponential { scale } => w * (-y / scale).exp() / scale,
            ClaimKind::Weibull { scale, shape } => {
                let z = y / scale;
                w * shape / scale * z.powf(shape - 1.0) * (-z.powf(shape)).exp()
            }
        }
    }

    /// Generalized inverse `inf { y >= 0 : F(y) >= p }`.
    pub fn quantile(&self, p: f64) -> f64 {
        self.upper_quantile(1.0 - p)
    }

    /// `inf { y >= 0 : S(y) <= tail }`, accurate for tiny tail probabilities.
    pub fn upper_quantile(&self, tail: f64) -> f64 {
        let w = 1.0 - self.atom_at_zero;
        if tail >= w {
            return 0.0;
        }
        if tail <= 0.0 {
            return f64::INFINITY;
        }
        let z = (w / tail).ln();
        match self.kind {
            ClaimKind::Exponential { scale } => scale * z,
            ClaimKind::Weibull { scale, shape } => scale * z.powf(1.0 / shape),
        }
    }

    /// Maps a uniform draw to a claim by inversion.
    pub fn sample_from_uniform(&self, u: f64) -> f64 {
        self.upper_quantile(1.0 - u)
    }

    pub fn mean(&self) -> f64 {
        let w = 1.0 - self.atom_at_zero;
        match self.kind {
            ClaimKind::Exponential { scale } => w * scale,
            ClaimKind::Weibull { scale, shape } => w * scale * libm::tgamma(1.0 + 1.0 / shape),
        }
    }

    pub fn second_moment(&self) -> f64 {
        let w = 1.0 - self.atom_at_zero;
        match self.kind {
            ClaimKind::Exponential { scale } => 2.0 * w * scale * scale,
            ClaimKind::Weibull { scale, shape } => w * scale * scale * libm::tgamma(1.0 + 2.0 / shape),
        }
    }

    /// Default truncation point: the `1 - 1e-10` quantile.
    pub fn tail_truncation(&self) -> f64 {
        self.upper_quantile(TAIL_PROBABILITY)
    }

    pub fn var_alpha(&self, alpha: f64) -> Result<f64> {
        check_level(alpha)?;
        Ok(self.upper_quantile(alpha))
    }

    pub fn es_alpha(&self, alpha: f64) -> Result<f64> {
        check_level(alpha)?;
        let v = self.upper_quantile(alpha);
        Ok(v + self.stop_loss(v)? / alpha)
    }

    /// `E[(Y - v)_+]`.
    pub fn stop_loss(&self, v: f64) -> Result<f64> {
        let m = self.tilted_moments(v.max(0.0), f64::INFINITY, 1.0, 0.0, 0, self.tail_truncation())?;
        Ok(m[1] - v.max(0.0) * m[0])
    }

    /// `∫_{(a,b]} y^j dF(y)` for `j = 0, 1, 2` over the continuous part.
    pub fn partial_moments(&self, a: f64, b: f64) -> Result<[f64; 3]> {
        self.tilted_moments(a, b, 1.0, 0.0, 0, self.tail_truncation())
    }

    /// `∫_a^b y^j (coef·e^{rate·y})^m dF(y)` for `j = 0, 1, 2`.
    ///
    /// An infinite `b` is integrated exactly when the tilted exponential tail
    /// converges and truncated at `y_cap` otherwise (or for quadrature-based
    /// laws).
    pub fn tilted_moments(&self, a: f64, b: f64, coef: f64, rate: f64, m: i32, y_cap: f64) -> Result<[f64; 3]> {
        let a = a.max(0.0);
        if !(b > a) || coef == 0.0 && m > 0 {
            return Ok([0.0; 3]);
        }
        let w = 1.0 - self.atom_at_zero;
        let cm = coef.powi(m);
        match self.kind {
            ClaimKind::Exponential { scale } => {
                let beta = 1.0 / scale - m as f64 * rate;
                let hi = if b.is_infinite() && beta <= 0.0 { y_cap.max(a) } else { b };
                let v = numeric::exp_poly_integral(beta, a, hi);
                let f = w * cm / scale;
                Ok([f * v[0], f * v[1], f * v[2]])
            }
            ClaimKind::Weibull { .. } => {
                let hi = b.min(y_cap);
                if !(hi > a) {
                    return Ok([0.0; 3]);
                }
                let mr = m as f64 * rate;
                let panel = (y_cap / 64.0).max(1e-6);
                numeric::integrate(
                    |y| {
                        let d = self.density(y) * cm * (mr * y).exp();
                        [d, y * d, y * y * d]
                    },
                    a,
                    hi,
                    panel,
                    1e-12,
                )
            }
        }
    }
}

fn check_level(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha", "must lie in (0, 1)"));
    }
    Ok(())
}

/// One smooth piece `LR(y) = coef·e^{rate·y}` valid from `start` to the next
/// piece's start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrPiece {
    pub start: f64,
    pub coef: f64,
    pub rate: f64,
}

impl LrPiece {
    pub fn value(&self, y: f64) -> f64 {
        if self.rate == 0.0 {
            self.coef
        } else {
            self.coef * (self.rate * y).exp()
        }
    }

    pub fn derivative(&self, y: f64) -> f64 {
        if self.rate == 0.0 {
            0.0
        } else {
            self.coef * self.rate * (self.rate * y).exp()
        }
    }
}

/// Piecewise likelihood ratio `dQ/dP` with an optional singular point where
/// `Q` carries an atom that `P` does not (the VaR premium).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodRatio {
    pieces: Vec<LrPiece>,
    singular_atom: Option<f64>,
}

impl LikelihoodRatio {
    pub fn new(mut pieces: Vec<LrPiece>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::invalid("likelihood_ratio", "needs at least one piece"));
        }
        pieces.sort_by(|a, b| a.start.total_cmp(&b.start));
        if pieces[0].start != 0.0 {
            return Err(Error::invalid("likelihood_ratio", "first piece must start at 0"));
        }
        for w in pieces.windows(2) {
            if !(w[1].start > w[0].start) {
                return Err(Error::invalid("likelihood_ratio", "piece starts must be distinct"));
            }
        }
        for p in &pieces {
            if !(p.coef >= 0.0 && p.coef.is_finite() && p.rate.is_finite() && p.start.is_finite()) {
                return Err(Error::invalid("likelihood_ratio", "pieces need finite coef >= 0 and finite rate"));
            }
        }
        Ok(LikelihoodRatio { pieces, singular_atom: None })
    }

    pub fn constant(value: f64) -> Self {
        LikelihoodRatio { pieces: vec![LrPiece { start: 0.0, coef: value, rate: 0.0 }], singular_atom: None }
    }

    /// Ratio of two exponential densities with scales `scale_p` (insurer) and
    /// `scale_q` (reinsurer).
    pub fn exponential(scale_p: f64, scale_q: f64) -> Result<Self> {
        if !(scale_p > 0.0 && scale_q > 0.0) {
            return Err(Error::invalid("scale", "both scales must be positive"));
        }
        Ok(LikelihoodRatio {
            pieces: vec![LrPiece { start: 0.0, coef: scale_p / scale_q, rate: 1.0 / scale_p - 1.0 / scale_q }],
            singular_atom: None,
        })
    }

    pub fn with_singular_atom(mut self, at: f64) -> Self {
        self.singular_atom = Some(at);
        self
    }

    pub fn pieces(&self) -> &[LrPiece] {
        &self.pieces
    }

    pub fn singular_atom(&self) -> Option<f64> {
        self.singular_atom
    }

    /// Interior breakpoints, i.e. the starts of all pieces but the first.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.pieces.iter().skip(1).map(|p| p.start).collect()
    }

    pub fn piece_index(&self, y: f64) -> usize {
        self.pieces.partition_point(|p| p.start <= y).saturating_sub(1)
    }

    /// End of piece `i` (infinite for the last piece).
    pub fn piece_end(&self, i: usize) -> f64 {
        self.pieces.get(i + 1).map_or(f64::INFINITY, |p| p.start)
    }

    pub fn value(&self, y: f64) -> f64 {
        self.pieces[self.piece_index(y)].value(y)
    }

    pub fn derivative(&self, y: f64) -> f64 {
        self.pieces[self.piece_index(y)].derivative(y)
    }

    /// Largest value on `[a, b]`; pieces are monotone so endpoints suffice.
    pub fn sup_on(&self, a: f64, b: f64) -> f64 {
        let mut best = 0.0_f64;
        for (i, p) in self.pieces.iter().enumerate() {
            let lo = p.start.max(a);
            let hi = self.piece_end(i).min(b);
            if hi < lo {
                continue;
            }
            best = best.max(p.value(lo)).max(p.value(hi));
        }
        best
    }

    pub fn is_identity(&self) -> bool {
        self.singular_atom.is_none() && self.pieces.iter().all(|p| p.rate == 0.0 && p.coef == 1.0)
    }

    /// Nonincreasing on `[0, ∞)`, jumps included.
    pub fn is_nonincreasing(&self) -> bool {
        if self.singular_atom.is_some() {
            return false;
        }
        let shapes = self.pieces.iter().all(|p| p.rate <= 0.0 || p.coef == 0.0);
        let jumps = self.pieces.windows(2).all(|w| w[1].value(w[1].start) <= w[0].value(w[1].start));
        shapes && jumps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistortionKind {
    Identity,
    /// `g(u) = u^exponent`, convex for `exponent >= 1`.
    Power { exponent: f64 },
    ValueAtRisk { alpha: f64 },
    ExpectedShortfall { alpha: f64 },
}

/// Distortion `g: [0,1] -> [0,1]` with `S^Q = g ∘ S`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionFunction {
    kind: DistortionKind,
}

impl DistortionFunction {
    pub fn identity() -> Self {
        DistortionFunction { kind: DistortionKind::Identity }
    }

    pub fn power(exponent: f64) -> Result<Self> {
        if !(exponent > 0.0 && exponent.is_finite()) {
            return Err(Error::invalid("exponent", "must be positive"));
        }
        Ok(DistortionFunction { kind: DistortionKind::Power { exponent } })
    }

    pub fn value_at_risk(alpha: f64) -> Result<Self> {
        check_level(alpha)?;
        Ok(DistortionFunction { kind: DistortionKind::ValueAtRisk { alpha } })
    }

    pub fn expected_shortfall(alpha: f64) -> Result<Self> {
        check_level(alpha)?;
        Ok(DistortionFunction { kind: DistortionKind::ExpectedShortfall { alpha } })
    }

    pub fn kind(&self) -> DistortionKind {
        self.kind
    }

    pub fn eval(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self.kind {
            DistortionKind::Identity => u,
            DistortionKind::Power { exponent } => u.powf(exponent),
            DistortionKind::ValueAtRisk { alpha } => {
                if u > alpha {
                    1.0
                } else {
                    0.0
                }
            }
            DistortionKind::ExpectedShortfall { alpha } => (u / alpha).min(1.0),
        }
    }

    pub fn is_convex(&self) -> bool {
        match self.kind {
            DistortionKind::Identity => true,
            DistortionKind::Power { exponent } => exponent >= 1.0,
            _ => false,
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self.kind {
            DistortionKind::ValueAtRisk { alpha } | DistortionKind::ExpectedShortfall { alpha } => Some(alpha),
            _ => None,
        }
    }
}

/// `S^Q(y) = g(S(y))`.
pub fn distorted_survival(dist: &ClaimDistribution, g: &DistortionFunction, y: f64) -> f64 {
    g.eval(dist.survival(y))
}

/// The reinsurer's measure. It is always carried as a likelihood ratio; the
/// distortion it came from, if any, is kept for the distortion-specific
/// solvers and for consistency checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReinsurerBelief {
    lr: LikelihoodRatio,
    distortion: Option<DistortionFunction>,
}

impl ReinsurerBelief {
    pub fn homogeneous() -> Self {
        ReinsurerBelief { lr: LikelihoodRatio::constant(1.0), distortion: Some(DistortionFunction::identity()) }
    }

    pub fn from_lr(lr: LikelihoodRatio) -> Self {
        ReinsurerBelief { lr, distortion: None }
    }

    /// Both views supplied; they must agree on an interval grid.
    pub fn with_distortion_check(lr: LikelihoodRatio, g: DistortionFunction, dist: &ClaimDistribution) -> Result<Self> {
        let belief = ReinsurerBelief { lr, distortion: Some(g) };
        belief.check_consistency(dist)?;
        Ok(belief)
    }

    /// Derives the likelihood ratio implied by a distortion of `dist`.
    pub fn from_distortion(dist: &ClaimDistribution, g: DistortionFunction) -> Result<Self> {
        let lr = match g.kind() {
            DistortionKind::Identity => LikelihoodRatio::constant(1.0),
            DistortionKind::Power { exponent } => match dist.kind() {
                // g'(S)·S^{p-1} with S = (1-p0)e^{-y/scale}
                ClaimKind::Exponential { scale } => {
                    let w = 1.0 - dist.atom_at_zero();
                    LikelihoodRatio::new(vec![LrPiece {
                        start: 0.0,
                        coef: exponent * w.powf(exponent - 1.0),
                        rate: -(exponent - 1.0) / scale,
                    }])?
                }
                ClaimKind::Weibull { .. } => {
                    return Err(Error::invalid("distortion", "power distortion needs exponential claims"))
                }
            },
            DistortionKind::ValueAtRisk { alpha } => {
                let v = dist.var_alpha(alpha)?;
                LikelihoodRatio::constant(0.0).with_singular_atom(v)
            }
            DistortionKind::ExpectedShortfall { alpha } => {
                let v = dist.var_alpha(alpha)?;
                if v > 0.0 {
                    LikelihoodRatio::new(vec![
                        LrPiece { start: 0.0, coef: 0.0, rate: 0.0 },
                        LrPiece { start: v, coef: 1.0 / alpha, rate: 0.0 },
                    ])?
                } else {
                    LikelihoodRatio::constant(1.0 / alpha)
                }
            }
        };
        Ok(ReinsurerBelief { lr, distortion: Some(g) })
    }

    pub fn lr(&self) -> &LikelihoodRatio {
        &self.lr
    }

    pub fn distortion(&self) -> Option<&DistortionFunction> {
        self.distortion.as_ref()
    }

    /// `Q((a, b])` computed from the likelihood ratio.
    pub fn q_mass(&self, dist: &ClaimDistribution, a: f64, b: f64, y_cap: f64) -> Result<f64> {
        let mut total = 0.0;
        for (i, p) in self.lr.pieces().iter().enumerate() {
            let lo = p.start.max(a);
            let hi = self.lr.piece_end(i).min(b);
            if hi > lo {
                total += dist.tilted_moments(lo, hi, p.coef, p.rate, 1, y_cap)?[0];
            }
        }
        if let Some(v) = self.lr.singular_atom() {
            if v > a && v <= b {
                total += 1.0;
            }
        }
        Ok(total)
    }

    /// `S^Q(s) = Q(Y > s)`.
    pub fn survival_q(&self, dist: &ClaimDistribution, s: f64, y_cap: f64) -> Result<f64> {
        if let Some(g) = &self.distortion {
            return Ok(g.eval(dist.survival(s)));
        }
        self.q_mass(dist, s, f64::INFINITY, y_cap)
    }

    /// Upper quantile of `Q`: smallest `y` with `S^Q(y) <= tail`.
    pub fn upper_quantile_q(&self, dist: &ClaimDistribution, tail: f64, y_cap: f64) -> Result<f64> {
        if let Some(v) = self.lr.singular_atom() {
            return Ok(v);
        }
        let f = |y: f64| self.q_mass(dist, y, f64::INFINITY, y_cap).unwrap_or(0.0) - tail;
        let mut hi = dist.tail_truncation().max(1.0);
        let mut guard = 0;
        while f(hi) > 0.0 && guard < 60 {
            hi *= 2.0;
            guard += 1;
        }
        if f(0.0) <= 0.0 {
            return Ok(0.0);
        }
        numeric::bisect(f, 0.0, hi, 1e-10 * hi)
    }

    /// Compares `Q((a, b])` from the likelihood ratio against the distortion
    /// (or against total mass one when no distortion is given).
    pub fn check_consistency(&self, dist: &ClaimDistribution) -> Result<()> {
        let y_cap = dist.tail_truncation();
        match &self.distortion {
            Some(g) => {
                let n = 40;
                let tol = 1e-8;
                for i in 0..n {
                    for &span in &[1usize, 3, 7] {
                        let a = dist.quantile(i as f64 / n as f64);
                        let j = i + span;
                        let b = if j >= n { f64::INFINITY } else { dist.quantile(j as f64 / n as f64) };
                        let from_g = g.eval(dist.survival(a)) - if b.is_infinite() { 0.0 } else { g.eval(dist.survival(b)) };
                        let from_lr = self.q_mass(dist, a, b, y_cap)?;
                        if (from_g - from_lr).abs() > tol {
                            return Err(Error::InconsistentBelief(alloc::format!(
                                "Q((a, b]) for a = {a}, b = {b}: distortion gives {from_g}, likelihood ratio gives {from_lr}"
                            )));
                        }
                    }
                }
                Ok(())
            }
            None => {
                let mass = self.q_mass(dist, 0.0, f64::INFINITY, y_cap)?;
                // with an atom at zero, Q may put the remaining mass there
                let deficit_allowed = dist.atom_at_zero() > 0.0;
                if mass > 1.0 + 1e-6 || (!deficit_allowed && (mass - 1.0).abs() > 1e-6) {
                    return Err(Error::InconsistentBelief(alloc::format!(
                        "likelihood ratio integrates to {mass} instead of 1"
                    )));
                }
                Ok(())
            }
        }
    }
}
