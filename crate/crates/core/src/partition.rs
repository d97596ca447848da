//! Market parameters and the slope-regime partition of the claim axis.

use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::beliefs::{ClaimDistribution, LikelihoodRatio};
use crate::error::{Error, Result};
use crate::numeric;

/// Breakpoints closer than this are merged.
pub const MERGE_TOLERANCE: f64 = 1e-10;
const SAMPLES_PER_PIECE: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Risk aversion.
    pub gamma: f64,
    /// Safety loading.
    pub theta: f64,
    /// Risk-free rate.
    pub r: f64,
    /// Horizon `T`.
    pub horizon: f64,
    /// Premium income rate `c`.
    pub premium_rate: f64,
    /// Initial surplus.
    pub initial_surplus: f64,
}

impl MarketParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma", "must be positive"));
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(Error::invalid("theta", "must be nonnegative"));
        }
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return Err(Error::invalid("r", "must be nonnegative"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid("horizon", "must be positive"));
        }
        if !self.premium_rate.is_finite() || !self.initial_surplus.is_finite() {
            return Err(Error::invalid("premium_rate", "must be finite"));
        }
        Ok(())
    }

    /// Net profit condition `c > E[Y]`.
    pub fn check_net_profit(&self, dist: &ClaimDistribution) -> Result<()> {
        let mean = dist.mean();
        if !(self.premium_rate > mean) {
            return Err(Error::NetProfit { premium_rate: self.premium_rate, mean_claim: mean });
        }
        Ok(())
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t <= self.horizon) {
            return Err(Error::invalid("t", format!("must lie in [0, {}]", self.horizon)));
        }
        Ok(())
    }

    /// `γ e^{r(T-t)}`, the effective quadratic weight at time `t`.
    pub fn risk_weight(&self, t: f64) -> f64 {
        self.gamma * (self.r * (self.horizon - t)).exp()
    }

    pub fn loading(&self) -> f64 {
        1.0 + self.theta
    }

    /// `γ e^{r(T-t)} / (1+θ)`, the upper edge of the coinsurance regime.
    pub fn slope_threshold(&self, t: f64) -> f64 {
        self.risk_weight(t) / self.loading()
    }
}

/// Slope regime of the pointwise minimizer on an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum SlopeRegime {
    /// `LR' < 0`: the pointwise minimizer is steeper than one.
    Steep = 1,
    /// `0 <= LR' <= threshold`: slope in `[0, 1]`.
    Moderate = 2,
    /// `LR' > threshold`: decreasing pointwise minimizer.
    Decreasing = 3,
}

impl SlopeRegime {
    pub fn label(self) -> u8 {
        self as u8
    }

    pub fn classify(lr_derivative: f64, threshold: f64) -> Self {
        if lr_derivative < 0.0 {
            SlopeRegime::Steep
        } else if lr_derivative <= threshold {
            SlopeRegime::Moderate
        } else {
            SlopeRegime::Decreasing
        }
    }
}

impl From<SlopeRegime> for u8 {
    fn from(s: SlopeRegime) -> u8 {
        s.label()
    }
}

impl TryFrom<u8> for SlopeRegime {
    type Error = &'static str;
    fn try_from(v: u8) -> core::result::Result<Self, Self::Error> {
        match v {
            1 => Ok(SlopeRegime::Steep),
            2 => Ok(SlopeRegime::Moderate),
            3 => Ok(SlopeRegime::Decreasing),
            _ => Err("label must be 1, 2 or 3"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    /// Infinite for the last interval.
    pub hi: f64,
    pub label: SlopeRegime,
}

/// Half-open intervals `[y_{i-1}, y_i)` covering `[0, ∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub t: f64,
    pub intervals: Vec<Interval>,
}

impl Partition {
    pub fn from_intervals(t: f64, intervals: Vec<Interval>) -> Result<Self> {
        if intervals.is_empty() || intervals[0].lo != 0.0 {
            return Err(Error::Partition { at: 0.0, reason: "must start at 0".into() });
        }
        for w in intervals.windows(2) {
            if w[0].hi != w[1].lo || !(w[0].hi > w[0].lo) {
                return Err(Error::Partition { at: w[0].hi, reason: "intervals must be contiguous and nonempty".into() });
            }
        }
        if !intervals[intervals.len() - 1].hi.is_infinite() {
            return Err(Error::Partition { at: intervals[intervals.len() - 1].hi, reason: "last interval must be unbounded".into() });
        }
        Ok(Partition { t, intervals })
    }

    pub fn labels(&self) -> Vec<u8> {
        self.intervals.iter().map(|i| i.label.label()).collect()
    }

    /// Interior breakpoints `y_1 < ... < y_m`.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.intervals.iter().skip(1).map(|i| i.lo).collect()
    }

    pub fn label_at(&self, y: f64) -> SlopeRegime {
        let i = self.intervals.partition_point(|iv| iv.lo <= y).saturating_sub(1);
        self.intervals[i].label
    }
}

/// Splits `[0, ∞)` at the likelihood-ratio breakpoints and at the points
/// where `LR'` crosses `0` or the threshold `γe^{r(T-t)}/(1+θ)`, then labels
/// each interval by its slope regime. Crossings are searched up to `y_cap`.
pub fn classify_partition(lr: &LikelihoodRatio, mkt: &MarketParams, t: f64, y_cap: f64) -> Result<Partition> {
    if lr.singular_atom().is_some() {
        return Err(Error::SingularBelief("singular at a point"));
    }
    mkt.check_time(t)?;
    let threshold = mkt.slope_threshold(t);
    // (position, is an LR breakpoint)
    let mut cuts: Vec<(f64, bool)> = Vec::new();
    for (i, piece) in lr.pieces().iter().enumerate() {
        let lo = piece.start;
        if lo >= y_cap {
            break;
        }
        if i > 0 {
            cuts.push((lo, true));
        }
        let hi = lr.piece_end(i).min(y_cap);
        for level in [0.0, threshold] {
            let g = |y: f64| piece.derivative(y) - level;
            for (a, b) in numeric::sign_change_brackets(g, lo, hi, SAMPLES_PER_PIECE) {
                let root = numeric::bisect(g, a, b, 1e-12 * b.abs().max(1.0))
                    .map_err(|_| Error::Partition { at: a, reason: "sign change could not be bracketed".into() })?;
                if root > lo && root < hi {
                    cuts.push((root, false));
                }
            }
        }
    }
    cuts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, bool)> = Vec::new();
    for c in cuts {
        match merged.last_mut() {
            Some(last) if (c.0 - last.0).abs() <= MERGE_TOLERANCE * c.0.abs().max(1.0) => last.1 |= c.1,
            _ => merged.push(c),
        }
    }
    merged.retain(|c| c.0 > MERGE_TOLERANCE);

    let mut edges: Vec<f64> = Vec::with_capacity(merged.len() + 2);
    edges.push(0.0);
    edges.extend(merged.iter().map(|c| c.0));
    edges.push(f64::INFINITY);
    let mut intervals: Vec<Interval> = Vec::new();
    for (w, idx) in edges.windows(2).zip(0..) {
        let (lo, hi) = (w[0], w[1]);
        let probe = if hi.is_infinite() {
            if lo < y_cap { 0.5 * (lo + y_cap) } else { lo + 1.0 }
        } else {
            0.5 * (lo + hi)
        };
        let label = SlopeRegime::classify(lr.derivative(probe), threshold);
        let separated_by_lr_break = idx > 0 && merged[idx - 1].1;
        match intervals.last_mut() {
            Some(prev) if prev.label == label && !separated_by_lr_break => prev.hi = hi,
            _ => intervals.push(Interval { lo, hi, label }),
        }
    }
    Partition::from_intervals(t, intervals)
}
