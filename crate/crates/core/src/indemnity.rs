//! Piecewise indemnity functions built from flat, full-slope and curve
//! segments, and the assembly of the parametric optimal families.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::beliefs::LikelihoodRatio;
use crate::error::{Error, Result};
use crate::numeric;
use crate::partition::{MarketParams, Partition, SlopeRegime};

/// Segments shorter than this are dropped during assembly.
const MIN_SEGMENT: f64 = 1e-12;
/// Join tolerance when merging adjacent segments.
const JOIN_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    /// `I(y) = anchor`.
    Flat,
    /// `I(y) = anchor + (y - lo)`.
    Full,
    /// `I(y) = φ_λ(t, y)`.
    Curve,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub lo: f64,
    #[serde(serialize_with = "ser_unbounded", deserialize_with = "de_unbounded")]
    pub hi: f64,
    pub kind: SegmentKind,
    /// Value at `lo`.
    pub anchor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

fn ser_unbounded<S: Serializer>(v: &f64, s: S) -> core::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_some(v)
    } else {
        s.serialize_none()
    }
}

fn de_unbounded<'de, D: Deserializer<'de>>(d: D) -> core::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// What a curve segment needs to evaluate `φ_λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveContext {
    /// `γ e^{r(T-t)}`.
    pub risk_weight: f64,
    /// `1 + θ`.
    pub loading: f64,
    pub lr: LikelihoodRatio,
}

impl CurveContext {
    pub fn new(lr: &LikelihoodRatio, mkt: &MarketParams, t: f64) -> Self {
        CurveContext { risk_weight: mkt.risk_weight(t), loading: mkt.loading(), lr: lr.clone() }
    }

    pub fn phi(&self, lambda: f64, y: f64) -> f64 {
        y + (lambda - self.loading * self.lr.value(y)) / self.risk_weight
    }

    pub fn phi_slope(&self, y: f64) -> f64 {
        1.0 - self.loading * self.lr.derivative(y) / self.risk_weight
    }
}

/// `φ_λ(t, y) = y + (λ - (1+θ) LR(y)) / (γ e^{r(T-t)})`.
pub fn phi_lambda(t: f64, y: f64, lambda: f64, lr: &LikelihoodRatio, mkt: &MarketParams) -> Result<f64> {
    if lr.singular_atom() == Some(y) {
        return Err(Error::SingularBelief("infinite at the evaluation point"));
    }
    Ok(CurveContext::new(lr, mkt, t).phi(lambda, y))
}

/// Ordered segments covering `[0, ∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piecewise {
    pub t: f64,
    pub segments: Vec<Segment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<CurveContext>,
}

impl Piecewise {
    fn new(t: f64, segments: Vec<Segment>, curve: Option<CurveContext>) -> Self {
        Piecewise { t, segments: merge_segments(segments), curve }
    }

    pub fn segment_index(&self, y: f64) -> usize {
        self.segments.partition_point(|s| s.lo <= y).saturating_sub(1)
    }

    pub fn segment_value(&self, seg: &Segment, y: f64) -> f64 {
        match seg.kind {
            SegmentKind::Flat => seg.anchor,
            SegmentKind::Full => seg.anchor + (y - seg.lo),
            SegmentKind::Curve => {
                let ctx = self.curve.as_ref().expect("curve segment without context");
                ctx.phi(seg.lambda.unwrap_or(0.0), y)
            }
        }
    }

    pub fn eval(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let seg = &self.segments[self.segment_index(y)];
        self.segment_value(seg, y)
    }

    /// Right derivative.
    pub fn slope(&self, y: f64) -> f64 {
        let seg = &self.segments[self.segment_index(y.max(0.0))];
        match seg.kind {
            SegmentKind::Flat => 0.0,
            SegmentKind::Full => 1.0,
            SegmentKind::Curve => self.curve.as_ref().map_or(0.0, |c| c.phi_slope(y)),
        }
    }

    pub fn kinds(&self) -> Vec<SegmentKind> {
        self.segments.iter().map(|s| s.kind).collect()
    }
}

fn merge_segments(segments: Vec<Segment>) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::with_capacity(segments.len());
    for seg in segments {
        if !(seg.hi - seg.lo > MIN_SEGMENT) {
            continue;
        }
        if let Some(prev) = out.last_mut() {
            let joins = match (prev.kind, seg.kind) {
                (SegmentKind::Flat, SegmentKind::Flat) => (prev.anchor - seg.anchor).abs() <= JOIN_TOLERANCE,
                (SegmentKind::Full, SegmentKind::Full) => {
                    (prev.anchor + (seg.lo - prev.lo) - seg.anchor).abs() <= JOIN_TOLERANCE
                }
                (SegmentKind::Curve, SegmentKind::Curve) => prev.lambda == seg.lambda,
                _ => false,
            };
            if joins {
                prev.hi = seg.hi;
                continue;
            }
        }
        out.push(seg);
    }
    if let Some(first) = out.first_mut() {
        first.lo = 0.0;
    }
    out
}

/// Indemnity in the incentive-compatible class: `I(0) = 0`, slope in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IndemnityFunction(Piecewise);

impl IndemnityFunction {
    pub fn zero(t: f64) -> Self {
        IndemnityFunction(Piecewise::new(t, vec![seg(0.0, f64::INFINITY, SegmentKind::Flat, 0.0)], None))
    }

    pub fn full(t: f64) -> Self {
        IndemnityFunction(Piecewise::new(t, vec![seg(0.0, f64::INFINITY, SegmentKind::Full, 0.0)], None))
    }

    /// `(y - d)_+`.
    pub fn excess_of_loss(t: f64, deductible: f64) -> Self {
        let d = deductible.max(0.0);
        IndemnityFunction(Piecewise::new(
            t,
            vec![seg(0.0, d, SegmentKind::Flat, 0.0), seg(d, f64::INFINITY, SegmentKind::Full, 0.0)],
            None,
        ))
    }

    /// `y ∧ d`.
    pub fn limited(t: f64, limit: f64) -> Self {
        let d = limit.max(0.0);
        IndemnityFunction(Piecewise::new(
            t,
            vec![seg(0.0, d, SegmentKind::Full, 0.0), seg(d, f64::INFINITY, SegmentKind::Flat, d)],
            None,
        ))
    }

    /// Layer `(y - a)_+ - (y - b)_+`.
    pub fn layer(t: f64, a: f64, b: f64) -> Result<Self> {
        if !(0.0 <= a && a <= b) {
            return Err(Error::Construction("layer needs 0 <= a <= b".into()));
        }
        Ok(IndemnityFunction(Piecewise::new(
            t,
            vec![
                seg(0.0, a, SegmentKind::Flat, 0.0),
                seg(a, b, SegmentKind::Full, 0.0),
                seg(b, f64::INFINITY, SegmentKind::Flat, b - a),
            ],
            None,
        )))
    }

    /// `y ∧ a + (y - b)_+` with `a <= b`.
    pub fn dual_truncated(t: f64, a: f64, b: f64) -> Result<Self> {
        if !(0.0 <= a && a <= b) {
            return Err(Error::Construction("dual truncated cover needs 0 <= a <= b".into()));
        }
        Ok(IndemnityFunction(Piecewise::new(
            t,
            vec![
                seg(0.0, a, SegmentKind::Full, 0.0),
                seg(a, b, SegmentKind::Flat, a),
                seg(b, f64::INFINITY, SegmentKind::Full, a),
            ],
            None,
        )))
    }

    /// Wraps segments that are already known to be in the class.
    pub fn from_piecewise(p: Piecewise) -> Result<Self> {
        let f = IndemnityFunction(Piecewise::new(p.t, p.segments, p.curve));
        let last = f.0.segments.last().map_or(0.0, |s| if s.hi.is_finite() { s.hi } else { s.lo + 1.0 });
        let grid: Vec<f64> = (0..=2000).map(|i| last * 1.5 * i as f64 / 2000.0).collect();
        match check_class_c(|y| f.eval(y), &grid) {
            None => Ok(f),
            Some(at) => Err(Error::Construction(alloc::format!("not incentive compatible near y = {at}"))),
        }
    }

    pub fn eval(&self, y: f64) -> f64 {
        self.0.eval(y)
    }

    pub fn retained(&self, y: f64) -> f64 {
        y - self.eval(y)
    }

    pub fn t(&self) -> f64 {
        self.0.t
    }

    pub fn piecewise(&self) -> &Piecewise {
        &self.0
    }

    pub fn segments(&self) -> &[Segment] {
        &self.0.segments
    }

    pub fn kinds(&self) -> Vec<SegmentKind> {
        self.0.kinds()
    }
}

fn seg(lo: f64, hi: f64, kind: SegmentKind, anchor: f64) -> Segment {
    Segment { lo, hi, kind, anchor, lambda: None }
}

/// Indemnity in the relaxed class: only `0 <= I(y) <= y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnconstrainedIndemnity(Piecewise);

impl UnconstrainedIndemnity {
    /// `min{y, max{0, φ_λ(t, y)}}`, resolved into segments up to `y_cap`.
    pub fn clipped_phi(lr: &LikelihoodRatio, mkt: &MarketParams, t: f64, lambda: f64, y_cap: f64) -> Result<Self> {
        if lr.singular_atom().is_some() {
            return Err(Error::SingularBelief("singular at a point"));
        }
        let ctx = CurveContext::new(lr, mkt, t);
        let mut segments = Vec::new();
        for (i, piece) in lr.pieces().iter().enumerate() {
            let lo = piece.start;
            let hi = lr.piece_end(i);
            let search_hi = if hi.is_finite() { hi } else { y_cap.max(lo + 1.0) };
            if lo >= search_hi {
                continue;
            }
            let phi = |y: f64| y + (lambda - ctx.loading * piece.value(y)) / ctx.risk_weight;
            let gap = |y: f64| lambda - ctx.loading * piece.value(y);
            let mut cuts = vec![lo];
            for f in [&phi as &dyn Fn(f64) -> f64, &gap] {
                for (a, b) in numeric::sign_change_brackets(f, lo, search_hi, 512) {
                    cuts.push(numeric::bisect(f, a, b, 1e-14 * b.max(1.0))?);
                }
            }
            cuts.sort_by(f64::total_cmp);
            cuts.push(hi);
            for w in cuts.windows(2) {
                let (a, b) = (w[0], w[1]);
                let probe = if b.is_finite() { 0.5 * (a + b) } else if a < search_hi { 0.5 * (a + search_hi) } else { a + 1.0 };
                let v = phi(probe);
                let s = if v <= 0.0 {
                    seg(a, b, SegmentKind::Flat, 0.0)
                } else if v >= probe {
                    seg(a, b, SegmentKind::Full, a)
                } else {
                    Segment { lo: a, hi: b, kind: SegmentKind::Curve, anchor: phi(a), lambda: Some(lambda) }
                };
                segments.push(s);
            }
        }
        Ok(UnconstrainedIndemnity(Piecewise::new(t, segments, Some(ctx))))
    }

    pub fn eval(&self, y: f64) -> f64 {
        self.0.eval(y)
    }

    pub fn slope(&self, y: f64) -> f64 {
        self.0.slope(y)
    }

    pub fn piecewise(&self) -> &Piecewise {
        &self.0
    }

    pub fn segments(&self) -> &[Segment] {
        &self.0.segments
    }

    pub fn lambda(&self) -> Option<f64> {
        self.0.segments.iter().find_map(|s| s.lambda)
    }
}

/// Marginal representation: slopes `q_k ∈ [0, 1]` on grid cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalIndemnity {
    pub grid: Vec<f64>,
    pub slopes: Vec<f64>,
}

impl MarginalIndemnity {
    pub fn new(grid: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        if grid.len() != slopes.len() + 1 || grid.first() != Some(&0.0) {
            return Err(Error::Construction("grid must start at 0 and have one more node than slopes".into()));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Construction("grid must be strictly increasing".into()));
        }
        Ok(MarginalIndemnity { grid, slopes })
    }

    /// Running integral of the slopes at the grid nodes.
    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.grid.len());
        let mut acc = 0.0;
        out.push(0.0);
        for (k, q) in self.slopes.iter().enumerate() {
            acc += q * (self.grid[k + 1] - self.grid[k]);
            out.push(acc);
        }
        out
    }

    /// Linear interpolation, extended flat past the last node.
    pub fn eval(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let k = self.grid.partition_point(|&g| g <= y).saturating_sub(1);
        let values = self.values();
        if k >= self.slopes.len() {
            return values[values.len() - 1];
        }
        values[k] + self.slopes[k] * (y - self.grid[k])
    }

    pub fn is_class_c(&self) -> bool {
        self.slopes.iter().all(|q| (0.0..=1.0).contains(q))
    }
}

/// Checks `I(0) = 0` and `0 <= ΔI <= Δy` on every grid cell. Returns the
/// left end of the first offending cell.
pub fn check_class_c<F: Fn(f64) -> f64>(f: F, grid: &[f64]) -> Option<f64> {
    const TOL: f64 = 1e-10;
    if grid.is_empty() {
        return None;
    }
    if grid[0] == 0.0 && f(0.0).abs() > TOL {
        return Some(0.0);
    }
    let mut prev = f(grid[0]);
    for w in grid.windows(2) {
        let next = f(w[1]);
        let d = next - prev;
        if d < -TOL || d > (w[1] - w[0]) + TOL {
            return Some(w[0]);
        }
        prev = next;
    }
    None
}

/// Free parameters of the parametric family on a partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Params {
    /// `I(y_i)` at the interior breakpoints `y_1 .. y_m`.
    pub endpoint_values: Vec<f64>,
    /// Kink location per interval (used on steep and decreasing intervals).
    pub kinks: Vec<Option<f64>>,
    /// Multiplier for the curve segments.
    pub lambda: f64,
}

/// Bounds of the clip band on a moderate interval `[lo, hi)` with
/// `A = I(lo)`, `B = I(hi)` (`B` unused when `hi` is infinite).
#[derive(Debug, Clone, Copy)]
struct Band {
    lo: f64,
    hi: f64,
    a: f64,
    b: f64,
}

impl Band {
    fn delta(&self) -> f64 {
        self.b - self.a
    }
    fn terminal(&self) -> bool {
        self.hi.is_infinite()
    }
    /// Upper bound `min{A + y - lo, B}` and its segment at `y`.
    fn upper(&self, y: f64) -> (f64, SegmentKind) {
        if self.terminal() || y < self.lo + self.delta() {
            (self.a + y - self.lo, SegmentKind::Full)
        } else {
            (self.b, SegmentKind::Flat)
        }
    }
    /// Lower bound `max{A, B - hi + y}` and its segment at `y`.
    fn lower(&self, y: f64) -> (f64, SegmentKind) {
        if self.terminal() || y < self.hi - self.delta() {
            (self.a, SegmentKind::Flat)
        } else {
            (self.b - self.hi + y, SegmentKind::Full)
        }
    }
}

/// `λ` range outside of which the clipped curve on a moderate interval no
/// longer depends on `λ`: `(λ_min, λ_max)`.
pub fn saturation_bounds(ctx: &CurveContext, lo: f64, hi: f64, a: f64, b: f64, y_cap: f64) -> (f64, f64) {
    let k = ctx.risk_weight;
    let nudge = |y: f64| if hi.is_finite() { y.min(hi - 1e-12 * hi.max(1.0)).max(lo) } else { y };
    if hi.is_infinite() {
        let y = y_cap.max(lo);
        let lr = ctx.lr.value(y);
        (k * (a - y) + ctx.loading * lr, k * (a - lo) + ctx.loading * lr)
    } else {
        let delta = b - a;
        let upper_kink = nudge(lo + delta);
        let lower_kink = nudge(hi - delta);
        (
            k * (b - hi) + ctx.loading * ctx.lr.value(lower_kink),
            k * (a - lo) + ctx.loading * ctx.lr.value(upper_kink),
        )
    }
}

fn clipped_band(ctx: &CurveContext, band: Band, lambda: f64, y_cap: f64, out: &mut Vec<Segment>) -> Result<()> {
    let search_hi = if band.terminal() { y_cap.max(band.lo + 1.0) } else { band.hi };
    let phi = |y: f64| ctx.phi(lambda, y);
    let mut cuts = vec![band.lo];
    if !band.terminal() {
        cuts.push(band.lo + band.delta());
        cuts.push(band.hi - band.delta());
    }
    let lines: [(f64, f64); 4] = [
        (band.a, 0.0),
        (band.b, 0.0),
        (band.a - band.lo, 1.0),
        (band.b - band.hi, 1.0),
    ];
    for (i, &(c, slope)) in lines.iter().enumerate() {
        if band.terminal() && (i == 1 || i == 3) {
            continue;
        }
        let g = |y: f64| phi(y) - (c + slope * y);
        let (ga, gb) = (g(band.lo), g(search_hi));
        if (ga < 0.0 && gb > 0.0) || (ga > 0.0 && gb < 0.0) {
            let root = numeric::bisect(g, band.lo, search_hi, 1e-14 * search_hi.max(1.0))?;
            let near = |c: &f64| c.is_finite() && (root - c).abs() <= 1e-11 * c.abs().max(1.0);
            let snapped = cuts.iter().copied().chain(core::iter::once(band.hi)).find(near).unwrap_or(root);
            cuts.push(snapped);
        }
    }
    cuts.retain(|c| *c >= band.lo && *c <= band.hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.push(band.hi);
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !(b - a > MIN_SEGMENT) {
            continue;
        }
        let probe = if b.is_finite() { 0.5 * (a + b) } else if a < search_hi { 0.5 * (a + search_hi) } else { a + 1.0 };
        let v = phi(probe);
        let (up, up_kind) = band.upper(probe);
        let (low, low_kind) = band.lower(probe);
        let s = if v >= up {
            let anchor = if up_kind == SegmentKind::Full { band.a + a - band.lo } else { band.b };
            seg(a, b, up_kind, anchor)
        } else if v <= low {
            let anchor = if low_kind == SegmentKind::Flat { band.a } else { band.b - band.hi + a };
            seg(a, b, low_kind, anchor)
        } else {
            Segment { lo: a, hi: b, kind: SegmentKind::Curve, anchor: phi(a), lambda: Some(lambda) }
        };
        out.push(s);
    }
    Ok(())
}

/// Assembles the optimal-form indemnity on a partition from its free
/// parameters: steep intervals get a layer (or a deductible on the last
/// interval), moderate intervals follow the clipped `φ_λ`, decreasing
/// intervals get full cover interrupted by a flat stretch.
pub fn build_theorem2(
    partition: &Partition,
    params: &Theorem2Params,
    lr: &LikelihoodRatio,
    mkt: &MarketParams,
    y_cap: f64,
) -> Result<IndemnityFunction> {
    let t = partition.t;
    let n = partition.intervals.len();
    if params.endpoint_values.len() + 1 != n || params.kinks.len() != n {
        return Err(Error::Construction(alloc::format!(
            "{} intervals need {} endpoint values and {} kinks",
            n,
            n - 1,
            n
        )));
    }
    let ctx = CurveContext::new(lr, mkt, t);
    let mut segments = Vec::new();
    let mut a = 0.0;
    let mut uses_curve = false;
    for (i, iv) in partition.intervals.iter().enumerate() {
        let (lo, hi) = (iv.lo, iv.hi);
        let terminal = i + 1 == n;
        let b = if terminal { f64::NAN } else { params.endpoint_values[i] };
        let width = hi - lo;
        if !terminal {
            let delta = b - a;
            if delta < -JOIN_TOLERANCE || delta > width + JOIN_TOLERANCE {
                return Err(Error::Construction(alloc::format!(
                    "endpoint increment {delta} infeasible on [{lo}, {hi})"
                )));
            }
        }
        let kink = |lo_s: f64, hi_s: f64| -> Result<f64> {
            let s = params.kinks[i].ok_or_else(|| Error::Construction(alloc::format!("interval {i} needs a kink")))?;
            if s < lo_s - JOIN_TOLERANCE || s > hi_s + JOIN_TOLERANCE {
                return Err(Error::Construction(alloc::format!("kink {s} outside [{lo_s}, {hi_s}]")));
            }
            Ok(s.clamp(lo_s, hi_s))
        };
        match (iv.label, terminal) {
            (SlopeRegime::Steep, true) => {
                let s = kink(lo, f64::INFINITY)?;
                segments.push(seg(lo, s, SegmentKind::Flat, a));
                segments.push(seg(s, hi, SegmentKind::Full, a));
            }
            (SlopeRegime::Steep, false) => {
                let delta = (b - a).clamp(0.0, width);
                let s = kink(lo, hi - delta)?;
                segments.push(seg(lo, s, SegmentKind::Flat, a));
                segments.push(seg(s, s + delta, SegmentKind::Full, a));
                segments.push(seg(s + delta, hi, SegmentKind::Flat, b));
            }
            (SlopeRegime::Decreasing, true) => {
                let s = kink(lo, f64::INFINITY)?;
                segments.push(seg(lo, s, SegmentKind::Full, a));
                segments.push(seg(s, hi, SegmentKind::Flat, a + s - lo));
            }
            (SlopeRegime::Decreasing, false) => {
                let delta = (b - a).clamp(0.0, width);
                let flat = width - delta;
                let s = kink(lo, hi - flat)?;
                segments.push(seg(lo, s, SegmentKind::Full, a));
                segments.push(seg(s, s + flat, SegmentKind::Flat, a + s - lo));
                segments.push(seg(s + flat, hi, SegmentKind::Full, a + s - lo));
            }
            (SlopeRegime::Moderate, _) => {
                uses_curve = true;
                let band = Band { lo, hi, a, b: if terminal { a } else { b } };
                clipped_band(&ctx, band, params.lambda, y_cap, &mut segments)?;
            }
        }
        if !terminal {
            a = b;
        }
    }
    Ok(IndemnityFunction(Piecewise::new(t, segments, if uses_curve { Some(ctx) } else { None })))
}
