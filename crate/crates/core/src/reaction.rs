//! Reaction terms `f` on `[0, 1]` and checkers for their structural hypotheses.
//!
//! Every reaction vanishes at `0` and `1` and is extended by `0` outside `[0, 1]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::adaptive_simpson;

/// Sampling density used for numerical Lipschitz estimates.
const LIPSCHITZ_SAMPLES: usize = 20_000;
/// Absolute tolerance of the trailing-integral quadrature.
const INTEGRAL_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReactionError {
    #[error("invalid reaction parameter: {0}")]
    InvalidParameter(String),
}

/// Shape of the nonlinearity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReactionKind {
    /// `s(1-s)`
    Logistic,
    /// `s^p (1-s)`, `p >= 1`
    PowerKpp { p: f64 },
    /// `0` on `[0, alpha]`, `(s-alpha)(1-s)` above
    Ignition { alpha: f64 },
    /// `s(1-s)(s-a)`
    Bistable { a: f64 },
    /// `s(s-a)(s-b)(s-g)(1-s)`, scaled by `amp_low` on `[0, b]` and `amp_high` on `(b, 1]`.
    Tristable {
        a: f64,
        b: f64,
        g: f64,
        amp_low: f64,
        amp_high: f64,
    },
    /// Piecewise-linear interpolation of samples on a uniform grid of `[0, 1]`.
    Tabulated { samples: Vec<f64> },
}

/// A validated reaction term `scale * kind(s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawReaction", into = "RawReaction")]
pub struct ReactionSpec {
    kind: ReactionKind,
    scale: f64,
}

#[derive(Serialize, Deserialize)]
struct RawReaction {
    #[serde(flatten)]
    kind: ReactionKind,
    #[serde(default = "one")]
    scale: f64,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<RawReaction> for ReactionSpec {
    type Error = ReactionError;
    fn try_from(raw: RawReaction) -> Result<Self, Self::Error> {
        ReactionSpec::new(raw.kind, raw.scale)
    }
}

impl From<ReactionSpec> for RawReaction {
    fn from(spec: ReactionSpec) -> Self {
        RawReaction {
            kind: spec.kind,
            scale: spec.scale,
        }
    }
}

fn invalid(msg: impl Into<String>) -> ReactionError {
    ReactionError::InvalidParameter(msg.into())
}

impl ReactionSpec {
    pub fn new(kind: ReactionKind, scale: f64) -> Result<Self, ReactionError> {
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(invalid(format!("scale must be finite and >= 0, got {scale}")));
        }
        let in_open_unit = |v: f64| v > 0.0 && v < 1.0;
        let kind = match kind {
            ReactionKind::Logistic => ReactionKind::Logistic,
            ReactionKind::PowerKpp { p } => {
                if !(p.is_finite() && p >= 1.0) {
                    return Err(invalid(format!("power_kpp needs p >= 1, got {p}")));
                }
                ReactionKind::PowerKpp { p }
            }
            ReactionKind::Ignition { alpha } => {
                if !in_open_unit(alpha) {
                    return Err(invalid(format!("ignition needs alpha in (0,1), got {alpha}")));
                }
                ReactionKind::Ignition { alpha }
            }
            ReactionKind::Bistable { a } => {
                if !in_open_unit(a) {
                    return Err(invalid(format!("bistable needs a in (0,1), got {a}")));
                }
                ReactionKind::Bistable { a }
            }
            ReactionKind::Tristable {
                a,
                b,
                g,
                amp_low,
                amp_high,
            } => {
                if !(in_open_unit(a) && in_open_unit(b) && in_open_unit(g) && a < b && b < g) {
                    return Err(invalid(format!(
                        "tristable needs 0 < a < b < g < 1, got ({a}, {b}, {g})"
                    )));
                }
                if !(amp_low > 0.0 && amp_high > 0.0 && amp_low.is_finite() && amp_high.is_finite()) {
                    return Err(invalid("tristable amplitudes must be positive"));
                }
                ReactionKind::Tristable {
                    a,
                    b,
                    g,
                    amp_low,
                    amp_high,
                }
            }
            ReactionKind::Tabulated { mut samples } => {
                if samples.len() < 3 {
                    return Err(invalid("tabulated reaction needs at least 3 samples"));
                }
                if samples.iter().any(|v| !v.is_finite()) {
                    return Err(invalid("tabulated samples must be finite"));
                }
                let last = samples.len() - 1;
                samples[0] = 0.0;
                samples[last] = 0.0;
                ReactionKind::Tabulated { samples }
            }
        };
        Ok(Self { kind, scale })
    }

    pub fn logistic() -> Self {
        Self {
            kind: ReactionKind::Logistic,
            scale: 1.0,
        }
    }

    pub fn power_kpp(p: f64) -> Result<Self, ReactionError> {
        Self::new(ReactionKind::PowerKpp { p }, 1.0)
    }

    pub fn ignition(alpha: f64) -> Result<Self, ReactionError> {
        Self::new(ReactionKind::Ignition { alpha }, 1.0)
    }

    pub fn bistable(a: f64) -> Result<Self, ReactionError> {
        Self::new(ReactionKind::Bistable { a }, 1.0)
    }

    pub fn tristable(a: f64, b: f64, g: f64, amp_low: f64, amp_high: f64) -> Result<Self, ReactionError> {
        Self::new(
            ReactionKind::Tristable {
                a,
                b,
                g,
                amp_low,
                amp_high,
            },
            1.0,
        )
    }

    pub fn tabulated(samples: Vec<f64>) -> Result<Self, ReactionError> {
        Self::new(ReactionKind::Tabulated { samples }, 1.0)
    }

    /// Same reaction multiplied by `scale`.
    pub fn scaled(mut self, scale: f64) -> Result<Self, ReactionError> {
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(invalid(format!("scale must be finite and >= 0, got {scale}")));
        }
        self.scale = scale;
        Ok(self)
    }

    pub fn kind(&self) -> &ReactionKind {
        &self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `f(s)`, with `f = 0` outside `[0, 1]`.
    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        if !(s > 0.0 && s < 1.0) {
            return 0.0;
        }
        let v = match &self.kind {
            ReactionKind::Logistic => s * (1.0 - s),
            ReactionKind::PowerKpp { p } => s.powf(*p) * (1.0 - s),
            ReactionKind::Ignition { alpha } => {
                if s <= *alpha {
                    0.0
                } else {
                    (s - alpha) * (1.0 - s)
                }
            }
            ReactionKind::Bistable { a } => s * (1.0 - s) * (s - a),
            ReactionKind::Tristable {
                a,
                b,
                g,
                amp_low,
                amp_high,
            } => {
                let poly = s * (s - a) * (s - b) * (s - g) * (1.0 - s);
                if s <= *b {
                    amp_low * poly
                } else {
                    amp_high * poly
                }
            }
            ReactionKind::Tabulated { samples } => {
                let n = samples.len() - 1;
                let x = s * n as f64;
                let j = (x.floor() as usize).min(n - 1);
                let w = x - j as f64;
                samples[j] * (1.0 - w) + samples[j + 1] * w
            }
        };
        self.scale * v
    }

    /// Adds `scale·f(u[j])` to `acc[j]`; the kind dispatch is hoisted out of the loop.
    pub fn accumulate(&self, u: &[f64], acc: &mut [f64], scale: f64) {
        let k = scale * self.scale;
        match &self.kind {
            ReactionKind::Logistic => {
                for (a, &s) in acc.iter_mut().zip(u) {
                    let v = if s > 0.0 && s < 1.0 { s * (1.0 - s) } else { 0.0 };
                    *a += k * v;
                }
            }
            ReactionKind::Bistable { a: th } => {
                let th = *th;
                for (a, &s) in acc.iter_mut().zip(u) {
                    let v = if s > 0.0 && s < 1.0 { s * (1.0 - s) * (s - th) } else { 0.0 };
                    *a += k * v;
                }
            }
            _ => {
                for (a, &s) in acc.iter_mut().zip(u) {
                    *a += scale * self.eval(s);
                }
            }
        }
    }

    /// `f'(0)` (right derivative).
    pub fn derivative_at_zero(&self) -> f64 {
        let d = match &self.kind {
            ReactionKind::Logistic => 1.0,
            ReactionKind::PowerKpp { p } => {
                if *p == 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ReactionKind::Ignition { .. } => 0.0,
            ReactionKind::Bistable { a } => -a,
            ReactionKind::Tristable { a, b, g, amp_low, .. } => -a * b * g * amp_low,
            ReactionKind::Tabulated { samples } => {
                // one-sided differences at h and h/2, Richardson-combined
                let h = 1.0 / (samples.len() - 1) as f64;
                let unit = ReactionSpec {
                    kind: self.kind.clone(),
                    scale: 1.0,
                };
                let d1 = unit.eval(h) / h;
                let d2 = unit.eval(0.5 * h) / (0.5 * h);
                2.0 * d2 - d1
            }
        };
        self.scale * d
    }

    /// `f'(1)` (left derivative); negative when `1` is linearly stable.
    pub fn derivative_at_one(&self) -> f64 {
        self.derivative_at(1.0)
    }

    /// One-sided numerical derivative at an interior or end point, used for
    /// linearizations at equilibria.
    pub fn derivative_at(&self, s: f64) -> f64 {
        let d = match (&self.kind, s) {
            (ReactionKind::Logistic, _) => 1.0 - 2.0 * s,
            (ReactionKind::Bistable { a }, _) => {
                // d/ds [s(1-s)(s-a)] = -3s^2 + 2(1+a)s - a
                -3.0 * s * s + 2.0 * (1.0 + a) * s - a
            }
            (ReactionKind::Ignition { alpha }, _) if s > *alpha => 1.0 + alpha - 2.0 * s,
            _ => {
                let h = 1e-6;
                let unit = ReactionSpec {
                    kind: self.kind.clone(),
                    scale: 1.0,
                };
                if s >= 1.0 {
                    (3.0 * unit.eval_closed(1.0) - 4.0 * unit.eval_closed(1.0 - h) + unit.eval_closed(1.0 - 2.0 * h))
                        / (2.0 * h)
                } else if s <= 0.0 {
                    (-3.0 * unit.eval_closed(0.0) + 4.0 * unit.eval_closed(h) - unit.eval_closed(2.0 * h)) / (2.0 * h)
                } else {
                    (unit.eval_closed(s + h) - unit.eval_closed(s - h)) / (2.0 * h)
                }
            }
        };
        self.scale * d
    }

    // eval on the closed interval (endpoints are zeros anyway)
    fn eval_closed(&self, s: f64) -> f64 {
        self.eval(s.clamp(0.0, 1.0))
    }

    /// Lipschitz constant of `f` on `[0, 1]`.
    ///
    /// Analytic where cheap, otherwise the maximal slope over a dense sampling
    /// (exact for tabulated reactions).
    pub fn lipschitz(&self) -> f64 {
        match &self.kind {
            ReactionKind::Logistic => self.scale,
            ReactionKind::Tabulated { samples } => {
                let n = (samples.len() - 1) as f64;
                self.scale
                    * samples
                        .windows(2)
                        .map(|w| (w[1] - w[0]).abs() * n)
                        .fold(0.0, f64::max)
            }
            _ => {
                let n = LIPSCHITZ_SAMPLES;
                let h = 1.0 / n as f64;
                let mut prev = self.eval(0.0);
                let mut best = 0.0f64;
                for i in 1..=n {
                    let cur = self.eval(i as f64 * h);
                    best = best.max((cur - prev).abs() / h);
                    prev = cur;
                }
                // sampled chord slopes underestimate the sup by O(h)
                best * (1.0 + 1e-3)
            }
        }
    }

    /// `∫_a^b f` by adaptive Simpson, with its error bound.
    pub fn integral(&self, a: f64, b: f64) -> (f64, f64) {
        let f = |s: f64| self.eval(s);
        // split at kinks so that Simpson sees smooth pieces
        let mut cuts = vec![a, b];
        match &self.kind {
            ReactionKind::Ignition { alpha } => cuts.push(*alpha),
            ReactionKind::Tristable { b: mid, .. } => cuts.push(*mid),
            ReactionKind::Tabulated { samples } => {
                let n = samples.len() - 1;
                cuts.extend((1..n).map(|j| j as f64 / n as f64));
            }
            _ => {}
        }
        let (lo, hi) = (a.min(b), a.max(b));
        cuts.retain(|c| *c >= lo && *c <= hi);
        cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        cuts.dedup();
        let pieces = (cuts.len() - 1).max(1) as f64;
        let mut total = 0.0;
        let mut err = 0.0;
        for w in cuts.windows(2) {
            let (v, e) = adaptive_simpson(&f, w[0], w[1], INTEGRAL_TOL / pieces);
            total += v;
            err += e;
        }
        if a > b {
            total = -total;
        }
        (total, err.max(INTEGRAL_TOL))
    }
}

/// Outcome of the invasion-hypothesis checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvasionCheck {
    pub invasion_holds: bool,
    /// Smallest grid value `θ` such that `f > 0` on `[θ, 1 - 1/n]`.
    pub theta: Option<f64>,
    pub trailing_integrals_positive: bool,
    /// Some trailing integral was within its quadrature error of zero.
    pub integrals_indeterminate: bool,
}

/// Outcome of the Fisher-KPP class checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KppCheck {
    pub kpp0_holds: bool,
    pub fkpp_holds: bool,
    pub hair_trigger_exponent_ok: bool,
}

/// Combined structural report for a reaction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub invasion_holds: bool,
    pub theta: Option<f64>,
    pub trailing_integrals_positive: bool,
    pub kpp0_holds: bool,
    pub fkpp_holds: bool,
    pub hair_trigger_exponent_ok: bool,
}

/// Checks `f > 0` on `[θ, 1)` and `∫_t^1 f > 0` for all `t ∈ [0, 1)` on a uniform grid.
pub fn check_invasion(spec: &ReactionSpec, grid_n: usize) -> InvasionCheck {
    let n = grid_n.max(100);
    let margin = 1e-12 * spec.lipschitz();
    let s = |j: usize| j as f64 / n as f64;

    // scan down from 1 - 1/n for the last non-positive sample
    let mut theta = None;
    if spec.eval(s(n - 1)) > margin {
        let mut j = n - 1;
        while j > 1 && spec.eval(s(j - 1)) > margin {
            j -= 1;
        }
        theta = Some(s(j));
    }

    // cumulative trailing integrals from 1 downwards
    let mut positive = true;
    let mut indeterminate = false;
    let mut acc = 0.0;
    let mut acc_err = 0.0;
    for j in (0..n).rev() {
        let (v, e) = spec.integral(s(j), s(j + 1));
        acc += v;
        acc_err += e;
        if acc <= acc_err {
            positive = false;
            if acc >= -acc_err {
                indeterminate = true;
            }
        }
    }

    InvasionCheck {
        invasion_holds: theta.is_some() && positive,
        theta,
        trailing_integrals_positive: positive,
        integrals_indeterminate: indeterminate,
    }
}

/// Checks `0 < f(s) <= f'(0) s`, monotonicity of `f(s)/s`, and the hair-trigger
/// growth condition `liminf f(s)/s^{1+2/N} > 0` in dimension `dim`.
pub fn check_kpp_class(spec: &ReactionSpec, grid_n: usize, dim: usize) -> KppCheck {
    let n = grid_n.max(100);
    let margin = 1e-12 * spec.lipschitz();
    let d0 = spec.derivative_at_zero();
    let mut positive = true;
    let mut below_tangent = true;
    let mut ratio_nonincreasing = true;
    let mut prev_ratio = f64::INFINITY;
    for j in 1..n {
        let s = j as f64 / n as f64;
        let v = spec.eval(s);
        if v <= margin {
            positive = false;
        }
        if v > d0 * s + margin {
            below_tangent = false;
        }
        let r = v / s;
        if r > prev_ratio + margin {
            ratio_nonincreasing = false;
        }
        prev_ratio = r;
    }
    // f(1)/1 = 0 closes the monotonicity on (0, 1]
    if 0.0 > prev_ratio + margin {
        ratio_nonincreasing = false;
    }

    // local log-log slope of f near 0 must not exceed 1 + 2/N
    let q = 1.0 + 2.0 / dim.max(1) as f64;
    let s1 = 1e-10;
    let s2 = 1e-12;
    let (f1, f2) = (spec.eval(s1), spec.eval(s2));
    let hair = positive && f1 > 0.0 && f2 > 0.0 && {
        let slope = (f1.ln() - f2.ln()) / (s1.ln() - s2.ln());
        slope <= q + 1e-6
    };

    KppCheck {
        kpp0_holds: positive && below_tangent,
        fkpp_holds: positive && ratio_nonincreasing,
        hair_trigger_exponent_ok: hair,
    }
}

pub fn check_hypotheses(spec: &ReactionSpec, grid_n: usize, dim: usize) -> HypothesisReport {
    let inv = check_invasion(spec, grid_n);
    let kpp = check_kpp_class(spec, grid_n, dim);
    HypothesisReport {
        invasion_holds: inv.invasion_holds,
        theta: inv.theta,
        trailing_integrals_positive: inv.trailing_integrals_positive,
        kpp0_holds: kpp.kpp0_holds,
        fkpp_holds: kpp.fkpp_holds,
        hair_trigger_exponent_ok: kpp.hair_trigger_exponent_ok,
    }
}
