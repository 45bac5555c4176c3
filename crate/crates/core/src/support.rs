//! Initial supports `U`, their direction sets, the spreading envelope, erosions,
//! distances and Hausdorff comparisons.
//!
//! Geometry is planar (`N = 2`, points `(x', x_N)`) unless noted; the subgraph
//! families depend on `|x'|` only, so the same descriptions serve the
//! cylindrical solver in higher dimension.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of directions in envelope grids.
pub const ENVELOPE_DIRECTIONS: usize = 1440;
/// Fallback classification thresholds on `dist(τξ, U)/τ`.
pub const UNBOUNDED_BELOW: f64 = 0.02;
pub const BOUNDED_ABOVE: f64 = 0.05;
/// Dyadic levels `τ₀·2ᵏ`, `k = 0..=FALLBACK_LEVELS`.
pub const FALLBACK_LEVELS: u32 = 12;

/// Certified accuracy of subgraph distances.
const DIST_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SupportError {
    #[error("invalid support parameter: {0}")]
    InvalidParameter(String),
    #[error("distance search did not converge on [{lo}, {hi}] (gap {gap})")]
    NoConvergence { lo: f64, hi: f64, gap: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// Height function `γ(x')` of a subgraph support `{x_N ≤ γ(x')}`, as a function of `r = |x'|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GammaSpec {
    /// `γ = α|x'|`.
    Linear { alpha: f64 },
    /// `γ = β·log(1 + |x'|)`.
    LogCoercive { beta: f64 },
    /// `γ ≡ c`.
    Bounded { c: f64 },
    /// `γ = √r·sin √r` for `r ≥ 1`, a cubic in `r` below with matching value and slope.
    SqrtSine,
    /// `γ = −ℓ|x'|` for `|x'| ≥ core`, quadratic cap inside (value and slope matched).
    Conical { ell: f64, core: f64 },
    /// `γ = −coef·|x'|^p` with `p > 1`: coercive faster than any cone.
    Superlinear { coef: f64, p: f64 },
    /// Piecewise-linear table `Γ(r)`, extended linearly past the last node.
    RadialProfile { r: Vec<f64>, gamma: Vec<f64> },
}

/// Asymptotic slope `lim γ(x')/|x'|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AsymptoticSlope {
    Finite(f64),
    MinusInfinity,
}

fn sqrt_sine_cap() -> (f64, f64) {
    // p(r) = b r² + c r³ with p(1) = sin 1, p'(1) = (sin 1 + cos 1)/2
    let (s, co) = (1f64.sin(), 1f64.cos());
    let c = 0.5 * (s + co) - 2.0 * s;
    (s - c, c)
}

impl GammaSpec {
    pub fn validate(&self) -> Result<(), SupportError> {
        let bad = |m: &str| Err(SupportError::InvalidParameter(m.to_string()));
        match self {
            GammaSpec::Linear { alpha } if !alpha.is_finite() => bad("alpha must be finite"),
            GammaSpec::LogCoercive { beta } if !beta.is_finite() => bad("beta must be finite"),
            GammaSpec::Bounded { c } if !c.is_finite() => bad("c must be finite"),
            GammaSpec::Conical { ell, core } if !(ell.is_finite() && *core > 0.0) => bad("conical needs finite ell and core > 0"),
            GammaSpec::Superlinear { coef, p } if !(*coef > 0.0 && *p > 1.0) => bad("superlinear needs coef > 0, p > 1"),
            GammaSpec::RadialProfile { r, gamma } => {
                if r.len() < 2 || r.len() != gamma.len() {
                    return bad("radial profile needs >= 2 matching nodes");
                }
                if r[0] != 0.0 || r.windows(2).any(|w| w[1] <= w[0]) {
                    return bad("radial profile nodes must start at 0 and increase");
                }
                if gamma.iter().any(|g| !g.is_finite()) {
                    return bad("radial profile values must be finite");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `γ` at `r = |x'|`.
    pub fn eval(&self, r: f64) -> f64 {
        let r = r.abs();
        match self {
            GammaSpec::Linear { alpha } => alpha * r,
            GammaSpec::LogCoercive { beta } => beta * r.ln_1p(),
            GammaSpec::Bounded { c } => *c,
            GammaSpec::SqrtSine => {
                if r >= 1.0 {
                    let s = r.sqrt();
                    s * s.sin()
                } else {
                    let (b, c) = sqrt_sine_cap();
                    b * r * r + c * r * r * r
                }
            }
            GammaSpec::Conical { ell, core } => {
                if r >= *core {
                    -ell * r
                } else {
                    -ell * (core * core + r * r) / (2.0 * core)
                }
            }
            GammaSpec::Superlinear { coef, p } => -coef * r.powf(*p),
            GammaSpec::RadialProfile { r: rs, gamma } => {
                let n = rs.len();
                if r >= rs[n - 1] {
                    let slope = (gamma[n - 1] - gamma[n - 2]) / (rs[n - 1] - rs[n - 2]);
                    gamma[n - 1] + slope * (r - rs[n - 1])
                } else {
                    crate::numerics::interp_linear(rs, gamma, r)
                }
            }
        }
    }

    /// Range of `γ` over `x' ∈ [a, b]` for the families monotone in `|x'|`.
    pub fn range_on(&self, a: f64, b: f64) -> Option<(f64, f64)> {
        let monotone = matches!(
            self,
            GammaSpec::Linear { .. }
                | GammaSpec::LogCoercive { .. }
                | GammaSpec::Bounded { .. }
                | GammaSpec::Conical { .. }
                | GammaSpec::Superlinear { .. }
        );
        if !monotone {
            return None;
        }
        let r_lo = if a <= 0.0 && b >= 0.0 { 0.0 } else { a.abs().min(b.abs()) };
        let r_hi = a.abs().max(b.abs());
        let (g0, g1) = (self.eval(r_lo), self.eval(r_hi));
        Some((g0.min(g1), g0.max(g1)))
    }

    /// Lipschitz bound of `r ↦ γ(r)` on `[0, r_max]`.
    pub fn lipschitz(&self, r_max: f64) -> f64 {
        match self {
            GammaSpec::Linear { alpha } => alpha.abs(),
            GammaSpec::LogCoercive { beta } => beta.abs(),
            GammaSpec::Bounded { .. } => 0.0,
            // |sin√r/(2√r) + cos√r/2| ≤ 1 on r ≥ 1; the cap has slope ≤ 2|b| + 3|c|
            GammaSpec::SqrtSine => {
                let (b, c) = sqrt_sine_cap();
                (2.0 * b.abs() + 3.0 * c.abs()).max(1.0)
            }
            GammaSpec::Conical { ell, .. } => ell.abs(),
            GammaSpec::Superlinear { coef, p } => coef * p * r_max.abs().powf(p - 1.0),
            GammaSpec::RadialProfile { r, gamma } => r
                .windows(2)
                .zip(gamma.windows(2))
                .map(|(x, g)| ((g[1] - g[0]) / (x[1] - x[0])).abs())
                .fold(0.0, f64::max),
        }
    }

    pub fn asymptotic_slope(&self) -> AsymptoticSlope {
        match self {
            GammaSpec::Linear { alpha } => AsymptoticSlope::Finite(*alpha),
            GammaSpec::LogCoercive { .. } | GammaSpec::Bounded { .. } | GammaSpec::SqrtSine => AsymptoticSlope::Finite(0.0),
            GammaSpec::Conical { ell, .. } => AsymptoticSlope::Finite(-ell),
            GammaSpec::Superlinear { .. } => AsymptoticSlope::MinusInfinity,
            GammaSpec::RadialProfile { r, gamma } => {
                let n = r.len();
                AsymptoticSlope::Finite((gamma[n - 1] - gamma[n - 2]) / (r[n - 1] - r[n - 2]))
            }
        }
    }
}

/// Membership predicate of a user-defined support, with a box containing its relevant part.
#[derive(Clone)]
pub struct CustomSupport {
    pub name: String,
    pub predicate: Arc<dyn Fn([f64; 2]) -> bool + Send + Sync>,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    /// Sampling resolution used by distance queries.
    pub h: f64,
}

impl fmt::Debug for CustomSupport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomSupport")
            .field("name", &self.name)
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .field("h", &self.h)
            .finish()
    }
}

/// Initial support `U`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum SupportSpec {
    /// `{x_N ≤ γ(x')}`.
    Subgraph { gamma: GammaSpec },
    /// Closed ball.
    Ball { center: [f64; 2], radius: f64 },
    /// `{x · normal ≤ offset}`, `normal` a unit vector.
    HalfSpace { normal: [f64; 2], offset: f64 },
    /// Closed cone with vertex `0`, axis `−e_N` and half-opening `alpha ∈ (0, π)`.
    Cone { alpha: f64 },
    /// Union of the half-planes `{x_N ≤ ±x' tan β}`, i.e. `{x_N ≤ |x'| tan β}`.
    VShape { beta: f64 },
    /// `⋃_{n ≤ n_max} B̄_{2ⁿ+1} \ B_{2ⁿ−1}`.
    AnnuliUnion { n_max: u32 },
    #[serde(skip)]
    Custom(CustomSupport),
}

impl SupportSpec {
    pub fn subgraph(gamma: GammaSpec) -> Result<Self, SupportError> {
        gamma.validate()?;
        Ok(SupportSpec::Subgraph { gamma })
    }

    pub fn validate(&self) -> Result<(), SupportError> {
        let bad = |m: &str| Err(SupportError::InvalidParameter(m.to_string()));
        match self {
            SupportSpec::Subgraph { gamma } => gamma.validate(),
            SupportSpec::Ball { radius, center } => {
                if !(*radius > 0.0) || center.iter().any(|c| !c.is_finite()) {
                    bad("ball radius must be > 0")
                } else {
                    Ok(())
                }
            }
            SupportSpec::HalfSpace { normal, offset } => {
                let n = (normal[0] * normal[0] + normal[1] * normal[1]).sqrt();
                if (n - 1.0).abs() > 1e-9 || !offset.is_finite() {
                    bad("half-space normal must be a unit vector")
                } else {
                    Ok(())
                }
            }
            SupportSpec::Cone { alpha } => {
                if *alpha > 0.0 && *alpha < PI {
                    Ok(())
                } else {
                    bad("cone half-opening must lie in (0, π)")
                }
            }
            SupportSpec::VShape { beta } => {
                if *beta > -FRAC_PI_2 && *beta < FRAC_PI_2 {
                    Ok(())
                } else {
                    bad("V-shape angle must lie in (−π/2, π/2)")
                }
            }
            SupportSpec::AnnuliUnion { n_max } => {
                if *n_max <= 40 {
                    Ok(())
                } else {
                    bad("annuli union truncated at n_max <= 40")
                }
            }
            SupportSpec::Custom(c) => {
                if c.h > 0.0 && c.lower[0] < c.upper[0] && c.lower[1] < c.upper[1] {
                    Ok(())
                } else {
                    bad("custom support needs a nonempty box and h > 0")
                }
            }
        }
    }

    /// Subgraph height when the support is a subgraph (V-shapes and suitable half-spaces included).
    pub fn as_subgraph(&self) -> Option<GammaSpec> {
        match self {
            SupportSpec::Subgraph { gamma } => Some(gamma.clone()),
            SupportSpec::VShape { beta } => Some(GammaSpec::Linear { alpha: beta.tan() }),
            SupportSpec::HalfSpace { normal, offset } if normal[0] == 0.0 && normal[1] > 0.0 => {
                Some(GammaSpec::Bounded { c: offset / normal[1] })
            }
            _ => None,
        }
    }

    /// Exact membership `x ∈ U` (closed sets).
    pub fn indicator(&self, x: [f64; 2]) -> bool {
        match self {
            SupportSpec::Subgraph { gamma } => x[1] <= gamma.eval(x[0]),
            SupportSpec::Ball { center, radius } => norm([x[0] - center[0], x[1] - center[1]]) <= *radius,
            SupportSpec::HalfSpace { normal, offset } => dot(x, *normal) <= *offset,
            SupportSpec::Cone { alpha } => cone_distance(x, *alpha) == 0.0,
            SupportSpec::VShape { beta } => x[1] <= x[0].abs() * beta.tan(),
            SupportSpec::AnnuliUnion { n_max } => annuli_distance(norm(x), *n_max) == 0.0,
            SupportSpec::Custom(c) => (c.predicate)(x),
        }
    }

    /// `dist(x, U)`.
    pub fn dist(&self, x: [f64; 2]) -> Result<f64, SupportError> {
        Ok(match self {
            SupportSpec::Ball { center, radius } => (norm([x[0] - center[0], x[1] - center[1]]) - radius).max(0.0),
            SupportSpec::HalfSpace { normal, offset } => (dot(x, *normal) - offset).max(0.0),
            SupportSpec::Cone { alpha } => cone_distance(x, *alpha),
            SupportSpec::VShape { beta } => cone_distance(x, FRAC_PI_2 + beta),
            SupportSpec::AnnuliUnion { n_max } => annuli_distance(norm(x), *n_max),
            SupportSpec::Subgraph { gamma } => match gamma {
                // {x_N ≤ α|x'|} is the cone of half-opening π/2 + atan α around −e_N
                GammaSpec::Linear { alpha } => cone_distance(x, FRAC_PI_2 + alpha.atan()),
                GammaSpec::Bounded { c } => (x[1] - c).max(0.0),
                _ => subgraph_distance(gamma, x)?,
            },
            SupportSpec::Custom(c) => custom_distance(c, x),
        })
    }
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn norm(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

/// Polar angle of `x` in `(−π, π]` (`x = (x', x_N)`).
pub fn angle_of(x: [f64; 2]) -> f64 {
    x[1].atan2(x[0])
}

/// Distance from `x` to the closed cone with vertex 0, axis `−e_N`, half-opening `alpha`.
fn cone_distance(x: [f64; 2], alpha: f64) -> f64 {
    let r = norm(x);
    if r == 0.0 {
        return 0.0;
    }
    // angle between x and −e_N
    let phi = (-x[1] / r).clamp(-1.0, 1.0).acos();
    if phi <= alpha {
        0.0
    } else if phi - alpha >= FRAC_PI_2 {
        r
    } else {
        r * (phi - alpha).sin()
    }
}

fn annuli_distance(r: f64, n_max: u32) -> f64 {
    let mut best = f64::INFINITY;
    for n in 0..=n_max {
        let c = 2f64.powi(n as i32);
        let (lo, hi) = ((c - 1.0).max(0.0), c + 1.0);
        let d = if r < lo {
            lo - r
        } else if r > hi {
            r - hi
        } else {
            0.0
        };
        best = best.min(d);
    }
    best
}

/// Branch-and-bound minimization of `D(y) = |x − (y, min(γ(y), x_N))|` over `y`.
fn subgraph_distance(gamma: &GammaSpec, x: [f64; 2]) -> Result<f64, SupportError> {
    let g0 = gamma.eval(x[0]);
    if x[1] <= g0 {
        return Ok(0.0);
    }
    let d_vert = x[1] - g0;
    let (lo, hi) = (x[0] - d_vert, x[0] + d_vert);
    let lip_g = gamma.lipschitz(x[0].abs() + d_vert);
    let lip = (1.0 + lip_g * lip_g).sqrt();
    let d = |y: f64| {
        let gy = gamma.eval(y).min(x[1]);
        ((y - x[0]).powi(2) + (x[1] - gy).powi(2)).sqrt()
    };
    let mut best = d_vert;
    let mut stack = vec![(lo, hi)];
    let mut evaluations = 0usize;
    while let Some((a, b)) = stack.pop() {
        let m = 0.5 * (a + b);
        let dm = d(m);
        evaluations += 1;
        best = best.min(dm);
        let mut lower = dm - lip * 0.5 * (b - a);
        if let Some((glo, ghi)) = gamma.range_on(a, b) {
            // distance to the box holding the curve piece over [a, b]
            let dx = (a - x[0]).max(x[0] - b).max(0.0);
            let dy = (glo.min(x[1]) - x[1]).max(x[1] - ghi.min(x[1])).max(0.0);
            lower = lower.max(dx.hypot(dy));
        }
        if lower >= best - DIST_TOL {
            continue;
        }
        if evaluations > 5_000_000 {
            return Err(SupportError::NoConvergence {
                lo,
                hi,
                gap: best - lower,
            });
        }
        stack.push((a, m));
        stack.push((m, b));
    }
    Ok(best)
}

fn custom_distance(c: &CustomSupport, x: [f64; 2]) -> f64 {
    if (c.predicate)(x) {
        return 0.0;
    }
    let nx = ((c.upper[0] - c.lower[0]) / c.h).floor() as usize + 1;
    let ny = ((c.upper[1] - c.lower[1]) / c.h).floor() as usize + 1;
    let mut best = f64::INFINITY;
    for i in 0..nx {
        for j in 0..ny {
            let p = [c.lower[0] + i as f64 * c.h, c.lower[1] + j as f64 * c.h];
            if (c.predicate)(p) {
                best = best.min(norm([p[0] - x[0], p[1] - x[1]]));
            }
        }
    }
    best
}

/// A closed arc of directions: `θ = start + s`, `s ∈ [0, length]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arc1 {
    pub start: f64,
    pub length: f64,
}

impl Arc1 {
    pub fn contains(&self, theta: f64) -> bool {
        let s = (theta - self.start).rem_euclid(TAU);
        s <= self.length + 1e-12 || (TAU - s) <= 1e-12
    }

    /// Angular distance from `theta` to the arc.
    pub fn distance(&self, theta: f64) -> f64 {
        if self.contains(theta) {
            return 0.0;
        }
        let s = (theta - self.start).rem_euclid(TAU);
        (s - self.length).min(TAU - s)
    }
}

/// How a set of directions is represented.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DirectionRepr {
    /// Union of arcs, exact.
    Arcs(Vec<Arc1>),
    /// Classification on the uniform grid `θ_k = −π + 2πk/n`.
    Grid(Vec<bool>),
}

/// A subset of `S¹`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionSet {
    pub repr: DirectionRepr,
    /// Whether the set is open (otherwise closed) relative to the sphere.
    pub open: bool,
}

impl DirectionSet {
    pub fn empty(open: bool) -> Self {
        DirectionSet {
            repr: DirectionRepr::Arcs(vec![]),
            open,
        }
    }

    pub fn contains(&self, theta: f64) -> bool {
        match &self.repr {
            DirectionRepr::Arcs(arcs) => arcs.iter().any(|a| {
                if self.open {
                    // interior of the closed arc
                    let s = (theta - a.start).rem_euclid(TAU);
                    a.length >= TAU - 1e-12 || (s > 1e-12 && s < a.length - 1e-12)
                } else {
                    a.contains(theta)
                }
            }),
            DirectionRepr::Grid(flags) => flags[grid_index(theta, flags.len())],
        }
    }

    /// Angular distance to the set (`+∞` if empty).
    pub fn angular_distance(&self, theta: f64) -> f64 {
        match &self.repr {
            DirectionRepr::Arcs(arcs) => arcs.iter().map(|a| a.distance(theta)).fold(f64::INFINITY, f64::min),
            DirectionRepr::Grid(flags) => {
                let n = flags.len();
                (0..n)
                    .filter(|&k| flags[k])
                    .map(|k| {
                        let d = (theta - grid_angle(k, n)).rem_euclid(TAU);
                        d.min(TAU - d)
                    })
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        match &self.repr {
            DirectionRepr::Arcs(a) => a.is_empty(),
            DirectionRepr::Grid(f) => !f.iter().any(|&b| b),
        }
    }
}

pub fn grid_angle(k: usize, n: usize) -> f64 {
    -PI + TAU * k as f64 / n as f64
}

fn grid_index(theta: f64, n: usize) -> usize {
    let s = (theta + PI).rem_euclid(TAU);
    ((s / TAU * n as f64).round() as usize) % n
}

/// Direction sets `(𝒰(U), ℬ(U))` plus the directions left undecided.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionSets {
    pub unbounded: DirectionSet,
    pub bounded: DirectionSet,
    /// Grid directions in neither set (empty for analytic results unless the
    /// support itself leaves directions unclassified).
    pub indeterminate: Vec<f64>,
}

impl DirectionSets {
    /// Whether `𝒰 ∪ ℬ` covers every grid direction.
    pub fn covers(&self, n: usize) -> bool {
        (0..n).all(|k| {
            let t = grid_angle(k, n);
            self.unbounded.contains(t) || self.bounded.contains(t)
        })
    }
}

fn arcs_from_unbounded(u: Option<Arc1>) -> DirectionSets {
    match u {
        None => DirectionSets {
            unbounded: DirectionSet::empty(false),
            bounded: DirectionSet {
                repr: DirectionRepr::Arcs(vec![Arc1 { start: -PI, length: TAU }]),
                open: true,
            },
            indeterminate: vec![],
        },
        Some(a) => {
            let rest = TAU - a.length;
            DirectionSets {
                unbounded: DirectionSet {
                    repr: DirectionRepr::Arcs(vec![a]),
                    open: false,
                },
                bounded: if rest > 0.0 {
                    DirectionSet {
                        repr: DirectionRepr::Arcs(vec![Arc1 {
                            start: a.start + a.length,
                            length: rest,
                        }]),
                        open: true,
                    }
                } else {
                    DirectionSet::empty(true)
                },
                indeterminate: vec![],
            }
        }
    }
}

/// Closed arc of directions around `−e_N` with half-opening `alpha`.
fn downward_arc(alpha: f64) -> Arc1 {
    let alpha = alpha.clamp(0.0, PI);
    Arc1 {
        start: -FRAC_PI_2 - alpha,
        length: 2.0 * alpha,
    }
}

/// Direction sets; analytic where the asymptotics are known, numeric otherwise.
pub fn direction_sets(support: &SupportSpec) -> Result<DirectionSets, SupportError> {
    support.validate()?;
    Ok(match support {
        SupportSpec::Ball { .. } => arcs_from_unbounded(None),
        SupportSpec::HalfSpace { normal, .. } => {
            // {e : e · n ≤ 0}
            let tn = angle_of(*normal);
            arcs_from_unbounded(Some(Arc1 {
                start: tn + FRAC_PI_2,
                length: PI,
            }))
        }
        SupportSpec::Cone { alpha } => arcs_from_unbounded(Some(downward_arc(*alpha))),
        SupportSpec::VShape { beta } => arcs_from_unbounded(Some(downward_arc(FRAC_PI_2 + beta))),
        SupportSpec::Subgraph { gamma } => match gamma.asymptotic_slope() {
            AsymptoticSlope::Finite(a) => arcs_from_unbounded(Some(downward_arc(FRAC_PI_2 + a.atan()))),
            AsymptoticSlope::MinusInfinity => arcs_from_unbounded(Some(downward_arc(0.0))),
        },
        // dist(τξ, U)/τ has liminf 0 and limsup > 0 along every ray: neither set
        SupportSpec::AnnuliUnion { .. } => DirectionSets {
            unbounded: DirectionSet::empty(false),
            bounded: DirectionSet::empty(true),
            indeterminate: (0..ENVELOPE_DIRECTIONS).map(|k| grid_angle(k, ENVELOPE_DIRECTIONS)).collect(),
        },
        SupportSpec::Custom(_) => direction_sets_numeric(support, 1.0, 360)?,
    })
}

/// Numeric classification from the trend of `dist(τξ, U)/τ` over `τ = τ₀·2ᵏ`.
pub fn direction_sets_numeric(support: &SupportSpec, tau0: f64, n_dirs: usize) -> Result<DirectionSets, SupportError> {
    let mut unb = vec![false; n_dirs];
    let mut bnd = vec![false; n_dirs];
    let mut indeterminate = vec![];
    let class = |ratio: f64| {
        if ratio < UNBOUNDED_BELOW {
            Some(true)
        } else if ratio > BOUNDED_ABOVE {
            Some(false)
        } else {
            None
        }
    };
    for k in 0..n_dirs {
        let th = grid_angle(k, n_dirs);
        let xi = [th.cos(), th.sin()];
        let mut ratios = Vec::with_capacity(FALLBACK_LEVELS as usize + 1);
        for l in 0..=FALLBACK_LEVELS {
            let tau = tau0 * 2f64.powi(l as i32);
            ratios.push(support.dist([tau * xi[0], tau * xi[1]])? / tau);
        }
        let last = class(ratios[ratios.len() - 1]);
        let prev = class(ratios[ratios.len() - 2]);
        match (last, prev) {
            (Some(true), Some(true)) => unb[k] = true,
            (Some(false), Some(false)) => bnd[k] = true,
            _ => indeterminate.push(th),
        }
    }
    Ok(DirectionSets {
        unbounded: DirectionSet {
            repr: DirectionRepr::Grid(unb),
            open: false,
        },
        bounded: DirectionSet {
            repr: DirectionRepr::Grid(bnd),
            open: true,
        },
        indeterminate,
    })
}

/// Spreading envelope `𝒲 = R⁺𝒰(U) + B_{c*}` sampled as `w(θ)` on the direction grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub c_star: f64,
    pub theta: Vec<f64>,
    /// `w(θ)`; `+∞` on unbounded rays.
    pub w: Vec<f64>,
    pub unbounded: Vec<bool>,
    unbounded_set: DirectionSet,
}

impl Envelope {
    /// `x ∈ 𝒲` (open set): `dist(x, R⁺𝒰) < c*`.
    pub fn contains(&self, x: [f64; 2]) -> bool {
        self.cone_distance(x) < self.c_star
    }

    /// `x ∈ 𝒲̄`.
    pub fn contains_closure(&self, x: [f64; 2]) -> bool {
        self.cone_distance(x) <= self.c_star
    }

    /// `dist(x, R⁺𝒰(U))`, or `|x|` when `𝒰` is empty.
    pub fn cone_distance(&self, x: [f64; 2]) -> f64 {
        let r = norm(x);
        if r == 0.0 {
            return 0.0;
        }
        let phi = self.unbounded_set.angular_distance(angle_of(x));
        if phi >= FRAC_PI_2 {
            r
        } else {
            r * phi.sin()
        }
    }

    /// Two-column CSV `theta,w` (`inf` on unbounded rays).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta,w\n");
        for (t, w) in self.theta.iter().zip(&self.w) {
            out.push_str(&format!("{t},{w}\n"));
        }
        out
    }
}

/// `w(e) = c*/dist(e, R⁺𝒰(U))`, with `w = c*` when no `ξ ∈ 𝒰` has `ξ·e ≥ 0`.
pub fn envelope_w(support: &SupportSpec, c_star: f64) -> Result<Envelope, SupportError> {
    if !(c_star > 0.0) {
        return Err(SupportError::InvalidParameter("c* must be > 0".into()));
    }
    let sets = direction_sets(support)?;
    let n = ENVELOPE_DIRECTIONS;
    let mut theta = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    let mut unbounded = Vec::with_capacity(n);
    for k in 0..n {
        let t = grid_angle(k, n);
        let phi = sets.unbounded.angular_distance(t);
        let wk = if phi == 0.0 {
            f64::INFINITY
        } else if phi >= FRAC_PI_2 {
            c_star
        } else {
            c_star / phi.sin()
        };
        theta.push(t);
        w.push(wk);
        unbounded.push(wk.is_infinite());
    }
    Ok(Envelope {
        c_star,
        theta,
        w,
        unbounded,
        unbounded_set: sets.unbounded,
    })
}

/// Box `[lower, upper]` in the plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

/// Grid points of `U_δ = {x ∈ U : dist(x, ∂U) ≥ δ}` inside `bbox`, from an exact
/// Euclidean distance transform of the sampled complement (padded by `δ + 2h`).
pub fn erode(support: &SupportSpec, delta: f64, h: f64, bbox: BoundingBox) -> Result<Vec<[f64; 2]>, SupportError> {
    if !(delta > 0.0) || !(h > 0.0) || h > delta / 4.0 {
        return Err(SupportError::InvalidParameter("need δ > 0 and 0 < h ≤ δ/4".into()));
    }
    let pad = ((delta + 2.0 * h) / h).ceil() as i64;
    let nx0 = ((bbox.upper[0] - bbox.lower[0]) / h + 1e-9).floor() as i64 + 1;
    let ny0 = ((bbox.upper[1] - bbox.lower[1]) / h + 1e-9).floor() as i64 + 1;
    let nx = (nx0 + 2 * pad) as usize;
    let ny = (ny0 + 2 * pad) as usize;
    let coord = |i: usize, j: usize| {
        [
            bbox.lower[0] + (i as i64 - pad) as f64 * h,
            bbox.lower[1] + (j as i64 - pad) as f64 * h,
        ]
    };
    let inside: Vec<bool> = (0..nx * ny).map(|k| support.indicator(coord(k / ny, k % ny))).collect();
    let d2 = distance_transform(&inside, nx, ny);
    // the boundary lies about half a cell before the nearest outside node
    let thr = (delta / h + 0.5).powi(2);
    let mut out = vec![];
    for i in pad as usize..(pad + nx0) as usize {
        for j in pad as usize..(pad + ny0) as usize {
            if inside[i * ny + j] && d2[i * ny + j] >= thr - 1e-9 {
                out.push(coord(i, j));
            }
        }
    }
    Ok(out)
}

/// Squared distance (in grid units) from each node to the nearest node with `inside == false`.
fn distance_transform(inside: &[bool], nx: usize, ny: usize) -> Vec<f64> {
    let big = 1e20;
    let mut g: Vec<f64> = inside.iter().map(|&b| if b { big } else { 0.0 }).collect();
    let mut buf = vec![0.0; nx.max(ny)];
    // along j (contiguous)
    for i in 0..nx {
        let row = &mut g[i * ny..(i + 1) * ny];
        buf[..ny].copy_from_slice(row);
        dt_1d(&buf[..ny], row);
    }
    // along i
    let mut col = vec![0.0; nx];
    let mut out = vec![0.0; nx];
    for j in 0..ny {
        for i in 0..nx {
            col[i] = g[i * ny + j];
        }
        dt_1d(&col, &mut out);
        for i in 0..nx {
            g[i * ny + j] = out[i];
        }
    }
    g
}

/// One-dimensional squared distance transform (lower envelope of parabolas).
fn dt_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            // z[0] = −∞, so the loop stops at k = 0 at the latest
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, dq) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        *dq = (q as f64 - p as f64).powi(2) + f[p];
    }
}

/// Directed distance `sup_{a∈A} dist(a, B)` by brute force.
pub fn directed_hausdorff_brute(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    if b.is_empty() {
        return f64::INFINITY;
    }
    a.iter()
        .map(|p| b.iter().map(|q| (p[0] - q[0]).hypot(p[1] - q[1])).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// Nearest-neighbour index over a point cloud (R*-tree).
pub struct PointGrid<'a> {
    points: &'a [[f64; 2]],
    tree: rstar::RTree<[f64; 2]>,
}

impl<'a> PointGrid<'a> {
    pub fn new(points: &'a [[f64; 2]]) -> Self {
        PointGrid {
            points,
            tree: rstar::RTree::bulk_load(points.to_vec()),
        }
    }

    /// Distance from `x` to the nearest point of the cloud.
    pub fn nearest(&self, x: [f64; 2]) -> f64 {
        if self.points.is_empty() {
            return f64::INFINITY;
        }
        match self.tree.nearest_neighbor(&x) {
            Some(p) => (p[0] - x[0]).hypot(p[1] - x[1]),
            None => f64::INFINITY,
        }
    }
}

/// Directed distance `sup_{a∈A} dist(a, B)` through a nearest-neighbour index on `B`.
pub fn directed_hausdorff(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    if b.is_empty() {
        return f64::INFINITY;
    }
    let grid = PointGrid::new(b);
    a.par_iter().map(|&p| grid.nearest(p)).reduce(|| 0.0, f64::max)
}

/// Hausdorff distance of two clouds; `0` if both are empty, `+∞` if exactly one is.
pub fn hausdorff(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => 0.0,
        (true, false) | (false, true) => f64::INFINITY,
        _ => directed_hausdorff(a, b).max(directed_hausdorff(b, a)),
    }
}

/// Brute-force Hausdorff distance (reference implementation).
pub fn hausdorff_brute(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => 0.0,
        (true, false) | (false, true) => f64::INFINITY,
        _ => directed_hausdorff_brute(a, b).max(directed_hausdorff_brute(b, a)),
    }
}

/// CSV with one point per row (`x1,x2`).
pub fn cloud_to_csv(points: &[[f64; 2]]) -> String {
    let mut out = String::from("x1,x2\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p[0], p[1]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball(r: f64) -> SupportSpec {
        SupportSpec::Ball {
            center: [0.0, 0.0],
            radius: r,
        }
    }

    fn lin(alpha: f64) -> SupportSpec {
        SupportSpec::subgraph(GammaSpec::Linear { alpha }).unwrap()
    }

    #[test]
    fn indicator_examples() {
        assert!(ball(1.0).indicator([0.5, 0.0]));
        assert!(!lin(1.0).indicator([1.0, 1.5]));
        let ann = SupportSpec::AnnuliUnion { n_max: 8 };
        for n in 0..8 {
            let r = 2f64.powi(n);
            assert!(ann.indicator([r * 0.6, r * 0.8]));
        }
        assert!(!ann.indicator([6.0, 0.0]));
    }

    #[test]
    fn distance_examples() {
        let hs = SupportSpec::HalfSpace {
            normal: [0.0, 1.0],
            offset: 0.0,
        };
        assert_eq!(hs.dist([5.0, 3.0]).unwrap(), 3.0);
        assert_eq!(ball(1.0).dist([0.0, 2.0]).unwrap(), 1.0);
        let c = 3.0;
        assert!((lin(1.0).dist([0.0, c]).unwrap() - c / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn subgraph_search_matches_cone_formula() {
        // the generic search on a table equal to |x'| reproduces the analytic distance
        let table = SupportSpec::subgraph(GammaSpec::RadialProfile {
            r: vec![0.0, 1.0],
            gamma: vec![0.0, 1.0],
        })
        .unwrap();
        for x in [[0.0, 3.0], [2.0, 7.0], [-5.0, 1.0], [0.3, -1.0]] {
            let a = table.dist(x).unwrap();
            let b = lin(1.0).dist(x).unwrap();
            assert!((a - b).abs() <= 1e-6, "{x:?}: {a} vs {b}");
        }
    }

    #[test]
    fn subgraph_distance_vanishes_on_closure() {
        let s = SupportSpec::subgraph(GammaSpec::LogCoercive { beta: -3.0 }).unwrap();
        let g = GammaSpec::LogCoercive { beta: -3.0 };
        for k in 0..50 {
            let x1 = -25.0 + k as f64;
            let y = g.eval(x1);
            assert_eq!(s.dist([x1, y]).unwrap(), 0.0);
            let d = s.dist([x1, y + 0.01]).unwrap();
            assert!(d > 0.0 && d <= 0.01);
        }
    }

    #[test]
    fn sqrt_sine_cap_is_c1() {
        let g = GammaSpec::SqrtSine;
        let e = 1e-7;
        assert!((g.eval(1.0 - e) - g.eval(1.0 + e)).abs() < 1e-6);
        let dl = (g.eval(1.0) - g.eval(1.0 - e)) / e;
        let dr = (g.eval(1.0 + e) - g.eval(1.0)) / e;
        assert!((dl - dr).abs() < 1e-5);
        assert_eq!(g.eval(0.0), 0.0);
        let c = GammaSpec::Conical { ell: 1.0, core: 2.0 };
        assert!((c.eval(2.0) + 2.0).abs() < 1e-15);
        assert!((c.eval(2.0 - e) - c.eval(2.0) - e).abs() < 1e-12);
    }

    #[test]
    fn linear_direction_sets() {
        let s = direction_sets(&lin(1.0)).unwrap();
        // e_N ≤ |e'| ⇔ θ ∉ (π/4, 3π/4)
        for (th, inside) in [(0.0, true), (PI / 4.0, true), (PI / 2.0, false), (-PI / 2.0, true), (PI, true), (0.6 * PI, false)] {
            assert_eq!(s.unbounded.contains(th), inside, "θ={th}");
            assert_eq!(s.bounded.contains(th), !inside, "θ={th}");
        }
        assert!(s.covers(ENVELOPE_DIRECTIONS));
    }

    #[test]
    fn coercive_and_bounded_direction_sets() {
        let s = direction_sets(&SupportSpec::subgraph(GammaSpec::Superlinear { coef: 1.0, p: 2.0 }).unwrap()).unwrap();
        assert!(s.unbounded.contains(-FRAC_PI_2));
        assert!(!s.unbounded.contains(-FRAC_PI_2 + 1e-3));
        let b = direction_sets(&ball(3.0)).unwrap();
        assert!(b.unbounded.is_empty());
        assert!(b.bounded.contains(1.234));
        let ann = direction_sets(&SupportSpec::AnnuliUnion { n_max: 10 }).unwrap();
        assert!(!ann.covers(ENVELOPE_DIRECTIONS));
    }

    #[test]
    fn numeric_fallback_agrees_on_a_cone() {
        let wedge = SupportSpec::Cone { alpha: PI / 3.0 };
        let num = direction_sets_numeric(&wedge, 1.0, 72).unwrap();
        let exact = direction_sets(&wedge).unwrap();
        for k in 0..72 {
            let t = grid_angle(k, 72);
            if exact.unbounded.angular_distance(t) > 0.1 && exact.bounded.contains(t) {
                assert!(num.bounded.contains(t), "θ={t}");
            }
            if exact.unbounded.contains(t) {
                assert!(num.unbounded.contains(t), "θ={t}");
            }
        }
    }

    #[test]
    fn envelope_examples() {
        let c = 2.0;
        let e = envelope_w(&lin(1.0), c).unwrap();
        // {x_N < |x'| + 2√2}
        let shift = c * 2f64.sqrt();
        assert!(e.contains([0.0, shift - 1e-6]));
        assert!(!e.contains([0.0, shift + 1e-6]));
        assert!(e.contains([10.0, 10.0 + shift - 1e-6]));
        assert!(!e.contains([10.0, 10.0 + shift + 1e-6]));
        let flat = envelope_w(&lin(0.0), c).unwrap();
        for (t, w) in flat.theta.iter().zip(&flat.w) {
            if t.sin() > 1e-9 {
                assert!((w - c / t.sin()).abs() < 1e-9 * w);
            } else {
                assert!(w.is_infinite());
            }
        }
        let b = envelope_w(&ball(1.0), c).unwrap();
        assert!(b.w.iter().all(|&w| w == c));
        assert!(b.contains([1.9, 0.0]) && !b.contains([2.1, 0.0]));
        assert!(e.w.iter().all(|&w| w >= c));
    }

    #[test]
    fn erosion_examples() {
        let bb = BoundingBox {
            lower: [-3.0, -3.0],
            upper: [3.0, 3.0],
        };
        let h = 0.05;
        let pts = erode(&ball(2.0), 1.0, h, bb).unwrap();
        assert!(!pts.is_empty());
        assert!(pts.iter().all(|p| norm(*p) <= 1.0 + h));
        // every grid point of B_{1-h} is present
        let expected = (-60..=60)
            .flat_map(|i| (-60..=60).map(move |j| [i as f64 * h, j as f64 * h]))
            .filter(|p| norm(*p) <= 1.0 - 1.5 * h)
            .count();
        assert_eq!(pts.iter().filter(|p| norm(**p) <= 1.0 - 1.5 * h).count(), expected);

        let hs = SupportSpec::HalfSpace {
            normal: [0.0, 1.0],
            offset: 0.0,
        };
        let pts = erode(&hs, 1.0, 0.1, bb).unwrap();
        let top = pts.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        assert!((top + 1.0).abs() < 1e-9, "{top}");

        let ann = SupportSpec::AnnuliUnion { n_max: 4 };
        let big = BoundingBox {
            lower: [-18.0, -18.0],
            upper: [18.0, 18.0],
        };
        let pts = erode(&ann, 1.5, 0.05, big).unwrap();
        assert!(!pts.is_empty());
        assert!(pts.iter().all(|p| norm(*p) <= 3.5 + 0.05), "thin annuli must vanish");
    }

    #[test]
    fn hausdorff_examples() {
        let a = vec![[0.0, 0.0]];
        let b = vec![[3.0, 4.0]];
        assert_eq!(hausdorff(&a, &b), 5.0);
        assert_eq!(hausdorff(&a, &a), 0.0);
        assert_eq!(hausdorff(&[], &[]), 0.0);
        assert!(hausdorff(&a, &[]).is_infinite());
        let h = 0.05;
        let disc = |r: f64| {
            let n = (r / h).ceil() as i64;
            (-n..=n)
                .flat_map(|i| (-n..=n).map(move |j| [i as f64 * h, j as f64 * h]))
                .filter(|p| norm(*p) <= r)
                .collect::<Vec<_>>()
        };
        let (b1, b2) = (disc(1.0), disc(2.0));
        let d = hausdorff(&b1, &b2);
        assert!((d - 1.0).abs() <= 2.0 * h, "{d}");
        assert_eq!(d, hausdorff_brute(&b1, &b2));
    }
}
