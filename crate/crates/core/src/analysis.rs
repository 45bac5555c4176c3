//! Post-processing: speeds, logarithmic lags, envelope comparisons, audits,
//! terraces and invasion thresholds.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use rayon::prelude::*;

use crate::levelset::{column_crossing, LevelSetSeries, UpperLevelCloud};
use crate::numerics::least_squares;
use crate::pde::{self, Boundary, Domain, Field, PdeError, Scheme, SolverConfig};
use crate::reaction::ReactionSpec;
use crate::support::{self, Envelope, GammaSpec, SupportError, SupportSpec};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("invalid fit window ({0}, {1}): need t0 >= 10 and t1/t0 >= 4")]
    Window(f64, f64),
    #[error("only {found} observations in the fit window (need {needed})")]
    TooFew { found: usize, needed: usize },
    #[error("ill-conditioned normal equations (condition {0:.3e}); widen the fit window")]
    IllConditioned(f64),
    #[error("covering fails for delta = {delta}: required {required:.4}")]
    Covering { delta: f64, required: f64 },
    #[error("threshold outcomes are not monotone in L: {0}")]
    NonMonotone(String),
    #[error("undecided outcome at L = {l}: u(T,0) = {center:.4}, max u = {max:.4}")]
    Undecided { l: f64, center: f64, max: f64 },
    #[error("no threshold in range: {0}")]
    NoBracket(String),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Support(#[from] SupportError),
}

pub const MIN_OBSERVATIONS: usize = 50;
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagMode {
    FitAll,
    FixSpeed,
}

/// `X(t) ≈ c·t − k·log t − b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagFit {
    pub c: f64,
    pub k: f64,
    pub b: f64,
    pub rms: f64,
    pub window: (f64, f64),
    pub mode: LagMode,
    pub observations: usize,
    pub condition: f64,
}

/// Last 75% of `[10, t_end]` in log-time.
pub fn default_window(t_end: f64) -> (f64, f64) {
    let t0 = 10f64;
    if t_end <= t0 {
        return (t0, t_end);
    }
    ((t0.ln() + 0.25 * (t_end.ln() - t0.ln())).exp(), t_end)
}

fn windowed(times: &[f64], xs: &[f64], window: (f64, f64)) -> Result<(Vec<f64>, Vec<f64>), AnalysisError> {
    let (t0, t1) = window;
    if !(t0 >= 10.0) || !(t1 >= 4.0 * t0) {
        return Err(AnalysisError::Window(t0, t1));
    }
    let eps = 1e-9 * t1;
    let (t, x): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(xs)
        .filter(|(t, x)| **t >= t0 - eps && **t <= t1 + eps && x.is_finite())
        .map(|(t, x)| (*t, *x))
        .unzip();
    if t.len() < MIN_OBSERVATIONS {
        return Err(AnalysisError::TooFew {
            found: t.len(),
            needed: MIN_OBSERVATIONS,
        });
    }
    Ok((t, x))
}

/// Lag regression on raw `(t, X)` data. In `FixSpeed` mode `c` is the imposed speed.
pub fn fit_lag_xy(times: &[f64], xs: &[f64], mode: LagMode, c: f64, window: (f64, f64)) -> Result<LagFit, AnalysisError> {
    let (t, x) = windowed(times, xs, window)?;
    let (coef, rms, cond) = match mode {
        LagMode::FixSpeed => {
            let y: Vec<f64> = t.iter().zip(&x).map(|(t, x)| c * t - x).collect();
            let ls = least_squares(&t, &y, |t| vec![t.ln(), 1.0]);
            (vec![c, ls.coefficients[0], ls.coefficients[1]], ls.residual_rms, ls.normal_condition)
        }
        LagMode::FitAll => {
            let ls = least_squares(&t, &x, |t| vec![t, t.ln(), 1.0]);
            let a = &ls.coefficients;
            (vec![a[0], -a[1], -a[2]], ls.residual_rms, ls.normal_condition)
        }
    };
    if !(cond <= MAX_CONDITION) {
        return Err(AnalysisError::IllConditioned(cond));
    }
    Ok(LagFit {
        c: coef[0],
        k: coef[1],
        b: coef[2],
        rms,
        window,
        mode,
        observations: t.len(),
        condition: cond,
    })
}

/// Lag fit of a level-set series at the column nearest `x0`; `window = None` uses [`default_window`].
pub fn fit_lag(
    series: &LevelSetSeries,
    x0: f64,
    mode: LagMode,
    c: f64,
    window: Option<(f64, f64)>,
) -> Result<LagFit, AnalysisError> {
    let (t, x) = series.trace(x0);
    let w = window.unwrap_or_else(|| default_window(t.last().copied().unwrap_or(0.0)));
    fit_lag_xy(&t, &x, mode, c, w)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedEstimate {
    pub c: f64,
    /// Half-width of the 95% interval (normal approximation; n ≥ 50).
    pub ci: f64,
    pub rms: f64,
    pub window: (f64, f64),
    pub observations: usize,
}

pub fn estimate_speed_xy(times: &[f64], xs: &[f64], window: (f64, f64)) -> Result<SpeedEstimate, AnalysisError> {
    let (t, x) = windowed(times, xs, window)?;
    let ls = least_squares(&t, &x, |t| vec![t, 1.0]);
    if !(ls.normal_condition <= MAX_CONDITION) {
        return Err(AnalysisError::IllConditioned(ls.normal_condition));
    }
    Ok(SpeedEstimate {
        c: ls.coefficients[0],
        ci: 1.96 * ls.std_errors[0],
        rms: ls.residual_rms,
        window,
        observations: t.len(),
    })
}

pub fn estimate_speed(series: &LevelSetSeries, x0: f64, window: Option<(f64, f64)>) -> Result<SpeedEstimate, AnalysisError> {
    let (t, x) = series.trace(x0);
    let w = window.unwrap_or_else(|| default_window(t.last().copied().unwrap_or(0.0)));
    estimate_speed_xy(&t, &x, w)
}

/// Minimal speed of the linearized scheme on a lattice of spacing `h` with step `dt`
/// (the speed the discrete leading edge actually travels at).
pub fn discrete_kpp_speed(f0: f64, h: f64, dt: f64, scheme: Scheme) -> f64 {
    discrete_kpp_speed_along(f0, h, dt, scheme, 0.0)
}

/// As [`discrete_kpp_speed`] for a planar front on the square lattice whose normal makes
/// angle `theta` with the `x_N` axis (the lattice is anisotropic away from the axes).
pub fn discrete_kpp_speed_along(f0: f64, h: f64, dt: f64, scheme: Scheme, theta: f64) -> f64 {
    let (e1, e2) = (theta.sin().abs(), theta.cos().abs());
    let d1 = |l: f64| (2.0 * (l * h).cosh() - 2.0) / (h * h);
    let d = |l: f64| d1(l * e2) + if e1 > 0.0 { d1(l * e1) } else { 0.0 };
    let speed = |l: f64| -> f64 {
        let g = match scheme {
            Scheme::ExplicitEuler => (1.0 + dt * (d(l) + f0)).ln(),
            Scheme::StrangSplit => {
                let x = dt * d(l);
                if x >= 1.0 {
                    return f64::INFINITY;
                }
                f0 * dt - (1.0 - x).ln()
            }
        };
        g / (l * dt)
    };
    let l0 = f0.sqrt();
    let (mut a, mut b) = (0.05 * l0, 4.0 * l0);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let m1 = b - phi * (b - a);
        let m2 = a + phi * (b - a);
        if speed(m1) < speed(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    speed(0.5 * (a + b))
}

/// Front speed measured from a 1D run on the same lattice and time step: `X_{1/2}` slope over `[t_end/4, t_end]`.
pub fn measured_speed_1d(spec: &ReactionSpec, h: f64, dt: f64, scheme: Scheme, t_end: f64) -> Result<f64, AnalysisError> {
    let len = 60.0;
    let dom = Domain::line(-len, len, h, [Boundary::ONE, Boundary::ZERO])?;
    let field = Field::from_fn(dom, |_, x| if x <= 0.0 { 1.0 } else { 0.0 });
    let mut cfg = SolverConfig::explicit(t_end, t_end / 200.0);
    cfg.scheme = scheme;
    cfg.dt = pde::TimeStep::Fixed(dt);
    cfg.frame = pde::FramePolicy::TrackLevel { lambda: 0.5, trigger: 0.6 };
    cfg.lambdas = vec![0.5];
    let rec = pde::advance(field, spec, &cfg, &mut [])?;
    let (t, x) = rec.series[0].trace(0.0);
    let (t, x): (Vec<f64>, Vec<f64>) = t.into_iter().zip(x).filter(|(t, _)| *t >= 0.25 * t_end).unzip();
    if t.len() < 3 {
        return Err(AnalysisError::Input("too few samples for a 1D speed".into()));
    }
    Ok(least_squares(&t, &x, |t| vec![t, 1.0]).coefficients[0])
}

// ---------------------------------------------------------------------------
// envelopes

/// How clouds map to the full plane: mirror across `x1 = 0` for half domains, and fill
/// the region below the computational domain (where `u ≈ 1`) on the cloud lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudCompletion {
    pub mirror_x1: bool,
    /// Domain bottom and lattice spacing of the filler.
    pub fill_below: Option<(f64, f64)>,
}

impl CloudCompletion {
    pub const NONE: CloudCompletion = CloudCompletion {
        mirror_x1: false,
        fill_below: None,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeComparison {
    pub times: Vec<f64>,
    pub local: Vec<f64>,
    pub global_gap: Vec<f64>,
    /// Entries where exactly one of the compared sets was empty (distance reported as +inf).
    pub flagged: Vec<bool>,
    pub r: f64,
    pub resolution: f64,
}

/// Points of `𝒲 ∩ B̄_R` on a lattice of spacing `res`.
pub fn sample_envelope(env: &Envelope, r: f64, res: f64) -> Vec<[f64; 2]> {
    let n = (r / res).floor() as i64;
    let mut out = vec![];
    for i in -n..=n {
        for j in -n..=n {
            let p = [i as f64 * res, j as f64 * res];
            if p[0].hypot(p[1]) <= r && env.contains_closure(p) {
                out.push(p);
            }
        }
    }
    out
}

fn rescaled_cloud(cloud: &UpperLevelCloud, r: f64, completion: &CloudCompletion) -> Vec<[f64; 2]> {
    let t = cloud.time;
    let rr = r * t;
    let mut out = vec![];
    for p in &cloud.points {
        if p[0].hypot(p[1]) <= rr {
            out.push([p[0] / t, p[1] / t]);
            if completion.mirror_x1 && p[0] > 0.0 {
                out.push([-p[0] / t, p[1] / t]);
            }
        }
    }
    if let Some((bottom, s)) = completion.fill_below {
        let n = (rr / s).floor() as i64;
        for i in -n..=n {
            let x1 = i as f64 * s;
            let mut x2 = bottom - s;
            while x2 >= -rr {
                if x1.hypot(x2) <= rr {
                    out.push([x1 / t, x2 / t]);
                }
                x2 -= s;
            }
        }
    }
    out
}

/// Hausdorff distance with the conventions `d(∅,∅) = 0`, `d(A,∅) = +∞`.
fn hausdorff_flagged(a: &[[f64; 2]], b: &[[f64; 2]]) -> (f64, bool) {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => (0.0, false),
        (false, false) => (support::hausdorff(a, b), false),
        _ => (f64::INFINITY, true),
    }
}

/// Upper boundary of `{dist(·,U) ≤ s}` above `x'` for a subgraph `U`:
/// `max_{|y−x'| ≤ s} γ(y) + √(s² − (y−x')²)`, sampled then refined around the best sample.
fn thickened_top(gamma: &GammaSpec, x1: f64, s: f64, res: f64) -> f64 {
    let top = |y: f64| gamma.eval(y) + (s * s - (y - x1) * (y - x1)).max(0.0).sqrt();
    let dy = (0.25 * res).min(s / 64.0).max(1e-9);
    let n = (2.0 * s / dy).ceil() as usize;
    let mut best = (top(x1), x1);
    let consider = |y: f64, best: &mut (f64, f64)| {
        let v = top(y);
        if v > best.0 {
            *best = (v, y);
        }
    };
    for k in 0..=n {
        consider((x1 - s + k as f64 * 2.0 * s / n as f64).clamp(x1 - s, x1 + s), &mut best);
    }
    if (x1 - s..=x1 + s).contains(&0.0) {
        consider(0.0, &mut best);
    }
    // golden section around the best sample
    let (mut a, mut b) = ((best.1 - dy).max(x1 - s), (best.1 + dy).min(x1 + s));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..40 {
        let (c, d) = (b - g * (b - a), a + g * (b - a));
        if top(c) >= top(d) {
            b = d;
        } else {
            a = c;
        }
    }
    consider(0.5 * (a + b), &mut best);
    best.0
}

/// `d_H(F, {dist(·,U) ≤ s})` restricted to the box `[x1_lo, x1_hi] × [x2_lo, x2_hi]`,
/// with the thickened set sampled on the lattice of spacing `res`.
pub fn global_gap(
    cloud: &[[f64; 2]],
    support: &SupportSpec,
    s: f64,
    bbox: support::BoundingBox,
    res: f64,
) -> Result<(f64, bool), AnalysisError> {
    let n1 = ((bbox.upper[0] - bbox.lower[0]) / res).floor() as usize + 1;
    let n2 = ((bbox.upper[1] - bbox.lower[1]) / res).floor() as usize + 1;
    let mut thick = vec![];
    let mut forward = 0.0f64;
    if let Some(gamma) = support.as_subgraph() {
        // per column: the thickened set is everything below its top
        let tops: Vec<f64> = (0..n1)
            .into_par_iter()
            .map(|i| thickened_top(&gamma, bbox.lower[0] + i as f64 * res, s, res))
            .collect();
        for (i, top) in tops.iter().enumerate() {
            let x1 = bbox.lower[0] + i as f64 * res;
            for j in 0..n2 {
                let x2 = bbox.lower[1] + j as f64 * res;
                if x2 <= *top {
                    thick.push([x1, x2]);
                }
            }
        }
        // only the highest point of F per column can maximize dist(·,U) − s
        let mut best: std::collections::BTreeMap<i64, f64> = Default::default();
        for p in cloud {
            let key = (p[0] / res).round() as i64;
            let e = best.entry(key).or_insert(f64::NEG_INFINITY);
            *e = e.max(p[1]);
        }
        for (k, top) in best {
            let d = support.dist([k as f64 * res, top])?;
            forward = forward.max(d - s);
        }
    } else {
        for i in 0..n1 {
            for j in 0..n2 {
                let p = [bbox.lower[0] + i as f64 * res, bbox.lower[1] + j as f64 * res];
                if support.dist(p)? <= s {
                    thick.push(p);
                }
            }
        }
        for p in cloud {
            forward = forward.max(support.dist(*p)? - s);
        }
    }
    match (cloud.is_empty(), thick.is_empty()) {
        (true, true) => return Ok((0.0, false)),
        (false, false) => {}
        _ => return Ok((f64::INFINITY, true)),
    }
    let backward = support::directed_hausdorff(&thick, cloud);
    Ok((forward.max(0.0).max(backward), false))
}

/// Local (rescaled) and global envelope comparison for a series of clouds.
///
/// `gap_box`/`gap_res` bound and resolve the global gap; `None` skips it (reported as NaN).
pub fn compare_envelope(
    clouds: &[UpperLevelCloud],
    support: &SupportSpec,
    c_star: f64,
    r: f64,
    resolution: f64,
    completion: &CloudCompletion,
    gap: Option<(support::BoundingBox, f64)>,
) -> Result<EnvelopeComparison, AnalysisError> {
    let env = support::envelope_w(support, c_star)?;
    let target = sample_envelope(&env, r, resolution);
    let mut out = EnvelopeComparison {
        times: vec![],
        local: vec![],
        global_gap: vec![],
        flagged: vec![],
        r,
        resolution,
    };
    for cloud in clouds {
        let a = rescaled_cloud(cloud, r, completion);
        let (d, flag) = hausdorff_flagged(&a, &target);
        let (g, gflag) = match gap {
            Some((bbox, res)) => global_gap(&cloud.points, support, c_star * cloud.time, bbox, res)?,
            None => (f64::NAN, false),
        };
        out.times.push(cloud.time);
        out.local.push(d);
        out.global_gap.push(g);
        out.flagged.push(flag || gflag);
    }
    Ok(out)
}

/// `d_H(F_λ(t), U + B_{c*t}) / log t` for `t > 1` (NaN otherwise).
pub fn envelope_gap_ratio(cmp: &EnvelopeComparison) -> Vec<f64> {
    cmp.times
        .iter()
        .zip(&cmp.global_gap)
        .map(|(&t, &g)| if t > 1.0 { g / t.ln() } else { f64::NAN })
        .collect()
}

/// Upper-inclusion audit: smallest `R(t)` with `F_λ(t) ⊆ {dist(·,U) ≤ c*t + ((N−2)/c*)·log t + R}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InclusionAudit {
    pub times: Vec<f64>,
    pub excess: Vec<f64>,
    /// Max of `excess` over `t ≥ 1` (the run constant).
    pub run_constant: f64,
}

pub fn inclusion_audit(
    clouds: &[UpperLevelCloud],
    support: &SupportSpec,
    c_star: f64,
    dim: u32,
) -> Result<InclusionAudit, AnalysisError> {
    let mut times = vec![];
    let mut excess = vec![];
    let subgraph = support.as_subgraph().is_some();
    for c in clouds {
        let t = c.time;
        let allowance = c_star * t + if t > 0.0 { (dim as f64 - 2.0) / c_star * t.ln() } else { 0.0 };
        let mut worst = f64::NEG_INFINITY;
        if subgraph {
            let mut tops: std::collections::BTreeMap<u64, [f64; 2]> = Default::default();
            for p in &c.points {
                let e = tops.entry(p[0].to_bits()).or_insert(*p);
                if p[1] > e[1] {
                    *e = *p;
                }
            }
            for p in tops.values() {
                worst = worst.max(support.dist(*p)? - allowance);
            }
        } else {
            for p in &c.points {
                worst = worst.max(support.dist(*p)? - allowance);
            }
        }
        times.push(t);
        excess.push(worst);
    }
    let run_constant = times
        .iter()
        .zip(&excess)
        .filter(|(t, _)| **t >= 1.0)
        .map(|(_, e)| *e)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(InclusionAudit {
        times,
        excess,
        run_constant,
    })
}

// ---------------------------------------------------------------------------
// sum-of-translates supersolution

/// Lattice `{(k, γ(k) − m) : |k| ≤ k_max, m = 0..}` used by the audit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SumAuditOptions {
    pub delta: f64,
    pub k_max: i64,
    /// Audit every `stride`-th node in each direction.
    pub stride: usize,
    /// Only audit nodes with `|x1| ≤ x1_max` (lateral truncation influence).
    pub x1_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SumAudit {
    pub times: Vec<f64>,
    /// `max (u − min(v, 1))` per audited time.
    pub violation: Vec<f64>,
    pub max_violation: f64,
    pub audited_points: usize,
    pub required_delta: f64,
}

/// Smallest radius for which the balls `B_δ(k, γ(k) − m)` cover the subgraph of `γ`
/// on `|x'| ≤ r_max` (sampled at spacing 0.01).
pub fn covering_radius(gamma: &GammaSpec, r_max: f64) -> f64 {
    let s = 0.01;
    let n = (r_max / s).ceil() as i64;
    let mut worst = 0.0f64;
    for i in -n..=n {
        let x1 = i as f64 * s;
        let top = gamma.eval(x1.abs());
        // below two layers the pattern repeats
        for j in 0..=300 {
            let y = top - j as f64 * s;
            worst = worst.max(lattice_distance(gamma, x1, y, i64::MAX));
        }
    }
    worst
}

fn lattice_distance(gamma: &GammaSpec, x1: f64, y: f64, k_max: i64) -> f64 {
    let k0 = x1.round() as i64;
    let mut best = f64::INFINITY;
    for k in (k0 - 2).max(-k_max)..=(k0 + 2).min(k_max) {
        let top = gamma.eval((k as f64).abs());
        let m = (top - y).round().max(0.0);
        best = best.min((x1 - k as f64).hypot(y - (top - m)));
    }
    best
}

/// Largest distance from a node with `u₀ > 0` to the lattice (the covering check on the actual data).
pub fn covering_check(u0: &Field, gamma: &GammaSpec, k_max: i64) -> f64 {
    let np = u0.n_prop();
    let mut worst = 0.0f64;
    for i in 0..u0.n_perp() {
        let x1 = u0.domain.perp_coord(i);
        for j in 0..np {
            if u0.get(i, j) <= 0.0 {
                continue;
            }
            let best = lattice_distance(gamma, x1, u0.prop_coord(j), k_max);
            worst = worst.max(best);
        }
    }
    worst
}

struct RadialTable<'a> {
    h: f64,
    values: &'a [f64],
    r_cut: f64,
}

impl RadialTable<'_> {
    fn at(&self, r: f64) -> f64 {
        let x = r / self.h;
        let j = x.floor() as usize;
        if j + 1 >= self.values.len() {
            return 0.0;
        }
        let w = x - j as f64;
        self.values[j] * (1.0 - w) + self.values[j + 1] * w
    }
}

/// Audits `u ≤ min(v, 1)` with `v(t,x) = Σ_{k,m} w(t, x − (k, γ(k) − m))`.
///
/// `u_snaps` are 2D fields (possibly a half domain `x1 ≥ 0`), `w_snaps` radial fields of the
/// same reaction started from `B_δ`, matched by time.
pub fn sum_supersolution_audit(
    u_snaps: &[Field],
    gamma: &GammaSpec,
    w_snaps: &[Field],
    opts: &SumAuditOptions,
) -> Result<SumAudit, AnalysisError> {
    let first = u_snaps.first().ok_or_else(|| AnalysisError::Input("no snapshots".into()))?;
    let r_max = first.domain.perp_axis().map_or(0.0, |a| a.hi().abs().max(a.lo.abs()));
    let required = covering_radius(gamma, r_max);
    if opts.delta < required {
        return Err(AnalysisError::Covering {
            delta: opts.delta,
            required,
        });
    }
    let mut out = SumAudit {
        times: vec![],
        violation: vec![],
        max_violation: f64::NEG_INFINITY,
        audited_points: 0,
        required_delta: required,
    };
    let tops: Vec<f64> = (-opts.k_max..=opts.k_max).map(|k| gamma.eval((k as f64).abs())).collect();
    for u in u_snaps {
        let w = w_snaps
            .iter()
            .find(|w| (w.time - u.time).abs() <= 1e-6 * u.time.max(1.0))
            .ok_or_else(|| AnalysisError::Input(format!("no radial snapshot at t = {}", u.time)))?;
        let hw = w.domain.prop_axis().h;
        let r_cut = w
            .values
            .iter()
            .rposition(|&v| v >= 1e-14)
            .map_or(0.0, |j| (j + 1) as f64 * hw);
        let table = RadialTable {
            h: hw,
            values: &w.values,
            r_cut,
        };
        let np = u.n_prop();
        let stride = opts.stride.max(1);
        let mut worst = f64::NEG_INFINITY;
        let mut count = 0usize;
        for i in (0..u.n_perp()).step_by(stride) {
            let x1 = u.domain.perp_coord(i);
            if x1.abs() > opts.x1_max {
                continue;
            }
            for j in (0..np).step_by(stride) {
                let x2 = u.prop_coord(j);
                let uv = u.get(i, j);
                count += 1;
                let v = sum_at(&table, &tops, opts.k_max, [x1, x2]);
                worst = worst.max(uv - v.min(1.0));
            }
        }
        out.times.push(u.time);
        out.violation.push(worst);
        out.max_violation = out.max_violation.max(worst);
        out.audited_points += count;
    }
    Ok(out)
}

fn sum_at(table: &RadialTable, tops: &[f64], k_max: i64, x: [f64; 2]) -> f64 {
    let rc = table.r_cut;
    let k_lo = ((x[0] - rc).floor() as i64).max(-k_max);
    let k_hi = ((x[0] + rc).ceil() as i64).min(k_max);
    let mut v = 0.0;
    for k in k_lo..=k_hi {
        let dx = x[0] - k as f64;
        let reach2 = rc * rc - dx * dx;
        if reach2 < 0.0 {
            continue;
        }
        let reach = reach2.sqrt();
        let top = tops[(k + k_max) as usize];
        // lattice heights top − m within x2 ± reach
        let m_lo = (top - x[1] - reach).ceil().max(0.0) as i64;
        let m_hi = (top - x[1] + reach).floor() as i64;
        for m in m_lo..=m_hi {
            let dy = x[1] - (top - m as f64);
            v += table.at(dx.hypot(dy));
        }
        if v >= 1.0 {
            return v;
        }
    }
    v
}

// ---------------------------------------------------------------------------
// terraces

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub value: f64,
    /// Fraction of the transition window within 0.02 of `value`.
    pub confidence: f64,
    pub widths: Vec<f64>,
    pub upper_speed: f64,
    pub lower_speed: f64,
    pub expanding: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerraceReport {
    pub times: Vec<f64>,
    pub plateaus: Vec<Plateau>,
    pub window_cells: usize,
    pub min_mass: f64,
}

pub const PLATEAU_MIN_MASS: f64 = 0.05;
const PLATEAU_BAND: f64 = 0.02;

fn first_crossing(field: &Field, level: f64) -> Option<f64> {
    column_crossing(field.column(0), level).map(|(p, _)| field.prop_coord(0) + p * field.domain.prop_axis().h)
}

/// Histogram-mode plateau detection on the last snapshot, tracked over all snapshots.
pub fn detect_terrace(snapshots: &[Field]) -> TerraceReport {
    let mut report = TerraceReport {
        times: snapshots.iter().map(|f| f.time).collect(),
        plateaus: vec![],
        window_cells: 0,
        min_mass: PLATEAU_MIN_MASS,
    };
    let Some(last) = snapshots.last() else { return report };
    let col = last.column(0);
    let window: Vec<f64> = col.iter().copied().filter(|&u| u > 0.01 && u < 0.99).collect();
    report.window_cells = window.len();
    if window.is_empty() {
        return report;
    }
    let nb = 50;
    let mut hist = vec![0usize; nb];
    for &u in &window {
        hist[((u * nb as f64) as usize).min(nb - 1)] += 1;
    }
    let n = window.len() as f64;
    let mut values: Vec<f64> = vec![];
    for b in 0..nb {
        let centre = (b as f64 + 0.5) / nb as f64;
        if !(0.05..=0.95).contains(&centre) {
            continue;
        }
        let left = if b > 0 { hist[b - 1] } else { 0 };
        let right = if b + 1 < nb { hist[b + 1] } else { 0 };
        if hist[b] < left || hist[b] < right || (hist[b] as f64) < PLATEAU_MIN_MASS * n {
            continue;
        }
        let near: Vec<f64> = window.iter().copied().filter(|u| (u - centre).abs() <= PLATEAU_BAND).collect();
        let value = near.iter().sum::<f64>() / near.len() as f64;
        if values.iter().all(|v| (v - value).abs() > PLATEAU_BAND) {
            values.push(value);
        }
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for value in values {
        let confidence = window.iter().filter(|u| (**u - value).abs() <= PLATEAU_BAND).count() as f64 / n;
        if confidence < PLATEAU_MIN_MASS {
            continue;
        }
        let (up, low) = (0.5 * (1.0 + value), 0.5 * value);
        let mut t = vec![];
        let mut xu = vec![];
        let mut xl = vec![];
        for f in snapshots {
            if let (Some(a), Some(b)) = (first_crossing(f, up), first_crossing(f, low)) {
                t.push(f.time);
                xu.push(a);
                xl.push(b);
            }
        }
        let widths: Vec<f64> = xu.iter().zip(&xl).map(|(a, b)| b - a).collect();
        let slope = |x: &[f64]| {
            if t.len() >= 2 {
                least_squares(&t, x, |t| vec![t, 1.0]).coefficients[0]
            } else {
                f64::NAN
            }
        };
        let expanding = widths.len() >= 2 && widths.windows(2).all(|w| w[1] > w[0]);
        report.plateaus.push(Plateau {
            value,
            confidence,
            upper_speed: slope(&xu),
            lower_speed: slope(&xl),
            widths,
            expanding,
        });
    }
    report
}

// ---------------------------------------------------------------------------
// thresholds

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Extinction,
    Invasion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdOptions {
    pub h: f64,
    pub t_end: f64,
    pub tol: f64,
    /// Free space kept beyond the largest `L`.
    pub margin: f64,
}

impl Default for ThresholdOptions {
    fn default() -> Self {
        ThresholdOptions {
            h: 0.1,
            t_end: 200.0,
            tol: 0.01,
            margin: 60.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub lo: f64,
    pub hi: f64,
    pub samples: Vec<(f64, Outcome)>,
}

impl ThresholdResult {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Runs `u₀ = 𝟙_{[−L,L]}` (cell-averaged at the edge) on the half line with a reflecting centre.
pub fn threshold_outcome(spec: &ReactionSpec, l: f64, extent: f64, opts: &ThresholdOptions) -> Result<Outcome, AnalysisError> {
    let h = opts.h;
    let dom = Domain::line(0.0, extent, h, [Boundary::NeumannZero, Boundary::ZERO])?;
    let field = Field::from_fn(dom, |_, x| ((l - (x - 0.5 * h)) / h).clamp(0.0, 1.0));
    let cfg = SolverConfig::explicit(opts.t_end, opts.t_end);
    let rec = pde::advance(field, spec, &cfg, &mut [])?;
    let f = &rec.final_field;
    let centre = f.values[0];
    let max = f.min_max().1;
    if centre > 0.99 {
        Ok(Outcome::Invasion)
    } else if max < 0.01 {
        Ok(Outcome::Extinction)
    } else {
        Err(AnalysisError::Undecided { l, center: centre, max })
    }
}

fn check_monotone(samples: &[(f64, Outcome)]) -> Result<(), AnalysisError> {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let first_inv = s.iter().position(|x| x.1 == Outcome::Invasion).unwrap_or(s.len());
    if s[first_inv..].iter().any(|x| x.1 == Outcome::Extinction) {
        return Err(AnalysisError::NonMonotone(format!("{s:?}")));
    }
    Ok(())
}

/// Bisection for the invasion threshold `L*` in `[l_lo, l_hi]`.
pub fn threshold_bisection(spec: &ReactionSpec, l_lo: f64, l_hi: f64, opts: &ThresholdOptions) -> Result<ThresholdResult, AnalysisError> {
    if !(l_lo > 0.0 && l_hi > l_lo) {
        return Err(AnalysisError::Input(format!("bad L range [{l_lo}, {l_hi}]")));
    }
    let extent = l_hi + opts.margin;
    let mut samples = vec![];
    let lo_out = threshold_outcome(spec, l_lo, extent, opts)?;
    samples.push((l_lo, lo_out));
    if lo_out == Outcome::Invasion {
        return Err(AnalysisError::NoBracket(format!("L = {l_lo} already invades")));
    }
    let hi_out = threshold_outcome(spec, l_hi, extent, opts)?;
    samples.push((l_hi, hi_out));
    if hi_out == Outcome::Extinction {
        return Err(AnalysisError::NoBracket(format!("L = {l_hi} still goes extinct")));
    }
    let (mut lo, mut hi) = (l_lo, l_hi);
    while hi - lo > opts.tol {
        let mid = 0.5 * (lo + hi);
        let o = threshold_outcome(spec, mid, extent, opts)?;
        samples.push((mid, o));
        check_monotone(&samples)?;
        match o {
            Outcome::Extinction => lo = mid,
            Outcome::Invasion => hi = mid,
        }
    }
    Ok(ThresholdResult { lo, hi, samples })
}

// ---------------------------------------------------------------------------
// verdicts

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `|measured − expected| ≤ tolerance`
    Within,
    /// `|measured − expected| ≤ tolerance·|expected|`
    WithinRelative,
    /// `measured ≤ expected + tolerance`
    AtMost,
    /// `measured ≥ expected − tolerance`
    AtLeast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub scenario: String,
    pub theorem: String,
    pub measured: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub relation: Relation,
    pub pass: bool,
}

impl Verdict {
    pub fn new(scenario: &str, theorem: &str, measured: f64, expected: f64, tolerance: f64, relation: Relation) -> Self {
        let pass = measured.is_finite()
            && match relation {
                Relation::Within => (measured - expected).abs() <= tolerance,
                Relation::WithinRelative => (measured - expected).abs() <= tolerance * expected.abs(),
                Relation::AtMost => measured <= expected + tolerance,
                Relation::AtLeast => measured >= expected - tolerance,
            };
        Verdict {
            scenario: scenario.into(),
            theorem: theorem.into(),
            measured,
            expected,
            tolerance,
            relation,
            pass,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levelset::LevelSetSlice;

    fn synthetic(f: impl Fn(f64) -> f64, t0: f64, t1: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
        (0..n)
            .map(|i| {
                let t = t0 + (t1 - t0) * i as f64 / (n - 1) as f64;
                (t, f(t))
            })
            .unzip()
    }

    #[test]
    fn fit_lag_recovers_exact_model() {
        let (t, x) = synthetic(|t| 2.0 * t - 1.5 * t.ln() - 0.7, 100.0, 1000.0, 400);
        for mode in [LagMode::FixSpeed, LagMode::FitAll] {
            let fit = fit_lag_xy(&t, &x, mode, 2.0, (100.0, 1000.0)).unwrap();
            assert!((fit.c - 2.0).abs() < 1e-9, "{fit:?}");
            assert!((fit.k - 1.5).abs() < 1e-8, "{fit:?}");
            assert!((fit.b - 0.7).abs() < 1e-6, "{fit:?}");
            assert!(fit.rms <= 1e-10);
        }
    }

    #[test]
    fn fit_window_and_count_guards() {
        let (t, x) = synthetic(|t| 2.0 * t, 1.0, 1000.0, 1000);
        assert!(matches!(fit_lag_xy(&t, &x, LagMode::FixSpeed, 2.0, (5.0, 100.0)), Err(AnalysisError::Window(..))));
        assert!(matches!(fit_lag_xy(&t, &x, LagMode::FixSpeed, 2.0, (100.0, 300.0)), Err(AnalysisError::Window(..))));
        let (t, x) = synthetic(|t| 2.0 * t, 100.0, 400.0, 20);
        assert!(matches!(
            fit_lag_xy(&t, &x, LagMode::FixSpeed, 2.0, (100.0, 400.0)),
            Err(AnalysisError::TooFew { .. })
        ));
    }

    #[test]
    fn default_window_is_last_three_quarters_in_log_time() {
        let (a, b) = default_window(1e6);
        assert!((a.log10() - 2.25).abs() < 1e-12 && b == 1e6);
    }

    #[test]
    fn speed_of_affine_series() {
        let (t, x) = synthetic(|t| 2.0 * t + 5.0, 100.0, 400.0, 301);
        let s = estimate_speed_xy(&t, &x, (100.0, 400.0)).unwrap();
        assert!((s.c - 2.0).abs() < 1e-12 && s.ci < 1e-9);
    }

    #[test]
    fn speed_and_fit_all_agree_within_ci() {
        // deterministic wiggle standing in for noise
        let (t, x) = synthetic(|t| 2.0 * t + 3.0 + 0.3 * (1.7 * t).sin(), 100.0, 400.0, 301);
        let s = estimate_speed_xy(&t, &x, (100.0, 400.0)).unwrap();
        let f = fit_lag_xy(&t, &x, LagMode::FitAll, 0.0, (100.0, 400.0)).unwrap();
        assert!((s.c - f.c).abs() <= s.ci, "{} vs {} ± {}", s.c, f.c, s.ci);
    }

    #[test]
    fn discrete_speed_converges_to_kpp_speed() {
        let c1 = discrete_kpp_speed(1.0, 0.1, 0.002, Scheme::ExplicitEuler);
        let c2 = discrete_kpp_speed(1.0, 0.05, 0.0005, Scheme::ExplicitEuler);
        assert!((c1 - 2.0).abs() < 5e-3 && (c2 - 2.0).abs() < (c1 - 2.0).abs());
        let s = discrete_kpp_speed(1.0, 0.05, 0.025, Scheme::StrangSplit);
        assert!(s > 2.0 && s < 2.02, "{s}");
        assert!((discrete_kpp_speed(4.0, 1e-3, 1e-8, Scheme::ExplicitEuler) - 4.0).abs() < 1e-3);
    }

    fn series_from(t: &[f64], x: &[f64]) -> LevelSetSeries {
        let mut s = LevelSetSeries::new(0.5, vec![0.0]);
        for (t, x) in t.iter().zip(x) {
            s.push(LevelSetSlice {
                time: *t,
                lambda: 0.5,
                x_perp: vec![0.0],
                x: vec![*x],
                valid: vec![true],
                multi: vec![false],
                symmetric_low: false,
            });
        }
        s
    }

    #[test]
    fn series_wrappers_use_default_window() {
        let (t, x) = synthetic(|t| 2.0 * t - 1.0 * t.ln(), 1.0, 2000.0, 2000);
        let s = series_from(&t, &x);
        let fit = fit_lag(&s, 0.0, LagMode::FixSpeed, 2.0, None).unwrap();
        assert!((fit.k - 1.0).abs() < 1e-9);
        assert!((fit.window.0 - default_window(2000.0).0).abs() < 1e-12);
        assert!(estimate_speed(&s, 0.0, None).unwrap().c < 2.0);
    }

    fn half_plane_cloud(t: f64, top: f64, s: f64, extent: f64) -> UpperLevelCloud {
        let mut points = vec![];
        let n = (extent / s) as i64;
        for i in -n..=n {
            for j in -n..=n {
                let p = [i as f64 * s, j as f64 * s];
                if p[1] <= top {
                    points.push(p);
                }
            }
        }
        UpperLevelCloud { time: t, lambda: 0.5, points }
    }

    #[test]
    fn half_space_local_distance_is_the_lag_over_t() {
        let sup = SupportSpec::HalfSpace {
            normal: [0.0, 1.0],
            offset: 0.0,
        };
        let mut last = f64::INFINITY;
        for t in [20.0, 40.0] {
            let lag = 1.5 * f64::ln(t);
            let cloud = half_plane_cloud(t, 2.0 * t - lag, 0.5, 3.0 * 2.0 * t + 2.0);
            let cmp = compare_envelope(&[cloud], &sup, 2.0, 3.0, 0.01, &CloudCompletion::NONE, None).unwrap();
            let d = cmp.local[0];
            assert!(d <= (2.0 * 0.5 + lag) / t + 0.02, "t={t}: {d}");
            assert!(d < last);
            last = d;
        }
    }

    #[test]
    fn empty_conventions() {
        assert_eq!(hausdorff_flagged(&[], &[]), (0.0, false));
        assert_eq!(hausdorff_flagged(&[[0.0, 0.0]], &[]), (f64::INFINITY, true));
    }

    #[test]
    fn synthetic_gap_ratio_is_two() {
        let sup = SupportSpec::HalfSpace {
            normal: [0.0, 1.0],
            offset: 0.0,
        };
        let bbox = support::BoundingBox {
            lower: [-20.0, -20.0],
            upper: [20.0, 400.0],
        };
        let res = 0.05;
        let mut clouds = vec![];
        for t in [20.0, 50.0, 150.0] {
            let top = 2.0 * t - 2.0 * f64::ln(t);
            let mut points = vec![];
            for i in 0..=((bbox.upper[0] - bbox.lower[0]) / res) as usize {
                let mut x2 = bbox.lower[1];
                while x2 <= top + 1e-9 {
                    points.push([bbox.lower[0] + i as f64 * res, x2]);
                    x2 += res;
                }
            }
            clouds.push(UpperLevelCloud { time: t, lambda: 0.5, points });
        }
        let mut cmp = EnvelopeComparison {
            times: vec![],
            local: vec![],
            global_gap: vec![],
            flagged: vec![],
            r: 0.0,
            resolution: res,
        };
        for c in &clouds {
            let (g, _) = global_gap(&c.points, &sup, 2.0 * c.time, bbox, res).unwrap();
            cmp.times.push(c.time);
            cmp.global_gap.push(g);
        }
        for (r, t) in envelope_gap_ratio(&cmp).iter().zip(&cmp.times) {
            assert!((r - 2.0).abs() <= res / t.ln(), "{r}");
        }
    }

    #[test]
    fn inclusion_of_exact_thickening() {
        let sup = SupportSpec::subgraph(GammaSpec::Linear { alpha: 1.0 }).unwrap();
        let t = 10.0;
        // points exactly on {dist = c t + 1}
        let pts: Vec<[f64; 2]> = (-20..=20).map(|i| [i as f64, (i as f64).abs() + (2.0 * t + 1.0) * 2f64.sqrt()]).collect();
        let a = inclusion_audit(&[UpperLevelCloud { time: t, lambda: 0.5, points: pts }], &sup, 2.0, 2).unwrap();
        assert!((a.run_constant - 1.0).abs() < 1e-9, "{a:?}");
    }

    #[test]
    fn covering_radius_for_log_profile() {
        let g = GammaSpec::LogCoercive { beta: -3.0 };
        let d = covering_radius(&g, 50.0);
        assert!(d >= 0.5f64.sqrt() - 1e-9 && d <= 2.0, "{d}");
        // a rising profile needs more than the layer spacing
        let up = covering_radius(&GammaSpec::Linear { alpha: 3.0 }, 5.0);
        assert!(up > d, "{up}");
    }

    #[test]
    fn zero_solution_passes_audit() {
        let g = GammaSpec::LogCoercive { beta: -3.0 };
        let dom = Domain::plane(
            (0.0, 10.0),
            (-10.0, 10.0),
            0.5,
            [Boundary::NeumannZero, Boundary::NeumannZero],
            [Boundary::ONE, Boundary::ZERO],
        )
        .unwrap();
        let u = Field::zeros(dom);
        let wd = Domain::radial(2, 30.0, 0.1, Boundary::ZERO).unwrap();
        let w = Field::from_fn(wd, |_, r| if r <= 2.0 { 1.0 } else { 0.0 });
        let opts = SumAuditOptions {
            delta: 2.0,
            k_max: 20,
            stride: 1,
            x1_max: 10.0,
        };
        let a = sum_supersolution_audit(&[u], &g, &[w], &opts).unwrap();
        assert!(a.max_violation <= 0.0);
        let bad = SumAuditOptions { delta: 0.3, ..opts };
        let u = Field::zeros(Domain::plane((0.0, 10.0), (-10.0, 10.0), 0.5, [Boundary::NeumannZero; 2], [Boundary::ONE, Boundary::ZERO]).unwrap());
        assert!(matches!(
            sum_supersolution_audit(&[u], &g, &[], &bad),
            Err(AnalysisError::Covering { .. })
        ));
    }

    #[test]
    fn verdict_relations() {
        assert!(Verdict::new("x", "t", 2.01, 2.0, 0.01, Relation::WithinRelative).pass);
        assert!(!Verdict::new("x", "t", 2.03, 2.0, 0.01, Relation::WithinRelative).pass);
        assert!(Verdict::new("x", "t", 1.0, 1.2, 0.3, Relation::AtLeast).pass);
        assert!(!Verdict::new("x", "t", f64::NAN, 0.0, 1.0, Relation::AtMost).pass);
    }

    #[test]
    fn logistic_invades_from_tiny_data() {
        let opts = ThresholdOptions {
            t_end: 60.0,
            ..Default::default()
        };
        assert_eq!(
            threshold_outcome(&ReactionSpec::logistic(), 0.05, 80.0, &opts).unwrap(),
            Outcome::Invasion
        );
    }

    #[test]
    fn monotonicity_guard() {
        let s = [(1.0, Outcome::Invasion), (2.0, Outcome::Extinction)];
        assert!(check_monotone(&s).is_err());
        let s = [(2.0, Outcome::Invasion), (1.0, Outcome::Extinction)];
        assert!(check_monotone(&s).is_ok());
    }
}
