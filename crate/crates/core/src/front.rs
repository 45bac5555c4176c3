//! Traveling fronts `φ'' + cφ' + f(φ) = 0` connecting `1` to `0`.
//!
//! Profiles are computed on the phase plane `(φ, ψ = φ')` with a fixed-step RK4
//! integrator launched from the unstable manifold of the upper state.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reaction::{check_invasion, check_kpp_class, ReactionKind, ReactionSpec};

/// Phase-plane integration step.
pub const ODE_STEP: f64 = 1e-3;
/// Refined step used by the oracle runs.
pub const ODE_STEP_FINE: f64 = 1e-4;
/// Offset from the upper state along the unstable eigenvector.
pub const LAUNCH_EPS: f64 = 1e-6;
/// Speed scan used to find a bisection bracket.
pub const SCAN_RANGE: (f64, f64) = (-10.0, 10.0);
pub const SCAN_STEP: f64 = 0.5;

/// Longest trajectory before a shot is declared converged.
const Z_MAX: f64 = 2000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrontError {
    #[error("reaction is not of KPP class: {0}")]
    NotKpp(String),
    #[error("no admissible speed bracket in c ∈ [{lo}, {hi}]: {reason}")]
    NoAdmissibleBracket { lo: f64, hi: f64, reason: String },
    #[error("speed {c} is inadmissible: {reason}")]
    InadmissibleSpeed { c: f64, reason: String },
    #[error("upper state {0} is not linearly stable (f'({0}) >= 0)")]
    UnstableLaunch(f64),
    #[error("integration failed at c = {c} (last bracket [{lo}, {hi}])")]
    IntegrationFailure { c: f64, lo: f64, hi: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Classification of a single shot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShotOutcome {
    /// `φ` crossed the lower state with `ψ < 0`: the speed is too small.
    Overshoot,
    /// `ψ` vanished with `φ` above the lower state: the speed is too large.
    Undershoot,
    /// Monotone approach to the lower state over the whole integration range.
    Converged,
}

/// Bisection state for a unique front speed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedBracket {
    pub c_low: f64,
    pub c_high: f64,
    pub low_class: ShotOutcome,
    pub high_class: ShotOutcome,
}

impl SpeedBracket {
    pub fn width(&self) -> f64 {
        self.c_high - self.c_low
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.c_low + self.c_high)
    }
}

/// A sampled, monotone front profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontProfile {
    pub speed: f64,
    pub z: Vec<f64>,
    pub phi: Vec<f64>,
    /// `φ'` at the same samples.
    pub dphi: Vec<f64>,
    /// First sample within `1e-6` of the upper state.
    pub upper_limit_ok: bool,
    /// Last sample within `1e-6` of the lower state.
    pub lower_limit_ok: bool,
    /// Index range of samples produced by the integrator (the rest are
    /// analytic tails along the linearized manifolds).
    pub integrated: (usize, usize),
}

impl FrontProfile {
    /// Linear interpolation of `φ` at `z`, saturating at the end samples.
    pub fn value_at(&self, z: f64) -> f64 {
        crate::numerics::interp_linear(&self.z, &self.phi, z)
    }

    /// Two-column CSV `z,phi`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("z,phi\n");
        for (z, p) in self.z.iter().zip(&self.phi) {
            out.push_str(&format!("{z},{p}\n"));
        }
        out
    }
}

/// The pair of rest states joined by a front: launched near `upper`, landing on `lower`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Connection {
    pub upper: f64,
    pub lower: f64,
}

impl Connection {
    pub const FULL: Connection = Connection { upper: 1.0, lower: 0.0 };
}

/// Settings for a shooting computation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShootSettings {
    pub step: f64,
    pub launch_eps: f64,
}

impl Default for ShootSettings {
    fn default() -> Self {
        Self {
            step: ODE_STEP,
            launch_eps: LAUNCH_EPS,
        }
    }
}

/// `c* = 2 √f'(0)` for reactions of KPP class.
pub fn kpp_minimal_speed(spec: &ReactionSpec) -> Result<f64, FrontError> {
    let d0 = spec.derivative_at_zero();
    if d0 <= 0.0 {
        return Err(FrontError::NotKpp(format!("f'(0) = {d0} <= 0")));
    }
    let kpp = check_kpp_class(spec, 1000, 1);
    if !kpp.kpp0_holds {
        return Err(FrontError::NotKpp(
            "f(s) <= f'(0)s fails; 2√f'(0) is only a lower bound".into(),
        ));
    }
    Ok(2.0 * d0.sqrt())
}

/// Unique front speed of an ignition or bistable reaction with the invasion property.
///
/// Returns the bracket midpoint and the profile at that speed.
pub fn shoot_front_speed(spec: &ReactionSpec, tol: f64) -> Result<(f64, FrontProfile), FrontError> {
    shoot_front_speed_with(spec, tol, ShootSettings::default())
}

pub fn shoot_front_speed_with(
    spec: &ReactionSpec,
    tol: f64,
    settings: ShootSettings,
) -> Result<(f64, FrontProfile), FrontError> {
    match spec.kind() {
        ReactionKind::Ignition { .. } | ReactionKind::Bistable { .. } => {}
        other => {
            return Err(FrontError::InvalidArgument(format!(
                "shooting expects an ignition or bistable reaction, got {other:?}"
            )))
        }
    }
    let inv = check_invasion(spec, 1000);
    if !inv.invasion_holds {
        return Err(FrontError::NoAdmissibleBracket {
            lo: SCAN_RANGE.0,
            hi: SCAN_RANGE.1,
            reason: "∫₀¹f is not positive: no invading front".into(),
        });
    }
    let bracket = bisect_speed(spec, Connection::FULL, tol, settings)?;
    let c = bracket.midpoint();
    let profile = profile_for_speed(spec, Connection::FULL, c, (-40.0, 60.0), 10_001, settings)?;
    Ok((c, profile))
}

/// Unique speed of the front from `conn.upper` to `conn.lower`, without any
/// invasion precondition; the speed may be negative.
pub fn shoot_connection_speed(
    spec: &ReactionSpec,
    conn: Connection,
    tol: f64,
    settings: ShootSettings,
) -> Result<f64, FrontError> {
    Ok(bisect_speed(spec, conn, tol, settings)?.midpoint())
}

/// Stage speeds `(c₁, c₂)` of a tristable reaction: `c₁` for the front from
/// the middle stable state `b` down to `0`, `c₂` for the front from `1` to `b`.
pub fn tristable_stage_speeds(spec: &ReactionSpec, tol: f64) -> Result<(f64, f64), FrontError> {
    let b = match spec.kind() {
        ReactionKind::Tristable { b, .. } => *b,
        other => {
            return Err(FrontError::InvalidArgument(format!(
                "stage speeds need a tristable reaction, got {other:?}"
            )))
        }
    };
    let s = ShootSettings::default();
    let c1 = shoot_connection_speed(spec, Connection { upper: b, lower: 0.0 }, tol, s)?;
    let c2 = shoot_connection_speed(spec, Connection { upper: 1.0, lower: b }, tol, s)?;
    Ok((c1, c2))
}

/// Whether a tristable reaction admits a single front `1 → 0` (`c₁ < c₂` and `∫f > 0`).
pub fn tristable_has_single_front(spec: &ReactionSpec, tol: f64) -> Result<bool, FrontError> {
    let (c1, c2) = tristable_stage_speeds(spec, tol)?;
    let (integral, err) = spec.integral(0.0, 1.0);
    Ok(c1 < c2 && integral > err)
}

fn launch_rate(spec: &ReactionSpec, conn: Connection, c: f64) -> Result<f64, FrontError> {
    let d = spec.derivative_at(conn.upper);
    if d >= 0.0 {
        return Err(FrontError::UnstableLaunch(conn.upper));
    }
    Ok(0.5 * (-c + (c * c - 4.0 * d).sqrt()))
}

/// Decay rate of `φ - lower` along the stable direction at the lower state.
fn landing_rate(spec: &ReactionSpec, conn: Connection, c: f64) -> f64 {
    let d = spec.derivative_at(conn.lower);
    let disc = c * c - 4.0 * d;
    if disc >= 0.0 {
        0.5 * (c + disc.sqrt())
    } else {
        0.5 * c
    }
}

/// Level below which `f ≡ 0` next to the lower state (ignition dead zone).
fn dead_zone(spec: &ReactionSpec, conn: Connection) -> Option<f64> {
    match spec.kind() {
        ReactionKind::Ignition { alpha } if conn.lower == 0.0 => Some(*alpha),
        _ => None,
    }
}

#[inline]
fn rk4_step(spec: &ReactionSpec, c: f64, phi: f64, psi: f64, h: f64) -> (f64, f64) {
    let rhs = |p: f64, q: f64| (q, -c * q - spec.eval(p));
    let (k1p, k1q) = rhs(phi, psi);
    let (k2p, k2q) = rhs(phi + 0.5 * h * k1p, psi + 0.5 * h * k1q);
    let (k3p, k3q) = rhs(phi + 0.5 * h * k2p, psi + 0.5 * h * k2q);
    let (k4p, k4q) = rhs(phi + h * k3p, psi + h * k3q);
    (
        phi + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p),
        psi + h / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q),
    )
}

/// Fires one shot at speed `c` and classifies it.
pub fn classify_shot(spec: &ReactionSpec, conn: Connection, c: f64, settings: ShootSettings) -> Result<ShotOutcome, FrontError> {
    let mu = launch_rate(spec, conn, c)?;
    let eps = settings.launch_eps;
    let mut phi = conn.upper - eps;
    let mut psi = -mu * eps;
    let dead = dead_zone(spec, conn);
    let steps = (Z_MAX / settings.step).ceil() as usize;
    for _ in 0..steps {
        let (p, q) = rk4_step(spec, c, phi, psi, settings.step);
        phi = p;
        psi = q;
        if !(phi.is_finite() && psi.is_finite()) {
            return Err(FrontError::IntegrationFailure { c, lo: c, hi: c });
        }
        if phi < conn.lower {
            return Ok(ShotOutcome::Overshoot);
        }
        if psi >= 0.0 {
            return Ok(ShotOutcome::Undershoot);
        }
        if let Some(alpha) = dead {
            if phi <= alpha {
                // f ≡ 0 from here on: φ(∞) = φ + ψ/c when c > 0
                if c <= 0.0 {
                    return Ok(ShotOutcome::Overshoot);
                }
                let limit = phi + psi / c;
                return Ok(if limit < conn.lower {
                    ShotOutcome::Overshoot
                } else {
                    ShotOutcome::Undershoot
                });
            }
        }
        if phi - conn.lower < 1e-250 {
            break;
        }
        // stalled at an intermediate equilibrium (stable node for large c)
        if phi - conn.lower > 1e-6 && psi > -1e-13 && spec.eval(phi).abs() < 1e-12 {
            return Ok(ShotOutcome::Undershoot);
        }
    }
    if phi - conn.lower > 1e-6 {
        return Ok(ShotOutcome::Undershoot);
    }
    Ok(ShotOutcome::Converged)
}

fn bisect_speed(spec: &ReactionSpec, conn: Connection, tol: f64, settings: ShootSettings) -> Result<SpeedBracket, FrontError> {
    if !(tol > 0.0) {
        return Err(FrontError::InvalidArgument(format!("tol must be > 0, got {tol}")));
    }
    let mut bracket = None;
    let n = ((SCAN_RANGE.1 - SCAN_RANGE.0) / SCAN_STEP).round() as usize;
    let mut prev_c = SCAN_RANGE.0;
    let mut prev = classify_shot(spec, conn, prev_c, settings)?;
    for k in 1..=n {
        let c = SCAN_RANGE.0 + k as f64 * SCAN_STEP;
        let cur = classify_shot(spec, conn, c, settings)?;
        if prev == ShotOutcome::Overshoot && cur != ShotOutcome::Overshoot {
            bracket = Some(SpeedBracket {
                c_low: prev_c,
                c_high: c,
                low_class: prev,
                high_class: cur,
            });
            break;
        }
        prev = cur;
        prev_c = c;
    }
    let mut b = bracket.ok_or_else(|| FrontError::NoAdmissibleBracket {
        lo: SCAN_RANGE.0,
        hi: SCAN_RANGE.1,
        reason: "shot classification never changes sign".into(),
    })?;
    while b.width() > tol {
        let mid = b.midpoint();
        let cls = classify_shot(spec, conn, mid, settings).map_err(|_| FrontError::IntegrationFailure {
            c: mid,
            lo: b.c_low,
            hi: b.c_high,
        })?;
        if cls == ShotOutcome::Overshoot {
            b.c_low = mid;
            b.low_class = cls;
        } else {
            b.c_high = mid;
            b.high_class = cls;
        }
    }
    Ok(b)
}

/// Raw trajectory of a shot, recorded at every step.
struct Trajectory {
    z0: f64,
    step: f64,
    phi: Vec<f64>,
    psi: Vec<f64>,
    outcome: ShotOutcome,
}

/// Integrates from the launch point placed at `z0`; if `align` is given the
/// first step is shortened so that later nodes land on `align + k·step`.
fn trajectory(
    spec: &ReactionSpec,
    conn: Connection,
    c: f64,
    settings: ShootSettings,
    z0: f64,
    align: Option<f64>,
    z_stop: f64,
) -> Result<(Trajectory, f64), FrontError> {
    let mu = launch_rate(spec, conn, c)?;
    let eps = settings.launch_eps;
    let h = settings.step;
    let mut phi = conn.upper - eps;
    let mut psi = -mu * eps;
    let mut z = z0;
    let mut first_node = z0;
    if let Some(a) = align {
        let k = ((z0 - a) / h).ceil();
        let target = a + k * h;
        let dz = target - z0;
        if dz > 0.0 {
            let (p, q) = rk4_step(spec, c, phi, psi, dz);
            phi = p;
            psi = q;
        }
        z = target;
        first_node = target;
    }
    let mut phis = vec![phi];
    let mut psis = vec![psi];
    let mut outcome = ShotOutcome::Converged;
    while z < z_stop {
        let (p, q) = rk4_step(spec, c, phi, psi, h);
        if !(p.is_finite() && q.is_finite()) {
            return Err(FrontError::IntegrationFailure { c, lo: c, hi: c });
        }
        if p < conn.lower {
            outcome = ShotOutcome::Overshoot;
            break;
        }
        if q >= 0.0 {
            outcome = ShotOutcome::Undershoot;
            break;
        }
        phi = p;
        psi = q;
        z += h;
        phis.push(phi);
        psis.push(psi);
        if phi - conn.lower < 1e-250 {
            break;
        }
    }
    Ok((
        Trajectory {
            z0: first_node,
            step: h,
            phi: phis,
            psi: psis,
            outcome,
        },
        mu,
    ))
}

/// Sampled profile at speed `c` on `n` points of `z_span`, normalized by `φ(0) = (upper+lower)/2`.
pub fn front_profile(spec: &ReactionSpec, c: f64, z_span: (f64, f64), n: usize) -> Result<FrontProfile, FrontError> {
    profile_for_speed(spec, Connection::FULL, c, z_span, n, ShootSettings::default())
}

pub fn profile_for_speed(
    spec: &ReactionSpec,
    conn: Connection,
    c: f64,
    z_span: (f64, f64),
    n: usize,
    settings: ShootSettings,
) -> Result<FrontProfile, FrontError> {
    if n < 2 || !(z_span.0 < 0.0 && z_span.1 > 0.0) {
        return Err(FrontError::InvalidArgument(
            "z_span must contain 0 and n must be >= 2".into(),
        ));
    }
    let mid_level = 0.5 * (conn.upper + conn.lower);
    let inadmissible = |reason: &str| FrontError::InadmissibleSpeed {
        c,
        reason: reason.to_string(),
    };

    // pass 1: locate the mid level relative to the launch point
    let (probe, _) = trajectory(spec, conn, c, settings, 0.0, None, Z_MAX)?;
    let k = probe
        .phi
        .iter()
        .position(|&p| p <= mid_level)
        .ok_or_else(|| inadmissible("profile never reaches the mid level"))?;
    if k == 0 {
        return Err(inadmissible("launch point below the mid level"));
    }
    let z_half = {
        // cubic Hermite root on [k-1, k]
        let h = probe.step;
        let (p0, p1, d0, d1) = (probe.phi[k - 1], probe.phi[k], probe.psi[k - 1], probe.psi[k]);
        let mut s = (p0 - mid_level) / (p0 - p1);
        for _ in 0..50 {
            let (v, dv) = hermite(p0, p1, d0 * h, d1 * h, s);
            let step = (v - mid_level) / dv;
            s -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        probe.z0 + (k as f64 - 1.0 + s) * h
    };

    // pass 2: integrate in the shifted frame so nodes land on the output grid
    let dz_out = (z_span.1 - z_span.0) / (n - 1) as f64;
    let substeps = (dz_out / settings.step).ceil().max(1.0);
    let h = dz_out / substeps;
    let sub = ShootSettings { step: h, ..settings };
    let z_launch = -z_half;
    let (traj, mu) = trajectory(spec, conn, c, sub, z_launch, Some(z_span.0), z_span.1 + 10.0 * h)?;

    // cut point: for saddle-type landings keep the closest approach, then use the linear tail
    let mut end = traj.phi.len() - 1;
    if traj.outcome != ShotOutcome::Converged {
        let dist = |i: usize| (traj.phi[i] - conn.lower).abs() + traj.psi[i].abs();
        let (best, best_d) = (0..traj.phi.len())
            .map(|i| (i, dist(i)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        let z_end = traj.z0 + end as f64 * h;
        if best_d > 1e-3 && z_end < z_span.1 {
            return Err(inadmissible(match traj.outcome {
                ShotOutcome::Overshoot => "profile oscillates below the lower state",
                _ => "profile turns back before reaching the lower state",
            }));
        }
        if z_end < z_span.1 {
            end = best;
        }
    }
    let nu = landing_rate(spec, conn, c);
    let z_last = traj.z0 + end as f64 * h;
    let phi_last = traj.phi[end];

    let mut z = Vec::with_capacity(n);
    let mut phi = Vec::with_capacity(n);
    let mut dphi = Vec::with_capacity(n);
    let mut first_int = usize::MAX;
    let mut last_int = 0;
    let eps = settings.launch_eps;
    for i in 0..n {
        let zi = z_span.0 + i as f64 * dz_out;
        z.push(zi);
        if zi < traj.z0 - 1e-12 * dz_out.max(1.0) {
            let e = eps * (mu * (zi - z_launch)).exp();
            phi.push(conn.upper - e);
            dphi.push(-mu * e);
        } else if zi <= z_last + 1e-9 * h {
            let j = ((zi - traj.z0) / h).round() as usize;
            let j = j.min(end);
            phi.push(traj.phi[j]);
            dphi.push(traj.psi[j]);
            first_int = first_int.min(i);
            last_int = i;
        } else {
            let e = (phi_last - conn.lower) * (-nu * (zi - z_last)).exp();
            phi.push(conn.lower + e);
            dphi.push(-nu * e);
        }
    }
    for w in phi.windows(2) {
        if w[1] > w[0] {
            return Err(inadmissible("profile is not monotone"));
        }
        if w[1] < conn.lower || w[0] > conn.upper {
            return Err(inadmissible("profile leaves the state interval"));
        }
    }
    let upper_limit_ok = (phi[0] - conn.upper).abs() <= 1e-6;
    let lower_limit_ok = (phi[n - 1] - conn.lower).abs() <= 1e-6;
    Ok(FrontProfile {
        speed: c,
        z,
        phi,
        dphi,
        upper_limit_ok,
        lower_limit_ok,
        integrated: (first_int.min(last_int), last_int),
    })
}

fn hermite(p0: f64, p1: f64, m0: f64, m1: f64, s: f64) -> (f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    let v = (2.0 * s3 - 3.0 * s2 + 1.0) * p0 + (s3 - 2.0 * s2 + s) * m0 + (-2.0 * s3 + 3.0 * s2) * p1 + (s3 - s2) * m1;
    let dv = (6.0 * s2 - 6.0 * s) * p0 + (3.0 * s2 - 4.0 * s + 1.0) * m0 + (-6.0 * s2 + 6.0 * s) * p1 + (3.0 * s2 - 2.0 * s) * m1;
    (v, dv)
}

/// Largest `|φ'' + cφ' + f(φ)|` over integrated interior samples, using
/// fourth-order central differences on the sample grid.
pub fn ode_residual(profile: &FrontProfile, spec: &ReactionSpec) -> f64 {
    let (a, b) = profile.integrated;
    if b < a + 4 {
        return f64::NAN;
    }
    let h = profile.z[1] - profile.z[0];
    let p = &profile.phi;
    let c = profile.speed;
    let mut worst = 0.0f64;
    for i in (a + 2)..=(b - 2) {
        let d2 = (-p[i + 2] + 16.0 * p[i + 1] - 30.0 * p[i] + 16.0 * p[i - 1] - p[i - 2]) / (12.0 * h * h);
        let d1 = (-p[i + 2] + 8.0 * p[i + 1] - 8.0 * p[i - 1] + p[i - 2]) / (12.0 * h);
        worst = worst.max((d2 + c * d1 + spec.eval(p[i])).abs());
    }
    worst
}

/// Empirical tail constant `A` in `φ(z) ~ A z e^{-c* z/2}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayDiagnostic {
    pub constant: f64,
    /// Relative change of the ratio across the window.
    pub drift: f64,
    /// Ratio failed to stabilize (relative drift above 10%).
    pub flagged: bool,
}

/// Ratio `φ(z) / (z e^{-c* z/2})` over the last tenth of the sampled range.
pub fn decay_diagnostic(profile: &FrontProfile, c_star: f64) -> DecayDiagnostic {
    let z_end = *profile.z.last().unwrap();
    let z_start = z_end - 0.1 * (z_end - profile.z[0]);
    let ratios: Vec<f64> = profile
        .z
        .iter()
        .zip(&profile.phi)
        .filter(|(z, _)| **z >= z_start && **z > 1.0)
        .map(|(z, p)| p / (z * (-0.5 * c_star * z).exp()))
        .collect();
    if ratios.len() < 2 {
        return DecayDiagnostic {
            constant: f64::NAN,
            drift: f64::INFINITY,
            flagged: true,
        };
    }
    let first = ratios[0];
    let last = *ratios.last().unwrap();
    let drift = ((last - first) / last).abs();
    DecayDiagnostic {
        constant: last,
        drift,
        flagged: !(drift <= 0.1 && last.is_finite() && last > 0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kpp_speed_values() {
        assert_eq!(kpp_minimal_speed(&ReactionSpec::logistic()).unwrap(), 2.0);
        let quarter = ReactionSpec::logistic().scaled(0.25).unwrap();
        assert_eq!(kpp_minimal_speed(&quarter).unwrap(), 1.0);
        assert!(kpp_minimal_speed(&ReactionSpec::power_kpp(2.0).unwrap()).is_err());
        assert!(kpp_minimal_speed(&ReactionSpec::bistable(0.3).unwrap()).is_err());
    }

    #[test]
    fn bistable_a_half_has_no_invading_front() {
        let err = shoot_front_speed(&ReactionSpec::bistable(0.5).unwrap(), 1e-6).unwrap_err();
        assert!(matches!(err, FrontError::NoAdmissibleBracket { .. }));
    }

    #[test]
    fn shooting_rejects_kpp_reactions() {
        assert!(shoot_front_speed(&ReactionSpec::logistic(), 1e-6).is_err());
    }

    #[test]
    fn logistic_below_minimal_speed_is_inadmissible() {
        let err = front_profile(&ReactionSpec::logistic(), 1.0, (-30.0, 60.0), 2001).unwrap_err();
        assert!(matches!(err, FrontError::InadmissibleSpeed { .. }));
    }

    #[test]
    fn logistic_profile_is_normalized_and_monotone() {
        let p = front_profile(&ReactionSpec::logistic(), 2.0, (-30.0, 60.0), 9001).unwrap();
        let i0 = p.z.iter().position(|z| z.abs() < 1e-9).unwrap();
        assert!((p.phi[i0] - 0.5).abs() < 1e-9);
        assert!(p.phi.windows(2).all(|w| w[1] < w[0]));
        assert!(p.lower_limit_ok);
        let r = ode_residual(&p, &ReactionSpec::logistic());
        assert!(r <= 1e-8, "residual {r}");
        // the upper tail decays like e^{(√2-1)z}: 1-φ(-30) ≈ 3.3e-6, so the flag is honestly off
        assert!(!p.upper_limit_ok);
        assert!((1.0 - p.phi[0] - 3.3e-6).abs() < 1e-7, "{}", 1.0 - p.phi[0]);
        let wide = front_profile(&ReactionSpec::logistic(), 2.0, (-40.0, 60.0), 10_001).unwrap();
        assert!(wide.upper_limit_ok && wide.lower_limit_ok);
    }

    #[test]
    fn supercritical_logistic_profile_exists() {
        let p = front_profile(&ReactionSpec::logistic(), 3.0, (-30.0, 60.0), 9001).unwrap();
        assert!(p.phi.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn decay_diagnostic_separates_minimal_from_fast_fronts() {
        let f = ReactionSpec::logistic();
        let p = front_profile(&f, 2.0, (-30.0, 60.0), 9001).unwrap();
        let d = decay_diagnostic(&p, 2.0);
        assert!(!d.flagged, "{d:?}");
        assert!(d.constant > 0.0);
        let p3 = front_profile(&f, 3.0, (-30.0, 60.0), 9001).unwrap();
        assert!(decay_diagnostic(&p3, 2.0).flagged);
    }

    #[test]
    fn shot_classes_are_ordered_for_bistable() {
        let f = ReactionSpec::bistable(0.25).unwrap();
        let s = ShootSettings::default();
        assert_eq!(classify_shot(&f, Connection::FULL, 0.0, s).unwrap(), ShotOutcome::Overshoot);
        assert_eq!(classify_shot(&f, Connection::FULL, 1.0, s).unwrap(), ShotOutcome::Undershoot);
    }

    #[test]
    fn ignition_speed_is_positive() {
        let f = ReactionSpec::ignition(0.3).unwrap();
        let (c, p) = shoot_front_speed(&f, 1e-6).unwrap();
        assert!(c > 0.0);
        assert!(p.phi.windows(2).all(|w| w[1] <= w[0]));
    }

    fn closed_form_bistable(a: f64) -> f64 {
        // f = s(1-s)(s-a) has the explicit front tanh-profile with c = √2(1/2 - a)
        std::f64::consts::SQRT_2 * (0.5 - a)
    }

    #[test]
    fn bistable_speed_matches_explicit_front() {
        let (c, p) = shoot_front_speed(&ReactionSpec::bistable(0.25).unwrap(), 1e-8).unwrap();
        assert!((c - closed_form_bistable(0.25)).abs() < 1e-6, "{c}");
        assert!(p.upper_limit_ok && p.lower_limit_ok);
        let r = ode_residual(&p, &ReactionSpec::bistable(0.25).unwrap());
        assert!(r <= 1e-7, "residual {r}");
    }

    #[test]
    fn refinement_is_self_consistent() {
        let f = ReactionSpec::bistable(0.25).unwrap();
        let coarse = bisect_speed(&f, Connection::FULL, 1e-6, ShootSettings::default()).unwrap().midpoint();
        let fine = bisect_speed(&f, Connection::FULL, 5e-7, ShootSettings::default()).unwrap().midpoint();
        assert!((coarse - fine).abs() <= 1e-6);
        let oracle = bisect_speed(
            &f,
            Connection::FULL,
            1e-9,
            ShootSettings { step: ODE_STEP / 2.0, ..Default::default() },
        )
        .unwrap()
        .midpoint();
        assert!((coarse - oracle).abs() <= 1e-6, "{coarse} vs {oracle}");
    }

    #[test]
    fn launch_offset_sensitivity() {
        let f = ReactionSpec::bistable(0.3).unwrap();
        let a = shoot_connection_speed(&f, Connection::FULL, 1e-9, ShootSettings::default()).unwrap();
        let b = shoot_connection_speed(
            &f,
            Connection::FULL,
            1e-9,
            ShootSettings { launch_eps: LAUNCH_EPS / 10.0, ..Default::default() },
        )
        .unwrap();
        assert!((a - b).abs() <= 1e-7, "{a} vs {b}");
    }

    #[test]
    fn bistable_speed_sign_and_antisymmetry() {
        let s = ShootSettings::default();
        for a in [0.2, 0.4, 0.45] {
            let f = ReactionSpec::bistable(a).unwrap();
            let c = shoot_connection_speed(&f, Connection::FULL, 1e-8, s).unwrap();
            let (int, _) = f.integral(0.0, 1.0);
            assert_eq!(c > 0.0, int > 0.0, "a = {a}");
            let mirrored = shoot_connection_speed(&ReactionSpec::bistable(1.0 - a).unwrap(), Connection::FULL, 1e-8, s).unwrap();
            assert!((c + mirrored).abs() <= 1e-5, "a = {a}: {c} vs {mirrored}");
        }
    }

    #[test]
    fn kpp_shooting_bound_does_not_exceed_minimal_speed() {
        for f in [ReactionSpec::logistic(), ReactionSpec::logistic().scaled(0.25).unwrap()] {
            let tol = 1e-4;
            let c = shoot_connection_speed(&f, Connection::FULL, tol, ShootSettings::default()).unwrap();
            let cs = kpp_minimal_speed(&f).unwrap();
            assert!(c <= cs + tol, "{c} vs {cs}");
        }
    }

    #[test]
    fn profile_csv_has_two_columns() {
        let p = front_profile(&ReactionSpec::logistic(), 2.0, (-30.0, 60.0), 91).unwrap();
        let csv = p.to_csv();
        assert!(csv.starts_with("z,phi\n"));
        assert_eq!(csv.lines().count(), 92);
    }

    #[test]
    fn tristable_stage_speeds_follow_amplitudes() {
        let slow_low = ReactionSpec::tristable(0.1, 0.4, 0.6, 1.0, 40.0).unwrap();
        let (c1, c2) = tristable_stage_speeds(&slow_low, 1e-6).unwrap();
        assert!(c1 < c2, "{c1} {c2}");
        let fast_low = ReactionSpec::tristable(0.1, 0.4, 0.6, 40.0, 1.0).unwrap();
        let (d1, d2) = tristable_stage_speeds(&fast_low, 1e-6).unwrap();
        assert!(d1 > d2, "{d1} {d2}");
    }
}
