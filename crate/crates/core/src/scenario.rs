//! Declarative scenarios: JSON configs, preset experiments, artifacts and verdicts.
//!
//! A run directory holds `metadata.json` (config echo and digest), `levelset_<λ>.csv`,
//! optional `field_*.bin/json`, per-check CSVs, `report.json` (verdicts) and `timings.json`.
//! Everything except `timings.json` is byte-identical across reruns of the same config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{self, AnalysisError, CloudCompletion, LagMode, Relation, SumAuditOptions, ThresholdOptions, Verdict};
use crate::front::{self, FrontError};
use crate::levelset::{self, LevelSetSeries, UpperLevelCloud};
use crate::numerics::least_squares;
use crate::pde::{self, Axis, Boundary, Domain, Field, FramePolicy, Geometry, PdeError, Scheme, SolverConfig, TimeStep};
use crate::reaction::{ReactionKind, ReactionSpec};
use crate::support::{self, BoundingBox, GammaSpec, SupportError, SupportSpec};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config rejected: {0}")]
    Config(String),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Front(#[from] FrontError),
    #[error(transparent)]
    Support(#[from] SupportError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("missing observable: {0}")]
    Missing(String),
    #[error("unknown plot kind `{0}` (expected lag, envelope, flattening or profile)")]
    UnknownKind(String),
}

fn reject(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Config(msg.into())
}

// ---------------------------------------------------------------------------
// config

/// Axes in storage order (`[prop]` or `[perp, prop]`), each `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBlock {
    pub geometry: Geometry,
    pub extents: Vec<[f64; 2]>,
    pub h: f64,
    pub bc: Vec<[Boundary; 2]>,
}

impl DomainBlock {
    pub fn build(&self) -> Result<Domain, PdeError> {
        let axes = self
            .extents
            .iter()
            .map(|e| Axis::new(e[0], e[1], self.h))
            .collect::<Result<Vec<_>, _>>()?;
        let d = Domain {
            geometry: self.geometry,
            axes,
            bc: self.bc.clone(),
        };
        d.validate()?;
        Ok(d)
    }
}

/// Reference speed for fits and comparisons.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedRef {
    /// `2√f'(0)` for KPP reactions, the shooting speed otherwise.
    Theoretical,
    Shooting,
    /// Minimal speed of the linearized scheme on the run's lattice.
    Discrete,
    /// Same, for fronts whose normal makes this angle with the `x_N` axis.
    DiscreteAlong(f64),
    /// Speed of a 1D run with the same lattice and time step.
    Measured1d,
    Value(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum Check {
    Speed {
        lambda: f64,
        x0: f64,
        window: (f64, f64),
        expected: SpeedRef,
        tolerance: f64,
        relation: Relation,
    },
    Lag {
        lambda: f64,
        x0: f64,
        mode: LagMode,
        speed: SpeedRef,
        #[serde(default)]
        window: Option<(f64, f64)>,
        expected: f64,
        tolerance: f64,
        relation: Relation,
    },
    /// Lag coefficient reported next to a conjectured value, without a verdict.
    LagReport {
        lambda: f64,
        speed: SpeedRef,
        conjectured: f64,
    },
    ShootingConsistency {
        tol_coarse: f64,
        tol_fine: f64,
        tolerance: f64,
    },
    /// `max_{|x'| ≤ radius} |X(t,x') − X(t,0)|` over `t ≥ from`.
    LateralSpread {
        lambda: f64,
        radius: f64,
        from: f64,
        bound: f64,
    },
    /// Local Hausdorff distance to the spreading set on the snapshots.
    Envelope {
        lambda: f64,
        r: f64,
        resolution: f64,
        stride: usize,
        completion: CloudCompletion,
        tolerance: f64,
    },
    /// `max |∇X_λ|` over `|x' − center| ≤ radius` at the snapshot `time`.
    Flattening {
        lambdas: Vec<f64>,
        radius: f64,
        center: f64,
        time: f64,
        bound: f64,
        relation: Relation,
    },
    /// `F_λ(t) ⊆ {dist(·,U) ≤ c*t + R}` on the observed clouds.
    Inclusion { bound: f64 },
    /// Gap `d_H(F_λ(t), {dist ≤ c t})` stays `O(log t)`: over the default fit window the
    /// ratio gap/log t must not grow, i.e. its maximum on the later half (in log-time)
    /// exceeds the maximum on the earlier half by at most `slack`.
    GapRatio { speed: SpeedRef, res: f64, slack: f64 },
    SumAudit {
        delta: f64,
        k_max: i64,
        stride: usize,
        x1_max: f64,
        times: Vec<f64>,
        radial_h: f64,
        radial_extent: f64,
        tolerance: f64,
    },
    Terrace { min_plateaus: usize },
    Threshold {
        reaction: ReactionSpec,
        l_range: (f64, f64),
        options: ThresholdOptions,
    },
}

impl Check {
    fn key(&self) -> &'static str {
        match self {
            Check::Speed { .. } => "speed",
            Check::Lag { .. } => "lag",
            Check::LagReport { .. } => "lag_report",
            Check::ShootingConsistency { .. } => "shooting_consistency",
            Check::LateralSpread { .. } => "lateral_spread",
            Check::Envelope { .. } => "envelope",
            Check::Flattening { .. } => "flattening",
            Check::Inclusion { .. } => "inclusion",
            Check::GapRatio { .. } => "gap_ratio",
            Check::SumAudit { .. } => "sum_audit",
            Check::Terrace { .. } => "terrace",
            Check::Threshold { .. } => "threshold",
        }
    }
}

/// Upper-level clouds collected during the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudObservation {
    pub lambda: f64,
    pub stride: usize,
    /// Time between collected clouds (first at `t = 1`).
    pub every: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    #[serde(default)]
    pub clouds: Option<CloudObservation>,
    #[serde(default)]
    pub checks: Vec<Check>,
    #[serde(default = "yes")]
    pub write_fields: bool,
}

fn yes() -> bool {
    true
}

impl Default for Observables {
    fn default() -> Self {
        Observables {
            clouds: None,
            checks: vec![],
            write_fields: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub theorem: String,
    pub reaction: ReactionSpec,
    pub domain: DomainBlock,
    pub support: SupportSpec,
    pub solver: SolverConfig,
    #[serde(default)]
    pub observables: Observables,
    /// Where artifacts go; not part of the digest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| reject(format!("parse: {e}")))
    }

    /// Canonical JSON without the output location.
    pub fn canonical(&self) -> Value {
        let mut c = self.clone();
        c.output = None;
        serde_json::to_value(&c).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON.
    pub fn digest(&self) -> String {
        digest_of(&self.canonical())
    }

    /// Checks every module precondition that can be checked before computing.
    pub fn validate(&self) -> Result<(Field, f64), ScenarioError> {
        let domain = self.domain.build()?;
        self.support.validate()?;
        let field = pde::init_from_support(&self.support, &domain)?;
        let dt = pde::resolve_dt(&self.solver, &domain, &self.reaction)?;
        let lambdas = &self.solver.lambdas;
        let has = |l: f64| lambdas.iter().any(|x| (x - l).abs() < 1e-12);
        let snap = |t: f64| self.solver.snapshot_times.iter().any(|s| (s - t).abs() < 1e-9);
        for c in &self.observables.checks {
            match c {
                Check::Speed { lambda, window, .. } => {
                    if !has(*lambda) {
                        return Err(reject(format!("speed check needs λ = {lambda} in solver.lambdas")));
                    }
                    check_window(*window, self.solver.max_time)?;
                }
                Check::Lag { lambda, window, .. } => {
                    if !has(*lambda) {
                        return Err(reject(format!("lag check needs λ = {lambda} in solver.lambdas")));
                    }
                    if let Some(w) = window {
                        check_window(*w, self.solver.max_time)?;
                    } else if self.solver.max_time < 40.0 {
                        return Err(reject("lag check needs max_time ≥ 40 for the default window"));
                    }
                }
                Check::LagReport { lambda, .. } => {
                    if !has(*lambda) || self.solver.max_time < 40.0 {
                        return Err(reject("lag report needs its λ in solver.lambdas and max_time ≥ 40"));
                    }
                }
                Check::LateralSpread { lambda, .. } => {
                    if !has(*lambda) {
                        return Err(reject(format!("lateral spread needs λ = {lambda} in solver.lambdas")));
                    }
                }
                Check::Envelope { .. } | Check::Terrace { .. } => {
                    if self.solver.snapshot_times.is_empty() {
                        return Err(reject(format!("{} check needs snapshot_times", c.key())));
                    }
                }
                Check::Flattening { lambdas: ls, time, .. } => {
                    if !snap(*time) {
                        return Err(reject(format!("flattening needs a snapshot at t = {time}")));
                    }
                    if ls.is_empty() || !has(ls[0]) {
                        return Err(reject("flattening needs its first λ in solver.lambdas"));
                    }
                }
                Check::Inclusion { .. } | Check::GapRatio { .. } => {
                    if self.observables.clouds.is_none() {
                        return Err(reject(format!("{} check needs observables.clouds", c.key())));
                    }
                }
                Check::SumAudit { times, delta, .. } => {
                    if !times.iter().all(|t| snap(*t)) {
                        return Err(reject("sum audit needs snapshots at its audit times"));
                    }
                    if self.support.as_subgraph().is_none() {
                        return Err(reject("sum audit needs a subgraph support"));
                    }
                    if !(*delta > 0.0) {
                        return Err(reject("sum audit needs δ > 0"));
                    }
                }
                Check::ShootingConsistency { .. } | Check::Threshold { .. } => {}
            }
        }
        Ok((field, dt))
    }
}

fn check_window(w: (f64, f64), t_end: f64) -> Result<(), ScenarioError> {
    if !(w.0 >= 10.0 && w.1 >= 4.0 * w.0) {
        return Err(reject(format!("fit window {w:?}: need t0 ≥ 10 and t1/t0 ≥ 4")));
    }
    if w.1 > t_end + 1e-9 {
        return Err(reject(format!("fit window {w:?} ends after max_time {t_end}")));
    }
    Ok(())
}

pub fn digest_of(v: &Value) -> String {
    let bytes = serde_json::to_vec(v).expect("json");
    let d = Sha256::digest(&bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// running

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub name: String,
    pub digest: String,
    pub dir: PathBuf,
    pub verdicts: Vec<Verdict>,
    pub details: BTreeMap<String, Value>,
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl ScenarioOutcome {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn verdict(&self, tag_prefix: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.theorem.starts_with(tag_prefix))
    }
}

/// Everything a check needs from a finished run.
struct RunContext<'a> {
    config: &'a ScenarioConfig,
    record: &'a pde::RunRecord,
    initial: &'a Field,
    clouds: &'a [(UpperLevelCloud, BoundingBox)],
}

impl RunContext<'_> {
    fn series(&self, lambda: f64) -> Result<&LevelSetSeries, ScenarioError> {
        self.record
            .series
            .iter()
            .find(|s| (s.lambda - lambda).abs() < 1e-12)
            .ok_or_else(|| ScenarioError::Missing(format!("level set λ = {lambda}")))
    }

    fn snapshot(&self, t: f64) -> Result<&Field, ScenarioError> {
        let dt = self.record.dt;
        self.record
            .snapshots
            .iter()
            .find(|f| (f.time - t).abs() <= 0.5 * dt + 1e-9)
            .ok_or_else(|| ScenarioError::Missing(format!("snapshot at t = {t}")))
    }

    fn speed(&self, r: SpeedRef) -> Result<f64, ScenarioError> {
        let spec = &self.config.reaction;
        let h = self.record.final_field.domain.prop_axis().h;
        Ok(match r {
            SpeedRef::Value(v) => v,
            SpeedRef::Theoretical => theoretical_speed(spec)?,
            SpeedRef::Shooting => front::shoot_front_speed(spec, 1e-10)?.0,
            SpeedRef::Discrete => {
                analysis::discrete_kpp_speed(spec.derivative_at_zero(), h, self.record.dt, self.config.solver.scheme)
            }
            SpeedRef::DiscreteAlong(theta) => analysis::discrete_kpp_speed_along(
                spec.derivative_at_zero(),
                h,
                self.record.dt,
                self.config.solver.scheme,
                theta,
            ),
            SpeedRef::Measured1d => analysis::measured_speed_1d(spec, h, self.record.dt, self.config.solver.scheme, 400.0)?,
        })
    }

    fn dim(&self) -> u32 {
        match self.config.domain.geometry {
            Geometry::Line => 1,
            Geometry::Plane => 2,
            Geometry::Radial { dim } | Geometry::Cylinder { dim } => dim,
        }
    }
}

/// `2√f'(0)` for KPP-class reactions, the shooting speed otherwise.
pub fn theoretical_speed(spec: &ReactionSpec) -> Result<f64, ScenarioError> {
    match front::kpp_minimal_speed(spec) {
        Ok(c) => Ok(c),
        Err(_) => Ok(front::shoot_front_speed(spec, 1e-10)?.0),
    }
}

struct CheckOutput {
    verdicts: Vec<Verdict>,
    detail: Value,
    files: Vec<(String, String)>,
}

fn verdict(ctx: &RunContext, tag: &str, measured: f64, expected: f64, tolerance: f64, rel: Relation) -> Verdict {
    Verdict::new(&ctx.config.name, &format!("{tag} | {}", ctx.config.theorem), measured, expected, tolerance, rel)
}

fn csv(header: &str, rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| format!("{v}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

fn grad_max_near(g: &levelset::GradX, center: f64, radius: f64) -> f64 {
    let mut best = f64::NAN;
    let mut nearest = (f64::INFINITY, f64::NAN);
    for (x, v) in g.x_perp.iter().zip(&g.grad) {
        if !v.is_finite() {
            continue;
        }
        let d = (x - center).abs();
        if d < nearest.0 {
            nearest = (d, v.abs());
        }
        if d <= radius + 1e-9 {
            best = if best.is_nan() { v.abs() } else { best.max(v.abs()) };
        }
    }
    if best.is_nan() {
        nearest.1
    } else {
        best
    }
}

fn run_check(ctx: &RunContext, check: &Check) -> Result<CheckOutput, ScenarioError> {
    let mut files = vec![];
    let (verdicts, detail) = match check {
        Check::Speed {
            lambda,
            x0,
            window,
            expected,
            tolerance,
            relation,
        } => {
            let est = analysis::estimate_speed(ctx.series(*lambda)?, *x0, Some(*window))?;
            let target = ctx.speed(*expected)?;
            (
                vec![verdict(ctx, "speed", est.c, target, *tolerance, *relation)],
                json!({ "estimate": est, "reference": target }),
            )
        }
        Check::Lag {
            lambda,
            x0,
            mode,
            speed,
            window,
            expected,
            tolerance,
            relation,
        } => {
            let c = ctx.speed(*speed)?;
            let fit = analysis::fit_lag(ctx.series(*lambda)?, *x0, *mode, c, *window)?;
            (
                vec![verdict(ctx, "lag_k", fit.k, *expected, *tolerance, *relation)],
                json!({ "fit": fit, "lambda": lambda, "x0": x0, "speed_ref": speed }),
            )
        }
        Check::LagReport {
            lambda,
            speed,
            conjectured,
        } => {
            let c = ctx.speed(*speed)?;
            let fit = analysis::fit_lag(ctx.series(*lambda)?, 0.0, LagMode::FixSpeed, c, None)?;
            (vec![], json!({ "k": fit.k, "conjectured": conjectured, "difference": fit.k - conjectured, "fit": fit }))
        }
        Check::ShootingConsistency {
            tol_coarse,
            tol_fine,
            tolerance,
        } => {
            let (c1, _) = front::shoot_front_speed(&ctx.config.reaction, *tol_coarse)?;
            let (c2, profile) = front::shoot_front_speed(&ctx.config.reaction, *tol_fine)?;
            let residual = front::ode_residual(&profile, &ctx.config.reaction);
            (
                vec![verdict(ctx, "shooting_refinement", (c1 - c2).abs(), 0.0, *tolerance, Relation::AtMost)],
                json!({ "coarse": c1, "fine": c2, "residual": residual }),
            )
        }
        Check::LateralSpread {
            lambda,
            radius,
            from,
            bound,
        } => {
            let s = ctx.series(*lambda)?;
            let mut worst = 0.0f64;
            let centre = s.x_perp.iter().enumerate().min_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap()).map(|(k, _)| k);
            let centre = centre.ok_or_else(|| ScenarioError::Missing("transverse axis".into()))?;
            let mut rows = vec![];
            for sl in s.slices.iter().filter(|sl| sl.time >= *from) {
                let mut m = 0.0f64;
                for (k, xp) in sl.x_perp.iter().enumerate() {
                    if xp.abs() <= *radius && sl.valid[k] && sl.valid[centre] {
                        m = m.max((sl.x[k] - sl.x[centre]).abs());
                    }
                }
                rows.push(vec![sl.time, m]);
                worst = worst.max(m);
            }
            files.push(("lateral_spread.csv".into(), csv("t,spread", rows)));
            (
                vec![verdict(ctx, "lateral_spread", worst, 0.0, *bound, Relation::AtMost)],
                json!({ "max_spread": worst }),
            )
        }
        Check::Envelope {
            lambda,
            r,
            resolution,
            stride,
            completion,
            tolerance,
        } => {
            let c_star = theoretical_speed(&ctx.config.reaction)?;
            let clouds: Vec<UpperLevelCloud> = ctx
                .record
                .snapshots
                .iter()
                .map(|f| levelset::upper_level_cloud_strided(f, *lambda, *stride))
                .collect();
            let cmp = analysis::compare_envelope(&clouds, &ctx.config.support, c_star, *r, *resolution, completion, None)?;
            let n = cmp.local.len();
            let last = cmp.local[n - 1];
            let tail = &cmp.local[n.saturating_sub(3)..];
            let rise = tail.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
            let rise = if rise.is_finite() { rise } else { 0.0 };
            files.push((
                "envelope_series.csv".into(),
                csv("t,local_dh", cmp.times.iter().zip(&cmp.local).map(|(t, d)| vec![*t, *d])),
            ));
            // polar comparison on the last cloud
            let env = support::envelope_w(&ctx.config.support, c_star)?;
            let m = env.theta.len();
            let mut empirical = vec![0.0f64; m];
            if let Some(cl) = clouds.last() {
                let t = cl.time;
                for p in &cl.points {
                    let mut q = vec![[p[0] / t, p[1] / t]];
                    if completion.mirror_x1 && p[0] > 0.0 {
                        q.push([-p[0] / t, p[1] / t]);
                    }
                    for q in q {
                        let rr = q[0].hypot(q[1]);
                        if rr > *r {
                            continue;
                        }
                        let k = ((support::angle_of(q) / std::f64::consts::TAU) * m as f64).round() as usize % m;
                        empirical[k] = empirical[k].max(rr);
                    }
                }
            }
            let rows = (0..m).map(|k| vec![env.theta[k], if env.unbounded[k] { f64::INFINITY } else { env.w[k] }, empirical[k]]);
            files.push(("envelope.csv".into(), csv("theta,w,empirical", rows)));
            (
                vec![
                    verdict(ctx, "envelope_local_dh", last, 0.0, *tolerance, Relation::AtMost),
                    verdict(ctx, "envelope_monotone", rise, 0.0, 0.0, Relation::AtMost),
                ],
                json!({ "comparison": cmp, "c_star": c_star }),
            )
        }
        Check::Flattening {
            lambdas,
            radius,
            center,
            time,
            bound,
            relation,
        } => {
            let f = ctx.snapshot(*time)?;
            let mut worst = 0.0f64;
            let mut per = vec![];
            for l in lambdas {
                let slice = levelset::extract_x(f, *l).map_err(|e| ScenarioError::Missing(e.to_string()))?;
                let g = levelset::grad_x_checked(&slice, f);
                let m = grad_max_near(&g, *center, *radius);
                per.push(json!({ "lambda": l, "max_grad": m, "discrepancy": g.max_discrepancy }));
                worst = worst.max(m);
            }
            let s = ctx.series(lambdas[0])?;
            let rows = s.slices.iter().map(|sl| vec![sl.time, grad_max_near(&levelset::grad_x(sl), *center, *radius)]);
            files.push(("flattening.csv".into(), csv("t,max_grad", rows)));
            (
                vec![verdict(ctx, "flattening", worst, *bound, 0.0, *relation)],
                json!({ "per_lambda": per }),
            )
        }
        Check::Inclusion { bound } => {
            let c_star = theoretical_speed(&ctx.config.reaction)?;
            let clouds: Vec<UpperLevelCloud> = ctx.clouds.iter().map(|c| c.0.clone()).collect();
            let audit = analysis::inclusion_audit(&clouds, &ctx.config.support, c_star, ctx.dim())?;
            files.push((
                "inclusion.csv".into(),
                csv("t,excess", audit.times.iter().zip(&audit.excess).map(|(t, e)| vec![*t, *e])),
            ));
            (
                vec![verdict(ctx, "inclusion_R", audit.run_constant, 0.0, *bound, Relation::AtMost)],
                json!({ "run_constant": audit.run_constant }),
            )
        }
        Check::GapRatio { speed, res, slack } => {
            let c = ctx.speed(*speed)?;
            let mut t = vec![];
            let mut gap = vec![];
            for (cl, bbox) in ctx.clouds {
                let (g, flag) = analysis::global_gap(&cl.points, &ctx.config.support, c * cl.time, *bbox, *res)?;
                if !flag {
                    t.push(cl.time);
                    gap.push(g);
                }
            }
            let w = analysis::default_window(t.last().copied().unwrap_or(0.0));
            let (tt, gg): (Vec<f64>, Vec<f64>) =
                t.iter().zip(&gap).filter(|(t, _)| **t >= w.0 - 1e-9 && **t <= w.1 + 1e-9).map(|(a, b)| (*a, *b)).unzip();
            if tt.len() < 4 {
                return Err(ScenarioError::Missing("gap observations in the fit window".into()));
            }
            let ls = least_squares(&tt, &gg, |t| vec![1.0, t.ln(), t]);
            let ratios: Vec<f64> = tt.iter().zip(&gg).map(|(t, g)| g / t.ln()).collect();
            let mid = (w.0 * w.1).sqrt();
            let half_max = |late: bool| {
                tt.iter()
                    .zip(&ratios)
                    .filter(|(t, _)| (**t > mid) == late)
                    .map(|(_, r)| *r)
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            let (early, late) = (half_max(false), half_max(true));
            files.push((
                "gap.csv".into(),
                csv("t,gap,ratio", t.iter().zip(&gap).map(|(t, g)| vec![*t, *g, if *t > 1.0 { g / t.ln() } else { f64::NAN }])),
            ));
            (
                vec![verdict(ctx, "gap_log_growth", late - early, 0.0, *slack, Relation::AtMost)],
                json!({
                    "speed": c,
                    "window": w,
                    "early_max_ratio": early,
                    "late_max_ratio": late,
                    "max_ratio": early.max(late),
                    "drift_fit": ls.coefficients,
                }),
            )
        }
        Check::SumAudit {
            delta,
            k_max,
            stride,
            x1_max,
            times,
            radial_h,
            radial_extent,
            tolerance,
        } => {
            let gamma: GammaSpec = ctx.config.support.as_subgraph().expect("validated");
            let cover = analysis::covering_check(ctx.initial, &gamma, *k_max);
            let wd = Domain::radial(2, *radial_extent, *radial_h, Boundary::ZERO)?;
            let w0 = Field::from_fn(wd, |_, r| if r <= *delta + 1e-12 { 1.0 } else { 0.0 });
            let mut wc = SolverConfig::explicit(times.iter().copied().fold(0.0, f64::max), 1.0);
            wc.scheme = ctx.config.solver.scheme;
            wc.dt = TimeStep::Fixed(ctx.record.dt);
            wc.snapshot_times = times.clone();
            let w = pde::advance(w0, &ctx.config.reaction, &wc, &mut [])?;
            let snaps: Vec<Field> = times.iter().map(|t| ctx.snapshot(*t).cloned()).collect::<Result<_, _>>()?;
            let opts = SumAuditOptions {
                delta: *delta,
                k_max: *k_max,
                stride: *stride,
                x1_max: *x1_max,
            };
            let audit = analysis::sum_supersolution_audit(&snaps, &gamma, &w.snapshots, &opts)?;
            (
                vec![
                    verdict(ctx, "covering", cover, *delta, 0.0, Relation::AtMost),
                    verdict(ctx, "sum_supersolution", audit.max_violation, 0.0, *tolerance, Relation::AtMost),
                ],
                json!({ "audit": audit, "covering_distance": cover }),
            )
        }
        Check::Terrace { min_plateaus } => {
            let (c1, c2) = front::tristable_stage_speeds(&ctx.config.reaction, 1e-8)?;
            let report = analysis::detect_terrace(&ctx.record.snapshots);
            let expanding = report.plateaus.iter().filter(|p| p.expanding).count();
            (
                vec![
                    verdict(ctx, "stage_order", c1 - c2, 0.0, 0.0, Relation::AtLeast),
                    verdict(ctx, "terrace_plateaus", expanding as f64, *min_plateaus as f64, 0.0, Relation::AtLeast),
                ],
                json!({ "stage_speeds": [c1, c2], "report": report }),
            )
        }
        Check::Threshold {
            reaction,
            l_range,
            options,
        } => {
            let r = analysis::threshold_bisection(reaction, l_range.0, l_range.1, options)?;
            (
                vec![verdict(ctx, "threshold_bracket", r.width(), 0.0, options.tol, Relation::AtMost)],
                json!({ "result": r }),
            )
        }
    };
    Ok(CheckOutput { verdicts, detail, files })
}

/// Range and ordering properties every run must satisfy.
fn property_verdicts(ctx: &RunContext) -> Vec<Verdict> {
    let (lo, hi) = ctx.record.value_range;
    let excursion = (-lo).max(hi - 1.0).max(0.0);
    let mut out = vec![verdict(ctx, "range", excursion, 0.0, 1e-12, Relation::AtMost)];
    let monotone_support = matches!(
        ctx.config.support,
        SupportSpec::Subgraph { .. } | SupportSpec::HalfSpace { normal: [0.0, 1.0], .. } | SupportSpec::Ball { center: [0.0, 0.0], .. }
    );
    let radial_ball = matches!(ctx.config.domain.geometry, Geometry::Radial { .. });
    if monotone_support && (radial_ball || !matches!(ctx.config.support, SupportSpec::Ball { .. })) {
        let f = &ctx.record.final_field;
        let mut rise = 0.0f64;
        for i in 0..f.n_perp() {
            for w in f.column(i).windows(2) {
                rise = rise.max(w[1] - w[0]);
            }
        }
        out.push(verdict(ctx, "monotone_xn", rise, 0.0, 1e-10, Relation::AtMost));
    }
    out
}

/// Runs `config` and writes its artifacts into `dir` (replacing a previous run there).
pub fn run_scenario(config: &ScenarioConfig, dir: &Path) -> Result<ScenarioOutcome, ScenarioError> {
    let start = Instant::now();
    let (field, _) = config.validate()?;
    prepare_dir(dir)?;
    let initial = field.clone();
    let digest = config.digest();

    let mut clouds: Vec<(UpperLevelCloud, BoundingBox)> = vec![];
    let rec = {
        let obs = config.observables.clouds.clone();
        let mut next = 1.0f64;
        let mut collect = |f: &Field| -> Result<(), PdeError> {
            if let Some(o) = &obs {
                if f.time >= next - 1e-9 {
                    clouds.push((levelset::upper_level_cloud_strided(f, o.lambda, o.stride), window_box(f)));
                    while next <= f.time + 1e-9 {
                        next += o.every;
                    }
                }
            }
            Ok(())
        };
        pde::advance(field, &config.reaction, &config.solver, &mut [&mut collect])?
    };
    let run_seconds = start.elapsed().as_secs_f64();

    let ctx = RunContext {
        config,
        record: &rec,
        initial: &initial,
        clouds: &clouds,
    };
    let mut verdicts = property_verdicts(&ctx);
    let mut details = BTreeMap::new();
    let mut files = vec![];
    for check in &config.observables.checks {
        let out = run_check(&ctx, check)?;
        verdicts.extend(out.verdicts);
        let mut key = check.key().to_string();
        let mut n = 1;
        while details.contains_key(&key) {
            n += 1;
            key = format!("{}_{n}", check.key());
        }
        details.insert(key, out.detail);
        files.extend(out.files);
    }

    let echo = json!({ "scenario": config.canonical(), "digest": digest });
    rec.write_dir(dir, &echo, config.observables.write_fields)?;
    for (name, body) in &files {
        fs::write(dir.join(name), body)?;
    }
    let report = json!({
        "scenario": config.name,
        "theorem": config.theorem,
        "digest": digest,
        "verdicts": verdicts,
        "details": details,
        "csv": files.iter().map(|f| f.0.clone()).collect::<Vec<_>>(),
    });
    pde::write_json(&dir.join("report.json"), &report)?;
    let wall = start.elapsed().as_secs_f64();
    pde::write_json(
        &dir.join("timings.json"),
        &json!({ "run_seconds": run_seconds, "analysis_seconds": wall - run_seconds, "wall_seconds": wall }),
    )?;
    Ok(ScenarioOutcome {
        name: config.name.clone(),
        digest,
        dir: dir.to_path_buf(),
        verdicts,
        details,
        wall_seconds: wall,
    })
}

fn window_box(f: &Field) -> BoundingBox {
    let np = f.n_prop();
    let (x1lo, x1hi) = match f.domain.perp_axis() {
        Some(a) => (a.lo, a.hi()),
        None => (0.0, 0.0),
    };
    BoundingBox {
        lower: [x1lo, f.prop_coord(0)],
        upper: [x1hi, f.prop_coord(np - 1)],
    }
}

/// Empties `dir` if it holds a previous run; refuses foreign non-empty directories.
fn prepare_dir(dir: &Path) -> Result<(), ScenarioError> {
    if dir.exists() {
        let foreign = fs::read_dir(dir)?.next().is_some() && !dir.join("metadata.json").exists() && !dir.join("report.json").exists();
        if foreign {
            return Err(reject(format!("output directory {} is not empty", dir.display())));
        }
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// presets

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "combine", rename_all = "snake_case")]
pub enum Combine {
    /// `|k(run a) − k(run b)|` of their lag fits.
    LagDoubling { a: usize, b: usize, tolerance: f64 },
}

pub struct PresetPlan {
    pub id: String,
    pub theorem: String,
    pub configs: Vec<ScenarioConfig>,
    pub combine: Vec<Combine>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PresetInfo {
    pub id: String,
    pub theorem: String,
    pub budget_minutes: f64,
    pub optional: bool,
    /// Last measured runtime, or "unknown".
    pub runtime: String,
}

const PRESETS: &[(&str, &str, f64, bool)] = &[
    ("E1", "KPP spreading speed c* = 2√f'(0)", 1.0, false),
    ("E2", "1D Bramson lag (3/c*) log t", 5.0, false),
    ("E3", "1D bistable front speed (shooting)", 2.0, false),
    ("E4", "radial compact-support lag ((N+2)/c*) log t", 5.0, false),
    ("E5", "radial bistable curvature lag ((N−1)/c0) log t", 5.0, false),
    ("E6", "subgraph lag c*t − ((N+2)/c*) log t (log-coercive support)", 20.0, false),
    ("E7", "spreading set of a cone, shifted interior", 15.0, false),
    ("E8", "flattening of level sets, conical support", 15.0, false),
    ("E9", "lag lower bound (3−σ)/c* for log-growing supports", 20.0, false),
    ("E10", "flattening failure for √|x'| sin √|x'|", 30.0, true),
    ("P5", "terrace of two fronts and invasion threshold", 5.0, false),
];

pub fn preset_ids() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.0).collect()
}

fn runtime_cache_path(root: &Path) -> PathBuf {
    root.join("runtimes.json")
}

fn read_runtime_cache(root: &Path) -> BTreeMap<String, f64> {
    fs::read_to_string(runtime_cache_path(root))
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok())
        .unwrap_or_default()
}

/// Preset table; runtimes come from `<root>/runtimes.json` when present.
pub fn list_presets(root: Option<&Path>) -> Vec<PresetInfo> {
    let cache = root.map(read_runtime_cache).unwrap_or_default();
    PRESETS
        .iter()
        .map(|(id, tag, budget, optional)| PresetInfo {
            id: id.to_string(),
            theorem: tag.to_string(),
            budget_minutes: *budget,
            optional: *optional,
            runtime: cache.get(*id).map_or("unknown".into(), |s| format!("{s:.1}s")),
        })
        .collect()
}

fn tag_of(id: &str) -> Result<&'static str, ScenarioError> {
    PRESETS
        .iter()
        .find(|p| p.0.eq_ignore_ascii_case(id))
        .map(|p| p.1)
        .ok_or_else(|| ScenarioError::UnknownPreset(id.into()))
}

fn dirichlet(lo: f64, hi: f64) -> [Boundary; 2] {
    [Boundary::Dirichlet { value: lo }, Boundary::Dirichlet { value: hi }]
}

const NEUMANN: [Boundary; 2] = [Boundary::NeumannZero, Boundary::NeumannZero];

fn solver(max_time: f64, cadence: f64, frame: FramePolicy, lambdas: Vec<f64>, snaps: Vec<f64>) -> SolverConfig {
    SolverConfig {
        scheme: Scheme::ExplicitEuler,
        dt: TimeStep::Auto(pde::AutoTag::Auto),
        frame,
        max_time,
        cadence,
        lambdas,
        snapshot_times: snaps,
        reference_x: 0.0,
    }
}

fn track(trigger: f64) -> FramePolicy {
    FramePolicy::TrackLevel { lambda: 0.5, trigger }
}

fn step_1d(name: &str, theorem: &str, reaction: ReactionSpec, h: f64, extent: [f64; 2], trigger: f64, t_end: f64) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        theorem: theorem.into(),
        reaction,
        domain: DomainBlock {
            geometry: Geometry::Line,
            extents: vec![extent],
            h,
            bc: vec![dirichlet(1.0, 0.0)],
        },
        support: SupportSpec::HalfSpace {
            normal: [0.0, 1.0],
            offset: 0.0,
        },
        solver: solver(t_end, 1.0, track(trigger), vec![0.5], vec![]),
        observables: Observables::default(),
        output: None,
    }
}

fn ball_radial(name: &str, theorem: &str, reaction: ReactionSpec, h: f64, r_max: f64, radius: f64, trigger: f64, t_end: f64) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        theorem: theorem.into(),
        reaction,
        domain: DomainBlock {
            geometry: Geometry::Radial { dim: 2 },
            extents: vec![[0.0, r_max]],
            h,
            bc: vec![[Boundary::NeumannZero, Boundary::ZERO]],
        },
        support: SupportSpec::Ball {
            center: [0.0, 0.0],
            radius,
        },
        solver: solver(t_end, 1.0, track(trigger), vec![0.5], vec![]),
        observables: Observables::default(),
        output: None,
    }
}

#[allow(clippy::too_many_arguments)]
fn subgraph_2d(
    name: &str,
    theorem: &str,
    gamma: GammaSpec,
    x1: [f64; 2],
    x2: [f64; 2],
    h: f64,
    frame: FramePolicy,
    t_end: f64,
) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        theorem: theorem.into(),
        reaction: ReactionSpec::logistic(),
        domain: DomainBlock {
            geometry: Geometry::Plane,
            extents: vec![x1, x2],
            h,
            bc: vec![NEUMANN, dirichlet(1.0, 0.0)],
        },
        support: SupportSpec::Subgraph { gamma },
        solver: solver(t_end, 1.0, frame, vec![0.5], vec![]),
        observables: Observables::default(),
        output: None,
    }
}

fn lag_check(speed: SpeedRef, expected: f64, tolerance: f64, relation: Relation) -> Check {
    Check::Lag {
        lambda: 0.5,
        x0: 0.0,
        mode: LagMode::FixSpeed,
        speed,
        window: None,
        expected,
        tolerance,
        relation,
    }
}

/// Moving-window subgraph run used by E6 and E9: half domain `x1 ∈ [0, width]`, window height 300.
fn log_subgraph(name: &str, theorem: &str, beta: f64, width: f64) -> ScenarioConfig {
    subgraph_2d(
        name,
        theorem,
        GammaSpec::LogCoercive { beta },
        [0.0, width],
        [-40.0, 260.0],
        0.5,
        track(0.45),
        1000.0,
    )
}

pub fn preset_plan(id: &str) -> Result<PresetPlan, ScenarioError> {
    let tag = tag_of(id)?;
    let id = PRESETS.iter().find(|p| p.0.eq_ignore_ascii_case(id)).unwrap().0;
    let mut combine = vec![];
    let configs = match id {
        "E1" => {
            let mut c = step_1d("e1_kpp_speed", tag, ReactionSpec::logistic(), 0.05, [-40.0, 260.0], 0.4, 400.0);
            c.observables.checks.push(Check::Speed {
                lambda: 0.5,
                x0: 0.0,
                window: (100.0, 400.0),
                expected: SpeedRef::Theoretical,
                tolerance: 0.01,
                relation: Relation::WithinRelative,
            });
            vec![c]
        }
        "E2" => {
            let mut c = step_1d("e2_bramson_lag", tag, ReactionSpec::logistic(), 0.05, [-40.0, 260.0], 0.4, 2000.0);
            c.observables.checks.push(lag_check(SpeedRef::Discrete, 1.5, 0.3, Relation::Within));
            vec![c]
        }
        "E3" => {
            let spec = ReactionSpec::bistable(0.25).expect("valid");
            let mut c = step_1d("e3_bistable_speed", tag, spec, 0.1, [-40.0, 80.0], 0.6, 400.0);
            c.observables.checks.push(Check::Speed {
                lambda: 0.5,
                x0: 0.0,
                window: (100.0, 400.0),
                expected: SpeedRef::Shooting,
                tolerance: 5e-3,
                relation: Relation::Within,
            });
            c.observables.checks.push(Check::ShootingConsistency {
                tol_coarse: 1e-9,
                tol_fine: 1e-11,
                tolerance: 1e-7,
            });
            vec![c]
        }
        "E4" => {
            let mut c = ball_radial("e4_radial_lag", tag, ReactionSpec::logistic(), 0.1, 300.0, 2.0, 0.4, 2000.0);
            c.observables.checks.push(lag_check(SpeedRef::Discrete, 2.0, 0.5, Relation::Within));
            vec![c]
        }
        "E5" => {
            let a = 0.25;
            let c0 = std::f64::consts::SQRT_2 * (0.5 - a);
            let mut c = ball_radial("e5_radial_bistable_lag", tag, ReactionSpec::bistable(a).expect("valid"), 0.1, 150.0, 10.0, 0.6, 2000.0);
            c.observables.checks.push(lag_check(SpeedRef::Measured1d, 1.0 / c0, 0.35, Relation::WithinRelative));
            vec![c]
        }
        "E6" => {
            let mut main = log_subgraph("e6_subgraph_lag", tag, -3.0, 128.0);
            main.solver.snapshot_times = vec![10.0, 20.0, 40.0];
            main.observables.clouds = Some(CloudObservation {
                lambda: 0.5,
                stride: 2,
                every: 10.0,
            });
            main.observables.checks = vec![
                lag_check(SpeedRef::Discrete, 2.0, 0.5, Relation::Within),
                Check::LateralSpread {
                    lambda: 0.5,
                    radius: 2.0,
                    from: 100.0,
                    bound: 1.0,
                },
                Check::Inclusion { bound: 10.0 },
                Check::GapRatio {
                    speed: SpeedRef::Discrete,
                    res: 1.0,
                    slack: 0.25,
                },
                Check::SumAudit {
                    delta: 2.0,
                    k_max: 400,
                    stride: 2,
                    x1_max: 64.0,
                    times: vec![10.0, 20.0, 40.0],
                    radial_h: 0.5,
                    radial_extent: 200.0,
                    tolerance: 1e-6,
                },
            ];
            let mut wide = log_subgraph("e6_subgraph_lag_wide", tag, -3.0, 256.0);
            wide.observables.checks = vec![lag_check(SpeedRef::Discrete, 2.0, 0.5, Relation::Within)];
            wide.observables.write_fields = false;
            combine.push(Combine::LagDoubling {
                a: 0,
                b: 1,
                tolerance: 0.05,
            });
            vec![main, wide]
        }
        "E7" => {
            let mut c = subgraph_2d(
                "e7_cone_envelope",
                tag,
                GammaSpec::Linear { alpha: 1.0 },
                [0.0, 960.0],
                [-60.0, 1000.0],
                0.5,
                FramePolicy::Off,
                150.0,
            );
            c.solver.cadence = 5.0;
            c.solver.snapshot_times = vec![100.0, 125.0, 150.0];
            c.observables.write_fields = false;
            c.observables.clouds = Some(CloudObservation {
                lambda: 0.5,
                stride: 2,
                every: 5.0,
            });
            let r = 6.0;
            c.observables.checks = vec![
                Check::Envelope {
                    lambda: 0.5,
                    r,
                    resolution: r / 400.0,
                    stride: 4,
                    completion: CloudCompletion {
                        mirror_x1: true,
                        fill_below: Some((-60.0, 2.0)),
                    },
                    tolerance: 0.15 * 2.0,
                },
                Check::Inclusion { bound: 10.0 },
                Check::GapRatio {
                    // the cone's flanks are diagonal fronts
                    speed: SpeedRef::DiscreteAlong(std::f64::consts::FRAC_PI_4),
                    res: 1.0,
                    slack: 0.25,
                },
            ];
            vec![c]
        }
        "E8" => {
            let mut c = subgraph_2d(
                "e8_conical_flattening",
                tag,
                GammaSpec::Conical { ell: 1.0, core: 1.0 },
                [0.0, 220.0],
                [-260.0, 360.0],
                0.5,
                FramePolicy::Off,
                150.0,
            );
            c.solver.lambdas = vec![0.5, 0.3, 0.7];
            c.solver.snapshot_times = vec![150.0];
            c.observables.checks = vec![Check::Flattening {
                lambdas: vec![0.5, 0.3, 0.7],
                radius: 2.0,
                center: 0.0,
                time: 150.0,
                bound: 0.05,
                relation: Relation::AtMost,
            }];
            vec![c]
        }
        "E9" => [0.5, 1.0, 2.0]
            .iter()
            .map(|&sigma| {
                // γ = (2σ/c*)·log(1+|x'|) with c* = 2; σ = 0.5 is report-only
                let mut c = log_subgraph(&format!("e9_lag_sigma_{sigma}"), tag, sigma, 128.0);
                c.observables.checks = vec![Check::LagReport {
                    lambda: 0.5,
                    speed: SpeedRef::Discrete,
                    conjectured: (3.0 - sigma) / 2.0,
                }];
                if sigma >= 1.0 {
                    c.observables.checks.push(lag_check(SpeedRef::Discrete, (3.0 - sigma) / 2.0 - 0.3, 0.0, Relation::AtLeast));
                }
                c.observables.write_fields = false;
                c
            })
            .collect(),
        "E10" => {
            // √x' = 2πn with n = 3, where γ' is closest to 1/2
            let centre = 4.0 * std::f64::consts::PI * std::f64::consts::PI * 9.0;
            let mut c = subgraph_2d(
                "e10_sqrt_sine",
                tag,
                GammaSpec::SqrtSine,
                [centre - 80.0, centre + 80.0],
                [-60.0, 280.0],
                0.5,
                FramePolicy::Off,
                100.0,
            );
            c.solver.snapshot_times = vec![100.0];
            c.observables.checks = vec![Check::Flattening {
                lambdas: vec![0.5],
                radius: 0.0,
                center: centre,
                time: 100.0,
                bound: 0.2,
                relation: Relation::AtLeast,
            }];
            vec![c]
        }
        "P5" => {
            let spec = ReactionSpec::tristable(0.1, 0.4, 0.6, 40.0, 1.0).expect("valid");
            let mut c = step_1d("p5_terrace", tag, spec, 0.1, [-20.0, 400.0], 0.5, 150.0);
            c.solver.frame = FramePolicy::Off;
            c.solver.snapshot_times = vec![50.0, 100.0, 150.0];
            c.observables.checks = vec![
                Check::Terrace { min_plateaus: 1 },
                Check::Threshold {
                    reaction: ReactionSpec::bistable(0.25).expect("valid"),
                    l_range: (0.05, 10.0),
                    options: ThresholdOptions::default(),
                },
            ];
            vec![c]
        }
        _ => unreachable!(),
    };
    Ok(PresetPlan {
        id: id.into(),
        theorem: tag.into(),
        configs,
        combine,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PresetReport {
    pub id: String,
    pub theorem: String,
    pub verdicts: Vec<Verdict>,
    pub runs: Vec<ScenarioOutcome>,
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl PresetReport {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    /// Verdicts whose tag starts with `prefix`.
    pub fn find(&self, prefix: &str) -> Vec<&Verdict> {
        self.verdicts.iter().filter(|v| v.theorem.starts_with(prefix)).collect()
    }
}

/// Runs every configuration of preset `id` under `root/<id>/`.
pub fn run_preset(id: &str, root: &Path) -> Result<PresetReport, ScenarioError> {
    let start = Instant::now();
    let plan = preset_plan(id)?;
    let base = root.join(&plan.id);
    fs::create_dir_all(&base)?;
    let mut runs = vec![];
    for c in &plan.configs {
        runs.push(run_scenario(c, &base.join(&c.name))?);
    }
    let mut verdicts: Vec<Verdict> = runs.iter().flat_map(|r| r.verdicts.clone()).collect();
    for comb in &plan.combine {
        match comb {
            Combine::LagDoubling { a, b, tolerance } => {
                let k = |r: &ScenarioOutcome| r.details.get("lag").and_then(|d| d["fit"]["k"].as_f64()).unwrap_or(f64::NAN);
                let diff = (k(&runs[*a]) - k(&runs[*b])).abs();
                verdicts.push(Verdict::new(
                    &plan.id,
                    &format!("lag_doubling | {}", plan.theorem),
                    diff,
                    0.0,
                    *tolerance,
                    Relation::AtMost,
                ));
            }
        }
    }
    let report = PresetReport {
        id: plan.id.clone(),
        theorem: plan.theorem.clone(),
        verdicts,
        runs,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    pde::write_json(
        &base.join("report.json"),
        &json!({
            "preset": report.id,
            "theorem": report.theorem,
            "verdicts": report.verdicts,
            "runs": report.runs.iter().map(|r| json!({ "name": r.name, "digest": r.digest })).collect::<Vec<_>>(),
        }),
    )?;
    let mut cache = read_runtime_cache(root);
    cache.insert(report.id.clone(), report.wall_seconds);
    pde::write_json(&runtime_cache_path(root), &serde_json::to_value(&cache)?)?;
    Ok(report)
}

/// `FRONTLAB_OUTPUT_ROOT` or `./frontlab-out`.
pub fn output_root() -> PathBuf {
    std::env::var_os("FRONTLAB_OUTPUT_ROOT").map_or_else(|| PathBuf::from("frontlab-out"), PathBuf::from)
}

// ---------------------------------------------------------------------------
// plot data

/// Run directories under `dir` (itself, or its immediate subdirectories), sorted.
fn run_dirs(dir: &Path) -> Result<Vec<PathBuf>, ScenarioError> {
    if dir.join("metadata.json").exists() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut out = vec![];
    for e in fs::read_dir(dir)? {
        let p = e?.path();
        if p.join("metadata.json").exists() {
            out.push(p);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(ScenarioError::Missing(format!("run artifacts under {}", dir.display())));
    }
    Ok(out)
}

fn read_json(p: &Path) -> Result<Value, ScenarioError> {
    Ok(serde_json::from_str(&fs::read_to_string(p)?)?)
}

const SCRIPT_HEAD: &str = "import csv, sys\nimport matplotlib\nmatplotlib.use('Agg')\nimport matplotlib.pyplot as plt\n\n";

fn script(csv_name: &str, body: &str, png: &str) -> String {
    format!(
        "{SCRIPT_HEAD}rows = list(csv.DictReader(open('{csv_name}')))\ncol = lambda k: [float(r[k]) for r in rows]\n{body}\nplt.savefig('{png}', dpi=150)\n"
    )
}

/// Writes `plot_<kind>.csv` and `plot_<kind>.py` into the run directory; returns the CSV path.
pub fn emit_plot_data(dir: &Path, kind: &str) -> Result<PathBuf, ScenarioError> {
    let dirs = run_dirs(dir)?;
    let needs = match kind {
        "lag" => "report.json with a lag fit",
        "envelope" => "envelope.csv",
        "flattening" => "flattening.csv",
        "profile" => "metadata.json",
        other => return Err(ScenarioError::UnknownKind(other.into())),
    };
    let has = |d: &Path| -> bool {
        match kind {
            "lag" => read_json(&d.join("report.json")).map(|r| r["details"]["lag"].is_object()).unwrap_or(false),
            "envelope" => d.join("envelope.csv").exists(),
            "flattening" => d.join("flattening.csv").exists(),
            _ => d.join("metadata.json").exists(),
        }
    };
    let d = dirs.iter().find(|d| has(d)).ok_or_else(|| ScenarioError::Missing(format!("{kind}: {needs}")))?;
    let out = d.join(format!("plot_{kind}.csv"));
    let png = format!("plot_{kind}.png");
    let csv_name = format!("plot_{kind}.csv");
    match kind {
        "lag" => {
            let rep = read_json(&d.join("report.json"))?;
            let lag = &rep["details"]["lag"];
            let fit = &lag["fit"];
            let (c, k, b) = (fit["c"].as_f64().unwrap_or(f64::NAN), fit["k"].as_f64().unwrap_or(f64::NAN), fit["b"].as_f64().unwrap_or(f64::NAN));
            let lambda = lag["lambda"].as_f64().unwrap_or(0.5);
            let x0 = lag["x0"].as_f64().unwrap_or(0.0);
            let path = d.join(format!("levelset_{lambda}.csv"));
            let text = fs::read_to_string(&path).map_err(|_| ScenarioError::Missing(format!("lag: levelset_{lambda}.csv")))?;
            let mut lines = text.lines();
            let header: Vec<f64> = lines.next().unwrap_or("").split(',').skip(1).map(|s| s.parse().unwrap_or(f64::NAN)).collect();
            let col = header
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - x0).abs().partial_cmp(&(b.1 - x0).abs()).unwrap())
                .map_or(0, |(k, _)| k);
            let mut rows = vec![];
            for l in lines {
                let v: Vec<f64> = l.split(',').map(|s| s.parse().unwrap_or(f64::NAN)).collect();
                let (t, x) = (v[0], v[1 + col]);
                if t >= 1.0 && x.is_finite() {
                    rows.push(vec![t, c * t - x, k * t.ln() + b]);
                }
            }
            fs::write(&out, csv("t,lag,fit", rows))?;
            let body = "plt.semilogx(col('t'), col('lag'), label='c t - X(t)')\nplt.semilogx(col('t'), col('fit'), '--', label='k log t + b')\nplt.xlabel('t'); plt.legend()";
            fs::write(d.join("plot_lag.py"), script(&csv_name, body, &png))?;
        }
        "envelope" => {
            fs::copy(d.join("envelope.csv"), &out)?;
            let body = "ax = plt.subplot(projection='polar')\nax.plot(col('theta'), [min(w, 6.0) for w in col('w')], label='W')\nax.plot(col('theta'), col('empirical'), '.', ms=2, label='F/t')\nax.legend()";
            fs::write(d.join("plot_envelope.py"), script(&csv_name, body, &png))?;
        }
        "flattening" => {
            fs::copy(d.join("flattening.csv"), &out)?;
            let body = "plt.semilogy(col('t'), col('max_grad'))\nplt.xlabel('t'); plt.ylabel('max |grad X|')";
            fs::write(d.join("plot_flattening.py"), script(&csv_name, body, &png))?;
        }
        _ => {
            let meta = read_json(&d.join("metadata.json"))?;
            let spec: ReactionSpec = serde_json::from_value(meta["config"]["scenario"]["reaction"].clone())?;
            let prof = match front::kpp_minimal_speed(&spec) {
                Ok(c) => front::front_profile(&spec, c, (-40.0, 60.0), 2001)?,
                Err(_) => front::shoot_front_speed(&spec, 1e-10)?.1,
            };
            fs::write(&out, csv("z,phi", prof.z.iter().zip(&prof.phi).map(|(z, p)| vec![*z, *p])))?;
            let body = "plt.plot(col('z'), col('phi'))\nplt.xlabel('z'); plt.ylabel('phi')";
            fs::write(d.join("plot_profile.py"), script(&csv_name, body, &png))?;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// verify

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct VerifyReport {
    pub runs: usize,
    pub checks: usize,
    pub issues: Vec<String>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Re-checks stored artifacts: digests, value range, frame continuity, level-set
/// time ordering, field sizes, and verdict consistency.
pub fn verify(dir: &Path) -> Result<VerifyReport, ScenarioError> {
    let mut rep = VerifyReport::default();
    for d in run_dirs(dir)? {
        rep.runs += 1;
        let name = d.display().to_string();
        let issue = |rep: &mut VerifyReport, ok: bool, msg: String| {
            rep.checks += 1;
            if !ok {
                rep.issues.push(format!("{name}: {msg}"));
            }
        };
        let meta = read_json(&d.join("metadata.json"))?;
        let cfg: Result<ScenarioConfig, _> = serde_json::from_value(meta["config"]["scenario"].clone());
        match cfg {
            Ok(cfg) => {
                let stored = meta["config"]["digest"].as_str().unwrap_or("");
                issue(&mut rep, cfg.digest() == stored, "config digest mismatch".into());
                let h = cfg.domain.h;
                let jump = meta["max_shift_jump"].as_f64().unwrap_or(f64::INFINITY);
                issue(&mut rep, jump <= h + 1e-9, format!("frame shift jump {jump} > h"));
            }
            Err(e) => issue(&mut rep, false, format!("config echo unreadable: {e}")),
        }
        let range = &meta["value_range"];
        let (lo, hi) = (range[0].as_f64().unwrap_or(f64::NAN), range[1].as_f64().unwrap_or(f64::NAN));
        issue(&mut rep, lo >= -1e-12 && hi <= 1.0 + 1e-12, format!("value range [{lo}, {hi}]"));
        let mut entries: Vec<PathBuf> = fs::read_dir(&d)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        entries.sort();
        for p in &entries {
            let fname = p.file_name().and_then(|s| s.to_str()).unwrap_or("");
            if fname.starts_with("levelset_") && fname.ends_with(".csv") {
                let text = fs::read_to_string(p)?;
                let times: Vec<f64> = text.lines().skip(1).filter_map(|l| l.split(',').next()?.parse().ok()).collect();
                let ok = text.starts_with("t") && times.windows(2).all(|w| w[1] > w[0]);
                issue(&mut rep, ok, format!("{fname}: header or time ordering"));
            }
            if fname.starts_with("field_") && fname.ends_with(".json") {
                let head = read_json(p)?;
                let n: u64 = head["dims"].as_array().map_or(0, |a| a.iter().filter_map(|v| v.as_u64()).product());
                let bin = p.with_extension("bin");
                let size = fs::metadata(&bin).map(|m| m.len()).unwrap_or(0);
                issue(&mut rep, size == 8 * n, format!("{fname}: binary size {size} != 8·{n}"));
            }
        }
        if let Ok(report) = read_json(&d.join("report.json")) {
            let verdicts: Vec<Verdict> = serde_json::from_value(report["verdicts"].clone()).unwrap_or_default();
            for v in verdicts {
                let again = Verdict::new(&v.scenario, &v.theorem, v.measured, v.expected, v.tolerance, v.relation);
                issue(&mut rep, again.pass == v.pass, format!("verdict {} inconsistent", v.theorem));
            }
        } else {
            issue(&mut rep, false, "report.json missing".into());
        }
    }
    Ok(rep)
}

/// Kind of the reaction, for display.
pub fn reaction_label(spec: &ReactionSpec) -> &'static str {
    match spec.kind() {
        ReactionKind::Logistic => "logistic",
        ReactionKind::PowerKpp { .. } => "power_kpp",
        ReactionKind::Ignition { .. } => "ignition",
        ReactionKind::Bistable { .. } => "bistable",
        ReactionKind::Tristable { .. } => "tristable",
        ReactionKind::Tabulated { .. } => "tabulated",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_e3() -> ScenarioConfig {
        let mut c = preset_plan("E3").unwrap().configs.remove(0);
        c.solver.max_time = 60.0;
        c.observables.checks = vec![Check::Speed {
            lambda: 0.5,
            x0: 0.0,
            window: (10.0, 60.0),
            expected: SpeedRef::Value(0.3536),
            tolerance: 0.01,
            relation: Relation::Within,
        }];
        c
    }

    #[test]
    fn config_round_trips_and_digest_is_stable() {
        let c = small_e3();
        let text = serde_json::to_string_pretty(&c).unwrap();
        let back = ScenarioConfig::from_json(&text).unwrap();
        assert_eq!(back.digest(), c.digest());
        let mut moved = c.clone();
        moved.output = Some("/tmp/elsewhere".into());
        assert_eq!(moved.digest(), c.digest());
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let mut c = small_e3();
        c.solver.dt = TimeStep::Fixed(0.5);
        let err = c.validate().unwrap_err().to_string();
        assert!(err.starts_with("config rejected: stability"), "{err}");
    }

    #[test]
    fn bad_windows_are_rejected() {
        let mut c = small_e3();
        c.observables.checks = vec![Check::Speed {
            lambda: 0.5,
            x0: 0.0,
            window: (20.0, 60.0),
            expected: SpeedRef::Theoretical,
            tolerance: 0.1,
            relation: Relation::Within,
        }];
        assert!(c.validate().is_err());
    }

    #[test]
    fn presets_cover_e1_to_e10_with_one_tag_each() {
        let ids = preset_ids();
        for k in 1..=10 {
            assert!(ids.contains(&format!("E{k}").as_str()));
        }
        let list = list_presets(None);
        assert!(list.iter().all(|p| p.runtime == "unknown" && !p.theorem.is_empty()));
        for id in ids {
            let plan = preset_plan(id).unwrap();
            assert!(plan.configs.iter().all(|c| c.theorem == plan.theorem));
            for c in &plan.configs {
                c.validate().unwrap_or_else(|e| panic!("{id}: {e}"));
            }
        }
        assert!(matches!(preset_plan("E11"), Err(ScenarioError::UnknownPreset(_))));
    }

    #[test]
    fn small_run_is_deterministic_and_verifiable() {
        let tmp = tempfile::tempdir().unwrap();
        let c = small_e3();
        let a = run_scenario(&c, &tmp.path().join("a")).unwrap();
        let b = run_scenario(&c, &tmp.path().join("b")).unwrap();
        assert!(a.passed(), "{:?}", a.verdicts);
        let mut names: Vec<_> = fs::read_dir(&a.dir).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for n in names {
            if n == "timings.json" {
                continue;
            }
            assert_eq!(fs::read(a.dir.join(&n)).unwrap(), fs::read(b.dir.join(&n)).unwrap(), "{n:?}");
        }
        let v = verify(&a.dir).unwrap();
        assert!(v.ok(), "{:?}", v.issues);
        assert!(emit_plot_data(&a.dir, "profile").unwrap().exists());
        assert!(matches!(emit_plot_data(&a.dir, "lag"), Err(ScenarioError::Missing(_))));
        assert!(matches!(emit_plot_data(&a.dir, "bogus"), Err(ScenarioError::UnknownKind(_))));
    }

    #[test]
    fn foreign_directories_are_not_overwritten() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(tmp.path().join("notes.txt"), "keep").unwrap();
        assert!(run_scenario(&small_e3(), tmp.path()).is_err());
        assert!(tmp.path().join("notes.txt").exists());
    }
}
