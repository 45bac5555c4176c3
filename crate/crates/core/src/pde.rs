//! Finite differences for `∂t u = Δu + f(u)` on truncated domains, with a
//! co-moving frame along the propagation axis.
//!
//! Storage is column-major along the propagation axis (`x`, `r` or `x_N`):
//! node `(i, j)` lives at `i * n_prop + j`, where `i` indexes the transverse
//! axis (`x'` or the cylinder radius) and `j` the propagation axis.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::levelset::{self, LevelSetSeries};
use crate::numerics::solve_tridiagonal;
use crate::reaction::{ReactionKind, ReactionSpec};
use crate::support::{SupportError, SupportSpec};

/// Bands next to Dirichlet faces that must already hold the boundary value at `t = 0`.
pub const INIT_MARGIN_CELLS: usize = 10;
/// Tolerance of the shift preconditions.
pub const SHIFT_TOL: f64 = 1e-8;
/// Grids with fewer nodes are stepped on the calling thread.
const PAR_THRESHOLD: usize = 1 << 15;

#[derive(Debug, Error)]
pub enum PdeError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("config rejected: stability (dt = {dt} exceeds {limit})")]
    Stability { dt: f64, limit: f64 },
    #[error("config rejected: {0}")]
    Config(String),
    #[error("non-finite value at t = {time} (node {node})")]
    NonFinite { time: f64, node: usize },
    #[error("window too small at t = {time}: {detail}")]
    WindowTooSmall { time: f64, detail: String },
    #[error(transparent)]
    Support(#[from] SupportError),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for PdeError {
    fn from(e: std::io::Error) -> Self {
        PdeError::Io(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    Line,
    /// Radially symmetric solutions in `R^dim`; one axis `r ≥ 0`.
    Radial { dim: u32 },
    /// `(x₁, x₂)` with `x₂ = x_N`.
    Plane,
    /// Solutions symmetric in `x' ∈ R^{dim−1}`: axes `(r = |x'|, x_N)`.
    Cylinder { dim: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Boundary {
    Dirichlet { value: f64 },
    NeumannZero,
}

impl Boundary {
    pub const ZERO: Boundary = Boundary::Dirichlet { value: 0.0 };
    pub const ONE: Boundary = Boundary::Dirichlet { value: 1.0 };
}

/// Uniform nodes `lo + i·h`, `i < n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub h: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, h: f64) -> Result<Self, PdeError> {
        if !(h > 0.0) || !(hi > lo) {
            return Err(PdeError::InvalidDomain(format!("axis [{lo}, {hi}] with h = {h}")));
        }
        let n = ((hi - lo) / h + 1e-9).floor() as usize + 1;
        if n < 3 {
            return Err(PdeError::InvalidDomain("an axis needs at least 3 nodes".into()));
        }
        Ok(Axis { lo, h, n })
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.h
    }

    pub fn hi(&self) -> f64 {
        self.coord(self.n - 1)
    }
}

/// Truncated computational domain. `axes` is `[prop]` or `[perp, prop]`; `bc[a] = [low face, high face]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub geometry: Geometry,
    pub axes: Vec<Axis>,
    pub bc: Vec<[Boundary; 2]>,
}

impl Domain {
    pub fn line(lo: f64, hi: f64, h: f64, bc: [Boundary; 2]) -> Result<Self, PdeError> {
        Self::build(Geometry::Line, vec![Axis::new(lo, hi, h)?], vec![bc])
    }

    /// `r ∈ [0, r_max]` with the symmetry condition at `r = 0`.
    pub fn radial(dim: u32, r_max: f64, h: f64, outer: Boundary) -> Result<Self, PdeError> {
        Self::build(
            Geometry::Radial { dim },
            vec![Axis::new(0.0, r_max, h)?],
            vec![[Boundary::NeumannZero, outer]],
        )
    }

    pub fn plane(x1: (f64, f64), x2: (f64, f64), h: f64, bc1: [Boundary; 2], bc2: [Boundary; 2]) -> Result<Self, PdeError> {
        Self::build(
            Geometry::Plane,
            vec![Axis::new(x1.0, x1.1, h)?, Axis::new(x2.0, x2.1, h)?],
            vec![bc1, bc2],
        )
    }

    pub fn cylinder(dim: u32, r_max: f64, xn: (f64, f64), h: f64, outer: Boundary, bc_n: [Boundary; 2]) -> Result<Self, PdeError> {
        Self::build(
            Geometry::Cylinder { dim },
            vec![Axis::new(0.0, r_max, h)?, Axis::new(xn.0, xn.1, h)?],
            vec![[Boundary::NeumannZero, outer], bc_n],
        )
    }

    fn build(geometry: Geometry, axes: Vec<Axis>, bc: Vec<[Boundary; 2]>) -> Result<Self, PdeError> {
        let d = Domain { geometry, axes, bc };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), PdeError> {
        let want = match self.geometry {
            Geometry::Line | Geometry::Radial { .. } => 1,
            Geometry::Plane | Geometry::Cylinder { .. } => 2,
        };
        if self.axes.len() != want || self.bc.len() != want {
            return Err(PdeError::InvalidDomain(format!("{:?} needs {want} axes", self.geometry)));
        }
        for a in &self.axes {
            if !(a.h > 0.0) || a.n < 3 {
                return Err(PdeError::InvalidDomain("bad axis".into()));
            }
        }
        match self.geometry {
            Geometry::Radial { dim } if !(1..=3).contains(&dim) => {
                Err(PdeError::InvalidDomain("radial solver supports 1 <= N <= 3".into()))
            }
            Geometry::Cylinder { dim } if !(2..=4).contains(&dim) => {
                Err(PdeError::InvalidDomain("cylindrical solver supports 2 <= N <= 4".into()))
            }
            Geometry::Radial { .. } | Geometry::Cylinder { .. } => {
                let a = &self.axes[0];
                if a.lo != 0.0 || self.bc[0][0] != Boundary::NeumannZero {
                    Err(PdeError::InvalidDomain("the r-axis starts at 0 with a symmetry condition".into()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn prop_axis(&self) -> &Axis {
        self.axes.last().unwrap()
    }

    pub fn perp_axis(&self) -> Option<&Axis> {
        if self.axes.len() == 2 {
            Some(&self.axes[0])
        } else {
            None
        }
    }

    pub fn n_prop(&self) -> usize {
        self.prop_axis().n
    }

    pub fn n_perp(&self) -> usize {
        self.perp_axis().map_or(1, |a| a.n)
    }

    pub fn len(&self) -> usize {
        self.n_prop() * self.n_perp()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Transverse coordinate of column `i` (`0` in one-axis geometries).
    pub fn perp_coord(&self, i: usize) -> f64 {
        self.perp_axis().map_or(0.0, |a| a.coord(i))
    }

    /// Metric weight `m` in `∂²_s + (m/s)∂_s` for axis `a`.
    fn metric(&self, a: usize) -> f64 {
        let last = self.axes.len() - 1;
        match self.geometry {
            Geometry::Radial { dim } if a == last => dim as f64 - 1.0,
            Geometry::Cylinder { dim } if a == 0 => dim as f64 - 2.0,
            _ => 0.0,
        }
    }
}

/// Neighbour weights of the discrete Laplacian along one axis.
#[derive(Clone, Debug, PartialEq)]
struct AxisStencil {
    wl: Vec<f64>,
    wr: Vec<f64>,
    bc: [Boundary; 2],
}

fn axis_stencil(domain: &Domain, a: usize, offset: usize) -> AxisStencil {
    let ax = domain.axes[a];
    let m = domain.metric(a);
    let shift = if a == domain.axes.len() - 1 { offset } else { 0 };
    let inv = 1.0 / (ax.h * ax.h);
    let mut wl = vec![inv; ax.n];
    let mut wr = vec![inv; ax.n];
    if m != 0.0 {
        for i in 0..ax.n {
            let r = ax.lo + (i + shift) as f64 * ax.h;
            if r == 0.0 {
                // u'' + (m/r)u' → (1 + m)u'' at the axis, mirrored neighbour
                wl[i] = (1.0 + m) * inv;
                wr[i] = (1.0 + m) * inv;
            } else {
                let c = m / (2.0 * r * ax.h);
                wl[i] = inv - c;
                wr[i] = inv + c;
            }
        }
    }
    AxisStencil {
        wl,
        wr,
        bc: domain.bc[a],
    }
}

/// Discretized `u(t, ·)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub domain: Domain,
    pub values: Vec<f64>,
    pub time: f64,
    /// Cells by which the propagation axis has been shifted so far.
    pub frame_offset: usize,
    pub steps: u64,
}

impl Field {
    pub fn zeros(domain: Domain) -> Self {
        let n = domain.len();
        Field {
            domain,
            values: vec![0.0; n],
            time: 0.0,
            frame_offset: 0,
            steps: 0,
        }
    }

    /// Samples `g(x_perp, x_prop)` at the nodes.
    pub fn from_fn<F: Fn(f64, f64) -> f64>(domain: Domain, g: F) -> Self {
        let mut f = Field::zeros(domain);
        let np = f.domain.n_prop();
        for i in 0..f.domain.n_perp() {
            let xp = f.domain.perp_coord(i);
            for j in 0..np {
                f.values[i * np + j] = g(xp, f.domain.prop_axis().coord(j));
            }
        }
        f
    }

    pub fn n_prop(&self) -> usize {
        self.domain.n_prop()
    }

    pub fn n_perp(&self) -> usize {
        self.domain.n_perp()
    }

    pub fn column(&self, i: usize) -> &[f64] {
        let np = self.n_prop();
        &self.values[i * np..(i + 1) * np]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_prop() + j]
    }

    /// Absolute coordinate of row `j` along the propagation axis.
    pub fn prop_coord(&self, j: usize) -> f64 {
        let a = self.domain.prop_axis();
        a.lo + (j + self.frame_offset) as f64 * a.h
    }

    /// Column closest to the transverse coordinate `x`.
    pub fn column_near(&self, x: f64) -> usize {
        match self.domain.perp_axis() {
            None => 0,
            Some(a) => (((x - a.lo) / a.h).round().max(0.0) as usize).min(a.n - 1),
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Binary dump (little-endian `f64`, storage order) plus its JSON header.
    pub fn to_binary(&self) -> (Vec<u8>, serde_json::Value) {
        let mut bytes = Vec::with_capacity(8 * self.values.len());
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let header = serde_json::json!({
            "geometry": self.domain.geometry,
            "dims": [self.n_perp(), self.n_prop()],
            "layout": "perp_major",
            "h": self.domain.axes.iter().map(|a| a.h).collect::<Vec<_>>(),
            "lo": self.domain.axes.iter().map(|a| a.lo).collect::<Vec<_>>(),
            "frame_offset": self.frame_offset,
            "time": self.time,
            "dtype": "f64le",
        });
        (bytes, header)
    }
}

/// Initial datum `𝟙_U` on the nodes. Subgraph supports use fractional boundary
/// cells: `u = clamp((γ(x') − (x_N − h/2))/h, 0, 1)`.
pub fn init_from_support(support: &SupportSpec, domain: &Domain) -> Result<Field, PdeError> {
    support.validate()?;
    domain.validate()?;
    let mut field = Field::zeros(domain.clone());
    let np = domain.n_prop();
    let hp = domain.prop_axis().h;
    let gamma = match domain.geometry {
        Geometry::Radial { .. } => None,
        _ => support.as_subgraph(),
    };
    for i in 0..domain.n_perp() {
        let xp = domain.perp_coord(i);
        let g = gamma.as_ref().map(|g| g.eval(xp));
        if let Some(g) = g {
            if !g.is_finite() {
                return Err(PdeError::InvalidDomain(format!("γ({xp}) is not finite")));
            }
        }
        for j in 0..np {
            let xn = domain.prop_axis().coord(j);
            field.values[i * np + j] = match g {
                Some(g) => ((g - (xn - 0.5 * hp)) / hp).clamp(0.0, 1.0),
                None => {
                    let x = match domain.geometry {
                        Geometry::Radial { .. } => [0.0, xn],
                        _ => [xp, xn],
                    };
                    if support.indicator(x) {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
        }
    }
    check_margins(&field)?;
    Ok(field)
}

/// Every Dirichlet face must be surrounded by a band already at its boundary value.
fn check_margins(field: &Field) -> Result<(), PdeError> {
    let d = &field.domain;
    let np = d.n_prop();
    let nq = d.n_perp();
    let last = d.axes.len() - 1;
    for (a, faces) in d.bc.iter().enumerate() {
        for (side, b) in faces.iter().enumerate() {
            let Boundary::Dirichlet { value } = *b else { continue };
            let n_axis = d.axes[a].n;
            let band = INIT_MARGIN_CELLS.min(n_axis);
            let range: Vec<usize> = if side == 0 { (0..band).collect() } else { (n_axis - band..n_axis).collect() };
            for &k in &range {
                let ok = if a == last {
                    (0..nq).all(|i| field.values[i * np + k] == value)
                } else {
                    field.values[k * np..(k + 1) * np].iter().all(|&v| v == value)
                };
                if !ok {
                    return Err(PdeError::InvalidDomain(format!(
                        "support reaches within {INIT_MARGIN_CELLS} cells of a Dirichlet({value}) face on axis {a}"
                    )));
                }
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ExplicitEuler,
    StrangSplit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeStep {
    Fixed(f64),
    Auto(AutoTag),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum FramePolicy {
    Off,
    /// Shift by `⌈n/4⌉` cells once `X_λ` at the reference column passes `trigger·height`.
    TrackLevel { lambda: f64, trigger: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub scheme: Scheme,
    pub dt: TimeStep,
    pub frame: FramePolicy,
    pub max_time: f64,
    /// Observation interval.
    pub cadence: f64,
    /// Levels extracted at every observation.
    #[serde(default)]
    pub lambdas: Vec<f64>,
    /// Times at which full fields are kept.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    /// Transverse coordinate of the column that drives the frame.
    #[serde(default)]
    pub reference_x: f64,
}

impl SolverConfig {
    pub fn explicit(max_time: f64, cadence: f64) -> Self {
        SolverConfig {
            scheme: Scheme::ExplicitEuler,
            dt: TimeStep::Auto(AutoTag::Auto),
            frame: FramePolicy::Off,
            max_time,
            cadence,
            lambdas: vec![],
            snapshot_times: vec![],
            reference_x: 0.0,
        }
    }
}

/// Largest diagonal weight of the discrete Laplacian (`2·dim_factor/h²`).
fn max_diagonal(domain: &Domain, offset: usize) -> f64 {
    let mut worst = 0.0f64;
    // the r = 0 node dominates radial geometries; evaluate node by node
    let stencils: Vec<AxisStencil> = (0..domain.axes.len()).map(|a| axis_stencil(domain, a, offset)).collect();
    let sum_axis = |s: &AxisStencil| s.wl.iter().zip(&s.wr).map(|(l, r)| l + r).fold(0.0, f64::max);
    for s in &stencils {
        worst += sum_axis(s);
    }
    worst
}

/// Time step for `config`, validated against the stability rule of its scheme.
pub fn resolve_dt(config: &SolverConfig, domain: &Domain, spec: &ReactionSpec) -> Result<f64, PdeError> {
    if !(config.max_time >= 0.0) || !(config.cadence > 0.0) {
        return Err(PdeError::Config("max_time must be >= 0 and cadence > 0".into()));
    }
    let lip = spec.lipschitz();
    let h = domain.axes.iter().map(|a| a.h).fold(f64::INFINITY, f64::min);
    let diag = max_diagonal(domain, 0);
    let dim_factor = 0.5 * diag * h * h;
    let react_cap = if lip > 0.0 { 0.5 / lip } else { f64::INFINITY };
    match config.scheme {
        Scheme::ExplicitEuler => {
            // monotone (order-preserving) update: dt·(max diagonal + Lip) ≤ 1
            let limit = 1.0 / (diag + lip);
            let dt = match config.dt {
                TimeStep::Auto(_) => (0.2f64.min(0.4 / dim_factor) * h * h).min(react_cap).min(limit),
                TimeStep::Fixed(dt) => dt,
            };
            if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
                return Err(PdeError::Stability { dt, limit });
            }
            Ok(dt)
        }
        Scheme::StrangSplit => {
            let dt = match config.dt {
                TimeStep::Auto(_) => (0.5 * h).min(react_cap),
                TimeStep::Fixed(dt) => dt,
            };
            let limit = if lip > 0.0 { 1.0 / lip } else { f64::INFINITY };
            if !(dt > 0.0) || dt > limit {
                return Err(PdeError::Stability { dt, limit });
            }
            Ok(dt)
        }
    }
}

/// Neighbour source for a column: another column or a constant ghost value.
#[derive(Clone, Copy)]
enum Ghost {
    Column(usize),
    Value(f64),
}

fn ghost_low(bc: Boundary) -> Ghost {
    match bc {
        Boundary::Dirichlet { value } => Ghost::Value(value),
        Boundary::NeumannZero => Ghost::Column(1),
    }
}

/// Stepper holding the stencils for the current frame offset.
pub struct Stepper {
    spec: ReactionSpec,
    scheme: Scheme,
    dt: f64,
    stencils: Vec<AxisStencil>,
    offset: usize,
    scratch: Vec<f64>,
    step_index: u64,
}

impl Stepper {
    pub fn new(field: &Field, spec: &ReactionSpec, config: &SolverConfig) -> Result<Self, PdeError> {
        let dt = resolve_dt(config, &field.domain, spec)?;
        Ok(Self::with_dt(field, spec, config.scheme, dt))
    }

    fn with_dt(field: &Field, spec: &ReactionSpec, scheme: Scheme, dt: f64) -> Self {
        let stencils = (0..field.domain.axes.len())
            .map(|a| axis_stencil(&field.domain, a, field.frame_offset))
            .collect();
        Stepper {
            spec: spec.clone(),
            scheme,
            dt,
            stencils,
            offset: field.frame_offset,
            scratch: vec![0.0; field.values.len()],
            step_index: field.steps,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn refresh(&mut self, field: &Field) {
        if self.offset != field.frame_offset || self.stencils.iter().zip(&field.domain.bc).any(|(s, b)| s.bc != *b) {
            self.stencils = (0..field.domain.axes.len())
                .map(|a| axis_stencil(&field.domain, a, field.frame_offset))
                .collect();
            self.offset = field.frame_offset;
        }
    }

    /// One time step in place.
    pub fn step(&mut self, field: &mut Field) {
        self.refresh(field);
        match self.scheme {
            Scheme::ExplicitEuler => self.explicit(field),
            Scheme::StrangSplit => self.strang(field),
        }
        self.step_index += 1;
        field.steps += 1;
        field.time = field.steps as f64 * self.dt;
    }

    fn explicit(&mut self, field: &mut Field) {
        let np = field.n_prop();
        let nq = field.n_perp();
        let dt = self.dt;
        let spec = &self.spec;
        let prop = &self.stencils[self.stencils.len() - 1];
        let perp = if self.stencils.len() == 2 { Some(&self.stencils[0]) } else { None };
        let src = &field.values;
        let kernel = |i: usize, out: &mut [f64]| {
            let col = &src[i * np..(i + 1) * np];
            let lo_ghost = match prop.bc[0] {
                Boundary::Dirichlet { value } => value,
                Boundary::NeumannZero => col[1],
            };
            let hi_ghost = match prop.bc[1] {
                Boundary::Dirichlet { value } => value,
                Boundary::NeumannZero => col[np - 2],
            };
            // out holds the Laplacian first, then the updated values
            out[0] = prop.wl[0] * (lo_ghost - col[0]) + prop.wr[0] * (col[1.min(np - 1)] - col[0]);
            for j in 1..np - 1 {
                out[j] = prop.wl[j] * (col[j - 1] - col[j]) + prop.wr[j] * (col[j + 1] - col[j]);
            }
            if np > 1 {
                out[np - 1] = prop.wl[np - 1] * (col[np - 2] - col[np - 1]) + prop.wr[np - 1] * (hi_ghost - col[np - 1]);
            }
            if let Some(s) = perp {
                let l = if i == 0 { ghost_low(s.bc[0]) } else { Ghost::Column(i - 1) };
                let r = if i == nq - 1 {
                    match s.bc[1] {
                        Boundary::Dirichlet { value } => Ghost::Value(value),
                        Boundary::NeumannZero => Ghost::Column(nq - 2),
                    }
                } else {
                    Ghost::Column(i + 1)
                };
                for (g, w) in [(l, s.wl[i]), (r, s.wr[i])] {
                    match g {
                        Ghost::Column(c) => {
                            let nb = &src[c * np..(c + 1) * np];
                            for ((o, &v), &u) in out.iter_mut().zip(nb).zip(col) {
                                *o += w * (v - u);
                            }
                        }
                        Ghost::Value(v) => {
                            for (o, &u) in out.iter_mut().zip(col) {
                                *o += w * (v - u);
                            }
                        }
                    }
                }
            }
            spec.accumulate(col, out, 1.0);
            for (o, &u) in out.iter_mut().zip(col) {
                *o = u + dt * *o;
            }
        };
        let out = &mut self.scratch;
        if nq > 1 && np * nq >= PAR_THRESHOLD {
            out.par_chunks_mut(np).enumerate().for_each(|(i, o)| kernel(i, o));
        } else {
            for (i, o) in out.chunks_mut(np).enumerate() {
                kernel(i, o);
            }
        }
        std::mem::swap(&mut field.values, &mut self.scratch);
    }

    fn strang(&mut self, field: &mut Field) {
        let half = 0.5 * self.dt;
        self.react(field, half);
        let axes: Vec<usize> = if self.stencils.len() == 1 {
            vec![0]
        } else if self.step_index % 2 == 0 {
            vec![1, 0]
        } else {
            vec![0, 1]
        };
        for a in axes {
            self.implicit_diffusion(field, a);
        }
        self.react(field, half);
    }

    fn react(&self, field: &mut Field, tau: f64) {
        let spec = &self.spec;
        let flow = |u: f64| reaction_flow(spec, u, tau);
        if field.values.len() >= PAR_THRESHOLD {
            field.values.par_iter_mut().for_each(|u| *u = flow(*u));
        } else {
            field.values.iter_mut().for_each(|u| *u = flow(*u));
        }
    }

    /// Backward Euler along axis `a` for a full step.
    fn implicit_diffusion(&mut self, field: &mut Field, a: usize) {
        let np = field.n_prop();
        let nq = field.n_perp();
        let dt = self.dt;
        let s = &self.stencils[a];
        let last = self.stencils.len() - 1;
        let solve_line = |line: &mut [f64], scratch: &mut Vec<f64>| {
            let n = line.len();
            let mut lower = vec![0.0; n];
            let mut diag = vec![0.0; n];
            let mut upper = vec![0.0; n];
            for k in 0..n {
                lower[k] = -dt * s.wl[k];
                upper[k] = -dt * s.wr[k];
                diag[k] = 1.0 + dt * (s.wl[k] + s.wr[k]);
            }
            match s.bc[0] {
                Boundary::Dirichlet { value } => line[0] += dt * s.wl[0] * value,
                Boundary::NeumannZero => upper[0] += lower[0],
            }
            lower[0] = 0.0;
            match s.bc[1] {
                Boundary::Dirichlet { value } => line[n - 1] += dt * s.wr[n - 1] * value,
                Boundary::NeumannZero => lower[n - 1] += upper[n - 1],
            }
            upper[n - 1] = 0.0;
            solve_tridiagonal(&lower, &diag, &upper, line, scratch);
        };
        if a == last {
            field
                .values
                .par_chunks_mut(np)
                .for_each_init(Vec::new, |scratch, col| solve_line(col, scratch));
        } else {
            // gather rows, solve, scatter back
            let t = &mut self.scratch;
            t.par_chunks_mut(nq).enumerate().for_each(|(j, row)| {
                for (i, r) in row.iter_mut().enumerate() {
                    *r = field.values[i * np + j];
                }
            });
            t.par_chunks_mut(nq).for_each_init(Vec::new, |scratch, row| solve_line(row, scratch));
            let t = &self.scratch;
            field.values.par_chunks_mut(np).enumerate().for_each(|(i, col)| {
                for (j, c) in col.iter_mut().enumerate() {
                    *c = t[j * nq + i];
                }
            });
        }
    }
}

/// Exact (logistic) or RK4-substepped flow of `u' = f(u)` over `tau`.
pub fn reaction_flow(spec: &ReactionSpec, u: f64, tau: f64) -> f64 {
    if !(u > 0.0 && u < 1.0) {
        return u;
    }
    if let ReactionKind::Logistic = spec.kind() {
        let e = (spec.scale() * tau).exp();
        return u * e / (1.0 + u * (e - 1.0));
    }
    let lip = spec.lipschitz();
    let n = ((tau * lip / 0.05).ceil() as usize).max(1);
    let h = tau / n as f64;
    let mut v = u;
    for _ in 0..n {
        let k1 = spec.eval(v);
        let k2 = spec.eval(v + 0.5 * h * k1);
        let k3 = spec.eval(v + 0.5 * h * k2);
        let k4 = spec.eval(v + h * k3);
        v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    v
}

/// Translates the field down by `cells` rows along the propagation axis.
///
/// Requires the discarded rows to be within [`SHIFT_TOL`] of 1 and the current
/// top row within [`SHIFT_TOL`] of 0; the low face becomes Dirichlet(1).
pub fn shift_frame(field: &mut Field, cells: usize) -> Result<(), PdeError> {
    if cells == 0 {
        return Ok(());
    }
    let np = field.n_prop();
    let nq = field.n_perp();
    if cells >= np {
        return Err(PdeError::WindowTooSmall {
            time: field.time,
            detail: format!("shift of {cells} cells on {np} rows"),
        });
    }
    for i in 0..nq {
        let col = field.column(i);
        if let Some(j) = col[..cells].iter().position(|&v| (v - 1.0).abs() > SHIFT_TOL) {
            return Err(PdeError::WindowTooSmall {
                time: field.time,
                detail: format!("discarded band not saturated (column {i}, row {j}, u = {})", col[j]),
            });
        }
        if col[np - 1] > SHIFT_TOL {
            return Err(PdeError::WindowTooSmall {
                time: field.time,
                detail: format!("front touches the downstream face (column {i}, u = {})", col[np - 1]),
            });
        }
    }
    let fill = match field.domain.bc.last().unwrap()[1] {
        Boundary::Dirichlet { value } => value,
        Boundary::NeumannZero => 0.0,
    };
    for col in field.values.chunks_mut(np) {
        col.copy_within(cells.., 0);
        col[np - cells..].fill(fill);
    }
    field.frame_offset += cells;
    let last = field.domain.bc.len() - 1;
    field.domain.bc[last][0] = Boundary::ONE;
    Ok(())
}

/// Called with the field at every observation.
pub trait Observer {
    fn observe(&mut self, field: &Field) -> Result<(), PdeError>;
}

impl<F: FnMut(&Field) -> Result<(), PdeError>> Observer for F {
    fn observe(&mut self, field: &Field) -> Result<(), PdeError> {
        self(field)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftEvent {
    pub time: f64,
    pub cells: usize,
    pub frame_offset: usize,
    /// Change of the absolute reference `X_λ` across the shift.
    pub jump: f64,
}

/// Everything recorded by [`advance`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dt: f64,
    pub steps: u64,
    pub series: Vec<LevelSetSeries>,
    pub snapshots: Vec<Field>,
    pub shifts: Vec<ShiftEvent>,
    /// Extreme values over all observations.
    pub value_range: (f64, f64),
    /// Largest jump of the absolute tracked level across a shift.
    pub max_shift_jump: f64,
    pub final_field: Field,
    /// Wall-clock seconds (not part of the reproducible record).
    #[serde(skip)]
    pub wall_seconds: f64,
}

/// Steps `field` to `config.max_time`, observing at the configured cadence.
pub fn advance(
    mut field: Field,
    spec: &ReactionSpec,
    config: &SolverConfig,
    observers: &mut [&mut dyn Observer],
) -> Result<RunRecord, PdeError> {
    let start = Instant::now();
    let mut stepper = Stepper::new(&field, spec, config)?;
    let dt = stepper.dt();
    if let FramePolicy::TrackLevel { lambda, trigger } = config.frame {
        if !(lambda > 0.0 && lambda < 1.0 && trigger > 0.0 && trigger < 1.0) {
            return Err(PdeError::Config("track_level needs λ, trigger in (0, 1)".into()));
        }
    }
    let total = (config.max_time / dt - 1e-9).ceil().max(0.0) as u64;
    let obs_every = ((config.cadence / dt).round() as u64).max(1);
    let h_prop = field.domain.prop_axis().h;
    let check_every = ((0.25 * h_prop / (4.0 * dt)).floor() as u64).max(1);
    let ref_col = field.column_near(config.reference_x);
    let x_perp: Vec<f64> = (0..field.n_perp()).map(|i| field.domain.perp_coord(i)).collect();
    let mut series: Vec<LevelSetSeries> = config.lambdas.iter().map(|&l| LevelSetSeries::new(l, x_perp.clone())).collect();
    let mut snapshots = vec![];
    let mut pending_snaps: Vec<f64> = config.snapshot_times.clone();
    pending_snaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pending_snaps.reverse();
    let mut shifts = vec![];
    let mut range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut max_jump = 0.0f64;

    let base = field.steps;
    let observe = |field: &Field,
                       series: &mut Vec<LevelSetSeries>,
                       snapshots: &mut Vec<Field>,
                       pending: &mut Vec<f64>,
                       range: &mut (f64, f64),
                       observers: &mut [&mut dyn Observer]|
     -> Result<(), PdeError> {
        let (lo, hi) = field.min_max();
        if !(lo.is_finite() && hi.is_finite()) {
            let node = field.values.iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(PdeError::NonFinite { time: field.time, node });
        }
        range.0 = range.0.min(lo);
        range.1 = range.1.max(hi);
        for s in series.iter_mut() {
            // an observation where the level is absent is recorded as all-invalid
            let slice = levelset::extract_x_lenient(field, s.lambda);
            s.push(slice);
        }
        while let Some(&t) = pending.last() {
            if field.time >= t - 0.5 * dt {
                snapshots.push(field.clone());
                pending.pop();
            } else {
                break;
            }
        }
        for o in observers.iter_mut() {
            o.observe(field)?;
        }
        Ok(())
    };

    observe(&field, &mut series, &mut snapshots, &mut pending_snaps, &mut range, observers)?;
    for k in 1..=total {
        stepper.step(&mut field);
        if let FramePolicy::TrackLevel { lambda, trigger } = config.frame {
            if k % check_every == 0 || k == total {
                let np = field.n_prop();
                if let Some((pos, _)) = levelset::column_crossing(field.column(ref_col), lambda) {
                    if pos > trigger * (np - 1) as f64 {
                        let before = field.prop_coord(0) + pos * h_prop;
                        let cells = np.div_ceil(4);
                        shift_frame(&mut field, cells)?;
                        let after = levelset::column_crossing(field.column(ref_col), lambda)
                            .map(|(p, _)| field.prop_coord(0) + p * h_prop)
                            .unwrap_or(f64::NAN);
                        let jump = (after - before).abs();
                        max_jump = max_jump.max(if jump.is_nan() { f64::INFINITY } else { jump });
                        shifts.push(ShiftEvent {
                            time: field.time,
                            cells,
                            frame_offset: field.frame_offset,
                            jump,
                        });
                    }
                }
            }
        }
        if (field.steps - base) % obs_every == 0 || k == total {
            observe(&field, &mut series, &mut snapshots, &mut pending_snaps, &mut range, observers)?;
        }
    }
    Ok(RunRecord {
        dt,
        steps: field.steps,
        series,
        snapshots,
        shifts,
        value_range: range,
        max_shift_jump: max_jump,
        final_field: field,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

impl RunRecord {
    /// Writes `metadata.json`, level-set CSVs, snapshot fields (if `fields`) and `timings.json` into `dir`.
    pub fn write_dir(&self, dir: &Path, config_echo: &serde_json::Value, fields: bool) -> Result<(), PdeError> {
        fs::create_dir_all(dir)?;
        let meta = serde_json::json!({
            "config": config_echo,
            "dt": self.dt,
            "steps": self.steps,
            "frame_offset": self.final_field.frame_offset,
            "final_time": self.final_field.time,
            "shifts": self.shifts,
            "value_range": [self.value_range.0, self.value_range.1],
            "max_shift_jump": self.max_shift_jump,
            "lambdas": self.series.iter().map(|s| s.lambda).collect::<Vec<_>>(),
            "snapshots": self.snapshots.iter().map(|f| f.time).collect::<Vec<_>>(),
        });
        write_json(&dir.join("metadata.json"), &meta)?;
        for s in &self.series {
            fs::write(dir.join(format!("levelset_{}.csv", s.lambda)), s.to_csv())?;
        }
        let mut stored = self.snapshots.iter().collect::<Vec<_>>();
        stored.push(&self.final_field);
        if !fields {
            stored.clear();
        }
        for (k, f) in stored.iter().enumerate() {
            let name = if k + 1 == stored.len() { "field_final".to_string() } else { format!("field_{k}") };
            let (bytes, header) = f.to_binary();
            fs::write(dir.join(format!("{name}.bin")), bytes)?;
            write_json(&dir.join(format!("{name}.json")), &header)?;
        }
        write_json(
            &dir.join("timings.json"),
            &serde_json::json!({ "wall_seconds": self.wall_seconds }),
        )?;
        Ok(())
    }
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), PdeError> {
    let mut f = fs::File::create(path)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| PdeError::Io(e.to_string()))?;
    f.write_all(text.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::support::GammaSpec;

    fn line(l: f64, h: f64) -> Domain {
        Domain::line(-l, l, h, [Boundary::ZERO, Boundary::ZERO]).unwrap()
    }

    #[test]
    fn equilibria_are_fixed() {
        let f = ReactionSpec::logistic();
        let cfg = SolverConfig::explicit(1.0, 1.0);
        for v in [0.0, 1.0] {
            let d = Domain::line(0.0, 10.0, 0.1, [Boundary::Dirichlet { value: v }, Boundary::Dirichlet { value: v }]).unwrap();
            let mut field = Field::from_fn(d, |_, _| v);
            let mut st = Stepper::new(&field, &f, &cfg).unwrap();
            for _ in 0..100 {
                st.step(&mut field);
            }
            assert!(field.values.iter().all(|&u| u == v));
        }
    }

    #[test]
    fn heat_kernel_oracle() {
        // f ≡ 0, Gaussian of variance s0 spreads to variance s0 + 2t
        let f = ReactionSpec::logistic().scaled(0.0).unwrap();
        let h = 0.02;
        let s0 = 0.25;
        let d = line(12.0, h);
        let g = |x: f64, s: f64| (-(x * x) / (2.0 * s)).exp() / (2.0 * std::f64::consts::PI * s).sqrt();
        let field = Field::from_fn(d, |_, x| 0.5 * g(x, s0));
        let cfg = SolverConfig::explicit(1.0, 1.0);
        let rec = advance(field, &f, &cfg, &mut []).unwrap();
        let out = &rec.final_field;
        assert!((out.time - 1.0).abs() < 1e-12);
        let err = (0..out.n_prop())
            .map(|j| (out.values[j] - 0.5 * g(out.prop_coord(j), s0 + 2.0)).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-4, "sup error {err}");
    }

    #[test]
    fn stability_guard_rejects_large_dt() {
        let f = ReactionSpec::logistic();
        let d = line(5.0, 0.1);
        let mut cfg = SolverConfig::explicit(1.0, 1.0);
        cfg.dt = TimeStep::Fixed(0.01);
        let err = Stepper::new(&Field::zeros(d), &f, &cfg).err().unwrap();
        assert!(err.to_string().starts_with("config rejected: stability"));
    }

    #[test]
    fn auto_dt_obeys_the_rule() {
        let f = ReactionSpec::logistic();
        for d in [
            line(5.0, 0.1),
            Domain::radial(2, 10.0, 0.1, Boundary::ZERO).unwrap(),
            Domain::radial(3, 10.0, 0.1, Boundary::ZERO).unwrap(),
            Domain::plane((0.0, 5.0), (0.0, 5.0), 0.25, [Boundary::NeumannZero; 2], [Boundary::ONE, Boundary::ZERO]).unwrap(),
        ] {
            let dt = resolve_dt(&SolverConfig::explicit(1.0, 1.0), &d, &f).unwrap();
            let h = d.axes[0].h;
            let dim = 0.5 * max_diagonal(&d, 0) * h * h;
            assert!(dt <= h * h / (2.0 * dim) && dt <= 0.5 / f.lipschitz(), "{d:?}");
        }
    }

    #[test]
    fn half_space_init_has_fractional_cell() {
        let d = Domain::plane((0.0, 4.0), (-5.0, 5.0), 0.5, [Boundary::NeumannZero; 2], [Boundary::ONE, Boundary::ZERO]).unwrap();
        let s = SupportSpec::subgraph(GammaSpec::Bounded { c: 0.1 }).unwrap();
        let f = init_from_support(&s, &d).unwrap();
        let col = f.column(3);
        // rows at x_N = -0.5, 0, 0.5: γ = 0.1 cuts the cell [-0.25, 0.25] at 0.7 of its height
        assert_eq!(col[9], 1.0);
        assert!((col[10] - 0.7).abs() < 1e-12);
        assert_eq!(col[11], 0.0);
    }

    #[test]
    fn init_rejects_support_near_dirichlet_face() {
        let d = Domain::plane((0.0, 4.0), (-2.0, 5.0), 0.5, [Boundary::NeumannZero; 2], [Boundary::ONE, Boundary::ZERO]).unwrap();
        let s = SupportSpec::subgraph(GammaSpec::Bounded { c: 0.0 }).unwrap();
        assert!(init_from_support(&s, &d).is_err());
    }

    #[test]
    fn ball_on_radial_domain() {
        let d = Domain::radial(2, 30.0, 0.1, Boundary::ZERO).unwrap();
        let s = SupportSpec::Ball {
            center: [0.0, 0.0],
            radius: 5.0,
        };
        let f = init_from_support(&s, &d).unwrap();
        for j in 0..f.n_prop() {
            let r = f.prop_coord(j);
            assert_eq!(f.values[j] == 1.0, r <= 5.0, "r={r}");
        }
    }

    #[test]
    fn log_subgraph_columns() {
        let d = Domain::plane((0.0, 20.0), (-30.0, 20.0), 0.25, [Boundary::NeumannZero; 2], [Boundary::ONE, Boundary::ZERO]).unwrap();
        let g = GammaSpec::LogCoercive { beta: -3.0 };
        let f = init_from_support(&SupportSpec::subgraph(g.clone()).unwrap(), &d).unwrap();
        for i in [0, 10, 40, 80] {
            let mass: f64 = f.column(i).iter().sum::<f64>() * 0.25;
            // ∫ u dx_N = γ − lo + h/2 exactly with fractional cells
            assert!((mass - (g.eval(f.domain.perp_coord(i)) + 30.0 + 0.125)).abs() < 1e-9);
        }
    }

    #[test]
    fn shift_frame_guards_and_translates() {
        let d = Domain::line(0.0, 40.0, 0.5, [Boundary::ONE, Boundary::ZERO]).unwrap();
        let mut f = Field::from_fn(d, |_, x| if x < 25.0 { 1.0 } else { 0.0 });
        let before = f.clone();
        shift_frame(&mut f, 0).unwrap();
        assert_eq!(f, before);
        shift_frame(&mut f, 10).unwrap();
        assert_eq!(f.frame_offset, 10);
        for j in 0..f.n_prop() {
            let x = f.prop_coord(j);
            let expected = if x < 25.0 { 1.0 } else { 0.0 };
            assert_eq!(f.values[j], expected, "x={x}");
        }
        let mut g = Field::from_fn(Domain::line(0.0, 40.0, 0.5, [Boundary::ONE, Boundary::ZERO]).unwrap(), |_, x| if x < 41.0 { 1.0 } else { 0.0 });
        let e = shift_frame(&mut g, 10).unwrap_err();
        assert!(e.to_string().contains("window too small"));
    }

    #[test]
    fn strang_matches_explicit_on_a_short_run() {
        let f = ReactionSpec::logistic();
        let d = Domain::line(0.0, 60.0, 0.1, [Boundary::ONE, Boundary::ZERO]).unwrap();
        let init = Field::from_fn(d, |_, x| 0.5 * (1.0 - (x - 20.0).tanh()));
        let mut a = SolverConfig::explicit(5.0, 5.0);
        a.lambdas = vec![0.5];
        let mut b = a.clone();
        b.scheme = Scheme::StrangSplit;
        b.dt = TimeStep::Fixed(0.005);
        let ra = advance(init.clone(), &f, &a, &mut []).unwrap();
        let rb = advance(init, &f, &b, &mut []).unwrap();
        let xa = ra.series[0].slices.last().unwrap().x[0];
        let xb = rb.series[0].slices.last().unwrap().x[0];
        assert!((xa - xb).abs() < 0.02, "{xa} vs {xb}");
    }
}
