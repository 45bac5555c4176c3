//! Level sets `X_λ(t, x')`, upper level sets `F_λ(t)` and flattening metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pde::{Boundary, Field};

/// Tolerance below which a column is still considered monotone.
pub const MONOTONE_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LevelSetError {
    #[error("level {0} is never crossed")]
    NoCrossing(f64),
    #[error("times must increase strictly ({prev} then {next})")]
    NonIncreasingTime { prev: f64, next: f64 },
    #[error("invalid columns inside the requested range: {0:?}")]
    Gap(Vec<usize>),
}

/// Crossing of `λ` in a column: fractional row index of the largest `x_N` with
/// `u ≥ λ` (linear interpolation to the next row) and a multi-crossing flag.
pub fn column_crossing(col: &[f64], lambda: f64) -> Option<(f64, bool)> {
    let n = col.len();
    let j = (0..n).rev().find(|&j| col[j] >= lambda)?;
    if j == n - 1 {
        return None;
    }
    let pos = j as f64 + (col[j] - lambda) / (col[j] - col[j + 1]);
    let multi = col[..j].iter().any(|&v| v < lambda - MONOTONE_TOL);
    Some((pos, multi))
}

/// `X_λ` on every column at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSetSlice {
    pub time: f64,
    pub lambda: f64,
    pub x_perp: Vec<f64>,
    /// Absolute heights (NaN where invalid).
    pub x: Vec<f64>,
    pub valid: Vec<bool>,
    pub multi: Vec<bool>,
    /// The low transverse face is a symmetry plane (`∂X/∂x' = 0` there).
    pub symmetric_low: bool,
}

impl LevelSetSlice {
    /// Height at the column nearest `x0`.
    pub fn at(&self, x0: f64) -> f64 {
        let k = nearest(&self.x_perp, x0);
        self.x[k]
    }
}

fn nearest(xs: &[f64], x0: f64) -> usize {
    xs.iter()
        .enumerate()
        .min_by(|a, b| (a.1 - x0).abs().partial_cmp(&(b.1 - x0).abs()).unwrap())
        .map_or(0, |(k, _)| k)
}

/// Extracts `X_λ`; an error if no column crosses `λ` (or `λ ∉ (0, 1)`).
pub fn extract_x(field: &Field, lambda: f64) -> Result<LevelSetSlice, LevelSetError> {
    let s = extract_x_lenient(field, lambda);
    if !(lambda > 0.0 && lambda < 1.0) || !s.valid.iter().any(|&v| v) {
        return Err(LevelSetError::NoCrossing(lambda));
    }
    Ok(s)
}

/// As [`extract_x`] but returns an all-invalid slice instead of failing.
pub fn extract_x_lenient(field: &Field, lambda: f64) -> LevelSetSlice {
    let nq = field.n_perp();
    let h = field.domain.prop_axis().h;
    let in_range = lambda > 0.0 && lambda < 1.0;
    let mut x = vec![f64::NAN; nq];
    let mut valid = vec![false; nq];
    let mut multi = vec![false; nq];
    for i in 0..nq {
        if !in_range {
            break;
        }
        if let Some((pos, m)) = column_crossing(field.column(i), lambda) {
            x[i] = field.prop_coord(0) + pos * h;
            valid[i] = true;
            multi[i] = m;
        }
    }
    LevelSetSlice {
        time: field.time,
        lambda,
        x_perp: (0..nq).map(|i| field.domain.perp_coord(i)).collect(),
        x,
        valid,
        multi,
        symmetric_low: field.domain.perp_axis().is_some() && field.domain.bc[0][0] == Boundary::NeumannZero,
    }
}

/// `∂X/∂x'` by central differences and its implicit-function counterpart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradX {
    pub x_perp: Vec<f64>,
    pub grad: Vec<f64>,
    /// `−∂_{x'}u / ∂_{x_N}u` at the interpolated crossing (NaN when not computed).
    pub implicit: Vec<f64>,
    pub max_discrepancy: f64,
    /// Invalid columns with valid neighbours on both sides.
    pub gaps: Vec<usize>,
}

/// Central differences of `X` in `x'`, one-sided at the ends of valid runs.
pub fn grad_x(slice: &LevelSetSlice) -> GradX {
    let n = slice.x.len();
    let mut grad = vec![f64::NAN; n];
    let mut gaps = vec![];
    if n < 2 {
        return GradX {
            x_perp: slice.x_perp.clone(),
            grad,
            implicit: vec![f64::NAN; n],
            max_discrepancy: f64::NAN,
            gaps,
        };
    }
    let dx = slice.x_perp[1] - slice.x_perp[0];
    for i in 0..n {
        if !slice.valid[i] {
            let lv = slice.valid[..i].iter().any(|&v| v);
            let rv = slice.valid[i + 1..].iter().any(|&v| v);
            if lv && rv {
                gaps.push(i);
            }
            continue;
        }
        let left = if i > 0 && slice.valid[i - 1] {
            Some(slice.x[i - 1])
        } else if i == 0 && slice.symmetric_low && n > 1 && slice.valid[1] {
            Some(slice.x[1])
        } else {
            None
        };
        let right = if i + 1 < n && slice.valid[i + 1] { Some(slice.x[i + 1]) } else { None };
        grad[i] = match (left, right) {
            (Some(l), Some(r)) => (r - l) / (2.0 * dx),
            (None, Some(r)) => (r - slice.x[i]) / dx,
            (Some(l), None) => (slice.x[i] - l) / dx,
            (None, None) => f64::NAN,
        };
    }
    GradX {
        x_perp: slice.x_perp.clone(),
        grad,
        implicit: vec![f64::NAN; n],
        max_discrepancy: f64::NAN,
        gaps,
    }
}

/// [`grad_x`] plus the cross-check `∂X/∂x' = −∂_{x'}u/∂_{x_N}u` evaluated on `field`.
pub fn grad_x_checked(slice: &LevelSetSlice, field: &Field) -> GradX {
    let mut g = grad_x(slice);
    let nq = field.n_perp();
    if nq < 3 {
        return g;
    }
    let hp = field.domain.prop_axis().h;
    let hq = field.domain.perp_axis().unwrap().h;
    let y0 = field.prop_coord(0);
    let np = field.n_prop();
    let sample = |i: usize, y: f64| {
        let s = ((y - y0) / hp).clamp(0.0, (np - 1) as f64);
        let j = (s.floor() as usize).min(np - 2);
        let w = s - j as f64;
        field.get(i, j) * (1.0 - w) + field.get(i, j + 1) * w
    };
    let mut worst = 0.0f64;
    for i in 0..nq {
        if !slice.valid[i] || !g.grad[i].is_finite() {
            continue;
        }
        let y = slice.x[i];
        let (l, r) = if i == 0 {
            if !slice.symmetric_low {
                continue;
            }
            (1, 1)
        } else if i == nq - 1 {
            continue;
        } else {
            (i - 1, i + 1)
        };
        let du_perp = if i == 0 { 0.0 } else { (sample(r, y) - sample(l, y)) / (2.0 * hq) };
        let s = (y - y0) / hp;
        let j = (s.floor() as usize).min(np - 2);
        let du_n = (field.get(i, j + 1) - field.get(i, j)) / hp;
        if du_n < 0.0 {
            let v = -du_perp / du_n;
            g.implicit[i] = v;
            worst = worst.max((v - g.grad[i]).abs());
        }
    }
    g.max_discrepancy = worst;
    g
}

/// Largest `|∂X/∂x'|` over valid columns with `|x'| ≤ r`.
pub fn max_abs_grad(g: &GradX, r: f64) -> f64 {
    g.x_perp
        .iter()
        .zip(&g.grad)
        .filter(|(x, v)| x.abs() <= r + 1e-12 && v.is_finite())
        .map(|(_, v)| v.abs())
        .fold(0.0, f64::max)
}

/// Time-ordered slices for one `λ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSetSeries {
    pub lambda: f64,
    pub x_perp: Vec<f64>,
    pub slices: Vec<LevelSetSlice>,
    #[serde(default)]
    pub scenario: String,
    #[serde(default)]
    pub digest: String,
}

impl LevelSetSeries {
    pub fn new(lambda: f64, x_perp: Vec<f64>) -> Self {
        LevelSetSeries {
            lambda,
            x_perp,
            slices: vec![],
            scenario: String::new(),
            digest: String::new(),
        }
    }

    /// Appends a slice; repeated times are ignored, decreasing ones rejected.
    pub fn try_push(&mut self, slice: LevelSetSlice) -> Result<(), LevelSetError> {
        if let Some(last) = self.slices.last() {
            if slice.time == last.time {
                return Ok(());
            }
            if slice.time < last.time {
                return Err(LevelSetError::NonIncreasingTime {
                    prev: last.time,
                    next: slice.time,
                });
            }
        }
        self.slices.push(slice);
        Ok(())
    }

    pub fn push(&mut self, slice: LevelSetSlice) {
        let _ = self.try_push(slice);
    }

    pub fn times(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.time).collect()
    }

    /// `(t, X(t, x0))` over valid observations at the column nearest `x0`.
    pub fn trace(&self, x0: f64) -> (Vec<f64>, Vec<f64>) {
        let k = nearest(&self.x_perp, x0);
        self.slices
            .iter()
            .filter(|s| s.valid[k])
            .map(|s| (s.time, s.x[k]))
            .unzip()
    }

    /// CSV: header `t,<x'_1>,...`, one row per observation (`nan` where invalid).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for x in &self.x_perp {
            out.push_str(&format!(",{x}"));
        }
        out.push('\n');
        for s in &self.slices {
            out.push_str(&format!("{}", s.time));
            for (x, v) in s.x.iter().zip(&s.valid) {
                if *v {
                    out.push_str(&format!(",{x}"));
                } else {
                    out.push_str(",nan");
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Flattening metric `m(t) = min_{|x'−x₀| ≤ R} |∂X/∂x'|` and its finite-time liminf proxy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatteningReport {
    pub times: Vec<f64>,
    pub m: Vec<f64>,
    /// `min m` over `[0.75 t, t]`.
    pub trailing_min: Vec<f64>,
    /// Same metric over balls around each listed center.
    pub centered: Vec<(f64, Vec<f64>)>,
    /// `R` exceeded the valid range at some time.
    pub truncated: bool,
}

pub fn flattening_metric(series: &LevelSetSeries, r: f64, centers: &[f64]) -> FlatteningReport {
    let mut times = vec![];
    let mut m = vec![];
    let mut centered: Vec<(f64, Vec<f64>)> = centers.iter().map(|&c| (c, vec![])).collect();
    let mut truncated = false;
    let lo = series.x_perp.first().copied().unwrap_or(0.0);
    let hi = series.x_perp.last().copied().unwrap_or(0.0);
    let sym = series.slices.first().is_some_and(|s| s.symmetric_low);
    for s in &series.slices {
        let g = grad_x(s);
        let ball_min = |c: f64, truncated: &mut bool| {
            let reach_lo = if sym { c - r < -hi } else { c - r < lo };
            if reach_lo || c + r > hi {
                *truncated = true;
            }
            g.x_perp
                .iter()
                .zip(&g.grad)
                .filter(|(x, v)| {
                    let d = if sym { (x.abs() - c.abs()).abs().min((*x - c).abs()) } else { (*x - c).abs() };
                    d <= r + 1e-12 && v.is_finite()
                })
                .map(|(_, v)| v.abs())
                .fold(f64::INFINITY, f64::min)
        };
        times.push(s.time);
        m.push(ball_min(0.0, &mut truncated));
        for (c, vals) in centered.iter_mut() {
            vals.push(ball_min(*c, &mut truncated));
        }
    }
    let trailing_min = times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            times[..=k]
                .iter()
                .zip(&m)
                .filter(|(s, _)| **s >= 0.75 * t)
                .map(|(_, v)| *v)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    FlatteningReport {
        times,
        m,
        trailing_min,
        centered,
        truncated,
    }
}

/// Nodes with `u > λ`, in absolute coordinates `(x', x_N)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpperLevelCloud {
    pub time: f64,
    pub lambda: f64,
    pub points: Vec<[f64; 2]>,
}

impl UpperLevelCloud {
    /// CSV rows `t,lambda,x1,x2`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,lambda,x1,x2\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{},{}\n", self.time, self.lambda, p[0], p[1]));
        }
        out
    }
}

pub fn upper_level_cloud(field: &Field, lambda: f64) -> UpperLevelCloud {
    upper_level_cloud_strided(field, lambda, 1)
}

/// As [`upper_level_cloud`] on every `stride`-th node in each direction.
pub fn upper_level_cloud_strided(field: &Field, lambda: f64, stride: usize) -> UpperLevelCloud {
    let stride = stride.max(1);
    let mut points = vec![];
    for i in (0..field.n_perp()).step_by(stride) {
        let xp = field.domain.perp_coord(i);
        let col = field.column(i);
        for j in (0..col.len()).step_by(stride) {
            if col[j] > lambda {
                points.push([xp, field.prop_coord(j)]);
            }
        }
    }
    UpperLevelCloud {
        time: field.time,
        lambda,
        points,
    }
}
