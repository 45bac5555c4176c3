//! Small numerical helpers shared across modules.

/// Adaptive Simpson quadrature of `f` on `[a, b]`.
///
/// Returns the integral estimate together with an error bound accumulated
/// from the Richardson differences of the accepted panels.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    if a == b {
        return (0.0, 0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    let mut err = 0.0;
    let value = simpson_rec(f, a, b, fa, fm, fb, whole, tol, 48, &mut err);
    (value, err)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    err: &mut f64,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        *err += (delta / 15.0).abs() + f64::EPSILON * (left + right).abs();
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, err)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, err)
}

/// Linear interpolation of `ys` sampled at increasing `xs`; clamps outside the range.
pub fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let j = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[j - 1], xs[j]);
    let w = (x - x0) / (x1 - x0);
    ys[j - 1] * (1.0 - w) + ys[j] * w
}

/// Result of an ordinary least-squares solve.
#[derive(Clone, Debug)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    pub residual_rms: f64,
    /// Condition number of the normal matrix (squared design-matrix condition).
    pub normal_condition: f64,
    /// Standard errors of the coefficients from the residual variance.
    pub std_errors: Vec<f64>,
}

/// Least squares of `y` on the columns produced by `basis(x)`, solved by SVD.
pub fn least_squares<B: Fn(f64) -> Vec<f64>>(xs: &[f64], ys: &[f64], basis: B) -> LeastSquares {
    use nalgebra::{DMatrix, DVector};
    let m = xs.len();
    let p = basis(xs.first().copied().unwrap_or(1.0)).len();
    let mut a = DMatrix::<f64>::zeros(m, p);
    for (i, &x) in xs.iter().enumerate() {
        for (j, v) in basis(x).into_iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    let y = DVector::from_column_slice(ys);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { (smax / smin).powi(2) } else { f64::INFINITY };
    let coef = svd
        .solve(&y, smax * 1e-15)
        .unwrap_or_else(|_| DVector::from_element(p, f64::NAN));
    let resid = &y - &a * &coef;
    let rss = resid.norm_squared();
    let rms = (rss / m.max(1) as f64).sqrt();
    let dof = m.saturating_sub(p).max(1) as f64;
    let sigma2 = rss / dof;
    let ata = a.transpose() * &a;
    let std_errors = match ata.try_inverse() {
        Some(inv) => (0..p).map(|j| (sigma2 * inv[(j, j)]).max(0.0).sqrt()).collect(),
        None => vec![f64::NAN; p],
    };
    LeastSquares {
        coefficients: coef.iter().copied().collect(),
        residual_rms: rms,
        normal_condition: cond,
        std_errors,
    }
}

/// Solves a tridiagonal system in place (Thomas algorithm).
///
/// `lower[0]` and `upper[n-1]` are ignored. `rhs` is overwritten with the solution.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64], scratch: &mut Vec<f64>) {
    let n = diag.len();
    scratch.clear();
    scratch.resize(n, 0.0);
    if n == 0 {
        return;
    }
    let mut beta = diag[0];
    rhs[0] /= beta;
    for i in 1..n {
        scratch[i] = upper[i - 1] / beta;
        beta = diag[i] - lower[i] * scratch[i];
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i + 1] * rhs[i + 1];
    }
}
