//! BFGS minimization with a strong-Wolfe line search.

/// Stopping rules and line-search constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    /// Converged when the max-norm of the gradient drops below this.
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Upper bound on the step length of any single line search, measured
    /// as the max-norm of the step.
    pub max_step: f64,
    /// Relative function noise level. Within it, steps satisfying the
    /// approximate Wolfe conditions are accepted, which lets the search make
    /// progress once decreases fall below floating-point resolution.
    pub f_noise: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            gradient_tolerance: 1e-6,
            max_iterations: 500,
            c1: 1e-4,
            c2: 0.9,
            max_step: 2.0,
            f_noise: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

impl BfgsResult {
    pub fn gradient_norm(&self) -> f64 {
        max_norm(&self.gradient)
    }
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f`, which returns the value and gradient at a point.
/// Non-finite values are treated as +inf and rejected by the line search.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &BfgsOptions) -> BfgsResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut evaluations = 0;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let (v, g) = f(x);
        if v.is_finite() && g.iter().all(|x| x.is_finite()) {
            (v, g)
        } else {
            (f64::INFINITY, vec![f64::NAN; x.len()])
        }
    };

    let mut x = x0.to_vec();
    let (mut fx, mut gx) = eval(&x);
    // Inverse Hessian approximation, row-major.
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    let mut first = true;
    let mut iterations = 0;
    let mut converged = max_norm(&gx) < opts.gradient_tolerance;

    while !converged && iterations < opts.max_iterations && fx.is_finite() {
        iterations += 1;
        let mut dir: Vec<f64> = (0..n)
            .map(|i| -(0..n).map(|j| h[i * n + j] * gx[j]).sum::<f64>())
            .collect();
        let mut slope = dot(&dir, &gx);
        if !(slope < 0.0) {
            // Not a descent direction; restart from steepest descent.
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] = if i == j { 1.0 } else { 0.0 };
                }
            }
            dir = gx.iter().map(|g| -g).collect();
            slope = dot(&dir, &gx);
            first = true;
        }
        let dn = max_norm(&dir);
        let alpha_max = if dn > 0.0 { opts.max_step / dn } else { 1.0 };
        let alpha0 = if first { alpha_max.min(1.0).min(1.0 / dn.max(1e-300)) } else { alpha_max.min(1.0) };

        let Some((alpha, fnew, gnew)) =
            wolfe_search(&mut eval, &x, fx, slope, &dir, alpha0, alpha_max, opts)
        else {
            if first {
                break;
            }
            // Retry once along steepest descent with a fresh Hessian.
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] = if i == j { 1.0 } else { 0.0 };
                }
            }
            first = true;
            continue;
        };
        let s: Vec<f64> = dir.iter().map(|d| alpha * d).collect();
        let y: Vec<f64> = gnew.iter().zip(&gx).map(|(a, b)| a - b).collect();
        for i in 0..n {
            x[i] += s[i];
        }
        fx = fnew;
        gx = gnew;
        converged = max_norm(&gx) < opts.gradient_tolerance;

        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if first {
                let scale = sy / dot(&y, &y);
                for i in 0..n {
                    for j in 0..n {
                        h[i * n + j] = if i == j { scale } else { 0.0 };
                    }
                }
                first = false;
            }
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum())
                .collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += -rho * (s[i] * hy[j] + hy[i] * s[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
    }

    BfgsResult {
        x,
        value: fx,
        gradient: gx,
        iterations,
        evaluations,
        converged,
    }
}

/// Strong-Wolfe line search (bracketing then zoom with safeguarded cubic
/// interpolation). Returns `None` when no acceptable step is found.
#[allow(clippy::too_many_arguments)]
fn wolfe_search<E>(
    eval: &mut E,
    x: &[f64],
    f0: f64,
    slope0: f64,
    dir: &[f64],
    alpha0: f64,
    alpha_max: f64,
    opts: &BfgsOptions,
) -> Option<(f64, f64, Vec<f64>)>
where
    E: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let point = |a: f64| -> Vec<f64> { x.iter().zip(dir).map(|(xi, di)| xi + a * di).collect() };
    let mut prev = (0.0, f0, slope0);
    let mut alpha = alpha0;
    let mut best: Option<(f64, f64, Vec<f64>)> = None;

    for i in 0..40 {
        let (fa, ga) = eval(&point(alpha));
        let slope = if fa.is_finite() { dot(&ga, dir) } else { f64::NAN };
        if fa.is_finite() && fa < f0 && best.as_ref().is_none_or(|b| fa < b.1) {
            best = Some((alpha, fa, ga.clone()));
        }
        if approx_wolfe(f0, slope0, fa, slope, opts) {
            return Some((alpha, fa, ga));
        }
        if !fa.is_finite() || fa > f0 + opts.c1 * alpha * slope0 || (i > 0 && fa >= prev.1) {
            return zoom(eval, &point, f0, slope0, dir, prev, (alpha, fa, slope), opts).or(best);
        }
        if slope.abs() <= -opts.c2 * slope0 {
            return Some((alpha, fa, ga));
        }
        if slope >= 0.0 {
            return zoom(eval, &point, f0, slope0, dir, (alpha, fa, slope), prev, opts).or(best);
        }
        if alpha >= alpha_max {
            return Some((alpha, fa, ga));
        }
        prev = (alpha, fa, slope);
        alpha = (2.0 * alpha).min(alpha_max);
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn zoom<E, P>(
    eval: &mut E,
    point: &P,
    f0: f64,
    slope0: f64,
    dir: &[f64],
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
    opts: &BfgsOptions,
) -> Option<(f64, f64, Vec<f64>)>
where
    E: FnMut(&[f64]) -> (f64, Vec<f64>),
    P: Fn(f64) -> Vec<f64>,
{
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for _ in 0..60 {
        let (a_lo, a_hi) = (lo.0, hi.0);
        if (a_hi - a_lo).abs() <= 1e-14 * a_lo.abs().max(a_hi.abs()).max(1e-300) {
            break;
        }
        let mut alpha = cubic_min(lo, hi).unwrap_or(0.5 * (a_lo + a_hi));
        let (l, u) = (a_lo.min(a_hi), a_lo.max(a_hi));
        let margin = 0.1 * (u - l);
        if !(alpha > l + margin && alpha < u - margin) {
            alpha = 0.5 * (a_lo + a_hi);
        }
        let (fa, ga) = eval(&point(alpha));
        let slope = if fa.is_finite() { dot(&ga, dir) } else { f64::NAN };
        if fa.is_finite() && fa < f0 && best.as_ref().is_none_or(|b| fa < b.1) {
            best = Some((alpha, fa, ga.clone()));
        }
        if approx_wolfe(f0, slope0, fa, slope, opts) {
            return Some((alpha, fa, ga));
        }
        if !fa.is_finite() || fa > f0 + opts.c1 * alpha * slope0 || fa >= lo.1 {
            hi = (alpha, fa, slope);
        } else {
            if slope.abs() <= -opts.c2 * slope0 {
                return Some((alpha, fa, ga));
            }
            if slope * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (alpha, fa, slope);
        }
    }
    best
}

/// Approximate Wolfe conditions: no increase beyond the noise level and a
/// slope in `[c2·φ'(0), −(1 − 2·c1')·φ'(0)]` with `c1' = 0.1`.
fn approx_wolfe(f0: f64, slope0: f64, fa: f64, slope: f64, opts: &BfgsOptions) -> bool {
    fa.is_finite()
        && fa <= f0 + opts.f_noise * f0.abs().max(1.0)
        && slope >= opts.c2 * slope0
        && slope <= -0.8 * slope0
}

/// Minimizer of the cubic interpolating values and slopes at two points.
fn cubic_min(a: (f64, f64, f64), b: (f64, f64, f64)) -> Option<f64> {
    let (x1, f1, g1) = a;
    let (x2, f2, g2) = b;
    if ![f1, f2, g1, g2].iter().all(|v| v.is_finite()) {
        return None;
    }
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let disc = d1 * d1 - g1 * g2;
    if disc < 0.0 {
        return None;
    }
    let d2 = (x2 - x1).signum() * disc.sqrt();
    let x = x2 - (x2 - x1) * (g2 + d2 - d1) / (g2 - g1 + 2.0 * d2);
    x.is_finite().then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ];
            (v, g)
        };
        let r = minimize(f, &[-1.2, 1.0], &BfgsOptions::default());
        assert!(r.converged, "{r:?}");
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quadratic_converges_quickly() {
        let f = |x: &[f64]| {
            let v = 0.5 * (x[0] * x[0] + 10.0 * x[1] * x[1] + 100.0 * x[2] * x[2]);
            (v, vec![x[0], 10.0 * x[1], 100.0 * x[2]])
        };
        let r = minimize(f, &[3.0, -2.0, 1.0], &BfgsOptions::default());
        assert!(r.converged);
        assert!(r.iterations < 40, "{}", r.iterations);
    }

    #[test]
    fn respects_iteration_cap() {
        let f = |x: &[f64]| (x[0].exp(), vec![x[0].exp()]);
        let opts = BfgsOptions {
            max_iterations: 3,
            ..Default::default()
        };
        let r = minimize(f, &[0.0], &opts);
        assert!(!r.converged);
        assert!(r.iterations <= 3);
    }
}
