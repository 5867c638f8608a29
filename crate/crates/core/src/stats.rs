//! Distribution functions and goodness-of-fit helpers.
//!
//! Special functions (log-gamma, regularized incomplete gamma and beta, erfc)
//! come from `statrs`; everything here is thin composition over them.

use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

/// ln(n!) via log-gamma.
#[inline]
pub fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        0.0
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}

/// Poisson log-pmf with the conventions `0·ln 0 = 0` and `ln P = -inf` when
/// `rate = 0` and `n > 0`.
#[inline]
pub fn poisson_ln_pmf(n: u64, rate: f64) -> f64 {
    if n == 0 {
        -rate
    } else if rate <= 0.0 {
        f64::NEG_INFINITY
    } else {
        n as f64 * rate.ln() - rate - ln_factorial(n)
    }
}

/// P(N <= n) for N ~ Poisson(rate).
pub fn poisson_cdf(n: u64, rate: f64) -> f64 {
    if rate <= 0.0 {
        return 1.0;
    }
    gamma_ur(n as f64 + 1.0, rate)
}

/// P(N >= n) for N ~ Poisson(rate).
pub fn poisson_sf_inclusive(n: u64, rate: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    if rate <= 0.0 {
        return 0.0;
    }
    gamma_lr(n as f64, rate)
}

/// Upper tail P(X >= x) of the chi-square distribution.
pub fn chi_square_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(0.5 * df, 0.5 * x)
}

/// Upper tail P(Z >= z) of the standard normal.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Two-sided tail P(|T| >= |t|) of Student's t with `df` degrees of freedom,
/// through the regularized incomplete beta function.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    beta_reg(0.5 * df, 0.5, x).clamp(0.0, 1.0)
}

/// Kolmogorov–Smirnov distance between the empirical distribution of
/// `sample` and a continuous CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (((i + 1) as f64 / n) - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// KS distance of a sample from U[0, 1].
pub fn ks_uniform(sample: &[f64]) -> f64 {
    ks_distance(sample, |x| x.clamp(0.0, 1.0))
}

/// Asymptotic p-value of the one-sample KS statistic with Stephens'
/// small-sample adjustment.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the n - 1 denominator.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}
