//! Space–time Hawkes (ETAS) conditional intensity.
//!
//! The triggering function is
//!
//! ```text
//! g(r, τ, M) = K · (τ + c)^(-p) · exp(a (M - m0)) · (r² + d)^(-q)
//! ```
//!
//! with `r` in km, `τ` in days and `d` in km². Note the spatial scale enters as
//! `d` (km²), whereas the smoothing kernel uses `d²` with `d` in km.

use std::f64::consts::PI;

use crate::catalog::{Catalog, Event};
use crate::error::{Error, Result};
use crate::geo::distance2_km;
use crate::intensity::kernel::SpatialBackground;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HawkesParams {
    /// Mean background rate, events per km² per day.
    pub mu: f64,
    /// Productivity.
    pub k: f64,
    /// Temporal offset, days.
    pub c: f64,
    /// Temporal decay exponent (> 1).
    pub p: f64,
    /// Magnitude scaling per unit magnitude.
    pub a: f64,
    /// Spatial scale, km².
    pub d: f64,
    /// Spatial decay exponent (> 1).
    pub q: f64,
    /// Magnitude floor.
    pub m0: f64,
}

impl HawkesParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.mu, self.k, self.c, self.p, self.a, self.d, self.q, self.m0];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("Hawkes parameters must be finite".into()));
        }
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Parameter(msg.to_string()))
            }
        };
        check(self.mu > 0.0, "mu must be > 0")?;
        check(self.k >= 0.0, "K must be >= 0")?;
        check(self.c > 0.0, "c must be > 0")?;
        check(self.p > 1.0, "p must be > 1")?;
        check(self.a >= 0.0, "a must be >= 0")?;
        check(self.d > 0.0, "d must be > 0")?;
        check(self.q > 1.0, "q must be > 1")
    }

    /// Triggering contribution at squared distance `r2` (km²) and lag `lag`
    /// (days) from a parent of magnitude `mag`.
    #[inline]
    pub fn triggering(&self, r2: f64, lag: f64, mag: f64) -> f64 {
        self.k
            * (lag + self.c).powf(-self.p)
            * (self.a * (mag - self.m0)).exp()
            * (r2 + self.d).powf(-self.q)
    }

    /// `∫_0^horizon (τ + c)^(-p) dτ`.
    #[inline]
    pub fn temporal_mass(&self, horizon: f64) -> f64 {
        let u = self.p - 1.0;
        if horizon.is_infinite() {
            return self.c.powf(-u) / u;
        }
        (self.c.powf(-u) - (horizon + self.c).powf(-u)) / u
    }

    /// Fraction of the temporal triggering mass falling within `horizon` days.
    pub fn temporal_fraction(&self, horizon: f64) -> f64 {
        1.0 - ((horizon + self.c) / self.c).powf(1.0 - self.p)
    }

    /// `∫_plane (r² + d)^(-q) ds = π d^(1-q) / (q - 1)`.
    #[inline]
    pub fn spatial_mass(&self) -> f64 {
        PI * self.d.powf(1.0 - self.q) / (self.q - 1.0)
    }

    /// Expected number of direct offspring of an event of magnitude `mag`
    /// over unbounded space and time.
    pub fn branching_ratio(&self, mag: f64) -> Result<f64> {
        if !(self.p > 1.0) || !(self.q > 1.0) {
            return Err(Error::Parameter(
                "branching ratio needs p > 1 and q > 1 (integrable triggering)".into(),
            ));
        }
        Ok(self.k
            * (self.a * (mag - self.m0)).exp()
            * self.temporal_mass(f64::INFINITY)
            * self.spatial_mass())
    }
}

/// Truncated Gutenberg–Richter magnitude law: density ∝ 10^(-b (M - m0)) on
/// `[m0, m0 + width]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GutenbergRichter {
    pub b: f64,
    pub m0: f64,
    pub width: f64,
}

impl GutenbergRichter {
    pub fn new(m0: f64) -> Self {
        Self {
            b: 1.0,
            m0,
            width: 4.0,
        }
    }

    fn beta(&self) -> f64 {
        self.b * std::f64::consts::LN_10
    }

    /// Inverse CDF.
    pub fn quantile(&self, u: f64) -> f64 {
        let beta = self.beta();
        let tail = (-beta * self.width).exp();
        self.m0 - (1.0 - u * (1.0 - tail)).ln() / beta
    }

    pub fn mean(&self) -> f64 {
        let beta = self.beta();
        let w = self.width;
        let tail = (-beta * w).exp();
        self.m0 + 1.0 / beta - w * tail / (1.0 - tail)
    }

    /// `E[exp(a (M - m0))]`.
    pub fn mean_exp(&self, a: f64) -> f64 {
        let beta = self.beta();
        let w = self.width;
        let norm = beta / (1.0 - (-beta * w).exp());
        let s = beta - a;
        if s.abs() < 1e-12 {
            norm * w
        } else {
            norm * (1.0 - (-s * w).exp()) / s
        }
    }
}

/// Hawkes model: parameters, an optional spatial background shape and the
/// history the conditional intensity is evaluated against.
///
/// The background is `mu · w(s)` where `w ≡ 1` without a spatial background,
/// or the background field divided by its regional mean otherwise, so `mu`
/// stays the regional average rate either way.
#[derive(Debug, Clone, PartialEq)]
pub struct HawkesModel {
    pub params: HawkesParams,
    pub background: Option<SpatialBackground>,
    history: Catalog,
}

impl HawkesModel {
    pub fn new(
        params: HawkesParams,
        background: Option<SpatialBackground>,
        history: Catalog,
    ) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            background,
            history,
        })
    }

    pub fn history(&self) -> &Catalog {
        &self.history
    }

    pub fn with_history(&self, history: Catalog) -> Self {
        Self {
            params: self.params,
            background: self.background.clone(),
            history,
        }
    }

    #[inline]
    pub fn background_rate(&self, lon: f64, lat: f64) -> f64 {
        match &self.background {
            None => self.params.mu,
            Some(bg) => self.params.mu * bg.shape(lon, lat),
        }
    }

    /// Conditional intensity: background plus triggering from history events
    /// strictly before `t`.
    pub fn intensity(&self, lon: f64, lat: f64, t: f64) -> f64 {
        let p = &self.params;
        let mut total = 0.0;
        for e in self.history.events() {
            if e.time >= t {
                break;
            }
            total += p.triggering(distance2_km(lon, lat, e.lon, e.lat), t - e.time, e.mag);
        }
        self.background_rate(lon, lat) + total
    }

    /// `∫_{t0}^{t1} λ(s, t) dt` at a fixed location.
    pub fn time_integrated(&self, lon: f64, lat: f64, t0: f64, t1: f64) -> f64 {
        let p = &self.params;
        let mut total = 0.0;
        for e in self.history.events() {
            if e.time >= t1 {
                break;
            }
            let lo = (t0 - e.time).max(0.0);
            let hi = t1 - e.time;
            let mass = p.temporal_mass(hi) - p.temporal_mass(lo);
            total += p.k
                * (p.a * (e.mag - p.m0)).exp()
                * (distance2_km(lon, lat, e.lon, e.lat) + p.d).powf(-p.q)
                * mass;
        }
        self.background_rate(lon, lat) * (t1 - t0) + total
    }
}

/// Conditional intensity of a Hawkes process with the given history.
pub fn hawkes_intensity(
    params: &HawkesParams,
    history: &[Event],
    lon: f64,
    lat: f64,
    t: f64,
) -> f64 {
    params.mu
        + history
            .iter()
            .take_while(|e| e.time < t)
            .map(|e| params.triggering(distance2_km(lon, lat, e.lon, e.lat), t - e.time, e.mag))
            .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> HawkesParams {
        HawkesParams {
            mu: 0.1,
            k: 0.05,
            c: 0.01,
            p: 1.2,
            a: 1.0,
            d: 1.0,
            q: 1.5,
            m0: 4.0,
        }
    }

    #[test]
    fn empty_history_gives_background() {
        let p = params();
        let ev = [Event::new(5.0, 0.0, 0.0, 5.0)];
        assert_eq!(hawkes_intensity(&p, &ev, 0.0, 0.0, 1.0), p.mu);
        // Events at exactly t are excluded.
        assert_eq!(hawkes_intensity(&p, &ev, 0.0, 0.0, 5.0), p.mu);
    }

    #[test]
    fn single_event_at_zero_lag() {
        let p = params();
        let ev = [Event::new(1.0, 0.0, 0.0, 4.0)];
        let v = hawkes_intensity(&p, &ev, 0.0, 0.0, 1.0 + 1e-15);
        let expected = p.mu + p.k * p.c.powf(-p.p) * p.d.powf(-p.q);
        assert!((v - expected).abs() < 1e-9 * expected);
    }

    /// Independent re-evaluation of the two-event sum with explicit km offsets.
    #[test]
    fn two_events_cross_checked() {
        let p = params();
        let ev = [
            Event::new(1.0, 0.0, 0.0, 5.0),
            Event::new(2.0, 0.01, 0.02, 4.5),
        ];
        let (lon, lat, t) = (0.005, 0.01, 2.5);
        let v = hawkes_intensity(&p, &ev, lon, lat, t);

        let km = 111.32;
        let mut expected = 0.1;
        for (te, x, y, m) in [(1.0, 0.0, 0.0, 5.0), (2.0, 0.01, 0.02, 4.5)] {
            let coslat = ((lat + y) / 2.0f64).to_radians().cos();
            let dx = (lon - x) * km * coslat;
            let dy = (lat - y) * km;
            let r2 = dx * dx + dy * dy;
            expected += 0.05 / (t - te + 0.01f64).powf(1.2) * (m - 4.0f64).exp()
                / (r2 + 1.0f64).powf(1.5);
        }
        assert!((v - expected).abs() < 1e-12 * expected, "{v} vs {expected}");
    }

    #[test]
    fn branching_ratio_closed_form_and_criticality() {
        let mut p = params();
        p.k = 0.0;
        assert_eq!(p.branching_ratio(5.0).unwrap(), 0.0);
        p.k = (p.p - 1.0) * (p.q - 1.0) * p.c.powf(p.p - 1.0) * p.d.powf(p.q - 1.0) / PI;
        assert!((p.branching_ratio(p.m0).unwrap() - 1.0).abs() < 1e-12);
        p.p = 1.0;
        assert!(p.branching_ratio(4.0).is_err());
    }

    /// Quadrature of g over a large space–time box against the closed form.
    #[test]
    fn branching_ratio_matches_quadrature() {
        let p = HawkesParams {
            mu: 0.1,
            k: 0.02,
            c: 0.05,
            p: 1.6,
            a: 0.8,
            d: 2.0,
            q: 1.8,
            m0: 3.0,
        };
        let mag = 4.2;
        // Log-spaced midpoint rules in lag and radius.
        let integrate_log = |f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, n: usize| -> f64 {
            let (a, b) = (lo.ln(), hi.ln());
            let h = (b - a) / n as f64;
            (0..n)
                .map(|i| {
                    let x = (a + (i as f64 + 0.5) * h).exp();
                    f(x) * x * h
                })
                .sum::<f64>()
        };
        let time = integrate_log(&|t| (t + p.c).powf(-p.p), 1e-9, 1e8, 200_000);
        let space = integrate_log(
            &|r| 2.0 * PI * r * (r * r + p.d).powf(-p.q),
            1e-9,
            1e6,
            200_000,
        );
        let quad = p.k * (p.a * (mag - p.m0)).exp() * time * space;
        let closed = p.branching_ratio(mag).unwrap();
        assert!((quad - closed).abs() < 0.01 * closed, "{quad} vs {closed}");
    }

    #[test]
    fn zero_productivity_is_background_everywhere() {
        let mut p = params();
        p.k = 0.0;
        let ev: Vec<_> = (0..5).map(|i| Event::new(i as f64, 0.0, 0.0, 6.0)).collect();
        for t in [0.5, 2.5, 10.0] {
            assert_eq!(hawkes_intensity(&p, &ev, 0.001, 0.0, t), p.mu);
        }
    }

    #[test]
    fn gutenberg_richter_moments() {
        let gr = GutenbergRichter::new(4.0);
        // Midpoint integration of the truncated density.
        let beta = std::f64::consts::LN_10;
        let n = 100_000;
        let h = 4.0 / n as f64;
        let norm = beta / (1.0 - (-4.0 * beta).exp());
        let (mut m1, mut e1) = (0.0, 0.0);
        for i in 0..n {
            let x = (i as f64 + 0.5) * h;
            let dens = norm * (-beta * x).exp();
            m1 += (4.0 + x) * dens * h;
            e1 += (0.9 * x).exp() * dens * h;
        }
        assert!((gr.mean() - m1).abs() < 1e-8);
        assert!((gr.mean_exp(0.9) - e1).abs() < 1e-8);
        assert!((gr.quantile(0.0) - 4.0).abs() < 1e-12);
        assert!((gr.quantile(1.0) - 8.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = params();
        p.q = 1.0;
        assert!(p.validate().is_err());
    }
}
