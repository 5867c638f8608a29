//! Point-process log-likelihood `Σ ln λ(s_i, t_i) − ∫_S ∫_0^T λ(s, t) dt ds`.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::catalog::{Catalog, Event};
use crate::error::{Error, Result};
use crate::geo::{Lattice, Projection, Region};
use crate::intensity::hawkes::{HawkesModel, HawkesParams};
use crate::intensity::IntensityModel;

/// How the Hawkes triggering integral is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegralMode {
    /// Each event contributes its full spatial triggering mass times the
    /// temporal mass remaining before the window end.
    Approximate,
    /// Spatial triggering mass is integrated over the region polygon (polar
    /// quadrature, closed form in the radius).
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodOptions {
    /// Quadrature lattice resolution for spatially varying models.
    pub nx: usize,
    pub ny: usize,
    pub mode: IntegralMode,
    /// Angular steps for the exact triggering integral.
    pub angular_steps: usize,
}

impl Default for LikelihoodOptions {
    fn default() -> Self {
        Self {
            nx: 100,
            ny: 100,
            mode: IntegralMode::Approximate,
            angular_steps: 3600,
        }
    }
}

impl LikelihoodOptions {
    pub fn exact() -> Self {
        Self {
            mode: IntegralMode::Exact,
            ..Self::default()
        }
    }
}

/// Log-likelihood of `catalog` over `region × [0, window]`.
///
/// Hawkes models are evaluated with `catalog` as their history. Returns
/// `-inf` when the intensity vanishes at an observed event.
pub fn log_likelihood(
    model: &IntensityModel,
    catalog: &Catalog,
    region: &Region,
    window: f64,
    opts: &LikelihoodOptions,
) -> Result<f64> {
    if !(window > 0.0) {
        return Err(Error::DegenerateWindow {
            t0: 0.0,
            t1: window,
        });
    }
    let events = catalog.events();
    match model {
        IntensityModel::Hawkes(h) => hawkes_log_likelihood(h, events, region, window, opts),
        IntensityModel::Homogeneous { rate } => {
            let sum_log = if *rate > 0.0 {
                events.len() as f64 * rate.ln()
            } else if events.is_empty() {
                0.0
            } else {
                f64::NEG_INFINITY
            };
            Ok(sum_log - rate * region.area_km2() * window)
        }
        _ => {
            let lattice = Lattice::new(region, opts.nx, opts.ny);
            if lattice.nodes.is_empty() {
                return Err(Error::Region("quadrature lattice has no nodes inside the region".into()));
            }
            let values: Vec<f64> = lattice
                .nodes
                .par_iter()
                .map(|n| model.intensity(n.lon, n.lat, 0.0) * n.area_km2)
                .collect();
            let integral = values.iter().sum::<f64>() * window;
            let mut sum_log = 0.0;
            for e in events {
                let v = model.intensity(e.lon, e.lat, e.time);
                if !(v > 0.0) {
                    return Ok(f64::NEG_INFINITY);
                }
                sum_log += v.ln();
            }
            Ok(sum_log - integral)
        }
    }
}

fn hawkes_log_likelihood(
    model: &HawkesModel,
    events: &[Event],
    region: &Region,
    window: f64,
    opts: &LikelihoodOptions,
) -> Result<f64> {
    let p = &model.params;
    let terms: Vec<f64> = (0..events.len())
        .into_par_iter()
        .map(|i| {
            let e = &events[i];
            let trig: f64 = events[..i]
                .iter()
                .filter(|o| o.time < e.time)
                .map(|o| {
                    p.triggering(
                        crate::geo::distance2_km(e.lon, e.lat, o.lon, o.lat),
                        e.time - o.time,
                        o.mag,
                    )
                })
                .sum();
            model.background_rate(e.lon, e.lat) + trig
        })
        .collect();
    let mut sum_log = 0.0;
    for v in &terms {
        if !(*v > 0.0) {
            return Ok(f64::NEG_INFINITY);
        }
        sum_log += v.ln();
    }
    let background = p.mu * region.area_km2() * window;
    let masses: Vec<f64> = events
        .par_iter()
        .map(|e| {
            let temporal = p.temporal_mass(window - e.time);
            let spatial = match opts.mode {
                IntegralMode::Approximate => p.spatial_mass(),
                IntegralMode::Exact => {
                    triggering_mass_in_region(p, e.lon, e.lat, region, opts.angular_steps)
                }
            };
            p.k * (p.a * (e.mag - p.m0)).exp() * temporal * spatial
        })
        .collect();
    Ok(sum_log - background - masses.iter().sum::<f64>())
}

/// `∫_region (r² + d)^(-q) ds` around a point inside the region.
///
/// Rays from the point are intersected with the polygon; along each ray the
/// radial integral has the closed form
/// `G(R) = (d^(1-q) − (R² + d)^(1-q)) / (2 (q − 1))`.
pub fn triggering_mass_in_region(
    p: &HawkesParams,
    lon: f64,
    lat: f64,
    region: &Region,
    steps: usize,
) -> f64 {
    let proj = Projection::centered(lon, lat);
    let ring: Vec<(f64, f64)> = region
        .ring()
        .iter()
        .map(|&(x, y)| proj.forward(x, y))
        .collect();
    let g = |r: f64| (p.d.powf(1.0 - p.q) - (r * r + p.d).powf(1.0 - p.q)) / (2.0 * (p.q - 1.0));
    let g_inf = p.d.powf(1.0 - p.q) / (2.0 * (p.q - 1.0));
    let dtheta = 2.0 * PI / steps as f64;
    let n = ring.len();
    let mut hits: Vec<f64> = Vec::with_capacity(8);
    let mut total = 0.0;
    for k in 0..steps {
        let theta = (k as f64 + 0.5) * dtheta;
        let dir = (theta.cos(), theta.sin());
        hits.clear();
        for i in 0..n {
            let a = ring[i];
            let b = ring[(i + 1) % n];
            let e = (b.0 - a.0, b.1 - a.1);
            let denom = dir.0 * e.1 - dir.1 * e.0;
            if denom == 0.0 {
                continue;
            }
            let t = (a.0 * e.1 - a.1 * e.0) / denom;
            let u = (a.0 * dir.1 - a.1 * dir.0) / denom;
            if t > 0.0 && (0.0..1.0).contains(&u) {
                hits.push(t);
            }
        }
        hits.sort_by(f64::total_cmp);
        // Inside on [0, h0], [h1, h2], ...; an odd count ends outside.
        let mut along = g(*hits.first().unwrap_or(&f64::INFINITY));
        if hits.is_empty() {
            along = g_inf;
        }
        let mut i = 1;
        while i + 1 < hits.len() {
            along += g(hits[i + 1]) - g(hits[i]);
            i += 2;
        }
        total += along * dtheta;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Event;

    fn square() -> Region {
        Region::rectangle(0.0, 1.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn homogeneous_closed_form() {
        let region = square();
        let c = Catalog::new(
            (0..7).map(|i| Event::new(i as f64, 0.1 * i as f64, 0.5, 4.0)).collect(),
            10.0,
            4.0,
        )
        .unwrap();
        let mu = 0.002;
        let ll = log_likelihood(
            &IntensityModel::Homogeneous { rate: mu },
            &c,
            &region,
            10.0,
            &LikelihoodOptions::default(),
        )
        .unwrap();
        let expected = 7.0 * mu.ln() - mu * region.area_km2() * 10.0;
        assert!((ll - expected).abs() < 1e-9);
        // Maximizer is n / (A T).
        let mu_hat = 7.0 / (region.area_km2() * 10.0);
        let at = |m: f64| {
            log_likelihood(
                &IntensityModel::Homogeneous { rate: m },
                &c,
                &region,
                10.0,
                &LikelihoodOptions::default(),
            )
            .unwrap()
        };
        assert!(at(mu_hat) > at(mu_hat * 1.01) && at(mu_hat) > at(mu_hat * 0.99));
    }

    #[test]
    fn mass_far_from_edges_is_total_mass() {
        let p = HawkesParams {
            mu: 1.0,
            k: 1.0,
            c: 0.1,
            p: 1.5,
            a: 0.0,
            d: 0.5,
            q: 2.5,
            m0: 0.0,
        };
        let region = Region::rectangle(-2.0, 2.0, -2.0, 2.0).unwrap();
        let m = triggering_mass_in_region(&p, 0.0, 0.0, &region, 3600);
        // Tail beyond ~220 km is below 1e-7 of the total.
        assert!((m - p.spatial_mass()).abs() < 1e-6 * p.spatial_mass());
    }

    #[test]
    fn mass_at_straight_edge_is_half() {
        // At the midpoint of a long straight edge, half the plane is inside.
        let p = HawkesParams {
            mu: 1.0,
            k: 1.0,
            c: 0.1,
            p: 1.5,
            a: 0.0,
            d: 0.5,
            q: 2.5,
            m0: 0.0,
        };
        let region = Region::rectangle(-5.0, 5.0, 0.0, 5.0).unwrap();
        let m = triggering_mass_in_region(&p, 0.0, 1e-12, &region, 3600);
        assert!((m / p.spatial_mass() - 0.5).abs() < 1e-4, "{}", m / p.spatial_mass());
    }

    #[test]
    fn mass_matches_lattice_quadrature_in_concave_region() {
        let p = HawkesParams {
            mu: 1.0,
            k: 1.0,
            c: 0.1,
            p: 1.5,
            a: 0.0,
            d: 100.0,
            q: 1.5,
            m0: 0.0,
        };
        let region = Region::new(vec![
            (0.0, 0.0),
            (1.0, 0.0),
            (1.0, 1.0),
            (0.5, 0.4),
            (0.0, 1.0),
        ])
        .unwrap();
        let (lon, lat) = (0.3, 0.3);
        let exact = triggering_mass_in_region(&p, lon, lat, &region, 7200);
        let lattice = Lattice::new(&region, 800, 800);
        let quad: f64 = lattice
            .nodes
            .iter()
            .map(|n| {
                (crate::geo::distance2_km(lon, lat, n.lon, n.lat) + p.d).powf(-p.q) * n.area_km2
            })
            .sum();
        assert!((exact - quad).abs() < 2e-3 * quad, "{exact} vs {quad}");
    }

    #[test]
    fn zero_intensity_at_event_is_neg_infinity() {
        let region = square();
        let c = Catalog::new(vec![Event::new(1.0, 0.5, 0.5, 4.0)], 2.0, 4.0).unwrap();
        let ll = log_likelihood(
            &IntensityModel::Homogeneous { rate: 0.0 },
            &c,
            &region,
            2.0,
            &LikelihoodOptions::default(),
        )
        .unwrap();
        assert_eq!(ll, f64::NEG_INFINITY);
    }
}
