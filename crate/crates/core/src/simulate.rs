//! Seeded catalog generators: Poisson-per-bin, homogeneous and thinned
//! inhomogeneous Poisson, and Hawkes by branching.

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::catalog::{Catalog, Event};
use crate::error::{Error, Result};
use crate::forecast::GriddedForecast;
use crate::geo::{offset_km, Region, DEG};
use crate::intensity::hawkes::{GutenbergRichter, HawkesParams};
use crate::intensity::kernel::SpatialBackground;
use crate::intensity::IntensityModel;

/// A reproducible random stream identified by `(master_seed, stream_index)`.
///
/// Backed by ChaCha8 with the index selecting the cipher stream, so distinct
/// indices under one seed never overlap.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_index: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_index);
        Self {
            master_seed,
            stream_index,
            rng,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Runs `f` for replicates `0..n`, replicate `k` on stream `k` of `seed`.
/// Results are returned in replicate order whatever the thread schedule.
pub fn replicate<T, F>(n: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut RngStream) -> T + Sync,
{
    replicate_from(n, seed, 0, f)
}

/// Like [`replicate`] with replicate `k` on stream `first_stream + k`.
pub fn replicate_from<T, F>(n: usize, seed: u64, first_stream: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut RngStream) -> T + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|k| f(&mut RngStream::new(seed, first_stream + k as u64)))
        .collect()
}

/// Draws a Poisson variate; zero for a zero (or negative) mean.
pub fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if !(mean > 0.0) {
        return 0;
    }
    Poisson::new(mean).expect("finite positive mean").sample(rng) as u64
}

/// Per-bin Poisson counts for the given rates.
pub fn simulate_poisson_counts<R: Rng + ?Sized>(rates: &[f64], rng: &mut R) -> Vec<u64> {
    rates.iter().map(|&r| poisson(r, rng)).collect()
}

/// Catalog with Poisson counts per bin, each event uniform in its cell's
/// lon/lat rectangle, its magnitude band and the window.
pub fn simulate_poisson_grid<R: Rng + ?Sized>(f: &GriddedForecast, rng: &mut R) -> Catalog {
    let grid = f.grid();
    let window = f.window_days();
    let mut events = Vec::new();
    for (i, &rate) in f.rates().iter().enumerate() {
        let n = poisson(rate, rng);
        let bin = grid.bin(i);
        let (cell, band) = (bin.space, bin.band);
        for _ in 0..n {
            events.push(Event::new(
                rng.random::<f64>() * window,
                cell.lon_min + rng.random::<f64>() * (cell.lon_max - cell.lon_min),
                cell.lat_min + rng.random::<f64>() * (cell.lat_max - cell.lat_min),
                band.min + rng.random::<f64>() * (band.max - band.min),
            ));
        }
    }
    let m0 = grid.magnitude_range().0;
    Catalog::new(events, window, m0).expect("simulated events lie in the window")
}

/// A point uniform in area over `region`, by rejection from its bounding box.
/// Latitude is drawn uniform in sin(lat) so the box itself is uniform in area.
pub fn uniform_point<R: Rng + ?Sized>(region: &Region, rng: &mut R) -> (f64, f64) {
    let b = region.bbox();
    let (s0, s1) = ((b.lat_min * DEG).sin(), (b.lat_max * DEG).sin());
    loop {
        let lon = b.lon_min + rng.random::<f64>() * (b.lon_max - b.lon_min);
        let lat = (s0 + rng.random::<f64>() * (s1 - s0)).asin() / DEG;
        if region.contains(lon, lat) {
            return (lon, lat);
        }
    }
}

/// Homogeneous Poisson process with `rate` per km² per day on
/// `region × [0, window)`. Magnitudes follow the default Gutenberg–Richter
/// law above `m0`.
pub fn simulate_homogeneous<R: Rng + ?Sized>(
    rate: f64,
    region: &Region,
    window: f64,
    m0: f64,
    rng: &mut R,
) -> Result<Catalog> {
    check_window(window)?;
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::Parameter(format!("rate {rate} must be finite and >= 0")));
    }
    let gr = GutenbergRichter::new(m0);
    let n = poisson(rate * region.area_km2() * window, rng);
    let events = (0..n)
        .map(|_| {
            let (lon, lat) = uniform_point(region, rng);
            let t = rng.random::<f64>() * window;
            Event::new(t, lon, lat, gr.quantile(rng.random()))
        })
        .collect();
    Catalog::new(events, window, m0)
}

/// Thinning: candidates at rate `bound` kept with probability λ/bound.
///
/// A candidate where λ exceeds `bound` is reported as
/// [`Error::BoundViolation`].
pub fn simulate_inhomogeneous<R: Rng + ?Sized>(
    model: &IntensityModel,
    bound: f64,
    region: &Region,
    window: f64,
    m0: f64,
    rng: &mut R,
) -> Result<Catalog> {
    let candidates = simulate_homogeneous(bound, region, window, m0, rng)?;
    let mut kept = Vec::new();
    for e in candidates.events() {
        let v = model.intensity(e.lon, e.lat, e.time);
        if v > bound * (1.0 + 1e-12) {
            return Err(Error::BoundViolation {
                lon: e.lon,
                lat: e.lat,
                time: e.time,
                value: v,
                bound,
            });
        }
        if rng.random::<f64>() * bound < v {
            kept.push(*e);
        }
    }
    Catalog::new(kept, window, m0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HawkesSimOptions {
    /// Background shape; uniform when absent.
    pub background: Option<SpatialBackground>,
    /// Maximum expected (and realized) number of generated events.
    pub cascade_cap: f64,
}

impl Default for HawkesSimOptions {
    fn default() -> Self {
        Self {
            background: None,
            cascade_cap: 1e6,
        }
    }
}

/// Hawkes catalog by branching with a uniform background.
pub fn simulate_hawkes<R: Rng + ?Sized>(
    p: &HawkesParams,
    region: &Region,
    window: f64,
    rng: &mut R,
) -> Result<Catalog> {
    simulate_hawkes_with(p, region, window, &HawkesSimOptions::default(), rng)
}

/// Hawkes catalog by branching.
///
/// Background events are drawn on the region, then every event (including
/// those whose offspring landed outside the region) spawns
/// `Poisson(K e^{a(M−m0)} F(T − t) S)` children with inverse-CDF lags and
/// radii. Only events inside the region are returned.
pub fn simulate_hawkes_with<R: Rng + ?Sized>(
    p: &HawkesParams,
    region: &Region,
    window: f64,
    opts: &HawkesSimOptions,
    rng: &mut R,
) -> Result<Catalog> {
    check_window(window)?;
    p.validate()?;
    let gr = GutenbergRichter::new(p.m0);
    let at_mean = p.branching_ratio(gr.mean())?;
    if at_mean >= 1.0 {
        return Err(Error::Supercritical(at_mean));
    }
    // Criticality of the cascade is governed by the magnitude-averaged ratio.
    let averaged = p.k * gr.mean_exp(p.a) * p.temporal_mass(f64::INFINITY) * p.spatial_mass();
    let background_mean = p.mu * region.area_km2() * window;
    let expected = if averaged < 1.0 {
        background_mean / (1.0 - averaged)
    } else {
        f64::INFINITY
    };
    if expected > opts.cascade_cap {
        return Err(Error::CascadeCap {
            expected,
            cap: opts.cascade_cap,
        });
    }

    let mut all: Vec<Event> = (0..poisson(background_mean, rng))
        .map(|_| {
            let (lon, lat) = match &opts.background {
                None => uniform_point(region, rng),
                Some(bg) => background_point(bg, region, rng),
            };
            Event::new(rng.random::<f64>() * window, lon, lat, gr.quantile(rng.random()))
        })
        .collect();

    let spatial = p.spatial_mass();
    let u = p.p - 1.0;
    let mut next = 0;
    while next < all.len() {
        let parent = all[next];
        next += 1;
        let horizon = window - parent.time;
        let mean = p.k * (p.a * (parent.mag - p.m0)).exp() * p.temporal_mass(horizon) * spatial;
        let n = poisson(mean, rng);
        if (all.len() as u64).saturating_add(n) as f64 > opts.cascade_cap {
            return Err(Error::CascadeCap {
                expected,
                cap: opts.cascade_cap,
            });
        }
        let (c0, c1) = (p.c.powf(-u), (horizon + p.c).powf(-u));
        for _ in 0..n {
            let w: f64 = rng.random();
            let lag = ((c0 - w * (c0 - c1)).powf(-1.0 / u) - p.c).clamp(0.0, horizon);
            let r = hawkes_radius(p, rng.random());
            let theta = 2.0 * PI * rng.random::<f64>();
            let (lon, lat) = offset_km(parent.lon, parent.lat, r * theta.cos(), r * theta.sin());
            let t = parent.time + lag;
            if t < window {
                all.push(Event::new(t, lon, lat, gr.quantile(rng.random())));
            }
        }
    }
    let inside = all
        .into_iter()
        .filter(|e| region.contains(e.lon, e.lat))
        .collect();
    Catalog::new(inside, window, p.m0)
}

/// Inverse CDF of the radial density ∝ r (r² + d)^(-q).
pub fn hawkes_radius(p: &HawkesParams, u: f64) -> f64 {
    (p.d * ((1.0 - u).powf(1.0 / (1.0 - p.q)) - 1.0)).max(0.0).sqrt()
}

/// Inverse CDF of the radial mass of the smoothing kernel with scale `d`.
pub fn kernel_radius(d_km: f64, u: f64) -> f64 {
    let s = 1.0 / (1.0 - u);
    d_km * (s * s - 1.0).max(0.0).sqrt()
}

/// A point from the background density restricted to the region: a random
/// kernel source offset by a kernel-distributed radius, rejected if outside.
fn background_point<R: Rng + ?Sized>(
    bg: &SpatialBackground,
    region: &Region,
    rng: &mut R,
) -> (f64, f64) {
    let sources = bg.kernel().sources();
    let d = bg.kernel().d_km();
    loop {
        let (slon, slat) = sources[rng.random_range(0..sources.len())];
        let r = kernel_radius(d, rng.random());
        let theta = 2.0 * PI * rng.random::<f64>();
        let (lon, lat) = offset_km(slon, slat, r * theta.cos(), r * theta.sin());
        if region.contains(lon, lat) {
            return (lon, lat);
        }
    }
}

fn check_window(window: f64) -> Result<()> {
    if window > 0.0 && window.is_finite() {
        Ok(())
    } else {
        Err(Error::DegenerateWindow {
            t0: 0.0,
            t1: window,
        })
    }
}
