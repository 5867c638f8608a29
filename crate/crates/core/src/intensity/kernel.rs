//! Power-law kernel smoothing of past seismicity.

use std::f64::consts::PI;

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::geo::{distance2_km, Lattice, Region};

/// Normalized planar power-law kernel `d / (2π) · (r² + d²)^(-3/2)` in km⁻².
pub fn kernel_density(r_km: f64, d_km: f64) -> Result<f64> {
    if !(d_km > 0.0) {
        return Err(Error::Parameter(format!("smoothing distance {d_km} must be positive")));
    }
    Ok(kernel_density_r2(r_km * r_km, d_km))
}

#[inline]
pub(crate) fn kernel_density_r2(r2: f64, d: f64) -> f64 {
    let s = r2 + d * d;
    d / (2.0 * PI) / (s * s.sqrt())
}

/// Probability mass of the kernel inside a disk of radius `r_km`.
pub fn kernel_disk_mass(r_km: f64, d_km: f64) -> f64 {
    1.0 - d_km / (r_km * r_km + d_km * d_km).sqrt()
}

/// Sum of power-law kernels centred on training epicenters, with one global
/// smoothing distance.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelModel {
    sources: Vec<(f64, f64)>,
    d_km: f64,
}

impl KernelModel {
    pub fn new(sources: Vec<(f64, f64)>, d_km: f64) -> Result<Self> {
        if !(d_km > 0.0) || !d_km.is_finite() {
            return Err(Error::Parameter(format!("smoothing distance {d_km} must be positive")));
        }
        if sources.is_empty() {
            return Err(Error::Parameter("kernel model needs at least one source".into()));
        }
        Ok(Self { sources, d_km })
    }

    pub fn from_catalog(catalog: &Catalog, d_km: f64) -> Result<Self> {
        Self::new(catalog.events().iter().map(|e| (e.lon, e.lat)).collect(), d_km)
    }

    pub fn sources(&self) -> &[(f64, f64)] {
        &self.sources
    }

    pub fn d_km(&self) -> f64 {
        self.d_km
    }

    /// Density per km² at a location.
    pub fn intensity(&self, lon: f64, lat: f64) -> f64 {
        self.sources
            .iter()
            .map(|&(x, y)| kernel_density_r2(distance2_km(lon, lat, x, y), self.d_km))
            .sum()
    }

    /// Leave-one-out log-likelihood of the sources under their own smoothing.
    pub fn leave_one_out_log_likelihood(sources: &[(f64, f64)], d_km: f64) -> f64 {
        let n = sources.len();
        if n < 2 {
            return f64::NEG_INFINITY;
        }
        let norm = 1.0 / (n - 1) as f64;
        sources
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| {
                let s: f64 = sources
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, &(u, v))| kernel_density_r2(distance2_km(x, y, u, v), d_km))
                    .sum();
                (s * norm).ln()
            })
            .sum()
    }

    /// Picks the candidate smoothing distance with the highest leave-one-out
    /// log-likelihood. Earlier candidates win ties.
    pub fn select_bandwidth(sources: &[(f64, f64)], candidates: &[f64]) -> Result<f64> {
        if sources.len() < 2 {
            return Err(Error::Parameter(
                "bandwidth selection needs at least two sources".into(),
            ));
        }
        let mut best: Option<(f64, f64)> = None;
        for &d in candidates {
            if !(d > 0.0) {
                return Err(Error::Parameter(format!("candidate distance {d} must be positive")));
            }
            let ll = Self::leave_one_out_log_likelihood(sources, d);
            if best.is_none_or(|(_, b)| ll > b) {
                best = Some((d, ll));
            }
        }
        best.map(|(d, _)| d)
            .ok_or_else(|| Error::Parameter("no candidate distances".into()))
    }
}

/// A kernel-smoothed background rate field scaled to a fixed expected daily
/// count over a region.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialBackground {
    kernel: KernelModel,
    scale: f64,
    region_area_km2: f64,
    daily_count: f64,
}

impl SpatialBackground {
    /// Rate in events per km² per day.
    pub fn rate(&self, lon: f64, lat: f64) -> f64 {
        self.scale * self.kernel.intensity(lon, lat)
    }

    /// Background relative to its regional mean (mean 1 over the region).
    pub fn shape(&self, lon: f64, lat: f64) -> f64 {
        self.rate(lon, lat) * self.region_area_km2 / self.daily_count
    }

    pub fn daily_count(&self) -> f64 {
        self.daily_count
    }

    pub fn kernel(&self) -> &KernelModel {
        &self.kernel
    }
}

/// Smooths a training catalog and rescales the field so its integral over
/// `region` is `daily_count` events per day (lattice quadrature).
pub fn background_from_catalog(
    training: &Catalog,
    d_km: f64,
    region: &Region,
    daily_count: f64,
    lattice: &Lattice,
) -> Result<SpatialBackground> {
    if training.is_empty() {
        return Err(Error::Parameter("training catalog is empty".into()));
    }
    if !(daily_count > 0.0) {
        return Err(Error::Parameter(format!("daily count {daily_count} must be positive")));
    }
    let kernel = KernelModel::from_catalog(training, d_km)?;
    let integral: f64 = lattice
        .nodes
        .iter()
        .map(|n| kernel.intensity(n.lon, n.lat) * n.area_km2)
        .sum();
    if !(integral > 0.0) {
        return Err(Error::Parameter("kernel field vanishes over the region".into()));
    }
    Ok(SpatialBackground {
        kernel,
        scale: daily_count / integral,
        region_area_km2: region.area_km2(),
        daily_count,
    })
}
