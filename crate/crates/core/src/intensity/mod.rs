//! Conditional-intensity models, their log-likelihood and maximum-likelihood
//! fitting.
//!
//! All intensities are in events per km² per day.

pub mod fit;
pub mod hawkes;
pub mod kernel;
pub mod likelihood;
pub mod optimize;

use crate::forecast::GriddedForecast;
use crate::grid::{SpaceCell, SpaceIndex};

pub use fit::{fit_mle, FitReport, FitSpec, FittedModel, HawkesObjective, ModelFamily, ParamBounds};
pub use hawkes::{hawkes_intensity, GutenbergRichter, HawkesModel, HawkesParams};
pub use kernel::{background_from_catalog, kernel_density, KernelModel, SpatialBackground};
pub use likelihood::{log_likelihood, IntegralMode, LikelihoodOptions};

/// Piecewise-constant spatial density derived from a gridded forecast: each
/// space cell's summed rate divided by its area and the forecast window.
#[derive(Debug, Clone)]
pub struct PiecewiseDensity {
    cells: Vec<SpaceCell>,
    density: Vec<f64>,
    index: SpaceIndex,
}

impl PiecewiseDensity {
    pub fn from_forecast(f: &GriddedForecast) -> Self {
        Self::new(f.grid().space_cells().to_vec(), f.space_density())
    }

    pub fn new(cells: Vec<SpaceCell>, density: Vec<f64>) -> Self {
        assert_eq!(cells.len(), density.len(), "one density per cell");
        let index = SpaceIndex::new(&cells);
        Self {
            cells,
            density,
            index,
        }
    }

    pub fn cells(&self) -> &[SpaceCell] {
        &self.cells
    }

    pub fn densities(&self) -> &[f64] {
        &self.density
    }

    /// Density at a point; zero outside every cell.
    pub fn at(&self, lon: f64, lat: f64) -> f64 {
        self.index
            .locate(&self.cells, lon, lat)
            .map_or(0.0, |i| self.density[i])
    }
}

/// An evaluable conditional intensity λ(s, t).
#[derive(Debug, Clone)]
pub enum IntensityModel {
    /// Constant rate per km² per day.
    Homogeneous { rate: f64 },
    /// Time-independent smoothed seismicity.
    Kernel(KernelModel),
    /// Self-exciting model conditioned on its stored history.
    Hawkes(HawkesModel),
    /// Piecewise-constant density from a gridded forecast.
    Piecewise(PiecewiseDensity),
}

impl IntensityModel {
    pub fn from_forecast(f: &GriddedForecast) -> Self {
        IntensityModel::Piecewise(PiecewiseDensity::from_forecast(f))
    }

    #[inline]
    pub fn intensity(&self, lon: f64, lat: f64, t: f64) -> f64 {
        match self {
            IntensityModel::Homogeneous { rate } => *rate,
            IntensityModel::Kernel(k) => k.intensity(lon, lat),
            IntensityModel::Hawkes(h) => h.intensity(lon, lat, t),
            IntensityModel::Piecewise(p) => p.at(lon, lat),
        }
    }

    /// `∫_{t0}^{t1} λ(s, t) dt` at a location.
    pub fn time_integrated(&self, lon: f64, lat: f64, t0: f64, t1: f64) -> f64 {
        match self {
            IntensityModel::Hawkes(h) => h.time_integrated(lon, lat, t0, t1),
            other => other.intensity(lon, lat, t0) * (t1 - t0),
        }
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(self, IntensityModel::Hawkes(_))
    }
}
