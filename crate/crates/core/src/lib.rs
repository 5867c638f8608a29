//! Point-process models and assessment tools for gridded earthquake forecasts.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod consistency;
pub mod error;
pub mod forecast;
pub mod geo;
pub mod grid;
pub mod intensity;
pub mod residuals;
pub mod simulate;
pub mod stats;
pub mod summaries;

pub use catalog::{parse_catalog, Catalog, Event};
pub use error::{Error, Result};
pub use forecast::{parse_forecast, GriddedForecast};
pub use geo::{Lattice, Region};
pub use grid::{bin_counts, BinCounts, BinGrid, MagBand, SpaceCell};
