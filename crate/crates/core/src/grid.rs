//! Space–magnitude bin grids and event binning.
//!
//! A [`BinGrid`] is the product of a list of spatial rectangles and a list of
//! magnitude bands shared by every rectangle. Flat bin indices are row-major:
//! `space_index * n_bands + band_index`.

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::geo::rect_area_km2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceCell {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl SpaceCell {
    pub fn new(lon_min: f64, lon_max: f64, lat_min: f64, lat_max: f64) -> Self {
        Self {
            lon_min,
            lon_max,
            lat_min,
            lat_max,
        }
    }

    /// Closed-rectangle membership.
    #[inline]
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        lon >= self.lon_min && lon <= self.lon_max && lat >= self.lat_min && lat <= self.lat_max
    }

    pub fn area_km2(&self) -> f64 {
        rect_area_km2(self.lon_min, self.lon_max, self.lat_min, self.lat_max)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.lon_min + self.lon_max),
            0.5 * (self.lat_min + self.lat_max),
        )
    }

    pub fn ring(&self) -> [(f64, f64); 4] {
        [
            (self.lon_min, self.lat_min),
            (self.lon_max, self.lat_min),
            (self.lon_max, self.lat_max),
            (self.lon_min, self.lat_max),
        ]
    }

    fn interiors_overlap(&self, other: &Self) -> bool {
        self.lon_min < other.lon_max
            && other.lon_min < self.lon_max
            && self.lat_min < other.lat_max
            && other.lat_min < self.lat_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagBand {
    pub min: f64,
    pub max: f64,
}

impl MagBand {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    #[inline]
    pub fn contains(&self, mag: f64) -> bool {
        mag >= self.min && mag <= self.max
    }
}

/// One flattened bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub space: SpaceCell,
    pub band: MagBand,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinGrid {
    space: Vec<SpaceCell>,
    bands: Vec<MagBand>,
}

impl BinGrid {
    pub fn new(space: Vec<SpaceCell>, bands: Vec<MagBand>) -> Result<Self> {
        if space.is_empty() || bands.is_empty() {
            return Err(Error::Grid("grid needs at least one cell and one band".into()));
        }
        for (i, c) in space.iter().enumerate() {
            let ok = [c.lon_min, c.lon_max, c.lat_min, c.lat_max]
                .iter()
                .all(|v| v.is_finite());
            if !ok || !(c.lon_max > c.lon_min) || !(c.lat_max > c.lat_min) {
                return Err(Error::Grid(format!("space cell {i} has no positive extent")));
            }
        }
        for (i, b) in bands.iter().enumerate() {
            if !b.min.is_finite() || !b.max.is_finite() || !(b.max > b.min) {
                return Err(Error::Grid(format!("magnitude band {i} has no positive extent")));
            }
        }
        for (i, w) in bands.windows(2).enumerate() {
            if w[1].min < w[0].max {
                return Err(Error::Grid(format!(
                    "magnitude bands {i} and {} overlap or are unsorted",
                    i + 1
                )));
            }
        }
        // Sweep over cells sorted by western edge.
        let mut order: Vec<usize> = (0..space.len()).collect();
        order.sort_by(|&a, &b| space[a].lon_min.total_cmp(&space[b].lon_min));
        for (k, &i) in order.iter().enumerate() {
            for &j in &order[k + 1..] {
                if space[j].lon_min >= space[i].lon_max {
                    break;
                }
                if space[i].interiors_overlap(&space[j]) {
                    return Err(Error::Grid(format!(
                        "space cells {} and {} overlap",
                        i.min(j),
                        i.max(j)
                    )));
                }
            }
        }
        Ok(Self { space, bands })
    }

    pub fn space_cells(&self) -> &[SpaceCell] {
        &self.space
    }

    pub fn bands(&self) -> &[MagBand] {
        &self.bands
    }

    pub fn n_space(&self) -> usize {
        self.space.len()
    }

    pub fn n_bands(&self) -> usize {
        self.bands.len()
    }

    pub fn len(&self) -> usize {
        self.space.len() * self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, space: usize, band: usize) -> usize {
        space * self.bands.len() + band
    }

    pub fn bin(&self, index: usize) -> Bin {
        let nb = self.bands.len();
        Bin {
            space: self.space[index / nb],
            band: self.bands[index % nb],
        }
    }

    pub fn bins(&self) -> impl Iterator<Item = Bin> + '_ {
        self.space
            .iter()
            .flat_map(move |s| self.bands.iter().map(move |b| Bin { space: *s, band: *b }))
    }

    /// Lowest-index space cell containing the point (closed edges).
    pub fn locate_space(&self, lon: f64, lat: f64) -> Option<usize> {
        self.space.iter().position(|c| c.contains(lon, lat))
    }

    pub fn locate_band(&self, mag: f64) -> Option<usize> {
        self.bands.iter().position(|b| b.contains(mag))
    }

    /// Lowest-index bin containing the event, if any.
    pub fn locate(&self, lon: f64, lat: f64, mag: f64) -> Option<usize> {
        let s = self.locate_space(lon, lat)?;
        let b = self.locate_band(mag)?;
        Some(self.index(s, b))
    }

    pub fn magnitude_range(&self) -> (f64, f64) {
        (self.bands[0].min, self.bands[self.bands.len() - 1].max)
    }

    pub fn space_bbox(&self) -> SpaceCell {
        let mut b = self.space[0];
        for c in &self.space[1..] {
            b.lon_min = b.lon_min.min(c.lon_min);
            b.lon_max = b.lon_max.max(c.lon_max);
            b.lat_min = b.lat_min.min(c.lat_min);
            b.lat_max = b.lat_max.max(c.lat_max);
        }
        b
    }

    /// Grid with the same space cells and a single band spanning all magnitudes.
    pub fn space_only(&self) -> BinGrid {
        let (lo, hi) = self.magnitude_range();
        BinGrid {
            space: self.space.clone(),
            bands: vec![MagBand::new(lo, hi)],
        }
    }

    /// Grid with one space cell (the bounding box) and the same bands.
    pub fn magnitude_only(&self) -> BinGrid {
        BinGrid {
            space: vec![self.space_bbox()],
            bands: self.bands.clone(),
        }
    }

    /// Regular lon/lat grid with `nx × ny` cells and the given bands.
    pub fn regular(
        lon: (f64, f64),
        lat: (f64, f64),
        nx: usize,
        ny: usize,
        bands: Vec<MagBand>,
    ) -> Result<Self> {
        let dx = (lon.1 - lon.0) / nx as f64;
        let dy = (lat.1 - lat.0) / ny as f64;
        let mut cells = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let x0 = lon.0 + i as f64 * dx;
                let y0 = lat.0 + j as f64 * dy;
                let x1 = if i + 1 == nx { lon.1 } else { lon.0 + (i + 1) as f64 * dx };
                let y1 = if j + 1 == ny { lat.1 } else { lat.0 + (j + 1) as f64 * dy };
                cells.push(SpaceCell::new(x0, x1, y0, y1));
            }
        }
        Self::new(cells, bands)
    }
}

/// Bucket index over a grid's space cells for fast point lookup.
///
/// Lookups return the same answer as [`BinGrid::locate_space`]: the
/// lowest-index cell containing the point.
#[derive(Debug, Clone)]
pub struct SpaceIndex {
    bbox: SpaceCell,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl SpaceIndex {
    pub fn new(cells: &[SpaceCell]) -> Self {
        let mut bbox = cells[0];
        for c in &cells[1..] {
            bbox.lon_min = bbox.lon_min.min(c.lon_min);
            bbox.lon_max = bbox.lon_max.max(c.lon_max);
            bbox.lat_min = bbox.lat_min.min(c.lat_min);
            bbox.lat_max = bbox.lat_max.max(c.lat_max);
        }
        let side = ((cells.len() as f64).sqrt().ceil() as usize).clamp(1, 512);
        let (nx, ny) = (side, side);
        let mut buckets = vec![Vec::new(); nx * ny];
        let w = (bbox.lon_max - bbox.lon_min) / nx as f64;
        let h = (bbox.lat_max - bbox.lat_min) / ny as f64;
        for (i, c) in cells.iter().enumerate() {
            let i0 = (((c.lon_min - bbox.lon_min) / w).floor().max(0.0) as usize).min(nx - 1);
            let i1 = (((c.lon_max - bbox.lon_min) / w).floor().max(0.0) as usize).min(nx - 1);
            let j0 = (((c.lat_min - bbox.lat_min) / h).floor().max(0.0) as usize).min(ny - 1);
            let j1 = (((c.lat_max - bbox.lat_min) / h).floor().max(0.0) as usize).min(ny - 1);
            for j in j0..=j1 {
                for ii in i0..=i1 {
                    buckets[j * nx + ii].push(i as u32);
                }
            }
        }
        Self {
            bbox,
            nx,
            ny,
            buckets,
        }
    }

    pub fn locate(&self, cells: &[SpaceCell], lon: f64, lat: f64) -> Option<usize> {
        if !self.bbox.contains(lon, lat) {
            return None;
        }
        let fx = (lon - self.bbox.lon_min) / (self.bbox.lon_max - self.bbox.lon_min);
        let fy = (lat - self.bbox.lat_min) / (self.bbox.lat_max - self.bbox.lat_min);
        let i = ((fx * self.nx as f64) as usize).min(self.nx - 1);
        let j = ((fy * self.ny as f64) as usize).min(self.ny - 1);
        // A point on a bucket edge may belong to a cell registered only in the
        // neighbouring bucket, so scan the 3×3 neighbourhood and keep the
        // lowest index.
        let mut best: Option<usize> = None;
        for jj in j.saturating_sub(1)..=(j + 1).min(self.ny - 1) {
            for ii in i.saturating_sub(1)..=(i + 1).min(self.nx - 1) {
                for &c in &self.buckets[jj * self.nx + ii] {
                    let c = c as usize;
                    if best.is_none_or(|b| c < b) && cells[c].contains(lon, lat) {
                        best = Some(c);
                    }
                }
            }
        }
        best
    }
}

/// Per-bin event counts plus the number of events outside every bin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinCounts {
    pub counts: Vec<u64>,
    pub remainder: usize,
}

impl BinCounts {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Counts events per bin. An event on a shared edge goes to the lower-index
/// bin; events outside all bins are tallied in `remainder`.
pub fn bin_counts(catalog: &Catalog, grid: &BinGrid) -> BinCounts {
    let mut counts = vec![0u64; grid.len()];
    let mut remainder = 0;
    let index = SpaceIndex::new(grid.space_cells());
    for e in catalog.events() {
        let bin = index
            .locate(grid.space_cells(), e.lon, e.lat)
            .zip(grid.locate_band(e.mag))
            .map(|(s, b)| grid.index(s, b));
        match bin {
            Some(i) => counts[i] += 1,
            None => remainder += 1,
        }
    }
    BinCounts { counts, remainder }
}
