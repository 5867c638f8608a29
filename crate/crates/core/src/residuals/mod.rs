//! Residual analysis: point-transform residuals (thinning, superposition,
//! super-thinning, time rescaling), cell residuals (raw, Pearson, deviance,
//! Voronoi) and homogeneity checks on residual point sets.

pub mod voronoi;

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;

use crate::catalog::{Catalog, Event};
use crate::error::{Error, Result};
use crate::forecast::{bin_ll_difference, ensure_same_grid, GriddedForecast};
use crate::geo::{polygon_area_km2, Lattice, Region};
use crate::grid::{bin_counts, BinGrid};
use crate::intensity::likelihood::triggering_mass_in_region;
use crate::intensity::{HawkesParams, IntegralMode, IntensityModel};
use crate::simulate::{replicate, simulate_homogeneous, uniform_point};
use crate::stats::{chi_square_sf, ks_distance, ks_pvalue};

pub use voronoi::{voronoi_tessellation, VoronoiTessellation};

/// Resolution of the lattice on which inf and sup of λ̂ are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalLattice {
    pub nx: usize,
    pub ny: usize,
    /// Time slices; used only for time-dependent models.
    pub nt: usize,
}

impl Default for EvalLattice {
    fn default() -> Self {
        Self {
            nx: 200,
            ny: 200,
            nt: 100,
        }
    }
}

/// Extremes of λ̂ over the evaluation lattice and the observed events.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBounds {
    pub inf: f64,
    pub sup: f64,
    /// Median over lattice values only.
    pub median: f64,
    pub lattice: EvalLattice,
}

/// λ̂ on lattice midpoints (times `(k + ½)·window/nt`) together with λ̂ at each
/// event. Including the events keeps `inf ≤ λ̂(event)`, so thinning
/// probabilities never exceed one.
pub fn rate_bounds(
    model: &IntensityModel,
    region: &Region,
    window: f64,
    events: &[Event],
    lattice: &EvalLattice,
) -> Result<RateBounds> {
    let grid = Lattice::new(region, lattice.nx, lattice.ny);
    if grid.nodes.is_empty() {
        return Err(Error::Region("evaluation lattice has no nodes inside the region".into()));
    }
    let nt = if model.is_time_dependent() {
        lattice.nt.max(1)
    } else {
        1
    };
    let times: Vec<f64> = (0..nt)
        .map(|k| (k as f64 + 0.5) * window / nt as f64)
        .collect();
    let mut values: Vec<f64> = grid
        .nodes
        .par_iter()
        .flat_map_iter(|n| times.iter().map(move |&t| model.intensity(n.lon, n.lat, t)))
        .collect();
    let at_events: Vec<f64> = events
        .iter()
        .map(|e| model.intensity(e.lon, e.lat, e.time))
        .collect();
    if values.iter().chain(&at_events).any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Parameter("intensity must be finite and >= 0".into()));
    }
    let fold = |init: f64, f: fn(f64, f64) -> f64| {
        values.iter().chain(&at_events).copied().fold(init, f)
    };
    let inf = fold(f64::INFINITY, f64::min);
    let sup = fold(0.0, f64::max);
    let mid = values.len() / 2;
    let (_, median, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    Ok(RateBounds {
        inf,
        sup,
        median: *median,
        lattice: EvalLattice { nt, ..*lattice },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Retained,
    Superposed,
}

impl Origin {
    pub fn as_str(&self) -> &'static str {
        match self {
            Origin::Retained => "retained",
            Origin::Superposed => "superposed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualPoint {
    pub event: Event,
    pub origin: Origin,
    /// Index into the input catalog for retained points.
    pub source: Option<usize>,
}

/// Output of a point-transform residual. Under a correct model the points
/// form a homogeneous Poisson process at `nominal_rate`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPointSet {
    pub points: Vec<ResidualPoint>,
    pub nominal_rate: f64,
    pub region: Region,
    pub window: f64,
    pub m0: f64,
    pub bounds: RateBounds,
}

impl ResidualPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn count(&self, origin: Origin) -> usize {
        self.points.iter().filter(|p| p.origin == origin).count()
    }

    /// Retained points are events of `input` (checked by index and value)
    /// and superposed points lie inside the region and window.
    pub fn audit(&self, input: &Catalog) -> bool {
        self.points.iter().all(|p| match (p.origin, p.source) {
            (Origin::Retained, Some(i)) => input.events().get(i) == Some(&p.event),
            (Origin::Superposed, None) => {
                self.region.contains(p.event.lon, p.event.lat)
                    && (0.0..=self.window).contains(&p.event.time)
            }
            _ => false,
        })
    }

    pub fn locations(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.event.lon, p.event.lat)).collect()
    }

    /// Catalog CSV with an extra `origin` column.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# window_days = {}", self.window);
        let _ = writeln!(out, "# m0 = {}", self.m0);
        let _ = writeln!(out, "# nominal_rate = {}", self.nominal_rate);
        let _ = writeln!(out, "# lambda_inf = {}", self.bounds.inf);
        let _ = writeln!(out, "# lambda_sup = {}", self.bounds.sup);
        let _ = writeln!(
            out,
            "# lattice = {}x{}x{}",
            self.bounds.lattice.nx, self.bounds.lattice.ny, self.bounds.lattice.nt
        );
        out.push_str("time,lon,lat,mag,origin\n");
        for p in &self.points {
            let e = &p.event;
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e.time,
                e.lon,
                e.lat,
                e.mag,
                p.origin.as_str()
            );
        }
        out
    }
}

fn intensity_at(model: &IntensityModel, e: &Event) -> Result<f64> {
    let v = model.intensity(e.lon, e.lat, e.time);
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(Error::Parameter(format!("intensity {v} at event {e:?}")))
    }
}

/// Keeps each event with probability `min(1, rate/λ̂)`.
fn thin_events<R: Rng + ?Sized>(
    c: &Catalog,
    model: &IntensityModel,
    rate: f64,
    rng: &mut R,
) -> Result<Vec<ResidualPoint>> {
    let mut out = Vec::new();
    for (i, e) in c.events().iter().enumerate() {
        let v = intensity_at(model, e)?;
        let keep = if v <= rate { 1.0 } else { rate / v };
        if rng.random::<f64>() < keep {
            out.push(ResidualPoint {
                event: *e,
                origin: Origin::Retained,
                source: Some(i),
            });
        }
    }
    Ok(out)
}

/// Points at rate `max(0, rate − λ̂)`: homogeneous candidates at `rate`,
/// each accepted with probability `max(0, rate − λ̂)/rate`.
fn fill_gap<R: Rng + ?Sized>(
    model: &IntensityModel,
    rate: f64,
    region: &Region,
    window: f64,
    m0: f64,
    rng: &mut R,
) -> Result<Vec<ResidualPoint>> {
    if rate <= 0.0 {
        return Ok(Vec::new());
    }
    let candidates = simulate_homogeneous(rate, region, window, m0, rng)?;
    let mut out = Vec::new();
    for e in candidates.events() {
        let gap = (rate - intensity_at(model, e)?).max(0.0);
        if rng.random::<f64>() * rate < gap {
            out.push(ResidualPoint {
                event: *e,
                origin: Origin::Superposed,
                source: None,
            });
        }
    }
    Ok(out)
}

fn assemble(
    mut points: Vec<ResidualPoint>,
    nominal_rate: f64,
    c: &Catalog,
    region: &Region,
    bounds: RateBounds,
) -> ResidualPointSet {
    points.sort_by(|a, b| a.event.order(&b.event));
    ResidualPointSet {
        points,
        nominal_rate,
        region: region.clone(),
        window: c.window(),
        m0: c.m0(),
        bounds,
    }
}

/// Thinned residuals at `b = inf λ̂`. When `b = 0` every event with positive
/// intensity is dropped and the (degenerate) result is still returned.
pub fn thin_residuals<R: Rng + ?Sized>(
    c: &Catalog,
    model: &IntensityModel,
    region: &Region,
    lattice: &EvalLattice,
    rng: &mut R,
) -> Result<ResidualPointSet> {
    let bounds = rate_bounds(model, region, c.window(), c.events(), lattice)?;
    let points = thin_events(c, model, bounds.inf, rng)?;
    Ok(assemble(points, bounds.inf, c, region, bounds))
}

/// All observed events plus simulated points at rate `C − λ̂`, `C = sup λ̂`.
pub fn superpose_residuals<R: Rng + ?Sized>(
    c: &Catalog,
    model: &IntensityModel,
    region: &Region,
    lattice: &EvalLattice,
    rng: &mut R,
) -> Result<ResidualPointSet> {
    let bounds = rate_bounds(model, region, c.window(), c.events(), lattice)?;
    let mut points: Vec<ResidualPoint> = c
        .events()
        .iter()
        .enumerate()
        .map(|(i, e)| ResidualPoint {
            event: *e,
            origin: Origin::Retained,
            source: Some(i),
        })
        .collect();
    points.extend(fill_gap(model, bounds.sup, region, c.window(), c.m0(), rng)?);
    Ok(assemble(points, bounds.sup, c, region, bounds))
}

/// Super-thinning at rate `k`: events kept with probability `min(1, k/λ̂)`,
/// then points added at rate `max(0, k − λ̂)`.
///
/// The added rate is `k − λ̂`, not `λ̂/k`: only the former makes the union
/// homogeneous at rate `k`.
pub fn super_thin<R: Rng + ?Sized>(
    c: &Catalog,
    model: &IntensityModel,
    k: f64,
    region: &Region,
    lattice: &EvalLattice,
    rng: &mut R,
) -> Result<ResidualPointSet> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::Parameter(format!("super-thinning rate {k} must be finite and > 0")));
    }
    let bounds = rate_bounds(model, region, c.window(), c.events(), lattice)?;
    let mut points = thin_events(c, model, k, rng)?;
    points.extend(fill_gap(model, k, region, c.window(), c.m0(), rng)?);
    Ok(assemble(points, k, c, region, bounds))
}

/// A temporal rate known through its integral `Λ(t) = ∫_0^t λ̂(u) du`.
pub trait TemporalRate {
    fn cumulative(&self, t: f64) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantRate(pub f64);

impl TemporalRate for ConstantRate {
    fn cumulative(&self, t: f64) -> f64 {
        self.0 * t
    }
}

/// Step rate: `rates[i]` on `[breaks[i], breaks[i + 1])`, with `breaks[0] = 0`
/// and the last rate continuing past the final break.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseRate {
    breaks: Vec<f64>,
    rates: Vec<f64>,
}

impl PiecewiseRate {
    pub fn new(breaks: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        if breaks.len() != rates.len() || breaks.is_empty() {
            return Err(Error::Parameter("need one rate per break".into()));
        }
        if breaks[0] != 0.0 || breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parameter("breaks must start at 0 and increase".into()));
        }
        if rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::Parameter("rates must be finite and >= 0".into()));
        }
        Ok(Self { breaks, rates })
    }

    pub fn rate(&self, t: f64) -> f64 {
        let i = self.breaks.partition_point(|&b| b <= t).saturating_sub(1);
        self.rates[i]
    }
}

impl TemporalRate for PiecewiseRate {
    fn cumulative(&self, t: f64) -> f64 {
        let mut total = 0.0;
        for i in 0..self.breaks.len() {
            let lo = self.breaks[i];
            if t <= lo {
                break;
            }
            let hi = self.breaks.get(i + 1).copied().unwrap_or(f64::INFINITY).min(t);
            total += self.rates[i] * (hi - lo);
        }
        total
    }
}

/// Region-integrated rate `∫_S λ̂(s, t) ds` of an intensity model.
///
/// Hawkes models use their history: the background contributes `μ|S|` and
/// each parent its triggering mass inside the region (full-plane mass in
/// approximate mode). Other models are integrated on a quadrature lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionalRate {
    base: f64,
    params: Option<HawkesParams>,
    /// (time, spatial weight) per parent.
    parents: Vec<(f64, f64)>,
}

impl RegionalRate {
    pub fn new(
        model: &IntensityModel,
        region: &Region,
        mode: IntegralMode,
        resolution: usize,
    ) -> Result<Self> {
        match model {
            IntensityModel::Hawkes(h) => {
                let p = h.params;
                let parents = h
                    .history()
                    .events()
                    .par_iter()
                    .map(|e| {
                        let spatial = match mode {
                            IntegralMode::Approximate => p.spatial_mass(),
                            IntegralMode::Exact => {
                                triggering_mass_in_region(&p, e.lon, e.lat, region, 3600)
                            }
                        };
                        (e.time, p.k * (p.a * (e.mag - p.m0)).exp() * spatial)
                    })
                    .collect();
                Ok(Self {
                    base: p.mu * region.area_km2(),
                    params: Some(p),
                    parents,
                })
            }
            IntensityModel::Homogeneous { rate } => Ok(Self {
                base: rate * region.area_km2(),
                params: None,
                parents: Vec::new(),
            }),
            other => {
                let lattice = Lattice::new(region, resolution, resolution);
                if lattice.nodes.is_empty() {
                    return Err(Error::Region("quadrature lattice is empty".into()));
                }
                let values: Vec<f64> = lattice
                    .nodes
                    .par_iter()
                    .map(|n| other.intensity(n.lon, n.lat, 0.0) * n.area_km2)
                    .collect();
                Ok(Self {
                    base: values.iter().sum(),
                    params: None,
                    parents: Vec::new(),
                })
            }
        }
    }
}

impl TemporalRate for RegionalRate {
    fn cumulative(&self, t: f64) -> f64 {
        let mut total = self.base * t;
        if let Some(p) = &self.params {
            for &(tj, w) in &self.parents {
                if tj >= t {
                    break;
                }
                total += w * p.temporal_mass(t - tj);
            }
        }
        total
    }
}

/// Moves each event time `t_i` to `∫_0^{t_i} λ̂`.
pub fn rescale_times<T: TemporalRate + ?Sized>(c: &Catalog, rate: &T) -> Vec<f64> {
    c.events().iter().map(|e| rate.cumulative(e.time)).collect()
}

/// Gaps between consecutive rescaled times, the first measured from 0.
pub fn inter_arrivals(tau: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    tau.iter()
        .map(|&t| {
            let g = t - prev;
            prev = t;
            g
        })
        .collect()
}

/// KS distance and asymptotic p-value of gaps against Exp(1).
pub fn ks_exponential(gaps: &[f64]) -> (f64, f64) {
    let d = ks_distance(gaps, |x| if x <= 0.0 { 0.0 } else { -(-x).exp_m1() });
    (d, ks_pvalue(d, gaps.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualKind {
    Raw,
    Pearson,
    Deviance,
    Voronoi,
}

impl ResidualKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ResidualKind::Raw => "raw",
            ResidualKind::Pearson => "pearson",
            ResidualKind::Deviance => "deviance",
            ResidualKind::Voronoi => "voronoi",
        }
    }
}

/// Per-cell residual values with their cell polygons in (lon, lat).
/// Flagged cells carry `NaN` (zero integrated intensity) or a non-finite
/// deviance.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResidualSet {
    pub kind: ResidualKind,
    pub cells: Vec<Vec<(f64, f64)>>,
    pub values: Vec<f64>,
    pub flagged: Vec<bool>,
}

fn json_number(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "null".into()
    }
}

impl CellResidualSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `cell_id,kind,value,flag` with flag 1 for flagged cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cell_id,kind,value,flag\n");
        for (i, (v, f)) in self.values.iter().zip(&self.flagged).enumerate() {
            let _ = writeln!(out, "{i},{},{v},{}", self.kind.as_str(), u8::from(*f));
        }
        out
    }

    /// FeatureCollection of closed polygon rings; non-finite values become
    /// `null`.
    pub fn to_geojson(&self) -> String {
        let mut out = String::from("{\"type\":\"FeatureCollection\",\"features\":[");
        for (i, ring) in self.cells.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str("{\"type\":\"Feature\",\"geometry\":{\"type\":\"Polygon\",\"coordinates\":[[");
            let closed = ring.iter().chain(ring.first());
            for (k, (lon, lat)) in closed.enumerate() {
                if k > 0 {
                    out.push(',');
                }
                let _ = write!(out, "[{lon},{lat}]");
            }
            let _ = write!(
                out,
                "]]}},\"properties\":{{\"cell_id\":{i},\"kind\":\"{}\",\"value\":{},\"flag\":{}}}}}",
                self.kind.as_str(),
                json_number(self.values[i]),
                self.flagged[i]
            );
        }
        out.push_str("]}\n");
        out
    }
}

/// Raw and Pearson residuals with the counts and integrated intensities
/// they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelResiduals {
    pub raw: CellResidualSet,
    pub pearson: CellResidualSet,
    pub observed: Vec<u64>,
    pub expected: Vec<f64>,
}

fn pixel_sets(cells: Vec<Vec<(f64, f64)>>, observed: Vec<u64>, expected: Vec<f64>) -> PixelResiduals {
    let raw: Vec<f64> = observed
        .iter()
        .zip(&expected)
        .map(|(&n, &l)| n as f64 - l)
        .collect();
    let flagged: Vec<bool> = expected.iter().map(|&l| !(l > 0.0)).collect();
    let pearson = raw
        .iter()
        .zip(&expected)
        .map(|(&r, &l)| if l > 0.0 { r / l.sqrt() } else { f64::NAN })
        .collect();
    PixelResiduals {
        raw: CellResidualSet {
            kind: ResidualKind::Raw,
            cells: cells.clone(),
            values: raw,
            flagged: flagged.clone(),
        },
        pearson: CellResidualSet {
            kind: ResidualKind::Pearson,
            cells,
            values: pearson,
            flagged,
        },
        observed,
        expected,
    }
}

fn space_rings(grid: &BinGrid) -> Vec<Vec<(f64, f64)>> {
    grid.space_cells().iter().map(|c| c.ring().to_vec()).collect()
}

/// Sums per-bin values over magnitude bands for each space cell.
fn per_space<T: Copy + std::iter::Sum<T>>(grid: &BinGrid, values: &[T]) -> Vec<T> {
    let nb = grid.n_bands();
    values.chunks(nb).map(|c| c.iter().copied().sum()).collect()
}

/// Pixel residuals of a gridded forecast, one per space cell with magnitude
/// bands summed. Events outside the grid are ignored.
pub fn pixel_residuals_forecast(f: &GriddedForecast, c: &Catalog) -> PixelResiduals {
    let grid = f.grid();
    let counts = bin_counts(c, grid).counts;
    pixel_sets(
        space_rings(grid),
        per_space(grid, &counts),
        per_space(grid, f.rates()),
    )
}

/// Pixel residuals of an intensity model on the space cells of `grid`.
/// `Λ_i` uses a `resolution × resolution` midpoint rule in each cell over
/// `[0, window]`; every catalog event inside the cell counts.
pub fn pixel_residuals_model(
    model: &IntensityModel,
    c: &Catalog,
    grid: &BinGrid,
    window: f64,
    resolution: usize,
) -> PixelResiduals {
    let cells = grid.space_cells();
    let m = resolution.max(1);
    let expected: Vec<f64> = cells
        .par_iter()
        .map(|cell| {
            let dlon = (cell.lon_max - cell.lon_min) / m as f64;
            let dlat = (cell.lat_max - cell.lat_min) / m as f64;
            let mut total = 0.0;
            for j in 0..m {
                let lat0 = cell.lat_min + j as f64 * dlat;
                let area = crate::geo::rect_area_km2(0.0, dlon, lat0, lat0 + dlat);
                for i in 0..m {
                    let lon = cell.lon_min + (i as f64 + 0.5) * dlon;
                    total += area * model.time_integrated(lon, lat0 + 0.5 * dlat, 0.0, window);
                }
            }
            total
        })
        .collect();
    let mut observed = vec![0u64; cells.len()];
    for e in c.events() {
        if let Some(i) = grid.locate_space(e.lon, e.lat) {
            observed[i] += 1;
        }
    }
    pixel_sets(space_rings(grid), observed, expected)
}

/// Per-cell log-likelihood differences `L_A − L_B`, summed over magnitude
/// bands. The values add up to the R-test statistic.
pub fn deviance_residuals(
    a: &GriddedForecast,
    b: &GriddedForecast,
    c: &Catalog,
) -> Result<CellResidualSet> {
    ensure_same_grid(a, b)?;
    let grid = a.grid();
    let counts = bin_counts(c, grid).counts;
    let per_bin: Vec<f64> = a
        .rates()
        .iter()
        .zip(b.rates())
        .zip(&counts)
        .map(|((&ra, &rb), &n)| bin_ll_difference(ra, rb, n))
        .collect();
    let values = per_space(grid, &per_bin);
    let flagged = values.iter().map(|v| !v.is_finite()).collect();
    Ok(CellResidualSet {
        kind: ResidualKind::Deviance,
        cells: space_rings(grid),
        values,
        flagged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiResiduals {
    pub tessellation: VoronoiTessellation,
    pub residuals: CellResidualSet,
    /// `Λ_i = ∫_{A_i} ∫_0^T λ̂`.
    pub integrated: Vec<f64>,
    pub resolution: usize,
}

/// Voronoi residuals `(1 − Λ_i)/√Λ_i` on the tessellation of the catalog's
/// epicenters. `Λ_i` is the cell's exact area times the mean time-integrated
/// intensity over the lattice nodes (`resolution²` over the region's bounding
/// box) nearest to its generator; a cell too small to own a node uses the
/// value at its vertex centroid.
pub fn voronoi_residuals(
    model: &IntensityModel,
    c: &Catalog,
    region: &Region,
    resolution: usize,
) -> Result<VoronoiResiduals> {
    let sites: Vec<(f64, f64)> = c.events().iter().map(|e| (e.lon, e.lat)).collect();
    let tessellation = voronoi_tessellation(&sites, region)?;
    let lattice = Lattice::new(region, resolution, resolution);
    let nodes: Vec<(f64, f64)> = lattice.nodes.iter().map(|n| (n.lon, n.lat)).collect();
    let owner = tessellation.assign(&nodes);
    let window = c.window();
    let mass: Vec<f64> = lattice
        .nodes
        .par_iter()
        .map(|n| n.area_km2 * model.time_integrated(n.lon, n.lat, 0.0, window))
        .collect();
    let mut node_mass = vec![0.0; sites.len()];
    let mut node_area = vec![0.0; sites.len()];
    for ((o, m), n) in owner.iter().zip(&mass).zip(&lattice.nodes) {
        node_mass[*o] += m;
        node_area[*o] += n.area_km2;
    }
    let integrated: Vec<f64> = (0..sites.len())
        .map(|i| {
            let area = tessellation.areas_km2()[i];
            if node_area[i] > 0.0 {
                area * node_mass[i] / node_area[i]
            } else {
                let ring = &tessellation.cells()[i];
                if ring.is_empty() {
                    return 0.0;
                }
                let k = ring.len() as f64;
                let lon = ring.iter().map(|p| p.0).sum::<f64>() / k;
                let lat = ring.iter().map(|p| p.1).sum::<f64>() / k;
                area * model.time_integrated(lon, lat, 0.0, window)
            }
        })
        .collect();
    let values = integrated
        .iter()
        .map(|&l| if l > 0.0 { (1.0 - l) / l.sqrt() } else { f64::NAN })
        .collect();
    let flagged = integrated.iter().map(|&l| !(l > 0.0)).collect();
    Ok(VoronoiResiduals {
        residuals: CellResidualSet {
            kind: ResidualKind::Voronoi,
            cells: tessellation.cells().to_vec(),
            values,
            flagged,
        },
        tessellation,
        integrated,
        resolution,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HomogeneityMethod {
    Quadrat,
    KFunction,
}

impl HomogeneityMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            HomogeneityMethod::Quadrat => "quadrat",
            HomogeneityMethod::KFunction => "kfunction",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneityResult {
    pub method: HomogeneityMethod,
    pub n_points: usize,
    pub statistic: f64,
    /// `None` when the test does not apply.
    pub p_value: Option<f64>,
    /// Chi-square degrees of freedom (quadrat) or simulation count (K).
    pub df: usize,
    pub note: Option<String>,
}

pub const QUADRAT_MIN_POINTS: usize = 10;
pub const K_SIMULATIONS: usize = 199;
pub const K_LAGS: usize = 5;

fn not_applicable(method: HomogeneityMethod, n: usize, why: String) -> HomogeneityResult {
    HomogeneityResult {
        method,
        n_points: n,
        statistic: f64::NAN,
        p_value: None,
        df: 0,
        note: Some(why),
    }
}

/// Tests whether a residual point set is spatially homogeneous.
///
/// Quadrat: an m×m split of the bounding box with `m = ⌊√(n/5)⌋` (2×1 when
/// m = 1), expected counts proportional to each quadrat's area inside the
/// region, chi-square with (quadrats − 1) df.
///
/// K-function: `max_h |L(h) − L̄(h)|` at 5 lags up to a quarter of `√|S|`,
/// ranked against 199 uniform samples of the same size. L̄ averages the
/// observed and simulated curves, so no edge correction is needed.
pub fn homogeneity_test<R: Rng + ?Sized>(
    ps: &ResidualPointSet,
    method: HomogeneityMethod,
    rng: &mut R,
) -> Result<HomogeneityResult> {
    let pts = ps.locations();
    match method {
        HomogeneityMethod::Quadrat => Ok(quadrat_test(&pts, &ps.region)),
        HomogeneityMethod::KFunction => Ok(k_envelope_test(&pts, &ps.region, rng.next_u64())),
    }
}

/// Chi-square quadrat test on arbitrary points.
pub fn quadrat_test(pts: &[(f64, f64)], region: &Region) -> HomogeneityResult {
    let n = pts.len();
    if n < QUADRAT_MIN_POINTS {
        return not_applicable(
            HomogeneityMethod::Quadrat,
            n,
            format!("{n} points; quadrat test needs {QUADRAT_MIN_POINTS}"),
        );
    }
    let m = ((n as f64 / 5.0).sqrt().floor() as usize).max(1);
    let (mx, my) = if m == 1 { (2, 1) } else { (m, m) };
    let b = region.bbox();
    let dx = (b.lon_max - b.lon_min) / mx as f64;
    let dy = (b.lat_max - b.lat_min) / my as f64;
    let mut areas = Vec::with_capacity(mx * my);
    for j in 0..my {
        for i in 0..mx {
            let (x0, y0) = (b.lon_min + i as f64 * dx, b.lat_min + j as f64 * dy);
            let rect = [(x0, y0), (x0 + dx, y0), (x0 + dx, y0 + dy), (x0, y0 + dy)];
            let piece = voronoi::clip_to_convex(region.ring(), &rect);
            areas.push(if piece.len() >= 3 {
                polygon_area_km2(&piece)
            } else {
                0.0
            });
        }
    }
    let mut counts = vec![0usize; mx * my];
    for &(lon, lat) in pts {
        let i = (((lon - b.lon_min) / dx).floor().max(0.0) as usize).min(mx - 1);
        let j = (((lat - b.lat_min) / dy).floor().max(0.0) as usize).min(my - 1);
        counts[j * mx + i] += 1;
    }
    let total: f64 = areas.iter().sum();
    let mut stat = 0.0;
    let mut used = 0usize;
    for (&a, &o) in areas.iter().zip(&counts) {
        if a <= 1e-12 * total {
            continue;
        }
        let e = n as f64 * a / total;
        stat += (o as f64 - e).powi(2) / e;
        used += 1;
    }
    let df = used.saturating_sub(1).max(1);
    HomogeneityResult {
        method: HomogeneityMethod::Quadrat,
        n_points: n,
        statistic: stat,
        p_value: Some(chi_square_sf(stat, df as f64)),
        df,
        note: None,
    }
}

/// Unweighted `L(h) = √(K(h)/π)` with `K(h) = |S| · #{ordered pairs ≤ h} / (n(n−1))`.
fn l_curve(xy: &[(f64, f64)], area: f64, lags: &[f64]) -> Vec<f64> {
    let n = xy.len();
    let mut pairs = vec![0u64; lags.len()];
    let h2: Vec<f64> = lags.iter().map(|h| h * h).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            let d2 = (xy[i].0 - xy[j].0).powi(2) + (xy[i].1 - xy[j].1).powi(2);
            for (k, &lim) in h2.iter().enumerate() {
                if d2 <= lim {
                    pairs[k] += 1;
                }
            }
        }
    }
    let norm = area / (n as f64 * (n as f64 - 1.0));
    pairs
        .iter()
        .map(|&p| (2.0 * p as f64 * norm / std::f64::consts::PI).sqrt())
        .collect()
}

/// K-function envelope test on arbitrary points with its own seed.
pub fn k_envelope_test(pts: &[(f64, f64)], region: &Region, seed: u64) -> HomogeneityResult {
    let n = pts.len();
    if n < 2 {
        return not_applicable(
            HomogeneityMethod::KFunction,
            n,
            format!("{n} points; K-function needs 2"),
        );
    }
    let proj = region.projection();
    let area = region.area_km2();
    let h_max = 0.25 * area.sqrt();
    let lags: Vec<f64> = (1..=K_LAGS).map(|k| k as f64 * h_max / K_LAGS as f64).collect();
    let to_xy = |p: &[(f64, f64)]| -> Vec<(f64, f64)> {
        p.iter().map(|&(lon, lat)| proj.forward(lon, lat)).collect()
    };
    let observed = l_curve(&to_xy(pts), area, &lags);
    let sims: Vec<Vec<f64>> = replicate(K_SIMULATIONS, seed, |rng| {
        let sample: Vec<(f64, f64)> = (0..n).map(|_| uniform_point(region, rng)).collect();
        l_curve(&to_xy(&sample), area, &lags)
    });
    let total = (K_SIMULATIONS + 1) as f64;
    let centre: Vec<f64> = (0..K_LAGS)
        .map(|k| (observed[k] + sims.iter().map(|s| s[k]).sum::<f64>()) / total)
        .collect();
    let dev = |curve: &[f64]| {
        curve
            .iter()
            .zip(&centre)
            .map(|(l, c)| (l - c).abs())
            .fold(0.0, f64::max)
    };
    let t_obs = dev(&observed);
    let at_least = sims.iter().filter(|s| dev(s) >= t_obs).count();
    HomogeneityResult {
        method: HomogeneityMethod::KFunction,
        n_points: n,
        statistic: t_obs,
        p_value: Some((1 + at_least) as f64 / total),
        df: K_SIMULATIONS,
        note: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consistency::{paradox_fixture, r_test, TestConfig};
    use crate::grid::MagBand;
    use crate::intensity::PiecewiseDensity;
    use crate::simulate::{simulate_inhomogeneous, simulate_poisson_grid, RngStream};
    use crate::stats::{mean, variance};

    fn unit_region() -> Region {
        Region::rectangle(0.0, 1.0, 0.0, 1.0).unwrap()
    }

    fn small_lattice() -> EvalLattice {
        EvalLattice { nx: 20, ny: 20, nt: 5 }
    }

    /// Density 1 on the west half and 2 on the east half, per km² per day.
    fn two_level(region: &Region) -> IntensityModel {
        let b = region.bbox();
        let mid = 0.5 * (b.lon_min + b.lon_max);
        IntensityModel::Piecewise(PiecewiseDensity::new(
            vec![
                crate::grid::SpaceCell::new(b.lon_min, mid, b.lat_min, b.lat_max),
                crate::grid::SpaceCell::new(mid, b.lon_max, b.lat_min, b.lat_max),
            ],
            vec![1e-3, 2e-3],
        ))
    }

    #[test]
    fn constant_model_keeps_every_point() {
        let r = unit_region();
        let mut rng = RngStream::new(1, 0);
        let model = IntensityModel::Homogeneous { rate: 1e-3 };
        let c = simulate_homogeneous(1e-3, &r, 100.0, 3.0, &mut rng).unwrap();
        let t = thin_residuals(&c, &model, &r, &small_lattice(), &mut rng).unwrap();
        assert_eq!(t.len(), c.len());
        assert!(t.audit(&c));
        let s = superpose_residuals(&c, &model, &r, &small_lattice(), &mut rng).unwrap();
        assert_eq!(s.count(Origin::Superposed), 0);
        assert_eq!(s.nominal_rate, 1e-3);
    }

    #[test]
    fn thinning_at_twice_the_bound_keeps_half() {
        // Events all in the east half, where λ̂ = 2b.
        let r = unit_region();
        let model = two_level(&r);
        let events: Vec<Event> = (0..200)
            .map(|i| Event::new(i as f64 * 0.5, 0.75, 0.001 + i as f64 * 0.004, 3.0))
            .collect();
        let c = Catalog::new(events, 100.0, 3.0).unwrap();
        let kept: Vec<f64> = replicate(200, 9, |rng| {
            let t = thin_residuals(&c, &model, &r, &small_lattice(), rng).unwrap();
            t.len() as f64 / 200.0
        });
        // Binomial(200·200, ½): sd of the pooled fraction is 1/(2·200).
        assert!((mean(&kept) - 0.5).abs() < 3.0 / 400.0, "{}", mean(&kept));
    }

    #[test]
    fn superposition_fills_to_the_sup() {
        let r = unit_region();
        let model = two_level(&r);
        let area = r.area_km2();
        let added: Vec<f64> = replicate(300, 4, |rng| {
            let c = simulate_inhomogeneous(&model, 2e-3, &r, 50.0, 3.0, rng).unwrap();
            let s = superpose_residuals(&c, &model, &r, &small_lattice(), rng).unwrap();
            assert!(s.audit(&c));
            s.count(Origin::Superposed) as f64
        });
        // Rate 1e-3 on the west half only.
        let expect = 1e-3 * 0.5 * area * 50.0;
        let sd = (expect / 300.0).sqrt();
        assert!((mean(&added) - expect).abs() < 3.0 * sd, "{} vs {expect}", mean(&added));
    }

    #[test]
    fn super_thin_extremes() {
        let r = unit_region();
        let model = two_level(&r);
        let mut rng = RngStream::new(3, 0);
        let c = simulate_inhomogeneous(&model, 2e-3, &r, 50.0, 3.0, &mut rng).unwrap();
        let hi = super_thin(&c, &model, 2e-3, &r, &small_lattice(), &mut rng).unwrap();
        assert_eq!(hi.count(Origin::Retained), c.len());
        let lo = super_thin(&c, &model, 1e-3, &r, &small_lattice(), &mut rng).unwrap();
        assert_eq!(lo.count(Origin::Superposed), 0);
        assert!(super_thin(&c, &model, 0.0, &r, &small_lattice(), &mut rng).is_err());
        assert!(lo.to_csv().contains("time,lon,lat,mag,origin\n"));
    }

    #[test]
    fn bounds_of_piecewise_model_are_exact() {
        let r = unit_region();
        let b = rate_bounds(&two_level(&r), &r, 10.0, &[], &small_lattice()).unwrap();
        assert_eq!((b.inf, b.sup), (1e-3, 2e-3));
        assert_eq!(b.lattice.nt, 1);
    }

    #[test]
    fn rescaling_examples() {
        let c = Catalog::new(vec![Event::new(3.0, 0.5, 0.5, 3.0)], 10.0, 3.0).unwrap();
        assert_eq!(rescale_times(&c, &ConstantRate(2.0)), vec![6.0]);
        assert_eq!(rescale_times(&c, &ConstantRate(1.0)), vec![3.0]);
        let pw = PiecewiseRate::new(vec![0.0, 2.0], vec![1.0, 3.0]).unwrap();
        assert_eq!(rescale_times(&c, &pw), vec![5.0]);
        assert_eq!(pw.rate(2.5), 3.0);
        assert_eq!(inter_arrivals(&[1.0, 3.0, 3.5]), vec![1.0, 2.0, 0.5]);
    }

    #[test]
    fn regional_rate_of_hawkes_model_adds_parent_masses() {
        let r = Region::rectangle(0.0, 2.0, 0.0, 2.0).unwrap();
        let p = HawkesParams {
            mu: 1e-4,
            k: 0.01,
            c: 0.1,
            p: 1.5,
            a: 1.0,
            d: 1.0,
            q: 2.0,
            m0: 3.0,
        };
        let hist = Catalog::new(vec![Event::new(1.0, 1.0, 1.0, 4.0)], 10.0, 3.0).unwrap();
        let model = IntensityModel::Hawkes(crate::intensity::HawkesModel::new(p, None, hist).unwrap());
        let rr = RegionalRate::new(&model, &r, IntegralMode::Approximate, 50).unwrap();
        let want = p.mu * r.area_km2() * 5.0
            + p.k * 1f64.exp() * p.spatial_mass() * p.temporal_mass(4.0);
        assert!((rr.cumulative(5.0) - want).abs() < 1e-12 * want);
        assert_eq!(rr.cumulative(0.5), p.mu * r.area_km2() * 0.5);
    }

    #[test]
    fn pixel_examples() {
        let grid = BinGrid::regular((0.0, 2.0), (0.0, 1.0), 2, 1, vec![MagBand::new(3.0, 9.0)]).unwrap();
        let f = GriddedForecast::new(grid, vec![4.0, 1.0], 1.0).unwrap();
        let events: Vec<Event> = (0..4).map(|i| Event::new(0.1 * i as f64, 0.5, 0.5, 4.0)).collect();
        let c = Catalog::new(events, 1.0, 3.0).unwrap();
        let px = pixel_residuals_forecast(&f, &c);
        assert_eq!(px.raw.values, vec![0.0, -1.0]);
        assert_eq!(px.pearson.values, vec![0.0, -1.0]);
        let zero = GriddedForecast::new(f.grid().clone(), vec![4.0, 0.0], 1.0).unwrap();
        let px = pixel_residuals_forecast(&zero, &c);
        assert!(px.pearson.flagged[1] && px.pearson.values[1].is_nan());
        assert!(px.raw.to_csv().starts_with("cell_id,kind,value,flag\n0,raw,0,0\n"));
    }

    #[test]
    fn pixel_raw_mean_is_poisson_centred() {
        let grid = BinGrid::regular((0.0, 4.0), (0.0, 4.0), 4, 4, vec![MagBand::new(3.0, 9.0)]).unwrap();
        let rates: Vec<f64> = (0..16).map(|i| 0.5 + 0.25 * i as f64).collect();
        let total: f64 = rates.iter().sum();
        let f = GriddedForecast::new(grid, rates, 1.0).unwrap();
        let means: Vec<f64> = replicate(400, 2, |rng| {
            let c = simulate_poisson_grid(&f, rng);
            mean(&pixel_residuals_forecast(&f, &c).raw.values)
        });
        // Mean over 16 cells of N_i − Λ_i has variance Σ Λ_i / 16².
        let sd = (total / 256.0 / 400.0).sqrt();
        assert!(mean(&means).abs() < 3.0 * sd, "{}", mean(&means));
    }

    #[test]
    fn model_pixels_integrate_constant_rate() {
        let grid = BinGrid::regular((0.0, 2.0), (0.0, 2.0), 2, 2, vec![MagBand::new(3.0, 9.0)]).unwrap();
        let c = Catalog::empty(10.0, 3.0);
        let px = pixel_residuals_model(&IntensityModel::Homogeneous { rate: 1e-3 }, &c, &grid, 10.0, 8);
        for (cell, l) in grid.space_cells().iter().zip(&px.expected) {
            let want = 1e-3 * cell.area_km2() * 10.0;
            assert!((l - want).abs() < 1e-9 * want);
        }
    }

    #[test]
    fn deviance_identities() {
        let (a, b, counts) = paradox_fixture();
        let grid = a.grid();
        let mut events = Vec::new();
        for (i, &n) in counts.iter().enumerate() {
            let (lon, lat) = grid.bin(i).space.center();
            for k in 0..n {
                events.push(Event::new(0.1 * (k + 1) as f64, lon, lat, grid.bin(i).band.min));
            }
        }
        let c = Catalog::new(events, 1.0, grid.magnitude_range().0).unwrap();
        let ab = deviance_residuals(&a, &b, &c).unwrap();
        let ba = deviance_residuals(&b, &a, &c).unwrap();
        for (x, y) in ab.values.iter().zip(&ba.values) {
            assert_eq!(*x, -*y);
        }
        let r = r_test(&a, &b, &counts, &TestConfig { n_sim: 10, ..Default::default() }).unwrap();
        assert!((ab.values.iter().sum::<f64>() - r.statistic).abs() < 1e-10);
        // The empty cell pays only the rate difference.
        assert!((ab.values[1] - (b.rates()[1] - a.rates()[1])).abs() < 1e-15);
        assert!(deviance_residuals(&a, &a, &c).unwrap().values.iter().all(|v| *v == 0.0));
        let other = GriddedForecast::new(
            BinGrid::regular((0.0, 1.0), (0.0, 1.0), 1, 1, vec![MagBand::new(4.0, 9.0)]).unwrap(),
            vec![1.0],
            1.0,
        )
        .unwrap();
        assert!(deviance_residuals(&a, &other, &c).is_err());
    }

    #[test]
    fn voronoi_residual_examples() {
        let r = Region::rectangle(0.0, 2.0, 0.0, 1.0).unwrap();
        let c = Catalog::new(
            vec![Event::new(0.0, 0.5, 0.5, 3.0), Event::new(1.0, 1.5, 0.5, 3.0)],
            1.0,
            3.0,
        )
        .unwrap();
        // Rate so that each half integrates to exactly 4.
        let rate = 8.0 / r.area_km2();
        let v = voronoi_residuals(&IntensityModel::Homogeneous { rate }, &c, &r, 40).unwrap();
        for (l, x) in v.integrated.iter().zip(&v.residuals.values) {
            assert!((l - 4.0).abs() < 1e-9, "{l}");
            assert!((x + 1.5).abs() < 1e-9);
        }
        let geo = v.residuals.to_geojson();
        assert!(geo.starts_with("{\"type\":\"FeatureCollection\""));
        assert_eq!(geo.matches("\"Feature\"").count(), 2);
    }

    #[test]
    fn voronoi_residuals_under_true_homogeneous_model() {
        let r = Region::rectangle(0.0, 1.0, 0.0, 1.0).unwrap();
        let rate = 100.0 / r.area_km2();
        let stats: Vec<(f64, f64)> = replicate(40, 5, |rng| {
            let c = simulate_homogeneous(rate, &r, 1.0, 3.0, rng).unwrap();
            let v = voronoi_residuals(&IntensityModel::Homogeneous { rate }, &c, &r, 100).unwrap();
            let mut vals = v.residuals.values.clone();
            vals.sort_by(f64::total_cmp);
            (mean(&v.integrated), vals[vals.len() / 2])
        });
        let lam: Vec<f64> = stats.iter().map(|s| s.0).collect();
        let med: Vec<f64> = stats.iter().map(|s| s.1).collect();
        let sd = (variance(&lam) / lam.len() as f64).sqrt();
        // Mean cell integral is |S|·rate/N, whose expectation is slightly
        // above 1 (Jensen); allow 3σ around 1 plus the 1/N bias.
        assert!((mean(&lam) - 1.0).abs() < 3.0 * sd + 0.02, "{}", mean(&lam));
        assert!(mean(&med).abs() < 0.2, "{}", mean(&med));
    }

    #[test]
    fn quadrat_small_sample_is_not_applicable() {
        let r = unit_region();
        let pts = vec![(0.5, 0.5); 5];
        let res = quadrat_test(&pts, &r);
        assert!(res.p_value.is_none());
    }

    #[test]
    fn homogeneity_null_is_roughly_uniform_and_clustering_is_detected() {
        let r = unit_region();
        let ps: Vec<f64> = replicate(200, 11, |rng| {
            let pts: Vec<(f64, f64)> = (0..200).map(|_| uniform_point(&r, rng)).collect();
            quadrat_test(&pts, &r).p_value.unwrap()
        });
        assert!(crate::stats::ks_uniform(&ps) < 0.1);
        let mut rng = RngStream::new(12, 0);
        let mut pts = Vec::new();
        for _ in 0..20 {
            let (x, y) = uniform_point(&r, &mut rng);
            for _ in 0..5 {
                let dx: f64 = rng.random::<f64>() * 0.02;
                let dy: f64 = rng.random::<f64>() * 0.02;
                pts.push(((x + dx).min(1.0), (y + dy).min(1.0)));
            }
        }
        assert!(quadrat_test(&pts, &r).p_value.unwrap() < 0.05);
        assert!(k_envelope_test(&pts, &r, 3).p_value.unwrap() < 0.05);
    }
}
