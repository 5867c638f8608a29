//! Planar Voronoi cells built in the region's km projection and clipped to
//! the region polygon.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geo::{polygon_area_km2, Projection, Region};

type Pt = (f64, f64);

/// Offset applied to the k-th repeat of a generator, in degrees.
const DUPLICATE_STEP_DEG: f64 = 1e-9;
const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiTessellation {
    generators: Vec<Pt>,
    cells: Vec<Vec<Pt>>,
    areas: Vec<f64>,
    region_area: f64,
    projection: Projection,
}

impl VoronoiTessellation {
    /// Generators after duplicate perturbation, in input order.
    pub fn generators(&self) -> &[Pt] {
        &self.generators
    }

    /// Cell rings in (lon, lat). A ring may contain zero-width bridges where
    /// the region is non-convex and the cell meets it in several pieces.
    pub fn cells(&self) -> &[Vec<Pt>] {
        &self.cells
    }

    pub fn areas_km2(&self) -> &[f64] {
        &self.areas
    }

    pub fn region_area_km2(&self) -> f64 {
        self.region_area
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    /// `|Σ areas − region area| / region area`.
    pub fn partition_error(&self) -> f64 {
        let total: f64 = self.areas.iter().sum();
        (total - self.region_area).abs() / self.region_area
    }

    /// Index of the generator nearest to a point in the projected plane,
    /// ties broken by lower index. This is the cell containing the point.
    pub fn nearest(&self, lon: f64, lat: f64) -> usize {
        let p = self.projection.forward(lon, lat);
        let mut best = (f64::INFINITY, 0);
        for (i, &(glon, glat)) in self.generators.iter().enumerate() {
            let g = self.projection.forward(glon, glat);
            let d = dist2(p, g);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// [`nearest`](Self::nearest) for many points, using an x-sorted scan.
    pub fn assign(&self, points: &[Pt]) -> Vec<usize> {
        let sites: Vec<Pt> = self
            .generators
            .iter()
            .map(|&(lon, lat)| self.projection.forward(lon, lat))
            .collect();
        let mut order: Vec<usize> = (0..sites.len()).collect();
        order.sort_by(|&a, &b| sites[a].0.total_cmp(&sites[b].0).then(a.cmp(&b)));
        let xs: Vec<f64> = order.iter().map(|&i| sites[i].0).collect();
        points
            .iter()
            .map(|&(lon, lat)| {
                let p = self.projection.forward(lon, lat);
                let start = xs.partition_point(|&x| x < p.0);
                let mut best = (f64::INFINITY, usize::MAX);
                let offer = |best: &mut (f64, usize), r: usize| {
                    let i = order[r];
                    let d = dist2(p, sites[i]);
                    if d < best.0 || (d == best.0 && i < best.1) {
                        *best = (d, i);
                    }
                };
                let mut r = start;
                while r < xs.len() && (xs[r] - p.0).powi(2) <= best.0 {
                    offer(&mut best, r);
                    r += 1;
                }
                let mut r = start;
                while r > 0 && (xs[r - 1] - p.0).powi(2) <= best.0 {
                    offer(&mut best, r - 1);
                    r -= 1;
                }
                best.1
            })
            .collect()
    }
}

#[inline]
fn dist2(a: Pt, b: Pt) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

/// Sutherland–Hodgman against the half-plane `n·p ≤ c`. The subject may be
/// non-convex; the output then keeps the correct area but can include
/// degenerate edges along the cutting line.
pub(crate) fn clip_half_plane(poly: &[Pt], n: Pt, c: f64) -> Vec<Pt> {
    let len = poly.len();
    let mut out = Vec::with_capacity(len + 2);
    for k in 0..len {
        let cur = poly[k];
        let nxt = poly[(k + 1) % len];
        let dc = n.0 * cur.0 + n.1 * cur.1 - c;
        let dn = n.0 * nxt.0 + n.1 * nxt.1 - c;
        if dc <= 0.0 {
            out.push(cur);
        }
        if (dc < 0.0 && dn > 0.0) || (dc > 0.0 && dn < 0.0) {
            let t = dc / (dc - dn);
            out.push((cur.0 + t * (nxt.0 - cur.0), cur.1 + t * (nxt.1 - cur.1)));
        }
    }
    out
}

/// Clips `subject` to the counter-clockwise convex polygon `clip`.
pub(crate) fn clip_to_convex(subject: &[Pt], clip: &[Pt]) -> Vec<Pt> {
    let mut poly = subject.to_vec();
    let m = clip.len();
    for i in 0..m {
        if poly.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % m];
        let e = (b.0 - a.0, b.1 - a.1);
        let n = (e.1, -e.0);
        poly = clip_half_plane(&poly, n, n.0 * a.0 + n.1 * a.1);
    }
    poly
}

/// Moves the k-th repeat of a site by `k · 1e-9` degrees along a golden-angle
/// direction, so the result depends only on input order.
fn perturb_duplicates(points: &[Pt]) -> Result<Vec<Pt>> {
    if points.len() >= 2 && points.iter().all(|&p| p == points[0]) {
        return Err(Error::Geometry(format!(
            "all {} generators coincide",
            points.len()
        )));
    }
    let mut seen: HashMap<(u64, u64), usize> = HashMap::new();
    Ok(points
        .iter()
        .map(|&(lon, lat)| {
            let key = ((lon + 0.0).to_bits(), (lat + 0.0).to_bits());
            let k = seen.entry(key).or_insert(0);
            let out = if *k == 0 {
                (lon, lat)
            } else {
                let step = DUPLICATE_STEP_DEG * *k as f64;
                let angle = GOLDEN_ANGLE * *k as f64;
                (lon + step * angle.cos(), lat + step * angle.sin())
            };
            *k += 1;
            out
        })
        .collect())
}

/// Voronoi diagram of `points` (lon, lat) restricted to `region`.
///
/// Each cell is the region polygon cut by the bisector half-planes of its
/// generator. Candidates are scanned in x order and the scan stops once the
/// x gap exceeds twice the current cell radius.
pub fn voronoi_tessellation(points: &[Pt], region: &Region) -> Result<VoronoiTessellation> {
    if points.is_empty() {
        return Err(Error::Geometry("need at least one generator".into()));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Geometry("non-finite generator".into()));
    }
    let generators = perturb_duplicates(points)?;
    let projection = region.projection();
    let sites: Vec<Pt> = generators
        .iter()
        .map(|&(lon, lat)| projection.forward(lon, lat))
        .collect();
    let ring: Vec<Pt> = region
        .ring()
        .iter()
        .map(|&(lon, lat)| projection.forward(lon, lat))
        .collect();

    let mut order: Vec<usize> = (0..sites.len()).collect();
    order.sort_by(|&a, &b| sites[a].0.total_cmp(&sites[b].0).then(a.cmp(&b)));
    let mut rank = vec![0; sites.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }

    let mut cells = Vec::with_capacity(sites.len());
    let mut areas = Vec::with_capacity(sites.len());
    for i in 0..sites.len() {
        let s = sites[i];
        let mut poly = ring.clone();
        let radius2 = |poly: &[Pt]| poly.iter().map(|&v| dist2(v, s)).fold(0.0, f64::max);
        let mut r2 = radius2(&poly);
        // Right then left of the site in x order.
        for dir in [1isize, -1] {
            let mut pos = rank[i] as isize + dir;
            while pos >= 0 && (pos as usize) < order.len() && !poly.is_empty() {
                let j = order[pos as usize];
                let t = sites[j];
                let dx = t.0 - s.0;
                if dx * dx > 4.0 * r2 {
                    break;
                }
                let n = (t.0 - s.0, t.1 - s.1);
                let mid = (0.5 * (s.0 + t.0), 0.5 * (s.1 + t.1));
                if dist2(s, t) <= 4.0 * r2 {
                    poly = clip_half_plane(&poly, n, n.0 * mid.0 + n.1 * mid.1);
                    r2 = radius2(&poly);
                }
                pos += dir;
            }
        }
        let lonlat: Vec<Pt> = poly
            .iter()
            .map(|&(x, y)| projection.inverse(x, y))
            .collect();
        let area = if lonlat.len() >= 3 {
            polygon_area_km2(&lonlat)
        } else {
            0.0
        };
        areas.push(area);
        cells.push(lonlat);
    }
    Ok(VoronoiTessellation {
        generators,
        cells,
        areas,
        region_area: region.area_km2(),
        projection,
    })
}
