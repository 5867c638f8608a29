//! Planar geometry on longitude/latitude coordinates.
//!
//! Distances use the equirectangular approximation: one degree of latitude is
//! [`KM_PER_DEGREE`] km and one degree of longitude is `KM_PER_DEGREE * cos(lat)`
//! km, with `lat` the mean latitude of the two points. Areas use the matching
//! area element `KM_PER_DEGREE² · cos(lat) · dlon · dlat`, which integrates in
//! closed form over any polygon with straight edges in (lon, lat); see
//! [`polygon_area_km2`].

use crate::error::{Error, Result};

pub const KM_PER_DEGREE: f64 = 111.32;

pub(crate) const DEG: f64 = std::f64::consts::PI / 180.0;

/// Squared equirectangular distance in km².
#[inline]
pub fn distance2_km(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    let mean_lat = 0.5 * (lat1 + lat2) * DEG;
    let dx = (lon2 - lon1) * KM_PER_DEGREE * mean_lat.cos();
    let dy = (lat2 - lat1) * KM_PER_DEGREE;
    dx * dx + dy * dy
}

#[inline]
pub fn distance_km(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    distance2_km(lon1, lat1, lon2, lat2).sqrt()
}

/// Moves a point by a planar displacement given in km.
pub fn offset_km(lon: f64, lat: f64, dx_km: f64, dy_km: f64) -> (f64, f64) {
    let new_lat = lat + dy_km / KM_PER_DEGREE;
    // Scale longitude at the midpoint latitude so that `distance_km` of the
    // result reproduces the displacement length exactly.
    let mid = 0.5 * (lat + new_lat) * DEG;
    let new_lon = lon + dx_km / (KM_PER_DEGREE * mid.cos());
    (new_lon, new_lat)
}

#[inline]
fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Signed area (km²) of a ring of (lon, lat) vertices; positive when
/// counter-clockwise. The ring is closed implicitly.
///
/// Uses Green's theorem on the area element `R² cos(lat) dlon dlat`, which is
/// exact for edges that are straight in (lon, lat) and additive over any
/// partition of the ring.
pub fn signed_polygon_area_km2(ring: &[(f64, f64)]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let (x1, y1) = ring[i];
        let (x2, y2) = ring[(i + 1) % n];
        let mid = 0.5 * (y1 + y2) * DEG;
        let half = 0.5 * (y2 - y1) * DEG;
        acc += (x2 - x1) * mid.sin() * sinc(half);
    }
    -acc * KM_PER_DEGREE * KM_PER_DEGREE / DEG
}

pub fn polygon_area_km2(ring: &[(f64, f64)]) -> f64 {
    signed_polygon_area_km2(ring).abs()
}

/// Exact area of a lon/lat rectangle in km².
pub fn rect_area_km2(lon_min: f64, lon_max: f64, lat_min: f64, lat_max: f64) -> f64 {
    KM_PER_DEGREE * KM_PER_DEGREE * (lon_max - lon_min) * ((lat_max * DEG).sin() - (lat_min * DEG).sin())
        / DEG
}

/// Affine map from (lon, lat) to a local km plane.
///
/// Straight edges map to straight edges, so polygons built in the plane map
/// back to polygons in (lon, lat) without distortion of topology.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub lon0: f64,
    pub lat0: f64,
    kx: f64,
    ky: f64,
}

impl Projection {
    pub fn centered(lon0: f64, lat0: f64) -> Self {
        Self {
            lon0,
            lat0,
            kx: KM_PER_DEGREE * (lat0 * DEG).cos(),
            ky: KM_PER_DEGREE,
        }
    }

    #[inline]
    pub fn forward(&self, lon: f64, lat: f64) -> (f64, f64) {
        ((lon - self.lon0) * self.kx, (lat - self.lat0) * self.ky)
    }

    #[inline]
    pub fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        (self.lon0 + x / self.kx, self.lat0 + y / self.ky)
    }
}

/// Axis-aligned bounding box in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl BBox {
    pub fn of(points: impl IntoIterator<Item = (f64, f64)>) -> Option<Self> {
        let mut it = points.into_iter();
        let (x, y) = it.next()?;
        let mut b = BBox {
            lon_min: x,
            lon_max: x,
            lat_min: y,
            lat_max: y,
        };
        for (x, y) in it {
            b.lon_min = b.lon_min.min(x);
            b.lon_max = b.lon_max.max(x);
            b.lat_min = b.lat_min.min(y);
            b.lat_max = b.lat_max.max(y);
        }
        Some(b)
    }

    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        lon >= self.lon_min && lon <= self.lon_max && lat >= self.lat_min && lat <= self.lat_max
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.lon_min + self.lon_max),
            0.5 * (self.lat_min + self.lat_max),
        )
    }
}

#[inline]
fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn on_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> bool {
    let scale = (b.0 - a.0).abs().max((b.1 - a.1).abs()).max(1e-300);
    if cross(a, b, p).abs() > 1e-12 * scale * scale.max(1.0) {
        return false;
    }
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

fn segments_intersect(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(a, c, d))
        || (d2 == 0.0 && on_segment(b, c, d))
        || (d3 == 0.0 && on_segment(c, a, b))
        || (d4 == 0.0 && on_segment(d, a, b))
}

/// Point-in-polygon test where points on the boundary count as inside.
pub fn point_in_ring(ring: &[(f64, f64)], lon: f64, lat: f64) -> bool {
    let n = ring.len();
    let p = (lon, lat);
    for i in 0..n {
        if on_segment(p, ring[i], ring[(i + 1) % n]) {
            return true;
        }
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = ring[i];
        let (xj, yj) = ring[j];
        if (yi > lat) != (yj > lat) {
            let x_cross = xj + (lat - yj) * (xi - xj) / (yi - yj);
            if lon < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// A simple polygon study region in (lon, lat), stored counter-clockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    ring: Vec<(f64, f64)>,
    area_km2: f64,
    bbox: BBox,
}

impl Region {
    /// Builds a region from ring vertices. A repeated closing vertex is dropped.
    pub fn new(mut ring: Vec<(f64, f64)>) -> Result<Self> {
        if ring.len() >= 2 && ring.first() == ring.last() {
            ring.pop();
        }
        if ring.len() < 3 {
            return Err(Error::Region(format!(
                "need at least 3 vertices, got {}",
                ring.len()
            )));
        }
        if ring.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::Region("non-finite vertex".into()));
        }
        let n = ring.len();
        for i in 0..n {
            let a = ring[i];
            let b = ring[(i + 1) % n];
            if a == b {
                return Err(Error::Region(format!("repeated vertex at index {i}")));
            }
            for j in (i + 1)..n {
                // Adjacent edges share a vertex and are allowed to touch there.
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let c = ring[j];
                let d = ring[(j + 1) % n];
                if segments_intersect(a, b, c, d) {
                    return Err(Error::Region(format!(
                        "edges {i} and {j} intersect; polygon is not simple"
                    )));
                }
            }
        }
        let signed = signed_polygon_area_km2(&ring);
        if signed < 0.0 {
            ring.reverse();
        }
        let area_km2 = signed.abs();
        if !(area_km2 > 0.0) {
            return Err(Error::Region("zero area".into()));
        }
        let bbox = BBox::of(ring.iter().copied()).expect("non-empty ring");
        Ok(Self {
            ring,
            area_km2,
            bbox,
        })
    }

    pub fn rectangle(lon_min: f64, lon_max: f64, lat_min: f64, lat_max: f64) -> Result<Self> {
        Self::new(vec![
            (lon_min, lat_min),
            (lon_max, lat_min),
            (lon_max, lat_max),
            (lon_min, lat_max),
        ])
    }

    pub fn ring(&self) -> &[(f64, f64)] {
        &self.ring
    }

    pub fn area_km2(&self) -> f64 {
        self.area_km2
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        self.bbox.contains(lon, lat) && point_in_ring(&self.ring, lon, lat)
    }

    /// Projection centered on the bounding box.
    pub fn projection(&self) -> Projection {
        let (lon0, lat0) = self.bbox.center();
        Projection::centered(lon0, lat0)
    }

    /// Parses a `lon,lat` vertex list; a `lon,lat` header line is optional.
    pub fn parse(text: &str) -> Result<Self> {
        let mut ring = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = idx + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if ring.is_empty() && line.replace(' ', "") == "lon,lat" {
                continue;
            }
            let mut parts = line.split(',');
            let lon = parts.next().map(str::trim).and_then(|s| s.parse::<f64>().ok());
            let lat = parts.next().map(str::trim).and_then(|s| s.parse::<f64>().ok());
            match (lon, lat, parts.next()) {
                (Some(lon), Some(lat), None) => ring.push((lon, lat)),
                _ => {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("expected `lon,lat`, got `{line}`"),
                    })
                }
            }
        }
        Self::new(ring)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lon,lat\n");
        for (lon, lat) in &self.ring {
            out.push_str(&format!("{lon},{lat}\n"));
        }
        out
    }
}

/// Midpoint quadrature lattice over a region's bounding box.
///
/// Each lattice cell whose midpoint lies in the region contributes its exact
/// lon/lat rectangle area. Cells are visited row by row (latitude outer), so
/// sums over the lattice have a fixed order.
#[derive(Debug, Clone)]
pub struct Lattice {
    pub nx: usize,
    pub ny: usize,
    pub bbox: BBox,
    /// Midpoints and areas of lattice cells inside the region.
    pub nodes: Vec<LatticeNode>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeNode {
    pub lon: f64,
    pub lat: f64,
    pub area_km2: f64,
    /// Row-major index in the full nx × ny lattice.
    pub index: usize,
}

impl Lattice {
    pub fn new(region: &Region, nx: usize, ny: usize) -> Self {
        let bbox = region.bbox();
        let dlon = (bbox.lon_max - bbox.lon_min) / nx as f64;
        let dlat = (bbox.lat_max - bbox.lat_min) / ny as f64;
        let mut nodes = Vec::new();
        for j in 0..ny {
            let lat0 = bbox.lat_min + j as f64 * dlat;
            let lat1 = lat0 + dlat;
            let lat = 0.5 * (lat0 + lat1);
            for i in 0..nx {
                let lon0 = bbox.lon_min + i as f64 * dlon;
                let lon = lon0 + 0.5 * dlon;
                if region.contains(lon, lat) {
                    nodes.push(LatticeNode {
                        lon,
                        lat,
                        area_km2: rect_area_km2(lon0, lon0 + dlon, lat0, lat1),
                        index: j * nx + i,
                    });
                }
            }
        }
        Self {
            nx,
            ny,
            bbox,
            nodes,
        }
    }

    /// Row-major lattice index of the cell containing a point, if inside the bbox.
    pub fn cell_of(&self, lon: f64, lat: f64) -> Option<usize> {
        if !self.bbox.contains(lon, lat) {
            return None;
        }
        let fx = (lon - self.bbox.lon_min) / (self.bbox.lon_max - self.bbox.lon_min);
        let fy = (lat - self.bbox.lat_min) / (self.bbox.lat_max - self.bbox.lat_min);
        let i = ((fx * self.nx as f64) as usize).min(self.nx - 1);
        let j = ((fy * self.ny as f64) as usize).min(self.ny - 1);
        Some(j * self.nx + i)
    }

    pub fn total_area_km2(&self) -> f64 {
        self.nodes.iter().map(|n| n.area_km2).sum()
    }
}
