//! Gridded Poisson forecasts: expected counts per space–magnitude bin.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{parse_err, Error, Result};
use crate::grid::{BinGrid, MagBand, SpaceCell};
use crate::stats::poisson_ln_pmf;

/// Expected event counts per bin over a window of `window_days`.
///
/// Bin counts are modelled as independent Poisson variables with these means.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedForecast {
    grid: BinGrid,
    rates: Vec<f64>,
    window_days: f64,
}

impl GriddedForecast {
    pub fn new(grid: BinGrid, rates: Vec<f64>, window_days: f64) -> Result<Self> {
        if rates.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                actual: rates.len(),
            });
        }
        if let Some(i) = rates.iter().position(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Forecast(format!("bin {i} has invalid rate {}", rates[i])));
        }
        if !(window_days > 0.0) || !window_days.is_finite() {
            return Err(Error::Forecast(format!("window {window_days} must be positive")));
        }
        Ok(Self {
            grid,
            rates,
            window_days,
        })
    }

    pub fn grid(&self) -> &BinGrid {
        &self.grid
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn window_days(&self) -> f64 {
        self.window_days
    }

    /// Total expected number of events, the Poisson mean of the total count.
    pub fn expected_total(&self) -> f64 {
        self.rates.iter().sum()
    }

    /// Rescales rates so that their sum equals `n_obs`.
    pub fn scale_to_count(&self, n_obs: u64) -> Result<Self> {
        let total = self.expected_total();
        if total <= 0.0 {
            if n_obs == 0 {
                return Ok(self.clone());
            }
            return Err(Error::Forecast(
                "cannot standardize a forecast with zero expected total".into(),
            ));
        }
        let factor = n_obs as f64 / total;
        Ok(Self {
            grid: self.grid.clone(),
            rates: self.rates.iter().map(|r| r * factor).collect(),
            window_days: self.window_days,
        })
    }

    /// Sums over space cells, leaving one bin per magnitude band.
    pub fn marginal_magnitude(&self) -> Self {
        let nb = self.grid.n_bands();
        let mut rates = vec![0.0; nb];
        for (i, r) in self.rates.iter().enumerate() {
            rates[i % nb] += r;
        }
        Self {
            grid: self.grid.magnitude_only(),
            rates,
            window_days: self.window_days,
        }
    }

    /// Sums over magnitude bands, leaving one bin per space cell.
    pub fn marginal_space(&self) -> Self {
        let nb = self.grid.n_bands();
        let rates = self.rates.chunks(nb).map(|c| c.iter().sum()).collect();
        Self {
            grid: self.grid.space_only(),
            rates,
            window_days: self.window_days,
        }
    }

    /// Rate density (events per km² per day) of each space cell, after
    /// summing over magnitude bands.
    pub fn space_density(&self) -> Vec<f64> {
        let nb = self.grid.n_bands();
        self.grid
            .space_cells()
            .iter()
            .zip(self.rates.chunks(nb))
            .map(|(c, r)| r.iter().sum::<f64>() / (c.area_km2() * self.window_days))
            .collect()
    }

    pub fn with_rates(&self, rates: Vec<f64>) -> Result<Self> {
        Self::new(self.grid.clone(), rates, self.window_days)
    }

    /// Joint Poisson log-likelihood of per-bin counts.
    pub fn joint_log_likelihood(&self, counts: &[u64]) -> Result<f64> {
        joint_log_likelihood(&self.rates, counts)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# window_days = {}", self.window_days);
        out.push_str("lon_min,lon_max,lat_min,lat_max,mag_min,mag_max,rate,mask\n");
        for (bin, rate) in self.grid.bins().zip(&self.rates) {
            let s = bin.space;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},1",
                s.lon_min, s.lon_max, s.lat_min, s.lat_max, bin.band.min, bin.band.max, rate
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        parse_forecast(text)
    }
}

/// `Σ n_i ln λ_i − λ_i − ln n_i!`; `-inf` when a bin with zero rate has events.
pub fn joint_log_likelihood(rates: &[f64], counts: &[u64]) -> Result<f64> {
    if rates.len() != counts.len() {
        return Err(Error::LengthMismatch {
            expected: rates.len(),
            actual: counts.len(),
        });
    }
    Ok(rates
        .iter()
        .zip(counts)
        .map(|(&r, &n)| poisson_ln_pmf(n, r))
        .sum())
}

/// Per-bin log-likelihood difference `ln P_A(n_i) − ln P_B(n_i)`.
///
/// A bin impossible under both models contributes 0.
#[inline]
pub fn bin_ll_difference(rate_a: f64, rate_b: f64, n: u64) -> f64 {
    let a = poisson_ln_pmf(n, rate_a);
    let b = poisson_ln_pmf(n, rate_b);
    if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
        return 0.0;
    }
    a - b
}

pub fn ensure_same_grid(a: &GriddedForecast, b: &GriddedForecast) -> Result<()> {
    if a.grid() != b.grid() {
        return Err(Error::GridMismatch(
            "forecasts must share an identical bin grid".into(),
        ));
    }
    Ok(())
}

const FORECAST_HEADER: [&str; 8] = [
    "lon_min", "lon_max", "lat_min", "lat_max", "mag_min", "mag_max", "rate", "mask",
];

/// Parses forecast CSV. Rows with `mask = 0` are dropped. The remaining rows
/// must form a full product of space cells and magnitude bands.
pub fn parse_forecast(text: &str) -> Result<GriddedForecast> {
    let mut window_days = 1.0;
    let mut header_seen = false;
    let mut rows: Vec<(usize, SpaceCell, MagBand, f64)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.split_once('=') {
                if k.trim() == "window_days" {
                    window_days = v
                        .trim()
                        .parse()
                        .map_err(|_| parse_err(lineno, "bad window_days"))?;
                }
            }
            continue;
        }
        let fields: Vec<_> = line.split(',').map(str::trim).collect();
        if !header_seen {
            if fields != FORECAST_HEADER {
                return Err(parse_err(
                    lineno,
                    format!("expected header `{}`", FORECAST_HEADER.join(",")),
                ));
            }
            header_seen = true;
            continue;
        }
        if fields.len() != 8 {
            return Err(parse_err(
                lineno,
                format!("expected 8 fields, got {}", fields.len()),
            ));
        }
        let mut v = [0.0; 7];
        for (i, slot) in v.iter_mut().enumerate() {
            *slot = fields[i]
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| {
                    parse_err(lineno, format!("invalid {} `{}`", FORECAST_HEADER[i], fields[i]))
                })?;
        }
        let mask = match fields[7] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(lineno, format!("mask must be 0 or 1, got `{other}`"))),
        };
        if v[6] < 0.0 {
            return Err(parse_err(lineno, format!("negative rate {}", v[6])));
        }
        if mask {
            rows.push((
                lineno,
                SpaceCell::new(v[0], v[1], v[2], v[3]),
                MagBand::new(v[4], v[5]),
                v[6],
            ));
        }
    }
    if !header_seen {
        return Err(parse_err(1, "missing forecast header"));
    }
    if rows.is_empty() {
        return Err(Error::Forecast("no unmasked bins".into()));
    }

    let key = |x: f64| x.to_bits();
    let mut space: Vec<SpaceCell> = Vec::new();
    let mut space_ix: HashMap<[u64; 4], usize> = HashMap::new();
    let mut bands: Vec<MagBand> = Vec::new();
    for (_, s, b, _) in &rows {
        let k = [key(s.lon_min), key(s.lon_max), key(s.lat_min), key(s.lat_max)];
        space_ix.entry(k).or_insert_with(|| {
            space.push(*s);
            space.len() - 1
        });
        if !bands.contains(b) {
            bands.push(*b);
        }
    }
    bands.sort_by(|a, b| a.min.total_cmp(&b.min).then(a.max.total_cmp(&b.max)));
    let grid = BinGrid::new(space, bands)?;
    let nb = grid.n_bands();
    let mut rates = vec![f64::NAN; grid.len()];
    for (lineno, s, b, rate) in &rows {
        let si = space_ix[&[key(s.lon_min), key(s.lon_max), key(s.lat_min), key(s.lat_max)]];
        let bi = grid.bands().iter().position(|x| x == b).expect("band registered");
        let slot = &mut rates[si * nb + bi];
        if !slot.is_nan() {
            return Err(parse_err(*lineno, "duplicate bin"));
        }
        *slot = *rate;
    }
    if let Some(i) = rates.iter().position(|r| r.is_nan()) {
        return Err(Error::Forecast(format!(
            "inconsistent magnitude banding: space cell {} lacks band {}",
            i / nb,
            i % nb
        )));
    }
    GriddedForecast::new(grid, rates, window_days)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "lon_min,lon_max,lat_min,lat_max,mag_min,mag_max,rate,mask\n";

    fn four_cell() -> GriddedForecast {
        let text = format!(
            "{HEADER}0,1,0,1,4,5,1,1\n0,1,0,1,5,6,2,1\n1,2,0,1,4,5,3,1\n1,2,0,1,5,6,4,1\n"
        );
        parse_forecast(&text).unwrap()
    }

    #[test]
    fn masked_rows_dropped() {
        let f = parse_forecast(&format!("{HEADER}0,1,0,1,4,5,1,1\n1,2,0,1,4,5,3,0\n")).unwrap();
        assert_eq!(f.grid().len(), 1);
    }

    #[test]
    fn negative_rate_names_row() {
        let err = parse_forecast(&format!("{HEADER}0,1,0,1,4,5,-0.1,1\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn overlapping_cells_rejected() {
        let err =
            parse_forecast(&format!("{HEADER}0,1,0,1,4,5,1,1\n0.5,2,0,1,4,5,1,1\n")).unwrap_err();
        assert!(matches!(err, Error::Grid(_)));
    }

    #[test]
    fn inconsistent_banding_rejected() {
        let err = parse_forecast(&format!(
            "{HEADER}0,1,0,1,4,5,1,1\n0,1,0,1,5,6,1,1\n1,2,0,1,4,5,1,1\n"
        ))
        .unwrap_err();
        assert!(matches!(err, Error::Forecast(_)), "{err:?}");
    }

    #[test]
    fn expected_total_and_marginals() {
        let f = four_cell();
        assert_eq!(f.expected_total(), 10.0);
        assert_eq!(f.marginal_magnitude().rates(), &[4.0, 6.0]);
        assert_eq!(f.marginal_space().rates(), &[3.0, 7.0]);
        assert_eq!(f.marginal_space().marginal_magnitude().rates(), &[10.0]);
        let zero = f.with_rates(vec![0.0; 4]).unwrap();
        assert_eq!(zero.expected_total(), 0.0);
    }

    #[test]
    fn scale_to_count_examples() {
        let f = four_cell();
        let s = f.scale_to_count(5).unwrap();
        assert_eq!(s.rates(), &[0.5, 1.0, 1.5, 2.0]);
        let ones = f.with_rates(vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(ones.scale_to_count(4).unwrap().rates(), &[2.0, 2.0, 0.0, 0.0]);
        assert_eq!(f.scale_to_count(10).unwrap().rates(), f.rates());
        let zero = f.with_rates(vec![0.0; 4]).unwrap();
        assert!(zero.scale_to_count(3).is_err());
    }

    #[test]
    fn joint_log_likelihood_examples() {
        assert_eq!(joint_log_likelihood(&[2.0], &[0]).unwrap(), -2.0);
        assert!((joint_log_likelihood(&[1.0], &[1]).unwrap() + 1.0).abs() < 1e-15);
        let v = joint_log_likelihood(&[2.0], &[3]).unwrap();
        assert!((v + 1.712_31).abs() < 1e-5);
        assert_eq!(
            joint_log_likelihood(&[0.0, 1.0], &[1, 0]).unwrap(),
            f64::NEG_INFINITY
        );
        assert!(matches!(
            joint_log_likelihood(&[1.0], &[1, 2]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let f = four_cell().with_rates(vec![0.1, 1.0 / 3.0, 2.5e-7, 4.0]).unwrap();
        let back = parse_forecast(&f.to_csv()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn difference_for_empty_bin_is_rate_penalty() {
        assert_eq!(bin_ll_difference(2.0, 0.5, 0), -1.5);
        assert_eq!(bin_ll_difference(0.0, 0.0, 3), 0.0);
        assert_eq!(bin_ll_difference(0.0, 1.0, 1), f64::NEG_INFINITY);
    }
}
