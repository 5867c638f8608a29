//! Functional goodness-of-fit summaries: the weighted K-function and the
//! error (Molchan) diagram.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::forecast::GriddedForecast;
use crate::geo::{distance_km, Lattice, Region};
use crate::intensity::IntensityModel;
use crate::residuals::{rate_bounds, EvalLattice};
use crate::simulate::{
    replicate, simulate_hawkes_with, simulate_homogeneous, simulate_inhomogeneous, HawkesSimOptions,
};
use crate::stats::quantile;

#[derive(Debug, Clone, PartialEq)]
pub struct KFunctionCurve {
    pub lags: Vec<f64>,
    pub estimates: Vec<f64>,
    /// πh² at each lag.
    pub reference: Vec<f64>,
    /// Pointwise (lower, upper) simulation envelope.
    pub envelope: Option<Vec<(f64, f64)>>,
}

impl KFunctionCurve {
    /// `h,k_w,pi_h2,env_lo,env_hi`; envelope columns are empty without one.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,k_w,pi_h2,env_lo,env_hi\n");
        for i in 0..self.lags.len() {
            let (lo, hi) = match &self.envelope {
                Some(env) => (env[i].0.to_string(), env[i].1.to_string()),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(
                out,
                "{},{},{},{lo},{hi}",
                self.lags[i], self.estimates[i], self.reference[i]
            );
        }
        out
    }
}

/// Envelope settings for [`weighted_k`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeOptions {
    pub n_sim: usize,
    pub seed: u64,
    /// Pointwise envelope quantiles.
    pub lower: f64,
    pub upper: f64,
    /// Lattice for the thinning bound of inhomogeneous models.
    pub lattice: EvalLattice,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        Self {
            n_sim: 199,
            seed: crate::consistency::DEFAULT_SEED,
            lower: 0.025,
            upper: 0.975,
            lattice: EvalLattice::default(),
        }
    }
}

fn check_lags(lags: &[f64]) -> Result<()> {
    if lags.is_empty() || lags.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
        return Err(Error::Parameter("lags must be positive and finite".into()));
    }
    if lags.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Parameter("lags must be strictly ascending".into()));
    }
    Ok(())
}

/// Spatial intensity at each event: λ̂ integrated over the catalog window.
fn event_weights(model: &IntensityModel, c: &Catalog) -> Result<Vec<f64>> {
    let window = c.window();
    c.events()
        .iter()
        .enumerate()
        .map(|(index, e)| {
            let v = model.time_integrated(e.lon, e.lat, 0.0, window);
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::ZeroIntensity {
                    index,
                    lon: e.lon,
                    lat: e.lat,
                    time: e.time,
                })
            }
        })
        .collect()
}

/// `(1/|S|) Σ_{i≠j} 1{dist ≤ h} / (w_i w_j)`, reduced in event order.
fn k_sum(c: &Catalog, weights: &[f64], area: f64, lags: &[f64]) -> Vec<f64> {
    let ev = c.events();
    let rows: Vec<Vec<f64>> = (0..ev.len())
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; lags.len()];
            for j in (i + 1)..ev.len() {
                let d = distance_km(ev[i].lon, ev[i].lat, ev[j].lon, ev[j].lat);
                let w = 1.0 / (weights[i] * weights[j]);
                for (k, &h) in lags.iter().enumerate() {
                    if d <= h {
                        row[k] += w;
                    }
                }
            }
            row
        })
        .collect();
    let mut total = vec![0.0; lags.len()];
    for row in rows {
        for (t, r) in total.iter_mut().zip(row) {
            *t += r;
        }
    }
    total.iter().map(|t| 2.0 * t / area).collect()
}

fn simulate_like<R: rand::Rng + ?Sized>(
    model: &IntensityModel,
    region: &Region,
    window: f64,
    m0: f64,
    bound: f64,
    rng: &mut R,
) -> Result<Catalog> {
    match model {
        IntensityModel::Homogeneous { rate } => simulate_homogeneous(*rate, region, window, m0, rng),
        IntensityModel::Hawkes(h) => {
            let opts = HawkesSimOptions {
                background: h.background.clone(),
                ..HawkesSimOptions::default()
            };
            simulate_hawkes_with(&h.params, region, window, &opts, rng)
        }
        other => simulate_inhomogeneous(other, bound, region, window, m0, rng),
    }
}

/// Weighted K-function. λ̂ at an event is the model intensity integrated over
/// the catalog window, so `K_w(h) ≈ πh²` for a correct model. There is no
/// edge correction; the envelope, built from catalogs simulated from the
/// model and processed the same way, carries the same edge bias. Hawkes
/// models are re-conditioned on each simulated catalog.
pub fn weighted_k(
    c: &Catalog,
    model: &IntensityModel,
    region: &Region,
    lags: &[f64],
    envelope: Option<&EnvelopeOptions>,
) -> Result<KFunctionCurve> {
    check_lags(lags)?;
    if c.len() < 2 {
        return Err(Error::Parameter(format!(
            "weighted K needs at least 2 events, got {}",
            c.len()
        )));
    }
    let area = region.area_km2();
    let weights = event_weights(model, c)?;
    let estimates = k_sum(c, &weights, area, lags);
    let envelope = match envelope {
        None => None,
        Some(opts) => Some(k_envelope(model, region, c.window(), c.m0(), lags, opts)?),
    };
    Ok(KFunctionCurve {
        lags: lags.to_vec(),
        estimates,
        reference: lags.iter().map(|h| std::f64::consts::PI * h * h).collect(),
        envelope,
    })
}

fn k_envelope(
    model: &IntensityModel,
    region: &Region,
    window: f64,
    m0: f64,
    lags: &[f64],
    opts: &EnvelopeOptions,
) -> Result<Vec<(f64, f64)>> {
    let bound = match model {
        IntensityModel::Homogeneous { .. } | IntensityModel::Hawkes(_) => 0.0,
        other => rate_bounds(other, region, window, &[], &opts.lattice)?.sup,
    };
    let area = region.area_km2();
    let curves: Vec<Result<Vec<f64>>> = replicate(opts.n_sim, opts.seed, |rng| {
        let sim = simulate_like(model, region, window, m0, bound, rng)?;
        let conditioned = match model {
            IntensityModel::Hawkes(h) => IntensityModel::Hawkes(h.with_history(sim.clone())),
            other => other.clone(),
        };
        let w = event_weights(&conditioned, &sim)?;
        Ok(k_sum(&sim, &w, area, lags))
    });
    let curves: Vec<Vec<f64>> = curves.into_iter().collect::<Result<_>>()?;
    Ok((0..lags.len())
        .map(|k| {
            let mut col: Vec<f64> = curves.iter().map(|c| c[k]).collect();
            col.sort_by(f64::total_cmp);
            (quantile(&col, opts.lower), quantile(&col, opts.upper))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorPoint {
    pub threshold: f64,
    /// Alarm fraction of the space–time measure.
    pub nu: f64,
    /// Fraction of events outside the alarm set.
    pub miss: f64,
}

/// Error-diagram curve, ordered by descending threshold (ascending ν).
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDiagram {
    pub points: Vec<ErrorPoint>,
    pub n_events: usize,
}

impl ErrorDiagram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,nu,miss\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.threshold, p.nu, p.miss);
        }
        out
    }

    /// Miss fraction of the largest alarm set with alarm fraction ≤ `nu`.
    pub fn miss_at(&self, nu: f64) -> f64 {
        self.points
            .iter()
            .take_while(|p| p.nu <= nu)
            .last()
            .map_or(1.0, |p| p.miss)
    }

    /// Miss-fraction difference against a reference diagram at each of this
    /// diagram's ν values.
    pub fn relative_to(&self, reference: &ErrorDiagram) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .map(|p| (p.nu, p.miss - reference.miss_at(p.nu)))
            .collect()
    }

    /// `nu,miss_difference` for [`relative_to`](Self::relative_to).
    pub fn relative_csv(&self, reference: &ErrorDiagram) -> String {
        let mut out = String::from("nu,miss_difference\n");
        for (nu, d) in self.relative_to(reference) {
            let _ = writeln!(out, "{nu},{d}");
        }
        out
    }
}

/// What raises alarms in an error diagram.
#[derive(Debug, Clone, Copy)]
pub enum AlarmSource<'a> {
    /// Space cells with bands summed; value is rate per km².
    Forecast(&'a GriddedForecast),
    /// Lattice cells (× time slices for time-dependent models).
    Model {
        model: &'a IntensityModel,
        region: &'a Region,
        window: f64,
        resolution: usize,
        time_slices: usize,
    },
}

/// Cell values, cell measures, and the cell of each event (if any).
fn alarm_cells(source: &AlarmSource, c: &Catalog) -> (Vec<f64>, Vec<f64>, Vec<Option<usize>>) {
    match source {
        AlarmSource::Forecast(f) => {
            let grid = f.grid();
            let nb = grid.n_bands();
            let values: Vec<f64> = grid
                .space_cells()
                .iter()
                .zip(f.rates().chunks(nb))
                .map(|(cell, r)| r.iter().sum::<f64>() / cell.area_km2())
                .collect();
            let measure = grid.space_cells().iter().map(|s| s.area_km2()).collect();
            let located = c
                .events()
                .iter()
                .map(|e| grid.locate_space(e.lon, e.lat))
                .collect();
            (values, measure, located)
        }
        AlarmSource::Model {
            model,
            region,
            window,
            resolution,
            time_slices,
        } => {
            let lattice = Lattice::new(region, *resolution, *resolution);
            let nt = if model.is_time_dependent() {
                (*time_slices).max(1)
            } else {
                1
            };
            let dt = window / nt as f64;
            let values: Vec<f64> = lattice
                .nodes
                .par_iter()
                .flat_map_iter(|n| {
                    (0..nt).map(move |k| model.intensity(n.lon, n.lat, (k as f64 + 0.5) * dt))
                })
                .collect();
            let measure = lattice
                .nodes
                .iter()
                .flat_map(|n| std::iter::repeat_n(n.area_km2 * dt, nt))
                .collect();
            let mut slot = vec![usize::MAX; lattice.nx * lattice.ny];
            for (k, n) in lattice.nodes.iter().enumerate() {
                slot[n.index] = k;
            }
            let located = c
                .events()
                .iter()
                .map(|e| {
                    let node = lattice.cell_of(e.lon, e.lat).map(|i| slot[i])?;
                    if node == usize::MAX {
                        return None;
                    }
                    let k = ((e.time / dt).floor().max(0.0) as usize).min(nt - 1);
                    Some(node * nt + k)
                })
                .collect();
            (values, measure, located)
        }
    }
}

/// Error diagram: for each threshold, the measure-weighted fraction of cells
/// with λ̂ ≥ threshold and the fraction of events in cells below it.
///
/// Thresholds are the distinct cell values, evenly subsampled to at most
/// `n_thresholds`, bracketed by `+inf` (no alarms) and 0 (alarm everywhere).
/// Events outside every cell are left out.
pub fn error_diagram(source: &AlarmSource, c: &Catalog, n_thresholds: usize) -> Result<ErrorDiagram> {
    let (values, measure, located) = alarm_cells(source, c);
    if values.is_empty() {
        return Err(Error::Parameter("no evaluation cells".into()));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Parameter("intensity must be finite and >= 0".into()));
    }
    let inside: Vec<usize> = located.into_iter().flatten().collect();
    if inside.is_empty() {
        return Err(Error::Parameter("error diagram needs at least one event inside the cells".into()));
    }
    let mut distinct = values.clone();
    distinct.sort_by(|a, b| b.total_cmp(a));
    distinct.dedup();
    let keep = n_thresholds.max(2);
    let chosen: Vec<f64> = if distinct.len() <= keep {
        distinct
    } else {
        let last = distinct.len() - 1;
        let mut idx: Vec<usize> = (0..keep).map(|k| k * last / (keep - 1)).collect();
        idx.dedup();
        idx.into_iter().map(|i| distinct[i]).collect()
    };
    let mut thresholds = vec![f64::INFINITY];
    thresholds.extend(chosen.into_iter().filter(|&t| t > 0.0));
    thresholds.push(0.0);

    let total_measure: f64 = measure.iter().sum();
    let n = inside.len() as f64;
    let points = thresholds
        .iter()
        .map(|&t| {
            let alarm: f64 = values
                .iter()
                .zip(&measure)
                .filter(|(v, _)| **v >= t)
                .fold(0.0, |acc, (_, m)| acc + m);
            let missed = inside.iter().filter(|&&i| values[i] < t).count();
            ErrorPoint {
                threshold: t,
                nu: alarm / total_measure,
                miss: missed as f64 / n,
            }
        })
        .collect();
    Ok(ErrorDiagram {
        points,
        n_events: inside.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Event;
    use crate::grid::{BinGrid, MagBand};
    use crate::simulate::RngStream;
    use crate::stats::mean;

    #[test]
    fn two_point_k_is_a_step() {
        let r = Region::rectangle(0.0, 1.0, 0.0, 1.0).unwrap();
        // Two events 5 km apart along a meridian.
        let dlat = 5.0 / 111.32;
        let c = Catalog::new(
            vec![Event::new(0.1, 0.5, 0.2, 3.0), Event::new(0.2, 0.5, 0.2 + dlat, 3.0)],
            1.0,
            3.0,
        )
        .unwrap();
        let rho = 0.01;
        let k = weighted_k(&c, &IntensityModel::Homogeneous { rate: rho }, &r, &[4.9, 5.1, 10.0], None)
            .unwrap();
        let step = 2.0 / (r.area_km2() * rho * rho);
        assert_eq!(k.estimates[0], 0.0);
        assert!((k.estimates[1] - step).abs() < 1e-12 * step);
        assert!((k.estimates[2] - step).abs() < 1e-12 * step);
        assert!(k.to_csv().starts_with("h,k_w,pi_h2,env_lo,env_hi\n4.9,0,"));
    }

    #[test]
    fn k_rejects_bad_input() {
        let r = Region::rectangle(0.0, 1.0, 0.0, 1.0).unwrap();
        let one = Catalog::new(vec![Event::new(0.1, 0.5, 0.5, 3.0)], 1.0, 3.0).unwrap();
        let m = IntensityModel::Homogeneous { rate: 1.0 };
        assert!(weighted_k(&one, &m, &r, &[1.0], None).is_err());
        let two = Catalog::new(
            vec![Event::new(0.1, 0.5, 0.5, 3.0), Event::new(0.2, 0.6, 0.5, 3.0)],
            1.0,
            3.0,
        )
        .unwrap();
        assert!(weighted_k(&two, &IntensityModel::Homogeneous { rate: 0.0 }, &r, &[1.0], None).is_err());
        assert!(weighted_k(&two, &m, &r, &[2.0, 1.0], None).is_err());
    }

    #[test]
    fn homogeneous_mean_k_matches_pi_h2() {
        let r = Region::rectangle(0.0, 1.0, 0.0, 1.0).unwrap();
        let side = r.area_km2().sqrt();
        let h = 0.1 * side;
        let rate = 200.0 / r.area_km2();
        let model = IntensityModel::Homogeneous { rate };
        let ks: Vec<f64> = replicate(100, 21, |rng| {
            let c = simulate_homogeneous(rate, &r, 1.0, 3.0, rng).unwrap();
            weighted_k(&c, &model, &r, &[h], None).unwrap().estimates[0]
        });
        let target = std::f64::consts::PI * h * h;
        assert!((mean(&ks) / target - 1.0).abs() < 0.1, "{} vs {target}", mean(&ks));
    }

    #[test]
    fn envelope_brackets_null_and_scaling_is_inverse_square() {
        let r = Region::rectangle(0.0, 1.0, 0.0, 1.0).unwrap();
        let rate = 100.0 / r.area_km2();
        let model = IntensityModel::Homogeneous { rate };
        let mut rng = RngStream::new(8, 0);
        let c = simulate_homogeneous(rate, &r, 1.0, 3.0, &mut rng).unwrap();
        let lags = [2.0, 5.0, 10.0, 20.0];
        let opts = EnvelopeOptions {
            n_sim: 39,
            ..Default::default()
        };
        let k = weighted_k(&c, &model, &r, &lags, Some(&opts)).unwrap();
        let env = k.envelope.as_ref().unwrap();
        assert!(env.iter().all(|(lo, hi)| lo <= hi));
        assert!(k.estimates.windows(2).all(|w| w[0] <= w[1]));
        let scaled = weighted_k(&c, &IntensityModel::Homogeneous { rate: 3.0 * rate }, &r, &lags, None)
            .unwrap();
        for (a, b) in k.estimates.iter().zip(&scaled.estimates) {
            assert!((a / 9.0 - b).abs() <= 1e-12 * a.abs());
        }
    }

    fn gradient_forecast() -> GriddedForecast {
        let grid = BinGrid::regular((0.0, 4.0), (0.0, 1.0), 4, 1, vec![MagBand::new(3.0, 9.0)]).unwrap();
        GriddedForecast::new(grid, vec![0.0, 1.0, 2.0, 5.0], 1.0).unwrap()
    }

    #[test]
    fn error_diagram_endpoints_and_monotonicity() {
        let f = gradient_forecast();
        let c = Catalog::new(
            vec![
                Event::new(0.1, 3.5, 0.5, 3.0),
                Event::new(0.2, 2.5, 0.5, 3.0),
                Event::new(0.3, 0.5, 0.5, 3.0),
            ],
            1.0,
            3.0,
        )
        .unwrap();
        let d = error_diagram(&AlarmSource::Forecast(&f), &c, 100).unwrap();
        let first = d.points.first().unwrap();
        let last = d.points.last().unwrap();
        assert_eq!((first.nu, first.miss), (0.0, 1.0));
        assert_eq!((last.nu, last.miss), (1.0, 0.0));
        assert!(d.points.windows(2).all(|w| w[0].nu <= w[1].nu && w[0].miss >= w[1].miss));
        // Top cell alone: a quarter of the area (roughly) catches one event.
        assert!((d.points[1].miss - 2.0 / 3.0).abs() < 1e-15);
        assert!(d.to_csv().starts_with("threshold,nu,miss\ninf,0,1\n"), "{}", d.to_csv());
    }

    #[test]
    fn error_diagram_is_scale_invariant() {
        let f = gradient_forecast();
        let scaled = f.with_rates(f.rates().iter().map(|r| r * 7.0).collect()).unwrap();
        let c = Catalog::new(vec![Event::new(0.1, 2.5, 0.5, 3.0)], 1.0, 3.0).unwrap();
        let a = error_diagram(&AlarmSource::Forecast(&f), &c, 10).unwrap();
        let b = error_diagram(&AlarmSource::Forecast(&scaled), &c, 10).unwrap();
        let pts = |d: &ErrorDiagram| d.points.iter().map(|p| (p.nu, p.miss)).collect::<Vec<_>>();
        assert_eq!(pts(&a), pts(&b));
    }

    #[test]
    fn true_model_dominates_flat_rival() {
        let r = Region::rectangle(0.0, 2.0, 0.0, 1.0).unwrap();
        let west = crate::grid::SpaceCell::new(0.0, 1.0, 0.0, 1.0);
        let east = crate::grid::SpaceCell::new(1.0, 2.0, 0.0, 1.0);
        let truth = IntensityModel::Piecewise(crate::intensity::PiecewiseDensity::new(
            vec![west, east],
            vec![1e-4, 9e-4],
        ));
        let flat = IntensityModel::Homogeneous { rate: 5e-4 };
        let mut rng = RngStream::new(30, 0);
        let c = simulate_inhomogeneous(&truth, 9e-4, &r, 10.0, 3.0, &mut rng).unwrap();
        let src = |m| AlarmSource::Model {
            model: m,
            region: &r,
            window: 10.0,
            resolution: 20,
            time_slices: 1,
        };
        let dt = error_diagram(&src(&truth), &c, 50).unwrap();
        let df = error_diagram(&src(&flat), &c, 50).unwrap();
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        let ok = grid.iter().filter(|&&nu| dt.miss_at(nu) <= df.miss_at(nu)).count();
        assert!(ok as f64 >= 0.8 * grid.len() as f64);
        assert_eq!(dt.relative_to(&df).len(), dt.points.len());
    }
}
