//! Distributional checks on the simulators and on time rescaling.

use quakecheck::intensity::{GutenbergRichter, HawkesModel, HawkesParams, IntegralMode, IntensityModel};
use quakecheck::residuals::{rescale_times, RegionalRate, TemporalRate};
use quakecheck::simulate::{
    replicate, simulate_hawkes, simulate_homogeneous, simulate_inhomogeneous, simulate_poisson_grid,
};
use quakecheck::stats::{chi_square_sf, mean, variance};
use quakecheck::{bin_counts, BinGrid, GriddedForecast, MagBand, Region};

const REPS: usize = 10_000;

fn unit() -> Region {
    Region::rectangle(0.0, 1.0, 0.0, 1.0).unwrap()
}

fn dispersion(counts: &[f64]) -> f64 {
    variance(counts) / mean(counts)
}

#[test]
fn constant_intensity_counts_are_poisson_dispersed() {
    let r = unit();
    let rate = 8.0 / r.area_km2();
    let homogeneous = replicate(REPS, 1, |rng| {
        simulate_homogeneous(rate, &r, 1.0, 3.0, rng).unwrap().len() as f64
    });
    let model = IntensityModel::Homogeneous { rate };
    let thinned = replicate(REPS, 2, |rng| {
        simulate_inhomogeneous(&model, 2.0 * rate, &r, 1.0, 3.0, rng).unwrap().len() as f64
    });
    let p = HawkesParams { mu: rate, k: 0.0, c: 0.01, p: 1.3, a: 1.0, d: 1.0, q: 1.5, m0: 3.0 };
    let hawkes = replicate(REPS, 3, |rng| simulate_hawkes(&p, &r, 1.0, rng).unwrap().len() as f64);
    let grid = BinGrid::regular((0.0, 1.0), (0.0, 1.0), 2, 2, vec![MagBand::new(3.0, 8.0)]).unwrap();
    let f = GriddedForecast::new(grid, vec![2.0; 4], 1.0).unwrap();
    let gridded = replicate(REPS, 4, |rng| simulate_poisson_grid(&f, rng).len() as f64);
    for (name, counts) in [
        ("homogeneous", homogeneous),
        ("inhomogeneous", thinned),
        ("hawkes K=0", hawkes),
        ("poisson grid", gridded),
    ] {
        let d = dispersion(&counts);
        assert!((0.9..=1.1).contains(&d), "{name}: variance/mean = {d}");
    }
}

#[test]
fn thinning_a_forecast_matches_gridded_simulation() {
    let grid = BinGrid::regular((0.0, 1.0), (0.0, 1.0), 3, 3, vec![MagBand::new(3.0, 9.0)]).unwrap();
    let rates: Vec<f64> = (0..9).map(|i| 0.3 + 0.4 * i as f64).collect();
    let f = GriddedForecast::new(grid.clone(), rates.clone(), 1.0).unwrap();
    let model = IntensityModel::from_forecast(&f);
    let bound = f.space_density().into_iter().fold(0.0, f64::max);
    let region = unit();
    let reps = 2000;
    let mut a = vec![0u64; 9];
    let mut b = vec![0u64; 9];
    for counts in replicate(reps, 5, |rng| {
        bin_counts(&simulate_inhomogeneous(&model, bound, &region, 1.0, 3.0, rng).unwrap(), &grid).counts
    }) {
        a.iter_mut().zip(counts).for_each(|(s, n)| *s += n);
    }
    for counts in replicate(reps, 6, |rng| bin_counts(&simulate_poisson_grid(&f, rng), &grid).counts) {
        b.iter_mut().zip(counts).for_each(|(s, n)| *s += n);
    }
    // Two-sample chi-square on the pooled bin totals, and each sample
    // against its expectation.
    let two: f64 = a.iter().zip(&b).map(|(&x, &y)| (x as f64 - y as f64).powi(2) / (x + y) as f64).sum();
    assert!(chi_square_sf(two, 9.0) > 0.01, "two-sample chi2 {two}");
    for (name, s) in [("thinning", &a), ("grid", &b)] {
        let x2: f64 = s
            .iter()
            .zip(&rates)
            .map(|(&n, &l)| (n as f64 - reps as f64 * l).powi(2) / (reps as f64 * l))
            .sum();
        assert!(chi_square_sf(x2, 9.0) > 0.01, "{name} chi2 {x2}");
    }
}

#[test]
fn rescaled_total_tracks_the_compensator() {
    let region = Region::rectangle(0.0, 4.0, 0.0, 4.0).unwrap();
    let window = 200.0;
    let mut p = HawkesParams { mu: 0.0, k: 1.0, c: 0.05, p: 1.5, a: 1.0, d: 0.25, q: 2.0, m0: 3.0 };
    p.k = 0.4 / (GutenbergRichter::new(3.0).mean_exp(p.a) * p.temporal_mass(f64::INFINITY) * p.spatial_mass());
    p.mu = 60.0 / (region.area_km2() * window);
    let diffs = replicate(300, 7, |rng| {
        let c = simulate_hawkes(&p, &region, window, rng).unwrap();
        let m = IntensityModel::Hawkes(HawkesModel::new(p, None, c.clone()).unwrap());
        let rate = RegionalRate::new(&m, &region, IntegralMode::Exact, 50).unwrap();
        let tau = rescale_times(&c, &rate);
        assert_eq!(tau.len(), c.len());
        c.len() as f64 - rate.cumulative(window)
    });
    let m = mean(&diffs);
    let se = (variance(&diffs) / diffs.len() as f64).sqrt();
    assert!(m.abs() < 3.0 * se, "mean N − Λ(T) = {m}, se {se}");
}
