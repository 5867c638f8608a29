//! Data-consistency tests (N, L, M, S) and comparative tests (R, T, W) for
//! gridded forecasts.
//!
//! Tests take observed per-bin counts (see [`crate::grid::bin_counts`]);
//! events outside the grid play no part.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::forecast::{bin_ll_difference, ensure_same_grid, joint_log_likelihood, GriddedForecast};
use crate::simulate::{replicate_from, simulate_poisson_counts};
use crate::stats::{normal_sf, poisson_cdf, poisson_sf_inclusive, student_t_two_sided};

/// Default seed for simulated nulls.
pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestConfig {
    pub n_sim: usize,
    /// Significance level.
    pub level: f64,
    pub seed: u64,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            n_sim: 1000,
            level: 0.05,
            seed: DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Consistent,
    Reject,
    NotApplicable,
}

impl Decision {
    pub fn as_str(&self) -> &'static str {
        match self {
            Decision::Consistent => "consistent",
            Decision::Reject => "reject",
            Decision::NotApplicable => "not_applicable",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub name: String,
    pub statistic: f64,
    /// γ for simulated tests, δ1 = P(N ≥ n_obs) for the N-test.
    pub quantile: f64,
    /// δ2 = P(N ≤ n_obs) for the N-test.
    pub secondary_quantile: Option<f64>,
    pub n_sim: usize,
    pub sim_statistics: Vec<f64>,
    pub decision: Decision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Favored {
    A,
    B,
    Neither,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseResult {
    pub name: String,
    pub statistic: f64,
    pub p_value: f64,
    pub direction: Favored,
    pub n_sim: usize,
    pub sim_statistics: Vec<f64>,
    pub decision: Decision,
    /// Why the test could not be carried out, when it could not.
    pub note: Option<String>,
}

impl PairwiseResult {
    fn not_applicable(name: &str, note: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            statistic: 0.0,
            p_value: 1.0,
            direction: Favored::Neither,
            n_sim: 0,
            sim_statistics: Vec::new(),
            decision: Decision::NotApplicable,
            note: Some(note.into()),
        }
    }
}

// Stream offsets keep the simulated nulls of different tests independent
// under one seed.
const L_STREAMS: u64 = 1 << 32;
const M_STREAMS: u64 = 2 << 32;
const S_STREAMS: u64 = 3 << 32;
const R_STREAMS: u64 = 4 << 32;

/// Fraction of simulated statistics at or below the observed one.
fn fraction_at_or_below(observed: f64, sims: &[f64]) -> f64 {
    if sims.is_empty() {
        return 1.0;
    }
    sims.iter().filter(|&&s| s <= observed).count() as f64 / sims.len() as f64
}

fn check_lengths(f: &GriddedForecast, counts: &[u64]) -> Result<()> {
    if f.rates().len() != counts.len() {
        return Err(Error::LengthMismatch {
            expected: f.rates().len(),
            actual: counts.len(),
        });
    }
    Ok(())
}

/// Number test with analytic Poisson quantiles.
pub fn n_test(f: &GriddedForecast, counts: &[u64], level: f64) -> Result<TestResult> {
    check_lengths(f, counts)?;
    let n: u64 = counts.iter().sum();
    let total = f.expected_total();
    let delta1 = poisson_sf_inclusive(n, total);
    let delta2 = poisson_cdf(n, total);
    let decision = if delta1.min(delta2) < level / 2.0 {
        Decision::Reject
    } else {
        Decision::Consistent
    };
    Ok(TestResult {
        name: "N".into(),
        statistic: n as f64,
        quantile: delta1,
        secondary_quantile: Some(delta2),
        n_sim: 0,
        sim_statistics: Vec::new(),
        decision,
    })
}

/// Likelihood test: γ = #{simulated LL ≤ observed LL} / n_sim, rejecting
/// when γ < level.
pub fn l_test(f: &GriddedForecast, counts: &[u64], cfg: &TestConfig) -> Result<TestResult> {
    check_lengths(f, counts)?;
    let observed = joint_log_likelihood(f.rates(), counts)?;
    // Per-bin Poisson counts: the binned form of a simulated catalog.
    let sims = replicate_from(cfg.n_sim, cfg.seed, L_STREAMS, |rng| {
        let c = simulate_poisson_counts(f.rates(), rng);
        joint_log_likelihood(f.rates(), &c).expect("matching lengths")
    });
    Ok(simulated_result("L", observed, sims, cfg.level))
}

fn simulated_result(name: &str, observed: f64, sims: Vec<f64>, level: f64) -> TestResult {
    let gamma = fraction_at_or_below(observed, &sims);
    TestResult {
        name: name.into(),
        statistic: observed,
        quantile: gamma,
        secondary_quantile: None,
        n_sim: sims.len(),
        sim_statistics: sims,
        decision: if gamma < level {
            Decision::Reject
        } else {
            Decision::Consistent
        },
    }
}

/// Multinomial draw of `n` items over bins with probabilities ∝ `weights`,
/// by sequential conditional binomials.
pub fn multinomial<R: Rng + ?Sized>(n: u64, weights: &[f64], rng: &mut R) -> Vec<u64> {
    // Suffix sums, so a bin followed only by zero weights takes the rest.
    let mut suffix = vec![0.0; weights.len() + 1];
    for i in (0..weights.len()).rev() {
        suffix[i] = suffix[i + 1] + weights[i];
    }
    let mut left = n;
    let mut out = vec![0u64; weights.len()];
    for (i, &w) in weights.iter().enumerate() {
        if left == 0 {
            break;
        }
        let k = if suffix[i + 1] <= 0.0 {
            left
        } else if w <= 0.0 {
            0
        } else {
            Binomial::new(left, (w / suffix[i]).min(1.0))
                .expect("valid binomial")
                .sample(rng)
        };
        out[i] = k;
        left -= k;
    }
    out
}

fn conditional_test(
    name: &str,
    marginal: GriddedForecast,
    counts: Vec<u64>,
    cfg: &TestConfig,
    streams: u64,
) -> Result<TestResult> {
    let n_obs: u64 = counts.iter().sum();
    if n_obs == 0 {
        return Ok(TestResult {
            name: name.into(),
            statistic: 0.0,
            quantile: 1.0,
            secondary_quantile: None,
            n_sim: 0,
            sim_statistics: Vec::new(),
            decision: Decision::NotApplicable,
        });
    }
    let scaled = marginal.scale_to_count(n_obs)?;
    let rates = scaled.rates();
    let observed = joint_log_likelihood(rates, &counts)?;
    let sims = replicate_from(cfg.n_sim, cfg.seed, streams, |rng| {
        let c = multinomial(n_obs, rates, rng);
        joint_log_likelihood(rates, &c).expect("matching lengths")
    });
    Ok(simulated_result(name, observed, sims, cfg.level))
}

/// Magnitude counts: per-band totals over all space cells.
pub fn magnitude_counts(f: &GriddedForecast, counts: &[u64]) -> Vec<u64> {
    let nb = f.grid().n_bands();
    let mut out = vec![0; nb];
    for (i, c) in counts.iter().enumerate() {
        out[i % nb] += c;
    }
    out
}

/// Space counts: per-cell totals over all magnitude bands.
pub fn space_counts(f: &GriddedForecast, counts: &[u64]) -> Vec<u64> {
    counts
        .chunks(f.grid().n_bands())
        .map(|c| c.iter().sum())
        .collect()
}

/// Magnitude test on the magnitude marginal, conditioned on the observed
/// total.
pub fn m_test(f: &GriddedForecast, counts: &[u64], cfg: &TestConfig) -> Result<TestResult> {
    check_lengths(f, counts)?;
    conditional_test("M", f.marginal_magnitude(), magnitude_counts(f, counts), cfg, M_STREAMS)
}

/// Spatial test on the space marginal, conditioned on the observed total.
pub fn s_test(f: &GriddedForecast, counts: &[u64], cfg: &TestConfig) -> Result<TestResult> {
    check_lengths(f, counts)?;
    conditional_test("S", f.marginal_space(), space_counts(f, counts), cfg, S_STREAMS)
}

/// Per-bin log-likelihood differences, A minus B.
pub fn bin_differences(a: &GriddedForecast, b: &GriddedForecast, counts: &[u64]) -> Result<Vec<f64>> {
    ensure_same_grid(a, b)?;
    check_lengths(a, counts)?;
    Ok(a.rates()
        .iter()
        .zip(b.rates())
        .zip(counts)
        .map(|((&ra, &rb), &n)| bin_ll_difference(ra, rb, n))
        .collect())
}

/// Ratio test under A's null: `p = #{R_sim ≤ R_obs} / n_sim`. A small p
/// rejects A. The swapped comparison is a separate call.
pub fn r_test(
    a: &GriddedForecast,
    b: &GriddedForecast,
    counts: &[u64],
    cfg: &TestConfig,
) -> Result<PairwiseResult> {
    let observed: f64 = bin_differences(a, b, counts)?.iter().sum();
    let sims = replicate_from(cfg.n_sim, cfg.seed, R_STREAMS, |rng| {
        let c = simulate_poisson_counts(a.rates(), rng);
        a.rates()
            .iter()
            .zip(b.rates())
            .zip(&c)
            .map(|((&ra, &rb), &n)| bin_ll_difference(ra, rb, n))
            .sum::<f64>()
    });
    let p = fraction_at_or_below(observed, &sims);
    Ok(PairwiseResult {
        name: "R".into(),
        statistic: observed,
        p_value: p,
        direction: favored(observed),
        n_sim: sims.len(),
        sim_statistics: sims,
        decision: if p < cfg.level {
            Decision::Reject
        } else {
            Decision::Consistent
        },
        note: None,
    })
}

fn favored(x: f64) -> Favored {
    if x > 0.0 {
        Favored::A
    } else if x < 0.0 {
        Favored::B
    } else {
        Favored::Neither
    }
}

/// Paired t-test on per-bin differences.
pub fn t_test_pairwise(
    a: &GriddedForecast,
    b: &GriddedForecast,
    counts: &[u64],
    level: f64,
) -> Result<PairwiseResult> {
    Ok(t_test_differences(&bin_differences(a, b, counts)?, level))
}

/// One-sample t-test of zero mean; non-finite differences are left out.
pub fn t_test_differences(x: &[f64], level: f64) -> PairwiseResult {
    let xs: Vec<f64> = x.iter().copied().filter(|v| v.is_finite()).collect();
    let dropped = x.len() - xs.len();
    if xs.len() < 2 {
        return PairwiseResult::not_applicable("T", "fewer than 2 finite differences");
    }
    let n = xs.len() as f64;
    let m = crate::stats::mean(&xs);
    let sd = crate::stats::variance(&xs).sqrt();
    if !(sd > 0.0) {
        return PairwiseResult::not_applicable("T", "zero variance of differences");
    }
    let t = m * n.sqrt() / sd;
    let p = student_t_two_sided(t, n - 1.0);
    PairwiseResult {
        name: "T".into(),
        statistic: t,
        p_value: p,
        direction: favored(m),
        n_sim: 0,
        sim_statistics: Vec::new(),
        decision: if p < level {
            Decision::Reject
        } else {
            Decision::Consistent
        },
        note: (dropped > 0).then(|| format!("{dropped} non-finite differences left out")),
    }
}

/// Wilcoxon signed-rank test on per-bin differences.
pub fn w_test_pairwise(
    a: &GriddedForecast,
    b: &GriddedForecast,
    counts: &[u64],
    level: f64,
) -> Result<PairwiseResult> {
    Ok(w_test_differences(&bin_differences(a, b, counts)?, level))
}

/// Signed-rank statistic W⁺ with average ranks for ties and a two-sided
/// normal approximation with tie-corrected variance (no continuity
/// correction). Needs at least 10 nonzero differences.
pub fn w_test_differences(x: &[f64], level: f64) -> PairwiseResult {
    let mut xs: Vec<f64> = x.iter().copied().filter(|v| *v != 0.0 && !v.is_nan()).collect();
    if xs.len() < 10 {
        return PairwiseResult::not_applicable("W", "fewer than 10 nonzero differences");
    }
    xs.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let n = xs.len();
    let mut w_plus = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && xs[j].abs() == xs[i].abs() {
            j += 1;
        }
        // Ranks i+1..=j share their average.
        let rank = 0.5 * ((i + 1) + j) as f64;
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        w_plus += rank * xs[i..j].iter().filter(|v| **v > 0.0).count() as f64;
        i = j;
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = (w_plus - mean) / var.sqrt();
    let p = (2.0 * normal_sf(z.abs())).min(1.0);
    PairwiseResult {
        name: "W".into(),
        statistic: w_plus,
        p_value: p,
        direction: favored(w_plus - mean),
        n_sim: 0,
        sim_statistics: Vec::new(),
        decision: if p < level {
            Decision::Reject
        } else {
            Decision::Consistent
        },
        note: None,
    }
}

/// CSV rows `test,statistic,quantile_or_p,n_sim,decision`. The N-test's δ2
/// gets its own `N_delta2` row.
pub fn results_csv(tests: &[TestResult], pairwise: &[PairwiseResult]) -> String {
    let mut s = String::from("test,statistic,quantile_or_p,n_sim,decision\n");
    for t in tests {
        let _ = writeln!(s, "{},{},{},{},{}", t.name, t.statistic, t.quantile, t.n_sim, t.decision.as_str());
        if let Some(d2) = t.secondary_quantile {
            let _ = writeln!(s, "{}_delta2,{},{},{},{}", t.name, t.statistic, d2, t.n_sim, t.decision.as_str());
        }
    }
    for p in pairwise {
        let _ = writeln!(s, "{},{},{},{},{}", p.name, p.statistic, p.p_value, p.n_sim, p.decision.as_str());
    }
    s
}

/// Sidecar CSV `test,replicate,statistic` of all simulated statistics.
pub fn simulations_csv(tests: &[TestResult], pairwise: &[PairwiseResult]) -> String {
    let mut s = String::from("test,replicate,statistic\n");
    let rows = tests
        .iter()
        .map(|t| (&t.name, &t.sim_statistics))
        .chain(pairwise.iter().map(|p| (&p.name, &p.sim_statistics)));
    for (name, sims) in rows {
        for (k, v) in sims.iter().enumerate() {
            let _ = writeln!(s, "{name},{k},{v}");
        }
    }
    s
}

/// A two-bin example where model A out-scores model B on the data, yet the
/// L-test rejects A and not B. Returns `(A, B, counts)`.
///
/// Three events in the first bin: A expects few events, so its own
/// simulations almost always score better than the data (γ ≈ 0.026). B
/// expects many, fits the data worse, but its simulations often score as
/// badly (γ ≈ 0.18). Found by exhaustive search over small two-bin rates.
pub fn paradox_fixture() -> (GriddedForecast, GriddedForecast, Vec<u64>) {
    use crate::grid::{BinGrid, MagBand};
    let grid = BinGrid::regular((0.0, 2.0), (0.0, 1.0), 2, 1, vec![MagBand::new(4.0, 9.0)])
        .expect("valid grid");
    let a = GriddedForecast::new(grid.clone(), PARADOX_A.to_vec(), 1.0).expect("valid rates");
    let b = GriddedForecast::new(grid, PARADOX_B.to_vec(), 1.0).expect("valid rates");
    (a, b, PARADOX_COUNTS.to_vec())
}

const PARADOX_A: [f64; 2] = [0.5, 0.1];
const PARADOX_B: [f64; 2] = [8.0, 1.0];
const PARADOX_COUNTS: [u64; 2] = [3, 0];
