//! Maximum-likelihood fitting by BFGS in log-transformed parameter space.
//!
//! Hawkes parameters are optimized as
//! `θ = (ln μ, ln K, ln c, ln(p−1), ln a, ln d, ln(q−1))`; the homogeneous
//! family as `θ = (ln μ)`. The objective is the approximation-mode
//! log-likelihood with an analytic gradient.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::catalog::{Catalog, Event};
use crate::error::{Error, Result};
use crate::geo::{distance2_km, Region};
use crate::intensity::hawkes::HawkesParams;
use crate::intensity::kernel::SpatialBackground;
use crate::intensity::optimize::{minimize, BfgsOptions};

/// Names of the Hawkes parameters in optimization order.
pub const HAWKES_PARAM_NAMES: [&str; 7] = ["mu", "K", "c", "p", "a", "d", "q"];

#[derive(Debug, Clone, PartialEq)]
pub enum ModelFamily {
    /// Constant rate μ.
    Homogeneous,
    /// Hawkes model, optionally with a spatially varying background shape.
    Hawkes { background: Option<SpatialBackground> },
}

/// Box constraints on the natural parameters, in the order of
/// [`HAWKES_PARAM_NAMES`]. Points outside are treated as infeasible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBounds {
    pub lower: [f64; 7],
    pub upper: [f64; 7],
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            lower: [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0],
            upper: [f64::INFINITY; 7],
        }
    }
}

impl ParamBounds {
    fn admits(&self, values: &[f64]) -> bool {
        values
            .iter()
            .enumerate()
            .all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSpec {
    pub family: ModelFamily,
    /// Starting point. Only `mu` is used by the homogeneous family; `m0` is
    /// held fixed.
    pub initial: HawkesParams,
    pub bounds: ParamBounds,
    /// Run 10 extra fits from jittered starts and keep the best.
    pub restarts: bool,
    /// Seed for the restart jitter.
    pub restart_seed: u64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

impl FitSpec {
    pub fn homogeneous(mu: f64) -> Self {
        Self::new(
            ModelFamily::Homogeneous,
            HawkesParams {
                mu,
                k: 0.0,
                c: 1.0,
                p: 2.0,
                a: 0.0,
                d: 1.0,
                q: 2.0,
                m0: 0.0,
            },
        )
    }

    pub fn hawkes(initial: HawkesParams, background: Option<SpatialBackground>) -> Self {
        Self::new(ModelFamily::Hawkes { background }, initial)
    }

    fn new(family: ModelFamily, initial: HawkesParams) -> Self {
        Self {
            family,
            initial,
            bounds: ParamBounds::default(),
            restarts: false,
            restart_seed: 0x5eed,
            max_iterations: 500,
            gradient_tolerance: 1e-6,
        }
    }
}

/// Fitted parameters of either family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FittedModel {
    Homogeneous { mu: f64 },
    Hawkes(HawkesParams),
}

impl FittedModel {
    /// `(name, value)` pairs in serialization order.
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        match self {
            FittedModel::Homogeneous { mu } => vec![("mu", *mu)],
            FittedModel::Hawkes(p) => vec![
                ("mu", p.mu),
                ("K", p.k),
                ("c", p.c),
                ("p", p.p),
                ("a", p.a),
                ("d", p.d),
                ("q", p.q),
                ("m0", p.m0),
            ],
        }
    }

    /// Parses `param = value` lines; `#` lines are comments. A file holding
    /// only `mu` is homogeneous.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values: Vec<(String, f64)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| crate::error::parse_err(i + 1, "expected `param = value`"))?;
            let key = key.trim();
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| crate::error::parse_err(i + 1, format!("bad value for {key}")))?;
            if values.iter().any(|(k, _)| k == key) {
                return Err(crate::error::parse_err(i + 1, format!("duplicate parameter {key}")));
            }
            values.push((key.to_string(), v));
        }
        let get = |k: &str| values.iter().find(|(n, _)| n == k).map(|(_, v)| *v);
        let mu = get("mu").ok_or_else(|| Error::Parameter("missing parameter mu".into()))?;
        if values.len() == 1 {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(Error::Parameter("mu must be > 0".into()));
            }
            return Ok(FittedModel::Homogeneous { mu });
        }
        let need = |k: &str| get(k).ok_or_else(|| Error::Parameter(format!("missing parameter {k}")));
        let p = HawkesParams {
            mu,
            k: need("K")?,
            c: need("c")?,
            p: need("p")?,
            a: need("a")?,
            d: need("d")?,
            q: need("q")?,
            m0: need("m0")?,
        };
        p.validate()?;
        Ok(FittedModel::Hawkes(p))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub model: FittedModel,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Max-norm of the log-likelihood gradient in θ at the optimum.
    pub gradient_norm: f64,
    pub converged: bool,
    pub evaluations: usize,
}

impl FitReport {
    /// `param = value` lines followed by the report as comments.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.model.entries() {
            let _ = writeln!(s, "{k} = {v:e}");
        }
        let _ = writeln!(s, "# log_likelihood = {}", self.log_likelihood);
        let _ = writeln!(s, "# iterations = {}", self.iterations);
        let _ = writeln!(s, "# gradient_norm = {:e}", self.gradient_norm);
        let _ = writeln!(s, "# converged = {}", self.converged);
        let _ = writeln!(s, "# evaluations = {}", self.evaluations);
        s
    }
}

/// Approximation-mode Hawkes log-likelihood over a fixed catalog, region and
/// window, as a function of θ.
#[derive(Debug, Clone)]
pub struct HawkesObjective<'a> {
    events: &'a [Event],
    /// Background shape at each event (1 without a spatial background).
    shape: Vec<f64>,
    area_km2: f64,
    window: f64,
    m0: f64,
}

impl<'a> HawkesObjective<'a> {
    pub fn new(
        catalog: &'a Catalog,
        region: &Region,
        window: f64,
        m0: f64,
        background: Option<&SpatialBackground>,
    ) -> Self {
        let events = catalog.events();
        let shape = events
            .iter()
            .map(|e| background.map_or(1.0, |b| b.shape(e.lon, e.lat)))
            .collect();
        Self {
            events,
            shape,
            area_km2: region.area_km2(),
            window,
            m0,
        }
    }

    pub fn to_theta(p: &HawkesParams) -> [f64; 7] {
        [
            p.mu.ln(),
            p.k.ln(),
            p.c.ln(),
            (p.p - 1.0).ln(),
            p.a.ln(),
            p.d.ln(),
            (p.q - 1.0).ln(),
        ]
    }

    pub fn from_theta(&self, theta: &[f64]) -> HawkesParams {
        HawkesParams {
            mu: theta[0].exp(),
            k: theta[1].exp(),
            c: theta[2].exp(),
            p: 1.0 + theta[3].exp(),
            a: theta[4].exp(),
            d: theta[5].exp(),
            q: 1.0 + theta[6].exp(),
            m0: self.m0,
        }
    }

    /// Log-likelihood and its gradient with respect to θ.
    pub fn value_and_gradient(&self, theta: &[f64]) -> (f64, [f64; 7]) {
        let hp = self.from_theta(theta);
        let (mu, k, c, p, a, d, q) = (hp.mu, hp.k, hp.c, hp.p, hp.a, hp.d, hp.q);
        let (u, v) = (p - 1.0, q - 1.0);
        let ev = self.events;
        let prod: Vec<f64> = ev.iter().map(|e| k * (a * (e.mag - self.m0)).exp()).collect();

        // Per-event log-intensity terms, computed in parallel and reduced in
        // index order.
        let terms: Vec<(f64, [f64; 7])> = (0..ev.len())
            .into_par_iter()
            .map(|i| {
                let e = &ev[i];
                let bg = mu * self.shape[i];
                let mut lam = bg;
                let mut dl = [bg, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
                for (j, o) in ev[..i].iter().enumerate() {
                    if o.time >= e.time {
                        break;
                    }
                    let lag = e.time - o.time + c;
                    let r2 = distance2_km(e.lon, e.lat, o.lon, o.lat) + d;
                    let g = prod[j] * lag.powf(-p) * r2.powf(-q);
                    lam += g;
                    dl[1] += g;
                    dl[2] -= c * p * g / lag;
                    dl[3] -= u * lag.ln() * g;
                    dl[4] += a * (o.mag - self.m0) * g;
                    dl[5] -= d * q * g / r2;
                    dl[6] -= v * r2.ln() * g;
                }
                if !(lam > 0.0) {
                    return (f64::NEG_INFINITY, [f64::NAN; 7]);
                }
                let mut grad = [0.0; 7];
                for (gi, di) in grad.iter_mut().zip(dl) {
                    *gi = di / lam;
                }
                (lam.ln(), grad)
            })
            .collect();

        let mut ll = Neumaier::default();
        let mut sums = [Neumaier::default(); 7];
        for (t, g) in &terms {
            ll.add(*t);
            for (a, b) in sums.iter_mut().zip(g) {
                a.add(*b);
            }
        }
        let mut ll = ll.value();
        let mut grad = sums.map(|s| s.value());

        // Integral term.
        let background = mu * self.area_km2 * self.window;
        let s = std::f64::consts::PI * d.powf(-v) / v;
        let (ln_c, cu) = (c.ln(), c.powf(-u));
        let mut trig = 0.0;
        let mut trig_a = 0.0;
        let mut trig_c = 0.0;
        let mut trig_u = 0.0;
        for (j, e) in ev.iter().enumerate() {
            let horizon = self.window - e.time;
            let lc = horizon + c;
            let lcu = lc.powf(-u);
            let f = (cu - lcu) / u;
            let df_dc = lc.powf(-p) - c.powf(-p);
            let df_du = (-ln_c * cu + lc.ln() * lcu) / u - f / u;
            let w = prod[j] * s;
            trig += w * f;
            trig_a += w * f * a * (e.mag - self.m0);
            trig_c += w * df_dc * c;
            trig_u += w * df_du * u;
        }
        ll -= background + trig;
        grad[0] -= background;
        grad[1] -= trig;
        grad[2] -= trig_c;
        grad[3] -= trig_u;
        grad[4] -= trig_a;
        grad[5] -= -v * trig;
        grad[6] -= -(v * d.ln() + 1.0) * trig;
        (ll, grad)
    }
}

/// Compensated summation, so the objective stays smooth at the 1e-6
/// gradient tolerance on sums of many terms.
#[derive(Debug, Clone, Copy, Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Fits `spec.family` to `catalog` over `region × [0, window]`.
///
/// The iteration cap is reported via `converged = false`, not as an error.
pub fn fit_mle(spec: &FitSpec, catalog: &Catalog, region: &Region, window: f64) -> Result<FitReport> {
    if !(window > 0.0) {
        return Err(Error::DegenerateWindow { t0: 0.0, t1: window });
    }
    let opts = BfgsOptions {
        gradient_tolerance: spec.gradient_tolerance,
        max_iterations: spec.max_iterations,
        ..Default::default()
    };
    match &spec.family {
        ModelFamily::Homogeneous => fit_homogeneous(spec, catalog, region, window, &opts),
        ModelFamily::Hawkes { background } => {
            fit_hawkes(spec, background.as_ref(), catalog, region, window, &opts)
        }
    }
}

fn fit_homogeneous(
    spec: &FitSpec,
    catalog: &Catalog,
    region: &Region,
    window: f64,
    opts: &BfgsOptions,
) -> Result<FitReport> {
    let mu0 = spec.initial.mu;
    if !(mu0 > 0.0 && mu0.is_finite()) {
        return Err(Error::Parameter("initial mu must be > 0".into()));
    }
    let n = catalog.len() as f64;
    let at = region.area_km2() * window;
    if n == 0.0 {
        // The likelihood increases without bound as mu → 0.
        return Err(Error::Catalog("cannot fit a rate to an empty catalog".into()));
    }
    let (lo, hi) = (spec.bounds.lower[0], spec.bounds.upper[0]);
    let f = |x: &[f64]| {
        let mu = x[0].exp();
        if !(mu >= lo && mu <= hi) {
            return (f64::INFINITY, vec![f64::NAN]);
        }
        (-(n * x[0] - mu * at), vec![-(n - mu * at)])
    };
    let r = minimize(f, &[mu0.ln()], opts);
    Ok(FitReport {
        model: FittedModel::Homogeneous { mu: r.x[0].exp() },
        log_likelihood: -r.value,
        iterations: r.iterations,
        gradient_norm: r.gradient_norm(),
        converged: r.converged,
        evaluations: r.evaluations,
    })
}

fn fit_hawkes(
    spec: &FitSpec,
    background: Option<&SpatialBackground>,
    catalog: &Catalog,
    region: &Region,
    window: f64,
    opts: &BfgsOptions,
) -> Result<FitReport> {
    spec.initial.validate()?;
    if !(spec.initial.k > 0.0 && spec.initial.a > 0.0) {
        return Err(Error::Parameter(
            "K and a must start strictly positive (they are optimized as logarithms)".into(),
        ));
    }
    let obj = HawkesObjective::new(catalog, region, window, spec.initial.m0, background);
    let theta0 = HawkesObjective::to_theta(&spec.initial);
    let (ll0, _) = obj.value_and_gradient(&theta0);
    if !ll0.is_finite() {
        return Err(Error::NonFiniteStart);
    }

    let run = |start: &[f64]| {
        let f = |x: &[f64]| {
            let p = obj.from_theta(x);
            let natural = [p.mu, p.k, p.c, p.p, p.a, p.d, p.q];
            if !spec.bounds.admits(&natural) {
                return (f64::INFINITY, vec![f64::NAN; 7]);
            }
            let (v, g) = obj.value_and_gradient(x);
            (-v, g.iter().map(|x| -x).collect())
        };
        minimize(f, start, opts)
    };

    let mut best = run(&theta0);
    let mut iterations = best.iterations;
    let mut evaluations = best.evaluations;
    if spec.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.restart_seed);
        let jitter = Normal::new(0.0, 0.5).expect("valid normal");
        for _ in 0..10 {
            let start: Vec<f64> = theta0.iter().map(|t| t + jitter.sample(&mut rng)).collect();
            if !obj.value_and_gradient(&start).0.is_finite() {
                continue;
            }
            let r = run(&start);
            iterations += r.iterations;
            evaluations += r.evaluations;
            if r.value.is_finite() && r.value < best.value {
                best = r;
            }
        }
    }
    Ok(FitReport {
        model: FittedModel::Hawkes(obj.from_theta(&best.x)),
        log_likelihood: -best.value,
        iterations,
        gradient_norm: best.gradient_norm(),
        converged: best.converged,
        evaluations,
    })
}
