//! Subcommand definitions and their orchestration of library calls.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use quakecheck::consistency::{
    l_test, m_test, n_test, r_test, results_csv, s_test, simulations_csv, t_test_pairwise,
    w_test_pairwise, PairwiseResult, TestConfig, TestResult, DEFAULT_SEED,
};
use quakecheck::geo::polygon_area_km2;
use quakecheck::intensity::{fit_mle, FitSpec, FittedModel, GutenbergRichter, HawkesModel, HawkesParams, IntegralMode, IntensityModel};
use quakecheck::residuals::{
    homogeneity_test, inter_arrivals, ks_exponential, pixel_residuals_forecast, pixel_residuals_model,
    rate_bounds, rescale_times, super_thin, superpose_residuals, thin_residuals, voronoi_residuals,
    voronoi_tessellation, CellResidualSet, EvalLattice, HomogeneityMethod, PixelResiduals, RegionalRate,
    ResidualPointSet,
};
use quakecheck::simulate::{simulate_hawkes, simulate_homogeneous, simulate_poisson_grid, RngStream};
use quakecheck::stats::{poisson_cdf, poisson_sf_inclusive};
use quakecheck::summaries::{error_diagram, weighted_k, AlarmSource, EnvelopeOptions};
use quakecheck::{bin_counts, BinGrid, Catalog, GriddedForecast, MagBand, Region};

use crate::svg::{cells_from_geojson, render_histogram, render_lines, render_map, DivergingScale, Series};
use crate::{CliError, Outputs};

#[derive(Debug, Parser)]
#[command(name = "quakecheck", version, about = "Evaluate earthquake forecasts and point-process models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Settings shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Where the intensity model comes from; exactly one source is used.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Constant rate per km² per day.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Parameter file (`param = value`), e.g. the output of `fit`.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Gridded forecast CSV.
    #[arg(long)]
    pub forecast: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Hawkes,
    Homogeneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Raw,
    Pearson,
    Deviance,
    Voronoi,
    Thin,
    Superpose,
    Superthin,
    Rescale,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Maximum-likelihood fit of a homogeneous or Hawkes model.
    #[command(args_override_self = true)]
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        region: PathBuf,
        #[arg(long, value_enum, default_value = "hawkes")]
        family: Family,
        /// Starting parameters; a generic start is used when absent.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Add ten jittered restarts (seeded by --seed).
        #[arg(long)]
        restarts: bool,
    },
    /// Simulate a catalog from a rate, a parameter file or a forecast.
    #[command(args_override_self = true)]
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        region: Option<PathBuf>,
        /// Window length in days (ignored for forecasts).
        #[arg(long, default_value_t = 1.0)]
        window: f64,
        #[arg(long, default_value_t = 3.0)]
        m0: f64,
    },
    /// Consistency tests of a forecast and comparative tests of two.
    #[command(args_override_self = true)]
    Test {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        forecast: PathBuf,
        /// Second forecast for the R, T and W tests.
        #[arg(long)]
        forecast_b: Option<PathBuf>,
        #[arg(long)]
        catalog: PathBuf,
        /// Comma-separated subset of n,l,m,s,r,t,w.
        #[arg(long)]
        tests: Option<String>,
        #[arg(long, default_value_t = 1000)]
        n_sim: usize,
        #[arg(long, default_value_t = 0.05)]
        level: f64,
    },
    /// Residuals: cell maps (raw, pearson, deviance, voronoi) or point
    /// transforms (thin, superpose, superthin, rescale).
    #[command(args_override_self = true)]
    Residuals {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        region: Option<PathBuf>,
        /// Second forecast for deviance residuals.
        #[arg(long)]
        forecast_b: Option<PathBuf>,
        /// Super-thinning rate; defaults to the lattice median of λ̂.
        #[arg(long)]
        k: Option<f64>,
        /// Evaluation lattice side for inf/sup of λ̂ and Voronoi integrals.
        #[arg(long, default_value_t = 200)]
        resolution: usize,
        /// Time slices for time-dependent models.
        #[arg(long, default_value_t = 100)]
        time_slices: usize,
        /// Cells per side of the grid for model-based pixel residuals.
        #[arg(long, default_value_t = 20)]
        cells: usize,
        /// Symmetric colour bound; defaults to max |value|.
        #[arg(long)]
        bound: Option<f64>,
        /// Colour pixel maps by 1 − p under the per-cell Poisson law.
        #[arg(long)]
        pvalue_scale: bool,
        /// Exact in-region triggering mass for time rescaling.
        #[arg(long)]
        exact: bool,
    },
    /// Weighted K-function with a simulation envelope.
    #[command(args_override_self = true)]
    Kfn {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        region: PathBuf,
        /// Comma-separated lags in km; defaults to 10 lags up to ¼√area.
        #[arg(long)]
        lags: Option<String>,
        /// Envelope simulations (0 disables the envelope).
        #[arg(long, default_value_t = 199)]
        n_sim: usize,
        #[arg(long, default_value_t = 100)]
        resolution: usize,
    },
    /// Error diagram, optionally relative to a reference forecast.
    #[command(args_override_self = true)]
    Errordiag {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        region: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        thresholds: usize,
        #[arg(long, default_value_t = 100)]
        resolution: usize,
        #[arg(long, default_value_t = 20)]
        time_slices: usize,
    },
    /// Voronoi tessellation of catalog epicentres within a region.
    #[command(args_override_self = true)]
    Tessellate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        region: PathBuf,
    },
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_catalog(p: &Path) -> Result<Catalog, CliError> {
    Ok(quakecheck::parse_catalog(&read(p)?)?)
}

fn load_region(p: &Path) -> Result<Region, CliError> {
    Ok(Region::parse(&read(p)?)?)
}

fn load_forecast(p: &Path) -> Result<GriddedForecast, CliError> {
    Ok(quakecheck::parse_forecast(&read(p)?)?)
}

fn need<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T, CliError> {
    v.as_ref().ok_or_else(|| CliError::Config(format!("--{flag} is required here")))
}

impl ModelArgs {
    fn paths(&self) -> Vec<&PathBuf> {
        self.params.iter().chain(&self.forecast).collect()
    }

    fn check_one(&self) -> Result<(), CliError> {
        let n = usize::from(self.rate.is_some())
            + usize::from(self.params.is_some())
            + usize::from(self.forecast.is_some());
        if n != 1 {
            return Err(CliError::Config(
                "give exactly one of --rate, --params, --forecast".into(),
            ));
        }
        Ok(())
    }

    /// Hawkes models take `history` as their conditioning history.
    fn load(&self, history: &Catalog) -> Result<IntensityModel, CliError> {
        if let Some(rate) = self.rate {
            if !(rate >= 0.0) || !rate.is_finite() {
                return Err(CliError::Config(format!("--rate {rate} must be finite and >= 0")));
            }
            return Ok(IntensityModel::Homogeneous { rate });
        }
        if let Some(p) = &self.params {
            return Ok(match FittedModel::parse(&read(p)?)? {
                FittedModel::Homogeneous { mu } => IntensityModel::Homogeneous { rate: mu },
                FittedModel::Hawkes(hp) => {
                    IntensityModel::Hawkes(HawkesModel::new(hp, None, history.clone())?)
                }
            });
        }
        let f = load_forecast(need(&self.forecast, "forecast")?)?;
        Ok(IntensityModel::from_forecast(&f))
    }
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Fit { common, .. }
            | Command::Simulate { common, .. }
            | Command::Test { common, .. }
            | Command::Residuals { common, .. }
            | Command::Kfn { common, .. }
            | Command::Errordiag { common, .. }
            | Command::Tessellate { common, .. } => common,
        }
    }

    /// Input paths that must exist before anything runs.
    fn input_paths(&self) -> Vec<&PathBuf> {
        let mut v: Vec<&PathBuf> = Vec::new();
        match self {
            Command::Fit { catalog, region, params, .. } => {
                v.extend([catalog, region]);
                v.extend(params);
            }
            Command::Simulate { model, region, .. } => {
                v.extend(model.paths());
                v.extend(region);
            }
            Command::Test { forecast, forecast_b, catalog, .. } => {
                v.extend([forecast, catalog]);
                v.extend(forecast_b);
            }
            Command::Residuals { model, catalog, region, forecast_b, .. } => {
                v.extend(model.paths());
                v.push(catalog);
                v.extend(region);
                v.extend(forecast_b);
            }
            Command::Kfn { model, catalog, region, .. } => {
                v.extend(model.paths());
                v.extend([catalog, region]);
            }
            Command::Errordiag { model, catalog, region, reference, .. } => {
                v.extend(model.paths());
                v.push(catalog);
                v.extend(region);
                v.extend(reference);
            }
            Command::Tessellate { catalog, region, .. } => v.extend([catalog, region]),
        }
        v
    }

    /// Configuration checks that need no input data.
    pub fn validate(&self) -> Result<(), CliError> {
        for p in self.input_paths() {
            if !p.is_file() {
                return Err(CliError::Config(format!("input {} does not exist", p.display())));
            }
        }
        match self {
            Command::Simulate { model, region, window, .. } => {
                model.check_one()?;
                if model.forecast.is_none() {
                    need(region, "region")?;
                    if !(*window > 0.0) {
                        return Err(CliError::Config("--window must be > 0".into()));
                    }
                }
            }
            Command::Test { tests, forecast_b, n_sim, level, .. } => {
                for t in test_list(tests.as_deref(), forecast_b.is_some())? {
                    if matches!(t, 'r' | 't' | 'w') && forecast_b.is_none() {
                        return Err(CliError::Config(format!("test {t} needs --forecast-b")));
                    }
                }
                if *n_sim == 0 || !(*level > 0.0 && *level < 1.0) {
                    return Err(CliError::Config("--n-sim must be > 0 and --level in (0, 1)".into()));
                }
            }
            Command::Residuals { model, kind, region, forecast_b, .. } => match kind {
                Kind::Deviance => {
                    need(&model.forecast, "forecast")?;
                    need(forecast_b, "forecast-b")?;
                }
                Kind::Raw | Kind::Pearson => {
                    model.check_one()?;
                    if model.forecast.is_none() {
                        need(region, "region")?;
                    }
                }
                _ => {
                    model.check_one()?;
                    need(region, "region")?;
                }
            },
            Command::Kfn { model, .. } => model.check_one()?,
            Command::Errordiag { model, region, .. } => {
                model.check_one()?;
                if model.forecast.is_none() {
                    need(region, "region")?;
                }
            }
            Command::Fit { .. } | Command::Tessellate { .. } => {}
        }
        Ok(())
    }

    pub fn execute(&self) -> Result<Outputs, CliError> {
        let mut out = Outputs::default();
        match self {
            Command::Fit { common, catalog, region, family, params, restarts } => {
                let c = load_catalog(catalog)?;
                let r = load_region(region)?;
                let start = match params {
                    Some(p) => Some(FittedModel::parse(&read(p)?)?),
                    None => None,
                };
                let mut spec = match family {
                    Family::Homogeneous => {
                        let mu = match start {
                            Some(FittedModel::Homogeneous { mu }) => mu,
                            Some(FittedModel::Hawkes(p)) => p.mu,
                            None => (c.len().max(1) as f64) / (r.area_km2() * c.window()),
                        };
                        FitSpec::homogeneous(mu)
                    }
                    Family::Hawkes => {
                        let p = match start {
                            Some(FittedModel::Hawkes(p)) => p,
                            _ => default_hawkes_start(&c, &r),
                        };
                        FitSpec::hawkes(p, None)
                    }
                };
                spec.restarts = *restarts;
                spec.restart_seed = common.seed;
                let report = fit_mle(&spec, &c, &r, c.window())?;
                out.add("fit.txt", report.to_text());
            }
            Command::Simulate { common, model, region, window, m0 } => {
                let mut rng = RngStream::new(common.seed, 0);
                let c = if let Some(f) = &model.forecast {
                    simulate_poisson_grid(&load_forecast(f)?, &mut rng)
                } else {
                    let r = load_region(need(region, "region")?)?;
                    if let Some(rate) = model.rate {
                        simulate_homogeneous(rate, &r, *window, *m0, &mut rng)?
                    } else {
                        match FittedModel::parse(&read(need(&model.params, "params")?)?)? {
                            FittedModel::Homogeneous { mu } => {
                                simulate_homogeneous(mu, &r, *window, *m0, &mut rng)?
                            }
                            FittedModel::Hawkes(p) => simulate_hawkes(&p, &r, *window, &mut rng)?,
                        }
                    }
                };
                out.add("catalog.csv", c.to_csv());
            }
            Command::Test { common, forecast, forecast_b, catalog, tests, n_sim, level } => {
                run_tests(&mut out, common, forecast, forecast_b.as_deref(), catalog, tests.as_deref(), *n_sim, *level)?;
            }
            Command::Residuals {
                common,
                model,
                kind,
                catalog,
                region,
                forecast_b,
                k,
                resolution,
                time_slices,
                cells,
                bound,
                pvalue_scale,
                exact,
            } => {
                let c = load_catalog(catalog)?;
                let region = match region {
                    Some(p) => Some(load_region(p)?),
                    None => None,
                };
                let lattice = EvalLattice {
                    nx: *resolution,
                    ny: *resolution,
                    nt: *time_slices,
                };
                let mut rng = RngStream::new(common.seed, 0);
                match kind {
                    Kind::Deviance => {
                        let a = load_forecast(need(&model.forecast, "forecast")?)?;
                        let b = load_forecast(need(forecast_b, "forecast-b")?)?;
                        let set = quakecheck::residuals::deviance_residuals(&a, &b, &c)?;
                        emit_cells(&mut out, "residuals", &set, *bound, None)?;
                    }
                    Kind::Raw | Kind::Pearson => {
                        let px = if let Some(f) = &model.forecast {
                            pixel_residuals_forecast(&load_forecast(f)?, &c)
                        } else {
                            let r = region.as_ref().expect("validated");
                            let b = r.bbox();
                            let top = c.events().iter().fold(10.0_f64, |m, e| m.max(e.mag + 0.1));
                            let grid = BinGrid::regular(
                                (b.lon_min, b.lon_max),
                                (b.lat_min, b.lat_max),
                                *cells,
                                *cells,
                                vec![MagBand::new(c.m0(), top)],
                            )?;
                            pixel_residuals_model(&model.load(&c)?, &c, &grid, c.window(), 10)
                        };
                        let set = if *kind == Kind::Raw { &px.raw } else { &px.pearson };
                        let pv = pvalue_scale.then(|| pvalue_values(&px));
                        emit_cells(&mut out, "residuals", set, *bound, pv)?;
                    }
                    Kind::Voronoi => {
                        let r = region.as_ref().expect("validated");
                        let v = voronoi_residuals(&model.load(&c)?, &c, r, *resolution)?;
                        emit_cells(&mut out, "residuals", &v.residuals, *bound, None)?;
                    }
                    Kind::Thin | Kind::Superpose | Kind::Superthin => {
                        let r = region.as_ref().expect("validated");
                        let m = model.load(&c)?;
                        let ps = match kind {
                            Kind::Thin => thin_residuals(&c, &m, r, &lattice, &mut rng)?,
                            Kind::Superpose => superpose_residuals(&c, &m, r, &lattice, &mut rng)?,
                            _ => {
                                let k = match k {
                                    Some(k) => *k,
                                    None => rate_bounds(&m, r, c.window(), c.events(), &lattice)?.median,
                                };
                                super_thin(&c, &m, k, r, &lattice, &mut rng)?
                            }
                        };
                        emit_points(&mut out, &ps, &mut rng)?;
                    }
                    Kind::Rescale => {
                        let r = region.as_ref().expect("validated");
                        let mode = if *exact { IntegralMode::Exact } else { IntegralMode::Approximate };
                        let rate = RegionalRate::new(&model.load(&c)?, r, mode, *resolution)?;
                        let tau = rescale_times(&c, &rate);
                        let mut csv = String::from("index,time,tau\n");
                        for (i, (e, t)) in c.events().iter().zip(&tau).enumerate() {
                            let _ = writeln!(csv, "{i},{},{t}", e.time);
                        }
                        out.add("rescaled.csv", csv);
                        let (d, p) = ks_exponential(&inter_arrivals(&tau));
                        out.add("rescaled_ks.csv", format!("n,ks_statistic,p_value\n{},{d},{p}\n", tau.len()));
                    }
                }
            }
            Command::Kfn { common, model, catalog, region, lags, n_sim, resolution } => {
                let c = load_catalog(catalog)?;
                let r = load_region(region)?;
                let m = model.load(&c)?;
                let lags = match lags {
                    Some(s) => parse_list(s)?,
                    None => {
                        let h = 0.25 * r.area_km2().sqrt();
                        (1..=10).map(|i| h * i as f64 / 10.0).collect()
                    }
                };
                let env = EnvelopeOptions {
                    n_sim: *n_sim,
                    seed: common.seed,
                    lattice: EvalLattice { nx: *resolution, ny: *resolution, nt: 1 },
                    ..EnvelopeOptions::default()
                };
                let k = weighted_k(&c, &m, &r, &lags, (*n_sim > 0).then_some(&env))?;
                out.add("kfunction.csv", k.to_csv());
                let mut series = vec![
                    Series { label: "K_w".into(), points: zip(&k.lags, &k.estimates), color: "#000000", dashed: false, step: false },
                    Series { label: "pi h^2".into(), points: zip(&k.lags, &k.reference), color: "#777777", dashed: true, step: false },
                ];
                if let Some(env) = &k.envelope {
                    let lo: Vec<f64> = env.iter().map(|e| e.0).collect();
                    let hi: Vec<f64> = env.iter().map(|e| e.1).collect();
                    series.push(Series { label: "envelope".into(), points: zip(&k.lags, &lo), color: "#3182bd", dashed: true, step: false });
                    series.push(Series { label: String::new(), points: zip(&k.lags, &hi), color: "#3182bd", dashed: true, step: false });
                }
                out.add("kfunction.svg", render_lines(&series, "Weighted K-function", "h (km)", "K_w(h)")?);
            }
            Command::Errordiag { model, catalog, region, reference, thresholds, resolution, time_slices, .. } => {
                let c = load_catalog(catalog)?;
                let region = match region {
                    Some(p) => Some(load_region(p)?),
                    None => None,
                };
                let forecast = match &model.forecast {
                    Some(p) => Some(load_forecast(p)?),
                    None => None,
                };
                let m = if forecast.is_none() { Some(model.load(&c)?) } else { None };
                let source = match (&forecast, &m) {
                    (Some(f), _) => AlarmSource::Forecast(f),
                    (None, Some(m)) => AlarmSource::Model {
                        model: m,
                        region: region.as_ref().expect("validated"),
                        window: c.window(),
                        resolution: *resolution,
                        time_slices: *time_slices,
                    },
                    (None, None) => unreachable!("model source checked"),
                };
                let d = error_diagram(&source, &c, *thresholds)?;
                out.add("errordiagram.csv", d.to_csv());
                let curve = |d: &quakecheck::summaries::ErrorDiagram| {
                    d.points.iter().map(|p| (p.nu, p.miss)).collect::<Vec<_>>()
                };
                let mut series = vec![
                    Series { label: "model".into(), points: curve(&d), color: "#000000", dashed: false, step: true },
                    Series { label: "random".into(), points: vec![(0.0, 1.0), (1.0, 0.0)], color: "#777777", dashed: true, step: false },
                ];
                if let Some(refp) = reference {
                    let rf = load_forecast(refp)?;
                    let rd = error_diagram(&AlarmSource::Forecast(&rf), &c, *thresholds)?;
                    out.add("errordiagram_reference.csv", rd.to_csv());
                    out.add("errordiagram_relative.csv", d.relative_csv(&rd));
                    series.push(Series { label: "reference".into(), points: curve(&rd), color: "#e6550d", dashed: false, step: true });
                }
                out.add("errordiagram.svg", render_lines(&series, "Error diagram", "alarm fraction", "miss fraction")?);
            }
            Command::Tessellate { catalog, region, .. } => {
                let c = load_catalog(catalog)?;
                let r = load_region(region)?;
                let pts: Vec<(f64, f64)> = c.events().iter().map(|e| (e.lon, e.lat)).collect();
                let t = voronoi_tessellation(&pts, &r)?;
                let mut csv = String::from("cell_id,lon,lat,area_km2\n");
                for (i, ((lon, lat), a)) in t.generators().iter().zip(t.areas_km2()).enumerate() {
                    let _ = writeln!(csv, "{i},{lon},{lat},{a}");
                }
                out.add("tessellation.csv", csv);
                out.add("tessellation.geojson", area_geojson(t.cells()));
            }
        }
        Ok(out)
    }
}

/// A starting point with branching ratio ½ and half the events as
/// background.
fn default_hawkes_start(c: &Catalog, r: &Region) -> HawkesParams {
    let mut p = HawkesParams {
        mu: 0.5 * (c.len().max(1) as f64) / (r.area_km2() * c.window()),
        k: 1.0,
        c: 0.01,
        p: 1.2,
        a: 1.0,
        d: 1.0,
        q: 1.5,
        m0: c.m0(),
    };
    let gr = GutenbergRichter::new(c.m0());
    p.k = 0.5 / (gr.mean_exp(p.a) * p.temporal_mass(f64::INFINITY) * p.spatial_mass());
    p
}

fn zip(x: &[f64], y: &[f64]) -> Vec<(f64, f64)> {
    x.iter().copied().zip(y.iter().copied()).collect()
}

fn parse_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("bad number `{t}`")))
        })
        .collect()
}

fn test_list(spec: Option<&str>, pairwise: bool) -> Result<Vec<char>, CliError> {
    let default = if pairwise { "n,l,m,s,r,t,w" } else { "n,l,m,s" };
    let mut out = Vec::new();
    for t in spec.unwrap_or(default).split(',') {
        let t = t.trim().to_ascii_lowercase();
        match t.as_str() {
            "n" | "l" | "m" | "s" | "r" | "t" | "w" => {
                let ch = t.chars().next().expect("non-empty");
                if !out.contains(&ch) {
                    out.push(ch);
                }
            }
            _ => return Err(CliError::Config(format!("unknown test `{t}`"))),
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn run_tests(
    out: &mut Outputs,
    common: &Common,
    forecast: &Path,
    forecast_b: Option<&Path>,
    catalog: &Path,
    tests: Option<&str>,
    n_sim: usize,
    level: f64,
) -> Result<(), CliError> {
    let a = load_forecast(forecast)?;
    let b = match forecast_b {
        Some(p) => Some(load_forecast(p)?),
        None => None,
    };
    let c = load_catalog(catalog)?;
    let counts = bin_counts(&c, a.grid()).counts;
    let cfg = TestConfig { n_sim, level, seed: common.seed };
    let mut single: Vec<TestResult> = Vec::new();
    let mut pair: Vec<PairwiseResult> = Vec::new();
    for t in test_list(tests, b.is_some())? {
        match t {
            'n' => single.push(n_test(&a, &counts, level)?),
            'l' => single.push(l_test(&a, &counts, &cfg)?),
            'm' => single.push(m_test(&a, &counts, &cfg)?),
            's' => single.push(s_test(&a, &counts, &cfg)?),
            'r' => {
                let b = b.as_ref().expect("validated");
                let mut ab = r_test(&a, b, &counts, &cfg)?;
                ab.name = "R_AB".into();
                let mut ba = r_test(b, &a, &counts, &cfg)?;
                ba.name = "R_BA".into();
                pair.extend([ab, ba]);
            }
            't' => pair.push(t_test_pairwise(&a, b.as_ref().expect("validated"), &counts, level)?),
            _ => pair.push(w_test_pairwise(&a, b.as_ref().expect("validated"), &counts, level)?),
        }
    }
    out.add("results.csv", results_csv(&single, &pair));
    out.add("simulations.csv", simulations_csv(&single, &pair));
    let hists = single
        .iter()
        .map(|t| (&t.name, &t.sim_statistics, t.statistic))
        .chain(pair.iter().map(|p| (&p.name, &p.sim_statistics, p.statistic)));
    for (name, sims, obs) in hists {
        if !sims.is_empty() {
            out.add(format!("hist_{name}.svg"), render_histogram(sims, obs, name, 30)?);
        }
    }
    Ok(())
}

/// Signed `1 − p` per cell: p is the Poisson tail in the direction of the
/// raw residual, positive where more events were seen than expected.
fn pvalue_values(px: &PixelResiduals) -> Vec<Option<f64>> {
    px.observed
        .iter()
        .zip(&px.expected)
        .map(|(&n, &l)| {
            if !(l > 0.0) {
                return None;
            }
            let raw = n as f64 - l;
            Some(if raw > 0.0 {
                1.0 - poisson_sf_inclusive(n, l)
            } else if raw < 0.0 {
                -(1.0 - poisson_cdf(n, l))
            } else {
                0.0
            })
        })
        .collect()
}

/// CSV, GeoJSON and SVG map for a cell residual set. The map is drawn from
/// the GeoJSON text so the two cannot disagree.
fn emit_cells(
    out: &mut Outputs,
    stem: &str,
    set: &CellResidualSet,
    bound: Option<f64>,
    pvalues: Option<Vec<Option<f64>>>,
) -> Result<(), CliError> {
    let geojson = set.to_geojson();
    let mut cells = cells_from_geojson(&geojson)?;
    let scale = if let Some(pv) = pvalues {
        for (c, v) in cells.iter_mut().zip(pv) {
            c.value = v;
            c.flagged = v.is_none();
        }
        DivergingScale { bound: 1.0 }
    } else {
        match bound {
            Some(b) if b > 0.0 => DivergingScale { bound: b },
            Some(b) => return Err(CliError::Config(format!("--bound {b} must be > 0"))),
            None => DivergingScale::fit(&cells),
        }
    };
    let title = format!("{} residuals", set.kind.as_str());
    out.add(format!("{stem}.csv"), set.to_csv());
    out.add(format!("{stem}.geojson"), geojson);
    out.add(format!("{stem}.svg"), render_map(&cells, &scale, &title)?);
    Ok(())
}

fn emit_points(out: &mut Outputs, ps: &ResidualPointSet, rng: &mut RngStream) -> Result<(), CliError> {
    out.add("points.csv", ps.to_csv());
    let mut csv = String::from("method,n_points,statistic,p_value,df\n");
    for m in [HomogeneityMethod::Quadrat, HomogeneityMethod::KFunction] {
        let h = homogeneity_test(ps, m, rng)?;
        let p = h.p_value.map_or_else(|| "NA".to_string(), |p| p.to_string());
        let _ = writeln!(csv, "{},{},{},{p},{}", m.as_str(), h.n_points, h.statistic, h.df);
    }
    out.add("homogeneity.csv", csv);
    Ok(())
}

fn area_geojson(cells: &[Vec<(f64, f64)>]) -> String {
    let mut s = String::from("{\"type\":\"FeatureCollection\",\"features\":[");
    for (i, ring) in cells.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str("{\"type\":\"Feature\",\"geometry\":{\"type\":\"Polygon\",\"coordinates\":[[");
        for (k, (lon, lat)) in ring.iter().chain(ring.first()).enumerate() {
            if k > 0 {
                s.push(',');
            }
            let _ = write!(s, "[{lon},{lat}]");
        }
        let area = if ring.len() >= 3 { polygon_area_km2(ring) } else { 0.0 };
        let _ = write!(s, "]]}},\"properties\":{{\"cell_id\":{i},\"area_km2\":{area}}}}}");
    }
    s.push_str("]}\n");
    s
}
