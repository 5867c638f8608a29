#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use quakecheck::intensity::{GutenbergRichter, HawkesParams};
use quakecheck::simulate::{simulate_hawkes, RngStream};
use quakecheck::{bin_counts, BinGrid, Catalog, GriddedForecast, MagBand, Region};

pub const WINDOW: f64 = 200.0;

pub fn region() -> Region {
    Region::rectangle(0.0, 2.0, 0.0, 2.0).unwrap()
}

pub fn truth() -> HawkesParams {
    let mut p = HawkesParams { mu: 0.0, k: 1.0, c: 0.05, p: 1.5, a: 1.0, d: 0.5, q: 2.0, m0: 3.0 };
    let gr = GutenbergRichter::new(p.m0);
    p.k = 0.4 / (gr.mean_exp(p.a) * p.temporal_mass(f64::INFINITY) * p.spatial_mass());
    p.mu = 60.0 * 0.6 / (region().area_km2() * WINDOW);
    p
}

pub fn catalog() -> Catalog {
    simulate_hawkes(&truth(), &region(), WINDOW, &mut RngStream::new(11, 0)).unwrap()
}

fn grid() -> BinGrid {
    BinGrid::regular(
        (0.0, 2.0),
        (0.0, 2.0),
        4,
        4,
        vec![MagBand::new(3.0, 4.0), MagBand::new(4.0, 10.0)],
    )
    .unwrap()
}

/// Two forecasts with the same total: B is flat, A follows the observed
/// counts in the western half of the grid and a shuffled copy in the east,
/// so each model wins some cells.
pub fn forecasts(c: &Catalog) -> (GriddedForecast, GriddedForecast) {
    let g = grid();
    let counts = bin_counts(c, &g).counts;
    let total = c.len() as f64;
    let raw: Vec<f64> = (0..counts.len())
        .map(|i| {
            let east = (i / g.n_bands()) % 4 >= 2;
            let j = if east { (i * 7 + 3) % counts.len() } else { i };
            counts[j] as f64 + 0.5
        })
        .collect();
    let s: f64 = raw.iter().sum();
    let a: Vec<f64> = raw.iter().map(|r| r * total / s).collect();
    let b = vec![total / g.len() as f64; g.len()];
    (
        GriddedForecast::new(g.clone(), a, c.window()).unwrap(),
        GriddedForecast::new(g, b, c.window()).unwrap(),
    )
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub catalog: PathBuf,
    pub region: PathBuf,
    pub forecast_a: PathBuf,
    pub forecast_b: PathBuf,
    pub params: PathBuf,
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let c = catalog();
        let (a, b) = forecasts(&c);
        let put = |name: &str, text: String| {
            let p = dir.path().join(name);
            fs::write(&p, text).unwrap();
            p
        };
        let t = truth();
        let params = format!(
            "mu = {}\nK = {}\nc = {}\np = {}\na = {}\nd = {}\nq = {}\nm0 = {}\n",
            t.mu, t.k, t.c, t.p, t.a, t.d, t.q, t.m0
        );
        Fixture {
            catalog: put("catalog.csv", c.to_csv()),
            region: put("region.csv", region().to_csv()),
            forecast_a: put("fa.csv", a.to_csv()),
            forecast_b: put("fb.csv", b.to_csv()),
            params: put("params.txt", params),
            dir,
        }
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn s(p: &Path) -> String {
        p.to_string_lossy().into_owned()
    }

    /// Runs the CLI with `args` followed by `--out <dir>`.
    pub fn run(&self, args: &[String], out: &Path) -> i32 {
        let mut argv = vec!["quakecheck".to_string()];
        argv.extend(args.iter().cloned());
        argv.push("--out".into());
        argv.push(Self::s(out));
        quakecheck_cli::run(argv)
    }

    /// One argument list per subcommand, all cheap enough for repeated runs.
    pub fn command_suite(&self) -> Vec<Vec<String>> {
        let (c, r, fa, fb, pa) = (
            Self::s(&self.catalog),
            Self::s(&self.region),
            Self::s(&self.forecast_a),
            Self::s(&self.forecast_b),
            Self::s(&self.params),
        );
        let v = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        vec![
            v(&["fit", "--catalog", &c, "--region", &r, "--family", "homogeneous"]),
            v(&["fit", "--catalog", &c, "--region", &r, "--params", &pa]),
            v(&["simulate", "--params", &pa, "--region", &r, "--window", "100"]),
            v(&["simulate", "--forecast", &fa]),
            v(&["test", "--forecast", &fa, "--forecast-b", &fb, "--catalog", &c, "--n-sim", "200"]),
            v(&["residuals", "--kind", "pearson", "--forecast", &fa, "--catalog", &c, "--pvalue-scale"]),
            v(&["residuals", "--kind", "deviance", "--forecast", &fa, "--forecast-b", &fb, "--catalog", &c]),
            v(&["residuals", "--kind", "voronoi", "--params", &pa, "--region", &r, "--catalog", &c, "--resolution", "60"]),
            v(&["residuals", "--kind", "superthin", "--params", &pa, "--region", &r, "--catalog", &c, "--resolution", "40", "--time-slices", "20"]),
            v(&["residuals", "--kind", "rescale", "--params", &pa, "--region", &r, "--catalog", &c]),
            v(&["kfn", "--params", &pa, "--region", &r, "--catalog", &c, "--n-sim", "19", "--resolution", "30"]),
            v(&["errordiag", "--params", &pa, "--region", &r, "--catalog", &c, "--reference", &fb, "--resolution", "30", "--time-slices", "10"]),
            v(&["tessellate", "--catalog", &c, "--region", &r]),
        ]
    }
}

/// Every file in `dir` with its bytes, sorted by name.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}
