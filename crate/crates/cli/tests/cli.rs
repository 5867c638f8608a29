mod common;

use std::fs;

use common::{snapshot, Fixture};
use quakecheck::intensity::{FittedModel, HawkesModel, IntensityModel};
use quakecheck::residuals::{deviance_residuals, voronoi_residuals};
use quakecheck_cli::{EXIT_CONFIG, EXIT_DATA, EXIT_OK, MANIFEST};
use sha2::{Digest, Sha256};

fn args(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|x| x.to_string()).collect()
}

#[test]
fn every_command_is_deterministic_across_thread_counts() {
    let fx = Fixture::new();
    for (i, cmd) in fx.command_suite().into_iter().enumerate() {
        let mut runs = Vec::new();
        for (j, threads) in ["1", "1", "4"].iter().enumerate() {
            let out = fx.out(&format!("det_{i}_{j}"));
            let mut a = cmd.clone();
            a.extend(args(&["--seed", "7", "--threads", threads]));
            assert_eq!(fx.run(&a, &out), EXIT_OK, "{cmd:?}");
            runs.push(snapshot(&out));
        }
        assert!(runs[0].len() >= 2, "{cmd:?} wrote {:?}", runs[0]);
        assert_eq!(runs[0], runs[1], "{cmd:?}");
        assert_eq!(runs[0], runs[2], "{cmd:?}");
    }
}

#[test]
fn manifest_lists_every_artifact_with_its_hash() {
    let fx = Fixture::new();
    let out = fx.out("m");
    let c = Fixture::s(&fx.catalog);
    let f = Fixture::s(&fx.forecast_a);
    let a = args(&["test", "--forecast", &f, "--catalog", &c, "--tests", "n,l", "--seed", "7"]);
    assert_eq!(fx.run(&a, &out), EXIT_OK);
    let manifest = fs::read_to_string(out.join(MANIFEST)).unwrap();
    assert!(manifest.contains("# command = test\n"));
    assert!(manifest.contains("# seed = 7\n"));
    assert!(manifest.contains("# tests = n,l\n"));
    let mut listed = Vec::new();
    for line in manifest.lines().filter(|l| !l.starts_with('#')) {
        let (name, hash) = line.split_once('\t').unwrap();
        let bytes = fs::read(out.join(name)).unwrap();
        assert_eq!(hash, hex::encode(Sha256::digest(&bytes)));
        listed.push(name.to_string());
    }
    let mut on_disk: Vec<String> = snapshot(&out).into_iter().map(|(n, _)| n).collect();
    on_disk.retain(|n| n != MANIFEST);
    listed.sort();
    assert_eq!(listed, on_disk);
    assert!(on_disk.iter().all(|n| !n.ends_with(".tmp")));
}

#[test]
fn missing_input_is_a_config_error_with_no_outputs() {
    let fx = Fixture::new();
    let out = fx.out("missing");
    let f = Fixture::s(&fx.forecast_a);
    let a = args(&["test", "--forecast", &f, "--catalog", "/nonexistent/catalog.csv"]);
    assert_eq!(fx.run(&a, &out), EXIT_CONFIG);
    assert!(!out.exists());
}

#[test]
fn unknown_subcommand_and_bad_flags_exit_2() {
    let fx = Fixture::new();
    let out = fx.out("bad");
    assert_eq!(fx.run(&args(&["frobnicate"]), &out), EXIT_CONFIG);
    let r = Fixture::s(&fx.region);
    // Two model sources at once.
    let a = args(&["simulate", "--rate", "0.1", "--params", &Fixture::s(&fx.params), "--region", &r]);
    assert_eq!(fx.run(&a, &out), EXIT_CONFIG);
    let a = args(&["test", "--forecast", &Fixture::s(&fx.forecast_a), "--catalog", &Fixture::s(&fx.catalog), "--tests", "r"]);
    assert_eq!(fx.run(&a, &out), EXIT_CONFIG);
    assert!(!out.exists());
}

#[test]
fn malformed_data_exits_3_with_no_outputs() {
    let fx = Fixture::new();
    let bad = fx.out("bad_catalog.csv");
    fs::write(&bad, "time,lon,lat,mag\n1.0,zero,0.5,3.5\n").unwrap();
    let out = fx.out("data_err");
    let a = args(&["tessellate", "--catalog", &Fixture::s(&bad), "--region", &Fixture::s(&fx.region)]);
    assert_eq!(fx.run(&a, &out), EXIT_DATA);
    assert!(!out.exists());
}

#[test]
fn config_file_supplies_flags_and_command_line_wins() {
    let fx = Fixture::new();
    let cfg = fx.out("run.conf");
    fs::write(
        &cfg,
        format!(
            "# comment\nforecast = {}\ncatalog = {}\ntests = n,l\nn_sim = 50\nseed = 3\n",
            Fixture::s(&fx.forecast_a),
            Fixture::s(&fx.catalog)
        ),
    )
    .unwrap();
    let from_file = fx.out("cfg_a");
    let a = args(&["test", "--config", &Fixture::s(&cfg)]);
    assert_eq!(fx.run(&a, &from_file), EXIT_OK);
    let m = fs::read_to_string(from_file.join(MANIFEST)).unwrap();
    assert!(m.contains("# seed = 3\n") && m.contains("# n-sim = 50\n"), "{m}");

    let overridden = fx.out("cfg_b");
    let a = args(&["test", "--config", &Fixture::s(&cfg), "--seed", "9"]);
    assert_eq!(fx.run(&a, &overridden), EXIT_OK);
    let m = fs::read_to_string(overridden.join(MANIFEST)).unwrap();
    assert!(m.contains("# seed = 9\n"), "{m}");

    // Same as giving every flag directly.
    let direct = fx.out("cfg_c");
    let a = args(&[
        "test", "--forecast", &Fixture::s(&fx.forecast_a), "--catalog", &Fixture::s(&fx.catalog),
        "--tests", "n,l", "--n-sim", "50", "--seed", "3",
    ]);
    assert_eq!(fx.run(&a, &direct), EXIT_OK);
    assert_eq!(snapshot(&from_file), snapshot(&direct));
}

#[test]
fn voronoi_geojson_matches_library_csv() {
    let fx = Fixture::new();
    let out = fx.out("vor");
    let a = args(&[
        "residuals", "--kind", "voronoi", "--params", &Fixture::s(&fx.params), "--region",
        &Fixture::s(&fx.region), "--catalog", &Fixture::s(&fx.catalog), "--resolution", "60",
    ]);
    assert_eq!(fx.run(&a, &out), EXIT_OK);

    let c = common::catalog();
    let FittedModel::Hawkes(p) = FittedModel::parse(&fs::read_to_string(&fx.params).unwrap()).unwrap() else {
        panic!("expected Hawkes parameters");
    };
    let model = IntensityModel::Hawkes(HawkesModel::new(p, None, c.clone()).unwrap());
    let lib = voronoi_residuals(&model, &c, &common::region(), 60).unwrap();
    assert_eq!(fs::read_to_string(out.join("residuals.csv")).unwrap(), lib.residuals.to_csv());

    let gj: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("residuals.geojson")).unwrap()).unwrap();
    let feats = gj["features"].as_array().unwrap();
    assert_eq!(feats.len(), lib.residuals.values.len());
    for (f, v) in feats.iter().zip(&lib.residuals.values) {
        assert_eq!(f["properties"]["value"].as_f64().unwrap(), *v);
    }
}

/// Parses `data-cell="i" ... fill="#rrggbb"` polygons out of a map.
fn fills(svg: &str) -> Vec<(usize, (u8, u8, u8))> {
    svg.lines()
        .filter(|l| l.contains("<polygon data-cell="))
        .map(|l| {
            let id = l.split("data-cell=\"").nth(1).unwrap().split('"').next().unwrap();
            let fill = l.split("fill=\"#").nth(1).unwrap();
            let c = |i: usize| u8::from_str_radix(&fill[i..i + 2], 16).unwrap();
            (id.parse().unwrap(), (c(0), c(2), c(4)))
        })
        .collect()
}

#[test]
fn deviance_map_is_blue_exactly_where_deviance_is_positive() {
    let fx = Fixture::new();
    let out = fx.out("dev");
    let a = args(&[
        "residuals", "--kind", "deviance", "--forecast", &Fixture::s(&fx.forecast_a),
        "--forecast-b", &Fixture::s(&fx.forecast_b), "--catalog", &Fixture::s(&fx.catalog),
    ]);
    assert_eq!(fx.run(&a, &out), EXIT_OK);
    let c = common::catalog();
    let (fa, fb) = common::forecasts(&c);
    let lib = deviance_residuals(&fa, &fb, &c).unwrap();
    assert!(lib.values.iter().any(|v| *v > 0.0) && lib.values.iter().any(|v| *v < 0.0));

    let f = fills(&fs::read_to_string(out.join("residuals.svg")).unwrap());
    assert_eq!(f.len(), lib.values.len());
    for (id, (r, g, b)) in f {
        let v = lib.values[id];
        let blue = b == 255 && r == g && r < 255;
        let red = r == 255 && g == b && g < 255;
        assert_eq!(blue, v > 0.0, "cell {id} value {v} fill {r},{g},{b}");
        assert_eq!(red, v < 0.0, "cell {id} value {v}");
    }
}

#[test]
fn pvalue_scale_stays_within_unit_bound() {
    let fx = Fixture::new();
    let out = fx.out("pv");
    let a = args(&[
        "residuals", "--kind", "raw", "--forecast", &Fixture::s(&fx.forecast_a), "--catalog",
        &Fixture::s(&fx.catalog), "--pvalue-scale",
    ]);
    assert_eq!(fx.run(&a, &out), EXIT_OK);
    let svg = fs::read_to_string(out.join("residuals.svg")).unwrap();
    assert!(svg.contains(">-1.000<") && svg.contains(">1.000<"), "legend bounds");
}

#[test]
fn fit_output_feeds_back_as_params() {
    let fx = Fixture::new();
    let out = fx.out("fit");
    let a = args(&[
        "fit", "--catalog", &Fixture::s(&fx.catalog), "--region", &Fixture::s(&fx.region),
        "--params", &Fixture::s(&fx.params),
    ]);
    assert_eq!(fx.run(&a, &out), EXIT_OK);
    let text = fs::read_to_string(out.join("fit.txt")).unwrap();
    assert!(matches!(FittedModel::parse(&text).unwrap(), FittedModel::Hawkes(_)));
    let sim = fx.out("sim");
    let a = args(&[
        "simulate", "--params", &Fixture::s(&out.join("fit.txt")), "--region",
        &Fixture::s(&fx.region), "--window", "50",
    ]);
    assert_eq!(fx.run(&a, &sim), EXIT_OK);
    quakecheck::parse_catalog(&fs::read_to_string(sim.join("catalog.csv")).unwrap()).unwrap();
}

#[test]
fn help_exits_cleanly() {
    assert_eq!(quakecheck_cli::run(["quakecheck", "--help"]), EXIT_OK);
}
