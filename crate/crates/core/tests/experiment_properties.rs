use proptest::prelude::*;
use seqrmc::config::{Method, RunConfig};
use seqrmc::exec::Execution;
use seqrmc::experiment::{dump_fit_grid, run_experiment, run_once, GridSpec, CSV_HEADER};
use seqrmc::oracle::{binomial_oracle, OracleSpec};

fn put_config() -> RunConfig {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/put1d.toml");
    let mut cfg = RunConfig::load(path).unwrap();
    cfg.run.valuation_paths = 2000;
    cfg
}

#[test]
fn fit_grid_tracks_the_lattice_boundary() {
    let cfg = put_config();
    let problem = cfg.problem().unwrap();
    let out = run_once(&cfg, &cfg.settings(0)).unwrap();
    let step = 20; // t = 0.8
    let grid = GridSpec { lo: vec![25.0], hi: vec![45.0], points: vec![401] };
    let table = dump_fit_grid(&out.stack, &problem, step, &grid).unwrap();
    assert_eq!(table, dump_fit_grid(&out.stack, &problem, step, &grid).unwrap());

    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("x1\tmean\tvariance\tstop"));
    let rows: Vec<(f64, f64, f64, u8)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap(), f[3].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 401);
    assert!(rows.iter().all(|r| r.3 == u8::from(r.1 <= 0.0) && r.2 >= 0.0));

    // The timing value is flat near the optimal boundary, so its zero is
    // only located to within about a unit; the shape must still be right.
    let oracle = binomial_oracle(&problem, &OracleSpec::default()).unwrap();
    let boundary = oracle.boundary[step].unwrap();
    let crossings: Vec<f64> = rows.windows(2).filter(|w| w[0].3 != w[1].3).map(|w| 0.5 * (w[0].0 + w[1].0)).collect();
    let nearest = crossings.iter().map(|c| (c - boundary).abs()).fold(f64::INFINITY, f64::min);
    assert!(nearest <= 1.0, "crossings {crossings:?}, lattice boundary {boundary}");
    let at = |x: f64| rows.iter().find(|r| (r.0 - x).abs() < 1e-9).unwrap().3;
    assert_eq!(at(30.0), 1, "deep in the money must stop");
    assert_eq!(at(39.0), 0, "near the money must continue");

    assert!(dump_fit_grid(&out.stack, &problem, 0, &grid).is_err());
    assert!(dump_fit_grid(&out.stack, &problem, 25, &grid).is_err());
}

const TINY: &str = r#"
[model]
kind = "gbm"
spot = [40.0, 40.0]
rate = 0.06
vol = 0.2

[payoff]
kind = "basket-put"
strike = 40.0
horizon = 4
dt = 0.25

[design]
method = "bw"
budget = 400
cells_per_dim = 2

[run]
seed = 3
replications = 4
valuation_paths = 2000
"#;

#[test]
fn experiment_summary_and_csv() {
    let cfg = RunConfig::from_toml_str(TINY).unwrap();
    let res = run_experiment(&cfg, Execution::Parallel).unwrap();
    assert!(res.succeeded());
    assert_eq!(res.reports.len(), 4);
    let s = res.summary.unwrap();
    let vals: Vec<f64> = res.reports.iter().map(|r| r.value).collect();
    let mean = vals.iter().sum::<f64>() / 4.0;
    let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
    assert!((s.mean - mean).abs() < 1e-12);
    assert!((s.se - sd / 2.0).abs() < 1e-12);
    let csv = res.to_csv();
    assert!(csv.starts_with(CSV_HEADER));
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.lines().last().unwrap().starts_with("bw,400,summary,"));
    // Distinct replication seeds.
    let mut seeds: Vec<u64> = res.reports.iter().map(|r| r.seed).collect();
    seeds.dedup();
    assert_eq!(seeds.len(), 4);
}

#[test]
fn csv_file_is_written() {
    let cfg = RunConfig::from_toml_str(&TINY.replace("replications = 4", "replications = 1")).unwrap();
    let res = run_experiment(&cfg, Execution::Sequential).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    res.write_csv(&path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), res.to_csv());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trip(
        seed in any::<u64>(),
        budget in 400usize..10_000,
        beta in 0.0f64..10.0,
        method in prop::sample::select(vec![Method::Dt, Method::Bw, Method::Lsmc]),
        tolerance in prop::option::of(1e-6f64..10.0),
        min_leaf in prop::option::of(5usize..50),
    ) {
        let mut cfg = RunConfig::from_toml_str(TINY).unwrap();
        cfg.run.seed = seed;
        cfg.design.budget = budget;
        cfg.design.initial = 100;
        cfg.design.beta = beta;
        cfg.design.method = method;
        cfg.design.tolerance = tolerance;
        cfg.design.min_leaf = min_leaf;
        let text = cfg.to_toml_string().unwrap();
        let again = RunConfig::from_toml_str(&text).unwrap();
        prop_assert_eq!(&cfg, &again);
        prop_assert_eq!(text, again.to_toml_string().unwrap());
    }
}
