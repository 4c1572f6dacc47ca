use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use drm_el::estimators::Method;
use drm_el::pipeline::{ingest_reader, run_resample_study, ColumnSpec, Populations, ResampleStudy, ValueTransform};
use drm_el::{fit_mele, BasisSpec, Generator, RunOptions, SolverOptions};

fn columns() -> ColumnSpec {
    ColumnSpec {
        value_column: "value".into(),
        group_column: "group".into(),
        transform: ValueTransform::None,
    }
}

fn populations(groups: &[(&str, &[f64])]) -> Populations {
    let mut csv = String::from("group,value\n");
    for (g, values) in groups {
        for v in *values {
            writeln!(csv, "{g},{v}").unwrap();
        }
    }
    ingest_reader(csv.as_bytes(), &columns()).unwrap()
}

fn study(base: &str, targets: &[&str], n0: usize, n: usize, reps: usize) -> ResampleStudy {
    ResampleStudy {
        base: base.into(),
        targets: targets.iter().map(|t| t.to_string()).collect(),
        n0_grid: vec![n0],
        n_grid: vec![n],
        reps,
        seed: 42,
        levels: vec![0.1, 0.5, 0.9],
        methods: vec![Method::Drm, Method::ParametricNormal, Method::Empirical],
        bases: vec![BasisSpec::linear()],
    }
}

#[test]
fn tiny_populations_give_a_consistent_table() {
    let base: Vec<f64> = (0..20).map(|i| 1.0 + 0.37 * i as f64).collect();
    let t1: Vec<f64> = (0..10).map(|i| 2.0 + 0.61 * i as f64).collect();
    let t2: Vec<f64> = (0..10).map(|i| 0.5 + 0.44 * i as f64).collect();
    let pops = populations(&[("base", &base), ("a", &t1), ("b", &t2)]);
    let s = study("base", &["a", "b"], 20, 10, 50);
    let table = run_resample_study(&s, &pops, &RunOptions::default()).unwrap();
    assert_eq!(table.rows.len(), 3 * 3);
    for row in &table.rows {
        assert!(row.scaled_var >= 0.0 && row.abs_bias >= 0.0);
        assert!(row.abs_bias <= row.scaled_bias.abs() + 1e-12);
        let gap = row.scaled_mse - row.scaled_var - row.scaled_bias.powi(2);
        assert!(gap.abs() <= 1e-9 * row.scaled_mse.max(1.0), "{row:?}");
    }
    let mut out = Vec::new();
    table.write_csv(&mut out, true).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("scenario_id,p,method,scaled_bias,scaled_var,scaled_mse,fail_frac,abs_bias"));
    assert!(text.contains("n0=20/n=10,0.5,drm:linear,"));
}

#[test]
fn drm_beats_empirical_on_an_exactly_tilted_population() {
    // Target population: every base point repeated in proportion to exp(0.5 x),
    // so the target is an exact exponential tilt of the base.
    let base = Generator::Normal { mu: 0.0, sigma: 1.0 }.sample(&mut ChaCha8Rng::seed_from_u64(9), 4000);
    let target: Vec<f64> = base
        .iter()
        .flat_map(|&x| std::iter::repeat_n(x, (4.0 * (0.5 * x).exp()).round() as usize))
        .collect();
    let pops = populations(&[("base", &base), ("tilt", &target)]);
    let mut s = study("base", &["tilt"], 2500, 100, 500);
    s.methods = vec![Method::Drm, Method::Empirical];
    let table = run_resample_study(&s, &pops, &RunOptions::default()).unwrap();
    for p in [0.1, 0.5, 0.9] {
        let drm = table.row("n0=2500/n=100", p, Method::Drm).unwrap().scaled_mse;
        let emp = table.row("n0=2500/n=100", p, Method::Empirical).unwrap().scaled_mse;
        assert!(drm < emp, "p={p}: drm {drm} vs empirical {emp}");
    }
}

#[test]
fn identical_populations_center_theta_at_zero() {
    let pop = Generator::Exponential { mean: 3.0 }.sample(&mut ChaCha8Rng::seed_from_u64(4), 3000);
    let pops = populations(&[("y", &pop)]);
    let s = study("y", &["y"], 300, 300, 200);
    let slopes: Vec<f64> = (0..s.reps as u64)
        .map(|r| {
            let data = s.replicate_samples(&pops, 0, r).unwrap().remove(0);
            fit_mele(&data, &BasisSpec::linear(), &SolverOptions::default()).unwrap().theta_hat[1]
        })
        .collect();
    let m = slopes.len() as f64;
    let mean = slopes.iter().sum::<f64>() / m;
    let sd = (slopes.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
    assert!(mean.abs() <= 3.0 * sd / m.sqrt(), "mean {mean}, sd {sd}");
}

#[test]
fn study_is_reproducible_across_worker_counts() {
    let base: Vec<f64> = (1..=60).map(|i| (i as f64).ln()).collect();
    let target: Vec<f64> = (1..=30).map(|i| (1.5 * i as f64).ln()).collect();
    let pops = populations(&[("2015", &base), ("2016", &target)]);
    let s = study("2015", &["2016"], 60, 30, 40);
    let one = run_resample_study(&s, &pops, &RunOptions { workers: Some(1), ..Default::default() }).unwrap();
    let three = run_resample_study(&s, &pops, &RunOptions { workers: Some(3), ..Default::default() }).unwrap();
    assert_eq!(one, three);
}

#[test]
fn log_transform_accounting() {
    let csv = "team,year,revenue\nA,2015,100\nB,2015,0\nC,2015,NA\nD,2016,250\nE,2016,-3\n";
    let spec = ColumnSpec {
        value_column: "revenue".into(),
        group_column: "year".into(),
        transform: ValueTransform::Log,
    };
    let pops = ingest_reader(csv.as_bytes(), &spec).unwrap();
    assert_eq!(pops.rows_in, 5);
    assert_eq!(pops.rows_used, 2);
    assert_eq!(pops.rows_in, pops.rows_used + pops.rows_dropped);
    assert!((pops.get("2015").unwrap()[0] - 100f64.ln()).abs() < 1e-15);
    assert!((pops.get("2016").unwrap()[0] - 250f64.ln()).abs() < 1e-15);
}
