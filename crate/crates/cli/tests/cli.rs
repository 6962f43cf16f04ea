use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dvs_core::screen::{screen, ScreenConfig, Sparsity};
use dvs_core::{local_loss, ClusterSpec, CoefVector, DataShard, Family, Transport};
use ndarray::{Array1, Array2};
use serde_json::Value;

fn dvs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dvs")).args(args).output().expect("spawn dvs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(o: &Output) -> Value {
    assert!(o.status.success(), "dvs failed: {}", stderr(o));
    serde_json::from_slice(&o.stdout).expect("result JSON on stdout")
}

fn simulate(dir: &Path, example: &str, n: &str, p: &str, m: &str, seed: &str) {
    let o = dvs(&["simulate", "--example", example, "--N", n, "--p", p, "--m", m, "--seed", seed, "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn support(v: &Value) -> Vec<u64> {
    v["support"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect()
}

fn write_csv(path: &Path, rows: &[Vec<f64>]) {
    let text: String = rows
        .iter()
        .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    fs::write(path, text).unwrap();
}

/// Small Gaussian design: `y = x1 - 2 x2 + 0.5 x3 + noise` with a fixed pseudo-random pattern.
fn tiny_rows(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let t = i as f64;
            let x = [(t * 0.77).sin() * 1.3, (t * 1.91).cos(), ((t * 0.37).sin() + (t * 2.3).cos()) * 0.8];
            let y = x[0] - 2.0 * x[1] + 0.5 * x[2] + 0.3 * (t * 5.17).sin();
            vec![y, x[0], x[1], x[2]]
        })
        .collect()
}

#[test]
fn simulate_writes_one_file_per_shard_plus_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    simulate(&d, "2.1", "1000", "500", "10", "7");
    let mut names: Vec<String> = fs::read_dir(&d).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names.len(), 11);
    assert_eq!(names[0], "shard_000.csv");
    assert_eq!(names[10], "truth.json");
    let truth: Value = serde_json::from_str(&fs::read_to_string(d.join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["support"], serde_json::json!([2, 4, 6]));
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    for fmt in ["csv", "bin"] {
        let (a, b) = (tmp.path().join(format!("a{fmt}")), tmp.path().join(format!("b{fmt}")));
        for dir in [&a, &b] {
            let o = dvs(&["simulate", "--example", "1.2", "--N", "200", "--p", "30", "--m", "4", "--seed", "5", "--format", fmt, "--out", dir.to_str().unwrap()]);
            assert!(o.status.success(), "{}", stderr(&o));
        }
        for e in fs::read_dir(&a).unwrap() {
            let name = e.unwrap().file_name();
            assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?} differs");
        }
    }
}

#[test]
fn indivisible_n_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dvs(&["simulate", "--example", "2.1", "--N", "1001", "--p", "500", "--m", "10", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("N must be divisible by m"), "{}", stderr(&o));
}

#[test]
fn unknown_method_lists_the_valid_ones() {
    let o = dvs(&["bench", "--scenario", "1.1", "--N", "60", "--p", "30", "--m", "2", "--T", "1", "--methods", "dvs,pearsn"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    for m in ["dvs", "pearson", "kendall", "sirs", "dcor"] {
        assert!(e.contains(m), "{e}");
    }
}

#[test]
fn missing_data_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere");
    let o = dvs(&["screen", "--data", missing.to_str().unwrap(), "--family", "gaussian", "--k", "1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("nowhere"), "{}", stderr(&o));
}

#[test]
fn non_binary_response_reports_the_row() {
    let tmp = tempfile::tempdir().unwrap();
    let f = tmp.path().join("bad.csv");
    write_csv(&f, &[vec![1.0, 0.1, 0.2], vec![0.0, 1.0, 0.3], vec![2.0, 0.4, 0.5], vec![1.0, 0.2, 0.1]]);
    let o = dvs(&["screen", "--data", f.to_str().unwrap(), "--m", "1", "--family", "logistic", "--k", "1"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("row 3"), "{}", stderr(&o));
}

#[test]
fn case_21_screen_keeps_the_true_support() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    simulate(&d, "2.1", "1000", "500", "10", "7");
    let v = json(&dvs(&["screen", "--data", d.to_str().unwrap(), "--family", "logistic", "--k-max", "20"]));
    let s = support(&v);
    assert!([2, 4, 6].iter().all(|j| s.contains(j)), "support {s:?}");
    assert_eq!(v["schema"], "dvs-result-v1");
    assert_eq!(v["ebic_trace"].as_array().unwrap().len(), 20);
}

#[test]
fn full_sparsity_recovers_least_squares() {
    let tmp = tempfile::tempdir().unwrap();
    let f = tmp.path().join("tiny.csv");
    let rows = tiny_rows(40);
    write_csv(&f, &rows);
    let v = json(&dvs(&[
        "screen", "--data", f.to_str().unwrap(), "--m", "1", "--family", "gaussian", "--k", "3", "--no-standardize", "--epsilon", "1e-10", "--max-iter", "100000",
    ]));
    assert_eq!(support(&v), vec![1, 2, 3]);

    // normal equations solved by Cramer's rule
    let mut xtx = [[0.0; 3]; 3];
    let mut xty = [0.0; 3];
    for r in &rows {
        for a in 0..3 {
            xty[a] += r[a + 1] * r[0];
            for b in 0..3 {
                xtx[a][b] += r[a + 1] * r[b + 1];
            }
        }
    }
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d0 = det(&xtx);
    let coefs = v["coefficients"].as_array().unwrap();
    for j in 0..3 {
        let mut mj = xtx;
        for a in 0..3 {
            mj[a][j] = xty[a];
        }
        let ols = det(&mj) / d0;
        let got = coefs[j]["value"].as_f64().unwrap();
        assert!((got - ols).abs() <= 1e-6, "coefficient {j}: {got} vs {ols}");
    }
}

#[test]
fn single_machine_matches_centralized_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let f = tmp.path().join("tiny.csv");
    let rows = tiny_rows(60);
    write_csv(&f, &rows);
    let v = json(&dvs(&["screen", "--data", f.to_str().unwrap(), "--m", "1", "--family", "gaussian", "--k", "2", "--no-standardize"]));

    let x = Array2::from_shape_fn((60, 3), |(i, j)| rows[i][j + 1]);
    let y = Array1::from_shape_fn(60, |i| rows[i][0]);
    let shard = DataShard::new(0, x, y).unwrap();
    let cluster = ClusterSpec::new(vec![shard.clone()], Transport::InProcess).unwrap();
    let cfg = ScreenConfig { sparsity: Sparsity::Fixed(2), ..Default::default() };
    let central = screen(&cluster, Family::Gaussian, &cfg).unwrap();

    let got: Vec<u64> = central.support().iter().map(|j| *j as u64 + 1).collect();
    assert_eq!(support(&v), got);
    assert_eq!(v["iterations"].as_u64().unwrap() as usize, central.run.iterations);
    let beta: Vec<f64> = (0..3)
        .map(|j| {
            v["coefficients"]
                .as_array()
                .unwrap()
                .iter()
                .find(|c| c["index"].as_u64() == Some(j + 1))
                .map_or(0.0, |c| c["value"].as_f64().unwrap())
        })
        .collect();
    assert_eq!(beta, central.run.beta.values().to_vec());
    let pooled = local_loss(&shard, &CoefVector::from_vec(beta), Family::Gaussian).unwrap();
    assert!((v["surrogate_loss"].as_f64().unwrap() - pooled).abs() <= 1e-12);
}

#[test]
fn result_json_round_trips_as_config() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    simulate(&d, "1.2", "400", "40", "4", "9");
    let first_path = tmp.path().join("first.json");
    let o = dvs(&["screen", "--data", d.to_str().unwrap(), "--family", "gaussian", "--k-max", "8", "--lambda-c", "0.7", "--out", first_path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first: Value = serde_json::from_str(&fs::read_to_string(&first_path).unwrap()).unwrap();
    let second = json(&dvs(&["screen", "--config", first_path.to_str().unwrap()]));
    assert_eq!(first["config"], second["config"]);
    assert_eq!(first["support"], second["support"]);
    assert_eq!(first["coefficients"], second["coefficients"]);

    let overridden = json(&dvs(&["screen", "--config", first_path.to_str().unwrap(), "--k", "2"]));
    assert_eq!(overridden["k"], 2);
}

#[test]
fn trace_has_one_line_per_iteration() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    simulate(&d, "1.1", "200", "20", "2", "3");
    let trace = tmp.path().join("trace.jsonl");
    let v = json(&dvs(&["screen", "--data", d.to_str().unwrap(), "--family", "gaussian", "--k", "5", "--trace", trace.to_str().unwrap()]));
    let lines = fs::read_to_string(&trace).unwrap();
    assert_eq!(lines.lines().count() as u64, v["iterations"].as_u64().unwrap() + 1);
    for l in lines.lines() {
        serde_json::from_str::<Value>(l).unwrap();
    }
}

#[test]
fn bench_writes_the_metrics_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("t.csv");
    let o = dvs(&["bench", "--scenario", "1.1", "--N", "600", "--p", "300", "--m", "5", "--T", "20", "--methods", "dvs", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,T,SC,CF,AMS,PSR,FDR,failures");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("dvs,20,"));
    assert!(tmp.path().join("t.json").is_file());
}

#[test]
fn reduced_scale_logistic_bench_has_smallest_dvs_fdr() {
    let o = dvs(&["bench", "--scenario", "2.1", "--N", "1000", "--p", "500", "--m", "10", "--T", "20", "--seed", "31000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<(String, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            (cols[0].to_string(), cols[6].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 9, "{csv}");
    let dvs_fdr = rows[0].1;
    assert_eq!(rows[0].0, "dvs");
    for (name, fdr) in &rows[1..] {
        assert!(dvs_fdr < *fdr, "dvs FDR {dvs_fdr} vs {name} {fdr}\n{csv}");
    }
}
