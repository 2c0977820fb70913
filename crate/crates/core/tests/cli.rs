//! End-to-end tests of the `dirac-lattice` binary.

use std::path::Path;
use std::process::{Command, Output};

use dirac_lattice::lattice::snapshot;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dirac-lattice"))
        .args(args)
        .env_remove("DIRAC_LATTICE_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Rows of the first CSV block (after the schema comment and header).
fn data_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .skip(2)
        .take_while(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

/// Rows of the `# fit` block.
fn fit_rows(csv: &str) -> Vec<Vec<String>> {
    let start = csv.find("# fit\n").expect("fit block");
    csv[start..]
        .lines()
        .skip(2)
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn symbol_sweep_schema_and_slope() {
    let o = run(&["symbol-sweep", "--d", "1", "--model", "fb", "--expect-slope", "0.9,1.1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = stdout(&o);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("# schema_version=1"));
    assert_eq!(lines.next(), Some("model,d,m,z_re,z_im,h,sup_diff,xi_argmax_1,xi_argmax_2,xi_argmax_3,grid_n"));
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 5);
    let hs: Vec<f64> = rows.iter().map(|r| r[5].parse().unwrap()).collect();
    assert_eq!(hs, vec![1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0]);
    let fit = fit_rows(&csv);
    assert_eq!(fit.len(), 1);
    let slope: f64 = fit[0][5].parse().unwrap();
    assert!((0.9..=1.1).contains(&slope));
}

#[test]
fn symbol_sweep_fails_outside_expected_slope() {
    // The unmodified symmetric model does not converge, so a rate-1 expectation fails.
    let o = run(&["symbol-sweep", "--d", "1", "--model", "s", "--expect-slope", "0.9,1.1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        vec!["symbol-sweep", "--d", "1", "--model", "fb", "--h", ""],
        vec!["symbol-sweep", "--d", "4", "--model", "fb"],
        vec!["symbol-sweep", "--d", "1", "--model", "fb", "--z", "2"],
        vec!["symbol-sweep", "--d", "1", "--model", "continuous"],
        vec!["witness", "--d", "1", "--pair", "s,s_mod"],
        vec!["doubling", "--d", "1", "--m", "1"],
        vec!["potential-gap", "--pair", "sinc"],
        vec!["potential-gap", "--z", "0.5"],
        vec!["verify", "--criterion", "11"],
        vec!["no-such-command"],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn invalid_thread_count_is_a_usage_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_dirac-lattice"))
        .args(["doubling", "--d", "1"])
        .env("DIRAC_LATTICE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn witness_reports_closed_forms() {
    let o = run(&["witness", "--d", "2", "--pair", "s,s_mod", "--h", "1/2"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["schema_version"], "1");
    assert_eq!(v["pass"], true);
    let cf = v["reports"][0]["closed_form"].as_f64().unwrap();
    assert!((cf - 8.0 / (0.25f64 + 64.0).sqrt()).abs() < 1e-12);
}

#[test]
fn doubling_counts() {
    let o = run(&["doubling", "--d", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let counts: Vec<u64> = v["census"].as_array().unwrap().iter().map(|c| c["count"].as_u64().unwrap()).collect();
    assert_eq!(counts, vec![8, 1]);
}

#[test]
fn operator_gap_is_deterministic_and_written_atomically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let fields = dir.path().join("fields");
    let common = ["operator-gap", "--d", "1", "--model", "s_mod", "--h", "1/8..1/32", "--n", "64", "--composite-norm"];
    let mut first: Vec<&str> = common.to_vec();
    first.extend(["--out", a.to_str().unwrap(), "--save-fields", fields.to_str().unwrap()]);
    let mut second: Vec<&str> = common.to_vec();
    second.extend(["--out", b.to_str().unwrap()]);
    assert_eq!(run(&first).status.code(), Some(0));
    assert_eq!(run(&second).status.code(), Some(0));
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    let text = String::from_utf8(ta).unwrap();
    assert!(text.contains("\n\n\n# composite_norm\nh,n,refinement,composite_norm\n"));
    assert_eq!(data_rows(&text).len(), 3 * 5);
    assert!(!dir.path().join("a.csv.tmp").exists());

    let kf = snapshot::load(&fields.join("kf_h0_gaussian.dlat1")).unwrap();
    assert_eq!(kf.lattice().n(), 64);
    assert!(Path::new(&fields.join("resolvent_h2_random_band_limited.dlat1")).exists());
}

#[test]
fn potential_gap_manifest() {
    let o = run(&["potential-gap", "--h", "1/4..1/16"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["schema_version"], "1");
    assert_eq!(v["potential"]["shape"], "tanh");
    assert_eq!(v["records"].as_array().unwrap().len(), 3);
    let threshold = v["slope_threshold"].as_f64().unwrap();
    assert!((threshold - 0.8 * v["theta_prime"].as_f64().unwrap()).abs() < 1e-15);
    assert!(v["fit"]["slope"].as_f64().unwrap() >= threshold);
}

#[test]
fn verify_runs_a_criterion() {
    let o = run(&["verify", "--criterion", "8"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["criteria"][0]["id"], 8);
    assert_eq!(v["pass"], true);
    assert!(String::from_utf8_lossy(&o.stderr).contains("[PASS] 8"));
}
