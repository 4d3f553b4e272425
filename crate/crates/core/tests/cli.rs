use std::io::Write;
use std::path::Path;
use std::process::{Command, Output};

use bifactor_alm::cli::matrix_from_json;
use bifactor_alm::simlab::{emc, generate_bifactor_truth, TruthModel};
use nalgebra::DMatrix;
use serde_json::Value;

fn bifactor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bifactor"))
        .args(args)
        .env("BIFACTOR_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn write_csv(path: &Path, m: &DMatrix<f64>) {
    let mut f = std::fs::File::create(path).unwrap();
    for r in 0..m.nrows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(f, "{}", row.join(",")).unwrap();
    }
}

fn error_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("stderr holds error JSON")
}

fn groups_from(assignment: &[u64], g: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); g];
    for (i, &a) in assignment.iter().enumerate() {
        if a > 0 {
            groups[a as usize - 1].push(i);
        }
    }
    groups
}

fn truth() -> TruthModel {
    generate_bifactor_truth(15, 3, 11).unwrap()
}

#[test]
fn fit_recovers_noiseless_structure() {
    let dir = tempfile::tempdir().unwrap();
    let t = truth();
    let cov = dir.path().join("cov.csv");
    write_csv(&cov, &t.sigma());
    let out_path = dir.path().join("fit.json");
    let out = bifactor(&[
        "fit", "--input", cov.to_str().unwrap(), "--kind", "cov", "--n", "1000",
        "--groups", "3", "--starts", "10", "--seed", "4", "--out", out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    let lambda = matrix_from_json(&v["lambda"]).unwrap();
    assert_eq!(lambda.shape(), (15, 4));
    assert!(v["converged"].as_bool().unwrap());
    assert!(v["loss"].as_f64().unwrap() < 1e-4);
    let assignment: Vec<u64> = v["structure"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
    assert_eq!(emc(&groups_from(&assignment, 3), &t.partition), 1.0);
    assert_eq!(v["manifest"]["subcommand"], "fit");
    assert_eq!(v["manifest"]["config"]["n_starts"], 10);
    assert!(v["bic"].is_number());
}

#[test]
fn covariance_input_needs_sample_size() {
    let dir = tempfile::tempdir().unwrap();
    let cov = dir.path().join("cov.csv");
    write_csv(&cov, &truth().sigma());
    let out = bifactor(&["fit", "--input", cov.to_str().unwrap(), "--kind", "cov", "--groups", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"], "MissingN");
}

#[test]
fn non_numeric_cell_is_reported_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    std::fs::write(&raw, "a,b,c\n1,2,3\n4,x,6\n").unwrap();
    let out = bifactor(&["fit", "--input", raw.to_str().unwrap(), "--groups", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_of(&out);
    assert_eq!(e["error"], "NonNumericCell");
    assert!(e["message"].as_str().unwrap().contains("row 3"), "{e}");
}

#[test]
fn exhausted_starts_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cov = dir.path().join("cov.csv");
    write_csv(&cov, &truth().sigma());
    let out = bifactor(&[
        "fit", "--input", cov.to_str().unwrap(), "--kind", "cov", "--n", "500", "--groups", "3",
        "--starts", "2", "--tmax", "1", "--delta1", "1e-14",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_of(&out)["error"], "AllStartsFailed");
}

#[test]
fn malformed_hierarchy_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cov = dir.path().join("cov.csv");
    write_csv(&cov, &truth().sigma());
    let tree = dir.path().join("tree.txt");
    std::fs::write(&tree, "1 0\n2 1\n2 3\n").unwrap();
    let out = bifactor(&[
        "fit", "--input", cov.to_str().unwrap(), "--kind", "cov", "--n", "500", "--hierarchy",
        tree.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"], "MalformedTree");
}

#[test]
fn check_id_on_generated_truth() {
    let dir = tempfile::tempdir().unwrap();
    let t = truth();
    let lambda = dir.path().join("lambda.csv");
    write_csv(&lambda, &t.lambda);
    let structure = dir.path().join("structure.csv");
    let mut text = String::from("item,group\n");
    for (g, items) in t.partition.iter().enumerate() {
        for i in items {
            text += &format!("{},{}\n", i + 1, g + 1);
        }
    }
    std::fs::write(&structure, text).unwrap();
    let phi = dir.path().join("phi.csv");
    write_csv(&phi, t.phi.as_matrix());
    let out = bifactor(&[
        "check-id", "--lambda", lambda.to_str().unwrap(), "--structure", structure.to_str().unwrap(),
        "--phi", phi.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["q_sets"].as_array().unwrap().len(), 3);
    assert_eq!(v["q_sets"][0][0], 1);
    assert_eq!(v["condition5"], true);
    assert_eq!(v["anderson_rubin_rows"].as_array().unwrap().len(), 15);

    // A loading placed outside its declared group is rejected.
    let mut bad = t.lambda.clone();
    bad[(0, 2)] = 0.5;
    write_csv(&lambda, &bad);
    let out = bifactor(&["check-id", "--lambda", lambda.to_str().unwrap(), "--structure", structure.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"], "StructureMismatch");
}

#[test]
fn simulate_output_is_reproducible() {
    let args = [
        "simulate", "--study", "study1", "--j", "6", "--g", "2", "--n", "300", "--reps", "2",
        "--starts", "3", "--seed", "9",
    ];
    let a = bifactor(&args);
    let b = bifactor(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().last().unwrap().starts_with("mean"));
}

#[test]
fn help_lists_subcommands() {
    let out = bifactor(&["--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in ["fit", "select-g", "simulate", "check-id"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}
