//! End-to-end tests of the command-line binary: exit codes, output shapes,
//! reproducibility of artifacts, and the built-in reference checks.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_ntd");

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn fixture(name: &str) -> String {
    fixtures_dir().join(name).display().to_string()
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process should exit normally")
}

#[test]
fn repro_all_passes_on_pristine_fixtures() {
    let out = run(&["repro", "all", "--fixtures", &fixtures_dir().display().to_string()]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(code(&out), 0, "stdout: {text}");
    assert!(text.contains("0 failed"), "unexpected table: {text}");
}

#[test]
fn repro_json_format_reports_structured_passes() {
    let out = run(&[
        "repro",
        "appendix_d",
        "--fixtures",
        &fixtures_dir().display().to_string(),
        "--format",
        "json",
    ]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    assert_eq!(v["pass"], true);
    assert_eq!(v["checks"].as_array().unwrap().len(), 6);
    assert!(v["checks"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| c["pass"] == true));
}

#[test]
fn analyze_reports_pinned_bounds_and_reports_per_horizon() {
    let out = run(&["analyze", &fixture("mdp_d.json"), "--n-max", "60"]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    assert_eq!(v["bounds"]["n1_upper"], 11);
    assert_eq!(v["bounds"]["n2_upper"], 11);
    assert_eq!(v["bounds"]["nth_upper"], 54);
    assert_eq!(v["bounds"]["min_n_schur"], 3);
    assert_eq!(v["bounds"]["min_n_contraction_inf"], 5);
    assert_eq!(v["bounds"]["min_n_hurwitz"], 3);
    let reports = v["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 60);
    assert_eq!(reports[0]["n"], 1);
    assert_eq!(reports[2]["a_is_schur"], true);
    assert_eq!(reports[1]["a_is_schur"], false);
}

#[test]
fn analyze_csv_format_has_stable_headers() {
    let out = run(&[
        "analyze",
        &fixture("mdp_e.json"),
        "--n-max",
        "2",
        "--format",
        "csv",
    ]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with(
        "n1_upper,n2_upper,nth_upper,min_n_schur,min_n_contraction_inf,min_n_hurwitz\n"
    ));
    assert!(text.contains("n,a_spectral_radius,a_is_schur,n_is_nonsingular,s_is_hurwitz,"));
}

#[test]
fn analyze_example_model_shows_nonsingular_but_unstable() {
    let out = run(&["analyze", &fixture("example1.json"), "--n-max", "1"]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    let r = &v["reports"][0];
    assert_eq!(r["n_is_nonsingular"], true);
    assert_eq!(r["a_is_schur"], false);
}

#[test]
fn pvi_converges_and_diverges_with_exit_zero_absent_expectations() {
    let dir = tempfile::tempdir().unwrap();
    let out_flag = dir.path().display().to_string();
    let conv = run(&[
        "pvi",
        &fixture("mdp_d.json"),
        "--n",
        "4",
        "--out",
        &out_flag,
    ]);
    assert_eq!(code(&conv), 0);
    let v = stdout_json(&conv);
    assert_eq!(v["converged"], true);
    let theta = v["theta_final"][0].as_f64().unwrap();
    assert!((theta - 155.4071).abs() < 1e-3, "theta {theta}");

    let div = run(&[
        "pvi",
        &fixture("mdp_d.json"),
        "--n",
        "1",
        "--out",
        &out_flag,
    ]);
    assert_eq!(code(&div), 0, "divergence without expectation flag is not an error");
    let v = stdout_json(&div);
    assert_eq!(v["converged"], false);
}

#[test]
fn expect_converge_flag_turns_divergence_into_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "pvi",
        &fixture("mdp_d.json"),
        "--n",
        "2",
        "--expect-converge",
        "--out",
        &dir.path().display().to_string(),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn richardson_auto_step_size_converges() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "richardson",
        &fixture("mdp_d.json"),
        "--n",
        "3",
        "--alpha",
        "auto",
        "--expect-converge",
        "--out",
        &dir.path().display().to_string(),
    ]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    assert_eq!(v["converged"], true);
    assert_eq!(v["alpha_mode"], "auto");
    assert!(v["iteration_spectral_radius"].as_f64().unwrap() < 1.0);
    let theta = v["theta_final"][0].as_f64().unwrap();
    assert!((theta - 298.6299).abs() < 1e-3, "theta {theta}");
}

#[test]
fn td_traces_are_byte_identical_for_equal_seeds() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let dir_c = tempfile::tempdir().unwrap();
    let base = [
        "td",
        &fixture("mdp_d.json"),
        "--alg",
        "iid",
        "--n",
        "3",
        "--clip",
        "9",
        "--iters",
        "30000",
    ];
    for (dir, seed) in [(&dir_a, "7"), (&dir_b, "7"), (&dir_c, "8")] {
        let mut args: Vec<&str> = base.to_vec();
        let out_flag = dir.path().display().to_string();
        args.extend_from_slice(&["--seed", seed, "--out"]);
        let owned = out_flag;
        args.push(&owned);
        let out = run(&args);
        assert_eq!(code(&out), 0);
    }
    let a = fs::read(dir_a.path().join("td_trace.csv")).unwrap();
    let b = fs::read(dir_b.path().join("td_trace.csv")).unwrap();
    let c = fs::read(dir_c.path().join("td_trace.csv")).unwrap();
    assert_eq!(a, b, "same seed must reproduce the trace byte for byte");
    assert_ne!(a, c, "different seeds should explore different sample paths");
}

#[test]
fn td_trace_has_documented_header_and_manifest_lists_real_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "td",
        &fixture("mdp_d.json"),
        "--alg",
        "markov",
        "--n",
        "2",
        "--seed",
        "3",
        "--iters",
        "2000",
        "--record-every",
        "500",
        "--out",
        &dir.path().display().to_string(),
    ]);
    assert_eq!(code(&out), 0);
    let trace = fs::read_to_string(dir.path().join("td_trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("k,theta_0,err_inf,alpha_k,rho_clipped"));
    assert!(trace.lines().count() >= 5);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("td_manifest.json")).unwrap())
            .unwrap();
    for listed in manifest["outputs"].as_array().unwrap() {
        assert!(
            Path::new(listed.as_str().unwrap()).exists(),
            "manifest lists a missing file: {listed}"
        );
    }
    assert_eq!(manifest["seeds"][0], 3);
    assert_eq!(manifest["fixtures"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn usage_and_validation_errors_exit_two() {
    // Unknown subcommand.
    assert_eq!(code(&run(&["frobnicate"])), 2);
    // Missing fixture file.
    assert_eq!(code(&run(&["analyze", "no_such_model.json"])), 2);
    // Out-of-range horizon.
    assert_eq!(code(&run(&["pvi", &fixture("mdp_d.json"), "--n", "0"])), 2);
    // Malformed model content.
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"num_states\": 2}").unwrap();
    assert_eq!(code(&run(&["analyze", &bad.display().to_string()])), 2);
    // Rows that fail stochasticity validation.
    let unstoch = dir.path().join("unstoch.json");
    let mut doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fixture("mdp_d.json")).unwrap()).unwrap();
    doc["transition"][0][0][0] = serde_json::json!(0.9);
    fs::write(&unstoch, serde_json::to_string(&doc).unwrap()).unwrap();
    let out = run(&["analyze", &unstoch.display().to_string()]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row not stochastic"), "stderr: {err}");
}

#[test]
fn repro_fails_with_exit_one_when_a_fixture_is_tampered() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["mdp_d.json", "mdp_e.json", "mdp_f.json", "example1.json"] {
        fs::copy(fixtures_dir().join(name), dir.path().join(name)).unwrap();
    }
    // Perturb one reward so a pinned integer check misses.
    let path = dir.path().join("mdp_d.json");
    let mut doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    doc["gamma"] = serde_json::json!(0.95);
    fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
    let out = run(&[
        "repro",
        "appendix_d",
        "--fixtures",
        &dir.path().display().to_string(),
    ]);
    assert_eq!(code(&out), 1);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("FAIL"), "table should flag failures: {text}");
}
