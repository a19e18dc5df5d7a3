//! Command-line front end: model analysis, deterministic iterations, seeded
//! stochastic runs, and built-in numeric reference checks.
//!
//! Exit codes: 0 on success, 1 when an `--expect-converge` expectation or a
//! `repro` check fails, 2 on usage or validation errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use ntd::analysis;
use ntd::dp::{self, IterationTrace};
use ntd::linalg;
use ntd::mdp::DerivedModel;
use ntd::td::{self, StepSchedule, TdAlgorithm, TdRunConfig, TdRunResult};
use ntd::NtdError;

/// Every numeric window and pin used by `repro`, kept in one place.
/// The same table is documented in docs/tolerances.md; update both together.
mod reference {
    pub const D_N1_UPPER: u32 = 11;
    pub const D_N2_UPPER: u32 = 11;
    pub const D_NTH_UPPER: u32 = 54;
    pub const D_MIN_SCHUR: u32 = 3;
    pub const D_MIN_CONTRACTION: u32 = 5;
    pub const D_MIN_HURWITZ: u32 = 3;
    pub const D_SEARCH_CAP: u32 = 60;
    pub const E_S1_WINDOW: (f64, f64) = (-0.19, -0.15);
    pub const E_S2_WINDOW: (f64, f64) = (0.005, 0.035);
    pub const F_Q1_WINDOW: (f64, f64) = (46.0, 50.0);
    pub const F_Q2_WINDOW: (f64, f64) = (35.0, 39.0);
    pub const F_WINNER: &str = "q2";
    pub const EX1_DET_FLOOR: f64 = 1e-10;
}

#[derive(Parser)]
#[command(
    name = "ntd",
    version,
    about = "Stability analysis and simulation toolkit for multistep temporal-difference \
             learning with linear function approximation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emit horizon bounds plus a per-horizon stability report for a model
    Analyze(AnalyzeArgs),
    /// Run projected multistep value iteration and write its trace
    Pvi(PviArgs),
    /// Run the Richardson iteration on the multistep linear system
    Richardson(RichardsonArgs),
    /// Run a seeded stochastic learner and write its trace
    Td(TdArgs),
    /// Re-run the built-in numeric reference checks
    Repro(ReproArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    /// Print the JSON report/summary to standard output
    Json,
    /// Print the CSV table/trace to standard output
    Csv,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Model description (JSON)
    fixture: PathBuf,
    /// Largest horizon to report on
    #[arg(long = "n-max", default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
    n_max: u32,
    /// Directory to write the report and manifest into (stdout only if omitted)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct PviArgs {
    /// Model description (JSON)
    fixture: PathBuf,
    /// Horizon of the multistep operator
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    n: u32,
    /// Iteration budget
    #[arg(long, default_value_t = dp::DEFAULT_MAX_ITERS, value_parser = clap::value_parser!(u64).range(1..))]
    iters: u64,
    /// Successive-difference stopping tolerance
    #[arg(long, default_value_t = dp::DEFAULT_TOL)]
    tol: f64,
    /// Initial parameter vector, comma-separated (defaults to zeros)
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_hyphen_values = true)]
    theta0: Option<Vec<f64>>,
    /// Exit 1 unless the run converges
    #[arg(long)]
    expect_converge: bool,
    /// Directory to write trace, summary, and manifest into
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, Debug)]
enum AlphaArg {
    /// Half the closed-form step-size bound (strictly inside the stable range).
    Auto,
    Value(f64),
}

impl FromStr for AlphaArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(AlphaArg::Auto);
        }
        s.parse::<f64>()
            .map(AlphaArg::Value)
            .map_err(|_| format!("expected a float or 'auto', got {s:?}"))
    }
}

#[derive(Args)]
struct RichardsonArgs {
    /// Model description (JSON)
    fixture: PathBuf,
    /// Horizon of the multistep operator
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    n: u32,
    /// Constant step size, or 'auto' for half the closed-form stability bound
    #[arg(long, default_value = "auto", allow_hyphen_values = true)]
    alpha: AlphaArg,
    /// Iteration budget
    #[arg(long, default_value_t = dp::DEFAULT_MAX_ITERS, value_parser = clap::value_parser!(u64).range(1..))]
    iters: u64,
    /// Successive-difference stopping tolerance
    #[arg(long, default_value_t = dp::DEFAULT_TOL)]
    tol: f64,
    /// Initial parameter vector, comma-separated (defaults to zeros)
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_hyphen_values = true)]
    theta0: Option<Vec<f64>>,
    /// Exit 1 unless the run converges
    #[arg(long)]
    expect_converge: bool,
    /// Directory to write trace, summary, and manifest into
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum AlgArg {
    /// Independent restarts of n-step windows
    Iid,
    /// One continuing trajectory with a sliding window
    Markov,
}

#[derive(Args)]
struct TdArgs {
    /// Model description (JSON)
    fixture: PathBuf,
    /// Sampling regime
    #[arg(long = "alg", value_enum)]
    alg: AlgArg,
    /// Horizon of the multistep return
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    n: u32,
    /// Generator seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of stochastic updates
    #[arg(long, default_value_t = dp::DEFAULT_MAX_ITERS, value_parser = clap::value_parser!(u64).range(1..))]
    iters: u64,
    /// Step-size schedule numerator: alpha_k = a/(k+b+1)
    #[arg(long = "schedule-a", default_value_t = 0.1)]
    schedule_a: f64,
    /// Step-size schedule offset: alpha_k = a/(k+b+1)
    #[arg(long = "schedule-b", default_value_t = 10.0)]
    schedule_b: f64,
    /// Importance-ratio cap (no clipping if omitted)
    #[arg(long)]
    clip: Option<f64>,
    /// Record every k-th iterate in the trace
    #[arg(long = "record-every", default_value_t = td::DEFAULT_RECORD_EVERY, value_parser = clap::value_parser!(u64).range(1..))]
    record_every: u64,
    /// Declared tolerance on the final distance to the fixed point
    #[arg(long)]
    tol: Option<f64>,
    /// Initial parameter vector, comma-separated (defaults to zeros)
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_hyphen_values = true)]
    theta0: Option<Vec<f64>>,
    /// Exit 1 unless the run converges
    #[arg(long)]
    expect_converge: bool,
    /// Directory to write trace, summary, and manifest into
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ReproTarget {
    #[value(name = "appendix_d")]
    AppendixD,
    #[value(name = "appendix_e")]
    AppendixE,
    #[value(name = "appendix_f")]
    AppendixF,
    #[value(name = "example1")]
    Example1,
    #[value(name = "all")]
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ReproFormat {
    /// Human-readable aligned table
    Table,
    Json,
    Csv,
}

#[derive(Args)]
struct ReproArgs {
    /// Which reference set to check
    #[arg(value_enum)]
    which: ReproTarget,
    /// Directory holding the bundled model fixtures
    #[arg(long, value_name = "DIR", default_value = "fixtures")]
    fixtures: PathBuf,
    /// Directory to write the pass/fail manifest into (stdout only if omitted)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReproFormat::Table)]
    format: ReproFormat,
}

// ---------------------------------------------------------------------------
// Manifest plumbing
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
struct FixtureInfo {
    path: String,
    sha256: String,
}

#[derive(Clone, Debug, Serialize)]
struct CheckOutcome {
    target: String,
    name: String,
    expected: String,
    observed: String,
    pass: bool,
}

#[derive(Serialize)]
struct RunManifest {
    command_line: Vec<String>,
    fixtures: Vec<FixtureInfo>,
    seeds: Vec<u64>,
    config: serde_json::Value,
    outputs: Vec<String>,
    duration_seconds: f64,
    checks: Vec<CheckOutcome>,
    pass: bool,
}

fn sha256_hex(path: &Path) -> Result<String, NtdError> {
    let bytes = fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn fixture_info(path: &Path) -> Result<FixtureInfo, NtdError> {
    Ok(FixtureInfo {
        path: path.display().to_string(),
        sha256: sha256_hex(path)?,
    })
}

/// Collects artifacts written under an optional output directory.
struct Emitter {
    dir: Option<PathBuf>,
    outputs: Vec<String>,
}

impl Emitter {
    fn new(dir: Option<&Path>) -> Result<Self, NtdError> {
        if let Some(d) = dir {
            fs::create_dir_all(d)?;
        }
        Ok(Emitter {
            dir: dir.map(Path::to_path_buf),
            outputs: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, content: &str) -> Result<(), NtdError> {
        if let Some(dir) = &self.dir {
            let path = dir.join(name);
            fs::write(&path, content)?;
            self.outputs.push(path.display().to_string());
        }
        Ok(())
    }

    /// Writes the manifest last so every listed output (itself included)
    /// exists on disk by the time the manifest is readable.
    fn finish(
        mut self,
        name: &str,
        fixtures: Vec<FixtureInfo>,
        seeds: Vec<u64>,
        config: serde_json::Value,
        started: Instant,
        checks: Vec<CheckOutcome>,
        pass: bool,
    ) -> Result<(), NtdError> {
        if let Some(dir) = &self.dir {
            let path = dir.join(name);
            self.outputs.push(path.display().to_string());
            let manifest = RunManifest {
                command_line: std::env::args().collect(),
                fixtures,
                seeds,
                config,
                outputs: self.outputs.clone(),
                duration_seconds: started.elapsed().as_secs_f64(),
                checks,
                pass,
            };
            fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// CSV rendering
// ---------------------------------------------------------------------------

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

fn dp_trace_csv(trace: &IterationTrace) -> String {
    let m = trace.params.first().map_or(0, Vec::len);
    let mut s = String::from("k");
    for j in 0..m {
        s.push_str(&format!(",theta_{j}"));
    }
    s.push_str(",err_inf\n");
    for (k, (p, e)) in trace
        .params
        .iter()
        .zip(&trace.errors_to_fixed_point)
        .enumerate()
    {
        s.push_str(&k.to_string());
        for v in p {
            s.push(',');
            s.push_str(&fmt_f(*v));
        }
        s.push(',');
        s.push_str(&fmt_f(*e));
        s.push('\n');
    }
    s
}

fn td_trace_csv(res: &TdRunResult) -> String {
    let m = res.trace.params.first().map_or(0, Vec::len);
    let mut s = String::from("k");
    for j in 0..m {
        s.push_str(&format!(",theta_{j}"));
    }
    s.push_str(",err_inf,alpha_k,rho_clipped\n");
    for (i, k) in res.steps.iter().enumerate() {
        s.push_str(&k.to_string());
        for v in &res.trace.params[i] {
            s.push(',');
            s.push_str(&fmt_f(*v));
        }
        s.push(',');
        s.push_str(&fmt_f(res.trace.errors_to_fixed_point[i]));
        s.push(',');
        s.push_str(&fmt_f(res.alphas[i]));
        s.push(',');
        s.push_str(&fmt_f(res.rhos[i]));
        s.push('\n');
    }
    s
}

fn csv_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct AnalyzeReport {
    fixture: String,
    n_max: u32,
    bounds: analysis::BoundSet,
    reports: Vec<analysis::StabilityReport>,
}

fn analyze_bounds_csv(b: &analysis::BoundSet) -> String {
    format!(
        "n1_upper,n2_upper,nth_upper,min_n_schur,min_n_contraction_inf,min_n_hurwitz\n{},{},{},{},{},{}\n",
        b.n1_upper, b.n2_upper, b.nth_upper, b.min_n_schur, b.min_n_contraction_inf, b.min_n_hurwitz
    )
}

fn analyze_per_n_csv(reports: &[analysis::StabilityReport]) -> String {
    let mut s = String::from(
        "n,a_spectral_radius,a_is_schur,n_is_nonsingular,s_is_hurwitz,s_max_real_part,\
         s_symmetric_part_negdef,gamma_n_pi_norm,inf_norm_contraction,alpha_star_lower\n",
    );
    for r in reports {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.n,
            fmt_f(r.a_spectrum.spectral_radius),
            r.a_is_schur,
            r.n_is_nonsingular,
            r.s_is_hurwitz,
            fmt_f(r.s_spectrum.max_real_part),
            r.s_symmetric_part_negdef,
            fmt_f(r.gamma_n_pi_norm),
            r.inf_norm_contraction,
            r.alpha_star_lower.map_or(String::new(), fmt_f),
        ));
    }
    s
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<u8, NtdError> {
    let started = Instant::now();
    let model = DerivedModel::from_path(&args.fixture)?;
    let fixture = fixture_info(&args.fixture)?;
    let bounds = analysis::bound_set(&model, args.n_max)?;
    let mut reports = Vec::with_capacity(args.n_max as usize);
    for n in 1..=args.n_max {
        reports.push(analysis::stability_report(&model, n)?);
    }
    let report = AnalyzeReport {
        fixture: args.fixture.display().to_string(),
        n_max: args.n_max,
        bounds,
        reports,
    };

    let mut emitter = Emitter::new(args.out.as_deref())?;
    let json = serde_json::to_string_pretty(&report)?;
    let bounds_csv = analyze_bounds_csv(&report.bounds);
    let per_n_csv = analyze_per_n_csv(&report.reports);
    match args.format {
        Format::Json => println!("{json}"),
        Format::Csv => println!("{bounds_csv}\n{per_n_csv}"),
    }
    if args.out.is_some() {
        emitter.write("analyze_report.json", &json)?;
        emitter.write("analyze_bounds.csv", &bounds_csv)?;
        emitter.write("analyze_per_n.csv", &per_n_csv)?;
    }
    let config = serde_json::json!({
        "command": "analyze",
        "fixture": report.fixture,
        "n_max": args.n_max,
    });
    emitter.finish(
        "analyze_manifest.json",
        vec![fixture],
        vec![],
        config,
        started,
        vec![],
        true,
    )?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// pvi / richardson
// ---------------------------------------------------------------------------

fn resolve_theta0(model: &DerivedModel, theta0: Option<Vec<f64>>) -> Vec<f64> {
    theta0.unwrap_or_else(|| vec![0.0; model.feature_dim()])
}

#[allow(clippy::too_many_arguments)]
fn emit_deterministic_run(
    command: &str,
    fixture_path: &Path,
    trace: &IterationTrace,
    star: Option<&Vec<f64>>,
    extra: serde_json::Value,
    out: &Path,
    format: Format,
    expect_converge: bool,
    started: Instant,
) -> Result<u8, NtdError> {
    let mut summary = serde_json::json!({
        "command": command,
        "fixture": fixture_path.display().to_string(),
        "n": trace.n,
        "iterations": trace.params.len() - 1,
        "converged": trace.converged,
        "final_error": trace.final_error,
        "tolerance": trace.tolerance,
        "step_size": trace.step_size,
        "theta_final": trace.last_params(),
        "fixed_point": star,
    });
    if let serde_json::Value::Object(map) = &mut summary {
        if let serde_json::Value::Object(extra_map) = extra {
            map.extend(extra_map);
        }
    }
    let summary_text = serde_json::to_string_pretty(&summary)?;
    let trace_csv = dp_trace_csv(trace);
    match format {
        Format::Json => println!("{summary_text}"),
        Format::Csv => print!("{trace_csv}"),
    }
    let mut emitter = Emitter::new(Some(out))?;
    emitter.write(&format!("{command}_trace.csv"), &trace_csv)?;
    emitter.write(&format!("{command}_summary.json"), &summary_text)?;
    emitter.finish(
        &format!("{command}_manifest.json"),
        vec![fixture_info(fixture_path)?],
        vec![],
        summary,
        started,
        vec![],
        trace.converged || !expect_converge,
    )?;
    if expect_converge && !trace.converged {
        eprintln!(
            "expectation failed: run did not converge (final successive difference {})",
            trace.final_error
        );
        return Ok(1);
    }
    Ok(0)
}

fn cmd_pvi(args: PviArgs) -> Result<u8, NtdError> {
    let started = Instant::now();
    let model = DerivedModel::from_path(&args.fixture)?;
    let theta0 = resolve_theta0(&model, args.theta0);
    let trace = dp::n_pvi(&model, args.n, &theta0, args.iters, args.tol)?;
    let star = analysis::fixed_point_theta_n(&model, args.n).ok();
    emit_deterministic_run(
        "pvi",
        &args.fixture,
        &trace,
        star.as_ref(),
        serde_json::json!({}),
        &args.out,
        args.format,
        args.expect_converge,
        started,
    )
}

fn cmd_richardson(args: RichardsonArgs) -> Result<u8, NtdError> {
    let started = Instant::now();
    let model = DerivedModel::from_path(&args.fixture)?;
    let theta0 = resolve_theta0(&model, args.theta0);
    let (alpha, alpha_mode) = match args.alpha {
        AlphaArg::Value(v) => (v, "explicit"),
        AlphaArg::Auto => {
            let s = analysis::td_matrix_s(&model, args.n)?;
            if !s.is_hurwitz {
                return Err(NtdError::InvalidConfig(format!(
                    "automatic step size undefined: the negated system matrix is not \
                     Hurwitz at n={}; pass --alpha explicitly",
                    args.n
                )));
            }
            // Half the closed-form bound: strictly inside the stable range
            // even in the scalar case, where the bound itself sits exactly on
            // the unit circle.
            (analysis::alpha_star_bound(&s.matrix)? / 2.0, "auto")
        }
    };
    let trace = dp::richardson(&model, args.n, alpha, &theta0, args.iters, args.tol)?;
    let verdict = dp::spectral_verdict_richardson(&model, args.n, alpha)?;
    let star = analysis::fixed_point_theta_n(&model, args.n).ok();
    emit_deterministic_run(
        "richardson",
        &args.fixture,
        &trace,
        star.as_ref(),
        serde_json::json!({
            "alpha": alpha,
            "alpha_mode": alpha_mode,
            "iteration_spectral_radius": verdict.rho,
            "spectrally_stable": verdict.stable,
            "spectrally_marginal": verdict.marginal,
        }),
        &args.out,
        args.format,
        args.expect_converge,
        started,
    )
}

// ---------------------------------------------------------------------------
// td
// ---------------------------------------------------------------------------

fn cmd_td(args: TdArgs) -> Result<u8, NtdError> {
    let started = Instant::now();
    let model = DerivedModel::from_path(&args.fixture)?;
    let theta0 = resolve_theta0(&model, args.theta0);
    let config = TdRunConfig {
        algorithm: match args.alg {
            AlgArg::Iid => TdAlgorithm::Iid,
            AlgArg::Markov => TdAlgorithm::Markov,
        },
        n: args.n,
        schedule: StepSchedule::harmonic(args.schedule_a, args.schedule_b),
        clip: args.clip,
        seed: args.seed,
        max_iters: args.iters,
        record_every: args.record_every,
        tolerance: args.tol,
    };
    let res = match config.algorithm {
        TdAlgorithm::Iid => td::td_iid_run_from(&model, &config, &theta0)?,
        TdAlgorithm::Markov => td::td_markov_run_from(&model, &config, &theta0)?,
    };
    let summary = serde_json::json!({
        "command": "td",
        "fixture": args.fixture.display().to_string(),
        "config": &config,
        "steps_run": res.steps.last(),
        "converged": res.trace.converged,
        "final_error": res.trace.final_error,
        "theta_final": res.trace.last_params(),
        "fixed_point": res.fixed_point,
    });
    let summary_text = serde_json::to_string_pretty(&summary)?;
    let trace_csv = td_trace_csv(&res);
    match args.format {
        Format::Json => println!("{summary_text}"),
        Format::Csv => print!("{trace_csv}"),
    }
    let mut emitter = Emitter::new(Some(&args.out))?;
    emitter.write("td_trace.csv", &trace_csv)?;
    emitter.write("td_summary.json", &summary_text)?;
    emitter.finish(
        "td_manifest.json",
        vec![fixture_info(&args.fixture)?],
        vec![args.seed],
        summary,
        started,
        vec![],
        res.trace.converged || !args.expect_converge,
    )?;
    if args.expect_converge && !res.trace.converged {
        eprintln!(
            "expectation failed: run did not converge (final error {})",
            res.trace.final_error
        );
        return Ok(1);
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// repro
// ---------------------------------------------------------------------------

fn check_eq_u32(target: &str, name: &str, observed: u32, expected: u32) -> CheckOutcome {
    CheckOutcome {
        target: target.into(),
        name: name.into(),
        expected: expected.to_string(),
        observed: observed.to_string(),
        pass: observed == expected,
    }
}

fn check_eq_bool(target: &str, name: &str, observed: bool, expected: bool) -> CheckOutcome {
    CheckOutcome {
        target: target.into(),
        name: name.into(),
        expected: expected.to_string(),
        observed: observed.to_string(),
        pass: observed == expected,
    }
}

fn check_in_window(target: &str, name: &str, value: f64, window: (f64, f64)) -> CheckOutcome {
    CheckOutcome {
        target: target.into(),
        name: name.into(),
        expected: format!("[{}, {}]", window.0, window.1),
        observed: format!("{value:.6}"),
        pass: value >= window.0 && value <= window.1,
    }
}

fn check_eq_str(target: &str, name: &str, observed: &str, expected: &str) -> CheckOutcome {
    CheckOutcome {
        target: target.into(),
        name: name.into(),
        expected: expected.into(),
        observed: observed.into(),
        pass: observed == expected,
    }
}

fn check_greater(target: &str, name: &str, value: f64, floor: f64) -> CheckOutcome {
    CheckOutcome {
        target: target.into(),
        name: name.into(),
        expected: format!("> {floor}"),
        observed: format!("{value:.6e}"),
        pass: value > floor,
    }
}

fn repro_target(
    target: ReproTarget,
    fixtures: &Path,
) -> Result<(FixtureInfo, Vec<CheckOutcome>), NtdError> {
    match target {
        ReproTarget::AppendixD => {
            let path = fixtures.join("mdp_d.json");
            let model = DerivedModel::from_path(&path)?;
            let bs = analysis::bound_set(&model, reference::D_SEARCH_CAP)?;
            let t = "appendix_d";
            Ok((
                fixture_info(&path)?,
                vec![
                    check_eq_u32(t, "n1_upper", bs.n1_upper, reference::D_N1_UPPER),
                    check_eq_u32(t, "n2_upper", bs.n2_upper, reference::D_N2_UPPER),
                    check_eq_u32(t, "nth_upper", bs.nth_upper, reference::D_NTH_UPPER),
                    check_eq_u32(t, "min_n_schur", bs.min_n_schur, reference::D_MIN_SCHUR),
                    check_eq_u32(
                        t,
                        "min_n_contraction_inf",
                        bs.min_n_contraction_inf,
                        reference::D_MIN_CONTRACTION,
                    ),
                    check_eq_u32(t, "min_n_hurwitz", bs.min_n_hurwitz, reference::D_MIN_HURWITZ),
                ],
            ))
        }
        ReproTarget::AppendixE => {
            let path = fixtures.join("mdp_e.json");
            let model = DerivedModel::from_path(&path)?;
            let s1 = analysis::td_matrix_s(&model, 1)?;
            let s2 = analysis::td_matrix_s(&model, 2)?;
            let t = "appendix_e";
            Ok((
                fixture_info(&path)?,
                vec![
                    check_in_window(t, "s_entry(n=1)", s1.matrix.get(0, 0), reference::E_S1_WINDOW),
                    check_in_window(t, "s_entry(n=2)", s2.matrix.get(0, 0), reference::E_S2_WINDOW),
                    check_eq_bool(t, "hurwitz(n=1)", s1.is_hurwitz, true),
                    check_eq_bool(t, "hurwitz(n=2)", s2.is_hurwitz, false),
                ],
            ))
        }
        ReproTarget::AppendixF => {
            let path = fixtures.join("mdp_f.json");
            let model = DerivedModel::from_path(&path)?;
            let nth = analysis::bound_nth(&model)?;
            let t = "appendix_f";
            Ok((
                fixture_info(&path)?,
                vec![
                    check_in_window(t, "log_ratio_q1", nth.log_ratio_q1, reference::F_Q1_WINDOW),
                    check_in_window(t, "log_ratio_q2", nth.log_ratio_q2, reference::F_Q2_WINDOW),
                    check_eq_str(t, "winning_branch", &nth.winner, reference::F_WINNER),
                ],
            ))
        }
        ReproTarget::Example1 => {
            let path = fixtures.join("example1.json");
            let model = DerivedModel::from_path(&path)?;
            let n_mat = analysis::pbe_matrix_n(&model, 1);
            let det = linalg::determinant(&n_mat);
            let projected = model.pi_proj.mul(&model.p_pi).scale(model.gamma());
            let rho = linalg::eig_general(&projected)?.spectral_radius;
            let t = "example1";
            Ok((
                fixture_info(&path)?,
                vec![
                    check_greater(t, "abs_det_system_matrix(n=1)", det.abs(), reference::EX1_DET_FLOOR),
                    check_greater(t, "spectral_radius_projected_op(n=1)", rho, 1.0),
                ],
            ))
        }
        ReproTarget::All => unreachable!("expanded by the caller"),
    }
}

fn print_table(rows: &[CheckOutcome]) {
    let headers = ["target", "check", "expected", "observed", "status"];
    let status = |r: &CheckOutcome| if r.pass { "pass" } else { "FAIL" };
    let widths = [
        rows.iter().map(|r| r.target.len()).chain([headers[0].len()]).max().unwrap(),
        rows.iter().map(|r| r.name.len()).chain([headers[1].len()]).max().unwrap(),
        rows.iter().map(|r| r.expected.len()).chain([headers[2].len()]).max().unwrap(),
        rows.iter().map(|r| r.observed.len()).chain([headers[3].len()]).max().unwrap(),
    ];
    println!(
        "{:<w0$}  {:<w1$}  {:<w2$}  {:<w3$}  {}",
        headers[0],
        headers[1],
        headers[2],
        headers[3],
        headers[4],
        w0 = widths[0],
        w1 = widths[1],
        w2 = widths[2],
        w3 = widths[3],
    );
    for r in rows {
        println!(
            "{:<w0$}  {:<w1$}  {:<w2$}  {:<w3$}  {}",
            r.target,
            r.name,
            r.expected,
            r.observed,
            status(r),
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2],
            w3 = widths[3],
        );
    }
}

fn repro_csv(rows: &[CheckOutcome]) -> String {
    let mut s = String::from("target,check,expected,observed,pass\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.target,
            r.name,
            csv_quote(&r.expected),
            csv_quote(&r.observed),
            r.pass
        ));
    }
    s
}

fn cmd_repro(args: ReproArgs) -> Result<u8, NtdError> {
    let started = Instant::now();
    let targets: Vec<ReproTarget> = match args.which {
        ReproTarget::All => vec![
            ReproTarget::AppendixD,
            ReproTarget::AppendixE,
            ReproTarget::AppendixF,
            ReproTarget::Example1,
        ],
        t => vec![t],
    };

    // Independent workers, one per target; results are collected in spawn
    // order so the report is deterministic.
    let results: Vec<Result<(FixtureInfo, Vec<CheckOutcome>), NtdError>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = targets
                .iter()
                .map(|t| {
                    let fixtures = args.fixtures.clone();
                    scope.spawn(move || repro_target(*t, &fixtures))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("reference-check worker panicked"))
                .collect()
        });

    let mut fixtures = Vec::new();
    let mut rows = Vec::new();
    for result in results {
        let (info, mut checks) = result?;
        fixtures.push(info);
        rows.append(&mut checks);
    }
    let pass = rows.iter().all(|r| r.pass);
    let failed = rows.iter().filter(|r| !r.pass).count();

    match args.format {
        ReproFormat::Table => {
            print_table(&rows);
            println!();
            println!(
                "repro: {} checks, {} failed{}",
                rows.len(),
                failed,
                if pass { " — all expected values reproduced" } else { "" }
            );
        }
        ReproFormat::Json => {
            let report = serde_json::json!({ "checks": &rows, "pass": pass });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        ReproFormat::Csv => print!("{}", repro_csv(&rows)),
    }

    let emitter = Emitter::new(args.out.as_deref())?;
    let config = serde_json::json!({
        "command": "repro",
        "which": format!("{:?}", args.which).to_lowercase(),
        "fixtures_dir": args.fixtures.display().to_string(),
    });
    emitter.finish(
        "repro_manifest.json",
        fixtures,
        vec![],
        config,
        started,
        rows,
        pass,
    )?;
    Ok(if pass { 0 } else { 1 })
}

// ---------------------------------------------------------------------------

fn dispatch(cli: Cli) -> Result<u8, NtdError> {
    match cli.command {
        Command::Analyze(args) => cmd_analyze(args),
        Command::Pvi(args) => cmd_pvi(args),
        Command::Richardson(args) => cmd_richardson(args),
        Command::Td(args) => cmd_td(args),
        Command::Repro(args) => cmd_repro(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}
