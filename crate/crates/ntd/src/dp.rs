//! Deterministic model-based iterations: n-step projected value iteration
//! and the Richardson-type fixed-point iteration, with full trace recording.

use serde::Serialize;

use crate::analysis;
use crate::error::{NtdError, Result};
use crate::linalg::{self, Matrix};
use crate::mdp::DerivedModel;

/// Iterates whose sup norm exceeds this are declared divergent and terminate
/// the trace (keeping every recorded value finite).
pub const OVERFLOW_GUARD: f64 = 1e12;

/// Default successive-difference stopping tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Default iteration budget.
pub const DEFAULT_MAX_ITERS: u64 = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    NPvi,
    Richardson,
    TdIid,
    TdMarkov,
}

/// Step-size annotation on a trace: a fixed scalar or a schedule identifier.
#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum StepSizeInfo {
    Fixed(f64),
    Schedule(String),
}

/// Full record of one iterative run.
#[derive(Clone, Debug, Serialize)]
pub struct IterationTrace {
    pub algorithm: Algorithm,
    pub n: u32,
    /// Parameter iterates theta_0 ... theta_K.
    pub params: Vec<Vec<f64>>,
    /// Sup-norm distances to the closed-form fixed point at each recorded
    /// iterate; NaN entries when the fixed point does not exist.
    pub errors_to_fixed_point: Vec<f64>,
    pub step_size: Option<StepSizeInfo>,
    /// Stopping tolerance the run was declared against (successive-difference
    /// tolerance for the deterministic algorithms; absent for the stochastic
    /// ones, whose convergence is a statistical statement).
    pub tolerance: Option<f64>,
    pub converged: bool,
    /// Last successive difference for the deterministic algorithms; final
    /// distance to the fixed point for the stochastic ones (NaN when that
    /// fixed point does not exist).
    pub final_error: f64,
}

impl IterationTrace {
    /// The trace invariant: params and errors stay aligned, and the converged
    /// flag matches the declared tolerance.
    pub fn check_consistency(&self) -> Result<()> {
        if self.params.len() != self.errors_to_fixed_point.len() {
            return Err(NtdError::Numeric(
                "trace params and errors have different lengths".into(),
            ));
        }
        if let Some(tol) = self.tolerance {
            if self.converged != (self.final_error <= tol) {
                return Err(NtdError::Numeric(format!(
                    "converged flag {} inconsistent with final error {} at tolerance {tol}",
                    self.converged, self.final_error
                )));
            }
        }
        Ok(())
    }

    pub fn last_params(&self) -> &[f64] {
        self.params.last().expect("trace always holds the initial point")
    }
}

fn error_to(theta: &[f64], star: Option<&Vec<f64>>) -> f64 {
    match star {
        Some(s) => theta
            .iter()
            .zip(s)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max),
        None => f64::NAN,
    }
}

/// Shared driver for the two deterministic linear iterations. `step` maps
/// theta_k to theta_{k+1}.
fn run_deterministic<F>(
    algorithm: Algorithm,
    n: u32,
    theta0: Vec<f64>,
    max_iters: u64,
    tol: f64,
    star: Option<Vec<f64>>,
    step_size: Option<StepSizeInfo>,
    mut step: F,
) -> Result<IterationTrace>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    if max_iters == 0 {
        return Err(NtdError::InvalidConfig("max_iters must be at least 1".into()));
    }
    if !(tol > 0.0) {
        return Err(NtdError::InvalidConfig("tolerance must be positive".into()));
    }
    let mut params = Vec::with_capacity(64);
    let mut errors = Vec::with_capacity(64);
    params.push(theta0.clone());
    errors.push(error_to(&theta0, star.as_ref()));

    let mut theta = theta0;
    let mut converged = false;
    let mut final_error = f64::INFINITY;
    for _ in 0..max_iters {
        let next = step(&theta);
        if !next.iter().all(|v| v.is_finite()) {
            break;
        }
        let diff = next
            .iter()
            .zip(&theta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        params.push(next.clone());
        errors.push(error_to(&next, star.as_ref()));
        final_error = diff;
        theta = next;
        if linalg::vec_inf(&theta) > OVERFLOW_GUARD {
            break;
        }
        if diff <= tol {
            converged = true;
            break;
        }
    }
    let trace = IterationTrace {
        algorithm,
        n,
        params,
        errors_to_fixed_point: errors,
        step_size,
        tolerance: Some(tol),
        converged,
        final_error,
    };
    trace.check_consistency()?;
    Ok(trace)
}

/// n-step projected value iteration. Each step applies the projected n-step
/// backup in closed form: with precomputed `c = sum_{k<n} gamma^k P^k R` and
/// `M = gamma^n P^n Phi`, the update is one m-dimensional solve plus
/// matrix-vector products.
pub fn n_pvi(
    model: &DerivedModel,
    n: u32,
    theta0: &[f64],
    max_iters: u64,
    tol: f64,
) -> Result<IterationTrace> {
    validate_start(model, n, theta0)?;
    let c = analysis::bellman_offset(model, n);
    let m_mat = analysis::p_pi_pow(model, n)
        .scale(model.gamma().powi(n as i32))
        .mul(&model.phi);
    let phi_t_d = model.phi_t_d();
    let gram = model.gram.clone();
    let star = analysis::fixed_point_theta_n(model, n).ok();
    run_deterministic(
        Algorithm::NPvi,
        n,
        theta0.to_vec(),
        max_iters,
        tol,
        star,
        None,
        move |theta| {
            let mut u = m_mat.matvec(theta);
            for (ui, ci) in u.iter_mut().zip(&c) {
                *ui += ci;
            }
            let w = phi_t_d.matvec(&u);
            linalg::solve(&gram, &w).expect("Gram nonsingularity is checked at model build")
        },
    )
}

/// Richardson-type iteration `theta <- theta + alpha (b - N theta)`.
pub fn richardson(
    model: &DerivedModel,
    n: u32,
    alpha: f64,
    theta0: &[f64],
    max_iters: u64,
    tol: f64,
) -> Result<IterationTrace> {
    validate_start(model, n, theta0)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(NtdError::InvalidConfig(format!(
            "step size must be a positive real, got {alpha}"
        )));
    }
    let n_mat = analysis::pbe_matrix_n(model, n);
    let b = analysis::pbe_vector_b(model, n);
    let star = analysis::fixed_point_theta_n(model, n).ok();
    run_deterministic(
        Algorithm::Richardson,
        n,
        theta0.to_vec(),
        max_iters,
        tol,
        star,
        Some(StepSizeInfo::Fixed(alpha)),
        move |theta| {
            let ntheta = n_mat.matvec(theta);
            theta
                .iter()
                .zip(b.iter().zip(&ntheta))
                .map(|(t, (bi, nt))| t + alpha * (bi - nt))
                .collect()
        },
    )
}

fn validate_start(model: &DerivedModel, n: u32, theta0: &[f64]) -> Result<()> {
    if n == 0 {
        return Err(NtdError::InvalidConfig("horizon n must be at least 1".into()));
    }
    if theta0.len() != model.feature_dim() {
        return Err(NtdError::InvalidConfig(format!(
            "initial parameter has dimension {}, expected {}",
            theta0.len(),
            model.feature_dim()
        )));
    }
    Ok(())
}

/// Spectral stability verdict for the Richardson iteration at a given step
/// size: the iteration converges iff `I - alpha N` is Schur.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralVerdict {
    pub rho: f64,
    /// rho < 1 (strict).
    pub stable: bool,
    /// rho within the marginal band around 1; empirical comparisons skip
    /// these.
    pub marginal: bool,
}

pub fn spectral_verdict_richardson(model: &DerivedModel, n: u32, alpha: f64) -> Result<SpectralVerdict> {
    let n_mat = analysis::pbe_matrix_n(model, n);
    let m = n_mat.rows();
    let iter = Matrix::identity(m).sub(&n_mat.scale(alpha));
    let spec = linalg::eig_general(&iter)?;
    Ok(SpectralVerdict {
        rho: spec.spectral_radius,
        stable: spec.spectral_radius < 1.0,
        marginal: spec.schur_marginal(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{alpha_star_bound, fixed_point_theta_n, td_matrix_s};
    use crate::mdp::DerivedModel;

    const FIX_D: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/mdp_d.json");
    const FIX_E: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/mdp_e.json");

    fn model(path: &str) -> DerivedModel {
        DerivedModel::from_path(path).unwrap()
    }

    #[test]
    fn pvi_started_at_fixed_point_stays_there() {
        let m = model(FIX_D);
        let star = fixed_point_theta_n(&m, 4).unwrap();
        let trace = n_pvi(&m, 4, &star, 100, DEFAULT_TOL).unwrap();
        assert!(trace.converged);
        assert_eq!(trace.params.len(), 2, "one step suffices from the fixed point");
        for e in &trace.errors_to_fixed_point {
            assert!(*e <= 1e-6, "error {e}");
        }
    }

    #[test]
    fn pvi_diverges_below_threshold_horizon() {
        let m = model(FIX_D);
        let trace = n_pvi(&m, 2, &[1.0], 200_000, DEFAULT_TOL).unwrap();
        assert!(!trace.converged);
        let last = linalg::vec_inf(trace.last_params());
        assert!(last > OVERFLOW_GUARD, "run should hit the overflow guard, got {last}");
        assert!(last.is_finite(), "recorded values stay finite");
    }

    #[test]
    fn pvi_converges_to_closed_form_above_threshold() {
        let m = model(FIX_D);
        for n in [3u32, 4] {
            let star = fixed_point_theta_n(&m, n).unwrap();
            let trace = n_pvi(&m, n, &[0.0], 100_000, DEFAULT_TOL).unwrap();
            assert!(trace.converged, "n={n}");
            let gap = trace
                .last_params()
                .iter()
                .zip(&star)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(gap <= 1e-6, "n={n}: limit differs from closed form by {gap}");
        }
    }

    #[test]
    fn pvi_error_sequence_under_norm_envelope() {
        // At a horizon where the iteration matrix has sup norm below 1, the
        // error sequence is dominated by the geometric envelope.
        let m = model(FIX_D);
        let n = 11;
        let a_norm = linalg::norm_inf(&crate::analysis::iteration_matrix_a(&m, n));
        assert!(a_norm < 1.0);
        let trace = n_pvi(&m, n, &[5.0], 2_000, 1e-12).unwrap();
        let e0 = trace.errors_to_fixed_point[0];
        for (k, e) in trace.errors_to_fixed_point.iter().enumerate() {
            let envelope = a_norm.powi(k as i32) * e0 + 1e-9;
            assert!(*e <= envelope, "k={k}: {e} > {envelope}");
        }
    }

    #[test]
    fn richardson_stationary_at_fixed_point_any_step() {
        let m = model(FIX_E);
        let star = fixed_point_theta_n(&m, 1).unwrap();
        let trace = richardson(&m, 1, 10.0, &star, 50, DEFAULT_TOL).unwrap();
        assert!(trace.converged);
        assert_eq!(trace.params.len(), 2);
    }

    #[test]
    fn richardson_converges_below_step_bound() {
        let m = model(FIX_D);
        let n = 3;
        let s = td_matrix_s(&m, n).unwrap();
        assert!(s.is_hurwitz);
        let alpha = alpha_star_bound(&s.matrix).unwrap() / 2.0;
        let trace = richardson(&m, n, alpha, &[0.0], 100_000, 1e-12).unwrap();
        assert!(trace.converged);
        let star = fixed_point_theta_n(&m, n).unwrap();
        let gap = trace
            .last_params()
            .iter()
            .zip(&star)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(gap <= 1e-7, "gap {gap}");
    }

    #[test]
    fn richardson_oscillates_exactly_at_twice_inverse_system_value() {
        // Scalar boundary witness: with N = nu > 0 and alpha = 2/nu the
        // iteration flips sign around the fixed point forever.
        let m = model(FIX_E);
        let n = 1;
        let nu = crate::analysis::pbe_matrix_n(&m, n).get(0, 0);
        assert!(nu > 0.0);
        let alpha = 2.0 / nu;
        let verdict = spectral_verdict_richardson(&m, n, alpha).unwrap();
        assert!((verdict.rho - 1.0).abs() <= 1e-12, "rho = {}", verdict.rho);
        assert!(verdict.marginal);
        let trace = richardson(&m, n, alpha, &[1.0], 500, DEFAULT_TOL).unwrap();
        assert!(!trace.converged);
        // The iterate two steps apart returns to itself.
        let p = &trace.params;
        for k in 0..p.len().saturating_sub(2) {
            assert!((p[k][0] - p[k + 2][0]).abs() <= 1e-6 * (1.0 + p[k][0].abs()));
        }
    }

    #[test]
    fn deterministic_algorithms_agree_on_common_limit() {
        let m = model(FIX_D);
        for n in [3u32, 4] {
            let star = fixed_point_theta_n(&m, n).unwrap();
            let pvi = n_pvi(&m, n, &[1.0], 100_000, 1e-12).unwrap();
            let nu = crate::analysis::pbe_matrix_n(&m, n).get(0, 0);
            let rich = richardson(&m, n, 1.0 / nu, &[1.0], 100_000, 1e-12).unwrap();
            assert!(pvi.converged && rich.converged);
            for (a, b) in pvi.last_params().iter().zip(rich.last_params()) {
                assert!((a - b).abs() <= 1e-7);
            }
            for (a, b) in pvi.last_params().iter().zip(&star) {
                assert!((a - b).abs() <= 1e-7);
            }
        }
    }

    #[test]
    fn spectral_verdict_tracks_step_size() {
        let m = model(FIX_D);
        let n = 3;
        let small = spectral_verdict_richardson(&m, n, 1e-4).unwrap();
        assert!(small.stable, "tiny step sizes are stable for Hurwitz -N");
        let huge = spectral_verdict_richardson(&m, n, 1e6).unwrap();
        assert!(!huge.stable);
    }

    #[test]
    fn spectral_verdict_agrees_with_empirical_run() {
        let m = model(FIX_E);
        let nu = crate::analysis::pbe_matrix_n(&m, 1).get(0, 0);
        for frac in [0.2, 0.7, 1.4, 1.9, 2.3, 3.0] {
            let alpha = frac / nu;
            let verdict = spectral_verdict_richardson(&m, 1, alpha).unwrap();
            if verdict.marginal {
                continue;
            }
            let trace = richardson(&m, 1, alpha, &[2.0], 50_000, 1e-11).unwrap();
            assert_eq!(
                trace.converged, verdict.stable,
                "alpha={alpha}: empirical {} vs spectral {}",
                trace.converged, verdict.stable
            );
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let m = model(FIX_D);
        assert!(n_pvi(&m, 0, &[0.0], 10, 1e-10).is_err());
        assert!(n_pvi(&m, 1, &[0.0, 0.0], 10, 1e-10).is_err());
        assert!(n_pvi(&m, 1, &[0.0], 0, 1e-10).is_err());
        assert!(richardson(&m, 1, -0.5, &[0.0], 10, 1e-10).is_err());
    }
}
