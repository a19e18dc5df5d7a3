//! Stability diagnostics for the n-step projected evaluation problem: the
//! iteration/system matrices and their spectra, contraction certificates,
//! sufficient horizon bounds, closed-form fixed points, error bounds, and a
//! step-size lower bound via a Lyapunov construction.

use serde::Serialize;

use crate::error::{NtdError, Result};
use crate::linalg::{self, Matrix, Spectrum, STABILITY_MARGIN};
use crate::mdp::DerivedModel;

/// n-th power of the target-policy chain.
pub fn p_pi_pow(model: &DerivedModel, n: u32) -> Matrix {
    model.p_pi.pow(n)
}

/// Discounted reward accumulation `sum_{k<n} gamma^k P^k R` (the constant
/// part of the n-step backup operator).
pub fn bellman_offset(model: &DerivedModel, n: u32) -> Vec<f64> {
    let ns = model.num_states();
    let mut acc = vec![0.0; ns];
    let mut term = model.r_pi.clone();
    let mut weight = 1.0;
    for k in 0..n {
        for (a, t) in acc.iter_mut().zip(&term) {
            *a += weight * t;
        }
        if k + 1 < n {
            term = model.p_pi.matvec(&term);
            weight *= model.gamma();
        }
    }
    acc
}

/// n-step backup operator applied to a value vector:
/// `T^n(x) = sum_{k<n} gamma^k P^k R + gamma^n P^n x`.
pub fn bellman_apply(model: &DerivedModel, n: u32, x: &[f64]) -> Vec<f64> {
    let mut acc = bellman_offset(model, n);
    let pnx = p_pi_pow(model, n).matvec(x);
    let gn = model.gamma().powi(n as i32);
    for (a, v) in acc.iter_mut().zip(&pnx) {
        *a += gn * v;
    }
    acc
}

/// Iteration matrix of n-step projected value iteration:
/// `A = (Phi^T D Phi)^{-1} Phi^T D gamma^n P^n Phi`.
pub fn iteration_matrix_a(model: &DerivedModel, n: u32) -> Matrix {
    iteration_matrix_a_with_pow(model, &p_pi_pow(model, n), n)
}

fn iteration_matrix_a_with_pow(model: &DerivedModel, p_pow: &Matrix, n: u32) -> Matrix {
    let gn = model.gamma().powi(n as i32);
    model
        .gram_inv
        .mul(&model.phi_t_d())
        .mul(&p_pow.scale(gn))
        .mul(&model.phi)
}

/// System matrix of the n-step projected fixed-point equation:
/// `N = Phi^T D (I - gamma^n P^n) Phi`.
pub fn pbe_matrix_n(model: &DerivedModel, n: u32) -> Matrix {
    pbe_matrix_n_with_pow(model, &p_pi_pow(model, n), n)
}

fn pbe_matrix_n_with_pow(model: &DerivedModel, p_pow: &Matrix, n: u32) -> Matrix {
    let ns = model.num_states();
    let gn = model.gamma().powi(n as i32);
    let inner = Matrix::identity(ns).sub(&p_pow.scale(gn));
    model.phi_t_d().mul(&inner).mul(&model.phi)
}

/// Right-hand side of the n-step projected fixed-point equation:
/// `b = Phi^T D sum_{k<n} gamma^k P^k R`.
pub fn pbe_vector_b(model: &DerivedModel, n: u32) -> Vec<f64> {
    model.phi_t_d().matvec(&bellman_offset(model, n))
}

/// The matrix governing the stochastic-update mean dynamics, `S = -N`,
/// together with its stability verdicts.
#[derive(Clone, Debug, Serialize)]
pub struct TdMatrixS {
    pub matrix: Matrix,
    pub spectrum: Spectrum,
    pub is_hurwitz: bool,
    /// Largest eigenvalue of the symmetric part (S + S^T)/2.
    pub symmetric_part_max_eig: f64,
    pub symmetric_part_negdef: bool,
}

pub fn td_matrix_s(model: &DerivedModel, n: u32) -> Result<TdMatrixS> {
    td_matrix_s_from(pbe_matrix_n(model, n).scale(-1.0))
}

fn td_matrix_s_from(s: Matrix) -> Result<TdMatrixS> {
    let spectrum = linalg::eig_general(&s)?;
    let sym = s.add(&s.transpose()).scale(0.5);
    let sym_eigs = linalg::eig_symmetric(&sym)?;
    let max_sym = *sym_eigs.last().unwrap();
    Ok(TdMatrixS {
        is_hurwitz: spectrum.is_hurwitz(),
        symmetric_part_negdef: max_sym < -STABILITY_MARGIN,
        symmetric_part_max_eig: max_sym,
        spectrum,
        matrix: s,
    })
}

// ---------------------------------------------------------------------------
// Contraction certificates
// ---------------------------------------------------------------------------

/// The two computable contraction certificates at horizon n. Either value
/// being below 1 guarantees the projected n-step backup is a contraction
/// (in the unweighted sup norm and in the weighted Euclidean norm
/// respectively), and hence that the iteration matrix is Schur.
#[derive(Clone, Debug, Serialize)]
pub struct ContractionCertificates {
    /// `gamma^n * ||Pi||_inf`: sup-norm certificate.
    pub inf_value: f64,
    /// `gamma^n * ||P^n||_D` (weighted operator norm, where the projection
    /// is nonexpansive): weighted-norm certificate.
    pub weighted_value: f64,
}

impl ContractionCertificates {
    /// True when either certificate clears 1 by the stability margin.
    pub fn holds(&self) -> bool {
        self.inf_value < 1.0 - STABILITY_MARGIN || self.weighted_value < 1.0 - STABILITY_MARGIN
    }
}

/// Weighted operator norm `||M||_D = ||D^{1/2} M D^{-1/2}||_2`.
pub fn weighted_operator_norm(m: &Matrix, d: &[f64]) -> f64 {
    let n = m.rows();
    let mut w = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            w.set(i, j, (d[i] / d[j]).sqrt() * m.get(i, j));
        }
    }
    linalg::norm_2(&w)
}

pub fn contraction_certificates(model: &DerivedModel, n: u32) -> ContractionCertificates {
    contraction_certificates_with_pow(model, &p_pi_pow(model, n), n)
}

fn contraction_certificates_with_pow(
    model: &DerivedModel,
    p_pow: &Matrix,
    n: u32,
) -> ContractionCertificates {
    let gn = model.gamma().powi(n as i32);
    ContractionCertificates {
        inf_value: gn * linalg::norm_inf(&model.pi_proj),
        weighted_value: gn * weighted_operator_norm(p_pow, &model.d_beta),
    }
}

// ---------------------------------------------------------------------------
// Sufficient horizon bounds
// ---------------------------------------------------------------------------

/// Smallest integer n strictly greater than the log-ratio threshold `x`
/// (clamped to at least 1). The thresholds certify strict inequalities of the
/// form `gamma^n * c < 1`, which require n > x = ln(1/c)/ln(gamma); when x
/// lands on an integer the next integer is the first valid horizon. Values
/// within 1e-9 of an integer are snapped to it first so that floating-point
/// log evaluation cannot move an exact threshold across the floor boundary.
fn bound_from_log_threshold(x: f64) -> u32 {
    if !x.is_finite() || x <= 0.0 {
        return 1;
    }
    let r = x.round();
    let base = if (x - r).abs() < 1e-9 { r } else { x.floor() };
    let b = base as i64 + 1;
    b.max(1) as u32
}

/// Sufficient horizon for `||A(n)||_inf < 1` via the submultiplicative bound
/// `||A(n)||_inf <= ||(Phi^T D Phi)^{-1} Phi^T D||_inf * gamma^n * ||Phi||_inf`
/// (the chain's n-step matrix has unit sup norm). Verified numerically at the
/// returned horizon.
pub fn bound_n1(model: &DerivedModel) -> u32 {
    let c = linalg::norm_inf(&model.gram_inv.mul(&model.phi_t_d())) * linalg::norm_inf(&model.phi);
    let x = (1.0 / c).ln() / model.gamma().ln();
    let mut n = bound_from_log_threshold(x);
    // The returned horizon must actually satisfy the strict norm inequality.
    while linalg::norm_inf(&iteration_matrix_a(model, n)) >= 1.0 && n < 10_000 {
        n += 1;
    }
    n
}

/// Sufficient horizon for the sup-norm contraction certificate
/// `gamma^n ||Pi||_inf < 1`, verified numerically at the returned horizon.
pub fn bound_n2(model: &DerivedModel) -> u32 {
    let pi_norm = linalg::norm_inf(&model.pi_proj);
    let x = (1.0 / pi_norm).ln() / model.gamma().ln();
    let mut n = bound_from_log_threshold(x);
    while model.gamma().powi(n as i32) * pi_norm >= 1.0 && n < 10_000 {
        n += 1;
    }
    n
}

/// Sufficient horizon for negative definiteness (hence Hurwitz-ness) of S,
/// with the two branch quantities and which one won.
#[derive(Clone, Debug, Serialize)]
pub struct NthBound {
    pub nth_upper: u32,
    pub q1: f64,
    pub q2: f64,
    /// ln(q1)/ln(gamma): the horizon threshold implied by branch q1.
    pub log_ratio_q1: f64,
    /// ln(q2)/ln(gamma): the horizon threshold implied by branch q2.
    pub log_ratio_q2: f64,
    /// "q1" or "q2" — the larger quantity, which yields the smaller bound.
    pub winner: String,
}

pub fn bound_nth(model: &DerivedModel) -> Result<NthBound> {
    let d_min = model.d_beta.iter().cloned().fold(f64::INFINITY, f64::min);
    let d_max = model.d_beta.iter().cloned().fold(0.0, f64::max);
    let gram_id = model.phi.transpose().mul(&model.phi);
    let eigs = linalg::eig_symmetric(&gram_id)?;
    let lam_min = eigs.first().copied().unwrap();
    let lam_max = eigs.last().copied().unwrap();
    let phi_max_sq = (0..model.num_states())
        .map(|s| model.phi.row(s).iter().map(|v| v * v).sum::<f64>())
        .fold(0.0, f64::max);
    let ns = model.num_states() as f64;

    let q1 = d_min * lam_min / phi_max_sq;
    let q2 = (d_min * lam_min) / (d_max * lam_max) / ns.sqrt();
    let lg = model.gamma().ln();
    let (log_q1, log_q2) = (q1.ln() / lg, q2.ln() / lg);
    let q = q1.max(q2);
    let nth_upper = bound_from_log_threshold(q.ln() / lg);
    Ok(NthBound {
        nth_upper,
        q1,
        q2,
        log_ratio_q1: log_q1,
        log_ratio_q2: log_q2,
        winner: if q1 >= q2 { "q1".into() } else { "q2".into() },
    })
}

// ---------------------------------------------------------------------------
// Minimum-horizon search
// ---------------------------------------------------------------------------

/// Stability criteria searchable over horizons.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Iteration matrix A has spectral radius below 1.
    Schur,
    /// A computable contraction certificate holds (sup-norm or weighted).
    ContractionInf,
    /// S is Hurwitz.
    Hurwitz,
    /// Symmetric part of S is negative definite.
    NegDef,
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Criterion::Schur => "schur",
            Criterion::ContractionInf => "contraction_inf",
            Criterion::Hurwitz => "hurwitz",
            Criterion::NegDef => "negdef",
        };
        f.write_str(s)
    }
}

/// Result of scanning horizons 1..=n_max for a criterion. Satisfaction at n
/// does not imply satisfaction at n+1, so alongside the first satisfying
/// horizon the full bitmap is recorded (`satisfied[i]` is horizon i+1).
#[derive(Clone, Debug, Serialize)]
pub struct MinNSearch {
    pub criterion: Criterion,
    pub n_max: u32,
    pub first: Option<u32>,
    pub satisfied: Vec<bool>,
}

/// Default search cap when the caller does not provide one:
/// `max(4 * nth_upper, 200)` so searches terminate on adversarial models.
pub fn default_search_cap(model: &DerivedModel) -> Result<u32> {
    Ok((4 * bound_nth(model)?.nth_upper).max(200))
}

pub fn min_n_search(model: &DerivedModel, criterion: Criterion, n_max: u32) -> Result<MinNSearch> {
    let mut satisfied = Vec::with_capacity(n_max as usize);
    let mut first = None;
    let mut p_pow = model.p_pi.clone();
    for n in 1..=n_max {
        let ok = match criterion {
            Criterion::Schur => {
                let a = iteration_matrix_a_with_pow(model, &p_pow, n);
                linalg::eig_general(&a)?.is_schur()
            }
            Criterion::ContractionInf => {
                contraction_certificates_with_pow(model, &p_pow, n).holds()
            }
            Criterion::Hurwitz => {
                let s = pbe_matrix_n_with_pow(model, &p_pow, n).scale(-1.0);
                linalg::eig_general(&s)?.is_hurwitz()
            }
            Criterion::NegDef => {
                let s = pbe_matrix_n_with_pow(model, &p_pow, n).scale(-1.0);
                let sym = s.add(&s.transpose()).scale(0.5);
                *linalg::eig_symmetric(&sym)?.last().unwrap() < -STABILITY_MARGIN
            }
        };
        satisfied.push(ok);
        if ok && first.is_none() {
            first = Some(n);
        }
        if n < n_max {
            p_pow = p_pow.mul(&model.p_pi);
        }
    }
    Ok(MinNSearch { criterion, n_max, first, satisfied })
}

// ---------------------------------------------------------------------------
// Fixed points and error bounds
// ---------------------------------------------------------------------------

/// Unique fixed point of the projected n-step backup, `theta = N^{-1} b`,
/// verified by its fixed-point residual.
pub fn fixed_point_theta_n(model: &DerivedModel, n: u32) -> Result<Vec<f64>> {
    let nm = pbe_matrix_n(model, n);
    let b = pbe_vector_b(model, n);
    let theta = linalg::solve(&nm, &b).map_err(|_| {
        NtdError::Singular(format!(
            "n-step system matrix is singular at n={n}; the projected iteration \
             has no unique fixed point at this horizon"
        ))
    })?;
    // Residual check against the projected operator itself.
    let v = model.phi.matvec(&theta);
    let tv = bellman_apply(model, n, &v);
    let ptv = model.pi_proj.matvec(&tv);
    let resid = v
        .iter()
        .zip(&ptv)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let scale = 1.0 + linalg::vec_inf(&v);
    if resid > 1e-8 * scale {
        return Err(NtdError::Numeric(format!(
            "fixed-point residual {resid:.3e} exceeds tolerance at n={n}"
        )));
    }
    Ok(theta)
}

/// Closed-form solution of the one-step projected fixed-point equation:
/// `theta = -(Phi^T D (gamma P - I) Phi)^{-1} Phi^T D R`.
pub fn theta_star_pbe(model: &DerivedModel) -> Result<Vec<f64>> {
    let ns = model.num_states();
    let inner = model.p_pi.scale(model.gamma()).sub(&Matrix::identity(ns));
    let m = model.phi_t_d().mul(&inner).mul(&model.phi).scale(-1.0);
    let rhs = model.phi_t_d().matvec(&model.r_pi);
    linalg::solve(&m, &rhs).map_err(|_| {
        NtdError::Singular(
            "one-step system matrix is singular; the standing nonsingularity \
             assumption fails for this model"
                .into(),
        )
    })
}

/// Weighted least-squares projection of the true value function onto the
/// feature span: `theta = (Phi^T D Phi)^{-1} Phi^T D V`.
pub fn theta_infinity(model: &DerivedModel) -> Vec<f64> {
    model.gram_inv.matvec(&model.phi_t_d().matvec(&model.v_pi))
}

/// Mean-square projected n-step backup error:
/// `1/2 || Pi T^n(Phi theta) - Phi theta ||_D^2`.
pub fn mspbe(model: &DerivedModel, theta: &[f64], n: u32) -> f64 {
    let v = model.phi.matvec(theta);
    let tv = bellman_apply(model, n, &v);
    let ptv = model.pi_proj.matvec(&tv);
    let diff: Vec<f64> = ptv.iter().zip(&v).map(|(a, b)| a - b).collect();
    0.5 * linalg::weighted_norm(&diff, &model.d_beta).powi(2)
}

/// Solution-quality bounds at horizon n (valid when the sup-norm contraction
/// certificate holds), together with the actual errors they dominate.
#[derive(Clone, Debug, Serialize)]
pub struct ErrorBounds {
    pub n: u32,
    /// gamma^n * ||Pi||_inf (must be < 1).
    pub gamma_n_pi_norm: f64,
    /// Bound on ||Phi theta_n - V||_inf.
    pub bound_vs_true: f64,
    /// Bound on ||Phi theta_n - Phi theta_infinity||_inf.
    pub bound_vs_projection_limit: f64,
    pub actual_vs_true: f64,
    pub actual_vs_projection_limit: f64,
}

pub fn error_bounds(model: &DerivedModel, n: u32) -> Result<ErrorBounds> {
    let pi_norm = linalg::norm_inf(&model.pi_proj);
    let contraction = model.gamma().powi(n as i32) * pi_norm;
    if contraction >= 1.0 {
        return Err(NtdError::Numeric(format!(
            "sup-norm contraction certificate fails at n={n}: gamma^n ||Pi||_inf = {contraction:.6}"
        )));
    }
    let pv = model.pi_proj.matvec(&model.v_pi);
    let proj_gap = pv
        .iter()
        .zip(&model.v_pi)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let bound_vs_true = proj_gap / (1.0 - contraction);
    let bound_vs_projection_limit = contraction * bound_vs_true;

    let theta_n = fixed_point_theta_n(model, n)?;
    let v_n = model.phi.matvec(&theta_n);
    let actual_vs_true = v_n
        .iter()
        .zip(&model.v_pi)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let v_inf = model.phi.matvec(&theta_infinity(model));
    let actual_vs_projection_limit = v_n
        .iter()
        .zip(&v_inf)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    Ok(ErrorBounds {
        n,
        gamma_n_pi_norm: contraction,
        bound_vs_true,
        bound_vs_projection_limit,
        actual_vs_true,
        actual_vs_projection_limit,
    })
}

/// Step-size lower bound from the Lyapunov construction: with P solving
/// `S^T P + P S = -I`, any step size up to `1/(lambda_max(P) lambda_max(S^T S))`
/// keeps the mean recursion stable. Note that for one-dimensional parameter
/// spaces this value equals exactly 2/|N|, which places `I - alpha N` exactly
/// on the unit circle — the bound is a supremum estimate, not an interior
/// point, so callers that need strict stability should back off (e.g. halve).
pub fn alpha_star_bound(s: &Matrix) -> Result<f64> {
    let p = linalg::lyapunov_solve(s)?;
    let lam_p = *linalg::eig_symmetric(&p)?.last().unwrap();
    let sts = s.transpose().mul(s);
    let lam_sts = *linalg::eig_symmetric(&sts)?.last().unwrap();
    if !(lam_p > 0.0 && lam_sts > 0.0) {
        return Err(NtdError::Numeric("degenerate Lyapunov quantities".into()));
    }
    Ok(1.0 / (lam_p * lam_sts))
}

// ---------------------------------------------------------------------------
// Aggregated reports
// ---------------------------------------------------------------------------

/// Per-horizon stability report aggregating every diagnostic.
#[derive(Clone, Debug, Serialize)]
pub struct StabilityReport {
    pub n: u32,
    pub matrix_a: Matrix,
    pub matrix_n: Matrix,
    pub matrix_s: Matrix,
    pub a_spectrum: Spectrum,
    pub s_spectrum: Spectrum,
    pub a_is_schur: bool,
    pub n_is_nonsingular: bool,
    pub s_is_hurwitz: bool,
    pub s_symmetric_part_negdef: bool,
    /// True when a computable contraction certificate holds at this horizon
    /// (sup-norm certificate `gamma_n_pi_norm < 1` or the weighted-norm
    /// certificate; see `ContractionCertificates`).
    pub inf_norm_contraction: bool,
    /// gamma^n * ||Pi||_inf.
    pub gamma_n_pi_norm: f64,
    /// Step-size lower bound (present when S is Hurwitz).
    pub alpha_star_lower: Option<f64>,
}

pub fn stability_report(model: &DerivedModel, n: u32) -> Result<StabilityReport> {
    if n == 0 {
        return Err(NtdError::InvalidConfig("horizon n must be at least 1".into()));
    }
    let p_pow = p_pi_pow(model, n);
    let matrix_a = iteration_matrix_a_with_pow(model, &p_pow, n);
    let matrix_n = pbe_matrix_n_with_pow(model, &p_pow, n);
    let matrix_s = matrix_n.scale(-1.0);
    let a_spectrum = linalg::eig_general(&matrix_a)?;
    let s_info = td_matrix_s_from(matrix_s.clone())?;
    let certs = contraction_certificates_with_pow(model, &p_pow, n);

    let a_is_schur = a_spectrum.is_schur();
    let n_is_nonsingular = linalg::invert(&matrix_n).is_ok();
    let inf_norm_contraction = certs.holds();
    let alpha_star_lower = if s_info.is_hurwitz {
        alpha_star_bound(&matrix_s).ok()
    } else {
        None
    };

    let report = StabilityReport {
        n,
        matrix_a,
        matrix_n,
        matrix_s,
        a_is_schur,
        n_is_nonsingular,
        s_is_hurwitz: s_info.is_hurwitz,
        s_symmetric_part_negdef: s_info.symmetric_part_negdef,
        inf_norm_contraction,
        gamma_n_pi_norm: certs.inf_value,
        alpha_star_lower,
        a_spectrum,
        s_spectrum: s_info.spectrum,
    };
    check_report_invariants(&report)?;
    Ok(report)
}

/// The implications between certificates are theorems; violations indicate a
/// numerical problem and are surfaced as errors. Spectra within the marginal
/// band around the stability boundary are exempt, since strict-inequality
/// statements say nothing there.
fn check_report_invariants(r: &StabilityReport) -> Result<()> {
    let schur_marginal = r.a_spectrum.schur_marginal();
    let hurwitz_marginal = r.s_spectrum.hurwitz_marginal();
    if r.a_is_schur && !r.n_is_nonsingular && !schur_marginal {
        return Err(NtdError::Numeric(format!(
            "invariant violation at n={}: Schur iteration matrix with singular system matrix",
            r.n
        )));
    }
    if r.s_symmetric_part_negdef && !r.s_is_hurwitz && !hurwitz_marginal {
        return Err(NtdError::Numeric(format!(
            "invariant violation at n={}: negative-definite symmetric part but not Hurwitz",
            r.n
        )));
    }
    if r.inf_norm_contraction && !r.a_is_schur && !schur_marginal {
        return Err(NtdError::Numeric(format!(
            "invariant violation at n={}: contraction certificate without Schur stability",
            r.n
        )));
    }
    Ok(())
}

/// Sufficient bounds plus observed minimum horizons.
#[derive(Clone, Debug, Serialize)]
pub struct BoundSet {
    pub n1_upper: u32,
    pub n2_upper: u32,
    pub nth_upper: u32,
    pub min_n_schur: u32,
    pub min_n_contraction_inf: u32,
    pub min_n_hurwitz: u32,
}

pub fn bound_set(model: &DerivedModel, n_max: u32) -> Result<BoundSet> {
    let n1_upper = bound_n1(model);
    let n2_upper = bound_n2(model);
    let nth = bound_nth(model)?;
    let nth_upper = nth.nth_upper;
    // Extend the search far enough that the sufficient bounds themselves are
    // inside the searched range; the minima must exist below them.
    let cap = n_max
        .max((4 * nth_upper).max(200))
        .max(n1_upper)
        .max(n2_upper);
    let schur = min_n_search(model, Criterion::Schur, cap)?;
    let contraction = min_n_search(model, Criterion::ContractionInf, cap)?;
    let hurwitz = min_n_search(model, Criterion::Hurwitz, cap)?;
    let (min_n_schur, min_n_contraction_inf, min_n_hurwitz) =
        match (schur.first, contraction.first, hurwitz.first) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(NtdError::NonConvergence(format!(
                    "minimum-horizon search exhausted the cap {cap} without satisfying \
                     every criterion"
                )))
            }
        };
    let set = BoundSet {
        n1_upper,
        n2_upper,
        nth_upper,
        min_n_schur,
        min_n_contraction_inf,
        min_n_hurwitz,
    };
    if set.min_n_schur > set.n1_upper
        || set.min_n_contraction_inf > set.n2_upper
        || set.min_n_hurwitz > set.nth_upper
        || set.min_n_schur > set.min_n_contraction_inf
    {
        return Err(NtdError::Numeric(format!(
            "bound dominance violated: {set:?}"
        )));
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::MdpSpec;

    const FIX_D: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/mdp_d.json");
    const FIX_E: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/mdp_e.json");
    const FIX_F: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/mdp_f.json");
    const FIX_EX1: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/example1.json");

    fn model(path: &str) -> DerivedModel {
        DerivedModel::from_path(path).unwrap()
    }

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "expected {b}, got {a} (tol {tol})");
    }

    /// A model with identity features where behavior equals target policy.
    fn identity_feature_on_policy() -> DerivedModel {
        let spec = MdpSpec {
            num_states: 3,
            num_actions: 1,
            gamma: 0.9,
            transition: vec![vec![
                vec![0.2, 0.5, 0.3],
                vec![0.4, 0.1, 0.5],
                vec![0.25, 0.25, 0.5],
            ]],
            reward: vec![vec![vec![1.0; 3]; 3]],
            features: vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ],
            target_policy: vec![vec![1.0]; 3],
            behavior_policy: vec![vec![1.0]; 3],
            state_weights: None,
        };
        DerivedModel::new(spec).unwrap()
    }

    #[test]
    fn iteration_matrix_identity_features_is_discounted_chain_power() {
        let m = identity_feature_on_policy();
        for n in [1u32, 2, 3] {
            let a = iteration_matrix_a(&m, n);
            let expect = m.p_pi.pow(n).scale(m.gamma().powi(n as i32));
            assert!(linalg::norm_inf(&a.sub(&expect)) <= 1e-12);
            let rho = linalg::eig_general(&a).unwrap().spectral_radius;
            assert_close(rho, m.gamma().powi(n as i32), 1e-9);
        }
    }

    #[test]
    fn schur_threshold_two_state_fixture() {
        let m = model(FIX_D);
        let rho2 = linalg::eig_general(&iteration_matrix_a(&m, 2)).unwrap().spectral_radius;
        let rho3 = linalg::eig_general(&iteration_matrix_a(&m, 3)).unwrap().spectral_radius;
        assert!(rho2 >= 1.0, "n=2 should not be Schur, rho={rho2}");
        assert!(rho3 < 1.0, "n=3 should be Schur, rho={rho3}");
    }

    #[test]
    fn pbe_n1_matches_one_step_system_matrix() {
        let m = model(FIX_D);
        let n1 = pbe_matrix_n(&m, 1);
        let ns = m.num_states();
        let direct = m
            .phi_t_d()
            .mul(&Matrix::identity(ns).sub(&m.p_pi.scale(m.gamma())))
            .mul(&m.phi);
        assert!(linalg::norm_inf(&n1.sub(&direct)) <= 1e-14);
    }

    #[test]
    fn pbe_zero_reward_gives_zero_rhs() {
        let mut spec = MdpSpec::from_path(FIX_D).unwrap();
        for block in spec.reward.iter_mut() {
            for row in block.iter_mut() {
                row.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let m = DerivedModel::new(spec).unwrap();
        for n in 1..=4 {
            assert_close(linalg::vec_inf(&pbe_vector_b(&m, n)), 0.0, 0.0);
            assert_close(linalg::vec_inf(&fixed_point_theta_n(&m, n).unwrap()), 0.0, 1e-12);
        }
    }

    #[test]
    fn fixed_point_solves_system() {
        let m = model(FIX_E);
        for n in [1u32, 3, 5] {
            let nm = pbe_matrix_n(&m, n);
            let b = pbe_vector_b(&m, n);
            let theta = fixed_point_theta_n(&m, n).unwrap();
            let resid: Vec<f64> = nm
                .matvec(&theta)
                .iter()
                .zip(&b)
                .map(|(a, b)| a - b)
                .collect();
            assert!(linalg::vec_inf(&resid) <= 1e-8 * (1.0 + linalg::vec_inf(&b)));
        }
    }

    #[test]
    fn td_matrix_values_three_state_fixture() {
        // 1x1 case: the matrix value itself is pinned by the source example.
        let m = model(FIX_E);
        let s1 = td_matrix_s(&m, 1).unwrap();
        let s2 = td_matrix_s(&m, 2).unwrap();
        let v1 = s1.matrix.get(0, 0);
        let v2 = s2.matrix.get(0, 0);
        assert!((-0.19..=-0.15).contains(&v1), "S(1) = {v1}");
        assert!((0.005..=0.035).contains(&v2), "S(2) = {v2}");
        assert!(s1.is_hurwitz);
        assert!(!s2.is_hurwitz);
    }

    #[test]
    fn hurwitz_threshold_two_state_fixture() {
        let m = model(FIX_D);
        assert!(!td_matrix_s(&m, 2).unwrap().is_hurwitz);
        assert!(td_matrix_s(&m, 3).unwrap().is_hurwitz);
    }

    #[test]
    fn on_policy_identity_features_negdef() {
        let m = identity_feature_on_policy();
        for n in 1..=5 {
            let s = td_matrix_s(&m, n).unwrap();
            assert!(s.symmetric_part_negdef, "n={n}");
            assert!(s.is_hurwitz, "n={n}");
        }
    }

    #[test]
    fn bounds_two_state_fixture_exact() {
        let m = model(FIX_D);
        assert_eq!(bound_n1(&m), 11);
        assert_eq!(bound_n2(&m), 11);
        assert_eq!(bound_nth(&m).unwrap().nth_upper, 54);
    }

    #[test]
    fn bounds_identity_features_are_one() {
        let m = identity_feature_on_policy();
        assert_eq!(bound_n1(&m), 1);
        assert_eq!(bound_n2(&m), 1);
        // Projection is the identity here, so the certificate holds at n=1.
        assert!(contraction_certificates(&m, 1).holds());
    }

    #[test]
    fn bound_n1_certifies_norm_strictly() {
        for path in [FIX_D, FIX_E, FIX_F] {
            let m = model(path);
            let n = bound_n1(&m);
            let norm = linalg::norm_inf(&iteration_matrix_a(&m, n));
            assert!(norm < 1.0, "{path}: norm at bound {n} is {norm}");
        }
    }

    #[test]
    fn bound_n2_certifies_contraction_strictly() {
        for path in [FIX_D, FIX_E, FIX_F] {
            let m = model(path);
            let n = bound_n2(&m);
            let c = m.gamma().powi(n as i32) * linalg::norm_inf(&m.pi_proj);
            assert!(c < 1.0, "{path}: certificate at bound {n} is {c}");
        }
    }

    #[test]
    fn nth_branch_winners_differ_between_fixtures() {
        let f = bound_nth(&model(FIX_F)).unwrap();
        assert_eq!(f.winner, "q2");
        assert!((46.0..=50.0).contains(&f.log_ratio_q1), "q1 ratio {}", f.log_ratio_q1);
        assert!((35.0..=39.0).contains(&f.log_ratio_q2), "q2 ratio {}", f.log_ratio_q2);

        let e = bound_nth(&model(FIX_E)).unwrap();
        assert_eq!(e.winner, "q1", "three-state fixture takes the other branch");
    }

    #[test]
    fn min_n_search_two_state_fixture() {
        let m = model(FIX_D);
        assert_eq!(min_n_search(&m, Criterion::Schur, 60).unwrap().first, Some(3));
        assert_eq!(min_n_search(&m, Criterion::ContractionInf, 60).unwrap().first, Some(5));
        assert_eq!(min_n_search(&m, Criterion::Hurwitz, 60).unwrap().first, Some(3));
    }

    #[test]
    fn hurwitz_not_monotone_in_horizon() {
        let m = model(FIX_E);
        let search = min_n_search(&m, Criterion::Hurwitz, 2).unwrap();
        assert_eq!(search.satisfied, vec![true, false]);
    }

    #[test]
    fn theta_star_matches_one_step_fixed_point() {
        for path in [FIX_D, FIX_E, FIX_F] {
            let m = model(path);
            let a = theta_star_pbe(&m).unwrap();
            let b = fixed_point_theta_n(&m, 1).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-10 * (1.0 + y.abs()), "{path}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn mspbe_vanishes_at_fixed_points() {
        let m = model(FIX_D);
        for n in [1u32, 2, 3, 4] {
            let theta = fixed_point_theta_n(&m, n).unwrap();
            let scale = 1.0 + linalg::vec_inf(&theta).powi(2);
            assert!(mspbe(&m, &theta, n) <= 1e-12 * scale, "n={n}");
        }
        let theta1 = theta_star_pbe(&m).unwrap();
        assert!(mspbe(&m, &theta1, 1) <= 1e-12 * (1.0 + linalg::vec_inf(&theta1).powi(2)));
    }

    #[test]
    fn mspbe_matches_definitional_evaluation() {
        let m = model(FIX_E);
        let theta = vec![0.7];
        let n = 2;
        let v = m.phi.matvec(&theta);
        let tv = bellman_apply(&m, n, &v);
        let ptv = m.pi_proj.matvec(&tv);
        let diff: Vec<f64> = ptv.iter().zip(&v).map(|(a, b)| a - b).collect();
        let direct: f64 =
            0.5 * diff.iter().zip(&m.d_beta).map(|(x, d)| d * x * x).sum::<f64>();
        assert_close(mspbe(&m, &theta, n), direct, 1e-14);
    }

    #[test]
    fn theta_infinity_identity_features_recovers_value() {
        let m = identity_feature_on_policy();
        let t = theta_infinity(&m);
        for (a, b) in t.iter().zip(&m.v_pi) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn theta_infinity_first_order_condition() {
        let m = model(FIX_F);
        let t = theta_infinity(&m);
        let resid: Vec<f64> = m
            .phi
            .matvec(&t)
            .iter()
            .zip(&m.v_pi)
            .map(|(a, b)| a - b)
            .collect();
        let grad = m.phi_t_d().matvec(&resid);
        assert!(linalg::vec_inf(&grad) <= 1e-10 * (1.0 + linalg::vec_inf(&m.v_pi)));
    }

    #[test]
    fn error_bounds_zero_for_representable_value() {
        // Identity features represent the value exactly.
        let m = identity_feature_on_policy();
        let eb = error_bounds(&m, 1).unwrap();
        assert_close(eb.bound_vs_true, 0.0, 1e-8);
        assert_close(eb.bound_vs_projection_limit, 0.0, 1e-8);
        assert_close(eb.actual_vs_true, 0.0, 1e-7);
        assert_close(eb.actual_vs_projection_limit, 0.0, 1e-7);
    }

    #[test]
    fn error_bounds_dominate_actuals_and_shrink() {
        let m = model(FIX_D);
        let n = bound_n2(&m);
        let eb = error_bounds(&m, n).unwrap();
        assert!(eb.actual_vs_true <= eb.bound_vs_true + 1e-9);
        assert!(eb.actual_vs_projection_limit <= eb.bound_vs_projection_limit + 1e-9);
        let eb5 = error_bounds(&m, n + 5).unwrap();
        assert!(
            eb5.bound_vs_projection_limit < eb.bound_vs_projection_limit,
            "bound must strictly decrease with the horizon"
        );
    }

    #[test]
    fn error_bounds_precondition_enforced() {
        let m = model(FIX_D);
        assert!(error_bounds(&m, 1).is_err(), "certificate fails at n=1");
    }

    #[test]
    fn alpha_star_closed_forms() {
        let bound = alpha_star_bound(&Matrix::identity(2).scale(-1.0)).unwrap();
        assert_close(bound, 2.0, 1e-10);
        let bound = alpha_star_bound(&Matrix::diag(&[-1.0, -2.0])).unwrap();
        assert_close(bound, 0.5, 1e-10);
    }

    #[test]
    fn alpha_star_scalar_case_sits_on_boundary() {
        // For a 1-dimensional parameter space the bound is exactly 2/|N|:
        // I - alpha N lands exactly on the unit circle, and any interior
        // step size (e.g. half the bound) is strictly stable.
        let m = model(FIX_D);
        let n = 3;
        let s = td_matrix_s(&m, n).unwrap();
        assert!(s.is_hurwitz);
        let alpha = alpha_star_bound(&s.matrix).unwrap();
        let nm = pbe_matrix_n(&m, n);
        let rho_at_bound =
            linalg::eig_general(&Matrix::identity(1).sub(&nm.scale(alpha))).unwrap().spectral_radius;
        assert_close(rho_at_bound, 1.0, 1e-9);
        let rho_half =
            linalg::eig_general(&Matrix::identity(1).sub(&nm.scale(alpha / 2.0))).unwrap().spectral_radius;
        assert!(rho_half < 1.0 - 1e-9);
    }

    #[test]
    fn stability_report_example_fixture_nonsingular_but_not_schur() {
        let m = model(FIX_EX1);
        let r = stability_report(&m, 1).unwrap();
        assert!(r.n_is_nonsingular);
        assert!(!r.a_is_schur);
        // The projected discounted chain has spectral radius above one.
        let rho = linalg::eig_general(&m.pi_proj.mul(&m.p_pi).scale(m.gamma()))
            .unwrap()
            .spectral_radius;
        assert!(rho > 1.0, "projected chain spectral radius {rho}");
    }

    #[test]
    fn stability_report_is_internally_consistent() {
        let m = model(FIX_D);
        for n in 1..=12 {
            let r = stability_report(&m, n).unwrap();
            assert!(linalg::norm_inf(&r.matrix_s.add(&r.matrix_n)) == 0.0);
            assert_close(
                r.gamma_n_pi_norm,
                m.gamma().powi(n as i32) * linalg::norm_inf(&m.pi_proj),
                1e-12,
            );
            if r.s_is_hurwitz {
                assert!(r.alpha_star_lower.unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn bound_set_two_state_fixture_exact() {
        let m = model(FIX_D);
        let b = bound_set(&m, 60).unwrap();
        assert_eq!(
            (b.n1_upper, b.n2_upper, b.nth_upper),
            (11, 11, 54)
        );
        assert_eq!(
            (b.min_n_schur, b.min_n_contraction_inf, b.min_n_hurwitz),
            (3, 5, 3)
        );
    }

    #[test]
    fn bound_set_searches_beyond_requested_range() {
        // Even with a tiny per-horizon report range, the minima are found.
        let m = model(FIX_E);
        let b = bound_set(&m, 2).unwrap();
        assert!(b.min_n_schur >= 1 && b.min_n_schur <= b.n1_upper);
        assert!(b.min_n_hurwitz == 1);
    }
}
