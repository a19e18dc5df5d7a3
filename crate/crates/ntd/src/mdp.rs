//! Finite-MDP data model: problem-file ingestion and validation, induced
//! chains, stationary distributions, true value functions, and weighted
//! projection operators.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NtdError, Result};
use crate::linalg::{self, Matrix};

/// Row-sum tolerance for stochastic rows (transition and policy matrices).
const ROW_SUM_TOL: f64 = 1e-12;

/// A validated model description loaded from a JSON problem file.
///
/// File schema (UTF-8 JSON object): `num_states` (int), `num_actions` (int),
/// `gamma` (number), `transition` (array `[a][s][s']`), `reward` (array
/// `[a][s][s']`), `features` (array `[s][j]`), `target_policy` (array
/// `[s][a]`), `behavior_policy` (array `[s][a]`), optional `state_weights`
/// (array `[s]`).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MdpSpec {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    /// Transition tensor indexed `[a][s][s']`.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// Deterministic reward tensor indexed `[a][s][s']`.
    pub reward: Vec<Vec<Vec<f64>>>,
    /// Feature matrix rows, one per state: `features[s][j]`.
    pub features: Vec<Vec<f64>>,
    /// Target policy `pi[s][a]` (the policy being evaluated).
    pub target_policy: Vec<Vec<f64>>,
    /// Behavior policy `beta[s][a]` (the policy generating data).
    pub behavior_policy: Vec<Vec<f64>>,
    /// Optional explicit state weighting; absent means "use the stationary
    /// distribution of the behavior chain".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_weights: Option<Vec<f64>>,
}

impl MdpSpec {
    /// Parse and validate a model from JSON text.
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: MdpSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Parse and validate a model from a file path.
    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Number of feature columns m.
    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, |row| row.len())
    }

    /// Feature matrix as a dense |S| x m matrix.
    pub fn phi(&self) -> Matrix {
        Matrix::from_rows(&self.features)
    }

    pub fn validate(&self) -> Result<()> {
        let ns = self.num_states;
        let na = self.num_actions;
        if ns == 0 {
            return Err(NtdError::InvalidModel("num_states must be positive".into()));
        }
        if na == 0 {
            return Err(NtdError::InvalidModel("num_actions must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(NtdError::InvalidModel(format!(
                "gamma must lie strictly inside (0,1), got {}",
                self.gamma
            )));
        }

        check_tensor_shape("transition", &self.transition, na, ns)?;
        check_tensor_shape("reward", &self.reward, na, ns)?;
        for (a, block) in self.transition.iter().enumerate() {
            for (s, row) in block.iter().enumerate() {
                check_stochastic_row(&format!("transition row not stochastic: P[a={a}][s={s}]"), row)?;
            }
        }
        for block in &self.reward {
            for row in block {
                for (j, v) in row.iter().enumerate() {
                    if !v.is_finite() {
                        return Err(NtdError::InvalidModel(format!(
                            "reward entry at s'={j} is not finite"
                        )));
                    }
                }
            }
        }

        check_policy_shape("target_policy", &self.target_policy, ns, na)?;
        check_policy_shape("behavior_policy", &self.behavior_policy, ns, na)?;
        for s in 0..ns {
            for a in 0..na {
                if self.target_policy[s][a] > 0.0 && self.behavior_policy[s][a] <= 0.0 {
                    return Err(NtdError::InvalidModel(format!(
                        "support violated: target_policy[s={s}][a={a}] = {} > 0 \
                         but behavior_policy[s={s}][a={a}] = {}",
                        self.target_policy[s][a], self.behavior_policy[s][a]
                    )));
                }
            }
        }

        if self.features.len() != ns {
            return Err(NtdError::InvalidModel(format!(
                "features must have {ns} rows, got {}",
                self.features.len()
            )));
        }
        let m = self.feature_dim();
        if m == 0 {
            return Err(NtdError::InvalidModel("features must have at least one column".into()));
        }
        for (s, row) in self.features.iter().enumerate() {
            if row.len() != m {
                return Err(NtdError::InvalidModel(format!(
                    "features row {s} has {} columns, expected {m}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(NtdError::InvalidModel(format!("features row {s} has a non-finite entry")));
            }
        }
        if m > ns {
            return Err(NtdError::InvalidModel(format!(
                "feature dimension {m} exceeds number of states {ns}; \
                 the feature matrix cannot have full column rank"
            )));
        }
        // Full-column-rank check via singular values of the feature matrix
        // (eigenvalues of its Gram with identity weights).
        let phi = self.phi();
        let ata = phi.transpose().mul(&phi);
        let eigs = linalg::eig_symmetric(&ata)?;
        let sig_max = eigs.last().copied().unwrap_or(0.0).max(0.0).sqrt();
        let sig_min = eigs.first().copied().unwrap_or(0.0).max(0.0).sqrt();
        if sig_min < 1e-10 * sig_max || sig_max == 0.0 {
            return Err(NtdError::InvalidModel(format!(
                "feature matrix rank-deficient: sigma_min = {sig_min:.3e}, sigma_max = {sig_max:.3e}"
            )));
        }

        if let Some(w) = &self.state_weights {
            if w.len() != ns {
                return Err(NtdError::InvalidModel(format!(
                    "state_weights must have {ns} entries, got {}",
                    w.len()
                )));
            }
            for (s, v) in w.iter().enumerate() {
                if !(v.is_finite() && *v > 0.0) {
                    return Err(NtdError::InvalidModel(format!(
                        "state_weights[{s}] must be a positive real, got {v}"
                    )));
                }
            }
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(NtdError::InvalidModel(format!(
                    "state_weights must sum to 1, got {sum}"
                )));
            }
        }
        Ok(())
    }
}

fn check_tensor_shape(name: &str, t: &[Vec<Vec<f64>>], na: usize, ns: usize) -> Result<()> {
    if t.len() != na {
        return Err(NtdError::InvalidModel(format!(
            "{name} must have {na} action blocks, got {}",
            t.len()
        )));
    }
    for (a, block) in t.iter().enumerate() {
        if block.len() != ns {
            return Err(NtdError::InvalidModel(format!(
                "{name}[a={a}] must have {ns} rows, got {}",
                block.len()
            )));
        }
        for (s, row) in block.iter().enumerate() {
            if row.len() != ns {
                return Err(NtdError::InvalidModel(format!(
                    "{name}[a={a}][s={s}] must have {ns} entries, got {}",
                    row.len()
                )));
            }
        }
    }
    Ok(())
}

fn check_stochastic_row(label: &str, row: &[f64]) -> Result<()> {
    for (j, v) in row.iter().enumerate() {
        if !v.is_finite() || *v < 0.0 {
            return Err(NtdError::InvalidModel(format!(
                "{label}: entry {j} is {v}, must be a nonnegative real"
            )));
        }
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(NtdError::InvalidModel(format!("{label} sums to {sum}")));
    }
    Ok(())
}

fn check_policy_shape(name: &str, p: &[Vec<f64>], ns: usize, na: usize) -> Result<()> {
    if p.len() != ns {
        return Err(NtdError::InvalidModel(format!(
            "{name} must have {ns} rows, got {}",
            p.len()
        )));
    }
    for (s, row) in p.iter().enumerate() {
        if row.len() != na {
            return Err(NtdError::InvalidModel(format!(
                "{name} row {s} must have {na} entries, got {}",
                row.len()
            )));
        }
        for (a, v) in row.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 || *v > 1.0 {
                return Err(NtdError::InvalidModel(format!(
                    "{name}[s={s}][a={a}] = {v} is outside [0,1]"
                )));
            }
        }
        check_stochastic_row(&format!("{name} row not stochastic: row {s}"), row)?;
    }
    Ok(())
}

/// Transition matrix of the chain induced by a policy:
/// `M[s][s'] = sum_a policy[s][a] * P[a][s][s']`.
pub fn induced_transition(spec: &MdpSpec, policy: &[Vec<f64>]) -> Matrix {
    let ns = spec.num_states;
    let mut m = Matrix::zeros(ns, ns);
    for s in 0..ns {
        for a in 0..spec.num_actions {
            let w = policy[s][a];
            if w == 0.0 {
                continue;
            }
            for sp in 0..ns {
                let v = m.get(s, sp) + w * spec.transition[a][s][sp];
                m.set(s, sp, v);
            }
        }
    }
    m
}

/// Expected one-step reward under a policy:
/// `R[s] = sum_a policy[s][a] * sum_{s'} P[a][s][s'] * r(s,a,s')`.
pub fn expected_reward(spec: &MdpSpec, policy: &[Vec<f64>]) -> Vec<f64> {
    let ns = spec.num_states;
    let mut r = vec![0.0; ns];
    for s in 0..ns {
        for a in 0..spec.num_actions {
            let w = policy[s][a];
            if w == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for sp in 0..ns {
                inner += spec.transition[a][s][sp] * spec.reward[a][s][sp];
            }
            r[s] += w * inner;
        }
    }
    r
}

/// Verify irreducibility of a chain by reachability closure over its positive
/// entries; returns the first unreachable (from, to) pair on failure.
pub fn check_irreducible(chain: &Matrix) -> Result<()> {
    let n = chain.rows();
    for start in 0..n {
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if !seen[j] && chain.get(i, j) > 0.0 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if let Some(bad) = seen.iter().position(|v| !v) {
            return Err(NtdError::InvalidModel(format!(
                "chain reducible: state {bad} is not reachable from state {start}"
            )));
        }
    }
    Ok(())
}

/// Stationary distribution of an irreducible row-stochastic chain, computed
/// as the least-squares solution of the augmented system
/// `[chain^T - I; 1^T] d = [0; 1]` (well-defined for periodic chains too).
pub fn stationary_distribution(chain: &Matrix) -> Result<Vec<f64>> {
    if !chain.is_square() {
        return Err(NtdError::Numeric("chain must be square".into()));
    }
    check_irreducible(chain)?;
    let n = chain.rows();
    // Normal equations of the augmented least-squares system. With
    // B = [chain^T - I; 1^T] and rhs = e_{n+1}, B^T rhs is the ones vector.
    let ct_minus_i = chain.transpose().sub(&Matrix::identity(n));
    let mut btb = ct_minus_i.transpose().mul(&ct_minus_i);
    for i in 0..n {
        for j in 0..n {
            let v = btb.get(i, j) + 1.0;
            btb.set(i, j, v);
        }
    }
    let ones = vec![1.0; n];
    let mut d = linalg::solve(&btb, &ones)?;
    // One pass of iterative refinement on the normal equations tightens the
    // residual toward machine precision.
    for _ in 0..2 {
        let btbd = btb.matvec(&d);
        let resid: Vec<f64> = ones.iter().zip(&btbd).map(|(a, b)| a - b).collect();
        if linalg::vec_inf(&resid) == 0.0 {
            break;
        }
        let corr = linalg::solve(&btb, &resid)?;
        for (di, ci) in d.iter_mut().zip(&corr) {
            *di += ci;
        }
    }
    let total: f64 = d.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(NtdError::Numeric("stationary solve produced a non-normalizable vector".into()));
    }
    for v in d.iter_mut() {
        *v /= total;
    }
    for (s, v) in d.iter().enumerate() {
        if !(*v > 0.0) {
            return Err(NtdError::Numeric(format!(
                "stationary distribution entry {s} is {v}, expected strictly positive"
            )));
        }
    }
    // Residual guarantee: || d^T chain - d^T ||_inf <= 1e-12.
    let dt_chain = chain.transpose().matvec(&d);
    let resid = dt_chain
        .iter()
        .zip(&d)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if resid > 1e-12 {
        return Err(NtdError::NonConvergence(format!(
            "stationary distribution residual {resid:.3e} exceeds 1e-12"
        )));
    }
    Ok(d)
}

/// True value function: solves `(I - gamma * P) V = R`.
pub fn true_value(p_pi: &Matrix, r_pi: &[f64], gamma: f64) -> Result<Vec<f64>> {
    let n = p_pi.rows();
    let a = Matrix::identity(n).sub(&p_pi.scale(gamma));
    linalg::solve(&a, r_pi)
}

/// Weighted projection onto the feature span:
/// `Pi = Phi (Phi^T D Phi)^{-1} Phi^T D` with `D = diag(weights)`.
pub fn projection_matrix(phi: &Matrix, weights: &[f64]) -> Result<Matrix> {
    let (gram, _phi_t_d) = weighted_gram(phi, weights);
    let phi_t_d = _phi_t_d;
    // Solve G X = Phi^T D column-by-column, then Pi = Phi X.
    let ns = phi.rows();
    let cols: Vec<Vec<f64>> = (0..ns)
        .map(|j| (0..phi.cols()).map(|i| phi_t_d.get(i, j)).collect())
        .collect();
    let solved = linalg::solve_multi(&gram, &cols)
        .map_err(|e| NtdError::Singular(format!("weighted Gram matrix is singular: {e}")))?;
    let mut x = Matrix::zeros(phi.cols(), ns);
    for (j, col) in solved.iter().enumerate() {
        for i in 0..phi.cols() {
            x.set(i, j, col[i]);
        }
    }
    Ok(phi.mul(&x))
}

/// Returns (Phi^T D Phi, Phi^T D) for a positive weight vector.
pub fn weighted_gram(phi: &Matrix, weights: &[f64]) -> (Matrix, Matrix) {
    let ns = phi.rows();
    let m = phi.cols();
    let mut phi_t_d = Matrix::zeros(m, ns);
    for i in 0..m {
        for s in 0..ns {
            phi_t_d.set(i, s, phi.get(s, i) * weights[s]);
        }
    }
    let gram = phi_t_d.mul(phi);
    (gram, phi_t_d)
}

/// All derived quantities of a model, computed once and shared immutably.
#[derive(Clone, Debug)]
pub struct DerivedModel {
    pub spec: MdpSpec,
    /// Feature matrix |S| x m.
    pub phi: Matrix,
    /// Chain induced by the target policy.
    pub p_pi: Matrix,
    /// Chain induced by the behavior policy.
    pub p_beta: Matrix,
    /// Expected reward under the target policy.
    pub r_pi: Vec<f64>,
    /// State weighting (explicit override or stationary distribution of
    /// `p_beta`).
    pub d_beta: Vec<f64>,
    /// diag(d_beta).
    pub d_beta_matrix: Matrix,
    /// True value function of the target policy.
    pub v_pi: Vec<f64>,
    /// Weighted projection matrix onto the feature span.
    pub pi_proj: Matrix,
    /// Weighted Gram matrix Phi^T D Phi.
    pub gram: Matrix,
    /// Inverse of the weighted Gram matrix.
    pub gram_inv: Matrix,
}

impl DerivedModel {
    pub fn new(spec: MdpSpec) -> Result<Self> {
        spec.validate()?;
        let phi = spec.phi();
        let p_pi = induced_transition(&spec, &spec.target_policy);
        let p_beta = induced_transition(&spec, &spec.behavior_policy);
        let r_pi = expected_reward(&spec, &spec.target_policy);
        let d_beta = match &spec.state_weights {
            Some(w) => w.clone(),
            None => stationary_distribution(&p_beta)?,
        };
        let d_beta_matrix = Matrix::diag(&d_beta);
        let v_pi = true_value(&p_pi, &r_pi, spec.gamma)?;
        let pi_proj = projection_matrix(&phi, &d_beta)?;
        let (gram, _) = weighted_gram(&phi, &d_beta);
        let gram_inv = linalg::invert(&gram)
            .map_err(|e| NtdError::Singular(format!("weighted Gram matrix is singular: {e}")))?;

        let model = DerivedModel {
            spec,
            phi,
            p_pi,
            p_beta,
            r_pi,
            d_beta,
            d_beta_matrix,
            v_pi,
            pi_proj,
            gram,
            gram_inv,
        };
        model.check_invariants()?;
        Ok(model)
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::new(MdpSpec::from_path(path)?)
    }

    pub fn num_states(&self) -> usize {
        self.spec.num_states
    }

    pub fn feature_dim(&self) -> usize {
        self.phi.cols()
    }

    pub fn gamma(&self) -> f64 {
        self.spec.gamma
    }

    /// m x |S| matrix Phi^T D used throughout the analysis layer.
    pub fn phi_t_d(&self) -> Matrix {
        weighted_gram(&self.phi, &self.d_beta).1
    }

    fn check_invariants(&self) -> Result<()> {
        for s in 0..self.num_states() {
            let sum: f64 = self.p_pi.row(s).iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(NtdError::Numeric(format!(
                    "induced target chain row {s} sums to {sum}"
                )));
            }
        }
        for (s, v) in self.d_beta.iter().enumerate() {
            if !(*v > 0.0) {
                return Err(NtdError::Numeric(format!(
                    "state weighting entry {s} is {v}, expected strictly positive"
                )));
            }
        }
        let idem = self.pi_proj.mul(&self.pi_proj).sub(&self.pi_proj);
        if linalg::norm_inf(&idem) > 1e-10 {
            return Err(NtdError::Numeric(format!(
                "projection matrix is not idempotent: defect {:.3e}",
                linalg::norm_inf(&idem)
            )));
        }
        // Bellman identity (I - gamma P) v = r componentwise.
        let lhs = {
            let pv = self.p_pi.matvec(&self.v_pi);
            self.v_pi
                .iter()
                .zip(&pv)
                .map(|(v, pv)| v - self.gamma() * pv)
                .collect::<Vec<f64>>()
        };
        for (s, (l, r)) in lhs.iter().zip(&self.r_pi).enumerate() {
            if (l - r).abs() > 1e-10 * (1.0 + r.abs()) {
                return Err(NtdError::Numeric(format!(
                    "value function violates the Bellman identity at state {s}: {l} vs {r}"
                )));
            }
        }
        Ok(())
    }
}
