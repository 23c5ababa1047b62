//! The three-step edge estimator, its group-penalized variant for general
//! L, the sample-split debiased estimator, the variance estimator, and
//! confidence intervals / p-values built on the asymptotic normality of the
//! refitted target coordinates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::models::{Domain, ModelSpec};
use crate::score_engine::{assemble, assemble_with, AssembleOptions, DataMatrix, EdgeScoreSystem};
use crate::solvers::{
    clime_rows, group_lasso_cd, lasso_cd, refit, GroupSpec, QuadraticLassoProblem, SolveResult,
};

/// λ ∝ √(log s′/n) rate constant for real-valued domains.
pub const LAMBDA_CONST_REALS: f64 = 0.5;
/// λ rate constant for non-negative domains, where the weighted statistics
/// have heavier tails.
pub const LAMBDA_CONST_NONNEG: f64 = 1.0;

/// Default tuning parameter c·√(log s′ / n); the constant is frozen per
/// domain and overridable per call or through the harness config.
pub fn default_lambda(domain: Domain, s_prime: usize, n: usize) -> f64 {
    let c = match domain {
        Domain::Reals => LAMBDA_CONST_REALS,
        Domain::NonNegReals => LAMBDA_CONST_NONNEG,
    };
    c * ((s_prime as f64).ln() / n as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ThreeStep,
    Debiased,
}

/// Point estimate(s) for one edge with everything inference needs
/// downstream. Supports are sorted coordinate lists in the edge map's
/// coordinate order; `gamma_nuisance`/`gamma_refit` live in the deletion
/// space of their target coordinate (length s′−1).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EdgeEstimate {
    pub edge: (usize, usize),
    pub method: Method,
    /// Sample count the estimate was computed from (half-1 count for the
    /// debiased method).
    pub n: usize,
    /// The L target coordinates of the refitted (or debiased) solution.
    pub theta_tilde: Vec<f64>,
    /// Full s′ solution vector: the refit for ThreeStep, the pilot lasso
    /// for Debiased.
    pub theta_full: Vec<f64>,
    pub m1_hat: Vec<usize>,
    pub m2_hat: Vec<usize>,
    pub m_tilde: Vec<usize>,
    /// σ_{n,l} = E_n[η₁ᵢφ₁,l + η₂ᵢφ₂,l] per target (empty for Debiased).
    pub sigma_n: Vec<f64>,
    /// L×L variance matrix of the √n-scaled target estimates (row-major).
    pub v_hat: Vec<Vec<f64>>,
    /// Step-2 penalized nuisance solutions, one per target.
    pub gamma_nuisance: Vec<Vec<f64>>,
    /// Refitted nuisance solutions on M̃ ∖ target, one per target.
    pub gamma_refit: Vec<Vec<f64>>,
}

impl EdgeEstimate {
    pub fn l_count(&self) -> usize {
        self.theta_tilde.len()
    }

    pub fn v_hat_matrix(&self) -> DMatrix<f64> {
        let l = self.l_count();
        DMatrix::from_fn(l, l, |i, j| self.v_hat[i][j])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Two-sided confidence interval θ̃ ± z_{κ/2}·√(V̂_ll/n) per target
/// coordinate; `level` is the confidence level κ.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub level: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ConfidenceInterval {
    pub fn covers(&self, truth: &[f64]) -> bool {
        truth
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(t, (lo, hi))| lo <= t && t <= hi)
    }

    pub fn width(&self, l: usize) -> f64 {
        self.upper[l] - self.lower[l]
    }
}

fn require_converged(step: &str, edge: (usize, usize), sol: &SolveResult) -> Result<()> {
    if sol.converged {
        Ok(())
    } else {
        Err(Error::NotConverged(format!(
            "{step} for edge {edge:?}: KKT residual {:.3e} after {} sweeps",
            sol.kkt_residual, sol.iterations
        )))
    }
}

/// Maps a deletion-space index (coordinate t removed) back to full space.
fn undelete(idx: usize, t: usize) -> usize {
    if idx < t {
        idx
    } else {
        idx + 1
    }
}

/// Maps a full-space index into the deletion space of t. Panics if j == t.
fn delete(j: usize, t: usize) -> usize {
    debug_assert_ne!(j, t);
    if j < t {
        j
    } else {
        j - 1
    }
}

/// Three-step estimator for L = 1 families: lasso pilot on (Γ̂, ĝ), lasso
/// nuisance regression, then an unpenalized refit on the union support.
pub fn three_step_edge(
    spec: &ModelSpec,
    data: &DataMatrix,
    a: usize,
    b: usize,
    lambda1: f64,
    lambda2: f64,
) -> Result<EdgeEstimate> {
    if spec.l_count() != 1 {
        return Err(Error::Config(
            "three_step_edge handles L = 1; use three_step_edge_group for general L".into(),
        ));
    }
    let sys = assemble(spec, data, a, b)?;
    three_step_from_system(&sys, lambda1, lambda2, false)
}

/// Three-step estimator with the group penalties of the general-L
/// procedure. For L = 1 every group degenerates to a singleton and the
/// output matches [`three_step_edge`].
pub fn three_step_edge_group(
    spec: &ModelSpec,
    data: &DataMatrix,
    a: usize,
    b: usize,
    lambda1: f64,
    lambda2: f64,
) -> Result<EdgeEstimate> {
    let sys = assemble(spec, data, a, b)?;
    three_step_from_system(&sys, lambda1, lambda2, true)
}

/// Dispatches on the family's L: plain lasso penalties for L = 1, group
/// penalties otherwise.
pub fn estimate_edge(
    spec: &ModelSpec,
    data: &DataMatrix,
    a: usize,
    b: usize,
    lambda1: f64,
    lambda2: f64,
) -> Result<EdgeEstimate> {
    let sys = assemble(spec, data, a, b)?;
    three_step_from_system(&sys, lambda1, lambda2, spec.l_count() > 1)
}

/// Runs the three-step procedure on an already assembled system.
pub fn three_step_from_system(
    sys: &EdgeScoreSystem,
    lambda1: f64,
    lambda2: f64,
    grouped: bool,
) -> Result<EdgeEstimate> {
    if !(lambda1 > 0.0) || !(lambda2 > 0.0) {
        return Err(Error::Config(format!(
            "lambda1 = {lambda1}, lambda2 = {lambda2}: both must be > 0"
        )));
    }
    let map = sys.map();
    let edge = map.edge();
    let l_count = map.l_count();
    if !grouped && l_count != 1 {
        return Err(Error::Config("ungrouped three-step requires L = 1".into()));
    }
    let targets = map.target_indices();

    // Step 1: penalized pilot fit.
    let mut prob1 =
        QuadraticLassoProblem::new(sys.gamma_hat().clone(), sys.g_hat().clone(), lambda1);
    let (m1, pilot) = if grouped {
        prob1 = prob1.with_groups(GroupSpec { blocks: map.cross_groups() });
        let sol = group_lasso_cd(&prob1)?;
        require_converged("step-1 group lasso", edge, &sol)?;
        (grouped_support(&sol.theta, &map.cross_groups()), sol)
    } else {
        let sol = lasso_cd(&prob1)?;
        require_converged("step-1 lasso", edge, &sol)?;
        (sol.support.clone(), sol)
    };
    let _ = pilot;

    // Step 2: nuisance (decorrelation) regressions.
    let mut m2: Vec<usize> = Vec::new();
    let mut gamma_nuisance: Vec<Vec<f64>> = Vec::new();
    let mut nuisance_systems = Vec::with_capacity(l_count);
    for &t in &targets {
        nuisance_systems.push(sys.nuisance_regression_system(t)?);
    }
    if grouped {
        let (gammas, support) = joint_nuisance_regression(sys, &targets, &nuisance_systems, lambda2)?;
        gamma_nuisance = gammas;
        m2 = support;
    } else {
        let t = targets[0];
        let (a2, b2) = &nuisance_systems[0];
        let sol = lasso_cd(&QuadraticLassoProblem::new(a2.clone(), -b2, lambda2))?;
        require_converged("step-2 lasso", edge, &sol)?;
        m2.extend(sol.support.iter().map(|&d| undelete(d, t)));
        gamma_nuisance.push(sol.theta.iter().copied().collect());
    }

    // Step 3: refit on the union support.
    let mut m_tilde: Vec<usize> = targets.iter().copied().chain(m1.iter().copied()).collect();
    m_tilde.extend(m2.iter().copied());
    m_tilde.sort_unstable();
    m_tilde.dedup();
    if m_tilde.len() >= sys.n() {
        return Err(Error::OverparameterizedRefit { support: m_tilde.len(), n: sys.n() });
    }
    let theta_full = refit(sys.gamma_hat(), sys.g_hat(), &m_tilde)?;

    // Refitted nuisance vectors, residual scale, and the variance estimate.
    let mut gamma_refit = Vec::with_capacity(l_count);
    let mut sigma_n = Vec::with_capacity(l_count);
    for (li, &t) in targets.iter().enumerate() {
        let s_full: Vec<usize> = m_tilde.iter().copied().filter(|&j| j != t).collect();
        let (a2, b2) = &nuisance_systems[li];
        let gamma_t = if s_full.is_empty() {
            DVector::zeros(map.dim() - 1)
        } else {
            let s_del: Vec<usize> = s_full.iter().map(|&j| delete(j, t)).collect();
            refit(a2, &(-b2), &s_del)?
        };
        let sigma = residual_scale(sys, t, &s_full, &gamma_t)?;
        let scale = 1.0 + sys.gamma_hat()[(t, t)].abs();
        if sigma.abs() < 1e-12 * scale {
            return Err(Error::DegenerateVariance(format!(
                "sigma_n = {sigma:.3e} for edge {edge:?}, target {t}"
            )));
        }
        gamma_refit.push(gamma_t.iter().copied().collect());
        sigma_n.push(sigma);
    }
    let v_hat = variance_hat(sys, &m_tilde, &theta_full)?;

    Ok(EdgeEstimate {
        edge,
        method: Method::ThreeStep,
        n: sys.n(),
        theta_tilde: targets.iter().map(|&t| theta_full[t]).collect(),
        theta_full: theta_full.iter().copied().collect(),
        m1_hat: m1,
        m2_hat: m2,
        m_tilde,
        sigma_n,
        v_hat: matrix_rows(&v_hat),
        gamma_nuisance,
        gamma_refit,
    })
}

/// σ_{n} for one target coordinate from the refitted nuisance vector:
/// E_n[η₁ᵢ·φ₁,t + η₂ᵢ·φ₂,t] with ηⱼᵢ = φⱼ,t(xᵢ) − φⱼ,S(xᵢ)ᵀγ̃.
fn residual_scale(
    sys: &EdgeScoreSystem,
    t: usize,
    s_full: &[usize],
    gamma_del: &DVector<f64>,
) -> Result<f64> {
    let n = sys.n() as f64;
    let phi1_t = sys.phi1_columns(&[t])?;
    let phi2_t = sys.phi2_columns(&[t])?;
    let (mut eta1, mut eta2) =
        (DVector::from(phi1_t.column(0)), DVector::from(phi2_t.column(0)));
    if !s_full.is_empty() {
        let gamma_s =
            DVector::from_iterator(s_full.len(), s_full.iter().map(|&j| gamma_del[delete(j, t)]));
        eta1 -= sys.phi1_columns(s_full)? * &gamma_s;
        eta2 -= sys.phi2_columns(s_full)? * &gamma_s;
    }
    Ok((eta1.dot(&phi1_t.column(0)) + eta2.dot(&phi2_t.column(0))) / n)
}

fn grouped_support(theta: &DVector<f64>, blocks: &[Vec<usize>]) -> Vec<usize> {
    let mut in_block = vec![false; theta.len()];
    let mut support = Vec::new();
    for block in blocks {
        for &j in block {
            in_block[j] = true;
        }
        if block.iter().any(|&j| theta[j] != 0.0) {
            support.extend_from_slice(block);
        }
    }
    support.extend((0..theta.len()).filter(|&j| !in_block[j] && theta[j] != 0.0));
    support.sort_unstable();
    support
}

/// The general-L step 2: one joint group-lasso over the L stacked
/// deletion-space regressions, coupled by cross-edge groups that stack the
/// E(a,c)/E(b,c) blocks across the L regressions.
fn joint_nuisance_regression(
    sys: &EdgeScoreSystem,
    targets: &[usize],
    systems: &[(DMatrix<f64>, DVector<f64>)],
    lambda2: f64,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let map = sys.map();
    let l_count = targets.len();
    let sd = map.dim() - 1; // deletion-space dimension per regression
    let joint_dim = l_count * sd;

    let mut a_joint = DMatrix::zeros(joint_dim, joint_dim);
    let mut b_joint = DVector::zeros(joint_dim);
    for (li, (a2, b2)) in systems.iter().enumerate() {
        let off = li * sd;
        a_joint.view_mut((off, off), (sd, sd)).copy_from(a2);
        b_joint.rows_mut(off, sd).copy_from(&(-b2));
    }

    let blocks: Vec<Vec<usize>> = map
        .cross_groups()
        .iter()
        .map(|group| {
            group
                .iter()
                .flat_map(|&j| {
                    targets.iter().enumerate().map(move |(li, &t)| li * sd + delete(j, t))
                })
                .collect()
        })
        .collect();

    let prob = QuadraticLassoProblem::new(a_joint, b_joint, lambda2)
        .with_groups(GroupSpec { blocks: blocks.clone() });
    let sol = group_lasso_cd(&prob)?;
    require_converged("step-2 joint group lasso", map.edge(), &sol)?;

    let mut gammas = Vec::with_capacity(l_count);
    for li in 0..l_count {
        gammas.push(sol.theta.rows(li * sd, sd).iter().copied().collect::<Vec<f64>>());
    }

    // Support in full coordinates: active cross blocks contribute the whole
    // E(·,c) block; ungrouped coordinates map back per regression.
    let mut support: Vec<usize> = Vec::new();
    for (block, full_group) in blocks.iter().zip(map.cross_groups()) {
        if block.iter().any(|&j| sol.theta[j] != 0.0) {
            support.extend(full_group);
        }
    }
    let mut in_block = vec![false; joint_dim];
    for block in &blocks {
        for &j in block {
            in_block[j] = true;
        }
    }
    for (li, &t) in targets.iter().enumerate() {
        for d in 0..sd {
            let j = li * sd + d;
            if !in_block[j] && sol.theta[j] != 0.0 {
                support.push(undelete(d, t));
            }
        }
    }
    support.sort_unstable();
    support.dedup();
    Ok((gammas, support))
}

/// The sandwich variance estimator on the restricted system:
/// V̂ = Eᵀ(Γ̂_M̃)⁻¹ Z (Γ̂_M̃)⁻¹ E with Z = E_n[rᵢ rᵢᵀ],
/// rᵢ = (Γ(xᵢ)θ + g(xᵢ))_M̃ and E the target columns. Returns the L×L
/// block (scalar when L = 1).
pub fn variance_hat(
    sys: &EdgeScoreSystem,
    m_tilde: &[usize],
    theta_full: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let map = sys.map();
    let targets = map.target_indices();
    for &t in &targets {
        if !m_tilde.contains(&t) {
            return Err(Error::Config(format!("target coordinate {t} missing from support")));
        }
    }
    let k = m_tilde.len();
    let mut gamma_restricted = DMatrix::zeros(k, k);
    for (ci, &i) in m_tilde.iter().enumerate() {
        for (cj, &j) in m_tilde.iter().enumerate() {
            gamma_restricted[(ci, cj)] = sys.gamma_hat()[(i, j)];
        }
    }
    let eig = gamma_restricted.symmetric_eigen();
    let max = eig.eigenvalues.amax();
    if eig.eigenvalues.iter().any(|&v| v <= 0.0 || max / v > 1e14) {
        return Err(Error::Singular("restricted Γ̂ is singular in variance_hat".into()));
    }
    // U = (Γ̂_M̃)⁻¹ E, one column per target.
    let mut u = DMatrix::zeros(k, targets.len());
    for (col, &t) in targets.iter().enumerate() {
        let local = m_tilde.iter().position(|&j| j == t).unwrap();
        let mut e = DVector::zeros(k);
        e[local] = 1.0;
        let rotated = eig.eigenvectors.transpose() * e;
        let scaled = DVector::from_iterator(
            k,
            rotated.iter().zip(eig.eigenvalues.iter()).map(|(&r, &d)| r / d),
        );
        u.set_column(col, &(&eig.eigenvectors * scaled));
    }
    let rows = sys.residual_rows(theta_full, m_tilde)?;
    let ru = rows * &u; // n×L
    let mut v = ru.transpose() * &ru / sys.n() as f64;
    let vt = v.transpose();
    v = (v + vt) * 0.5;
    Ok(v)
}

/// Debiased estimator: pilot lasso on half 1, CLIME rows for the target
/// coordinates on half 2's Hessian, correction and variance evaluated with
/// half-1 moments. The caller provides the two disjoint halves.
pub fn debiased_edge(
    spec: &ModelSpec,
    half1: &DataMatrix,
    half2: &DataMatrix,
    a: usize,
    b: usize,
    lambda1: f64,
    lambda2: f64,
) -> Result<EdgeEstimate> {
    let sys1 = assemble(spec, half1, a, b)?;
    let sys2 = assemble_with(
        spec,
        half2,
        a,
        b,
        AssembleOptions { keep_samples: false, center_mean: false },
    )?;
    let rows = clime_rows(sys2.gamma_hat(), lambda2, &sys1.map().target_indices())?;
    debias_from_system(&sys1, lambda1, &rows)
}

/// Debiased estimator with caller-supplied correction rows (for example the
/// exact inverse of a large-sample Hessian).
pub fn debiased_edge_with_rows(
    spec: &ModelSpec,
    half1: &DataMatrix,
    a: usize,
    b: usize,
    lambda1: f64,
    rows: &[DVector<f64>],
) -> Result<EdgeEstimate> {
    let sys1 = assemble(spec, half1, a, b)?;
    debias_from_system(&sys1, lambda1, rows)
}

fn debias_from_system(
    sys1: &EdgeScoreSystem,
    lambda1: f64,
    rows: &[DVector<f64>],
) -> Result<EdgeEstimate> {
    if !(lambda1 > 0.0) {
        return Err(Error::Config(format!("lambda1 = {lambda1} must be > 0")));
    }
    let map = sys1.map();
    let edge = map.edge();
    let targets = map.target_indices();
    let dim = map.dim();
    if rows.len() != targets.len() || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Dimension(format!(
            "need {} correction rows of length {dim}",
            targets.len()
        )));
    }

    let sol = lasso_cd(&QuadraticLassoProblem::new(
        sys1.gamma_hat().clone(),
        sys1.g_hat().clone(),
        lambda1,
    ))?;
    require_converged("debiased pilot lasso", edge, &sol)?;
    let grad = sys1.gradient(&sol.theta)?;
    let theta_tilde: Vec<f64> = targets
        .iter()
        .zip(rows)
        .map(|(&t, m_row)| sol.theta[t] - m_row.dot(&grad))
        .collect();

    // V̂ = central covariance of the per-sample corrections
    // m_rowᵀ(Γ(xᵢ)θ̂ + g(xᵢ)) over half 1.
    let all: Vec<usize> = (0..dim).collect();
    let resid = sys1.residual_rows(&sol.theta, &all)?;
    let n = sys1.n();
    let mut y = DMatrix::zeros(n, targets.len());
    for (col, m_row) in rows.iter().enumerate() {
        y.set_column(col, &(&resid * m_row));
    }
    let means: Vec<f64> = (0..targets.len()).map(|c| y.column(c).sum() / n as f64).collect();
    let mut v = DMatrix::zeros(targets.len(), targets.len());
    for i in 0..targets.len() {
        for j in 0..targets.len() {
            let mut acc = 0.0;
            for r in 0..n {
                acc += (y[(r, i)] - means[i]) * (y[(r, j)] - means[j]);
            }
            v[(i, j)] = acc / n as f64;
        }
    }
    if v.iter().any(|&x| !x.is_finite()) {
        return Err(Error::DegenerateVariance("non-finite debiased variance".into()));
    }

    let mut m_tilde: Vec<usize> = sol.support.iter().copied().chain(targets.iter().copied()).collect();
    m_tilde.sort_unstable();
    m_tilde.dedup();
    Ok(EdgeEstimate {
        edge,
        method: Method::Debiased,
        n,
        theta_tilde,
        theta_full: sol.theta.iter().copied().collect(),
        m1_hat: sol.support.clone(),
        m2_hat: Vec::new(),
        m_tilde,
        sigma_n: Vec::new(),
        v_hat: matrix_rows(&v),
        gamma_nuisance: Vec::new(),
        gamma_refit: Vec::new(),
    })
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Standard normal quantile z with Φ(z) = q.
pub fn normal_quantile(q: f64) -> f64 {
    Normal::standard().inverse_cdf(q)
}

/// Two-sided CI at confidence level κ: θ̃ ± z_{(1+κ)/2}·√(V̂_ll/n).
pub fn confidence_interval(est: &EdgeEstimate, level: f64) -> Result<ConfidenceInterval> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::Config(format!("confidence level {level} outside (0,1)")));
    }
    let z = normal_quantile(0.5 + level / 2.0);
    let mut lower = Vec::with_capacity(est.l_count());
    let mut upper = Vec::with_capacity(est.l_count());
    for l in 0..est.l_count() {
        let vll = est.v_hat[l][l];
        if vll < 0.0 {
            return Err(Error::DegenerateVariance(format!("V̂[{l}][{l}] = {vll} < 0")));
        }
        let half = z * (vll / est.n as f64).sqrt();
        lower.push(est.theta_tilde[l] - half);
        upper.push(est.theta_tilde[l] + half);
    }
    Ok(ConfidenceInterval { level, lower, upper })
}

/// Two-sided p-value for H₀: θ_ab = null_value (L = 1 estimates).
///
/// With V̂ = 0 the normal approximation degenerates: returns 1 when the
/// estimate equals the null exactly and 0 otherwise.
pub fn p_value(est: &EdgeEstimate, null_value: f64) -> Result<f64> {
    if est.l_count() != 1 {
        return Err(Error::Config("p_value is defined for L = 1; use the χ² test for L > 1".into()));
    }
    let vll = est.v_hat[0][0];
    if vll < 0.0 {
        return Err(Error::DegenerateVariance(format!("V̂ = {vll} < 0")));
    }
    let diff = est.theta_tilde[0] - null_value;
    if vll == 0.0 {
        return Ok(if diff == 0.0 { 1.0 } else { 0.0 });
    }
    let z = diff.abs() / (vll / est.n as f64).sqrt();
    let normal = Normal::standard();
    Ok(2.0 * (1.0 - normal.cdf(z)))
}
