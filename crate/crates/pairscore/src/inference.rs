//! Simultaneous neighborhood tests via the Gaussian multiplier bootstrap,
//! the isolated-node test, thresholded support recovery, two-sample
//! differential-network tests (bootstrap and the extreme-value baseline),
//! and the χ² moderate-deviation alternative for general L.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::estimators::{default_lambda, three_step_from_system, EdgeEstimate};
use crate::models::ModelSpec;
use crate::score_engine::{assemble, DataMatrix, EdgeScoreSystem};
use crate::seeding::mix_seed;

/// Which deviations the max statistic counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    /// max √n(θ̃ − θ̆): rejects for large positive deviations.
    OneSided,
    /// max √n|θ̃ − θ̆|: the default two-sided test.
    TwoSided,
}

/// Identifies one column of the stacked statistics: edge (a, b), statistic
/// index l.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColKey {
    pub a: usize,
    pub b: usize,
    pub l: usize,
}

/// Per-sample influence rows z̃_{i·} = −σ⁻¹·w̃ᵀ(Γ(xᵢ)θ̆ + g(xᵢ)), one
/// column per tested coordinate.
#[derive(Clone, Debug)]
pub struct InfluenceMatrix {
    pub node: usize,
    pub keys: Vec<ColKey>,
    pub z: DMatrix<f64>,
}

impl InfluenceMatrix {
    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn column_means(&self) -> DVector<f64> {
        let n = self.z.nrows() as f64;
        DVector::from_iterator(self.z.ncols(), self.z.column_iter().map(|c| c.sum() / n))
    }
}

/// Bootstrap test outcome. `p_value` uses the add-one smoothing
/// (1 + #{draws ≥ stat})/(B + 1), so it lies in (0, 1].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BootstrapTestResult {
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub b_draws: usize,
    pub alpha: f64,
    pub tail: Tail,
    pub per_edge_stats: Vec<(ColKey, f64)>,
    pub reject: bool,
}

impl BootstrapTestResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-edge statistics as plot-ready CSV.
    pub fn write_per_edge_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["a", "b", "l", "statistic", "critical_value"])?;
        for (key, stat) in &self.per_edge_stats {
            w.write_record([
                key.a.to_string(),
                key.b.to_string(),
                key.l.to_string(),
                stat.to_string(),
                self.critical_value.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Null values θ̆ for the edges at a node.
#[derive(Clone, Debug)]
pub enum NullSpec {
    /// θ̆ ≡ 0 (the isolated-node hypothesis).
    Zero,
    /// Explicit per-neighbor null blocks (length-L vectors).
    PerEdge(BTreeMap<usize, Vec<f64>>),
}

impl NullSpec {
    /// The stored truth of a spec as the null (Type-I experiments).
    pub fn from_spec_truth(spec: &ModelSpec, node: usize) -> Result<NullSpec> {
        let mut map = BTreeMap::new();
        for b in (0..spec.p()).filter(|&b| b != node) {
            let (lo, hi) = (node.min(b), node.max(b));
            map.insert(b, spec.true_edge_value(lo, hi)?);
        }
        Ok(NullSpec::PerEdge(map))
    }

    fn values_for(&self, b: usize, l_count: usize) -> Result<Vec<f64>> {
        match self {
            NullSpec::Zero => Ok(vec![0.0; l_count]),
            NullSpec::PerEdge(map) => {
                let v = map
                    .get(&b)
                    .ok_or_else(|| Error::Config(format!("no null value supplied for node {b}")))?;
                if v.len() != l_count {
                    return Err(Error::Config(format!(
                        "null block for node {b} has length {}, expected L = {l_count}",
                        v.len()
                    )));
                }
                Ok(v.clone())
            }
        }
    }
}

/// Tuning knobs for the bootstrap tests; `None` λ falls back to the
/// domain default rate.
#[derive(Clone, Copy, Debug)]
pub struct TestOptions {
    pub alpha: f64,
    pub b_draws: usize,
    pub seed: u64,
    pub tail: Tail,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
}

impl TestOptions {
    pub fn new(alpha: f64, b_draws: usize, seed: u64) -> Self {
        TestOptions { alpha, b_draws, seed, tail: Tail::TwoSided, lambda1: None, lambda2: None }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha = {} outside (0,1)", self.alpha)));
        }
        if self.b_draws < 1000 {
            return Err(Error::Config(format!(
                "b_draws = {} too small; the bootstrap quantile needs B >= 1000",
                self.b_draws
            )));
        }
        Ok(())
    }
}

fn resolve_lambdas(spec: &ModelSpec, n: usize, opts: &TestOptions) -> (f64, f64) {
    let p = spec.p();
    let s_prime = 2 * spec.k_count() + 2 * (p - 2) * spec.l_count() + spec.l_count();
    let default = default_lambda(spec.domain(), s_prime, n);
    (opts.lambda1.unwrap_or(default), opts.lambda2.unwrap_or(default))
}

/// Influence columns for one estimated edge, evaluated with the target
/// block replaced by `null_target` (the fitted values themselves for the
/// differential test). Returns n×L.
pub fn influence_for_edge(
    sys: &EdgeScoreSystem,
    est: &EdgeEstimate,
    null_target: &[f64],
) -> Result<DMatrix<f64>> {
    let map = sys.map();
    let targets = map.target_indices();
    if null_target.len() != targets.len() {
        return Err(Error::Dimension("null target block has wrong length".into()));
    }
    if est.sigma_n.len() != targets.len() || est.gamma_refit.len() != targets.len() {
        return Err(Error::Config(
            "influence rows need a three-step estimate with σ_n and refitted γ".into(),
        ));
    }
    let mut theta = DVector::from_row_slice(&est.theta_full);
    for (l, &t) in targets.iter().enumerate() {
        theta[t] = null_target[l];
    }
    let rows = sys.residual_rows(&theta, &est.m_tilde)?;
    let k = est.m_tilde.len();
    let mut out = DMatrix::zeros(sys.n(), targets.len());
    for (l, &t) in targets.iter().enumerate() {
        let gamma = &est.gamma_refit[l];
        let mut w = DVector::zeros(k);
        for (local, &j) in est.m_tilde.iter().enumerate() {
            if j == t {
                w[local] = 1.0;
            } else {
                let del = if j < t { j } else { j - 1 };
                w[local] = -gamma[del];
            }
        }
        out.set_column(l, &(&rows * w * (-1.0 / est.sigma_n[l])));
    }
    Ok(out)
}

/// Monte-Carlo draws of the multiplier statistic max over columns of
/// n^{-1/2}·Σᵢ zᵢ·eᵢ (absolute value for the two-sided tail), with
/// independent standard normal multipliers eᵢ per draw.
///
/// Draw chunks are seeded by a counter so results do not depend on the
/// parallel schedule.
pub fn multiplier_bootstrap(z: &DMatrix<f64>, b_draws: usize, seed: u64, tail: Tail) -> Vec<f64> {
    let n = z.nrows();
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let chunk = 256usize;
    let n_chunks = b_draws.div_ceil(chunk);
    let zt = z.transpose();
    let mut draws: Vec<Vec<f64>> = Vec::new();
    (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, c as u64));
            let size = chunk.min(b_draws - c * chunk);
            let mut e = DMatrix::zeros(n, size);
            for j in 0..size {
                for i in 0..n {
                    e[(i, j)] = rng.sample(StandardNormal);
                }
            }
            let s = &zt * e; // cols × size
            (0..size)
                .map(|j| {
                    let col = s.column(j);
                    let m = match tail {
                        Tail::TwoSided => col.amax(),
                        Tail::OneSided => col.max(),
                    };
                    m * inv_sqrt_n
                })
                .collect::<Vec<f64>>()
        })
        .collect_into_vec(&mut draws);
    draws.concat()
}

/// The ⌈(1−α)B⌉-th order statistic of the draws.
pub fn bootstrap_critical_value(draws: &[f64], alpha: f64) -> f64 {
    let mut sorted = draws.to_vec();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let b = sorted.len();
    let rank = ((1.0 - alpha) * b as f64).ceil() as usize;
    sorted[rank.clamp(1, b) - 1]
}

fn bootstrap_p_value(draws: &[f64], statistic: f64) -> f64 {
    let exceed = draws.iter().filter(|&&w| w >= statistic).count();
    (1 + exceed) as f64 / (draws.len() + 1) as f64
}

fn estimate_with_system(
    spec: &ModelSpec,
    data: &DataMatrix,
    a: usize,
    b: usize,
    lambda1: f64,
    lambda2: f64,
) -> Result<(EdgeScoreSystem, EdgeEstimate)> {
    let sys = assemble(spec, data, a, b)?;
    let est = three_step_from_system(&sys, lambda1, lambda2, spec.l_count() > 1)
        .map_err(|e| Error::NotConverged(format!("edge ({a}, {b}): {e}")))?;
    Ok((sys, est))
}

/// Per-neighbor fit reduced to what the tests consume; the edge system is
/// dropped as soon as the influence columns are extracted.
struct NeighborFit {
    b: usize,
    deviations: Vec<f64>,
    v_hat: DMatrix<f64>,
    influence: DMatrix<f64>,
}

fn fit_neighborhood(
    spec: &ModelSpec,
    data: &DataMatrix,
    node: usize,
    null: &NullSpec,
    lambda1: f64,
    lambda2: f64,
) -> Result<Vec<NeighborFit>> {
    let p = spec.p();
    if node >= p {
        return Err(Error::Config(format!("node {node} out of range for p = {p}")));
    }
    let l_count = spec.l_count();
    (0..p)
        .filter(|&b| b != node)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&b| {
            let (lo, hi) = (node.min(b), node.max(b));
            let (sys, est) = estimate_with_system(spec, data, lo, hi, lambda1, lambda2)?;
            let null_vals = null.values_for(b, l_count)?;
            let influence = influence_for_edge(&sys, &est, &null_vals)?;
            let deviations =
                est.theta_tilde.iter().zip(&null_vals).map(|(t, nv)| t - nv).collect();
            Ok(NeighborFit { b, deviations, v_hat: est.v_hat_matrix(), influence })
        })
        .collect()
}

fn bootstrap_test_from_fits(
    fits: &[NeighborFit],
    node: usize,
    n: usize,
    opts: &TestOptions,
) -> BootstrapTestResult {
    let sqrt_n = (n as f64).sqrt();
    let l_count = fits.first().map(|f| f.deviations.len()).unwrap_or(1);
    let mut keys = Vec::with_capacity(fits.len() * l_count);
    let mut stats = Vec::with_capacity(fits.len() * l_count);
    let mut z = DMatrix::zeros(n, fits.len() * l_count);
    for (idx, fit) in fits.iter().enumerate() {
        for l in 0..l_count {
            let stat = match opts.tail {
                Tail::TwoSided => sqrt_n * fit.deviations[l].abs(),
                Tail::OneSided => sqrt_n * fit.deviations[l],
            };
            keys.push(ColKey { a: node, b: fit.b, l });
            stats.push(stat);
            z.set_column(idx * l_count + l, &fit.influence.column(l));
        }
    }
    let statistic = stats.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let draws = multiplier_bootstrap(&z, opts.b_draws, opts.seed, opts.tail);
    let critical_value = bootstrap_critical_value(&draws, opts.alpha);
    let p_value = bootstrap_p_value(&draws, statistic);
    BootstrapTestResult {
        statistic,
        critical_value,
        p_value,
        b_draws: opts.b_draws,
        alpha: opts.alpha,
        tail: opts.tail,
        per_edge_stats: keys.into_iter().zip(stats).collect(),
        reject: statistic >= critical_value,
    }
}

fn chi2_test_from_fits(
    fits: &[NeighborFit],
    node: usize,
    n: usize,
    p: usize,
    l_count: usize,
    alpha: f64,
) -> Result<Chi2TestResult> {
    let per_node: Vec<(ColKey, f64)> = fits
        .iter()
        .map(|fit| {
            let d = DVector::from_row_slice(&fit.deviations);
            let solved = fit.v_hat.clone().lu().solve(&d).ok_or_else(|| {
                Error::Singular(format!("V̂ for edge ({node}, {}) is singular", fit.b))
            })?;
            Ok((ColKey { a: node, b: fit.b, l: 0 }, n as f64 * d.dot(&solved)))
        })
        .collect::<Result<Vec<_>>>()?;
    let statistic = per_node.iter().map(|(_, t)| *t).fold(f64::NEG_INFINITY, f64::max);
    let critical_value = chi2_critical_value(l_count, p, alpha)?;
    let chi = ChiSquared::new(l_count as f64)
        .map_err(|e| Error::Config(format!("chi-squared setup: {e}")))?;
    let survival = 1.0 - chi.cdf(statistic);
    let p_value = 1.0 - (-((p - 1) as f64) * survival).exp();
    Ok(Chi2TestResult {
        statistic,
        critical_value,
        p_value,
        alpha,
        per_node_stats: per_node,
        reject: statistic >= critical_value,
    })
}

/// Assembles the full influence matrix for the neighborhood of `node`
/// (columns ordered by neighbor, statistic index inner).
pub fn influence_matrix(
    spec: &ModelSpec,
    data: &DataMatrix,
    node: usize,
    null: &NullSpec,
    lambda1: Option<f64>,
    lambda2: Option<f64>,
) -> Result<InfluenceMatrix> {
    let opts = TestOptions { lambda1, lambda2, ..TestOptions::new(0.05, 1000, 0) };
    let (l1, l2) = resolve_lambdas(spec, data.n(), &opts);
    let fits = fit_neighborhood(spec, data, node, null, l1, l2)?;
    let l_count = spec.l_count();
    let mut keys = Vec::with_capacity(fits.len() * l_count);
    let mut z = DMatrix::zeros(data.n(), fits.len() * l_count);
    for (idx, fit) in fits.iter().enumerate() {
        for l in 0..l_count {
            keys.push(ColKey { a: node, b: fit.b, l });
            z.set_column(idx * l_count + l, &fit.influence.column(l));
        }
    }
    Ok(InfluenceMatrix { node, keys, z })
}

/// Null hypothesis θ*_ab = θ̆_ab for every b ≠ a, tested with the max
/// statistic max_{b,l} √n·|θ̃ − θ̆| against the multiplier-bootstrap
/// critical value from the influence rows evaluated at θ̆.
pub fn simultaneous_test(
    spec: &ModelSpec,
    data: &DataMatrix,
    node: usize,
    null: &NullSpec,
    opts: &TestOptions,
) -> Result<BootstrapTestResult> {
    opts.validate()?;
    let (lambda1, lambda2) = resolve_lambdas(spec, data.n(), opts);
    let fits = fit_neighborhood(spec, data, node, null, lambda1, lambda2)?;
    Ok(bootstrap_test_from_fits(&fits, node, data.n(), opts))
}

/// Runs the bootstrap and the χ² test from one shared estimation pass
/// (the estimates dominate the cost at experiment scale).
pub fn simultaneous_tests_both(
    spec: &ModelSpec,
    data: &DataMatrix,
    node: usize,
    null: &NullSpec,
    opts: &TestOptions,
) -> Result<(BootstrapTestResult, Chi2TestResult)> {
    opts.validate()?;
    let (lambda1, lambda2) = resolve_lambdas(spec, data.n(), opts);
    let fits = fit_neighborhood(spec, data, node, null, lambda1, lambda2)?;
    let boot = bootstrap_test_from_fits(&fits, node, data.n(), opts);
    let chi2 =
        chi2_test_from_fits(&fits, node, data.n(), spec.p(), spec.l_count(), opts.alpha)?;
    Ok((boot, chi2))
}

/// Isolated-node test: the simultaneous test with θ̆ ≡ 0.
pub fn isolated_node_test(
    spec: &ModelSpec,
    data: &DataMatrix,
    node: usize,
    opts: &TestOptions,
) -> Result<BootstrapTestResult> {
    simultaneous_test(spec, data, node, &NullSpec::Zero, opts)
}

/// One neighbor's entry in a support-recovery report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SupportDetail {
    pub b: usize,
    pub theta: f64,
    pub tau: f64,
    pub kept: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SupportRecovery {
    pub node: usize,
    pub kept: Vec<usize>,
    pub detail: Vec<SupportDetail>,
}

/// Thresholded neighborhood estimate Ŝ = {b : |θ̃_ab| > τ_ab} with
/// τ_ab = √(2·V̂_ab·log p / n). An estimate with V̂ = 0 is kept only when
/// |θ̃| > 0 exactly.
pub fn support_recovery(
    spec: &ModelSpec,
    data: &DataMatrix,
    node: usize,
    lambda1: Option<f64>,
    lambda2: Option<f64>,
) -> Result<SupportRecovery> {
    if spec.l_count() != 1 {
        return Err(Error::Config("support recovery thresholds are defined for L = 1".into()));
    }
    let p = spec.p();
    if node >= p {
        return Err(Error::Config(format!("node {node} out of range for p = {p}")));
    }
    let opts = TestOptions { lambda1, lambda2, ..TestOptions::new(0.05, 1000, 0) };
    let (l1, l2) = resolve_lambdas(spec, data.n(), &opts);
    let n = data.n() as f64;
    let detail: Vec<SupportDetail> = (0..p)
        .filter(|&b| b != node)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&b| {
            let (lo, hi) = (node.min(b), node.max(b));
            let (_, est) = estimate_with_system(spec, data, lo, hi, l1, l2)?;
            let theta = est.theta_tilde[0];
            let tau = (2.0 * est.v_hat[0][0] * (p as f64).ln() / n).sqrt();
            Ok(SupportDetail { b, theta, tau, kept: theta.abs() > tau })
        })
        .collect::<Result<Vec<_>>>()?;
    let kept = detail.iter().filter(|d| d.kept).map(|d| d.b).collect();
    Ok(SupportRecovery { node, kept, detail })
}

/// Two-sample draws for the differential statistic: per draw,
/// (n₁+n₂)^{-1/2}·max |(1+n₂/n₁)·z₁ᵀe₁ − (1+n₁/n₂)·z₂ᵀe₂|.
fn multiplier_bootstrap_diff(
    z1: &DMatrix<f64>,
    z2: &DMatrix<f64>,
    b_draws: usize,
    seed: u64,
) -> Vec<f64> {
    let (n1, n2) = (z1.nrows(), z2.nrows());
    let c1 = 1.0 + n2 as f64 / n1 as f64;
    let c2 = 1.0 + n1 as f64 / n2 as f64;
    let scale = 1.0 / ((n1 + n2) as f64).sqrt();
    let chunk = 256usize;
    let n_chunks = b_draws.div_ceil(chunk);
    let z1t = z1.transpose();
    let z2t = z2.transpose();
    let mut draws: Vec<Vec<f64>> = Vec::new();
    (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, c as u64));
            let size = chunk.min(b_draws - c * chunk);
            let mut e1 = DMatrix::zeros(n1, size);
            let mut e2 = DMatrix::zeros(n2, size);
            for j in 0..size {
                for i in 0..n1 {
                    e1[(i, j)] = rng.sample(StandardNormal);
                }
                for i in 0..n2 {
                    e2[(i, j)] = rng.sample(StandardNormal);
                }
            }
            let s1 = &z1t * e1;
            let s2 = &z2t * e2;
            (0..size)
                .map(|j| {
                    let mut m = 0.0f64;
                    for r in 0..s1.nrows() {
                        m = m.max((c1 * s1[(r, j)] - c2 * s2[(r, j)]).abs());
                    }
                    m * scale
                })
                .collect::<Vec<f64>>()
        })
        .collect_into_vec(&mut draws);
    draws.concat()
}

/// Two-sample differential-network test over all edges: statistic
/// √(n₁+n₂)·max_{ab,l}|θ̃_{ab,1} − θ̃_{ab,2}| with the bootstrap draws
/// built from group-wise influence rows evaluated at the fitted values.
pub fn diff_test(
    spec: &ModelSpec,
    data1: &DataMatrix,
    data2: &DataMatrix,
    opts: &TestOptions,
) -> Result<BootstrapTestResult> {
    opts.validate()?;
    if data1.p() != data2.p() || data1.p() != spec.p() {
        return Err(Error::Dimension("the two samples must share the spec's node set".into()));
    }
    let p = spec.p();
    let l_count = spec.l_count();
    let (n1, n2) = (data1.n(), data2.n());
    let (l1a, l2a) = {
        let o = TestOptions { ..*opts };
        resolve_lambdas(spec, n1, &o)
    };
    let (l1b, l2b) = {
        let o = TestOptions { ..*opts };
        resolve_lambdas(spec, n2, &o)
    };

    let edges: Vec<(usize, usize)> =
        (0..p).flat_map(|a| ((a + 1)..p).map(move |b| (a, b))).collect();
    let per_edge: Vec<((usize, usize), DMatrix<f64>, DMatrix<f64>, Vec<f64>)> = edges
        .par_iter()
        .map(|&(a, b)| {
            let (sys1, est1) = estimate_with_system(spec, data1, a, b, l1a, l2a)?;
            let (sys2, est2) = estimate_with_system(spec, data2, a, b, l1b, l2b)?;
            // Influence rows at the fitted values of each group.
            let cols1 = influence_for_edge(&sys1, &est1, &est1.theta_tilde)?;
            let cols2 = influence_for_edge(&sys2, &est2, &est2.theta_tilde)?;
            let diffs: Vec<f64> = (0..l_count)
                .map(|l| est1.theta_tilde[l] - est2.theta_tilde[l])
                .collect();
            Ok(((a, b), cols1, cols2, diffs))
        })
        .collect::<Result<Vec<_>>>()?;

    let scale = ((n1 + n2) as f64).sqrt();
    let mut z1 = DMatrix::zeros(n1, edges.len() * l_count);
    let mut z2 = DMatrix::zeros(n2, edges.len() * l_count);
    let mut keys = Vec::new();
    let mut stats = Vec::new();
    for (idx, ((a, b), cols1, cols2, diffs)) in per_edge.iter().enumerate() {
        for l in 0..l_count {
            z1.set_column(idx * l_count + l, &cols1.column(l));
            z2.set_column(idx * l_count + l, &cols2.column(l));
            keys.push(ColKey { a: *a, b: *b, l });
            stats.push(scale * diffs[l].abs());
        }
    }
    let statistic = stats.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let draws = multiplier_bootstrap_diff(&z1, &z2, opts.b_draws, opts.seed);
    let critical_value = bootstrap_critical_value(&draws, opts.alpha);
    let p_value = bootstrap_p_value(&draws, statistic);
    Ok(BootstrapTestResult {
        statistic,
        critical_value,
        p_value,
        b_draws: opts.b_draws,
        alpha: opts.alpha,
        tail: Tail::TwoSided,
        per_edge_stats: keys.into_iter().zip(stats).collect(),
        reject: statistic >= critical_value,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct XiaTest {
    pub statistic: f64,
    pub p_value: f64,
}

/// Extreme-value baseline for the two-sample test:
/// T = max (θ̃₁ − θ̃₂)² / (V̂₁/n₁ + V̂₂/n₂), compared against the Gumbel-type
/// limit P(T − 2·log p + log log p ≤ t) → exp{−(2π)^{-1/2}·e^{-t/2}}.
///
/// The denominator uses the per-sample-size variances of the estimates, so
/// with n₁ = n₂ = n the statistic is n·(Δθ̃)²/(V̂₁+V̂₂).
pub fn xia_test(ests1: &[EdgeEstimate], ests2: &[EdgeEstimate], p: usize) -> Result<XiaTest> {
    if ests1.len() != ests2.len() || ests1.is_empty() {
        return Err(Error::Dimension("xia_test needs matching estimate lists".into()));
    }
    let mut t_max = f64::NEG_INFINITY;
    for (e1, e2) in ests1.iter().zip(ests2) {
        if e1.edge != e2.edge {
            return Err(Error::Dimension("estimate lists disagree on edges".into()));
        }
        if e1.l_count() != 1 || e2.l_count() != 1 {
            return Err(Error::Config("xia_test is defined for L = 1".into()));
        }
        let denom = e1.v_hat[0][0] / e1.n as f64 + e2.v_hat[0][0] / e2.n as f64;
        if denom <= 0.0 {
            return Err(Error::DegenerateVariance(format!(
                "variance sum for edge {:?} is {denom}",
                e1.edge
            )));
        }
        let d = e1.theta_tilde[0] - e2.theta_tilde[0];
        t_max = t_max.max(d * d / denom);
    }
    let pf = p as f64;
    let t_centered = t_max - 2.0 * pf.ln() + pf.ln().ln();
    let limit_cdf = (-(2.0 * std::f64::consts::PI).sqrt().recip() * (-t_centered / 2.0).exp()).exp();
    Ok(XiaTest { statistic: t_max, p_value: 1.0 - limit_cdf })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Chi2TestResult {
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub per_node_stats: Vec<(ColKey, f64)>,
    pub reject: bool,
}

impl Chi2TestResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// The critical value y_α solving (p−1)·P(χ²_L ≥ y) = −log(1−α).
pub fn chi2_critical_value(l_count: usize, p: usize, alpha: f64) -> Result<f64> {
    if p < 2 || l_count == 0 {
        return Err(Error::Config("chi2_critical_value needs p >= 2, L >= 1".into()));
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::Config(format!("alpha = {alpha} outside (0,1)")));
    }
    let q = -(1.0 - alpha).ln() / (p - 1) as f64;
    if q >= 1.0 {
        return Ok(0.0);
    }
    let chi = ChiSquared::new(l_count as f64)
        .map_err(|e| Error::Config(format!("chi-squared setup: {e}")))?;
    Ok(chi.inverse_cdf(1.0 - q))
}

/// Moderate-deviation simultaneous test for general L: per neighbor,
/// T²_b = n·(θ̃ − θ̆)ᵀ·V̂⁻¹·(θ̃ − θ̆); rejects when max_b T²_b ≥ y_α.
pub fn chi2_simultaneous(
    spec: &ModelSpec,
    data: &DataMatrix,
    node: usize,
    null: &NullSpec,
    alpha: f64,
    lambda1: Option<f64>,
    lambda2: Option<f64>,
) -> Result<Chi2TestResult> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::Config(format!("alpha = {alpha} outside (0,1)")));
    }
    let opts = TestOptions { lambda1, lambda2, ..TestOptions::new(alpha, 1000, 0) };
    let (l1, l2) = resolve_lambdas(spec, data.n(), &opts);
    let fits = fit_neighborhood(spec, data, node, null, l1, l2)?;
    chi2_test_from_fits(&fits, node, data.n(), spec.p(), spec.l_count(), alpha)
}
