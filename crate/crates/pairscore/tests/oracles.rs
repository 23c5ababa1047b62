//! Oracle tests: every derived expected value is computed by an
//! independent reference (finite differences, brute-force enumeration,
//! dense solves, Monte Carlo) and frozen against the implementation.

mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use pairscore::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

fn spec_for(family: Family, p: usize) -> ModelSpec {
    match family {
        Family::Gaussian => samplers::knn_graph_spec(family, p, 2, &[&[0.4]], &[1.0]).unwrap(),
        Family::NonNegGaussian => {
            samplers::knn_graph_spec(family, p, 2, &[&[0.3]], &[1.0]).unwrap()
        }
        Family::NormalConditionalsL1 => {
            samplers::knn_graph_spec(family, p, 2, &[&[-0.2]], &[0.4, -2.0]).unwrap()
        }
        Family::NormalConditionalsL2 => {
            samplers::knn_graph_spec(family, p, 2, &[&[0.3], &[-0.2]], &[0.4, -2.0]).unwrap()
        }
        Family::ExponentialGm => {
            samplers::knn_graph_spec(family, p, 2, &[&[0.3]], &[2.0]).unwrap()
        }
    }
}

fn test_point(family: Family, p: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..p)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            match family.domain() {
                Domain::Reals => z,
                Domain::NonNegReals => z.abs() + 0.05,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// models: derivative structure against finite differences
// ---------------------------------------------------------------------------

#[test]
fn phi_derivatives_match_finite_differences() {
    let families = [
        Family::Gaussian,
        Family::NonNegGaussian,
        Family::NormalConditionalsL1,
        Family::NormalConditionalsL2,
        Family::ExponentialGm,
    ];
    let p = 6;
    let h = 1e-5;
    for (fi, &family) in families.iter().enumerate() {
        let spec = spec_for(family, p);
        let map = edge_index_map(&spec, 1, 3).unwrap();
        let x = test_point(family, p, 17 + fi as u64);
        let sc = score_components(&spec, &x, &map).unwrap();
        let weight = spec.weight_fn();
        let (wa, wb) = (weight.eval(x[1]).sqrt(), weight.eval(x[3]).sqrt());
        for j in 0..map.dim() {
            // Numeric ∂φ_j/∂x_a, ℓ-weighting applied afterwards.
            let d1 = central_difference(
                |v| {
                    let mut xs = x.clone();
                    xs[1] = v;
                    statistic_vector(&spec, &xs, &map).unwrap()[j]
                },
                x[1],
                h,
            );
            let d2 = central_difference(
                |v| {
                    let mut xs = x.clone();
                    xs[3] = v;
                    statistic_vector(&spec, &xs, &map).unwrap()[j]
                },
                x[3],
                h,
            );
            let scale1 = 1.0 + sc.phi1[j].abs();
            let scale2 = 1.0 + sc.phi2[j].abs();
            assert!(
                (wa * d1 - sc.phi1[j]).abs() / scale1 < 1e-6,
                "{family:?} phi1[{j}]: fd {} vs {}",
                wa * d1,
                sc.phi1[j]
            );
            assert!(
                (wb * d2 - sc.phi2[j]).abs() / scale2 < 1e-6,
                "{family:?} phi2[{j}]: fd {} vs {}",
                wb * d2,
                sc.phi2[j]
            );
        }
    }
}

#[test]
fn g_matches_weighted_second_differences() {
    let families = [
        Family::Gaussian,
        Family::NonNegGaussian,
        Family::NormalConditionalsL1,
        Family::NormalConditionalsL2,
        Family::ExponentialGm,
    ];
    let p = 5;
    let h = 1e-4;
    for (fi, &family) in families.iter().enumerate() {
        let spec = spec_for(family, p);
        let map = edge_index_map(&spec, 0, 2).unwrap();
        let x = test_point(family, p, 31 + fi as u64);
        let sc = score_components(&spec, &x, &map).unwrap();
        let w = spec.weight_fn();
        for j in 0..map.dim() {
            let phi_j = |xa: f64, xb: f64| {
                let mut xs = x.clone();
                xs[0] = xa;
                xs[2] = xb;
                statistic_vector(&spec, &xs, &map).unwrap()[j]
            };
            let d11 = second_difference(|v| phi_j(v, x[2]), x[0], h);
            let d22 = second_difference(|v| phi_j(x[0], v), x[2], h);
            let d1 = central_difference(|v| phi_j(v, x[2]), x[0], h);
            let d2 = central_difference(|v| phi_j(x[0], v), x[2], h);
            let expected = match w {
                WeightFn::Identity => d11 + d22,
                _ => {
                    w.eval(x[0]) * d11
                        + w.eval(x[2]) * d22
                        + w.deriv(x[0]) * d1
                        + w.deriv(x[2]) * d2
                }
            };
            let scale = 1.0 + expected.abs();
            assert!(
                (expected - sc.g[j]).abs() / scale < 1e-5,
                "{family:?} g[{j}]: fd {expected} vs {}",
                sc.g[j]
            );
        }
    }
}

#[test]
fn weighted_gamma_matches_hand_assembly() {
    // ℓ(x) = x² variant on p = 2: Γ_ℓ = ℓ_a·φ₁φ₁ᵀ + ℓ_b·φ₂φ₂ᵀ with raw φ.
    let spec = ModelSpec::new(
        Family::NonNegGaussian,
        2,
        vec![DMatrix::zeros(2, 2)],
        vec![DVector::from_element(2, 1.0)],
        WeightFn::Square,
    )
    .unwrap();
    let map = edge_index_map(&spec, 0, 1).unwrap();
    let x = [0.7, 1.3];
    let sc = score_components(&spec, &x, &map).unwrap();
    // Raw derivatives assembled by hand in contract order [na, nb, target].
    let phi1_raw = DVector::from_row_slice(&[-x[0], 0.0, -x[1]]);
    let phi2_raw = DVector::from_row_slice(&[0.0, -x[1], -x[0]]);
    let gamma_hand = x[0] * x[0] * &phi1_raw * phi1_raw.transpose()
        + x[1] * x[1] * &phi2_raw * phi2_raw.transpose();
    let gamma_tilde = &sc.phi1 * sc.phi1.transpose() + &sc.phi2 * sc.phi2.transpose();
    assert!((gamma_hand - gamma_tilde).abs().max() < 1e-12);
}

// ---------------------------------------------------------------------------
// score_engine: population moments and objective derivatives
// ---------------------------------------------------------------------------

#[test]
fn gamma_hat_converges_to_population_arrangement() {
    // Σ = I: population Γ entries follow from E[x_i x_j] = δ_ij.
    let p = 6;
    let spec = samplers::knn_graph_spec(Family::Gaussian, p, 0, &[&[]], &[1.0]).unwrap();
    let n = 100_000;
    let data = samplers::sample_gaussian(&spec, n, 12).unwrap();
    let sys = assemble(&spec, &data, 0, 1).unwrap();
    let map = sys.map();

    // Population oracle: φ₁ slots carry −x over {a} ∪ {c} ∪ {b}, so
    // E[φ₁φ₁ᵀ]_(j,k) = δ(var_j = var_k) over φ₁'s support, and likewise
    // for φ₂.
    let var_of_phi1 = |j: usize| -> Option<usize> {
        match map.slots()[j] {
            Slot::NodeA { .. } => Some(0),
            Slot::CrossA { c, .. } => Some(c),
            Slot::Target { .. } => Some(1),
            _ => None,
        }
    };
    let var_of_phi2 = |j: usize| -> Option<usize> {
        match map.slots()[j] {
            Slot::NodeB { .. } => Some(1),
            Slot::CrossB { c, .. } => Some(c),
            Slot::Target { .. } => Some(0),
            _ => None,
        }
    };
    let tol = 3.0 / (n as f64).sqrt();
    for j in 0..map.dim() {
        for k in 0..map.dim() {
            let mut pop = 0.0;
            if let (Some(vj), Some(vk)) = (var_of_phi1(j), var_of_phi1(k)) {
                if vj == vk {
                    pop += 1.0;
                }
            }
            if let (Some(vj), Some(vk)) = (var_of_phi2(j), var_of_phi2(k)) {
                if vj == vk {
                    pop += 1.0;
                }
            }
            let got = sys.gamma_hat()[(j, k)];
            assert!(
                (got - pop).abs() < 3.0 * tol.max(0.01),
                "Γ̂[{j},{k}] = {got}, population {pop}"
            );
        }
    }
}

#[test]
fn gradient_matches_objective_finite_differences() {
    let spec = spec_for(Family::Gaussian, 5);
    let data = samplers::sample_gaussian(&spec, 250, 4).unwrap();
    let sys = assemble(&spec, &data, 0, 2).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(8);
    let theta = DVector::from_fn(sys.dim(), |_, _| rng.sample::<f64, _>(StandardNormal) * 0.5);
    let grad = sys.gradient(&theta).unwrap();
    for j in 0..sys.dim() {
        let fd = central_difference(
            |v| {
                let mut t = theta.clone();
                t[j] = v;
                sys.objective(&t).unwrap()
            },
            theta[j],
            1e-6,
        );
        assert!((fd - grad[j]).abs() / (1.0 + grad[j].abs()) < 1e-6);
    }
}

#[test]
fn nuisance_objective_at_zero_matches_direct_summation() {
    // The step-2 objective at γ = 0 (up to its θ-free constant) is
    // ½·E_n[φ₁,t² + φ₂,t²]; recompute per sample through score_components.
    let spec = spec_for(Family::ExponentialGm, 5);
    let cfg = samplers::GibbsConfig { burn_in: 200, thinning: 2, seed: 6 };
    let data = samplers::sample_exponential_gibbs(&spec, 300, &cfg).unwrap();
    let sys = assemble(&spec, &data, 1, 2).unwrap();
    let map = edge_index_map(&spec, 1, 2).unwrap();
    let t = map.target_index(0);
    let mut direct = 0.0;
    for i in 0..data.n() {
        let sc = score_components(&spec, data.row(i), &map).unwrap();
        direct += sc.phi1[t] * sc.phi1[t] + sc.phi2[t] * sc.phi2[t];
    }
    direct *= 0.5 / data.n() as f64;
    assert!((direct - 0.5 * sys.gamma_hat()[(t, t)]).abs() < 1e-10);
}

// ---------------------------------------------------------------------------
// solvers: reference-solver and LP oracles
// ---------------------------------------------------------------------------

#[test]
fn lasso_matches_proximal_gradient_reference() {
    let s = 8;
    let (a, b) = random_psd_problem(s, 0.4, 91);
    let lambda = 0.1;
    let sol = lasso_cd(&QuadraticLassoProblem::new(a.clone(), b.clone(), lambda)).unwrap();
    assert!(sol.converged);
    let reference = proximal_gradient_reference(&a, &b, lambda, None, 60_000);
    let obj_cd = penalized_objective(&a, &b, lambda, None, &sol.theta);
    let obj_ref = penalized_objective(&a, &b, lambda, None, &reference);
    assert!(
        (obj_cd - obj_ref).abs() < 1e-6,
        "objective mismatch: cd {obj_cd} vs reference {obj_ref}"
    );
}

#[test]
fn group_lasso_matches_proximal_gradient_reference() {
    let s = 12;
    let (a, b) = random_psd_problem(s, 0.5, 47);
    let blocks: Vec<Vec<usize>> = (0..5).map(|g| vec![2 * g, 2 * g + 1]).collect(); // 10 grouped + 2 free
    let lambda = 0.25;
    let sol = group_lasso_cd(
        &QuadraticLassoProblem::new(a.clone(), b.clone(), lambda)
            .with_groups(GroupSpec { blocks: blocks.clone() }),
    )
    .unwrap();
    assert!(sol.converged);
    let reference = proximal_gradient_reference(&a, &b, lambda, Some(&blocks), 60_000);
    let obj_cd = penalized_objective(&a, &b, lambda, Some(&blocks), &sol.theta);
    let obj_ref = penalized_objective(&a, &b, lambda, Some(&blocks), &reference);
    assert!(
        (obj_cd - obj_ref).abs() < 1e-6,
        "objective mismatch: cd {obj_cd} vs reference {obj_ref}"
    );
}

#[test]
fn refit_full_support_matches_dense_solve() {
    let (a, b) = random_psd_problem(9, 0.6, 133);
    let support: Vec<usize> = (0..9).collect();
    let theta = refit(&a, &b, &support).unwrap();
    let dense = a.clone().full_piv_lu().solve(&(-&b)).unwrap();
    assert!((theta - dense).amax() < 1e-10);
}

#[test]
fn clime_rows_match_lp_vertex_oracle() {
    let s = 6;
    let (gamma, _) = random_psd_problem(s, 0.8, 58);
    let lambda = 0.05;
    for t in [0usize, 3] {
        let row = &clime_rows(&gamma, lambda, &[t]).unwrap()[0];
        let obj_admm: f64 = row.iter().map(|v| v.abs()).sum();
        let obj_lp = clime_lp_oracle(&gamma, lambda, t).expect("LP oracle found no vertex");
        assert!(
            (obj_admm - obj_lp).abs() < 1e-6,
            "row {t}: ADMM {obj_admm} vs LP {obj_lp}"
        );
    }
}

#[test]
fn lasso_homotopy_path_is_continuous() {
    let (a, b) = random_psd_problem(10, 0.5, 7);
    let lambdas = [0.4, 0.2, 0.1, 0.05];
    for &lam in &lambdas {
        let base = lasso_cd(&QuadraticLassoProblem::new(a.clone(), b.clone(), lam))
            .unwrap()
            .theta;
        let mut last_dist = f64::INFINITY;
        for &delta in &[0.04, 0.02, 0.01, 0.005] {
            let perturbed =
                lasso_cd(&QuadraticLassoProblem::new(a.clone(), b.clone(), lam + delta))
                    .unwrap()
                    .theta;
            let dist = (&perturbed - &base).norm();
            assert!(dist <= last_dist + 1e-9, "path not contracting at λ = {lam}");
            last_dist = dist;
        }
        assert!(last_dist < 0.05, "solution jump of {last_dist} at λ = {lam}");
    }
}

// ---------------------------------------------------------------------------
// estimators: dense-solve equivalence and variance oracles
// ---------------------------------------------------------------------------

#[test]
fn three_step_approaches_unpenalized_solution_as_lambda_vanishes() {
    let p = 6;
    let spec = samplers::knn_graph_spec(Family::Gaussian, p, 4, &[&[0.5, 0.3]], &[1.0]).unwrap();
    let data = samplers::sample_gaussian(&spec, 100_000, 27).unwrap();
    let est = three_step_edge(&spec, &data, 0, 1, 1e-8, 1e-8).unwrap();
    let sys = assemble(&spec, &data, 0, 1).unwrap();
    let dense = sys
        .gamma_hat()
        .clone()
        .full_piv_lu()
        .solve(&(-sys.g_hat()))
        .expect("dense solve");
    let t = sys.map().target_index(0);
    assert!(
        (est.theta_tilde[0] - dense[t]).abs() < 1e-3,
        "three-step {} vs dense {}",
        est.theta_tilde[0],
        dense[t]
    );
}

#[test]
fn debiased_with_exact_inverse_reproduces_dense_solve() {
    // Same half twice and M = Γ̂⁻¹: the correction telescopes to −Γ̂⁻¹ĝ.
    let p = 6;
    let spec = samplers::knn_graph_spec(Family::Gaussian, p, 2, &[&[0.4]], &[1.0]).unwrap();
    let data = samplers::sample_gaussian(&spec, 5000, 31).unwrap();
    let sys = assemble(&spec, &data, 0, 1).unwrap();
    let inv = sys.gamma_hat().clone().try_inverse().expect("invertible");
    let t = sys.map().target_index(0);
    let m_row = DVector::from_iterator(sys.dim(), inv.row(t).iter().copied());
    let est = debiased_edge_with_rows(&spec, &data, 0, 1, 0.05, &[m_row]).unwrap();
    let dense = sys.gamma_hat().clone().full_piv_lu().solve(&(-sys.g_hat())).unwrap();
    assert!(
        (est.theta_tilde[0] - dense[t]).abs() < 1e-10,
        "debiased {} vs dense {}",
        est.theta_tilde[0],
        dense[t]
    );
}

#[test]
fn variance_hat_scalar_toy() {
    // Two samples (1,1) and (−1,1) on the Gaussian p = 2 system give
    // Γ̂_tt = 2 at the target; with θ = √2·e_t the restricted residual has
    // second moment Z = 8, so V̂ = Z/Γ̂² = 2.
    let spec = samplers::knn_graph_spec(Family::Gaussian, 2, 0, &[&[]], &[1.0]).unwrap();
    let data = score_engine::DataMatrix::from_rows(
        &[vec![1.0, 1.0], vec![-1.0, 1.0]],
        Domain::Reals,
    )
    .unwrap();
    let sys = assemble(&spec, &data, 0, 1).unwrap();
    let t = sys.map().target_index(0);
    assert_eq!(sys.gamma_hat()[(t, t)], 2.0);
    let mut theta = DVector::zeros(sys.dim());
    theta[t] = 2.0f64.sqrt();
    let v = variance_hat(&sys, &[t], &theta).unwrap();
    assert!((v[(0, 0)] - 2.0).abs() < 1e-12, "V̂ = {}", v[(0, 0)]);
}

#[test]
fn variance_hat_matches_independent_dense_route() {
    let spec = spec_for(Family::Gaussian, 6);
    let data = samplers::sample_gaussian(&spec, 400, 44).unwrap();
    let sys = assemble(&spec, &data, 1, 4).unwrap();
    let map = edge_index_map(&spec, 1, 4).unwrap();
    let t = map.target_index(0);
    let m_tilde = vec![0usize, 1, 3, t];
    let theta = refit(sys.gamma_hat(), sys.g_hat(), &m_tilde).unwrap();
    let v = variance_hat(&sys, &m_tilde, &theta).unwrap()[(0, 0)];

    // Independent route: full per-sample Γ(xᵢ)θ + g(xᵢ) via
    // score_components, restricted, sandwiched with an explicit inverse.
    let k = m_tilde.len();
    let mut z = DMatrix::zeros(k, k);
    for i in 0..data.n() {
        let sc = score_components(&spec, data.row(i), &map).unwrap();
        let gamma_theta = &sc.phi1 * sc.phi1.dot(&theta) + &sc.phi2 * sc.phi2.dot(&theta);
        let r_full = gamma_theta + &sc.g;
        let r = DVector::from_iterator(k, m_tilde.iter().map(|&j| r_full[j]));
        z += &r * r.transpose();
    }
    z /= data.n() as f64;
    let mut gamma_res = DMatrix::zeros(k, k);
    for (ci, &i) in m_tilde.iter().enumerate() {
        for (cj, &j) in m_tilde.iter().enumerate() {
            gamma_res[(ci, cj)] = sys.gamma_hat()[(i, j)];
        }
    }
    let inv = gamma_res.try_inverse().unwrap();
    let local_t = m_tilde.iter().position(|&j| j == t).unwrap();
    let u = inv.column(local_t);
    let expected = (u.transpose() * z * u)[(0, 0)];
    assert!((v - expected).abs() / expected < 1e-10, "sandwich {v} vs dense {expected}");
}

#[test]
fn variance_estimates_stabilize_with_sample_size() {
    let spec = samplers::knn_graph_spec(Family::Gaussian, 20, 4, &[&[0.5, 0.3]], &[1.0]).unwrap();
    let lam_n = |n: usize| default_lambda(Domain::Reals, 39, n);
    let est_small = {
        let data = samplers::sample_gaussian(&spec, 2000, 3).unwrap();
        three_step_edge(&spec, &data, 0, 1, lam_n(2000), lam_n(2000)).unwrap()
    };
    let est_big = {
        let data = samplers::sample_gaussian(&spec, 8000, 19).unwrap();
        three_step_edge(&spec, &data, 0, 1, lam_n(8000), lam_n(8000)).unwrap()
    };
    let (v1, v2) = (est_small.v_hat[0][0], est_big.v_hat[0][0]);
    assert!(
        (v1 - v2).abs() / v2 < 0.10,
        "variance estimates drifted: n=2000 gives {v1}, n=8000 gives {v2}"
    );
}

// ---------------------------------------------------------------------------
// inference: Monte-Carlo quantile, χ² closed forms, recovery and power
// ---------------------------------------------------------------------------

#[test]
fn bootstrap_quantile_matches_direct_max_normal_monte_carlo() {
    // 30 independent unit-variance influence columns; compare c(α) against
    // the direct Monte-Carlo quantile of max |N(0,1)| over 30 coordinates.
    let (n, cols, b) = (4000usize, 30usize, 100_000usize);
    let mut rng = ChaCha12Rng::seed_from_u64(2024);
    let mut z = DMatrix::zeros(n, cols);
    for j in 0..cols {
        let raw: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mean = raw.iter().sum::<f64>() / n as f64;
        let sd = (raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
        for i in 0..n {
            z[(i, j)] = (raw[i] - mean) / sd;
        }
    }
    let draws = multiplier_bootstrap(&z, b, 5, Tail::TwoSided);
    let crit = inference::bootstrap_critical_value(&draws, 0.05);

    let mut direct: Vec<f64> = (0..b)
        .map(|_| {
            (0..cols)
                .map(|_| rng.sample::<f64, _>(StandardNormal).abs())
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    direct.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let direct_crit = direct[((0.95 * b as f64).ceil() as usize).min(b) - 1];
    assert!(
        (crit - direct_crit).abs() < 0.05,
        "bootstrap {crit} vs direct Monte Carlo {direct_crit}"
    );
}

#[test]
fn chi2_critical_value_matches_closed_forms() {
    // χ²₂ survival is exp(−y/2), so y = −2·log q exactly.
    for (p, alpha) in [(50usize, 0.05f64), (20, 0.1), (8, 0.01)] {
        let q = -(1.0 - alpha).ln() / (p - 1) as f64;
        let expected = -2.0 * q.ln();
        let got = chi2_critical_value(2, p, alpha).unwrap();
        assert!((got - expected).abs() < 1e-7, "L=2: {got} vs {expected}");
    }
    // χ²₁ survival is 2(1 − Φ(√y)).
    let alpha = 0.05;
    let p = 30;
    let q = -(1.0f64 - alpha).ln() / (p - 1) as f64;
    let y = chi2_critical_value(1, p, alpha).unwrap();
    let survival = 2.0 * (1.0 - statrs_normal_cdf(y.sqrt()));
    assert!((survival - q).abs() < 1e-9, "L=1 survival {survival} vs q {q}");
}

fn statrs_normal_cdf(z: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().cdf(z)
}

fn isolated_node_gaussian_spec(p: usize, iso: usize) -> ModelSpec {
    let mut theta = DMatrix::zeros(p, p);
    for j in 0..p {
        for (d, w) in [(1usize, 0.4f64), (2, 0.2)] {
            if j + d < p {
                theta[(j, j + d)] = w;
                theta[(j + d, j)] = w;
            }
        }
    }
    for j in 0..p {
        theta[(iso, j)] = 0.0;
        theta[(j, iso)] = 0.0;
    }
    ModelSpec::new(
        Family::Gaussian,
        p,
        vec![theta],
        vec![DVector::from_element(p, 1.0)],
        WeightFn::Identity,
    )
    .unwrap()
}

#[test]
fn isolated_node_test_level_and_power() {
    let p = 10;
    let spec_null = isolated_node_gaussian_spec(p, 0);
    let reps = 30;
    let mut rejections = 0;
    for r in 0..reps {
        let data = samplers::sample_gaussian(&spec_null, 2000, 400 + r).unwrap();
        let opts = inference::TestOptions::new(0.05, 1000, 500 + r);
        if isolated_node_test(&spec_null, &data, 0, &opts).unwrap().reject {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / reps as f64;
    assert!(rate <= 0.05 + 0.05 + 0.08, "null rejection rate {rate}"); // α + slack + MC error

    // Power: connect node 0 with strength 0.5.
    let mut connected = isolated_node_gaussian_spec(p, 0);
    {
        let mut m = connected.edge_param(0).clone();
        m[(0, 1)] = 0.5;
        m[(1, 0)] = 0.5;
        connected = ModelSpec::new(
            Family::Gaussian,
            p,
            vec![m],
            vec![DVector::from_element(p, 1.0)],
            WeightFn::Identity,
        )
        .unwrap();
    }
    let mut detected = 0;
    let power_reps = 20;
    for r in 0..power_reps {
        let data = samplers::sample_gaussian(&connected, 2000, 900 + r).unwrap();
        let opts = inference::TestOptions::new(0.05, 1000, 950 + r);
        if isolated_node_test(&connected, &data, 0, &opts).unwrap().reject {
            detected += 1;
        }
    }
    assert!(
        detected as f64 / power_reps as f64 >= 0.9,
        "power {} too low",
        detected as f64 / power_reps as f64
    );
}

#[test]
fn support_recovery_finds_the_4nn_neighborhood() {
    // Signals 0.5 and 0.3 sit far above the threshold floor, so the true
    // neighborhood is always contained in Ŝ. Exact recovery is capped by
    // the family-wise null exceedance of the √(2·log p) threshold,
    // 1 − (1 − 2·Φ̄(√(2·log p)))^{p−1} ≈ 0.22 at p = 50, giving an exact
    // rate near 0.78.
    let spec = samplers::knn_graph_spec(Family::Gaussian, 50, 4, &[&[0.5, 0.3]], &[1.0]).unwrap();
    let node = 4; // interior node: neighbors {2, 3, 5, 6}
    let truth = [2usize, 3, 5, 6];
    let reps = 20;
    let mut exact = 0;
    let mut contains_truth = 0;
    for r in 0..reps {
        let data = samplers::sample_gaussian(&spec, 2000, 7000 + r).unwrap();
        let rec = support_recovery(&spec, &data, node, None, None).unwrap();
        if truth.iter().all(|b| rec.kept.contains(b)) {
            contains_truth += 1;
        }
        if rec.kept == truth {
            exact += 1;
        }
    }
    assert_eq!(contains_truth, reps, "strong signals must always be recovered");
    assert!(
        exact as f64 / reps as f64 >= 0.6,
        "exact recovery in {exact}/{reps} replications, expected ≈ 0.78"
    );
}

#[test]
fn support_recovery_empty_under_null() {
    // With the √(2·log p) threshold the probability of an empty set under
    // the all-zero graph tends to 1 only logarithmically; at p = 20 it is
    // ≈ 0.76 per run.
    let spec = samplers::knn_graph_spec(Family::Gaussian, 20, 0, &[&[]], &[1.0]).unwrap();
    let mut empty = 0;
    let mut false_edges = 0;
    let reps = 10;
    for r in 0..reps {
        let data = samplers::sample_gaussian(&spec, 2000, 80 + r).unwrap();
        let rec = support_recovery(&spec, &data, 3, None, None).unwrap();
        if rec.kept.is_empty() {
            empty += 1;
        }
        false_edges += rec.kept.len();
    }
    assert!(empty >= 6, "null support non-empty too often: {empty}/{reps} empty");
    // Expected false edges per run: (p−1)·2·Φ̄(√(2·log 20)) ≈ 0.27.
    assert!(false_edges <= 6, "{false_edges} false edges across {reps} runs");
}

#[test]
fn diff_test_null_calibration() {
    let spec = samplers::knn_graph_spec(Family::Gaussian, 20, 4, &[&[0.5, 0.3]], &[1.0]).unwrap();
    let reps = 200;
    let rejections: usize = (0..reps)
        .filter(|&r| {
            let d1 = samplers::sample_gaussian(&spec, 2000, 10_000 + 2 * r).unwrap();
            let d2 = samplers::sample_gaussian(&spec, 2000, 10_001 + 2 * r).unwrap();
            let opts = inference::TestOptions::new(0.05, 1000, 20_000 + r);
            diff_test(&spec, &d1, &d2, &opts).unwrap().reject
        })
        .count();
    let rate = rejections as f64 / reps as f64;
    assert!(
        (0.01..=0.10).contains(&rate),
        "differential-test null rejection rate {rate} outside [0.01, 0.10]"
    );
}

#[test]
fn diff_test_detects_a_changed_edge() {
    let spec1 = samplers::knn_graph_spec(Family::Gaussian, 20, 4, &[&[0.5, 0.3]], &[1.0]).unwrap();
    let mut m = spec1.edge_param(0).clone();
    m[(0, 1)] = 0.1; // differs by 0.4
    m[(1, 0)] = 0.1;
    let spec2 = ModelSpec::new(
        Family::Gaussian,
        20,
        vec![m],
        vec![DVector::from_element(20, 1.0)],
        WeightFn::Identity,
    )
    .unwrap();
    let reps = 20;
    let detected: usize = (0..reps)
        .filter(|&r| {
            let d1 = samplers::sample_gaussian(&spec1, 2000, 31_000 + 2 * r).unwrap();
            let d2 = samplers::sample_gaussian(&spec2, 2000, 31_001 + 2 * r).unwrap();
            let opts = inference::TestOptions::new(0.05, 1000, 32_000 + r);
            diff_test(&spec1, &d1, &d2, &opts).unwrap().reject
        })
        .count();
    assert!(
        detected as f64 / reps as f64 >= 0.8,
        "power {detected}/{reps} below 0.8"
    );
}

#[test]
fn xia_limit_is_less_accurate_than_bootstrap_under_null() {
    // The extreme-value critical values converge slowly; with moderate
    // sample sizes the bootstrap tracks α more closely.
    let spec = samplers::knn_graph_spec(Family::Gaussian, 20, 4, &[&[0.5, 0.3]], &[1.0]).unwrap();
    let reps = 40;
    let alpha = 0.05;
    let lam = default_lambda(Domain::Reals, 39, 4000);
    let mut xia_rejections = 0usize;
    let mut boot_rejections = 0usize;
    for r in 0..reps {
        let d1 = samplers::sample_gaussian(&spec, 4000, 51_000 + 2 * r).unwrap();
        let d2 = samplers::sample_gaussian(&spec, 4000, 51_001 + 2 * r).unwrap();
        let opts = inference::TestOptions::new(alpha, 1000, 52_000 + r);
        if diff_test(&spec, &d1, &d2, &opts).unwrap().reject {
            boot_rejections += 1;
        }
        let edges: Vec<(usize, usize)> =
            (0..20).flat_map(|a| ((a + 1)..20).map(move |b| (a, b))).collect();
        let est = |data: &score_engine::DataMatrix| -> Vec<EdgeEstimate> {
            edges
                .iter()
                .map(|&(a, b)| three_step_edge(&spec, data, a, b, lam, lam).unwrap())
                .collect()
        };
        let xia = xia_test(&est(&d1), &est(&d2), 20).unwrap();
        if xia.p_value < alpha {
            xia_rejections += 1;
        }
    }
    let xia_size = xia_rejections as f64 / reps as f64;
    let boot_size = boot_rejections as f64 / reps as f64;
    assert!(
        (xia_size - alpha).abs() >= (boot_size - alpha).abs(),
        "expected the limit approximation to be the less accurate one: xia {xia_size}, bootstrap {boot_size}"
    );
}

// ---------------------------------------------------------------------------
// samplers: structural moment recovery
// ---------------------------------------------------------------------------

#[test]
fn empirical_precision_recovers_band_pattern() {
    let p = 10;
    let spec = samplers::knn_graph_spec(Family::Gaussian, p, 4, &[&[0.5, 0.3]], &[1.0]).unwrap();
    let n = 100_000;
    let data = samplers::sample_gaussian(&spec, n, 77).unwrap();
    let mut cov = DMatrix::zeros(p, p);
    for i in 0..n {
        let x = DVector::from_row_slice(data.row(i));
        cov += &x * x.transpose();
    }
    cov /= n as f64;
    let prec = cov.try_inverse().expect("sample covariance invertible");
    let omega = samplers::precision_matrix(&spec).unwrap();
    assert!(
        (prec - omega).abs().max() < 0.05,
        "empirical precision missed the band pattern"
    );
}

// ---------------------------------------------------------------------------
// harness: null calibration, diagnostics trend, histogram shape
// ---------------------------------------------------------------------------

#[test]
fn analyze_dataset_null_false_edge_rate() {
    // Independent noise: expected false-edge count per run is
    // 0.01·(p choose 2) = 0.45; across 12 seeded runs the total is
    // binomial(540, 0.01), far inside [1, 13].
    let p = 10;
    let spec = samplers::knn_graph_spec(Family::Gaussian, p, 0, &[&[]], &[1.0]).unwrap();
    let mut total = 0usize;
    for seed in 0..12u64 {
        let data = samplers::sample_gaussian(&spec, 2000, 600 + seed).unwrap();
        let report = analyze_dataset(&data, Family::Gaussian, 0.01, None, None).unwrap();
        total += report.adjacency.len();
    }
    assert!(
        (1..=13).contains(&total),
        "false-edge total {total} incompatible with a calibrated 1% test"
    );
}

#[test]
fn analyze_dataset_zero_threshold_gives_empty_graph() {
    let spec = samplers::knn_graph_spec(Family::Gaussian, 6, 2, &[&[0.4]], &[1.0]).unwrap();
    let data = samplers::sample_gaussian(&spec, 1000, 5).unwrap();
    let report = analyze_dataset(&data, Family::Gaussian, 0.0, None, None).unwrap();
    assert!(report.adjacency.is_empty());
    assert_eq!(report.edges.len(), 15);
}

#[test]
fn diagnostics_small_components_do_not_grow_with_n() {
    let mut cfg = harness::ExperimentConfig::new(
        "trend",
        Family::NormalConditionalsL1,
        10,
        4000,
        4,
    );
    cfg.seed = 9;
    let small = run_diagnostics(&cfg).unwrap();
    cfg.n = 16_000;
    let big = run_diagnostics(&cfg).unwrap();
    assert!(
        big.avg_small_mean.unwrap() <= small.avg_small_mean.unwrap(),
        "small-component mean grew from {} to {}",
        small.avg_small_mean.unwrap(),
        big.avg_small_mean.unwrap()
    );
}

#[test]
fn egm_estimates_are_roughly_symmetric_across_replications() {
    let mut cfg =
        harness::ExperimentConfig::new("egm-hist", Family::ExponentialGm, 100, 1000, 60);
    cfg.target_edges = vec![(0, 1)];
    cfg.seed = 40;
    let report = run_coverage(&cfg).unwrap();
    let estimates: Vec<f64> =
        report.records.iter().filter_map(|r| r.estimate.first().copied()).collect();
    assert_eq!(estimates.len(), 60);
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let m2 = estimates.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = estimates.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let skewness = m3 / m2.powf(1.5);
    assert!(skewness.abs() < 0.5, "skewness {skewness}");

    // Histogram machinery on the same estimates: one occupied mode region.
    let bins = emit_histogram(&estimates, 8).unwrap();
    assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 60);
}
