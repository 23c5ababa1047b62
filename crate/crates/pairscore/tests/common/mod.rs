//! Independent reference implementations used as oracles by the test
//! suites. Deliberately slow and simple; nothing here shares code with the
//! solvers under test.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Objective of the penalized quadratic problem.
pub fn penalized_objective(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lambda: f64,
    groups: Option<&[Vec<usize>]>,
    theta: &DVector<f64>,
) -> f64 {
    let quad = 0.5 * (theta.transpose() * a * theta)[(0, 0)] + theta.dot(b);
    let penalty = match groups {
        None => theta.iter().map(|v| v.abs()).sum::<f64>(),
        Some(blocks) => {
            let mut in_block = vec![false; theta.len()];
            let mut total = 0.0;
            for block in blocks {
                let norm: f64 =
                    block.iter().map(|&j| theta[j] * theta[j]).sum::<f64>().sqrt();
                total += norm;
                for &j in block {
                    in_block[j] = true;
                }
            }
            total
                + theta
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| !in_block[*j])
                    .map(|(_, v)| v.abs())
                    .sum::<f64>()
        }
    };
    quad + lambda * penalty
}

/// Proximal-gradient (ISTA) reference for ½θᵀAθ + θᵀb + λ·penalty, with the
/// group penalty handled by block soft-thresholding. Fixed step 1/λmax(A).
pub fn proximal_gradient_reference(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lambda: f64,
    groups: Option<&[Vec<usize>]>,
    iterations: usize,
) -> DVector<f64> {
    let s = b.len();
    let lips = a
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, &v| m.max(v.abs()))
        .max(1e-12);
    let step = 1.0 / lips;
    let mut theta = DVector::zeros(s);
    let mut in_block = vec![false; s];
    if let Some(blocks) = groups {
        for block in blocks {
            for &j in block {
                in_block[j] = true;
            }
        }
    }
    for _ in 0..iterations {
        let grad = a * &theta + b;
        let z = &theta - step * grad;
        let mut next = DVector::zeros(s);
        if let Some(blocks) = groups {
            for block in blocks {
                let norm: f64 = block.iter().map(|&j| z[j] * z[j]).sum::<f64>().sqrt();
                let shrink = if norm > lambda * step { 1.0 - lambda * step / norm } else { 0.0 };
                for &j in block {
                    next[j] = shrink * z[j];
                }
            }
        }
        for j in 0..s {
            if !in_block[j] {
                let v = z[j];
                next[j] = if v > lambda * step {
                    v - lambda * step
                } else if v < -lambda * step {
                    v + lambda * step
                } else {
                    0.0
                };
            }
        }
        theta = next;
    }
    theta
}

/// Exhaustive vertex-enumeration LP oracle for the constrained ℓ1 row
/// problem: minimize ‖m‖₁ subject to ‖Γ·m − e_t‖∞ ≤ λ.
///
/// Standard form: u = (m⁺; m⁻) ≥ 0, minimize 1ᵀu subject to
/// G·u ≤ h with G = [−Γ, Γ; Γ, −Γ] and h = (λ·1 − e; λ·1 + e). Every basic
/// feasible solution activates 2s of the 4s constraints; all subsets are
/// enumerated, so this is exact (up to the singularity filter) but only
/// usable for small s. Returns the optimal objective value.
pub fn clime_lp_oracle(gamma: &DMatrix<f64>, lambda: f64, t: usize) -> Option<f64> {
    let s = gamma.nrows();
    let dim = 2 * s;
    let mut e = DVector::zeros(s);
    e[t] = 1.0;

    // Rows of the inequality system: first 4s from G·u ≤ h, then u ≥ 0 as
    // −u ≤ 0.
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::with_capacity(4 * s);
    for i in 0..s {
        let mut r = DVector::zeros(dim);
        for j in 0..s {
            r[j] = -gamma[(i, j)];
            r[s + j] = gamma[(i, j)];
        }
        rows.push((r, lambda - e[i]));
    }
    for i in 0..s {
        let mut r = DVector::zeros(dim);
        for j in 0..s {
            r[j] = gamma[(i, j)];
            r[s + j] = -gamma[(i, j)];
        }
        rows.push((r, lambda + e[i]));
    }
    for j in 0..dim {
        let mut r = DVector::zeros(dim);
        r[j] = -1.0;
        rows.push((r, 0.0));
    }

    let total = rows.len();
    let mut best: Option<f64> = None;
    let mut subset: Vec<usize> = (0..dim).collect();
    loop {
        // Solve the active system rows[subset]·u = h[subset].
        let mut a = DMatrix::zeros(dim, dim);
        let mut h = DVector::zeros(dim);
        for (ri, &idx) in subset.iter().enumerate() {
            a.row_mut(ri).copy_from(&rows[idx].0.transpose());
            h[ri] = rows[idx].1;
        }
        if let Some(u) = a.lu().solve(&h) {
            if u.iter().all(|v| v.is_finite()) {
                let feasible = rows
                    .iter()
                    .all(|(r, rhs)| r.dot(&u) <= rhs + 1e-7);
                if feasible {
                    let obj: f64 = u.iter().sum();
                    best = Some(best.map_or(obj, |b: f64| b.min(obj)));
                }
            }
        }
        // Next combination of `dim` indices out of `total`.
        let mut i = dim;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if subset[i] != i + total - dim {
                subset[i] += 1;
                for j in i + 1..dim {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Deterministic random PSD matrix A = BᵀB/s + ridge·I and vector b.
pub fn random_psd_problem(
    s: usize,
    ridge: f64,
    seed: u64,
) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let b_mat = DMatrix::from_fn(s, s, |_, _| rng.sample::<f64, _>(StandardNormal));
    let a = (b_mat.transpose() * &b_mat) / s as f64 + DMatrix::identity(s, s) * ridge;
    let b = DVector::from_fn(s, |_, _| rng.sample::<f64, _>(StandardNormal));
    (a, b)
}

/// Central difference of a scalar function of one coordinate.
pub fn central_difference<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Second central difference.
pub fn second_difference<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
}
