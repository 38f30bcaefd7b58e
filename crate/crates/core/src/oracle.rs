//! Brute-force reference implementations for tests and acceptance runs.
//!
//! None of these share numerical kernels with the code they check: the Gram
//! oracle counts support intersections, the moment oracle samples, the
//! support oracle enumerates subsets, and the sign oracle re-solves normal
//! equations for every pattern.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{stream_rng, MixupMatrix, Stream};
use crate::error::{Error, Result};
use crate::gram::GramEstimate;
use crate::matrix::Matrix;
use crate::publearn::{MomentMatrix, PublicSupport};

pub const SUPPORT_ORACLE_MAX: usize = 12;
pub const SIGN_ORACLE_MAX: usize = 12;

/// Exact `W Wᵀ` of the dense selection vectors, from support intersections.
pub fn exact_gram(w: &MixupMatrix) -> GramEstimate {
    let split = w.split;
    let m = w.m();
    let overlap = |a: &[usize], b: &[usize]| a.iter().filter(|i| b.contains(i)).count() as f64;
    let mut out = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let (ri, rj) = (&w.rows[i], &w.rows[j]);
            let mut v = 0.0;
            if split.k_pub > 0 {
                v += overlap(&ri.pub_support, &rj.pub_support) / split.k_pub as f64;
            }
            if split.k_priv > 0 {
                v += overlap(&ri.priv_support, &rj.priv_support) / split.k_priv as f64;
            }
            out.set(i, j, v);
        }
    }
    GramEstimate {
        raw: out.clone(),
        rounded: out,
        grid: split.gram_grid(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
}

/// Monte Carlo estimate of `E[|u||v|]` for correlated Gaussians.
pub fn folded_moment_mc(rho: f64, var: f64, samples: usize, seed: u64) -> Result<McEstimate> {
    if samples == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    if !(rho.abs() <= 1.0) || !(var > 0.0) {
        return Err(Error::invalid("need |rho| <= 1 and var > 0"));
    }
    let mut rng = stream_rng(seed, Stream::Trials);
    let sd = var.sqrt();
    let ortho = (1.0 - rho * rho).max(0.0).sqrt();
    let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let g1: f64 = rng.sample(StandardNormal);
        let g2: f64 = rng.sample(StandardNormal);
        let u = sd * g1;
        let v = sd * (rho * g1 + ortho * g2);
        let x = (u * v).abs();
        sum += x;
        sum_sq += x * x;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var_hat = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    Ok(McEstimate {
        mean,
        std_err: (var_hat / n).sqrt(),
    })
}

/// Support maximizing `<M, u_S u_Sᵀ>` over all `k`-subsets `S`, with `u_S`
/// uniform on `S`.
pub fn exhaustive_public_support(moment: &MomentMatrix, k: usize) -> Result<PublicSupport> {
    let m = &moment.0;
    let n = m.rows();
    if n > SUPPORT_ORACLE_MAX {
        return Err(Error::invalid(format!(
            "support oracle limited to n_pub <= {SUPPORT_ORACLE_MAX}, got {n}"
        )));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("sparsity {k} outside 1..={n}")));
    }
    let mut best: Option<(f64, u32)> = None;
    let mut runner_up: Option<(f64, u32)> = None;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let members: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        let value = members
            .iter()
            .flat_map(|&a| members.iter().map(move |&b| (a, b)))
            .map(|(a, b)| m.get(a, b))
            .sum::<f64>()
            / k as f64;
        match best {
            Some((b, _)) if value <= b => {
                if runner_up.map_or(true, |(r, _)| value > r) {
                    runner_up = Some((value, mask));
                }
            }
            _ => {
                runner_up = best;
                best = Some((value, mask));
            }
        }
    }
    let (value, mask) = best.expect("at least one subset");
    if let Some((second, other)) = runner_up {
        if (value - second).abs() <= 1e-12 * (1.0 + value.abs()) {
            let diff = mask ^ other;
            let a = diff.trailing_zeros() as usize;
            let b = (diff & !(1 << a)).trailing_zeros() as usize;
            return Err(Error::AmbiguousSupport(a, b));
        }
    }
    Ok(PublicSupport {
        indices: (0..n).filter(|&i| mask >> i & 1 == 1).collect(),
    })
}

/// Hidden-sign solution set computed the slow way: every pattern in binary
/// order, each solved from its own normal equations.
pub fn naive_sign_solver(w: &Matrix, y_pub: &[f64], y: &[f64], tol: f64) -> Result<Vec<Vec<f64>>> {
    let (m, n) = w.shape();
    if m > SIGN_ORACLE_MAX {
        return Err(Error::invalid(format!(
            "sign oracle limited to m <= {SIGN_ORACLE_MAX}, got {m}"
        )));
    }
    if y.len() != m || y_pub.len() != m {
        return Err(Error::invalid("column length mismatch"));
    }
    let a = DMatrix::from_row_slice(m, n, w.as_slice());
    let normal = a.transpose() * &a;
    // (AᵀA)⁺ via its eigendecomposition
    let eig = SymmetricEigen::new(normal.clone());
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |acc, &l| acc.max(l.abs()));
    let cutoff = 1e-10 * lmax.max(1.0);
    let mut normal_pinv = DMatrix::zeros(n, n);
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l > cutoff {
            let v = eig.eigenvectors.column(i);
            normal_pinv += (v * v.transpose()) / l;
        }
    }
    // a singular AᵀA can still pass Cholesky on round-off pivots, so only
    // trust it at full rank; otherwise take the minimum-norm solution
    let full_rank = eig.eigenvalues.iter().all(|&l| l > cutoff);
    let cholesky = if full_rank { normal.clone().cholesky() } else { None };

    let mut out: Vec<Vec<f64>> = Vec::new();
    for pattern in 0u32..(1 << m) {
        let t = DVector::from_iterator(
            m,
            (0..m).map(|i| if pattern >> i & 1 == 1 { -y[i] } else { y[i] } - y_pub[i]),
        );
        let rhs = a.transpose() * &t;
        let z = match &cholesky {
            Some(c) => c.solve(&rhs),
            None => &normal_pinv * &rhs,
        };
        let fitted: Vec<f64> = (0..m).map(|i| (a.row(i) * &z)[0] + y_pub[i]).collect();
        let residual = fitted
            .iter()
            .zip(y)
            .map(|(f, t)| (f.abs() - t).powi(2))
            .sum::<f64>()
            .sqrt();
        let signs_ok = fitted.iter().enumerate().all(|(i, &f)| {
            f.abs() <= tol || (f < 0.0) == (pattern >> i & 1 == 1)
        });
        if residual <= tol && signs_ok {
            let z: Vec<f64> = z.iter().copied().collect();
            if !out.iter().any(|s| s.iter().zip(&z).all(|(p, q)| (p - q).abs() <= 1e-9 * (1.0 + p.abs()))) {
                out.push(z);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SelectionVector, SplitSpec};

    #[test]
    fn exact_gram_cases() {
        let split = SplitSpec::new(4, 4, 2, 2).unwrap();
        let rows = vec![
            SelectionVector::new(vec![0, 1], vec![4, 5]).unwrap(),
            SelectionVector::new(vec![0, 1], vec![4, 5]).unwrap(),
            SelectionVector::new(vec![2, 3], vec![6, 7]).unwrap(),
            SelectionVector::new(vec![2, 3], vec![5, 6]).unwrap(),
        ];
        let g = exact_gram(&MixupMatrix::new(split, rows).unwrap()).rounded;
        assert_eq!(g.get(0, 1), 2.0);
        assert_eq!(g.get(0, 2), 0.0);
        assert_eq!(g.get(0, 3), 0.5);
        assert_eq!(g.get(2, 3), 1.5);
    }

    #[test]
    fn mc_endpoints() {
        let e = folded_moment_mc(0.0, 1.0, 1_000_000, 1).unwrap();
        assert!((e.mean - std::f64::consts::FRAC_2_PI).abs() < 4.0 * e.std_err);
        let e = folded_moment_mc(1.0, 1.0, 1_000_000, 2).unwrap();
        assert!((e.mean - 1.0).abs() < 4.0 * e.std_err);
    }

    #[test]
    fn support_oracle_planted_and_tie() {
        let u = [0.0, 1.0, 0.0, 1.0, 0.0];
        let m = MomentMatrix(Matrix::from_fn(5, 5, |i, j| u[i] * u[j]));
        assert_eq!(exhaustive_public_support(&m, 2).unwrap().indices, vec![1, 3]);
        let zero = MomentMatrix(Matrix::zeros(5, 5));
        assert!(matches!(
            exhaustive_public_support(&zero, 2),
            Err(Error::AmbiguousSupport(..))
        ));
        let big = MomentMatrix(Matrix::zeros(13, 13));
        assert!(matches!(exhaustive_public_support(&big, 2), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn naive_solver_triangle_and_zero() {
        let w = Matrix::from_rows(&[vec![1.0, 1.0, 0.0], vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]])
            .unwrap();
        assert_eq!(naive_sign_solver(&w, &[0.0; 3], &[1.0, 4.0, 1.0], 1e-9).unwrap().len(), 8);
        assert_eq!(
            naive_sign_solver(&w, &[0.0; 3], &[0.0; 3], 1e-9).unwrap(),
            vec![vec![0.0; 3]]
        );
    }
}
