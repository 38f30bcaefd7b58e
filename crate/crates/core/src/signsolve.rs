//! Per-pixel hidden-sign regression
//! `min_z ‖ |W_priv z + y_pub| - y ‖₂` by enumerating sign patterns.
//!
//! For a fixed sign pattern `σ` the problem is ordinary least squares with
//! target `t = σ∘y - y_pub`, and its residual is `‖Nᵀ t‖₂` where the columns
//! of `N` span the left null space of `W_priv`. Walking the patterns in Gray
//! code order changes one coordinate of `t` per step, so the projected
//! residual vector is updated with one row of `N` instead of re-solving.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::data::SplitSpec;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const DEFAULT_MAX_ROWS: usize = 24;
const RESYNC_EVERY: u64 = 1 << 10;

/// Default residual tolerance `1e-6 (1 + ‖y‖₂)`.
pub fn default_tol(y: &[f64]) -> f64 {
    1e-6 * (1.0 + y.iter().map(|v| v * v).sum::<f64>().sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelSolution {
    /// Distinct zero-residual solutions, in enumeration order.
    pub solutions: Vec<Vec<f64>>,
    /// Canonical representative: smallest `|z|` lexicographically. When no
    /// pattern fits, the least-squares solution of the best pattern.
    pub chosen: Vec<f64>,
    /// `‖ |W z + y_pub| - y ‖₂` of `chosen`.
    pub residual: f64,
    pub rank_deficient: bool,
}

impl PixelSolution {
    /// Whether all solutions agree entrywise in absolute value.
    pub fn abs_unique(&self) -> bool {
        let Some(first) = self.solutions.first() else {
            return false;
        };
        self.solutions.iter().all(|z| {
            z.iter()
                .zip(first)
                .all(|(a, b)| (a.abs() - b.abs()).abs() <= 1e-9 * (1.0 + b.abs()))
        })
    }
}

/// Factorization of `W_priv` shared by every pixel.
#[derive(Debug, Clone)]
pub struct SignSolver {
    m: usize,
    n: usize,
    w: Vec<f64>,
    /// `n x m` Moore-Penrose pseudo-inverse, row-major.
    pinv: Vec<f64>,
    /// `m x k` orthonormal basis of the left null space, row-major.
    null_basis: Vec<f64>,
    null_dim: usize,
    rank: usize,
}

impl SignSolver {
    pub fn new(w_priv: &Matrix, max_rows: usize) -> Result<Self> {
        let (m, n) = w_priv.shape();
        if m == 0 || n == 0 {
            return Err(Error::invalid(format!("W_priv must be nonempty, got {m}x{n}")));
        }
        if m > max_rows {
            return Err(Error::ResourceLimit(format!(
                "{m} rows means 2^{m} sign patterns per pixel; limit is {max_rows}"
            )));
        }
        let w = DMatrix::from_row_slice(m, n, w_priv.as_slice());
        let svd = w.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let eps = 1e-10 * smax.max(1.0) * (m.max(n) as f64);
        let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
        let pinv = svd
            .pseudo_inverse(eps)
            .map_err(|e| Error::Internal(format!("pseudo-inverse failed: {e}")))?;

        // complement projector I - W W⁺ has eigenvalues in {0, 1}
        let complement = DMatrix::identity(m, m) - &w * &pinv;
        let complement = (&complement + complement.transpose()) * 0.5;
        let eig = SymmetricEigen::new(complement);
        let keep: Vec<usize> = (0..m).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
        let null_dim = keep.len();
        let mut null_basis = vec![0.0; m * null_dim];
        for (c, &i) in keep.iter().enumerate() {
            for r in 0..m {
                null_basis[r * null_dim + c] = eig.eigenvectors[(r, i)];
            }
        }
        let mut pinv_rows = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                pinv_rows[i * m + j] = pinv[(i, j)];
            }
        }
        Ok(SignSolver {
            m,
            n,
            w: w_priv.as_slice().to_vec(),
            pinv: pinv_rows,
            null_basis,
            null_dim,
            rank,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.rank < self.n
    }

    /// Minimum-norm least-squares solution for target `t`.
    fn least_squares(&self, t: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                self.pinv[i * self.m..(i + 1) * self.m]
                    .iter()
                    .zip(t)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// `W z + y_pub`.
    fn fitted(&self, z: &[f64], y_pub: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|r| {
                self.w[r * self.n..(r + 1) * self.n]
                    .iter()
                    .zip(z)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + y_pub[r]
            })
            .collect()
    }

    /// `‖ |W z + y_pub| - y ‖₂`, evaluated directly.
    pub fn residual(&self, z: &[f64], y_pub: &[f64], y: &[f64]) -> f64 {
        self.fitted(z, y_pub)
            .iter()
            .zip(y)
            .map(|(f, t)| (f.abs() - t).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn project(&self, t: &[f64]) -> Vec<f64> {
        let k = self.null_dim;
        let mut s = vec![0.0; k];
        for (r, &tr) in t.iter().enumerate() {
            for (sc, &b) in s.iter_mut().zip(&self.null_basis[r * k..(r + 1) * k]) {
                *sc += b * tr;
            }
        }
        s
    }

    /// Visits every sign pattern in Gray-code order, calling `visit` with the
    /// current pattern (bit `r` set means `σ_r = -1`) and the squared
    /// least-squares residual for that pattern.
    fn walk(&self, y_pub: &[f64], y: &[f64], mut visit: impl FnMut(u64, f64)) {
        let m = self.m;
        let k = self.null_dim;
        let mut t: Vec<f64> = y.iter().zip(y_pub).map(|(a, b)| a - b).collect();
        let mut s = self.project(&t);
        let mut pattern = 0u64;
        visit(pattern, s.iter().map(|v| v * v).sum());
        for step in 1u64..(1u64 << m) {
            let r = step.trailing_zeros() as usize;
            let delta = if pattern >> r & 1 == 0 { -2.0 * y[r] } else { 2.0 * y[r] };
            pattern ^= 1 << r;
            t[r] += delta;
            if step % RESYNC_EVERY == 0 {
                t = (0..m)
                    .map(|i| if pattern >> i & 1 == 1 { -y[i] } else { y[i] } - y_pub[i])
                    .collect();
                s = self.project(&t);
            } else {
                for (sc, &b) in s.iter_mut().zip(&self.null_basis[r * k..(r + 1) * k]) {
                    *sc += delta * b;
                }
            }
            visit(pattern, s.iter().map(|v| v * v).sum());
        }
    }

    fn target(&self, pattern: u64, y_pub: &[f64], y: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|i| if pattern >> i & 1 == 1 { -y[i] } else { y[i] } - y_pub[i])
            .collect()
    }

    fn check_inputs(&self, y_pub: &[f64], y: &[f64]) -> Result<()> {
        if y_pub.len() != self.m || y.len() != self.m {
            return Err(Error::invalid(format!(
                "pixel columns must have {} entries",
                self.m
            )));
        }
        if y.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) || y_pub.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("pixel column must be finite with y >= 0"));
        }
        Ok(())
    }

    /// All `z` with `‖ |W z + y_pub| - y ‖₂ <= tol` whose fitted signs agree
    /// with their generating pattern (entries within `tol` of zero match
    /// either sign).
    pub fn solve_pixel(&self, y_pub: &[f64], y: &[f64], tol: f64) -> Result<PixelSolution> {
        self.check_inputs(y_pub, y)?;
        let tol_sq = tol * tol;
        // incremental residuals are screened loosely and then re-verified
        let scale: f64 = 1.0 + y.iter().chain(y_pub).map(|v| v * v).sum::<f64>();
        let screen = 4.0 * tol_sq + 1e-12 * scale;
        let mut candidates = Vec::new();
        let mut best = (f64::INFINITY, 0u64);
        self.walk(y_pub, y, |pattern, r2| {
            if r2 <= screen {
                candidates.push(pattern);
            }
            if r2 < best.0 {
                best = (r2, pattern);
            }
        });

        let mut solutions: Vec<Vec<f64>> = Vec::new();
        for pattern in candidates {
            let z = self.least_squares(&self.target(pattern, y_pub, y));
            let fitted = self.fitted(&z, y_pub);
            let signs_ok = fitted.iter().enumerate().all(|(i, &f)| {
                let negative = pattern >> i & 1 == 1;
                f.abs() <= tol || (f < 0.0) == negative
            });
            if !signs_ok || self.residual(&z, y_pub, y) > tol {
                continue;
            }
            let duplicate = solutions.iter().any(|s| {
                s.iter()
                    .zip(&z)
                    .all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + a.abs()))
            });
            if !duplicate {
                solutions.push(z);
            }
        }

        let chosen = match solutions.iter().min_by(|a, b| canonical_order(a, b)) {
            Some(z) => z.clone(),
            None => self.least_squares(&self.target(best.1, y_pub, y)),
        };
        let residual = self.residual(&chosen, y_pub, y);
        Ok(PixelSolution {
            solutions,
            chosen,
            residual,
            rank_deficient: self.is_rank_deficient(),
        })
    }

    /// `min_z ‖ |W z + y_pub| - y ‖₂²` and a minimizer. Over all patterns the
    /// least-squares residual bounds the hidden-sign objective from above and
    /// meets it at the minimizer's own pattern, so no sign check is needed.
    pub fn min_objective(&self, y_pub: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_inputs(y_pub, y)?;
        let mut best = (f64::INFINITY, 0u64);
        self.walk(y_pub, y, |pattern, r2| {
            if r2 < best.0 {
                best = (r2, pattern);
            }
        });
        let z = self.least_squares(&self.target(best.1, y_pub, y));
        Ok((self.residual(&z, y_pub, y).powi(2), z))
    }
}

/// Lexicographic on `|z|`, then on `z` itself.
fn canonical_order(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    let by_abs = a
        .iter()
        .zip(b)
        .map(|(x, y)| x.abs().total_cmp(&y.abs()))
        .find(|o| o.is_ne());
    by_abs.unwrap_or_else(|| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    })
}

/// Convenience wrapper building a one-off [`SignSolver`].
pub fn solve_pixel(w_priv: &Matrix, y_pub: &[f64], y: &[f64], tol: f64) -> Result<PixelSolution> {
    SignSolver::new(w_priv, DEFAULT_MAX_ROWS)?.solve_pixel(y_pub, y, tol)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Fixed residual tolerance; `None` uses [`default_tol`] per pixel.
    pub tol: Option<f64>,
    pub max_rows: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: None,
            max_rows: DEFAULT_MAX_ROWS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredImages {
    /// `d x n_priv`; column `s` is the recovered private image `s`.
    pub x_tilde: Matrix,
    /// Number of distinct zero-residual solutions per pixel.
    pub solution_counts: Vec<usize>,
    /// Per pixel: all solutions agree in absolute value.
    pub abs_unique: Vec<bool>,
    pub max_residual: f64,
    pub rank_deficient: bool,
}

impl RecoveredImages {
    pub fn d(&self) -> usize {
        self.solution_counts.len()
    }

    /// Histogram `count -> pixels` of solution multiplicities.
    pub fn ambiguity_histogram(&self) -> std::collections::BTreeMap<usize, usize> {
        let mut hist = std::collections::BTreeMap::new();
        for &c in &self.solution_counts {
            *hist.entry(c).or_insert(0) += 1;
        }
        hist
    }
}

/// Solves every pixel. Inputs are scaled by `sqrt(k_priv)` so that the
/// private coefficient matrix is exactly the 0/1 `W_priv`.
pub fn solve_all(
    w_priv: &Matrix,
    y_pub: &Matrix,
    y: &Matrix,
    split: &SplitSpec,
    options: SolveOptions,
) -> Result<RecoveredImages> {
    let (m, n_priv) = w_priv.shape();
    if y.rows() != m || y_pub.rows() != m || y_pub.cols() != y.cols() {
        return Err(Error::invalid(format!(
            "shape mismatch: W_priv {m}x{n_priv}, Y_pub {}x{}, Y {}x{}",
            y_pub.rows(),
            y_pub.cols(),
            y.rows(),
            y.cols()
        )));
    }
    if n_priv != split.n_priv {
        return Err(Error::invalid("W_priv column count differs from n_priv"));
    }
    let d = y.cols();
    if d == 0 {
        return Ok(RecoveredImages {
            x_tilde: Matrix::zeros(0, n_priv),
            solution_counts: vec![],
            abs_unique: vec![],
            max_residual: 0.0,
            rank_deficient: false,
        });
    }
    let solver = SignSolver::new(w_priv, options.max_rows)?;
    let scale = (split.k_priv as f64).sqrt();
    let pixels: Vec<PixelSolution> = (0..d)
        .into_par_iter()
        .map(|p| {
            let yp: Vec<f64> = (0..m).map(|r| scale * y_pub.get(r, p)).collect();
            let yc: Vec<f64> = (0..m).map(|r| scale * y.get(r, p)).collect();
            let tol = options.tol.unwrap_or_else(|| default_tol(&yc));
            solver.solve_pixel(&yp, &yc, tol)
        })
        .collect::<Result<_>>()?;
    let mut x_tilde = Matrix::zeros(d, n_priv);
    for (p, sol) in pixels.iter().enumerate() {
        x_tilde.row_mut(p).copy_from_slice(&sol.chosen);
    }
    Ok(RecoveredImages {
        x_tilde,
        solution_counts: pixels.iter().map(|s| s.solutions.len()).collect(),
        abs_unique: pixels.iter().map(PixelSolution::abs_unique).collect(),
        max_residual: pixels.iter().map(|s| s.residual).fold(0.0, f64::max),
        rank_deficient: solver.is_rank_deficient(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMatching {
    /// Column `j` of `A` is matched to column `permutation[j]` of `B`.
    pub permutation: Vec<usize>,
    /// `max_j ‖A[:, j] - B[:, permutation[j]]‖_∞`.
    pub max_error: f64,
}

/// Bottleneck matching of columns: the permutation minimizing the largest
/// per-column sup-norm error. Exact for every `n` (threshold search over the
/// `n²` pairwise costs with bipartite matching at each threshold).
pub fn match_columns(a: &Matrix, b: &Matrix) -> Result<ColumnMatching> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "cannot match {}x{} against {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let n = a.cols();
    let mut cost = vec![0.0f64; n * n];
    for p in 0..a.rows() {
        let (ra, rb) = (a.row(p), b.row(p));
        for j in 0..n {
            for k in 0..n {
                let c = &mut cost[j * n + k];
                *c = c.max((ra[j] - rb[k]).abs());
            }
        }
    }
    let mut thresholds = cost.clone();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let (mut lo, mut hi) = (0usize, thresholds.len().saturating_sub(1));
    let mut best = perfect_matching(&cost, n, thresholds.last().copied().unwrap_or(0.0));
    while lo < hi {
        let mid = (lo + hi) / 2;
        match perfect_matching(&cost, n, thresholds[mid]) {
            Some(found) => {
                best = Some(found);
                hi = mid;
            }
            None => lo = mid + 1,
        }
    }
    if let Some(t) = thresholds.get(lo) {
        if let Some(found) = perfect_matching(&cost, n, *t) {
            best = Some(found);
        }
    }
    let permutation = best.unwrap_or_default();
    let max_error = permutation
        .iter()
        .enumerate()
        .map(|(j, &k)| cost[j * n + k])
        .fold(0.0, f64::max);
    Ok(ColumnMatching {
        permutation,
        max_error,
    })
}

fn perfect_matching(cost: &[f64], n: usize, threshold: f64) -> Option<Vec<usize>> {
    let mut owner = vec![usize::MAX; n];
    for j in 0..n {
        let mut seen = vec![false; n];
        if !augment(j, cost, n, threshold, &mut owner, &mut seen) {
            return None;
        }
    }
    let mut perm = vec![0; n];
    for (k, &j) in owner.iter().enumerate() {
        perm[j] = k;
    }
    Some(perm)
}

fn augment(
    j: usize,
    cost: &[f64],
    n: usize,
    threshold: f64,
    owner: &mut [usize],
    seen: &mut [bool],
) -> bool {
    for k in 0..n {
        if cost[j * n + k] <= threshold && !seen[k] {
            seen[k] = true;
            if owner[k] == usize::MAX || augment(owner[k], cost, n, threshold, owner, seen) {
                owner[k] = j;
                return true;
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> Matrix {
        Matrix::from_rows(&[vec![1.0, 1.0, 0.0], vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]])
            .unwrap()
    }

    fn contains(set: &[Vec<f64>], z: &[f64]) -> bool {
        set.iter()
            .any(|s| s.iter().zip(z).all(|(a, b)| (a - b).abs() < 1e-9))
    }

    #[test]
    fn triangle_has_eight_solutions() {
        let sol = solve_pixel(&triangle(), &[0.0; 3], &[1.0, 4.0, 1.0], 1e-9).unwrap();
        assert_eq!(sol.solutions.len(), 8);
        for a in [1.0, -1.0] {
            for b in [4.0, -4.0] {
                for c in [1.0, -1.0] {
                    let z = [(a + b - c) / 2.0, (a - b + c) / 2.0, (-a + b + c) / 2.0];
                    assert!(contains(&sol.solutions, &z), "{z:?}");
                }
            }
        }
        assert!(contains(&sol.solutions, &[1.0, -2.0, 3.0]));
        assert!(contains(&sol.solutions, &[-1.0, 2.0, -3.0]));
        assert!(!sol.abs_unique());
    }

    #[test]
    fn zero_data_gives_zero() {
        let sol = solve_pixel(&triangle(), &[0.0; 3], &[0.0; 3], 1e-9).unwrap();
        assert_eq!(sol.solutions, vec![vec![0.0; 3]]);
    }

    #[test]
    fn planted_solution_is_found() {
        let w = Matrix::from_rows(&[
            vec![1.0, 1.0, 0.0, 0.0],
            vec![0.0, 1.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0, 1.0],
            vec![1.0, 0.0, 0.0, 1.0],
            vec![1.0, 0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0, 1.0],
        ])
        .unwrap();
        let z = [0.3, -1.2, 0.7, 2.1];
        let y_pub = [0.5, -0.2, 0.1, 1.0, -0.7, 0.25];
        let y: Vec<f64> = (0..6)
            .map(|r| (w.row(r).iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() + y_pub[r]).abs())
            .collect();
        let sol = solve_pixel(&w, &y_pub, &y, 1e-9).unwrap();
        assert!(contains(&sol.solutions, &z));
        assert!(sol.residual <= 1e-9);
    }

    #[test]
    fn oversized_system_refused() {
        let w = Matrix::from_fn(25, 3, |i, j| ((i + j) % 3 != 0) as u8 as f64);
        assert!(matches!(
            SignSolver::new(&w, DEFAULT_MAX_ROWS),
            Err(Error::ResourceLimit(_))
        ));
    }

    #[test]
    fn rank_deficient_is_flagged() {
        // a 4-cycle is bipartite: incidence matrix has rank 3
        let w = Matrix::from_rows(&[
            vec![1.0, 1.0, 0.0, 0.0],
            vec![0.0, 1.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0, 1.0],
            vec![1.0, 0.0, 0.0, 1.0],
        ])
        .unwrap();
        let solver = SignSolver::new(&w, 24).unwrap();
        assert_eq!(solver.rank(), 3);
        let sol = solver.solve_pixel(&[0.0; 4], &[1.0, 2.0, 3.0, 2.0], 1e-9).unwrap();
        assert!(sol.rank_deficient);
        assert!(!sol.solutions.is_empty());
        for z in &sol.solutions {
            assert!(solver.residual(z, &[0.0; 4], &[1.0, 2.0, 3.0, 2.0]) < 1e-9);
        }
    }

    #[test]
    fn duplicate_rows_fit_both_copies() {
        let w = Matrix::from_rows(&[
            vec![1.0, 1.0, 0.0],
            vec![1.0, 0.0, 1.0],
            vec![0.0, 1.0, 1.0],
            vec![1.0, 1.0, 0.0],
        ])
        .unwrap();
        let z = [0.4, -1.5, 0.9];
        let y_pub = [0.2, 0.3, -0.1, 0.2];
        let y: Vec<f64> = (0..4)
            .map(|r| (w.row(r).iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() + y_pub[r]).abs())
            .collect();
        let solver = SignSolver::new(&w, 24).unwrap();
        let sol = solver.solve_pixel(&y_pub, &y, 1e-9).unwrap();
        assert!(contains(&sol.solutions, &z));
        let fitted = solver.fitted(&z, &y_pub);
        assert!((fitted[0].abs() - y[0]).abs() < 1e-12 && (fitted[3].abs() - y[3]).abs() < 1e-12);
    }

    #[test]
    fn solve_all_on_empty_pixels() {
        let split = SplitSpec::new(1, 3, 1, 2).unwrap();
        let out = solve_all(
            &triangle(),
            &Matrix::zeros(3, 0),
            &Matrix::zeros(3, 0),
            &split,
            SolveOptions::default(),
        )
        .unwrap();
        assert_eq!(out.x_tilde.shape(), (0, 3));
    }

    #[test]
    fn canonical_choice_is_smallest_abs() {
        let sol = solve_pixel(&triangle(), &[0.0; 3], &[1.0, 4.0, 1.0], 1e-9).unwrap();
        // ±(1, -2, 3) are the only solutions with |z_0| = 1
        assert!((sol.chosen[0].abs() - 1.0).abs() < 1e-12);
        for z in &sol.solutions {
            assert!(canonical_order(&sol.chosen, z).is_le());
        }
    }

    #[test]
    fn column_matching() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let b = a.select_columns(&[2, 0, 1]);
        let res = match_columns(&a, &b).unwrap();
        assert_eq!(res.permutation, vec![1, 2, 0]);
        assert_eq!(res.max_error, 0.0);

        let noisy = b.map(|v| v + 1e-8);
        let res = match_columns(&a, &noisy).unwrap();
        assert_eq!(res.permutation, vec![1, 2, 0]);
        assert!(res.max_error <= 1e-8 + 1e-15);
        assert!(match_columns(&a, &Matrix::zeros(3, 2)).is_err());
    }
}
