//! Gram-matrix retrieval from folded Gaussian columns, and removal of the
//! public contribution.
//!
//! Each pixel column of `Y` is `|g|` for `g ~ N(0, W Wᵀ)` (with `W` holding
//! the dense selection vectors), so pairwise statistics of two rows of `Y`
//! identify `<w_i, w_j>`. The inner products live on a small grid of
//! achievable values, which lets the estimate be snapped exactly.

use rayon::prelude::*;

use crate::data::{SplitSpec, SyntheticDataset};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// `E[|u| |v|]` for zero-mean jointly Gaussian `u, v` with common variance
/// `var` and correlation `rho`.
pub fn folded_moment(rho: f64, var: f64) -> Result<f64> {
    if !(rho.abs() <= 1.0) {
        return Err(Error::invalid(format!("correlation {rho} outside [-1, 1]")));
    }
    if !(var > 0.0) {
        return Err(Error::invalid(format!("variance must be positive, got {var}")));
    }
    Ok(folded_moment_unchecked(rho, var))
}

#[inline]
fn folded_moment_unchecked(rho: f64, var: f64) -> f64 {
    var * std::f64::consts::FRAC_2_PI * ((1.0 - rho * rho).max(0.0).sqrt() + rho * rho.asin())
}

/// Inverse of [`folded_moment`] on `rho ∈ [0, 1]`, by bisection. Moments
/// outside the attainable range clamp to the nearest endpoint.
pub fn invert_folded_moment(moment: f64, var: f64) -> Result<f64> {
    if !(var > 0.0) {
        return Err(Error::invalid(format!("variance must be positive, got {var}")));
    }
    if moment.is_nan() {
        return Err(Error::invalid("moment is NaN"));
    }
    if moment <= folded_moment_unchecked(0.0, var) {
        return Ok(0.0);
    }
    if moment >= folded_moment_unchecked(1.0, var) {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if folded_moment_unchecked(mid, var) < moment {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Estimate of `W Wᵀ` for the dense selection vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GramEstimate {
    /// Continuous estimate from inverting the folded cross-moment.
    pub raw: Matrix,
    /// Entries snapped to `grid`; diagonal fixed to the selection norm².
    pub rounded: Matrix,
    pub grid: Vec<f64>,
}

impl GramEstimate {
    pub fn m(&self) -> usize {
        self.rounded.rows()
    }
}

/// `M_priv = W_priv W_privᵀ`, entries in `{0, 1, 2}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrivateGram {
    m: usize,
    entries: Vec<u8>,
}

impl PrivateGram {
    pub fn from_entries(m: usize, entries: Vec<u8>) -> Result<Self> {
        if entries.len() != m * m {
            return Err(Error::invalid("private gram has wrong number of entries"));
        }
        let g = PrivateGram { m, entries };
        g.validate()?;
        Ok(g)
    }

    /// `W Wᵀ` for a 0/1 incidence matrix with two ones per row.
    pub fn from_incidence(w_priv: &Matrix) -> Result<Self> {
        let m = w_priv.rows();
        let mut entries = vec![0u8; m * m];
        for i in 0..m {
            for j in 0..m {
                let dot: f64 = w_priv.row(i).iter().zip(w_priv.row(j)).map(|(a, b)| a * b).sum();
                entries[i * m + j] = dot as u8;
            }
        }
        Self::from_entries(m, entries)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.entries[i * self.m + j]
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.m, self.m, |i, j| self.get(i, j) as f64)
    }

    pub fn from_matrix(mat: &Matrix) -> Result<Self> {
        if mat.rows() != mat.cols() {
            return Err(Error::InconsistentGram("private gram is not square".into()));
        }
        let mut entries = Vec::with_capacity(mat.rows() * mat.cols());
        for &v in mat.as_slice() {
            let r = v.round();
            if (v - r).abs() > 1e-9 || !(0.0..=2.0).contains(&r) {
                return Err(Error::InconsistentGram(format!("entry {v} not in {{0,1,2}}")));
            }
            entries.push(r as u8);
        }
        Self::from_entries(mat.rows(), entries)
    }

    fn validate(&self) -> Result<()> {
        for i in 0..self.m {
            if self.get(i, i) != 2 {
                return Err(Error::InconsistentGram(format!(
                    "diagonal entry {i} is {}, expected 2",
                    self.get(i, i)
                )));
            }
            for j in 0..i {
                let v = self.get(i, j);
                if v > 2 {
                    return Err(Error::InconsistentGram(format!(
                        "entry ({i}, {j}) = {v} outside {{0, 1, 2}}"
                    )));
                }
                if v != self.get(j, i) {
                    return Err(Error::InconsistentGram(format!(
                        "asymmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Sample-wise log-likelihood (up to constants) of `n` folded pairs under
/// correlation `rho < 1` and variance `var`.
fn folded_pair_loglik(a: &[f64], b: &[f64], sum_sq: f64, rho: f64, var: f64) -> f64 {
    let s = var * (1.0 - rho * rho);
    let n = a.len() as f64;
    let mut acc = -0.5 * n * (1.0 - rho * rho).ln() - sum_sq / (2.0 * s);
    if rho != 0.0 {
        let scale = rho / s;
        // log cosh(x) + ln 2 = |x| + ln(1 + e^{-2|x|})
        acc += a
            .iter()
            .zip(b)
            .map(|(x, y)| {
                let t = (scale * x * y).abs();
                t + (-2.0 * t).exp().ln_1p()
            })
            .sum::<f64>();
    } else {
        acc += n * std::f64::consts::LN_2;
    }
    acc
}

fn rows_identical(a: &[f64], b: &[f64]) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs()))
}

/// Retrieves `W Wᵀ` from the synthetic images alone.
///
/// The continuous estimate inverts the folded cross-moment `mean(Y_i · Y_j)`.
/// The snapped value is the grid point of highest folded-Gaussian likelihood
/// for the pair of rows; the top grid value (identical selection vectors)
/// is assigned only to rows that coincide pixel for pixel. Runs in
/// `O(m² d · |grid|)`.
pub fn gram_extract(dataset: &SyntheticDataset) -> Result<GramEstimate> {
    let (m, d) = (dataset.m(), dataset.d());
    if m < 2 || d < 2 {
        return Err(Error::invalid(format!(
            "gram extraction needs m >= 2 and d >= 2, got m = {m}, d = {d}"
        )));
    }
    let split = dataset.split;
    let var = split.selection_norm_sq();
    if var == 0.0 {
        return Err(Error::invalid("selection vectors are identically zero"));
    }
    let grid = split.gram_grid();
    let y = &dataset.y;
    let sq_norms: Vec<f64> = (0..m).map(|i| y.row(i).iter().map(|v| v * v).sum()).collect();

    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
    let estimates: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|&(i, j)| -> Result<(f64, f64)> {
            let (a, b) = (y.row(i), y.row(j));
            let moment = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / d as f64;
            let raw = var * invert_folded_moment(moment, var)?;
            if rows_identical(a, b) {
                return Ok((raw, var));
            }
            let sum_sq = sq_norms[i] + sq_norms[j];
            let mut best = (f64::NEG_INFINITY, 0.0);
            for &g in grid.iter().filter(|&&g| g < var - 1e-12) {
                let ll = folded_pair_loglik(a, b, sum_sq, g / var, var);
                // strict comparison keeps the smaller grid value on ties
                if ll > best.0 {
                    best = (ll, g);
                }
            }
            Ok((raw, best.1))
        })
        .collect::<Result<_>>()?;

    let mut raw = Matrix::zeros(m, m);
    let mut rounded = Matrix::zeros(m, m);
    for i in 0..m {
        raw.set(i, i, var);
        rounded.set(i, i, var);
    }
    for (&(i, j), &(r, g)) in pairs.iter().zip(&estimates) {
        raw.set(i, j, r);
        raw.set(j, i, r);
        rounded.set(i, j, g);
        rounded.set(j, i, g);
    }
    Ok(GramEstimate { raw, rounded, grid })
}

/// Snaps `value` to the nearest grid point, ties toward the smaller one.
pub fn snap_to_grid(value: f64, grid: &[f64]) -> f64 {
    let mut best = grid[0];
    for &g in grid {
        if (value - g).abs() < (value - best).abs() {
            best = g;
        }
    }
    best
}

/// Removes the public part: `M_priv = round(k_priv (M - W_pub W_pubᵀ / k_pub))`.
pub fn private_gram(gram: &GramEstimate, w_pub: &Matrix, split: &SplitSpec) -> Result<PrivateGram> {
    let m = gram.m();
    if w_pub.rows() != m || w_pub.cols() != split.n_pub {
        return Err(Error::invalid(format!(
            "W_pub is {}x{}, expected {m}x{}",
            w_pub.rows(),
            w_pub.cols(),
            split.n_pub
        )));
    }
    for i in 0..m {
        let ones = w_pub.row(i).iter().filter(|&&v| v == 1.0).count();
        let zeros = w_pub.row(i).iter().filter(|&&v| v == 0.0).count();
        if ones != split.k_pub || ones + zeros != split.n_pub {
            return Err(Error::invalid(format!(
                "W_pub row {i} is not a 0/1 row with {} ones",
                split.k_pub
            )));
        }
    }
    let mut entries = vec![0u8; m * m];
    for i in 0..m {
        for j in 0..m {
            let mut v = gram.rounded.get(i, j);
            if split.k_pub > 0 {
                let overlap: f64 = w_pub.row(i).iter().zip(w_pub.row(j)).map(|(a, b)| a * b).sum();
                v -= overlap / split.k_pub as f64;
            }
            let r = (split.k_priv as f64 * v).round();
            if !(0.0..=2.0).contains(&r) {
                return Err(Error::InconsistentGram(format!(
                    "entry ({i}, {j}) rounds to {r}"
                )));
            }
            entries[i * m + j] = r as u8;
        }
    }
    PrivateGram::from_entries(m, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, SplitSpec};
    use std::f64::consts::FRAC_2_PI;

    #[test]
    fn closed_form_endpoints() {
        assert!((folded_moment(0.0, 1.0).unwrap() - FRAC_2_PI).abs() < 1e-15);
        assert!((folded_moment(1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((folded_moment(-1.0, 3.0).unwrap() - 3.0).abs() < 1e-14);
        assert!(folded_moment(1.0001, 1.0).is_err());
        assert!(folded_moment(0.2, 0.0).is_err());
    }

    #[test]
    fn closed_form_half() {
        // 2/pi * (sqrt(3)/2 + pi/12)
        let expected = FRAC_2_PI * (3f64.sqrt() / 2.0 + std::f64::consts::PI / 12.0);
        assert!((folded_moment(0.5, 1.0).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.717_995_562).abs() < 1e-9);
    }

    #[test]
    fn strictly_increasing_on_unit_interval() {
        let vals: Vec<f64> = (0..=1000)
            .map(|i| folded_moment(i as f64 / 1000.0, 1.0).unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn inversion_round_trip_and_clamps() {
        let m = folded_moment(0.3, 2.0).unwrap();
        assert!((invert_folded_moment(m, 2.0).unwrap() - 0.3).abs() < 1e-9);
        assert_eq!(invert_folded_moment(0.1, 2.0).unwrap(), 0.0);
        assert_eq!(invert_folded_moment(5.0, 2.0).unwrap(), 1.0);
        assert!(invert_folded_moment(1.0, -1.0).is_err());
    }

    #[test]
    fn snap_breaks_ties_low() {
        let grid = [0.0, 0.5, 1.0];
        assert_eq!(snap_to_grid(0.25, &grid), 0.0);
        assert_eq!(snap_to_grid(0.26, &grid), 0.5);
        assert_eq!(snap_to_grid(7.0, &grid), 1.0);
    }

    fn exact(w: &crate::data::MixupMatrix) -> Matrix {
        let (m, n) = (w.m(), w.split.n());
        let dense: Vec<Vec<f64>> = w.rows.iter().map(|r| r.dense(n).unwrap()).collect();
        Matrix::from_fn(m, m, |i, j| dense[i].iter().zip(&dense[j]).map(|(a, b)| a * b).sum())
    }

    #[test]
    fn disjoint_and_identical_rows() {
        let split = SplitSpec::new(4, 4, 1, 2).unwrap();
        let (_, w, mut ds) = generate_dataset(&split, 20_000, 3, 8).unwrap();
        // force row 2 to duplicate row 0
        let row0 = ds.y.row(0).to_vec();
        ds.y.row_mut(2).copy_from_slice(&row0);
        let est = gram_extract(&ds).unwrap();
        assert_eq!(est.rounded.get(0, 2), 2.0);
        assert!(est.rounded.is_symmetric());
        let truth = exact(&w);
        assert_eq!(est.rounded.get(0, 1), truth.get(0, 1));
    }

    #[test]
    fn disjoint_supports_give_zero() {
        use crate::data::{make_synthetic, sample_image_matrix, ImageMatrix, SelectionVector};
        let split = SplitSpec::new(4, 4, 2, 2).unwrap();
        let x: ImageMatrix = sample_image_matrix(20_000, 8, 4).unwrap();
        let rows = [
            SelectionVector::new(vec![0, 1], vec![4, 5]).unwrap(),
            SelectionVector::new(vec![2, 3], vec![6, 7]).unwrap(),
        ];
        let mut y = Matrix::zeros(2, 20_000);
        for (j, w) in rows.iter().enumerate() {
            y.row_mut(j).copy_from_slice(&make_synthetic(&x, w).unwrap());
        }
        let ds = SyntheticDataset::new(y, split, 4).unwrap();
        let est = gram_extract(&ds).unwrap();
        assert_eq!(est.rounded.get(0, 1), 0.0);
        assert_eq!(est.rounded.get(1, 1), 2.0);
    }

    #[test]
    fn gram_needs_two_rows() {
        let split = SplitSpec::new(2, 2, 1, 2).unwrap();
        let (_, _, ds) = generate_dataset(&split, 10, 1, 1).unwrap();
        assert!(gram_extract(&ds).is_err());
    }

    #[test]
    fn private_gram_from_exact_inputs() {
        let split = SplitSpec::new(6, 5, 2, 2).unwrap();
        let (_, w, _) = generate_dataset(&split, 1, 30, 2).unwrap();
        let truth = exact(&w);
        let est = GramEstimate {
            raw: truth.clone(),
            rounded: truth,
            grid: split.gram_grid(),
        };
        let priv_gram = private_gram(&est, &w.w_pub(), &split).unwrap();
        let expected = PrivateGram::from_incidence(&w.w_priv()).unwrap();
        assert_eq!(priv_gram, expected);
    }

    #[test]
    fn private_gram_small_cases() {
        let split = SplitSpec::new(4, 3, 2, 2).unwrap();
        // one shared private image, disjoint public supports: <w1,w2> = 1/2
        let gram = Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 2.0]]).unwrap();
        let w_pub = Matrix::from_rows(&[vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 1.0]])
            .unwrap();
        let est = GramEstimate {
            raw: gram.clone(),
            rounded: gram,
            grid: split.gram_grid(),
        };
        assert_eq!(private_gram(&est, &w_pub, &split).unwrap().get(0, 1), 1);

        // same private pair, same public pair
        let gram = Matrix::from_rows(&[vec![2.0, 2.0], vec![2.0, 2.0]]).unwrap();
        let w_pub = Matrix::from_rows(&[vec![1.0, 1.0, 0.0, 0.0], vec![1.0, 1.0, 0.0, 0.0]])
            .unwrap();
        let est = GramEstimate {
            raw: gram.clone(),
            rounded: gram,
            grid: split.gram_grid(),
        };
        assert_eq!(private_gram(&est, &w_pub, &split).unwrap().get(0, 1), 2);
    }

    #[test]
    fn private_gram_flags_inconsistency() {
        let split = SplitSpec::new(4, 3, 2, 2).unwrap();
        // public overlap of 2 claimed but total inner product only 0.5
        let gram = Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 2.0]]).unwrap();
        let w_pub = Matrix::from_rows(&[vec![1.0, 1.0, 0.0, 0.0], vec![1.0, 1.0, 0.0, 0.0]])
            .unwrap();
        let est = GramEstimate {
            raw: gram.clone(),
            rounded: gram,
            grid: split.gram_grid(),
        };
        assert!(matches!(
            private_gram(&est, &w_pub, &split),
            Err(Error::InconsistentGram(_))
        ));
        let asym = Matrix::from_rows(&[vec![2.0, 1.0], vec![0.0, 2.0]]).unwrap();
        assert!(PrivateGram::from_matrix(&asym).is_err());
    }
}
