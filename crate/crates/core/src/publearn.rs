//! Recovery of each synthetic image's public support from the public image
//! columns, via a sparse leading component of a fourth-moment matrix.
//!
//! The exact sparse-PCA program is replaced by truncated power iteration
//! with restarts; [`crate::oracle::exhaustive_public_support`] provides the
//! brute-force reference for small `n_pub`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::{stream_rng, SplitSpec, Stream, SyntheticDataset};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Default centering of `y²`: the squared norm of a dense selection vector.
pub const DEFAULT_CENTER: f64 = 2.0;

/// Symmetric `n_pub x n_pub` moment matrix
/// `(1/d) Σ_p (y_p² - center) ([x_p]_pub [x_p]_pubᵀ - I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMatrix(pub Matrix);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PublicSupport {
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PowerIterationConfig {
    pub iters: usize,
    pub restarts: usize,
}

impl Default for PowerIterationConfig {
    fn default() -> Self {
        PowerIterationConfig {
            iters: 100,
            restarts: 20,
        }
    }
}

pub fn build_moment_matrix(y: &[f64], x_pub: &Matrix, center: f64) -> Result<MomentMatrix> {
    let d = y.len();
    if d == 0 {
        return Err(Error::invalid("moment matrix needs at least one pixel"));
    }
    if x_pub.rows() != d {
        return Err(Error::invalid(format!(
            "{} pixels in y but {} rows in X_pub",
            d,
            x_pub.rows()
        )));
    }
    let n = x_pub.cols();
    let mut acc = vec![0.0; n * n];
    let mut weight_sum = 0.0;
    for (p, &yp) in y.iter().enumerate() {
        let c = yp * yp - center;
        weight_sum += c;
        let row = x_pub.row(p);
        for a in 0..n {
            let ca = c * row[a];
            let acc_row = &mut acc[a * n..a * n + a + 1];
            for (slot, &xb) in acc_row.iter_mut().zip(&row[..=a]) {
                *slot += ca * xb;
            }
        }
    }
    let inv_d = 1.0 / d as f64;
    let mut out = Matrix::zeros(n, n);
    for a in 0..n {
        for b in 0..=a {
            let mut v = acc[a * n + b];
            if a == b {
                v -= weight_sum;
            }
            v *= inv_d;
            out.set(a, b, v);
            out.set(b, a, v);
        }
    }
    Ok(MomentMatrix(out))
}

fn mat_vec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|i| m.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn quadratic_form(m: &Matrix, v: &[f64]) -> f64 {
    mat_vec(m, v).iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Indices of the `k` largest-magnitude entries; ties go to the lower index.
fn top_k_indices(v: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Zeroes all but the `k` largest-magnitude entries and normalizes.
/// Returns `None` for a vanishing vector.
fn truncate_normalize(v: &[f64], k: usize) -> Option<(Vec<f64>, Vec<usize>)> {
    let keep = top_k_indices(v, k);
    let mut out = vec![0.0; v.len()];
    let mut norm_sq = 0.0;
    for &i in &keep {
        out[i] = v[i];
        norm_sq += v[i] * v[i];
    }
    if !(norm_sq > 0.0) || !norm_sq.is_finite() {
        return None;
    }
    let inv = 1.0 / norm_sq.sqrt();
    out.iter_mut().for_each(|x| *x *= inv);
    Some((out, keep))
}

/// Truncated power iteration for `max vᵀ M v` over `k`-sparse unit `v`.
///
/// Starts from the uniform vector on the `k` largest diagonal entries, then
/// from `restarts` Gaussian vectors drawn from `rng`. Each run stops after
/// `iters` steps or once its support repeats. The best iterate seen wins;
/// earlier runs win ties.
pub fn sparse_top_component<R: Rng + ?Sized>(
    moment: &MomentMatrix,
    k: usize,
    config: PowerIterationConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let m = &moment.0;
    let n = m.rows();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("sparsity {k} outside 1..={n}")));
    }
    if !m.is_symmetric() {
        return Err(Error::invalid("moment matrix is not symmetric"));
    }
    let diag: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
    let mut starts = Vec::with_capacity(config.restarts + 1);
    let mass: Vec<f64> = diag.iter().map(|&x| x.max(0.0) + 1e-300).collect();
    let mut first = vec![0.0; n];
    for i in top_k_indices(&mass, k) {
        first[i] = 1.0 / (k as f64).sqrt();
    }
    starts.push(first);
    for _ in 0..config.restarts {
        starts.push((0..n).map(|_| rng.sample(StandardNormal)).collect());
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |v: &Vec<f64>| {
        let val = quadratic_form(m, v);
        if best.as_ref().map_or(true, |(b, _)| val > *b) {
            best = Some((val, v.clone()));
        }
    };
    for start in starts {
        let Some((mut v, mut support)) = truncate_normalize(&start, k) else {
            continue;
        };
        consider(&v);
        for _ in 0..config.iters {
            let Some((next, next_support)) = truncate_normalize(&mat_vec(m, &v), k) else {
                break;
            };
            let repeated = next_support == support;
            v = next;
            support = next_support;
            consider(&v);
            if repeated {
                break;
            }
        }
    }
    best.map(|(_, v)| v)
        .ok_or_else(|| Error::Internal("power iteration produced no iterate".into()))
}

/// `supp([w]_pub)` for one synthetic image `y`, given the public columns.
pub fn learn_public_support<R: Rng + ?Sized>(
    y: &[f64],
    x_pub: &Matrix,
    k_pub: usize,
    config: PowerIterationConfig,
    rng: &mut R,
) -> Result<PublicSupport> {
    let n_pub = x_pub.cols();
    if k_pub > n_pub {
        return Err(Error::invalid(format!("k_pub = {k_pub} exceeds n_pub = {n_pub}")));
    }
    if y.len() != x_pub.rows() {
        return Err(Error::invalid("pixel count mismatch between y and X_pub"));
    }
    if k_pub == n_pub {
        return Ok(PublicSupport {
            indices: (0..n_pub).collect(),
        });
    }
    if k_pub == 0 {
        return Ok(PublicSupport { indices: vec![] });
    }
    let moment = build_moment_matrix(y, x_pub, DEFAULT_CENTER)?;
    let v = sparse_top_component(&moment, k_pub, config, rng)?;
    let mut order: Vec<usize> = (0..n_pub).collect();
    order.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    let (inside, outside) = (order[k_pub - 1], order[k_pub]);
    if (v[inside].abs() - v[outside].abs()).abs() <= 1e-12 {
        return Err(Error::AmbiguousSupport(inside, outside));
    }
    let mut indices = order[..k_pub].to_vec();
    indices.sort_unstable();
    Ok(PublicSupport { indices })
}

/// Learns the public support of every synthetic image and assembles the
/// 0/1 matrix `W_pub` (`m x n_pub`). Images are independent and processed
/// in parallel; image `i` draws its restarts from its own seeded stream.
pub fn learn_public_matrix(
    dataset: &SyntheticDataset,
    x_pub: &Matrix,
    config: PowerIterationConfig,
    seed: u64,
) -> Result<(Matrix, Vec<PublicSupport>)> {
    let split: SplitSpec = dataset.split;
    if x_pub.cols() != split.n_pub || x_pub.rows() != dataset.d() {
        return Err(Error::invalid(format!(
            "X_pub is {}x{}, expected {}x{}",
            x_pub.rows(),
            x_pub.cols(),
            dataset.d(),
            split.n_pub
        )));
    }
    let supports = (0..dataset.m())
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15), Stream::SupportRestarts);
            learn_public_support(dataset.y.row(i), x_pub, split.k_pub, config, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut w_pub = Matrix::zeros(dataset.m(), split.n_pub);
    for (i, s) in supports.iter().enumerate() {
        for &j in &s.indices {
            w_pub.set(i, j, 1.0);
        }
    }
    Ok((w_pub, supports))
}

/// `Y_pub = W_pub X_pubᵀ / sqrt(k_pub)` (`m x d`); zero when `k_pub = 0`.
pub fn public_contribution(w_pub: &Matrix, x_pub: &Matrix, k_pub: usize) -> Result<Matrix> {
    if w_pub.cols() != x_pub.cols() {
        return Err(Error::invalid(format!(
            "W_pub has {} columns but X_pub has {}",
            w_pub.cols(),
            x_pub.cols()
        )));
    }
    let (m, d) = (w_pub.rows(), x_pub.rows());
    if k_pub == 0 {
        return Ok(Matrix::zeros(m, d));
    }
    let scale = 1.0 / (k_pub as f64).sqrt();
    let mut out = Matrix::zeros(m, d);
    for i in 0..m {
        let support: Vec<usize> = (0..w_pub.cols()).filter(|&j| w_pub.get(i, j) != 0.0).collect();
        let weights: Vec<f64> = support.iter().map(|&j| w_pub.get(i, j)).collect();
        let row = out.row_mut(i);
        for (p, slot) in row.iter_mut().enumerate() {
            let xp = x_pub.row(p);
            *slot = scale * support.iter().zip(&weights).map(|(&j, &w)| w * xp[j]).sum::<f64>();
        }
    }
    Ok(out)
}
