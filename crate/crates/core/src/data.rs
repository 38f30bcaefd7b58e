//! Domain types for Gaussian mixup datasets and their seeded generation.
//!
//! Index convention: public images occupy global indices `0..n_pub`, private
//! images `n_pub..n_pub + n_priv`.
//!
//! Randomness comes from ChaCha20 keyed by the experiment seed, with one
//! stream per purpose (see [`Stream`]). Changing `m` therefore never perturbs
//! the image matrix, and vice versa.

use rand::seq::index;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Purpose-specific RNG streams derived from one experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Images = 0,
    Selections = 1,
    SupportRestarts = 2,
    Trials = 3,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_pub: usize,
    pub n_priv: usize,
    pub k_pub: usize,
    pub k_priv: usize,
}

impl SplitSpec {
    pub fn new(n_pub: usize, n_priv: usize, k_pub: usize, k_priv: usize) -> Result<Self> {
        let split = SplitSpec {
            n_pub,
            n_priv,
            k_pub,
            k_priv,
        };
        split.validate()?;
        Ok(split)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n() == 0 {
            return Err(Error::invalid("split has no images"));
        }
        if self.k_pub > self.n_pub {
            return Err(Error::invalid(format!(
                "k_pub = {} exceeds n_pub = {}",
                self.k_pub, self.n_pub
            )));
        }
        if self.k_priv > self.n_priv {
            return Err(Error::invalid(format!(
                "k_priv = {} exceeds n_priv = {}",
                self.k_priv, self.n_priv
            )));
        }
        Ok(())
    }

    /// The recovery pipeline only handles pairs of private images per mix.
    pub fn require_pipeline(&self) -> Result<()> {
        self.validate()?;
        if self.k_priv != 2 {
            return Err(Error::invalid(format!(
                "recovery requires k_priv = 2, got {}",
                self.k_priv
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n_pub + self.n_priv
    }

    pub fn public_indices(&self) -> std::ops::Range<usize> {
        0..self.n_pub
    }

    pub fn private_indices(&self) -> std::ops::Range<usize> {
        self.n_pub..self.n()
    }

    /// Achievable inner products `a/k_pub + b/k_priv` between two dense
    /// selection vectors, sorted ascending and deduplicated.
    pub fn gram_grid(&self) -> Vec<f64> {
        let mut grid = Vec::new();
        for a in 0..=self.k_pub {
            for b in 0..=self.k_priv {
                let mut v = 0.0;
                if self.k_pub > 0 {
                    v += a as f64 / self.k_pub as f64;
                }
                if self.k_priv > 0 {
                    v += b as f64 / self.k_priv as f64;
                }
                grid.push(v);
            }
        }
        grid.sort_by(f64::total_cmp);
        grid.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        grid
    }

    /// Squared norm of every dense selection vector.
    pub fn selection_norm_sq(&self) -> f64 {
        (self.k_pub > 0) as u8 as f64 + (self.k_priv > 0) as u8 as f64
    }
}

/// Image matrix `X`: `d` pixel rows by `n` image columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMatrix(pub Matrix);

impl ImageMatrix {
    pub fn new(matrix: Matrix) -> Result<Self> {
        let (d, n) = matrix.shape();
        if d == 0 || n == 0 {
            return Err(Error::invalid(format!("image matrix must be nonempty, got {d}x{n}")));
        }
        if matrix.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image matrix has non-finite entries"));
        }
        Ok(ImageMatrix(matrix))
    }

    pub fn d(&self) -> usize {
        self.0.rows()
    }

    pub fn n(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    /// `X_pub`, the `d x n_pub` public columns.
    pub fn public(&self, split: &SplitSpec) -> Matrix {
        self.0.select_columns(&split.public_indices().collect::<Vec<_>>())
    }

    /// `X_priv`, the `d x n_priv` private columns.
    pub fn private(&self, split: &SplitSpec) -> Matrix {
        self.0.select_columns(&split.private_indices().collect::<Vec<_>>())
    }
}

pub fn sample_image_matrix(d: usize, n: usize, seed: u64) -> Result<ImageMatrix> {
    if d == 0 || n == 0 {
        return Err(Error::invalid(format!("image matrix must be nonempty, got {d}x{n}")));
    }
    let mut rng = stream_rng(seed, Stream::Images);
    let data = (0..d * n).map(|_| rng.sample(StandardNormal)).collect();
    ImageMatrix::new(Matrix::from_vec(d, n, data)?)
}

/// Supports of one selection vector, as sorted global image indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SelectionVector {
    pub pub_support: Vec<usize>,
    pub priv_support: Vec<usize>,
}

impl SelectionVector {
    pub fn new(mut pub_support: Vec<usize>, mut priv_support: Vec<usize>) -> Result<Self> {
        pub_support.sort_unstable();
        priv_support.sort_unstable();
        let dup = |v: &[usize]| v.windows(2).any(|w| w[0] == w[1]);
        if dup(&pub_support) || dup(&priv_support) {
            return Err(Error::invalid("selection support has repeated indices"));
        }
        if pub_support.iter().any(|i| priv_support.binary_search(i).is_ok()) {
            return Err(Error::invalid("public and private supports overlap"));
        }
        Ok(SelectionVector {
            pub_support,
            priv_support,
        })
    }

    /// Nonzero entries of the dense realization as `(index, value)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        let pub_w = 1.0 / (self.pub_support.len() as f64).sqrt();
        let priv_w = 1.0 / (self.priv_support.len() as f64).sqrt();
        self.pub_support
            .iter()
            .map(move |&i| (i, pub_w))
            .chain(self.priv_support.iter().map(move |&i| (i, priv_w)))
    }

    pub fn max_index(&self) -> Option<usize> {
        self.pub_support
            .iter()
            .chain(&self.priv_support)
            .copied()
            .max()
    }

    pub fn dense(&self, n: usize) -> Result<Vec<f64>> {
        if self.max_index().is_some_and(|i| i >= n) {
            return Err(Error::invalid(format!("selection index out of range for n = {n}")));
        }
        let mut w = vec![0.0; n];
        for (i, v) in self.entries() {
            w[i] = v;
        }
        Ok(w)
    }

    fn check_split(&self, split: &SplitSpec) -> Result<()> {
        let ok = self.pub_support.len() == split.k_pub
            && self.priv_support.len() == split.k_priv
            && self.pub_support.iter().all(|&i| i < split.n_pub)
            && self
                .priv_support
                .iter()
                .all(|&i| split.private_indices().contains(&i));
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("selection vector does not match the split"))
        }
    }
}

pub fn sample_selection_vector<R: Rng + ?Sized>(
    split: &SplitSpec,
    rng: &mut R,
) -> Result<SelectionVector> {
    split.validate()?;
    let pub_support = index::sample(rng, split.n_pub, split.k_pub).into_vec();
    let priv_support = index::sample(rng, split.n_priv, split.k_priv)
        .into_iter()
        .map(|i| split.n_pub + i)
        .collect();
    SelectionVector::new(pub_support, priv_support)
}

/// `|X w|` entrywise: one synthetic image of `d` pixels.
pub fn make_synthetic(x: &ImageMatrix, w: &SelectionVector) -> Result<Vec<f64>> {
    if w.max_index().is_some_and(|i| i >= x.n()) {
        return Err(Error::invalid(format!(
            "selection index out of range for {} images",
            x.n()
        )));
    }
    let entries: Vec<(usize, f64)> = w.entries().collect();
    Ok((0..x.d())
        .map(|p| {
            let row = x.0.row(p);
            entries.iter().map(|&(i, v)| row[i] * v).sum::<f64>().abs()
        })
        .collect())
}

/// The `m` selection vectors of a dataset together with their split.
#[derive(Debug, Clone, PartialEq)]
pub struct MixupMatrix {
    pub split: SplitSpec,
    pub rows: Vec<SelectionVector>,
}

impl MixupMatrix {
    pub fn new(split: SplitSpec, rows: Vec<SelectionVector>) -> Result<Self> {
        split.validate()?;
        for row in &rows {
            row.check_split(&split)?;
        }
        Ok(MixupMatrix { split, rows })
    }

    /// Rebuilds the selection vectors from the support of a dense `m x n`
    /// matrix (either the 0/1 pattern or the weighted `W`).
    pub fn from_support(split: SplitSpec, w: &Matrix) -> Result<Self> {
        if w.cols() != split.n() {
            return Err(Error::invalid(format!(
                "mixing matrix has {} columns, split has {} images",
                w.cols(),
                split.n()
            )));
        }
        let rows = (0..w.rows())
            .map(|r| {
                let nz = |range: std::ops::Range<usize>| -> Vec<usize> {
                    range.filter(|&i| w.get(r, i) != 0.0).collect()
                };
                SelectionVector::new(nz(split.public_indices()), nz(split.private_indices()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(split, rows)
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    /// The full 0/1 support matrix `W` (`m x n`).
    pub fn w(&self) -> Matrix {
        let mut w = Matrix::zeros(self.m(), self.split.n());
        for (r, sel) in self.rows.iter().enumerate() {
            for &i in sel.pub_support.iter().chain(&sel.priv_support) {
                w.set(r, i, 1.0);
            }
        }
        w
    }

    pub fn w_pub(&self) -> Matrix {
        let mut w = Matrix::zeros(self.m(), self.split.n_pub);
        for (r, sel) in self.rows.iter().enumerate() {
            for &i in &sel.pub_support {
                w.set(r, i, 1.0);
            }
        }
        w
    }

    pub fn w_priv(&self) -> Matrix {
        let mut w = Matrix::zeros(self.m(), self.split.n_priv);
        for (r, sel) in self.rows.iter().enumerate() {
            for &i in &sel.priv_support {
                w.set(r, i - self.split.n_pub, 1.0);
            }
        }
        w
    }

    /// Private supports as edges on local private indices `0..n_priv`.
    /// Only meaningful when `k_priv = 2`.
    pub fn private_edges(&self) -> Vec<(usize, usize)> {
        self.rows
            .iter()
            .filter(|s| s.priv_support.len() == 2)
            .map(|s| {
                (
                    s.priv_support[0] - self.split.n_pub,
                    s.priv_support[1] - self.split.n_pub,
                )
            })
            .collect()
    }
}

/// Observed synthetic images `Y` (`m x d`, nonnegative).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub y: Matrix,
    pub split: SplitSpec,
    pub seed: u64,
}

impl SyntheticDataset {
    pub fn new(y: Matrix, split: SplitSpec, seed: u64) -> Result<Self> {
        split.validate()?;
        if y.as_slice().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(
                "synthetic images must be finite and nonnegative",
            ));
        }
        Ok(SyntheticDataset { y, split, seed })
    }

    pub fn m(&self) -> usize {
        self.y.rows()
    }

    pub fn d(&self) -> usize {
        self.y.cols()
    }
}

pub fn generate_dataset(
    split: &SplitSpec,
    d: usize,
    m: usize,
    seed: u64,
) -> Result<(ImageMatrix, MixupMatrix, SyntheticDataset)> {
    split.validate()?;
    if m == 0 {
        return Err(Error::invalid("dataset needs at least one synthetic image"));
    }
    let x = sample_image_matrix(d, split.n(), seed)?;
    let mut rng = stream_rng(seed, Stream::Selections);
    let rows = (0..m)
        .map(|_| sample_selection_vector(split, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let mixup = MixupMatrix::new(*split, rows)?;
    let mut y = Matrix::zeros(m, d);
    for (j, w) in mixup.rows.iter().enumerate() {
        y.row_mut(j).copy_from_slice(&make_synthetic(&x, w)?);
    }
    let dataset = SyntheticDataset::new(y, *split, seed)?;
    Ok((x, mixup, dataset))
}

/// Experiment parameters, stored as a flat `key = value` text file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_pub: usize,
    pub n_priv: usize,
    pub k_pub: usize,
    pub k_priv: usize,
    pub d: usize,
    pub m: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn split(&self) -> Result<SplitSpec> {
        SplitSpec::new(self.n_pub, self.n_priv, self.k_pub, self.k_priv)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("flat integer config always serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start].lines().count().max(1))
                .unwrap_or(0);
            Error::Parse {
                line,
                message: e.message().to_string(),
            }
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SimpleGraph;

    fn split(n_pub: usize, n_priv: usize, k_pub: usize, k_priv: usize) -> SplitSpec {
        SplitSpec::new(n_pub, n_priv, k_pub, k_priv).unwrap()
    }

    #[test]
    fn split_invariants() {
        assert!(SplitSpec::new(3, 4, 4, 2).is_err());
        assert!(SplitSpec::new(3, 1, 1, 2).is_err());
        assert!(SplitSpec::new(0, 0, 0, 0).is_err());
        assert!(split(5, 5, 2, 3).require_pipeline().is_err());
        assert!(split(5, 5, 2, 2).require_pipeline().is_ok());
    }

    #[test]
    fn grid_for_two_and_two() {
        assert_eq!(split(4, 4, 2, 2).gram_grid(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(split(0, 4, 0, 2).gram_grid(), vec![0.0, 0.5, 1.0]);
        let g = split(6, 4, 3, 2).gram_grid();
        // 3/3 and 2/2 coincide
        assert_eq!(g.len(), 11);
    }

    #[test]
    fn image_matrix_moments() {
        let x = sample_image_matrix(1000, 1000, 7).unwrap();
        let n = x.0.as_slice().len() as f64;
        let mean = x.0.as_slice().iter().sum::<f64>() / n;
        let var = x.0.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn image_matrix_is_deterministic() {
        let a = sample_image_matrix(1, 1, 99).unwrap();
        let b = sample_image_matrix(1, 1, 99).unwrap();
        assert_eq!(a.0.get(0, 0).to_bits(), b.0.get(0, 0).to_bits());
        assert!(sample_image_matrix(0, 3, 1).is_err());
    }

    #[test]
    fn column_norms_concentrate() {
        let d = 10_000;
        let x = sample_image_matrix(d, 8, 3).unwrap();
        for j in 0..8 {
            let nsq: f64 = x.0.column(j).iter().map(|v| v * v).sum();
            assert!((nsq / d as f64 - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn selection_vector_entries() {
        let s = split(10, 5, 4, 2);
        let mut rng = stream_rng(1, Stream::Selections);
        for _ in 0..50 {
            let w = sample_selection_vector(&s, &mut rng).unwrap();
            let dense = w.dense(s.n()).unwrap();
            assert_eq!(dense.iter().filter(|&&v| v == 0.5).count(), 4);
            let root_half = 1.0 / 2f64.sqrt();
            assert_eq!(dense.iter().filter(|&&v| v == root_half).count(), 2);
            let nsq: f64 = dense.iter().map(|v| v * v).sum();
            assert!((nsq - 2.0).abs() < 1e-12);
            assert!(w.pub_support.iter().all(|&i| i < 10));
            assert!(w.priv_support.iter().all(|&i| (10..15).contains(&i)));
        }
    }

    #[test]
    fn forced_supports() {
        let s = split(3, 2, 3, 2);
        let mut rng = stream_rng(5, Stream::Selections);
        let w = sample_selection_vector(&s, &mut rng).unwrap();
        assert_eq!(w.pub_support, vec![0, 1, 2]);
        assert_eq!(w.priv_support, vec![3, 4]);
    }

    #[test]
    fn hand_evaluated_synthetic_image() {
        let x = ImageMatrix::new(Matrix::from_rows(&[vec![1.0, -3.0], vec![2.0, 0.0]]).unwrap())
            .unwrap();
        let w = SelectionVector::new(vec![], vec![0, 1]).unwrap();
        let y = make_synthetic(&x, &w).unwrap();
        let r2 = 2f64.sqrt();
        assert!((y[0] - r2).abs() < 1e-12 && (y[1] - r2).abs() < 1e-12);

        let zero = SelectionVector::new(vec![], vec![]).unwrap();
        assert_eq!(make_synthetic(&x, &zero).unwrap(), vec![0.0, 0.0]);

        let out_of_range = SelectionVector::new(vec![], vec![0, 2]).unwrap();
        assert!(make_synthetic(&x, &out_of_range).is_err());
    }

    #[test]
    fn dataset_rows_reevaluate_exactly() {
        let s = split(6, 5, 2, 2);
        let (x, w, ds) = generate_dataset(&s, 50, 12, 11).unwrap();
        for (j, sel) in w.rows.iter().enumerate() {
            assert_eq!(ds.y.row(j), make_synthetic(&x, sel).unwrap().as_slice());
        }
        let wp = w.w_priv();
        let wb = w.w_pub();
        for j in 0..12 {
            assert_eq!(wp.row(j).iter().sum::<f64>(), 2.0);
            assert_eq!(wb.row(j).iter().sum::<f64>(), 2.0);
        }
        assert!(ds.y.as_slice().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn dataset_is_deterministic_and_images_ignore_m() {
        let s = split(4, 4, 1, 2);
        let (x1, w1, y1) = generate_dataset(&s, 20, 5, 3).unwrap();
        let (x2, w2, y2) = generate_dataset(&s, 20, 5, 3).unwrap();
        assert_eq!((x1.clone(), w1), (x2, w2));
        assert_eq!(y1, y2);
        let (x3, _, _) = generate_dataset(&s, 20, 9, 3).unwrap();
        assert_eq!(x1, x3);
    }

    #[test]
    fn private_multigraph_connects_at_ten_n() {
        let s = split(4, 8, 1, 2);
        let connected = (0..100)
            .filter(|&seed| {
                let (_, w, _) = generate_dataset(&s, 1, 80, seed).unwrap();
                SimpleGraph::multigraph_is_connected(8, &w.private_edges())
            })
            .count();
        assert!(connected >= 99, "{connected}/100");
    }

    #[test]
    fn config_text_round_trip() {
        let cfg = ExperimentConfig {
            n_pub: 12,
            n_priv: 6,
            k_pub: 2,
            k_priv: 2,
            d: 20000,
            m: 16,
            seed: 42,
        };
        let text = cfg.to_text();
        assert!(text.contains("n_pub = 12"));
        assert_eq!(ExperimentConfig::from_text(&text).unwrap(), cfg);
        let err = ExperimentConfig::from_text("n_pub = 1\nbogus = 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }
}
