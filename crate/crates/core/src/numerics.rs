//! Shared numeric machinery: labelled random streams, Pearson correlation,
//! column standardisation and k-fold partitioning.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Error, Result};

/// A seeded ChaCha stream. Child streams are derived by label and land on a
/// distinct ChaCha stream id, so they never overlap with the parent.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

fn fnv1a(bytes: &[u8], mut h: u64) -> u64 {
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream. Same (parent, label) always gives the same child.
    pub fn derive(&self, label: &str) -> RngStream {
        let mut h = fnv1a(&self.stream.to_le_bytes(), FNV_OFFSET);
        h = fnv1a(label.as_bytes(), h);
        // stream 0 is reserved for roots
        let stream = if h == 0 { 1 } else { h };
        Self::with_stream(self.seed, stream)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn gaussian(&mut self) -> f64 {
        self.rng.sample(rand_distr::StandardNormal)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

/// Sample Pearson correlation. Zero-variance inputs correlate 0 with everything.
pub fn pearson_corr(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(dim_err(format!("pearson_corr: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Degenerate(format!(
            "pearson_corr needs at least 2 samples, got {}",
            x.len()
        )));
    }
    Ok(pearson_view(ArrayView1::from(x), ArrayView1::from(y)))
}

pub(crate) fn pearson_view(x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    let n = x.len() as f64;
    let mx = x.sum() / n;
    let my = y.sum() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y.iter()) {
        let da = a - mx;
        let db = b - my;
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// Columns centred to mean 0 and scaled to unit Euclidean norm.
#[derive(Debug, Clone)]
pub struct NormalizedColumns {
    pub data: Array2<f64>,
    /// `true` where the input column had zero variance (output column is all zero).
    pub zero_variance: Vec<bool>,
}

pub fn center_normalize_columns(y: ArrayView2<f64>) -> Result<NormalizedColumns> {
    let m = y.nrows();
    if m < 2 {
        return Err(Error::Degenerate(format!(
            "center_normalize_columns needs at least 2 rows, got {m}"
        )));
    }
    let mut data = y.to_owned();
    let mut zero_variance = vec![false; y.ncols()];
    for (j, mut col) in data.axis_iter_mut(Axis(1)).enumerate() {
        let mean = col.sum() / m as f64;
        col.mapv_inplace(|v| v - mean);
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        // relative test: a constant column leaves only rounding noise after centring
        let scale = mean.abs().max(1.0) * (m as f64).sqrt() * 1e-13;
        if norm <= scale {
            col.fill(0.0);
            zero_variance[j] = true;
        } else {
            col.mapv_inplace(|v| v / norm);
        }
    }
    Ok(NormalizedColumns {
        data,
        zero_variance,
    })
}

/// Na×Nb matrix of Pearson correlations between the columns of `ya` and `yb`.
pub fn cross_corr_matrix(ya: ArrayView2<f64>, yb: ArrayView2<f64>) -> Result<Array2<f64>> {
    if ya.nrows() != yb.nrows() {
        return Err(dim_err(format!(
            "cross_corr_matrix: {} rows vs {} rows",
            ya.nrows(),
            yb.nrows()
        )));
    }
    let na = center_normalize_columns(ya)?;
    let nb = center_normalize_columns(yb)?;
    let mut c = na.data.t().dot(&nb.data);
    c.mapv_inplace(|v| v.clamp(-1.0, 1.0));
    Ok(c)
}

/// Row-to-fold assignment for k-fold cross-validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub num_rows: usize,
    pub k: usize,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.num_rows)
            .filter(|&r| self.assignments[r] == fold)
            .collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.num_rows)
            .filter(|&r| self.assignments[r] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

pub fn kfold_split(num_rows: usize, k: usize, rng: &mut RngStream) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Parameter(format!("kfold_split needs k >= 2, got {k}")));
    }
    if num_rows < k {
        return Err(Error::Degenerate(format!(
            "kfold_split: {num_rows} rows cannot fill {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..num_rows).collect();
    rng.shuffle(&mut order);
    let mut assignments = vec![0; num_rows];
    for (pos, &row) in order.iter().enumerate() {
        assignments[row] = pos % k;
    }
    Ok(FoldPlan {
        num_rows,
        k,
        assignments,
    })
}

/// Mean and standard error (sample std / sqrt(k)).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    if k == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    (mean, (var / k as f64).sqrt())
}
