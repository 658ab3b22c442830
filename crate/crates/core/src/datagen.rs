//! Synthetic sparse feature data.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// M×F ground-truth features. Each entry is 0 or drawn uniformly from (0,1).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub z: Array2<f32>,
    pub p: f64,
    pub importance: Option<Array1<f64>>,
}

impl FeatureDataset {
    pub fn num_rows(&self) -> usize {
        self.z.nrows()
    }

    pub fn num_features(&self) -> usize {
        self.z.ncols()
    }

    pub fn with_importance(mut self) -> Result<Self> {
        self.importance = Some(gen_importance(self.num_features())?);
        Ok(self)
    }
}

pub fn gen_features(m: usize, f: usize, p: f64, rng: &mut RngStream) -> Result<FeatureDataset> {
    if m == 0 || f == 0 {
        return Err(Error::Parameter(format!("gen_features: M={m}, F={f}")));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Parameter(format!(
            "activation probability must lie in (0,1], got {p}"
        )));
    }
    let mut z = Array2::<f32>::zeros((m, f));
    for v in z.iter_mut() {
        if rng.uniform() < p {
            let mut x = rng.uniform() as f32;
            while x <= 0.0 || x >= 1.0 {
                x = rng.uniform() as f32;
            }
            *v = x;
        }
    }
    Ok(FeatureDataset {
        z,
        p,
        importance: None,
    })
}

/// Power-law task importance 1/x² on F evenly spaced points of [1, 3 - 2/F].
pub fn gen_importance(f: usize) -> Result<Array1<f64>> {
    if f < 2 {
        return Err(Error::Parameter(format!("gen_importance needs F >= 2, got {f}")));
    }
    let ff = f as f64;
    let end = 3.0 - 2.0 / ff;
    let step = (end - 1.0) / (ff - 1.0);
    Ok(Array1::from_shape_fn(f, |i| {
        let x = if i == f - 1 { end } else { 1.0 + i as f64 * step };
        1.0 / (x * x)
    }))
}

/// K-sparse latents before and after column whitening.
#[derive(Debug, Clone)]
pub struct WhitenedSparse {
    /// Rows with exactly `K` nonzeros, values uniform in (0,1).
    pub raw: Array2<f64>,
    /// Centred columns with `ZᵀZ / M = I`.
    pub whitened: Array2<f64>,
}

pub fn gen_whitened_sparse(m: usize, f: usize, k: usize, rng: &mut RngStream) -> Result<WhitenedSparse> {
    if m < f {
        return Err(Error::Parameter(format!(
            "whitening needs M >= F, got M={m}, F={f}"
        )));
    }
    if k == 0 || k > f {
        return Err(Error::Parameter(format!("sparsity K={k} outside [1, {f}]")));
    }
    let mut raw = Array2::<f64>::zeros((m, f));
    let mut idx: Vec<usize> = (0..f).collect();
    for mut row in raw.rows_mut() {
        // partial Fisher-Yates picks K distinct features
        for s in 0..k {
            let j = s + rng.below(f - s);
            idx.swap(s, j);
            row[idx[s]] = rng.uniform_range(0.05, 1.0);
        }
    }

    let mut centred = raw.clone();
    for mut col in centred.columns_mut() {
        let mean = col.sum() / m as f64;
        col.mapv_inplace(|v| v - mean);
    }
    let gram = centred.t().dot(&centred) / m as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(f, f, |i, j| gram[[i, j]]));
    let min_eig = eig.eigenvalues.min();
    if min_eig <= 1e-10 {
        return Err(Error::Degenerate(format!(
            "latent covariance is singular (min eigenvalue {min_eig:.3e})"
        )));
    }
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let w = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
    let w = Array2::from_shape_fn((f, f), |(i, j)| w[(i, j)]);
    Ok(WhitenedSparse {
        raw,
        whitened: centred.dot(&w),
    })
}
