//! Linear-generator model of two populations `Y = Z·A` sharing sparse
//! latents `Z`, with executable checks of how mixing deflates the permutation
//! score and how exact sparse recovery restores it.

use itertools::Itertools;
use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{dim_err, Error, Result};
use crate::metrics::{perm_score, perm_score_from_corr};
use crate::numerics::RngStream;

/// Largest feature count accepted by [`sparse_recover`].
pub const MAX_RECOVERY_FEATURES: usize = 12;
/// Largest sparsity accepted by [`sparse_recover`].
pub const MAX_RECOVERY_SPARSITY: usize = 2;

/// F×N latent-to-unit mixing weights; column `i` drives unit `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    pub a: Array2<f64>,
}

impl MixingMatrix {
    pub fn new(a: Array2<f64>) -> Result<Self> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("non-finite mixing weight".into()));
        }
        Ok(Self { a })
    }

    pub fn num_features(&self) -> usize {
        self.a.nrows()
    }

    pub fn num_units(&self) -> usize {
        self.a.ncols()
    }

    /// Observed responses `Z·A`.
    pub fn mix(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.num_features() {
            return Err(dim_err(format!(
                "latents have {} features, mixing expects {}",
                z.ncols(),
                self.num_features()
            )));
        }
        Ok(z.dot(&self.a))
    }
}

/// `G = AaᵀAb`.
pub fn mixing_cross_corr(aa: &MixingMatrix, ab: &MixingMatrix) -> Result<Array2<f64>> {
    if aa.num_features() != ab.num_features() {
        return Err(dim_err(format!(
            "mixing matrices over {} and {} features",
            aa.num_features(),
            ab.num_features()
        )));
    }
    Ok(aa.a.t().dot(&ab.a))
}

/// `(1/N)·max_Π tr(G·P_Π)`, solved as a linear assignment.
pub fn perm_score_from_g(g: ArrayView2<f64>) -> Result<f64> {
    perm_score_from_corr(g)
}

/// System `a` reads one feature per group, system `b` mixes each group of
/// `n` features equally into one unit-norm column. `N = F / n` units each.
pub fn equal_mix_pair(n: usize, f: usize) -> Result<(MixingMatrix, MixingMatrix)> {
    if n == 0 || f < n || !f.is_multiple_of(n) {
        return Err(Error::Parameter(format!(
            "equal mixing of groups of {n} needs F to be a positive multiple of n, got F={f}"
        )));
    }
    let units = f / n;
    let w = 1.0 / (n as f64).sqrt();
    let aa = Array2::from_shape_fn((f, units), |(r, c)| if r == c * n { 1.0 } else { 0.0 });
    let ab = Array2::from_shape_fn((f, units), |(r, c)| if r / n == c { w } else { 0.0 });
    Ok((MixingMatrix::new(aa)?, MixingMatrix::new(ab)?))
}

/// Permutation score of [`equal_mix_pair`]; equals `1/√n`.
pub fn deflation_equal_mix(n: usize, f: usize) -> Result<f64> {
    let (aa, ab) = equal_mix_pair(n, f)?;
    perm_score_from_g(mixing_cross_corr(&aa, &ab)?.view())
}

/// Pair-grouped mixings: system `a` pairs features (0,1), (2,3), …; system `b`
/// pairs (1,2), (3,4), …, (F−1,0) when `shifted`, otherwise the same as `a`.
pub fn shifted_support_pair(f: usize, shifted: bool) -> Result<(MixingMatrix, MixingMatrix)> {
    if f < 4 || !f.is_multiple_of(2) {
        return Err(Error::Parameter(format!("shifted supports need even F >= 4, got {f}")));
    }
    let units = f / 2;
    let w = 1.0 / 2f64.sqrt();
    let offset = usize::from(shifted);
    let build = |offset: usize| {
        let mut a = Array2::zeros((f, units));
        for c in 0..units {
            a[[(2 * c + offset) % f, c]] = w;
            a[[(2 * c + 1 + offset) % f, c]] = w;
        }
        a
    };
    Ok((MixingMatrix::new(build(0))?, MixingMatrix::new(build(offset))?))
}

/// Permutation score of the shifted pairing; each matched pair shares one
/// feature, so this is `(1/√2)² = 0.5`.
pub fn deflation_shifted_support(f: usize) -> Result<f64> {
    let (aa, ab) = shifted_support_pair(f, true)?;
    perm_score_from_g(mixing_cross_corr(&aa, &ab)?.view())
}

/// Least-squares solver for `A_Sᵀ z_S = y` on one support.
struct SupportSolver {
    support: Vec<usize>,
    /// |S|×N pseudo-inverse of `A_Sᵀ`.
    pinv: DMatrix<f64>,
    /// N×|S| sensing map `A_Sᵀ`.
    sensing: DMatrix<f64>,
}

/// Recovers K-sparse latents from `Y = Z·A` by enumerating every support of
/// size at most `K` and keeping the smallest one that fits exactly. A row is
/// rejected when no support fits or when several supports of the minimal
/// size fit equally well.
pub fn sparse_recover(y: ArrayView2<f64>, a: &MixingMatrix, k: usize) -> Result<Array2<f64>> {
    let (f, n) = a.a.dim();
    if f > MAX_RECOVERY_FEATURES || k > MAX_RECOVERY_SPARSITY {
        return Err(Error::Parameter(format!(
            "brute-force recovery is limited to F <= {MAX_RECOVERY_FEATURES}, K <= {MAX_RECOVERY_SPARSITY}; got F={f}, K={k}"
        )));
    }
    if y.ncols() != n {
        return Err(dim_err(format!("responses have {} units, mixing has {n}", y.ncols())));
    }
    let mut by_size: Vec<Vec<SupportSolver>> = Vec::with_capacity(k + 1);
    for size in 0..=k {
        let solvers = (0..f)
            .combinations(size)
            .map(|support| {
                let sensing = DMatrix::from_fn(n, size, |r, c| a.a[[support[c], r]]);
                let pinv = if size == 0 {
                    DMatrix::zeros(0, n)
                } else {
                    sensing
                        .clone()
                        .pseudo_inverse(1e-12)
                        .map_err(|e| Error::Solver(format!("pseudo-inverse: {e}")))?
                };
                Ok(SupportSolver { support, pinv, sensing })
            })
            .collect::<Result<Vec<_>>>()?;
        by_size.push(solvers);
    }

    let mut z = Array2::zeros((y.nrows(), f));
    for (row, mut out) in y.axis_iter(Axis(0)).zip(z.axis_iter_mut(Axis(0))) {
        let yv = DMatrix::from_iterator(n, 1, row.iter().copied());
        let tol = 1e-8 * yv.norm().max(1.0);
        let mut found = None;
        for solvers in &by_size {
            let mut fits = solvers.iter().filter_map(|s| {
                let coef = &s.pinv * &yv;
                let resid = (&s.sensing * &coef - &yv).norm();
                (resid < tol).then_some((s, coef))
            });
            if let Some(first) = fits.next() {
                if let Some(second) = fits.next() {
                    return Err(Error::Recovery(format!(
                        "supports {:?} and {:?} both fit exactly; sensing map is not injective",
                        first.0.support, second.0.support
                    )));
                }
                found = Some(first);
                break;
            }
        }
        let Some((solver, coef)) = found else {
            return Err(Error::Recovery(format!(
                "no support of size <= {k} reproduces a response row"
            )));
        };
        for (c, &j) in solver.support.iter().enumerate() {
            out[j] = coef[(c, 0)];
        }
    }
    Ok(z)
}

/// Recovers latents from both systems, drops features never active, and
/// returns the permutation score between the recovered matrices.
pub fn prop1_check(z: ArrayView2<f64>, aa: &MixingMatrix, ab: &MixingMatrix) -> Result<f64> {
    let k = z
        .axis_iter(Axis(0))
        .map(|r| r.iter().filter(|&&v| v != 0.0).count())
        .max()
        .unwrap_or(0);
    let za = sparse_recover(aa.mix(z)?.view(), aa, k)?;
    let zb = sparse_recover(ab.mix(z)?.view(), ab, k)?;
    let alive = |m: &Array2<f64>| -> Vec<usize> {
        (0..m.ncols())
            .filter(|&j| m.column(j).iter().any(|&v| v != 0.0))
            .collect()
    };
    let (ka, kb) = (alive(&za), alive(&zb));
    if ka.is_empty() || kb.is_empty() {
        return Err(Error::Degenerate("recovered latents are all zero".into()));
    }
    perm_score(za.select(Axis(1), &ka).view(), zb.select(Axis(1), &kb).view())
}

/// Gaussian F×N mixing with unit-norm rows whose every `2K`-row submatrix has
/// smallest singular value at least `min_sv`, so `K`-sparse recovery is
/// unique and stable.
pub fn well_conditioned_mixing(f: usize, n: usize, k: usize, min_sv: f64, rng: &mut RngStream) -> Result<MixingMatrix> {
    let group = (2 * k).min(f);
    if group > n {
        return Err(Error::Parameter(format!(
            "{group}-row submatrices of an {f}x{n} mixing cannot be injective"
        )));
    }
    for _ in 0..1000 {
        let mut a = Array2::from_shape_fn((f, n), |_| rng.gaussian());
        for mut row in a.axis_iter_mut(Axis(0)) {
            let norm = row.dot(&row).sqrt();
            row.mapv_inplace(|v| v / norm);
        }
        let ok = (0..f).combinations(group).all(|rows| {
            let sub = DMatrix::from_fn(group, n, |r, c| a[[rows[r], c]]);
            sub.singular_values().min() >= min_sv
        });
        if ok {
            return MixingMatrix::new(a);
        }
    }
    Err(Error::Degenerate(format!(
        "no {f}x{n} mixing with {group}-row singular values >= {min_sv} in 1000 draws"
    )))
}

/// Exactly K-sparse latents with nonzero values uniform in (0.05, 1).
pub fn sparse_latents(m: usize, f: usize, k: usize, rng: &mut RngStream) -> Result<Array2<f64>> {
    if k == 0 || k > f {
        return Err(Error::Parameter(format!("sparsity K={k} outside [1, {f}]")));
    }
    let mut z = Array2::zeros((m, f));
    let mut idx: Vec<usize> = (0..f).collect();
    for mut row in z.axis_iter_mut(Axis(0)) {
        for s in 0..k {
            let j = s + rng.below(f - s);
            idx.swap(s, j);
            row[idx[s]] = rng.uniform_range(0.05, 1.0);
        }
    }
    Ok(z)
}
