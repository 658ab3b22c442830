//! Ridge regression from one population onto another, with the penalty
//! chosen per fold on a nested split of the training rows.
//!
//! Fitting goes through the eigendecomposition of the centred Gram matrix, so
//! every penalty in the grid costs one small matrix product. Held-out scoring
//! uses second moments of the evaluation rows: for coefficients `W` the
//! correlation of target `t` is `(WᵀSxy)_tt / sqrt((WᵀSxxW)_tt · Syy_t)`,
//! which equals the Pearson correlation of predictions and targets.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::matching::fold_blocks;
use super::report::{AlignmentReport, Metric};
use super::{check_shared_plan, ActivationMatrix};
use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    /// S×T coefficients.
    pub coef: Array2<f64>,
    /// Length-T intercept restoring the target means.
    pub intercept: Array1<f64>,
}

impl RidgeFit {
    pub fn predict(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.coef) + &self.intercept
    }
}

struct Moments {
    mx: Array1<f64>,
    my: Array1<f64>,
    sxx: Array2<f64>,
    sxy: Array2<f64>,
    syy: Array1<f64>,
}

impl Moments {
    fn new(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Self {
        let mx = x.mean_axis(Axis(0)).expect("non-empty rows");
        let my = y.mean_axis(Axis(0)).expect("non-empty rows");
        let xc = &x - &mx;
        let yc = &y - &my;
        let sxx = xc.t().dot(&xc);
        let sxy = xc.t().dot(&yc);
        let syy = yc.map_axis(Axis(0), |c| c.dot(&c));
        Moments { mx, my, sxx, sxy, syy }
    }

    /// Mean over targets of the Pearson correlation between `x·coef` and `y`.
    fn score(&self, coef: &Array2<f64>) -> f64 {
        let cov = (coef * &self.sxy).sum_axis(Axis(0));
        let var = (coef * &self.sxx.dot(coef)).sum_axis(Axis(0));
        let t = coef.ncols();
        let total: f64 = (0..t)
            .map(|j| {
                let denom = (var[j] * self.syy[j]).sqrt();
                if denom > 0.0 && denom.is_finite() {
                    (cov[j] / denom).clamp(-1.0, 1.0)
                } else {
                    0.0
                }
            })
            .sum();
        total / t as f64
    }
}

struct Spectrum {
    vals: Vec<f64>,
    vecs: Array2<f64>,
    /// Vᵀ Sxy.
    proj: Array2<f64>,
}

impl Spectrum {
    fn new(m: &Moments) -> Self {
        let s = m.sxx.nrows();
        let eig = SymmetricEigen::new(DMatrix::from_fn(s, s, |i, j| m.sxx[[i, j]]));
        let vecs = Array2::from_shape_fn((s, s), |(i, j)| eig.eigenvectors[(i, j)]);
        // the Gram matrix is PSD; negative eigenvalues are rounding
        let vals = eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
        let proj = vecs.t().dot(&m.sxy);
        Spectrum { vals, vecs, proj }
    }

    fn coef(&self, alpha: f64) -> Array2<f64> {
        let mut scaled = self.proj.clone();
        for (mut row, &l) in scaled.axis_iter_mut(Axis(0)).zip(&self.vals) {
            row.mapv_inplace(|v| v / (l + alpha));
        }
        self.vecs.dot(&scaled)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Parameter(format!("ridge alpha must be positive and finite, got {alpha}")));
    }
    Ok(())
}

/// Closed-form ridge solution of `(XᵀX + αI) W = XᵀY` on centred data.
pub fn ridge_fit(x: ArrayView2<f64>, y: ArrayView2<f64>, alpha: f64) -> Result<RidgeFit> {
    check_alpha(alpha)?;
    if x.nrows() != y.nrows() {
        return Err(dim_err(format!("ridge_fit: {} vs {} rows", x.nrows(), y.nrows())));
    }
    if x.nrows() == 0 {
        return Err(Error::Degenerate("ridge_fit on zero rows".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("ridge_fit: non-finite input".into()));
    }
    let m = Moments::new(x, y);
    let coef = Spectrum::new(&m).coef(alpha);
    let intercept = &m.my - &m.mx.dot(&coef);
    Ok(RidgeFit { coef, intercept })
}

/// Cross-validated ridge score. For each fold the penalty `10^e` (e from
/// `exponents`) is chosen on an inner 80/20 split of the training rows, then
/// refitted on all training rows and scored on the test rows.
pub fn ridge_score(xsrc: &ActivationMatrix, ytgt: &ActivationMatrix, exponents: &[i32]) -> Result<AlignmentReport> {
    if exponents.is_empty() {
        return Err(Error::Parameter("ridge_score: empty alpha grid".into()));
    }
    check_shared_plan(xsrc, ytgt)?;
    if xsrc.data.iter().chain(ytgt.data.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("ridge_score: non-finite activations".into()));
    }
    let mut scores = Vec::with_capacity(xsrc.fold_plan.k);
    let mut alphas = Vec::with_capacity(xsrc.fold_plan.k);
    for fold in 0..xsrc.fold_plan.k {
        let blk = fold_blocks(xsrc, ytgt, fold)?;
        let n = blk.train_a.nrows();
        let (inner_val, inner_fit): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| i % 5 == 4);
        if inner_val.len() < 2 || inner_fit.len() < 2 {
            return Err(Error::Degenerate(format!(
                "fold {fold}: {n} training rows are too few for the inner split"
            )));
        }
        let fit_m = Moments::new(
            blk.train_a.select(Axis(0), &inner_fit).view(),
            blk.train_b.select(Axis(0), &inner_fit).view(),
        );
        let val_m = Moments::new(
            blk.train_a.select(Axis(0), &inner_val).view(),
            blk.train_b.select(Axis(0), &inner_val).view(),
        );
        let spectrum = Spectrum::new(&fit_m);
        let mut best: Option<(f64, f64)> = None;
        for &e in exponents {
            let alpha = 10f64.powi(e);
            let s = val_m.score(&spectrum.coef(alpha));
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((alpha, s));
            }
        }
        let (alpha, _) = best.expect("grid is non-empty");

        let train_m = Moments::new(blk.train_a.view(), blk.train_b.view());
        let coef = Spectrum::new(&train_m).coef(alpha);
        scores.push(Moments::new(blk.test_a.view(), blk.test_b.view()).score(&coef));
        alphas.push(Some(alpha));
    }
    Ok(AlignmentReport::new(
        Metric::Ridge,
        xsrc.source_tag,
        ytgt.source_tag,
        scores,
        alphas,
        (xsrc.pruned, ytgt.pruned),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::SourceTag;
    use crate::numerics::{kfold_split, pearson_view, FoldPlan, RngStream};

    fn gaussian(m: usize, n: usize, rng: &mut RngStream) -> Array2<f64> {
        Array2::from_shape_fn((m, n), |_| rng.gaussian())
    }

    fn act(data: Array2<f64>, tag: SourceTag, plan: &FoldPlan) -> ActivationMatrix {
        ActivationMatrix::new(data, tag, plan.clone()).unwrap()
    }

    /// Normal equations assembled entry by entry and solved by LU.
    fn normal_equations(x: &Array2<f64>, y: &Array2<f64>, alpha: f64) -> DMatrix<f64> {
        let (m, s) = x.dim();
        let t = y.ncols();
        let mean = |a: &Array2<f64>, j: usize| (0..m).map(|i| a[[i, j]]).sum::<f64>() / m as f64;
        let mx: Vec<f64> = (0..s).map(|j| mean(x, j)).collect();
        let my: Vec<f64> = (0..t).map(|j| mean(y, j)).collect();
        let lhs = DMatrix::from_fn(s, s, |a, b| {
            let g: f64 = (0..m).map(|i| (x[[i, a]] - mx[a]) * (x[[i, b]] - mx[b])).sum();
            g + if a == b { alpha } else { 0.0 }
        });
        let rhs = DMatrix::from_fn(s, t, |a, b| (0..m).map(|i| (x[[i, a]] - mx[a]) * (y[[i, b]] - my[b])).sum());
        lhs.lu().solve(&rhs).unwrap()
    }

    #[test]
    fn matches_normal_equations_oracle() {
        let mut rng = RngStream::new(20);
        for _ in 0..10 {
            let x = gaussian(30, 4, &mut rng);
            let y = gaussian(30, 3, &mut rng) + 2.0;
            for alpha in [1e-3, 0.5, 10.0] {
                let fit = ridge_fit(x.view(), y.view(), alpha).unwrap();
                let oracle = normal_equations(&x, &y, alpha);
                for i in 0..4 {
                    for j in 0..3 {
                        assert!((fit.coef[[i, j]] - oracle[(i, j)]).abs() < 1e-8);
                    }
                }
            }
        }
    }

    #[test]
    fn self_map_at_tiny_alpha() {
        let mut rng = RngStream::new(21);
        let x = gaussian(200, 5, &mut rng);
        let fit = ridge_fit(x.view(), x.view(), 1e-10).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((fit.coef[[i, j]] - e).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ols_limit() {
        let mut rng = RngStream::new(22);
        let x = gaussian(100, 4, &mut rng);
        let y = gaussian(100, 2, &mut rng);
        let fit = ridge_fit(x.view(), y.view(), 1e-10).unwrap();
        // least squares with an explicit intercept column, via SVD
        let design = DMatrix::from_fn(100, 5, |i, j| if j == 4 { 1.0 } else { x[[i, j]] });
        let target = DMatrix::from_fn(100, 2, |i, j| y[[i, j]]);
        let ols = design.svd(true, true).solve(&target, 1e-14).unwrap();
        for i in 0..4 {
            for j in 0..2 {
                assert!((fit.coef[[i, j]] - ols[(i, j)]).abs() < 1e-6);
            }
        }
        for j in 0..2 {
            assert!((fit.intercept[j] - ols[(4, j)]).abs() < 1e-6);
        }
    }

    #[test]
    fn infinite_shrinkage_predicts_means() {
        let mut rng = RngStream::new(23);
        let x = gaussian(50, 3, &mut rng);
        let y = gaussian(50, 2, &mut rng) * 3.0 + 1.5;
        let fit = ridge_fit(x.view(), y.view(), 1e14).unwrap();
        assert!(fit.coef.iter().all(|v| v.abs() < 1e-10));
        let means = y.mean_axis(Axis(0)).unwrap();
        for row in fit.predict(x.view()).rows() {
            for (p, m) in row.iter().zip(&means) {
                assert!((p - m).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_bad_alpha_and_input() {
        let x = Array2::<f64>::zeros((3, 2));
        assert!(matches!(ridge_fit(x.view(), x.view(), 0.0), Err(Error::Parameter(_))));
        assert!(matches!(ridge_fit(x.view(), x.view(), -1.0), Err(Error::Parameter(_))));
        let mut bad = x.clone();
        bad[[0, 0]] = f64::NAN;
        assert!(matches!(ridge_fit(bad.view(), x.view(), 1.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn moment_score_equals_prediction_correlation() {
        let mut rng = RngStream::new(24);
        let x = gaussian(80, 4, &mut rng);
        let y = x.dot(&gaussian(4, 3, &mut rng)) + gaussian(80, 3, &mut rng);
        let fit = ridge_fit(x.view(), y.view(), 2.0).unwrap();
        let pred = fit.predict(x.view());
        let direct: f64 = (0..3).map(|j| pearson_view(pred.column(j), y.column(j))).sum::<f64>() / 3.0;
        let moments = Moments::new(x.view(), y.view()).score(&fit.coef);
        assert!((direct - moments).abs() < 1e-12);
    }

    #[test]
    fn self_prediction_scores_one() {
        let mut rng = RngStream::new(25);
        let x = gaussian(1000, 6, &mut rng);
        let plan = kfold_split(1000, 5, &mut rng).unwrap();
        let grid: Vec<i32> = (-8..=8).collect();
        let r = ridge_score(
            &act(x.clone(), SourceTag::Neurons, &plan),
            &act(x, SourceTag::Neurons, &plan),
            &grid,
        )
        .unwrap();
        assert!(r.mean >= 0.999);
        assert_eq!(r.alpha_selected.len(), 5);
        assert!(r.alpha_selected.iter().all(|a| a.is_some()));
    }

    #[test]
    fn linear_generator_recovered_exactly() {
        // Yb = Z·Ab is an exact linear image of the sparse latents
        let mut rng = RngStream::new(26);
        let (m, f, n) = (2000, 12, 5);
        let z = Array2::from_shape_fn((m, f), |_| {
            if rng.uniform() < 0.2 { rng.uniform() } else { 0.0 }
        });
        let ab = gaussian(f, n, &mut rng);
        let yb = z.dot(&ab);
        let plan = kfold_split(m, 5, &mut rng).unwrap();
        let r = ridge_score(
            &act(z, SourceTag::SaeLatents, &plan),
            &act(yb, SourceTag::Neurons, &plan),
            &[-8, -4, 0, 4],
        )
        .unwrap();
        assert!(r.mean > 1.0 - 1e-9, "score {}", r.mean);
    }

    #[test]
    fn empty_grid_rejected() {
        let mut rng = RngStream::new(27);
        let plan = kfold_split(50, 5, &mut rng).unwrap();
        let a = act(gaussian(50, 2, &mut rng), SourceTag::Neurons, &plan);
        assert!(matches!(ridge_score(&a, &a, &[]), Err(Error::Parameter(_))));
    }

    #[test]
    fn independent_targets_score_low() {
        let mut rng = RngStream::new(28);
        let plan = kfold_split(5000, 5, &mut rng).unwrap();
        let x = act(gaussian(5000, 8, &mut rng), SourceTag::Neurons, &plan);
        let y = act(gaussian(5000, 8, &mut rng), SourceTag::Neurons, &plan);
        let r = ridge_score(&x, &y, &[-2, 0, 2, 4]).unwrap();
        assert!(r.mean.abs() < 0.1);
    }
}
