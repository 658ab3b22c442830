//! Matching-based alignment: semi-matching, soft-matching and the
//! permutation score.

use ndarray::{Array2, ArrayView2, Axis};

use super::report::{AlignmentReport, Metric};
use super::{check_shared_plan, ActivationMatrix};
use crate::error::{dim_err, Error, Result};
use crate::metrics::assignment::max_assignment;
use crate::metrics::transport::soft_match_plan;
use crate::numerics::{cross_corr_matrix, pearson_view};

/// Best target column for each source row of a correlation matrix; ties go to
/// the lowest column index. Many-to-one matches are allowed.
pub fn semi_match_assign(c_train: ArrayView2<f64>) -> Vec<usize> {
    c_train
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub(crate) struct FoldBlocks {
    pub train_a: Array2<f64>,
    pub test_a: Array2<f64>,
    pub train_b: Array2<f64>,
    pub test_b: Array2<f64>,
}

pub(crate) fn fold_blocks(a: &ActivationMatrix, b: &ActivationMatrix, fold: usize) -> Result<FoldBlocks> {
    let plan = &a.fold_plan;
    let test = plan.test_rows(fold);
    let train = plan.train_rows(fold);
    if test.len() < 2 || train.len() < 2 {
        return Err(Error::Degenerate(format!(
            "fold {fold} has {} train and {} test rows; need at least 2 of each",
            train.len(),
            test.len()
        )));
    }
    Ok(FoldBlocks {
        train_a: a.data.select(Axis(0), &train),
        test_a: a.data.select(Axis(0), &test),
        train_b: b.data.select(Axis(0), &train),
        test_b: b.data.select(Axis(0), &test),
    })
}

fn per_fold<F>(ya: &ActivationMatrix, yb: &ActivationMatrix, mut score: F) -> Result<Vec<f64>>
where
    F: FnMut(&FoldBlocks) -> Result<f64>,
{
    check_shared_plan(ya, yb)?;
    (0..ya.fold_plan.k)
        .map(|fold| score(&fold_blocks(ya, yb, fold)?))
        .collect()
}

/// Each source unit is matched to its best train-fold target; the score is
/// the mean test-fold correlation of the matched pairs.
pub fn semi_match_score(ya: &ActivationMatrix, yb: &ActivationMatrix) -> Result<AlignmentReport> {
    let scores = per_fold(ya, yb, |blk| {
        let c = cross_corr_matrix(blk.train_a.view(), blk.train_b.view())?;
        let assign = semi_match_assign(c.view());
        let total: f64 = assign
            .iter()
            .enumerate()
            .map(|(i, &j)| pearson_view(blk.test_a.column(i), blk.test_b.column(j)))
            .sum();
        Ok(total / assign.len() as f64)
    })?;
    Ok(AlignmentReport::from_matching(Metric::SemiMatch, ya, yb, scores))
}

/// Transport plan fitted on train-fold correlations, evaluated as
/// `Σ P_ij · corr_test(i, j)`. The plan carries unit total mass, so a perfect
/// match scores 1 without further scaling.
pub fn soft_match_score(ya: &ActivationMatrix, yb: &ActivationMatrix) -> Result<AlignmentReport> {
    let scores = per_fold(ya, yb, |blk| {
        let c_train = cross_corr_matrix(blk.train_a.view(), blk.train_b.view())?;
        let plan = soft_match_plan(c_train.view())?;
        let c_test = cross_corr_matrix(blk.test_a.view(), blk.test_b.view())?;
        Ok(plan.objective(c_test.view()))
    })?;
    Ok(AlignmentReport::from_matching(Metric::SoftMatch, ya, yb, scores))
}

/// Mean correlation under the best one-to-one matching of a square
/// correlation matrix.
pub fn perm_score_from_corr(c: ArrayView2<f64>) -> Result<f64> {
    let (n, m) = c.dim();
    if n != m {
        return Err(dim_err(format!("permutation score needs a square matrix, got {n}x{m}")));
    }
    if n == 0 {
        return Err(Error::Degenerate("permutation score of zero units".into()));
    }
    let assign = max_assignment(c)?;
    Ok(assign.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum::<f64>() / n as f64)
}

/// In-sample permutation score between two equally sized populations.
pub fn perm_score(ya: ArrayView2<f64>, yb: ArrayView2<f64>) -> Result<f64> {
    if ya.ncols() != yb.ncols() {
        return Err(dim_err(format!(
            "perm_score needs equal unit counts, got {} and {}",
            ya.ncols(),
            yb.ncols()
        )));
    }
    perm_score_from_corr(cross_corr_matrix(ya, yb)?.view())
}
