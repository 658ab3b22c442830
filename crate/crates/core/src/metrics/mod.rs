//! Alignment metrics between two activation matrices recorded on the same
//! stimuli: semi-matching, soft-matching (exact optimal transport), the
//! permutation score, and cross-validated ridge regression.

pub mod assignment;
pub mod matching;
pub mod report;
pub mod ridge;
pub mod transport;

use std::fmt;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::numerics::FoldPlan;
use crate::sae::dead_latents_on_fold;

pub use matching::{perm_score, perm_score_from_corr, semi_match_assign, semi_match_score, soft_match_score};
pub use report::{AlignmentReport, Metric};
pub use ridge::{ridge_fit, ridge_score, RidgeFit};
pub use transport::{soft_match_plan, TransportPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Neurons,
    SaeLatents,
    RandSaeLatents,
}

impl SourceTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceTag::Neurons => "neurons",
            SourceTag::SaeLatents => "sae_latents",
            SourceTag::RandSaeLatents => "rand_sae_latents",
        }
    }

    /// Short label used in chart legends.
    pub fn short(self) -> &'static str {
        match self {
            SourceTag::Neurons => "Neuron",
            SourceTag::SaeLatents => "SAE",
            SourceTag::RandSaeLatents => "RandSAE",
        }
    }
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SourceTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neurons" => Ok(SourceTag::Neurons),
            "sae_latents" => Ok(SourceTag::SaeLatents),
            "rand_sae_latents" => Ok(SourceTag::RandSaeLatents),
            other => Err(Error::Format(format!("unknown source tag `{other}`"))),
        }
    }
}

/// M×S activations (neurons or latents) with the fold plan they are scored under.
#[derive(Debug, Clone)]
pub struct ActivationMatrix {
    pub data: Array2<f64>,
    pub source_tag: SourceTag,
    pub fold_plan: FoldPlan,
    /// Columns removed by [`prune_dead_latents`].
    pub pruned: usize,
}

impl ActivationMatrix {
    pub fn new(data: Array2<f64>, source_tag: SourceTag, fold_plan: FoldPlan) -> Result<Self> {
        if data.nrows() != fold_plan.num_rows {
            return Err(dim_err(format!(
                "activation rows {} vs fold plan rows {}",
                data.nrows(),
                fold_plan.num_rows
            )));
        }
        Ok(Self {
            data,
            source_tag,
            fold_plan,
            pruned: 0,
        })
    }

    pub fn num_units(&self) -> usize {
        self.data.ncols()
    }
}

/// Drops every column that is all-zero on the rows of at least one fold.
pub fn prune_dead_latents(act: &ActivationMatrix) -> Result<ActivationMatrix> {
    let mut dead = vec![false; act.num_units()];
    for fold in 0..act.fold_plan.k {
        let rows = act.fold_plan.test_rows(fold);
        let block = act.data.select(Axis(0), &rows);
        for (d, fold_dead) in dead.iter_mut().zip(dead_latents_on_fold(block.view())) {
            *d |= fold_dead;
        }
    }
    let keep: Vec<usize> = (0..dead.len()).filter(|&j| !dead[j]).collect();
    if keep.is_empty() {
        return Err(Error::Degenerate(format!(
            "all {} {} columns are dead in some fold",
            dead.len(),
            act.source_tag
        )));
    }
    Ok(ActivationMatrix {
        data: act.data.select(Axis(1), &keep),
        source_tag: act.source_tag,
        fold_plan: act.fold_plan.clone(),
        pruned: act.pruned + dead.len() - keep.len(),
    })
}

pub(crate) fn check_shared_plan(a: &ActivationMatrix, b: &ActivationMatrix) -> Result<()> {
    if a.fold_plan != b.fold_plan {
        return Err(dim_err("activation matrices use different fold plans"));
    }
    Ok(())
}
