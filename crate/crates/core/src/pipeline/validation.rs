use ndarray::{Array2, ArrayView2};

use crate::error::Result;
use crate::numerics::cross_corr_matrix;
use crate::sae::{batch_latents, SaeModel};
use crate::toymodel::{hidden_activations, ToyModel};

/// Per ground-truth feature, its best correlation with any neuron and with
/// any SAE latent on the holdout rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DisentanglementTable {
    pub neuron_max: Vec<f64>,
    pub latent_max: Vec<f64>,
    pub neuron_mean: f64,
    pub latent_mean: f64,
}

fn row_max(c: &Array2<f64>) -> Vec<f64> {
    c.rows()
        .into_iter()
        .map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `holdout` holds the feature rows the SAE never saw.
pub fn validate_disentanglement(
    holdout: ArrayView2<f32>,
    model: &ToyModel,
    sae: &SaeModel,
) -> Result<DisentanglementTable> {
    let z = holdout.mapv(f64::from);
    let h = hidden_activations(model, holdout)?;
    let lat = batch_latents(sae, h.view())?;
    let neuron_max = row_max(&cross_corr_matrix(z.view(), h.view())?);
    let latent_max = row_max(&cross_corr_matrix(z.view(), lat.view())?);
    Ok(DisentanglementTable {
        neuron_mean: mean(&neuron_max),
        latent_mean: mean(&latent_max),
        neuron_max,
        latent_max,
    })
}
