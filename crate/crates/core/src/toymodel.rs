//! Tied-weight ReLU autoencoders `ẑ = W·ReLU(Wᵀz) + b_dec` trained with an
//! importance-weighted reconstruction loss (optionally with a ReLU on the
//! output, as in the classic toy models of superposition), plus the weight-space analyses
//! used to inspect superposition: per-feature norms, features shared by two
//! models, and how the shared features are arranged over neurons.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::datagen::FeatureDataset;
use crate::error::{dim_err, Error, Result};
use crate::numerics::{cross_corr_matrix, RngStream};
use crate::optim::Adam;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    /// F×N; row i is feature i's embedding, column j is neuron j's mixing weights.
    pub w: Array2<f32>,
    pub b_dec: Array1<f32>,
    pub seed: u64,
    /// Rectify the reconstruction: `ẑ = ReLU(W·ReLU(Wᵀz) + b_dec)`.
    pub output_relu: bool,
}

impl ToyModel {
    pub fn num_features(&self) -> usize {
        self.w.nrows()
    }

    pub fn num_neurons(&self) -> usize {
        self.w.ncols()
    }

    fn w64(&self) -> Array2<f64> {
        self.w.mapv(f64::from)
    }

    fn b64(&self) -> Array1<f64> {
        self.b_dec.mapv(f64::from)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyTrainConfig {
    pub batch_size: usize,
    /// Passes over the dataset; 0 leaves the choice to the experiment config.
    pub epochs: usize,
    pub lr: f64,
    pub output_relu: bool,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            epochs: 0,
            lr: 1e-3,
            output_relu: true,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ToyTrainLog {
    /// Pre-update loss of every batch.
    pub losses: Vec<f64>,
    /// Loss of the untrained model on the final batch.
    pub initial_heldout_loss: f64,
    /// Loss of the trained model on the final batch, measured before it was used for an update.
    pub final_heldout_loss: f64,
}

pub fn init_toy(f: usize, n: usize, rng: &mut RngStream) -> Result<ToyModel> {
    if n == 0 || n >= f {
        return Err(Error::Parameter(format!(
            "toy model needs 0 < N < F, got N={n}, F={f}"
        )));
    }
    let scale = 1.0 / (n as f64).sqrt();
    let w = Array2::from_shape_fn((f, n), |_| rng.uniform_range(-scale, scale) as f32);
    Ok(ToyModel {
        w,
        b_dec: Array1::zeros(f),
        seed: rng.seed(),
        output_relu: true,
    })
}

/// Hidden activations and reconstruction for one input.
pub fn forward_toy(model: &ToyModel, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if z.len() != model.num_features() {
        return Err(dim_err(format!(
            "forward_toy: input has {} features, model has {}",
            z.len(),
            model.num_features()
        )));
    }
    let w = model.w64();
    let h = w.t().dot(&ArrayView1::from(z)).mapv(|v| v.max(0.0));
    let mut zhat = w.dot(&h) + &model.b64();
    if model.output_relu {
        zhat.mapv_inplace(|v| v.max(0.0));
    }
    Ok((h.to_vec(), zhat.to_vec()))
}

/// M×N hidden-layer activations for a block of feature rows.
pub fn hidden_activations(model: &ToyModel, z: ArrayView2<f32>) -> Result<Array2<f64>> {
    if z.ncols() != model.num_features() {
        return Err(dim_err(format!(
            "hidden_activations: {} columns vs {} features",
            z.ncols(),
            model.num_features()
        )));
    }
    let w = model.w64();
    let mut out = Array2::<f64>::zeros((z.nrows(), model.num_neurons()));
    const CHUNK: usize = 8192;
    let mut start = 0;
    while start < z.nrows() {
        let end = (start + CHUNK).min(z.nrows());
        let block = z.slice(s![start..end, ..]).mapv(f64::from);
        let h = block.dot(&w).mapv(|v| v.max(0.0));
        out.slice_mut(s![start..end, ..]).assign(&h);
        start = end;
    }
    Ok(out)
}

/// Importance-weighted loss `(1/B) Σ_i Tᵀ(z_i − ẑ_i)²` with its gradients.
pub fn toy_loss_grad(
    w: &Array2<f64>,
    b: &Array1<f64>,
    batch: ArrayView2<f64>,
    importance: ArrayView1<f64>,
    output_relu: bool,
) -> (f64, Array2<f64>, Array1<f64>) {
    let bsz = batch.nrows() as f64;
    let pre = batch.dot(w);
    let h = pre.mapv(|v| v.max(0.0));
    let out = h.dot(&w.t()) + b;
    let mut resid = if output_relu { out.mapv(|v| v.max(0.0)) } else { out.clone() };
    resid -= &batch;
    let loss = resid
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(importance).map(|(e, t)| t * e * e).sum::<f64>())
        .sum::<f64>()
        / bsz;

    // dL/dẑ
    let mut g = resid;
    for mut row in g.rows_mut() {
        row.zip_mut_with(&importance, |e, &t| *e *= 2.0 * t / bsz);
    }
    if output_relu {
        g.zip_mut_with(&out, |d, &o| {
            if o <= 0.0 {
                *d = 0.0
            }
        });
    }
    let gb = g.sum_axis(Axis(0));
    let mut dh = g.dot(w);
    dh.zip_mut_with(&pre, |d, &p| {
        if p <= 0.0 {
            *d = 0.0
        }
    });
    let gw = g.t().dot(&h) + batch.t().dot(&dh);
    (loss, gw, gb)
}

pub fn toy_loss(
    w: &Array2<f64>,
    b: &Array1<f64>,
    batch: ArrayView2<f64>,
    importance: ArrayView1<f64>,
    output_relu: bool,
) -> f64 {
    let h = batch.dot(w).mapv(|v| v.max(0.0));
    let mut out = h.dot(&w.t()) + b;
    if output_relu {
        out.mapv_inplace(|v| v.max(0.0));
    }
    let resid = out - batch;
    resid
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(importance).map(|(e, t)| t * e * e).sum::<f64>())
        .sum::<f64>()
        / batch.nrows() as f64
}

pub fn train_toy(
    model: &ToyModel,
    data: &FeatureDataset,
    cfg: &ToyTrainConfig,
) -> Result<(ToyModel, ToyTrainLog)> {
    let importance = data
        .importance
        .as_ref()
        .ok_or_else(|| Error::Parameter("dataset has no task importance vector".into()))?;
    if data.num_features() != model.num_features() {
        return Err(dim_err(format!(
            "train_toy: dataset F={} vs model F={}",
            data.num_features(),
            model.num_features()
        )));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Parameter("batch_size and epochs must be >= 1".into()));
    }
    let m = data.num_rows();
    let (f, n) = (model.num_features(), model.num_neurons());
    let mut w = model.w64();
    let mut b = model.b64();
    let mut opt = Adam::new(f * n + f, cfg.lr);
    let mut params = vec![0.0; f * n + f];
    let mut grads = vec![0.0; f * n + f];

    let batches: Vec<(usize, usize)> = (0..m)
        .step_by(cfg.batch_size)
        .map(|s| (s, (s + cfg.batch_size).min(m)))
        .collect();
    let (ls, le) = *batches.last().expect("dataset has at least one row");
    let last_batch = data.z.slice(s![ls..le, ..]).mapv(f64::from);

    let mut log = ToyTrainLog {
        initial_heldout_loss: toy_loss(&w, &b, last_batch.view(), importance.view(), model.output_relu),
        ..Default::default()
    };

    let mut step = 0;
    for epoch in 0..cfg.epochs {
        for (bi, &(start, end)) in batches.iter().enumerate() {
            let batch = data.z.slice(s![start..end, ..]).mapv(f64::from);
            let (loss, gw, gb) = toy_loss_grad(&w, &b, batch.view(), importance.view(), model.output_relu);
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    step,
                    what: format!("toy model loss is {loss}"),
                });
            }
            if epoch + 1 == cfg.epochs && bi == batches.len() - 1 {
                log.final_heldout_loss = loss;
            }
            log.losses.push(loss);

            pack(&w, &b, &mut params);
            pack(&gw, &gb, &mut grads);
            opt.step(&mut params, &grads);
            unpack(&params, &mut w, &mut b);
            step += 1;
        }
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            step,
            what: "non-finite toy weights".into(),
        });
    }
    Ok((
        ToyModel {
            w: w.mapv(|v| v as f32),
            b_dec: b.mapv(|v| v as f32),
            seed: model.seed,
            output_relu: model.output_relu,
        },
        log,
    ))
}

fn pack(w: &Array2<f64>, b: &Array1<f64>, out: &mut [f64]) {
    let nw = w.len();
    for (o, v) in out[..nw].iter_mut().zip(w.iter()) {
        *o = *v;
    }
    for (o, v) in out[nw..].iter_mut().zip(b.iter()) {
        *o = *v;
    }
}

fn unpack(params: &[f64], w: &mut Array2<f64>, b: &mut Array1<f64>) {
    let nw = w.len();
    for (v, p) in w.iter_mut().zip(&params[..nw]) {
        *v = *p;
    }
    for (v, p) in b.iter_mut().zip(&params[nw..]) {
        *v = *p;
    }
}

/// Euclidean norm of each feature's row of W.
pub fn feature_norms(model: &ToyModel) -> Vec<f64> {
    model
        .w
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharedFeatureSet {
    pub indices: Vec<usize>,
    pub norm_products: Vec<f64>,
}

pub const DEFAULT_SHARED_THRESHOLD: f64 = 1.0;

/// Features whose norm product across the two models reaches `threshold`.
pub fn shared_features(m1: &ToyModel, m2: &ToyModel, threshold: f64) -> Result<SharedFeatureSet> {
    if m1.num_features() != m2.num_features() {
        return Err(dim_err(format!(
            "shared_features: F={} vs F={}",
            m1.num_features(),
            m2.num_features()
        )));
    }
    let (mut indices, mut norm_products) = (Vec::new(), Vec::new());
    for (i, (a, b)) in feature_norms(m1).into_iter().zip(feature_norms(m2)).enumerate() {
        let prod = a * b;
        if prod >= threshold {
            indices.push(i);
            norm_products.push(prod);
        }
    }
    Ok(SharedFeatureSet {
        indices,
        norm_products,
    })
}

/// For each neuron of `m1`, the best Pearson correlation between its weights
/// over the shared features and any neuron of `m2`.
pub fn arrangement_similarity(
    m1: &ToyModel,
    m2: &ToyModel,
    shared: &SharedFeatureSet,
) -> Result<Vec<f64>> {
    if shared.indices.len() < 2 {
        return Err(Error::Degenerate(format!(
            "arrangement similarity needs >= 2 shared features, got {}",
            shared.indices.len()
        )));
    }
    if m1.num_features() != m2.num_features() {
        return Err(dim_err("arrangement_similarity: feature counts differ"));
    }
    let ws1 = m1.w.select(Axis(0), &shared.indices).mapv(f64::from);
    let ws2 = m2.w.select(Axis(0), &shared.indices).mapv(f64::from);
    let c = cross_corr_matrix(ws1.view(), ws2.view())?;
    Ok(c
        .rows()
        .into_iter()
        .map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect())
}
