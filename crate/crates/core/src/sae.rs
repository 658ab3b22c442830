//! TopK sparse autoencoders.
//!
//! `z = TopK(W_enc·x + b_enc)`, `x̂ = W_dec·z + b_dec`, trained on
//! `L = L_mse + α_aux·L_aux`. The auxiliary term reconstructs the (detached)
//! residual `e = x − x̂` from the top-`k_aux` pre-activations of dead latents,
//! `ê = W_dec·z_dead + b_dec`, and is skipped when no latent is dead.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::numerics::RngStream;
use crate::optim::Adam;

#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    /// F_lat×N
    pub w_enc: Array2<f32>,
    pub b_enc: Array1<f32>,
    /// N×F_lat, unit-norm columns
    pub w_dec: Array2<f32>,
    pub b_dec: Array1<f32>,
    pub k: usize,
}

impl SaeModel {
    pub fn num_inputs(&self) -> usize {
        self.w_enc.ncols()
    }

    pub fn num_latents(&self) -> usize {
        self.w_enc.nrows()
    }

    fn params64(&self) -> SaeParams {
        SaeParams {
            w_enc: self.w_enc.mapv(f64::from),
            b_enc: self.b_enc.mapv(f64::from),
            w_dec: self.w_dec.mapv(f64::from),
            b_dec: self.b_dec.mapv(f64::from),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaeHyperParams {
    pub k: usize,
    /// Latent count; 0 means "same as the number of ground-truth features".
    pub num_latents: usize,
    pub lr: f64,
    pub alpha_aux: f64,
    /// Steps without firing after which a latent counts as dead.
    pub dead_steps: usize,
    /// 0 means "all latents".
    pub k_aux: usize,
    /// Passes over the activations; 0 leaves the choice to the experiment config.
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for SaeHyperParams {
    fn default() -> Self {
        Self {
            k: 7,
            num_latents: 0,
            lr: 1e-3,
            alpha_aux: 1e-1,
            dead_steps: 1,
            k_aux: 0,
            epochs: 0,
            batch_size: 1024,
        }
    }
}

/// f64 working copy of the SAE parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeParams {
    pub w_enc: Array2<f64>,
    pub b_enc: Array1<f64>,
    pub w_dec: Array2<f64>,
    pub b_dec: Array1<f64>,
}

impl SaeParams {
    fn len(&self) -> usize {
        self.w_enc.len() + self.b_enc.len() + self.w_dec.len() + self.b_dec.len()
    }

    fn pack_into(&self, out: &mut [f64]) {
        let it = self
            .w_enc
            .iter()
            .chain(self.b_enc.iter())
            .chain(self.w_dec.iter())
            .chain(self.b_dec.iter());
        for (o, v) in out.iter_mut().zip(it) {
            *o = *v;
        }
    }

    fn unpack_from(&mut self, src: &[f64]) {
        let it = self
            .w_enc
            .iter_mut()
            .chain(self.b_enc.iter_mut())
            .chain(self.w_dec.iter_mut())
            .chain(self.b_dec.iter_mut());
        for (v, s) in it.zip(src) {
            *v = *s;
        }
    }

    fn normalize_decoder(&mut self) {
        for mut col in self.w_dec.columns_mut() {
            let norm = col.dot(&col).sqrt();
            if norm > 0.0 {
                col.mapv_inplace(|v| v / norm);
            }
        }
    }

    fn to_model(&self, k: usize) -> SaeModel {
        SaeModel {
            w_enc: self.w_enc.mapv(|v| v as f32),
            b_enc: self.b_enc.mapv(|v| v as f32),
            w_dec: self.w_dec.mapv(|v| v as f32),
            b_dec: self.b_dec.mapv(|v| v as f32),
            k,
        }
    }
}

/// Fresh SAE: unit-norm Gaussian decoder columns, encoder = decoderᵀ,
/// zero encoder bias, decoder bias = `input_mean`.
pub fn init_sae(
    num_inputs: usize,
    num_latents: usize,
    k: usize,
    input_mean: ArrayView1<f64>,
    rng: &mut RngStream,
) -> Result<SaeModel> {
    if num_latents < num_inputs {
        return Err(Error::Parameter(format!(
            "SAE must be overcomplete: {num_latents} latents for {num_inputs} inputs"
        )));
    }
    if k == 0 || k > num_latents {
        return Err(Error::Parameter(format!("TopK k={k} outside [1, {num_latents}]")));
    }
    if input_mean.len() != num_inputs {
        return Err(dim_err("init_sae: input mean length"));
    }
    let mut p = SaeParams {
        w_enc: Array2::zeros((num_latents, num_inputs)),
        b_enc: Array1::zeros(num_latents),
        w_dec: Array2::from_shape_fn((num_inputs, num_latents), |_| rng.gaussian()),
        b_dec: input_mean.to_owned(),
    };
    p.normalize_decoder();
    p.w_enc = p.w_dec.t().to_owned();
    Ok(p.to_model(k))
}

/// Indices of the `k` largest entries, ties to the lower index.
pub fn topk_indices(a: ArrayView1<f64>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..a.len()).collect();
    let k = k.min(a.len());
    let cmp = |&i: &usize, &j: &usize| a[j].total_cmp(&a[i]).then(i.cmp(&j));
    if k < idx.len() {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

fn check_input(sae: &SaeModel, len: usize) -> Result<()> {
    if len != sae.num_inputs() {
        return Err(dim_err(format!(
            "SAE expects {} inputs, got {len}",
            sae.num_inputs()
        )));
    }
    Ok(())
}

fn pre_activations(sae: &SaeModel, x: &[f64]) -> Array1<f64> {
    let w = sae.w_enc.mapv(f64::from);
    w.dot(&ArrayView1::from(x)) + &sae.b_enc.mapv(f64::from)
}

/// TopK code of one input; kept entries are passed through unchanged (may be negative).
pub fn encode(sae: &SaeModel, x: &[f64]) -> Result<Vec<f64>> {
    check_input(sae, x.len())?;
    let a = pre_activations(sae, x);
    let mut z = vec![0.0; a.len()];
    for i in topk_indices(a.view(), sae.k) {
        z[i] = a[i];
    }
    Ok(z)
}

/// `ReLU(encode(x))`: the nonnegative code used for alignment.
pub fn latents_for_alignment(sae: &SaeModel, x: &[f64]) -> Result<Vec<f64>> {
    Ok(encode(sae, x)?.into_iter().map(|v| v.max(0.0)).collect())
}

pub fn decode(sae: &SaeModel, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != sae.num_latents() {
        return Err(dim_err(format!(
            "SAE has {} latents, got {}",
            sae.num_latents(),
            z.len()
        )));
    }
    let w = sae.w_dec.mapv(f64::from);
    Ok((w.dot(&ArrayView1::from(z)) + &sae.b_dec.mapv(f64::from)).to_vec())
}

fn topk_rows(a: &Array2<f64>, k: usize) -> Array2<f64> {
    let mut z = Array2::zeros(a.raw_dim());
    for (arow, mut zrow) in a.rows().into_iter().zip(z.rows_mut()) {
        for i in topk_indices(arow, k) {
            zrow[i] = arow[i];
        }
    }
    z
}

/// Batch of alignment latents, M×F_lat.
pub fn batch_latents(sae: &SaeModel, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_input(sae, x.ncols())?;
    let p = sae.params64();
    let mut out = Array2::zeros((x.nrows(), sae.num_latents()));
    const CHUNK: usize = 8192;
    let mut start = 0;
    while start < x.nrows() {
        let end = (start + CHUNK).min(x.nrows());
        let a = x.slice(ndarray::s![start..end, ..]).dot(&p.w_enc.t()) + &p.b_enc;
        let z = topk_rows(&a, sae.k).mapv(|v: f64| v.max(0.0));
        out.slice_mut(ndarray::s![start..end, ..]).assign(&z);
        start = end;
    }
    Ok(out)
}

/// Batch reconstruction `x̂` (uses the plain TopK code, as in training).
pub fn batch_reconstruct(sae: &SaeModel, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_input(sae, x.ncols())?;
    let p = sae.params64();
    let a = x.dot(&p.w_enc.t()) + &p.b_enc;
    Ok(topk_rows(&a, sae.k).dot(&p.w_dec.t()) + &p.b_dec)
}

/// Loss terms and gradients for one batch.
#[derive(Debug, Clone)]
pub struct SaeStep {
    pub mse: f64,
    pub aux: f64,
    pub grads: SaeParams,
    /// Latents that were nonzero for at least one row of the batch.
    pub fired: Vec<bool>,
}

impl SaeStep {
    pub fn total(&self, alpha_aux: f64) -> f64 {
        self.mse + alpha_aux * self.aux
    }
}

/// Auxiliary code: for each row, the top-`k_aux` pre-activations among dead latents.
fn dead_code(a: &Array2<f64>, dead: &[bool], k_aux: usize) -> Array2<f64> {
    let dead_idx: Vec<usize> = (0..dead.len()).filter(|&i| dead[i]).collect();
    let mut zd = Array2::zeros(a.raw_dim());
    if dead_idx.is_empty() {
        return zd;
    }
    for (arow, mut zrow) in a.rows().into_iter().zip(zd.rows_mut()) {
        let sub = Array1::from_iter(dead_idx.iter().map(|&i| arow[i]));
        for pos in topk_indices(sub.view(), k_aux) {
            let i = dead_idx[pos];
            zrow[i] = arow[i];
        }
    }
    zd
}

/// Auxiliary loss `(1/B) Σ ‖e − (W_dec z_dead + b_dec)‖²` for a fixed residual `e`.
pub fn aux_loss(p: &SaeParams, x: ArrayView2<f64>, resid: ArrayView2<f64>, dead: &[bool], k_aux: usize) -> f64 {
    if !dead.iter().any(|&d| d) {
        return 0.0;
    }
    let a = x.dot(&p.w_enc.t()) + &p.b_enc;
    let zd = dead_code(&a, dead, k_aux);
    let ehat = zd.dot(&p.w_dec.t()) + &p.b_dec;
    let r = &resid - &ehat;
    r.iter().map(|v| v * v).sum::<f64>() / x.nrows() as f64
}

pub fn mse_loss(p: &SaeParams, x: ArrayView2<f64>, k: usize) -> f64 {
    let a = x.dot(&p.w_enc.t()) + &p.b_enc;
    let xhat = topk_rows(&a, k).dot(&p.w_dec.t()) + &p.b_dec;
    let e = &x - &xhat;
    e.iter().map(|v| v * v).sum::<f64>() / x.nrows() as f64
}

pub fn sae_loss_grad(
    p: &SaeParams,
    x: ArrayView2<f64>,
    k: usize,
    dead: &[bool],
    k_aux: usize,
    alpha_aux: f64,
) -> SaeStep {
    let bsz = x.nrows() as f64;
    let a = x.dot(&p.w_enc.t()) + &p.b_enc;
    let z = topk_rows(&a, k);
    let xhat = z.dot(&p.w_dec.t()) + &p.b_dec;
    let e = &x - &xhat;
    let mse = e.iter().map(|v| v * v).sum::<f64>() / bsz;

    let fired: Vec<bool> = z
        .axis_iter(Axis(1))
        .map(|c| c.iter().any(|&v| v != 0.0))
        .collect();

    let d_xhat = e.mapv(|v| -2.0 * v / bsz);
    let mut g_wdec = d_xhat.t().dot(&z);
    let mut g_bdec = d_xhat.sum_axis(Axis(0));
    let mut d_a = d_xhat.dot(&p.w_dec);
    d_a.zip_mut_with(&z, |g, &zv| {
        if zv == 0.0 {
            *g = 0.0
        }
    });

    let mut aux = 0.0;
    if alpha_aux != 0.0 && dead.iter().any(|&d| d) {
        let zd = dead_code(&a, dead, k_aux);
        let ehat = zd.dot(&p.w_dec.t()) + &p.b_dec;
        let r = &e - &ehat;
        aux = r.iter().map(|v| v * v).sum::<f64>() / bsz;
        let d_ehat = r.mapv(|v| -2.0 * alpha_aux * v / bsz);
        g_wdec += &d_ehat.t().dot(&zd);
        g_bdec += &d_ehat.sum_axis(Axis(0));
        let mut d_ad = d_ehat.dot(&p.w_dec);
        d_ad.zip_mut_with(&zd, |g, &zv| {
            if zv == 0.0 {
                *g = 0.0
            }
        });
        d_a += &d_ad;
    }

    let g_wenc = d_a.t().dot(&x);
    let g_benc = d_a.sum_axis(Axis(0));
    SaeStep {
        mse,
        aux,
        grads: SaeParams {
            w_enc: g_wenc,
            b_enc: g_benc,
            w_dec: g_wdec,
            b_dec: g_bdec,
        },
        fired,
    }
}

/// Tracks how many optimizer steps each latent has gone without firing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeadLatentTracker {
    pub steps_since_fire: Vec<usize>,
    pub threshold: usize,
}

impl DeadLatentTracker {
    pub fn new(num_latents: usize, threshold: usize) -> Self {
        Self {
            steps_since_fire: vec![0; num_latents],
            threshold,
        }
    }

    pub fn dead_mask(&self) -> Vec<bool> {
        self.steps_since_fire
            .iter()
            .map(|&s| s >= self.threshold)
            .collect()
    }

    pub fn update(&mut self, fired: &[bool]) {
        for (s, &f) in self.steps_since_fire.iter_mut().zip(fired) {
            *s = if f { 0 } else { *s + 1 };
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaeLogRow {
    pub step: usize,
    pub mse: f64,
    pub aux: f64,
    pub dead_count: usize,
}

#[derive(Debug, Clone, Default)]
pub struct SaeTrainLog {
    pub rows: Vec<SaeLogRow>,
}

impl SaeTrainLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "mse", "aux", "dead_count"])?;
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                r.mse.to_string(),
                r.aux.to_string(),
                r.dead_count.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn train_sae(
    sae: &SaeModel,
    activations: ArrayView2<f64>,
    hp: &SaeHyperParams,
    rng: &mut RngStream,
) -> Result<(SaeModel, SaeTrainLog)> {
    check_input(sae, activations.ncols())?;
    if hp.batch_size == 0 || hp.epochs == 0 {
        return Err(Error::Parameter("SAE batch_size and epochs must be >= 1".into()));
    }
    if activations.nrows() == 0 {
        return Err(Error::Degenerate("no SAE training rows".into()));
    }
    let f_lat = sae.num_latents();
    let k_aux = if hp.k_aux == 0 { f_lat } else { hp.k_aux };
    let mut p = sae.params64();
    let mut opt = Adam::new(p.len(), hp.lr);
    let mut flat = vec![0.0; p.len()];
    let mut gflat = vec![0.0; p.len()];
    let mut tracker = DeadLatentTracker::new(f_lat, hp.dead_steps.max(1));
    let mut log = SaeTrainLog::default();
    let mut order: Vec<usize> = (0..activations.nrows()).collect();

    let mut step = 0;
    for _ in 0..hp.epochs {
        rng.shuffle(&mut order);
        for rows in order.chunks(hp.batch_size) {
            let batch = activations.select(Axis(0), rows);
            let dead = tracker.dead_mask();
            let res = sae_loss_grad(&p, batch.view(), sae.k, &dead, k_aux, hp.alpha_aux);
            let total = res.total(hp.alpha_aux);
            if !total.is_finite() {
                return Err(Error::Divergence {
                    step,
                    what: format!("SAE loss is {total}"),
                });
            }
            log.rows.push(SaeLogRow {
                step,
                mse: res.mse,
                aux: res.aux,
                dead_count: dead.iter().filter(|&&d| d).count(),
            });
            p.pack_into(&mut flat);
            res.grads.pack_into(&mut gflat);
            opt.step(&mut flat, &gflat);
            p.unpack_from(&flat);
            p.normalize_decoder();
            tracker.update(&res.fired);
            step += 1;
        }
    }
    Ok((p.to_model(sae.k), log))
}

/// Latents that never fire within one fold (all-zero columns).
pub fn dead_latents_on_fold(latents: ArrayView2<f64>) -> Vec<bool> {
    latents
        .axis_iter(Axis(1))
        .map(|c| c.iter().all(|&v| v == 0.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn random_sae(n: usize, f: usize, k: usize, seed: u64) -> SaeModel {
        let mut rng = RngStream::new(seed);
        let mut s = init_sae(n, f, k, Array1::zeros(n).view(), &mut rng).unwrap();
        s.b_enc = Array1::from_shape_fn(f, |_| 0.1 * rng.gaussian() as f32);
        s.w_enc = Array2::from_shape_fn((f, n), |_| rng.gaussian() as f32);
        s
    }

    #[test]
    fn topk_definition_and_ties() {
        assert_eq!(topk_indices(array![3.0, 1.0, 2.0].view(), 2), vec![0, 2]);
        assert_eq!(topk_indices(array![1.0, 5.0, 5.0, 5.0].view(), 2), vec![1, 2]);
        assert_eq!(topk_indices(array![0.0, 0.0].view(), 5), vec![0, 1]);
    }

    #[test]
    fn encode_examples() {
        let mut s = random_sae(3, 3, 2, 0);
        s.w_enc = Array2::zeros((3, 3));
        s.b_enc = array![3.0f32, 1.0, 2.0];
        assert_eq!(encode(&s, &[0.0; 3]).unwrap(), vec![3.0, 0.0, 2.0]);
        s.k = 3;
        assert_eq!(encode(&s, &[0.0; 3]).unwrap(), vec![3.0, 1.0, 2.0]);
        assert!(encode(&s, &[0.0; 2]).is_err());
    }

    #[test]
    fn encode_sparsity_bound() {
        let s = random_sae(5, 12, 3, 4);
        let mut rng = RngStream::new(1);
        for _ in 0..50 {
            let x: Vec<f64> = (0..5).map(|_| rng.gaussian()).collect();
            let z = encode(&s, &x).unwrap();
            assert!(z.iter().filter(|&&v| v != 0.0).count() <= 3);
        }
    }

    #[test]
    fn alignment_latents_clip_negatives() {
        let mut s = random_sae(3, 3, 3, 0);
        s.w_enc = Array2::zeros((3, 3));
        s.b_enc = array![3.0f32, 0.0, -2.0];
        assert_eq!(latents_for_alignment(&s, &[0.0; 3]).unwrap(), vec![3.0, 0.0, 0.0]);
        s.b_enc = array![-3.0f32, -1.0, -2.0];
        assert_eq!(latents_for_alignment(&s, &[0.0; 3]).unwrap(), vec![0.0; 3]);
        s.b_enc = array![1.0f32, 0.5, 2.0];
        assert_eq!(latents_for_alignment(&s, &[0.0; 3]).unwrap(), vec![1.0, 0.5, 2.0]);
    }

    #[test]
    fn decode_examples() {
        let mut s = random_sae(4, 6, 2, 3);
        s.b_dec = array![0.5f32, -1.0, 0.25, 2.0];
        let out = decode(&s, &[0.0; 6]).unwrap();
        assert_eq!(out, vec![0.5, -1.0, 0.25, 2.0]);
        let mut e = vec![0.0; 6];
        e[4] = 1.0;
        let out = decode(&s, &e).unwrap();
        for i in 0..4 {
            assert!((out[i] - f64::from(s.w_dec[[i, 4]]) - f64::from(s.b_dec[i])).abs() < 1e-12);
        }
        let mut rng = RngStream::new(9);
        let z: Vec<f64> = (0..6).map(|_| rng.gaussian()).collect();
        let out = decode(&s, &z).unwrap();
        for i in 0..4 {
            let mut v = f64::from(s.b_dec[i]);
            for j in 0..6 {
                v += f64::from(s.w_dec[[i, j]]) * z[j];
            }
            assert!((out[i] - v).abs() < 1e-10);
        }
        assert!(decode(&s, &[0.0; 5]).is_err());
    }

    #[test]
    fn batch_paths_agree_with_single() {
        let s = random_sae(4, 8, 3, 6);
        let mut rng = RngStream::new(2);
        let x = Array2::from_shape_fn((10, 4), |_| rng.gaussian());
        let lat = batch_latents(&s, x.view()).unwrap();
        for r in 0..10 {
            let single = latents_for_alignment(&s, &x.row(r).to_vec()).unwrap();
            for j in 0..8 {
                assert!((lat[[r, j]] - single[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn init_is_tied_and_unit_norm() {
        let mean = array![0.1, 0.2, 0.3];
        let s = init_sae(3, 5, 2, mean.view(), &mut RngStream::new(1)).unwrap();
        for j in 0..5 {
            let c = s.w_dec.column(j);
            let n: f32 = c.dot(&c);
            assert!((n - 1.0).abs() < 1e-6);
            for i in 0..3 {
                assert_eq!(s.w_enc[[j, i]], s.w_dec[[i, j]]);
            }
        }
        assert_eq!(s.b_dec, array![0.1f32, 0.2, 0.3]);
        assert!(init_sae(3, 2, 1, Array1::zeros(3).view(), &mut RngStream::new(1)).is_err());
        assert!(init_sae(3, 5, 6, Array1::zeros(3).view(), &mut RngStream::new(1)).is_err());
    }

    fn fd_check(alpha: f64, dead: &[bool]) -> f64 {
        let (n, f, k) = (2, 4, 2);
        let s = random_sae(n, f, k, 17);
        let p = s.params64();
        let x = array![[0.3, -0.7], [1.1, 0.4], [-0.5, 0.9]];
        let res = sae_loss_grad(&p, x.view(), k, dead, f, alpha);
        let base_resid = {
            let xh = batch_reconstruct(&s, x.view()).unwrap();
            &x - &xh
        };
        let objective = |q: &SaeParams| {
            mse_loss(q, x.view(), k) + alpha * aux_loss(q, x.view(), base_resid.view(), dead, f)
        };
        let mut flat = vec![0.0; p.len()];
        p.pack_into(&mut flat);
        let mut gflat = vec![0.0; p.len()];
        res.grads.pack_into(&mut gflat);
        let h = 1e-6;
        let mut num = vec![0.0; p.len()];
        for i in 0..flat.len() {
            let mut q = p.clone();
            let mut fp = flat.clone();
            fp[i] += h;
            q.unpack_from(&fp);
            let lp = objective(&q);
            fp[i] -= 2.0 * h;
            q.unpack_from(&fp);
            let lm = objective(&q);
            num[i] = (lp - lm) / (2.0 * h);
        }
        let diff: f64 = num.iter().zip(&gflat).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt();
        diff / scale
    }

    #[test]
    fn gradient_matches_finite_differences_without_aux() {
        let rel = fd_check(0.0, &[false; 4]);
        assert!(rel < 1e-5, "relative error {rel}");
    }

    #[test]
    fn gradient_matches_finite_differences_with_aux() {
        let rel = fd_check(0.1, &[false, true, false, true]);
        assert!(rel < 1e-5, "relative error {rel}");
    }

    #[test]
    fn aux_leaves_live_encoder_rows_alone() {
        let s = random_sae(3, 6, 2, 5);
        let p = s.params64();
        let mut rng = RngStream::new(3);
        let x = Array2::from_shape_fn((16, 3), |_| rng.gaussian());
        let dead = [false, true, false, false, true, false];
        let with = sae_loss_grad(&p, x.view(), 2, &dead, 6, 0.1);
        let without = sae_loss_grad(&p, x.view(), 2, &dead, 6, 0.0);
        for j in [0, 2, 3, 5] {
            for i in 0..3 {
                let d = with.grads.w_enc[[j, i]] - without.grads.w_enc[[j, i]];
                assert!(d.abs() < 1e-15);
            }
        }
        let none = sae_loss_grad(&p, x.view(), 2, &[false; 6], 6, 0.1);
        assert_eq!(none.aux, 0.0);
        assert_eq!(none.grads, without.grads);
    }

    #[test]
    fn tracker_marks_dead_after_threshold() {
        let mut t = DeadLatentTracker::new(3, 2);
        assert_eq!(t.dead_mask(), vec![false; 3]);
        t.update(&[true, false, false]);
        assert_eq!(t.dead_mask(), vec![false; 3]);
        t.update(&[false, false, true]);
        assert_eq!(t.dead_mask(), vec![false, true, false]);
    }

    #[test]
    fn training_beats_mean_predictor_and_keeps_unit_decoder() {
        // activations from a sparse dictionary of 8 directions in 4 dimensions
        let mut rng = RngStream::new(10);
        let dict = Array2::from_shape_fn((8, 4), |_| rng.gaussian());
        let gen = |m: usize, rng: &mut RngStream| {
            Array2::from_shape_fn((m, 8), |_| {
                if rng.uniform() < 0.15 {
                    rng.uniform()
                } else {
                    0.0
                }
            })
            .dot(&dict)
        };
        let train = gen(20_000, &mut rng);
        let test = gen(2_000, &mut rng);
        let mean = train.mean_axis(Axis(0)).unwrap();
        let sae = init_sae(4, 8, 2, mean.view(), &mut rng).unwrap();
        let hp = SaeHyperParams {
            k: 2,
            num_latents: 8,
            lr: 5e-3,
            batch_size: 128,
            epochs: 2,
            ..Default::default()
        };
        let (trained, log) = train_sae(&sae, train.view(), &hp, &mut rng).unwrap();
        assert_eq!(log.rows.len(), 2 * 20_000usize.div_ceil(128));
        for c in trained.w_dec.mapv(f64::from).columns() {
            assert!((c.dot(&c).sqrt() - 1.0).abs() < 1e-6);
        }
        let recon = batch_reconstruct(&trained, test.view()).unwrap();
        let mse: f64 = (&test - &recon).iter().map(|v| v * v).sum::<f64>() / 2000.0;
        let base: f64 = (&test - &mean).iter().map(|v| v * v).sum::<f64>() / 2000.0;
        assert!(mse < base, "sae mse {mse} vs mean predictor {base}");

        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,mse,aux,dead_count\n"));
        assert_eq!(text.lines().count(), log.rows.len() + 1);
    }

    #[test]
    fn decoder_unit_norm_after_every_step() {
        let mut rng = RngStream::new(12);
        let x = Array2::from_shape_fn((64, 3), |_| rng.gaussian());
        let mut sae = init_sae(3, 6, 2, Array1::zeros(3).view(), &mut rng).unwrap();
        let hp = SaeHyperParams {
            k: 2,
            num_latents: 6,
            batch_size: 16,
            lr: 0.05,
            epochs: 1,
            ..Default::default()
        };
        for _ in 0..3 {
            let (next, _) = train_sae(&sae, x.view(), &hp, &mut rng).unwrap();
            let w = next.w_dec.mapv(f64::from);
            for c in w.columns() {
                assert!((c.dot(&c) - 1.0).abs() < 1e-6);
            }
            sae = next;
        }
        let p = sae.params64();
        let mut q = p.clone();
        q.w_dec *= 3.0;
        q.normalize_decoder();
        for c in q.w_dec.columns() {
            assert!((c.dot(&c).sqrt() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn dead_on_fold_definition() {
        let l = array![[0.0, 1.0, 0.0], [0.0, 0.0, 0.0]];
        assert_eq!(dead_latents_on_fold(l.view()), vec![true, false, true]);
    }
}
