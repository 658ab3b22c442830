//! Binary checkpoints. Layout, all little-endian:
//!
//! ```text
//! "SPAL1"  kind:u8  seed:u64  config_hash:u64
//! n_scalars:u32  scalars:f64 × n_scalars
//! n_tensors:u32  per tensor: ndims:u32  dims:u64 × ndims
//! payload: every tensor's f32 values, row-major, in header order
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::datagen::FeatureDataset;
use crate::error::{Error, Result};
use crate::sae::SaeModel;
use crate::toymodel::ToyModel;

const MAGIC: &[u8; 5] = b"SPAL1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Dataset = 0,
    ToyModel = 1,
    Sae = 2,
}

impl CheckpointKind {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Self::Dataset),
            1 => Ok(Self::ToyModel),
            2 => Ok(Self::Sae),
            other => Err(Error::Format(format!("unknown checkpoint kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    fn from_matrix(m: &Array2<f32>) -> Self {
        Tensor {
            dims: vec![m.nrows(), m.ncols()],
            data: m.iter().copied().collect(),
        }
    }

    fn from_vector(v: &Array1<f32>) -> Self {
        Tensor {
            dims: vec![v.len()],
            data: v.to_vec(),
        }
    }

    fn to_matrix(&self) -> Result<Array2<f32>> {
        match self.dims[..] {
            [r, c] => Array2::from_shape_vec((r, c), self.data.clone()).map_err(|e| Error::Format(e.to_string())),
            _ => Err(Error::Format(format!("expected a matrix, got dims {:?}", self.dims))),
        }
    }

    fn to_vector(&self) -> Result<Array1<f32>> {
        match self.dims[..] {
            [_] => Ok(Array1::from(self.data.clone())),
            _ => Err(Error::Format(format!("expected a vector, got dims {:?}", self.dims))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub seed: u64,
    pub config_hash: u64,
    pub scalars: Vec<f64>,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_dataset(d: &FeatureDataset, seed: u64, config_hash: u64) -> Self {
        Checkpoint {
            kind: CheckpointKind::Dataset,
            seed,
            config_hash,
            scalars: vec![d.p],
            tensors: vec![Tensor::from_matrix(&d.z)],
        }
    }

    pub fn from_toy(m: &ToyModel, config_hash: u64) -> Self {
        Checkpoint {
            kind: CheckpointKind::ToyModel,
            seed: m.seed,
            config_hash,
            scalars: vec![if m.output_relu { 1.0 } else { 0.0 }],
            tensors: vec![Tensor::from_matrix(&m.w), Tensor::from_vector(&m.b_dec)],
        }
    }

    pub fn from_sae(s: &SaeModel, seed: u64, config_hash: u64) -> Self {
        Checkpoint {
            kind: CheckpointKind::Sae,
            seed,
            config_hash,
            scalars: vec![s.k as f64],
            tensors: vec![
                Tensor::from_matrix(&s.w_enc),
                Tensor::from_vector(&s.b_enc),
                Tensor::from_matrix(&s.w_dec),
                Tensor::from_vector(&s.b_dec),
            ],
        }
    }

    fn expect(&self, kind: CheckpointKind, scalars: usize, tensors: usize) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!("expected a {kind:?} checkpoint, found {:?}", self.kind)));
        }
        if self.scalars.len() != scalars || self.tensors.len() != tensors {
            return Err(Error::Format(format!(
                "{kind:?} checkpoint has {} scalars and {} tensors",
                self.scalars.len(),
                self.tensors.len()
            )));
        }
        Ok(())
    }

    /// Dataset without its importance vector; call `with_importance` to restore it.
    pub fn to_dataset(&self) -> Result<FeatureDataset> {
        self.expect(CheckpointKind::Dataset, 1, 1)?;
        Ok(FeatureDataset {
            z: self.tensors[0].to_matrix()?,
            p: self.scalars[0],
            importance: None,
        })
    }

    pub fn to_toy(&self) -> Result<ToyModel> {
        self.expect(CheckpointKind::ToyModel, 1, 2)?;
        let output_relu = match self.scalars[0] {
            0.0 => false,
            1.0 => true,
            v => return Err(Error::Format(format!("invalid toy output flag {v}"))),
        };
        let w = self.tensors[0].to_matrix()?;
        let b_dec = self.tensors[1].to_vector()?;
        if b_dec.len() != w.nrows() {
            return Err(Error::Format("toy model bias length does not match W".into()));
        }
        Ok(ToyModel {
            w,
            b_dec,
            seed: self.seed,
            output_relu,
        })
    }

    pub fn to_sae(&self) -> Result<SaeModel> {
        self.expect(CheckpointKind::Sae, 1, 4)?;
        let k = self.scalars[0];
        if !(k >= 1.0 && k.fract() == 0.0) {
            return Err(Error::Format(format!("invalid SAE k {k}")));
        }
        let sae = SaeModel {
            w_enc: self.tensors[0].to_matrix()?,
            b_enc: self.tensors[1].to_vector()?,
            w_dec: self.tensors[2].to_matrix()?,
            b_dec: self.tensors[3].to_vector()?,
            k: k as usize,
        };
        let (lat, n) = sae.w_enc.dim();
        if sae.b_enc.len() != lat || sae.w_dec.dim() != (n, lat) || sae.b_dec.len() != n || sae.k > lat {
            return Err(Error::Format("SAE tensor shapes are inconsistent".into()));
        }
        Ok(sae)
    }
}

pub fn encode_checkpoint(ck: &Checkpoint, out: &mut impl Write) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&[ck.kind as u8])?;
    out.write_all(&ck.seed.to_le_bytes())?;
    out.write_all(&ck.config_hash.to_le_bytes())?;
    out.write_all(&(ck.scalars.len() as u32).to_le_bytes())?;
    for s in &ck.scalars {
        out.write_all(&s.to_le_bytes())?;
    }
    out.write_all(&(ck.tensors.len() as u32).to_le_bytes())?;
    for t in &ck.tensors {
        if t.dims.iter().product::<usize>() != t.data.len() {
            return Err(Error::Format(format!("tensor dims {:?} do not match its data", t.dims)));
        }
        out.write_all(&(t.dims.len() as u32).to_le_bytes())?;
        for &d in &t.dims {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
    }
    for t in &ck.tensors {
        for v in &t.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("truncated checkpoint: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(Error::Format("bad magic; not a checkpoint".into()));
    }
    let kind = CheckpointKind::from_byte(r.array::<1>()?[0])?;
    let seed = r.u64()?;
    let config_hash = r.u64()?;
    let n_scalars = r.u32()? as usize;
    if n_scalars > r.remaining() / 8 {
        return Err(Error::Format(format!("truncated checkpoint: {n_scalars} scalars announced")));
    }
    let scalars = (0..n_scalars)
        .map(|_| Ok(f64::from_le_bytes(r.array()?)))
        .collect::<Result<Vec<_>>>()?;
    let n_tensors = r.u32()? as usize;
    let mut shapes = Vec::new();
    let mut total: usize = 0;
    for _ in 0..n_tensors {
        let ndims = r.u32()? as usize;
        if ndims > r.remaining() / 8 {
            return Err(Error::Format(format!("truncated checkpoint: {ndims} dims announced")));
        }
        let mut dims = Vec::with_capacity(ndims);
        let mut len: usize = 1;
        for _ in 0..ndims {
            let d = usize::try_from(r.u64()?).map_err(|_| Error::Format("dimension overflows usize".into()))?;
            len = len
                .checked_mul(d)
                .ok_or_else(|| Error::Format(format!("dimension overflow in tensor dims {dims:?}×{d}")))?;
            dims.push(d);
        }
        total = total
            .checked_add(len)
            .ok_or_else(|| Error::Format("dimension overflow in tensor sizes".into()))?;
        shapes.push((dims, len));
    }
    let payload_bytes = total
        .checked_mul(4)
        .ok_or_else(|| Error::Format("dimension overflow in payload size".into()))?;
    if payload_bytes != r.remaining() {
        return Err(Error::Format(format!(
            "payload is {} bytes but header announces {payload_bytes}",
            r.remaining()
        )));
    }
    let tensors = shapes
        .into_iter()
        .map(|(dims, len)| {
            let data = r
                .take(len * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Ok(Tensor { dims, data })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Checkpoint {
        kind,
        seed,
        config_hash,
        scalars,
        tensors,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(fs::File::create(path)?);
    encode_checkpoint(ck, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
