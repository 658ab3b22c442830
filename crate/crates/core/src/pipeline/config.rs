use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::Metric;
use crate::sae::SaeHyperParams;
use crate::toymodel::ToyTrainConfig;

pub const DESK_SCALE_ROWS: usize = 512_000;
pub const PAPER_SCALE_ROWS: usize = 10_240_000;
/// Toy passes at desk scale: the same number of optimizer steps as one
/// paper-scale pass.
pub const DESK_TOY_EPOCHS: usize = 20;
/// SAE passes at desk scale, enough for the reconstruction loss to plateau.
pub const DESK_SAE_EPOCHS: usize = 40;

/// Full description of one experiment. Read from JSON; unknown keys are
/// rejected and missing keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Dataset rows at desk scale; ignored when `paper_scale` is set.
    pub num_rows: usize,
    pub num_features: usize,
    /// Per-entry activation probability of the ground-truth features.
    pub p: f64,
    /// Hidden widths to train, one experiment each.
    pub n_list: Vec<usize>,
    /// The two model seeds compared against each other.
    pub seeds: [u64; 2],
    /// Seed of the shared feature dataset and of the fold assignment.
    pub data_seed: u64,
    pub toy: ToyTrainConfig,
    pub sae: SaeHyperParams,
    /// Trailing fraction of rows held out of SAE training and used for alignment.
    pub holdout_fraction: f64,
    pub folds: usize,
    /// Ridge penalties are `10^e` for each exponent.
    pub alpha_exponents: Vec<i32>,
    pub metrics: Vec<Metric>,
    pub out_dir: PathBuf,
    pub paper_scale: bool,
    /// Also write the (large) dataset checkpoint.
    pub save_dataset: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            num_rows: DESK_SCALE_ROWS,
            num_features: 64,
            p: 0.1,
            n_list: vec![8, 16, 32],
            seeds: [0, 1],
            data_seed: 0,
            toy: ToyTrainConfig::default(),
            sae: SaeHyperParams::default(),
            holdout_fraction: 0.2,
            folds: 5,
            alpha_exponents: (-8..=8).collect(),
            metrics: Metric::ALL.to_vec(),
            out_dir: PathBuf::from("runs/default"),
            paper_scale: false,
            save_dataset: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Rows actually generated.
    pub fn effective_rows(&self) -> usize {
        if self.paper_scale {
            PAPER_SCALE_ROWS
        } else {
            self.num_rows
        }
    }

    /// Rows used to train the SAEs; the rest form the alignment holdout.
    pub fn sae_train_rows(&self) -> usize {
        let m = self.effective_rows();
        m - ((m as f64 * self.holdout_fraction).round() as usize).clamp(1, m - 1)
    }

    fn default_epochs(&self, desk: usize) -> usize {
        if self.paper_scale {
            1
        } else {
            desk
        }
    }

    /// Toy training settings with an unset epoch count resolved for the scale.
    pub fn toy_train_config(&self) -> ToyTrainConfig {
        let mut t = self.toy;
        if t.epochs == 0 {
            t.epochs = self.default_epochs(DESK_TOY_EPOCHS);
        }
        t
    }

    /// SAE settings with an unset epoch count resolved for the scale.
    pub fn sae_hyper_params(&self) -> SaeHyperParams {
        let mut h = self.sae;
        if h.epochs == 0 {
            h.epochs = self.default_epochs(DESK_SAE_EPOCHS);
        }
        h
    }

    pub fn num_latents(&self) -> usize {
        if self.sae.num_latents == 0 {
            self.num_features
        } else {
            self.sae.num_latents
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let m = self.effective_rows();
        if self.num_features < 2 {
            return bad(format!("num_features must be >= 2, got {}", self.num_features));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return bad(format!("p must lie in (0, 1], got {}", self.p));
        }
        if self.n_list.is_empty() {
            return bad("n_list is empty".into());
        }
        if let Some(&n) = self.n_list.iter().find(|&&n| n == 0 || n >= self.num_features) {
            return bad(format!("every N must satisfy 0 < N < F={}, got {n}", self.num_features));
        }
        if self.seeds[0] == self.seeds[1] {
            return bad("the two model seeds must differ".into());
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return bad(format!("holdout_fraction must lie in (0, 1), got {}", self.holdout_fraction));
        }
        if self.folds < 2 {
            return bad(format!("folds must be >= 2, got {}", self.folds));
        }
        let holdout = m - self.sae_train_rows();
        // each fold needs 2 test rows and the ridge inner split needs 2 validation rows
        if m < 2 || holdout < 10 * self.folds {
            return bad(format!("{m} rows leave too small a holdout ({holdout}) for {} folds", self.folds));
        }
        if self.alpha_exponents.is_empty() {
            return bad("alpha_exponents is empty".into());
        }
        if self.alpha_exponents.iter().any(|e| e.abs() > 300) {
            return bad("alpha exponents must lie in [-300, 300]".into());
        }
        if self.metrics.is_empty() {
            return bad("metrics list is empty".into());
        }
        let lat = self.num_latents();
        if let Some(&n) = self.n_list.iter().find(|&&n| lat < n) {
            return bad(format!("{lat} SAE latents cannot be overcomplete for N={n}"));
        }
        if self.sae.k == 0 || self.sae.k > lat {
            return bad(format!("SAE k={} outside [1, {lat}]", self.sae.k));
        }
        if self.toy.batch_size == 0 || self.sae.batch_size == 0 {
            return bad("batch sizes must be >= 1".into());
        }
        if !(self.toy.lr > 0.0 && self.sae.lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.sae.alpha_aux.is_nan() || self.sae.alpha_aux < 0.0 {
            return bad("alpha_aux must be >= 0".into());
        }
        Ok(())
    }

    /// Stable digest of the canonical JSON form, recorded in checkpoints.
    pub fn hash(&self) -> u64 {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}
