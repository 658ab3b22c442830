use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array2, Axis};

use super::chart::emit_report;
use super::checkpoint::{save_checkpoint, Checkpoint};
use super::config::ExperimentConfig;
use super::validation::{validate_disentanglement, DisentanglementTable};
use crate::datagen::{gen_features, FeatureDataset};
use crate::error::{Error, Result};
use crate::metrics::{
    prune_dead_latents, ridge_score, semi_match_score, soft_match_score, ActivationMatrix, AlignmentReport, Metric,
    SourceTag,
};
use crate::numerics::{kfold_split, FoldPlan, RngStream};
use crate::sae::{batch_latents, init_sae, train_sae, SaeModel, SaeTrainLog};
use crate::toymodel::{
    arrangement_similarity, feature_norms, hidden_activations, init_toy, shared_features, train_toy, SharedFeatureSet,
    ToyModel, ToyTrainLog, DEFAULT_SHARED_THRESHOLD,
};

/// Everything trained for one seed at one hidden width.
#[derive(Debug, Clone)]
pub struct ModelArtifacts {
    pub seed: u64,
    pub toy: ToyModel,
    pub toy_log: ToyTrainLog,
    pub sae: SaeModel,
    pub sae_log: SaeTrainLog,
    /// Untrained SAE with the same architecture and initialisation scheme.
    pub rand_sae: SaeModel,
    /// Wall time of toy and SAE training, in seconds.
    pub train_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub n: usize,
    pub experiment_id: String,
    pub models: [ModelArtifacts; 2],
    pub feature_norms: [Vec<f64>; 2],
    pub shared: SharedFeatureSet,
    /// `None` when fewer than two features are shared.
    pub arrangement: Option<Vec<f64>>,
    pub validation: [DisentanglementTable; 2],
    pub rand_validation: [DisentanglementTable; 2],
    pub reports: Vec<AlignmentReport>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub experiments: Vec<ExperimentResult>,
}

impl RunSummary {
    pub fn reports(&self) -> Vec<AlignmentReport> {
        self.experiments.iter().flat_map(|e| e.reports.iter().cloned()).collect()
    }

    pub fn experiment(&self, n: usize) -> Option<&ExperimentResult> {
        self.experiments.iter().find(|e| e.n == n)
    }
}

impl ExperimentResult {
    pub fn report(&self, metric: Metric, src: SourceTag, tgt: SourceTag) -> Option<&AlignmentReport> {
        self.reports
            .iter()
            .find(|r| r.metric == metric && r.source_tag == src && r.target_tag == tgt)
    }
}

pub fn experiment_id(n: usize) -> String {
    format!("N{n}")
}

/// The feature dataset shared by both seeds, with its importance vector.
pub fn generate_dataset(cfg: &ExperimentConfig) -> Result<FeatureDataset> {
    let mut rng = RngStream::new(cfg.data_seed).derive("dataset");
    gen_features(cfg.effective_rows(), cfg.num_features, cfg.p, &mut rng)?.with_importance()
}

pub fn train_toy_model(cfg: &ExperimentConfig, data: &FeatureDataset, n: usize, seed: u64) -> Result<(ToyModel, ToyTrainLog)> {
    let mut rng = RngStream::new(seed).derive(&format!("toy/N{n}"));
    let mut init = init_toy(cfg.num_features, n, &mut rng)?;
    init.output_relu = cfg.toy.output_relu;
    train_toy(&init, data, &cfg.toy_train_config())
}

fn sae_train_block(cfg: &ExperimentConfig, data: &FeatureDataset, toy: &ToyModel) -> Result<Array2<f64>> {
    if data.num_rows() != cfg.effective_rows() {
        return Err(Error::Dimension(format!(
            "dataset has {} rows, config expects {}",
            data.num_rows(),
            cfg.effective_rows()
        )));
    }
    hidden_activations(toy, data.z.slice(s![..cfg.sae_train_rows(), ..]))
}

fn fresh_sae(cfg: &ExperimentConfig, acts: &Array2<f64>, rng: &mut RngStream) -> Result<SaeModel> {
    let mean = acts
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::Degenerate("no SAE training rows".into()))?;
    init_sae(acts.ncols(), cfg.num_latents(), cfg.sae.k, mean.view(), rng)
}

/// Trained SAE and its untrained twin for one toy model. Only the rows
/// before the holdout are used.
pub fn train_sae_pair(
    cfg: &ExperimentConfig,
    data: &FeatureDataset,
    toy: &ToyModel,
    seed: u64,
) -> Result<(SaeModel, SaeTrainLog, SaeModel)> {
    let n = toy.num_neurons();
    let acts = sae_train_block(cfg, data, toy)?;
    let mut rng = RngStream::new(seed).derive(&format!("sae/N{n}"));
    let init = fresh_sae(cfg, &acts, &mut rng)?;
    let (sae, log) = train_sae(&init, acts.view(), &cfg.sae_hyper_params(), &mut rng)?;
    let mut rand_rng = RngStream::new(seed).derive(&format!("rand-sae/N{n}"));
    let rand_sae = fresh_sae(cfg, &acts, &mut rand_rng)?;
    Ok((sae, log, rand_sae))
}

/// Fold assignment over the holdout rows, shared by every comparison.
pub fn holdout_fold_plan(cfg: &ExperimentConfig) -> Result<FoldPlan> {
    let rows = cfg.effective_rows() - cfg.sae_train_rows();
    kfold_split(rows, cfg.folds, &mut RngStream::new(cfg.data_seed).derive("folds"))
}

fn holdout<'a>(cfg: &ExperimentConfig, data: &'a FeatureDataset) -> ndarray::ArrayView2<'a, f32> {
    data.z.slice(s![cfg.sae_train_rows().., ..])
}

/// Alignment reports between the two models (index 0 is the source).
pub fn align_models(
    cfg: &ExperimentConfig,
    data: &FeatureDataset,
    toys: [&ToyModel; 2],
    saes: [&SaeModel; 2],
    rand_saes: [&SaeModel; 2],
) -> Result<Vec<AlignmentReport>> {
    let n = toys[0].num_neurons();
    let plan = holdout_fold_plan(cfg)?;
    let z = holdout(cfg, data);
    let wrap = |m: Array2<f64>, tag: SourceTag| -> Result<ActivationMatrix> {
        prune_dead_latents(&ActivationMatrix::new(m, tag, plan.clone())?)
    };
    let mut neurons = Vec::new();
    let mut latents = Vec::new();
    let mut rand = Vec::new();
    for i in 0..2 {
        let h = hidden_activations(toys[i], z)?;
        latents.push(wrap(batch_latents(saes[i], h.view())?, SourceTag::SaeLatents)?);
        rand.push(wrap(batch_latents(rand_saes[i], h.view())?, SourceTag::RandSaeLatents)?);
        neurons.push(wrap(h, SourceTag::Neurons)?);
    }

    let id = experiment_id(n);
    let mut reports = Vec::new();
    let matching = [(&neurons[0], &neurons[1]), (&latents[0], &latents[1]), (&rand[0], &latents[1])];
    let ridge = [
        (&neurons[0], &neurons[1]),
        (&latents[0], &neurons[1]),
        (&rand[0], &neurons[1]),
        (&latents[0], &latents[1]),
    ];
    for &metric in &cfg.metrics {
        let t = Instant::now();
        let pairs: &[(&ActivationMatrix, &ActivationMatrix)] = match metric {
            Metric::Ridge => &ridge,
            _ => &matching,
        };
        for &(a, b) in pairs {
            let r = match metric {
                Metric::SemiMatch => semi_match_score(a, b),
                Metric::SoftMatch => soft_match_score(a, b),
                Metric::Ridge => ridge_score(a, b, &cfg.alpha_exponents),
            }
            .map_err(|e| e.in_stage(format!("align {id} {metric} {}->{}", a.source_tag, b.source_tag)))?;
            log::info!(
                "{id} {metric} {}->{}: {:.4} ± {:.4}",
                a.source_tag,
                b.source_tag,
                r.mean,
                r.stderr
            );
            reports.push(r.with_experiment(id.clone()));
        }
        log::debug!("{id} {metric} took {:.1}s", t.elapsed().as_secs_f64());
    }
    Ok(reports)
}

fn write_csv_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn run_width(cfg: &ExperimentConfig, data: &FeatureDataset, n: usize, out: &Path) -> Result<ExperimentResult> {
    let id = experiment_id(n);
    let hash = cfg.hash();
    let mut models = Vec::with_capacity(2);
    for &seed in &cfg.seeds {
        let start = Instant::now();
        let (toy, toy_log) =
            train_toy_model(cfg, data, n, seed).map_err(|e| e.in_stage(format!("train-toy {id} seed={seed}")))?;
        log::info!(
            "{id} seed {seed}: toy loss {:.5} -> {:.5} ({:.1}s)",
            toy_log.initial_heldout_loss,
            toy_log.final_heldout_loss,
            start.elapsed().as_secs_f64()
        );
        let t = Instant::now();
        let (sae, sae_log, rand_sae) =
            train_sae_pair(cfg, data, &toy, seed).map_err(|e| e.in_stage(format!("train-sae {id} seed={seed}")))?;
        if let Some(last) = sae_log.rows.last() {
            log::info!(
                "{id} seed {seed}: SAE mse {:.3e}, {} dead ({:.1}s)",
                last.mse,
                last.dead_count,
                t.elapsed().as_secs_f64()
            );
        }
        let train_seconds = start.elapsed().as_secs_f64();
        let ckdir = out.join("checkpoints");
        save_checkpoint(&Checkpoint::from_toy(&toy, hash), &ckdir.join(format!("toy_{id}_seed{seed}.ckpt")))?;
        save_checkpoint(&Checkpoint::from_sae(&sae, seed, hash), &ckdir.join(format!("sae_{id}_seed{seed}.ckpt")))?;
        save_checkpoint(
            &Checkpoint::from_sae(&rand_sae, seed, hash),
            &ckdir.join(format!("rand_sae_{id}_seed{seed}.ckpt")),
        )?;
        let logdir = out.join("logs");
        fs::create_dir_all(&logdir)?;
        sae_log.write_csv(fs::File::create(logdir.join(format!("sae_{id}_seed{seed}.csv")))?)?;
        models.push(ModelArtifacts {
            seed,
            toy,
            toy_log,
            sae,
            sae_log,
            rand_sae,
            train_seconds,
        });
    }
    let models: [ModelArtifacts; 2] = models.try_into().expect("two seeds");

    let z = holdout(cfg, data);
    let validate = |m: &ModelArtifacts, sae: &SaeModel| {
        validate_disentanglement(z, &m.toy, sae).map_err(|e| e.in_stage(format!("validate {id} seed={}", m.seed)))
    };
    let validation = [validate(&models[0], &models[0].sae)?, validate(&models[1], &models[1].sae)?];
    let rand_validation = [
        validate(&models[0], &models[0].rand_sae)?,
        validate(&models[1], &models[1].rand_sae)?,
    ];
    for (m, v) in models.iter().zip(&validation) {
        log::info!(
            "{id} seed {}: feature max-corr neurons {:.3}, SAE latents {:.3}",
            m.seed,
            v.neuron_mean,
            v.latent_mean
        );
    }

    let norms = [feature_norms(&models[0].toy), feature_norms(&models[1].toy)];
    let shared = shared_features(&models[0].toy, &models[1].toy, DEFAULT_SHARED_THRESHOLD)?;
    let arrangement = if shared.indices.len() >= 2 {
        Some(arrangement_similarity(&models[0].toy, &models[1].toy, &shared)?)
    } else {
        log::warn!("{id}: only {} shared features; arrangement similarity skipped", shared.indices.len());
        None
    };

    let reports = align_models(
        cfg,
        data,
        [&models[0].toy, &models[1].toy],
        [&models[0].sae, &models[1].sae],
        [&models[0].rand_sae, &models[1].rand_sae],
    )?;

    Ok(ExperimentResult {
        n,
        experiment_id: id,
        models,
        feature_norms: norms,
        shared,
        arrangement,
        validation,
        rand_validation,
        reports,
    })
}

fn write_tables(out: &Path, experiments: &[ExperimentResult], seeds: [u64; 2]) -> Result<()> {
    let mut norm_rows = Vec::new();
    let mut val_rows = Vec::new();
    let mut arr_rows = Vec::new();
    for e in experiments {
        for (s, (norms, (v, rv))) in e
            .feature_norms
            .iter()
            .zip(e.validation.iter().zip(&e.rand_validation))
            .enumerate()
        {
            for (f, norm) in norms.iter().enumerate() {
                let shared = e.shared.indices.contains(&f);
                norm_rows.push(vec![
                    e.experiment_id.clone(),
                    seeds[s].to_string(),
                    f.to_string(),
                    norm.to_string(),
                    shared.to_string(),
                ]);
                val_rows.push(vec![
                    e.experiment_id.clone(),
                    seeds[s].to_string(),
                    f.to_string(),
                    v.neuron_max[f].to_string(),
                    v.latent_max[f].to_string(),
                    rv.latent_max[f].to_string(),
                ]);
            }
        }
        if let Some(arr) = &e.arrangement {
            for (j, a) in arr.iter().enumerate() {
                arr_rows.push(vec![e.experiment_id.clone(), j.to_string(), a.to_string()]);
            }
        }
    }
    write_csv_rows(
        &out.join("feature_norms.csv"),
        &["experiment_id", "seed", "feature", "norm", "shared"],
        norm_rows,
    )?;
    write_csv_rows(
        &out.join("validation.csv"),
        &["experiment_id", "seed", "feature", "neuron_max_corr", "sae_max_corr", "rand_sae_max_corr"],
        val_rows,
    )?;
    write_csv_rows(
        &out.join("arrangement.csv"),
        &["experiment_id", "neuron", "max_corr"],
        arr_rows,
    )?;
    let mut summary = Vec::new();
    for e in experiments {
        for (s, (v, rv)) in e.validation.iter().zip(&e.rand_validation).enumerate() {
            summary.push(vec![
                e.experiment_id.clone(),
                seeds[s].to_string(),
                v.neuron_mean.to_string(),
                v.latent_mean.to_string(),
                rv.latent_mean.to_string(),
            ]);
        }
    }
    write_csv_rows(
        &out.join("validation_summary.csv"),
        &["experiment_id", "seed", "neuron_mean", "sae_mean", "rand_sae_mean"],
        summary,
    )
}

/// Runs every configured width end to end and writes checkpoints, logs,
/// CSV tables and charts under `cfg.out_dir`. Outputs written before a
/// failing stage are kept.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.json"), cfg.to_json())?;

    let t = Instant::now();
    let data = generate_dataset(cfg).map_err(|e| e.in_stage("gen"))?;
    log::info!(
        "generated {}x{} features ({:.1}s)",
        data.num_rows(),
        data.num_features(),
        t.elapsed().as_secs_f64()
    );
    if cfg.save_dataset {
        save_checkpoint(
            &Checkpoint::from_dataset(&data, cfg.data_seed, cfg.hash()),
            &out.join("checkpoints").join("dataset.ckpt"),
        )?;
    }

    let mut experiments = Vec::new();
    for &n in &cfg.n_list {
        let result = run_width(cfg, &data, n, &out)?;
        experiments.push(result);
        // refresh the tables after every width so partial runs leave results behind
        write_tables(&out, &experiments, cfg.seeds)?;
        let reports: Vec<AlignmentReport> = experiments.iter().flat_map(|e| e.reports.iter().cloned()).collect();
        emit_report(&reports, &out)?;
    }
    Ok(RunSummary {
        out_dir: out,
        experiments,
    })
}
