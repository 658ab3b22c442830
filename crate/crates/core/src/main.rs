use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spal::metrics::report::read_reports_csv;
use spal::metrics::Metric;
use spal::pipeline::run::{align_models, experiment_id, generate_dataset, train_sae_pair, train_toy_model};
use spal::pipeline::{
    emit_report, load_checkpoint, run_experiment, save_checkpoint, theory_checks, write_theory_checks, Checkpoint,
    ExperimentConfig,
};
use spal::{Error, Result};

#[derive(Parser)]
#[command(name = "spal", version, about = "Superposition-aware alignment of toy models and SAEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; defaults apply to missing keys
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed_a: Option<u64>,
    #[arg(long, global = true)]
    seed_b: Option<u64>,
    /// Generate 10,240,000 rows instead of the desk-scale default
    #[arg(long, global = true)]
    paper_scale: bool,
    /// Comma-separated subset of semi_match,soft_match,ridge
    #[arg(long, global = true, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the shared feature dataset checkpoint
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train one toy model on a dataset checkpoint
    TrainToy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Hidden width
        #[arg(long)]
        n: usize,
        /// Model seed (defaults to the first config seed)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train an SAE (and its random twin) on a toy model's activations
    TrainSae {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        toy: PathBuf,
    },
    /// Align two trained models and their SAEs
    Align {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        toy_a: PathBuf,
        #[arg(long)]
        toy_b: PathBuf,
        #[arg(long)]
        sae_a: PathBuf,
        #[arg(long)]
        sae_b: PathBuf,
        #[arg(long)]
        rand_sae_a: PathBuf,
        #[arg(long)]
        rand_sae_b: PathBuf,
    },
    /// Deflation closed forms and sparse-recovery checks
    TheoryChecks {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 50)]
        instances: usize,
    },
    /// Full pipeline for every configured width
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Redraw charts from an alignment CSV
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &c.out {
        cfg.out_dir = out.clone();
    }
    if let Some(s) = c.seed_a {
        cfg.seeds[0] = s;
    }
    if let Some(s) = c.seed_b {
        cfg.seeds[1] = s;
    }
    cfg.paper_scale |= c.paper_scale;
    if let Some(list) = &c.metrics {
        cfg.metrics = list.iter().map(|m| m.parse::<Metric>()).collect::<Result<_>>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_dataset(cfg: &ExperimentConfig, path: &Path) -> Result<spal::datagen::FeatureDataset> {
    let ck = load_checkpoint(path)?;
    if ck.config_hash != cfg.hash() {
        log::warn!("{} was written under a different config", path.display());
    }
    ck.to_dataset()?.with_importance()
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen { common } => {
            let cfg = load_config(&common)?;
            let data = generate_dataset(&cfg)?;
            let path = cfg.out_dir.join("dataset.ckpt");
            save_checkpoint(&Checkpoint::from_dataset(&data, cfg.data_seed, cfg.hash()), &path)?;
            println!("{}", path.display());
        }
        Command::TrainToy { common, dataset, n, seed } => {
            let cfg = load_config(&common)?;
            let data = load_dataset(&cfg, &dataset)?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let (toy, log) = train_toy_model(&cfg, &data, n, seed).map_err(|e| e.in_stage("train-toy"))?;
            let path = cfg.out_dir.join(format!("toy_{}_seed{seed}.ckpt", experiment_id(n)));
            save_checkpoint(&Checkpoint::from_toy(&toy, cfg.hash()), &path)?;
            println!(
                "{} (loss {:.5} -> {:.5})",
                path.display(),
                log.initial_heldout_loss,
                log.final_heldout_loss
            );
        }
        Command::TrainSae { common, dataset, toy } => {
            let cfg = load_config(&common)?;
            let data = load_dataset(&cfg, &dataset)?;
            let toy = load_checkpoint(&toy)?.to_toy()?;
            let seed = toy.seed;
            let (sae, log, rand_sae) = train_sae_pair(&cfg, &data, &toy, seed).map_err(|e| e.in_stage("train-sae"))?;
            let id = experiment_id(toy.num_neurons());
            let hash = cfg.hash();
            let sae_path = cfg.out_dir.join(format!("sae_{id}_seed{seed}.ckpt"));
            save_checkpoint(&Checkpoint::from_sae(&sae, seed, hash), &sae_path)?;
            save_checkpoint(
                &Checkpoint::from_sae(&rand_sae, seed, hash),
                &cfg.out_dir.join(format!("rand_sae_{id}_seed{seed}.ckpt")),
            )?;
            log.write_csv(fs::File::create(cfg.out_dir.join(format!("sae_{id}_seed{seed}.csv")))?)?;
            println!("{}", sae_path.display());
        }
        Command::Align {
            common,
            dataset,
            toy_a,
            toy_b,
            sae_a,
            sae_b,
            rand_sae_a,
            rand_sae_b,
        } => {
            let cfg = load_config(&common)?;
            let data = load_dataset(&cfg, &dataset)?;
            let toys = [load_checkpoint(&toy_a)?.to_toy()?, load_checkpoint(&toy_b)?.to_toy()?];
            let saes = [load_checkpoint(&sae_a)?.to_sae()?, load_checkpoint(&sae_b)?.to_sae()?];
            let rands = [
                load_checkpoint(&rand_sae_a)?.to_sae()?,
                load_checkpoint(&rand_sae_b)?.to_sae()?,
            ];
            let reports = align_models(
                &cfg,
                &data,
                [&toys[0], &toys[1]],
                [&saes[0], &saes[1]],
                [&rands[0], &rands[1]],
            )?;
            for p in emit_report(&reports, &cfg.out_dir)? {
                println!("{}", p.display());
            }
        }
        Command::TheoryChecks { common, instances } => {
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
            fs::create_dir_all(&out)?;
            let seed = common.seed_a.unwrap_or(0);
            let checks = theory_checks(seed, instances)?;
            let path = out.join("theory_checks.csv");
            write_theory_checks(&checks, &path)?;
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!("{} ({} checks, {failed} failed)", path.display(), checks.len());
        }
        Command::Run { common } => {
            let cfg = load_config(&common)?;
            let summary = run_experiment(&cfg)?;
            println!("{}", summary.out_dir.display());
        }
        Command::Report { common, input } => {
            let reports = read_reports_csv(fs::File::open(&input)?)?;
            if reports.is_empty() {
                return Err(Error::Format(format!("{} holds no reports", input.display())));
            }
            let out = common
                .out
                .clone()
                .unwrap_or_else(|| input.parent().map(Path::to_path_buf).unwrap_or_default());
            for p in emit_report(&reports, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
