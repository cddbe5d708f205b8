use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use resdistill_core::harness::{
    crossres_mode, evaluate_mode, generate_synthetic, ingest, load_models, run_experiment,
    train_models, write_inputs, write_summary, ExperimentConfig, ExperimentData, ExperimentMode,
    ModelEmbeddings, SplitRules, SyntheticDatasetConfig, EXPERIMENT_CONFIG_FILE,
};
use resdistill_core::protocols::parse_resolution;

#[derive(Parser)]
#[command(name = "resdistill", version, about = "Resolution-robust embedding distillation and evaluation")]
struct Cli {
    /// Worker threads; 1 runs the sequential reference path.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic identity dataset to PNG files plus a manifest.
    GenData {
        /// Generator config (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scan root/<identity>/<images> into root/manifest.json.
    Ingest {
        #[arg(long)]
        root: PathBuf,
        /// Split rules (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pretrain the teacher and train the requested students.
    Train(ExpArgs),
    /// Verification, CMC, open-set and retrieval reports for each mode.
    Evaluate(ExpArgs),
    /// Cross-resolution verification matrices for each mode.
    Crossres(ExpArgs),
    /// Summary tables from the reports already written.
    Report(ExpArgs),
    /// Every stage in order: train, evaluate, crossres, report.
    Run(ExpArgs),
}

#[derive(Args)]
struct ExpArgs {
    /// Experiment config (TOML). Defaults to <out>/experiment.toml when it
    /// exists, else built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated subset of teacher-only, nT-nC, T-C.
    #[arg(long, value_delimiter = ',')]
    mode: Option<Vec<String>>,
    /// Comma-separated resolutions in pixels, `full` for native.
    #[arg(long, value_delimiter = ',')]
    resolutions: Option<Vec<String>>,
    #[arg(long)]
    far: Option<f64>,
}

impl ExpArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let stored = self.out.join(EXPERIMENT_CONFIG_FILE);
        let mut cfg = match (&self.config, stored.exists()) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, true) => ExperimentConfig::load(&stored)?,
            (None, false) => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(modes) = &self.mode {
            cfg.modes = modes
                .iter()
                .map(|m| m.trim().parse::<ExperimentMode>())
                .collect::<resdistill_core::Result<_>>()?;
        }
        if let Some(res) = &self.resolutions {
            for r in res {
                parse_resolution(r)?;
            }
            cfg.resolutions = res.iter().map(|r| r.trim().to_string()).collect();
        }
        if let Some(far) = self.far {
            cfg.far_target = far;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_or_default<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    Ok(match path {
        Some(p) => resdistill_core::load_toml(p)?,
        None => T::default(),
    })
}

fn evaluate(args: &ExpArgs, crossres: bool) -> Result<()> {
    let cfg = args.config()?;
    let data = ExperimentData::load(&cfg.dataset)?;
    let models = load_models(&cfg, &args.out)?;
    let resolutions = cfg.eval_resolutions()?;
    for &m in &cfg.modes {
        let model = models.get(m).context("model missing")?;
        let emb = ModelEmbeddings::compute(model, &data, &resolutions)?;
        if crossres {
            crossres_mode(&cfg, &data, m, &emb, &args.out)?;
        } else {
            evaluate_mode(&cfg, &data, m, model, &emb, &args.out)?;
        }
        log::info!("{} done", m.label());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    match cli.command {
        Command::GenData { config, seed, out } => {
            let mut cfg: SyntheticDatasetConfig = load_or_default(config.as_deref())?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let result = generate_synthetic(&cfg, &out)?;
            println!(
                "wrote {} images for {} identities to {} (checksum {}, intra/inter distance ratio {:.3})",
                result.manifest.records.len(),
                result.manifest.num_identities,
                out.display(),
                result.manifest.checksum,
                result.self_check.ratio
            );
        }
        Command::Ingest { root, config, seed } => {
            let mut rules: SplitRules = load_or_default(config.as_deref())?;
            if let Some(seed) = seed {
                rules.seed = seed;
            }
            let report = ingest(&root, &rules)?;
            report.manifest.save(&root)?;
            println!(
                "indexed {} images of {} identities ({} skipped), checksum {}",
                report.manifest.records.len(),
                report.manifest.num_identities,
                report.skipped.len(),
                report.manifest.checksum
            );
        }
        Command::Train(args) => {
            let cfg = args.config()?;
            let data = ExperimentData::load(&cfg.dataset)?;
            write_inputs(&cfg, &data, &args.out)?;
            train_models(&cfg, &data, Some(&args.out))?;
        }
        Command::Evaluate(args) => evaluate(&args, false)?,
        Command::Crossres(args) => evaluate(&args, true)?,
        Command::Report(args) => {
            let cfg = args.config()?;
            let summary = write_summary(&cfg, &args.out)?;
            println!(
                "{}",
                resdistill_core::harness::tar_table_markdown(summary.far_target, &summary.resolutions, &summary.tar_table)
            );
        }
        Command::Run(args) => {
            let cfg = args.config()?;
            let outcome = run_experiment(&cfg, &args.out)?;
            let s = &outcome.summary;
            println!(
                "{}",
                resdistill_core::harness::tar_table_markdown(s.far_target, &s.resolutions, &s.tar_table)
            );
        }
    }
    Ok(())
}
