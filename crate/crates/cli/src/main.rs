use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cgc_core::config::{ConfigOverrides, ExperimentConfig};
use cgc_core::dataset::{dataset_stats, parse_tudataset, published_stats};
use cgc_core::experiment::{ablation_csv, run_ablation_suite, run_experiment, AblationAxis};
use cgc_core::CgcError;

#[derive(Parser)]
#[command(name = "cgc", version, about = "Counterfactual hard negatives for graph contrastive learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate negatives, train encoders and evaluate.
    Run(RunArgs),
    /// Run every setting along one ablation axis.
    Ablate {
        /// negatives | norm
        #[arg(long)]
        axis: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print statistics of a TU-format data set.
    Stats {
        #[arg(long)]
        dataset: String,
        #[arg(long, env = "CGC_DATA_DIR")]
        data_dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with the same keys as the flags (snake_case).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long, env = "CGC_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Keep a seeded random subset of this many graphs.
    #[arg(long)]
    subset: Option<usize>,
    /// gcn | gin
    #[arg(long)]
    encoder: Option<String>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    lr_gen: Option<f64>,
    #[arg(long)]
    lr_con: Option<f64>,
    #[arg(long)]
    lr_cls: Option<f64>,
    #[arg(long)]
    epochs_gen: Option<usize>,
    #[arg(long)]
    epochs_con: Option<usize>,
    #[arg(long)]
    epochs_cls: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    omega: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    gamma: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    tau: Option<f64>,
    /// one | two | inf | nuclear | fro
    #[arg(long)]
    norm: Option<String>,
    /// proximity | feature | both
    #[arg(long)]
    negatives: Option<String>,
    /// labeled | unsupervised
    #[arg(long)]
    classifier: Option<String>,
    /// Momentum for the key encoder; joint training when absent.
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    /// Also write the generated negatives in TU format.
    #[arg(long)]
    export_negatives: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> Result<ConfigOverrides, CgcError> {
        Ok(ConfigOverrides {
            dataset: self.dataset.clone(),
            data_dir: self.data_dir.clone(),
            subset: self.subset,
            encoder: self.encoder.as_deref().map(str::parse).transpose()?,
            layers: self.layers,
            hidden_dim: self.hidden_dim,
            embed_dim: self.embed_dim,
            lr_gen: self.lr_gen,
            lr_con: self.lr_con,
            lr_cls: self.lr_cls,
            epochs_gen: self.epochs_gen,
            epochs_con: self.epochs_con,
            epochs_cls: self.epochs_cls,
            batch_size: self.batch_size,
            omega: self.omega,
            gamma: self.gamma,
            tau: self.tau,
            norm: self.norm.as_deref().map(str::parse).transpose()?,
            negatives: self.negatives.as_deref().map(str::parse).transpose()?,
            classifier: self.classifier.as_deref().map(str::parse).transpose()?,
            momentum: self.momentum,
            init_margin: None,
            init_noise: None,
            svm_lambda: None,
            svm_epochs: None,
            seed: self.seed,
            folds: self.folds,
            export_negatives: self.export_negatives.then_some(true),
            out: self.out.clone(),
        })
    }

    fn resolve(&self) -> Result<ExperimentConfig, CgcError> {
        let file = self.config.as_deref().map(ConfigOverrides::from_file).transpose()?;
        ExperimentConfig::resolve(file, self.overrides()?)
    }
}

fn run(cli: Cli) -> Result<(), CgcError> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.resolve()?;
            let outcome = run_experiment(&cfg)?;
            println!("{}", outcome.report.text_row());
            if let Some(out) = &cfg.out {
                log::info!("artifacts written to {}", out.display());
            }
        }
        Command::Ablate { axis, run } => {
            let axis: AblationAxis = axis.parse()?;
            let cfg = run.resolve()?;
            let cells = run_ablation_suite(&cfg, axis)?;
            print!("{}", ablation_csv(&cells));
            if cells.iter().all(|c| c.outcome.is_err()) {
                return Err(CgcError::Numeric(format!("every {axis} ablation cell failed")));
            }
        }
        Command::Stats { dataset, data_dir } => {
            let ds = parse_tudataset(&data_dir, &dataset)?;
            let s = dataset_stats(&ds)?;
            println!("dataset        graphs  avg_nodes  avg_edges  features  classes");
            println!(
                "{:<14} {:>6}  {:>9.2}  {:>9.2}  {:>8}  {:>7}",
                ds.name, s.num_graphs, s.avg_nodes, s.avg_edges, s.feature_dim, s.num_classes
            );
            if let Some(p) = published_stats(&ds.name) {
                println!(
                    "{:<14} {:>6}  {:>9.2}  {:>9.2}  {:>8}  {:>7}",
                    "published", p.num_graphs, p.avg_nodes, p.avg_edges, p.feature_dim, p.num_classes
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
