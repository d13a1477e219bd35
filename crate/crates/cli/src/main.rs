use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cladapter_cli::config::ExperimentConfig;
use cladapter_cli::error::CliError;
use cladapter_cli::runner;

#[derive(Parser)]
#[command(
    name = "cladapter",
    version,
    about = "Cluster-attention adapter experiment runner",
    after_help = "Configuration precedence: defaults < --config file < command-line \
                  overrides < CLADAPTER_SEED (seed only)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic task, fine-tune, and write metrics.csv plus a
    /// final checkpoint (and features.csv with export_features = true)
    Train(CommonArgs),
    /// Compare analytic gradients of the adapter + head loss against
    /// central finite differences, per parameter group
    GradCheck(GradCheckArgs),
    /// Recompute adapter outputs on the validation split from a checkpoint
    /// and write them to features.csv
    ExportFeatures(ExportArgs),
    /// Print the adapter parameter accounting for the configured dimensions
    ParamCount(CommonArgs),
    /// Generate the synthetic task and export its splits to CSV
    SynthGen(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Flat key = value configuration file
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct GradCheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Negate the analytic gradient of one group (0-5); fault-injection
    /// hook used by the test suite.
    #[arg(long, hide = true, value_name = "IDX")]
    corrupt_group: Option<usize>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint to load
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
}

/// Command-line overrides; each flag matches its config-file key.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long = "classes", value_name = "N")]
    classes: Option<String>,
    #[arg(long = "tokens_per_sample", value_name = "N")]
    tokens_per_sample: Option<String>,
    #[arg(long = "input_dim", value_name = "N")]
    input_dim: Option<String>,
    #[arg(long = "sigma", value_name = "FLOAT")]
    sigma: Option<String>,
    #[arg(long = "theta_shift_deg", value_name = "FLOAT")]
    theta_shift_deg: Option<String>,
    #[arg(long = "shift_translation", value_name = "FLOAT")]
    shift_translation: Option<String>,
    #[arg(long = "train_per_class", value_name = "N")]
    train_per_class: Option<String>,
    #[arg(long = "val_per_class", value_name = "N")]
    val_per_class: Option<String>,
    #[arg(long = "backbone_kind", value_name = "vit|cnn|video")]
    backbone_kind: Option<String>,
    #[arg(long = "backbone_init", value_name = "random|identity")]
    backbone_init: Option<String>,
    #[arg(long = "feature_dim", value_name = "N")]
    feature_dim: Option<String>,
    #[arg(long = "clusters", value_name = "N")]
    clusters: Option<String>,
    #[arg(long = "mlp_ratio", value_name = "N")]
    mlp_ratio: Option<String>,
    #[arg(long = "mode", value_name = "lp|ft|sft")]
    mode: Option<String>,
    #[arg(long = "stage1_epochs", value_name = "N")]
    stage1_epochs: Option<String>,
    #[arg(long = "stage2_epochs", value_name = "N")]
    stage2_epochs: Option<String>,
    #[arg(long = "lr", value_name = "FLOAT")]
    lr: Option<String>,
    #[arg(long = "weight_decay", value_name = "FLOAT")]
    weight_decay: Option<String>,
    #[arg(long = "beta1", value_name = "FLOAT")]
    beta1: Option<String>,
    #[arg(long = "beta2", value_name = "FLOAT")]
    beta2: Option<String>,
    #[arg(long = "adam_eps", value_name = "FLOAT")]
    adam_eps: Option<String>,
    #[arg(long = "batch_size", value_name = "N")]
    batch_size: Option<String>,
    #[arg(long = "seed", value_name = "N")]
    seed: Option<String>,
    #[arg(long = "out_dir", value_name = "PATH")]
    out_dir: Option<String>,
    #[arg(long = "export_features", value_name = "BOOL")]
    export_features: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        [
            ("classes", &self.classes),
            ("tokens_per_sample", &self.tokens_per_sample),
            ("input_dim", &self.input_dim),
            ("sigma", &self.sigma),
            ("theta_shift_deg", &self.theta_shift_deg),
            ("shift_translation", &self.shift_translation),
            ("train_per_class", &self.train_per_class),
            ("val_per_class", &self.val_per_class),
            ("backbone_kind", &self.backbone_kind),
            ("backbone_init", &self.backbone_init),
            ("feature_dim", &self.feature_dim),
            ("clusters", &self.clusters),
            ("mlp_ratio", &self.mlp_ratio),
            ("mode", &self.mode),
            ("stage1_epochs", &self.stage1_epochs),
            ("stage2_epochs", &self.stage2_epochs),
            ("lr", &self.lr),
            ("weight_decay", &self.weight_decay),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
            ("adam_eps", &self.adam_eps),
            ("batch_size", &self.batch_size),
            ("seed", &self.seed),
            ("out_dir", &self.out_dir),
            ("export_features", &self.export_features),
        ]
        .into_iter()
        .filter_map(|(key, value)| value.as_deref().map(|v| (key, v)))
        .collect()
    }
}

fn build_config(common: &CommonArgs) -> Result<ExperimentConfig, CliError> {
    let mut config = ExperimentConfig::default();
    if let Some(path) = &common.config {
        config.apply_file(path)?;
    }
    for (key, value) in common.overrides.pairs() {
        config.apply_kv(key, value)?;
    }
    config.apply_env()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Train(common) => {
            let config = build_config(&common)?;
            let artifacts = runner::run_experiment(&config)?;
            println!("wrote {}", artifacts.metrics_path.display());
            println!("wrote {}", artifacts.checkpoint_path.display());
            if let Some(path) = &artifacts.features_path {
                println!("wrote {}", path.display());
            }
            println!("final val_id accuracy:  {:.4}", artifacts.final_val_id_acc);
            println!("final val_ood accuracy: {:.4}", artifacts.final_val_ood_acc);
            Ok(ExitCode::SUCCESS)
        }
        Command::GradCheck(args) => {
            let config = build_config(&args.common)?;
            let report = runner::run_grad_check(&config, args.corrupt_group)?;
            for group in &report.groups {
                let sweep: Vec<String> = group
                    .errors
                    .iter()
                    .map(|(h, e)| format!("h={h:.0e} err={e:.3e}"))
                    .collect();
                println!("{:<12} {}", group.name, sweep.join("  "));
            }
            if report.passed() {
                println!(
                    "grad check: PASS (every group under {} at h=1e-5)",
                    runner::GRAD_CHECK_TOLERANCE
                );
                Ok(ExitCode::SUCCESS)
            } else {
                println!(
                    "grad check: FAIL (tolerance {} at h=1e-5)",
                    runner::GRAD_CHECK_TOLERANCE
                );
                Ok(ExitCode::FAILURE)
            }
        }
        Command::ExportFeatures(args) => {
            let config = build_config(&args.common)?;
            let path = runner::export_features(&config, &args.checkpoint)?;
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::ParamCount(common) => {
            let config = build_config(&common)?;
            let report = runner::param_count_report(&config);
            println!(
                "adapter (D={}, K={}, ratio={}):",
                config.feature_dim, config.clusters, config.mlp_ratio
            );
            println!("  centers:    {:>12}", report.centers);
            println!("  transforms: {:>12}", report.transforms);
            println!("  norms:      {:>12}", report.norms);
            println!("  mlp:        {:>12}", report.mlp);
            println!("  total:      {:>12}", report.adapter_total);
            println!(
                "head (D={}, C={}): {}",
                config.feature_dim, config.classes, report.head
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::SynthGen(common) => {
            let config = build_config(&common)?;
            let paths = runner::synth_gen(&config)?;
            for path in &paths {
                println!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                CliError::Config { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
