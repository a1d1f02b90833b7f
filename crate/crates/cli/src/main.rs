use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use elastolab::commands::{self, Method};
use elastolab::layout::{self, Layout};
use elastolab::{CliError, Result, RunConfig};
use elastolab_core::phantom::PhantomClass;

#[derive(Debug, Parser)]
#[command(name = "elastolab", version, about = "MRE phantom simulation, stiffness inversion and evaluation")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample phantom specs and render their stiffness maps.
    Phantom {
        /// homogeneous, linear_gradient, four_random_inclusions,
        /// two_random_inclusions or four_fixed_inclusions
        #[arg(long)]
        class: String,
        #[arg(long)]
        count: usize,
    },
    /// Solve the forward problem for phantom specs (default: all in <out>/phantoms).
    Simulate { specs: Vec<PathBuf> },
    /// Split simulated fields into train/val/test patch sets (default: all in <out>/fields).
    Dataset { fields: Vec<PathBuf> },
    /// Train the network on the dataset.
    Train,
    /// Reconstruct stiffness maps (default: the test split, or all fields).
    Invert {
        #[arg(long)]
        method: String,
        /// Network checkpoint for `--method dime` (default <out>/model/model.dimc).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        fields: Vec<PathBuf>,
    },
    /// Compare both methods against ground truth (default: the test split).
    Evaluate { cases: Vec<String> },
    /// Render figures for an evaluation report (default <out>/eval/report.csv).
    Report {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Print the effective configuration as TOML.
    Config,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let out = Layout::new(&cfg.out);
    match cli.command {
        Command::Phantom { class, count } => {
            let class: PhantomClass = class.parse().map_err(|e: elastolab_core::Error| CliError::validation(e.to_string()))?;
            let specs = commands::cmd_phantom(&cfg, class, count)?;
            println!("wrote {} {class} phantoms to {}", specs.len(), out.phantoms().display());
        }
        Command::Simulate { specs } => {
            let specs = if specs.is_empty() { commands::default_specs(&cfg)? } else { specs };
            let fields = commands::cmd_simulate(&cfg, &specs)?;
            println!("simulated {} fields into {}", fields.len(), out.fields().display());
        }
        Command::Dataset { fields } => {
            let fields = if fields.is_empty() { layout::list(&out.fields(), ".u.mreg")? } else { fields };
            let manifest = commands::cmd_dataset(&cfg, &fields)?;
            for split in commands::SPLITS {
                let entries: Vec<_> = manifest.entries.iter().filter(|e| e.split == split).collect();
                let patches: usize = entries.iter().map(|e| e.patches).sum();
                println!("{split}: {} fields, {patches} patches", entries.len());
            }
        }
        Command::Train => {
            let summary = commands::cmd_train(&cfg, |r| {
                eprintln!("epoch {:3}  lr {:.3e}  train {:.5}  val {:.5}", r.epoch, r.lr, r.train_loss, r.val_loss)
            })?;
            println!(
                "best epoch {} of {} (val loss {:.5}) -> {}",
                summary.best_epoch,
                summary.epochs_run,
                summary.best_val_loss,
                summary.checkpoint.display()
            );
        }
        Command::Invert { method, checkpoint, fields } => {
            let method: Method = method.parse()?;
            let fields = if fields.is_empty() { commands::default_fields(&cfg)? } else { fields };
            for summary in commands::cmd_invert(&cfg, method, &fields, checkpoint.as_deref())? {
                println!("{summary}");
            }
        }
        Command::Evaluate { cases } => {
            let cases = if cases.is_empty() { commands::default_cases(&cfg)? } else { cases };
            let (path, rows) = commands::cmd_evaluate(&cfg, &cases)?;
            for r in rows.iter().filter(|r| r.case_id == "ALL") {
                let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
                println!("{}: n {} R2 {} bias {} kPa", r.method_pair, r.n, fmt(r.r2), fmt(r.ba_bias));
            }
            println!("report -> {}", path.display());
        }
        Command::Report { input } => {
            let files = commands::cmd_report(&cfg, input.as_deref())?;
            println!("wrote {} files to {}", files.len(), out.report().display());
        }
        Command::Config => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
