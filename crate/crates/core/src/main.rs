use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ddet::commands::{self, EvalOptions, Split, FINAL_CHECKPOINT};
use ddet::config::RunConfig;
use ddet::Error;

#[derive(Parser)]
#[command(name = "ddet", version, about = "Dynamic-filter super-resolution: train, evaluate, ablate, benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (`key = value` lines). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Use generated image pairs instead of `paths.data_root`.
    #[arg(long)]
    synthetic: bool,
    /// Overrides `train.steps`.
    #[arg(long)]
    steps: Option<usize>,
    /// Overrides `eval.shave`.
    #[arg(long)]
    shave: Option<usize>,
    /// Overrides `paths.out_dir`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Extra `key=value` assignments applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train with L1 loss and Adam.
    Train(Common),
    /// Score a checkpoint (or the identity) on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate; defaults to `<out_dir>/final.ddet`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// `none` evaluates the LR input itself.
        #[arg(long, value_parser = ["checkpoint", "none"], default_value = "checkpoint")]
        model: String,
        /// Split to score: `<data_root>/<split>/{lr,hr}`.
        #[arg(long, value_parser = ["train", "test"], default_value = "test")]
        split: String,
        /// Write outputs as PNG under `<out_dir>/images`.
        #[arg(long)]
        dump_images: bool,
    },
    /// Train and score the four ablation configurations.
    Ablate(Common),
    /// Time forward passes of several model presets.
    Bench(Common),
}

fn load_config(c: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io(io) => Error::Config {
                line: 0,
                message: format!("{}: {io}", p.display()),
            },
            other => other,
        })?,
        None => RunConfig::default(),
    };
    for kv in &c.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config {
            line: 0,
            message: format!("--set expects KEY=VALUE, got `{kv}`"),
        })?;
        cfg.set(0, k.trim(), v.trim())?;
    }
    if let Some(s) = c.seed {
        cfg.train.seed = s;
    }
    if let Some(s) = c.steps {
        cfg.train.steps = s;
    }
    if let Some(s) = c.shave {
        cfg.eval.shave = s;
    }
    if let Some(d) = &c.out_dir {
        cfg.paths.out_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    let common = match &cli.command {
        Command::Train(c) | Command::Ablate(c) | Command::Bench(c) => c,
        Command::Eval { common, .. } => common,
    };
    let cfg = load_config(common)?;
    if common.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    match &cli.command {
        Command::Train(c) => {
            let out = commands::cmd_train(&cfg, c.synthetic)?;
            println!("loss log: {}", out.loss_csv.display());
            println!("checkpoint: {}", out.checkpoint.display());
            if let Some(p) = out.final_psnr {
                println!("final train psnr ({}): {p:.4} dB", cfg.eval.mode);
            }
        }
        Command::Eval {
            common,
            checkpoint,
            model,
            split,
            dump_images,
        } => {
            let opts = EvalOptions {
                split: if split == "train" { Split::Train } else { Split::Test },
                checkpoint: (model != "none")
                    .then(|| checkpoint.clone().unwrap_or_else(|| cfg.paths.out_dir.join(FINAL_CHECKPOINT))),
                dump_images: *dump_images,
            };
            let records = commands::cmd_eval(&cfg, common.synthetic, &opts)?;
            println!("{}", commands::metric_note(&cfg));
            for r in &records {
                println!("{}", r.csv_row());
            }
            println!("{}", commands::format_aggregate(&records));
        }
        Command::Ablate(c) => {
            let rows = commands::cmd_ablate(&cfg, c.synthetic)?;
            println!("{}\n", commands::metric_note(&cfg));
            print!("{}", commands::ablation_table(&rows));
        }
        Command::Bench(_) => {
            let (table, _) = commands::cmd_bench(&cfg)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
