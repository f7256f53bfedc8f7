//! Command-line pipeline: corpus generation, training, inversion, latent experiments
//! and evaluation, driven by a flat config file.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod protocols;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::Command;
pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "texlab", version, about = "Texture analysis and synthesis lab")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Config file of key=value lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Serial execution with fixed seeds; reruns produce identical CSV files.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Generate the procedural corpus (or ingest corpus.input_dir).
    MakeCorpus,
    /// Train generator and discriminator on the corpus.
    TrainGan {
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Train the encoder against the frozen generator.
    TrainEncoder {
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Invert an image (or a generated texture) into the latent space.
    Invert {
        #[arg(long, value_parser = ["encoder", "mean_w", "random"])]
        init: Option<String>,
        #[arg(long, value_parser = ["style", "pixel", "content"])]
        loss: Option<String>,
        /// PNG to invert; defaults to a generated texture.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Latent or Gram-target interpolation strips.
    Interpolate {
        #[arg(long, value_parser = ["global", "local", "gram"])]
        mode: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        /// scale:<f>, color:<r>,<g>,<b> or identity (local mode).
        #[arg(long)]
        transform: Option<String>,
    },
    /// Crops of one generated texture by perturb-and-refine.
    Crops {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Evaluation protocols.
    Eval {
        #[arg(long, value_parser = ["table1", "table2", "fig9", "all"])]
        protocol: Option<String>,
    },
}

impl Sub {
    pub fn command(&self) -> Command {
        match self {
            Sub::MakeCorpus => Command::MakeCorpus,
            Sub::TrainGan { .. } => Command::TrainGan,
            Sub::TrainEncoder { .. } => Command::TrainEncoder,
            Sub::Invert { .. } => Command::Invert,
            Sub::Interpolate { .. } => Command::Interpolate,
            Sub::Crops { .. } => Command::Crops,
            Sub::Eval { .. } => Command::Eval,
        }
    }

    /// Config overrides implied by subcommand flags.
    fn overrides(&self) -> Vec<(&'static str, String)> {
        fn opt<T: ToString>(key: &'static str, v: &Option<T>) -> Option<(&'static str, String)> {
            v.as_ref().map(|v| (key, v.to_string()))
        }
        let list = match self {
            Sub::MakeCorpus => vec![],
            Sub::TrainGan { steps } => vec![opt("gan.steps", steps)],
            Sub::TrainEncoder { steps } => vec![opt("encoder.steps", steps)],
            Sub::Invert { init, loss, input, max_iters } => vec![
                opt("invert.init", init),
                opt("invert.loss", loss),
                opt("invert.input", &input.as_ref().map(|p| p.display().to_string())),
                opt("invert.max_iters", max_iters),
            ],
            Sub::Interpolate { mode, steps, transform } => {
                vec![opt("interpolate.mode", mode), opt("interpolate.steps", steps), opt("interpolate.transform", transform)]
            }
            Sub::Crops { count, sigma } => vec![opt("crops.count", count), opt("crops.sigma", sigma)],
            Sub::Eval { protocol } => vec![opt("eval.protocol", protocol)],
        };
        list.into_iter().flatten().collect()
    }
}

/// Defaults, then the config file, then `TEXLAB_*` variables, then flags.
pub fn resolve_config<I: IntoIterator<Item = (String, String)>>(cli: &Cli, env: I) -> CliResult<RunConfig> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env(env)?;
    for pair in &cli.global.set {
        cfg.set_pair(pair)?;
    }
    if let Some(seed) = cli.global.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(dir) = &cli.global.output_dir {
        cfg.set("output_dir", &dir.display().to_string())?;
    }
    for (k, v) in cli.command.overrides() {
        cfg.set(k, &v)?;
    }
    Ok(cfg)
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run_cli<I, E>(args: I, env: E) -> i32
where
    I: IntoIterator<Item = String>,
    E: IntoIterator<Item = (String, String)>,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = resolve_config(&cli, env).and_then(|cfg| commands::run(cli.command.command(), &cfg, cli.global.deterministic));
    match outcome {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
