use std::path::PathBuf;
use std::process::ExitCode;

use ader_lts::driver::{self, LambdaMode, Mode, RunConfig};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// ADER-DG wave propagation with clustered local time stepping.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster, partition and write per-partition input files.
    Preprocess(ConfigArgs),
    /// Run preprocessed partitions and write seismograms.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Preprocess first (mode = both).
        #[arg(long)]
        preprocess: bool,
    },
    /// Summarize an output directory, optionally against a reference run.
    Report {
        /// Output directory of a run; taken from the config if omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        /// TOML run configuration whose output directory to read.
        #[arg(long, short)]
        config: Option<PathBuf>,
        /// Output directory whose seismograms serve as reference.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Lts,
    Gts,
}

/// A TOML config plus command line overrides for its scalar keys.
#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[arg(long)]
    materials: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    #[arg(long)]
    order: Option<usize>,
    /// 32 or 64.
    #[arg(long)]
    precision: Option<u32>,
    #[arg(long)]
    mechanisms: Option<usize>,
    #[arg(long)]
    center_frequency: Option<f64>,
    #[arg(long)]
    clusters: Option<usize>,
    /// A value in (0.5, 1] or "optimize".
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    cfl: Option<f64>,
    #[arg(long)]
    partitions: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    /// Disable intra-partition element parallelism.
    #[arg(long)]
    no_threads: bool,
}

impl ConfigArgs {
    fn resolve(&self, mode: Mode) -> Result<RunConfig> {
        let mut t = match &self.config {
            Some(p) => RunConfig::load_table(p)?,
            None => toml::Table::new(),
        };
        let mut set = |k: &str, v: toml::Value| {
            t.insert(k.to_string(), v);
        };
        let path = |p: &PathBuf| toml::Value::String(p.display().to_string());
        let int = |n: usize| toml::Value::Integer(n as i64);
        if let Some(p) = &self.mesh {
            set("mesh", path(p));
        }
        if let Some(p) = &self.materials {
            set("materials", path(p));
        }
        if let Some(p) = &self.output {
            set("output", path(p));
        }
        if let Some(s) = self.scheme {
            let s = match s {
                SchemeArg::Lts => "lts",
                SchemeArg::Gts => "gts",
            };
            set("scheme", toml::Value::String(s.into()));
        }
        for (k, v) in [
            ("order", self.order),
            ("mechanisms", self.mechanisms),
            ("clusters", self.clusters),
            ("partitions", self.partitions),
            ("width", self.width),
            ("samples", self.samples),
        ] {
            if let Some(v) = v {
                set(k, int(v));
            }
        }
        if let Some(p) = self.precision {
            set("precision", toml::Value::Integer(p as i64));
        }
        for (k, v) in [("center_frequency", self.center_frequency), ("cfl", self.cfl), ("t_end", self.t_end)] {
            if let Some(v) = v {
                set(k, toml::Value::Float(v));
            }
        }
        if let Some(l) = &self.lambda {
            let v = match LambdaMode::parse(l)? {
                LambdaMode::Fixed(x) => toml::Value::Float(x),
                LambdaMode::Named(_) => toml::Value::String("optimize".into()),
            };
            set("lambda", v);
        }
        if self.no_threads {
            set("threads", toml::Value::Boolean(false));
        }
        set(
            "mode",
            toml::Value::String(
                match mode {
                    Mode::Preprocess => "preprocess",
                    Mode::Run => "run",
                    Mode::Both => "both",
                }
                .into(),
            ),
        );
        let cfg = RunConfig::from_table(t)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(args) => {
            let cfg = args.resolve(Mode::Preprocess)?;
            let s = driver::preprocess(&cfg).context("preprocess failed")?;
            println!(
                "{} elements, {} clusters (lambda {:.2}), theoretical speedup {:.3}, {} partitions",
                s.elements, s.clusters, s.lambda, s.theoretical_speedup, s.partitions
            );
        }
        Command::Run { config, preprocess } => {
            let cfg = config.resolve(if preprocess { Mode::Both } else { Mode::Run })?;
            let out = driver::execute(&cfg).context("run failed")?;
            let s = out.run.expect("run mode produces a run summary");
            println!(
                "{} element updates ({} lockstep), realized speedup {:.3}, {:.3} s",
                s.lts_updates, s.gts_updates, s.realized_speedup, s.wall_seconds
            );
        }
        Command::Report { output, config, reference } => {
            let output = match (output, config) {
                (Some(o), _) => o,
                (None, Some(c)) => RunConfig::load(&c)?.output,
                (None, None) => bail!("report needs --output or --config"),
            };
            let r = driver::report(&output, reference.as_deref())?;
            print!("{}", r.text);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
