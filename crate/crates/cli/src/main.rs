use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use widac_cli::commands::{self, Command};
use widac_cli::config::{PipelineConfig, Scale};

#[derive(Parser)]
#[command(name = "widac", version, about = "Meta-learned wireless channel dataset synthesis")]
struct Cli {
    /// TOML file merged over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Scale::Desk)]
    scale: Scale,
    #[command(subcommand)]
    cmd: Top,
}

#[derive(Subcommand)]
enum Top {
    #[command(flatten)]
    Run(Command),
    /// Re-run a recorded command and check its outputs bit for bit.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Print the resolved config as TOML.
    ShowConfig,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut log = |m: &str| eprintln!("[widac] {m}");
    let resolve = || -> anyhow::Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load(cli.scale, cli.config.as_deref())?;
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    };
    match &cli.cmd {
        Top::Run(cmd) => {
            let cfg = resolve()?;
            let m = commands::execute(cmd, &cfg, &cli.out_dir, &mut log)?;
            for name in m.outputs.keys() {
                println!("{}", cli.out_dir.join(name).display());
            }
        }
        Top::Replay { manifest } => {
            let differ = commands::replay(manifest, &cli.out_dir, &mut log)?;
            if !differ.is_empty() {
                anyhow::bail!("replay differs from the recorded run in: {}", differ.join(", "));
            }
            println!("replay matches {}", manifest.display());
        }
        Top::ShowConfig => print!("{}", resolve()?.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
