use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use nlslab::acceptance::Suite;
use nlslab::{Cache, ExperimentConfig, Kind, LabError};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Ground,
    Spectrum,
    Reduced,
    Evolve,
    Shadow,
    Sweep,
    Acceptance,
}

/// Runs one experiment from a TOML config, or the acceptance suite over a
/// directory of configs. The cache directory comes from NLSLAB_CACHE_DIR.
#[derive(Debug, Parser)]
#[command(name = "nlslab", version)]
struct Cli {
    kind: Command,
    /// Config file, or the config directory for `acceptance`.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: &Cli) -> Result<bool, LabError> {
    let cache = Cache::from_env();
    let kind = match cli.kind {
        Command::Acceptance => {
            let suite = Suite::new(&cli.config, cache);
            let report = suite.run_all()?;
            for r in &report.results {
                println!("{}", r.line());
            }
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out/acceptance"));
            std::fs::create_dir_all(&out).map_err(|source| LabError::Io {
                path: out.display().to_string(),
                source,
            })?;
            nlslab::store::write_json(&out.join("acceptance.json"), &report)?;
            return Ok(report.all_passed());
        }
        Command::Ground => Kind::Ground,
        Command::Spectrum => Kind::Spectrum,
        Command::Reduced => Kind::Reduced,
        Command::Evolve => Kind::Evolve,
        Command::Shadow => Kind::Shadow,
        Command::Sweep => Kind::Sweep,
    };
    let cfg = ExperimentConfig::load(&cli.config)?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(kind.label()));
    let report = nlslab::runs::run(kind, &cfg, &out, &cache)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    eprintln!("artifacts in {}", out.display());
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
