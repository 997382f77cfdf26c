use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use perp_lab::lab::{acceptance, run_command, Command, ExperimentConfig, LabError};

#[derive(Parser)]
#[command(name = "perp-lab", version, about = "Counting and equidistribution of common perpendiculars in modular surfaces")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads; 0 uses the config value, then every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Cut the t grid at this value.
    #[arg(long, global = true)]
    t_max: Option<f64>,
    /// MeasureContext cache (JSON), reused when it matches the config.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Bowen-Margulis and skinning masses.
    Masses,
    /// Common perpendiculars up to the largest t.
    Census,
    /// Normalized counts on the t grid.
    Count,
    /// Equidistribution of the measures against the test functions.
    Equi,
    /// Initial and terminal direction histograms.
    Directions,
    /// Potential-weighted counts and measures.
    Weighted,
    /// Loops drawn in the modular domain.
    LoopsSvg,
    /// Runs the acceptance suite.
    Selftest,
}

impl Cmd {
    fn command(self) -> Option<Command> {
        Some(match self {
            Cmd::Masses => Command::Masses,
            Cmd::Census => Command::Census,
            Cmd::Count => Command::Count,
            Cmd::Equi => Command::Equi,
            Cmd::Directions => Command::Directions,
            Cmd::Weighted => Command::Weighted,
            Cmd::LoopsSvg => Command::LoopsSvg,
            Cmd::Selftest => return None,
        })
    }
}

fn pool(threads: usize) -> Result<rayon::ThreadPool, LabError> {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| LabError::Config(e.to_string()))
}

fn selftest(threads: usize) -> Result<ExitCode, LabError> {
    let results = pool(threads)?.install(|| {
        acceptance::CRITERIA
            .iter()
            .filter_map(|&(id, _)| {
                let r = acceptance::run(id)?;
                println!("{}", r.line());
                Some(r)
            })
            .collect::<Vec<_>>()
    });
    let failed = results.iter().filter(|r| !r.pass).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

fn write_outputs(dir: &Path, files: &[(String, String)]) -> Result<(), LabError> {
    std::fs::create_dir_all(dir)?;
    for (name, contents) in files {
        let path = dir.join(name);
        std::fs::write(&path, contents)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, LabError> {
    let Some(cmd) = cli.command.command() else {
        return selftest(cli.threads);
    };
    let path = cli.config.ok_or_else(|| LabError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(&path)?;
    if let Some(t) = cli.t_max {
        cfg = cfg.with_t_max(t)?;
    }
    let threads = if cli.threads > 0 { cli.threads } else { cfg.threads };
    let files = pool(threads)?.install(|| run_command(cmd, &cfg, cli.cache.as_deref()))?;
    write_outputs(&cli.out, &files)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("perp-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
