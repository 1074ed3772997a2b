use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hermite_nls::harness::{self, ExperimentConfig, ExperimentKind};
use hermite_nls::Error;

/// Hermite-spectral NLS simulator and Monte Carlo experiments.
#[derive(Parser)]
#[command(name = "hnls", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw initial data and record their norms.
    Sample(Common),
    /// Evolve initial data and record the conservation laws.
    Evolve(Common),
    /// Fit the almost-sure decay exponent of the NLS-side norm.
    DecayScan(Common),
    /// Extract scattering profiles and Cauchy increments.
    Scatter(Common),
    /// Estimate the weighted measure of evolved sets.
    MeasureRatio(Common),
    /// Kernel, eigenfunction-bound, Liouville and tail checks.
    Diagnostics(Common),
}

#[derive(Args)]
struct Common {
    /// Configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; overrides `experiment.threads`.
    #[arg(long)]
    threads: Option<usize>,
    /// `section.key=value`, applied after the file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn resolve(kind: ExperimentKind, c: &Common) -> Result<ExperimentConfig, Error> {
    let base = match &c.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            if cfg.experiment.kind != kind {
                return Err(Error::Config(format!(
                    "{} declares experiment.kind = {}, but the subcommand is {}",
                    path.display(),
                    cfg.experiment.kind.as_str(),
                    kind.as_str()
                )));
            }
            cfg
        }
        None => ExperimentConfig::defaults(kind),
    };
    let mut ov = c.overrides.clone();
    if let Some(s) = c.seed {
        ov.push(format!("experiment.seed={s}"));
    }
    if let Some(t) = c.threads {
        ov.push(format!("experiment.threads={t}"));
    }
    if let Some(o) = &c.out {
        ov.push(format!("output.dir={}", toml::Value::String(o.display().to_string())));
    }
    base.with_overrides(&ov)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (kind, common) = match &cli.command {
        Command::Sample(c) => (ExperimentKind::Sample, c),
        Command::Evolve(c) => (ExperimentKind::Evolve, c),
        Command::DecayScan(c) => (ExperimentKind::DecayScan, c),
        Command::Scatter(c) => (ExperimentKind::Scatter, c),
        Command::MeasureRatio(c) => (ExperimentKind::MeasureRatio, c),
        Command::Diagnostics(c) => (ExperimentKind::Diagnostics, c),
    };
    let result = resolve(kind, common).and_then(|cfg| {
        let out = harness::run(&cfg)?;
        let dir = PathBuf::from(&cfg.output.dir);
        harness::write_outputs(&out, &cfg, &dir)?;
        Ok((out, dir))
    });
    match result {
        Ok((out, dir)) => {
            // a closed stdout (e.g. piped into `head`) must not change the exit code
            let mut stdout = std::io::stdout().lock();
            for c in &out.checks {
                let tag = match c.passed {
                    Some(true) => "PASS",
                    Some(false) => "FAIL",
                    None => "INFO",
                };
                let _ = writeln!(stdout, "{tag} {:<28} {:>14.6e}  {}", c.name, c.value, c.detail);
            }
            let _ = writeln!(stdout, "{} records written to {}", out.records.len(), dir.display());
            ExitCode::from(out.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
