use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nvesr_cli::{cmd_deconvolve, cmd_fit, cmd_pipeline, cmd_simulate, cmd_theory, CliError, RunConfig};

#[derive(Parser)]
#[command(
    name = "nvesr",
    version,
    about = "NV relaxometry: theory, simulation, rate fits and spectral reconstruction"
)]
struct Cli {
    /// JSON config file; omitted keys take their defaults.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Also render SVG line charts.
    #[arg(long, global = true)]
    svg: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic rate profile, bath spectrum and peak table.
    Theory,
    /// Synthetic decay record for the configured sweep.
    Simulate,
    /// Fit per-field relaxation rates to a record CSV.
    Fit { record: PathBuf },
    /// Reconstruct the bath spectrum from a rate-profile CSV.
    Deconvolve { profile: PathBuf },
    /// Theory, simulation, fit and reconstruction with a manifest.
    Pipeline,
    /// Print the resolved configuration.
    Config,
}

fn diverged(out: &Path) -> CliError {
    CliError::Numerical(format!(
        "deconvolution diverged; partial results in {}",
        out.join("diagnostics.json").display()
    ))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let out = cli.output.clone().unwrap_or_else(|| cfg.output_dir.clone());
    match cli.command {
        Command::Theory => {
            let t = cmd_theory(&cfg, &out, cli.svg)?;
            print!("{}", t.table);
        }
        Command::Simulate => {
            let s = cmd_simulate(&cfg, &out, cli.svg)?;
            println!("wrote {} curves to {}", s.record.curves.len(), s.files[0].display());
        }
        Command::Fit { record } => {
            let f = cmd_fit(&record, &cfg, &out, cli.svg)?;
            let bad = f.profile.converged.iter().filter(|c| !**c).count();
            if bad > 0 {
                eprintln!("warning: {bad} field points did not converge");
            }
            println!("wrote {}", f.files[0].display());
        }
        Command::Deconvolve { profile } => {
            let d = cmd_deconvolve(&profile, &cfg, &out, cli.svg)?;
            if d.diverged() {
                return Err(diverged(&out));
            }
            println!(
                "wrote {}; peaks at {:?} MHz",
                d.files[0].display(),
                d.diagnostics.peaks_mhz
            );
        }
        Command::Pipeline => {
            let p = cmd_pipeline(&cfg, &out, cli.svg)?;
            print!("{}", p.theory.table);
            if p.deconv.diverged() {
                return Err(diverged(&out));
            }
            println!("peaks at {:?} MHz", p.deconv.diagnostics.peaks_mhz);
            println!("wrote {}", out.join("manifest.json").display());
        }
        Command::Config => println!("{}", cfg.to_json()),
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
