use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use gps_fluid::harness::{
    asymptote_table, parse_config_with, run_experiment, run_tandem, validate_suite, write_asymptote_csv,
    write_report_csv, EngineKind, ExperimentReport, Overrides,
};
use gps_fluid::{Error, Result};

/// Two-class GPS fluid queue experiments.
#[derive(Parser, Debug)]
#[command(name = "gps-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the configured system and tabulate P(Q1 > u) against its asymptote.
    Simulate(RunArgs),
    /// Evaluate the closed-form asymptote on the level grid.
    Asymptote(RunArgs),
    /// Sample the tandem difference V and compare with its tail asymptote.
    Tandem(RunArgs),
    /// Run acceptance checks: oracles, scenario1..scenario4, stable,
    /// discretization, classifier, horizon, or all.
    Validate {
        #[arg(default_value = "all")]
        selector: String,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EngineArg {
    Event,
    Discrete,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    engine: Option<EngineArg>,
    /// Comma-separated levels, e.g. `1,10,100`.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    /// Replications for `simulate`, samples for `tandem`.
    #[arg(long)]
    replications: Option<u32>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            engine: self.engine.map(|e| match e {
                EngineArg::Event => EngineKind::Event,
                EngineArg::Discrete => EngineKind::Discrete,
            }),
            levels: self.levels.clone(),
            replications: self.replications,
            out: self.out.clone(),
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Writes the report and its manifest; a partial run still yields the CSV
/// with its marker row before failing.
fn finish_report(report: &ExperimentReport, out: Option<&Path>) -> Result<()> {
    let mut w = open_out(out)?;
    write_report_csv(&mut w, &report.rows, report.error.as_deref())?;
    w.flush()?;
    let manifest = report.manifest.render();
    match out {
        Some(p) => {
            let mut name = p.as_os_str().to_owned();
            name.push(".manifest");
            std::fs::write(PathBuf::from(name), manifest)?;
        }
        None => eprint!("{manifest}"),
    }
    match &report.error {
        Some(e) => Err(Error::Estimation(format!("run stopped early: {e}"))),
        None => Ok(()),
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate(args) => {
            let x = parse_config_with(&args.config, &args.overrides())?;
            warn(&x.warnings);
            let report = run_experiment(&x);
            finish_report(&report, x.csv.as_deref())?;
        }
        Command::Asymptote(args) => {
            let x = parse_config_with(&args.config, &args.overrides())?;
            warn(&x.warnings);
            let rows = asymptote_table(&x)?;
            let mut w = open_out(x.csv.as_deref())?;
            write_asymptote_csv(&mut w, &rows)?;
            w.flush()?;
        }
        Command::Tandem(args) => {
            let x = parse_config_with(&args.config, &args.overrides())?;
            warn(&x.warnings);
            let report = run_tandem(&x)?;
            finish_report(&report, x.csv.as_deref())?;
        }
        Command::Validate { selector } => {
            let outcomes = validate_suite(&selector)?;
            let mut stdout = io::stdout().lock();
            for o in &outcomes {
                writeln!(stdout, "{o}")?;
            }
            return Ok(outcomes.iter().all(|o| o.pass));
        }
    }
    Ok(true)
}

fn warn(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {}", one_line(w));
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments");
            eprintln!("{}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let code = if matches!(e, Error::Config(_)) { 2 } else { 1 };
            eprintln!("error: {}", one_line(&e.to_string()));
            ExitCode::from(code)
        }
    }
}
