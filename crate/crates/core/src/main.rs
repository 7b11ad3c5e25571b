use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ensemble_core::harness::{self, Overrides};

#[derive(Parser)]
#[command(name = "ensemble", version, about = "Run ensemble-density scenarios and write reports, tables and field bundles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a scenario once per value of one parameter.
    Sweep {
        config: PathBuf,
        /// Dotted path into the config, e.g. `scenario.bell.peak_angle`.
        #[arg(long)]
        param: String,
        /// Comma-separated JSON values; arrays and objects may contain commas.
        #[arg(long)]
        values: String,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides { seed: self.seed, out_dir: self.out_dir.clone(), threads: self.threads }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, common } => run(config, &common.overrides()),
        Command::Sweep { config, param, values, common } => sweep(config, param, values, &common.overrides()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(path: &Path, o: &Overrides) -> ensemble_core::Result<bool> {
    let cfg = harness::apply(harness::load_config(path)?, o);
    let out = harness::output_dir(&cfg);
    let (report, timing) = harness::run_scenario(&cfg, &out)?;
    for line in harness::summary_lines(&report.checks) {
        println!("{line}");
    }
    if let Some(e) = &report.error {
        eprintln!("scenario {} failed: {e}", report.scenario);
    }
    for c in report.checks.iter().filter(|c| !c.passed) {
        eprintln!("residual {}: measured {:e}, limit {:e}", c.name, c.measured, c.limit);
    }
    println!("{} {} in {:.1} s, report in {}", report.scenario, if report.passed { "passed" } else { "FAILED" }, timing.total_seconds, out.join(harness::REPORT).display());
    Ok(report.passed)
}

fn sweep(path: &Path, param: &str, values: &str, o: &Overrides) -> ensemble_core::Result<bool> {
    let text = std::fs::read_to_string(path)?;
    let summary = harness::sweep(&text, param, &harness::split_values(values), o)?;
    for r in &summary.runs {
        let status = if r.error.is_some() { "ERROR" } else if r.passed { "PASS" } else { "FAIL" };
        println!("{status} {param}={} {}", r.value, r.error.as_deref().unwrap_or(""));
    }
    Ok(summary.passed)
}
