use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use onesided::classes::Flavor;
use onesided::io::Encoding;
use onesided::report::{self, Command, Extent, Report, RunConfig, Source};

/// Exact dyadic one-sided weight classes, maximal operators and weak-type checks on grids.
#[derive(Parser)]
#[command(name = "onesided", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Restricted and classical class constants of a weight pair.
    Constant(Common),
    /// Check a weak-type statement and report every certificate.
    Verify {
        #[command(subcommand)]
        which: VerifyCmd,
    },
    /// Evaluate a maximal operator on a set indicator (or on w).
    Maximal {
        #[command(flatten)]
        common: Common,
        /// dyadic-plus, dyadic-minus, anchored, subsquare-1, subsquare-2, subsquare-3
        #[arg(long, default_value = "dyadic-plus")]
        operator: String,
        /// Smallest side for the subsquare operators.
        #[arg(long)]
        xi: Option<f64>,
        /// Use the brute-force evaluator.
        #[arg(long)]
        oracle: bool,
    },
    /// Rerun the configuration embedded in a report.
    Replay {
        report: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum VerifyCmd {
    Dyadic(Common),
    Planar(Common),
    Necessity(Common),
    Sharpness {
        #[command(flatten)]
        common: Common,
        /// Random-search moves per trial.
        #[arg(long, default_value_t = 100)]
        budget: usize,
        /// Keep w = v = 1 and search over sets only.
        #[arg(long)]
        unweighted: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FlavorArg {
    Dyadic,
    /// Same as anchored.
    Planar,
    Anchored,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncodingArg {
    Text,
    F64le,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    depth: Option<i32>,
    /// Extent cube as LEVEL@A,B,.. (side 2^-LEVEL, anchor in units of the side).
    #[arg(long, allow_hyphen_values = true)]
    extent: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    /// Weight pair from a grid manifest.
    #[arg(long, conflicts_with = "gen")]
    pair: Option<PathBuf>,
    /// Weight pair from a generator, e.g. "loguniform(lo=0.1, hi=10)".
    #[arg(long)]
    gen: Option<String>,
    /// Set from a grid manifest.
    #[arg(long, conflicts_with = "gen_set")]
    set: Option<PathBuf>,
    /// Set from a generator, e.g. "random(density=0.2)".
    #[arg(long)]
    gen_set: Option<String>,
    /// Comma-separated thresholds.
    #[arg(long, value_delimiter = ',')]
    t: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "dyadic")]
    flavor: FlavorArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Table of t against lhs and rhs.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Grid manifest for the computed field.
    #[arg(long)]
    dump: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "f64le")]
    encoding: EncodingArg,
    /// Vacuous checks (infinite constant) count as failures.
    #[arg(long)]
    strict: bool,
    /// Include wall time in the report.
    #[arg(long)]
    timing: bool,
}

fn parse_extent(s: &str) -> Result<Extent, String> {
    let (level, anchor) = s.split_once('@').ok_or_else(|| format!("extent '{s}' is not LEVEL@A,B,.."))?;
    let level = level.trim().parse().map_err(|e| format!("extent level '{level}': {e}"))?;
    let anchor = anchor
        .split(',')
        .map(|a| a.trim().parse().map_err(|e| format!("extent anchor '{a}': {e}")))
        .collect::<Result<_, String>>()?;
    Ok(Extent { level, anchor })
}

impl Common {
    fn config(self, command: Command) -> Result<RunConfig, String> {
        let mut c = RunConfig::new(command);
        c.dim = self.dim;
        c.depth = self.depth;
        c.extent = self.extent.as_deref().map(parse_extent).transpose()?;
        c.p = self.p;
        c.pair = self.pair.map(Source::File).or(self.gen.map(Source::Gen));
        c.set = self.set.map(Source::File).or(self.gen_set.map(Source::Gen));
        c.t = self.t;
        c.flavor = match self.flavor {
            FlavorArg::Dyadic => Flavor::Dyadic,
            FlavorArg::Planar | FlavorArg::Anchored => Flavor::Anchored,
        };
        c.seed = self.seed;
        c.out = self.out;
        c.csv = self.csv;
        c.dump = self.dump;
        c.encoding = match self.encoding {
            EncodingArg::Text => Encoding::Text,
            EncodingArg::F64le => Encoding::F64le,
        };
        c.strict = self.strict;
        c.timing = self.timing;
        Ok(c)
    }
}

struct Job {
    config: RunConfig,
    out: Option<PathBuf>,
    csv: Option<PathBuf>,
    /// Original report text when replaying.
    original: Option<String>,
}

fn build(cmd: Cmd) -> Result<Job, String> {
    let config = match cmd {
        Cmd::Constant(c) => c.config(Command::Constant)?,
        Cmd::Verify { which } => match which {
            VerifyCmd::Dyadic(c) => c.config(Command::VerifyDyadic)?,
            VerifyCmd::Planar(c) => c.config(Command::VerifyPlanar)?,
            VerifyCmd::Necessity(c) => c.config(Command::VerifyNecessity)?,
            VerifyCmd::Sharpness { common, budget, unweighted } => {
                let mut c = common.config(Command::VerifySharpness)?;
                c.budget = budget;
                c.unweighted = unweighted;
                c
            }
        },
        Cmd::Maximal { common, operator, xi, oracle } => {
            let mut c = common.config(Command::Maximal)?;
            c.operator = Some(operator);
            c.xi = xi;
            c.oracle = oracle;
            c
        }
        Cmd::Replay { report, out, csv } => {
            let text = std::fs::read_to_string(&report).map_err(|e| format!("{}: {e}", report.display()))?;
            let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| format!("{}: not JSON: {e}", report.display()))?;
            let config: RunConfig = serde_json::from_value(value["config"].clone()).map_err(|e| format!("{}: bad embedded config: {e}", report.display()))?;
            return Ok(Job {
                config,
                out,
                csv,
                original: Some(text),
            });
        }
    };
    Ok(Job {
        out: config.out.clone(),
        csv: config.csv.clone(),
        config,
        original: None,
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), String> {
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn emit(report: &Report, json: &str, out: Option<&Path>, csv: Option<&Path>) -> Result<(), String> {
    match out {
        Some(path) => write_file(path, &format!("{}\n", json.trim_end()))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{}", json.trim_end()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(format!("stdout: {e}")),
                _ => {}
            }
        }
    }
    if let Some(path) = csv {
        match report.csv() {
            Some(table) => write_file(path, &table)?,
            None => eprintln!("onesided: no table for this command, {} not written", path.display()),
        }
    }
    Ok(())
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("ONESIDED_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| format!("ONESIDED_THREADS='{raw}' is not a thread count"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn run(cli: Cli) -> Result<i32, String> {
    configure_threads()?;
    let job = build(cli.command)?;
    let report = report::execute(&job.config).map_err(|e| e.to_string())?;
    let json = report.to_json();
    emit(&report, &json, job.out.as_deref(), job.csv.as_deref())?;
    for f in &report.summary.findings {
        eprintln!("onesided: {f}");
    }
    if let Some(original) = job.original {
        if original.trim_end() == json.trim_end() {
            eprintln!("onesided: replay reproduced the report exactly");
        } else if job.config.timing {
            eprintln!("onesided: replay differs from the original (timed reports carry wall time)");
        } else {
            eprintln!("onesided: replay differs from the original report");
            return Ok(1);
        }
    }
    Ok(report.summary.exit_code)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(msg) => {
            eprintln!("onesided: error: {msg}");
            ExitCode::from(2)
        }
    }
}
