use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use oipm::centering::phase_one;
use oipm::checks::{run_suite, Suite};
use oipm::error::{Error, Result};
use oipm::opf::{build_encoding, generate_loads, LoadRule, NetworkCase};
use oipm::runner::{run_to_dir, ExperimentConfig};

const EXIT_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "oipm", version, about = "Online interior-point methods for time-varying conic programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a property battery: barriers, newton, lemmas, theorems or opf.
    Check {
        suite: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Power-flow case utilities.
    Opf {
        #[command(subcommand)]
        command: OpfCommand,
    },
    /// Load stream utilities.
    Stream {
        #[command(subcommand)]
        command: StreamCommand,
    },
}

#[derive(Subcommand)]
enum OpfCommand {
    /// Encode a case and write `dimensions.json` and `problem.json`.
    Build {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    InverseSqrt,
    RandomWalk,
    Constant,
}

#[derive(Subcommand)]
enum StreamCommand {
    /// Generate a load stream as CSV (`t,p_1,…`), one row per round.
    Gen {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(short = 'T', long = "horizon")]
        horizon: usize,
        #[arg(long, value_enum, default_value = "inverse-sqrt")]
        rule: RuleArg,
        #[arg(long, default_value_t = 0.01)]
        scale: f64,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn init_logging() -> std::result::Result<(), String> {
    let level = std::env::var("OIPM_LOG").unwrap_or_else(|_| "warn".into());
    if !["error", "warn", "info", "debug"].contains(&level.as_str()) {
        return Err(format!("OIPM_LOG must be one of error, warn, info, debug; got '{level}'"));
    }
    env_logger::Builder::new().parse_filters(&level).init();
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn cmd_run(config: &Path, out: Option<PathBuf>) -> Result<u8> {
    let cfg = ExperimentConfig::from_file(config)?;
    let out = out
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set `output`".into()))?;
    let outcome = run_to_dir(&cfg, &out)?;
    let s = &outcome.summary;
    println!(
        "{:?}: T = {}, R_d = {:.6e}, R_eps = {:.6e}, Vio = {:.6e}, V_b = {:.6e}",
        s.algorithm, s.horizon, s.totals.regret, s.totals.eps_regret, s.totals.violation, s.totals.b_variation
    );
    if let Some(b) = &s.bounds {
        if !b.passed {
            warn!("a regret or violation bound check failed; see summary.json");
        }
    }
    println!("artifacts written to {}", out.display());
    Ok(0)
}

fn cmd_check(suite: &str, seed: u64, json: bool) -> Result<u8> {
    let suite: Suite = suite.parse()?;
    let report = run_suite(suite, seed)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        for c in &report.checks {
            println!("{c}");
        }
        println!("{suite}: {}", if report.passed { "PASS" } else { "FAIL" });
    }
    Ok(if report.passed { 0 } else { EXIT_FAILED })
}

fn cmd_opf_build(case: &Path, out: &Path) -> Result<u8> {
    let case = NetworkCase::load(case)?;
    let enc = build_encoding(&case)?;
    fs::create_dir_all(out)?;
    let dims = enc.dimensions();
    write_json(&out.join("dimensions.json"), &dims)?;
    write_json(&out.join("problem.json"), &enc.problem.to_spec())?;
    println!(
        "N = {}, P = {} ({} dependent rows removed), {} terms, v_f = {}",
        dims.n, dims.p, dims.removed_rows, dims.terms, dims.complexity
    );
    Ok(0)
}

fn cmd_stream_gen(case: &Path, seed: u64, horizon: usize, rule: LoadRule, out: Option<&Path>) -> Result<u8> {
    let case = NetworkCase::load(case)?;
    let enc = build_encoding(&case)?;
    let stream = generate_loads(&enc, rule, seed, horizon, |_, b| match phase_one(&enc.problem, b, None) {
        Ok(_) => Ok(true),
        Err(Error::InfeasibleStart) => Ok(false),
        Err(e) => Err(e),
    })?;
    if stream.total_redraws() > 0 {
        info!("{} infeasible draws were replaced", stream.total_redraws());
    }
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(fs::File::create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = BufWriter::new(sink);
    let header: Vec<String> = case.loads.iter().map(|l| format!("p_{}", l.bus)).collect();
    writeln!(w, "t,{}", header.join(","))?;
    for (t, p) in stream.p.iter().enumerate() {
        let row: Vec<String> = p.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{t},{}", row.join(","))?;
    }
    w.flush()?;
    Ok(0)
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Run { config, out } => cmd_run(&config, out),
        Command::Check { suite, seed, json } => cmd_check(&suite, seed, json),
        Command::Opf {
            command: OpfCommand::Build { case, out },
        } => cmd_opf_build(&case, &out),
        Command::Stream {
            command:
                StreamCommand::Gen {
                    case,
                    seed,
                    horizon,
                    rule,
                    scale,
                    out,
                },
        } => {
            if !(scale.is_finite() && scale >= 0.0) {
                return Err(Error::Config(format!("scale must be non-negative, got {scale}")));
            }
            let rule = match rule {
                RuleArg::InverseSqrt => LoadRule::InverseSqrt { scale },
                RuleArg::RandomWalk => LoadRule::RandomWalk { scale },
                RuleArg::Constant => LoadRule::Constant,
            };
            cmd_stream_gen(&case, seed, horizon, rule, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    if let Err(msg) = init_logging() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_USAGE);
    }
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { EXIT_USAGE } else { EXIT_RUNTIME })
        }
    }
}
