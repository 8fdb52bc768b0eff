use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use weakkam_cli::pipeline::{run_pipeline, CliError, Command, RunSummary};
use weakkam_cli::spec::{emit, read_spec, ProblemSpec};

#[derive(Parser)]
#[command(name = "weakkam", version, about = "Weak KAM solver for oblique Neumann problems")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Evolve initial data under the Lax-Oleinik semigroup.
    SolveCauchy(Common),
    /// Critical value from the cycle and slope estimates.
    CriticalValue(Common),
    /// Critical distance to a single node.
    Distance(Common),
    /// Projected Aubry set.
    Aubry(Common),
    /// Minimal distance to the Aubry set, plus the long-time limit.
    WeakKamSolve(Common),
    /// Backward calibrated curve from a point.
    Extremal(Common),
    /// Two-sided orbit through an Aubry node.
    AubryOrbit(Common),
    /// Reflected path for a given input velocity.
    Skorokhod(Common),
    /// Every gated property check plus the value-iteration comparison.
    Verify(Common),
    /// Print the problem file with defaults filled in.
    Emit {
        #[arg(long)]
        spec: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Problem file (TOML or JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory; overrides output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Start point as X,Y.
    #[arg(long, value_parser = parse_point)]
    from: Option<[f64; 2]>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Aubry node as X,Y.
    #[arg(long, value_parser = parse_point)]
    at: Option<[f64; 2]>,
}

fn parse_point(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let num = |t: &str| t.parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    match parts.as_slice() {
        [x] => Ok([num(x)?, 0.0]),
        [x, y] => Ok([num(x)?, num(y)?]),
        _ => Err("expected X or X,Y".into()),
    }
}

fn workers() {
    if let Some(n) = std::env::var("WEAKKAM_WORKERS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn prepare(c: &Common) -> Result<(ProblemSpec, PathBuf), CliError> {
    let mut spec = read_spec(&c.spec)?;
    if let Some(s) = c.seed {
        spec.run.seed = s;
    }
    if c.from.is_some() {
        spec.run.from = c.from;
    }
    if c.at.is_some() {
        spec.run.at = c.at;
    }
    if let Some(t) = c.horizon {
        spec.grid.horizon = t;
    }
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from(&spec.output.dir));
    Ok((spec, out))
}

fn print(summary: &RunSummary) {
    println!("{} ({:.2} s)", summary.command, summary.wall_time_s);
    for m in &summary.headline {
        println!("  {:<28} {}", m.name, weakkam_cli::output::fmt_g(m.value));
    }
    for c in &summary.checks {
        let tag = match (c.gated, c.passed) {
            (true, true) => "pass",
            (true, false) => "FAIL",
            (false, _) => "info",
        };
        println!(
            "  [{tag}] {:<24} {} <= {}",
            c.name,
            weakkam_cli::output::fmt_g(c.value),
            weakkam_cli::output::fmt_g(c.limit)
        );
    }
    for a in &summary.artifacts {
        println!("  wrote {a}");
    }
}

fn main() -> ExitCode {
    workers();
    let cli = Cli::parse();
    let (cmd, common) = match &cli.command {
        Sub::SolveCauchy(c) => (Command::SolveCauchy, c),
        Sub::CriticalValue(c) => (Command::CriticalValue, c),
        Sub::Distance(c) => (Command::Distance, c),
        Sub::Aubry(c) => (Command::Aubry, c),
        Sub::WeakKamSolve(c) => (Command::WeakKamSolve, c),
        Sub::Extremal(c) => (Command::Extremal, c),
        Sub::AubryOrbit(c) => (Command::AubryOrbit, c),
        Sub::Skorokhod(c) => (Command::Skorokhod, c),
        Sub::Verify(c) => (Command::Verify, c),
        Sub::Emit { spec } => {
            return match read_spec(spec) {
                Ok(s) => {
                    print!("{}", emit(&s));
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            };
        }
    };
    let result = prepare(common).and_then(|(spec, out)| run_pipeline(&spec, cmd, Some(&out)));
    match result {
        Ok(summary) => {
            print(&summary);
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
