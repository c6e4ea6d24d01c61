use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use log::info;
use p4l::bench::{bench_he, BenchReport};
use p4l::experiment::{
    run_experiment, run_grid, ExperimentConfig, ExperimentError, ExperimentOutput, RunOutput,
};
use p4l::sim::trace::{check_records, TraceError};
use p4l::sim::{verify_protocol_trace, TraceReport};

const EXIT_CONFIG: u8 = 2;
const EXIT_INVARIANT: u8 = 3;
const EXIT_CRYPTO: u8 = 4;

#[derive(Parser)]
#[command(
    name = "p4l",
    version,
    about = "Chain-synergy private learning: simulator, benchmarks and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment (or a grid of them) and write metrics CSVs.
    Run {
        /// TOML configuration; defaults apply to every missing key.
        #[arg(long, short)]
        config: Option<PathBuf>,
        /// Override one key, e.g. `--set sim.num_peers=50`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Grid axis, e.g. `--grid sim.synergy_size_law.size=3,4,5`. Repeatable.
        #[arg(long = "grid", value_name = "KEY=V1,V2")]
        axes: Vec<String>,
        /// Output directory; overrides `output` in the file.
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Print the resolved configuration and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Time packed Paillier encrypt, add and decrypt against parameter count.
    BenchHe {
        #[arg(long, value_delimiter = ',', default_value = "1000,10000,100000")]
        counts: Vec<usize>,
        #[arg(long, default_value_t = 512)]
        key_bits: u64,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Exit with status 3 if any fit has a lower R².
        #[arg(long)]
        min_r2: Option<f64>,
        /// Also write the rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Replay a JSON-lines protocol trace and check its invariants.
    VerifyTrace {
        trace: PathBuf,
        /// Print the full report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Check the cryptographic primitives on fresh keys.
    Selftest {
        #[arg(long, default_value_t = 2048)]
        key_bits: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// An error together with the process status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: 1, error }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        let code = if matches!(e, ExperimentError::Config(_)) {
            EXIT_CONFIG
        } else {
            1
        };
        Self::new(code, e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            overrides,
            axes,
            output,
            dry_run,
        } => cmd_run(config.as_deref(), overrides, &axes, output, dry_run),
        Command::BenchHe {
            counts,
            key_bits,
            reps,
            seed,
            min_r2,
            csv,
        } => cmd_bench(&counts, key_bits, reps, seed, min_r2, csv.as_deref()),
        Command::VerifyTrace { trace, json } => cmd_verify(&trace, json),
        Command::Selftest { key_bits, seed } => cmd_selftest(key_bits, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_run(
    config: Option<&Path>,
    mut overrides: Vec<String>,
    axes: &[String],
    output: Option<PathBuf>,
    dry_run: bool,
) -> Result<(), Failure> {
    let text = match config {
        Some(p) => fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))
            .map_err(|e| Failure::new(EXIT_CONFIG, e))?,
        None => String::new(),
    };
    if let Some(dir) = output {
        overrides.push(format!("output={:?}", dir.display().to_string()));
    }
    let base = ExperimentConfig::from_toml(&text, &overrides)?;
    if dry_run {
        print!("{}", base.to_toml());
        return Ok(());
    }
    let outputs: Vec<(String, ExperimentOutput)> = if axes.is_empty() {
        vec![(String::new(), run_experiment(&base)?)]
    } else {
        run_grid(&text, &overrides, axes)?
            .into_iter()
            .map(|(cell, out)| (cell.label, out))
            .collect()
    };
    let mut violations = 0;
    for (label, out) in &outputs {
        if !label.is_empty() {
            println!("[{label}] config {}", out.config.hash());
        }
        for run in &out.runs {
            print_run(run);
            violations += run_violations(run);
        }
        if let Some(dir) = &out.config.output {
            info!("wrote results to {}", dir.display());
        }
    }
    if violations > 0 {
        return Err(Failure::new(
            EXIT_INVARIANT,
            anyhow!("{violations} protocol invariant violations"),
        ));
    }
    Ok(())
}

fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.4}"),
        _ => "-".into(),
    }
}

fn print_run(run: &RunOutput) {
    let s = &run.summary;
    println!(
        "seed {}: rounds {} target_met {} synergies {}/{} completed, {} failed; accepted {} rejected {}",
        s.seed,
        s.rounds_run,
        s.target_met,
        s.net.completed,
        s.net.initiated,
        s.net.failed,
        s.aggregates_accepted,
        s.aggregates_rejected
    );
    println!(
        "  accuracy p4l {} alone {} centralized {} fl {} | auc p4l {} alone {} centralized {} fl {}",
        fmt_metric(s.p4l.map(|m| m.accuracy)),
        fmt_metric(s.alone.map(|m| m.accuracy)),
        fmt_metric(s.centralized.map(|m| m.accuracy)),
        fmt_metric(s.fl.map(|m| m.accuracy)),
        fmt_metric(s.p4l.map(|m| m.auc)),
        fmt_metric(s.alone.map(|m| m.auc)),
        fmt_metric(s.centralized.map(|m| m.auc)),
        fmt_metric(s.fl.map(|m| m.auc)),
    );
}

/// Conservation of synergy counts, plus a full replay when a trace was kept.
fn run_violations(run: &RunOutput) -> usize {
    let net = &run.summary.net;
    let mut count = usize::from(net.initiated != net.completed + net.failed + net.in_flight());
    if let Some((header, records)) = &run.trace {
        let report = check_records(header, records);
        for v in &report.violations {
            eprintln!(
                "seed {}: {:?} at record {}: {}",
                run.summary.seed, v.kind, v.line, v.detail
            );
        }
        count += report.violations.len();
    }
    count
}

fn cmd_bench(
    counts: &[usize],
    key_bits: u64,
    reps: usize,
    seed: u64,
    min_r2: Option<f64>,
    csv: Option<&Path>,
) -> Result<(), Failure> {
    let report =
        bench_he(counts, key_bits, reps, seed).map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    print_bench(&report);
    if let Some(path) = csv {
        fs::write(path, bench_csv(&report))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(min) = min_r2 {
        let worst = [report.encrypt.r2, report.add.r2, report.decrypt.r2]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if !(worst >= min) {
            return Err(Failure::new(
                EXIT_INVARIANT,
                anyhow!("worst R² {worst:.4} below {min}"),
            ));
        }
    }
    Ok(())
}

fn print_bench(r: &BenchReport) {
    println!("key bits {}", r.key_bits);
    println!(
        "{:>10} {:>12} {:>12} {:>12} {:>12}",
        "params", "ciphertexts", "encrypt_ms", "add_ms", "decrypt_ms"
    );
    for row in &r.rows {
        println!(
            "{:>10} {:>12} {:>12.3} {:>12.3} {:>12.3}",
            row.param_count, row.ciphertexts, row.encrypt_ms, row.add_ms, row.decrypt_ms
        );
    }
    for (name, f) in [
        ("encrypt", r.encrypt),
        ("add", r.add),
        ("decrypt", r.decrypt),
    ] {
        println!(
            "{name:>8}: {:.6} ms/param + {:.3} ms, R² = {:.4}",
            f.slope, f.intercept, f.r2
        );
    }
}

fn bench_csv(r: &BenchReport) -> String {
    let mut out = String::from("param_count,ciphertexts,encrypt_ms,add_ms,decrypt_ms\n");
    for row in &r.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.param_count, row.ciphertexts, row.encrypt_ms, row.add_ms, row.decrypt_ms
        ));
    }
    out
}

fn cmd_verify(path: &Path, json: bool) -> Result<(), Failure> {
    let file = fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))
        .map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    let report = verify_protocol_trace(BufReader::new(file)).map_err(|e| match e {
        TraceError::Io(_) => Failure::new(1, e),
        other => Failure::new(EXIT_CONFIG, other),
    })?;
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).context("serialising report")?
        );
    } else {
        print_report(&report);
    }
    if report.is_clean() {
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_INVARIANT,
            anyhow!("{} invariant violations", report.violations.len()),
        ))
    }
}

fn print_report(r: &TraceReport) {
    println!(
        "{} records, {} synergies: {} completed, {} failed, {} in flight{}",
        r.records,
        r.initiated,
        r.completed,
        r.failed,
        r.in_flight,
        if r.ended { "" } else { " (no end marker)" }
    );
    for v in &r.violations {
        println!("line {}: {:?}: {}", v.line, v.kind, v.detail);
    }
    println!("{} violations", r.violations.len());
}

fn cmd_selftest(key_bits: u64, seed: u64) -> Result<(), Failure> {
    p4l::he::self_test(key_bits, seed).map_err(|e| Failure::new(EXIT_CRYPTO, e))?;
    println!("crypto self-test passed at {key_bits} bits");
    Ok(())
}
