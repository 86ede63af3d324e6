use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use simplex_tf::experiments::{self, ExperimentConfig, ExperimentKind, Extremal, ScanReport};
use simplex_tf::tiles::Universe;

#[derive(Debug, Parser)]
#[command(name = "simplex-tf", version, about = "Scans and audits for degenerate simplex multipliers")]
struct Cli {
    /// Overrides the first seed of the scan.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// CSV destination; defaults to the config's `output` key, then stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 lets the pool decide).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output-grid oversampling factor (power of two).
    #[arg(long, global = true)]
    padding: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Runs the scan described by a key = value config file.
    Run { config: PathBuf },
    /// Runs a named preset suite: a kind name or `all`.
    Verify {
        suite: String,
        /// Replace counterexample grids by the smallest grid that resolves the largest N.
        #[arg(long)]
        resolve: bool,
    },
    /// Decomposes a universe file (`j k w1 w2 w3` per line) and prints the JSON-lines audit.
    Audit { universe: PathBuf },
}

fn apply_overrides(cfg: &mut ExperimentConfig, cli: &Cli) {
    if let Some(seed) = cli.seed {
        cfg.seed_start = seed;
    }
    if let Some(padding) = cli.padding {
        cfg.padding = padding;
    }
    if let Some(out) = &cli.out {
        cfg.output = Some(out.clone());
    }
}

fn print_assertions(report: &ScanReport) {
    for a in &report.assertions {
        let status = if a.passed { "PASS" } else { "FAIL" };
        eprintln!("{status} [{}] {}: {}", report.kind, a.name, a.detail);
    }
}

fn emit(report: &ScanReport, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            report.write_csv(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?)?;
            if !report.audit.is_empty() {
                fs::write(path.with_extension("jsonl"), report.audit.join("\n") + "\n")?;
            }
        }
        None => report.write_csv(io::stdout().lock())?,
    }
    eprintln!("{}", report.summary_json());
    Ok(())
}

fn run_config(cli: &Cli, path: &Path) -> Result<bool> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg: ExperimentConfig = text.parse().with_context(|| format!("parsing {}", path.display()))?;
    apply_overrides(&mut cfg, cli);
    let report = experiments::run(&cfg)?;
    print_assertions(&report);
    emit(&report, cfg.output.as_deref())?;
    Ok(report.passed())
}

fn suite_configs(suite: &str, resolve: bool) -> Result<Vec<ExperimentConfig>> {
    let kinds: Vec<ExperimentKind> = match suite {
        "all" => ExperimentKind::ALL.to_vec(),
        name => vec![name.parse().map_err(anyhow::Error::msg)?],
    };
    let mut out = Vec::new();
    for kind in kinds {
        let cfg = ExperimentConfig::preset(kind);
        match kind {
            ExperimentKind::Counterexample2 | ExperimentKind::Counterexample8 if resolve => out.push(cfg.resolved()?),
            ExperimentKind::RestrictedType => {
                out.extend(Extremal::ALL.map(|target| ExperimentConfig { target, ..cfg.clone() }))
            }
            _ => out.push(cfg),
        }
    }
    Ok(out)
}

fn verify(cli: &Cli, suite: &str, resolve: bool) -> Result<bool> {
    let mut all_passed = true;
    for mut cfg in suite_configs(suite, resolve)? {
        apply_overrides(&mut cfg, cli);
        match experiments::run(&cfg) {
            Ok(report) => {
                print_assertions(&report);
                all_passed &= report.passed();
                if cli.out.is_some() {
                    let stem = match cfg.kind {
                        ExperimentKind::RestrictedType => format!("{}-{}", cfg.kind, cfg.target),
                        kind => kind.to_string(),
                    };
                    let dir = cli.out.as_deref().expect("checked above");
                    fs::create_dir_all(dir)?;
                    emit(&report, Some(&dir.join(stem).with_extension("csv")))?;
                }
            }
            Err(e) => {
                eprintln!("FAIL [{}] {e}", cfg.kind);
                all_passed = false;
            }
        }
    }
    Ok(all_passed)
}

fn audit(cli: &Cli, path: &Path) -> Result<bool> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let universe: Universe = text.parse().with_context(|| format!("parsing {}", path.display()))?;
    if universe.0.is_empty() {
        bail!("{} holds no tri-tiles", path.display());
    }
    let mut cfg = ExperimentConfig::preset(ExperimentKind::DecompositionAudit);
    apply_overrides(&mut cfg, cli);
    let report = experiments::audit_universe(&universe.0, &cfg, cfg.seed_start)?;
    print_assertions(&report);
    let lines = report.audit.join("\n") + "\n";
    match &cli.out {
        Some(p) => fs::write(p, lines)?,
        None => io::stdout().lock().write_all(lines.as_bytes())?,
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    let outcome = match &cli.command {
        Command::Run { config } => run_config(&cli, config),
        Command::Verify { suite, resolve } => verify(&cli, suite, *resolve),
        Command::Audit { universe } => audit(&cli, universe),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
