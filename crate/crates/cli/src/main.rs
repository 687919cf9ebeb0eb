//! `sideinfo`: generate benchmark data, train single cells, run sweeps and
//! the self-checks.

mod options;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use sideinfo::baselines::BaselineRegistry;
use sideinfo::bench::{
    aggregate, generate, run_cell, run_sweep, write_aggregate_csv, write_raw_csv, BenchConfig, Cell, Method,
    ResultRecord, SideKind, Sweep,
};
use sideinfo::patterns::PatternKind;
use sideinfo::training::ProcedureKind;
use sideinfo::verify::{self, Family, GradCheckOptions, OracleOptions, OracleSuite};

use options::{GeneratorArgs, PatternArgs, StackArgs, Table, TrainArgs};

#[derive(Debug, Parser)]
#[command(
    name = "sideinfo",
    version,
    about = "Learning with side information: synthetic benchmark and self-checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write one random-walk trajectory with all side channels as CSV.
    Generate(GenerateCmd),
    /// Train and score a single benchmark cell.
    Train(TrainCmd),
    /// Run a grid of cells × labeled-set sizes × seeds.
    Sweep(SweepCmd),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckCmd),
    /// Check the closed-form and naive-loop oracles.
    OracleCheck(OracleCmd),
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
struct GenerateCmd {
    /// Flat TOML file of defaults; flags override it.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Output CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    generator: GeneratorArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
struct TrainCmd {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Output CSV (one raw results row).
    #[arg(long)]
    out: Option<PathBuf>,
    /// `direct`, `embedded` or `relative`.
    #[arg(long)]
    side_info: Option<String>,
    /// A pattern, or a baseline name.
    #[arg(long)]
    pattern: Option<String>,
    #[arg(long)]
    procedure: Option<String>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Exit with status 2 if the cell fails.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    strict: bool,
    #[command(flatten)]
    #[serde(flatten)]
    generator: GeneratorArgs,
    #[command(flatten)]
    #[serde(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pattern_args: PatternArgs,
    #[command(flatten)]
    #[serde(flatten)]
    stack: StackArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
struct SweepCmd {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Output directory for raw.csv, aggregate.csv and metadata.toml.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Side channels to sweep (default: all three).
    #[arg(long, value_delimiter = ',')]
    side_info: Option<Vec<String>>,
    /// Patterns to train (default: every applicable pattern).
    #[arg(long, value_delimiter = ',')]
    patterns: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    procedures: Option<Vec<String>>,
    /// Baselines to include (default: all of them, unless --patterns is given).
    #[arg(long, value_delimiter = ',')]
    baselines: Option<Vec<String>>,
    /// Labeled-set sizes.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    /// Number of seeds per (cell, n).
    #[arg(long)]
    seeds: Option<u64>,
    /// First seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = "SIDEINFO_WORKERS")]
    workers: Option<usize>,
    /// Exit with status 2 if any cell fails.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    strict: bool,
    #[command(flatten)]
    #[serde(flatten)]
    generator: GeneratorArgs,
    #[command(flatten)]
    #[serde(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pattern_args: PatternArgs,
    #[command(flatten)]
    #[serde(flatten)]
    stack: StackArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
struct GradcheckCmd {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Optional CSV report.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Random draws per combination.
    #[arg(long)]
    draws: Option<usize>,
    /// Only this pattern (`supervised` for the main objective).
    #[arg(long)]
    only: Option<String>,
    /// Only this σ.
    #[arg(long)]
    sigma: Option<String>,
    /// Only this map family: `linear` or `mlp`.
    #[arg(long)]
    family: Option<String>,
    /// Largest accepted relative error.
    #[arg(long, allow_negative_numbers = true)]
    tolerance: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
struct OracleCmd {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Optional CSV report.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Suites to run: `cca`, `sfa`, `pca`, `losses` (default: all).
    #[arg(long, value_delimiter = ',')]
    suite: Option<Vec<String>>,
    /// Largest accepted gap in the naive-loop loss comparisons.
    #[arg(long, allow_negative_numbers = true)]
    tolerance: Option<f64>,
    /// Smallest accepted |cos| between the correlation pattern and CCA.
    #[arg(long, allow_negative_numbers = true)]
    min_alignment: Option<f64>,
    /// Smallest accepted |ρ| for the planted slow signal.
    #[arg(long, allow_negative_numbers = true)]
    min_slow_correlation: Option<f64>,
}

/// Whether the command's own checks or cells all succeeded.
enum Outcome {
    Ok,
    Failures,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failures) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Generate(cmd) => cmd_generate(with_file(cmd, |c| c.config.clone())?),
        Command::Train(cmd) => cmd_train(with_file(cmd, |c| c.config.clone())?),
        Command::Sweep(cmd) => cmd_sweep(with_file(cmd, |c| c.config.clone())?),
        Command::Gradcheck(cmd) => cmd_gradcheck(with_file(cmd, |c| c.config.clone())?),
        Command::OracleCheck(cmd) => cmd_oracle_check(with_file(cmd, |c| c.config.clone())?),
    }
}

/// Layer `cmd` (from flags) over its config file, if one was given.
fn with_file<C>(cmd: C, path: impl Fn(&C) -> Option<PathBuf>) -> Result<C>
where
    C: Args + Serialize + DeserializeOwned,
{
    let Some(path) = path(&cmd) else {
        return Ok(cmd);
    };
    let mut allowed = options::keys::<C>();
    allowed.remove("config");
    let file = options::read_table(&path, &allowed)?;
    options::layer(&cmd, &file)
}

fn require_out(out: &Option<PathBuf>) -> Result<&Path> {
    out.as_deref().context("--out is required")
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

fn git_describe() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
}

/// Run facts and the fully resolved flat config, as TOML.
fn write_metadata(
    path: &Path,
    command: &str,
    config: Table,
    started: u64,
    extra: &[(&str, toml::Value)],
) -> Result<()> {
    let mut run = Table::new();
    run.insert("command".into(), command.into());
    run.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    if let Some(g) = git_describe() {
        run.insert("git_describe".into(), g.into());
    }
    run.insert("started_unix_ms".into(), (started as i64).into());
    run.insert("finished_unix_ms".into(), (unix_ms() as i64).into());
    for (k, v) in extra {
        run.insert((*k).into(), v.clone());
    }
    let mut doc = Table::new();
    doc.insert("run".into(), run.into());
    doc.insert("config".into(), config.into());
    fs::write(path, toml::to_string(&doc)?).with_context(|| format!("writing {}", path.display()))
}

fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".meta.toml");
    PathBuf::from(name)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot write {}", path.display()))?,
    ))
}

fn cmd_generate(cmd: GenerateCmd) -> Result<Outcome> {
    let started = unix_ms();
    let out = require_out(&cmd.out)?;
    let config = options::resolve_generator(&cmd.generator, cmd.length, cmd.seed);
    config.validate()?;
    let (_, traj) = generate(&config)?;
    let mut w = csv::Writer::from_writer(create(out)?);
    let mut header = vec!["t".to_string(), "s".into(), "y".into()];
    header.extend((0..config.d).map(|i| format!("x{i}")));
    header.push("z_direct".into());
    header.extend((0..config.e).map(|i| format!("z_embedded{i}")));
    header.push("z_relative".into());
    w.write_record(&header)?;
    for t in 0..config.length {
        let mut row = vec![t.to_string(), traj.s[t].to_string(), traj.y[t].to_string()];
        row.extend(traj.x[t].iter().map(f64::to_string));
        row.push(traj.z_direct[t].to_string());
        row.extend(traj.z_embedded[t].iter().map(f64::to_string));
        row.push(if t == 0 {
            String::new()
        } else {
            traj.z_relative[t - 1].to_string()
        });
        w.write_record(&row)?;
    }
    w.flush()?;
    let resolved = GenerateCmd {
        config: None,
        out: cmd.out.clone(),
        length: Some(config.length),
        seed: Some(config.seed),
        generator: options::echo_generator(&config),
    };
    write_metadata(&sidecar(out), "generate", options::table(&resolved)?, started, &[])?;
    println!("wrote {} steps to {}", config.length, out.display());
    Ok(Outcome::Ok)
}

fn parse_list<T: std::str::FromStr>(what: &str, items: &[String]) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    items
        .iter()
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|e| anyhow::anyhow!("bad {what} `{s}`: {e}"))
        })
        .collect()
}

fn names<T: ToString>(items: &[T]) -> Vec<String> {
    items.iter().map(ToString::to_string).collect()
}

fn cmd_train(cmd: TrainCmd) -> Result<Outcome> {
    let started = unix_ms();
    let out = require_out(&cmd.out)?;
    let config = options::resolve_bench(&cmd.generator, &cmd.train, &cmd.pattern_args, &cmd.stack)?;
    let side: SideKind = cmd.side_info.as_deref().unwrap_or("direct").parse()?;
    let method = cmd.pattern.clone().unwrap_or_else(|| "direct".into());
    let procedure: ProcedureKind = cmd.procedure.as_deref().unwrap_or("simultaneous").parse()?;
    let n_train = cmd.n_train.unwrap_or(100);
    let seed = cmd.seed.unwrap_or(0);
    let cell = if BaselineRegistry::default().contains(&method) {
        Cell::baseline(side, &method)
    } else {
        Cell::pattern(side, method.parse::<PatternKind>()?, procedure)
    };
    let record = run_cell(&cell, n_train, seed, &config)?;
    write_raw_csv(create(out)?, std::slice::from_ref(&record))?;

    let (generator, train, pattern_args, stack) = options::echo_bench(&config, cmd.stack.allow.clone());
    let resolved = TrainCmd {
        config: None,
        out: cmd.out.clone(),
        side_info: Some(side.to_string()),
        pattern: Some(method),
        procedure: Some(procedure.to_string()),
        n_train: Some(n_train),
        seed: Some(seed),
        strict: cmd.strict,
        generator,
        train,
        pattern_args,
        stack,
    };
    write_metadata(
        &sidecar(out),
        "train",
        options::table(&resolved)?,
        started,
        &[("failed_cells", (record.failed as i64).into())],
    )?;
    println!(
        "{cell} n={n_train} seed={seed}: accuracy {} ({} ms){}",
        record.test_accuracy,
        record.wall_ms,
        if record.failed { " FAILED" } else { "" }
    );
    Ok(if record.failed && cmd.strict {
        Outcome::Failures
    } else {
        Outcome::Ok
    })
}

fn sweep_cells(cmd: &SweepCmd, config: &BenchConfig) -> Result<(Vec<SideKind>, Vec<ProcedureKind>, Vec<Cell>)> {
    let sides: Vec<SideKind> = match &cmd.side_info {
        Some(s) => parse_list("side information", s)?,
        None => SideKind::ALL.to_vec(),
    };
    let procedures: Vec<ProcedureKind> = match &cmd.procedures {
        Some(p) => parse_list("procedure", p)?,
        None => vec![ProcedureKind::Simultaneous, ProcedureKind::Decoupled],
    };
    let registry = BaselineRegistry::default();
    let baselines: Vec<String> = match (&cmd.baselines, &cmd.patterns) {
        (Some(b), _) => b.iter().filter(|s| !s.is_empty()).cloned().collect(),
        (None, Some(_)) => Vec::new(),
        (None, None) => registry.names().map(str::to_string).collect(),
    };
    let mut cells = Vec::new();
    for &side in &sides {
        match &cmd.patterns {
            Some(p) => {
                for pattern in parse_list::<PatternKind>("pattern", p)? {
                    for &procedure in &procedures {
                        cells.push(Cell::pattern(side, pattern, procedure));
                    }
                }
            }
            None => cells.extend(
                config
                    .default_cells(side, &procedures)
                    .into_iter()
                    .filter(|c| matches!(c.method, Method::Pattern { .. })),
            ),
        }
        for b in &baselines {
            if !registry.contains(b) {
                bail!("unknown baseline `{b}`");
            }
            cells.push(Cell::baseline(side, b));
        }
    }
    for cell in &cells {
        sideinfo::bench::check_cell(cell, config).with_context(|| format!("invalid cell {cell}"))?;
    }
    Ok((sides, procedures, cells))
}

fn cmd_sweep(cmd: SweepCmd) -> Result<Outcome> {
    let started = unix_ms();
    let out = require_out(&cmd.out)?;
    let config = options::resolve_bench(&cmd.generator, &cmd.train, &cmd.pattern_args, &cmd.stack)?;
    let (sides, procedures, cells) = sweep_cells(&cmd, &config)?;
    let n_train = cmd
        .n
        .clone()
        .unwrap_or_else(|| sideinfo::bench::DEFAULT_N_TRAIN.to_vec());
    let first = cmd.seed.unwrap_or(0);
    let count = cmd.seeds.unwrap_or(10);
    if count == 0 {
        bail!("--seeds must be >= 1");
    }
    let workers = cmd.workers.unwrap_or(1);
    if workers == 0 {
        bail!("--workers must be >= 1");
    }
    let sweep = Sweep {
        cells,
        n_train: n_train.clone(),
        seeds: (first..first + count).collect(),
    };
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let raw_path = out.join("raw.csv");
    let agg_path = out.join("aggregate.csv");
    // fail on an unwritable directory before any compute
    let raw_file = create(&raw_path)?;
    let agg_file = create(&agg_path)?;
    log::info!("{} jobs on {workers} worker(s)", sweep.len());
    let records: Vec<ResultRecord> = run_sweep(&sweep, &config, workers)?;
    write_raw_csv(raw_file, &records)?;
    let agg = aggregate(&records);
    write_aggregate_csv(agg_file, &agg)?;
    let failed = records.iter().filter(|r| r.failed).count();

    let (generator, train, pattern_args, stack) = options::echo_bench(&config, cmd.stack.allow.clone());
    let resolved = SweepCmd {
        config: None,
        out: cmd.out.clone(),
        side_info: Some(names(&sides)),
        patterns: cmd.patterns.clone(),
        procedures: Some(names(&procedures)),
        baselines: cmd.baselines.clone(),
        n: Some(n_train),
        seeds: Some(count),
        seed: Some(first),
        workers: Some(workers),
        strict: cmd.strict,
        generator,
        train,
        pattern_args,
        stack,
    };
    write_metadata(
        &out.join("metadata.toml"),
        "sweep",
        options::table(&resolved)?,
        started,
        &[
            ("raw_rows", (records.len() as i64).into()),
            ("failed_cells", (failed as i64).into()),
            ("baseline_selection", "test-set (optimistic)".into()),
        ],
    )?;
    for row in &agg {
        println!(
            "{:>9} {:>18} {:>17} n={:<4} {:.4} ±{:.4} ({})",
            row.side_info, row.pattern, row.procedure, row.n_train, row.mean_accuracy, row.stderr, row.n_seeds
        );
    }
    println!("{} rows ({failed} failed) written to {}", records.len(), out.display());
    Ok(if failed > 0 && cmd.strict {
        Outcome::Failures
    } else {
        Outcome::Ok
    })
}

fn cmd_gradcheck(cmd: GradcheckCmd) -> Result<Outcome> {
    let started = unix_ms();
    let defaults = GradCheckOptions::default();
    let options = GradCheckOptions {
        seed: cmd.seed.unwrap_or(defaults.seed),
        draws: cmd.draws.unwrap_or(defaults.draws),
        only: cmd.only.clone(),
        sigma: cmd.sigma.clone(),
        family: cmd.family.as_deref().map(str::parse::<Family>).transpose()?,
        tolerance: cmd.tolerance.unwrap_or(defaults.tolerance),
    };
    let rows = verify::gradcheck(&options)?;
    let families: Vec<Family> = Family::ALL
        .into_iter()
        .filter(|f| rows.iter().any(|r| r.family == *f))
        .collect();
    let mut objectives: Vec<&str> = Vec::new();
    for r in &rows {
        if !objectives.contains(&r.objective.as_str()) {
            objectives.push(&r.objective);
        }
    }
    let mut stdout = io::stdout().lock();
    write!(stdout, "{:<44}", "objective")?;
    for f in &families {
        write!(stdout, " {:>10}", f.name())?;
    }
    writeln!(stdout, "  result")?;
    for obj in &objectives {
        write!(stdout, "{obj:<44}")?;
        let mut ok = true;
        for f in &families {
            let row = rows
                .iter()
                .find(|r| r.family == *f && r.objective == *obj)
                .expect("row");
            ok &= row.passed;
            write!(stdout, " {:>10.2e}", row.max_rel_err)?;
        }
        writeln!(stdout, "  {}", if ok { "PASS" } else { "FAIL" })?;
    }
    let passed = rows.iter().all(|r| r.passed);
    writeln!(
        stdout,
        "{} combinations, {} draws each, tolerance {:e}: {}",
        rows.len(),
        options.draws,
        options.tolerance,
        if passed { "all pass" } else { "FAILURES" }
    )?;
    if let Some(out) = &cmd.out {
        let mut w = csv::Writer::from_writer(create(out)?);
        w.write_record(["family", "objective", "draws", "max_rel_err", "passed"])?;
        for r in &rows {
            w.write_record([
                r.family.name().to_string(),
                r.objective.clone(),
                r.draws.to_string(),
                r.max_rel_err.to_string(),
                r.passed.to_string(),
            ])?;
        }
        w.flush()?;
        let resolved = GradcheckCmd {
            config: None,
            out: cmd.out.clone(),
            seed: Some(options.seed),
            draws: Some(options.draws),
            only: options.only.clone(),
            sigma: options.sigma.clone(),
            family: options.family.map(|f| f.name().to_string()),
            tolerance: Some(options.tolerance),
        };
        write_metadata(&sidecar(out), "gradcheck", options::table(&resolved)?, started, &[])?;
    }
    Ok(if passed { Outcome::Ok } else { Outcome::Failures })
}

fn cmd_oracle_check(cmd: OracleCmd) -> Result<Outcome> {
    let started = unix_ms();
    let defaults = OracleOptions::default();
    let options = OracleOptions {
        seed: cmd.seed.unwrap_or(defaults.seed),
        loss_tolerance: cmd.tolerance.unwrap_or(defaults.loss_tolerance),
        min_alignment: cmd.min_alignment.unwrap_or(defaults.min_alignment),
        min_slow_correlation: cmd.min_slow_correlation.unwrap_or(defaults.min_slow_correlation),
    };
    options.validate()?;
    let suites: Vec<OracleSuite> = match &cmd.suite {
        Some(s) => parse_list("suite", s)?,
        None => OracleSuite::ALL.to_vec(),
    };
    let reports = verify::run_oracles(&suites, &options)?;
    let mut stdout = io::stdout().lock();
    for rep in &reports {
        for c in &rep.checks {
            writeln!(
                stdout,
                "  {:<6} {:<48} {:>12.4e} (threshold {:e}) {}",
                rep.suite.name(),
                c.name,
                c.value,
                c.threshold,
                if c.passed { "ok" } else { "FAIL" }
            )?;
        }
        writeln!(stdout, "{}: {}", rep.suite, if rep.passed() { "PASS" } else { "FAIL" })?;
    }
    let passed = reports.iter().all(|r| r.passed());
    if let Some(out) = &cmd.out {
        let mut w = csv::Writer::from_writer(create(out)?);
        w.write_record(["suite", "check", "value", "threshold", "passed"])?;
        for rep in &reports {
            for c in &rep.checks {
                w.write_record([
                    rep.suite.name().to_string(),
                    c.name.clone(),
                    c.value.to_string(),
                    c.threshold.to_string(),
                    c.passed.to_string(),
                ])?;
            }
        }
        w.flush()?;
        let resolved = OracleCmd {
            config: None,
            out: cmd.out.clone(),
            seed: Some(options.seed),
            suite: Some(names(&suites)),
            tolerance: Some(options.loss_tolerance),
            min_alignment: Some(options.min_alignment),
            min_slow_correlation: Some(options.min_slow_correlation),
        };
        write_metadata(&sidecar(out), "oracle-check", options::table(&resolved)?, started, &[])?;
    }
    Ok(if passed { Outcome::Ok } else { Outcome::Failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn file_keys_match_flag_ids() {
        let keys = options::keys::<SweepCmd>();
        for k in ["n", "seeds", "workers", "strict", "epochs", "d", "sigma", "phi", "grid"] {
            assert!(keys.contains(k), "{k}");
        }
    }
}
