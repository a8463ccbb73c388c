//! `iotbench`: subnet plan generation, scenario runs, statistics and reports.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iotbench_core::hubsim::write_events_csv;
use iotbench_core::latbench::{
    default_calibration, import_samples, match_events, ok_delays, run_scenario, write_samples_csv,
    BenchError, ScenarioFile, ScenarioId, DEFAULT_MATCH_WINDOW_MS,
};
use iotbench_core::netplan::{
    default_plan, derive_ipv6_plan, plan_rows, render_firewall, tunnel_scope, PlanError,
};
use iotbench_core::published::PUBLISHED;
use iotbench_core::statkit::{consistency_check, describe, histogram, percentile, StatsError};
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("{0}")]
    NoData(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::NoData(_) | CliError::Stats(_) => 3,
            CliError::CheckFailed(_) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Parser)]
#[command(name = "iotbench", version, about = "Segmented home network and remote IoT control latency bench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the subnet plan, firewall rules and tunnel scope as JSON.
    Plan(PlanArgs),
    /// Run one control scenario and write its samples.
    Run(RunArgs),
    /// Descriptive statistics of the successful samples in a CSV.
    Stats(StatsArgs),
    /// Histogram, cumulative distribution and percentiles of a sample CSV.
    Report(ReportArgs),
    /// Cross-check the built-in published summaries.
    Check(CheckArgs),
    /// Print the default scenario configuration.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct PlanArgs {
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the firewall rules as text here.
    #[arg(long)]
    firewall: Option<PathBuf>,
    /// 40-bit global id for the unique-local IPv6 plan (decimal or 0x hex).
    #[arg(long, value_parser = parse_u64)]
    ipv6_global_id: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_parser = parse_scenario)]
    scenario: ScenarioId,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    count: Option<usize>,
    /// Scenario configuration JSON; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sample CSV.
    #[arg(long)]
    out: PathBuf,
    /// Light-event CSV; defaults to `<out>` with an `.events.csv` suffix.
    #[arg(long)]
    events: Option<PathBuf>,
    /// Also write the command/event match report as JSON.
    #[arg(long)]
    matches: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, conflicts_with = "table")]
    json: bool,
    #[arg(long)]
    table: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    /// Comma-separated fractions in (0, 1].
    #[arg(long, value_delimiter = ',', default_values_t = [0.95, 0.97, 0.99])]
    percentiles: Vec<f64>,
    /// Histogram CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 0.02)]
    tolerance: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    /// One scenario; all when omitted.
    #[arg(long, value_parser = parse_scenario)]
    scenario: Option<ScenarioId>,
    /// Run each configuration and compare the sample mean with its target.
    #[arg(long)]
    verify: bool,
}

fn parse_scenario(s: &str) -> Result<ScenarioId, String> {
    s.parse().map_err(|e: BenchError| {
        let known: Vec<_> = ScenarioId::ALL.iter().map(|i| i.slug()).collect();
        format!("{e}; expected one of {}", known.join(", "))
    })
}

fn parse_u64(s: &str) -> Result<u64, String> {
    let r = match s.strip_prefix("0x") {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    r.map_err(|e| e.to_string())
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(io_err(p)),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(io_err(Path::new("<stdout>"))),
    }
}

fn plan(args: PlanArgs) -> Result<(), CliError> {
    let plan = default_plan();
    let ipv6 = args
        .ipv6_global_id
        .map(|gid| derive_ipv6_plan(&plan, gid))
        .transpose()?;
    let firewall = render_firewall(&plan);
    let doc = json!({
        "subnets": plan_rows(&plan),
        "tunnel_scope": tunnel_scope(&plan),
        "firewall": firewall.lines().collect::<Vec<_>>(),
        "ipv6": ipv6,
    });
    write_out(args.out.as_deref(), &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    if let Some(p) = &args.firewall {
        fs::write(p, firewall).map_err(io_err(p))?;
    }
    Ok(())
}

fn events_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    out.with_file_name(format!("{stem}.events.csv"))
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            let file = ScenarioFile::from_json(&text)?;
            if file.scenario != args.scenario {
                return Err(CliError::Usage(format!(
                    "config is for {}, not {}",
                    file.scenario, args.scenario
                )));
            }
            file.resolve()?
        }
        None => default_calibration(args.scenario),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(count) = args.count {
        cfg.command_count = count;
    }
    let out = run_scenario(&cfg)?;

    let file = fs::File::create(&args.out).map_err(io_err(&args.out))?;
    write_samples_csv(&out.samples, io::BufWriter::new(file))?;
    let events = args.events.unwrap_or_else(|| events_path(&args.out));
    let file = fs::File::create(&events).map_err(io_err(&events))?;
    write_events_csv(&out.events, io::BufWriter::new(file)).map_err(BenchError::from)?;
    if let Some(p) = &args.matches {
        let report = match_events(&out.commands, &out.events, cfg.monitor_bound_ms, DEFAULT_MATCH_WINDOW_MS)?;
        fs::write(p, report.to_json()? + "\n").map_err(io_err(p))?;
    }

    let ok = out.ok_delays().len();
    eprintln!(
        "{}: {} commands, {} ok, {} failed, {} tunnel handshakes",
        cfg.id,
        out.samples.len(),
        ok,
        out.samples.len() - ok,
        out.handshakes.len()
    );
    if ok == 0 {
        return Err(CliError::NoData("every command failed".into()));
    }
    Ok(())
}

fn load_delays(path: &Path) -> Result<Vec<f64>, CliError> {
    let samples = import_samples(path).map_err(|e| match e {
        BenchError::Io(source) => io_err(path)(source),
        other => other.into(),
    })?;
    Ok(ok_delays(&samples))
}

fn stats(args: StatsArgs) -> Result<(), CliError> {
    let delays = load_delays(&args.input)?;
    if delays.len() < 4 {
        return Err(CliError::NoData(format!(
            "{} successful samples; at least 4 are needed",
            delays.len()
        )));
    }
    let summary = describe(&delays)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        print!("{}", summary.render_table());
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), CliError> {
    let delays = load_delays(&args.input)?;
    if delays.is_empty() {
        return Err(CliError::NoData("no successful samples".into()));
    }
    if args.bins == 0 {
        return Err(CliError::Usage("--bins must be at least 1".into()));
    }
    if let Some(q) = args.percentiles.iter().find(|q| !(**q > 0.0 && **q <= 1.0)) {
        return Err(CliError::Usage(format!("percentile {q} is outside (0, 1]")));
    }
    let h = histogram(&delays, args.bins)?;
    write_out(args.out.as_deref(), &h.to_csv())?;
    for q in &args.percentiles {
        println!("percentile {q}: {:.2} ms", percentile(&delays, *q)?);
    }
    Ok(())
}

fn check(args: CheckArgs) -> Result<(), CliError> {
    if !(args.tolerance >= 0.0) {
        return Err(CliError::Usage("--tolerance must be non-negative".into()));
    }
    let mut failed = Vec::new();
    let mut rows = Vec::new();
    for col in &PUBLISHED {
        let r = consistency_check(&col.summary, args.tolerance)?;
        if !r.passed() {
            failed.push(col.scenario);
        }
        if args.json {
            rows.push(json!({"scenario": col.scenario, "pass": r.passed(), "report": r}));
            continue;
        }
        let ci = &r.relations[0];
        println!(
            "{:<16} {} implied n {:>5}  ci predicted {:.3} published {:.2}",
            col.scenario,
            if r.passed() { "PASS" } else { "FAIL" },
            r.implied_n,
            ci.predicted,
            ci.published
        );
        for rel in r.relations.iter().filter(|rel| !rel.pass) {
            println!(
                "    {}: predicted {:.4} published {:.4} (relative error {:.2e})",
                rel.relation, rel.predicted, rel.published, rel.relative_error
            );
        }
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "{} of {} columns fail at tolerance {}: {}",
            failed.len(),
            PUBLISHED.len(),
            args.tolerance,
            failed.join(", ")
        )))
    }
}

fn calibrate(args: CalibrateArgs) -> Result<(), CliError> {
    let ids: Vec<ScenarioId> = match args.scenario {
        Some(id) => vec![id],
        None => ScenarioId::ALL.to_vec(),
    };
    if args.verify {
        for id in ids {
            let cfg = default_calibration(id);
            let delays = run_scenario(&cfg)?.ok_delays();
            let s = describe(&delays)?;
            let target = iotbench_core::latbench::calibration_target(id);
            println!(
                "{:<16} mean {:>8.2} target {:>8.2} ({:+.2}%)  min {:>8.2} floor {:>8.2}",
                id.slug(),
                s.mean,
                target.1,
                100.0 * (s.mean - target.1) / target.1,
                s.minimum,
                cfg.floor_ms()
            );
        }
        return Ok(());
    }
    let files: Vec<ScenarioFile> = ids.into_iter().map(|id| default_calibration(id).to_file()).collect();
    let text = if files.len() == 1 {
        files[0].to_json()?
    } else {
        serde_json::to_string_pretty(&files)?
    };
    println!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Plan(a) => plan(a),
        Command::Run(a) => run(a),
        Command::Stats(a) => stats(a),
        Command::Report(a) => report(a),
        Command::Check(a) => check(a),
        Command::Calibrate(a) => calibrate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("iotbench: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
