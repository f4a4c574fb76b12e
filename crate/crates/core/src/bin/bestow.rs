//! `bestow`: typecheck, run and explore calculus programs; drive the
//! runtime workloads.
//!
//! Exit codes: 0 success, 1 property violation or failed assertion,
//! 2 usage, parse or type error.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use bestow::calc::explorer::{explore, Dedup, ExploreError, ExploreOptions, Violation};
use bestow::calc::run::{run, RunError, RunOptions, Schedule};
use bestow::calc::semantics::Mutation;
use bestow::calc::syntax::{parse_program, SyntaxError};
use bestow::calc::types::TypeError;
use bestow::calc::{check_source, CheckError, Expr, Variant};
use bestow::runtime::{Config, Runtime, TransferPolicy};
use bestow::workloads::bank::{run_money, MoneySpec, TransferMode};
use bestow::workloads::dht::{race_rehash, RaceSpec, Rehash};
use bestow::workloads::graph::{dijkstra, DistGraph, Graph};
use bestow::workloads::ping::{bench_ping, compare_ping, PingMode, PingReport, DEFAULT_BATCH};
use bestow::workloads::WorkloadError;

#[derive(Parser)]
#[command(name = "bestow", version, about = "Bestow and atomic for actors: calculi, explorer and runtime workloads")]
struct Cli {
    /// Calculus variant; overrides a `#variant` pragma.
    #[arg(long, global = true, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Seed for random schedules, workloads and deterministic scheduling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Run workloads under the seeded single-threaded scheduler.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Leave wall-clock fields out of JSON output.
    #[arg(long, global = true)]
    no_timestamps: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and typecheck a program.
    Check { file: PathBuf },
    /// Execute a program along one schedule.
    Run(RunArgs),
    /// Explore every interleaving of a program up to a bound.
    Explore(ExploreArgs),
    /// Run a runtime scenario and check its outcome.
    Demo {
        #[arg(value_enum)]
        scenario: Scenario,
    },
    /// Benchmarks.
    Bench {
        #[command(subcommand)]
        bench: Bench,
    },
}

#[derive(Args)]
struct RunArgs {
    file: PathBuf,
    /// fifo | random[:SEED] | script:FILE
    #[arg(long, default_value = "fifo")]
    schedule: String,
    #[arg(long, default_value_t = 10_000)]
    max_steps: usize,
    /// Ownership transfers a random schedule may take.
    #[arg(long, default_value_t = 2)]
    transfer_cap: usize,
    /// Check well-formedness after every transition.
    #[arg(long)]
    wf_every_step: bool,
    /// Run a deliberately broken semantics.
    #[arg(long, value_parser = parse_mutation)]
    mutation: Option<Mutation>,
}

#[derive(Args)]
struct ExploreArgs {
    file: PathBuf,
    #[arg(long, default_value_t = 60)]
    depth: usize,
    #[arg(long, default_value_t = 2)]
    transfer_cap: usize,
    /// Merge states equal up to renaming of actors, locations and queues.
    #[arg(long)]
    canonicalize: bool,
    /// Give up after this many states.
    #[arg(long, default_value_t = 2_000_000)]
    state_budget: usize,
    /// Accepted for symmetry with `run`; exploration always checks
    /// well-formedness after every transition.
    #[arg(long)]
    wf_every_step: bool,
    #[arg(long, value_parser = parse_mutation)]
    mutation: Option<Mutation>,
    /// Keep violation traces as found instead of minimizing them.
    #[arg(long)]
    no_minimize: bool,
    /// Where violation traces are written.
    #[arg(long, default_value = "bestow-traces")]
    trace_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Dht,
    Bank,
    Graph,
}

#[derive(Subcommand)]
enum Bench {
    /// Ping-pong throughput; all modes when `--mode` is omitted.
    Ping {
        #[arg(long, default_value_t = 100_000)]
        messages: u64,
        #[arg(long, value_parser = clap::value_parser!(PingModeArg))]
        mode: Option<PingModeArg>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long, default_value_t = DEFAULT_BATCH)]
        batch: usize,
    },
}

#[derive(Clone, Copy)]
struct PingModeArg(PingMode);

impl std::str::FromStr for PingModeArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(PingModeArg)
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse()
}

fn parse_mutation(s: &str) -> Result<Mutation, String> {
    s.parse()
}

/// A failed command: the message for stderr and the exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Failure {
        Failure { code: 2, message: message.into() }
    }

    fn violated(message: impl Into<String>) -> Failure {
        Failure { code: 1, message: message.into() }
    }
}

impl From<WorkloadError> for Failure {
    fn from(e: WorkloadError) -> Self {
        Failure::violated(e.to_string())
    }
}

impl From<bestow::runtime::RuntimeError> for Failure {
    fn from(e: bestow::runtime::RuntimeError) -> Self {
        Failure::violated(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = Instant::now();
    let result = match &cli.command {
        Command::Check { file } => cmd_check(&cli, file),
        Command::Run(args) => cmd_run(&cli, args),
        Command::Explore(args) => cmd_explore(&cli, args),
        Command::Demo { scenario } => cmd_demo(&cli, *scenario),
        Command::Bench { bench: Bench::Ping { messages, mode, runs, batch } } => {
            cmd_ping(&cli, *messages, mode.map(|m| m.0), *runs, *batch)
        }
    };
    match result {
        Ok(out) => {
            emit(&cli, out, started);
            ExitCode::SUCCESS
        }
        Err((out, failure)) => {
            if let Some(out) = out {
                emit(&cli, out, started);
            }
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

/// What a command prints: JSON for `--json`, text otherwise.
struct Output {
    json: Value,
    text: String,
}

type CmdResult = Result<Output, (Option<Output>, Failure)>;

fn fail(f: Failure) -> (Option<Output>, Failure) {
    (None, f)
}

fn emit(cli: &Cli, mut out: Output, started: Instant) {
    if cli.json {
        if let Value::Object(map) = &mut out.json {
            map.insert("schema".into(), 1.into());
            if !cli.no_timestamps {
                let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
                map.insert("timestamp".into(), now.into());
                map.insert("elapsedSeconds".into(), started.elapsed().as_secs_f64().into());
            }
        }
        out.text = serde_json::to_string_pretty(&out.json).expect("json output") + "\n";
    }
    // a closed pipe (`| head`) is not an error worth a panic
    let _ = std::io::stdout().lock().write_all(out.text.as_bytes());
}

fn read_source(file: &Path) -> Result<String, (Option<Output>, Failure)> {
    fs::read_to_string(file).map_err(|e| fail(Failure::usage(format!("cannot read {}: {e}", file.display()))))
}

fn syntax_json(e: &SyntaxError) -> Value {
    let (line, col) = e.position();
    json!({ "stage": "parse", "line": line, "col": col, "message": e.to_string() })
}

fn type_json(e: &TypeError) -> Value {
    json!({ "stage": "type", "kind": e.kind, "location": e.location, "message": e.message })
}

fn rejected(file: &Path, variant: Option<Variant>, error: Value, message: String) -> (Option<Output>, Failure) {
    let out = Output {
        json: json!({ "command": "check", "file": file.display().to_string(), "ok": false, "variant": variant, "error": error }),
        text: String::new(),
    };
    (Some(out), Failure::usage(format!("{}: {message}", file.display())))
}

fn cmd_check(cli: &Cli, file: &Path) -> CmdResult {
    let source = read_source(file)?;
    match check_source(&source, cli.variant) {
        Ok((variant, _, ty)) => Ok(Output {
            json: json!({ "command": "check", "file": file.display().to_string(), "ok": true, "variant": variant, "type": ty.to_string() }),
            text: format!("{}: {ty} ({variant})\n", file.display()),
        }),
        Err(CheckError::Syntax(e)) => Err(rejected(file, cli.variant, syntax_json(&e), e.to_string())),
        Err(CheckError::Type(e)) => {
            let variant = parse_program(&source, cli.variant).ok().map(|(v, _)| v);
            Err(rejected(file, variant, type_json(&e), e.to_string()))
        }
    }
}

/// Parses without typechecking: `run` and `explore` typecheck themselves,
/// honouring mutations that weaken the type system.
fn load(cli: &Cli, file: &Path) -> Result<(Variant, Expr), (Option<Output>, Failure)> {
    let source = read_source(file)?;
    parse_program(&source, cli.variant)
        .map_err(|e| rejected(file, cli.variant, syntax_json(&e), e.to_string()))
}

fn cmd_run(cli: &Cli, args: &RunArgs) -> CmdResult {
    let (variant, program) = load(cli, &args.file)?;
    let spec = if args.schedule == "random" { format!("random:{}", cli.seed) } else { args.schedule.clone() };
    let schedule = Schedule::parse(&spec, |p| fs::read_to_string(p)).map_err(|e| fail(Failure::usage(e)))?;
    let opts = RunOptions {
        schedule,
        max_steps: args.max_steps,
        transfer_cap: args.transfer_cap,
        wf_every_step: args.wf_every_step,
        mutation: args.mutation,
    };
    let report = match run(&program, variant, &opts) {
        Ok(r) => r,
        Err(RunError::Type(e)) => return Err(rejected(&args.file, Some(variant), type_json(&e), e.to_string())),
        Err(e @ RunError::Script { .. }) => return Err(fail(Failure::usage(e.to_string()))),
    };
    let mut text: String = report.trace.iter().map(|l| format!("{l}\n")).collect();
    text.push_str(&format!("-- {} after {} steps\n{}", report.outcome, report.steps, report.final_config));
    for v in &report.violations {
        text.push_str(&format!("-- violation: {}: {}\n", v.property, v.detail));
    }
    let mut json = serde_json::to_value(&report).expect("run report");
    json["command"] = "run".into();
    json["finalConfig"] = report.final_config.to_string().into();
    let out = Output { json, text };
    if report.ok() {
        Ok(out)
    } else {
        let first = &report.violations[0];
        Err((Some(out), Failure::violated(format!("{} violated: {}", first.property, first.detail))))
    }
}

fn cmd_explore(cli: &Cli, args: &ExploreArgs) -> CmdResult {
    let (variant, program) = load(cli, &args.file)?;
    let opts = ExploreOptions {
        depth: args.depth,
        transfer_cap: args.transfer_cap,
        state_budget: args.state_budget,
        dedup: if args.canonicalize { Dedup::Canonical } else { Dedup::Exact },
        mutation: args.mutation,
        minimize: !args.no_minimize,
        ..ExploreOptions::default()
    };
    let report = match explore(&program, variant, &opts) {
        Ok(r) => r,
        Err(ExploreError::Type(e)) => return Err(rejected(&args.file, Some(variant), type_json(&e), e.to_string())),
    };
    let artifacts = if report.ok() {
        Vec::new()
    } else {
        write_traces(&args.trace_dir, &args.file, variant, &report.violations)
            .map_err(|e| fail(Failure::usage(format!("cannot write traces to {}: {e}", args.trace_dir.display()))))?
    };
    let mut text = format!(
        "{}: {} states, {} transitions, max depth {}{}\n",
        args.file.display(),
        report.states_visited,
        report.transitions,
        report.max_depth,
        if report.truncated { " (truncated)" } else { "" },
    );
    for (v, path) in report.violations.iter().zip(&artifacts) {
        text.push_str(&format!("{} violation ({} steps, {}): {}\n", v.property, v.trace.len(), path.display(), v.detail));
    }
    if report.ok() {
        text.push_str("no violations\n");
    }
    let mut json = serde_json::to_value(&report).expect("exploration report");
    json["command"] = "explore".into();
    json["artifacts"] = artifacts.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().into();
    let out = Output { json, text };
    if report.ok() {
        Ok(out)
    } else {
        let n = report.violations.len();
        Err((Some(out), Failure::violated(format!("{n} violation(s); traces in {}", args.trace_dir.display()))))
    }
}

/// One replayable file per violation: `run --schedule script:FILE`.
fn write_traces(dir: &Path, file: &Path, variant: Variant, violations: &[Violation]) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let stem = file.file_stem().map_or("program".into(), |s| s.to_string_lossy().into_owned());
    violations
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let path = dir.join(format!("{stem}.{i}.{}.trace", v.property));
            let mut body = format!("# property: {}\n# variant: {variant}\n# detail: {}\n", v.property, v.detail);
            for l in &v.trace {
                body.push_str(&format!("{l}\n"));
            }
            fs::write(&path, body)?;
            Ok(path)
        })
        .collect()
}

fn runtime_config(cli: &Cli) -> Config {
    if cli.deterministic {
        Config::deterministic(cli.seed)
    } else {
        Config::default()
    }
}

/// Narration lines plus named checks; any failed check fails the demo.
#[derive(Default)]
struct Demo {
    lines: Vec<String>,
    checks: Vec<(String, bool)>,
}

impl Demo {
    fn say(&mut self, line: impl Into<String>) {
        self.lines.push(line.into());
    }

    fn check(&mut self, name: impl Into<String>, ok: bool) {
        self.checks.push((name.into(), ok));
    }

    fn finish(self, scenario: &str, details: Value) -> CmdResult {
        let mut text = self.lines.iter().map(|l| format!("{l}\n")).collect::<String>();
        for (name, ok) in &self.checks {
            text.push_str(&format!("[{}] {name}\n", if *ok { "ok" } else { "FAILED" }));
        }
        let failed: Vec<&str> = self.checks.iter().filter(|c| !c.1).map(|c| c.0.as_str()).collect();
        let json = json!({
            "command": "demo",
            "scenario": scenario,
            "ok": failed.is_empty(),
            "checks": self.checks.iter().map(|(n, ok)| json!({ "name": n, "ok": ok })).collect::<Vec<_>>(),
            "details": details,
        });
        let out = Output { json, text };
        if failed.is_empty() {
            Ok(out)
        } else {
            Err((Some(out), Failure::violated(format!("demo {scenario} failed: {}", failed.join(", ")))))
        }
    }
}

fn cmd_demo(cli: &Cli, scenario: Scenario) -> CmdResult {
    let config = runtime_config(cli);
    match scenario {
        Scenario::Dht => demo_dht(cli, config),
        Scenario::Bank => demo_bank(cli, config),
        Scenario::Graph => demo_graph(cli, config),
    }
}

fn demo_dht(cli: &Cli, config: Config) -> CmdResult {
    let mut demo = Demo::default();
    let base = RaceSpec { seed: cli.seed, ..RaceSpec::default() };
    demo.say(format!(
        "{} clients put {} keys into a {}-shard table; halfway through, the table rehashes to {} shards",
        base.clients, base.keys, base.from_shards, base.to_shards
    ));
    let mut details = BTreeMap::new();
    let mut assignments = Vec::new();
    for how in [Rehash::StopStart, Rehash::AtomicAll] {
        let out = race_rehash(config.clone(), &RaceSpec { how, ..base.clone() }).map_err(|e| fail(e.into()))?;
        let name = match how {
            Rehash::StopStart => "stop-start",
            Rehash::AtomicAll => "atomic-all",
        };
        let c = out.placement.counters;
        demo.say(format!(
            "{name}: map v{}, {} shards, {} entries moved; {} requests buffered, {} redirected, {} rerouted",
            out.rehash.version, out.rehash.shards, out.rehash.moved, c.buffered, c.redirected, c.rerouted
        ));
        let stored: BTreeMap<u64, u64> = out.placement.entries.iter().map(|&(k, _, v)| (k, v)).collect();
        demo.check(format!("{name}: every key stored once"), out.placement.entries.len() == stored.len());
        demo.check(format!("{name}: contents equal the sequential oracle"), stored == out.expected);
        demo.check(
            format!("{name}: every proxy adopted the new map"),
            out.proxy_versions.iter().all(|&v| v == out.rehash.version),
        );
        assignments.push(out.placement.assignment());
        details.insert(
            name,
            json!({ "rehash": out.rehash, "counters": c, "entries": out.placement.entries.len(), "proxyVersions": out.proxy_versions }),
        );
    }
    demo.check("both rehash implementations place every key alike", assignments[0] == assignments[1]);
    demo.finish("dht", json!(details))
}

fn demo_bank(cli: &Cli, config: Config) -> CmdResult {
    let mut demo = Demo::default();
    let base = MoneySpec { seed: cli.seed, ..MoneySpec::default() };
    demo.say(format!(
        "{} tellers run {} random transfers between {} accounts at {} banks while an observer snapshots every bank",
        base.tellers, base.transfers, base.accounts, base.banks
    ));
    let mut details = BTreeMap::new();
    for mode in [TransferMode::Atomic, TransferMode::Unsynchronized] {
        let report = run_money(config.clone(), &MoneySpec { mode, ..base.clone() }).map_err(|e| fail(e.into()))?;
        let name = match mode {
            TransferMode::Atomic => "atomic",
            TransferMode::Unsynchronized => "unsynchronized",
        };
        demo.say(format!(
            "{name}: {} of {} transfers succeeded; {} of {} snapshots saw a total other than {}",
            report.succeeded, report.transfers, report.violations, report.snapshots, report.total
        ));
        let final_total: u64 = report.final_balances.iter().sum();
        demo.check(format!("{name}: final balances sum to {}", report.total), final_total == report.total);
        match mode {
            TransferMode::Atomic => demo.check("atomic: every snapshot conserves the total", report.violations == 0),
            TransferMode::Unsynchronized => {
                demo.check("unsynchronized: the observer catches money in flight", report.violations > 0)
            }
        }
        details.insert(name, serde_json::to_value(&report).expect("money report"));
    }
    demo.finish("bank", json!(details))
}

fn demo_graph(cli: &Cli, config: Config) -> CmdResult {
    const NODES: usize = 50;
    const PARTITIONS: usize = 4;
    let mut demo = Demo::default();
    let g = Graph::random(cli.seed, NODES, 2 * NODES, 20);
    let expected = dijkstra(&g, 0);
    demo.say(format!("a random {NODES}-node graph is split round-robin over {PARTITIONS} actors; shortest paths from node 0"));
    let mut details = BTreeMap::new();
    for policy in [TransferPolicy::Never, TransferPolicy::WhenOwnerIdle] {
        let name = match policy {
            TransferPolicy::Never => "never",
            TransferPolicy::WhenOwnerIdle => "when-owner-idle",
        };
        let rt = Runtime::new(config.clone().with_policy(policy));
        let dg = DistGraph::build(&rt, &g, PARTITIONS).map_err(|e| fail(e.into()))?;
        let report = dg.shortest_paths(0).get().map_err(|e| fail(e.into()))?;
        demo.say(format!(
            "transfers {name}: {} nodes expanded locally, {} through delegation, {} taken over",
            report.local, report.remote, report.transferred
        ));
        demo.check(format!("transfers {name}: distances equal sequential Dijkstra"), report.distances == expected);
        details.insert(name, serde_json::to_value(&report).expect("path report"));
    }
    demo.finish("graph", json!(details))
}

fn cmd_ping(cli: &Cli, messages: u64, mode: Option<PingMode>, runs: usize, batch: usize) -> CmdResult {
    let config = runtime_config(cli);
    let reports: Vec<PingReport> = match mode {
        Some(m) => vec![bench_ping(&config, messages, m, runs, batch).map_err(|e| fail(e.into()))?],
        None => compare_ping(&config, messages, runs, batch).map_err(|e| fail(e.into()))?,
    };
    let mut text = format!("{messages} messages, {} runs, batch {batch}\n", runs.max(1));
    for r in &reports {
        let envelopes = r.runs.first().map_or(0, |x| x.envelopes);
        text.push_str(&format!(
            "{:<16} median {:>9.3} ms  {:>12.0} msg/s  {envelopes} envelopes\n",
            r.mode.name(),
            r.median_seconds * 1e3,
            r.median_msgs_per_sec
        ));
    }
    let median = |m: PingMode| reports.iter().find(|r| r.mode == m).map(|r| r.median_seconds);
    let mut ratios = serde_json::Map::new();
    if let (Some(d), Some(b), Some(a)) =
        (median(PingMode::Direct), median(PingMode::Bestowed), median(PingMode::BestowedAtomic))
    {
        let (bd, ba) = (b / d.max(1e-9), b / a.max(1e-9));
        text.push_str(&format!("bestowed/direct {bd:.2}x, bestowed/bestowed-atomic {ba:.2}x\n"));
        ratios.insert("bestowedOverDirect".into(), bd.into());
        ratios.insert("bestowedOverAtomic".into(), ba.into());
    }
    Ok(Output { json: json!({ "command": "bench-ping", "reports": reports, "ratios": ratios }), text })
}
