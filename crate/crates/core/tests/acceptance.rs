//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if
//! any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use bestow::calc::explorer::{explore, reproduces, ExploreOptions};
use bestow::calc::semantics::{Config as CalcConfig, Machine, Mutation};
use bestow::calc::syntax::{parse_program, split_pragma, SyntaxError, Variant};
use bestow::calc::{check_source, CheckError};
use bestow::runtime::{Config, TransferPolicy};
use bestow::workloads::bank::{self, MoneySpec, TransferMode};
use bestow::workloads::dht::{self, RaceSpec, Rehash};
use bestow::workloads::graph::{self, DistGraph, Graph};
use bestow::workloads::ping::{self, PingMode};
use common::Expect;

// Pinned budgets and sizes.
const AC1_MIN_PROGRAMS: usize = 20;
const AC1_MIN_PER_VARIANT: usize = 6;
const AC1_BUDGET: Duration = Duration::from_secs(1);
const AC2_MIN_PER_VARIANT: usize = 10;
const AC2_DEPTH: usize = 60;
const AC2_TRANSFER_CAP: usize = 2;
const AC2_BUDGET: Duration = Duration::from_secs(300);
const AC4_TRANSFERS: usize = 10_000;
const AC4_BUDGET: Duration = Duration::from_secs(60);
const AC5_SEEDS: u64 = 20;
const AC5_KEYS: usize = 1000;
const AC6_GRAPHS: u64 = 20;
const AC6_NODES: usize = 50;
const AC6_ACTORS: usize = 4;
const AC7_MESSAGES: u64 = 100_000;
const AC7_RUNS: usize = 5;
const AC7_BATCH: usize = 1000;
/// Envelopes beyond `messages / batch` allowed in the coalesced mode.
const AC7_BATCH_SLACK: u64 = 1;
/// Time ratios must exceed this.
const AC7_MIN_RATIO: f64 = 1.0;
const AC8_BATCHES: u64 = 200;

type Check = fn() -> Result<String, String>;

fn main() -> ExitCode {
    let checks: [(&str, &str, Check); 8] = [
        ("AC1", "typechecker corpus verdicts", ac1),
        ("AC2", "explorer finds no violations on the corpus", ac2),
        ("AC3", "every semantics mutant is detected", ac3),
        ("AC4", "atomic money transfer snapshots conserve the total", ac4),
        ("AC5", "DHT rehash loses and duplicates nothing", ac5),
        ("AC6", "distributed Dijkstra equals the sequential oracle", ac6),
        ("AC7", "ping benchmark direction and envelope counts", ac7),
        ("AC8", "coalesce equals the atomic block", ac8),
    ];
    let mut failed = 0;
    for (id, title, check) in checks {
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match res {
            Ok(detail) => println!("PASS {id} {title} ({detail}; {secs:.2}s)"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id} {title}: {why} ({secs:.2}s)");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ac1() -> Result<String, String> {
    let start = Instant::now();
    let files = common::bst_files(&common::corpus_dir().join("typecheck"));
    let mut per_variant: BTreeMap<Variant, usize> = BTreeMap::new();
    let mut verdicts = Vec::new();
    for path in &files {
        let src = fs::read_to_string(path).map_err(|e| e.to_string())?;
        let expect = common::expectation(&src);
        if let Ok((Some(v), ..)) = split_pragma(&src) {
            *per_variant.entry(v).or_default() += 1;
        }
        let got = match check_source(&src, None) {
            Ok((_, _, ty)) => Expect::Type(ty.to_string()),
            Err(CheckError::Type(e)) => Expect::Error(e.kind.to_string()),
            Err(CheckError::Syntax(SyntaxError::Variant { .. })) => Expect::VariantError,
            Err(CheckError::Syntax(SyntaxError::Parse { .. })) => Expect::ParseError,
        };
        ensure(got == expect, || format!("{}: expected {expect:?}, got {got:?}", path.display()))?;
        verdicts.push(got);
    }
    let elapsed = start.elapsed();
    ensure(files.len() >= AC1_MIN_PROGRAMS, || format!("only {} programs", files.len()))?;
    for v in Variant::ALL {
        let n = per_variant.get(&v).copied().unwrap_or(0);
        ensure(n >= AC1_MIN_PER_VARIANT, || format!("{v}: only {n} programs"))?;
    }
    for needed in ["PassiveLeak", "ReceiverNotActive", "BodyNotUnit"] {
        ensure(verdicts.contains(&Expect::Error(needed.into())), || format!("no {needed} rejection"))?;
    }
    ensure(verdicts.contains(&Expect::VariantError), || "no variant-gated rejection".into())?;
    ensure(elapsed < AC1_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("{} programs, 100% match", files.len()))
}

fn explore_opts() -> ExploreOptions {
    ExploreOptions { depth: AC2_DEPTH, transfer_cap: AC2_TRANSFER_CAP, ..ExploreOptions::default() }
}

fn ac2() -> Result<String, String> {
    let start = Instant::now();
    let (mut programs, mut states) = (0, 0);
    for variant in Variant::ALL {
        let corpus = common::explore_programs(variant);
        ensure(corpus.len() >= AC2_MIN_PER_VARIANT, || format!("{variant}: only {} programs", corpus.len()))?;
        for (path, src) in corpus {
            let (_, prog) = parse_program(&src, Some(variant)).map_err(|e| format!("{}: {e}", path.display()))?;
            let report = explore(&prog, variant, &explore_opts()).map_err(|e| format!("{}: {e}", path.display()))?;
            ensure(!report.truncated, || format!("{}: not explored to quiescence", path.display()))?;
            ensure(report.ok(), || format!("{}: {:?}", path.display(), report.violations[0]))?;
            programs += 1;
            states += report.states_visited;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < AC2_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("{programs} programs, {states} states, 0 violations"))
}

fn ac3() -> Result<String, String> {
    let required = [
        Mutation::DropPassiveLeakPremise,
        Mutation::BestowedSendToSender,
        Mutation::TransferWhileRunning,
        Mutation::PrivateSendToPublic,
        Mutation::EndToPublicQueue,
    ];
    let mut summary = Vec::new();
    for mutation in required {
        let machine = Machine::mutated(mutation.variants()[0], mutation);
        let mut shortest: Option<usize> = None;
        for &variant in mutation.variants() {
            let machine = Machine { variant, ..machine };
            let mut corpus = common::explore_programs(variant);
            corpus.extend(common::mutant_programs());
            for (_, src) in corpus {
                let Ok((_, prog)) = parse_program(&src, Some(variant)) else { continue };
                let opts = ExploreOptions { mutation: Some(mutation), minimize: true, ..explore_opts() };
                let Ok(report) = explore(&prog, variant, &opts) else { continue };
                let initial = CalcConfig::initial(prog.clone());
                for v in &report.violations {
                    let n = reproduces(&initial, &v.trace, v.property, &machine)
                        .ok_or_else(|| format!("{mutation}: trace does not replay"))?;
                    ensure(n == v.trace.len(), || format!("{mutation}: minimized trace runs past the violation"))?;
                    shortest = Some(shortest.map_or(n, |s| s.min(n)));
                }
            }
        }
        let n = shortest.ok_or_else(|| format!("{mutation} went undetected"))?;
        summary.push(format!("{mutation}:{n}"));
    }
    Ok(format!("shortest traces {}", summary.join(" ")))
}

fn ac4() -> Result<String, String> {
    let start = Instant::now();
    let spec = MoneySpec { transfers: AC4_TRANSFERS, seed: 4, ..MoneySpec::default() };
    let r = bank::run_money(Config::deterministic(4), &spec).map_err(|e| e.to_string())?;
    ensure(r.transfers == AC4_TRANSFERS, || format!("{} transfers ran", r.transfers))?;
    ensure(r.snapshots > 0 && r.violations == 0, || format!("{} of {} snapshots violated", r.violations, r.snapshots))?;
    let elapsed = start.elapsed();
    let control = MoneySpec { mode: TransferMode::Unsynchronized, ..spec };
    let c = bank::run_money(Config::deterministic(4), &control).map_err(|e| e.to_string())?;
    ensure(c.violations >= 1, || format!("control: none of {} snapshots violated", c.snapshots))?;
    ensure(elapsed < AC4_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} snapshots all conserved; control {} of {} violated",
        r.snapshots, c.violations, c.snapshots
    ))
}

fn ac5() -> Result<String, String> {
    let (mut buffered, mut redirected) = (0, 0);
    for seed in 0..AC5_SEEDS {
        let mut assignments = Vec::new();
        for how in [Rehash::StopStart, Rehash::AtomicAll] {
            let spec = RaceSpec { keys: AC5_KEYS, seed, how, ..RaceSpec::default() };
            let out = dht::race_rehash(Config::deterministic(seed), &spec).map_err(|e| e.to_string())?;
            let keys: BTreeSet<u64> = out.placement.entries.iter().map(|e| e.0).collect();
            ensure(keys.len() == out.placement.entries.len(), || format!("seed {seed} {how:?}: duplicated keys"))?;
            let got: BTreeMap<u64, u64> = out.placement.entries.iter().map(|&(k, _, v)| (k, v)).collect();
            ensure(got == out.expected && got.len() == AC5_KEYS, || {
                format!("seed {seed} {how:?}: {} of {} keys present", got.len(), out.expected.len())
            })?;
            assignments.push(out.placement.assignment());
            buffered += out.placement.counters.buffered;
            redirected += out.placement.counters.redirected;
        }
        ensure(assignments[0] == assignments[1], || format!("seed {seed}: implementations disagree"))?;
    }
    // the puts must actually have raced the rehash
    ensure(buffered + redirected > 0, || "no request met a rehash in progress".into())?;
    Ok(format!("{AC5_SEEDS} seeds x 2 implementations, {AC5_KEYS} keys each; {buffered} buffered, {redirected} redirected"))
}

fn ac6() -> Result<String, String> {
    let mut transfers = 0;
    for policy in [TransferPolicy::Never, TransferPolicy::WhenOwnerIdle] {
        for seed in 0..AC6_GRAPHS {
            let g = Graph::random(seed, AC6_NODES, 2 * AC6_NODES, 25);
            let rt = bestow::runtime::Runtime::new(Config::deterministic(seed).with_policy(policy));
            let dg = DistGraph::build(&rt, &g, AC6_ACTORS).map_err(|e| e.to_string())?;
            let src = (seed as usize * 7) % AC6_NODES;
            let r = dg.shortest_paths(src).get().map_err(|e| e.to_string())?;
            ensure(r.distances == graph::dijkstra(&g, src), || format!("seed {seed} {policy:?}: distances differ"))?;
            if policy == TransferPolicy::WhenOwnerIdle {
                ensure(r.transferred >= 1, || format!("seed {seed}: no transfer"))?;
                transfers += r.transferred;
            }
        }
    }
    Ok(format!("{AC6_GRAPHS} graphs x 2 policies, {transfers} transfers"))
}

fn ac7() -> Result<String, String> {
    let reports = ping::compare_ping(&Config::default(), AC7_MESSAGES, AC7_RUNS, AC7_BATCH).map_err(|e| e.to_string())?;
    let by = |m: PingMode| reports.iter().find(|r| r.mode == m).unwrap();
    let (direct, bestowed, atomic) = (by(PingMode::Direct), by(PingMode::Bestowed), by(PingMode::BestowedAtomic));
    let m = AC7_MESSAGES;
    for r in &direct.runs {
        ensure(r.envelopes == 2 * m, || format!("direct: {} envelopes", r.envelopes))?;
    }
    for r in &bestowed.runs {
        ensure(r.envelopes == 2 * m && r.delegations == 2 * m, || {
            format!("bestowed: {} envelopes, {} delegations", r.envelopes, r.delegations)
        })?;
    }
    for r in &atomic.runs {
        ensure(r.envelopes <= m / AC7_BATCH as u64 + AC7_BATCH_SLACK, || format!("bestowed-atomic: {} envelopes", r.envelopes))?;
    }
    let slow = bestowed.median_seconds / direct.median_seconds;
    let fast = bestowed.median_seconds / atomic.median_seconds;
    ensure(slow > AC7_MIN_RATIO, || format!("bestowed/direct = {slow:.3}"))?;
    ensure(fast > AC7_MIN_RATIO, || format!("bestowed/bestowed-atomic = {fast:.3}"))?;
    Ok(format!("bestowed/direct {slow:.2}, bestowed/bestowed-atomic {fast:.2}"))
}

fn ac8() -> Result<String, String> {
    use common::batch::{random_batch, run_batch};
    for seed in 0..AC8_BATCHES {
        let cfg = || if seed % 2 == 0 { Config::deterministic(seed) } else { Config::default() };
        let (init, ops) = random_batch(seed);
        let c = run_batch(cfg(), &init, &ops, true);
        let a = run_batch(cfg(), &init, &ops, false);
        ensure(c.state.compared() == a.state.compared(), || {
            format!("seed {seed}: {:?} vs {:?}", c.state.compared(), a.state.compared())
        })?;
        ensure(c.results == a.results, || format!("seed {seed}: results differ"))?;
    }
    Ok(format!("{AC8_BATCHES} batches"))
}
