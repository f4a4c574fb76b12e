//! Ping–pong between two actors, three ways.
//!
//! - `direct`: every ping is an actor message whose handler sends a pong;
//! - `bestowed`: pings and pongs go to counters bestowed by each actor, so
//!   every message is wrapped in a delegated perform closure;
//! - `bestowed-atomic`: the ping loop is shipped to the ponger in coalesced
//!   batches and the pongs come back as the batch's results.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use super::WorkloadError;
use crate::runtime::{Config, Ctx, Runtime, RuntimeError, DEFAULT_QUIESCENCE_TIMEOUT};

pub const DEFAULT_BATCH: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PingMode {
    Direct,
    Bestowed,
    BestowedAtomic,
}

impl PingMode {
    pub const ALL: [PingMode; 3] = [PingMode::Direct, PingMode::Bestowed, PingMode::BestowedAtomic];

    pub fn name(self) -> &'static str {
        match self {
            PingMode::Direct => "direct",
            PingMode::Bestowed => "bestowed",
            PingMode::BestowedAtomic => "bestowed-atomic",
        }
    }
}

impl fmt::Display for PingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PingMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown ping mode `{s}` (direct | bestowed | bestowed-atomic)"))
    }
}

/// One timed exchange.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PingRun {
    pub seconds: f64,
    /// Envelopes executed during the exchange (setup excluded).
    pub envelopes: u64,
    pub delegations: u64,
    pub msgs_per_sec: f64,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PingReport {
    pub mode: PingMode,
    pub messages: u64,
    pub batch: usize,
    pub runs: Vec<PingRun>,
    pub median_seconds: f64,
    pub median_msgs_per_sec: f64,
}

impl PingReport {
    fn new(mode: PingMode, messages: u64, batch: usize, runs: Vec<PingRun>) -> PingReport {
        let median_seconds = median(runs.iter().map(|r| r.seconds).collect());
        let median_msgs_per_sec = median(runs.iter().map(|r| r.msgs_per_sec).collect());
        PingReport { mode, messages, batch, runs, median_seconds, median_msgs_per_sec }
    }
}

/// Middle element (mean of the two middle ones for even lengths).
pub fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

struct Counter(u64);

/// Sends `messages` pings and waits for every pong.
pub fn ping_once(config: Config, messages: u64, mode: PingMode, batch: usize) -> Result<PingRun, WorkloadError> {
    if messages == 0 || batch == 0 {
        return Err(WorkloadError::InvalidArgument("messages and batch must be positive".into()));
    }
    let rt = Runtime::new(config);
    let ponger = rt.spawn("ponger", 0u64);
    let pinger = rt.spawn("pinger", 0u64);
    let pb = ponger.send(|_, ctx| ctx.bestow(&ctx.alloc(Counter(0)))).get()?;
    let qb = pinger.send(|_, ctx| ctx.bestow(&ctx.alloc(Counter(0)))).get()?;
    rt.run_until_quiescent(DEFAULT_QUIESCENCE_TIMEOUT)?;
    let before = rt.stats();

    let start = Instant::now();
    match mode {
        PingMode::Direct => {
            for _ in 0..messages {
                let q = pinger.clone();
                ponger.post(move |n, _| {
                    *n += 1;
                    let _ = q.post(|n, _| *n += 1);
                })?;
            }
        }
        PingMode::Bestowed => {
            for _ in 0..messages {
                let q = qb.clone();
                pb.post(move |c, _| {
                    c.0 += 1;
                    let _ = q.post(|c, _| c.0 += 1);
                })?;
            }
        }
        PingMode::BestowedAtomic => {
            let mut pending = Vec::new();
            let mut left = messages;
            while left > 0 {
                let n = left.min(batch as u64);
                left -= n;
                let ops: Vec<_> = (0..n).map(|_| |c: &mut Counter, _: &Ctx| c.0 += 1).collect();
                pending.extend(rt.coalesce(&pb, ops)?);
            }
            let mut pongs = 0;
            for f in pending {
                f.get()?;
                pongs += 1;
            }
            qb.post(move |c, _| c.0 += pongs)?;
        }
    }
    rt.run_until_quiescent(DEFAULT_QUIESCENCE_TIMEOUT)?;
    let seconds = start.elapsed().as_secs_f64();

    let after = rt.stats();
    let (pings, pongs) = match mode {
        PingMode::Direct => (ponger.send(|n, _| *n).get()?, pinger.send(|n, _| *n).get()?),
        _ => (pb.send(|c, _| c.0).get()?, qb.send(|c, _| c.0).get()?),
    };
    if (pings, pongs) != (messages, messages) {
        return Err(RuntimeError::InvalidArgument(format!(
            "lost messages: {pings} pings and {pongs} pongs of {messages}"
        ))
        .into());
    }
    Ok(PingRun {
        seconds,
        envelopes: after.envelopes - before.envelopes,
        delegations: after.delegations - before.delegations,
        msgs_per_sec: messages as f64 / seconds.max(1e-9),
    })
}

/// `runs` timed exchanges in one mode.
pub fn bench_ping(
    config: &Config,
    messages: u64,
    mode: PingMode,
    runs: usize,
    batch: usize,
) -> Result<PingReport, WorkloadError> {
    let runs = (0..runs.max(1))
        .map(|_| ping_once(config.clone(), messages, mode, batch))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PingReport::new(mode, messages, batch, runs))
}

/// All three modes, interleaved run by run so that drift in machine load
/// hits them alike.
pub fn compare_ping(config: &Config, messages: u64, runs: usize, batch: usize) -> Result<Vec<PingReport>, WorkloadError> {
    let mut per_mode: Vec<Vec<PingRun>> = vec![Vec::new(); PingMode::ALL.len()];
    for _ in 0..runs.max(1) {
        for (i, mode) in PingMode::ALL.into_iter().enumerate() {
            per_mode[i].push(ping_once(config.clone(), messages, mode, batch)?);
        }
    }
    Ok(PingMode::ALL.into_iter().zip(per_mode).map(|(m, r)| PingReport::new(m, messages, batch, r)).collect())
}
