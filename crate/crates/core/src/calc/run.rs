//! Single-schedule execution of a program.
//!
//! Where the explorer visits every interleaving, [`run`] follows one: the
//! schedule picks a label among those enabled until no actor can step or
//! the step bound is hit. Ownership transfers never count as progress, so a
//! run ends once only transfers remain enabled.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use super::explorer::{check_progress, typing_options, Property, Violation};
use super::semantics::{Config, Label, Machine, Mutation};
use super::syntax::{Expr, Variant};
use super::types::{typecheck_with, TypeEnv, TypeError};
use super::wf::check_wf_with;

/// How the next label is chosen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Schedule {
    /// Actors take turns in id order; each turn runs the actor's first
    /// enabled label. Transfers are never chosen.
    Fifo,
    /// Uniform choice among enabled labels from a seeded generator.
    Random(u64),
    /// An explicit label sequence, e.g. a trace written by the explorer.
    Script(Vec<Label>),
}

impl Schedule {
    /// Parses `fifo`, `random:SEED` or `script:PATH`, reading the script
    /// through `read` (one label per line; blank lines and `#` comments
    /// are skipped).
    pub fn parse(spec: &str, read: impl FnOnce(&str) -> std::io::Result<String>) -> Result<Schedule, String> {
        if spec == "fifo" {
            return Ok(Schedule::Fifo);
        }
        if let Some(seed) = spec.strip_prefix("random:") {
            return seed.parse().map(Schedule::Random).map_err(|e| format!("bad seed `{seed}`: {e}"));
        }
        if let Some(path) = spec.strip_prefix("script:") {
            let text = read(path).map_err(|e| format!("cannot read `{path}`: {e}"))?;
            return parse_script(&text).map(Schedule::Script);
        }
        Err(format!("unknown schedule `{spec}` (fifo | random:SEED | script:FILE)"))
    }
}

pub fn parse_script(text: &str) -> Result<Vec<Label>, String> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(i, l)| l.parse().map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub schedule: Schedule,
    pub max_steps: usize,
    /// Random schedules stop choosing transfers after this many.
    pub transfer_cap: usize,
    pub wf_every_step: bool,
    pub mutation: Option<Mutation>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { schedule: Schedule::Fifo, max_steps: 10_000, transfer_cap: 2, wf_every_step: false, mutation: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    /// No actor can step and none is stuck.
    Quiescent,
    /// No actor can step and some actor is stuck.
    Stuck,
    StepBound,
    /// The script ran out while actors could still step.
    ScriptEnded,
    /// A per-step check failed; the run stopped there.
    Violated,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Quiescent => "quiescent",
            Outcome::Stuck => "stuck",
            Outcome::StepBound => "step bound",
            Outcome::ScriptEnded => "script ended",
            Outcome::Violated => "violated",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RunReport {
    pub schema: u32,
    pub variant: Variant,
    pub steps: usize,
    pub outcome: Outcome,
    pub trace: Vec<Label>,
    pub violations: Vec<Violation>,
    #[serde(skip)]
    pub final_config: Config,
}

impl RunReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, Error)]
pub enum RunError {
    #[error("program does not typecheck: {0}")]
    Type(#[from] TypeError),
    #[error("script step {step}: `{label}` is not enabled")]
    Script { step: usize, label: Label },
}

pub fn run(program: &Expr, variant: Variant, opts: &RunOptions) -> Result<RunReport, RunError> {
    let typing = typing_options(opts.mutation);
    typecheck_with(&TypeEnv::new(), program, variant, typing)?;
    let machine = Machine { variant, mutation: opts.mutation };
    let mut cfg = Config::initial(program.clone());
    let mut trace = Vec::new();
    let mut violations = Vec::new();
    let mut rng = match opts.schedule {
        Schedule::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    let (mut transfers, mut last_actor) = (0, None);

    let outcome = loop {
        let enabled = machine.enabled(&cfg);
        let steps_left = enabled.iter().any(|l| !matches!(l, Label::Transfer(..)));
        if !steps_left && !matches!(&opts.schedule, Schedule::Script(s) if trace.len() < s.len()) {
            break match check_progress(&cfg, variant) {
                Ok(()) => Outcome::Quiescent,
                Err(stuck) => {
                    violations.push(Violation { property: Property::Progress, trace: trace.clone(), detail: stuck.to_string() });
                    Outcome::Stuck
                }
            };
        }
        if trace.len() >= opts.max_steps {
            break Outcome::StepBound;
        }
        let label = match &opts.schedule {
            Schedule::Fifo => {
                let start = last_actor.map_or(0, |a: super::ActorId| a.0 + 1);
                let steppable = enabled.iter().filter(|l| !matches!(l, Label::Transfer(..)));
                *steppable
                    .clone()
                    .find(|l| l.actor().0 >= start)
                    .or_else(|| steppable.clone().next())
                    .expect("some actor can step")
            }
            Schedule::Random(_) => {
                let pool: Vec<Label> = enabled
                    .iter()
                    .copied()
                    .filter(|l| transfers < opts.transfer_cap || !matches!(l, Label::Transfer(..)))
                    .collect();
                pool[rng.as_mut().unwrap().random_range(0..pool.len())]
            }
            Schedule::Script(script) => match script.get(trace.len()) {
                None => break Outcome::ScriptEnded,
                Some(l) if enabled.contains(l) => *l,
                Some(&label) => return Err(RunError::Script { step: trace.len() + 1, label }),
            },
        };
        let before_wf = opts.wf_every_step && check_wf_with(&cfg, variant, typing).ok;
        cfg = machine.apply(&cfg, label).expect("label taken from the enabled set");
        trace.push(label);
        match label {
            Label::Transfer(..) => transfers += 1,
            l => last_actor = Some(l.actor()),
        }
        if opts.wf_every_step {
            let wf = check_wf_with(&cfg, variant, typing);
            if !wf.ok {
                let property = if before_wf { Property::Preservation } else { Property::Wf };
                violations.push(Violation { property, trace: trace.clone(), detail: wf.summary() });
                break Outcome::Violated;
            }
        }
    };
    Ok(RunReport { schema: 1, variant, steps: trace.len(), outcome, trace, violations, final_config: cfg })
}
