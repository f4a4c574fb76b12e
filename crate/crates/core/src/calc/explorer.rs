//! Bounded exhaustive exploration of interleavings.
//!
//! The search is breadth-first, level by level. Each level is expanded in
//! parallel and merged in frontier order, so the report does not depend on
//! the number of worker threads.
//!
//! Checked properties:
//! - `wf`: every reachable state is well-formed;
//! - `preservation`: no transition leads from a well-formed state to an ill-formed one;
//! - `drf`: no two actors are about to mutate the same location;
//! - `progress`: every actor can step, is terminal, or (private queues) is blocked;
//! - `atomicity`: private-queue conversations are only fed by their initiator.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::semantics::{decompose, send_destination, Config, Decomposition, Label, Machine, Message, Mutation};
use super::syntax::{ActorId, Expr, Loc, QueueId, Value, Variant};
use super::types::{typecheck_with, TypeEnv, TypeError, TypingOptions};
use super::wf::check_wf_with;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Property {
    Wf,
    Preservation,
    Drf,
    Progress,
    Atomicity,
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Property::Wf => "wf",
            Property::Preservation => "preservation",
            Property::Drf => "drf",
            Property::Progress => "progress",
            Property::Atomicity => "atomicity",
        })
    }
}

/// How visited states are recognised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dedup {
    /// Explore the full tree of label sequences.
    None,
    /// Merge identical configurations.
    #[default]
    Exact,
    /// Merge configurations equal up to a renaming of actors, locations and queues.
    Canonical,
}

#[derive(Debug, Clone)]
pub struct ExploreOptions {
    pub depth: usize,
    pub transfer_cap: usize,
    pub state_budget: usize,
    pub dedup: Dedup,
    pub mutation: Option<Mutation>,
    pub parallel: bool,
    pub minimize: bool,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        ExploreOptions {
            depth: 60,
            transfer_cap: 2,
            state_budget: 2_000_000,
            dedup: Dedup::Exact,
            mutation: None,
            parallel: true,
            minimize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub property: Property,
    pub trace: Vec<Label>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ExplorationReport {
    pub schema: u32,
    pub variant: Variant,
    pub states_visited: usize,
    pub transitions: usize,
    pub max_depth: usize,
    /// Some states were not expanded (depth bound or state budget).
    pub truncated: bool,
    /// The state budget ran out.
    pub exhausted: bool,
    pub violations: Vec<Violation>,
}

impl ExplorationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, Error)]
pub enum ExploreError {
    #[error("program does not typecheck: {0}")]
    Type(#[from] TypeError),
}

// ---------------------------------------------------------------------------
// Per-state and per-transition checks

/// Pairs of distinct actors whose redex mutates the same location.
pub fn check_drf(cfg: &Config) -> Vec<((ActorId, ActorId), Loc)> {
    let mutating: Vec<(ActorId, Loc)> = cfg
        .actors
        .iter()
        .filter_map(|(id, a)| match decompose(&a.current) {
            Ok(Decomposition::Redex { redex: Expr::Mutate(t), .. }) => match *t {
                Expr::Val(Value::Loc(l)) => Some((*id, l)),
                _ => None,
            },
            _ => None,
        })
        .collect();
    let mut out = Vec::new();
    for (i, (a, la)) in mutating.iter().enumerate() {
        for (b, lb) in &mutating[i + 1..] {
            if la == lb {
                out.push(((*a, *b), *la));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("stuck actors: {}", .stuck.iter().map(|(a, why)| format!("{a} ({why})")).collect::<Vec<_>>().join(", "))]
pub struct StuckReport {
    pub stuck: Vec<(ActorId, String)>,
}

pub fn check_progress(cfg: &Config, variant: Variant) -> Result<(), StuckReport> {
    progress_with(cfg, &Machine::new(variant))
}

fn progress_with(cfg: &Config, machine: &Machine) -> Result<(), StuckReport> {
    let enabled = machine.enabled(cfg);
    let mut stuck = Vec::new();
    for (id, actor) in &cfg.actors {
        let can_step = enabled.iter().any(|l| !matches!(l, Label::Transfer(..)) && l.actor() == *id);
        let blocked = machine.variant == Variant::PrivateQueues && cfg.is_blocked(*id);
        if !(can_step || actor.is_terminal() || blocked) {
            let why = if actor.is_idle() {
                match actor.queue.front() {
                    Some(m) => format!("cannot process `{}`", m.msg),
                    None => "idle".into(),
                }
            } else {
                format!("cannot reduce `{}`", actor.current)
            };
            stuck.push((*id, why));
        }
    }
    if stuck.is_empty() {
        Ok(())
    } else {
        Err(StuckReport { stuck })
    }
}

fn state_violations(cfg: &Config, machine: &Machine) -> Vec<(Property, String)> {
    let mut out = Vec::new();
    let wf = check_wf_with(cfg, machine.variant, typing_options(machine.mutation));
    if !wf.ok {
        out.push((Property::Wf, wf.summary()));
    }
    for ((a, b), l) in check_drf(cfg) {
        out.push((Property::Drf, format!("{a} and {b} both about to mutate {l}")));
    }
    if let Err(stuck) = progress_with(cfg, machine) {
        out.push((Property::Progress, stuck.to_string()));
    }
    out
}

/// Checks made on a single transition `before --label--> after`.
fn transition_violations(
    before: &Config,
    before_wf: bool,
    label: Label,
    after: &Config,
    machine: &Machine,
) -> Vec<(Property, String)> {
    let mut out = Vec::new();
    if before_wf {
        let wf = check_wf_with(after, machine.variant, typing_options(machine.mutation));
        if !wf.ok {
            out.push((Property::Preservation, format!("`{label}` broke well-formedness: {}", wf.summary())));
        }
    }
    if machine.variant == Variant::PrivateQueues {
        if let Some(detail) = atomicity_violation(before, label, after) {
            out.push((Property::Atomicity, detail));
        }
    }
    out
}

/// The atomicity obligations of one transition:
/// - a private queue only ever yields messages (and `End`) from the actor that opened it;
/// - while an actor converses with `B`, its sends to `B` land in the private queue.
fn atomicity_violation(before: &Config, label: Label, after: &Config) -> Option<String> {
    match label {
        Label::PopPrivate(b) | Label::EndPrivate(b) => {
            let actor = before.actors.get(&b)?;
            let head = actor.queue.front()?;
            let Message::AtReq(q) = head.msg else { return None };
            let initiator = head.sender;
            let consumed = before.queues.get(&q)?.messages.front()?;
            (consumed.sender != initiator).then(|| {
                format!(
                    "{b} read `{}` from {q}, sent by {} during a conversation opened by {initiator}",
                    consumed.msg, consumed.sender
                )
            })
        }
        Label::Run(a) => {
            let actor = before.actors.get(&a)?;
            let Ok(Decomposition::Redex { redex, .. }) = decompose(&actor.current) else { return None };
            let dest = send_destination(before, a, &redex)?;
            let q = *actor.conversations.get(&dest)?;
            let len = |c: &Config| c.queues.get(&q).map_or(0, |pq| pq.messages.len());
            (len(after) != len(before) + 1)
                .then(|| format!("{a} sent to {dest} during its conversation on {q}, but the message did not reach {q}"))
        }
        _ => None,
    }
}

/// Replays a trace and reports every atomicity violation along it.
pub fn check_atomicity(initial: &Config, trace: &[Label], machine: &Machine) -> Vec<String> {
    let mut out = Vec::new();
    let mut cfg = initial.clone();
    for &label in trace {
        let Ok(next) = machine.apply(&cfg, label) else { break };
        if let Some(v) = atomicity_violation(&cfg, label, &next) {
            out.push(v);
        }
        cfg = next;
    }
    out
}

// ---------------------------------------------------------------------------
// Search

struct Node {
    cfg: Arc<Config>,
    transfers: usize,
    parent: usize,
    label: Option<Label>,
    depth: usize,
}

struct Expansion {
    state: Vec<(Property, String)>,
    successors: Vec<(Label, Config, usize, Vec<(Property, String)>)>,
}

/// The typing options implied by a mutation.
pub fn typing_options(mutation: Option<Mutation>) -> TypingOptions {
    TypingOptions { passive_leak_premise: mutation != Some(Mutation::DropPassiveLeakPremise) }
}

pub fn explore(program: &Expr, variant: Variant, opts: &ExploreOptions) -> Result<ExplorationReport, ExploreError> {
    typecheck_with(&TypeEnv::new(), program, variant, typing_options(opts.mutation))?;
    let machine = Machine { variant, mutation: opts.mutation };
    Ok(explore_config(Config::initial(program.clone()), &machine, opts))
}

pub fn explore_config(initial: Config, machine: &Machine, opts: &ExploreOptions) -> ExplorationReport {
    let key = |cfg: &Config, transfers: usize| -> (Config, usize) {
        match opts.dedup {
            Dedup::Canonical => (canonicalize(cfg), transfers),
            _ => (cfg.clone(), transfers),
        }
    };
    let mut nodes = vec![Node { cfg: Arc::new(initial.clone()), transfers: 0, parent: usize::MAX, label: None, depth: 0 }];
    let mut seen: HashSet<(Config, usize)> = HashSet::new();
    if opts.dedup != Dedup::None {
        seen.insert(key(&initial, 0));
    }
    let mut first: BTreeMap<Property, (Vec<Label>, String)> = BTreeMap::new();
    let mut frontier = vec![0usize];
    let (mut truncated, mut exhausted, mut transitions, mut max_depth) = (false, false, 0usize, 0usize);

    let expand = |node: &Node| -> Expansion {
        let state = state_violations(&node.cfg, machine);
        let before_wf = !state.iter().any(|(p, _)| *p == Property::Wf);
        let mut successors = Vec::new();
        if node.depth < opts.depth {
            for label in machine.enabled(&node.cfg) {
                let transfers = node.transfers + matches!(label, Label::Transfer(..)) as usize;
                if transfers > opts.transfer_cap {
                    continue;
                }
                let next = machine.apply(&node.cfg, label).expect("enabled label applies");
                let tv = transition_violations(&node.cfg, before_wf, label, &next, machine);
                successors.push((label, next, transfers, tv));
            }
        }
        Expansion { state, successors }
    };

    while !frontier.is_empty() {
        let expansions: Vec<Expansion> = if opts.parallel {
            frontier.par_iter().map(|&i| expand(&nodes[i])).collect()
        } else {
            frontier.iter().map(|&i| expand(&nodes[i])).collect()
        };
        let mut next_frontier = Vec::new();
        for (&idx, exp) in frontier.iter().zip(expansions) {
            let depth = nodes[idx].depth;
            max_depth = max_depth.max(depth);
            for (p, detail) in exp.state {
                first.entry(p).or_insert_with(|| (path_to(&nodes, idx), detail));
            }
            if depth >= opts.depth && !machine.enabled(&nodes[idx].cfg).is_empty() {
                truncated = true;
            }
            for (label, next, transfers, tv) in exp.successors {
                transitions += 1;
                for (p, detail) in tv {
                    first.entry(p).or_insert_with(|| {
                        let mut t = path_to(&nodes, idx);
                        t.push(label);
                        (t, detail)
                    });
                }
                if opts.dedup != Dedup::None && !seen.insert(key(&next, transfers)) {
                    continue;
                }
                if nodes.len() >= opts.state_budget {
                    truncated = true;
                    exhausted = true;
                    continue;
                }
                nodes.push(Node { cfg: Arc::new(next), transfers, parent: idx, label: Some(label), depth: depth + 1 });
                next_frontier.push(nodes.len() - 1);
            }
        }
        frontier = next_frontier;
    }

    let violations = first
        .into_iter()
        .map(|(property, (trace, detail))| {
            let trace = if opts.minimize { minimize(&initial, &trace, property, machine) } else { trace };
            let detail = replay_detail(&initial, &trace, property, machine).unwrap_or(detail);
            Violation { property, trace, detail }
        })
        .collect();

    ExplorationReport {
        schema: 1,
        variant: machine.variant,
        states_visited: nodes.len(),
        transitions,
        max_depth,
        truncated,
        exhausted,
        violations,
    }
}

fn path_to(nodes: &[Node], mut idx: usize) -> Vec<Label> {
    let mut out = Vec::new();
    while let Some(label) = nodes[idx].label {
        out.push(label);
        idx = nodes[idx].parent;
    }
    out.reverse();
    out
}

/// Replays `trace`, returning the number of steps after which `property`
/// first fails, or `None` if the trace is not replayable or never fails.
pub fn reproduces(initial: &Config, trace: &[Label], property: Property, machine: &Machine) -> Option<usize> {
    first_failure(initial, trace, property, machine).map(|(n, _)| n)
}

fn first_failure(initial: &Config, trace: &[Label], property: Property, machine: &Machine) -> Option<(usize, String)> {
    let hit = |vs: Vec<(Property, String)>| vs.into_iter().find(|(p, _)| *p == property).map(|(_, d)| d);
    let mut cfg = initial.clone();
    if let Some(d) = hit(state_violations(&cfg, machine)) {
        return Some((0, d));
    }
    for (i, &label) in trace.iter().enumerate() {
        let next = machine.apply(&cfg, label).ok()?;
        let before_wf = check_wf_with(&cfg, machine.variant, typing_options(machine.mutation)).ok;
        if let Some(d) = hit(transition_violations(&cfg, before_wf, label, &next, machine)) {
            return Some((i + 1, d));
        }
        if let Some(d) = hit(state_violations(&next, machine)) {
            return Some((i + 1, d));
        }
        cfg = next;
    }
    None
}

fn replay_detail(initial: &Config, trace: &[Label], property: Property, machine: &Machine) -> Option<String> {
    first_failure(initial, trace, property, machine).map(|(_, d)| d)
}

/// Greedy label deletion: drop single labels while the shortened trace still
/// replays and still exhibits the violation.
pub fn minimize(initial: &Config, trace: &[Label], property: Property, machine: &Machine) -> Vec<Label> {
    let mut best = trace.to_vec();
    if let Some(n) = reproduces(initial, &best, property, machine) {
        best.truncate(n);
    } else {
        return best;
    }
    loop {
        let mut improved = false;
        for i in 0..best.len() {
            let mut candidate = best.clone();
            candidate.remove(i);
            if let Some(n) = reproduces(initial, &candidate, property, machine) {
                candidate.truncate(n);
                best = candidate;
                improved = true;
                break;
            }
        }
        if !improved {
            return best;
        }
    }
}

/// Replays a trace, returning every intermediate configuration.
pub fn replay(initial: &Config, trace: &[Label], machine: &Machine) -> Result<Vec<Config>, super::semantics::StepError> {
    let mut out = vec![initial.clone()];
    for &label in trace {
        let next = machine.apply(out.last().unwrap(), label)?;
        out.push(next);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Canonical renaming

/// Renames actors, locations and queues into a normal form.
///
/// Actors keep their relative order (`a0` stays first). Locations are
/// numbered actor by actor, `this` first, then the rest of the local heap in
/// allocation order. Queue ids follow the order in which actors refer to them.
/// Fresh-name counters are reset past the renamed names. Heaps only grow and
/// retired queue ids are never mentioned again, so for well-formed states
/// this is a bijection on everything observable.
pub fn canonicalize(cfg: &Config) -> Config {
    let actor_map: BTreeMap<ActorId, ActorId> =
        cfg.actors.keys().enumerate().map(|(i, a)| (*a, ActorId(i as u32))).collect();

    let mut loc_map: BTreeMap<Loc, Loc> = BTreeMap::new();
    for actor in cfg.actors.values() {
        for l in std::iter::once(&actor.this).chain(actor.heap.iter()) {
            let n = loc_map.len() as u32;
            loc_map.entry(*l).or_insert(Loc(n));
        }
    }

    let mut queue_map: BTreeMap<QueueId, QueueId> = BTreeMap::new();
    for actor in cfg.actors.values() {
        let from_requests = actor.queue.iter().filter_map(|m| match m.msg {
            Message::AtReq(q) => Some(q),
            _ => None,
        });
        for q in actor.conversations.values().copied().chain(from_requests) {
            let n = queue_map.len() as u32;
            queue_map.entry(q).or_insert(QueueId(n));
        }
    }
    for q in cfg.queues.keys() {
        let n = queue_map.len() as u32;
        queue_map.entry(*q).or_insert(QueueId(n));
    }

    let r = Renaming { actors: &actor_map, locs: &loc_map };
    let q = |id: &QueueId| queue_map.get(id).copied().unwrap_or(*id);
    let msg = |m: &super::semantics::Queued| super::semantics::Queued {
        msg: match &m.msg {
            Message::Fn(v) => Message::Fn(r.value(v)),
            Message::AtReq(id) => Message::AtReq(q(id)),
            Message::End => Message::End,
        },
        sender: r.actor(m.sender),
    };

    let actors = cfg
        .actors
        .iter()
        .map(|(id, a)| {
            (
                r.actor(*id),
                super::semantics::ActorState {
                    this: r.loc(a.this),
                    heap: a.heap.iter().map(|l| r.loc(*l)).collect(),
                    queue: a.queue.iter().map(msg).collect(),
                    conversations: a.conversations.iter().map(|(b, id)| (r.actor(*b), q(id))).collect(),
                    current: r.expr(&a.current),
                },
            )
        })
        .collect();
    let owners = cfg.owners.iter().map(|(l, a)| (r.loc(*l), r.actor(*a))).collect();
    let queues = cfg
        .queues
        .iter()
        .map(|(id, pq)| {
            (q(id), super::semantics::PrivateQueue { messages: pq.messages.iter().map(msg).collect(), owner: r.actor(pq.owner) })
        })
        .collect();
    Config {
        actors,
        owners,
        queues,
        fresh: super::semantics::Counters {
            actors: actor_map.len() as u32,
            locs: loc_map.len() as u32,
            queues: queue_map.len() as u32,
        },
    }
}

struct Renaming<'a> {
    actors: &'a BTreeMap<ActorId, ActorId>,
    locs: &'a BTreeMap<Loc, Loc>,
}

impl Renaming<'_> {
    fn actor(&self, a: ActorId) -> ActorId {
        self.actors.get(&a).copied().unwrap_or(a)
    }

    fn loc(&self, l: Loc) -> Loc {
        self.locs.get(&l).copied().unwrap_or(l)
    }

    fn value(&self, v: &Value) -> Value {
        match v {
            Value::Lambda { param, ty, body } => {
                Value::Lambda { param: param.clone(), ty: ty.clone(), body: Box::new(self.expr(body)) }
            }
            Value::Unit => Value::Unit,
            Value::Actor(a) => Value::Actor(self.actor(*a)),
            Value::Loc(l) => Value::Loc(self.loc(*l)),
            Value::Bestowed(l, a) => Value::Bestowed(self.loc(*l), self.actor(*a)),
            Value::Transferable(l) => Value::Transferable(self.loc(*l)),
        }
    }

    fn expr(&self, e: &Expr) -> Expr {
        match e {
            Expr::Var(_) | Expr::New(_) => e.clone(),
            Expr::App(f, a) => Expr::app(self.expr(f), self.expr(a)),
            Expr::Send(t, m) => Expr::send(self.expr(t), self.value(m)),
            Expr::Mutate(t) => Expr::mutate(self.expr(t)),
            Expr::Bestow(t) => Expr::bestow(self.expr(t)),
            Expr::Atomic(t) => Expr::atomic(self.expr(t)),
            Expr::Release(t) => Expr::release(self.expr(t)),
            Expr::Val(v) => Expr::Val(self.value(v)),
        }
    }
}
