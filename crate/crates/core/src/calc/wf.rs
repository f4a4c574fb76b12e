//! Well-formedness of configurations, one checker per variant.
//!
//! Violations are accumulated rather than reported fail-fast, so a single run
//! can diagnose several broken invariants at once.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::semantics::{ActorState, Config, Message, Queued};
use super::syntax::{visit_value, ActorId, Expr, Loc, QueueId, Type, Value, Variant};
use super::types::{typecheck_with, TypeEnv, TypingOptions};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WfViolation {
    pub rule: &'static str,
    pub subject: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct WfReport {
    pub ok: bool,
    pub violations: Vec<WfViolation>,
}

impl WfReport {
    fn from(violations: Vec<WfViolation>) -> Self {
        WfReport { ok: violations.is_empty(), violations }
    }

    pub fn summary(&self) -> String {
        self.violations
            .iter()
            .map(|v| format!("{} ({}): {}", v.rule, v.subject, v.detail))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

struct Acc(Vec<WfViolation>);

impl Acc {
    fn push(&mut self, rule: &'static str, subject: impl ToString, detail: impl Into<String>) {
        self.0.push(WfViolation { rule, subject: subject.to_string(), detail: detail.into() });
    }
}

pub fn check_wf(cfg: &Config, variant: Variant) -> WfReport {
    check_wf_with(cfg, variant, TypingOptions::default())
}

/// Like [`check_wf`], typing current expressions and messages under `typing`.
pub fn check_wf_with(cfg: &Config, variant: Variant, typing: TypingOptions) -> WfReport {
    match variant {
        Variant::Core => core_with(cfg, typing),
        Variant::Transfer => transfer_with(cfg, typing),
        Variant::PrivateQueues => private_with(cfg, typing),
    }
}

pub fn check_wf_core(cfg: &Config) -> WfReport {
    core_with(cfg, TypingOptions::default())
}

pub fn check_wf_transfer(cfg: &Config) -> WfReport {
    transfer_with(cfg, TypingOptions::default())
}

pub fn check_wf_private(cfg: &Config) -> WfReport {
    private_with(cfg, TypingOptions::default())
}

fn core_with(cfg: &Config, typing: TypingOptions) -> WfReport {
    let mut acc = Acc(Vec::new());
    base(cfg, Variant::Core, typing, &mut acc);
    no_private_state(cfg, &mut acc);
    if !cfg.owners.is_empty() {
        acc.push("wf-heap", "owners", "owner map must be empty outside the transfer variant");
    }
    WfReport::from(acc.0)
}

fn transfer_with(cfg: &Config, typing: TypingOptions) -> WfReport {
    let mut acc = Acc(Vec::new());
    base(cfg, Variant::Transfer, typing, &mut acc);
    no_private_state(cfg, &mut acc);

    for (l, owner) in &cfg.owners {
        match cfg.actors.get(owner) {
            Some(a) if a.heap.contains(l) => {}
            Some(_) => acc.push("wf-owners", l, format!("owner {owner} does not hold {l} in its local heap")),
            None => acc.push("wf-owners", l, format!("owner {owner} does not exist")),
        }
    }
    for (id, actor) in &cfg.actors {
        if cfg.owners.contains_key(&actor.this) {
            acc.push("wf-actor-trans", id, format!("this ({}) is transferable", actor.this));
        }
        for l in transferables_in(&actor.current) {
            if !cfg.owners.contains_key(&l) {
                acc.push("wf-actor-trans", id, format!("{l}* has no owner"));
            }
        }
        for m in &actor.queue {
            if let Message::Fn(v) = &m.msg {
                for l in transferables_in_value(v) {
                    if !cfg.owners.contains_key(&l) {
                        acc.push("wf-queue-message-trans", id, format!("queued message mentions {l}* which has no owner"));
                    }
                }
                for l in locs_in_value(v) {
                    if cfg.owners.contains_key(&l) {
                        acc.push(
                            "wf-queue-message-trans",
                            id,
                            format!("queued message mentions {l}, whose ownership is transferable"),
                        );
                    }
                }
            }
        }
    }
    WfReport::from(acc.0)
}

fn private_with(cfg: &Config, typing: TypingOptions) -> WfReport {
    let mut acc = Acc(Vec::new());
    base(cfg, Variant::PrivateQueues, typing, &mut acc);
    if !cfg.owners.is_empty() {
        acc.push("wf-heap", "owners", "owner map must be empty outside the transfer variant");
    }

    let referenced: BTreeMap<QueueId, Vec<ActorId>> =
        cfg.actors.iter().fold(BTreeMap::new(), |mut m, (id, a)| {
            for q in a.conversations.values() {
                m.entry(*q).or_default().push(*id);
            }
            m
        });

    // wf-queue-map
    for (q, pq) in &cfg.queues {
        let Some(owner) = cfg.actors.get(&pq.owner) else {
            acc.push("wf-queue-map", q, format!("reader {} does not exist", pq.owner));
            continue;
        };
        let mut has_end = false;
        for m in &pq.messages {
            match &m.msg {
                Message::Fn(v) => message(cfg, owner, v, Variant::PrivateQueues, typing, "wf-queue-map", q, &mut acc),
                Message::AtReq(r) => acc.push("wf-queue-map", q, format!("private queue holds a request At({r})")),
                Message::End => has_end = true,
            }
        }
        if has_end {
            if let Some(holders) = referenced.get(q) {
                for h in holders {
                    acc.push("wf-queue-map", q, format!("queue has ended but {h} still converses on it"));
                }
            }
        }
    }

    // wf-heap-priv
    for (q, holders) in &referenced {
        if holders.len() > 1 {
            let names: Vec<String> = holders.iter().map(|h| h.to_string()).collect();
            acc.push("wf-heap-priv", q, format!("shared by conversations of {}", names.join(", ")));
        }
    }

    for (id, actor) in &cfg.actors {
        // wf-actor-priv
        for (b, q) in &actor.conversations {
            match cfg.queues.get(q) {
                Some(pq) if pq.owner == *b => {}
                Some(pq) => acc.push("wf-actor-priv", id, format!("conversation with {b} uses {q}, which is read by {}", pq.owner)),
                None => acc.push("wf-actor-priv", id, format!("conversation with {b} uses missing queue {q}")),
            }
        }
        let mut seen = BTreeSet::new();
        for m in &actor.queue {
            match &m.msg {
                Message::End => acc.push("wf-actor-priv", id, "public queue holds an End message"),
                Message::AtReq(q) => {
                    if !seen.insert(*q) {
                        acc.push("wf-actor-priv", id, format!("duplicate request At({q})"));
                    }
                    // wf-queue-atomic
                    match cfg.queues.get(q) {
                        Some(pq) if pq.owner == *id => {}
                        Some(pq) => acc.push("wf-queue-atomic", id, format!("At({q}) names a queue read by {}", pq.owner)),
                        None => acc.push("wf-queue-atomic", id, format!("At({q}) has no private queue")),
                    }
                }
                Message::Fn(_) => {}
            }
        }
    }
    WfReport::from(acc.0)
}

/// The core rules shared by every variant: wf-heap, wf-actor, wf-queue-*.
fn base(cfg: &Config, variant: Variant, typing: TypingOptions, acc: &mut Acc) {
    let mut holder: BTreeMap<Loc, ActorId> = BTreeMap::new();
    for (id, actor) in &cfg.actors {
        for l in &actor.heap {
            if let Some(other) = holder.insert(*l, *id) {
                acc.push("wf-heap", l, format!("held by both {other} and {id}"));
            }
        }
    }

    for (id, actor) in &cfg.actors {
        if !actor.heap.contains(&actor.this) {
            acc.push("wf-actor", id, format!("this ({}) is not in the local heap", actor.this));
        }
        if let Err(err) = typecheck_with(&TypeEnv::new(), &actor.current, variant, typing) {
            acc.push("wf-actor", id, format!("current expression is ill-typed: {err}"));
        }
        values_ok(cfg, actor, &actor.current, "wf-actor", id, acc);

        for Queued { msg, .. } in &actor.queue {
            match msg {
                Message::Fn(v) => message(cfg, actor, v, variant, typing, "wf-queue-message", id, acc),
                Message::AtReq(_) | Message::End if variant != Variant::PrivateQueues => {
                    acc.push("wf-queue-message", id, format!("{msg} outside the private-queue variant"))
                }
                _ => {}
            }
        }
    }
}

fn no_private_state(cfg: &Config, acc: &mut Acc) {
    if !cfg.queues.is_empty() {
        acc.push("wf-heap", "queues", "private queues exist outside the private-queue variant");
    }
    for (id, a) in &cfg.actors {
        if !a.conversations.is_empty() {
            acc.push("wf-actor", id, "conversations exist outside the private-queue variant");
        }
    }
}

/// A queued message run by `reader`: `λx:p.e` with the value restrictions of wf-actor.
fn message(
    cfg: &Config,
    reader: &ActorState,
    v: &Value,
    variant: Variant,
    typing: TypingOptions,
    rule: &'static str,
    subject: impl ToString + Copy,
    acc: &mut Acc,
) {
    match v {
        Value::Lambda { ty: Type::Passive, .. } => {}
        _ => {
            acc.push(rule, subject, format!("message `{v}` is not a lambda over `p`"));
            return;
        }
    }
    if let Err(err) = typecheck_with(&TypeEnv::new(), &Expr::Val(v.clone()), variant, typing) {
        acc.push(rule, subject, format!("message is ill-typed: {err}"));
    }
    values_ok(cfg, reader, &Expr::Val(v.clone()), rule, subject, acc);
}

fn values_ok(cfg: &Config, actor: &ActorState, e: &Expr, rule: &'static str, subject: impl ToString + Copy, acc: &mut Acc) {
    e.visit_values(&mut |v| match v {
        Value::Loc(l) if !actor.heap.contains(l) => {
            acc.push(rule, subject, format!("{l} is not in the local heap"));
        }
        Value::Actor(b) if !cfg.actors.contains_key(b) => {
            acc.push(rule, subject, format!("actor {b} does not exist"));
        }
        Value::Bestowed(l, b) => match cfg.actors.get(b) {
            Some(owner) if owner.heap.contains(l) => {}
            Some(_) => acc.push(rule, subject, format!("{l}@{b} but {b} does not hold {l}")),
            None => acc.push(rule, subject, format!("{l}@{b} names a missing actor")),
        },
        _ => {}
    });
}

fn locs_in_value(v: &Value) -> Vec<Loc> {
    let mut out = Vec::new();
    visit_value(v, &mut |w| {
        if let Value::Loc(l) = w {
            out.push(*l);
        }
    });
    out
}

fn transferables_in_value(v: &Value) -> Vec<Loc> {
    let mut out = Vec::new();
    visit_value(v, &mut |w| {
        if let Value::Transferable(l) = w {
            out.push(*l);
        }
    });
    out
}

fn transferables_in(e: &Expr) -> Vec<Loc> {
    let mut out = Vec::new();
    e.visit_values(&mut |w| {
        if let Value::Transferable(l) = w {
            out.push(*l);
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calc::semantics::{Counters, PrivateQueue};
    use crate::calc::syntax::parse_runtime;
    use std::collections::VecDeque;

    fn actor(this: u32, heap: &[u32], current: Expr) -> ActorState {
        ActorState {
            this: Loc(this),
            heap: heap.iter().map(|&l| Loc(l)).collect(),
            queue: VecDeque::new(),
            conversations: BTreeMap::new(),
            current,
        }
    }

    fn cfg(actors: Vec<ActorState>) -> Config {
        Config {
            actors: actors.into_iter().enumerate().map(|(i, a)| (ActorId(i as u32), a)).collect(),
            owners: BTreeMap::new(),
            queues: BTreeMap::new(),
            fresh: Counters { actors: 10, locs: 10, queues: 10 },
        }
    }

    fn rules(r: &WfReport) -> Vec<&'static str> {
        r.violations.iter().map(|v| v.rule).collect()
    }

    #[test]
    fn initial_config_is_well_formed() {
        let prog = crate::calc::syntax::parse("(new c) ! (fn (x : p) => x.mutate())", Variant::Core).unwrap();
        let r = check_wf_core(&Config::initial(prog));
        assert!(r.ok, "{}", r.summary());
    }

    #[test]
    fn overlapping_heaps() {
        let c = cfg(vec![actor(0, &[0, 5], Expr::unit()), actor(1, &[1, 5], Expr::unit())]);
        assert_eq!(rules(&check_wf_core(&c)), vec!["wf-heap"]);
    }

    #[test]
    fn foreign_location_in_current() {
        let e = parse_runtime("#l9.mutate()", Variant::Core).unwrap();
        let c = cfg(vec![actor(0, &[0], e)]);
        assert_eq!(rules(&check_wf_core(&c)), vec!["wf-actor"]);
    }

    #[test]
    fn owners_entries() {
        let mut c = cfg(vec![actor(0, &[0, 1], Expr::unit())]);
        c.owners.insert(Loc(1), ActorId(0));
        assert!(check_wf_transfer(&c).ok);
        c.owners.insert(Loc(0), ActorId(0));
        assert!(rules(&check_wf_transfer(&c)).contains(&"wf-actor-trans"));
    }

    #[test]
    fn queued_transferable_without_owner() {
        let mut c = cfg(vec![actor(0, &[0], Expr::unit())]);
        let v = parse_runtime("fn (y : p) => #l4* ! (fn (x : p) => unit)", Variant::Transfer).unwrap();
        let Expr::Val(v) = v else { unreachable!() };
        c.actors.get_mut(&ActorId(0)).unwrap().queue.push_back(Queued { msg: Message::Fn(v), sender: ActorId(0) });
        assert!(rules(&check_wf_transfer(&c)).contains(&"wf-queue-message-trans"));
    }

    #[test]
    fn conversation_with_matching_queue() {
        let mut c = cfg(vec![actor(0, &[0], Expr::unit()), actor(1, &[1], Expr::unit())]);
        c.actors.get_mut(&ActorId(0)).unwrap().conversations.insert(ActorId(1), QueueId(0));
        c.queues.insert(QueueId(0), PrivateQueue { messages: VecDeque::new(), owner: ActorId(1) });
        let r = check_wf_private(&c);
        assert!(r.ok, "{}", r.summary());
    }

    #[test]
    fn shared_private_queue() {
        let mut c = cfg(vec![
            actor(0, &[0], Expr::unit()),
            actor(1, &[1], Expr::unit()),
            actor(2, &[2], Expr::unit()),
        ]);
        c.actors.get_mut(&ActorId(0)).unwrap().conversations.insert(ActorId(1), QueueId(0));
        c.actors.get_mut(&ActorId(2)).unwrap().conversations.insert(ActorId(1), QueueId(0));
        c.queues.insert(QueueId(0), PrivateQueue { messages: VecDeque::new(), owner: ActorId(1) });
        assert_eq!(rules(&check_wf_private(&c)), vec!["wf-heap-priv"]);
    }

    #[test]
    fn end_in_public_queue() {
        let mut c = cfg(vec![actor(0, &[0], Expr::unit())]);
        c.actors.get_mut(&ActorId(0)).unwrap().queue.push_back(Queued { msg: Message::End, sender: ActorId(0) });
        assert_eq!(rules(&check_wf_private(&c)), vec!["wf-actor-priv"]);
    }

    #[test]
    fn violations_accumulate() {
        let e = parse_runtime("#l9.mutate()", Variant::Core).unwrap();
        let c = cfg(vec![actor(0, &[5], e), actor(1, &[1, 5], Expr::unit())]);
        let r = check_wf_core(&c);
        assert!(!r.ok);
        assert!(r.violations.len() >= 3, "{}", r.summary());
    }
}
