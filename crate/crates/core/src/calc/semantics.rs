//! Small-step labelled transition system for the three calculi.
//!
//! A [`Config`] is an immutable snapshot; [`Machine::apply`] returns a new one.
//! Fresh names come from monotone counters stored in the configuration, so
//! applying a label is a function of the configuration alone.
//!
//! Queues are FIFO: messages are appended at the tail and popped from the head.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use super::syntax::{ActorId, Expr, Loc, QueueId, Type, Value, Variant};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum Message {
    Fn(Value),
    /// Request to start a private conversation on the given queue.
    AtReq(QueueId),
    /// End of a private conversation.
    End,
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Message::Fn(v) => write!(f, "{v}"),
            Message::AtReq(q) => write!(f, "At({q})"),
            Message::End => f.write_str("End"),
        }
    }
}

/// A message together with the actor whose step enqueued it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Queued {
    pub msg: Message,
    pub sender: ActorId,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ActorState {
    pub this: Loc,
    pub heap: BTreeSet<Loc>,
    pub queue: VecDeque<Queued>,
    /// Open conversations: target actor → private queue.
    pub conversations: BTreeMap<ActorId, QueueId>,
    pub current: Expr,
}

impl ActorState {
    pub fn is_idle(&self) -> bool {
        self.current.is_value()
    }

    pub fn is_terminal(&self) -> bool {
        self.is_idle() && self.queue.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct PrivateQueue {
    pub messages: VecDeque<Queued>,
    pub owner: ActorId,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize)]
pub struct Counters {
    pub actors: u32,
    pub locs: u32,
    pub queues: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Config {
    pub actors: BTreeMap<ActorId, ActorState>,
    /// Owner map for transferable locations.
    pub owners: BTreeMap<Loc, ActorId>,
    pub queues: BTreeMap<QueueId, PrivateQueue>,
    pub fresh: Counters,
}

impl Config {
    /// Main actor `a0` with `this = l0` running `program`.
    pub fn initial(program: Expr) -> Config {
        let main = ActorState {
            this: Loc(0),
            heap: BTreeSet::from([Loc(0)]),
            queue: VecDeque::new(),
            conversations: BTreeMap::new(),
            current: program,
        };
        Config {
            actors: BTreeMap::from([(ActorId(0), main)]),
            owners: BTreeMap::new(),
            queues: BTreeMap::new(),
            fresh: Counters { actors: 1, locs: 1, queues: 0 },
        }
    }

    pub fn actor(&self, id: ActorId) -> Option<&ActorState> {
        self.actors.get(&id)
    }

    fn fresh_actor(&mut self) -> ActorId {
        let id = ActorId(self.fresh.actors);
        self.fresh.actors += 1;
        id
    }

    fn fresh_loc(&mut self) -> Loc {
        let l = Loc(self.fresh.locs);
        self.fresh.locs += 1;
        l
    }

    fn fresh_queue(&mut self) -> QueueId {
        let q = QueueId(self.fresh.queues);
        self.fresh.queues += 1;
        q
    }

    /// The private queue an actor is currently reading from, if its public
    /// queue is headed by a conversation request.
    pub fn active_private(&self, id: ActorId) -> Option<QueueId> {
        match self.actors.get(&id)?.queue.front() {
            Some(Queued { msg: Message::AtReq(q), .. }) => Some(*q),
            _ => None,
        }
    }

    /// Blocked: idle, public head is `At(q)` and `q` is empty.
    pub fn is_blocked(&self, id: ActorId) -> bool {
        let Some(actor) = self.actors.get(&id) else { return false };
        actor.is_idle()
            && self
                .active_private(id)
                .and_then(|q| self.queues.get(&q))
                .is_some_and(|pq| pq.messages.is_empty())
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (id, a) in &self.actors {
            let heap: Vec<String> = a.heap.iter().map(|l| l.to_string()).collect();
            write!(f, "{id}: this={} heap={{{}}} current=`{}`", a.this, heap.join(","), a.current)?;
            if !a.queue.is_empty() {
                let q: Vec<String> = a.queue.iter().map(|m| format!("{}<-{}", m.msg, m.sender)).collect();
                write!(f, " queue=[{}]", q.join(", "))?;
            }
            if !a.conversations.is_empty() {
                let c: Vec<String> = a.conversations.iter().map(|(b, q)| format!("{b}:{q}")).collect();
                write!(f, " conversations={{{}}}", c.join(","))?;
            }
            writeln!(f)?;
        }
        if !self.owners.is_empty() {
            let o: Vec<String> = self.owners.iter().map(|(l, a)| format!("{l}->{a}")).collect();
            writeln!(f, "owners: {{{}}}", o.join(", "))?;
        }
        for (q, pq) in &self.queues {
            let m: Vec<String> = pq.messages.iter().map(|m| format!("{}<-{}", m.msg, m.sender)).collect();
            writeln!(f, "{q} (read by {}): [{}]", pq.owner, m.join(", "))?;
        }
        Ok(())
    }
}

/// One schedulable step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Run(ActorId),
    PopPublic(ActorId),
    PopPrivate(ActorId),
    EndPrivate(ActorId),
    Transfer(Loc, ActorId),
}

impl Label {
    /// The actor whose state the label primarily advances.
    pub fn actor(&self) -> ActorId {
        match *self {
            Label::Run(a) | Label::PopPublic(a) | Label::PopPrivate(a) | Label::EndPrivate(a) | Label::Transfer(_, a) => a,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Run(a) => write!(f, "run {a}"),
            Label::PopPublic(a) => write!(f, "pop {a}"),
            Label::PopPrivate(a) => write!(f, "pop-private {a}"),
            Label::EndPrivate(a) => write!(f, "end-private {a}"),
            Label::Transfer(l, a) => write!(f, "transfer {l} -> {a}"),
        }
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let words: Vec<&str> = s.split_whitespace().collect();
        match words.as_slice() {
            ["run", a] => Ok(Label::Run(a.parse()?)),
            ["pop", a] => Ok(Label::PopPublic(a.parse()?)),
            ["pop-private", a] => Ok(Label::PopPrivate(a.parse()?)),
            ["end-private", a] => Ok(Label::EndPrivate(a.parse()?)),
            ["transfer", l, "->", a] => Ok(Label::Transfer(l.parse()?, a.parse()?)),
            _ => Err(format!("cannot parse label `{s}`")),
        }
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

// ---------------------------------------------------------------------------
// Evaluation contexts

/// One layer of an evaluation context `E`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    /// `• e`
    AppFun(Expr),
    /// `v •`
    AppArg(Value),
    /// `• ! v`
    SendTarget(Value),
    /// `•.mutate()`
    Mutate,
    /// `bestow •`
    Bestow,
    /// `atomic •`
    Atomic,
    /// `release •`
    Release,
}

/// An evaluation context, outermost frame first.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Context(pub Vec<Frame>);

impl Context {
    pub fn is_hole(&self) -> bool {
        self.0.is_empty()
    }

    pub fn plug(&self, e: Expr) -> Expr {
        self.0.iter().rev().fold(e, |inner, frame| match frame {
            Frame::AppFun(arg) => Expr::app(inner, arg.clone()),
            Frame::AppArg(f) => Expr::app(Expr::Val(f.clone()), inner),
            Frame::SendTarget(m) => Expr::send(inner, m.clone()),
            Frame::Mutate => Expr::mutate(inner),
            Frame::Bestow => Expr::bestow(inner),
            Frame::Atomic => Expr::atomic(inner),
            Frame::Release => Expr::release(inner),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decomposition {
    AlreadyValue(Value),
    Redex { ctx: Context, redex: Expr },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("stuck expression `{0}`")]
pub struct Stuck(pub String);

/// Splits `e` into the context and the leftmost-innermost redex.
///
/// Fails with [`Stuck`] when the redex has a shape no rule can reduce
/// (unreachable for well-typed terms).
pub fn decompose(e: &Expr) -> Result<Decomposition, Stuck> {
    let mut frames = Vec::new();
    let mut cur = e;
    loop {
        let next = match cur {
            Expr::Val(v) if frames.is_empty() => return Ok(Decomposition::AlreadyValue(v.clone())),
            Expr::Val(_) | Expr::Var(_) => return Err(Stuck(cur.to_string())),
            Expr::New(_) => None,
            Expr::App(f, a) => match (&**f, &**a) {
                (Expr::Val(fv), Expr::Val(_)) => {
                    if !matches!(fv, Value::Lambda { .. }) {
                        return Err(Stuck(cur.to_string()));
                    }
                    None
                }
                (Expr::Val(fv), _) => {
                    frames.push(Frame::AppArg(fv.clone()));
                    Some(&**a)
                }
                _ => {
                    frames.push(Frame::AppFun((**a).clone()));
                    Some(&**f)
                }
            },
            Expr::Send(t, m) => match &**t {
                Expr::Val(tv) => {
                    let ok_target = matches!(tv, Value::Actor(_) | Value::Bestowed(..) | Value::Transferable(_));
                    if !ok_target || !matches!(m, Value::Lambda { .. }) {
                        return Err(Stuck(cur.to_string()));
                    }
                    None
                }
                _ => {
                    frames.push(Frame::SendTarget(m.clone()));
                    Some(&**t)
                }
            },
            Expr::Mutate(t) | Expr::Bestow(t) | Expr::Atomic(t) | Expr::Release(t) => match &**t {
                Expr::Val(tv) => {
                    let ok = match cur {
                        Expr::Mutate(_) | Expr::Bestow(_) => matches!(tv, Value::Loc(_)),
                        _ => matches!(tv, Value::Actor(_) | Value::Bestowed(..)),
                    };
                    if !ok {
                        return Err(Stuck(cur.to_string()));
                    }
                    None
                }
                _ => {
                    frames.push(match cur {
                        Expr::Mutate(_) => Frame::Mutate,
                        Expr::Bestow(_) => Frame::Bestow,
                        Expr::Atomic(_) => Frame::Atomic,
                        _ => Frame::Release,
                    });
                    Some(&**t)
                }
            },
        };
        match next {
            Some(inner) => cur = inner,
            None => return Ok(Decomposition::Redex { ctx: Context(frames), redex: cur.clone() }),
        }
    }
}

/// The redex of an expression, or `None` for values and stuck terms.
pub fn redex_of(e: &Expr) -> Option<Expr> {
    match decompose(e) {
        Ok(Decomposition::Redex { redex, .. }) => Some(redex),
        _ => None,
    }
}

/// `body[v/param]`. Values substituted at run time are closed, so only
/// shadowing needs care.
pub fn substitute(body: &Expr, param: &str, v: &Value) -> Expr {
    match body {
        Expr::Var(x) if x == param => Expr::Val(v.clone()),
        Expr::Var(_) | Expr::New(_) => body.clone(),
        Expr::App(f, a) => Expr::app(substitute(f, param, v), substitute(a, param, v)),
        Expr::Send(t, m) => Expr::send(substitute(t, param, v), substitute_value(m, param, v)),
        Expr::Mutate(t) => Expr::mutate(substitute(t, param, v)),
        Expr::Bestow(t) => Expr::bestow(substitute(t, param, v)),
        Expr::Atomic(t) => Expr::atomic(substitute(t, param, v)),
        Expr::Release(t) => Expr::release(substitute(t, param, v)),
        Expr::Val(w) => Expr::Val(substitute_value(w, param, v)),
    }
}

fn substitute_value(w: &Value, param: &str, v: &Value) -> Value {
    match w {
        Value::Lambda { param: p, ty, body } if p != param => {
            Value::Lambda { param: p.clone(), ty: ty.clone(), body: Box::new(substitute(body, param, v)) }
        }
        _ => w.clone(),
    }
}

// ---------------------------------------------------------------------------
// Transitions

/// Deliberately broken rule variants, used to show the checkers have teeth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Mutation {
    /// Message bodies may mention passive variables (admission check only).
    DropPassiveLeakPremise,
    /// Sends to `ι_id` are delivered to the sender instead of `id`.
    BestowedSendToSender,
    /// Ownership may move while the owner is running a message.
    TransferWhileRunning,
    /// Sends inside a conversation go to the public queue.
    PrivateSendToPublic,
    /// `release` puts `End` on the target's public queue.
    EndToPublicQueue,
    /// Plain sends are routed into any open private queue of the receiver.
    CrossTalkIntoPrivate,
}

impl Mutation {
    pub const ALL: [Mutation; 6] = [
        Mutation::DropPassiveLeakPremise,
        Mutation::BestowedSendToSender,
        Mutation::TransferWhileRunning,
        Mutation::PrivateSendToPublic,
        Mutation::EndToPublicQueue,
        Mutation::CrossTalkIntoPrivate,
    ];

    /// Variants whose rules the mutation touches.
    pub fn variants(self) -> &'static [Variant] {
        match self {
            Mutation::DropPassiveLeakPremise => &[Variant::Core, Variant::Transfer, Variant::PrivateQueues],
            Mutation::BestowedSendToSender => &[Variant::Core, Variant::PrivateQueues],
            Mutation::TransferWhileRunning => &[Variant::Transfer],
            Mutation::PrivateSendToPublic
            | Mutation::EndToPublicQueue
            | Mutation::CrossTalkIntoPrivate => &[Variant::PrivateQueues],
        }
    }
}

impl fmt::Display for Mutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mutation::DropPassiveLeakPremise => "drop-passive-leak-premise",
            Mutation::BestowedSendToSender => "bestowed-send-to-sender",
            Mutation::TransferWhileRunning => "transfer-while-running",
            Mutation::PrivateSendToPublic => "private-send-to-public",
            Mutation::EndToPublicQueue => "end-to-public-queue",
            Mutation::CrossTalkIntoPrivate => "cross-talk-into-private",
        };
        f.write_str(s)
    }
}

impl FromStr for Mutation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mutation::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| format!("unknown mutation `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StepError {
    #[error("label `{0}` is not enabled")]
    IllegalLabel(Label),
}

/// The transition relation of one variant, optionally with a broken rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Machine {
    pub variant: Variant,
    pub mutation: Option<Mutation>,
}

impl Machine {
    pub fn new(variant: Variant) -> Self {
        Machine { variant, mutation: None }
    }

    pub fn mutated(variant: Variant, mutation: Mutation) -> Self {
        Machine { variant, mutation: Some(mutation) }
    }

    fn has(&self, m: Mutation) -> bool {
        self.mutation == Some(m)
    }

    /// Every label enabled in `cfg`, in canonical order.
    pub fn enabled(&self, cfg: &Config) -> Vec<Label> {
        let mut out = Vec::new();
        for (&id, actor) in &cfg.actors {
            if self.can_run(cfg, actor) {
                out.push(Label::Run(id));
            }
            if actor.is_idle() {
                match actor.queue.front().map(|m| &m.msg) {
                    Some(Message::Fn(_)) => out.push(Label::PopPublic(id)),
                    Some(Message::AtReq(q)) if self.variant == Variant::PrivateQueues => {
                        match cfg.queues.get(q).and_then(|pq| pq.messages.front()).map(|m| &m.msg) {
                            Some(Message::Fn(_)) => out.push(Label::PopPrivate(id)),
                            Some(Message::End) => out.push(Label::EndPrivate(id)),
                            _ => {}
                        }
                    }
                    _ => {}
                }
            }
        }
        if self.variant == Variant::Transfer {
            for (&l, &from) in &cfg.owners {
                let owner_idle = cfg.actors.get(&from).is_some_and(|a| a.is_idle());
                if owner_idle || self.has(Mutation::TransferWhileRunning) {
                    for &to in cfg.actors.keys() {
                        if to != from {
                            out.push(Label::Transfer(l, to));
                        }
                    }
                }
            }
        }
        out
    }

    fn can_run(&self, cfg: &Config, actor: &ActorState) -> bool {
        let Ok(Decomposition::Redex { redex, .. }) = decompose(&actor.current) else {
            return false;
        };
        match &redex {
            Expr::New(Type::Passive | Type::Actor) => true,
            Expr::New(Type::Transferable) => self.variant == Variant::Transfer,
            Expr::New(_) => false,
            Expr::Bestow(_) => self.variant.allows_bestow(),
            Expr::Atomic(t) | Expr::Release(t) => {
                self.variant == Variant::PrivateQueues && target_actor(t).is_some_and(|b| cfg.actors.contains_key(&b))
            }
            Expr::Send(t, _) => match t.as_value() {
                Some(Value::Actor(b)) | Some(Value::Bestowed(_, b)) => {
                    cfg.actors.contains_key(b) && (self.variant.allows_bestow() || matches!(t.as_value(), Some(Value::Actor(_))))
                }
                Some(Value::Transferable(l)) => {
                    self.variant == Variant::Transfer && cfg.owners.get(l).is_some_and(|o| cfg.actors.contains_key(o))
                }
                _ => false,
            },
            _ => true,
        }
    }

    pub fn apply(&self, cfg: &Config, label: Label) -> Result<Config, StepError> {
        if !self.enabled(cfg).contains(&label) {
            return Err(StepError::IllegalLabel(label));
        }
        let mut next = cfg.clone();
        match label {
            Label::Run(id) => self.run(&mut next, id),
            Label::PopPublic(id) => {
                let actor = next.actors.get_mut(&id).unwrap();
                let Some(Queued { msg: Message::Fn(v), .. }) = actor.queue.pop_front() else { unreachable!() };
                actor.current = Expr::app(Expr::Val(v), Expr::Val(Value::Loc(actor.this)));
            }
            Label::PopPrivate(id) => {
                let q = next.active_private(id).unwrap();
                let Some(Queued { msg: Message::Fn(v), .. }) = next.queues.get_mut(&q).unwrap().messages.pop_front() else {
                    unreachable!()
                };
                let actor = next.actors.get_mut(&id).unwrap();
                actor.current = Expr::app(Expr::Val(v), Expr::Val(Value::Loc(actor.this)));
            }
            Label::EndPrivate(id) => {
                let q = next.active_private(id).unwrap();
                next.queues.remove(&q);
                next.actors.get_mut(&id).unwrap().queue.pop_front();
            }
            Label::Transfer(l, to) => {
                let from = next.owners[&l];
                next.actors.get_mut(&from).unwrap().heap.remove(&l);
                next.actors.get_mut(&to).unwrap().heap.insert(l);
                next.owners.insert(l, to);
            }
        }
        Ok(next)
    }

    fn run(&self, cfg: &mut Config, id: ActorId) {
        let current = cfg.actors[&id].current.clone();
        let Ok(Decomposition::Redex { ctx, redex }) = decompose(&current) else { unreachable!() };
        let result = match redex {
            Expr::App(f, a) => {
                let (Expr::Val(Value::Lambda { param, body, .. }), Expr::Val(v)) = (*f, *a) else { unreachable!() };
                substitute(&body, &param, &v)
            }
            Expr::Mutate(_) => Expr::unit(),
            Expr::New(Type::Passive) => {
                let l = cfg.fresh_loc();
                cfg.actors.get_mut(&id).unwrap().heap.insert(l);
                Expr::Val(Value::Loc(l))
            }
            Expr::New(Type::Transferable) => {
                let l = cfg.fresh_loc();
                cfg.actors.get_mut(&id).unwrap().heap.insert(l);
                cfg.owners.insert(l, id);
                Expr::Val(Value::Transferable(l))
            }
            Expr::New(_) => {
                let a = cfg.fresh_actor();
                let this = cfg.fresh_loc();
                cfg.actors.insert(
                    a,
                    ActorState {
                        this,
                        heap: BTreeSet::from([this]),
                        queue: VecDeque::new(),
                        conversations: BTreeMap::new(),
                        current: Expr::unit(),
                    },
                );
                Expr::Val(Value::Actor(a))
            }
            Expr::Bestow(t) => {
                let Expr::Val(Value::Loc(l)) = *t else { unreachable!() };
                Expr::Val(Value::Bestowed(l, id))
            }
            Expr::Send(t, msg) => match *t {
                Expr::Val(Value::Actor(b)) => {
                    self.deliver(cfg, id, b, msg);
                    Expr::unit()
                }
                Expr::Val(Value::Bestowed(l, owner)) => {
                    let wrapper = Value::lambda("y", Type::Passive, Expr::app(Expr::Val(msg), Expr::Val(Value::Loc(l))));
                    let dest = if self.has(Mutation::BestowedSendToSender) { id } else { owner };
                    self.deliver(cfg, id, dest, wrapper);
                    Expr::unit()
                }
                Expr::Val(Value::Transferable(l)) => {
                    let owner = cfg.owners[&l];
                    if owner == id {
                        Expr::app(Expr::Val(msg), Expr::Val(Value::Loc(l)))
                    } else {
                        let relay = Value::lambda("y", Type::Passive, Expr::send(Expr::Val(Value::Transferable(l)), msg));
                        push_public(cfg, owner, Message::Fn(relay), id);
                        Expr::unit()
                    }
                }
                _ => unreachable!(),
            },
            Expr::Atomic(t) => {
                let b = target_actor(&t).unwrap();
                if !cfg.actors[&id].conversations.contains_key(&b) {
                    let q = cfg.fresh_queue();
                    cfg.actors.get_mut(&id).unwrap().conversations.insert(b, q);
                    cfg.queues.insert(q, PrivateQueue { messages: VecDeque::new(), owner: b });
                    push_public(cfg, b, Message::AtReq(q), id);
                }
                Expr::unit()
            }
            Expr::Release(t) => {
                let b = target_actor(&t).unwrap();
                if let Some(q) = cfg.actors.get_mut(&id).unwrap().conversations.remove(&b) {
                    let end = Queued { msg: Message::End, sender: id };
                    if self.has(Mutation::EndToPublicQueue) {
                        cfg.actors.get_mut(&b).unwrap().queue.push_back(end);
                    } else {
                        cfg.queues.get_mut(&q).unwrap().messages.push_back(end);
                    }
                }
                Expr::unit()
            }
            Expr::Var(_) | Expr::Val(_) => unreachable!(),
        };
        cfg.actors.get_mut(&id).unwrap().current = ctx.plug(result);
    }

    /// Enqueues a lambda message from `from` to `to`, honouring open conversations.
    fn deliver(&self, cfg: &mut Config, from: ActorId, to: ActorId, msg: Value) {
        if self.variant == Variant::PrivateQueues {
            let conversation = cfg.actors[&from].conversations.get(&to).copied();
            if let Some(q) = conversation {
                if !self.has(Mutation::PrivateSendToPublic) {
                    cfg.queues.get_mut(&q).unwrap().messages.push_back(Queued { msg: Message::Fn(msg), sender: from });
                    return;
                }
            } else if self.has(Mutation::CrossTalkIntoPrivate) {
                if let Some(pq) = cfg.queues.values_mut().find(|pq| pq.owner == to) {
                    pq.messages.push_back(Queued { msg: Message::Fn(msg), sender: from });
                    return;
                }
            }
        }
        push_public(cfg, to, Message::Fn(msg), from);
    }
}

fn push_public(cfg: &mut Config, to: ActorId, msg: Message, sender: ActorId) {
    cfg.actors.get_mut(&to).unwrap().queue.push_back(Queued { msg, sender });
}

/// The actor addressed by an `atomic`/`release` target value.
fn target_actor(t: &Expr) -> Option<ActorId> {
    match t.as_value()? {
        Value::Actor(b) | Value::Bestowed(_, b) => Some(*b),
        _ => None,
    }
}

/// The actor a send redex in `id` would enqueue on, and whether it goes to a
/// conversation queue under the unmutated rules.
pub fn send_destination(cfg: &Config, id: ActorId, redex: &Expr) -> Option<ActorId> {
    let Expr::Send(t, _) = redex else { return None };
    match t.as_value()? {
        Value::Actor(b) | Value::Bestowed(_, b) => Some(*b),
        Value::Transferable(l) => cfg.owners.get(l).copied().filter(|o| *o != id),
        _ => None,
    }
}

pub fn enabled(cfg: &Config, variant: Variant) -> Vec<Label> {
    Machine::new(variant).enabled(cfg)
}

pub fn apply(cfg: &Config, label: Label, variant: Variant) -> Result<Config, StepError> {
    Machine::new(variant).apply(cfg, label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calc::syntax::parse_runtime;

    fn rt(src: &str, v: Variant) -> Expr {
        parse_runtime(src, v).unwrap()
    }

    fn lam(src: &str, v: Variant) -> Value {
        rt(src, v).as_value().unwrap().clone()
    }

    #[test]
    fn decompose_examples() {
        let e = rt("(fn (x : p) => unit) #l1", Variant::Core);
        match decompose(&e).unwrap() {
            Decomposition::Redex { ctx, redex } => {
                assert!(ctx.is_hole());
                assert_eq!(redex, e);
            }
            other => panic!("{other:?}"),
        }
        let e = rt("(bestow (new p)) ! (fn (x : p) => unit)", Variant::Core);
        match decompose(&e).unwrap() {
            Decomposition::Redex { ctx, redex } => {
                assert_eq!(ctx.0.len(), 2);
                assert!(matches!(ctx.0[0], Frame::SendTarget(_)));
                assert_eq!(ctx.0[1], Frame::Bestow);
                assert_eq!(redex, Expr::New(Type::Passive));
                assert_eq!(ctx.plug(redex), e);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(decompose(&Expr::unit()).unwrap(), Decomposition::AlreadyValue(Value::Unit));
        assert!(decompose(&rt("unit unit", Variant::Core)).is_err());
    }

    #[test]
    fn substitute_examples() {
        let v = Variant::Core;
        assert_eq!(substitute(&rt("x.mutate()", v), "x", &Value::Loc(Loc(2))), rt("#l2.mutate()", v));
        let shadow = rt("fn (x : p) => x", v);
        assert_eq!(substitute(&shadow, "x", &Value::Unit), shadow);
        assert_eq!(substitute(&rt("x y", v), "x", &Value::Actor(ActorId(1))), rt("@a1 y", v));
    }

    #[test]
    fn idle_single_actor_has_nothing_enabled() {
        assert!(enabled(&Config::initial(Expr::unit()), Variant::Core).is_empty());
        let cfg = Config::initial(rt("#l0.mutate()", Variant::Core));
        assert_eq!(enabled(&cfg, Variant::Core), vec![Label::Run(ActorId(0))]);
    }

    #[test]
    fn pop_then_run_to_unit() {
        let v = Variant::Core;
        let mut cfg = Config::initial(Expr::unit());
        cfg.actors.get_mut(&ActorId(0)).unwrap().queue.push_back(Queued {
            msg: Message::Fn(lam("fn (x : p) => x.mutate()", v)),
            sender: ActorId(0),
        });
        let cfg = apply(&cfg, Label::PopPublic(ActorId(0)), v).unwrap();
        assert_eq!(cfg.actors[&ActorId(0)].current, rt("(fn (x : p) => x.mutate()) #l0", v));
        let cfg = apply(&cfg, Label::Run(ActorId(0)), v).unwrap();
        let cfg = apply(&cfg, Label::Run(ActorId(0)), v).unwrap();
        assert_eq!(cfg.actors[&ActorId(0)].current, Expr::unit());
        assert!(enabled(&cfg, v).is_empty());
    }

    fn two_actors(v: Variant) -> Config {
        let mut cfg = Config::initial(Expr::unit());
        cfg.actors.insert(
            ActorId(1),
            ActorState {
                this: Loc(1),
                heap: BTreeSet::from([Loc(1)]),
                queue: VecDeque::new(),
                conversations: BTreeMap::new(),
                current: Expr::unit(),
            },
        );
        cfg.fresh = Counters { actors: 2, locs: 2, queues: 0 };
        let _ = v;
        cfg
    }

    #[test]
    fn bestowed_send_wraps_for_owner() {
        let v = Variant::Core;
        let mut cfg = two_actors(v);
        cfg.actors.get_mut(&ActorId(0)).unwrap().heap.insert(Loc(2));
        cfg.fresh.locs = 3;
        cfg.actors.get_mut(&ActorId(1)).unwrap().current = rt("#l2@a0 ! (fn (x : p) => x.mutate())", v);
        let next = apply(&cfg, Label::Run(ActorId(1)), v).unwrap();
        assert_eq!(next.actors[&ActorId(1)].current, Expr::unit());
        let q = &next.actors[&ActorId(0)].queue;
        assert_eq!(q.len(), 1);
        assert_eq!(q[0].msg, Message::Fn(lam("fn (y : p) => (fn (x : p) => x.mutate()) #l2", v)));
        assert_eq!(q[0].sender, ActorId(1));
    }

    #[test]
    fn transferable_send_runs_in_place_for_owner() {
        let v = Variant::Transfer;
        let mut cfg = Config::initial(rt("#l1* ! (fn (x : p) => x.mutate())", v));
        cfg.actors.get_mut(&ActorId(0)).unwrap().heap.insert(Loc(1));
        cfg.owners.insert(Loc(1), ActorId(0));
        cfg.fresh.locs = 2;
        let next = apply(&cfg, Label::Run(ActorId(0)), v).unwrap();
        assert_eq!(next.actors[&ActorId(0)].current, rt("(fn (x : p) => x.mutate()) #l1", v));
    }

    #[test]
    fn transfer_labels_for_idle_owner() {
        let v = Variant::Transfer;
        let mut cfg = two_actors(v);
        cfg.actors.get_mut(&ActorId(0)).unwrap().heap.insert(Loc(2));
        cfg.owners.insert(Loc(2), ActorId(0));
        cfg.fresh.locs = 3;
        assert_eq!(enabled(&cfg, v), vec![Label::Transfer(Loc(2), ActorId(1))]);
        let next = apply(&cfg, Label::Transfer(Loc(2), ActorId(1)), v).unwrap();
        assert!(next.actors[&ActorId(1)].heap.contains(&Loc(2)));
        assert!(!next.actors[&ActorId(0)].heap.contains(&Loc(2)));
        assert_eq!(next.owners[&Loc(2)], ActorId(1));
    }

    #[test]
    fn conversation_routes_sends_privately() {
        let v = Variant::PrivateQueues;
        let mut cfg = two_actors(v);
        cfg.actors.get_mut(&ActorId(0)).unwrap().current =
            rt("(fn (_ : Unit) => @a1 ! (fn (x : p) => unit)) (atomic @a1)", v);
        let mut labels = Vec::new();
        while let Some(&Label::Run(a)) = enabled(&cfg, v).iter().find(|l| matches!(l, Label::Run(ActorId(0)))) {
            cfg = apply(&cfg, Label::Run(a), v).unwrap();
            labels.push(a);
        }
        assert_eq!(cfg.actors[&ActorId(0)].conversations.get(&ActorId(1)), Some(&QueueId(0)));
        let a1 = &cfg.actors[&ActorId(1)];
        assert_eq!(a1.queue.len(), 1);
        assert_eq!(a1.queue[0].msg, Message::AtReq(QueueId(0)));
        assert_eq!(cfg.queues[&QueueId(0)].messages.len(), 1);
    }

    #[test]
    fn illegal_label_is_rejected() {
        let cfg = Config::initial(Expr::unit());
        assert_eq!(
            apply(&cfg, Label::PopPublic(ActorId(0)), Variant::Core),
            Err(StepError::IllegalLabel(Label::PopPublic(ActorId(0))))
        );
    }

    #[test]
    fn label_text_round_trips() {
        for l in [
            Label::Run(ActorId(0)),
            Label::PopPublic(ActorId(2)),
            Label::PopPrivate(ActorId(1)),
            Label::EndPrivate(ActorId(1)),
            Label::Transfer(Loc(3), ActorId(1)),
        ] {
            assert_eq!(l.to_string().parse::<Label>().unwrap(), l);
        }
    }
}
