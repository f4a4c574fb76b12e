//! Mailboxes, actor threads and the deterministic baton.
//!
//! All scheduling state sits behind one mutex. Each actor owns a thread that
//! pops envelopes from its *active* mailbox: the public one, or the private
//! queue of the atomic block currently installed. In deterministic mode a
//! participant only runs while it holds the baton; whoever gives the baton
//! up picks the next holder with the seeded generator.

use std::any::{Any, TypeId};
use std::cell::{Cell as StdCell, RefCell};
use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, Weak};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::future::{FutureValue, Promise, Ready};
use super::refs::{ActorRef, BestowedRef, Ctx};
use super::{ActorId, Config, Participant, RuntimeError, Scheduling, TransferOutcome, TransferPolicy};

/// A type-erased operation bound for one actor. Called with the actor's
/// state, or with the error that prevented it from running.
#[doc(hidden)]
pub type Job = Box<dyn FnOnce(Result<(&mut (dyn Any + Send), &Ctx), RuntimeError>) + Send>;

pub(crate) enum Payload {
    Perform(Job),
    Batch(Vec<Job>),
    Install { scope: u64, ack: Promise<()> },
    Restore { scope: u64 },
}

impl Payload {
    fn cancel(self, err: RuntimeError) {
        match self {
            Payload::Perform(job) => job(Err(err)),
            Payload::Batch(jobs) => {
                for job in jobs {
                    job(Err(err.clone()));
                }
            }
            Payload::Install { ack, .. } => ack.fulfill(Err(err)),
            Payload::Restore { .. } => {}
        }
    }
}

struct Envelope {
    seq: u64,
    sender: Participant,
    payload: Payload,
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Route {
    Public(ActorId),
    Private(ActorId, u64),
}

struct Private {
    initiator: Participant,
    queue: VecDeque<Envelope>,
}

enum Status {
    Idle,
    Running,
    Blocked { on: Arc<dyn Ready>, waiting_for: Option<ActorId> },
    Stopped,
}

struct Slot {
    name: String,
    public: VecDeque<Envelope>,
    privates: BTreeMap<u64, Private>,
    installed: Option<u64>,
    status: Status,
    parked: bool,
    cv: Arc<Condvar>,
    refs: Weak<()>,
    state_type: TypeId,
}

impl Slot {
    fn pop_available(&mut self) -> Option<(Envelope, bool)> {
        match self.installed {
            Some(scope) => self.privates.get_mut(&scope)?.queue.pop_front().map(|e| (e, true)),
            None => self.public.pop_front().map(|e| (e, false)),
        }
    }

    fn has_available(&self) -> bool {
        match self.installed {
            Some(scope) => self.privates.get(&scope).is_some_and(|p| !p.queue.is_empty()),
            None => !self.public.is_empty(),
        }
    }

    fn queued(&self) -> (usize, usize) {
        (self.public.len(), self.privates.values().map(|p| p.queue.len()).sum())
    }

    fn drain(&mut self) -> Vec<Envelope> {
        let mut out: Vec<Envelope> = self.public.drain(..).collect();
        for (_, p) in std::mem::take(&mut self.privates) {
            out.extend(p.queue);
        }
        self.installed = None;
        out
    }
}

/// Runtime counters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Stats {
    /// Perform and batch envelopes executed.
    pub envelopes: u64,
    /// Operations carried inside batch envelopes.
    pub batched_ops: u64,
    /// Private mailboxes installed.
    pub installs: u64,
    pub restores: u64,
    pub transfers: u64,
    /// Operations sent through a bestowed reference, i.e. wrapped in a
    /// perform closure and delegated to the owner.
    pub delegations: u64,
    pub spawned: u64,
    /// Actors still alive when the runtime shut down.
    pub reaped: u64,
    /// Reaped actors that no [`ActorRef`] pointed to any more.
    pub unreachable: u64,
    pub panics: u64,
    /// Accesses to an object by an actor other than its owner.
    pub ownership_violations: u64,
}

impl Stats {
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("stats serialize");
        v.as_object_mut().unwrap().insert("schema".into(), 1.into());
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExecKind {
    Perform,
    Batch { ops: usize },
    Install { scope: u64 },
    Restore { scope: u64 },
}

/// One executed envelope, in the executing actor's order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExecRecord {
    pub actor: ActorId,
    pub sender: Participant,
    /// Global enqueue order.
    pub seq: u64,
    /// Taken from a private mailbox.
    pub private: bool,
    #[serde(flatten)]
    pub kind: ExecKind,
}

/// Why the system is not quiescent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub actors: Vec<ActorDiagnostic>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ActorDiagnostic {
    pub actor: ActorId,
    pub name: String,
    pub status: String,
    pub installed_for: Option<Participant>,
    pub public_queued: usize,
    pub private_queued: usize,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.actors {
            write!(f, "  {} `{}`: {}", a.actor, a.name, a.status)?;
            if let Some(p) = a.installed_for {
                write!(f, "; private mailbox installed for {p}")?;
            }
            if a.public_queued > 0 {
                write!(f, "; {} public envelope(s) waiting", a.public_queued)?;
            }
            if a.private_queued > 0 {
                write!(f, "; {} private envelope(s) waiting", a.private_queued)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl Diagnostic {
    pub fn mentions(&self, actor: ActorId) -> bool {
        self.actors.iter().any(|a| a.actor == actor)
    }
}

enum Wait {
    Future(Arc<dyn Ready>),
    Quiescence,
}

struct Det {
    rng: ChaCha8Rng,
    baton: Participant,
    driver_wait: Option<Wait>,
}

pub(crate) struct Sched {
    slots: Vec<Slot>,
    queued: usize,
    busy: usize,
    seq: u64,
    next_scope: u64,
    stats: Stats,
    log: Option<Vec<ExecRecord>>,
    det: Option<Det>,
    policy: TransferPolicy,
    threads: Vec<JoinHandle<()>>,
    shut_down: bool,
}

impl Sched {
    fn quiescent(&self) -> bool {
        self.queued == 0 && self.busy == 0
    }
}

pub(crate) struct RtInner {
    id: usize,
    sched: Mutex<Sched>,
    driver_cv: Condvar,
    quiet_cv: Condvar,
    stopping: AtomicBool,
    next_object: AtomicU64,
}

static NEXT_RUNTIME: AtomicUsize = AtomicUsize::new(1);

thread_local! {
    static CURRENT: StdCell<Option<(usize, ActorId)>> = const { StdCell::new(None) };
    static HELD: RefCell<Vec<(usize, ActorId)>> = const { RefCell::new(Vec::new()) };
}

const POLL: Duration = Duration::from_millis(20);

/// A cloneable reference to a running runtime.
#[derive(Clone)]
pub struct Handle {
    inner: Arc<RtInner>,
}

/// Owns the actor threads; shuts them down when dropped.
pub struct Runtime {
    handle: Handle,
}

impl std::ops::Deref for Runtime {
    type Target = Handle;
    fn deref(&self) -> &Handle {
        &self.handle
    }
}

impl Drop for Runtime {
    fn drop(&mut self) {
        self.handle.shutdown_inner();
    }
}

impl Runtime {
    pub fn new(config: Config) -> Runtime {
        let det = match config.scheduling {
            Scheduling::Parallel => None,
            Scheduling::Deterministic { seed } => Some(Det {
                rng: ChaCha8Rng::seed_from_u64(seed),
                baton: Participant::External,
                driver_wait: None,
            }),
        };
        let sched = Sched {
            slots: Vec::new(),
            queued: 0,
            busy: 0,
            seq: 0,
            next_scope: 0,
            stats: Stats::default(),
            log: config.record_log.then(Vec::new),
            det,
            policy: config.transfer_policy,
            threads: Vec::new(),
            shut_down: false,
        };
        Runtime {
            handle: Handle {
                inner: Arc::new(RtInner {
                    id: NEXT_RUNTIME.fetch_add(1, Ordering::Relaxed),
                    sched: Mutex::new(sched),
                    driver_cv: Condvar::new(),
                    quiet_cv: Condvar::new(),
                    stopping: AtomicBool::new(false),
                    next_object: AtomicU64::new(0),
                }),
            },
        }
    }

    pub fn handle(&self) -> Handle {
        self.handle.clone()
    }

    /// Stops every actor and returns the final counters.
    pub fn shutdown(self) -> Stats {
        self.handle.shutdown_inner();
        self.handle.stats()
    }
}

impl fmt::Debug for Handle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Handle(runtime {})", self.inner.id)
    }
}

impl Handle {
    fn lock(&self) -> MutexGuard<'_, Sched> {
        self.inner.sched.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn stopping(&self) -> bool {
        self.inner.stopping.load(Ordering::Acquire)
    }

    /// The actor whose code is running on this thread, if any.
    pub fn current_actor(&self) -> Option<ActorId> {
        CURRENT.with(|c| c.get()).filter(|(rt, _)| *rt == self.inner.id).map(|(_, a)| a)
    }

    pub fn current(&self) -> Participant {
        self.current_actor().map_or(Participant::External, Participant::Actor)
    }

    pub fn is_deterministic(&self) -> bool {
        self.lock().det.is_some()
    }

    pub fn same_runtime(&self, other: &Handle) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    pub(crate) fn next_object_id(&self) -> u64 {
        self.inner.next_object.fetch_add(1, Ordering::Relaxed)
    }

    pub(crate) fn note_panic(&self) {
        self.lock().stats.panics += 1;
    }

    pub(crate) fn note_violation(&self) {
        self.lock().stats.ownership_violations += 1;
    }

    pub(crate) fn state_type(&self, id: ActorId) -> Option<TypeId> {
        self.lock().slots.get(id.0 as usize).map(|s| s.state_type)
    }

    /// A fresh strong token for `id`, shared with existing references.
    pub(crate) fn ref_token(&self, id: ActorId) -> Arc<()> {
        let mut g = self.lock();
        let slot = &mut g.slots[id.0 as usize];
        match slot.refs.upgrade() {
            Some(t) => t,
            None => {
                let t = Arc::new(());
                slot.refs = Arc::downgrade(&t);
                t
            }
        }
    }

    /// Starts an actor with the given private state.
    pub fn spawn<S: Send + 'static>(&self, name: impl Into<String>, state: S) -> ActorRef<S> {
        let name = name.into();
        let token = Arc::new(());
        let mut g = self.lock();
        let id = ActorId(g.slots.len() as u32);
        g.slots.push(Slot {
            name: name.clone(),
            public: VecDeque::new(),
            privates: BTreeMap::new(),
            installed: None,
            status: if self.stopping() { Status::Stopped } else { Status::Idle },
            parked: false,
            cv: Arc::new(Condvar::new()),
            refs: Arc::downgrade(&token),
            state_type: TypeId::of::<S>(),
        });
        g.stats.spawned += 1;
        let h = self.clone();
        let thread = std::thread::Builder::new()
            .name(format!("{name}-{id}"))
            .spawn(move || actor_main(h, id, Box::new(state)))
            .expect("failed to start actor thread");
        g.threads.push(thread);
        ActorRef::new(id, self.clone(), token)
    }

    /// Enqueues `payload` on the mailbox chosen by `route` (evaluated under
    /// the scheduler lock). On failure the payload is cancelled with the
    /// error, which is also returned.
    pub(crate) fn enqueue(
        &self,
        route: impl FnOnce() -> Result<Route, RuntimeError>,
        payload: Payload,
        delegated: u64,
    ) -> Result<(), RuntimeError> {
        let sender = self.current();
        let mut g = self.lock();
        let res = if self.stopping() { Err(RuntimeError::Shutdown) } else { route() };
        let res = res.and_then(|route| validate(&g, route).map(|_| route));
        match res {
            Ok(route) => {
                let seq = next_seq(&mut g);
                let env = Envelope { seq, sender, payload };
                let (id, q) = match route {
                    Route::Public(id) => (id, &mut g.slots[id.0 as usize].public),
                    Route::Private(id, scope) => {
                        (id, &mut g.slots[id.0 as usize].privates.get_mut(&scope).unwrap().queue)
                    }
                };
                q.push_back(env);
                g.queued += 1;
                g.stats.delegations += delegated;
                let slot = &g.slots[id.0 as usize];
                if slot.parked {
                    slot.cv.notify_one();
                }
                Ok(())
            }
            Err(e) => {
                drop(g);
                payload.cancel(e.clone());
                Err(e)
            }
        }
    }

    /// A future completed by hand, for replies that outlive the envelope
    /// that received the request.
    pub fn promise<R: Send + 'static>(&self) -> (Promise<R>, FutureValue<R>) {
        FutureValue::pair(self, None)
    }

    /// Marks an actor stopped; envelopes still queued fail with
    /// [`RuntimeError::ActorTerminated`].
    pub fn stop(&self, id: ActorId) {
        let mut g = self.lock();
        let Some(slot) = g.slots.get_mut(id.0 as usize) else { return };
        slot.status = Status::Stopped;
        let drained = slot.drain();
        slot.cv.notify_all();
        g.queued -= drained.len();
        self.notify_if_quiet(&g);
        drop(g);
        for env in drained {
            env.payload.cancel(RuntimeError::ActorTerminated(id));
        }
    }

    pub fn is_alive(&self, id: ActorId) -> bool {
        self.lock().slots.get(id.0 as usize).is_some_and(|s| !matches!(s.status, Status::Stopped))
    }

    pub fn actor_name(&self, id: ActorId) -> Option<String> {
        self.lock().slots.get(id.0 as usize).map(|s| s.name.clone())
    }

    pub fn stats(&self) -> Stats {
        self.lock().stats.clone()
    }

    /// Executed envelopes so far (empty unless [`Config::record_log`]).
    pub fn exec_log(&self) -> Vec<ExecRecord> {
        self.lock().log.clone().unwrap_or_default()
    }

    pub fn transfer_policy(&self) -> TransferPolicy {
        self.lock().policy
    }

    pub fn set_transfer_policy(&self, policy: TransferPolicy) {
        self.lock().policy = policy;
    }

    /// Moves a transferable object to `new_owner` if the policy allows it
    /// and its current owner is idle with empty mailboxes; otherwise reports
    /// that operations keep being delegated to the current owner.
    pub fn try_transfer<T: Send + 'static>(
        &self,
        obj: &BestowedRef<T>,
        new_owner: ActorId,
    ) -> Result<TransferOutcome, RuntimeError> {
        if !obj.is_transferable() {
            return Err(RuntimeError::NotTransferable(obj.id()));
        }
        let mut g = self.lock();
        match g.slots.get(new_owner.0 as usize) {
            Some(s) if !matches!(s.status, Status::Stopped) => {}
            _ => return Err(RuntimeError::ActorTerminated(new_owner)),
        }
        let owner = obj.owner();
        if owner == new_owner {
            return Ok(TransferOutcome::Transferred);
        }
        let s = &g.slots[owner.0 as usize];
        let idle = matches!(s.status, Status::Idle) && s.installed.is_none() && s.public.is_empty() && s.privates.is_empty();
        if g.policy == TransferPolicy::WhenOwnerIdle && idle {
            obj.set_owner(new_owner);
            g.stats.transfers += 1;
            Ok(TransferOutcome::Transferred)
        } else {
            Ok(TransferOutcome::Delegated)
        }
    }

    /// Waits until every mailbox is empty and no envelope is executing.
    ///
    /// In deterministic mode the wait is logical: if no participant can make
    /// progress the call fails at once with a diagnostic.
    pub fn run_until_quiescent(&self, timeout: Duration) -> Result<Stats, RuntimeError> {
        let mut g = self.lock();
        if g.det.is_some() {
            if !g.quiescent() {
                g.det.as_mut().unwrap().driver_wait = Some(Wait::Quiescence);
                self.pass_baton(&mut g);
                g = self.wait_for_baton(g, Participant::External);
                g.det.as_mut().unwrap().driver_wait = None;
                if self.stopping() {
                    return Err(RuntimeError::Shutdown);
                }
            }
            return if g.quiescent() { Ok(g.stats.clone()) } else { Err(RuntimeError::Timeout(diagnose(&g))) };
        }
        let deadline = Instant::now() + timeout;
        while !g.quiescent() {
            let now = Instant::now();
            if now >= deadline {
                return Err(RuntimeError::Timeout(diagnose(&g)));
            }
            g = self.inner.quiet_cv.wait_timeout(g, deadline - now).unwrap_or_else(|p| p.into_inner()).0;
        }
        Ok(g.stats.clone())
    }

    /// A snapshot of every actor that is busy or has queued envelopes.
    pub fn diagnose(&self) -> Diagnostic {
        diagnose(&self.lock())
    }

    /// Blocks the calling participant until `ready` completes.
    pub(crate) fn block_on(&self, ready: Arc<dyn Ready>, fulfiller: Option<ActorId>) -> Result<(), RuntimeError> {
        if ready.is_ready() {
            return Ok(());
        }
        let me = self.current();
        if let (Participant::Actor(a), Some(f)) = (me, fulfiller) {
            if a == f {
                return Err(RuntimeError::SelfDeadlock(a));
            }
        }
        let mut g = self.lock();
        if g.det.is_some() {
            match me {
                Participant::Actor(a) => {
                    g.slots[a.0 as usize].status = Status::Blocked { on: ready.clone(), waiting_for: fulfiller }
                }
                Participant::External => g.det.as_mut().unwrap().driver_wait = Some(Wait::Future(ready.clone())),
            }
            self.pass_baton(&mut g);
            g = self.wait_for_baton(g, me);
            match me {
                Participant::Actor(a) => {
                    let slot = &mut g.slots[a.0 as usize];
                    if !matches!(slot.status, Status::Stopped) {
                        slot.status = Status::Running;
                    }
                }
                Participant::External => g.det.as_mut().unwrap().driver_wait = None,
            }
            if ready.is_ready() {
                return Ok(());
            }
            if self.stopping() {
                return Err(RuntimeError::Shutdown);
            }
            return Err(RuntimeError::Deadlock(diagnose(&g)));
        }
        if let Participant::Actor(a) = me {
            g.slots[a.0 as usize].status = Status::Blocked { on: ready.clone(), waiting_for: fulfiller };
        }
        drop(g);
        let res = loop {
            if ready.wait_for(POLL) {
                break Ok(());
            }
            if self.stopping() {
                break Err(RuntimeError::Shutdown);
            }
        };
        if let Participant::Actor(a) = me {
            let mut g = self.lock();
            let slot = &mut g.slots[a.0 as usize];
            if !matches!(slot.status, Status::Stopped) {
                slot.status = Status::Running;
            }
        }
        res
    }

    fn wait_for_baton<'a>(&'a self, mut g: MutexGuard<'a, Sched>, me: Participant) -> MutexGuard<'a, Sched> {
        let cv = match me {
            Participant::Actor(a) => g.slots[a.0 as usize].cv.clone(),
            Participant::External => return self.wait_driver(g),
        };
        while g.det.as_ref().is_some_and(|d| d.baton != me) && !self.stopping() {
            g = cv.wait(g).unwrap_or_else(|p| p.into_inner());
        }
        g
    }

    fn wait_driver<'a>(&'a self, mut g: MutexGuard<'a, Sched>) -> MutexGuard<'a, Sched> {
        while g.det.as_ref().is_some_and(|d| d.baton != Participant::External) && !self.stopping() {
            g = self.inner.driver_cv.wait(g).unwrap_or_else(|p| p.into_inner());
        }
        g
    }

    /// Hands the baton to a participant chosen by the seeded generator among
    /// those that can run. When nobody can, the driver gets it back.
    fn pass_baton(&self, g: &mut Sched) {
        let Some(det) = g.det.as_mut() else { return };
        let mut candidates = Vec::new();
        for (i, slot) in g.slots.iter().enumerate() {
            let runnable = match &slot.status {
                Status::Idle => slot.has_available(),
                Status::Blocked { on, .. } => on.is_ready(),
                Status::Running | Status::Stopped => false,
            };
            if runnable {
                candidates.push(Participant::Actor(ActorId(i as u32)));
            }
        }
        let driver_ready = match &det.driver_wait {
            Some(Wait::Future(f)) => f.is_ready(),
            Some(Wait::Quiescence) => g.queued == 0 && g.busy == 0,
            None => false,
        };
        if driver_ready {
            candidates.push(Participant::External);
        }
        det.baton = if candidates.is_empty() {
            Participant::External
        } else {
            candidates[det.rng.random_range(0..candidates.len())]
        };
        match det.baton {
            Participant::Actor(a) => g.slots[a.0 as usize].cv.notify_all(),
            Participant::External => self.inner.driver_cv.notify_all(),
        }
    }

    fn notify_if_quiet(&self, g: &Sched) {
        if g.quiescent() {
            self.inner.quiet_cv.notify_all();
        }
    }

    /// Opens a private mailbox at the owner chosen by `owner` and waits until
    /// the target has installed it.
    pub(crate) fn acquire(&self, owner: impl FnOnce() -> ActorId) -> Result<(ActorId, u64), RuntimeError> {
        let me = self.current();
        let rt = self.inner.id;
        let mut g = self.lock();
        if self.stopping() {
            return Err(RuntimeError::Shutdown);
        }
        let target = owner();
        if me == Participant::Actor(target) {
            return Err(RuntimeError::SelfDeadlock(target));
        }
        if HELD.with(|h| h.borrow().contains(&(rt, target))) {
            return Err(RuntimeError::AlreadyInAtomic(target));
        }
        match g.slots.get(target.0 as usize) {
            Some(s) if !matches!(s.status, Status::Stopped) => {}
            _ => return Err(RuntimeError::ActorTerminated(target)),
        }
        let scope = g.next_scope;
        g.next_scope += 1;
        g.slots[target.0 as usize].privates.insert(scope, Private { initiator: me, queue: VecDeque::new() });
        drop(g);
        let (ack, done) = FutureValue::<()>::pair(self, Some(target));
        self.enqueue(|| Ok(Route::Public(target)), Payload::Install { scope, ack }, 0)?;
        match done.get() {
            Ok(()) => {
                HELD.with(|h| h.borrow_mut().push((rt, target)));
                Ok((target, scope))
            }
            Err(e) => {
                // the install may still be queued: make it restore at once
                let _ = self.enqueue(|| Ok(Route::Private(target, scope)), Payload::Restore { scope }, 0);
                Err(e)
            }
        }
    }

    /// Ends an atomic block: public traffic resumes once the target reaches
    /// the restore marker.
    pub(crate) fn release(&self, target: ActorId, scope: u64) {
        let rt = self.inner.id;
        HELD.with(|h| h.borrow_mut().retain(|x| *x != (rt, target)));
        let _ = self.enqueue(|| Ok(Route::Private(target, scope)), Payload::Restore { scope }, 0);
    }

    fn shutdown_inner(&self) {
        let threads = {
            let mut g = self.lock();
            if g.shut_down {
                return;
            }
            g.shut_down = true;
            self.inner.stopping.store(true, Ordering::Release);
            for s in &g.slots {
                s.cv.notify_all();
            }
            self.inner.driver_cv.notify_all();
            self.inner.quiet_cv.notify_all();
            std::mem::take(&mut g.threads)
        };
        if self.current_actor().is_none() {
            for t in threads {
                let _ = t.join();
            }
        }
        let mut g = self.lock();
        let mut cancelled = Vec::new();
        let (mut reaped, mut unreachable) = (0, 0);
        for (i, slot) in g.slots.iter_mut().enumerate() {
            if !matches!(slot.status, Status::Stopped) {
                reaped += 1;
                if slot.refs.strong_count() == 0 {
                    unreachable += 1;
                }
                slot.status = Status::Stopped;
            }
            cancelled.extend(slot.drain().into_iter().map(|e| (ActorId(i as u32), e)));
        }
        g.queued = 0;
        g.stats.reaped += reaped;
        g.stats.unreachable += unreachable;
        drop(g);
        for (id, env) in cancelled {
            env.payload.cancel(RuntimeError::ActorTerminated(id));
        }
    }
}

fn validate(g: &Sched, route: Route) -> Result<(), RuntimeError> {
    let (Route::Public(id) | Route::Private(id, _)) = route;
    let slot = match g.slots.get(id.0 as usize) {
        Some(s) if !matches!(s.status, Status::Stopped) => s,
        _ => return Err(RuntimeError::ActorTerminated(id)),
    };
    match route {
        Route::Private(_, scope) if !slot.privates.contains_key(&scope) => Err(RuntimeError::ScopeExpired),
        _ => Ok(()),
    }
}

fn next_seq(g: &mut Sched) -> u64 {
    g.seq += 1;
    g.seq
}

fn diagnose(g: &Sched) -> Diagnostic {
    let mut actors = Vec::new();
    for (i, s) in g.slots.iter().enumerate() {
        let (public_queued, private_queued) = s.queued();
        let status = match &s.status {
            Status::Idle => "idle".to_string(),
            Status::Running => "running".to_string(),
            Status::Blocked { waiting_for: Some(a), .. } => format!("blocked waiting on {a}"),
            Status::Blocked { waiting_for: None, .. } => "blocked".to_string(),
            Status::Stopped => continue,
        };
        let installed_for = s.installed.and_then(|sc| s.privates.get(&sc)).map(|p| p.initiator);
        if status == "idle" && public_queued == 0 && private_queued == 0 && installed_for.is_none() {
            continue;
        }
        actors.push(ActorDiagnostic {
            actor: ActorId(i as u32),
            name: s.name.clone(),
            status,
            installed_for,
            public_queued,
            private_queued,
        });
    }
    Diagnostic { actors }
}

fn actor_main(handle: Handle, id: ActorId, mut state: Box<dyn Any + Send>) {
    CURRENT.with(|c| c.set(Some((handle.inner.id, id))));
    let ctx = Ctx::new(handle.clone(), id);
    let idx = id.0 as usize;
    let me = Participant::Actor(id);
    let mut g = handle.lock();
    loop {
        if handle.stopping() || matches!(g.slots[idx].status, Status::Stopped) {
            if g.det.as_ref().is_some_and(|d| d.baton == me) {
                handle.pass_baton(&mut g);
            }
            break;
        }
        if g.det.as_ref().is_some_and(|d| d.baton != me) {
            let cv = g.slots[idx].cv.clone();
            g = cv.wait(g).unwrap_or_else(|p| p.into_inner());
            continue;
        }
        let Some((env, private)) = g.slots[idx].pop_available() else {
            if g.det.is_some() {
                handle.pass_baton(&mut g);
            } else {
                let cv = g.slots[idx].cv.clone();
                g.slots[idx].parked = true;
                g = cv.wait(g).unwrap_or_else(|p| p.into_inner());
                g.slots[idx].parked = false;
            }
            continue;
        };
        g.queued -= 1;
        let kind = match &env.payload {
            Payload::Perform(_) => ExecKind::Perform,
            Payload::Batch(jobs) => ExecKind::Batch { ops: jobs.len() },
            Payload::Install { scope, .. } => ExecKind::Install { scope: *scope },
            Payload::Restore { scope } => ExecKind::Restore { scope: *scope },
        };
        if let Some(log) = g.log.as_mut() {
            log.push(ExecRecord { actor: id, sender: env.sender, seq: env.seq, private, kind });
        }
        match env.payload {
            Payload::Install { scope, ack } => {
                g.slots[idx].installed = Some(scope);
                g.stats.installs += 1;
                drop(g);
                ack.fulfill(Ok(()));
                g = handle.lock();
            }
            Payload::Restore { scope } => {
                let slot = &mut g.slots[idx];
                if slot.installed == Some(scope) {
                    slot.installed = None;
                }
                slot.privates.remove(&scope);
                g.stats.restores += 1;
            }
            Payload::Perform(job) => {
                g = run_jobs(&handle, g, idx, &ctx, &mut state, vec![job]);
            }
            Payload::Batch(jobs) => {
                g.stats.batched_ops += jobs.len() as u64;
                g = run_jobs(&handle, g, idx, &ctx, &mut state, jobs);
            }
        }
        if g.det.is_some() {
            handle.pass_baton(&mut g);
        }
        handle.notify_if_quiet(&g);
    }
    drop(g);
    CURRENT.with(|c| c.set(None));
}

fn run_jobs<'a>(
    handle: &'a Handle,
    mut g: MutexGuard<'a, Sched>,
    idx: usize,
    ctx: &Ctx,
    state: &mut Box<dyn Any + Send>,
    jobs: Vec<Job>,
) -> MutexGuard<'a, Sched> {
    g.slots[idx].status = Status::Running;
    g.busy += 1;
    g.stats.envelopes += 1;
    drop(g);
    let mut panicked = 0;
    for job in jobs {
        if catch_unwind(AssertUnwindSafe(|| job(Ok((&mut **state, ctx))))).is_err() {
            panicked += 1;
        }
    }
    let mut g = handle.lock();
    g.busy -= 1;
    g.stats.panics += panicked;
    let slot = &mut g.slots[idx];
    if !matches!(slot.status, Status::Stopped) {
        slot.status = Status::Idle;
    }
    g
}
