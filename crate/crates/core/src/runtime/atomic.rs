//! Atomic blocks and coalesced batches.

use std::marker::PhantomData;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use super::future::FutureValue;
use super::refs::{make_job, Ctx, Target};
use super::system::{Handle, Payload, Route};
use super::{ActorId, RuntimeError};

/// Access to a target's private mailbox for the duration of one atomic
/// block. Not `Send`: it stays with the initiating actor, and every use after
/// the block has ended fails with [`RuntimeError::ScopeExpired`].
pub struct AtomicHandle<T: Target> {
    target: T,
    actor: ActorId,
    scope: u64,
    live: Arc<AtomicBool>,
    _local: PhantomData<*const ()>,
}

impl<T: Target> AtomicHandle<T> {
    pub fn target(&self) -> &T {
        &self.target
    }

    /// The actor whose mailbox is held.
    pub fn actor(&self) -> ActorId {
        self.actor
    }

    pub fn is_live(&self) -> bool {
        self.live.load(Ordering::Acquire)
    }

    /// Enqueues `op` on the private mailbox.
    pub fn send<R, F>(&self, op: F) -> FutureValue<R>
    where
        R: Send + 'static,
        F: FnOnce(&mut T::View, &Ctx) -> R + Send + 'static,
    {
        let h = self.target.handle();
        if !self.is_live() {
            return FutureValue::failed(h, RuntimeError::ScopeExpired);
        }
        let (p, fut) = FutureValue::pair(h, Some(self.actor));
        let job = make_job(&self.target, op, Some(p));
        let (actor, scope) = (self.actor, self.scope);
        let _ = h.enqueue(move || Ok(Route::Private(actor, scope)), Payload::Perform(job), T::DELEGATED);
        fut
    }

    /// Like [`send`](Self::send) without a result.
    pub fn post<F>(&self, op: F) -> Result<(), RuntimeError>
    where
        F: FnOnce(&mut T::View, &Ctx) + Send + 'static,
    {
        if !self.is_live() {
            return Err(RuntimeError::ScopeExpired);
        }
        let job = make_job::<T, (), F>(&self.target, op, None);
        let (actor, scope) = (self.actor, self.scope);
        self.target.handle().enqueue(move || Ok(Route::Private(actor, scope)), Payload::Perform(job), T::DELEGATED)
    }
}

/// Releases held mailboxes in reverse acquisition order, also on unwind.
struct Held<'a> {
    handle: &'a Handle,
    scopes: Vec<(ActorId, u64, Arc<AtomicBool>)>,
}

impl Drop for Held<'_> {
    fn drop(&mut self) {
        while let Some((actor, scope, live)) = self.scopes.pop() {
            live.store(false, Ordering::Release);
            self.handle.release(actor, scope);
        }
    }
}

impl Handle {
    /// Runs `body` while `target` drains only a private mailbox fed through
    /// the handle. Returns once the block's restore marker is enqueued;
    /// public traffic buffered meanwhile resumes in arrival order.
    pub fn atomic<T, R>(&self, target: &T, body: impl FnOnce(AtomicHandle<T>) -> R) -> Result<R, RuntimeError>
    where
        T: Target,
    {
        self.atomic_all(std::slice::from_ref(target), |mut hs| body(hs.pop().unwrap()))
    }

    /// Atomic over several targets at once. Mailboxes are acquired in actor
    /// order, so concurrent `atomic_all` calls cannot deadlock each other;
    /// handles are passed in the order of `targets`.
    pub fn atomic_all<T, R>(&self, targets: &[T], body: impl FnOnce(Vec<AtomicHandle<T>>) -> R) -> Result<R, RuntimeError>
    where
        T: Target,
    {
        if targets.is_empty() {
            return Err(RuntimeError::InvalidArgument("atomic_all needs at least one target".into()));
        }
        let mut order: Vec<usize> = (0..targets.len()).collect();
        order.sort_by_key(|&i| targets[i].owner_now());
        for w in order.windows(2) {
            if targets[w[0]].owner_now() == targets[w[1]].owner_now() {
                return Err(RuntimeError::InvalidArgument(format!(
                    "atomic_all targets share owner {}",
                    targets[w[0]].owner_now()
                )));
            }
        }
        let mut held = Held { handle: self, scopes: Vec::with_capacity(targets.len()) };
        let mut slots: Vec<Option<AtomicHandle<T>>> = (0..targets.len()).map(|_| None).collect();
        for &i in &order {
            let t = &targets[i];
            let (actor, scope) = self.acquire(|| t.owner_now())?;
            let live = Arc::new(AtomicBool::new(true));
            held.scopes.push((actor, scope, live.clone()));
            slots[i] = Some(AtomicHandle { target: t.clone(), actor, scope, live, _local: PhantomData });
        }
        let r = body(slots.into_iter().map(Option::unwrap).collect());
        drop(held);
        Ok(r)
    }

    /// Ships `ops` to `target` as a single envelope; they run back to back
    /// and their futures complete in order.
    pub fn coalesce<T, R, F>(&self, target: &T, ops: Vec<F>) -> Result<Vec<FutureValue<R>>, RuntimeError>
    where
        T: Target,
        R: Send + 'static,
        F: FnOnce(&mut T::View, &Ctx) -> R + Send + 'static,
    {
        if ops.is_empty() {
            return Err(RuntimeError::InvalidArgument("empty batch".into()));
        }
        let owner = target.owner_now();
        let mut futures = Vec::with_capacity(ops.len());
        let mut jobs = Vec::with_capacity(ops.len());
        for op in ops {
            let (p, f) = FutureValue::pair(self, Some(owner));
            jobs.push(make_job(target, op, Some(p)));
            futures.push(f);
        }
        let t = target.clone();
        let delegated = if T::DELEGATED == 0 { 0 } else { jobs.len() as u64 };
        let _ = self.enqueue(move || Ok(Route::Public(t.owner_now())), Payload::Batch(jobs), delegated);
        Ok(futures)
    }
}
