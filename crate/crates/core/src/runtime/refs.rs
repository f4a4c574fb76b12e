//! Actor references, owned objects and the execution context.

use std::any::TypeId;
use std::fmt;
use std::marker::PhantomData;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex, TryLockError};

use super::future::{FutureValue, Promise};
use super::system::{Handle, Job, Payload, Route};
use super::{ActorId, RuntimeError};

/// A handle to an actor's public mailbox. Cloning never duplicates the actor.
pub struct ActorRef<S> {
    id: ActorId,
    handle: Handle,
    _token: Arc<()>,
    _state: PhantomData<fn() -> S>,
}

impl<S> Clone for ActorRef<S> {
    fn clone(&self) -> Self {
        ActorRef { id: self.id, handle: self.handle.clone(), _token: self._token.clone(), _state: PhantomData }
    }
}

impl<S> fmt::Debug for ActorRef<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ActorRef({})", self.id)
    }
}

impl<S> PartialEq for ActorRef<S> {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id && self.handle.same_runtime(&other.handle)
    }
}

impl<S> Eq for ActorRef<S> {}

/// Shared storage of one passive object.
#[doc(hidden)]
pub struct ObjCell<T> {
    id: u64,
    owner: AtomicU32,
    transferable: bool,
    data: Mutex<T>,
}

/// An owner-local reference to a passive object. It may be stored anywhere,
/// but only code running inside the current owner can use it.
pub struct LocalRef<T> {
    cell: Arc<ObjCell<T>>,
}

impl<T> Clone for LocalRef<T> {
    fn clone(&self) -> Self {
        LocalRef { cell: self.cell.clone() }
    }
}

/// A shareable reference to a passive object; every operation is delegated
/// to the owning actor.
pub struct BestowedRef<T> {
    cell: Arc<ObjCell<T>>,
    handle: Handle,
}

impl<T> Clone for BestowedRef<T> {
    fn clone(&self) -> Self {
        BestowedRef { cell: self.cell.clone(), handle: self.handle.clone() }
    }
}

impl<T> fmt::Debug for BestowedRef<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BestowedRef(#{} @{})", self.cell.id, self.owner())
    }
}

impl<T> fmt::Debug for LocalRef<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LocalRef(#{})", self.cell.id)
    }
}

/// Anything that names an object cell.
pub trait Object<T> {
    #[doc(hidden)]
    fn cell(&self) -> &Arc<ObjCell<T>>;

    fn id(&self) -> u64 {
        self.cell().id
    }

    fn owner(&self) -> ActorId {
        ActorId(self.cell().owner.load(Ordering::Acquire))
    }

    fn is_transferable(&self) -> bool {
        self.cell().transferable
    }

    /// True if both references name the same object.
    fn same_object(&self, other: &impl Object<T>) -> bool {
        Arc::ptr_eq(self.cell(), other.cell())
    }
}

impl<T> Object<T> for LocalRef<T> {
    fn cell(&self) -> &Arc<ObjCell<T>> {
        &self.cell
    }
}

impl<T> Object<T> for BestowedRef<T> {
    fn cell(&self) -> &Arc<ObjCell<T>> {
        &self.cell
    }
}

impl<T> BestowedRef<T> {
    pub fn id(&self) -> u64 {
        self.cell.id
    }

    pub fn owner(&self) -> ActorId {
        Object::owner(self)
    }

    pub fn is_transferable(&self) -> bool {
        self.cell.transferable
    }

    pub(crate) fn set_owner(&self, owner: ActorId) {
        self.cell.owner.store(owner.0, Ordering::Release);
    }

    pub fn handle(&self) -> &Handle {
        &self.handle
    }
}

fn access<T, R>(cell: &ObjCell<T>, me: ActorId, f: impl FnOnce(&mut T) -> R) -> Result<R, RuntimeError> {
    if cell.owner.load(Ordering::Acquire) != me.0 {
        return Err(RuntimeError::NotOwner { actor: me, object: cell.id });
    }
    let mut g = match cell.data.try_lock() {
        Ok(g) => g,
        Err(TryLockError::Poisoned(p)) => p.into_inner(),
        Err(TryLockError::WouldBlock) => {
            return Err(RuntimeError::InvalidArgument(format!("object #{} is already in use", cell.id)))
        }
    };
    Ok(f(&mut g))
}

/// Something that can receive operations: an actor (operating on its
/// state) or a bestowed object (operating on the object at its owner).
pub trait Target: Clone + Send + Sync + 'static + sealed::Sealed {
    type View: 'static;

    /// 1 if operations on this target are delegated through a perform
    /// wrapper, 0 otherwise (counted in [`Stats::delegations`](super::Stats)).
    #[doc(hidden)]
    const DELEGATED: u64;

    /// The actor that currently executes operations on this target.
    fn owner_now(&self) -> ActorId;

    fn handle(&self) -> &Handle;

    #[doc(hidden)]
    fn wrap<K>(&self, k: K) -> Job
    where
        K: FnOnce(Result<(&mut Self::View, &Ctx), RuntimeError>) + Send + 'static;
}

mod sealed {
    pub trait Sealed {}
    impl<S> Sealed for super::ActorRef<S> {}
    impl<T> Sealed for super::BestowedRef<T> {}
}

impl<S: Send + 'static> Target for ActorRef<S> {
    type View = S;
    const DELEGATED: u64 = 0;

    fn owner_now(&self) -> ActorId {
        self.id
    }

    fn handle(&self) -> &Handle {
        &self.handle
    }

    fn wrap<K>(&self, k: K) -> Job
    where
        K: FnOnce(Result<(&mut S, &Ctx), RuntimeError>) + Send + 'static,
    {
        Box::new(move |arg| match arg {
            Ok((state, ctx)) => match state.downcast_mut::<S>() {
                Some(s) => k(Ok((s, ctx))),
                None => k(Err(RuntimeError::InvalidArgument("actor state has a different type".into()))),
            },
            Err(e) => k(Err(e)),
        })
    }
}

impl<T: Send + 'static> Target for BestowedRef<T> {
    type View = T;
    const DELEGATED: u64 = 1;

    fn owner_now(&self) -> ActorId {
        self.owner()
    }

    fn handle(&self) -> &Handle {
        &self.handle
    }

    // The delegation wrapper: the owner receives a perform envelope whose
    // closure applies the operation to the object.
    fn wrap<K>(&self, k: K) -> Job
    where
        K: FnOnce(Result<(&mut T, &Ctx), RuntimeError>) + Send + 'static,
    {
        let cell = self.cell.clone();
        let perform: Box<dyn FnOnce(Result<&Ctx, RuntimeError>) + Send> = Box::new(move |arg| match arg {
            Ok(ctx) => {
                let mut k = Some(k);
                let res = access(&cell, ctx.me, |obj| (k.take().unwrap())(Ok((obj, ctx))));
                if let Err(e) = res {
                    if matches!(e, RuntimeError::NotOwner { .. }) {
                        ctx.handle.note_violation();
                    }
                    if let Some(k) = k.take() {
                        k(Err(e));
                    }
                }
            }
            Err(e) => k(Err(e)),
        });
        Box::new(move |arg| perform(arg.map(|(_, ctx)| ctx)))
    }
}

/// Wraps `op` into a job that fulfils `promise` (if any) with its result.
pub(crate) fn make_job<T, R, F>(target: &T, op: F, promise: Option<Promise<R>>) -> Job
where
    T: Target,
    R: Send + 'static,
    F: FnOnce(&mut T::View, &Ctx) -> R + Send + 'static,
{
    target.wrap(move |arg| match arg {
        Ok((view, ctx)) => {
            let res = catch_unwind(AssertUnwindSafe(|| op(view, ctx))).map_err(|p| {
                ctx.handle.note_panic();
                RuntimeError::Panicked(panic_message(&p))
            });
            if let Some(p) = promise {
                p.fulfill(res);
            }
        }
        Err(e) => {
            if let Some(p) = promise {
                p.fulfill(Err(e));
            }
        }
    })
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic".into()
    }
}

impl Handle {
    /// Sends `op` to `target`; the future carries its result.
    pub fn send_to<T, R, F>(&self, target: &T, op: F) -> FutureValue<R>
    where
        T: Target,
        R: Send + 'static,
        F: FnOnce(&mut T::View, &Ctx) -> R + Send + 'static,
    {
        let owner = target.owner_now();
        let (p, fut) = FutureValue::pair(self, Some(owner));
        let job = make_job(target, op, Some(p));
        let t = target.clone();
        let _ = self.enqueue(move || Ok(Route::Public(t.owner_now())), Payload::Perform(job), T::DELEGATED);
        fut
    }

    /// Fire-and-forget variant of [`send_to`](Self::send_to).
    pub fn post_to<T, F>(&self, target: &T, op: F) -> Result<(), RuntimeError>
    where
        T: Target,
        F: FnOnce(&mut T::View, &Ctx) + Send + 'static,
    {
        let job = make_job::<T, (), F>(target, op, None);
        let t = target.clone();
        self.enqueue(move || Ok(Route::Public(t.owner_now())), Payload::Perform(job), T::DELEGATED)
    }

    /// Turns an owner-local reference into a shareable one. Must be called
    /// from inside the owner.
    pub fn bestow<T: Send + 'static>(&self, local: &LocalRef<T>) -> Result<BestowedRef<T>, RuntimeError> {
        let me = self.current_actor().ok_or(RuntimeError::NotInsideActor)?;
        if local.owner() != me {
            return Err(RuntimeError::NotOwner { actor: me, object: local.cell.id });
        }
        Ok(BestowedRef { cell: local.cell.clone(), handle: self.clone() })
    }
}

impl<S: Send + 'static> ActorRef<S> {
    pub(crate) fn new(id: ActorId, handle: Handle, token: Arc<()>) -> Self {
        ActorRef { id, handle, _token: token, _state: PhantomData }
    }

    pub fn id(&self) -> ActorId {
        self.id
    }

    pub fn handle(&self) -> &Handle {
        &self.handle
    }

    /// Runs `op` on the actor's state inside the actor.
    pub fn send<R, F>(&self, op: F) -> FutureValue<R>
    where
        R: Send + 'static,
        F: FnOnce(&mut S, &Ctx) -> R + Send + 'static,
    {
        self.handle.send_to(self, op)
    }

    /// Like [`send`](Self::send) without a result.
    pub fn post<F>(&self, op: F) -> Result<(), RuntimeError>
    where
        F: FnOnce(&mut S, &Ctx) + Send + 'static,
    {
        self.handle.post_to(self, op)
    }

    pub fn stop(&self) {
        self.handle.stop(self.id)
    }
}

impl<T: Send + 'static> BestowedRef<T> {
    /// Delegates `op` to the owner, which applies it to the object.
    pub fn send<R, F>(&self, op: F) -> FutureValue<R>
    where
        R: Send + 'static,
        F: FnOnce(&mut T, &Ctx) -> R + Send + 'static,
    {
        self.handle.send_to(self, op)
    }

    pub fn post<F>(&self, op: F) -> Result<(), RuntimeError>
    where
        F: FnOnce(&mut T, &Ctx) + Send + 'static,
    {
        self.handle.post_to(self, op)
    }
}

/// A message-handling procedure for [`ActorRef::tell`].
pub trait Behavior: Send + 'static {
    type Msg: Send + 'static;
    fn receive(&mut self, msg: Self::Msg, ctx: &Ctx);
}

impl<B: Behavior> ActorRef<B> {
    pub fn tell(&self, msg: B::Msg) -> Result<(), RuntimeError> {
        self.post(move |b, ctx| b.receive(msg, ctx))
    }
}

/// What an operation sees of the actor it runs in.
pub struct Ctx {
    pub(crate) handle: Handle,
    pub(crate) me: ActorId,
}

impl Ctx {
    pub(crate) fn new(handle: Handle, me: ActorId) -> Self {
        Ctx { handle, me }
    }

    pub fn me(&self) -> ActorId {
        self.me
    }

    pub fn handle(&self) -> &Handle {
        &self.handle
    }

    /// A reference to the running actor.
    ///
    /// # Panics
    /// If `S` is not the actor's state type.
    pub fn myself<S: Send + 'static>(&self) -> ActorRef<S> {
        assert_eq!(self.handle.state_type(self.me), Some(TypeId::of::<S>()), "myself: wrong state type");
        ActorRef::new(self.me, self.handle.clone(), self.handle.ref_token(self.me))
    }

    fn alloc_with<T: Send + 'static>(&self, value: T, transferable: bool) -> LocalRef<T> {
        LocalRef {
            cell: Arc::new(ObjCell {
                id: self.handle.next_object_id(),
                owner: AtomicU32::new(self.me.0),
                transferable,
                data: Mutex::new(value),
            }),
        }
    }

    /// Places a passive object in this actor's heap.
    pub fn alloc<T: Send + 'static>(&self, value: T) -> LocalRef<T> {
        self.alloc_with(value, false)
    }

    /// Like [`alloc`](Self::alloc), but ownership may later move.
    pub fn alloc_transferable<T: Send + 'static>(&self, value: T) -> LocalRef<T> {
        self.alloc_with(value, true)
    }

    pub fn bestow<T: Send + 'static>(&self, local: &LocalRef<T>) -> BestowedRef<T> {
        self.handle.bestow(local).expect("bestow inside the owner")
    }

    /// Synchronous access to an object this actor owns.
    pub fn with<T, R>(&self, obj: &impl Object<T>, f: impl FnOnce(&mut T) -> R) -> Result<R, RuntimeError> {
        access(obj.cell(), self.me, f)
    }
}
