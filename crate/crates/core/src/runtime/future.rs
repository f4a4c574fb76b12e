//! Write-once result slots.

use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::Duration;

use super::system::Handle;
use super::{ActorId, RuntimeError};

type Callback<R> = Box<dyn FnOnce(&Cell<R>) + Send>;

enum Slot<R> {
    Pending(Vec<Callback<R>>),
    Done(Result<R, RuntimeError>),
    Taken,
}

pub(crate) struct Cell<R> {
    slot: Mutex<Slot<R>>,
    cv: Condvar,
}

/// Something a blocked participant can wait for.
pub(crate) trait Ready: Send + Sync {
    fn is_ready(&self) -> bool;
    /// Waits at most `timeout`; true once ready.
    fn wait_for(&self, timeout: Duration) -> bool;
}

impl<R: Send> Cell<R> {
    fn lock(&self) -> MutexGuard<'_, Slot<R>> {
        self.slot.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl<R: Send> Ready for Cell<R> {
    fn is_ready(&self) -> bool {
        !matches!(*self.lock(), Slot::Pending(_))
    }

    fn wait_for(&self, timeout: Duration) -> bool {
        let g = self.lock();
        let (g, _) = self
            .cv
            .wait_timeout_while(g, timeout, |s| matches!(s, Slot::Pending(_)))
            .unwrap_or_else(|p| p.into_inner());
        !matches!(*g, Slot::Pending(_))
    }
}

/// The writing end of a [`FutureValue`]. Dropping it unfulfilled completes
/// the future with [`RuntimeError::Shutdown`].
pub struct Promise<R: Send + 'static> {
    cell: Option<Arc<Cell<R>>>,
}

impl<R: Send + 'static> Promise<R> {
    pub fn fulfill(mut self, value: Result<R, RuntimeError>) {
        if let Some(cell) = self.cell.take() {
            complete(&cell, value);
        }
    }

    pub fn resolve(self, value: R) {
        self.fulfill(Ok(value))
    }
}

impl<R: Send + 'static> Drop for Promise<R> {
    fn drop(&mut self) {
        if let Some(cell) = self.cell.take() {
            complete(&cell, Err(RuntimeError::Shutdown));
        }
    }
}

fn complete<R: Send>(cell: &Cell<R>, value: Result<R, RuntimeError>) {
    let mut g = cell.lock();
    let callbacks = match &mut *g {
        Slot::Pending(cbs) => std::mem::take(cbs),
        // fulfilled at most once
        _ => return,
    };
    *g = Slot::Done(value);
    drop(g);
    cell.cv.notify_all();
    for cb in callbacks {
        cb(cell);
    }
}

fn peek<R: Clone + Send>(cell: &Cell<R>) -> Result<R, RuntimeError> {
    match &*cell.lock() {
        Slot::Done(r) => r.clone(),
        _ => Err(RuntimeError::InvalidArgument("result already consumed".into())),
    }
}

/// An eventually available result.
pub struct FutureValue<R: Send + 'static> {
    cell: Arc<Cell<R>>,
    rt: Handle,
    fulfiller: Option<ActorId>,
}

impl<R: Send + 'static> FutureValue<R> {
    pub(crate) fn pair(rt: &Handle, fulfiller: Option<ActorId>) -> (Promise<R>, FutureValue<R>) {
        let cell = Arc::new(Cell { slot: Mutex::new(Slot::Pending(Vec::new())), cv: Condvar::new() });
        (Promise { cell: Some(cell.clone()) }, FutureValue { cell, rt: rt.clone(), fulfiller })
    }

    pub(crate) fn failed(rt: &Handle, err: RuntimeError) -> FutureValue<R> {
        let (p, f) = Self::pair(rt, None);
        p.fulfill(Err(err));
        f
    }

    /// An already failed future.
    pub fn from_error(rt: &Handle, err: RuntimeError) -> FutureValue<R> {
        Self::failed(rt, err)
    }

    pub fn is_done(&self) -> bool {
        self.cell.is_ready()
    }

    /// Blocks until the result is available without consuming it.
    pub fn wait(&self) -> Result<(), RuntimeError> {
        if self.cell.is_ready() {
            return Ok(());
        }
        self.rt.block_on(self.cell.clone(), self.fulfiller)
    }

    /// Blocks until the result is available and returns it.
    pub fn get(self) -> Result<R, RuntimeError> {
        self.wait()?;
        match std::mem::replace(&mut *self.cell.lock(), Slot::Taken) {
            Slot::Done(r) => r,
            Slot::Taken => Err(RuntimeError::InvalidArgument("result already consumed".into())),
            Slot::Pending(_) => unreachable!("wait returned before completion"),
        }
    }

    /// Runs `f` with (a clone of) the result once available, on the
    /// completing thread, or immediately if already complete.
    pub fn on_complete(&self, f: impl FnOnce(Result<R, RuntimeError>) + Send + 'static)
    where
        R: Clone,
    {
        let mut g = self.cell.lock();
        if let Slot::Pending(cbs) = &mut *g {
            cbs.push(Box::new(move |cell| f(peek(cell))));
            return;
        }
        drop(g);
        f(peek(&self.cell));
    }
}

impl<R: Send + 'static> std::fmt::Debug for FutureValue<R> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FutureValue").field("done", &self.is_done()).finish()
    }
}
