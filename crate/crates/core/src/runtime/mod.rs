//! An in-process actor runtime with delegation and atomic blocks.
//!
//! Every actor owns a private state value that is only reachable as the
//! parameter of closures executing inside it. Passive objects live in an
//! actor's heap ([`Ctx::alloc`]); [`Ctx::bestow`] turns a local reference into
//! a [`BestowedRef`] that any actor may hold, with every operation on it
//! delegated to the owner's mailbox.
//!
//! [`Handle::atomic`] installs a private mailbox at a target so that only the
//! initiator's messages are processed until the block ends;
//! [`Handle::coalesce`] ships a batch of operations as one envelope.
//! Transferable objects ([`Ctx::alloc_transferable`]) may change owner when
//! the current owner is idle ([`Handle::try_transfer`]).
//!
//! Each actor runs on its own OS thread. In deterministic mode a seeded
//! scheduler passes a single baton between actors and the driving thread so
//! that a run is a pure function of the seed.

mod atomic;
mod future;
mod refs;
mod system;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Serialize, Serializer};
use thiserror::Error;

pub use atomic::AtomicHandle;
pub use future::{FutureValue, Promise};
pub use refs::{ActorRef, BestowedRef, Behavior, Ctx, LocalRef, Object, Target};
pub use system::{ActorDiagnostic, Diagnostic, ExecKind, ExecRecord, Handle, Runtime, Stats};

/// Identity of an actor within one runtime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActorId(pub u32);

impl fmt::Display for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

impl Serialize for ActorId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Whoever sent an envelope: an actor, or a thread outside the runtime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Participant {
    Actor(ActorId),
    External,
}

impl fmt::Display for Participant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Participant::Actor(a) => a.fmt(f),
            Participant::External => f.write_str("external"),
        }
    }
}

impl Serialize for Participant {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuntimeError {
    #[error("actor {0} has terminated")]
    ActorTerminated(ActorId),
    #[error("not executing inside an actor")]
    NotInsideActor,
    #[error("actor {actor} does not own object #{object}")]
    NotOwner { actor: ActorId, object: u64 },
    #[error("already inside an atomic block on {0}")]
    AlreadyInAtomic(ActorId),
    #[error("atomic handle used after its block ended")]
    ScopeExpired,
    #[error("object #{0} is not transferable")]
    NotTransferable(u64),
    #[error("actor {0} would wait for itself")]
    SelfDeadlock(ActorId),
    #[error("operation panicked: {0}")]
    Panicked(String),
    #[error("no actor can make progress:\n{0}")]
    Deadlock(Diagnostic),
    #[error("timed out waiting for quiescence:\n{0}")]
    Timeout(Diagnostic),
    #[error("runtime is shutting down")]
    Shutdown,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// How the runtime interleaves actors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheduling {
    /// Every actor thread runs freely.
    Parallel,
    /// One participant at a time, chosen by a seeded generator.
    Deterministic { seed: u64 },
}

impl FromStr for Scheduling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "parallel" => Ok(Scheduling::Parallel),
            _ => match s.strip_prefix("deterministic:") {
                Some(seed) => seed
                    .parse()
                    .map(|seed| Scheduling::Deterministic { seed })
                    .map_err(|e| format!("bad seed `{seed}`: {e}")),
                None if s == "deterministic" => Ok(Scheduling::Deterministic { seed: 0 }),
                None => Err(format!("unknown scheduling `{s}` (parallel | deterministic[:SEED])")),
            },
        }
    }
}

/// When [`Handle::try_transfer`] may move ownership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferPolicy {
    #[default]
    Never,
    WhenOwnerIdle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferOutcome {
    Transferred,
    Delegated,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub scheduling: Scheduling,
    pub transfer_policy: TransferPolicy,
    /// Keep a per-envelope execution log (see [`Handle::exec_log`]).
    pub record_log: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config { scheduling: Scheduling::Parallel, transfer_policy: TransferPolicy::Never, record_log: false }
    }
}

impl Config {
    pub fn deterministic(seed: u64) -> Self {
        Config { scheduling: Scheduling::Deterministic { seed }, ..Config::default() }
    }

    /// Reads `BESTOW_SCHEDULING` (`parallel` or `deterministic:SEED`).
    pub fn from_env() -> Result<Self, String> {
        let mut cfg = Config::default();
        if let Ok(s) = std::env::var("BESTOW_SCHEDULING") {
            cfg.scheduling = s.parse()?;
        }
        Ok(cfg)
    }

    pub fn with_log(mut self) -> Self {
        self.record_log = true;
        self
    }

    pub fn with_policy(mut self, policy: TransferPolicy) -> Self {
        self.transfer_policy = policy;
        self
    }
}

/// Default bound for [`Handle::run_until_quiescent`] in parallel mode.
pub const DEFAULT_QUIESCENCE_TIMEOUT: Duration = Duration::from_secs(30);
