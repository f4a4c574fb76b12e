//! Delegation and atomicity for actors.
//!
//! Two halves share this crate:
//!
//! - [`calc`]: three small actor calculi (bestowed references, transferable
//!   ownership, private message queues) with a type checker, a small-step
//!   interpreter, well-formedness oracles and a bounded interleaving explorer;
//! - [`runtime`]: an in-process actor runtime with bestowed references,
//!   coalesced batches, private-mailbox atomic blocks and ownership transfer,
//!   plus the [`workloads`] built on top of it.

pub mod calc;
pub mod runtime;
pub mod workloads;
