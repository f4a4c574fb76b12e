//! Executable formal semantics of the three actor calculi.

pub mod explorer;
pub mod run;
pub mod semantics;
pub mod syntax;
pub mod types;
pub mod wf;

use thiserror::Error;

pub use syntax::{ActorId, Expr, Loc, QueueId, Type, Value, Variant};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckError {
    #[error(transparent)]
    Syntax(#[from] syntax::SyntaxError),
    #[error(transparent)]
    Type(#[from] types::TypeError),
}

/// Parses and typechecks a program file in the empty environment.
///
/// `variant` overrides any `#variant` pragma in the file.
pub fn check_source(source: &str, variant: Option<Variant>) -> Result<(Variant, Expr, Type), CheckError> {
    let (variant, expr) = syntax::parse_program(source, variant)?;
    let ty = types::typecheck(&types::TypeEnv::new(), &expr, variant)?;
    Ok((variant, expr, ty))
}
