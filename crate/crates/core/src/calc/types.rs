//! Static semantics: `Γ ⊢ e : τ` for all three variants.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use super::syntax::{Expr, Type, Value, Variant};

/// Typing context. Later bindings shadow earlier ones.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TypeEnv {
    bindings: Vec<(String, Type)>,
}

impl TypeEnv {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lookup(&self, name: &str) -> Option<&Type> {
        self.bindings.iter().rev().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn extended(&self, name: &str, ty: Type) -> TypeEnv {
        let mut env = self.clone();
        env.bindings.push((name.to_string(), ty));
        env
    }

    pub fn bindings(&self) -> impl Iterator<Item = (&str, &Type)> {
        self.bindings.iter().map(|(n, t)| (n.as_str(), t))
    }
}

impl<S: Into<String>> FromIterator<(S, Type)> for TypeEnv {
    fn from_iter<I: IntoIterator<Item = (S, Type)>>(iter: I) -> Self {
        TypeEnv { bindings: iter.into_iter().map(|(n, t)| (n.into(), t)).collect() }
    }
}

/// `Γ_α`: keeps only bindings of active type.
///
/// Shadowed bindings are kept as-is; a passive binding that shadows an
/// active one hides the name entirely.
pub fn active_restriction(env: &TypeEnv) -> TypeEnv {
    let mut out = TypeEnv::new();
    for (i, (name, ty)) in env.bindings.iter().enumerate() {
        let shadowed = env.bindings[i + 1..].iter().any(|(n, _)| n == name);
        if !shadowed && ty.is_active() {
            out.bindings.push((name.clone(), ty.clone()));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum TypeErrorKind {
    UnboundVar,
    NotAFunction,
    ArgMismatch,
    ReceiverNotActive,
    PassiveLeak,
    BodyNotUnit,
    BadMutate,
    BadBestow,
    /// A construct outside the active variant, or a `new` of a type that has no constructor.
    IllFormed,
}

impl fmt::Display for TypeErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("{kind} at `{location}`: {message}")]
pub struct TypeError {
    pub kind: TypeErrorKind,
    /// The offending subterm, pretty-printed.
    pub location: String,
    pub message: String,
}

impl TypeError {
    fn new(kind: TypeErrorKind, at: &impl fmt::Display, message: impl Into<String>) -> Self {
        TypeError { kind, location: at.to_string(), message: message.into() }
    }
}

/// Knobs for deliberately weakened checkers (mutation testing).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TypingOptions {
    /// When false, message bodies are checked under the full environment
    /// rather than its active restriction.
    pub passive_leak_premise: bool,
}

impl Default for TypingOptions {
    fn default() -> Self {
        TypingOptions { passive_leak_premise: true }
    }
}

pub fn typecheck(env: &TypeEnv, e: &Expr, variant: Variant) -> Result<Type, TypeError> {
    typecheck_with(env, e, variant, TypingOptions::default())
}

pub fn typecheck_with(env: &TypeEnv, e: &Expr, variant: Variant, opts: TypingOptions) -> Result<Type, TypeError> {
    Checker { variant, opts }.expr(env, e)
}

pub fn typecheck_value(v: &Value, variant: Variant) -> Result<Type, TypeError> {
    Checker { variant, opts: TypingOptions::default() }.value(&TypeEnv::new(), v)
}

/// Dynamic premise of message sends: no plain location anywhere in the body.
pub fn validate_message(v: &Value) -> Result<(), TypeError> {
    let Value::Lambda { body, .. } = v else {
        return Err(TypeError::new(TypeErrorKind::NotAFunction, v, "a message must be a lambda"));
    };
    let mut leaked = None;
    body.visit_values(&mut |inner| {
        if let Value::Loc(l) = inner {
            leaked.get_or_insert(*l);
        }
    });
    match leaked {
        Some(l) => Err(TypeError::new(
            TypeErrorKind::PassiveLeak,
            v,
            format!("message body mentions passive location {l}"),
        )),
        None => Ok(()),
    }
}

struct Checker {
    variant: Variant,
    opts: TypingOptions,
}

impl Checker {
    fn expr(&self, env: &TypeEnv, e: &Expr) -> Result<Type, TypeError> {
        use TypeErrorKind::*;
        match e {
            Expr::Var(x) => env
                .lookup(x)
                .cloned()
                .ok_or_else(|| TypeError::new(UnboundVar, e, format!("`{x}` is not bound"))),
            Expr::Val(v) => self.value(env, v),
            Expr::App(f, a) => {
                let tf = self.expr(env, f)?;
                let Type::Arrow(dom, cod) = tf else {
                    return Err(TypeError::new(NotAFunction, f, format!("expected a function, found `{tf}`")));
                };
                let ta = self.expr(env, a)?;
                if ta != *dom {
                    return Err(TypeError::new(ArgMismatch, a, format!("expected `{dom}`, found `{ta}`")));
                }
                Ok(*cod)
            }
            Expr::New(ty) => match ty {
                Type::Passive | Type::Actor => Ok(ty.clone()),
                Type::Transferable if self.variant.allows_transferable() => Ok(Type::Transferable),
                _ => Err(TypeError::new(IllFormed, e, format!("`new {ty}` is not available in the {} variant", self.variant))),
            },
            Expr::Mutate(t) => match self.expr(env, t)? {
                Type::Passive => Ok(Type::Unit),
                other => Err(TypeError::new(BadMutate, t, format!("only `p` can be mutated, found `{other}`"))),
            },
            Expr::Bestow(t) => {
                if !self.variant.allows_bestow() {
                    return Err(TypeError::new(IllFormed, e, format!("`bestow` is not available in the {} variant", self.variant)));
                }
                match self.expr(env, t)? {
                    Type::Passive => Ok(Type::Bestowed),
                    other => Err(TypeError::new(BadBestow, t, format!("only `p` can be bestowed, found `{other}`"))),
                }
            }
            Expr::Atomic(t) | Expr::Release(t) => {
                if !self.variant.allows_private_queues() {
                    return Err(TypeError::new(IllFormed, e, format!("private queues are not available in the {} variant", self.variant)));
                }
                let tt = self.expr(env, t)?;
                if !tt.is_active() {
                    return Err(TypeError::new(ReceiverNotActive, t, format!("target must have active type, found `{tt}`")));
                }
                Ok(Type::Unit)
            }
            Expr::Send(t, msg) => {
                let tt = self.expr(env, t)?;
                if !tt.is_active() {
                    return Err(TypeError::new(ReceiverNotActive, t, format!("receiver must have active type, found `{tt}`")));
                }
                self.message(env, msg)?;
                Ok(Type::Unit)
            }
        }
    }

    fn message(&self, env: &TypeEnv, msg: &Value) -> Result<(), TypeError> {
        use TypeErrorKind::*;
        let Value::Lambda { param, ty, body } = msg else {
            return Err(TypeError::new(NotAFunction, msg, "a message must be a lambda `fn (x : p) => e`"));
        };
        if *ty != Type::Passive {
            return Err(TypeError::new(ArgMismatch, msg, format!("message parameter must have type `p`, found `{ty}`")));
        }
        validate_message(msg)?;
        let outer = if self.opts.passive_leak_premise { active_restriction(env) } else { env.clone() };
        let body_ty = match self.expr(&outer.extended(param, Type::Passive), body) {
            Ok(t) => t,
            // A variable that the restriction removed is a leak, not a typo.
            Err(err) if err.kind == UnboundVar && env.lookup(&err.location).is_some() => {
                let ty = env.lookup(&err.location).unwrap();
                return Err(TypeError::new(
                    PassiveLeak,
                    &err.location,
                    format!("`{}` has type `{ty}`; free variables of a message must have active type", err.location),
                ));
            }
            Err(err) => return Err(err),
        };
        if self.variant == Variant::Transfer && body_ty != Type::Unit {
            return Err(TypeError::new(BodyNotUnit, body, format!("message body must have type `Unit`, found `{body_ty}`")));
        }
        Ok(())
    }

    fn value(&self, env: &TypeEnv, v: &Value) -> Result<Type, TypeError> {
        Ok(match v {
            Value::Unit => Type::Unit,
            Value::Actor(_) => Type::Actor,
            Value::Loc(_) => Type::Passive,
            Value::Bestowed(..) => Type::Bestowed,
            Value::Transferable(_) => Type::Transferable,
            Value::Lambda { param, ty, body } => {
                let cod = self.expr(&env.extended(param, ty.clone()), body)?;
                Type::arrow(ty.clone(), cod)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calc::syntax::{parse, parse_runtime, ActorId, Loc};

    fn check(src: &str, variant: Variant) -> Result<Type, TypeError> {
        typecheck(&TypeEnv::new(), &parse(src, variant).unwrap(), variant)
    }

    #[test]
    fn restriction_keeps_active_bindings() {
        let env: TypeEnv = [("x", Type::Passive), ("y", Type::Actor)].into_iter().collect();
        assert_eq!(active_restriction(&env), [("y", Type::Actor)].into_iter().collect());
        assert_eq!(active_restriction(&TypeEnv::new()), TypeEnv::new());
        let env: TypeEnv =
            [("x", Type::Bestowed), ("y", Type::arrow(Type::Passive, Type::Unit))].into_iter().collect();
        assert_eq!(active_restriction(&env), [("x", Type::Bestowed)].into_iter().collect());
    }

    #[test]
    fn passive_shadowing_hides_active_binding() {
        let env: TypeEnv = [("x", Type::Actor), ("x", Type::Passive)].into_iter().collect();
        assert_eq!(active_restriction(&env).lookup("x"), None);
    }

    #[test]
    fn send_to_fresh_actor() {
        assert_eq!(check("(new c) ! (fn (x : p) => x.mutate())", Variant::Core), Ok(Type::Unit));
    }

    #[test]
    fn passive_leak() {
        let env: TypeEnv = [("y", Type::Passive)].into_iter().collect();
        let e = parse("(new c) ! (fn (x : p) => y.mutate())", Variant::Core).unwrap();
        let err = typecheck(&env, &e, Variant::Core).unwrap_err();
        assert_eq!(err.kind, TypeErrorKind::PassiveLeak);
        assert_eq!(err.location, "y");
        // the weakened checker lets it through
        let weak = TypingOptions { passive_leak_premise: false };
        assert_eq!(typecheck_with(&env, &e, Variant::Core, weak), Ok(Type::Unit));
    }

    #[test]
    fn passive_receiver() {
        assert_eq!(check("(new p) ! (fn (x : p) => unit)", Variant::Core).unwrap_err().kind, TypeErrorKind::ReceiverNotActive);
    }

    #[test]
    fn bestow_passive() {
        assert_eq!(check("bestow (new p)", Variant::Core), Ok(Type::Bestowed));
        assert_eq!(check("bestow (new c)", Variant::Core).unwrap_err().kind, TypeErrorKind::BadBestow);
    }

    #[test]
    fn transfer_body_must_be_unit() {
        let src = "(new c) ! (fn (x : p) => fn (y : Unit) => y)";
        assert_eq!(check(src, Variant::Core), Ok(Type::Unit));
        assert_eq!(check(src, Variant::Transfer).unwrap_err().kind, TypeErrorKind::BodyNotUnit);
    }

    #[test]
    fn atomic_and_release() {
        assert_eq!(check("atomic (new c)", Variant::PrivateQueues), Ok(Type::Unit));
        assert_eq!(check("release (bestow (new p))", Variant::PrivateQueues), Ok(Type::Unit));
        assert_eq!(check("atomic (new p)", Variant::PrivateQueues).unwrap_err().kind, TypeErrorKind::ReceiverNotActive);
    }

    #[test]
    fn message_shape() {
        assert_eq!(check("(new c) ! unit", Variant::Core).unwrap_err().kind, TypeErrorKind::NotAFunction);
        assert_eq!(check("(new c) ! (fn (x : c) => unit)", Variant::Core).unwrap_err().kind, TypeErrorKind::ArgMismatch);
    }

    #[test]
    fn application_errors() {
        assert_eq!(check("unit unit", Variant::Core).unwrap_err().kind, TypeErrorKind::NotAFunction);
        assert_eq!(check("(fn (x : p) => x) (new c)", Variant::Core).unwrap_err().kind, TypeErrorKind::ArgMismatch);
        assert_eq!(check("x", Variant::Core).unwrap_err().kind, TypeErrorKind::UnboundVar);
        assert_eq!(check("(new c).mutate()", Variant::Core).unwrap_err().kind, TypeErrorKind::BadMutate);
    }

    #[test]
    fn runtime_values_carry_their_type() {
        let cases = [
            (Value::Loc(Loc(0)), Type::Passive),
            (Value::Actor(ActorId(1)), Type::Actor),
            (Value::Bestowed(Loc(2), ActorId(0)), Type::Bestowed),
            (Value::Transferable(Loc(3)), Type::Transferable),
            (Value::Unit, Type::Unit),
        ];
        for (v, ty) in cases {
            for variant in Variant::ALL {
                assert_eq!(typecheck(&TypeEnv::new(), &Expr::Val(v.clone()), variant), Ok(ty.clone()));
            }
        }
    }

    #[test]
    fn validate_message_examples() {
        let m = |src: &str| parse_runtime(src, Variant::Core).unwrap().as_value().unwrap().clone();
        assert_eq!(
            validate_message(&m("fn (x : p) => #l3.mutate()")).unwrap_err().kind,
            TypeErrorKind::PassiveLeak
        );
        assert!(validate_message(&m("fn (x : p) => x.mutate()")).is_ok());
        assert!(validate_message(&m("fn (x : p) => @a1 ! (fn (y : p) => unit)")).is_ok());
    }

    #[test]
    fn literal_location_in_message_is_a_leak() {
        let e = parse_runtime("@a1 ! (fn (x : p) => #l0.mutate())", Variant::Core).unwrap();
        assert_eq!(typecheck(&TypeEnv::new(), &e, Variant::Core).unwrap_err().kind, TypeErrorKind::PassiveLeak);
    }

    #[test]
    fn variant_constructs_rejected_by_checker() {
        let e = Expr::atomic(Expr::New(Type::Actor));
        assert_eq!(typecheck(&TypeEnv::new(), &e, Variant::Core).unwrap_err().kind, TypeErrorKind::IllFormed);
        let e = Expr::New(Type::Bestowed);
        assert_eq!(typecheck(&TypeEnv::new(), &e, Variant::Core).unwrap_err().kind, TypeErrorKind::IllFormed);
    }
}
