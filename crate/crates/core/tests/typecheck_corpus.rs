mod common;

use std::collections::BTreeMap;
use std::fs;
use std::time::Instant;

use bestow::calc::syntax::{parse_program, SyntaxError, Variant};
use bestow::calc::{check_source, CheckError};
use common::Expect;

#[test]
fn verdicts_match_expectations() {
    let start = Instant::now();
    let files = common::bst_files(&common::corpus_dir().join("typecheck"));
    let mut per_variant: BTreeMap<Variant, usize> = BTreeMap::new();
    let mut kinds = Vec::new();
    for path in &files {
        let src = fs::read_to_string(path).unwrap();
        let expect = common::expectation(&src);
        let (variant, _) = bestow::calc::syntax::split_pragma(&src).map(|(v, ..)| (v.unwrap(), ())).unwrap();
        *per_variant.entry(variant).or_default() += 1;
        let got = match check_source(&src, None) {
            Ok((_, _, ty)) => Expect::Type(ty.to_string()),
            Err(CheckError::Type(e)) => Expect::Error(e.kind.to_string()),
            Err(CheckError::Syntax(SyntaxError::Variant { .. })) => Expect::VariantError,
            Err(CheckError::Syntax(SyntaxError::Parse { .. })) => Expect::ParseError,
        };
        assert_eq!(got, expect, "{}", path.display());
        kinds.push(got);
    }
    assert!(files.len() >= 20);
    for v in Variant::ALL {
        assert!(per_variant.get(&v).copied().unwrap_or(0) >= 6, "{v}: too few programs");
    }
    for needed in ["PassiveLeak", "ReceiverNotActive", "BodyNotUnit"] {
        assert!(kinds.contains(&Expect::Error(needed.into())), "no {needed} case");
    }
    assert!(kinds.contains(&Expect::VariantError));
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn leak_points_at_the_captured_variable() {
    let src = fs::read_to_string(common::corpus_dir().join("typecheck/leak.bst")).unwrap();
    let Err(CheckError::Type(e)) = check_source(&src, None) else { panic!() };
    assert_eq!(e.location, "y");
}

#[test]
fn explore_corpus_typechecks() {
    for v in Variant::ALL {
        for (path, src) in common::explore_programs(v) {
            let (variant, _) = parse_program(&src, None).unwrap();
            check_source(&src, Some(variant)).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        }
    }
}
