//! Helpers shared by the integration tests: corpus discovery and expectations.
#![allow(dead_code)]

pub mod batch;

use std::fs;
use std::path::{Path, PathBuf};

use bestow::calc::syntax::Variant;

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

/// All `.bst` files directly under `dir`, sorted by name.
pub fn bst_files(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "bst"))
        .collect();
    out.sort();
    out
}

pub fn explore_programs(variant: Variant) -> Vec<(PathBuf, String)> {
    bst_files(&corpus_dir().join("explore").join(variant.name()))
        .into_iter()
        .map(|p| {
            let src = fs::read_to_string(&p).unwrap();
            (p, src)
        })
        .collect()
}

pub fn mutant_programs() -> Vec<(PathBuf, String)> {
    bst_files(&corpus_dir().join("mutants"))
        .into_iter()
        .map(|p| {
            let src = fs::read_to_string(&p).unwrap();
            (p, src)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expect {
    Type(String),
    Error(String),
    VariantError,
    ParseError,
}

/// Reads the `-- expect:` header of a typecheck corpus file.
pub fn expectation(src: &str) -> Expect {
    let line = src
        .lines()
        .find_map(|l| l.trim().strip_prefix("-- expect:"))
        .expect("corpus file has an `-- expect:` line")
        .trim();
    if let Some(kind) = line.strip_prefix("error ") {
        Expect::Error(kind.trim().to_string())
    } else if line == "variant-error" {
        Expect::VariantError
    } else if line == "parse-error" {
        Expect::ParseError
    } else {
        Expect::Type(line.to_string())
    }
}
