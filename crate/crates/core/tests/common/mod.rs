#![allow(dead_code)]

use std::path::PathBuf;

use prefixsql_core::corpus::{load_corpus, load_schemas, Corpus, CorpusFormat};
use prefixsql_core::prefixbench::{build_bench, PrefixInstance};
use prefixsql_core::splitter::{provided_split, SplitName};
use serde_json::Value;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn mini_geo() -> Corpus {
    let schemas = load_schemas(&fixture("mini_geo_schema.json")).unwrap();
    load_corpus(&fixture("mini_geo.jsonl"), CorpusFormat::CanonicalJsonl, schemas).unwrap()
}

pub fn table5_shaped() -> Corpus {
    let schemas = load_schemas(&fixture("mini_geo_schema.json")).unwrap();
    load_corpus(&fixture("table5_shaped.jsonl"), CorpusFormat::CanonicalJsonl, schemas).unwrap()
}

pub fn golden() -> Value {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/fixture_oracle.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Provided-split benchmark for every split.
pub fn provided_bench() -> Vec<PrefixInstance> {
    let corpus = mini_geo();
    let split = provided_split(&corpus).unwrap();
    build_bench(&corpus, &split).unwrap()
}

pub fn split_part(bench: &[PrefixInstance], name: SplitName) -> Vec<PrefixInstance> {
    bench.iter().filter(|i| i.split_name == name).cloned().collect()
}

pub fn strings(v: &Value) -> Vec<String> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|s| s.as_str().unwrap().to_string())
        .collect()
}
