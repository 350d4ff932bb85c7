//! Prefix benchmark construction: every question contributes one prefix per
//! leading token span, and prefixes shared by several questions carry the
//! union of their gold SQL queries.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Example};
use crate::jsonl::{read_jsonl, to_jsonl, JsonlError};
use crate::splitter::{SplitAssignment, SplitName};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("split references unknown example {0:?}")]
    UnknownExample(String),
    #[error("benchmark is empty")]
    Empty,
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

/// A complete question (by example id) that extends a prefix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRef {
    pub example_id: String,
    pub complete_length: usize,
    /// Normalized gold SQL of this example.
    pub gold_sql: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixInstance {
    pub prefix_id: String,
    #[serde(rename = "split")]
    pub split_name: SplitName,
    pub prefix_tokens: Vec<String>,
    /// Distinct normalized SQLs, most frequent among sources first, then lexicographic.
    pub gold_sqls: Vec<String>,
    pub sources: Vec<SourceRef>,
}

impl PrefixInstance {
    pub fn prefix_len(&self) -> usize {
        self.prefix_tokens.len()
    }

    /// Number of gold SQL queries (L).
    pub fn gold_count(&self) -> usize {
        self.gold_sqls.len()
    }

    pub fn max_complete_length(&self) -> usize {
        self.sources.iter().map(|s| s.complete_length).max().unwrap_or(0)
    }

    /// Sources whose complete question is this prefix itself.
    pub fn complete_sources(&self) -> impl Iterator<Item = &SourceRef> {
        let len = self.prefix_len();
        self.sources.iter().filter(move |s| s.complete_length == len)
    }
}

/// All prefixes of `example`'s question, shortest first; the last equals the question.
pub fn enumerate_prefixes(example: &Example) -> Vec<Vec<String>> {
    (1..=example.question_tokens.len())
        .map(|n| example.question_tokens[..n].to_vec())
        .collect()
}

struct Pending<'a> {
    tokens: &'a [String],
    sources: Vec<SourceRef>,
}

/// Builds the instances of one split from its examples, in first-appearance order.
pub fn build_split_bench(examples: &[&Example], split: SplitName) -> Vec<PrefixInstance> {
    let mut index: HashMap<&[String], usize> = HashMap::new();
    let mut pending: Vec<Pending<'_>> = Vec::new();
    for e in examples {
        let n = e.question_tokens.len();
        for len in 1..=n {
            let key = &e.question_tokens[..len];
            let slot = *index.entry(key).or_insert_with(|| {
                pending.push(Pending {
                    tokens: key,
                    sources: Vec::new(),
                });
                pending.len() - 1
            });
            pending[slot].sources.push(SourceRef {
                example_id: e.example_id.clone(),
                complete_length: n,
                gold_sql: e.normalized_sql.clone(),
            });
        }
    }
    pending
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
            for s in &p.sources {
                *freq.entry(s.gold_sql.as_str()).or_default() += 1;
            }
            let mut gold: Vec<(&str, usize)> = freq.into_iter().collect();
            gold.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
            PrefixInstance {
                prefix_id: format!("{split}-{i:06}"),
                split_name: split,
                prefix_tokens: p.tokens.to_vec(),
                gold_sqls: gold.into_iter().map(|(s, _)| s.to_string()).collect(),
                sources: p.sources,
            }
        })
        .collect()
}

/// Builds train, dev and test benchmarks independently, concatenated in that order.
pub fn build_bench(corpus: &Corpus, split: &SplitAssignment) -> Result<Vec<PrefixInstance>, BenchError> {
    let by_id: HashMap<&str, &Example> = corpus
        .examples
        .iter()
        .map(|e| (e.example_id.as_str(), e))
        .collect();
    let mut out = Vec::new();
    for name in SplitName::ALL {
        let examples = split
            .ids(name)
            .iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| BenchError::UnknownExample(id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.extend(build_split_bench(&examples, name));
    }
    Ok(out)
}

pub fn bench_to_jsonl(bench: &[PrefixInstance]) -> String {
    to_jsonl(bench)
}

pub fn read_bench(path: &Path) -> Result<Vec<PrefixInstance>, BenchError> {
    Ok(read_jsonl(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchStats {
    pub prefix_count: usize,
    pub sql_count: usize,
    pub sql_per_prefix_ratio: f64,
    pub mean_prefix_tokens: f64,
    /// Mean question length over distinct source examples.
    pub mean_complete_tokens: f64,
    /// Mean of `complete_length - prefix_length` over (prefix, source) pairs.
    pub mean_omitted_tokens: f64,
    pub omitted_token_histogram: BTreeMap<usize, usize>,
}

pub fn compute_stats(bench: &[PrefixInstance]) -> Result<BenchStats, BenchError> {
    if bench.is_empty() {
        return Err(BenchError::Empty);
    }
    let prefix_count = bench.len();
    let sql_count: usize = bench.iter().map(PrefixInstance::gold_count).sum();
    let prefix_tokens: usize = bench.iter().map(PrefixInstance::prefix_len).sum();

    let mut examples: HashSet<(SplitName, &str)> = HashSet::new();
    let mut complete_tokens = 0usize;
    let mut omitted_total = 0usize;
    let mut pairs = 0usize;
    let mut histogram = BTreeMap::new();
    for inst in bench {
        for s in &inst.sources {
            let omitted = s.complete_length.saturating_sub(inst.prefix_len());
            omitted_total += omitted;
            pairs += 1;
            *histogram.entry(omitted).or_insert(0) += 1;
            if examples.insert((inst.split_name, s.example_id.as_str())) {
                complete_tokens += s.complete_length;
            }
        }
    }
    Ok(BenchStats {
        prefix_count,
        sql_count,
        sql_per_prefix_ratio: sql_count as f64 / prefix_count as f64,
        mean_prefix_tokens: prefix_tokens as f64 / prefix_count as f64,
        mean_complete_tokens: complete_tokens as f64 / examples.len().max(1) as f64,
        mean_omitted_tokens: omitted_total as f64 / pairs.max(1) as f64,
        omitted_token_histogram: histogram,
    })
}

/// Per-split statistics for a benchmark that may hold several splits.
pub fn stats_by_split(bench: &[PrefixInstance]) -> Result<BTreeMap<SplitName, BenchStats>, BenchError> {
    let mut out = BTreeMap::new();
    for name in SplitName::ALL {
        let part: Vec<PrefixInstance> = bench.iter().filter(|i| i.split_name == name).cloned().collect();
        if !part.is_empty() {
            out.insert(name, compute_stats(&part)?);
        }
    }
    if out.is_empty() {
        return Err(BenchError::Empty);
    }
    Ok(out)
}
