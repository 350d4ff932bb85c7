//! Training-free predictors over the historical (train split) SQL inventory.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_hex;
use crate::metrics::{predictions_to_jsonl, PredictionRecord};
use crate::prefixbench::{bench_to_jsonl, PrefixInstance};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("cannot build an index from an empty training benchmark")]
    EmptyTrain,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid index: {message}")]
    BadIndex { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub prefix_tokens: Vec<String>,
    pub gold_sqls: Vec<String>,
    /// Number of source examples behind this prefix.
    pub frequency: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoricalIndex {
    pub entries: Vec<IndexEntry>,
    /// Normalized SQL -> number of training examples carrying it.
    pub sql_frequency: BTreeMap<String, usize>,
    /// Digest of the training benchmark the index was built from.
    pub built_from: String,
}

impl HistoricalIndex {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("index serializes")
    }

    pub fn load(path: &Path) -> Result<Self, BaselineError> {
        let text = fs::read_to_string(path).map_err(|source| BaselineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| BaselineError::BadIndex {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

pub fn build_index(train_bench: &[PrefixInstance]) -> Result<HistoricalIndex, BaselineError> {
    if train_bench.is_empty() {
        return Err(BaselineError::EmptyTrain);
    }
    let mut by_prefix: BTreeMap<&[String], IndexEntry> = BTreeMap::new();
    let mut sql_frequency: BTreeMap<String, usize> = BTreeMap::new();
    for inst in train_bench {
        let entry = by_prefix
            .entry(inst.prefix_tokens.as_slice())
            .or_insert_with(|| IndexEntry {
                prefix_tokens: inst.prefix_tokens.clone(),
                gold_sqls: Vec::new(),
                frequency: 0,
            });
        for sql in &inst.gold_sqls {
            if !entry.gold_sqls.contains(sql) {
                entry.gold_sqls.push(sql.clone());
            }
        }
        entry.frequency += inst.sources.len();
        // each example is counted once, at the prefix equal to its question
        for s in inst.complete_sources() {
            *sql_frequency.entry(s.gold_sql.clone()).or_default() += 1;
        }
    }
    Ok(HistoricalIndex {
        entries: by_prefix.into_values().collect(),
        sql_frequency,
        built_from: sha256_hex(bench_to_jsonl(train_bench).as_bytes()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    MostFrequent,
    PrefixNn,
}

impl FromStr for Baseline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "most-frequent" | "most_frequent" => Ok(Baseline::MostFrequent),
            "prefix-nn" | "prefix_nn" => Ok(Baseline::PrefixNn),
            other => Err(format!("unknown baseline {other:?}")),
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Baseline::MostFrequent => "most-frequent",
            Baseline::PrefixNn => "prefix-nn",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredSql {
    pub sql: String,
    /// Jaccard similarity of the entry that contributed this SQL; 0 for fallbacks.
    pub score: f64,
}

/// Index prepared for repeated queries: interned token bags and the
/// most-frequent order computed once.
#[derive(Debug, Clone)]
pub struct Ranker {
    index: HistoricalIndex,
    vocab: HashMap<String, u32>,
    bags: Vec<Vec<u32>>,
    frequent: Vec<String>,
}

/// Multiset intersection size of two sorted id lists.
fn overlap(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn common_prefix_len(a: &[String], b: &[String]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

struct Candidate {
    entry: usize,
    shared: usize,
    union: usize,
    lcp: usize,
}

impl Ranker {
    pub fn new(index: HistoricalIndex) -> Self {
        let mut vocab: HashMap<String, u32> = HashMap::new();
        let bags = index
            .entries
            .iter()
            .map(|e| {
                let mut ids: Vec<u32> = e
                    .prefix_tokens
                    .iter()
                    .map(|t| {
                        let next = vocab.len() as u32;
                        *vocab.entry(t.clone()).or_insert(next)
                    })
                    .collect();
                ids.sort_unstable();
                ids
            })
            .collect();
        let mut frequent: Vec<(&String, &usize)> = index.sql_frequency.iter().collect();
        frequent.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        let frequent = frequent.into_iter().map(|(s, _)| s.clone()).collect();
        Self {
            index,
            vocab,
            bags,
            frequent,
        }
    }

    pub fn index(&self) -> &HistoricalIndex {
        &self.index
    }

    /// Top `k` SQLs by (training frequency desc, normalized string asc).
    pub fn most_frequent(&self, k: usize) -> Vec<String> {
        self.frequent.iter().take(k).cloned().collect()
    }

    /// Entries ranked by multiset Jaccard similarity to `query`, then longest
    /// common prefix, then entry prefix order; SQLs collected in that order,
    /// deduplicated, and topped up from the most-frequent order.
    pub fn prefix_nn(&self, query: &[String], k: usize) -> Vec<ScoredSql> {
        let mut query_ids: Vec<u32> = Vec::with_capacity(query.len());
        let mut unknown = 0usize;
        for t in query {
            match self.vocab.get(t) {
                Some(&id) => query_ids.push(id),
                None => unknown += 1,
            }
        }
        query_ids.sort_unstable();

        let mut candidates: Vec<Candidate> = self
            .bags
            .iter()
            .enumerate()
            .filter_map(|(entry, bag)| {
                let shared = overlap(&query_ids, bag);
                (shared > 0).then(|| Candidate {
                    entry,
                    shared,
                    union: query_ids.len() + unknown + bag.len() - shared,
                    lcp: common_prefix_len(query, &self.index.entries[entry].prefix_tokens),
                })
            })
            .collect();
        candidates.sort_by(|a, b| {
            // a.shared / a.union vs b.shared / b.union, descending
            (b.shared * a.union)
                .cmp(&(a.shared * b.union))
                .then_with(|| b.lcp.cmp(&a.lcp))
                .then_with(|| {
                    self.index.entries[a.entry]
                        .prefix_tokens
                        .cmp(&self.index.entries[b.entry].prefix_tokens)
                })
        });

        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(k);
        for c in &candidates {
            if out.len() >= k {
                break;
            }
            let score = c.shared as f64 / c.union as f64;
            for sql in &self.index.entries[c.entry].gold_sqls {
                if out.len() >= k {
                    break;
                }
                if seen.insert(sql.as_str()) {
                    out.push(ScoredSql {
                        sql: sql.clone(),
                        score,
                    });
                }
            }
        }
        for sql in &self.frequent {
            if out.len() >= k {
                break;
            }
            if seen.insert(sql.as_str()) {
                out.push(ScoredSql {
                    sql: sql.clone(),
                    score: 0.0,
                });
            }
        }
        out
    }

    pub fn predict(&self, baseline: Baseline, query: &[String], k: usize) -> Vec<String> {
        match baseline {
            Baseline::MostFrequent => self.most_frequent(k),
            Baseline::PrefixNn => self.prefix_nn(query, k).into_iter().map(|s| s.sql).collect(),
        }
    }
}

pub fn predict_most_frequent(index: &HistoricalIndex, k: usize) -> Vec<String> {
    Ranker::new(index.clone()).most_frequent(k)
}

pub fn predict_prefix_nn(index: &HistoricalIndex, query_prefix_tokens: &[String], k: usize) -> Vec<String> {
    Ranker::new(index.clone()).predict(Baseline::PrefixNn, query_prefix_tokens, k)
}

/// One prediction per benchmark prefix, in benchmark order.
pub fn run_baseline(
    bench: &[PrefixInstance],
    ranker: &Ranker,
    baseline: Baseline,
    k: usize,
) -> Result<Vec<PredictionRecord>, BaselineError> {
    if k == 0 {
        return Err(BaselineError::ZeroK);
    }
    Ok(bench
        .iter()
        .map(|inst| PredictionRecord::new(inst.prefix_id.clone(), ranker.predict(baseline, &inst.prefix_tokens, k)))
        .collect())
}

pub fn write_predictions(path: &Path, predictions: &[PredictionRecord]) -> Result<(), BaselineError> {
    fs::write(path, predictions_to_jsonl(predictions)).map_err(|source| BaselineError::Io {
        path: path.to_path_buf(),
        source,
    })
}
