//! Train/dev/test partitioning: question split, SQL-template split, and the
//! frequent-database filter used for the Spider regime.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Example};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Dev, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitName::Train),
            "dev" | "valid" | "validation" => Ok(SplitName::Dev),
            "test" => Ok(SplitName::Test),
            other => Err(format!("unknown split name {other:?}")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("cannot split an empty corpus")]
    EmptyCorpus,
    #[error("fractions must sum to 1 (got {0})")]
    FractionSum(f64),
    #[error("fractions must be finite and non-negative")]
    NegativeFraction,
    #[error("example {0:?} has no split:<name> tag")]
    MissingProvidedSplit(String),
    #[error("example {id:?}: {message}")]
    BadProvidedSplit { id: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fractions {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for Fractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            dev: 0.1,
            test: 0.2,
        }
    }
}

impl Fractions {
    pub fn new(train: f64, dev: f64, test: f64) -> Result<Self, SplitError> {
        let f = Self { train, dev, test };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), SplitError> {
        let parts = self.as_array();
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(SplitError::NegativeFraction);
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SplitError::FractionSum(sum));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.dev, self.test]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Question,
    Template,
    Provided,
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitKind::Question => "question",
            SplitKind::Template => "template",
            SplitKind::Provided => "provided",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMeta {
    pub kind: SplitKind,
    pub seed: u64,
    pub fractions: [f64; 3],
}

/// Example ids per split, each list in corpus order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
    pub meta: SplitMeta,
    #[serde(skip)]
    pub warnings: Vec<String>,
}

impl SplitAssignment {
    pub fn ids(&self, split: SplitName) -> &[String] {
        match split {
            SplitName::Train => &self.train,
            SplitName::Dev => &self.dev,
            SplitName::Test => &self.test,
        }
    }

    pub fn split_of(&self) -> HashMap<&str, SplitName> {
        let mut out = HashMap::new();
        for split in SplitName::ALL {
            for id in self.ids(split) {
                out.insert(id.as_str(), split);
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split assignment serializes")
    }
}

struct Group {
    key: String,
    members: Vec<usize>,
}

fn group_examples(examples: &[&Example], key: impl Fn(&Example) -> String) -> Vec<Group> {
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut groups: Vec<Group> = Vec::new();
    for (pos, e) in examples.iter().enumerate() {
        let k = key(e);
        match index.get(&k) {
            Some(&g) => groups[g].members.push(pos),
            None => {
                index.insert(k.clone(), groups.len());
                groups.push(Group {
                    key: k,
                    members: vec![pos],
                });
            }
        }
    }
    groups
}

fn grouped_split(
    corpus: &Corpus,
    fractions: Fractions,
    seed: u64,
    kind: SplitKind,
    key: impl Fn(&Example) -> String,
) -> Result<SplitAssignment, SplitError> {
    fractions.validate()?;
    let examples: Vec<&Example> = corpus.examples.iter().filter(|e| !e.is_excluded()).collect();
    if examples.is_empty() {
        return Err(SplitError::EmptyCorpus);
    }
    let mut groups = group_examples(&examples, key);
    let mut warnings = Vec::new();

    // Canonical order first so the result does not depend on load order,
    // then a seeded shuffle decides the order among equal-sized groups.
    groups.sort_by(|a, b| a.key.cmp(&b.key));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);
    groups.sort_by(|a, b| b.members.len().cmp(&a.members.len()));

    let mut assigned = vec![SplitName::Train; examples.len()];
    if groups.len() == 1 {
        let msg = format!(
            "{kind} split: only one group ({:?}); all examples assigned to train",
            groups[0].key
        );
        log::warn!("{msg}");
        warnings.push(msg);
    } else {
        let total = examples.len() as f64;
        let targets = fractions.as_array().map(|f| f * total);
        let mut filled = [0usize; 3];
        for group in &groups {
            let mut best = 0;
            let mut best_deficit = f64::NEG_INFINITY;
            for (slot, target) in targets.iter().enumerate() {
                let deficit = target - filled[slot] as f64;
                if deficit > best_deficit {
                    best = slot;
                    best_deficit = deficit;
                }
            }
            filled[best] += group.members.len();
            for &m in &group.members {
                assigned[m] = SplitName::ALL[best];
            }
        }
    }

    let mut out = SplitAssignment {
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
        meta: SplitMeta {
            kind,
            seed,
            fractions: fractions.as_array(),
        },
        warnings,
    };
    for (e, split) in examples.iter().zip(assigned) {
        let id = e.example_id.clone();
        match split {
            SplitName::Train => out.train.push(id),
            SplitName::Dev => out.dev.push(id),
            SplitName::Test => out.test.push(id),
        }
    }
    Ok(out)
}

/// Partitions non-excluded examples so no complete question spans two splits.
pub fn question_split(corpus: &Corpus, fractions: Fractions, seed: u64) -> Result<SplitAssignment, SplitError> {
    grouped_split(corpus, fractions, seed, SplitKind::Question, Example::question_key)
}

/// Partitions non-excluded examples so no SQL template spans two splits.
pub fn template_split(corpus: &Corpus, fractions: Fractions, seed: u64) -> Result<SplitAssignment, SplitError> {
    grouped_split(corpus, fractions, seed, SplitKind::Template, |e| e.sql_template.clone())
}

/// Honors upstream `split:<name>` tags. Every non-excluded example must carry one.
pub fn provided_split(corpus: &Corpus) -> Result<SplitAssignment, SplitError> {
    let mut out = SplitAssignment {
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
        meta: SplitMeta {
            kind: SplitKind::Provided,
            seed: 0,
            fractions: [0.0; 3],
        },
        warnings: Vec::new(),
    };
    for e in corpus.examples.iter().filter(|e| !e.is_excluded()) {
        let split = e
            .provided_split()
            .ok_or_else(|| SplitError::MissingProvidedSplit(e.example_id.clone()))?
            .map_err(|message| SplitError::BadProvidedSplit {
                id: e.example_id.clone(),
                message,
            })?;
        match split {
            SplitName::Train => out.train.push(e.example_id.clone()),
            SplitName::Dev => out.dev.push(e.example_id.clone()),
            SplitName::Test => out.test.push(e.example_id.clone()),
        }
    }
    if out.is_empty() {
        return Err(SplitError::EmptyCorpus);
    }
    let total = out.len() as f64;
    out.meta.fractions = SplitName::ALL.map(|s| out.ids(s).len() as f64 / total);
    Ok(out)
}

/// Keeps examples whose database has strictly more than `min_examples` examples.
pub fn frequent_db_filter(corpus: &Corpus, min_examples: usize) -> Corpus {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for e in &corpus.examples {
        *counts.entry(e.database_id.as_str()).or_default() += 1;
    }
    let keep: std::collections::HashSet<String> = counts
        .into_iter()
        .filter(|&(_, n)| n > min_examples)
        .map(|(db, _)| db.to_string())
        .collect();
    corpus.retain_examples(|e| keep.contains(&e.database_id))
}
