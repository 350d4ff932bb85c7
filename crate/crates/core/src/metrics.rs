//! Recall@K, MRR@K and SAVE@K over a prefix benchmark.
//!
//! Per-item scores are exact `Ratio<u64>` values and are accumulated exactly,
//! so a report does not depend on the order in which predictions arrive.
//! Correctness is exact match under [`normalize_sql`]; an untokenizable
//! prediction never matches.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{read_jsonl, to_jsonl, JsonlError};
use crate::prefixbench::PrefixInstance;
use crate::splitter::SplitName;
use crate::template::normalize_sql;

pub type Score = Ratio<u64>;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("prediction for {pred:?} scored against prefix {instance:?}")]
    PrefixMismatch { instance: String, pred: String },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("complete question length must be at least 1")]
    EmptyQuestion,
    #[error("benchmark is empty")]
    EmptyBench,
    #[error("predictions reference unknown prefix ids: {}", .0.join(", "))]
    UnknownPrefixes(Vec<String>),
    #[error("duplicate predictions for prefix ids: {}", .0.join(", "))]
    DuplicatePredictions(Vec<String>),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

/// A predictor's ranked SQL list for one prefix, rank 1 first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub prefix_id: String,
    pub ranked_sqls: Vec<String>,
}

impl PredictionRecord {
    pub fn new(prefix_id: impl Into<String>, ranked_sqls: Vec<String>) -> Self {
        Self {
            prefix_id: prefix_id.into(),
            ranked_sqls,
        }
    }

    /// Normalized forms of the first `k` predictions; `None` where tokenization failed.
    fn normalized_top(&self, k: usize) -> Vec<Option<String>> {
        self.ranked_sqls
            .iter()
            .take(k)
            .map(|s| normalize_sql(s).ok())
            .collect()
    }
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, MetricError> {
    Ok(read_jsonl(path)?)
}

pub fn predictions_to_jsonl(predictions: &[PredictionRecord]) -> String {
    to_jsonl(predictions)
}

fn gold_set(instance: &PrefixInstance) -> HashSet<String> {
    instance
        .gold_sqls
        .iter()
        .map(|s| normalize_sql(s).unwrap_or_else(|_| s.clone()))
        .collect()
}

fn check(instance: &PrefixInstance, pred: &PredictionRecord, k: usize) -> Result<(), MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    if instance.prefix_id != pred.prefix_id {
        return Err(MetricError::PrefixMismatch {
            instance: instance.prefix_id.clone(),
            pred: pred.prefix_id.clone(),
        });
    }
    Ok(())
}

fn recall_with(gold: &HashSet<String>, pred: &PredictionRecord, k: usize) -> Score {
    if gold.is_empty() {
        return Score::zero();
    }
    let hits: HashSet<String> = pred
        .normalized_top(k)
        .into_iter()
        .flatten()
        .filter(|s| gold.contains(s))
        .collect();
    Score::new(hits.len() as u64, gold.len() as u64)
}

fn mrr_with(gold: &HashSet<String>, pred: &PredictionRecord, k: usize) -> Score {
    pred.normalized_top(k)
        .iter()
        .position(|s| s.as_ref().is_some_and(|s| gold.contains(s)))
        .map_or_else(Score::zero, |idx| Score::new(1, idx as u64 + 1))
}

/// |gold ∩ top-k| / |gold|.
pub fn recall_at_k(instance: &PrefixInstance, pred: &PredictionRecord, k: usize) -> Result<Score, MetricError> {
    check(instance, pred, k)?;
    Ok(recall_with(&gold_set(instance), pred, k))
}

/// Reciprocal 1-based rank of the first correct prediction in the top k, 0 if none.
pub fn mrr_at_k(instance: &PrefixInstance, pred: &PredictionRecord, k: usize) -> Result<Score, MetricError> {
    check(instance, pred, k)?;
    Ok(mrr_with(&gold_set(instance), pred, k))
}

/// One complete question paired with one of its gold SQL queries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompleteQuestion {
    pub example_id: String,
    pub complete_length: usize,
    pub gold_sql: String,
}

/// Fraction of trailing tokens the user need not type: with `first` the
/// shortest prefix length at which `gold_sql` is in the top k,
/// `(complete_length - first) / complete_length`; 0 if it never is.
/// Missing prefix lengths count as incorrect.
pub fn save_at_k(
    complete: &CompleteQuestion,
    preds_by_prefix_length: &BTreeMap<usize, &PredictionRecord>,
    k: usize,
) -> Result<Score, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    let n = complete.complete_length;
    if n == 0 {
        return Err(MetricError::EmptyQuestion);
    }
    let gold = normalize_sql(&complete.gold_sql).unwrap_or_else(|_| complete.gold_sql.clone());
    let first = (1..=n).find(|len| {
        preds_by_prefix_length
            .get(len)
            .is_some_and(|p| p.normalized_top(k).iter().flatten().any(|s| *s == gold))
    });
    Ok(match first {
        Some(first) => Score::new((n - first) as u64, n as u64),
        None => Score::zero(),
    })
}

/// Exact sum of small rationals, bucketed by denominator.
#[derive(Debug, Default, Clone)]
struct RationalSum {
    by_denominator: BTreeMap<u64, u128>,
}

impl RationalSum {
    fn add(&mut self, value: Score) {
        if !value.is_zero() {
            *self.by_denominator.entry(*value.denom()).or_default() += *value.numer() as u128;
        }
    }

    fn mean(&self, count: usize) -> BigRational {
        if count == 0 {
            return BigRational::zero();
        }
        let total = self
            .by_denominator
            .iter()
            .fold(BigRational::zero(), |acc, (&den, &num)| {
                acc + BigRational::new(BigInt::from(num), BigInt::from(den))
            });
        total / BigRational::from_integer(BigInt::from(count))
    }
}

fn to_f64(value: &BigRational) -> f64 {
    value.to_f64().unwrap_or(f64::NAN)
}

/// Best achievable mean Recall@k: mean over prefixes of min(k, L) / L.
pub fn recall_ceiling(bench: &[PrefixInstance], k: usize) -> Result<BigRational, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    if bench.is_empty() {
        return Err(MetricError::EmptyBench);
    }
    let mut sum = RationalSum::default();
    for inst in bench {
        let l = inst.gold_count() as u64;
        if l > 0 {
            sum.add(Score::new(l.min(k as u64), l));
        }
    }
    Ok(sum.mean(bench.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketScore {
    pub recall: f64,
    pub count: usize,
}

/// Exact values behind the floating-point fields, as `numer/denom` strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactScores {
    pub recall: String,
    pub mrr: String,
    pub save: String,
    pub recall_ceiling: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub k: usize,
    pub recall: f64,
    pub mrr: f64,
    pub save: f64,
    pub recall_ceiling: f64,
    pub n_prefixes: usize,
    pub n_complete_questions: usize,
    pub per_omitted_bucket: BTreeMap<usize, BucketScore>,
    pub exact: ExactScores,
    /// Averaging scheme, echoed for readers of the report.
    pub weighting: String,
}

fn exact_string(v: &BigRational) -> String {
    format!("{}/{}", v.numer(), v.denom())
}

fn parse_exact(s: &str) -> Option<BigRational> {
    let (n, d) = s.split_once('/')?;
    let n: BigInt = n.trim().parse().ok()?;
    let d: BigInt = d.trim().parse().ok()?;
    (!d.is_zero()).then(|| BigRational::new(n, d))
}

/// Percentage with one decimal, rounded half up from the exact value.
pub fn percent_one_decimal(value: &BigRational) -> String {
    let scaled = value * BigRational::from_integer(BigInt::from(1000));
    let half = BigRational::new(BigInt::from(1), BigInt::from(2));
    let tenths = (scaled + half).floor().to_integer();
    let negative = tenths < BigInt::zero();
    let abs = if negative { -tenths } else { tenths };
    let whole = &abs / BigInt::from(10);
    let frac = &abs % BigInt::from(10);
    format!("{}{whole}.{frac}", if negative { "-" } else { "" })
}

impl MetricReport {
    fn exact_or_float(exact: &str, float: f64) -> BigRational {
        parse_exact(exact)
            .or_else(|| BigRational::from_float(float))
            .unwrap_or_else(BigRational::zero)
    }

    /// Text block with R/M/S percentages, one decimal each.
    pub fn table_block(&self) -> String {
        let r = Self::exact_or_float(&self.exact.recall, self.recall);
        let m = Self::exact_or_float(&self.exact.mrr, self.mrr);
        let s = Self::exact_or_float(&self.exact.save, self.save);
        let c = Self::exact_or_float(&self.exact.recall_ceiling, self.recall_ceiling);
        format!(
            "K={} (prefixes: {}, complete questions: {}, recall ceiling: {})\n{:>7}{:>7}{:>7}\n{:>7}{:>7}{:>7}\n",
            self.k,
            self.n_prefixes,
            self.n_complete_questions,
            percent_one_decimal(&c),
            "R",
            "M",
            "S",
            percent_one_decimal(&r),
            percent_one_decimal(&m),
            percent_one_decimal(&s),
        )
    }
}

/// Renders one block per report, separated by blank lines.
pub fn render_table(reports: &[MetricReport]) -> String {
    reports
        .iter()
        .map(MetricReport::table_block)
        .collect::<Vec<_>>()
        .join("\n")
}

/// (split, question tokens, gold sql) units scored by SAVE.
fn complete_pairs(bench: &[PrefixInstance]) -> Vec<(SplitName, &[String], &str, &str)> {
    let mut seen: BTreeSet<(SplitName, &[String], &str)> = BTreeSet::new();
    let mut out = Vec::new();
    for inst in bench {
        for s in inst.complete_sources() {
            let key = (inst.split_name, inst.prefix_tokens.as_slice(), s.gold_sql.as_str());
            if seen.insert(key) {
                out.push((key.0, key.1, key.2, s.example_id.as_str()));
            }
        }
    }
    out
}

/// Scores `predictions` against `bench` at cutoff `k`.
///
/// Recall and MRR are averaged uniformly over prefixes, SAVE uniformly over
/// distinct (complete question, gold SQL) pairs. Prefixes without a
/// prediction score as an empty list.
pub fn evaluate(
    bench: &[PrefixInstance],
    predictions: &[PredictionRecord],
    k: usize,
) -> Result<MetricReport, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    if bench.is_empty() {
        return Err(MetricError::EmptyBench);
    }
    let known: HashSet<&str> = bench.iter().map(|i| i.prefix_id.as_str()).collect();
    let mut by_id: HashMap<&str, &PredictionRecord> = HashMap::new();
    let mut unknown = BTreeSet::new();
    let mut duplicate = BTreeSet::new();
    for p in predictions {
        if !known.contains(p.prefix_id.as_str()) {
            unknown.insert(p.prefix_id.clone());
        } else if by_id.insert(p.prefix_id.as_str(), p).is_some() {
            duplicate.insert(p.prefix_id.clone());
        }
    }
    if !unknown.is_empty() {
        return Err(MetricError::UnknownPrefixes(unknown.into_iter().collect()));
    }
    if !duplicate.is_empty() {
        return Err(MetricError::DuplicatePredictions(duplicate.into_iter().collect()));
    }

    let empty: HashMap<&str, PredictionRecord> = bench
        .iter()
        .filter(|i| !by_id.contains_key(i.prefix_id.as_str()))
        .map(|i| (i.prefix_id.as_str(), PredictionRecord::new(i.prefix_id.clone(), Vec::new())))
        .collect();
    let pred_for = |id: &str| -> &PredictionRecord { by_id.get(id).copied().unwrap_or_else(|| &empty[id]) };

    let mut recall_sum = RationalSum::default();
    let mut mrr_sum = RationalSum::default();
    let mut buckets: BTreeMap<usize, (RationalSum, usize)> = BTreeMap::new();
    for inst in bench {
        let gold = gold_set(inst);
        let pred = pred_for(&inst.prefix_id);
        let recall = recall_with(&gold, pred, k);
        recall_sum.add(recall);
        mrr_sum.add(mrr_with(&gold, pred, k));
        for s in &inst.sources {
            let omitted = s.complete_length.saturating_sub(inst.prefix_len());
            let bucket = buckets.entry(omitted).or_default();
            bucket.0.add(recall);
            bucket.1 += 1;
        }
    }

    let lookup: HashMap<(SplitName, &[String]), &PrefixInstance> = bench
        .iter()
        .map(|i| ((i.split_name, i.prefix_tokens.as_slice()), i))
        .collect();
    let pairs = complete_pairs(bench);
    let mut save_sum = RationalSum::default();
    for &(split, tokens, gold_sql, example_id) in &pairs {
        let mut preds = BTreeMap::new();
        for len in 1..=tokens.len() {
            if let Some(inst) = lookup.get(&(split, &tokens[..len])) {
                preds.insert(len, pred_for(&inst.prefix_id));
            }
        }
        let complete = CompleteQuestion {
            example_id: example_id.to_string(),
            complete_length: tokens.len(),
            gold_sql: gold_sql.to_string(),
        };
        save_sum.add(save_at_k(&complete, &preds, k)?);
    }

    let recall = recall_sum.mean(bench.len());
    let mrr = mrr_sum.mean(bench.len());
    let save = save_sum.mean(pairs.len());
    let ceiling = recall_ceiling(bench, k)?;
    Ok(MetricReport {
        k,
        recall: to_f64(&recall),
        mrr: to_f64(&mrr),
        save: to_f64(&save),
        recall_ceiling: to_f64(&ceiling),
        n_prefixes: bench.len(),
        n_complete_questions: pairs.len(),
        per_omitted_bucket: buckets
            .into_iter()
            .map(|(omitted, (sum, count))| {
                let recall = to_f64(&sum.mean(count));
                (omitted, BucketScore { recall, count })
            })
            .collect(),
        exact: ExactScores {
            recall: exact_string(&recall),
            mrr: exact_string(&mrr),
            save: exact_string(&save),
            recall_ceiling: exact_string(&ceiling),
        },
        weighting: "recall/mrr: uniform over prefixes; save: uniform over (complete question, gold sql) pairs"
            .to_string(),
    })
}
