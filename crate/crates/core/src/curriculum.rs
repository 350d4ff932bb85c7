//! Curriculum schedules ordered by omitted-token difficulty.
//!
//! Each (prefix, gold SQL) pair is one training item. Items are sorted by
//! difficulty and chunked into batches; the pacing function decides, per
//! epoch, which batch difficulties are admitted:
//!
//! * epoch 0: `[d_min, d_min + m]`
//! * `1 <= e < tau / lambda`: `[d_min + m, d_min + m + lambda * e]` (literal)
//!   or `[d_min, d_min + m + lambda * e]` (cumulative)
//! * `e >= tau / lambda`: every batch
//!
//! with `tau = d_max - d_min - m`.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prefixbench::PrefixInstance;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CurriculumError {
    #[error("prefix length {prefix} must be in 1..={complete}")]
    BadLengths { prefix: usize, complete: usize },
    #[error("no training items")]
    NoItems,
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
    #[error("epochs must be at least 1")]
    ZeroEpochs,
    #[error("lambda must be at least 1")]
    ZeroLambda,
    #[error("gold SQL {sql:?} of prefix {prefix_id:?} has no source")]
    OrphanGold { prefix_id: String, sql: String },
}

/// Returns `(g_score, difficulty)` where `g_score = prefix - complete` (never
/// positive) and `difficulty = -g_score`, the omitted-token count.
pub fn score_difficulty(prefix_length: usize, complete_length: usize) -> Result<(i64, u32), CurriculumError> {
    if prefix_length == 0 || prefix_length > complete_length {
        return Err(CurriculumError::BadLengths {
            prefix: prefix_length,
            complete: complete_length,
        });
    }
    let g_score = prefix_length as i64 - complete_length as i64;
    Ok((g_score, (-g_score) as u32))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainItem {
    pub item_id: String,
    pub prefix_id: String,
    pub gold_sql: String,
    pub difficulty: u32,
}

/// One item per (prefix, gold SQL) pair. Difficulty is measured against the
/// shortest complete question among the sources carrying that SQL.
pub fn flatten_pairs(bench: &[PrefixInstance]) -> Result<Vec<TrainItem>, CurriculumError> {
    let mut items = Vec::new();
    for inst in bench {
        for (j, sql) in inst.gold_sqls.iter().enumerate() {
            let complete = inst
                .sources
                .iter()
                .filter(|s| &s.gold_sql == sql)
                .map(|s| s.complete_length)
                .min()
                .ok_or_else(|| CurriculumError::OrphanGold {
                    prefix_id: inst.prefix_id.clone(),
                    sql: sql.clone(),
                })?;
            let (_, difficulty) = score_difficulty(inst.prefix_len(), complete)?;
            items.push(TrainItem {
                item_id: format!("{}#{j}", inst.prefix_id),
                prefix_id: inst.prefix_id.clone(),
                gold_sql: sql.clone(),
                difficulty,
            });
        }
    }
    Ok(items)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacingMode {
    /// Middle epochs admit `[d_min + m, d_min + m + lambda * e]`, exactly as printed.
    #[default]
    PaperLiteral,
    /// Middle epochs admit `[d_min, d_min + m + lambda * e]`.
    Cumulative,
}

impl FromStr for PacingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper_literal" | "paper-literal" | "literal" => Ok(PacingMode::PaperLiteral),
            "cumulative" => Ok(PacingMode::Cumulative),
            other => Err(format!("unknown pacing mode {other:?}")),
        }
    }
}

impl fmt::Display for PacingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PacingMode::PaperLiteral => "paper_literal",
            PacingMode::Cumulative => "cumulative",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumConfig {
    pub lambda: u32,
    pub m: u32,
    pub batch_size: usize,
    pub mode: PacingMode,
    /// Seeds the per-epoch feed order of admitted batches.
    pub seed: u64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            lambda: 1,
            m: 2,
            batch_size: 32,
            mode: PacingMode::PaperLiteral,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub batch_id: usize,
    /// Hardest member's difficulty.
    pub difficulty: u32,
    pub item_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochPlan {
    pub epoch: usize,
    /// Inclusive admitted difficulty range.
    pub lower: i64,
    pub upper: i64,
    /// Admitted batch ids, ascending.
    pub batch_ids: Vec<usize>,
    /// The same ids in seeded presentation order.
    pub feed_order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub config: CurriculumConfig,
    pub d_min: u32,
    pub d_max: u32,
    pub tau: i64,
    pub items: Vec<TrainItem>,
    pub batches: Vec<Batch>,
    pub epochs: Vec<EpochPlan>,
}

impl CurriculumSchedule {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedule serializes")
    }
}

/// Admitted difficulty interval for `epoch`, inclusive on both ends.
pub fn pacing_interval(epoch: usize, d_min: u32, d_max: u32, m: u32, lambda: u32, mode: PacingMode) -> (i64, i64) {
    let (d_min, d_max, m, lambda) = (d_min as i64, d_max as i64, m as i64, lambda as i64);
    let tau = d_max - d_min - m;
    let e = epoch as i64;
    if e == 0 {
        (d_min, d_min + m)
    } else if lambda * e >= tau {
        (d_min, d_max)
    } else {
        let upper = d_min + m + lambda * e;
        match mode {
            PacingMode::PaperLiteral => (d_min + m, upper),
            PacingMode::Cumulative => (d_min, upper),
        }
    }
}

pub fn build_schedule(
    items: &[TrainItem],
    config: &CurriculumConfig,
    epochs: usize,
) -> Result<CurriculumSchedule, CurriculumError> {
    if config.batch_size == 0 {
        return Err(CurriculumError::ZeroBatchSize);
    }
    if config.lambda == 0 {
        return Err(CurriculumError::ZeroLambda);
    }
    if epochs == 0 {
        return Err(CurriculumError::ZeroEpochs);
    }
    if items.is_empty() {
        return Err(CurriculumError::NoItems);
    }
    let mut sorted = items.to_vec();
    sorted.sort_by(|a, b| {
        a.difficulty
            .cmp(&b.difficulty)
            .then_with(|| a.prefix_id.cmp(&b.prefix_id))
            .then_with(|| a.gold_sql.cmp(&b.gold_sql))
    });
    let batches: Vec<Batch> = sorted
        .chunks(config.batch_size)
        .enumerate()
        .map(|(batch_id, chunk)| Batch {
            batch_id,
            difficulty: chunk.iter().map(|i| i.difficulty).max().unwrap_or(0),
            item_ids: chunk.iter().map(|i| i.item_id.clone()).collect(),
        })
        .collect();
    let d_min = batches.iter().map(|b| b.difficulty).min().unwrap_or(0);
    let d_max = batches.iter().map(|b| b.difficulty).max().unwrap_or(0);
    let tau = d_max as i64 - d_min as i64 - config.m as i64;

    let plans = (0..epochs)
        .map(|epoch| {
            let (lower, upper) = pacing_interval(epoch, d_min, d_max, config.m, config.lambda, config.mode);
            let batch_ids: Vec<usize> = batches
                .iter()
                .filter(|b| (lower..=upper).contains(&(b.difficulty as i64)))
                .map(|b| b.batch_id)
                .collect();
            let mut feed_order = batch_ids.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
            feed_order.shuffle(&mut rng);
            EpochPlan {
                epoch,
                lower,
                upper,
                batch_ids,
                feed_order,
            }
        })
        .collect();

    Ok(CurriculumSchedule {
        config: config.clone(),
        d_min,
        d_max,
        tau,
        items: sorted,
        batches,
        epochs: plans,
    })
}
