//! Building blocks for the prefix-to-SQL task: corpus ingestion, SQL
//! templates, dataset splits, prefix benchmark construction, Recall/MRR/SAVE
//! scoring, curriculum schedules, retrieval baselines and canonical question
//! generation.

pub mod baselines;
pub mod corpus;
pub mod curriculum;
pub mod digest;
pub mod jsonl;
pub mod metrics;
pub mod prefixbench;
pub mod questiongen;
pub mod splitter;
pub mod template;
