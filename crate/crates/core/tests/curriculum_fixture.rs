mod common;

use common::*;
use prefixsql_core::curriculum::{build_schedule, flatten_pairs, pacing_interval, CurriculumConfig, PacingMode, TrainItem};
use prefixsql_core::splitter::SplitName;
use proptest::prelude::*;

fn config(mode: PacingMode) -> CurriculumConfig {
    CurriculumConfig {
        batch_size: 4,
        mode,
        ..CurriculumConfig::default()
    }
}

#[test]
fn defaults_are_lambda_one_m_two() {
    let c = CurriculumConfig::default();
    assert_eq!((c.lambda, c.m), (1, 2));
    assert_eq!(c.mode, PacingMode::PaperLiteral);
}

#[test]
fn item_counts_match_oracle() {
    let g = golden();
    let bench = provided_bench();
    for name in SplitName::ALL {
        let part = split_part(&bench, name);
        let items = flatten_pairs(&part).unwrap();
        let expected: usize = part.iter().map(|i| i.gold_count()).sum();
        assert_eq!(items.len(), expected);
        assert_eq!(items.len() as u64, g["item_counts"][name.as_str()].as_u64().unwrap());
    }
}

#[test]
fn schedule_matches_oracle_in_both_modes() {
    let g = golden();
    let train = split_part(&provided_bench(), SplitName::Train);
    let items = flatten_pairs(&train).unwrap();
    for (mode, key) in [(PacingMode::PaperLiteral, "paper_literal"), (PacingMode::Cumulative, "cumulative")] {
        let want = &g["schedules"][key];
        let s = build_schedule(&items, &config(mode), 8).unwrap();
        assert_eq!(s.d_min as i64, want["d_min"].as_i64().unwrap());
        assert_eq!(s.d_max as i64, want["d_max"].as_i64().unwrap());
        assert_eq!(s.items.len() as u64, want["n_items"].as_u64().unwrap());
        let diffs: Vec<i64> = s.batches.iter().map(|b| b.difficulty as i64).collect();
        let want_diffs: Vec<i64> = want["batch_difficulties"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_i64().unwrap())
            .collect();
        assert_eq!(diffs, want_diffs);
        for (plan, want) in s.epochs.iter().zip(want["epochs"].as_array().unwrap()) {
            let ids: Vec<u64> = plan.batch_ids.iter().map(|&b| b as u64).collect();
            let want_ids: Vec<u64> = want["batch_ids"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
            assert_eq!((plan.lower, plan.upper), (want["lower"].as_i64().unwrap(), want["upper"].as_i64().unwrap()));
            assert_eq!(ids, want_ids, "{key} epoch {}", plan.epoch);
            let mut fed = plan.feed_order.clone();
            fed.sort_unstable();
            assert_eq!(fed, plan.batch_ids);
        }
    }
}

#[test]
fn all_zero_difficulty_admits_everything() {
    let items: Vec<TrainItem> = (0..10)
        .map(|i| TrainItem {
            item_id: format!("p{i}#0"),
            prefix_id: format!("p{i}"),
            gold_sql: "SELECT 1".into(),
            difficulty: 0,
        })
        .collect();
    for mode in [PacingMode::PaperLiteral, PacingMode::Cumulative] {
        let s = build_schedule(&items, &config(mode), 5).unwrap();
        for plan in &s.epochs {
            assert_eq!(plan.batch_ids.len(), s.batches.len(), "epoch {}", plan.epoch);
        }
    }
}

#[test]
fn schedule_is_deterministic() {
    let train = split_part(&provided_bench(), SplitName::Train);
    let items = flatten_pairs(&train).unwrap();
    let a = build_schedule(&items, &config(PacingMode::Cumulative), 6).unwrap();
    let b = build_schedule(&items, &config(PacingMode::Cumulative), 6).unwrap();
    assert_eq!(a.to_json(), b.to_json());
}

/// The pacing function evaluated branch by branch from its definition.
fn reference(e: i64, d_min: i64, d_max: i64, m: i64, lambda: i64, cumulative: bool) -> (i64, i64) {
    let tau = d_max - d_min - m;
    if e == 0 {
        return (d_min, d_min + m);
    }
    if lambda * e < tau {
        let lower = if cumulative { d_min } else { d_min + m };
        return (lower, d_min + m + lambda * e);
    }
    (d_min, d_max)
}

proptest! {
    #[test]
    fn pacing_matches_reference(e in 0usize..40, d_min in 0u32..10, span in 0u32..30, m in 0u32..5, lambda in 1u32..4) {
        let d_max = d_min + span;
        for (mode, cumulative) in [(PacingMode::PaperLiteral, false), (PacingMode::Cumulative, true)] {
            prop_assert_eq!(
                pacing_interval(e, d_min, d_max, m, lambda, mode),
                reference(e as i64, d_min as i64, d_max as i64, m as i64, lambda as i64, cumulative)
            );
        }
    }

    #[test]
    fn cumulative_inclusion_is_monotone(diffs in proptest::collection::vec(0u32..12, 1..60), batch in 1usize..8, m in 0u32..4, lambda in 1u32..3) {
        let items: Vec<TrainItem> = diffs
            .iter()
            .enumerate()
            .map(|(i, &d)| TrainItem { item_id: format!("p{i:03}#0"), prefix_id: format!("p{i:03}"), gold_sql: "S".into(), difficulty: d })
            .collect();
        let cfg = CurriculumConfig { lambda, m, batch_size: batch, mode: PacingMode::Cumulative, seed: 1 };
        let s = build_schedule(&items, &cfg, 15).unwrap();
        for w in s.epochs.windows(2) {
            prop_assert!(w[0].batch_ids.iter().all(|b| w[1].batch_ids.contains(b)));
        }
        prop_assert_eq!(s.epochs.last().unwrap().batch_ids.len(), s.batches.len());
    }
}
