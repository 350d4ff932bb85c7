mod common;

use common::*;
use prefixsql_core::questiongen::{
    coverage_report, default_rules, match_rule, render_question, CanonicalRule, OpStyle, SlotBinding,
};
use prefixsql_core::template::tokenize_sql;
use serde_json::Value;

fn golden_rows() -> Vec<Value> {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/table5_questions.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn every_rule_renders_its_golden_question() {
    let rules = default_rules();
    let corpus = table5_shaped();
    let rows = golden_rows();
    assert_eq!(rows.len(), 15);
    let mut covered = std::collections::BTreeSet::new();
    for row in &rows {
        let id = row["example_id"].as_str().unwrap();
        let sql = &corpus.example(id).unwrap().gold_sql;
        let m = match_rule(sql, &rules).unwrap_or_else(|| panic!("{id} did not match"));
        assert_eq!(m.rule.rule_id, row["rule_id"].as_i64().unwrap(), "{id}");
        let want: SlotBinding = serde_json::from_value(row["binding"].clone()).unwrap();
        let mut got = m.binding.clone();
        got.remove("FROM");
        assert_eq!(got, want, "{id}");
        assert_eq!(render_question(m.rule, &m.binding, &OpStyle::words()).unwrap(), row["words"].as_str().unwrap());
        assert_eq!(render_question(m.rule, &m.binding, &OpStyle::Literal).unwrap(), row["literal"].as_str().unwrap());
        covered.insert(m.rule.rule_id);
    }
    assert_eq!(covered.len(), 15);
}

#[test]
fn binding_covers_exactly_rule_slots() {
    let rules = default_rules();
    for e in &table5_shaped().examples {
        let m = match_rule(&e.gold_sql, &rules).unwrap();
        let names: Vec<String> = m.rule.slots().iter().map(|s| s.to_string()).collect();
        let keys: Vec<String> = m.binding.keys().cloned().collect();
        let mut names_sorted = names.clone();
        names_sorted.sort();
        assert_eq!(keys, names_sorted, "{}", e.example_id);
    }
}

#[test]
fn table5_shaped_coverage_is_total() {
    let cov = coverage_report(&table5_shaped(), &default_rules());
    assert_eq!(cov.fraction, 1.0);
    assert_eq!(cov.per_rule.len(), 15);
    assert!(cov.per_rule.values().all(|&n| n == 1));
}

#[test]
fn empty_rule_list_covers_nothing() {
    assert_eq!(coverage_report(&table5_shaped(), &[]).fraction, 0.0);
}

#[test]
fn mini_geo_coverage() {
    // g09 nests a filtered subquery, which no bundled rule describes
    let cov = coverage_report(&mini_geo(), &default_rules());
    assert_eq!((cov.matched, cov.total), (11, 12));
}

#[test]
fn trailing_never_matching_rule_changes_nothing() {
    let rules = default_rules();
    let mut extended = rules.clone();
    extended.push(CanonicalRule::new(1000, "{SELECT0} {FROM} LIMIT {VALUE0} LIMIT {VALUE1}", "never").unwrap());
    for e in table5_shaped().examples.iter().chain(&mini_geo().examples) {
        let a = match_rule(&e.gold_sql, &rules).map(|m| (m.rule.rule_id, m.binding));
        let b = match_rule(&e.gold_sql, &extended).map(|m| (m.rule.rule_id, m.binding));
        assert_eq!(a, b);
    }
}

#[test]
fn rendered_questions_keep_value_surfaces() {
    let rules = default_rules();
    for e in &table5_shaped().examples {
        let m = match_rule(&e.gold_sql, &rules).unwrap();
        let q = render_question(m.rule, &m.binding, &OpStyle::words()).unwrap();
        let words: Vec<String> = tokenize_sql(&q)
            .map(|t| t.into_iter().map(|t| t.text).collect())
            .unwrap_or_else(|_| q.split_whitespace().map(String::from).collect());
        for (slot, value) in &m.binding {
            if slot.starts_with("VALUE") {
                assert!(q.contains(value.as_str()) && words.iter().any(|w| w == value), "{slot}={value} lost in {q:?}");
            }
        }
    }
}

#[test]
fn rule_five_shape() {
    let rules = default_rules();
    let rule = rules.iter().find(|r| r.rule_id == 5).unwrap();
    let binding: SlotBinding = [("SELECT0", "name"), ("COLUMN0", "city"), ("VALUE0", "3"), ("AGG0", "COUNT"), ("SC0", "DESC")]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let q = render_question(rule, &binding, &OpStyle::words()).unwrap();
    assert!(q.starts_with("What city are the top 3 "), "{q}");
}
