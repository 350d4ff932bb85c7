//! Canonical question generation.
//!
//! A SQL query is abstracted into the rule slot vocabulary (`{SELECT0}`,
//! `{FROM}`, `{COLUMNi}`, `{OPi}`, `{VALUEi}`, `{AGGi}`, `{SCi}`) and the
//! result is compared verbatim against each rule's `sql_template`. The first
//! rule by `rule_id` that matches supplies the question template.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::template::{tokenize_sql, SqlToken, TokenKind};

const BUNDLED_RULES: &str = include_str!("../rules/table5.json");

#[derive(Debug, Error)]
pub enum QuestionGenError {
    #[error("cannot read rules file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed rules file: {0}")]
    Parse(String),
    #[error("rule {rule_id}: {message}")]
    InvalidRule { rule_id: i64, message: String },
    #[error("duplicate rule_id {0}")]
    DuplicateRule(i64),
    #[error("binding has no value for slot {{{0}}}")]
    MissingSlot(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SlotKind {
    Select,
    From,
    Column,
    Op,
    Value,
    Agg,
    Sc,
}

impl SlotKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SlotKind::Select => "SELECT",
            SlotKind::From => "FROM",
            SlotKind::Column => "COLUMN",
            SlotKind::Op => "OP",
            SlotKind::Value => "VALUE",
            SlotKind::Agg => "AGG",
            SlotKind::Sc => "SC",
        }
    }

    fn indexed(self) -> bool {
        self != SlotKind::From
    }
}

/// A slot name such as `COLUMN1` or `FROM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Slot {
    pub kind: SlotKind,
    pub index: Option<usize>,
}

impl Slot {
    fn new(kind: SlotKind, index: usize) -> Self {
        Self {
            kind,
            index: kind.indexed().then_some(index),
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "{}{i}", self.kind.as_str()),
            None => f.write_str(self.kind.as_str()),
        }
    }
}

impl FromStr for Slot {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        const KINDS: [SlotKind; 7] = [
            SlotKind::Select,
            SlotKind::From,
            SlotKind::Column,
            SlotKind::Op,
            SlotKind::Value,
            SlotKind::Agg,
            SlotKind::Sc,
        ];
        for kind in KINDS {
            let Some(rest) = s.strip_prefix(kind.as_str()) else {
                continue;
            };
            if !kind.indexed() {
                if rest.is_empty() {
                    return Ok(Slot { kind, index: None });
                }
                continue;
            }
            if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
                let index = rest.parse().map_err(|_| format!("bad slot index in {s}"))?;
                return Ok(Slot::new(kind, index));
            }
        }
        Err(format!("unknown slot {{{s}}}"))
    }
}

/// Slot names appearing in `template`, in order of first appearance.
pub fn template_slots(template: &str) -> Result<Vec<Slot>, String> {
    let mut slots = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| format!("unclosed slot in {template:?}"))?;
        let slot: Slot = after[..close].parse()?;
        if !slots.contains(&slot) {
            slots.push(slot);
        }
        rest = &after[close + 1..];
    }
    Ok(slots)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalRule {
    pub rule_id: i64,
    pub sql_template: String,
    pub question_template: String,
    #[serde(skip)]
    slots: Vec<Slot>,
}

impl CanonicalRule {
    pub fn new(
        rule_id: i64,
        sql_template: impl Into<String>,
        question_template: impl Into<String>,
    ) -> Result<Self, QuestionGenError> {
        let mut rule = Self {
            rule_id,
            sql_template: sql_template.into(),
            question_template: question_template.into(),
            slots: Vec::new(),
        };
        rule.validate()?;
        Ok(rule)
    }

    fn validate(&mut self) -> Result<(), QuestionGenError> {
        let invalid = |message: String| QuestionGenError::InvalidRule {
            rule_id: self.rule_id,
            message,
        };
        let sql_slots = template_slots(&self.sql_template).map_err(invalid)?;
        let question_slots = template_slots(&self.question_template).map_err(invalid)?;
        if let Some(missing) = question_slots
            .iter()
            .find(|s| s.kind != SlotKind::From && !sql_slots.contains(s))
        {
            return Err(invalid(format!(
                "question slot {{{missing}}} does not occur in the SQL template"
            )));
        }
        self.slots = sql_slots;
        Ok(())
    }

    /// Slots of the SQL template in first-appearance order.
    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn slot_kinds(&self) -> BTreeSet<SlotKind> {
        self.slots.iter().map(|s| s.kind).collect()
    }
}

/// Parses a rules file body and returns the rules sorted by `rule_id`.
pub fn parse_rules(text: &str) -> Result<Vec<CanonicalRule>, QuestionGenError> {
    let raw: Vec<CanonicalRule> =
        serde_json::from_str(text).map_err(|e| QuestionGenError::Parse(e.to_string()))?;
    let mut rules = Vec::with_capacity(raw.len());
    let mut seen = BTreeSet::new();
    for mut rule in raw {
        if !seen.insert(rule.rule_id) {
            return Err(QuestionGenError::DuplicateRule(rule.rule_id));
        }
        rule.validate()?;
        rules.push(rule);
    }
    rules.sort_by_key(|r| r.rule_id);
    Ok(rules)
}

pub fn load_rules(path: &Path) -> Result<Vec<CanonicalRule>, QuestionGenError> {
    let text = std::fs::read_to_string(path).map_err(|source| QuestionGenError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_rules(&text)
}

/// The fifteen bundled rules.
pub fn default_rules() -> Vec<CanonicalRule> {
    parse_rules(BUNDLED_RULES).expect("bundled rules are valid")
}

pub type SlotBinding = BTreeMap<String, String>;

/// A SQL query rewritten into the slot vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Abstraction {
    pub template: String,
    pub binding: SlotBinding,
    /// True when a SELECT list holds more than one column or an aggregate.
    pub composite_select: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RuleMatch<'a> {
    pub rule: &'a CanonicalRule,
    pub binding: SlotBinding,
    pub composite_select: bool,
}

#[derive(Default)]
struct Counters {
    next: BTreeMap<SlotKind, usize>,
}

impl Counters {
    fn take(&mut self, kind: SlotKind) -> Slot {
        let n = self.next.entry(kind).or_insert(0);
        let slot = Slot::new(kind, *n);
        *n += 1;
        slot
    }
}

const CLAUSE_KEYWORDS: &[&str] = &[
    "WHERE",
    "GROUP",
    "HAVING",
    "ORDER",
    "LIMIT",
    "INTERSECT",
    "UNION",
    "EXCEPT",
];
const AGGREGATES: &[&str] = &["COUNT", "MAX", "MIN", "AVG", "SUM"];
const COMPARISONS: &[&str] = &["=", ">", "<", ">=", "<=", "!=", "<>"];

struct Abstractor<'t> {
    tokens: &'t [SqlToken],
    pos: usize,
    out: Vec<String>,
    binding: SlotBinding,
    counters: Counters,
    composite: bool,
}

type Step = Option<()>;

impl<'t> Abstractor<'t> {
    fn peek(&self) -> Option<&'t SqlToken> {
        self.tokens.get(self.pos)
    }

    fn peek_keyword(&self, word: &str) -> bool {
        self.peek().is_some_and(|t| t.is_keyword(word))
    }

    fn peek_text(&self, text: &str) -> bool {
        self.peek().is_some_and(|t| t.text == text)
    }

    fn bump(&mut self) -> Option<&'t SqlToken> {
        let t = self.tokens.get(self.pos)?;
        self.pos += 1;
        Some(t)
    }

    fn expect_keyword(&mut self, word: &str) -> Step {
        if self.peek_keyword(word) {
            self.pos += 1;
            self.out.push(word.to_string());
            Some(())
        } else {
            None
        }
    }

    fn expect_text(&mut self, text: &str) -> Step {
        if self.peek_text(text) {
            self.pos += 1;
            self.out.push(text.to_string());
            Some(())
        } else {
            None
        }
    }

    fn emit(&mut self, kind: SlotKind, surface: String) {
        let slot = self.counters.take(kind);
        let name = slot.to_string();
        self.out.push(format!("{{{name}}}"));
        self.binding.entry(name).or_insert(surface);
    }

    fn at_clause_end(&self, depth: usize) -> bool {
        match self.peek() {
            None => true,
            Some(t) => {
                depth == 0
                    && (t.text == ")"
                        || (t.kind == TokenKind::Keyword
                            && CLAUSE_KEYWORDS.contains(&t.text.as_str())))
            }
        }
    }

    /// Consumes tokens until `stop` holds at parenthesis depth zero.
    fn span_until(&mut self, stop: impl Fn(&Self) -> bool) -> Option<&'t [SqlToken]> {
        let start = self.pos;
        let mut depth = 0usize;
        loop {
            if depth == 0 && stop(self) {
                break;
            }
            let t = self.bump()?;
            if t.text == "(" {
                depth += 1;
            } else if t.text == ")" {
                depth = depth.checked_sub(1)?;
            }
        }
        (self.pos > start).then(|| &self.tokens[start..self.pos])
    }

    fn query(&mut self) -> Step {
        self.select_core()?;
        while let Some(op) = ["INTERSECT", "UNION", "EXCEPT"]
            .into_iter()
            .find(|k| self.peek_keyword(k))
        {
            self.expect_keyword(op)?;
            self.select_core()?;
        }
        Some(())
    }

    fn select_core(&mut self) -> Step {
        if !self.peek_keyword("SELECT") {
            return None;
        }
        self.pos += 1;
        let list = self.span_until(|a| a.peek_keyword("FROM"))?;
        if list.len() > 1 {
            self.composite = true;
        }
        self.emit(SlotKind::Select, surface(list));
        self.pos += 1;
        let from = self.span_until(|a| a.at_clause_end(0))?;
        self.emit(SlotKind::From, surface(from));

        if self.peek_keyword("WHERE") {
            self.expect_keyword("WHERE")?;
            self.condition()?;
            while self.peek_keyword("AND") || self.peek_keyword("OR") {
                let word = self.bump()?.text.clone();
                self.out.push(word);
                self.condition()?;
            }
        }
        if self.peek_keyword("GROUP") {
            self.expect_keyword("GROUP")?;
            self.expect_keyword("BY")?;
            self.column()?;
            while self.peek_text(",") {
                self.expect_text(",")?;
                self.column()?;
            }
        }
        if self.peek_keyword("HAVING") {
            self.expect_keyword("HAVING")?;
            self.having_condition()?;
            while self.peek_keyword("AND") || self.peek_keyword("OR") {
                let word = self.bump()?.text.clone();
                self.out.push(word);
                self.having_condition()?;
            }
        }
        if self.peek_keyword("ORDER") {
            self.expect_keyword("ORDER")?;
            self.expect_keyword("BY")?;
            self.order_item()?;
            while self.peek_text(",") {
                self.expect_text(",")?;
                self.order_item()?;
            }
        }
        if self.peek_keyword("LIMIT") {
            self.expect_keyword("LIMIT")?;
            self.value()?;
        }
        Some(())
    }

    fn column(&mut self) -> Step {
        let t = self.peek()?;
        if t.kind != TokenKind::Identifier {
            return None;
        }
        self.pos += 1;
        self.emit(SlotKind::Column, t.normalized_text());
        Some(())
    }

    fn value(&mut self) -> Step {
        let t = self.peek()?;
        let surface = match t.kind {
            TokenKind::StringLiteral => unquote(&t.text),
            TokenKind::NumberLiteral => t.text.clone(),
            _ => return None,
        };
        self.pos += 1;
        self.emit(SlotKind::Value, surface);
        Some(())
    }

    fn operator(&mut self) -> Step {
        let t = self.peek()?;
        if t.kind == TokenKind::Operator && COMPARISONS.contains(&t.text.as_str()) {
            self.pos += 1;
            self.emit(SlotKind::Op, t.text.clone());
            return Some(());
        }
        if t.is_keyword("LIKE") || t.is_keyword("IN") {
            self.pos += 1;
            self.emit(SlotKind::Op, t.text.clone());
            return Some(());
        }
        if t.is_keyword("NOT") {
            let next = self.tokens.get(self.pos + 1)?;
            if next.is_keyword("LIKE") {
                self.pos += 2;
                self.emit(SlotKind::Op, "NOT LIKE".to_string());
                return Some(());
            }
        }
        None
    }

    fn subquery(&mut self) -> Step {
        self.expect_text("(")?;
        self.query()?;
        self.expect_text(")")
    }

    fn operand(&mut self) -> Step {
        let t = self.peek()?;
        match t.kind {
            TokenKind::StringLiteral | TokenKind::NumberLiteral => self.value(),
            TokenKind::Identifier => self.column(),
            _ if t.text == "(" => self.subquery(),
            _ => None,
        }
    }

    fn condition(&mut self) -> Step {
        self.column()?;
        if self.peek_keyword("NOT") && self.tokens.get(self.pos + 1)?.is_keyword("IN") {
            self.expect_keyword("NOT")?;
            self.expect_keyword("IN")?;
            return self.subquery();
        }
        if self.peek_keyword("BETWEEN") {
            self.expect_keyword("BETWEEN")?;
            self.value()?;
            self.expect_keyword("AND")?;
            return self.value();
        }
        self.operator()?;
        self.operand()
    }

    fn aggregate(&mut self) -> Step {
        let t = self.peek()?;
        if !(t.kind == TokenKind::Keyword && AGGREGATES.contains(&t.text.as_str())) {
            return None;
        }
        self.pos += 1;
        self.emit(SlotKind::Agg, t.text.clone());
        self.expect_text("(")?;
        if self.peek_text("*") {
            self.expect_text("*")?;
        } else {
            if self.peek_keyword("DISTINCT") {
                self.expect_keyword("DISTINCT")?;
            }
            self.column()?;
        }
        self.expect_text(")")
    }

    fn having_condition(&mut self) -> Step {
        self.aggregate()?;
        self.operator()?;
        self.value()
    }

    fn order_item(&mut self) -> Step {
        let t = self.peek()?;
        if t.kind == TokenKind::Keyword && AGGREGATES.contains(&t.text.as_str()) {
            self.aggregate()?;
        } else {
            self.column()?;
        }
        if self.peek_keyword("ASC") || self.peek_keyword("DESC") {
            let sc = self.bump()?.text.clone();
            self.emit(SlotKind::Sc, sc);
        }
        Some(())
    }
}

fn unquote(literal: &str) -> String {
    let mut chars = literal.chars();
    let Some(q) = chars.next() else {
        return String::new();
    };
    let inner = &literal[q.len_utf8()..literal.len() - q.len_utf8()];
    let doubled: String = [q, q].iter().collect();
    inner.replace(&doubled, &q.to_string())
}

/// Joins tokens with spacing suited to prose: none inside parentheses or
/// before commas.
fn surface(tokens: &[SqlToken]) -> String {
    let mut s = String::new();
    let mut prev: Option<String> = None;
    for t in tokens {
        let text = t.normalized_text();
        let glue = match prev.as_deref() {
            None | Some("(") => true,
            Some(p) => {
                text == ")" || text == "," || (text == "(" && AGGREGATES.contains(&p))
            }
        };
        if !glue {
            s.push(' ');
        }
        s.push_str(&text);
        prev = Some(text);
    }
    s
}

/// Rewrites `sql` into the slot vocabulary, or `None` when it falls outside
/// the supported clause shapes.
pub fn abstract_sql(sql: &str) -> Option<Abstraction> {
    let mut tokens = tokenize_sql(sql).ok()?;
    if tokens.last().is_some_and(|t| t.text == ";") {
        tokens.pop();
    }
    let mut a = Abstractor {
        tokens: &tokens,
        pos: 0,
        out: Vec::new(),
        binding: SlotBinding::new(),
        counters: Counters::default(),
        composite: false,
    };
    a.query()?;
    if a.pos != tokens.len() {
        return None;
    }
    let composite = a.composite
        || a
            .binding
            .iter()
            .any(|(k, v)| k.starts_with("SELECT") && (v.contains(',') || v.contains('(')));
    Some(Abstraction {
        template: a.out.join(" "),
        binding: a.binding,
        composite_select: composite,
    })
}

/// Finds the first rule, by `rule_id`, whose SQL template equals the
/// abstraction of `sql`. The binding is restricted to that rule's slots.
pub fn match_rule<'a>(sql: &str, rules: &'a [CanonicalRule]) -> Option<RuleMatch<'a>> {
    let abstraction = abstract_sql(sql)?;
    let rule = rules
        .iter()
        .filter(|r| r.sql_template == abstraction.template)
        .min_by_key(|r| r.rule_id)?;
    let binding = rule
        .slots()
        .iter()
        .filter_map(|slot| {
            let name = slot.to_string();
            abstraction.binding.get(&name).map(|v| (name, v.clone()))
        })
        .collect();
    Some(RuleMatch {
        rule,
        binding,
        composite_select: abstraction.composite_select,
    })
}

/// How `{OPi}` surfaces are written into questions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpStyle {
    /// Operators keep their SQL symbol.
    Literal,
    Words(BTreeMap<String, String>),
}

impl OpStyle {
    pub fn words() -> Self {
        let map = [
            (">", "is greater than"),
            ("<", "is less than"),
            ("=", "is"),
            ("!=", "is not"),
            ("<>", "is not"),
            (">=", "is at least"),
            ("<=", "is at most"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        OpStyle::Words(map)
    }

    fn render(&self, op: &str) -> String {
        match self {
            OpStyle::Literal => op.to_string(),
            OpStyle::Words(map) => map
                .get(op)
                .cloned()
                .unwrap_or_else(|| op.to_lowercase()),
        }
    }
}

impl Default for OpStyle {
    fn default() -> Self {
        OpStyle::words()
    }
}

/// Substitutes `binding` into the rule's question template and collapses
/// runs of whitespace.
pub fn render_question(
    rule: &CanonicalRule,
    binding: &SlotBinding,
    style: &OpStyle,
) -> Result<String, QuestionGenError> {
    let template = &rule.question_template;
    let mut out = String::with_capacity(template.len());
    let mut rest = template.as_str();
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}').ok_or_else(|| QuestionGenError::InvalidRule {
            rule_id: rule.rule_id,
            message: "unclosed slot in question template".into(),
        })?;
        let name = &after[..close];
        let value = binding
            .get(name)
            .ok_or_else(|| QuestionGenError::MissingSlot(name.to_string()))?;
        if name.starts_with("OP") {
            out.push_str(&style.render(value));
        } else {
            out.push_str(value);
        }
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out.split_whitespace().collect::<Vec<_>>().join(" "))
}

/// Renders the canonical question for `sql`, if any rule matches.
pub fn canonical_question(sql: &str, rules: &[CanonicalRule], style: &OpStyle) -> Option<String> {
    let m = match_rule(sql, rules)?;
    render_question(m.rule, &m.binding, style).ok()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coverage {
    pub matched: usize,
    pub total: usize,
    pub fraction: f64,
    pub per_rule: BTreeMap<i64, usize>,
}

/// Fraction of the corpus SQLs matched by some rule.
pub fn coverage_report(corpus: &Corpus, rules: &[CanonicalRule]) -> Coverage {
    let mut per_rule = BTreeMap::new();
    let mut matched = 0;
    for example in &corpus.examples {
        if let Some(m) = match_rule(&example.gold_sql, rules) {
            matched += 1;
            *per_rule.entry(m.rule.rule_id).or_insert(0) += 1;
        }
    }
    let total = corpus.examples.len();
    let fraction = if total == 0 {
        0.0
    } else {
        matched as f64 / total as f64
    };
    Coverage {
        matched,
        total,
        fraction,
        per_rule,
    }
}
