//! SQL tokenization, exact-match normalization and value anonymization.
//!
//! Processing is token-level only. There is no grammar: malformed model
//! output must be judged, not rejected, so the only hard failure is an
//! unterminated quote.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved words recognised as keywords. Matching is case-insensitive.
pub const KEYWORDS: &[&str] = &[
    "SELECT",
    "FROM",
    "WHERE",
    "GROUP",
    "BY",
    "HAVING",
    "ORDER",
    "LIMIT",
    "AND",
    "OR",
    "NOT",
    "IN",
    "INTERSECT",
    "UNION",
    "EXCEPT",
    "AS",
    "ON",
    "JOIN",
    "DISTINCT",
    "COUNT",
    "MAX",
    "MIN",
    "AVG",
    "SUM",
    "ASC",
    "DESC",
    "BETWEEN",
    "LIKE",
];

const TWO_CHAR_OPERATORS: &[&str] = &[">=", "<=", "!=", "<>", "||"];
const ONE_CHAR_OPERATORS: &[char] = &['=', '>', '<', '+', '-', '*', '/', '%'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Keyword,
    Identifier,
    StringLiteral,
    NumberLiteral,
    Operator,
    Punctuation,
}

impl TokenKind {
    pub fn is_literal(self) -> bool {
        matches!(self, TokenKind::StringLiteral | TokenKind::NumberLiteral)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SqlToken {
    pub text: String,
    pub kind: TokenKind,
}

impl SqlToken {
    fn new(text: impl Into<String>, kind: TokenKind) -> Self {
        Self {
            text: text.into(),
            kind,
        }
    }

    pub fn is_keyword(&self, word: &str) -> bool {
        self.kind == TokenKind::Keyword && self.text == word
    }

    /// Token text as it appears in normalized output.
    pub fn normalized_text(&self) -> String {
        match self.kind {
            TokenKind::Keyword => self.text.to_uppercase(),
            TokenKind::Identifier => self.text.to_lowercase(),
            _ => self.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenizeError {
    #[error("empty SQL")]
    Empty,
    #[error("unterminated {quote} quote starting at byte {offset}")]
    UnterminatedQuote { quote: char, offset: usize },
}

fn is_keyword(word: &str) -> bool {
    KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(word))
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '.' || c == '$'
}

/// Splits `sql` into classified tokens.
///
/// Quoted strings (single or double quotes, doubled quote as escape) become
/// one `StringLiteral` token that keeps its quotes. Keywords are uppercased;
/// everything else keeps its source text.
pub fn tokenize_sql(sql: &str) -> Result<Vec<SqlToken>, TokenizeError> {
    if sql.trim().is_empty() {
        return Err(TokenizeError::Empty);
    }
    let chars: Vec<(usize, char)> = sql.char_indices().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (offset, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '\'' || c == '"' {
            let mut j = i + 1;
            let mut closed = false;
            while j < chars.len() {
                if chars[j].1 == c {
                    if j + 1 < chars.len() && chars[j + 1].1 == c {
                        j += 2;
                        continue;
                    }
                    closed = true;
                    break;
                }
                j += 1;
            }
            if !closed {
                return Err(TokenizeError::UnterminatedQuote { quote: c, offset });
            }
            let end = chars[j].0 + c.len_utf8();
            tokens.push(SqlToken::new(&sql[offset..end], TokenKind::StringLiteral));
            i = j + 1;
            continue;
        }
        if c.is_ascii_digit() {
            let mut j = i + 1;
            while j < chars.len() && chars[j].1.is_ascii_digit() {
                j += 1;
            }
            if j + 1 < chars.len() && chars[j].1 == '.' && chars[j + 1].1.is_ascii_digit() {
                j += 1;
                while j < chars.len() && chars[j].1.is_ascii_digit() {
                    j += 1;
                }
            }
            let end = chars.get(j).map_or(sql.len(), |&(o, _)| o);
            tokens.push(SqlToken::new(&sql[offset..end], TokenKind::NumberLiteral));
            i = j;
            continue;
        }
        if is_ident_start(c) {
            let mut j = i + 1;
            while j < chars.len() && is_ident_continue(chars[j].1) {
                j += 1;
            }
            let end = chars.get(j).map_or(sql.len(), |&(o, _)| o);
            let word = &sql[offset..end];
            if is_keyword(word) {
                tokens.push(SqlToken::new(word.to_uppercase(), TokenKind::Keyword));
            } else {
                tokens.push(SqlToken::new(word, TokenKind::Identifier));
            }
            i = j;
            continue;
        }
        if i + 1 < chars.len() {
            let end = chars[i + 1].0 + chars[i + 1].1.len_utf8();
            let pair = &sql[offset..end];
            if TWO_CHAR_OPERATORS.contains(&pair) {
                tokens.push(SqlToken::new(pair, TokenKind::Operator));
                i += 2;
                continue;
            }
        }
        let kind = if ONE_CHAR_OPERATORS.contains(&c) {
            TokenKind::Operator
        } else {
            TokenKind::Punctuation
        };
        tokens.push(SqlToken::new(c.to_string(), kind));
        i += 1;
    }
    Ok(tokens)
}

fn join_normalized(tokens: &[SqlToken]) -> String {
    let mut out = String::new();
    for (idx, token) in tokens.iter().enumerate() {
        if idx > 0 {
            out.push(' ');
        }
        out.push_str(&token.normalized_text());
    }
    out
}

/// Canonical form used for exact-match judging.
///
/// Keywords uppercase, identifiers lowercase, literals byte-exact, one space
/// between tokens. Two queries match iff their normalized strings are equal.
pub fn normalize_sql(sql: &str) -> Result<String, TokenizeError> {
    tokenize_sql(sql).map(|tokens| join_normalized(&tokens))
}

/// Exact-match equality. Untokenizable input never matches anything.
pub fn sql_exact_match(a: &str, b: &str) -> bool {
    match (normalize_sql(a), normalize_sql(b)) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SlotKind {
    Value,
}

impl fmt::Display for SlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotKind::Value => f.write_str("VALUE"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SqlTemplate {
    pub template_string: String,
    pub slot_count: BTreeMap<SlotKind, usize>,
}

impl SqlTemplate {
    pub fn value_slots(&self) -> usize {
        self.slot_count.get(&SlotKind::Value).copied().unwrap_or(0)
    }
}

impl fmt::Display for SqlTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.template_string)
    }
}

/// Normalizes `sql` and replaces every literal with `{VALUEi}`, numbered
/// left to right from 0.
pub fn extract_template(sql: &str) -> Result<SqlTemplate, TokenizeError> {
    let tokens = tokenize_sql(sql)?;
    let mut values = 0usize;
    let mut parts = Vec::with_capacity(tokens.len());
    for token in &tokens {
        if token.kind.is_literal() {
            parts.push(format!("{{{}{}}}", SlotKind::Value, values));
            values += 1;
        } else {
            parts.push(token.normalized_text());
        }
    }
    let mut slot_count = BTreeMap::new();
    if values > 0 {
        slot_count.insert(SlotKind::Value, values);
    }
    Ok(SqlTemplate {
        template_string: parts.join(" "),
        slot_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kinds(sql: &str) -> Vec<TokenKind> {
        tokenize_sql(sql).unwrap().into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn classifies_simple_query() {
        use TokenKind::*;
        assert_eq!(
            kinds("SELECT name FROM city WHERE pop > 100"),
            vec![Keyword, Identifier, Keyword, Identifier, Keyword, Identifier, Operator, NumberLiteral]
        );
    }

    #[test]
    fn lowercase_keywords_still_keywords() {
        let tokens = tokenize_sql("select * from t").unwrap();
        assert_eq!(tokens[0], SqlToken::new("SELECT", TokenKind::Keyword));
        assert_eq!(tokens[2], SqlToken::new("FROM", TokenKind::Keyword));
    }

    #[test]
    fn unterminated_quote_is_an_error() {
        assert!(matches!(
            tokenize_sql("WHERE name = 'New"),
            Err(TokenizeError::UnterminatedQuote { quote: '\'', .. })
        ));
        assert_eq!(tokenize_sql("   "), Err(TokenizeError::Empty));
    }

    #[test]
    fn quoted_strings_are_single_tokens() {
        let tokens = tokenize_sql(r#"x = 'new york' OR y = "it''s" OR z = 'o''neil'"#).unwrap();
        let literals: Vec<_> = tokens
            .iter()
            .filter(|t| t.kind == TokenKind::StringLiteral)
            .map(|t| t.text.as_str())
            .collect();
        assert_eq!(literals, vec!["'new york'", "\"it''s\"", "'o''neil'"]);
    }

    #[test]
    fn operators_and_numbers() {
        let tokens = tokenize_sql("a>=1.5 AND b<>2 AND c != 3").unwrap();
        let texts: Vec<_> = tokens.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, vec!["a", ">=", "1.5", "AND", "b", "<>", "2", "AND", "c", "!=", "3"]);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_sql("select  name from T").unwrap(), "SELECT name FROM t");
        assert_ne!(
            normalize_sql("SELECT name FROM t WHERE s = 'Texas'").unwrap(),
            normalize_sql("SELECT name FROM t WHERE s = 'texas'").unwrap()
        );
        assert_eq!(
            normalize_sql("SELECT count(*) FROM T1.x").unwrap(),
            "SELECT COUNT ( * ) FROM t1.x"
        );
    }

    #[test]
    fn exact_match_rejects_untokenizable() {
        assert!(!sql_exact_match("SELECT 'a", "SELECT 'a"));
        assert!(sql_exact_match("select a from b", "SELECT A FROM B"));
    }

    #[test]
    fn template_examples() {
        let t = extract_template("SELECT capital FROM state WHERE state_name = 'texas'").unwrap();
        assert_eq!(t.template_string, "SELECT capital FROM state WHERE state_name = {VALUE0}");
        assert_eq!(t.value_slots(), 1);

        let t = extract_template("SELECT x FROM t WHERE pop > 100 AND area < 5").unwrap();
        assert_eq!(t.template_string, "SELECT x FROM t WHERE pop > {VALUE0} AND area < {VALUE1}");
        assert_eq!(t.value_slots(), 2);

        let t = extract_template("SELECT x FROM t").unwrap();
        assert!(t.slot_count.is_empty());
    }

    fn sql_fragment() -> impl Strategy<Value = String> {
        prop::collection::vec(
            prop_oneof![
                Just("SELECT".to_string()),
                Just("from".to_string()),
                Just("Where".to_string()),
                "[a-zA-Z_][a-zA-Z0-9_.]{0,6}".prop_map(|s| s),
                "[0-9]{1,4}(\\.[0-9]{1,2})?".prop_map(|s| s),
                "'[a-zA-Z ]{0,6}'".prop_map(|s| s),
                Just(">=".to_string()),
                Just("=".to_string()),
                Just("(".to_string()),
                Just(")".to_string()),
                Just(",".to_string()),
                Just("*".to_string()),
            ],
            1..12,
        )
        .prop_map(|parts| parts.join(" "))
    }

    fn literal() -> impl Strategy<Value = String> {
        prop_oneof!["'[a-zA-Z ]{0,8}'", "[0-9]{1,5}"]
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(sql in sql_fragment()) {
            let once = normalize_sql(&sql).unwrap();
            prop_assert_eq!(normalize_sql(&once).unwrap(), once);
        }

        #[test]
        fn template_invariant_under_literal_substitution(
            a in "'[a-z]{1,6}'", b in "'[A-Za-z ]{0,6}'",
            n in "[0-9]{1,4}", m in "[0-9]{1,4}(\\.[0-9])?",
        ) {
            let left = format!("SELECT c FROM t WHERE x = {a} AND y > {n}");
            let right = format!("SELECT c FROM t WHERE x = {b} AND y > {m}");
            prop_assert_eq!(extract_template(&left).unwrap(), extract_template(&right).unwrap());
        }

        #[test]
        fn template_has_no_literals(sql in sql_fragment(), lit in literal()) {
            let sql = format!("{sql} {lit}");
            let template = extract_template(&sql).unwrap();
            let literal_count = tokenize_sql(&sql).unwrap().iter().filter(|t| t.kind.is_literal()).count();
            prop_assert_eq!(template.value_slots(), literal_count);
            prop_assert!(!template.template_string.contains('\''));
        }

        #[test]
        fn exact_match_is_an_equivalence(a in sql_fragment(), b in sql_fragment(), c in sql_fragment()) {
            prop_assert!(sql_exact_match(&a, &a));
            prop_assert_eq!(sql_exact_match(&a, &b), sql_exact_match(&b, &a));
            if sql_exact_match(&a, &b) && sql_exact_match(&b, &c) {
                prop_assert!(sql_exact_match(&a, &c));
            }
        }
    }
}
