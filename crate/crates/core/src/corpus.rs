//! Data model and ingestion for text-to-SQL corpora.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::splitter::SplitName;
use crate::template::{extract_template, normalize_sql, TokenizeError};

/// Tag marking examples annotated as unusable in the source dataset.
pub const EXCLUDE_TAG: &str = "exclude";
/// Prefix of the tag carrying an upstream split assignment, e.g. `split:train`.
pub const SPLIT_TAG_PREFIX: &str = "split:";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Integrity { line: usize, message: String },
    #[error("schema: {0}")]
    Schema(String),
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Text,
    Number,
    Time,
    Boolean,
    Other,
}

impl ColumnType {
    pub fn parse(raw: &str) -> Self {
        match raw.to_ascii_lowercase().as_str() {
            "text" => ColumnType::Text,
            "number" => ColumnType::Number,
            "time" => ColumnType::Time,
            "boolean" => ColumnType::Boolean,
            _ => ColumnType::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub column_type: ColumnType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
}

/// A `table.column` reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    fn parse(raw: &str) -> Option<Self> {
        let (table, column) = raw.split_once('.')?;
        if table.is_empty() || column.is_empty() {
            return None;
        }
        Some(Self {
            table: table.to_string(),
            column: column.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaDoc {
    pub database_id: String,
    pub tables: Vec<Table>,
    pub foreign_keys: Vec<(ColumnRef, ColumnRef)>,
}

impl SchemaDoc {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    fn has_column(&self, r: &ColumnRef) -> bool {
        self.table(&r.table)
            .is_some_and(|t| t.columns.iter().any(|c| c.name == r.column))
    }
}

#[derive(Deserialize)]
struct SchemaFile {
    databases: Vec<SchemaRecord>,
}

#[derive(Deserialize)]
struct SchemaRecord {
    database_id: String,
    #[serde(default)]
    tables: Vec<TableRecord>,
    #[serde(default)]
    foreign_keys: Vec<(String, String)>,
}

#[derive(Deserialize)]
struct TableRecord {
    name: String,
    #[serde(default)]
    columns: Vec<ColumnRecord>,
}

#[derive(Deserialize)]
struct ColumnRecord {
    name: String,
    #[serde(rename = "type", default)]
    column_type: String,
}

impl SchemaRecord {
    fn into_doc(self) -> Result<SchemaDoc, CorpusError> {
        let db = self.database_id;
        let mut tables = Vec::with_capacity(self.tables.len());
        let mut table_names = BTreeSet::new();
        for t in self.tables {
            if !table_names.insert(t.name.clone()) {
                return Err(CorpusError::Schema(format!("{db}: duplicate table {}", t.name)));
            }
            let mut column_names = BTreeSet::new();
            let mut columns = Vec::with_capacity(t.columns.len());
            for c in t.columns {
                if !column_names.insert(c.name.clone()) {
                    return Err(CorpusError::Schema(format!(
                        "{db}: duplicate column {}.{}",
                        t.name, c.name
                    )));
                }
                columns.push(Column {
                    column_type: ColumnType::parse(&c.column_type),
                    name: c.name,
                });
            }
            tables.push(Table { name: t.name, columns });
        }
        let mut doc = SchemaDoc {
            database_id: db,
            tables,
            foreign_keys: Vec::new(),
        };
        for (from, to) in self.foreign_keys {
            let endpoints = (ColumnRef::parse(&from), ColumnRef::parse(&to));
            let (Some(f), Some(t)) = endpoints else {
                return Err(CorpusError::Schema(format!(
                    "{}: malformed foreign key {from} -> {to}",
                    doc.database_id
                )));
            };
            for end in [&f, &t] {
                if !doc.has_column(end) {
                    return Err(CorpusError::Schema(format!(
                        "{}: foreign key endpoint {}.{} does not exist",
                        doc.database_id, end.table, end.column
                    )));
                }
            }
            doc.foreign_keys.push((f, t));
        }
        Ok(doc)
    }
}

pub fn parse_schemas(json: &str) -> Result<BTreeMap<String, SchemaDoc>, CorpusError> {
    let file: SchemaFile =
        serde_json::from_str(json).map_err(|e| CorpusError::Schema(e.to_string()))?;
    let mut out = BTreeMap::new();
    for record in file.databases {
        let doc = record.into_doc()?;
        if out.contains_key(&doc.database_id) {
            return Err(CorpusError::Schema(format!(
                "duplicate database_id {}",
                doc.database_id
            )));
        }
        out.insert(doc.database_id.clone(), doc);
    }
    Ok(out)
}

pub fn load_schemas(path: &Path) -> Result<BTreeMap<String, SchemaDoc>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    parse_schemas(&text)
}

/// One complete question with its gold SQL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub example_id: String,
    pub database_id: String,
    pub question_tokens: Vec<String>,
    pub gold_sql: String,
    /// `gold_sql` after exact-match normalization.
    pub normalized_sql: String,
    pub sql_template: String,
    pub tags: BTreeSet<String>,
}

impl Example {
    /// Builds an example, deriving the normalized SQL and template.
    pub fn new(
        example_id: impl Into<String>,
        database_id: impl Into<String>,
        question_tokens: Vec<String>,
        gold_sql: impl Into<String>,
        tags: BTreeSet<String>,
    ) -> Result<Self, String> {
        let gold_sql = gold_sql.into();
        if question_tokens.is_empty() {
            return Err("question has no tokens".into());
        }
        if question_tokens.iter().any(String::is_empty) {
            return Err("question contains an empty token".into());
        }
        if gold_sql.trim().is_empty() {
            return Err("gold_sql is empty".into());
        }
        let describe = |e: TokenizeError| format!("gold_sql does not tokenize: {e}");
        let normalized_sql = normalize_sql(&gold_sql).map_err(describe)?;
        let sql_template = extract_template(&gold_sql).map_err(describe)?.template_string;
        Ok(Self {
            example_id: example_id.into(),
            database_id: database_id.into(),
            question_tokens,
            gold_sql,
            normalized_sql,
            sql_template,
            tags,
        })
    }

    pub fn is_excluded(&self) -> bool {
        self.tags.contains(EXCLUDE_TAG)
    }

    /// Complete question as a single space-joined, lowercased string.
    pub fn question_key(&self) -> String {
        self.question_tokens.join(" ").to_lowercase()
    }

    /// Upstream split carried by a `split:<name>` tag, if any.
    pub fn provided_split(&self) -> Option<Result<SplitName, String>> {
        self.tags
            .iter()
            .find_map(|t| t.strip_prefix(SPLIT_TAG_PREFIX))
            .map(|name| name.parse())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub name: String,
    pub schemas: BTreeMap<String, SchemaDoc>,
    pub examples: Vec<Example>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    #[default]
    CanonicalJsonl,
}

/// One line of the canonical JSONL corpus format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub example_id: String,
    pub database_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_tokens: Option<Vec<String>>,
    pub gold_sql: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<String>>,
}

impl CorpusRecord {
    fn into_example(self) -> Result<Example, String> {
        let tokens = match (self.question_tokens, self.question) {
            (Some(tokens), _) => tokens,
            (None, Some(raw)) => tokenize_question(&raw),
            (None, None) => return Err("record has neither question nor question_tokens".into()),
        };
        let tags = self.tags.unwrap_or_default().into_iter().collect();
        Example::new(self.example_id, self.database_id, tokens, self.gold_sql, tags)
    }
}

impl From<&Example> for CorpusRecord {
    fn from(e: &Example) -> Self {
        Self {
            example_id: e.example_id.clone(),
            database_id: e.database_id.clone(),
            question: None,
            question_tokens: Some(e.question_tokens.clone()),
            gold_sql: e.gold_sql.clone(),
            tags: (!e.tags.is_empty()).then(|| e.tags.iter().cloned().collect()),
        }
    }
}

impl Corpus {
    /// Parses canonical JSONL text. Blank lines are skipped; line numbers are 1-based.
    pub fn parse_jsonl(
        name: impl Into<String>,
        text: &str,
        schemas: BTreeMap<String, SchemaDoc>,
    ) -> Result<Self, CorpusError> {
        let mut examples = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let record: CorpusRecord = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            let example = record.into_example().map_err(|message| CorpusError::Parse {
                line: line_no,
                message,
            })?;
            if let Some(first) = seen.get(&example.example_id) {
                return Err(CorpusError::Integrity {
                    line: line_no,
                    message: format!(
                        "duplicate example_id {:?} (first seen on line {first})",
                        example.example_id
                    ),
                });
            }
            if !schemas.contains_key(&example.database_id) {
                return Err(CorpusError::Integrity {
                    line: line_no,
                    message: format!("unknown database_id {:?}", example.database_id),
                });
            }
            seen.insert(example.example_id.clone(), line_no);
            examples.push(example);
        }
        Ok(Self {
            name: name.into(),
            schemas,
            examples,
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.examples {
            out.push_str(&serde_json::to_string(&CorpusRecord::from(e)).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn example(&self, id: &str) -> Option<&Example> {
        self.examples.iter().find(|e| e.example_id == id)
    }

    /// Copy of this corpus keeping only examples for which `keep` holds, in order.
    pub fn retain_examples(&self, keep: impl Fn(&Example) -> bool) -> Corpus {
        Corpus {
            name: self.name.clone(),
            schemas: self.schemas.clone(),
            examples: self.examples.iter().filter(|e| keep(e)).cloned().collect(),
        }
    }
}

/// Loads a corpus file. The corpus name is the file stem.
pub fn load_corpus(
    path: &Path,
    format: CorpusFormat,
    schemas: BTreeMap<String, SchemaDoc>,
) -> Result<Corpus, CorpusError> {
    let CorpusFormat::CanonicalJsonl = format;
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Corpus::parse_jsonl(name, &text, schemas)
}

/// Drops every example tagged `exclude`, keeping relative order.
pub fn filter_excluded(corpus: &Corpus) -> Corpus {
    corpus.retain_examples(|e| !e.is_excluded())
}

const SPLIT_PUNCT: &[char] = &['?', ',', '.', '!', ';', ':'];

/// Lowercases, splits on whitespace and peels leading/trailing `?,.!;:` into
/// their own tokens.
pub fn tokenize_question(raw: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in raw.split_whitespace() {
        let lowered = chunk.to_lowercase();
        let core_start = lowered
            .char_indices()
            .find(|(_, c)| !SPLIT_PUNCT.contains(c))
            .map(|(i, _)| i);
        let Some(start) = core_start else {
            tokens.extend(lowered.chars().map(String::from));
            continue;
        };
        let end = lowered
            .char_indices()
            .rev()
            .find(|(_, c)| !SPLIT_PUNCT.contains(c))
            .map(|(i, c)| i + c.len_utf8())
            .expect("a non-punctuation char exists");
        tokens.extend(lowered[..start].chars().map(String::from));
        tokens.push(lowered[start..end].to_string());
        tokens.extend(lowered[end..].chars().map(String::from));
    }
    tokens
}
