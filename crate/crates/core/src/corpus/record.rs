use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::preprocess::{extract_identifiers, CodePipelineConfig, TextPipeline};

/// UTC timestamp in whole seconds, written as ISO-8601 (`2018-03-13T09:06:55Z`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub const DAY: i64 = 86_400;

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
            return Some(Self(dt.timestamp()));
        }
        for fmt in ["%Y-%m-%d %H:%M:%S%:z", "%Y-%m-%d %H:%M:%S%z"] {
            if let Ok(dt) = DateTime::parse_from_str(s, fmt) {
                return Some(Self(dt.timestamp()));
            }
        }
        for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"] {
            if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
                return Some(Self(dt.and_utc().timestamp()));
            }
        }
        None
    }

    pub fn days_between(self, other: Timestamp) -> f64 {
        (self.0 - other.0).abs() as f64 / Self::DAY as f64
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match Utc.timestamp_opt(self.0, 0).single() {
            Some(dt) => write!(f, "{}", dt.format("%Y-%m-%dT%H:%M:%SZ")),
            None => write!(f, "{}", self.0),
        }
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match Value::deserialize(d)? {
            Value::String(s) => Timestamp::parse(&s)
                .ok_or_else(|| serde::de::Error::custom(format!("bad timestamp {s:?}"))),
            Value::Number(n) => n
                .as_i64()
                .map(Timestamp)
                .ok_or_else(|| serde::de::Error::custom("bad epoch seconds")),
            other => Err(serde::de::Error::custom(format!("bad timestamp {other}"))),
        }
    }
}

/// Ids show up as strings or bare numbers depending on the exporter.
fn id_string<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    match Value::deserialize(d)? {
        Value::String(s) => Ok(s),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(serde::de::Error::custom(format!("bad id {other}"))),
    }
}

fn opt_id_string<'de, D: Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
    Ok(match Value::deserialize(d)? {
        Value::String(s) if !s.trim().is_empty() => Some(s),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    })
}

fn null_as_empty<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    Ok(Option::<String>::deserialize(d)?.unwrap_or_default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueRecord {
    #[serde(deserialize_with = "id_string")]
    pub issue_id: String,
    #[serde(rename = "summary", default, deserialize_with = "null_as_empty")]
    pub raw_title: String,
    #[serde(rename = "description", default, deserialize_with = "null_as_empty")]
    pub raw_description: String,
    #[serde(rename = "summary_tokens", default, skip_serializing_if = "Vec::is_empty")]
    pub title_tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub description_tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub create_date: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub update_date: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_resolved_date: Option<Timestamp>,
    /// Fields not consumed here (comment, status, component, ...).
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl IssueRecord {
    pub fn new(issue_id: impl Into<String>, title: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            issue_id: issue_id.into(),
            raw_title: title.into(),
            raw_description: description.into(),
            title_tokens: Vec::new(),
            description_tokens: Vec::new(),
            create_date: None,
            update_date: None,
            last_resolved_date: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn preprocess(&mut self, text: &TextPipeline) {
        self.title_tokens = text.apply(&self.raw_title);
        self.description_tokens = text.apply(&self.raw_description);
    }

    /// Title tokens followed by description tokens.
    pub fn text_tokens(&self) -> impl Iterator<Item = &String> {
        self.title_tokens.iter().chain(&self.description_tokens)
    }

    /// Creation, update and resolution dates that are present.
    pub fn dates(&self) -> impl Iterator<Item = Timestamp> {
        [self.create_date, self.update_date, self.last_resolved_date]
            .into_iter()
            .flatten()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChangedFile {
    pub file_path: String,
    /// Basename without extension.
    pub file_name: String,
    pub diff_tokens: Vec<String>,
    pub source_tokens: Vec<String>,
    pub raw_diff: String,
    pub raw_source: String,
}

const SOURCE_EXTENSIONS: &[&str] = &[
    "java", "kt", "scala", "groovy", "py", "js", "jsx", "ts", "tsx", "c", "cc", "cpp", "cxx",
    "h", "hh", "hpp", "cs", "go", "rs", "rb", "php", "swift", "m", "mm",
];

impl ChangedFile {
    pub fn new(file_path: impl Into<String>, raw_diff: impl Into<String>) -> Self {
        let file_path = file_path.into();
        Self {
            file_name: file_name_of(&file_path),
            file_path,
            diff_tokens: Vec::new(),
            source_tokens: Vec::new(),
            raw_diff: raw_diff.into(),
            raw_source: String::new(),
        }
    }

    /// Whether the extension marks a source-code file.
    pub fn is_source(&self) -> bool {
        let base = self.file_path.rsplit(['/', '\\']).next().unwrap_or("");
        match base.rsplit_once('.') {
            Some((stem, ext)) if !stem.is_empty() => {
                SOURCE_EXTENSIONS.contains(&ext.to_ascii_lowercase().as_str())
            }
            _ => false,
        }
    }
}

/// `core/src/UnsynchronizedBuffer.java` -> `UnsynchronizedBuffer`.
pub fn file_name_of(path: &str) -> String {
    let base = path.rsplit(['/', '\\']).next().unwrap_or(path);
    match base.rsplit_once('.') {
        Some((stem, _)) if !stem.is_empty() => stem.to_string(),
        _ => base.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CommitLine", into = "CommitLine")]
pub struct CommitRecord {
    pub commit_id: String,
    pub raw_message: String,
    pub message_tokens: Vec<String>,
    pub changed_files: Vec<ChangedFile>,
    pub commit_time: Option<Timestamp>,
    pub tagged_issue_id: Option<String>,
    pub extra: BTreeMap<String, Value>,
}

impl CommitRecord {
    pub fn new(commit_id: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            commit_id: commit_id.into(),
            raw_message: message.into(),
            message_tokens: Vec::new(),
            changed_files: Vec::new(),
            commit_time: None,
            tagged_issue_id: None,
            extra: BTreeMap::new(),
        }
    }

    /// Tokenizes message and files. A missing `commit_issue_id` is filled
    /// from the first issue tag in the message.
    pub fn preprocess(&mut self, text: &TextPipeline, code: &CodePipelineConfig) {
        self.message_tokens = text.apply(&self.raw_message);
        if self.tagged_issue_id.is_none() {
            self.tagged_issue_id = text.issue_tags(&self.raw_message).into_iter().next();
        }
        for f in &mut self.changed_files {
            f.diff_tokens = extract_identifiers(&f.raw_diff, code);
            f.source_tokens = extract_identifiers(&f.raw_source, code);
        }
    }

    /// Diff tokens of all changed files, in file order.
    pub fn code_tokens(&self) -> impl Iterator<Item = &String> {
        self.changed_files.iter().flat_map(|f| f.diff_tokens.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FileTokens {
    #[serde(default)]
    diff_tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    source_tokens: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct CommitLine {
    #[serde(deserialize_with = "id_string")]
    commitid: String,
    #[serde(default, deserialize_with = "null_as_empty")]
    message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    commit_time_date: Option<Timestamp>,
    #[serde(default, deserialize_with = "opt_id_string", skip_serializing_if = "Option::is_none")]
    commit_issue_id: Option<String>,
    #[serde(default)]
    changed_files: Vec<String>,
    #[serde(rename = "Diff", default)]
    diff: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    codelist: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    message_tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    file_tokens: Vec<FileTokens>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

impl TryFrom<CommitLine> for CommitRecord {
    type Error = String;

    fn try_from(line: CommitLine) -> Result<Self, String> {
        if !line.file_tokens.is_empty() && line.file_tokens.len() != line.changed_files.len() {
            return Err("file_tokens does not match changed_files".into());
        }
        let changed_files = line
            .changed_files
            .iter()
            .enumerate()
            .map(|(i, path)| {
                let toks = line.file_tokens.get(i);
                ChangedFile {
                    file_path: path.clone(),
                    file_name: file_name_of(path),
                    diff_tokens: toks.map(|t| t.diff_tokens.clone()).unwrap_or_default(),
                    source_tokens: toks.map(|t| t.source_tokens.clone()).unwrap_or_default(),
                    raw_diff: line.diff.get(i).cloned().unwrap_or_default(),
                    raw_source: line.codelist.get(i).cloned().unwrap_or_default(),
                }
            })
            .collect();
        Ok(CommitRecord {
            commit_id: line.commitid,
            raw_message: line.message,
            message_tokens: line.message_tokens,
            changed_files,
            commit_time: line.commit_time_date,
            tagged_issue_id: line.commit_issue_id,
            extra: line.extra,
        })
    }
}

impl From<CommitRecord> for CommitLine {
    fn from(c: CommitRecord) -> Self {
        let has_tokens = c
            .changed_files
            .iter()
            .any(|f| !f.diff_tokens.is_empty() || !f.source_tokens.is_empty());
        let has_source = c.changed_files.iter().any(|f| !f.raw_source.is_empty());
        CommitLine {
            commitid: c.commit_id,
            message: c.raw_message,
            commit_time_date: c.commit_time,
            commit_issue_id: c.tagged_issue_id,
            changed_files: c.changed_files.iter().map(|f| f.file_path.clone()).collect(),
            diff: c.changed_files.iter().map(|f| f.raw_diff.clone()).collect(),
            codelist: if has_source {
                c.changed_files.iter().map(|f| f.raw_source.clone()).collect()
            } else {
                Vec::new()
            },
            message_tokens: c.message_tokens,
            file_tokens: if has_tokens {
                c.changed_files
                    .into_iter()
                    .map(|f| FileTokens {
                        diff_tokens: f.diff_tokens,
                        source_tokens: f.source_tokens,
                    })
                    .collect()
            } else {
                Vec::new()
            },
            extra: c.extra,
        }
    }
}

/// Where a link came from. Only tagged links are true links.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    TaggedTrue,
    GeneratedFalseSimilarity,
    GeneratedFalseTime,
}

/// One issue-commit pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "LinkLine", into = "LinkLine")]
pub struct LinkRecord {
    pub issue_id: String,
    pub commit_id: String,
    pub provenance: Provenance,
}

impl LinkRecord {
    pub fn new(issue_id: impl Into<String>, commit_id: impl Into<String>, provenance: Provenance) -> Self {
        Self {
            issue_id: issue_id.into(),
            commit_id: commit_id.into(),
            provenance,
        }
    }

    pub fn label(&self) -> u8 {
        u8::from(self.is_true())
    }

    pub fn is_true(&self) -> bool {
        self.provenance == Provenance::TaggedTrue
    }
}

#[derive(Serialize, Deserialize)]
struct LinkLine {
    issue_id: String,
    commitid: String,
    label: u8,
    provenance: Provenance,
}

impl TryFrom<LinkLine> for LinkRecord {
    type Error = String;

    fn try_from(l: LinkLine) -> Result<Self, String> {
        let link = LinkRecord::new(l.issue_id, l.commitid, l.provenance);
        if link.label() != l.label {
            return Err(format!("label {} contradicts provenance {:?}", l.label, l.provenance));
        }
        Ok(link)
    }
}

impl From<LinkRecord> for LinkLine {
    fn from(l: LinkRecord) -> Self {
        LinkLine {
            label: l.label(),
            issue_id: l.issue_id,
            commitid: l.commit_id,
            provenance: l.provenance,
        }
    }
}
