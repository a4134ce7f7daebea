//! Issue and commit records, link records, project loading and splitting.
//!
//! On disk a project is a directory holding `issues.jsonl` and `commits.jsonl`,
//! one JSON object per line, using the issue-tracker / VCS field names
//! (`issue_id`, `summary`, `description`, `create_date`, `commitid`,
//! `message`, `commit_issue_id`, `changed_files`, `Diff`, `codelist`, ...).
//! Fields this crate does not consume are carried through untouched.
//! Preprocessed files are the same objects with token fields added.

mod record;
mod split;
mod synth;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use record::{
    file_name_of, ChangedFile, CommitRecord, IssueRecord, LinkRecord, Provenance, Timestamp,
};
pub use split::{split_links, SplitSpec, Splits};
pub use synth::{generate_synthetic_corpus, SyntheticCorpus, SynthConfig};

use crate::error::{Error, Result};
use crate::preprocess::{CodePipelineConfig, TextPipeline, TextPipelineConfig};

pub const ISSUES_FILE: &str = "issues.jsonl";
pub const COMMITS_FILE: &str = "commits.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RecordFormat {
    /// Raw text; token fields are computed at load time.
    #[default]
    Raw,
    /// Token fields already present and trusted.
    Preprocessed,
}

/// How to read a project's record files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Schema {
    pub format: RecordFormat,
    pub text: TextPipelineConfig,
    pub code: CodePipelineConfig,
}

impl Schema {
    pub fn preprocessed() -> Self {
        Self {
            format: RecordFormat::Preprocessed,
            ..Default::default()
        }
    }
}

/// Per-file load statistics. `loaded + malformed + rejected == lines`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct FileReport {
    pub lines: usize,
    pub loaded: usize,
    /// Unparseable lines or lines missing a required field.
    pub malformed: usize,
    /// Well-formed records failing a record invariant (duplicate id, no tokens, ...).
    pub rejected: usize,
}

impl FileReport {
    pub fn skipped(&self) -> usize {
        self.malformed + self.rejected
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct LoadReport {
    pub issues: FileReport,
    pub commits: FileReport,
}

#[derive(Debug, Clone)]
pub struct Project {
    pub issues: Vec<IssueRecord>,
    pub commits: Vec<CommitRecord>,
    pub report: LoadReport,
}

/// Loads `issues.jsonl` and `commits.jsonl` from a project directory.
pub fn load_project(dir: &Path, schema: &Schema) -> Result<Project> {
    schema.code.validate()?;
    let text = schema.text.build()?;
    let (issues, ir) = load_issues(&dir.join(ISSUES_FILE), schema, &text)?;
    let (commits, cr) = load_commits(&dir.join(COMMITS_FILE), schema, &text)?;
    Ok(Project {
        issues,
        commits,
        report: LoadReport {
            issues: ir,
            commits: cr,
        },
    })
}

/// Writes a project directory in the same line format `load_project` reads.
pub fn save_project(dir: &Path, issues: &[IssueRecord], commits: &[CommitRecord]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(&dir.join(ISSUES_FILE), issues)?;
    write_jsonl(&dir.join(COMMITS_FILE), commits)?;
    Ok(())
}

enum LineOutcome<T> {
    Keep(T),
    Malformed,
    Rejected,
}

fn load_lines<T: DeserializeOwned>(
    path: &Path,
    mut accept: impl FnMut(T) -> LineOutcome<T>,
) -> Result<(Vec<T>, FileReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut report = FileReport::default();
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        match serde_json::from_str::<T>(&line).map(&mut accept) {
            Ok(LineOutcome::Keep(rec)) => {
                report.loaded += 1;
                out.push(rec);
            }
            Ok(LineOutcome::Rejected) => report.rejected += 1,
            Ok(LineOutcome::Malformed) | Err(_) => report.malformed += 1,
        }
    }
    if report.lines == 0 {
        return Err(Error::InvalidInput(format!("{}: no records", path.display())));
    }
    if report.malformed * 2 > report.lines {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            malformed: report.malformed,
            total: report.lines,
        });
    }
    Ok((out, report))
}

pub fn load_issues(
    path: &Path,
    schema: &Schema,
    text: &TextPipeline,
) -> Result<(Vec<IssueRecord>, FileReport)> {
    let mut seen = std::collections::HashSet::new();
    load_lines(path, |mut issue: IssueRecord| {
        if issue.issue_id.trim().is_empty() {
            return LineOutcome::Malformed;
        }
        if schema.format == RecordFormat::Raw {
            issue.preprocess(text);
        }
        let ordered = match (issue.create_date, issue.update_date) {
            (Some(c), Some(u)) => c <= u,
            _ => true,
        };
        let has_tokens = !(issue.title_tokens.is_empty() && issue.description_tokens.is_empty());
        if !ordered || !has_tokens || !seen.insert(issue.issue_id.clone()) {
            return LineOutcome::Rejected;
        }
        LineOutcome::Keep(issue)
    })
}

pub fn load_commits(
    path: &Path,
    schema: &Schema,
    text: &TextPipeline,
) -> Result<(Vec<CommitRecord>, FileReport)> {
    let mut seen = std::collections::HashSet::new();
    load_lines(path, |mut commit: CommitRecord| {
        if commit.commit_id.trim().is_empty() {
            return LineOutcome::Malformed;
        }
        if schema.format == RecordFormat::Raw {
            commit.preprocess(text, &schema.code);
        }
        if !seen.insert(commit.commit_id.clone()) {
            return LineOutcome::Rejected;
        }
        LineOutcome::Keep(commit)
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a JSONL file produced by this crate; any malformed line is an error.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (no, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidInput(format!("{}:{}: {e}", path.display(), no + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Reads a link file. Unlike record files, link files are produced by this
/// crate, so any malformed line is an error.
pub fn read_links(path: &Path) -> Result<Vec<LinkRecord>> {
    read_jsonl(path)
}

pub fn write_links(path: &Path, links: &[LinkRecord]) -> Result<()> {
    write_jsonl(path, links)
}

/// Records of one project with id lookup.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub issues: Vec<IssueRecord>,
    pub commits: Vec<CommitRecord>,
    issue_index: HashMap<String, usize>,
    commit_index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(issues: Vec<IssueRecord>, commits: Vec<CommitRecord>) -> Self {
        let issue_index = issues
            .iter()
            .enumerate()
            .map(|(i, r)| (r.issue_id.clone(), i))
            .collect();
        let commit_index = commits
            .iter()
            .enumerate()
            .map(|(i, r)| (r.commit_id.clone(), i))
            .collect();
        Self {
            issues,
            commits,
            issue_index,
            commit_index,
        }
    }

    pub fn load(dir: &Path, schema: &Schema) -> Result<(Self, LoadReport)> {
        let p = load_project(dir, schema)?;
        Ok((Self::new(p.issues, p.commits), p.report))
    }

    pub fn issue(&self, id: &str) -> Option<&IssueRecord> {
        self.issue_index.get(id).map(|&i| &self.issues[i])
    }

    pub fn commit(&self, id: &str) -> Option<&CommitRecord> {
        self.commit_index.get(id).map(|&i| &self.commits[i])
    }

    pub fn issue_pos(&self, id: &str) -> Option<usize> {
        self.issue_index.get(id).copied()
    }

    pub fn commit_pos(&self, id: &str) -> Option<usize> {
        self.commit_index.get(id).copied()
    }

    /// Looks up both ends of a link, failing with a message naming the missing id.
    pub fn resolve(&self, link: &LinkRecord) -> Result<(&IssueRecord, &CommitRecord)> {
        let issue = self
            .issue(&link.issue_id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown issue {}", link.issue_id)))?;
        let commit = self
            .commit(&link.commit_id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown commit {}", link.commit_id)))?;
        Ok((issue, commit))
    }
}

/// Returns `path` if it exists, else a [`Error::MissingArtifact`] naming `stage`.
pub fn require_artifact(path: PathBuf, stage: &'static str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact { stage, path })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) {
        let mut f = File::create(dir.join(name)).unwrap();
        f.write_all(body.as_bytes()).unwrap();
    }

    const COMMITS: &str = r#"{"commitid":"c1","message":"[CALCITE-1] Fix it","commit_time_date":"2018-03-14T09:06:55Z","changed_files":["core/src/Foo.java"],"Diff":["+ int fooBar = 1;"]}
"#;

    #[test]
    fn malformed_issue_lines_are_skipped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            ISSUES_FILE,
            r#"{"issue_id":"CALCITE-1","summary":"Planner crash","description":"Rule fires twice","create_date":"2018-03-13 09:06:55+00:00"}
{"issue_id":"CALCITE-2","summary":"Add FLOOR support","comment":"kept as is"}
{"summary":"no id here"}
"#,
        );
        write(dir.path(), COMMITS_FILE, COMMITS);
        let p = load_project(dir.path(), &Schema::default()).unwrap();
        assert_eq!(p.issues.len(), 2);
        assert_eq!(p.report.issues.lines, 3);
        assert_eq!(p.report.issues.skipped(), 1);
        assert_eq!(p.report.issues.loaded + p.report.issues.skipped(), 3);
        assert_eq!(p.issues[0].title_tokens, ["planner", "crash"]);
        assert_eq!(p.issues[1].extra["comment"], "kept as is");
        assert_eq!(p.commits[0].tagged_issue_id.as_deref(), Some("CALCITE-1"));
        assert_eq!(p.commits[0].changed_files[0].file_name, "Foo");
        assert_eq!(p.commits[0].changed_files[0].diff_tokens, ["foo", "bar"]);
    }

    #[test]
    fn empty_file_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), ISSUES_FILE, "");
        write(dir.path(), COMMITS_FILE, COMMITS);
        assert!(load_project(dir.path(), &Schema::default()).is_err());
    }

    #[test]
    fn missing_file_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_project(dir.path(), &Schema::default()),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn mostly_malformed_file_signals_wrong_schema() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            ISSUES_FILE,
            "{\"issue_id\":\"A-1\",\"summary\":\"ok title\"}\nnot json\n{\"id\":3}\n",
        );
        write(dir.path(), COMMITS_FILE, COMMITS);
        assert!(matches!(
            load_project(dir.path(), &Schema::default()),
            Err(Error::Schema { malformed: 2, total: 3, .. })
        ));
    }

    #[test]
    fn issue_invariants_reject_records() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            ISSUES_FILE,
            r#"{"issue_id":"A-1","summary":"valid title"}
{"issue_id":"A-1","summary":"duplicate id"}
{"issue_id":"A-2","summary":"the of and","description":""}
{"issue_id":"A-3","summary":"time travel","create_date":"2020-01-02T00:00:00Z","update_date":"2020-01-01T00:00:00Z"}
{"issue_id":"A-4","summary":"","description":"only description words"}
"#,
        );
        write(dir.path(), COMMITS_FILE, COMMITS);
        let p = load_project(dir.path(), &Schema::default()).unwrap();
        let ids: Vec<_> = p.issues.iter().map(|i| i.issue_id.as_str()).collect();
        assert_eq!(ids, ["A-1", "A-4"]);
        assert_eq!(p.report.issues.rejected, 3);
        assert_eq!(p.report.issues.malformed, 0);
    }

    #[test]
    fn preprocessed_round_trip_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let synth = generate_synthetic_corpus(&SynthConfig {
            n_issues: 12,
            seed: 3,
            overlap: 0.5,
            ..Default::default()
        })
        .unwrap();
        let raw = tempfile::tempdir().unwrap();
        save_project(raw.path(), &synth.issues, &synth.commits).unwrap();
        let loaded = load_project(raw.path(), &Schema::default()).unwrap();
        save_project(dir.path(), &loaded.issues, &loaded.commits).unwrap();
        let again = load_project(dir.path(), &Schema::preprocessed()).unwrap();
        assert_eq!(loaded.issues, again.issues);
        assert_eq!(loaded.commits, again.commits);
    }

    #[test]
    fn link_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("links.jsonl");
        let links = vec![
            LinkRecord::new("A-1", "c1", Provenance::TaggedTrue),
            LinkRecord::new("A-2", "c1", Provenance::GeneratedFalseTime),
        ];
        write_links(&path, &links).unwrap();
        assert_eq!(read_links(&path).unwrap(), links);
    }
}
