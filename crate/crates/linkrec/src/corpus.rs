//! Corpus ingestion: exported issues and commits, filtering heuristics,
//! true-link mining, and scrubbed retrieval documents/queries.
//!
//! Input is line-delimited JSON (one record object per line, UTF-8,
//! ISO-8601 UTC timestamps); see `docs/export-recipe.md` for producing the
//! commit file from a plain `git log` export. Unknown fields (e.g. raw
//! diffs) are accepted and ignored.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::ops::Range;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::retrieval::tokenize;
use crate::time::Timestamp;
use crate::Result;

/// An issue report; the retrieval query source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueRecord {
    pub project_id: String,
    /// Tracker identifier, e.g. `SPARK-123` or `#4521`. Unique per project.
    pub issue_key: String,
    pub title: String,
    pub description: String,
    pub reporter: String,
    pub assignee: Option<String>,
    pub created_at: Timestamp,
    pub closed_at: Option<Timestamp>,
    pub status: String,
}

impl IssueRecord {
    /// `closed_at` if it is present and not earlier than `created_at`.
    ///
    /// Records with a closure before creation are kept (noise should not
    /// silently delete issues) but their closure is ignored for window
    /// purposes and counted in the data-quality report.
    pub fn usable_closed_at(&self) -> Option<Timestamp> {
        self.closed_at.filter(|c| *c >= self.created_at)
    }
}

/// How a file was touched by a commit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeType {
    Added,
    Removed,
    Modified,
}

impl ChangeType {
    pub fn as_str(self) -> &'static str {
        match self {
            ChangeType::Added => "added",
            ChangeType::Removed => "removed",
            ChangeType::Modified => "modified",
        }
    }
}

impl fmt::Display for ChangeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One changed file within a commit, with the names of its changed methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileChange {
    pub path: String,
    pub change_type: ChangeType,
    #[serde(default)]
    pub methods: Vec<String>,
}

/// A commit; the retrieval document source.
///
/// `committed_at` is the committer timestamp (when the change entered the
/// repository), not the author timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub project_id: String,
    /// Hex hash, at least 7 characters; unique per project.
    pub hash: String,
    pub author: String,
    pub committed_at: Timestamp,
    pub message: String,
    #[serde(default)]
    pub parents: Vec<String>,
    #[serde(default)]
    pub file_changes: Vec<FileChange>,
}

/// Provenance of a mined true link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkSource {
    ExplicitKey,
}

/// A mined ground-truth (issue, commit) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueLink {
    pub project_id: String,
    pub issue_key: String,
    pub commit_hash: String,
    pub source: LinkSource,
}

/// A retrieval document built from a commit: scrubbed message plus one
/// structured code-term line per file change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    /// The commit hash.
    pub doc_id: String,
    pub text: String,
    pub token_count: usize,
}

/// Issue-key convention of a project's tracker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyStyle {
    /// `KEY-123` with a configured set of project keys.
    Jira,
    /// `#123` references.
    Github,
}

/// Compiled issue-key matcher for one project.
///
/// Jira matching is case-insensitive on the key and anchored at word
/// boundaries, so `MYKAFKA-123` does not match key `KAFKA`. GitHub `#123`
/// references must not be preceded by a word character.
#[derive(Debug, Clone)]
pub struct KeyPattern {
    style: KeyStyle,
    regex: Regex,
}

impl KeyPattern {
    pub fn new(style: KeyStyle, project_keys: &[String]) -> Result<Self> {
        let regex = match style {
            KeyStyle::Jira => {
                if project_keys.is_empty() {
                    return Err(Error::Config(
                        "jira-style projects need a non-empty `keys` list".into(),
                    ));
                }
                let alternation = project_keys
                    .iter()
                    .map(|k| regex::escape(k))
                    .collect::<Vec<_>>()
                    .join("|");
                Regex::new(&format!(r"\b(?i:{alternation})-\d+\b")).map_err(|e| {
                    Error::Config(format!("invalid project keys {project_keys:?}: {e}"))
                })?
            }
            KeyStyle::Github => Regex::new(r"#\d+\b").expect("static pattern"),
        };
        Ok(KeyPattern { style, regex })
    }

    pub fn style(&self) -> KeyStyle {
        self.style
    }

    /// Non-overlapping match ranges in text order, with the canonical key
    /// for each match (Jira keys are uppercased).
    pub fn match_ranges(&self, text: &str) -> Vec<(Range<usize>, String)> {
        self.regex
            .find_iter(text)
            .filter(|m| match self.style {
                KeyStyle::Jira => true,
                // The regex crate has no look-behind; reject `x#12`-style
                // matches preceded by a word character here instead.
                KeyStyle::Github => !text[..m.start()]
                    .chars()
                    .next_back()
                    .is_some_and(|c| c.is_alphanumeric() || c == '_'),
            })
            .map(|m| {
                let key = match self.style {
                    KeyStyle::Jira => m.as_str().to_uppercase(),
                    KeyStyle::Github => m.as_str().to_string(),
                };
                (m.range(), key)
            })
            .collect()
    }
}

/// Per-file ingestion statistics for the data-quality report.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestStats {
    pub lines: usize,
    pub parsed: usize,
    pub skipped: usize,
    /// Issues whose closure precedes creation; kept, but their closure is
    /// ignored for window purposes.
    pub closed_before_created: usize,
    /// One `line N: reason` entry per skipped or flagged record.
    pub warnings: Vec<String>,
}

impl IngestStats {
    fn warn(&mut self, line_no: usize, reason: impl fmt::Display) {
        let msg = format!("line {line_no}: {reason}");
        log::warn!("{msg}");
        self.warnings.push(msg);
    }
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = std::io::Result<String>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file).lines())
}

#[derive(Deserialize)]
struct RawIssue {
    project_id: Option<String>,
    issue_key: Option<String>,
    title: Option<String>,
    description: Option<String>,
    reporter: Option<String>,
    assignee: Option<String>,
    created_at: Option<Timestamp>,
    // Kept as a raw value so one unparseable closure does not reject the
    // whole record; it is flagged instead.
    closed_at: Option<serde_json::Value>,
    status: Option<String>,
}

/// Ingest a line-delimited issue file.
///
/// Records missing `issue_key`, `project_id`, or `created_at` are rejected
/// and counted; duplicate keys within a project keep the first occurrence.
/// An unreadable file is fatal.
pub fn ingest_issues(path: &Path) -> Result<(Vec<IssueRecord>, IngestStats)> {
    let mut stats = IngestStats::default();
    let mut records = Vec::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();

    for (idx, line) in open_lines(path)?.enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        stats.lines += 1;

        let raw: RawIssue = match serde_json::from_str(&line) {
            Ok(raw) => raw,
            Err(e) => {
                stats.skipped += 1;
                stats.warn(line_no, format_args!("malformed issue record: {e}"));
                continue;
            }
        };
        let Some(created_at) = raw.created_at else {
            stats.skipped += 1;
            stats.warn(line_no, "missing created_at");
            continue;
        };
        let (project_id, issue_key) = match (raw.project_id, raw.issue_key) {
            (Some(p), Some(k)) if !k.is_empty() => (p, k),
            _ => {
                stats.skipped += 1;
                stats.warn(line_no, "missing or empty issue_key/project_id");
                continue;
            }
        };
        if !seen.insert((project_id.clone(), issue_key.clone())) {
            stats.skipped += 1;
            stats.warn(
                line_no,
                format_args!("duplicate issue_key {issue_key:?} in project {project_id:?}"),
            );
            continue;
        }

        let closed_at = match raw.closed_at {
            None | Some(serde_json::Value::Null) => None,
            Some(serde_json::Value::String(s)) => match Timestamp::parse(&s) {
                Ok(ts) => Some(ts),
                Err(e) => {
                    stats.warn(line_no, format_args!("ignoring closed_at: {e}"));
                    None
                }
            },
            Some(other) => {
                stats.warn(line_no, format_args!("ignoring non-string closed_at {other}"));
                None
            }
        };
        if closed_at.is_some_and(|c| c < created_at) {
            stats.closed_before_created += 1;
            stats.warn(
                line_no,
                format_args!("{issue_key}: closed_at precedes created_at; closure ignored for windows"),
            );
        }

        records.push(IssueRecord {
            project_id,
            issue_key,
            title: raw.title.unwrap_or_default(),
            description: raw.description.unwrap_or_default(),
            reporter: raw.reporter.unwrap_or_default(),
            assignee: raw.assignee,
            created_at,
            closed_at,
            status: raw.status.unwrap_or_default(),
        });
        stats.parsed += 1;
    }
    Ok((records, stats))
}

#[derive(Deserialize)]
struct RawCommit {
    project_id: Option<String>,
    hash: Option<String>,
    author: Option<String>,
    committed_at: Option<Timestamp>,
    message: Option<String>,
    #[serde(default)]
    parents: Vec<String>,
    #[serde(default)]
    file_changes: Vec<FileChange>,
}

fn valid_hash(hash: &str) -> bool {
    hash.len() >= 7 && hash.chars().all(|c| c.is_ascii_hexdigit())
}

/// Ingest a line-delimited commit file. `hash` (hex, >= 7 chars),
/// `project_id`, and `committed_at` are required.
pub fn ingest_commits(path: &Path) -> Result<(Vec<CommitRecord>, IngestStats)> {
    let mut stats = IngestStats::default();
    let mut records = Vec::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();

    for (idx, line) in open_lines(path)?.enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        stats.lines += 1;

        let raw: RawCommit = match serde_json::from_str(&line) {
            Ok(raw) => raw,
            Err(e) => {
                stats.skipped += 1;
                stats.warn(line_no, format_args!("malformed commit record: {e}"));
                continue;
            }
        };
        let (project_id, hash, committed_at) = match (raw.project_id, raw.hash, raw.committed_at) {
            (Some(p), Some(h), Some(t)) => (p, h, t),
            _ => {
                stats.skipped += 1;
                stats.warn(line_no, "missing project_id/hash/committed_at");
                continue;
            }
        };
        if !valid_hash(&hash) {
            stats.skipped += 1;
            stats.warn(line_no, format_args!("invalid hash {hash:?} (need >= 7 hex chars)"));
            continue;
        }
        if !seen.insert((project_id.clone(), hash.clone())) {
            stats.skipped += 1;
            stats.warn(line_no, format_args!("duplicate hash {hash:?} in project {project_id:?}"));
            continue;
        }

        records.push(CommitRecord {
            project_id,
            hash,
            author: raw.author.unwrap_or_default(),
            committed_at,
            message: raw.message.unwrap_or_default(),
            parents: raw.parents,
            file_changes: raw.file_changes,
        });
        stats.parsed += 1;
    }
    Ok((records, stats))
}

/// Keep only commits with at most one parent (drops merge commits) and at
/// least one file change. Relative order is preserved; idempotent.
pub fn filter_commits(commits: Vec<CommitRecord>) -> Vec<CommitRecord> {
    commits
        .into_iter()
        .filter(|c| c.parents.len() <= 1 && !c.file_changes.is_empty())
        .collect()
}

/// Mine true links from explicit issue-key mentions in raw commit messages.
///
/// Every distinct (key, hash) pair is one link, so one commit mentioning
/// several issues links to all of them. Commits with no match yield no
/// links. Links are not yet checked against the issue set; see
/// [`resolve_links`].
pub fn extract_true_links(commits: &[CommitRecord], pattern: &KeyPattern) -> Vec<TrueLink> {
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut links = Vec::new();
    for commit in commits {
        for (_, key) in pattern.match_ranges(&commit.message) {
            if seen.insert((key.clone(), commit.hash.clone())) {
                links.push(TrueLink {
                    project_id: commit.project_id.clone(),
                    issue_key: key,
                    commit_hash: commit.hash.clone(),
                    source: LinkSource::ExplicitKey,
                });
            }
        }
    }
    links
}

/// Drop links whose issue key is not among the ingested issues, returning
/// the kept links and the number dropped.
pub fn resolve_links(links: Vec<TrueLink>, issues: &[IssueRecord]) -> (Vec<TrueLink>, usize) {
    let known: HashSet<(&str, &str)> = issues
        .iter()
        .map(|i| (i.project_id.as_str(), i.issue_key.as_str()))
        .collect();
    let before = links.len();
    let kept: Vec<TrueLink> = links
        .into_iter()
        .filter(|l| known.contains(&(l.project_id.as_str(), l.issue_key.as_str())))
        .collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

/// Delete every issue-key occurrence from `text`. The matched span is
/// removed without a placeholder; everything else is unchanged.
pub fn scrub_identifiers(text: &str, pattern: &KeyPattern) -> String {
    let ranges = pattern.match_ranges(text);
    if ranges.is_empty() {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for (range, _) in ranges {
        out.push_str(&text[cursor..range.start]);
        cursor = range.end;
    }
    out.push_str(&text[cursor..]);
    out
}

/// Build the retrieval document for a filtered commit: the scrubbed message
/// followed by one `<change_type> <path> <method> ...` line per file change.
pub fn commit_document(commit: &CommitRecord, pattern: &KeyPattern) -> Document {
    let mut text = scrub_identifiers(&commit.message, pattern);
    for change in &commit.file_changes {
        text.push('\n');
        text.push_str(change.change_type.as_str());
        text.push(' ');
        text.push_str(&change.path);
        for method in &change.methods {
            text.push(' ');
            text.push_str(method);
        }
    }
    let token_count = tokenize(&text).len();
    Document {
        doc_id: commit.hash.clone(),
        text,
        token_count,
    }
}

/// Build the retrieval query for an issue: scrubbed `title + " " + description`.
///
/// An issue with both fields empty yields a single space; downstream stages
/// flag such degenerate queries.
pub fn issue_query(issue: &IssueRecord, pattern: &KeyPattern) -> String {
    scrub_identifiers(&format!("{} {}", issue.title, issue.description), pattern)
}
