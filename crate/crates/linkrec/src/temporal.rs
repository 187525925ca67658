//! Temporal window policies, per-issue candidate pools, and true-link
//! coverage reports.
//!
//! A window policy combines a post-creation window (optionally with
//! pre-creation slack) with a closure buffer. Interval endpoints are
//! inclusive on both ends and day arithmetic uses exact 86,400-second days
//! on UTC timestamps.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{CommitRecord, IssueRecord, TrueLink};
use crate::error::Error;
use crate::time::Timestamp;
use crate::Result;

/// Temporal candidate-filter configuration: a creation window plus optional
/// closure buffers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowPolicy {
    /// Days after issue creation, e.g. 365.
    pub creation_after_days: u32,
    /// Pre-creation slack in days; commits before issue creation are rare,
    /// so this defaults to 0.
    #[serde(default)]
    pub creation_before_days: u32,
    /// Days before issue closure; the closure buffer is enabled when either
    /// closure field is present (the other side defaults to 0).
    #[serde(default)]
    pub closure_before_days: Option<u32>,
    /// Days after issue closure.
    #[serde(default)]
    pub closure_after_days: Option<u32>,
}

impl WindowPolicy {
    /// The adopted default: one year after creation plus a thirty-day buffer
    /// on both sides of closure.
    pub fn hybrid_default() -> Self {
        WindowPolicy {
            creation_after_days: 365,
            creation_before_days: 0,
            closure_before_days: Some(30),
            closure_after_days: Some(30),
        }
    }

    pub fn creation_only(days: u32) -> Self {
        WindowPolicy {
            creation_after_days: days,
            creation_before_days: 0,
            closure_before_days: None,
            closure_after_days: None,
        }
    }

    pub fn closure_enabled(&self) -> bool {
        self.closure_before_days.is_some() || self.closure_after_days.is_some()
    }

    /// At least one of the creation window or the closure buffers must be
    /// enabled.
    pub fn validate(&self) -> Result<()> {
        if self.creation_after_days == 0 && self.creation_before_days == 0 && !self.closure_enabled()
        {
            return Err(Error::Config(
                "window policy enables neither a creation window nor closure buffers".into(),
            ));
        }
        Ok(())
    }

    /// Short label used in coverage tables, e.g. `c+365` or `c+365/z±30`.
    pub fn label(&self) -> String {
        let mut s = String::new();
        if self.creation_before_days > 0 {
            s.push_str(&format!("c-{}/", self.creation_before_days));
        }
        s.push_str(&format!("c+{}", self.creation_after_days));
        if self.closure_enabled() {
            s.push_str(&format!(
                "/z-{}+{}",
                self.closure_before_days.unwrap_or(0),
                self.closure_after_days.unwrap_or(0)
            ));
        }
        s
    }
}

/// A closed interval of timestamps, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeInterval {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl TimeInterval {
    pub fn contains(&self, t: Timestamp) -> bool {
        t >= self.start && t <= self.end
    }
}

/// Candidate intervals for an issue under a policy, overlaps merged,
/// sorted by start.
///
/// The creation interval is always present; the closure interval is added
/// when the issue has a usable closure and the policy enables the buffer.
pub fn window_bounds(issue: &IssueRecord, policy: &WindowPolicy) -> Vec<TimeInterval> {
    let created = issue.created_at;
    let mut intervals = vec![TimeInterval {
        start: created.plus_days(-(policy.creation_before_days as i64)),
        end: created.plus_days(policy.creation_after_days as i64),
    }];
    if policy.closure_enabled() {
        if let Some(closed) = issue.usable_closed_at() {
            intervals.push(TimeInterval {
                start: closed.plus_days(-(policy.closure_before_days.unwrap_or(0) as i64)),
                end: closed.plus_days(policy.closure_after_days.unwrap_or(0) as i64),
            });
        }
    }
    intervals.sort_by_key(|iv| (iv.start, iv.end));
    let mut merged: Vec<TimeInterval> = Vec::with_capacity(intervals.len());
    for iv in intervals {
        match merged.last_mut() {
            Some(last) if iv.start <= last.end => {
                last.end = last.end.max(iv.end);
            }
            _ => merged.push(iv),
        }
    }
    merged
}

/// True when a commit timestamp falls inside any window interval of the
/// issue.
pub fn in_window(issue: &IssueRecord, policy: &WindowPolicy, t: Timestamp) -> bool {
    window_bounds(issue, policy).iter().any(|iv| iv.contains(t))
}

/// The commits whose timestamp lies in any window interval of the issue,
/// sorted by `committed_at` ascending (ties by hash for determinism).
///
/// An empty pool is a valid result; callers flag it in run reports.
pub fn candidate_pool<'a>(
    issue: &IssueRecord,
    commits: &'a [CommitRecord],
    policy: &WindowPolicy,
) -> Vec<&'a CommitRecord> {
    let bounds = window_bounds(issue, policy);
    let mut pool: Vec<&CommitRecord> = commits
        .iter()
        .filter(|c| bounds.iter().any(|iv| iv.contains(c.committed_at)))
        .collect();
    pool.sort_by(|a, b| {
        a.committed_at
            .cmp(&b.committed_at)
            .then_with(|| a.hash.cmp(&b.hash))
    });
    pool
}

/// True-link coverage of a window policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageReport {
    pub policy: WindowPolicy,
    /// Links whose issue and commit both resolved.
    pub total_links: usize,
    pub captured_links: usize,
    /// `captured_links / total_links` (0 when there are no links).
    pub coverage: f64,
    pub per_project: BTreeMap<String, f64>,
    /// Links excluded because their issue or commit is unknown.
    pub unresolved_links: usize,
}

/// Fraction of true links whose commit falls inside the linked issue's
/// window. Unresolvable links are excluded from both counts and reported.
pub fn coverage(
    links: &[TrueLink],
    issues: &[IssueRecord],
    commits: &[CommitRecord],
    policy: &WindowPolicy,
) -> CoverageReport {
    let issue_by_key: HashMap<(&str, &str), &IssueRecord> = issues
        .iter()
        .map(|i| ((i.project_id.as_str(), i.issue_key.as_str()), i))
        .collect();
    let commit_by_hash: HashMap<(&str, &str), &CommitRecord> = commits
        .iter()
        .map(|c| ((c.project_id.as_str(), c.hash.as_str()), c))
        .collect();

    let mut total = 0usize;
    let mut captured = 0usize;
    let mut unresolved = 0usize;
    let mut per_project_counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();

    for link in links {
        let issue = issue_by_key.get(&(link.project_id.as_str(), link.issue_key.as_str()));
        let commit = commit_by_hash.get(&(link.project_id.as_str(), link.commit_hash.as_str()));
        let (Some(issue), Some(commit)) = (issue, commit) else {
            unresolved += 1;
            continue;
        };
        total += 1;
        let entry = per_project_counts.entry(link.project_id.clone()).or_default();
        entry.0 += 1;
        if in_window(issue, policy, commit.committed_at) {
            captured += 1;
            entry.1 += 1;
        }
    }

    let per_project = per_project_counts
        .into_iter()
        .map(|(p, (t, c))| (p, c as f64 / t as f64))
        .collect();

    CoverageReport {
        policy: *policy,
        total_links: total,
        captured_links: captured,
        coverage: if total > 0 {
            captured as f64 / total as f64
        } else {
            0.0
        },
        per_project,
        unresolved_links: unresolved,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LinkSource;
    use proptest::prelude::*;

    const DAY: i64 = 86_400;

    fn issue(created_days: i64, closed_days: Option<i64>) -> IssueRecord {
        IssueRecord {
            project_id: "p".into(),
            issue_key: "K-1".into(),
            title: String::new(),
            description: String::new(),
            reporter: String::new(),
            assignee: None,
            created_at: Timestamp::from_epoch_seconds(created_days * DAY),
            closed_at: closed_days.map(|d| Timestamp::from_epoch_seconds(d * DAY)),
            status: String::new(),
        }
    }

    fn commit_at(hash: &str, days: i64) -> CommitRecord {
        CommitRecord {
            project_id: "p".into(),
            hash: hash.into(),
            author: String::new(),
            committed_at: Timestamp::from_epoch_seconds(days * DAY),
            message: String::new(),
            parents: vec![],
            file_changes: vec![],
        }
    }

    fn hybrid() -> WindowPolicy {
        WindowPolicy::hybrid_default()
    }

    // Interval-merge oracle value: creation interval [T0, T0+365d] merged
    // with closure interval [T0+10d-30d, T0+10d+30d] = [T0-20d, T0+40d]
    // gives the single interval [T0-20d, T0+365d].
    #[test]
    fn window_bounds_overlapping_closure_merges_to_one() {
        let i = issue(100, Some(110));
        let bounds = window_bounds(&i, &hybrid());
        assert_eq!(bounds.len(), 1);
        assert_eq!(bounds[0].start, Timestamp::from_epoch_seconds(80 * DAY));
        assert_eq!(bounds[0].end, Timestamp::from_epoch_seconds(465 * DAY));
    }

    #[test]
    fn window_bounds_distant_closure_stays_separate() {
        let i = issue(0, Some(400));
        let bounds = window_bounds(&i, &hybrid());
        assert_eq!(bounds.len(), 2);
        assert_eq!(bounds[0].start, Timestamp::from_epoch_seconds(0));
        assert_eq!(bounds[0].end, Timestamp::from_epoch_seconds(365 * DAY));
        assert_eq!(bounds[1].start, Timestamp::from_epoch_seconds(370 * DAY));
        assert_eq!(bounds[1].end, Timestamp::from_epoch_seconds(430 * DAY));
    }

    #[test]
    fn window_bounds_without_closure() {
        let i = issue(0, None);
        let bounds = window_bounds(&i, &hybrid());
        assert_eq!(
            bounds,
            vec![TimeInterval {
                start: Timestamp::from_epoch_seconds(0),
                end: Timestamp::from_epoch_seconds(365 * DAY),
            }]
        );
    }

    #[test]
    fn unusable_closure_falls_back_to_creation_interval() {
        // Closed before created: closure ignored for window purposes.
        let i = issue(100, Some(50));
        assert_eq!(window_bounds(&i, &hybrid()).len(), 1);
        assert_eq!(
            window_bounds(&i, &hybrid())[0].start,
            Timestamp::from_epoch_seconds(100 * DAY)
        );
    }

    #[test]
    fn candidate_pool_examples() {
        let i = issue(0, Some(400));
        let commits = vec![
            commit_at("aaaaaaa1", 380), // within closure-30d
            commit_at("aaaaaaa2", -1),  // before creation
            commit_at("aaaaaaa3", 364),
        ];
        let pool = candidate_pool(&i, &commits, &hybrid());
        let hashes: Vec<&str> = pool.iter().map(|c| c.hash.as_str()).collect();
        assert_eq!(hashes, ["aaaaaaa3", "aaaaaaa1"]);

        let creation_only = WindowPolicy::creation_only(365);
        let i2 = issue(0, None);
        let pool = candidate_pool(&i2, &commits, &creation_only);
        let hashes: Vec<&str> = pool.iter().map(|c| c.hash.as_str()).collect();
        assert_eq!(hashes, ["aaaaaaa3"]);
    }

    #[test]
    fn pool_sorted_ascending() {
        let i = issue(0, None);
        let commits = vec![
            commit_at("aaaaaaa2", 30),
            commit_at("aaaaaaa1", 10),
            commit_at("aaaaaaa3", 20),
        ];
        let pool = candidate_pool(&i, &commits, &hybrid());
        let days: Vec<i64> = pool
            .iter()
            .map(|c| c.committed_at.epoch_seconds() / DAY)
            .collect();
        assert_eq!(days, [10, 20, 30]);
    }

    fn link(key: &str, hash: &str) -> TrueLink {
        TrueLink {
            project_id: "p".into(),
            issue_key: key.into(),
            commit_hash: hash.into(),
            source: LinkSource::ExplicitKey,
        }
    }

    #[test]
    fn coverage_arithmetic() {
        let mut issues = Vec::new();
        for k in 1..=4 {
            let mut i = issue(0, None);
            i.issue_key = format!("K-{k}");
            issues.push(i);
        }
        let commits = vec![
            commit_at("aaaaaaa1", 10),
            commit_at("aaaaaaa2", 20),
            commit_at("aaaaaaa3", 30),
            commit_at("aaaaaaa4", 400), // outside c+365
        ];
        let links = vec![
            link("K-1", "aaaaaaa1"),
            link("K-2", "aaaaaaa2"),
            link("K-3", "aaaaaaa3"),
            link("K-4", "aaaaaaa4"),
        ];
        let report = coverage(&links, &issues, &commits, &WindowPolicy::creation_only(365));
        assert_eq!(report.total_links, 4);
        assert_eq!(report.captured_links, 3);
        assert!((report.coverage - 0.75).abs() < 1e-12);

        let all_in = coverage(&links[..3], &issues, &commits, &WindowPolicy::creation_only(365));
        assert!((all_in.coverage - 1.0).abs() < 1e-12);
        assert_eq!(all_in.per_project["p"], 1.0);
    }

    #[test]
    fn post_closure_link_needs_hybrid() {
        // Link at closure+20d with closure 400d after creation: outside the
        // one-year creation window, inside the 30-day closure buffer.
        let issues = vec![issue(0, Some(400))];
        let commits = vec![commit_at("aaaaaaa1", 420)];
        let links = vec![link("K-1", "aaaaaaa1")];

        let creation = coverage(&links, &issues, &commits, &WindowPolicy::creation_only(365));
        assert_eq!(creation.captured_links, 0);

        let hybrid = coverage(&links, &issues, &commits, &hybrid());
        assert_eq!(hybrid.captured_links, 1);
    }

    #[test]
    fn unresolved_links_reported_not_counted() {
        let issues = vec![issue(0, None)];
        let commits = vec![commit_at("aaaaaaa1", 10)];
        let links = vec![link("K-1", "aaaaaaa1"), link("K-404", "aaaaaaa1")];
        let report = coverage(&links, &issues, &commits, &hybrid());
        assert_eq!(report.total_links, 1);
        assert_eq!(report.unresolved_links, 1);
    }

    #[test]
    fn policy_validation() {
        assert!(WindowPolicy::hybrid_default().validate().is_ok());
        let empty = WindowPolicy {
            creation_after_days: 0,
            creation_before_days: 0,
            closure_before_days: None,
            closure_after_days: None,
        };
        assert!(empty.validate().is_err());
    }

    // Membership oracle straight from the policy definition, no interval
    // merging involved.
    fn oracle_member(i: &IssueRecord, p: &WindowPolicy, t: Timestamp) -> bool {
        let created = i.created_at;
        let in_creation = t >= created.plus_days(-(p.creation_before_days as i64))
            && t <= created.plus_days(p.creation_after_days as i64);
        let in_closure = p.closure_enabled()
            && i.usable_closed_at().is_some_and(|closed| {
                t >= closed.plus_days(-(p.closure_before_days.unwrap_or(0) as i64))
                    && t <= closed.plus_days(p.closure_after_days.unwrap_or(0) as i64)
            });
        in_creation || in_closure
    }

    fn arb_policy() -> impl Strategy<Value = WindowPolicy> {
        (0u32..500, 0u32..10, proptest::option::of(0u32..60), proptest::option::of(0u32..60))
            .prop_map(|(a, b, cb, ca)| WindowPolicy {
                creation_after_days: a,
                creation_before_days: b,
                closure_before_days: cb,
                closure_after_days: ca,
            })
    }

    proptest! {
        #[test]
        fn pool_equals_brute_force_scan(
            policy in arb_policy(),
            closed in proptest::option::of(-50i64..600),
            times in proptest::collection::vec(-100i64..800, 0..60),
        ) {
            let i = issue(0, closed);
            let commits: Vec<CommitRecord> = times
                .iter()
                .enumerate()
                .map(|(n, &d)| commit_at(&format!("{n:08x}"), d))
                .collect();
            let pool: Vec<&str> = candidate_pool(&i, &commits, &policy)
                .iter()
                .map(|c| c.hash.as_str())
                .collect();
            let mut expected: Vec<&CommitRecord> = commits
                .iter()
                .filter(|c| oracle_member(&i, &policy, c.committed_at))
                .collect();
            expected.sort_by(|a, b| a.committed_at.cmp(&b.committed_at).then_with(|| a.hash.cmp(&b.hash)));
            let expected: Vec<&str> = expected.iter().map(|c| c.hash.as_str()).collect();
            prop_assert_eq!(pool, expected);
        }

        #[test]
        fn coverage_monotone_in_every_parameter(
            policy in arb_policy(),
            grow_a in 0u32..100,
            grow_b in 0u32..100,
            grow_cb in 0u32..100,
            grow_ca in 0u32..100,
            closed in proptest::option::of(0i64..600),
            times in proptest::collection::vec(-100i64..800, 1..40),
        ) {
            let larger = WindowPolicy {
                creation_after_days: policy.creation_after_days + grow_a,
                creation_before_days: policy.creation_before_days + grow_b,
                closure_before_days: Some(policy.closure_before_days.unwrap_or(0) + grow_cb),
                closure_after_days: Some(policy.closure_after_days.unwrap_or(0) + grow_ca),
            };
            let issues = vec![issue(0, closed)];
            let commits: Vec<CommitRecord> = times
                .iter()
                .enumerate()
                .map(|(n, &d)| commit_at(&format!("{n:08x}"), d))
                .collect();
            let links: Vec<TrueLink> = commits
                .iter()
                .map(|c| link("K-1", &c.hash))
                .collect();
            let small = coverage(&links, &issues, &commits, &policy);
            let big = coverage(&links, &issues, &commits, &larger);
            prop_assert!(big.captured_links >= small.captured_links);
        }

        #[test]
        fn hybrid_pool_superset_of_creation_only(
            closed in proptest::option::of(0i64..600),
            times in proptest::collection::vec(-100i64..800, 0..40),
        ) {
            let i = issue(0, closed);
            let commits: Vec<CommitRecord> = times
                .iter()
                .enumerate()
                .map(|(n, &d)| commit_at(&format!("{n:08x}"), d))
                .collect();
            let hybrid_pool: std::collections::HashSet<&str> =
                candidate_pool(&i, &commits, &hybrid()).iter().map(|c| c.hash.as_str()).collect();
            let creation_pool: std::collections::HashSet<&str> =
                candidate_pool(&i, &commits, &WindowPolicy::creation_only(365))
                    .iter()
                    .map(|c| c.hash.as_str())
                    .collect();
            prop_assert!(creation_pool.is_subset(&hybrid_pool));
        }
    }
}
