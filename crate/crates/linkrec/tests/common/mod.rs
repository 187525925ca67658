//! Shared fixtures for integration and acceptance tests: config builders
//! over the bundled demo project, synthetic project generators with planted
//! signal, clustered vector sets, and a tiny HTTP stub server.

#![allow(dead_code)]

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use linkrec::pipeline::{
    EmbeddingSection, ProjectConfig, RerankerEntry, RerankerKind, RetrieverEntry, RunConfig,
    RunSection, SplitSection,
};
use linkrec::retrieval::RetrieverKind;
use linkrec::temporal::WindowPolicy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/demo")
        .join(name)
}

/// A config over the bundled demo fixture with the given retrievers and
/// rerankers, writing under `out`.
pub fn demo_config(
    out: &Path,
    retrievers: &[RetrieverKind],
    rerankers: &[RerankerKind],
) -> RunConfig {
    let mut config = base_config(
        out,
        ProjectConfig {
            id: "demo".into(),
            issues: fixture_path("issues.jsonl"),
            commits: fixture_path("commits.jsonl"),
            style: linkrec::corpus::KeyStyle::Jira,
            keys: vec!["DEMO".into()],
        },
    );
    config.retrievers = retrievers
        .iter()
        .map(|&name| RetrieverEntry {
            name,
            k: 50,
            scope: Default::default(),
        })
        .collect();
    config.rerankers = rerankers
        .iter()
        .map(|&name| RerankerEntry {
            name,
            k: 20,
            message_char_budget: 1000,
        })
        .collect();
    config
}

pub fn base_config(out: &Path, project: ProjectConfig) -> RunConfig {
    RunConfig {
        run: RunSection {
            seed: 42,
            output_dir: out.to_path_buf(),
            workers: 0,
            ks: vec![1, 5, 10, 20, 30, 50],
        },
        projects: vec![project],
        window: WindowPolicy::hybrid_default(),
        coverage: Default::default(),
        retrievers: vec![RetrieverEntry {
            name: RetrieverKind::Rrf,
            k: 50,
            scope: Default::default(),
        }],
        retrieval: Default::default(),
        embedding: EmbeddingSection::default(),
        rerankers: Vec::new(),
        forest: Default::default(),
        split: SplitSection {
            ratio: 0.2,
            sample_size: 1000,
            sample_repeats: 5,
        },
        endpoints: Default::default(),
    }
}

/// Vocabulary word: two letters plus an index, never a stopword.
fn word(i: usize) -> String {
    format!("wd{i:03}")
}

fn dev(i: usize) -> String {
    format!("dev{i}")
}

fn hash40(n: usize) -> String {
    format!("{n:08x}").repeat(5)
}

fn iso(day: i64) -> String {
    // Days relative to 2021-01-01T00:00:00Z.
    let secs = 1_609_459_200 + day * 86_400;
    linkrec::time::Timestamp::from_epoch_seconds(secs).to_string()
}

/// Write a planted-signal project: `n_issues` issues whose true commit
/// shares title tokens, is authored by the reporter, and lands within two
/// days of issue closure; two lexical decoy commits per issue share the
/// same title tokens but differ in author and timing; plus background
/// distractor commits up to `n_commits` total.
///
/// The signal guarantees a feature-based reranker can separate true links
/// from decoys by metadata while lexical retrieval alone cannot.
pub fn write_planted_project(
    dir: &Path,
    n_issues: usize,
    n_commits: usize,
    seed: u64,
) -> (PathBuf, PathBuf) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let issues_path = dir.join("issues.jsonl");
    let commits_path = dir.join("commits.jsonl");
    let mut issues = File::create(&issues_path).unwrap();
    let mut commits = File::create(&commits_path).unwrap();
    let mut next_hash = 0usize;
    let common_words = 200usize;

    for i in 0..n_issues {
        let created = (i as i64) * 3;
        let closed = created + 10 + (i as i64 * 7) % 40;
        let reporter = dev(i % 10);
        // Two shared title words the true commit and decoys reuse, plus a
        // rare word that only ever appears in the issue title.
        let shared_a = word((2 * i) % common_words);
        let shared_b = word((2 * i + 1) % common_words);
        let rare = word(common_words + i);
        let filler: Vec<String> = (0..4).map(|_| word(rng.gen_range(0..common_words))).collect();
        writeln!(
            issues,
            "{}",
            serde_json::json!({
                "project_id": "planted",
                "issue_key": format!("PROJ-{}", i + 1),
                "title": format!("{shared_a} {shared_b} {rare}"),
                "description": filler.join(" "),
                "reporter": reporter,
                "assignee": reporter,
                "created_at": iso(created),
                "closed_at": iso(closed),
                "status": "closed",
            })
        )
        .unwrap();

        // True commit: reporter-authored, within two days of closure.
        let true_day = closed + rng.gen_range(-2..=2);
        let message_filler = word(rng.gen_range(0..common_words));
        writeln!(
            commits,
            "{}",
            serde_json::json!({
                "project_id": "planted",
                "hash": hash40({ next_hash += 1; next_hash }),
                "author": reporter,
                "committed_at": iso(true_day),
                "message": format!("PROJ-{}: {shared_a} {shared_b} {message_filler}", i + 1),
                "parents": [hash40(900_000 + i)],
                "file_changes": [{"path": format!("src/mod{}.rs", i % 17), "change_type": "modified", "methods": ["apply"]}],
            })
        )
        .unwrap();

        // Two decoys: same shared words, different author, random timing.
        for d in 0..2 {
            let decoy_author = dev((i + 3 + d) % 10);
            let decoy_day = created + rng.gen_range(30..300);
            let decoy_filler = word(rng.gen_range(0..common_words));
            writeln!(
                commits,
                "{}",
                serde_json::json!({
                    "project_id": "planted",
                    "hash": hash40({ next_hash += 1; next_hash }),
                    "author": decoy_author,
                    "committed_at": iso(decoy_day),
                    "message": format!("{shared_a} {shared_b} {decoy_filler}"),
                    "parents": [hash40(910_000 + i * 2 + d)],
                    "file_changes": [{"path": format!("src/other{}.rs", d), "change_type": "modified", "methods": []}],
                })
            )
            .unwrap();
        }
    }

    while next_hash < n_commits {
        let day = rng.gen_range(-30..(n_issues as i64) * 3 + 400);
        let words: Vec<String> = (0..5).map(|_| word(rng.gen_range(0..common_words))).collect();
        writeln!(
            commits,
            "{}",
            serde_json::json!({
                "project_id": "planted",
                "hash": hash40({ next_hash += 1; next_hash }),
                "author": dev(rng.gen_range(0..10)),
                "committed_at": iso(day),
                "message": words.join(" "),
                "parents": [hash40(920_000 + next_hash)],
                "file_changes": [{"path": "src/lib.rs", "change_type": "modified", "methods": []}],
            })
        )
        .unwrap();
    }

    (issues_path, commits_path)
}

pub fn planted_config(dir: &Path, out: &Path) -> RunConfig {
    let mut config = base_config(
        out,
        ProjectConfig {
            id: "planted".into(),
            issues: dir.join("issues.jsonl"),
            commits: dir.join("commits.jsonl"),
            style: linkrec::corpus::KeyStyle::Jira,
            keys: vec!["PROJ".into()],
        },
    );
    config.rerankers = vec![
        RerankerEntry {
            name: RerankerKind::Identity,
            k: 20,
            message_char_budget: 1000,
        },
        RerankerEntry {
            name: RerankerKind::Forest,
            k: 20,
            message_char_budget: 1000,
        },
    ];
    config
}

/// Unit vectors in `clusters` Gaussian clusters around random unit centers.
///
/// Each cluster spreads along its own 16-dimensional random subspace (plus
/// light ambient jitter), mirroring the low intrinsic dimensionality of
/// real text embeddings; with full-rank isotropic noise in hundreds of
/// dimensions, distances concentrate and nearest-neighbor structure
/// degenerates for every index.
pub fn clustered_vectors(
    n: usize,
    clusters: usize,
    dim: usize,
    seed: u64,
) -> Vec<(String, Vec<f32>)> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let gaussian = |rng: &mut ChaCha20Rng| rng.sample::<f64, _>(rand_distr::StandardNormal);
    let subspace_dim = 16.min(dim);

    let centers: Vec<Vec<f64>> = (0..clusters)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| gaussian(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let bases: Vec<Vec<Vec<f64>>> = (0..clusters)
        .map(|_| {
            (0..subspace_dim)
                .map(|_| {
                    let v: Vec<f64> = (0..dim).map(|_| gaussian(&mut rng)).collect();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    v.into_iter().map(|x| x / norm).collect()
                })
                .collect()
        })
        .collect();

    let ambient_std = 0.02 / (dim as f64).sqrt();
    (0..n)
        .map(|i| {
            let cluster = i % clusters;
            let center = &centers[cluster];
            let mut point = center.clone();
            for basis_vector in &bases[cluster] {
                let coefficient = 0.4 * gaussian(&mut rng);
                for (p, b) in point.iter_mut().zip(basis_vector) {
                    *p += coefficient * b;
                }
            }
            let mut v: Vec<f32> = point
                .iter()
                .map(|&p| (p + ambient_std * gaussian(&mut rng)) as f32)
                .collect();
            let norm = linkrec::retrieval::l2_norm(&v);
            for x in v.iter_mut() {
                *x = (*x as f64 / norm) as f32;
            }
            (format!("v{i:05}"), v)
        })
        .collect()
}

pub mod stub {
    //! Single-threaded HTTP/1.1 stub for endpoint tests.

    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::thread;

    pub struct StubServer {
        pub url: String,
        handle: Option<thread::JoinHandle<()>>,
    }

    impl StubServer {
        /// Answer up to `requests` sequential requests with the same JSON
        /// body.
        pub fn start(body: String, requests: usize) -> Self {
            let listener = TcpListener::bind("127.0.0.1:0").unwrap();
            let url = format!("http://{}", listener.local_addr().unwrap());
            let handle = thread::spawn(move || {
                for _ in 0..requests {
                    let Ok((mut stream, _)) = listener.accept() else {
                        return;
                    };
                    let mut buf = Vec::new();
                    let mut chunk = [0u8; 4096];
                    let header_end = loop {
                        let Ok(n) = stream.read(&mut chunk) else { break None };
                        if n == 0 {
                            break None;
                        }
                        buf.extend_from_slice(&chunk[..n]);
                        if let Some(p) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                            break Some(p);
                        }
                    };
                    let Some(header_end) = header_end else { continue };
                    let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
                    let content_length = headers
                        .lines()
                        .find_map(|l| {
                            let (name, value) = l.split_once(':')?;
                            name.eq_ignore_ascii_case("content-length")
                                .then(|| value.trim().parse::<usize>().ok())?
                        })
                        .unwrap_or(0);
                    while buf.len() < header_end + 4 + content_length {
                        let Ok(n) = stream.read(&mut chunk) else { break };
                        if n == 0 {
                            break;
                        }
                        buf.extend_from_slice(&chunk[..n]);
                    }
                    let response = format!(
                        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                        body.len(),
                    );
                    let _ = stream.write_all(response.as_bytes());
                }
            });
            StubServer {
                url,
                handle: Some(handle),
            }
        }
    }

    impl Drop for StubServer {
        fn drop(&mut self) {
            // Detach: the serving thread may still be blocked in accept()
            // when fewer than `requests` calls arrived.
            drop(self.handle.take());
        }
    }
}
