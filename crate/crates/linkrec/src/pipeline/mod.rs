//! Stage orchestration: ingest -> coverage -> retrieve -> train -> rerank
//! -> evaluate, driven by a [`RunConfig`].
//!
//! Each stage persists its artifacts under
//! `<output_dir>/<stage>/<config-hash>/<project>/` and validates that its
//! prerequisites exist, so stages re-run independently. Identical
//! configurations (and inputs) produce byte-identical artifacts; the only
//! non-deterministic output is each stage's `timings.json`.

mod artifacts;
mod config;

pub use artifacts::{
    load_versioned, read_json, read_jsonl, require_artifact, save_versioned, stage_dir,
    write_json, write_jsonl, RunManifest, StageTimings, ARTIFACT_FORMAT_VERSION, TOOL_VERSION,
};
pub use config::{
    CoverageSection, EmbeddingProviderKind, EmbeddingSection, EndpointsSection, IndexScope,
    ProjectConfig, RerankerEntry, RerankerKind, RetrievalSection, RetrieverEntry, RunConfig,
    RunSection, SplitSection, ENV_CHAT_MODEL, ENV_CHAT_TOKEN, ENV_CHAT_URL, ENV_EMBED_TOKEN,
    ENV_EMBED_URL, ENV_SCORE_TOKEN, ENV_SCORE_URL,
};

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    self, CommitRecord, Document, IngestStats, IssueRecord, KeyPattern, TrueLink,
};
use crate::error::Error;
use crate::eval::{
    chrono_split, evaluate_run, format_report_table, sample_test, ChronoSplit, EvaluationReport,
    RelevanceJudgments,
};
use crate::rerank::{
    extract_features, frlink_score, frlink_threshold, llm_rerank, make_training_set,
    rerank_with_model, rerank_with_pair_endpoint, train_forest, FeatureContext, FeatureVector,
    ForestModel, ForestScorer, FrlinkModel, FrlinkScorer, RerankEvents, RerankRequestBatch,
    RetrievalOrderScorer, RetryPolicy, TfIdfSpace,
};
use crate::retrieval::{
    build_sparse_index, build_vector_index, embed_documents, flat_search_within,
    retrieve_for_issue, sparse_search_within, tokenize, EmbeddingProvider, HashingEmbedder,
    IssuePool, RankedList, RetrieverConfig, RetrieverKind, SparseIndex, SparseVariant,
    VectorIndex, VectorKind,
};
use crate::temporal::{candidate_pool, coverage, CoverageReport};
use crate::util::par_map;
use crate::Result;

/// Orchestrates all stages for one validated configuration.
pub struct Pipeline {
    config: RunConfig,
    fingerprint: String,
    fp_short: String,
}

/// Corpus artifacts for one project, as later stages consume them.
struct ProjectData {
    pattern: KeyPattern,
    /// Sorted by issue_key.
    issues: Vec<IssueRecord>,
    commits: Vec<CommitRecord>,
    links: Vec<TrueLink>,
    /// One document per filtered commit, in commit order.
    documents: Vec<Document>,
    doc_index: HashMap<String, usize>,
    commit_index: HashMap<String, usize>,
    links_by_issue: BTreeMap<String, BTreeSet<String>>,
}

impl ProjectData {
    fn doc_for(&self, doc_id: &str) -> Option<&Document> {
        self.doc_index.get(doc_id).map(|&i| &self.documents[i])
    }

    fn commit_for(&self, hash: &str) -> Option<&CommitRecord> {
        self.commit_index.get(hash).map(|&i| &self.commits[i])
    }
}

/// Data-quality summary written by the ingest stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataQualityReport {
    pub issues: IngestStats,
    pub commits: IngestStats,
    pub merge_commits_excluded: usize,
    pub no_change_commits_excluded: usize,
    pub true_links: usize,
    pub unresolved_links: usize,
    /// Issues whose scrubbed query has no tokens.
    pub degenerate_queries: usize,
}

/// Everything cmd_evaluate produces for printing.
#[derive(Debug)]
pub struct EvaluateOutput {
    pub tables: String,
    pub report_paths: Vec<PathBuf>,
}

#[cfg(feature = "parallel")]
fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    if workers == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("worker pool")
            .install(f)
    }
}

#[cfg(not(feature = "parallel"))]
fn with_pool<T>(_workers: usize, f: impl FnOnce() -> T) -> T {
    f()
}

impl Pipeline {
    /// Validate the configuration and fix its fingerprint.
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let fingerprint = config.fingerprint();
        let fp_short = config.fingerprint_short();
        Ok(Pipeline {
            config,
            fingerprint,
            fp_short,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn stage_path(&self, stage: &str) -> PathBuf {
        stage_dir(&self.config.run.output_dir, stage, &self.fp_short)
    }

    // -----------------------------------------------------------------
    // ingest
    // -----------------------------------------------------------------

    /// Ingest and filter every project: normalized records, mined true
    /// links, scrubbed documents, and a data-quality report.
    pub fn cmd_ingest(&self) -> Result<RunManifest> {
        let stage = self.stage_path("ingest");
        let mut manifest = RunManifest::new("ingest", &self.fingerprint);
        let mut timings = StageTimings::default();

        for project in &self.config.projects {
            let started = Instant::now();
            let pattern = KeyPattern::new(project.style, &project.keys)?;

            let (mut issues, issue_stats) = corpus::ingest_issues(&project.issues)?;
            if issues.is_empty() {
                return Err(Error::Ingest(format!(
                    "project {:?}: no usable issues in {}",
                    project.id,
                    project.issues.display()
                )));
            }
            for issue in &mut issues {
                issue.project_id = project.id.clone();
            }
            issues.sort_by(|a, b| a.issue_key.cmp(&b.issue_key));

            let (mut commits, commit_stats) = corpus::ingest_commits(&project.commits)?;
            for commit in &mut commits {
                commit.project_id = project.id.clone();
            }
            let merges = commits.iter().filter(|c| c.parents.len() > 1).count();
            let no_changes = commits
                .iter()
                .filter(|c| c.parents.len() <= 1 && c.file_changes.is_empty())
                .count();
            let commits = corpus::filter_commits(commits);

            let mined = corpus::extract_true_links(&commits, &pattern);
            let (links, unresolved) = corpus::resolve_links(mined, &issues);

            let documents: Vec<Document> = commits
                .iter()
                .map(|c| corpus::commit_document(c, &pattern))
                .collect();
            let degenerate = issues
                .iter()
                .filter(|i| tokenize(&corpus::issue_query(i, &pattern)).is_empty())
                .count();

            let dir = stage.join(&project.id);
            write_jsonl(&dir.join("issues.jsonl"), &issues)?;
            write_jsonl(&dir.join("commits.jsonl"), &commits)?;
            write_jsonl(&dir.join("links.jsonl"), &links)?;
            write_jsonl(&dir.join("documents.jsonl"), &documents)?;
            let quality = DataQualityReport {
                issues: issue_stats,
                commits: commit_stats,
                merge_commits_excluded: merges,
                no_change_commits_excluded: no_changes,
                true_links: links.len(),
                unresolved_links: unresolved,
                degenerate_queries: degenerate,
            };
            write_json(&dir.join("data_quality.json"), &quality)?;

            for name in ["issues.jsonl", "commits.jsonl", "links.jsonl", "documents.jsonl", "data_quality.json"] {
                manifest.artifact(format!("{}/{name}", project.id));
            }
            manifest.count("issues", issues.len() as u64);
            manifest.count("commits", commits.len() as u64);
            manifest.count("true_links", links.len() as u64);
            manifest.count("merge_commits_excluded", merges as u64);
            manifest.count("no_change_commits_excluded", no_changes as u64);
            manifest.count("unresolved_links", unresolved as u64);
            timings.record(&format!("ingest/{}", project.id), started.elapsed());
        }

        manifest.clone().write(&stage)?;
        timings.write(&stage)?;
        Ok(manifest)
    }

    fn load_project(&self, project: &ProjectConfig) -> Result<ProjectData> {
        let dir = self.stage_path("ingest").join(&project.id);
        require_artifact(&dir.join("issues.jsonl"), "ingest")?;
        let issues: Vec<IssueRecord> = read_jsonl(&dir.join("issues.jsonl"))?;
        let commits: Vec<CommitRecord> = read_jsonl(&dir.join("commits.jsonl"))?;
        let links: Vec<TrueLink> = read_jsonl(&dir.join("links.jsonl"))?;
        let documents: Vec<Document> = read_jsonl(&dir.join("documents.jsonl"))?;
        let pattern = KeyPattern::new(project.style, &project.keys)?;
        let doc_index = documents
            .iter()
            .enumerate()
            .map(|(i, d)| (d.doc_id.clone(), i))
            .collect();
        let commit_index = commits
            .iter()
            .enumerate()
            .map(|(i, c)| (c.hash.clone(), i))
            .collect();
        let mut links_by_issue: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for link in &links {
            links_by_issue
                .entry(link.issue_key.clone())
                .or_default()
                .insert(link.commit_hash.clone());
        }
        Ok(ProjectData {
            pattern,
            issues,
            commits,
            links,
            documents,
            doc_index,
            commit_index,
            links_by_issue,
        })
    }

    // -----------------------------------------------------------------
    // coverage
    // -----------------------------------------------------------------

    /// One coverage report per configured policy (default: the run's
    /// window policy), over all projects, plus a printable table.
    pub fn cmd_coverage(&self) -> Result<(Vec<CoverageReport>, String)> {
        let mut all_issues = Vec::new();
        let mut all_commits = Vec::new();
        let mut all_links = Vec::new();
        for project in &self.config.projects {
            let data = self.load_project(project)?;
            all_issues.extend(data.issues);
            all_commits.extend(data.commits);
            all_links.extend(data.links);
        }

        let policies = if self.config.coverage.policies.is_empty() {
            vec![self.config.window]
        } else {
            self.config.coverage.policies.clone()
        };
        let reports: Vec<CoverageReport> = policies
            .iter()
            .map(|p| coverage(&all_links, &all_issues, &all_commits, p))
            .collect();

        let stage = self.stage_path("coverage");
        write_json(&stage.join("coverage.json"), &reports)?;
        let mut manifest = RunManifest::new("coverage", &self.fingerprint);
        manifest.artifact("coverage.json");
        manifest.count("policies", reports.len() as u64);
        manifest.write(&stage)?;

        let table = coverage_table(&reports);
        Ok((reports, table))
    }

    // -----------------------------------------------------------------
    // retrieve
    // -----------------------------------------------------------------

    /// Per-issue top-k ranked lists for every configured retriever (plus
    /// the bm25 base list when rrf is configured, which training features
    /// consume), persisted one list per line.
    pub fn cmd_retrieve(&self) -> Result<RunManifest> {
        let stage = self.stage_path("retrieve");
        let mut manifest = RunManifest::new("retrieve", &self.fingerprint);
        let mut timings = StageTimings::default();

        let entries = self.retriever_entries();
        let needs_dense = entries.iter().any(|e| e.name.needs_dense());
        let provider = if needs_dense {
            Some(self.embedding_provider()?)
        } else {
            None
        };

        for project in &self.config.projects {
            let started = Instant::now();
            let data = self.load_project(project)?;
            let dir = stage.join(&project.id);

            // Embed every document and query once per project.
            let doc_vectors: Vec<(String, Vec<f32>)> = match &provider {
                Some(p) => embed_documents(p.as_ref(), &data.documents)?,
                None => Vec::new(),
            };
            let vector_of: HashMap<&str, &Vec<f32>> = doc_vectors
                .iter()
                .map(|(id, v)| (id.as_str(), v))
                .collect();
            let queries: Vec<String> = data
                .issues
                .iter()
                .map(|i| corpus::issue_query(i, &data.pattern))
                .collect();
            let query_vectors: Option<Vec<Vec<f32>>> = match &provider {
                Some(p) => {
                    let texts: Vec<&str> = queries.iter().map(String::as_str).collect();
                    Some(p.embed_batch(&texts)?)
                }
                None => None,
            };

            // Global-scope structures are built once per project.
            let mut global_sparse: HashMap<&str, SparseIndex> = HashMap::new();
            let mut global_flat: Option<VectorIndex> = None;
            for entry in entries.iter().filter(|e| e.scope == IndexScope::Global) {
                match entry.name {
                    RetrieverKind::Bm25 | RetrieverKind::Bm25l => {
                        let variant = if entry.name == RetrieverKind::Bm25 {
                            SparseVariant::Bm25
                        } else {
                            SparseVariant::Bm25l
                        };
                        global_sparse.insert(
                            entry.name.as_str(),
                            build_sparse_index(&data.documents, variant, self.config.retrieval.sparse)?,
                        );
                    }
                    RetrieverKind::Flat => {
                        global_flat = Some(build_vector_index(
                            doc_vectors.clone(),
                            VectorKind::Flat,
                            self.vector_params(),
                        )?);
                    }
                    _ => unreachable!("validated"),
                }
            }

            let issue_jobs: Vec<usize> = (0..data.issues.len()).collect();
            let per_issue: Vec<Result<Vec<(usize, RankedList)>>> =
                with_pool(self.config.run.workers, || {
                    par_map(issue_jobs, |idx| {
                        let issue = &data.issues[idx];
                        let pool = candidate_pool(issue, &data.commits, &self.config.window);
                        let pool_docs: Vec<Document> = pool
                            .iter()
                            .filter_map(|c| data.doc_for(&c.hash).cloned())
                            .collect();
                        let pool_vectors: Vec<(String, Vec<f32>)> = if provider.is_some() {
                            pool_docs
                                .iter()
                                .filter_map(|d| {
                                    vector_of.get(d.doc_id.as_str()).map(|v| (d.doc_id.clone(), (*v).clone()))
                                })
                                .collect()
                        } else {
                            Vec::new()
                        };
                        let query_vector = query_vectors.as_ref().map(|qv| qv[idx].as_slice());
                        let allowed: HashSet<&str> =
                            pool_docs.iter().map(|d| d.doc_id.as_str()).collect();

                        let mut lists = Vec::with_capacity(entries.len());
                        for (entry_idx, entry) in entries.iter().enumerate() {
                            let list = match entry.scope {
                                IndexScope::Pool => {
                                    let issue_pool = IssuePool {
                                        docs: &pool_docs,
                                        vectors: provider.is_some().then_some(&pool_vectors[..]),
                                    };
                                    retrieve_for_issue(
                                        &issue.issue_key,
                                        &queries[idx],
                                        query_vector,
                                        &issue_pool,
                                        &self.retriever_config(entry),
                                    )?
                                }
                                IndexScope::Global => match entry.name {
                                    RetrieverKind::Bm25 | RetrieverKind::Bm25l => sparse_search_within(
                                        &global_sparse[entry.name.as_str()],
                                        &tokenize(&queries[idx]),
                                        entry.k,
                                        &issue.issue_key,
                                        Some(&allowed),
                                    ),
                                    RetrieverKind::Flat => flat_search_within(
                                        global_flat.as_ref().expect("built"),
                                        query_vector.expect("dense provider"),
                                        entry.k,
                                        &issue.issue_key,
                                        &allowed,
                                    )?,
                                    _ => unreachable!("validated"),
                                },
                            };
                            lists.push((entry_idx, list));
                        }
                        Ok(lists)
                    })
                });

            let mut by_entry: Vec<Vec<RankedList>> = vec![Vec::new(); entries.len()];
            let mut empty_pools = 0u64;
            for issue_lists in per_issue {
                for (entry_idx, list) in issue_lists? {
                    if entry_idx == 0 && list.entries.is_empty() {
                        empty_pools += 1;
                    }
                    by_entry[entry_idx].push(list);
                }
            }

            for (entry, lists) in entries.iter().zip(&by_entry) {
                let file = format!("{}.jsonl", entry.name.as_str());
                write_jsonl(&dir.join(&file), lists)?;
                manifest.artifact(format!("{}/{file}", project.id));
            }
            if !doc_vectors.is_empty() {
                let path = dir.join("indexes").join("embeddings.json");
                save_versioned(&path, "embeddings", &doc_vectors)?;
                manifest.artifact(format!("{}/indexes/embeddings.json", project.id));
            }
            for (name, index) in global_sparse.iter().collect::<BTreeMap<_, _>>() {
                let path = dir.join("indexes").join(format!("global_{name}.json"));
                save_versioned(&path, "sparse_index", index)?;
                manifest.artifact(format!("{}/indexes/global_{name}.json", project.id));
            }
            if let Some(index) = &global_flat {
                let path = dir.join("indexes").join("global_flat.json");
                save_versioned(&path, "vector_index", index)?;
                manifest.artifact(format!("{}/indexes/global_flat.json", project.id));
            }
            manifest.count("issues_retrieved", data.issues.len() as u64);
            manifest.count("empty_pools", empty_pools);
            timings.record(&format!("retrieve/{}", project.id), started.elapsed());
        }

        manifest.clone().write(&stage)?;
        timings.write(&stage)?;
        Ok(manifest)
    }

    /// Configured retrievers plus the implicit pool-scope bm25 entry that
    /// feature extraction needs when rrf is configured.
    fn retriever_entries(&self) -> Vec<RetrieverEntry> {
        let mut entries = self.config.retrievers.clone();
        let has_rrf = entries.iter().any(|e| e.name == RetrieverKind::Rrf);
        let has_bm25 = entries.iter().any(|e| e.name == RetrieverKind::Bm25);
        if has_rrf && !has_bm25 {
            let k = entries
                .iter()
                .find(|e| e.name == RetrieverKind::Rrf)
                .map(|e| e.k)
                .unwrap_or(50);
            entries.push(RetrieverEntry {
                name: RetrieverKind::Bm25,
                k,
                scope: IndexScope::Pool,
            });
        }
        entries
    }

    fn retriever_config(&self, entry: &RetrieverEntry) -> RetrieverConfig {
        let mut config = RetrieverConfig::new(entry.name, entry.k);
        config.sparse_params = self.config.retrieval.sparse;
        config.vector_params = self.vector_params();
        config.rrf_k = self.config.retrieval.rrf_k;
        config
    }

    /// Vector params with the structure seed derived from the master seed.
    fn vector_params(&self) -> crate::retrieval::VectorParams {
        let mut params = self.config.retrieval.vector;
        params.seed = params.seed.wrapping_add(self.config.run.seed);
        params
    }

    fn embedding_provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        match self.config.embedding.provider {
            EmbeddingProviderKind::Hashing => Ok(Box::new(HashingEmbedder::new(
                self.config.embedding.dim,
                self.config.run.seed,
            ))),
            EmbeddingProviderKind::Remote => self.remote_embedding_provider(),
        }
    }

    #[cfg(feature = "remote")]
    fn remote_embedding_provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        let url = self
            .config
            .endpoint_url(ENV_EMBED_URL, &self.config.endpoints.embed_url)
            .ok_or_else(|| {
                Error::Config(format!(
                    "embedding.provider = \"remote\" needs {ENV_EMBED_URL} or [endpoints] embed_url"
                ))
            })?;
        let endpoint = crate::remote::EndpointConfig::new(url)
            .with_token(std::env::var(ENV_EMBED_TOKEN).ok());
        Ok(Box::new(crate::remote::HttpEmbeddingProvider::new(
            endpoint,
            self.config.embedding.dim,
        )?))
    }

    #[cfg(not(feature = "remote"))]
    fn remote_embedding_provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        Err(Error::Config(
            "embedding.provider = \"remote\" requires the `remote` feature".into(),
        ))
    }

    // -----------------------------------------------------------------
    // train
    // -----------------------------------------------------------------

    /// Chronological split, hard-negative training set, and persisted
    /// reranker models (forest and/or frlink threshold, per configuration).
    pub fn cmd_train(&self) -> Result<RunManifest> {
        let stage = self.stage_path("train");
        let mut manifest = RunManifest::new("train", &self.fingerprint);
        let mut timings = StageTimings::default();
        let wants_forest = self.has_reranker(RerankerKind::Forest);
        let wants_frlink = self.has_reranker(RerankerKind::Frlink);

        for project in &self.config.projects {
            let started = Instant::now();
            let data = self.load_project(project)?;
            let rrf_lists = self.load_lists(project, RetrieverKind::Rrf.as_str())?;
            let bm25_lists = self.load_lists(project, RetrieverKind::Bm25.as_str())?;
            let split = chrono_split(&data.issues, self.config.split.ratio)?;
            let dir = stage.join(&project.id);

            write_json(&dir.join("split.json"), &split)?;
            manifest.artifact(format!("{}/split.json", project.id));

            let train_issues: Vec<&IssueRecord> = data
                .issues
                .iter()
                .filter(|i| split.train_issue_keys.contains(&i.issue_key))
                .collect();
            let (pairs, empty_pools) =
                make_training_set(&train_issues, &data.links_by_issue, &rrf_lists);
            write_jsonl(&dir.join("training_pairs.jsonl"), &pairs)?;
            manifest.artifact(format!("{}/training_pairs.jsonl", project.id));
            let positives = pairs.iter().filter(|p| p.positive).count();
            let negatives = pairs.len() - positives;
            manifest.count("training_positives", positives as u64);
            manifest.count("training_negatives", negatives as u64);
            manifest.count("training_empty_pools", empty_pools as u64);

            let mut in_bag_accuracy = None;
            if wants_forest {
                let features =
                    self.featurize_pairs(&data, &pairs, &rrf_lists, &bm25_lists)?;
                let mut params = self.config.forest;
                params.seed = params.seed.wrapping_add(self.config.run.seed);
                let model = train_forest(&features, params)?;
                in_bag_accuracy = Some(model.in_bag_accuracy);
                save_versioned(&dir.join("forest.json"), "forest", &model)?;
                manifest.artifact(format!("{}/forest.json", project.id));
            }

            let mut threshold = None;
            if wants_frlink {
                let positive_scores = self.frlink_positive_scores(&data, &pairs)?;
                let model = frlink_threshold(&positive_scores)?;
                threshold = Some(model.threshold);
                save_versioned(&dir.join("frlink.json"), "frlink", &model)?;
                manifest.artifact(format!("{}/frlink.json", project.id));
            }

            #[derive(Serialize)]
            struct TrainReport {
                pairs: usize,
                positives: usize,
                negatives: usize,
                empty_pools: usize,
                in_bag_accuracy: Option<f64>,
                frlink_threshold: Option<f64>,
            }
            write_json(
                &dir.join("train_report.json"),
                &TrainReport {
                    pairs: pairs.len(),
                    positives,
                    negatives,
                    empty_pools,
                    in_bag_accuracy,
                    frlink_threshold: threshold,
                },
            )?;
            manifest.artifact(format!("{}/train_report.json", project.id));
            timings.record(&format!("train/{}", project.id), started.elapsed());
        }

        manifest.clone().write(&stage)?;
        timings.write(&stage)?;
        Ok(manifest)
    }

    fn has_reranker(&self, kind: RerankerKind) -> bool {
        self.config.rerankers.iter().any(|r| r.name == kind)
    }

    fn load_lists(
        &self,
        project: &ProjectConfig,
        retriever: &str,
    ) -> Result<HashMap<String, RankedList>> {
        let path = self
            .stage_path("retrieve")
            .join(&project.id)
            .join(format!("{retriever}.jsonl"));
        require_artifact(&path, "retrieve")?;
        let lists: Vec<RankedList> = read_jsonl(&path)?;
        Ok(lists.into_iter().map(|l| (l.query_id.clone(), l)).collect())
    }

    /// Pool context (tf-idf space, retrieval scores) per issue, then
    /// features for each of that issue's pairs.
    fn featurize_pairs(
        &self,
        data: &ProjectData,
        pairs: &[crate::rerank::TrainingPair],
        rrf_lists: &HashMap<String, RankedList>,
        bm25_lists: &HashMap<String, RankedList>,
    ) -> Result<Vec<FeatureVector>> {
        let mut by_issue: BTreeMap<&str, Vec<&crate::rerank::TrainingPair>> = BTreeMap::new();
        for pair in pairs {
            by_issue.entry(pair.issue_key.as_str()).or_default().push(pair);
        }
        let issue_of: HashMap<&str, &IssueRecord> = data
            .issues
            .iter()
            .map(|i| (i.issue_key.as_str(), i))
            .collect();

        let jobs: Vec<(&str, Vec<&crate::rerank::TrainingPair>)> = by_issue.into_iter().collect();
        let featurized: Vec<Result<Vec<FeatureVector>>> = with_pool(self.config.run.workers, || {
            par_map(jobs, |(issue_key, issue_pairs)| {
                let issue = issue_of
                    .get(issue_key)
                    .ok_or_else(|| Error::Eval(format!("unknown issue {issue_key}")))?;
                let ctx_data = self.issue_context(data, issue, rrf_lists, bm25_lists);
                let ctx = FeatureContext {
                    space: &ctx_data.space,
                    policy: &self.config.window,
                    pattern: &data.pattern,
                    query_text: &ctx_data.query_text,
                    bm25_scores: &ctx_data.bm25_scores,
                    rrf_scores: &ctx_data.rrf_scores,
                };
                issue_pairs
                    .iter()
                    .map(|pair| {
                        let commit = data.commit_for(&pair.commit_hash).ok_or_else(|| {
                            Error::Eval(format!("unknown commit {}", pair.commit_hash))
                        })?;
                        let mut fv = extract_features(issue, commit, &ctx);
                        fv.label = Some(pair.positive);
                        Ok(fv)
                    })
                    .collect()
            })
        });
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in featurized {
            out.extend(chunk?);
        }
        Ok(out)
    }

    fn issue_context(
        &self,
        data: &ProjectData,
        issue: &IssueRecord,
        rrf_lists: &HashMap<String, RankedList>,
        bm25_lists: &HashMap<String, RankedList>,
    ) -> IssueContext {
        let pool = candidate_pool(issue, &data.commits, &self.config.window);
        let pool_texts: Vec<&str> = pool
            .iter()
            .filter_map(|c| data.doc_for(&c.hash).map(|d| d.text.as_str()))
            .collect();
        let space = TfIdfSpace::fit(pool_texts);
        let score_map = |lists: &HashMap<String, RankedList>| -> HashMap<String, f64> {
            lists
                .get(&issue.issue_key)
                .map(|l| {
                    l.entries
                        .iter()
                        .map(|e| (e.doc_id.clone(), e.score))
                        .collect()
                })
                .unwrap_or_default()
        };
        IssueContext {
            query_text: corpus::issue_query(issue, &data.pattern),
            space,
            bm25_scores: score_map(bm25_lists),
            rrf_scores: score_map(rrf_lists),
        }
    }

    fn frlink_positive_scores(
        &self,
        data: &ProjectData,
        pairs: &[crate::rerank::TrainingPair],
    ) -> Result<Vec<f64>> {
        let issue_of: HashMap<&str, &IssueRecord> = data
            .issues
            .iter()
            .map(|i| (i.issue_key.as_str(), i))
            .collect();
        let empty = HashMap::new();
        let mut scores = Vec::new();
        let mut by_issue: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for pair in pairs.iter().filter(|p| p.positive) {
            by_issue
                .entry(pair.issue_key.as_str())
                .or_default()
                .push(pair.commit_hash.as_str());
        }
        for (issue_key, hashes) in by_issue {
            let issue = issue_of
                .get(issue_key)
                .ok_or_else(|| Error::Eval(format!("unknown issue {issue_key}")))?;
            let ctx = self.issue_context(data, issue, &empty, &empty);
            for hash in hashes {
                let doc = data
                    .doc_for(hash)
                    .ok_or_else(|| Error::Eval(format!("unknown commit {hash}")))?;
                scores.push(frlink_score(&ctx.space, &ctx.query_text, &doc.text));
            }
        }
        Ok(scores)
    }

    // -----------------------------------------------------------------
    // rerank
    // -----------------------------------------------------------------

    /// Rerank each test issue's fused top-K with every configured
    /// reranker; fallback events are logged per issue and summarized.
    pub fn cmd_rerank(&self) -> Result<RunManifest> {
        let stage = self.stage_path("rerank");
        let mut manifest = RunManifest::new("rerank", &self.fingerprint);
        let mut timings = StageTimings::default();
        if self.config.rerankers.is_empty() {
            manifest.clone().write(&stage)?;
            timings.write(&stage)?;
            return Ok(manifest);
        }

        let chat_client = if self.has_reranker(RerankerKind::Llm) {
            Some(self.chat_client()?)
        } else {
            None
        };
        let pair_client = if self.has_reranker(RerankerKind::External) {
            Some(self.pair_client()?)
        } else {
            None
        };

        for project in &self.config.projects {
            let started = Instant::now();
            let data = self.load_project(project)?;
            let rrf_lists = self.load_lists(project, RetrieverKind::Rrf.as_str())?;
            let bm25_lists = self.load_lists(project, RetrieverKind::Bm25.as_str())?;
            let train_dir = self.stage_path("train").join(&project.id);
            require_artifact(&train_dir.join("split.json"), "train")?;
            let split: ChronoSplit = read_json(&train_dir.join("split.json"))?;
            let dir = stage.join(&project.id);

            let forest_model: Option<ForestModel> = if self.has_reranker(RerankerKind::Forest) {
                Some(load_versioned(&train_dir.join("forest.json"), "forest")?)
            } else {
                None
            };
            let frlink_model: Option<FrlinkModel> = if self.has_reranker(RerankerKind::Frlink) {
                Some(load_versioned(&train_dir.join("frlink.json"), "frlink")?)
            } else {
                None
            };

            let test_issues: Vec<&IssueRecord> = data
                .issues
                .iter()
                .filter(|i| split.test_issue_keys.contains(&i.issue_key))
                .collect();

            for reranker in &self.config.rerankers {
                let jobs: Vec<&IssueRecord> = test_issues.clone();
                let outputs: Vec<Result<Option<(RankedList, RerankEvents)>>> =
                    with_pool(self.config.run.workers, || {
                        par_map(jobs, |issue| {
                            let Some(fused) = rrf_lists.get(&issue.issue_key) else {
                                return Ok(None);
                            };
                            if fused.entries.is_empty() {
                                return Ok(None);
                            }
                            let candidates = fused.truncated(reranker.k);
                            let out = self.rerank_one(
                                &data,
                                issue,
                                &candidates,
                                reranker,
                                forest_model.as_ref(),
                                frlink_model.as_ref(),
                                chat_client.as_deref(),
                                pair_client.as_deref(),
                                &rrf_lists,
                                &bm25_lists,
                            )?;
                            Ok(Some(out))
                        })
                    });

                let mut lists = Vec::new();
                let mut total_events = RerankEventsSummary::default();
                for output in outputs {
                    if let Some((list, events)) = output? {
                        if events.fallback {
                            total_events.fallbacks += 1;
                            total_events.flagged_issues.push(list.query_id.clone());
                        }
                        total_events.failed_pairs += events.failed_pairs;
                        total_events.truncated_messages += events.truncated_messages;
                        lists.push(list);
                    }
                }
                total_events.issues = lists.len();
                let name = reranker.name.as_str();
                write_jsonl(&dir.join(format!("{name}.jsonl")), &lists)?;
                write_json(&dir.join(format!("{name}_events.json")), &total_events)?;
                manifest.artifact(format!("{}/{name}.jsonl", project.id));
                manifest.artifact(format!("{}/{name}_events.json", project.id));
                manifest.count(&format!("{name}_issues"), lists.len() as u64);
                manifest.count(&format!("{name}_fallbacks"), total_events.fallbacks as u64);
            }
            timings.record(&format!("rerank/{}", project.id), started.elapsed());
        }

        manifest.clone().write(&stage)?;
        timings.write(&stage)?;
        Ok(manifest)
    }

    #[allow(clippy::too_many_arguments)]
    fn rerank_one(
        &self,
        data: &ProjectData,
        issue: &IssueRecord,
        candidates: &RankedList,
        reranker: &RerankerEntry,
        forest_model: Option<&ForestModel>,
        frlink_model: Option<&FrlinkModel>,
        chat_client: Option<&dyn crate::rerank::ChatClient>,
        pair_client: Option<&dyn crate::rerank::PairScoreClient>,
        rrf_lists: &HashMap<String, RankedList>,
        bm25_lists: &HashMap<String, RankedList>,
    ) -> Result<(RankedList, RerankEvents)> {
        match reranker.name {
            RerankerKind::Identity => {
                let scorer = RetrievalOrderScorer { list: candidates };
                Ok(rerank_with_model(&scorer, candidates, reranker.k))
            }
            RerankerKind::Forest => {
                let model = forest_model.expect("forest model loaded");
                let ctx_data = self.issue_context(data, issue, rrf_lists, bm25_lists);
                let ctx = FeatureContext {
                    space: &ctx_data.space,
                    policy: &self.config.window,
                    pattern: &data.pattern,
                    query_text: &ctx_data.query_text,
                    bm25_scores: &ctx_data.bm25_scores,
                    rrf_scores: &ctx_data.rrf_scores,
                };
                let mut features: HashMap<String, FeatureVector> = HashMap::new();
                for doc_id in candidates.doc_ids() {
                    let commit = data
                        .commit_for(doc_id)
                        .ok_or_else(|| Error::Eval(format!("unknown commit {doc_id}")))?;
                    features.insert(doc_id.to_string(), extract_features(issue, commit, &ctx));
                }
                let scorer = ForestScorer {
                    model,
                    features: &features,
                };
                Ok(rerank_with_model(&scorer, candidates, reranker.k))
            }
            RerankerKind::Frlink => {
                // The learned threshold classifies pairs; ranking uses the
                // underlying scores directly.
                let _ = frlink_model.expect("frlink model loaded");
                let ctx_data = self.issue_context(data, issue, rrf_lists, bm25_lists);
                let doc_texts = self.candidate_texts(data, candidates, |d| d.text.clone());
                let scorer = FrlinkScorer {
                    space: &ctx_data.space,
                    query_text: &ctx_data.query_text,
                    doc_texts: &doc_texts,
                };
                Ok(rerank_with_model(&scorer, candidates, reranker.k))
            }
            RerankerKind::Llm => {
                let client = chat_client.expect("chat client configured");
                let messages = self.candidate_texts(data, candidates, |d| d.text.clone());
                let batch = RerankRequestBatch {
                    query_id: issue.issue_key.clone(),
                    issue_text: corpus::issue_query(issue, &data.pattern),
                    candidates: candidates
                        .doc_ids()
                        .map(|id| {
                            let message = data
                                .commit_for(id)
                                .map(|c| corpus::scrub_identifiers(&c.message, &data.pattern))
                                .or_else(|| messages.get(id).cloned())
                                .unwrap_or_default();
                            (id.to_string(), message)
                        })
                        .collect(),
                };
                Ok(llm_rerank(
                    client,
                    &batch,
                    &RetryPolicy::default(),
                    reranker.message_char_budget,
                ))
            }
            RerankerKind::External => {
                let client = pair_client.expect("pair client configured");
                let doc_texts = self.candidate_texts(data, candidates, |d| d.text.clone());
                Ok(rerank_with_pair_endpoint(
                    client,
                    &RetryPolicy::default(),
                    &corpus::issue_query(issue, &data.pattern),
                    candidates,
                    &doc_texts,
                    reranker.k,
                ))
            }
        }
    }

    fn candidate_texts(
        &self,
        data: &ProjectData,
        candidates: &RankedList,
        project: impl Fn(&Document) -> String,
    ) -> HashMap<String, String> {
        candidates
            .doc_ids()
            .filter_map(|id| data.doc_for(id).map(|d| (id.to_string(), project(d))))
            .collect()
    }

    #[cfg(feature = "remote")]
    fn chat_client(&self) -> Result<Box<dyn crate::rerank::ChatClient>> {
        let url = self
            .config
            .endpoint_url(ENV_CHAT_URL, &self.config.endpoints.chat_url)
            .ok_or_else(|| {
                Error::Config(format!(
                    "llm reranker needs {ENV_CHAT_URL} or [endpoints] chat_url"
                ))
            })?;
        let model = self
            .config
            .endpoint_url(ENV_CHAT_MODEL, &self.config.endpoints.chat_model)
            .unwrap_or_else(|| "default".to_string());
        let endpoint =
            crate::remote::EndpointConfig::new(url).with_token(std::env::var(ENV_CHAT_TOKEN).ok());
        Ok(Box::new(crate::remote::HttpChatClient::new(endpoint, model)?))
    }

    #[cfg(not(feature = "remote"))]
    fn chat_client(&self) -> Result<Box<dyn crate::rerank::ChatClient>> {
        Err(Error::Config(
            "llm reranker requires the `remote` feature".into(),
        ))
    }

    #[cfg(feature = "remote")]
    fn pair_client(&self) -> Result<Box<dyn crate::rerank::PairScoreClient>> {
        let url = self
            .config
            .endpoint_url(ENV_SCORE_URL, &self.config.endpoints.score_url)
            .ok_or_else(|| {
                Error::Config(format!(
                    "external reranker needs {ENV_SCORE_URL} or [endpoints] score_url"
                ))
            })?;
        let endpoint = crate::remote::EndpointConfig::new(url)
            .with_token(std::env::var(ENV_SCORE_TOKEN).ok());
        Ok(Box::new(crate::remote::HttpPairScorer::new(endpoint)?))
    }

    #[cfg(not(feature = "remote"))]
    fn pair_client(&self) -> Result<Box<dyn crate::rerank::PairScoreClient>> {
        Err(Error::Config(
            "external reranker requires the `remote` feature".into(),
        ))
    }

    // -----------------------------------------------------------------
    // evaluate
    // -----------------------------------------------------------------

    /// Evaluation reports (per retriever and per reranker) with the
    /// standard table layout; reports are byte-identical across runs of the
    /// same config.
    pub fn cmd_evaluate(&self) -> Result<EvaluateOutput> {
        let stage = self.stage_path("evaluate");
        let mut manifest = RunManifest::new("evaluate", &self.fingerprint);
        let mut tables = String::new();
        let mut report_paths = Vec::new();

        for project in &self.config.projects {
            let data = self.load_project(project)?;
            let train_dir = self.stage_path("train").join(&project.id);
            let split: ChronoSplit = if train_dir.join("split.json").is_file() {
                read_json(&train_dir.join("split.json"))?
            } else {
                chrono_split(&data.issues, self.config.split.ratio)?
            };
            let judgments = RelevanceJudgments::from_links(&data.links);
            let samples = sample_test(
                &split.test_issue_keys,
                self.config.split.sample_size,
                self.config.split.sample_repeats,
                self.config.run.seed,
            );
            let dir = stage.join(&project.id);

            let mut retrieval_reports: Vec<EvaluationReport> = Vec::new();
            for entry in &self.config.retrievers {
                let lists = self.load_lists(project, entry.name.as_str())?;
                retrieval_reports.push(evaluate_run(
                    entry.name.as_str(),
                    &lists,
                    &judgments,
                    &self.config.run.ks,
                    &samples,
                    &self.fingerprint,
                )?);
            }
            write_json(&dir.join("retrieval_report.json"), &retrieval_reports)?;
            manifest.artifact(format!("{}/retrieval_report.json", project.id));
            report_paths.push(dir.join("retrieval_report.json"));

            let mut rerank_reports: Vec<EvaluationReport> = Vec::new();
            for reranker in &self.config.rerankers {
                let path = self
                    .stage_path("rerank")
                    .join(&project.id)
                    .join(format!("{}.jsonl", reranker.name.as_str()));
                require_artifact(&path, "rerank")?;
                let lists: Vec<RankedList> = read_jsonl(&path)?;
                let lists: HashMap<String, RankedList> =
                    lists.into_iter().map(|l| (l.query_id.clone(), l)).collect();
                rerank_reports.push(evaluate_run(
                    reranker.name.as_str(),
                    &lists,
                    &judgments,
                    &self.config.run.ks,
                    &samples,
                    &self.fingerprint,
                )?);
            }
            if !rerank_reports.is_empty() {
                write_json(&dir.join("rerank_report.json"), &rerank_reports)?;
                manifest.artifact(format!("{}/rerank_report.json", project.id));
                report_paths.push(dir.join("rerank_report.json"));
            }

            tables.push_str(&format!("project {} - retrieval\n", project.id));
            tables.push_str(&format_report_table(
                &retrieval_reports.iter().collect::<Vec<_>>(),
            ));
            if !rerank_reports.is_empty() {
                tables.push_str(&format!("\nproject {} - reranking (K = 20 candidates)\n", project.id));
                tables.push_str(&format_report_table(
                    &rerank_reports.iter().collect::<Vec<_>>(),
                ));
            }
            tables.push('\n');
        }

        std::fs::create_dir_all(&stage).map_err(|e| Error::io(&stage, e))?;
        std::fs::write(stage.join("tables.txt"), &tables)
            .map_err(|e| Error::io(stage.join("tables.txt"), e))?;
        manifest.artifact("tables.txt".to_string());
        manifest.write(&stage)?;

        Ok(EvaluateOutput {
            tables,
            report_paths,
        })
    }

    /// Run every stage in order.
    pub fn cmd_all(&self) -> Result<EvaluateOutput> {
        self.cmd_ingest()?;
        self.cmd_coverage()?;
        self.cmd_retrieve()?;
        if !self.config.rerankers.is_empty() {
            self.cmd_train()?;
            self.cmd_rerank()?;
        }
        self.cmd_evaluate()
    }
}

struct IssueContext {
    query_text: String,
    space: TfIdfSpace,
    bm25_scores: HashMap<String, f64>,
    rrf_scores: HashMap<String, f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RerankEventsSummary {
    issues: usize,
    fallbacks: usize,
    failed_pairs: usize,
    truncated_messages: usize,
    flagged_issues: Vec<String>,
}

fn coverage_table(reports: &[CoverageReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24}{:>12}{:>12}{:>10}\n",
        "policy", "links", "captured", "coverage"
    ));
    for report in reports {
        out.push_str(&format!(
            "{:<24}{:>12}{:>12}{:>10.4}\n",
            report.policy.label(),
            report.total_links,
            report.captured_links,
            report.coverage
        ));
        for (project, fraction) in &report.per_project {
            out.push_str(&format!("  {project:<22}{:>34.4}\n", fraction));
        }
    }
    out
}

