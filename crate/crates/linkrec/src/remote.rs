//! HTTP clients for the three remote contracts: an embeddings endpoint, a
//! chat-completions endpoint, and a pairwise scoring endpoint.
//!
//! Endpoint URLs come from configuration or environment; auth tokens come
//! from the environment only and are sent as `Authorization: Bearer`.
//! Retries are the caller's job (see `rerank::RetryPolicy`); each client
//! method performs exactly one attempt.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::rerank::{ChatClient, ChatMessage, PairScoreClient};
use crate::retrieval::{l2_normalize, EmbeddingProvider};
use crate::Result;

/// Where a remote service lives and how to authenticate against it.
#[derive(Debug, Clone)]
pub struct EndpointConfig {
    pub url: String,
    pub auth_token: Option<String>,
    pub timeout: Duration,
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        EndpointConfig {
            url: url.into(),
            auth_token: None,
            timeout: Duration::from_secs(60),
        }
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.auth_token = token;
        self
    }
}

fn http_client(timeout: Duration) -> Result<reqwest::blocking::Client> {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| Error::Remote {
            attempts: 1,
            message: format!("cannot build http client: {e}"),
        })
}

fn post_json<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
    client: &reqwest::blocking::Client,
    endpoint: &EndpointConfig,
    body: &Req,
) -> Result<Resp> {
    let mut request = client.post(&endpoint.url).json(body);
    if let Some(token) = &endpoint.auth_token {
        request = request.bearer_auth(token);
    }
    let response = request.send().map_err(|e| Error::Remote {
        attempts: 1,
        message: format!("{}: {e}", endpoint.url),
    })?;
    let status = response.status();
    if !status.is_success() {
        return Err(Error::Remote {
            attempts: 1,
            message: format!("{}: http {status}", endpoint.url),
        });
    }
    response.json().map_err(|e| Error::Remote {
        attempts: 1,
        message: format!("{}: bad response body: {e}", endpoint.url),
    })
}

// ---------------------------------------------------------------------------
// Embeddings: {"texts": [...]} -> {"vectors": [[...], ...]}
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

/// Embeddings over HTTP. Returned vectors are re-normalized to unit length
/// so the provider contract holds regardless of the server's convention.
pub struct HttpEmbeddingProvider {
    endpoint: EndpointConfig,
    dim: usize,
    batch_size: usize,
    client: reqwest::blocking::Client,
}

impl HttpEmbeddingProvider {
    pub fn new(endpoint: EndpointConfig, dim: usize) -> Result<Self> {
        let client = http_client(endpoint.timeout)?;
        Ok(HttpEmbeddingProvider {
            endpoint,
            dim,
            batch_size: 64,
            client,
        })
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size.max(1)) {
            let response: EmbedResponse = post_json(
                &self.client,
                &self.endpoint,
                &EmbedRequest { texts: chunk },
            )?;
            if response.vectors.len() != chunk.len() {
                return Err(Error::Remote {
                    attempts: 1,
                    message: format!(
                        "embeddings endpoint returned {} vectors for {} texts",
                        response.vectors.len(),
                        chunk.len()
                    ),
                });
            }
            for mut v in response.vectors {
                if v.len() != self.dim {
                    return Err(Error::Remote {
                        attempts: 1,
                        message: format!("embedding dim {} != configured {}", v.len(), self.dim),
                    });
                }
                if l2_normalize(&mut v) == 0.0 {
                    v[0] = 1.0;
                }
                out.push(v);
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Chat completions: {"model", "messages": [{role, content}]} -> text
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
}

/// Chat-completions client. Accepts either a bare `{"text": ...}` response
/// or the common `{"choices": [{"message": {"content": ...}}]}` shape.
pub struct HttpChatClient {
    endpoint: EndpointConfig,
    model: String,
    client: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(endpoint: EndpointConfig, model: impl Into<String>) -> Result<Self> {
        let client = http_client(endpoint.timeout)?;
        Ok(HttpChatClient {
            endpoint,
            model: model.into(),
            client,
        })
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String> {
        let response: serde_json::Value = post_json(
            &self.client,
            &self.endpoint,
            &ChatRequest {
                model: &self.model,
                messages,
            },
        )?;
        if let Some(text) = response.get("text").and_then(|v| v.as_str()) {
            return Ok(text.to_string());
        }
        if let Some(text) = response
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
        {
            return Ok(text.to_string());
        }
        Err(Error::Remote {
            attempts: 1,
            message: format!("{}: response has no text field", self.endpoint.url),
        })
    }
}

// ---------------------------------------------------------------------------
// Pairwise scoring: {"pairs": [[q, d], ...]} -> {"scores": [...]}
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ScoreRequest<'a> {
    pairs: &'a [(String, String)],
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

pub struct HttpPairScorer {
    endpoint: EndpointConfig,
    client: reqwest::blocking::Client,
}

impl HttpPairScorer {
    pub fn new(endpoint: EndpointConfig) -> Result<Self> {
        let client = http_client(endpoint.timeout)?;
        Ok(HttpPairScorer { endpoint, client })
    }
}

impl PairScoreClient for HttpPairScorer {
    fn score_pairs(&self, pairs: &[(String, String)]) -> Result<Vec<f64>> {
        let response: ScoreResponse =
            post_json(&self.client, &self.endpoint, &ScoreRequest { pairs })?;
        if response.scores.len() != pairs.len() {
            return Err(Error::Remote {
                attempts: 1,
                message: format!(
                    "scoring endpoint returned {} scores for {} pairs",
                    response.scores.len(),
                    pairs.len()
                ),
            });
        }
        Ok(response.scores)
    }
}


#[cfg(test)]
mod tests {
    use super::stub_server::StubServer;
    use super::*;
    use crate::retrieval::l2_norm;

    #[test]
    fn embeddings_round_trip_and_normalize() {
        let body = serde_json::json!({"vectors": [[3.0, 4.0], [0.0, 2.0]]}).to_string();
        let server = StubServer::start(vec![(200, body)]);
        let provider = HttpEmbeddingProvider::new(EndpointConfig::new(&server.url), 2).unwrap();
        let out = provider.embed_batch(&["alpha", "beta"]).unwrap();
        assert_eq!(out.len(), 2);
        for v in &out {
            assert!((l2_norm(v) - 1.0).abs() < 1e-6);
        }
        let request = server.next_request_body();
        assert!(request.contains("\"texts\""));
        assert!(request.contains("alpha"));
    }

    #[test]
    fn embeddings_dim_mismatch_is_error() {
        let body = serde_json::json!({"vectors": [[1.0, 0.0, 0.0]]}).to_string();
        let server = StubServer::start(vec![(200, body)]);
        let provider = HttpEmbeddingProvider::new(EndpointConfig::new(&server.url), 2).unwrap();
        assert!(provider.embed("alpha").is_err());
    }

    #[test]
    fn chat_accepts_both_response_shapes() {
        let bare = serde_json::json!({"text": "c2\nc1"}).to_string();
        let openai = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": "c1\nc2"}}]
        })
        .to_string();
        let server = StubServer::start(vec![(200, bare), (200, openai)]);
        let client = HttpChatClient::new(EndpointConfig::new(&server.url), "test-model").unwrap();
        let messages = [ChatMessage::user("rank these")];
        assert_eq!(client.complete(&messages).unwrap(), "c2\nc1");
        assert_eq!(client.complete(&messages).unwrap(), "c1\nc2");
        let request = server.next_request_body();
        assert!(request.contains("\"model\":\"test-model\""));
    }

    #[test]
    fn http_error_status_is_reported() {
        let server = StubServer::start(vec![(503, "{}".to_string())]);
        let client = HttpChatClient::new(EndpointConfig::new(&server.url), "m").unwrap();
        let err = client.complete(&[ChatMessage::user("x")]).unwrap_err();
        assert!(err.to_string().contains("503"));
    }

    #[test]
    fn pair_scorer_round_trip() {
        let body = serde_json::json!({"scores": [0.9, 0.1]}).to_string();
        let server = StubServer::start(vec![(200, body)]);
        let scorer = HttpPairScorer::new(EndpointConfig::new(&server.url)).unwrap();
        let pairs = vec![
            ("q".to_string(), "good".to_string()),
            ("q".to_string(), "bad".to_string()),
        ];
        assert_eq!(scorer.score_pairs(&pairs).unwrap(), vec![0.9, 0.1]);
    }

    #[test]
    fn pair_scorer_length_mismatch_is_error() {
        let body = serde_json::json!({"scores": [0.9]}).to_string();
        let server = StubServer::start(vec![(200, body)]);
        let scorer = HttpPairScorer::new(EndpointConfig::new(&server.url)).unwrap();
        let pairs = vec![
            ("q".to_string(), "a".to_string()),
            ("q".to_string(), "b".to_string()),
        ];
        assert!(scorer.score_pairs(&pairs).is_err());
    }
}
