//! Posterior oracle served over HTTP.
//!
//! Request body: `{"context": [token, ...], "top_k": k}` or
//! `{"context": [...], "full": true}`. Response body:
//! `{"tokens": [...], "logprobs": [...]}` with natural-log probabilities;
//! a zero probability is sent as `null`.
//! In full mode the response must list the whole vocabulary; a full request
//! with an empty context is also how the vocabulary is discovered.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ProbabilityOracle, TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRequest {
    pub context: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub full: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub tokens: Vec<String>,
    #[serde(with = "log_zero_as_null")]
    pub logprobs: Vec<f64>,
}

mod log_zero_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(values.iter().map(|v| (*v != f64::NEG_INFINITY).then_some(*v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let values = Vec::<Option<f64>>::deserialize(d)?;
        Ok(values.into_iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)).collect())
    }
}

impl OracleResponse {
    /// Answers a wire request from a local oracle, e.g. to expose the
    /// built-in n-gram model to other tools.
    pub fn answer(oracle: &dyn ProbabilityOracle, request: &OracleRequest) -> Result<Self> {
        let vocab = oracle.vocabulary();
        let context = request
            .context
            .iter()
            .map(|t| {
                vocab
                    .id(t)
                    .ok_or_else(|| Error::Oracle(format!("context token {t:?} not in vocabulary")))
            })
            .collect::<Result<Vec<_>>>()?;
        let dist = oracle.distribution(&context)?;
        let mut ranked: Vec<(TokenId, f64)> = dist
            .iter()
            .enumerate()
            .map(|(i, &p)| (i as TokenId, p))
            .collect();
        if !request.full {
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            ranked.truncate(request.top_k.unwrap_or(ranked.len()));
        }
        Ok(Self {
            tokens: ranked.iter().map(|&(id, _)| vocab.token(id).to_string()).collect(),
            logprobs: ranked.iter().map(|&(_, p)| p.ln()).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemoteMode {
    Full,
    /// Unlisted tokens share the leftover mass uniformly.
    TopK(usize),
}

pub struct RemoteOracle {
    endpoint: String,
    agent: ureq::Agent,
    auth: Option<String>,
    mode: RemoteMode,
    vocab: Vocabulary,
}

impl RemoteOracle {
    pub const DEFAULT_SPECIAL: &'static [&'static str] = &["<s>", "</s>", "<unk>", "<pad>", "<|endoftext|>"];

    pub fn connect(
        endpoint: impl Into<String>,
        mode: RemoteMode,
        timeout: Duration,
        auth: Option<String>,
    ) -> Result<Self> {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build();
        let mut oracle = Self {
            endpoint: endpoint.into(),
            agent: config.into(),
            auth,
            mode,
            vocab: Vocabulary::default(),
        };
        let listing = oracle.call(&OracleRequest {
            context: Vec::new(),
            top_k: None,
            full: true,
        })?;
        oracle.vocab = Vocabulary::new(listing.tokens, Self::DEFAULT_SPECIAL)?;
        Ok(oracle)
    }

    fn call(&self, request: &OracleRequest) -> Result<OracleResponse> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(token) = &self.auth {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let response: OracleResponse = req
            .send_json(request)
            .map_err(|e| Error::Oracle(format!("{}: {e}", self.endpoint)))?
            .body_mut()
            .read_json()
            .map_err(|e| Error::Oracle(format!("{}: bad response: {e}", self.endpoint)))?;
        if response.tokens.len() != response.logprobs.len() {
            return Err(Error::Oracle(format!(
                "response lists {} tokens but {} logprobs",
                response.tokens.len(),
                response.logprobs.len()
            )));
        }
        Ok(response)
    }
}

impl ProbabilityOracle for RemoteOracle {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn distribution(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        let request = OracleRequest {
            context: context.iter().map(|&id| self.vocab.token(id).to_string()).collect(),
            top_k: match self.mode {
                RemoteMode::TopK(k) => Some(k),
                RemoteMode::Full => None,
            },
            full: self.mode == RemoteMode::Full,
        };
        let response = self.call(&request)?;
        let n = self.vocab.len();
        let mut dist = vec![f64::NAN; n];
        let mut listed = 0usize;
        let mut mass = 0.0;
        for (token, lp) in response.tokens.iter().zip(&response.logprobs) {
            let id = self
                .vocab
                .id(token)
                .ok_or_else(|| Error::Oracle(format!("response token {token:?} not in vocabulary")))?;
            if dist[id as usize].is_nan() {
                listed += 1;
            }
            let p = lp.exp();
            dist[id as usize] = p;
            mass += p;
        }
        let rest = if listed < n {
            (1.0 - mass).max(0.0) / (n - listed) as f64
        } else {
            0.0
        };
        if self.mode == RemoteMode::Full && listed < n {
            return Err(Error::Oracle(format!("full response listed {listed} of {n} tokens")));
        }
        dist.iter_mut().filter(|p| p.is_nan()).for_each(|p| *p = rest);
        Ok(dist)
    }
}
