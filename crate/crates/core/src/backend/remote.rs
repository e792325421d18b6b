//! Client for a minimal completion server.
//!
//! Request: `POST <endpoint>` with `{"model", "prompt", "params", "candidates"?}`
//! where `prompt` is the chat-rendered text. Response: `{"text", "token_logprobs"?}`,
//! the latter mapping each requested candidate to the log-probability of its
//! first token as the next token. Servers without logprobs can only generate.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    truncate_at_stop, Backend, BackendError, Capabilities, EncodedPrompt, GenerationParams, LabelScores, ModelProfile,
    Token,
};
use crate::attribution::SpanMask;
use crate::corpus::LabelSpace;
use crate::prompt::{render_chat_with_span, ChatPrompt};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model_id: String,
    /// Environment variable holding a bearer token, if the server needs one.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Whether the server returns `token_logprobs` for candidates.
    #[serde(default)]
    pub logprobs: bool,
    pub profile: ModelProfile,
    /// Text substituted for absent words when scoring coalitions.
    #[serde(default = "default_pad")]
    pub pad_text: String,
}

fn default_timeout() -> u64 {
    60
}

fn default_pad() -> String {
    "_".into()
}

#[derive(Serialize)]
struct Request<'a> {
    model: &'a str,
    prompt: &'a str,
    params: &'a GenerationParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    candidates: Option<Vec<&'a str>>,
}

#[derive(Deserialize)]
struct Response {
    text: String,
    #[serde(default)]
    token_logprobs: Option<std::collections::HashMap<String, f64>>,
}

pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    token: Option<String>,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        config.profile.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::BackendUnavailable(e.to_string()))?;
        let token = match &config.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::BackendUnavailable(format!("auth token variable {var} is not set"))
            })?),
            None => None,
        };
        Ok(Self { config, client, token })
    }

    fn post(&self, prompt: &str, params: &GenerationParams, candidates: Option<Vec<&str>>) -> Result<Response, BackendError> {
        let body = Request { model: &self.config.model_id, prompt, params, candidates };
        let mut req = self.client.post(&self.config.endpoint).json(&body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| BackendError::BackendUnavailable(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(BackendError::BackendUnavailable(format!("server returned {status}")));
        }
        if !status.is_success() {
            return Err(BackendError::Protocol(format!("server returned {status}")));
        }
        resp.json::<Response>().map_err(|e| BackendError::Protocol(e.to_string()))
    }

    fn score_candidates(&self, prompt: &str, labels: &[String]) -> Result<Vec<f64>, BackendError> {
        if !self.config.logprobs {
            return Err(BackendError::CapabilityMissing("label scoring"));
        }
        let params = GenerationParams { max_new_tokens: 1, num_beams: 1, sample: false, ..Default::default() };
        let resp = self.post(prompt, &params, Some(labels.iter().map(String::as_str).collect()))?;
        let lp = resp.token_logprobs.ok_or_else(|| BackendError::Protocol("response lacks token_logprobs".into()))?;
        labels
            .iter()
            .map(|l| match lp.get(l) {
                Some(v) if v.is_finite() => Ok(*v),
                _ => Err(BackendError::Protocol(format!("no finite logprob for candidate {l}"))),
            })
            .collect()
    }
}

/// Whitespace words with their byte spans.
fn words(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut start = None;
    let mut push = |s: usize, e: usize| {
        out.push(Token { id: 0, span: s..e, word: s..e, surface: text[s..e].to_string() });
    };
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                push(s, i);
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        push(s, text.len());
    }
    out
}

impl Backend for RemoteBackend {
    fn id(&self) -> &str {
        &self.config.model_id
    }

    fn profile(&self) -> &ModelProfile {
        &self.config.profile
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { generation: true, label_scoring: self.config.logprobs, gradients: false, concurrent: true }
    }

    fn count_tokens(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }

    fn encode(&self, prompt: &ChatPrompt) -> Result<EncodedPrompt, BackendError> {
        let rendered = render_chat_with_span(prompt, &self.config.profile);
        let tokens = words(&rendered.text);
        let positions = match &rendered.input_span {
            Some(span) => tokens
                .iter()
                .enumerate()
                .filter(|(_, t)| t.span.start >= span.start && t.span.end <= span.end)
                .map(|(i, _)| i)
                .collect(),
            None => Vec::new(),
        };
        let mask = SpanMask::new(positions, tokens.len()).map_err(|e| BackendError::InvalidInput(e.to_string()))?;
        Ok(EncodedPrompt { text: rendered.text, tokens, mask })
    }

    fn generate(&self, prompt: &ChatPrompt, params: &GenerationParams) -> Result<String, BackendError> {
        params.validate()?;
        let rendered = render_chat_with_span(prompt, &self.config.profile);
        let resp = self.post(&rendered.text, params, None)?;
        Ok(truncate_at_stop(&resp.text, &self.config.profile.stop_token).to_string())
    }

    fn label_distribution(&self, prompt: &ChatPrompt, labels: &LabelSpace) -> Result<LabelScores, BackendError> {
        if labels.is_empty() {
            return Err(BackendError::InvalidInput("empty label space".into()));
        }
        let rendered = render_chat_with_span(prompt, &self.config.profile);
        let values = self.score_candidates(&rendered.text, labels.labels())?;
        Ok(LabelScores { scores: labels.labels().iter().cloned().zip(values).collect(), logits: None })
    }

    fn masked_score(&self, prompt: &EncodedPrompt, absent: &[usize], target: &str) -> Result<f64, BackendError> {
        let mut text = String::with_capacity(prompt.text.len());
        let mut cursor = 0;
        let mut absent = absent.to_vec();
        absent.sort_unstable();
        for pos in absent {
            let t = prompt
                .tokens
                .get(pos)
                .ok_or_else(|| BackendError::InvalidInput(format!("position {pos} outside prompt")))?;
            text.push_str(&prompt.text[cursor..t.span.start]);
            text.push_str(&self.config.pad_text);
            cursor = t.span.end;
        }
        text.push_str(&prompt.text[cursor..]);
        Ok(self.score_candidates(&text, &[target.to_string()])?[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    fn config(endpoint: String, logprobs: bool) -> RemoteConfig {
        RemoteConfig {
            endpoint,
            model_id: "mock".into(),
            auth_env: None,
            timeout_secs: 5,
            logprobs,
            profile: ModelProfile::mistral(),
            pad_text: "_".into(),
        }
    }

    /// Serves `n` requests with a fixed JSON body and returns the request bodies.
    fn serve(body: &'static str, n: usize) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/complete", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for stream in listener.incoming().take(n) {
                let mut stream = stream.unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                seen.push(String::from_utf8(buf).unwrap());
                write!(
                    stream,
                    "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                    body.len(),
                    body
                )
                .unwrap();
            }
            seen
        });
        (url, handle)
    }

    #[test]
    fn unreachable_endpoint_is_unavailable() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let backend = RemoteBackend::new(config(format!("http://127.0.0.1:{port}/x"), false)).unwrap();
        let err = backend.generate(&ChatPrompt::single("hi"), &GenerationParams::default()).unwrap_err();
        assert!(matches!(err, BackendError::BackendUnavailable(_)), "{err:?}");
    }

    #[test]
    fn generation_round_trip_truncates_at_stop() {
        let (url, handle) = serve(r#"{"text":"The answer is (B)</s> trailing"}"#, 1);
        let backend = RemoteBackend::new(config(url, false)).unwrap();
        let out = backend.generate(&ChatPrompt::single("Q"), &GenerationParams::default()).unwrap();
        assert_eq!(out, "The answer is (B)");
        let req: serde_json::Value = serde_json::from_str(&handle.join().unwrap()[0]).unwrap();
        assert_eq!(req["prompt"], "[INST]\nQ\n[/INST]\n");
        assert_eq!(req["params"]["max_new_tokens"], 300);
    }

    #[test]
    fn label_scores_from_logprobs() {
        let (url, _h) = serve(r#"{"text":"","token_logprobs":{"A":-0.1,"B":-2.5}}"#, 1);
        let backend = RemoteBackend::new(config(url, true)).unwrap();
        let labels: LabelSpace = ["A", "B"].into_iter().collect();
        let s = backend.label_distribution(&ChatPrompt::single("Q"), &labels).unwrap();
        assert_eq!(s.argmax(), "A");
    }

    #[test]
    fn no_logprobs_means_no_label_scoring_and_no_gradients() {
        let backend = RemoteBackend::new(config("http://127.0.0.1:9/x".into(), false)).unwrap();
        let labels: LabelSpace = ["A", "B"].into_iter().collect();
        assert!(matches!(
            backend.label_distribution(&ChatPrompt::single("Q"), &labels),
            Err(BackendError::CapabilityMissing(_))
        ));
        assert!(backend.differentiable().is_none());
        assert!(!backend.capabilities().gradients);
    }

    #[test]
    fn encode_masks_only_the_query() {
        let backend = RemoteBackend::new(config("http://127.0.0.1:9/x".into(), false)).unwrap();
        let enc = backend.encode(&ChatPrompt::single("red fox")).unwrap();
        let words: Vec<_> = enc.mask.positions().iter().map(|&p| enc.tokens[p].surface.as_str()).collect();
        assert_eq!(words, ["red", "fox"]);
    }
}
