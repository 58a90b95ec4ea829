//! Chat-completion style HTTP client.

use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::client::{LmmClient, LmmRequest, LmmResponse};
use crate::error::{Error, Result};

pub const DEFAULT_API_KEY_ENV: &str = "G3_LMM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpLmmConfig {
    /// Full endpoint URL, e.g. `https://host/v1/chat/completions`.
    pub url: String,
    pub model: String,
    /// Environment variable holding the bearer token; unset means no auth.
    pub api_key_env: String,
    pub timeout_secs: f64,
    /// Extra attempts after a transport failure or a 429/5xx status.
    pub retries: u32,
    pub retry_backoff_ms: u64,
}

impl Default for HttpLmmConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "gpt-4-vision-preview".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_secs: 60.0,
            retries: 1,
            retry_backoff_ms: 500,
        }
    }
}

pub struct HttpLmmClient {
    config: HttpLmmConfig,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpLmmClient {
    /// Reads the bearer token from `config.api_key_env` once, up front.
    pub fn new(config: HttpLmmConfig) -> Result<Self> {
        let token = std::env::var(&config.api_key_env).ok().filter(|t| !t.is_empty());
        Self::with_token(config, token)
    }

    pub fn with_token(config: HttpLmmConfig, token: Option<String>) -> Result<Self> {
        if !(config.timeout_secs > 0.0 && config.timeout_secs.is_finite()) {
            return Err(Error::usage("timeout_secs must be positive"));
        }
        if !(config.url.starts_with("http://") || config.url.starts_with("https://")) {
            return Err(Error::usage(format!("unsupported LMM url {:?}", config.url)));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, token, agent })
    }

    pub fn request_body(&self, req: &LmmRequest) -> Value {
        let mut content = vec![json!({"type": "text", "text": req.prompt})];
        if let Some(img) = &req.image {
            let b64 = base64::engine::general_purpose::STANDARD.encode(&img.data);
            content.push(json!({
                "type": "image_url",
                "image_url": {"url": format!("data:{};base64,{b64}", img.media_type)}
            }));
        }
        json!({
            "model": self.config.model,
            "temperature": req.temperature,
            "messages": [{"role": "user", "content": content}],
        })
    }

    fn attempt(&self, body: &[u8]) -> std::result::Result<LmmResponse, (bool, String)> {
        let mut builder = self.agent.post(&self.config.url).header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            builder = builder.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = builder.send(body).map_err(|e| (true, e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| (true, e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err((true, format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err((false, format!("HTTP {status}: {}", truncate(&text, 200))));
        }
        let content = extract_content(&text).map_err(|e| (false, e))?;
        Ok(LmmResponse { text: content, status })
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Text of the first choice's message; content may be a string or a list of
/// text parts.
pub fn extract_content(body: &str) -> std::result::Result<String, String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("invalid response JSON: {e}"))?;
    let content = v
        .pointer("/choices/0/message/content")
        .ok_or("response has no choices[0].message.content")?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        Value::Null => Ok(String::new()),
        other => Err(format!("unexpected content type: {other}")),
    }
}

impl LmmClient for HttpLmmClient {
    fn complete(&self, req: &LmmRequest) -> Result<LmmResponse> {
        let body = serde_json::to_vec(&self.request_body(req))
            .map_err(|e| Error::usage(format!("cannot encode request: {e}")))?;
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.config.retry_backoff_ms << (attempt - 1).min(6)));
            }
            match self.attempt(&body) {
                Ok(r) => return Ok(r),
                Err((retryable, msg)) => {
                    log::warn!("LMM request (k={}, j={}) attempt {} failed: {msg}", req.k, req.j, attempt + 1);
                    last = msg;
                    if !retryable {
                        break;
                    }
                }
            }
        }
        Err(Error::Transport(last))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rag::client::ImagePayload;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    /// Serves the given (status, body) responses in order, recording requests.
    fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(vec![]));
        let log = seen.clone();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    head.push_str(&line);
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                log.lock().unwrap().push(head + &String::from_utf8(buf).unwrap());
                let mut s = stream;
                write!(
                    s,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (url, seen)
    }

    fn request() -> LmmRequest {
        LmmRequest {
            prompt: "Answer only: latitude, longitude".into(),
            image: Some(Arc::new(ImagePayload { media_type: "image/jpeg".into(), data: vec![1, 2, 3] })),
            temperature: 1.2,
            seed: 0,
            k: 1,
            j: 2,
            positives: vec![],
            negatives: vec![],
        }
    }

    fn client(url: String, retries: u32) -> HttpLmmClient {
        let cfg = HttpLmmConfig { url, retries, retry_backoff_ms: 1, timeout_secs: 5.0, ..Default::default() };
        HttpLmmClient::with_token(cfg, Some("sekrit".into())).unwrap()
    }

    const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"48.8529, 2.3632"}}]}"#;

    #[test]
    fn sends_chat_completion_with_bearer_and_image() {
        let (url, seen) = serve(vec![(200, OK.into())]);
        let out = client(url, 0).complete(&request()).unwrap();
        assert_eq!(out, LmmResponse::ok("48.8529, 2.3632"));
        let raw = seen.lock().unwrap()[0].clone();
        assert!(raw.starts_with("POST /v1/chat/completions"));
        assert!(raw.to_ascii_lowercase().contains("authorization: bearer sekrit"));
        let body: Value = serde_json::from_str(&raw[raw.find("\r\n\r\n").unwrap() + 4..]).unwrap();
        assert_eq!(body["temperature"], 1.2);
        assert_eq!(body["messages"][0]["content"][0]["text"], "Answer only: latitude, longitude");
        assert_eq!(body["messages"][0]["content"][1]["image_url"]["url"], "data:image/jpeg;base64,AQID");
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let (url, seen) = serve(vec![(503, "{}".into()), (200, OK.into())]);
        assert!(client(url, 1).complete(&request()).is_ok());
        assert_eq!(seen.lock().unwrap().len(), 2);
    }

    #[test]
    fn gives_up_after_retries() {
        let (url, _) = serve(vec![(500, "{}".into()), (500, "{}".into())]);
        assert!(matches!(client(url, 1).complete(&request()), Err(Error::Transport(_))));
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, seen) = serve(vec![(401, r#"{"error":"nope"}"#.into())]);
        assert!(matches!(client(url, 3).complete(&request()), Err(Error::Transport(_))));
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn connection_refused_is_transport_error() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let c = client(format!("http://127.0.0.1:{port}/x"), 0);
        assert!(matches!(c.complete(&request()), Err(Error::Transport(_))));
    }

    #[test]
    fn content_shapes() {
        assert_eq!(extract_content(OK).unwrap(), "48.8529, 2.3632");
        let parts = r#"{"choices":[{"message":{"content":[{"type":"text","text":"1, "},{"type":"text","text":"2"}]}}]}"#;
        assert_eq!(extract_content(parts).unwrap(), "1, 2");
        assert!(extract_content("{}").is_err());
        assert!(extract_content("not json").is_err());
    }

    #[test]
    fn rejects_bad_config() {
        assert!(HttpLmmClient::with_token(HttpLmmConfig { url: "ftp://x".into(), ..Default::default() }, None).is_err());
        assert!(HttpLmmClient::with_token(HttpLmmConfig { timeout_secs: 0.0, ..Default::default() }, None).is_err());
    }
}
