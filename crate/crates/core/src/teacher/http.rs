//! OpenAI-compatible chat-completions adapter. All vendor wire details live here.

use std::path::{Path, PathBuf};
use std::time::Duration;

use base64::Engine as _;
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

use super::client::{ClientConfig, TeacherRequest, Transport, TransportFailure};
use crate::prompt::PromptSegment;

#[derive(Debug, Error)]
pub enum EndpointError {
    #[error("cannot read endpoint config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid endpoint config: {0}")]
    Invalid(String),
}

fn default_token_env() -> String {
    "TEACHER_API_TOKEN".into()
}
fn default_retries() -> u32 {
    3
}
fn default_timeout_s() -> f64 {
    120.0
}
fn default_concurrency() -> usize {
    4
}
fn default_backoff_ms() -> u64 {
    500
}

/// Endpoint TOML file. The token itself never appears in the file, only the
/// name of the environment variable holding it.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_token_env")]
    pub token_env: String,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

impl EndpointConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, EndpointError> {
        let cfg: EndpointConfig = toml::from_str(text).map_err(|e| EndpointError::Invalid(e.to_string()))?;
        if !(cfg.timeout_s.is_finite() && cfg.timeout_s > 0.0) {
            return Err(EndpointError::Invalid(format!(
                "timeout_s must be positive, got {}",
                cfg.timeout_s
            )));
        }
        if cfg.concurrency == 0 {
            return Err(EndpointError::Invalid("concurrency must be at least 1".into()));
        }
        if !(cfg.base_url.starts_with("http://") || cfg.base_url.starts_with("https://")) {
            return Err(EndpointError::Invalid(format!(
                "base_url {:?} is not http(s)",
                cfg.base_url
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, EndpointError> {
        let text = std::fs::read_to_string(path).map_err(|source| EndpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn client_config(&self) -> ClientConfig {
        ClientConfig {
            max_retries: self.max_retries,
            timeout: Duration::from_secs_f64(self.timeout_s),
            concurrency: self.concurrency,
            backoff_base: Duration::from_millis(self.backoff_ms),
            ..ClientConfig::default()
        }
    }
}

pub struct HttpTransport {
    url: String,
    model: String,
    token: Option<String>,
}

impl HttpTransport {
    /// Reads the token from the configured environment variable; requests go out
    /// without an `Authorization` header when it is unset.
    pub fn new(cfg: &EndpointConfig) -> Self {
        let token = std::env::var(&cfg.token_env).ok().filter(|t| !t.is_empty());
        if token.is_none() {
            log::warn!("{} is not set; sending unauthenticated requests", cfg.token_env);
        }
        Self {
            url: format!("{}/chat/completions", cfg.base_url.trim_end_matches('/')),
            model: cfg.model.clone(),
            token,
        }
    }

    /// Chat body with the bundle flattened to ordered text and image parts.
    pub fn request_body(&self, request: &TeacherRequest) -> Result<Value, TransportFailure> {
        let mut parts = Vec::new();
        let mut text = String::new();
        let mut images = request.frame_images.iter();
        let flush = |text: &mut String, parts: &mut Vec<Value>| {
            if !text.is_empty() {
                parts.push(json!({"type": "text", "text": std::mem::take(text)}));
            }
        };
        for segment in &request.bundle.user_segments {
            match segment {
                PromptSegment::Text(t) => {
                    if !text.is_empty() {
                        text.push('\n');
                    }
                    text.push_str(t);
                }
                PromptSegment::FrameRef(k) => {
                    flush(&mut text, &mut parts);
                    let reference = images.next().ok_or_else(|| TransportFailure::Transport {
                        message: format!("no image for frame {k}"),
                        retryable: false,
                    })?;
                    parts.push(json!({"type": "image_url", "image_url": {"url": image_url(reference)?}}));
                }
            }
        }
        flush(&mut text, &mut parts);
        Ok(json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": request.bundle.system_prompt},
                {"role": "user", "content": parts},
            ],
        }))
    }
}

fn image_url(reference: &str) -> Result<String, TransportFailure> {
    if ["http://", "https://", "data:"]
        .iter()
        .any(|p| reference.starts_with(p))
    {
        return Ok(reference.to_string());
    }
    let bytes = std::fs::read(reference).map_err(|e| TransportFailure::Transport {
        message: format!("cannot read frame image {reference}: {e}"),
        retryable: false,
    })?;
    let mime = match Path::new(reference).extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("png") => "image/png",
        Some(e) if e.eq_ignore_ascii_case("webp") => "image/webp",
        _ => "image/jpeg",
    };
    let encoded = base64::engine::general_purpose::STANDARD.encode(bytes);
    Ok(format!("data:{mime};base64,{encoded}"))
}

fn extract_content(body: &str) -> Result<String, TransportFailure> {
    let malformed = |why: &str| TransportFailure::Transport {
        message: format!("malformed response: {why}"),
        retryable: false,
    };
    let v: Value = serde_json::from_str(body).map_err(|e| malformed(&e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| malformed("missing choices[0].message.content"))
}

impl Transport for HttpTransport {
    fn send(&self, request: &TeacherRequest, timeout: Duration) -> Result<String, TransportFailure> {
        let body = self.request_body(request)?.to_string();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut call = agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            call = call.header("Authorization", format!("Bearer {token}"));
        }
        let mut response = call.send(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => TransportFailure::Timeout,
            other => TransportFailure::Transport {
                message: other.to_string(),
                retryable: true,
            },
        })?;
        let status = response.status().as_u16();
        let retry_after = response
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s >= 0.0)
            .map(Duration::from_secs_f64);
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportFailure::Transport {
                message: format!("reading response body: {e}"),
                retryable: true,
            })?;
        match status {
            200..=299 => extract_content(&text),
            429 => Err(TransportFailure::RateLimited { retry_after }),
            408 => Err(TransportFailure::Timeout),
            500..=599 => Err(TransportFailure::Transport {
                message: format!("HTTP {status}"),
                retryable: true,
            }),
            _ => Err(TransportFailure::Transport {
                message: format!("HTTP {status}"),
                retryable: false,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::PromptBundle;

    #[test]
    fn config_defaults_and_validation() {
        let cfg = EndpointConfig::from_toml_str("base_url = \"http://localhost:8000/v1/\"\nmodel = \"m\"\n").unwrap();
        assert_eq!(cfg.token_env, "TEACHER_API_TOKEN");
        assert_eq!(cfg.client_config(), ClientConfig::default());
        assert!(EndpointConfig::from_toml_str("base_url = \"ftp://x\"\nmodel = \"m\"").is_err());
        assert!(EndpointConfig::from_toml_str("base_url = \"http://x\"\nmodel = \"m\"\nconcurrency = 0").is_err());
        assert!(EndpointConfig::from_toml_str("base_url = \"http://x\"\nmodel = \"m\"\nextra = 1").is_err());
    }

    #[test]
    fn body_interleaves_parts_in_order() {
        let cfg = EndpointConfig::from_toml_str(
            "base_url = \"http://h/v1/\"\nmodel = \"m\"\ntoken_env = \"SCEPIPE_TEST_UNSET_TOKEN\"",
        )
        .unwrap();
        let t = HttpTransport::new(&cfg);
        assert_eq!(t.url, "http://h/v1/chat/completions");
        let request = TeacherRequest {
            clip_id: "c".into(),
            bundle: PromptBundle {
                system_prompt: "sys".into(),
                user_segments: vec![
                    PromptSegment::Text("head".into()),
                    PromptSegment::FrameRef(1),
                    PromptSegment::Text("a".into()),
                    PromptSegment::Text("b".into()),
                    PromptSegment::FrameRef(2),
                ],
                include_imu: true,
                template_version: "v".into(),
            },
            frame_images: vec!["https://img/1.jpg".into(), "data:image/png;base64,AA==".into()],
        };
        let body = t.request_body(&request).unwrap();
        let parts = body["messages"][1]["content"].as_array().unwrap();
        let kinds: Vec<&str> = parts.iter().map(|p| p["type"].as_str().unwrap()).collect();
        assert_eq!(kinds, ["text", "image_url", "text", "image_url"]);
        assert_eq!(parts[2]["text"], "a\nb");
        assert_eq!(parts[1]["image_url"]["url"], "https://img/1.jpg");
        assert_eq!(body["messages"][0]["content"], "sys");
    }

    #[test]
    fn local_image_becomes_data_url() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.png");
        std::fs::write(&path, [1u8, 2, 3]).unwrap();
        assert_eq!(image_url(path.to_str().unwrap()).unwrap(), "data:image/png;base64,AQID");
        assert!(matches!(
            image_url("/definitely/missing.jpg"),
            Err(TransportFailure::Transport { retryable: false, .. })
        ));
    }

    #[test]
    fn content_extraction() {
        assert_eq!(
            extract_content(r#"{"choices":[{"message":{"content":"hi"}}]}"#).unwrap(),
            "hi"
        );
        assert!(extract_content("{}").is_err());
        assert!(extract_content("not json").is_err());
    }
}
