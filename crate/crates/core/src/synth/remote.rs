//! HTTP adapter for a hosted text-to-image API.
//!
//! Sends `POST {endpoint}` with `{"prompt", "size": "512x512", "n": 1}` and a
//! bearer token, then decodes `data[0].b64_json` or downloads `data[0].url`.

use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{BackendDescriptor, BackendError, BackendKind, GenerationRequest, ImageBackend};
use crate::error::{Error, Result};

#[derive(Serialize)]
struct ImageRequestBody<'a> {
    prompt: &'a str,
    size: String,
    n: u32,
}

#[derive(Deserialize)]
struct ImageResponse {
    data: Vec<ImageDatum>,
}

#[derive(Deserialize)]
struct ImageDatum {
    #[serde(default)]
    b64_json: Option<String>,
    #[serde(default)]
    url: Option<String>,
}

pub struct RemoteBackend {
    agent: ureq::Agent,
    endpoint: String,
    token: String,
}

impl RemoteBackend {
    /// Reads the token from the environment variable named by `descriptor.credential`.
    pub fn from_descriptor(descriptor: &BackendDescriptor) -> Result<Self> {
        descriptor.validate()?;
        let var = descriptor.credential.clone().unwrap_or_default();
        let token = std::env::var(&var)
            .map_err(|_| Error::Config(format!("credential environment variable {var} is not set")))?;
        Ok(Self::new(descriptor.endpoint.clone().unwrap_or_default(), token))
    }

    pub fn new(endpoint: impl Into<String>, token: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        RemoteBackend {
            agent,
            endpoint: endpoint.into(),
            token: token.into(),
        }
    }

    fn fetch_url(&self, url: &str) -> std::result::Result<Vec<u8>, BackendError> {
        let mut resp = self
            .agent
            .get(url)
            .call()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(BackendError::Transport(format!("image download returned {status}")));
        }
        resp.body_mut()
            .with_config()
            .limit(32 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| BackendError::Transport(e.to_string()))
    }
}

fn is_policy_rejection(body: &str) -> bool {
    body.contains("content_policy_violation") || body.contains("safety system")
}

impl ImageBackend for RemoteBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::RemoteApi
    }

    fn render_png(&self, req: &GenerationRequest) -> std::result::Result<Vec<u8>, BackendError> {
        let body = ImageRequestBody {
            prompt: &req.prompt_text,
            size: format!("{0}x{0}", req.size),
            n: 1,
        };
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.token))
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(64 * 1024 * 1024)
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        match status {
            200 => {}
            400 if is_policy_rejection(&text) => return Err(BackendError::ContentPolicy(text)),
            429 | 500..=599 => return Err(BackendError::Transport(format!("status {status}: {text}"))),
            _ => return Err(BackendError::Malformed(format!("status {status}: {text}"))),
        }
        let parsed: ImageResponse =
            serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))?;
        let datum = parsed
            .data
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Malformed("empty data array".into()))?;
        match (datum.b64_json, datum.url) {
            (Some(b64), _) => base64::engine::general_purpose::STANDARD
                .decode(b64.trim())
                .map_err(|e| BackendError::Malformed(e.to_string())),
            (None, Some(url)) => self.fetch_url(&url),
            (None, None) => Err(BackendError::Malformed("response has neither b64_json nor url".into())),
        }
    }
}
