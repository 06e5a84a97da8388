use std::sync::Arc;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use stressmon_core::signal::RawWindow;
use stressmon_server::{
    ExportKind, IngestOutcome, LabelResponse, PendingPrompt, ResponseAck, Service, ServiceError,
    StatsReport,
};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EndpointError {
    /// Transport or server-side failure; worth retrying.
    #[error("service unavailable: {0}")]
    Unavailable(String),
    /// The service refused the request; retrying will not help.
    #[error("rejected ({kind}): {message}")]
    Rejected { kind: String, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl EndpointError {
    pub fn is_kind(&self, k: &str) -> bool {
        matches!(self, EndpointError::Rejected { kind, .. } if kind == k)
    }
}

/// What the simulator needs from the ingestion service. `now_ms` is the
/// simulated time of the request.
pub trait ServiceEndpoint: Send + Sync {
    fn ingest(&self, window: &RawWindow, now_ms: i64) -> Result<IngestOutcome, EndpointError>;
    fn pending(&self, subject: &str, now_ms: i64) -> Result<Vec<PendingPrompt>, EndpointError>;
    fn respond(&self, resp: &LabelResponse, now_ms: i64) -> Result<ResponseAck, EndpointError>;
}

impl<T: ServiceEndpoint + ?Sized> ServiceEndpoint for Arc<T> {
    fn ingest(&self, window: &RawWindow, now_ms: i64) -> Result<IngestOutcome, EndpointError> {
        (**self).ingest(window, now_ms)
    }
    fn pending(&self, subject: &str, now_ms: i64) -> Result<Vec<PendingPrompt>, EndpointError> {
        (**self).pending(subject, now_ms)
    }
    fn respond(&self, resp: &LabelResponse, now_ms: i64) -> Result<ResponseAck, EndpointError> {
        (**self).respond(resp, now_ms)
    }
}

impl From<ServiceError> for EndpointError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Storage(_) | ServiceError::Io(_) => {
                EndpointError::Unavailable(e.to_string())
            }
            other => EndpointError::Rejected {
                kind: other.kind().to_string(),
                message: other.to_string(),
            },
        }
    }
}

impl ServiceEndpoint for Service {
    fn ingest(&self, window: &RawWindow, now_ms: i64) -> Result<IngestOutcome, EndpointError> {
        Ok(Service::ingest(self, window, now_ms)?)
    }
    fn pending(&self, subject: &str, now_ms: i64) -> Result<Vec<PendingPrompt>, EndpointError> {
        Ok(Service::pending(self, subject, now_ms)?)
    }
    fn respond(&self, resp: &LabelResponse, now_ms: i64) -> Result<ResponseAck, EndpointError> {
        Ok(Service::submit_response(self, resp, now_ms)?)
    }
}

/// Client for the service's HTTP API. Simulated time is sent as `now_ms`;
/// the server only honours it when configured to trust client clocks.
#[derive(Clone)]
pub struct HttpEndpoint {
    base: String,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
    message: String,
}

impl HttpEndpoint {
    pub fn new(base_url: &str) -> Self {
        Self::with_timeout(base_url, Duration::from_secs(30))
    }

    pub fn with_timeout(base_url: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            agent,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn finish(
        res: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<String, EndpointError> {
        let mut resp = res.map_err(|e| EndpointError::Unavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(u64::MAX)
            .read_to_string()
            .map_err(|e| EndpointError::Unavailable(e.to_string()))?;
        match status {
            200..=299 => Ok(text),
            500..=599 => Err(EndpointError::Unavailable(format!("HTTP {status}: {text}"))),
            _ => Err(match serde_json::from_str::<ErrorBody>(&text) {
                Ok(b) => EndpointError::Rejected {
                    kind: b.error,
                    message: b.message,
                },
                Err(_) => EndpointError::Rejected {
                    kind: format!("http_{status}"),
                    message: text,
                },
            }),
        }
    }

    fn json<T: DeserializeOwned>(text: &str) -> Result<T, EndpointError> {
        serde_json::from_str(text).map_err(|e| EndpointError::Protocol(e.to_string()))
    }

    pub fn health(&self) -> Result<(), EndpointError> {
        Self::finish(self.agent.get(self.url("/healthz")).call()).map(|_| ())
    }

    pub fn export(&self, subject: Option<&str>, kind: ExportKind) -> Result<String, EndpointError> {
        let kind = match kind {
            ExportKind::Labeled => "labeled",
            ExportKind::Unlabeled => "unlabeled",
        };
        let mut req = self
            .agent
            .get(self.url("/api/v1/dataset/export"))
            .query("kind", kind);
        if let Some(s) = subject {
            req = req.query("subject", s);
        }
        Self::finish(req.call())
    }

    pub fn stats(&self, subject: Option<&str>) -> Result<StatsReport, EndpointError> {
        let mut req = self.agent.get(self.url("/api/v1/stats"));
        if let Some(s) = subject {
            req = req.query("subject", s);
        }
        Self::json(&Self::finish(req.call())?)
    }
}

impl ServiceEndpoint for HttpEndpoint {
    fn ingest(&self, window: &RawWindow, now_ms: i64) -> Result<IngestOutcome, EndpointError> {
        let res = self
            .agent
            .post(self.url("/api/v1/samples"))
            .query("now_ms", now_ms.to_string())
            .send_json(window);
        Self::json(&Self::finish(res)?)
    }

    fn pending(&self, subject: &str, now_ms: i64) -> Result<Vec<PendingPrompt>, EndpointError> {
        let res = self
            .agent
            .get(self.url("/api/v1/ema/pending"))
            .query("subject", subject)
            .query("now_ms", now_ms.to_string())
            .call();
        Self::json(&Self::finish(res)?)
    }

    fn respond(&self, resp: &LabelResponse, now_ms: i64) -> Result<ResponseAck, EndpointError> {
        let res = self
            .agent
            .post(self.url("/api/v1/ema/response"))
            .query("now_ms", now_ms.to_string())
            .send_json(resp);
        Self::json(&Self::finish(res)?)
    }
}
