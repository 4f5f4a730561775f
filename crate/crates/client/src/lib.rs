//! Async client for the annotation service.

use rehearsal_core::ed::api::ApiErrorBody;
use rehearsal_core::ed::{AnnotationRequest, AnnotationResponse, AnnotationStatus, ClassDetail, ClassSummary};
use rehearsal_core::ClassId;
use reqwest::{RequestBuilder, Response, StatusCode};
use serde::de::DeserializeOwned;
use thiserror::Error;

/// Header carrying the optional shared token. Mirrors the server constant.
pub const TOKEN_HEADER: &str = "x-annotation-token";

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("{status}: {} ({})", body.error, body.kind)]
    Api { status: StatusCode, body: ApiErrorBody },
    #[error("{status}: {text}")]
    Unexpected { status: StatusCode, text: String },
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            Self::Http(e) => e.status(),
            Self::Api { status, .. } | Self::Unexpected { status, .. } => Some(*status),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    base: String,
    token: Option<String>,
}

impl Client {
    /// `base` is e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>, token: Option<String>) -> Self {
        Self {
            http: reqwest::Client::new(),
            base: base.into().trim_end_matches('/').to_string(),
            token,
        }
    }

    fn req(&self, builder: RequestBuilder) -> RequestBuilder {
        match &self.token {
            Some(t) => builder.header(TOKEN_HEADER, t),
            None => builder,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn check(resp: Response) -> Result<Response, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().await?;
        Err(match serde_json::from_str::<ApiErrorBody>(&text) {
            Ok(body) => ClientError::Api { status, body },
            Err(_) => ClientError::Unexpected { status, text },
        })
    }

    async fn json<T: DeserializeOwned>(&self, builder: RequestBuilder) -> Result<T, ClientError> {
        let resp = Self::check(self.req(builder).send().await?).await?;
        Ok(resp.json().await?)
    }

    pub async fn health(&self) -> Result<(), ClientError> {
        Self::check(self.http.get(self.url("/health")).send().await?).await?;
        Ok(())
    }

    pub async fn classes(&self, status: Option<AnnotationStatus>) -> Result<Vec<ClassSummary>, ClientError> {
        let mut b = self.http.get(self.url("/classes"));
        if let Some(s) = status {
            b = b.query(&[("status", s.to_string())]);
        }
        self.json(b).await
    }

    pub async fn candidates(&self, id: ClassId) -> Result<ClassDetail, ClientError> {
        self.json(self.http.get(self.url(&format!("/classes/{id}/candidates"))))
            .await
    }

    pub async fn annotate(&self, id: ClassId, req: &AnnotationRequest) -> Result<AnnotationResponse, ClientError> {
        self.json(self.http.post(self.url(&format!("/classes/{id}/annotation"))).json(req))
            .await
    }

    /// The exported description file, verbatim.
    pub async fn export(&self, partial: bool) -> Result<String, ClientError> {
        let b = self.http.get(self.url("/export")).query(&[("partial", partial)]);
        let resp = Self::check(self.req(b).send().await?).await?;
        Ok(resp.text().await?)
    }
}
