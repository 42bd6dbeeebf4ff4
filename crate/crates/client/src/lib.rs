//! Typed client for the formloop service.

use formloop_core::protocol::{
    CreateSession, ErrorBody, EventEnvelope, PoseUpdate, SceneSnapshot, SessionCreated, StudyRequest, StudyResponse,
    TrackRequest, TrackResponse, VersionResponse, WindResult, WindRunAccepted, WindRunRequest, API_PREFIX,
};
use formloop_core::scene::Scene;
use formloop_core::wind::{read_binary, FieldExport};
use futures::stream::BoxStream;
use futures::StreamExt;
use reqwest::{RequestBuilder, Response};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("server returned {status}: {}", body.message)]
    Api { status: u16, body: ErrorBody },
    #[error("bad response: {0}")]
    Decode(String),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

/// A binary field export and the scene version it was solved for.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedField {
    pub field: FieldExport,
    pub scene_version: u64,
    pub stale: bool,
}

impl Client {
    /// `base` is the server root, e.g. `http://127.0.0.1:7780`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{API_PREFIX}{path}", self.base)
    }

    async fn send(req: RequestBuilder) -> Result<Response> {
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let bytes = resp.bytes().await?;
        let body = serde_json::from_slice(&bytes).unwrap_or_else(|_| ErrorBody {
            error: "http".into(),
            message: String::from_utf8_lossy(&bytes).into_owned(),
        });
        Err(ClientError::Api {
            status: status.as_u16(),
            body,
        })
    }

    async fn json<T: DeserializeOwned>(req: RequestBuilder) -> Result<T> {
        let bytes = Self::send(req).await?.bytes().await?;
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode(e.to_string()))
    }

    fn post<B: Serialize>(&self, path: &str, body: &B) -> RequestBuilder {
        self.http.post(self.url(path)).json(body)
    }

    pub async fn health(&self) -> Result<()> {
        Self::send(self.http.get(self.url("/health"))).await.map(|_| ())
    }

    pub async fn sessions(&self) -> Result<Vec<String>> {
        Self::json(self.http.get(self.url("/sessions"))).await
    }

    /// `None` starts from the default three-block tabletop.
    pub async fn create_session(&self, scene: Option<Scene>) -> Result<SessionCreated> {
        Self::json(self.post("/sessions", &CreateSession { scene })).await
    }

    pub async fn scene(&self, session: &str) -> Result<SceneSnapshot> {
        Self::json(self.http.get(self.url(&format!("/sessions/{session}")))).await
    }

    /// Returns the new scene version.
    pub async fn set_pose(&self, session: &str, block: &str, update: &PoseUpdate) -> Result<u64> {
        let r: VersionResponse = Self::json(self.post(&format!("/sessions/{session}/blocks/{block}/pose"), update)).await?;
        Ok(r.version)
    }

    pub async fn start_wind(&self, session: &str, req: &WindRunRequest) -> Result<WindRunAccepted> {
        Self::json(self.post(&format!("/sessions/{session}/wind"), req)).await
    }

    pub async fn wind(&self, session: &str) -> Result<WindResult> {
        Self::json(self.http.get(self.url(&format!("/sessions/{session}/wind")))).await
    }

    pub async fn wind_binary(&self, session: &str) -> Result<TaggedField> {
        let resp = Self::send(self.http.get(self.url(&format!("/sessions/{session}/wind.bin")))).await?;
        let header = |name: &str| {
            resp.headers()
                .get(name)
                .and_then(|v| v.to_str().ok())
                .map(str::to_owned)
                .ok_or_else(|| ClientError::Decode(format!("missing {name} header")))
        };
        let scene_version = header("x-scene-version")?
            .parse()
            .map_err(|_| ClientError::Decode("bad x-scene-version".into()))?;
        let stale = header("x-stale")? == "true";
        let bytes = resp.bytes().await?;
        let field = read_binary(&bytes[..]).map_err(|e| ClientError::Decode(e.to_string()))?;
        Ok(TaggedField {
            field,
            scene_version,
            stale,
        })
    }

    /// Subscribes to the session's event stream. Events emitted after this
    /// returns are delivered in order.
    pub async fn events(&self, session: &str) -> Result<EventStream> {
        let resp = Self::send(self.http.get(self.url(&format!("/sessions/{session}/events")))).await?;
        Ok(EventStream {
            body: resp.bytes_stream().map(|r| r.map(|b| b.to_vec())).boxed(),
            buf: Vec::new(),
        })
    }

    pub async fn track(&self, req: &TrackRequest) -> Result<TrackResponse> {
        Self::json(self.post("/track", req)).await
    }

    pub async fn study(&self, req: &StudyRequest) -> Result<StudyResponse> {
        Self::json(self.post("/study", req)).await
    }
}

/// Newline-delimited JSON events from one session.
pub struct EventStream {
    body: BoxStream<'static, reqwest::Result<Vec<u8>>>,
    buf: Vec<u8>,
}

impl EventStream {
    /// Next event, or `None` once the server closes the stream.
    pub async fn next(&mut self) -> Option<Result<EventEnvelope>> {
        loop {
            if let Some(pos) = self.buf.iter().position(|b| *b == b'\n') {
                let line: Vec<u8> = self.buf.drain(..=pos).collect();
                return Some(serde_json::from_slice(&line[..pos]).map_err(|e| ClientError::Decode(e.to_string())));
            }
            match self.body.next().await? {
                Ok(chunk) => self.buf.extend_from_slice(&chunk),
                Err(e) => return Some(Err(e.into())),
            }
        }
    }

    /// Reads until `stop` matches, returning every event read including the
    /// matching one.
    pub async fn collect_until(&mut self, mut stop: impl FnMut(&EventEnvelope) -> bool) -> Result<Vec<EventEnvelope>> {
        let mut out = Vec::new();
        while let Some(ev) = self.next().await {
            let ev = ev?;
            let done = stop(&ev);
            out.push(ev);
            if done {
                return Ok(out);
            }
        }
        Err(ClientError::Decode("event stream closed".into()))
    }
}
