//! Scripted HTTP endpoint that records every request.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Request, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Router;

#[derive(Debug, Clone)]
pub struct Recorded {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
    pub status: u16,
}

impl Recorded {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

#[derive(Default)]
struct StubState {
    script: VecDeque<u16>,
    default_status: u16,
    response_body: String,
    content_type: String,
    requests: Vec<Recorded>,
}

#[derive(Clone)]
pub struct HttpStub {
    addr: SocketAddr,
    state: Arc<Mutex<StubState>>,
    task: Arc<tokio::task::AbortHandle>,
}

async fn handle(State(state): State<Arc<Mutex<StubState>>>, req: Request) -> Response {
    let (parts, body) = req.into_parts();
    let body: Bytes = axum::body::to_bytes(body, usize::MAX).await.unwrap_or_default();
    let mut s = state.lock().unwrap();
    let status = s.script.pop_front().unwrap_or(s.default_status);
    let path = parts
        .uri
        .path_and_query()
        .map(|p| p.as_str().to_string())
        .unwrap_or_default();
    s.requests.push(Recorded {
        method: parts.method.to_string(),
        path,
        headers: parts
            .headers
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_str().unwrap_or_default().to_string()))
            .collect(),
        body: String::from_utf8_lossy(&body).into_owned(),
        status,
    });
    let code = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (
        code,
        [(axum::http::header::CONTENT_TYPE, s.content_type.clone())],
        s.response_body.clone(),
    )
        .into_response()
}

impl HttpStub {
    /// Starts a stub answering `default_status` once `script` is exhausted.
    pub async fn start(script: impl IntoIterator<Item = u16>, default_status: u16) -> Self {
        let state = Arc::new(Mutex::new(StubState {
            script: script.into_iter().collect(),
            default_status,
            content_type: "text/plain".into(),
            ..Default::default()
        }));
        let app = Router::new().fallback(handle).with_state(state.clone());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.expect("bind stub");
        let addr = listener.local_addr().unwrap();
        let task = tokio::spawn(async move {
            let _ = axum::serve(listener, app).await;
        });
        HttpStub {
            addr,
            state,
            task: Arc::new(task.abort_handle()),
        }
    }

    /// Serves `body` as JSON on every request.
    pub async fn json(body: impl Into<String>, status: u16) -> Self {
        let stub = Self::start([], status).await;
        {
            let mut s = stub.state.lock().unwrap();
            s.response_body = body.into();
            s.content_type = "application/json".into();
        }
        stub
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    pub fn push_script(&self, statuses: impl IntoIterator<Item = u16>) {
        self.state.lock().unwrap().script.extend(statuses);
    }

    pub fn requests(&self) -> Vec<Recorded> {
        self.state.lock().unwrap().requests.clone()
    }

    /// Requests that were answered with a 2xx status.
    pub fn accepted(&self) -> Vec<Recorded> {
        self.requests()
            .into_iter()
            .filter(|r| (200..300).contains(&r.status))
            .collect()
    }

    pub fn stop(&self) {
        self.task.abort();
    }
}
