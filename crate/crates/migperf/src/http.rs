//! HTTP daemon. Routes come from the shared table in [`crate::command`].

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{on, MethodFilter, MethodRouter};
use axum::{Json, Router};
use serde_json::Value;

use crate::command::{Command, Output, Request, Route, ROUTES};
use crate::engine::Engine;
use crate::error::{ApiError, ErrorCode};

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.code.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl IntoResponse for Output {
    fn into_response(self) -> Response {
        match self {
            Output::Json(v) => Json(v).into_response(),
            Output::Text { content_type, body } => ([(header::CONTENT_TYPE, content_type)], body).into_response(),
        }
    }
}

type Params = BTreeMap<String, String>;

async fn handle(
    engine: Arc<Engine>,
    route: &'static Route,
    params: Params,
    query: Result<Query<Params>, QueryRejection>,
    body: Bytes,
) -> Result<Output, ApiError> {
    let Query(query) = query.map_err(|e| ApiError::invalid(e.body_text()))?;
    let body = if body.iter().all(u8::is_ascii_whitespace) {
        None
    } else {
        Some(
            serde_json::from_slice::<Value>(&body)
                .map_err(|e| ApiError::invalid(format!("request body is not JSON: {e}")))?,
        )
    };
    let req = Request {
        route,
        params,
        query,
        body,
    };
    let cmd = Command::from_request(&req)?;
    tokio::task::spawn_blocking(move || cmd.execute(&engine))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

fn method_filter(method: &str) -> MethodFilter {
    match method {
        "GET" => MethodFilter::GET,
        "POST" => MethodFilter::POST,
        "DELETE" => MethodFilter::DELETE,
        "PUT" => MethodFilter::PUT,
        other => panic!("unsupported method {other} in route table"),
    }
}

fn endpoint(route: &'static Route) -> MethodRouter<Arc<Engine>> {
    let filter = method_filter(route.method);
    if route.path.contains('{') {
        on(
            filter,
            move |State(engine): State<Arc<Engine>>,
                  Path(params): Path<Params>,
                  query: Result<Query<Params>, QueryRejection>,
                  body: Bytes| async move { handle(engine, route, params, query, body).await },
        )
    } else {
        on(
            filter,
            move |State(engine): State<Arc<Engine>>, query: Result<Query<Params>, QueryRejection>, body: Bytes| async move {
                handle(engine, route, Params::new(), query, body).await
            },
        )
    }
}

pub fn router(engine: Arc<Engine>) -> Router {
    let mut by_path: BTreeMap<&str, MethodRouter<Arc<Engine>>> = BTreeMap::new();
    for route in ROUTES {
        let ep = endpoint(route);
        let merged = match by_path.remove(route.path) {
            Some(existing) => existing.merge(ep),
            None => ep,
        };
        by_path.insert(route.path, merged);
    }
    let mut router = Router::new();
    for (path, mr) in by_path {
        router = router.route(path, mr);
    }
    router
        .fallback(|| async { ApiError::new(ErrorCode::NotFound, "no such endpoint") })
        .with_state(engine)
}

pub async fn serve(engine: Arc<Engine>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("migperf: listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(engine)).await
}
