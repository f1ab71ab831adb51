//! Client for a running daemon.

use serde_json::Value;

use crate::command::{Command, Output};
use crate::error::{ApiError, ErrorCode};

pub struct RemoteClient {
    base: String,
    agent: ureq::Agent,
}

impl RemoteClient {
    pub fn new(base: &str) -> RemoteClient {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        RemoteClient {
            base: base.trim_end_matches('/').to_string(),
            agent,
        }
    }

    pub fn execute(&self, cmd: &Command) -> Result<Output, ApiError> {
        let req = cmd.to_request();
        let url = format!("{}{}", self.base, req.path());
        let unreachable = |e: ureq::Error| ApiError::internal(format!("{url}: {e}"));
        let mut response = match req.route.method {
            "GET" | "DELETE" => {
                let mut b = if req.route.method == "GET" {
                    self.agent.get(&url)
                } else {
                    self.agent.delete(&url)
                };
                for (k, v) in &req.query {
                    b = b.query(k, v);
                }
                b.call().map_err(unreachable)?
            }
            _ => {
                let mut b = self.agent.post(&url);
                for (k, v) in &req.query {
                    b = b.query(k, v);
                }
                let body = req.body.clone().unwrap_or(Value::Object(Default::default()));
                b.send_json(&body).map_err(unreachable)?
            }
        };
        let status = response.status().as_u16();
        let content_type = response
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .unwrap_or("")
            .to_string();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| ApiError::internal(format!("{url}: {e}")))?;
        if status >= 400 {
            return Err(serde_json::from_str::<ApiError>(&text)
                .unwrap_or_else(|_| ApiError::new(ErrorCode::Internal, format!("HTTP {status}: {text}"))));
        }
        if content_type.starts_with("application/json") {
            let v = serde_json::from_str(&text).map_err(|e| ApiError::internal(format!("{url}: {e}")))?;
            Ok(Output::Json(v))
        } else if content_type.starts_with("text/csv") {
            Ok(Output::Text {
                content_type: crate::command::CSV_CONTENT_TYPE,
                body: text,
            })
        } else {
            Ok(Output::Text {
                content_type: crate::command::PROM_CONTENT_TYPE,
                body: text,
            })
        }
    }
}
