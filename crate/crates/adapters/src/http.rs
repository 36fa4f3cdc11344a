use std::time::Duration;

use predex::{Error, Result};
use serde_json::Value;

use crate::retry::{count_network_call, excerpt};

pub(crate) fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

/// POST a JSON body and parse a JSON reply. Connection problems and non-200
/// statuses are retryable; an unparseable 200 body is a protocol error.
pub(crate) fn post_json(agent: &ureq::Agent, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value> {
    count_network_call();
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(token) = bearer {
        req = req.header("Authorization", format!("Bearer {token}"));
    }
    let mut resp = req.send_json(body).map_err(|e| Error::Retryable(format!("POST {url}: {e}")))?;
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| Error::Retryable(format!("POST {url}: reading body: {e}")))?;
    if status != 200 {
        return Err(Error::Retryable(format!("POST {url}: HTTP {status}: {}", excerpt(&text))));
    }
    serde_json::from_str(&text).map_err(|e| Error::Protocol(format!("POST {url}: {e}; payload: {}", excerpt(&text))))
}
