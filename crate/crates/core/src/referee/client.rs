//! Reference contestant: logs in, fetches every image, posts canned answers
//! at a fixed pace and logs out.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use ureq::Agent;

use super::service::{FinalWindow, LoginGrant};
use crate::dataset::format_detections;
use crate::scoring::Detection;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("{endpoint}: {source}")]
    Transport {
        endpoint: String,
        #[source]
        source: ureq::Error,
    },
    #[error("{endpoint}: HTTP {status}: {body}")]
    Status {
        endpoint: String,
        status: u16,
        body: String,
    },
    #[error("{endpoint}: malformed response: {reason}")]
    Protocol { endpoint: String, reason: String },
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }

    /// True when the referee said the session window is over.
    pub fn is_session_over(&self) -> bool {
        self.status() == Some(410)
    }
}

/// Thin blocking client for the referee endpoints.
pub struct RefereeClient {
    agent: Agent,
    base: String,
}

impl RefereeClient {
    /// `server` is `host:port` or a full `http://` base URL.
    pub fn new(server: &str) -> Self {
        let base = if server.starts_with("http://") || server.starts_with("https://") {
            server.trim_end_matches('/').to_string()
        } else {
            format!("http://{server}")
        };
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        Self { agent, base }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn finish(
        endpoint: &str,
        resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<ureq::http::Response<ureq::Body>, ClientError> {
        let mut resp = resp.map_err(|source| ClientError::Transport {
            endpoint: endpoint.to_string(),
            source,
        })?;
        let status = resp.status().as_u16();
        if status == 200 {
            return Ok(resp);
        }
        let body = resp.body_mut().read_to_string().unwrap_or_default();
        Err(ClientError::Status {
            endpoint: endpoint.to_string(),
            status,
            body,
        })
    }

    fn json<T: for<'de> Deserialize<'de>>(
        endpoint: &str,
        mut resp: ureq::http::Response<ureq::Body>,
    ) -> Result<T, ClientError> {
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|source| ClientError::Transport {
                endpoint: endpoint.to_string(),
                source,
            })?;
        serde_json::from_str(&text).map_err(|e| ClientError::Protocol {
            endpoint: endpoint.to_string(),
            reason: e.to_string(),
        })
    }

    pub fn login(&self, team_id: &str, credential: &str) -> Result<LoginGrant, ClientError> {
        let body = url::form_urlencoded::Serializer::new(String::new())
            .append_pair("team_id", team_id)
            .append_pair("credential", credential)
            .finish();
        let ep = "POST /v1/login";
        let resp = self
            .agent
            .post(self.url("/v1/login"))
            .header("Content-Type", "application/x-www-form-urlencoded")
            .send(body.as_str());
        Self::json(ep, Self::finish(ep, resp)?)
    }

    /// Image bytes and media type.
    pub fn get_image(&self, token: &str, index: usize) -> Result<(Vec<u8>, String), ClientError> {
        let ep = format!("GET /v1/image/{index}");
        let resp = self
            .agent
            .get(self.url(&format!("/v1/image/{index}")))
            .header("Authorization", &format!("Bearer {token}"))
            .call();
        let mut resp = Self::finish(&ep, resp)?;
        let media = resp
            .headers()
            .get("Content-Type")
            .and_then(|v| v.to_str().ok())
            .unwrap_or("application/octet-stream")
            .to_string();
        let bytes = resp
            .body_mut()
            .read_to_vec()
            .map_err(|source| ClientError::Transport {
                endpoint: ep.clone(),
                source,
            })?;
        Ok((bytes, media))
    }

    /// Posts an answer body; returns the accepted count.
    pub fn post_result(&self, token: &str, body: &str) -> Result<usize, ClientError> {
        #[derive(Deserialize)]
        struct Accepted {
            accepted: usize,
        }
        let ep = "POST /v1/result";
        let resp = self
            .agent
            .post(self.url("/v1/result"))
            .header("Authorization", &format!("Bearer {token}"))
            .header("Content-Type", "text/plain")
            .send(body);
        let a: Accepted = Self::json(ep, Self::finish(ep, resp)?)?;
        Ok(a.accepted)
    }

    pub fn logout(&self, token: &str) -> Result<FinalWindow, ClientError> {
        let ep = "POST /v1/logout";
        let resp = self
            .agent
            .post(self.url("/v1/logout"))
            .header("Authorization", &format!("Bearer {token}"))
            .send_empty();
        Self::json(ep, Self::finish(ep, resp)?)
    }
}

#[derive(Debug, Clone)]
pub struct SimulationOptions {
    pub team_id: String,
    pub credential: String,
    /// Pause before each answer post.
    pub pace: Duration,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SimulationSummary {
    pub n_images: usize,
    pub images_fetched: usize,
    pub posts_accepted: usize,
    pub posts_rejected: usize,
    pub detections_accepted: usize,
    pub final_window: Option<FinalWindow>,
    /// Errors the referee returned, in order.
    pub errors: Vec<String>,
}

impl SimulationSummary {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty() && self.final_window.is_some()
    }
}

/// Runs one contestant session. Login failure is fatal; later per-request
/// errors are collected in the summary so a partial run can be inspected.
pub fn simulate_contestant(
    server: &str,
    answers: &[Detection],
    opts: &SimulationOptions,
) -> Result<SimulationSummary, ClientError> {
    let client = RefereeClient::new(server);
    let grant = client.login(&opts.team_id, &opts.credential)?;
    let mut summary = SimulationSummary {
        n_images: grant.n_images,
        ..Default::default()
    };

    for index in 1..=grant.n_images {
        match client.get_image(&grant.token, index) {
            Ok(_) => summary.images_fetched += 1,
            Err(e) => {
                let over = e.is_session_over();
                summary.errors.push(e.to_string());
                if over || e.status().is_none() {
                    break;
                }
            }
        }
    }

    // one post per image, in first-appearance order
    let mut order: Vec<&str> = Vec::new();
    let mut by_image: std::collections::HashMap<&str, Vec<&Detection>> = Default::default();
    for d in answers {
        by_image
            .entry(d.image_id.as_str())
            .or_insert_with(|| {
                order.push(d.image_id.as_str());
                Vec::new()
            })
            .push(d);
    }
    for image_id in order {
        if !opts.pace.is_zero() {
            std::thread::sleep(opts.pace);
        }
        let body = format_detections(by_image[image_id].iter().copied());
        match client.post_result(&grant.token, &body) {
            Ok(n) => {
                summary.posts_accepted += 1;
                summary.detections_accepted += n;
            }
            Err(e) => {
                summary.posts_rejected += 1;
                summary.errors.push(e.to_string());
                if e.status().is_none() {
                    return Err(e);
                }
            }
        }
    }

    match client.logout(&grant.token) {
        Ok(w) => summary.final_window = Some(w),
        Err(e) if e.status().is_some() => summary.errors.push(e.to_string()),
        Err(e) => return Err(e),
    }
    Ok(summary)
}
