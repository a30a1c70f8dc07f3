//! HTTP/1.1 adapter over [`Referee`].
//!
//! | method | path               | body / auth                          |
//! |--------|--------------------|--------------------------------------|
//! | POST   | `/v1/login`        | `team_id=<s>&credential=<s>`         |
//! | GET    | `/v1/image/{index}`| `Authorization: Bearer <token>`      |
//! | POST   | `/v1/result`       | bearer; one detection per line       |
//! | POST   | `/v1/logout`       | bearer                               |

use std::io::Read;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::json;
use tiny_http::{Header, Method, Request, Response, Server};

use super::{Referee, RefereeError};

/// Bodies larger than this are refused.
const MAX_BODY: u64 = 16 << 20;

pub struct RefereeServer {
    referee: Arc<Referee>,
    server: Arc<Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl RefereeServer {
    /// Binds `addr` and starts `workers` request threads.
    pub fn start(referee: Arc<Referee>, addr: &str, workers: usize) -> std::io::Result<Self> {
        let server = Server::http(addr).map_err(std::io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("listener has no IP address"))?;
        let server = Arc::new(server);
        let workers = (0..workers.max(1))
            .map(|_| {
                let server = Arc::clone(&server);
                let referee = Arc::clone(&referee);
                std::thread::spawn(move || {
                    while let Ok(req) = server.recv() {
                        handle(&referee, req);
                    }
                })
            })
            .collect();
        Ok(Self {
            referee,
            server,
            addr,
            workers,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn referee(&self) -> &Arc<Referee> {
        &self.referee
    }

    /// Stops accepting requests and waits for the workers.
    pub fn stop(self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers {
            let _ = w.join();
        }
    }
}

fn header(name: &str, value: &str) -> Header {
    Header::from_bytes(name.as_bytes(), value.as_bytes()).expect("static header is valid")
}

fn json_response(status: u16, body: serde_json::Value) -> Response<std::io::Cursor<Vec<u8>>> {
    Response::from_data(body.to_string().into_bytes())
        .with_status_code(status)
        .with_header(header("Content-Type", "application/json"))
}

fn error_response(err: &RefereeError) -> Response<std::io::Cursor<Vec<u8>>> {
    let mut body = json!({ "error": err.to_string(), "kind": err.kind() });
    if let RefereeError::Validation(records) = err {
        body["records"] = json!(records);
    }
    json_response(err.status(), body)
}

fn bearer(req: &Request) -> Option<String> {
    req.headers()
        .iter()
        .find(|h| h.field.equiv("Authorization"))
        .and_then(|h| h.value.as_str().strip_prefix("Bearer "))
        .map(|t| t.trim().to_string())
}

fn read_body(req: &mut Request) -> Result<String, RefereeError> {
    let mut body = String::new();
    req.as_reader()
        .take(MAX_BODY)
        .read_to_string(&mut body)
        .map_err(|e| RefereeError::BadRequest(format!("unreadable body: {e}")))?;
    Ok(body)
}

fn handle(referee: &Referee, mut req: Request) {
    let method = req.method().clone();
    let path = req.url().split('?').next().unwrap_or("").to_string();
    let token = bearer(&req);
    let result = route(referee, &method, &path, token.as_deref(), &mut req);
    let response = match result {
        Ok(r) => r,
        Err(e) => {
            log::debug!("{method} {path}: {e}");
            error_response(&e)
        }
    };
    if let Err(e) = req.respond(response) {
        log::warn!("{method} {path}: failed to respond: {e}");
    }
}

type Reply = Response<std::io::Cursor<Vec<u8>>>;

fn route(
    referee: &Referee,
    method: &Method,
    path: &str,
    token: Option<&str>,
    req: &mut Request,
) -> Result<Reply, RefereeError> {
    let need_token = || token.ok_or(RefereeError::UnknownToken);
    match (method, path) {
        (Method::Post, "/v1/login") => {
            let body = read_body(req)?;
            let mut team = None;
            let mut credential = None;
            for (k, v) in url::form_urlencoded::parse(body.as_bytes()) {
                match k.as_ref() {
                    "team_id" => team = Some(v.into_owned()),
                    "credential" => credential = Some(v.into_owned()),
                    _ => {}
                }
            }
            let (Some(team), Some(credential)) = (team, credential) else {
                return Err(RefereeError::BadRequest(
                    "login body needs team_id and credential".into(),
                ));
            };
            let grant = referee.login(&team, &credential)?;
            Ok(json_response(200, json!(grant)))
        }
        (Method::Get, p) if p.starts_with("/v1/image/") => {
            let token = need_token()?;
            let raw = &p["/v1/image/".len()..];
            let index: usize = raw
                .parse()
                .map_err(|_| RefereeError::BadRequest(format!("bad image index `{raw}`")))?;
            let image = referee.get_image(token, index)?;
            Ok(Response::from_data(image.payload.clone())
                .with_header(header("Content-Type", &image.media_type))
                .with_header(header("X-Image-Id", &image.image_id)))
        }
        (Method::Post, "/v1/result") => {
            let token = need_token()?;
            let body = read_body(req)?;
            let accepted = referee.post_result(token, &body)?;
            Ok(json_response(200, json!({ "accepted": accepted })))
        }
        (Method::Post, "/v1/logout") => {
            let token = need_token()?;
            let window = referee.logout(token)?;
            Ok(json_response(200, json!(window)))
        }
        _ => Ok(json_response(
            404,
            json!({ "error": format!("no route for {method} {path}"), "kind": "no_route" }),
        )),
    }
}
