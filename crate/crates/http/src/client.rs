//! [`Teacher`] implementation that talks to a teacher server.

use std::time::Duration;

use activemix::{Error, Image, Result, Teacher, TeacherInfo};
use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;

use crate::wire::{ErrorBody, PredictRequest, PredictResponse};

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8080`.
    pub url: String,
    pub timeout: Duration,
    /// Images per request.
    pub batch_limit: usize,
    /// Concurrent requests per query.
    pub max_in_flight: usize,
    /// Retries after the first attempt.
    pub retries: u32,
    /// Delay before the first retry; doubled for each further retry.
    pub backoff: Duration,
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>) -> Self {
        RemoteConfig {
            url: url.into(),
            timeout: Duration::from_secs(30),
            batch_limit: 256,
            max_in_flight: 1,
            retries: 3,
            backoff: Duration::from_millis(100),
        }
    }
}

#[derive(Debug)]
pub struct RemoteTeacher {
    client: Client,
    base: String,
    info: TeacherInfo,
    cfg: RemoteConfig,
}

/// Outcome of one HTTP attempt: retry-worthy or final.
enum Attempt<T> {
    Done(Result<T>),
    Retry(Error),
}

impl RemoteTeacher {
    /// Connects and fetches `/info`.
    pub fn connect(cfg: RemoteConfig) -> Result<Self> {
        if cfg.batch_limit == 0 {
            return Err(Error::input("batch_limit must be at least 1"));
        }
        let client = Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let base = cfg.url.trim_end_matches('/').to_string();
        let mut t = RemoteTeacher {
            client,
            base,
            info: TeacherInfo {
                num_classes: 0,
                input_shape: [0; 3],
                model_id: String::new(),
            },
            cfg,
        };
        t.info = t.with_retries(|| {
            let resp = t.client.get(format!("{}/info", t.base)).send();
            classify(resp, |r| {
                let bytes = r.bytes().map_err(|e| Error::Transport(e.to_string()))?;
                serde_json::from_slice::<TeacherInfo>(&bytes)
                    .map_err(|e| Error::Protocol(format!("bad /info body: {e}")))
            })
        })?;
        if t.info.num_classes < 2 || t.info.input_shape.contains(&0) {
            return Err(Error::Protocol(format!("implausible /info: {:?}", t.info)));
        }
        Ok(t)
    }

    fn with_retries<T>(&self, mut attempt: impl FnMut() -> Attempt<T>) -> Result<T> {
        let mut delay = self.cfg.backoff;
        let mut tries = 0;
        loop {
            match attempt() {
                Attempt::Done(r) => return r,
                Attempt::Retry(e) if tries >= self.cfg.retries => {
                    return Err(match e {
                        Error::Transport(m) => {
                            Error::Transport(format!("{m} (gave up after {} attempts)", tries + 1))
                        }
                        other => other,
                    })
                }
                Attempt::Retry(_) => {
                    std::thread::sleep(delay);
                    delay *= 2;
                    tries += 1;
                }
            }
        }
    }
}

fn classify<T>(
    resp: reqwest::Result<Response>,
    parse: impl FnOnce(Response) -> Result<T>,
) -> Attempt<T> {
    match resp {
        Err(e) => Attempt::Retry(Error::Transport(e.to_string())),
        Ok(r) if r.status().is_success() => Attempt::Done(parse(r)),
        Ok(r) if r.status().is_server_error() => {
            Attempt::Retry(Error::Transport(format!("server answered {}", r.status())))
        }
        Ok(r) => {
            let status = r.status();
            let msg = r
                .bytes()
                .ok()
                .and_then(|b| serde_json::from_slice::<ErrorBody>(&b).ok())
                .map(|b| b.error)
                .unwrap_or_default();
            let kind = if status == StatusCode::PAYLOAD_TOO_LARGE {
                "batch too large"
            } else {
                "request rejected"
            };
            Attempt::Done(Err(Error::Protocol(format!("{kind} ({status}): {msg}"))))
        }
    }
}

impl Teacher for RemoteTeacher {
    fn info(&self) -> &TeacherInfo {
        &self.info
    }

    fn batch_limit(&self) -> Option<usize> {
        Some(self.cfg.batch_limit)
    }

    fn max_in_flight(&self) -> usize {
        self.cfg.max_in_flight
    }

    fn predict_batch(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        let Some(first) = images.first() else {
            return Ok(Vec::new());
        };
        let [h, w, c] = first.shape();
        let req = PredictRequest {
            shape: vec![images.len(), h, w, c],
            pixels: images
                .iter()
                .flat_map(|im| im.pixels().iter().copied())
                .collect(),
        };
        let body = serde_json::to_vec(&req).map_err(|e| Error::logic(e.to_string()))?;
        self.with_retries(|| {
            let resp = self
                .client
                .post(format!("{}/predict", self.base))
                .header("content-type", "application/json")
                .body(body.clone())
                .send();
            classify(resp, |r| {
                let bytes = r.bytes().map_err(|e| Error::Transport(e.to_string()))?;
                serde_json::from_slice::<PredictResponse>(&bytes)
                    .map(|p| p.probs)
                    .map_err(|e| Error::Protocol(format!("bad /predict body: {e}")))
            })
        })
    }
}
