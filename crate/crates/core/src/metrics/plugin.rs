//! Out-of-process metrics.
//!
//! Wire contract, shared by both transports: the request is JSONL, one
//! `{"id", "source", "hypothesis", "reference"}` object per document
//! (`source`/`reference` omitted when not available); the response is JSONL,
//! one `{"id", "score"}` object per requested id, in any order.
//!
//! * `subprocess`: the command is spawned once per batch, requests are
//!   written to its stdin, responses read from its stdout.
//! * `http`: the request lines are POSTed as `application/x-ndjson`, the
//!   response body holds the response lines.
//!
//! Calls on one plugin instance are serialized.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Metric, MetricError, MetricPlugin, Orientation, ScoreRequest, Transport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PluginConfig {
    pub name: String,
    pub transport: Transport,
    #[serde(default)]
    pub command: Vec<String>,
    #[serde(default)]
    pub url: Option<String>,
    pub orientation: Orientation,
    #[serde(default)]
    pub needs_reference: bool,
    #[serde(default)]
    pub needs_source: bool,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    600
}

impl PluginConfig {
    pub fn from_toml(text: &str) -> Result<Self, MetricError> {
        let cfg: PluginConfig =
            toml::from_str(text).map_err(|e| MetricError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, MetricError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MetricError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            MetricError::Config(m) => MetricError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn validate(&self) -> Result<(), MetricError> {
        match self.transport {
            Transport::Subprocess if self.command.is_empty() => Err(MetricError::Config(
                "subprocess transport requires a non-empty `command`".into(),
            )),
            Transport::Http if self.url.is_none() => {
                Err(MetricError::Config("http transport requires `url`".into()))
            }
            Transport::Builtin => Err(MetricError::Config(
                "builtin metrics are not configured through plugin files".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    source: Option<&'a str>,
    hypothesis: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference: Option<&'a str>,
}

#[derive(Deserialize)]
struct WireResponse {
    id: String,
    score: f64,
}

pub fn encode_requests(items: &[ScoreRequest<'_>]) -> String {
    let mut out = String::new();
    for i in items {
        let line = serde_json::to_string(&WireRequest {
            id: i.id,
            source: i.source,
            hypothesis: i.hypothesis,
            reference: i.reference,
        })
        .expect("request serializes");
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Parses response lines and aligns them with `items`.
pub fn decode_responses(items: &[ScoreRequest<'_>], body: &str) -> Result<Vec<f64>, MetricError> {
    let mut scores: HashMap<String, f64> = HashMap::new();
    for (n, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: WireResponse = serde_json::from_str(line).map_err(|e| {
            MetricError::PluginProtocol(format!("response line {}: {e}", n + 1))
        })?;
        if scores.insert(r.id.clone(), r.score).is_some() {
            return Err(MetricError::PluginProtocol(format!("duplicate score for {}", r.id)));
        }
    }
    let mut out = Vec::with_capacity(items.len());
    for i in items {
        match scores.remove(i.id) {
            Some(s) if s.is_finite() => out.push(s),
            Some(_) => {
                return Err(MetricError::PluginProtocol(format!("non-finite score for {}", i.id)))
            }
            None => {
                return Err(MetricError::PluginProtocol(format!("missing score for {}", i.id)))
            }
        }
    }
    if let Some(extra) = scores.keys().next() {
        return Err(MetricError::PluginProtocol(format!("unexpected id {extra}")));
    }
    Ok(out)
}

pub struct ExternalMetric {
    desc: MetricPlugin,
    config: PluginConfig,
    lock: Mutex<()>,
}

impl ExternalMetric {
    pub fn new(config: PluginConfig) -> Result<Self, MetricError> {
        config.validate()?;
        Ok(ExternalMetric {
            desc: MetricPlugin {
                name: config.name.clone(),
                orientation: config.orientation,
                needs_reference: config.needs_reference,
                needs_source: config.needs_source,
                transport: config.transport,
            },
            config,
            lock: Mutex::new(()),
        })
    }

    fn run_subprocess(&self, payload: &str) -> Result<String, MetricError> {
        let (program, args) = self.config.command.split_first().expect("validated");
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| MetricError::Transport(format!("spawn {program}: {e}")))?;
        let mut stdin = child.stdin.take().expect("stdin piped");
        let payload = payload.to_string();
        let writer = std::thread::spawn(move || {
            let r = stdin.write_all(payload.as_bytes());
            drop(stdin);
            r
        });
        let output = child
            .wait_with_output()
            .map_err(|e| MetricError::Transport(e.to_string()))?;
        match writer.join() {
            Ok(Ok(())) => {}
            // The plugin may legitimately exit before draining stdin.
            Ok(Err(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
            Ok(Err(e)) => return Err(MetricError::Transport(e.to_string())),
            Err(_) => return Err(MetricError::Transport("stdin writer panicked".into())),
        }
        if !output.status.success() {
            return Err(MetricError::Transport(format!(
                "{program} exited with {}",
                output.status
            )));
        }
        String::from_utf8(output.stdout)
            .map_err(|e| MetricError::PluginProtocol(format!("non-UTF-8 output: {e}")))
    }

    fn run_http(&self, payload: &str) -> Result<String, MetricError> {
        let url = self.config.url.as_deref().expect("validated");
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(self.config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let mut resp = agent
            .post(url)
            .header("Content-Type", "application/x-ndjson")
            .send(payload)
            .map_err(|e| MetricError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| MetricError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(MetricError::Transport(format!("HTTP {status}: {body}")));
        }
        Ok(body)
    }
}

impl Metric for ExternalMetric {
    fn descriptor(&self) -> &MetricPlugin {
        &self.desc
    }

    fn score_batch(&self, items: &[ScoreRequest<'_>]) -> Result<Vec<f64>, MetricError> {
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let _guard = self.lock.lock().expect("plugin lock poisoned");
        let payload = encode_requests(items);
        let body = match self.config.transport {
            Transport::Subprocess => self.run_subprocess(&payload)?,
            Transport::Http => self.run_http(&payload)?,
            Transport::Builtin => unreachable!("rejected by validate"),
        };
        decode_responses(items, &body)
    }
}
