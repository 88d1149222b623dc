use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ActionSample, Policy, PolicyError, PolicyKind};
use crate::env::{DialogueState, Message};
use crate::topology::AgentId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_retries() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub agent: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireState {
    pub problem_id: String,
    pub transcript: Vec<WireMessage>,
}

/// Request body POSTed to the endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteRequest {
    pub state: WireState,
    pub n_samples: usize,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireAction {
    pub content: String,
    pub token_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteResponse {
    pub actions: Vec<WireAction>,
}

/// Client for an external agent served over HTTP+JSON.
#[derive(Debug, Clone)]
pub struct RemotePolicy {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemotePolicy {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_millis(config.timeout_ms)).build();
        Self { config, agent }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    pub fn request_for(state: &DialogueState, n_samples: usize, temperature: f64) -> RemoteRequest {
        RemoteRequest {
            state: WireState {
                problem_id: state.problem.id.clone(),
                transcript: state
                    .transcript
                    .iter()
                    .map(|m| WireMessage { agent: m.agent.to_string(), content: m.content.clone() })
                    .collect(),
            },
            n_samples,
            temperature,
        }
    }

    fn call(&self, request: &RemoteRequest) -> Result<RemoteResponse, PolicyError> {
        let mut last_err = String::new();
        for _ in 0..=self.config.retries {
            match self.agent.post(&self.config.endpoint).send_json(request) {
                Ok(resp) => {
                    let body = resp.into_string().map_err(|e| PolicyError::RemoteMalformedResponse(e.to_string()))?;
                    return serde_json::from_str(&body)
                        .map_err(|e| PolicyError::RemoteMalformedResponse(e.to_string()));
                }
                Err(ureq::Error::Status(code, _)) if code < 500 => {
                    return Err(PolicyError::RemoteUnavailable(format!("HTTP {code}")));
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(PolicyError::RemoteUnavailable(last_err))
    }
}

impl Policy for RemotePolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Remote
    }

    fn sample_actions(
        &self,
        state: &DialogueState,
        agent: &AgentId,
        d: usize,
        temperature: f64,
        _seed: u64,
    ) -> Result<Vec<ActionSample>, PolicyError> {
        if d == 0 {
            return Err(PolicyError::ZeroSamples);
        }
        let response = self.call(&Self::request_for(state, d, temperature))?;
        if response.actions.len() != d {
            return Err(PolicyError::RemoteMalformedResponse(format!(
                "asked for {d} actions, got {}",
                response.actions.len()
            )));
        }
        response
            .actions
            .into_iter()
            .map(|a| {
                if let Some(lp) = a.logprob {
                    if !lp.is_finite() || lp > 0.0 {
                        return Err(PolicyError::RemoteMalformedResponse(format!("invalid logprob {lp}")));
                    }
                }
                // Token counts are recomputed locally so every message uses one tokenizer.
                let message = Message::new(state.next_slot, agent.clone(), a.content);
                Ok(ActionSample { message, logprob: a.logprob })
            })
            .collect()
    }

    fn action_logprob(&self, _state: &DialogueState, _agent: &AgentId, _action: &Message) -> Result<f64, PolicyError> {
        Err(PolicyError::NotDifferentiable(PolicyKind::Remote))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_synthetic_tasks, Setting};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    /// Serve `bodies` in order, one per connection, returning captured request bodies.
    fn serve(bodies: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/sample", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in bodies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                seen.push(String::from_utf8(buf).unwrap());
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            seen
        });
        (url, handle)
    }

    fn state() -> DialogueState {
        DialogueState::initial(Arc::new(generate_synthetic_tasks(Setting::Debate, 1, 0).remove(0)))
    }

    #[test]
    fn round_trips_the_wire_protocol() {
        let body = r#"{"actions":[{"content":"fact: hi there","token_count":3,"logprob":-0.5},{"content":"<A>4</A>","token_count":1}]}"#;
        let (url, handle) = serve(vec![(200, body.into())]);
        let p = RemotePolicy::new(RemoteConfig { endpoint: url, timeout_ms: 5_000, retries: 0 });
        let out = p.sample_actions(&state(), &"A".into(), 2, 1.0, 0).unwrap();
        assert_eq!(out[0].message.content, "fact: hi there");
        assert_eq!(out[0].message.token_count, 3);
        assert_eq!(out[0].logprob, Some(-0.5));
        assert_eq!(out[1].logprob, None);
        let sent: serde_json::Value = serde_json::from_str(&handle.join().unwrap()[0]).unwrap();
        assert_eq!(sent["n_samples"], 2);
        assert_eq!(sent["temperature"], 1.0);
        assert_eq!(sent["state"]["transcript"], serde_json::json!([]));
        assert!(sent["state"]["problem_id"].is_string());
    }

    #[test]
    fn malformed_and_unavailable_responses_error() {
        let (url, handle) = serve(vec![(200, r#"{"actions":[]}"#.into()), (200, "not json".into())]);
        let p = RemotePolicy::new(RemoteConfig { endpoint: url, timeout_ms: 5_000, retries: 0 });
        assert!(matches!(p.sample_actions(&state(), &"A".into(), 1, 1.0, 0), Err(PolicyError::RemoteMalformedResponse(_))));
        assert!(matches!(p.sample_actions(&state(), &"A".into(), 1, 1.0, 0), Err(PolicyError::RemoteMalformedResponse(_))));
        handle.join().unwrap();

        let dead = RemotePolicy::new(RemoteConfig { endpoint: "http://127.0.0.1:9/x".into(), timeout_ms: 500, retries: 1 });
        assert!(matches!(dead.sample_actions(&state(), &"A".into(), 1, 1.0, 0), Err(PolicyError::RemoteUnavailable(_))));
        assert!(matches!(
            dead.action_logprob(&state(), &"A".into(), &Message::new(1, "A".into(), "x")),
            Err(PolicyError::NotDifferentiable(PolicyKind::Remote))
        ));
    }
}
