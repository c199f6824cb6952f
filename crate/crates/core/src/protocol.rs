//! Newline-delimited JSON protocol for external agents.
//!
//! The harness sends `reset`, then one `observation` per step and waits for
//! exactly one `action` in reply; a final `result` closes the episode. Depth
//! and segmentation images travel as base64 of little-endian row-major
//! `f32` / `u16` buffers.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, AgentError};
use crate::eval::EpisodeResult;
use crate::sim::{Action, GoalSpec, Joints, Mode, Observation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("payload {what}: expected {expected} bytes, got {got}")]
    Truncated {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("unexpected message: expected {expected}, got {got}")]
    Unexpected { expected: &'static str, got: String },
    #[error("connection closed")]
    Closed,
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for ProtocolError {
    fn from(e: std::io::Error) -> Self {
        ProtocolError::Io(e.to_string())
    }
}

impl From<ProtocolError> for AgentError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::Io(s) => AgentError::Io(s),
            other => AgentError::Protocol(other.to_string()),
        }
    }
}

/// Episode parameters an external agent needs besides the goal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResetConfig {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireObservation {
    pub step: u32,
    pub width: usize,
    pub height: usize,
    pub depth_b64_f32le: String,
    pub semantic_b64_u16le: String,
    /// `[instance id, perceived category]` for every id in the segmentation.
    pub labels: Vec<(u16, String)>,
    pub pose: [f64; 3],
    pub joints: Joints,
    pub mode: Mode,
    pub holding: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireResult {
    pub episode: String,
    pub find_obj: bool,
    pub pick: bool,
    pub find_rec: bool,
    pub place: bool,
    pub overall: bool,
    pub partial: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Reset {
        episode: String,
        goal_spec: GoalSpec,
        config: ResetConfig,
    },
    /// Acknowledges a reset.
    Ready,
    Observation(WireObservation),
    Action {
        action: Action,
    },
    Result(WireResult),
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Reset { .. } => "reset",
            Message::Ready => "ready",
            Message::Observation(_) => "observation",
            Message::Action { .. } => "action",
            Message::Result(_) => "result",
        }
    }
}

pub fn encode_f32le(values: &[f32]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_f32le(s: &str, count: usize) -> Result<Vec<f32>, ProtocolError> {
    let bytes = STANDARD
        .decode(s)
        .map_err(|e| ProtocolError::Malformed(format!("depth base64: {e}")))?;
    if bytes.len() != 4 * count {
        return Err(ProtocolError::Truncated {
            what: "depth",
            expected: 4 * count,
            got: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn encode_u16le(values: &[u16]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_u16le(s: &str, count: usize) -> Result<Vec<u16>, ProtocolError> {
    let bytes = STANDARD
        .decode(s)
        .map_err(|e| ProtocolError::Malformed(format!("semantic base64: {e}")))?;
    if bytes.len() != 2 * count {
        return Err(ProtocolError::Truncated {
            what: "semantic",
            expected: 2 * count,
            got: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect())
}

impl WireObservation {
    pub fn encode(obs: &Observation) -> Self {
        Self {
            step: obs.step,
            width: obs.width,
            height: obs.height,
            depth_b64_f32le: encode_f32le(&obs.depth),
            semantic_b64_u16le: encode_u16le(&obs.semantic),
            labels: obs.labels.iter().map(|(k, v)| (*k, v.clone())).collect(),
            pose: obs.pose,
            joints: obs.joints,
            mode: obs.mode,
            holding: obs.holding,
        }
    }

    pub fn decode(&self, goal: &GoalSpec) -> Result<Observation, ProtocolError> {
        let n = self
            .width
            .checked_mul(self.height)
            .ok_or_else(|| ProtocolError::Malformed("image size overflows".into()))?;
        Ok(Observation {
            step: self.step,
            width: self.width,
            height: self.height,
            depth: decode_f32le(&self.depth_b64_f32le, n)?,
            semantic: decode_u16le(&self.semantic_b64_u16le, n)?,
            labels: self.labels.iter().cloned().collect::<BTreeMap<_, _>>(),
            pose: self.pose,
            joints: self.joints,
            mode: self.mode,
            holding: self.holding,
            goal: goal.clone(),
        })
    }
}

/// One JSON message per line in each direction.
pub struct Channel<R, W> {
    reader: R,
    writer: W,
    line: String,
}

impl<R: BufRead, W: Write> Channel<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self {
            reader,
            writer,
            line: String::new(),
        }
    }

    pub fn send(&mut self, msg: &Message) -> Result<(), ProtocolError> {
        let s = serde_json::to_string(msg).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        self.writer.write_all(s.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        Ok(())
    }

    /// Next message, or `None` at end of stream.
    pub fn recv(&mut self) -> Result<Option<Message>, ProtocolError> {
        loop {
            self.line.clear();
            if self.reader.read_line(&mut self.line)? == 0 {
                return Ok(None);
            }
            let t = self.line.trim();
            if t.is_empty() {
                continue;
            }
            return serde_json::from_str(t)
                .map(Some)
                .map_err(|e| ProtocolError::Malformed(e.to_string()));
        }
    }

    fn expect(&mut self, expected: &'static str) -> Result<Message, ProtocolError> {
        let msg = self.recv()?.ok_or(ProtocolError::Closed)?;
        if msg.kind() != expected {
            return Err(ProtocolError::Unexpected {
                expected,
                got: msg.kind().to_string(),
            });
        }
        Ok(msg)
    }
}

/// Agent on the far side of a protocol channel.
pub struct RemoteAgent<R, W> {
    channel: Channel<R, W>,
    episode: String,
    width: usize,
    height: usize,
    child: Option<Child>,
}

impl<R: BufRead, W: Write> RemoteAgent<R, W> {
    pub fn new(reader: R, writer: W, width: usize, height: usize) -> Self {
        Self {
            channel: Channel::new(reader, writer),
            episode: String::new(),
            width,
            height,
            child: None,
        }
    }
}

pub type ExecAgent = RemoteAgent<BufReader<ChildStdout>, BufWriter<ChildStdin>>;
pub type TcpAgent = RemoteAgent<BufReader<TcpStream>, BufWriter<TcpStream>>;

/// Spawns `command` through the shell, speaking the protocol on its stdio.
pub fn spawn_exec_agent(command: &str, width: usize, height: usize) -> Result<ExecAgent, ProtocolError> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()?;
    let stdin = child.stdin.take().ok_or(ProtocolError::Closed)?;
    let stdout = child.stdout.take().ok_or(ProtocolError::Closed)?;
    let mut agent = RemoteAgent::new(BufReader::new(stdout), BufWriter::new(stdin), width, height);
    agent.child = Some(child);
    Ok(agent)
}

pub fn connect_tcp_agent(address: &str, width: usize, height: usize) -> Result<TcpAgent, ProtocolError> {
    let stream = TcpStream::connect(address)?;
    let reader = BufReader::new(stream.try_clone()?);
    Ok(RemoteAgent::new(reader, BufWriter::new(stream), width, height))
}

impl<R, W> Drop for RemoteAgent<R, W> {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            // closing stdin (dropped with the channel) ends a well-behaved
            // agent; make sure nothing lingers
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl<R: BufRead, W: Write> Agent for RemoteAgent<R, W> {
    fn reset(&mut self, episode_id: &str, goal: &GoalSpec, seed: u64) -> Result<(), AgentError> {
        self.episode = episode_id.to_string();
        self.channel.send(&Message::Reset {
            episode: episode_id.to_string(),
            goal_spec: goal.clone(),
            config: ResetConfig {
                width: self.width,
                height: self.height,
                seed,
            },
        })?;
        self.channel.expect("ready")?;
        Ok(())
    }

    fn act(&mut self, obs: &Observation) -> Result<Action, AgentError> {
        self.channel.send(&Message::Observation(WireObservation::encode(obs)))?;
        match self.channel.expect("action")? {
            Message::Action { action } => Ok(action),
            _ => unreachable!("expect checked the kind"),
        }
    }

    fn finish(&mut self, result: &EpisodeResult) -> Result<(), AgentError> {
        let o = &result.outcome;
        self.channel.send(&Message::Result(WireResult {
            episode: self.episode.clone(),
            find_obj: o.find_obj,
            pick: o.pick,
            find_rec: o.find_rec,
            place: o.place,
            overall: result.overall,
            partial: result.partial,
        }))?;
        Ok(())
    }
}

/// Serves `make_agent()` instances over a channel until end of stream. Each
/// reset starts a fresh agent.
pub fn serve<R: BufRead, W: Write>(
    reader: R,
    writer: W,
    mut make_agent: impl FnMut() -> Box<dyn Agent>,
) -> Result<(), ProtocolError> {
    let mut channel = Channel::new(reader, writer);
    let mut current: Option<(Box<dyn Agent>, GoalSpec)> = None;
    while let Some(msg) = channel.recv()? {
        match msg {
            Message::Reset {
                episode,
                goal_spec,
                config,
            } => {
                let mut agent = make_agent();
                agent
                    .reset(&episode, &goal_spec, config.seed)
                    .map_err(|e| ProtocolError::Malformed(e.to_string()))?;
                current = Some((agent, goal_spec));
                channel.send(&Message::Ready)?;
            }
            Message::Observation(wire) => {
                let (agent, goal) = current.as_mut().ok_or(ProtocolError::Unexpected {
                    expected: "reset",
                    got: "observation".into(),
                })?;
                let obs = wire.decode(goal)?;
                let action = agent.act(&obs).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
                channel.send(&Message::Action { action })?;
            }
            Message::Result(_) => current = None,
            other => {
                return Err(ProtocolError::Unexpected {
                    expected: "reset, observation or result",
                    got: other.kind().to_string(),
                })
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_codec_round_trips_bits() {
        let v = vec![0.0f32, -0.0, 1.5, f32::MIN_POSITIVE, 3.402_823_5e38, 1e-45];
        let back = decode_f32le(&encode_f32le(&v), v.len()).unwrap();
        assert_eq!(
            v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            back.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn little_endian_layout() {
        assert_eq!(STANDARD.decode(encode_u16le(&[0x0102])).unwrap(), vec![0x02, 0x01]);
        assert_eq!(
            STANDARD.decode(encode_f32le(&[1.0])).unwrap(),
            1.0f32.to_le_bytes().to_vec()
        );
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let s = encode_u16le(&[1, 2, 3]);
        assert!(matches!(
            decode_u16le(&s, 4),
            Err(ProtocolError::Truncated {
                expected: 8,
                got: 6,
                ..
            })
        ));
    }

    #[test]
    fn message_tags() {
        let m: Message = serde_json::from_str(r#"{"type":"action","action":{"type":"grasp"}}"#).unwrap();
        assert_eq!(m, Message::Action { action: Action::Grasp });
        assert_eq!(serde_json::to_string(&Message::Ready).unwrap(), r#"{"type":"ready"}"#);
    }
}
