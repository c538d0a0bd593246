//! Message types exchanged with clients. Frames and heatmaps travel as
//! 8-bit grayscale, row-major, base64-encoded.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use vismpc_core::grid::{Image, Pixel, PixelDistribution};
use vismpc_core::planner::{GoalPair, GoalSpec};
use vismpc_core::sim::{ObjectSpec, SimParams, Vec2};

use crate::error::ServiceError;

pub fn encode_frame(img: &Image) -> String {
    STANDARD.encode(img.to_u8())
}

pub fn decode_bytes(data: &str) -> Result<Vec<u8>, ServiceError> {
    STANDARD
        .decode(data)
        .map_err(|e| ServiceError::BadRequest(format!("invalid base64: {e}")))
}

pub fn decode_frame(width: usize, height: usize, data: &str) -> Result<Image, ServiceError> {
    let bytes = decode_bytes(data)?;
    Ok(Image::from_u8(width, height, &bytes)?)
}

/// A pixel distribution scaled so its largest entry maps to 255.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    /// Probability represented by the byte value 255.
    pub max: f64,
    pub data: String,
}

impl Heatmap {
    pub fn encode(dist: &PixelDistribution) -> Self {
        let max = dist.mass().iter().fold(0.0f64, |m, &v| m.max(v));
        let bytes: Vec<u8> = dist
            .mass()
            .iter()
            .map(|&p| if max > 0.0 { (p / max * 255.0).round() as u8 } else { 0 })
            .collect();
        Self {
            max,
            data: STANDARD.encode(bytes),
        }
    }

    /// Approximate probabilities recovered from the bytes.
    pub fn decode(&self) -> Result<Vec<f64>, ServiceError> {
        Ok(decode_bytes(&self.data)?
            .into_iter()
            .map(|b| f64::from(b) / 255.0 * self.max)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Idle,
    Running,
    Paused,
}

/// Body of `POST /session` and `POST /session/{id}/reset`. Missing fields
/// fall back to the server defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionRequest {
    pub seed: Option<u64>,
    pub n_objects: Option<usize>,
    pub objects: Option<Vec<ObjectSpec>>,
    pub pusher: Option<Vec2>,
    pub params: Option<SimParams>,
    /// Episode length; stepping stops after this many steps.
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalRequest {
    pub pairs: Vec<GoalPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalAck {
    pub pairs: Vec<GoalPair>,
    /// Index of the first step planned with these pairs.
    pub applies_at_step: usize,
}

/// Current state of a session, including the latest frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: u64,
    pub seed: u64,
    pub mode: Mode,
    /// Steps executed so far.
    pub step: usize,
    pub max_steps: usize,
    pub width: usize,
    pub height: usize,
    pub frame: String,
    pub goal: Option<GoalSpec>,
    pub pending_goal: Option<GoalSpec>,
    pub pixels: Vec<Pixel>,
    pub pusher: Vec2,
}

/// One executed step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub session: u64,
    /// Zero-based index of the executed step.
    pub step: usize,
    pub width: usize,
    pub height: usize,
    /// Observation after the step.
    pub frame: String,
    pub goal: GoalSpec,
    /// Tracked designated pixels after the step.
    pub pixels: Vec<Pixel>,
    pub objective: Option<f64>,
    pub action: [f64; 2],
    /// Final predicted distribution of each designated pixel under the plan.
    pub heatmaps: Vec<Heatmap>,
}

/// Server-to-client messages on the event socket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerEvent {
    Step(StepEvent),
    Mode { mode: Mode, step: usize },
    Goal(GoalAck),
    Reset(SessionView),
    Error { message: String },
}

/// Client-to-server messages on the event socket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "lowercase")]
pub enum ClientCommand {
    Goal { pairs: Vec<GoalPair> },
    Step,
    Run,
    Pause,
    Reset(SessionRequest),
    Frame,
}

/// Reply to a socket command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum CommandReply {
    Ack { ok: serde_json::Value },
    Rejected { error: String, message: String },
}

impl CommandReply {
    pub fn from_result<T: Serialize>(result: Result<T, ServiceError>) -> Self {
        match result {
            Ok(v) => match serde_json::to_value(v) {
                Ok(ok) => CommandReply::Ack { ok },
                Err(e) => CommandReply::Rejected {
                    error: "internal".into(),
                    message: e.to_string(),
                },
            },
            Err(e) => CommandReply::Rejected {
                error: e.code().to_string(),
                message: e.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair: Option<GoalPair>,
}
