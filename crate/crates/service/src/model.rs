use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use reefseg_core::pipeline::{Metrics, Timings};
use reefseg_core::PipelineConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub id: String,
    pub mosaic: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bathymetry: Option<PathBuf>,
    pub width: u32,
    pub height: u32,
    pub bands: u32,
    pub created_at_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn can_become(self, next: JobState) -> bool {
        matches!(
            (self, next),
            (JobState::Queued, JobState::Running) | (JobState::Running, JobState::Done) | (JobState::Running, JobState::Failed)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Transition {
    pub state: JobState,
    pub at_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub dataset_id: String,
    pub state: JobState,
    /// Request body as submitted.
    pub request: Value,
    /// Validated pipeline config; inputs point at the dataset files.
    pub config: PipelineConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub created_at_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub started_at_ms: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished_at_ms: Option<u64>,
    pub history: Vec<Transition>,
    #[serde(default)]
    pub timings: Timings,
    #[serde(default)]
    pub revisions: Vec<String>,
    #[serde(default)]
    pub next_revision: u32,
}
