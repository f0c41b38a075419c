use serde::{Deserialize, Serialize};

/// One executed stage. Paths are relative to the output root when they lie
/// below it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub config_hash: String,
    pub seed: u64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub config_hash: String,
    pub seed: u64,
    pub config: Vec<(String, String)>,
    /// Generator settings when the pipeline produced its own dataset.
    pub synthetic: Option<serde_json::Value>,
    pub stages: Vec<StageRecord>,
    pub wall_seconds: f64,
}

pub const MANIFEST_FILE: &str = "manifest.json";
