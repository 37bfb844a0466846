//! Run configuration: one JSON file describing workload, oracle, pipeline,
//! clustering, and recurrence parameters.
//!
//! Every seed is explicit. Commands that need a section fail with a usage
//! error when it is missing, so nothing falls back to wall-clock entropy.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::DEFAULT_RESTARTS;
use crate::error::{MavError, Result};
use crate::pipeline::{Metric, PipelineConfig};
use crate::synth::{CacheOracleConfig, WorkloadSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k: usize,
    pub seed: u64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

fn default_restarts() -> usize {
    DEFAULT_RESTARTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceConfig {
    #[serde(default = "default_max_dim")]
    pub max_dim: usize,
    #[serde(default)]
    pub metric: Metric,
}

fn default_max_dim() -> usize {
    512
}

impl Default for RecurrenceConfig {
    fn default() -> Self {
        RecurrenceConfig {
            max_dim: default_max_dim(),
            metric: Metric::Euclidean,
        }
    }
}

/// The full run configuration; sections are optional so one file can serve
/// several subcommands.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload: Option<WorkloadSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<CacheOracleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<PipelineConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clustering: Option<ClusterConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recurrence: Option<RecurrenceConfig>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MavError::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| MavError::MalformedLine {
            path: path.into(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if let Some(w) = &cfg.workload {
            w.validate()?;
        }
        if let Some(o) = &cfg.oracle {
            o.validate()?;
        }
        if let Some(p) = &cfg.pipeline {
            p.validate()?;
        }
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| MavError::Report(format!("serialize config: {e}")))?;
        std::fs::write(path, json + "\n").map_err(|e| MavError::io(path, e))
    }

    pub fn require_workload(&self) -> Result<&WorkloadSpec> {
        self.workload
            .as_ref()
            .ok_or_else(|| MavError::InvalidSpec("config lacks a \"workload\" section".into()))
    }

    pub fn require_oracle(&self) -> Result<&CacheOracleConfig> {
        self.oracle
            .as_ref()
            .ok_or_else(|| MavError::InvalidOracle("config lacks an \"oracle\" section".into()))
    }

    pub fn require_pipeline(&self) -> Result<&PipelineConfig> {
        self.pipeline
            .as_ref()
            .ok_or_else(|| MavError::Pipeline("config lacks a \"pipeline\" section".into()))
    }

    pub fn require_clustering(&self) -> Result<&ClusterConfig> {
        self.clustering
            .as_ref()
            .ok_or_else(|| MavError::Clustering("config lacks a \"clustering\" section".into()))
    }
}

/// The bundled end-to-end configuration: the xalanc-like workload, default
/// oracle and pipeline, and 30 clusters.
pub fn bundled_xalanc_config(seed: u64) -> RunConfig {
    RunConfig {
        workload: Some(crate::synth::xalanc_like_spec(seed)),
        oracle: Some(CacheOracleConfig::default()),
        pipeline: Some(PipelineConfig::new(seed ^ 0x9e37_79b9_7f4a_7c15)),
        clustering: Some(ClusterConfig {
            k: 30,
            seed: seed ^ 0x1234_5678_9abc_def0,
            restarts: DEFAULT_RESTARTS,
        }),
        recurrence: Some(RecurrenceConfig::default()),
    }
}
