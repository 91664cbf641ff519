//! Run configuration file. Relative paths resolve against the directory of
//! the config file.

use std::path::{Path, PathBuf};

use roadsafe_core::pipeline::AnalysisConfig;
use roadsafe_core::ssm::SsmBatchConfig;
use roadsafe_core::{MetricsConfig, SegmentConfig};
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub keypoints: Option<PathBuf>,
    pub crashes: Option<PathBuf>,
    /// Metrics CSV read by `associate` and `shapley`.
    pub metrics: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEntry {
    #[serde(flatten)]
    pub segment: SegmentConfig,
    /// World-frame trajectories.
    #[serde(default)]
    pub trajectories: Option<PathBuf>,
    /// Pixel-frame trajectories for `project`.
    #[serde(default)]
    pub raw_trajectories: Option<PathBuf>,
    #[serde(default)]
    pub keypoints: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Seeds every random step; overrides `analysis.seed`.
    pub seed: Option<u64>,
    /// Overrides `metrics.fps`.
    pub fps: Option<f64>,
    pub paths: Paths,
    pub segments: Vec<SegmentEntry>,
    pub metrics: MetricsConfig,
    pub ssm: SsmBatchConfig,
    pub analysis: AnalysisConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::new("io", format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Failure::new("config", format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.apply_overrides(None);
        Ok(cfg)
    }

    pub fn apply_overrides(&mut self, seed: Option<u64>) {
        if seed.is_some() {
            self.seed = seed;
        }
        if let Some(s) = self.seed {
            self.analysis.seed = s;
        }
        if let Some(fps) = self.fps {
            self.metrics.fps = fps;
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn segment_configs(&self) -> Vec<SegmentConfig> {
        self.segments.iter().map(|s| s.segment.clone()).collect()
    }

    /// The segment named by `id`, or the only one configured.
    pub fn pick_segment(&self, id: Option<&str>) -> Result<&SegmentEntry, Failure> {
        match id {
            Some(id) => self
                .segments
                .iter()
                .find(|s| s.segment.segment_id == id)
                .ok_or_else(|| Failure::new("config", format!("no segment {id:?} in config"))),
            None if self.segments.len() == 1 => Ok(&self.segments[0]),
            None => Err(Failure::new(
                "config",
                format!("{} segments configured; pass --segment", self.segments.len()),
            )),
        }
    }
}
