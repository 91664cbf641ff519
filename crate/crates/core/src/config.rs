//! Configuration records shared by the metric, crash and association stages.
//! All of them deserialize from the run configuration file with defaults for
//! every optional field.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::smoothing::SgParams;
use crate::trajectory::{DEFAULT_CLASS_THRESHOLD_M, DEFAULT_MAX_GAP, DEFAULT_MIN_DISPLACEMENT_M};

/// Rectangle in the segment's tangent-plane frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }

    pub fn overlaps(&self, other: &BBox) -> bool {
        self.x_min <= other.x_max
            && other.x_min <= self.x_max
            && self.y_min <= other.y_max
            && other.y_min <= self.y_max
    }
}

fn default_axis() -> [f64; 2] {
    [1.0, 0.0]
}

fn default_thresholds() -> Vec<f64> {
    vec![1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub segment_id: String,
    pub lane_count: u32,
    pub length_m: f64,
    /// m/s
    pub speed_limit: f64,
    #[serde(default = "default_axis")]
    pub travel_axis: [f64; 2],
    #[serde(default = "default_thresholds")]
    pub osr_thresholds: Vec<f64>,
    /// Crash-matching rectangle around `anchor`.
    #[serde(default)]
    pub bbox: Option<BBox>,
    /// Tangent-plane origin as `[lat, lon]`.
    #[serde(default)]
    pub anchor: Option<[f64; 2]>,
    /// Crash slot of the segment's first metric interval.
    #[serde(default)]
    pub start_slot: u32,
}

impl SegmentConfig {
    pub fn new(segment_id: impl Into<String>, lane_count: u32, length_m: f64, speed_limit: f64) -> Self {
        Self {
            segment_id: segment_id.into(),
            lane_count,
            length_m,
            speed_limit,
            travel_axis: default_axis(),
            osr_thresholds: default_thresholds(),
            bbox: None,
            anchor: None,
            start_slot: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(format!("segment {:?}: {m}", self.segment_id)));
        if self.lane_count < 1 {
            return bad("lane_count must be at least 1".into());
        }
        if !(self.length_m > 0.0) {
            return bad(format!("length_m must be positive, got {}", self.length_m));
        }
        if !(self.speed_limit > 0.0) {
            return bad(format!("speed_limit must be positive, got {}", self.speed_limit));
        }
        let norm = self.travel_axis[0].hypot(self.travel_axis[1]);
        if (norm - 1.0).abs() > 1e-9 {
            return bad(format!("travel_axis must be a unit vector, has norm {norm}"));
        }
        if self.osr_thresholds.is_empty() || self.osr_thresholds[0] != 1.0 {
            return bad("osr_thresholds must start with 1.0".into());
        }
        if self.osr_thresholds.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("osr_thresholds must be strictly increasing".into());
        }
        if let Some(b) = self.bbox {
            if !(b.x_min <= b.x_max && b.y_min <= b.y_max) {
                return bad("bbox corners are inverted".into());
            }
            if self.anchor.is_none() {
                return bad("a bbox needs an anchor".into());
            }
        }
        Ok(())
    }

    /// Scalar position along the travel axis.
    pub fn along(&self, p: [f64; 2]) -> f64 {
        p[0] * self.travel_axis[0] + p[1] * self.travel_axis[1]
    }

    /// Signed offset across the travel axis.
    pub fn across(&self, p: [f64; 2]) -> f64 {
        -p[0] * self.travel_axis[1] + p[1] * self.travel_axis[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    /// meters
    pub distance_threshold: f64,
    /// Hz
    pub membership_rate: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            distance_threshold: 20.0,
            membership_rate: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CongestionConfig {
    pub theta: f64,
    /// seconds
    pub t_min: f64,
    /// Percentile of the per-frame mean speed taken as free-flow speed.
    pub free_flow_percentile: f64,
}

impl Default for CongestionConfig {
    fn default() -> Self {
        Self {
            theta: 0.5,
            t_min: 30.0,
            free_flow_percentile: 85.0,
        }
    }
}

/// Per-class vehicle lengths used for the density metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NominalLengths {
    pub car: f64,
    pub truck: f64,
}

impl Default for NominalLengths {
    fn default() -> Self {
        Self { car: 4.5, truck: 16.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub fps: f64,
    /// seconds
    pub interval_s: f64,
    pub max_gap: u64,
    pub min_displacement_m: f64,
    pub class_threshold_m: f64,
    pub smoothing: SgParams,
    pub cluster: ClusterConfig,
    pub congestion: CongestionConfig,
    pub nominal_lengths: NominalLengths,
    /// Lateral window (meters) for picking the pairwise leader.
    pub lateral_tolerance_m: f64,
    /// Append the mean pairwise TTC column to the metrics table.
    pub emit_e_ttc: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            fps: 30.0,
            interval_s: 600.0,
            max_gap: DEFAULT_MAX_GAP,
            min_displacement_m: DEFAULT_MIN_DISPLACEMENT_M,
            class_threshold_m: DEFAULT_CLASS_THRESHOLD_M,
            smoothing: SgParams::default(),
            cluster: ClusterConfig::default(),
            congestion: CongestionConfig::default(),
            nominal_lengths: NominalLengths::default(),
            lateral_tolerance_m: 1.8,
            emit_e_ttc: false,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Parameter(m.into()));
        if !(self.fps > 0.0) {
            return bad("fps must be positive");
        }
        if !(self.interval_s > 0.0) {
            return bad("interval_s must be positive");
        }
        if !(self.cluster.distance_threshold >= 0.0) {
            return bad("cluster.distance_threshold must be non-negative");
        }
        if !(self.cluster.membership_rate > 0.0) {
            return bad("cluster.membership_rate must be positive");
        }
        let c = &self.congestion;
        if !(c.theta > 0.0 && c.theta < 1.0) || !(c.t_min > 0.0) {
            return bad("congestion needs 0 < theta < 1 and t_min > 0");
        }
        if !(0.0..=100.0).contains(&c.free_flow_percentile) {
            return bad("free_flow_percentile must lie in [0, 100]");
        }
        if self.smoothing.window % 2 == 0 || self.smoothing.window <= self.smoothing.order {
            return bad("smoothing window must be odd and exceed the order");
        }
        Ok(())
    }

    /// Frames between two re-clusterings.
    pub fn recluster_step(&self) -> u64 {
        ((self.fps / self.cluster.membership_rate).round() as u64).max(1)
    }
}
