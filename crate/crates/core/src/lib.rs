//! Safety analytics over vehicle trajectories.
//!
//! Trajectories are parsed, projected to a metric ground plane, smoothed and
//! differentiated, then summarized per interval into network-level safety
//! metrics or per encounter into surrogate safety measures. Crash records are
//! binned into the same `(segment, slot)` grid and related to the metrics by
//! the association pipeline. A synthetic generator with a planted
//! metric-to-crash relation drives end-to-end checks.
//!
//! Numeric kernels are generic over the scalar (`f32` or `f64`); the `*64`
//! and `*32` aliases below name the common instantiations. File IO and the
//! pipeline work in `f64`.

pub mod config;
pub mod crash;
pub mod error;
pub mod nsm;
pub mod pipeline;
pub mod prepare;
pub mod projection;
pub mod smoothing;
pub mod ssm;
pub mod synth;
pub mod trajectory;

pub use config::{BBox, ClusterConfig, CongestionConfig, MetricsConfig, NominalLengths, SegmentConfig};
pub use crash::{bin_crashes, parse_crashes, CrashCounts, CrashFamily, CrashRecord, CrashType};
pub use error::{Error, Result};
pub use nsm::{compute_segment_metrics, read_metrics, write_metrics, IntervalMetrics};
pub use pipeline::{run_association, AnalysisConfig, AssociationReport};
pub use prepare::{prepare_tracks, PreparedTrack};
pub use projection::{fit_homography, Homography, KeypointPair, TangentPlane};
pub use smoothing::SavitzkyGolay;
pub use ssm::{compute_pair_ssms, EnvelopeParams, PairState, SsmBatchConfig};
pub use synth::{run_scenario, ScenarioSpec};
pub use trajectory::{parse_trajectories, write_trajectories, TrackPoint, Trajectory, VehicleClass};

pub use roadsafe_stats::Real;

pub type Homography64 = Homography<f64>;
pub type Homography32 = Homography<f32>;
pub type KeypointPair64 = KeypointPair<f64>;
pub type SavitzkyGolay64 = SavitzkyGolay<f64>;
pub type SavitzkyGolay32 = SavitzkyGolay<f32>;
pub type PairState64 = PairState<f64>;
pub type PairState32 = PairState<f32>;
pub type EnvelopeParams64 = EnvelopeParams<f64>;
pub type VehicleCluster64 = nsm::VehicleCluster<f64>;
pub type FrameVehicle64 = nsm::FrameVehicle<f64>;

/// Shortest round-trip decimal, switching to exponent form for very small or
/// very large magnitudes.
pub fn format_float(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || !a.is_finite() || (1e-5..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}
