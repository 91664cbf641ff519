//! Vehicle trajectories: CSV ingestion, gap repair, kinematics and
//! length-based classification.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRAJECTORY_HEADER: [&str; 6] = ["frame", "vehicle_id", "x1", "y1", "x2", "y2"];

/// Default number of consecutive missing frames repaired by interpolation.
pub const DEFAULT_MAX_GAP: u64 = 15;
/// Default car/truck split on physical length, meters.
pub const DEFAULT_CLASS_THRESHOLD_M: f64 = 8.0;
/// Tracks moving less than this over their lifetime are treated as static objects.
pub const DEFAULT_MIN_DISPLACEMENT_M: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub frame: u64,
    /// Seconds, `frame / fps`.
    pub timestamp: f64,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl TrackPoint {
    pub fn new(frame: u64, fps: f64, x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self {
            frame,
            timestamp: frame as f64 / fps,
            x1,
            y1,
            x2,
            y2,
        }
    }

    pub fn cx(&self) -> f64 {
        (self.x1 + self.x2) / 2.0
    }

    pub fn cy(&self) -> f64 {
        (self.y1 + self.y2) / 2.0
    }

    pub fn centroid(&self) -> [f64; 2] {
        [self.cx(), self.cy()]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VehicleClass {
    Car,
    Truck,
}

impl VehicleClass {
    pub const ALL: [VehicleClass; 2] = [VehicleClass::Car, VehicleClass::Truck];
}

/// `Car` below the threshold, `Truck` at or above it.
pub fn classify_by_length(length_m: f64, threshold_m: f64) -> Result<VehicleClass> {
    if !(length_m > 0.0) {
        return Err(Error::Data(format!("vehicle length must be positive, got {length_m}")));
    }
    Ok(if length_m < threshold_m {
        VehicleClass::Car
    } else {
        VehicleClass::Truck
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub vehicle_id: String,
    pub points: Vec<TrackPoint>,
    pub class: VehicleClass,
    /// Median bounding-box extent along the direction of travel.
    pub length_m: f64,
}

impl Trajectory {
    /// Builds a trajectory and classifies it with `threshold_m`. Degenerate
    /// (zero-extent) boxes fall back to `Car`.
    pub fn new(vehicle_id: impl Into<String>, points: Vec<TrackPoint>, threshold_m: f64) -> Self {
        let length_m = travel_length(&points);
        let class = classify_by_length(length_m, threshold_m).unwrap_or(VehicleClass::Car);
        Self {
            vehicle_id: vehicle_id.into(),
            points,
            class,
            length_m,
        }
    }

    pub fn reclassify(&mut self, threshold_m: f64) {
        self.length_m = travel_length(&self.points);
        self.class = classify_by_length(self.length_m, threshold_m).unwrap_or(VehicleClass::Car);
    }

    /// Straight-line distance between first and last centroid.
    pub fn displacement(&self) -> f64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => (b.cx() - a.cx()).hypot(b.cy() - a.cy()),
            _ => 0.0,
        }
    }

    pub fn is_gap_free(&self) -> bool {
        self.points.windows(2).all(|w| w[1].frame == w[0].frame + 1)
    }

    /// Splits at missing frames into gap-free runs.
    pub fn contiguous_runs(&self) -> Vec<&[TrackPoint]> {
        let mut runs = Vec::new();
        let mut start = 0;
        for i in 1..self.points.len() {
            if self.points[i].frame != self.points[i - 1].frame + 1 {
                runs.push(&self.points[start..i]);
                start = i;
            }
        }
        if start < self.points.len() {
            runs.push(&self.points[start..]);
        }
        runs
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

fn travel_length(points: &[TrackPoint]) -> f64 {
    let (Some(first), Some(last)) = (points.first(), points.last()) else {
        return 0.0;
    };
    let dx = last.cx() - first.cx();
    let dy = last.cy() - first.cy();
    let norm = dx.hypot(dy);
    let extents = points.iter().map(|p| {
        if norm > 1e-9 {
            (p.width() * dx / norm).abs() + (p.height() * dy / norm).abs()
        } else {
            p.width().max(p.height())
        }
    });
    median(extents.collect())
}

#[derive(Debug, Deserialize)]
struct RawRow {
    frame: String,
    vehicle_id: String,
    x1: String,
    y1: String,
    x2: String,
    y2: String,
}

fn parse_field<F: std::str::FromStr>(value: &str, name: &str, line: u64) -> Result<F> {
    value.trim().parse().map_err(|_| Error::Schema {
        line,
        message: format!("cannot parse {name} from {value:?}"),
    })
}

/// Reads the `frame,vehicle_id,x1,y1,x2,y2` schema. Trajectories are
/// returned in order of first appearance, each classified with the default
/// length threshold.
pub fn parse_trajectories<R: Read>(input: R, fps: f64) -> Result<Vec<Trajectory>> {
    parse_trajectories_with(input, fps, DEFAULT_CLASS_THRESHOLD_M)
}

pub fn parse_trajectories_with<R: Read>(
    input: R,
    fps: f64,
    class_threshold_m: f64,
) -> Result<Vec<Trajectory>> {
    if !(fps > 0.0) {
        return Err(Error::Parameter(format!("fps must be positive, got {fps}")));
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    for col in TRAJECTORY_HEADER {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Schema {
                line: 1,
                message: format!("missing required column {col:?}"),
            });
        }
    }
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut tracks: Vec<(String, Vec<TrackPoint>)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            return Err(Error::Schema {
                line,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let row: RawRow = record.deserialize(Some(&headers)).map_err(|e| Error::Schema {
            line,
            message: e.to_string(),
        })?;
        let frame: u64 = parse_field(&row.frame, "frame", line)?;
        let x1: f64 = parse_field(&row.x1, "x1", line)?;
        let y1: f64 = parse_field(&row.y1, "y1", line)?;
        let x2: f64 = parse_field(&row.x2, "x2", line)?;
        let y2: f64 = parse_field(&row.y2, "y2", line)?;
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) || x1 > x2 || y1 > y2 {
            return Err(Error::Schema {
                line,
                message: "bounding box corners must be finite with x1 <= x2 and y1 <= y2".into(),
            });
        }
        let slot = *index.entry(row.vehicle_id.clone()).or_insert_with(|| {
            tracks.push((row.vehicle_id.clone(), Vec::new()));
            tracks.len() - 1
        });
        let points = &mut tracks[slot].1;
        if let Some(prev) = points.last() {
            if frame <= prev.frame {
                return Err(Error::Data(format!(
                    "vehicle {:?}: frame {frame} at line {line} does not follow frame {}",
                    row.vehicle_id, prev.frame
                )));
            }
        }
        points.push(TrackPoint::new(frame, fps, x1, y1, x2, y2));
    }
    Ok(tracks
        .into_iter()
        .map(|(id, pts)| Trajectory::new(id, pts, class_threshold_m))
        .collect())
}

/// Writes trajectories in the ingestion schema, vehicle by vehicle.
pub fn write_trajectories<W: Write>(out: W, trajectories: &[Trajectory]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for t in trajectories {
        for p in &t.points {
            w.write_record([
                p.frame.to_string(),
                t.vehicle_id.clone(),
                crate::format_float(p.x1),
                crate::format_float(p.y1),
                crate::format_float(p.x2),
                crate::format_float(p.y2),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// A run of missing frames left unrepaired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapFlag {
    pub after_frame: u64,
    pub before_frame: u64,
    pub missing: u64,
}

/// Linearly interpolates all four box corners across runs of at most
/// `max_gap` missing frames. Longer runs stay open and are flagged.
pub fn fill_gaps(traj: &Trajectory, max_gap: u64, fps: f64) -> (Trajectory, Vec<GapFlag>) {
    let mut points = Vec::with_capacity(traj.points.len());
    let mut flags = Vec::new();
    for (i, p) in traj.points.iter().enumerate() {
        if let Some(prev) = i.checked_sub(1).map(|j| &traj.points[j]) {
            let missing = p.frame - prev.frame - 1;
            if missing > max_gap {
                flags.push(GapFlag {
                    after_frame: prev.frame,
                    before_frame: p.frame,
                    missing,
                });
            } else {
                let span = (p.frame - prev.frame) as f64;
                for k in 1..=missing {
                    let s = k as f64 / span;
                    let lerp = |a: f64, b: f64| a + (b - a) * s;
                    points.push(TrackPoint::new(
                        prev.frame + k,
                        fps,
                        lerp(prev.x1, p.x1),
                        lerp(prev.y1, p.y1),
                        lerp(prev.x2, p.x2),
                        lerp(prev.y2, p.y2),
                    ));
                }
            }
        }
        points.push(*p);
    }
    let filled = Trajectory {
        vehicle_id: traj.vehicle_id.clone(),
        points,
        class: traj.class,
        length_m: traj.length_m,
    };
    (filled, flags)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicSample {
    pub frame: u64,
    pub t: f64,
    pub position: [f64; 2],
    pub vx: f64,
    pub vy: f64,
    pub speed: f64,
}

/// Backward-difference velocities from centroid positions (meters). The first
/// sample copies the second's velocity.
pub fn derive_kinematics(traj: &Trajectory, fps: f64) -> Result<Vec<KinematicSample>> {
    let frames: Vec<u64> = traj.points.iter().map(|p| p.frame).collect();
    let positions: Vec<[f64; 2]> = traj.points.iter().map(TrackPoint::centroid).collect();
    kinematics_from_positions(&frames, &positions, fps)
}

/// Same as [`derive_kinematics`] for an explicit (for example smoothed)
/// position series. Frame gaps scale the time step.
pub fn kinematics_from_positions(
    frames: &[u64],
    positions: &[[f64; 2]],
    fps: f64,
) -> Result<Vec<KinematicSample>> {
    if frames.len() != positions.len() {
        return Err(Error::Data("frame and position series differ in length".into()));
    }
    if positions.len() < 2 {
        return Err(Error::Data(format!(
            "kinematics need at least 2 points, got {}",
            positions.len()
        )));
    }
    if !(fps > 0.0) {
        return Err(Error::Parameter(format!("fps must be positive, got {fps}")));
    }
    let mut out = Vec::with_capacity(positions.len());
    for i in 0..positions.len() {
        let j = i.max(1);
        let dt = (frames[j] - frames[j - 1]) as f64 / fps;
        let vx = (positions[j][0] - positions[j - 1][0]) / dt;
        let vy = (positions[j][1] - positions[j - 1][1]) / dt;
        out.push(KinematicSample {
            frame: frames[i],
            t: frames[i] as f64 / fps,
            position: positions[i],
            vx,
            vy,
            speed: vx.hypot(vy),
        });
    }
    Ok(out)
}
