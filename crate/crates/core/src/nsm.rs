//! Network-level safety metrics over a road segment: cluster TTC dispersion,
//! speed-variation rates, over-speeding, composition balance, length density
//! and recovery time after congestion.
//!
//! The kernels are generic over the scalar; [`compute_segment_metrics`] drives
//! them over prepared tracks and produces one [`IntervalMetrics`] row per
//! time interval.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use roadsafe_stats::Real;
use serde::{Deserialize, Serialize};

use crate::config::{MetricsConfig, SegmentConfig};
use crate::error::{Error, Result};
use crate::prepare::PreparedTrack;
use crate::trajectory::VehicleClass;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameVehicle<T> {
    pub id: usize,
    pub position: [T; 2],
    pub velocity: [T; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleCluster<T> {
    /// Sorted ascending.
    pub members: Vec<usize>,
    pub centroid: [T; 2],
    /// Centroid projected on the travel axis.
    pub along: T,
    /// Mean member velocity along the travel axis.
    pub velocity: T,
}

impl<T: Real> VehicleCluster<T> {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    fn from_members(vehicles: &[&FrameVehicle<T>], axis: [T; 2]) -> Self {
        let n = T::from_count(vehicles.len());
        let cx = vehicles.iter().map(|v| v.position[0]).sum::<T>() / n;
        let cy = vehicles.iter().map(|v| v.position[1]).sum::<T>() / n;
        let velocity = vehicles
            .iter()
            .map(|v| v.velocity[0] * axis[0] + v.velocity[1] * axis[1])
            .sum::<T>()
            / n;
        let mut members: Vec<usize> = vehicles.iter().map(|v| v.id).collect();
        members.sort_unstable();
        Self {
            members,
            centroid: [cx, cy],
            along: cx * axis[0] + cy * axis[1],
            velocity,
        }
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Connected components of the graph joining points at Euclidean distance
/// `<= d_c`. Components are returned as index lists in input order.
pub fn single_linkage<T: Real>(points: &[[T; 2]], d_c: T) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    let d2 = d_c * d_c;
    for i in 0..n {
        for j in i + 1..n {
            let dx = points[i][0] - points[j][0];
            let dy = points[i][1] - points[j][1];
            if dx * dx + dy * dy <= d2 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    groups.into_values().collect()
}

fn order_by_min_member<T: Real>(mut clusters: Vec<VehicleCluster<T>>) -> Vec<VehicleCluster<T>> {
    clusters.sort_by_key(|c| c.members[0]);
    clusters
}

/// Single-linkage clusters of one frame, ordered by smallest member id.
pub fn cluster_frame<T: Real>(
    vehicles: &[FrameVehicle<T>],
    d_c: T,
    axis: [T; 2],
) -> Vec<VehicleCluster<T>> {
    let points: Vec<[T; 2]> = vehicles.iter().map(|v| v.position).collect();
    let clusters = single_linkage(&points, d_c)
        .into_iter()
        .map(|g| {
            let members: Vec<&FrameVehicle<T>> = g.iter().map(|&i| &vehicles[i]).collect();
            VehicleCluster::from_members(&members, axis)
        })
        .collect();
    order_by_min_member(clusters)
}

/// Regroups the vehicles of a frame by an earlier membership. Vehicles not
/// covered by it form singleton clusters; groups with no vehicle present
/// vanish.
pub fn regroup<T: Real>(
    vehicles: &[FrameVehicle<T>],
    membership: &[Vec<usize>],
    axis: [T; 2],
) -> Vec<VehicleCluster<T>> {
    let mut group_of: BTreeMap<usize, usize> = BTreeMap::new();
    for (g, members) in membership.iter().enumerate() {
        for &id in members {
            group_of.insert(id, g);
        }
    }
    let mut grouped: BTreeMap<(usize, usize), Vec<&FrameVehicle<T>>> = BTreeMap::new();
    for v in vehicles {
        // singletons are keyed past every membership group
        let key = match group_of.get(&v.id) {
            Some(&g) => (0, g),
            None => (1, v.id),
        };
        grouped.entry(key).or_default().push(v);
    }
    let clusters = grouped
        .into_values()
        .map(|members| VehicleCluster::from_members(&members, axis))
        .collect();
    order_by_min_member(clusters)
}

/// One cluster-level TTC: `follower` and `leader` index the input clusters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CttcLink<T> {
    pub follower: usize,
    pub leader: usize,
    pub value: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameClusterTtc<T> {
    pub links: Vec<CttcLink<T>>,
    pub n_vehicles: usize,
    pub n_clusters: usize,
    /// Mean cluster size, `n_vehicles / n_clusters`.
    pub rho: T,
}

impl<T: Real> FrameClusterTtc<T> {
    pub fn cttc_values(&self) -> Vec<T> {
        self.links.iter().map(|l| l.value).collect()
    }

    /// Coefficient of variation of the frame's CTTCs scaled by `rho`; needs
    /// at least two values.
    pub fn weighted_cv(&self) -> Option<T> {
        let v = self.cttc_values();
        if v.len() < 2 {
            return None;
        }
        let n = T::from_count(v.len());
        let mean = v.iter().copied().sum::<T>() / n;
        let var = v.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / (n - T::one());
        Some(var.sqrt() / mean * self.rho)
    }
}

/// Cluster TTC against the nearest downstream cluster that is not faster.
/// An equal-speed leader yields no value.
pub fn cluster_ttc<T: Real>(clusters: &[VehicleCluster<T>]) -> FrameClusterTtc<T> {
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.sort_by(|&a, &b| {
        clusters[a]
            .along
            .partial_cmp(&clusters[b].along)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut links = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        let ci = &clusters[i];
        let leader = order[rank + 1..]
            .iter()
            .copied()
            .filter(|&j| clusters[j].along > ci.along)
            .find(|&j| clusters[j].velocity <= ci.velocity);
        if let Some(j) = leader {
            let cj = &clusters[j];
            if cj.velocity < ci.velocity {
                links.push(CttcLink {
                    follower: i,
                    leader: j,
                    value: (cj.along - ci.along) / (ci.velocity - cj.velocity),
                });
            }
        }
    }
    links.sort_by_key(|l| l.follower);
    let n_vehicles: usize = clusters.iter().map(VehicleCluster::size).sum();
    let n_clusters = clusters.len();
    let rho = if n_clusters == 0 {
        T::zero()
    } else {
        T::from_count(n_vehicles) / T::from_count(n_clusters)
    };
    FrameClusterTtc {
        links,
        n_vehicles,
        n_clusters,
        rho,
    }
}

/// Mean of the per-frame weighted CVs over frames with two or more CTTCs.
pub fn ttc_cv<T: Real>(frames: &[FrameClusterTtc<T>]) -> Option<T> {
    mean_opt(frames.iter().filter_map(FrameClusterTtc::weighted_cv))
}

fn mean_opt<T: Real>(values: impl Iterator<Item = T>) -> Option<T> {
    let (sum, n) = values.fold((T::zero(), 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / T::from_count(n))
}

/// Mean over vehicles of `|v_max - v_min| / v_av`. Vehicles with fewer than
/// two samples are skipped; those with zero average speed are skipped and
/// their indices returned.
pub fn ivvr<T: Real>(speeds_per_vehicle: &[Vec<T>]) -> (Option<T>, Vec<usize>) {
    let mut excluded = Vec::new();
    let mut terms = Vec::new();
    for (i, s) in speeds_per_vehicle.iter().enumerate() {
        if s.len() < 2 {
            continue;
        }
        let max = s.iter().copied().fold(T::neg_infinity(), T::max);
        let min = s.iter().copied().fold(T::infinity(), T::min);
        let avg = s.iter().copied().sum::<T>() / T::from_count(s.len());
        if avg == T::zero() {
            excluded.push(i);
        } else {
            terms.push((max - min).abs() / avg);
        }
    }
    (mean_opt(terms.into_iter()), excluded)
}

/// Mean over vehicles of `|v_i_av - v_av| / v_av` with `v_av` the fleet mean.
pub fn ovvr<T: Real>(average_speeds: &[T]) -> Option<T> {
    let fleet = mean_opt(average_speeds.iter().copied())?;
    if fleet == T::zero() {
        return None;
    }
    mean_opt(average_speeds.iter().map(|&v| (v - fleet).abs() / fleet))
}

/// Fraction of vehicles with `v_max / v_L` strictly above each threshold.
pub fn osr<T: Real>(max_speeds: &[T], speed_limit: T, thresholds: &[T]) -> Result<Option<Vec<T>>> {
    if !(speed_limit > T::zero()) {
        return Err(Error::Parameter("speed limit must be positive".into()));
    }
    if max_speeds.is_empty() {
        return Ok(None);
    }
    let n = T::from_count(max_speeds.len());
    Ok(Some(
        thresholds
            .iter()
            .map(|&th| {
                let over = max_speeds.iter().filter(|&&v| v / speed_limit > th).count();
                T::from_count(over) / n
            })
            .collect(),
    ))
}

/// Jain-style balance `(sum N)^2 / (C sum N^2)` and the class fractions.
/// `counts` has one entry per configured class, zeros included.
pub fn tci<T: Real>(counts: &[usize]) -> Option<(T, Vec<T>)> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return None;
    }
    let t = T::from_count(total);
    let sq: T = counts.iter().map(|&c| T::from_count(c) * T::from_count(c)).sum();
    let index = t * t / (T::from_count(counts.len()) * sq);
    let fractions = counts.iter().map(|&c| T::from_count(c) / t).collect();
    Some((index, fractions))
}

/// Two-class closed form `1 / (2 (1 - 2 f1 f2))`.
pub fn tci_two_class<T: Real>(f1: T) -> T {
    let two = T::lit(2.0);
    let f2 = T::one() - f1;
    T::one() / (two * (T::one() - two * f1 * f2))
}

/// Time mean of the per-frame occupied length per lane-meter.
pub fn ntc<T: Real>(frame_total_lengths: &[T], lane_count: u32, length_m: T) -> T {
    if frame_total_lengths.is_empty() {
        return T::zero();
    }
    let denom = T::from_count(lane_count as usize) * length_m;
    frame_total_lengths.iter().map(|&l| l / denom).sum::<T>()
        / T::from_count(frame_total_lengths.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CongestionEvent<T> {
    pub t_b: T,
    pub t_r: T,
    /// Still congested when the series ended; `t_r` is the last sample time.
    pub censored: bool,
}

/// Congestion episodes in a time-ordered `(t, mean speed)` series. An episode
/// starts at the first sample below `theta * free_flow` and ends at the first
/// sample back at or above it; it counts only if it lasts at least `t_min`.
pub fn detect_congestion_events<T: Real>(
    series: &[(T, T)],
    free_flow: T,
    theta: T,
    t_min: T,
) -> Result<Vec<CongestionEvent<T>>> {
    if !(theta > T::zero() && theta < T::one()) || !(t_min > T::zero()) {
        return Err(Error::Parameter("congestion needs 0 < theta < 1 and t_min > 0".into()));
    }
    if series.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::Ordering("speed series must be strictly time-ordered".into()));
    }
    let limit = theta * free_flow;
    let mut events = Vec::new();
    let mut start: Option<T> = None;
    for &(t, v) in series {
        match start {
            None if v < limit => start = Some(t),
            Some(t_b) if v >= limit => {
                if t - t_b >= t_min {
                    events.push(CongestionEvent {
                        t_b,
                        t_r: t,
                        censored: false,
                    });
                }
                start = None;
            }
            _ => {}
        }
    }
    if let (Some(t_b), Some(&(t_end, _))) = (start, series.last()) {
        if t_end - t_b >= t_min {
            events.push(CongestionEvent {
                t_b,
                t_r: t_end,
                censored: true,
            });
        }
    }
    Ok(events)
}

/// Mean recovery time of the events.
pub fn trt<T: Real>(events: &[CongestionEvent<T>]) -> Option<T> {
    mean_opt(events.iter().map(|e| e.t_r - e.t_b))
}

/// Linear-interpolation percentile, `p` in [0, 100].
pub fn percentile<T: Real>(values: &[T], p: T) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let pos = p / T::lit(100.0) * T::from_count(v.len() - 1);
    let lo = pos.floor().to_usize().unwrap_or(0).min(v.len() - 1);
    let hi = (lo + 1).min(v.len() - 1);
    let frac = pos - T::from_count(lo);
    Some(v[lo] + (v[hi] - v[lo]) * frac)
}

/// Pairwise TTC of each vehicle against the nearest vehicle ahead within
/// `lateral_tolerance` across the axis, when the follower is faster.
pub fn pairwise_ttcs<T: Real>(vehicles: &[FrameVehicle<T>], axis: [T; 2], lateral_tolerance: T) -> Vec<T> {
    let along = |p: [T; 2]| p[0] * axis[0] + p[1] * axis[1];
    let across = |p: [T; 2]| -p[0] * axis[1] + p[1] * axis[0];
    let speed = |v: [T; 2]| v[0] * axis[0] + v[1] * axis[1];
    let mut out = Vec::new();
    for f in vehicles {
        let xf = along(f.position);
        let leader = vehicles
            .iter()
            .filter(|l| {
                l.id != f.id
                    && along(l.position) > xf
                    && (across(l.position) - across(f.position)).abs() <= lateral_tolerance
            })
            .min_by(|a, b| {
                along(a.position)
                    .partial_cmp(&along(b.position))
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
        if let Some(l) = leader {
            let (vf, vl) = (speed(f.velocity), speed(l.velocity));
            if vf > vl {
                out.push((along(l.position) - xf) / (vf - vl));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalMetrics {
    pub segment_id: String,
    /// seconds
    pub interval_start: f64,
    pub interval_end: f64,
    pub ttc_cv: Option<f64>,
    pub ivvr: Option<f64>,
    pub ovvr: Option<f64>,
    /// `(threshold, rate)` pairs, the first at threshold 1.0.
    pub osr: Vec<(f64, Option<f64>)>,
    pub tci: Option<f64>,
    pub f_truck: Option<f64>,
    pub ntc: Option<f64>,
    pub trt: Option<f64>,
    pub n_vehicles: usize,
    pub coverage: f64,
    pub e_ttc: Option<f64>,
}

/// Metrics usable as regression predictors by default.
pub const DEFAULT_PREDICTORS: [&str; 6] = ["ttc_cv", "ivvr", "ovvr", "osr", "tci", "ntc"];

impl IntervalMetrics {
    /// Looks up a column by name. `osr` is the rate at threshold 1.0,
    /// `osr_<θ>` any configured threshold.
    pub fn value(&self, name: &str) -> Option<f64> {
        match name {
            "ttc_cv" => self.ttc_cv,
            "ivvr" => self.ivvr,
            "ovvr" => self.ovvr,
            "osr" => self.osr.first().and_then(|o| o.1),
            "tci" => self.tci,
            "f_truck" => self.f_truck,
            "ntc" => self.ntc,
            "trt" => self.trt,
            "n_vehicles" => Some(self.n_vehicles as f64),
            "coverage" => Some(self.coverage),
            "e_ttc" => self.e_ttc,
            other => {
                let th: f64 = other.strip_prefix("osr_")?.parse().ok()?;
                self.osr.iter().find(|o| o.0 == th).and_then(|o| o.1)
            }
        }
    }

    pub fn is_known_column(name: &str) -> bool {
        matches!(
            name,
            "ttc_cv" | "ivvr" | "ovvr" | "osr" | "tci" | "f_truck" | "ntc" | "trt" | "n_vehicles" | "coverage" | "e_ttc"
        ) || name.strip_prefix("osr_").is_some_and(|t| t.parse::<f64>().is_ok())
    }
}

#[derive(Default)]
struct IntervalAcc {
    frames: usize,
    frames_with_data: usize,
    frame_lengths: Vec<f64>,
    frame_cvs: Vec<f64>,
    pair_ttcs: Vec<f64>,
    speeds: BTreeMap<usize, Vec<f64>>,
    events: Vec<CongestionEvent<f64>>,
}

/// Per-frame world state of one segment.
fn frame_table(tracks: &[PreparedTrack]) -> BTreeMap<u64, Vec<(usize, usize)>> {
    let mut frames: BTreeMap<u64, Vec<(usize, usize)>> = BTreeMap::new();
    for (ti, track) in tracks.iter().enumerate() {
        for (si, s) in track.samples.iter().enumerate() {
            frames.entry(s.frame).or_default().push((ti, si));
        }
    }
    frames
}

/// Runs every metric over the segment and returns one row per interval that
/// overlaps the observed frame span.
pub fn compute_segment_metrics(
    tracks: &[PreparedTrack],
    seg: &SegmentConfig,
    cfg: &MetricsConfig,
) -> Result<Vec<IntervalMetrics>> {
    seg.validate()?;
    cfg.validate()?;
    let frames = frame_table(tracks);
    let (Some(&first), Some(&last)) = (frames.keys().next(), frames.keys().next_back()) else {
        return Ok(Vec::new());
    };
    let axis = seg.travel_axis;
    let interval_of = |frame: u64| (frame as f64 / cfg.fps / cfg.interval_s).floor() as i64;
    let step = cfg.recluster_step();

    let mut accs: BTreeMap<i64, IntervalAcc> = BTreeMap::new();
    let mut speed_series: Vec<(f64, f64)> = Vec::new();
    let mut membership: Vec<Vec<usize>> = Vec::new();
    let mut next_recluster = first;
    let empty = Vec::new();
    for frame in first..=last {
        let acc = accs.entry(interval_of(frame)).or_default();
        acc.frames += 1;
        let present = frames.get(&frame).unwrap_or(&empty);
        if present.is_empty() {
            acc.frame_lengths.push(0.0);
            continue;
        }
        acc.frames_with_data += 1;
        let mut total_len = 0.0;
        let mut vehicles = Vec::with_capacity(present.len());
        for &(ti, si) in present {
            let track = &tracks[ti];
            let s = &track.samples[si];
            total_len += match track.class {
                VehicleClass::Car => cfg.nominal_lengths.car,
                VehicleClass::Truck => cfg.nominal_lengths.truck,
            };
            acc.speeds.entry(ti).or_default().push(s.speed);
            vehicles.push(FrameVehicle {
                id: ti,
                position: s.position,
                velocity: [s.vx, s.vy],
            });
        }
        acc.frame_lengths.push(total_len);
        let t = frame as f64 / cfg.fps;
        let mean_speed = present.iter().map(|&(ti, si)| tracks[ti].samples[si].speed).sum::<f64>()
            / present.len() as f64;
        speed_series.push((t, mean_speed));

        if frame >= next_recluster {
            membership = cluster_frame(&vehicles, cfg.cluster.distance_threshold, axis)
                .into_iter()
                .map(|c| c.members)
                .collect();
            next_recluster = frame + step;
        }
        let clusters = regroup(&vehicles, &membership, axis);
        if let Some(cv) = cluster_ttc(&clusters).weighted_cv() {
            acc.frame_cvs.push(cv);
        }
        if cfg.emit_e_ttc {
            acc.pair_ttcs
                .extend(pairwise_ttcs(&vehicles, axis, cfg.lateral_tolerance_m));
        }
    }

    let speeds_only: Vec<f64> = speed_series.iter().map(|s| s.1).collect();
    if let Some(free_flow) = percentile(&speeds_only, cfg.congestion.free_flow_percentile) {
        let events = detect_congestion_events(
            &speed_series,
            free_flow,
            cfg.congestion.theta,
            cfg.congestion.t_min,
        )?;
        for e in events {
            let k = (e.t_b / cfg.interval_s).floor() as i64;
            if let Some(acc) = accs.get_mut(&k) {
                acc.events.push(e);
            }
        }
    }

    let thresholds = &seg.osr_thresholds;
    let mut rows = Vec::with_capacity(accs.len());
    for (k, acc) in accs {
        let per_vehicle: Vec<(usize, &Vec<f64>)> = acc.speeds.iter().map(|(&ti, s)| (ti, s)).collect();
        let speed_lists: Vec<Vec<f64>> = per_vehicle.iter().map(|(_, s)| (*s).clone()).collect();
        let averages: Vec<f64> = speed_lists
            .iter()
            .map(|s| s.iter().sum::<f64>() / s.len() as f64)
            .collect();
        let maxima: Vec<f64> = speed_lists
            .iter()
            .map(|s| s.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mut counts = [0usize; 2];
        for (ti, _) in &per_vehicle {
            match tracks[*ti].class {
                VehicleClass::Car => counts[0] += 1,
                VehicleClass::Truck => counts[1] += 1,
            }
        }
        let osr_rates = osr(&maxima, seg.speed_limit, thresholds)?;
        let tci_result = tci::<f64>(&counts);
        rows.push(IntervalMetrics {
            segment_id: seg.segment_id.clone(),
            interval_start: k as f64 * cfg.interval_s,
            interval_end: (k + 1) as f64 * cfg.interval_s,
            ttc_cv: mean_opt(acc.frame_cvs.iter().copied()),
            ivvr: ivvr(&speed_lists).0,
            ovvr: ovvr(&averages),
            osr: thresholds
                .iter()
                .enumerate()
                .map(|(i, &th)| (th, osr_rates.as_ref().map(|r| r[i])))
                .collect(),
            tci: tci_result.as_ref().map(|t| t.0),
            f_truck: tci_result.as_ref().map(|t| t.1[1]),
            ntc: Some(ntc(&acc.frame_lengths, seg.lane_count, seg.length_m)),
            trt: trt(&acc.events),
            n_vehicles: per_vehicle.len(),
            coverage: acc.frames_with_data as f64 / acc.frames as f64,
            e_ttc: if cfg.emit_e_ttc {
                mean_opt(acc.pair_ttcs.iter().copied())
            } else {
                None
            },
        });
    }
    Ok(rows)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(crate::format_float).unwrap_or_default()
}

pub fn metrics_header(thresholds: &[f64], with_e_ttc: bool) -> Vec<String> {
    let mut h: Vec<String> = ["segment_id", "interval_start", "interval_end", "ttc_cv", "ivvr", "ovvr"]
        .map(String::from)
        .to_vec();
    h.extend(thresholds.iter().map(|t| format!("osr_{t:?}")));
    h.extend(["tci", "f_truck", "ntc", "trt", "n_vehicles", "coverage"].map(String::from));
    if with_e_ttc {
        h.push("e_ttc".into());
    }
    h
}

/// Writes the metrics table. All rows must share one threshold list; with no
/// rows the header uses `thresholds`.
pub fn write_metrics<W: Write>(
    out: W,
    rows: &[IntervalMetrics],
    thresholds: &[f64],
    with_e_ttc: bool,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(metrics_header(thresholds, with_e_ttc))?;
    for r in rows {
        let ths: Vec<f64> = r.osr.iter().map(|o| o.0).collect();
        if ths != thresholds {
            return Err(Error::Parameter(format!(
                "segment {:?} uses OSR thresholds {ths:?}, table uses {thresholds:?}",
                r.segment_id
            )));
        }
        let mut rec = vec![
            r.segment_id.clone(),
            crate::format_float(r.interval_start),
            crate::format_float(r.interval_end),
            fmt_opt(r.ttc_cv),
            fmt_opt(r.ivvr),
            fmt_opt(r.ovvr),
        ];
        rec.extend(r.osr.iter().map(|o| fmt_opt(o.1)));
        rec.extend([
            fmt_opt(r.tci),
            fmt_opt(r.f_truck),
            fmt_opt(r.ntc),
            fmt_opt(r.trt),
            r.n_vehicles.to_string(),
            crate::format_float(r.coverage),
        ]);
        if with_e_ttc {
            rec.push(fmt_opt(r.e_ttc));
        }
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics<R: Read>(input: R) -> Result<Vec<IntervalMetrics>> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Schema {
            line: 1,
            message: format!("missing required column {name:?}"),
        })
    };
    let fixed = [
        "segment_id", "interval_start", "interval_end", "ttc_cv", "ivvr", "ovvr", "tci", "f_truck", "ntc",
        "trt", "n_vehicles", "coverage",
    ];
    let idx: Vec<usize> = fixed.iter().map(|n| col(n)).collect::<Result<_>>()?;
    let osr_cols: Vec<(f64, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| Some((h.strip_prefix("osr_")?.parse().ok()?, i)))
        .collect();
    if osr_cols.first().map(|o| o.0) != Some(1.0) {
        return Err(Error::Schema {
            line: 1,
            message: "missing required column \"osr_1.0\"".into(),
        });
    }
    let e_ttc = headers.iter().position(|h| h == "e_ttc");
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            return Err(Error::Schema {
                line,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let opt = |i: usize| -> Result<Option<f64>> {
            let s = record[i].trim();
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| Error::Schema {
                line,
                message: format!("cannot parse {} from {s:?}", &headers[i]),
            })
        };
        let req = |i: usize| -> Result<f64> {
            opt(i)?.ok_or_else(|| Error::Schema {
                line,
                message: format!("{} must not be empty", &headers[i]),
            })
        };
        rows.push(IntervalMetrics {
            segment_id: record[idx[0]].to_string(),
            interval_start: req(idx[1])?,
            interval_end: req(idx[2])?,
            ttc_cv: opt(idx[3])?,
            ivvr: opt(idx[4])?,
            ovvr: opt(idx[5])?,
            osr: osr_cols
                .iter()
                .map(|&(th, i)| Ok((th, opt(i)?)))
                .collect::<Result<_>>()?,
            tci: opt(idx[6])?,
            f_truck: opt(idx[7])?,
            ntc: opt(idx[8])?,
            trt: opt(idx[9])?,
            n_vehicles: req(idx[10])? as usize,
            coverage: req(idx[11])?,
            e_ttc: e_ttc.map(opt).transpose()?.flatten(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn veh(id: usize, x: f64, v: f64) -> FrameVehicle<f64> {
        FrameVehicle {
            id,
            position: [x, 0.0],
            velocity: [v, 0.0],
        }
    }

    const X: [f64; 2] = [1.0, 0.0];

    #[test]
    fn clustering_examples() {
        let vs = [veh(0, 0.0, 1.0), veh(1, 10.0, 1.0), veh(2, 50.0, 1.0)];
        let c = cluster_frame(&vs, 15.0, X);
        assert_eq!(c.iter().map(|c| c.members.clone()).collect::<Vec<_>>(), vec![vec![0, 1], vec![2]]);
        let vs = [veh(0, 0.0, 1.0), veh(1, 10.0, 1.0), veh(2, 20.0, 1.0)];
        assert_eq!(cluster_frame(&vs, 12.0, X).len(), 1);
        assert_eq!(cluster_frame(&vs, 0.0, X).len(), 3);
    }

    #[test]
    fn cluster_centroid_and_velocity_are_means() {
        let vs = [veh(3, 0.0, 20.0), veh(1, 4.0, 30.0)];
        let c = cluster_frame(&vs, 5.0, X);
        assert_eq!(c[0].members, vec![1, 3]);
        assert_eq!(c[0].along, 2.0);
        assert_eq!(c[0].velocity, 25.0);
    }

    #[test]
    fn cttc_examples() {
        let c = cluster_frame(&[veh(0, 0.0, 30.0), veh(1, 90.0, 20.0)], 0.0, X);
        assert_eq!(cluster_ttc(&c).cttc_values(), vec![9.0]);
        let c = cluster_frame(&[veh(0, 0.0, 30.0)], 0.0, X);
        assert!(cluster_ttc(&c).cttc_values().is_empty());
        let c = cluster_frame(&[veh(0, 0.0, 20.0), veh(1, 50.0, 20.0)], 0.0, X);
        assert!(cluster_ttc(&c).cttc_values().is_empty());
    }

    #[test]
    fn cttc_skips_faster_immediate_leader() {
        let c = cluster_frame(&[veh(0, 0.0, 30.0), veh(1, 20.0, 40.0), veh(2, 100.0, 10.0)], 0.0, X);
        let f = cluster_ttc(&c);
        assert_eq!(f.links.len(), 2);
        assert_eq!(f.links[0].leader, 2);
        assert_eq!(f.links[0].value, 100.0 / 20.0);
    }

    #[test]
    fn ttc_cv_examples() {
        let frame = |vals: &[f64], nv: usize, nc: usize| FrameClusterTtc {
            links: vals
                .iter()
                .map(|&v| CttcLink {
                    follower: 0,
                    leader: 0,
                    value: v,
                })
                .collect(),
            n_vehicles: nv,
            n_clusters: nc,
            rho: nv as f64 / nc as f64,
        };
        let v = ttc_cv(&[frame(&[4.0, 6.0], 6, 2)]).unwrap();
        assert!((v - 3.0 * 2f64.sqrt() / 5.0).abs() < 1e-12);
        assert_eq!(ttc_cv(&[frame(&[5.0, 5.0], 4, 2)]).unwrap(), 0.0);
        let a = frame(&[4.0, 6.0], 6, 2);
        let b = frame(&[1.0, 3.0], 2, 2);
        let both = ttc_cv(&[a.clone(), b.clone()]).unwrap();
        let want = (a.weighted_cv().unwrap() + b.weighted_cv().unwrap()) / 2.0;
        assert!((both - want).abs() < 1e-15);
        assert!(ttc_cv(&[frame(&[4.0], 2, 2)]).is_none());
    }

    #[test]
    fn speed_variation_examples() {
        let (v, ex) = ivvr(&[vec![30.0f64, 20.0, 25.0]]);
        assert!((v.unwrap() - 0.4).abs() < 1e-15 && ex.is_empty());
        assert_eq!(ivvr(&[vec![10.0, 10.0], vec![20.0, 20.0]]).0, Some(0.0));
        let (v, _) = ivvr(&[vec![30.0f64, 20.0, 25.0], vec![7.0, 7.0]]);
        assert!((v.unwrap() - 0.2).abs() < 1e-15);
        let (v, ex) = ivvr(&[vec![0.0, 0.0], vec![7.0, 7.0]]);
        assert_eq!((v, ex), (Some(0.0), vec![0]));

        assert_eq!(ovvr(&[20.0, 20.0]), Some(0.0));
        assert!((ovvr(&[20.0f64, 30.0]).unwrap() - 0.2).abs() < 1e-15);
        assert!((ovvr(&[10.0f64, 20.0, 30.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(ovvr::<f64>(&[0.0, 0.0]), None);
    }

    #[test]
    fn osr_examples() {
        let r = osr(&[30.0f64, 20.0, 25.0], 25.0, &[1.0]).unwrap().unwrap();
        assert!((r[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(osr(&[10.0, 20.0], 25.0, &[1.0]).unwrap().unwrap(), vec![0.0]);
        assert_eq!(osr(&[30.0, 31.0], 25.0, &[1.0, 1.2]).unwrap().unwrap(), vec![1.0, 0.5]);
        assert!(osr(&[30.0], 0.0, &[1.0]).is_err());
    }

    #[test]
    fn tci_examples() {
        assert_eq!(tci::<f64>(&[10, 10]).unwrap().0, 1.0);
        assert_eq!(tci::<f64>(&[20, 0]).unwrap().0, 0.5);
        let (t, f) = tci::<f64>(&[1, 3]).unwrap();
        assert!((t - 0.8).abs() < 1e-15);
        assert!((tci_two_class(f[0]) - 0.8).abs() < 1e-15);
        assert!(tci::<f64>(&[0, 0]).is_none());
    }

    #[test]
    fn ntc_examples() {
        assert!((ntc(&[9.0f64; 5], 2, 100.0) - 0.045).abs() < 1e-15);
        assert!((ntc(&[20.5f64], 3, 100.0) - 20.5 / 300.0).abs() < 1e-15);
        assert_eq!(ntc(&[0.0, 0.0], 2, 100.0), 0.0);
    }

    #[test]
    fn congestion_and_trt_examples() {
        let series: Vec<(f64, f64)> = (0..300)
            .map(|t| (t as f64, if (100..160).contains(&t) { 5.0 } else { 30.0 }))
            .collect();
        let ev = detect_congestion_events(&series, 30.0, 0.5, 30.0).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!((ev[0].t_b, ev[0].t_r, ev[0].censored), (100.0, 160.0, false));

        let flat: Vec<(f64, f64)> = (0..100).map(|t| (t as f64, 30.0)).collect();
        assert!(detect_congestion_events(&flat, 30.0, 0.5, 30.0).unwrap().is_empty());

        let two: Vec<(f64, f64)> = (0..400)
            .map(|t| {
                let low = (50..90).contains(&t) || (200..260).contains(&t);
                (t as f64, if low { 5.0 } else { 30.0 })
            })
            .collect();
        let ev = detect_congestion_events(&two, 30.0, 0.5, 30.0).unwrap();
        assert_eq!(ev.iter().map(|e| (e.t_b, e.t_r)).collect::<Vec<_>>(), vec![(50.0, 90.0), (200.0, 260.0)]);

        let open: Vec<(f64, f64)> = (0..100).map(|t| (t as f64, if t >= 40 { 1.0 } else { 30.0 })).collect();
        let ev = detect_congestion_events(&open, 30.0, 0.5, 30.0).unwrap();
        assert!(ev[0].censored && ev[0].t_r == 99.0);

        let e = |a: f64, b: f64| CongestionEvent {
            t_b: a,
            t_r: b,
            censored: false,
        };
        assert_eq!(trt(&[e(0.0, 30.0), e(100.0, 160.0)]), Some(45.0));
        assert_eq!(trt(&[e(10.0, 10.0)]), Some(0.0));
        assert_eq!(trt::<f64>(&[]), None);
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0, 5.0], 50.0), Some(3.0));
        assert_eq!(percentile(&[0.0, 10.0], 85.0), Some(8.5));
    }

    #[test]
    fn metrics_csv_round_trip() {
        let row = IntervalMetrics {
            segment_id: "A".into(),
            interval_start: 0.0,
            interval_end: 600.0,
            ttc_cv: None,
            ivvr: Some(0.1),
            ovvr: Some(0.2),
            osr: vec![(1.0, Some(0.25)), (1.2, Some(0.0))],
            tci: Some(0.9),
            f_truck: Some(0.1),
            ntc: Some(0.05),
            trt: None,
            n_vehicles: 12,
            coverage: 1.0,
            e_ttc: Some(4.5),
        };
        let mut buf = Vec::new();
        write_metrics(&mut buf, &[row.clone()], &[1.0, 1.2], true).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("segment_id,interval_start,interval_end,ttc_cv,ivvr,ovvr,osr_1.0,osr_1.2,tci"));
        assert_eq!(read_metrics(buf.as_slice()).unwrap(), vec![row]);
    }
}
