//! Synthetic traffic and crash generator with a planted metric-to-crash
//! relation, used to exercise the whole pipeline end to end.
//!
//! Each interval of each segment is simulated independently from its own
//! random stream: vehicles arrive per lane as a Poisson process, drive toward
//! a desired speed and slow to their leader's speed when the time headway
//! drops under 2 s. Crash counts are then drawn around
//! `exp(beta0 + sum beta_j z_j)` where `z_j` are the standardized metrics
//! computed from the generated trajectories.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BBox, MetricsConfig, SegmentConfig};
use crate::crash::{validate_slot_minutes, CrashRecord, CrashType};
use crate::error::{Error, Result};
use crate::nsm::{compute_segment_metrics, IntervalMetrics};
use crate::prepare::prepare_tracks;
use crate::projection::TangentPlane;
use crate::trajectory::{TrackPoint, Trajectory, DEFAULT_CLASS_THRESHOLD_M};

pub const CAR_LENGTH_M: f64 = 4.5;
pub const TRUCK_LENGTH_M: f64 = 16.0;
const CAR_WIDTH_M: f64 = 1.8;
const TRUCK_WIDTH_M: f64 = 2.5;
const LANE_WIDTH_M: f64 = 3.6;
const HEADWAY_S: f64 = 2.0;
const MAX_ACCEL: f64 = 2.0;
const MAX_DECEL: f64 = 6.0;
const STANDSTILL_GAP_M: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSegment {
    pub segment_id: String,
    pub lane_count: u32,
    pub length_m: f64,
    pub speed_limit: f64,
    pub intervals: usize,
    /// `[lat, lon]` of the segment origin.
    pub anchor: [f64; 2],
    #[serde(default)]
    pub start_slot: u32,
}

impl SynthSegment {
    /// Segment config for the metric and crash stages. The crash bbox spans
    /// the road with a 50 m margin.
    pub fn segment_config(&self) -> SegmentConfig {
        let mut s = SegmentConfig::new(&self.segment_id, self.lane_count, self.length_m, self.speed_limit);
        s.anchor = Some(self.anchor);
        s.start_slot = self.start_slot;
        s.bbox = Some(BBox {
            x_min: -50.0,
            y_min: -50.0,
            x_max: self.length_m + 50.0,
            y_max: self.lane_count as f64 * LANE_WIDTH_M + 50.0,
        });
        s
    }
}

/// Closed ranges the per-interval parameters are drawn from, independently
/// and uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamRanges {
    /// Vehicles per minute per lane.
    pub flow: [f64; 2],
    /// m/s
    pub speed_mean: [f64; 2],
    pub speed_std: [f64; 2],
    pub truck_fraction: [f64; 2],
    /// Share of drivers whose desired speed exceeds the limit.
    pub over_speed_fraction: [f64; 2],
    /// Relative amplitude of each vehicle's periodic speed variation.
    pub jitter: [f64; 2],
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            flow: [4.0, 20.0],
            speed_mean: [16.0, 22.0],
            speed_std: [0.0, 3.0],
            truck_fraction: [0.0, 0.2],
            over_speed_fraction: [0.0, 0.5],
            jitter: [0.0, 0.15],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Poisson,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Plant {
    pub beta0: f64,
    /// Coefficient per metric name; unlisted metrics get 0.
    pub beta: BTreeMap<String, f64>,
    pub noise: NoiseKind,
    /// Per-year Gaussian noise; `None` calibrates it to `target_r2`.
    pub sigma: Option<f64>,
    pub target_r2: f64,
    pub years: u32,
    pub first_year: i32,
    pub slot_minutes: u32,
}

impl Default for Plant {
    fn default() -> Self {
        Self {
            beta0: 3.0,
            beta: [("osr", 0.1), ("ovvr", 0.1), ("ntc", 0.15)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            noise: NoiseKind::Poisson,
            sigma: None,
            target_r2: 0.6,
            years: 5,
            first_year: 2015,
            slot_minutes: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub fps: f64,
    pub interval_s: f64,
    pub segments: Vec<SynthSegment>,
    pub ranges: ParamRanges,
    pub plant: Plant,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        let segments = (0..3)
            .map(|i| SynthSegment {
                segment_id: format!("S{}", i + 1),
                lane_count: 3,
                length_m: 250.0,
                speed_limit: 25.0,
                intervals: 100,
                anchor: [33.40 + 0.01 * i as f64, -111.90],
                start_slot: 0,
            })
            .collect();
        Self {
            seed: 1,
            fps: 10.0,
            interval_s: 30.0,
            segments,
            ranges: ParamRanges::default(),
            plant: Plant::default(),
        }
    }
}

impl ScenarioSpec {
    pub fn steps_per_interval(&self) -> Result<u64> {
        let steps = self.interval_s * self.fps;
        if !(self.fps > 0.0 && self.interval_s > 0.0) || (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::Parameter(
                "interval_s * fps must be a positive whole number of frames".into(),
            ));
        }
        Ok(steps.round() as u64)
    }

    pub fn validate(&self) -> Result<()> {
        self.steps_per_interval()?;
        let r = &self.ranges;
        let ranges = [r.flow, r.speed_mean, r.speed_std, r.truck_fraction, r.over_speed_fraction, r.jitter];
        if ranges.iter().any(|[lo, hi]| !(lo <= hi) || *lo < 0.0) {
            return Err(Error::Parameter("parameter ranges must be ordered and non-negative".into()));
        }
        if r.truck_fraction[1] > 1.0 || r.over_speed_fraction[1] > 1.0 || r.jitter[1] >= 1.0 {
            return Err(Error::Parameter("fractions must lie in [0, 1]".into()));
        }
        validate_slot_minutes(self.plant.slot_minutes)?;
        if self.plant.years == 0 {
            return Err(Error::Parameter("plant.years must be at least 1".into()));
        }
        if !(self.plant.target_r2 > 0.0 && self.plant.target_r2 < 1.0) {
            return Err(Error::Parameter("plant.target_r2 must lie in (0, 1)".into()));
        }
        let slots = 24 * 60 / self.plant.slot_minutes as usize;
        for s in &self.segments {
            s.segment_config().validate()?;
            if s.start_slot as usize + s.intervals > slots {
                return Err(Error::Parameter(format!(
                    "segment {:?}: {} intervals from slot {} exceed the {slots} daily slots",
                    s.segment_id, s.intervals, s.start_slot
                )));
            }
        }
        Ok(())
    }

    /// Metric settings matching the generator's sampling.
    pub fn metrics_config(&self) -> MetricsConfig {
        MetricsConfig {
            fps: self.fps,
            interval_s: self.interval_s,
            ..MetricsConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalParams {
    pub flow: f64,
    pub speed_mean: f64,
    pub speed_std: f64,
    pub truck_fraction: f64,
    pub over_speed_fraction: f64,
    pub jitter: f64,
}

fn draw(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

impl IntervalParams {
    pub fn draw(ranges: &ParamRanges, rng: &mut ChaCha8Rng) -> Self {
        Self {
            flow: draw(rng, ranges.flow),
            speed_mean: draw(rng, ranges.speed_mean),
            speed_std: draw(rng, ranges.speed_std),
            truck_fraction: draw(rng, ranges.truck_fraction),
            over_speed_fraction: draw(rng, ranges.over_speed_fraction),
            jitter: draw(rng, ranges.jitter),
        }
    }
}

/// A vehicle entering the road (`t` seconds into the interval) or already on
/// it at the start (`x` set).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub t: f64,
    pub lane: u32,
    pub x: Option<f64>,
    pub desired_speed: f64,
    pub truck: bool,
    /// Relative amplitude, period (s) and phase of the desired-speed wave.
    pub wave: [f64; 3],
}

struct SimVehicle {
    id: usize,
    lane: u32,
    x: f64,
    v: f64,
    spec: Arrival,
    points: Vec<TrackPoint>,
}

impl SimVehicle {
    fn length(&self) -> f64 {
        if self.spec.truck {
            TRUCK_LENGTH_M
        } else {
            CAR_LENGTH_M
        }
    }

    fn width(&self) -> f64 {
        if self.spec.truck {
            TRUCK_WIDTH_M
        } else {
            CAR_WIDTH_M
        }
    }

    fn target(&self, t: f64) -> f64 {
        let [amp, period, phase] = self.spec.wave;
        self.spec.desired_speed * (1.0 + amp * (TAU * t / period + phase).sin())
    }
}

/// Runs the car-following model over `steps` frames starting at
/// `first_frame`. Arrivals that cannot enter because the lane entry is
/// blocked wait until it clears.
pub fn simulate_arrivals(
    seg: &SynthSegment,
    arrivals: &[Arrival],
    fps: f64,
    first_frame: u64,
    steps: u64,
    id_prefix: &str,
) -> Vec<Trajectory> {
    let dt = 1.0 / fps;
    let mut pending: Vec<Arrival> = arrivals.to_vec();
    pending.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap_or(std::cmp::Ordering::Equal));
    let mut pending: std::collections::VecDeque<Arrival> = pending.into();
    let mut active: Vec<SimVehicle> = Vec::new();
    let mut done: Vec<SimVehicle> = Vec::new();
    let mut next_id = 0;

    for step in 0..steps {
        let t = step as f64 * dt;
        // admit arrivals in time order, each lane independently blocked
        let mut waiting = std::collections::VecDeque::new();
        while let Some(a) = pending.pop_front() {
            if a.t > t {
                waiting.push_back(a);
                continue;
            }
            let len = if a.truck { TRUCK_LENGTH_M } else { CAR_LENGTH_M };
            let x0 = a.x.unwrap_or(0.0);
            let last = active
                .iter()
                .filter(|v| v.lane == a.lane && v.x >= x0)
                .min_by(|p, q| p.x.partial_cmp(&q.x).unwrap_or(std::cmp::Ordering::Equal));
            let (clear, v0) = match last {
                Some(l) => {
                    let gap = l.x - x0 - (l.length() + len) / 2.0;
                    let v0 = a.desired_speed.min(l.v);
                    (gap >= STANDSTILL_GAP_M + v0 * 1.0, v0)
                }
                None => (true, a.desired_speed),
            };
            if clear {
                active.push(SimVehicle {
                    id: next_id,
                    lane: a.lane,
                    x: x0,
                    v: v0,
                    spec: a,
                    points: Vec::new(),
                });
                next_id += 1;
            } else if a.x.is_none() {
                waiting.push_back(a);
            }
        }
        pending = waiting;

        // record, then advance leaders before followers
        let frame = first_frame + step;
        for v in active.iter_mut() {
            if v.x <= seg.length_m {
                let y = (v.lane as f64 + 0.5) * LANE_WIDTH_M;
                let (hl, hw) = (v.length() / 2.0, v.width() / 2.0);
                v.points
                    .push(TrackPoint::new(frame, fps, v.x - hl, y - hw, v.x + hl, y + hw));
            }
        }
        active.sort_by(|a, b| {
            a.lane
                .cmp(&b.lane)
                .then(b.x.partial_cmp(&a.x).unwrap_or(std::cmp::Ordering::Equal))
        });
        for i in 0..active.len() {
            let leader = (i > 0 && active[i - 1].lane == active[i].lane)
                .then(|| (active[i - 1].x, active[i - 1].v, active[i - 1].length()));
            let me = &mut active[i];
            let mut target = me.target(t);
            if let Some((xl, vl, ll)) = leader {
                let gap = xl - me.x - (ll + me.length()) / 2.0;
                if gap / me.v.max(0.1) < HEADWAY_S {
                    target = target.min(vl);
                }
            }
            let dv = (target - me.v).clamp(-MAX_DECEL * dt, MAX_ACCEL * dt);
            let x_old = me.x;
            me.v = (me.v + dv).max(0.0);
            me.x += me.v * dt;
            if let Some((xl, _, ll)) = leader {
                let cap = xl - (ll + me.length()) / 2.0 - STANDSTILL_GAP_M;
                if me.x > cap {
                    me.x = cap.max(x_old);
                    me.v = (me.x - x_old) / dt;
                }
            }
        }
        let (gone, stay): (Vec<_>, Vec<_>) = active
            .into_iter()
            .partition(|v| v.x - v.length() / 2.0 > seg.length_m);
        done.extend(gone);
        active = stay;
    }
    done.extend(active);
    done.sort_by_key(|v| v.id);
    done.into_iter()
        .filter(|v| !v.points.is_empty())
        .map(|v| Trajectory::new(format!("{id_prefix}{}", v.id), v.points, DEFAULT_CLASS_THRESHOLD_M))
        .collect()
}

fn desired_speed(p: &IntervalParams, speed_limit: f64, jitter: f64, rng: &mut ChaCha8Rng) -> f64 {
    if rng.random_bool(p.over_speed_fraction.clamp(0.0, 1.0)) {
        speed_limit * rng.random_range(1.05..1.25)
    } else {
        let n = Normal::new(p.speed_mean, p.speed_std.max(0.0)).expect("finite normal");
        // keep compliant drivers under the limit even at the wave crest
        n.sample(rng)
            .clamp(0.5 * p.speed_mean, 0.99 * speed_limit / (1.0 + jitter))
    }
}

/// Random arrivals for one interval: an initial fill at the stationary
/// density plus Poisson entries per lane.
pub fn draw_arrivals(seg: &SynthSegment, p: &IntervalParams, duration: f64, rng: &mut ChaCha8Rng) -> Vec<Arrival> {
    let mut out = Vec::new();
    let make = |t: f64, lane: u32, x: Option<f64>, rng: &mut ChaCha8Rng| Arrival {
        t,
        lane,
        x,
        desired_speed: desired_speed(p, seg.speed_limit, p.jitter, rng),
        truck: rng.random_bool(p.truck_fraction.clamp(0.0, 1.0)),
        wave: [p.jitter, rng.random_range(10.0..20.0), rng.random_range(0.0..TAU)],
    };
    let rate = p.flow / 60.0;
    if rate <= 0.0 {
        return out;
    }
    for lane in 0..seg.lane_count {
        let initial = rate * seg.length_m / p.speed_mean.max(1.0);
        let n0 = Poisson::new(initial).map(|d| d.sample(rng) as usize).unwrap_or(0);
        let mut xs: Vec<f64> = (0..n0).map(|_| rng.random_range(0.0..seg.length_m)).collect();
        xs.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        for x in xs {
            out.push(make(0.0, lane, Some(x), rng));
        }
        let exp = Exp::new(rate).expect("positive rate");
        let mut t = exp.sample(rng);
        while t < duration {
            out.push(make(t, lane, None, rng));
            t += exp.sample(rng);
        }
    }
    out
}

fn interval_rng(seed: u64, segment: usize, interval: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((segment as u64) << 32) | interval as u64);
    rng
}

/// Per-segment trajectories and the drawn interval parameters.
pub fn generate_trajectories(spec: &ScenarioSpec) -> Result<Vec<(Vec<Trajectory>, Vec<IntervalParams>)>> {
    spec.validate()?;
    let steps = spec.steps_per_interval()?;
    Ok(spec
        .segments
        .iter()
        .enumerate()
        .map(|(si, seg)| {
            let per_interval: Vec<(Vec<Trajectory>, IntervalParams)> = (0..seg.intervals)
                .into_par_iter()
                .map(|k| {
                    let mut rng = interval_rng(spec.seed, si, k);
                    let p = IntervalParams::draw(&spec.ranges, &mut rng);
                    let arrivals = draw_arrivals(seg, &p, spec.interval_s, &mut rng);
                    let prefix = format!("{}-{k}-", seg.segment_id);
                    let trajs = simulate_arrivals(seg, &arrivals, spec.fps, k as u64 * steps, steps, &prefix);
                    (trajs, p)
                })
                .collect();
            let mut trajs = Vec::new();
            let mut params = Vec::new();
            for (t, p) in per_interval {
                trajs.extend(t);
                params.push(p);
            }
            (trajs, params)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantOutcome {
    /// `(name, mean, sd)` used to standardize each planted metric.
    pub standardization: Vec<(String, f64, f64)>,
    pub lambda: Vec<f64>,
    /// Per-interval counts, one entry per year.
    pub yearly: Vec<Vec<u64>>,
    pub mean_counts: Vec<f64>,
    pub sigma: Option<f64>,
    /// `1 - SS(mean_count - lambda) / SS(mean_count - mean)`.
    pub generator_r2: f64,
}

/// Draws per-year crash counts for each metrics row.
pub fn generate_crash_counts(metrics: &[IntervalMetrics], plant: &Plant, seed: u64) -> Result<PlantOutcome> {
    if metrics.is_empty() {
        return Err(Error::Data("no intervals to plant crashes on".into()));
    }
    let mut standardization = Vec::new();
    let mut eta = vec![plant.beta0; metrics.len()];
    for (name, &b) in &plant.beta {
        if b == 0.0 {
            continue;
        }
        if !IntervalMetrics::is_known_column(name) {
            return Err(Error::Parameter(format!("unknown planted metric {name:?}")));
        }
        let vals: Vec<Option<f64>> = metrics.iter().map(|m| m.value(name)).collect();
        let defined: Vec<f64> = vals.iter().flatten().copied().collect();
        let n = defined.len() as f64;
        let mean = defined.iter().sum::<f64>() / n;
        let sd = (defined.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
        if !(sd > 0.0) {
            return Err(Error::Data(format!("planted metric {name:?} is constant or undefined")));
        }
        // an interval where the metric is undefined (no vehicles) sits at the mean
        for (e, v) in eta.iter_mut().zip(&vals) {
            if let Some(v) = v {
                *e += b * (v - mean) / sd;
            }
        }
        standardization.push((name.clone(), mean, sd));
    }
    let lambda: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    let years = plant.years as usize;
    let sigma = match plant.noise {
        NoiseKind::Poisson => None,
        NoiseKind::Gaussian => Some(plant.sigma.unwrap_or_else(|| {
            let n = lambda.len() as f64;
            let m = lambda.iter().sum::<f64>() / n;
            let var = lambda.iter().map(|l| (l - m).powi(2)).sum::<f64>() / n;
            (years as f64 * var * (1.0 - plant.target_r2) / plant.target_r2).sqrt()
        })),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let mut yearly = Vec::with_capacity(lambda.len());
    for &l in &lambda {
        let counts = match sigma {
            None => {
                let d = Poisson::new(l).map_err(|e| Error::Parameter(format!("crash rate {l}: {e}")))?;
                (0..years).map(|_| d.sample(&mut rng) as u64).collect()
            }
            Some(s) => {
                let d = Normal::new(l, s).map_err(|e| Error::Parameter(e.to_string()))?;
                (0..years).map(|_| d.sample(&mut rng).round().max(0.0) as u64).collect()
            }
        };
        yearly.push(counts);
    }
    let mean_counts: Vec<f64> = yearly
        .iter()
        .map(|c: &Vec<u64>| c.iter().sum::<u64>() as f64 / years as f64)
        .collect();
    let ybar = mean_counts.iter().sum::<f64>() / mean_counts.len() as f64;
    let ss_tot: f64 = mean_counts.iter().map(|y| (y - ybar).powi(2)).sum();
    let ss_res: f64 = mean_counts.iter().zip(&lambda).map(|(y, l)| (y - l).powi(2)).sum();
    let generator_r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 0.0 };
    Ok(PlantOutcome {
        standardization,
        lambda,
        yearly,
        mean_counts,
        sigma,
        generator_r2,
    })
}

/// Turns per-year counts into dated, geolocated crash records inside each
/// segment's bbox and time slot.
pub fn crash_records(
    segments: &[SynthSegment],
    metrics: &[IntervalMetrics],
    outcome: &PlantOutcome,
    plant: &Plant,
    interval_s: f64,
    seed: u64,
) -> Result<Vec<CrashRecord>> {
    let by_id: BTreeMap<&str, &SynthSegment> = segments.iter().map(|s| (s.segment_id.as_str(), s)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - 1);
    let mut out = Vec::new();
    for (m, counts) in metrics.iter().zip(&outcome.yearly) {
        let seg = by_id
            .get(m.segment_id.as_str())
            .ok_or_else(|| Error::Data(format!("unknown segment {:?}", m.segment_id)))?;
        let plane = TangentPlane::new(seg.anchor[0], seg.anchor[1]);
        let slot = seg.start_slot as i64 + (m.interval_start / interval_s).round() as i64;
        for (y, &c) in counts.iter().enumerate() {
            let year = plant.first_year + y as i32;
            for _ in 0..c {
                let day = NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year")
                    + Duration::days(rng.random_range(0..365));
                let minute = slot * plant.slot_minutes as i64 + rng.random_range(0..plant.slot_minutes as i64);
                let ts = day.and_hms_opt(0, 0, 0).expect("midnight") + Duration::minutes(minute);
                let x = rng.random_range(0.0..seg.length_m);
                let yy = rng.random_range(0.0..seg.lane_count as f64 * LANE_WIDTH_M);
                let (lat, lon) = plane.to_geo([x, yy]);
                let u: f64 = rng.random();
                let crash_type = if u < 0.6 {
                    CrashType::RearEnd
                } else if u < 0.9 {
                    CrashType::Sideswipe
                } else {
                    CrashType::Other
                };
                out.push(CrashRecord {
                    timestamp: ts,
                    lat,
                    lon,
                    crash_type,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutput {
    pub segments: Vec<SegmentConfig>,
    pub trajectories: Vec<Vec<Trajectory>>,
    pub interval_params: Vec<Vec<IntervalParams>>,
    pub metrics: Vec<IntervalMetrics>,
    pub outcome: PlantOutcome,
    pub crashes: Vec<CrashRecord>,
}

/// Trajectories, their metrics, planted crash counts and crash records.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<ScenarioOutput> {
    let generated = generate_trajectories(spec)?;
    let cfg = spec.metrics_config();
    let segments: Vec<SegmentConfig> = spec.segments.iter().map(SynthSegment::segment_config).collect();
    let per_segment: Vec<Vec<IntervalMetrics>> = generated
        .par_iter()
        .zip(&segments)
        .map(|((trajs, _), seg)| {
            let (tracks, _) = prepare_tracks(trajs, &cfg)?;
            compute_segment_metrics(&tracks, seg, &cfg)
        })
        .collect::<Result<_>>()?;
    let metrics: Vec<IntervalMetrics> = per_segment.into_iter().flatten().collect();
    let outcome = generate_crash_counts(&metrics, &spec.plant, spec.seed)?;
    let crashes = crash_records(&spec.segments, &metrics, &outcome, &spec.plant, spec.interval_s, spec.seed)?;
    let (trajectories, interval_params) = generated.into_iter().unzip();
    Ok(ScenarioOutput {
        segments,
        trajectories,
        interval_params,
        metrics,
        outcome,
        crashes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg() -> SynthSegment {
        SynthSegment {
            segment_id: "T".into(),
            lane_count: 1,
            length_m: 200.0,
            speed_limit: 25.0,
            intervals: 1,
            anchor: [33.0, -112.0],
            start_slot: 0,
        }
    }

    #[test]
    fn zero_flow_is_empty() {
        let p = IntervalParams {
            flow: 0.0,
            speed_mean: 20.0,
            speed_std: 0.0,
            truck_fraction: 0.0,
            over_speed_fraction: 0.0,
            jitter: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(draw_arrivals(&seg(), &p, 30.0, &mut rng).is_empty());
    }

    #[test]
    fn lone_vehicle_keeps_constant_speed() {
        let a = Arrival {
            t: 0.0,
            lane: 0,
            x: None,
            desired_speed: 20.0,
            truck: false,
            wave: [0.0, 10.0, 0.0],
        };
        let t = simulate_arrivals(&seg(), &[a], 10.0, 0, 100, "v");
        assert_eq!(t.len(), 1);
        let xs: Vec<f64> = t[0].points.iter().map(|p| p.cx()).collect();
        for w in xs.windows(2) {
            assert!((w[1] - w[0] - 2.0).abs() < 1e-9);
        }
        assert!((t[0].length_m - CAR_LENGTH_M).abs() < 1e-9);
    }

    #[test]
    fn followers_never_overlap() {
        let arrivals: Vec<Arrival> = (0..8)
            .map(|i| Arrival {
                t: i as f64 * 0.5,
                lane: 0,
                x: None,
                desired_speed: if i == 0 { 8.0 } else { 24.0 },
                truck: i % 3 == 0,
                wave: [0.0, 10.0, 0.0],
            })
            .collect();
        let trajs = simulate_arrivals(&seg(), &arrivals, 10.0, 0, 400, "v");
        let mut frames: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
        for t in &trajs {
            for p in &t.points {
                frames.entry(p.frame).or_default().push((p.x1, p.x2));
            }
        }
        for boxes in frames.values_mut() {
            boxes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            for w in boxes.windows(2) {
                assert!(w[0].1 <= w[1].0 + 1e-9, "{boxes:?}");
            }
        }
    }

    #[test]
    fn all_trucks_have_truck_length() {
        let mut spec = ScenarioSpec::default();
        spec.segments.truncate(1);
        spec.segments[0].intervals = 2;
        spec.ranges.truck_fraction = [1.0, 1.0];
        let out = generate_trajectories(&spec).unwrap();
        assert!(!out[0].0.is_empty());
        for t in &out[0].0 {
            assert!((t.length_m - TRUCK_LENGTH_M).abs() < 1e-9);
        }
    }

    #[test]
    fn crash_counts_are_seeded() {
        let spec = ScenarioSpec::default();
        let mk = |i: usize| IntervalMetrics {
            segment_id: "S1".into(),
            interval_start: i as f64 * 30.0,
            interval_end: (i + 1) as f64 * 30.0,
            ttc_cv: None,
            ivvr: None,
            ovvr: Some((i % 7) as f64 / 10.0),
            osr: vec![(1.0, Some((i % 5) as f64 / 10.0))],
            tci: None,
            f_truck: None,
            ntc: Some((i % 3) as f64 / 100.0),
            trt: None,
            n_vehicles: 10,
            coverage: 1.0,
            e_ttc: None,
        };
        let metrics: Vec<IntervalMetrics> = (0..50).map(mk).collect();
        let a = generate_crash_counts(&metrics, &spec.plant, 3).unwrap();
        let b = generate_crash_counts(&metrics, &spec.plant, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.yearly[0].len(), 5);
    }
}
