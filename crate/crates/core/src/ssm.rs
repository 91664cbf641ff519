//! Individual surrogate safety measures for leader/follower pairs and the
//! minimum safe envelope distances.

use std::collections::BTreeMap;
use std::io::Write;

use roadsafe_stats::Real;
use serde::{Deserialize, Serialize};

use crate::config::SegmentConfig;
use crate::error::{Error, Result};
use crate::prepare::PreparedTrack;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairState<T> {
    /// Leader and follower positions along the axis, meters.
    pub x_l: T,
    pub x_f: T,
    /// m/s; a negative leader speed is an oncoming vehicle.
    pub v_l: T,
    pub v_f: T,
    /// Leader acceleration, negative when braking.
    pub b: T,
    /// Most negative achievable leader acceleration.
    pub b_max: T,
}

impl<T: Real> PairState<T> {
    pub fn new(x_l: T, x_f: T, v_l: T, v_f: T) -> Self {
        Self {
            x_l,
            x_f,
            v_l,
            v_f,
            b: T::zero(),
            b_max: -T::one(),
        }
    }

    fn gap(&self) -> Result<T> {
        if self.x_l > self.x_f {
            Ok(self.x_l - self.x_f)
        } else {
            Err(Error::Geometry(format!(
                "leader at {} is not ahead of follower at {}",
                self.x_l, self.x_f
            )))
        }
    }
}

/// Absent unless the follower is strictly faster.
pub fn ttc<T: Real>(p: &PairState<T>) -> Result<Option<T>> {
    let gap = p.gap()?;
    Ok((p.v_f > p.v_l).then(|| gap / (p.v_f - p.v_l)))
}

pub fn pet<T: Real>(t_a: T, t_b: T) -> Result<T> {
    if t_b < t_a {
        return Err(Error::Ordering(format!("PET needs t_b >= t_a, got {t_a} and {t_b}")));
    }
    Ok(t_b - t_a)
}

pub fn drac<T: Real>(p: &PairState<T>) -> Result<T> {
    let gap = p.gap()?;
    Ok(if p.v_f > p.v_l {
        (p.v_f - p.v_l).powi(2) / gap
    } else {
        T::zero()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsmConfig<T> {
    /// Maximum available deceleration rate, m/s^2 (positive).
    pub madr: T,
    /// Sampling period, seconds.
    pub dt: T,
}

/// Exposure-time fraction with DRAC at or above MADR. `samples` pairs each
/// DRAC value with the activity flag.
pub fn cpi<T: Real>(samples: &[(T, bool)], cfg: &SsmConfig<T>, t_i: T) -> Result<T> {
    let (madr, dt) = (cfg.madr, cfg.dt);
    if !(madr > T::zero() && dt > T::zero() && t_i > T::zero()) {
        return Err(Error::Parameter("CPI needs positive MADR, time step and travel time".into()));
    }
    let hits = samples.iter().filter(|(d, active)| *active && *d >= madr).count();
    Ok(T::from_count(hits) * dt / t_i)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Psd<T> {
    Value(T),
    /// Zero speed: no stopping distance is needed.
    NoStoppingNeeded,
}

impl<T: Real> Psd<T> {
    pub fn value(self) -> Option<T> {
        match self {
            Psd::Value(v) => Some(v),
            Psd::NoStoppingNeeded => None,
        }
    }
}

/// Remaining distance over the minimum stopping distance `v^2 / (2 MADR)`.
pub fn psd<T: Real>(remaining: T, v: T, madr: T) -> Result<Psd<T>> {
    if !(madr > T::zero()) || remaining < T::zero() {
        return Err(Error::Parameter("PSD needs MADR > 0 and a non-negative distance".into()));
    }
    if v == T::zero() {
        return Ok(Psd::NoStoppingNeeded);
    }
    let msd = v * v / (T::lit(2.0) * madr);
    Ok(Psd::Value(remaining / msd))
}

pub fn uns<T: Real>(delta_v: T, v_f: T, b: T, b_max: T) -> Result<T> {
    if !(b_max < T::zero()) {
        return Err(Error::Parameter(format!("b_max must be negative, got {b_max}")));
    }
    let r_d = if b < T::zero() { b / b_max } else { T::zero() };
    Ok(delta_v * v_f * r_d)
}

/// Unsafe density: summed UNS times the step `d`, per unit time and length.
pub fn ud<T: Real>(uns_samples: &[T], d: T, period: T, length: T) -> Result<T> {
    if !(period > T::zero() && length > T::zero()) {
        return Err(Error::Parameter("UD needs a positive period and length".into()));
    }
    Ok(uns_samples.iter().copied().sum::<T>() * d / (period * length))
}

pub fn max_speed<T: Real>(series: &[T]) -> Result<T> {
    series
        .iter()
        .copied()
        .reduce(T::max)
        .ok_or_else(|| Error::Data("empty speed series".into()))
}

pub fn delta_v<T: Real>(v_f: T, v_l: T) -> T {
    v_f - v_l
}

pub const DEFAULT_DR_ONSET: f64 = 0.5;

/// First deceleration (positive magnitude) above `onset`, if any.
pub fn initial_dr<T: Real>(decel_series: &[T], onset: T) -> Result<Option<T>> {
    if decel_series.is_empty() {
        return Err(Error::Data("empty deceleration series".into()));
    }
    Ok(decel_series.iter().copied().find(|&d| d > onset))
}

/// Longitudinal or lateral acceleration limits, all positive magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelLimits<T> {
    pub max_acc: T,
    pub min_dec: T,
    pub max_dec: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeParams<T> {
    /// Response time, seconds.
    pub rho: T,
    pub long: AccelLimits<T>,
    pub lat: AccelLimits<T>,
    /// Lateral fluctuation margin, meters.
    pub mu: T,
}

impl<T: Real> EnvelopeParams<T> {
    fn check(&self) -> Result<()> {
        let all = [
            self.long.max_acc,
            self.long.min_dec,
            self.long.max_dec,
            self.lat.max_acc,
            self.lat.min_dec,
            self.lat.max_dec,
        ];
        if all.iter().any(|&a| !(a > T::zero())) {
            return Err(Error::Parameter("acceleration limits must be positive".into()));
        }
        if self.rho < T::zero() || self.mu < T::zero() {
            return Err(Error::Parameter("response time and margin must be non-negative".into()));
        }
        Ok(())
    }
}

impl Default for EnvelopeParams<f64> {
    fn default() -> Self {
        Self {
            rho: 1.0,
            long: AccelLimits {
                max_acc: 2.0,
                min_dec: 4.0,
                max_dec: 8.0,
            },
            lat: AccelLimits {
                max_acc: 0.2,
                min_dec: 0.8,
                max_dec: 0.8,
            },
            mu: 0.5,
        }
    }
}

/// Whose minimum braking the follower's stopping term uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrakeConvention {
    /// The follower's own minimum braking.
    #[default]
    Rss,
    /// The leader's minimum braking, as the formula is printed.
    Literal,
}

fn reaction_and_brake<T: Real>(v: T, rho: T, acc: T, dec: T) -> T {
    let half = T::lit(0.5);
    v * rho + half * acc * rho * rho + (v + acc * rho).powi(2) / (T::lit(2.0) * dec)
}

/// Same-direction following distance, clamped at 0.
pub fn min_safe_long_same<T: Real>(
    ego: &EnvelopeParams<T>,
    v_ego: T,
    lead: &EnvelopeParams<T>,
    v_lead: T,
    convention: BrakeConvention,
) -> Result<T> {
    ego.check()?;
    lead.check()?;
    let brake = match convention {
        BrakeConvention::Rss => ego.long.min_dec,
        BrakeConvention::Literal => lead.long.min_dec,
    };
    let d = reaction_and_brake(v_ego, ego.rho, ego.long.max_acc, brake)
        - v_lead * v_lead / (T::lit(2.0) * lead.long.max_dec);
    Ok(d.max(T::zero()))
}

/// Opposite-direction closing distance.
pub fn min_safe_long_opp<T: Real>(
    ego: &EnvelopeParams<T>,
    v_ego: T,
    other: &EnvelopeParams<T>,
    v_other: T,
) -> Result<T> {
    ego.check()?;
    other.check()?;
    Ok(reaction_and_brake(v_ego, ego.rho, ego.long.max_acc, ego.long.min_dec)
        + reaction_and_brake(v_other.abs(), other.rho, other.long.max_acc, other.long.min_dec))
}

/// Lateral distance with the ego's margin, clamped at 0.
pub fn min_safe_lat<T: Real>(
    ego: &EnvelopeParams<T>,
    v_ego_lat: T,
    other: &EnvelopeParams<T>,
    v_other_lat: T,
) -> Result<T> {
    ego.check()?;
    other.check()?;
    let two = T::lit(2.0);
    let half = T::lit(0.5);
    let ego_term = reaction_and_brake(v_ego_lat, ego.rho, ego.lat.max_acc, ego.lat.min_dec);
    let r2 = other.rho;
    let other_term = v_other_lat * r2
        - half * other.lat.max_acc * r2 * r2
        - (v_other_lat - r2 * other.lat.max_acc).powi(2) / (two * other.lat.min_dec);
    Ok((ego.mu + ego_term - other_term).max(T::zero()))
}

pub fn msdf<T: Real>(d: T, d_min: T) -> Result<T> {
    if !(d_min > T::zero()) {
        return Err(Error::Parameter("MSDF needs a positive minimum distance".into()));
    }
    Ok(d / d_min)
}

pub fn msdce<T: Real>(gt_long: T, calc_long: T, gt_lat: T, calc_lat: T) -> Result<T> {
    if !(gt_long > T::zero() && gt_lat > T::zero()) {
        return Err(Error::Parameter("MSDCE needs positive ground-truth distances".into()));
    }
    Ok(((gt_long - calc_long).abs() / gt_long + (gt_lat - calc_lat).abs() / gt_lat).sqrt())
}

/// Settings for the pairwise batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsmBatchConfig {
    pub madr: f64,
    pub b_max: f64,
    pub lateral_tolerance_m: f64,
    pub envelope: EnvelopeParams<f64>,
    pub convention: BrakeConvention,
}

impl Default for SsmBatchConfig {
    fn default() -> Self {
        Self {
            madr: 3.4,
            b_max: -8.0,
            lateral_tolerance_m: 1.8,
            envelope: EnvelopeParams::default(),
            convention: BrakeConvention::Rss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsmRow {
    pub t: f64,
    pub follower_id: String,
    pub leader_id: String,
    pub ttc: Option<f64>,
    pub drac: f64,
    pub pet: Option<f64>,
    pub delta_v: f64,
    pub psd: Option<f64>,
    pub uns: f64,
    pub d_min_long: f64,
    pub msdf_long: Option<f64>,
}

pub const SSM_HEADER: [&str; 11] = [
    "t",
    "follower_id",
    "leader_id",
    "ttc",
    "drac",
    "pet",
    "delta_v",
    "psd",
    "uns",
    "d_min_long",
    "msdf_long",
];

/// Every frame, pairs each vehicle with the nearest vehicle ahead within the
/// lateral tolerance and evaluates the pairwise measures. PET is the time
/// until the follower reaches the leader's current position.
pub fn compute_pair_ssms(
    tracks: &[PreparedTrack],
    seg: &SegmentConfig,
    cfg: &SsmBatchConfig,
) -> Result<Vec<SsmRow>> {
    let along = |p: [f64; 2]| seg.along(p);
    let across = |p: [f64; 2]| seg.across(p);
    let axis_speed = |vx: f64, vy: f64| vx * seg.travel_axis[0] + vy * seg.travel_axis[1];

    let mut frames: BTreeMap<u64, Vec<(usize, usize)>> = BTreeMap::new();
    for (ti, tr) in tracks.iter().enumerate() {
        for (si, s) in tr.samples.iter().enumerate() {
            frames.entry(s.frame).or_default().push((ti, si));
        }
    }
    let accel = |ti: usize, si: usize| -> f64 {
        let s = &tracks[ti].samples;
        if si == 0 || s[si].frame != s[si - 1].frame + 1 {
            return 0.0;
        }
        (axis_speed(s[si].vx, s[si].vy) - axis_speed(s[si - 1].vx, s[si - 1].vy)) / (s[si].t - s[si - 1].t)
    };

    let mut rows = Vec::new();
    for present in frames.values() {
        for &(fi, fs) in present {
            let f = &tracks[fi].samples[fs];
            let xf = along(f.position);
            let leader = present
                .iter()
                .filter(|&&(li, ls)| {
                    let l = &tracks[li].samples[ls];
                    li != fi
                        && along(l.position) > xf
                        && (across(l.position) - across(f.position)).abs() <= cfg.lateral_tolerance_m
                })
                .min_by(|a, b| {
                    let pa = along(tracks[a.0].samples[a.1].position);
                    let pb = along(tracks[b.0].samples[b.1].position);
                    pa.partial_cmp(&pb).unwrap_or(std::cmp::Ordering::Equal)
                });
            let Some(&(li, ls)) = leader else { continue };
            let l = &tracks[li].samples[ls];
            let state = PairState {
                x_l: along(l.position),
                x_f: xf,
                v_l: axis_speed(l.vx, l.vy),
                v_f: axis_speed(f.vx, f.vy),
                b: accel(li, ls),
                b_max: cfg.b_max,
            };
            let gap = state.x_l - state.x_f;
            let reach = tracks[fi].samples[fs..]
                .iter()
                .find(|s| along(s.position) >= state.x_l)
                .map(|s| s.t);
            let dv = delta_v(state.v_f, state.v_l);
            let d_min = min_safe_long_same(
                &cfg.envelope,
                state.v_f.max(0.0),
                &cfg.envelope,
                state.v_l.max(0.0),
                cfg.convention,
            )?;
            rows.push(SsmRow {
                t: f.t,
                follower_id: tracks[fi].vehicle_id.clone(),
                leader_id: tracks[li].vehicle_id.clone(),
                ttc: ttc(&state)?,
                drac: drac(&state)?,
                pet: reach.map(|t_b| pet(f.t, t_b)).transpose()?,
                delta_v: dv,
                psd: psd(gap, state.v_f.abs(), cfg.madr)?.value(),
                uns: uns(dv, state.v_f, state.b, state.b_max)?,
                d_min_long: d_min,
                msdf_long: (d_min > 0.0).then(|| gap / d_min),
            });
        }
    }
    Ok(rows)
}

pub fn write_ssm_rows<W: Write>(out: W, rows: &[SsmRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SSM_HEADER)?;
    let o = |v: Option<f64>| v.map(crate::format_float).unwrap_or_default();
    for r in rows {
        w.write_record([
            crate::format_float(r.t),
            r.follower_id.clone(),
            r.leader_id.clone(),
            o(r.ttc),
            crate::format_float(r.drac),
            o(r.pet),
            crate::format_float(r.delta_v),
            o(r.psd),
            crate::format_float(r.uns),
            crate::format_float(r.d_min_long),
            o(r.msdf_long),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(gap: f64, v_f: f64, v_l: f64) -> PairState<f64> {
        PairState::new(gap, 0.0, v_l, v_f)
    }

    #[test]
    fn ttc_examples() {
        assert_eq!(ttc(&pair(50.0, 30.0, 20.0)).unwrap(), Some(5.0));
        assert_eq!(ttc(&pair(50.0, 20.0, 20.0)).unwrap(), None);
        assert_eq!(ttc(&pair(100.0, 10.0, -10.0)).unwrap(), Some(5.0));
        assert!(matches!(ttc(&pair(0.0, 10.0, 5.0)), Err(Error::Geometry(_))));
    }

    #[test]
    fn pet_examples() {
        assert_eq!(pet(10.0, 12.0).unwrap(), 2.0);
        assert_eq!(pet(7.0, 7.0).unwrap(), 0.0);
        assert!(matches!(pet(12.0, 10.0), Err(Error::Ordering(_))));
    }

    #[test]
    fn drac_examples() {
        assert_eq!(drac(&pair(50.0, 30.0, 20.0)).unwrap(), 2.0);
        assert_eq!(drac(&pair(50.0, 20.0, 25.0)).unwrap(), 0.0);
        assert_eq!(drac(&pair(25.0, 20.0, 10.0)).unwrap(), 4.0);
    }

    #[test]
    fn cpi_examples() {
        let cfg = SsmConfig { madr: 3.4, dt: 1.0 };
        let low = vec![(1.0, true); 10];
        assert_eq!(cpi(&low, &cfg, 10.0).unwrap(), 0.0);
        let high = vec![(5.0, true); 10];
        assert_eq!(cpi(&high, &cfg, 10.0).unwrap(), 1.0);
        let mixed: Vec<(f64, bool)> = (0..10).map(|i| (if i < 3 { 4.0 } else { 1.0 }, true)).collect();
        assert!((cpi(&mixed, &cfg, 10.0).unwrap() - 0.3).abs() < 1e-15);
        let inactive = vec![(5.0, false); 10];
        assert_eq!(cpi(&inactive, &cfg, 10.0).unwrap(), 0.0);
    }

    #[test]
    fn psd_uns_ud_examples() {
        assert_eq!(psd(50.0, 20.0, 5.0).unwrap(), Psd::Value(1.25));
        assert_eq!(psd(50.0, 0.0, 5.0).unwrap(), Psd::NoStoppingNeeded);
        assert_eq!(psd(0.0, 20.0, 5.0).unwrap(), Psd::Value(0.0));

        assert_eq!(uns(5.0, 25.0, -2.0, -8.0).unwrap(), 31.25);
        assert_eq!(uns(5.0, 25.0, 1.0, -8.0).unwrap(), 0.0);
        assert_eq!(uns(5.0, 25.0, -8.0, -8.0).unwrap(), 125.0);
        assert!(uns(5.0, 25.0, -1.0, 0.0).is_err());

        assert_eq!(ud(&[0.0, 0.0], 1.0, 100.0, 500.0).unwrap(), 0.0);
        assert!((ud(&[31.25f64], 1.0, 100.0, 500.0).unwrap() - 6.25e-4).abs() < 1e-18);
        let a = ud(&[31.25f64], 1.0, 100.0, 500.0).unwrap();
        let b = ud(&[31.25], 1.0, 100.0, 1000.0).unwrap();
        assert!((a - 2.0 * b).abs() < 1e-18);
    }

    #[test]
    fn series_examples() {
        assert_eq!(max_speed(&[10.0, 12.0, 9.0]).unwrap(), 12.0);
        assert_eq!(delta_v(30.0, 20.0), 10.0);
        assert_eq!(initial_dr(&[0.1, 0.2, 1.5, 3.0], 0.5).unwrap(), Some(1.5));
        assert!(max_speed::<f64>(&[]).is_err());
        assert!(initial_dr::<f64>(&[], 0.5).is_err());
    }

    fn env(rho: f64, acc: f64, min_dec: f64, max_dec: f64) -> EnvelopeParams<f64> {
        EnvelopeParams {
            rho,
            long: AccelLimits {
                max_acc: acc,
                min_dec,
                max_dec,
            },
            lat: AccelLimits {
                max_acc: 0.2,
                min_dec: 1.0,
                max_dec: 1.0,
            },
            mu: 0.5,
        }
    }

    #[test]
    fn envelope_examples() {
        let ego = env(1.0, 2.0, 4.0, 8.0);
        let lead = env(1.0, 2.0, 4.0, 6.0);
        let d = min_safe_long_same(&ego, 20.0, &lead, 15.0, BrakeConvention::Rss).unwrap();
        assert!((d - 62.75).abs() < 1e-12);
        let d = min_safe_long_same(&ego, 20.0, &lead, 0.0, BrakeConvention::Rss).unwrap();
        assert!((d - 81.5).abs() < 1e-12);
        let d = min_safe_long_same(&ego, 0.0, &lead, 40.0, BrakeConvention::Rss).unwrap();
        assert_eq!(d, 0.0);

        let d = min_safe_long_opp(&ego, 20.0, &ego, -15.0).unwrap();
        assert!((d - 133.625).abs() < 1e-12);

        let lat = min_safe_lat(&ego, 0.0, &ego, 0.0).unwrap();
        assert!((lat - 0.74).abs() < 1e-12);
        let mut still = ego;
        still.mu = 0.0;
        still.rho = 0.0;
        assert_eq!(min_safe_lat(&still, 0.0, &still, 0.0).unwrap(), 0.0);
        // the neighbour term peaks at v = rho (a_acc + a_dec), pushing the raw value below 0
        assert_eq!(min_safe_lat(&still, 0.0, &ego, 1.2).unwrap(), 0.0);

        assert!(min_safe_long_same(&env(1.0, 2.0, 0.0, 6.0), 1.0, &lead, 1.0, BrakeConvention::Rss).is_err());
    }

    #[test]
    fn literal_convention_uses_leader_braking() {
        let ego = env(1.0, 2.0, 4.0, 8.0);
        let lead = env(1.0, 2.0, 5.0, 6.0);
        let d = min_safe_long_same(&ego, 20.0, &lead, 15.0, BrakeConvention::Literal).unwrap();
        assert!((d - (21.0 + 484.0 / 10.0 - 225.0 / 12.0)).abs() < 1e-12);
    }

    #[test]
    fn msdf_msdce_examples() {
        assert_eq!(msdf(20.0, 10.0).unwrap(), 2.0);
        assert!(msdf(20.0, 0.0).is_err());
        assert_eq!(msdce(10.0, 10.0, 2.0, 2.0).unwrap(), 0.0);
        assert_eq!(msdce(10.0, 12.5, 2.0, 2.0).unwrap(), 0.5);
    }
}
