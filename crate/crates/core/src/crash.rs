//! Crash records: CSV ingestion, spatial/temporal binning into per-segment
//! time-of-day slots, and the chi-square checks used to validate the binning.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use chrono::{DateTime, Datelike, NaiveDateTime, Timelike};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roadsafe_stats::{chi2_contingency_yates, chi2_oneway, ChiSquareTest};
use serde::{Deserialize, Serialize};

use crate::config::SegmentConfig;
use crate::error::{Error, Result};
use crate::projection::TangentPlane;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CrashType {
    RearEnd,
    Sideswipe,
    Other,
}

impl CrashType {
    /// Case-insensitive; `-` and spaces count as `_`. Unknown labels are `None`.
    pub fn parse(label: &str) -> Option<Self> {
        let norm: String = label
            .trim()
            .chars()
            .map(|c| if c == '-' || c == ' ' { '_' } else { c.to_ascii_uppercase() })
            .collect();
        match norm.as_str() {
            "REAR_END" => Some(CrashType::RearEnd),
            "SIDESWIPE" => Some(CrashType::Sideswipe),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CrashType::RearEnd => "REAR_END",
            CrashType::Sideswipe => "SIDESWIPE",
            CrashType::Other => "OTHER",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CrashFamily {
    AllType,
    RearEnd,
    Sideswipe,
}

impl CrashFamily {
    pub const ALL: [CrashFamily; 3] = [CrashFamily::AllType, CrashFamily::RearEnd, CrashFamily::Sideswipe];

    pub fn name(self) -> &'static str {
        match self {
            CrashFamily::AllType => "all_type",
            CrashFamily::RearEnd => "rear_end",
            CrashFamily::Sideswipe => "sideswipe",
        }
    }

    pub fn includes(self, t: CrashType) -> bool {
        match self {
            CrashFamily::AllType => true,
            CrashFamily::RearEnd => t == CrashType::RearEnd,
            CrashFamily::Sideswipe => t == CrashType::Sideswipe,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrashRecord {
    pub timestamp: NaiveDateTime,
    pub lat: f64,
    pub lon: f64,
    pub crash_type: CrashType,
}

const FORMATS: [&str; 6] = [
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
    "%m/%d/%Y %H:%M:%S",
    "%m/%d/%Y %H:%M",
];

/// ISO-8601 with or without an offset (offsets keep their wall-clock time),
/// plus a few common spreadsheet layouts.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_local());
    }
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

#[derive(Debug, Deserialize)]
struct RawCrash {
    timestamp: String,
    lat: String,
    lon: String,
    #[serde(rename = "type")]
    kind: String,
}

/// Reads `timestamp,lat,lon,type`. Returns the records and one warning per
/// unrecognized type label.
pub fn parse_crashes<R: Read>(input: R) -> Result<(Vec<CrashRecord>, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    for col in ["timestamp", "lat", "lon", "type"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Schema {
                line: 1,
                message: format!("missing required column {col:?}"),
            });
        }
    }
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != headers.len() {
            return Err(Error::Schema {
                line,
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        let raw: RawCrash = rec.deserialize(Some(&headers)).map_err(|e| Error::Schema {
            line,
            message: e.to_string(),
        })?;
        let timestamp = parse_timestamp(&raw.timestamp).ok_or_else(|| Error::Schema {
            line,
            message: format!("unparseable timestamp {:?}", raw.timestamp),
        })?;
        let coord = |s: &str, name: &str, limit: f64| -> Result<f64> {
            match s.parse::<f64>() {
                Ok(v) if v.abs() <= limit => Ok(v),
                _ => Err(Error::Schema {
                    line,
                    message: format!("invalid {name} {s:?}"),
                }),
            }
        };
        let lat = coord(&raw.lat, "lat", 90.0)?;
        let lon = coord(&raw.lon, "lon", 180.0)?;
        let crash_type = CrashType::parse(&raw.kind).unwrap_or_else(|| {
            warnings.push(format!("line {line}: crash type {:?} counted as OTHER", raw.kind));
            CrashType::Other
        });
        records.push(CrashRecord {
            timestamp,
            lat,
            lon,
            crash_type,
        });
    }
    Ok((records, warnings))
}

pub fn write_crashes<W: Write>(out: W, records: &[CrashRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "lat", "lon", "type"])?;
    for r in records {
        w.write_record([
            r.timestamp.format("%Y-%m-%dT%H:%M:%S").to_string(),
            crate::format_float(r.lat),
            crate::format_float(r.lon),
            r.crash_type.label().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashCounts {
    pub segment_id: String,
    pub slot: u32,
    pub all_type: u64,
    pub rear_end: u64,
    pub sideswipe: u64,
    pub years_covered: u32,
}

impl CrashCounts {
    pub fn count(&self, family: CrashFamily) -> u64 {
        match family {
            CrashFamily::AllType => self.all_type,
            CrashFamily::RearEnd => self.rear_end,
            CrashFamily::Sideswipe => self.sideswipe,
        }
    }

    /// Count per year, the regression target.
    pub fn mean_count(&self, family: CrashFamily) -> f64 {
        self.count(family) as f64 / self.years_covered as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    /// Every slot of every matchable segment, zero counts included, in
    /// segment order then slot order.
    pub counts: Vec<CrashCounts>,
    pub assigned: usize,
    pub dropped_outside: usize,
    pub dropped_out_of_years: usize,
    pub years_covered: u32,
    pub warnings: Vec<String>,
}

pub fn validate_slot_minutes(slot_minutes: u32) -> Result<()> {
    if slot_minutes == 0 || 60 % slot_minutes != 0 {
        return Err(Error::Parameter(format!(
            "slot length must divide 60 minutes, got {slot_minutes}"
        )));
    }
    Ok(())
}

pub fn slot_of(ts: &NaiveDateTime, slot_minutes: u32) -> u32 {
    (ts.hour() * 60 + ts.minute()) / slot_minutes
}

/// Assigns each record to the first segment whose bbox contains it and to
/// its time-of-day slot. `years` fixes the covered range (inclusive);
/// otherwise the distinct years present in `records` are counted.
pub fn bin_crashes(
    records: &[CrashRecord],
    segments: &[SegmentConfig],
    slot_minutes: u32,
    years: Option<(i32, i32)>,
) -> Result<Binning> {
    validate_slot_minutes(slot_minutes)?;
    let slots = 24 * 60 / slot_minutes;
    let matchable: Vec<(&SegmentConfig, TangentPlane, crate::config::BBox)> = segments
        .iter()
        .filter_map(|s| {
            let bbox = s.bbox?;
            let [lat0, lon0] = s.anchor?;
            Some((s, TangentPlane::new(lat0, lon0), bbox))
        })
        .collect();
    let mut warnings = Vec::new();
    for i in 0..matchable.len() {
        for j in i + 1..matchable.len() {
            let (a, pa, ba) = &matchable[i];
            let (b, pb, bb) = &matchable[j];
            // compare in a's frame using b's corners mapped through geo
            let corners = [[bb.x_min, bb.y_min], [bb.x_max, bb.y_max]]
                .map(|c| pb.to_geo(c))
                .map(|(lat, lon)| pa.to_local(lat, lon));
            let b_in_a = crate::config::BBox {
                x_min: corners[0][0].min(corners[1][0]),
                y_min: corners[0][1].min(corners[1][1]),
                x_max: corners[0][0].max(corners[1][0]),
                y_max: corners[0][1].max(corners[1][1]),
            };
            if ba.overlaps(&b_in_a) {
                warnings.push(format!(
                    "bboxes of segments {:?} and {:?} overlap; shared crashes go to {:?}",
                    a.segment_id, b.segment_id, a.segment_id
                ));
            }
        }
    }
    if let Some((lo, hi)) = years {
        if hi < lo {
            return Err(Error::Parameter(format!("year range {lo}..={hi} is empty")));
        }
    }
    let years_covered = match years {
        Some((lo, hi)) => (hi - lo + 1) as u32,
        None => records
            .iter()
            .map(|r| r.timestamp.year())
            .collect::<BTreeSet<_>>()
            .len() as u32,
    };
    let mut counts: Vec<CrashCounts> = matchable
        .iter()
        .flat_map(|(s, _, _)| {
            (0..slots).map(move |slot| CrashCounts {
                segment_id: s.segment_id.clone(),
                slot,
                all_type: 0,
                rear_end: 0,
                sideswipe: 0,
                years_covered: years_covered.max(1),
            })
        })
        .collect();
    let mut out = Binning {
        years_covered,
        ..Binning::default()
    };
    for r in records {
        if let Some((lo, hi)) = years {
            if !(lo..=hi).contains(&r.timestamp.year()) {
                out.dropped_out_of_years += 1;
                continue;
            }
        }
        let hit = matchable
            .iter()
            .position(|(_, plane, bbox)| bbox.contains(plane.to_local(r.lat, r.lon)));
        let Some(seg) = hit else {
            out.dropped_outside += 1;
            continue;
        };
        let c = &mut counts[seg * slots as usize + slot_of(&r.timestamp, slot_minutes) as usize];
        c.all_type += 1;
        match r.crash_type {
            CrashType::RearEnd => c.rear_end += 1,
            CrashType::Sideswipe => c.sideswipe += 1,
            CrashType::Other => {}
        }
        out.assigned += 1;
    }
    out.counts = counts;
    out.warnings = warnings;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    pub mean_statistic: f64,
    pub mean_p_value: f64,
    pub df: usize,
    pub repeats: usize,
    pub subset_size: usize,
}

/// Draws `fraction` of the records of `pool` without replacement, tabulates
/// them against `full` per slot and runs the Yates-corrected contingency
/// test; statistic and p-value are averaged over `repeats` draws. Slots
/// empty in both tables are left out.
pub fn consistency_test(
    full: &[u64],
    pool: &[u64],
    fraction: f64,
    seed: u64,
    repeats: usize,
) -> Result<ConsistencyResult> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Parameter(format!("fraction must lie in (0, 1), got {fraction}")));
    }
    if full.len() != pool.len() {
        return Err(Error::Data("full and pool tables differ in slot count".into()));
    }
    if repeats == 0 {
        return Err(Error::Parameter("repeats must be at least 1".into()));
    }
    let labels: Vec<usize> = pool
        .iter()
        .enumerate()
        .flat_map(|(slot, &c)| std::iter::repeat_n(slot, c as usize))
        .collect();
    let k = ((labels.len() as f64) * fraction).round() as usize;
    if k == 0 || full.iter().all(|&c| c == 0) {
        return Err(Error::Data("no crash records to compare".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut stat_sum, mut p_sum, mut df) = (0.0, 0.0, 0usize);
    for _ in 0..repeats {
        let mut sub = vec![0u64; full.len()];
        for i in sample(&mut rng, labels.len(), k) {
            sub[labels[i]] += 1;
        }
        let keep: Vec<usize> = (0..full.len()).filter(|&s| full[s] + sub[s] > 0).collect();
        let table = vec![
            keep.iter().map(|&s| full[s] as f64).collect::<Vec<_>>(),
            keep.iter().map(|&s| sub[s] as f64).collect::<Vec<_>>(),
        ];
        let t: ChiSquareTest<f64> = chi2_contingency_yates(&table)?;
        stat_sum += t.statistic;
        p_sum += t.p_value;
        df = t.df;
    }
    Ok(ConsistencyResult {
        mean_statistic: stat_sum / repeats as f64,
        mean_p_value: p_sum / repeats as f64,
        df,
        repeats,
        subset_size: k,
    })
}

/// [`consistency_test`] with the subsample drawn from the full data itself.
pub fn subsample_consistency_test(
    counts_full: &[u64],
    fraction: f64,
    seed: u64,
    repeats: usize,
) -> Result<ConsistencyResult> {
    consistency_test(counts_full, counts_full, fraction, seed, repeats)
}

/// One-way test of per-hour totals against a uniform expectation.
pub fn hourly_heterogeneity_test(counts: &[u64]) -> Result<ChiSquareTest<f64>> {
    if counts.len() < 2 {
        return Err(Error::Data("need at least two hours".into()));
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::Data("all hourly counts are zero".into()));
    }
    let obs: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    Ok(chi2_oneway(&obs, None)?)
}

/// Sums the family's counts over segments per slot.
pub fn totals_per_slot(counts: &[CrashCounts], family: CrashFamily, slots: usize) -> Vec<u64> {
    let mut out = vec![0u64; slots];
    for c in counts {
        if let Some(v) = out.get_mut(c.slot as usize) {
            *v += c.count(family);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::BBox;

    fn segment(id: &str, anchor: [f64; 2], half: f64) -> SegmentConfig {
        let mut s = SegmentConfig::new(id, 2, 200.0, 30.0);
        s.anchor = Some(anchor);
        s.bbox = Some(BBox {
            x_min: -half,
            y_min: -half,
            x_max: half,
            y_max: half,
        });
        s
    }

    #[test]
    fn parse_examples() {
        let csv = "timestamp,lat,lon,type\n2019-03-01T12:05:00,33.0,-112.0,rear-end\n";
        let (r, w) = parse_crashes(csv.as_bytes()).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].crash_type, CrashType::RearEnd);
        assert!(w.is_empty());

        let csv = "timestamp,lat,lon,type\n2019-03-01 12:05,33.0,-112.0,HEAD-ON\n";
        let (r, w) = parse_crashes(csv.as_bytes()).unwrap();
        assert_eq!(r[0].crash_type, CrashType::Other);
        assert_eq!(w.len(), 1);

        let csv = "timestamp,lat,lon,type\nnot a date,33.0,-112.0,SIDESWIPE\n";
        assert!(matches!(parse_crashes(csv.as_bytes()), Err(Error::Schema { line: 2, .. })));
    }

    #[test]
    fn timestamp_forms() {
        for s in ["2020-01-02T03:04:05", "2020-01-02 03:04:05", "2020-01-02T03:04:05-07:00", "01/02/2020 03:04"] {
            let t = parse_timestamp(s).unwrap();
            assert_eq!((t.year(), t.hour(), t.minute()), (2020, 3, 4), "{s}");
        }
    }

    #[test]
    fn binning_examples() {
        let seg = segment("A", [33.0, -112.0], 100.0);
        let at = |h: u32, m: u32, lat: f64, t: CrashType, y: i32| CrashRecord {
            timestamp: chrono::NaiveDate::from_ymd_opt(y, 6, 1)
                .unwrap()
                .and_hms_opt(h, m, 0)
                .unwrap(),
            lat,
            lon: -112.0,
            crash_type: t,
        };
        let b = bin_crashes(&[at(12, 5, 33.0, CrashType::RearEnd, 2019)], &[seg.clone()], 60, None).unwrap();
        assert_eq!(b.counts.len(), 24);
        assert_eq!(b.counts[12].rear_end, 1);
        assert_eq!(b.assigned, 1);

        let b = bin_crashes(&[at(12, 5, 34.0, CrashType::RearEnd, 2019)], &[seg.clone()], 60, None).unwrap();
        assert_eq!((b.assigned, b.dropped_outside), (0, 1));

        let recs: Vec<CrashRecord> = (0..10)
            .map(|i| at(12, 30, 33.0, CrashType::RearEnd, 2015 + i % 5))
            .collect();
        let b = bin_crashes(&recs, &[seg], 60, None).unwrap();
        assert_eq!(b.counts[12].mean_count(CrashFamily::RearEnd), 2.0);
        assert_eq!(b.counts[12].mean_count(CrashFamily::AllType), 2.0);
        assert_eq!(b.counts[12].mean_count(CrashFamily::Sideswipe), 0.0);
    }

    #[test]
    fn overlapping_boxes_warn_and_first_wins() {
        let a = segment("A", [33.0, -112.0], 100.0);
        let b = segment("B", [33.0, -112.0], 50.0);
        let rec = CrashRecord {
            timestamp: parse_timestamp("2019-01-01T08:00:00").unwrap(),
            lat: 33.0,
            lon: -112.0,
            crash_type: CrashType::Sideswipe,
        };
        let out = bin_crashes(&[rec], &[a, b], 60, None).unwrap();
        assert_eq!(out.warnings.len(), 1);
        assert_eq!(out.counts[8].segment_id, "A");
        assert_eq!(out.counts[8].sideswipe, 1);
    }

    #[test]
    fn year_range_counts_empty_years() {
        let seg = segment("A", [33.0, -112.0], 100.0);
        let rec = CrashRecord {
            timestamp: parse_timestamp("2019-01-01T08:00:00").unwrap(),
            lat: 33.0,
            lon: -112.0,
            crash_type: CrashType::Other,
        };
        let out = bin_crashes(&[rec], &[seg], 60, Some((2015, 2019))).unwrap();
        assert_eq!(out.years_covered, 5);
        assert_eq!(out.counts[8].mean_count(CrashFamily::AllType), 0.2);
    }

    #[test]
    fn slot_minutes_must_divide_hour() {
        assert!(validate_slot_minutes(7).is_err());
        assert!(validate_slot_minutes(0).is_err());
        assert!(validate_slot_minutes(10).is_ok());
        assert!(validate_slot_minutes(60).is_ok());
    }

    #[test]
    fn hourly_examples() {
        let t = hourly_heterogeneity_test(&[5, 5, 5, 5]).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert!((t.p_value - 1.0).abs() < 1e-12);
        let t = hourly_heterogeneity_test(&[10, 20]).unwrap();
        assert!((t.statistic - 10.0 / 3.0).abs() < 1e-12);
        assert!((t.p_value - 0.0679).abs() < 1e-4);
        assert!(hourly_heterogeneity_test(&[0, 0, 0]).is_err());
    }

    #[test]
    fn consistency_is_seeded() {
        let full = [40, 55, 61, 38, 70, 52];
        let a = subsample_consistency_test(&full, 0.1, 7, 50).unwrap();
        let b = subsample_consistency_test(&full, 0.1, 7, 50).unwrap();
        assert_eq!(a, b);
        assert!(subsample_consistency_test(&full, 1.0, 7, 5).is_err());
    }
}
