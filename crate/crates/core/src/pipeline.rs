//! Association between interval metrics and crash counts: the join, per-metric
//! correlations, the all-predictor models, cross-segment generalization and
//! Shapley attribution, plus the flat tables written next to the report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use roadsafe_stats::{
    evaluate, kfold_cv, ols_fit, pearson, poisson_fit, shapley_values, ChiSquareTest64, CorrelationMethod,
    CvReport64, Dataset64, Matrix, ModelKind, NmseMode, RegressionReport64, ShapleyReport64,
};
use serde::{Deserialize, Serialize};

use crate::config::SegmentConfig;
use crate::crash::{
    hourly_heterogeneity_test, subsample_consistency_test, validate_slot_minutes, ConsistencyResult, CrashCounts,
    CrashFamily,
};
use crate::error::{Error, Result};
use crate::nsm::{IntervalMetrics, DEFAULT_PREDICTORS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidityConfig {
    pub enabled: bool,
    /// Share of records drawn in each subsample.
    pub fraction: f64,
    pub repeats: usize,
}

impl Default for ValidityConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            fraction: 0.5,
            repeats: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub slot_minutes: u32,
    pub families: Vec<CrashFamily>,
    pub methods: Vec<CorrelationMethod>,
    pub cv_folds: usize,
    pub seed: u64,
    pub predictors: Vec<String>,
    /// Predictors removed from `predictors`, e.g. to drop one that is
    /// undefined in most intervals.
    pub exclude: Vec<String>,
    /// Comparison columns correlated alongside the metrics.
    pub baselines: Vec<String>,
    pub nmse_mode: NmseMode,
    /// Inclusive crash year range; the years present in the data otherwise.
    pub years: Option<[i32; 2]>,
    pub validity: ValidityConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            slot_minutes: 10,
            families: CrashFamily::ALL.to_vec(),
            methods: CorrelationMethod::ALL.to_vec(),
            cv_folds: 5,
            seed: 0,
            predictors: DEFAULT_PREDICTORS.iter().map(|s| s.to_string()).collect(),
            exclude: Vec::new(),
            baselines: vec!["n_vehicles".into(), "e_ttc".into()],
            nmse_mode: NmseMode::Mean,
            years: None,
            validity: ValidityConfig::default(),
        }
    }
}

impl AnalysisConfig {
    pub fn active_predictors(&self) -> Vec<String> {
        self.predictors
            .iter()
            .filter(|p| !self.exclude.contains(p))
            .cloned()
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        validate_slot_minutes(self.slot_minutes)?;
        let active = self.active_predictors();
        if active.is_empty() {
            return Err(Error::Parameter("no predictors left after exclusions".into()));
        }
        if active.len() > 16 {
            return Err(Error::Parameter(format!("at most 16 predictors, got {}", active.len())));
        }
        for name in active.iter().chain(&self.baselines) {
            if !IntervalMetrics::is_known_column(name) {
                return Err(Error::Parameter(format!("unknown metric column {name:?}")));
            }
        }
        if self.cv_folds < 2 {
            return Err(Error::Parameter("cv_folds must be at least 2".into()));
        }
        if let Some([a, b]) = self.years {
            if a > b {
                return Err(Error::Parameter(format!("year range {a}..{b} is reversed")));
            }
        }
        let v = &self.validity;
        if v.enabled && !(v.fraction > 0.0 && v.fraction < 1.0 && v.repeats > 0) {
            return Err(Error::Parameter("validity needs 0 < fraction < 1 and repeats > 0".into()));
        }
        Ok(())
    }
}

/// Where the rows of a join went. `rows_in == rows_used + dropped()`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowAccounting {
    pub rows_in: usize,
    pub rows_used: usize,
    pub unknown_segment: usize,
    pub no_crash_slot: usize,
    /// Rows dropped for an absent metric, keyed by the first absent column.
    pub absent_metric: BTreeMap<String, usize>,
}

impl RowAccounting {
    pub fn dropped(&self) -> usize {
        self.unknown_segment + self.no_crash_slot + self.absent_metric.values().sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinedRow {
    pub segment_id: String,
    pub slot: u32,
    pub metrics: IntervalMetrics,
    /// Mean yearly crash count of the slot.
    pub y: f64,
}

impl JoinedRow {
    pub fn key(&self) -> String {
        format!("{}:{}", self.segment_id, self.slot)
    }
}

/// Crash slot of a metrics row: the segment's starting slot plus the
/// interval index.
pub fn slot_of_interval(m: &IntervalMetrics, seg: &SegmentConfig, interval_s: f64) -> i64 {
    seg.start_slot as i64 + (m.interval_start / interval_s).round() as i64
}

/// Inner join of metric rows and crash slots on `(segment, slot)`.
pub fn join_rows(
    metrics: &[IntervalMetrics],
    counts: &[CrashCounts],
    segments: &[SegmentConfig],
    interval_s: f64,
    family: CrashFamily,
) -> Result<(Vec<JoinedRow>, RowAccounting)> {
    let segs: BTreeMap<&str, &SegmentConfig> = segments.iter().map(|s| (s.segment_id.as_str(), s)).collect();
    let crash: BTreeMap<(&str, u32), &CrashCounts> =
        counts.iter().map(|c| ((c.segment_id.as_str(), c.slot), c)).collect();
    let mut acc = RowAccounting {
        rows_in: metrics.len(),
        ..RowAccounting::default()
    };
    let mut rows = Vec::new();
    for m in metrics {
        let Some(seg) = segs.get(m.segment_id.as_str()) else {
            acc.unknown_segment += 1;
            continue;
        };
        let slot = slot_of_interval(m, seg, interval_s);
        let hit = u32::try_from(slot).ok().and_then(|s| crash.get(&(m.segment_id.as_str(), s)));
        let Some(c) = hit else {
            acc.no_crash_slot += 1;
            continue;
        };
        rows.push(JoinedRow {
            segment_id: m.segment_id.clone(),
            slot: c.slot,
            metrics: m.clone(),
            y: c.mean_count(family),
        });
    }
    if rows.is_empty() && !metrics.is_empty() {
        let mkeys: BTreeSet<String> = metrics
            .iter()
            .take(5)
            .map(|m| match segs.get(m.segment_id.as_str()) {
                Some(s) => format!("{}:{}", m.segment_id, slot_of_interval(m, s, interval_s)),
                None => format!("{}:?", m.segment_id),
            })
            .collect();
        let ckeys: BTreeSet<String> = counts.iter().take(5).map(|c| format!("{}:{}", c.segment_id, c.slot)).collect();
        return Err(Error::Data(format!(
            "metrics and crash counts share no (segment, slot) keys; metric keys include {mkeys:?}, crash keys include {ckeys:?}"
        )));
    }
    acc.rows_used = rows.len();
    Ok((rows, acc))
}

/// Listwise selection of `columns`; rows missing any of them are dropped and
/// counted in `acc`.
pub fn dataset_from_rows(rows: &[JoinedRow], columns: &[String], acc: &mut RowAccounting) -> Result<Dataset64> {
    let mut data = Vec::new();
    let mut y = Vec::new();
    let mut keys = Vec::new();
    for r in rows {
        let vals: Vec<Option<f64>> = columns.iter().map(|c| r.metrics.value(c)).collect();
        if let Some(i) = vals.iter().position(Option::is_none) {
            *acc.absent_metric.entry(columns[i].clone()).or_default() += 1;
            acc.rows_used -= 1;
            continue;
        }
        data.extend(vals.into_iter().flatten());
        y.push(r.y);
        keys.push(r.key());
    }
    let x = Matrix::from_row_major(y.len(), columns.len(), data);
    Ok(Dataset64::new(x, y, columns.to_vec(), keys)?)
}

pub fn build_dataset(
    metrics: &[IntervalMetrics],
    counts: &[CrashCounts],
    segments: &[SegmentConfig],
    interval_s: f64,
    family: CrashFamily,
    predictors: &[String],
) -> Result<(Dataset64, RowAccounting)> {
    let (rows, mut acc) = join_rows(metrics, counts, segments, interval_s, family)?;
    let d = dataset_from_rows(&rows, predictors, &mut acc)?;
    Ok((d, acc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub metric: String,
    pub method: CorrelationMethod,
    pub n: usize,
    /// `None` when undefined, with the reason in `note`.
    pub value: Option<f64>,
    pub note: Option<String>,
}

fn is_constant(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] == w[1])
}

fn correlate(metric: &str, x: &[f64], y: &[f64], method: CorrelationMethod) -> CorrelationEntry {
    let (value, note) = if x.len() < 2 {
        (None, Some("fewer than two rows".to_string()))
    } else if is_constant(x) {
        (None, Some("constant metric".to_string()))
    } else if is_constant(y) {
        (None, Some("constant crash counts".to_string()))
    } else {
        match method.compute(x, y) {
            Ok(v) => (Some(v), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    CorrelationEntry {
        metric: metric.to_string(),
        method,
        n: x.len(),
        value,
        note,
    }
}

/// One entry per (predictor, method) over the dataset rows.
pub fn per_metric_correlations(d: &Dataset64, methods: &[CorrelationMethod]) -> Vec<CorrelationEntry> {
    let mut out = Vec::new();
    for (j, name) in d.predictor_names.iter().enumerate() {
        let x = d.x.column(j);
        for &m in methods {
            out.push(correlate(name, &x, &d.y, m));
        }
    }
    out
}

/// Baseline columns use every joined row where they are defined.
pub fn baseline_correlations(
    rows: &[JoinedRow],
    baselines: &[String],
    methods: &[CorrelationMethod],
) -> Vec<CorrelationEntry> {
    let mut out = Vec::new();
    for b in baselines {
        let (x, y): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter_map(|r| r.metrics.value(b).map(|v| (v, r.y)))
            .unzip();
        for &m in methods {
            out.push(correlate(b, &x, &y, m));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model_kind: ModelKind,
    pub fit: Option<RegressionReport64>,
    pub cv: Option<CvReport64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullModelReport {
    pub n: usize,
    pub predictors: Vec<String>,
    pub linear: ModelSummary,
    pub poisson: ModelSummary,
    pub warnings: Vec<String>,
}

fn summarize(d: &Dataset64, kind: ModelKind, cfg: &AnalysisConfig) -> ModelSummary {
    let fit = match kind {
        ModelKind::Linear => ols_fit(d),
        ModelKind::Poisson => poisson_fit(d),
    };
    let cv = kfold_cv(d, cfg.cv_folds, cfg.seed, kind, cfg.nmse_mode);
    let error = match (&fit, &cv) {
        (Err(e), _) | (_, Err(e)) => Some(e.to_string()),
        _ => None,
    };
    ModelSummary {
        model_kind: kind,
        fit: fit.ok(),
        cv: cv.ok(),
        error,
    }
}

/// Linear and Poisson fits on all rows plus their k-fold cross-validation.
pub fn full_model_analysis(d: &Dataset64, cfg: &AnalysisConfig) -> FullModelReport {
    let m = d.n_predictors();
    let mut warnings = Vec::new();
    if d.n() < 8 * m {
        warnings.push(format!("only {} rows for {m} predictors; at least {} recommended", d.n(), 8 * m));
    }
    let (linear, poisson) = rayon::join(
        || summarize(d, ModelKind::Linear, cfg),
        || summarize(d, ModelKind::Poisson, cfg),
    );
    for s in [&linear, &poisson] {
        if let Some(cv) = &s.cv {
            warnings.extend(cv.warnings.iter().cloned());
        }
    }
    FullModelReport {
        n: d.n(),
        predictors: d.predictor_names.clone(),
        linear,
        poisson,
        warnings,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutRow {
    pub segment_id: String,
    pub n_train: usize,
    pub n_test: usize,
    /// Unclamped; negative when worse than the held-out mean.
    pub r2: Option<f64>,
    pub adj_r2: Option<f64>,
    pub n_mse: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationRow {
    pub segments: Vec<String>,
    pub metric: String,
    pub n: usize,
    /// |Pearson| over the pooled rows of the combination.
    pub pooled_abs_pearson: Option<f64>,
    /// Mean of the member segments' own |Pearson|.
    pub mean_segment_abs_pearson: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub size: usize,
    pub metric: String,
    pub mean_pooled_abs_pearson: Option<f64>,
    pub mean_segment_abs_pearson: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSegmentReport {
    pub held_out: Vec<HeldOutRow>,
    pub combinations: Vec<CombinationRow>,
    pub by_size: Vec<SizeSummary>,
}

fn mean_opt(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = v.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn abs_pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || is_constant(x) || is_constant(y) {
        return None;
    }
    pearson(x, y).ok().map(f64::abs)
}

fn concat(parts: &[&Dataset64]) -> Result<Dataset64> {
    let names = parts[0].predictor_names.clone();
    let p = names.len();
    let mut data = Vec::new();
    let mut y = Vec::new();
    let mut keys = Vec::new();
    for d in parts {
        for i in 0..d.n() {
            data.extend(d.x.row(i).iter().copied());
        }
        y.extend(d.y.iter().copied());
        keys.extend(d.row_keys.iter().cloned());
    }
    Ok(Dataset64::new(Matrix::from_row_major(y.len(), p, data), y, names, keys)?)
}

/// Leave-one-segment-out OLS evaluation and pooled correlations over every
/// combination of segments.
pub fn cross_segment_analysis(segments: &[(String, Dataset64)], cfg: &AnalysisConfig) -> Result<CrossSegmentReport> {
    if segments.len() < 2 {
        return Err(Error::Data(format!(
            "cross-segment analysis needs at least 2 segments, got {}",
            segments.len()
        )));
    }
    if segments.len() > 16 {
        return Err(Error::Parameter("cross-segment combinations are limited to 16 segments".into()));
    }
    let held_out = segments
        .par_iter()
        .enumerate()
        .map(|(k, (id, test))| {
            let train: Vec<&Dataset64> = segments
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .map(|(_, s)| &s.1)
                .collect();
            let mut row = HeldOutRow {
                segment_id: id.clone(),
                n_train: train.iter().map(|d| d.n()).sum(),
                n_test: test.n(),
                r2: None,
                adj_r2: None,
                n_mse: None,
                note: None,
            };
            let fitted = concat(&train).and_then(|t| Ok(ols_fit(&t)?));
            match fitted {
                Ok(model) if test.n() > 0 => {
                    let s = evaluate(&model, &test.x, &test.y, cfg.nmse_mode);
                    row.r2 = s.r2;
                    row.adj_r2 = s.adj_r2;
                    row.n_mse = Some(s.n_mse);
                    if s.r2.is_none() {
                        row.note = Some("held-out crash counts are constant".into());
                    }
                }
                Ok(_) => row.note = Some("no held-out rows".into()),
                Err(e) => row.note = Some(e.to_string()),
            }
            row
        })
        .collect();

    let s = segments.len();
    let names = &segments[0].1.predictor_names;
    let per_segment: Vec<Vec<Option<f64>>> = segments
        .iter()
        .map(|(_, d)| (0..names.len()).map(|j| abs_pearson(&d.x.column(j), &d.y)).collect())
        .collect();
    let mut combinations = Vec::new();
    for mask in 1u32..(1 << s) {
        let members: Vec<usize> = (0..s).filter(|&i| mask & (1 << i) != 0).collect();
        for (j, metric) in names.iter().enumerate() {
            let mut x = Vec::new();
            let mut y = Vec::new();
            for &i in &members {
                x.extend(segments[i].1.x.column(j));
                y.extend(segments[i].1.y.iter().copied());
            }
            combinations.push(CombinationRow {
                segments: members.iter().map(|&i| segments[i].0.clone()).collect(),
                metric: metric.clone(),
                n: y.len(),
                pooled_abs_pearson: abs_pearson(&x, &y),
                mean_segment_abs_pearson: mean_opt(members.iter().map(|&i| per_segment[i][j])),
            });
        }
    }
    let mut by_size = Vec::new();
    for size in 1..=s {
        for metric in names {
            let rows = || {
                combinations
                    .iter()
                    .filter(move |c| c.segments.len() == size && &c.metric == metric)
            };
            by_size.push(SizeSummary {
                size,
                metric: metric.clone(),
                mean_pooled_abs_pearson: mean_opt(rows().map(|c| c.pooled_abs_pearson)),
                mean_segment_abs_pearson: mean_opt(rows().map(|c| c.mean_segment_abs_pearson)),
            });
        }
    }
    Ok(CrossSegmentReport {
        held_out,
        combinations,
        by_size,
    })
}

pub fn shapley_analysis(d: &Dataset64) -> Result<ShapleyReport64> {
    Ok(shapley_values(d)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub family: CrashFamily,
    pub accounting: RowAccounting,
    pub correlations: Vec<CorrelationEntry>,
    pub baselines: Vec<CorrelationEntry>,
    pub full_model: Option<FullModelReport>,
    pub shapley: Option<ShapleyReport64>,
    pub cross_segment: Option<CrossSegmentReport>,
    /// Why a section above is missing.
    pub insufficient: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub hourly_totals: Vec<u64>,
    pub heterogeneity: Option<ChiSquareTest64>,
    pub consistency: Option<ConsistencyResult>,
    pub notes: Vec<String>,
}

/// Hour-of-day checks on all-type totals: a one-way test against a flat
/// profile and the subsample consistency test.
pub fn validity_checks(hourly_totals: &[u64], cfg: &AnalysisConfig) -> ValidityReport {
    let mut notes = Vec::new();
    let heterogeneity = hourly_heterogeneity_test(hourly_totals)
        .map_err(|e| notes.push(format!("heterogeneity: {e}")))
        .ok();
    let consistency =
        subsample_consistency_test(hourly_totals, cfg.validity.fraction, cfg.seed, cfg.validity.repeats)
            .map_err(|e| notes.push(format!("consistency: {e}")))
            .ok();
    ValidityReport {
        hourly_totals: hourly_totals.to_vec(),
        heterogeneity,
        consistency,
        notes,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationReport {
    pub config: AnalysisConfig,
    pub interval_s: f64,
    pub families: Vec<FamilyReport>,
    pub validity: Option<ValidityReport>,
    pub warnings: Vec<String>,
}

fn analyze_family(
    metrics: &[IntervalMetrics],
    counts: &[CrashCounts],
    segments: &[SegmentConfig],
    interval_s: f64,
    family: CrashFamily,
    cfg: &AnalysisConfig,
) -> Result<FamilyReport> {
    let predictors = cfg.active_predictors();
    let (rows, mut accounting) = join_rows(metrics, counts, segments, interval_s, family)?;
    let d = dataset_from_rows(&rows, &predictors, &mut accounting)?;
    let mut insufficient = Vec::new();
    let correlations = per_metric_correlations(&d, &cfg.methods);
    let baselines = baseline_correlations(&rows, &cfg.baselines, &cfg.methods);

    let full_model = if d.n() >= cfg.cv_folds.max(predictors.len() + 2) {
        Some(full_model_analysis(&d, cfg))
    } else {
        insufficient.push(format!("full model: {} usable rows", d.n()));
        None
    };
    let shapley = match shapley_analysis(&d) {
        Ok(s) => Some(s),
        Err(e) => {
            insufficient.push(format!("shapley: {e}"));
            None
        }
    };

    let mut seg_ids: Vec<&str> = segments.iter().map(|s| s.segment_id.as_str()).collect();
    seg_ids.retain(|id| rows.iter().any(|r| r.segment_id == *id));
    let per_segment: Vec<(String, Dataset64)> = seg_ids
        .iter()
        .map(|id| {
            let seg_rows: Vec<JoinedRow> = rows.iter().filter(|r| r.segment_id == *id).cloned().collect();
            let mut scratch = RowAccounting {
                rows_used: seg_rows.len(),
                ..RowAccounting::default()
            };
            Ok((id.to_string(), dataset_from_rows(&seg_rows, &predictors, &mut scratch)?))
        })
        .collect::<Result<_>>()?;
    let cross_segment = match cross_segment_analysis(&per_segment, cfg) {
        Ok(c) => Some(c),
        Err(e) => {
            insufficient.push(format!("cross-segment: {e}"));
            None
        }
    };
    Ok(FamilyReport {
        family,
        accounting,
        correlations,
        baselines,
        full_model,
        shapley,
        cross_segment,
        insufficient,
    })
}

/// Every configured crash family, analyzed in parallel.
pub fn run_association(
    metrics: &[IntervalMetrics],
    counts: &[CrashCounts],
    segments: &[SegmentConfig],
    interval_s: f64,
    hourly_totals: Option<&[u64]>,
    cfg: &AnalysisConfig,
) -> Result<AssociationReport> {
    cfg.validate()?;
    if !(interval_s > 0.0) {
        return Err(Error::Parameter("interval_s must be positive".into()));
    }
    let mut warnings = Vec::new();
    let slot_s = cfg.slot_minutes as f64 * 60.0;
    if interval_s != slot_s {
        warnings.push(format!(
            "metric intervals of {interval_s} s are mapped one-to-one onto {}-minute crash slots",
            cfg.slot_minutes
        ));
    }
    let families = cfg
        .families
        .par_iter()
        .map(|&f| analyze_family(metrics, counts, segments, interval_s, f, cfg))
        .collect::<Result<Vec<_>>>()?;
    let validity = match hourly_totals {
        Some(h) if cfg.validity.enabled => Some(validity_checks(h, cfg)),
        _ => None,
    };
    Ok(AssociationReport {
        config: cfg.clone(),
        interval_s,
        families,
        validity,
        warnings,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(crate::format_float).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Flat CSV tables as `(file name, contents)`.
pub fn report_tables(r: &AssociationReport) -> Vec<(&'static str, String)> {
    let mut t5 = String::from(
        "family,model,n,cv_r2,cv_adj_r2,cv_n_mse,cv_train_f_pvalue,cv_train_lr_pvalue,r2,adj_r2,n_mse,f_pvalue,lr_pvalue,error\n",
    );
    let mut t6 = String::from("family,kind,metric,method,n,value,note\n");
    let mut t8 = String::from("family,size,segments,metric,n,pooled_abs_pearson,mean_segment_abs_pearson\n");
    let mut t9 = String::from("family,segment_id,n_train,n_test,r2,adj_r2,n_mse,note\n");
    let mut t10 = String::from("family,rank,metric,phi\n");
    for f in &r.families {
        let fam = f.family.name();
        if let Some(m) = &f.full_model {
            for s in [&m.linear, &m.poisson] {
                let kind = match s.model_kind {
                    ModelKind::Linear => "linear",
                    ModelKind::Poisson => "poisson",
                };
                let cv = s.cv.as_ref();
                let fit = s.fit.as_ref();
                let _ = writeln!(
                    t5,
                    "{fam},{kind},{},{},{},{},{},{},{},{},{},{},{},{}",
                    m.n,
                    opt(cv.and_then(|c| c.mean_r2)),
                    opt(cv.and_then(|c| c.mean_adj_r2)),
                    opt(cv.and_then(|c| c.mean_n_mse)),
                    opt(cv.and_then(|c| c.mean_train_f_pvalue)),
                    opt(cv.and_then(|c| c.mean_train_lr_pvalue)),
                    opt(fit.and_then(|f| f.r2)),
                    opt(fit.and_then(|f| f.adj_r2)),
                    opt(fit.map(|f| f.n_mse)),
                    opt(fit.and_then(|f| f.f_pvalue)),
                    opt(fit.and_then(|f| f.lr_pvalue)),
                    csv_field(s.error.as_deref().unwrap_or("")),
                );
            }
        }
        for (kind, entries) in [("metric", &f.correlations), ("baseline", &f.baselines)] {
            for e in entries {
                let _ = writeln!(
                    t6,
                    "{fam},{kind},{},{},{},{},{}",
                    e.metric,
                    e.method.name(),
                    e.n,
                    opt(e.value),
                    csv_field(e.note.as_deref().unwrap_or(""))
                );
            }
        }
        if let Some(c) = &f.cross_segment {
            for row in &c.combinations {
                let _ = writeln!(
                    t8,
                    "{fam},{},{},{},{},{},{}",
                    row.segments.len(),
                    csv_field(&row.segments.join("+")),
                    row.metric,
                    row.n,
                    opt(row.pooled_abs_pearson),
                    opt(row.mean_segment_abs_pearson)
                );
            }
            for h in &c.held_out {
                let _ = writeln!(
                    t9,
                    "{fam},{},{},{},{},{},{},{}",
                    csv_field(&h.segment_id),
                    h.n_train,
                    h.n_test,
                    opt(h.r2),
                    opt(h.adj_r2),
                    opt(h.n_mse),
                    csv_field(h.note.as_deref().unwrap_or(""))
                );
            }
        }
        if let Some(s) = &f.shapley {
            for (rank, &j) in s.ranking().iter().enumerate() {
                let _ = writeln!(t10, "{fam},{},{},{}", rank + 1, s.predictor_names[j], crate::format_float(s.phi[j]));
            }
        }
    }
    vec![
        ("full_model.csv", t5),
        ("correlations.csv", t6),
        ("cross_segment.csv", t8),
        ("held_out.csv", t9),
        ("shapley_values.csv", t10),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seg: &str, k: usize, osr: f64, ntc: Option<f64>) -> IntervalMetrics {
        IntervalMetrics {
            segment_id: seg.into(),
            interval_start: k as f64 * 600.0,
            interval_end: (k + 1) as f64 * 600.0,
            ttc_cv: None,
            ivvr: None,
            ovvr: None,
            osr: vec![(1.0, Some(osr))],
            tci: None,
            f_truck: None,
            ntc,
            trt: None,
            n_vehicles: 10 + k,
            coverage: 1.0,
            e_ttc: None,
        }
    }

    fn counts(seg: &str, slots: std::ops::Range<u32>, f: impl Fn(u32) -> u64) -> Vec<CrashCounts> {
        slots
            .map(|s| CrashCounts {
                segment_id: seg.into(),
                slot: s,
                all_type: f(s),
                rear_end: f(s) / 2,
                sideswipe: 0,
                years_covered: 1,
            })
            .collect()
    }

    #[test]
    fn full_join_keeps_every_row() {
        let seg = SegmentConfig::new("A", 2, 100.0, 25.0);
        let m: Vec<_> = (0..10).map(|k| row("A", k, k as f64, Some(1.0))).collect();
        let c = counts("A", 0..10, |s| s as u64);
        let (d, acc) = build_dataset(&m, &c, &[seg], 600.0, CrashFamily::AllType, &["osr".into()]).unwrap();
        assert_eq!(d.n(), 10);
        assert_eq!(acc.rows_used, 10);
        assert_eq!(acc.dropped(), 0);
    }

    #[test]
    fn missing_slot_and_absent_metric_are_counted() {
        let seg = SegmentConfig::new("A", 2, 100.0, 25.0);
        let mut m: Vec<_> = (0..10).map(|k| row("A", k, k as f64, Some(1.0))).collect();
        m[3].ntc = None;
        let c = counts("A", 0..9, |s| s as u64);
        let cols = ["osr".to_string(), "ntc".to_string()];
        let (d, acc) = build_dataset(&m, &c, &[seg], 600.0, CrashFamily::AllType, &cols).unwrap();
        assert_eq!(d.n(), 8);
        assert_eq!(acc.no_crash_slot, 1);
        assert_eq!(acc.absent_metric["ntc"], 1);
        assert_eq!(acc.rows_in, acc.rows_used + acc.dropped());
    }

    #[test]
    fn disjoint_grids_fail() {
        let seg = SegmentConfig::new("A", 2, 100.0, 25.0);
        let m: Vec<_> = (0..3).map(|k| row("A", k, k as f64, None)).collect();
        let c = counts("B", 0..3, |_| 1);
        let err = build_dataset(&m, &c, &[seg], 600.0, CrashFamily::AllType, &["osr".into()]).unwrap_err();
        assert_eq!(err.kind(), "data");
        assert!(err.to_string().contains("A:0"));
    }

    #[test]
    fn linear_plant_correlates_perfectly() {
        let seg = SegmentConfig::new("A", 2, 100.0, 25.0);
        let m: Vec<_> = (0..12).map(|k| row("A", k, k as f64 * 0.1, None)).collect();
        let c = counts("A", 0..12, |s| 2 * s as u64 + 1);
        let (d, _) = build_dataset(&m, &c, &[seg], 600.0, CrashFamily::AllType, &["osr".into()]).unwrap();
        for e in per_metric_correlations(&d, &CorrelationMethod::ALL) {
            assert!((e.value.unwrap() - 1.0).abs() < 1e-12, "{e:?}");
        }
    }

    #[test]
    fn constant_metric_is_undefined() {
        let seg = SegmentConfig::new("A", 2, 100.0, 25.0);
        let m: Vec<_> = (0..6).map(|k| row("A", k, k as f64, Some(0.5))).collect();
        let c = counts("A", 0..6, |s| s as u64);
        let (d, _) = build_dataset(&m, &c, &[seg], 600.0, CrashFamily::AllType, &["ntc".into()]).unwrap();
        let e = &per_metric_correlations(&d, &[CorrelationMethod::Pearson])[0];
        assert!(e.value.is_none());
        assert_eq!(e.note.as_deref(), Some("constant metric"));
    }

    #[test]
    fn two_segments_give_two_held_out_rows() {
        let mk = |seg: &str, off: f64| {
            let x: Vec<f64> = (0..10).map(|i| i as f64 + off).collect();
            let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| 2.0 * v + (i % 3) as f64).collect();
            (seg.to_string(), Dataset64::from_columns(&[x], &["osr"], y).unwrap())
        };
        let r = cross_segment_analysis(&[mk("A", 0.0), mk("B", 0.5)], &AnalysisConfig::default()).unwrap();
        assert_eq!(r.held_out.len(), 2);
        assert_eq!(r.combinations.len(), 3);
        assert!(r.held_out.iter().all(|h| h.r2.unwrap() > 0.9));
    }
}
