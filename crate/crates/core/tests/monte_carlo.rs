use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use roadsafe_core::crash::consistency_test;
use roadsafe_core::nsm::IntervalMetrics;
use roadsafe_core::pipeline::{cross_segment_analysis, full_model_analysis, per_metric_correlations};
use roadsafe_core::synth::{generate_crash_counts, generate_trajectories, Plant, ScenarioSpec, SynthSegment};
use roadsafe_core::{compute_segment_metrics, prepare_tracks, AnalysisConfig, VehicleClass};
use roadsafe_stats::{ols_fit, shapley_values, CorrelationMethod, Dataset64};

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let d = Normal::new(0.0, 1.0).unwrap();
    (0..n).map(|_| d.sample(rng)).collect()
}

fn dataset(columns: &[Vec<f64>], y: Vec<f64>) -> Dataset64 {
    let names: Vec<String> = (0..columns.len()).map(|j| format!("m{j}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    Dataset64::from_columns(columns, &refs, y).unwrap()
}

fn linear(columns: &[Vec<f64>], beta: &[f64], noise: &[f64]) -> Vec<f64> {
    (0..noise.len())
        .map(|i| 1.0 + columns.iter().zip(beta).map(|(c, b)| b * c[i]).sum::<f64>() + noise[i])
        .collect()
}

fn analysis() -> AnalysisConfig {
    AnalysisConfig::default()
}

#[test]
fn unrelated_metric_stays_under_the_null_threshold() {
    let n = 200;
    let threshold = 1.96 / (n as f64).sqrt();
    let trials = 200;
    let mut below = 0;
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = dataset(&[normals(&mut rng, n)], normals(&mut rng, n));
        let r = per_metric_correlations(&d, &[CorrelationMethod::Pearson])[0].value.unwrap();
        if r.abs() < threshold {
            below += 1;
        }
    }
    assert!(below as f64 >= 0.9 * trials as f64, "{below}/{trials}");
}

#[test]
fn low_noise_plant_generalizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 300;
    let cols: Vec<Vec<f64>> = (0..3).map(|_| normals(&mut rng, n)).collect();
    let noise: Vec<f64> = normals(&mut rng, n).iter().map(|e| 0.05 * e).collect();
    let y = linear(&cols, &[1.0, -0.5, 0.3], &noise);
    let report = full_model_analysis(&dataset(&cols, y), &analysis());
    let r2 = report.linear.cv.unwrap().mean_r2.unwrap();
    assert!(r2 >= 0.95, "{r2}");
}

/// Kolmogorov-Smirnov distance of a sample to the uniform distribution.
fn ks_uniform(mut p: Vec<f64>) -> f64 {
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).max((i + 1) as f64 / n - v))
        .fold(0.0, f64::max)
}

#[test]
fn f_test_is_uniform_under_the_null() {
    let trials = 400;
    let p: Vec<f64> = (0..trials)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cols: Vec<Vec<f64>> = (0..3).map(|_| normals(&mut rng, 60)).collect();
            ols_fit(&dataset(&cols, normals(&mut rng, 60))).unwrap().f_pvalue.unwrap()
        })
        .collect();
    let d = ks_uniform(p);
    // 1% critical value
    assert!(d < 1.63 / (trials as f64).sqrt(), "KS distance {d}");
}

fn segments_with_signs(signs: &[f64], seed: u64) -> Vec<(String, Dataset64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    signs
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let cols: Vec<Vec<f64>> = (0..2).map(|_| normals(&mut rng, 150)).collect();
            let noise: Vec<f64> = normals(&mut rng, 150).iter().map(|e| 0.5 * e).collect();
            let y = linear(&cols, &[s, 0.5 * s], &noise);
            (format!("S{k}"), dataset(&cols, y))
        })
        .collect()
}

#[test]
fn homogeneous_segments_transfer() {
    let segs = segments_with_signs(&[1.0, 1.0, 1.0], 3);
    let report = cross_segment_analysis(&segs, &analysis()).unwrap();
    for (row, (_, d)) in report.held_out.iter().zip(&segs) {
        let own = ols_fit(d).unwrap().r2.unwrap();
        let held = row.r2.unwrap();
        assert!((own - held).abs() <= 0.1, "{}: in-segment {own}, held-out {held}", row.segment_id);
    }
}

#[test]
fn inverted_segment_fails_to_transfer() {
    let segs = segments_with_signs(&[1.0, 1.0, -1.0], 4);
    let report = cross_segment_analysis(&segs, &analysis()).unwrap();
    let inverted = report.held_out.iter().find(|r| r.segment_id == "S2").unwrap();
    assert!(inverted.r2.unwrap() < 0.0, "{:?}", inverted.r2);
}

#[test]
fn shapley_recovers_a_dominant_predictor() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 300;
    let cols: Vec<Vec<f64>> = (0..4).map(|_| normals(&mut rng, n)).collect();
    let y = linear(&cols, &[1.0, 0.2, 0.1, 0.0], &normals(&mut rng, n));
    let phi = shapley_values(&dataset(&cols, y)).unwrap().phi;
    assert!(phi[1..].iter().all(|&p| phi[0] > p), "{phi:?}");
}

#[test]
fn shapley_splits_duplicates_evenly() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 200;
    let a = normals(&mut rng, n);
    let b = normals(&mut rng, n);
    let y = linear(&[a.clone(), b.clone()], &[1.0, 0.5], &normals(&mut rng, n));
    let phi = shapley_values(&dataset(&[a.clone(), a, b], y)).unwrap().phi;
    assert!((phi[0] - phi[1]).abs() <= 1e-9, "{phi:?}");
}

#[test]
fn noise_predictors_stay_inside_the_null_envelope() {
    let null_phis = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<Vec<f64>> = (0..4).map(|_| normals(&mut rng, 200)).collect();
        shapley_values(&dataset(&cols, normals(&mut rng, 200))).unwrap().phi
    };
    let mut reference: Vec<f64> = (1000..1200).flat_map(null_phis).map(f64::abs).collect();
    reference.sort_by(f64::total_cmp);
    let envelope = reference[(0.99 * reference.len() as f64) as usize];
    let inside = (0..50).flat_map(null_phis).filter(|p| p.abs() <= envelope).count();
    assert!(inside as f64 >= 0.95 * 200.0, "{inside}/200 inside {envelope}");
}

fn rows_with_osr(osr: &[f64]) -> Vec<IntervalMetrics> {
    osr.iter()
        .enumerate()
        .map(|(i, &v)| IntervalMetrics {
            segment_id: "P".into(),
            interval_start: 30.0 * i as f64,
            interval_end: 30.0 * (i + 1) as f64,
            ttc_cv: None,
            ivvr: None,
            ovvr: None,
            osr: vec![(1.0, Some(v))],
            tci: None,
            f_truck: None,
            ntc: None,
            trt: None,
            n_vehicles: 10,
            coverage: 1.0,
            e_ttc: None,
        })
        .collect()
}

#[test]
fn flat_plant_counts_have_the_base_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rows = rows_with_osr(&(0..400).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<_>>());
    let plant = Plant {
        beta0: 1.5,
        beta: BTreeMap::new(),
        ..Plant::default()
    };
    let out = generate_crash_counts(&rows, &plant, 7).unwrap();
    let all: Vec<f64> = out.yearly.iter().flatten().map(|&c| c as f64).collect();
    let rate = 1.5f64.exp();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let se = (rate / all.len() as f64).sqrt();
    assert!((mean - rate).abs() <= 3.0 * se, "mean {mean}, rate {rate}, se {se}");
}

#[test]
fn planted_osr_correlates_positively() {
    let seeds = 40;
    let mut positive = 0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let osr: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..0.5)).collect();
        let rows = rows_with_osr(&osr);
        let plant = Plant {
            beta0: 1.0,
            beta: [("osr".to_string(), 0.3)].into_iter().collect(),
            ..Plant::default()
        };
        let out = generate_crash_counts(&rows, &plant, seed).unwrap();
        let r = roadsafe_stats::pearson(&osr, &out.mean_counts).unwrap();
        if r > 0.0 {
            positive += 1;
        }
    }
    assert!(positive as f64 >= 0.95 * seeds as f64, "{positive}/{seeds}");
}

fn multinomial(rng: &mut ChaCha8Rng, weights: &[f64], n: usize) -> Vec<u64> {
    let total: f64 = weights.iter().sum();
    let mut out = vec![0u64; weights.len()];
    for _ in 0..n {
        let mut u = rng.random_range(0.0..total);
        let k = weights.iter().position(|&w| {
            u -= w;
            u < 0.0
        });
        out[k.unwrap_or(weights.len() - 1)] += 1;
    }
    out
}

#[test]
fn consistency_test_accepts_a_matching_subset() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let weights: Vec<f64> = (0..24).map(|h| 1.0 + (h % 6) as f64).collect();
    let full = multinomial(&mut rng, &weights, 3000);
    let pool = multinomial(&mut rng, &weights, 3000);
    let r = consistency_test(&full, &pool, 0.1, 8, 1000).unwrap();
    assert!(r.mean_p_value > 0.05, "{}", r.mean_p_value);
}

#[test]
fn consistency_test_rejects_a_shifted_subset() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let weights: Vec<f64> = (0..24).map(|h| 1.0 + (h % 6) as f64).collect();
    let shifted: Vec<f64> = (0..24).map(|h| 1.0 + ((h + 12) % 24) as f64).collect();
    let full = multinomial(&mut rng, &weights, 3000);
    let pool = multinomial(&mut rng, &shifted, 3000);
    let r = consistency_test(&full, &pool, 0.1, 9, 1000).unwrap();
    assert!(r.mean_p_value < 0.05, "{}", r.mean_p_value);
}

/// Interval metrics recomputed straight from the prepared samples.
#[test]
fn generator_metrics_match_a_direct_recomputation() {
    let spec = ScenarioSpec {
        segments: vec![SynthSegment {
            segment_id: "R".into(),
            lane_count: 2,
            length_m: 200.0,
            speed_limit: 25.0,
            intervals: 6,
            anchor: [33.4, -111.9],
            start_slot: 0,
        }],
        ..ScenarioSpec::default()
    };
    let cfg = spec.metrics_config();
    let seg = spec.segments[0].segment_config();
    let (trajs, _) = generate_trajectories(&spec).unwrap().remove(0);
    let (tracks, _) = prepare_tracks(&trajs, &cfg).unwrap();
    let rows = compute_segment_metrics(&tracks, &seg, &cfg).unwrap();
    assert_eq!(rows.len(), 6);

    let frames: Vec<u64> = tracks.iter().flat_map(|t| t.samples.iter().map(|s| s.frame)).collect();
    let (first, last) = (*frames.iter().min().unwrap(), *frames.iter().max().unwrap());
    let per_interval = (cfg.interval_s * cfg.fps).round() as u64;
    for (k, row) in rows.iter().enumerate() {
        let lo = (k as u64 * per_interval).max(first);
        let hi = ((k as u64 + 1) * per_interval - 1).min(last);
        let mut speeds: Vec<(VehicleClass, Vec<f64>)> = Vec::new();
        for t in &tracks {
            let s: Vec<f64> = t.samples.iter().filter(|s| (lo..=hi).contains(&s.frame)).map(|s| s.speed).collect();
            if !s.is_empty() {
                speeds.push((t.class, s));
            }
        }
        let mut occupied = 0.0;
        for f in lo..=hi {
            for t in &tracks {
                if t.samples.iter().any(|s| s.frame == f) {
                    occupied += match t.class {
                        VehicleClass::Car => cfg.nominal_lengths.car,
                        VehicleClass::Truck => cfg.nominal_lengths.truck,
                    };
                }
            }
        }
        let ntc = occupied / ((hi - lo + 1) as f64 * seg.lane_count as f64 * seg.length_m);
        let avg: Vec<f64> = speeds.iter().map(|(_, s)| s.iter().sum::<f64>() / s.len() as f64).collect();
        let fleet = avg.iter().sum::<f64>() / avg.len() as f64;
        let ovvr = avg.iter().map(|a| (a - fleet).abs() / fleet).sum::<f64>() / avg.len() as f64;
        let spreads: Vec<f64> = speeds
            .iter()
            .zip(&avg)
            .filter(|((_, s), _)| s.len() >= 2)
            .map(|((_, s), a)| {
                let max = s.iter().copied().fold(f64::MIN, f64::max);
                let min = s.iter().copied().fold(f64::MAX, f64::min);
                (max - min) / a
            })
            .collect();
        let ivvr = spreads.iter().sum::<f64>() / spreads.len() as f64;
        let over = speeds
            .iter()
            .filter(|(_, s)| s.iter().copied().fold(f64::MIN, f64::max) > seg.speed_limit)
            .count() as f64
            / speeds.len() as f64;
        let trucks = speeds.iter().filter(|(c, _)| *c == VehicleClass::Truck).count() as f64;
        let cars = speeds.len() as f64 - trucks;
        let tci = (cars + trucks).powi(2) / (2.0 * (cars * cars + trucks * trucks));

        let near = |what: &str, got: Option<f64>, want: f64| {
            let got = got.unwrap_or_else(|| panic!("interval {k}: {what} missing"));
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "interval {k}: {what} {got} vs {want}");
        };
        assert_eq!(row.n_vehicles, speeds.len());
        near("ntc", row.ntc, ntc);
        near("ovvr", row.ovvr, ovvr);
        near("ivvr", row.ivvr, ivvr);
        near("osr", row.value("osr"), over);
        near("tci", row.tci, tci);
        near("f_truck", row.f_truck, trucks / speeds.len() as f64);
    }
}
