//! Turns world-frame trajectories into smoothed kinematic tracks: gap repair,
//! static-object removal, Savitzky–Golay smoothing per contiguous run and
//! finite-difference velocities.

use serde::{Deserialize, Serialize};

use crate::config::MetricsConfig;
use crate::error::Result;
use crate::smoothing::SavitzkyGolay;
use crate::trajectory::{
    fill_gaps, kinematics_from_positions, GapFlag, KinematicSample, Trajectory, VehicleClass,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedTrack {
    pub vehicle_id: String,
    pub class: VehicleClass,
    pub length_m: f64,
    pub samples: Vec<KinematicSample>,
    pub gap_flags: Vec<GapFlag>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrepSummary {
    pub input_tracks: usize,
    pub static_excluded: usize,
    pub too_short: usize,
    pub unfilled_gaps: usize,
}

pub fn prepare_tracks(
    trajectories: &[Trajectory],
    cfg: &MetricsConfig,
) -> Result<(Vec<PreparedTrack>, PrepSummary)> {
    cfg.validate()?;
    let sg = SavitzkyGolay::<f64>::new(cfg.smoothing.window, cfg.smoothing.order)?;
    let mut summary = PrepSummary {
        input_tracks: trajectories.len(),
        ..PrepSummary::default()
    };
    let mut out = Vec::with_capacity(trajectories.len());
    for traj in trajectories {
        let mut traj = traj.clone();
        traj.reclassify(cfg.class_threshold_m);
        let (filled, flags) = fill_gaps(&traj, cfg.max_gap, cfg.fps);
        if filled.displacement() < cfg.min_displacement_m {
            summary.static_excluded += 1;
            continue;
        }
        summary.unfilled_gaps += flags.len();
        let mut samples = Vec::new();
        for run in filled.contiguous_runs() {
            if run.len() < 2 {
                continue;
            }
            let frames: Vec<u64> = run.iter().map(|p| p.frame).collect();
            let xs: Vec<f64> = run.iter().map(|p| p.cx()).collect();
            let ys: Vec<f64> = run.iter().map(|p| p.cy()).collect();
            // runs shorter than the window keep their raw centroids
            let (xs, ys) = if run.len() >= sg.window() {
                (sg.apply(&xs)?, sg.apply(&ys)?)
            } else {
                (xs, ys)
            };
            let positions: Vec<[f64; 2]> = xs.into_iter().zip(ys).map(|(x, y)| [x, y]).collect();
            samples.extend(kinematics_from_positions(&frames, &positions, cfg.fps)?);
        }
        if samples.is_empty() {
            summary.too_short += 1;
            continue;
        }
        out.push(PreparedTrack {
            vehicle_id: filled.vehicle_id,
            class: filled.class,
            length_m: filled.length_m,
            samples,
            gap_flags: flags,
        });
    }
    Ok((out, summary))
}
