//! The QA stages chained together: canonical centers, smoothing,
//! reprojection, distances, flags, success curve and correction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{to_canonical, AlignError, AlignmentResult};
use crate::annotate::{
    correct, distances, flag_outliers, replaced_stats, reproject, success_rate_curve,
    AnnotateError, CanonicalTrajectory, CorrectionResult, CurvePoint, OutlierReport, ReplacedStat,
    Trajectory,
};
use crate::homography::Point2;
use crate::smooth::{smooth_canonical, SmoothError, SmoothMethod, SmootherSpec};

/// Success-curve thresholds used when none are given: 1..=50 px.
pub fn default_curve_grid() -> Vec<f64> {
    (1..=50).map(f64::from).collect()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Smooth(#[from] SmoothError),
    #[error(transparent)]
    Annotate(#[from] AnnotateError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaSettings {
    pub smoother: SmootherSpec,
    pub tau: f64,
    pub curve_grid: Vec<f64>,
    pub tau_grid: Vec<f64>,
}

impl Default for QaSettings {
    fn default() -> Self {
        Self {
            // the only smoother that down-weights the outliers it is hunting
            smoother: SmootherSpec::new(SmoothMethod::Lowess),
            tau: 100.0,
            curve_grid: default_curve_grid(),
            tau_grid: vec![30.0, 20.0, 10.0, 5.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaOutput {
    pub canonical: CanonicalTrajectory,
    pub smoothed: CanonicalTrajectory,
    pub reprojected: Vec<Option<Point2>>,
    pub report: OutlierReport,
    pub curve: Vec<CurvePoint>,
    pub correction: CorrectionResult,
    pub replaced: Vec<ReplacedStat>,
}

pub fn run_qa(
    alignment: &AlignmentResult,
    traj: &Trajectory,
    settings: &QaSettings,
) -> Result<QaOutput, PipelineError> {
    let canonical = to_canonical(alignment, traj)?;
    let smoothed = smooth_canonical(&canonical, &settings.smoother)?;
    let reprojected = reproject(&smoothed, alignment)?;
    let d = distances(traj, &reprojected)?;
    let report = flag_outliers(&d, settings.tau)?;
    let curve = success_rate_curve(&d, &settings.curve_grid)?;
    let correction = correct(traj, &reprojected, settings.tau)?;
    let replaced = if settings.tau_grid.is_empty() {
        Vec::new()
    } else {
        replaced_stats(traj, &reprojected, &settings.tau_grid)?
    };
    Ok(QaOutput {
        canonical,
        smoothed,
        reprojected,
        report,
        curve,
        correction,
        replaced,
    })
}
