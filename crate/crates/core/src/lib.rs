//! Audit and correct bounding-box annotations of video tracking sequences.
//!
//! Frames are registered to the first frame's coordinate system (staged
//! RANSAC homography tracking with an ECC fallback), the annotated object
//! centers are smoothed in that canonical view, reprojected, and compared with
//! the original annotations to flag, correct, or fill in boxes.

// `!(x > 0.0)` is the NaN-rejecting form used by the validators.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod annotate;
pub mod cli;
pub mod ecc;
pub mod features;
pub mod homography;
pub mod io;
pub mod pipeline;
pub mod raster;
pub mod smooth;
pub mod synth;

pub use align::{
    align_pair_rsrt, align_pair_rsrt_excluding, align_sequence, to_canonical, AlignConfig,
    AlignError, AlignMethod, AlignmentResult, Exclusion, FrameAlignment, KeypointTest, RsrtState,
};
pub use annotate::{
    correct, distances, extrapolate_missing, flag_outliers, replaced_stats, reproject,
    success_rate_curve, AnnotateError, BBox, CanonicalTrajectory, CorrectionResult, OutlierReport,
    Trajectory,
};
pub use ecc::{ecc_align, EccConfig, EccError, EccResult, WarpModel};
pub use features::{Descriptor, FeatureConfig, FeatureError, Keypoint, Match};
pub use homography::{Homography, HomographyError, Point2, PointPair, RansacConfig};
pub use raster::{GradientPair, GrayImage, RasterError};
pub use smooth::{
    evaluate_at, smooth_canonical, smooth_series, Series, SmoothError, SmoothMethod, SmootherSpec,
};
pub use synth::{generate, GroundTruth, GroundTruthScenario, ScenarioConfig, SynthError};
