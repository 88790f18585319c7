//! Desk-scale synthetic precipitation nowcasting.
//!
//! A faithful small-scale reconstruction of the experimental pipeline the
//! forecaster was designed for: switching-based block motion estimation,
//! motion-path context features over a quad-tree of image coordinates, and
//! MSE/CSI verification against the persistence baseline, all on synthetic
//! advected rasters.

pub mod features;
pub mod metrics;
pub mod motion;
pub mod pipeline;
pub mod raster;
pub mod synth;

pub use features::{accumulate_path, build_feature, disk_offsets, NowcastFeature};
pub use metrics::{csi, mse, CsiAccumulator, MseAccumulator};
pub use motion::{estimate_motion, MotionCandidates, MotionConfig, MotionEstimator, MotionField};
pub use pipeline::{
    curves_to_csv, metrics_to_csv, run_nowcast, MetricsRow, ModelKind, NowcastConfig,
    NowcastReport,
};
pub use raster::{FrameView, RasterSequence};
pub use synth::{synthesize_rasters, Blob, SynthConfig};
