//! Faithfulness and localization metrics for saliency maps.

mod degradation;
mod deletion;
mod localization;

pub use degradation::{degradation_against, degradation_detect, DegradationReport, DEFAULT_THRESHOLD};
pub use deletion::{
    deletion_curve, deletion_order, deletion_pair, deletion_plus_curve, trapezoid, DeletionCurve, DeletionPair,
};
pub use localization::{
    iosr, localization, pointing_accuracy, pointing_game, wiosr, LocalizationReport, PointingResult,
};
