//! Perturbation-based saliency (RISE, occlusion, LIME) with optional
//! inlier-score correction of out-of-distribution perturbed images, plus
//! faithfulness and localization metrics.

pub mod classifier;
pub mod error;
pub mod explainers;
pub mod io;
pub mod masking;
pub mod metrics;
pub mod ood;
pub mod pipeline;
pub mod stats;
pub mod types;

pub use classifier::{Classifier, ClassifierHandle};
pub use error::{Error, ErrorKind, Result};
pub use explainers::{explain, ExplainRequest, ExplainerKind, Explanation, MaskSpec, TargetClass};
pub use types::{BoundingBox, Fill, Image, Mask, MaskSemantics, ProbVector, SaliencyMap};
