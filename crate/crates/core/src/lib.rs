//! Full-body human tubes from part detections.
//!
//! Part classes come from clustering part boxes relative to the person box;
//! each part class regresses the full-body box. A tracker follows parts over
//! keyframes and merges their regressed boxes into one tube per person, which
//! stays valid under occlusion and frame truncation. Tubes are classified by
//! late fusion and scored with temporal-IoU mAP.

// `!(x > 0.0)` style checks deliberately reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod amodal;
pub mod cli;
pub mod error;
pub mod evalkit;
pub mod fusion;
pub mod geometry;
pub mod partmodel;
pub mod pipeline;
pub mod provider;
pub mod regress;
pub mod synthgen;
pub mod tracker;

pub use error::{Error, Result};
pub use geometry::{iou, BBox, FrameExtent, Tube, TubeFrame};
pub use provider::{Detection, DetectionProvider, DetectionStore};
pub use tracker::TrackerConfig;
