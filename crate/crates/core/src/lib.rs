//! Video salient object detection with a spatiotemporal CRF.
//!
//! The pipeline segments a clip at several scales, links regions into
//! tracks with optical flow, aggregates region features along tracks,
//! scores each region's foreground probability, and labels every overlapping
//! block of frames by an exact min-cut of a spatiotemporal CRF energy. Block
//! and scale results are averaged into graded saliency maps, which the
//! evaluation module scores against ground truth.

pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod flow;
pub mod io;
pub mod model;
pub mod maxflow;
pub mod par;
pub mod pipeline;
pub mod segmentation;
pub mod stcrf;
pub mod synth;
pub mod unary;

pub use error::{Error, Result};
