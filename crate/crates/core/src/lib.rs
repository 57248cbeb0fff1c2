//! Salience-aware traffic sign detection toolkit.
//!
//! * [`geometry`]: axis-aligned boxes, IoU, center distance.
//! * [`dataset`]: annotation schema with a per-sign salience flag, loading,
//!   validation, statistics and seeded splits.
//! * [`losses`]: focal loss and salience-sensitive focal loss with gradients.
//! * [`matching`]: greedy detection-to-annotation matching at a hit IoU.
//! * [`evaluation`]: threshold sweeps, salient/all recall, margins, AUC, CSV/SVG.
//! * [`synthbench`]: synthetic scenes, a linear anchor scorer and the FL vs
//!   SSFL experiment.
//! * [`cli`]: the `salsign` command line.

pub mod cli;
pub mod dataset;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod matching;
pub mod synthbench;

pub use geometry::BBox;
