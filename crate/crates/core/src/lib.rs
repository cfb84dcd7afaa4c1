//! Multimodal place recognition over image sequences.
//!
//! The engine matches a query sequence of multimodal frames (color, depth,
//! infrared) against a database sequence recorded along the same route. Each
//! enabled descriptor channel (a descriptor kind paired with a modality)
//! produces a GNSS-gated distance matrix; a cone-constrained sequence search
//! turns each matrix into a score matrix; the per-channel scores are fused
//! with tunable coefficients and thresholded into match decisions.
//!
//! Modules mirror the pipeline stages:
//!
//! - [`dataset`]: on-disk sequence layout, GNSS tracks, ground truth, and a
//!   deterministic synthetic sequence generator.
//! - [`descriptors`]: GIST, LDB, bag-of-words over binary local features, and
//!   ingestion of externally computed embedding vectors.
//! - [`matching`]: gated distance matrices, the online cone search, score
//!   fusion, and match selection.
//! - [`tuning`]: genetic search over fusion coefficients and parameter sweeps.
//! - [`evaluation`]: precision/recall/F1, localization error, and
//!   visualization exports.
//! - [`config`] and [`pipeline`]: the run configuration file format and the
//!   end-to-end testing/tuning/sweep drivers used by the `mpr` binary.

pub mod config;
pub mod dataset;
pub mod descriptors;
pub mod evaluation;
pub mod matching;
pub mod pipeline;
pub mod tuning;
