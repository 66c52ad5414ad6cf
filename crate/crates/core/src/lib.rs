//! Clustering-based segmentation of reef imagery into benthic and geomorphic
//! habitat maps.
//!
//! The crate covers raster I/O ([`raster`]), feature preparation ([`prep`]),
//! four clusterers ([`cluster`]), model-order selection ([`select`]), map
//! refinement ([`refine`]) and the config-driven pipeline ([`pipeline`]).
//!
//! Compute-heavy loops run through an [`Exec`]. The sequential executor is
//! the default and is bit-reproducible; with the `parallel` feature a rayon
//! pool can be used instead and produces identical output.

// negated comparisons are used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cluster;
pub mod error;
pub mod exec;
pub mod fsutil;
pub mod linalg;
pub mod pipeline;
pub mod prep;
pub mod raster;
pub mod refine;
pub mod select;
pub mod synthetic;

pub use error::{Error, Result};
pub use exec::Exec;
pub use pipeline::{run_pipeline, validate_config, Method, Mode, PipelineConfig, RunArtifacts};
pub use prep::{Normalization, SampleMatrix};
pub use raster::{Raster, Rgb};
pub use refine::{HabitatMap, LabelMap, LegendEntry, LegendSpec, RefineParams, INVALID, NOISE};
