//! Image restoration by group-based sparse coding with adaptive per-group
//! SVD dictionaries.
//!
//! Similar patches are stacked into groups, each group gets its own
//! dictionary of rank-one SVD atoms, and the group code is shrunk with a
//! member of the weighted lp / Schatten-p family. Under these dictionaries
//! sparse coding and rank minimisation coincide. The shrinkage sits inside
//! an ADMM loop that handles random-mask inpainting and block compressive
//! sensing.
//!
//! Module map:
//! - [`types`]: images, masks, groups, dictionaries, shrinkage specs
//! - [`grouping`]: block matching and aggregation
//! - [`dictionary`]: adaptive (SVD) and PCA group dictionaries
//! - [`prox`]: soft / singular value / generalized soft-thresholding
//! - [`operators`]: masks, block CS, PSNR
//! - [`restoration`]: ADMM and IST solvers
//! - [`analysis`]: per-group singular value comparison
//! - [`presets`], [`bench`], [`io`]: parameter tables, benchmark grid, files

pub mod analysis;
pub mod bench;
pub mod dictionary;
mod error;
pub mod grouping;
pub mod io;
pub mod operators;
pub mod presets;
pub mod prox;
pub mod restoration;
pub mod types;

pub use error::{Error, Result};
pub use grouping::{GroupLayout, GroupingConfig};
pub use operators::{BlockCsOp, Measurements};
pub use presets::{Norm, Preset, Scenario};
pub use restoration::{LambdaMode, Observation, RestoreConfig, Spread, StopRule};
pub use types::{validate_image, GrayImage, GroupCode, GroupDictionary, PatchGroup, PixelMask, ShrinkageSpec};

/// Crate version, embedded in provenance metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
