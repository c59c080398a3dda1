//! Training-free fusion of features from several conditioning branches.
//!
//! The library fuses per-branch feature maps location by location: correlated
//! branches are averaged, otherwise the branch whose channels vary most
//! (relative to its own spatial budget) wins. An analytic toy diffusion
//! sampler in [`sim`] exercises the operators end to end.

pub mod cli;
pub mod error;
pub mod fusion;
pub mod mxft;
pub mod pgm;
pub mod sim;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
pub use fusion::{
    max_select_fold, maxfusion_fold, merge_pair, naive_average, pure_max_select, unmerge_pair,
    FoldResult, FusionConfig, PairFusion, TieBreak,
};
pub use stats::{channel_std_map, correlation_map, normalized_std_map, StatsConfig};
pub use tensor::{FeatureMap, Selection, SelectionMask, SpatialMap};
