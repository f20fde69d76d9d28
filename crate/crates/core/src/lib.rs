//! Content-based image retrieval over CNN feature maps.
//!
//! Feature maps arrive as FMAP files ([`feature_io`]), are pooled into
//! MAC / R-MAC / MS-RMAC descriptors ([`descriptor`]), concatenated across
//! branches into a combined global descriptor ([`fusion`]), indexed with
//! per-class representatives and searched by L2 distance ([`index`]), and
//! scored with recall@k ([`eval`]).

mod codec;

pub mod desc_file;
pub mod descriptor;
pub mod eval;
pub mod feature_io;
pub mod fusion;
pub mod index;
pub mod synthetic;

pub use desc_file::{DescFileError, DescriptorFile, DescriptorRecord};
pub use descriptor::{
    avg_pool, generate_regions, l2_normalize, mac, msrmac, region_mac, rmac, GlobalDescriptor, PoolKind, Region,
    RegionGrid, RmacOptions, Scale, DEFAULT_SCALES,
};
pub use eval::{recall_at_k, run_experiment, EvalError, EvalReport, ExperimentConfig, GroundTruth};
pub use feature_io::{
    read_feature_map_set, validate, write_feature_map_set, FeatureIoError, FeatureMap, FeatureMapSet, Violation,
};
pub use fusion::{branch_descriptor, combine, describe, BranchConfig, FusionConfig, FusionError, Fused};
pub use index::{
    build_index, l2_distance, DescriptorIndex, Hit, IndexEntry, IndexError, QueryResult, RepresentativeMode, Stage,
};
