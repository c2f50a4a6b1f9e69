//! Signed distances to triangle meshes and ground-truth sample generation.

pub mod dataset;
pub mod query;

pub use dataset::{
    balanced_batch, generate_dataset, normalize_to_unit_cube, NormalizationTransform, SampleMetadata,
    SampleSet, SdfSample, SdfTarget,
};
pub use query::{signed_distance, MeshSdf};
