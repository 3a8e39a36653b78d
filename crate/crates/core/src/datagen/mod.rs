//! Synthetic multi-path scenes standing in for a transient renderer.
//!
//! Each pixel sees a direct return plus at most one diffuse interreflection.
//! That keeps ground truth exact while producing the frequency-dependent
//! distance bias that the network learns to remove.

mod dataset;
mod scene;

pub use dataset::{
    generate_dataset, generate_record, read_record, split_counts, tof_baseline, write_record, Dataset,
    DatasetManifest, NoisyRecords, Observation, Record, SampleMeta, SplitIds, DATASET_MANIFEST, SPLITS,
};
pub use scene::{
    frontal_wall, phase_gap, raycast_scene, render_components, sample_scene, DomainLabel, DomainParams, Hit,
    SceneObject, SceneSpec, Surface, Vec3, CORNER_FALLOFF, IDENTITY,
};
