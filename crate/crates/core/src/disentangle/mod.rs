//! Background/object separation from frame appearance and event motion.

pub mod cluster;
pub mod correlation;
pub mod features;
pub mod kmeans;
pub mod pipeline;
pub mod slic;
pub mod voxel;

pub use cluster::{clustering_loss, refine, sample_pairs, Activation, ClusterLoss, ClusterModel, FeatureMap, RefineConfig};
pub use correlation::{correlation_volume, correlation_volume_masked, CorrelationVolume, Patch};
pub use features::{build_features, FeatureVector};
pub use kmeans::{kmeans, KMeans};
pub use pipeline::{disentangle_scene, frame_windows, mask_iou, BBox, ClusteringState, DisentangleConfig, SceneDecomposition};
pub use slic::{slic_superpixels, Superpixel, SuperpixelMap};
pub use voxel::{voxelize_events, EventVoxelGrid};
