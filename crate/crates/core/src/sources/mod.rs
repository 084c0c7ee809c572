//! Data for the clients: synthetic Gaussian-latent sources, image files and
//! the label-shard partitioner.

mod dataset;
mod dataset_io;
mod partition;
mod synthetic;

pub use dataset::{Dataset, Normalization};
pub use dataset_io::{load_image_dataset, to_patches, write_raw_f64, ImageFormat, RAW_MAGIC, RAW_VERSION};
pub use partition::{partition_non_iid, partition_non_iid_trimmed, Dealing, PartitionPlan};
pub use synthetic::{
    default_benchmark, gen_client, gen_synthetic, heterogeneous_scales, GenerativeMap, MapKind, SourceSpec,
};
