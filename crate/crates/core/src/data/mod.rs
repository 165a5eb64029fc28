//! Randomness, datasets, file formats and configuration parsing.

mod checkpoint;
mod config;
mod datasets;
mod idx;
mod rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION};
pub use config::{apply_override, parse_config, render_config, KEYS, METRICS_HEADER};
pub use datasets::{
    eight_gaussian_centers, make_dataset, split_rows, uniform_box, Batches, DatasetKind, DatasetSpec,
};
pub use idx::{encode_idx_images, load_idx_images, parse_idx_images};
pub use rng::Rng;
