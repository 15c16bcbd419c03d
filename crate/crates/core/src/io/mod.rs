//! Files: the UEMF matrix format, manifests and splits, synthetic data, and
//! checkpoints.

mod checkpoint;
mod dataset;
mod synthetic;
mod uemf;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dataset::{write_manifest, write_splits, Dataset, Manifest, ManifestRecord, SplitRecord, SPLITS};
pub use synthetic::{generate_synthetic, CaptionTruth, SyntheticDataset, SyntheticSpec};
pub use uemf::{
    decode_uemf, encode_uemf, parse_header, read_uemf, read_uemf_header, write_uemf, write_uemf_as, Dtype, UemfHeader,
    HEADER_LEN, UEMF_MAGIC, UEMF_VERSION,
};
