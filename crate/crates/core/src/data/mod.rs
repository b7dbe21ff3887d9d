//! Dataset representations: frame stores, aggregation, normalization,
//! concatenation, tag matrices, splits and their binary file formats.

mod codec;
mod frames;
mod manifest;
mod source;
mod synth;
mod table;
mod tags;

pub(crate) use codec::{read_file, write_file_atomic, Reader, Writer};
pub use frames::{
    aggregate_frames, compute_norm_stats, standardize_frames, unit_l2_frames, FrameStore,
    NormStats, FRAMES_MAGIC, STD_EPSILON,
};
pub use manifest::{Manifest, MANIFEST_VERSION};
pub use source::SourceId;
pub use synth::{generate_synthetic, SyntheticDataset, SyntheticSpec, GENERATOR_VERSION};
pub use table::{check_aligned, check_tiling, concat_tables, AggregatedTable, Block, TABLE_MAGIC};
pub use tags::{SplitAssignment, TagMatrix, TAGS_MAGIC};
